//! Compressed hierarchical representation (CHR): a single archive holding
//! the block index, the merged regions and one compressed payload per
//! region, each payload compressed under the tightest bound any of its
//! candidate isovalues requires.
//!
//! The byte layout is documented in `FORMAT.md`.

use std::borrow::Cow;
use std::fs;
use std::io::Read;
use std::marker::PhantomData;
use std::path::Path;

use log::warn;
use rayon::prelude::*;

use crate::blocking::{build_index, check_candidates, decompose, merge_regions, RelevanceMask};
use crate::bound::{loose_bound, region_bound, BoundMode, BoundParams, DEFAULT_LOOSE_FRACTION, DEFAULT_SAFETY_FACTOR};
use crate::codec::{Codec, CompressedBlock, LorenzoCodec};
use crate::error::{Error, Result};
use crate::scalar::{Dtype, Real};
use crate::volume::{linear_index, Volume};

pub const MAGIC: [u8; 4] = *b"CHR1";
pub const VERSION: u16 = 1;

const FIXED_HEADER_LEN: usize = 64;
const FIXED_ENTRY_LEN: usize = 102;
const TRAILER_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ChrConfig<T> {
    pub candidates: Vec<T>,
    pub block_size: usize,
    pub accuracy: f64,
    pub bound_mode: BoundMode,
    pub safety_factor: f64,
    pub loose_fraction: f64,
    /// Error out on candidates outside the field range instead of warning.
    pub reject_out_of_range: bool,
}

impl<T: Real> ChrConfig<T> {
    pub fn new(candidates: Vec<T>, block_size: usize) -> Self {
        ChrConfig {
            candidates,
            block_size,
            accuracy: 1.0,
            bound_mode: BoundMode::StrictVertices,
            safety_factor: DEFAULT_SAFETY_FACTOR,
            loose_fraction: DEFAULT_LOOSE_FRACTION,
            reject_out_of_range: true,
        }
    }

    pub fn accuracy(mut self, accuracy: f64) -> Self {
        self.accuracy = accuracy;
        self
    }

    pub fn bound_mode(mut self, mode: BoundMode) -> Self {
        self.bound_mode = mode;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChrHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Width the field had when it was ingested.
    pub original_dtype: Dtype,
    /// Width of the samples inside the payloads.
    pub sample_dtype: Dtype,
    pub block_size: usize,
    pub value_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionEntry {
    pub region_id: usize,
    pub block_lo: [usize; 3],
    pub block_hi: [usize; 3],
    pub sample_origin: [usize; 3],
    pub sample_extent: [usize; 3],
    /// Value range over the region's sample window.
    pub vmin: f64,
    pub vmax: f64,
    pub relevance: RelevanceMask,
    pub bound_mode: BoundMode,
    pub accuracy: f64,
    pub error_bound: f64,
    pub lossless_required: bool,
    /// Absolute file offset of the serialized payload block.
    pub payload_offset: u64,
    pub payload_length: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChrArchive<T> {
    pub header: ChrHeader,
    pub candidates: Vec<T>,
    pub regions: Vec<RegionEntry>,
    /// One per region, same order.
    pub payloads: Vec<CompressedBlock>,
    _scalar: PhantomData<T>,
}

fn entry_len(candidates: usize) -> usize {
    FIXED_ENTRY_LEN + candidates.div_ceil(8)
}

impl<T: Real> ChrArchive<T> {
    /// Bytes before the first payload: header, candidates and region table.
    pub fn metadata_len(&self) -> u64 {
        let m = self.candidates.len();
        (FIXED_HEADER_LEN + 4 + 8 * m + 4 + self.regions.len() * entry_len(m)) as u64
    }

    pub fn file_len(&self) -> u64 {
        self.metadata_len() + self.payloads.iter().map(|p| p.encoded_len() as u64).sum::<u64>() + TRAILER_LEN as u64
    }

    pub fn candidate_index(&self, k: T) -> Option<usize> {
        self.candidates.iter().position(|&c| c == k)
    }

    /// Nearest stored candidate; ties go to the smaller one.
    pub fn nearest_candidate(&self, k: T) -> usize {
        let mut best = 0;
        for (i, &c) in self.candidates.iter().enumerate().skip(1) {
            if (c - k).abs() < (self.candidates[best] - k).abs() {
                best = i;
            }
        }
        best
    }

    fn assign_offsets(&mut self) {
        let mut offset = self.metadata_len();
        for (entry, payload) in self.regions.iter_mut().zip(&self.payloads) {
            entry.payload_offset = offset;
            entry.payload_length = payload.encoded_len() as u64;
            offset += entry.payload_length;
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.file_len() as usize);
        let h = &self.header;
        out.extend_from_slice(&MAGIC);
        put_u16(&mut out, VERSION);
        for d in h.dims {
            put_u32(&mut out, d as u32);
        }
        for s in h.spacing {
            put_f64(&mut out, s);
        }
        out.push(h.original_dtype.tag());
        out.push(h.sample_dtype.tag());
        put_u32(&mut out, h.block_size as u32);
        put_f64(&mut out, h.value_range.0);
        put_f64(&mut out, h.value_range.1);
        debug_assert_eq!(out.len(), FIXED_HEADER_LEN);

        put_u32(&mut out, self.candidates.len() as u32);
        for c in &self.candidates {
            put_f64(&mut out, c.as_f64());
        }
        put_u32(&mut out, self.regions.len() as u32);
        for r in &self.regions {
            put_u32(&mut out, r.region_id as u32);
            for v in [r.block_lo, r.block_hi, r.sample_origin, r.sample_extent] {
                for d in v {
                    put_u32(&mut out, d as u32);
                }
            }
            put_f64(&mut out, r.vmin);
            put_f64(&mut out, r.vmax);
            out.extend_from_slice(&r.relevance.to_bytes());
            out.push(r.bound_mode.tag());
            out.push(r.lossless_required as u8);
            put_f64(&mut out, r.accuracy);
            put_f64(&mut out, r.error_bound);
            put_u64(&mut out, r.payload_offset);
            put_u64(&mut out, r.payload_length);
        }
        debug_assert_eq!(out.len() as u64, self.metadata_len());
        for p in &self.payloads {
            p.write_to(&mut out);
        }
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 + TRAILER_LEN {
            return Err(Error::Corrupt(format!("archive of {} bytes is truncated", bytes.len())));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let body_len = bytes.len() - TRAILER_LEN;
        let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..body_len]);
        if stored != computed {
            return Err(Error::Checksum {
                what: "archive",
                stored,
                computed,
            });
        }

        let mut cur = Cursor {
            bytes: &bytes[..body_len],
            pos: 6,
        };
        let dims = [cur.usize32()?, cur.usize32()?, cur.usize32()?];
        let spacing = [cur.f64()?, cur.f64()?, cur.f64()?];
        let original_dtype = Dtype::from_tag(cur.u8()?)?;
        let sample_dtype = Dtype::from_tag(cur.u8()?)?;
        if sample_dtype != T::DTYPE {
            return Err(Error::DtypeMismatch {
                found: sample_dtype.name(),
                expected: T::DTYPE.name(),
            });
        }
        let block_size = cur.usize32()?;
        let value_range = (cur.f64()?, cur.f64()?);
        let header = ChrHeader {
            dims,
            spacing,
            original_dtype,
            sample_dtype,
            block_size,
            value_range,
        };

        let m = cur.usize32()?;
        let candidates = (0..m).map(|_| cur.f64().map(T::cast)).collect::<Result<Vec<T>>>()?;
        let count = cur.usize32()?;
        let mut regions = Vec::with_capacity(count.min(body_len / FIXED_ENTRY_LEN));
        for _ in 0..count {
            let region_id = cur.usize32()?;
            let mut vecs = [[0usize; 3]; 4];
            for v in &mut vecs {
                for d in v.iter_mut() {
                    *d = cur.usize32()?;
                }
            }
            let vmin = cur.f64()?;
            let vmax = cur.f64()?;
            let relevance = RelevanceMask::from_bytes(m, cur.take(m.div_ceil(8))?)?;
            let bound_mode = BoundMode::from_tag(cur.u8()?)?;
            let lossless_required = cur.u8()? != 0;
            regions.push(RegionEntry {
                region_id,
                block_lo: vecs[0],
                block_hi: vecs[1],
                sample_origin: vecs[2],
                sample_extent: vecs[3],
                vmin,
                vmax,
                relevance,
                bound_mode,
                lossless_required,
                accuracy: cur.f64()?,
                error_bound: cur.f64()?,
                payload_offset: cur.u64()?,
                payload_length: cur.u64()?,
            });
        }

        let mut expected_offset = cur.pos as u64;
        let mut payloads = Vec::with_capacity(regions.len());
        for r in &regions {
            if r.payload_offset != expected_offset {
                return Err(Error::Corrupt(format!(
                    "region {} payload at offset {}, expected {expected_offset}",
                    r.region_id, r.payload_offset
                )));
            }
            let raw = cur.take(r.payload_length as usize)?;
            let block = CompressedBlock::from_bytes(raw)?;
            block.verify()?;
            if block.header.dims != r.sample_extent {
                return Err(Error::Corrupt(format!("region {} payload dims disagree with table", r.region_id)));
            }
            payloads.push(block);
            expected_offset += r.payload_length;
        }
        if cur.pos != body_len {
            return Err(Error::Corrupt(format!("{} unexpected bytes after payloads", body_len - cur.pos)));
        }

        Ok(ChrArchive {
            header,
            candidates,
            regions,
            payloads,
            _scalar: PhantomData,
        })
    }
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt(format!("archive truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn usize32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_chr<T: Real>(archive: &ChrArchive<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, archive.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_chr<T: Real>(path: impl AsRef<Path>) -> Result<ChrArchive<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ChrArchive::from_bytes(&bytes)
}

/// Payload sample width of an archive file, read from its header alone, so
/// a caller can pick the scalar type before [`read_chr`].
pub fn peek_sample_dtype(path: impl AsRef<Path>) -> Result<Dtype> {
    let path = path.as_ref();
    let mut head = [0u8; 44];
    fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map_err(|e| Error::io(path, e))?;
    let magic: [u8; 4] = head[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    Dtype::from_tag(head[43])
}

/// Decompose, index, merge, bound and compress `volume` into an archive.
/// Output bytes are a pure function of the inputs.
pub fn build_chr<T: Real>(volume: &Volume<T>, config: &ChrConfig<T>, codec: &dyn Codec<T>) -> Result<ChrArchive<T>> {
    check_candidates(&config.candidates)?;
    let (vmin, vmax) = volume.value_range();
    for &k in &config.candidates {
        if k < vmin || k > vmax {
            if config.reject_out_of_range {
                return Err(Error::CandidateOutOfRange {
                    k: k.as_f64(),
                    vmin: vmin.as_f64(),
                    vmax: vmax.as_f64(),
                });
            }
            warn!("candidate isovalue {k} lies outside the field range [{vmin}, {vmax}]");
        }
    }
    let params = BoundParams {
        accuracy: config.accuracy,
        mode: config.bound_mode,
        safety_factor: config.safety_factor,
        loose_bound: loose_bound((vmin, vmax), config.loose_fraction),
    };
    params.validate()?;

    let decomp = decompose(volume, config.block_size)?;
    let index = build_index(&decomp.blocks, &config.candidates)?;
    let regions = merge_regions(&decomp, &index);

    let compressed: Vec<(RegionEntry, CompressedBlock)> = regions
        .par_iter()
        .map(|region| {
            let window: Cow<[T]> = if region.sample_extent == volume.dims() {
                Cow::Borrowed(volume.values())
            } else {
                Cow::Owned(volume.window(region.sample_origin, region.sample_extent))
            };
            let served: Vec<T> = region.relevance.iter().map(|c| config.candidates[c]).collect();
            let bound = region_bound(&window, region.sample_extent, &served, &params);
            let block = codec.compress(&window, region.sample_extent, bound.error_bound)?;
            // Block windows tile the region window, ghost layers included.
            let (lo, hi) = region
                .block_coords()
                .map(|c| &decomp.blocks[decomp.block_id(c)])
                .fold((T::infinity(), T::neg_infinity()), |(lo, hi), b| (lo.min(b.vmin), hi.max(b.vmax)));
            let entry = RegionEntry {
                region_id: region.region_id,
                block_lo: region.block_lo,
                block_hi: region.block_hi,
                sample_origin: region.sample_origin,
                sample_extent: region.sample_extent,
                vmin: lo.as_f64(),
                vmax: hi.as_f64(),
                relevance: region.relevance.clone(),
                bound_mode: config.bound_mode,
                accuracy: config.accuracy,
                error_bound: bound.error_bound.as_f64(),
                lossless_required: bound.lossless_required,
                payload_offset: 0,
                payload_length: 0,
            };
            Ok((entry, block))
        })
        .collect::<Result<_>>()?;
    let (entries, payloads): (Vec<_>, Vec<_>) = compressed.into_iter().unzip();

    let mut archive = ChrArchive {
        header: ChrHeader {
            dims: volume.dims(),
            spacing: volume.spacing().map(|s| s.as_f64()),
            original_dtype: volume.source_dtype(),
            sample_dtype: T::DTYPE,
            block_size: config.block_size,
            value_range: (vmin.as_f64(), vmax.as_f64()),
        },
        candidates: config.candidates.clone(),
        regions: entries,
        payloads,
        _scalar: PhantomData,
    };
    archive.assign_offsets();
    Ok(archive)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RequestOptions {
    /// Skip regions not relevant to the requested isovalue.
    pub drop_pruned: bool,
    /// Accept an isovalue that is not stored and use the nearest candidate.
    pub snap: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Coverage {
    /// Metadata plus every selected payload.
    pub bytes_touched: u64,
    pub bytes_total: u64,
    pub regions_selected: usize,
    pub regions_relevant: usize,
    pub regions_total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionData<T> {
    pub region_id: usize,
    pub block_lo: [usize; 3],
    pub block_hi: [usize; 3],
    pub sample_origin: [usize; 3],
    pub sample_extent: [usize; 3],
    pub relevant: bool,
    pub error_bound: f64,
    /// Region minimum; on the same side of the isovalue as every sample of
    /// a non-relevant region.
    pub fill: T,
    /// `None` when the region was dropped.
    pub samples: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionSet<T> {
    pub requested_isovalue: T,
    /// The stored candidate actually served.
    pub isovalue: T,
    pub snapped: bool,
    pub accuracy: f64,
    pub dims: [usize; 3],
    pub spacing: [T; 3],
    pub block_size: usize,
    /// Every region of the archive in table order.
    pub regions: Vec<RegionData<T>>,
    pub coverage: Coverage,
}

impl<T: Real> ReconstructionSet<T> {
    /// Sample range each region writes when stitching: a sample shared by
    /// two blocks belongs to the lower one.
    fn owned_range(&self, r: &RegionData<T>, axis: usize) -> (usize, usize) {
        let bs = self.block_size;
        let start = if r.block_lo[axis] == 0 { 0 } else { r.block_lo[axis] * bs + 1 };
        let end = ((r.block_hi[axis] + 1) * bs).min(self.dims[axis] - 1);
        (start, end)
    }

    /// Region whose window is the whole grid and whose samples are used
    /// as they are.
    fn whole_grid(&self, fill_irrelevant: bool) -> Option<usize> {
        match self.regions.as_slice() {
            [r] if r.sample_extent == self.dims && r.samples.is_some() && (r.relevant || !fill_irrelevant) => Some(0),
            _ => None,
        }
    }

    fn assemble(&self, fill_irrelevant: bool) -> Result<Volume<T>> {
        if let Some(i) = self.whole_grid(fill_irrelevant) {
            let samples = self.regions[i].samples.clone().expect("checked above");
            return Volume::new(self.dims, samples)?.with_spacing(self.spacing);
        }
        let mut values = vec![T::zero(); self.dims.iter().product()];
        for r in &self.regions {
            let source = match (&r.samples, fill_irrelevant && !r.relevant) {
                (Some(s), false) => Some(s),
                _ => None,
            };
            let (xs, xe) = self.owned_range(r, 0);
            let (ys, ye) = self.owned_range(r, 1);
            let (zs, ze) = self.owned_range(r, 2);
            for z in zs..=ze {
                for y in ys..=ye {
                    let dst = linear_index(self.dims, xs, y, z);
                    let row = &mut values[dst..dst + (xe - xs + 1)];
                    match source {
                        Some(s) => {
                            let o = r.sample_origin;
                            let src = linear_index(r.sample_extent, xs - o[0], y - o[1], z - o[2]);
                            row.copy_from_slice(&s[src..src + row.len()]);
                        }
                        None => row.fill(r.fill),
                    }
                }
            }
        }
        Volume::new(self.dims, values)?.with_spacing(self.spacing)
    }

    /// Full grid from the decompressed regions; dropped regions are filled
    /// with their minimum.
    pub fn stitch(&self) -> Result<Volume<T>> {
        self.assemble(false)
    }

    /// Full grid for extraction at [`Self::isovalue`]: every region not
    /// relevant to it is replaced by its fill value, which lies on the
    /// correct side of the isovalue, so its cells keep their trivial case.
    pub fn isosurface_field(&self) -> Result<Volume<T>> {
        self.assemble(true)
    }

    /// [`Self::isosurface_field`] without copying a region that already
    /// spans the whole grid.
    pub fn into_isosurface_field(mut self) -> Result<Volume<T>> {
        match self.whole_grid(true) {
            Some(i) => {
                let samples = self.regions[i].samples.take().expect("checked above");
                Volume::new(self.dims, samples)?.with_spacing(self.spacing)
            }
            None => self.assemble(true),
        }
    }
}

/// [`request_with`] using the built-in codec.
pub fn request<T: Real>(archive: &ChrArchive<T>, k: T, accuracy: f64, options: RequestOptions) -> Result<ReconstructionSet<T>> {
    request_with(archive, k, accuracy, options, &LorenzoCodec)
}

/// Selects the regions needed for isovalue `k` and decompresses them.
pub fn request_with<T: Real>(
    archive: &ChrArchive<T>,
    k: T,
    accuracy: f64,
    options: RequestOptions,
    codec: &dyn Codec<T>,
) -> Result<ReconstructionSet<T>> {
    if !(accuracy > 0.0 && accuracy <= 1.0) {
        return Err(Error::param(format!("accuracy must lie in (0, 1], got {accuracy}")));
    }
    let (ci, snapped) = match archive.candidate_index(k) {
        Some(i) => (i, false),
        None if options.snap && !archive.candidates.is_empty() => (archive.nearest_candidate(k), true),
        None => return Err(Error::NoSuchIsovalue { k: k.as_f64() }),
    };

    let selected: Vec<bool> = archive
        .regions
        .iter()
        .map(|r| r.relevance.contains(ci) || !options.drop_pruned)
        .collect();
    for (r, _) in archive.regions.iter().zip(&selected).filter(|(_, &s)| s) {
        if accuracy > r.accuracy {
            return Err(Error::InsufficientAccuracy {
                requested: accuracy,
                stored: r.accuracy,
            });
        }
    }

    let regions = archive
        .regions
        .par_iter()
        .zip(&archive.payloads)
        .zip(&selected)
        .map(|((r, payload), &sel)| {
            let samples = if sel { Some(codec.decompress(payload)?) } else { None };
            Ok(RegionData {
                region_id: r.region_id,
                block_lo: r.block_lo,
                block_hi: r.block_hi,
                sample_origin: r.sample_origin,
                sample_extent: r.sample_extent,
                relevant: r.relevance.contains(ci),
                error_bound: r.error_bound,
                fill: T::cast(r.vmin),
                samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let payload_bytes: u64 = archive
        .regions
        .iter()
        .zip(&selected)
        .filter(|(_, &s)| s)
        .map(|(r, _)| r.payload_length)
        .sum();
    let coverage = Coverage {
        bytes_touched: archive.metadata_len() + payload_bytes,
        bytes_total: archive.file_len(),
        regions_selected: selected.iter().filter(|&&s| s).count(),
        regions_relevant: regions.iter().filter(|r| r.relevant).count(),
        regions_total: archive.regions.len(),
    };

    Ok(ReconstructionSet {
        requested_isovalue: k,
        isovalue: archive.candidates[ci],
        snapped,
        accuracy,
        dims: archive.header.dims,
        spacing: archive.header.spacing.map(T::cast),
        block_size: archive.header.block_size,
        regions,
        coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{gen_smooth_random, gen_sphere};

    fn sphere() -> Volume<f64> {
        gen_sphere([33, 33, 33], [16.0, 16.0, 16.0], 9.3).unwrap()
    }

    #[test]
    fn roundtrip_bytes() {
        let vol = sphere();
        let archive = build_chr(&vol, &ChrConfig::new(vec![-2.0, 0.0, 3.5], 8), &LorenzoCodec).unwrap();
        let bytes = archive.to_bytes();
        assert_eq!(bytes.len() as u64, archive.file_len());
        let back = ChrArchive::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back, archive);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn peek_matches_payload_width() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.chr");
        let vol = gen_sphere::<f32>([12, 12, 12], [5.5; 3], 4.0).unwrap();
        write_chr(&build_chr(&vol, &ChrConfig::new(vec![0.0], 4), &LorenzoCodec).unwrap(), &path).unwrap();
        assert_eq!(peek_sample_dtype(&path).unwrap(), Dtype::F32);
        write_chr(&build_chr(&sphere(), &ChrConfig::new(vec![0.0], 8), &LorenzoCodec).unwrap(), &path).unwrap();
        assert_eq!(peek_sample_dtype(&path).unwrap(), Dtype::F64);
    }

    #[test]
    fn distinct_read_errors() {
        let vol = sphere();
        let bytes = build_chr(&vol, &ChrConfig::new(vec![0.0], 16), &LorenzoCodec)
            .unwrap()
            .to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ChrArchive::<f64>::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(ChrArchive::<f64>::from_bytes(&bad), Err(Error::VersionMismatch { found: 9, .. })));
        let mut bad = bytes.clone();
        bad[100] ^= 0x40;
        assert!(matches!(ChrArchive::<f64>::from_bytes(&bad), Err(Error::Checksum { .. })));
        assert!(ChrArchive::<f64>::from_bytes(&bytes[..bytes.len() - 7]).is_err());
        assert!(ChrArchive::<f64>::from_bytes(&bytes[..3]).is_err());
        assert!(matches!(ChrArchive::<f32>::from_bytes(&bytes), Err(Error::DtypeMismatch { .. })));
    }

    #[test]
    fn out_of_range_candidates() {
        let vol = sphere();
        let (lo, hi) = vol.value_range();
        let strict = ChrConfig::new(vec![lo - 1.0], 8);
        assert!(matches!(
            build_chr(&vol, &strict, &LorenzoCodec),
            Err(Error::CandidateOutOfRange { .. })
        ));
        let mut lenient = ChrConfig::new(vec![hi + 1.0], 8);
        lenient.reject_out_of_range = false;
        let archive = build_chr(&vol, &lenient, &LorenzoCodec).unwrap();
        assert!(archive.regions.iter().all(|r| r.relevance.is_empty()));
    }

    #[test]
    fn snapping_and_missing_isovalues() {
        let vol = sphere();
        let archive = build_chr(&vol, &ChrConfig::new(vec![-1.0, 1.0], 8), &LorenzoCodec).unwrap();
        assert!(matches!(
            request(&archive, 0.5, 1.0, RequestOptions::default()),
            Err(Error::NoSuchIsovalue { .. })
        ));
        let opts = RequestOptions { snap: true, drop_pruned: true };
        let tie = request(&archive, 0.0, 1.0, opts).unwrap();
        assert!(tie.snapped);
        assert_eq!(tie.isovalue, -1.0);
        assert_eq!(request(&archive, 0.7, 1.0, opts).unwrap().isovalue, 1.0);
        let exact = request(&archive, 1.0, 1.0, opts).unwrap();
        assert!(!exact.snapped);
    }

    #[test]
    fn accuracy_gating() {
        let vol = gen_smooth_random::<f64>([17, 17, 17], 3, 3).unwrap();
        let cfg = ChrConfig::new(vec![0.0], 8).accuracy(0.95);
        let archive = build_chr(&vol, &cfg, &LorenzoCodec).unwrap();
        assert!(request(&archive, 0.0, 0.9, RequestOptions::default()).is_ok());
        assert!(request(&archive, 0.0, 0.95, RequestOptions::default()).is_ok());
        match request(&archive, 0.0, 0.99, RequestOptions::default()) {
            Err(Error::InsufficientAccuracy { requested, stored }) => {
                assert_eq!((requested, stored), (0.99, 0.95));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stitch_owner_ranges_cover_grid_once() {
        let vol = gen_smooth_random::<f64>([21, 14, 9], 5, 3).unwrap();
        let archive = build_chr(&vol, &ChrConfig::new(vec![0.0], 4), &LorenzoCodec).unwrap();
        let set = request(&archive, 0.0, 1.0, RequestOptions::default()).unwrap();
        let mut hits = vec![0u8; vol.len()];
        for r in &set.regions {
            let ranges: Vec<_> = (0..3).map(|a| set.owned_range(r, a)).collect();
            for z in ranges[2].0..=ranges[2].1 {
                for y in ranges[1].0..=ranges[1].1 {
                    for x in ranges[0].0..=ranges[0].1 {
                        hits[linear_index(vol.dims(), x, y, z)] += 1;
                    }
                }
            }
        }
        assert!(hits.iter().all(|&h| h == 1));
    }
}
