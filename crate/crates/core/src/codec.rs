//! Error-bounded lossy compression of 3D sample arrays.
//!
//! The built-in [`LorenzoCodec`] predicts each sample from its seven
//! already-reconstructed causal neighbours, quantizes the residual into bins
//! of width `2e` and stores the bin index. Every reconstructed value is
//! checked against the input before it is committed; a sample that would
//! miss the bound (or whose bin index exceeds 2³⁰) is escaped and stored
//! verbatim. The byte layout is documented in `CODEC.md`.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Real};

pub const CODEC_VERBATIM: u8 = 0;
pub const CODEC_LORENZO: u8 = 1;

/// Bin indices with a larger magnitude are escaped.
pub const ESCAPE_THRESHOLD: i64 = 1 << 30;

pub const HEADER_LEN: usize = 34;

const TOKEN_ESCAPE: u64 = 0;
const TOKEN_ZERO_RUN: u64 = 1;
const TOKEN_BIAS: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockHeader {
    pub codec_id: u8,
    pub dims: [usize; 3],
    /// Bound the payload was produced under; decompression trusts this value.
    pub error_bound: f64,
    /// Width of verbatim samples in the payload.
    pub dtype: Dtype,
    pub payload_length: u64,
    /// CRC-32 (IEEE) of the payload.
    pub checksum: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedBlock {
    pub header: BlockHeader,
    pub payload: Vec<u8>,
}

impl CompressedBlock {
    fn new(codec_id: u8, dims: [usize; 3], error_bound: f64, dtype: Dtype, payload: Vec<u8>) -> Self {
        CompressedBlock {
            header: BlockHeader {
                codec_id,
                dims,
                error_bound,
                dtype,
                payload_length: payload.len() as u64,
                checksum: crc32fast::hash(&payload),
            },
            payload,
        }
    }

    pub fn sample_count(&self) -> usize {
        self.header.dims.iter().product()
    }

    /// Header plus payload size in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn verify(&self) -> Result<()> {
        if self.header.payload_length != self.payload.len() as u64 {
            return Err(Error::Corrupt(format!(
                "payload length {} does not match header {}",
                self.payload.len(),
                self.header.payload_length
            )));
        }
        let computed = crc32fast::hash(&self.payload);
        if computed != self.header.checksum {
            return Err(Error::Checksum {
                what: "codec payload",
                stored: self.header.checksum,
                computed,
            });
        }
        Ok(())
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        let h = &self.header;
        out.push(h.codec_id);
        for d in h.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&h.error_bound.to_le_bytes());
        out.push(h.dtype.tag());
        out.extend_from_slice(&h.payload_length.to_le_bytes());
        out.extend_from_slice(&h.checksum.to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out);
        out
    }

    /// Parses exactly one block occupying all of `bytes`. The checksum is
    /// not checked here; see [`CompressedBlock::verify`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Corrupt(format!(
                "compressed block of {} bytes is shorter than its header",
                bytes.len()
            )));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let header = BlockHeader {
            codec_id: bytes[0],
            dims: [u32_at(1) as usize, u32_at(5) as usize, u32_at(9) as usize],
            error_bound: f64::from_bits(u64_at(13)),
            dtype: Dtype::from_tag(bytes[21])?,
            payload_length: u64_at(22),
            checksum: u32_at(30),
        };
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u64 != header.payload_length {
            return Err(Error::Corrupt(format!(
                "block declares {} payload bytes, {} present",
                header.payload_length,
                payload.len()
            )));
        }
        Ok(CompressedBlock {
            header,
            payload: payload.to_vec(),
        })
    }
}

/// Pluggable compressor contract: for finite input and `e >= 0`, every
/// decompressed sample lies within `e` of its input.
pub trait Codec<T: Real>: Send + Sync {
    fn id(&self) -> u8;

    fn compress(&self, samples: &[T], dims: [usize; 3], error_bound: T) -> Result<CompressedBlock>;

    fn decompress(&self, block: &CompressedBlock) -> Result<Vec<T>>;
}

/// Prediction-based codec; see the module docs.
#[derive(Debug, Clone, Copy, Default)]
pub struct LorenzoCodec;

impl<T: Real> Codec<T> for LorenzoCodec {
    fn id(&self) -> u8 {
        CODEC_LORENZO
    }

    fn compress(&self, samples: &[T], dims: [usize; 3], error_bound: T) -> Result<CompressedBlock> {
        compress(samples, dims, error_bound)
    }

    fn decompress(&self, block: &CompressedBlock) -> Result<Vec<T>> {
        decompress(block)
    }
}

fn check_input<T: Real>(samples: &[T], dims: [usize; 3], error_bound: T) -> Result<()> {
    if samples.len() != dims.iter().product::<usize>() {
        return Err(Error::param(format!("{} samples do not fill dims {dims:?}", samples.len())));
    }
    if dims.iter().any(|&d| d > u32::MAX as usize) {
        return Err(Error::param(format!("dims {dims:?} exceed the u32 header field")));
    }
    if !(error_bound >= T::zero() && error_bound.is_finite()) {
        return Err(Error::param(format!("error bound must be finite and >= 0, got {error_bound}")));
    }
    if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(())
}

pub fn compress<T: Real>(samples: &[T], dims: [usize; 3], error_bound: T) -> Result<CompressedBlock> {
    check_input(samples, dims, error_bound)?;
    let e64 = error_bound.as_f64();
    let verbatim = || {
        let mut payload = Vec::with_capacity(samples.len() * T::DTYPE.size());
        for &s in samples {
            s.write_le(&mut payload);
        }
        CompressedBlock::new(CODEC_VERBATIM, dims, e64, T::DTYPE, payload)
    };
    if error_bound == T::zero() {
        return Ok(verbatim());
    }

    let payload = encode_lorenzo(samples, dims, error_bound);
    if payload.len() > samples.len() * T::DTYPE.size() {
        return Ok(verbatim());
    }
    Ok(CompressedBlock::new(CODEC_LORENZO, dims, e64, T::DTYPE, payload))
}

pub fn decompress<T: Real>(block: &CompressedBlock) -> Result<Vec<T>> {
    block.verify()?;
    if block.header.codec_id != CODEC_VERBATIM && block.header.codec_id != CODEC_LORENZO {
        return Err(Error::UnsupportedCodec(block.header.codec_id));
    }
    if block.header.dtype != T::DTYPE {
        return Err(Error::DtypeMismatch {
            found: block.header.dtype.name(),
            expected: T::DTYPE.name(),
        });
    }
    let n = block.sample_count();
    match block.header.codec_id {
        CODEC_VERBATIM => {
            let width = T::DTYPE.size();
            if block.payload.len() != n * width {
                return Err(Error::Corrupt(format!(
                    "verbatim payload holds {} bytes for {n} samples",
                    block.payload.len()
                )));
            }
            Ok(block.payload.chunks_exact(width).map(T::read_le).collect())
        }
        _ => decode_lorenzo(&block.payload, block.header.dims, T::cast(block.header.error_bound)),
    }
}

/// Rows reconstructed together; each trails the previous one by a sample
/// so their dependency chains overlap. The steady-state loop in
/// `sweep_group` is unrolled by hand to this width.
const LANES: usize = 8;

/// Marks an escaped sample in a group's bin index array.
const ESCAPED: i32 = i32::MIN;

/// Reconstructed values of the current and previous z-slab, each with a
/// zero row below y = 0 and a zero column below x = 0, so the Lorenzo
/// stencil needs no boundary tests.
struct SlabRing<T> {
    dims: [usize; 3],
    sy: usize,
    slab: usize,
    buf: Vec<T>,
}

impl<T: Real> SlabRing<T> {
    fn new(dims: [usize; 3]) -> Self {
        let sy = dims[0] + 1;
        let slab = sy * (dims[1] + 1);
        // The slab before z = 0 starts out, and stays, all zero.
        SlabRing {
            dims,
            sy,
            slab,
            buf: vec![T::zero(); 2 * slab],
        }
    }

    fn base(&self, z: usize) -> usize {
        (z & 1) * self.slab
    }

    fn at(&self, z: usize, y: usize) -> usize {
        self.base(z) + 1 + self.sy * (y + 1)
    }

    /// Reconstructs rows `y0..y0 + lanes` of slab `z`, calling
    /// `f(k, prediction)` with `k = row_offset * nx + x` and storing what it
    /// returns. Row `j` runs `j` samples behind row 0, so every causal
    /// neighbour is final when read.
    #[inline(always)]
    fn sweep_group(&mut self, z: usize, y0: usize, lanes: usize, mut f: impl FnMut(usize, T) -> T) {
        let nx = self.dims[0];
        let sy = self.sy;
        let cur = self.at(z, y0) - 1;
        // The other half of the ring: slab z - 1, or zeros when z = 0.
        let prev = self.at(z + 1, y0) - 1;
        let cells = Cell::from_mut(&mut self.buf[..]).as_slice_of_cells();
        let span = nx + 1;
        // Per lane: its own row, the row above, and both again in the
        // previous slab, each starting at the pad column. Unused lanes
        // repeat the last real one and are never visited.
        let rows: [[&[Cell<T>]; 4]; LANES] = std::array::from_fn(|j| {
            let j = j.min(lanes - 1);
            let (c, p) = (cur + j * sy, prev + j * sy);
            [&cells[c..c + span], &cells[c - sy..c - sy + span], &cells[p..p + span], &cells[p - sy..p - sy + span]]
        });
        macro_rules! cell {
            ($j:expr, $x:expr) => {{
                let (j, x) = ($j, $x);
                let [r, u, pr, pu] = rows[j];
                let i = x + 1;
                let pred = (u[i].get() - u[i - 1].get()) + (pr[i].get() - pr[i - 1].get())
                    - (pu[i].get() - pu[i - 1].get())
                    + r[i - 1].get();
                r[i].set(f(j * nx + x, pred));
            }};
        }
        macro_rules! diagonal {
            ($s:expr) => {{
                let s = $s;
                for j in 0..lanes {
                    if s >= j && s - j < nx {
                        cell!(j, s - j);
                    }
                }
            }};
        }
        if lanes < LANES || nx < LANES {
            for s in 0..nx + lanes - 1 {
                diagonal!(s);
            }
            return;
        }
        for s in 0..LANES - 1 {
            diagonal!(s);
        }
        for x0 in 0..nx - (LANES - 1) {
            cell!(0, x0 + 7);
            cell!(1, x0 + 6);
            cell!(2, x0 + 5);
            cell!(3, x0 + 4);
            cell!(4, x0 + 3);
            cell!(5, x0 + 2);
            cell!(6, x0 + 1);
            cell!(7, x0);
        }
        for s in nx..nx + LANES - 1 {
            diagonal!(s);
        }
    }

    fn row(&self, z: usize, y: usize) -> &[T] {
        let s = self.at(z, y);
        &self.buf[s..s + self.dims[0]]
    }
}

/// `r` rounded half away from zero. Magnitudes past 2³¹ saturate there,
/// which the caller treats as an escape.
#[inline(always)]
fn bin_index(r: f64) -> i64 {
    let r = r.clamp(-2_147_483_648.0, 2_147_483_648.0);
    let t = r as i64;
    let frac = r - t as f64;
    t + (frac >= 0.5) as i64 - (frac <= -0.5) as i64
}

fn zigzag(q: i64) -> u64 {
    ((q << 1) ^ (q >> 63)) as u64
}

fn unzigzag(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

#[inline(always)]
fn get_varint(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    match bytes.get(*pos) {
        Some(&b) if b < 0x80 => {
            *pos += 1;
            Ok(b as u64)
        }
        _ => get_varint_long(bytes, pos),
    }
}

fn get_varint_long(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let byte = *bytes
            .get(*pos)
            .ok_or_else(|| Error::Corrupt("varint runs past end of payload".into()))?;
        *pos += 1;
        v |= ((byte & 0x7f) as u64) << shift;
        if byte & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(Error::Corrupt("varint longer than 10 bytes".into()))
}

fn flush_zero_run(out: &mut Vec<u8>, run: &mut u64) {
    match *run {
        0 => {}
        1 => put_varint(out, TOKEN_BIAS),
        n => {
            put_varint(out, TOKEN_ZERO_RUN);
            put_varint(out, n);
        }
    }
    *run = 0;
}

fn encode_lorenzo<T: Real>(samples: &[T], dims: [usize; 3], e: T) -> Vec<u8> {
    let e64 = e.as_f64();
    let bin = e + e;
    let [nx, ny, nz] = dims;
    let mut ring = SlabRing::new(dims);
    let mut bins = vec![0i32; LANES * nx];
    let mut tokens = TokenBuf::new(LANES * nx);
    let mut out = Vec::with_capacity(samples.len() / 4);
    let mut run = 0u64;

    for z in 0..nz {
        for y0 in (0..ny).step_by(LANES) {
            let lanes = LANES.min(ny - y0);
            let group = &samples[nx * (y0 + ny * z)..nx * (y0 + lanes + ny * z)];
            let group_bins = &mut bins[..group.len()];
            ring.sweep_group(z, y0, lanes, move |k, pred| {
                let value = group[k];
                let q = bin_index(((value - pred) / bin).as_f64());
                let rec = pred + T::cast(q as f64) * bin;
                let ok = q.abs() <= ESCAPE_THRESHOLD && rec.is_finite() && (rec.as_f64() - value.as_f64()).abs() <= e64;
                group_bins[k] = if ok { q as i32 } else { ESCAPED };
                if ok {
                    rec
                } else {
                    value
                }
            });
            for (&q, &value) in bins.iter().zip(group) {
                match q {
                    0 => run += 1,
                    ESCAPED => {
                        tokens.drain_into(&mut out);
                        flush_zero_run(&mut out, &mut run);
                        put_varint(&mut out, TOKEN_ESCAPE);
                        value.write_le(&mut out);
                    }
                    q => {
                        tokens.flush_zero_run(&mut run);
                        tokens.varint(zigzag(q as i64) + TOKEN_BIAS);
                    }
                }
            }
            tokens.drain_into(&mut out);
        }
    }
    flush_zero_run(&mut out, &mut run);
    out
}

/// Scratch for one group's tokens, appended to the payload in one copy.
struct TokenBuf {
    bytes: Vec<u8>,
    len: usize,
}

impl TokenBuf {
    /// Room for `samples` tokens, each possibly preceded by a zero run.
    fn new(samples: usize) -> Self {
        TokenBuf {
            bytes: vec![0; 16 * samples],
            len: 0,
        }
    }

    #[inline(always)]
    fn varint(&mut self, mut v: u64) {
        while v >= 0x80 {
            self.bytes[self.len] = (v as u8) | 0x80;
            self.len += 1;
            v >>= 7;
        }
        self.bytes[self.len] = v as u8;
        self.len += 1;
    }

    #[inline(always)]
    fn flush_zero_run(&mut self, run: &mut u64) {
        match *run {
            0 => return,
            1 => self.varint(TOKEN_BIAS),
            n => {
                self.varint(TOKEN_ZERO_RUN);
                self.varint(n);
            }
        }
        *run = 0;
    }

    fn drain_into(&mut self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.bytes[..self.len]);
        self.len = 0;
    }
}

fn decode_lorenzo<T: Real>(payload: &[u8], dims: [usize; 3], e: T) -> Result<Vec<T>> {
    let n = dims.iter().product::<usize>();
    let [nx, ny, nz] = dims;
    let width = T::DTYPE.size();
    let bin = e + e;
    let mut ring = SlabRing::new(dims);
    let mut bins = vec![0i32; LANES * nx];
    let mut raw = vec![T::zero(); LANES * nx];
    let mut out = Vec::with_capacity(n);
    let mut pos = 0;
    let mut zeros_left = 0u64;

    for z in 0..nz {
        for y0 in (0..ny).step_by(LANES) {
            let lanes = LANES.min(ny - y0);
            let first = nx * (y0 + ny * z);
            for k in 0..lanes * nx {
                if zeros_left > 0 {
                    zeros_left -= 1;
                    bins[k] = 0;
                    continue;
                }
                bins[k] = match get_varint(payload, &mut pos)? {
                    TOKEN_ESCAPE => {
                        let bytes = payload
                            .get(pos..pos + width)
                            .ok_or_else(|| Error::Corrupt("escaped sample truncated".into()))?;
                        pos += width;
                        raw[k] = T::read_le(bytes);
                        ESCAPED
                    }
                    TOKEN_ZERO_RUN => {
                        let len = get_varint(payload, &mut pos)?;
                        let idx = first + k;
                        if len == 0 || len > (n - idx) as u64 {
                            return Err(Error::Corrupt(format!("zero run of {len} at sample {idx}")));
                        }
                        zeros_left = len - 1;
                        0
                    }
                    token => {
                        let q = unzigzag(token - TOKEN_BIAS);
                        if q.abs() > ESCAPE_THRESHOLD {
                            return Err(Error::Corrupt(format!("bin index {q} beyond escape threshold")));
                        }
                        q as i32
                    }
                };
            }
            let (group_bins, group_raw) = (&bins[..], &raw[..]);
            ring.sweep_group(z, y0, lanes, move |k, pred| match group_bins[k] {
                ESCAPED => group_raw[k],
                q => pred + T::cast(q as f64) * bin,
            });
            for y in y0..y0 + lanes {
                out.extend_from_slice(ring.row(z, y));
            }
        }
    }
    if pos != payload.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing payload bytes after {n} samples",
            payload.len() - pos
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::gen_smooth_random;

    fn max_abs_error(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn varint_and_zigzag() {
        for q in [0i64, 1, -1, 63, -64, 1 << 30, -(1 << 30), i64::MAX, i64::MIN] {
            assert_eq!(unzigzag(zigzag(q)), q);
        }
        let mut buf = Vec::new();
        for v in [0u64, 127, 128, 300, u64::MAX] {
            buf.clear();
            put_varint(&mut buf, v);
            let mut pos = 0;
            assert_eq!(get_varint(&buf, &mut pos).unwrap(), v);
            assert_eq!(pos, buf.len());
        }
    }

    #[test]
    fn constant_field_is_tiny() {
        let dims = [32, 32, 32];
        let samples = vec![3.25f64; 32 * 32 * 32];
        let block = compress(&samples, dims, 0.1).unwrap();
        assert_eq!(block.header.codec_id, CODEC_LORENZO);
        assert!(block.payload.len() < 512, "payload {} bytes", block.payload.len());
        let out: Vec<f64> = decompress(&block).unwrap();
        assert!(max_abs_error(&out, &samples) <= 0.1);
    }

    #[test]
    fn zero_bound_is_bit_exact() {
        let vol = gen_smooth_random::<f64>([9, 7, 5], 3, 3).unwrap();
        let block = compress(vol.values(), vol.dims(), 0.0).unwrap();
        assert_eq!(block.header.codec_id, CODEC_VERBATIM);
        let out: Vec<f64> = decompress(&block).unwrap();
        assert!(out.iter().zip(vol.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn smooth_random_within_bound() {
        let vol = gen_smooth_random::<f64>([32, 32, 32], 11, 5).unwrap();
        let block = compress(vol.values(), vol.dims(), 0.01).unwrap();
        let out: Vec<f64> = decompress(&block).unwrap();
        assert!(max_abs_error(&out, vol.values()) <= 0.01);
        assert!(block.encoded_len() < vol.len() * 8);
    }

    #[test]
    fn f32_samples_within_bound() {
        let vol = gen_smooth_random::<f32>([16, 16, 16], 5, 4).unwrap();
        for e in [1e-1f32, 1e-3, 1e-6] {
            let block = compress(vol.values(), vol.dims(), e).unwrap();
            let out: Vec<f32> = decompress(&block).unwrap();
            for (a, b) in out.iter().zip(vol.values()) {
                assert!((*a as f64 - *b as f64).abs() <= e as f64);
            }
        }
    }

    #[test]
    fn huge_residuals_are_escaped() {
        let samples = [0.0, 1e12, -1e12, 5.0, 1e300, 0.0, -1e300, 2.0];
        let block = compress(&samples, [2, 2, 2], 1e-6).unwrap();
        let out: Vec<f64> = decompress(&block).unwrap();
        for (a, b) in out.iter().zip(&samples) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
        // Size cap falls back to verbatim when escapes dominate.
        assert!(block.payload.len() <= samples.len() * 8);
    }

    #[test]
    fn corruption_is_detected() {
        let vol = gen_smooth_random::<f64>([8, 8, 8], 2, 2).unwrap();
        let block = compress(vol.values(), vol.dims(), 0.05).unwrap();
        for i in 0..block.payload.len() {
            let mut bad = block.clone();
            bad.payload[i] ^= 0x01;
            assert!(matches!(decompress::<f64>(&bad), Err(Error::Checksum { .. })));
        }
    }

    #[test]
    fn unknown_codec_and_dtype_mismatch() {
        let block = compress(&[1.0f64, 2.0], [2, 1, 1], 0.5).unwrap();
        let mut other = block.clone();
        other.header.codec_id = 9;
        assert!(matches!(decompress::<f64>(&other), Err(Error::UnsupportedCodec(9))));
        assert!(matches!(decompress::<f32>(&block), Err(Error::DtypeMismatch { .. })));
    }

    #[test]
    fn bytes_roundtrip_and_determinism() {
        let vol = gen_smooth_random::<f64>([10, 6, 4], 9, 3).unwrap();
        let a = compress(vol.values(), vol.dims(), 0.02).unwrap();
        let b = compress(vol.values(), vol.dims(), 0.02).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let parsed = CompressedBlock::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(parsed, a);
        assert!(CompressedBlock::from_bytes(&a.to_bytes()[..HEADER_LEN - 1]).is_err());
        let bytes = a.to_bytes();
        assert!(CompressedBlock::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(compress(&[0.0, f64::NAN], [2, 1, 1], 0.1), Err(Error::NonFinite { index: 1 })));
        assert!(compress(&[0.0, 1.0], [2, 1, 1], -0.1).is_err());
        assert!(compress(&[0.0, 1.0], [3, 1, 1], 0.1).is_err());
    }
}
