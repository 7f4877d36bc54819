//! Volumetric scalar fields: construction, raw binary I/O and synthetic
//! generators.
//!
//! Samples are stored row-major with x varying fastest, so the flat index of
//! `(x, y, z)` is `x + nx * (y + ny * z)`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Endian, Real};

/// Flat index of `(x, y, z)` in an x-fastest grid of size `dims`.
#[inline]
pub fn linear_index(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

/// Copies the box `[origin, origin + extent)` out of a flat grid.
pub fn extract_window<T: Copy>(
    values: &[T],
    dims: [usize; 3],
    origin: [usize; 3],
    extent: [usize; 3],
) -> Vec<T> {
    debug_assert!((0..3).all(|a| origin[a] + extent[a] <= dims[a]));
    let mut out = Vec::with_capacity(extent.iter().product());
    for z in origin[2]..origin[2] + extent[2] {
        for y in origin[1]..origin[1] + extent[1] {
            let start = linear_index(dims, origin[0], y, z);
            out.extend_from_slice(&values[start..start + extent[0]]);
        }
    }
    out
}

/// Minimum and maximum of a non-empty slice of finite values.
pub fn value_range<T: Real>(values: &[T]) -> (T, T) {
    values.iter().fold((values[0], values[0]), |(lo, hi), &v| {
        (if v < lo { v } else { lo }, if v > hi { v } else { hi })
    })
}

/// Value range in one pass, failing on the first non-finite sample.
fn finite_range<T: Real>(values: &[T]) -> Result<(T, T)> {
    let (mut lo, mut hi) = (values[0], values[0]);
    let mut finite = true;
    for &v in values {
        finite &= v.is_finite();
        lo = if v < lo { v } else { lo };
        hi = if v > hi { v } else { hi };
    }
    if !finite {
        let index = values.iter().position(|v| !v.is_finite()).expect("found above");
        return Err(Error::NonFinite { index });
    }
    Ok((lo, hi))
}

/// A 3D scalar field on a regular lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: [usize; 3],
    spacing: [T; 3],
    values: Vec<T>,
    range: (T, T),
    source_dtype: Dtype,
}

impl<T: Real> Volume<T> {
    /// Builds a field with unit spacing. Rejects zero dimensions, a length
    /// mismatch and any non-finite sample.
    pub fn new(dims: [usize; 3], values: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::param(format!("dimensions must be positive, got {dims:?}")));
        }
        let expected = dims.iter().product::<usize>();
        if values.len() != expected {
            return Err(Error::param(format!(
                "{} samples supplied for dims {dims:?} ({expected} expected)",
                values.len()
            )));
        }
        let range = finite_range(&values)?;
        Ok(Volume {
            dims,
            spacing: [T::one(); 3],
            values,
            range,
            source_dtype: T::DTYPE,
        })
    }

    pub fn with_spacing(mut self, spacing: [T; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(s.is_finite() && *s > T::zero())) {
            return Err(Error::param("spacing must be positive and finite"));
        }
        self.spacing = spacing;
        Ok(self)
    }

    /// Records the width the samples had before ingestion. Only used for
    /// byte accounting.
    pub fn with_source_dtype(mut self, dtype: Dtype) -> Self {
        self.source_dtype = dtype;
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [T; 3] {
        self.spacing
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(vmin, vmax)` over all samples.
    pub fn value_range(&self) -> (T, T) {
        self.range
    }

    pub fn source_dtype(&self) -> Dtype {
        self.source_dtype
    }

    /// Size of the field at its ingested width.
    pub fn source_bytes(&self) -> u64 {
        (self.values.len() * self.source_dtype.size()) as u64
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.values[linear_index(self.dims, x, y, z)]
    }

    pub fn window(&self, origin: [usize; 3], extent: [usize; 3]) -> Vec<T> {
        extract_window(&self.values, self.dims, origin, extent)
    }
}

/// Reads a headerless raw dump. `f32` input is widened exactly when `T` is
/// `f64`.
pub fn load_raw<T: Real>(
    path: impl AsRef<Path>,
    dims: [usize; 3],
    dtype: Dtype,
    endian: Endian,
) -> Result<Volume<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let count = dims.iter().product::<usize>();
    let expected = (count * dtype.size()) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let values = decode_samples(&bytes, dtype, endian);
    Ok(Volume::new(dims, values)?.with_source_dtype(dtype))
}

fn decode_samples<T: Real>(bytes: &[u8], dtype: Dtype, endian: Endian) -> Vec<T> {
    match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| {
                let raw: [u8; 4] = c.try_into().unwrap();
                let v = match endian {
                    Endian::Little => f32::from_le_bytes(raw),
                    Endian::Big => f32::from_be_bytes(raw),
                };
                T::cast(v as f64)
            })
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| {
                let raw: [u8; 8] = c.try_into().unwrap();
                let v = match endian {
                    Endian::Little => f64::from_le_bytes(raw),
                    Endian::Big => f64::from_be_bytes(raw),
                };
                T::cast(v)
            })
            .collect(),
    }
}

/// Writes the samples in the exact layout [`load_raw`] expects.
pub fn save_raw<T: Real>(
    volume: &Volume<T>,
    path: impl AsRef<Path>,
    dtype: Dtype,
    endian: Endian,
) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(volume.len() * dtype.size());
    for &v in volume.values() {
        match (dtype, endian) {
            (Dtype::F32, Endian::Little) => bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
            (Dtype::F32, Endian::Big) => bytes.extend_from_slice(&(v.as_f64() as f32).to_be_bytes()),
            (Dtype::F64, Endian::Little) => bytes.extend_from_slice(&v.as_f64().to_le_bytes()),
            (Dtype::F64, Endian::Big) => bytes.extend_from_slice(&v.as_f64().to_be_bytes()),
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Signed distance to a sphere: `|p - center| - radius` at every lattice
/// point, so the zero isosurface is the sphere itself.
pub fn gen_sphere<T: Real>(dims: [usize; 3], center: [f64; 3], radius: f64) -> Result<Volume<T>> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::param(format!("radius must be positive, got {radius}")));
    }
    let mut values = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let d = [x as f64 - center[0], y as f64 - center[1], z as f64 - center[2]];
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                values.push(T::cast(r - radius));
            }
        }
    }
    Volume::new(dims, values)
}

/// Sum of `num_modes` unit-amplitude plane waves with random direction,
/// frequency and phase.
///
/// Parameters are drawn from `ChaCha8Rng::seed_from_u64(seed)` and the
/// waves are evaluated with `libm::sin`, so the output is bit-identical on
/// every platform. Each mode draws, in order: three wave numbers uniform in
/// `[-3, 3)` cycles per domain length, then a phase uniform in `[0, 2π)`.
pub fn gen_smooth_random<T: Real>(dims: [usize; 3], seed: u64, num_modes: usize) -> Result<Volume<T>> {
    if num_modes == 0 {
        return Err(Error::param("num_modes must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let modes: Vec<([f64; 3], f64)> = (0..num_modes)
        .map(|_| {
            let mut w = [0.0; 3];
            for (axis, slot) in w.iter_mut().enumerate() {
                let cycles: f64 = rng.gen_range(-3.0..3.0);
                *slot = tau * cycles / dims[axis].max(1) as f64;
            }
            let phase: f64 = rng.gen_range(0.0..tau);
            (w, phase)
        })
        .collect();

    let mut values = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64, y as f64, z as f64];
                let v: f64 = modes
                    .iter()
                    .map(|(w, phase)| libm::sin(w[0] * p[0] + w[1] * p[1] + w[2] * p[2] + phase))
                    .sum();
                values.push(T::cast(v));
            }
        }
    }
    Volume::new(dims, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_raw_reads_little_endian_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ramp.raw");
        let bytes: Vec<u8> = (0..8).flat_map(|i| (i as f32).to_le_bytes()).collect();
        fs::write(&path, bytes).unwrap();

        let vol: Volume<f64> = load_raw(&path, [2, 2, 2], Dtype::F32, Endian::Little).unwrap();
        assert_eq!(vol.values(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(vol.value_range(), (0.0, 7.0));
        assert_eq!(vol.source_dtype(), Dtype::F32);
        assert_eq!(vol.source_bytes(), 32);
    }

    #[test]
    fn load_raw_rejects_short_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.raw");
        let bytes: Vec<u8> = (0..7).flat_map(|i| (i as f32).to_le_bytes()).collect();
        fs::write(&path, bytes).unwrap();

        match load_raw::<f64>(&path, [2, 2, 2], Dtype::F32, Endian::Little) {
            Err(Error::SizeMismatch { expected, actual, .. }) => {
                assert_eq!((expected, actual), (32, 28));
            }
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn load_raw_reports_first_non_finite_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.raw");
        let mut vals = [0.0f64; 8];
        vals[5] = f64::NAN;
        vals[6] = f64::INFINITY;
        let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_be_bytes()).collect();
        fs::write(&path, bytes).unwrap();

        let err = load_raw::<f64>(&path, [2, 2, 2], Dtype::F64, Endian::Big).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 5 }), "{err:?}");
    }

    #[test]
    fn save_raw_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.raw");
        let vol = Volume::new([2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        save_raw(&vol, &path, Dtype::F32, Endian::Little).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 32);
        assert_eq!(&bytes[4..8], &1.0f32.to_le_bytes());
    }

    #[test]
    fn save_raw_reports_path_on_failure() {
        let vol = Volume::new([1, 1, 1], vec![0.0f64]).unwrap();
        let err = save_raw(&vol, "/nonexistent-dir/x.raw", Dtype::F64, Endian::Little).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.raw"));
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(Volume::<f64>::new([0, 2, 2], vec![]).is_err());
        assert!(Volume::<f64>::new([2, 1, 1], vec![1.0]).is_err());
        assert!(matches!(
            Volume::<f64>::new([2, 1, 1], vec![1.0, f64::NEG_INFINITY]),
            Err(Error::NonFinite { index: 1 })
        ));
        let v = Volume::<f64>::new([1, 1, 1], vec![1.0]).unwrap();
        assert!(v.with_spacing([1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn sphere_center_and_symmetry() {
        let vol: Volume<f64> = gen_sphere([9, 9, 9], [4.0, 4.0, 4.0], 3.0).unwrap();
        assert_eq!(vol.get(4, 4, 4), -3.0);
        for z in 0..9 {
            for y in 0..9 {
                for x in 0..9 {
                    assert_eq!(vol.get(x, y, z), vol.get(8 - x, y, z));
                    assert_eq!(vol.get(x, y, z), vol.get(x, 8 - y, 8 - z));
                }
            }
        }
        assert!(gen_sphere::<f64>([4, 4, 4], [0.0; 3], 0.0).is_err());
    }

    #[test]
    fn smooth_random_is_deterministic_and_bounded() {
        let a: Volume<f64> = gen_smooth_random([12, 10, 8], 7, 4).unwrap();
        let b: Volume<f64> = gen_smooth_random([12, 10, 8], 7, 4).unwrap();
        let c: Volume<f64> = gen_smooth_random([12, 10, 8], 8, 4).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.values().iter().zip(c.values()).any(|(x, y)| x != y));
        assert!(a.values().iter().all(|v| v.abs() <= 4.0));
        assert!(gen_smooth_random::<f64>([4, 4, 4], 1, 0).is_err());
    }

    #[test]
    fn window_extraction() {
        let vol = Volume::new([3, 2, 2], (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(vol.window([1, 0, 1], [2, 2, 1]), vec![7.0, 8.0, 10.0, 11.0]);
    }
}
