//! Marching-cubes extraction, per-cell case codes and case-equality checks.
//!
//! A corner is *inside* when its value is `>= k`. Case codes set bit `i`
//! for inside corner `i`, where `i = cx + 2*cy + 4*cz` over the corner's
//! unit offset within the cell. The triangle table uses a different corner
//! numbering; [`table_index`] converts between the two. Since the table is
//! indexed with inside-bits rather than its original below-bits, triangle
//! winding is reversed relative to the published table; the edge sets are
//! identical.

mod obj;
pub mod tables;


use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{linear_index, Volume};
use tables::{EDGE_CORNERS, TABLE_CORNER_OFFSETS, TRI_TABLE};

pub use obj::{export_obj, read_obj, write_obj};

/// Cell layers per extraction task.
const SLAB_CELLS: usize = 8;

/// Case code of one cell; `corners[i]` sits at offset
/// `(i & 1, (i >> 1) & 1, i >> 2)`.
#[inline]
pub fn cell_case<T: Real>(corners: &[T; 8], k: T) -> u8 {
    corners
        .iter()
        .enumerate()
        .fold(0u8, |code, (i, &v)| if v >= k { code | (1 << i) } else { code })
}

const fn build_table_index() -> [u8; 256] {
    let mut out = [0u8; 256];
    let mut case = 0;
    while case < 256 {
        let mut idx = 0u8;
        let mut j = 0;
        while j < 8 {
            let o = TABLE_CORNER_OFFSETS[j];
            let corner = o[0] + 2 * o[1] + 4 * o[2];
            if (case >> corner) & 1 == 1 {
                idx |= 1 << j;
            }
            j += 1;
        }
        out[case] = idx;
        case += 1;
    }
    out
}

static TABLE_INDEX: [u8; 256] = build_table_index();

/// Row of the triangle table that serves case code `case`.
#[inline]
pub fn table_index(case: u8) -> usize {
    TABLE_INDEX[case as usize] as usize
}

/// Number of triangles the table emits for a case code.
pub fn triangle_count(case: u8) -> usize {
    TRI_TABLE[table_index(case)]
        .iter()
        .take_while(|&&e| e >= 0)
        .count()
        / 3
}

fn check_dims(len: usize, dims: [usize; 3]) -> Result<()> {
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::param(format!("need at least 2 samples per axis, got {dims:?}")));
    }
    if len != dims.iter().product::<usize>() {
        return Err(Error::param(format!("{len} samples do not fill dims {dims:?}")));
    }
    Ok(())
}

#[inline]
fn gather_corners<T: Real>(samples: &[T], dims: [usize; 3], x: usize, y: usize, z: usize) -> [T; 8] {
    let base = linear_index(dims, x, y, z);
    let sy = dims[0];
    let sz = dims[0] * dims[1];
    [
        samples[base],
        samples[base + 1],
        samples[base + sy],
        samples[base + sy + 1],
        samples[base + sz],
        samples[base + sz + 1],
        samples[base + sz + sy],
        samples[base + sz + sy + 1],
    ]
}

/// Per-cell case codes of a field, x-fastest over `dims - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseField {
    pub cell_dims: [usize; 3],
    pub codes: Vec<u8>,
}

impl CaseField {
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.codes[linear_index(self.cell_dims, x, y, z)]
    }

    /// Occurrences of each code.
    pub fn histogram(&self) -> [usize; 256] {
        let mut h = [0; 256];
        for &c in &self.codes {
            h[c as usize] += 1;
        }
        h
    }
}

pub fn case_field<T: Real>(samples: &[T], dims: [usize; 3], k: T) -> Result<CaseField> {
    check_dims(samples.len(), dims)?;
    let cell_dims = dims.map(|d| d - 1);
    let layer = cell_dims[0] * cell_dims[1];
    let mut codes = vec![0u8; layer * cell_dims[2]];
    codes.par_chunks_mut(layer).enumerate().for_each(|(z, out)| {
        for y in 0..cell_dims[1] {
            for x in 0..cell_dims[0] {
                out[x + cell_dims[0] * y] = cell_case(&gather_corners(samples, dims, x, y, z), k);
            }
        }
    });
    Ok(CaseField { cell_dims, codes })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh<T> {
    pub vertices: Vec<[T; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl<T: Real> TriangleMesh<T> {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Total surface area, accumulated in `f64`.
    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize].map(|v| v.as_f64()));
                let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
                let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
                0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
            })
            .sum()
    }
}

/// Geometry of the lattice: world position of sample `(i, j, l)` is
/// `origin + spacing * (i, j, l)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice<T> {
    pub spacing: [T; 3],
    pub origin: [T; 3],
}

impl<T: Real> Default for Lattice<T> {
    fn default() -> Self {
        Lattice {
            spacing: [T::one(); 3],
            origin: [T::zero(); 3],
        }
    }
}

struct SlabMesh<T> {
    vertices: Vec<[T; 3]>,
    /// Global edge key of each local vertex.
    keys: Vec<usize>,
    triangles: Vec<[u32; 3]>,
}

/// Lower endpoint offset and axis of each table edge.
const fn build_edge_origins() -> [([usize; 3], usize); 12] {
    let mut out = [([0usize; 3], 0usize); 12];
    let mut e = 0;
    while e < 12 {
        let oa = TABLE_CORNER_OFFSETS[EDGE_CORNERS[e][0]];
        let ob = TABLE_CORNER_OFFSETS[EDGE_CORNERS[e][1]];
        let mut lo = [0usize; 3];
        let mut axis = 0;
        let mut a = 0;
        while a < 3 {
            lo[a] = if oa[a] < ob[a] { oa[a] } else { ob[a] };
            if oa[a] != ob[a] {
                axis = a;
            }
            a += 1;
        }
        out[e] = (lo, axis);
        e += 1;
    }
    out
}

static EDGE_ORIGINS: [([usize; 3], usize); 12] = build_edge_origins();

const NONE: u32 = u32::MAX;

fn extract_slab<T: Real>(
    samples: &[T],
    dims: [usize; 3],
    lattice: &Lattice<T>,
    k: T,
    z_cells: std::ops::Range<usize>,
) -> SlabMesh<T> {
    let mut slab = SlabMesh {
        vertices: Vec::new(),
        keys: Vec::new(),
        triangles: Vec::new(),
    };
    let plane = dims[0] * dims[1];
    let step = [1, dims[0], plane];
    // Local vertex ids of edges whose lower endpoint lies on sample plane z
    // and z + 1 respectively.
    let mut below = vec![[NONE; 3]; plane];
    let mut above = vec![[NONE; 3]; plane];

    for z in z_cells {
        for y in 0..dims[1] - 1 {
            for x in 0..dims[0] - 1 {
                let corners = gather_corners(samples, dims, x, y, z);
                let case = cell_case(&corners, k);
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[table_index(case)];
                for tri in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
                    let mut ids = [0u32; 3];
                    for (slot, &edge) in ids.iter_mut().zip(tri) {
                        let (lo, axis) = EDGE_ORIGINS[edge as usize];
                        let p = [x + lo[0], y + lo[1], z + lo[2]];
                        let in_plane = p[0] + dims[0] * p[1];
                        let cache = if lo[2] == 0 { &mut below } else { &mut above };
                        let cached = &mut cache[in_plane][axis];
                        if *cached == NONE {
                            let i0 = in_plane + plane * p[2];
                            let (s0, s1) = (samples[i0], samples[i0 + step[axis]]);
                            let t = if s1 == s0 { T::zero() } else { (k - s0) / (s1 - s0) };
                            let mut pos = [T::zero(); 3];
                            for a in 0..3 {
                                let along = if a == axis { t } else { T::zero() };
                                pos[a] = lattice.origin[a]
                                    + lattice.spacing[a] * (T::from_usize(p[a]).expect("index") + along);
                            }
                            slab.vertices.push(pos);
                            slab.keys.push(i0 * 3 + axis);
                            *cached = (slab.vertices.len() - 1) as u32;
                        }
                        *slot = *cached;
                    }
                    slab.triangles.push(ids);
                }
            }
        }
        std::mem::swap(&mut below, &mut above);
        above.fill([NONE; 3]);
    }
    slab
}

pub(crate) fn marching_cubes_slabbed<T: Real>(
    samples: &[T],
    dims: [usize; 3],
    lattice: &Lattice<T>,
    k: T,
    slab_cells: usize,
) -> Result<TriangleMesh<T>> {
    check_dims(samples.len(), dims)?;
    let nz = dims[2] - 1;
    let slab_cells = slab_cells.max(1);
    let slabs: Vec<SlabMesh<T>> = (0..nz.div_ceil(slab_cells))
        .into_par_iter()
        .map(|s| extract_slab(samples, dims, lattice, k, s * slab_cells..((s + 1) * slab_cells).min(nz)))
        .collect();

    // Seam merge in slab order reproduces the sequential first-emission order.
    // Only edges on the plane two slabs share can be emitted twice.
    let mut mesh = TriangleMesh {
        vertices: Vec::with_capacity(slabs.iter().map(|s| s.vertices.len()).sum()),
        triangles: Vec::with_capacity(slabs.iter().map(|s| s.triangles.len()).sum()),
    };
    let plane = dims[0] * dims[1];
    let mut seam = vec![[NONE; 3]; plane];
    let mut next_seam = vec![[NONE; 3]; plane];
    for (s, slab) in slabs.into_iter().enumerate() {
        let (z0, z1) = (s * slab_cells, ((s + 1) * slab_cells).min(nz));
        let remap: Vec<u32> = slab
            .keys
            .iter()
            .zip(&slab.vertices)
            .map(|(&key, &v)| {
                let (p, axis) = (key / 3, key % 3);
                let (pz, in_plane) = (p / plane, p % plane);
                if pz == z0 && seam[in_plane][axis] != NONE {
                    return seam[in_plane][axis];
                }
                mesh.vertices.push(v);
                let id = (mesh.vertices.len() - 1) as u32;
                if pz == z1 {
                    next_seam[in_plane][axis] = id;
                }
                id
            })
            .collect();
        mesh.triangles
            .extend(slab.triangles.iter().map(|t| t.map(|i| remap[i as usize])));
        std::mem::swap(&mut seam, &mut next_seam);
        next_seam.fill([NONE; 3]);
    }
    Ok(mesh)
}

/// Extracts the `k` isosurface of an x-fastest sample grid. Cells are
/// visited z-outer, x-inner; triangles follow table order and vertices are
/// shared between cells that meet on an edge.
pub fn marching_cubes<T: Real>(samples: &[T], dims: [usize; 3], lattice: &Lattice<T>, k: T) -> Result<TriangleMesh<T>> {
    marching_cubes_slabbed(samples, dims, lattice, k, SLAB_CELLS)
}

/// [`marching_cubes`] over a whole volume with its own spacing.
pub fn extract_volume<T: Real>(volume: &Volume<T>, k: T) -> Result<TriangleMesh<T>> {
    let lattice = Lattice {
        spacing: volume.spacing(),
        origin: [T::zero(); 3],
    };
    marching_cubes(volume.values(), volume.dims(), &lattice, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub preserved_fraction: f64,
    pub differing_cells: usize,
    pub total_cells: usize,
    /// First differing cell in z, y, x scan order.
    pub first_diff: Option<[usize; 3]>,
}

/// Fraction of cells whose case code is the same in both fields.
pub fn verify_topology<T: Real>(original: &[T], reconstructed: &[T], dims: [usize; 3], k: T) -> Result<TopologyReport> {
    if original.len() != reconstructed.len() {
        return Err(Error::param(format!(
            "original has {} samples, reconstruction {}",
            original.len(),
            reconstructed.len()
        )));
    }
    let a = case_field(original, dims, k)?;
    let b = case_field(reconstructed, dims, k)?;
    Ok(compare_cases(&a, &b))
}

/// [`verify_topology`] on two volumes, rejecting differing dimensions.
pub fn verify_volumes<T: Real>(original: &Volume<T>, reconstructed: &Volume<T>, k: T) -> Result<TopologyReport> {
    if original.dims() != reconstructed.dims() {
        return Err(Error::DimsMismatch {
            left: original.dims(),
            right: reconstructed.dims(),
        });
    }
    verify_topology(original.values(), reconstructed.values(), original.dims(), k)
}

pub fn compare_cases(a: &CaseField, b: &CaseField) -> TopologyReport {
    assert_eq!(a.cell_dims, b.cell_dims);
    let mut differing = 0;
    let mut first = None;
    for (i, (x, y)) in a.codes.iter().zip(&b.codes).enumerate() {
        if x != y {
            differing += 1;
            if first.is_none() {
                let cd = a.cell_dims;
                first = Some([i % cd[0], (i / cd[0]) % cd[1], i / (cd[0] * cd[1])]);
            }
        }
    }
    let total = a.codes.len();
    TopologyReport {
        preserved_fraction: if total == 0 { 1.0 } else { (total - differing) as f64 / total as f64 },
        differing_cells: differing,
        total_cells: total,
        first_diff: first,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{gen_smooth_random, gen_sphere};

    #[test]
    fn case_bits() {
        assert_eq!(cell_case(&[0.0; 8], 1.0), 0);
        assert_eq!(cell_case(&[2.0; 8], 1.0), 255);
        let mut c = [0.0; 8];
        c[3] = 1.0;
        assert_eq!(cell_case(&c, 1.0), 0b0000_1000);
        assert_eq!(cell_case(&[1.0; 8], 1.0), 255);
    }

    #[test]
    fn table_index_is_a_permutation() {
        let mut seen = [false; 256];
        for c in 0..=255u8 {
            seen[table_index(c)] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(table_index(0), 0);
        assert_eq!(table_index(255), 255);
        // Case corner 2 is (0,1,0) which is table corner 3.
        assert_eq!(table_index(1 << 2), 1 << 3);
    }

    #[test]
    fn uniform_field_is_empty() {
        let s = vec![0.0f64; 27];
        let mesh = marching_cubes(&s, [3, 3, 3], &Lattice::default(), 1.0).unwrap();
        assert!(mesh.is_empty() && mesh.vertices.is_empty());
    }

    #[test]
    fn linear_ramp_vertices_interpolate_exactly() {
        let dims = [3, 2, 2];
        let s: Vec<f64> = (0..12).map(|i| (i % 3) as f64).collect();
        let mesh = marching_cubes(&s, dims, &Lattice::default(), 0.5).unwrap();
        assert_eq!(mesh.triangles.len(), 2);
        assert_eq!(mesh.vertices.len(), 4);
        assert!(mesh.vertices.iter().all(|v| v[0] == 0.5));
    }

    #[test]
    fn vertices_lie_on_straddling_edges() {
        let vol = gen_smooth_random::<f64>([10, 9, 8], 4, 3).unwrap();
        let mesh = extract_volume(&vol, 0.2).unwrap();
        assert!(!mesh.is_empty());
        for v in &mesh.vertices {
            let frac: Vec<f64> = v.iter().map(|c| c - c.floor()).collect();
            assert!(frac.iter().filter(|&&f| f != 0.0).count() <= 1, "{v:?}");
            let p = v.map(|c| c.floor() as usize);
            let axis = frac.iter().position(|&f| f != 0.0);
            if let Some(a) = axis {
                let mut q = p;
                q[a] += 1;
                let (s0, s1) = (vol.get(p[0], p[1], p[2]), vol.get(q[0], q[1], q[2]));
                assert!((s0 >= 0.2) != (s1 >= 0.2));
            }
        }
    }

    #[test]
    fn slab_count_does_not_change_output() {
        let vol = gen_smooth_random::<f64>([12, 11, 17], 21, 4).unwrap();
        let lattice = Lattice::default();
        let reference = marching_cubes_slabbed(vol.values(), vol.dims(), &lattice, 0.1, 1000).unwrap();
        for slab in [1, 2, 3, 5] {
            let m = marching_cubes_slabbed(vol.values(), vol.dims(), &lattice, 0.1, slab).unwrap();
            assert_eq!(m, reference, "slab size {slab}");
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| marching_cubes(vol.values(), vol.dims(), &lattice, 0.1).unwrap());
        assert_eq!(single, reference);
    }

    #[test]
    fn triangle_count_matches_table_totals() {
        let vol = gen_smooth_random::<f64>([9, 9, 9], 2, 5).unwrap();
        let k = 0.3;
        let mesh = extract_volume(&vol, k).unwrap();
        let cases = case_field(vol.values(), vol.dims(), k).unwrap();
        let expected: usize = cases.codes.iter().map(|&c| triangle_count(c)).sum();
        assert_eq!(mesh.triangles.len(), expected);
        assert!(mesh.triangles.iter().flatten().all(|&i| (i as usize) < mesh.vertices.len()));
    }

    #[test]
    fn sphere_cases_and_area() {
        let vol = gen_sphere::<f64>([24, 24, 24], [11.5; 3], 8.0).unwrap();
        let cases = case_field(vol.values(), vol.dims(), 0.0).unwrap();
        assert_eq!(cases.get(0, 0, 0), 255);
        assert_eq!(cases.get(11, 11, 11), 0);
        let area = extract_volume(&vol, 0.0).unwrap().area();
        let exact = 4.0 * std::f64::consts::PI * 64.0;
        assert!((area - exact).abs() / exact < 0.05, "{area} vs {exact}");
    }

    #[test]
    fn constant_field_at_isovalue_is_all_inside() {
        let s = vec![1.5f64; 8];
        let cases = case_field(&s, [2, 2, 2], 1.5).unwrap();
        assert_eq!(cases.codes, vec![255]);
    }

    #[test]
    fn verify_detects_single_perturbation() {
        let vol = gen_smooth_random::<f64>([8, 8, 8], 5, 3).unwrap();
        let k = 0.0;
        let same = verify_topology(vol.values(), vol.values(), vol.dims(), k).unwrap();
        assert_eq!(same.preserved_fraction, 1.0);
        assert_eq!(same.first_diff, None);

        // Push the first sample of a straddling x-edge across k.
        let dims = vol.dims();
        let mut target = None;
        'search: for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] - 1 {
                    let (a, b) = (vol.get(x, y, z), vol.get(x + 1, y, z));
                    if a < k && k < b {
                        target = Some([x, y, z]);
                        break 'search;
                    }
                }
            }
        }
        let [x, y, z] = target.expect("field crosses k");
        let mut values = vol.values().to_vec();
        let i = linear_index(dims, x, y, z);
        let d0 = k - values[i];
        values[i] += 2.0 * d0;
        let report = verify_topology(vol.values(), &values, dims, k).unwrap();
        assert!(report.preserved_fraction < 1.0);
        let c = report.first_diff.unwrap();
        assert!((0..3).all(|a| c[a] <= [x, y, z][a] && [x, y, z][a] <= c[a] + 1));
    }

    #[test]
    fn verify_rejects_dims_mismatch() {
        let a = Volume::new([2, 2, 2], vec![0.0f64; 8]).unwrap();
        let b = Volume::new([2, 2, 3], vec![0.0f64; 12]).unwrap();
        assert!(matches!(verify_volumes(&a, &b, 0.0), Err(Error::DimsMismatch { .. })));
        assert!(verify_topology(&[0.0f64; 8], &[0.0; 12], [2, 2, 2], 0.0).is_err());
    }
}
