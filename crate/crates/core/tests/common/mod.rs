//! Test oracles shared by the integration suites. Nothing here calls into
//! the code paths these oracles check.

#![allow(dead_code)]

use isochr::isosurf::tables::{EDGE_CORNERS, TABLE_CORNER_OFFSETS, TRI_TABLE};
use isochr::isosurf::TriangleMesh;

pub type Tri = [[f64; 3]; 3];

/// Triangle soup of a mesh in emission order.
pub fn soup(mesh: &TriangleMesh<f64>) -> Vec<Tri> {
    mesh.triangles
        .iter()
        .map(|t| t.map(|i| mesh.vertices[i as usize]))
        .collect()
}

fn at(samples: &[f64], dims: [usize; 3], p: [usize; 3]) -> f64 {
    samples[p[0] + dims[0] * (p[1] + dims[1] * p[2])]
}

/// Brute-force marching cubes with unit spacing.
pub fn reference_triangles(samples: &[f64], dims: [usize; 3], k: f64) -> Vec<Tri> {
    let mut out = Vec::new();
    for z in 0..dims[2] - 1 {
        for y in 0..dims[1] - 1 {
            for x in 0..dims[0] - 1 {
                let corner = |j: usize| {
                    let o = TABLE_CORNER_OFFSETS[j];
                    [x + o[0], y + o[1], z + o[2]]
                };
                let mut index = 0usize;
                for j in 0..8 {
                    if at(samples, dims, corner(j)) >= k {
                        index |= 1 << j;
                    }
                }
                let row = TRI_TABLE[index];
                let mut i = 0;
                while row[i] != -1 {
                    let mut tri = [[0.0; 3]; 3];
                    for v in &mut tri {
                        let [a, b] = EDGE_CORNERS[row[i] as usize];
                        let (pa, pb) = (corner(a), corner(b));
                        let (sa, sb) = (at(samples, dims, pa), at(samples, dims, pb));
                        let t = (k - sa) / (sb - sa);
                        for c in 0..3 {
                            v[c] = pa[c] as f64 + t * (pb[c] as f64 - pa[c] as f64);
                        }
                        i += 1;
                    }
                    out.push(tri);
                }
            }
        }
    }
    out
}

/// Per-cell case code by direct definition: bit `cx + 2cy + 4cz` set when
/// that corner is `>= k`.
pub fn brute_cases(samples: &[f64], dims: [usize; 3], k: f64) -> Vec<u8> {
    let mut codes = Vec::new();
    for z in 0..dims[2] - 1 {
        for y in 0..dims[1] - 1 {
            for x in 0..dims[0] - 1 {
                let mut code = 0u8;
                for cz in 0..2 {
                    for cy in 0..2 {
                        for cx in 0..2 {
                            if at(samples, dims, [x + cx, y + cy, z + cz]) >= k {
                                code |= 1 << (cx + 2 * cy + 4 * cz);
                            }
                        }
                    }
                }
                codes.push(code);
            }
        }
    }
    codes
}

/// Cells (by coordinate) whose corners are not all on one side of `k`.
pub fn straddling_cells(samples: &[f64], dims: [usize; 3], k: f64) -> Vec<[usize; 3]> {
    let codes = brute_cases(samples, dims, k);
    let cd = [dims[0] - 1, dims[1] - 1, dims[2] - 1];
    codes
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0 && c != 255)
        .map(|(i, _)| [i % cd[0], (i / cd[0]) % cd[1], i / (cd[0] * cd[1])])
        .collect()
}

/// Min and max by linear scan over the box `[origin, origin + extent)`.
pub fn brute_extrema(samples: &[f64], dims: [usize; 3], origin: [usize; 3], extent: [usize; 3]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for z in origin[2]..origin[2] + extent[2] {
        for y in origin[1]..origin[1] + extent[1] {
            for x in origin[0]..origin[0] + extent[0] {
                let v = at(samples, dims, [x, y, z]);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    (lo, hi)
}
