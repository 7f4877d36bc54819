//! Extraction checked against a per-cell brute-force reference that shares
//! only the lookup table with the library: it indexes the table directly in
//! table corner order, interpolates from the first to the second corner of
//! each table edge, and emits unshared triangle soup.

mod common;

use isochr::isosurf::tables::{EDGE_CORNERS, TABLE_CORNER_OFFSETS, TRI_TABLE};
use isochr::isosurf::{marching_cubes, Lattice};
use isochr::volume::gen_sphere;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{reference_triangles, soup};

#[test]
fn all_single_cell_cases_match_reference() {
    for case in 0..256usize {
        // Case bit i refers to corner i = cx + 2cy + 4cz.
        let samples: Vec<f64> = (0..8)
            .map(|i| {
                let magnitude = 0.25 + 0.1 * i as f64;
                if (case >> i) & 1 == 1 { magnitude } else { -magnitude }
            })
            .collect();
        let mesh = marching_cubes(&samples, [2, 2, 2], &Lattice::default(), 0.0).unwrap();
        let reference = reference_triangles(&samples, [2, 2, 2], 0.0);
        let got = soup(&mesh);
        assert_eq!(got.len(), reference.len(), "case {case}");
        for (a, b) in got.iter().zip(&reference) {
            for v in 0..3 {
                for c in 0..3 {
                    assert!((a[v][c] - b[v][c]).abs() <= 1e-9, "case {case}: {a:?} vs {b:?}");
                }
            }
        }
    }
}

#[test]
fn random_grids_match_reference() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<f64> = (0..512).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mesh = marching_cubes(&samples, [8, 8, 8], &Lattice::default(), 0.0).unwrap();
        let reference = reference_triangles(&samples, [8, 8, 8], 0.0);
        let got = soup(&mesh);
        assert_eq!(got.len(), reference.len(), "seed {seed}");
        let worst = got
            .iter()
            .zip(&reference)
            .flat_map(|(a, b)| (0..9).map(move |i| (a[i / 3][i % 3] - b[i / 3][i % 3]).abs()))
            .fold(0.0, f64::max);
        assert!(worst <= 1e-9, "seed {seed}: deviation {worst}");
    }
}

#[test]
fn sphere_area_and_reference_count() {
    let radius = 20.0;
    let vol = gen_sphere::<f64>([64, 64, 64], [31.5; 3], radius).unwrap();
    let mesh = marching_cubes(vol.values(), vol.dims(), &Lattice::default(), 0.0).unwrap();
    let exact = 4.0 * std::f64::consts::PI * radius * radius;
    let area = mesh.area();
    assert!((area - exact).abs() / exact < 0.05, "area {area} vs {exact}");
    assert_eq!(mesh.triangles.len(), reference_triangles(vol.values(), vol.dims(), 0.0).len());
}

#[test]
fn spacing_and_origin_scale_vertices() {
    let samples: Vec<f64> = (0..8).map(|i| (i & 1) as f64).collect();
    let lattice = Lattice {
        spacing: [2.0, 3.0, 4.0],
        origin: [10.0, 20.0, 30.0],
    };
    let mesh = marching_cubes(&samples, [2, 2, 2], &lattice, 0.25).unwrap();
    assert_eq!(mesh.vertices.len(), 4);
    assert!(mesh.vertices.iter().all(|v| v[0] == 10.5));
    let ys: Vec<f64> = mesh.vertices.iter().map(|v| v[1]).collect();
    assert!(ys.iter().all(|&y| y == 20.0 || y == 23.0));
}

#[test]
fn reference_helpers_are_consistent_with_table_layout() {
    assert_eq!(TRI_TABLE.len(), 256);
    for [a, b] in EDGE_CORNERS {
        assert_ne!(TABLE_CORNER_OFFSETS[a], TABLE_CORNER_OFFSETS[b]);
    }
}
