mod common;

use isochr::blocking::{build_index, decompose, merge_regions};
use isochr::bound::{collect_distances, region_bound, select_bound, BoundMode, BoundParams};
use isochr::codec::{compress, decompress};
use isochr::isosurf::verify_topology;
use isochr::volume::{value_range, Volume};
use proptest::prelude::*;

use common::{brute_cases, brute_extrema, straddling_cells};

fn field() -> impl Strategy<Value = ([usize; 3], Vec<f64>)> {
    (2usize..10, 2usize..10, 2usize..10).prop_flat_map(|(x, y, z)| {
        prop::collection::vec(-100.0f64..100.0, x * y * z).prop_map(move |v| ([x, y, z], v))
    })
}

fn candidates(values: &[f64], picks: &[f64]) -> Vec<f64> {
    let (lo, hi) = value_range(values);
    let mut c: Vec<f64> = picks.iter().map(|p| lo + p * (hi - lo)).collect();
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn codec_respects_bound((dims, values) in field(), frac in 1e-4f64..0.5) {
        let (lo, hi) = value_range(&values);
        let e = frac * (hi - lo).max(1e-3);
        let block = compress(&values, dims, e).unwrap();
        let back: Vec<f64> = decompress(&block).unwrap();
        for (a, b) in values.iter().zip(&back) {
            prop_assert!((a - b).abs() <= e);
        }
    }

    #[test]
    fn codec_respects_bound_f32((dims, values) in field(), frac in 1e-3f64..0.5) {
        let values: Vec<f32> = values.iter().map(|&v| v as f32).collect();
        let e = (frac * 200.0) as f32;
        let back: Vec<f32> = decompress(&compress(&values, dims, e).unwrap()).unwrap();
        for (a, b) in values.iter().zip(&back) {
            prop_assert!((a - b).abs() <= e);
        }
    }

    // Any perturbation within the strict bound, pushed toward the isovalue
    // as hard as allowed, keeps every case code.
    #[test]
    fn strict_bound_keeps_cases((dims, values) in field(), pick in 0.0f64..1.0, signs in any::<u64>()) {
        let k = candidates(&values, &[pick])[0];
        let params = BoundParams::new(1.0, BoundMode::StrictVertices, value_range(&values));
        let spec = select_bound(&collect_distances(&values, dims, k, BoundMode::StrictVertices), &params);
        let e = spec.error_bound;
        let toward: Vec<f64> = values.iter().map(|&v| if v >= k { v - e } else { v + e }).collect();
        let mixed: Vec<f64> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| if (signs >> (i % 64)) & 1 == 1 { v + e } else { v - e })
            .collect();
        let original = brute_cases(&values, dims, k);
        if spec.lossless_required {
            prop_assert_eq!(e, 0.0);
        } else {
            prop_assert_eq!(&brute_cases(&toward, dims, k), &original);
            prop_assert_eq!(&brute_cases(&mixed, dims, k), &original);
        }
    }

    #[test]
    fn relaxing_accuracy_never_tightens((dims, values) in field(), pick in 0.0f64..1.0, a in 0.05f64..1.0, b in 0.05f64..1.0) {
        let k = candidates(&values, &[pick])[0];
        let (lo_acc, hi_acc) = if a <= b { (a, b) } else { (b, a) };
        for mode in [BoundMode::PaperEdges, BoundMode::StrictVertices] {
            let d = collect_distances(&values, dims, k, mode);
            let range = value_range(&values);
            let loose = select_bound(&d, &BoundParams::new(lo_acc, mode, range));
            let tight = select_bound(&d, &BoundParams::new(hi_acc, mode, range));
            prop_assert!(loose.error_bound >= tight.error_bound);
        }
    }

    #[test]
    fn region_bound_is_min_over_served(
        (dims, values) in field(),
        picks in prop::collection::vec(0.0f64..1.0, 1..4),
        acc in prop_oneof![Just(1.0f64), 0.05f64..1.0],
        strict in any::<bool>(),
        coarse in any::<bool>(),
    ) {
        // Coarse values repeat, so the selected rank often sits in a tie.
        let values: Vec<f64> = if coarse { values.iter().map(|v| (v / 25.0).round()).collect() } else { values };
        let cands = candidates(&values, &picks);
        let mode = if strict { BoundMode::StrictVertices } else { BoundMode::PaperEdges };
        let params = BoundParams::new(acc, mode, value_range(&values));
        let joint = region_bound(&values, dims, &cands, &params);
        let each: Vec<_> = cands
            .iter()
            .map(|&k| select_bound(&collect_distances(&values, dims, k, mode), &params))
            .collect();
        let min = each.iter().map(|b| b.error_bound).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(joint.error_bound, min);
        prop_assert_eq!(joint.lossless_required, each.iter().any(|b| b.lossless_required));
    }

    #[test]
    fn index_is_exact((dims, values) in field(), bs in 2usize..5, picks in prop::collection::vec(0.0f64..1.0, 1..5)) {
        let cands = candidates(&values, &picks);
        let vol = Volume::new(dims, values.clone()).unwrap();
        let decomp = decompose(&vol, bs).unwrap();
        let index = build_index(&decomp.blocks, &cands).unwrap();
        for b in &decomp.blocks {
            let (lo, hi) = brute_extrema(&values, dims, b.sample_origin, b.sample_extent);
            prop_assert_eq!((b.vmin, b.vmax), (lo, hi));
            for (c, &k) in cands.iter().enumerate() {
                prop_assert_eq!(index.block_masks[b.block_id].contains(c), lo <= k && k <= hi);
                prop_assert_eq!(index.relevant[c].contains(&b.block_id), lo <= k && k <= hi);
            }
        }
        for cell in straddling_cells(&values, dims, cands[0]) {
            let c = [cell[0] / bs, cell[1] / bs, cell[2] / bs];
            prop_assert!(index.block_masks[decomp.block_id(c)].contains(0));
        }
    }

    #[test]
    fn regions_partition_blocks((dims, values) in field(), bs in 2usize..5, picks in prop::collection::vec(0.0f64..1.0, 1..4)) {
        let cands = candidates(&values, &picks);
        let vol = Volume::new(dims, values).unwrap();
        let decomp = decompose(&vol, bs).unwrap();
        let index = build_index(&decomp.blocks, &cands).unwrap();
        let regions = merge_regions(&decomp, &index);
        let mut owner = vec![usize::MAX; decomp.len()];
        for r in &regions {
            for c in r.block_coords() {
                let id = decomp.block_id(c);
                prop_assert_eq!(owner[id], usize::MAX);
                prop_assert_eq!(&index.block_masks[id], &r.relevance);
                owner[id] = r.region_id;
            }
        }
        prop_assert!(owner.iter().all(|&o| o != usize::MAX));
    }

    #[test]
    fn identical_fields_preserve_everything((dims, values) in field(), pick in 0.0f64..1.0) {
        let k = candidates(&values, &[pick])[0];
        let report = verify_topology(&values, &values, dims, k).unwrap();
        prop_assert_eq!(report.preserved_fraction, 1.0);
        prop_assert_eq!(report.differing_cells, 0);
    }
}
