//! Topology-preserving absolute error bounds.
//!
//! A cell's marching-cubes case only depends on which side of the isovalue
//! `k` each corner lies on (inside means `value >= k`). If no sample moves by
//! as much as its distance to `k`, no corner changes side. The bound for a
//! sample set is therefore read off the sorted array of such distances:
//! its smallest entry for exact preservation, or its n-th smallest when a
//! fraction of errors is tolerated.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::linear_index;

pub const DEFAULT_SAFETY_FACTOR: f64 = 1.0 - 1.0 / (1u64 << 20) as f64;
pub const DEFAULT_LOOSE_FRACTION: f64 = 0.01;

/// Which samples contribute distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    /// Both endpoints of every axis-aligned edge with `s0 < k < s1`.
    PaperEdges,
    /// Every sample, `|s - k|`.
    #[default]
    StrictVertices,
}

impl BoundMode {
    pub const fn tag(self) -> u8 {
        match self {
            BoundMode::PaperEdges => 1,
            BoundMode::StrictVertices => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(BoundMode::PaperEdges),
            2 => Ok(BoundMode::StrictVertices),
            t => Err(Error::Corrupt(format!("unknown bound mode tag {t}"))),
        }
    }
}

impl std::str::FromStr for BoundMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "paper_edges" | "edges" => Ok(BoundMode::PaperEdges),
            "strict" | "strict_vertices" | "vertices" => Ok(BoundMode::StrictVertices),
            other => Err(Error::param(format!("unknown bound mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceArray<T> {
    /// Ascending, non-negative, finite.
    pub distances: Vec<T>,
    pub mode: BoundMode,
    pub isovalue: T,
}

impl<T: Real> DistanceArray<T> {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSpec<T> {
    /// Absolute, in field units.
    pub error_bound: T,
    pub accuracy: f64,
    /// 1-based rank of the selected distance.
    pub n_selected: usize,
    pub safety_factor: f64,
    /// The selected distance is zero: only an exact copy keeps the case.
    pub lossless_required: bool,
}

/// Knobs shared by [`select_bound`] and [`region_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams<T> {
    pub accuracy: f64,
    pub mode: BoundMode,
    pub safety_factor: f64,
    /// Bound used when there is nothing to protect.
    pub loose_bound: T,
}

impl<T: Real> BoundParams<T> {
    /// Defaults with the loose bound derived from the global value range.
    pub fn new(accuracy: f64, mode: BoundMode, value_range: (T, T)) -> Self {
        BoundParams {
            accuracy,
            mode,
            safety_factor: DEFAULT_SAFETY_FACTOR,
            loose_bound: loose_bound(value_range, DEFAULT_LOOSE_FRACTION),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.accuracy > 0.0 && self.accuracy <= 1.0) {
            return Err(Error::param(format!("accuracy must lie in (0, 1], got {}", self.accuracy)));
        }
        if !(self.safety_factor > 0.0 && self.safety_factor < 1.0) {
            return Err(Error::param(format!(
                "safety factor must lie in (0, 1), got {}",
                self.safety_factor
            )));
        }
        if !(self.loose_bound >= T::zero() && self.loose_bound.is_finite()) {
            return Err(Error::param("loose bound must be finite and non-negative"));
        }
        Ok(())
    }
}

/// `loose_fraction * (vmax - vmin)`.
pub fn loose_bound<T: Real>(value_range: (T, T), loose_fraction: f64) -> T {
    T::cast(loose_fraction) * (value_range.1 - value_range.0)
}

/// Calls `f(s0, s1)` for every axis-aligned sample pair, each edge once.
pub(crate) fn for_each_edge<T: Copy>(samples: &[T], dims: [usize; 3], mut f: impl FnMut(T, T)) {
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let s = samples[linear_index(dims, x, y, z)];
                if x + 1 < dims[0] {
                    f(s, samples[linear_index(dims, x + 1, y, z)]);
                }
                if y + 1 < dims[1] {
                    f(s, samples[linear_index(dims, x, y + 1, z)]);
                }
                if z + 1 < dims[2] {
                    f(s, samples[linear_index(dims, x, y, z + 1)]);
                }
            }
        }
    }
}

/// Calls `f` with every entry of the (unsorted) distance array.
#[inline(always)]
fn for_each_distance<T: Real>(samples: &[T], dims: [usize; 3], k: T, mode: BoundMode, mut f: impl FnMut(T)) {
    debug_assert_eq!(samples.len(), dims.iter().product::<usize>());
    match mode {
        BoundMode::StrictVertices => samples.iter().for_each(|&s| f((s - k).abs())),
        BoundMode::PaperEdges => for_each_edge(samples, dims, |a, b| {
            let (s0, s1) = if a <= b { (a, b) } else { (b, a) };
            if s0 < k && k < s1 {
                f(k - s0);
                f(s1 - k);
            }
        }),
    }
}

fn raw_distances<T: Real>(samples: &[T], dims: [usize; 3], k: T, mode: BoundMode) -> Vec<T> {
    let mut d = Vec::new();
    for_each_distance(samples, dims, k, mode, |x| d.push(x));
    d
}

/// Smallest entry of the distance array without building it.
fn min_distance<T: Real>(samples: &[T], dims: [usize; 3], k: T, mode: BoundMode) -> Option<T> {
    let mut best: Option<T> = None;
    for_each_distance(samples, dims, k, mode, |d| {
        best = Some(best.map_or(d, |b| if d < b { d } else { b }));
    });
    best
}

/// Non-negative doubles order like their bit patterns; the top 16 bits
/// split each octave into 16 buckets.
const RADIX_SHIFT: u32 = 48;

fn radix_bucket<T: Real>(d: T) -> usize {
    (d.as_f64().to_bits() >> RADIX_SHIFT) as usize
}

/// Entry `rank` (0-based) of the sorted distance array, found with one
/// counting pass and one pass that keeps only the bucket holding it.
fn nth_distance<T: Real>(samples: &[T], dims: [usize; 3], k: T, mode: BoundMode, rank: usize) -> T {
    let mut histogram = vec![0usize; 1 << (64 - RADIX_SHIFT - 1)];
    for_each_distance(samples, dims, k, mode, |d| histogram[radix_bucket(d)] += 1);
    let mut below = 0;
    let mut target = 0;
    for (bucket, &count) in histogram.iter().enumerate() {
        if below + count > rank {
            target = bucket;
            break;
        }
        below += count;
    }
    let mut kept = Vec::with_capacity(histogram[target]);
    for_each_distance(samples, dims, k, mode, |d| {
        if radix_bucket(d) == target {
            kept.push(d);
        }
    });
    *kept.select_nth_unstable_by(rank - below, total_order).1
}

fn total_order<T: Real>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).expect("distances are finite")
}

/// Builds the sorted distance array of `samples` (an x-fastest grid of
/// `dims`) with respect to `k`.
pub fn collect_distances<T: Real>(samples: &[T], dims: [usize; 3], k: T, mode: BoundMode) -> DistanceArray<T> {
    let mut distances = raw_distances(samples, dims, k, mode);
    distances.sort_unstable_by(total_order);
    DistanceArray {
        distances,
        mode,
        isovalue: k,
    }
}

/// `n = max(1, 1 + floor((1 - accuracy) * len))`.
///
/// Products within a few ulps of an integer are snapped to it first, so
/// `(1 - 0.8) * 10` counts as 2 and not 1.999….
pub fn rank_for_accuracy(accuracy: f64, len: usize) -> usize {
    let t = (1.0 - accuracy) * len as f64;
    let nearest = t.round();
    let tolerated = if (t - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        t.floor()
    };
    let n = 1 + tolerated.max(0.0) as usize;
    n.min(len.max(1))
}

fn spec_from_selected<T: Real>(selected: Option<T>, n: usize, params: &BoundParams<T>) -> BoundSpec<T> {
    let (error_bound, lossless_required) = match selected {
        None => (params.loose_bound, false),
        Some(d) if d <= T::zero() => (T::zero(), true),
        Some(d) => {
            let shrunk = d * T::cast(params.safety_factor);
            // Keeps the inequality strict even where the product rounds back up.
            (if shrunk < d { shrunk } else { T::zero() }, false)
        }
    };
    BoundSpec {
        error_bound,
        accuracy: params.accuracy,
        n_selected: n,
        safety_factor: params.safety_factor,
        lossless_required,
    }
}

/// Picks the n-th smallest distance, `n` from [`rank_for_accuracy`], and
/// shrinks it by the safety factor. An empty array yields the loose bound.
pub fn select_bound<T: Real>(d: &DistanceArray<T>, params: &BoundParams<T>) -> BoundSpec<T> {
    let n = rank_for_accuracy(params.accuracy, d.len());
    spec_from_selected(d.distances.get(n - 1).copied(), n, params)
}

/// Same selection as `select_bound(collect_distances(..))` without the full
/// sort.
fn nth_distance_bound<T: Real>(samples: &[T], dims: [usize; 3], k: T, params: &BoundParams<T>) -> BoundSpec<T> {
    if params.accuracy >= 1.0 {
        return spec_from_selected(min_distance(samples, dims, k, params.mode), 1, params);
    }
    let len = match params.mode {
        BoundMode::StrictVertices => samples.len(),
        BoundMode::PaperEdges => {
            let mut len = 0;
            for_each_distance(samples, dims, k, params.mode, |_| len += 1);
            len
        }
    };
    let n = rank_for_accuracy(params.accuracy, len);
    let selected = (len > 0).then(|| nth_distance(samples, dims, k, params.mode, n - 1));
    spec_from_selected(selected, n, params)
}

/// Smallest bound over every candidate a region serves; the loose bound when
/// it serves none.
pub fn region_bound<T: Real>(samples: &[T], dims: [usize; 3], served: &[T], params: &BoundParams<T>) -> BoundSpec<T> {
    served
        .iter()
        .map(|&k| nth_distance_bound(samples, dims, k, params))
        .reduce(|best, b| {
            let lossless = best.lossless_required || b.lossless_required;
            let mut pick = if b.error_bound < best.error_bound { b } else { best };
            pick.lossless_required = lossless;
            pick
        })
        .unwrap_or_else(|| spec_from_selected(None, 1, params))
}
