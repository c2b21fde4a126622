//! Markovian projection of a path-dependent control, by per-slice binning.
//!
//! The projected policy at time step `s` is the conditional action law given
//! the current state. It is estimated per slice: fixed-width spatial bins
//! spanning the empirical 0.1% to 99.9% range of the slice's states, each
//! bin scoring the empirical action frequencies of the paths inside it.
//! Underpopulated bins are merged with an adjacent neighbor until every bin
//! meets the count threshold or a single global bin remains.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{MimicError, Result};
use crate::scalar::Scalar;

use super::Trajectories;

/// Default bins per time slice.
pub const DEFAULT_BINS: usize = 32;
/// Minimum sample count a bin must keep to survive merging.
pub const DEFAULT_MIN_COUNT: u64 = 50;

/// Estimated Markov policy: one binned action table per time step.
#[derive(Debug, Clone)]
pub struct ProjectedPolicy<S: Scalar> {
    dim: usize,
    n_actions: usize,
    time_step: S,
    slices: Vec<PolicySlice<S>>,
}

#[derive(Debug, Clone)]
struct PolicySlice<S: Scalar> {
    lo: S,
    hi: S,
    raw_bins: usize,
    /// Raw fixed-width bin index to merged bin index.
    map: Vec<u32>,
    /// Merged bins by actions; rows are probability vectors.
    law: Array2<S>,
    counts: Vec<u64>,
    merged: bool,
}

impl<S: Scalar> ProjectedPolicy<S> {
    pub fn steps(&self) -> usize {
        self.slices.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn time_step(&self) -> S {
        self.time_step
    }

    /// Number of merged bins at one step.
    pub fn bins(&self, step: usize) -> usize {
        self.slices[step].law.nrows()
    }

    /// Sample count of one merged bin.
    pub fn bin_count(&self, step: usize, bin: usize) -> u64 {
        self.slices[step].counts[bin]
    }

    /// Action law of one merged bin.
    pub fn bin_law(&self, step: usize, bin: usize) -> ArrayView1<'_, S> {
        self.slices[step].law.row(bin)
    }

    /// State interval covered by one merged bin (edge bins also absorb
    /// everything beyond the quantile range).
    pub fn bin_interval(&self, step: usize, bin: usize) -> (S, S) {
        let slice = &self.slices[step];
        if slice.raw_bins <= 1 {
            return (slice.lo, slice.hi);
        }
        let width = (slice.hi - slice.lo) / S::from_usize(slice.raw_bins).unwrap();
        let first = slice.map.iter().position(|&b| b as usize == bin).unwrap();
        let last = slice.map.iter().rposition(|&b| b as usize == bin).unwrap();
        (
            slice.lo + width * S::from_usize(first).unwrap(),
            slice.lo + width * S::from_usize(last + 1).unwrap(),
        )
    }

    /// Whether merging changed the bin layout at one step.
    pub fn was_merged(&self, step: usize) -> bool {
        self.slices[step].merged
    }

    /// Steps where merging occurred.
    pub fn merged_steps(&self) -> usize {
        self.slices.iter().filter(|s| s.merged).count()
    }

    /// Action law for a state at one step; the flag reports whether the
    /// state escaped the binned range and was clamped to the nearest bin.
    pub fn action_law_at(&self, step: usize, x: S) -> (ArrayView1<'_, S>, bool) {
        let slice = &self.slices[step];
        let escaped = x < slice.lo || x > slice.hi;
        let raw = if slice.raw_bins <= 1 {
            0
        } else {
            let width = (slice.hi - slice.lo) / S::from_usize(slice.raw_bins).unwrap();
            let offset = ((x - slice.lo) / width).floor();
            if offset < S::zero() {
                0
            } else {
                offset
                    .to_usize()
                    .unwrap_or(slice.raw_bins - 1)
                    .min(slice.raw_bins - 1)
            }
        };
        (slice.law.row(slice.map[raw] as usize), escaped)
    }

    /// Policy that plays one fixed law at every step and every state; used
    /// as a negative control against vacuous statistical acceptance.
    pub fn constant(steps: usize, time_step: S, law: Array1<S>) -> Result<Self> {
        super::validate_law(&law)?;
        if steps == 0 {
            return Err(MimicError::BadShape {
                what: "policy steps",
                got: 0,
                want: 1,
            });
        }
        let n_actions = law.len();
        let row = law.into_shape_with_order((1, n_actions)).unwrap();
        let slice = PolicySlice {
            lo: S::neg_infinity(),
            hi: S::infinity(),
            raw_bins: 1,
            map: vec![0],
            law: row,
            counts: vec![0],
            merged: false,
        };
        Ok(ProjectedPolicy {
            dim: 1,
            n_actions,
            time_step,
            slices: vec![slice; steps],
        })
    }
}

pub fn project_control<S: Scalar>(trajectories: &Trajectories<S>) -> Result<ProjectedPolicy<S>> {
    project_control_with(trajectories, DEFAULT_BINS, DEFAULT_MIN_COUNT)
}

pub fn project_control_with<S: Scalar>(
    trajectories: &Trajectories<S>,
    bins: usize,
    min_count: u64,
) -> Result<ProjectedPolicy<S>> {
    // The bin estimator orders states on a line; multi-dimensional
    // projection would need product bins and is not supported.
    if trajectories.dim() != 1 {
        return Err(MimicError::BadShape {
            what: "projected state dimension",
            got: trajectories.dim(),
            want: 1,
        });
    }
    if bins == 0 {
        return Err(MimicError::BadShape {
            what: "bin count",
            got: 0,
            want: 1,
        });
    }
    let min_count = min_count.max(1);
    let steps = trajectories.steps();
    let n = trajectories.n_paths();
    let n_actions = trajectories.n_actions();
    let mut slices = Vec::with_capacity(steps);
    let mut values = vec![S::zero(); n];
    for step in 0..steps {
        for (path, v) in values.iter_mut().enumerate() {
            *v = trajectories.state(path, step)[0];
        }
        let (lo, hi) = quantile_range(&values);
        let raw_bins = if hi > lo { bins } else { 1 };
        let width = if raw_bins > 1 {
            (hi - lo) / S::from_usize(raw_bins).unwrap()
        } else {
            S::one()
        };

        // Contiguous merge cells over the raw bins.
        let mut cells: Vec<Cell> = (0..raw_bins)
            .map(|_| Cell {
                span: 1,
                count: 0,
                action_counts: vec![0u64; n_actions],
            })
            .collect();
        for (path, &v) in values.iter().enumerate() {
            let raw = if raw_bins == 1 {
                0
            } else {
                let offset = ((v - lo) / width).floor();
                if offset < S::zero() {
                    0
                } else {
                    offset.to_usize().unwrap_or(raw_bins - 1).min(raw_bins - 1)
                }
            };
            let u = trajectories.action(path, step);
            cells[raw].count += 1;
            cells[raw].action_counts[u] += 1;
        }

        while cells.len() > 1 {
            let Some(i) = cells.iter().position(|c| c.count < min_count) else {
                break;
            };
            // Merge into the adjacent neighbor with the smaller count;
            // ties and edges resolve leftward. Deterministic by scan order.
            let j = if i == 0 {
                1
            } else if i == cells.len() - 1 || cells[i - 1].count <= cells[i + 1].count {
                i - 1
            } else {
                i + 1
            };
            let (keep, gone) = (i.min(j), i.max(j));
            let moved = cells.remove(gone);
            cells[keep].span += moved.span;
            cells[keep].count += moved.count;
            for (a, c) in cells[keep].action_counts.iter_mut().zip(moved.action_counts) {
                *a += c;
            }
        }

        let mut map = Vec::with_capacity(raw_bins);
        let mut law = Array2::zeros((cells.len(), n_actions));
        let mut counts = Vec::with_capacity(cells.len());
        for (idx, cell) in cells.iter().enumerate() {
            for _ in 0..cell.span {
                map.push(idx as u32);
            }
            let total = S::from_u64(cell.count.max(1)).unwrap();
            for u in 0..n_actions {
                law[[idx, u]] = S::from_u64(cell.action_counts[u]).unwrap() / total;
            }
            counts.push(cell.count);
        }
        slices.push(PolicySlice {
            lo,
            hi,
            raw_bins,
            map,
            law,
            counts,
            merged: cells.len() != bins,
        });
    }
    Ok(ProjectedPolicy {
        dim: 1,
        n_actions,
        time_step: trajectories.time_step(),
        slices,
    })
}

struct Cell {
    span: usize,
    count: u64,
    action_counts: Vec<u64>,
}

/// Empirical 0.1% and 99.9% quantiles by selection.
fn quantile_range<S: Scalar>(values: &[S]) -> (S, S) {
    let n = values.len();
    let mut scratch: Vec<S> = values.to_vec();
    let pick = |scratch: &mut Vec<S>, q: f64| -> S {
        let idx = ((n - 1) as f64 * q).round() as usize;
        let (_, v, _) = scratch.select_nth_unstable_by(idx, |a, b| {
            a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)
        });
        *v
    };
    let lo = pick(&mut scratch, 0.001);
    let hi = pick(&mut scratch, 0.999);
    (lo, hi)
}
