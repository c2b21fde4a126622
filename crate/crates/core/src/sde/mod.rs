//! Monte Carlo mimicry for controlled diffusions and pure-jump processes.
//!
//! The discrete-chain modules check the mimic construction exactly; here the
//! same program runs on continuous state spaces, where only statistics are
//! available. The pipeline: simulate a path-dependent-controlled process on
//! a fixed time grid, estimate the Markovian projection of the control by
//! per-slice spatial binning, re-run the simulator under the binned policy,
//! and compare one-dimensional marginals with a Kolmogorov-Smirnov suite.
//!
//! Discretization bias cancels by design: the original and the mimic always
//! run at the same step size, so the comparison never involves an analytic
//! law. Every run is deterministic given its seed, with one RNG stream per
//! path, so results do not depend on thread scheduling.

mod project;
mod simulate;
mod stats;

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha12Rng;

use crate::error::{MimicError, Result};
use crate::linalg::cholesky_psd;
use crate::scalar::{kahan_sum, Scalar};
use crate::space::ActionSpace;

pub use project::{project_control, project_control_with, ProjectedPolicy, DEFAULT_BINS,
                  DEFAULT_MIN_COUNT};
pub use simulate::{simulate, simulate_mimic, simulate_mimic_opts, simulate_opts, MimicRun,
                   SimOptions, SimulationRun};
pub use stats::{compare_marginals, ComparisonReport, SliceComparison};

/// Default number of comparison slices on the time grid.
pub const DEFAULT_SLICES: usize = 8;

/// Relaxed control as a functional of the discretized path so far.
///
/// The simulator cannot afford to hand every control the whole path at every
/// step, so the history is folded incrementally into a summary vector chosen
/// by the control itself: `summary_init` sees the initial state, and
/// `summary_update` sees each newly reached state. A control that only needs
/// the current state keeps the summary empty (the default methods).
pub trait PathControl<S: Scalar>: Send + Sync {
    fn summary_init(&self, x0: &[S]) -> Vec<S> {
        let _ = x0;
        Vec::new()
    }

    fn summary_update(&self, summary: &mut Vec<S>, x: &[S], step: usize) {
        let _ = (summary, x, step);
    }

    /// Probability vector over actions given the summary and current state.
    fn action_law(&self, summary: &[S], x: &[S], step: usize) -> Array1<S>;
}

fn validate_law<S: Scalar>(law: &Array1<S>) -> Result<()> {
    if law.is_empty() {
        return Err(MimicError::BadShape {
            what: "action law",
            got: 0,
            want: 1,
        });
    }
    if let Some(bad) = law.iter().find(|&&v| !(v >= S::zero())) {
        return Err(MimicError::BadDistribution {
            what: "action law",
            detail: format!("negative or non-finite entry {bad}"),
        });
    }
    let total = kahan_sum(law.iter().copied());
    if (total - S::one()).abs() > S::mass_tol() {
        return Err(MimicError::BadDistribution {
            what: "action law",
            detail: format!("total mass {total}"),
        });
    }
    Ok(())
}

/// Control that plays one fixed action law at every step, path ignored.
#[derive(Debug, Clone)]
pub struct FixedLawControl<S: Scalar>(Array1<S>);

impl<S: Scalar> FixedLawControl<S> {
    pub fn new(law: Array1<S>) -> Result<Self> {
        validate_law(&law)?;
        Ok(FixedLawControl(law))
    }

    /// Point mass on one action.
    pub fn constant(n_actions: usize, action: usize) -> Self {
        let mut law = Array1::zeros(n_actions);
        law[action] = S::one();
        FixedLawControl(law)
    }

    pub fn uniform(n_actions: usize) -> Self {
        let w = S::one() / S::from_usize(n_actions).unwrap();
        FixedLawControl(Array1::from_elem(n_actions, w))
    }
}

impl<S: Scalar> PathControl<S> for FixedLawControl<S> {
    fn action_law(&self, _summary: &[S], _x: &[S], _step: usize) -> Array1<S> {
        self.0.clone()
    }
}

/// Threshold control on one state component, either on the current value
/// (a stationary Markov control) or on the running maximum over the whole
/// path (genuinely history dependent). Plays `below` while the watched
/// value is at or under the threshold and `above` once it exceeds it.
#[derive(Debug, Clone)]
pub struct ThresholdControl<S: Scalar> {
    component: usize,
    threshold: S,
    below: Array1<S>,
    above: Array1<S>,
    on_running_max: bool,
}

impl<S: Scalar> ThresholdControl<S> {
    pub fn on_state(
        component: usize,
        threshold: S,
        below: Array1<S>,
        above: Array1<S>,
    ) -> Result<Self> {
        validate_law(&below)?;
        validate_law(&above)?;
        Ok(ThresholdControl {
            component,
            threshold,
            below,
            above,
            on_running_max: false,
        })
    }

    pub fn on_running_max(
        component: usize,
        threshold: S,
        below: Array1<S>,
        above: Array1<S>,
    ) -> Result<Self> {
        let mut ctrl = Self::on_state(component, threshold, below, above)?;
        ctrl.on_running_max = true;
        Ok(ctrl)
    }
}

impl<S: Scalar> PathControl<S> for ThresholdControl<S> {
    fn summary_init(&self, x0: &[S]) -> Vec<S> {
        if self.on_running_max {
            vec![x0[self.component]]
        } else {
            Vec::new()
        }
    }

    fn summary_update(&self, summary: &mut Vec<S>, x: &[S], _step: usize) {
        if self.on_running_max {
            summary[0] = summary[0].max(x[self.component]);
        }
    }

    fn action_law(&self, summary: &[S], x: &[S], _step: usize) -> Array1<S> {
        let watched = if self.on_running_max {
            summary[0]
        } else {
            x[self.component]
        };
        if watched > self.threshold {
            self.above.clone()
        } else {
            self.below.clone()
        }
    }
}

fn check_grid<S: Scalar>(dim: usize, time_step: S, horizon: S) -> Result<usize> {
    if dim == 0 {
        return Err(MimicError::BadShape {
            what: "state dimension",
            got: 0,
            want: 1,
        });
    }
    if !(time_step > S::zero() && time_step.is_finite()) {
        return Err(MimicError::BadDistribution {
            what: "time step",
            detail: format!("must be positive and finite, got {time_step}"),
        });
    }
    if !(horizon > S::zero() && horizon.is_finite()) {
        return Err(MimicError::BadDistribution {
            what: "horizon",
            detail: format!("must be positive and finite, got {horizon}"),
        });
    }
    // Horizon is rounded to a whole number of steps.
    let steps = (horizon / time_step).round().to_usize().unwrap_or(0).max(1);
    Ok(steps)
}

/// Ito diffusion `dX = b(X, U) dt + square-root of a(X) dW` on a fixed
/// Euler grid, driven by a relaxed path control over finitely many actions.
/// The diffusion matrix is state-only; the control enters through the drift.
#[derive(Clone)]
pub struct DiffusionModel<S: Scalar> {
    dim: usize,
    actions: ActionSpace,
    drift: Arc<dyn Fn(&[S], usize) -> Vec<S> + Send + Sync>,
    drift_bound: S,
    diffusion: Arc<dyn Fn(&[S]) -> Array2<S> + Send + Sync>,
    control: Arc<dyn PathControl<S>>,
    initial: Arc<dyn Fn(&mut ChaCha12Rng) -> Vec<S> + Send + Sync>,
    time_step: S,
    steps: usize,
}

impl<S: Scalar> std::fmt::Debug for DiffusionModel<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("dim", &self.dim)
            .field("actions", &self.actions.len())
            .field("time_step", &self.time_step)
            .field("steps", &self.steps)
            .finish()
    }
}

impl<S: Scalar> DiffusionModel<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        actions: ActionSpace,
        drift: impl Fn(&[S], usize) -> Vec<S> + Send + Sync + 'static,
        drift_bound: S,
        diffusion: impl Fn(&[S]) -> Array2<S> + Send + Sync + 'static,
        control: Arc<dyn PathControl<S>>,
        initial: impl Fn(&mut ChaCha12Rng) -> Vec<S> + Send + Sync + 'static,
        time_step: S,
        horizon: S,
    ) -> Result<Self> {
        let steps = check_grid(dim, time_step, horizon)?;
        if !(drift_bound >= S::zero() && drift_bound.is_finite()) {
            return Err(MimicError::BadDistribution {
                what: "drift bound",
                detail: format!("must be finite and nonnegative, got {drift_bound}"),
            });
        }
        Ok(DiffusionModel {
            dim,
            actions,
            drift: Arc::new(drift),
            drift_bound,
            diffusion: Arc::new(diffusion),
            control,
            initial: Arc::new(initial),
            time_step,
            steps,
        })
    }

    pub fn horizon(&self) -> S {
        self.time_step * S::from_usize(self.steps).unwrap()
    }
}

/// Pure-jump process on a fixed observation grid: piecewise-constant paths
/// with controlled jump intensity `lambda(x, u)` bounded by a declared
/// maximum, and a destination sampler for the jump law. Simulation thins a
/// rate-`lambda_max` Poisson clock, which is exact in distribution; only
/// the control is frozen between grid points.
#[derive(Clone)]
pub struct JumpModel<S: Scalar> {
    dim: usize,
    actions: ActionSpace,
    intensity: Arc<dyn Fn(&[S], usize) -> S + Send + Sync>,
    lambda_max: S,
    jump: Arc<dyn Fn(&[S], usize, &mut ChaCha12Rng) -> Vec<S> + Send + Sync>,
    control: Arc<dyn PathControl<S>>,
    initial: Arc<dyn Fn(&mut ChaCha12Rng) -> Vec<S> + Send + Sync>,
    time_step: S,
    steps: usize,
}

impl<S: Scalar> std::fmt::Debug for JumpModel<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JumpModel")
            .field("dim", &self.dim)
            .field("actions", &self.actions.len())
            .field("lambda_max", &self.lambda_max)
            .field("time_step", &self.time_step)
            .field("steps", &self.steps)
            .finish()
    }
}

impl<S: Scalar> JumpModel<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        actions: ActionSpace,
        intensity: impl Fn(&[S], usize) -> S + Send + Sync + 'static,
        lambda_max: S,
        jump: impl Fn(&[S], usize, &mut ChaCha12Rng) -> Vec<S> + Send + Sync + 'static,
        control: Arc<dyn PathControl<S>>,
        initial: impl Fn(&mut ChaCha12Rng) -> Vec<S> + Send + Sync + 'static,
        time_step: S,
        horizon: S,
    ) -> Result<Self> {
        let steps = check_grid(dim, time_step, horizon)?;
        if !(lambda_max >= S::zero() && lambda_max.is_finite()) {
            return Err(MimicError::BadDistribution {
                what: "intensity bound",
                detail: format!("must be finite and nonnegative, got {lambda_max}"),
            });
        }
        Ok(JumpModel {
            dim,
            actions,
            intensity: Arc::new(intensity),
            lambda_max,
            jump: Arc::new(jump),
            control,
            initial: Arc::new(initial),
            time_step,
            steps,
        })
    }

    pub fn horizon(&self) -> S {
        self.time_step * S::from_usize(self.steps).unwrap()
    }
}

/// Common simulator interface of [`DiffusionModel`] and [`JumpModel`]:
/// a time grid, an action space, a path control, an initial sampler, and a
/// one-step transition.
pub trait SdeProcess<S: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn actions(&self) -> &ActionSpace;
    fn steps(&self) -> usize;
    fn time_step(&self) -> S;
    fn draw_initial(&self, rng: &mut ChaCha12Rng) -> Vec<S>;
    fn control(&self) -> &dyn PathControl<S>;
    /// Advance the state by one grid step under action `u`.
    fn advance(&self, x: &mut Vec<S>, u: usize, rng: &mut ChaCha12Rng) -> Result<()>;
}

impl<S: Scalar> SdeProcess<S> for DiffusionModel<S> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn time_step(&self) -> S {
        self.time_step
    }

    fn draw_initial(&self, rng: &mut ChaCha12Rng) -> Vec<S> {
        (self.initial)(rng)
    }

    fn control(&self) -> &dyn PathControl<S> {
        self.control.as_ref()
    }

    fn advance(&self, x: &mut Vec<S>, u: usize, rng: &mut ChaCha12Rng) -> Result<()> {
        let b = (self.drift)(x, u);
        if b.len() != self.dim {
            return Err(MimicError::BadShape {
                what: "drift value",
                got: b.len(),
                want: self.dim,
            });
        }
        for &bi in &b {
            // Also catches NaN drift.
            if !(bi.abs() <= self.drift_bound) {
                return Err(MimicError::DriftBound {
                    got: bi.format_full(),
                    bound: self.drift_bound.format_full(),
                });
            }
        }
        let a = (self.diffusion)(x);
        if a.shape() != [self.dim, self.dim] {
            return Err(MimicError::BadShape {
                what: "diffusion matrix",
                got: a.len(),
                want: self.dim * self.dim,
            });
        }
        let root = cholesky_psd(&a)?;
        let sqrt_dt = self.time_step.sqrt();
        let noise: Vec<S> = (0..self.dim)
            .map(|_| S::sample_standard_normal(rng))
            .collect();
        for i in 0..self.dim {
            let mut diffused = S::zero();
            for (j, &xi) in noise.iter().enumerate().take(i + 1) {
                diffused = diffused + root[[i, j]] * xi;
            }
            x[i] = x[i] + b[i] * self.time_step + sqrt_dt * diffused;
        }
        Ok(())
    }
}

impl<S: Scalar> SdeProcess<S> for JumpModel<S> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn time_step(&self) -> S {
        self.time_step
    }

    fn draw_initial(&self, rng: &mut ChaCha12Rng) -> Vec<S> {
        (self.initial)(rng)
    }

    fn control(&self) -> &dyn PathControl<S> {
        self.control.as_ref()
    }

    fn advance(&self, x: &mut Vec<S>, u: usize, rng: &mut ChaCha12Rng) -> Result<()> {
        if self.lambda_max == S::zero() {
            return Ok(());
        }
        let mut clock = S::zero();
        loop {
            let draw = S::sample_unit(rng);
            clock = clock - (S::one() - draw).ln() / self.lambda_max;
            if clock > self.time_step {
                return Ok(());
            }
            let rate = (self.intensity)(x, u);
            if !(rate >= S::zero() && rate <= self.lambda_max) {
                return Err(MimicError::IntensityBound {
                    got: rate.format_full(),
                    max: self.lambda_max.format_full(),
                });
            }
            if S::sample_unit(rng) < rate / self.lambda_max {
                let next = (self.jump)(x, u, rng);
                if next.len() != self.dim {
                    return Err(MimicError::BadShape {
                        what: "jump destination",
                        got: next.len(),
                        want: self.dim,
                    });
                }
                *x = next;
            }
        }
    }
}

/// Realized sample paths on the grid, with the action taken at each step.
#[derive(Debug, Clone)]
pub struct Trajectories<S: Scalar> {
    dim: usize,
    steps: usize,
    n_paths: usize,
    n_actions: usize,
    time_step: S,
    /// Path-major: entry `((p * (steps + 1) + s) * dim + c)`.
    states: Vec<S>,
    /// Path-major: entry `p * steps + s`.
    actions: Vec<u16>,
}

impl<S: Scalar> Trajectories<S> {
    pub(crate) fn assemble(
        dim: usize,
        steps: usize,
        n_paths: usize,
        n_actions: usize,
        time_step: S,
        states: Vec<S>,
        actions: Vec<u16>,
    ) -> Self {
        debug_assert_eq!(states.len(), n_paths * (steps + 1) * dim);
        debug_assert_eq!(actions.len(), n_paths * steps);
        Trajectories {
            dim,
            steps,
            n_paths,
            n_actions,
            time_step,
            states,
            actions,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn time_step(&self) -> S {
        self.time_step
    }

    /// State of one path at one grid point (`step` ranges over `0..=steps`).
    pub fn state(&self, path: usize, step: usize) -> &[S] {
        let start = (path * (self.steps + 1) + step) * self.dim;
        &self.states[start..start + self.dim]
    }

    /// Action taken at the start of `step` (ranges over `0..steps`).
    pub fn action(&self, path: usize, step: usize) -> usize {
        self.actions[path * self.steps + step] as usize
    }

    #[cfg(test)]
    pub(crate) fn raw_states(&self) -> &[S] {
        &self.states
    }

    #[cfg(test)]
    pub(crate) fn raw_actions(&self) -> &[u16] {
        &self.actions
    }
}

/// Per-slice sorted marginal samples of a batch of simulated paths.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMarginals<S: Scalar> {
    dim: usize,
    n_paths: usize,
    slice_steps: Vec<usize>,
    slice_times: Vec<S>,
    /// Index `slice * dim + component`; each vector sorted ascending.
    samples: Vec<Vec<S>>,
}

impl<S: Scalar> EmpiricalMarginals<S> {
    /// Builds marginals from raw per-slice samples (sorted internally).
    /// Every slice must carry the same number of samples.
    pub fn from_samples(
        dim: usize,
        slice_steps: Vec<usize>,
        slice_times: Vec<S>,
        mut samples: Vec<Vec<S>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(MimicError::BadShape {
                what: "state dimension",
                got: 0,
                want: 1,
            });
        }
        if slice_steps.is_empty() || slice_times.len() != slice_steps.len() {
            return Err(MimicError::BadShape {
                what: "slice grid",
                got: slice_times.len(),
                want: slice_steps.len().max(1),
            });
        }
        if samples.len() != slice_steps.len() * dim {
            return Err(MimicError::BadShape {
                what: "slice samples",
                got: samples.len(),
                want: slice_steps.len() * dim,
            });
        }
        let n_paths = samples[0].len();
        if n_paths == 0 {
            return Err(MimicError::BadShape {
                what: "slice sample count",
                got: 0,
                want: 1,
            });
        }
        for block in &samples {
            if block.len() != n_paths {
                return Err(MimicError::BadShape {
                    what: "slice sample count",
                    got: block.len(),
                    want: n_paths,
                });
            }
        }
        for block in &mut samples {
            block.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        }
        Ok(EmpiricalMarginals {
            dim,
            n_paths,
            slice_steps,
            slice_times,
            samples,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn slice_steps(&self) -> &[usize] {
        &self.slice_steps
    }

    pub fn slice_times(&self) -> &[S] {
        &self.slice_times
    }

    /// Sorted samples of one component at one slice.
    pub fn samples(&self, slice: usize, component: usize) -> &[S] {
        &self.samples[slice * self.dim + component]
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.slice_steps == other.slice_steps
            && self
                .slice_times
                .iter()
                .zip(&other.slice_times)
                .all(|(a, b)| a == b)
    }
}

#[cfg(test)]
mod tests;
