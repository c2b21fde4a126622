//! Path simulation engine shared by the original process and its mimic.
//!
//! Each path owns RNG stream `domain << 48 | path_index` of a ChaCha
//! generator keyed by the seed, so the sampled trajectories are a pure
//! function of (model, seed, path index) and never of thread count or
//! scheduling. The mimic uses a different stream domain: running it at the
//! same seed as the original still produces independent randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{MimicError, Result};
use crate::scalar::Scalar;

use super::project::ProjectedPolicy;
use super::{EmpiricalMarginals, SdeProcess, Trajectories, DEFAULT_SLICES};

const ORIGINAL_DOMAIN: u64 = 0;
const MIMIC_DOMAIN: u64 = 1 << 48;

/// Knobs for a simulation batch. `threads == 0` picks the machine default;
/// `slices` is the number of evenly spaced marginal slices recorded.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub threads: usize,
    pub slices: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            threads: 0,
            slices: DEFAULT_SLICES,
        }
    }
}

/// Result of simulating the original model: full trajectories (needed to
/// estimate the projected policy) plus marginal samples.
#[derive(Debug, Clone)]
pub struct SimulationRun<S: Scalar> {
    pub trajectories: Trajectories<S>,
    pub marginals: EmpiricalMarginals<S>,
}

/// Result of simulating under a projected policy. `clamped` counts lookup
/// states that escaped every bin and were clamped to the nearest one.
#[derive(Debug, Clone)]
pub struct MimicRun<S: Scalar> {
    pub marginals: EmpiricalMarginals<S>,
    pub clamped: u64,
}

pub fn simulate<S: Scalar, M: SdeProcess<S>>(
    model: &M,
    n_paths: usize,
    seed: u64,
) -> Result<SimulationRun<S>> {
    simulate_opts(model, n_paths, seed, SimOptions::default())
}

pub fn simulate_opts<S: Scalar, M: SdeProcess<S>>(
    model: &M,
    n_paths: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<SimulationRun<S>> {
    let out = run_engine(model, ControlMode::Functional, n_paths, seed, &opts, true)?;
    let trajectories = Trajectories::assemble(
        model.dim(),
        model.steps(),
        n_paths,
        model.actions().len(),
        model.time_step(),
        out.states,
        out.actions,
    );
    Ok(SimulationRun {
        trajectories,
        marginals: out.marginals,
    })
}

pub fn simulate_mimic<S: Scalar, M: SdeProcess<S>>(
    model: &M,
    policy: &ProjectedPolicy<S>,
    n_paths: usize,
    seed: u64,
) -> Result<MimicRun<S>> {
    simulate_mimic_opts(model, policy, n_paths, seed, SimOptions::default())
}

pub fn simulate_mimic_opts<S: Scalar, M: SdeProcess<S>>(
    model: &M,
    policy: &ProjectedPolicy<S>,
    n_paths: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<MimicRun<S>> {
    if policy.steps() != model.steps()
        || policy.n_actions() != model.actions().len()
        || policy.dim() != model.dim()
    {
        return Err(MimicError::GridMismatch);
    }
    let out = run_engine(
        model,
        ControlMode::Table(policy),
        n_paths,
        seed,
        &opts,
        false,
    )?;
    Ok(MimicRun {
        marginals: out.marginals,
        clamped: out.clamped,
    })
}

#[derive(Clone, Copy)]
enum ControlMode<'a, S: Scalar> {
    /// The model's own path control.
    Functional,
    /// Table lookup in a projected policy.
    Table(&'a ProjectedPolicy<S>),
}

struct EngineOutput<S: Scalar> {
    states: Vec<S>,
    actions: Vec<u16>,
    marginals: EmpiricalMarginals<S>,
    clamped: u64,
}

struct WorkerOutput<S: Scalar> {
    states: Vec<S>,
    actions: Vec<u16>,
    slices: Vec<Vec<S>>,
    clamped: u64,
}

fn resolve_slice_steps(steps: usize, slices: usize) -> Vec<usize> {
    let slices = slices.max(1);
    let mut out: Vec<usize> = (1..=slices).map(|j| j * steps / slices).collect();
    out.dedup();
    out.retain(|&s| s > 0);
    out
}

fn run_engine<S: Scalar, M: SdeProcess<S>>(
    model: &M,
    mode: ControlMode<'_, S>,
    n_paths: usize,
    seed: u64,
    opts: &SimOptions,
    keep_paths: bool,
) -> Result<EngineOutput<S>> {
    if n_paths == 0 {
        return Err(MimicError::BadShape {
            what: "path count",
            got: 0,
            want: 1,
        });
    }
    let steps = model.steps();
    let dim = model.dim();
    let slice_steps = resolve_slice_steps(steps, opts.slices);
    let threads = if opts.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        opts.threads
    }
    .min(n_paths)
    .max(1);

    let domain = match mode {
        ControlMode::Functional => ORIGINAL_DOMAIN,
        ControlMode::Table(_) => MIMIC_DOMAIN,
    };

    let chunk = n_paths.div_ceil(threads);
    let ranges: Vec<(usize, usize)> = (0..threads)
        .map(|t| (t * chunk, ((t + 1) * chunk).min(n_paths)))
        .filter(|(lo, hi)| lo < hi)
        .collect();

    let worker = |lo: usize, hi: usize| -> Result<WorkerOutput<S>> {
        let local = hi - lo;
        let mut states = if keep_paths {
            Vec::with_capacity(local * (steps + 1) * dim)
        } else {
            Vec::new()
        };
        let mut actions = Vec::with_capacity(local * steps);
        let mut slices: Vec<Vec<S>> =
            vec![Vec::with_capacity(local); slice_steps.len() * dim];
        let mut clamped = 0u64;
        let n_actions = model.actions().len();
        for path in lo..hi {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(domain | path as u64);
            let mut x = model.draw_initial(&mut rng);
            if x.len() != dim {
                return Err(MimicError::BadShape {
                    what: "initial sample",
                    got: x.len(),
                    want: dim,
                });
            }
            let mut summary = match mode {
                ControlMode::Functional => model.control().summary_init(&x),
                ControlMode::Table(_) => Vec::new(),
            };
            if keep_paths {
                states.extend_from_slice(&x);
            }
            let mut cursor = 0;
            for step in 0..steps {
                let u = match mode {
                    ControlMode::Functional => {
                        let law = model.control().action_law(&summary, &x, step);
                        if law.len() != n_actions {
                            return Err(MimicError::BadShape {
                                what: "control law",
                                got: law.len(),
                                want: n_actions,
                            });
                        }
                        sample_action(law.iter().copied(), &mut rng)
                    }
                    ControlMode::Table(policy) => {
                        let (law, escaped) = policy.action_law_at(step, x[0]);
                        if escaped {
                            clamped += 1;
                        }
                        sample_action(law.iter().copied(), &mut rng)
                    }
                };
                actions.push(u as u16);
                model.advance(&mut x, u, &mut rng)?;
                if keep_paths {
                    states.extend_from_slice(&x);
                }
                if let ControlMode::Functional = mode {
                    model.control().summary_update(&mut summary, &x, step + 1);
                }
                while cursor < slice_steps.len() && slice_steps[cursor] == step + 1 {
                    for (c, &v) in x.iter().enumerate() {
                        slices[cursor * dim + c].push(v);
                    }
                    cursor += 1;
                }
            }
        }
        Ok(WorkerOutput {
            states,
            actions,
            slices,
            clamped,
        })
    };

    let results: Vec<Result<WorkerOutput<S>>> = if ranges.len() == 1 {
        vec![worker(ranges[0].0, ranges[0].1)]
    } else {
        let worker = &worker;
        std::thread::scope(|scope| {
            let handles: Vec<_> = ranges
                .iter()
                .map(|&(lo, hi)| scope.spawn(move || worker(lo, hi)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("simulation worker panicked"))
                .collect()
        })
    };

    let mut states = Vec::with_capacity(if keep_paths {
        n_paths * (steps + 1) * dim
    } else {
        0
    });
    let mut actions = Vec::with_capacity(n_paths * steps);
    let mut merged: Vec<Vec<S>> = vec![Vec::with_capacity(n_paths); slice_steps.len() * dim];
    let mut clamped = 0u64;
    // Chunks are merged in path order, so output is thread-count independent.
    for result in results {
        let part = result?;
        states.extend_from_slice(&part.states);
        actions.extend_from_slice(&part.actions);
        for (dst, src) in merged.iter_mut().zip(part.slices) {
            dst.extend(src);
        }
        clamped += part.clamped;
    }

    let dt = model.time_step();
    let slice_times: Vec<S> = slice_steps
        .iter()
        .map(|&s| dt * S::from_usize(s).unwrap())
        .collect();
    let marginals = EmpiricalMarginals::from_samples(dim, slice_steps, slice_times, merged)?;
    Ok(EngineOutput {
        states,
        actions,
        marginals,
        clamped,
    })
}

/// Inverse-CDF draw; rounding shortfall falls through to the last action.
fn sample_action<S: Scalar>(law: impl Iterator<Item = S>, rng: &mut ChaCha12Rng) -> usize {
    let r = S::sample_unit(rng);
    let mut acc = S::zero();
    let mut last = 0;
    for (u, w) in law.enumerate() {
        acc = acc + w;
        if r < acc {
            return u;
        }
        last = u;
    }
    last
}
