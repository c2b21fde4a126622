//! Named fixtures and seeded random instance generators.
//!
//! The named fixtures are the worked examples used across the documentation,
//! the command-line pipelines, and the test suites. The seeded generators
//! produce reproducible random instances for sweep-style verification; they
//! always return the `f64` instantiation.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::entropy_min::MarginalConstraintSet;
use crate::occupation::{ChainControl, ControlledChain, InitialStateControl, SeededTableControl};
use crate::path_measure::{MarkovChainModel, PathIndexer, PathLaw};
use crate::sde::{DiffusionModel, JumpModel, ThresholdControl};
use crate::scalar::{kahan_sum, real, Scalar};
use crate::space::{ActionSpace, StateSpace};

/// Two-state law with horizon 2 whose endpoint copies the start: `X_0`
/// uniform, `X_1 = X_0 XOR coin`, `X_2 = X_0`. Every one-dimensional and
/// consecutive-pair marginal is uniform, yet time 1 is not a Markov point.
pub fn memory_chain<S: Scalar>() -> PathLaw<S> {
    let states = StateSpace::indexed(2).unwrap();
    let indexer = PathIndexer::new(2, 1, 2).unwrap();
    let mut probs = vec![S::zero(); indexer.count()];
    for x0 in 0..2 {
        for x1 in 0..2 {
            probs[indexer.encode_states(&[x0, x1, x0])] = real(0.25);
        }
    }
    PathLaw::new(states, None, 2, probs).unwrap()
}

/// Uniform product law: every length-`horizon` trajectory over `m` states is
/// equally likely.
pub fn product_uniform<S: Scalar>(m: usize, horizon: usize) -> PathLaw<S> {
    let states = StateSpace::indexed(m).unwrap();
    let indexer = PathIndexer::new(m, 1, horizon).unwrap();
    let p = S::one() / S::from_usize(indexer.count()).unwrap();
    PathLaw::new(states, None, horizon, vec![p; indexer.count()]).unwrap()
}

/// A two-state chain law (horizon 2) that is Markov by construction.
pub fn already_markov<S: Scalar>() -> PathLaw<S> {
    let states = StateSpace::indexed(2).unwrap();
    let initial = Array1::from(vec![real::<S>(0.6), real(0.4)]);
    let kernel = Array2::from_shape_vec(
        (2, 2),
        vec![real::<S>(0.7), real(0.3), real(0.2), real(0.8)],
    )
    .unwrap();
    MarkovChainModel::new(states, initial, vec![kernel.clone(), kernel])
        .unwrap()
        .law(2)
        .unwrap()
}

/// Lazy uniform walk: uniform start; each step stays put with probability
/// one half, otherwise moves to a uniformly chosen other state. Its law has
/// full support, which makes it a universal entropy reference.
pub fn lazy_uniform_walk<S: Scalar>(m: usize, horizon: usize) -> MarkovChainModel<S> {
    let states = StateSpace::indexed(m).unwrap();
    let uniform = S::one() / S::from_usize(m).unwrap();
    let initial = Array1::from(vec![uniform; m]);
    let mut kernel = Array2::zeros((m, m));
    if m == 1 {
        kernel[[0, 0]] = S::one();
    } else {
        let stay = real::<S>(0.5);
        let hop = stay / S::from_usize(m - 1).unwrap();
        for x in 0..m {
            for y in 0..m {
                kernel[[x, y]] = if x == y { stay } else { hop };
            }
        }
    }
    MarkovChainModel::new(states, initial, vec![kernel; horizon]).unwrap()
}

fn exp_sample(rng: &mut ChaCha12Rng) -> f64 {
    -(1.0 - rng.gen::<f64>()).ln()
}

/// Seeded random law on `m` states over `horizon` steps. `sparsity` is the
/// probability of zeroing each path weight, exercising zero-mass prefixes
/// and flagged kernel rows; the result is renormalized.
pub fn random_path_law(seed: u64, m: usize, horizon: usize, sparsity: f64) -> PathLaw<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let states = StateSpace::indexed(m).unwrap();
    let indexer = PathIndexer::new(m, 1, horizon).unwrap();
    let mut weights = vec![0.0; indexer.count()];
    for w in &mut weights {
        let keep = sparsity <= 0.0 || rng.gen::<f64>() >= sparsity;
        let draw = exp_sample(&mut rng);
        if keep {
            *w = draw;
        }
    }
    if weights.iter().all(|&w| w == 0.0) {
        weights[0] = 1.0;
    }
    let total = kahan_sum(weights.iter().copied());
    for w in &mut weights {
        *w /= total;
    }
    PathLaw::new(states, None, horizon, weights).unwrap()
}

/// Seeded random controlled law on `m` states and `a` actions.
pub fn random_controlled_path_law(seed: u64, m: usize, a: usize, horizon: usize) -> PathLaw<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x636f6e74726f6c);
    let states = StateSpace::indexed(m).unwrap();
    let actions = ActionSpace::indexed(a).unwrap();
    let indexer = PathIndexer::new(m, a, horizon).unwrap();
    let mut weights: Vec<f64> = (0..indexer.count()).map(|_| exp_sample(&mut rng)).collect();
    let total = kahan_sum(weights.iter().copied());
    for w in &mut weights {
        *w /= total;
    }
    PathLaw::new(states, Some(actions), horizon, weights).unwrap()
}

fn random_distribution(rng: &mut ChaCha12Rng, n: usize, floor: f64) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n).map(|_| floor + exp_sample(rng)).collect();
    let total = kahan_sum(row.iter().copied());
    for v in &mut row {
        *v /= total;
    }
    row
}

/// Seeded feasible constraint instance: a full-support Markov reference plus
/// marginal targets read off a random witness law at `picks` distinct times.
/// Returns the constraint set together with the witness, whose entropy
/// against the reference upper-bounds the constrained minimum.
pub fn random_constraint_instance(
    seed: u64,
    m: usize,
    horizon: usize,
    picks: usize,
) -> (MarginalConstraintSet<f64>, PathLaw<f64>) {
    let reference = random_markov_chain(seed, m, horizon).law(horizon).unwrap();
    let witness = random_path_law(seed ^ 0x7769746e, m, horizon, 0.0);
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x74696d65);
    let mut times: Vec<usize> = (0..=horizon).collect();
    for i in (1..times.len()).rev() {
        let j = rng.gen_range(0..=i);
        times.swap(i, j);
    }
    times.truncate(picks.clamp(1, horizon + 1));
    times.sort_unstable();
    let constraints = times
        .into_iter()
        .map(|t| (t, witness.marginal(t).unwrap()))
        .collect();
    let set = MarginalConstraintSet::new(reference, constraints)
        .expect("full-support reference admits any witness marginals");
    (set, witness)
}

/// Seeded random time-inhomogeneous Markov chain with entries bounded away
/// from zero, so its law has full support.
pub fn random_markov_chain(seed: u64, m: usize, horizon: usize) -> MarkovChainModel<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x636861696e);
    let states = StateSpace::indexed(m).unwrap();
    let initial = Array1::from(random_distribution(&mut rng, m, 0.05));
    let kernels = (0..horizon)
        .map(|_| {
            let mut k = Array2::zeros((m, m));
            for x in 0..m {
                for (y, v) in random_distribution(&mut rng, m, 0.05).into_iter().enumerate() {
                    k[[x, y]] = v;
                }
            }
            k
        })
        .collect();
    MarkovChainModel::new(states, initial, kernels).unwrap()
}

/// Two-state, two-action chain driven by the initial-state control: the
/// action is pinned to X_0 forever, so the policy is history dependent but
/// conditionally deterministic given the first coordinate.
pub fn fixture_hd() -> ControlledChain<f64> {
    let dynamics = ndarray::array![
        // action 0 rows, then action 1 rows, interleaved per state
        [0.9, 0.1], // (x=0, u=0)
        [0.3, 0.7], // (x=0, u=1)
        [0.2, 0.8], // (x=1, u=0)
        [0.6, 0.4], // (x=1, u=1)
    ];
    ControlledChain::new(
        StateSpace::indexed(2).unwrap(),
        ActionSpace::indexed(2).unwrap(),
        Array1::from(vec![0.5, 0.5]),
        dynamics,
        ChainControl::History(Arc::new(InitialStateControl::new(2, 2))),
    )
    .unwrap()
}

/// Seeded controlled chain with full-support initial law and dynamics,
/// driven by a seeded table control (history dependent through X_0 and
/// periodically nonstationary).
pub fn random_controlled_chain(seed: u64, m: usize, a: usize) -> ControlledChain<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x6374726c6368);
    let initial = Array1::from(random_distribution(&mut rng, m, 0.05));
    let mut dynamics = Array2::zeros((m * a, m));
    for row in 0..m * a {
        for (y, v) in random_distribution(&mut rng, m, 0.05).into_iter().enumerate() {
            dynamics[[row, y]] = v;
        }
    }
    let period = 1 + (seed % 3) as usize;
    let control = SeededTableControl::new(seed, m, a, period);
    ControlledChain::new(
        StateSpace::indexed(m).unwrap(),
        ActionSpace::indexed(a).unwrap(),
        initial,
        dynamics,
        ChainControl::History(Arc::new(control)),
    )
    .unwrap()
}

/// Seeded cost table on state-action pairs, entries in `[0, 1)`.
pub fn random_cost(seed: u64, m: usize, a: usize) -> Array2<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x636f7374);
    Array2::from_shape_fn((m, a), |_| rng.gen())
}

/// Headline diffusion experiment: scalar Brownian motion that gains drift
/// 1.2 once its running maximum exceeds 0.5. The control is a functional of
/// the whole path, yet a binned estimate of P(crossed | current state)
/// reproduces all one-dimensional marginals.
pub fn running_max_diffusion() -> DiffusionModel<f64> {
    running_max_diffusion_grid(1.0 / 256.0, 1.0)
}

/// Same model on a caller-chosen time grid.
pub fn running_max_diffusion_grid(dt: f64, horizon: f64) -> DiffusionModel<f64> {
    let control = ThresholdControl::on_running_max(
        0,
        0.5,
        Array1::from(vec![1.0, 0.0]),
        Array1::from(vec![0.0, 1.0]),
    )
    .unwrap();
    DiffusionModel::new(
        1,
        ActionSpace::indexed(2).unwrap(),
        |_x, u| vec![if u == 1 { 1.2 } else { 0.0 }],
        1.3,
        |_x| ndarray::array![[1.0]],
        Arc::new(control),
        |_rng| vec![0.0],
        dt,
        horizon,
    )
    .unwrap()
}

/// Jump analog of the running-maximum experiment: a birth-death walk on the
/// integer lattice that switches from an upward-biased slow clock to a
/// downward-biased fast clock once the path has reached level 2.
pub fn birth_death_jump() -> JumpModel<f64> {
    birth_death_jump_grid(1.0 / 128.0, 1.0)
}

/// Same model on a caller-chosen time grid.
pub fn birth_death_jump_grid(dt: f64, horizon: f64) -> JumpModel<f64> {
    let control = ThresholdControl::on_running_max(
        0,
        1.5,
        Array1::from(vec![1.0, 0.0]),
        Array1::from(vec![0.0, 1.0]),
    )
    .unwrap();
    JumpModel::new(
        1,
        ActionSpace::indexed(2).unwrap(),
        |_x, u| if u == 1 { 9.0 } else { 4.0 },
        9.0,
        |x, u, rng| {
            let up = if u == 1 { 0.4 } else { 0.7 };
            let dir = if rng.gen::<f64>() < up { 1.0 } else { -1.0 };
            vec![x[0] + dir]
        },
        Arc::new(control),
        |_rng| vec![0.0],
        dt,
        horizon,
    )
    .unwrap()
}
