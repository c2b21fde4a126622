//! Dense probability laws on finite path spaces.
//!
//! A [`PathLaw`] stores one probability per trajectory
//! `(x_0, u_0, x_1, u_1, ..., x_T, u_T)` over `T + 1` time slots, with the
//! action coordinates present only when the law is controlled. Everything
//! here is exact enumeration: marginals, consecutive-pair marginals,
//! conditional transition kernels, the Markov chain that mimics the law's
//! marginals, relative entropy, likelihood ratios, and markovianization at a
//! fixed time.

mod chain;
mod entropy;
mod markov;

pub use chain::MarkovChainModel;
pub(crate) use entropy::check_same_space;
pub use entropy::{radon_nikodym, relative_entropy, LikelihoodRatio};
pub use markov::{
    is_markov_law, is_markov_point, markovianize, verify_markovianized_density, DensityCheck,
    MarkovCheck,
};

use ndarray::{Array1, Array2};

use crate::error::{MimicError, Result};
use crate::scalar::Scalar;
use crate::space::{ActionSpace, StateSpace};

/// Hard cap on dense path-table sizes.
pub const PATH_TABLE_CAP: u64 = 10_000_000;

/// Mixed-radix addressing for dense path tables.
///
/// A trajectory occupies `horizon + 1` slots; each slot holds a state index
/// and, for controlled laws, an action index. Slot `t = 0` is the most
/// significant digit, so a path index splits into (prefix, suffix) by plain
/// division.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathIndexer {
    num_states: usize,
    num_actions: usize, // 1 when uncontrolled
    horizon: usize,
}

impl PathIndexer {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize) -> Result<Self> {
        assert!(num_states > 0 && num_actions > 0);
        let base = (num_states as u128) * (num_actions as u128);
        let mut size: u128 = 1;
        for _ in 0..=horizon {
            size = size.saturating_mul(base);
            if size > PATH_TABLE_CAP as u128 {
                return Err(MimicError::PathSpaceTooLarge {
                    size,
                    cap: PATH_TABLE_CAP,
                });
            }
        }
        Ok(PathIndexer {
            num_states,
            num_actions,
            horizon,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn base(&self) -> usize {
        self.num_states * self.num_actions
    }

    /// Total number of trajectories.
    pub fn count(&self) -> usize {
        self.base().pow(self.horizon as u32 + 1)
    }

    /// Number of distinct prefixes over times `0..=t`.
    pub fn prefix_count(&self, t: usize) -> usize {
        self.base().pow(t as u32 + 1)
    }

    /// Number of distinct suffixes over times `t+1..=horizon`.
    pub fn suffix_count(&self, t: usize) -> usize {
        self.base().pow((self.horizon - t) as u32)
    }

    fn slot(&self, idx: usize, t: usize) -> usize {
        debug_assert!(t <= self.horizon);
        (idx / self.suffix_count(t)) % self.base()
    }

    pub fn state_at(&self, idx: usize, t: usize) -> usize {
        self.slot(idx, t) / self.num_actions
    }

    pub fn action_at(&self, idx: usize, t: usize) -> usize {
        self.slot(idx, t) % self.num_actions
    }

    /// Splits a path index into its prefix over `0..=t` and suffix over
    /// `t+1..=horizon`.
    pub fn split(&self, idx: usize, t: usize) -> (usize, usize) {
        let q = self.suffix_count(t);
        (idx / q, idx % q)
    }

    pub fn encode(&self, states: &[usize], actions: &[usize]) -> usize {
        assert_eq!(states.len(), self.horizon + 1);
        if self.num_actions > 1 {
            assert_eq!(actions.len(), self.horizon + 1);
        }
        let mut idx = 0;
        for t in 0..=self.horizon {
            let u = if self.num_actions > 1 { actions[t] } else { 0 };
            debug_assert!(states[t] < self.num_states && u < self.num_actions);
            idx = idx * self.base() + states[t] * self.num_actions + u;
        }
        idx
    }

    pub fn encode_states(&self, states: &[usize]) -> usize {
        self.encode(states, &[])
    }
}

/// A probability law on a finite path space, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct PathLaw<S: Scalar> {
    states: StateSpace,
    actions: Option<ActionSpace>,
    indexer: PathIndexer,
    probs: Vec<S>,
}

/// Conditional transition matrix estimated from a law at one time step.
///
/// `flagged` lists states with zero marginal mass at the source time; their
/// rows are set to the uniform distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate<S: Scalar> {
    pub matrix: Array2<S>,
    pub flagged: Vec<usize>,
}

impl<S: Scalar> PathLaw<S> {
    /// Builds a law from a dense probability table in [`PathIndexer`] order.
    ///
    /// The table must hold at most [`PATH_TABLE_CAP`] entries, every entry
    /// must be nonnegative, and the total mass must be 1 within
    /// [`Scalar::mass_tol`].
    pub fn new(
        states: StateSpace,
        actions: Option<ActionSpace>,
        horizon: usize,
        probs: Vec<S>,
    ) -> Result<Self> {
        let num_actions = actions.as_ref().map_or(1, ActionSpace::len);
        let indexer = PathIndexer::new(states.len(), num_actions, horizon)?;
        if probs.len() != indexer.count() {
            return Err(MimicError::BadShape {
                what: "path table",
                got: probs.len(),
                want: indexer.count(),
            });
        }
        if let Some(bad) = probs.iter().find(|&&p| !(p >= S::zero())) {
            return Err(MimicError::BadDistribution {
                what: "path table",
                detail: format!("negative or non-finite entry {bad}"),
            });
        }
        let total = crate::scalar::kahan_sum(probs.iter().copied());
        if (total - S::one()).abs() > S::mass_tol() {
            return Err(MimicError::BadDistribution {
                what: "path table",
                detail: format!("total mass {total}"),
            });
        }
        Ok(PathLaw {
            states,
            actions,
            indexer,
            probs,
        })
    }

    pub fn uncontrolled(states: StateSpace, horizon: usize, probs: Vec<S>) -> Result<Self> {
        Self::new(states, None, horizon, probs)
    }

    pub fn states(&self) -> &StateSpace {
        &self.states
    }

    pub fn actions(&self) -> Option<&ActionSpace> {
        self.actions.as_ref()
    }

    pub fn is_controlled(&self) -> bool {
        self.actions.is_some()
    }

    pub fn horizon(&self) -> usize {
        self.indexer.horizon()
    }

    pub fn indexer(&self) -> &PathIndexer {
        &self.indexer
    }

    pub fn num_paths(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, idx: usize) -> S {
        self.probs[idx]
    }

    pub fn probs(&self) -> &[S] {
        &self.probs
    }

    /// Human-readable `x_0 x_1 ...` (or `x_0/u_0 ...`) rendering of a path.
    pub fn path_label(&self, idx: usize) -> String {
        let mut parts = Vec::with_capacity(self.horizon() + 1);
        for t in 0..=self.horizon() {
            let x = self.states.label(self.indexer.state_at(idx, t));
            match &self.actions {
                Some(acts) => {
                    let u = acts.label(self.indexer.action_at(idx, t));
                    parts.push(format!("{x}/{u}"));
                }
                None => parts.push(x.to_string()),
            }
        }
        parts.join(" ")
    }

    fn check_time(&self, t: usize, max: usize) -> Result<()> {
        if t > max || self.horizon() < max {
            return Err(MimicError::TimeOutOfRange {
                t,
                max: max.min(self.horizon()),
            });
        }
        Ok(())
    }

    /// One-dimensional state marginal at time `t`.
    pub fn marginal(&self, t: usize) -> Result<Array1<S>> {
        self.check_time(t, self.horizon())?;
        let m = self.states.len();
        let a = self.indexer.num_actions;
        let b = self.indexer.base();
        let stride = self.indexer.suffix_count(t);
        let mut out = Array1::zeros(m);
        for (idx, &p) in self.probs.iter().enumerate() {
            let x = (idx / stride) % b / a;
            out[x] = out[x] + p;
        }
        Ok(out)
    }

    /// Joint marginal of `(X_t, X_{t+1})`; requires `t < horizon`.
    pub fn pair_marginal(&self, t: usize) -> Result<Array2<S>> {
        if self.horizon() == 0 {
            return Err(MimicError::TimeOutOfRange { t, max: 0 });
        }
        self.check_time(t, self.horizon() - 1)?;
        let m = self.states.len();
        let a = self.indexer.num_actions;
        let b = self.indexer.base();
        let stride_next = self.indexer.suffix_count(t + 1);
        let stride = stride_next * b;
        let mut out = Array2::zeros((m, m));
        for (idx, &p) in self.probs.iter().enumerate() {
            let x = (idx / stride) % b / a;
            let y = (idx / stride_next) % b / a;
            out[[x, y]] = out[[x, y]] + p;
        }
        Ok(out)
    }

    /// Joint marginal of `(X_t, U_t)` for controlled laws.
    pub fn state_action_marginal(&self, t: usize) -> Result<Array2<S>> {
        if self.actions.is_none() {
            return Err(MimicError::ControlledLaw);
        }
        self.check_time(t, self.horizon())?;
        let m = self.states.len();
        let a = self.indexer.num_actions;
        let b = self.indexer.base();
        let stride = self.indexer.suffix_count(t);
        let mut out = Array2::zeros((m, a));
        for (idx, &p) in self.probs.iter().enumerate() {
            let slot = (idx / stride) % b;
            out[[slot / a, slot % a]] = out[[slot / a, slot % a]] + p;
        }
        Ok(out)
    }

    /// Conditional transition kernel `P(X_{t+1} = y | X_t = x)`.
    ///
    /// States with zero marginal mass at `t` get a uniform row and are listed
    /// in [`KernelEstimate::flagged`].
    pub fn transition_kernel(&self, t: usize) -> Result<KernelEstimate<S>> {
        let pair = self.pair_marginal(t)?;
        let m = self.states.len();
        let uniform = S::one() / S::from_usize(m).unwrap();
        let mut matrix = Array2::zeros((m, m));
        let mut flagged = Vec::new();
        for x in 0..m {
            let mass = pair.row(x).sum();
            if mass == S::zero() {
                flagged.push(x);
                for y in 0..m {
                    matrix[[x, y]] = uniform;
                }
            } else {
                for y in 0..m {
                    matrix[[x, y]] = pair[[x, y]] / mass;
                }
            }
        }
        Ok(KernelEstimate { matrix, flagged })
    }

    /// Relaxed control observed at time `t`: rows `P(U_t = u | X_t = x)`,
    /// uniform (and flagged) at states with zero mass.
    pub fn control_kernel(&self, t: usize) -> Result<KernelEstimate<S>> {
        let joint = self.state_action_marginal(t)?;
        let m = self.states.len();
        let a = self.indexer.num_actions;
        let uniform = S::one() / S::from_usize(a).unwrap();
        let mut matrix = Array2::zeros((m, a));
        let mut flagged = Vec::new();
        for x in 0..m {
            let mass = joint.row(x).sum();
            if mass == S::zero() {
                flagged.push(x);
                for u in 0..a {
                    matrix[[x, u]] = uniform;
                }
            } else {
                for u in 0..a {
                    matrix[[x, u]] = joint[[x, u]] / mass;
                }
            }
        }
        Ok(KernelEstimate { matrix, flagged })
    }

    /// The Markov chain sharing this law's initial distribution, one-step
    /// conditional kernels, and (for controlled laws) per-time relaxed
    /// controls. Its law matches every one-dimensional marginal and every
    /// consecutive-pair marginal of `self`.
    pub fn markov_mimic(&self) -> MarkovChainModel<S> {
        let initial = self.marginal(0).expect("t = 0 is always valid");
        let kernels: Vec<Array2<S>> = (0..self.horizon())
            .map(|t| self.transition_kernel(t).expect("t < horizon").matrix)
            .collect();
        let policy = self.actions.as_ref().map(|_| {
            (0..=self.horizon())
                .map(|t| self.control_kernel(t).expect("t <= horizon").matrix)
                .collect()
        });
        MarkovChainModel::assemble(
            self.states.clone(),
            self.actions.clone(),
            initial,
            kernels,
            policy,
        )
    }

    /// Restriction of the law to times `0..=t` (marginal law of the prefix).
    pub fn restriction(&self, t: usize) -> Result<PathLaw<S>> {
        self.check_time(t, self.horizon())?;
        let q = self.indexer.suffix_count(t);
        let prefixes = self.indexer.prefix_count(t);
        let mut probs = vec![S::zero(); prefixes];
        for (idx, &p) in self.probs.iter().enumerate() {
            probs[idx / q] = probs[idx / q] + p;
        }
        PathLaw::new(self.states.clone(), self.actions.clone(), t, probs)
    }

    /// Forgets actions, returning the law of the state trajectory alone.
    pub fn state_law(&self) -> PathLaw<S> {
        if self.actions.is_none() {
            return self.clone();
        }
        let t_len = self.horizon() + 1;
        let m = self.states.len();
        let target = PathIndexer::new(m, 1, self.horizon()).expect("smaller table fits");
        let mut probs = vec![S::zero(); target.count()];
        for (idx, &p) in self.probs.iter().enumerate() {
            if p == S::zero() {
                continue;
            }
            let mut sidx = 0;
            for t in 0..t_len {
                sidx = sidx * m + self.indexer.state_at(idx, t);
            }
            probs[sidx] = probs[sidx] + p;
        }
        PathLaw::new(self.states.clone(), None, self.horizon(), probs)
            .expect("marginalizing preserves total mass")
    }
}
