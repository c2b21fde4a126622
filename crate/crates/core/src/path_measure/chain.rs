//! Time-inhomogeneous finite Markov chain models.

use ndarray::{Array1, Array2};

use crate::error::{MimicError, Result};
use crate::scalar::Scalar;
use crate::space::{ActionSpace, StateSpace};

use super::PathLaw;

fn check_distribution<S: Scalar>(what: &'static str, row: &[S]) -> Result<()> {
    if let Some(bad) = row.iter().find(|&&p| !(p >= S::zero())) {
        return Err(MimicError::BadDistribution {
            what,
            detail: format!("negative or non-finite entry {bad}"),
        });
    }
    let total: S = row.iter().copied().sum();
    if (total - S::one()).abs() > S::mass_tol() {
        return Err(MimicError::BadDistribution {
            what,
            detail: format!("row sums to {total}"),
        });
    }
    Ok(())
}

/// A Markov chain on a finite state space with one transition kernel per
/// time step and, optionally, a relaxed Markov control per time.
///
/// `kernels[t]` carries `P(X_{t+1} = y | X_t = x)`; `policy[t]` (when
/// present) carries `P(U_t = u | X_t = x)` for `t = 0 ..= horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChainModel<S: Scalar> {
    states: StateSpace,
    actions: Option<ActionSpace>,
    initial: Array1<S>,
    kernels: Vec<Array2<S>>,
    policy: Option<Vec<Array2<S>>>,
}

impl<S: Scalar> MarkovChainModel<S> {
    pub fn new(states: StateSpace, initial: Array1<S>, kernels: Vec<Array2<S>>) -> Result<Self> {
        Self::validate(states, None, initial, kernels, None)
    }

    pub fn with_policy(
        states: StateSpace,
        actions: ActionSpace,
        initial: Array1<S>,
        kernels: Vec<Array2<S>>,
        policy: Vec<Array2<S>>,
    ) -> Result<Self> {
        Self::validate(states, Some(actions), initial, kernels, Some(policy))
    }

    fn validate(
        states: StateSpace,
        actions: Option<ActionSpace>,
        initial: Array1<S>,
        kernels: Vec<Array2<S>>,
        policy: Option<Vec<Array2<S>>>,
    ) -> Result<Self> {
        let m = states.len();
        if initial.len() != m {
            return Err(MimicError::BadShape {
                what: "initial distribution",
                got: initial.len(),
                want: m,
            });
        }
        check_distribution("initial distribution", initial.as_slice().unwrap())?;
        for k in &kernels {
            if k.nrows() != m || k.ncols() != m {
                return Err(MimicError::BadShape {
                    what: "transition kernel",
                    got: k.nrows() * k.ncols(),
                    want: m * m,
                });
            }
            for x in 0..m {
                check_distribution("kernel row", k.row(x).as_slice().unwrap())?;
            }
        }
        match (&actions, &policy) {
            (None, None) => {}
            (Some(acts), Some(pol)) => {
                if pol.len() != kernels.len() + 1 {
                    return Err(MimicError::BadShape {
                        what: "policy list",
                        got: pol.len(),
                        want: kernels.len() + 1,
                    });
                }
                for p in pol {
                    if p.nrows() != m || p.ncols() != acts.len() {
                        return Err(MimicError::BadShape {
                            what: "policy table",
                            got: p.nrows() * p.ncols(),
                            want: m * acts.len(),
                        });
                    }
                    for x in 0..m {
                        check_distribution("policy row", p.row(x).as_slice().unwrap())?;
                    }
                }
            }
            _ => return Err(MimicError::SpaceMismatch),
        }
        Ok(MarkovChainModel {
            states,
            actions,
            initial,
            kernels,
            policy,
        })
    }

    /// Construction path for internally computed, already-normalized rows.
    pub(crate) fn assemble(
        states: StateSpace,
        actions: Option<ActionSpace>,
        initial: Array1<S>,
        kernels: Vec<Array2<S>>,
        policy: Option<Vec<Array2<S>>>,
    ) -> Self {
        Self::validate(states, actions, initial, kernels, policy)
            .expect("computed rows are normalized")
    }

    pub fn states(&self) -> &StateSpace {
        &self.states
    }

    pub fn actions(&self) -> Option<&ActionSpace> {
        self.actions.as_ref()
    }

    /// Number of transition steps the model covers.
    pub fn horizon(&self) -> usize {
        self.kernels.len()
    }

    pub fn initial(&self) -> &Array1<S> {
        &self.initial
    }

    pub fn kernels(&self) -> &[Array2<S>] {
        &self.kernels
    }

    pub fn kernel(&self, t: usize) -> &Array2<S> {
        &self.kernels[t]
    }

    pub fn policy(&self) -> Option<&[Array2<S>]> {
        self.policy.as_deref()
    }

    /// The path law the chain induces over `0..=horizon`.
    ///
    /// `horizon` may be at most the number of stored kernels. With a policy
    /// present, actions are drawn from the per-time relaxed control given the
    /// current state, so the result is a controlled law.
    pub fn law(&self, horizon: usize) -> Result<PathLaw<S>> {
        if horizon > self.kernels.len() {
            return Err(MimicError::TimeOutOfRange {
                t: horizon,
                max: self.kernels.len(),
            });
        }
        let actions = self.actions.clone();
        let num_actions = actions.as_ref().map_or(1, ActionSpace::len);
        let indexer = super::PathIndexer::new(self.states.len(), num_actions, horizon)?;
        let mut probs = vec![S::zero(); indexer.count()];
        for (idx, slot) in probs.iter_mut().enumerate() {
            let x0 = indexer.state_at(idx, 0);
            let mut p = self.initial[x0];
            if let Some(pol) = &self.policy {
                p = p * pol[0][[x0, indexer.action_at(idx, 0)]];
            }
            for t in 1..=horizon {
                if p == S::zero() {
                    break;
                }
                let (x_prev, x) = (indexer.state_at(idx, t - 1), indexer.state_at(idx, t));
                p = p * self.kernels[t - 1][[x_prev, x]];
                if let Some(pol) = &self.policy {
                    p = p * pol[t][[x, indexer.action_at(idx, t)]];
                }
            }
            *slot = p;
        }
        PathLaw::new(self.states.clone(), actions, horizon, probs)
    }
}
