//! Discounted occupation measures of controlled finite chains.
//!
//! For a controlled chain and discount `β ∈ (0,1)` the occupation measure is
//! `μ(x,u) = (1−β) Σ_n β^n P(X_n = x, U_n = u)`. Disintegrating μ into its
//! state marginal η and conditional action law gives a stationary relaxed
//! policy; the chain run under that policy has exactly the same occupation
//! measure, and the discounted value of any cost can be recovered from a
//! resolvent solve against the stationary policy alone.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::error::{MimicError, Result};
use crate::linalg::solve;
use crate::path_measure::PATH_TABLE_CAP;
use crate::scalar::{kahan_sum, Scalar};
use crate::space::{ActionSpace, StateSpace};

/// History-dependent control with a finite sufficient statistic.
///
/// The control may depend on the whole past only through a running summary:
/// the summary starts from the initial state, is updated along each
/// transition, and the action law at step `n` reads `(summary, state, n)`.
/// Any control with finitely many internal states fits; this is what makes
/// exact occupation sums possible at horizons where raw path enumeration
/// is astronomically large.
pub trait SummarizedControl<S: Scalar>: Send + Sync {
    fn summary_count(&self) -> usize;
    fn initial_summary(&self, x0: usize) -> usize;
    fn next_summary(&self, summary: usize, x: usize, u: usize, next_x: usize, step: usize)
        -> usize;
    /// Probability vector over actions given the summary and current state.
    fn action_law(&self, summary: usize, x: usize, step: usize) -> Array1<S>;
}

/// Control attached to a [`ControlledChain`].
#[derive(Clone)]
pub enum ChainControl<S: Scalar> {
    /// Stationary relaxed policy: row `x` is the action law at state `x`.
    Stationary(Array2<S>),
    History(Arc<dyn SummarizedControl<S>>),
}

impl<S: Scalar> fmt::Debug for ChainControl<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainControl::Stationary(policy) => {
                f.debug_tuple("Stationary").field(policy).finish()
            }
            ChainControl::History(ctrl) => f
                .debug_tuple("History")
                .field(&ctrl.summary_count())
                .finish(),
        }
    }
}

/// Finite controlled chain: initial distribution, per-(state, action)
/// transition rows, and a control.
#[derive(Debug, Clone)]
pub struct ControlledChain<S: Scalar> {
    states: StateSpace,
    actions: ActionSpace,
    initial: Array1<S>,
    /// `(m·a) × m`; row `x·a + u` is the next-state law from `(x, u)`.
    dynamics: Array2<S>,
    control: ChainControl<S>,
}

fn check_row<S: Scalar>(what: &'static str, row: ndarray::ArrayView1<S>) -> Result<()> {
    if let Some(bad) = row.iter().find(|&&v| !(v >= S::zero())) {
        return Err(MimicError::BadDistribution {
            what,
            detail: format!("negative or non-finite entry {bad}"),
        });
    }
    let total = kahan_sum(row.iter().copied());
    if (total - S::one()).abs() > S::mass_tol() {
        return Err(MimicError::BadDistribution {
            what,
            detail: format!("total mass {total}"),
        });
    }
    Ok(())
}

impl<S: Scalar> ControlledChain<S> {
    pub fn new(
        states: StateSpace,
        actions: ActionSpace,
        initial: Array1<S>,
        dynamics: Array2<S>,
        control: ChainControl<S>,
    ) -> Result<Self> {
        let m = states.len();
        let a = actions.len();
        if initial.len() != m {
            return Err(MimicError::BadShape {
                what: "initial distribution",
                got: initial.len(),
                want: m,
            });
        }
        check_row("initial distribution", initial.view())?;
        if dynamics.shape() != [m * a, m] {
            return Err(MimicError::BadShape {
                what: "dynamics table",
                got: dynamics.len(),
                want: m * a * m,
            });
        }
        for row in dynamics.rows() {
            check_row("dynamics row", row)?;
        }
        if let ChainControl::Stationary(policy) = &control {
            if policy.shape() != [m, a] {
                return Err(MimicError::BadShape {
                    what: "stationary policy",
                    got: policy.len(),
                    want: m * a,
                });
            }
            for row in policy.rows() {
                check_row("policy row", row)?;
            }
        }
        Ok(ControlledChain {
            states,
            actions,
            initial,
            dynamics,
            control,
        })
    }

    pub fn states(&self) -> &StateSpace {
        &self.states
    }

    pub fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn initial(&self) -> &Array1<S> {
        &self.initial
    }

    pub fn dynamics(&self) -> &Array2<S> {
        &self.dynamics
    }

    pub fn control(&self) -> &ChainControl<S> {
        &self.control
    }

    /// Next-state law from `(x, u)`.
    pub fn transition_row(&self, x: usize, u: usize) -> ndarray::ArrayView1<'_, S> {
        self.dynamics.row(x * self.actions.len() + u)
    }

    /// State-to-state kernel under a stationary relaxed policy.
    fn policy_kernel(&self, policy: &Array2<S>) -> Array2<S> {
        let m = self.states.len();
        let a = self.actions.len();
        let mut kernel = Array2::zeros((m, m));
        for x in 0..m {
            for u in 0..a {
                let w = policy[[x, u]];
                if w == S::zero() {
                    continue;
                }
                for y in 0..m {
                    kernel[[x, y]] = kernel[[x, y]] + w * self.dynamics[[x * a + u, y]];
                }
            }
        }
        kernel
    }
}

/// Discounted occupation measure and its disintegration.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationMeasure<S: Scalar> {
    pub beta: S,
    /// `μ(x, u)`, an `m × a` probability table.
    pub joint: Array2<S>,
    /// State marginal `η(x) = Σ_u μ(x, u)`.
    pub eta: Array1<S>,
    /// Disintegration `μ(x, ·) / η(x)`; uniform rows at flagged states.
    pub policy: Array2<S>,
    /// States with zero occupation mass (their policy rows are uniform).
    pub flagged: Vec<usize>,
}

fn check_beta<S: Scalar>(beta: S) -> Result<()> {
    if !(beta > S::zero() && beta < S::one()) {
        return Err(MimicError::BadDiscount {
            beta: beta.format_full(),
        });
    }
    Ok(())
}

fn disintegrate<S: Scalar>(beta: S, joint: Array2<S>) -> OccupationMeasure<S> {
    let (m, a) = joint.dim();
    let uniform = S::one() / S::from_usize(a).unwrap();
    let mut eta = Array1::zeros(m);
    let mut policy = Array2::zeros((m, a));
    let mut flagged = Vec::new();
    for x in 0..m {
        eta[x] = kahan_sum(joint.row(x).iter().copied());
        if eta[x] > S::zero() {
            for u in 0..a {
                policy[[x, u]] = joint[[x, u]] / eta[x];
            }
        } else {
            flagged.push(x);
            for u in 0..a {
                policy[[x, u]] = uniform;
            }
        }
    }
    OccupationMeasure {
        beta,
        joint,
        eta,
        policy,
        flagged,
    }
}

/// Number of steps until the discount tail drops below `horizon_tol`.
fn truncation_horizon<S: Scalar>(beta: S, horizon_tol: S) -> usize {
    let steps = (horizon_tol.ln() / beta.ln()).ceil();
    steps.to_usize().unwrap_or(1).max(1)
}

/// Occupation measure `μ(x,u) = (1−β) Σ_n β^n P(X_n = x, U_n = u)`.
///
/// Stationary policies are summed in closed form through the linear system
/// `(I − β·Kᵀ) η = (1−β) ν` over the policy-averaged kernel `K`.
/// History-dependent controls are summed exactly by a forward recursion
/// over (summary, state) weights, truncated once `β^N ≤ horizon_tol` and
/// renormalized by the exact factor `1 − β^N`.
pub fn occupation_measure<S: Scalar>(
    chain: &ControlledChain<S>,
    beta: S,
    horizon_tol: S,
) -> Result<OccupationMeasure<S>> {
    check_beta(beta)?;
    if !(horizon_tol > S::zero()) {
        return Err(MimicError::BadDistribution {
            what: "truncation tolerance",
            detail: format!("must be positive, got {horizon_tol}"),
        });
    }
    let m = chain.states.len();
    let a = chain.actions.len();
    let joint = match &chain.control {
        ChainControl::Stationary(policy) => {
            let kernel = chain.policy_kernel(policy);
            let mut system = Array2::zeros((m, m));
            for x in 0..m {
                for y in 0..m {
                    // (I − β Kᵀ) entries; row = target state.
                    let delta = if x == y { S::one() } else { S::zero() };
                    system[[x, y]] = delta - beta * kernel[[y, x]];
                }
            }
            let rhs = chain.initial.mapv(|v| (S::one() - beta) * v);
            let eta = solve(system, rhs)?;
            let mut joint = Array2::zeros((m, a));
            for x in 0..m {
                let mass = eta[x].max(S::zero());
                for u in 0..a {
                    joint[[x, u]] = mass * policy[[x, u]];
                }
            }
            joint
        }
        ChainControl::History(control) => {
            let sigma = control.summary_count().max(1);
            if (sigma as u128) * (m as u128) > PATH_TABLE_CAP as u128 {
                return Err(MimicError::PathSpaceTooLarge {
                    size: (sigma as u128) * (m as u128),
                    cap: PATH_TABLE_CAP,
                });
            }
            let steps = truncation_horizon(beta, horizon_tol);
            let mut weight = Array2::<S>::zeros((sigma, m));
            for x in 0..m {
                if chain.initial[x] > S::zero() {
                    let s0 = control.initial_summary(x);
                    weight[[s0, x]] = weight[[s0, x]] + chain.initial[x];
                }
            }
            let mut joint = Array2::zeros((m, a));
            let lead = S::one() - beta;
            let mut discount = S::one();
            for n in 0..steps {
                let mut next = Array2::<S>::zeros((sigma, m));
                for s in 0..sigma {
                    for x in 0..m {
                        let w = weight[[s, x]];
                        if w == S::zero() {
                            continue;
                        }
                        let pi = control.action_law(s, x, n);
                        for u in 0..a {
                            let wu = w * pi[u];
                            if wu == S::zero() {
                                continue;
                            }
                            joint[[x, u]] = joint[[x, u]] + lead * discount * wu;
                            if n + 1 < steps {
                                for y in 0..m {
                                    let p = self_row(chain, x, u, y) * wu;
                                    if p == S::zero() {
                                        continue;
                                    }
                                    let s2 = control.next_summary(s, x, u, y, n);
                                    next[[s2, y]] = next[[s2, y]] + p;
                                }
                            }
                        }
                    }
                }
                weight = next;
                discount = discount * beta;
            }
            // discount now equals β^steps; renormalize the truncated sum.
            let norm = S::one() - discount;
            joint.mapv_into(|v| v / norm)
        }
    };
    Ok(disintegrate(beta, joint))
}

fn self_row<S: Scalar>(chain: &ControlledChain<S>, x: usize, u: usize, y: usize) -> S {
    chain.dynamics[[x * chain.actions.len() + u, y]]
}

/// The chain with the same spaces, initial law, and dynamics, controlled by
/// the occupation measure's stationary relaxed policy. Running it at the
/// same discount reproduces the occupation measure.
pub fn stationary_mimic<S: Scalar>(
    occ: &OccupationMeasure<S>,
    template: &ControlledChain<S>,
) -> Result<ControlledChain<S>> {
    ControlledChain::new(
        template.states.clone(),
        template.actions.clone(),
        template.initial.clone(),
        template.dynamics.clone(),
        ChainControl::Stationary(occ.policy.clone()),
    )
}

/// Per-time state marginals `P(X_n = x)` for `n = 0..=horizon`.
///
/// The occupation mimic reproduces the discounted aggregate of these, not
/// each one individually; this exists so runs can report the per-time gap.
pub fn state_marginals<S: Scalar>(
    chain: &ControlledChain<S>,
    horizon: usize,
) -> Result<Vec<Array1<S>>> {
    let m = chain.states.len();
    let a = chain.actions.len();
    let mut out = Vec::with_capacity(horizon + 1);
    match &chain.control {
        ChainControl::Stationary(policy) => {
            let kernel = chain.policy_kernel(policy);
            let mut current = chain.initial.clone();
            for _ in 0..horizon {
                out.push(current.clone());
                let mut next = Array1::zeros(m);
                for x in 0..m {
                    if current[x] == S::zero() {
                        continue;
                    }
                    for y in 0..m {
                        next[y] = next[y] + current[x] * kernel[[x, y]];
                    }
                }
                current = next;
            }
            out.push(current);
        }
        ChainControl::History(control) => {
            let sigma = control.summary_count().max(1);
            if (sigma as u128) * (m as u128) > PATH_TABLE_CAP as u128 {
                return Err(MimicError::PathSpaceTooLarge {
                    size: (sigma as u128) * (m as u128),
                    cap: PATH_TABLE_CAP,
                });
            }
            let mut weight = Array2::<S>::zeros((sigma, m));
            for x in 0..m {
                if chain.initial[x] > S::zero() {
                    let s0 = control.initial_summary(x);
                    weight[[s0, x]] = weight[[s0, x]] + chain.initial[x];
                }
            }
            for n in 0..=horizon {
                let mut marginal = Array1::zeros(m);
                for x in 0..m {
                    marginal[x] = kahan_sum(weight.column(x).iter().copied());
                }
                out.push(marginal);
                if n == horizon {
                    break;
                }
                let mut next = Array2::<S>::zeros((sigma, m));
                for s in 0..sigma {
                    for x in 0..m {
                        let w = weight[[s, x]];
                        if w == S::zero() {
                            continue;
                        }
                        let pi = control.action_law(s, x, n);
                        for u in 0..a {
                            let wu = w * pi[u];
                            if wu == S::zero() {
                                continue;
                            }
                            for y in 0..m {
                                let p = self_row(chain, x, u, y) * wu;
                                if p == S::zero() {
                                    continue;
                                }
                                let s2 = control.next_summary(s, x, u, y, n);
                                next[[s2, y]] = next[[s2, y]] + p;
                            }
                        }
                    }
                }
                weight = next;
            }
        }
    }
    Ok(out)
}

/// Two routes to the same discounted cost.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventReport<S: Scalar> {
    /// `(1−β) E[Σ β^n k(X_n, U_n)]` under the original chain, via its
    /// occupation measure.
    pub occupation_value: S,
    /// `Σ_x ν(x) ψ(x)` for the resolvent ψ of the mimic's stationary policy.
    pub resolvent_value: S,
    pub gap: S,
    pub psi: Array1<S>,
}

/// Solves `ψ = (I − β·K)⁻¹ (1−β) k_policy` for the mimic's stationary
/// policy and checks that `ν·ψ` reproduces the original chain's normalized
/// discounted cost `Σ_{x,u} μ(x,u) k(x,u)`.
pub fn resolvent_check<S: Scalar>(
    original: &ControlledChain<S>,
    mimic: &ControlledChain<S>,
    beta: S,
    cost: &Array2<S>,
    horizon_tol: S,
) -> Result<ResolventReport<S>> {
    check_beta(beta)?;
    if original.states != mimic.states || original.actions != mimic.actions {
        return Err(MimicError::SpaceMismatch);
    }
    let m = original.states.len();
    let a = original.actions.len();
    if cost.shape() != [m, a] {
        return Err(MimicError::BadShape {
            what: "cost table",
            got: cost.len(),
            want: m * a,
        });
    }
    let policy = match &mimic.control {
        ChainControl::Stationary(policy) => policy,
        ChainControl::History(_) => return Err(MimicError::NonStationaryPolicy),
    };
    let kernel = mimic.policy_kernel(policy);
    let mut system = Array2::zeros((m, m));
    for x in 0..m {
        for y in 0..m {
            let delta = if x == y { S::one() } else { S::zero() };
            system[[x, y]] = delta - beta * kernel[[x, y]];
        }
    }
    let mut k_policy = Array1::zeros(m);
    for x in 0..m {
        k_policy[x] =
            (S::one() - beta) * kahan_sum((0..a).map(|u| policy[[x, u]] * cost[[x, u]]));
    }
    let psi = solve(system, k_policy)?;
    let resolvent_value = kahan_sum((0..m).map(|x| mimic.initial[x] * psi[x]));

    let occ = occupation_measure(original, beta, horizon_tol)?;
    let occupation_value = kahan_sum(
        occ.joint
            .iter()
            .zip(cost.iter())
            .map(|(&mu, &k)| mu * k),
    );
    Ok(ResolventReport {
        occupation_value,
        resolvent_value,
        gap: (occupation_value - resolvent_value).abs(),
        psi,
    })
}

/// Control that plays the initial state as its action forever: the simplest
/// genuinely history-dependent policy (the summary is `X_0`).
#[derive(Debug, Clone, Copy)]
pub struct InitialStateControl {
    num_states: usize,
    num_actions: usize,
}

impl InitialStateControl {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        InitialStateControl {
            num_states,
            num_actions,
        }
    }
}

impl<S: Scalar> SummarizedControl<S> for InitialStateControl {
    fn summary_count(&self) -> usize {
        self.num_states
    }

    fn initial_summary(&self, x0: usize) -> usize {
        x0
    }

    fn next_summary(&self, summary: usize, _x: usize, _u: usize, _y: usize, _n: usize) -> usize {
        summary
    }

    fn action_law(&self, summary: usize, _x: usize, _n: usize) -> Array1<S> {
        let mut law = Array1::zeros(self.num_actions);
        law[summary.min(self.num_actions - 1)] = S::one();
        law
    }
}

/// Threshold control on the running maximum of the state index: play
/// `above` once the maximum has reached `threshold`, else `below`.
#[derive(Debug, Clone, Copy)]
pub struct RunningMaxControl {
    num_states: usize,
    num_actions: usize,
    pub threshold: usize,
    pub below: usize,
    pub above: usize,
}

impl RunningMaxControl {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        threshold: usize,
        below: usize,
        above: usize,
    ) -> Self {
        assert!(below < num_actions && above < num_actions);
        RunningMaxControl {
            num_states,
            num_actions,
            threshold,
            below,
            above,
        }
    }
}

impl<S: Scalar> SummarizedControl<S> for RunningMaxControl {
    fn summary_count(&self) -> usize {
        self.num_states
    }

    fn initial_summary(&self, x0: usize) -> usize {
        x0
    }

    fn next_summary(&self, summary: usize, _x: usize, _u: usize, y: usize, _n: usize) -> usize {
        summary.max(y)
    }

    fn action_law(&self, summary: usize, _x: usize, _n: usize) -> Array1<S> {
        let mut law = Array1::zeros(self.num_actions);
        let u = if summary >= self.threshold {
            self.above
        } else {
            self.below
        };
        law[u] = S::one();
        law
    }
}

/// Seeded random control: the action law depends on the initial state (the
/// summary), the current state, and the step modulo a period: history
/// dependence plus nonstationarity, with reproducible tables.
#[derive(Debug, Clone)]
pub struct SeededTableControl<S: Scalar> {
    num_states: usize,
    period: usize,
    /// Indexed `[summary][x][n % period]` → action law.
    table: Vec<Array1<S>>,
}

impl<S: Scalar> SeededTableControl<S> {
    pub fn new(seed: u64, num_states: usize, num_actions: usize, period: usize) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0x7461626c65);
        let period = period.max(1);
        let table = (0..num_states * num_states * period)
            .map(|_| {
                let mut row: Vec<S> = (0..num_actions)
                    .map(|_| {
                        let u: f64 = rng.gen();
                        crate::scalar::real::<S>(0.05 - (1.0 - u).ln())
                    })
                    .collect();
                let total = kahan_sum(row.iter().copied());
                for v in &mut row {
                    *v = *v / total;
                }
                Array1::from(row)
            })
            .collect();
        SeededTableControl {
            num_states,
            period,
            table,
        }
    }
}

impl<S: Scalar> SummarizedControl<S> for SeededTableControl<S> {
    fn summary_count(&self) -> usize {
        self.num_states
    }

    fn initial_summary(&self, x0: usize) -> usize {
        x0
    }

    fn next_summary(&self, summary: usize, _x: usize, _u: usize, _y: usize, _n: usize) -> usize {
        summary
    }

    fn action_law(&self, summary: usize, x: usize, n: usize) -> Array1<S> {
        self.table[(summary * self.num_states + x) * self.period + n % self.period].clone()
    }
}
