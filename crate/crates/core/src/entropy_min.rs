//! Relative-entropy minimization over laws with prescribed one-dimensional
//! marginals.
//!
//! The feasible set fixes the marginal at each constrained time; the
//! minimizer of `D(· ‖ reference)` over that set is computed by cyclic
//! iterative proportional fitting (an I-projection), and cross-checked by an
//! independent projected-gradient solver on small instances. Against a
//! Markov reference the minimizer is itself Markov, which callers can verify
//! with the Markov-point test.

use ndarray::{Array1, Array2};

use crate::error::{MimicError, Result};
use crate::linalg::solve_consistent;
use crate::path_measure::{check_same_space, is_markov_law, radon_nikodym, PathLaw};
use crate::scalar::{kahan_sum, real, Scalar};

/// Marginal constraints over a Markov reference law.
///
/// Construction validates everything the solvers rely on: the reference is
/// an uncontrolled Markov law, each target is a probability vector supported
/// inside the reference's marginal, and the joint support that satisfies all
/// targets simultaneously reaches every state the targets charge. The last
/// check is what rules out divide-by-zero during fitting.
#[derive(Debug, Clone)]
pub struct MarginalConstraintSet<S: Scalar> {
    reference: PathLaw<S>,
    constraints: Vec<(usize, Array1<S>)>,
    mask: Vec<bool>,
}

impl<S: Scalar> MarginalConstraintSet<S> {
    pub fn new(reference: PathLaw<S>, constraints: Vec<(usize, Array1<S>)>) -> Result<Self> {
        let markov = is_markov_law(&reference, S::cond_tol())?;
        if !markov.is_markov {
            return Err(MimicError::NonMarkovReference {
                s: markov.s,
                gap: markov.max_gap.format_full(),
            });
        }
        let mut constraints = constraints;
        constraints.sort_by_key(|(t, _)| *t);
        if constraints.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(MimicError::BadDistribution {
                what: "constraint set",
                detail: "duplicate constraint time".into(),
            });
        }
        let m = reference.states().len();
        for (t, target) in &constraints {
            if *t > reference.horizon() {
                return Err(MimicError::TimeOutOfRange {
                    t: *t,
                    max: reference.horizon(),
                });
            }
            if target.len() != m {
                return Err(MimicError::BadShape {
                    what: "constraint vector",
                    got: target.len(),
                    want: m,
                });
            }
            if let Some(bad) = target.iter().find(|&&v| !(v >= S::zero())) {
                return Err(MimicError::BadDistribution {
                    what: "constraint vector",
                    detail: format!("negative or non-finite entry {bad}"),
                });
            }
            let total = kahan_sum(target.iter().copied());
            if (total - S::one()).abs() > S::mass_tol() {
                return Err(MimicError::BadDistribution {
                    what: "constraint vector",
                    detail: format!("total mass {total}"),
                });
            }
            let marg = reference.marginal(*t)?;
            for x in 0..m {
                if target[x] > S::zero() && marg[x] == S::zero() {
                    return Err(MimicError::InfeasibleSupport { t: *t, state: x });
                }
            }
        }
        let indexer = *reference.indexer();
        let mask: Vec<bool> = (0..reference.num_paths())
            .map(|idx| {
                reference.prob(idx) > S::zero()
                    && constraints
                        .iter()
                        .all(|(t, target)| target[indexer.state_at(idx, *t)] > S::zero())
            })
            .collect();
        for (t, target) in &constraints {
            for x in 0..m {
                if target[x] == S::zero() {
                    continue;
                }
                let reached = mask
                    .iter()
                    .enumerate()
                    .any(|(idx, &on)| on && indexer.state_at(idx, *t) == x);
                if !reached {
                    return Err(MimicError::InfeasibleJoint { t: *t, state: x });
                }
            }
        }
        Ok(MarginalConstraintSet {
            reference,
            constraints,
            mask,
        })
    }

    pub fn reference(&self) -> &PathLaw<S> {
        &self.reference
    }

    /// Constraints sorted by time; times are distinct.
    pub fn constraints(&self) -> &[(usize, Array1<S>)] {
        &self.constraints
    }

    /// Per-path membership in the joint feasible support.
    pub fn support_mask(&self) -> &[bool] {
        &self.mask
    }

    fn masked_reference(&self) -> Vec<S> {
        (0..self.reference.num_paths())
            .map(|idx| {
                if self.mask[idx] {
                    self.reference.prob(idx)
                } else {
                    S::zero()
                }
            })
            .collect()
    }
}

/// Per-run fitting diagnostics. Traces hold one entry per completed cycle.
#[derive(Debug, Clone)]
pub struct IpfDiagnostics<S: Scalar> {
    pub cycles: usize,
    pub final_residual: S,
    /// `D(result ‖ reference)` in nats.
    pub entropy: S,
    /// Total-variation gap per constraint, in constraint order, at exit.
    pub per_constraint_tv: Vec<S>,
    pub entropy_trace: Vec<S>,
    pub residual_trace: Vec<S>,
}

/// Largest moment `E_0[Λ^{1+ε}]` over a candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeReport<S: Scalar> {
    pub epsilon: S,
    pub sup_moment: S,
}

fn entropy_against<S: Scalar>(probs: &[S], reference: &PathLaw<S>) -> S {
    kahan_sum(probs.iter().enumerate().filter_map(|(idx, &p)| {
        if p > S::zero() {
            Some(p * (p / reference.prob(idx)).ln())
        } else {
            None
        }
    }))
}

fn raw_marginal<S: Scalar>(set: &MarginalConstraintSet<S>, probs: &[S], t: usize) -> Array1<S> {
    let indexer = set.reference.indexer();
    let mut out = Array1::zeros(set.reference.states().len());
    for (idx, &p) in probs.iter().enumerate() {
        let x = indexer.state_at(idx, t);
        out[x] = out[x] + p;
    }
    out
}

fn tv_gap<S: Scalar>(a: &Array1<S>, b: &Array1<S>) -> S {
    let half = S::one() / (S::one() + S::one());
    half * kahan_sum(a.iter().zip(b.iter()).map(|(&x, &y)| (x - y).abs()))
}

fn finish<S: Scalar>(
    set: &MarginalConstraintSet<S>,
    mut probs: Vec<S>,
    cycles: usize,
    final_residual: S,
    per_constraint_tv: Vec<S>,
    entropy_trace: Vec<S>,
    residual_trace: Vec<S>,
) -> Result<(PathLaw<S>, IpfDiagnostics<S>)> {
    let total = kahan_sum(probs.iter().copied());
    for p in &mut probs {
        *p = *p / total;
    }
    let entropy = entropy_against(&probs, &set.reference);
    let law = PathLaw::new(
        set.reference.states().clone(),
        None,
        set.reference.horizon(),
        probs,
    )?;
    Ok((
        law,
        IpfDiagnostics {
            cycles,
            final_residual,
            entropy,
            per_constraint_tv,
            entropy_trace,
            residual_trace,
        },
    ))
}

fn ipf<S: Scalar>(
    set: &MarginalConstraintSet<S>,
    mut probs: Vec<S>,
    tol: S,
    max_iters: usize,
) -> Result<(PathLaw<S>, IpfDiagnostics<S>)> {
    if set.constraints.is_empty() {
        return finish(set, probs, 0, S::zero(), vec![], vec![], vec![]);
    }
    let indexer = *set.reference.indexer();
    let m = set.reference.states().len();
    let mut entropy_trace = Vec::new();
    let mut residual_trace = Vec::new();
    let mut last_residual = S::infinity();
    for cycle in 1..=max_iters {
        for (t, target) in &set.constraints {
            let marg = raw_marginal(set, &probs, *t);
            let mut factor = vec![S::zero(); m];
            for x in 0..m {
                if marg[x] > S::zero() {
                    factor[x] = target[x] / marg[x];
                }
            }
            for (idx, p) in probs.iter_mut().enumerate() {
                if *p > S::zero() {
                    *p = *p * factor[indexer.state_at(idx, *t)];
                }
            }
        }
        let per_tv: Vec<S> = set
            .constraints
            .iter()
            .map(|(t, target)| tv_gap(&raw_marginal(set, &probs, *t), target))
            .collect();
        let residual = per_tv.iter().fold(S::zero(), |acc, &v| acc.max(v));
        entropy_trace.push(entropy_against(&probs, &set.reference));
        residual_trace.push(residual);
        last_residual = residual;
        if residual <= tol {
            return finish(
                set,
                probs,
                cycle,
                residual,
                per_tv,
                entropy_trace,
                residual_trace,
            );
        }
    }
    Err(MimicError::NoConvergence {
        iters: max_iters,
        residual: last_residual.format_full(),
    })
}

/// Minimizes `D(· ‖ reference)` subject to the constraint set by cyclic
/// proportional fitting starting from the reference.
///
/// Each pass rescales path masses so one constrained marginal matches its
/// target exactly; cycling over constraints converges to the unique
/// minimizer. Stops when the largest total-variation gap over constraints
/// drops to `tol`; errs after `max_iters` cycles with the residual.
pub fn minimize_entropy<S: Scalar>(
    set: &MarginalConstraintSet<S>,
    tol: S,
    max_iters: usize,
) -> Result<(PathLaw<S>, IpfDiagnostics<S>)> {
    ipf(set, set.masked_reference(), tol, max_iters)
}

/// Same fitting loop from a caller-supplied starting law.
///
/// The limit is the constrained minimizer (rather than the I-projection of
/// `start`) exactly when `start` is a positive per-time product reweighting
/// of the reference on the feasible support, e.g. the reference times
/// `Π_t g_t(x_t)`; used to confirm the minimizer is start-independent.
pub fn minimize_entropy_from<S: Scalar>(
    set: &MarginalConstraintSet<S>,
    start: &PathLaw<S>,
    tol: S,
    max_iters: usize,
) -> Result<(PathLaw<S>, IpfDiagnostics<S>)> {
    check_same_space(start, &set.reference)?;
    let probs: Vec<S> = (0..start.num_paths())
        .map(|idx| {
            if set.mask[idx] {
                start.prob(idx)
            } else {
                S::zero()
            }
        })
        .collect();
    if kahan_sum(probs.iter().copied()) == S::zero() {
        return Err(MimicError::BadDistribution {
            what: "starting law",
            detail: "no mass on the feasible support".into(),
        });
    }
    ipf(set, probs, tol, max_iters)
}

/// Hard cap on the path-space size the gradient oracle will attempt.
pub const ORACLE_PATH_CAP: u64 = 10_000;

/// Independent minimizer: projected gradient descent on the feasible
/// support with diminishing steps.
///
/// Deliberately shares no machinery with the fitting loop: the gradient of
/// `Σ p log(p/p0)` is descended, then the iterate is returned to the
/// affine-marginal slice intersected with the nonnegative orthant by
/// alternating projections with orthant corrections. Slow by design; only
/// for cross-checking on instances of at most [`ORACLE_PATH_CAP`] paths.
pub fn brute_force_minimizer<S: Scalar>(
    set: &MarginalConstraintSet<S>,
    tol: S,
) -> Result<PathLaw<S>> {
    if set.reference.num_paths() as u64 > ORACLE_PATH_CAP {
        return Err(MimicError::PathSpaceTooLarge {
            size: set.reference.num_paths() as u128,
            cap: ORACLE_PATH_CAP,
        });
    }
    let indexer = *set.reference.indexer();
    let active: Vec<usize> = (0..set.reference.num_paths())
        .filter(|&idx| set.mask[idx])
        .collect();
    let n = active.len();
    let refv: Vec<S> = active.iter().map(|&idx| set.reference.prob(idx)).collect();

    // Affine rows: total mass, then one row per (time, charged state).
    let mut rows: Vec<Vec<S>> = vec![vec![S::one(); n]];
    let mut rhs: Vec<S> = vec![S::one()];
    for (t, target) in &set.constraints {
        for x in 0..target.len() {
            if target[x] == S::zero() {
                continue;
            }
            rows.push(
                active
                    .iter()
                    .map(|&idx| {
                        if indexer.state_at(idx, *t) == x {
                            S::one()
                        } else {
                            S::zero()
                        }
                    })
                    .collect(),
            );
            rhs.push(target[x]);
        }
    }
    let r = rows.len();
    let mut gram = Array2::zeros((r, r));
    for i in 0..r {
        for j in i..r {
            let dot = kahan_sum(rows[i].iter().zip(&rows[j]).map(|(&a, &b)| a * b));
            gram[[i, j]] = dot;
            gram[[j, i]] = dot;
        }
    }

    let affine = |z: &[S]| -> Vec<S> {
        let mut defect = Array1::zeros(r);
        for i in 0..r {
            defect[i] = kahan_sum(rows[i].iter().zip(z).map(|(&a, &b)| a * b)) - rhs[i];
        }
        let y = solve_consistent(gram.clone(), defect);
        let mut out = z.to_vec();
        for i in 0..r {
            if y[i] == S::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(&rows[i]) {
                *o = *o - y[i] * a;
            }
        }
        out
    };
    let project = |z: &[S]| -> Vec<S> {
        let mut u = z.to_vec();
        let mut corr = vec![S::zero(); n];
        let mut best = affine(&u);
        for _ in 0..300 {
            let y = affine(&u);
            let worst_neg = y.iter().fold(S::zero(), |acc, &v| acc.min(v));
            best = y.clone();
            if worst_neg >= -real::<S>(1e-13) {
                break;
            }
            let mut shift = S::zero();
            for i in 0..n {
                let v = y[i] + corr[i];
                let clipped = v.max(S::zero());
                shift = shift.max((clipped - u[i]).abs());
                corr[i] = v - clipped;
                u[i] = clipped;
            }
            if shift <= real::<S>(1e-15) {
                break;
            }
        }
        best
    };
    let objective = |z: &[S]| -> S {
        kahan_sum(z.iter().zip(&refv).filter_map(|(&p, &p0)| {
            if p > S::zero() {
                Some(p * (p / p0).ln())
            } else {
                None
            }
        }))
    };

    let floor = real::<S>(1e-300);
    let uniform = S::one() / S::from_usize(n).unwrap();
    let mut z = project(&vec![uniform; n]);
    let mut f_cur = objective(&z);
    let mut scale = S::one();
    let mut anchor = f_cur;
    let mut since_anchor = 0usize;
    for k in 0..60_000usize {
        let grad: Vec<S> = z
            .iter()
            .zip(&refv)
            .map(|(&p, &p0)| (p.max(floor) / p0).ln() + S::one())
            .collect();
        let schedule = scale / S::from_usize(k + 1).unwrap().sqrt();
        let mut step = schedule;
        let mut moved = false;
        for attempt in 0..50 {
            let cand: Vec<S> = z.iter().zip(&grad).map(|(&p, &g)| p - step * g).collect();
            let cand = project(&cand);
            let f_cand = objective(&cand);
            if f_cand <= f_cur {
                z = cand;
                f_cur = f_cand;
                moved = true;
                if attempt == 0 {
                    scale = (scale * real(1.1)).min(real(64.0));
                } else {
                    scale = scale * real(0.7);
                }
                break;
            }
            step = step * real(0.5);
        }
        if !moved {
            break;
        }
        since_anchor += 1;
        if since_anchor >= 300 {
            if anchor - f_cur <= real(1e-14) {
                break;
            }
            anchor = f_cur;
            since_anchor = 0;
        }
    }

    let mut probs = vec![S::zero(); set.reference.num_paths()];
    for (slot, &idx) in active.iter().enumerate() {
        probs[idx] = z[slot].max(S::zero());
    }
    let total = kahan_sum(probs.iter().copied());
    for p in &mut probs {
        *p = *p / total;
    }
    let worst = set
        .constraints
        .iter()
        .map(|(t, target)| tv_gap(&raw_marginal(set, &probs, *t), target))
        .fold(S::zero(), |acc, v| acc.max(v));
    let quality = real::<S>(1e-7).max(tol);
    if worst > quality {
        return Err(MimicError::NoConvergence {
            iters: 60_000,
            residual: worst.format_full(),
        });
    }
    PathLaw::new(
        set.reference.states().clone(),
        None,
        set.reference.horizon(),
        probs,
    )
}

/// Largest `E_0[Λ_T^{1+ε}]` over the candidate laws, where `Λ_T` is each
/// candidate's likelihood ratio against the reference at the terminal time.
/// Finite by construction on finite path spaces; errs if any candidate is
/// not dominated by the reference.
pub fn gauge_check<S: Scalar>(
    candidates: &[PathLaw<S>],
    reference: &PathLaw<S>,
    epsilon: S,
) -> Result<GaugeReport<S>> {
    if candidates.is_empty() {
        return Err(MimicError::BadShape {
            what: "candidate list",
            got: 0,
            want: 1,
        });
    }
    if !(epsilon > S::zero()) {
        return Err(MimicError::BadDistribution {
            what: "gauge exponent",
            detail: format!("epsilon must be positive, got {epsilon}"),
        });
    }
    let power = S::one() + epsilon;
    let mut sup = S::zero();
    for candidate in candidates {
        let ratio = radon_nikodym(candidate, reference, reference.horizon())?;
        let moment = kahan_sum(
            ratio
                .values()
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > S::zero())
                .map(|(idx, &v)| reference.prob(idx) * v.powf(power)),
        );
        sup = sup.max(moment);
    }
    Ok(GaugeReport {
        epsilon,
        sup_moment: sup,
    })
}
