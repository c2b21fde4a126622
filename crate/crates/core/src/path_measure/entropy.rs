//! Relative entropy and likelihood ratios between path laws.

use crate::error::{MimicError, Result};
use crate::scalar::{kahan_sum, Scalar};

use super::PathLaw;

pub(crate) fn check_same_space<S: Scalar>(p: &PathLaw<S>, p0: &PathLaw<S>) -> Result<()> {
    let same_actions = match (p.actions(), p0.actions()) {
        (None, None) => true,
        (Some(a), Some(b)) => a == b,
        _ => false,
    };
    if p.states() != p0.states() || p.horizon() != p0.horizon() || !same_actions {
        return Err(MimicError::SpaceMismatch);
    }
    Ok(())
}

/// Relative entropy `D(p ‖ p0) = Σ_ω p(ω) log(p(ω) / p0(ω))`, in nats.
///
/// Terms with `p(ω) = 0` contribute zero. A path with `p(ω) > 0` but
/// `p0(ω) = 0` breaks absolute continuity and is an error, never infinity.
pub fn relative_entropy<S: Scalar>(p: &PathLaw<S>, p0: &PathLaw<S>) -> Result<S> {
    check_same_space(p, p0)?;
    let mut terms = Vec::with_capacity(p.num_paths());
    for idx in 0..p.num_paths() {
        let mass = p.prob(idx);
        if mass == S::zero() {
            continue;
        }
        let reference = p0.prob(idx);
        if reference == S::zero() {
            return Err(MimicError::NotDominated {
                path: p.path_label(idx),
                mass: format!("{mass}"),
            });
        }
        terms.push(mass * (mass / reference).ln());
    }
    Ok(kahan_sum(terms))
}

/// Likelihood ratio `Λ_t` of one law against a reference, restricted to the
/// prefix σ-field over times `0..=t`.
///
/// `values` is indexed by prefix in [`super::PathIndexer`] order over
/// `t + 1` slots; entries where both restrictions vanish are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodRatio<S: Scalar> {
    base: PathLaw<S>,
    time_index: usize,
    values: Vec<S>,
}

impl<S: Scalar> LikelihoodRatio<S> {
    /// The reference law (over the full horizon) the ratio is taken against.
    pub fn base(&self) -> &PathLaw<S> {
        &self.base
    }

    pub fn time_index(&self) -> usize {
        self.time_index
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn value(&self, prefix: usize) -> S {
        self.values[prefix]
    }

    /// `E_0[Λ_t]` under the reference restriction; equals one for ratios of
    /// probability laws.
    pub fn expectation(&self) -> S {
        let rest = self
            .base
            .restriction(self.time_index)
            .expect("time_index is within the base horizon");
        kahan_sum(
            rest.probs()
                .iter()
                .zip(&self.values)
                .map(|(&w, &v)| w * v),
        )
    }
}

/// Radon-Nikodym derivative of `p` with respect to `p0`, both restricted to
/// times `0..=t`.
///
/// Errors if `p` charges a prefix that `p0` misses. The expectation under
/// `p0` is checked to equal one within [`Scalar::cond_tol`].
pub fn radon_nikodym<S: Scalar>(
    p: &PathLaw<S>,
    p0: &PathLaw<S>,
    t: usize,
) -> Result<LikelihoodRatio<S>> {
    check_same_space(p, p0)?;
    if t > p.horizon() {
        return Err(MimicError::TimeOutOfRange {
            t,
            max: p.horizon(),
        });
    }
    let rp = p.restriction(t)?;
    let r0 = p0.restriction(t)?;
    let mut values = Vec::with_capacity(rp.num_paths());
    for idx in 0..rp.num_paths() {
        let mass = rp.prob(idx);
        let reference = r0.prob(idx);
        if reference == S::zero() {
            if mass != S::zero() {
                return Err(MimicError::NotDominated {
                    path: rp.path_label(idx),
                    mass: format!("{mass}"),
                });
            }
            values.push(S::zero());
        } else {
            values.push(mass / reference);
        }
    }
    let ratio = LikelihoodRatio {
        base: p0.clone(),
        time_index: t,
        values,
    };
    let mean = ratio.expectation();
    if (mean - S::one()).abs() > S::cond_tol() {
        return Err(MimicError::BadDistribution {
            what: "likelihood ratio",
            detail: format!("reference expectation {mean}"),
        });
    }
    Ok(ratio)
}
