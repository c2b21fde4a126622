//! Markov-point tests and markovianization at a fixed time.
//!
//! A time `s` is a Markov point of a law when the conditional law of the
//! future `(X_{s+1}, ..., X_T)` given the whole prefix `(X_0, ..., X_s)`
//! depends on the prefix only through `X_s`. Markovianization at `s` keeps
//! the prefix law and replaces the conditional future law with the one given
//! `X_s` alone; it preserves every one-dimensional marginal, and against a
//! Markov reference it never increases relative entropy.

use crate::error::{MimicError, Result};
use crate::scalar::{real, Scalar};

use super::entropy::check_same_space;
use super::PathLaw;

/// Outcome of a Markov-point test.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovCheck<S: Scalar> {
    /// Time that was tested (the worst time for a whole-law check).
    pub s: usize,
    pub is_markov: bool,
    /// Largest total-variation gap between a prefix-conditional future law
    /// and the one conditioned on the endpoint state alone.
    pub max_gap: S,
    /// Prefix states realizing `max_gap`, present whenever the gap is
    /// positive.
    pub witness: Option<Vec<usize>>,
}

struct SplitView<'a, S: Scalar> {
    law: &'a PathLaw<S>,
    s: usize,
    prefixes: usize,
    suffixes: usize,
    /// Mass of each prefix.
    weight: Vec<S>,
    /// Mass of each endpoint state at time `s`.
    state_mass: Vec<S>,
    /// Joint mass of `(X_s, suffix)`, row-major over `m × suffixes`.
    state_suffix: Vec<S>,
}

impl<'a, S: Scalar> SplitView<'a, S> {
    fn new(law: &'a PathLaw<S>, s: usize) -> Result<Self> {
        if law.is_controlled() {
            return Err(MimicError::ControlledLaw);
        }
        if s == 0 || s >= law.horizon() {
            return Err(MimicError::NotInterior {
                s,
                horizon: law.horizon(),
            });
        }
        let m = law.states().len();
        let prefixes = law.indexer().prefix_count(s);
        let suffixes = law.indexer().suffix_count(s);
        let mut weight = vec![S::zero(); prefixes];
        let mut state_mass = vec![S::zero(); m];
        let mut state_suffix = vec![S::zero(); m * suffixes];
        for q in 0..prefixes {
            let x = q % m;
            let row = &law.probs()[q * suffixes..(q + 1) * suffixes];
            let mut w = S::zero();
            for (sf, &p) in row.iter().enumerate() {
                w = w + p;
                state_suffix[x * suffixes + sf] = state_suffix[x * suffixes + sf] + p;
            }
            weight[q] = w;
            state_mass[x] = state_mass[x] + w;
        }
        Ok(SplitView {
            law,
            s,
            prefixes,
            suffixes,
            weight,
            state_mass,
            state_suffix,
        })
    }

    fn prefix_states(&self, q: usize) -> Vec<usize> {
        let m = self.law.states().len();
        let mut states = vec![0; self.s + 1];
        let mut rest = q;
        for t in (0..=self.s).rev() {
            states[t] = rest % m;
            rest /= m;
        }
        states
    }
}

/// Tests whether `s` is a Markov point of `law` within total-variation `tol`.
///
/// Requires an uncontrolled law and an interior time `0 < s < horizon`.
/// Zero-probability prefixes are skipped.
pub fn is_markov_point<S: Scalar>(law: &PathLaw<S>, s: usize, tol: S) -> Result<MarkovCheck<S>> {
    let view = SplitView::new(law, s)?;
    let m = law.states().len();
    let half = real::<S>(0.5);
    let mut max_gap = S::zero();
    let mut witness = None;
    for q in 0..view.prefixes {
        let w = view.weight[q];
        if w == S::zero() {
            continue;
        }
        let x = q % m;
        let row = &law.probs()[q * view.suffixes..(q + 1) * view.suffixes];
        let pooled = &view.state_suffix[x * view.suffixes..(x + 1) * view.suffixes];
        let mut l1 = S::zero();
        for (sf, &p) in row.iter().enumerate() {
            l1 = l1 + (p / w - pooled[sf] / view.state_mass[x]).abs();
        }
        let gap = half * l1;
        if gap > max_gap {
            max_gap = gap;
            witness = Some(view.prefix_states(q));
        }
    }
    Ok(MarkovCheck {
        s,
        is_markov: max_gap <= tol,
        max_gap,
        witness,
    })
}

/// Tests every interior time and reports the worst gap. Laws with horizon
/// below two have no interior time and are trivially Markov.
pub fn is_markov_law<S: Scalar>(law: &PathLaw<S>, tol: S) -> Result<MarkovCheck<S>> {
    if law.is_controlled() {
        return Err(MimicError::ControlledLaw);
    }
    let mut worst = MarkovCheck {
        s: 0,
        is_markov: true,
        max_gap: S::zero(),
        witness: None,
    };
    for s in 1..law.horizon() {
        let check = is_markov_point(law, s, tol)?;
        if check.max_gap >= worst.max_gap {
            worst = MarkovCheck {
                is_markov: worst.is_markov && check.is_markov,
                ..check
            };
        } else {
            worst.is_markov = worst.is_markov && check.is_markov;
        }
    }
    Ok(worst)
}

/// Markovianization at `s`: keeps the law of `(X_0, ..., X_s)` and glues the
/// conditional law of `(X_{s+1}, ..., X_T)` given `X_s` alone.
///
/// The output has the same one-dimensional marginals at every time, `s` is a
/// Markov point of it, and relative entropy against any Markov reference
/// never increases (strictly decreases when `s` was not a Markov point).
pub fn markovianize<S: Scalar>(law: &PathLaw<S>, s: usize) -> Result<PathLaw<S>> {
    let view = SplitView::new(law, s)?;
    let m = law.states().len();
    let mut probs = vec![S::zero(); law.num_paths()];
    for q in 0..view.prefixes {
        let w = view.weight[q];
        if w == S::zero() {
            continue;
        }
        let x = q % m;
        let pooled = &view.state_suffix[x * view.suffixes..(x + 1) * view.suffixes];
        let mass = view.state_mass[x];
        for sf in 0..view.suffixes {
            probs[q * view.suffixes + sf] = w * (pooled[sf] / mass);
        }
    }
    PathLaw::new(
        law.states().clone(),
        None,
        law.horizon(),
        probs,
    )
}

/// Result of cross-checking the markovianized density construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCheck<S: Scalar> {
    pub s: usize,
    /// Largest absolute difference between the two computation routes over
    /// all reference-positive `(X_s, ..., X_T)` events.
    pub max_discrepancy: S,
    pub passes: bool,
}

/// Verifies, on the σ-field generated by `(X_s, ..., X_T)`, that the density
/// of `markovianize(p, s)` with respect to a Markov reference `p0` equals the
/// conditional expectation `E_0[Λ_T | X_s, ..., X_T]` of the full likelihood
/// ratio `Λ_T = dp/dp0`.
///
/// The two sides are computed through independent routes: the left from the
/// markovianized law's `(X_s, ..., X_T)` marginal against the reference's,
/// the right by exact conditional averaging of the pathwise ratio under the
/// reference. Requires `p ≪ p0` and `p0` Markov at every interior time
/// (within [`Scalar::cond_tol`]).
pub fn verify_markovianized_density<S: Scalar>(
    p: &PathLaw<S>,
    p0: &PathLaw<S>,
    s: usize,
) -> Result<DensityCheck<S>> {
    check_same_space(p, p0)?;
    for idx in 0..p.num_paths() {
        if p.prob(idx) > S::zero() && p0.prob(idx) == S::zero() {
            return Err(MimicError::NotDominated {
                path: p.path_label(idx),
                mass: format!("{}", p.prob(idx)),
            });
        }
    }
    let reference_check = is_markov_law(p0, S::cond_tol())?;
    if !reference_check.is_markov {
        return Err(MimicError::NonMarkovReference {
            s: reference_check.s,
            gap: format!("{}", reference_check.max_gap),
        });
    }
    let glued = markovianize(p, s)?;
    let m = p.states().len();
    let suffixes = p.indexer().suffix_count(s);
    let prefixes = p.indexer().prefix_count(s);
    // Fiber masses over (X_s, suffix) events.
    let mut glued_mass = vec![S::zero(); m * suffixes];
    let mut reference_mass = vec![S::zero(); m * suffixes];
    let mut averaged = vec![S::zero(); m * suffixes]; // Σ p0 · Λ_T over the fiber
    for q in 0..prefixes {
        let x = q % m;
        for sf in 0..suffixes {
            let idx = q * suffixes + sf;
            let fiber = x * suffixes + sf;
            glued_mass[fiber] = glued_mass[fiber] + glued.prob(idx);
            let w0 = p0.prob(idx);
            reference_mass[fiber] = reference_mass[fiber] + w0;
            if w0 > S::zero() {
                let ratio = p.prob(idx) / w0;
                averaged[fiber] = averaged[fiber] + w0 * ratio;
            }
        }
    }
    let mut max_discrepancy = S::zero();
    for fiber in 0..m * suffixes {
        if reference_mass[fiber] == S::zero() {
            if glued_mass[fiber] > S::zero() {
                return Err(MimicError::NotDominated {
                    path: format!("event fiber {fiber} at s={s}"),
                    mass: format!("{}", glued_mass[fiber]),
                });
            }
            continue;
        }
        let direct = glued_mass[fiber] / reference_mass[fiber];
        let conditional = averaged[fiber] / reference_mass[fiber];
        let diff = (direct - conditional).abs();
        if diff > max_discrepancy {
            max_discrepancy = diff;
        }
    }
    Ok(DensityCheck {
        s,
        max_discrepancy,
        passes: max_discrepancy <= S::cond_tol(),
    })
}
