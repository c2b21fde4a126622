//! Line-oriented text formats for laws, chains, constraint sets, simulation
//! configs, marginal samples, and run reports.
//!
//! Every file starts with a magic line naming the format and version, e.g.
//! `# pathlaw v1`. Later lines beginning with `#` are comments; blank lines
//! are ignored. Header fields are `key = value` lines; data lines are
//! whitespace-separated tokens except marginal samples, which are CSV rows.
//!
//! Numbers are written in shortest round-trip scientific notation, so a
//! write followed by a parse reproduces every float bit for bit. Parse
//! failures carry the 1-based line number of the offending input line.
//!
//! Labels written by these routines may not contain `=` and may not equal
//! the keyword `constraint`; both would make a file ambiguous to reread.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::entropy_min::MarginalConstraintSet;
use crate::error::{MimicError, Result};
use crate::occupation::{
    ChainControl, ControlledChain, InitialStateControl, RunningMaxControl, SeededTableControl,
};
use crate::path_measure::{MarkovChainModel, PathLaw};
use crate::scalar::{kahan_sum, Scalar};
use crate::sde::EmpiricalMarginals;
use crate::space::{ActionSpace, StateSpace};

const PATHLAW_MAGIC: &str = "# pathlaw v1";
const CHAIN_MAGIC: &str = "# markovchain v1";
const CONTROLLED_MAGIC: &str = "# controlledchain v1";
const SDECONFIG_MAGIC: &str = "# sdeconfig v1";
const MARGINALS_MAGIC: &str = "# marginals v1";
const REPORT_MAGIC: &str = "# report v1";

/// Strips the magic line and comments, returning `(line_number, text)` pairs
/// for the remaining nonempty lines. Line numbers are 1-based.
fn body_lines<'a>(text: &'a str, magic: &str) -> Result<Vec<(usize, &'a str)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, first)) if first == magic => {}
        Some((n, first)) => {
            return Err(MimicError::parse(
                n,
                format!("expected header `{magic}`, found `{first}`"),
            ));
        }
        None => return Err(MimicError::parse(1, format!("empty file, expected `{magic}`"))),
    }
    Ok(lines.filter(|(_, l)| !l.starts_with('#')).collect())
}

/// Splits a `key = value` line; returns None when the line has no `=` or the
/// key part is not a single token.
fn split_kv(line: &str) -> Option<(&str, &str)> {
    let (key, value) = line.split_once('=')?;
    let key = key.trim();
    if key.is_empty() || key.chars().any(char::is_whitespace) {
        return None;
    }
    Some((key, value.trim()))
}

fn check_labels(labels: &[String]) -> Result<()> {
    for l in labels {
        if l.contains('=') || l == "constraint" {
            return Err(MimicError::BadLabels);
        }
    }
    Ok(())
}

fn parse_usize(line: usize, token: &str, what: &str) -> Result<usize> {
    token
        .parse()
        .map_err(|_| MimicError::parse(line, format!("bad {what} `{token}`")))
}

fn parse_scalar<S: Scalar>(line: usize, token: &str, what: &str) -> Result<S> {
    S::parse_text(token).ok_or_else(|| MimicError::parse(line, format!("bad {what} `{token}`")))
}

/// Parses whitespace-separated probabilities, checking sign and total mass.
fn parse_prob_row<S: Scalar>(line: usize, tokens: &[&str], want: usize, what: &str) -> Result<Array1<S>> {
    if tokens.len() != want {
        return Err(MimicError::parse(
            line,
            format!("{what} needs {want} entries, found {}", tokens.len()),
        ));
    }
    let mut row = Vec::with_capacity(want);
    for tok in tokens {
        let p: S = parse_scalar(line, tok, "probability")?;
        if !(p >= S::zero()) {
            return Err(MimicError::parse(
                line,
                format!("negative or non-finite probability `{tok}`"),
            ));
        }
        row.push(p);
    }
    let total = kahan_sum(row.iter().copied());
    if (total - S::one()).abs() > S::mass_tol() {
        return Err(MimicError::parse(
            line,
            format!("{what} sums to {}, expected 1", total.format_full()),
        ));
    }
    Ok(Array1::from_vec(row))
}

fn state_index(line: usize, states: &StateSpace, token: &str) -> Result<usize> {
    states
        .index_of(token)
        .ok_or_else(|| MimicError::parse(line, format!("unknown state label `{token}`")))
}

fn action_index(line: usize, actions: &ActionSpace, token: &str) -> Result<usize> {
    actions
        .index_of(token)
        .ok_or_else(|| MimicError::parse(line, format!("unknown action label `{token}`")))
}

// ---------------------------------------------------------------------------
// Path laws and constraint sets
// ---------------------------------------------------------------------------

/// Serializes a path law. Paths with zero probability are omitted; each line
/// lists the state (and action, when controlled) labels per time followed by
/// the path probability.
pub fn write_path_law<S: Scalar>(law: &PathLaw<S>) -> Result<String> {
    check_labels(law.states().labels())?;
    if let Some(acts) = law.actions() {
        check_labels(acts.labels())?;
    }
    let mut out = String::new();
    out.push_str(PATHLAW_MAGIC);
    out.push('\n');
    writeln!(out, "states = {}", law.states().labels().join(" ")).unwrap();
    if let Some(acts) = law.actions() {
        writeln!(out, "actions = {}", acts.labels().join(" ")).unwrap();
    }
    writeln!(out, "horizon = {}", law.horizon()).unwrap();
    let indexer = law.indexer();
    let mut tokens = Vec::with_capacity(2 * (law.horizon() + 1) + 1);
    for (code, &p) in law.probs().iter().enumerate() {
        if p == S::zero() {
            continue;
        }
        tokens.clear();
        for t in 0..=law.horizon() {
            tokens.push(law.states().label(indexer.state_at(code, t)).to_string());
            if let Some(acts) = law.actions() {
                tokens.push(acts.label(indexer.action_at(code, t)).to_string());
            }
        }
        tokens.push(p.format_full());
        writeln!(out, "{}", tokens.join(" ")).unwrap();
    }
    Ok(out)
}

fn parse_path_law_body<S: Scalar>(
    lines: &[(usize, &str)],
    allow_constraints: bool,
) -> Result<(PathLaw<S>, Vec<(usize, Array1<S>)>)> {
    let mut states: Option<(usize, StateSpace)> = None;
    let mut actions: Option<ActionSpace> = None;
    let mut horizon: Option<usize> = None;
    let mut cursor = 0;
    while cursor < lines.len() {
        let (n, line) = lines[cursor];
        let Some((key, value)) = split_kv(line) else { break };
        match key {
            "states" if states.is_none() => {
                let space = StateSpace::new(value.split_whitespace())
                    .map_err(|_| MimicError::parse(n, "bad state labels"))?;
                states = Some((n, space));
            }
            "actions" if actions.is_none() => {
                actions = Some(
                    ActionSpace::new(value.split_whitespace())
                        .map_err(|_| MimicError::parse(n, "bad action labels"))?,
                );
            }
            "horizon" if horizon.is_none() => {
                horizon = Some(parse_usize(n, value, "horizon")?);
            }
            "states" | "actions" | "horizon" => {
                return Err(MimicError::parse(n, format!("duplicate header `{key}`")));
            }
            other => {
                return Err(MimicError::parse(n, format!("unknown header key `{other}`")));
            }
        }
        cursor += 1;
    }
    let last_line = lines.last().map_or(1, |&(n, _)| n);
    let (states_line, states) =
        states.ok_or_else(|| MimicError::parse(last_line, "missing `states` header"))?;
    let horizon =
        horizon.ok_or_else(|| MimicError::parse(last_line, "missing `horizon` header"))?;
    let m = states.len();
    let num_actions = actions.as_ref().map_or(1, ActionSpace::len);
    // Indexer construction enforces the path-table size cap up front.
    let indexer = crate::path_measure::PathIndexer::new(m, num_actions, horizon)?;
    let mut probs = vec![S::zero(); indexer.count()];
    let mut seen: HashSet<usize> = HashSet::new();
    let mut constraints: Vec<(usize, Array1<S>)> = Vec::new();
    let mut constraint_times: HashSet<usize> = HashSet::new();
    let mut mass_line = states_line;
    let mut state_buf = Vec::with_capacity(horizon + 1);
    let mut action_buf = Vec::with_capacity(horizon + 1);
    for &(n, line) in &lines[cursor..] {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens[0] == "constraint" {
            if !allow_constraints {
                return Err(MimicError::parse(n, "constraint lines are not allowed here"));
            }
            if tokens.len() < 2 {
                return Err(MimicError::parse(n, "constraint line needs a time index"));
            }
            let t = parse_usize(n, tokens[1], "time index")?;
            if t > horizon {
                return Err(MimicError::parse(
                    n,
                    format!("constraint time {t} outside 0..={horizon}"),
                ));
            }
            if !constraint_times.insert(t) {
                return Err(MimicError::parse(n, format!("duplicate constraint for time {t}")));
            }
            let row = parse_prob_row(n, &tokens[2..], m, "constraint row")?;
            constraints.push((t, row));
            continue;
        }
        let per_time = if actions.is_some() { 2 } else { 1 };
        let want = per_time * (horizon + 1) + 1;
        if tokens.len() != want {
            return Err(MimicError::parse(
                n,
                format!("path line needs {want} tokens, found {}", tokens.len()),
            ));
        }
        state_buf.clear();
        action_buf.clear();
        for t in 0..=horizon {
            state_buf.push(state_index(n, &states, tokens[per_time * t])?);
            if let Some(acts) = &actions {
                action_buf.push(action_index(n, acts, tokens[per_time * t + 1])?);
            }
        }
        let p: S = parse_scalar(n, tokens[want - 1], "probability")?;
        if !(p >= S::zero()) {
            return Err(MimicError::parse(
                n,
                format!("negative or non-finite probability `{}`", tokens[want - 1]),
            ));
        }
        let code = indexer.encode(&state_buf, &action_buf);
        if !seen.insert(code) {
            return Err(MimicError::parse(n, "duplicate path line"));
        }
        probs[code] = p;
        mass_line = n;
    }
    let total = kahan_sum(probs.iter().copied());
    if (total - S::one()).abs() > S::mass_tol() {
        return Err(MimicError::parse(
            mass_line,
            format!("path probabilities sum to {}, expected 1", total.format_full()),
        ));
    }
    let law = PathLaw::new(states, actions, horizon, probs)?;
    Ok((law, constraints))
}

pub fn parse_path_law<S: Scalar>(text: &str) -> Result<PathLaw<S>> {
    let lines = body_lines(text, PATHLAW_MAGIC)?;
    let (law, _) = parse_path_law_body(&lines, false)?;
    Ok(law)
}

/// Serializes a constraint set as its reference law followed by one
/// `constraint <t> <probs>` line per pinned time.
pub fn write_constraint_set<S: Scalar>(set: &MarginalConstraintSet<S>) -> Result<String> {
    let mut out = write_path_law(set.reference())?;
    for (t, row) in set.constraints() {
        let probs: Vec<String> = row.iter().map(|p| p.format_full()).collect();
        writeln!(out, "constraint {t} {}", probs.join(" ")).unwrap();
    }
    Ok(out)
}

pub fn parse_constraint_set<S: Scalar>(text: &str) -> Result<MarginalConstraintSet<S>> {
    let lines = body_lines(text, PATHLAW_MAGIC)?;
    let (law, constraints) = parse_path_law_body(&lines, true)?;
    MarginalConstraintSet::new(law, constraints)
}

// ---------------------------------------------------------------------------
// Markov chain models
// ---------------------------------------------------------------------------

fn write_matrix_block<S: Scalar>(out: &mut String, marker: &str, t: usize, matrix: &Array2<S>) {
    writeln!(out, "{marker} {t}").unwrap();
    for row in matrix.rows() {
        let probs: Vec<String> = row.iter().map(|p| p.format_full()).collect();
        writeln!(out, "{}", probs.join(" ")).unwrap();
    }
}

/// Serializes a chain model: headers, the initial distribution, one
/// `kernel <t>` block per step, and `policy <t>` blocks when controlled.
pub fn write_markov_chain<S: Scalar>(chain: &MarkovChainModel<S>) -> Result<String> {
    check_labels(chain.states().labels())?;
    if let Some(acts) = chain.actions() {
        check_labels(acts.labels())?;
    }
    let mut out = String::new();
    out.push_str(CHAIN_MAGIC);
    out.push('\n');
    writeln!(out, "states = {}", chain.states().labels().join(" ")).unwrap();
    if let Some(acts) = chain.actions() {
        writeln!(out, "actions = {}", acts.labels().join(" ")).unwrap();
    }
    writeln!(out, "horizon = {}", chain.horizon()).unwrap();
    let probs: Vec<String> = chain.initial().iter().map(|p| p.format_full()).collect();
    writeln!(out, "init = {}", probs.join(" ")).unwrap();
    for (t, kernel) in chain.kernels().iter().enumerate() {
        write_matrix_block(&mut out, "kernel", t, kernel);
    }
    if let Some(policy) = chain.policy() {
        for (t, table) in policy.iter().enumerate() {
            write_matrix_block(&mut out, "policy", t, table);
        }
    }
    Ok(out)
}

/// Reads `count` consecutive probability rows of width `width`.
fn parse_matrix_rows<S: Scalar>(
    lines: &[(usize, &str)],
    cursor: &mut usize,
    count: usize,
    width: usize,
    what: &str,
) -> Result<Array2<S>> {
    let mut data = Vec::with_capacity(count * width);
    for _ in 0..count {
        let Some(&(n, line)) = lines.get(*cursor) else {
            let last = lines.last().map_or(1, |&(n, _)| n);
            return Err(MimicError::parse(last, format!("unexpected end of file in {what} block")));
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let row = parse_prob_row::<S>(n, &tokens, width, what)?;
        data.extend(row.iter().copied());
        *cursor += 1;
    }
    Ok(Array2::from_shape_vec((count, width), data).expect("row count fixed above"))
}

pub fn parse_markov_chain<S: Scalar>(text: &str) -> Result<MarkovChainModel<S>> {
    let lines = body_lines(text, CHAIN_MAGIC)?;
    let mut states: Option<StateSpace> = None;
    let mut actions: Option<ActionSpace> = None;
    let mut horizon: Option<usize> = None;
    let mut init: Option<Array1<S>> = None;
    let mut cursor = 0;
    while cursor < lines.len() {
        let (n, line) = lines[cursor];
        let Some((key, value)) = split_kv(line) else { break };
        match key {
            "states" if states.is_none() => {
                states = Some(
                    StateSpace::new(value.split_whitespace())
                        .map_err(|_| MimicError::parse(n, "bad state labels"))?,
                );
            }
            "actions" if actions.is_none() => {
                actions = Some(
                    ActionSpace::new(value.split_whitespace())
                        .map_err(|_| MimicError::parse(n, "bad action labels"))?,
                );
            }
            "horizon" if horizon.is_none() => horizon = Some(parse_usize(n, value, "horizon")?),
            "init" if init.is_none() => {
                let m = states
                    .as_ref()
                    .ok_or_else(|| MimicError::parse(n, "`init` before `states`"))?
                    .len();
                let tokens: Vec<&str> = value.split_whitespace().collect();
                init = Some(parse_prob_row(n, &tokens, m, "initial distribution")?);
            }
            "states" | "actions" | "horizon" | "init" => {
                return Err(MimicError::parse(n, format!("duplicate header `{key}`")));
            }
            other => return Err(MimicError::parse(n, format!("unknown header key `{other}`"))),
        }
        cursor += 1;
    }
    let last_line = lines.last().map_or(1, |&(n, _)| n);
    let states = states.ok_or_else(|| MimicError::parse(last_line, "missing `states` header"))?;
    let horizon = horizon.ok_or_else(|| MimicError::parse(last_line, "missing `horizon` header"))?;
    let init = init.ok_or_else(|| MimicError::parse(last_line, "missing `init` header"))?;
    let m = states.len();

    let mut kernels: Vec<Array2<S>> = Vec::with_capacity(horizon);
    let mut policy: Vec<Array2<S>> = Vec::new();
    while cursor < lines.len() {
        let (n, line) = lines[cursor];
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "kernel" if tokens.len() == 2 => {
                let t = parse_usize(n, tokens[1], "kernel index")?;
                if !policy.is_empty() || t != kernels.len() {
                    return Err(MimicError::parse(
                        n,
                        format!("expected `kernel {}` blocks in order", kernels.len()),
                    ));
                }
                cursor += 1;
                kernels.push(parse_matrix_rows(&lines, &mut cursor, m, m, "kernel row")?);
            }
            "policy" if tokens.len() == 2 => {
                let acts = actions
                    .as_ref()
                    .ok_or_else(|| MimicError::parse(n, "policy block without `actions` header"))?;
                let t = parse_usize(n, tokens[1], "policy index")?;
                if t != policy.len() {
                    return Err(MimicError::parse(
                        n,
                        format!("expected `policy {}` blocks in order", policy.len()),
                    ));
                }
                cursor += 1;
                policy.push(parse_matrix_rows(&lines, &mut cursor, m, acts.len(), "policy row")?);
            }
            other => {
                return Err(MimicError::parse(n, format!("unexpected line `{other} ...`")));
            }
        }
    }
    if kernels.len() != horizon {
        return Err(MimicError::parse(
            last_line,
            format!("found {} kernel blocks, horizon is {horizon}", kernels.len()),
        ));
    }
    match actions {
        Some(acts) => {
            if policy.len() != horizon + 1 {
                return Err(MimicError::parse(
                    last_line,
                    format!("found {} policy blocks, expected {}", policy.len(), horizon + 1),
                ));
            }
            MarkovChainModel::with_policy(states, acts, init, kernels, policy)
        }
        None => MarkovChainModel::new(states, init, kernels),
    }
}

// ---------------------------------------------------------------------------
// Controlled chains and cost tables
// ---------------------------------------------------------------------------

/// Serializes a stationary controlled chain: `dyn <state> <action>` rows for
/// the dynamics, `policy <state>` rows, and optional `cost <state> <action>
/// <value>` lines (zero entries omitted).
///
/// History-dependent controls have no table representation here; named
/// controls can appear in hand-written files via `control` lines but the
/// writer rejects them.
pub fn write_controlled_chain<S: Scalar>(
    chain: &ControlledChain<S>,
    cost: Option<&Array2<S>>,
) -> Result<String> {
    let ChainControl::Stationary(policy) = chain.control() else {
        return Err(MimicError::NonStationaryPolicy);
    };
    check_labels(chain.states().labels())?;
    check_labels(chain.actions().labels())?;
    let mut out = String::new();
    out.push_str(CONTROLLED_MAGIC);
    out.push('\n');
    writeln!(out, "states = {}", chain.states().labels().join(" ")).unwrap();
    writeln!(out, "actions = {}", chain.actions().labels().join(" ")).unwrap();
    let probs: Vec<String> = chain.initial().iter().map(|p| p.format_full()).collect();
    writeln!(out, "init = {}", probs.join(" ")).unwrap();
    for x in 0..chain.states().len() {
        for u in 0..chain.actions().len() {
            let row: Vec<String> = chain
                .transition_row(x, u)
                .iter()
                .map(|p| p.format_full())
                .collect();
            writeln!(
                out,
                "dyn {} {} {}",
                chain.states().label(x),
                chain.actions().label(u),
                row.join(" ")
            )
            .unwrap();
        }
    }
    for x in 0..chain.states().len() {
        let row: Vec<String> = policy.row(x).iter().map(|p| p.format_full()).collect();
        writeln!(out, "policy {} {}", chain.states().label(x), row.join(" ")).unwrap();
    }
    if let Some(cost) = cost {
        for x in 0..chain.states().len() {
            for u in 0..chain.actions().len() {
                if cost[[x, u]] == S::zero() {
                    continue;
                }
                writeln!(
                    out,
                    "cost {} {} {}",
                    chain.states().label(x),
                    chain.actions().label(u),
                    cost[[x, u]].format_full()
                )
                .unwrap();
            }
        }
    }
    Ok(out)
}

fn parse_named_control<S: Scalar>(
    n: usize,
    tokens: &[&str],
    states: &StateSpace,
    actions: &ActionSpace,
) -> Result<ChainControl<S>> {
    let m = states.len();
    let a = actions.len();
    match tokens {
        ["initial-state"] => Ok(ChainControl::History(Arc::new(InitialStateControl::new(m, a)))),
        ["running-max", state, below, above] => {
            let threshold = state_index(n, states, state)?;
            let below = action_index(n, actions, below)?;
            let above = action_index(n, actions, above)?;
            Ok(ChainControl::History(Arc::new(RunningMaxControl::new(
                m, a, threshold, below, above,
            ))))
        }
        ["seeded-table", seed, period] => {
            let seed: u64 = seed
                .parse()
                .map_err(|_| MimicError::parse(n, format!("bad seed `{seed}`")))?;
            let period = parse_usize(n, period, "period")?;
            Ok(ChainControl::History(Arc::new(SeededTableControl::<S>::new(
                seed, m, a, period,
            ))))
        }
        [name, ..] => Err(MimicError::parse(
            n,
            format!("unknown control `{name}` (expected initial-state, running-max, or seeded-table)"),
        )),
        [] => Err(MimicError::parse(n, "empty control line")),
    }
}

/// Parses a controlled chain plus its optional cost table. The control is
/// either a full set of `policy <state>` rows or a single named `control`
/// line; cost entries not listed default to zero.
pub fn parse_controlled_chain<S: Scalar>(text: &str) -> Result<(ControlledChain<S>, Option<Array2<S>>)> {
    let lines = body_lines(text, CONTROLLED_MAGIC)?;
    let mut states: Option<StateSpace> = None;
    let mut actions: Option<ActionSpace> = None;
    let mut init: Option<Array1<S>> = None;
    let mut cursor = 0;
    while cursor < lines.len() {
        let (n, line) = lines[cursor];
        let Some((key, value)) = split_kv(line) else { break };
        match key {
            "states" if states.is_none() => {
                states = Some(
                    StateSpace::new(value.split_whitespace())
                        .map_err(|_| MimicError::parse(n, "bad state labels"))?,
                );
            }
            "actions" if actions.is_none() => {
                actions = Some(
                    ActionSpace::new(value.split_whitespace())
                        .map_err(|_| MimicError::parse(n, "bad action labels"))?,
                );
            }
            "init" if init.is_none() => {
                let m = states
                    .as_ref()
                    .ok_or_else(|| MimicError::parse(n, "`init` before `states`"))?
                    .len();
                let tokens: Vec<&str> = value.split_whitespace().collect();
                init = Some(parse_prob_row(n, &tokens, m, "initial distribution")?);
            }
            "states" | "actions" | "init" => {
                return Err(MimicError::parse(n, format!("duplicate header `{key}`")));
            }
            other => return Err(MimicError::parse(n, format!("unknown header key `{other}`"))),
        }
        cursor += 1;
    }
    let last_line = lines.last().map_or(1, |&(n, _)| n);
    let states = states.ok_or_else(|| MimicError::parse(last_line, "missing `states` header"))?;
    let actions = actions.ok_or_else(|| MimicError::parse(last_line, "missing `actions` header"))?;
    let init = init.ok_or_else(|| MimicError::parse(last_line, "missing `init` header"))?;
    let m = states.len();
    let a = actions.len();

    let mut dynamics = Array2::<S>::zeros((m * a, m));
    let mut dyn_seen = vec![false; m * a];
    let mut policy_rows: Vec<Option<Array1<S>>> = vec![None; m];
    let mut any_policy = false;
    let mut control: Option<ChainControl<S>> = None;
    let mut cost = Array2::<S>::zeros((m, a));
    let mut cost_seen = vec![false; m * a];
    let mut any_cost = false;
    for &(n, line) in &lines[cursor..] {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "dyn" => {
                if tokens.len() != 3 + m {
                    return Err(MimicError::parse(
                        n,
                        format!("dyn line needs {} tokens, found {}", 3 + m, tokens.len()),
                    ));
                }
                let x = state_index(n, &states, tokens[1])?;
                let u = action_index(n, &actions, tokens[2])?;
                if std::mem::replace(&mut dyn_seen[x * a + u], true) {
                    return Err(MimicError::parse(
                        n,
                        format!("duplicate dyn row for state `{}` action `{}`", tokens[1], tokens[2]),
                    ));
                }
                let row = parse_prob_row::<S>(n, &tokens[3..], m, "dyn row")?;
                dynamics.row_mut(x * a + u).assign(&row);
            }
            "policy" => {
                if control.is_some() {
                    return Err(MimicError::parse(n, "both policy rows and a control line"));
                }
                if tokens.len() != 2 + a {
                    return Err(MimicError::parse(
                        n,
                        format!("policy line needs {} tokens, found {}", 2 + a, tokens.len()),
                    ));
                }
                let x = state_index(n, &states, tokens[1])?;
                if policy_rows[x].is_some() {
                    return Err(MimicError::parse(
                        n,
                        format!("duplicate policy row for state `{}`", tokens[1]),
                    ));
                }
                policy_rows[x] = Some(parse_prob_row(n, &tokens[2..], a, "policy row")?);
                any_policy = true;
            }
            "control" => {
                if any_policy {
                    return Err(MimicError::parse(n, "both policy rows and a control line"));
                }
                if control.is_some() {
                    return Err(MimicError::parse(n, "more than one control line"));
                }
                control = Some(parse_named_control(n, &tokens[1..], &states, &actions)?);
            }
            "cost" => {
                if tokens.len() != 4 {
                    return Err(MimicError::parse(
                        n,
                        format!("cost line needs 4 tokens, found {}", tokens.len()),
                    ));
                }
                let x = state_index(n, &states, tokens[1])?;
                let u = action_index(n, &actions, tokens[2])?;
                if std::mem::replace(&mut cost_seen[x * a + u], true) {
                    return Err(MimicError::parse(
                        n,
                        format!("duplicate cost entry for state `{}` action `{}`", tokens[1], tokens[2]),
                    ));
                }
                let v: S = parse_scalar(n, tokens[3], "cost value")?;
                if !v.is_finite() {
                    return Err(MimicError::parse(n, format!("non-finite cost `{}`", tokens[3])));
                }
                cost[[x, u]] = v;
                any_cost = true;
            }
            other => return Err(MimicError::parse(n, format!("unexpected line `{other} ...`"))),
        }
    }
    if let Some(missing) = dyn_seen.iter().position(|&s| !s) {
        return Err(MimicError::parse(
            last_line,
            format!(
                "missing dyn row for state `{}` action `{}`",
                states.label(missing / a),
                actions.label(missing % a)
            ),
        ));
    }
    let control = if any_policy {
        let mut table = Array2::<S>::zeros((m, a));
        for (x, row) in policy_rows.into_iter().enumerate() {
            let row = row.ok_or_else(|| {
                MimicError::parse(last_line, format!("missing policy row for state `{}`", states.label(x)))
            })?;
            table.row_mut(x).assign(&row);
        }
        ChainControl::Stationary(table)
    } else {
        control.ok_or_else(|| {
            MimicError::parse(last_line, "no control: expected policy rows or a control line")
        })?
    };
    let chain = ControlledChain::new(states, actions, init, dynamics, control)?;
    Ok((chain, any_cost.then_some(cost)))
}

// ---------------------------------------------------------------------------
// Simulation configs
// ---------------------------------------------------------------------------

/// Which control a simulation run applies to the registered model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdeControlKind {
    /// The model's own control.
    Fixture,
    /// Uniform action draws regardless of the path; a deliberate mismatch.
    Uniform,
}

/// Keyword config for a simulation run; the `model` string names a
/// registered model, everything else tunes the run.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeConfig {
    pub model: String,
    pub control: SdeControlKind,
    pub n_paths: usize,
    pub seed: Option<u64>,
    pub bins: usize,
    pub slices: usize,
    pub level: f64,
    pub threads: usize,
    /// Grid overrides; `None` keeps the model's own discretization.
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
}

impl SdeConfig {
    pub fn new(model: impl Into<String>) -> Self {
        SdeConfig {
            model: model.into(),
            control: SdeControlKind::Fixture,
            n_paths: 10_000,
            seed: None,
            bins: 32,
            slices: crate::sde::DEFAULT_SLICES,
            level: 0.01,
            threads: 0,
            dt: None,
            horizon: None,
        }
    }
}

pub fn write_sde_config(config: &SdeConfig) -> String {
    let mut out = String::new();
    out.push_str(SDECONFIG_MAGIC);
    out.push('\n');
    writeln!(out, "model = {}", config.model).unwrap();
    let control = match config.control {
        SdeControlKind::Fixture => "fixture",
        SdeControlKind::Uniform => "uniform",
    };
    writeln!(out, "control = {control}").unwrap();
    writeln!(out, "n = {}", config.n_paths).unwrap();
    if let Some(seed) = config.seed {
        writeln!(out, "seed = {seed}").unwrap();
    }
    writeln!(out, "bins = {}", config.bins).unwrap();
    writeln!(out, "slices = {}", config.slices).unwrap();
    writeln!(out, "level = {}", config.level.format_full()).unwrap();
    writeln!(out, "threads = {}", config.threads).unwrap();
    if let Some(dt) = config.dt {
        writeln!(out, "dt = {}", dt.format_full()).unwrap();
    }
    if let Some(horizon) = config.horizon {
        writeln!(out, "horizon = {}", horizon.format_full()).unwrap();
    }
    out
}

pub fn parse_sde_config(text: &str) -> Result<SdeConfig> {
    let lines = body_lines(text, SDECONFIG_MAGIC)?;
    let mut config: Option<SdeConfig> = None;
    let mut seen: HashSet<&str> = HashSet::new();
    // `model` must come first so defaults exist before overrides land.
    for &(n, line) in &lines {
        let Some((key, value)) = split_kv(line) else {
            return Err(MimicError::parse(n, format!("expected `key = value`, found `{line}`")));
        };
        if !seen.insert(key) {
            return Err(MimicError::parse(n, format!("duplicate key `{key}`")));
        }
        if key == "model" {
            config = Some(SdeConfig::new(value));
            continue;
        }
        let Some(config) = config.as_mut() else {
            return Err(MimicError::parse(n, "`model` must be the first entry"));
        };
        match key {
            "control" => {
                config.control = match value {
                    "fixture" => SdeControlKind::Fixture,
                    "uniform" => SdeControlKind::Uniform,
                    other => {
                        return Err(MimicError::parse(
                            n,
                            format!("bad control `{other}` (expected fixture or uniform)"),
                        ));
                    }
                };
            }
            "n" => config.n_paths = parse_usize(n, value, "path count")?,
            "seed" => {
                config.seed = Some(
                    value
                        .parse()
                        .map_err(|_| MimicError::parse(n, format!("bad seed `{value}`")))?,
                );
            }
            "bins" => config.bins = parse_usize(n, value, "bin count")?,
            "slices" => config.slices = parse_usize(n, value, "slice count")?,
            "level" => config.level = parse_scalar(n, value, "level")?,
            "threads" => config.threads = parse_usize(n, value, "thread count")?,
            "dt" => config.dt = Some(parse_scalar(n, value, "time step")?),
            "horizon" => config.horizon = Some(parse_scalar(n, value, "horizon")?),
            other => return Err(MimicError::parse(n, format!("unknown key `{other}`"))),
        }
    }
    let last_line = lines.last().map_or(1, |&(n, _)| n);
    config.ok_or_else(|| MimicError::parse(last_line, "missing `model` entry"))
}

// ---------------------------------------------------------------------------
// Marginal samples
// ---------------------------------------------------------------------------

/// Serializes per-slice marginal samples as CSV rows
/// `step,component,time,v1,...,vN` with values sorted ascending; the rows
/// double as empirical CDF plot data (the k-th value has rank k/N).
pub fn write_marginals<S: Scalar>(marginals: &EmpiricalMarginals<S>) -> String {
    let mut out = String::new();
    out.push_str(MARGINALS_MAGIC);
    out.push('\n');
    writeln!(out, "dim = {}", marginals.dim()).unwrap();
    writeln!(out, "paths = {}", marginals.n_paths()).unwrap();
    for (slice, (&step, &time)) in marginals
        .slice_steps()
        .iter()
        .zip(marginals.slice_times())
        .enumerate()
    {
        for component in 0..marginals.dim() {
            write!(out, "{step},{component},{}", time.format_full()).unwrap();
            for v in marginals.samples(slice, component) {
                write!(out, ",{}", v.format_full()).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_marginals<S: Scalar>(text: &str) -> Result<EmpiricalMarginals<S>> {
    let lines = body_lines(text, MARGINALS_MAGIC)?;
    let mut dim: Option<usize> = None;
    let mut paths: Option<usize> = None;
    let mut cursor = 0;
    while cursor < lines.len() {
        let (n, line) = lines[cursor];
        let Some((key, value)) = split_kv(line) else { break };
        match key {
            "dim" if dim.is_none() => dim = Some(parse_usize(n, value, "dimension")?),
            "paths" if paths.is_none() => paths = Some(parse_usize(n, value, "path count")?),
            "dim" | "paths" => return Err(MimicError::parse(n, format!("duplicate header `{key}`"))),
            other => return Err(MimicError::parse(n, format!("unknown header key `{other}`"))),
        }
        cursor += 1;
    }
    let last_line = lines.last().map_or(1, |&(n, _)| n);
    let dim = dim.ok_or_else(|| MimicError::parse(last_line, "missing `dim` header"))?;
    let paths = paths.ok_or_else(|| MimicError::parse(last_line, "missing `paths` header"))?;

    let mut slice_steps: Vec<usize> = Vec::new();
    let mut slice_times: Vec<S> = Vec::new();
    let mut samples: Vec<Vec<S>> = Vec::new();
    for &(n, line) in &lines[cursor..] {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + paths {
            return Err(MimicError::parse(
                n,
                format!("sample row needs {} fields, found {}", 3 + paths, fields.len()),
            ));
        }
        let step = parse_usize(n, fields[0], "step index")?;
        let component = parse_usize(n, fields[1], "component index")?;
        let time: S = parse_scalar(n, fields[2], "slice time")?;
        let expected_component = samples.len() % dim;
        if component != expected_component {
            return Err(MimicError::parse(
                n,
                format!("expected component {expected_component}, found {component}"),
            ));
        }
        if component == 0 {
            slice_steps.push(step);
            slice_times.push(time);
        } else if slice_steps.last() != Some(&step) || slice_times.last() != Some(&time) {
            return Err(MimicError::parse(n, "row grid disagrees with its slice"));
        }
        let mut row = Vec::with_capacity(paths);
        for tok in &fields[3..] {
            let v: S = parse_scalar(n, tok, "sample value")?;
            if !v.is_finite() {
                return Err(MimicError::parse(n, format!("non-finite sample `{tok}`")));
            }
            row.push(v);
        }
        samples.push(row);
    }
    if samples.len() % dim != 0 {
        return Err(MimicError::parse(last_line, "incomplete final slice"));
    }
    EmpiricalMarginals::from_samples(dim, slice_steps, slice_times, samples)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Key-value run report. The timestamp is the only entry that varies between
/// identical runs; [`strip_timestamp`] removes it for byte comparisons.
#[derive(Debug, Clone)]
pub struct Report {
    timestamp: u64,
    entries: Vec<(String, String)>,
}

impl Report {
    /// Starts a report for the named command, stamped with Unix time.
    pub fn new(command: impl Into<String>) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let mut report = Report {
            timestamp,
            entries: Vec::new(),
        };
        report.push("command", command.into());
        report
    }

    /// Appends one entry; newlines in the value would corrupt the format and
    /// are replaced by spaces.
    pub fn push(&mut self, key: impl Into<String>, value: impl std::fmt::Display) {
        let value = value.to_string().replace('\n', " ");
        self.entries.push((key.into(), value));
    }

    /// Appends a float entry in full round-trip precision.
    pub fn push_scalar<S: Scalar>(&mut self, key: impl Into<String>, value: S) {
        self.push(key, value.format_full());
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(REPORT_MAGIC);
        out.push('\n');
        writeln!(out, "timestamp = {}", self.timestamp).unwrap();
        for (key, value) in &self.entries {
            writeln!(out, "{key} = {value}").unwrap();
        }
        out
    }
}

/// Drops `timestamp = ...` lines so two reports from identical runs compare
/// byte for byte.
pub fn strip_timestamp(text: &str) -> String {
    text.lines()
        .filter(|line| {
            split_kv(line).is_none_or(|(key, _)| key != "timestamp")
        })
        .map(|line| format!("{line}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::occupation::{occupation_measure, OccupationMeasure};
    use crate::sde::{simulate_opts, SimOptions};

    fn total_variation(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
    }

    #[test]
    fn path_law_round_trip_is_bit_stable() {
        let laws = [
            fixtures::memory_chain::<f64>(),
            fixtures::random_path_law(11, 3, 3, 0.4),
            fixtures::random_controlled_path_law(5, 2, 2, 2),
        ];
        for law in &laws {
            let text = write_path_law(law).unwrap();
            let back: PathLaw<f64> = parse_path_law(&text).unwrap();
            assert_eq!(&back, law);
            assert_eq!(write_path_law(&back).unwrap(), text);
        }
    }

    #[test]
    fn sparse_laws_omit_zero_paths() {
        let law = fixtures::random_path_law(3, 2, 2, 0.7);
        let text = write_path_law(&law).unwrap();
        let nonzero = law.probs().iter().filter(|&&p| p != 0.0).count();
        let body = text.lines().filter(|l| !l.starts_with('#') && !l.contains('=')).count();
        assert_eq!(body, nonzero);
    }

    #[test]
    fn markov_chain_round_trip_is_bit_stable() {
        let plain = fixtures::random_markov_chain(7, 3, 4);
        let text = write_markov_chain(&plain).unwrap();
        let back: MarkovChainModel<f64> = parse_markov_chain(&text).unwrap();
        assert_eq!(&back, &plain);
        assert_eq!(write_markov_chain(&back).unwrap(), text);

        // Controlled chain: mimic of a controlled law carries policy tables.
        let law = fixtures::random_controlled_path_law(9, 2, 2, 2);
        let controlled = law.markov_mimic();
        assert!(controlled.policy().is_some());
        let text = write_markov_chain(&controlled).unwrap();
        let back: MarkovChainModel<f64> = parse_markov_chain(&text).unwrap();
        assert_eq!(&back, &controlled);
    }

    #[test]
    fn constraint_set_round_trip_is_bit_stable() {
        let (set, _) = fixtures::random_constraint_instance(13, 2, 3, 2);
        let text = write_constraint_set(&set).unwrap();
        let back: MarginalConstraintSet<f64> = parse_constraint_set(&text).unwrap();
        assert_eq!(back.reference(), set.reference());
        assert_eq!(back.constraints().len(), set.constraints().len());
        for ((ta, ra), (tb, rb)) in back.constraints().iter().zip(set.constraints()) {
            assert_eq!(ta, tb);
            assert_eq!(ra, rb);
        }
        assert_eq!(write_constraint_set(&back).unwrap(), text);
    }

    #[test]
    fn controlled_chain_round_trip_preserves_occupation() {
        let chain = fixtures::fixture_hd();
        let occ: OccupationMeasure<f64> = occupation_measure(&chain, 0.5, 1e-12).unwrap();
        let mimic = crate::occupation::stationary_mimic(&occ, &chain).unwrap();
        let cost = fixtures::random_cost(2, 2, 2);

        let text = write_controlled_chain(&mimic, Some(&cost)).unwrap();
        let (back, cost_back) = parse_controlled_chain::<f64>(&text).unwrap();
        assert_eq!(cost_back.as_ref(), Some(&cost));
        assert_eq!(back.initial(), mimic.initial());
        assert_eq!(back.dynamics(), mimic.dynamics());
        // Bit-identical inputs give bit-identical occupation measures; the
        // original's history-route sum is only close up to its truncation.
        let occ_back = occupation_measure(&back, 0.5, 1e-12).unwrap();
        let occ_mimic = occupation_measure(&mimic, 0.5, 1e-12).unwrap();
        assert_eq!(occ_back.joint, occ_mimic.joint);
        assert!(total_variation(&occ_back.joint, &occ.joint) <= 1e-10);
        assert_eq!(write_controlled_chain(&back, Some(&cost)).unwrap(), text);
    }

    #[test]
    fn named_control_lines_build_the_history_chains() {
        let text = "# controlledchain v1\n\
                    states = 0 1\n\
                    actions = 0 1\n\
                    init = 5e-1 5e-1\n\
                    dyn 0 0 9e-1 1e-1\n\
                    dyn 0 1 3e-1 7e-1\n\
                    dyn 1 0 2e-1 8e-1\n\
                    dyn 1 1 6e-1 4e-1\n\
                    control initial-state\n";
        let (chain, cost) = parse_controlled_chain::<f64>(text).unwrap();
        assert!(cost.is_none());
        let direct = fixtures::fixture_hd();
        let occ = occupation_measure(&chain, 0.5, 1e-12).unwrap();
        let occ_direct = occupation_measure(&direct, 0.5, 1e-12).unwrap();
        assert!(total_variation(&occ.joint, &occ_direct.joint) <= 1e-15);

        // And a history chain cannot be written back.
        assert!(matches!(
            write_controlled_chain(&chain, None),
            Err(MimicError::NonStationaryPolicy)
        ));

        for control in ["control running-max 1 0 1\n", "control seeded-table 42 2\n"] {
            let text = text.replace("control initial-state\n", control);
            let (chain, _) = parse_controlled_chain::<f64>(&text).unwrap();
            assert!(occupation_measure(&chain, 0.5, 1e-12).is_ok());
        }
    }

    #[test]
    fn sde_config_round_trips() {
        let mut config = SdeConfig::new("running-max");
        config.seed = Some(7);
        config.n_paths = 4096;
        config.control = SdeControlKind::Uniform;
        config.dt = Some(1.0 / 256.0);
        let text = write_sde_config(&config);
        let back = parse_sde_config(&text).unwrap();
        assert_eq!(back, config);

        let minimal = parse_sde_config("# sdeconfig v1\nmodel = birth-death\n").unwrap();
        assert_eq!(minimal, SdeConfig::new("birth-death"));
    }

    #[test]
    fn marginals_round_trip_is_bit_stable() {
        let model = fixtures::running_max_diffusion();
        let run = simulate_opts(
            &model,
            200,
            9,
            SimOptions {
                threads: 2,
                slices: 4,
            },
        )
        .unwrap();
        let text = write_marginals(&run.marginals);
        let back: EmpiricalMarginals<f64> = parse_marginals(&text).unwrap();
        assert_eq!(back, run.marginals);
        assert_eq!(write_marginals(&back), text);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let line_of = |err: MimicError| match err {
            MimicError::Parse { line, .. } => line,
            other => panic!("expected parse error, got {other:?}"),
        };

        // Wrong magic.
        let err = parse_path_law::<f64>("# markovchain v1\n").unwrap_err();
        assert_eq!(line_of(err), 1);

        // Unknown state label on the second path line.
        let text = "# pathlaw v1\nstates = a b\nhorizon = 1\na a 5e-1\na c 5e-1\n";
        assert_eq!(line_of(parse_path_law::<f64>(text).unwrap_err()), 5);

        // Mass off by 0.1: flagged at the last path line.
        let text = "# pathlaw v1\nstates = a b\nhorizon = 1\na a 5e-1\na b 4e-1\n";
        let err = parse_path_law::<f64>(text).unwrap_err();
        assert!(err.to_string().contains("line 5"), "{err}");
        assert!(err.to_string().contains("sum"), "{err}");

        // Duplicate path line.
        let text = "# pathlaw v1\nstates = a b\nhorizon = 1\na a 5e-1\na a 5e-1\n";
        assert_eq!(line_of(parse_path_law::<f64>(text).unwrap_err()), 5);

        // Constraint line outside a constraint file.
        let text = "# pathlaw v1\nstates = a b\nhorizon = 1\na a 1e0\nconstraint 0 1e0 0e0\n";
        assert_eq!(line_of(parse_path_law::<f64>(text).unwrap_err()), 5);

        // Bad constraint row mass.
        let text = "# pathlaw v1\nstates = a b\nhorizon = 1\na a 1e0\nconstraint 1 5e-1 4e-1\n";
        assert_eq!(line_of(parse_constraint_set::<f64>(text).unwrap_err()), 5);

        // Kernel row with the wrong width.
        let text = "# markovchain v1\nstates = a b\nhorizon = 1\ninit = 1e0 0e0\nkernel 0\n1e0\n1e0 0e0\n";
        assert_eq!(line_of(parse_markov_chain::<f64>(text).unwrap_err()), 6);

        // Missing dyn row reported with the state and action.
        let text = "# controlledchain v1\nstates = 0 1\nactions = u\ninit = 1e0 0e0\n\
                    dyn 0 u 1e0 0e0\npolicy 0 1e0\npolicy 1 1e0\n";
        let err = parse_controlled_chain::<f64>(text).unwrap_err();
        assert!(err.to_string().contains("missing dyn row"), "{err}");

        // Unknown named control.
        let text = "# controlledchain v1\nstates = 0\nactions = u\ninit = 1e0\n\
                    dyn 0 u 1e0\ncontrol sliding-window 3\n";
        assert_eq!(line_of(parse_controlled_chain::<f64>(text).unwrap_err()), 6);

        // Unknown config key.
        let text = "# sdeconfig v1\nmodel = running-max\nburn_in = 5\n";
        assert_eq!(line_of(parse_sde_config(text).unwrap_err()), 3);
    }

    #[test]
    fn reports_render_and_strip_timestamps() {
        let mut report = Report::new("occupation");
        report.push("fixture", "fixture-hd");
        report.push_scalar("beta", 0.5_f64);
        report.push("verdict", "pass");
        let text = report.render();
        assert!(text.starts_with("# report v1\ntimestamp = "));
        assert!(text.contains("command = occupation\n"));
        assert!(text.contains("beta = 5e-1\n"));

        let stripped = strip_timestamp(&text);
        assert!(!stripped.contains("timestamp"));
        let mut again = Report::new("occupation");
        again.push("fixture", "fixture-hd");
        again.push_scalar("beta", 0.5_f64);
        again.push("verdict", "pass");
        assert_eq!(strip_timestamp(&again.render()), stripped);
    }

    #[test]
    fn labels_that_break_the_grammar_are_rejected() {
        let states = StateSpace::new(["a=b", "c"]).unwrap();
        let law = PathLaw::<f64>::uncontrolled(states, 0, vec![1.0, 0.0]).unwrap();
        assert!(matches!(write_path_law(&law), Err(MimicError::BadLabels)));

        let states = StateSpace::new(["constraint", "c"]).unwrap();
        let law = PathLaw::<f64>::uncontrolled(states, 0, vec![1.0, 0.0]).unwrap();
        assert!(matches!(write_path_law(&law), Err(MimicError::BadLabels)));
    }
}
