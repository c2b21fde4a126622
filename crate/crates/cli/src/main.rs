//! Command-line front end: load a fixture or input file, run one pipeline
//! end to end, print a report, optionally write artifacts.
//!
//! Exit codes: 0 all checks passed, 1 checks ran and failed, 2 bad input or
//! configuration.

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::{Array1, Array2};

use markov_mimic::entropy_min::MarginalConstraintSet;
use markov_mimic::fixtures;
use markov_mimic::occupation::{
    occupation_measure, resolvent_check, state_marginals, stationary_mimic,
};
use markov_mimic::path_measure::{is_markov_law, is_markov_point, markovianize, relative_entropy};
use markov_mimic::sde::{
    compare_marginals, project_control_with, simulate_mimic_opts, simulate_opts, ProjectedPolicy,
    SdeProcess, SimOptions, DEFAULT_MIN_COUNT,
};
use markov_mimic::textio::{self, Report, SdeConfig, SdeControlKind};
use markov_mimic::{ControlledChain64, MimicError, PathLaw64, Scalar};

#[derive(Parser)]
#[command(
    name = "markov-mimic",
    version,
    about = "Build and verify Markov mimics of processes with memory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Built-in fixture name
    #[arg(value_name = "FIXTURE")]
    fixture_pos: Option<String>,

    /// Built-in fixture name (alternative to the positional form)
    #[arg(long, conflicts_with = "fixture_pos")]
    fixture: Option<String>,

    /// Input file; the expected format depends on the subcommand
    #[arg(long, conflicts_with_all = ["fixture_pos", "fixture"])]
    input: Option<PathBuf>,

    /// Directory for the report and artifact files (created if absent)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the Markov chain matching all marginals and consecutive pairs
    Mimic {
        #[command(flatten)]
        source: Source,
        /// Largest tolerated marginal gap
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Force one interior time to be a Markov point, keeping every marginal
    Markovianize {
        #[command(flatten)]
        source: Source,
        /// The time to pin
        #[arg(long)]
        s: usize,
        /// Largest tolerated marginal gap
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Minimize relative entropy under marginal constraints
    EntropyMin {
        #[command(flatten)]
        source: Source,
        /// Constraint residual target, also the entropy check tolerance
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Reproduce a discounted occupation measure with a stationary policy
    Occupation {
        #[command(flatten)]
        source: Source,
        /// Discount factor in (0, 1)
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        /// Largest tolerated occupation/resolvent gap
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Simulate, project the control onto the state, re-simulate, compare
    SdeMimic {
        #[command(flatten)]
        source: Source,
        /// RNG seed (required; a config file may also supply it)
        #[arg(long)]
        seed: Option<u64>,
        /// Number of Monte Carlo paths
        #[arg(long)]
        n: Option<usize>,
        /// Worker threads for simulation; 0 picks the hardware default
        #[arg(long)]
        threads: Option<usize>,
        /// Family-wise test level
        #[arg(long)]
        tol: Option<f64>,
    },
}

enum CliError {
    Usage(String),
    Lib(MimicError),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Lib(err) => write!(f, "{err}"),
        }
    }
}

impl From<MimicError> for CliError {
    fn from(err: MimicError) -> Self {
        CliError::Lib(err)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<bool, CliError> {
    match command {
        Command::Mimic { source, tol } => run_mimic(&source, tol),
        Command::Markovianize { source, s, tol } => run_markovianize(&source, s, tol),
        Command::EntropyMin { source, tol } => run_entropy_min(&source, tol),
        Command::Occupation { source, beta, tol } => run_occupation(&source, beta, tol),
        Command::SdeMimic {
            source,
            seed,
            n,
            threads,
            tol,
        } => run_sde_mimic(&source, seed, n, threads, tol),
    }
}

impl Source {
    fn fixture_name(&self) -> Option<&str> {
        self.fixture_pos.as_deref().or(self.fixture.as_deref())
    }

    fn describe(&self) -> String {
        match (self.fixture_name(), &self.input) {
            (Some(name), _) => name.to_string(),
            (None, Some(path)) => path.display().to_string(),
            (None, None) => "<unset>".to_string(),
        }
    }

    fn read_input(&self) -> Result<String, CliError> {
        let path = self.input.as_ref().expect("checked by caller");
        fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
    }

    fn require_some(&self) -> Result<(), CliError> {
        if self.fixture_name().is_none() && self.input.is_none() {
            return Err(usage("give a fixture name or --input <file>"));
        }
        Ok(())
    }
}

const FIXTURES: &[&str] = &[
    "memory-chain",
    "already-markov",
    "fixture-hd",
    "running-max",
    "birth-death",
];

fn unknown_fixture(name: &str) -> CliError {
    usage(format!(
        "unknown fixture `{name}`; available: {}",
        FIXTURES.join(", ")
    ))
}

fn load_path_law(source: &Source) -> Result<PathLaw64, CliError> {
    source.require_some()?;
    match source.fixture_name() {
        Some("memory-chain") => Ok(fixtures::memory_chain()),
        Some("already-markov") => Ok(fixtures::already_markov()),
        Some(name) if FIXTURES.contains(&name) => {
            Err(usage(format!("fixture `{name}` is not a path law")))
        }
        Some(name) => Err(unknown_fixture(name)),
        None => Ok(textio::parse_path_law(&source.read_input()?)?),
    }
}

fn load_controlled_chain(
    source: &Source,
) -> Result<(ControlledChain64, Option<Array2<f64>>), CliError> {
    source.require_some()?;
    match source.fixture_name() {
        Some("fixture-hd") => Ok((fixtures::fixture_hd(), None)),
        Some(name) if FIXTURES.contains(&name) => {
            Err(usage(format!("fixture `{name}` is not a controlled chain")))
        }
        Some(name) => Err(unknown_fixture(name)),
        None => Ok(textio::parse_controlled_chain(&source.read_input()?)?),
    }
}

/// The built-in constraint instance: lazy-walk reference, pinned to the
/// memory chain's (uniform) marginals at every time. The memory chain is a
/// feasible non-Markov law, so its entropy bounds the minimum from above.
fn memory_chain_constraints() -> Result<(MarginalConstraintSet<f64>, PathLaw64), CliError> {
    let target: PathLaw64 = fixtures::memory_chain();
    let reference = fixtures::lazy_uniform_walk::<f64>(2, target.horizon())
        .law(target.horizon())?;
    let constraints = (0..=target.horizon())
        .map(|t| Ok((t, target.marginal(t)?)))
        .collect::<Result<Vec<_>, MimicError>>()?;
    Ok((MarginalConstraintSet::new(reference, constraints)?, target))
}

fn load_constraint_set(
    source: &Source,
) -> Result<(MarginalConstraintSet<f64>, Option<PathLaw64>), CliError> {
    source.require_some()?;
    match source.fixture_name() {
        Some("memory-chain") => {
            let (set, target) = memory_chain_constraints()?;
            Ok((set, Some(target)))
        }
        Some(name) if FIXTURES.contains(&name) => {
            Err(usage(format!("fixture `{name}` has no constraint instance")))
        }
        Some(name) => Err(unknown_fixture(name)),
        None => Ok((textio::parse_constraint_set(&source.read_input()?)?, None)),
    }
}

fn join_probs(row: &Array1<f64>) -> String {
    row.iter()
        .map(|p| p.format_full())
        .collect::<Vec<_>>()
        .join(",")
}

fn max_abs_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn verdict(report: &mut Report, pass: bool) {
    report.push("verdict", if pass { "pass" } else { "FAIL" });
}

/// Prints the report and, with --out, writes it plus any artifact files.
fn emit(
    source: &Source,
    report: &Report,
    artifacts: &[(&str, String)],
) -> Result<(), CliError> {
    let text = report.render();
    print!("{text}");
    if let Some(dir) = &source.out {
        fs::create_dir_all(dir).map_err(MimicError::from)?;
        fs::write(dir.join("report.txt"), &text).map_err(MimicError::from)?;
        for (name, content) in artifacts {
            fs::write(dir.join(name), content).map_err(MimicError::from)?;
        }
    }
    Ok(())
}

fn run_mimic(source: &Source, tol: f64) -> Result<bool, CliError> {
    let law = load_path_law(source)?;
    let chain = law.markov_mimic();
    let mimic_law = chain.law(law.horizon())?;

    let mut report = Report::new("mimic");
    report.push("source", source.describe());
    report.push_scalar("tol", tol);
    report.push("horizon", law.horizon());
    let mut max_gap = 0.0f64;
    for t in 0..=law.horizon() {
        let original = law.marginal(t)?;
        let copy = mimic_law.marginal(t)?;
        let gap = max_abs_gap(original.as_slice().unwrap(), copy.as_slice().unwrap());
        max_gap = max_gap.max(gap);
        report.push(
            format!("marginal {t}"),
            format!("{} vs {} gap {}", join_probs(&original), join_probs(&copy), gap.format_full()),
        );
    }
    let mut max_pair_gap = 0.0f64;
    for t in 0..law.horizon() {
        let original = law.pair_marginal(t)?;
        let copy = mimic_law.pair_marginal(t)?;
        let gap = max_abs_gap(original.as_slice().unwrap(), copy.as_slice().unwrap());
        max_pair_gap = max_pair_gap.max(gap);
        report.push(format!("pair {t}"), format!("gap {}", gap.format_full()));
    }
    let mut max_action_gap = 0.0f64;
    if law.is_controlled() {
        for t in 0..=law.horizon() {
            let original = law.state_action_marginal(t)?;
            let copy = mimic_law.state_action_marginal(t)?;
            let gap = max_abs_gap(original.as_slice().unwrap(), copy.as_slice().unwrap());
            max_action_gap = max_action_gap.max(gap);
            report.push(format!("state-action {t}"), format!("gap {}", gap.format_full()));
        }
    } else if law.horizon() >= 2 {
        let check = is_markov_law(&law, f64::cond_tol())?;
        if check.is_markov {
            report.push("note", "input is Markov");
        }
    }
    report.push_scalar("max marginal gap", max_gap);
    report.push_scalar("max pair gap", max_pair_gap);
    let pass = max_gap <= tol && max_pair_gap <= tol && max_action_gap <= tol;
    verdict(&mut report, pass);

    let chain_text = textio::write_markov_chain(&chain)?;
    emit(source, &report, &[("mimic-chain.txt", chain_text)])?;
    Ok(pass)
}

fn run_markovianize(source: &Source, s: usize, tol: f64) -> Result<bool, CliError> {
    let law = load_path_law(source)?;
    let glued = markovianize(&law, s)?;

    let mut report = Report::new("markovianize");
    report.push("source", source.describe());
    report.push("s", s);
    report.push_scalar("tol", tol);
    let mut max_gap = 0.0f64;
    for t in 0..=law.horizon() {
        let original = law.marginal(t)?;
        let copy = glued.marginal(t)?;
        let gap = max_abs_gap(original.as_slice().unwrap(), copy.as_slice().unwrap());
        max_gap = max_gap.max(gap);
        report.push(
            format!("marginal {t}"),
            format!("{} vs {} gap {}", join_probs(&original), join_probs(&copy), gap.format_full()),
        );
    }
    report.push_scalar("max marginal gap", max_gap);

    let check = is_markov_point(&glued, s, f64::cond_tol())?;
    report.push("markov at s", check.is_markov);
    report.push_scalar("conditional gap at s", check.max_gap);

    // the walk is built on indexed labels; rebuild it on the input's alphabet
    // so the entropies are comparable
    let walk = fixtures::lazy_uniform_walk::<f64>(law.states().len(), law.horizon())
        .law(law.horizon())?;
    let reference = PathLaw64::new(
        law.states().clone(),
        None,
        law.horizon(),
        walk.probs().to_vec(),
    )?;
    let before = relative_entropy(&law, &reference)?;
    let after = relative_entropy(&glued, &reference)?;
    report.push_scalar("entropy before", before);
    report.push_scalar("entropy after", after);

    // Pinning a time never adds information relative to a Markov reference.
    let pass = max_gap <= tol && check.is_markov && after <= before + 1e-12;
    verdict(&mut report, pass);

    let glued_text = textio::write_path_law(&glued)?;
    emit(source, &report, &[("markovianized-law.txt", glued_text)])?;
    Ok(pass)
}

fn run_entropy_min(source: &Source, tol: f64) -> Result<bool, CliError> {
    let (set, target) = load_constraint_set(source)?;
    let (minimizer, diagnostics) =
        markov_mimic::entropy_min::minimize_entropy(&set, tol, 10_000)?;

    let mut report = Report::new("entropy-min");
    report.push("source", source.describe());
    report.push_scalar("tol", tol);
    report.push("cycles", diagnostics.cycles);
    report.push_scalar("final residual", diagnostics.final_residual);
    report.push_scalar("entropy", diagnostics.entropy);
    for (k, (t, _)) in set.constraints().iter().enumerate() {
        report.push(
            format!("constraint {t}"),
            format!("tv {}", diagnostics.per_constraint_tv[k].format_full()),
        );
    }

    // Minimizers are Markov; check every interior time.
    let mut markov_pass = true;
    for s in 1..minimizer.horizon() {
        let check = is_markov_point(&minimizer, s, 1e-8)?;
        markov_pass &= check.is_markov;
        report.push(
            format!("markov at {s}"),
            format!("{} gap {}", check.is_markov, check.max_gap.format_full()),
        );
    }

    let mut pass = markov_pass;
    if let Some(target) = &target {
        let before = relative_entropy(target, set.reference())?;
        report.push_scalar("entropy of memory chain", before);
        pass &= (before - (2.0f64).ln()).abs() <= tol && diagnostics.entropy.abs() <= tol;
    }
    verdict(&mut report, pass);

    let minimizer_text = textio::write_path_law(&minimizer)?;
    emit(source, &report, &[("minimizer-law.txt", minimizer_text)])?;
    Ok(pass)
}

fn run_occupation(source: &Source, beta: f64, tol: f64) -> Result<bool, CliError> {
    let (chain, cost) = load_controlled_chain(source)?;
    let occ = occupation_measure(&chain, beta, 1e-12)?;
    let mimic = stationary_mimic(&occ, &chain)?;
    let occ_mimic = occupation_measure(&mimic, beta, 1e-12)?;

    let m = chain.states().len();
    let a = chain.actions().len();
    let tv = 0.5
        * occ
            .joint
            .iter()
            .zip(occ_mimic.joint.iter())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>();

    let mut report = Report::new("occupation");
    report.push("source", source.describe());
    report.push_scalar("beta", beta);
    report.push_scalar("tol", tol);
    report.push("eta", join_probs(&occ.eta));
    for x in 0..m {
        report.push(
            format!("mu {}", chain.states().label(x)),
            join_probs(&occ.joint.row(x).to_owned()),
        );
        report.push(
            format!("policy {}", chain.states().label(x)),
            join_probs(&occ.policy.row(x).to_owned()),
        );
    }
    if !occ.flagged.is_empty() {
        let labels: Vec<&str> = occ.flagged.iter().map(|&x| chain.states().label(x)).collect();
        report.push("flagged states", labels.join(","));
    }
    report.push_scalar("occupation tv", tv);

    // Resolvent agreement: either the supplied cost table or, without one,
    // every indicator cost (which spans all tables by linearity).
    let mut max_gap = 0.0f64;
    match &cost {
        Some(table) => {
            let check = resolvent_check(&chain, &mimic, beta, table, 1e-12)?;
            max_gap = check.gap.abs();
            report.push(
                "resolvent",
                format!(
                    "occupation {} vs resolvent {}",
                    check.occupation_value.format_full(),
                    check.resolvent_value.format_full()
                ),
            );
        }
        None => {
            for x in 0..m {
                for u in 0..a {
                    let mut indicator = Array2::<f64>::zeros((m, a));
                    indicator[[x, u]] = 1.0;
                    let check = resolvent_check(&chain, &mimic, beta, &indicator, 1e-12)?;
                    max_gap = max_gap.max(check.gap.abs());
                }
            }
            report.push("resolvent", format!("checked {} indicator costs", m * a));
        }
    }
    report.push_scalar("max resolvent gap", max_gap);

    // Per-time marginals are informational: the mimic reproduces their
    // discounted aggregate, not each one.
    let horizon = 8;
    let original_marginals = state_marginals(&chain, horizon)?;
    let mimic_marginals = state_marginals(&mimic, horizon)?;
    for n in 0..=horizon {
        let gap = max_abs_gap(
            original_marginals[n].as_slice().unwrap(),
            mimic_marginals[n].as_slice().unwrap(),
        );
        report.push(
            format!("per-time marginal {n}"),
            format!(
                "{} vs {} gap {}",
                join_probs(&original_marginals[n]),
                join_probs(&mimic_marginals[n]),
                gap.format_full()
            ),
        );
    }

    let pass = tv <= tol && max_gap <= tol;
    verdict(&mut report, pass);

    let mimic_text = textio::write_controlled_chain(&mimic, cost.as_ref())?;
    emit(source, &report, &[("mimic-chain.txt", mimic_text)])?;
    Ok(pass)
}

enum SdeModel {
    Diffusion(markov_mimic::DiffusionModel64),
    Jump(markov_mimic::JumpModel64),
}

fn resolve_sde_config(
    source: &Source,
    seed: Option<u64>,
    n: Option<usize>,
    threads: Option<usize>,
    tol: Option<f64>,
) -> Result<SdeConfig, CliError> {
    source.require_some()?;
    let mut config = match source.fixture_name() {
        Some(name @ ("running-max" | "birth-death")) => SdeConfig::new(name),
        Some(name) if FIXTURES.contains(&name) => {
            return Err(usage(format!("fixture `{name}` is not a simulation model")));
        }
        Some(name) => return Err(unknown_fixture(name)),
        None => textio::parse_sde_config(&source.read_input()?)?,
    };
    if let Some(seed) = seed {
        config.seed = Some(seed);
    }
    if let Some(n) = n {
        config.n_paths = n;
    }
    if let Some(threads) = threads {
        config.threads = threads;
    }
    if let Some(level) = tol {
        config.level = level;
    }
    Ok(config)
}

fn run_sde_mimic(
    source: &Source,
    seed: Option<u64>,
    n: Option<usize>,
    threads: Option<usize>,
    tol: Option<f64>,
) -> Result<bool, CliError> {
    let config = resolve_sde_config(source, seed, n, threads, tol)?;
    let model = match config.model.as_str() {
        "running-max" => SdeModel::Diffusion(fixtures::running_max_diffusion_grid(
            config.dt.unwrap_or(1.0 / 256.0),
            config.horizon.unwrap_or(1.0),
        )),
        "birth-death" => SdeModel::Jump(fixtures::birth_death_jump_grid(
            config.dt.unwrap_or(1.0 / 128.0),
            config.horizon.unwrap_or(1.0),
        )),
        other => return Err(usage(format!("unknown model `{other}`"))),
    };
    match &model {
        SdeModel::Diffusion(model) => sde_pipeline(source, &config, model),
        SdeModel::Jump(model) => sde_pipeline(source, &config, model),
    }
}

fn sde_pipeline<M: SdeProcess<f64>>(
    source: &Source,
    config: &SdeConfig,
    model: &M,
) -> Result<bool, CliError> {
    let seed = config
        .seed
        .ok_or_else(|| usage("--seed is required for sde-mimic"))?;
    let opts = SimOptions {
        threads: config.threads,
        slices: config.slices,
    };
    let original = simulate_opts(model, config.n_paths, seed, opts)?;
    let (policy, projected) = match config.control {
        SdeControlKind::Fixture => (
            project_control_with(&original.trajectories, config.bins, DEFAULT_MIN_COUNT)?,
            true,
        ),
        SdeControlKind::Uniform => {
            let actions = model.actions().len();
            let uniform = Array1::from_elem(actions, 1.0 / actions as f64);
            (
                ProjectedPolicy::constant(model.steps(), model.time_step(), uniform)?,
                false,
            )
        }
    };
    let mimic = simulate_mimic_opts(model, &policy, config.n_paths, seed, opts)?;
    let comparison = compare_marginals(&original.marginals, &mimic.marginals, config.level)?;

    let mut report = Report::new("sde-mimic");
    report.push("source", source.describe());
    report.push("model", &config.model);
    report.push(
        "control",
        if projected { "projected" } else { "uniform (deliberate mismatch)" },
    );
    report.push("paths", config.n_paths);
    report.push("seed", seed);
    report.push("steps", model.steps());
    report.push_scalar("level", comparison.level);
    report.push_scalar("per-slice level", comparison.slice_level);
    if projected {
        let merged: Vec<String> = (0..policy.steps())
            .filter(|&s| policy.was_merged(s))
            .map(|s| s.to_string())
            .collect();
        if !merged.is_empty() {
            report.push("merged steps", merged.len());
        }
    }
    report.push("clamped samples", mimic.clamped);
    for (k, slice) in comparison.slices.iter().enumerate() {
        report.push(
            format!("slice {k}"),
            format!(
                "time {} component {} D {} p {} critical {} {}",
                slice.time.format_full(),
                slice.component,
                slice.statistic.format_full(),
                slice.p_value.format_full(),
                slice.critical.format_full(),
                if slice.pass { "pass" } else { "REJECT" }
            ),
        );
    }
    report.push_scalar("max statistic", comparison.max_statistic);
    let pass = comparison.pass;
    verdict(&mut report, pass);

    let artifacts = [
        (
            "original-marginals.csv",
            textio::write_marginals(&original.marginals),
        ),
        ("mimic-marginals.csv", textio::write_marginals(&mimic.marginals)),
    ];
    emit(source, &report, &artifacts)?;
    Ok(pass)
}
