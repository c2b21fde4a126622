use std::sync::Arc;

use ndarray::{array, Array1};

use crate::error::MimicError;
use crate::fixtures::{birth_death_jump, running_max_diffusion};
use crate::scalar::Scalar;
use crate::space::ActionSpace;

use super::*;

fn brownian(steps: usize) -> DiffusionModel<f64> {
    DiffusionModel::new(
        1,
        ActionSpace::indexed(1).unwrap(),
        |_x, _u| vec![0.0],
        0.0,
        |_x| array![[1.0]],
        Arc::new(FixedLawControl::constant(1, 0)),
        |_rng| vec![0.0],
        1.0 / steps as f64,
        1.0,
    )
    .unwrap()
}

/// Drifting threshold model whose control is already Markov: action law
/// (0.8, 0.2) at or below zero, (0.3, 0.7) above, drift equal to the action.
fn markov_threshold_model(steps: usize) -> DiffusionModel<f64> {
    let control =
        ThresholdControl::on_state(0, 0.0, array![0.8, 0.2], array![0.3, 0.7]).unwrap();
    DiffusionModel::new(
        1,
        ActionSpace::indexed(2).unwrap(),
        |_x, u| vec![u as f64],
        1.0,
        |_x| array![[1.0]],
        Arc::new(control),
        |rng| vec![f64::sample_standard_normal(rng)],
        1.0 / steps as f64,
        1.0,
    )
    .unwrap()
}

/// Noiseless unit-drift line: x(t) = t exactly, since 1/256 is a power of
/// two and the Euler sums stay exact in binary.
fn deterministic_line() -> DiffusionModel<f64> {
    DiffusionModel::new(
        1,
        ActionSpace::indexed(2).unwrap(),
        |_x, u| vec![u as f64],
        1.0,
        |_x| array![[0.0]],
        Arc::new(FixedLawControl::constant(2, 1)),
        |_rng| vec![0.0],
        1.0 / 256.0,
        1.0,
    )
    .unwrap()
}

#[test]
fn brownian_slices_match_clt_bands() {
    let n = 20_000;
    let run = simulate(&brownian(64), n, 11).unwrap();
    assert_eq!(run.marginals.slice_steps(), &[8, 16, 24, 32, 40, 48, 56, 64]);
    for (k, &t) in run.marginals.slice_times().iter().enumerate() {
        let xs = run.marginals.samples(k, 0);
        assert_eq!(xs.len(), n);
        let mean: f64 = xs.iter().sum::<f64>() / n as f64;
        let var: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        // Mean band 3 sqrt(t/n); variance band 3 t sqrt(2/(n-1)).
        assert!(mean.abs() <= 3.0 * (t / n as f64).sqrt(), "t {t} mean {mean}");
        let band = 3.0 * t * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - t).abs() <= band, "t {t} var {var}");
    }
}

#[test]
fn silent_jump_models_hold_still() {
    let quiet = JumpModel::new(
        1,
        ActionSpace::indexed(1).unwrap(),
        |_x, _u| 0.0,
        9.0,
        |x, _u, _rng| vec![x[0] + 1.0],
        Arc::new(FixedLawControl::constant(1, 0)),
        |_rng| vec![3.5],
        1.0 / 16.0,
        1.0,
    )
    .unwrap();
    let run = simulate(&quiet, 200, 5).unwrap();
    for k in 0..run.marginals.slice_steps().len() {
        assert!(run.marginals.samples(k, 0).iter().all(|&x| x == 3.5));
    }

    // A zero intensity bound skips the thinning clock entirely.
    let frozen = JumpModel::new(
        1,
        ActionSpace::indexed(1).unwrap(),
        |_x, _u| 0.0,
        0.0,
        |x, _u, _rng| vec![x[0] + 1.0],
        Arc::new(FixedLawControl::constant(1, 0)),
        |_rng| vec![-2.0],
        1.0 / 16.0,
        1.0,
    )
    .unwrap();
    let run = simulate(&frozen, 50, 5).unwrap();
    assert!(run.marginals.samples(7, 0).iter().all(|&x| x == -2.0));
}

#[test]
fn unit_drift_line_is_exact() {
    let run = simulate(&deterministic_line(), 40, 3).unwrap();
    for (k, &step) in run.marginals.slice_steps().iter().enumerate() {
        let want = step as f64 / 256.0;
        assert!(run.marginals.samples(k, 0).iter().all(|&x| x == want));
    }
    assert_eq!(run.trajectories.state(17, 256), &[1.0]);
    assert_eq!(run.trajectories.action(17, 100), 1);
}

#[test]
fn thread_count_does_not_change_the_draws() {
    let model = running_max_diffusion();
    let single = simulate_opts(&model, 96, 42, SimOptions { threads: 1, slices: 8 }).unwrap();
    let multi = simulate_opts(&model, 96, 42, SimOptions { threads: 3, slices: 8 }).unwrap();
    assert_eq!(single.trajectories.raw_states(), multi.trajectories.raw_states());
    assert_eq!(single.trajectories.raw_actions(), multi.trajectories.raw_actions());
    for k in 0..8 {
        assert_eq!(single.marginals.samples(k, 0), multi.marginals.samples(k, 0));
    }
}

#[test]
fn coefficient_bounds_are_enforced() {
    let runaway = DiffusionModel::new(
        1,
        ActionSpace::indexed(1).unwrap(),
        |_x, _u| vec![1.0],
        0.5,
        |_x| array![[1.0]],
        Arc::new(FixedLawControl::constant(1, 0)),
        |_rng| vec![0.0],
        0.25,
        1.0,
    )
    .unwrap();
    assert!(matches!(
        simulate(&runaway, 4, 0),
        Err(MimicError::DriftBound { .. })
    ));

    let skewed = DiffusionModel::new(
        1,
        ActionSpace::indexed(1).unwrap(),
        |_x, _u| vec![0.0],
        0.0,
        |_x| array![[-1.0]],
        Arc::new(FixedLawControl::constant(1, 0)),
        |_rng| vec![0.0],
        0.25,
        1.0,
    )
    .unwrap();
    assert!(matches!(simulate(&skewed, 4, 0), Err(MimicError::NotPsd)));

    let hot = JumpModel::new(
        1,
        ActionSpace::indexed(1).unwrap(),
        |_x, _u| 10.0,
        9.0,
        |x, _u, _rng| vec![x[0]],
        Arc::new(FixedLawControl::constant(1, 0)),
        |_rng| vec![0.0],
        4.0,
        4.0,
    )
    .unwrap();
    assert!(matches!(
        simulate(&hot, 8, 0),
        Err(MimicError::IntensityBound { .. })
    ));

    let lopsided = DiffusionModel::new(
        2,
        ActionSpace::indexed(1).unwrap(),
        |_x, _u| vec![0.0, 0.0],
        0.0,
        |_x| Array2::eye(2),
        Arc::new(FixedLawControl::constant(1, 0)),
        |_rng| vec![0.0],
        0.25,
        1.0,
    )
    .unwrap();
    assert!(matches!(
        simulate(&lopsided, 4, 0),
        Err(MimicError::BadShape { what: "initial sample", .. })
    ));

    assert!(matches!(
        simulate(&brownian(16), 0, 0),
        Err(MimicError::BadShape { what: "path count", .. })
    ));
    assert!(DiffusionModel::<f64>::new(
        1,
        ActionSpace::indexed(1).unwrap(),
        |_x, _u| vec![0.0],
        0.0,
        |_x| array![[1.0]],
        Arc::new(FixedLawControl::constant(1, 0)),
        |_rng| vec![0.0],
        0.0,
        1.0,
    )
    .is_err());
}

#[test]
fn markov_control_projects_to_itself_within_binomial_bands() {
    let model = markov_threshold_model(32);
    let run = simulate(&model, 20_000, 17).unwrap();
    let policy = project_control(&run.trajectories).unwrap();
    assert_eq!(policy.steps(), 32);
    let mut checked = 0;
    for step in [0usize, 16, 31] {
        for bin in 0..policy.bins(step) {
            let (lo, hi) = policy.bin_interval(step, bin);
            let count = policy.bin_count(step, bin);
            // Only bins strictly on one side of the threshold have a
            // deterministic truth; the straddling bin mixes both laws.
            let truth = if hi <= 0.0 {
                0.2
            } else if lo >= 0.0 {
                0.7
            } else {
                continue;
            };
            let freq = policy.bin_law(step, bin)[1];
            let sigma = (truth * (1.0 - truth) / count as f64).sqrt();
            assert!(
                (freq - truth).abs() <= 4.0 * sigma,
                "step {step} bin {bin} freq {freq} truth {truth} count {count}"
            );
            checked += 1;
        }
    }
    assert!(checked > 50, "too few populated bins: {checked}");
}

#[test]
fn running_max_policy_straddles_the_crossing_probability() {
    let model = running_max_diffusion();
    let run = simulate(&model, 12_000, 23).unwrap();
    let policy = project_control(&run.trajectories).unwrap();

    // Reference frequencies from an independent three-times-larger run,
    // read over the same state interval, not through the bin estimator.
    let big = simulate(&model, 48_000, 24).unwrap();

    let step = 128;
    let mut straddlers = 0;
    for bin in 0..policy.bins(step) {
        let (lo, hi) = policy.bin_interval(step, bin);
        if !(lo < 0.5 && 0.5 < hi) {
            continue;
        }
        straddlers += 1;
        let v = policy.bin_law(step, bin)[1];
        assert!(
            0.0 < v && v < 1.0,
            "straddling bin should mix actions, got {v}"
        );

        let traj = &big.trajectories;
        let mut hits = 0u64;
        let mut total = 0u64;
        for path in 0..traj.n_paths() {
            let x = traj.state(path, step)[0];
            if lo <= x && x < hi {
                total += 1;
                hits += (traj.action(path, step) == 1) as u64;
            }
        }
        assert!(total > 500, "oracle bin too thin: {total}");
        let oracle = hits as f64 / total as f64;
        let sigma = (v * (1.0 - v) / policy.bin_count(step, bin) as f64
            + oracle * (1.0 - oracle) / total as f64)
            .sqrt();
        assert!(
            (v - oracle).abs() <= 3.0 * sigma,
            "bin [{lo}, {hi}): estimate {v} oracle {oracle} sigma {sigma}"
        );
    }
    assert!(straddlers >= 1);

    // A denser estimate from the large run stays interior as well.
    let dense = project_control_with(&big.trajectories, 128, 50).unwrap();
    let mut interior = 0;
    for bin in 0..dense.bins(step) {
        let (lo, hi) = dense.bin_interval(step, bin);
        if lo < 0.5 && 0.5 < hi {
            let v = dense.bin_law(step, bin)[1];
            assert!(0.0 < v && v < 1.0);
            interior += 1;
        }
    }
    assert!(interior >= 1);
}

#[test]
fn single_path_projection_collapses_to_one_flagged_bin() {
    let run = simulate(&running_max_diffusion(), 1, 9).unwrap();
    let policy = project_control(&run.trajectories).unwrap();
    for step in [0usize, 100, 255] {
        assert_eq!(policy.bins(step), 1);
        assert!(policy.was_merged(step));
        let taken = run.trajectories.action(0, step);
        assert_eq!(policy.bin_law(step, 0)[taken], 1.0);
    }
    assert_eq!(policy.merged_steps(), 256);
}

#[test]
fn mimic_of_a_markov_control_matches_marginals() {
    let model = markov_threshold_model(64);
    let run = simulate(&model, 15_000, 31).unwrap();
    let policy = project_control(&run.trajectories).unwrap();
    let mimic = simulate_mimic(&model, &policy, 15_000, 32).unwrap();
    let report = compare_marginals(&run.marginals, &mimic.marginals, 0.01).unwrap();
    assert!(
        report.pass,
        "max statistic {} critical {}",
        report.max_statistic, report.slices[0].critical
    );
}

#[test]
fn zero_noise_mimic_is_pathwise_identical() {
    let model = deterministic_line();
    let run = simulate(&model, 64, 7).unwrap();
    let policy = project_control(&run.trajectories).unwrap();
    let mimic = simulate_mimic(&model, &policy, 64, 8).unwrap();
    assert_eq!(mimic.clamped, 0);
    for k in 0..run.marginals.slice_steps().len() {
        assert_eq!(run.marginals.samples(k, 0), mimic.marginals.samples(k, 0));
    }
    let report = compare_marginals(&run.marginals, &mimic.marginals, 0.01).unwrap();
    assert!(report.pass);
    assert_eq!(report.max_statistic, 0.0);
}

#[test]
fn identical_samples_compare_with_statistic_zero() {
    let run = simulate(&brownian(16), 400, 77).unwrap();
    let report = compare_marginals(&run.marginals, &run.marginals, 0.01).unwrap();
    assert!(report.pass);
    for slice in &report.slices {
        assert_eq!(slice.statistic, 0.0);
        assert_eq!(slice.p_value, 1.0);
    }
}

#[test]
fn independent_runs_of_the_same_model_calibrate() {
    let model = running_max_diffusion();
    for seed in 0..10u64 {
        let a = simulate(&model, 1_500, 1_000 + seed).unwrap();
        let b = simulate(&model, 1_500, 2_000 + seed).unwrap();
        let report = compare_marginals(&a.marginals, &b.marginals, 0.01).unwrap();
        assert!(report.pass, "seed {seed} max stat {}", report.max_statistic);
    }
}

#[test]
fn uniform_policy_negative_control_fails_decisively() {
    let model = running_max_diffusion();
    let run = simulate(&model, 15_000, 51).unwrap();
    let uniform = ProjectedPolicy::constant(
        model.steps(),
        model.time_step(),
        Array1::from_elem(2, 0.5),
    )
    .unwrap();
    let mimic = simulate_mimic(&model, &uniform, 15_000, 52).unwrap();
    let report = compare_marginals(&run.marginals, &mimic.marginals, 0.01).unwrap();
    assert!(!report.pass, "wrong policy must not reproduce the marginals");
    assert!(report.max_statistic > 0.05);
}

#[test]
fn jump_fixture_mimic_matches_marginals() {
    let model = birth_death_jump();
    let run = simulate(&model, 6_000, 61).unwrap();
    let policy = project_control(&run.trajectories).unwrap();
    let mimic = simulate_mimic(&model, &policy, 6_000, 62).unwrap();
    let report = compare_marginals(&run.marginals, &mimic.marginals, 0.01).unwrap();
    assert!(report.pass, "max statistic {}", report.max_statistic);
    // Lattice marginals are integer valued, so the KS sweep sees heavy ties.
    let samples = run.marginals.samples(7, 0);
    assert!(samples.iter().all(|x| x.fract() == 0.0));
}

#[test]
fn mismatched_grids_and_levels_are_rejected() {
    let a = simulate(&brownian(16), 100, 1).unwrap();
    let b = simulate(&brownian(32), 100, 1).unwrap();
    assert!(matches!(
        compare_marginals(&a.marginals, &b.marginals, 0.01),
        Err(MimicError::GridMismatch)
    ));
    assert!(matches!(
        compare_marginals(&a.marginals, &a.marginals, 0.0),
        Err(MimicError::BadDistribution { .. })
    ));

    let short = ProjectedPolicy::constant(8, 1.0 / 16.0, Array1::from_elem(1, 1.0)).unwrap();
    assert!(matches!(
        simulate_mimic(&brownian(16), &short, 10, 0),
        Err(MimicError::GridMismatch)
    ));

    let flat = simulate(&deterministic_line(), 4, 2).unwrap();
    let wide = DiffusionModel::new(
        2,
        ActionSpace::indexed(2).unwrap(),
        |_x, _u| vec![0.0, 0.0],
        0.0,
        |_x| Array2::eye(2),
        Arc::new(FixedLawControl::constant(2, 0)),
        |_rng| vec![0.0, 0.0],
        1.0 / 16.0,
        1.0,
    )
    .unwrap();
    let run = simulate(&wide, 60, 3).unwrap();
    assert!(matches!(
        project_control(&run.trajectories),
        Err(MimicError::BadShape { what: "projected state dimension", .. })
    ));
    let policy = project_control(&flat.trajectories).unwrap();
    assert!(matches!(
        simulate_mimic(&wide, &policy, 10, 0),
        Err(MimicError::GridMismatch)
    ));
}

#[test]
fn f32_pipeline_runs_end_to_end() {
    let control =
        ThresholdControl::<f32>::on_state(0, 0.0, array![0.8f32, 0.2], array![0.3f32, 0.7])
            .unwrap();
    let model = DiffusionModel::<f32>::new(
        1,
        ActionSpace::indexed(2).unwrap(),
        |_x, u| vec![u as f32],
        1.0,
        |_x| array![[1.0f32]],
        Arc::new(control),
        |rng| vec![f32::sample_standard_normal(rng)],
        1.0 / 16.0,
        1.0,
    )
    .unwrap();
    let run = simulate(&model, 600, 13).unwrap();
    let policy = project_control(&run.trajectories).unwrap();
    let mimic = simulate_mimic(&model, &policy, 600, 14).unwrap();
    let report = compare_marginals(&run.marginals, &mimic.marginals, 0.01f32).unwrap();
    assert!(report.max_statistic.is_finite());
    let _ = &mimic.clamped;
}

#[test]
fn summary_controls_track_the_running_maximum() {
    let ctrl =
        ThresholdControl::on_running_max(0, 0.5, array![1.0, 0.0], array![0.0, 1.0]).unwrap();
    let mut summary = ctrl.summary_init(&[0.0]);
    assert_eq!(ctrl.action_law(&summary, &[0.0], 0), array![1.0, 0.0]);
    ctrl.summary_update(&mut summary, &[0.7], 1);
    // Current state fell back below the bar, but the maximum remembers.
    ctrl.summary_update(&mut summary, &[0.1], 2);
    assert_eq!(ctrl.action_law(&summary, &[0.1], 2), array![0.0, 1.0]);

    let stationary =
        ThresholdControl::on_state(0, 0.5, array![1.0, 0.0], array![0.0, 1.0]).unwrap();
    let summary = stationary.summary_init(&[0.9]);
    assert!(summary.is_empty());
    assert_eq!(stationary.action_law(&summary, &[0.1], 5), array![1.0, 0.0]);
}
