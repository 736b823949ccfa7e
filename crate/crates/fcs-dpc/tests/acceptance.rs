//! Acceptance suite: one test per criterion, each printing a single
//! pass/fail line with the measured figure.

use fcs_dpc::closed_loop::{run_closed_loop, timing_summary, DpcController, LoopSetup, ReferenceSignal};
use fcs_dpc::condense::{condense_dpc, condense_mpc, diff_operators, lower_factor, WeightConfig};
use fcs_dpc::config::ExperimentConfig;
use fcs_dpc::data::{add_output_noise, build_hankel, check_rank, collect_excitation, DataMatrix, NoiseSpec, RANK_TOL};
use fcs_dpc::decoder::{enumerate, sphere_decode, IlsProblem, Method};
use fcs_dpc::numeric::{quadratic_minimizer, symmetrize, weighted_norm_sq};
use fcs_dpc::plant::{multistep, simulate, ControlSet, PlantModel};
use fcs_dpc::predictor::{
    fit_spc, h_star, h_star_oracle, implicit_predictor, reg_weights, RegularizerKind, RegWeights,
    SpcPredictor,
};
use fcs_dpc::synth::{random_stable_plant, random_vector};
use fcs_dpc::verify::{dpc_direct_cost, random_ils_problem, theorem1_mismatch};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn report(criterion: usize, name: &str, passed: bool, detail: &str) {
    println!(
        "criterion {criterion:2} [{name}] {} - {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {criterion} [{name}] failed: {detail}");
}

/// Noisy dataset plus fitted predictor pieces at the given dimensions.
fn dataset(
    seed: u64,
    n: usize,
    m: usize,
    p: usize,
    n_p: usize,
    n_f: usize,
    steps: usize,
) -> (PlantModel, ControlSet, DataMatrix, SpcPredictor, RegWeights) {
    let model = random_stable_plant(n, m, p, 0.9, seed);
    let cs = ControlSet::uniform(vec![-1.0, 0.0, 1.0], m, Some(1.0)).unwrap();
    let traj = collect_excitation(&model, &cs, steps, seed, &DVector::zeros(n)).unwrap();
    let noisy = add_output_noise(
        &traj,
        &NoiseSpec {
            snr_db: 40.0,
            seed: seed.wrapping_add(1),
        },
    )
    .unwrap();
    let d = build_hankel(&noisy, n_p, n_f).unwrap();
    let spc = fit_spc(&d).unwrap();
    let w = reg_weights(&d).unwrap();
    (model, cs, d, spc, w)
}

#[test]
fn criterion_01_oracle_optimality() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce01);
    let mut checked = 0u32;
    for i in 0..500 {
        let m = rng.random_range(1..=3);
        let n_f = rng.random_range(1..=4);
        let bound = if i % 2 == 0 { Some(1.0) } else { None };
        let p = random_ils_problem(&mut rng, m, n_f, bound);
        let sda = sphere_decode(&p).unwrap();
        let en = enumerate(&p).unwrap();
        let ok = sda.u_opt == en.u_opt && sda.cost == en.cost;
        if !ok {
            report(
                1,
                "oracle_optimality",
                false,
                &format!("instance {i} (m={m}, n_f={n_f}): solutions differ"),
            );
        }
        checked += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        1,
        "oracle_optimality",
        checked == 500 && elapsed < 60.0,
        &format!("{checked}/500 instances bit-identical in {elapsed:.1}s (limit 60s)"),
    );
}

#[test]
fn criterion_02_theorem1() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce02);
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let (_, _, d, spc, w) = dataset(1000 + seed, 3, 2, 2, 2, 2, 120);
        let rank = check_rank(&d, 3, RANK_TOL).unwrap();
        assert!(rank.full_row_rank, "dataset {seed} not full row rank");
        for kind in [RegularizerKind::Projection, RegularizerKind::TwoNorm] {
            let wc = WeightConfig::new(
                &DMatrix::identity(d.p, d.p),
                &(DMatrix::<f64>::identity(d.m, d.m) * 1e-3),
                d.n_f,
                1000.0,
                kind,
            )
            .unwrap();
            let xi = random_vector((d.m + d.p) * d.n_p, 1.0, &mut rng);
            let u_f = random_vector(d.m * d.n_f, 1.0, &mut rng);
            let y_ref = random_vector(d.p * d.n_f, 1.0, &mut rng);
            let pred = implicit_predictor(&spc, &w, &wc.q_bar, wc.lambda_a, &y_ref).unwrap();
            let mismatch = theorem1_mismatch(&spc, &w, &wc, &pred, &xi, &u_f, &y_ref).unwrap();
            worst = worst.max(mismatch);
        }
    }
    report(
        2,
        "theorem1_equivalence",
        worst <= 1e-6,
        &format!("worst relative infinity-norm mismatch {worst:.3e} over 50 datasets x 2 regularizers (bound 1e-6)"),
    );
}

#[test]
fn criterion_03_h_star_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce03);
    let mut worst = 0.0f64;
    for kind in [RegularizerKind::Projection, RegularizerKind::TwoNorm] {
        for batch in 0..5 {
            let (_, _, d, spc, w) = dataset(2000 + batch, 3, 2, 2, 2, 2, 120);
            for _ in 0..20 {
                let xi = random_vector((d.m + d.p) * d.n_p, 1.0, &mut rng);
                let u_f = random_vector(d.m * d.n_f, 1.0, &mut rng);
                let y_f = random_vector(d.p * d.n_f, 1.0, &mut rng);
                let closed = h_star(&w, kind, 1000.0, &xi, &u_f, &y_f, &spc).unwrap();
                let (oracle, _) = h_star_oracle(&d, kind, 1000.0, &xi, &u_f, &y_f).unwrap();
                worst = worst.max((closed - oracle).abs() / oracle.abs().max(1.0));
            }
        }
    }
    report(
        3,
        "h_star_closed_form",
        worst <= 1e-6,
        &format!("worst relative error {worst:.3e} over 100 triples per regularizer (bound 1e-6)"),
    );
}

/// All input sequences over the alphabet that satisfy the switching bound.
fn feasible_candidates(cs: &ControlSet, u_prev: &DVector<f64>, n_f: usize) -> Vec<DVector<f64>> {
    let m = cs.m();
    let dim = m * n_f;
    let mut out = Vec::new();
    let mut current = vec![0.0; dim];
    fn descend(
        cs: &ControlSet,
        u_prev: &DVector<f64>,
        m: usize,
        dim: usize,
        idx: usize,
        current: &mut Vec<f64>,
        out: &mut Vec<DVector<f64>>,
    ) {
        if idx == dim {
            out.push(DVector::from_row_slice(current));
            return;
        }
        let ch = idx % m;
        let prev = if idx < m {
            u_prev[ch]
        } else {
            current[idx - m]
        };
        for &level in cs.levels(ch) {
            if cs.switch_ok(prev, level) {
                current[idx] = level;
                descend(cs, u_prev, m, dim, idx + 1, current, out);
            }
        }
    }
    descend(cs, u_prev, m, dim, 0, &mut current, &mut out);
    out
}

#[test]
fn criterion_04_original_vs_reduced_argmin() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce04);
    let (_, cs, d, spc, w) = dataset(3000, 3, 2, 2, 2, 2, 140);
    let ops = diff_operators(d.m, d.n_f).unwrap();
    let mut agreements = 0;
    for i in 0..50 {
        let kind = if i % 2 == 0 {
            RegularizerKind::Projection
        } else {
            RegularizerKind::TwoNorm
        };
        let wc = WeightConfig::new(
            &DMatrix::identity(d.p, d.p),
            &(DMatrix::<f64>::identity(d.m, d.m) * 1e-3),
            d.n_f,
            1000.0,
            kind,
        )
        .unwrap();
        let xi = random_vector((d.m + d.p) * d.n_p, 1.0, &mut rng);
        let y_ref = random_vector(d.p * d.n_f, 1.0, &mut rng);
        let levels = [-1.0, 0.0, 1.0];
        let u_prev = DVector::from_fn(d.m, |_, _| levels[rng.random_range(0..3)]);
        let pred = implicit_predictor(&spc, &w, &wc.q_bar, wc.lambda_a, &y_ref).unwrap();
        let prob = condense_dpc(&pred, &w, &wc, &ops, &xi, &u_prev, &y_ref).unwrap();
        // reduced side: truncated ILS over the transformed objective
        let ils = IlsProblem {
            l_factor: prob.l_factor.clone(),
            target: prob.u_unc_t.clone(),
            cs: cs.clone(),
            u_prev: u_prev.clone(),
            n_f: d.n_f,
            m: d.m,
        };
        let reduced = enumerate(&ils).unwrap();
        // original side: brute force over the same feasible set, inner
        // minimization over y_f through the generator-space oracle
        let mut best: Option<(f64, DVector<f64>)> = None;
        for u_f in feasible_candidates(&cs, &u_prev, d.n_f) {
            let inner = |y: &DVector<f64>| {
                weighted_norm_sq(&(y - &y_ref), &wc.q_bar)
                    + h_star_oracle(&d, kind, wc.lambda_a, &xi, &u_f, y)
                        .unwrap()
                        .0
            };
            let y_star = quadratic_minimizer(d.p * d.n_f, &inner).unwrap();
            let du = ops.delta(&u_f, &u_prev);
            let cost = inner(&y_star) + weighted_norm_sq(&du, &wc.r_bar);
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                best = Some((cost, u_f));
            }
        }
        let (_, original) = best.unwrap();
        if original == reduced.u_opt {
            agreements += 1;
        }
    }
    report(
        4,
        "original_vs_reduced_argmin",
        agreements == 50,
        &format!("{agreements}/50 instances with identical argmin"),
    );
}

#[test]
fn criterion_05_exact_data_consistency() {
    let n = 3;
    let (n_p, n_f) = (3, 2);
    let model = random_stable_plant(n, 2, 2, 0.9, 5000);
    let cs = ControlSet::uniform(vec![-1.0, 0.0, 1.0], 2, Some(1.0)).unwrap();
    let traj = collect_excitation(&model, &cs, 160, 5000, &DVector::zeros(n)).unwrap();
    let d = build_hankel(&traj, n_p, n_f).unwrap();
    let rank = check_rank(&d, n, RANK_TOL).unwrap();
    assert!(
        rank.satisfied,
        "exact-data rank {} != target {}",
        rank.numerical_rank, rank.target
    );
    let spc = fit_spc(&d).unwrap();
    let (o_m, t_m) = multistep(&model, n_f).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce05);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        // consistent past window from a fresh rollout
        let x0 = random_vector(n, 1.0, &mut rng);
        let u_past: Vec<DVector<f64>> = (0..n_p)
            .map(|_| random_vector(2, 1.0, &mut rng))
            .collect();
        let past = simulate(&model, &x0, &u_past).unwrap();
        let mut xi = DVector::zeros((2 + 2) * n_p);
        for k in 0..n_p {
            xi.rows_mut(k * 2, 2).copy_from(&past.u[k]);
            xi.rows_mut(n_p * 2 + k * 2, 2).copy_from(&past.y[k]);
        }
        let x_now = past.x.as_ref().unwrap()[n_p].clone();
        let u_f = random_vector(2 * n_f, 1.0, &mut rng);
        let y_spc = spc.predict(&xi, &u_f);
        let y_model = &o_m * &x_now + &t_m * &u_f;
        worst = worst.max((&y_spc - &y_model).abs().max());
    }
    report(
        5,
        "exact_data_consistency",
        worst <= 1e-8,
        &format!(
            "rank {}/{} satisfied; worst deviation {worst:.3e} over 100 draws (bound 1e-8)",
            rank.numerical_rank, rank.target
        ),
    );
}

#[test]
fn criterion_06_condensation_derivation_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce06);
    let mut worst = 0.0f64;
    // model-based condensation vs simulation-evaluated cost
    for trial in 0..20 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=3);
        let p = rng.random_range(1..=2);
        let n_f = rng.random_range(1..=4);
        let model = random_stable_plant(n, m, p, 0.9, 6000 + trial);
        let (o, t) = multistep(&model, n_f).unwrap();
        let ops = diff_operators(m, n_f).unwrap();
        let wc = WeightConfig::new(
            &(DMatrix::<f64>::identity(p, p) * rng.random_range(0.1..2.0)),
            &(DMatrix::<f64>::identity(m, m) * rng.random_range(0.1..2.0)),
            n_f,
            1.0,
            RegularizerKind::Projection,
        )
        .unwrap();
        let x0 = random_vector(n, 1.0, &mut rng);
        let u_prev = random_vector(m, 1.0, &mut rng);
        let y_ref = random_vector(p * n_f, 1.0, &mut rng);
        let prob = condense_mpc(&o, &t, &wc, &ops, &x0, &u_prev, &y_ref).unwrap();
        let mut consts = Vec::new();
        for _ in 0..20 {
            let u_f = random_vector(m * n_f, 1.0, &mut rng);
            let u_seq: Vec<DVector<f64>> = (0..n_f)
                .map(|k| DVector::from_fn(m, |i, _| u_f[k * m + i]))
                .collect();
            let traj = simulate(&model, &x0, &u_seq).unwrap();
            let mut direct = 0.0;
            let mut prev = u_prev.clone();
            for k in 0..n_f {
                let dy =
                    &traj.y.get(k + 1).cloned().unwrap_or_else(|| {
                        &model.c * traj.x.as_ref().unwrap().last().unwrap()
                    }) - DVector::from_fn(p, |i, _| y_ref[k * p + i]);
                direct += weighted_norm_sq(&dy, &wc.q_bar.view((0, 0), (p, p)).into_owned());
                let du = &u_seq[k] - &prev;
                direct += weighted_norm_sq(&du, &wc.r_bar.view((0, 0), (m, m)).into_owned());
                prev = u_seq[k].clone();
            }
            consts.push(prob.quad_value(&u_f) - direct);
        }
        worst = worst.max(spread(&consts));
    }
    // data-driven condensation vs term-by-term evaluation
    for trial in 0..20 {
        let kind = if trial % 2 == 0 {
            RegularizerKind::Projection
        } else {
            RegularizerKind::TwoNorm
        };
        let (_, _, d, spc, w) = dataset(6100 + trial, 3, 2, 2, 2, 2, 120);
        let ops = diff_operators(d.m, d.n_f).unwrap();
        let wc = WeightConfig::new(
            &DMatrix::identity(d.p, d.p),
            &(DMatrix::<f64>::identity(d.m, d.m) * 1e-3),
            d.n_f,
            100.0,
            kind,
        )
        .unwrap();
        let xi = random_vector((d.m + d.p) * d.n_p, 1.0, &mut rng);
        let u_prev = random_vector(d.m, 1.0, &mut rng);
        let y_ref = random_vector(d.p * d.n_f, 1.0, &mut rng);
        let pred = implicit_predictor(&spc, &w, &wc.q_bar, wc.lambda_a, &y_ref).unwrap();
        let prob = condense_dpc(&pred, &w, &wc, &ops, &xi, &u_prev, &y_ref).unwrap();
        let mut consts = Vec::new();
        for _ in 0..20 {
            let u_f = random_vector(d.m * d.n_f, 1.0, &mut rng);
            let direct =
                dpc_direct_cost(&pred, &spc, &w, &wc, &ops, &xi, &u_prev, &y_ref, &u_f).unwrap();
            consts.push(prob.quad_value(&u_f) - direct);
        }
        worst = worst.max(spread(&consts));
    }
    report(
        6,
        "condensation_derivation_rule",
        worst <= 1e-7,
        &format!("worst relative spread {worst:.3e} over 40 parameterizations (bound 1e-7)"),
    );
}

fn spread(consts: &[f64]) -> f64 {
    let max = consts.iter().cloned().fold(f64::MIN, f64::max);
    let min = consts.iter().cloned().fold(f64::MAX, f64::min);
    let scale = consts.iter().map(|c| c.abs()).fold(1.0, f64::max);
    (max - min) / scale
}

#[test]
fn criterion_07_factorization() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce07);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=12);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = symmetrize(&(&g * g.transpose())) + DMatrix::identity(n, n) * 0.05;
        let l = lower_factor(&h).unwrap();
        worst = worst.max((l.transpose() * &l - &h).abs().max() / h.abs().max());
        for i in 0..n {
            for j in (i + 1)..n {
                assert_eq!(l[(i, j)], 0.0, "factor not lower triangular");
            }
        }
    }
    report(
        7,
        "factorization",
        worst <= 1e-10,
        &format!("worst relative residual {worst:.3e} over 100 SPD matrices up to 12x12 (bound 1e-10)"),
    );
}

fn default_setup(n_f: usize) -> (PlantModel, ControlSet, DpcController, ReferenceSignal, usize, u64) {
    let cfg = ExperimentConfig::parse(fcs_dpc::cli::DEFAULT_CONFIG).unwrap();
    let model = cfg.plant_model().unwrap();
    let cs = cfg.control_set(model.m()).unwrap();
    let traj = collect_excitation(
        &model,
        &cs,
        cfg.data.collect_steps,
        cfg.data.seed,
        &DVector::zeros(model.n()),
    )
    .unwrap();
    let noisy = add_output_noise(
        &traj,
        &NoiseSpec {
            snr_db: cfg.data.snr_db,
            seed: cfg.data.seed.wrapping_add(1),
        },
    )
    .unwrap();
    let d = build_hankel(&noisy, cfg.horizons.n_p, n_f).unwrap();
    let wc = cfg.weight_config(model.p(), n_f).unwrap();
    let ctrl = DpcController::fit(&d, &cs, wc).unwrap();
    let reference = cfg.reference_signal();
    (model, cs, ctrl, reference, cfg.closed_loop.steps, cfg.closed_loop.seed)
}

#[test]
fn criterion_08_closed_loop_equivalence_and_timing() {
    let start = Instant::now();
    let (model, cs, ctrl, reference, steps, seed) = default_setup(2);
    assert_eq!(steps, 800);
    let setup = LoopSetup {
        model: &model,
        cs: &cs,
        controller: &ctrl,
        reference: &reference,
        steps,
        seed,
        noise_std: None,
    };
    let sda = run_closed_loop(&setup, Method::Sda).unwrap();
    let en = run_closed_loop(&setup, Method::Enum).unwrap();
    let identical = sda
        .iter()
        .zip(&en)
        .all(|(a, b)| a.u_applied == b.u_applied && a.y_measured == b.y_measured);
    let mut logs = sda.clone();
    logs.extend(en.iter().cloned());
    let stats = timing_summary(&logs).unwrap();
    let median_sda = stats["sda"].median;
    let median_enum = stats["enum"].median;
    let mean_nodes_sda =
        sda.iter().map(|l| l.solve.nodes_explored as f64).sum::<f64>() / sda.len() as f64;
    let mean_leaves_enum =
        en.iter().map(|l| l.solve.nodes_explored as f64).sum::<f64>() / en.len() as f64;
    let elapsed = start.elapsed().as_secs_f64();
    report(
        8,
        "closed_loop_equivalence",
        identical
            && median_sda < median_enum
            && mean_nodes_sda < mean_leaves_enum
            && elapsed < 300.0,
        &format!(
            "800 steps identical; median solve sda {median_sda:.3e}s < enum {median_enum:.3e}s; \
             mean nodes sda {mean_nodes_sda:.1} < enum leaves {mean_leaves_enum:.1}; {elapsed:.1}s (limit 300s)"
        ),
    );
}

#[test]
fn criterion_09_noise_calibration() {
    let model = random_stable_plant(4, 3, 2, 0.95, 9000);
    let cs = ControlSet::uniform(vec![-1.0, 0.0, 1.0], 3, Some(1.0)).unwrap();
    let steps = 100_000;
    let traj = collect_excitation(&model, &cs, steps, 9000, &DVector::zeros(4)).unwrap();
    let noisy = add_output_noise(&traj, &NoiseSpec { snr_db: 40.0, seed: 9001 }).unwrap();
    let mut worst_dev = 0.0f64;
    for ch in 0..2 {
        let signal: f64 =
            traj.y.iter().map(|y| y[ch] * y[ch]).sum::<f64>() / steps as f64;
        let noise: f64 = traj
            .y
            .iter()
            .zip(&noisy.y)
            .map(|(a, b)| (b[ch] - a[ch]).powi(2))
            .sum::<f64>()
            / steps as f64;
        let measured = 10.0 * (signal / noise).log10();
        worst_dev = worst_dev.max((measured - 40.0).abs());
    }
    report(
        9,
        "noise_calibration",
        worst_dev <= 0.5,
        &format!("worst per-channel deviation {worst_dev:.3} dB from 40 dB over 1e5 samples (bound 0.5 dB)"),
    );
}

#[test]
fn criterion_10_hessian_cache_invariant() {
    let (model, cs, ctrl, _, steps, seed) = default_setup(2);
    // reference changes every 100 steps to force per-step gradient updates
    let reference = ReferenceSignal::Piecewise(
        (0..8)
            .map(|i| {
                (
                    i * 100,
                    DVector::from_row_slice(&[
                        if i % 2 == 0 { 0.5 } else { -0.5 },
                        if i % 3 == 0 { -0.3 } else { 0.3 },
                    ]),
                )
            })
            .collect(),
    );
    let setup = LoopSetup {
        model: &model,
        cs: &cs,
        controller: &ctrl,
        reference: &reference,
        steps,
        seed,
        noise_std: None,
    };
    let logs = run_closed_loop(&setup, Method::Sda).unwrap();
    let h0 = logs[0].hessian_checksum;
    let l0 = logs[0].factor_checksum;
    let constant = logs
        .iter()
        .all(|l| l.hessian_checksum == h0 && l.factor_checksum == l0);
    report(
        10,
        "hessian_cache_invariant",
        constant && logs.len() == 800,
        &format!("checksums constant over {} steps with a time-varying reference", logs.len()),
    );
}
