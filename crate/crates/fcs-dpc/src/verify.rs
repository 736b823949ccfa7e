//! Self-check property suite: oracle equivalences, implicit-predictor
//! identity, condensation derivation rules, and factorization checks.

use crate::condense::{
    condense_dpc, condense_mpc, diff_operators, lower_factor, DiffOperators, WeightConfig,
};
use crate::config::ExperimentConfig;
use crate::data::{add_output_noise, build_hankel, check_rank, collect_excitation, DataMatrix, NoiseSpec};
use crate::decoder::{enumerate_with_cap, sphere_decode, IlsProblem, ENUM_CAP};
use crate::error::Result;
use crate::numeric::{quadratic_minimizer, symmetrize, weighted_norm_sq};
use crate::plant::{multistep, ControlSet, PlantModel};
use crate::predictor::{
    fit_spc, h_star, h_star_oracle, implicit_predictor, reg_weights, ImplicitPredictor,
    RegWeights, RegularizerKind, SpcPredictor,
};
use crate::synth::random_vector;
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Outcome of one verification property.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl PropertyResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Max-norm mismatch between the implicit predictor and the directly
/// minimized inner problem over y_f, relative to 1 + the prediction size.
/// The direct side is a black-box quadratic minimization of the tracking
/// term plus the closed-form regularizer conjugate.
pub fn theorem1_mismatch(
    spc: &SpcPredictor,
    w: &RegWeights,
    wc: &WeightConfig,
    pred: &ImplicitPredictor,
    xi: &DVector<f64>,
    u_f: &DVector<f64>,
    y_ref: &DVector<f64>,
) -> Result<f64> {
    let py = y_ref.len();
    let inner = |y: &DVector<f64>| {
        weighted_norm_sq(&(y - y_ref), &wc.q_bar)
            + h_star(w, wc.kind, wc.lambda_a, xi, u_f, y, spc).expect("valid h* arguments")
    };
    let y_star = quadratic_minimizer(py, &inner)?;
    let y_hat = pred.predict(xi, u_f);
    Ok((&y_star - &y_hat).abs().max() / (1.0 + y_hat.abs().max()))
}

/// The reduced objective evaluated term by term, with y_f eliminated through
/// the implicit predictor; used to cross-check the condensed quadratic form.
#[allow(clippy::too_many_arguments)]
pub fn dpc_direct_cost(
    pred: &ImplicitPredictor,
    spc: &SpcPredictor,
    w: &RegWeights,
    wc: &WeightConfig,
    ops: &DiffOperators,
    xi: &DVector<f64>,
    u_prev: &DVector<f64>,
    y_ref: &DVector<f64>,
    u_f: &DVector<f64>,
) -> Result<f64> {
    let y_f = pred.predict(xi, u_f);
    let dy = &y_f - y_ref;
    let du = ops.delta(u_f, u_prev);
    Ok(weighted_norm_sq(&dy, &wc.q_bar)
        + weighted_norm_sq(&du, &wc.r_bar)
        + h_star(w, wc.kind, wc.lambda_a, xi, u_f, &y_f, spc)?)
}

/// Random truncated ILS instance over the {-1, 0, 1} alphabet with a
/// well-conditioned lower-triangular factor.
pub fn random_ils_problem(
    rng: &mut impl Rng,
    m: usize,
    n_f: usize,
    delta_bound: Option<f64>,
) -> IlsProblem {
    let dim = m * n_f;
    let levels = vec![-1.0, 0.0, 1.0];
    let cs = ControlSet::uniform(levels.clone(), m, delta_bound).expect("valid control set");
    let mut l = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..i {
            l[(i, j)] = rng.random_range(-1.0..1.0);
        }
        l[(i, i)] = rng.random_range(0.5..1.5);
    }
    let target = DVector::from_fn(dim, |_, _| rng.random_range(-3.0..3.0));
    let u_prev = DVector::from_fn(m, |_, _| levels[rng.random_range(0..levels.len())]);
    IlsProblem {
        l_factor: l,
        target,
        cs,
        u_prev,
        n_f,
        m,
    }
}

struct VerifyContext {
    model: PlantModel,
    d: DataMatrix,
    d_clean: DataMatrix,
    traj_x: Vec<DVector<f64>>,
    spc: SpcPredictor,
    w: RegWeights,
}

fn build_context(cfg: &ExperimentConfig) -> Result<VerifyContext> {
    let model = cfg.plant_model()?;
    let cs = cfg.control_set(model.m())?;
    let x0 = DVector::zeros(model.n());
    let traj = collect_excitation(&model, &cs, cfg.data.collect_steps, cfg.data.seed, &x0)?;
    let noisy = add_output_noise(
        &traj,
        &NoiseSpec {
            snr_db: cfg.data.snr_db,
            seed: cfg.data.seed.wrapping_add(1),
        },
    )?;
    let n_p = cfg.horizons.n_p;
    let n_f = cfg.horizons.n_f;
    let d = build_hankel(&noisy, n_p, n_f)?;
    let d_clean = build_hankel(&traj, n_p, n_f)?;
    let spc = fit_spc(&d)?;
    let w = reg_weights(&d)?;
    Ok(VerifyContext {
        model,
        traj_x: traj.x.clone().expect("simulation records states"),
        d,
        d_clean,
        spc,
        w,
    })
}

fn check_ils_equivalence(rng: &mut ChaCha8Rng) -> PropertyResult {
    for i in 0..50 {
        let bound = if i % 2 == 0 { Some(1.0) } else { None };
        let p = random_ils_problem(rng, 2, 2, bound);
        let sda = sphere_decode(&p);
        let en = enumerate_with_cap(&p, ENUM_CAP);
        match (sda, en) {
            (Ok(a), Ok(b)) => {
                if a.u_opt != b.u_opt || a.cost != b.cost {
                    return PropertyResult::new(
                        "ils_oracle_equivalence",
                        false,
                        format!("instance {i}: sda cost {} vs enum cost {}", a.cost, b.cost),
                    );
                }
            }
            _ => {
                return PropertyResult::new(
                    "ils_oracle_equivalence",
                    false,
                    format!("instance {i}: solver error"),
                )
            }
        }
    }
    PropertyResult::new(
        "ils_oracle_equivalence",
        true,
        "50/50 instances bit-identical".into(),
    )
}

fn check_theorem1(ctx: &VerifyContext, cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> PropertyResult {
    let d = &ctx.d;
    let py = d.p * d.n_f;
    let mut worst = 0.0f64;
    for kind in [RegularizerKind::Projection, RegularizerKind::TwoNorm] {
        let wc = match WeightConfig::new(
            &DMatrix::identity(d.p, d.p),
            &(DMatrix::<f64>::identity(d.m, d.m) * 1e-3),
            d.n_f,
            cfg.weights.lambda_a,
            kind,
        ) {
            Ok(wc) => wc,
            Err(e) => return PropertyResult::new("theorem1_implicit_predictor", false, e.to_string()),
        };
        for _ in 0..5 {
            let xi = random_vector((d.m + d.p) * d.n_p, 1.0, rng);
            let u_f = random_vector(d.m * d.n_f, 1.0, rng);
            let y_ref = random_vector(py, 1.0, rng);
            let pred = match implicit_predictor(&ctx.spc, &ctx.w, &wc.q_bar, wc.lambda_a, &y_ref) {
                Ok(p) => p,
                Err(e) => {
                    return PropertyResult::new("theorem1_implicit_predictor", false, e.to_string())
                }
            };
            match theorem1_mismatch(&ctx.spc, &ctx.w, &wc, &pred, &xi, &u_f, &y_ref) {
                Ok(r) => worst = worst.max(r),
                Err(e) => {
                    return PropertyResult::new("theorem1_implicit_predictor", false, e.to_string())
                }
            }
        }
    }
    PropertyResult::new(
        "theorem1_implicit_predictor",
        worst <= 1e-6,
        format!("worst relative mismatch {worst:.3e} (bound 1e-6)"),
    )
}

fn check_h_star(ctx: &VerifyContext, cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> PropertyResult {
    let d = &ctx.d;
    let mut worst = 0.0f64;
    for kind in [RegularizerKind::Projection, RegularizerKind::TwoNorm] {
        for _ in 0..10 {
            let xi = random_vector((d.m + d.p) * d.n_p, 1.0, rng);
            let u_f = random_vector(d.m * d.n_f, 1.0, rng);
            let y_f = random_vector(d.p * d.n_f, 1.0, rng);
            let closed = h_star(&ctx.w, kind, cfg.weights.lambda_a, &xi, &u_f, &y_f, &ctx.spc);
            let oracle = h_star_oracle(d, kind, cfg.weights.lambda_a, &xi, &u_f, &y_f);
            match (closed, oracle) {
                (Ok(c), Ok((o, _))) => {
                    worst = worst.max((c - o).abs() / o.abs().max(1.0));
                }
                _ => return PropertyResult::new("h_star_closed_form", false, "evaluation error".into()),
            }
        }
    }
    PropertyResult::new(
        "h_star_closed_form",
        worst <= 1e-6,
        format!("worst relative error {worst:.3e} (bound 1e-6)"),
    )
}

fn check_derivation_rules(
    ctx: &VerifyContext,
    cfg: &ExperimentConfig,
    rng: &mut ChaCha8Rng,
) -> PropertyResult {
    let d = &ctx.d;
    let model = &ctx.model;
    let py = d.p * d.n_f;
    let wc = match cfg.weight_config(d.p, d.n_f) {
        Ok(wc) => wc,
        Err(e) => return PropertyResult::new("condensation_derivation_rule", false, e.to_string()),
    };
    let ops = match diff_operators(d.m, d.n_f) {
        Ok(o) => o,
        Err(e) => return PropertyResult::new("condensation_derivation_rule", false, e.to_string()),
    };
    let mut worst = 0.0f64;
    // model-based side: quadratic value minus simulated cost must be flat
    let (o_m, t_m) = match multistep(model, d.n_f) {
        Ok(v) => v,
        Err(e) => return PropertyResult::new("condensation_derivation_rule", false, e.to_string()),
    };
    for _ in 0..5 {
        let x0 = random_vector(model.n(), 1.0, rng);
        let u_prev = random_vector(d.m, 1.0, rng);
        let y_ref = random_vector(py, 1.0, rng);
        let prob = match condense_mpc(&o_m, &t_m, &wc, &ops, &x0, &u_prev, &y_ref) {
            Ok(p) => p,
            Err(e) => {
                return PropertyResult::new("condensation_derivation_rule", false, e.to_string())
            }
        };
        let mut consts = Vec::new();
        for _ in 0..10 {
            let u_f = random_vector(d.m * d.n_f, 1.0, rng);
            let yhat = &o_m * &x0 + &t_m * &u_f;
            let direct = weighted_norm_sq(&(&yhat - &y_ref), &wc.q_bar)
                + weighted_norm_sq(&ops.delta(&u_f, &u_prev), &wc.r_bar);
            consts.push(prob.quad_value(&u_f) - direct);
        }
        worst = worst.max(spread(&consts));
    }
    // data-driven side
    for _ in 0..5 {
        let xi = random_vector((d.m + d.p) * d.n_p, 1.0, rng);
        let u_prev = random_vector(d.m, 1.0, rng);
        let y_ref = random_vector(py, 1.0, rng);
        let pred = match implicit_predictor(&ctx.spc, &ctx.w, &wc.q_bar, wc.lambda_a, &y_ref) {
            Ok(p) => p,
            Err(e) => {
                return PropertyResult::new("condensation_derivation_rule", false, e.to_string())
            }
        };
        let prob = match condense_dpc(&pred, &ctx.w, &wc, &ops, &xi, &u_prev, &y_ref) {
            Ok(p) => p,
            Err(e) => {
                return PropertyResult::new("condensation_derivation_rule", false, e.to_string())
            }
        };
        let mut consts = Vec::new();
        for _ in 0..10 {
            let u_f = random_vector(d.m * d.n_f, 1.0, rng);
            let direct = match dpc_direct_cost(
                &pred, &ctx.spc, &ctx.w, &wc, &ops, &xi, &u_prev, &y_ref, &u_f,
            ) {
                Ok(v) => v,
                Err(e) => {
                    return PropertyResult::new("condensation_derivation_rule", false, e.to_string())
                }
            };
            consts.push(prob.quad_value(&u_f) - direct);
        }
        worst = worst.max(spread(&consts));
    }
    PropertyResult::new(
        "condensation_derivation_rule",
        worst <= 1e-7,
        format!("worst relative spread {worst:.3e} (bound 1e-7)"),
    )
}

fn spread(consts: &[f64]) -> f64 {
    let max = consts.iter().cloned().fold(f64::MIN, f64::max);
    let min = consts.iter().cloned().fold(f64::MAX, f64::min);
    let scale = consts.iter().map(|c| c.abs()).fold(1.0, f64::max);
    (max - min) / scale
}

fn check_factorization(rng: &mut ChaCha8Rng) -> PropertyResult {
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(1..=12);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = symmetrize(&(&g * g.transpose())) + DMatrix::identity(n, n) * 0.1;
        let l = match lower_factor(&h) {
            Ok(l) => l,
            Err(e) => return PropertyResult::new("hessian_factorization", false, e.to_string()),
        };
        let residual = (l.transpose() * &l - &h).abs().max() / h.abs().max();
        worst = worst.max(residual);
        for i in 0..n {
            for j in (i + 1)..n {
                if l[(i, j)] != 0.0 {
                    return PropertyResult::new(
                        "hessian_factorization",
                        false,
                        "factor not lower triangular".into(),
                    );
                }
            }
        }
    }
    PropertyResult::new(
        "hessian_factorization",
        worst <= 1e-10,
        format!("worst relative residual {worst:.3e} (bound 1e-10)"),
    )
}

fn check_exact_data_spc(ctx: &VerifyContext, rng: &mut ChaCha8Rng) -> PropertyResult {
    let d = &ctx.d_clean;
    let spc = match fit_spc(d) {
        Ok(s) => s,
        Err(e) => return PropertyResult::new("exact_data_spc_consistency", false, e.to_string()),
    };
    let (o_m, t_m) = match multistep(&ctx.model, d.n_f) {
        Ok(v) => v,
        Err(e) => return PropertyResult::new("exact_data_spc_consistency", false, e.to_string()),
    };
    let mut worst = 0.0f64;
    for _ in 0..20 {
        // pick a recorded window; the SPC prediction from its past data must
        // match the model-based multistep prediction from the true state
        let j = rng.random_range(0..d.cols());
        let xi = crate::data::stack_rows(&[&d.up, &d.yp]).column(j).into_owned();
        let u_f = d.uf.column(j).into_owned();
        let y_spc = spc.predict(&xi, &u_f);
        let x_mid = &ctx.traj_x[j + d.n_p];
        let y_model = &o_m * x_mid + &t_m * &u_f;
        worst = worst.max((&y_spc - &y_model).abs().max());
    }
    PropertyResult::new(
        "exact_data_spc_consistency",
        worst <= 1e-8,
        format!("worst absolute deviation {worst:.3e} (bound 1e-8)"),
    )
}

fn check_data_rank(ctx: &VerifyContext) -> PropertyResult {
    match check_rank(&ctx.d, ctx.model.n(), crate::data::RANK_TOL) {
        Ok(report) => PropertyResult::new(
            "data_rank_condition",
            report.full_row_rank,
            format!(
                "stack rank {}/{} rows, extended rank {}/{}",
                report.stack_rank, report.stack_rows, report.numerical_rank, report.target
            ),
        ),
        Err(e) => PropertyResult::new("data_rank_condition", false, e.to_string()),
    }
}

/// Run the full property suite for a configuration.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<Vec<PropertyResult>> {
    cfg.validate()?;
    let ctx = build_context(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data.seed.wrapping_mul(0x9e37_79b9));
    Ok(vec![
        check_ils_equivalence(&mut rng),
        check_theorem1(&ctx, cfg, &mut rng),
        check_h_star(&ctx, cfg, &mut rng),
        check_derivation_rules(&ctx, cfg, &mut rng),
        check_factorization(&mut rng),
        check_exact_data_spc(&ctx, &mut rng),
        check_data_rank(&ctx),
    ])
}
