//! Receding-horizon closed-loop execution: past-window bookkeeping, per-step
//! gradient rebuilds against a cached Hessian factorization, solver dispatch,
//! and timing statistics.

use crate::condense::{diff_operators, dpc_gradient, dpc_hessian, transform, DiffOperators, WeightConfig};
use crate::data::DataMatrix;
use crate::decoder::{self, IlsProblem, Method, SolveResult, SolveTrace};
use crate::error::{Error, Result};
use crate::numeric::matrix_checksum;
use crate::plant::{step, ControlSet, PlantModel};
use crate::predictor::{fit_spc, implicit_predictor, reg_weights, ImplicitPredictor, RegWeights, SpcPredictor};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use std::collections::BTreeMap;
use std::time::{Duration, Instant};

/// Rolling window of the last N_p applied inputs and measured outputs.
#[derive(Debug, Clone)]
pub struct XiBuffer {
    n_p: usize,
    u_hist: Vec<DVector<f64>>,
    y_hist: Vec<DVector<f64>>,
}

impl XiBuffer {
    pub fn new(n_p: usize, u_hist: Vec<DVector<f64>>, y_hist: Vec<DVector<f64>>) -> Result<Self> {
        if u_hist.len() != n_p || y_hist.len() != n_p {
            return Err(Error::DimensionMismatch(format!(
                "buffer needs exactly {n_p} input and output samples"
            )));
        }
        Ok(Self { n_p, u_hist, y_hist })
    }

    /// Stacked past window in W_p order: flattened inputs then outputs,
    /// oldest first.
    pub fn xi(&self) -> DVector<f64> {
        let m = self.u_hist[0].len();
        let p = self.y_hist[0].len();
        let mut out = DVector::zeros((m + p) * self.n_p);
        for (k, u) in self.u_hist.iter().enumerate() {
            out.rows_mut(k * m, m).copy_from(u);
        }
        let base = m * self.n_p;
        for (k, y) in self.y_hist.iter().enumerate() {
            out.rows_mut(base + k * p, p).copy_from(y);
        }
        out
    }

    /// Most recently applied input u(-1).
    pub fn u_prev(&self) -> &DVector<f64> {
        self.u_hist.last().expect("buffer is never empty")
    }

    pub fn push(&mut self, u: DVector<f64>, y: DVector<f64>) {
        self.u_hist.remove(0);
        self.y_hist.remove(0);
        self.u_hist.push(u);
        self.y_hist.push(y);
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }
}

/// Output reference as a function of absolute time.
#[derive(Debug, Clone)]
pub enum ReferenceSignal {
    Constant(DVector<f64>),
    /// Piecewise-constant segments; each applies from its start index until
    /// the next segment begins. The first segment must start at 0.
    Piecewise(Vec<(usize, DVector<f64>)>),
}

impl ReferenceSignal {
    pub fn at(&self, k: usize) -> DVector<f64> {
        match self {
            ReferenceSignal::Constant(v) => v.clone(),
            ReferenceSignal::Piecewise(segments) => segments
                .iter()
                .rev()
                .find(|(from, _)| *from <= k)
                .map(|(_, v)| v.clone())
                .unwrap_or_else(|| segments[0].1.clone()),
        }
    }

    /// Stacked horizon view y_ref(k+1..k+N_f).
    pub fn window(&self, k: usize, n_f: usize) -> DVector<f64> {
        let p = self.at(k).len();
        let mut out = DVector::zeros(p * n_f);
        for j in 0..n_f {
            out.rows_mut(j * p, p).copy_from(&self.at(k + 1 + j));
        }
        out
    }
}

/// One closed-loop step record.
#[derive(Debug, Clone)]
pub struct StepLog {
    pub k: usize,
    pub xi_snapshot: DVector<f64>,
    pub u_applied: DVector<f64>,
    pub y_measured: DVector<f64>,
    pub objective: f64,
    pub solve: SolveResult,
    pub hessian_checksum: u64,
    pub factor_checksum: u64,
    /// Search trace when tracing is enabled and the method supports it.
    pub trace: Option<SolveTrace>,
}

/// Per-method timing summary; outliers are samples above q75 + 1.5 IQR.
#[derive(Debug, Clone, Serialize)]
pub struct TimingStats {
    pub count: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub outliers: Vec<f64>,
}

/// Offline-fitted controller state: predictors, weight matrices, and the
/// one-time Hessian factorization. Per-step work is gradient assembly plus
/// the solve.
#[derive(Debug, Clone)]
pub struct DpcController {
    pub spc: SpcPredictor,
    pub pred: ImplicitPredictor,
    pub weights: RegWeights,
    pub wc: WeightConfig,
    pub ops: DiffOperators,
    pub hessian: DMatrix<f64>,
    pub l_factor: DMatrix<f64>,
    pub cs: ControlSet,
    pub n_p: usize,
    pub n_f: usize,
    pub m: usize,
    pub p: usize,
    /// Candidate cap applied when solving via enumeration.
    pub enum_cap: u64,
    /// Record sphere-decoder search traces in the step logs.
    pub trace: bool,
}

impl DpcController {
    /// Fit all offline pieces from a data matrix; the Hessian and its factor
    /// are computed exactly once here.
    pub fn fit(d: &DataMatrix, cs: &ControlSet, wc: WeightConfig) -> Result<Self> {
        let spc = fit_spc(d)?;
        let weights = reg_weights(d)?;
        let py = d.p * d.n_f;
        // constant term is rebuilt per step; fit with a zero reference
        let pred = implicit_predictor(&spc, &weights, &wc.q_bar, wc.lambda_a, &DVector::zeros(py))?;
        let ops = diff_operators(d.m, d.n_f)?;
        let hessian = dpc_hessian(&pred, &weights, &wc, &ops);
        let l_factor = crate::condense::lower_factor(&hessian)?;
        Ok(Self {
            spc,
            pred,
            weights,
            wc,
            ops,
            hessian,
            l_factor,
            cs: cs.clone(),
            n_p: d.n_p,
            n_f: d.n_f,
            m: d.m,
            p: d.p,
            enum_cap: decoder::ENUM_CAP,
            trace: false,
        })
    }

    pub fn hessian_checksum(&self) -> u64 {
        matrix_checksum(&self.hessian)
    }

    pub fn factor_checksum(&self) -> u64 {
        matrix_checksum(&self.l_factor)
    }

    /// Solve one step: rebuild the gradient from the current window, form the
    /// integer least-squares instance against the cached factor, and solve
    /// with the selected method. The returned duration covers gradient
    /// assembly plus the solve.
    pub fn solve_step(
        &self,
        buffer: &XiBuffer,
        y_ref_window: &DVector<f64>,
        method: Method,
    ) -> Result<(DVector<f64>, SolveResult, Duration, Option<SolveTrace>)> {
        let start = Instant::now();
        let xi = buffer.xi();
        let f = dpc_gradient(
            &self.pred,
            &self.weights,
            &self.wc,
            &self.ops,
            &xi,
            buffer.u_prev(),
            y_ref_window,
        );
        let (_, u_unc_t) = transform(&self.l_factor, &f);
        let problem = IlsProblem {
            l_factor: self.l_factor.clone(),
            target: u_unc_t,
            cs: self.cs.clone(),
            u_prev: buffer.u_prev().clone(),
            n_f: self.n_f,
            m: self.m,
        };
        let (solve, trace) = match method {
            Method::Sda if self.trace => {
                let (r, t) = decoder::sphere_decode_traced(&problem)?;
                (r, Some(t))
            }
            Method::Sda => (decoder::sphere_decode(&problem)?, None),
            Method::Enum => (decoder::enumerate_with_cap(&problem, self.enum_cap)?, None),
        };
        let elapsed = start.elapsed();
        let u_apply = DVector::from_iterator(self.m, solve.u_opt.iter().take(self.m).copied());
        Ok((u_apply, solve, elapsed, trace))
    }
}

/// Fill the past window with N_p random feasible steps on the plant,
/// starting from `x0`; returns the buffer and the plant state afterwards.
pub fn warmup(
    model: &PlantModel,
    cs: &ControlSet,
    n_p: usize,
    seed: u64,
    x0: &DVector<f64>,
    noise_std: Option<f64>,
) -> Result<(XiBuffer, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u_seq = crate::data::random_feasible_inputs(cs, n_p, None, &mut rng)?;
    let mut x = x0.clone();
    let mut u_hist = Vec::with_capacity(n_p);
    let mut y_hist = Vec::with_capacity(n_p);
    for u in u_seq {
        let (x_next, mut y) = step(model, &x, &u)?;
        if let Some(std) = noise_std {
            let dist = Normal::new(0.0, std).expect("finite std");
            for v in y.iter_mut() {
                *v += dist.sample(&mut rng);
            }
        }
        u_hist.push(u);
        y_hist.push(y);
        x = x_next;
    }
    Ok((XiBuffer::new(n_p, u_hist, y_hist)?, x))
}

/// Everything a closed-loop run needs.
pub struct LoopSetup<'a> {
    pub model: &'a PlantModel,
    pub cs: &'a ControlSet,
    pub controller: &'a DpcController,
    pub reference: &'a ReferenceSignal,
    pub steps: usize,
    pub seed: u64,
    /// Optional measurement-noise standard deviation during closed loop.
    pub noise_std: Option<f64>,
}

/// Receding-horizon loop: measure, solve, apply the first input, shift the
/// window. Measurement noise, when enabled, applies to the fed-back output.
pub fn run_closed_loop(setup: &LoopSetup, method: Method) -> Result<Vec<StepLog>> {
    let mut logs = Vec::with_capacity(setup.steps);
    run_closed_loop_sink(setup, method, &mut |log| logs.push(log.clone()))?;
    Ok(logs)
}

/// Like [`run_closed_loop`] but hands each step record to `sink` as soon as
/// it exists, so a step failure still leaves the earlier records flushed.
pub fn run_closed_loop_sink(
    setup: &LoopSetup,
    method: Method,
    sink: &mut dyn FnMut(&StepLog),
) -> Result<()> {
    let ctrl = setup.controller;
    let x0 = DVector::zeros(setup.model.n());
    let (mut buffer, mut x) = warmup(
        setup.model,
        setup.cs,
        ctrl.n_p,
        setup.seed,
        &x0,
        setup.noise_std,
    )?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(setup.seed ^ 0x6e6f_6973);
    let h_sum = ctrl.hessian_checksum();
    let l_sum = ctrl.factor_checksum();
    for k in 0..setup.steps {
        let mut y = &setup.model.c * &x;
        if let Some(std) = setup.noise_std {
            let dist = Normal::new(0.0, std).expect("finite std");
            for v in y.iter_mut() {
                *v += dist.sample(&mut noise_rng);
            }
        }
        let xi_snapshot = buffer.xi();
        let y_ref_window = setup.reference.window(k, ctrl.n_f);
        let (u_apply, mut solve, elapsed, trace) = ctrl.solve_step(&buffer, &y_ref_window, method)?;
        solve.wall_time = elapsed;
        x = &setup.model.a * &x + &setup.model.b * &u_apply;
        buffer.push(u_apply.clone(), y.clone());
        sink(&StepLog {
            k,
            xi_snapshot,
            u_applied: u_apply,
            y_measured: y,
            objective: solve.cost,
            solve,
            hessian_checksum: h_sum,
            factor_checksum: l_sum,
            trace,
        });
    }
    Ok(())
}

/// Quartiles by linear interpolation over the sorted samples.
pub fn summarize_samples(samples: &[f64]) -> Result<TimingStats> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to summarize".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| {
        let pos = (sorted.len() - 1) as f64 * q;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    };
    let q25 = quantile(0.25);
    let q75 = quantile(0.75);
    let fence = q75 + 1.5 * (q75 - q25);
    let outliers = sorted.iter().copied().filter(|&s| s > fence).collect();
    Ok(TimingStats {
        count: sorted.len(),
        min: sorted[0],
        q25,
        median: quantile(0.5),
        q75,
        max: sorted[sorted.len() - 1],
        outliers,
    })
}

/// Solve-time summaries (in seconds) grouped by method.
pub fn timing_summary(logs: &[StepLog]) -> Result<BTreeMap<String, TimingStats>> {
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for log in logs {
        grouped
            .entry(log.solve.method.to_string())
            .or_default()
            .push(log.solve.wall_time.as_secs_f64());
    }
    grouped
        .into_iter()
        .map(|(k, v)| summarize_samples(&v).map(|s| (k, s)))
        .collect()
}

/// Step logs as CSV: `k,method,u_1..u_m,y_1..y_p,cost,nodes,solve_time_ns`.
pub fn logs_to_csv(logs: &[StepLog]) -> String {
    let m = logs.first().map_or(0, |l| l.u_applied.len());
    let p = logs.first().map_or(0, |l| l.y_measured.len());
    let mut out = String::from("k,method");
    for i in 1..=m {
        out.push_str(&format!(",u_{i}"));
    }
    for i in 1..=p {
        out.push_str(&format!(",y_{i}"));
    }
    out.push_str(",cost,nodes,solve_time_ns\n");
    for log in logs {
        out.push_str(&format!("{},{}", log.k, log.solve.method));
        for v in log.u_applied.iter() {
            out.push_str(&format!(",{v:?}"));
        }
        for v in log.y_measured.iter() {
            out.push_str(&format!(",{v:?}"));
        }
        out.push_str(&format!(
            ",{:?},{},{}\n",
            log.solve.cost,
            log.solve.nodes_explored,
            log.solve.wall_time.as_nanos()
        ));
    }
    out
}
