//! Excitation-data collection, measurement-noise injection, Hankel
//! data-matrix construction, and rank / persistency diagnostics.

use crate::error::{Error, Result};
use crate::numeric;
use crate::plant::{simulate, ControlSet, PlantModel, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

/// Default relative singular-value tolerance for rank decisions.
pub const RANK_TOL: f64 = 1e-9;

/// Hankel partition of a recorded trajectory. `up`/`yp` cover the past
/// window (offsets t..t+N_p-1), `uf` covers t+N_p..t+N_p+N_f-1 and `yf`
/// covers t+N_p+1..t+N_p+N_f, so the output window is shifted one step
/// relative to the input window (the current output is the neglected one).
///
/// `u_last`/`y_mid` keep the two neglected blocks of the extended
/// (N_p+N_f+1)-step window; they are not part of the stacked data matrix but
/// are needed to evaluate the rank condition on the full window.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    pub up: DMatrix<f64>,
    pub uf: DMatrix<f64>,
    pub yp: DMatrix<f64>,
    pub yf: DMatrix<f64>,
    pub(crate) u_last: DMatrix<f64>,
    pub(crate) y_mid: DMatrix<f64>,
    pub n_p: usize,
    pub n_f: usize,
    pub m: usize,
    pub p: usize,
}

impl DataMatrix {
    /// Number of data columns.
    pub fn cols(&self) -> usize {
        self.up.ncols()
    }

    /// W_p = [U_p; Y_p], (m+p)*N_p rows.
    pub fn wp(&self) -> DMatrix<f64> {
        stack_rows(&[&self.up, &self.yp])
    }

    /// Full stack D = [U_p; U_f; Y_p; Y_f], (m+p)(N_p+N_f) rows.
    pub fn full_stack(&self) -> DMatrix<f64> {
        stack_rows(&[&self.up, &self.uf, &self.yp, &self.yf])
    }

    /// The extended window of length L = N_p+N_f+1 including the neglected
    /// input u(N_f) and output y(0) blocks; used for the rank condition.
    pub fn extended_stack(&self) -> DMatrix<f64> {
        stack_rows(&[
            &self.up,
            &self.uf,
            &self.u_last,
            &self.yp,
            &self.y_mid,
            &self.yf,
        ])
    }
}

pub fn stack_rows(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks[0].ncols();
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols);
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Measurement-noise target: per-channel SNR in dB. `snr_db = +inf` disables
/// noise entirely.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub seed: u64,
}

/// Random excitation respecting the alphabet and the switching bound:
/// each input component is drawn uniformly over its channel alphabet,
/// resampled until the step from the previously applied input is feasible.
pub fn collect_excitation(
    model: &PlantModel,
    cs: &ControlSet,
    steps: usize,
    seed: u64,
    x0: &DVector<f64>,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u_seq = random_feasible_inputs(cs, steps, None, &mut rng)?;
    simulate(model, x0, &u_seq)
}

/// Uniform feasible input sampling starting from an optional previous input.
pub fn random_feasible_inputs(
    cs: &ControlSet,
    steps: usize,
    u_prev: Option<&DVector<f64>>,
    rng: &mut impl Rng,
) -> Result<Vec<DVector<f64>>> {
    let m = cs.m();
    let mut prev = u_prev.cloned();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut u = DVector::zeros(m);
        for ch in 0..m {
            let levels = cs.levels(ch);
            let feasible: Vec<f64> = match &prev {
                Some(p) => levels
                    .iter()
                    .copied()
                    .filter(|&l| cs.switch_ok(p[ch], l))
                    .collect(),
                None => levels.to_vec(),
            };
            if feasible.is_empty() {
                return Err(Error::Infeasible(format!(
                    "no alphabet level reachable from previous input on channel {ch}"
                )));
            }
            u[ch] = feasible[rng.random_range(0..feasible.len())];
        }
        prev = Some(u.clone());
        out.push(u);
    }
    Ok(out)
}

/// Adds zero-mean white Gaussian noise to each output channel so that the
/// per-channel SNR (signal power over noise power, in dB, measured over the
/// whole trajectory) hits `spec.snr_db`. Inputs and states are untouched.
pub fn add_output_noise(traj: &Trajectory, spec: &NoiseSpec) -> Result<Trajectory> {
    if traj.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    if spec.snr_db.is_infinite() && spec.snr_db > 0.0 {
        return Ok(traj.clone());
    }
    if !spec.snr_db.is_finite() {
        return Err(Error::InvalidArgument("snr_db must be finite or +inf".into()));
    }
    let p = traj.y[0].len();
    let len = traj.y.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noisy = traj.clone();
    for ch in 0..p {
        let power: f64 = traj.y.iter().map(|y| y[ch] * y[ch]).sum::<f64>() / len as f64;
        if power <= 0.0 {
            return Err(Error::ZeroSignalPower { channel: ch });
        }
        let var = power / 10f64.powf(spec.snr_db / 10.0);
        let dist = Normal::new(0.0, var.sqrt()).expect("finite std");
        for y in noisy.y.iter_mut() {
            y[ch] += dist.sample(&mut rng);
        }
    }
    Ok(noisy)
}

/// Sliding-window Hankel partition; one column per window offset,
/// l = len(traj) - (N_p + N_f) columns in total.
pub fn build_hankel(traj: &Trajectory, n_p: usize, n_f: usize) -> Result<DataMatrix> {
    if n_p == 0 || n_f == 0 {
        return Err(Error::InvalidArgument("N_p and N_f must be >= 1".into()));
    }
    let required = n_p + n_f + 1;
    if traj.len() < required {
        return Err(Error::TooShort {
            required,
            actual: traj.len(),
        });
    }
    let m = traj.u[0].len();
    let p = traj.y[0].len();
    let l = traj.len() - (n_p + n_f);
    let mut up = DMatrix::zeros(m * n_p, l);
    let mut uf = DMatrix::zeros(m * n_f, l);
    let mut yp = DMatrix::zeros(p * n_p, l);
    let mut yf = DMatrix::zeros(p * n_f, l);
    let mut u_last = DMatrix::zeros(m, l);
    let mut y_mid = DMatrix::zeros(p, l);
    for t in 0..l {
        for k in 0..n_p {
            up.view_mut((k * m, t), (m, 1)).copy_from(&traj.u[t + k]);
            yp.view_mut((k * p, t), (p, 1)).copy_from(&traj.y[t + k]);
        }
        for k in 0..n_f {
            uf.view_mut((k * m, t), (m, 1)).copy_from(&traj.u[t + n_p + k]);
            yf.view_mut((k * p, t), (p, 1))
                .copy_from(&traj.y[t + n_p + 1 + k]);
        }
        u_last.view_mut((0, t), (m, 1)).copy_from(&traj.u[t + n_p + n_f]);
        y_mid.view_mut((0, t), (p, 1)).copy_from(&traj.y[t + n_p]);
    }
    Ok(DataMatrix {
        up,
        uf,
        yp,
        yf,
        u_last,
        y_mid,
        n_p,
        n_f,
        m,
        p,
    })
}

/// Outcome of the data rank condition on the extended window.
#[derive(Debug, Clone, Serialize)]
pub struct RankReport {
    /// Numerical rank of the extended (N_p+N_f+1)-step window stack.
    pub numerical_rank: usize,
    /// Target rank L*m + n with L = N_p+N_f+1.
    pub target: usize,
    /// True iff numerical_rank == target.
    pub satisfied: bool,
    /// Numerical rank of the stacked data matrix D = [Up;Uf;Yp;Yf].
    pub stack_rank: usize,
    /// Row count of D.
    pub stack_rows: usize,
    /// True iff D has full row rank.
    pub full_row_rank: bool,
    pub cols: usize,
}

/// Rank condition on the extended window (target (N_p+N_f+1)m + n) plus the
/// full-row-rank diagnostic on the stacked data matrix.
pub fn check_rank(d: &DataMatrix, n: usize, tol: f64) -> Result<RankReport> {
    if tol <= 0.0 {
        return Err(Error::InvalidArgument("tolerance must be > 0".into()));
    }
    let l_window = d.n_p + d.n_f + 1;
    let extended = d.extended_stack();
    let numerical_rank = numeric::numerical_rank(&extended, tol);
    let target = l_window * d.m + n;
    let stack = d.full_stack();
    let stack_rank = numeric::numerical_rank(&stack, tol);
    let stack_rows = stack.nrows();
    Ok(RankReport {
        numerical_rank,
        target,
        satisfied: numerical_rank == target,
        stack_rank,
        stack_rows,
        full_row_rank: stack_rank == stack_rows,
        cols: d.cols(),
    })
}

/// Block-Hankel persistency-of-excitation check: true iff the input Hankel
/// matrix with `order` block rows has full row rank m*order.
pub fn check_persistency(u_data: &[DVector<f64>], order: usize) -> Result<bool> {
    if order == 0 {
        return Err(Error::InvalidArgument("order must be >= 1".into()));
    }
    if u_data.len() < order {
        return Err(Error::TooShort {
            required: order,
            actual: u_data.len(),
        });
    }
    let m = u_data[0].len();
    let cols = u_data.len() - order + 1;
    let mut h = DMatrix::zeros(m * order, cols);
    for t in 0..cols {
        for k in 0..order {
            h.view_mut((k * m, t), (m, 1)).copy_from(&u_data[t + k]);
        }
    }
    Ok(numeric::numerical_rank(&h, RANK_TOL) == m * order)
}

/// Write a trajectory as CSV with header `k,u_1..u_m,y_1..y_p`.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let m = traj.u.first().map_or(0, |u| u.len());
    let p = traj.y.first().map_or(0, |y| y.len());
    let mut out = String::from("k");
    for i in 1..=m {
        out.push_str(&format!(",u_{i}"));
    }
    for i in 1..=p {
        out.push_str(&format!(",y_{i}"));
    }
    out.push('\n');
    for k in 0..traj.len() {
        out.push_str(&k.to_string());
        for v in traj.u[k].iter() {
            out.push_str(&format!(",{v:?}"));
        }
        for v in traj.y[k].iter() {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

/// Parse a trajectory from the CSV schema produced by [`trajectory_to_csv`].
pub fn trajectory_from_csv(text: &str, m: usize, p: usize) -> Result<Trajectory> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty trajectory CSV".into()))?;
    let expected_fields = 1 + m + p;
    if header.split(',').count() != expected_fields {
        return Err(Error::Config(format!(
            "trajectory CSV header has {} fields, expected {}",
            header.split(',').count(),
            expected_fields
        )));
    }
    let mut u = Vec::new();
    let mut y = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_fields {
            return Err(Error::Config(format!(
                "trajectory CSV line {} has {} fields, expected {}",
                lineno + 2,
                fields.len(),
                expected_fields
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number {s:?}: {e}")))
        };
        let mut uv = DVector::zeros(m);
        for i in 0..m {
            uv[i] = parse(fields[1 + i])?;
        }
        let mut yv = DVector::zeros(p);
        for i in 0..p {
            yv[i] = parse(fields[1 + m + i])?;
        }
        u.push(uv);
        y.push(yv);
    }
    Ok(Trajectory { u, y, x: None })
}
