//! Truncated integer least-squares solvers: modified sphere decoding with
//! alphabet and switching constraints enforced during branching, plus an
//! exhaustive enumeration oracle.

use crate::error::{Error, Result};
use crate::plant::{is_feasible_flat, ControlSet};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::time::{Duration, Instant};

/// Default cap on the enumeration candidate count.
pub const ENUM_CAP: u64 = 10_000_000;

/// One truncated integer least-squares instance:
/// minimize ||L u - target||^2 over the alphabet lattice subject to the
/// switching bound against `u_prev`.
#[derive(Debug, Clone)]
pub struct IlsProblem {
    pub l_factor: DMatrix<f64>,
    pub target: DVector<f64>,
    pub cs: ControlSet,
    pub u_prev: DVector<f64>,
    pub n_f: usize,
    pub m: usize,
}

impl IlsProblem {
    fn dim(&self) -> usize {
        self.m * self.n_f
    }

    fn check(&self) -> Result<()> {
        let dim = self.dim();
        if self.l_factor.nrows() != dim || self.l_factor.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "factor is {}x{}, expected {dim}x{dim}",
                self.l_factor.nrows(),
                self.l_factor.ncols()
            )));
        }
        if self.target.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "target length {} != {dim}",
                self.target.len()
            )));
        }
        if self.cs.m() != self.m || self.u_prev.len() != self.m {
            return Err(Error::DimensionMismatch(
                "control set / previous input channel count mismatch".into(),
            ));
        }
        Ok(())
    }

    /// Channel of flat component `idx` and the value it must stay close to
    /// under the switching bound (the same channel one step earlier).
    fn prev_value(&self, idx: usize, assigned: &[f64]) -> f64 {
        let ch = idx % self.m;
        if idx < self.m {
            self.u_prev[ch]
        } else {
            assigned[idx - self.m]
        }
    }

    /// Feasible levels for flat component `idx` given the components fixed
    /// so far, in increasing (integer-map) order.
    fn feasible_levels(&self, idx: usize, assigned: &[f64]) -> Vec<f64> {
        let ch = idx % self.m;
        let prev = self.prev_value(idx, assigned);
        self.cs
            .levels(ch)
            .iter()
            .copied()
            .filter(|&l| self.cs.switch_ok(prev, l))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    Sda,
    Enum,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Sda => write!(f, "sda"),
            Method::Enum => write!(f, "enum"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u_opt: DVector<f64>,
    pub cost: f64,
    /// Candidate sequences whose full objective was evaluated.
    pub nodes_explored: u64,
    pub wall_time: Duration,
    pub method: Method,
}

/// Per-solve search trace for debugging and pruning-soundness checks.
#[derive(Debug, Clone, Default)]
pub struct SolveTrace {
    /// Incumbent radius after each strict improvement, starting with the
    /// initial one.
    pub radii: Vec<f64>,
    /// Prefixes (partial assignments) whose subtrees were pruned.
    pub pruned_prefixes: Vec<Vec<f64>>,
}

impl SolveTrace {
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.radii {
            out.push_str(&serde_json::json!({"event": "radius", "value": r}).to_string());
            out.push('\n');
        }
        for p in &self.pruned_prefixes {
            out.push_str(&serde_json::json!({"event": "pruned", "prefix": p}).to_string());
            out.push('\n');
        }
        out
    }
}

/// Shared objective evaluation; both solvers score candidates through this
/// exact float expression.
pub fn objective(l_factor: &DMatrix<f64>, u: &DVector<f64>, target: &DVector<f64>) -> f64 {
    (l_factor * u - target).norm_squared()
}

/// Babai-style feasible rounding of the unconstrained optimum: components are
/// fixed in natural order, each rounded to the nearest alphabet level that
/// respects the switching bound against the previously fixed component.
pub fn initial_guess(p: &IlsProblem) -> Result<(DVector<f64>, f64)> {
    p.check()?;
    let dim = p.dim();
    let mut assigned: Vec<f64> = Vec::with_capacity(dim);
    for idx in 0..dim {
        let mut residual = p.target[idx];
        for (j, &v) in assigned.iter().enumerate() {
            residual -= p.l_factor[(idx, j)] * v;
        }
        let desired = residual / p.l_factor[(idx, idx)];
        let feasible = p.feasible_levels(idx, &assigned);
        let best = feasible
            .iter()
            .copied()
            .min_by(|a, b| {
                (a - desired)
                    .abs()
                    .partial_cmp(&(b - desired).abs())
                    .unwrap()
            })
            .ok_or_else(|| {
                Error::Infeasible(format!(
                    "no alphabet level reachable at component {idx}"
                ))
            })?;
        assigned.push(best);
    }
    let u_init = DVector::from_vec(assigned);
    let radius = objective(&p.l_factor, &u_init, &p.target);
    Ok((u_init, radius))
}

/// Integer-map image of a flat candidate, used for lexicographic tie-breaks.
fn integer_key(p: &IlsProblem, u: &DVector<f64>) -> Vec<usize> {
    (0..u.len())
        .map(|i| {
            p.cs.level_index(i % p.m, u[i])
                .expect("candidate components lie on the alphabet")
        })
        .collect()
}

struct Search<'a> {
    p: &'a IlsProblem,
    radius: f64,
    incumbent: DVector<f64>,
    incumbent_key: Vec<usize>,
    leaves: u64,
    trace: Option<SolveTrace>,
}

impl Search<'_> {
    fn descend(&mut self, assigned: &mut Vec<f64>, partial: f64) {
        let idx = assigned.len();
        let dim = self.p.dim();
        for level in self.p.feasible_levels(idx, assigned) {
            let mut residual = self.p.target[idx];
            for (j, &v) in assigned.iter().enumerate() {
                residual -= self.p.l_factor[(idx, j)] * v;
            }
            residual -= self.p.l_factor[(idx, idx)] * level;
            let next_partial = partial + residual * residual;
            if next_partial > self.radius {
                if let Some(tr) = &mut self.trace {
                    let mut prefix = assigned.clone();
                    prefix.push(level);
                    tr.pruned_prefixes.push(prefix);
                }
                continue;
            }
            assigned.push(level);
            if idx + 1 == dim {
                self.leaves += 1;
                let candidate = DVector::from_row_slice(assigned);
                let cost = objective(&self.p.l_factor, &candidate, &self.p.target);
                if cost <= self.radius {
                    let key = integer_key(self.p, &candidate);
                    let better = cost < self.radius
                        || (cost == self.radius && key < self.incumbent_key);
                    if better {
                        if cost < self.radius {
                            if let Some(tr) = &mut self.trace {
                                tr.radii.push(cost);
                            }
                        }
                        self.radius = cost;
                        self.incumbent = candidate;
                        self.incumbent_key = key;
                    }
                }
            } else {
                self.descend(assigned, next_partial);
            }
            assigned.pop();
        }
    }
}

/// Depth-first branch-and-bound search for the closest feasible lattice
/// point, seeded with the feasible rounding of the unconstrained optimum.
pub fn sphere_decode(p: &IlsProblem) -> Result<SolveResult> {
    solve_sda(p, false).map(|(r, _)| r)
}

/// [`sphere_decode`] with the search trace attached.
pub fn sphere_decode_traced(p: &IlsProblem) -> Result<(SolveResult, SolveTrace)> {
    solve_sda(p, true).map(|(r, t)| (r, t.expect("trace requested")))
}

fn solve_sda(p: &IlsProblem, traced: bool) -> Result<(SolveResult, Option<SolveTrace>)> {
    let start = Instant::now();
    let (u_init, radius) = initial_guess(p)?;
    let incumbent_key = integer_key(p, &u_init);
    let mut search = Search {
        p,
        radius,
        incumbent: u_init,
        incumbent_key,
        leaves: 0, // initial guess is preprocessing, not search
        trace: traced.then(|| SolveTrace {
            radii: vec![radius],
            ..Default::default()
        }),
    };
    search.descend(&mut Vec::with_capacity(p.dim()), 0.0);
    let result = SolveResult {
        cost: objective(&p.l_factor, &search.incumbent, &p.target),
        u_opt: search.incumbent,
        nodes_explored: search.leaves,
        wall_time: start.elapsed(),
        method: Method::Sda,
    };
    Ok((result, search.trace))
}

/// Exhaustive scan over all alphabet sequences in lexicographic integer-map
/// order, filtered by feasibility; returns the minimum-cost survivor.
pub fn enumerate(p: &IlsProblem) -> Result<SolveResult> {
    enumerate_with_cap(p, ENUM_CAP)
}

pub fn enumerate_with_cap(p: &IlsProblem, cap: u64) -> Result<SolveResult> {
    p.check()?;
    let start = Instant::now();
    let dim = p.dim();
    let total: f64 = (0..dim)
        .map(|i| p.cs.levels(i % p.m).len() as f64)
        .product();
    if total > cap as f64 {
        return Err(Error::CapExceeded {
            candidates: total,
            cap,
        });
    }
    let mut indices = vec![0usize; dim];
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut evaluated = 0u64;
    loop {
        let candidate = DVector::from_fn(dim, |i, _| p.cs.levels(i % p.m)[indices[i]]);
        if is_feasible_flat(&candidate, &p.cs, &p.u_prev) {
            evaluated += 1;
            let cost = objective(&p.l_factor, &candidate, &p.target);
            // strict comparison keeps the lexicographically first argmin
            let better = match &best {
                Some((c, _)) => cost < *c,
                None => true,
            };
            if better {
                best = Some((cost, candidate));
            }
        }
        // odometer increment, most significant digit first for lex order
        let mut pos = dim;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            indices[pos] += 1;
            if indices[pos] < p.cs.levels(pos % p.m).len() {
                break;
            }
            indices[pos] = 0;
            if pos == 0 {
                let (cost, u_opt) = best.ok_or_else(|| {
                    Error::Infeasible("no feasible sequence in the control set".into())
                })?;
                return Ok(SolveResult {
                    u_opt,
                    cost,
                    nodes_explored: evaluated,
                    wall_time: start.elapsed(),
                    method: Method::Enum,
                });
            }
        }
    }
}
