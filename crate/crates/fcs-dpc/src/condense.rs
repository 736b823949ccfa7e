//! Condensed quadratic objectives for the model-based and data-driven
//! problems, Hessian factorization, and the transformed unconstrained
//! optimum handed to the sphere decoder.

use crate::error::{Error, Result};
use crate::numeric::{condition_number, symmetrize};
use crate::predictor::{ImplicitPredictor, RegWeights, RegularizerKind};
use nalgebra::{DMatrix, DVector};

/// Stacked difference operators: Delta u_f = I_op u_f - L_op u_prev.
#[derive(Debug, Clone)]
pub struct DiffOperators {
    pub i_op: DMatrix<f64>,
    pub l_op: DMatrix<f64>,
}

impl DiffOperators {
    pub fn delta(&self, u_f: &DVector<f64>, u_prev: &DVector<f64>) -> DVector<f64> {
        &self.i_op * u_f - &self.l_op * u_prev
    }
}

/// Cost weights: block-diagonal expansions of the per-step Q (PSD) and R (PD)
/// plus the regularizer strength and kind.
#[derive(Debug, Clone)]
pub struct WeightConfig {
    pub q_bar: DMatrix<f64>,
    pub r_bar: DMatrix<f64>,
    pub lambda_a: f64,
    pub kind: RegularizerKind,
}

impl WeightConfig {
    /// Expand per-step Q and R over the horizon.
    pub fn new(
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        n_f: usize,
        lambda_a: f64,
        kind: RegularizerKind,
    ) -> Result<Self> {
        if lambda_a <= 0.0 {
            return Err(Error::InvalidArgument("lambda_a must be > 0".into()));
        }
        if r.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("R must be positive definite".into()));
        }
        Ok(Self {
            q_bar: block_diag(q, n_f),
            r_bar: block_diag(r, n_f),
            lambda_a,
            kind,
        })
    }
}

pub fn block_diag(block: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let (r, c) = (block.nrows(), block.ncols());
    let mut out = DMatrix::zeros(r * count, c * count);
    for k in 0..count {
        out.view_mut((k * r, k * c), (r, c)).copy_from(block);
    }
    out
}

/// Condensed quadratic 1/2 u' H u + f' u with the factor L (L'L = H), the
/// unconstrained optimum and its transformed image L u_unc.
#[derive(Debug, Clone)]
pub struct CondensedProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub l_factor: DMatrix<f64>,
    pub u_unc: DVector<f64>,
    pub u_unc_t: DVector<f64>,
}

impl CondensedProblem {
    pub fn new(h: DMatrix<f64>, f: DVector<f64>) -> Result<Self> {
        let h = symmetrize(&h);
        let l_factor = lower_factor(&h)?;
        let (u_unc, u_unc_t) = transform(&l_factor, &f);
        Ok(Self {
            h,
            f,
            l_factor,
            u_unc,
            u_unc_t,
        })
    }

    /// Quadratic-form value 1/2 u'Hu + f'u.
    pub fn quad_value(&self, u: &DVector<f64>) -> f64 {
        0.5 * (u.transpose() * &self.h * u)[(0, 0)] + self.f.dot(u)
    }
}

/// Difference operators for `m` channels over `n_f` steps.
pub fn diff_operators(m: usize, n_f: usize) -> Result<DiffOperators> {
    if m == 0 || n_f == 0 {
        return Err(Error::InvalidArgument("m and N_f must be >= 1".into()));
    }
    let mut i_op = DMatrix::<f64>::identity(m * n_f, m * n_f);
    for k in 1..n_f {
        for c in 0..m {
            i_op[(k * m + c, (k - 1) * m + c)] = -1.0;
        }
    }
    let mut l_op = DMatrix::<f64>::zeros(m * n_f, m);
    l_op.view_mut((0, 0), (m, m))
        .copy_from(&DMatrix::identity(m, m));
    Ok(DiffOperators { i_op, l_op })
}

/// Condense the model-based tracking cost over (O, T):
/// H = 2(T'QT + I'RI), f derived by expanding the squared norms.
pub fn condense_mpc(
    o: &DMatrix<f64>,
    t: &DMatrix<f64>,
    wc: &WeightConfig,
    ops: &DiffOperators,
    x0: &DVector<f64>,
    u_prev: &DVector<f64>,
    y_ref: &DVector<f64>,
) -> Result<CondensedProblem> {
    let h = 2.0 * (t.transpose() * &wc.q_bar * t + ops.i_op.transpose() * &wc.r_bar * &ops.i_op);
    let y_off = o * x0 - y_ref;
    let f = 2.0 * (t.transpose() * &wc.q_bar * y_off)
        - 2.0 * (ops.i_op.transpose() * &wc.r_bar * (&ops.l_op * u_prev));
    CondensedProblem::new(h, f)
}

/// Hessian of the condensed data-driven problem; independent of the state,
/// the previous input, and the reference, so it is built once per run.
pub fn dpc_hessian(
    pred: &ImplicitPredictor,
    w: &RegWeights,
    wc: &WeightConfig,
    ops: &DiffOperators,
) -> DMatrix<f64> {
    let mut h = 2.0
        * (pred.t.transpose() * &wc.q_bar * &pred.t
            + ops.i_op.transpose() * &wc.r_bar * &ops.i_op
            + wc.lambda_a * pred.d_t.transpose() * &w.q_reg * &pred.d_t);
    if wc.kind == RegularizerKind::TwoNorm {
        h += 2.0 * wc.lambda_a * &w.r_reg;
    }
    symmetrize(&h)
}

/// Gradient of the condensed data-driven problem; re-assembled every step
/// from the current past window, previous input, and reference window.
pub fn dpc_gradient(
    pred: &ImplicitPredictor,
    w: &RegWeights,
    wc: &WeightConfig,
    ops: &DiffOperators,
    xi: &DVector<f64>,
    u_prev: &DVector<f64>,
    y_ref: &DVector<f64>,
) -> DVector<f64> {
    let g = pred.constant_term(y_ref);
    let y_off = &pred.o * xi + &g - y_ref;
    let spc_off = &pred.d_o * xi + &g;
    let mut f = 2.0 * (pred.t.transpose() * &wc.q_bar * y_off)
        - 2.0 * (ops.i_op.transpose() * &wc.r_bar * (&ops.l_op * u_prev))
        + 2.0 * wc.lambda_a * (pred.d_t.transpose() * &w.q_reg * spc_off);
    if wc.kind == RegularizerKind::TwoNorm {
        f -= 2.0 * wc.lambda_a * (&w.r_reg * (&w.uf_wp_pinv * xi));
    }
    f
}

/// Condense the data-driven problem for one (xi, u_prev, y_ref) instance.
pub fn condense_dpc(
    pred: &ImplicitPredictor,
    w: &RegWeights,
    wc: &WeightConfig,
    ops: &DiffOperators,
    xi: &DVector<f64>,
    u_prev: &DVector<f64>,
    y_ref: &DVector<f64>,
) -> Result<CondensedProblem> {
    let h = dpc_hessian(pred, w, wc, ops);
    if h.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(format!(
            "condensed Hessian not PD (condition number {:.3e})",
            condition_number(&h)
        )));
    }
    let f = dpc_gradient(pred, w, wc, ops, xi, u_prev, y_ref);
    CondensedProblem::new(h, f)
}

/// Lower-triangular L with positive diagonal and L'L = H, obtained from the
/// standard Cholesky factorization of the exchange-permuted matrix:
/// J H J = G G' gives L = J G' J.
pub fn lower_factor(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::DimensionMismatch("Hessian must be square".into()));
    }
    let sym_err = (h - h.transpose()).abs().max();
    if sym_err > 1e-12 * (1.0 + h.abs().max()) {
        return Err(Error::InvalidArgument(format!(
            "Hessian not symmetric (max asymmetry {sym_err:.3e})"
        )));
    }
    let flipped = DMatrix::from_fn(n, n, |i, j| h[(n - 1 - i, n - 1 - j)]);
    let chol = flipped
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Hessian factorization failed".into()))?;
    let g = chol.l();
    // L = J G' J
    Ok(DMatrix::from_fn(n, n, |i, j| g[(n - 1 - j, n - 1 - i)]))
}

/// Unconstrained optimum u_unc = -H^-1 f via the triangular factor, and its
/// transformed image L u_unc.
pub fn transform(l_factor: &DMatrix<f64>, f: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    // solve L'L u = -f: back substitution on L', forward substitution on L
    let z = l_factor
        .transpose()
        .solve_upper_triangular(&(-f))
        .expect("factor has positive diagonal");
    let u_unc = l_factor
        .solve_lower_triangular(&z)
        .expect("factor has positive diagonal");
    let u_unc_t = l_factor * &u_unc;
    (u_unc, u_unc_t)
}
