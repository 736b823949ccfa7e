//! Data-driven predictors: the SPC least-squares predictor, the regularizer
//! weight matrices, the closed-form minimum regularizer cost, and the affine
//! implicit predictor that the condensed problem is built on.

use crate::data::{stack_rows, DataMatrix};
use crate::error::{Error, Result};
use crate::numeric::{
    condition_number, lu_solve, pinv, spd_inverse, symmetrize, weighted_norm_sq, SVD_RCOND,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Condition-number threshold above which weight construction is refused.
pub const COND_WARN: f64 = 1e12;

/// Which quadratic regularizer acts on the generator vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    /// h(a) = lambda * ||(I - Pi) a||^2
    Projection,
    /// h(a) = lambda * ||a||^2
    TwoNorm,
}

/// Least-squares multi-step predictor y_hat = O xi + T u_f fitted as
/// [O T] = Y_f pinv([W_p; U_f]).
#[derive(Debug, Clone)]
pub struct SpcPredictor {
    pub o: DMatrix<f64>,
    pub t: DMatrix<f64>,
}

impl SpcPredictor {
    pub fn predict(&self, xi: &DVector<f64>, u_f: &DVector<f64>) -> DVector<f64> {
        &self.o * xi + &self.t * u_f
    }
}

/// Cached weight matrices derived from the data partition.
#[derive(Debug, Clone)]
pub struct RegWeights {
    pub q_reg: DMatrix<f64>,
    pub r_reg: DMatrix<f64>,
    pub wp_gram_inv: DMatrix<f64>,
    pub uf_wp_pinv: DMatrix<f64>,
    pub pi: DMatrix<f64>,
}

/// Affine implicit predictor y_hat = O xi + T u_f + g, together with the
/// deltas against the SPC predictor and the gain that maps a reference
/// window to the constant term.
#[derive(Debug, Clone)]
pub struct ImplicitPredictor {
    pub o: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub g: DVector<f64>,
    pub d_o: DMatrix<f64>,
    pub d_t: DMatrix<f64>,
    /// g = ref_gain * y_ref for any reference window.
    pub ref_gain: DMatrix<f64>,
}

impl ImplicitPredictor {
    pub fn predict(&self, xi: &DVector<f64>, u_f: &DVector<f64>) -> DVector<f64> {
        &self.o * xi + &self.t * u_f + &self.g
    }

    /// Constant term for a different reference window; O and T are unaffected.
    pub fn constant_term(&self, y_ref: &DVector<f64>) -> DVector<f64> {
        &self.ref_gain * y_ref
    }
}

/// Orthogonal projector onto the row space of [W_p; U_f].
pub fn projection_matrix(d: &DataMatrix) -> Result<DMatrix<f64>> {
    let m = stack_rows(&[&d.wp(), &d.uf]);
    let gram = &m * m.transpose();
    let cond = condition_number(&gram);
    if cond > COND_WARN {
        return Err(Error::IllConditioned(format!(
            "[Wp;Uf] Gram matrix condition number {cond:.3e} exceeds {COND_WARN:.1e}"
        )));
    }
    let gram_inv = spd_inverse(&gram, "[Wp;Uf] Gram matrix")?;
    Ok(symmetrize(&(m.transpose() * gram_inv * m)))
}

/// Fit the SPC predictor. Rank deficiency of [W_p; U_f] (expected for exact
/// noise-free data) is handled by the SVD cutoff; the prediction is still
/// exact on consistent (xi, u_f).
pub fn fit_spc(d: &DataMatrix) -> Result<SpcPredictor> {
    let m = stack_rows(&[&d.wp(), &d.uf]);
    let ot = &d.yf * pinv(&m, SVD_RCOND);
    let split = (d.m + d.p) * d.n_p;
    let o = ot.columns(0, split).into();
    let t = ot.columns(split, d.m * d.n_f).into();
    Ok(SpcPredictor { o, t })
}

/// Weight matrices of the closed-form regularizer cost. Requires the data
/// matrix to have full row rank.
pub fn reg_weights(d: &DataMatrix) -> Result<RegWeights> {
    let pi = projection_matrix(d)?;
    let l = d.cols();
    let eye = DMatrix::<f64>::identity(l, l);
    let q_inner = symmetrize(&(&d.yf * (&eye - &pi) * d.yf.transpose()));
    let cond_q = condition_number(&q_inner);
    if cond_q > COND_WARN {
        return Err(Error::IllConditioned(format!(
            "Yf (I-Pi) Yf' condition number {cond_q:.3e} exceeds {COND_WARN:.1e}; \
             data may violate the full-row-rank assumption"
        )));
    }
    let q_reg = spd_inverse(&q_inner, "Yf (I-Pi) Yf'")?;

    let wp = d.wp();
    let wp_gram = symmetrize(&(&wp * wp.transpose()));
    let wp_gram_inv = spd_inverse(&wp_gram, "Wp Wp'")?;
    let proj_wp = wp.transpose() * &wp_gram_inv * &wp;
    let r_inner = symmetrize(&(&d.uf * (&eye - proj_wp) * d.uf.transpose()));
    let r_reg = spd_inverse(&r_inner, "Uf (I - Wp+Wp) Uf'")?;
    let uf_wp_pinv = &d.uf * pinv(&wp, SVD_RCOND);
    Ok(RegWeights {
        q_reg,
        r_reg,
        wp_gram_inv,
        uf_wp_pinv,
        pi,
    })
}

/// Closed-form minimum regularizer cost.
///
/// Projection kind: lambda * ||y_f - y_spc||^2_{Q_reg}. TwoNorm adds the
/// input-residual and past-window terms, which do not depend on y_f.
pub fn h_star(
    w: &RegWeights,
    kind: RegularizerKind,
    lambda_a: f64,
    xi: &DVector<f64>,
    u_f: &DVector<f64>,
    y_f: &DVector<f64>,
    spc: &SpcPredictor,
) -> Result<f64> {
    if lambda_a <= 0.0 {
        return Err(Error::InvalidArgument("lambda_a must be > 0".into()));
    }
    let y_res = y_f - spc.predict(xi, u_f);
    let mut val = lambda_a * weighted_norm_sq(&y_res, &w.q_reg);
    if kind == RegularizerKind::TwoNorm {
        let u_res = u_f - &w.uf_wp_pinv * xi;
        val += lambda_a * weighted_norm_sq(&u_res, &w.r_reg);
        val += lambda_a * weighted_norm_sq(xi, &w.wp_gram_inv);
    }
    Ok(val)
}

/// Independent oracle for the minimum regularizer cost: minimizes h over the
/// generator vector subject to the stacked equality [Wp; Uf; Yf] a =
/// (xi, u_f, y_f). Returns (minimum, optimal generator).
pub fn h_star_oracle(
    d: &DataMatrix,
    kind: RegularizerKind,
    lambda_a: f64,
    xi: &DVector<f64>,
    u_f: &DVector<f64>,
    y_f: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    if lambda_a <= 0.0 {
        return Err(Error::InvalidArgument("lambda_a must be > 0".into()));
    }
    let e = stack_rows(&[&d.wp(), &d.uf, &d.yf]);
    let mut b = DVector::zeros(e.nrows());
    b.rows_mut(0, xi.len()).copy_from(xi);
    b.rows_mut(xi.len(), u_f.len()).copy_from(u_f);
    b.rows_mut(xi.len() + u_f.len(), y_f.len()).copy_from(y_f);

    let l = d.cols();
    let a = match kind {
        RegularizerKind::TwoNorm => {
            // minimum-norm solution of E a = b
            pinv(&e, SVD_RCOND) * &b
        }
        RegularizerKind::Projection => {
            // equality-constrained least squares on the projector residual:
            // KKT system for min ||(I-Pi) a||^2 s.t. E a = b
            let pi = projection_matrix(d)?;
            let pres = DMatrix::<f64>::identity(l, l) - pi;
            let rows = e.nrows();
            let dim = l + rows;
            let mut kkt = DMatrix::<f64>::zeros(dim, dim);
            kkt.view_mut((0, 0), (l, l)).copy_from(&(2.0 * &pres));
            kkt.view_mut((0, l), (l, rows)).copy_from(&e.transpose());
            kkt.view_mut((l, 0), (rows, l)).copy_from(&e);
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(l, rows).copy_from(&b);
            let sol = lu_solve(&kkt, &rhs, "projection-regularizer KKT system")?;
            sol.rows(0, l).into()
        }
    };
    // verify constraint consistency
    let residual = (&e * &a - &b).abs().max();
    let scale = 1.0 + b.abs().max();
    if residual > 1e-6 * scale {
        return Err(Error::Infeasible(format!(
            "equality system inconsistent: residual {residual:.3e}"
        )));
    }
    let val = match kind {
        RegularizerKind::TwoNorm => lambda_a * a.norm_squared(),
        RegularizerKind::Projection => {
            let pi = projection_matrix(d)?;
            let res = &a - pi * &a;
            lambda_a * res.norm_squared()
        }
    };
    Ok((val, a))
}

/// Implicit predictor of the regularized problem: a convex blend of the SPC
/// prediction and the reference, with S = (lambda Q_reg + Q_bar)^-1.
pub fn implicit_predictor(
    spc: &SpcPredictor,
    w: &RegWeights,
    q_bar: &DMatrix<f64>,
    lambda_a: f64,
    y_ref: &DVector<f64>,
) -> Result<ImplicitPredictor> {
    if lambda_a <= 0.0 {
        return Err(Error::InvalidArgument("lambda_a must be > 0".into()));
    }
    let blend = symmetrize(&(lambda_a * &w.q_reg + q_bar));
    let cond = condition_number(&blend);
    if cond > COND_WARN {
        return Err(Error::IllConditioned(format!(
            "lambda Q_reg + Q_bar condition number {cond:.3e} exceeds {COND_WARN:.1e}"
        )));
    }
    let s = spd_inverse(&blend, "lambda Q_reg + Q_bar")?;
    let spc_gain = &s * (lambda_a * &w.q_reg);
    let ref_gain = &s * q_bar;
    let o = &spc_gain * &spc.o;
    let t = &spc_gain * &spc.t;
    let g = &ref_gain * y_ref;
    let d_o = &o - &spc.o;
    let d_t = &t - &spc.t;
    Ok(ImplicitPredictor {
        o,
        t,
        g,
        d_o,
        d_t,
        ref_gain,
    })
}

/// Export the fitted predictor matrices as a JSON document (row-major arrays).
pub fn predictor_to_json(spc: &SpcPredictor, pred: &ImplicitPredictor) -> serde_json::Value {
    fn mat(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    }
    serde_json::json!({
        "o_spc": mat(&spc.o),
        "t_spc": mat(&spc.t),
        "o_dpc": mat(&pred.o),
        "t_dpc": mat(&pred.t),
        "g_dpc": pred.g.iter().copied().collect::<Vec<f64>>(),
        "d_o": mat(&pred.d_o),
        "d_t": mat(&pred.d_t),
    })
}
