//! Ground-truth LTI simulation, the finite control set, and the model-based
//! multi-step predictor used as a consistency oracle.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Tolerance for snapping a real value onto an alphabet level.
pub const LEVEL_TOL: f64 = 1e-12;

/// Discrete-time LTI triple x(k+1) = A x(k) + B u(k), y(k) = C x(k).
/// No feed-through: the output depends only on the current state.
#[derive(Debug, Clone)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "B has {} rows, expected {}",
                b.nrows(),
                a.nrows()
            )));
        }
        if c.ncols() != a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "C has {} cols, expected {}",
                c.ncols(),
                a.nrows()
            )));
        }
        Ok(Self { a, b, c })
    }

    /// State dimension n.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension m.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Output dimension p.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
}

/// Finite control set: per-channel level lists plus an optional infinity-norm
/// bound on the per-step input change. Levels map bijectively onto
/// `0..levels.len()` in increasing order.
#[derive(Debug, Clone)]
pub struct ControlSet {
    channel_levels: Vec<Vec<f64>>,
    pub delta_bound: Option<f64>,
}

impl ControlSet {
    /// One shared alphabet for all `m` channels.
    pub fn uniform(levels: Vec<f64>, m: usize, delta_bound: Option<f64>) -> Result<Self> {
        Self::per_channel(vec![levels; m], delta_bound)
    }

    pub fn per_channel(channel_levels: Vec<Vec<f64>>, delta_bound: Option<f64>) -> Result<Self> {
        if channel_levels.is_empty() {
            return Err(Error::InvalidArgument("no input channels".into()));
        }
        for levels in &channel_levels {
            if levels.is_empty() {
                return Err(Error::InvalidArgument("empty alphabet".into()));
            }
            if levels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(
                    "alphabet levels must be strictly increasing".into(),
                ));
            }
            if levels.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite alphabet level".into()));
            }
        }
        if let Some(d) = delta_bound {
            if d < 0.0 {
                return Err(Error::InvalidArgument("delta_bound must be >= 0".into()));
            }
        }
        Ok(Self {
            channel_levels,
            delta_bound,
        })
    }

    pub fn m(&self) -> usize {
        self.channel_levels.len()
    }

    pub fn levels(&self, channel: usize) -> &[f64] {
        &self.channel_levels[channel]
    }

    /// Integer index of `value` within the channel's alphabet, if it lies
    /// within `LEVEL_TOL` of a level.
    pub fn level_index(&self, channel: usize, value: f64) -> Option<usize> {
        self.channel_levels[channel]
            .iter()
            .position(|&l| (l - value).abs() <= LEVEL_TOL)
    }

    /// Whether stepping from `prev` to `next` respects the switching bound.
    pub fn switch_ok(&self, prev: f64, next: f64) -> bool {
        match self.delta_bound {
            Some(d) => (next - prev).abs() <= d + LEVEL_TOL,
            None => true,
        }
    }
}

/// Recorded I/O data. `x`, when present, has one extra entry (the state after
/// the last input was applied).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub x: Option<Vec<DVector<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// One simulation step: x_next = A x + B u, y = C x (pre-update state).
pub fn step(
    model: &PlantModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if x.len() != model.n() {
        return Err(Error::DimensionMismatch(format!(
            "state length {} != n = {}",
            x.len(),
            model.n()
        )));
    }
    if u.len() != model.m() {
        return Err(Error::DimensionMismatch(format!(
            "input length {} != m = {}",
            u.len(),
            model.m()
        )));
    }
    let x_next = &model.a * x + &model.b * u;
    let y = &model.c * x;
    Ok((x_next, y))
}

/// Roll the plant forward through `u_seq`, logging states.
pub fn simulate(model: &PlantModel, x0: &DVector<f64>, u_seq: &[DVector<f64>]) -> Result<Trajectory> {
    let mut x = x0.clone();
    let mut xs = vec![x.clone()];
    let mut ys = Vec::with_capacity(u_seq.len());
    for u in u_seq {
        let (x_next, y) = step(model, &x, u)?;
        ys.push(y);
        xs.push(x_next.clone());
        x = x_next;
    }
    Ok(Trajectory {
        u: u_seq.to_vec(),
        y: ys,
        x: Some(xs),
    })
}

/// Multi-step predictor for y(1..N_f): y_f = O x0 + T u_f with
/// O = [CA; CA^2; ...; CA^{N_f}] and T lower block-triangular with CB blocks
/// on the diagonal. The stacked input is u(0..N_f-1).
pub fn multistep(model: &PlantModel, n_f: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if n_f == 0 {
        return Err(Error::InvalidArgument("N_f must be >= 1".into()));
    }
    let (n, m, p) = (model.n(), model.m(), model.p());
    let mut o = DMatrix::<f64>::zeros(p * n_f, n);
    let mut t = DMatrix::<f64>::zeros(p * n_f, m * n_f);
    // powers[k] = C A^k
    let mut ca = model.c.clone();
    let mut powers = Vec::with_capacity(n_f + 1);
    powers.push(ca.clone());
    for _ in 0..n_f {
        ca = &ca * &model.a;
        powers.push(ca.clone());
    }
    for r in 0..n_f {
        // block row r predicts y(r+1)
        o.view_mut((r * p, 0), (p, n)).copy_from(&powers[r + 1]);
        for c in 0..=r {
            let block = &powers[r - c] * &model.b;
            t.view_mut((r * p, c * m), (p, m)).copy_from(&block);
        }
    }
    Ok((o, t))
}

/// Alphabet membership plus switching-bound feasibility for a stacked input
/// sequence, with u(-1) = `u_prev`.
pub fn is_feasible(u_seq: &[DVector<f64>], cs: &ControlSet, u_prev: &DVector<f64>) -> bool {
    let m = cs.m();
    let mut prev = u_prev.clone();
    for u in u_seq {
        if u.len() != m {
            return false;
        }
        for ch in 0..m {
            if cs.level_index(ch, u[ch]).is_none() {
                return false;
            }
            if !cs.switch_ok(prev[ch], u[ch]) {
                return false;
            }
        }
        prev = u.clone();
    }
    true
}

/// `is_feasible` for a flat m*N_f vector of stacked inputs.
pub fn is_feasible_flat(u_flat: &DVector<f64>, cs: &ControlSet, u_prev: &DVector<f64>) -> bool {
    let m = cs.m();
    debug_assert_eq!(u_flat.len() % m, 0);
    let seq: Vec<DVector<f64>> = (0..u_flat.len() / m)
        .map(|k| DVector::from_iterator(m, (0..m).map(|c| u_flat[k * m + c])))
        .collect();
    is_feasible(&seq, cs, u_prev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn step_identity_maps() {
        let model = PlantModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let (x_next, y) = step(&model, &dv(&[0.0, 0.0]), &dv(&[1.0, 0.0])).unwrap();
        assert_eq!(x_next, dv(&[1.0, 0.0]));
        assert_eq!(y, dv(&[0.0, 0.0]));
    }

    #[test]
    fn step_nilpotent() {
        let model = PlantModel::new(
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let (x_next, y) = step(&model, &dv(&[3.0]), &dv(&[2.0])).unwrap();
        assert_eq!(x_next, dv(&[2.0]));
        assert_eq!(y, dv(&[3.0]));
    }

    #[test]
    fn step_rejects_bad_dims() {
        let model = PlantModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!(step(&model, &dv(&[0.0]), &dv(&[0.0, 0.0])).is_err());
        assert!(step(&model, &dv(&[0.0, 0.0]), &dv(&[0.0])).is_err());
    }

    #[test]
    fn zero_input_keeps_equilibrium() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        // scale below unit spectral radius via the row-sum bound
        let row_sum: f64 = (0..3)
            .map(|i| a.row(i).iter().map(|v| f64::abs(*v)).sum::<f64>())
            .fold(0.0, f64::max);
        a /= row_sum * 1.2;
        let model = PlantModel::new(a, DMatrix::identity(3, 3).columns(0, 2).into(),
            DMatrix::identity(3, 3)).unwrap();
        let u_seq = vec![dv(&[0.0, 0.0]); 100];
        let traj = simulate(&model, &dv(&[0.0, 0.0, 0.0]), &u_seq).unwrap();
        for y in &traj.y {
            assert_eq!(y.abs().max(), 0.0);
        }
    }

    #[test]
    fn simulate_empty_input() {
        let model = PlantModel::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let traj = simulate(&model, &dv(&[5.0]), &[]).unwrap();
        assert!(traj.is_empty());
        assert_eq!(traj.x.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn simulate_scalar_integrator() {
        let model = PlantModel::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let traj = simulate(&model, &dv(&[0.0]), &[dv(&[1.0]), dv(&[1.0]), dv(&[1.0])]).unwrap();
        let ys: Vec<f64> = traj.y.iter().map(|y| y[0]).collect();
        assert_eq!(ys, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn simulate_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = PlantModel::new(
            DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.5..0.5)),
            DMatrix::from_fn(2, 1, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(1, 2, |_, _| rng.random_range(-1.0..1.0)),
        )
        .unwrap();
        let u_seq: Vec<_> = (0..20).map(|_| dv(&[rng.random_range(-1.0..1.0)])).collect();
        let t1 = simulate(&model, &dv(&[0.1, -0.2]), &u_seq).unwrap();
        let t2 = simulate(&model, &dv(&[0.1, -0.2]), &u_seq).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn multistep_scalar_integrator() {
        let model = PlantModel::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let (o, t) = multistep(&model, 2).unwrap();
        assert_eq!(o, DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        assert_eq!(t, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]));
    }

    #[test]
    fn multistep_zero_c() {
        let model = PlantModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(1, 2),
        )
        .unwrap();
        let (o, t) = multistep(&model, 3).unwrap();
        assert_eq!(o.abs().max(), 0.0);
        assert_eq!(t.abs().max(), 0.0);
    }

    #[test]
    fn multistep_rejects_zero_horizon() {
        let model = PlantModel::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        assert!(multistep(&model, 0).is_err());
    }

    #[test]
    fn multistep_matches_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(1..=3);
            let p = rng.random_range(1..=3);
            let n_f = rng.random_range(1..=6);
            let model = PlantModel::new(
                DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.8..0.8)),
                DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0)),
                DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0)),
            )
            .unwrap();
            let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let u_seq: Vec<DVector<f64>> = (0..n_f)
                .map(|_| DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let (o, t) = multistep(&model, n_f).unwrap();
            let u_flat = DVector::from_iterator(m * n_f, u_seq.iter().flat_map(|u| u.iter().copied()));
            let y_pred = &o * &x0 + &t * &u_flat;

            // oracle: step-by-step simulation, one extra step to reach y(N_f)
            let mut u_ext = u_seq.clone();
            u_ext.push(DVector::zeros(m));
            let traj = simulate(&model, &x0, &u_ext).unwrap();
            for k in 0..n_f {
                for i in 0..p {
                    let sim = traj.y[k + 1][i];
                    assert!((y_pred[k * p + i] - sim).abs() <= 1e-10);
                }
            }
            // strict causality of T
            for r in 0..n_f {
                for c in (r + 1)..n_f {
                    let block = t.view((r * p, c * m), (p, m));
                    assert_eq!(block.abs().max(), 0.0);
                }
            }
        }
    }

    #[test]
    fn feasibility_switching_and_membership() {
        let cs = ControlSet::uniform(vec![-1.0, 0.0, 1.0], 3, Some(1.0)).unwrap();
        let u_prev = dv(&[1.0, 1.0, 1.0]);
        assert!(!is_feasible(&[dv(&[-1.0, 0.0, 0.0])], &cs, &u_prev));
        assert!(is_feasible(
            &[dv(&[0.0, 0.0, 0.0]), dv(&[-1.0, 1.0, 1.0])],
            &cs,
            &u_prev
        ));
        let cs1 = ControlSet::uniform(vec![-1.0, 0.0, 1.0], 1, None).unwrap();
        assert!(!is_feasible(&[dv(&[0.5])], &cs1, &dv(&[0.0])));
    }
}
