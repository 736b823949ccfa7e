//! Seeded synthetic plant generators for tests, the verification suite, and
//! shipped fixtures.

use crate::plant::PlantModel;
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Scalar integrator: A = B = C = 1.
pub fn integrator_1d() -> PlantModel {
    PlantModel::new(
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
    )
    .unwrap()
}

/// Random plant with a prescribed spectral radius, built by orthogonal
/// similarity of a block-diagonal eigenstructure (rotation blocks for complex
/// pairs), so the radius is exact by construction.
pub fn random_stable_plant(
    n: usize,
    m: usize,
    p: usize,
    spectral_radius: f64,
    seed: u64,
) -> PlantModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5337_ab1e);
    let mut lambda = DMatrix::<f64>::zeros(n, n);
    let mut i = 0;
    let mut first = true;
    while i < n {
        // the first block is pinned at the requested radius
        let r = if first {
            spectral_radius
        } else {
            rng.random_range(0.3..=1.0) * spectral_radius
        };
        first = false;
        if i + 1 < n && rng.random_bool(0.5) {
            let theta: f64 = rng.random_range(0.1..std::f64::consts::PI - 0.1);
            let (s, c) = theta.sin_cos();
            lambda[(i, i)] = r * c;
            lambda[(i, i + 1)] = r * s;
            lambda[(i + 1, i)] = -r * s;
            lambda[(i + 1, i + 1)] = r * c;
            i += 2;
        } else {
            lambda[(i, i)] = if rng.random_bool(0.5) { r } else { -r };
            i += 1;
        }
    }
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = g.qr().q();
    let a = &q * lambda * q.transpose();
    let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let c = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
    PlantModel::new(a, b, c).unwrap()
}

/// Random vector with entries uniform in [-scale, scale].
pub fn random_vector(len: usize, scale: f64, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-scale..scale))
}
