//! Randomized property tests over the solver and factorization kernels.

use fcs_dpc::condense::lower_factor;
use fcs_dpc::decoder::{enumerate, sphere_decode, IlsProblem};
use fcs_dpc::numeric::symmetrize;
use fcs_dpc::plant::ControlSet;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn level(v: i8) -> f64 {
    v.clamp(-1, 1) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Sphere decoding agrees with exhaustive enumeration on arbitrary
    /// well-posed instances, bit for bit.
    #[test]
    fn sda_matches_enumeration(
        m in 1usize..=2,
        n_f in 1usize..=3,
        bounded in any::<bool>(),
        diag in prop::collection::vec(0.3f64..2.0, 6),
        off in prop::collection::vec(-1.0f64..1.0, 15),
        target in prop::collection::vec(-3.0f64..3.0, 6),
        prev in prop::collection::vec(-1i8..=1, 2),
    ) {
        let dim = m * n_f;
        let mut l = DMatrix::zeros(dim, dim);
        let mut o = 0;
        for i in 0..dim {
            for j in 0..i {
                l[(i, j)] = off[o % off.len()];
                o += 1;
            }
            l[(i, i)] = diag[i];
        }
        let bound = if bounded { Some(1.0) } else { None };
        let p = IlsProblem {
            l_factor: l,
            target: DVector::from_fn(dim, |i, _| target[i]),
            cs: ControlSet::uniform(vec![-1.0, 0.0, 1.0], m, bound).unwrap(),
            u_prev: DVector::from_fn(m, |i, _| level(prev[i])),
            n_f,
            m,
        };
        let sda = sphere_decode(&p).unwrap();
        let en = enumerate(&p).unwrap();
        prop_assert_eq!(&sda.u_opt, &en.u_opt);
        prop_assert_eq!(sda.cost, en.cost);
        prop_assert!(sda.nodes_explored <= en.nodes_explored);
    }

    /// The exchange-permuted Cholesky factor is lower triangular with a
    /// positive diagonal and reconstructs the matrix.
    #[test]
    fn lower_factor_reconstructs(
        n in 1usize..=8,
        entries in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        let g = DMatrix::from_fn(n, n, |i, j| entries[(i * n + j) % entries.len()]);
        let h = symmetrize(&(&g * g.transpose())) + DMatrix::identity(n, n) * 0.2;
        let l = lower_factor(&h).unwrap();
        prop_assert!((l.transpose() * &l - &h).abs().max() <= 1e-10 * h.abs().max());
        for i in 0..n {
            prop_assert!(l[(i, i)] > 0.0);
            for j in (i + 1)..n {
                prop_assert_eq!(l[(i, j)], 0.0);
            }
        }
    }
}
