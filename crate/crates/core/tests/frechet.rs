mod common;

use common::*;
use cullab::eval::{frechet_distance, sqrtm_2x2};
use proptest::prelude::*;

#[test]
fn frechet_matches_eigendecomposition_oracle() {
    let r = frechet_suite(100);
    assert!(r.max_oracle_gap < 1e-8, "{}", r.max_oracle_gap);
    assert!(r.identical < 1e-6, "{}", r.identical);
    assert!((r.one_d - 9.0).abs() < 0.2, "{}", r.one_d);
}

#[test]
fn unsupported_dimensions_are_rejected() {
    let three = vec![vec![0.0, 1.0, 2.0]; 10];
    assert!(frechet_distance(&three, &three).is_err());
    let two = vec![vec![0.0, 1.0]; 10];
    assert!(frechet_distance(&two, &vec![vec![0.0]; 10]).is_err());
}

proptest! {
    #[test]
    fn closed_form_sqrtm_squares_back(a in 0.01f64..10.0, d in 0.01f64..10.0, rho in -0.99f64..0.99) {
        let b = rho * (a * d).sqrt();
        let m = [[a, b], [b, d]];
        let s = sqrtm_2x2(m);
        let e = sqrtm_eig(m);
        for i in 0..2 {
            for j in 0..2 {
                let sq = s[i][0] * s[0][j] + s[i][1] * s[1][j];
                prop_assert!((sq - m[i][j]).abs() < 1e-9 * (a + d));
                prop_assert!((s[i][j] - e[i][j]).abs() < 1e-9 * (a + d).sqrt());
            }
        }
    }
}
