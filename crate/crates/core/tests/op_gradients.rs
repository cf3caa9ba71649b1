//! Finite-difference verification of every tape operator, quantified over
//! many random seeds.

use fgrnn::gradcheck::{cases::operator_cases, FD_STEP};

#[test]
fn every_operator_matches_finite_differences_over_20_seeds() {
    let mut worst: (String, f64) = (String::new(), 0.0);
    for seed in 0..20u64 {
        for case in operator_cases(seed) {
            let err = case
                .run(FD_STEP)
                .unwrap_or_else(|e| panic!("{} (seed {seed}): {e}", case.name));
            assert!(
                err < 1e-6,
                "{} at seed {seed}: relative error {err:.3e} >= 1e-6",
                case.name
            );
            if err > worst.1 {
                worst = (format!("{} (seed {seed})", case.name), err);
            }
        }
    }
    eprintln!("worst operator FD error: {} at {:.3e}", worst.0, worst.1);
}
