use std::time::{Duration, Instant};

use mdd_core::ctc::{ctc_brute_force, ctc_loss};
use mdd_core::numerics::{softmax, Matrix};
use mdd_core::selftest::{ctc_oracle_check, ctc_total_probability_check, ORACLE_TOLERANCE};
use mdd_core::SymbolId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn log_of(m: &Matrix) -> Matrix {
    Matrix::from_vec(m.rows(), m.cols(), m.data().iter().map(|p| p.ln()).collect()).unwrap()
}

#[test]
fn two_frame_hand_example() {
    // columns: a, blank
    let probs = Matrix::from_rows(&[vec![0.6, 0.4], vec![0.3, 0.7]]).unwrap();
    let target = [SymbolId(0)];
    let exact = ctc_brute_force(&probs, &target).unwrap();
    assert!((exact - 0.72).abs() < 1e-15, "{exact}");
    let l = ctc_loss(&log_of(&probs), &target).unwrap();
    assert!((l.loss - (-(0.72f64).ln())).abs() < 1e-12, "{}", l.loss);
    assert!((l.loss - 0.3285).abs() < 1e-4);
}

#[test]
fn random_draws_match_enumeration() {
    let start = Instant::now();
    let o = ctc_oracle_check(200, 7);
    assert_eq!(o.draws, 200);
    assert!(o.max_abs_error <= ORACLE_TOLERANCE, "{o:?}");
    assert!(start.elapsed() < Duration::from_secs(10));
}

#[test]
fn every_shape_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for frames in 1..=6 {
        for len in 1..=3 {
            for labels in 1..=4usize {
                for _ in 0..3 {
                    let rows: Vec<Vec<f64>> = (0..frames)
                        .map(|_| {
                            let z: Vec<f64> =
                                (0..=labels).map(|_| rng.random_range(-4.0..4.0)).collect();
                            softmax(&z).unwrap()
                        })
                        .collect();
                    let probs = Matrix::from_rows(&rows).unwrap();
                    let target: Vec<SymbolId> = (0..len)
                        .map(|_| SymbolId(rng.random_range(0..labels) as u32))
                        .collect();
                    let exact = ctc_brute_force(&probs, &target).unwrap();
                    let l = ctc_loss(&log_of(&probs), &target).unwrap();
                    if exact == 0.0 {
                        assert!(!l.feasible && l.loss.is_infinite());
                        continue;
                    }
                    let diff = (l.loss + exact.ln()).abs();
                    assert!(
                        diff <= ORACLE_TOLERANCE,
                        "S={frames} L={len} V={labels}: {} vs {}",
                        l.loss,
                        -exact.ln()
                    );
                }
            }
        }
    }
}

#[test]
fn probabilities_over_all_targets_sum_to_one() {
    assert!(ctc_total_probability_check(25, 3) <= ORACLE_TOLERANCE);
}
