//! Built-in correctness checks: CTC against exhaustive path enumeration,
//! analytic gradients against finite differences, and metric arithmetic.

use rand::Rng;

use crate::ctc::{ctc_brute_force, ctc_loss};
use crate::evaluation::{detection_metrics, f1_score, ConfusionCounts};
use crate::gradcheck::{self, SuiteOptions};
use crate::numerics::{softmax, Matrix};
use crate::phoneset::SymbolId;
use crate::seeding::rng_for;

pub const ORACLE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// A random frame-posterior matrix (rows sum to one, last column blank)
/// and a random target over the non-blank labels.
pub fn random_ctc_problem(
    rng: &mut impl Rng,
    max_frames: usize,
    max_target: usize,
    max_labels: usize,
) -> (Matrix, Vec<SymbolId>) {
    let frames = rng.random_range(1..=max_frames);
    let labels = rng.random_range(1..=max_labels);
    let len = rng.random_range(1..=max_target.max(1));
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|_| {
            let logits: Vec<f64> = (0..=labels).map(|_| rng.random_range(-3.0..3.0)).collect();
            softmax(&logits).expect("finite logits")
        })
        .collect();
    let target = (0..len)
        .map(|_| SymbolId(rng.random_range(0..labels) as u32))
        .collect();
    (Matrix::from_rows(&rows).expect("rectangular"), target)
}

fn log_matrix(m: &Matrix) -> Matrix {
    let data = m.data().iter().map(|p| p.ln()).collect();
    Matrix::from_vec(m.rows(), m.cols(), data).expect("same shape")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleOutcome {
    pub draws: usize,
    pub max_abs_error: f64,
}

/// Compares the forward recursion with exhaustive enumeration on random
/// problems (frames <= 6, target length 1 to 3, labels <= 4).
pub fn ctc_oracle_check(draws: usize, seed: u64) -> OracleOutcome {
    let mut rng = rng_for(seed, "ctc-oracle", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let (probs, target) = random_ctc_problem(&mut rng, 6, 3, 4);
        let exact = ctc_brute_force(&probs, &target).expect("small problem");
        let fast = match ctc_loss(&log_matrix(&probs), &target) {
            Ok(l) => (-l.loss).exp(),
            Err(_) => f64::NAN,
        };
        let err = (fast - exact).abs();
        worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
    }
    OracleOutcome {
        draws,
        max_abs_error: worst,
    }
}

fn all_sequences(labels: usize, max_len: usize) -> Vec<Vec<SymbolId>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for l in 0..labels {
                let mut t: Vec<SymbolId> = s.clone();
                t.push(SymbolId(l as u32));
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Largest deviation from one of the total probability over every
/// possible target, on random problems.
pub fn ctc_total_probability_check(draws: usize, seed: u64) -> f64 {
    let mut rng = rng_for(seed, "ctc-total", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let (probs, _) = random_ctc_problem(&mut rng, 4, 1, 3);
        let lp = log_matrix(&probs);
        let labels = probs.cols() - 1;
        // The loss is defined for non-empty targets only; the all-blank
        // mass comes from enumeration.
        let empty = ctc_brute_force(&probs, &[]).expect("small problem");
        let total: f64 = empty
            + all_sequences(labels, probs.rows())
                .iter()
                .skip(1)
                .map(|t| ctc_loss(&lp, t).map_or(f64::NAN, |l| (-l.loss).exp()))
                .sum::<f64>();
        let dev = (total - 1.0).abs();
        worst = if dev.is_nan() { f64::INFINITY } else { worst.max(dev) };
    }
    worst
}

pub const PUBLISHED_F1: [(f64, f64, f64); 5] = [
    (46.57, 70.28, 56.02),
    (38.99, 53.12, 44.97),
    (19.42, 52.19, 28.31),
    (41.17, 76.48, 53.52),
    (43.89, 64.54, 52.25),
];

/// Rounds to the two decimals the published tables use.
fn pct2(x: f64) -> f64 {
    (x * 100.0 * 100.0).round() / 100.0
}

pub fn metric_arithmetic_check() -> Result<(), String> {
    // (precision %, recall %, published F1 %). Published values carry
    // their own rounding, so one unit in the last place is allowed.
    for (pr, re, f1) in PUBLISHED_F1 {
        let got = pct2(f1_score(pr / 100.0, re / 100.0).value);
        if (got - f1).abs() > 0.01 + 1e-9 {
            return Err(format!("PR={pr} RE={re}: F1 {got} != {f1}"));
        }
    }
    let m = detection_metrics(&ConfusionCounts {
        tp: 5,
        fp: 1,
        fn_: 2,
        tn: 3,
    });
    let ok = (m.precision.value - 0.6).abs() < 1e-12
        && (m.recall.value - 0.75).abs() < 1e-12
        && (m.f1.value - 2.0 / 3.0).abs() < 1e-12;
    if !ok {
        return Err(format!("hand-worked counts gave {m:?}"));
    }
    Ok(())
}

pub fn run(opts: SuiteOptions) -> Vec<GroupResult> {
    let mut out = Vec::new();

    let o = ctc_oracle_check(200, opts.seed);
    let total = ctc_total_probability_check(20, opts.seed);
    out.push(GroupResult {
        name: "ctc-oracle",
        passed: o.max_abs_error <= ORACLE_TOLERANCE && total <= ORACLE_TOLERANCE,
        detail: format!(
            "{} draws, max |forward - enumeration| = {:.2e}; max |sum over targets - 1| = {:.2e}",
            o.draws, o.max_abs_error, total
        ),
    });

    let reports = gradcheck::run_suite(opts);
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} ({:.2e})", r.name, r.max_relative_error))
        .collect();
    let worst = reports
        .iter()
        .map(|r| r.max_relative_error)
        .fold(0.0, f64::max);
    out.push(GroupResult {
        name: "gradients",
        passed: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{} operations, max relative error {worst:.2e}", reports.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    });

    let m = metric_arithmetic_check();
    out.push(GroupResult {
        name: "metrics",
        passed: m.is_ok(),
        detail: m.err().unwrap_or_else(|| "published F1 values reproduced".into()),
    });
    out
}
