use std::path::Path;

use mdd_core::corpus::parse_manifest;
use mdd_core::evaluation::{
    classify, evaluate, parse_predictions, records_tsv, ErrorType, Outcome,
};
use mdd_core::{InventoryMode, PhoneInventory};

const MANIFEST: &str = "\
u1\tfeats/u1.mddf\taa iy s\taa iy s
u2\tfeats/u2.mddf\taa s t\t#aa s t
u3\tfeats/u3.mddf\tiy t aa\tiy s aa
u4\tfeats/u4.mddf\ts t iy\ts #t iy
";

// u4 arrives first on purpose; records follow manifest order.
const PREDICTIONS: &str = "\
u4\ts t #iy
u1\taa iy s
u2\t#aa s t
u3\tiy aa aa
";

fn inventory() -> PhoneInventory {
    PhoneInventory::build(&["aa", "iy", "s", "t"], InventoryMode::PerPhoneAnti).unwrap()
}

fn run() -> mdd_core::evaluation::Evaluation {
    let entries = parse_manifest(MANIFEST, Path::new("fixture.tsv")).unwrap();
    let preds = parse_predictions(PREDICTIONS, Path::new("pred.tsv")).unwrap();
    evaluate(&entries, &preds, &inventory()).unwrap()
}

#[test]
fn four_utterance_fixture_counts() {
    let ev = run();
    let c = ev.report.counts;
    assert_eq!((c.tp, c.fp, c.fn_, c.tn), (8, 1, 1, 2));
    let m = ev.report.metrics;
    assert!((m.precision.value - 2.0 / 3.0).abs() < 1e-12);
    assert!((m.recall.value - 2.0 / 3.0).abs() < 1e-12);
    assert!((m.f1.value - 2.0 / 3.0).abs() < 1e-12);
    assert!((ev.report.dar.value - 0.5).abs() < 1e-12);
    assert_eq!(ev.report.dar_non_categorical.value, 1.0);
    assert_eq!(ev.report.dar_categorical.value, 0.0);
    let b = ev.report.breakdown;
    assert_eq!((b.non_categorical.total, b.non_categorical.diagnosed), (2, 1));
    assert_eq!((b.categorical.total, b.categorical.diagnosed), (1, 0));
    assert_eq!(ev.report.insertions, 0);
}

#[test]
fn fixture_records_in_manifest_order() {
    let ev = run();
    let cells: Vec<(&str, usize, Outcome, Option<bool>, ErrorType)> = ev
        .records
        .iter()
        .map(|r| (r.utterance.as_str(), r.position, r.outcome, r.diagnosis_correct, r.error_type))
        .collect();
    use ErrorType::{Categorical, NonCategorical};
    use Outcome::*;
    let ok = ErrorType::None;
    assert_eq!(
        cells,
        vec![
            ("u1", 0, Tp, None, ok),
            ("u1", 1, Tp, None, ok),
            ("u1", 2, Tp, None, ok),
            ("u2", 0, Tn, Some(true), NonCategorical),
            ("u2", 1, Tp, None, ok),
            ("u2", 2, Tp, None, ok),
            ("u3", 0, Tp, None, ok),
            ("u3", 1, Tn, Some(false), Categorical),
            ("u3", 2, Tp, None, ok),
            ("u4", 0, Tp, None, ok),
            ("u4", 1, Fp, None, NonCategorical),
            ("u4", 2, Fn, None, ok),
        ]
    );
}

#[test]
fn report_and_dump_formats() {
    let ev = run();
    let kv = ev.report.to_key_values();
    for line in ["tp = 8", "tn = 2", "f1 = 66.67", "dar = 50.00", "dar_non_categorical = 100.00"] {
        assert!(kv.lines().any(|l| l == line), "missing `{line}` in\n{kv}");
    }
    let tsv = records_tsv(&ev.records, &inventory());
    assert_eq!(tsv.lines().count(), 13);
    assert!(tsv.lines().nth(4).unwrap().starts_with("u2\t0\taa\t#aa\t#aa\tTN\ttrue\tnon-categorical"));
}

#[test]
fn deletions_and_insertions() {
    let inv = inventory();
    let ids = |s: &str| inv.parse_transcript(s).unwrap();
    // Annotation and prediction both delete `s`.
    let c = classify("x", &ids("aa s iy"), &ids("aa iy"), &ids("aa iy"), &inv).unwrap();
    assert_eq!(c.records[1].annotated, None);
    assert_eq!(c.records[1].predicted, None);
    assert_eq!(c.records[1].outcome, Outcome::Tn);
    assert_eq!(c.records[1].diagnosis_correct, Some(true));
    assert_eq!(c.records[1].error_type, ErrorType::Categorical);
    assert_eq!(c.insertions, 0);

    let c = classify("y", &ids("aa iy"), &ids("aa iy"), &ids("aa t iy"), &inv).unwrap();
    assert!(c.records.iter().all(|r| r.outcome == Outcome::Tp));
    assert_eq!(c.insertions, 1);
}

#[test]
fn ties_prefer_substitution_over_gaps() {
    let inv = inventory();
    let ids = |s: &str| inv.parse_transcript(s).unwrap();
    // Two substitutions cost the same as a deletion plus an insertion.
    let c = classify("z", &ids("aa s iy"), &ids("aa s iy"), &ids("aa iy t"), &inv).unwrap();
    assert_eq!(c.records[1].predicted, Some(ids("iy")[0]));
    assert_eq!(c.records[2].predicted, Some(ids("t")[0]));
    assert_eq!(c.insertions, 0);
}

#[test]
fn id_mismatches_are_rejected() {
    let entries = parse_manifest(MANIFEST, Path::new("m")).unwrap();
    let inv = inventory();
    let mut preds = parse_predictions(PREDICTIONS, Path::new("p")).unwrap();
    preds.pop();
    assert!(evaluate(&entries, &preds, &inv).is_err());
    preds.push(("u9".into(), vec!["aa".into()]));
    assert!(evaluate(&entries, &preds, &inv).is_err());
    assert!(parse_predictions("u1\taa\nu1\tiy\n", Path::new("p")).is_err());
}

#[test]
fn unk_mode_folds_anti_labels() {
    let inv = PhoneInventory::build(&["aa", "iy", "s", "t"], InventoryMode::SingleUnk).unwrap();
    let entries = parse_manifest(MANIFEST, Path::new("m")).unwrap();
    let preds = parse_predictions(PREDICTIONS, Path::new("p")).unwrap();
    let ev = evaluate(&entries, &preds, &inv).unwrap();
    // `#iy` and `#aa` both read as the single unknown label.
    assert_eq!(ev.report.counts.tn, 2);
    assert_eq!(ev.report.dar_non_categorical.value, 1.0);
}
