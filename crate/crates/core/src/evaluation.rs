//! Hierarchical MDD scoring against the canonical transcript.
//!
//! Both the annotation and the prediction are aligned to the canonical
//! string. At each canonical position the ground truth says "mispronounced"
//! when the annotation differs, and the model says so when its prediction
//! differs. The four combinations give the confusion cells, where correctly
//! pronounced is the positive class.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::path::Path;

use crate::corpus::ManifestEntry;
use crate::error::{Error, Result};
use crate::phoneset::{PhoneInventory, SymbolId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EditOp {
    Match,
    Substitute,
    /// A reference symbol with no hypothesis counterpart.
    Delete,
    /// A hypothesis symbol with no reference counterpart.
    Insert,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlignedPair {
    pub op: EditOp,
    pub reference: Option<usize>,
    pub hypothesis: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub pairs: Vec<AlignedPair>,
    pub distance: usize,
}

impl Alignment {
    /// For each reference position, the aligned hypothesis index, if any.
    pub fn projection(&self, reference_len: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; reference_len];
        for p in &self.pairs {
            if let (Some(r), Some(h)) = (p.reference, p.hypothesis) {
                out[r] = Some(h);
            }
        }
        out
    }

    pub fn count(&self, op: EditOp) -> usize {
        self.pairs.iter().filter(|p| p.op == op).count()
    }
}

/// Unit-cost Levenshtein alignment. Backtrace ties prefer match, then
/// substitution, then deletion, then insertion.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Alignment {
    let n = reference.len();
    let m = hypothesis.len();
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut pairs = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            let diag = d[(i - 1) * w + j - 1];
            if same && diag == here {
                pairs.push(AlignedPair {
                    op: EditOp::Match,
                    reference: Some(i - 1),
                    hypothesis: Some(j - 1),
                });
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && diag + 1 == here {
                pairs.push(AlignedPair {
                    op: EditOp::Substitute,
                    reference: Some(i - 1),
                    hypothesis: Some(j - 1),
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            pairs.push(AlignedPair {
                op: EditOp::Delete,
                reference: Some(i - 1),
                hypothesis: None,
            });
            i -= 1;
            continue;
        }
        pairs.push(AlignedPair {
            op: EditOp::Insert,
            reference: None,
            hypothesis: Some(j - 1),
        });
        j -= 1;
    }
    pairs.reverse();
    Alignment {
        pairs,
        distance: d[n * w + m],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Tp,
    Fp,
    Fn,
    Tn,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Tp => "TP",
            Outcome::Fp => "FP",
            Outcome::Fn => "FN",
            Outcome::Tn => "TN",
        }
    }

    /// Cell for a ground-truth call and a model call (`true` = mispronounced).
    pub fn from_calls(truth_mp: bool, model_mp: bool) -> Outcome {
        match (truth_mp, model_mp) {
            (false, false) => Outcome::Tp,
            (true, false) => Outcome::Fp,
            (false, true) => Outcome::Fn,
            (true, true) => Outcome::Tn,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ErrorType {
    Categorical,
    NonCategorical,
    None,
}

impl ErrorType {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorType::Categorical => "categorical",
            ErrorType::NonCategorical => "non-categorical",
            ErrorType::None => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutcomeRecord {
    pub utterance: String,
    pub position: usize,
    pub canonical: SymbolId,
    /// `None` where the annotation has a gap at this position.
    pub annotated: Option<SymbolId>,
    pub predicted: Option<SymbolId>,
    pub outcome: Outcome,
    /// Only defined for TN positions.
    pub diagnosis_correct: Option<bool>,
    pub error_type: ErrorType,
}

/// Per-position records of one utterance and the number of predicted
/// symbols that align to no canonical position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassifiedUtterance {
    pub records: Vec<OutcomeRecord>,
    pub insertions: usize,
}

fn check_phones(inv: &PhoneInventory, ids: &[SymbolId], what: &str) -> Result<()> {
    if let Some(&s) = ids.iter().find(|&&s| !inv.is_phone(s)) {
        return Err(Error::UnknownSymbol(format!(
            "{what} symbol id {} is not a phone",
            s.0
        )));
    }
    Ok(())
}

pub fn classify(
    utterance: &str,
    canonical: &[SymbolId],
    annotated: &[SymbolId],
    predicted: &[SymbolId],
    inv: &PhoneInventory,
) -> Result<ClassifiedUtterance> {
    check_phones(inv, canonical, "canonical")?;
    if let Some(&s) = canonical.iter().find(|&&s| !inv.is_canonical(s)) {
        return Err(Error::NotCanonical(inv.symbol_of(s)?.to_owned()));
    }
    check_phones(inv, annotated, "annotated")?;
    check_phones(inv, predicted, "predicted")?;

    let ann_align = align(canonical, annotated);
    let pred_align = align(canonical, predicted);
    let ann = ann_align.projection(canonical.len());
    let pred = pred_align.projection(canonical.len());

    let records = canonical
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let a = ann[i].map(|k| annotated[k]);
            let p = pred[i].map(|k| predicted[k]);
            let outcome = Outcome::from_calls(a != Some(c), p != Some(c));
            let error_type = match a {
                Some(s) if s == c => ErrorType::None,
                Some(s) if inv.is_anti(s) => ErrorType::NonCategorical,
                _ => ErrorType::Categorical,
            };
            OutcomeRecord {
                utterance: utterance.to_owned(),
                position: i,
                canonical: c,
                annotated: a,
                predicted: p,
                outcome,
                diagnosis_correct: (outcome == Outcome::Tn).then_some(p == a),
                error_type,
            }
        })
        .collect();
    Ok(ClassifiedUtterance {
        records,
        insertions: pred_align.count(EditOp::Insert),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn from_records(records: &[OutcomeRecord]) -> Self {
        let mut c = ConfusionCounts::default();
        for r in records {
            c.add(r.outcome);
        }
        c
    }

    pub fn add(&mut self, o: Outcome) {
        match o {
            Outcome::Tp => self.tp += 1,
            Outcome::Fp => self.fp += 1,
            Outcome::Fn => self.fn_ += 1,
            Outcome::Tn => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// A ratio whose 0/0 case is reported as 0 with a flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rate {
    pub value: f64,
    pub degenerate: bool,
}

impl Rate {
    pub fn of(num: usize, den: usize) -> Rate {
        if den == 0 {
            Rate {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Rate {
                value: num as f64 / den as f64,
                degenerate: false,
            }
        }
    }

    pub fn percent(&self) -> String {
        format!("{:.2}", 100.0 * self.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionMetrics {
    pub precision: Rate,
    pub recall: Rate,
    pub f1: Rate,
}

/// Harmonic mean; 0 with the degenerate flag when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> Rate {
    let den = precision + recall;
    if den == 0.0 {
        Rate {
            value: 0.0,
            degenerate: true,
        }
    } else {
        Rate {
            value: 2.0 * precision * recall / den,
            degenerate: false,
        }
    }
}

pub fn detection_metrics(c: &ConfusionCounts) -> DetectionMetrics {
    let precision = Rate::of(c.tn, c.fn_ + c.tn);
    let recall = Rate::of(c.tn, c.fp + c.tn);
    let mut f1 = f1_score(precision.value, recall.value);
    f1.degenerate |= precision.degenerate || recall.degenerate;
    DetectionMetrics {
        precision,
        recall,
        f1,
    }
}

/// Share of true negatives whose predicted symbol equals the annotation.
pub fn dar(records: &[OutcomeRecord]) -> Rate {
    let tn = records.iter().filter(|r| r.outcome == Outcome::Tn);
    let total = tn.clone().count();
    let correct = tn.filter(|r| r.diagnosis_correct == Some(true)).count();
    Rate::of(correct, total)
}

/// DAR restricted to true negatives of one error type.
pub fn dar_for(records: &[OutcomeRecord], error_type: ErrorType) -> Rate {
    let subset: Vec<OutcomeRecord> = records
        .iter()
        .filter(|r| r.error_type == error_type)
        .cloned()
        .collect();
    dar(&subset)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TypeCounts {
    /// Ground-truth mispronunciations (FP + TN) of this type.
    pub total: usize,
    /// Of those, TN with a correct diagnosis.
    pub diagnosed: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ErrorBreakdown {
    pub categorical: TypeCounts,
    pub non_categorical: TypeCounts,
}

pub fn error_breakdown(records: &[OutcomeRecord]) -> ErrorBreakdown {
    let mut b = ErrorBreakdown::default();
    for r in records {
        let slot = match r.error_type {
            ErrorType::Categorical => &mut b.categorical,
            ErrorType::NonCategorical => &mut b.non_categorical,
            ErrorType::None => continue,
        };
        if matches!(r.outcome, Outcome::Fp | Outcome::Tn) {
            slot.total += 1;
            if r.outcome == Outcome::Tn && r.diagnosis_correct == Some(true) {
                slot.diagnosed += 1;
            }
        }
    }
    b
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub utterances: usize,
    pub counts: ConfusionCounts,
    pub metrics: DetectionMetrics,
    pub dar: Rate,
    pub dar_categorical: Rate,
    pub dar_non_categorical: Rate,
    pub breakdown: ErrorBreakdown,
    pub insertions: usize,
}

impl EvaluationReport {
    pub fn from_records(records: &[OutcomeRecord], utterances: usize, insertions: usize) -> Self {
        let counts = ConfusionCounts::from_records(records);
        EvaluationReport {
            utterances,
            counts,
            metrics: detection_metrics(&counts),
            dar: dar(records),
            dar_categorical: dar_for(records, ErrorType::Categorical),
            dar_non_categorical: dar_for(records, ErrorType::NonCategorical),
            breakdown: error_breakdown(records),
            insertions,
        }
    }

    /// `key = value` lines; rates in percent with two decimals.
    pub fn to_key_values(&self) -> String {
        let m = &self.metrics;
        let c = &self.counts;
        let b = &self.breakdown;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("utterances", self.utterances.to_string());
        put("positions", c.total().to_string());
        put("tp", c.tp.to_string());
        put("fp", c.fp.to_string());
        put("fn", c.fn_.to_string());
        put("tn", c.tn.to_string());
        put("precision", m.precision.percent());
        put("recall", m.recall.percent());
        put("f1", m.f1.percent());
        put("f1_degenerate", m.f1.degenerate.to_string());
        put("dar", self.dar.percent());
        put("dar_degenerate", self.dar.degenerate.to_string());
        put("dar_categorical", self.dar_categorical.percent());
        put("dar_non_categorical", self.dar_non_categorical.percent());
        put("categorical_total", b.categorical.total.to_string());
        put("categorical_diagnosed", b.categorical.diagnosed.to_string());
        put("non_categorical_total", b.non_categorical.total.to_string());
        put("non_categorical_diagnosed", b.non_categorical.diagnosed.to_string());
        put("insertions", self.insertions.to_string());
        s
    }

    pub fn to_table(&self) -> String {
        let m = &self.metrics;
        let b = &self.breakdown;
        let cell = |n: usize, d: usize| format!("{}% ({n})", Rate::of(n, d).percent());
        let mut s = String::new();
        let _ = writeln!(s, "{:<8}{:>8}{:>8}{:>8}{:>8}", "", "PR", "RE", "F1", "DAR");
        let _ = writeln!(
            s,
            "{:<8}{:>8}{:>8}{:>8}{:>8}",
            "system",
            m.precision.percent(),
            m.recall.percent(),
            m.f1.percent(),
            self.dar.percent()
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<20}{:>20}{:>20}", "", "categorical", "non-categorical");
        let _ = writeln!(
            s,
            "{:<20}{:>20}{:>20}",
            "ground truth",
            cell(b.categorical.total, b.categorical.total),
            cell(b.non_categorical.total, b.non_categorical.total)
        );
        let _ = writeln!(
            s,
            "{:<20}{:>20}{:>20}",
            "correct diagnosis",
            cell(b.categorical.diagnosed, b.categorical.total),
            cell(b.non_categorical.diagnosed, b.non_categorical.total)
        );
        let c = &self.counts;
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "TP={} FP={} FN={} TN={} insertions={} utterances={}",
            c.tp, c.fp, c.fn_, c.tn, self.insertions, self.utterances
        );
        s
    }
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

pub fn parse_predictions(text: &str, path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |reason: String| Error::Parse {
            path: path.to_owned(),
            line: idx + 1,
            reason,
        };
        let (id, hyp) = line
            .split_once('\t')
            .ok_or_else(|| fail("expected `utt_id<TAB>transcript`".into()))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(fail("empty utterance id".into()));
        }
        if !seen.insert(id.to_owned()) {
            return Err(fail(format!("duplicate utterance id `{id}`")));
        }
        out.push((
            id.to_owned(),
            hyp.split_whitespace().map(String::from).collect(),
        ));
    }
    Ok(out)
}

pub fn format_predictions(rows: &[(String, Vec<SymbolId>)], inv: &PhoneInventory) -> String {
    let mut s = String::new();
    for (id, hyp) in rows {
        let _ = writeln!(s, "{id}\t{}", inv.format_transcript(hyp));
    }
    s
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub records: Vec<OutcomeRecord>,
    pub report: EvaluationReport,
}

/// Scores predictions against an annotated manifest. Every prediction must
/// name a manifest utterance and every manifest utterance must be predicted.
pub fn evaluate(
    manifest: &[ManifestEntry],
    predictions: &[(String, Vec<String>)],
    inv: &PhoneInventory,
) -> Result<Evaluation> {
    let by_id: BTreeMap<&str, &ManifestEntry> =
        manifest.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut predicted: BTreeMap<&str, &[String]> = BTreeMap::new();
    for (id, hyp) in predictions {
        if !by_id.contains_key(id.as_str()) {
            return Err(Error::Corpus(format!(
                "prediction for `{id}` has no manifest entry"
            )));
        }
        predicted.insert(id, hyp);
    }
    let parse = |syms: &[String]| -> Result<Vec<SymbolId>> {
        syms.iter().map(|s| inv.parse_label(s)).collect()
    };
    let mut records = Vec::new();
    let mut insertions = 0;
    // Manifest order keeps record dumps stable whatever order predictions come in.
    for e in manifest {
        let hyp = predicted
            .get(e.id.as_str())
            .ok_or_else(|| Error::Corpus(format!("no prediction for `{}`", e.id)))?;
        let annotated = e
            .annotated
            .as_ref()
            .ok_or_else(|| Error::Corpus(format!("`{}` has no annotated transcript", e.id)))?;
        let canonical = parse(&e.canonical)?;
        let c = classify(&e.id, &canonical, &parse(annotated)?, &parse(hyp)?, inv)?;
        records.extend(c.records);
        insertions += c.insertions;
    }
    let report = EvaluationReport::from_records(&records, manifest.len(), insertions);
    Ok(Evaluation { records, report })
}

pub fn records_tsv(records: &[OutcomeRecord], inv: &PhoneInventory) -> String {
    let sym = |s: Option<SymbolId>| s.map_or("-".to_owned(), |s| inv.format_transcript(&[s]));
    let mut out =
        String::from("utt_id\tposition\tcanonical\tannotated\tpredicted\toutcome\tdiagnosis_correct\terror_type\n");
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.utterance,
            r.position,
            sym(Some(r.canonical)),
            sym(r.annotated),
            sym(r.predicted),
            r.outcome.as_str(),
            r.diagnosis_correct.map_or("-".into(), |b| b.to_string()),
            r.error_type.as_str()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phoneset::InventoryMode;

    fn inv() -> PhoneInventory {
        PhoneInventory::build(&["dh", "iy", "d", "ah", "hh"], InventoryMode::PerPhoneAnti).unwrap()
    }

    fn ids(inv: &PhoneInventory, s: &str) -> Vec<SymbolId> {
        inv.parse_transcript(s).unwrap()
    }

    #[test]
    fn alignment_examples() {
        let a = align(&["dh", "iy"], &["d", "ah"]);
        assert_eq!(a.distance, 2);
        assert_eq!(a.count(EditOp::Substitute), 2);
        let a = align(&[1, 2, 3], &[1, 2, 3]);
        assert_eq!((a.distance, a.count(EditOp::Match)), (0, 3));
        let a = align(&["a"], &[]);
        assert_eq!(a.distance, 1);
        assert_eq!(a.pairs[0].op, EditOp::Delete);
        let a = align::<u8>(&[], &[4, 5]);
        assert_eq!(a.count(EditOp::Insert), 2);
    }

    #[test]
    fn tie_break_prefers_substitution_over_gap_pairs() {
        // "ab" vs "ba": two substitutions and delete+insert pairs all cost 2.
        let a = align(&["a", "b"], &["b", "a"]);
        assert_eq!(a.distance, 2);
        assert_eq!(a.count(EditOp::Substitute), 2);
        // A deletion is chosen over an insertion when both are possible.
        let a = align(&["x", "y"], &["y"]);
        assert_eq!(a.pairs[0].op, EditOp::Delete);
        assert_eq!(a.pairs[1].op, EditOp::Match);
    }

    #[test]
    fn figure_one_anti_phone_case() {
        let inv = inv();
        let c = classify(
            "u",
            &ids(&inv, "hh iy"),
            &ids(&inv, "#hh iy"),
            &ids(&inv, "#hh iy"),
            &inv,
        )
        .unwrap();
        assert_eq!(c.records[0].outcome, Outcome::Tn);
        assert_eq!(c.records[0].diagnosis_correct, Some(true));
        assert_eq!(c.records[0].error_type, ErrorType::NonCategorical);
        assert_eq!(c.records[1].outcome, Outcome::Tp);
        assert_eq!(c.records[1].diagnosis_correct, None);
    }

    #[test]
    fn model_calling_correct_on_errors_gives_fp() {
        let inv = inv();
        let c = classify(
            "u",
            &ids(&inv, "dh iy"),
            &ids(&inv, "d ah"),
            &ids(&inv, "dh iy"),
            &inv,
        )
        .unwrap();
        let outcomes: Vec<Outcome> = c.records.iter().map(|r| r.outcome).collect();
        assert_eq!(outcomes, vec![Outcome::Fp, Outcome::Fp]);
        assert!(c.records.iter().all(|r| r.error_type == ErrorType::Categorical));
    }

    #[test]
    fn gaps_and_insertions() {
        let inv = inv();
        let c = classify(
            "u",
            &ids(&inv, "dh iy d"),
            &ids(&inv, "dh d"),
            &ids(&inv, "dh iy ah d"),
            &inv,
        )
        .unwrap();
        assert_eq!(c.records[1].annotated, None);
        assert_eq!(c.records[1].outcome, Outcome::Fp);
        assert_eq!(c.records[1].error_type, ErrorType::Categorical);
        assert_eq!(c.insertions, 1);
        assert!(classify("u", &[inv.blank()], &[], &[], &inv).is_err());
    }

    #[test]
    fn metric_arithmetic() {
        let c = ConfusionCounts {
            tp: 5,
            fp: 1,
            fn_: 2,
            tn: 3,
        };
        let m = detection_metrics(&c);
        assert!((m.precision.value - 0.6).abs() < 1e-12);
        assert!((m.recall.value - 0.75).abs() < 1e-12);
        assert!((m.f1.value - 2.0 / 3.0).abs() < 1e-4);
        assert_eq!(f1_score(0.4657, 0.7028).percent(), "56.02");
        assert_eq!(f1_score(0.1942, 0.5219).percent(), "28.31");
        let none = detection_metrics(&ConfusionCounts::default());
        assert!(none.f1.degenerate && none.f1.value == 0.0);
    }

    fn rec(outcome: Outcome, correct: Option<bool>, t: ErrorType) -> OutcomeRecord {
        OutcomeRecord {
            utterance: "u".into(),
            position: 0,
            canonical: SymbolId(0),
            annotated: None,
            predicted: None,
            outcome,
            diagnosis_correct: correct,
            error_type: t,
        }
    }

    #[test]
    fn dar_and_breakdown() {
        let r = vec![
            rec(Outcome::Tn, Some(true), ErrorType::NonCategorical),
            rec(Outcome::Tn, Some(false), ErrorType::Categorical),
        ];
        assert_eq!(dar(&r).value, 0.5);
        assert_eq!(dar(&r[..1]).value, 1.0);
        assert!(dar(&[]).degenerate);
        let b = error_breakdown(&[
            rec(Outcome::Tn, Some(true), ErrorType::NonCategorical),
            rec(Outcome::Fp, None, ErrorType::Categorical),
        ]);
        assert_eq!(b.non_categorical, TypeCounts { total: 1, diagnosed: 1 });
        assert_eq!(b.categorical, TypeCounts { total: 1, diagnosed: 0 });
        assert_eq!(error_breakdown(&[]), ErrorBreakdown::default());
    }

    fn entry(id: &str, c: &str, a: &str) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            feature_path: "f".into(),
            canonical: c.split_whitespace().map(String::from).collect(),
            annotated: Some(a.split_whitespace().map(String::from).collect()),
        }
    }

    fn pred(id: &str, p: &str) -> (String, Vec<String>) {
        (id.into(), p.split_whitespace().map(String::from).collect())
    }

    #[test]
    fn perfect_and_never_flag_systems() {
        let inv = inv();
        let m = vec![entry("a", "dh iy", "d #iy"), entry("b", "hh iy", "hh iy")];
        let perfect = evaluate(&m, &[pred("b", "hh iy"), pred("a", "d #iy")], &inv).unwrap();
        assert_eq!(perfect.report.metrics.f1.percent(), "100.00");
        assert_eq!(perfect.report.dar.percent(), "100.00");
        let never = evaluate(&m, &[pred("a", "dh iy"), pred("b", "hh iy")], &inv).unwrap();
        assert_eq!(never.report.counts.tn, 0);
        assert_eq!(never.report.metrics.recall.value, 0.0);
        assert!(evaluate(&m, &[pred("a", "dh iy"), pred("zz", "")], &inv).is_err());
        assert!(evaluate(&m, &[pred("a", "dh iy")], &inv).is_err());
    }

    #[test]
    fn predictions_parse() {
        let rows = parse_predictions("a\tdh #iy\nb\t\n", Path::new("p")).unwrap();
        assert_eq!(rows[1].1.len(), 0);
        assert!(parse_predictions("a dh\n", Path::new("p")).is_err());
        assert!(parse_predictions("a\tx\na\ty\n", Path::new("p")).is_err());
    }
}
