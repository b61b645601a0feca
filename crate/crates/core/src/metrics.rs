//! Evaluation metrics: F1 variants, Hamming loss, task binarization, Fleiss'
//! kappa, and the per-aspect report.
//!
//! Conventions:
//! - per-class F1 is `2tp / (2tp + fp + fn)`, with 0/0 taken as 0;
//! - macro-F1 averages per-class F1, micro-F1 is the F1 of pooled counts;
//! - AC (aspect classification) is presence vs absence for every sample;
//! - CI (complaint identification) is only scored where the gold aspect is
//!   present, and a predicted "absent" counts as a non-complaint prediction.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data_model::{AspectCatalog, AspectLabelVector, NUM_ASPECTS, NUM_STATES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// One-vs-rest confusion counts for each class of a single-label problem.
pub fn confusion_per_class(gold: &[usize], pred: &[usize], num_classes: usize) -> Result<Vec<ConfusionCounts>> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch(format!(
            "{} gold vs {} predicted labels",
            gold.len(),
            pred.len()
        )));
    }
    if let Some(&bad) = gold.iter().chain(pred).find(|&&c| c >= num_classes) {
        return Err(Error::Config(format!("class {bad} >= {num_classes}")));
    }
    let mut counts = vec![ConfusionCounts::default(); num_classes];
    for (&g, &p) in gold.iter().zip(pred) {
        for (c, cc) in counts.iter_mut().enumerate() {
            match (g == c, p == c) {
                (true, true) => cc.tp += 1,
                (false, true) => cc.fp += 1,
                (true, false) => cc.fn_ += 1,
                (false, false) => cc.tn += 1,
            }
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub micro_f1: f64,
}

pub fn f1_scores(counts: &[ConfusionCounts]) -> F1Scores {
    if counts.is_empty() {
        return F1Scores {
            macro_f1: 0.0,
            micro_f1: 0.0,
        };
    }
    let macro_f1 = counts.iter().map(ConfusionCounts::f1).sum::<f64>() / counts.len() as f64;
    let pooled = counts
        .iter()
        .copied()
        .fold(ConfusionCounts::default(), |a, b| a + b);
    F1Scores {
        macro_f1,
        micro_f1: pooled.f1(),
    }
}

/// Fraction of (sample, aspect) positions whose trinary states differ.
pub fn hamming_loss(golds: &[AspectLabelVector], preds: &[AspectLabelVector]) -> Result<f64> {
    if golds.len() != preds.len() {
        return Err(Error::LengthMismatch(format!(
            "{} gold vs {} predicted vectors",
            golds.len(),
            preds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::Empty("hamming loss of zero samples".into()));
    }
    let wrong: usize = golds
        .iter()
        .zip(preds)
        .map(|(g, p)| g.states().iter().zip(p.states()).filter(|(a, b)| a != b).count())
        .sum();
    Ok(wrong as f64 / (golds.len() * NUM_ASPECTS) as f64)
}

/// Exact-match ratio over whole label vectors.
pub fn exact_match(golds: &[AspectLabelVector], preds: &[AspectLabelVector]) -> Result<f64> {
    if golds.len() != preds.len() || golds.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "{} gold vs {} predicted vectors",
            golds.len(),
            preds.len()
        )));
    }
    let hits = golds.iter().zip(preds).filter(|(g, p)| g == p).count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Binary views of one aspect: AC is (gold present, pred present); CI is
/// (gold complaint, pred complaint), defined only when gold is present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskPairs {
    pub ac: (bool, bool),
    pub ci: Option<(bool, bool)>,
}

pub fn binarize_tasks(gold: &AspectLabelVector, pred: &AspectLabelVector, aspect: usize) -> TaskPairs {
    let g = gold.get(aspect);
    let p = pred.get(aspect);
    TaskPairs {
        ac: (g.is_present(), p.is_present()),
        ci: g.is_present().then_some((g.is_complaint(), p.is_complaint())),
    }
}

/// Item × category rating counts with a constant number of raters per item.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingTable {
    counts: Vec<Vec<u32>>,
    raters: u32,
}

impl RatingTable {
    pub fn new(counts: Vec<Vec<u32>>) -> Result<Self> {
        let first = counts
            .first()
            .ok_or_else(|| Error::Empty("rating table has no items".into()))?;
        let categories = first.len();
        if categories < 2 {
            return Err(Error::Config("rating table needs at least 2 categories".into()));
        }
        let raters: u32 = first.iter().sum();
        if raters < 2 {
            return Err(Error::Config("rating table needs at least 2 raters per item".into()));
        }
        for (i, row) in counts.iter().enumerate() {
            if row.len() != categories {
                return Err(Error::Shape(format!("item {i} has {} categories", row.len())));
            }
            if row.iter().sum::<u32>() != raters {
                return Err(Error::Config(format!(
                    "item {i} has {} ratings, expected {raters}",
                    row.iter().sum::<u32>()
                )));
            }
        }
        Ok(Self { counts, raters })
    }

    pub fn items(&self) -> usize {
        self.counts.len()
    }

    pub fn categories(&self) -> usize {
        self.counts[0].len()
    }

    pub fn raters(&self) -> u32 {
        self.raters
    }

    pub fn counts(&self) -> &[Vec<u32>] {
        &self.counts
    }
}

/// Fleiss' kappa `(P̄ − P̄e) / (1 − P̄e)`.
///
/// When every rating falls in one category `P̄e = 1`; the result is 1 if the
/// raters also agree perfectly and undefined otherwise.
pub fn fleiss_kappa(table: &RatingTable) -> Result<f64> {
    let n = table.raters as f64;
    let items = table.items() as f64;
    let p_bar = table
        .counts
        .iter()
        .map(|row| {
            let sq: f64 = row.iter().map(|&c| (c as f64) * (c as f64)).sum();
            (sq - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..table.categories())
        .map(|j| {
            let pj = table.counts.iter().map(|r| r[j] as f64).sum::<f64>() / (items * n);
            pj * pj
        })
        .sum();
    if p_e >= 1.0 {
        return if p_bar >= 1.0 {
            Ok(1.0)
        } else {
            Err(Error::Undefined(
                "Fleiss' kappa with chance agreement 1 and imperfect observed agreement".into(),
            ))
        };
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Aspect present vs absent.
    #[serde(rename = "AC")]
    Ac,
    /// Complaint vs non-complaint where the aspect is present.
    #[serde(rename = "CI")]
    Ci,
    /// The trinary state itself.
    #[serde(rename = "STATE")]
    State,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Task::Ac => "AC",
            Task::Ci => "CI",
            Task::State => "STATE",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "AC" => Ok(Task::Ac),
            "CI" => Ok(Task::Ci),
            "STATE" => Ok(Task::State),
            _ => Err(Error::Config(format!("unknown task `{s}`"))),
        }
    }
}

/// Aspect name used for rows pooled over all five aspects.
pub const ALL_ASPECTS: &str = "ALL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub aspect: String,
    pub task: Task,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub hamming: f64,
}

/// Per-aspect AC / CI / STATE scores plus pooled `ALL` rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_CSV_HEADER: &str = "aspect,task,macro_f1,micro_f1,hamming";

fn binary_row(aspect: &str, task: Task, pairs: &[(bool, bool)]) -> ReportRow {
    let gold: Vec<usize> = pairs.iter().map(|p| p.0 as usize).collect();
    let pred: Vec<usize> = pairs.iter().map(|p| p.1 as usize).collect();
    let counts = confusion_per_class(&gold, &pred, 2).expect("binary classes");
    let f1 = f1_scores(&counts);
    let wrong = pairs.iter().filter(|(g, p)| g != p).count();
    ReportRow {
        aspect: aspect.to_string(),
        task,
        macro_f1: f1.macro_f1,
        micro_f1: f1.micro_f1,
        hamming: if pairs.is_empty() {
            0.0
        } else {
            wrong as f64 / pairs.len() as f64
        },
    }
}

fn state_row(aspect: &str, gold: &[usize], pred: &[usize]) -> ReportRow {
    let counts = confusion_per_class(gold, pred, NUM_STATES).expect("trinary classes");
    let f1 = f1_scores(&counts);
    let wrong = gold.iter().zip(pred).filter(|(g, p)| g != p).count();
    ReportRow {
        aspect: aspect.to_string(),
        task: Task::State,
        macro_f1: f1.macro_f1,
        micro_f1: f1.micro_f1,
        hamming: wrong as f64 / gold.len() as f64,
    }
}

/// Scores predictions against gold labels.
pub fn evaluate_predictions(
    golds: &[AspectLabelVector],
    preds: &[AspectLabelVector],
    catalog: &AspectCatalog,
) -> Result<EvaluationReport> {
    if golds.len() != preds.len() {
        return Err(Error::LengthMismatch(format!(
            "{} gold vs {} predicted vectors",
            golds.len(),
            preds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::Empty("nothing to evaluate".into()));
    }
    let mut rows = Vec::new();
    let mut all_ac = Vec::new();
    let mut all_ci = Vec::new();
    let mut all_gold = Vec::new();
    let mut all_pred = Vec::new();
    for j in 0..NUM_ASPECTS {
        let name = catalog.name(j);
        let tasks: Vec<TaskPairs> = golds.iter().zip(preds).map(|(g, p)| binarize_tasks(g, p, j)).collect();
        let ac: Vec<_> = tasks.iter().map(|t| t.ac).collect();
        let ci: Vec<_> = tasks.iter().filter_map(|t| t.ci).collect();
        let gs: Vec<usize> = golds.iter().map(|g| g.get(j).index()).collect();
        let ps: Vec<usize> = preds.iter().map(|p| p.get(j).index()).collect();
        rows.push(binary_row(name, Task::Ac, &ac));
        rows.push(binary_row(name, Task::Ci, &ci));
        rows.push(state_row(name, &gs, &ps));
        all_ac.extend(ac);
        all_ci.extend(ci);
        all_gold.extend(gs);
        all_pred.extend(ps);
    }
    rows.push(binary_row(ALL_ASPECTS, Task::Ac, &all_ac));
    rows.push(binary_row(ALL_ASPECTS, Task::Ci, &all_ci));
    let mut all_state = state_row(ALL_ASPECTS, &all_gold, &all_pred);
    all_state.hamming = hamming_loss(golds, preds)?;
    rows.push(all_state);
    Ok(EvaluationReport { rows })
}

impl EvaluationReport {
    pub fn row(&self, aspect: &str, task: Task) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.aspect == aspect && r.task == task)
    }

    /// Mean of a per-aspect column over the five aspects (pooled rows excluded).
    pub fn mean_over_aspects(&self, task: Task, pick: impl Fn(&ReportRow) -> f64) -> f64 {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.task == task && r.aspect != ALL_ASPECTS)
            .map(pick)
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }

    pub fn mean_ac_micro_f1(&self) -> f64 {
        self.mean_over_aspects(Task::Ac, |r| r.micro_f1)
    }

    /// CSV with header `aspect,task,macro_f1,micro_f1,hamming`; numbers use
    /// shortest round-trip formatting so the file re-parses exactly.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.aspect, r.task, r.macro_f1, r.micro_f1, r.hamming);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_CSV_HEADER) {
            return Err(Error::Config("report CSV header mismatch".into()));
        }
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 5 {
                    return Err(Error::Config(format!("bad report line `{l}`")));
                }
                let num = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad number `{s}`: {e}")))
                };
                Ok(ReportRow {
                    aspect: f[0].to_string(),
                    task: f[1].parse()?,
                    macro_f1: num(f[2])?,
                    micro_f1: num(f[3])?,
                    hamming: num(f[4])?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    /// Aligned text table for terminals.
    pub fn pretty(&self) -> String {
        let mut s = format!(
            "{:<16} {:<6} {:>9} {:>9} {:>9}\n",
            "aspect", "task", "macro_f1", "micro_f1", "hamming"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<16} {:<6} {:>9.4} {:>9.4} {:>9.4}",
                r.aspect, r.task, r.macro_f1, r.micro_f1, r.hamming
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lv(v: [i64; 5]) -> AspectLabelVector {
        AspectLabelVector::from_values(&v).unwrap()
    }

    #[test]
    fn binarization_examples() {
        let t = binarize_tasks(&lv([2, 0, 0, 0, 0]), &lv([2, 0, 0, 0, 0]), 0);
        assert_eq!(t, TaskPairs { ac: (true, true), ci: Some((true, true)) });
        let t = binarize_tasks(&lv([0, 0, 0, 0, 0]), &lv([1, 0, 0, 0, 0]), 0);
        assert_eq!(t, TaskPairs { ac: (false, true), ci: None });
        let t = binarize_tasks(&lv([1, 0, 0, 0, 0]), &lv([0, 0, 0, 0, 0]), 0);
        assert_eq!(t, TaskPairs { ac: (true, false), ci: Some((false, false)) });
    }

    #[test]
    fn f1_examples() {
        let perfect = confusion_per_class(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(f1_scores(&perfect), F1Scores { macro_f1: 1.0, micro_f1: 1.0 });
        let c = ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 0 };
        assert_abs_diff_eq!(c.f1(), 4.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn absent_class_drops_macro_only() {
        // 10 samples, classes {0,1} used, class 2 never present nor predicted
        let gold = [0, 0, 1, 1, 0, 1, 0, 0, 1, 1];
        let pred = [0, 1, 1, 1, 0, 0, 0, 0, 1, 1];
        let two = f1_scores(&confusion_per_class(&gold, &pred, 2).unwrap());
        let three = f1_scores(&confusion_per_class(&gold, &pred, 3).unwrap());
        // brute force: class 0 tp=4 fp=1 fn=1, class 1 tp=4 fp=1 fn=1
        assert_abs_diff_eq!(two.macro_f1, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(three.macro_f1, 1.6 / 3.0, epsilon = 1e-15);
        assert_eq!(two.micro_f1, three.micro_f1);
        assert_abs_diff_eq!(three.micro_f1, 0.8, epsilon = 1e-15);
    }

    #[test]
    fn hamming_examples() {
        let a = vec![lv([2, 0, 1, 0, 0]), lv([1, 1, 1, 1, 1])];
        assert_eq!(hamming_loss(&a, &a).unwrap(), 0.0);
        assert_abs_diff_eq!(
            hamming_loss(&[lv([2, 0, 1, 0, 0])], &[lv([2, 0, 0, 0, 0])]).unwrap(),
            0.2,
            epsilon = 1e-15
        );
        assert_eq!(hamming_loss(&[lv([0; 5]), lv([1; 5])], &[lv([2; 5]), lv([0; 5])]).unwrap(), 1.0);
        assert!(matches!(hamming_loss(&a, &a[..1]), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn fleiss_examples() {
        let perfect = RatingTable::new(vec![vec![3, 0], vec![0, 3]]).unwrap();
        assert_eq!(fleiss_kappa(&perfect).unwrap(), 1.0);
        let split = RatingTable::new(vec![vec![2, 1], vec![1, 2]]).unwrap();
        assert_abs_diff_eq!(fleiss_kappa(&split).unwrap(), -1.0 / 3.0, epsilon = 1e-12);
        let one_category = RatingTable::new(vec![vec![3, 0], vec![3, 0]]).unwrap();
        assert_eq!(fleiss_kappa(&one_category).unwrap(), 1.0);
    }

    #[test]
    fn rating_table_invariants() {
        assert!(RatingTable::new(vec![]).is_err());
        assert!(RatingTable::new(vec![vec![3]]).is_err());
        assert!(RatingTable::new(vec![vec![1, 0]]).is_err());
        assert!(RatingTable::new(vec![vec![2, 1], vec![1, 1]]).is_err());
    }

    #[test]
    fn report_layout_and_csv_round_trip() {
        let golds = vec![lv([2, 0, 1, 0, 2]), lv([1, 2, 0, 0, 0]), lv([0, 1, 2, 1, 1])];
        let preds = vec![lv([2, 0, 0, 0, 1]), lv([1, 2, 0, 1, 0]), lv([0, 0, 2, 1, 1])];
        let r = evaluate_predictions(&golds, &preds, &AspectCatalog::default()).unwrap();
        assert_eq!(r.rows.len(), 3 * 5 + 3);
        let back = EvaluationReport::from_csv(&r.to_csv()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_csv().starts_with("aspect,task,macro_f1,micro_f1,hamming\n"));
        let all = r.row(ALL_ASPECTS, Task::State).unwrap();
        assert_eq!(all.hamming, hamming_loss(&golds, &preds).unwrap());
    }

    #[test]
    fn perfect_and_constant_zero_predictors() {
        let golds = vec![lv([2, 1, 2, 1, 2]), lv([1, 2, 1, 2, 1]), lv([0, 0, 0, 0, 0])];
        let r = evaluate_predictions(&golds, &golds, &AspectCatalog::default()).unwrap();
        for row in &r.rows {
            assert_eq!((row.macro_f1, row.micro_f1, row.hamming), (1.0, 1.0, 0.0), "{row:?}");
        }
        let zeros = vec![lv([0; 5]); 3];
        let r = evaluate_predictions(&golds, &zeros, &AspectCatalog::default()).unwrap();
        for j in 0..5 {
            // only the positive class of AC has zero true positives
            let counts = confusion_per_class(
                &golds.iter().map(|g| g.get(j).is_present() as usize).collect::<Vec<_>>(),
                &[0, 0, 0],
                2,
            )
            .unwrap();
            assert_eq!(counts[1].tp, 0);
            assert_eq!(counts[1].f1(), 0.0);
            let row = r.row(AspectCatalog::default().name(j), Task::Ac).unwrap();
            assert_abs_diff_eq!(row.hamming, 2.0 / 3.0, epsilon = 1e-15);
        }
    }

    proptest! {
        #[test]
        fn metric_ranges_and_hamming_symmetry(
            g in prop::collection::vec(proptest::array::uniform5(0i64..3), 1..40),
            p in prop::collection::vec(proptest::array::uniform5(0i64..3), 40),
        ) {
            let golds: Vec<_> = g.iter().map(|v| lv(*v)).collect();
            let preds: Vec<_> = p[..golds.len()].iter().map(|v| lv(*v)).collect();
            let h = hamming_loss(&golds, &preds).unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
            prop_assert_eq!(h, hamming_loss(&preds, &golds).unwrap());
            let r = evaluate_predictions(&golds, &preds, &AspectCatalog::default()).unwrap();
            for row in &r.rows {
                prop_assert!((0.0..=1.0).contains(&row.macro_f1));
                prop_assert!((0.0..=1.0).contains(&row.micro_f1));
                prop_assert!((0.0..=1.0).contains(&row.hamming));
            }
        }

        #[test]
        fn kappa_is_at_most_one_and_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(0u32..4, 3), 2..12),
            rot in 0usize..3,
        ) {
            // pad each row so every item has 9 ratings
            let table: Vec<Vec<u32>> = rows.iter().map(|r| {
                let s: u32 = r.iter().sum();
                let mut r = r.clone();
                r.push(12 - s);
                r
            }).collect();
            let t = RatingTable::new(table.clone()).unwrap();
            if let Ok(k) = fleiss_kappa(&t) {
                prop_assert!(k <= 1.0 + 1e-12);
                let mut reversed = table.clone();
                reversed.reverse();
                let relabeled: Vec<Vec<u32>> = table.iter().map(|r| {
                    let mut r = r.clone();
                    r.rotate_left(rot);
                    r
                }).collect();
                let k2 = fleiss_kappa(&RatingTable::new(reversed).unwrap()).unwrap();
                let k3 = fleiss_kappa(&RatingTable::new(relabeled).unwrap()).unwrap();
                prop_assert!((k - k2).abs() < 1e-12);
                prop_assert!((k - k3).abs() < 1e-12);
            }
        }
    }
}
