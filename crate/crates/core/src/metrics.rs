//! Macro-averaged precision, recall and F1, cross-validation aggregation and
//! fixed-width result tables.
//!
//! Conventions: an undefined ratio (0/0) counts as 0, macro values are
//! unweighted means over classes, and macro-F1 is the mean of per-class F1
//! scores rather than the harmonic mean of macro precision and recall.

use std::collections::HashMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::FoldPlan;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: Vec<String>) -> Self {
        let k = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    /// Builds a matrix from class indices.
    pub fn from_indices(classes: Vec<String>, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Data(format!(
                "{} true labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::zeros(classes);
        let k = cm.classes.len();
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= k || p >= k {
                return Err(Error::Data(format!("class index {} out of range", t.max(p))));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes);
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }
}

/// Counts `(true, predicted)` label pairs over `classes`.
pub fn confusion<L: AsRef<str>>(truth: &[L], predicted: &[L], classes: &[L]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Data(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_ref(), i)).collect();
    let lookup = |l: &L| {
        index
            .get(l.as_ref())
            .copied()
            .ok_or_else(|| Error::Data(format!("label {:?} is not a known class", l.as_ref())))
    };
    let t: Vec<usize> = truth.iter().map(lookup).collect::<Result<_>>()?;
    let p: Vec<usize> = predicted.iter().map(lookup).collect::<Result<_>>()?;
    ConfusionMatrix::from_indices(classes.iter().map(|c| c.as_ref().to_string()).collect(), &t, &p)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroScores<T> {
    pub per_class: Vec<Scores<T>>,
    pub macro_avg: Scores<T>,
}

fn ratio<T: Scalar>(num: u64, den: u64) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::of(num as f64) / T::of(den as f64)
    }
}

/// Per-class and macro-averaged scores of a non-empty matrix.
pub fn macro_scores<T: Scalar>(cm: &ConfusionMatrix) -> MacroScores<T> {
    let k = cm.len();
    assert!(k > 0, "macro scores need at least one class");
    let per_class: Vec<Scores<T>> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let predicted: u64 = (0..k).map(|r| cm.counts[r][c]).sum();
            let actual: u64 = cm.counts[c].iter().sum();
            let precision: T = ratio(tp, predicted);
            let recall: T = ratio(tp, actual);
            let sum = precision + recall;
            let f1 = if sum == T::zero() {
                T::zero()
            } else {
                T::of(2.0) * precision * recall / sum
            };
            Scores { precision, recall, f1 }
        })
        .collect();
    let n = T::of(k as f64);
    let mean = |f: fn(&Scores<T>) -> T| per_class.iter().map(f).sum::<T>() / n;
    let macro_avg = Scores {
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
    };
    MacroScores { per_class, macro_avg }
}

/// Macro precision, recall and F1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<Scores<f64>> for Triple {
    fn from(s: Scores<f64>) -> Self {
        Triple {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub per_class: Vec<Triple>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_fold: Vec<Triple>,
    pub fold_average: Triple,
}

impl MetricsReport {
    /// Single-evaluation report; the one "fold" is the evaluation itself.
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let scores = macro_scores::<f64>(cm);
        let avg: Triple = scores.macro_avg.into();
        MetricsReport {
            classes: cm.classes.clone(),
            per_class: scores.per_class.into_iter().map(Triple::from).collect(),
            macro_precision: avg.precision,
            macro_recall: avg.recall,
            macro_f1: avg.f1,
            per_fold: vec![avg],
            fold_average: avg,
        }
    }

    pub fn triple(&self) -> Triple {
        self.fold_average
    }
}

fn mean_triple<'a>(items: impl ExactSizeIterator<Item = &'a Triple>) -> Triple {
    let n = items.len() as f64;
    let mut acc = Triple::default();
    for t in items {
        acc.precision += t.precision;
        acc.recall += t.recall;
        acc.f1 += t.f1;
    }
    Triple {
        precision: acc.precision / n,
        recall: acc.recall / n,
        f1: acc.f1 / n,
    }
}

/// Runs `runner(fold, train_items, test_items)` on every fold and averages
/// the per-fold macro triples without weighting.
pub fn cross_validate<F>(mut runner: F, plan: &FoldPlan) -> Result<MetricsReport>
where
    F: FnMut(usize, &[String], &[String]) -> Result<MetricsReport>,
{
    if plan.k < 2 {
        return Err(Error::Config(format!(
            "cross-validation needs at least 2 folds, got {}",
            plan.k
        )));
    }
    let mut folds = Vec::with_capacity(plan.k);
    for f in 0..plan.k {
        let report = runner(f, &plan.complement(f), &plan.fold(f)).map_err(|e| Error::Fold {
            fold: f,
            source: Box::new(e),
        })?;
        folds.push(report);
    }
    let per_fold: Vec<Triple> = folds.iter().map(MetricsReport::triple).collect();
    let fold_average = mean_triple(per_fold.iter());
    let classes = folds[0].classes.clone();
    let per_class = (0..folds[0].per_class.len())
        .map(|c| mean_triple(folds.iter().map(|r| &r.per_class[c]).collect::<Vec<_>>().into_iter()))
        .collect();
    Ok(MetricsReport {
        classes,
        per_class,
        macro_precision: fold_average.precision,
        macro_recall: fold_average.recall,
        macro_f1: fold_average.f1,
        per_fold,
        fold_average,
    })
}

/// Formats `x` with three decimals, rounding half to even.
pub fn round3(x: f64) -> String {
    let scaled = (x * 1000.0).round_ties_even();
    format!("{:.3}", scaled / 1000.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableLayout {
    /// Proxy-task results, one section per task.
    ProxyTable,
    /// Participation results, one flat section.
    ParticipationTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSection {
    pub title: Option<String>,
    pub rows: Vec<(String, Triple)>,
}

pub const BEST_MARK: &str = "**";

/// Renders sections as a fixed-width table. With two or more rows in a
/// section, the best value of each column is wrapped in [`BEST_MARK`].
pub fn render_report(sections: &[ReportSection], layout: TableLayout) -> Result<String> {
    if sections.iter().all(|s| s.rows.is_empty()) {
        return Err(Error::Config("a report needs at least one row".into()));
    }
    let title = match layout {
        TableLayout::ProxyTable => "Proxy task performance",
        TableLayout::ParticipationTable => "Participation prediction",
    };
    let headers = ["Model", "Macro-Prec", "Macro-Rec", "Macro-F1"];

    let mut rendered: Vec<(Option<&str>, Vec<[String; 4]>)> = Vec::new();
    for section in sections {
        let mut cells: Vec<[String; 4]> = section
            .rows
            .iter()
            .map(|(name, t)| [name.clone(), round3(t.precision), round3(t.recall), round3(t.f1)])
            .collect();
        if section.rows.len() > 1 {
            for col in 1..4 {
                let value = |t: &Triple| [t.precision, t.recall, t.f1][col - 1];
                let best = section
                    .rows
                    .iter()
                    .map(|(_, t)| value(t))
                    .fold(f64::NEG_INFINITY, f64::max);
                for (row, (_, t)) in cells.iter_mut().zip(&section.rows) {
                    if round3(value(t)) == round3(best) {
                        row[col] = format!("{BEST_MARK}{}{BEST_MARK}", row[col]);
                    }
                }
            }
        }
        rendered.push((section.title.as_deref(), cells));
    }

    let mut widths = headers.map(str::len);
    for (_, rows) in &rendered {
        for row in rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
    }
    let line = |cells: [&str; 4]| -> String {
        format!(
            "{:<w0$} | {:>w1$} | {:>w2$} | {:>w3$}",
            cells[0],
            cells[1],
            cells[2],
            cells[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3]
        )
    };

    let mut out = String::new();
    writeln!(out, "{title}").unwrap();
    writeln!(out, "{}", line(headers)).unwrap();
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    writeln!(out, "{}", rule.join("-+-")).unwrap();
    for (section_title, rows) in &rendered {
        if let Some(t) = section_title {
            writeln!(out, "{t}").unwrap();
        }
        for row in rows {
            writeln!(out, "{}", line([&row[0], &row[1], &row[2], &row[3]])).unwrap();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn labels(s: &str) -> Vec<String> {
        s.split(',').map(String::from).collect()
    }

    #[test]
    fn direct_counts() {
        let cm = confusion(&labels("a,a,b"), &labels("a,b,b"), &labels("a,b")).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 1]]);
    }

    #[test]
    fn perfect_prediction_is_diagonal() {
        let l = labels("a,b,c,a");
        let cm = confusion(&l, &l, &labels("a,b,c")).unwrap();
        assert_eq!(cm.counts, vec![vec![2, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let s = macro_scores::<f64>(&cm).macro_avg;
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_sequences_give_zero_matrix() {
        let cm = confusion::<String>(&[], &[], &labels("a,b")).unwrap();
        assert_eq!(cm.counts, vec![vec![0, 0], vec![0, 0]]);
    }

    #[test]
    fn unknown_label_is_input_error() {
        assert!(confusion(&labels("a"), &labels("z"), &labels("a,b")).is_err());
    }

    #[test]
    fn hand_computed_two_class() {
        let cm = ConfusionMatrix {
            classes: labels("a,b"),
            counts: vec![vec![1, 1], vec![0, 1]],
        };
        let s = macro_scores::<f64>(&cm).macro_avg;
        assert!((s.precision - 0.75).abs() < 1e-15);
        assert!((s.recall - 0.75).abs() < 1e-15);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_contributes_zero() {
        let cm = ConfusionMatrix {
            classes: labels("a,b,c"),
            counts: vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 0]],
        };
        let s = macro_scores::<f32>(&cm);
        assert_eq!(s.per_class[2], Scores::default());
        assert!((s.macro_avg.f1 - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn all_one_class_on_balanced_three() {
        // true a,b,c once each; everything predicted a
        let cm = confusion(&labels("a,b,c"), &labels("a,a,a"), &labels("a,b,c")).unwrap();
        let f1 = macro_scores::<f64>(&cm).macro_avg.f1;
        assert!((f1 - (2.0 / (1.0 + 3.0)) / 3.0).abs() < 1e-12);
        assert!((f1 - 0.1667).abs() < 1e-4);
    }

    fn constant_report(t: Triple) -> MetricsReport {
        MetricsReport {
            classes: labels("0,1"),
            per_class: vec![t, t],
            macro_precision: t.precision,
            macro_recall: t.recall,
            macro_f1: t.f1,
            per_fold: vec![t],
            fold_average: t,
        }
    }

    fn plan(n: usize, k: usize) -> FoldPlan {
        let items: Vec<String> = (0..n).map(|i| format!("i{i}")).collect();
        crate::corpus::make_folds(&items, k, 0).unwrap()
    }

    #[test]
    fn constant_runner_average() {
        let t = Triple {
            precision: 0.4,
            recall: 0.6,
            f1: 0.5,
        };
        let r = cross_validate(|_, _, _| Ok(constant_report(t)), &plan(9, 3)).unwrap();
        assert!((r.fold_average.precision - 0.4).abs() < 1e-15);
        assert!((r.fold_average.recall - 0.6).abs() < 1e-15);
        assert!((r.fold_average.f1 - 0.5).abs() < 1e-15);
        assert_eq!(r.per_fold.len(), 3);
    }

    #[test]
    fn fold_mean_of_precisions() {
        let ps = [0.2, 0.4, 0.6];
        let r = cross_validate(
            |f, _, _| {
                Ok(constant_report(Triple {
                    precision: ps[f],
                    recall: 0.0,
                    f1: 0.0,
                }))
            },
            &plan(9, 3),
        )
        .unwrap();
        assert!((r.macro_precision - 0.4).abs() < 1e-12);
    }

    #[test]
    fn every_item_tested_once() {
        let mut seen = Vec::new();
        cross_validate(
            |_, train, test| {
                assert_eq!(train.len() + test.len(), 9);
                seen.extend_from_slice(test);
                Ok(constant_report(Triple::default()))
            },
            &plan(9, 3),
        )
        .unwrap();
        seen.sort();
        let mut all: Vec<String> = (0..9).map(|i| format!("i{i}")).collect();
        all.sort();
        assert_eq!(seen, all);
    }

    #[test]
    fn runner_failure_names_fold() {
        let err = cross_validate(
            |f, _, _| {
                if f == 1 {
                    Err(Error::Data("boom".into()))
                } else {
                    Ok(constant_report(Triple::default()))
                }
            },
            &plan(9, 3),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Fold { fold: 1, .. }));
    }

    #[test]
    fn rounding_half_even() {
        assert_eq!(round3(0.4944999), "0.494");
        assert_eq!(round3(0.0625), "0.062");
        assert_eq!(round3(0.9375), "0.938");
        assert_eq!(round3(1.0), "1.000");
    }

    #[test]
    fn single_row_is_unmarked() {
        let s = ReportSection {
            title: None,
            rows: vec![(
                "deepChallenger".into(),
                Triple {
                    precision: 0.494,
                    recall: 0.933,
                    f1: 0.494,
                },
            )],
        };
        let table = render_report(&[s], TableLayout::ParticipationTable).unwrap();
        let row = table.lines().find(|l| l.starts_with("deepChallenger")).unwrap();
        let words: Vec<&str> = row.split_whitespace().filter(|w| *w != "|").collect();
        assert_eq!(words.join(" "), "deepChallenger 0.494 0.933 0.494");
        assert!(table
            .lines()
            .nth(1)
            .unwrap()
            .contains("Macro-Prec | Macro-Rec | Macro-F1"));
    }

    #[test]
    fn best_value_is_marked() {
        let s = ReportSection {
            title: Some("x".into()),
            rows: vec![
                (
                    "a".into(),
                    Triple {
                        precision: 0.1,
                        recall: 0.9,
                        f1: 0.3,
                    },
                ),
                (
                    "b".into(),
                    Triple {
                        precision: 0.2,
                        recall: 0.8,
                        f1: 0.3,
                    },
                ),
            ],
        };
        let table = render_report(&[s], TableLayout::ProxyTable).unwrap();
        let a = table.lines().find(|l| l.starts_with("a ")).unwrap();
        let b = table.lines().find(|l| l.starts_with("b ")).unwrap();
        assert!(a.contains("**0.900**") && !a.contains("**0.100**"));
        assert!(b.contains("**0.200**") && !b.contains("**0.800**"));
        // ties are all marked
        assert!(a.contains("**0.300**") && b.contains("**0.300**"));
    }

    #[test]
    fn empty_report_is_rejected() {
        assert!(render_report(&[], TableLayout::ProxyTable).is_err());
    }

    proptest! {
        #[test]
        fn joint_shuffle_invariance(pairs in proptest::collection::vec((0usize..4, 0usize..4), 0..60), seed in any::<u64>()) {
            let classes: Vec<String> = (0..4).map(|i| i.to_string()).collect();
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let a = macro_scores::<f64>(&ConfusionMatrix::from_indices(classes.clone(), &t, &p).unwrap());
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (t2, p2): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
            let b = macro_scores::<f64>(&ConfusionMatrix::from_indices(classes, &t2, &p2).unwrap());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn scores_in_unit_interval(counts in proptest::collection::vec(0u64..20, 9)) {
            let cm = ConfusionMatrix { classes: labels("a,b,c"), counts: counts.chunks(3).map(|r| r.to_vec()).collect() };
            let s = macro_scores::<f64>(&cm);
            for c in s.per_class.iter().chain(std::iter::once(&s.macro_avg)) {
                for v in [c.precision, c.recall, c.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
