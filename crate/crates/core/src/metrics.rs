//! Evaluation statistics: macro-F1, MAE/RMSE, Pearson correlation with a
//! t-test p-value, Cronbach's alpha, and the per-item, feature-correlation
//! and scatter tables built from them.
//!
//! Statistics that are undefined for the given data (constant series, zero
//! total variance) are returned as explicit values rather than zeros.

use std::collections::{BTreeMap, HashMap};

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::domain::{Item, Phq8Items, Severity, ITEM_COUNT};
use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub label: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Occurrences of `label` in the truth.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    /// The declared label set, in the order given.
    pub labels: Vec<usize>,
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted mean of `per_class` F1, zero-support classes included.
    pub macro_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1 and their macro average over `label_set`.
pub fn macro_f1(truth: &[usize], predicted: &[usize], label_set: &[usize]) -> Result<ClassificationReport> {
    if truth.len() != predicted.len() {
        return Err(Error::domain(format!(
            "length mismatch: {} truths, {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::domain("macro-F1 of an empty sequence"));
    }
    if label_set.is_empty() {
        return Err(Error::domain("empty label set"));
    }
    if let Some(l) = truth.iter().chain(predicted).find(|l| !label_set.contains(l)) {
        return Err(Error::domain(format!("label {l} not in the declared label set")));
    }

    let per_class: Vec<ClassMetrics> = label_set
        .iter()
        .map(|&label| {
            let mut tp = 0;
            let mut fp = 0;
            let mut fn_ = 0;
            for (&t, &p) in truth.iter().zip(predicted) {
                match (t == label, p == label) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label,
                precision,
                recall,
                f1,
                support: tp + fn_,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    Ok(ClassificationReport {
        labels: label_set.to_vec(),
        per_class,
        macro_f1,
    })
}

/// Two-class macro-F1 over {0 = negative, 1 = positive}.
pub fn binary_macro_f1(truth: &[bool], predicted: &[bool]) -> Result<ClassificationReport> {
    let t: Vec<usize> = truth.iter().map(|&b| usize::from(b)).collect();
    let p: Vec<usize> = predicted.iter().map(|&b| usize::from(b)).collect();
    macro_f1(&t, &p, &[0, 1])
}

/// Five-way macro-F1 over all severity bands.
pub fn severity_macro_f1(truth: &[Severity], predicted: &[Severity]) -> Result<ClassificationReport> {
    let t: Vec<usize> = truth.iter().map(|s| s.index()).collect();
    let p: Vec<usize> = predicted.iter().map(|s| s.index()).collect();
    let labels: Vec<usize> = Severity::ALL.iter().map(|s| s.index()).collect();
    macro_f1(&t, &p, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correlation<T> {
    Defined { r: T, p_value: T },
    /// At least one series is constant.
    Undefined,
}

impl<T: Scalar> Correlation<T> {
    pub fn r(&self) -> Option<T> {
        match *self {
            Correlation::Defined { r, .. } => Some(r),
            Correlation::Undefined => None,
        }
    }

    pub fn p_value(&self) -> Option<T> {
        match *self {
            Correlation::Defined { p_value, .. } => Some(p_value),
            Correlation::Undefined => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionReport<T> {
    pub mae: T,
    pub rmse: T,
    pub correlation: Correlation<T>,
}

fn check_pair<T>(truth: &[T], predicted: &[T], min: usize) -> Result<()> {
    if truth.len() != predicted.len() {
        return Err(Error::domain(format!(
            "length mismatch: {} truths, {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.len() < min {
        return Err(Error::domain(format!("need at least {min} pairs, got {}", truth.len())));
    }
    Ok(())
}

pub fn mae<T: Scalar>(truth: &[T], predicted: &[T]) -> Result<T> {
    check_pair(truth, predicted, 1)?;
    let abs: Vec<T> = truth.iter().zip(predicted).map(|(&t, &p)| (t - p).abs()).collect();
    Ok(scalar::mean(&abs))
}

pub fn rmse<T: Scalar>(truth: &[T], predicted: &[T]) -> Result<T> {
    check_pair(truth, predicted, 1)?;
    let sq: Vec<T> = truth.iter().zip(predicted).map(|(&t, &p)| (t - p) * (t - p)).collect();
    Ok(scalar::mean(&sq).sqrt())
}

/// Product-moment correlation with a two-sided t-test (`n - 2` degrees of freedom).
///
/// With exactly two points the correlation is always +-1 and carries no
/// evidence, so the p-value is reported as 1.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<Correlation<T>> {
    check_pair(x, y, 2)?;
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::numeric("correlation input contains non-finite values"));
    }
    let (mx, my) = (scalar::mean(x), scalar::mean(y));
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    let mut syy = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Ok(Correlation::Undefined);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).max(-T::one()).min(T::one());
    let p_value = T::lit(pearson_p_value(r.to_f64_lossless(), x.len()));
    Ok(Correlation::Defined { r, p_value })
}

/// Two-sided p-value of the t statistic `r * sqrt((n-2) / (1-r^2))`.
pub fn pearson_p_value(r: f64, n: usize) -> f64 {
    if n <= 2 {
        return 1.0;
    }
    let dof = (n - 2) as f64;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = r.abs() * (dof / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).expect("dof > 0");
    (2.0 * dist.sf(t)).clamp(0.0, 1.0)
}

pub fn regression_metrics<T: Scalar>(truth: &[T], predicted: &[T]) -> Result<RegressionReport<T>> {
    check_pair(truth, predicted, 2)?;
    Ok(RegressionReport {
        mae: mae(truth, predicted)?,
        rmse: rmse(truth, predicted)?,
        correlation: pearson(truth, predicted)?,
    })
}

/// Cronbach's alpha over an `N x K` matrix (rows are respondents).
///
/// Uses `n - 1` sample variances. Returns `None` when the row totals have
/// zero variance.
pub fn cronbach_alpha<T: Scalar, R: AsRef<[T]>>(rows: &[R]) -> Result<Option<T>> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::domain(format!("Cronbach's alpha needs >= 2 rows, got {n}")));
    }
    let k = rows[0].as_ref().len();
    if k < 2 {
        return Err(Error::domain(format!("Cronbach's alpha needs >= 2 items, got {k}")));
    }
    if rows.iter().any(|r| r.as_ref().len() != k) {
        return Err(Error::domain("rows have differing item counts"));
    }
    let item_var_sum = (0..k)
        .map(|j| {
            let col: Vec<T> = rows.iter().map(|r| r.as_ref()[j]).collect();
            scalar::sample_variance(&col)
        })
        .fold(T::zero(), |a, b| a + b);
    let totals: Vec<T> = rows.iter().map(|r| scalar::sum(r.as_ref())).collect();
    let total_var = scalar::sample_variance(&totals);
    if total_var == T::zero() {
        return Ok(None);
    }
    let kf = T::lit(k as f64);
    Ok(Some(kf / (kf - T::one()) * (T::one() - item_var_sum / total_var)))
}

/// Cronbach's alpha of PHQ-8 item vectors.
pub fn item_alpha(items: &[Phq8Items]) -> Result<Option<f64>> {
    let rows: Vec<Vec<f64>> = items.iter().map(item_row).collect();
    cronbach_alpha(&rows)
}

fn item_row(items: &Phq8Items) -> Vec<f64> {
    items.as_array().iter().map(|&v| f64::from(v)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemMetrics {
    pub item: Item,
    pub correlation: Correlation<f64>,
    pub mae: f64,
    pub rmse: f64,
}

/// Column-wise regression metrics, one row per item in item order.
pub fn per_item_report(truth: &[Phq8Items], predicted: &[Phq8Items]) -> Result<Vec<ItemMetrics>> {
    check_pair(truth, predicted, 2)?;
    let col = |m: &[Phq8Items], k: usize| -> Vec<f64> { m.iter().map(|r| f64::from(r.as_array()[k])).collect() };
    (0..ITEM_COUNT)
        .map(|k| {
            let report = regression_metrics(&col(truth, k), &col(predicted, k))?;
            Ok(ItemMetrics {
                item: Item::ALL[k],
                correlation: report.correlation,
                mae: report.mae,
                rmse: report.rmse,
            })
        })
        .collect()
}

/// External per-speaker measurements (for example prosodic features).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub features: Vec<String>,
    /// `(speaker_id, values)`; `None` marks a missing measurement.
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCorrelation {
    pub feature: String,
    /// Speakers with both a prediction and this feature.
    pub n: usize,
    pub correlation: Correlation<f64>,
}

/// Pearson correlation between predicted totals and each feature column.
///
/// Speakers are matched by id; a missing value drops that speaker for that
/// feature only. Features left with fewer than three pairs are reported as
/// undefined.
pub fn feature_correlation_report(predicted: &[(String, f64)], table: &FeatureTable) -> Result<Vec<FeatureCorrelation>> {
    let preds: HashMap<&str, f64> = predicted.iter().map(|(id, v)| (id.as_str(), *v)).collect();
    let matched: Vec<(f64, &[Option<f64>])> = table
        .rows
        .iter()
        .filter_map(|(id, vals)| preds.get(id.as_str()).map(|&p| (p, vals.as_slice())))
        .collect();
    if matched.is_empty() {
        return Err(Error::domain("no speakers shared between predictions and feature table"));
    }
    if matched.len() < 3 {
        return Err(Error::domain(format!(
            "only {} speakers shared between predictions and feature table; need >= 3",
            matched.len()
        )));
    }
    table
        .features
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (x, y): (Vec<f64>, Vec<f64>) = matched
                .iter()
                .filter_map(|(p, vals)| vals.get(j).copied().flatten().map(|v| (*p, v)))
                .unzip();
            let correlation = if x.len() < 3 {
                Correlation::Undefined
            } else {
                pearson(&x, &y)?
            };
            Ok(FeatureCorrelation {
                feature: name.clone(),
                n: x.len(),
                correlation,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScatterRow {
    /// 1-based position after sorting.
    pub rank: usize,
    pub speaker_id: String,
    pub actual: u8,
    pub predicted: u8,
}

/// Rows sorted by actual total, then speaker id.
pub fn scatter_export(truth: &[u8], predicted: &[u8], speaker_ids: &[String]) -> Result<Vec<ScatterRow>> {
    if truth.len() != predicted.len() || truth.len() != speaker_ids.len() {
        return Err(Error::domain(format!(
            "length mismatch: {} truths, {} predictions, {} ids",
            truth.len(),
            predicted.len(),
            speaker_ids.len()
        )));
    }
    let mut rows: Vec<(u8, &String, u8)> = truth
        .iter()
        .zip(speaker_ids)
        .zip(predicted)
        .map(|((&a, id), &p)| (a, id, p))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (actual, id, predicted))| ScatterRow {
            rank: i + 1,
            speaker_id: id.clone(),
            actual,
            predicted,
        })
        .collect())
}

/// Confusion counts `matrix[truth][predicted]` over `label_set` positions.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], label_set: &[usize]) -> Result<Vec<Vec<usize>>> {
    check_pair(truth, predicted, 1)?;
    let pos: BTreeMap<usize, usize> = label_set.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut m = vec![vec![0; label_set.len()]; label_set.len()];
    for (t, p) in truth.iter().zip(predicted) {
        match (pos.get(t), pos.get(p)) {
            (Some(&i), Some(&j)) => m[i][j] += 1,
            _ => return Err(Error::domain("label outside the declared label set")),
        }
    }
    Ok(m)
}
