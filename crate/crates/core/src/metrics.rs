//! Classification metrics: confusion-matrix accuracy / precision / recall /
//! F1 under none / macro / micro averaging, and one-vs-rest ROC AUC via the
//! rank formulation with tie correction.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum MetricsError {
    #[error("no evaluation records")]
    Empty,
    #[error("record {index}: label {label} out of range for {classes} classes")]
    BadLabel { index: usize, label: usize, classes: usize },
    #[error("record {index}: probabilities sum to {sum}, expected 1")]
    BadProbs { index: usize, sum: f64 },
}

pub type Result<V, E = MetricsError> = std::result::Result<V, E>;

/// One scored sample.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalRecord {
    pub true_label: usize,
    pub probs: Vec<f64>,
}

impl EvalRecord {
    pub fn predicted(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Averaging {
    None,
    Macro,
    Micro,
}

/// A metric value: the scalar summary, the per-class vector where defined,
/// and a flag marking classes whose denominator was zero (they contribute 0).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub per_class: Option<Vec<f64>>,
    pub undefined_classes: Vec<usize>,
}

fn validate(records: &[EvalRecord]) -> Result<usize> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = records[0].probs.len();
    for (index, r) in records.iter().enumerate() {
        if r.probs.len() != n || r.true_label >= n {
            return Err(MetricsError::BadLabel { index, label: r.true_label, classes: n });
        }
        let sum: f64 = r.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(MetricsError::BadProbs { index, sum });
        }
    }
    Ok(n)
}

/// Per-class true positive / false positive / false negative counts.
fn counts(records: &[EvalRecord], n: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let (mut tp, mut fp, mut fneg) = (vec![0usize; n], vec![0usize; n], vec![0usize; n]);
    for r in records {
        let pred = r.predicted();
        if pred == r.true_label {
            tp[pred] += 1;
        } else {
            fp[pred] += 1;
            fneg[r.true_label] += 1;
        }
    }
    (tp, fp, fneg)
}

pub fn accuracy(records: &[EvalRecord]) -> Result<f64> {
    validate(records)?;
    let correct = records.iter().filter(|r| r.predicted() == r.true_label).count();
    Ok(correct as f64 / records.len() as f64)
}

fn ratio_metric(
    records: &[EvalRecord],
    averaging: Averaging,
    num_den: impl Fn(usize, &[usize], &[usize], &[usize]) -> (f64, f64),
) -> Result<MetricValue> {
    let n = validate(records)?;
    let (tp, fp, fneg) = counts(records, n);
    match averaging {
        Averaging::Micro => {
            let (mut num, mut den) = (0.0, 0.0);
            for c in 0..n {
                let (a, b) = num_den(c, &tp, &fp, &fneg);
                num += a;
                den += b;
            }
            let value = if den > 0.0 { num / den } else { 0.0 };
            Ok(MetricValue { value, per_class: None, undefined_classes: vec![] })
        }
        Averaging::Macro | Averaging::None => {
            let mut per = Vec::with_capacity(n);
            let mut undefined = Vec::new();
            for c in 0..n {
                let (a, b) = num_den(c, &tp, &fp, &fneg);
                if b > 0.0 {
                    per.push(a / b);
                } else {
                    per.push(0.0);
                    undefined.push(c);
                }
            }
            let value = per.iter().sum::<f64>() / n as f64;
            let per_class = (averaging == Averaging::None).then_some(per);
            Ok(MetricValue { value, per_class, undefined_classes: undefined })
        }
    }
}

pub fn precision(records: &[EvalRecord], averaging: Averaging) -> Result<MetricValue> {
    ratio_metric(records, averaging, |c, tp, fp, _| {
        (tp[c] as f64, (tp[c] + fp[c]) as f64)
    })
}

pub fn recall(records: &[EvalRecord], averaging: Averaging) -> Result<MetricValue> {
    ratio_metric(records, averaging, |c, tp, _, fneg| {
        (tp[c] as f64, (tp[c] + fneg[c]) as f64)
    })
}

pub fn f1(records: &[EvalRecord], averaging: Averaging) -> Result<MetricValue> {
    // per-class F1 = 2TP / (2TP + FP + FN); micro sums the counts first
    ratio_metric(records, averaging, |c, tp, fp, fneg| {
        ((2 * tp[c]) as f64, (2 * tp[c] + fp[c] + fneg[c]) as f64)
    })
}

/// One-vs-rest ROC AUC per class via the rank-sum formulation with the
/// standard midrank tie correction, macro-averaged over classes that have
/// both positives and negatives. Classes missing either side are excluded
/// and reported in `undefined_classes`.
pub fn auc(records: &[EvalRecord]) -> Result<MetricValue> {
    let n = validate(records)?;
    let mut per = Vec::with_capacity(n);
    let mut excluded = Vec::new();
    for c in 0..n {
        let mut scored: Vec<(f64, bool)> = records
            .iter()
            .map(|r| (r.probs[c], r.true_label == c))
            .collect();
        let pos = scored.iter().filter(|(_, p)| *p).count();
        let neg = scored.len() - pos;
        if pos == 0 || neg == 0 {
            excluded.push(c);
            continue;
        }
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // midranks over tie groups
        let mut rank_sum_pos = 0.0;
        let mut i = 0;
        while i < scored.len() {
            let mut j = i;
            while j < scored.len() && scored[j].0 == scored[i].0 {
                j += 1;
            }
            let midrank = (i + 1 + j) as f64 / 2.0; // average of ranks i+1..=j
            rank_sum_pos += midrank * scored[i..j].iter().filter(|(_, p)| *p).count() as f64;
            i = j;
        }
        let u = rank_sum_pos - pos as f64 * (pos as f64 + 1.0) / 2.0;
        per.push(u / (pos as f64 * neg as f64));
    }
    if per.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(MetricValue {
        value: per.iter().sum::<f64>() / per.len() as f64,
        per_class: Some(per),
        undefined_classes: excluded,
    })
}
