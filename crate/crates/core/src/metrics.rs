//! AUC, RMSE and per-content RMSE.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("AUC is undefined: labels contain only {0}")]
    UndefinedAuc(&'static str),
    #[error("metric input is empty")]
    Empty,
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("label {0} is not binary")]
    NonBinaryLabel(f64),
}

fn check(scores: usize, labels: usize) -> Result<(), MetricError> {
    if scores != labels {
        return Err(MetricError::LengthMismatch(scores, labels));
    }
    if scores == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn is_positive(y: f64) -> Result<bool, MetricError> {
    if y == 1.0 {
        Ok(true)
    } else if y == 0.0 {
        Ok(false)
    } else {
        Err(MetricError::NonBinaryLabel(y))
    }
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties given half
/// credit through midranks.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    check(scores.len(), labels.len())?;
    let positive: Vec<bool> = labels.iter().map(|&y| is_positive(y)).collect::<Result<_, _>>()?;
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 {
        return Err(MetricError::UndefinedAuc("negatives"));
    }
    if n_neg == 0 {
        return Err(MetricError::UndefinedAuc("positives"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn rmse(predictions: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    check(predictions.len(), labels.len())?;
    let sse: f64 = predictions.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContentRmse {
    pub content_id: String,
    pub rmse: f64,
    pub count: usize,
}

/// RMSE per content id, ordered by id.
pub fn per_content_rmse<S: AsRef<str>>(
    predictions: &[f64],
    labels: &[f64],
    content_ids: &[S],
) -> Result<Vec<ContentRmse>, MetricError> {
    check(predictions.len(), labels.len())?;
    if content_ids.len() != predictions.len() {
        return Err(MetricError::LengthMismatch(predictions.len(), content_ids.len()));
    }
    let mut groups: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for ((p, y), c) in predictions.iter().zip(labels).zip(content_ids) {
        let g = groups.entry(c.as_ref()).or_default();
        g.0 += (p - y) * (p - y);
        g.1 += 1;
    }
    Ok(groups
        .into_iter()
        .map(|(c, (sse, n))| ContentRmse { content_id: c.to_string(), rmse: (sse / n as f64).sqrt(), count: n })
        .collect())
}

/// Evaluation of one model on one content type's test slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub country: String,
    pub content_type: crate::dataset::ContentType,
    /// `None` when the test labels are single-class.
    pub auc: Option<f64>,
    pub rmse: f64,
    pub num_examples: usize,
    pub num_positive: usize,
    pub per_content: Vec<ContentRmse>,
}

impl EvalReport {
    pub fn compute<S: AsRef<str>>(
        model: &str,
        country: &str,
        content_type: crate::dataset::ContentType,
        predictions: &[f64],
        labels: &[f64],
        content_ids: &[S],
    ) -> Result<Self, MetricError> {
        let auc = match auc(predictions, labels) {
            Ok(a) => Some(a),
            Err(MetricError::UndefinedAuc(which)) => {
                log::warn!("{model}/{content_type}: test labels contain only {which}; AUC undefined");
                None
            }
            Err(e) => return Err(e),
        };
        Ok(EvalReport {
            model: model.to_string(),
            country: country.to_string(),
            content_type,
            auc,
            rmse: rmse(predictions, labels)?,
            num_examples: labels.len(),
            num_positive: labels.iter().filter(|&&y| y == 1.0).count(),
            per_content: per_content_rmse(predictions, labels, content_ids)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2], &[1.0, 1.0]), Err(MetricError::UndefinedAuc("positives")));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(rmse(&[], &[]), Err(MetricError::Empty));
    }

    #[test]
    fn per_content_groups() {
        let t = per_content_rmse(&[1.0, 0.5, 0.0, 0.5], &[1.0, 0.0, 0.0, 1.0], &["a", "b", "a", "b"]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!((t[0].content_id.as_str(), t[0].rmse, t[0].count), ("a", 0.0, 2));
        assert_eq!(t[1].rmse, 0.5);
    }
}
