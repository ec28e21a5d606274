use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::examples::ExampleSet;
use super::DatasetError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    /// Examples dated strictly before this day go to train/validation.
    pub train_cutoff_date: NaiveDate,
    /// Examples dated exactly this day form the test set.
    pub test_date: NaiveDate,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_validation_fraction() -> f64 {
    0.2
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.test_date < self.train_cutoff_date {
            return Err(DatasetError::InvalidSplit(format!(
                "test_date {} precedes train_cutoff_date {}",
                self.test_date, self.train_cutoff_date
            )));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(DatasetError::InvalidSplit(format!(
                "validation_fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Row indices into an [`ExampleSet`], each list ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Temporal split with a seeded random train/validation partition of the
/// pre-cutoff examples. Fails if the test day has no examples.
pub fn split(set: &ExampleSet, spec: &SplitSpec) -> Result<SplitIndices, DatasetError> {
    spec.validate()?;
    let mut history = Vec::new();
    let mut test = Vec::new();
    for (i, e) in set.examples.iter().enumerate() {
        if e.reference_date == spec.test_date {
            test.push(i);
        } else if e.reference_date < spec.train_cutoff_date {
            history.push(i);
        }
    }
    if test.is_empty() {
        return Err(DatasetError::EmptyTestSlice { content_type: set.content_type, date: spec.test_date });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    history.shuffle(&mut rng);
    let n_val = (history.len() as f64 * spec.validation_fraction).round() as usize;
    let mut validation = history[..n_val].to_vec();
    let mut train = history[n_val..].to_vec();
    validation.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, validation, test })
}

/// Keeps every positive and a uniform sample of `ratio` negatives per
/// positive (all of them if fewer exist). Returns ascending indices.
pub fn downsample_negatives(set: &ExampleSet, indices: &[usize], ratio: f64, seed: u64) -> Vec<usize> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = indices.iter().partition(|&&i| set.examples[i].label);
    let want = ((pos.len() as f64) * ratio).round() as usize;
    if want >= neg.len() {
        return indices.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept: Vec<usize> = rand::seq::index::sample(&mut rng, neg.len(), want).into_iter().map(|j| neg[j]).collect();
    kept.extend(pos);
    kept.sort_unstable();
    kept
}
