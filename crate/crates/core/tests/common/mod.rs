#![allow(dead_code)]

use ctrforge::autodiff::{finite_difference_check, GradCheckOptions, GradCheckReport, ParamStore, Tape, Tensor};
use ctrforge::features::{FeatureSchema, FieldSpec};
use ctrforge::models::{Architecture, BatchInput, CtrNet, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: [usize; 4] = [5, 4, 3, 6];

pub fn tiny_schema() -> FeatureSchema {
    let mut fields: Vec<FieldSpec> = VOCAB
        .iter()
        .enumerate()
        .map(|(i, &v)| FieldSpec { vocab_size: Some(v), ..FieldSpec::categorical(&format!("f{i}")) })
        .collect();
    fields.push(FieldSpec::numeric("x0"));
    fields.push(FieldSpec::numeric("x1"));
    FeatureSchema::new(fields).unwrap()
}

pub fn tiny_config(arch: Architecture) -> ModelConfig {
    ModelConfig {
        embedding_dim: 3,
        hidden_units: vec![6, 5, 4],
        cin_layer_sizes: vec![3, 2],
        attention_head_size: 4,
        attention_heads: 2,
        ..ModelConfig::new(arch)
    }
}

/// Parameters with every entry drawn from U(-0.5, 0.5), including the
/// slots that normally start at zero.
pub fn dense_params(net: &CtrNet, rng: &mut ChaCha8Rng) -> ParamStore<f64> {
    let mut p: ParamStore<f64> = net.init_params(rng);
    for id in p.ids().collect::<Vec<_>>() {
        for v in p.get_mut(id).data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    p
}

pub struct Batch {
    pub categorical: Vec<u32>,
    pub numeric: Vec<f32>,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn random(len: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut categorical = Vec::new();
        for _ in 0..len {
            categorical.extend(VOCAB.iter().map(|&v| rng.gen_range(0..v as u32)));
        }
        let numeric = (0..2 * len).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels = (0..len).map(|i| (i % 2) as f64).collect();
        Batch { categorical, numeric, labels }
    }

    pub fn input(&self) -> BatchInput<'_> {
        BatchInput { len: self.labels.len(), categorical: &self.categorical, numeric: &self.numeric }
    }
}

/// Full-model finite-difference check of the training loss, dropout masks
/// held fixed across evaluations.
pub fn model_grad_check(arch: Architecture, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = CtrNet::new(tiny_config(arch), &tiny_schema()).unwrap();
    let mut params = dense_params(&net, &mut rng);
    let batch = Batch::random(4, &mut rng);
    let mask_seed: u64 = rng.gen();
    finite_difference_check(
        &mut params,
        |p| {
            let mut tape = Tape::new();
            let mut masks = ChaCha8Rng::seed_from_u64(mask_seed);
            let logits = net.forward(p, &mut tape, &batch.input(), Some(&mut masks));
            let loss = tape.bce_with_logits(logits, &batch.labels);
            (tape, loss)
        },
        GradCheckOptions::default(),
    )
}

pub fn naive_fm(e: &[f64], m: usize, k: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            s += (0..k).map(|d| e[i * k + d] * e[j * k + d]).sum::<f64>();
        }
    }
    s
}

/// `out[h][d] = Σ_i Σ_j w[i*m + j][h] · prev[i][d] · x0[j][d]`
pub fn naive_cin(prev: &[f64], x0: &[f64], w: &[f64], h: usize, m: usize, k: usize, h_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; h_out * k];
    for o in 0..h_out {
        for d in 0..k {
            for i in 0..h {
                for j in 0..m {
                    out[o * k + d] += w[(i * m + j) * h_out + o] * prev[i * k + d] * x0[j * k + d];
                }
            }
        }
    }
    out
}

pub fn tensor(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), data)
}

use std::collections::BTreeMap;

use chrono::NaiveDate;
use ctrforge::dataset::{build_examples, candidate_rows, default_schema, ContentType, ExampleSet, InteractionEvent};
use ctrforge::features::FieldSource;
use ctrforge::synth::SynthConfig;

pub fn small_synth(num_users: usize, num_days: u32, seed: u64) -> SynthConfig {
    SynthConfig { num_users, num_days, seed, ..SynthConfig::default() }
}

/// Every schema field of row `i`, rendered for comparison.
fn feature_values(set: &ExampleSet, i: usize) -> Vec<String> {
    let row = set.row(i);
    default_schema().fields().iter().map(|f| format!("{:?}", row.raw(&f.name))).collect()
}

fn user_rows<'a>(set: &'a ExampleSet, user: &str) -> BTreeMap<&'a str, Vec<String>> {
    (0..set.len())
        .filter(|&i| set.user_id(&set.examples[i]) == user)
        .map(|i| (set.content_id(&set.examples[i]), feature_values(set, i)))
        .collect()
}

pub struct LeakageOutcome {
    pub users_checked: usize,
    pub rows_compared: usize,
    pub violations: Vec<String>,
}

/// For random (user, active day d, content type) triples, compares every
/// feature of the user's examples dated d built from the full log against
/// (a) the builder run on the log truncated after d and (b) the independent
/// direct-scan computation on the truncated log.
pub fn leakage_check(events: &[InteractionEvent], num_users: usize, seed: u64) -> LeakageOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut active: BTreeMap<&str, Vec<NaiveDate>> = BTreeMap::new();
    for e in events {
        let days = active.entry(e.user_id.as_str()).or_default();
        if days.last() != Some(&e.date()) {
            days.push(e.date());
        }
    }
    let users: Vec<&str> = active.keys().copied().collect();
    let picks = rand::seq::index::sample(&mut rng, users.len(), num_users.min(users.len()));
    let mut out = LeakageOutcome { users_checked: 0, rows_compared: 0, violations: Vec::new() };
    for u in picks {
        let user = users[u];
        let days = &active[user];
        let d = days[rng.gen_range(0..days.len())];
        let ct = ContentType::ALL[rng.gen_range(0..4)];
        let full = build_examples(events, ct, &[d]);
        let truncated: Vec<InteractionEvent> = events.iter().filter(|e| e.date() <= d).cloned().collect();
        let stripped = build_examples(&truncated, ct, &[d]);
        let direct = candidate_rows(&truncated, ct, user, d);
        let (a, b) = (user_rows(&full, user), user_rows(&stripped, user));
        let c = direct.as_ref().map(|s| user_rows(s, user)).unwrap_or_default();
        out.users_checked += 1;
        if b.is_empty() || b.len() != c.len() {
            out.violations.push(format!("{user} {d} {ct}: {} truncated rows vs {} direct rows", b.len(), c.len()));
        }
        for (content, values) in &b {
            out.rows_compared += 1;
            if a.get(content) != Some(values) || c.get(content) != Some(values) {
                out.violations.push(format!("{user} {d} {ct} {content}"));
            }
        }
    }
    out
}
