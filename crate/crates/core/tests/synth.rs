mod common;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Days, NaiveDate};
use common::small_synth;
use ctrforge::dataset::{build_examples, write_events, ContentType, InteractionEvent, LogFormat};
use ctrforge::metrics::auc;
use ctrforge::synth::{generate, GroundTruth, SynthConfig};

/// Per (user, date) set of clicked (type, content) pairs.
type Clicks<'a> = BTreeMap<(&'a str, NaiveDate), BTreeSet<(ContentType, &'a str)>>;

fn clicks(events: &[InteractionEvent]) -> Clicks<'_> {
    let mut out = Clicks::new();
    for e in events {
        out.entry((e.user_id.as_str(), e.date())).or_default().insert((e.content_type, e.content_id.as_str()));
    }
    out
}

struct Tally {
    observed: f64,
    expected: f64,
    variance: f64,
    trials: f64,
}

impl Tally {
    fn new() -> Self {
        Tally { observed: 0.0, expected: 0.0, variance: 0.0, trials: 0.0 }
    }

    fn add(&mut self, hit: bool, p: f64) {
        self.observed += hit as u8 as f64;
        self.expected += p;
        self.variance += p * (1.0 - p);
        self.trials += 1.0;
    }

    fn z(&self) -> f64 {
        (self.observed - self.expected) / self.variance.sqrt()
    }
}

/// Accumulates per-item tallies of one content type over every active user-day.
fn item_tallies(truth: &GroundTruth, events: &[InteractionEvent], ct: ContentType) -> Vec<Tally> {
    let ids = truth.content_ids(ct);
    let mut tallies: Vec<Tally> = ids.iter().map(|_| Tally::new()).collect();
    for ((user, _), day) in clicks(events) {
        let probs = truth.active_day_probabilities(truth.user(user).unwrap());
        for (i, id) in ids.iter().enumerate() {
            tallies[i].add(day.contains(&(ct, id.as_str())), probs.of(ct)[i]);
        }
    }
    tallies
}

#[test]
fn same_seed_gives_byte_identical_files() {
    let cfg = small_synth(80, 25, 42);
    let render = |cfg: &SynthConfig| {
        let out = generate(cfg).unwrap();
        let (mut csv, mut jsonl, mut truth) = (Vec::new(), Vec::new(), Vec::new());
        write_events(&mut csv, &out.events, LogFormat::Csv).unwrap();
        write_events(&mut jsonl, &out.events, LogFormat::Jsonl).unwrap();
        out.truth.write_csv(&mut truth).unwrap();
        (csv, jsonl, truth)
    };
    let a = render(&cfg);
    assert_eq!(a, render(&cfg));
    assert_ne!(a.0, render(&SynthConfig { seed: 43, ..cfg }).0);
}

#[test]
fn zero_signal_gives_uniform_click_rates() {
    let cfg = SynthConfig { signal_strength: 0.0, base_click_probability: 0.03, ..small_synth(500, 60, 9) };
    let out = generate(&cfg).unwrap();
    for ct in ContentType::ALL {
        let tallies = item_tallies(&out.truth, &out.events, ct);
        let p = tallies[0].expected / tallies[0].trials;
        for (id, t) in out.truth.content_ids(ct).iter().zip(&tallies) {
            assert!((t.expected / t.trials - p).abs() < 1e-12, "{ct} {id}: planted rate differs");
            assert!(t.z().abs() <= 3.0, "{ct} {id}: rate {} vs {p} (z {:.2})", t.observed / t.trials, t.z());
        }
    }
}

#[test]
fn matched_drugs_beat_unmatched_by_the_planted_gap() {
    let out = generate(&small_synth(400, 60, 21)).unwrap();
    let truth = &out.truth;
    let (mut matched, mut unmatched) = (Tally::new(), Tally::new());
    for ((user, _), day) in clicks(&out.events) {
        let u = truth.user(user).unwrap();
        let probs = truth.active_day_probabilities(u);
        for (i, id) in truth.drug_ids.iter().enumerate() {
            let hit = day.contains(&(ContentType::Drug, id.as_str()));
            let bucket = if u.drug_affinity[i] > 0.0 { &mut matched } else { &mut unmatched };
            bucket.add(hit, probs.drug[i]);
        }
    }
    let rate = |t: &Tally| t.observed / t.trials;
    let planted = |t: &Tally| t.expected / t.trials;
    let gap = rate(&matched) - rate(&unmatched);
    let planted_gap = planted(&matched) - planted(&unmatched);
    let se = (matched.variance / matched.trials.powi(2) + unmatched.variance / unmatched.trials.powi(2)).sqrt();
    assert!(gap > 0.0 && planted_gap > 0.0);
    assert!((gap - planted_gap).abs() <= 2.0 * se, "gap {gap} vs planted {planted_gap} (se {se})");
}

#[test]
fn marginal_counts_concentrate_around_expectation() {
    let out = generate(&small_synth(300, 40, 5)).unwrap();
    for ct in ContentType::ALL {
        let tallies = item_tallies(&out.truth, &out.events, ct);
        let total = Tally {
            observed: tallies.iter().map(|t| t.observed).sum(),
            expected: tallies.iter().map(|t| t.expected).sum(),
            variance: tallies.iter().map(|t| t.variance).sum(),
            trials: 0.0,
        };
        assert!(total.z().abs() <= 3.0, "{ct}: {} clicks vs {} expected", total.observed, total.expected);
    }
    let count = |ct| out.events.iter().filter(|e| e.content_type == ct).count();
    assert_eq!(count(ContentType::Drug), count(ContentType::DrugFamily));
    assert_eq!(count(ContentType::VideoChapter), count(ContentType::VideoModule));
}

#[test]
fn activity_follows_the_markov_chain() {
    let cfg = small_synth(300, 60, 13);
    let out = generate(&cfg).unwrap();
    let active: BTreeSet<(&str, NaiveDate)> = clicks(&out.events).into_keys().collect();
    let (mut stay, mut reactivate) = (Tally::new(), Tally::new());
    for u in &out.truth.users {
        for day in 0..cfg.num_days - 1 {
            let d = cfg.start_date + Days::new(u64::from(day));
            let next = active.contains(&(u.user_id.as_str(), d + Days::new(1)));
            if active.contains(&(u.user_id.as_str(), d)) {
                stay.add(next, cfg.stay_active);
            } else {
                reactivate.add(next, cfg.reactivation);
            }
        }
    }
    assert!(stay.z().abs() <= 3.0, "stay rate {}", stay.observed / stay.trials);
    assert!(reactivate.z().abs() <= 3.0, "reactivation rate {}", reactivate.observed / reactivate.trials);
}

#[test]
fn bayes_scorer_beats_chance() {
    let out = generate(&small_synth(400, 40, 8)).unwrap();
    let d = out.truth.config.start_date + Days::new(30);
    for ct in ContentType::ALL {
        let set = build_examples(&out.events, ct, &[d]);
        let scores: Vec<f64> = set
            .examples
            .iter()
            .map(|e| out.truth.next_day_probability(set.user_id(e), ct, set.content_id(e)).unwrap())
            .collect();
        let labels: Vec<f64> = set.examples.iter().map(|e| e.label as u8 as f64).collect();
        let a = auc(&scores, &labels).unwrap();
        assert!(a > 0.5, "{ct}: bayes auc {a}");
    }
}

#[test]
fn empty_population_or_catalog_is_fatal() {
    let base = small_synth(10, 5, 1);
    for bad in [
        SynthConfig { num_users: 0, ..base.clone() },
        SynthConfig { num_drugs: 0, ..base.clone() },
        SynthConfig { num_video_chapters: 0, ..base.clone() },
        SynthConfig { num_days: 0, ..base.clone() },
        SynthConfig { base_click_probability: -0.1, ..base.clone() },
    ] {
        assert!(generate(&bad).is_err(), "{bad:?}");
    }
    assert!(generate(&base).is_ok());
}
