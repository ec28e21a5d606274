//! Seeded synthetic behavioral logs with a planted, recoverable preference structure.
//!
//! Users switch between active and dormant days following a two-state Markov
//! chain. Each user belongs to an archetype that prefers a few drug families
//! and video modules, and has a handful of familiar (habitual) drugs and
//! chapters inside those. On an active day every drug and chapter is clicked
//! independently with probability `base + signal * affinity`; an active day
//! that samples no click falls back to one uniformly chosen item. A drug click
//! also logs its family, a chapter click its module.

use std::collections::HashMap;
use std::io::Write;

use chrono::{Days, NaiveDate, TimeDelta};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{sort_events, ContentType, InteractionEvent};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_drugs: usize,
    pub num_drug_families: usize,
    pub num_video_modules: usize,
    pub num_video_chapters: usize,
    pub start_date: NaiveDate,
    pub num_days: u32,
    pub num_archetypes: usize,
    pub preferred_families: usize,
    pub preferred_modules: usize,
    pub familiar_drugs: usize,
    pub familiar_chapters: usize,
    /// Affinity multiplier of familiar items relative to merely preferred ones.
    pub habit_weight: f64,
    /// Lower bound of the per-user engagement scale (upper bound is 1).
    pub min_engagement: f64,
    /// P(active tomorrow | active today).
    pub stay_active: f64,
    /// P(active tomorrow | dormant today).
    pub reactivation: f64,
    pub base_click_probability: f64,
    pub signal_strength: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_users: 1500,
            num_drugs: 30,
            num_drug_families: 10,
            num_video_modules: 12,
            num_video_chapters: 60,
            start_date: NaiveDate::from_ymd_opt(2020, 11, 3).expect("valid date"),
            num_days: 120,
            num_archetypes: 5,
            preferred_families: 2,
            preferred_modules: 2,
            familiar_drugs: 3,
            familiar_chapters: 6,
            habit_weight: 3.0,
            min_engagement: 0.2,
            stay_active: 0.9,
            reactivation: 0.05,
            base_click_probability: 0.002,
            signal_strength: 0.3,
            seed: 20210301,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid synthetic config: {0}")]
pub struct SynthError(pub String);

impl SynthConfig {
    pub fn last_date(&self) -> NaiveDate {
        self.start_date + Days::new(u64::from(self.num_days.saturating_sub(1)))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: &str| Err(SynthError(m.to_string()));
        if self.num_users == 0 {
            return fail("num_users must be positive");
        }
        if [self.num_drugs, self.num_drug_families, self.num_video_modules, self.num_video_chapters].contains(&0) {
            return fail("every catalog must be non-empty");
        }
        if self.num_drugs < self.num_drug_families || self.num_video_chapters < self.num_video_modules {
            return fail("each drug family and video module needs at least one child item");
        }
        if self.num_days == 0 {
            return fail("num_days must be positive");
        }
        if self.num_archetypes == 0 {
            return fail("num_archetypes must be positive");
        }
        if self.preferred_families == 0 || self.preferred_families > self.num_drug_families {
            return fail("preferred_families must be in 1..=num_drug_families");
        }
        if self.preferred_modules == 0 || self.preferred_modules > self.num_video_modules {
            return fail("preferred_modules must be in 1..=num_video_modules");
        }
        for (name, p) in [
            ("stay_active", self.stay_active),
            ("reactivation", self.reactivation),
            ("base_click_probability", self.base_click_probability),
            ("signal_strength", self.signal_strength),
            ("min_engagement", self.min_engagement),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if !(self.habit_weight >= 1.0 && self.habit_weight.is_finite()) {
            return fail("habit_weight must be finite and >= 1");
        }
        if self.stay_active + self.reactivation == 0.0 || self.reactivation == 0.0 && self.stay_active == 1.0 {
            return fail("activity chain must be able to both activate and deactivate");
        }
        Ok(())
    }

    fn stationary_active(&self) -> f64 {
        self.reactivation / (1.0 - self.stay_active + self.reactivation)
    }
}

/// Planted preferences of one user.
#[derive(Clone, Debug, PartialEq)]
pub struct UserTruth {
    pub user_id: String,
    pub archetype: usize,
    pub engagement: f64,
    /// Affinity per drug, in catalog order.
    pub drug_affinity: Vec<f64>,
    /// Affinity per video chapter, in catalog order.
    pub chapter_affinity: Vec<f64>,
}

/// Everything needed to compute exact click probabilities for generated data.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub drug_ids: Vec<String>,
    pub family_ids: Vec<String>,
    pub module_ids: Vec<String>,
    pub chapter_ids: Vec<String>,
    /// Family index of each drug.
    pub drug_family: Vec<usize>,
    /// Module index of each chapter.
    pub chapter_module: Vec<usize>,
    pub archetype_families: Vec<Vec<usize>>,
    pub archetype_modules: Vec<Vec<usize>>,
    pub users: Vec<UserTruth>,
    user_index: HashMap<String, usize>,
}

/// Per-item click probabilities of one user on an active day.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveDayProbabilities {
    pub drug: Vec<f64>,
    pub drug_family: Vec<f64>,
    pub video_chapter: Vec<f64>,
    pub video_module: Vec<f64>,
}

impl ActiveDayProbabilities {
    pub fn of(&self, content_type: ContentType) -> &[f64] {
        match content_type {
            ContentType::Drug => &self.drug,
            ContentType::DrugFamily => &self.drug_family,
            ContentType::VideoChapter => &self.video_chapter,
            ContentType::VideoModule => &self.video_module,
        }
    }
}

impl GroundTruth {
    pub fn content_ids(&self, content_type: ContentType) -> &[String] {
        match content_type {
            ContentType::Drug => &self.drug_ids,
            ContentType::DrugFamily => &self.family_ids,
            ContentType::VideoChapter => &self.chapter_ids,
            ContentType::VideoModule => &self.module_ids,
        }
    }

    pub fn user(&self, user_id: &str) -> Option<&UserTruth> {
        self.user_index.get(user_id).map(|&i| &self.users[i])
    }

    fn leaf_click_probability(&self, affinity: f64) -> f64 {
        (self.config.base_click_probability + self.config.signal_strength * affinity).min(1.0)
    }

    /// Sampling probabilities of the independent leaf draws (before the fallback click).
    pub fn leaf_probabilities(&self, user: &UserTruth) -> (Vec<f64>, Vec<f64>) {
        let f = |a: &Vec<f64>| a.iter().map(|&x| self.leaf_click_probability(x)).collect();
        (f(&user.drug_affinity), f(&user.chapter_affinity))
    }

    /// Exact probability that each item is clicked on a day the user is active.
    pub fn active_day_probabilities(&self, user: &UserTruth) -> ActiveDayProbabilities {
        let (pd, pc) = self.leaf_probabilities(user);
        let n_leaves = (pd.len() + pc.len()) as f64;
        let none = pd.iter().chain(&pc).map(|p| 1.0 - p).product::<f64>();
        let fallback = none / n_leaves;
        let parents = |probs: &[f64], parent_of: &[usize], n: usize| {
            let mut miss = vec![1.0f64; n];
            let mut size = vec![0usize; n];
            for (p, &g) in probs.iter().zip(parent_of) {
                miss[g] *= 1.0 - p;
                size[g] += 1;
            }
            miss.iter().zip(&size).map(|(m, &s)| 1.0 - m + fallback * s as f64).collect::<Vec<f64>>()
        };
        ActiveDayProbabilities {
            drug_family: parents(&pd, &self.drug_family, self.family_ids.len()),
            video_module: parents(&pc, &self.chapter_module, self.module_ids.len()),
            drug: pd.iter().map(|p| p + fallback).collect(),
            video_chapter: pc.iter().map(|p| p + fallback).collect(),
        }
    }

    /// Bayes-optimal next-day click probability for a user observed active today.
    pub fn next_day_probability(&self, user_id: &str, content_type: ContentType, content_id: &str) -> Option<f64> {
        let user = self.user(user_id)?;
        let idx = self.content_ids(content_type).iter().position(|c| c == content_id)?;
        Some(self.config.stay_active * self.active_day_probabilities(user).of(content_type)[idx])
    }

    /// Writes one row per user: id, archetype, engagement and the affinity of every drug and chapter.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["user_id".to_string(), "archetype".into(), "engagement".into()];
        header.extend(self.drug_ids.iter().cloned());
        header.extend(self.chapter_ids.iter().cloned());
        w.write_record(&header)?;
        for u in &self.users {
            let mut row = vec![u.user_id.clone(), u.archetype.to_string(), format!("{:.6}", u.engagement)];
            row.extend(u.drug_affinity.iter().chain(&u.chapter_affinity).map(|a| format!("{a:.6}")));
            w.write_record(&row)?;
        }
        w.flush()
    }
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub events: Vec<InteractionEvent>,
    pub truth: GroundTruth,
}

fn contiguous_groups(n_items: usize, n_groups: usize) -> Vec<usize> {
    (0..n_items).map(|i| i * n_groups / n_items).collect()
}

fn items_in(groups: &[usize], wanted: &[usize]) -> Vec<usize> {
    (0..groups.len()).filter(|&i| wanted.contains(&groups[i])).collect()
}

fn affinity(n: usize, preferred: &[usize], familiar: &[usize], engagement: f64, habit: f64) -> Vec<f64> {
    let mut a = vec![0.0; n];
    for &i in preferred {
        a[i] = engagement;
    }
    for &i in familiar {
        a[i] = engagement * habit;
    }
    a
}

fn build_truth(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> GroundTruth {
    let drug_family = contiguous_groups(cfg.num_drugs, cfg.num_drug_families);
    let chapter_module = contiguous_groups(cfg.num_video_chapters, cfg.num_video_modules);
    let drug_ids: Vec<String> = (0..cfg.num_drugs).map(|i| format!("drug_{i:02}")).collect();
    let family_ids: Vec<String> = (0..cfg.num_drug_families).map(|i| format!("family_{i:02}")).collect();
    let module_ids: Vec<String> = (0..cfg.num_video_modules).map(|i| format!("module_{i:02}")).collect();
    let mut within = vec![0usize; cfg.num_video_modules];
    let chapter_ids: Vec<String> = chapter_module
        .iter()
        .map(|&m| {
            within[m] += 1;
            format!("chapter_{m:02}_{}", within[m] - 1)
        })
        .collect();

    let sorted_sample = |n: usize, k: usize, rng: &mut ChaCha8Rng| {
        let mut v = sample(rng, n, k).into_vec();
        v.sort_unstable();
        v
    };
    let archetype_families: Vec<Vec<usize>> =
        (0..cfg.num_archetypes).map(|_| sorted_sample(cfg.num_drug_families, cfg.preferred_families, rng)).collect();
    let archetype_modules: Vec<Vec<usize>> =
        (0..cfg.num_archetypes).map(|_| sorted_sample(cfg.num_video_modules, cfg.preferred_modules, rng)).collect();

    let width = cfg.num_users.to_string().len().max(4);
    let users: Vec<UserTruth> = (0..cfg.num_users)
        .map(|i| {
            let archetype = rng.gen_range(0..cfg.num_archetypes);
            let engagement = rng.gen_range(cfg.min_engagement..=1.0);
            let pref_d = items_in(&drug_family, &archetype_families[archetype]);
            let pref_c = items_in(&chapter_module, &archetype_modules[archetype]);
            let pick = |pool: &[usize], k: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
                sample(rng, pool.len(), k.min(pool.len())).into_iter().map(|j| pool[j]).collect()
            };
            let fam_d = pick(&pref_d, cfg.familiar_drugs, rng);
            let fam_c = pick(&pref_c, cfg.familiar_chapters, rng);
            UserTruth {
                user_id: format!("u{:0width$}", i + 1),
                archetype,
                engagement,
                drug_affinity: affinity(cfg.num_drugs, &pref_d, &fam_d, engagement, cfg.habit_weight),
                chapter_affinity: affinity(cfg.num_video_chapters, &pref_c, &fam_c, engagement, cfg.habit_weight),
            }
        })
        .collect();
    let user_index = users.iter().enumerate().map(|(i, u)| (u.user_id.clone(), i)).collect();
    GroundTruth {
        config: cfg.clone(),
        drug_ids,
        family_ids,
        module_ids,
        chapter_ids,
        drug_family,
        chapter_module,
        archetype_families,
        archetype_modules,
        users,
        user_index,
    }
}

/// Generates a sorted event log and its ground truth. Deterministic per seed.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let truth = build_truth(cfg, &mut rng);
    let leaf_probs: Vec<(Vec<f64>, Vec<f64>)> = truth.users.iter().map(|u| truth.leaf_probabilities(u)).collect();
    let n_drugs = cfg.num_drugs;
    let n_leaves = n_drugs + cfg.num_video_chapters;
    let pi = cfg.stationary_active();
    let mut active: Vec<bool> = (0..cfg.num_users).map(|_| rng.gen_bool(pi)).collect();
    let mut events = Vec::new();
    let mut clicked: Vec<usize> = Vec::new();
    for day in 0..cfg.num_days {
        let date = cfg.start_date + Days::new(u64::from(day));
        let midnight = date.and_hms_opt(0, 0, 0).expect("valid time").and_utc();
        for (u, user) in truth.users.iter().enumerate() {
            if day > 0 {
                let p = if active[u] { cfg.stay_active } else { cfg.reactivation };
                active[u] = rng.gen_bool(p);
            }
            if !active[u] {
                continue;
            }
            let (pd, pc) = &leaf_probs[u];
            clicked.clear();
            for (i, &p) in pd.iter().chain(pc).enumerate() {
                if rng.gen_bool(p) {
                    clicked.push(i);
                }
            }
            if clicked.is_empty() {
                clicked.push(rng.gen_range(0..n_leaves));
            }
            for &i in &clicked {
                let timestamp = midnight + TimeDelta::seconds(rng.gen_range(0..86_400));
                let mut emit = |content_id: &str, content_type| {
                    events.push(InteractionEvent {
                        user_id: user.user_id.clone(),
                        content_id: content_id.to_string(),
                        content_type,
                        timestamp,
                    })
                };
                if i < n_drugs {
                    emit(&truth.drug_ids[i], ContentType::Drug);
                    emit(&truth.family_ids[truth.drug_family[i]], ContentType::DrugFamily);
                } else {
                    let c = i - n_drugs;
                    emit(&truth.chapter_ids[c], ContentType::VideoChapter);
                    emit(&truth.module_ids[truth.chapter_module[c]], ContentType::VideoModule);
                }
            }
        }
    }
    sort_events(&mut events);
    Ok(SynthOutput { events, truth })
}
