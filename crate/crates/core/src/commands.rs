//! End-to-end commands behind the `ctrforge` binary. Every artifact lives
//! under the configured run directory, which also holds `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};
use crate::dataset::{
    build_examples, candidate_rows, ingest_logs, prepare, write_events, ContentType, DatasetError, EncodedExamples,
    InteractionEvent, LogFormat,
};
use crate::features::OOV_INDEX;
use crate::metrics::EvalReport;
use crate::models::Architecture;
use crate::report::{render_text, write_per_content_csv, write_table_csv, Metric};
use crate::synth::generate;
use crate::train::{train, write_metrics_csv, Checkpoint, EpochMetrics};
use crate::CtrError;

/// Standard locations inside a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(cfg: &RunConfig) -> Self {
        RunDir { root: cfg.paths.workdir.clone() }
    }

    pub fn ground_truth(&self) -> PathBuf {
        self.root.join("data").join("ground_truth.csv")
    }

    pub fn checkpoint(&self, ct: ContentType, arch: Architecture) -> PathBuf {
        self.root.join("models").join(ct.as_str()).join(format!("{}.ckpt", arch.as_str()))
    }

    pub fn metrics(&self, ct: ContentType, arch: Architecture) -> PathBuf {
        self.root.join("models").join(ct.as_str()).join(format!("{}.metrics.csv", arch.as_str()))
    }

    pub fn eval(&self, name: &str) -> PathBuf {
        self.root.join("eval").join(name)
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("report").join(name)
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    /// Input files (path → SHA-256).
    pub inputs: BTreeMap<String, String>,
    /// Produced files relative to the run directory (path → SHA-256).
    pub artifacts: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String, CtrError> {
    let bytes = fs::read(path).map_err(|e| CtrError::io(path, e))?;
    Ok(hex(&Sha256::digest(bytes)))
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

fn update_manifest(cfg: &RunConfig, inputs: &[PathBuf], artifacts: &[PathBuf]) -> Result<(), CtrError> {
    let dir = RunDir::new(cfg);
    let path = dir.manifest();
    let mut manifest: Manifest = match fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes).unwrap_or_default(),
        Err(_) => Manifest::default(),
    };
    manifest.config_hash = cfg.hash();
    for p in inputs {
        manifest.inputs.insert(relative(&dir.root, p), sha256_file(p)?);
    }
    for p in artifacts {
        manifest.artifacts.insert(relative(&dir.root, p), sha256_file(p)?);
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| CtrError::io(&path, e))
}

fn create_parent(path: &Path) -> Result<(), CtrError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CtrError::io(parent, e))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CtrError> {
    create_parent(path)?;
    File::create(path).map(BufWriter::new).map_err(|e| CtrError::io(path, e))
}

pub fn load_events(cfg: &RunConfig) -> Result<Vec<InteractionEvent>, CtrError> {
    let report = ingest_logs(&cfg.logs_path(), cfg.max_malformed_fraction)?;
    log::info!("read {} events ({} malformed rows skipped)", report.events.len(), report.malformed_rows);
    Ok(report.events)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSummary {
    pub users: usize,
    pub events: usize,
    pub per_type: Vec<(ContentType, usize)>,
    pub logs: PathBuf,
    pub ground_truth: PathBuf,
}

/// Generates synthetic logs and ground truth. Refuses to overwrite without `force`.
pub fn cmd_synth(cfg: &RunConfig, force: bool) -> Result<SynthSummary, CtrError> {
    let synth = cfg.synth.as_ref().ok_or_else(|| CtrError::Config("config has no [synth] section".into()))?;
    let dir = RunDir::new(cfg);
    let (logs, truth_path) = (cfg.logs_path(), dir.ground_truth());
    if !force {
        if let Some(p) = [&logs, &truth_path].into_iter().find(|p| p.exists()) {
            return Err(CtrError::Config(format!("{} already exists; pass --force to overwrite", p.display())));
        }
    }
    let out = generate(synth)?;
    write_events(create(&logs)?, &out.events, LogFormat::from_path(&logs)).map_err(|e| CtrError::io(&logs, e))?;
    out.truth.write_csv(create(&truth_path)?).map_err(|e| CtrError::io(&truth_path, e))?;
    update_manifest(cfg, &[], &[logs.clone(), truth_path.clone()])?;
    let per_type = ContentType::ALL
        .iter()
        .map(|&t| (t, out.events.iter().filter(|e| e.content_type == t).count()))
        .collect();
    Ok(SynthSummary { users: synth.num_users, events: out.events.len(), per_type, logs, ground_truth: truth_path })
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub content_type: ContentType,
    pub architecture: Architecture,
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub metrics: Vec<EpochMetrics>,
    pub train_examples: usize,
}

/// Ingest, build, split and train every requested model for every configured content type.
pub fn cmd_train(cfg: &RunConfig, models: &[Architecture]) -> Result<Vec<TrainSummary>, CtrError> {
    let events = load_events(cfg)?;
    let schema = cfg.feature_schema()?;
    let dir = RunDir::new(cfg);
    let mut out = Vec::new();
    let mut artifacts = Vec::new();
    for &ct in &cfg.content_types {
        let data = prepare(&events, ct, &schema, &cfg.split, &cfg.dataset)?;
        for &arch in models {
            let outcome = train(
                cfg.model.for_architecture(arch),
                &data.encoder,
                ct,
                &data.train,
                &data.validation,
                &cfg.train_config(ct),
            )?;
            let (ckpt, metrics) = (dir.checkpoint(ct, arch), dir.metrics(ct, arch));
            create_parent(&ckpt)?;
            outcome.checkpoint.save(&ckpt)?;
            write_metrics_csv(create(&metrics)?, &outcome.metrics).map_err(|e| CtrError::io(&metrics, e))?;
            artifacts.push(ckpt.clone());
            artifacts.push(metrics.clone());
            out.push(TrainSummary {
                content_type: ct,
                architecture: arch,
                checkpoint: ckpt,
                metrics_csv: metrics,
                metrics: outcome.metrics,
                train_examples: data.train.len(),
            });
        }
    }
    update_manifest(cfg, &[cfg.logs_path()], &artifacts)?;
    Ok(out)
}

/// Scores the test day with every available checkpoint and writes the report tables.
pub fn cmd_evaluate(cfg: &RunConfig, models: &[Architecture]) -> Result<Vec<EvalReport>, CtrError> {
    let events = load_events(cfg)?;
    let dir = RunDir::new(cfg);
    let mut reports = Vec::new();
    for &ct in &cfg.content_types {
        let set = build_examples(&events, ct, &[cfg.split.test_date]);
        if set.is_empty() {
            return Err(DatasetError::EmptyTestSlice { content_type: ct, date: cfg.split.test_date }.into());
        }
        let all: Vec<usize> = (0..set.len()).collect();
        let labels: Vec<f64> = set.examples.iter().map(|e| if e.label { 1.0 } else { 0.0 }).collect();
        let ids: Vec<&str> = set.examples.iter().map(|e| set.content_id(e)).collect();
        for &arch in models {
            let path = dir.checkpoint(ct, arch);
            if !path.exists() {
                log::warn!("no checkpoint at {}; skipping", path.display());
                continue;
            }
            let ckpt = Checkpoint::load(&path)?;
            if ckpt.content_type() != ct || ckpt.config().architecture != arch {
                return Err(CtrError::Data(format!("{} holds a {} {} model", path.display(), ckpt.content_type(), ckpt.config().architecture)));
            }
            let encoded = EncodedExamples::encode(ckpt.encoder(), &set, &all)?;
            let probs = ckpt.predict(&encoded)?;
            reports.push(EvalReport::compute(arch.as_str(), &cfg.country, ct, &probs, &labels, &ids)?);
        }
    }
    if reports.is_empty() {
        return Err(CtrError::Data("no checkpoints found; run `train` first".into()));
    }
    let artifacts = write_eval_outputs(&dir, &reports)?;
    update_manifest(cfg, &[cfg.logs_path()], &artifacts)?;
    Ok(reports)
}

fn write_eval_outputs(dir: &RunDir, reports: &[EvalReport]) -> Result<Vec<PathBuf>, CtrError> {
    let paths = [
        dir.eval("auc_table.csv"),
        dir.eval("rmse_table.csv"),
        dir.eval("per_content_rmse.csv"),
        dir.eval("tables.txt"),
        dir.eval("reports.json"),
    ];
    fn io(p: &Path) -> impl Fn(std::io::Error) -> CtrError + '_ {
        move |e| CtrError::io(p, e)
    }
    write_table_csv(create(&paths[0])?, reports, Metric::Auc).map_err(io(&paths[0]))?;
    write_table_csv(create(&paths[1])?, reports, Metric::Rmse).map_err(io(&paths[1]))?;
    write_per_content_csv(create(&paths[2])?, reports).map_err(io(&paths[2]))?;
    create_parent(&paths[3])?;
    fs::write(&paths[3], render_text(reports)).map_err(io(&paths[3]))?;
    let json = serde_json::to_string_pretty(reports).expect("reports serialize");
    fs::write(&paths[4], json + "\n").map_err(io(&paths[4]))?;
    Ok(paths.to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub content_id: String,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub user_id: String,
    pub content_type: ContentType,
    pub model: Architecture,
    pub generated_at: NaiveDate,
    pub items: Vec<Recommendation>,
}

/// Top-`k` contents for one user as of the latest day in the logs.
pub fn cmd_recommend(
    cfg: &RunConfig,
    arch: Architecture,
    content_type: ContentType,
    user_id: &str,
    k: i64,
) -> Result<RecommendationList, CtrError> {
    if k <= 0 {
        return Err(CtrError::Config(format!("--k must be positive, got {k}")));
    }
    let events = load_events(cfg)?;
    let date = events.iter().map(|e| e.date()).max().ok_or_else(|| CtrError::Data("event log is empty".into()))?;
    let ckpt = Checkpoint::load(&RunDir::new(cfg).checkpoint(content_type, arch))?;
    let users = ckpt.encoder().vocabs().get(crate::dataset::fields::USER_ID);
    if users.is_some_and(|v| v.index_of(user_id) == OOV_INDEX) {
        log::warn!("user `{user_id}` is not in the training vocabulary; scoring through the OOV embedding");
    }
    let set = candidate_rows(&events, content_type, user_id, date)
        .ok_or_else(|| CtrError::Data(format!("no {content_type} content in the logs")))?;
    let all: Vec<usize> = (0..set.len()).collect();
    let probs = ckpt.predict(&EncodedExamples::encode(ckpt.encoder(), &set, &all)?)?;
    let mut items: Vec<Recommendation> = set
        .contents
        .iter()
        .zip(probs)
        .map(|(c, p)| Recommendation { content_id: c.clone(), probability: p })
        .collect();
    items.sort_by(|a, b| b.probability.total_cmp(&a.probability).then_with(|| a.content_id.cmp(&b.content_id)));
    items.truncate(k as usize);
    Ok(RecommendationList { user_id: user_id.to_string(), content_type, model: arch, generated_at: date, items })
}

/// Re-renders the evaluation tables and writes a per-day activity summary of the logs.
pub fn cmd_report(cfg: &RunConfig) -> Result<String, CtrError> {
    let dir = RunDir::new(cfg);
    let path = dir.eval("reports.json");
    let bytes = fs::read(&path).map_err(|e| CtrError::Data(format!("{}: {e} (run `evaluate` first)", path.display())))?;
    let reports: Vec<EvalReport> = serde_json::from_slice(&bytes).map_err(|e| CtrError::Data(format!("{}: {e}", path.display())))?;
    let mut artifacts = write_eval_outputs(&dir, &reports)?;
    let events = load_events(cfg)?;
    let activity = dir.report("daily_activity.csv");
    write_daily_activity(create(&activity)?, &events).map_err(|e| CtrError::io(&activity, e))?;
    artifacts.push(activity);
    update_manifest(cfg, &[cfg.logs_path()], &artifacts)?;
    Ok(render_text(&reports))
}

/// `date,active_users,<clicks per content type>` for every day with events.
pub fn write_daily_activity<W: std::io::Write>(writer: W, events: &[InteractionEvent]) -> std::io::Result<()> {
    let mut days: BTreeMap<NaiveDate, (BTreeSet<&str>, [usize; 4])> = BTreeMap::new();
    for e in events {
        let d = days.entry(e.date()).or_default();
        d.0.insert(&e.user_id);
        let i = ContentType::ALL.iter().position(|&t| t == e.content_type).expect("known type");
        d.1[i] += 1;
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string(), "active_users".into()];
    header.extend(ContentType::ALL.iter().map(|t| format!("{}_clicks", t.as_str())));
    w.write_record(&header)?;
    for (date, (users, clicks)) in days {
        let mut row = vec![date.to_string(), users.len().to_string()];
        row.extend(clicks.iter().map(|c| c.to_string()));
        w.write_record(&row)?;
    }
    w.flush()
}
