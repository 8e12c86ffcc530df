//! Command implementations behind the `dynasparse` binary.
//!
//! A run is fully determined by its [`RunConfig`] (a JSON file plus command
//! line overrides). Every output embeds the format version, the SHA-256 of the
//! effective configuration, and the seed; outputs contain no timestamps or
//! paths, so identical inputs give byte-identical files.
//!
//! Output directories are staged next to their final location and renamed
//! into place once complete. An existing directory is an error unless
//! `force` is set, in which case it is replaced.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::make_env;
use crate::normalization::NormStats;
use crate::rollout::{self, Dataset, PolicyDescriptor, PolicyKind};
use crate::sparsity::{self, Block, ElementDurations, Embedding};
use crate::surrogate::{self, EvalResult, LossMode, TrainConfig};
use crate::{Error, Result};

mod csv;
mod verify;

pub use csv::{write_report_csvs, CSV_FILES};
pub use verify::{cmd_verify, CheckResult, Corruption, VerifyConfig, VerifyReport};

/// Version of every JSON/CSV output written by this module.
pub const OUTPUT_FORMAT_VERSION: u32 = 1;

pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const VERIFY_FILE: &str = "verify.json";

/// Noise policy settings. A missing seed means "use the run seed".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub beta: f64,
    pub scale: f64,
    pub seed: Option<u64>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            kind: PolicyKind::Colored,
            beta: 1.0,
            scale: 1.0,
            seed: None,
        }
    }
}

/// Settings for every command. Unset fields take the documented defaults.
///
/// ```json
/// {
///   "env": "tethered_ball",
///   "env_params": {"horizon": 500, "string_length": 0.3},
///   "episodes": 10,
///   "seed": 0,
///   "policy": {"kind": "colored", "beta": 1.0, "scale": 1.0},
///   "tau": 1e-12,
///   "timeseries_steps": 50,
///   "train": {"loss_mode": "state+sae", "epochs": 100},
///   "verify": {"samples": 1000}
/// }
/// ```
///
/// `train.seed` is always replaced by `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub env_params: BTreeMap<String, f64>,
    pub episodes: usize,
    pub seed: u64,
    pub policy: PolicyConfig,
    /// Zero threshold for dataset Jacobians.
    pub tau: f64,
    /// Steps written per `timeseries_ep<k>.csv`; all when unset.
    pub timeseries_steps: Option<usize>,
    pub train: TrainConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: "cartpole".into(),
            env_params: BTreeMap::new(),
            episodes: 10,
            seed: 0,
            policy: PolicyConfig::default(),
            tau: crate::TAU_ENV,
            timeseries_steps: None,
            train: TrainConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub env: Option<String>,
    pub episodes: Option<usize>,
    pub tau: Option<f64>,
    pub loss_mode: Option<LossMode>,
}

impl RunConfig {
    /// Parses a config file; an absent path gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_slice(&bytes).map_err(|e| Error::format(p, format!("invalid config: {e}")))
            }
        }
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(e) = &o.env {
            self.env = e.clone();
        }
        if let Some(n) = o.episodes {
            self.episodes = n;
        }
        if let Some(t) = o.tau {
            self.tau = t;
        }
        if let Some(m) = o.loss_mode {
            self.train.loss_mode = m;
        }
        self.train.seed = self.seed;
        self
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn policy_descriptor(&self) -> PolicyDescriptor {
        let p = &self.policy;
        PolicyDescriptor {
            kind: p.kind,
            beta: p.beta,
            scale: p.scale,
            seed: p.seed.unwrap_or(self.seed),
        }
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            format_version: OUTPUT_FORMAT_VERSION,
            config_hash: self.hash(),
            seed: self.seed,
        }
    }
}

/// Identification stamped on every output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    /// Comment line heading every CSV file.
    pub fn csv_comment(&self) -> String {
        format!(
            "# format_version={} config_hash={} seed={}\n",
            self.format_version, self.config_hash, self.seed
        )
    }
}

/// An output directory being filled in a staging location.
pub struct OutDir {
    staging: PathBuf,
    target: PathBuf,
    force: bool,
}

impl OutDir {
    pub fn create(target: impl AsRef<Path>, force: bool) -> Result<Self> {
        let target = target.as_ref().to_path_buf();
        if target.exists() && !force {
            return Err(Error::Parameter(format!(
                "output directory {} already exists (use --force to replace it)",
                target.display()
            )));
        }
        let name = target
            .file_name()
            .ok_or_else(|| Error::Parameter(format!("invalid output path {}", target.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(OutDir { staging, target, force })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.staging.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Moves the staged directory into place.
    pub fn commit(self) -> Result<PathBuf> {
        if self.target.exists() {
            if !self.force {
                return Err(Error::Parameter(format!(
                    "output directory {} appeared while writing",
                    self.target.display()
                )));
            }
            fs::remove_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        fs::rename(&self.staging, &self.target).map_err(|e| Error::io(&self.target, e))?;
        Ok(self.target.clone())
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        if self.staging.exists() {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

/// Collects a dataset per `cfg` into directory `out`.
pub fn cmd_collect(cfg: &RunConfig, out: &Path, force: bool) -> Result<Dataset> {
    if cfg.episodes == 0 {
        return Err(Error::Parameter("episodes must be at least 1".into()));
    }
    let env = make_env(&cfg.env, &cfg.env_params)?;
    let mut d = rollout::collect(&env, &cfg.policy_descriptor(), cfg.episodes, cfg.seed)?;
    d.manifest.config_hash = Some(cfg.hash());
    let dir = OutDir::create(out, force)?;
    rollout::save_dataset(&d, dir.path())?;
    dir.commit()?;
    Ok(d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub env: String,
    pub d_s: usize,
    pub d_a: usize,
    pub episodes: usize,
    pub samples: usize,
    pub horizon: usize,
    pub content_hash: String,
}

impl DatasetInfo {
    fn of(d: &Dataset) -> Self {
        DatasetInfo {
            env: d.manifest.env.clone(),
            d_s: d.d_s(),
            d_a: d.d_a(),
            episodes: d.episodes.len(),
            samples: d.num_samples(),
            horizon: d.manifest.horizon,
            content_hash: d.manifest.content_hash.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalZeroSummary {
    pub state_mask: Vec<Vec<bool>>,
    pub state_count: usize,
    pub state_total: usize,
    pub state_percent: f64,
    pub action_mask: Vec<Vec<bool>>,
    pub action_count: usize,
    pub action_total: usize,
    pub action_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    pub edges: Vec<f64>,
    pub state: Vec<usize>,
    pub action: Vec<usize>,
    pub combined: Vec<usize>,
    pub mean_state: f64,
    pub mean_action: f64,
    pub mean_combined: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSeries {
    pub episode: usize,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub combined: Vec<f64>,
}

/// Everything `analyze` computes; the CSVs are rendered from this alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub config: RunConfig,
    pub dataset: DatasetInfo,
    pub tau: f64,
    pub global_zeros: GlobalZeroSummary,
    pub zero_fraction_state: Vec<Vec<f64>>,
    pub zero_fraction_action: Vec<Vec<f64>>,
    pub histogram: HistogramSummary,
    pub timeseries: Vec<EpisodeSeries>,
    pub durations: Vec<ElementDurations>,
    /// Absent when the dataset has fewer than 3 samples.
    pub embedding: Option<Embedding>,
}

fn rows<T: Clone>(m: &ndarray::Array2<T>) -> Vec<Vec<T>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// All sparsity statistics of a dataset at threshold `cfg.tau`.
pub fn analyze(d: &Dataset, cfg: &RunConfig) -> Result<AnalysisReport> {
    let tau = cfg.tau;
    let g = sparsity::global_zero_mask(d, tau)?;
    let f = sparsity::zero_fraction_matrix(d, tau)?;
    let hs = sparsity::sparsity_histogram(d, tau, Block::State)?;
    let ha = sparsity::sparsity_histogram(d, tau, Block::Action)?;
    let hc = sparsity::sparsity_histogram(d, tau, Block::Combined)?;
    let timeseries = d
        .episodes
        .iter()
        .enumerate()
        .map(|(k, ep)| EpisodeSeries {
            episode: k,
            state: sparsity::sparsity_timeseries(ep, tau, Block::State),
            action: sparsity::sparsity_timeseries(ep, tau, Block::Action),
            combined: sparsity::sparsity_timeseries(ep, tau, Block::Combined),
        })
        .collect();
    let embedding = if d.num_samples() >= 3 {
        Some(sparsity::pca_embedding_2d(d, tau)?)
    } else {
        None
    };
    Ok(AnalysisReport {
        provenance: cfg.provenance(),
        config: cfg.clone(),
        dataset: DatasetInfo::of(d),
        tau,
        global_zeros: GlobalZeroSummary {
            state_mask: rows(&g.state.mask),
            state_count: g.state_count,
            state_total: g.state.mask.len(),
            state_percent: g.state_percent,
            action_mask: rows(&g.action.mask),
            action_count: g.action_count,
            action_total: g.action.mask.len(),
            action_percent: g.action_percent,
        },
        zero_fraction_state: rows(&f.state),
        zero_fraction_action: rows(&f.action),
        histogram: HistogramSummary {
            edges: hs.edges,
            state: hs.counts,
            action: ha.counts,
            combined: hc.counts,
            mean_state: hs.mean,
            mean_action: ha.mean,
            mean_combined: hc.mean,
        },
        timeseries,
        durations: sparsity::run_length_durations(d, tau),
        embedding,
    })
}

/// Loads the dataset at `dataset`, analyzes it, and writes `report.json`
/// plus the CSV tables into `out`.
pub fn cmd_analyze(cfg: &RunConfig, dataset: &Path, out: &Path, force: bool) -> Result<AnalysisReport> {
    let d = rollout::load_dataset(dataset)?;
    let report = analyze(&d, cfg)?;
    let dir = OutDir::create(out, force)?;
    dir.write_json(REPORT_FILE, &report)?;
    write_report_csvs(&report, dir.path(), report.config.timeseries_steps)?;
    dir.commit()?;
    Ok(report)
}

/// Re-renders the CSV tables of a stored `report.json`. `timeseries_steps`
/// overrides the stored setting.
pub fn cmd_report(report: &Path, out: &Path, force: bool, timeseries_steps: Option<usize>) -> Result<AnalysisReport> {
    let bytes = fs::read(report).map_err(|e| Error::io(report, e))?;
    let r: AnalysisReport =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(report, format!("invalid report: {e}")))?;
    if r.provenance.format_version != OUTPUT_FORMAT_VERSION {
        return Err(Error::format(
            report,
            format!("format version mismatch: {}", r.provenance.format_version),
        ));
    }
    let dir = OutDir::create(out, force)?;
    write_report_csvs(&r, dir.path(), timeseries_steps.or(r.config.timeseries_steps))?;
    dir.commit()?;
    Ok(r)
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub config: RunConfig,
    pub dataset: DatasetInfo,
    pub loss_mode: LossMode,
    pub num_params: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub norm_stats: NormStats,
    pub eval: EvalResult,
}

/// Trains a surrogate on the dataset at `dataset` and writes `metrics.json`,
/// `model.json` and `model.bin` into `out`.
pub fn cmd_train(cfg: &RunConfig, dataset: &Path, out: &Path, force: bool) -> Result<TrainMetrics> {
    let d = rollout::load_dataset(dataset)?;
    let run = surrogate::train(&d, &cfg.train)?;
    let metrics = TrainMetrics {
        provenance: cfg.provenance(),
        config: cfg.clone(),
        dataset: DatasetInfo::of(&d),
        loss_mode: cfg.train.loss_mode,
        num_params: run.model.num_params(),
        train_samples: run.train_samples,
        test_samples: run.test_samples,
        norm_stats: run.stats,
        eval: run.eval,
    };
    let dir = OutDir::create(out, force)?;
    dir.write_json(METRICS_FILE, &metrics)?;
    let p = cfg.provenance();
    surrogate::save_model_tagged(&run.model, dir.path(), &p.config_hash, p.seed)?;
    dir.commit()?;
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(env: &str) -> RunConfig {
        let mut c = RunConfig {
            env: env.into(),
            episodes: 2,
            ..Default::default()
        };
        c.env_params.insert("horizon".into(), 60.0);
        c.apply(&Overrides::default())
    }

    #[test]
    fn config_defaults_and_overrides() {
        let c = RunConfig::load(None).unwrap();
        assert_eq!(c.episodes, 10);
        assert_eq!(c.env, "cartpole");
        let o = Overrides {
            seed: Some(5),
            env: Some("bouncer".into()),
            loss_mode: Some(LossMode::Sae),
            ..Default::default()
        };
        let c2 = c.clone().apply(&o);
        assert_eq!((c2.seed, c2.train.seed, c2.env.as_str()), (5, 5, "bouncer"));
        assert_eq!(c2.train.loss_mode, LossMode::Sae);
        assert_ne!(c.hash(), c2.hash());
        assert_eq!(c2.hash(), c2.clone().hash());
        let parsed: std::result::Result<RunConfig, _> = serde_json::from_str(r#"{"episode": 3}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn out_dir_refuses_existing_without_force() {
        let tmp = tempfile::tempdir().unwrap();
        let target = tmp.path().join("run");
        let d = OutDir::create(&target, false).unwrap();
        d.write("a.txt", b"1").unwrap();
        d.commit().unwrap();
        assert!(OutDir::create(&target, false).is_err());
        let d = OutDir::create(&target, true).unwrap();
        d.write("b.txt", b"2").unwrap();
        d.commit().unwrap();
        assert!(!target.join("a.txt").exists());
        assert!(target.join("b.txt").exists());
        // an abandoned staging directory leaves nothing behind
        let d = OutDir::create(tmp.path().join("other"), false).unwrap();
        drop(d);
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
    }

    #[test]
    fn analyze_decoupled_pair() {
        let c = cfg("decoupled_pair");
        let env = make_env(&c.env, &c.env_params).unwrap();
        let d = rollout::collect(&env, &c.policy_descriptor(), 2, 0).unwrap();
        let r = analyze(&d, &c).unwrap();
        assert_eq!(r.global_zeros.state_count, 32);
        assert_eq!(r.global_zeros.state_percent, 50.0);
        assert_eq!(r.histogram.state.len(), 10);
        assert_eq!(r.timeseries.len(), 2);
        assert_eq!(r.durations.len(), 8 * 8 + 8 * 2);
        let json = serde_json::to_vec(&r).unwrap();
        let back: AnalysisReport = serde_json::from_slice(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn collect_rejects_bad_env() {
        let tmp = tempfile::tempdir().unwrap();
        let c = RunConfig {
            env: "pendulum".into(),
            ..Default::default()
        };
        let msg = cmd_collect(&c, &tmp.path().join("d"), false).unwrap_err().to_string();
        assert!(msg.contains("cartpole") && msg.contains("tethered_ball"), "{msg}");
        assert!(!tmp.path().join("d").exists());
    }
}
