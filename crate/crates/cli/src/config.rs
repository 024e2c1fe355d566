//! Run configuration: defaults, then the JSON document, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ued_core::harness::{Modality, PipelineConfig, Protocol, Scenario, SWEEP_COUNTS};
use ued_core::modality::{DEFAULT_GRID, DEFAULT_TRACE_LEN};
use ued_core::nn::ExtractorKind;
use ued_core::ssl::{Approach, TrainConfig};
use ued_core::synth::{MessageMode, Modulation, ScenarioConfig};
use ued_core::{Error, Result};

pub const SEED_ENV: &str = "UED_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulationName {
    Qpsk,
    Qam16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,

    pub scenario: Scenario,
    /// Detector clusters; the protocol default when absent.
    pub dmm_clusters: Option<usize>,
    pub feature_size: Option<usize>,
    /// Fold ids to run; all when absent.
    pub folds: Option<Vec<usize>>,
    /// Fold used by `train`.
    pub fold: usize,

    pub modality: Modality,
    pub extractor: ExtractorKind,
    /// `none` for PCA and `dc` otherwise when absent.
    pub approach: Option<Approach>,
    pub svd_init: bool,
    pub kan_grid: Option<usize>,
    pub grid: usize,
    pub tail_mass: f64,

    pub epochs: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub cl_temperature: f64,
    pub noise_std: f64,
    pub rotation_set: Vec<f64>,

    pub n_emitters: usize,
    pub n_days: usize,
    pub traces_per_day: usize,
    /// `null` disables the noise.
    pub snr_db: Option<f64>,
    pub modulation: ModulationName,
    pub trace_len: usize,

    pub sweep_counts: Vec<usize>,

    pub model: Option<PathBuf>,
    pub sample: usize,
    /// Twice the input size when absent.
    pub lime_perturbations: Option<usize>,
    pub lime_scale: f64,
    pub spline_points: usize,
    pub spline_edges: usize,

    pub inputs: Vec<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        let t = TrainConfig::default();
        Config {
            seed: None,
            data: None,
            out: None,
            scenario: Scenario::Sm,
            dmm_clusters: None,
            feature_size: None,
            folds: None,
            fold: 0,
            modality: Modality::Iq,
            extractor: ExtractorKind::Kan,
            approach: None,
            svd_init: false,
            kan_grid: None,
            grid: DEFAULT_GRID,
            tail_mass: ued_core::detector::DEFAULT_TAIL_MASS,
            epochs: t.epochs,
            eval_every: t.eval_every,
            batch_size: t.batch_size,
            lr: t.lr,
            cl_temperature: t.cl_temperature,
            noise_std: t.noise_std,
            rotation_set: t.rotation_set,
            n_emitters: 10,
            n_days: 1,
            traces_per_day: 400,
            snr_db: Some(25.0),
            modulation: ModulationName::Qpsk,
            trace_len: DEFAULT_TRACE_LEN,
            sweep_counts: SWEEP_COUNTS.to_vec(),
            model: None,
            sample: 0,
            lime_perturbations: None,
            lime_scale: 1e-3,
            spline_points: 101,
            spline_edges: 5,
            inputs: Vec::new(),
        }
    }
}

/// Parses a flag value with the same spelling the JSON document uses.
fn parse_serde<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Flags shared by every subcommand; each one overrides the config key of the
/// same name.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON configuration document
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Seed; falls back to the config, then UED_SEED, then 0
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset file
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output file (synth) or directory
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,

    /// sm or dm
    #[arg(long, value_parser = parse_serde::<Scenario>)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub dmm_clusters: Option<usize>,
    #[arg(long)]
    pub feature_size: Option<usize>,
    /// Comma separated fold ids
    #[arg(long, value_delimiter = ',')]
    pub folds: Option<Vec<usize>>,
    #[arg(long)]
    pub fold: Option<usize>,

    /// iq or constellation
    #[arg(long, value_parser = parse_serde::<Modality>)]
    pub modality: Option<Modality>,
    /// kan, cnn1d, cnn2d or pca
    #[arg(long, value_parser = parse_serde::<ExtractorKind>)]
    pub extractor: Option<ExtractorKind>,
    /// dc, ae, cl or none
    #[arg(long, value_parser = parse_serde::<Approach>)]
    pub approach: Option<Approach>,
    #[arg(long)]
    pub svd_init: Option<bool>,
    #[arg(long)]
    pub kan_grid: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub tail_mass: Option<f64>,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub cl_temperature: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Comma separated angles in radians
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub rotation_set: Option<Vec<f64>>,

    #[arg(long)]
    pub n_emitters: Option<usize>,
    #[arg(long)]
    pub n_days: Option<usize>,
    #[arg(long)]
    pub traces_per_day: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
    /// Synthesize without noise
    #[arg(long)]
    pub noiseless: bool,
    /// qpsk or qam16
    #[arg(long, value_parser = parse_serde::<ModulationName>)]
    pub modulation: Option<ModulationName>,
    #[arg(long)]
    pub trace_len: Option<usize>,

    /// Comma separated cluster counts
    #[arg(long, value_delimiter = ',')]
    pub sweep_counts: Option<Vec<usize>>,

    /// Extractor checkpoint
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset index of the trace to explain
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long)]
    pub lime_perturbations: Option<usize>,
    #[arg(long)]
    pub lime_scale: Option<f64>,
    #[arg(long)]
    pub spline_points: Option<usize>,
    /// Number of strongest KAN edges to export
    #[arg(long)]
    pub spline_edges: Option<usize>,

    /// Result directories to aggregate
    #[arg(long, num_args = 1..)]
    pub inputs: Option<Vec<PathBuf>>,
}

macro_rules! set {
    ($cfg:ident, $ov:ident, $($f:ident),* $(,)?) => {
        $(if let Some(v) = $ov.$f.clone() { $cfg.$f = v; })*
    };
}

macro_rules! set_opt {
    ($cfg:ident, $ov:ident, $($f:ident),* $(,)?) => {
        $(if let Some(v) = $ov.$f.clone() { $cfg.$f = Some(v); })*
    };
}

impl Overrides {
    pub fn apply(&self, cfg: &mut Config) {
        set!(cfg, self, scenario, fold, modality, extractor, svd_init, grid, tail_mass);
        set!(cfg, self, epochs, eval_every, batch_size, lr, cl_temperature, noise_std, rotation_set);
        set!(cfg, self, n_emitters, n_days, traces_per_day, modulation, trace_len);
        set!(cfg, self, sweep_counts, sample, lime_scale, spline_points, spline_edges, inputs);
        set_opt!(cfg, self, seed, data, out, dmm_clusters, feature_size, folds, approach, kan_grid);
        set_opt!(cfg, self, snr_db, model, lime_perturbations);
        if self.noiseless {
            cfg.snr_db = None;
        }
    }
}

/// Resolves the layered configuration. `env_seed` is the raw `UED_SEED` value.
pub fn load(ov: &Overrides, env_seed: Option<&str>) -> Result<Config> {
    let mut cfg = match &ov.config {
        Some(path) => read_config(path)?,
        None => Config::default(),
    };
    ov.apply(&mut cfg);
    if cfg.seed.is_none() {
        if let Some(raw) = env_seed {
            let seed = raw
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::Validation(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
            cfg.seed = Some(seed);
        }
    }
    Ok(cfg)
}

fn read_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

impl Config {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| Error::Validation("no dataset given (--data)".into()))
    }

    pub fn out_path(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| Error::Validation("no output given (--out)".into()))
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        let mode = match self.scenario {
            Scenario::Sm => MessageMode::SameMessages,
            Scenario::Dm => MessageMode::DifferentMessages,
        };
        let mut sc = ScenarioConfig::new(mode, self.n_emitters, self.n_days, self.traces_per_day, self.snr_db);
        sc.modulation = match self.modulation {
            ModulationName::Qpsk => Modulation::Qpsk,
            ModulationName::Qam16 => Modulation::Qam16,
        };
        sc.trace_len = self.trace_len;
        sc
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let approach = self.approach.unwrap_or(match self.extractor {
            ExtractorKind::Pca => Approach::None,
            _ => Approach::Dc,
        });
        let mut p = PipelineConfig::new(self.modality, self.extractor, approach);
        p.svd_init = self.svd_init;
        p.kan_grid = self.kan_grid;
        p.grid = self.grid;
        p.tail_mass = self.tail_mass;
        p.train = TrainConfig {
            approach,
            epochs: self.epochs,
            eval_every: self.eval_every,
            batch_size: self.batch_size,
            lr: self.lr,
            dc_clusters: p.train.dc_clusters,
            cl_temperature: self.cl_temperature,
            noise_std: self.noise_std,
            rotation_set: self.rotation_set.clone(),
        };
        p
    }

    /// The scenario protocol with size overrides and the fold selection
    /// applied.
    pub fn protocol(&self, ds: &ued_core::dataio::Dataset) -> Result<Protocol> {
        let mut p = Protocol::for_scenario(self.scenario, ds, self.seed())?;
        if let Some(c) = self.dmm_clusters {
            if c == 0 {
                return Err(Error::Validation("dmm_clusters must be positive".into()));
            }
            p.dmm_clusters = c;
        }
        if let Some(d) = self.feature_size {
            if d == 0 {
                return Err(Error::Validation("feature_size must be positive".into()));
            }
            p.feature_size = d;
        }
        if let Some(ids) = &self.folds {
            if ids.is_empty() {
                return Err(Error::Validation("empty fold selection".into()));
            }
            for &id in ids {
                if id >= p.folds.len() {
                    return Err(Error::Validation(format!("fold {id} out of range 0..{}", p.folds.len())));
                }
            }
            p.folds.retain(|f| ids.contains(&f.fold_id));
        }
        Ok(p)
    }
}
