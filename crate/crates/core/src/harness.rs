//! Leave-emitters-out cross-validation, epoch selection, PCA baseline and
//! cluster-count sweeps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::{make_split, Dataset, Split, SplitSpec};
use crate::detector::{fit_detector, ClusterDetector};
use crate::error::{Error, Result};
use crate::metrics::{config_digest, f1_binary, nmi, roc_auc, EvalReport};
use crate::modality::{InputFormat, InputPipeline, DEFAULT_GRID};
use crate::nn::{count_flops, count_params, ExtractorKind, ExtractorSpec, FeatureExtractor};
use crate::numerics::{svd_topk, Matrix, RngState};
use crate::ssl::{self, Approach, CurvePoint, TrainConfig, TrainData};

pub const TRAIN_FRACTION: f64 = 0.8;
pub const SWEEP_COUNTS: [usize; 7] = [10, 40, 80, 120, 160, 200, 240];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Sm,
    Dm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Iq,
    Constellation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub scenario: Scenario,
    pub folds: Vec<SplitSpec>,
    pub dmm_clusters: usize,
    pub feature_size: usize,
}

impl Protocol {
    /// One fold per emitter, each held out in turn.
    pub fn same_message(ds: &Dataset) -> Result<Self> {
        let emitters = ds.emitters();
        if emitters.len() < 6 {
            return Err(Error::validation(format!(
                "same-message protocol needs at least 6 emitters, dataset has {}",
                emitters.len()
            )));
        }
        let folds = emitters
            .iter()
            .enumerate()
            .map(|(k, &e)| SplitSpec {
                train_fraction_per_day: TRAIN_FRACTION,
                unknown_emitters: vec![e],
                fold_id: k,
            })
            .collect();
        Ok(Protocol {
            scenario: Scenario::Sm,
            folds,
            dmm_clusters: 80,
            feature_size: 20,
        })
    }

    /// Five folds; fold `k` holds out positions `2k` and `2k + 1` of a
    /// seed-shuffled emitter order.
    pub fn different_message(ds: &Dataset, seed: u64) -> Result<Self> {
        let mut emitters = ds.emitters();
        if emitters.len() < 10 {
            return Err(Error::validation(format!(
                "different-message protocol needs at least 10 emitters, dataset has {}",
                emitters.len()
            )));
        }
        RngState::new(seed).derive(0xF01D).shuffle(&mut emitters);
        let folds = (0..5)
            .map(|k| SplitSpec {
                train_fraction_per_day: TRAIN_FRACTION,
                unknown_emitters: vec![emitters[2 * k], emitters[2 * k + 1]],
                fold_id: k,
            })
            .collect();
        Ok(Protocol {
            scenario: Scenario::Dm,
            folds,
            dmm_clusters: 200,
            feature_size: 20,
        })
    }

    pub fn for_scenario(scenario: Scenario, ds: &Dataset, seed: u64) -> Result<Self> {
        match scenario {
            Scenario::Sm => Self::same_message(ds),
            Scenario::Dm => Self::different_message(ds, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub modality: Modality,
    pub extractor: ExtractorKind,
    pub approach: Approach,
    /// Adds the SVD-initialized linear bypass.
    pub svd_init: bool,
    /// KAN grid intervals; defaults to 10 on I/Q and 6 on constellations.
    pub kan_grid: Option<usize>,
    pub grid: usize,
    pub tail_mass: f64,
    pub train: TrainConfig,
}

impl PipelineConfig {
    pub fn new(modality: Modality, extractor: ExtractorKind, approach: Approach) -> Self {
        PipelineConfig {
            modality,
            extractor,
            approach,
            svd_init: false,
            kan_grid: None,
            grid: DEFAULT_GRID,
            tail_mass: crate::detector::DEFAULT_TAIL_MASS,
            train: TrainConfig {
                approach,
                ..TrainConfig::default()
            },
        }
    }

    pub fn pca(modality: Modality) -> Self {
        Self::new(modality, ExtractorKind::Pca, Approach::None)
    }

    pub fn input_pipeline(&self, trace_len: usize) -> Result<InputPipeline> {
        let format = match (self.modality, self.extractor) {
            (Modality::Iq, ExtractorKind::Cnn1d) => InputFormat::IqChannels,
            (Modality::Iq, ExtractorKind::Kan | ExtractorKind::Pca) => InputFormat::IqFlat,
            (Modality::Constellation, ExtractorKind::Cnn2d) => InputFormat::Grid,
            (Modality::Constellation, ExtractorKind::Kan | ExtractorKind::Pca) => InputFormat::GridScaled,
            (m, e) => {
                return Err(Error::validation(format!(
                    "extractor {} does not apply to modality {m:?}",
                    e.name()
                )))
            }
        };
        Ok(InputPipeline::new(format, trace_len, self.grid))
    }

    pub fn kan_grid(&self) -> usize {
        self.kan_grid.unwrap_or(match self.modality {
            Modality::Iq => 10,
            Modality::Constellation => 6,
        })
    }

    pub fn extractor_spec(&self, input: &InputPipeline, feature_size: usize) -> Result<ExtractorSpec> {
        let spec = match self.extractor {
            ExtractorKind::Cnn1d => ExtractorSpec::cnn1d(input.trace_len, feature_size)?,
            ExtractorKind::Cnn2d => ExtractorSpec::cnn2d(input.grid, feature_size)?,
            ExtractorKind::Kan => {
                ExtractorSpec::kan(input.shape().iter().product(), feature_size, self.kan_grid())?
            }
            ExtractorKind::Pca => return Ok(ExtractorSpec::pca(input.shape(), feature_size)),
        };
        Ok(if self.svd_init { spec.with_bypass() } else { spec })
    }

    pub fn modality_name(&self) -> &'static str {
        match self.modality {
            Modality::Iq => "iq",
            Modality::Constellation => "constellation",
        }
    }

    pub fn approach_name(&self) -> String {
        if self.extractor == ExtractorKind::Pca {
            return "pca".into();
        }
        let base = self.approach.name();
        if self.svd_init {
            format!("{base}+svd")
        } else {
            base.into()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.extractor == ExtractorKind::Pca && self.approach != Approach::None {
            return Err(Error::validation("the PCA baseline is not trained"));
        }
        if self.extractor != ExtractorKind::Pca && self.approach == Approach::None {
            return Err(Error::validation("trainable extractors need a training approach"));
        }
        if !(self.tail_mass > 0.0 && self.tail_mass < 1.0) {
            return Err(Error::validation("tail mass must lie in (0, 1)"));
        }
        let mut t = self.train.clone();
        t.approach = self.approach;
        t.validate()
    }
}

/// A fold's train/test material after splitting and input preparation.
pub struct FoldData {
    pub split: Split,
    pub train: TrainData,
    pub test_inputs: Vec<Vec<f64>>,
    pub test_emitters: Vec<i32>,
}

pub fn prepare_fold(ds: &Dataset, spec: &SplitSpec, input: InputPipeline) -> Result<FoldData> {
    let split = make_split(ds, spec)?;
    let train_traces = split.train.iter().map(|&k| ds.traces[k].clone()).collect();
    let train = TrainData::new(input, train_traces)?;
    let test_inputs = split
        .test
        .iter()
        .map(|&k| input.prepare(&ds.traces[k]))
        .collect::<Result<Vec<_>>>()?;
    let test_emitters = split.test.iter().map(|&k| ds.traces[k].emitter_id).collect();
    Ok(FoldData {
        split,
        train,
        test_inputs,
        test_emitters,
    })
}

fn as_matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    let p = rows.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(rows.len() * p);
    for r in rows {
        data.extend_from_slice(r);
    }
    Matrix::from_vec(rows.len(), p, data)
}

/// Builds the fold's extractor; the SVD bypass is fitted on the fold's
/// training inputs only.
pub fn build_extractor(cfg: &PipelineConfig, feature_size: usize, train: &TrainData, rng: &mut RngState) -> Result<FeatureExtractor> {
    let spec = cfg.extractor_spec(&train.pipeline, feature_size)?;
    let needs_svd = spec.bypass;
    let mut model = FeatureExtractor::new(spec, rng);
    if needs_svd {
        let svd = svd_topk(&as_matrix(&train.inputs)?, feature_size)?;
        model.set_bypass_from_svd(&svd)?;
    }
    Ok(model)
}

/// Fits a detector on train embeddings and scores the test embeddings.
pub struct Evaluation {
    pub roc_auc: f64,
    pub nmi: f64,
    pub f1: f64,
    pub detector: ClusterDetector,
    pub scores: Vec<f64>,
}

pub fn evaluate_features(
    train_features: &Matrix,
    test_features: &Matrix,
    labels: &[u8],
    test_emitters: &[i32],
    clusters: usize,
    tail_mass: f64,
    rng: &mut RngState,
) -> Result<Evaluation> {
    if clusters > train_features.rows() {
        return Err(Error::validation(format!(
            "{clusters} clusters requested for {} training samples",
            train_features.rows()
        )));
    }
    let detector = fit_detector(train_features, clusters, rng)?.with_tail_mass(tail_mass)?;
    let (decisions, scores) = detector.classify_batch(test_features)?;
    let pred: Vec<u8> = decisions.iter().map(|d| d.label).collect();
    let assigned: Vec<usize> = decisions.iter().map(|d| d.cluster).collect();
    Ok(Evaluation {
        roc_auc: roc_auc(&scores, labels)?,
        nmi: nmi(&assigned, test_emitters)?,
        f1: f1_binary(&pred, labels)?,
        detector,
        scores,
    })
}

/// The trainer settings a fold actually uses: deep clustering forms as many
/// pseudo-classes as the detector has clusters, and same-message raw I/Q
/// views are not rotated.
pub fn fold_train_config(protocol: &Protocol, cfg: &PipelineConfig) -> TrainConfig {
    let mut t = cfg.train.clone();
    t.approach = cfg.approach;
    t.dc_clusters = protocol.dmm_clusters;
    if protocol.scenario == Scenario::Sm && cfg.modality == Modality::Iq {
        t.rotation_set = vec![0.0];
    }
    t
}

const EMBED_BATCH: usize = 256;
const DETECTOR_TAG: u64 = 0xD37;
const TRAIN_TAG: u64 = 0x7A1;
const INIT_TAG: u64 = 0x1417;

/// Runs every fold; returns one report per fold per evaluation epoch, ordered
/// by fold then epoch.
pub fn run_protocol(protocol: &Protocol, ds: &Dataset, cfg: &PipelineConfig, seed: u64) -> Result<Vec<EvalReport>> {
    let mut all = Vec::new();
    for spec in &protocol.folds {
        all.extend(run_fold(protocol, ds, cfg, spec, seed)?);
    }
    Ok(all)
}

pub fn run_fold(protocol: &Protocol, ds: &Dataset, cfg: &PipelineConfig, spec: &SplitSpec, seed: u64) -> Result<Vec<EvalReport>> {
    Ok(run_fold_observed(protocol, ds, cfg, spec, seed, &mut |_, _, _| Ok(()))?.reports)
}

pub struct FoldRun {
    pub reports: Vec<EvalReport>,
    pub curve: Vec<CurvePoint>,
}

/// Signature of a per-checkpoint observer: epoch, frozen extractor and its
/// evaluation.
pub type FoldObserver<'a> = &'a mut dyn FnMut(usize, &FeatureExtractor, &Evaluation) -> Result<()>;

/// `run_fold` that also hands every evaluation to `observer` and returns the
/// training curve.
pub fn run_fold_observed(
    protocol: &Protocol,
    ds: &Dataset,
    cfg: &PipelineConfig,
    spec: &SplitSpec,
    seed: u64,
    observer: FoldObserver,
) -> Result<FoldRun> {
    cfg.validate()?;
    let train_cfg = fold_train_config(protocol, cfg);
    let digest = config_digest(&(protocol, cfg, seed))?;
    let input = cfg.input_pipeline(ds.trace_len)?;
    let fold = prepare_fold(ds, spec, input)?;
    let fold_rng = RngState::new(seed).derive(spec.fold_id as u64);
    let mut model = build_extractor(cfg, protocol.feature_size, &fold.train, &mut fold_rng.derive(INIT_TAG))?;
    let pc = count_params(&model.spec);
    let flops = count_flops(&model.spec);
    let test_rows: Vec<&[f64]> = fold.test_inputs.iter().map(|v| v.as_slice()).collect();

    let mut reports = Vec::new();
    let mut on_checkpoint = |epoch: usize, m: &FeatureExtractor| -> Result<()> {
        let train_f = fold.train.embed(m, EMBED_BATCH)?;
        let test_f = m.embed(&test_rows, EMBED_BATCH)?;
        // the same detector seed at every epoch keeps a frozen extractor's
        // metrics identical across epochs
        let ev = evaluate_features(
            &train_f,
            &test_f,
            &fold.split.labels,
            &fold.test_emitters,
            protocol.dmm_clusters,
            cfg.tail_mass,
            &mut fold_rng.derive(DETECTOR_TAG),
        )?;
        reports.push(EvalReport {
            fold: spec.fold_id,
            epoch,
            approach: cfg.approach_name(),
            extractor: cfg.extractor.name().into(),
            modality: cfg.modality_name().into(),
            roc_auc: 100.0 * ev.roc_auc,
            nmi: 100.0 * ev.nmi,
            f1: 100.0 * ev.f1,
            params: pc.total,
            flops,
            seed,
            config_digest: digest.clone(),
        });
        observer(epoch, m, &ev)
    };
    let curve = ssl::train(&mut model, &fold.train, &train_cfg, &mut fold_rng.derive(TRAIN_TAG), &mut on_checkpoint)?;
    Ok(FoldRun { reports, curve })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single fold.
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Spread { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestEpoch {
    pub epoch: usize,
    pub folds: usize,
    pub roc_auc: Spread,
    pub nmi: Spread,
    pub f1: Spread,
}

/// Per-epoch aggregates, in ascending epoch order.
pub fn aggregate_epochs(reports: &[EvalReport]) -> Result<Vec<BestEpoch>> {
    if reports.is_empty() {
        return Err(Error::Aggregation("no reports".into()));
    }
    let folds: std::collections::BTreeSet<usize> = reports.iter().map(|r| r.fold).collect();
    let mut by_epoch: BTreeMap<usize, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        by_epoch.entry(r.epoch).or_default().push(r);
    }
    by_epoch
        .into_iter()
        .map(|(epoch, rs)| {
            let present: std::collections::BTreeSet<usize> = rs.iter().map(|r| r.fold).collect();
            if present != folds || rs.len() != folds.len() {
                return Err(Error::Aggregation(format!(
                    "epoch {epoch} has reports for folds {present:?}, expected each of {folds:?} once"
                )));
            }
            let col = |f: fn(&EvalReport) -> f64| Spread::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            Ok(BestEpoch {
                epoch,
                folds: rs.len(),
                roc_auc: col(|r| r.roc_auc),
                nmi: col(|r| r.nmi),
                f1: col(|r| r.f1),
            })
        })
        .collect()
}

/// The epoch with the highest mean ROC-AUC across folds; the earliest wins
/// ties.
pub fn select_best_epoch(reports: &[EvalReport]) -> Result<BestEpoch> {
    let mut best: Option<BestEpoch> = None;
    for e in aggregate_epochs(reports)? {
        if best.as_ref().is_none_or(|b| e.roc_auc.mean > b.roc_auc.mean) {
            best = Some(e);
        }
    }
    Ok(best.expect("aggregate_epochs returns at least one epoch"))
}

/// Fits PCA features once per fold and refits only the detector for every
/// cluster count. Returns `(count, reports)` in the given order.
pub fn run_cluster_sweep(
    protocol: &Protocol,
    ds: &Dataset,
    cfg: &PipelineConfig,
    counts: &[usize],
    seed: u64,
) -> Result<Vec<(usize, Vec<EvalReport>)>> {
    if cfg.extractor != ExtractorKind::Pca {
        return Err(Error::validation("cluster sweeps run on the PCA baseline"));
    }
    cfg.validate()?;
    let input = cfg.input_pipeline(ds.trace_len)?;
    let mut out: Vec<(usize, Vec<EvalReport>)> = counts.iter().map(|&c| (c, Vec::new())).collect();
    for spec in &protocol.folds {
        let fold = prepare_fold(ds, spec, input)?;
        let fold_rng = RngState::new(seed).derive(spec.fold_id as u64);
        let model = build_extractor(cfg, protocol.feature_size, &fold.train, &mut fold_rng.derive(INIT_TAG))?;
        let train_f = fold.train.embed(&model, EMBED_BATCH)?;
        let test_rows: Vec<&[f64]> = fold.test_inputs.iter().map(|v| v.as_slice()).collect();
        let test_f = model.embed(&test_rows, EMBED_BATCH)?;
        let pc = count_params(&model.spec);
        for (c, reports) in out.iter_mut() {
            let ev = evaluate_features(
                &train_f,
                &test_f,
                &fold.split.labels,
                &fold.test_emitters,
                *c,
                cfg.tail_mass,
                &mut fold_rng.derive(DETECTOR_TAG),
            )?;
            let mut p = protocol.clone();
            p.dmm_clusters = *c;
            reports.push(EvalReport {
                fold: spec.fold_id,
                epoch: 0,
                approach: cfg.approach_name(),
                extractor: cfg.extractor.name().into(),
                modality: cfg.modality_name().into(),
                roc_auc: 100.0 * ev.roc_auc,
                nmi: 100.0 * ev.nmi,
                f1: 100.0 * ev.f1,
                params: pc.total,
                flops: count_flops(&model.spec),
                seed,
                config_digest: config_digest(&(&p, cfg, seed))?,
            });
        }
    }
    Ok(out)
}

/// Summary row per pipeline at its selected epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub approach: String,
    pub extractor: String,
    pub modality: String,
    pub params: usize,
    pub flops: u64,
    pub best: BestEpoch,
}

pub fn table_row(reports: &[EvalReport]) -> Result<TableRow> {
    let best = select_best_epoch(reports)?;
    let r = &reports[0];
    Ok(TableRow {
        approach: r.approach.clone(),
        extractor: r.extractor.clone(),
        modality: r.modality.clone(),
        params: r.params,
        flops: r.flops,
        best,
    })
}

pub const TABLE_HEADER: &str =
    "approach,extractor,modality,params,flops,epoch,roc_auc,roc_auc_std,nmi,nmi_std,f1,f1_std";

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut s = String::from(TABLE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            r.approach,
            r.extractor,
            r.modality,
            r.params,
            r.flops,
            r.best.epoch,
            r.best.roc_auc.mean,
            r.best.roc_auc.std,
            r.best.nmi.mean,
            r.best.nmi.std,
            r.best.f1.mean,
            r.best.f1.std
        ));
    }
    s
}
