mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use ued_core::dataio::{read_dataset, write_dataset, Dataset};
use ued_core::detector::save_detector;
use ued_core::harness::{
    aggregate_epochs, run_cluster_sweep, run_fold, run_fold_observed, select_best_epoch, table_csv, table_row,
    BestEpoch, TableRow,
};
use ued_core::interpret::{extractor_fn, kan_node_importance, kan_spline_export, lime_fit, spline_csv};
use ued_core::metrics::{reports_to_csv, EvalReport};
use ued_core::nn::{load_extractor, save_extractor, ExtractorKind};
use ued_core::numerics::RngState;
use ued_core::ssl::curve_csv;
use ued_core::synth::synth_dataset;
use ued_core::{Error, Result};

use config::{Config, Overrides, SEED_ENV};

#[derive(Parser)]
#[command(name = "ued", version, about = "Zero-shot unknown emitter detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file
    Synth(Overrides),
    /// Train and evaluate one pipeline on one fold
    Train(Overrides),
    /// Run the full leave-emitters-out protocol
    Crossval(Overrides),
    /// Sweep detector cluster counts on the PCA baseline
    Sweep(Overrides),
    /// LIME and KAN exports for a trained extractor
    Interpret(Overrides),
    /// Aggregate result directories into tables and plot data
    Report(Overrides),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let resolve = |ov: &Overrides| config::load(ov, env_seed.as_deref());
    match cmd {
        Command::Synth(ov) => synth(&resolve(&ov)?),
        Command::Train(ov) => train(&resolve(&ov)?),
        Command::Crossval(ov) => crossval(&resolve(&ov)?),
        Command::Sweep(ov) => sweep(&resolve(&ov)?),
        Command::Interpret(ov) => interpret(&resolve(&ov)?),
        Command::Report(ov) => report(&resolve(&ov)?),
    }
}

/// Writes through a sibling temporary file so readers never see a partial
/// file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_name(path);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_name(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn out_dir(cfg: &Config) -> Result<PathBuf> {
    let dir = cfg.out_path()?.to_path_buf();
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_data(cfg: &Config) -> Result<Dataset> {
    read_dataset(cfg.data_path()?)
}

fn synth(cfg: &Config) -> Result<()> {
    let out = cfg.out_path()?;
    let sc = cfg.scenario_config();
    let ds = synth_dataset(&sc, cfg.seed())?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = tmp_name(out);
    write_dataset(&tmp, &ds)?;
    std::fs::rename(&tmp, out)?;
    println!("wrote {} traces from {} emitters to {}", ds.len(), sc.n_emitters, out.display());
    Ok(())
}

fn train(cfg: &Config) -> Result<()> {
    let ds = load_data(cfg)?;
    let protocol = cfg.protocol(&ds)?;
    let pipeline = cfg.pipeline();
    let spec = protocol
        .folds
        .iter()
        .find(|f| f.fold_id == cfg.fold)
        .ok_or_else(|| Error::Validation(format!("fold {} is not part of the protocol", cfg.fold)))?
        .clone();
    let dir = out_dir(cfg)?;
    let ckpt = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt)?;
    let last = pipeline.train.eval_epochs().last().copied().unwrap_or(0);

    let mut observer = |epoch: usize, model: &ued_core::nn::FeatureExtractor, ev: &ued_core::harness::Evaluation| {
        save_extractor(&ckpt.join(format!("extractor_e{epoch:03}.bin")), model)?;
        save_detector(&ckpt.join(format!("detector_e{epoch:03}.bin")), &ev.detector)?;
        if epoch == last {
            save_extractor(&dir.join("extractor.bin"), model)?;
            save_detector(&dir.join("detector.bin"), &ev.detector)?;
            let mut s = String::from("index,score\n");
            for (k, v) in ev.scores.iter().enumerate() {
                s.push_str(&format!("{k},{v:e}\n"));
            }
            write_atomic(&dir.join("scores.csv"), s.as_bytes())?;
        }
        Ok(())
    };
    let run = run_fold_observed(&protocol, &ds, &pipeline, &spec, cfg.seed(), &mut observer)?;
    write_json(&dir.join("config.json"), cfg)?;
    write_atomic(&dir.join("curve.csv"), curve_csv(&run.curve).as_bytes())?;
    write_atomic(&dir.join("reports.csv"), reports_to_csv(&run.reports).as_bytes())?;
    write_json(&dir.join("reports.json"), &run.reports)?;
    if let Some(r) = run.reports.last() {
        println!(
            "fold {} epoch {}: roc_auc {:.2} nmi {:.2} f1 {:.2}",
            r.fold, r.epoch, r.roc_auc, r.nmi, r.f1
        );
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Summary {
    best: BestEpoch,
    epochs: Vec<BestEpoch>,
    row: TableRow,
}

fn summarize(reports: &[EvalReport]) -> Result<Summary> {
    Ok(Summary {
        best: select_best_epoch(reports)?,
        epochs: aggregate_epochs(reports)?,
        row: table_row(reports)?,
    })
}

fn crossval(cfg: &Config) -> Result<()> {
    let ds = load_data(cfg)?;
    let protocol = cfg.protocol(&ds)?;
    let pipeline = cfg.pipeline();
    pipeline.validate()?;
    let dir = out_dir(cfg)?;
    let folds_dir = dir.join("folds");
    std::fs::create_dir_all(&folds_dir)?;
    write_json(&dir.join("config.json"), cfg)?;

    let mut all = Vec::new();
    for spec in &protocol.folds {
        let reports = run_fold(&protocol, &ds, &pipeline, spec, cfg.seed())?;
        write_atomic(
            &folds_dir.join(format!("fold_{}.csv", spec.fold_id)),
            reports_to_csv(&reports).as_bytes(),
        )?;
        eprintln!("fold {} done", spec.fold_id);
        all.extend(reports);
    }
    let summary = summarize(&all)?;
    write_atomic(&dir.join("reports.csv"), reports_to_csv(&all).as_bytes())?;
    write_json(&dir.join("reports.json"), &all)?;
    write_atomic(&dir.join("table.csv"), table_csv(std::slice::from_ref(&summary.row)).as_bytes())?;
    write_json(&dir.join("summary.json"), &summary)?;
    let b = &summary.best;
    println!(
        "{} {} {}: epoch {} roc_auc {:.2} +- {:.2} nmi {:.2} +- {:.2} f1 {:.2} +- {:.2}",
        summary.row.approach,
        summary.row.extractor,
        summary.row.modality,
        b.epoch,
        b.roc_auc.mean,
        b.roc_auc.std,
        b.nmi.mean,
        b.nmi.std,
        b.f1.mean,
        b.f1.std
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SweepGroup {
    clusters: usize,
    reports: Vec<EvalReport>,
}

const SWEEP_HEADER: &str = "clusters,roc_auc,roc_auc_std,nmi,nmi_std,f1,f1_std";

fn sweep_line(clusters: usize, b: &BestEpoch) -> String {
    format!(
        "{clusters},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
        b.roc_auc.mean, b.roc_auc.std, b.nmi.mean, b.nmi.std, b.f1.mean, b.f1.std
    )
}

fn sweep(cfg: &Config) -> Result<()> {
    let ds = load_data(cfg)?;
    let protocol = cfg.protocol(&ds)?;
    let pipeline = cfg.pipeline();
    if cfg.sweep_counts.is_empty() {
        return Err(Error::Validation("no cluster counts to sweep".into()));
    }
    let dir = out_dir(cfg)?;
    let groups = run_cluster_sweep(&protocol, &ds, &pipeline, &cfg.sweep_counts, cfg.seed())?;
    let mut csv = format!("{SWEEP_HEADER}\n");
    for (c, reports) in &groups {
        let b = select_best_epoch(reports)?;
        csv.push_str(&sweep_line(*c, &b));
        csv.push('\n');
    }
    let groups: Vec<SweepGroup> = groups
        .into_iter()
        .map(|(clusters, reports)| SweepGroup { clusters, reports })
        .collect();
    write_json(&dir.join("config.json"), cfg)?;
    write_atomic(&dir.join("sweep.csv"), csv.as_bytes())?;
    write_json(&dir.join("sweep.json"), &groups)?;
    print!("{csv}");
    Ok(())
}

fn interpret(cfg: &Config) -> Result<()> {
    let ds = load_data(cfg)?;
    let model_path = cfg
        .model
        .as_deref()
        .ok_or_else(|| Error::Validation("no extractor checkpoint given (--model)".into()))?;
    let model = load_extractor(model_path)?;
    let mut pipeline = cfg.pipeline();
    pipeline.extractor = model.spec.kind;
    let input = pipeline.input_pipeline(ds.trace_len)?;
    if input.shape() != model.spec.input_shape {
        return Err(Error::Validation(format!(
            "checkpoint expects input shape {:?}, the configured modality gives {:?}",
            model.spec.input_shape,
            input.shape()
        )));
    }
    let trace = ds
        .traces
        .get(cfg.sample)
        .ok_or_else(|| Error::Validation(format!("sample {} out of range 0..{}", cfg.sample, ds.len())))?;
    let x = input.prepare(trace)?;
    let dir = out_dir(cfg)?;

    let n = cfg.lime_perturbations.unwrap_or(2 * x.len());
    let mut rng = RngState::new(cfg.seed()).derive(0x11E);
    let lime = lime_fit(extractor_fn(&model), &x, n, cfg.lime_scale, &mut rng)?;
    write_atomic(&dir.join("lime.csv"), lime.to_csv().as_bytes())?;
    println!("lime: {} outputs x {} inputs from {n} perturbations", lime.w.rows(), lime.w.cols());

    if model.spec.kind == ExtractorKind::Kan {
        let reference = ds
            .traces
            .iter()
            .take(256)
            .map(|t| input.prepare(t))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<&[f64]> = reference.iter().map(|v| v.as_slice()).collect();
        let imp = kan_node_importance(&model, &rows)?;
        write_atomic(&dir.join("importance.csv"), imp.to_csv().as_bytes())?;
        let splines = dir.join("splines");
        std::fs::create_dir_all(&splines)?;
        let mut edges = String::from("input,output,importance\n");
        for (i, j, v) in imp.important_edges(0.0).into_iter().take(cfg.spline_edges) {
            edges.push_str(&format!("{i},{j},{v:e}\n"));
            let samples = kan_spline_export(&model, i, j, cfg.spline_points)?;
            write_atomic(&splines.join(format!("edge_{i}_{j}.csv")), spline_csv(&samples).as_bytes())?;
        }
        write_atomic(&dir.join("edges.csv"), edges.as_bytes())?;
        println!("kan: node importance over {} reference traces", rows.len());
    }
    Ok(())
}

const EPOCH_PLOT_HEADER: &str = "approach,extractor,modality,epoch,roc_auc,roc_auc_std,nmi,nmi_std,f1,f1_std";

fn report(cfg: &Config) -> Result<()> {
    if cfg.inputs.is_empty() {
        return Err(Error::Validation("no result directories given (--inputs)".into()));
    }
    let mut rows = Vec::new();
    let mut epochs = format!("{EPOCH_PLOT_HEADER}\n");
    let mut sweeps = format!("approach,extractor,modality,{SWEEP_HEADER}\n");
    for input in &cfg.inputs {
        let reports_path = input.join("reports.json");
        let sweep_path = input.join("sweep.json");
        if reports_path.exists() {
            let reports: Vec<EvalReport> = serde_json::from_slice(&std::fs::read(&reports_path)?)?;
            let row = table_row(&reports)?;
            for e in aggregate_epochs(&reports)? {
                epochs.push_str(&format!(
                    "{},{},{},{}\n",
                    row.approach,
                    row.extractor,
                    row.modality,
                    &sweep_line(e.epoch, &e)
                ));
            }
            rows.push(row);
        } else if sweep_path.exists() {
            let groups: Vec<SweepGroup> = serde_json::from_slice(&std::fs::read(&sweep_path)?)?;
            for g in &groups {
                let row = table_row(&g.reports)?;
                sweeps.push_str(&format!(
                    "{},{},{},{}\n",
                    row.approach,
                    row.extractor,
                    row.modality,
                    sweep_line(g.clusters, &row.best)
                ));
            }
        } else {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} holds neither reports.json nor sweep.json", input.display()),
            )));
        }
    }
    let dir = out_dir(cfg)?;
    let table = table_csv(&rows);
    write_atomic(&dir.join("table.csv"), table.as_bytes())?;
    write_json(&dir.join("table.json"), &rows)?;
    write_atomic(&dir.join("plot_epochs.csv"), epochs.as_bytes())?;
    write_atomic(&dir.join("plot_sweep.csv"), sweeps.as_bytes())?;
    print!("{table}");
    Ok(())
}
