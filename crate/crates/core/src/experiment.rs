//! The train / test / analyze / compare pipeline behind the command line.
//!
//! A training run writes everything into its output directory:
//!
//! ```text
//! config.toml          resolved configuration
//! train_log.jsonl      one JSON object per iteration
//! checkpoints/iter_NNNNN.nmrl
//! best.nmrl, final.nmrl
//! ```
//!
//! Every checkpoint carries the resolved configuration in its metadata, so
//! `test` and `analyze` need nothing but the checkpoint. Nothing written
//! depends on the clock or on the worker count.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{build_heatmaps, dissimilarity_summary, AnalysisError, CkaMatrix};
use crate::archive::{ArchiveError, TensorArchive};
use crate::autodiff::Array;
use crate::config::{resolve_output, ConfigError, RunConfig};
use crate::layers::{Network, PolicySpec};
use crate::meta::{meta_test, meta_test_tasks, meta_train, IterationLog, MetaError, MetaTestResult};
use crate::rng::SeedTree;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// Process exit status: 2 for configuration problems, 3 for numerical
    /// failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Meta(MetaError::NonFinite(_)) => 3,
            ExperimentError::Meta(MetaError::Contract(_) | MetaError::Layer(_)) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// A network together with the configuration it was trained under.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub spec: PolicySpec,
    pub theta: Network<Array>,
    pub metadata: std::collections::BTreeMap<String, String>,
}

pub fn checkpoint_archive(
    config: &RunConfig,
    theta: &Network<Array>,
    kind: &str,
    iteration: usize,
    post_return: f64,
) -> TensorArchive {
    let mut archive = TensorArchive::default();
    archive.metadata.insert("config".into(), config.to_toml());
    archive.metadata.insert("kind".into(), kind.into());
    archive.metadata.insert("iteration".into(), iteration.to_string());
    archive
        .metadata
        .insert("post_return".into(), format!("{post_return:?}"));
    archive.push_network(theta);
    archive
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ExperimentError> {
    let archive = TensorArchive::load(path)?;
    let text = archive
        .metadata
        .get("config")
        .ok_or_else(|| ArchiveError::Malformed("checkpoint has no embedded config".into()))?;
    let config = RunConfig::from_toml(text)?;
    let spec = config.policy_spec()?;
    let theta = archive.network(&spec)?;
    Ok(Checkpoint {
        config,
        spec,
        theta,
        metadata: archive.metadata,
    })
}

/// Where a training run put its files.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub output_dir: PathBuf,
    pub best_checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
    pub best_iteration: usize,
    pub best_post_return: f64,
    pub log: Vec<IterationLog>,
}

/// Meta-trains from `config`, writing logs and checkpoints as it goes.
pub fn train(config: &RunConfig, workers: usize) -> Result<TrainSummary, ExperimentError> {
    config.validate()?;
    let family = config.family()?;
    let spec = config.policy_spec()?;
    let out = config.resolved_output_dir();
    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    write_file(&out.join("config.toml"), &config.to_toml())?;

    let log_path = out.join("train_log.jsonl");
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let mut meta = config.meta.clone();
    meta.workers = workers.max(1);
    let seeds = SeedTree::new(config.seed);

    let outcome = meta_train(&family, &spec, &meta, &seeds, |entry, theta| {
        let line = serde_json::to_string(entry).expect("logs serialize");
        let io = |e: std::io::Error| MetaError::Contract(format!("writing {}: {e}", log_path.display()));
        writeln!(log_file, "{line}").and_then(|_| log_file.flush()).map_err(io)?;
        let done = entry.iteration + 1;
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
            let path = ckpt_dir.join(format!("iter_{done:05}.nmrl"));
            checkpoint_archive(config, theta, "periodic", done, entry.post_return)
                .save(&path)
                .map_err(|e| MetaError::Contract(format!("writing {}: {e}", path.display())))?;
        }
        Ok(())
    })?;

    let best_checkpoint = out.join("best.nmrl");
    checkpoint_archive(
        config,
        &outcome.best_theta,
        "best",
        outcome.best_iteration,
        outcome.best_post_return,
    )
    .save(&best_checkpoint)?;
    let final_checkpoint = out.join("final.nmrl");
    let last = outcome.log.last().map_or(f64::NAN, |l| l.post_return);
    checkpoint_archive(config, &outcome.final_theta, "final", config.meta.n_iterations, last)
        .save(&final_checkpoint)?;

    Ok(TrainSummary {
        output_dir: out,
        best_checkpoint,
        final_checkpoint,
        best_iteration: outcome.best_iteration,
        best_post_return: outcome.best_post_return,
        log: outcome.log,
    })
}

/// `step,mean_return` rows.
pub fn curve_csv(result: &MetaTestResult) -> String {
    let mut s = String::from("step,mean_return\n");
    for (k, r) in result.curve.iter().enumerate() {
        writeln!(s, "{k},{r:?}").expect("writing to a string");
    }
    s
}

/// `task,step,mean_return` rows.
pub fn per_task_csv(result: &MetaTestResult) -> String {
    let mut s = String::from("task,step,mean_return\n");
    for (i, curve) in result.per_task.iter().enumerate() {
        for (k, r) in curve.iter().enumerate() {
            writeln!(s, "{i},{k},{r:?}").expect("writing to a string");
        }
    }
    s
}

/// Overrides for [`test`]; `None` keeps the checkpoint's configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct TestOptions {
    pub steps: Option<usize>,
    pub tasks: Option<usize>,
    pub workers: usize,
}

/// Meta-tests a checkpoint and writes `meta_test.csv` and
/// `meta_test_tasks.csv` into `out_dir`.
pub fn test(
    checkpoint: &Path,
    options: TestOptions,
    out_dir: &Path,
) -> Result<MetaTestResult, ExperimentError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let result = test_checkpoint(&ckpt, options)?;
    create_dir(out_dir)?;
    write_file(&out_dir.join("meta_test.csv"), &curve_csv(&result))?;
    write_file(&out_dir.join("meta_test_tasks.csv"), &per_task_csv(&result))?;
    Ok(result)
}

pub fn test_checkpoint(ckpt: &Checkpoint, options: TestOptions) -> Result<MetaTestResult, ExperimentError> {
    let family = ckpt.config.family()?;
    let mut meta = ckpt.config.meta.clone();
    meta.workers = options.workers.max(1);
    let steps = options.steps.unwrap_or(meta.n_inner_steps_test);
    let tasks = options.tasks.unwrap_or(meta.n_test_tasks);
    let seeds = SeedTree::new(ckpt.config.seed);
    Ok(meta_test(&family, &ckpt.spec, &ckpt.theta, &meta, tasks, steps, &seeds)?)
}

/// CKA matrices for a checkpoint, one per (layer, step).
pub fn analyze_checkpoint(ckpt: &Checkpoint, workers: usize) -> Result<Vec<CkaMatrix>, ExperimentError> {
    let family = ckpt.config.family()?;
    let analysis = &ckpt.config.analysis;
    let mut meta = ckpt.config.meta.clone();
    meta.workers = workers.max(1);
    let seeds = SeedTree::new(ckpt.config.seed);
    let tasks = family.analysis_tasks(analysis.n_tasks, &mut seeds.rng("analysis-tasks", &[]));
    let adapted = meta_test_tasks(
        &family,
        &ckpt.spec,
        &ckpt.theta,
        &meta,
        tasks,
        analysis.n_steps,
        &seeds,
    )?;
    let probes = family.probe_observations(analysis.probe_grid_side);
    Ok(build_heatmaps(&ckpt.spec, &ckpt.theta, &adapted.contexts, &probes)?)
}

/// Writes one task × task CSV per matrix plus long-format and summary tables.
pub fn write_cka_tables(matrices: &[CkaMatrix], out_dir: &Path) -> Result<(), ExperimentError> {
    let dir = out_dir.join("cka");
    create_dir(&dir)?;
    let mut long = String::from("task_a,task_b,layer,step,cka\n");
    let mut summary = String::from("layer,step,dissimilarity,degenerate\n");
    for (m, d) in matrices.iter().zip(dissimilarity_summary(matrices)) {
        let mut table = String::new();
        for a in 0..m.n_tasks {
            let row: Vec<String> = (0..m.n_tasks).map(|b| format!("{:?}", m.get(a, b))).collect();
            writeln!(table, "{}", row.join(",")).expect("writing to a string");
            for b in 0..m.n_tasks {
                writeln!(long, "{a},{b},{},{},{:?}", m.layer, m.grad_step, m.get(a, b))
                    .expect("writing to a string");
            }
        }
        write_file(&dir.join(format!("layer{}_step{}.csv", m.layer, m.grad_step)), &table)?;
        writeln!(summary, "{},{},{d:?},{}", m.layer, m.grad_step, m.degenerate)
            .expect("writing to a string");
    }
    write_file(&out_dir.join("cka_long.csv"), &long)?;
    write_file(&out_dir.join("cka_summary.csv"), &summary)?;
    Ok(())
}

pub fn analyze(checkpoint: &Path, out_dir: &Path, workers: usize) -> Result<Vec<CkaMatrix>, ExperimentError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let matrices = analyze_checkpoint(&ckpt, workers)?;
    write_cka_tables(&matrices, out_dir)?;
    Ok(matrices)
}

/// One row of the comparison table.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub name: String,
    pub spec: PolicySpec,
    pub param_count: usize,
    pub curve: Vec<f64>,
}

/// Trains (or loads) a model from a `.toml` config or an archive.
fn obtain(path: &Path, workers: usize) -> Result<Checkpoint, ExperimentError> {
    if path.extension().is_some_and(|e| e == "toml") {
        let config = RunConfig::load(path)?;
        let summary = train(&config, workers)?;
        load_checkpoint(&summary.best_checkpoint)
    } else {
        load_checkpoint(path)
    }
}

/// Config for the standard network widened to the NPN's parameter count.
pub fn spn_large_config(npn: &RunConfig) -> Result<RunConfig, ExperimentError> {
    let spec = npn.policy_spec()?;
    let large = spec.standard_matching(spec.param_count());
    let mut config = npn.clone();
    config.policy.layer_kind = large.layer_kind;
    config.policy.hidden_sizes = large.hidden_sizes;
    config.policy.nm_sizes = Vec::new();
    let mut dir = npn.output_dir.clone().into_os_string();
    dir.push("-spn-large");
    config.output_dir = dir.into();
    config.validate()?;
    Ok(config)
}

/// Trains or loads SPN and NPN, trains the width-matched SPN-large, meta-tests
/// all three and writes `compare.csv` into `out_dir`.
pub fn compare(
    spn: &Path,
    npn: &Path,
    out_dir: &Path,
    workers: usize,
) -> Result<Vec<CompareRow>, ExperimentError> {
    let spn = obtain(spn, workers)?;
    let npn = obtain(npn, workers)?;
    let large_config = spn_large_config(&npn.config)?;
    let large = load_checkpoint(&train(&large_config, workers)?.best_checkpoint)?;
    let options = TestOptions {
        workers,
        ..TestOptions::default()
    };
    let mut rows = Vec::new();
    for (name, ckpt) in [("spn", &spn), ("npn", &npn), ("spn-large", &large)] {
        rows.push(CompareRow {
            name: name.into(),
            spec: ckpt.spec.clone(),
            param_count: ckpt.spec.param_count(),
            curve: test_checkpoint(ckpt, options)?.curve,
        });
    }
    create_dir(out_dir)?;
    write_file(&out_dir.join("compare.csv"), &compare_csv(&rows))?;
    Ok(rows)
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let steps = rows.iter().map(|r| r.curve.len()).max().unwrap_or(0);
    let mut s = String::from("network,layer_kind,hidden_sizes,param_count");
    for k in 0..steps {
        write!(s, ",step{k}").expect("writing to a string");
    }
    s.push('\n');
    for r in rows {
        let hidden: Vec<String> = r.spec.hidden_sizes.iter().map(usize::to_string).collect();
        write!(
            s,
            "{},{:?},{},{}",
            r.name,
            r.spec.layer_kind,
            hidden.join("x"),
            r.param_count
        )
        .expect("writing to a string");
        for v in &r.curve {
            write!(s, ",{v:?}").expect("writing to a string");
        }
        s.push('\n');
    }
    s
}

/// Default directory for results derived from a checkpoint: next to it.
pub fn default_results_dir(checkpoint: &Path) -> PathBuf {
    match checkpoint.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => resolve_output(Path::new(".")),
    }
}
