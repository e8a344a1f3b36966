//! Parse, preprocess, split, train with early stopping, and test.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Config, FilterStep};
use super::{Result, RunError};
use crate::atomic::{parse_atomic_file, AtomicFileKind};
use crate::dataset::{AtomicTables, Dataset};
use crate::eval::{evaluate, EvalOptions, MetricRegister, Report};
use crate::models::{build_model, load_state, restore, save_state, CheckpointMeta, ModelState, Recommender, TrainData};
use crate::protocol::{build_candidates, split_dataset, CandidateSet, EvalPlan, Phase, SplitResult};

pub const LATEST: &str = "latest.ckpt";
pub const BEST: &str = "best.ckpt";
pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const RUN_LOG: &str = "run.log";

/// Patience-based stopping on a metric where larger is better. Only a
/// strictly greater value counts as an improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// Records the metric of `epoch` (1-based); returns whether it improved.
    pub fn update(&mut self, epoch: usize, metric: f64) -> bool {
        let improved = self.best.is_none_or(|b| metric > b);
        if improved {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }
}

/// Trainer state stored in the `extra` field of `latest.ckpt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainerState {
    stopper: EarlyStopping,
    finished: bool,
    base_dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Stop after this many completed epochs as if the process had been
    /// killed, leaving a resumable `latest.ckpt` behind.
    pub interrupt_after: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct ResumeOptions {
    /// Config to compare against the checkpoint; the embedded one is used
    /// when absent.
    pub config: Option<Config>,
    /// Accept a config whose hash differs from the checkpoint's.
    pub force: bool,
    pub run: RunOptions,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Test report; `None` when the run was interrupted.
    pub report: Option<Report>,
    pub best_valid: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub finished: bool,
    pub output_dir: PathBuf,
}

/// Everything derived from the config before training starts.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub plan: EvalPlan,
    pub split: SplitResult,
    pub train: TrainData,
    pub valid_candidates: CandidateSet,
    pub test_candidates: CandidateSet,
    pub register: MetricRegister,
}

fn load_dataset(cfg: &Config) -> Result<Dataset> {
    let sep = cfg.separator();
    let read = |key: &str, kind| -> Result<_> {
        cfg.path(key)
            .map(|p| parse_atomic_file(&p, kind, sep))
            .transpose()
            .map_err(RunError::from)
    };
    Ok(Dataset::from_tables(AtomicTables {
        inter: read("data.inter", AtomicFileKind::Inter)?,
        user: read("data.user", AtomicFileKind::User)?,
        item: read("data.item", AtomicFileKind::Item)?,
        kg: read("data.kg", AtomicFileKind::Kg)?,
        link: read("data.link", AtomicFileKind::Link)?,
        net: read("data.net", AtomicFileKind::Net)?,
    })?)
}

/// Loads and preprocesses the data, splits it and builds the candidates.
pub fn prepare(cfg: &Config) -> Result<Prepared> {
    let mut ds = load_dataset(cfg)?;
    for step in cfg.filter_order()? {
        match step {
            FilterStep::Value => {
                for (field, pred) in cfg.value_filters()? {
                    ds = ds.filter_by_field_value(&field, &pred)?;
                }
            }
            FilterStep::InterNum => {
                let (u, i) = cfg.min_inter();
                if u > 0 || i > 0 {
                    ds = ds.filter_by_inter_num(u, i)?;
                }
            }
        }
    }
    ds = ds.remap_ids()?;
    if cfg.fill_nan() {
        ds = ds.fill_nan()?;
    }
    if let Some((field, threshold)) = cfg.label() {
        ds = ds.set_label_by_threshold(field, threshold)?;
    }
    let normalize = cfg.normalize_fields();
    if !normalize.is_empty() {
        ds = ds.normalize(&normalize)?;
    }
    let plan = cfg.eval_plan()?;
    let split = split_dataset(&ds, &plan)?;
    let train = TrainData::new(&ds, &split.train);
    let valid_candidates = build_candidates(&ds, &split, Phase::Valid, plan.candidates, plan.seed)?;
    let test_candidates = build_candidates(&ds, &split, Phase::Test, plan.candidates, plan.seed)?;
    Ok(Prepared {
        dataset: ds,
        plan,
        split,
        train,
        valid_candidates,
        test_candidates,
        register: cfg.register()?,
    })
}

struct Run<'a> {
    cfg: &'a Config,
    prep: Prepared,
    out_dir: PathBuf,
    log: fs::File,
    started: Instant,
}

impl Run<'_> {
    fn log(&mut self, line: &str) -> Result<()> {
        let secs = self.started.elapsed().as_secs_f64();
        writeln!(self.log, "[{secs:9.3}s] {line}").map_err(|source| RunError::Io {
            path: self.out_dir.join(RUN_LOG),
            source,
        })
    }

    fn evaluate(&self, model: &dyn Recommender, phase: Phase) -> Result<Report> {
        let candidates = match phase {
            Phase::Valid => &self.prep.valid_candidates,
            Phase::Test => &self.prep.test_candidates,
        };
        let opts = EvalOptions {
            batch_size: self.cfg.eval_batch_size(),
            mask_history: self.cfg.mask_history(),
            setting: self.prep.plan.to_string(),
        };
        Ok(evaluate(
            model,
            &self.prep.dataset,
            &self.prep.split,
            phase,
            candidates,
            &self.prep.register,
            &opts,
        )?)
    }

    fn meta(&self, stopper: &EarlyStopping, finished: bool) -> CheckpointMeta {
        let trainer = TrainerState {
            stopper: stopper.clone(),
            finished,
            base_dir: self.cfg.base_dir().to_path_buf(),
        };
        CheckpointMeta {
            config_hash: self.cfg.hash(),
            best_valid_metric: stopper.best,
            extra: serde_json::to_value(&trainer).expect("trainer state serializes"),
            config: self.cfg.canonical_text(),
        }
    }

    fn save(&self, name: &str, state: &ModelState, stopper: &EarlyStopping, finished: bool) -> Result<()> {
        Ok(save_state(
            &self.out_dir.join(name),
            state,
            &self.meta(stopper, finished),
        )?)
    }

    /// Trains from `model`'s current epoch until done, stopped or
    /// interrupted.
    fn train(
        &mut self,
        mut model: Box<dyn Recommender>,
        mut stopper: EarlyStopping,
        opts: &RunOptions,
    ) -> Result<RunOutcome> {
        let train_cfg = self.cfg.train_config()?;
        let valid_key = self.cfg.valid_metric().to_string();
        if !model.kind().is_iterative() {
            let report = self.evaluate(model.as_ref(), Phase::Valid)?;
            let metric = report.get(&valid_key).unwrap_or(0.0);
            stopper.update(1, metric);
            self.log(&format!("fitted {} {valid_key}={metric}", model.kind()))?;
            self.save(BEST, &model.state(), &stopper, false)?;
            return self.finish(stopper, 1);
        }
        let mut epoch = model.epoch();
        while epoch < train_cfg.epochs && !stopper.should_stop() {
            let loss = model.train_epoch(&self.prep.train)?;
            epoch = model.epoch();
            let report = self.evaluate(model.as_ref(), Phase::Valid)?;
            let metric = report.get(&valid_key).unwrap_or(0.0);
            let improved = stopper.update(epoch, metric);
            self.log(&format!(
                "epoch {epoch} loss={loss} {valid_key}={metric}{}",
                if improved { " (best)" } else { "" }
            ))?;
            let state = model.state();
            if improved {
                self.save(BEST, &state, &stopper, false)?;
            }
            self.save(LATEST, &state, &stopper, false)?;
            if opts.interrupt_after == Some(epoch) && epoch < train_cfg.epochs && !stopper.should_stop() {
                self.log(&format!("interrupted after epoch {epoch}"))?;
                return Ok(RunOutcome {
                    report: None,
                    best_valid: stopper.best,
                    best_epoch: stopper.best_epoch,
                    epochs_run: epoch,
                    finished: false,
                    output_dir: self.out_dir.clone(),
                });
            }
        }
        if stopper.should_stop() {
            self.log(&format!("early stop after epoch {epoch}"))?;
        }
        self.finish(stopper, epoch)
    }

    /// Tests the best checkpoint and writes the report files.
    fn finish(&mut self, stopper: EarlyStopping, epochs_run: usize) -> Result<RunOutcome> {
        let (best_state, _) = load_state(&self.out_dir.join(BEST))?;
        let best = restore(&best_state)?;
        let mut report = self.evaluate(best.as_ref(), Phase::Test)?;
        report.header.extend([
            ("model".to_string(), best.kind().to_string()),
            ("config_hash".to_string(), self.cfg.hash()),
            ("seed".to_string(), self.cfg.seed().to_string()),
            ("best_epoch".to_string(), stopper.best_epoch.to_string()),
            (
                format!("valid_{}", self.cfg.valid_metric()),
                stopper.best.map_or_else(|| "none".to_string(), |b| b.to_string()),
            ),
        ]);
        let write = |name: &str, text: String| -> Result<()> {
            let path = self.out_dir.join(name);
            fs::write(&path, text).map_err(|source| RunError::Io { path, source })
        };
        write(REPORT_TEXT, report.to_text())?;
        write(REPORT_JSON, report.to_json())?;
        self.save(
            LATEST,
            &best_state_or_latest(&self.out_dir, best_state)?,
            &stopper,
            true,
        )?;
        self.log(&format!("test {}", one_line(&report)))?;
        Ok(RunOutcome {
            report: Some(report),
            best_valid: stopper.best,
            best_epoch: stopper.best_epoch,
            epochs_run,
            finished: true,
            output_dir: self.out_dir.clone(),
        })
    }
}

/// The final `latest.ckpt` keeps the last trained parameters when they
/// exist, otherwise the best ones.
fn best_state_or_latest(dir: &Path, best: ModelState) -> Result<ModelState> {
    let latest = dir.join(LATEST);
    if latest.exists() {
        Ok(load_state(&latest)?.0)
    } else {
        Ok(best)
    }
}

fn one_line(report: &Report) -> String {
    report
        .metrics
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn open_run(cfg: &Config, out_dir: PathBuf, append: bool) -> Result<Run<'_>> {
    fs::create_dir_all(&out_dir).map_err(|source| RunError::Io {
        path: out_dir.clone(),
        source,
    })?;
    let log_path = out_dir.join(RUN_LOG);
    let log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&log_path)
        .map_err(|source| RunError::Io { path: log_path, source })?;
    let prep = prepare(cfg)?;
    let mut run = Run {
        cfg,
        prep,
        out_dir,
        log,
        started: Instant::now(),
    };
    run.log(&format!("config hash {} seed {}", cfg.hash(), cfg.seed()))?;
    for line in cfg.canonical_text().lines() {
        run.log(&format!("config {line}"))?;
    }
    Ok(run)
}

/// Runs one experiment from scratch, writing checkpoints, the report and
/// a run log into `output.dir`.
pub fn run_experiment(cfg: &Config, opts: &RunOptions) -> Result<RunOutcome> {
    let out_dir = cfg.path("output.dir").unwrap_or_else(|| PathBuf::from("output"));
    let mut run = open_run(cfg, out_dir, false)?;
    for stale in [LATEST, BEST, REPORT_TEXT, REPORT_JSON] {
        let _ = fs::remove_file(run.out_dir.join(stale));
    }
    let kind = cfg.model_kind()?;
    let model = build_model(
        kind,
        &run.prep.dataset,
        &run.prep.train,
        &cfg.train_config()?,
        &cfg.model_params(),
    )?;
    let stopper = EarlyStopping::new(cfg.train_config()?.patience);
    run.train(model, stopper, opts)
}

/// Continues the run that wrote `checkpoint` (its `latest.ckpt`). A
/// finished run is not trained further; its report is regenerated.
pub fn resume_experiment(checkpoint: &Path, opts: &ResumeOptions) -> Result<RunOutcome> {
    let (state, meta) = load_state(checkpoint)?;
    let trainer: TrainerState =
        serde_json::from_value(meta.extra.clone()).map_err(|e| RunError::BadCheckpoint(e.to_string()))?;
    let cfg = match &opts.config {
        Some(cfg) => {
            if cfg.hash() != meta.config_hash && !opts.force {
                return Err(RunError::HashMismatch {
                    found: cfg.hash(),
                    expected: meta.config_hash,
                });
            }
            cfg.clone()
        }
        None => Config::from_text(&meta.config, trainer.base_dir.clone())?,
    };
    // outputs stay next to the checkpoint whatever `output.dir` says
    let out_dir = checkpoint
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let mut run = open_run(&cfg, out_dir, true)?;
    run.log(&format!(
        "resume from {} at epoch {}",
        checkpoint.display(),
        state.epoch
    ))?;
    if trainer.finished {
        return run.finish(trainer.stopper, state.epoch);
    }
    let model = restore(&state)?;
    run.train(model, trainer.stopper, &opts.run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_halts_after_patience_flat_epochs() {
        // improves through epoch 4, then flat
        let script = [0.1, 0.2, 0.3, 0.4, 0.4, 0.35, 0.4, 0.5];
        let mut stopper = EarlyStopping::new(2);
        let mut stopped_at = None;
        for (e, &m) in script.iter().enumerate() {
            stopper.update(e + 1, m);
            if stopper.should_stop() {
                stopped_at = Some(e + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(6));
        assert_eq!(stopper.best_epoch, 4);
        assert_eq!(stopper.best, Some(0.4));
    }

    #[test]
    fn equal_metric_is_not_an_improvement() {
        let mut s = EarlyStopping::new(1);
        assert!(s.update(1, 0.5));
        assert!(!s.update(2, 0.5));
        assert!(s.should_stop());
    }
}
