//! The experiment stages: pretrain, run, ablate, eval and report. Each
//! stage reads its inputs from and writes its artifacts to one output tree:
//!
//! ```text
//! <out>/experiment.toml, universe.toml, timing.log
//! <out>/base/checkpoint-000.toml, base_report.json, pretrain_loss.csv
//! <out>/run/                 the configured sequence
//! <out>/ablate/<variant>/    one sequence per variant, plus comparison.csv
//! ```
//!
//! Every run directory is self-contained: `universe.toml`, `eval.toml`,
//! `checkpoint-000.toml` (a copy of the base) up to `checkpoint-K.toml`,
//! per-step loss files, `loss.csv`, and after evaluation `metrics.csv` and
//! `metrics.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use super::artifacts::*;
use super::config::ExperimentConfig;
use crate::engine::ablation::{make_ablation_configs, make_reg_sweep, make_timestep_configs};
use crate::engine::checkpoint::Checkpoint;
use crate::engine::pretrain::{pretrain_base, BaseReport};
use crate::engine::step::run_sequence_with;
use crate::engine::UnlearnStepConfig;
use crate::error::{Error, Result};
use crate::eval::report::{evaluate_run, EvalConfig, MetricsReport, CSV_HEADER};
use crate::world::ConceptUniverse;

/// A validated, seeded experiment bound to an output directory.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub universe: ConceptUniverse,
    pub out: PathBuf,
}

fn timed<T>(out: &Path, what: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let r = f();
    let status = if r.is_ok() { "ok" } else { "failed" };
    append_line(&out.join(TIMING_LOG), &format!("{what}\t{status}\t{:.3}s", t.elapsed().as_secs_f64()))?;
    r
}

impl Experiment {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Self> {
        let config = config.seeded();
        config.validate()?;
        let universe = config.build_universe()?;
        Ok(Self { config, universe, out: out.into() })
    }

    fn write_root(&self) -> Result<()> {
        write_artifact(&self.out.join(EXPERIMENT_FILE), self.config.to_toml().as_bytes())?;
        write_artifact(&self.out.join(UNIVERSE_FILE), self.universe.to_toml().as_bytes())
    }

    pub fn base_dir(&self) -> PathBuf {
        self.out.join(BASE_DIR)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(RUN_DIR)
    }

    pub fn ablate_dir(&self) -> PathBuf {
        self.out.join(ABLATE_DIR)
    }

    /// Trains `theta_0` and writes it with its gate report. Artifacts are
    /// written even when a gate fails; the failure is then returned.
    pub fn pretrain(&self) -> Result<BaseReport> {
        self.write_root()?;
        timed(&self.out, "pretrain", || {
            let outcome = pretrain_base(&self.universe, self.config.schedule, &self.config.pretrain)?;
            let dir = self.base_dir();
            write_checkpoint(&dir, &outcome.checkpoint)?;
            let report = serde_json::to_string_pretty(&outcome.report).expect("report serialises") + "\n";
            write_artifact(&dir.join(BASE_REPORT_FILE), report.as_bytes())?;
            let rows = outcome.loss_curve.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.to_string()]);
            write_artifact(&dir.join(PRETRAIN_LOSS_FILE), &csv_bytes(&["iteration", "loss"], rows))?;
            outcome.require_gates()?;
            Ok(outcome.report)
        })
    }

    pub fn load_base(&self) -> Result<Checkpoint> {
        let p = checkpoint_path(&self.base_dir(), 0);
        if !p.exists() {
            return Err(Error::Usage(format!("no base checkpoint at {}; run `pretrain` first", p.display())));
        }
        let base = Checkpoint::load(&p)?;
        if base.step != 0 || base.schedule != self.config.schedule {
            return Err(Error::Usage(format!("{} does not belong to this experiment", p.display())));
        }
        Ok(base)
    }

    /// Runs (or resumes) a sequence into `dir`: existing checkpoints
    /// `1..=j` are kept and the run continues from `j`.
    fn run_into(&self, dir: &Path, base: &Checkpoint, configs: &[UnlearnStepConfig]) -> Result<Vec<Checkpoint>> {
        write_artifact(&dir.join(UNIVERSE_FILE), self.universe.to_toml().as_bytes())?;
        write_artifact(&dir.join(EVAL_FILE), toml::to_string(&self.config.eval).expect("eval config").as_bytes())?;
        write_checkpoint(dir, base)?;
        let existing = read_checkpoints(dir)?;
        let start = existing.last().expect("base was just written");
        let run = run_sequence_with(start, &self.universe, configs, |o| {
            write_checkpoint(dir, &o.checkpoint)?;
            write_artifact(&step_loss_path(dir, o.checkpoint.step), &step_loss_csv(&o.log.losses))
        })?;
        let done = existing.len() - 1 + run.logs.len();
        let mut rows = Vec::new();
        for step in 1..=done {
            for mut r in read_step_loss(&step_loss_path(dir, step))? {
                r.insert(0, step.to_string());
                rows.push(r);
            }
        }
        if let Some(e) = run.failure {
            return Err(e);
        }
        write_artifact(&dir.join(LOSS_FILE), &csv_bytes(&LOSS_HEADER, rows))?;
        let mut all = existing;
        all.extend(run.checkpoints.into_iter().skip(1));
        Ok(all)
    }

    /// The configured sequence, in `<out>/run`.
    pub fn run(&self) -> Result<Vec<Checkpoint>> {
        self.write_root()?;
        let base = self.load_base()?;
        let configs = self.config.step_configs()?;
        timed(&self.out, "run", || self.run_into(&self.run_dir(), &base, &configs))
    }

    /// Variant names with their per-step configs, in run order.
    pub fn variants(&self) -> Result<Vec<(String, Vec<UnlearnStepConfig>)>> {
        let steps = self.config.step_configs()?;
        let t = self.config.schedule.timesteps;
        let toggles = self.config.ablation;
        let families: [(bool, &dyn Fn(&UnlearnStepConfig) -> Vec<crate::engine::Variant>); 3] = [
            (toggles.variants, &make_ablation_configs),
            (toggles.timestep_sweep, &|c| make_timestep_configs(c, t)),
            (toggles.reg_sweep, &make_reg_sweep),
        ];
        let mut out = Vec::new();
        for (on, make) in families {
            if !on {
                continue;
            }
            let per_step: Vec<_> = steps.iter().map(make).collect();
            for (i, v) in per_step[0].iter().enumerate() {
                out.push((v.name.clone(), per_step.iter().map(|s| s[i].config.clone()).collect()));
            }
        }
        Ok(out)
    }

    /// Runs and evaluates every enabled variant (or only `only`) from the
    /// shared base. A failing variant is recorded and the others continue;
    /// the first failure is returned after `comparison.csv` is written.
    pub fn ablate(&self, only: Option<&str>) -> Result<Vec<(String, MetricsReport)>> {
        self.write_root()?;
        let base = self.load_base()?;
        let mut variants = self.variants()?;
        if let Some(name) = only {
            variants.retain(|(n, _)| n == name);
            if variants.is_empty() {
                let known: Vec<String> = self.variants()?.into_iter().map(|(n, _)| n).collect();
                return Err(Error::Usage(format!("unknown variant `{name}`; known: {}", known.join(", "))));
            }
        }
        let mut done = Vec::new();
        let mut failures = Vec::new();
        for (name, configs) in &variants {
            let dir = self.ablate_dir().join(name);
            let result = timed(&self.out, &format!("ablate {name}"), || {
                let ckpts = self.run_into(&dir, &base, configs)?;
                write_report(&dir, &evaluate_run(&ckpts, &self.universe, &self.config.eval)?)
            });
            match result {
                Ok(r) => done.push((name.clone(), r)),
                Err(e) => failures.push((name.clone(), e)),
            }
        }
        if only.is_none() {
            let mut header = vec!["variant"];
            header.extend(CSV_HEADER);
            header.push("error");
            let mut rows: Vec<Vec<String>> = Vec::new();
            for (name, _) in &variants {
                let mut row = vec![name.clone()];
                if let Some((_, r)) = done.iter().find(|(n, _)| n == name) {
                    row.extend(r.final_row().csv_fields());
                    row.push(String::new());
                } else if let Some((_, e)) = failures.iter().find(|(n, _)| n == name) {
                    row.extend(std::iter::repeat_n(String::new(), CSV_HEADER.len()));
                    row.push(e.to_string());
                }
                rows.push(row);
            }
            write_artifact(&self.ablate_dir().join(COMPARISON_FILE), &csv_bytes(&header, rows))?;
        }
        match failures.into_iter().next() {
            Some((_, e)) => Err(e),
            None => Ok(done),
        }
    }
}

fn write_report(dir: &Path, report: &MetricsReport) -> Result<MetricsReport> {
    write_artifact(&dir.join(METRICS_CSV), report.to_csv().as_bytes())?;
    write_artifact(&dir.join(METRICS_JSON), report.to_json().as_bytes())?;
    Ok(report.clone())
}

/// Evaluates a self-contained run directory and writes its metrics.
pub fn eval_run_dir(dir: &Path) -> Result<MetricsReport> {
    let universe = ConceptUniverse::load(&dir.join(UNIVERSE_FILE))?;
    let eval_path = dir.join(EVAL_FILE);
    let text = std::fs::read_to_string(&eval_path).map_err(|e| Error::io(&eval_path, e))?;
    let cfg: EvalConfig = toml::from_str(&text).map_err(|e| Error::parse(&eval_path, e))?;
    let ckpts = read_checkpoints(dir)?;
    let k = universe.forget_schedule().len();
    if ckpts.len() != k + 1 {
        return Err(Error::Usage(format!(
            "{} holds checkpoints 0..{} but the schedule has {k} steps",
            dir.display(),
            ckpts.len() as isize - 1
        )));
    }
    write_report(dir, &evaluate_run(&ckpts, &universe, &cfg)?)
}

pub fn load_report(dir: &Path) -> Result<MetricsReport> {
    let p = dir.join(METRICS_JSON);
    if !p.exists() {
        return Err(Error::Usage(format!("{} has no {METRICS_JSON}; run `eval` first", dir.display())));
    }
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&p, e))
}

/// Header of the multi-run summary: run name, the final-step metrics, the
/// step-averaged UA and the number of revival events.
pub fn report_header() -> Vec<&'static str> {
    let mut h = vec!["run"];
    h.extend(CSV_HEADER);
    h.extend(["MEAN_UA", "REVIVALS"]);
    h
}

/// One summary row per run directory, named by its last path component.
pub fn report_csv(dirs: &[PathBuf]) -> Result<String> {
    if dirs.is_empty() {
        return Err(Error::Usage("report needs at least one run directory".into()));
    }
    let mut rows = Vec::new();
    for d in dirs {
        let r = load_report(d)?;
        let name = d.file_name().map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned());
        let uas: Vec<f64> = r.rows.iter().filter_map(|x| x.ua).collect();
        let mean_ua = if uas.is_empty() { String::new() } else { (uas.iter().sum::<f64>() / uas.len() as f64).to_string() };
        let mut row = vec![name];
        row.extend(r.final_row().csv_fields());
        row.push(mean_ua);
        row.push(r.revival.events.len().to_string());
        rows.push(row);
    }
    Ok(String::from_utf8(csv_bytes(&report_header(), rows)).expect("csv is utf-8"))
}
