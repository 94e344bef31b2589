//! Experiment drivers behind the subcommands.

use std::path::PathBuf;

use efp_core::baselines::{mfld_train, pda_simplified_train, BaselineConfig, BaselineKind};
use efp_core::duality::{DiagnosticsRow, DiagnosticsSink};
use efp_core::efp::efp_train;
use efp_core::raster::image_expectation;
use efp_core::{Ensemble, FeatureFamily, Problem, ScalarLoss};
use serde_json::json;

use crate::config::{Experiment, Method, RunConfig};
use crate::datasets::{
    gaussian_mixture_sample, make_density_problem, make_image_problem, make_student_teacher, radial_target,
};
use crate::error::{CliError, CliResult};
use crate::io::{create_dir, write_manifest, write_pgm, CsvSink};
use crate::verify;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub rows: Vec<DiagnosticsRow>,
    /// Tracked `H` (EFP) or particle means of `h` (baselines) at the end.
    pub averages: Vec<f64>,
    pub ensemble: Option<Ensemble>,
}

/// Executes `cfg`, writing artifacts under `cfg.out_dir`.
pub fn run(cfg: &RunConfig) -> CliResult<RunSummary> {
    if cfg.experiment == Experiment::Verify {
        return run_verify(cfg);
    }
    create_dir(&cfg.out_dir)?;
    match cfg.experiment {
        Experiment::TrainNn => {
            let p = &cfg.problem;
            let problem =
                make_student_teacher(p.n, p.d, p.teacher_width, cfg.seeds().data, p.lambda, p.lambda_prime)?;
            train_and_record(cfg, &problem, json!({}))
        }
        Experiment::Density => {
            let p = &cfg.problem;
            let centers = cluster_centers(p.clusters, p.d);
            let obs = gaussian_mixture_sample(&centers, p.d, p.spread, p.n, cfg.seeds().data);
            let problem = make_density_problem(&obs, p.d, p.sigma, p.lambda, p.lambda_prime)?;
            let summary = train_and_record(cfg, &problem, json!({ "cluster_centers": centers }))?;
            if let Some(e) = &summary.ensemble {
                write_particles(cfg, e)?;
            }
            Ok(summary)
        }
        Experiment::Toy1d => {
            let problem = toy_problem(cfg.problem.target, cfg.problem.lambda, cfg.problem.lambda_prime)?;
            let fixed = toy_fixed_point(cfg.problem.target, cfg.problem.lambda_prime);
            let summary = train_and_record(cfg, &problem, json!({ "fixed_point": fixed }))?;
            println!("terminal H = {:.6}, fixed point = {fixed:.6}", summary.averages[0]);
            Ok(summary)
        }
        Experiment::SynthImage => run_synth_image(cfg),
        Experiment::Verify => unreachable!(),
    }
}

/// `k` centres spread evenly over `[-1.5, 1.5]` along the first axis.
pub fn cluster_centers(k: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * dim];
    for c in 0..k {
        out[c * dim] = if k == 1 { 0.0 } else { -1.5 + 3.0 * c as f64 / (k - 1) as f64 };
    }
    out
}

/// One squared-loss term on the identity feature of `R^1`.
pub fn toy_problem(target: f64, lambda: f64, lambda_prime: f64) -> CliResult<Problem> {
    Ok(Problem::new(
        vec![ScalarLoss::Squared { target }],
        FeatureFamily::Linear { weights: vec![1.0], dim: 1 },
        lambda,
        lambda_prime,
    )?)
}

/// Self-consistent `H` of the toy: the Gibbs measure of `g = H - y` has mean
/// `-g / (2λ')`; solved by damped scalar iteration.
pub fn toy_fixed_point(target: f64, lambda_prime: f64) -> f64 {
    let slope = 1.0 / (2.0 * lambda_prime);
    // contraction factor 1 - α(1 + slope) = 1/2
    let alpha = 0.5 / (1.0 + slope);
    let mut h = 0.0;
    for _ in 0..100_000 {
        let next = (1.0 - alpha) * h + alpha * (-(h - target) * slope);
        if (next - h).abs() < 1e-15 {
            return next;
        }
        h = next;
    }
    h
}

pub struct TrainOutcome {
    pub averages: Vec<f64>,
    pub ensemble: Ensemble,
}

/// Runs the configured method on `problem`, streaming rows into `sink`.
pub fn train<S: DiagnosticsSink>(cfg: &RunConfig, problem: &Problem, sink: &mut S) -> CliResult<TrainOutcome> {
    let o = &cfg.optimizer;
    let baseline = |kind| BaselineConfig {
        kind,
        particles: o.particles,
        init_scale: o.init_scale,
        seed: cfg.seeds().init,
        diagnostics: cfg.diagnostics_config(),
    };
    Ok(match o.method {
        Method::Efp => {
            let state = efp_train(problem, &cfg.efp_config(), sink)?;
            TrainOutcome {
                averages: state.averages.values,
                ensemble: state.ensemble,
            }
        }
        Method::Mfld => {
            let mut b = baseline(BaselineKind::Mfld {
                step: o.mfld_step,
                iters: o.mfld_iters,
            });
            // one row per S noisy-gradient steps, matching the EFP row rate
            if let Some(d) = b.diagnostics.as_mut() {
                d.cadence *= o.lmc_steps.max(1);
            }
            let out = mfld_train(problem, &b, sink)?;
            TrainOutcome {
                averages: out.averages,
                ensemble: out.ensemble,
            }
        }
        Method::Pda => {
            let out = pda_simplified_train(
                problem,
                &baseline(BaselineKind::PdaSimplified {
                    outer_iters: o.outer_iters,
                    lmc: cfg.lmc(),
                }),
                sink,
            )?;
            TrainOutcome {
                averages: out.averages,
                ensemble: out.ensemble,
            }
        }
    })
}

fn train_and_record(cfg: &RunConfig, problem: &Problem, extra: serde_json::Value) -> CliResult<RunSummary> {
    let csv_path = cfg.out_dir.join("diagnostics.csv");
    let mut sink = CsvSink::create(&csv_path)?;
    let outcome = train(cfg, problem, &mut sink)?;
    let rows = sink.finish()?;
    let last = rows.last();
    write_manifest(
        cfg,
        json!({
            "diagnostics": "diagnostics.csv",
            "rows": rows.len(),
            "final_gap": last.map(|r| r.gap),
            "final_f0": last.map(|r| r.f0),
            "extra": extra,
        }),
    )?;
    if let Some(r) = last {
        println!(
            "{}: iter {} primal {:.6e} dual {:.6e} gap {:.3e} f0 {:.6e}",
            cfg.experiment.name(),
            r.iter,
            r.primal,
            r.dual,
            r.gap,
            r.f0
        );
    }
    Ok(RunSummary {
        out_dir: cfg.out_dir.clone(),
        rows,
        averages: outcome.averages,
        ensemble: Some(outcome.ensemble),
    })
}

fn write_particles(cfg: &RunConfig, e: &Ensemble) -> CliResult<()> {
    let path = cfg.out_dir.join("particles.csv");
    let err = |source| CliError::Csv {
        path: path.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    let header: Vec<String> = (0..e.dim()).map(|j| format!("theta{j}")).collect();
    w.write_record(&header).map_err(err)?;
    for p in e.iter() {
        w.write_record(p.iter().map(|v| v.to_string())).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}

pub fn mean_squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Per-checkpoint errors of the tracked-average image and the Gibbs image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageCheckpoint {
    /// Outer updates applied so far.
    pub iter: usize,
    pub err_h: f64,
    pub err_gibbs: f64,
}

struct ImageSink<'a> {
    csv: Option<CsvSink>,
    cfg: &'a RunConfig,
    target: &'a [f64],
    checkpoints: Vec<ImageCheckpoint>,
    error: Option<CliError>,
}

impl ImageSink<'_> {
    fn checkpoint(&mut self, iter: usize, averages: &[f64], gibbs: &Ensemble) -> CliResult<()> {
        let rc = self.cfg.render_config();
        let gibbs_img = image_expectation(gibbs, &rc);
        let cp = ImageCheckpoint {
            iter,
            err_h: mean_squared_error(averages, self.target),
            err_gibbs: mean_squared_error(&gibbs_img, self.target),
        };
        self.checkpoints.push(cp);
        log::info!("checkpoint {iter}: H error {:.5}, Gibbs error {:.5}", cp.err_h, cp.err_gibbs);
        if !self.cfg.out_dir.as_os_str().is_empty() {
            let dir = &self.cfg.out_dir;
            write_pgm(&dir.join(format!("h_{iter:05}.pgm")), rc.width, rc.height, averages)?;
            write_pgm(&dir.join(format!("gibbs_{iter:05}.pgm")), rc.width, rc.height, &gibbs_img)?;
        }
        Ok(())
    }
}

impl DiagnosticsSink for ImageSink<'_> {
    fn record(&mut self, row: &DiagnosticsRow) {
        if let Some(c) = self.csv.as_mut() {
            c.record(row);
        }
    }

    fn observe(&mut self, iter: usize, averages: &[f64], gibbs: &Ensemble) {
        let done = iter + 1;
        if self.error.is_none() && (done.is_multiple_of(self.cfg.checkpoint_every) || done == self.cfg.optimizer.outer_iters) {
            if let Err(e) = self.checkpoint(done, averages, gibbs) {
                self.error = Some(e);
            }
        }
    }

    fn elapsed_ms(&self) -> f64 {
        self.csv.as_ref().map_or(0.0, |c| c.elapsed_ms())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRun {
    pub checkpoints: Vec<ImageCheckpoint>,
    /// Error of the initial particle image.
    pub initial_err: f64,
    pub summary: RunSummary,
}

impl ImageRun {
    pub fn last(&self) -> ImageCheckpoint {
        *self.checkpoints.last().expect("at least one checkpoint")
    }
}

fn run_synth_image(cfg: &RunConfig) -> CliResult<RunSummary> {
    Ok(synth_image(cfg, true)?.summary)
}

/// Image fitting with checkpoints; `write` selects whether files are produced.
pub fn synth_image(cfg: &RunConfig, write: bool) -> CliResult<ImageRun> {
    if cfg.optimizer.method != Method::Efp {
        return Err(CliError::Config("synth-image supports method = efp only".into()));
    }
    let mut cfg = cfg.clone();
    let target = match &cfg.problem.target_image {
        Some(path) => {
            let img = crate::io::read_pgm(path)?;
            cfg.problem.width = img.width;
            cfg.problem.height = img.height;
            cfg.problem.n = img.width * img.height;
            img.pixels
        }
        None => radial_target(cfg.problem.width, cfg.problem.height),
    };
    let rc = cfg.render_config();
    let problem = make_image_problem(&target, rc, cfg.problem.lambda, cfg.problem.lambda_prime)?;
    if !write {
        cfg.out_dir = PathBuf::new();
    }
    let csv = if write {
        create_dir(&cfg.out_dir)?;
        write_pgm(&cfg.out_dir.join("target.pgm"), rc.width, rc.height, &target)?;
        Some(CsvSink::create(&cfg.out_dir.join("diagnostics.csv"))?)
    } else {
        None
    };
    let efp_cfg = cfg.efp_config();
    let init = Ensemble::gaussian(efp_cfg.particles, 8, efp_cfg.init_scale, efp_cfg.seed)?;
    let init_h = problem.empirical_means(&init);
    let mut sink = ImageSink {
        csv,
        cfg: &cfg,
        target: &target,
        checkpoints: Vec::new(),
        error: None,
    };
    sink.checkpoint(0, &init_h, &init)?;
    let state = efp_train(&problem, &efp_cfg, &mut sink)?;
    if let Some(e) = sink.error.take() {
        return Err(e);
    }
    let checkpoints = std::mem::take(&mut sink.checkpoints);
    let rows = match sink.csv.take() {
        Some(c) => c.finish()?,
        None => Vec::new(),
    };
    let initial_err = checkpoints[0].err_h;
    if write {
        write_checkpoint_csv(&cfg, &checkpoints)?;
        let last = checkpoints.last().copied();
        write_manifest(
            &cfg,
            json!({
                "diagnostics": "diagnostics.csv",
                "checkpoints": "image_errors.csv",
                "images": "h_<iter>.pgm (tracked averages), gibbs_<iter>.pgm (latest Gibbs sample)",
                "initial_error": initial_err,
                "final_error_h": last.map(|c| c.err_h),
                "final_error_gibbs": last.map(|c| c.err_gibbs),
            }),
        )?;
        if let Some(c) = last {
            println!(
                "synth-image: iter {} H error {:.6} Gibbs error {:.6} (initial {:.6})",
                c.iter, c.err_h, c.err_gibbs, initial_err
            );
        }
    }
    Ok(ImageRun {
        checkpoints,
        initial_err,
        summary: RunSummary {
            out_dir: cfg.out_dir.clone(),
            rows,
            averages: state.averages.values,
            ensemble: Some(state.ensemble),
        },
    })
}

fn write_checkpoint_csv(cfg: &RunConfig, cps: &[ImageCheckpoint]) -> CliResult<()> {
    let path = cfg.out_dir.join("image_errors.csv");
    let err = |source| CliError::Csv {
        path: path.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    w.write_record(["iter", "err_h", "err_gibbs"]).map_err(err)?;
    for c in cps {
        w.write_record([c.iter.to_string(), c.err_h.to_string(), c.err_gibbs.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}

fn run_verify(cfg: &RunConfig) -> CliResult<RunSummary> {
    let outcomes = verify::run_selected(&cfg.criteria);
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    if !cfg.out_dir.as_os_str().is_empty() {
        create_dir(&cfg.out_dir)?;
        let path = cfg.out_dir.join("verify.json");
        let text = serde_json::to_string_pretty(&outcomes).expect("outcomes serialize");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    }
    if failed.is_empty() {
        Ok(RunSummary {
            out_dir: cfg.out_dir.clone(),
            rows: Vec::new(),
            averages: Vec::new(),
            ensemble: None,
        })
    } else {
        Err(CliError::Verification(format!("criteria {failed:?} failed")))
    }
}
