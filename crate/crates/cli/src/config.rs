//! Run configuration: flat `key = value` files with dotted keys, overridden
//! by command-line pairs.
//!
//! Every experiment starts from its own defaults; a key that the experiment
//! does not know is rejected rather than ignored.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use efp_core::duality::DiagnosticsConfig;
use efp_core::efp::EfpConfig;
use efp_core::gibbs::{LmcConfig, StepSchedule};
use efp_core::raster::RenderConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    TrainNn,
    Density,
    SynthImage,
    Toy1d,
    Verify,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::TrainNn => "train-nn",
            Experiment::Density => "density",
            Experiment::SynthImage => "synth-image",
            Experiment::Toy1d => "toy1d",
            Experiment::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Efp,
    Mfld,
    Pda,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Efp => "efp",
            Method::Mfld => "mfld",
            Method::Pda => "pda",
        }
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "efp" => Ok(Method::Efp),
            "mfld" => Ok(Method::Mfld),
            "pda" => Ok(Method::Pda),
            _ => Err(format!("unknown method {s:?} (expected efp, mfld or pda)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    Cosine,
}

impl Schedule {
    pub fn name(self) -> &'static str {
        match self {
            Schedule::Constant => "constant",
            Schedule::Cosine => "cosine",
        }
    }
}

impl FromStr for Schedule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            _ => Err(format!("unknown schedule {s:?} (expected constant or cosine)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSettings {
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub lambda_prime: f64,
    /// Student–teacher only.
    pub teacher_width: usize,
    /// Toy only: regression target of the single term.
    pub target: f64,
    /// Density only: kernel bandwidth, mixture layout of the observations.
    pub sigma: f64,
    pub clusters: usize,
    pub spread: f64,
    /// Image only.
    pub width: usize,
    pub height: usize,
    pub sharpness: f64,
    pub target_image: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub method: Method,
    pub outer_step: f64,
    pub outer_iters: usize,
    pub particles: usize,
    pub init_scale: f64,
    pub lmc_step: f64,
    pub lmc_steps: usize,
    pub schedule: Schedule,
    pub anneal_start: f64,
    pub anneal_end: f64,
    /// MFLD step size and number of steps.
    pub mfld_step: f64,
    pub mfld_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsSettings {
    pub enabled: bool,
    pub cadence: usize,
    pub mc_samples: usize,
    pub knn_k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub problem: ProblemSettings,
    pub optimizer: OptimizerSettings,
    pub diagnostics: DiagnosticsSettings,
    /// Image checkpoint interval in outer iterations.
    pub checkpoint_every: usize,
    /// Criteria run by `verify`; empty means all.
    pub criteria: Vec<u32>,
}

/// Seeds derived from the run seed, one per random purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub data: u64,
    pub lmc: u64,
    pub init: u64,
    pub diagnostics: u64,
}

impl RunConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let problem = ProblemSettings {
            n: 500,
            d: 5,
            lambda: 0.01,
            lambda_prime: 0.01,
            teacher_width: 10,
            target: 1.0,
            sigma: 0.3,
            clusters: 2,
            spread: 0.3,
            width: 64,
            height: 64,
            sharpness: RenderConfig::DEFAULT_SHARPNESS,
            target_image: None,
        };
        let optimizer = OptimizerSettings {
            method: Method::Efp,
            outer_step: 0.01,
            outer_iters: 1000,
            particles: 1000,
            init_scale: 1.0,
            lmc_step: 0.01,
            lmc_steps: 50,
            schedule: Schedule::Constant,
            anneal_start: 0.1,
            anneal_end: 0.01,
            mfld_step: 0.01,
            mfld_iters: 0,
        };
        let mut cfg = RunConfig {
            experiment,
            seed: 0,
            out_dir: PathBuf::from("runs").join(experiment.name()),
            problem,
            optimizer,
            diagnostics: DiagnosticsSettings {
                enabled: true,
                cadence: 0,
                mc_samples: 20_000,
                knn_k: 5,
            },
            checkpoint_every: 50,
            criteria: Vec::new(),
        };
        match experiment {
            Experiment::TrainNn | Experiment::Verify => {}
            Experiment::Density => {
                let (p, o) = (&mut cfg.problem, &mut cfg.optimizer);
                (p.n, p.d, p.lambda, p.lambda_prime) = (200, 1, 0.05, 0.05);
                (o.outer_step, o.outer_iters, o.particles) = (0.05, 200, 500);
                (o.lmc_step, o.lmc_steps) = (0.005, 20);
            }
            Experiment::SynthImage => {
                let (p, o) = (&mut cfg.problem, &mut cfg.optimizer);
                (p.d, p.lambda, p.lambda_prime) = (8, 1e-5, 1e-4);
                p.n = p.width * p.height;
                (o.outer_step, o.outer_iters, o.particles, o.lmc_steps) = (0.01, 300, 1000, 10);
                o.schedule = Schedule::Cosine;
                // Monte Carlo log-partition over 4096 pixel features is costly
                cfg.diagnostics.enabled = false;
            }
            Experiment::Toy1d => {
                let (p, o) = (&mut cfg.problem, &mut cfg.optimizer);
                (p.n, p.d, p.lambda, p.lambda_prime, p.target) = (1, 1, 0.1, 0.1, 1.0);
                (o.outer_step, o.outer_iters, o.particles) = (0.1, 300, 2000);
                (o.lmc_step, o.lmc_steps, o.mfld_step) = (0.05, 20, 0.05);
            }
        }
        cfg
    }

    /// Defaults for `experiment`, then `pairs` in order.
    pub fn from_pairs(experiment: Experiment, pairs: &[(String, String)]) -> CliResult<Self> {
        let mut cfg = Self::defaults(experiment);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.finish()?;
        Ok(cfg)
    }

    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let p = &mut self.problem;
        let o = &mut self.optimizer;
        let d = &mut self.diagnostics;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "output.dir" => self.out_dir = PathBuf::from(value),
            "output.checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "method" => o.method = parse(key, value)?,
            "problem.n" => p.n = parse(key, value)?,
            "problem.d" => p.d = parse(key, value)?,
            "problem.lambda" => p.lambda = parse(key, value)?,
            "problem.lambda_prime" => p.lambda_prime = parse(key, value)?,
            "problem.teacher_width" => p.teacher_width = parse(key, value)?,
            "problem.target" => p.target = parse(key, value)?,
            "problem.sigma" => p.sigma = parse(key, value)?,
            "problem.clusters" => p.clusters = parse(key, value)?,
            "problem.spread" => p.spread = parse(key, value)?,
            "problem.width" => p.width = parse(key, value)?,
            "problem.height" => p.height = parse(key, value)?,
            "problem.target_image" => p.target_image = Some(PathBuf::from(value)),
            "raster.sharpness" => p.sharpness = parse(key, value)?,
            "efp.outer_step" => o.outer_step = parse(key, value)?,
            "efp.outer_iters" => o.outer_iters = parse(key, value)?,
            "efp.particles" => o.particles = parse(key, value)?,
            "efp.init_scale" => o.init_scale = parse(key, value)?,
            "lmc.step" => o.lmc_step = parse(key, value)?,
            "lmc.steps" => o.lmc_steps = parse(key, value)?,
            "lmc.schedule" => o.schedule = parse(key, value)?,
            "lmc.anneal_start" => o.anneal_start = parse(key, value)?,
            "lmc.anneal_end" => o.anneal_end = parse(key, value)?,
            "mfld.step" => o.mfld_step = parse(key, value)?,
            "mfld.iters" => o.mfld_iters = parse(key, value)?,
            "diagnostics.enabled" => d.enabled = parse(key, value)?,
            "diagnostics.cadence" => d.cadence = parse(key, value)?,
            "diagnostics.mc_samples" => d.mc_samples = parse(key, value)?,
            "diagnostics.knn_k" => d.knn_k = parse(key, value)?,
            "verify.criteria" => {
                self.criteria = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<CliResult<_>>()?
            }
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Fills derived values and checks experiment-specific consistency.
    fn finish(&mut self) -> CliResult<()> {
        let p = &mut self.problem;
        match self.experiment {
            Experiment::SynthImage => {
                if p.d != 8 {
                    return Err(CliError::Config(format!("synth-image needs d = 8, got {}", p.d)));
                }
                p.n = p.width * p.height;
            }
            Experiment::Toy1d if (p.n, p.d) != (1, 1) => {
                return Err(CliError::Config("toy1d is fixed to n = 1, d = 1".into()));
            }
            _ => {}
        }
        if p.n == 0 || p.d == 0 {
            return Err(CliError::Config("n and d must be >= 1".into()));
        }
        if self.diagnostics.cadence == 0 {
            self.diagnostics.cadence = match self.experiment {
                Experiment::SynthImage => self.checkpoint_every.max(1),
                _ => DiagnosticsConfig::default_cadence(self.optimizer.outer_iters),
            };
        }
        if self.optimizer.mfld_iters == 0 {
            self.optimizer.mfld_iters = self.optimizer.outer_iters * self.optimizer.lmc_steps.max(1);
        }
        if self.checkpoint_every == 0 {
            return Err(CliError::Config("output.checkpoint_every must be >= 1".into()));
        }
        if let Some(c) = self.criteria.iter().find(|c| !(1..=12).contains(*c)) {
            return Err(CliError::Config(format!("no acceptance criterion {c}")));
        }
        Ok(())
    }

    /// Every settable key with its resolved value; feeding these back through
    /// [`RunConfig::from_pairs`] reproduces the configuration.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let (p, o, d) = (&self.problem, &self.optimizer, &self.diagnostics);
        let mut out: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("output.dir", self.out_dir.display().to_string()),
            ("output.checkpoint_every", self.checkpoint_every.to_string()),
            ("method", o.method.name().to_string()),
            ("problem.n", p.n.to_string()),
            ("problem.d", p.d.to_string()),
            ("problem.lambda", p.lambda.to_string()),
            ("problem.lambda_prime", p.lambda_prime.to_string()),
            ("problem.teacher_width", p.teacher_width.to_string()),
            ("problem.target", p.target.to_string()),
            ("problem.sigma", p.sigma.to_string()),
            ("problem.clusters", p.clusters.to_string()),
            ("problem.spread", p.spread.to_string()),
            ("problem.width", p.width.to_string()),
            ("problem.height", p.height.to_string()),
            ("raster.sharpness", p.sharpness.to_string()),
            ("efp.outer_step", o.outer_step.to_string()),
            ("efp.outer_iters", o.outer_iters.to_string()),
            ("efp.particles", o.particles.to_string()),
            ("efp.init_scale", o.init_scale.to_string()),
            ("lmc.step", o.lmc_step.to_string()),
            ("lmc.steps", o.lmc_steps.to_string()),
            ("lmc.schedule", o.schedule.name().to_string()),
            ("lmc.anneal_start", o.anneal_start.to_string()),
            ("lmc.anneal_end", o.anneal_end.to_string()),
            ("mfld.step", o.mfld_step.to_string()),
            ("mfld.iters", o.mfld_iters.to_string()),
            ("diagnostics.enabled", d.enabled.to_string()),
            ("diagnostics.cadence", d.cadence.to_string()),
            ("diagnostics.mc_samples", d.mc_samples.to_string()),
            ("diagnostics.knn_k", d.knn_k.to_string()),
        ];
        if let Some(t) = &p.target_image {
            out.push(("problem.target_image", t.display().to_string()));
        }
        if !self.criteria.is_empty() {
            let list: Vec<String> = self.criteria.iter().map(u32::to_string).collect();
            out.push(("verify.criteria", list.join(",")));
        }
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// [`RunConfig::to_pairs`] in the configuration-file format.
    pub fn to_file_text(&self) -> String {
        let mut text = format!("# resolved configuration of a {} run\n", self.experiment.name());
        for (k, v) in self.to_pairs() {
            text.push_str(&format!("{k} = {v}\n"));
        }
        text
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            data: self.seed,
            lmc: self.seed.wrapping_add(1),
            init: self.seed.wrapping_add(2),
            diagnostics: self.seed.wrapping_add(3),
        }
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            width: self.problem.width,
            height: self.problem.height,
            sharpness: self.problem.sharpness,
        }
    }

    pub fn lmc(&self) -> LmcConfig {
        let o = &self.optimizer;
        LmcConfig {
            step: o.lmc_step,
            steps: o.lmc_steps,
            schedule: match o.schedule {
                Schedule::Constant => StepSchedule::Constant,
                Schedule::Cosine => StepSchedule::CosineAnneal {
                    start: o.anneal_start,
                    end: o.anneal_end,
                },
            },
            seed: self.seeds().lmc,
        }
    }

    pub fn diagnostics_config(&self) -> Option<DiagnosticsConfig> {
        let d = &self.diagnostics;
        d.enabled.then_some(DiagnosticsConfig {
            cadence: d.cadence,
            mc_samples: d.mc_samples,
            knn_k: d.knn_k,
            seed: self.seeds().diagnostics,
        })
    }

    pub fn efp_config(&self) -> EfpConfig {
        let o = &self.optimizer;
        EfpConfig {
            outer_step: o.outer_step,
            outer_iters: o.outer_iters,
            particles: o.particles,
            lmc: self.lmc(),
            init_scale: o.init_scale,
            seed: self.seeds().init,
            diagnostics: self.diagnostics_config(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| CliError::Config(format!("{key} = {value:?}: {e}")))
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", lineno + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_pairs(&text)
}

/// Splits a `key=value` override.
pub fn split_override(s: &str) -> CliResult<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| CliError::Config(format!("override {s:?} is not key=value")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut pairs = parse_pairs("# comment\nefp.outer_step = 0.05\n\nproblem.n=10 # trailing\n").unwrap();
        pairs.push(split_override("problem.n=20").unwrap());
        let cfg = RunConfig::from_pairs(Experiment::TrainNn, &pairs).unwrap();
        assert_eq!(cfg.optimizer.outer_step, 0.05);
        assert_eq!(cfg.problem.n, 20);
        assert_eq!(cfg.diagnostics.cadence, 2);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let bad = |k: &str, v: &str| RunConfig::from_pairs(Experiment::TrainNn, &[(k.into(), v.into())]).is_err();
        assert!(bad("efp.outerstep", "0.1"));
        assert!(bad("problem.n", "ten"));
        assert!(bad("method", "sgd"));
        assert!(bad("verify.criteria", "1,13"));
        assert!(parse_pairs("novalue").is_err());
        assert!(RunConfig::from_pairs(Experiment::SynthImage, &[("problem.d".into(), "5".into())]).is_err());
        assert!(RunConfig::from_pairs(Experiment::Toy1d, &[("problem.n".into(), "3".into())]).is_err());
    }

    #[test]
    fn image_dimensions_follow_size() {
        let pairs = [("problem.width".to_string(), "8".to_string()), ("problem.height".into(), "4".into())];
        let cfg = RunConfig::from_pairs(Experiment::SynthImage, &pairs).unwrap();
        assert_eq!(cfg.problem.n, 32);
        assert_eq!(cfg.diagnostics.cadence, cfg.checkpoint_every);
    }

    #[test]
    fn resolved_pairs_round_trip() {
        for exp in [Experiment::TrainNn, Experiment::Density, Experiment::SynthImage, Experiment::Toy1d] {
            let mut cfg = RunConfig::from_pairs(exp, &[("seed".into(), "7".into())]).unwrap();
            cfg.problem.lambda = 0.123_456_789;
            let text = cfg.to_file_text();
            let back = RunConfig::from_pairs(exp, &parse_pairs(&text).unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }
}
