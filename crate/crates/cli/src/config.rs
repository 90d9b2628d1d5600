//! Command-line flags, the optional `key = value` file, and the resolved,
//! validated experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use intermittent::map_family::{Family, ParameterBox};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "intermittent",
    version,
    about = "Batch experiments on mean-field coupled intermittent maps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Self-consistent stationary density by the inner–outer scheme
    FixedPoint,
    /// Direct iteration from h ≡ 1 and the decay of successive distances
    Converge,
    /// Finite particle system against the stationary density
    Ensemble,
    /// Grid certificate of the structural assumptions over the parameter box
    VerifyAssumptions,
    /// Sequential compositions driven by the alternating sequence {1, 2x}
    MemoryLoss,
    /// Decomposition of L_{εh0} v − L_{εh1} v for random pairs
    Perturbation,
    /// Randomized saturating instances of the convolution sequence bound
    SequenceLemma,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::FixedPoint => "fixed-point",
            Command::Converge => "converge",
            Command::Ensemble => "ensemble",
            Command::VerifyAssumptions => "verify-assumptions",
            Command::MemoryLoss => "memory-loss",
            Command::Perturbation => "perturbation",
            Command::SequenceLemma => "sequence-lemma",
        }
    }
}

/// Every flag is optional; unset flags fall back to the config file, then to
/// the per-command defaults.
#[derive(Args, Debug, Default)]
pub struct Opts {
    /// plain-text file of `key = value` lines; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub gamma_star: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub eps_star: Option<f64>,
    /// coupled-pm or remark-pm
    #[arg(long, global = true)]
    pub family: Option<String>,
    #[arg(long, global = true)]
    pub n_cells: Option<usize>,
    #[arg(long, global = true)]
    pub grading_q: Option<f64>,
    #[arg(long, global = true)]
    pub n_steps: Option<usize>,
    #[arg(long, global = true)]
    pub n_particles: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// `lo:hi`, the window on which the rate constant is fitted
    #[arg(long, global = true)]
    pub fit_window: Option<String>,
    #[arg(long, global = true)]
    pub residual_tol: Option<f64>,
    #[arg(long, global = true)]
    pub inner_tol: Option<f64>,
    #[arg(long, global = true)]
    pub outer_tol: Option<f64>,
    #[arg(long, global = true)]
    pub ks_tol: Option<f64>,
    /// nodes of the certification grid (verify-assumptions)
    #[arg(long, global = true)]
    pub assumption_nodes: Option<usize>,
    /// random (h0, h1) pairs (perturbation)
    #[arg(long, global = true)]
    pub n_pairs: Option<usize>,
    /// random instances (sequence-lemma)
    #[arg(long, global = true)]
    pub n_instances: Option<usize>,
    /// length of each instance (sequence-lemma)
    #[arg(long, global = true)]
    pub sequence_length: Option<usize>,
    /// coupling is recorded every this many steps (ensemble)
    #[arg(long, global = true)]
    pub record_every: Option<usize>,
    /// histogram bins (ensemble)
    #[arg(long, global = true)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config: field `{}`: {}", self.field, self.reason)
    }
}

fn bad(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub residual: f64,
    pub inner: f64,
    pub outer: f64,
    pub ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub gamma_star: f64,
    pub epsilon: f64,
    pub eps_star: f64,
    pub family: Family,
    pub n_cells: usize,
    pub grading_q: f64,
    pub n_steps: usize,
    pub n_particles: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub fit_window: (usize, usize),
    pub tolerances: Tolerances,
    pub assumption_nodes: usize,
    pub n_pairs: usize,
    pub n_instances: usize,
    pub sequence_length: usize,
    pub record_every: usize,
    pub bins: usize,
}

/// `key = value` lines; `#` starts a comment; keys may use `-` or `_`.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad("config", format!("line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().replace('-', "_");
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(bad(&key, format!("line {}: repeated key", i + 1)));
        }
    }
    Ok(out)
}

const KNOWN_KEYS: &[&str] = &[
    "gamma_star",
    "epsilon",
    "eps_star",
    "family",
    "n_cells",
    "grading_q",
    "n_steps",
    "n_particles",
    "seed",
    "output_dir",
    "fit_window",
    "residual_tol",
    "inner_tol",
    "outer_tol",
    "ks_tol",
    "assumption_nodes",
    "n_pairs",
    "n_instances",
    "sequence_length",
    "record_every",
    "bins",
];

struct Source<'a> {
    file: &'a BTreeMap<String, String>,
}

impl Source<'_> {
    fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| bad(key, format!("cannot parse `{raw}`: {e}"))),
        }
    }
}

fn parse_window(raw: &str) -> Result<(usize, usize), ConfigError> {
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|e| bad("fit_window", format!("`{raw}`: {e}")))
    };
    let (a, b) = raw
        .split_once(':')
        .ok_or_else(|| bad("fit_window", format!("`{raw}` is not `lo:hi`")))?;
    let (a, b) = (parse(a)?, parse(b)?);
    if a == 0 || b <= a {
        return Err(bad("fit_window", format!("need 0 < lo < hi, got {a}:{b}")));
    }
    Ok((a, b))
}

struct Defaults {
    n_cells: usize,
    n_steps: usize,
}

fn defaults(command: Command) -> Defaults {
    match command {
        Command::Converge | Command::MemoryLoss => Defaults {
            n_cells: 8192,
            n_steps: 2000,
        },
        Command::Ensemble => Defaults {
            n_cells: 4096,
            n_steps: 10_000,
        },
        _ => Defaults {
            n_cells: 4096,
            n_steps: 0,
        },
    }
}

impl ExperimentConfig {
    /// Merges flags over the file contents and validates every field.
    pub fn resolve(
        command: Command,
        opts: &Opts,
        file: &BTreeMap<String, String>,
    ) -> Result<Self, ConfigError> {
        if let Some(key) = file.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(bad(key, "unknown key in config file"));
        }
        let src = Source { file };
        let d = defaults(command);
        let gamma_star = src.get(opts.gamma_star, "gamma_star")?.unwrap_or(0.5);
        let epsilon = src.get(opts.epsilon, "epsilon")?.unwrap_or(match command {
            Command::FixedPoint | Command::VerifyAssumptions => 0.0,
            _ => 0.05,
        });
        let eps_star = src.get(opts.eps_star, "eps_star")?.unwrap_or(0.1);
        let family_raw = src
            .get(opts.family.clone(), "family")?
            .unwrap_or_else(|| "coupled-pm".into());
        let n_cells = src.get(opts.n_cells, "n_cells")?.unwrap_or(d.n_cells);
        let grading_q = src.get(opts.grading_q, "grading_q")?;
        let n_steps = src.get(opts.n_steps, "n_steps")?.unwrap_or(d.n_steps);
        let fit_window = match src.get(opts.fit_window.clone(), "fit_window")? {
            Some(raw) => parse_window(&raw)?,
            None => (10, 100),
        };

        if !(gamma_star > 0.0 && gamma_star < 1.0) {
            return Err(bad("gamma_star", format!("{gamma_star} not in (0, 1)")));
        }
        ParameterBox::new(gamma_star, eps_star).map_err(|e| bad("eps_star", e.to_string()))?;
        if !(epsilon.abs() <= eps_star) {
            return Err(bad(
                "epsilon",
                format!("|{epsilon}| exceeds eps_star = {eps_star}"),
            ));
        }
        let family: Family = family_raw
            .parse()
            .map_err(|e: intermittent::Error| bad("family", e.to_string()))?;
        if family == Family::RemarkPm && epsilon < 0.0 {
            return Err(bad("epsilon", "the remark-pm family needs epsilon >= 0"));
        }
        if !(n_cells.is_power_of_two() && (256..=65536).contains(&n_cells)) {
            return Err(bad(
                "n_cells",
                format!("{n_cells} is not a power of two in [256, 65536]"),
            ));
        }
        let grading_q = match grading_q {
            Some(q) if !(q >= 1.0 && q.is_finite()) => {
                return Err(bad("grading_q", format!("{q} < 1")))
            }
            Some(q) => q,
            None => intermittent::GradedGrid64::default_grading(gamma_star),
        };
        let needs_steps = matches!(
            command,
            Command::Converge | Command::MemoryLoss | Command::Ensemble
        );
        if needs_steps && n_steps == 0 {
            return Err(bad("n_steps", "must be positive"));
        }
        if matches!(command, Command::Converge | Command::MemoryLoss) && fit_window.1 >= n_steps {
            return Err(bad(
                "fit_window",
                format!(
                    "upper end {} must be below n_steps = {n_steps}",
                    fit_window.1
                ),
            ));
        }

        let positive = |v: Option<f64>, key: &str, default: f64| -> Result<f64, ConfigError> {
            let v = v.unwrap_or(default);
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(bad(key, format!("{v} must be positive")))
            }
        };
        let tolerances = Tolerances {
            residual: positive(
                src.get(opts.residual_tol, "residual_tol")?,
                "residual_tol",
                1e-5,
            )?,
            inner: positive(src.get(opts.inner_tol, "inner_tol")?, "inner_tol", 1e-10)?,
            outer: positive(src.get(opts.outer_tol, "outer_tol")?, "outer_tol", 1e-9)?,
            ks: positive(src.get(opts.ks_tol, "ks_tol")?, "ks_tol", 0.02)?,
        };
        let at_least = |v: Option<usize>,
                        key: &str,
                        default: usize,
                        min: usize|
         -> Result<usize, ConfigError> {
            let v = v.unwrap_or(default);
            if v >= min {
                Ok(v)
            } else {
                Err(bad(key, format!("{v} < {min}")))
            }
        };
        let output_dir = src
            .get(opts.output_dir.clone(), "output_dir")?
            .unwrap_or_else(|| PathBuf::from("out"));
        if output_dir.as_os_str().is_empty() {
            return Err(bad("output_dir", "empty path"));
        }
        Ok(ExperimentConfig {
            command,
            gamma_star,
            epsilon,
            eps_star,
            family,
            n_cells,
            grading_q,
            n_steps,
            n_particles: at_least(
                src.get(opts.n_particles, "n_particles")?,
                "n_particles",
                100_000,
                1,
            )?,
            seed: src.get(opts.seed, "seed")?.unwrap_or(0),
            output_dir,
            fit_window,
            tolerances,
            assumption_nodes: at_least(
                src.get(opts.assumption_nodes, "assumption_nodes")?,
                "assumption_nodes",
                100_000,
                16,
            )?,
            n_pairs: at_least(src.get(opts.n_pairs, "n_pairs")?, "n_pairs", 10, 1)?,
            n_instances: at_least(
                src.get(opts.n_instances, "n_instances")?,
                "n_instances",
                100,
                1,
            )?,
            sequence_length: at_least(
                src.get(opts.sequence_length, "sequence_length")?,
                "sequence_length",
                400,
                2,
            )?,
            record_every: at_least(
                src.get(opts.record_every, "record_every")?,
                "record_every",
                10,
                1,
            )?,
            bins: at_least(src.get(opts.bins, "bins")?, "bins", 100, 1)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(cmd: Command, opts: Opts, file: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::resolve(cmd, &opts, &parse_config_file(file).unwrap())
    }

    #[test]
    fn flags_override_file() {
        let opts = Opts {
            epsilon: Some(0.02),
            ..Opts::default()
        };
        let c = resolve(
            Command::FixedPoint,
            opts,
            "epsilon = 0.07\nn-cells = 512 # comment\n",
        )
        .unwrap();
        assert_eq!(c.epsilon, 0.02);
        assert_eq!(c.n_cells, 512);
        assert_eq!(c.grading_q, 4.0);
    }

    #[test]
    fn validation_names_the_field() {
        let e = resolve(
            Command::FixedPoint,
            Opts {
                n_cells: Some(1000),
                ..Opts::default()
            },
            "",
        )
        .unwrap_err();
        assert_eq!(e.field, "n_cells");
        let e = resolve(
            Command::FixedPoint,
            Opts {
                epsilon: Some(0.2),
                ..Opts::default()
            },
            "",
        )
        .unwrap_err();
        assert_eq!(e.field, "epsilon");
        let e = resolve(Command::FixedPoint, Opts::default(), "gamma_star = 1.5").unwrap_err();
        assert_eq!(e.field, "gamma_star");
        let e = resolve(Command::FixedPoint, Opts::default(), "colour = red").unwrap_err();
        assert_eq!(e.field, "colour");
        let e = resolve(
            Command::Converge,
            Opts {
                fit_window: Some("10:5".into()),
                ..Opts::default()
            },
            "",
        )
        .unwrap_err();
        assert_eq!(e.field, "fit_window");
        assert!(e
            .to_string()
            .starts_with("invalid config: field `fit_window`"));
    }

    #[test]
    fn malformed_file_lines() {
        assert!(parse_config_file("gamma_star 0.5").is_err());
        assert!(parse_config_file("seed = 1\nseed = 2").is_err());
    }

    #[test]
    fn per_command_defaults() {
        let c = resolve(Command::Converge, Opts::default(), "").unwrap();
        assert_eq!(
            (c.n_cells, c.n_steps, c.fit_window),
            (8192, 2000, (10, 100))
        );
        let c = resolve(Command::Ensemble, Opts::default(), "").unwrap();
        assert_eq!((c.n_particles, c.n_steps), (100_000, 10_000));
    }
}
