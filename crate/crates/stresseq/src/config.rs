//! Flat `key = value` run configuration.
//!
//! ```text
//! problem = cook
//! k = 1
//! mu = 1
//! inv_lambda = 0
//! theta = 0.5
//! steps = 14
//! ```
//!
//! `#` starts a comment line. Every key is optional except `problem`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stresseq_core::adaptivity::{EstimatorChoice, RefinementStrategy};

/// Environment variable that replaces `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "STRESSEQ_OUTPUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("mesh file {0} does not exist")]
    MissingMesh(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemName {
    Cook,
    ManufacturedSmooth,
    SquareLShape,
}

impl ProblemName {
    pub const ALL: [ProblemName; 3] = [ProblemName::Cook, ProblemName::ManufacturedSmooth, ProblemName::SquareLShape];

    pub fn as_str(&self) -> &'static str {
        match self {
            ProblemName::Cook => "cook",
            ProblemName::ManufacturedSmooth => "manufactured-smooth",
            ProblemName::SquareLShape => "square-lshape",
        }
    }
}

impl FromStr for ProblemName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| "expected one of cook, manufactured-smooth, square-lshape".to_string())
    }
}

/// Drops a `#` comment that starts the line or follows whitespace.
fn strip_comment(line: &str) -> &str {
    let b = line.as_bytes();
    match (0..b.len()).find(|&i| b[i] == b'#' && (i == 0 || b[i - 1].is_ascii_whitespace())) {
        Some(i) => &line[..i],
        None => line,
    }
}

impl fmt::Display for ProblemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn estimator_str(e: EstimatorChoice) -> &'static str {
    match e {
        EstimatorChoice::Equilibrated => "equilibrated",
        EstimatorChoice::Residual => "residual",
    }
}

fn refinement_str(r: RefinementStrategy) -> &'static str {
    match r {
        RefinementStrategy::Doerfler => "doerfler",
        RefinementStrategy::Uniform => "uniform",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub problem: ProblemName,
    /// Replaces the built-in initial mesh. Relative paths are resolved
    /// against the directory of the configuration file.
    pub mesh: Option<PathBuf>,
    pub k: usize,
    pub mu: f64,
    pub inv_lambda: f64,
    pub theta: f64,
    pub steps: usize,
    pub max_dofs: usize,
    pub estimator: EstimatorChoice,
    pub refinement: RefinementStrategy,
    pub c_k: Option<f64>,
    pub c_a: Option<f64>,
    pub output_dir: PathBuf,
    /// Worker threads, 0 for the rayon default.
    pub threads: usize,
    pub write_meshes: bool,
}

impl Config {
    pub fn new(problem: ProblemName) -> Self {
        Config {
            problem,
            mesh: None,
            k: 1,
            mu: 1.0,
            inv_lambda: 0.0,
            theta: 0.5,
            steps: 10,
            max_dofs: 200_000,
            estimator: EstimatorChoice::Equilibrated,
            refinement: RefinementStrategy::Doerfler,
            c_k: None,
            c_a: None,
            output_dir: PathBuf::from("output"),
            threads: 0,
            write_meshes: false,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut seen: Vec<String> = Vec::new();
        let mut problem = None;
        let mut pending = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = strip_comment(raw).trim();
            if l.is_empty() {
                continue;
            }
            let (key, value) = l.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
            }
            seen.push(key.to_string());
            if key == "problem" {
                problem = Some(parse_value::<ProblemName>(key, value)?);
            } else {
                pending.push((line, key, value));
            }
        }
        let mut c = Config::new(problem.ok_or(ConfigError::Missing("problem"))?);
        for (line, key, value) in pending {
            match key {
                "mesh" => c.mesh = Some(PathBuf::from(value)),
                "k" => c.k = parse_value(key, value)?,
                "mu" => c.mu = parse_value(key, value)?,
                "inv_lambda" => c.inv_lambda = parse_value(key, value)?,
                "theta" => c.theta = parse_value(key, value)?,
                "steps" => c.steps = parse_value(key, value)?,
                "max_dofs" => c.max_dofs = parse_value(key, value)?,
                "estimator" => {
                    c.estimator = match value {
                        "equilibrated" => EstimatorChoice::Equilibrated,
                        "residual" => EstimatorChoice::Residual,
                        _ => return Err(invalid(key, value, "expected equilibrated or residual")),
                    }
                }
                "refinement" => {
                    c.refinement = match value {
                        "doerfler" => RefinementStrategy::Doerfler,
                        "uniform" => RefinementStrategy::Uniform,
                        _ => return Err(invalid(key, value, "expected doerfler or uniform")),
                    }
                }
                "c_k" => c.c_k = Some(parse_value(key, value)?),
                "c_a" => c.c_a = Some(parse_value(key, value)?),
                "output_dir" => c.output_dir = PathBuf::from(value),
                "threads" => c.threads = parse_value(key, value)?,
                "write_meshes" => c.write_meshes = parse_value(key, value)?,
                _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut c = Self::parse(&text)?;
        if let (Some(m), Some(dir)) = (&c.mesh, path.parent()) {
            if m.is_relative() {
                c.mesh = Some(dir.join(m));
            }
        }
        Ok(c)
    }

    /// Range checks that do not need the problem data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, key: &str, value: String, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(invalid(key, &value, reason))
            }
        };
        check((1..=2).contains(&self.k), "k", self.k.to_string(), "supported degrees are 1 and 2")?;
        check(self.mu > 0.0 && self.mu.is_finite(), "mu", self.mu.to_string(), "must be positive")?;
        check(self.inv_lambda >= 0.0 && self.inv_lambda.is_finite(), "inv_lambda", self.inv_lambda.to_string(), "must be non-negative")?;
        check(self.theta > 0.0 && self.theta <= 1.0, "theta", self.theta.to_string(), "must lie in (0, 1]")?;
        check(self.steps >= 1, "steps", self.steps.to_string(), "must be at least 1")?;
        if let Some(c_k) = self.c_k {
            check(c_k >= 2.0 && c_k.is_finite(), "c_k", c_k.to_string(), "must be at least 2")?;
        }
        if let Some(c_a) = self.c_a {
            check(c_a > 0.0 && c_a.is_finite(), "c_a", c_a.to_string(), "must be positive")?;
        }
        Ok(())
    }

    /// The output directory, honouring [`OUTPUT_DIR_ENV`].
    pub fn effective_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => self.output_dir.clone(),
        }
    }

    pub fn emit(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("problem", self.problem.to_string());
        if let Some(m) = &self.mesh {
            kv("mesh", m.display().to_string());
        }
        kv("k", self.k.to_string());
        kv("mu", self.mu.to_string());
        kv("inv_lambda", self.inv_lambda.to_string());
        kv("theta", self.theta.to_string());
        kv("steps", self.steps.to_string());
        kv("max_dofs", self.max_dofs.to_string());
        kv("estimator", estimator_str(self.estimator).to_string());
        kv("refinement", refinement_str(self.refinement).to_string());
        if let Some(c) = self.c_k {
            kv("c_k", c.to_string());
        }
        if let Some(c) = self.c_a {
            kv("c_a", c.to_string());
        }
        kv("output_dir", self.output_dir.display().to_string());
        kv("threads", self.threads.to_string());
        kv("write_meshes", self.write_meshes.to_string());
        out
    }
}

fn invalid(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::InvalidValue { key: key.to_string(), value: value.to_string(), reason: reason.to_string() }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| invalid(key, value, &e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_and_overrides() {
        let c = Config::parse("problem = cook # membrane\n# comment\nsteps=14\ninv_lambda = 1e-3\nmesh = a#b.msh\n").unwrap();
        assert_eq!(c.problem, ProblemName::Cook);
        assert_eq!(c.steps, 14);
        assert_eq!(c.inv_lambda, 1e-3);
        assert_eq!(c.theta, 0.5);
        assert_eq!(c.mesh, Some(PathBuf::from("a#b.msh")));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Config::parse("steps = 3\n"), Err(ConfigError::Missing("problem"))));
        assert!(matches!(Config::parse("problem = cook\nfoo = 1\n"), Err(ConfigError::UnknownKey { line: 2, .. })));
        assert!(matches!(Config::parse("problem = cook\nk = 1\nk = 2\n"), Err(ConfigError::DuplicateKey { .. })));
        assert!(matches!(Config::parse("problem = cook\ntheta = 1.5\n"), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(Config::parse("problem = cook\nc_k = 1.5\n"), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(Config::parse("problem = disc\n"), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(Config::parse("problem cook\n"), Err(ConfigError::Syntax { line: 1 })));
    }

    fn config() -> impl Strategy<Value = Config> {
        (
            prop::sample::select(ProblemName::ALL.to_vec()),
            prop::option::of("[a-z][a-z0-9_/.]{0,12}"),
            1usize..=2,
            (1e-3..1e3f64, prop_oneof![Just(0.0), 0.0..1e4f64], 1e-3..=1.0f64),
            (1usize..40, 1usize..1_000_000, 0usize..16, any::<bool>()),
            (any::<bool>(), any::<bool>()),
            (prop::option::of(2.0..100.0f64), prop::option::of(1e-3..100.0f64)),
            "[a-z][a-z0-9_/.]{0,12}",
        )
            .prop_map(|(problem, mesh, k, (mu, inv_lambda, theta), (steps, max_dofs, threads, write_meshes), (e, r), (c_k, c_a), out)| Config {
                problem,
                mesh: mesh.map(PathBuf::from),
                k,
                mu,
                inv_lambda,
                theta,
                steps,
                max_dofs,
                estimator: if e { EstimatorChoice::Equilibrated } else { EstimatorChoice::Residual },
                refinement: if r { RefinementStrategy::Doerfler } else { RefinementStrategy::Uniform },
                c_k,
                c_a,
                output_dir: PathBuf::from(out),
                threads,
                write_meshes,
            })
    }

    proptest! {
        #[test]
        fn emit_then_parse_is_identity(c in config()) {
            prop_assert_eq!(Config::parse(&c.emit()).unwrap(), c);
        }
    }
}
