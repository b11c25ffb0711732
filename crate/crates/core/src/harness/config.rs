//! Flat `key = value` run configuration.
//!
//! ```text
//! # comment
//! scheme = coupled
//! nu = affine:1,0.1
//! sizes = 4,8,16,32
//! tau = h
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::assembly::{ModelParams, ViscosityLaw, ViscousForm};
use crate::fem::{QuadratureRule, DEFAULT_QUADRATURE_DEGREE};
use crate::schemes::{Mode, Scheme};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for {key}: {message}")]
    Value { key: String, value: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Time step choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauRule {
    /// `tau = 1/n` on an `n x n` mesh.
    MeshSize,
    Fixed(f64),
}

impl fmt::Display for TauRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TauRule::MeshSize => f.write_str("h"),
            TauRule::Fixed(t) => write!(f, "{t}"),
        }
    }
}

impl TauRule {
    pub fn step(&self, n: usize) -> f64 {
        match *self {
            TauRule::MeshSize => 1.0 / n as f64,
            TauRule::Fixed(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub mode: Mode,
    /// Physical constants; `time_step` is overwritten per mesh from `tau`.
    pub params: ModelParams,
    /// Subdivisions per side, coarse to fine.
    pub sizes: Vec<usize>,
    pub tau: TauRule,
    pub quadrature_degree: usize,
    pub out: PathBuf,
    /// Snapshot times for field export.
    pub export_times: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Decoupled,
            mode: Mode::Manufactured,
            params: ModelParams::default(),
            sizes: vec![4, 8, 16, 32],
            tau: TauRule::MeshSize,
            quadrature_degree: DEFAULT_QUADRATURE_DEGREE,
            out: PathBuf::from("out"),
            export_times: Vec::new(),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        message: e.to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_num(key, s)).collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected key = value, found '{line}'"),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::Value { key: key.to_string(), value: value.to_string(), message };
        match key {
            "scheme" => self.scheme = value.parse().map_err(bad)?,
            "mode" => self.mode = value.parse().map_err(bad)?,
            "nu" => self.params.viscosity = value.parse::<ViscosityLaw>().map_err(|e| bad(e.to_string()))?,
            "viscous_form" => {
                self.params.viscous_form = value.parse::<ViscousForm>().map_err(|e| bad(e.to_string()))?
            }
            "sizes" => self.sizes = parse_list(key, value)?,
            "size" => self.sizes = vec![parse_num(key, value)?],
            "tau" => self.tau = if value == "h" { TauRule::MeshSize } else { TauRule::Fixed(parse_num(key, value)?) },
            "T" => self.params.final_time = parse_num(key, value)?,
            "theta" => self.params.theta = parse_num(key, value)?,
            "U" => self.params.swim_speed = parse_num(key, value)?,
            "gamma" => self.params.gamma = parse_num(key, value)?,
            "g" => self.params.gravity = parse_num(key, value)?,
            "alpha" => self.params.alpha = parse_num(key, value)?,
            "k" => self.params.viscosity_bound = parse_num(key, value)?,
            "quadrature" => self.quadrature_degree = parse_num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "export_times" => self.export_times = parse_list(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parameters for an `n x n` mesh.
    pub fn params_for(&self, n: usize) -> ModelParams {
        ModelParams { time_step: self.tau.step(n), ..self.params }
    }

    /// Checks sizes, step counts and physical parameters. With `halving`,
    /// consecutive sizes must double.
    pub fn validate(&self, halving: bool) -> Result<(), ConfigError> {
        if self.sizes.is_empty() {
            return Err(ConfigError::Invalid("no mesh sizes given".into()));
        }
        if let Some(&n) = self.sizes.iter().find(|&&n| n == 0) {
            return Err(ConfigError::Invalid(format!("mesh size {n} is not positive")));
        }
        if halving {
            for w in self.sizes.windows(2) {
                if w[1] != 2 * w[0] {
                    return Err(ConfigError::Invalid(format!(
                        "mesh sizes must halve h at every step, found 1/{} followed by 1/{}",
                        w[0], w[1]
                    )));
                }
            }
        }
        for &n in &self.sizes {
            let p = self.params_for(n);
            p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            match p.step_count() {
                Some(steps) if steps >= 2 => {}
                _ => {
                    return Err(ConfigError::Invalid(format!(
                        "T = {} is not a whole number (at least 2) of steps tau = {} on the 1/{n} mesh",
                        p.final_time, p.time_step
                    )))
                }
            }
        }
        QuadratureRule::with_degree(self.quadrature_degree).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for &t in &self.export_times {
            if !(0.0..=self.params.final_time).contains(&t) {
                return Err(ConfigError::Invalid(format!("export time {t} lies outside [0, T]")));
            }
        }
        Ok(())
    }

    /// Settings echoed at the top of every report.
    pub fn header_lines(&self) -> Vec<String> {
        let p = &self.params;
        let sizes: Vec<String> = self.sizes.iter().map(|n| n.to_string()).collect();
        vec![
            format!("scheme = {}", self.scheme),
            format!("mode = {}", self.mode),
            format!("nu = {}", p.viscosity),
            format!("viscous_form = {}", p.viscous_form),
            format!("sizes = {}", sizes.join(",")),
            format!("tau = {}", self.tau),
            format!("T = {}", p.final_time),
            format!("theta = {}", p.theta),
            format!("U = {}", p.swim_speed),
            format!("gamma = {}", p.gamma),
            format!("g = {}", p.gravity),
            format!("alpha = {}", p.alpha),
            format!("k = {}", p.viscosity_bound),
            format!("quadrature = {}", self.quadrature_degree),
        ]
    }
}
