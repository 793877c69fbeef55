use std::path::{Path, PathBuf};

use anyhow::Context;
use beamstab::{BeamParams, ControllerParams, Mode, SimConfig, SpatialGrid};
use serde::Deserialize;

/// Raised for configuration problems; mapped to exit code 2.
#[derive(Debug)]
pub struct InvalidConfig(pub String);

impl std::fmt::Display for InvalidConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for InvalidConfig {}

/// Contents of a TOML config file. Missing keys take the reference values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub epsilon: Option<f64>,
    pub mu: Option<f64>,
    pub a: Option<f64>,
    pub theta: Option<f64>,
    pub xi: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub n: Option<usize>,
    pub dt_cfl: Option<f64>,
    pub t_final: Option<f64>,
    /// Multiplier on the reference initial data.
    pub initial_scale: Option<f64>,
    pub mode: Option<String>,
    pub snapshot_stride: Option<usize>,
    /// `(δ₁, δ₂)` pairs for `sweep`.
    pub pairs: Option<Vec<[f64; 2]>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| InvalidConfig(format!("{}: {e}", path.display())).into())
    }
}

/// Command-line overrides shared by all commands.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub mode: Option<String>,
    pub n: Option<usize>,
    pub cfl: Option<f64>,
    pub t_final: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub pairs: Option<String>,
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: BeamParams,
    pub ctrl: ControllerParams,
    pub n: usize,
    pub cfl: f64,
    pub t_final: f64,
    pub mode: Mode,
    pub initial_scale: f64,
    pub snapshot_stride: usize,
    pub pairs: Vec<(f64, f64)>,
    pub out: PathBuf,
}

const DEFAULT_PAIRS: [(f64, f64); 4] = [(2.0, 2.0), (4.0, 4.0), (6.0, 6.0), (8.0, 8.0)];

fn parse_mode(s: &str) -> Result<Mode, InvalidConfig> {
    match s {
        "open" => Ok(Mode::OpenLoop),
        "closed" => Ok(Mode::ClosedLoop),
        other => Err(InvalidConfig(format!("mode must be `open` or `closed`, got `{other}`"))),
    }
}

/// Parses `d1:d2,d1:d2,...`.
pub fn parse_pairs(s: &str) -> Result<Vec<(f64, f64)>, InvalidConfig> {
    s.split(',')
        .map(|item| {
            let (a, b) = item
                .split_once(':')
                .ok_or_else(|| InvalidConfig(format!("pair `{item}` is not of the form d1:d2")))?;
            let num = |t: &str| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| InvalidConfig(format!("`{t}` is not a number")))
            };
            Ok((num(a)?, num(b)?))
        })
        .collect()
}

impl RunConfig {
    /// Merges file values, overrides and defaults. Beam and grid parameters
    /// are validated; the controller pair is validated by the commands that
    /// use it, so `sweep` can record invalid pairs.
    pub fn resolve(file: FileConfig, ov: &Overrides, out: PathBuf) -> anyhow::Result<Self> {
        let r = BeamParams::REFERENCE;
        let params = BeamParams {
            epsilon: file.epsilon.unwrap_or(r.epsilon),
            mu: file.mu.unwrap_or(r.mu),
            a: file.a.unwrap_or(r.a),
            theta: file.theta.unwrap_or(r.theta),
            xi: file.xi.unwrap_or(r.xi),
        }
        .validate()?;
        let c = ControllerParams::REFERENCE;
        let ctrl = ControllerParams {
            delta1: ov.delta1.or(file.delta1).unwrap_or(c.delta1),
            delta2: ov.delta2.or(file.delta2).unwrap_or(c.delta2),
        };
        let n = ov.n.or(file.n).unwrap_or(200);
        SpatialGrid::new(n)?;
        let mode = match ov.mode.as_deref().or(file.mode.as_deref()) {
            Some(m) => parse_mode(m)?,
            None => Mode::ClosedLoop,
        };
        let pairs = match (&ov.pairs, file.pairs) {
            (Some(s), _) => parse_pairs(s)?,
            (None, Some(p)) => p.into_iter().map(|[a, b]| (a, b)).collect(),
            (None, None) => DEFAULT_PAIRS.to_vec(),
        };
        let initial_scale = file.initial_scale.unwrap_or(1.0);
        if !initial_scale.is_finite() {
            return Err(InvalidConfig("initial_scale is not finite".into()).into());
        }
        let run = Self {
            params,
            ctrl,
            n,
            cfl: ov.cfl.or(file.dt_cfl).unwrap_or(0.8),
            t_final: ov.t_final.or(file.t_final).unwrap_or(20.0),
            mode,
            initial_scale,
            snapshot_stride: file.snapshot_stride.unwrap_or(25),
            pairs,
            out,
        };
        run.sim_config().validate()?;
        Ok(run)
    }

    pub fn grid(&self) -> SpatialGrid {
        SpatialGrid::new(self.n).expect("grid validated in resolve")
    }

    pub fn sim_config(&self) -> SimConfig {
        let mut cfg = SimConfig::new(self.mode, self.cfl, self.t_final);
        cfg.snapshot_stride = self.snapshot_stride;
        cfg
    }
}
