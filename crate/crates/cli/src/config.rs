//! Run configuration: one JSON document, overridden field by field from
//! the command line.

use std::path::{Path, PathBuf};

use fading_stab::schema::{PolicySpec, ProblemSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const DEFAULT_TRIALS: usize = 10_000;
pub const DEFAULT_BLOCKS: usize = 20;
pub const DEFAULT_TOL: f64 = 1e-10;

/// Config file contents. Every field but `problem` is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub problem: Option<ProblemSpec>,
    pub policy: Option<PolicySpec>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub blocks: Option<usize>,
    pub tol: Option<f64>,
    pub uniform: Option<bool>,
    pub sweep_var: Option<SweepVar>,
    pub grid: Option<String>,
    pub out: Option<PathBuf>,
    pub svg: Option<bool>,
    pub start_state: Option<usize>,
    pub gain: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    #[value(name = "pi_1")]
    #[serde(rename = "pi_1")]
    Pi1,
    Lambda,
    N,
    Noise,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Pi1 => "pi_1",
            SweepVar::Lambda => "lambda",
            SweepVar::N => "n",
            SweepVar::Noise => "noise",
        }
    }
}

/// Values given on the command line; `None` defers to the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub blocks: Option<usize>,
    pub tol: Option<f64>,
    pub uniform: bool,
    pub sweep_var: Option<SweepVar>,
    pub grid: Option<String>,
    pub out: Option<PathBuf>,
    pub svg: bool,
    pub start_state: Option<usize>,
}

/// Fully resolved configuration; its JSON form is what gets hashed.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub problem: ProblemSpec,
    pub policy: Option<PolicySpec>,
    pub seed: u64,
    pub trials: usize,
    pub blocks: usize,
    pub tol: f64,
    pub uniform: bool,
    pub sweep_var: Option<SweepVar>,
    pub grid: Option<Grid>,
    pub out: Option<PathBuf>,
    pub svg: bool,
    pub start_state: Option<usize>,
    pub gain: Option<Vec<f64>>,
}

impl RunConfig {
    /// SHA-256 of the resolved configuration as JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Comment lines placed at the top of every CSV.
    pub fn header(&self) -> Vec<String> {
        vec![
            format!("fading-stab {} config-sha256={}", self.command, self.hash()),
            format!("config {}", serde_json::to_string(self).expect("config serializes")),
        ]
    }

    pub fn policy(&self) -> Result<fading_stab::PowerPolicy, Failure> {
        let spec = self
            .policy
            .as_ref()
            .ok_or_else(|| Failure::input("this command needs a \"policy\" in the config"))?;
        spec.to_policy().map_err(|e| Failure::input(format!("invalid policy: {e}")))
    }

    pub fn grid(&self) -> Result<&Grid, Failure> {
        self.grid.as_ref().ok_or_else(|| Failure::input("--grid START:STOP:STEP is required"))
    }
}

/// Evenly spaced, increasing grid `start, start + step, ..., stop`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Grid {
    pub fn parse(text: &str) -> Result<Grid, Failure> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(Failure::input(format!("grid {text:?} is not START:STOP:STEP")));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Failure::input(format!("grid {text:?}: {s:?} is not a number")))
        };
        let g = Grid {
            start: num(parts[0])?,
            stop: num(parts[1])?,
            step: num(parts[2])?,
        };
        if ![g.start, g.stop, g.step].iter().all(|x| x.is_finite()) {
            return Err(Failure::input(format!("grid {text:?} has non-finite entries")));
        }
        if g.stop < g.start {
            return Err(Failure::input(format!("grid {text:?} is not increasing")));
        }
        if !(g.step > 0.0) {
            return Err(Failure::input(format!("grid {text:?} needs a positive step")));
        }
        if (g.stop - g.start) / g.step > 1e7 {
            return Err(Failure::input(format!("grid {text:?} has too many points")));
        }
        Ok(g)
    }

    pub fn points(&self) -> Vec<f64> {
        let span = (self.stop - self.start) / self.step;
        let count = (span + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| {
                // strip accumulated rounding: 0.15000000000000002 -> 0.15
                let v: f64 = format!("{:.12e}", self.start + i as f64 * self.step)
                    .parse()
                    .expect("formatted float parses");
                v.min(self.stop)
            })
            .collect()
    }
}

pub fn load_file(path: &Path) -> Result<FileConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    // a bare problem document is accepted too
    let bare = value.get("plant").is_some();
    if bare {
        let problem = serde_json::from_value(value).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        return Ok(FileConfig {
            problem: Some(problem),
            ..FileConfig::default()
        });
    }
    serde_json::from_value(value).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

/// Merges flags over the file over defaults and checks what can be checked
/// before any work starts.
pub fn resolve(command: &str, file: FileConfig, flags: Overrides) -> Result<RunConfig, Failure> {
    let problem = file
        .problem
        .ok_or_else(|| Failure::input("config has no \"problem\""))?;
    let grid = match flags.grid.or(file.grid) {
        Some(text) => Some(Grid::parse(&text)?),
        None => None,
    };
    let cfg = RunConfig {
        command: command.to_string(),
        problem,
        policy: file.policy,
        seed: flags.seed.or(file.seed).unwrap_or(0),
        trials: flags.trials.or(file.trials).unwrap_or(DEFAULT_TRIALS),
        blocks: flags.blocks.or(file.blocks).unwrap_or(DEFAULT_BLOCKS),
        tol: flags.tol.or(file.tol).unwrap_or(DEFAULT_TOL),
        uniform: flags.uniform || file.uniform.unwrap_or(false),
        sweep_var: flags.sweep_var.or(file.sweep_var),
        grid,
        out: flags.out.or(file.out),
        svg: flags.svg || file.svg.unwrap_or(false),
        start_state: flags.start_state.or(file.start_state),
        gain: file.gain,
    };
    if !(cfg.tol > 0.0 && cfg.tol < 1.0) {
        return Err(Failure::input(format!("tolerance {} is not in (0, 1)", cfg.tol)));
    }
    if cfg.blocks == 0 {
        return Err(Failure::input("--blocks must be positive"));
    }
    if let Some(out) = &cfg.out {
        let dir = match out.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        if !dir.is_dir() {
            return Err(Failure::input(format!("output directory {} does not exist", dir.display())));
        }
        if out.is_dir() {
            return Err(Failure::input(format!("output path {} is a directory", out.display())));
        }
    }
    if cfg.svg && cfg.out.is_none() {
        return Err(Failure::input("--svg needs --out"));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points() {
        let g = Grid::parse("0:1:0.05").unwrap();
        let p = g.points();
        assert_eq!(p.len(), 21);
        assert_eq!(p[0], 0.0);
        assert_eq!(p[20], 1.0);
        assert_eq!(Grid::parse("2:2:1").unwrap().points(), vec![2.0]);
    }

    #[test]
    fn bad_grids() {
        for g in ["1:0:0.1", "0:1:0", "0:1", "a:1:0.1", "0:1:-1"] {
            assert!(Grid::parse(g).is_err(), "{g}");
        }
    }

    #[test]
    fn flags_override_file() {
        let file = FileConfig {
            problem: Some(
                ProblemSpec::from_json(
                    r#"{"plant": {"eigenvalues": [1.5]},
                        "channel": {"gains": [1.0], "noise_var": 1.0, "block_len": 2},
                        "fading": {"iid": [1.0]}}"#,
                )
                .unwrap(),
            ),
            seed: Some(3),
            trials: Some(50),
            ..FileConfig::default()
        };
        let flags = Overrides {
            seed: Some(7),
            ..Overrides::default()
        };
        let cfg = resolve("simulate", file.clone(), flags).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.trials, 50);
        assert_eq!(cfg.blocks, DEFAULT_BLOCKS);
        let other = resolve("simulate", file, Overrides::default()).unwrap();
        assert_ne!(cfg.hash(), other.hash());
    }
}
