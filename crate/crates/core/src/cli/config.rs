//! Experiment configuration files.
//!
//! A config is TOML with the sections below; every section and key is
//! optional unless the chosen subcommand needs it, and unknown keys are
//! rejected.
//!
//! ```toml
//! command = "solve"          # must match the subcommand when present
//! seed = 7                   # overridden by --seed
//!
//! [problem]
//! n = 2
//! kind = "singular"          # singular | degenerate | constant
//! k = 1.0                    # singular
//! q = 1.0                    # degenerate
//! rhs = 1.0                  # constant
//!
//! [profile]
//! a = [2.0]                  # n - 1 entries, `inf` for flat directions
//! eta = [1.0]
//! h = 0.5
//!
//! [domain]
//! kind = "ball"              # ball | box | superellipse | interior-model
//! radius = 1.0
//!
//! [grid]
//! spacing = 0.015625
//! width = 2
//!
//! [barrier]
//! mode = "singular"          # singular | degenerate
//! d0 = 0.5
//! diam = 2.0
//! samples = 10000
//! fresh_samples = 10000
//! lambda = 0.6               # degenerate
//! m_rhs = 1.0                # degenerate
//! bins = 20
//!
//! [solver]
//! tol = 1e-8
//! max_newton = 80
//! max_linear = 4000
//! max_outer = 400
//! omega = 0.3
//! outer_tol = 1e-6
//! init_scale = 1.0
//!
//! [fit]
//! source = "grid"            # grid | radial
//! x0 = [1.0, 0.0]
//! d_min = 0.0625
//! d_max = 0.2
//! depths = 12
//! predicted = 0.5
//! tolerance = 0.06
//!
//! [iterate]
//! regime = "upward"          # upward | downward
//! lambda0 = 0.75
//! steps = 30
//!
//! [sweep]
//! mode = "exponents"         # exponents | lambda
//! a = [2.0, 3.0, 4.0]
//! k = [1.0]
//! q = [1.0]
//! spacings = [0.03125]
//! solve = false
//! certify = false
//! ```

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    VerifyBarrier,
    Solve,
    FitExponent,
    IterateExponents,
    Sweep,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::VerifyBarrier => "verify-barrier",
            CommandKind::Solve => "solve",
            CommandKind::FitExponent => "fit-exponent",
            CommandKind::IterateExponents => "iterate-exponents",
            CommandKind::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<CommandKind>,
    pub seed: Option<u64>,
    pub problem: Option<ProblemConfig>,
    pub profile: Option<ProfileConfig>,
    pub domain: Option<DomainConfig>,
    pub grid: Option<GridConfig>,
    pub barrier: Option<BarrierConfig>,
    pub solver: Option<SolverConfig>,
    pub fit: Option<FitConfig>,
    pub iterate: Option<IterateConfig>,
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    #[default]
    Singular,
    Degenerate,
    Constant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default = "two")]
    pub n: usize,
    #[serde(default)]
    pub kind: ProblemKind,
    pub k: Option<f64>,
    pub q: Option<f64>,
    pub rhs: Option<f64>,
}

fn two() -> usize {
    2
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            n: 2,
            kind: ProblemKind::Singular,
            k: None,
            q: None,
            rhs: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub a: Vec<f64>,
    pub eta: Option<Vec<f64>>,
    pub h: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DomainConfig {
    Ball {
        center: Option<Vec<f64>>,
        #[serde(default = "one")]
        radius: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Superellipse {
        center: Option<Vec<f64>>,
        semi_axes: Vec<f64>,
        power: f64,
    },
    /// Uses the `[profile]` section, which must set `h`.
    InteriorModel {},
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub spacing: f64,
    pub width: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierMode {
    #[default]
    Singular,
    Degenerate,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierConfig {
    #[serde(default)]
    pub mode: BarrierMode,
    pub d0: Option<f64>,
    pub diam: Option<f64>,
    pub samples: Option<usize>,
    pub fresh_samples: Option<usize>,
    pub lambda: Option<f64>,
    pub m_rhs: Option<f64>,
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: Option<f64>,
    pub max_newton: Option<usize>,
    pub max_linear: Option<usize>,
    pub max_outer: Option<usize>,
    pub omega: Option<f64>,
    pub outer_tol: Option<f64>,
    pub init_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitSource {
    #[default]
    Grid,
    Radial,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub source: FitSource,
    pub x0: Option<Vec<f64>>,
    pub d_min: Option<f64>,
    pub d_max: Option<f64>,
    pub depths: Option<usize>,
    pub predicted: Option<f64>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    #[default]
    Upward,
    Downward,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterateConfig {
    #[serde(default)]
    pub regime: Regime,
    pub lambda0: Option<f64>,
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    #[default]
    Exponents,
    Lambda,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub mode: SweepMode,
    #[serde(default)]
    pub a: Vec<f64>,
    pub k: Option<Vec<f64>>,
    pub q: Option<Vec<f64>>,
    pub spacings: Option<Vec<f64>>,
    #[serde(default)]
    pub solve: bool,
    #[serde(default)]
    pub certify: bool,
    pub lambda0: Option<f64>,
    pub steps: Option<usize>,
}

/// Parsed config plus its source text, kept for error locations.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, column)
}

impl LoadedConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        match toml::from_str::<ExperimentConfig>(text) {
            Ok(config) => Ok(Self {
                config,
                text: text.to_string(),
            }),
            Err(e) => {
                let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
                Err(Error::Config {
                    line,
                    column,
                    message: e.message().trim().to_string(),
                })
            }
        }
    }

    /// Position of `key` inside `[section]`, falling back to the section
    /// header and then to the start of the file.
    pub fn locate(&self, section: &str, key: Option<&str>) -> (usize, usize) {
        let mut in_section = section.is_empty();
        let mut header = None;
        for (i, raw) in self.text.lines().enumerate() {
            let line = raw.trim_start();
            if line.starts_with('[') {
                let name = line.trim_start_matches('[').split(']').next().unwrap_or("").trim();
                in_section = name == section;
                if in_section && header.is_none() {
                    header = Some((i + 1, raw.len() - line.len() + 1));
                }
                continue;
            }
            if let (true, Some(key)) = (in_section, key) {
                let name = line.split('=').next().unwrap_or("").trim();
                if line.contains('=') && name == key {
                    return (i + 1, raw.len() - line.len() + 1);
                }
            }
        }
        header.unwrap_or((1, 1))
    }

    /// A configuration error pointing at `[section] key`.
    pub fn error(&self, section: &str, key: Option<&str>, message: impl Into<String>) -> Error {
        let (line, column) = self.locate(section, key);
        Error::Config {
            line,
            column,
            message: message.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_example() {
        let text = "command = \"solve\"\nseed = 3\n[problem]\nn = 2\nkind = \"degenerate\"\nq = 1.0\n\
                    [profile]\na = [inf]\n[domain]\nkind = \"superellipse\"\nsemi_axes = [1.0, 1.0]\npower = 4.0\n\
                    [grid]\nspacing = 0.05\n";
        let c = LoadedConfig::parse(text).unwrap().config;
        assert_eq!(c.command, Some(CommandKind::Solve));
        assert_eq!(c.problem.as_ref().unwrap().kind, ProblemKind::Degenerate);
        assert!(c.profile.unwrap().a[0].is_infinite());
        assert!(matches!(c.domain, Some(DomainConfig::Superellipse { power, .. }) if power == 4.0));
    }

    #[test]
    fn unknown_keys_report_position() {
        let err = LoadedConfig::parse("[problem]\nn = 2\nbogus = 1\n").unwrap_err();
        match err {
            Error::Config { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        assert!(LoadedConfig::parse("[domain]\nkind = \"ball\"\nradius = 1.0\nside = 2\n").is_err());
        assert!(LoadedConfig::parse("[grid\nspacing = 0.1").is_err());
    }

    #[test]
    fn locate_finds_keys() {
        let c = LoadedConfig::parse("seed = 1\n\n[grid]\n  spacing = 0.1\n").unwrap();
        assert_eq!(c.locate("grid", Some("spacing")), (4, 3));
        assert_eq!(c.locate("grid", Some("width")), (3, 1));
        assert_eq!(c.locate("sweep", None), (1, 1));
    }
}
