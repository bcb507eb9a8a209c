//! Versioned JSON experiment configuration with `path=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::shapes::Shape;
use crate::error::{Error, Result};
use crate::fit::{PairSelection, DEFAULT_BASIS_LEN};
use crate::flow::{LandmarkGroup, LandmarkSystem};
use crate::ladder::{ScaleLadder, ScaleMeasure, ScaleProfile};
use crate::registration::OptimizerOptions;
use crate::spectral::SpectralGrid;

pub const CONFIG_VERSION: u32 = 1;

/// How ladder nodes are placed between `s1` and `s2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NodeRule {
    /// Nodes `k * step` for every integer `k` with `s1 <= k step <= s2`.
    Multiples {
        step: f64,
    },
    Uniform {
        intervals: usize,
    },
    Explicit {
        nodes: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSpec {
    pub s1: f64,
    pub s2: f64,
    pub rule: NodeRule,
    #[serde(default)]
    pub profile: ScaleProfile,
}

impl LadderSpec {
    pub fn build(&self) -> Result<ScaleLadder> {
        let ladder = match &self.rule {
            NodeRule::Multiples { step } => {
                if !(*step > 0.0) {
                    return Err(Error::Config(format!(
                        "ladder step must be positive, got {step}"
                    )));
                }
                let first = (self.s1 / step).round() as usize;
                let last = (self.s2 / step).round() as usize;
                ScaleLadder::multiples(*step, first, last)?
            }
            NodeRule::Uniform { intervals } => ScaleLadder::uniform(self.s1, self.s2, *intervals)?,
            NodeRule::Explicit { nodes } => ScaleLadder::new(nodes.clone())?,
        };
        let tol = 1e-9 * self.s2.abs().max(1.0);
        if (ladder.s1() - self.s1).abs() > tol || (ladder.s2() - self.s2).abs() > tol {
            return Err(Error::Config(format!(
                "ladder nodes span [{}, {}], configured [{}, {}]",
                ladder.s1(),
                ladder.s2(),
                self.s1,
                self.s2
            )));
        }
        Ok(ladder)
    }
}

/// Which evaluator backs the registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    /// Gaussian-basis fit of the measure's spectra (Lebesgue or sum of Diracs).
    Fitted,
    /// Closed form (Dirac measure).
    ClosedForm,
    /// Closed-form kernel integrated over the atom location.
    IntegratedDirac,
    /// Numerical inverse transform of the spectra (slow reference).
    Spectral,
    /// The numerical inverse transform sampled on a radial grid.
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub backend: BackendChoice,
    pub basis_len: usize,
    pub frequencies: usize,
    pub pairs: PairSelection,
    pub interpolate: bool,
    /// Fits whose worst relative residual exceeds this fail the command.
    pub max_residual: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            backend: BackendChoice::Fitted,
            basis_len: DEFAULT_BASIS_LEN,
            frequencies: SpectralGrid::DEFAULT_LEN,
            pairs: PairSelection::All,
            interpolate: false,
            max_residual: 1e-2,
        }
    }
}

/// Template and target at one base scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSpec {
    pub scale: f64,
    pub template: Shape,
    pub target: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub size: [usize; 2],
    /// Fraction of the landmark extent added on every side.
    pub margin: f64,
    /// Explicit `[xmin, ymin, xmax, ymax]`; overrides the margin rule.
    pub bbox: Option<[f64; 4]>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            size: [64, 64],
            margin: 0.1,
            bbox: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "scales", rename_all = "snake_case")]
pub enum ScaleSelection {
    AllNodes,
    List(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSpec {
    pub scales: ScaleSelection,
    pub residuals: bool,
    pub svg: bool,
    /// Side of the grid used for the residual reconstruction check.
    pub check_grid: usize,
}

impl Default for ExportSpec {
    fn default() -> Self {
        Self {
            scales: ScaleSelection::AllNodes,
            residuals: true,
            svg: false,
            check_grid: 16,
        }
    }
}

/// Optional pass/fail thresholds; a miss exits with the threshold code.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Endpoint RMSE per base scale as a fraction of the target diameter.
    pub max_rmse_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    pub ladder: LadderSpec,
    pub measure: ScaleMeasure,
    #[serde(default)]
    pub kernel: KernelSpec,
    pub base: Vec<BaseSpec>,
    pub steps: usize,
    pub weight: f64,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub export: ExportSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?,
        )
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies `path=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let ladder = self
            .ladder
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.measure
            .validate(&ladder)
            .map_err(|e| Error::Config(e.to_string()))?;
        match (self.kernel.backend, self.measure) {
            (BackendChoice::ClosedForm, ScaleMeasure::Dirac { .. }) => {}
            (BackendChoice::ClosedForm, m) => {
                return Err(Error::Config(format!(
                    "closed-form backend needs a Dirac measure, got {m:?}"
                )))
            }
            (
                BackendChoice::Fitted | BackendChoice::Spectral | BackendChoice::Tabulated,
                ScaleMeasure::Dirac { .. },
            ) => {
                return Err(Error::Config(
                    "Dirac measures use the closed_form backend".into(),
                ))
            }
            _ => {}
        }
        if matches!(self.measure, ScaleMeasure::Lebesgue { .. })
            && self.ladder.profile != ScaleProfile::Piecewise
        {
            return Err(Error::Config(
                "the Lebesgue measure needs the piecewise profile".into(),
            ));
        }
        if self.kernel.basis_len == 0
            || self.kernel.basis_len > self.kernel.frequencies
            || self.kernel.frequencies < 2
        {
            return Err(Error::Config(
                "need 0 < basis_len <= frequencies and at least 2 frequencies".into(),
            ));
        }
        if self.base.is_empty() {
            return Err(Error::Config("at least one base scale is required".into()));
        }
        for b in &self.base {
            if ladder.node_index(b.scale).is_none() {
                return Err(Error::Config(format!(
                    "base scale {} is not a ladder node",
                    b.scale
                )));
            }
            b.template.validate()?;
            b.target.validate()?;
            if b.template.len() != b.target.len() {
                return Err(Error::Config(format!(
                    "base scale {}: template has {} points, target {}",
                    b.scale,
                    b.template.len(),
                    b.target.len()
                )));
            }
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::Config(format!(
                "weight must be nonnegative, got {}",
                self.weight
            )));
        }
        if self.grid.size[0] < 2 || self.grid.size[1] < 2 || !(self.grid.margin >= 0.0) {
            return Err(Error::Config(
                "grid needs at least 2x2 nodes and a nonnegative margin".into(),
            ));
        }
        if let ScaleSelection::List(scales) = &self.export.scales {
            if let Some(s) = scales.iter().find(|s| ladder.clamp(**s).is_err()) {
                return Err(Error::Config(format!(
                    "export scale {s} outside the ladder"
                )));
            }
        }
        Ok(())
    }

    pub fn ladder(&self) -> Result<ScaleLadder> {
        self.ladder.build()
    }

    pub fn landmark_system(&self) -> Result<LandmarkSystem> {
        let to_vec = |p: Vec<[f64; 2]>| p.into_iter().map(|q| q.to_vec()).collect();
        let groups = self
            .base
            .iter()
            .map(|b| {
                Ok(LandmarkGroup {
                    scale: b.scale,
                    points: to_vec(b.template.generate()?),
                    targets: to_vec(b.target.generate()?),
                })
            })
            .collect::<Result<_>>()?;
        LandmarkSystem::new(2, self.weight, groups)
    }

    /// Export scales: every ladder node, or the configured list.
    pub fn export_scales(&self) -> Result<Vec<f64>> {
        Ok(match &self.export.scales {
            ScaleSelection::AllNodes => self.ladder()?.nodes().to_vec(),
            ScaleSelection::List(s) => s.clone(),
        })
    }
}

/// Sets `path` (dot-separated keys, numeric segments index arrays) to
/// `value`, parsed as JSON when possible and as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::Config(format!(
            "override `{assignment}` is not of the form path=value"
        ))
    })?;
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert((*key).to_string(), new);
                    return Ok(());
                }
                map.entry((*key).to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = key.parse().map_err(|_| {
                    Error::Config(format!("`{key}` in `{path}` is not an array index"))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    Error::Config(format!("index {idx} out of range ({len}) in `{path}`"))
                })?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(Error::Config(format!(
                    "cannot descend into `{key}` of `{path}`"
                )))
            }
        };
    }
    Err(Error::Config("empty override path".into()))
}
