//! Scenario files: one command, its model and its options.
//!
//! A scenario is what every invocation boils down to: the flag parser builds
//! one, `spikelab run FILE` reads one, and `--out DIR` stores the one that was
//! executed next to its outputs. Options are kept as a JSON object on the
//! scenario so that files round-trip byte for byte; they are decoded into the
//! typed per-command structs below (all of which reject unknown fields) before
//! anything runs.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use spikelab::continuation::{AtlasOptions, ContinuationOptions};
use spikelab::outer::{ThresholdMethod, V0Mode};
use spikelab::pde::{CountParams, HeatmapOptions, InitialCondition, SimConfig, StepperOptions};
use spikelab::verify::Suite;
use spikelab::{ModelKind, ModelSpec, SpikeError};
use std::path::PathBuf;

/// The subcommands a scenario can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Core,
    Spectrum,
    Thresholds,
    PhaseDiagram,
    Simulate,
    Continue,
    Atlas,
    Overlay,
    Verify,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Core => "core",
            Command::Spectrum => "spectrum",
            Command::Thresholds => "thresholds",
            Command::PhaseDiagram => "phase-diagram",
            Command::Simulate => "simulate",
            Command::Continue => "continue",
            Command::Atlas => "atlas",
            Command::Overlay => "overlay",
            Command::Verify => "verify",
        }
    }

    /// Whether the command needs a full model specification.
    pub fn needs_model(&self) -> bool {
        !matches!(self, Command::PhaseDiagram | Command::Verify)
    }
}

/// A complete, serialisable invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    /// Command-specific options (see the `*Options` types).
    #[serde(default = "empty_object")]
    pub options: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SpikeError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios always serialise") + "\n"
    }

    /// Check the model requirement and decode the options once.
    pub fn validate(&self) -> Result<(), SpikeError> {
        if self.command.needs_model() && self.model.is_none() {
            return Err(SpikeError::InvalidParameter(format!(
                "command '{}' needs a model",
                self.command.as_str()
            )));
        }
        if let Some(m) = &self.model {
            m.validate()?;
        }
        match self.command {
            Command::Core => self.options::<CoreOptions>().map(drop),
            Command::Spectrum => self.options::<SpectrumOptions>().map(drop),
            Command::Thresholds => self.options::<ThresholdOptions>().map(drop),
            Command::PhaseDiagram => self.options::<PhaseOptions>().map(drop),
            Command::Simulate => self.options::<SimulateOptions>().map(drop),
            Command::Continue => self.options::<ContinueOptions>().map(drop),
            Command::Atlas => self.options::<AtlasOptions>().map(drop),
            Command::Overlay => self.options::<OverlayOptions>().map(drop),
            Command::Verify => self.options::<VerifyOptions>().map(drop),
        }
    }

    /// Decode the options for the scenario's command.
    pub fn options<T: DeserializeOwned>(&self) -> Result<T, SpikeError> {
        serde_json::from_value(self.options.clone()).map_err(|e| {
            SpikeError::InvalidParameter(format!("options of '{}': {e}", self.command.as_str()))
        })
    }

    pub fn model(&self) -> Result<ModelSpec, SpikeError> {
        self.model.ok_or_else(|| {
            SpikeError::InvalidParameter(format!(
                "command '{}' needs a model",
                self.command.as_str()
            ))
        })
    }
}

/// `core`: the fold of the core branch, or a single solve at given `B` / `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoreOptions {
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Also export the traced branch.
    pub branch: bool,
    pub y_max: f64,
    pub n: usize,
}

impl Default for CoreOptions {
    fn default() -> Self {
        Self {
            b: None,
            beta: None,
            branch: false,
            y_max: 16.0,
            n: 3200,
        }
    }
}

/// `spectrum`: core eigenvalues at a slope `B` (the fold when omitted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumOptions {
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    pub n_eigs: usize,
    /// Also scan the leading eigenvalue along the branch.
    pub scan: bool,
    pub y_max: f64,
    pub n: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            b: None,
            n_eigs: 4,
            scan: false,
            y_max: 16.0,
            n: 3200,
        }
    }
}

/// `thresholds`: `L_crit` for `K` spikes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdOptions {
    #[serde(rename = "K")]
    pub k: usize,
    pub method: ThresholdMethod,
    pub v0_mode: V0Mode,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        Self {
            k: 1,
            method: ThresholdMethod::Full,
            v0_mode: V0Mode::Corrected,
        }
    }
}

/// `phase-diagram`: regime classification over a parameter plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseOptions {
    /// Defaults to the scenario model's kind.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<ModelKind>,
    /// `NXxNY`, e.g. `50x50`.
    pub grid: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_range: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_range: Option<(f64, f64)>,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        Self {
            family: None,
            grid: "50x50".into(),
            x_range: None,
            y_range: None,
        }
    }
}

impl PhaseOptions {
    pub fn grid_size(&self) -> Result<(usize, usize), SpikeError> {
        let bad = || {
            SpikeError::InvalidParameter(format!("grid must look like 50x50, got '{}'", self.grid))
        };
        let (a, b) = self.grid.split_once(['x', 'X']).ok_or_else(bad)?;
        let nx: usize = a.trim().parse().map_err(|_| bad())?;
        let ny: usize = b.trim().parse().map_err(|_| bad())?;
        if nx == 0 || ny == 0 {
            return Err(bad());
        }
        Ok((nx, ny))
    }
}

/// `simulate`: the growing-domain run (every [`SimConfig`] field except the
/// model) plus output and checkpoint controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateOptions {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(rename = "L0")]
    pub l0: f64,
    #[serde(rename = "L_end")]
    pub l_end: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    pub n: usize,
    pub dilution: bool,
    pub init: InitialCondition,
    pub snapshot_dl: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stepper: Option<StepperOptions>,
    pub counting: CountParams,
    pub heatmap: HeatmapOptions,
    /// Write one `(x, v, u)` CSV per snapshot.
    pub snapshots: bool,
    /// Wall-clock seconds between checkpoints (written under `--out`).
    pub checkpoint_seconds: f64,
    /// Resume from a checkpoint file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        let base = SimConfig::new(
            ModelSpec::schnakenberg(0.2, 1.0, 0.01, 2.0).expect("valid defaults"),
            4.3,
        );
        Self {
            rho: base.rho,
            l0: base.l0,
            l_end: base.l_end,
            t_end: base.t_end,
            n: base.n,
            dilution: base.dilution,
            init: base.init,
            snapshot_dl: base.snapshot_dl,
            stepper: base.stepper,
            counting: base.counting,
            heatmap: HeatmapOptions::default(),
            snapshots: true,
            checkpoint_seconds: 60.0,
            resume: None,
        }
    }
}

impl SimulateOptions {
    pub fn config(&self, model: ModelSpec) -> SimConfig {
        SimConfig {
            model,
            rho: self.rho,
            l0: self.l0,
            l_end: self.l_end,
            t_end: self.t_end,
            n: self.n,
            dilution: self.dilution,
            init: self.init.clone(),
            snapshot_dl: self.snapshot_dl,
            stepper: self.stepper,
            counting: self.counting,
        }
    }
}

/// `continue`: the one-spike branch in `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinueOptions {
    /// Half-domain grid intervals.
    pub n: usize,
    #[serde(rename = "start_L")]
    pub start_length: f64,
    /// Continue towards smaller `L` as well.
    pub both_ways: bool,
    /// Also report the fold on `n` and `2n` with Richardson extrapolation.
    pub richardson: bool,
    pub continuation: ContinuationOptions,
}

impl Default for ContinueOptions {
    fn default() -> Self {
        Self {
            n: 1024,
            start_length: 1.0,
            both_ways: false,
            richardson: false,
            continuation: ContinuationOptions::default(),
        }
    }
}

/// `overlay`: a growing-domain run drawn over an atlas of steady branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OverlayOptions {
    pub simulate: SimulateOptions,
    pub atlas: AtlasOptions,
}

/// `verify`: the reference checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyOptions {
    pub suite: Suite,
    /// Run only these criteria.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criteria: Option<Vec<u8>>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            suite: Suite::PaperGoldens,
            criteria: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let p = PhaseOptions {
            grid: "50x40".into(),
            ..Default::default()
        };
        assert_eq!(p.grid_size().unwrap(), (50, 40));
        for bad in ["50", "x", "0x3", "ax2"] {
            assert!(PhaseOptions {
                grid: bad.into(),
                ..Default::default()
            }
            .grid_size()
            .is_err());
        }
    }

    #[test]
    fn unknown_option_is_rejected() {
        let text = r#"{"name":"t","command":"thresholds","model":{"kind":"schnakenberg","params":{"a":0.2,"b":1},"epsilon":0.01,"D":2},"options":{"K":1,"bogus":3}}"#;
        assert!(Scenario::from_json(text).is_err());
    }

    #[test]
    fn missing_model_is_rejected() {
        assert!(Scenario::from_json(r#"{"name":"t","command":"simulate"}"#).is_err());
        assert!(Scenario::from_json(r#"{"name":"t","command":"verify"}"#).is_ok());
    }
}
