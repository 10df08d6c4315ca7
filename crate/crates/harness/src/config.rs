//! Experiment configuration. JSON, unknown keys rejected.

use std::fs;
use std::path::Path;

use neurode::models::Divergence;
use neurode::odeint::SolverConfig;
use neurode::sensitivity::Sensitivity;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ClassifyMoons,
    ClassifyCircles,
    DensityGaussians,
    OscillatorRegression,
}

impl Task {
    pub fn is_classification(self) -> bool {
        matches!(self, Task::ClassifyMoons | Task::ClassifyCircles)
    }

    pub fn input_dim(self) -> usize {
        2
    }

    fn default_noise(self) -> f64 {
        match self {
            Task::ClassifyMoons => 0.1,
            Task::ClassifyCircles => 0.05,
            Task::DensityGaussians => 0.2,
            Task::OscillatorRegression => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain network field.
    #[default]
    Vanilla,
    /// Network of depth-varying `GalLinear` layers.
    Galerkin,
    /// `(∂H/∂p, −∂H/∂q)` for a scalar network `H`.
    Hamiltonian,
    /// `−∇E` for a scalar network `E`.
    Stable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Hidden layer widths, tanh between layers.
    pub widths: Vec<usize>,
    pub augment_dims: usize,
    pub order: usize,
    /// Fourier terms per Galerkin layer.
    pub basis_terms: usize,
    /// Concatenate depth to the field's input (ignored by Galerkin fields).
    pub depth_cat: bool,
    /// Divergence for density tasks.
    pub divergence: Divergence,
    pub span: [f64; 2],
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            variant: Variant::Vanilla,
            widths: vec![64],
            augment_dims: 0,
            order: 1,
            basis_terms: 3,
            depth_cat: true,
            divergence: Divergence::Exact,
            span: [0.0, 1.0],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntegralSpec {
    #[default]
    None,
    /// `λ ∫ ‖f‖² ds`, averaged over the batch.
    Kinetic { lambda: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSpec {
    pub learning_rate: f64,
    pub momentum: f64,
    pub steps: usize,
    pub batch_size: usize,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            steps: 500,
            batch_size: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    /// Observation noise; a per-task default when absent.
    pub noise: Option<f64>,
    /// Oscillator horizon `T`.
    pub horizon: Option<f64>,
}

impl DataSpec {
    pub fn n_train(&self) -> usize {
        self.n_train.unwrap_or(1000)
    }

    pub fn n_test(&self) -> usize {
        self.n_test.unwrap_or(1000)
    }

    pub fn noise(&self, task: Task) -> f64 {
        self.noise.unwrap_or_else(|| task.default_noise())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon.unwrap_or(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sensitivity: Sensitivity,
    #[serde(default)]
    pub integral_loss: IntegralSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub seed: u64,
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// State width seen by the field.
    pub fn state_dim(&self) -> usize {
        self.task.input_dim() + self.model.augment_dims
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let m = &self.model;
        let o = &self.optimizer;
        self.solver.validate().map_err(|e| bad(e.to_string()))?;
        if m.widths.is_empty() || m.widths.contains(&0) {
            return Err(bad("model.widths needs at least one positive width"));
        }
        if m.order == 0 || self.state_dim() % m.order != 0 {
            return Err(bad(format!(
                "model.order {} must divide the state dimension {}",
                m.order,
                self.state_dim()
            )));
        }
        if !(m.span[0].is_finite() && m.span[1].is_finite() && m.span[0] < m.span[1]) {
            return Err(bad("model.span must be an increasing pair of finite depths"));
        }
        match m.variant {
            Variant::Hamiltonian | Variant::Stable if m.order != 1 => {
                return Err(bad("energy variants need model.order = 1"));
            }
            Variant::Hamiltonian if self.state_dim() % 2 != 0 => {
                return Err(bad("hamiltonian variant needs an even state dimension"));
            }
            Variant::Galerkin if m.basis_terms == 0 => {
                return Err(bad("galerkin variant needs model.basis_terms ≥ 1"));
            }
            _ => {}
        }
        if self.task == Task::DensityGaussians {
            if m.order != 1 {
                return Err(bad("density task needs model.order = 1"));
            }
            if !m.divergence.is_active() {
                return Err(bad("density task needs model.divergence to be exact or hutchinson"));
            }
            if self.integral_loss != IntegralSpec::None {
                return Err(bad("integral_loss is not supported for the density task"));
            }
        }
        if let IntegralSpec::Kinetic { lambda } = self.integral_loss {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(bad("integral_loss.lambda must be finite and non-negative"));
            }
        }
        if !(o.learning_rate.is_finite() && o.learning_rate > 0.0) {
            return Err(bad("optimizer.learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(bad("optimizer.momentum must lie in [0, 1)"));
        }
        if o.batch_size == 0 {
            return Err(bad("optimizer.batch_size must be positive"));
        }
        if self.data.n_train() == 0 || self.data.n_test() == 0 {
            return Err(bad("data.n_train and data.n_test must be positive"));
        }
        if !(self.data.noise(self.task).is_finite() && self.data.noise(self.task) >= 0.0) {
            return Err(bad("data.noise must be finite and non-negative"));
        }
        Ok(())
    }
}
