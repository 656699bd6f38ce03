//! Pipeline configuration schema. Unknown keys are rejected so that typos
//! fail fast, and every command writes the resolved configuration next to
//! its outputs.

use serde::{Deserialize, Serialize};

use arbfree::constrained_sde::TrainConfig;
use arbfree::market_sim::HestonSlvParams;
use arbfree::neural_net::Activation;
use arbfree::pipeline::DecodeConfig;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub generator: HestonSlvParams,
    /// Path to a lattice CSV; the built-in widening FX lattice when absent.
    pub lattice_path: Option<String>,
    pub decode: DecodeConfig,
    pub train: TrainConfig,
    pub simulate: SimulateConfig,
    pub vix: VixConfig,
    pub secondary: SecondaryConfig,
    pub evaluate: EvaluateConfig,
    pub sweep: SweepConfig,
    /// Seed for dataset generation.
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub steps: usize,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VixConfig {
    /// Expiry the variance-swap quadrature targets.
    pub target_tau: f64,
}

impl Default for VixConfig {
    fn default() -> Self {
        Self { target_tau: 0.25 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecondaryConfig {
    /// Number of secondary factors appended to the primary pair.
    pub count: usize,
    /// Polynomial degree of the link; paper mode requires 3.
    pub degree: usize,
    pub paper_mode: bool,
    /// Joint-simulation steps (0 skips the simulation).
    pub steps: usize,
    pub seed: u64,
}

impl Default for SecondaryConfig {
    fn default() -> Self {
        Self {
            count: 11,
            degree: 3,
            paper_mode: true,
            steps: 10_000,
            seed: 2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// (tau, m) points whose implied-vol paths are extracted.
    pub iv_picks: Vec<(f64, f64)>,
    /// Violation tolerance when counting arbitrageable samples.
    pub psas_tol: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            iv_picks: vec![(0.25, 0.0), (0.25, -0.0943), (0.25, 0.1133)],
            psas_tol: 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepVariant {
    pub name: String,
    pub hidden: Vec<usize>,
    pub sparsity: f64,
    pub activation: Activation,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub variants: Vec<SweepVariant>,
    pub epochs_xi: usize,
    pub epochs_s: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let relu = Activation::Relu;
        let mk = |name: &str, hidden: Vec<usize>, sparsity: f64, activation: Activation| {
            SweepVariant {
                name: name.to_string(),
                hidden,
                sparsity,
                activation,
            }
        };
        Self {
            variants: vec![
                mk("benchmark", vec![256, 256, 256], 0.5, relu),
                mk("depth_2", vec![256, 256], 0.5, relu),
                mk("depth_5", vec![256; 5], 0.5, relu),
                mk("width_64", vec![64, 64, 64], 0.5, relu),
                mk("width_512", vec![512, 512, 512], 0.5, relu),
                mk("sparsity_0", vec![256, 256, 256], 0.0, relu),
                mk("sparsity_0.9", vec![256, 256, 256], 0.9, relu),
                mk("tanh", vec![256, 256, 256], 0.5, Activation::Tanh),
                mk("softmax", vec![256, 256, 256], 0.5, Activation::Softmax),
            ],
            epochs_xi: 200,
            epochs_s: 100,
            steps: 10_000,
            seed: 3,
        }
    }
}
