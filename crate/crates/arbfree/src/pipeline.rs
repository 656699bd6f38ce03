//! End-to-end glue between the stages: estimating the operator data panel
//! from a surface series, decoding and normalizing factors, building the
//! factor polytope, and assembling training data. The command-line driver
//! and the acceptance suite both run through these helpers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constrained_sde::{train_scalar_sde_net, TrainingData};
use crate::error::Result;
use crate::factor_decode::{
    decode, decorrelate_normalize, mape, pda, FactorSeries, PriceBasis, SearchConfig,
};
use crate::linalg::Mat;
use crate::neural_net::Activation;
use crate::polytope::Polytope;
use crate::static_arbitrage::{self, psas, ConstraintSystem};
use crate::surface::{fit_smooth_field, z_vector, SurfaceSeries, TerminalAugment};

/// Configuration of the operator-data estimate: the initial spot-volatility
/// model is trained on the leading principal components of the price panel,
/// then the differential operator is evaluated on per-snapshot smooth
/// fields.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZEstimateConfig {
    /// Number of principal components feeding the initial spot model.
    pub d0: usize,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ZEstimateConfig {
    fn default() -> Self {
        Self {
            d0: 5,
            epochs: 120,
            hidden: vec![64, 64],
            lr: 1e-3,
            seed: 7,
        }
    }
}

/// Operator data panel and the spot-volatility estimate behind it.
#[derive(Clone, Debug)]
pub struct ZEstimate {
    /// (L+1) x N panel of differential-operator values.
    pub z: Mat,
    /// Relative spot volatility `gamma_t` per observation.
    pub gamma: Vec<f64>,
}

/// Estimate the operator data `z_t` for every observation of a surface
/// series.
pub fn estimate_z(series: &SurfaceSeries, cfg: &ZEstimateConfig) -> Result<ZEstimate> {
    let rows = series.len();
    // initial factors: leading principal components of the price panel
    let p = crate::factor_decode::pca(&series.c, cfg.d0)?;
    // standardized (S, xi0) inputs
    let dim = 1 + cfg.d0;
    let mut states = Vec::with_capacity(rows);
    for l in 0..rows {
        let mut state = Vec::with_capacity(dim);
        state.push(series.spot[l]);
        state.extend_from_slice(p.scores.row(l));
        states.push(state);
    }
    let mut loc = vec![0.0; dim];
    let mut scale = vec![0.0; dim];
    for s in &states {
        for (a, v) in loc.iter_mut().zip(s) {
            *a += v;
        }
    }
    for a in &mut loc {
        *a /= rows as f64;
    }
    for s in &states {
        for ((a, v), m) in scale.iter_mut().zip(s).zip(&loc) {
            *a += (v - m) * (v - m);
        }
    }
    for a in &mut scale {
        *a = (*a / rows as f64).sqrt().max(1e-9);
    }
    let inputs: Vec<Vec<f64>> = states
        .iter()
        .map(|s| {
            s.iter()
                .zip(loc.iter().zip(&scale))
                .map(|(v, (l, sc))| (v - l) / sc)
                .collect()
        })
        .collect();
    let deltas: Vec<f64> = (0..rows - 1)
        .map(|l| series.spot[l + 1] - series.spot[l])
        .collect();
    let (net, _history) = train_scalar_sde_net(
        &inputs[..rows - 1],
        &deltas,
        rows - 1,
        series.dt(),
        &cfg.hidden,
        Activation::Relu,
        cfg.epochs,
        cfg.lr,
        0.0,
        0.5,
        Some(128),
        cfg.seed,
    )?;
    // gamma_t = sigma_S(state) / S_t
    let mut gamma = Vec::with_capacity(rows);
    for l in 0..rows {
        let out = net.forward(&inputs[l])?;
        gamma.push((out[0].exp() / series.spot[l]).max(1e-6));
    }

    let lattice = &series.lattice;
    let z_rows: Result<Vec<Vec<f64>>> = (0..rows)
        .into_par_iter()
        .map(|l| {
            let field = fit_smooth_field(lattice, series.c.row(l), TerminalAugment::Payoff)?;
            Ok(z_vector(&field, lattice, gamma[l]))
        })
        .collect();
    let z_rows = z_rows?;
    let mut z = Mat::zeros(rows, lattice.len());
    for (l, row) in z_rows.iter().enumerate() {
        z.set_row(l, row);
    }
    Ok(ZEstimate { z, gamma })
}

/// Factor-decode configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub d_dynamic: usize,
    pub d_statistical: usize,
    pub d_static: usize,
    /// Penalty weight for the static-arbitrage search; `None` picks half the
    /// admissible bound.
    pub lambda_pen: Option<f64>,
    /// Normalization constant: factor min-max ranges become `1/lambda0`.
    pub lambda0: f64,
    pub search: SearchConfig,
    pub z: ZEstimateConfig,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            d_dynamic: 1,
            d_statistical: 0,
            d_static: 1,
            lambda_pen: None,
            lambda0: 10.0,
            search: SearchConfig::default(),
            z: ZEstimateConfig::default(),
        }
    }
}

/// Everything the decode stage produces.
#[derive(Clone, Debug)]
pub struct DecodedMarket {
    pub series: FactorSeries,
    pub basis: PriceBasis,
    pub z: Mat,
    pub gamma: Vec<f64>,
    /// Factor polytope from the full constraint system.
    pub polytope: Polytope,
    /// Same feasible set with redundant rows removed.
    pub reduced: Polytope,
    pub mape: f64,
    pub pda: f64,
    pub psas: f64,
}

/// Decode, decorrelate and normalize factors from a surface series, then
/// project the static no-arbitrage system into factor space.
pub fn decode_market(
    series: &SurfaceSeries,
    cs: &ConstraintSystem,
    cfg: &DecodeConfig,
) -> Result<DecodedMarket> {
    let zest = estimate_z(series, &cfg.z)?;
    let (raw_series, raw_basis) = decode(
        &series.c,
        &zest.z,
        cfg.d_dynamic,
        cfg.d_statistical,
        cfg.d_static,
        cs,
        cfg.lambda_pen,
        &cfg.search,
    )?;
    let (xi, basis) = decorrelate_normalize(&raw_series.xi, &raw_basis, cfg.lambda0)?;
    let polytope = static_arbitrage::to_factor_space(cs, &basis.g0, &basis.g)?;
    let reduced = polytope.eliminate_redundant()?;
    let mape = mape(&series.c, &basis, &xi)?;
    let pda = pda(&zest.z, &basis)?;
    let psas = psas(&xi, &reduced)?;
    Ok(DecodedMarket {
        series: FactorSeries {
            xi,
            tags: raw_series.tags,
        },
        basis,
        z: zest.z,
        gamma: zest.gamma,
        polytope,
        reduced,
        mape,
        pda,
        psas,
    })
}

/// Assemble the training bundle for the constrained SDE from decode output.
pub fn training_data(series: &SurfaceSeries, decoded: &DecodedMarket) -> TrainingData {
    TrainingData {
        xi: decoded.series.xi.clone(),
        s: series.spot.clone(),
        z: Some(decoded.z.clone()),
        basis: Some(decoded.basis.clone()),
        polytope: decoded.reduced.clone(),
        dt: series.dt(),
    }
}
