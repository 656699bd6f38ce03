//! Polytope-constrained neural SDE: the diffusion-shrinking and
//! drift-correction operators that keep the process inside `{V y >= b}`, the
//! Euler-Maruyama quasi-likelihood with its triangular shortcuts, the
//! training loop with a multiplicative drift baseline, and the market price
//! of risk diagnostics.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_decode::{interior_transitions, PriceBasis};
use crate::linalg::{self, dot, norm2, solve_lower, solve_lower_transpose, Mat};
use crate::neural_net::{
    adam_step, batch_gradient, Activation, AdamState, DriftDiffusionHead, Mlp,
};
use crate::polytope::{InteriorPointSet, Polytope};

/// Distance below which a state counts as sitting on a boundary.
pub const BOUNDARY_SNAP: f64 = 1e-12;
/// Projection-residual threshold for the rank filter in the shrink basis.
const RANK_TOL: f64 = 1e-10;

/// Parameters of the boundary operators.
///
/// `h_sigma(x) = 1 - 1/(1 + x/h_sigma_scale)` shrinks the diffusion towards
/// nearby facets; `h_mu(x) = eps_mu_star (e^x - 1)/(e^{rho_star} - 1)` sets
/// the drift tolerance that switches the correction off away from the
/// boundary band.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryOperatorParams {
    pub rho_star: f64,
    pub eps_mu_star: f64,
    pub h_sigma_scale: f64,
    pub adaptive_shrinking: bool,
    pub interior: InteriorPointSet,
}

impl BoundaryOperatorParams {
    /// Build operator parameters for a polytope, computing the rho*-interior
    /// anchor points.
    pub fn for_polytope(
        polytope: &Polytope,
        rho_star: f64,
        eps_mu_star: f64,
        h_sigma_scale: f64,
        adaptive_shrinking: bool,
    ) -> Result<Self> {
        let interior = polytope.interior_points(rho_star)?;
        Ok(Self {
            rho_star,
            eps_mu_star,
            h_sigma_scale,
            adaptive_shrinking,
            interior,
        })
    }

    pub fn h_sigma(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        1.0 - 1.0 / (1.0 + x / self.h_sigma_scale)
    }

    pub fn h_mu(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        self.eps_mu_star * (x.exp() - 1.0) / (self.rho_star.exp() - 1.0)
    }
}

/// Shrink decomposition at a state: orthonormal rows `q_k` with scales
/// `eps_k`, giving `P = diag(sqrt(eps)) Q`.
#[derive(Clone, Debug)]
pub struct Shrink {
    /// d x d matrix with orthonormal rows.
    pub q: Mat,
    pub eps: Vec<f64>,
}

impl Shrink {
    /// The transformation matrix `P = diag(sqrt(eps)) Q`.
    pub fn matrix(&self) -> Mat {
        let d = self.eps.len();
        let mut p = self.q.clone();
        for i in 0..d {
            let s = self.eps[i].max(0.0).sqrt();
            for j in 0..d {
                p[(i, j)] *= s;
            }
        }
        p
    }

    /// `ln |P|^2 = sum_k ln eps_k` (|det Q| = 1).
    pub fn ln_det_sq(&self) -> f64 {
        self.eps.iter().map(|e| e.ln()).sum()
    }
}

fn orthonormalize_against(v: &[f64], basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let mut resid = v.to_vec();
    // two Gram-Schmidt passes: near-parallel normals would otherwise leave
    // O(eps / residual) orthogonality error in the shrink basis
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, &resid);
            linalg::axpy(-c, q, &mut resid);
        }
    }
    let nrm = norm2(&resid);
    if nrm <= RANK_TOL {
        return None;
    }
    for x in &mut resid {
        *x /= nrm;
    }
    Some(resid)
}

fn complete_basis(ortho: &mut Vec<Vec<f64>>, eps: &mut Vec<f64>, d: usize) {
    for j in 0..d {
        if ortho.len() == d {
            break;
        }
        let mut v = vec![0.0; d];
        v[j] = 1.0;
        if let Some(q) = orthonormalize_against(&v, ortho) {
            ortho.push(q);
            eps.push(1.0);
        }
    }
}

/// Construct the diffusion shrink decomposition at `y`.
///
/// Boundaries are ranked by shrink scale `h_sigma(rho_k(y))` ascending; the
/// first `d` linearly independent normals are orthonormalized by
/// Gram-Schmidt and any unfilled directions complete the basis with scale
/// one (no nearby boundary constrains them). With `adaptive_shrinking`, the
/// scales follow the compounded-shrinking correction: zero-distance
/// directions first, then greedily the direction with the largest required
/// residual scale, the recursion value clipped at zero.
pub fn shrink_decomposition(
    polytope: &Polytope,
    params: &BoundaryOperatorParams,
    y: &[f64],
) -> Result<Shrink> {
    let d = polytope.dim();
    let mut rho = polytope.distances(y);
    let min_dist = rho.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_dist < -1e-9 {
        return Err(Error::OutsidePolytope { min_dist });
    }
    for r in &mut rho {
        if *r < BOUNDARY_SNAP {
            *r = 0.0;
        }
    }
    let mut order: Vec<usize> = (0..rho.len()).collect();
    order.sort_by(|&i, &j| rho[i].partial_cmp(&rho[j]).unwrap().then(i.cmp(&j)));

    // Select up to d independent directions in ascending-distance order.
    let mut selected: Vec<(usize, f64)> = Vec::with_capacity(d);
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(d);
    for &k in &order {
        if selected.len() == d {
            break;
        }
        if let Some(q) = orthonormalize_against(polytope.normal(k), &ortho) {
            ortho.push(q);
            selected.push((k, params.h_sigma(rho[k])));
        }
    }

    if !params.adaptive_shrinking {
        let mut eps: Vec<f64> = selected.iter().map(|&(_, e)| e).collect();
        complete_basis(&mut ortho, &mut eps, d);
        return Ok(Shrink {
            q: Mat::from_rows(&ortho),
            eps,
        });
    }

    // Adaptive scales re-sort the selected directions and rebuild the basis
    // in the new processing order.
    let mut remaining = selected;
    remaining.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    let mut q_rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut eps: Vec<f64> = Vec::with_capacity(d);
    while !remaining.is_empty() {
        let adaptive_scale = |row: usize, raw: f64| -> Option<f64> {
            let v = polytope.normal(row);
            let mut coef2 = 0.0;
            let mut weighted = 0.0;
            for (q, e) in q_rows.iter().zip(&eps) {
                let c = dot(q, v);
                coef2 += c * c;
                weighted += c * c * e;
            }
            if coef2 >= 1.0 - RANK_TOL {
                return None;
            }
            Some((raw - weighted) / (1.0 - coef2))
        };
        let pick = if remaining[0].1 <= 0.0 {
            0 // zero-distance boundaries are processed first, in order
        } else {
            let mut best = 0;
            let mut best_val = f64::NEG_INFINITY;
            for (idx, &(row, raw)) in remaining.iter().enumerate() {
                if let Some(val) = adaptive_scale(row, raw) {
                    if val > best_val {
                        best_val = val;
                        best = idx;
                    }
                }
            }
            best
        };
        let (row, raw) = remaining.remove(pick);
        let scale = adaptive_scale(row, raw);
        match orthonormalize_against(polytope.normal(row), &q_rows) {
            Some(q) => {
                let mut e = scale.unwrap_or(0.0);
                if e < 0.0 {
                    log::debug!("adaptive shrinking clipped scale {e:.3e} to zero (row {row})");
                    e = 0.0;
                }
                q_rows.push(q);
                eps.push(e);
            }
            None => continue,
        }
    }
    complete_basis(&mut q_rows, &mut eps, d);
    Ok(Shrink {
        q: Mat::from_rows(&q_rows),
        eps,
    })
}

/// The shrinking transformation matrix `P(y)`.
pub fn shrink_matrix(
    polytope: &Polytope,
    params: &BoundaryOperatorParams,
    y: &[f64],
) -> Result<Mat> {
    Ok(shrink_decomposition(polytope, params, y)?.matrix())
}

/// Apply the diffusion operator: `sigma = P(y)^T sigma_hat`.
pub fn apply_sigma(
    polytope: &Polytope,
    params: &BoundaryOperatorParams,
    y: &[f64],
    sigma_hat: &Mat,
) -> Result<Mat> {
    let p = shrink_matrix(polytope, params, y)?;
    Ok(p.transpose().matmul(sigma_hat))
}

/// State-dependent part of the drift correction, constant across network
/// parameters.
#[derive(Clone, Debug)]
pub struct DriftCorrection {
    /// For each boundary with `rho_k(y) < rho*`: constraint row, inward
    /// vector `zeta_k - y`, its positive gap `v_k . (zeta_k - y)`, and the
    /// tolerance `eps^mu_k(y)`.
    pub active: Vec<(usize, Vec<f64>, f64, f64)>,
}

/// Precompute the drift correction ingredients at `y`.
pub fn drift_correction_at(
    polytope: &Polytope,
    params: &BoundaryOperatorParams,
    y: &[f64],
) -> Result<DriftCorrection> {
    let rho = polytope.distances(y);
    let min_dist = rho.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_dist < -1e-9 {
        return Err(Error::OutsidePolytope { min_dist });
    }
    let mut active = Vec::new();
    for (k, &rho_k) in rho.iter().enumerate() {
        if rho_k >= params.rho_star {
            continue;
        }
        let dir = linalg::sub(&params.interior.zeta[k], y);
        let gap = dot(polytope.normal(k), &dir);
        if gap <= 0.0 {
            return Err(Error::DegenerateCorrection { row: k, denom: gap });
        }
        active.push((k, dir, gap, params.h_mu(rho_k)));
    }
    Ok(DriftCorrection { active })
}

impl DriftCorrection {
    /// Corrected drift `mu = mu_hat + sum_k lambda_k (zeta_k - y)` with
    /// `lambda_k = ((-v_k . mu_hat - eps^mu_k) / (v_k . (zeta_k - y)))^+`,
    /// which enforces `v_k . mu >= -eps^mu_k` on every near boundary.
    pub fn apply(&self, polytope: &Polytope, mu_hat: &[f64]) -> Vec<f64> {
        let mut mu = mu_hat.to_vec();
        for (k, dir, gap, eps) in &self.active {
            let lambda = ((-dot(polytope.normal(*k), mu_hat) - eps) / gap).max(0.0);
            if lambda > 0.0 {
                linalg::axpy(lambda, dir, &mut mu);
            }
        }
        mu
    }

    /// Map dL/dmu back to dL/dmu_hat across [`DriftCorrection::apply`].
    pub fn backward(&self, polytope: &Polytope, mu_hat: &[f64], grad_mu: &[f64]) -> Vec<f64> {
        let mut g = grad_mu.to_vec();
        for (k, dir, gap, eps) in &self.active {
            let vk = polytope.normal(*k);
            if -dot(vk, mu_hat) - eps > 0.0 {
                let coef = dot(dir, grad_mu) / gap;
                linalg::axpy(-coef, vk, &mut g);
            }
        }
        g
    }
}

/// Apply the drift operator directly: `mu = G_mu[mu_hat](y)`.
pub fn correct_drift(
    polytope: &Polytope,
    params: &BoundaryOperatorParams,
    y: &[f64],
    mu_hat: &[f64],
) -> Result<Vec<f64>> {
    Ok(drift_correction_at(polytope, params, y)?.apply(polytope, mu_hat))
}

/// Degree-capped polynomial least-squares regression (the multiplicative
/// drift baseline).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolyRegression {
    pub degree: usize,
    pub input_dim: usize,
    /// Per-output coefficient rows over the monomial features.
    pub coefs: Mat,
    loc: Vec<f64>,
    scale: Vec<f64>,
}

fn monomial_features(x: &[f64], degree: usize) -> Vec<f64> {
    let d = x.len();
    let mut feats = vec![1.0];
    if degree >= 1 {
        feats.extend_from_slice(x);
    }
    if degree >= 2 {
        for i in 0..d {
            for j in i..d {
                feats.push(x[i] * x[j]);
            }
        }
    }
    if degree >= 3 {
        for i in 0..d {
            for j in i..d {
                for k in j..d {
                    feats.push(x[i] * x[j] * x[k]);
                }
            }
        }
    }
    feats
}

impl PolyRegression {
    pub fn fit(inputs: &[Vec<f64>], targets: &Mat, degree: usize) -> Result<Self> {
        let n = inputs.len();
        let input_dim = inputs.first().map_or(0, Vec::len);
        if n < 10 * (input_dim + 1).max(1) {
            return Err(Error::IllConditioned(format!(
                "regression needs at least {} samples, got {n}",
                10 * (input_dim + 1)
            )));
        }
        assert_eq!(targets.nrows(), n, "targets/inputs length mismatch");
        let mut loc = vec![0.0; input_dim];
        let mut scale = vec![0.0; input_dim];
        for x in inputs {
            for (l, xi) in loc.iter_mut().zip(x) {
                *l += xi;
            }
        }
        for l in &mut loc {
            *l /= n as f64;
        }
        for x in inputs {
            for ((s, xi), l) in scale.iter_mut().zip(x).zip(&loc) {
                *s += (xi - l) * (xi - l);
            }
        }
        for s in &mut scale {
            *s = (*s / n as f64).sqrt().max(1e-12);
        }
        let n_feats = monomial_features(&vec![0.0; input_dim], degree).len();
        let mut design = Mat::zeros(n, n_feats);
        for (i, x) in inputs.iter().enumerate() {
            let std: Vec<f64> = x
                .iter()
                .zip(&loc)
                .zip(&scale)
                .map(|((xi, l), s)| (xi - l) / s)
                .collect();
            design.set_row(i, &monomial_features(&std, degree));
        }
        let n_out = targets.ncols();
        let mut coefs = Mat::zeros(n_out, n_feats);
        for out in 0..n_out {
            let sol = linalg::lstsq(&design, &targets.col(out), 1e-10)?;
            coefs.set_row(out, &sol);
        }
        Ok(Self {
            degree,
            input_dim,
            coefs,
            loc,
            scale,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let std: Vec<f64> = x
            .iter()
            .zip(&self.loc)
            .zip(&self.scale)
            .map(|((xi, l), s)| (xi - l) / s)
            .collect();
        self.coefs.matvec(&monomial_features(&std, self.degree))
    }
}

/// Optional loss regularizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    None,
    /// L2 on the underlying drift outputs.
    L2Mu,
    /// Statistical-arbitrage control: norm of the implied market price of
    /// risk at every sample.
    PsiPenalty,
}

/// Training configuration shared by the factor model and the spot model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_xi: usize,
    pub epochs_s: usize,
    pub lr: f64,
    pub hidden_xi: Vec<usize>,
    pub hidden_s: Vec<usize>,
    pub activation: Activation,
    pub sparsity: f64,
    /// Fraction of the epoch budget after which pruning is applied once.
    pub prune_at_fraction: f64,
    /// rho*; when absent, 1e-2 of the polytope diameter.
    pub rho_star: Option<f64>,
    pub eps_mu_star: f64,
    pub h_sigma_scale: f64,
    pub adaptive_shrinking: bool,
    pub lambda_reg: f64,
    pub regularizer: Regularizer,
    pub operators_disabled: bool,
    /// Trailing fraction of the samples held out for the validation loss.
    pub validation_fraction: f64,
    pub use_baseline: bool,
    pub baseline_degree: usize,
    /// Minibatch size; `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_xi: 2000,
            epochs_s: 200,
            lr: 1e-3,
            hidden_xi: vec![256, 256, 256],
            hidden_s: vec![128, 128, 128],
            activation: Activation::Relu,
            sparsity: 0.5,
            prune_at_fraction: 0.5,
            rho_star: None,
            eps_mu_star: 1.0,
            h_sigma_scale: 1.0,
            adaptive_shrinking: false,
            lambda_reg: 0.0,
            regularizer: Regularizer::None,
            operators_disabled: false,
            validation_fraction: 0.1,
            use_baseline: true,
            baseline_degree: 2,
            batch_size: Some(128),
            seed: 0,
        }
    }
}

/// Deterministic Fisher-Yates shuffle of `0..n` for minibatch order.
fn shuffled_indices(n: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    use rand::Rng;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Data consumed by [`train`].
#[derive(Clone, Debug)]
pub struct TrainingData {
    /// (L+1) x d factor observations.
    pub xi: Mat,
    /// Spot path, one value per factor row.
    pub s: Vec<f64>,
    /// Operator data panel (rows aligned with `xi`), used for the baseline
    /// drift and the psi penalty.
    pub z: Option<Mat>,
    /// Basis carrying G and Lambda; required for the baseline and psi terms.
    pub basis: Option<PriceBasis>,
    pub polytope: Polytope,
    pub dt: f64,
}

/// Calibrated joint model for `(S, xi)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstrainedSdeModel {
    pub xi_net: Mlp,
    pub head: DriftDiffusionHead,
    pub s_net: Mlp,
    pub polytope: Polytope,
    /// `None` disables the boundary operators (ablation mode).
    pub operators: Option<BoundaryOperatorParams>,
    pub baseline: Option<PolyRegression>,
    pub basis: Option<PriceBasis>,
    /// Standardization of the (S, xi) network input.
    pub input_loc: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub dt: f64,
    pub seed: u64,
}

impl ConstrainedSdeModel {
    pub fn dim(&self) -> usize {
        self.head.dim
    }

    pub fn ablation(&self) -> bool {
        self.operators.is_none()
    }

    pub fn standardized(&self, s: f64, xi: &[f64]) -> Vec<f64> {
        std::iter::once(s)
            .chain(xi.iter().copied())
            .zip(self.input_loc.iter().zip(&self.input_scale))
            .map(|(v, (l, sc))| (v - l) / sc)
            .collect()
    }

    /// Underlying (pre-operator) coefficients at a state.
    pub fn raw_coefficients(&self, s: f64, xi: &[f64]) -> Result<(Vec<f64>, Mat)> {
        let out = self.xi_net.forward(&self.standardized(s, xi))?;
        let (mut mu_hat, sigma_hat) = self.head.split(&out)?;
        if let Some(base) = &self.baseline {
            let state: Vec<f64> = std::iter::once(s).chain(xi.iter().copied()).collect();
            for (m, b) in mu_hat.iter_mut().zip(base.predict(&state)) {
                *m *= b;
            }
        }
        Ok((mu_hat, sigma_hat))
    }

    /// Transformed coefficients `(mu, sigma)` honoring the boundary
    /// operators when enabled.
    pub fn coefficients(&self, s: f64, xi: &[f64]) -> Result<(Vec<f64>, Mat)> {
        let (mu_hat, sigma_hat) = self.raw_coefficients(s, xi)?;
        match &self.operators {
            None => Ok((mu_hat, sigma_hat)),
            Some(params) => {
                let shrink = shrink_decomposition(&self.polytope, params, xi)?;
                let sigma = shrink.matrix().transpose().matmul(&sigma_hat);
                let corr = drift_correction_at(&self.polytope, params, xi)?;
                Ok((corr.apply(&self.polytope, &mu_hat), sigma))
            }
        }
    }

    /// Spot-model coefficients `(mu_S, sigma_S)`; the diffusion output is
    /// exponentiated so it stays positive.
    pub fn s_coefficients(&self, s: f64, xi: &[f64]) -> Result<(f64, f64)> {
        let out = self.s_net.forward(&self.standardized(s, xi))?;
        Ok((out[1], out[0].exp()))
    }
}

/// Euler-Maruyama quasi-log-likelihood of a factor path:
/// `-1/2 sum_i [ ln|a(i)| + |dy - mu(i) dt|^2_{a(i)} / dt ]`, evaluated with
/// the triangular shortcuts `ln|a| = ln|P|^2 + 2 sum_j ln sigma_hat_jj` and
/// two triangular solves for the quadratic form.
pub fn log_likelihood(xi_path: &Mat, s_path: &[f64], model: &ConstrainedSdeModel) -> Result<f64> {
    let steps = xi_path.nrows();
    assert_eq!(s_path.len(), steps, "spot path length mismatch");
    assert!(steps >= 2, "need at least one transition");
    let dt = model.dt;
    let mut total = 0.0;
    for i in 0..steps - 1 {
        let y = xi_path.row(i);
        let delta = linalg::sub(xi_path.row(i + 1), y);
        let (mu_hat, sigma_hat) = model.raw_coefficients(s_path[i], y)?;
        let diag_ln: f64 = (0..sigma_hat.nrows())
            .map(|j| sigma_hat[(j, j)].ln())
            .sum();
        let (ln_det, quad) = match &model.operators {
            Some(params) => {
                let dist = model.polytope.min_distance(y);
                if dist <= BOUNDARY_SNAP {
                    return Err(Error::BoundaryPoint { step: i, dist });
                }
                let shrink = shrink_decomposition(&model.polytope, params, y)?;
                if shrink.eps.iter().any(|&e| e <= 0.0) {
                    return Err(Error::SingularCovariance { step: i });
                }
                let corr = drift_correction_at(&model.polytope, params, y)?;
                let mu = corr.apply(&model.polytope, &mu_hat);
                let u: Vec<f64> = delta.iter().zip(&mu).map(|(dy, m)| dy - m * dt).collect();
                // w = (P^T)^{-1} u = D^{-1} (Q u)
                let mut w = shrink.q.matvec(&u);
                for (wi, e) in w.iter_mut().zip(&shrink.eps) {
                    *wi /= e.sqrt();
                }
                let v = solve_lower(&sigma_hat, &w)
                    .map_err(|_| Error::SingularCovariance { step: i })?;
                (shrink.ln_det_sq() + 2.0 * diag_ln, dot(&v, &v))
            }
            None => {
                let u: Vec<f64> = delta
                    .iter()
                    .zip(&mu_hat)
                    .map(|(dy, m)| dy - m * dt)
                    .collect();
                let v = solve_lower(&sigma_hat, &u)
                    .map_err(|_| Error::SingularCovariance { step: i })?;
                (2.0 * diag_ln, dot(&v, &v))
            }
        };
        total += ln_det + quad / dt;
    }
    Ok(-0.5 * total)
}

/// Training loss: the negative quasi-log-likelihood plus `lambda R`.
pub fn loss(
    xi_path: &Mat,
    s_path: &[f64],
    model: &ConstrainedSdeModel,
    lambda_reg: f64,
    regularizer: Regularizer,
    z: Option<&Mat>,
) -> Result<f64> {
    let nll = -log_likelihood(xi_path, s_path, model)?;
    if lambda_reg == 0.0 || regularizer == Regularizer::None {
        return Ok(nll);
    }
    let mut reg = 0.0;
    for i in 0..xi_path.nrows() - 1 {
        let y = xi_path.row(i);
        match regularizer {
            Regularizer::None => {}
            Regularizer::L2Mu => {
                let (mu_hat, _) = model.raw_coefficients(s_path[i], y)?;
                reg += dot(&mu_hat, &mu_hat);
            }
            Regularizer::PsiPenalty => {
                let z = z.ok_or(Error::MissingFit)?;
                let (psi, _) = market_price_of_risk(model, s_path[i], y, z.row(i))?;
                reg += norm2(&psi);
            }
        }
    }
    Ok(nll + lambda_reg * reg)
}

/// Market price of risk implied by the drift restriction at a state and the
/// violation norm `chi`.
pub fn market_price_of_risk(
    model: &ConstrainedSdeModel,
    s: f64,
    xi: &[f64],
    z: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let basis = model
        .basis
        .as_ref()
        .ok_or_else(|| Error::PreconditionViolated("model carries no price basis".into()))?;
    let (mu, sigma) = model.coefficients(s, xi)?;
    psi_chi(basis, &mu, &sigma, z)
}

/// Least squares for `G^T sigma psi = G^T mu - z`:
/// `psi = (sigma^T G G^T sigma)^{-1} sigma^T G (G^T mu - z)` and
/// `chi = |G^T mu - z - G^T sigma psi|`.
pub fn psi_chi(basis: &PriceBasis, mu: &[f64], sigma: &Mat, z: &[f64]) -> Result<(Vec<f64>, f64)> {
    let b = basis.g.transpose().matmul(sigma); // N x d
    let mut rho = basis.g.tr_matvec(mu); // N
    for (r, zi) in rho.iter_mut().zip(z) {
        *r -= zi;
    }
    let btb = b.transpose().matmul(&b);
    let btr = b.tr_matvec(&rho);
    let psi = linalg::lu_solve(&btb, &btr).map_err(|_| Error::SingularDiffusion)?;
    let chi = norm2(&linalg::sub(&rho, &b.matvec(&psi)));
    Ok((psi, chi))
}

/// Baseline drift targets `Lambda^{-2} G z_l` per sample row.
pub fn baseline_targets(basis: &PriceBasis, z: &Mat) -> Mat {
    let rows = z.nrows();
    let d = basis.dim();
    let mut out = Mat::zeros(rows, d);
    for l in 0..rows {
        let gz = basis.g.matvec(z.row(l));
        for k in 0..d {
            out[(l, k)] = gz[k] / (basis.lambda[k] * basis.lambda[k]);
        }
    }
    out
}

/// Fit the baseline drift regression on `(state, target)` samples.
pub fn baseline_drift_fit(
    states: &[Vec<f64>],
    targets: &Mat,
    degree: usize,
) -> Result<PolyRegression> {
    PolyRegression::fit(states, targets, degree)
}

/// Loss history entry per epoch.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

/// Output of [`train`].
#[derive(Clone, Debug)]
pub struct TrainResult {
    pub model: ConstrainedSdeModel,
    pub xi_history: Vec<EpochLoss>,
    pub s_history: Vec<EpochLoss>,
    /// Number of transitions kept after boundary truncation.
    pub kept_transitions: usize,
}

/// Per-transition quantities that do not depend on the network parameters.
struct SampleStatics {
    input: Vec<f64>,
    delta: Vec<f64>,
    /// (shrink, correction) when operators are enabled.
    ops: Option<(Shrink, DriftCorrection)>,
    baseline: Option<Vec<f64>>,
    z: Option<Vec<f64>>,
}

/// Per-sample loss and output-gradient for the factor model.
#[allow(clippy::too_many_arguments)]
fn xi_sample_loss_grad(
    out: &[f64],
    stat: &SampleStatics,
    head: &DriftDiffusionHead,
    polytope: &Polytope,
    basis: Option<&PriceBasis>,
    dt: f64,
    lambda_reg: f64,
    regularizer: Regularizer,
) -> (f64, Vec<f64>) {
    let d = head.dim;
    let (mut mu_hat, sigma_hat) = head.split(out).expect("head split");
    if let Some(bar) = &stat.baseline {
        for (m, b) in mu_hat.iter_mut().zip(bar) {
            *m *= b;
        }
    }
    let mut grad_mu_hat = vec![0.0; d];
    let mut grad_sigma_hat = Mat::zeros(d, d);
    let diag_ln: f64 = (0..d).map(|j| sigma_hat[(j, j)].ln()).sum();
    let mut loss_val;

    match &stat.ops {
        Some((shrink, corr)) => {
            let mu = corr.apply(polytope, &mu_hat);
            let u: Vec<f64> = stat
                .delta
                .iter()
                .zip(&mu)
                .map(|(dy, m)| dy - m * dt)
                .collect();
            let mut w = shrink.q.matvec(&u);
            for (wi, e) in w.iter_mut().zip(&shrink.eps) {
                *wi /= e.sqrt();
            }
            let v = solve_lower(&sigma_hat, &w).expect("positive diagonal");
            loss_val = 0.5 * (shrink.ln_det_sq() + 2.0 * diag_ln) + dot(&v, &v) / (2.0 * dt);

            // gradients: g_v = v/dt; g_w = sigma^-T g_v;
            // g_sigma[j,k] = -g_w[j] v[k]; g_u = Q^T D^-1 g_w; g_mu = -dt g_u
            let g_v: Vec<f64> = v.iter().map(|x| x / dt).collect();
            let g_w = solve_lower_transpose(&sigma_hat, &g_v).expect("positive diagonal");
            for j in 0..d {
                for k in 0..=j {
                    grad_sigma_hat[(j, k)] -= g_w[j] * v[k];
                }
            }
            let mut dw = g_w.clone();
            for (x, e) in dw.iter_mut().zip(&shrink.eps) {
                *x /= e.sqrt();
            }
            let g_u = shrink.q.tr_matvec(&dw);
            let g_mu: Vec<f64> = g_u.iter().map(|x| -dt * x).collect();
            let mut g_mu_total = g_mu;

            // psi penalty contributes to (mu, sigma) before the operators
            // are unwound
            if regularizer == Regularizer::PsiPenalty && lambda_reg != 0.0 {
                let basis = basis.expect("psi penalty requires a basis");
                let z = stat.z.as_ref().expect("psi penalty requires z data");
                let p = shrink.matrix();
                let sigma = p.transpose().matmul(&sigma_hat);
                let (reg, g_mu_psi, g_sigma_psi) = psi_penalty_grad(basis, &mu, &sigma, z);
                loss_val += lambda_reg * reg;
                for (gm, gp) in g_mu_total.iter_mut().zip(&g_mu_psi) {
                    *gm += lambda_reg * gp;
                }
                let g_sig_hat = p.matmul(&g_sigma_psi);
                for j in 0..d {
                    for k in 0..=j {
                        grad_sigma_hat[(j, k)] += lambda_reg * g_sig_hat[(j, k)];
                    }
                }
            }
            let g = corr.backward(polytope, &mu_hat, &g_mu_total);
            for (gm, gi) in grad_mu_hat.iter_mut().zip(&g) {
                *gm += gi;
            }
        }
        None => {
            let u: Vec<f64> = stat
                .delta
                .iter()
                .zip(&mu_hat)
                .map(|(dy, m)| dy - m * dt)
                .collect();
            let v = solve_lower(&sigma_hat, &u).expect("positive diagonal");
            loss_val = diag_ln + dot(&v, &v) / (2.0 * dt);
            let g_v: Vec<f64> = v.iter().map(|x| x / dt).collect();
            let g_w = solve_lower_transpose(&sigma_hat, &g_v).expect("positive diagonal");
            for j in 0..d {
                for k in 0..=j {
                    grad_sigma_hat[(j, k)] -= g_w[j] * v[k];
                }
            }
            for (gm, gw) in grad_mu_hat.iter_mut().zip(&g_w) {
                *gm += -dt * gw;
            }
            if regularizer == Regularizer::PsiPenalty && lambda_reg != 0.0 {
                let basis = basis.expect("psi penalty requires a basis");
                let z = stat.z.as_ref().expect("psi penalty requires z data");
                let (reg, g_mu_psi, g_sigma_psi) = psi_penalty_grad(basis, &mu_hat, &sigma_hat, z);
                loss_val += lambda_reg * reg;
                for (gm, gp) in grad_mu_hat.iter_mut().zip(&g_mu_psi) {
                    *gm += lambda_reg * gp;
                }
                for j in 0..d {
                    for k in 0..=j {
                        grad_sigma_hat[(j, k)] += lambda_reg * g_sigma_psi[(j, k)];
                    }
                }
            }
        }
    }

    // the 1/2 ln|a| term contributes 1 per exponentiated diagonal output
    for j in 0..d {
        grad_sigma_hat[(j, j)] += 1.0 / sigma_hat[(j, j)];
    }
    if regularizer == Regularizer::L2Mu && lambda_reg != 0.0 {
        loss_val += lambda_reg * dot(&mu_hat, &mu_hat);
        for (gm, m) in grad_mu_hat.iter_mut().zip(&mu_hat) {
            *gm += lambda_reg * 2.0 * m;
        }
    }
    // chain the multiplicative baseline back to the raw drift outputs
    let grad_mu_raw: Vec<f64> = match &stat.baseline {
        Some(bar) => grad_mu_hat.iter().zip(bar).map(|(g, b)| g * b).collect(),
        None => grad_mu_hat,
    };
    let grad_out = head.backward(out, &grad_mu_raw, &grad_sigma_hat);
    (loss_val, grad_out)
}

/// Value and (mu, sigma) gradients of `|psi|_2` at one sample.
fn psi_penalty_grad(
    basis: &PriceBasis,
    mu: &[f64],
    sigma: &Mat,
    z: &[f64],
) -> (f64, Vec<f64>, Mat) {
    let d = sigma.nrows();
    let b = basis.g.transpose().matmul(sigma);
    let mut rho = basis.g.tr_matvec(mu);
    for (r, zi) in rho.iter_mut().zip(z) {
        *r -= zi;
    }
    let btb = b.transpose().matmul(&b);
    let btr = b.tr_matvec(&rho);
    let psi = match linalg::lu_solve(&btb, &btr) {
        Ok(p) => p,
        Err(_) => return (0.0, vec![0.0; d], Mat::zeros(d, d)),
    };
    let norm = norm2(&psi);
    if norm < 1e-14 {
        return (0.0, vec![0.0; d], Mat::zeros(d, d));
    }
    let g_psi: Vec<f64> = psi.iter().map(|p| p / norm).collect();
    let t = linalg::lu_solve(&btb, &g_psi).expect("btb factorized above");
    let bt = b.matvec(&t);
    let fitted = b.matvec(&psi);
    let res = linalg::sub(&rho, &fitted);
    // dL/dB = res t^T - (B t) psi^T ; dL/drho = B t
    let g_mu = basis.g.matvec(&bt); // G * (dL/drho)
    let mut g_b = Mat::zeros(b.nrows(), d);
    for i in 0..b.nrows() {
        for j in 0..d {
            g_b[(i, j)] = res[i] * t[j] - bt[i] * psi[j];
        }
    }
    let g_sigma = basis.g.matmul(&g_b);
    (norm, g_mu, g_sigma)
}

/// Train the factor model and the spot model on the truncated data.
///
/// The models are trained separately (the polytope constraints apply to the
/// factor system only). Boundary-touching observations are removed first;
/// the trailing `validation_fraction` of the remaining transitions is held
/// out for the validation loss.
pub fn train(data: &TrainingData, config: &TrainConfig) -> Result<TrainResult> {
    let d = data.xi.ncols();
    assert_eq!(data.s.len(), data.xi.nrows(), "spot path length mismatch");
    let polytope = &data.polytope;

    let kept = interior_transitions(&data.xi, polytope, BOUNDARY_SNAP);
    if kept.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }

    let operators = if config.operators_disabled {
        None
    } else {
        let rho_star = match config.rho_star {
            Some(r) => r,
            None => 0.01 * polytope.diameter()?,
        };
        Some(BoundaryOperatorParams::for_polytope(
            polytope,
            rho_star,
            config.eps_mu_star,
            config.h_sigma_scale,
            config.adaptive_shrinking,
        )?)
    };

    // input standardization over the kept states
    let mut loc = vec![0.0; d + 1];
    let mut scale = vec![0.0; d + 1];
    for &l in &kept {
        let state: Vec<f64> = std::iter::once(data.s[l])
            .chain(data.xi.row(l).iter().copied())
            .collect();
        for (acc, v) in loc.iter_mut().zip(&state) {
            *acc += v;
        }
    }
    for v in &mut loc {
        *v /= kept.len() as f64;
    }
    for &l in &kept {
        let state: Vec<f64> = std::iter::once(data.s[l])
            .chain(data.xi.row(l).iter().copied())
            .collect();
        for ((acc, v), m) in scale.iter_mut().zip(&state).zip(&loc) {
            *acc += (v - m) * (v - m);
        }
    }
    for v in &mut scale {
        *v = (*v / kept.len() as f64).sqrt().max(1e-9);
    }

    let baseline = if config.use_baseline {
        match (&data.z, &data.basis) {
            (Some(z), Some(basis)) => {
                let targets_full = baseline_targets(basis, z);
                let mut states = Vec::with_capacity(kept.len());
                let mut targets = Mat::zeros(kept.len(), d);
                for (row, &l) in kept.iter().enumerate() {
                    states.push(
                        std::iter::once(data.s[l])
                            .chain(data.xi.row(l).iter().copied())
                            .collect(),
                    );
                    targets.set_row(row, targets_full.row(l));
                }
                Some(PolyRegression::fit(
                    &states,
                    &targets,
                    config.baseline_degree,
                )?)
            }
            _ => None,
        }
    } else {
        None
    };

    let standardize = |s: f64, xi: &[f64]| -> Vec<f64> {
        std::iter::once(s)
            .chain(xi.iter().copied())
            .zip(loc.iter().zip(&scale))
            .map(|(v, (l, sc))| (v - l) / sc)
            .collect()
    };

    let want_z = config.regularizer == Regularizer::PsiPenalty;
    let mut statics = Vec::with_capacity(kept.len());
    for &l in &kept {
        let y = data.xi.row(l);
        let ops = match &operators {
            Some(params) => Some((
                shrink_decomposition(polytope, params, y)?,
                drift_correction_at(polytope, params, y)?,
            )),
            None => None,
        };
        let state: Vec<f64> = std::iter::once(data.s[l])
            .chain(y.iter().copied())
            .collect();
        statics.push(SampleStatics {
            input: standardize(data.s[l], y),
            delta: linalg::sub(data.xi.row(l + 1), y),
            ops,
            baseline: baseline.as_ref().map(|b| b.predict(&state)),
            z: if want_z {
                data.z.as_ref().map(|z| z.row(l).to_vec())
            } else {
                None
            },
        });
    }
    if want_z && statics.iter().any(|s| s.z.is_none()) {
        return Err(Error::MissingFit);
    }

    let n_val = ((kept.len() as f64) * config.validation_fraction).floor() as usize;
    let n_train = kept.len() - n_val;
    if n_train == 0 {
        return Err(Error::EmptyTrainingSet);
    }

    // -- factor model --
    let head = DriftDiffusionHead::new(d);
    let mut xi_net = Mlp::new(
        d + 1,
        &config.hidden_xi,
        head.output_len(),
        config.activation,
        config.seed,
    );
    let mut xi_history = Vec::with_capacity(config.epochs_xi);
    {
        let inputs_val: Vec<Vec<f64>> =
            statics[n_train..].iter().map(|s| s.input.clone()).collect();
        let mut adam = AdamState::new(&xi_net);
        let mut shuffle_rng = ChaCha12Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9));
        let bsize = config.batch_size.unwrap_or(n_train).clamp(1, n_train);
        let prune_epoch = ((config.epochs_xi as f64) * config.prune_at_fraction) as usize;
        for epoch in 0..config.epochs_xi {
            if config.sparsity > 0.0 && epoch == prune_epoch {
                xi_net.prune(config.sparsity);
            }
            let basis_ref = data.basis.as_ref();
            let order = shuffled_indices(n_train, &mut shuffle_rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(bsize) {
                let batch_inputs: Vec<Vec<f64>> =
                    chunk.iter().map(|&i| statics[i].input.clone()).collect();
                let (loss, mut grads) = batch_gradient(&xi_net, &batch_inputs, |bi, out| {
                    xi_sample_loss_grad(
                        out,
                        &statics[chunk[bi]],
                        &head,
                        polytope,
                        basis_ref,
                        data.dt,
                        config.lambda_reg,
                        config.regularizer,
                    )
                })
                .map_err(|e| remap_epoch(e, epoch))?;
                epoch_loss += loss;
                grads.scale(1.0 / chunk.len() as f64);
                adam_step(
                    &mut xi_net,
                    &grads,
                    &mut adam,
                    config.lr,
                    0.9,
                    0.999,
                    1e-8,
                );
            }
            let val_loss = if n_val > 0 {
                let (v, _) = batch_gradient(&xi_net, &inputs_val, |idx, out| {
                    xi_sample_loss_grad(
                        out,
                        &statics[n_train + idx],
                        &head,
                        polytope,
                        basis_ref,
                        data.dt,
                        config.lambda_reg,
                        config.regularizer,
                    )
                })
                .map_err(|e| remap_epoch(e, epoch))?;
                v / n_val as f64
            } else {
                f64::NAN
            };
            xi_history.push(EpochLoss {
                epoch,
                train: epoch_loss / n_train as f64,
                validation: val_loss,
            });
        }
    }

    // -- spot model --
    let deltas: Vec<f64> = kept.iter().map(|&l| data.s[l + 1] - data.s[l]).collect();
    let inputs: Vec<Vec<f64>> = statics.iter().map(|s| s.input.clone()).collect();
    let (s_net, s_history) = train_scalar_sde_net(
        &inputs,
        &deltas,
        n_train,
        data.dt,
        &config.hidden_s,
        config.activation,
        config.epochs_s,
        config.lr,
        config.sparsity,
        config.prune_at_fraction,
        config.batch_size,
        config.seed.wrapping_add(1),
    )?;

    Ok(TrainResult {
        model: ConstrainedSdeModel {
            xi_net,
            head,
            s_net,
            polytope: polytope.clone(),
            operators,
            baseline,
            basis: data.basis.clone(),
            input_loc: loc,
            input_scale: scale,
            dt: data.dt,
            seed: config.seed,
        },
        xi_history,
        s_history,
        kept_transitions: kept.len(),
    })
}

fn remap_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFiniteLoss { value, .. } => Error::NonFiniteLoss { epoch, value },
        other => other,
    }
}

/// Train a scalar neural SDE (outputs `[ln sigma, mu]`) on standardized
/// states and observed increments. Used for the spot model and for the
/// initial volatility estimate that feeds the operator data.
#[allow(clippy::too_many_arguments)]
pub fn train_scalar_sde_net(
    inputs: &[Vec<f64>],
    deltas: &[f64],
    n_train: usize,
    dt: f64,
    hidden: &[usize],
    activation: Activation,
    epochs: usize,
    lr: f64,
    sparsity: f64,
    prune_at_fraction: f64,
    batch_size: Option<usize>,
    seed: u64,
) -> Result<(Mlp, Vec<EpochLoss>)> {
    assert_eq!(inputs.len(), deltas.len(), "inputs/deltas length mismatch");
    assert!(n_train >= 1 && n_train <= inputs.len());
    let in_dim = inputs.first().map_or(0, Vec::len);
    let mut net = Mlp::new(in_dim, hidden, 2, activation, seed);
    let n_val = inputs.len() - n_train;
    let s_loss = |idx: usize, out: &[f64]| -> (f64, Vec<f64>) {
        let sigma = out[0].exp();
        let mu = out[1];
        let u = deltas[idx] - mu * dt;
        let loss = out[0] + u * u / (2.0 * dt * sigma * sigma);
        let g0 = 1.0 - u * u / (dt * sigma * sigma);
        let g1 = -u / (sigma * sigma);
        (loss, vec![g0, g1])
    };
    let mut adam = AdamState::new(&net);
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9));
    let bsize = batch_size.unwrap_or(n_train).clamp(1, n_train);
    let prune_epoch = ((epochs as f64) * prune_at_fraction) as usize;
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        if sparsity > 0.0 && epoch == prune_epoch {
            net.prune(sparsity);
        }
        let order = shuffled_indices(n_train, &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(bsize) {
            let batch_inputs: Vec<Vec<f64>> =
                chunk.iter().map(|&i| inputs[i].clone()).collect();
            let (loss, mut grads) =
                batch_gradient(&net, &batch_inputs, |bi, out| s_loss(chunk[bi], out))
                    .map_err(|e| remap_epoch(e, epoch))?;
            epoch_loss += loss;
            grads.scale(1.0 / chunk.len() as f64);
            adam_step(&mut net, &grads, &mut adam, lr, 0.9, 0.999, 1e-8);
        }
        let val_loss = if n_val > 0 {
            let (v, _) = batch_gradient(&net, &inputs[n_train..], |idx, out| {
                s_loss(n_train + idx, out)
            })
            .map_err(|e| remap_epoch(e, epoch))?;
            v / n_val as f64
        } else {
            f64::NAN
        };
        history.push(EpochLoss {
            epoch,
            train: epoch_loss / n_train as f64,
            validation: val_loss,
        });
    }
    Ok((net, history))
}
