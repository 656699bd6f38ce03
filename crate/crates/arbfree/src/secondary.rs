//! Primary/secondary factor split: each secondary factor is a cubic
//! polynomial of the primary factors plus a mean-reverting OU residual, with
//! secondary coordinates repaired back into the joint no-arbitrage polytope
//! during simulation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constrained_sde::ConstrainedSdeModel;
use crate::error::{Error, Result};
use crate::linalg::{self, dot, Mat};
use crate::lp;
use crate::market_sim::{tamed_euler, SimResult};
use crate::polytope::Polytope;

/// Polynomial in the primary factors with analytic gradient and Hessian.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CubicFit {
    pub input_dim: usize,
    pub degree: usize,
    /// Coefficients aligned with [`monomial_exponents`] ordering.
    pub coefs: Vec<f64>,
}

/// Multi-indices `alpha` with `|alpha| <= degree` in graded lexicographic
/// order (constant first).
pub fn monomial_exponents(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(dim: usize, remaining: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == dim {
            out.push(prefix.clone());
            return;
        }
        for e in 0..=remaining {
            prefix.push(e);
            rec(dim, remaining - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut per_total = Vec::new();
        rec(dim, total, &mut Vec::new(), &mut per_total);
        per_total.retain(|alpha| alpha.iter().sum::<usize>() == total);
        out.extend(per_total);
    }
    out
}

impl CubicFit {
    pub fn value(&self, x: &[f64]) -> f64 {
        monomial_exponents(self.input_dim, self.degree)
            .iter()
            .zip(&self.coefs)
            .map(|(alpha, c)| c * monomial(x, alpha))
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let exps = monomial_exponents(self.input_dim, self.degree);
        let mut g = vec![0.0; self.input_dim];
        for (alpha, c) in exps.iter().zip(&self.coefs) {
            for i in 0..self.input_dim {
                if alpha[i] > 0 {
                    let mut reduced = alpha.clone();
                    reduced[i] -= 1;
                    g[i] += c * alpha[i] as f64 * monomial(x, &reduced);
                }
            }
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> Mat {
        let exps = monomial_exponents(self.input_dim, self.degree);
        let d = self.input_dim;
        let mut h = Mat::zeros(d, d);
        for (alpha, c) in exps.iter().zip(&self.coefs) {
            for i in 0..d {
                for j in 0..d {
                    let needed_i = alpha[i];
                    let needed_j = if i == j { needed_i.saturating_sub(1) } else { alpha[j] };
                    if needed_i == 0 || needed_j == 0 {
                        continue;
                    }
                    let mut reduced = alpha.clone();
                    reduced[i] -= 1;
                    let factor_i = alpha[i] as f64;
                    if reduced[j] == 0 {
                        continue;
                    }
                    let factor_j = reduced[j] as f64;
                    reduced[j] -= 1;
                    h[(i, j)] += c * factor_i * factor_j * monomial(x, &reduced);
                }
            }
        }
        h
    }
}

fn monomial(x: &[f64], alpha: &[usize]) -> f64 {
    x.iter()
        .zip(alpha)
        .map(|(xi, &e)| xi.powi(e as i32))
        .product()
}

/// OU residual parameters with their discrete AR(1) image at the training
/// step size.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OuParams {
    pub kappa: f64,
    pub theta: f64,
    pub varsigma: f64,
}

impl OuParams {
    /// Euler-discretized AR(1) coefficients `(a, c, noise_sd)` at step `dt`.
    pub fn ar_coefficients(&self, dt: f64) -> (f64, f64, f64) {
        (
            1.0 - self.kappa * dt,
            self.kappa * self.theta * dt,
            self.varsigma * dt.sqrt(),
        )
    }
}

/// One secondary factor: cubic link plus OU residual.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SecondaryFactorModel {
    pub link: CubicFit,
    pub ou: OuParams,
}

/// Append `count` secondary factors to an existing decode by taking
/// principal components of the reconstruction residual, consecutively
/// maximizing statistical accuracy. Columns are tagged
/// [`FactorTag::Secondary`].
pub fn append_statistical(
    c: &Mat,
    series: &crate::factor_decode::FactorSeries,
    basis: &crate::factor_decode::PriceBasis,
    count: usize,
) -> Result<(crate::factor_decode::FactorSeries, crate::factor_decode::PriceBasis)> {
    use crate::factor_decode::FactorTag;
    let rows = c.nrows();
    let recon = basis.reconstruct(&series.xi);
    let mut residual = c.clone();
    for l in 0..rows {
        let row = residual.row_mut(l);
        for (v, r) in row.iter_mut().zip(recon.row(l)) {
            *v -= r;
        }
    }
    let p = crate::factor_decode::pca(&residual, count)?;
    let d_old = basis.dim();
    let d_new = d_old + count;
    let mut g = Mat::zeros(d_new, basis.n_prices());
    for k in 0..d_old {
        g.set_row(k, basis.g.row(k));
    }
    let mut xi = Mat::zeros(rows, d_new);
    for l in 0..rows {
        for k in 0..d_old {
            xi[(l, k)] = series.xi[(l, k)];
        }
    }
    for k in 0..count {
        g.set_row(d_old + k, p.components.row(k));
        for l in 0..rows {
            xi[(l, d_old + k)] = dot(residual.row(l), p.components.row(k));
        }
    }
    let mut tags = basis.tags.clone();
    tags.extend(std::iter::repeat(FactorTag::Secondary).take(count));
    let mut lambda = basis.lambda.clone();
    lambda.extend(std::iter::repeat(1.0).take(count));
    let mut h = Mat::identity(d_new);
    for i in 0..d_old {
        for j in 0..d_old {
            h[(i, j)] = basis.h[(i, j)];
        }
    }
    let new_basis = crate::factor_decode::PriceBasis {
        g0: basis.g0.clone(),
        g,
        h,
        lambda,
        tags: tags.clone(),
    };
    Ok((
        crate::factor_decode::FactorSeries { xi, tags },
        new_basis,
    ))
}

/// Least-squares polynomial fit of a secondary factor on the primary
/// factors; returns the fit and the residual series.
pub fn fit_polynomial(
    secondary: &[f64],
    primary: &Mat,
    degree: usize,
) -> Result<(CubicFit, Vec<f64>)> {
    assert!((1..=3).contains(&degree), "degree must be 1..=3");
    let n = secondary.len();
    assert_eq!(primary.nrows(), n, "sample count mismatch");
    let dim = primary.ncols();
    let exps = monomial_exponents(dim, degree);
    if n <= exps.len() {
        return Err(Error::IllConditioned(format!(
            "polynomial fit needs more than {} samples, got {n}",
            exps.len()
        )));
    }
    let mut design = Mat::zeros(n, exps.len());
    for l in 0..n {
        let x = primary.row(l);
        for (j, alpha) in exps.iter().enumerate() {
            design[(l, j)] = monomial(x, alpha);
        }
    }
    let coefs = linalg::lstsq(&design, secondary, 1e-12)?;
    let fitted = design.matvec(&coefs);
    let residuals: Vec<f64> = secondary.iter().zip(&fitted).map(|(s, f)| s - f).collect();
    Ok((
        CubicFit {
            input_dim: dim,
            degree,
            coefs,
        },
        residuals,
    ))
}

/// Fit the OU residual model through its Euler-discretized AR(1) form
/// `eps_{t+dt} = a eps_t + c + eta`, mapping back to continuous parameters
/// `kappa = (1 - a)/dt`, `theta = c/(1 - a)`, `varsigma = sd(eta)/sqrt(dt)`.
pub fn fit_ou(residuals: &[f64], dt: f64) -> Result<OuParams> {
    if residuals.len() < 50 {
        return Err(Error::IllConditioned(format!(
            "OU fit needs at least 50 samples, got {}",
            residuals.len()
        )));
    }
    let n = residuals.len() - 1;
    let mut design = Mat::zeros(n, 2);
    let mut target = Vec::with_capacity(n);
    for l in 0..n {
        design[(l, 0)] = 1.0;
        design[(l, 1)] = residuals[l];
        target.push(residuals[l + 1]);
    }
    let sol = linalg::lstsq(&design, &target, 1e-12)?;
    let (c, a) = (sol[0], sol[1]);
    if !(a > -1.0 && a < 1.0) {
        return Err(Error::UnstableAr { a, dt });
    }
    let mut sq = 0.0;
    for l in 0..n {
        let eta = target[l] - a * residuals[l] - c;
        sq += eta * eta;
    }
    let noise_sd = (sq / n as f64).sqrt();
    Ok(OuParams {
        kappa: (1.0 - a) / dt,
        theta: c / (1.0 - a),
        varsigma: noise_sd / dt.sqrt(),
    })
}

/// Ito coefficients of one secondary factor given the primary state and its
/// drift/diffusion:
/// `mu_i = kappa (theta - xi_i + f) + (grad f)' mu_p + 1/2 sum Gamma_jk`
/// with `Gamma = (sigma_p sigma_p') .* hess f`, and the loading on the
/// primary drivers `sigma_i = (grad f)' sigma_p`. The independent-noise load
/// `varsigma` lives in the model parameters.
pub fn secondary_coeffs(
    model: &SecondaryFactorModel,
    primary_state: &[f64],
    primary_mu: &[f64],
    primary_sigma: &Mat,
    xi_i: f64,
) -> (f64, Vec<f64>) {
    let f = model.link.value(primary_state);
    let grad = model.link.gradient(primary_state);
    let hess = model.link.hessian(primary_state);
    let a = primary_sigma.matmul(&primary_sigma.transpose());
    let mut ito = 0.0;
    for j in 0..a.nrows() {
        for k in 0..a.ncols() {
            ito += a[(j, k)] * hess[(j, k)];
        }
    }
    let mu_i = model.ou.kappa * (model.ou.theta - xi_i + f) + dot(&grad, primary_mu) + 0.5 * ito;
    let sigma_i = primary_sigma.tr_matvec(&grad);
    (mu_i, sigma_i)
}

/// Joint simulation output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointSim {
    pub primary: SimResult,
    /// Secondary factors before feasibility repair.
    pub secondary_raw: Mat,
    /// Full factor panel `[primary | secondary]` after repair.
    pub joint: Mat,
    /// Steps whose secondary block was moved by the repair.
    pub repaired_steps: usize,
    /// Steps that needed the joint (primary-moving) fallback.
    pub joint_fallbacks: usize,
}

/// Simulate primary factors with the constrained model, secondary factors as
/// cubic link plus AR(1) noise, and L1-repair the secondary coordinates into
/// the full polytope holding the primary block fixed.
pub fn simulate_joint(
    primary_model: &ConstrainedSdeModel,
    secondary_models: &[SecondaryFactorModel],
    full_polytope: &Polytope,
    s0: f64,
    xi0: &[f64],
    steps: usize,
    seed: u64,
) -> Result<JointSim> {
    let d_primary = primary_model.dim();
    let d_sec = secondary_models.len();
    let d = d_primary + d_sec;
    if full_polytope.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "full polytope dimension {} != {d_primary} primary + {d_sec} secondary",
            full_polytope.dim()
        )));
    }
    let primary = tamed_euler(primary_model, s0, xi0, steps, seed)?;
    let dt = primary_model.dt;
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(0x5ec0_da17));

    let mut secondary_raw = Mat::zeros(steps + 1, d_sec);
    let mut eps: Vec<f64> = secondary_models.iter().map(|m| m.ou.theta).collect();
    for l in 0..=steps {
        let state = primary.factors.row(l);
        for (i, model) in secondary_models.iter().enumerate() {
            if l > 0 {
                let (a, c, sd) = model.ou.ar_coefficients(dt);
                let z: f64 = rng.sample(StandardNormal);
                eps[i] = a * eps[i] + c + sd * z;
            }
            secondary_raw[(l, i)] = model.link.value(state) + eps[i];
        }
    }

    let mut joint = Mat::zeros(steps + 1, d);
    let mut repaired_steps = 0usize;
    let mut joint_fallbacks = 0usize;
    for l in 0..=steps {
        let mut row: Vec<f64> = primary.factors.row(l).to_vec();
        row.extend_from_slice(secondary_raw.row(l));
        if !full_polytope.contains(&row, 0.0) {
            match lp::repair_l1(&row, full_polytope.normals(), full_polytope.offsets(), d_primary)?
            {
                Some(fixed) => {
                    row = fixed;
                    repaired_steps += 1;
                }
                None => {
                    // primary block admits no feasible completion; move the
                    // whole state as a last resort
                    log::warn!("joint repair fallback at step {l}: no secondary completion");
                    match lp::repair_l1(&row, full_polytope.normals(), full_polytope.offsets(), 0)?
                    {
                        Some(fixed) => {
                            row = fixed;
                            repaired_steps += 1;
                            joint_fallbacks += 1;
                        }
                        None => return Err(Error::RepairInfeasible),
                    }
                }
            }
        }
        joint.set_row(l, &row);
    }
    Ok(JointSim {
        primary,
        secondary_raw,
        joint,
        repaired_steps,
        joint_fallbacks,
    })
}
