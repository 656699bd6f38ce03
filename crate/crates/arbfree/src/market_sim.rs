//! Synthetic market generation and model simulation: the Heston-SLV data
//! generator with a semi-analytic pricer, the tamed Euler scheme for the
//! calibrated model, VIX series, implied-vol paths, and the Wasserstein-1
//! evaluation metric.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constrained_sde::ConstrainedSdeModel;
use crate::error::{Error, Result};
use crate::factor_decode::PriceBasis;
use crate::lattice::OptionLattice;
use crate::linalg::{dot, norm2, Mat};
use crate::polytope::Polytope;
use crate::static_arbitrage;
use crate::surface::{self, SmoothField, SurfaceSeries, TerminalAugment};

/// Leverage function specification. The default identity keeps the
/// semi-analytic pricer available; an analytic log-quadratic profile switches
/// dataset pricing to per-step Monte Carlo.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeverageSpec {
    Identity,
    /// `L(t, S) = a + b x + c x^2` with `x = ln(S / s_ref)`.
    LogQuadratic { a: f64, b: f64, c: f64, s_ref: f64 },
}

impl LeverageSpec {
    pub fn eval(&self, _t: f64, s: f64) -> f64 {
        match *self {
            LeverageSpec::Identity => 1.0,
            LeverageSpec::LogQuadratic { a, b, c, s_ref } => {
                let x = (s / s_ref).ln();
                a + b * x + c * x * x
            }
        }
    }
}

/// Ground-truth generator configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HestonSlvParams {
    pub rate: f64,
    pub dividend: f64,
    pub s0: f64,
    pub nu0: f64,
    pub theta: f64,
    pub kappa: f64,
    /// Vol-of-vol.
    pub sigma: f64,
    pub rho: f64,
    pub leverage: LeverageSpec,
    pub l_steps: usize,
    pub dt: f64,
}

impl Default for HestonSlvParams {
    /// Reference generator values at desk-scale simulation length.
    fn default() -> Self {
        Self {
            rate: 0.0,
            dividend: 0.0,
            s0: 100.0,
            nu0: 0.0083,
            theta: 0.0085,
            kappa: 8.3,
            sigma: 0.32,
            rho: -0.42,
            leverage: LeverageSpec::Identity,
            l_steps: 2000,
            dt: 5e-4,
        }
    }
}

impl HestonSlvParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::PreconditionViolated(format!(
                "rho must lie in (-1, 1), got {}",
                self.rho
            )));
        }
        if self.dt <= 0.0 || self.s0 <= 0.0 || self.nu0 < 0.0 || self.kappa <= 0.0 {
            return Err(Error::PreconditionViolated(
                "dt, s0, kappa must be positive and nu0 non-negative".into(),
            ));
        }
        if 2.0 * self.kappa * self.theta < self.sigma * self.sigma {
            log::warn!(
                "Feller condition violated: 2 kappa theta = {} < sigma^2 = {}",
                2.0 * self.kappa * self.theta,
                self.sigma * self.sigma
            );
        }
        Ok(())
    }
}

/// Sample one `(S, nu)` path by full-truncation Euler with correlated
/// drivers; the spot drift is zero for the generated trajectory.
pub fn heston_slv_path(params: &HestonSlvParams, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = params.l_steps;
    let dt = params.dt;
    let sqrt_dt = dt.sqrt();
    let rho_c = (1.0 - params.rho * params.rho).sqrt();
    let mut s = Vec::with_capacity(n + 1);
    let mut nu = Vec::with_capacity(n + 1);
    let mut s_t = params.s0;
    let mut nu_t = params.nu0;
    s.push(s_t);
    nu.push(nu_t);
    for step in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let dw_s = sqrt_dt * z1;
        let dw_nu = sqrt_dt * (params.rho * z1 + rho_c * z2);
        let nu_plus = nu_t.max(0.0);
        let lev = params.leverage.eval(step as f64 * dt, s_t);
        s_t += lev * nu_plus.sqrt() * s_t * dw_s;
        nu_t += params.kappa * (params.theta - nu_plus) * dt + params.sigma * nu_plus.sqrt() * dw_nu;
        s.push(s_t);
        nu.push(nu_t);
    }
    (s, nu)
}

// -- semi-analytic Heston pricing --

/// Heston characteristic function of the log forward ratio at horizon `tau`
/// (zero-drift martingale convention), in the numerically stable branch
/// formulation.
fn heston_cf(u: Complex64, tau: f64, nu0: f64, p: &HestonSlvParams) -> Complex64 {
    let i = Complex64::i();
    let sigma2 = p.sigma * p.sigma;
    let xi = Complex64::new(p.kappa, 0.0) - p.rho * p.sigma * i * u;
    let d = (xi * xi + sigma2 * (i * u + u * u)).sqrt();
    let g = (xi - d) / (xi + d);
    let e_dt = (-d * tau).exp();
    let log_term = ((1.0 - g * e_dt) / (1.0 - g)).ln();
    let a = p.kappa * p.theta / sigma2 * ((xi - d) * tau - 2.0 * log_term);
    let b = (xi - d) / sigma2 * (1.0 - e_dt) / (1.0 - g * e_dt);
    (a + b * nu0).exp()
}

/// Adaptive Gauss-Lobatto quadrature (4-point rule with a 7-point Kronrod
/// refinement, bisecting until agreement).
fn adaptive_lobatto<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    const ALPHA: f64 = 0.816_496_580_927_726; // sqrt(2/3)
    const BETA: f64 = 0.447_213_595_499_957_9; // 1/sqrt(5)
    fn segment<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fb: f64,
        tol: f64,
        depth: usize,
    ) -> Result<f64> {
        let h = 0.5 * (b - a);
        let m = 0.5 * (a + b);
        let x1 = m - ALPHA * h;
        let x2 = m - BETA * h;
        let x4 = m + BETA * h;
        let x5 = m + ALPHA * h;
        let (f1, f2, f3, f4, f5) = (f(x1), f(x2), f(m), f(x4), f(x5));
        let q4 = h / 6.0 * (fa + fb + 5.0 * (f2 + f4));
        let k7 = h / 1470.0
            * (77.0 * (fa + fb) + 432.0 * (f1 + f5) + 625.0 * (f2 + f4) + 672.0 * f3);
        if !k7.is_finite() {
            return Err(Error::QuadratureFailure(format!(
                "non-finite integrand on [{a}, {b}]"
            )));
        }
        if (k7 - q4).abs() <= tol || depth >= 28 {
            return Ok(k7);
        }
        Ok(segment(f, a, m, fa, f3, 0.5 * tol, depth + 1)?
            + segment(f, m, b, f3, fb, 0.5 * tol, depth + 1)?)
    }
    segment(f, a, b, f(a), f(b), tol, 0)
}

/// Normalized Heston call price via characteristic-function quadrature.
/// Requires the identity leverage (pure Heston).
pub fn heston_price(params: &HestonSlvParams, tau: f64, m: f64, nu: f64) -> Result<f64> {
    if params.leverage != LeverageSpec::Identity {
        return Err(Error::LeverageNotIdentity);
    }
    if tau <= 0.0 {
        return Ok(surface::intrinsic(m));
    }
    let nu = nu.max(0.0);
    if nu == 0.0 && params.theta == 0.0 {
        return Ok(surface::intrinsic(m));
    }
    let i = Complex64::i();
    let phi_minus_i = heston_cf(-i, tau, nu, params).re;
    // integration cap where the integrand envelope has decayed
    let mut u_max = 50.0;
    while u_max < 40_000.0 {
        let mag = heston_cf(Complex64::new(u_max, 0.0), tau, nu, params).norm() / u_max;
        if mag < 1e-16 {
            break;
        }
        u_max *= 1.6;
    }
    let integrand_p2 = |u: f64| -> f64 {
        let uc = Complex64::new(u, 0.0);
        ((-i * u * m).exp() * heston_cf(uc, tau, nu, params) / (i * u)).re
    };
    let integrand_p1 = |u: f64| -> f64 {
        let uc = Complex64::new(u, -1.0);
        ((-i * u * m).exp() * heston_cf(uc, tau, nu, params) / (i * u * phi_minus_i)).re
    };
    let tol = 1e-11;
    let lo = 1e-10;
    let p1 = 0.5 + adaptive_lobatto(&integrand_p1, lo, u_max, tol)? / std::f64::consts::PI;
    let p2 = 0.5 + adaptive_lobatto(&integrand_p2, lo, u_max, tol)? / std::f64::consts::PI;
    let price = p1 - m.exp() * p2;
    if !price.is_finite() {
        return Err(Error::QuadratureFailure(format!(
            "non-finite price at tau={tau}, m={m}, nu={nu}"
        )));
    }
    Ok(price.clamp(surface::intrinsic(m), 1.0))
}

/// Generator output: the surface series plus the latent variance path.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratedData {
    pub series: SurfaceSeries,
    pub nu: Vec<f64>,
}

impl GeneratedData {
    /// Ground-truth spot diffusion coefficient `L(t, S) sqrt(nu) S` along
    /// the generated path.
    pub fn true_spot_vol(&self, params: &HestonSlvParams) -> Vec<f64> {
        self.series
            .spot
            .iter()
            .zip(&self.nu)
            .enumerate()
            .map(|(l, (s, nu))| {
                params.leverage.eval(l as f64 * params.dt, *s) * nu.max(0.0).sqrt() * s
            })
            .collect()
    }
}

/// Simulate one `(S, nu)` path and price the full lattice surface at every
/// step (prices depend on `(tau, m, nu_t)` only, so the series is
/// time-homogeneous by construction).
pub fn generate_dataset(
    params: &HestonSlvParams,
    lattice: &OptionLattice,
    seed: u64,
) -> Result<GeneratedData> {
    params.validate()?;
    if params.leverage != LeverageSpec::Identity {
        return Err(Error::LeverageNotIdentity);
    }
    let (spot, nu) = heston_slv_path(params, seed);
    let nodes = lattice.nodes().to_vec();
    let rows: Result<Vec<Vec<f64>>> = nu
        .par_iter()
        .map(|&nu_t| {
            nodes
                .iter()
                .map(|&(tau, m)| heston_price(params, tau, m, nu_t))
                .collect()
        })
        .collect();
    let rows = rows?;
    let mut c = Mat::zeros(spot.len(), lattice.len());
    for (l, row) in rows.iter().enumerate() {
        c.set_row(l, row);
    }
    let times: Vec<f64> = (0..spot.len()).map(|l| l as f64 * params.dt).collect();
    let series = SurfaceSeries::new(
        lattice.clone(),
        c,
        times,
        spot,
        params.rate,
        params.dividend,
    )?;
    Ok(GeneratedData { series, nu })
}

/// Counters describing a model simulation run.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct SimDiagnostics {
    /// Proposals rejected because they left the polytope.
    pub rejections: usize,
    /// Steps that fell back to the L1 repair after exhausting halvings.
    pub repairs: usize,
    /// Polytope violations among the emitted states (ablation runs).
    pub violations: usize,
}

/// Output of [`tamed_euler`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimResult {
    pub times: Vec<f64>,
    pub spot: Vec<f64>,
    pub factors: Mat,
    pub diagnostics: SimDiagnostics,
}

/// Simulate `(S, xi)` with the tamed Euler scheme.
///
/// Increments are damped by `1 + |mu| sqrt(dt)` (drift) and
/// `1 + |sigma| sqrt(dt)` (diffusion). When the operators are enabled, a
/// proposal leaving the polytope is retried with halved step size (the two
/// halves completing the original step) up to 10 halvings, then projected
/// back by the L1 repair; occurrences are counted in the diagnostics.
/// Ablation models step freely and the diagnostics count violations.
pub fn tamed_euler(
    model: &ConstrainedSdeModel,
    s0: f64,
    xi0: &[f64],
    steps: usize,
    seed: u64,
) -> Result<SimResult> {
    let d = model.dim();
    assert_eq!(xi0.len(), d, "initial factor dimension mismatch");
    if !model.ablation() && !model.polytope.contains(xi0, 0.0) {
        return Err(Error::OutsidePolytope {
            min_dist: model.polytope.min_distance(xi0),
        });
    }
    let dt = model.dt;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut diagnostics = SimDiagnostics::default();
    let mut consecutive_repairs = 0usize;

    let mut spot = Vec::with_capacity(steps + 1);
    let mut factors = Mat::zeros(steps + 1, d);
    let mut s = s0;
    let mut xi = xi0.to_vec();
    spot.push(s);
    factors.set_row(0, &xi);

    for step in 0..steps {
        // spot update (unconstrained)
        let (mu_s, sigma_s) = model.s_coefficients(s, &xi)?;
        let z0: f64 = rng.sample(StandardNormal);
        let sqrt_dt = dt.sqrt();
        s += mu_s / (1.0 + mu_s.abs() * sqrt_dt) * dt
            + sigma_s / (1.0 + sigma_s.abs() * sqrt_dt) * sqrt_dt * z0;

        // factor update with step-halving fallback
        let mut advanced = false;
        let mut h = dt;
        let mut halvings = 0usize;
        while !advanced {
            let mut y = xi.clone();
            let substeps = (dt / h).round() as usize;
            let mut ok = true;
            for _ in 0..substeps {
                let (mu, sigma) = model.coefficients(s, &y)?;
                let sqrt_h = h.sqrt();
                let mu_norm = norm2(&mu);
                let sig_norm = sigma.frobenius_norm();
                let dw: Vec<f64> = (0..d)
                    .map(|_| sqrt_h * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let noise = sigma.matvec(&dw);
                for k in 0..d {
                    y[k] += mu[k] / (1.0 + mu_norm * sqrt_h) * h
                        + noise[k] / (1.0 + sig_norm * sqrt_h);
                }
                if !model.ablation() && !model.polytope.contains(&y, 1e-9) {
                    ok = false;
                    break;
                }
            }
            if ok {
                xi = y;
                advanced = true;
                if halvings == 0 {
                    consecutive_repairs = 0;
                }
            } else if halvings < 10 {
                diagnostics.rejections += 1;
                halvings += 1;
                h *= 0.5;
            } else {
                // exhausted halvings: take the full-step proposal and repair
                let (mu, sigma) = model.coefficients(s, &xi)?;
                let sqrt_dt = dt.sqrt();
                let dw: Vec<f64> = (0..d)
                    .map(|_| sqrt_dt * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let noise = sigma.matvec(&dw);
                let mu_norm = norm2(&mu);
                let sig_norm = sigma.frobenius_norm();
                let mut y = xi.clone();
                for k in 0..d {
                    y[k] += mu[k] / (1.0 + mu_norm * sqrt_dt) * dt
                        + noise[k] / (1.0 + sig_norm * sqrt_dt);
                }
                xi = static_arbitrage::repair(&y, &model.polytope)?;
                diagnostics.repairs += 1;
                consecutive_repairs += 1;
                if consecutive_repairs > 100 {
                    return Err(Error::StuckAtBoundary {
                        count: consecutive_repairs,
                    });
                }
                advanced = true;
            }
        }
        if model.ablation() && !model.polytope.contains(&xi, 1e-9) {
            diagnostics.violations += 1;
        }
        spot.push(s);
        factors.set_row(step + 1, &xi);
        let _ = step;
    }
    Ok(SimResult {
        times: (0..=steps).map(|l| l as f64 * dt).collect(),
        spot,
        factors,
        diagnostics,
    })
}

/// Direct VIX series: the linear functional `h . (G0 + G^T xi) + offset`
/// applied to reconstructed prices.
pub fn vix_direct(xi: &Mat, basis: &PriceBasis, h: &[f64], offset: f64) -> Vec<f64> {
    let base = dot(h, &basis.g0) + offset;
    let gh = basis.g.matvec(h); // d-vector
    (0..xi.nrows()).map(|l| base + dot(xi.row(l), &gh)).collect()
}

/// Fitted linear map from factors to the VIX level.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VixFit {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub r_squared: f64,
}

/// Ordinary least squares of a VIX series on the factor columns.
pub fn fit_vix_regression(xi: &Mat, vix: &[f64]) -> Result<VixFit> {
    let n = xi.nrows();
    if n != vix.len() || n == 0 {
        return Err(Error::DimensionMismatch(
            "VIX series and factor rows must align".into(),
        ));
    }
    let d = xi.ncols();
    let mut design = Mat::zeros(n, d + 1);
    for l in 0..n {
        design[(l, 0)] = 1.0;
        for k in 0..d {
            design[(l, k + 1)] = xi[(l, k)];
        }
    }
    let sol = crate::linalg::lstsq(&design, vix, 1e-12)?;
    let fitted = design.matvec(&sol);
    let mean = vix.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = vix.iter().map(|v| (v - mean) * (v - mean)).sum();
    let ss_res: f64 = vix
        .iter()
        .zip(&fitted)
        .map(|(v, f)| (v - f) * (v - f))
        .sum();
    Ok(VixFit {
        beta0: sol[0],
        beta: sol[1..].to_vec(),
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
    })
}

/// Regression-mode VIX series from simulated factors.
pub fn vix_regression(xi: &Mat, fit: &VixFit) -> Vec<f64> {
    (0..xi.nrows())
        .map(|l| fit.beta0 + dot(xi.row(l), &fit.beta))
        .collect()
}

/// First-order Wasserstein distance between two empirical distributions,
/// via the quantile coupling on the merged probability breakpoints.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("wasserstein1 needs non-empty samples".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let n = xs.len();
    let m = ys.len();
    let mut total = 0.0;
    let mut u = 0.0f64;
    let mut i = 0usize;
    let mut j = 0usize;
    while u < 1.0 - 1e-15 {
        let next_i = (i + 1) as f64 / n as f64;
        let next_j = (j + 1) as f64 / m as f64;
        let next = next_i.min(next_j);
        total += (next - u) * (xs[i] - ys[j]).abs();
        if next_i <= next_j + 1e-15 {
            i = (i + 1).min(n - 1);
        }
        if next_j <= next_i + 1e-15 {
            j = (j + 1).min(m - 1);
        }
        u = next;
    }
    Ok(total)
}

/// Implied-vol path extraction output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IvPaths {
    pub picks: Vec<(f64, f64)>,
    /// One column per pick; NaN marks an inversion gap.
    pub series: Mat,
    pub gaps: usize,
}

/// Reconstruct prices at the picked `(tau, m)` points from factors and
/// invert to implied vols per time step. Picks off the lattice are evaluated
/// through smooth interpolation of the basis fields.
pub fn iv_paths(
    xi: &Mat,
    basis: &PriceBasis,
    lattice: &OptionLattice,
    picks: &[(f64, f64)],
) -> Result<IvPaths> {
    let d = basis.dim();
    // per pick: G0(pick) and G_i(pick)
    let mut g0_at = Vec::with_capacity(picks.len());
    let mut g_at = Mat::zeros(picks.len(), d);
    let mut fields: Option<(SmoothField, Vec<SmoothField>)> = None;
    for (pi, &(tau, m)) in picks.iter().enumerate() {
        match lattice.node_index(tau, m, 1e-10) {
            Some(j) => {
                g0_at.push(basis.g0[j]);
                for k in 0..d {
                    g_at[(pi, k)] = basis.g[(k, j)];
                }
            }
            None => {
                if fields.is_none() {
                    let f0 =
                        surface::fit_smooth_field(lattice, &basis.g0, TerminalAugment::Payoff)?;
                    let mut fi = Vec::with_capacity(d);
                    for k in 0..d {
                        fi.push(surface::fit_smooth_field(
                            lattice,
                            basis.g.row(k),
                            TerminalAugment::Zero,
                        )?);
                    }
                    fields = Some((f0, fi));
                }
                let (f0, fi) = fields.as_ref().unwrap();
                g0_at.push(f0.value(tau, m));
                for k in 0..d {
                    g_at[(pi, k)] = fi[k].value(tau, m);
                }
            }
        }
    }
    let mut series = Mat::zeros(xi.nrows(), picks.len());
    let mut gaps = 0usize;
    for l in 0..xi.nrows() {
        for (pi, &(tau, m)) in picks.iter().enumerate() {
            let price = g0_at[pi] + dot(g_at.row(pi), xi.row(l));
            series[(l, pi)] = match surface::implied_vol(price, tau, m) {
                Ok(v) => v,
                Err(_) => {
                    gaps += 1;
                    f64::NAN
                }
            };
        }
    }
    Ok(IvPaths {
        picks: picks.to_vec(),
        series,
        gaps,
    })
}

/// Proportion of statically arbitrageable samples in a factor panel.
pub fn psas(xi: &Mat, polytope: &Polytope) -> Result<f64> {
    static_arbitrage::psas(xi, polytope)
}
