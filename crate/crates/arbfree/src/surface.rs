//! Price normalization, Black-Scholes transforms, implied-vol inversion,
//! smooth interpolation of lattice functions with derivatives, the
//! differential operator feeding the drift restriction, and VIX weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::OptionLattice;
use crate::linalg::{lu_solve, Mat};

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse standard normal CDF (Acklam's rational approximation polished by
/// one Halley step against `norm_cdf`).
pub fn norm_inv(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "norm_inv domain is (0, 1), got {p}");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // Halley refinement
    let e = norm_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Normalize a raw call price by discount factor times forward.
pub fn normalize(raw_call: f64, discount: f64, forward: f64) -> Result<f64> {
    if !(discount > 0.0) {
        return Err(Error::InvalidDiscount(discount));
    }
    if !(forward > 0.0) {
        return Err(Error::NonpositiveForward(forward));
    }
    Ok(raw_call / (discount * forward))
}

/// Forward log-moneyness `m = ln(K / F)`.
pub fn forward_log_moneyness(strike: f64, forward: f64) -> Result<f64> {
    if !(forward > 0.0) {
        return Err(Error::NonpositiveForward(forward));
    }
    Ok((strike / forward).ln())
}

/// Intrinsic value of a normalized call: `(1 - e^m)^+`.
pub fn intrinsic(m: f64) -> f64 {
    (1.0 - m.exp()).max(0.0)
}

/// Normalized Black-Scholes call price in `(tau, m)` coordinates:
/// `Phi(d1) - e^m Phi(d2)` with `d_{1,2} = -m/(v sqrt(tau)) +- v sqrt(tau)/2`.
///
/// Degenerate inputs (`tau <= 0` or `vol <= 0`) fall back to the intrinsic
/// payoff, matching the terminal condition of the price surface.
pub fn bs_normalized_price(tau: f64, m: f64, vol: f64) -> f64 {
    if tau <= 0.0 || vol <= 0.0 {
        return intrinsic(m);
    }
    let sd = vol * tau.sqrt();
    let d1 = -m / sd + 0.5 * sd;
    let d2 = d1 - sd;
    norm_cdf(d1) - m.exp() * norm_cdf(d2)
}

/// Vega of the normalized price with respect to implied vol:
/// `sqrt(tau) * phi(d1)`, strictly positive for `tau > 0`.
pub fn bs_normalized_vega(tau: f64, m: f64, vol: f64) -> f64 {
    if tau <= 0.0 || vol <= 0.0 {
        return 0.0;
    }
    let sd = vol * tau.sqrt();
    let d1 = -m / sd + 0.5 * sd;
    tau.sqrt() * norm_pdf(d1)
}

/// Implied-vol solver bracket (annualized).
const VOL_LO: f64 = 1e-6;
const VOL_HI: f64 = 5.0;

/// Invert the normalized Black-Scholes price for the implied volatility.
///
/// Safeguarded Newton: vega steps clipped into a shrinking bisection
/// bracket, converging to a price residual below 1e-12 (well inside the
/// 1e-10 contract).
pub fn implied_vol(c: f64, tau: f64, m: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::OutOfBounds {
            price: c,
            lo: intrinsic(m),
            hi: 1.0,
            tau,
            m,
        });
    }
    let lo_price = intrinsic(m);
    if c <= lo_price || c >= 1.0 {
        return Err(Error::OutOfBounds {
            price: c,
            lo: lo_price,
            hi: 1.0,
            tau,
            m,
        });
    }
    let mut lo = VOL_LO;
    let mut hi = VOL_HI;
    let f_lo = bs_normalized_price(tau, m, lo) - c;
    let f_hi = bs_normalized_price(tau, m, hi) - c;
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::OutOfBounds {
            price: c,
            lo: bs_normalized_price(tau, m, lo),
            hi: bs_normalized_price(tau, m, hi),
            tau,
            m,
        });
    }
    let mut vol = 0.5 * (lo + hi);
    // ATM closed form gives an excellent starting point everywhere.
    if m.abs() < 0.5 {
        let guess = atm_implied_vol(c.clamp(1e-300, 1.0 - 1e-16), tau);
        if guess.is_finite() && guess > lo && guess < hi {
            vol = guess;
        }
    }
    for _ in 0..100 {
        let f = bs_normalized_price(tau, m, vol) - c;
        if f.abs() <= 1e-14 {
            return Ok(vol);
        }
        if f > 0.0 {
            hi = vol;
        } else {
            lo = vol;
        }
        let vega = bs_normalized_vega(tau, m, vol);
        let newton = vol - f / vega;
        vol = if vega > 1e-300 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(vol)
}

/// Closed-form at-the-money inversion: at `m = 0`,
/// `c = 2 Phi(vol sqrt(tau) / 2) - 1`.
pub fn atm_implied_vol(c: f64, tau: f64) -> f64 {
    2.0 * norm_inv((1.0 + c) / 2.0) / tau.sqrt()
}

/// Terminal-node augmentation mode for [`fit_smooth_field`].
///
/// Price-level fields take the exact payoff at `tau = 0`; basis-perturbation
/// fields vanish there.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalAugment {
    None,
    Payoff,
    Zero,
}

/// Smooth interpolant over `(tau, m)` with analytic first and second
/// derivatives.
///
/// Price-level fields are fitted as an analytic Black-Scholes proxy (flat
/// vol read off the data near the money) plus a polyharmonic radial-basis
/// correction; basis-perturbation fields skip the proxy. The radial part
/// uses `r^4 ln r` with a quadratic polynomial tail in the coordinates
/// `(sqrt(tau), m)` rescaled to unit ranges: the square-root abscissa
/// matches the natural `sqrt(tau)` growth of option prices, and the
/// second-order kernel (unlike the classic `r^2 ln r`) keeps second
/// derivatives continuous at the nodes, which is where the differential
/// operator is evaluated.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmoothField {
    /// Scaled node coordinates `(q, m)` with `q = sqrt(tau) / scale_q`.
    nodes: Vec<(f64, f64)>,
    rbf_coef: Vec<f64>,
    poly_coef: [f64; N_POLY],
    scale_q: f64,
    scale_m: f64,
    /// Flat vol of the analytic proxy surface, if one was subtracted.
    proxy_vol: Option<f64>,
}

const N_POLY: usize = 6;

fn kernel(s: f64) -> f64 {
    // phi(r) = r^4 ln r = s^2 ln(s) / 2 with s = r^2
    if s < 1e-300 {
        0.0
    } else {
        0.5 * s * s * s.ln()
    }
}

/// d phi / d u = u (2 s ln s + s)
fn kernel_d(s: f64) -> f64 {
    if s < 1e-300 {
        0.0
    } else {
        2.0 * s * s.ln() + s
    }
}

/// d^2 phi / d v^2 = (2 s ln s + s) + v^2 (4 ln s + 6)
fn kernel_dd(s: f64, v: f64) -> f64 {
    if s < 1e-300 {
        0.0
    } else {
        kernel_d(s) + v * v * (4.0 * s.ln() + 6.0)
    }
}

/// Black-Scholes derivatives of the normalized price in `(tau, m)`: value,
/// d/dtau, d/dm, d^2/dm^2.
fn bs_derivatives(tau: f64, m: f64, vol: f64) -> (f64, f64, f64, f64) {
    if tau <= 0.0 {
        return (intrinsic(m), 0.0, 0.0, 0.0);
    }
    let sd = vol * tau.sqrt();
    let d1 = -m / sd + 0.5 * sd;
    let d2 = d1 - sd;
    let em = m.exp();
    let value = norm_cdf(d1) - em * norm_cdf(d2);
    let d_tau = norm_pdf(d1) * vol / (2.0 * tau.sqrt());
    let d_m = -em * norm_cdf(d2);
    let d_mm = d_m + em * norm_pdf(d2) / sd;
    (value, d_tau, d_m, d_mm)
}

impl SmoothField {
    fn poly_terms(q: f64, m: f64) -> [f64; N_POLY] {
        [1.0, q, m, q * q, q * m, m * m]
    }

    fn poly_dq(q: f64, m: f64) -> [f64; N_POLY] {
        [0.0, 1.0, 0.0, 2.0 * q, m, 0.0]
    }

    fn poly_dm(q: f64, m: f64) -> [f64; N_POLY] {
        [0.0, 0.0, 1.0, 0.0, q, 2.0 * m]
    }

    fn poly_dmm(_q: f64, _m: f64) -> [f64; N_POLY] {
        [0.0, 0.0, 0.0, 0.0, 0.0, 2.0]
    }

    pub fn value(&self, tau: f64, m: f64) -> f64 {
        let (q, mm) = self.scaled(tau, m);
        let mut v = match self.proxy_vol {
            Some(vol) => bs_normalized_price(tau, m, vol),
            None => 0.0,
        };
        for ((qi, mi), c) in self.nodes.iter().zip(&self.rbf_coef) {
            let du = q - qi;
            let dv = mm - mi;
            v += c * kernel(du * du + dv * dv);
        }
        for (t, d) in Self::poly_terms(q, mm).iter().zip(&self.poly_coef) {
            v += t * d;
        }
        v
    }

    /// First derivative with respect to time-to-expiry.
    pub fn d_tau(&self, tau: f64, m: f64) -> f64 {
        assert!(tau > 0.0, "d_tau requires tau > 0");
        let (q, mm) = self.scaled(tau, m);
        let mut dq = 0.0;
        for ((qi, mi), c) in self.nodes.iter().zip(&self.rbf_coef) {
            let du = q - qi;
            let dv = mm - mi;
            dq += c * du * kernel_d(du * du + dv * dv);
        }
        for (t, d) in Self::poly_dq(q, mm).iter().zip(&self.poly_coef) {
            dq += t * d;
        }
        // q = sqrt(tau)/scale_q, so d/dtau = dq/dtau * d/dq
        let mut out = dq / (2.0 * tau.sqrt() * self.scale_q);
        if let Some(vol) = self.proxy_vol {
            out += bs_derivatives(tau, m, vol).1;
        }
        out
    }

    /// First derivative with respect to moneyness.
    pub fn d_m(&self, tau: f64, m: f64) -> f64 {
        let (q, mm) = self.scaled(tau, m);
        let mut dv_acc = 0.0;
        for ((qi, mi), c) in self.nodes.iter().zip(&self.rbf_coef) {
            let du = q - qi;
            let dv = mm - mi;
            dv_acc += c * dv * kernel_d(du * du + dv * dv);
        }
        for (t, d) in Self::poly_dm(q, mm).iter().zip(&self.poly_coef) {
            dv_acc += t * d;
        }
        let mut out = dv_acc / self.scale_m;
        if let Some(vol) = self.proxy_vol {
            out += bs_derivatives(tau, m, vol).2;
        }
        out
    }

    /// Second derivative with respect to moneyness.
    pub fn d_mm(&self, tau: f64, m: f64) -> f64 {
        let (q, mm) = self.scaled(tau, m);
        let mut acc = 0.0;
        for ((qi, mi), c) in self.nodes.iter().zip(&self.rbf_coef) {
            let du = q - qi;
            let dv = mm - mi;
            acc += c * kernel_dd(du * du + dv * dv, dv);
        }
        for (t, d) in Self::poly_dmm(q, mm).iter().zip(&self.poly_coef) {
            acc += t * d;
        }
        let mut out = acc / (self.scale_m * self.scale_m);
        if let Some(vol) = self.proxy_vol {
            out += bs_derivatives(tau, m, vol).3;
        }
        out
    }

    fn scaled(&self, tau: f64, m: f64) -> (f64, f64) {
        (tau.max(0.0).sqrt() / self.scale_q, m / self.scale_m)
    }
}

/// Fit a [`SmoothField`] through per-node values, optionally augmenting with
/// artificial `tau = 0` nodes carrying the terminal payoff (price fields) or
/// zero (basis fields).
pub fn fit_smooth_field(
    lattice: &OptionLattice,
    values: &[f64],
    augment: TerminalAugment,
) -> Result<SmoothField> {
    assert_eq!(values.len(), lattice.len(), "values/lattice length mismatch");
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("non-finite nodal value".into()));
    }
    // Price-level fields carry the steep near-expiry curvature in an
    // analytic proxy so the radial part only interpolates a mild residual.
    let proxy_vol = if augment == TerminalAugment::Payoff {
        proxy_vol_from_data(lattice, values)
    } else {
        None
    };
    let mut pts: Vec<(f64, f64)> = lattice.nodes().to_vec();
    let mut vals: Vec<f64> = match proxy_vol {
        Some(vol) => lattice
            .nodes()
            .iter()
            .zip(values)
            .map(|(&(t, m), v)| v - bs_normalized_price(t, m, vol))
            .collect(),
        None => values.to_vec(),
    };
    if augment != TerminalAugment::None {
        let mut ms: Vec<f64> = lattice.nodes().iter().map(|&(_, m)| m).collect();
        ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ms.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        // Midpoint refinement anchors the short-expiry region more tightly.
        let mut grid = Vec::with_capacity(2 * ms.len());
        for w in ms.windows(2) {
            grid.push(w[0]);
            grid.push(0.5 * (w[0] + w[1]));
        }
        grid.push(*ms.last().unwrap());
        for m in grid {
            pts.push((0.0, m));
            vals.push(match augment {
                // proxy already matches the payoff at tau = 0 exactly
                TerminalAugment::Payoff if proxy_vol.is_some() => 0.0,
                TerminalAugment::Payoff => intrinsic(m),
                TerminalAugment::Zero => 0.0,
                TerminalAugment::None => unreachable!(),
            });
        }
    }

    let qs: Vec<f64> = pts.iter().map(|&(t, _)| t.sqrt()).collect();
    let ms: Vec<f64> = pts.iter().map(|&(_, m)| m).collect();
    let range = |xs: &[f64]| -> f64 {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo).max(1e-9)
    };
    let scale_q = range(&qs);
    let scale_m = range(&ms);
    let nodes: Vec<(f64, f64)> = qs
        .iter()
        .zip(&ms)
        .map(|(&q, &m)| (q / scale_q, m / scale_m))
        .collect();

    let n = nodes.len();
    let dim = n + N_POLY;
    let mut a = Mat::zeros(dim, dim);
    let mut rhs = vec![0.0; dim];
    for i in 0..n {
        for j in 0..n {
            let du = nodes[i].0 - nodes[j].0;
            let dv = nodes[i].1 - nodes[j].1;
            a[(i, j)] = kernel(du * du + dv * dv);
        }
        let p = SmoothField::poly_terms(nodes[i].0, nodes[i].1);
        for (jj, &pv) in p.iter().enumerate() {
            a[(i, n + jj)] = pv;
            a[(n + jj, i)] = pv;
        }
        rhs[i] = vals[i];
    }
    let sol = lu_solve(&a, &rhs).map_err(|_| {
        Error::SingularSystem("duplicate or degenerate interpolation nodes".into())
    })?;
    let mut poly_coef = [0.0; N_POLY];
    poly_coef.copy_from_slice(&sol[n..]);
    Ok(SmoothField {
        nodes,
        rbf_coef: sol[..n].to_vec(),
        poly_coef,
        scale_q,
        scale_m,
        proxy_vol,
    })
}

/// Flat proxy vol read off the data: implied vol at the node closest to the
/// money among the mid-range expiries. `None` when no node inverts cleanly.
fn proxy_vol_from_data(lattice: &OptionLattice, values: &[f64]) -> Option<f64> {
    let mut order: Vec<usize> = (0..lattice.len()).collect();
    let (tau_lo, tau_hi) = lattice.tau_range();
    let tau_mid = 0.5 * (tau_lo + tau_hi);
    order.sort_by(|&i, &j| {
        let (ti, mi) = lattice.nodes()[i];
        let (tj, mj) = lattice.nodes()[j];
        let score = |t: f64, m: f64| m.abs() * 10.0 + (t - tau_mid).abs();
        score(ti, mi).partial_cmp(&score(tj, mj)).unwrap()
    });
    for &j in order.iter().take(4) {
        let (tau, m) = lattice.nodes()[j];
        if let Ok(vol) = implied_vol(values[j], tau, m) {
            return Some(vol);
        }
    }
    None
}

/// Evaluate the drift-restriction differential operator at every lattice
/// node:
/// `z_j = (-d/dtau - gamma^2/2 d/dm + gamma^2/2 d^2/dm^2) c(tau_j, m_j)`.
pub fn z_vector(field: &SmoothField, lattice: &OptionLattice, gamma: f64) -> Vec<f64> {
    assert!(gamma > 0.0, "gamma must be positive");
    let half_g2 = 0.5 * gamma * gamma;
    lattice
        .nodes()
        .iter()
        .map(|&(tau, m)| {
            -field.d_tau(tau, m) - half_g2 * field.d_m(tau, m) + half_g2 * field.d_mm(tau, m)
        })
        .collect()
}

/// Time series of normalized call price surfaces on a fixed lattice, with
/// the spot path and deterministic (flat) rates alongside.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurfaceSeries {
    pub lattice: OptionLattice,
    /// (L+1) x N normalized prices.
    pub c: Mat,
    /// Uniformly spaced observation times.
    pub times: Vec<f64>,
    pub spot: Vec<f64>,
    pub rate: f64,
    pub dividend: f64,
}

impl SurfaceSeries {
    pub fn new(
        lattice: OptionLattice,
        c: Mat,
        times: Vec<f64>,
        spot: Vec<f64>,
        rate: f64,
        dividend: f64,
    ) -> Result<Self> {
        if c.ncols() != lattice.len() {
            return Err(Error::DimensionMismatch(format!(
                "price panel has {} columns for a lattice of {} nodes",
                c.ncols(),
                lattice.len()
            )));
        }
        if c.nrows() != times.len() || spot.len() != times.len() {
            return Err(Error::DimensionMismatch(
                "times, spot and price rows must align".into(),
            ));
        }
        if times.len() < 2 {
            return Err(Error::DimensionMismatch(
                "a surface series needs at least two observations".into(),
            ));
        }
        let dt = times[1] - times[0];
        if dt <= 0.0
            || times
                .windows(2)
                .any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1e-12))
        {
            return Err(Error::DimensionMismatch(
                "observation times must be uniform and increasing".into(),
            ));
        }
        if c.data().iter().any(|&v| !(-1e-10..=1.0 + 1e-10).contains(&v)) {
            return Err(Error::OutOfBounds {
                price: c
                    .data()
                    .iter()
                    .cloned()
                    .fold(f64::NAN, |a, b| if b < 0.0 || b > 1.0 { b } else { a }),
                lo: 0.0,
                hi: 1.0,
                tau: f64::NAN,
                m: f64::NAN,
            });
        }
        Ok(Self {
            lattice,
            c,
            times,
            spot,
            rate,
            dividend,
        })
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with a `(tau;m)` pair per column header and the spot prepended to
    /// each row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("spot");
        for &(tau, m) in self.lattice.nodes() {
            out.push_str(&format!(",{};{}", crate::lattice::fmt_f64(tau), crate::lattice::fmt_f64(m)));
        }
        out.push('\n');
        for l in 0..self.len() {
            out.push_str(&crate::lattice::fmt_f64(self.spot[l]));
            for v in self.c.row(l) {
                out.push(',');
                out.push_str(&crate::lattice::fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }

    /// Parse the CSV produced by [`SurfaceSeries::to_csv`]; `dt`, `rate` and
    /// `dividend` come from the run configuration.
    pub fn from_csv(text: &str, dt: f64, rate: f64, dividend: f64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::DimensionMismatch("empty surface CSV".into()))?;
        let mut nodes = Vec::new();
        for cell in header.split(',').skip(1) {
            let mut parts = cell.split(';');
            let tau: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::DimensionMismatch(format!("bad header cell {cell}")))?;
            let m: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::DimensionMismatch(format!("bad header cell {cell}")))?;
            nodes.push((tau, m));
        }
        let mut spot = Vec::new();
        let mut rows = Vec::new();
        for line in lines {
            let mut cells = line.split(',');
            let s: f64 = cells
                .next()
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| Error::DimensionMismatch("bad spot cell".into()))?;
            spot.push(s);
            let row: std::result::Result<Vec<f64>, _> =
                cells.map(|c| c.trim().parse::<f64>()).collect();
            rows.push(row.map_err(|_| Error::DimensionMismatch("bad price cell".into()))?);
        }
        // Column order in the file is the lattice node order.
        let lattice = OptionLattice::from_nodes(&nodes)?;
        let reorder: Vec<usize> = lattice
            .nodes()
            .iter()
            .map(|&(t, m)| {
                nodes
                    .iter()
                    .position(|&(t2, m2)| (t - t2).abs() <= 1e-12 && (m - m2).abs() <= 1e-12)
                    .expect("node present")
            })
            .collect();
        let mut c = Mat::zeros(rows.len(), nodes.len());
        for (l, row) in rows.iter().enumerate() {
            if row.len() != nodes.len() {
                return Err(Error::DimensionMismatch(format!(
                    "row {l} has {} cells, expected {}",
                    row.len(),
                    nodes.len()
                )));
            }
            for (j, &src) in reorder.iter().enumerate() {
                c[(l, j)] = row[src];
            }
        }
        let times: Vec<f64> = (0..rows.len()).map(|l| l as f64 * dt).collect();
        Self::new(lattice, c, times, spot, rate, dividend)
    }
}

/// Linear VIX functional: weights `h` and affine offset such that
/// `h . c + offset` is the discretized variance-swap quadrature
/// `2/tau sum_j dk_j / k_j^2 Q(k_j)` on the expiry slice nearest
/// `target_tau`, with OTM puts rewritten as calls through the normalized
/// parity `put = call - (1 - e^m)`.
pub fn vix_weights(lattice: &OptionLattice, target_tau: f64) -> Result<(Vec<f64>, f64)> {
    let tol = 0.25 * target_tau;
    let (slice_idx, tau) = lattice
        .expiries()
        .iter()
        .enumerate()
        .map(|(i, &t)| (i, t))
        .min_by(|a, b| {
            (a.1 - target_tau)
                .abs()
                .partial_cmp(&(b.1 - target_tau).abs())
                .unwrap()
        })
        .expect("lattice has at least one expiry");
    if (tau - target_tau).abs() > tol {
        return Err(Error::NoExpiryNearTarget {
            target: target_tau,
            tol,
        });
    }
    let (start, end) = lattice.ranges()[slice_idx];
    let ks: Vec<f64> = lattice.nodes()[start..end]
        .iter()
        .map(|&(_, m)| m.exp())
        .collect();
    let nk = ks.len();
    let mut h = vec![0.0; lattice.len()];
    let mut offset = 0.0;
    for j in 0..nk {
        let dk = if nk == 1 {
            1.0
        } else if j == 0 {
            ks[1] - ks[0]
        } else if j == nk - 1 {
            ks[nk - 1] - ks[nk - 2]
        } else {
            0.5 * (ks[j + 1] - ks[j - 1])
        };
        let w = 2.0 / tau * dk / (ks[j] * ks[j]);
        h[start + j] = w;
        if ks[j] < 1.0 {
            // OTM side is the put: put = call - (1 - k)
            offset -= w * (1.0 - ks[j]);
        }
    }
    Ok((h, offset))
}
