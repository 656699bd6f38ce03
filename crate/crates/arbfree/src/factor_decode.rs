//! Factor decoding: projects the normalized price panel onto a small affine
//! basis chosen to align with the drift-restriction operator data, maximize
//! statistical accuracy, and minimize static-arbitrage violations; plus
//! decorrelation/normalization of the factor data and the MAPE/PDA metrics.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot, fix_sign, norm2, sym_eigen, Mat};
use crate::polytope::Polytope;
use crate::static_arbitrage::ConstraintSystem;

/// Provenance of a decoded factor column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorTag {
    DynamicArb,
    Statistical,
    StaticArb,
    Secondary,
}

/// Affine price codebook: `c ~ G0 + G^T xi`, with decorrelation rotation `H`
/// and normalization scales `Lambda` accumulated by
/// [`decorrelate_normalize`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriceBasis {
    pub g0: Vec<f64>,
    /// d x N basis rows.
    pub g: Mat,
    /// Accumulated factor rotation (identity until decorrelation).
    pub h: Mat,
    /// Per-factor normalization scales (ones until normalization).
    pub lambda: Vec<f64>,
    pub tags: Vec<FactorTag>,
}

/// Decoded factor paths, one row per observation time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FactorSeries {
    pub xi: Mat,
    pub tags: Vec<FactorTag>,
}

impl PriceBasis {
    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn n_prices(&self) -> usize {
        self.g0.len()
    }

    /// Reconstructed prices `1 (x) G0 + Xi G`.
    pub fn reconstruct(&self, xi: &Mat) -> Mat {
        let mut out = xi.matmul(&self.g);
        for i in 0..out.nrows() {
            let row = out.row_mut(i);
            for (r, g0) in row.iter_mut().zip(&self.g0) {
                *r += g0;
            }
        }
        out
    }

    /// Reconstruct a single price vector from one factor state.
    pub fn reconstruct_one(&self, xi: &[f64]) -> Vec<f64> {
        let mut out = self.g.tr_matvec(xi);
        for (o, g0) in out.iter_mut().zip(&self.g0) {
            *o += g0;
        }
        out
    }
}

/// Principal components of a data matrix.
pub struct Pca {
    /// `n x N` component rows (unit norm, deterministic sign).
    pub components: Mat,
    /// Projections of the centered data onto the components.
    pub scores: Mat,
}

/// Top-`n` principal components of `m` (columns centered before the SVD).
/// The sign of each component is fixed so its largest-magnitude entry is
/// positive.
pub fn pca(m: &Mat, n: usize) -> Result<Pca> {
    let mut centered = m.clone();
    centered.center_columns();
    let dec = linalg::svd(&centered);
    let rank = dec
        .s
        .iter()
        .filter(|&&s| s > dec.s[0].max(1e-300) * 1e-12)
        .count();
    if n > rank {
        return Err(Error::RankDeficient { requested: n, rank });
    }
    let mut components = Mat::zeros(n, m.ncols());
    for k in 0..n {
        let mut col = dec.v.col(k);
        fix_sign(&mut col);
        components.set_row(k, &col);
    }
    let scores = centered.matmul(&components.transpose());
    Ok(Pca { components, scores })
}

/// Configuration for the static-arbitrage factor search.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SearchConfig {
    pub n_starts: usize,
    pub nm_polish: usize,
    pub nm_iters: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            n_starts: 512,
            nm_polish: 6,
            nm_iters: 120,
            seed: 0,
        }
    }
}

/// Decode a `d = d_da + d_st + d_sa` factor representation from the price
/// panel `c` and operator data `z`.
///
/// Order of construction: dynamic-arbitrage components (principal components
/// of `z`), statistical components (principal components of the running
/// residual), then static-arbitrage components by minimizing the count of
/// arbitrageable reconstructed samples over the unit sphere in the residual
/// eigenbasis. The final basis is Gram-Schmidt re-orthonormalized with the
/// factor data adjusted so reconstructed prices are unchanged.
#[allow(clippy::too_many_arguments)]
pub fn decode(
    c: &Mat,
    z: &Mat,
    d_da: usize,
    d_st: usize,
    d_sa: usize,
    cs: &ConstraintSystem,
    lambda_pen: Option<f64>,
    search: &SearchConfig,
) -> Result<(FactorSeries, PriceBasis)> {
    let n = c.ncols();
    let rows = c.nrows();
    let d = d_da + d_st + d_sa;
    if d == 0 || d > n {
        return Err(Error::PreconditionViolated(format!(
            "factor count {d} must be in 1..=N ({n})"
        )));
    }
    if d_da > 0 && (z.nrows() != rows || z.ncols() != n) {
        return Err(Error::PreconditionViolated(
            "z panel shape must match the price panel".into(),
        ));
    }

    let g0 = c.column_means();
    let mut r0 = c.clone();
    for i in 0..rows {
        let row = r0.row_mut(i);
        for (v, g) in row.iter_mut().zip(&g0) {
            *v -= g;
        }
    }

    let mut g_rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut xi_cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut tags: Vec<FactorTag> = Vec::with_capacity(d);

    if d_da > 0 {
        let z_pca = pca(z, d_da)?;
        for k in 0..d_da {
            let comp = z_pca.components.row(k).to_vec();
            let scores: Vec<f64> = (0..rows).map(|l| dot(r0.row(l), &comp)).collect();
            g_rows.push(comp);
            xi_cols.push(scores);
            tags.push(FactorTag::DynamicArb);
        }
    }

    let residual = |g_rows: &[Vec<f64>], xi_cols: &[Vec<f64>]| -> Mat {
        let mut r = r0.clone();
        for (g, xi) in g_rows.iter().zip(xi_cols) {
            for l in 0..rows {
                let coef = xi[l];
                let row = r.row_mut(l);
                for (v, gj) in row.iter_mut().zip(g) {
                    *v -= coef * gj;
                }
            }
        }
        r
    };

    if d_st > 0 {
        let r = residual(&g_rows, &xi_cols);
        let r_pca = pca(&r, d_st)?;
        for k in 0..d_st {
            let comp = r_pca.components.row(k).to_vec();
            let scores: Vec<f64> = (0..rows).map(|l| dot(r.row(l), &comp)).collect();
            g_rows.push(comp);
            xi_cols.push(scores);
            tags.push(FactorTag::Statistical);
        }
    }

    for _ in 0..d_sa {
        let r = residual(&g_rows, &xi_cols);
        let sigma = r.transpose().matmul(&r);
        let (_evals, evecs) = sym_eigen(&sigma);
        let mut q = Mat::zeros(n, d);
        for k in 0..d {
            for i in 0..n {
                q[(i, k)] = evecs[(i, k)];
            }
        }
        let r_fro = r.frobenius_norm();
        let bound = 1.0f64.min(1.0 / r_fro.max(1e-300));
        let lambda = match lambda_pen {
            Some(l) => {
                if l >= bound || l <= 0.0 {
                    return Err(Error::PreconditionViolated(format!(
                        "penalty weight {l} outside (0, min(1, 1/|R|)) = (0, {bound})"
                    )));
                }
                l
            }
            None => 0.5 * bound,
        };
        // prior reconstruction including G0 and all factors built so far
        let mut prior = Mat::zeros(rows, n);
        for l in 0..rows {
            let row = prior.row_mut(l);
            row.copy_from_slice(&g0);
        }
        for (g, xi) in g_rows.iter().zip(&xi_cols) {
            for l in 0..rows {
                let coef = xi[l];
                let row = prior.row_mut(l);
                for (v, gj) in row.iter_mut().zip(g) {
                    *v += coef * gj;
                }
            }
        }
        let w_star = static_factor_search(&r, &q, cs, &prior, lambda, search);
        let q_vec = q.matvec(&w_star);
        let scores: Vec<f64> = (0..rows).map(|l| dot(r.row(l), &q_vec)).collect();
        g_rows.push(q_vec);
        xi_cols.push(scores);
        tags.push(FactorTag::StaticArb);
    }

    // Gram-Schmidt re-orthonormalization preserving reconstructed prices.
    let g_raw = Mat::from_rows(&g_rows);
    let mut xi_raw = Mat::zeros(rows, d);
    for (k, col) in xi_cols.iter().enumerate() {
        for l in 0..rows {
            xi_raw[(l, k)] = col[l];
        }
    }
    let mut g_ortho_rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    for k in 0..d {
        let mut v = g_raw.row(k).to_vec();
        for q in &g_ortho_rows {
            let coef = dot(q, &v);
            linalg::axpy(-coef, q, &mut v);
        }
        let nrm = norm2(&v);
        if nrm < 1e-8 {
            return Err(Error::PreconditionViolated(format!(
                "decoded basis is rank deficient at factor {k}"
            )));
        }
        for x in &mut v {
            *x /= nrm;
        }
        g_ortho_rows.push(v);
    }
    let g = Mat::from_rows(&g_ortho_rows);
    // Xi' = (Xi_raw G_raw) G'^T keeps Xi' G' identical to the raw product.
    let recon = xi_raw.matmul(&g_raw);
    let xi = recon.matmul(&g.transpose());

    let basis = PriceBasis {
        g0,
        g,
        h: Mat::identity(d),
        lambda: vec![1.0; d],
        tags: tags.clone(),
    };
    Ok((FactorSeries { xi, tags }, basis))
}

/// Minimize the count of statically arbitrageable reconstructed samples
/// (with a rank-one reconstruction-error tiebreaker) over unit vectors in
/// the span of the top residual-covariance eigenvectors.
///
/// Seeded multi-start random sampling on the sphere followed by Nelder-Mead
/// polish in spherical coordinates; heuristic, always returns the best
/// candidate found.
pub fn static_factor_search(
    r_i: &Mat,
    q_i: &Mat,
    cs: &ConstraintSystem,
    prior: &Mat,
    lambda_pen: f64,
    cfg: &SearchConfig,
) -> Vec<f64> {
    let d = q_i.ncols();
    let rows = r_i.nrows();
    let rq = r_i.matmul(q_i); // (L+1) x d
    let aq = cs.a.matmul(q_i); // R x d
    let a_prior_t = cs.a.matmul(&prior.transpose()); // R x (L+1)
    let fro2 = {
        let f = r_i.frobenius_norm();
        f * f
    };

    let objective = |w: &[f64]| -> f64 {
        let s: Vec<f64> = (0..rows).map(|l| dot(rq.row(l), w)).collect();
        let aqw: Vec<f64> = (0..aq.nrows()).map(|r| dot(aq.row(r), w)).collect();
        let mut feasible = 0usize;
        for l in 0..rows {
            let sl = s[l];
            let mut ok = true;
            for r in 0..aq.nrows() {
                if a_prior_t[(r, l)] + sl * aqw[r] < cs.b_hat[r] {
                    ok = false;
                    break;
                }
            }
            if ok {
                feasible += 1;
            }
        }
        let s2: f64 = s.iter().map(|x| x * x).sum();
        let penalty = lambda_pen * (fro2 - s2).max(0.0).sqrt();
        -(feasible as f64) + penalty
    };

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut best: Vec<(f64, Vec<f64>)> = Vec::new();
    let consider = |w: Vec<f64>, val: f64, best: &mut Vec<(f64, Vec<f64>)>| {
        best.push((val, w));
        best.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        best.truncate(cfg.nm_polish.max(1));
    };
    if d == 1 {
        for w in [vec![1.0], vec![-1.0]] {
            let val = objective(&w);
            consider(w, val, &mut best);
        }
    } else {
        for _ in 0..cfg.n_starts.max(2) {
            let mut w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nrm = norm2(&w);
            if nrm < 1e-12 {
                continue;
            }
            for x in &mut w {
                *x /= nrm;
            }
            let val = objective(&w);
            consider(w, val, &mut best);
        }
        // Nelder-Mead polish in spherical coordinates
        let starts = best.clone();
        for (_, w0) in starts {
            let theta0 = to_angles(&w0);
            let f = |theta: &[f64]| objective(&from_angles(theta));
            let (theta, val) = nelder_mead(f, &theta0, 0.15, cfg.nm_iters);
            consider(from_angles(&theta), val, &mut best);
        }
    }
    let (best_val, w) = best.into_iter().next().expect("at least one candidate");
    log::debug!("static factor search: objective {best_val}");
    w
}

/// Spherical coordinates for a unit vector (d-1 angles).
fn to_angles(w: &[f64]) -> Vec<f64> {
    let d = w.len();
    let mut theta = Vec::with_capacity(d - 1);
    let mut tail: f64 = w.iter().map(|x| x * x).sum();
    for k in 0..d - 1 {
        tail = (tail - w[k] * w[k]).max(0.0);
        let t = tail.sqrt();
        theta.push(t.atan2(w[k]));
    }
    // keep the sign of the last coordinate in the final angle
    if w[d - 1] < 0.0 {
        let last = theta.len() - 1;
        theta[last] = -theta[last];
    }
    theta
}

fn from_angles(theta: &[f64]) -> Vec<f64> {
    let d = theta.len() + 1;
    let mut w = vec![0.0; d];
    let mut sin_prod = 1.0;
    for k in 0..d - 1 {
        w[k] = sin_prod * theta[k].cos();
        sin_prod *= theta[k].sin();
    }
    w[d - 1] = sin_prod;
    w
}

/// Standard Nelder-Mead simplex minimization.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n + 1);
    simplex.push((f(x0), x0.to_vec()));
    for k in 0..n {
        let mut x = x0.to_vec();
        x[k] += step;
        simplex.push((f(&x), x));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(_, x)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&worst.1)
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let fr = f(&reflect);
        if fr < simplex[0].0 {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&worst.1)
                .map(|(c, w)| c + gamma * (c - w))
                .collect();
            let fe = f(&expand);
            simplex[n] = if fe < fr { (fe, expand) } else { (fr, reflect) };
        } else if fr < simplex[n - 1].0 {
            simplex[n] = (fr, reflect);
        } else {
            let contract: Vec<f64> = centroid
                .iter()
                .zip(&worst.1)
                .map(|(c, w)| c + rho * (w - c))
                .collect();
            let fc = f(&contract);
            if fc < worst.0 {
                simplex[n] = (fc, contract);
            } else {
                let best = simplex[0].1.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best
                        .iter()
                        .zip(&entry.1)
                        .map(|(b, x)| b + sigma * (x - b))
                        .collect();
                    *entry = (f(&x), x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let (val, x) = simplex.swap_remove(0);
    (x, val)
}

/// Decorrelate the factor data by rotating onto the eigenvectors of
/// `Xi^T Xi`, then rescale each column so its min-max range is `1/lambda0`.
/// The basis is adjusted so reconstructed prices are unchanged.
pub fn decorrelate_normalize(
    xi: &Mat,
    basis: &PriceBasis,
    lambda0: f64,
) -> Result<(Mat, PriceBasis)> {
    assert!(lambda0 > 0.0, "lambda0 must be positive");
    let d = basis.dim();
    let gram = xi.transpose().matmul(xi);
    let (_vals, h) = sym_eigen(&gram);
    let xi1 = xi.matmul(&h);
    let mut lambda = Vec::with_capacity(d);
    for j in 0..d {
        let col = xi1.col(j);
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        if range <= 1e-14 {
            return Err(Error::DegenerateColumn { col: j });
        }
        lambda.push(lambda0 * range);
    }
    let mut xi2 = xi1.clone();
    for l in 0..xi2.nrows() {
        let row = xi2.row_mut(l);
        for (v, lam) in row.iter_mut().zip(&lambda) {
            *v /= lam;
        }
    }
    // G2 = Lambda H^T G
    let mut ht_g = h.transpose().matmul(&basis.g);
    for k in 0..d {
        let lam = lambda[k];
        for j in 0..ht_g.ncols() {
            ht_g[(k, j)] *= lam;
        }
    }
    let out = PriceBasis {
        g0: basis.g0.clone(),
        g: ht_g,
        h: basis.h.matmul(&h),
        lambda,
        tags: basis.tags.clone(),
    };
    Ok((xi2, out))
}

/// Mean absolute percentage reconstruction error over all samples and nodes.
pub fn mape(c: &Mat, basis: &PriceBasis, xi: &Mat) -> Result<f64> {
    let recon = basis.reconstruct(xi);
    let mut total = 0.0;
    for l in 0..c.nrows() {
        for j in 0..c.ncols() {
            let price = c[(l, j)];
            if price <= 0.0 {
                return Err(Error::ZeroPrice { row: l, col: j });
            }
            total += (price - recon[(l, j)]).abs() / price;
        }
    }
    Ok(total / (c.nrows() * c.ncols()) as f64)
}

/// Proportion of the centered operator data's variance unexplained by the
/// (scale-normalized) basis: `1 - |Z~ G^T Lambda^{-1}|_F^2 / |Z~|_F^2`.
pub fn pda(z: &Mat, basis: &PriceBasis) -> Result<f64> {
    let mut zc = z.clone();
    zc.center_columns();
    let total = {
        let f = zc.frobenius_norm();
        f * f
    };
    if total <= 1e-300 {
        return Err(Error::ZeroVariance);
    }
    let proj = zc.matmul(&basis.g.transpose());
    let mut explained = 0.0;
    for l in 0..proj.nrows() {
        for k in 0..proj.ncols() {
            let v = proj[(l, k)] / basis.lambda[k];
            explained += v * v;
        }
    }
    Ok(1.0 - explained / total)
}

/// Indices `l` such that the transition `(l -> l+1)` touches only strictly
/// interior factor states. A state on or outside the boundary removes both
/// transitions adjacent to it.
pub fn interior_transitions(xi: &Mat, polytope: &Polytope, margin: f64) -> Vec<usize> {
    let good: Vec<bool> = (0..xi.nrows())
        .map(|l| polytope.min_distance(xi.row(l)) > margin)
        .collect();
    (0..xi.nrows().saturating_sub(1))
        .filter(|&l| good[l] && good[l + 1])
        .collect()
}
