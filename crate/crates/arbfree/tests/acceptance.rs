//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with the measured quantities.
//!
//! The expensive fixtures (generated dataset, decoded factors, trained
//! reference and ablation models) are built once and shared.

use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use arbfree::constrained_sde::{
    drift_correction_at, log_likelihood, shrink_decomposition, train, BoundaryOperatorParams,
    ConstrainedSdeModel, TrainConfig, TrainResult, TrainingData,
};
use arbfree::factor_decode::{decode, decorrelate_normalize, interior_transitions, mape};
use arbfree::lattice::OptionLattice;
use arbfree::linalg::{dot, lu_solve, norm2, Mat};
use arbfree::market_sim::{
    generate_dataset, psas, tamed_euler, wasserstein1, GeneratedData, HestonSlvParams,
};
use arbfree::neural_net::{batch_gradient, Activation, DriftDiffusionHead, Mlp};
use arbfree::pipeline::{decode_market, training_data, DecodeConfig, DecodedMarket};
use arbfree::polytope::Polytope;
use arbfree::secondary::{append_statistical, fit_ou, fit_polynomial, simulate_joint, OuParams, SecondaryFactorModel};
use arbfree::static_arbitrage::{build_constraints, to_factor_space, ConstraintSystem};
use arbfree::surface::{
    atm_implied_vol, bs_normalized_price, fit_smooth_field, implied_vol, z_vector, TerminalAugment,
};

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {n} ({name}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

struct Fixture {
    params: HestonSlvParams,
    lattice: OptionLattice,
    data: GeneratedData,
    cs: ConstraintSystem,
    decoded: DecodedMarket,
    tdata: TrainingData,
    reference: TrainResult,
    ablation: TrainResult,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn reference_train_config(operators_disabled: bool) -> TrainConfig {
    TrainConfig {
        epochs_xi: 400,
        epochs_s: 240,
        hidden_xi: vec![64, 64, 64],
        hidden_s: vec![64, 64, 64],
        sparsity: 0.5,
        operators_disabled,
        seed: 1234,
        ..Default::default()
    }
}

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let params = HestonSlvParams::default();
        let lattice = OptionLattice::default_fx();
        let data = generate_dataset(&params, &lattice, 20_260_810).expect("dataset");
        let cs = build_constraints(&lattice).expect("constraints");
        let decoded = decode_market(&data.series, &cs, &DecodeConfig::default()).expect("decode");
        let tdata = training_data(&data.series, &decoded);
        let reference = train(&tdata, &reference_train_config(false)).expect("reference model");
        let ablation = train(&tdata, &reference_train_config(true)).expect("ablation model");
        Fixture {
            params,
            lattice,
            data,
            cs,
            decoded,
            tdata,
            reference,
            ablation,
        }
    })
}

/// Sample points on facet `k` as random convex combinations of its
/// vertices.
fn facet_points(p: &Polytope, n_total: usize, rng: &mut ChaCha12Rng) -> Vec<(usize, Vec<f64>)> {
    let vs = p.enumerate_vertices().expect("vertices");
    let mut out = Vec::new();
    let per_facet = n_total / p.n_constraints() + 1;
    for k in 0..p.n_constraints() {
        let on_k = p.vertices_on_boundary(&vs, k);
        if on_k.is_empty() {
            continue;
        }
        for _ in 0..per_facet {
            let mut weights: Vec<f64> = (0..on_k.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            let mut y = vec![0.0; p.dim()];
            for (w, v) in weights.iter().zip(&on_k) {
                for (yi, vi) in y.iter_mut().zip(v.iter()) {
                    *yi += w * vi;
                }
            }
            out.push((k, y));
        }
    }
    out.truncate(n_total.max(out.len().min(n_total)));
    out
}

fn pentagon() -> Polytope {
    // irregular 2-D polytope with 5 non-orthogonal facets
    let dirs: [(f64, f64); 5] = [
        (1.0, 0.2),
        (0.1, 1.0),
        (-1.0, 0.3),
        (-0.2, -1.0),
        (0.8, -0.9),
    ];
    let rows: Vec<Vec<f64>> = dirs.iter().map(|&(a, b)| vec![a, b]).collect();
    let b: Vec<f64> = dirs
        .iter()
        .map(|&(a, bb)| -0.8 * (a * a + bb * bb).sqrt())
        .collect();
    Polytope::new(Mat::from_rows(&rows), b).unwrap()
}

fn random_box_cut(d: usize, seed: u64) -> Polytope {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut b = Vec::new();
    for j in 0..d {
        let mut r = vec![0.0; d];
        r[j] = 1.0;
        rows.push(r.clone());
        b.push(-2.0);
        let mut r2 = vec![0.0; d];
        r2[j] = -1.0;
        rows.push(r2);
        b.push(-2.0);
    }
    let n_cuts = 6 + (seed % 5) as usize;
    for _ in 0..n_cuts {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nrm = norm2(&v);
        if nrm < 1e-6 {
            continue;
        }
        for x in &mut v {
            *x /= nrm;
        }
        // keep a ball of random radius around a random interior point
        let center: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let radius = rng.gen_range(0.3..1.5);
        b.push(dot(&v, &center) - radius);
        rows.push(v);
    }
    Polytope::new(Mat::from_rows(&rows), b).unwrap()
}

// -- criterion 1 -----------------------------------------------------------

#[test]
fn criterion_01_boundary_operator_contract() {
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let polytopes = vec![
        pentagon(),
        random_box_cut(3, 42).eliminate_redundant().unwrap(),
    ];
    let mut checked = 0usize;
    let mut max_quad = 0.0f64;
    let mut min_inward = f64::INFINITY;
    for p in &polytopes {
        let d = p.dim();
        let params = BoundaryOperatorParams::for_polytope(p, 0.05, 1.0, 1.0, false).unwrap();
        let head = DriftDiffusionHead::new(d);
        let points = facet_points(p, 600, &mut rng);
        for net_idx in 0..20 {
            let net = Mlp::new(d, &[8, 8], head.output_len(), Activation::Tanh, net_idx);
            for (k, y) in &points {
                let out = net.forward(y).unwrap();
                let (mu_hat, sigma_hat) = head.split(&out).unwrap();
                let shrink = shrink_decomposition(p, &params, y).unwrap();
                let sigma = shrink.matrix().transpose().matmul(&sigma_hat);
                let v = p.normal(*k);
                // v' a v = |sigma' v|^2, evaluated in the factored form so
                // float noise does not swamp the exact zero
                let sv = sigma.tr_matvec(v);
                let quad = dot(&sv, &sv);
                max_quad = max_quad.max(quad.abs());
                let corr = drift_correction_at(p, &params, y).unwrap();
                let mu = corr.apply(p, &mu_hat);
                min_inward = min_inward.min(dot(v, &mu));
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = checked >= 2 * 1000 * 20 / 2
        && max_quad <= 1e-16
        && min_inward >= -1e-10
        && elapsed < 30.0;
    report(
        1,
        "boundary operator contract",
        pass,
        &format!(
            "{checked} facet probes, max v'av = {max_quad:.2e}, min v'mu = {min_inward:.2e}, {elapsed:.1} s"
        ),
    );
}

// -- criterion 2 -----------------------------------------------------------

#[test]
fn criterion_02_nonattainability_in_simulation() {
    let fx = fixture();
    let start = Instant::now();
    let polytope = &fx.tdata.polytope;
    let kept = interior_transitions(&fx.tdata.xi, polytope, 1e-12);
    let l0 = kept[0];
    let xi0 = fx.tdata.xi.row(l0).to_vec();
    let s0 = fx.tdata.s[l0];

    let mut constrained_violations = 0usize;
    let mut ablation_violations = 0usize;
    for seed in [11u64, 22, 33, 44, 55] {
        let sim = tamed_euler(&fx.reference.model, s0, &xi0, 10_000, seed).unwrap();
        for l in 0..sim.factors.nrows() {
            if polytope.min_distance(sim.factors.row(l)) < -1e-9 {
                constrained_violations += 1;
            }
        }
        let ab = tamed_euler(&fx.ablation.model, s0, &xi0, 10_000, seed).unwrap();
        ablation_violations += ab.diagnostics.violations;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = constrained_violations == 0 && ablation_violations > 0 && elapsed < 300.0;
    report(
        2,
        "nonattainability in simulation",
        pass,
        &format!(
            "constrained run: {constrained_violations}; ablation run on reference data: {ablation_violations}; {elapsed:.1} s"
        ),
    );
}

// -- criterion 3 -----------------------------------------------------------

#[test]
fn criterion_03_likelihood_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut count = 0usize;
    for d in 1..=3usize {
        let mut rows = Vec::new();
        let mut b = Vec::new();
        for j in 0..d {
            let mut r = vec![0.0; d];
            r[j] = 1.0;
            rows.push(r.clone());
            b.push(-10.0);
            let mut r2 = vec![0.0; d];
            r2[j] = -1.0;
            rows.push(r2);
            b.push(-10.0);
        }
        let p = Polytope::new(Mat::from_rows(&rows), b).unwrap();
        let params = BoundaryOperatorParams::for_polytope(&p, 0.5, 1.0, 1.0, false).unwrap();
        let head = DriftDiffusionHead::new(d);
        for trial in 0..34 {
            let net = Mlp::new(
                d + 1,
                &[6],
                head.output_len(),
                Activation::Tanh,
                trial + 100 * d as u64,
            );
            let model = ConstrainedSdeModel {
                xi_net: net,
                head,
                s_net: Mlp::new(d + 1, &[], 2, Activation::Relu, 0),
                polytope: p.clone(),
                operators: Some(params.clone()),
                baseline: None,
                basis: None,
                input_loc: vec![0.0; d + 1],
                input_scale: vec![1.0; d + 1],
                dt: 0.01,
                seed: 0,
            };
            let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-8.0..8.0)).collect();
            let y_next: Vec<f64> = y.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
            let path = Mat::from_rows(&[y.clone(), y_next.clone()]);
            let s_path = vec![1.0; 2];
            let shortcut = log_likelihood(&path, &s_path, &model).unwrap();

            let (mu, sigma) = model.coefficients(1.0, &y).unwrap();
            let a = sigma.matmul(&sigma.transpose());
            let u: Vec<f64> = y_next
                .iter()
                .zip(&y)
                .zip(&mu)
                .map(|((n, c), m)| n - c - m * model.dt)
                .collect();
            let a_inv_u = lu_solve(&a, &u).unwrap();
            let det = dense_det(&a);
            let dense = -0.5 * (det.ln() + dot(&u, &a_inv_u) / model.dt);
            let rel = (shortcut - dense).abs() / shortcut.abs().max(1e-12);
            worst = worst.max(rel);
            count += 1;
        }
    }
    report(
        3,
        "likelihood triangular shortcut vs dense oracle",
        count >= 100 && worst <= 1e-8,
        &format!("{count} states, worst relative gap {worst:.2e}"),
    );
}

fn dense_det(a: &Mat) -> f64 {
    match a.nrows() {
        1 => a[(0, 0)],
        2 => a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)],
        3 => {
            a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
                - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
                + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)])
        }
        _ => unreachable!(),
    }
}

// -- criterion 4 -----------------------------------------------------------

#[test]
fn criterion_04_gradient_check() {
    let mut worst = 0.0f64;
    for (ai, activation) in [Activation::Relu, Activation::Tanh, Activation::Softmax]
        .into_iter()
        .enumerate()
    {
        for seed in 0..4u64 {
            let net = Mlp::new(3, &[4], 2, activation, 1000 + 10 * ai as u64 + seed);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let inputs: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let targets: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let loss_of = |net: &Mlp| -> f64 {
                inputs
                    .iter()
                    .zip(&targets)
                    .map(|(x, t)| {
                        let o = net.forward(x).unwrap();
                        o.iter()
                            .zip(t)
                            .map(|(oi, ti)| (oi - ti) * (oi - ti))
                            .sum::<f64>()
                    })
                    .sum()
            };
            let (_, grads) = batch_gradient(&net, &inputs, |idx, out| {
                let t = &targets[idx];
                (
                    out.iter().zip(t).map(|(o, ti)| (o - ti) * (o - ti)).sum(),
                    out.iter().zip(t).map(|(o, ti)| 2.0 * (o - ti)).collect(),
                )
            })
            .unwrap();
            let h = 1e-6;
            for l in 0..net.weights().len() {
                for i in 0..net.weights()[l].nrows() {
                    for j in 0..net.weights()[l].ncols() {
                        let mut plus = net.clone();
                        plus_weight(&mut plus, l, i, j, h);
                        let mut minus = net.clone();
                        plus_weight(&mut minus, l, i, j, -h);
                        let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                        let an = grads.w[l][(i, j)];
                        let rel = (an - fd).abs() / fd.abs().max(1e-2);
                        worst = worst.max(rel);
                    }
                }
            }
        }
    }
    report(
        4,
        "backprop vs central finite differences",
        worst <= 1e-4,
        &format!("max relative error {worst:.2e} across all activations"),
    );
}

fn plus_weight(net: &mut Mlp, l: usize, i: usize, j: usize, h: f64) {
    net.weights_mut()[l][(i, j)] += h;
}

// -- criterion 5 -----------------------------------------------------------

#[test]
fn criterion_05_one_dimensional_recovery() {
    let start = Instant::now();
    let (kappa, theta, varsigma, dt) = (4.0f64, 0.5f64, 0.2f64, 1e-3f64);
    let steps = 10_000usize;
    let mut rng = ChaCha12Rng::seed_from_u64(505);
    let mut xi = Mat::zeros(steps + 1, 1);
    let mut y = theta;
    xi[(0, 0)] = y;
    for l in 1..=steps {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        y += kappa * (theta - y) * dt + varsigma * dt.sqrt() * z;
        y = y.clamp(0.02, 0.98);
        xi[(l, 0)] = y;
    }
    let polytope = Polytope::new(Mat::from_rows(&[vec![1.0], vec![-1.0]]), vec![0.0, -1.0]).unwrap();
    let tdata = TrainingData {
        xi: xi.clone(),
        s: vec![1.0; steps + 1],
        z: None,
        basis: None,
        polytope,
        dt,
    };
    let config = TrainConfig {
        epochs_xi: 350,
        epochs_s: 10,
        hidden_xi: vec![64, 64],
        hidden_s: vec![8],
        use_baseline: false,
        seed: 777,
        ..Default::default()
    };
    let result = train(&tdata, &config).unwrap();
    // data-dense evaluation region: central 90% of the observed states
    let mut values: Vec<f64> = (0..=steps).map(|l| xi[(l, 0)]).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = values[(values.len() as f64 * 0.05) as usize];
    let hi = values[(values.len() as f64 * 0.95) as usize];
    let grid: Vec<f64> = (0..101).map(|i| lo + (hi - lo) * i as f64 / 100.0).collect();
    let mut vol_err = 0.0;
    let mut drifts = Vec::with_capacity(grid.len());
    for &g in &grid {
        let (mu, sigma) = result.model.coefficients(1.0, &[g]).unwrap();
        vol_err += (sigma[(0, 0)].abs() - varsigma).abs() / varsigma;
        drifts.push(mu[0]);
    }
    let vol_mape = vol_err / grid.len() as f64;
    // zero crossing of the learned drift
    let mut crossing = None;
    for i in 0..grid.len() - 1 {
        if drifts[i] > 0.0 && drifts[i + 1] <= 0.0 {
            let t = drifts[i] / (drifts[i] - drifts[i + 1]);
            crossing = Some(grid[i] + t * (grid[i + 1] - grid[i]));
            break;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let crossing_err = crossing.map(|c| (c - theta).abs() / theta);
    let pass = vol_mape <= 0.20
        && crossing_err.map_or(false, |e| e <= 0.15)
        && elapsed < 600.0;
    report(
        5,
        "1-D synthetic recovery",
        pass,
        &format!(
            "diffusion MAPE {:.1}%, drift zero-crossing at {:?} (true {theta}), {elapsed:.0} s",
            100.0 * vol_mape,
            crossing
        ),
    );
}

// -- criterion 6 -----------------------------------------------------------

#[test]
fn criterion_06_factor_decoding_metrics() {
    let fx = fixture();
    let mape_ref = fx.decoded.mape;
    let psas_static = fx.decoded.psas;

    // replace the static-arbitrage factor with a statistical one
    let search = DecodeConfig::default().search;
    let (alt_series, alt_basis) = decode(
        &fx.data.series.c,
        &fx.decoded.z,
        1,
        1,
        0,
        &fx.cs,
        None,
        &search,
    )
    .unwrap();
    let (alt_xi, alt_basis) = decorrelate_normalize(&alt_series.xi, &alt_basis, 10.0).unwrap();
    let alt_poly = to_factor_space(&fx.cs, &alt_basis.g0, &alt_basis.g)
        .unwrap()
        .eliminate_redundant()
        .unwrap();
    let psas_statistical = psas(&alt_xi, &alt_poly).unwrap();

    // appended factors never increase MAPE
    let mut mapes = vec![mape_ref];
    let mut cur = (fx.decoded.series.clone(), fx.decoded.basis.clone());
    for _ in 0..3 {
        cur = append_statistical(&fx.data.series.c, &cur.0, &cur.1, 1).unwrap();
        mapes.push(mape(&fx.data.series.c, &cur.1, &cur.0.xi).unwrap());
    }
    let non_increasing = mapes.windows(2).all(|w| w[1] <= w[0] + 1e-12);

    let pass = mape_ref <= 0.10 && psas_static < psas_statistical && non_increasing;
    report(
        6,
        "factor decoding on regenerated data",
        pass,
        &format!(
            "MAPE {:.2}% (<= 10%), PSAS static {:.2}% < statistical {:.2}%, MAPE path {:?}",
            100.0 * mape_ref,
            100.0 * psas_static,
            100.0 * psas_statistical,
            mapes.iter().map(|m| (m * 1e4).round() / 1e2).collect::<Vec<_>>()
        ),
    );
}

// -- criterion 7 -----------------------------------------------------------

#[test]
fn criterion_07_spot_volatility_estimate() {
    let fx = fixture();
    let truth = fx.data.true_spot_vol(&fx.params);
    let kept = interior_transitions(&fx.tdata.xi, &fx.tdata.polytope, 1e-12);
    let mut err = 0.0;
    for &l in &kept {
        let (_, sigma_s) = fx
            .reference
            .model
            .s_coefficients(fx.tdata.s[l], fx.tdata.xi.row(l))
            .unwrap();
        err += (sigma_s - truth[l]).abs() / truth[l];
    }
    let vol_mape = err / kept.len() as f64;
    report(
        7,
        "in-sample spot volatility",
        vol_mape <= 0.15,
        &format!("MAPE {:.2}% over {} samples", 100.0 * vol_mape, kept.len()),
    );
}

// -- criterion 8 -----------------------------------------------------------

#[test]
fn criterion_08_z_operator_on_black_scholes() {
    let lattice = OptionLattice::default_fx();
    let mut worst = 0.0f64;
    for vol in [0.092, 0.2] {
        let values: Vec<f64> = lattice
            .nodes()
            .iter()
            .map(|&(t, m)| bs_normalized_price(t, m, vol))
            .collect();
        let field = fit_smooth_field(&lattice, &values, TerminalAugment::Payoff).unwrap();
        let z = z_vector(&field, &lattice, vol);
        worst = worst.max(z.iter().fold(0.0f64, |a, &b| a.max(b.abs())));
    }
    report(
        8,
        "z-operator on the Black-Scholes surface",
        worst <= 5e-3,
        &format!("max |z_j| = {worst:.2e}"),
    );
}

// -- criterion 9 -----------------------------------------------------------

#[test]
fn criterion_09_redundancy_elimination() {
    let mut checked = 0usize;
    let mut vertex_mismatches = 0usize;
    for inst in 0..50u64 {
        let d = 2 + (inst % 2) as usize;
        let p = random_box_cut(d, 1000 + inst);
        let reduced = p.eliminate_redundant().unwrap();
        let va = p.enumerate_vertices().unwrap().vertices;
        let vb = reduced.enumerate_vertices().unwrap().vertices;
        if !vertex_sets_equal(&va, &vb, 1e-7) {
            vertex_mismatches += 1;
        }
        checked += 1;
    }
    let fx = fixture();
    let reduced_count = fx.decoded.reduced.n_constraints();
    let pass = checked == 50 && vertex_mismatches == 0 && reduced_count < 10;
    report(
        9,
        "redundancy elimination",
        pass,
        &format!(
            "50 random instances, {vertex_mismatches} vertex-set mismatches; factor polytope reduced to {reduced_count} constraints (from {})",
            fx.decoded.polytope.n_constraints()
        ),
    );
}

fn vertex_sets_equal(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().all(|x| {
        b.iter()
            .any(|y| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= tol))
    })
}

// -- criterion 10 ----------------------------------------------------------

#[test]
fn criterion_10_implied_vol_round_trip() {
    let mut worst = 0.0f64;
    for i in 0..10 {
        let tau = 1.0 / 12.0 + (2.0 - 1.0 / 12.0) * i as f64 / 9.0;
        for j in 0..10 {
            let m = -0.1 + 0.2 * j as f64 / 9.0;
            for k in 0..10 {
                let vol = 0.1 + 0.7 * k as f64 / 9.0;
                let price = bs_normalized_price(tau, m, vol);
                let back = implied_vol(price, tau, m).unwrap();
                worst = worst.max((back - vol).abs());
            }
        }
    }
    // ATM closed form agreement
    let mut worst_atm = 0.0f64;
    for k in 0..10 {
        let vol = 0.1 + 0.7 * k as f64 / 9.0;
        let price = bs_normalized_price(0.5, 0.0, vol);
        let closed = atm_implied_vol(price, 0.5);
        let solved = implied_vol(price, 0.5, 0.0).unwrap();
        worst_atm = worst_atm.max((closed - solved).abs().max((closed - vol).abs()));
    }
    report(
        10,
        "implied-vol round trip",
        worst <= 1e-8 && worst_atm <= 1e-9,
        &format!("max |vol gap| = {worst:.2e} on the grid, ATM closed form gap {worst_atm:.2e}"),
    );
}

// -- criterion 11 ----------------------------------------------------------

#[test]
fn criterion_11_wasserstein_sweep() {
    let fx = fixture();
    // truncated panel keeps the sweep affordable
    let rows = 601.min(fx.tdata.xi.nrows());
    let mut xi = Mat::zeros(rows, fx.tdata.xi.ncols());
    for l in 0..rows {
        xi.set_row(l, fx.tdata.xi.row(l));
    }
    let tdata = TrainingData {
        xi,
        s: fx.tdata.s[..rows].to_vec(),
        z: fx.tdata.z.as_ref().map(|z| {
            let mut m = Mat::zeros(rows, z.ncols());
            for l in 0..rows {
                m.set_row(l, z.row(l));
            }
            m
        }),
        basis: fx.tdata.basis.clone(),
        polytope: fx.tdata.polytope.clone(),
        dt: fx.tdata.dt,
    };
    let variants: Vec<(&str, Vec<usize>, f64, Activation)> = vec![
        ("benchmark", vec![256, 256, 256], 0.5, Activation::Relu),
        ("depth_2", vec![256, 256], 0.5, Activation::Relu),
        ("depth_5", vec![256; 5], 0.5, Activation::Relu),
        ("width_64", vec![64, 64, 64], 0.5, Activation::Relu),
        ("width_512", vec![512, 512, 512], 0.5, Activation::Relu),
        ("sparsity_0", vec![256, 256, 256], 0.0, Activation::Relu),
        ("sparsity_0.9", vec![256, 256, 256], 0.9, Activation::Relu),
        ("tanh", vec![256, 256, 256], 0.5, Activation::Tanh),
        ("softmax", vec![256, 256, 256], 0.5, Activation::Softmax),
    ];
    let kept = interior_transitions(&tdata.xi, &tdata.polytope, 1e-12);
    let l0 = kept[0];
    let xi0 = tdata.xi.row(l0).to_vec();
    let s0 = tdata.s[l0];
    let input_logret: Vec<f64> = (0..rows - 1)
        .map(|l| (tdata.s[l + 1] / tdata.s[l]).ln())
        .collect();
    let input_xi1: Vec<f64> = (0..rows).map(|l| tdata.xi[(l, 0)]).collect();
    let input_xi2: Vec<f64> = (0..rows).map(|l| tdata.xi[(l, 1)]).collect();

    use rayon::prelude::*;
    let results: Vec<(String, Option<[f64; 3]>)> = variants
        .par_iter()
        .map(|(name, hidden, sparsity, activation)| {
            let config = TrainConfig {
                epochs_xi: 60,
                epochs_s: 40,
                hidden_xi: hidden.clone(),
                hidden_s: vec![64, 64, 64],
                sparsity: *sparsity,
                activation: *activation,
                seed: 9000 + name.len() as u64,
                ..Default::default()
            };
            let triple = train(&tdata, &config).ok().and_then(|r| {
                let sim = tamed_euler(&r.model, s0, &xi0, 5000, 2024).ok()?;
                let sim_logret: Vec<f64> = (0..sim.spot.len() - 1)
                    .map(|l| (sim.spot[l + 1] / sim.spot[l]).ln())
                    .collect();
                let w_s = wasserstein1(&sim_logret, &input_logret).ok()?;
                let w_1 = wasserstein1(&sim.factors.col(0), &input_xi1).ok()?;
                let w_2 = wasserstein1(&sim.factors.col(1), &input_xi2).ok()?;
                Some([w_s, w_1, w_2])
            });
            (name.to_string(), triple)
        })
        .collect();

    for (name, triple) in &results {
        match triple {
            Some(t) => println!(
                "  sweep {name}: W1(logret S) = {:.3e}, W1(xi1) = {:.3e}, W1(xi2) = {:.3e}",
                t[0], t[1], t[2]
            ),
            None => println!("  sweep {name}: failed"),
        }
    }
    let bench = results
        .iter()
        .find(|(n, _)| n == "benchmark")
        .and_then(|(_, t)| *t);
    let finite = bench.map_or(false, |t| t.iter().all(|x| x.is_finite()));
    // soft comparisons, logged but not gating
    if let Some(b) = bench {
        for coord in 0..3 {
            let best = results
                .iter()
                .filter_map(|(_, t)| t.map(|x| x[coord]))
                .fold(f64::INFINITY, f64::min);
            let ok = b[coord] <= 3.0 * best;
            println!(
                "  soft check: benchmark within 3x best on coordinate {coord}: {}",
                if ok { "yes" } else { "no" }
            );
        }
        if let Some((_, Some(d2))) = results.iter().find(|(n, _)| n == "depth_2") {
            let worse = (0..3).filter(|&c| d2[c] > b[c]).count();
            println!(
                "  soft check: depth-2 worse than benchmark on {worse}/3 coordinates"
            );
        }
    }
    report(
        11,
        "Wasserstein sweep (soft)",
        finite,
        &format!("benchmark W1 triple {bench:?} finite; variant comparisons logged above"),
    );
}

// -- criterion 12 ----------------------------------------------------------

#[test]
fn criterion_12_secondary_factor_pipeline() {
    let fx = fixture();
    let (series13, basis13) =
        append_statistical(&fx.data.series.c, &fx.decoded.series, &fx.decoded.basis, 11).unwrap();
    let full = to_factor_space(&fx.cs, &basis13.g0, &basis13.g).unwrap();

    // fit cubic links and OU residuals for the 11 secondary columns
    let rows = series13.xi.nrows();
    let mut primary = Mat::zeros(rows, 2);
    for l in 0..rows {
        primary[(l, 0)] = series13.xi[(l, 0)];
        primary[(l, 1)] = series13.xi[(l, 1)];
    }
    let dt = fx.tdata.dt;
    let mut models = Vec::new();
    for i in 0..11 {
        let col = series13.xi.col(2 + i);
        let (link, residuals) = fit_polynomial(&col, &primary, 3).unwrap();
        let ou = fit_ou(&residuals, dt).unwrap_or(OuParams {
            kappa: 1.0 / dt,
            theta: 0.0,
            varsigma: 0.0,
        });
        models.push(SecondaryFactorModel { link, ou });
    }

    let kept = interior_transitions(&fx.tdata.xi, &fx.tdata.polytope, 1e-12);
    let l0 = kept[0];
    let xi0 = fx.tdata.xi.row(l0).to_vec();
    let sim = simulate_joint(
        &fx.reference.model,
        &models,
        &full,
        fx.tdata.s[l0],
        &xi0,
        10_000,
        31,
    )
    .unwrap();

    let post_psas = psas(&sim.joint, &full).unwrap();

    // repair shifts the secondary marginals by at most 10% of their IQR
    let mut worst_shift = 0.0f64;
    for i in 0..11 {
        let raw = sim.secondary_raw.col(i);
        let repaired = sim.joint.col(2 + i);
        let w1 = wasserstein1(&raw, &repaired).unwrap();
        let mut sorted = raw.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let iqr = sorted[(sorted.len() * 3) / 4] - sorted[sorted.len() / 4];
        if iqr > 0.0 {
            worst_shift = worst_shift.max(w1 / iqr);
        } else if w1 > 0.0 {
            worst_shift = f64::INFINITY;
        }
    }
    let pass = post_psas == 0.0 && worst_shift <= 0.10;
    report(
        12,
        "secondary factor pipeline",
        pass,
        &format!(
            "post-repair PSAS {:.2}%, worst marginal W1 shift {:.1}% of IQR ({} repaired steps)",
            100.0 * post_psas,
            100.0 * worst_shift,
            sim.repaired_steps
        ),
    );
}
