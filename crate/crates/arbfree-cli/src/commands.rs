//! The nine pipeline commands. Each one reads its upstream artifacts from
//! the working directory, writes its outputs atomically, and drops a
//! `resolved-config.json` snapshot alongside.

use std::path::Path;

use rayon::prelude::*;

use arbfree::constrained_sde::{
    train, ConstrainedSdeModel, EpochLoss, TrainConfig, TrainingData,
};
use arbfree::factor_decode::{interior_transitions, FactorSeries, PriceBasis};
use arbfree::lattice::{fmt_f64, OptionLattice};
use arbfree::linalg::{dot, Mat};
use arbfree::market_sim::{
    fit_vix_regression, generate_dataset, iv_paths, psas, tamed_euler, vix_direct, vix_regression,
    wasserstein1,
};
use arbfree::pipeline::decode_market;
use arbfree::polytope::Polytope;
use arbfree::secondary::{
    append_statistical, fit_ou, fit_polynomial, simulate_joint, OuParams, SecondaryFactorModel,
};
use arbfree::static_arbitrage::{build_constraints, to_factor_space};
use arbfree::surface::{vix_weights, SurfaceSeries};

use crate::config::PipelineConfig;
use crate::io::{mat_csv, panel_csv, parse_mat_csv, read_json, read_text, write_atomic, write_json};
use crate::CliError;

pub const SURFACES: &str = "surfaces.csv";
pub const SPOT: &str = "spot.csv";
pub const LATTICE: &str = "lattice.csv";
pub const FACTORS: &str = "factors.csv";
pub const BASIS: &str = "basis.json";
pub const Z_PANEL: &str = "z.csv";
pub const MODEL: &str = "model.json";
pub const LOSS_HISTORY: &str = "loss_history.csv";
pub const METRICS: &str = "metrics.json";
pub const SWEEP_REPORT: &str = "sweep_report.csv";

fn resolved_config(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    write_json(&out.join("resolved-config.json"), cfg)
}

fn load_lattice(cfg: &PipelineConfig, out: &Path) -> Result<OptionLattice, CliError> {
    if out.join(LATTICE).exists() {
        return Ok(OptionLattice::from_csv(&read_text(&out.join(LATTICE))?)?);
    }
    match &cfg.lattice_path {
        Some(path) => Ok(OptionLattice::from_csv(&read_text(Path::new(path))?)?),
        None => Ok(OptionLattice::default_fx()),
    }
}

fn load_series(cfg: &PipelineConfig, out: &Path) -> Result<SurfaceSeries, CliError> {
    let text = read_text(&out.join(SURFACES))?;
    Ok(SurfaceSeries::from_csv(
        &text,
        cfg.generator.dt,
        cfg.generator.rate,
        cfg.generator.dividend,
    )?)
}

fn load_factors(out: &Path) -> Result<(Vec<f64>, Mat), CliError> {
    parse_mat_csv(&read_text(&out.join(FACTORS))?)
}

fn load_basis(out: &Path) -> Result<PriceBasis, CliError> {
    read_json(&out.join(BASIS))
}

/// Serialized training output: the model plus run metadata.
#[derive(serde::Serialize, serde::Deserialize)]
pub struct ModelArtifact {
    pub ablation: bool,
    pub kept_transitions: usize,
    pub model: ConstrainedSdeModel,
}

pub fn cmd_generate(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let lattice = load_lattice(cfg, out)?;
    let data = generate_dataset(&cfg.generator, &lattice, cfg.seed)?;
    write_atomic(&out.join(SURFACES), &data.series.to_csv())?;
    write_atomic(
        &out.join(SPOT),
        &panel_csv(
            &["time", "spot", "nu"],
            &[&data.series.times, &data.series.spot, &data.nu],
        ),
    )?;
    write_atomic(&out.join(LATTICE), &lattice.to_csv())?;
    resolved_config(cfg, out)?;
    println!(
        "generated {} observations on {} lattice nodes",
        data.series.len(),
        lattice.len()
    );
    Ok(())
}

pub fn cmd_decode(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let series = load_series(cfg, out)?;
    let cs = build_constraints(&series.lattice)?;
    let decoded = decode_market(&series, &cs, &cfg.decode)?;
    write_atomic(
        &out.join(FACTORS),
        &mat_csv(&series.times, "xi", &decoded.series.xi),
    )?;
    write_json(&out.join(BASIS), &decoded.basis)?;
    write_atomic(&out.join(Z_PANEL), &mat_csv(&series.times, "z", &decoded.z))?;
    write_atomic(
        &out.join("gamma.csv"),
        &panel_csv(&["time", "gamma"], &[&series.times, &decoded.gamma]),
    )?;
    write_json(
        &out.join("decode_metrics.json"),
        &serde_json::json!({
            "mape": decoded.mape,
            "pda": decoded.pda,
            "psas": decoded.psas,
            "constraints": decoded.polytope.n_constraints(),
            "reduced_constraints": decoded.reduced.n_constraints(),
            "tags": decoded.series.tags,
        }),
    )?;
    resolved_config(cfg, out)?;
    println!(
        "decoded {} factors: MAPE {:.3}%, PDA {:.3}%, PSAS {:.3}%",
        decoded.series.xi.ncols(),
        100.0 * decoded.mape,
        100.0 * decoded.pda,
        100.0 * decoded.psas
    );
    Ok(())
}

pub fn cmd_constraints(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let lattice = load_lattice(cfg, out)?;
    let cs = build_constraints(&lattice)?;
    write_json(&out.join("constraints.json"), &cs)?;
    let basis = load_basis(out)?;
    let polytope = to_factor_space(&cs, &basis.g0, &basis.g)?;
    let reduced = polytope.eliminate_redundant()?;
    write_json(&out.join("polytope.json"), &polytope)?;
    write_json(&out.join("polytope_reduced.json"), &reduced)?;
    let vs = reduced.enumerate_vertices()?;
    write_atomic(&out.join("vertices.csv"), &points_csv(&vs.vertices))?;
    let rho_star = match cfg.train.rho_star {
        Some(r) => r,
        None => 0.01 * reduced.diameter()?,
    };
    let interior = reduced.interior_points(rho_star)?;
    write_atomic(&out.join("interior_points.csv"), &points_csv(&interior.zeta))?;
    resolved_config(cfg, out)?;
    println!(
        "constraint system: {} rows over {} prices; factor polytope {} -> {} constraints",
        cs.n_rows(),
        cs.n_prices(),
        polytope.n_constraints(),
        reduced.n_constraints()
    );
    Ok(())
}

fn points_csv(points: &[Vec<f64>]) -> String {
    let d = points.first().map_or(0, Vec::len);
    let mut out = (1..=d)
        .map(|k| format!("x{k}"))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for p in points {
        out.push_str(
            &p.iter()
                .map(|v| fmt_f64(*v))
                .collect::<Vec<_>>()
                .join(","),
        );
        out.push('\n');
    }
    out
}

pub fn cmd_train(
    cfg: &PipelineConfig,
    out: &Path,
    operators_disabled: bool,
) -> Result<(), CliError> {
    let series = load_series(cfg, out)?;
    let (_, xi) = load_factors(out)?;
    let (_, z) = parse_mat_csv(&read_text(&out.join(Z_PANEL))?)?;
    let basis = load_basis(out)?;
    let polytope: Polytope = read_json(&out.join("polytope_reduced.json"))?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.operators_disabled |= operators_disabled;
    let data = TrainingData {
        xi,
        s: series.spot.clone(),
        z: Some(z),
        basis: Some(basis),
        polytope,
        dt: series.dt(),
    };
    let result = train(&data, &train_cfg)?;
    let artifact = ModelArtifact {
        ablation: result.model.ablation(),
        kept_transitions: result.kept_transitions,
        model: result.model,
    };
    write_json(&out.join(MODEL), &artifact)?;
    write_atomic(
        &out.join(LOSS_HISTORY),
        &loss_history_csv(&result.xi_history, &result.s_history),
    )?;
    resolved_config(cfg, out)?;
    println!(
        "trained on {} transitions (ablation = {}); final losses xi {:.4} / s {:.4}",
        artifact.kept_transitions,
        artifact.ablation,
        result.xi_history.last().map_or(f64::NAN, |e| e.train),
        result.s_history.last().map_or(f64::NAN, |e| e.train)
    );
    Ok(())
}

fn loss_history_csv(xi: &[EpochLoss], s: &[EpochLoss]) -> String {
    let mut out = String::from("model,epoch,train,validation\n");
    for e in xi {
        out.push_str(&format!(
            "xi,{},{},{}\n",
            e.epoch,
            fmt_f64(e.train),
            fmt_f64(e.validation)
        ));
    }
    for e in s {
        out.push_str(&format!(
            "s,{},{},{}\n",
            e.epoch,
            fmt_f64(e.train),
            fmt_f64(e.validation)
        ));
    }
    out
}

/// First strictly interior observation: the simulation start state.
fn start_state(xi: &Mat, spot: &[f64], polytope: &Polytope) -> Result<(f64, Vec<f64>), CliError> {
    let kept = interior_transitions(xi, polytope, 1e-12);
    let l0 = *kept
        .first()
        .ok_or_else(|| CliError::from(arbfree::Error::EmptyTrainingSet))?;
    Ok((spot[l0], xi.row(l0).to_vec()))
}

fn sim_surfaces_csv(lattice: &OptionLattice, spot: &[f64], c: &Mat) -> String {
    let mut out = String::from("spot");
    for &(tau, m) in lattice.nodes() {
        out.push_str(&format!(",{};{}", fmt_f64(tau), fmt_f64(m)));
    }
    out.push('\n');
    for l in 0..c.nrows() {
        out.push_str(&fmt_f64(spot[l]));
        for v in c.row(l) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn cmd_simulate(
    cfg: &PipelineConfig,
    out: &Path,
    steps_flag: Option<usize>,
) -> Result<(), CliError> {
    let artifact: ModelArtifact = read_json(&out.join(MODEL))?;
    let (_, xi) = load_factors(out)?;
    let series = load_series(cfg, out)?;
    let steps = steps_flag.unwrap_or(cfg.simulate.steps);
    let (s0, xi0) = start_state(&xi, &series.spot, &artifact.model.polytope)?;
    let sim = tamed_euler(&artifact.model, s0, &xi0, steps, cfg.simulate.seed)?;
    let dir = out.join("sim");
    write_atomic(&dir.join(FACTORS), &mat_csv(&sim.times, "xi", &sim.factors))?;
    write_atomic(
        &dir.join(SPOT),
        &panel_csv(&["time", "spot"], &[&sim.times, &sim.spot]),
    )?;
    if let Some(basis) = &artifact.model.basis {
        let recon = basis.reconstruct(&sim.factors);
        write_atomic(
            &dir.join(SURFACES),
            &sim_surfaces_csv(&series.lattice, &sim.spot, &recon),
        )?;
        let (h, offset) = vix_weights(&series.lattice, cfg.vix.target_tau)?;
        let vix = vix_direct(&sim.factors, basis, &h, offset);
        write_atomic(
            &dir.join("vix.csv"),
            &panel_csv(&["time", "vix_direct"], &[&sim.times, &vix]),
        )?;
    }
    write_json(&dir.join("diagnostics.json"), &sim.diagnostics)?;
    resolved_config(cfg, out)?;
    println!(
        "simulated {} steps: {} rejections, {} repairs, {} violations",
        steps, sim.diagnostics.rejections, sim.diagnostics.repairs, sim.diagnostics.violations
    );
    Ok(())
}

pub fn cmd_vix(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let series = load_series(cfg, out)?;
    let (times, xi) = load_factors(out)?;
    let basis = load_basis(out)?;
    let (h, offset) = vix_weights(&series.lattice, cfg.vix.target_tau)?;
    // data VIX from observed prices; reconstruction-based and regression
    // variants alongside
    let data_vix: Vec<f64> = (0..series.len())
        .map(|l| dot(&h, series.c.row(l)) + offset)
        .collect();
    let fit = fit_vix_regression(&xi, &data_vix)?;
    let recon_vix = vix_direct(&xi, &basis, &h, offset);
    let regress_vix = vix_regression(&xi, &fit);
    write_atomic(
        &out.join("vix.csv"),
        &panel_csv(
            &["time", "vix_data", "vix_reconstructed", "vix_regression"],
            &[&times, &data_vix, &recon_vix, &regress_vix],
        ),
    )?;
    write_json(
        &out.join("vix_fit.json"),
        &serde_json::json!({
            "beta0": fit.beta0,
            "beta": fit.beta,
            "r_squared": fit.r_squared,
            "weights": h,
            "offset": offset,
            "target_tau": cfg.vix.target_tau,
        }),
    )?;
    // simulated VIX when a simulation bundle is present
    let sim_factors = out.join("sim").join(FACTORS);
    if sim_factors.exists() {
        let (sim_times, sim_xi) = parse_mat_csv(&read_text(&sim_factors)?)?;
        let direct = vix_direct(&sim_xi, &basis, &h, offset);
        let regress = vix_regression(&sim_xi, &fit);
        write_atomic(
            &out.join("sim").join("vix.csv"),
            &panel_csv(
                &["time", "vix_direct", "vix_regression"],
                &[&sim_times, &direct, &regress],
            ),
        )?;
    }
    resolved_config(cfg, out)?;
    println!(
        "VIX functional on {} nodes: regression R^2 = {:.4}",
        h.iter().filter(|&&w| w != 0.0).count(),
        fit.r_squared
    );
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
pub struct SecondaryArtifact {
    pub models: Vec<SecondaryFactorModel>,
    pub primary_dim: usize,
}

pub fn cmd_secondary(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    if cfg.secondary.paper_mode && cfg.secondary.degree != 3 {
        return Err(CliError::config(format!(
            "paper mode requires a cubic link, got degree {}",
            cfg.secondary.degree
        )));
    }
    let series = load_series(cfg, out)?;
    let (times, xi) = load_factors(out)?;
    let basis = load_basis(out)?;
    let tags = basis.tags.clone();
    let factor_series = FactorSeries {
        xi: xi.clone(),
        tags,
    };
    let (series13, basis13) =
        append_statistical(&series.c, &factor_series, &basis, cfg.secondary.count)?;
    let cs = build_constraints(&series.lattice)?;
    let full = to_factor_space(&cs, &basis13.g0, &basis13.g)?;

    let d_primary = basis.dim();
    let dt = series.dt();
    let mut models = Vec::with_capacity(cfg.secondary.count);
    let mut primary = Mat::zeros(series13.xi.nrows(), d_primary);
    for l in 0..series13.xi.nrows() {
        for k in 0..d_primary {
            primary[(l, k)] = series13.xi[(l, k)];
        }
    }
    for i in 0..cfg.secondary.count {
        let col = series13.xi.col(d_primary + i);
        let (link, residuals) = fit_polynomial(&col, &primary, cfg.secondary.degree)?;
        let ou = fit_ou(&residuals, dt).unwrap_or(OuParams {
            kappa: 1.0 / dt,
            theta: 0.0,
            varsigma: 0.0,
        });
        models.push(SecondaryFactorModel { link, ou });
    }
    write_json(
        &out.join("secondary_models.json"),
        &SecondaryArtifact {
            models: models.clone(),
            primary_dim: d_primary,
        },
    )?;
    write_json(&out.join("basis_full.json"), &basis13)?;
    write_atomic(
        &out.join("factors_full.csv"),
        &mat_csv(&times, "xi", &series13.xi),
    )?;
    write_json(&out.join("polytope_full.json"), &full)?;

    if cfg.secondary.steps > 0 {
        let artifact: ModelArtifact = read_json(&out.join(MODEL))?;
        let (s0, xi0) = start_state(&xi, &series.spot, &artifact.model.polytope)?;
        let sim = simulate_joint(
            &artifact.model,
            &models,
            &full,
            s0,
            &xi0,
            cfg.secondary.steps,
            cfg.secondary.seed,
        )?;
        let dir = out.join("sim_joint");
        write_atomic(
            &dir.join(FACTORS),
            &mat_csv(&sim.primary.times, "xi", &sim.joint),
        )?;
        write_atomic(
            &dir.join("secondary_raw.csv"),
            &mat_csv(&sim.primary.times, "xi_sec", &sim.secondary_raw),
        )?;
        write_json(
            &dir.join("diagnostics.json"),
            &serde_json::json!({
                "repaired_steps": sim.repaired_steps,
                "joint_fallbacks": sim.joint_fallbacks,
                "primary": sim.primary.diagnostics,
                "psas_joint": psas(&sim.joint, &full)?,
            }),
        )?;
        println!(
            "joint simulation: {} repaired steps, {} fallbacks",
            sim.repaired_steps, sim.joint_fallbacks
        );
    }
    resolved_config(cfg, out)?;
    Ok(())
}

pub fn cmd_evaluate(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let series = load_series(cfg, out)?;
    let (_, xi) = load_factors(out)?;
    let basis = load_basis(out)?;
    let (_, z) = parse_mat_csv(&read_text(&out.join(Z_PANEL))?)?;
    let polytope: Polytope = read_json(&out.join("polytope_reduced.json"))?;
    let mape = arbfree::factor_decode::mape(&series.c, &basis, &xi)?;
    let pda = arbfree::factor_decode::pda(&z, &basis)?;
    let psas_data = psas(&xi, &polytope)?;

    let mut metrics = serde_json::json!({
        "mape": mape,
        "pda": pda,
        "psas_data": psas_data,
    });

    let model_path = out.join(MODEL);
    if model_path.exists() {
        let artifact: ModelArtifact = read_json(&model_path)?;
        // in-sample spot-volatility error against the generator ground truth
        if out.join(SPOT).exists() {
            let spot_text = read_text(&out.join(SPOT))?;
            if let Some(nu) = parse_nu_column(&spot_text) {
                let kept = interior_transitions(&xi, &polytope, 1e-12);
                let mut err = 0.0;
                for &l in &kept {
                    let truth = cfg
                        .generator
                        .leverage
                        .eval(l as f64 * cfg.generator.dt, series.spot[l])
                        * nu[l].max(0.0).sqrt()
                        * series.spot[l];
                    let (_, sigma_s) =
                        artifact.model.s_coefficients(series.spot[l], xi.row(l))?;
                    err += (sigma_s - truth).abs() / truth;
                }
                metrics["vol_mape_insample"] =
                    serde_json::json!(err / kept.len().max(1) as f64);
            }
        }
        // market price of risk diagnostics on a subsample
        let kept = interior_transitions(&xi, &polytope, 1e-12);
        let stride = (kept.len() / 200).max(1);
        let mut psi_norms = Vec::new();
        let mut chis = Vec::new();
        for &l in kept.iter().step_by(stride) {
            if let Ok((psi, chi)) = arbfree::constrained_sde::market_price_of_risk(
                &artifact.model,
                series.spot[l],
                xi.row(l),
                z.row(l),
            ) {
                psi_norms.push(arbfree::linalg::norm2(&psi));
                chis.push(chi);
            }
        }
        metrics["psi"] = summary_json(&psi_norms);
        metrics["chi"] = summary_json(&chis);
    }

    let sim_dir = out.join("sim");
    if sim_dir.join(FACTORS).exists() {
        let (_, sim_xi) = parse_mat_csv(&read_text(&sim_dir.join(FACTORS))?)?;
        let sim_spot_text = read_text(&sim_dir.join(SPOT))?;
        let (_, sim_spot_panel) = parse_mat_csv(&sim_spot_text)?;
        let sim_spot = sim_spot_panel.col(0);
        metrics["psas_sim"] = serde_json::json!(psas(&sim_xi, &polytope)?);
        let logret = |s: &[f64]| -> Vec<f64> {
            (0..s.len() - 1).map(|l| (s[l + 1] / s[l]).ln()).collect()
        };
        let mut w1 = serde_json::Map::new();
        w1.insert(
            "logret_s".into(),
            serde_json::json!(wasserstein1(&logret(&sim_spot), &logret(&series.spot))?),
        );
        for k in 0..xi.ncols() {
            w1.insert(
                format!("xi{}", k + 1),
                serde_json::json!(wasserstein1(&sim_xi.col(k), &xi.col(k))?),
            );
        }
        metrics["w1"] = serde_json::Value::Object(w1);
        // implied-vol paths on the simulated factors
        let paths = iv_paths(&sim_xi, &basis, &series.lattice, &cfg.evaluate.iv_picks)?;
        metrics["iv_gaps"] = serde_json::json!(paths.gaps);
        let times: Vec<f64> = (0..paths.series.nrows())
            .map(|l| l as f64 * series.dt())
            .collect();
        write_atomic(&sim_dir.join("iv_paths.csv"), &mat_csv(&times, "iv", &paths.series))?;
    }
    write_json(&out.join(METRICS), &metrics)?;
    resolved_config(cfg, out)?;
    println!("{}", serde_json::to_string_pretty(&metrics).unwrap());
    Ok(())
}

fn parse_nu_column(spot_csv: &str) -> Option<Vec<f64>> {
    let mut lines = spot_csv.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next()?;
    let nu_idx = header.split(',').position(|h| h.trim() == "nu")?;
    let mut nu = Vec::new();
    for line in lines {
        nu.push(line.split(',').nth(nu_idx)?.trim().parse().ok()?);
    }
    Some(nu)
}

fn summary_json(values: &[f64]) -> serde_json::Value {
    if values.is_empty() {
        return serde_json::json!(null);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    serde_json::json!({
        "mean": mean,
        "median": sorted[sorted.len() / 2],
        "max": sorted[sorted.len() - 1],
    })
}

pub fn cmd_sweep(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let series = load_series(cfg, out)?;
    let (_, xi) = load_factors(out)?;
    let (_, z) = parse_mat_csv(&read_text(&out.join(Z_PANEL))?)?;
    let basis = load_basis(out)?;
    let polytope: Polytope = read_json(&out.join("polytope_reduced.json"))?;
    let data = TrainingData {
        xi: xi.clone(),
        s: series.spot.clone(),
        z: Some(z),
        basis: Some(basis),
        polytope: polytope.clone(),
        dt: series.dt(),
    };
    let (s0, xi0) = start_state(&xi, &series.spot, &polytope)?;
    let input_logret: Vec<f64> = (0..series.spot.len() - 1)
        .map(|l| (series.spot[l + 1] / series.spot[l]).ln())
        .collect();

    struct Row {
        name: String,
        depth: usize,
        width: usize,
        sparsity: f64,
        activation: String,
        status: &'static str,
        train_loss: f64,
        val_loss: f64,
        w1: [f64; 3],
    }

    let rows: Vec<Row> = cfg
        .sweep
        .variants
        .par_iter()
        .enumerate()
        .map(|(idx, variant)| {
            let train_cfg = TrainConfig {
                epochs_xi: cfg.sweep.epochs_xi,
                epochs_s: cfg.sweep.epochs_s,
                hidden_xi: variant.hidden.clone(),
                hidden_s: cfg.train.hidden_s.clone(),
                sparsity: variant.sparsity,
                activation: variant.activation,
                seed: cfg.sweep.seed + idx as u64,
                ..cfg.train.clone()
            };
            let mut row = Row {
                name: variant.name.clone(),
                depth: variant.hidden.len(),
                width: variant.hidden.first().copied().unwrap_or(0),
                sparsity: variant.sparsity,
                activation: format!("{:?}", variant.activation).to_lowercase(),
                status: "failed",
                train_loss: f64::NAN,
                val_loss: f64::NAN,
                w1: [f64::NAN; 3],
            };
            let outcome = train(&data, &train_cfg).and_then(|result| {
                let sim = tamed_euler(&result.model, s0, &xi0, cfg.sweep.steps, cfg.sweep.seed)?;
                Ok((result, sim))
            });
            if let Ok((result, sim)) = outcome {
                let sim_logret: Vec<f64> = (0..sim.spot.len() - 1)
                    .map(|l| (sim.spot[l + 1] / sim.spot[l]).ln())
                    .collect();
                let w_s = wasserstein1(&sim_logret, &input_logret);
                let w_1 = wasserstein1(&sim.factors.col(0), &xi.col(0));
                let w_2 = if xi.ncols() > 1 {
                    wasserstein1(&sim.factors.col(1), &xi.col(1))
                } else {
                    Ok(f64::NAN)
                };
                if let (Ok(a), Ok(b), Ok(c)) = (w_s, w_1, w_2) {
                    row.status = "ok";
                    row.train_loss = result.xi_history.last().map_or(f64::NAN, |e| e.train);
                    row.val_loss = result.xi_history.last().map_or(f64::NAN, |e| e.validation);
                    row.w1 = [a, b, c];
                }
            }
            row
        })
        .collect();

    let mut csv = String::from(
        "name,depth,width,sparsity,activation,status,final_train_loss,final_val_loss,w1_logret_s,w1_xi1,w1_xi2\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.name,
            r.depth,
            r.width,
            fmt_f64(r.sparsity),
            r.activation,
            r.status,
            fmt_f64(r.train_loss),
            fmt_f64(r.val_loss),
            fmt_f64(r.w1[0]),
            fmt_f64(r.w1[1]),
            fmt_f64(r.w1[2])
        ));
    }
    write_atomic(&out.join(SWEEP_REPORT), &csv)?;
    resolved_config(cfg, out)?;
    let failures = rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "sweep finished: {} variants, {} failed",
        rows.len(),
        failures
    );
    Ok(())
}
