//! Seeded experiment runners producing CSV tables.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::activation::Activation;
use crate::config::{ExperimentConfig, ExperimentId};
use crate::csv::Table;
use crate::error::{Error, Result};
use crate::identify::{gradient_descent_observed, normalized_errors, plateau_iteration, smooth, GdConfig};
use crate::losses::Design;
use crate::row;
use crate::seed;
use crate::stability::{
    covariance_bounds, dare_policy, estimate_stability, nonlinear_operator_norm, spectral_norm, spectral_radius,
    unstable_matrix,
};
use crate::system::{NoiseSpec, NonlinearForm, Policy, SystemSpec};
use crate::trajectory::{simulate, Trajectory};
use crate::verify;

/// A named CSV produced by a run.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub table: Table,
}

impl Artifact {
    fn new(name: impl Into<String>, table: Table) -> Self {
        Artifact {
            name: name.into(),
            table,
        }
    }
}

/// Seed of repetition `rep` of experiment `id`; independent of how many reps run.
pub fn rep_seed(master: u64, id: ExperimentId, rep: usize) -> u64 {
    seed::derive(seed::derive(master, id.tag()), rep as u64)
}

/// Seed of the plant shared by every repetition of experiment `id`.
pub fn system_seed(master: u64, id: ExperimentId) -> u64 {
    seed::derive(seed::derive(master, id.tag()), u64::MAX)
}

/// Unstable `A` (N(0,1) entries rescaled) and `B` with N(0, 1/n) entries.
pub fn random_pair(cfg: &ExperimentConfig, seed_: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut rng = seed::stream(seed_, seed::STREAM_SYSTEM);
    let a = unstable_matrix(&mut rng, cfg.n, cfg.unstable_count(), cfg.margin)?;
    let b = seed::normal_matrix(&mut rng, cfg.n, cfg.p, (1.0 / cfg.n as f64).sqrt());
    Ok((a, b))
}

/// The pair plus the noisy Riccati feedback computed for the linear part.
pub fn random_plant(cfg: &ExperimentConfig, seed_: u64) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (a, b) = random_pair(cfg, seed_)?;
    let k = dare_policy(&a, &b, cfg.dare_noise_var, seed::derive(seed_, 1), cfg.perturb)?;
    Ok((a, b, k))
}

fn plant_system(a: &DMatrix<f64>, b: &DMatrix<f64>, activation: Activation) -> Result<SystemSpec> {
    if activation.is_identity() {
        SystemSpec::linear(a.clone(), b.clone())
    } else {
        SystemSpec::entrywise(a.clone(), b.clone(), activation, NonlinearForm::PreMix)
    }
}

fn noise(sigma2: f64, seed_: u64) -> NoiseSpec {
    NoiseSpec::new(sigma2.sqrt(), seed_)
}

/// Runs `f` on a pool of `workers` threads (all cores when zero).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn run(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    cfg.validate()?;
    let id = cfg.experiment.ok_or_else(|| Error::ConfigField {
        field: "experiment".into(),
        message: "no experiment selected".into(),
    })?;
    with_workers(cfg.workers, || match id {
        ExperimentId::Fig1a => fig1a(cfg),
        ExperimentId::Fig1b => fig1b(cfg),
        ExperimentId::Fig1c => fig1c(cfg),
        ExperimentId::Fig2 => fig2(cfg),
        ExperimentId::Table1 => table1(cfg),
        ExperimentId::Identify => identify_run(cfg),
        ExperimentId::Verify => verify_run(cfg),
        ExperimentId::Simulate => simulate_run(cfg),
    })?
}

/// Writes every artifact as `<dir>/<name>.csv` plus a `<dir>/<experiment>.meta`
/// sidecar holding the config and a timestamp.
pub fn write_artifacts(cfg: &ExperimentConfig, artifacts: &[Artifact], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for a in artifacts {
        let p = dir.join(format!("{}.csv", a.name));
        a.table.write(&p)?;
        paths.push(p);
    }
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let name = cfg.experiment.map_or("run", |e| e.name());
    let meta = format!(
        "# {name} metadata\ncreated_unix = {stamp}\nversion = {}\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.serialize()
    );
    std::fs::write(dir.join(format!("{name}.meta")), meta)?;
    Ok(paths)
}

/// One point of a gradient-descent sweep.
#[derive(Debug, Clone, Copy)]
struct SweepPoint {
    value: f64,
    activation: Activation,
    sigma2: f64,
    len: usize,
}

/// Outcome of one repetition at one sweep point.
#[derive(Debug, Clone)]
struct RepRun {
    seed: u64,
    status: &'static str,
    err_a: Vec<f64>,
    err_b: Vec<f64>,
    losses: Vec<f64>,
    param_err: f64,
}

fn status_of(e: &Error) -> &'static str {
    match e {
        Error::Diverged { .. } => "diverged",
        Error::NotStabilizable(_) => "not_stabilizable",
        Error::UnstableSystem { .. } => "unstable",
        _ => "failed",
    }
}

fn gd_rep(cfg: &ExperimentConfig, pt: SweepPoint, seed_: u64) -> RepRun {
    let mut out = RepRun {
        seed: seed_,
        status: "ok",
        err_a: Vec::new(),
        err_b: Vec::new(),
        losses: Vec::new(),
        param_err: f64::NAN,
    };
    let res = (|| -> Result<()> {
        let (a, b, k) = random_plant(cfg, seed_)?;
        let sys = plant_system(&a, &b, pt.activation)?;
        let traj = simulate(&sys, &Policy::LinearFeedback(k), &noise(pt.sigma2, seed_), pt.len)?;
        let design = Design::empirical(&traj, cfg.churn)?;
        // eta_scale/T on the summed loss is this step on the mean loss.
        let step = cfg.eta_scale * design.len() as f64 / pt.len as f64;
        let gd = GdConfig {
            tolerance: 0.0,
            ..GdConfig::new(step, cfg.iterations, sys.param_shape())
        };
        let report = gradient_descent_observed(&design, &gd, |_, theta, loss| {
            let (ea, eb) = normalized_errors(&sys, theta);
            out.err_a.push(ea);
            out.err_b.push(eb.unwrap_or(f64::NAN));
            out.losses.push(loss);
        })?;
        out.param_err = (report.theta - sys.theta_star()).norm();
        Ok(())
    })();
    if let Err(e) = res {
        out.status = status_of(&e);
    }
    out
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, s)
}

/// First iterate at or below `threshold`.
pub fn iterations_to(series: &[f64], threshold: f64) -> Option<usize> {
    series.iter().position(|&e| e <= threshold)
}

fn opt(v: Option<usize>) -> i64 {
    v.map_or(-1, |x| x as i64)
}

fn gd_sweep(cfg: &ExperimentConfig, id: ExperimentId, point_name: &str, points: &[SweepPoint]) -> Result<Vec<Artifact>> {
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..cfg.reps).map(move |r| (p, r)))
        .collect();
    let runs: Vec<RepRun> = jobs
        .par_iter()
        .map(|&(p, r)| gd_rep(cfg, points[p], rep_seed(cfg.seed, id, r)))
        .collect();
    let name = id.name();
    let mut raw = Table::new(&[point_name, "rep", "seed", "iteration", "err_a", "err_b", "loss", "status"]);
    let mut finals = Table::new(&[
        point_name,
        "rep",
        "seed",
        "status",
        "final_err_a",
        "final_err_b",
        "final_param_err",
        "iterations_to_threshold",
        "plateau_iteration",
    ]);
    let mut summary = Table::new(&[
        point_name,
        "iteration",
        "reps_ok",
        "mean_err_a",
        "std_err_a",
        "mean_err_b",
        "std_err_b",
        "seed",
    ]);
    let recorded = |len: usize| {
        let mut it: Vec<usize> = (0..len).step_by(cfg.record_every).collect();
        if len > 0 && it.last() != Some(&(len - 1)) {
            it.push(len - 1);
        }
        it
    };
    for (p, pt) in points.iter().enumerate() {
        let group = &runs[p * cfg.reps..(p + 1) * cfg.reps];
        for (r, run) in group.iter().enumerate() {
            if run.status != "ok" {
                raw.push(row![pt.value, r, run.seed, 0usize, f64::NAN, f64::NAN, f64::NAN, run.status]);
            } else {
                for i in recorded(run.err_a.len()) {
                    raw.push(row![pt.value, r, run.seed, i, run.err_a[i], run.err_b[i], run.losses[i], run.status]);
                }
            }
            let (fa, fb) = if run.status == "ok" {
                (*run.err_a.last().unwrap(), *run.err_b.last().unwrap())
            } else {
                (f64::NAN, f64::NAN)
            };
            finals.push(row![
                pt.value,
                r,
                run.seed,
                run.status,
                fa,
                fb,
                run.param_err,
                opt(iterations_to(&run.err_a, cfg.threshold)),
                opt(plateau_iteration(&smooth(&run.err_a, 10), 0.05))
            ]);
        }
        let ok: Vec<&RepRun> = group.iter().filter(|r| r.status == "ok").collect();
        if let Some(first) = ok.first() {
            for i in recorded(first.err_a.len()) {
                let a: Vec<f64> = ok.iter().map(|r| r.err_a[i]).collect();
                let b: Vec<f64> = ok.iter().map(|r| r.err_b[i]).collect();
                let (ma, sa) = mean_std(&a);
                let (mb, sb) = mean_std(&b);
                summary.push(row![pt.value, i, ok.len(), ma, sa, mb, sb, cfg.seed]);
            }
        }
    }
    Ok(vec![
        Artifact::new(name, summary),
        Artifact::new(format!("{name}_final"), finals),
        Artifact::new(format!("{name}_raw"), raw),
    ])
}

/// Leaky-ReLU leakage sweep at the configured `T` and `σ²`.
pub fn fig1a(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let points: Vec<SweepPoint> = cfg
        .lambdas
        .iter()
        .map(|&l| SweepPoint {
            value: l,
            activation: if l == 1.0 { Activation::Identity } else { Activation::LeakyRelu(l) },
            sigma2: cfg.sigma2,
            len: cfg.t,
        })
        .collect();
    gd_sweep(cfg, ExperimentId::Fig1a, "lambda", &points)
}

/// Noise-variance sweep with softplus.
pub fn fig1b(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let points: Vec<SweepPoint> = cfg
        .sigma2_grid
        .iter()
        .map(|&s| SweepPoint {
            value: s,
            activation: Activation::Softplus,
            sigma2: s,
            len: cfg.t,
        })
        .collect();
    gd_sweep(cfg, ExperimentId::Fig1b, "sigma2", &points)
}

/// Trajectory-length sweep with softplus.
pub fn fig1c(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let points: Vec<SweepPoint> = cfg
        .t_grid
        .iter()
        .map(|&t| SweepPoint {
            value: t as f64,
            activation: Activation::Softplus,
            sigma2: cfg.sigma2,
            len: t,
        })
        .collect();
    gd_sweep(cfg, ExperimentId::Fig1c, "T", &points)
}

/// First pair in the seeded sequence with `ρ(A) ≥ fig2_min_radius`, or the
/// largest-radius pair among the first 64 draws if none reaches it.
pub fn shared_unstable_pair(cfg: &ExperimentConfig, seed_: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut best: Option<(f64, DMatrix<f64>, DMatrix<f64>)> = None;
    for i in 0..64 {
        let (a, b) = random_pair(cfg, seed::derive(seed_, i))?;
        let rho = spectral_radius(&a)?;
        if rho >= cfg.fig2_min_radius {
            return Ok((a, b));
        }
        if best.as_ref().is_none_or(|(r, _, _)| rho > *r) {
            best = Some((rho, a, b));
        }
    }
    let (_, a, b) = best.expect("at least one draw");
    Ok((a, b))
}

/// State-norm profiles of the open-loop `φ(Ah + Bz) + w` across leakages,
/// started from `h₀ = 0`.
pub fn fig2(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let id = ExperimentId::Fig2;
    let shared = if cfg.fig2_shared_system {
        Some(shared_unstable_pair(cfg, system_seed(cfg.seed, id))?)
    } else {
        None
    };
    let jobs: Vec<(usize, usize)> = (0..cfg.lambdas.len())
        .flat_map(|l| (0..cfg.fig2_reps).map(move |r| (l, r)))
        .collect();
    let runs: Vec<(u64, Result<Vec<f64>>)> = jobs
        .par_iter()
        .map(|&(l, r)| {
            let s = rep_seed(cfg.seed, id, r);
            let res = (|| {
                let (a, b) = match &shared {
                    Some(pair) => pair.clone(),
                    None => random_pair(cfg, s)?,
                };
                let sys = SystemSpec::entrywise(a, b, Activation::LeakyRelu(cfg.lambdas[l]), NonlinearForm::PreMix)?;
                let tr = simulate(&sys, &Policy::Zero, &noise(cfg.sigma2, s), cfg.horizon)?;
                Ok(tr.states().iter().map(|h| h.norm()).collect())
            })();
            (s, res)
        })
        .collect();
    let mut raw = Table::new(&["lambda", "rep", "seed", "t", "norm", "status"]);
    let mut summary = Table::new(&["lambda", "t", "reps_ok", "mean_norm", "std_norm", "seed"]);
    for (l, &lam) in cfg.lambdas.iter().enumerate() {
        let group = &runs[l * cfg.fig2_reps..(l + 1) * cfg.fig2_reps];
        let mut ok = Vec::new();
        for (r, (s, res)) in group.iter().enumerate() {
            match res {
                Ok(norms) => {
                    for (t, v) in norms.iter().enumerate() {
                        raw.push(row![lam, r, *s, t, *v, "ok"]);
                    }
                    ok.push(norms);
                }
                Err(e) => raw.push(row![lam, r, *s, 0usize, f64::NAN, status_of(e)]),
            }
        }
        for t in 0..=cfg.horizon {
            let v: Vec<f64> = ok.iter().map(|n| n[t]).collect();
            let (m, sd) = mean_std(&v);
            summary.push(row![lam, t, ok.len(), m, sd, cfg.seed]);
        }
    }
    Ok(vec![Artifact::new("fig2", summary), Artifact::new("fig2_raw", raw)])
}

/// Per-trial spectral statistics of `A` and the closed loop `A − BK`.
#[derive(Debug, Clone)]
pub struct TrialStats {
    pub norm_a: f64,
    pub norm_cl: f64,
    pub rho_a: f64,
    pub rho_cl: f64,
    /// `(nl(A, λ), nl(A − BK, λ))` per leakage.
    pub nonlinear: Vec<(f64, f64)>,
}

pub fn table1_trial(cfg: &ExperimentConfig, seed_: u64) -> Result<TrialStats> {
    let (a, b, k) = random_plant(cfg, seed_)?;
    let cl = &a - &b * &k;
    let nonlinear = cfg
        .lambdas
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let act = Activation::LeakyRelu(l);
            let s = seed::derive(seed_, 100 + i as u64);
            (
                nonlinear_operator_norm(&a, act, cfg.nl_starts, s),
                nonlinear_operator_norm(&cl, act, cfg.nl_starts, s),
            )
        })
        .collect();
    Ok(TrialStats {
        norm_a: spectral_norm(&a),
        norm_cl: spectral_norm(&cl),
        rho_a: spectral_radius(&a)?,
        rho_cl: spectral_radius(&cl)?,
        nonlinear,
    })
}

pub fn table1(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let id = ExperimentId::Table1;
    let runs: Vec<(u64, Result<TrialStats>)> = (0..cfg.trials)
        .into_par_iter()
        .map(|r| {
            let s = rep_seed(cfg.seed, id, r);
            (s, table1_trial(cfg, s))
        })
        .collect();
    let mut raw = Table::new(&[
        "trial", "seed", "status", "lambda", "norm_a", "norm_a_cl", "rho_a", "rho_a_cl", "nl_a", "nl_a_cl",
    ]);
    for (r, (s, res)) in runs.iter().enumerate() {
        match res {
            Ok(st) => {
                for (l, &lam) in cfg.lambdas.iter().enumerate() {
                    let (na, nc) = st.nonlinear[l];
                    raw.push(row![r, *s, "ok", lam, st.norm_a, st.norm_cl, st.rho_a, st.rho_cl, na, nc]);
                }
            }
            Err(e) => raw.push(row![
                r,
                *s,
                status_of(e),
                f64::NAN,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                f64::NAN
            ]),
        }
    }
    let ok: Vec<&TrialStats> = runs.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
    let col = |f: &dyn Fn(&TrialStats) -> f64| mean_std(&ok.iter().map(|s| f(s)).collect::<Vec<_>>());
    let mut summary = Table::new(&[
        "lambda",
        "trials_ok",
        "mean_norm_a",
        "std_norm_a",
        "mean_norm_a_cl",
        "std_norm_a_cl",
        "mean_rho_a",
        "std_rho_a",
        "mean_rho_a_cl",
        "std_rho_a_cl",
        "mean_nl_a",
        "std_nl_a",
        "mean_nl_a_cl",
        "std_nl_a_cl",
        "seed",
    ]);
    for (l, &lam) in cfg.lambdas.iter().enumerate() {
        let na = col(&|s| s.norm_a);
        let nc = col(&|s| s.norm_cl);
        let ra = col(&|s| s.rho_a);
        let rc = col(&|s| s.rho_cl);
        let la = col(&|s| s.nonlinear[l].0);
        let lc = col(&|s| s.nonlinear[l].1);
        summary.push(row![lam, ok.len(), na.0, na.1, nc.0, nc.1, ra.0, ra.1, rc.0, rc.1, la.0, la.1, lc.0, lc.1, cfg.seed]);
    }
    Ok(vec![Artifact::new("table1", summary), Artifact::new("table1_raw", raw)])
}

/// The configured plant and a trajectory of length `T` from it.
pub fn configured_trajectory(cfg: &ExperimentConfig, id: ExperimentId) -> Result<Trajectory> {
    let s = rep_seed(cfg.seed, id, 0);
    let (a, b, k) = random_plant(cfg, s)?;
    let sys = plant_system(&a, &b, cfg.activation_fn())?;
    simulate(&sys, &Policy::LinearFeedback(k), &noise(cfg.sigma2, s), cfg.t)
}

fn simulate_run(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let tr = configured_trajectory(cfg, ExperimentId::Simulate)?;
    let text = tr.to_csv();
    let mut lines = text.lines();
    let mut header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    header.push("seed");
    let mut table = Table::new(&header);
    let s = tr.noise.seed.to_string();
    for l in lines {
        let mut cells: Vec<crate::csv::Cell> = l.split(',').map(|c| crate::csv::Cell::Text(c.to_string())).collect();
        cells.push(crate::csv::Cell::Text(s.clone()));
        table.push(cells);
    }
    Ok(vec![Artifact::new("simulate", table)])
}

fn identify_run(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let tr = configured_trajectory(cfg, ExperimentId::Identify)?;
    let seed_ = rep_seed(cfg.seed, ExperimentId::Identify, 0);
    let design = Design::empirical(&tr, cfg.churn)?;
    let step = cfg.eta_scale * design.len() as f64 / cfg.t as f64;
    let gd = GdConfig {
        tolerance: 0.0,
        ..GdConfig::new(step, cfg.iterations, tr.sys.param_shape())
    };
    let mut table = Table::new(&["iteration", "loss", "err_a", "err_b", "seed"]);
    gradient_descent_observed(&design, &gd, |i, theta, loss| {
        let (ea, eb) = normalized_errors(&tr.sys, theta);
        table.push(row![i, loss, ea, eb.unwrap_or(f64::NAN), seed_]);
    })?;
    Ok(vec![Artifact::new("identify", table)])
}

fn verify_run(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let id = ExperimentId::Verify;
    let s = rep_seed(cfg.seed, id, 0);
    let (a, b, k) = random_plant(cfg, s)?;
    let sys = plant_system(&a, &b, cfg.activation_fn())?;
    let policy = Policy::LinearFeedback(k);
    let nz = noise(cfg.sigma2, s);
    let mut table = Table::new(&verify::report_columns());

    let est = estimate_stability(&sys, &policy, &nz, cfg.stability_trials, cfg.stability_horizon, 1.0)?;
    verify::check_stability(&sys, &policy, &nz, &est, cfg.stability_trials, 1.0, 1e-9).write_rows(&mut table, s);
    let bc = verify::BoundConstants::from(&est);

    let ensemble = (0..100)
        .into_par_iter()
        .map(|r| simulate(&sys, &policy, &nz.with_seed(seed::derive(s, 1000 + r)), cfg.t))
        .collect::<Result<Vec<_>>>()?;
    verify::check_bounded_states(&ensemble, bc, cfg.bound_c)?.write_rows(&mut table, s);

    verify::check_opc(&sys, &policy, &nz, cfg.depth, cfg.opc_radius, cfg.opc_probes, cfg.opc_samples)?
        .report
        .write_rows(&mut table, s);

    let star = sys.theta_star();
    let probes: Vec<DMatrix<f64>> = (0..3)
        .map(|i| {
            let v = seed::unit_vector(&mut seed::stream(seed::derive(s, 2000 + i), seed::STREAM_AUX), star.len());
            &star + DMatrix::from_column_slice(star.nrows(), star.ncols(), v.as_slice()) * cfg.opc_radius
        })
        .collect();
    let depths: Vec<usize> = (2..=cfg.depth.max(2)).collect();
    verify::check_truncation_gap(&ensemble[0], &probes, &depths, bc)?.report.write_rows(&mut table, s);

    let mut with_star = vec![star];
    with_star.extend(probes.iter().cloned());
    verify::check_gradient_concentration(&sys, &policy, &nz, cfg.depth, &cfg.t_grid, &with_star, cfg.reps, cfg.opc_samples)?
        .report
        .write_rows(&mut table, s);

    if let Ok(cv) = verify::check_covariance_sandwich(&sys, &policy, &nz, cfg.depth, cfg.opc_samples, cfg.cov_tol) {
        cv.report.write_rows(&mut table, s);
        if let (Some(acl), true) = (sys.closed_loop_matrix(&policy), sys.activation().is_identity()) {
            let cb = covariance_bounds(&acl, &sys.closed_loop_input(), nz.process_std, cfg.depth, cfg.t)?;
            let mut rep = verify::AssumptionReport::from_constants(
                verify::Assumption::CovarianceSandwich,
                &[("gamma_minus", cb.gamma_minus), ("gamma_plus", cb.gamma_plus)],
            );
            rep.samples = cfg.opc_samples;
            rep.write_rows(&mut table, s);
        }
    }
    verify::check_subsample_identity(&sys, &policy, &nz, cfg.depth, cfg.t, 2000, 0.01)?.write_rows(&mut table, s);
    Ok(vec![Artifact::new("verify", table)])
}
