//! Empirical checks of the stability, boundedness, one-point convexity,
//! concentration and truncation properties the identification guarantees rest on.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::csv::Table;
use crate::error::{Error, Result};
use crate::losses::{linear_population_gradient, state_covariance, Design};
use crate::row;
use crate::seed;
use crate::stability::{paired_decay, StabilityEstimate};
use crate::system::{NoiseSpec, Policy, SystemSpec};
use crate::trajectory::{sample_count, simulate, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    Stability,
    Boundedness,
    Opc,
    Smoothness,
    LipschitzGrad,
    GradConcentration,
    TruncationGap,
    CovarianceSandwich,
    SubsampleIdentity,
}

impl Assumption {
    pub fn name(&self) -> &'static str {
        match self {
            Assumption::Stability => "stability",
            Assumption::Boundedness => "boundedness",
            Assumption::Opc => "opc",
            Assumption::Smoothness => "smoothness",
            Assumption::LipschitzGrad => "lipschitz_grad",
            Assumption::GradConcentration => "grad_concentration",
            Assumption::TruncationGap => "truncation_gap",
            Assumption::CovarianceSandwich => "covariance_sandwich",
            Assumption::SubsampleIdentity => "subsample_identity",
        }
    }
}

/// One tested point: `pass` iff `measured ≤ bound` (or `≥` for lower envelopes).
#[derive(Debug, Clone, PartialEq)]
pub struct CheckPoint {
    pub label: String,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

impl CheckPoint {
    pub fn upper(label: impl Into<String>, measured: f64, bound: f64) -> Self {
        CheckPoint {
            label: label.into(),
            measured,
            bound,
            pass: measured <= bound,
        }
    }

    pub fn lower(label: impl Into<String>, measured: f64, bound: f64) -> Self {
        CheckPoint {
            label: label.into(),
            measured,
            bound,
            pass: measured >= bound,
        }
    }

    pub fn ratio(&self) -> f64 {
        self.measured / self.bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub assumption: Assumption,
    pub constants: Vec<(String, f64)>,
    pub std_errors: Vec<(String, f64)>,
    pub points: Vec<CheckPoint>,
    pub samples: usize,
    pub pass: bool,
}

impl AssumptionReport {
    fn new(assumption: Assumption, samples: usize) -> Self {
        AssumptionReport {
            assumption,
            constants: Vec::new(),
            std_errors: Vec::new(),
            points: Vec::new(),
            samples,
            pass: true,
        }
    }

    /// A report that only records constants (always passing).
    pub fn from_constants(assumption: Assumption, constants: &[(&str, f64)]) -> Self {
        let mut r = Self::new(assumption, 0);
        for (k, v) in constants {
            r.constant(k, *v);
        }
        r
    }

    fn constant(&mut self, name: &str, v: f64) {
        self.constants.push((name.to_string(), v));
    }

    fn point(&mut self, p: CheckPoint) {
        self.pass &= p.pass;
        self.points.push(p);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    /// Appends one row per tested point (and per constant) to `table`,
    /// which must use [`report_columns`].
    pub fn write_rows(&self, table: &mut Table, seed_: u64) {
        for p in &self.points {
            table.push(row![
                self.assumption.name(),
                p.label.clone(),
                p.measured,
                p.bound,
                p.ratio(),
                p.pass,
                seed_
            ]);
        }
        for (k, v) in &self.constants {
            table.push(row![self.assumption.name(), format!("const:{k}"), *v, f64::NAN, f64::NAN, true, seed_]);
        }
    }
}

pub fn report_columns() -> [&'static str; 7] {
    ["assumption", "point", "measured", "bound", "ratio", "pass", "seed"]
}

/// Central differences `(f(θ+εe) − f(θ−εe))/(2ε)` per coordinate.
pub fn finite_diff_gradient<F>(f: F, theta: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DMatrix<f64>) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("finite-difference step must be > 0".into()));
    }
    let mut g = DMatrix::zeros(theta.nrows(), theta.ncols());
    let mut probe = theta.clone();
    for j in 0..theta.ncols() {
        for i in 0..theta.nrows() {
            let base = theta[(i, j)];
            probe[(i, j)] = base + eps;
            let up = f(&probe)?;
            probe[(i, j)] = base - eps;
            let down = f(&probe)?;
            probe[(i, j)] = base;
            g[(i, j)] = (up - down) / (2.0 * eps);
        }
    }
    Ok(g)
}

/// Random unit-Frobenius-norm direction of the given shape.
fn unit_direction(seed_: u64, shape: (usize, usize)) -> DMatrix<f64> {
    let v = seed::unit_vector(&mut seed::stream(seed_, seed::STREAM_AUX), shape.0 * shape.1);
    DMatrix::from_column_slice(shape.0, shape.1, v.as_slice())
}

/// Held-out check of a `(C_ρ, ρ)` envelope on fresh paired rollouts.
pub fn check_stability(
    sys: &SystemSpec,
    policy: &Policy,
    noise: &NoiseSpec,
    est: &StabilityEstimate,
    trials: usize,
    alpha_scale: f64,
    slack: f64,
) -> AssumptionReport {
    let horizon = est.horizon;
    let worst: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let s = seed::derive(noise.seed ^ 0x5EED_0F_F5E7, i as u64);
            let alpha = seed::unit_vector(&mut seed::stream(s, seed::STREAM_AUX), sys.state_dim()) * alpha_scale;
            paired_decay(sys, policy, &noise.with_seed(s), horizon, &alpha)
        })
        .collect();
    let mut rep = AssumptionReport::new(Assumption::Stability, trials);
    rep.constant("c_rho", est.c_rho);
    rep.constant("rho", est.rho);
    for t in 0..=horizon {
        let e = worst.iter().map(|p| p[t]).fold(0.0, f64::max);
        rep.point(CheckPoint::upper(format!("t={t}"), e, est.envelope(t) + slack));
    }
    rep
}

/// Constants entering the bounded-state and truncation bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub c_rho: f64,
    pub rho: f64,
}

impl From<&StabilityEstimate> for BoundConstants {
    fn from(e: &StabilityEstimate) -> Self {
        BoundConstants {
            c_rho: e.c_rho,
            rho: e.rho,
        }
    }
}

/// `max_t ‖w_t‖_∞` and `max_t ‖φ̃(0, z_t; θ⋆)‖/√n` over a trajectory.
pub fn noise_and_drive_levels(traj: &Trajectory) -> (f64, f64) {
    let sys = &traj.sys;
    let n = sys.output_dim() as f64;
    let theta = sys.theta_star();
    let zero = DVector::zeros(sys.state_dim());
    let sigma = traj.noises().iter().map(|w| w.amax()).fold(0.0, f64::max);
    let drive = traj
        .excitations()
        .iter()
        .map(|z| sys.predict(&theta, &sys.regressor(&traj.policy, &zero, z)).norm() / n.sqrt())
        .fold(0.0, f64::max);
    (sigma, drive)
}

/// `β₊ = C_ρ(σ + B)/(1 − ρ)` with `σ` and `B` measured on the trajectories.
pub fn beta_plus(trajs: &[Trajectory], k: BoundConstants) -> f64 {
    let (sigma, drive) = trajs
        .iter()
        .map(noise_and_drive_levels)
        .fold((0.0f64, 0.0f64), |(a, b), (s, d)| (a.max(s), b.max(d)));
    k.c_rho * (sigma + drive) / (1.0 - k.rho)
}

/// Checks `max_t ‖h_t‖ ≤ c β₊ √n` and `mean ‖h_t‖² ≤ β₊² n` over an ensemble.
pub fn check_bounded_states(trajs: &[Trajectory], k: BoundConstants, c: f64) -> Result<AssumptionReport> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::InvalidInput("empty trajectory ensemble".into()))?;
    let n = first.sys.output_dim() as f64;
    let len = trajs.iter().map(Trajectory::len).min().unwrap_or(0);
    let beta = if k.rho < 1.0 { beta_plus(trajs, k) } else { f64::INFINITY };
    let mut rep = AssumptionReport::new(Assumption::Boundedness, trajs.len());
    rep.constant("beta_plus", beta);
    let max_norm = trajs
        .iter()
        .flat_map(|t| t.states().iter().map(|h| h.norm()))
        .fold(0.0, f64::max);
    rep.point(CheckPoint::upper("max_norm", max_norm, c * beta * n.sqrt()));
    let mut worst_second = 0.0f64;
    for t in 0..=len {
        let m2 = trajs.iter().map(|tr| tr.state(t).norm_squared()).sum::<f64>() / trajs.len() as f64;
        worst_second = worst_second.max(m2);
    }
    rep.point(CheckPoint::upper("max_mean_sq_norm", worst_second, beta * beta * n));
    if !max_norm.is_finite() {
        rep.pass = false;
    }
    Ok(rep)
}

/// Result of [`check_opc`].
#[derive(Debug, Clone)]
pub struct OpcResult {
    pub alpha: f64,
    pub alpha_se: f64,
    pub beta: f64,
    pub beta_se: f64,
    pub report: AssumptionReport,
}

/// Estimates the one-point convexity and smoothness constants of the
/// auxiliary loss from `probes` points on spheres of radii `r/4, r/2, r`
/// around `θ⋆`, all evaluated on one common Monte Carlo sample of size `m`.
pub fn check_opc(
    sys: &SystemSpec,
    policy: &Policy,
    noise: &NoiseSpec,
    depth: usize,
    radius: f64,
    probes: usize,
    m: usize,
) -> Result<OpcResult> {
    if probes < 1 || !(radius > 0.0) {
        return Err(Error::InvalidInput("check_opc needs probes >= 1 and radius > 0".into()));
    }
    let design = Design::auxiliary(sys, policy, noise, depth, m)?;
    let star = sys.theta_star();
    let radii = [radius / 4.0, radius / 2.0, radius];
    let mut rep = AssumptionReport::new(Assumption::Opc, m);
    let rows: Vec<(f64, f64, f64, f64, f64)> = (0..probes)
        .into_par_iter()
        .map(|i| {
            let r = radii[i % 3];
            let delta = unit_direction(seed::derive(noise.seed ^ 0x0FC, i as u64), star.shape()) * r;
            let theta = &star + &delta;
            let pre = &theta * &design.x;
            let mut fit = pre.map(|v| design.activation.eval(v));
            if let Some(off) = &design.offset {
                fit += off;
            }
            // Per-sample gradients are −w_j x_jᵀ with w = (Y − fit) ⊙ φ′.
            let w = (&design.y - fit).component_mul(&pre.map(|v| design.activation.deriv(v)));
            let mean_grad = -(&w * design.x.transpose()) / m as f64;
            let dir = if mean_grad.norm() > 0.0 {
                &mean_grad / mean_grad.norm()
            } else {
                delta.clone() / r
            };
            let inner = -(&delta * &design.x).component_mul(&w).row_sum();
            let along = -(&dir * &design.x).component_mul(&w).row_sum();
            let (mi, si) = mean_se(inner.as_slice());
            let (_, sa) = mean_se(along.as_slice());
            (r, mi / (r * r), si / (r * r), mean_grad.norm() / r, sa / r)
        })
        .collect();
    let mut alpha = (f64::INFINITY, 0.0);
    let mut beta = (0.0, 0.0);
    for (i, (r, a, ase, b, bse)) in rows.iter().enumerate() {
        if *a < alpha.0 {
            alpha = (*a, *ase);
        }
        if *b > beta.0 {
            beta = (*b, *bse);
        }
        rep.point(CheckPoint::lower(format!("probe={i},r={r}"), *a, 0.0));
    }
    rep.constant("alpha", alpha.0);
    rep.constant("beta", beta.0);
    rep.std_errors.push(("alpha".into(), alpha.1));
    rep.std_errors.push(("beta".into(), beta.1));
    Ok(OpcResult {
        alpha: alpha.0,
        alpha_se: alpha.1,
        beta: beta.0,
        beta_se: beta.1,
        report: rep,
    })
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Result of [`check_gradient_concentration`].
#[derive(Debug, Clone)]
pub struct ConcentrationResult {
    pub n_values: Vec<usize>,
    /// Mean deviation per grid point, rows indexed by probe.
    pub deviations: Vec<Vec<f64>>,
    pub exponent: f64,
    pub report: AssumptionReport,
}

/// Measures `‖∇L̂(θ) − ∇L_D(θ)‖_F` over a grid of trajectory lengths and fits
/// its decay exponent in `N = ⌊(T − L)/L⌋`. The population gradient is exact
/// for state-linear closed loops and a Monte Carlo estimate with `mc_samples`
/// rollouts otherwise.
#[allow(clippy::too_many_arguments)]
pub fn check_gradient_concentration(
    sys: &SystemSpec,
    policy: &Policy,
    noise: &NoiseSpec,
    depth: usize,
    t_grid: &[usize],
    probes: &[DMatrix<f64>],
    reps: usize,
    mc_samples: usize,
) -> Result<ConcentrationResult> {
    if t_grid.len() < 2 || t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("T grid must be ascending with >= 2 points".into()));
    }
    if probes.is_empty() || reps < 1 {
        return Err(Error::InvalidInput("need at least one probe and one rep".into()));
    }
    let population: Vec<DMatrix<f64>> = match probes
        .iter()
        .map(|th| linear_population_gradient(th, sys, policy, noise, depth))
        .collect::<Option<Vec<_>>>()
    {
        Some(p) => p,
        None => {
            let design = Design::auxiliary(sys, policy, &noise.with_seed(noise.seed ^ 0xA0A0), depth, mc_samples)?;
            probes.iter().map(|th| design.gradient(th)).collect::<Result<_>>()?
        }
    };
    let n_values: Vec<usize> = t_grid.iter().map(|&t| sample_count(t, depth)).collect();
    if n_values[0] < 1 {
        return Err(Error::TrajectoryTooShort { min_t: 2 * depth });
    }
    let t_max = *t_grid.last().unwrap();
    // Common random numbers: rep r uses the same stream at every T.
    let per_rep: Vec<Vec<Vec<f64>>> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<Vec<f64>>> {
            let full = simulate(sys, policy, &noise.with_seed(seed::derive(noise.seed, r as u64)), t_max)?;
            t_grid
                .iter()
                .map(|&t| {
                    let tr = Trajectory::from_streams(
                        sys.clone(),
                        policy.clone(),
                        full.noise,
                        full.state(0).clone(),
                        full.excitations()[..t].to_vec(),
                        full.noises()[..t].to_vec(),
                    )?;
                    let d = Design::empirical(&tr, depth)?;
                    probes
                        .iter()
                        .zip(&population)
                        .map(|(th, pg)| Ok((d.gradient(th)? - pg).norm()))
                        .collect()
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut deviations = vec![vec![0.0; t_grid.len()]; probes.len()];
    for rep in &per_rep {
        for (g, per_probe) in rep.iter().enumerate() {
            for (p, v) in per_probe.iter().enumerate() {
                deviations[p][g] += v / reps as f64;
            }
        }
    }
    let mean: Vec<f64> = (0..t_grid.len())
        .map(|g| deviations.iter().map(|d| d[g]).sum::<f64>() / probes.len() as f64)
        .collect();
    let lx: Vec<f64> = n_values.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = mean.iter().map(|v| v.ln()).collect();
    let exponent = fit_slope(&lx, &ly);
    let mut rep = AssumptionReport::new(Assumption::GradConcentration, reps);
    rep.constant("exponent", exponent);
    for (g, &nv) in n_values.iter().enumerate() {
        rep.constants.push((format!("deviation@N={nv}"), mean[g]));
    }
    rep.point(CheckPoint::lower("exponent_lo", exponent, -0.65));
    rep.point(CheckPoint::upper("exponent_hi", exponent, -0.35));
    Ok(ConcentrationResult {
        n_values,
        deviations,
        exponent,
        report: rep,
    })
}

/// Jacobian-norm constants of the truncation bound, measured on a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationConstants {
    pub beta_plus: f64,
    pub sigma: f64,
    /// `B_φ̃ ≥ ‖∇_h φ̃‖`.
    pub b_phi: f64,
    /// `C_φ̃ ≥ ‖∇_θ φ̃_k‖`.
    pub c_phi: f64,
    /// `D_φ̃ ≥ ‖∇_h ∇_θ φ̃_k‖`.
    pub d_phi: f64,
}

/// Largest `|φ″|` over the real line.
fn max_curvature(sys: &SystemSpec) -> f64 {
    match sys.activation() {
        crate::activation::Activation::Softplus => 0.25,
        _ => 0.0,
    }
}

/// Measures `β₊, σ, B_φ̃, C_φ̃, D_φ̃` for the given parameter probes and
/// truncation depths. Regressors are affine in `h`, so maxima over the
/// endpoints bound the segment suprema.
pub fn truncation_constants(
    traj: &Trajectory,
    probes: &[DMatrix<f64>],
    depths: &[usize],
    k: BoundConstants,
) -> Result<TruncationConstants> {
    let sys = &traj.sys;
    let jac = sys.regressor_jacobian(&traj.policy);
    let off = sys.offset_jacobian(&traj.policy);
    let jn = crate::stability::spectral_norm(&jac);
    let on = crate::stability::spectral_norm(&off);
    let mut thetas = probes.to_vec();
    thetas.push(sys.theta_star());
    let b_phi = thetas
        .iter()
        .map(|th| crate::stability::spectral_norm(&(th * &jac)) + on)
        .fold(0.0, f64::max);
    let mut c_phi = 0.0f64;
    for &l in depths {
        let e = Design::empirical(traj, l)?;
        let t = Design::truncated(traj, l)?;
        for d in [&e, &t] {
            c_phi = d.x.column_iter().map(|c| c.norm()).fold(c_phi, f64::max);
        }
    }
    let mut row_j = 0.0f64;
    for th in &thetas {
        for i in 0..th.nrows() {
            row_j = row_j.max((th.row(i) * &jac).norm());
        }
    }
    let d_phi = jn + max_curvature(sys) * c_phi * row_j;
    let (sigma, _) = noise_and_drive_levels(traj);
    Ok(TruncationConstants {
        beta_plus: beta_plus(std::slice::from_ref(traj), k),
        sigma,
        b_phi,
        c_phi,
        d_phi,
    })
}

#[derive(Debug, Clone)]
pub struct TruncationResult {
    pub constants: TruncationConstants,
    pub depths: Vec<usize>,
    /// Mean over probes of the absolute per-sample loss gap at each depth.
    pub abs_gaps: Vec<f64>,
    pub slope: f64,
    pub report: AssumptionReport,
}

/// Checks both truncation inequalities at every `(θ, L)` grid point and fits
/// the decay rate of the absolute per-sample loss gap in `L`.
pub fn check_truncation_gap(
    traj: &Trajectory,
    probes: &[DMatrix<f64>],
    depths: &[usize],
    k: BoundConstants,
) -> Result<TruncationResult> {
    if probes.is_empty() || depths.is_empty() {
        return Err(Error::InvalidInput("need probes and depths".into()));
    }
    let c = truncation_constants(traj, probes, depths, k)?;
    let n = traj.sys.output_dim() as f64;
    let star = traj.sys.theta_star();
    let mut rep = AssumptionReport::new(Assumption::TruncationGap, traj.len());
    for (name, v) in [
        ("beta_plus", c.beta_plus),
        ("sigma", c.sigma),
        ("b_phi", c.b_phi),
        ("c_phi", c.c_phi),
        ("d_phi", c.d_phi),
    ] {
        rep.constant(name, v);
    }
    let mut abs_gaps = Vec::with_capacity(depths.len());
    for &l in depths {
        let e = Design::empirical(traj, l)?;
        let t = Design::truncated(traj, l)?;
        let decay = 2.0 * n * c.beta_plus * k.c_rho * k.rho.powi(l as i32 - 1);
        let mut acc = 0.0;
        for (i, th) in probes.iter().enumerate() {
            let dist = (th - &star).norm();
            let lg = (e.loss(th)? - t.loss(th)?).abs();
            let gg = (e.gradient(th)? - t.gradient(th)?).norm();
            let scale = c.sigma + c.c_phi * dist;
            rep.point(CheckPoint::upper(format!("loss,L={l},probe={i}"), lg, decay * c.b_phi * scale));
            rep.point(CheckPoint::upper(format!("grad,L={l},probe={i}"), gg, decay * c.d_phi * scale));
            let se = e.sample_losses(th)?;
            let st = t.sample_losses(th)?;
            acc += se.iter().zip(&st).map(|(a, b)| (a - b).abs()).sum::<f64>() / se.len() as f64;
        }
        abs_gaps.push(acc / probes.len() as f64);
    }
    let usable: Vec<(f64, f64)> = depths
        .iter()
        .zip(&abs_gaps)
        .filter(|(_, g)| **g > 0.0)
        .map(|(&l, &g)| (l as f64, g.ln()))
        .collect();
    let slope = if usable.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = usable.into_iter().unzip();
        fit_slope(&x, &y)
    } else {
        f64::NEG_INFINITY
    };
    rep.constant("log_gap_slope", slope);
    rep.constant("log_rho", k.rho.ln());
    Ok(TruncationResult {
        constants: c,
        depths: depths.to_vec(),
        abs_gaps,
        slope,
        report: rep,
    })
}

#[derive(Debug, Clone)]
pub struct CovarianceResult {
    pub sample: DMatrix<f64>,
    pub exact: DMatrix<f64>,
    pub relative_error: f64,
    pub report: AssumptionReport,
}

/// Sample covariance of `h_t` over `reps` rollouts against the exact Gramian.
pub fn check_covariance_sandwich(
    sys: &SystemSpec,
    policy: &Policy,
    noise: &NoiseSpec,
    t: usize,
    reps: usize,
    rel_tol: f64,
) -> Result<CovarianceResult> {
    let exact = state_covariance(sys, policy, noise, t)
        .ok_or_else(|| Error::InvalidInput("covariance check needs a state-linear closed loop".into()))?;
    if reps < 2 {
        return Err(Error::InvalidInput("need at least two rollouts".into()));
    }
    let states: Vec<DVector<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            simulate(sys, policy, &noise.with_seed(seed::derive(noise.seed, r as u64)), t)
                .map(|tr| tr.state(t).clone())
        })
        .collect::<Result<_>>()?;
    let m = sys.state_dim();
    let mean = states.iter().fold(DVector::zeros(m), |a, h| a + h) / reps as f64;
    let mut sample = DMatrix::zeros(m, m);
    for h in &states {
        let c = h - &mean;
        sample += &c * c.transpose();
    }
    sample /= (reps - 1) as f64;
    let top = crate::stability::spectral_norm(&exact);
    let relative_error = crate::stability::spectral_norm(&(&sample - &exact)) / top;
    let eig_exact = exact.clone().symmetric_eigenvalues();
    let eig_sample = sample.clone().symmetric_eigenvalues();
    let tol = rel_tol * top;
    let mut rep = AssumptionReport::new(Assumption::CovarianceSandwich, reps);
    rep.constant("relative_error", relative_error);
    rep.point(CheckPoint::upper("relative_error", relative_error, rel_tol));
    rep.point(CheckPoint::lower("lambda_min", eig_sample.min(), eig_exact.min() - tol));
    rep.point(CheckPoint::upper("lambda_max", eig_sample.max(), eig_exact.max() + tol));
    Ok(CovarianceResult {
        sample,
        exact,
        relative_error,
        report: rep,
    })
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    (d, kolmogorov_q(lambda))
}

/// `Q_KS(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Compares the first coordinate of truncated sub-sampled states at two
/// `(offset, index)` positions across `seeds` independent trajectories.
pub fn check_subsample_identity(
    sys: &SystemSpec,
    policy: &Policy,
    noise: &NoiseSpec,
    period: usize,
    len: usize,
    seeds: usize,
    level: f64,
) -> Result<AssumptionReport> {
    let pairs: Vec<(f64, f64)> = (0..seeds)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64)> {
            let tr = simulate(sys, policy, &noise.with_seed(seed::derive(noise.seed, r as u64)), len)?;
            let first = tr.subsample(period, 0)?;
            let last = tr.subsample(period, period - 1)?;
            Ok((first.states[0][0], last.states[last.len() - 1][0]))
        })
        .collect::<Result<_>>()?;
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (d, p) = ks_two_sample(&a, &b);
    let mut rep = AssumptionReport::new(Assumption::SubsampleIdentity, seeds);
    rep.constant("ks_statistic", d);
    rep.point(CheckPoint::lower("ks_p_value", p, level));
    Ok(rep)
}

/// Empirical tail `P(|g| > t)` on a grid of thresholds together with the
/// best exponential-tail rate; a diagnostic, not a pass/fail test.
#[derive(Debug, Clone)]
pub struct TailDiagnostic {
    pub thresholds: Vec<f64>,
    pub tail: Vec<f64>,
    /// Fitted `c` in `P(|g| > t) ≈ e^{−c t}`.
    pub rate: f64,
}

pub fn tail_diagnostic(values: &[f64], points: usize) -> TailDiagnostic {
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len();
    let top = abs.last().copied().unwrap_or(0.0);
    let thresholds: Vec<f64> = (1..=points).map(|i| top * i as f64 / (points + 1) as f64).collect();
    let tail: Vec<f64> = thresholds
        .iter()
        .map(|&t| abs.iter().filter(|&&v| v > t).count() as f64 / n.max(1) as f64)
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = thresholds
        .iter()
        .zip(&tail)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&t, &p)| (t, p.ln()))
        .unzip();
    let rate = if x.len() >= 2 { -fit_slope(&x, &y) } else { f64::NAN };
    TailDiagnostic { thresholds, tail, rate }
}

/// `max ‖∇f(θ) − ∇f(θ′)‖/‖θ − θ′‖` over random pairs in the ball `B(center, radius)`.
pub fn lipschitz_gradient<F>(
    grad: F,
    center: &DMatrix<f64>,
    radius: f64,
    pairs: usize,
    seed_: u64,
) -> Result<AssumptionReport>
where
    F: Fn(&DMatrix<f64>) -> Result<DMatrix<f64>> + Sync,
{
    let ratios: Vec<f64> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let s = seed::derive(seed_, i as u64);
            let a = center + unit_direction(s, center.shape()) * radius;
            let b = center + unit_direction(s ^ 1, center.shape()) * (radius / 2.0);
            Ok((grad(&a)? - grad(&b)?).norm() / (a - b).norm())
        })
        .collect::<Result<_>>()?;
    let mut rep = AssumptionReport::new(Assumption::LipschitzGrad, pairs);
    rep.constant("lipschitz", ratios.iter().copied().fold(0.0, f64::max));
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::stability::{covariance_bounds, estimate_stability};
    use crate::system::NonlinearForm;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rand_mat(s: u64, r: usize, c: usize, std: f64) -> DMatrix<f64> {
        seed::normal_matrix(&mut seed::stream(s, 31), r, c, std)
    }

    #[test]
    fn finite_differences_of_a_quadratic() {
        let mut th = DMatrix::zeros(2, 2);
        th[(0, 0)] = 1.0;
        let g = finite_diff_gradient(|t| Ok(0.5 * t.norm_squared()), &th, 1e-4).unwrap();
        assert!((g - &th).amax() <= 1e-10);
        assert!(finite_diff_gradient(|_| Ok(0.0), &th, 0.0).is_err());
    }

    #[test]
    fn richardson_consistency_of_the_oracle() {
        let sys = SystemSpec::entrywise(
            rand_mat(1, 3, 3, 0.3),
            rand_mat(2, 3, 2, 0.5),
            Activation::Softplus,
            NonlinearForm::PreMix,
        )
        .unwrap();
        let tr = simulate(&sys, &Policy::Zero, &NoiseSpec::new(0.1, 3), 100).unwrap();
        let d = Design::empirical(&tr, 2).unwrap();
        let th = rand_mat(4, 3, 5, 0.5);
        let f = |t: &DMatrix<f64>| d.loss(t);
        let g1 = finite_diff_gradient(f, &th, 1e-4).unwrap();
        let g2 = finite_diff_gradient(f, &th, 5e-5).unwrap();
        let exact = d.gradient(&th).unwrap();
        let e1 = (&g1 - &exact).norm();
        let e2 = (&g2 - &exact).norm();
        assert!(e2 < e1 && e2 / exact.norm() <= 1e-6);
    }

    #[test]
    fn opc_brackets_gramian_constants() {
        let sys = SystemSpec::linear(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let noise = NoiseSpec::new(1.0, 7);
        let res = check_opc(&sys, &Policy::Zero, &noise, 2, 1.0, 6, 20_000).unwrap();
        let cb = covariance_bounds(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), 1.0, 2, 2).unwrap();
        assert_eq!((cb.gamma_minus, cb.gamma_plus), (1.0, 2.0));
        assert!(res.alpha >= cb.gamma_minus - 3.0 * res.alpha_se - 0.02);
        assert!(res.beta <= cb.gamma_plus + 3.0 * res.beta_se + 0.02);
        assert!(res.report.pass);
    }

    #[test]
    fn opc_for_gamma_increasing_activation() {
        let gamma = 0.5;
        let sys = SystemSpec::entrywise(
            rand_mat(5, 3, 3, 0.3),
            DMatrix::identity(3, 3),
            Activation::LeakyRelu(gamma),
            NonlinearForm::PostAdd,
        )
        .unwrap();
        let noise = NoiseSpec::new(0.0, 9);
        let depth = 3;
        let res = check_opc(&sys, &Policy::Zero, &noise, depth, 1.0, 6, 10_000).unwrap();
        let d = Design::auxiliary(&sys, &Policy::Zero, &noise, depth, 10_000).unwrap();
        let second = &d.x * d.x.transpose() / d.len() as f64;
        let lmin = second.symmetric_eigenvalues().min();
        assert!(res.alpha >= gamma * gamma * lmin - 3.0 * res.alpha_se);
    }

    #[test]
    fn opc_is_finite_at_tiny_radius() {
        let sys = SystemSpec::linear(DMatrix::identity(2, 2) * 0.5, DMatrix::identity(2, 1)).unwrap();
        let res = check_opc(&sys, &Policy::Zero, &NoiseSpec::new(0.2, 1), 3, 4e-3, 3, 500).unwrap();
        assert!(res.alpha.is_finite() && res.beta.is_finite());
    }

    #[test]
    fn concentration_is_zero_without_noise_at_the_truth() {
        let sys = SystemSpec::linear(DMatrix::identity(2, 2) * 0.5, DMatrix::zeros(2, 1)).unwrap();
        let noise = NoiseSpec {
            excitation_std: 1.0,
            process_std: 0.0,
            seed: 1,
        };
        let res = check_gradient_concentration(
            &sys,
            &Policy::Zero,
            &noise,
            5,
            &[60, 120],
            &[sys.theta_star()],
            2,
            10,
        )
        .unwrap();
        assert!(res.deviations[0].iter().all(|&d| d <= 1e-12));
    }

    #[test]
    fn concentration_rate_and_distance_effect() {
        let n = 4;
        let sys = SystemSpec::linear(rand_mat(3, n, n, 0.2), rand_mat(4, n, 2, 0.7)).unwrap();
        let noise = NoiseSpec::new(0.1, 3);
        let depth = 10;
        let star = sys.theta_star();
        let far = &star + unit_direction(5, star.shape());
        let grid: Vec<usize> = [125, 500, 2000].iter().map(|&nn| depth * (nn + 1)).collect();
        let res = check_gradient_concentration(&sys, &Policy::Zero, &noise, depth, &grid, &[star, far], 12, 0)
            .unwrap();
        assert!((res.exponent + 0.5).abs() <= 0.15, "{}", res.exponent);
        for g in 0..grid.len() {
            assert!(res.deviations[1][g] > res.deviations[0][g]);
        }
    }

    #[test]
    fn truncation_bound_holds_and_gap_decays_at_rho() {
        let a = 0.6;
        let n = 3;
        let sys = SystemSpec::linear(DMatrix::identity(n, n) * a, rand_mat(6, n, 2, 0.7)).unwrap();
        let noise = NoiseSpec::new(0.3, 4);
        let est = estimate_stability(&sys, &Policy::Zero, &noise, 4, 60, 1.0).unwrap();
        let tr = simulate(&sys, &Policy::Zero, &noise, 600).unwrap();
        let star = sys.theta_star();
        let probes: Vec<_> = (0..3).map(|i| &star + unit_direction(40 + i, star.shape()) * 0.5).collect();
        let depths: Vec<usize> = (2..=12).collect();
        let res = check_truncation_gap(&tr, &probes, &depths, (&est).into()).unwrap();
        assert!(res.report.pass);
        assert!((res.slope - est.rho.ln()).abs() <= 0.1, "{} vs {}", res.slope, est.rho.ln());
    }

    #[test]
    fn truncation_gap_vanishes_at_full_depth() {
        let sys = SystemSpec::linear(DMatrix::identity(2, 2) * 0.5, DMatrix::identity(2, 1)).unwrap();
        let mut zs = vec![DVector::from_element(1, 0.7); 6];
        let mut ws = vec![DVector::from_element(2, 0.1); 6];
        zs[0].fill(0.0);
        ws[0].fill(0.0);
        let tr = Trajectory::from_streams(sys.clone(), Policy::Zero, NoiseSpec::new(0.1, 0), DVector::zeros(2), zs, ws)
            .unwrap();
        let th = rand_mat(1, 2, 3, 1.0);
        let res = check_truncation_gap(&tr, &[th], &[5], BoundConstants { c_rho: 1.0, rho: 0.5 }).unwrap();
        assert_eq!(res.abs_gaps[0], 0.0);
    }

    #[test]
    fn bounded_states_examples() {
        let sys = SystemSpec::linear(DMatrix::identity(3, 3) * 0.5, DMatrix::identity(3, 3)).unwrap();
        let silent = NoiseSpec {
            excitation_std: 0.0,
            process_std: 0.0,
            seed: 0,
        };
        let trajs: Vec<_> = (0..5).map(|s| simulate(&sys, &Policy::Zero, &silent.with_seed(s), 20).unwrap()).collect();
        let k = BoundConstants { c_rho: 1.0, rho: 0.5 };
        let rep = check_bounded_states(&trajs, k, 1.0).unwrap();
        assert!(rep.pass);

        let noise = NoiseSpec::new(1.0, 2);
        let trajs: Vec<_> = (0..100)
            .map(|s| simulate(&sys, &Policy::Zero, &noise.with_seed(s), 60).unwrap())
            .collect();
        let rep = check_bounded_states(&trajs, k, 1.0).unwrap();
        assert!(rep.pass);
        let stationary = 3.0 * 2.0 / 0.75;
        assert!(stationary <= rep.get("beta_plus").unwrap().powi(2) * 3.0);

        let unstable = SystemSpec::entrywise(
            DMatrix::identity(3, 3) * 1.3,
            DMatrix::identity(3, 3),
            Activation::LeakyRelu(1.0),
            NonlinearForm::PreMix,
        )
        .unwrap();
        let trajs: Vec<_> = (0..100)
            .map(|s| simulate(&unstable, &Policy::Zero, &noise.with_seed(s), 60).unwrap())
            .collect();
        assert!(!check_bounded_states(&trajs, BoundConstants { c_rho: 1.0, rho: 0.9 }, 1.0).unwrap().pass);
    }

    #[test]
    fn covariance_sandwich_small() {
        let sys = SystemSpec::linear(rand_mat(8, 3, 3, 0.3), rand_mat(9, 3, 2, 1.0)).unwrap();
        let res = check_covariance_sandwich(&sys, &Policy::Zero, &NoiseSpec::new(0.5, 3), 8, 20_000, 0.05).unwrap();
        assert!(res.report.pass, "{}", res.relative_error);
    }

    #[test]
    fn ks_statistic_and_p_value() {
        let (d, p) = ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert_eq!(d, 0.0);
        assert_eq!(p, 1.0);
        let a: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..500).map(|i| i as f64 + 250.0).collect();
        let (d, p) = ks_two_sample(&a, &b);
        assert_relative_eq!(d, 0.5, epsilon = 1e-12);
        assert!(p < 1e-10);
        // Q(1.36) ≈ 0.049.
        assert!((kolmogorov_q(1.36) - 0.0494).abs() < 1e-3);
    }

    #[test]
    fn subsampled_states_are_identically_distributed() {
        let sys = SystemSpec::entrywise(
            rand_mat(2, 2, 2, 0.4),
            DMatrix::identity(2, 2),
            Activation::Softplus,
            NonlinearForm::PreMix,
        )
        .unwrap();
        let rep = check_subsample_identity(&sys, &Policy::Zero, &NoiseSpec::new(0.2, 8), 5, 40, 2000, 0.01).unwrap();
        assert!(rep.pass);
    }

    #[test]
    fn lipschitz_of_a_linear_map() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let rep = lipschitz_gradient(|t| Ok(&m * t), &DMatrix::zeros(2, 1), 1.0, 50, 1).unwrap();
        let l = rep.get("lipschitz").unwrap();
        assert!(l <= 3.0 + 1e-12 && l >= 1.0);
    }

    #[test]
    fn tail_of_exponential_samples() {
        let mut rng = seed::stream(1, 0);
        use rand::Rng;
        let v: Vec<f64> = (0..20_000).map(|_| -(1.0 - rng.random::<f64>()).ln() / 2.0).collect();
        let diag = tail_diagnostic(&v, 10);
        assert!((diag.rate - 2.0).abs() < 0.5, "{}", diag.rate);
    }

    #[test]
    fn report_rows_render() {
        let mut rep = AssumptionReport::new(Assumption::Opc, 10);
        rep.point(CheckPoint::lower("p", 1.0, 0.5));
        rep.constant("alpha", 1.0);
        let mut t = Table::new(&report_columns());
        rep.write_rows(&mut t, 42);
        assert_eq!(t.len(), 2);
        assert!(t.render().starts_with("assumption,point,measured,bound,ratio,pass,seed\nopc,p,"));
    }

    proptest! {
        #[test]
        fn reports_are_reproducible(s in 0u64..20) {
            let sys = SystemSpec::linear(DMatrix::identity(2, 2) * 0.5, DMatrix::identity(2, 1)).unwrap();
            let noise = NoiseSpec::new(0.3, s);
            let a = check_opc(&sys, &Policy::Zero, &noise, 3, 1.0, 3, 200).unwrap();
            let b = check_opc(&sys, &Policy::Zero, &noise, 3, 1.0, 3, 200).unwrap();
            prop_assert_eq!(a.report, b.report);
        }
    }
}
