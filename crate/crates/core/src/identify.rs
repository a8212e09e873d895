//! Fixed-step gradient descent, sampling-period selection and theory step sizes.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::losses::Design;
use crate::system::SystemSpec;
use crate::trajectory::{sample_count, Trajectory};

/// Anything with a loss and gradient over a matrix parameter.
pub trait Objective {
    fn loss_and_gradient(&self, theta: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)>;
}

impl Objective for Design {
    fn loss_and_gradient(&self, theta: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        Design::loss_and_gradient(self, theta)
    }
}

impl<F> Objective for F
where
    F: Fn(&DMatrix<f64>) -> Result<(f64, DMatrix<f64>)>,
{
    fn loss_and_gradient(&self, theta: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        self(theta)
    }
}

#[derive(Debug, Clone)]
pub struct GdConfig {
    pub step: f64,
    pub max_iter: usize,
    pub init: DMatrix<f64>,
    pub truth: Option<DMatrix<f64>>,
    /// Stop once `‖∇‖_F` falls to this value.
    pub tolerance: f64,
}

impl GdConfig {
    /// `θ₀ = 0` with gradient tolerance `1e-10`.
    pub fn new(step: f64, max_iter: usize, shape: (usize, usize)) -> Self {
        GdConfig {
            step,
            max_iter,
            init: DMatrix::zeros(shape.0, shape.1),
            truth: None,
            tolerance: 1e-10,
        }
    }

    pub fn with_truth(mut self, truth: DMatrix<f64>) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidInput(format!("learning rate must be > 0, got {}", self.step)));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidInput("iteration cap must be >= 1".into()));
        }
        if let Some(t) = &self.truth {
            if t.shape() != self.init.shape() {
                return Err(Error::InvalidInput("ground truth and initialization shapes differ".into()));
            }
        }
        Ok(())
    }
}

/// Trace of a descent run. `losses[τ]` and `errors[τ]` refer to `θ_τ`, for
/// `τ = 0..=iterations`.
#[derive(Debug, Clone)]
pub struct GdReport {
    pub losses: Vec<f64>,
    pub errors: Option<Vec<f64>>,
    pub theta: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn gradient_descent<O: Objective + ?Sized>(objective: &O, cfg: &GdConfig) -> Result<GdReport> {
    gradient_descent_observed(objective, cfg, |_, _, _| {})
}

/// Runs `θ_{τ+1} = θ_τ − η∇L̂(θ_τ)`, calling `observe(τ, θ_τ, loss)` on every iterate.
pub fn gradient_descent_observed<O, F>(objective: &O, cfg: &GdConfig, mut observe: F) -> Result<GdReport>
where
    O: Objective + ?Sized,
    F: FnMut(usize, &DMatrix<f64>, f64),
{
    cfg.validate()?;
    let mut theta = cfg.init.clone();
    let mut losses = Vec::new();
    let mut errors = cfg.truth.as_ref().map(|_| Vec::new());
    let mut loss0 = None;
    let mut last_finite = theta.clone();
    for it in 0..=cfg.max_iter {
        let (loss, grad) = objective.loss_and_gradient(&theta)?;
        let finite = loss.is_finite() && grad.iter().all(|v| v.is_finite());
        let blown = loss0.is_some_and(|l0: f64| loss > 1e20 * (1.0 + l0));
        if !finite || blown || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                last_finite: Box::new(last_finite),
            });
        }
        loss0.get_or_insert(loss);
        last_finite.copy_from(&theta);
        losses.push(loss);
        if let (Some(errs), Some(truth)) = (errors.as_mut(), cfg.truth.as_ref()) {
            errs.push((&theta - truth).norm());
        }
        observe(it, &theta, loss);
        if grad.norm() <= cfg.tolerance {
            return Ok(GdReport {
                losses,
                errors,
                theta,
                iterations: it,
                converged: true,
            });
        }
        if it == cfg.max_iter {
            break;
        }
        theta -= grad * cfg.step;
    }
    Ok(GdReport {
        losses,
        errors,
        theta,
        iterations: cfg.max_iter,
        converged: false,
    })
}

/// Which bound on the sampling period is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixingMode {
    /// `K_φ̃ n √(N/d)`.
    Generic { k_phi: f64, d: usize },
    /// `K_φ̃ n √(N/d̄)` for separable systems.
    Separable { k_phi: f64, dbar: usize },
    /// `β₊ N (n + p) / γ₊` for linear systems.
    Linear { beta_plus: f64, gamma_plus: f64, p: usize },
    /// `(1 + ‖Θ⋆‖_F C_ρ (1 + σ)/(1 − ρ)) N n` for entrywise nonlinear systems.
    Nonlinear { theta_norm: f64, sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingParams {
    /// Absolute constant `C`.
    pub c: f64,
    pub c_rho: f64,
    pub rho: f64,
    pub n: usize,
    /// Trajectory length `T`.
    pub len: usize,
    pub mode: MixingMode,
    /// Use `C·ρ` in place of `C·C_ρ` in the generic and separable forms.
    pub literal_c_rho: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingPlan {
    pub l: usize,
    pub n_samples: usize,
    /// `false` when no exact fixed point exists and the smallest `L` with
    /// `formula(N(L)) ≤ L` is returned instead.
    pub exact: bool,
    pub sweeps: usize,
    pub params: MixingParams,
}

impl MixingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidInput(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.c > 0.0 && self.c_rho >= 1.0) {
            return Err(Error::InvalidInput("need C > 0 and C_rho >= 1".into()));
        }
        Ok(())
    }

    /// Argument of the logarithm for `N` effective samples.
    pub fn argument(&self, n_samples: usize) -> f64 {
        let nn = n_samples as f64;
        let n = self.n as f64;
        let lead = |literal: bool| self.c * if literal { self.rho } else { self.c_rho };
        match self.mode {
            MixingMode::Generic { k_phi, d } => lead(self.literal_c_rho) * k_phi * n * (nn / d as f64).sqrt(),
            MixingMode::Separable { k_phi, dbar } => {
                lead(self.literal_c_rho) * k_phi * n * (nn / dbar as f64).sqrt()
            }
            MixingMode::Linear {
                beta_plus,
                gamma_plus,
                p,
            } => lead(false) * beta_plus * nn * (self.n + p) as f64 / gamma_plus,
            MixingMode::Nonlinear { theta_norm, sigma } => {
                lead(false)
                    * (1.0 + theta_norm * self.c_rho * (1.0 + sigma) / (1.0 - self.rho))
                    * nn
                    * n
            }
        }
    }

    /// `⌈1 + log(argument)/(1 − ρ)⌉`, at least 1.
    pub fn formula(&self, n_samples: usize) -> usize {
        period_for(self.argument(n_samples), self.rho)
    }
}

/// `⌈1 + log(arg)/(1 − ρ)⌉` clamped below at 1; values within `1e-12`
/// (relative) of an integer are not rounded up.
pub fn period_for(argument: f64, rho: f64) -> usize {
    let x = 1.0 + argument.ln() / (1.0 - rho);
    if !(x > 1.0) {
        return 1;
    }
    (x * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Resolves `L = formula(N(L))`, `N(L) = ⌊(T − L)/L⌋`, by fixed-point
/// iteration from `L = 1`.
pub fn mixing_time(params: MixingParams) -> Result<MixingPlan> {
    params.validate()?;
    let too_short = || Error::TrajectoryTooShort {
        min_t: 2 * params.formula(1),
    };
    let g = |l: usize| -> Option<usize> {
        let n = sample_count(params.len, l);
        (n >= 1).then(|| params.formula(n))
    };
    let plan = |l: usize, exact: bool, sweeps: usize| MixingPlan {
        l,
        n_samples: sample_count(params.len, l),
        exact,
        sweeps,
        params,
    };
    let mut l = 1usize;
    let mut prev = None;
    for sweep in 1..=30 {
        let next = match g(l) {
            Some(v) => v,
            None => break,
        };
        if next == l {
            return Ok(plan(l, true, sweep));
        }
        if prev == Some(next) {
            break;
        }
        prev = Some(l);
        l = next;
    }
    // `g` is non-increasing, so `g(L) − L` is strictly decreasing: bisect
    // for the smallest `L` with `g(L) ≤ L`.
    let mut hi = params.len / 2;
    match g(hi) {
        Some(v) if v <= hi => {}
        _ => return Err(too_short()),
    }
    let mut lo = 1usize;
    if g(lo).is_some_and(|v| v <= lo) {
        return Ok(plan(lo, g(lo) == Some(lo), 30));
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        match g(mid) {
            Some(v) if v <= mid => hi = mid,
            _ => lo = mid,
        }
    }
    Ok(plan(hi, g(hi) == Some(hi), 30))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateMode {
    /// `α/(16β²)`.
    Generic { alpha: f64, beta: f64 },
    /// `γ₋/(16γ₊²)`.
    Linear { gamma_minus: f64, gamma_plus: f64 },
    /// `γ²(1−ρ)⁴/(32 C_ρ⁴ (1+σ)² n²)`.
    Nonlinear {
        gamma: f64,
        rho: f64,
        c_rho: f64,
        sigma: f64,
        n: usize,
    },
}

pub fn theory_learning_rate(mode: RateMode) -> Result<f64> {
    let positive = |vals: &[f64]| vals.iter().all(|v| *v > 0.0 && v.is_finite());
    let bad = || Error::InvalidInput(format!("non-positive constant in {mode:?}"));
    match mode {
        RateMode::Generic { alpha, beta } => {
            positive(&[alpha, beta]).then(|| alpha / (16.0 * beta * beta)).ok_or_else(bad)
        }
        RateMode::Linear {
            gamma_minus,
            gamma_plus,
        } => positive(&[gamma_minus, gamma_plus])
            .then(|| gamma_minus / (16.0 * gamma_plus * gamma_plus))
            .ok_or_else(bad),
        RateMode::Nonlinear {
            gamma,
            rho,
            c_rho,
            sigma,
            n,
        } => {
            if !positive(&[gamma, rho, c_rho]) || rho >= 1.0 || !(sigma >= 0.0) || n == 0 {
                return Err(bad());
            }
            Ok(gamma * gamma * (1.0 - rho).powi(4)
                / (32.0 * c_rho.powi(4) * (1.0 + sigma).powi(2) * (n * n) as f64))
        }
    }
}

/// Normalized squared errors `‖A − Â‖_F²/‖A‖_F²` and (when a separate input
/// matrix is learned) `‖B − B̂‖_F²/‖B‖_F²`.
pub fn normalized_errors(sys: &SystemSpec, theta: &DMatrix<f64>) -> (f64, Option<f64>) {
    let truth = sys.theta_star();
    let n = sys.state_dim();
    let ratio = |est: DMatrix<f64>, tru: DMatrix<f64>| {
        let d = tru.norm_squared();
        if d == 0.0 {
            (est - tru).norm_squared()
        } else {
            (est - tru).norm_squared() / d
        }
    };
    if truth.ncols() > n && sys.input_dim() > 0 {
        let cols = truth.ncols() - n;
        (
            ratio(theta.columns(0, n).into_owned(), truth.columns(0, n).into_owned()),
            Some(ratio(theta.columns(n, cols).into_owned(), truth.columns(n, cols).into_owned())),
        )
    } else {
        (ratio(theta.clone(), truth), None)
    }
}

#[derive(Debug, Clone)]
pub struct IdentifyReport {
    pub gd: GdReport,
    pub err_a: Vec<f64>,
    pub err_b: Option<Vec<f64>>,
}

/// Gradient descent on the empirical loss with churn period `churn`, tracking
/// normalized errors against the trajectory's true system.
pub fn identify(traj: &Trajectory, cfg: &GdConfig, churn: usize) -> Result<IdentifyReport> {
    if traj.len() <= churn {
        return Err(Error::TrajectoryTooShort { min_t: churn + 1 });
    }
    let design = Design::empirical(traj, churn)?;
    let mut err_a = Vec::new();
    let mut err_b: Option<Vec<f64>> = None;
    let gd = gradient_descent_observed(&design, cfg, |_, theta, _| {
        let (a, b) = normalized_errors(&traj.sys, theta);
        err_a.push(a);
        if let Some(b) = b {
            err_b.get_or_insert_with(Vec::new).push(b);
        }
    })?;
    Ok(IdentifyReport { gd, err_a, err_b })
}

/// First iterate after which `series` stays within the band set by its last
/// 10%: `|e − mean| ≤ max(2·spread, rel_tol·mean)`. `None` when the tail
/// itself varies by more than `rel_tol` relative to its mean.
pub fn plateau_iteration(series: &[f64], rel_tol: f64) -> Option<usize> {
    if series.len() < 10 {
        return None;
    }
    let tail = &series[series.len() - series.len() / 10..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let spread = hi - lo;
    if spread > rel_tol * mean.abs() {
        return None;
    }
    let band = (2.0 * spread).max(rel_tol * mean.abs());
    let last_out = series.iter().rposition(|v| (v - mean).abs() > band);
    Some(last_out.map_or(0, |i| i + 1))
}

/// Moving average over a trailing window.
pub fn smooth(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            series[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::system::{NoiseSpec, Policy};
    use crate::trajectory::simulate;
    use proptest::prelude::*;

    fn quadratic(target: DMatrix<f64>) -> impl Fn(&DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        move |th| {
            let d = th - &target;
            Ok((0.5 * d.norm_squared(), d))
        }
    }

    #[test]
    fn half_step_halves_the_error() {
        let target = DMatrix::from_row_slice(1, 2, &[1.0, -2.0]);
        let mut cfg = GdConfig::new(0.5, 20, (1, 2)).with_truth(target.clone());
        cfg.tolerance = 0.0;
        let rep = gradient_descent(&quadratic(target), &cfg).unwrap();
        let errs = rep.errors.unwrap();
        assert_eq!(errs.len(), rep.losses.len());
        for w in errs.windows(2) {
            assert_eq!(w[1], w[0] / 2.0);
        }
    }

    #[test]
    fn oversized_step_diverges() {
        let target = DMatrix::from_element(2, 2, 1.0);
        let cfg = GdConfig::new(2.5, 10_000, (2, 2));
        match gradient_descent(&quadratic(target), &cfg) {
            Err(Error::Diverged { last_finite, .. }) => assert!(last_finite.iter().all(|v| v.is_finite())),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn noiseless_linear_system_is_recovered() {
        let n = 4;
        let mut rng = seed::stream(3, 0);
        let a = seed::normal_matrix(&mut rng, n, n, 0.3);
        let b = seed::normal_matrix(&mut rng, n, 2, 1.0);
        let sys = SystemSpec::linear(a, b).unwrap();
        let tr = simulate(&sys, &Policy::Zero, &NoiseSpec::new(0.0, 5), 2000).unwrap();
        let d = Design::empirical(&tr, 1).unwrap();
        let cfg = GdConfig::new(1.0 / d.curvature(), 20_000, sys.param_shape());
        let rep = identify(&tr, &cfg, 1).unwrap();
        assert!(rep.gd.converged);
        assert!(*rep.err_a.last().unwrap() <= 1e-10);
        assert!(*rep.err_b.as_ref().unwrap().last().unwrap() <= 1e-10);
        assert_eq!(rep.err_a.len(), rep.gd.losses.len());
    }

    fn params(arg: f64, rho: f64, len: usize) -> MixingParams {
        // Linear mode with β₊N(n+p)/γ₊ = arg·N.
        MixingParams {
            c: 1.0,
            c_rho: 1.0,
            rho,
            n: 1,
            len,
            mode: MixingMode::Linear {
                beta_plus: arg,
                gamma_plus: 1.0,
                p: 0,
            },
            literal_c_rho: false,
        }
    }

    #[test]
    fn plug_in_periods() {
        assert_eq!(period_for(std::f64::consts::E.powi(2), 0.5), 5);
        assert_eq!(period_for(2.0, 1e-9), 2);
        assert_eq!(period_for(0.5, 0.5), 1);
    }

    #[test]
    fn learning_rate_formulas() {
        assert_eq!(theory_learning_rate(RateMode::Generic { alpha: 1.0, beta: 1.0 }).unwrap(), 1.0 / 16.0);
        assert_eq!(
            theory_learning_rate(RateMode::Linear {
                gamma_minus: 1.0,
                gamma_plus: 2.0
            })
            .unwrap(),
            1.0 / 64.0
        );
        let eta = theory_learning_rate(RateMode::Nonlinear {
            gamma: 1.0,
            rho: 0.5,
            c_rho: 1.0,
            sigma: 0.0,
            n: 2,
        })
        .unwrap();
        assert!((eta - 0.0625 / 128.0).abs() <= 1e-18);
        assert!(theory_learning_rate(RateMode::Generic { alpha: 0.0, beta: 1.0 }).is_err());
    }

    #[test]
    fn mixing_time_is_a_fixed_point() {
        let mut rng = seed::stream(1, 0);
        use rand::Rng;
        for _ in 0..100 {
            let p = MixingParams {
                c: 1.0,
                c_rho: rng.random_range(1.0..5.0),
                rho: rng.random_range(0.05..0.95),
                n: rng.random_range(1..50),
                len: rng.random_range(2000..200_000),
                mode: MixingMode::Separable {
                    k_phi: rng.random_range(0.5..10.0),
                    dbar: rng.random_range(1..100),
                },
                literal_c_rho: false,
            };
            let plan = mixing_time(p).unwrap();
            assert!(plan.sweeps <= 30);
            assert!(plan.n_samples >= 1);
            let again = p.formula(plan.n_samples);
            if plan.exact {
                assert_eq!(again, plan.l);
            } else {
                assert!(again <= plan.l);
            }
        }
    }

    #[test]
    fn too_short_trajectory_reports_minimum() {
        let p = params(1e6, 0.9, 20);
        match mixing_time(p) {
            Err(Error::TrajectoryTooShort { min_t }) => {
                let q = MixingParams { len: min_t, ..p };
                assert!(mixing_time(q).is_ok());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mixing_time_grows_with_slower_mixing() {
        let mut last = 0;
        for i in 1..19 {
            let plan = mixing_time(params(3.0, i as f64 * 0.05, 100_000)).unwrap();
            assert!(plan.l >= last);
            last = plan.l;
        }
    }

    #[test]
    fn plateau_detection() {
        let s: Vec<f64> = (0..200).map(|i| 1.0 + 10.0 * 0.9f64.powi(i)).collect();
        let p = plateau_iteration(&s, 0.05).unwrap();
        assert!(p > 20 && p < 80, "{p}");
        let rising: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert!(plateau_iteration(&rising, 0.05).is_none());
        assert_eq!(smooth(&[1.0, 3.0, 5.0], 2), vec![1.0, 2.0, 4.0]);
    }

    proptest! {
        #[test]
        fn descent_is_deterministic(s in 0u64..100) {
            let target = seed::normal_matrix(&mut seed::stream(s, 0), 2, 3, 1.0);
            let cfg = GdConfig::new(0.3, 50, (2, 3));
            let a = gradient_descent(&quadratic(target.clone()), &cfg).unwrap();
            let b = gradient_descent(&quadratic(target), &cfg).unwrap();
            prop_assert_eq!(a.theta, b.theta);
            prop_assert_eq!(a.losses, b.losses);
        }
    }
}
