//! Spectral quantities, `(C_ρ, ρ)` stability fits, controllability Gramians
//! and the Riccati-based stabilizing policy.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::activation::Activation;
use crate::error::{ensure_dim, Error, Result};
use crate::seed;
use crate::system::{NoiseSpec, Policy, SystemSpec};
use crate::trajectory::draw_streams;

fn ensure_square(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// Eigenvalue moduli, largest first.
pub fn eigen_moduli(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    ensure_square(m, "matrix")?;
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, 100_000)
        .ok_or_else(|| Error::InvalidInput("Schur decomposition did not converge".into()))?;
    let mut out: Vec<f64> = schur.complex_eigenvalues().iter().map(|c| c.norm()).collect();
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigen_moduli(m)?.first().copied().unwrap_or(0.0))
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

fn symmetric_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    (eig.min(), eig.max())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityEstimate {
    pub c_rho: f64,
    pub rho: f64,
    /// Largest log-domain slack `log(C_ρ ρ^t) − log e_t` over the fitted envelope.
    pub fit_residual: f64,
    pub horizon: usize,
    pub trials: usize,
}

impl StabilityEstimate {
    /// `C_ρ ρ^t`.
    pub fn envelope(&self, t: usize) -> f64 {
        self.c_rho * self.rho.powi(t as i32)
    }
}

/// Values of the decay envelope below this are treated as numerically zero.
const ENVELOPE_FLOOR: f64 = 1e-9;
const RHO_FLOOR: f64 = 1e-6;

/// Ratios `‖h_t(α) − h_t(0)‖ / ‖α‖`, `t = 0..=horizon`, for one paired rollout.
pub fn paired_decay(
    sys: &SystemSpec,
    policy: &Policy,
    noise: &NoiseSpec,
    horizon: usize,
    alpha: &DVector<f64>,
) -> Vec<f64> {
    let (zs, ws) = draw_streams(sys, noise, horizon);
    let theta = sys.theta_star();
    let scale = alpha.norm();
    let mut ha = alpha.clone();
    let mut h0 = DVector::zeros(sys.state_dim());
    let mut out = Vec::with_capacity(horizon + 1);
    out.push((&ha - &h0).norm() / scale);
    for (z, w) in zs.iter().zip(&ws) {
        let next = |h: &DVector<f64>| {
            let reg = sys.regressor(policy, h, z);
            sys.lift(sys.predict(&theta, &reg) + w, h)
        };
        ha = next(&ha);
        h0 = next(&h0);
        out.push((&ha - &h0).norm() / scale);
    }
    out
}

/// Fits the tightest `(C_ρ, ρ)` envelope over a decay profile `e_t` (`e_0 = 1`).
pub fn fit_envelope(envelope: &[f64], trials: usize) -> Result<StabilityEstimate> {
    let horizon = envelope.len().saturating_sub(1);
    let last = envelope
        .iter()
        .rposition(|&e| e >= ENVELOPE_FLOOR)
        .unwrap_or(0);
    let s = last / 4;
    let mut rho: f64 = RHO_FLOOR;
    if envelope[s] >= ENVELOPE_FLOOR {
        for t in s + 1..=last {
            if envelope[t] >= ENVELOPE_FLOOR {
                rho = rho.max((envelope[t] / envelope[s]).powf(1.0 / (t - s) as f64));
            }
        }
    }
    // Guard the asymptotic rate against rounding in the root.
    rho *= 1.0 + 1e-12;
    if rho >= 1.0 || !rho.is_finite() {
        return Err(Error::UnstableSystem { growth: rho });
    }
    let mut c_rho: f64 = 1.0;
    for (t, &e) in envelope.iter().enumerate().take(last + 1) {
        c_rho = c_rho.max(e / rho.powi(t as i32));
    }
    let mut residual: f64 = 0.0;
    for (t, &e) in envelope.iter().enumerate().take(last + 1) {
        if e >= ENVELOPE_FLOOR {
            residual = residual.max((c_rho * rho.powi(t as i32) / e).ln());
        }
    }
    Ok(StabilityEstimate {
        c_rho,
        rho,
        fit_residual: residual,
        horizon,
        trials,
    })
}

/// `‖M^t‖`, `t = 0..=horizon`.
pub fn power_norms(m: &DMatrix<f64>, horizon: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(horizon + 1);
    let mut pow = DMatrix::identity(m.nrows(), m.ncols());
    out.push(1.0);
    for _ in 0..horizon {
        pow = m * pow;
        out.push(spectral_norm(&pow));
    }
    out
}

/// Fits `(C_ρ, ρ)` from `trials` paired rollouts of length `horizon` started at
/// `‖α‖ = alpha_scale` and `0`. When the closed loop is linear in the state the
/// exact worst case `‖A_cl^t‖` is folded into the envelope.
pub fn estimate_stability(
    sys: &SystemSpec,
    policy: &Policy,
    noise: &NoiseSpec,
    trials: usize,
    horizon: usize,
    alpha_scale: f64,
) -> Result<StabilityEstimate> {
    if trials < 1 {
        return Err(Error::InvalidInput("trials must be >= 1".into()));
    }
    if horizon < 2 {
        return Err(Error::InvalidInput("horizon must be >= 2".into()));
    }
    if !(alpha_scale > 0.0 && alpha_scale.is_finite()) {
        return Err(Error::InvalidInput("alpha_scale must be positive".into()));
    }
    sys.validate_policy(policy)?;
    let profiles: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let s = seed::derive(noise.seed, i as u64);
            let alpha = seed::unit_vector(&mut seed::stream(s, seed::STREAM_AUX), sys.state_dim())
                * alpha_scale;
            paired_decay(sys, policy, &noise.with_seed(s), horizon, &alpha)
        })
        .collect();
    let mut envelope = vec![0.0f64; horizon + 1];
    for prof in &profiles {
        for (e, &v) in envelope.iter_mut().zip(prof) {
            *e = e.max(v);
        }
    }
    if let Some(acl) = sys.closed_loop_matrix(policy) {
        for (e, v) in envelope.iter_mut().zip(power_norms(&acl, horizon)) {
            *e = e.max(v);
        }
    }
    if envelope.iter().any(|v| !v.is_finite()) {
        return Err(Error::UnstableSystem { growth: f64::INFINITY });
    }
    fit_envelope(&envelope, trials)
}

/// `G_tG_tᵀ`, `F_tF_tᵀ` and `Γ_t = G_tG_tᵀ + σ²F_tF_tᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gramians {
    pub input: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub total: DMatrix<f64>,
}

fn check_pair(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    ensure_square(a, "A")?;
    ensure_dim("B rows", a.nrows(), b.nrows())
}

pub fn gramians(a: &DMatrix<f64>, b: &DMatrix<f64>, sigma: f64, t: usize) -> Result<Gramians> {
    check_pair(a, b)?;
    if t < 1 {
        return Err(Error::InvalidInput("Gramian horizon must be >= 1".into()));
    }
    let n = a.nrows();
    let bbt = b * b.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut g = DMatrix::zeros(n, n);
    let mut f = DMatrix::zeros(n, n);
    for _ in 0..t {
        g = a * g * a.transpose() + &bbt;
        f = a * f * a.transpose() + &eye;
    }
    let total = &g + &f * (sigma * sigma);
    Ok(Gramians {
        input: g,
        noise: f,
        total,
    })
}

/// `(γ₋, γ₊, β₊, κ)` for a linear closed loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceBounds {
    pub gamma_minus: f64,
    pub gamma_plus: f64,
    pub beta_plus: f64,
    pub kappa: f64,
}

pub fn covariance_bounds(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: f64,
    mixing: usize,
    len: usize,
) -> Result<CovarianceBounds> {
    check_pair(a, b)?;
    if mixing < 2 {
        return Err(Error::InvalidInput("L must be >= 2".into()));
    }
    if mixing - 1 > len {
        return Err(Error::InvalidInput(format!("L - 1 = {} exceeds T = {len}", mixing - 1)));
    }
    let n = a.nrows();
    let step = b * b.transpose() + DMatrix::<f64>::identity(n, n) * (sigma * sigma);
    let mut gamma = DMatrix::zeros(n, n);
    let mut at_l = None;
    // Γ_t is Loewner-increasing in t, so λ_max(Γ_T) is the maximum over t ≤ T.
    for t in 1..=len {
        let next = a * &gamma * a.transpose() + &step;
        let settled = (&next - &gamma).norm() <= 1e-15 * next.norm();
        gamma = next;
        if t == mixing - 1 {
            at_l = Some(gamma.clone());
        }
        if settled && at_l.is_some() {
            break;
        }
    }
    let at_l = at_l.unwrap_or_else(|| gamma.clone());
    let (lo, hi) = symmetric_extremes(&at_l);
    let (_, top) = symmetric_extremes(&gamma);
    let gamma_minus = lo.min(1.0);
    let gamma_plus = hi.max(1.0);
    Ok(CovarianceBounds {
        gamma_minus,
        gamma_plus,
        beta_plus: top.max(1.0),
        kappa: gamma_plus / gamma_minus,
    })
}

/// Best found value of `sup_{‖x‖=1} ‖φ(Ax)‖` by multi-start normalized
/// gradient ascent. `‖φ(y)‖²` is convex for every supported activation, so each
/// step `x ← ∇/‖∇‖` is non-decreasing.
pub fn nonlinear_operator_norm(
    a: &DMatrix<f64>,
    activation: Activation,
    samples: usize,
    seed_: u64,
) -> f64 {
    let top = spectral_norm(a);
    if activation.is_identity() || a.is_empty() {
        return top;
    }
    let n = a.ncols();
    let mut starts = Vec::with_capacity(samples + 2);
    let svd = a.clone().svd(false, true);
    if let Some(vt) = svd.v_t.as_ref() {
        let i = svd.singular_values.imax();
        let v = vt.row(i).transpose();
        starts.push(-&v);
        starts.push(v);
    }
    let mut rng = seed::stream(seed_, seed::STREAM_AUX);
    for _ in 0..samples {
        starts.push(seed::unit_vector(&mut rng, n));
    }
    let value = |x: &DVector<f64>| activation.eval_vec(&(a * x)).norm();
    starts
        .into_par_iter()
        .map(|mut x| {
            let mut best = value(&x);
            for _ in 0..2000 {
                let y = a * &x;
                let g = a.tr_mul(&activation.eval_vec(&y).component_mul(&activation.deriv_vec(&y)));
                let gn = g.norm();
                if gn == 0.0 {
                    break;
                }
                let cand = g / gn;
                let v = value(&cand);
                x = cand;
                if v <= best * (1.0 + 1e-12) {
                    best = best.max(v);
                    break;
                }
                best = v;
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

/// Riccati solution and the unperturbed LQR gain for `Q = R = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub iterations: usize,
}

/// Where the random perturbation of the Riccati-based policy is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbTarget {
    Gain,
    Riccati,
}

fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let m = b.ncols();
    let btp = b.transpose() * p;
    let lhs = DMatrix::<f64>::identity(m, m) + &btp * b;
    lhs.lu().solve(&(btp * a))
}

/// Solves `P = AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q` by fixed-point iteration from `P₀ = Q`.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DareSolution> {
    check_pair(a, b)?;
    let n = a.nrows();
    let q = DMatrix::<f64>::identity(n, n);
    let mut p = q.clone();
    for it in 1..=100_000 {
        let k = lqr_gain(a, b, &p)
            .ok_or_else(|| Error::NotStabilizable("singular Riccati gain system".into()))?;
        let atp = a.transpose() * &p;
        let mut next = &atp * a - &atp * b * &k + &q;
        next = (&next + next.transpose()) * 0.5;
        if next.iter().any(|v| !v.is_finite()) || next.norm() > 1e150 {
            return Err(Error::NotStabilizable("Riccati iteration diverged".into()));
        }
        let delta = (&next - &p).norm();
        p = next;
        if delta <= 1e-10 || delta <= 1e-14 * p.norm() {
            let gain = lqr_gain(a, b, &p)
                .ok_or_else(|| Error::NotStabilizable("singular Riccati gain system".into()))?;
            return Ok(DareSolution {
                p,
                gain,
                iterations: it,
            });
        }
    }
    Err(Error::NotStabilizable("Riccati iteration did not converge".into()))
}

/// Noisy stabilizing gain: the LQR gain (or Riccati solution) plus i.i.d.
/// `N(0, noise_var)` entries, redrawn up to 20 times until `ρ(A − BK) < 1`.
pub fn dare_policy(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    noise_var: f64,
    seed_: u64,
    target: PerturbTarget,
) -> Result<DMatrix<f64>> {
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::InvalidInput("DARE noise variance must be >= 0".into()));
    }
    let sol = solve_dare(a, b)?;
    let std = noise_var.sqrt();
    let mut rng = seed::stream(seed_, seed::STREAM_SYSTEM);
    let mut last = f64::NAN;
    for _ in 0..20 {
        let k = match target {
            PerturbTarget::Gain => {
                &sol.gain + seed::normal_matrix(&mut rng, b.ncols(), a.nrows(), std)
            }
            PerturbTarget::Riccati => {
                let p = &sol.p + seed::normal_matrix(&mut rng, a.nrows(), a.nrows(), std);
                match lqr_gain(a, b, &p) {
                    Some(k) => k,
                    None => continue,
                }
            }
        };
        last = spectral_radius(&(a - b * &k))?;
        if last < 1.0 {
            return Ok(k);
        }
    }
    Err(Error::NotStabilizable(format!(
        "no stabilizing perturbation in 20 draws (last closed-loop radius {last})"
    )))
}

/// `N(0, 1)` matrix rescaled so that its `unstable` largest eigenvalue moduli
/// sit at or above `1 + margin`; the `unstable`-th lands at exactly `1 + margin`.
pub fn unstable_matrix<R: Rng>(
    rng: &mut R,
    n: usize,
    unstable: usize,
    margin: f64,
) -> Result<DMatrix<f64>> {
    if unstable < 1 || unstable > n {
        return Err(Error::InvalidInput(format!(
            "unstable eigenvalue count {unstable} must lie in [1, {n}]"
        )));
    }
    let a = seed::normal_matrix(rng, n, n, 1.0);
    let moduli = eigen_moduli(&a)?;
    Ok(a * ((1.0 + margin) / moduli[unstable - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::system::NonlinearForm;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Gelfand's formula by repeated squaring, independent of any eigensolver.
    fn gelfand_radius(m: &DMatrix<f64>) -> f64 {
        let mut log_scale = 0.0;
        let mut pow = m.clone();
        let mut weight = 1.0;
        for _ in 0..60 {
            let nrm = pow.norm();
            if nrm == 0.0 {
                return 0.0;
            }
            log_scale += weight * nrm.ln();
            let unit = pow / nrm;
            pow = &unit * &unit;
            weight *= 0.5;
        }
        (log_scale + weight * pow.norm().ln()).exp()
    }

    fn rand_mat(s: u64, r: usize, c: usize, std: f64) -> DMatrix<f64> {
        seed::normal_matrix(&mut seed::stream(s, 9), r, c, std)
    }

    fn stable_mat(s: u64, n: usize, radius: f64) -> DMatrix<f64> {
        let a = rand_mat(s, n, n, 1.0);
        let r = gelfand_radius(&a);
        a * (radius / r)
    }

    #[test]
    fn spectral_radius_small_cases() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, -0.9]));
        assert_relative_eq!(spectral_radius(&d).unwrap(), 0.9, epsilon = 1e-12);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.1, 1.1, 0.0]);
        assert_relative_eq!(spectral_radius(&rot).unwrap(), 1.1, epsilon = 1e-12);
        assert!(spectral_radius(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn spectral_radius_matches_gelfand_oracle() {
        for s in 0..5 {
            let m = rand_mat(s, 20, 20, 1.0);
            let r = spectral_radius(&m).unwrap();
            assert!((r - gelfand_radius(&m)).abs() <= 1e-8, "seed {s}");
        }
    }

    #[test]
    fn geometric_decay_is_fitted_exactly() {
        let a = 0.6;
        let sys = SystemSpec::linear(DMatrix::identity(3, 3) * a, DMatrix::identity(3, 2)).unwrap();
        let est = estimate_stability(&sys, &Policy::Zero, &NoiseSpec::new(0.1, 1), 4, 40, 1.0).unwrap();
        assert!(est.rho >= a && est.rho <= a + 1e-9, "{}", est.rho);
        assert!(est.c_rho >= 1.0 && est.c_rho <= 1.0 + 1e-9, "{}", est.c_rho);
    }

    #[test]
    fn leaky_one_matches_linear_estimate() {
        let a = stable_mat(3, 4, 0.8);
        let b = rand_mat(4, 4, 2, 1.0);
        let lin = SystemSpec::linear(a.clone(), b.clone()).unwrap();
        let leaky =
            SystemSpec::entrywise(a, b, Activation::LeakyRelu(1.0), NonlinearForm::PreMix).unwrap();
        let noise = NoiseSpec::new(0.2, 5);
        let x = estimate_stability(&lin, &Policy::Zero, &noise, 5, 60, 1.0).unwrap();
        let y = estimate_stability(&leaky, &Policy::Zero, &noise, 5, 60, 1.0).unwrap();
        assert!((x.rho - y.rho).abs() <= 1e-12 && (x.c_rho - y.c_rho).abs() <= 1e-12);
    }

    #[test]
    fn fitted_rate_tracks_the_spectral_radius() {
        for s in 0..20 {
            let a = stable_mat(100 + s, 10, 0.3 + 0.03 * s as f64);
            let sys = SystemSpec::linear(a.clone(), DMatrix::identity(10, 10)).unwrap();
            let est = estimate_stability(&sys, &Policy::Zero, &NoiseSpec::new(0.1, s), 3, 200, 1.0)
                .unwrap();
            assert!(est.rho >= gelfand_radius(&a) - 0.05, "seed {s}");
        }
    }

    #[test]
    fn unstable_loop_is_reported() {
        let sys = SystemSpec::linear(DMatrix::identity(2, 2) * 1.05, DMatrix::identity(2, 2)).unwrap();
        let err = estimate_stability(&sys, &Policy::Zero, &NoiseSpec::new(0.1, 1), 2, 30, 1.0);
        assert!(matches!(err, Err(Error::UnstableSystem { growth }) if growth >= 1.0));
    }

    #[test]
    fn envelope_holds_on_held_out_rollouts() {
        let a = stable_mat(7, 5, 0.85);
        let b = rand_mat(8, 5, 3, 1.0);
        let noise = NoiseSpec::new(0.3, 11);
        let horizon = 60;
        let sys = SystemSpec::linear(a, b).unwrap();
        let est = estimate_stability(&sys, &Policy::Zero, &noise, 5, horizon, 1.0).unwrap();
        let mut rng = seed::stream(999, 0);
        for i in 0..100 {
            let alpha = seed::normal_vector(&mut rng, 5, 3.0);
            let prof = paired_decay(&sys, &Policy::Zero, &noise.with_seed(5000 + i), horizon, &alpha);
            for (t, e) in prof.iter().enumerate() {
                assert!(*e <= est.envelope(t) + 1e-9, "t = {t}");
            }
        }
    }

    #[test]
    fn gramian_closed_forms() {
        let g = gramians(&DMatrix::zeros(3, 3), &DMatrix::identity(3, 3), 0.0, 1).unwrap();
        assert_eq!(g.total, DMatrix::identity(3, 3));
        let g = gramians(&(DMatrix::identity(2, 2) * 0.5), &DMatrix::identity(2, 2), 1.0, 4).unwrap();
        assert_relative_eq!(g.total, DMatrix::identity(2, 2) * 2.65625, epsilon = 1e-14);
        assert!(gramians(&DMatrix::zeros(2, 2), &DMatrix::zeros(3, 1), 0.0, 1).is_err());
    }

    #[test]
    fn gramian_recursion_equals_explicit_sum() {
        for s in 0..10u64 {
            let n = 2 + (s as usize % 7);
            let a = stable_mat(s, n, 0.9);
            let b = rand_mat(s + 50, n, 3, 1.0);
            let sigma = 0.4;
            for t in [1usize, 5, 20] {
                let mut explicit = DMatrix::zeros(n, n);
                let mut ai = DMatrix::<f64>::identity(n, n);
                for _ in 0..t {
                    explicit += &ai * &b * b.transpose() * ai.transpose()
                        + &ai * ai.transpose() * (sigma * sigma);
                    ai = &a * ai;
                }
                let g = gramians(&a, &b, sigma, t).unwrap();
                assert!((g.total - explicit).amax() <= 1e-10);
            }
        }
    }

    #[test]
    fn covariance_bound_examples() {
        let eye = DMatrix::<f64>::identity(3, 3);
        let cb = covariance_bounds(&DMatrix::zeros(3, 3), &eye, 0.0, 2, 10).unwrap();
        assert_eq!((cb.gamma_minus, cb.gamma_plus, cb.beta_plus, cb.kappa), (1.0, 1.0, 1.0, 1.0));
        let cb = covariance_bounds(&(&eye * 0.5), &eye, 0.0, 51, 100).unwrap();
        assert_relative_eq!(cb.gamma_plus, 4.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(cb.kappa, 4.0 / 3.0, epsilon = 1e-10);
        assert_eq!(cb.gamma_minus, 1.0);
        assert!(covariance_bounds(&eye, &eye, 0.0, 1, 10).is_err());
    }

    #[test]
    fn beta_dominates_gamma_on_random_stable_systems() {
        for s in 0..100u64 {
            let n = 3 + (s as usize % 4);
            let a = stable_mat(s, n, 0.95);
            let b = rand_mat(s + 1000, n, 2, 1.0);
            let cb = covariance_bounds(&a, &b, 0.3, 4 + (s as usize % 6), 40).unwrap();
            assert!(cb.beta_plus >= cb.gamma_plus && cb.gamma_plus >= cb.gamma_minus);
        }
    }

    #[test]
    fn operator_norm_reduces_to_spectral_norm() {
        let a = rand_mat(1, 6, 6, 1.0);
        let nrm = spectral_norm(&a);
        assert!((nonlinear_operator_norm(&a, Activation::Identity, 4, 0) - nrm).abs() <= 1e-6);
        assert!((nonlinear_operator_norm(&a, Activation::LeakyRelu(1.0), 4, 0) - nrm).abs() <= 1e-6);
        let relu = nonlinear_operator_norm(&a, Activation::LeakyRelu(0.0), 8, 0);
        assert!(relu <= nrm + 1e-12 && relu >= nrm / 2f64.sqrt() - 1e-12);
    }

    #[test]
    fn operator_norm_beats_random_directions() {
        let a = rand_mat(2, 8, 8, 1.0);
        let act = Activation::LeakyRelu(0.3);
        let est = nonlinear_operator_norm(&a, act, 8, 1);
        let mut rng = seed::stream(77, 0);
        for _ in 0..2000 {
            let x = seed::unit_vector(&mut rng, 8);
            assert!(act.eval_vec(&(&a * x)).norm() <= est + 1e-9);
        }
    }

    #[test]
    fn dare_trivial_and_scalar() {
        let eye = DMatrix::<f64>::identity(3, 3);
        let sol = solve_dare(&DMatrix::zeros(3, 3), &eye).unwrap();
        assert_relative_eq!(sol.p, eye, epsilon = 1e-12);
        assert!(sol.gain.amax() <= 1e-12);
        let one = DMatrix::from_element(1, 1, 1.0);
        let sol = solve_dare(&one, &one).unwrap();
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sol.p[(0, 0)] - golden).abs() <= 1e-8);
        assert!((sol.gain[(0, 0)] - golden / (1.0 + golden)).abs() <= 1e-8);
    }

    #[test]
    fn dare_policies_stabilize_random_systems() {
        for s in 0..30u64 {
            let a = rand_mat(s, 8, 8, 0.5);
            let b = rand_mat(s + 500, 8, 4, 1.0);
            for target in [PerturbTarget::Gain, PerturbTarget::Riccati] {
                let k = dare_policy(&a, &b, 1e-3, s, target).unwrap();
                assert!(spectral_radius(&(&a - &b * k)).unwrap() < 1.0);
            }
        }
    }

    #[test]
    fn unstable_matrix_has_requested_count() {
        let mut rng = seed::stream(4, 0);
        let a = unstable_matrix(&mut rng, 30, 4, 0.02).unwrap();
        let moduli = eigen_moduli(&a).unwrap();
        assert_relative_eq!(moduli[3], 1.02, epsilon = 1e-9);
        assert!(unstable_matrix(&mut rng, 5, 6, 0.02).is_err());
    }

    proptest! {
        #[test]
        fn gramians_are_psd(s in 0u64..200, t in 1usize..15) {
            let a = stable_mat(s, 4, 0.9);
            let b = rand_mat(s + 1, 4, 2, 1.0);
            let g = gramians(&a, &b, 0.5, t).unwrap();
            let (lo, _) = symmetric_extremes(&g.total);
            prop_assert!(lo >= -1e-12);
            prop_assert!((&g.total - g.total.transpose()).amax() <= 1e-12);
        }
    }
}
