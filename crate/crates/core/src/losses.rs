//! Empirical, truncated, sub-trajectory and auxiliary least-squares losses
//! with analytic gradients.
//!
//! Each loss is an average of `½‖y − φ(Θx)‖²` over a set of samples, so all of
//! them are evaluated through a [`Design`]: regressors stacked as columns of
//! `X` and offset-corrected targets as columns of `Y`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::activation::Activation;
use crate::error::{ensure_dim, Error, Result};
use crate::seed;
use crate::system::{NoiseSpec, Policy, SystemSpec};
use crate::trajectory::{draw_streams, roll, SubTrajectory, Trajectory};

/// Regression samples: regressors as columns of `x` (`d̄ × M`), targets as
/// columns of `y` (`n × M`) and parameter-free offsets `offset` (`n × M`, or
/// `None` when identically zero).
#[derive(Debug, Clone)]
pub struct Design {
    pub activation: Activation,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub offset: Option<DMatrix<f64>>,
}

/// Monte Carlo mean with per-component standard errors.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub loss: f64,
    pub loss_se: f64,
    pub gradient: DMatrix<f64>,
    pub gradient_se: DMatrix<f64>,
}

type Column = (DVector<f64>, DVector<f64>, DVector<f64>);

fn head(v: &DVector<f64>, n: usize) -> DVector<f64> {
    v.rows(0, n).into_owned()
}

impl Design {
    fn from_columns(activation: Activation, cols: Vec<Column>, dbar: usize, n: usize) -> Design {
        let m = cols.len();
        let mut x = DMatrix::zeros(dbar, m);
        let mut y = DMatrix::zeros(n, m);
        let mut offset = DMatrix::zeros(n, m);
        for (j, (xc, yc, oc)) in cols.into_iter().enumerate() {
            x.set_column(j, &xc);
            y.set_column(j, &yc);
            offset.set_column(j, &oc);
        }
        let offset = offset.iter().any(|&v| v != 0.0).then_some(offset);
        Design {
            activation,
            x,
            y,
            offset,
        }
    }

    fn sample(
        sys: &SystemSpec,
        policy: &Policy,
        h: &DVector<f64>,
        z: &DVector<f64>,
        next: &DVector<f64>,
    ) -> Column {
        let reg = sys.regressor(policy, h, z);
        (reg.x, head(next, sys.output_dim()), reg.offset)
    }

    /// Samples `(h_t, z_t) → h_{t+1}` for `t = L..T−1`.
    pub fn empirical(traj: &Trajectory, churn: usize) -> Result<Design> {
        check_churn(traj, churn)?;
        let cols = (churn..traj.len())
            .map(|t| {
                Self::sample(
                    &traj.sys,
                    &traj.policy,
                    traj.state(t),
                    traj.excitation(t),
                    traj.state(t + 1),
                )
            })
            .collect();
        Ok(Self::build(traj, cols))
    }

    /// Truncated samples `(h_{t,L−1}, z_t) → h_{t+1,L}` for `t = L..T−1`.
    pub fn truncated(traj: &Trajectory, depth: usize) -> Result<Design> {
        check_churn(traj, depth)?;
        Self::truncated_range(traj, depth, depth..traj.len())
    }

    /// Truncated samples restricted to `t ∈ range`.
    pub fn truncated_range(traj: &Trajectory, depth: usize, range: Range<usize>) -> Result<Design> {
        if depth < 1 {
            return Err(Error::InvalidInput("truncation depth L must be >= 1".into()));
        }
        if range.start < depth || range.end > traj.len() || range.is_empty() {
            return Err(Error::InvalidInput(format!(
                "truncated index range {range:?} must be non-empty within [{depth}, {})",
                traj.len()
            )));
        }
        let sys = &traj.sys;
        let cols = range
            .into_par_iter()
            .map(|t| {
                let start = t + 1 - depth;
                let hbar = roll(
                    sys,
                    &traj.policy,
                    DVector::zeros(sys.state_dim()),
                    &traj.excitations()[start..t],
                    &traj.noises()[start..t],
                );
                let ybar = roll(
                    sys,
                    &traj.policy,
                    hbar.clone(),
                    &traj.excitations()[t..t + 1],
                    &traj.noises()[t..t + 1],
                );
                Self::sample(sys, &traj.policy, &hbar, traj.excitation(t), &ybar)
            })
            .collect();
        Ok(Self::build(traj, cols))
    }

    /// The `N` truncated triplets of a sub-trajectory.
    pub fn subtrajectory(sys: &SystemSpec, policy: &Policy, sub: &SubTrajectory) -> Result<Design> {
        if sub.is_empty() {
            return Err(Error::InvalidInput("sub-trajectory has no samples".into()));
        }
        let cols = (0..sub.len())
            .map(|i| Self::sample(sys, policy, &sub.states[i], &sub.excitations[i], &sub.targets[i]))
            .collect();
        let (n, dbar) = sys.param_shape();
        Ok(Self::from_columns(sys.activation(), cols, dbar, n))
    }

    /// `M` independent transitions `(h_{L−1}, z_{L−1}) → h_L`, each from a
    /// fresh rollout seeded by `derive(noise.seed, i)`.
    pub fn auxiliary(
        sys: &SystemSpec,
        policy: &Policy,
        noise: &NoiseSpec,
        depth: usize,
        samples: usize,
    ) -> Result<Design> {
        if depth < 1 || samples < 1 {
            return Err(Error::InvalidInput("auxiliary sampling needs L >= 1 and M >= 1".into()));
        }
        noise.validate()?;
        sys.validate_policy(policy)?;
        let cols = (0..samples)
            .into_par_iter()
            .map(|i| {
                let ns = noise.with_seed(seed::derive(noise.seed, i as u64));
                let (zs, ws) = draw_streams(sys, &ns, depth);
                let h = roll(
                    sys,
                    policy,
                    DVector::zeros(sys.state_dim()),
                    &zs[..depth - 1],
                    &ws[..depth - 1],
                );
                let next = roll(sys, policy, h.clone(), &zs[depth - 1..], &ws[depth - 1..]);
                Self::sample(sys, policy, &h, &zs[depth - 1], &next)
            })
            .collect();
        let (n, dbar) = sys.param_shape();
        Ok(Self::from_columns(sys.activation(), cols, dbar, n))
    }

    fn build(traj: &Trajectory, cols: Vec<Column>) -> Design {
        let (n, dbar) = traj.sys.param_shape();
        Self::from_columns(traj.sys.activation(), cols, dbar, n)
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    fn check_theta(&self, theta: &DMatrix<f64>) -> Result<()> {
        ensure_dim("theta rows", self.y.nrows(), theta.nrows())?;
        ensure_dim("theta columns", self.x.nrows(), theta.ncols())
    }

    /// Pre-activations `ΘX` and residuals `Y − φ(ΘX) − offset`.
    fn residuals(&self, theta: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let pre = theta * &self.x;
        let mut fit = pre.map(|v| self.activation.eval(v));
        if let Some(off) = &self.offset {
            fit += off;
        }
        (pre, &self.y - fit)
    }

    pub fn loss(&self, theta: &DMatrix<f64>) -> Result<f64> {
        self.check_theta(theta)?;
        let (_, res) = self.residuals(theta);
        Ok(res.norm_squared() / (2.0 * self.len() as f64))
    }

    pub fn gradient(&self, theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.loss_and_gradient(theta)?.1)
    }

    pub fn loss_and_gradient(&self, theta: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        self.check_theta(theta)?;
        let m = self.len() as f64;
        // Overwritten in place with the residuals weighted by φ′.
        let mut w = theta * &self.x;
        let mut sq = 0.0;
        let act = self.activation;
        for j in 0..w.ncols() {
            for i in 0..w.nrows() {
                let (f, d) = act.eval_deriv(w[(i, j)]);
                let off = self.offset.as_ref().map_or(0.0, |o| o[(i, j)]);
                let r = self.y[(i, j)] - (f + off);
                sq += r * r;
                w[(i, j)] = r * d;
            }
        }
        let grad = -(w * self.x.transpose()) / m;
        Ok((sq / (2.0 * m), grad))
    }

    /// Gradient of the `k`-th separable sub-problem with respect to `θ_k`.
    pub fn row_gradient(&self, k: usize, theta_k: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("theta row", self.x.nrows(), theta_k.len())?;
        if k >= self.y.nrows() {
            return Err(Error::InvalidInput(format!("row {k} out of range")));
        }
        let mut g = DVector::zeros(self.x.nrows());
        for j in 0..self.len() {
            let xj = self.x.column(j);
            let pre = theta_k.dot(&xj);
            let off = self.offset.as_ref().map_or(0.0, |o| o[(k, j)]);
            let r = self.y[(k, j)] - (self.activation.eval(pre) + off);
            g.axpy(-r * self.activation.deriv(pre), &xj, 1.0);
        }
        Ok(g / self.len() as f64)
    }

    /// Per-sample losses `½‖y_j − φ(Θx_j)‖²`.
    pub fn sample_losses(&self, theta: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let (_, res) = self.residuals(theta);
        Ok(res.column_iter().map(|c| 0.5 * c.norm_squared()).collect())
    }

    /// Mean loss and gradient with standard errors of the mean.
    pub fn estimate(&self, theta: &DMatrix<f64>) -> Result<Estimate> {
        self.check_theta(theta)?;
        let (pre, res) = self.residuals(theta);
        let m = self.len();
        let (n, dbar) = theta.shape();
        let mut sum = DMatrix::zeros(n, dbar);
        let mut sum_sq = DMatrix::zeros(n, dbar);
        let (mut ls, mut ls_sq) = (0.0, 0.0);
        for j in 0..m {
            let r = res.column(j);
            let l = 0.5 * r.norm_squared();
            ls += l;
            ls_sq += l * l;
            let w = DVector::from_fn(n, |k, _| -r[k] * self.activation.deriv(pre[(k, j)]));
            let g = w * self.x.column(j).transpose();
            sum_sq += g.component_mul(&g);
            sum += g;
        }
        let mf = m as f64;
        let se = |s: f64, s2: f64| {
            if m < 2 {
                0.0
            } else {
                ((s2 - s * s / mf).max(0.0) / (mf - 1.0) / mf).sqrt()
            }
        };
        let gradient_se = DMatrix::from_fn(n, dbar, |i, j| se(sum[(i, j)], sum_sq[(i, j)]));
        Ok(Estimate {
            loss: ls / mf,
            loss_se: se(ls, ls_sq),
            gradient: sum / mf,
            gradient_se,
        })
    }

    /// `λ_max(XXᵀ/M)`, the curvature of the loss for identity activation.
    pub fn curvature(&self) -> f64 {
        let cov = &self.x * self.x.transpose() / self.len() as f64;
        cov.symmetric_eigenvalues().max()
    }
}

fn check_churn(traj: &Trajectory, churn: usize) -> Result<()> {
    if churn < 1 {
        return Err(Error::InvalidInput("churn period L must be >= 1".into()));
    }
    if traj.len() <= churn {
        return Err(Error::TrajectoryTooShort { min_t: churn + 1 });
    }
    Ok(())
}

pub fn empirical_loss(theta: &DMatrix<f64>, traj: &Trajectory, churn: usize) -> Result<f64> {
    Design::empirical(traj, churn)?.loss(theta)
}

pub fn empirical_gradient(theta: &DMatrix<f64>, traj: &Trajectory, churn: usize) -> Result<DMatrix<f64>> {
    Design::empirical(traj, churn)?.gradient(theta)
}

pub fn truncated_loss(theta: &DMatrix<f64>, traj: &Trajectory, depth: usize) -> Result<f64> {
    Design::truncated(traj, depth)?.loss(theta)
}

pub fn truncated_gradient(theta: &DMatrix<f64>, traj: &Trajectory, depth: usize) -> Result<DMatrix<f64>> {
    Design::truncated(traj, depth)?.gradient(theta)
}

pub fn subtrajectory_loss(
    theta: &DMatrix<f64>,
    sys: &SystemSpec,
    policy: &Policy,
    sub: &SubTrajectory,
) -> Result<f64> {
    Design::subtrajectory(sys, policy, sub)?.loss(theta)
}

pub fn subtrajectory_gradient(
    theta: &DMatrix<f64>,
    sys: &SystemSpec,
    policy: &Policy,
    sub: &SubTrajectory,
) -> Result<DMatrix<f64>> {
    Design::subtrajectory(sys, policy, sub)?.gradient(theta)
}

/// Monte Carlo estimate of the auxiliary loss `E ½‖h_L − φ̃(h_{L−1}, z_{L−1}; θ)‖²`
/// and its gradient over `M` fresh rollouts.
pub fn auxiliary_estimate(
    theta: &DMatrix<f64>,
    sys: &SystemSpec,
    policy: &Policy,
    noise: &NoiseSpec,
    depth: usize,
    samples: usize,
) -> Result<Estimate> {
    Design::auxiliary(sys, policy, noise, depth, samples)?.estimate(theta)
}

/// Exact covariance of the state at time `t` (from `h_0 = 0`) when the closed
/// loop is linear in the state; `None` otherwise.
pub fn state_covariance(
    sys: &SystemSpec,
    policy: &Policy,
    noise: &NoiseSpec,
    t: usize,
) -> Option<DMatrix<f64>> {
    let acl = sys.closed_loop_matrix(policy)?;
    let m = sys.state_dim();
    let n = sys.output_dim();
    let bcl = sys.closed_loop_input();
    let mut drive = &bcl * bcl.transpose() * noise.excitation_std.powi(2);
    let s2 = noise.process_std.powi(2);
    for i in 0..n {
        drive[(i, i)] += s2;
    }
    let mut gamma = DMatrix::zeros(m, m);
    for _ in 0..t {
        gamma = &acl * gamma * acl.transpose() + &drive;
    }
    Some(gamma)
}

/// Exact covariance of the regressor `x_{L−1}` for state-linear closed loops.
pub fn regressor_covariance(
    sys: &SystemSpec,
    policy: &Policy,
    noise: &NoiseSpec,
    depth: usize,
) -> Option<DMatrix<f64>> {
    let gamma = state_covariance(sys, policy, noise, depth.checked_sub(1)?)?;
    let jac = sys.regressor_jacobian(policy);
    let mut cov = &jac * gamma * jac.transpose();
    let n = sys.state_dim();
    for i in n..cov.nrows() {
        cov[(i, i)] += noise.excitation_std.powi(2);
    }
    Some(cov)
}

/// Exact auxiliary gradient `(Θ − Θ⋆)Σ_x` for state-linear closed loops.
pub fn linear_population_gradient(
    theta: &DMatrix<f64>,
    sys: &SystemSpec,
    policy: &Policy,
    noise: &NoiseSpec,
    depth: usize,
) -> Option<DMatrix<f64>> {
    let cov = regressor_covariance(sys, policy, noise, depth)?;
    Some((theta - sys.theta_star()) * cov)
}
