//! System parameterizations, feedback policies and the one-step transition
//! `h_{t+1} = φ̃(h_t, z_t; θ) + w_t`.
//!
//! Every variant is separable: coordinate `k` of the next state is
//! `φ(θ_kᵀ x) + c[k]` for a regressor `x` that is affine in the state and a
//! parameter-free offset `c`. [`SystemSpec::regressor`] exposes that view and
//! the losses are written against it.

use nalgebra::{DMatrix, DVector};

use crate::activation::Activation;
use crate::error::{ensure_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonlinearForm {
    /// `φ(A h + B u)`; the learned parameter is `[A B]`.
    PreMix,
    /// `φ(Θ h) + B u`; only `Θ` is learned.
    PostAdd,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SystemSpec {
    Linear {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
    },
    EntrywiseNonlinear {
        theta: DMatrix<f64>,
        b: DMatrix<f64>,
        activation: Activation,
        form: NonlinearForm,
    },
    /// `h_t = φ(A_1 h_{t-1} + … + A_m h_{t-m}) + w_{t-1}`, simulated on the
    /// stacked state `[h_t; …; h_{t-m+1}]`.
    NonlinearArx {
        blocks: Vec<DMatrix<f64>>,
        activation: Activation,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Zero,
    /// `u = -K h + z`.
    LinearFeedback(DMatrix<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub excitation_std: f64,
    pub process_std: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(process_std: f64, seed: u64) -> Self {
        NoiseSpec {
            excitation_std: 1.0,
            process_std,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        NoiseSpec { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.process_std >= 0.0 && self.process_std.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "process noise std must be finite and >= 0, got {}",
                self.process_std
            )));
        }
        if !(self.excitation_std >= 0.0 && self.excitation_std.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "excitation std must be finite and >= 0, got {}",
                self.excitation_std
            )));
        }
        Ok(())
    }
}

/// Regression view of one transition: `next[k] = φ(θ_kᵀ x) + offset[k] + w[k]`.
#[derive(Debug, Clone)]
pub struct Regressor {
    pub x: DVector<f64>,
    pub offset: DVector<f64>,
}

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

impl Policy {
    pub fn gain(&self, input_dim: usize, state_dim: usize) -> DMatrix<f64> {
        match self {
            Policy::Zero => DMatrix::zeros(input_dim, state_dim),
            Policy::LinearFeedback(k) => k.clone(),
        }
    }

    pub fn input(&self, h: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        match self {
            Policy::Zero => z.clone(),
            Policy::LinearFeedback(k) => z - k * h,
        }
    }

    pub fn validate(&self, input_dim: usize, state_dim: usize) -> Result<()> {
        if let Policy::LinearFeedback(k) = self {
            ensure_dim("policy gain rows", input_dim, k.nrows())?;
            ensure_dim("policy gain columns", state_dim, k.ncols())?;
            if !all_finite(k) {
                return Err(Error::InvalidInput("policy gain has non-finite entries".into()));
            }
        }
        Ok(())
    }
}

impl SystemSpec {
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let sys = SystemSpec::Linear { a, b };
        sys.validate()?;
        Ok(sys)
    }

    pub fn entrywise(
        theta: DMatrix<f64>,
        b: DMatrix<f64>,
        activation: Activation,
        form: NonlinearForm,
    ) -> Result<Self> {
        let sys = SystemSpec::EntrywiseNonlinear {
            theta,
            b,
            activation,
            form,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn arx(blocks: Vec<DMatrix<f64>>, activation: Activation) -> Result<Self> {
        let sys = SystemSpec::NonlinearArx { blocks, activation };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SystemSpec::Linear { a, b }
            | SystemSpec::EntrywiseNonlinear { theta: a, b, .. } => {
                ensure_dim("state matrix columns", a.nrows(), a.ncols())?;
                ensure_dim("input matrix rows", a.nrows(), b.nrows())?;
                if !all_finite(a) || !all_finite(b) {
                    return Err(Error::InvalidInput("system matrices must be finite".into()));
                }
            }
            SystemSpec::NonlinearArx { blocks, .. } => {
                let Some(first) = blocks.first() else {
                    return Err(Error::InvalidInput("ARX order must be at least 1".into()));
                };
                let n = first.nrows();
                for blk in blocks {
                    ensure_dim("ARX block rows", n, blk.nrows())?;
                    ensure_dim("ARX block columns", n, blk.ncols())?;
                    if !all_finite(blk) {
                        return Err(Error::InvalidInput("ARX blocks must be finite".into()));
                    }
                }
            }
        }
        self.activation().validate()
    }

    pub fn activation(&self) -> Activation {
        match self {
            SystemSpec::Linear { .. } => Activation::Identity,
            SystemSpec::EntrywiseNonlinear { activation, .. }
            | SystemSpec::NonlinearArx { activation, .. } => *activation,
        }
    }

    /// Dimension `n` of the physical state (and of the process noise).
    pub fn output_dim(&self) -> usize {
        match self {
            SystemSpec::Linear { a, .. } | SystemSpec::EntrywiseNonlinear { theta: a, .. } => {
                a.nrows()
            }
            SystemSpec::NonlinearArx { blocks, .. } => blocks[0].nrows(),
        }
    }

    /// Dimension of the simulated state (`m·n` for an order-`m` ARX model).
    pub fn state_dim(&self) -> usize {
        match self {
            SystemSpec::NonlinearArx { blocks, .. } => blocks.len() * blocks[0].nrows(),
            _ => self.output_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            SystemSpec::Linear { b, .. } | SystemSpec::EntrywiseNonlinear { b, .. } => b.ncols(),
            SystemSpec::NonlinearArx { .. } => 0,
        }
    }

    /// Input matrix, if the variant has one.
    pub fn input_matrix(&self) -> Option<&DMatrix<f64>> {
        match self {
            SystemSpec::Linear { b, .. } | SystemSpec::EntrywiseNonlinear { b, .. } => Some(b),
            SystemSpec::NonlinearArx { .. } => None,
        }
    }

    fn premixes_input(&self) -> bool {
        matches!(
            self,
            SystemSpec::Linear { .. }
                | SystemSpec::EntrywiseNonlinear {
                    form: NonlinearForm::PreMix,
                    ..
                }
        )
    }

    /// Shape `(n, d̄)` of the learned parameter.
    pub fn param_shape(&self) -> (usize, usize) {
        let n = self.output_dim();
        if self.premixes_input() {
            (n, n + self.input_dim())
        } else {
            (n, self.state_dim())
        }
    }

    /// Ground-truth parameter in the learned layout.
    pub fn theta_star(&self) -> DMatrix<f64> {
        match self {
            SystemSpec::Linear { a, b }
            | SystemSpec::EntrywiseNonlinear {
                theta: a,
                b,
                form: NonlinearForm::PreMix,
                ..
            } => {
                let (n, p) = (a.nrows(), b.ncols());
                let mut t = DMatrix::zeros(n, n + p);
                t.columns_mut(0, n).copy_from(a);
                t.columns_mut(n, p).copy_from(b);
                t
            }
            SystemSpec::EntrywiseNonlinear { theta, .. } => theta.clone(),
            SystemSpec::NonlinearArx { blocks, .. } => {
                let n = blocks[0].nrows();
                let mut t = DMatrix::zeros(n, n * blocks.len());
                for (i, blk) in blocks.iter().enumerate() {
                    t.columns_mut(i * n, n).copy_from(blk);
                }
                t
            }
        }
    }

    /// The same system with its learned parameter replaced by `theta`.
    pub fn with_theta(&self, theta: &DMatrix<f64>) -> Result<SystemSpec> {
        let (rows, cols) = self.param_shape();
        ensure_dim("parameter rows", rows, theta.nrows())?;
        ensure_dim("parameter columns", cols, theta.ncols())?;
        let n = self.output_dim();
        Ok(match self {
            SystemSpec::Linear { .. } => SystemSpec::Linear {
                a: theta.columns(0, n).into_owned(),
                b: theta.columns(n, cols - n).into_owned(),
            },
            SystemSpec::EntrywiseNonlinear {
                b,
                activation,
                form,
                ..
            } => match form {
                NonlinearForm::PreMix => SystemSpec::EntrywiseNonlinear {
                    theta: theta.columns(0, n).into_owned(),
                    b: theta.columns(n, cols - n).into_owned(),
                    activation: *activation,
                    form: *form,
                },
                NonlinearForm::PostAdd => SystemSpec::EntrywiseNonlinear {
                    theta: theta.clone(),
                    b: b.clone(),
                    activation: *activation,
                    form: *form,
                },
            },
            SystemSpec::NonlinearArx { blocks, activation } => SystemSpec::NonlinearArx {
                blocks: (0..blocks.len())
                    .map(|i| theta.columns(i * n, n).into_owned())
                    .collect(),
                activation: *activation,
            },
        })
    }

    pub fn validate_policy(&self, policy: &Policy) -> Result<()> {
        policy.validate(self.input_dim(), self.state_dim())
    }

    /// Regressor and offset for the transition out of state `h` under excitation `z`.
    pub fn regressor(&self, policy: &Policy, h: &DVector<f64>, z: &DVector<f64>) -> Regressor {
        let n = self.output_dim();
        match self {
            SystemSpec::Linear { .. }
            | SystemSpec::EntrywiseNonlinear {
                form: NonlinearForm::PreMix,
                ..
            } => {
                let u = policy.input(h, z);
                let p = u.len();
                let mut x = DVector::zeros(n + p);
                x.rows_mut(0, n).copy_from(h);
                x.rows_mut(n, p).copy_from(&u);
                Regressor {
                    x,
                    offset: DVector::zeros(n),
                }
            }
            SystemSpec::EntrywiseNonlinear { b, .. } => Regressor {
                x: h.clone(),
                offset: b * policy.input(h, z),
            },
            SystemSpec::NonlinearArx { .. } => Regressor {
                x: h.clone(),
                offset: DVector::zeros(n),
            },
        }
    }

    /// Constant Jacobian `∂x/∂h` of the regressor (`d̄ × state_dim`).
    pub fn regressor_jacobian(&self, policy: &Policy) -> DMatrix<f64> {
        let n = self.state_dim();
        if self.premixes_input() {
            let p = self.input_dim();
            let k = policy.gain(p, n);
            let mut j = DMatrix::zeros(n + p, n);
            j.view_mut((0, 0), (n, n)).fill_with_identity();
            j.view_mut((n, 0), (p, n)).copy_from(&(-k));
            j
        } else {
            DMatrix::identity(n, n)
        }
    }

    /// Constant Jacobian `∂offset/∂h` (`n × state_dim`).
    pub fn offset_jacobian(&self, policy: &Policy) -> DMatrix<f64> {
        match self {
            SystemSpec::EntrywiseNonlinear {
                b,
                form: NonlinearForm::PostAdd,
                ..
            } => -(b * policy.gain(b.ncols(), self.state_dim())),
            _ => DMatrix::zeros(self.output_dim(), self.state_dim()),
        }
    }

    /// `φ(θ x) + offset`.
    pub fn predict(&self, theta: &DMatrix<f64>, reg: &Regressor) -> DVector<f64> {
        self.activation().eval_vec(&(theta * &reg.x)) + &reg.offset
    }

    /// Closed-loop transition `φ̃(h, z; θ) + w` for an arbitrary parameter `theta`
    /// in the learned layout.
    pub fn step_with(
        &self,
        theta: &DMatrix<f64>,
        policy: &Policy,
        h: &DVector<f64>,
        z: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        ensure_dim("state", self.state_dim(), h.len())?;
        ensure_dim("excitation", self.input_dim(), z.len())?;
        ensure_dim("process noise", self.output_dim(), w.len())?;
        let reg = self.regressor(policy, h, z);
        let head = self.predict(theta, &reg) + w;
        Ok(self.lift(head, h))
    }

    /// Closed-loop transition under the true parameter.
    pub fn step(
        &self,
        policy: &Policy,
        h: &DVector<f64>,
        z: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.step_with(&self.theta_star(), policy, h, z, w)
    }

    /// Builds the full next state from the new leading block.
    pub(crate) fn lift(&self, head: DVector<f64>, h: &DVector<f64>) -> DVector<f64> {
        match self {
            SystemSpec::NonlinearArx { blocks, .. } if blocks.len() > 1 => {
                let n = head.len();
                let m = blocks.len();
                let mut next = DVector::zeros(n * m);
                next.rows_mut(0, n).copy_from(&head);
                next.rows_mut(n, n * (m - 1)).copy_from(&h.rows(0, n * (m - 1)));
                next
            }
            _ => head,
        }
    }

    /// State-transition matrix of the closed loop when it is linear in the state.
    pub fn closed_loop_matrix(&self, policy: &Policy) -> Option<DMatrix<f64>> {
        if !self.activation().is_identity() {
            return None;
        }
        let n = self.state_dim();
        let p = self.input_dim();
        let k = policy.gain(p, n);
        match self {
            SystemSpec::Linear { a, b } | SystemSpec::EntrywiseNonlinear { theta: a, b, .. } => {
                Some(a - b * k)
            }
            SystemSpec::NonlinearArx { blocks, .. } => {
                let nn = blocks[0].nrows();
                let m = blocks.len();
                let mut c = DMatrix::zeros(nn * m, nn * m);
                for (i, blk) in blocks.iter().enumerate() {
                    c.view_mut((0, i * nn), (nn, nn)).copy_from(blk);
                }
                if m > 1 {
                    c.view_mut((nn, 0), (nn * (m - 1), nn * (m - 1)))
                        .fill_with_identity();
                }
                Some(c)
            }
        }
    }

    /// Effective input matrix of the linear closed loop (`h' = A_cl h + B_cl z + w`).
    pub fn closed_loop_input(&self) -> DMatrix<f64> {
        match self {
            SystemSpec::Linear { b, .. } | SystemSpec::EntrywiseNonlinear { b, .. } => b.clone(),
            SystemSpec::NonlinearArx { .. } => DMatrix::zeros(self.state_dim(), 0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    fn rand_mat(seed_: u64, r: usize, c: usize) -> DMatrix<f64> {
        seed::normal_matrix(&mut seed::stream(seed_, 0), r, c, 1.0)
    }

    #[test]
    fn zero_state_matrix_forgets_the_state() {
        let sys = SystemSpec::linear(DMatrix::zeros(3, 3), DMatrix::identity(3, 3)).unwrap();
        let h = DVector::from_vec(vec![5.0, -2.0, 9.0]);
        let z = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let next = sys.step(&Policy::Zero, &h, &z, &DVector::zeros(3)).unwrap();
        assert_eq!(next, z);
    }

    #[test]
    fn scalar_scaling() {
        let sys =
            SystemSpec::linear(DMatrix::identity(4, 4) * 0.5, DMatrix::identity(4, 4)).unwrap();
        let next = sys
            .step(
                &Policy::Zero,
                &DVector::from_element(4, 1.0),
                &DVector::zeros(4),
                &DVector::zeros(4),
            )
            .unwrap();
        assert_eq!(next, DVector::from_element(4, 0.5));
    }

    #[test]
    fn leaky_relu_one_matches_linear_exactly() {
        let theta = rand_mat(1, 5, 5);
        let b = DMatrix::identity(5, 5);
        let lin = SystemSpec::linear(theta.clone(), b.clone()).unwrap();
        let nl = SystemSpec::entrywise(theta, b, Activation::LeakyRelu(1.0), NonlinearForm::PreMix)
            .unwrap();
        let mut rng = seed::stream(2, 0);
        for _ in 0..100 {
            let h = seed::normal_vector(&mut rng, 5, 3.0);
            let z = seed::normal_vector(&mut rng, 5, 1.0);
            let w = seed::normal_vector(&mut rng, 5, 0.1);
            let a = lin.step(&Policy::Zero, &h, &z, &w).unwrap();
            let b = nl.step(&Policy::Zero, &h, &z, &w).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let sys = SystemSpec::linear(DMatrix::zeros(3, 3), DMatrix::zeros(3, 2)).unwrap();
        let err = sys.step(
            &Policy::Zero,
            &DVector::zeros(2),
            &DVector::zeros(2),
            &DVector::zeros(3),
        );
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        assert!(SystemSpec::linear(DMatrix::zeros(3, 2), DMatrix::zeros(3, 2)).is_err());
        assert!(SystemSpec::linear(DMatrix::zeros(3, 3), DMatrix::zeros(2, 2)).is_err());
        let mut bad = DMatrix::zeros(2, 2);
        bad[(0, 1)] = f64::NAN;
        assert!(SystemSpec::linear(bad, DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn theta_round_trips_through_with_theta() {
        let sys = SystemSpec::entrywise(
            rand_mat(3, 4, 4),
            rand_mat(4, 4, 2),
            Activation::Softplus,
            NonlinearForm::PreMix,
        )
        .unwrap();
        let t = sys.theta_star();
        assert_eq!(t.shape(), (4, 6));
        assert_eq!(sys.with_theta(&t).unwrap(), sys);
        let arx = SystemSpec::arx(vec![rand_mat(5, 3, 3), rand_mat(6, 3, 3)], Activation::Softplus)
            .unwrap();
        assert_eq!(arx.with_theta(&arx.theta_star()).unwrap(), arx);
        assert_eq!(arx.state_dim(), 6);
    }

    #[test]
    fn arx_step_shifts_history() {
        let blocks = vec![DMatrix::identity(2, 2) * 0.5, DMatrix::identity(2, 2) * 0.25];
        let arx = SystemSpec::arx(blocks, Activation::Identity).unwrap();
        let h = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let next = arx
            .step(&Policy::Zero, &h, &DVector::zeros(0), &DVector::zeros(2))
            .unwrap();
        assert_eq!(next.as_slice(), &[0.5 + 0.75, 1.0 + 1.0, 1.0, 2.0]);
        let c = arx.closed_loop_matrix(&Policy::Zero).unwrap();
        assert_eq!(c * h, next);
    }

    #[test]
    fn post_add_offset_carries_the_input() {
        let sys = SystemSpec::entrywise(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            Activation::Softplus,
            NonlinearForm::PostAdd,
        )
        .unwrap();
        let z = DVector::from_vec(vec![1.0, -1.0]);
        let next = sys
            .step(&Policy::Zero, &DVector::zeros(2), &z, &DVector::zeros(2))
            .unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((next[0] - (ln2 + 1.0)).abs() < 1e-15);
        assert!((next[1] - (ln2 - 1.0)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn step_is_pure_and_identity_agrees(s in 0u64..1000) {
            let theta = rand_mat(s, 3, 3);
            let b = rand_mat(s + 1, 3, 2);
            let k = rand_mat(s + 2, 2, 3) * 0.1;
            let pol = Policy::LinearFeedback(k);
            let id = SystemSpec::entrywise(theta.clone(), b.clone(), Activation::Identity, NonlinearForm::PreMix).unwrap();
            let lr = SystemSpec::entrywise(theta, b, Activation::LeakyRelu(1.0), NonlinearForm::PreMix).unwrap();
            let mut rng = seed::stream(s, 9);
            let h = seed::normal_vector(&mut rng, 3, 2.0);
            let z = seed::normal_vector(&mut rng, 2, 1.0);
            let w = seed::normal_vector(&mut rng, 3, 0.5);
            let a1 = id.step(&pol, &h, &z, &w).unwrap();
            let a2 = id.step(&pol, &h, &z, &w).unwrap();
            let a3 = lr.step(&pol, &h, &z, &w).unwrap();
            prop_assert_eq!(&a1, &a2);
            prop_assert!((a1 - a3).amax() <= 1e-12);
        }
    }
}
