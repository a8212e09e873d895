//! Scalar activations applied entrywise.

use nalgebra::DVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    /// `max(x, λx)` with leakage `0 <= λ <= 1`.
    LeakyRelu(f64),
    /// `ln(1 + e^x)`.
    Softplus,
}

impl Activation {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Activation::Identity => x,
            Activation::LeakyRelu(leak) => {
                if x >= 0.0 {
                    x
                } else {
                    leak * x
                }
            }
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        }
    }

    /// First derivative. The leaky-ReLU kink at 0 takes the right derivative (1).
    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu(leak) => {
                if x >= 0.0 {
                    1.0
                } else {
                    leak
                }
            }
            Activation::Softplus => logistic(x),
        }
    }

    /// `(φ(x), φ′(x))` sharing one exponential for softplus.
    pub fn eval_deriv(&self, x: f64) -> (f64, f64) {
        match *self {
            Activation::Softplus => {
                let e = (-x.abs()).exp();
                let d = if x >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                (x.max(0.0) + e.ln_1p(), d)
            }
            _ => (self.eval(x), self.deriv(x)),
        }
    }

    pub fn second_deriv(&self, x: f64) -> f64 {
        match *self {
            Activation::Identity | Activation::LeakyRelu(_) => 0.0,
            Activation::Softplus => {
                let s = logistic(x);
                s * (1.0 - s)
            }
        }
    }

    pub fn eval_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        v.map(|x| self.eval(x))
    }

    pub fn deriv_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        v.map(|x| self.deriv(x))
    }

    /// Infimum of the derivative over the real line (the `γ` of a γ-increasing map).
    pub fn min_slope(&self) -> f64 {
        match *self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu(leak) => leak.min(1.0),
            Activation::Softplus => 0.0,
        }
    }

    /// True when the activation is the identity map on all of R.
    pub fn is_identity(&self) -> bool {
        match *self {
            Activation::Identity => true,
            Activation::LeakyRelu(leak) => leak == 1.0,
            Activation::Softplus => false,
        }
    }

    pub fn fixes_zero(&self) -> bool {
        !matches!(self, Activation::Softplus)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if let Activation::LeakyRelu(leak) = *self {
            if !(0.0..=1.0).contains(&leak) {
                return Err(crate::Error::InvalidInput(format!(
                    "leakage must lie in [0, 1], got {leak}"
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match *self {
            Activation::Identity => "identity".into(),
            Activation::LeakyRelu(leak) => format!("leaky_relu({leak})"),
            Activation::Softplus => "softplus".into(),
        }
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
