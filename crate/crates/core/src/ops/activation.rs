use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::tensor::Element;

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

/// Candidate activation functions, in candidate-id order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Mish,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Relu, Activation::LeakyRelu, Activation::Mish];

    pub fn index(self) -> usize {
        match self {
            Activation::Relu => 0,
            Activation::LeakyRelu => 1,
            Activation::Mish => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Mish => "mish",
        }
    }

    #[inline]
    pub fn apply<T: Element>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu => {
                if x >= T::zero() {
                    x
                } else {
                    x * T::of(LEAKY_RELU_SLOPE)
                }
            }
            Activation::Mish => x * softplus(x).tanh(),
        }
    }

    /// Derivative at `x`. At the rectifier kinks (x = 0) the negative-side
    /// value is used.
    #[inline]
    pub fn derivative<T: Element>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::of(LEAKY_RELU_SLOPE)
                }
            }
            Activation::Mish => {
                let t = softplus(x).tanh();
                let sigmoid = T::one() / (T::one() + (-x).exp());
                t + x * (T::one() - t * t) * sigmoid
            }
        }
    }
}

/// ln(1 + e^x) without overflow.
#[inline]
fn softplus<T: Element>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::format("activation", format!("unknown activation `{s}`")))
    }
}
