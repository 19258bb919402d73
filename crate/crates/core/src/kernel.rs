//! Coagulation kernels and their separable majorants.
//!
//! A kernel `K_λ(x, y)` gives the rate at which a pair of particles of
//! integer masses `x` and `y` merges. The coupled simulators never sample
//! from `K_λ` directly: they propose pairs from a [`FactorizedMajorant`]
//! `K̂(x, y) = Σ_α f_α(x) g_α(y)` that dominates both perturbed kernels
//! `K⁺ = K_{λ+ε/2}` and `K⁻ = K_{λ−ε/2}`, then thin the proposals.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Particle mass. Masses are positive integers.
pub type Mass = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    /// `K(x, y) = λ (x + y)`
    Additive,
    /// Free-molecular soot kernel
    /// `K(x, y) = (1/x + 1/y)^{1/2} (x^{1/λ} + y^{1/λ})^2`.
    Soot,
}

impl KernelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelFamily::Additive => "additive",
            KernelFamily::Soot => "soot",
        }
    }

    /// Reference parameter value used by the default experiments.
    pub fn reference_lambda(self) -> f64 {
        match self {
            KernelFamily::Additive => 1.0,
            KernelFamily::Soot => 2.1,
        }
    }

    /// Default central-difference perturbation.
    pub fn reference_eps(self) -> f64 {
        match self {
            KernelFamily::Additive => 0.06,
            KernelFamily::Soot => 0.03,
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "additive" => Ok(KernelFamily::Additive),
            "soot" => Ok(KernelFamily::Soot),
            other => Err(Error::InvalidKernel(format!(
                "unknown kernel family `{other}` (expected additive | soot)"
            ))),
        }
    }
}

/// A kernel family at a fixed parameter value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    lambda: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::InvalidKernel(format!("λ = {lambda} is not finite")));
        }
        match family {
            KernelFamily::Additive if lambda < 0.0 => Err(Error::InvalidKernel(format!(
                "additive kernel needs λ ≥ 0, got {lambda}"
            ))),
            KernelFamily::Soot if lambda <= 0.0 => Err(Error::InvalidKernel(format!(
                "soot kernel needs λ > 0, got {lambda}"
            ))),
            _ => Ok(KernelSpec { family, lambda }),
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `K_λ(x, y)`. Symmetric and non-negative for `x, y ≥ 1`.
    #[inline]
    pub fn eval(&self, x: Mass, y: Mass) -> f64 {
        debug_assert!(x >= 1 && y >= 1);
        self.eval_real(x as f64, y as f64)
    }

    /// The kernel formula at real arguments `x, y > 0`.
    #[inline]
    pub fn eval_real(&self, x: f64, y: f64) -> f64 {
        match self.family {
            KernelFamily::Additive => self.lambda * (x + y),
            KernelFamily::Soot => {
                let e = 1.0 / self.lambda;
                let s = x.powf(e) + y.powf(e);
                (1.0 / x + 1.0 / y).sqrt() * s * s
            }
        }
    }
}

/// `coeff · x^exponent`, one factor of a separable majorant term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerFactor {
    pub coeff: f64,
    pub exponent: f64,
}

impl PowerFactor {
    pub const fn constant(coeff: f64) -> Self {
        PowerFactor {
            coeff,
            exponent: 0.0,
        }
    }

    pub const fn power(coeff: f64, exponent: f64) -> Self {
        PowerFactor { coeff, exponent }
    }

    #[inline]
    pub fn eval(&self, x: Mass) -> f64 {
        if self.exponent == 0.0 {
            self.coeff
        } else if self.exponent == 1.0 {
            self.coeff * x as f64
        } else {
            self.coeff * (x as f64).powf(self.exponent)
        }
    }
}

/// One product `f_α(x) g_α(y)` of a majorant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactorTerm {
    pub f: PowerFactor,
    pub g: PowerFactor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum MajorantForm {
    /// `scale · (x + y)`
    Additive { scale: f64 },
    /// `(x^{-1/2} + y^{-1/2}) (x^a + y^a)^2`
    Soot { exponent: f64 },
}

/// Majorant kernel `K̂(x, y) = Σ_α f_α(x) g_α(y)` with `K̂ ≥ max(K⁺, K⁻)`.
///
/// Terms come in mirrored pairs, so `K̂` is symmetric. All factors are
/// strictly positive on masses `≥ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedMajorant {
    terms: Vec<FactorTerm>,
    form: MajorantForm,
}

impl FactorizedMajorant {
    /// Builds a majorant dominating `K_{λ+ε/2}` and `K_{λ−ε/2}`.
    ///
    /// Additive: `(λ+ε/2)(x+y)` with two terms. Soot: bounds
    /// `(1/x+1/y)^{1/2} ≤ x^{-1/2}+y^{-1/2}` and uses the smaller parameter
    /// `λ−ε/2` in the exponent, which dominates on masses `≥ 1`; expanding the
    /// square gives six terms.
    pub fn build(family: KernelFamily, lambda: f64, eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "ε must be finite and ≥ 0, got {eps}"
            )));
        }
        match family {
            KernelFamily::Additive => {
                let scale = lambda + eps / 2.0;
                if !(scale > 0.0 && scale.is_finite()) || lambda - eps / 2.0 < 0.0 {
                    return Err(Error::InvalidKernel(format!(
                        "additive majorant needs λ − ε/2 ≥ 0 and λ + ε/2 > 0 (λ = {lambda}, ε = {eps})"
                    )));
                }
                let terms = vec![
                    FactorTerm {
                        f: PowerFactor::constant(scale),
                        g: PowerFactor::power(1.0, 1.0),
                    },
                    FactorTerm {
                        f: PowerFactor::power(1.0, 1.0),
                        g: PowerFactor::constant(scale),
                    },
                ];
                Ok(FactorizedMajorant {
                    terms,
                    form: MajorantForm::Additive { scale },
                })
            }
            KernelFamily::Soot => {
                let lower = lambda - eps / 2.0;
                if !(lower > 0.0) {
                    return Err(Error::InvalidKernel(format!(
                        "soot majorant needs λ − ε/2 > 0 (λ = {lambda}, ε = {eps})"
                    )));
                }
                let a = 1.0 / lower;
                let p = PowerFactor::power;
                let terms = vec![
                    FactorTerm {
                        f: p(1.0, 2.0 * a - 0.5),
                        g: PowerFactor::constant(1.0),
                    },
                    FactorTerm {
                        f: p(2.0, a - 0.5),
                        g: p(1.0, a),
                    },
                    FactorTerm {
                        f: p(1.0, -0.5),
                        g: p(1.0, 2.0 * a),
                    },
                    FactorTerm {
                        f: p(1.0, 2.0 * a),
                        g: p(1.0, -0.5),
                    },
                    FactorTerm {
                        f: p(2.0, a),
                        g: p(1.0, a - 0.5),
                    },
                    FactorTerm {
                        f: PowerFactor::constant(1.0),
                        g: p(1.0, 2.0 * a - 0.5),
                    },
                ];
                Ok(FactorizedMajorant {
                    terms,
                    form: MajorantForm::Soot { exponent: a },
                })
            }
        }
    }

    pub fn terms(&self) -> &[FactorTerm] {
        &self.terms
    }

    /// Number of separable terms `A`.
    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Closed-form `K̂(x, y)`.
    #[inline]
    pub fn eval(&self, x: Mass, y: Mass) -> f64 {
        let (xf, yf) = (x as f64, y as f64);
        match self.form {
            MajorantForm::Additive { scale } => scale * (xf + yf),
            MajorantForm::Soot { exponent } => {
                let s = xf.powf(exponent) + yf.powf(exponent);
                (1.0 / xf.sqrt() + 1.0 / yf.sqrt()) * s * s
            }
        }
    }

    /// `Σ_α f_α(x) g_α(y)`; equals [`eval`](Self::eval) up to rounding.
    pub fn eval_factored(&self, x: Mass, y: Mass) -> f64 {
        self.terms.iter().map(|t| t.f.eval(x) * t.g.eval(y)).sum()
    }
}

/// The perturbed kernels `K⁺ = K_{λ+ε/2}`, `K⁻ = K_{λ−ε/2}` and a shared majorant.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedKernels {
    pub plus: KernelSpec,
    pub minus: KernelSpec,
    pub majorant: FactorizedMajorant,
    pub lambda: f64,
    pub eps: f64,
}

impl PerturbedKernels {
    pub fn new(family: KernelFamily, lambda: f64, eps: f64) -> Result<Self> {
        let majorant = FactorizedMajorant::build(family, lambda, eps)?;
        Ok(PerturbedKernels {
            plus: KernelSpec::new(family, lambda + eps / 2.0)?,
            minus: KernelSpec::new(family, lambda - eps / 2.0)?,
            majorant,
            lambda,
            eps,
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.plus.family()
    }
}
