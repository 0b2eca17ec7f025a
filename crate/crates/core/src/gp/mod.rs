//! Geometric programs for the minimum average transmit power.
//!
//! A geometric program minimises a posynomial subject to posynomial
//! inequalities `f(x) <= 1` (or `< 1`) and monomial equalities `g(x) = 1`
//! over positive variables. Under `x = exp(y)` every posynomial becomes a
//! log-sum-exp of affine functions and every monomial an affine function, so
//! the program is convex; [`solver`] works exclusively in that form.
//! Monomial coefficients are stored as logarithms so that factors such as
//! `lambda^{2n} N^n` never overflow.

mod build;
mod power;
pub mod solver;

pub use build::{build_gp_iid_scalar, build_gp_markov_scalar, build_gp_markov_vector, PowerLayout};
pub use power::{
    min_power, min_power_uniform, min_power_with, solve_gp, tdma_split, PowerSolution, DEFAULT_EPSILON_MARGIN,
    DEFAULT_TOL,
};
pub use solver::{solve, GpSolution, SolverOptions, SolverStats};

use crate::scalar::Scalar;
use crate::stability::StabilityError;
use crate::fading::FadingError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GpError {
    #[error("malformed geometric program: {0}")]
    Malformed(String),
    #[error("geometric program is infeasible (phase-one bound {bound:e})")]
    Infeasible { bound: f64 },
    #[error("solver did not converge after {iterations} Newton steps (gap {gap:e}); best incumbent p* = {p_star:?}")]
    Convergence {
        iterations: usize,
        gap: f64,
        /// Incumbent point in the original (positive) variables.
        incumbent: Vec<f64>,
        p_star: Option<f64>,
    },
    #[error("recovered policy failed its stability certificate: {0}")]
    Certificate(String),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Fading(#[from] FadingError),
}

/// `exp(log_coeff) * prod_k x_k^{a_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial<T> {
    pub log_coeff: T,
    pub exponents: Vec<(usize, T)>,
}

impl<T: Scalar> Monomial<T> {
    pub fn new(coeff: T, exponents: Vec<(usize, T)>) -> Self {
        Monomial {
            log_coeff: coeff.ln(),
            exponents,
        }
    }

    pub fn from_log(log_coeff: T, exponents: Vec<(usize, T)>) -> Self {
        Monomial { log_coeff, exponents }
    }

    pub fn coeff(&self) -> T {
        self.log_coeff.exp()
    }

    /// `log` of the monomial at `y = log x`.
    pub fn log_eval(&self, y: &[T]) -> T {
        self.exponents
            .iter()
            .fold(self.log_coeff, |acc, &(k, a)| acc + a * y[k])
    }

    /// Dense exponent vector over `nvars` variables.
    pub fn dense_exponents(&self, nvars: usize) -> Vec<T> {
        let mut a = vec![T::zero(); nvars];
        for &(k, e) in &self.exponents {
            a[k] = a[k] + e;
        }
        a
    }
}

/// Sum of monomials.
#[derive(Debug, Clone, PartialEq)]
pub struct Posynomial<T> {
    pub terms: Vec<Monomial<T>>,
}

impl<T: Scalar> Posynomial<T> {
    pub fn new(terms: Vec<Monomial<T>>) -> Self {
        Posynomial { terms }
    }

    pub fn log_eval(&self, y: &[T]) -> T {
        crate::scalar::log_sum_exp(self.terms.iter().map(|t| t.log_eval(y)))
    }
}

/// `posynomial <= 1`, or `< 1` when `strict`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inequality<T> {
    pub lhs: Posynomial<T>,
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricProgram<T> {
    pub variables: Vec<String>,
    pub objective: Posynomial<T>,
    pub inequalities: Vec<Inequality<T>>,
    /// Monomials constrained to equal one.
    pub equalities: Vec<Monomial<T>>,
    /// Starting point as `log x`, when the builder knows a good one.
    pub initial_log: Option<Vec<T>>,
    /// How to read a transmit-power policy off a solution.
    pub layout: Option<PowerLayout<T>>,
}

impl<T: Scalar> GeometricProgram<T> {
    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn var(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    /// Structural checks: finite positive coefficients, valid indices, and
    /// every variable used somewhere.
    pub fn validate(&self) -> Result<(), GpError> {
        let k = self.num_vars();
        let mut used = vec![false; k];
        let mut check = |m: &Monomial<T>, what: &str| -> Result<(), GpError> {
            if !m.log_coeff.is_finite() {
                return Err(GpError::Malformed(format!("{what}: coefficient must be positive and finite")));
            }
            for &(i, a) in &m.exponents {
                if i >= k {
                    return Err(GpError::Malformed(format!("{what}: variable index {i} out of range")));
                }
                if !a.is_finite() {
                    return Err(GpError::Malformed(format!("{what}: non-finite exponent")));
                }
                used[i] = true;
            }
            Ok(())
        };
        if self.objective.terms.is_empty() {
            return Err(GpError::Malformed("empty objective".into()));
        }
        for t in &self.objective.terms {
            check(t, "objective")?;
        }
        for (c, ineq) in self.inequalities.iter().enumerate() {
            if ineq.lhs.terms.is_empty() {
                return Err(GpError::Malformed(format!("inequality {c} is empty")));
            }
            for t in &ineq.lhs.terms {
                check(t, "inequality")?;
            }
        }
        for e in &self.equalities {
            check(e, "equality")?;
        }
        if let Some(i) = used.iter().position(|&u| !u) {
            return Err(GpError::Malformed(format!(
                "variable {} appears nowhere",
                self.variables[i]
            )));
        }
        if let Some(init) = &self.initial_log {
            if init.len() != k {
                return Err(GpError::Malformed("initial point has wrong length".into()));
            }
        }
        Ok(())
    }
}
