//! A-priori error certificates for solving against an approximated Gibbs
//! kernel: a bound on the entropic transport cost gap, a bound on the
//! unregularized cost gap after rounding, the composition rule turning
//! per-factor log errors into a kernel log error, and the sup-norm
//! normalization transfer.
//!
//! These are diagnostics, not gates — the solver runs regardless, and the
//! pipelines report bound versus observation side by side.

use crate::error::{Error, Result};

/// Inputs shared by the certificate formulas.
#[derive(Debug, Clone)]
pub struct ErrorBudget {
    /// Bound on `||log K - log K~||_inf`; must lie in `[0, 1]`.
    pub eps_log: f64,
    /// Stopping tolerance the solver ran with.
    pub eps_stop: f64,
    pub eta: f64,
    pub dims: Vec<usize>,
    /// `||C||_inf`.
    pub c_inf: f64,
}

impl ErrorBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_log >= 0.0) || self.eps_log > 1.0 {
            return Err(Error::Hypothesis(format!(
                "eps_log = {} outside [0, 1]; the entropic bound does not cover coarser approximations",
                self.eps_log
            )));
        }
        if !(self.eps_stop > 0.0) || !(self.eta > 0.0) {
            return Err(Error::Hypothesis(
                "eps_stop and eta must be positive".into(),
            ));
        }
        if self.dims.len() < 2 || self.dims.iter().any(|&n| n < 2) {
            return Err(Error::Hypothesis(
                "the bounds require m >= 2 modes of size >= 2".into(),
            ));
        }
        if !(self.c_inf >= 0.0) {
            return Err(Error::Hypothesis("c_inf must be non-negative".into()));
        }
        Ok(())
    }

    fn size_product(&self) -> f64 {
        self.dims.iter().map(|&n| n as f64).product()
    }
}

/// Bound on `|V(P_eta^*) - V(P~)|`, the entropic-cost gap between the exact
/// optimizer and the plan computed from the approximate kernel:
///
/// `eta (e_log (2 + log(2/e_log)) + e_log/2 log(N-1)
///       + 2 e_stop log((N-1)/e_stop)) + (e_log + 2 e_stop) ||C||_inf`
///
/// with `N` the total entry count. An exactly zero `eps_log` drops its
/// terms (the `x log(1/x)` limit).
pub fn epsilon_entropic(b: &ErrorBudget) -> Result<f64> {
    b.validate()?;
    let n_minus_1 = b.size_product() - 1.0;
    let log_terms = if b.eps_log > 0.0 {
        b.eps_log * (2.0 + (2.0 / b.eps_log).ln()) + 0.5 * b.eps_log * n_minus_1.ln()
    } else {
        0.0
    };
    let stop_term = 2.0 * b.eps_stop * (n_minus_1 / b.eps_stop).ln();
    Ok(b.eta * (log_terms + stop_term) + (b.eps_log + 2.0 * b.eps_stop) * b.c_inf)
}

/// Bound on `<C, P^> - <C, P*>`, the unregularized cost gap of the rounded
/// plan against the true optimum:
/// `2 eta e_log + 2 eta sum_k log n_k + 4 ||C||_inf e_stop`.
pub fn epsilon_total(b: &ErrorBudget) -> Result<f64> {
    b.validate()?;
    let log_sum: f64 = b.dims.iter().map(|&n| (n as f64).ln()).sum();
    Ok(2.0 * b.eta * b.eps_log + 2.0 * b.eta * log_sum + 4.0 * b.c_inf * b.eps_stop)
}

/// Per-factor log errors compose additively into a kernel log-error bound.
pub fn compose_factor_errors(per_factor: &[f64]) -> Result<f64> {
    if per_factor.iter().any(|&e| !(e >= 0.0)) {
        return Err(Error::InvalidArgument(
            "per-factor log errors must be non-negative".into(),
        ));
    }
    Ok(per_factor.iter().sum())
}

/// Rescale the problem so `||C||_inf = 1` (cost and `eta` both divided by
/// `||C||_inf`); the kernel is unchanged and both bound values transform by
/// the same factor.
pub fn normalized_budget(b: &ErrorBudget) -> Result<ErrorBudget> {
    if !(b.c_inf > 0.0) {
        return Err(Error::InvalidArgument(
            "normalization needs a positive cost sup-norm".into(),
        ));
    }
    let alpha = 1.0 / b.c_inf;
    Ok(ErrorBudget {
        eps_log: b.eps_log,
        eps_stop: b.eps_stop,
        eta: alpha * b.eta,
        dims: b.dims.clone(),
        c_inf: 1.0,
    })
}
