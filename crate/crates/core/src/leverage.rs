//! Recursive leverage ladders: deposit collateral, borrow against it at a
//! collateralization ratio, buy more collateral with the loan, repeat.
//!
//! Round `i` contributes `alpha / delta^i`. Terms are produced by repeated
//! division of the running term, so each carries at most one mantissa unit of
//! truncation.

use serde::Serialize;
use thiserror::Error;

use crate::dec::{ArithmeticError, Dec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LeverageError {
    #[error("collateralization ratio {0} must be greater than 1")]
    Ratio(Dec),
    #[error("initial capital {0} must not be negative")]
    Capital(Dec),
    #[error("interest rate {0} must not be negative")]
    Rate(Dec),
    #[error(transparent)]
    Arithmetic(#[from] ArithmeticError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LeverageQuote {
    pub alpha: Dec,
    pub delta: Dec,
    pub k: u32,
    pub gamma: Dec,
    pub total_collateral: Dec,
    pub total_debt: Dec,
    pub max_exposure: Dec,
}

fn check(alpha: Dec, delta: Dec) -> Result<(), LeverageError> {
    if delta <= Dec::ONE {
        return Err(LeverageError::Ratio(delta));
    }
    if alpha.is_negative() {
        return Err(LeverageError::Capital(alpha));
    }
    Ok(())
}

/// `alpha / delta^i` for `i = 0..=k`.
fn terms(alpha: Dec, delta: Dec, k: u32) -> impl Iterator<Item = Result<Dec, ArithmeticError>> {
    let mut term = Some(Ok(alpha));
    (0..=k).map_while(move |_| {
        let current = term.take()?;
        if let Ok(t) = current {
            term = Some(t.checked_div(delta));
        }
        Some(current)
    })
}

/// Collateral posted after `k` rounds: the sum of `alpha / delta^i` for
/// `i` in `0..=k`.
pub fn total_collateral(alpha: Dec, delta: Dec, k: u32) -> Result<Dec, LeverageError> {
    check(alpha, delta)?;
    let mut sum = Dec::ZERO;
    for t in terms(alpha, delta, k) {
        sum = sum.checked_add(t?)?;
    }
    Ok(sum)
}

/// Debt after `k` rounds at interest `gamma`: the sum of `alpha / delta^i`
/// for `i` in `1..=k`, times `1 + gamma`.
pub fn total_debt(alpha: Dec, delta: Dec, k: u32, gamma: Dec) -> Result<Dec, LeverageError> {
    check(alpha, delta)?;
    if gamma.is_negative() {
        return Err(LeverageError::Rate(gamma));
    }
    let mut sum = Dec::ZERO;
    for t in terms(alpha, delta, k).skip(1) {
        sum = sum.checked_add(t?)?;
    }
    Ok(sum.checked_mul(Dec::ONE.checked_add(gamma)?)?)
}

/// Limit of [`total_collateral`] as `k` grows: `alpha * delta / (delta - 1)`.
pub fn max_exposure(alpha: Dec, delta: Dec) -> Result<Dec, LeverageError> {
    check(alpha, delta)?;
    Ok(alpha.checked_mul_div(delta, delta.checked_sub(Dec::ONE)?)?)
}

pub fn quote(alpha: Dec, delta: Dec, k: u32, gamma: Dec) -> Result<LeverageQuote, LeverageError> {
    Ok(LeverageQuote {
        alpha,
        delta,
        k,
        gamma,
        total_collateral: total_collateral(alpha, delta, k)?,
        total_debt: total_debt(alpha, delta, k, gamma)?,
        max_exposure: max_exposure(alpha, delta)?,
    })
}
