//! Facilitator payoff analysis under a per-facilitator failure rate.
//!
//! Units are normalized so the whole file is worth 1 and serving one chunk
//! costs `1/k`. A facilitator is picked by a client with probability `k/n`;
//! when picked it serves with probability `1 - f`. It is paid `p_o` per
//! purchase whether or not it serves.

use log::warn;
use thiserror::Error;

use crate::amount::Amount;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IncentiveError {
    #[error("invalid incentive parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncentiveParams {
    pub n: usize,
    pub k: usize,
    /// Failure rate in `[0, 1]`.
    pub f: f64,
    /// Payoff per purchase, normalized units.
    pub payoff: f64,
}

impl IncentiveParams {
    pub fn new(n: usize, k: usize, f: f64, payoff: f64) -> Result<Self, IncentiveError> {
        validate(n, k, f)?;
        if !payoff.is_finite() {
            return Err(IncentiveError::InvalidParams(format!(
                "payoff {payoff} is not finite"
            )));
        }
        Ok(Self { n, k, f, payoff })
    }

    pub fn serve_cost(&self) -> f64 {
        1.0 / self.k as f64
    }
}

fn validate(n: usize, k: usize, f: f64) -> Result<(), IncentiveError> {
    if k == 0 || k > n {
        return Err(IncentiveError::InvalidParams(format!(
            "need 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    if !(0.0..=1.0).contains(&f) {
        return Err(IncentiveError::InvalidParams(format!(
            "failure rate {f} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Sum over the three cases: picked and serves, not picked, picked but fails.
pub fn expected_advantage(params: &IncentiveParams) -> Result<f64, IncentiveError> {
    validate(params.n, params.k, params.f)?;
    let n = params.n as f64;
    let k = params.k as f64;
    let (f, p_o) = (params.f, params.payoff);
    let picked = k / n;
    let serves = (1.0 - f) * picked * (p_o - params.serve_cost());
    let not_picked = (1.0 - picked) * p_o;
    let picked_fails = picked * f * p_o;
    Ok(serves + not_picked + picked_fails)
}

/// The payoff at which the expected advantage equals `target`. The
/// advantage is `p_o - (1 - f)/n`, so this is `target + (1 - f)/n`.
/// Negative solutions are clamped to zero.
pub fn solve_payoff(n: usize, k: usize, f: f64, target: f64) -> Result<f64, IncentiveError> {
    validate(n, k, f)?;
    let payoff = target + (1.0 - f) / n as f64;
    if payoff < 0.0 {
        warn!(
            "payoff for n={n}, k={k}, f={f}, target={target} is negative ({payoff}); clamping to 0"
        );
        return Ok(0.0);
    }
    Ok(payoff)
}

/// Payoff that sets the advantage to `-f/n`: `(1 - 2f)/n`, zero from `f = 0.5`.
pub fn real_case_payoff(n: usize, k: usize, f: f64) -> Result<f64, IncentiveError> {
    solve_payoff(n, k, f, -f / n as f64)
}

/// Currency paid to each facilitator for a purchase at `price`.
pub fn payout_for_price(price: Amount, normalized_payoff: f64) -> Amount {
    price.scale(normalized_payoff)
}

/// Open interval of `k` values for which both the privacy (`k > b`) and
/// fairness (`k < n - b`) arguments hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KBounds {
    pub lower_exclusive: usize,
    pub upper_exclusive: usize,
}

impl KBounds {
    pub fn values(&self) -> Vec<usize> {
        (self.lower_exclusive + 1..self.upper_exclusive).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.lower_exclusive + 1 >= self.upper_exclusive
    }

    pub fn contains(&self, k: usize) -> bool {
        k > self.lower_exclusive && k < self.upper_exclusive
    }
}

/// `b < k < n - b`; empty once `b >= n/2`.
pub fn valid_k_bounds(n: usize, b: usize) -> KBounds {
    KBounds {
        lower_exclusive: b,
        upper_exclusive: n.saturating_sub(b),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbftBounds {
    pub lower: f64,
    pub upper: f64,
}

impl PbftBounds {
    pub fn values(&self) -> Vec<usize> {
        let first = self.lower.floor() as usize + 1;
        (first..).take_while(|&k| (k as f64) < self.upper).collect()
    }
}

/// With BFT consensus tolerating fewer than `n/3` faults: `n/3 < k < 2n/3`.
pub fn pbft_bounds(n: usize) -> PbftBounds {
    PbftBounds {
        lower: n as f64 / 3.0,
        upper: 2.0 * n as f64 / 3.0,
    }
}

/// One row of the payoff table printed by the CLI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoffRow {
    pub n: usize,
    pub k: usize,
    pub f: f64,
    pub target: f64,
    pub payoff: f64,
    pub advantage: f64,
}

pub fn payoff_table(
    n: usize,
    k: usize,
    failure_rates: &[f64],
) -> Result<Vec<PayoffRow>, IncentiveError> {
    failure_rates
        .iter()
        .map(|&f| {
            let target = -f / n as f64;
            let payoff = real_case_payoff(n, k, f)?;
            let advantage = expected_advantage(&IncentiveParams::new(n, k, f, payoff)?)?;
            Ok(PayoffRow {
                n,
                k,
                f,
                target,
                payoff,
                advantage,
            })
        })
        .collect()
}
