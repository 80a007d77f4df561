//! Reconstruction and rate losses with their gradients.

use std::cell::Cell;

use ndarray::Array2;

use crate::codec::{cost_time, width, CostMode};
use crate::error::{Error, Result};

thread_local! {
    static RATE_LOSS_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of rate-loss evaluations on the current thread.
pub fn rate_loss_calls() -> u64 {
    RATE_LOSS_CALLS.with(Cell::get)
}

fn count_rate_call() {
    RATE_LOSS_CALLS.with(|c| c.set(c.get() + 1));
}

/// Mean squared error and its gradient with respect to `x_hat`.
pub fn reconstruction(x: &Array2<f64>, x_hat: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if x.dim() != x_hat.dim() {
        return Err(Error::Shape(format!("target {:?} vs estimate {:?}", x.dim(), x_hat.dim())));
    }
    let m = x.len().max(1) as f64;
    let diff = x_hat - x;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / m;
    Ok((loss, diff * (2.0 / m)))
}

/// Rate loss value and `∂L_z/∂S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateLoss {
    pub value: f64,
    pub d_events: f64,
}

/// `max(0, B_time(S) − b0)` in exact mode; the offset term is held constant
/// in the derivative.
pub fn sparsity(n: u64, t: u64, s: u64, b0: f64) -> RateLoss {
    count_rate_call();
    let bits = cost_time(n, t, s, CostMode::Exact) as f64;
    if bits > b0 {
        RateLoss {
            value: bits - b0,
            d_events: width(t) as f64,
        }
    } else {
        RateLoss {
            value: 0.0,
            d_events: 0.0,
        }
    }
}

/// Event-count target for prompt `mu`.
pub fn target_events(n: u64, t: u64, mu: usize) -> f64 {
    (n * t) as f64 * (-(mu as f64) / 4.0).exp2()
}

/// `|S − S_0(μ)|`.
pub fn sparsity_mu(n: u64, t: u64, s: u64, mu: usize) -> RateLoss {
    count_rate_call();
    let diff = s as f64 - target_events(n, t, mu);
    RateLoss {
        value: diff.abs(),
        d_events: if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        },
    }
}
