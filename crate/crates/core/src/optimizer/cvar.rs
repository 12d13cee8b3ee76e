//! Conditional value-at-risk of an empirical distribution.

use crate::error::{Error, Result};

/// Exact CVaR of equally weighted samples: the mean of the worst
/// `alpha * N` samples, with a fractional weight on the boundary sample.
///
/// Equals `inf_s s + E[max(Z - s, 0)] / alpha` for the empirical law.
pub fn cvar(samples: &[f64], alpha: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("cvar of an empty sample set"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len() as f64;
    let k = alpha * n;
    if k <= 1.0 + 1e-12 {
        return Ok(sorted[0]);
    }
    let mut remaining = k;
    let mut acc = 0.0;
    for &z in &sorted {
        let w = remaining.min(1.0);
        if w <= 0.0 {
            break;
        }
        acc += w * z;
        remaining -= w;
    }
    Ok(acc / k)
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// CVaR with the hinge replaced by `tau * softplus(. / tau)`.
///
/// Returns the value and its gradient with respect to each sample. The value
/// is never below the exact CVaR, and the gradient sums to one.
pub fn smoothed_cvar(samples: &[f64], alpha: f64, tau: f64) -> (f64, Vec<f64>) {
    let n = samples.len();
    let nf = n as f64;
    let an = alpha * nf;
    if samples.iter().all(|&z| z == f64::NEG_INFINITY) {
        return (f64::NEG_INFINITY, vec![0.0; n]);
    }
    if an >= nf * (1.0 - 1e-12) {
        let mean = samples.iter().sum::<f64>() / nf;
        return (mean, vec![1.0 / nf; n]);
    }
    let finite = samples.iter().copied().filter(|z| z.is_finite());
    let lo0 = finite.clone().fold(f64::INFINITY, f64::min);
    let hi0 = finite.fold(f64::NEG_INFINITY, f64::max);
    // mass above s, decreasing in s; root of mass(s) = alpha N
    let mass = |s: f64| samples.iter().map(|&z| sigmoid((z - s) / tau)).sum::<f64>();
    let (mut lo, mut hi) = (lo0 - 60.0 * tau, hi0 + 60.0 * tau);
    while mass(lo) < an {
        lo -= 60.0 * tau;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > an {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * (1.0 + mid.abs()) {
            break;
        }
    }
    let s = 0.5 * (lo + hi);
    let value = s + samples.iter().map(|&z| tau * softplus((z - s) / tau)).sum::<f64>() / an;
    let grad = samples.iter().map(|&z| sigmoid((z - s) / tau) / an).collect();
    (value, grad)
}
