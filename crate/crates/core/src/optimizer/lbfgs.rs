//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsSettings {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the largest gradient entry falls below this.
    pub grad_tol: f64,
    /// Stop once the relative decrease of one iteration falls below this.
    pub rel_tol: f64,
    /// Largest entry of the first step.
    pub first_step: f64,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        LbfgsSettings {
            memory: 10,
            max_iter: 100,
            grad_tol: 1e-6,
            rel_tol: 1e-10,
            first_step: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimize `f`, which returns the value and gradient at a point. Errors
/// from `f` abort the run. A non-finite value at a trial point is treated as
/// a failed Armijo test.
pub fn minimize<F, E>(mut f: F, x0: Vec<f64>, s: &LbfgsSettings) -> Result<LbfgsResult, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    let mut evals = 1;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(s.memory);
    let mut iterations = 0;
    let mut converged = inf_norm(&g) <= s.grad_tol;

    while !converged && iterations < s.max_iter && fx.is_finite() {
        iterations += 1;
        let mut d = two_loop(&g, &hist);
        if hist.is_empty() {
            let gn = inf_norm(&g);
            d.iter_mut().for_each(|v| *v *= s.first_step / gn);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v * s.first_step / inf_norm(&g)).collect();
            slope = dot(&g, &d);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let (ft, gt) = f(&xt)?;
            evals += 1;
            if ft.is_finite() && ft <= fx + 1e-4 * t * slope {
                accepted = Some((xt, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if hist.is_empty() {
                break;
            }
            hist.clear();
            continue;
        };

        let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dy: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&step, &dy);
        if sy > 1e-12 * dot(&dy, &dy).sqrt() * dot(&step, &step).sqrt() {
            if hist.len() == s.memory {
                hist.pop_front();
            }
            hist.push_back((step, dy, 1.0 / sy));
        }
        let decrease = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        converged = inf_norm(&g) <= s.grad_tol || decrease <= s.rel_tol * fx.abs().max(1.0);
    }
    Ok(LbfgsResult {
        x,
        value: fx,
        grad: g,
        iterations,
        evaluations: evals,
        converged,
    })
}

/// `-H g` with the inverse Hessian approximation held in `hist`.
fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>), ()> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let s = LbfgsSettings {
            max_iter: 500,
            grad_tol: 1e-8,
            rel_tol: 0.0,
            ..Default::default()
        };
        let r = minimize(rosenbrock, vec![-1.2, 1.0], &s).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn quadratic_in_few_steps() {
        let diag = [1.0, 10.0, 100.0, 3.0];
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>), ()> {
            let v = x.iter().zip(&diag).map(|(a, d)| 0.5 * d * a * a).sum();
            Ok((v, x.iter().zip(&diag).map(|(a, d)| d * a).collect()))
        };
        let s = LbfgsSettings {
            grad_tol: 1e-10,
            rel_tol: 0.0,
            ..Default::default()
        };
        let r = minimize(f, vec![1.0; 4], &s).unwrap();
        assert!(r.converged && r.iterations < 30, "{} iterations", r.iterations);
        assert!(r.value < 1e-18);
    }

    #[test]
    fn propagates_errors() {
        let r = minimize(|_: &[f64]| Err::<(f64, Vec<f64>), _>("boom"), vec![0.0], &LbfgsSettings::default());
        assert_eq!(r.unwrap_err(), "boom");
    }
}
