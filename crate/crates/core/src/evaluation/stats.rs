//! Aggregation over (location, model) grids and the one-sided Welch test.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::MetricsRecord;
use crate::error::{Error, Result};

/// Mean and sample standard deviation over locations of the per-location means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub per_location: Vec<f64>,
}

impl Stat {
    pub fn from_locations(rho: Vec<f64>) -> Self {
        let n = rho.len() as f64;
        let mean = rho.iter().sum::<f64>() / n;
        let std = if rho.len() > 1 {
            (rho.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat {
            mean,
            std,
            per_location: rho,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub epsilon: f64,
    pub n_location: usize,
    pub n_model: usize,
    pub final_error: Stat,
    pub collision: Stat,
    pub energy: Stat,
}

/// Group by `(method, epsilon)` and average over `j` then over `i`.
/// Every group must hold the same full `i x j` grid exactly once.
pub fn aggregate(records: &[MetricsRecord]) -> Result<Vec<Aggregate>> {
    type Cell = (String, u64);
    let mut groups: BTreeMap<Cell, BTreeMap<usize, BTreeMap<usize, &MetricsRecord>>> = BTreeMap::new();
    for r in records {
        let cell = groups.entry((r.method.clone(), r.epsilon.to_bits())).or_default();
        if cell.entry(r.i).or_default().insert(r.j, r).is_some() {
            return Err(Error::RaggedGrid(format!("duplicate cell {} i={} j={}", r.method, r.i, r.j)));
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    let mut shape: Option<(Vec<usize>, Vec<usize>)> = None;
    for ((method, eps), locs) in groups {
        let is: Vec<usize> = locs.keys().copied().collect();
        let js: Vec<usize> = locs.values().next().map(|m| m.keys().copied().collect()).unwrap_or_default();
        if locs.values().any(|m| m.keys().copied().collect::<Vec<_>>() != js) {
            return Err(Error::RaggedGrid(format!("{method} has unequal model counts per location")));
        }
        match &shape {
            None => shape = Some((is.clone(), js.clone())),
            Some(s) if *s != (is.clone(), js.clone()) => {
                return Err(Error::RaggedGrid(format!("{method} covers a different grid than the other methods")));
            }
            _ => {}
        }
        let per = |f: fn(&MetricsRecord) -> f64| -> Vec<f64> {
            locs.values().map(|m| m.values().map(|r| f(r)).sum::<f64>() / m.len() as f64).collect()
        };
        out.push(Aggregate {
            method,
            epsilon: f64::from_bits(eps),
            n_location: is.len(),
            n_model: js.len(),
            final_error: Stat::from_locations(per(|r| r.rho_final)),
            collision: Stat::from_locations(per(|r| r.rho_collision as f64)),
            energy: Stat::from_locations(per(|r| r.rho_energy)),
        });
    }
    Ok(out)
}

/// Alternative hypothesis of the one-sided test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `mean(a) < mean(b)`.
    Less,
    /// `mean(a) > mean(b)`.
    Greater,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub significant: bool,
    /// Both samples had zero variance; `p` is set by convention.
    pub degenerate: bool,
}

pub const SIGNIFICANCE: f64 = 0.05;

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// One-sided Welch two-sample t-test with Welch-Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64], direction: Direction) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("t-test needs at least two values per sample"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("t-test samples must be finite"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        // constant samples: the ordering of the means decides
        let diff = match direction {
            Direction::Less => mb - ma,
            Direction::Greater => ma - mb,
        };
        let p = if diff > 0.0 {
            0.0
        } else if diff < 0.0 {
            1.0
        } else {
            0.5
        };
        let t = if ma == mb { 0.0 } else { f64::INFINITY.copysign(ma - mb) };
        return Ok(TTest {
            t,
            df: f64::NAN,
            p,
            significant: p < SIGNIFICANCE,
            degenerate: true,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid(e.to_string()))?;
    let p = match direction {
        Direction::Less => dist.cdf(t),
        Direction::Greater => dist.sf(t),
    };
    Ok(TTest {
        t,
        df,
        p,
        significant: p < SIGNIFICANCE,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(method: &str, i: usize, j: usize, v: f64) -> MetricsRecord {
        MetricsRecord {
            method: method.into(),
            i,
            j,
            epsilon: 0.2,
            rho_final: v,
            rho_collision: 0,
            rho_energy: 2.0 * v,
            valid: true,
        }
    }

    #[test]
    fn constant_records() {
        let r: Vec<_> = (0..3).flat_map(|i| (0..4).map(move |j| rec("A", i, j, 1.5))).collect();
        let a = &aggregate(&r).unwrap()[0];
        assert_eq!((a.final_error.mean, a.final_error.std), (1.5, 0.0));
        assert_eq!((a.n_location, a.n_model), (3, 4));
    }

    #[test]
    fn two_locations_hand_formula() {
        let r = vec![rec("A", 0, 0, 0.0), rec("A", 0, 1, 0.0), rec("A", 1, 0, 1.0), rec("A", 1, 1, 3.0)];
        let a = &aggregate(&r).unwrap()[0];
        assert_eq!(a.final_error.per_location, vec![0.0, 2.0]);
        assert!((a.final_error.mean - 1.0).abs() < 1e-15);
        assert!((a.final_error.std - 2f64.sqrt()).abs() < 1e-15);
        assert!((a.energy.mean - 2.0).abs() < 1e-15);
    }

    #[test]
    fn ragged_grids_are_rejected() {
        let mut r = vec![rec("A", 0, 0, 0.0), rec("A", 0, 1, 0.0), rec("A", 1, 0, 1.0)];
        assert!(matches!(aggregate(&r), Err(Error::RaggedGrid(_))));
        r.push(rec("A", 1, 0, 1.0));
        assert!(matches!(aggregate(&r), Err(Error::RaggedGrid(_))));
        let r = vec![rec("A", 0, 0, 0.0), rec("B", 1, 0, 0.0)];
        assert!(matches!(aggregate(&r), Err(Error::RaggedGrid(_))));
    }

    #[test]
    fn welch_reference_case() {
        let t = welch_t_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], Direction::Less).unwrap();
        assert!((t.t + 3.674).abs() < 1e-3 && (t.df - 4.0).abs() < 1e-12);
        assert!((t.p - 0.0106).abs() < 5e-4, "{}", t.p);
        // closed-form Student-t CDF at four degrees of freedom
        let x = t.t;
        let q = 1.0 + x * x / 4.0;
        let cdf4 = 0.5 + 0.375 * x / q.sqrt() * (1.0 - x * x / (12.0 * q));
        assert!((t.p - cdf4).abs() < 1e-10);
        assert!(t.significant && !t.degenerate);
        let swapped = welch_t_test(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0], Direction::Less).unwrap();
        assert!((swapped.p - (1.0 - t.p)).abs() < 1e-12);
    }

    #[test]
    fn identical_inputs() {
        let x = [0.3, 0.9, 0.4];
        let t = welch_t_test(&x, &x, Direction::Less).unwrap();
        assert_eq!((t.t, t.p), (0.0, 0.5));
        let c = welch_t_test(&[1.0, 1.0], &[1.0, 1.0], Direction::Greater).unwrap();
        assert!(c.degenerate && c.p == 0.5);
        assert!(welch_t_test(&[1.0], &[2.0, 3.0], Direction::Less).is_err());
    }

    proptest! {
        #[test]
        fn permuting_models_keeps_location_means(v in prop::collection::vec(0.0f64..10.0, 6), rot in 0usize..3) {
            let a: Vec<_> = (0..2).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| rec("A", i, j, v[3 * i + j])).collect();
            let b: Vec<_> = (0..2).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| rec("A", i, (j + rot) % 3, v[3 * i + j])).collect();
            let (x, y) = (&aggregate(&a).unwrap()[0], &aggregate(&b).unwrap()[0]);
            for (p, q) in x.final_error.per_location.iter().zip(&y.final_error.per_location) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn one_sided_p_values_are_complementary(a in prop::collection::vec(-5.0f64..5.0, 2..8), b in prop::collection::vec(-5.0f64..5.0, 2..8)) {
            let l = welch_t_test(&a, &b, Direction::Less).unwrap();
            let g = welch_t_test(&a, &b, Direction::Greater).unwrap();
            if !l.degenerate {
                prop_assert!((l.p + g.p - 1.0).abs() < 1e-9);
            }
        }
    }
}
