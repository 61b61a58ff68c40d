//! Pseudometric descriptors for output and input spaces.
//!
//! Systems never carry distance closures; they carry a [`Pseudometric`]
//! descriptor that is evaluated on raw value vectors. Four kinds cover
//! everything the toolkit needs: the infinity norm, the discrete 0/1
//! metric, the always-zero pseudometric (used for one-symbol "unit"
//! alphabets), and a max-composition of parts (used for stacked outputs,
//! stacked external inputs and neighbor-output tuples).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack used in every comparison against a bound (epsilon, mu,
/// delta). Grid-boundary cases would otherwise flip nondeterministically
/// across platforms on the last ulp.
pub const SLACK: f64 = 1e-12;

/// `a <= b` up to [`SLACK`].
#[inline]
pub fn leq(a: f64, b: f64) -> bool {
    a <= b + SLACK
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Pseudometric {
    /// Infinity norm on R^dim.
    Linf { dim: usize },
    /// 0 if the vectors are identical, 1 otherwise.
    Discrete { dim: usize },
    /// Always 0. The natural space for unit alphabets (`dim` may be 0).
    Zero { dim: usize },
    /// Max of part distances over a concatenation of part vectors.
    /// This realizes both the composed output/input metrics and the
    /// neighbor-output pseudometric on internal inputs.
    Max { parts: Vec<Pseudometric> },
}

impl Pseudometric {
    pub fn dim(&self) -> usize {
        match self {
            Pseudometric::Linf { dim }
            | Pseudometric::Discrete { dim }
            | Pseudometric::Zero { dim } => *dim,
            Pseudometric::Max { parts } => parts.iter().map(|p| p.dim()).sum(),
        }
    }

    /// Max-composition over an ordered list of parts, one per neighbor.
    /// An empty neighbor list degenerates to the zero pseudometric on the
    /// empty product, matching the unit internal alphabet convention.
    pub fn max_over(parts: Vec<Pseudometric>) -> Pseudometric {
        if parts.is_empty() {
            Pseudometric::Zero { dim: 0 }
        } else {
            Pseudometric::Max { parts }
        }
    }

    fn check_dims(&self, a: &[f64], b: &[f64]) -> Result<()> {
        let d = self.dim();
        if a.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: a.len(),
            });
        }
        if b.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: b.len(),
            });
        }
        Ok(())
    }

    /// Distance between two value vectors of this space.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.check_dims(a, b)?;
        Ok(self.distance_unchecked(a, b))
    }

    pub(crate) fn distance_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Pseudometric::Linf { .. } => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
            Pseudometric::Discrete { .. } => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
            Pseudometric::Zero { .. } => 0.0,
            Pseudometric::Max { parts } => {
                let mut off = 0;
                let mut worst = 0.0f64;
                for p in parts {
                    let d = p.dim();
                    worst = worst.max(p.distance_unchecked(&a[off..off + d], &b[off..off + d]));
                    off += d;
                }
                worst
            }
        }
    }

    /// Structural equality is what "subsets of the same pseudometric space"
    /// means for finite systems; relation checks demand it.
    pub fn same_space(&self, other: &Pseudometric) -> bool {
        self == other
    }
}

/// Output-space distance (the composed case is a max of component
/// distances; the component case is the infinity norm).
pub fn output_distance(d: &Pseudometric, y1: &[f64], y2: &[f64]) -> Result<f64> {
    d.distance(y1, y2)
}

/// Internal-input distance between two neighbor-output tuples; 0 when the
/// neighbor list is empty.
pub fn internal_input_distance(d: &Pseudometric, u1: &[f64], u2: &[f64]) -> Result<f64> {
    d.distance(u1, u2)
}

/// Outcome of a pseudometric axiom check on a finite sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AxiomReport {
    pub ok: bool,
    /// (axiom name, indices of the offending sample points).
    pub counterexample: Option<(&'static str, Vec<usize>)>,
}

/// Checks identity-on-diagonal, non-negativity, symmetry and the triangle
/// inequality on all triples of the sample. Takes an arbitrary distance
/// function so that deliberately broken distances can be probed in tests.
pub fn verify_pseudometric_axioms<F>(dist: F, sample: &[Vec<f64>]) -> AxiomReport
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    for (i, a) in sample.iter().enumerate() {
        if dist(a, a).abs() > SLACK {
            return AxiomReport {
                ok: false,
                counterexample: Some(("identity", vec![i])),
            };
        }
    }
    for (i, a) in sample.iter().enumerate() {
        for (j, b) in sample.iter().enumerate() {
            let dij = dist(a, b);
            if dij < -SLACK {
                return AxiomReport {
                    ok: false,
                    counterexample: Some(("nonnegativity", vec![i, j])),
                };
            }
            if (dij - dist(b, a)).abs() > SLACK {
                return AxiomReport {
                    ok: false,
                    counterexample: Some(("symmetry", vec![i, j])),
                };
            }
        }
    }
    for (i, a) in sample.iter().enumerate() {
        for (j, b) in sample.iter().enumerate() {
            for (k, c) in sample.iter().enumerate() {
                if dist(a, c) > dist(a, b) + dist(b, c) + SLACK {
                    return AxiomReport {
                        ok: false,
                        counterexample: Some(("triangle", vec![i, j, k])),
                    };
                }
            }
        }
    }
    AxiomReport {
        ok: true,
        counterexample: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linf_matches_componentwise_max() {
        let d = Pseudometric::Linf { dim: 2 };
        assert_eq!(d.distance(&[1.0, 2.0], &[4.0, 3.0]).unwrap(), 3.0);
        assert_eq!(d.distance(&[4.0, 3.0], &[1.0, 2.0]).unwrap(), 3.0);
        assert_eq!(d.distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn scalar_linf_is_absolute_difference() {
        let d = Pseudometric::Linf { dim: 1 };
        assert_eq!(d.distance(&[2.5], &[-1.0]).unwrap(), 3.5);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let d = Pseudometric::Linf { dim: 2 };
        assert!(d.distance(&[1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn empty_neighbor_tuple_has_zero_distance() {
        let d = Pseudometric::max_over(vec![]);
        assert_eq!(d.distance(&[], &[]).unwrap(), 0.0);
    }

    #[test]
    fn neighbor_tuple_distance_is_max_of_parts() {
        let d = Pseudometric::max_over(vec![
            Pseudometric::Linf { dim: 1 },
            Pseudometric::Linf { dim: 1 },
        ]);
        let u1 = [0.0, 0.0];
        let u2 = [0.4, 0.1];
        assert!((d.distance(&u1, &u2).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(d.distance(&u1, &u1).unwrap(), 0.0);
    }

    #[test]
    fn max_composition_over_stacked_vector_equals_plain_linf() {
        // Eq-style identity: splitting a stacked vector into parts does not
        // change the infinity-norm distance, in any split order.
        let whole = Pseudometric::Linf { dim: 3 };
        let split = Pseudometric::max_over(vec![
            Pseudometric::Linf { dim: 2 },
            Pseudometric::Linf { dim: 1 },
        ]);
        let a = [0.3, -1.0, 2.0];
        let b = [0.1, 0.5, 1.0];
        assert_eq!(
            whole.distance(&a, &b).unwrap(),
            split.distance(&a, &b).unwrap()
        );
    }

    #[test]
    fn axioms_hold_for_builtin_metrics() {
        let mut sample = Vec::new();
        let mut v: f64 = 0.37;
        for _ in 0..40 {
            v = (v * 997.13).fract();
            let w = (v * 31.7).fract();
            sample.push(vec![v * 10.0 - 5.0, w * 4.0]);
        }
        let linf = Pseudometric::Linf { dim: 2 };
        assert!(verify_pseudometric_axioms(|a, b| linf.distance_unchecked(a, b), &sample).ok);
        let disc = Pseudometric::Discrete { dim: 2 };
        assert!(verify_pseudometric_axioms(|a, b| disc.distance_unchecked(a, b), &sample).ok);
    }

    #[test]
    fn broken_distance_is_rejected_with_counterexample() {
        let report = verify_pseudometric_axioms(|_, _| -1.0, &[vec![0.0], vec![1.0]]);
        assert!(!report.ok);
        let (axiom, _) = report.counterexample.unwrap();
        assert_eq!(axiom, "identity");
    }

    #[test]
    fn descriptor_json_round_trip() {
        let d = Pseudometric::max_over(vec![
            Pseudometric::Linf { dim: 1 },
            Pseudometric::Zero { dim: 0 },
        ]);
        let s = serde_json::to_string(&d).unwrap();
        assert!(s.contains("\"metric\":\"max\""));
        let back: Pseudometric = serde_json::from_str(&s).unwrap();
        assert_eq!(d, back);
    }

    proptest! {
        #[test]
        fn prop_linf_symmetry_and_triangle(
            a in prop::collection::vec(-50.0f64..50.0, 3),
            b in prop::collection::vec(-50.0f64..50.0, 3),
            c in prop::collection::vec(-50.0f64..50.0, 3),
        ) {
            let d = Pseudometric::Linf { dim: 3 };
            let ab = d.distance(&a, &b).unwrap();
            let ba = d.distance(&b, &a).unwrap();
            let ac = d.distance(&a, &c).unwrap();
            let cb = d.distance(&c, &b).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab <= ac + cb + 1e-12);
        }
    }
}
