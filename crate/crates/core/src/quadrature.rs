//! Symmetric quadrature rules on the reference triangle.
//!
//! Weights are normalized to sum to one; multiply by the triangle area at the
//! use site.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    /// Barycentric coordinates of each point.
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// Highest total polynomial degree integrated exactly.
    pub order: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; 3], f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

fn orbit3(a: f64, w: f64, pts: &mut Vec<[f64; 3]>, ws: &mut Vec<f64>) {
    let b = 1.0 - 2.0 * a;
    for p in [[b, a, a], [a, b, a], [a, a, b]] {
        pts.push(p);
        ws.push(w);
    }
}

/// Returns a rule exact for total degree `order` (1..=4).
///
/// Orders 3 and 4 share the six-point Dunavant rule, which is exact to
/// degree 4 and has strictly positive weights.
pub fn quadrature(order: usize) -> Result<QuadratureRule> {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match order {
        1 => {
            points.push([1.0 / 3.0; 3]);
            weights.push(1.0);
        }
        2 => orbit3(1.0 / 6.0, 1.0 / 3.0, &mut points, &mut weights),
        3 | 4 => {
            orbit3(
                0.445_948_490_915_965,
                0.223_381_589_678_011,
                &mut points,
                &mut weights,
            );
            orbit3(
                0.091_576_213_509_771,
                0.109_951_743_655_322,
                &mut points,
                &mut weights,
            );
            // renormalize away the last-digit rounding of the tabulated weights
            let s: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= s);
        }
        _ => {
            return Err(Error::Argument(format!(
                "quadrature order {order} unsupported (expected 1..=4)"
            )))
        }
    }
    Ok(QuadratureRule {
        points,
        weights,
        order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact integral of x^a y^b over the reference triangle: a! b! / (a+b+2)!
    fn monomial_exact(a: u32, b: u32) -> f64 {
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        fact(a) * fact(b) / fact(a + b + 2)
    }

    fn integrate(rule: &QuadratureRule, f: impl Fn(f64, f64) -> f64) -> f64 {
        // reference triangle (0,0),(1,0),(0,1), area 1/2
        rule.iter()
            .map(|(l, w)| w * f(l[1], l[2]))
            .sum::<f64>()
            * 0.5
    }

    #[test]
    fn centroid_rule() {
        let r = quadrature(1).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.weights[0], 1.0);
        assert_eq!(r.points[0], [1.0 / 3.0; 3]);
    }

    #[test]
    fn xy_with_order_two() {
        let r = quadrature(2).unwrap();
        let v = integrate(&r, |x, y| x * y);
        assert!((v - 1.0 / 24.0).abs() <= 1e-13 / 24.0);
    }

    #[test]
    fn exact_up_to_declared_order() {
        for order in 1..=4 {
            let r = quadrature(order).unwrap();
            assert!(r.weights.iter().all(|&w| w > 0.0));
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            for deg in 0..=order as u32 {
                for a in 0..=deg {
                    let b = deg - a;
                    let exact = monomial_exact(a, b);
                    let got = integrate(&r, |x, y| x.powi(a as i32) * y.powi(b as i32));
                    assert!(
                        ((got - exact) / exact).abs() <= 1e-13,
                        "order {order} x^{a} y^{b}: {got} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn unsupported_order() {
        assert!(matches!(quadrature(0), Err(Error::Argument(_))));
        assert!(matches!(quadrature(5), Err(Error::Argument(_))));
    }
}
