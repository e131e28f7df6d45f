//! Tensor Gauss-Hermite cubature over momentum variables, centred and
//! whitened by a Gaussian envelope of the integrand.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::quadrature::hermite_normal;
use crate::types::Vec3;

/// Quadratic form `sum_r a_r |base_r + row_r . x|^2` in `dim` 3-vector variables.
#[derive(Clone, Debug, Default)]
pub struct Envelope {
    pub dim: usize,
    terms: Vec<(f64, Vec3, Vec<f64>)>,
}

impl Envelope {
    pub fn new(dim: usize) -> Self {
        Envelope { dim, terms: Vec::new() }
    }

    pub fn add(&mut self, a: f64, base: Vec3, row: Vec<f64>) {
        assert_eq!(row.len(), self.dim);
        if a > 0.0 && row.iter().any(|&r| r != 0.0) {
            self.terms.push((a, base, row));
        }
    }

    /// Cubature nodes `x = mu + P^{-1/2} z` for the normal law with precision `P`
    /// read off the form; `ridge` is added to the precision diagonal.
    pub fn rule(&self, nodes_per_dim: usize, budget: usize, ridge: f64) -> Result<Cubature> {
        let d = self.dim;
        if d == 0 {
            return Ok(Cubature {
                points: vec![Vec::new()],
                weights: vec![1.0],
            });
        }
        let mut a = DMatrix::<f64>::zeros(d, d);
        let mut lin = DMatrix::<f64>::zeros(d, 3);
        for (w, b, r) in &self.terms {
            for i in 0..d {
                for j in 0..d {
                    a[(i, j)] += w * r[i] * r[j];
                }
                for c in 0..3 {
                    lin[(i, c)] += w * r[i] * b[c];
                }
            }
        }
        let mut p = &a * 2.0;
        for i in 0..d {
            p[(i, i)] += ridge;
        }
        let eig = SymmetricEigen::new(p.clone());
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Numeric("momentum envelope is not positive definite".into()));
        }
        let inv = eig.eigenvectors.clone()
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l))
            * eig.eigenvectors.transpose();
        let half = eig.eigenvectors.clone()
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
            * eig.eigenvectors.transpose();
        let mean = -(&inv * &lin) * 2.0;
        let det: f64 = eig.eigenvalues.iter().product();
        let total_dims = 3 * d;
        let count = nodes_per_dim.checked_pow(total_dims as u32).unwrap_or(usize::MAX);
        if count > budget {
            return Err(Error::Budget {
                what: "momentum cubature nodes".into(),
                needed: count,
                limit: budget,
            });
        }
        let rule = hermite_normal(nodes_per_dim);
        let norm = (2.0 * std::f64::consts::PI).powf(total_dims as f64 / 2.0) * det.powf(-1.5);
        let mut points = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        let mut idx = vec![0usize; total_dims];
        loop {
            let mut w = norm;
            let mut z = DMatrix::<f64>::zeros(d, 3);
            for (k, &i) in idx.iter().enumerate() {
                let (x, wx) = rule[i];
                w *= wx * (0.5 * x * x).exp();
                z[(k / 3, k % 3)] = x;
            }
            let x = &mean + &half * z;
            points.push((0..d).map(|i| [x[(i, 0)], x[(i, 1)], x[(i, 2)]]).collect());
            weights.push(w);
            let mut k = 0;
            loop {
                if k == total_dims {
                    return Ok(Cubature { points, weights });
                }
                idx[k] += 1;
                if idx[k] < nodes_per_dim {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cubature {
    pub points: Vec<Vec<Vec3>>,
    pub weights: Vec<f64>,
}

impl Cubature {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::norm2;

    #[test]
    fn integrates_shifted_gaussian_times_polynomial() {
        let mut e = Envelope::new(1);
        e.add(0.5, [0.3, -0.2, 0.1], vec![1.0]);
        let rule = e.rule(8, 1 << 20, 0.0).unwrap();
        let v: f64 = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| {
                let y = [x[0][0] + 0.3, x[0][1] - 0.2, x[0][2] + 0.1];
                w * (-0.5 * norm2(y)).exp() * (1.0 + norm2(y))
            })
            .sum();
        let want = (2.0 * std::f64::consts::PI).powf(1.5) * 4.0;
        assert!((v - want).abs() < 1e-10 * want);
    }

    #[test]
    fn budget_is_enforced() {
        let mut e = Envelope::new(2);
        e.add(1.0, [0.0; 3], vec![1.0, 0.0]);
        e.add(1.0, [0.0; 3], vec![0.0, 1.0]);
        assert!(matches!(e.rule(10, 1000, 0.0), Err(Error::Budget { .. })));
        assert_eq!(Envelope::new(0).rule(10, 1, 0.0).unwrap().len(), 1);
    }
}
