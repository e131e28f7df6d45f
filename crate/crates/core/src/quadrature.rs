//! Quadrature rules shared by the engine and the oracle.

use gauss_quad::{GaussHermite, GaussLegendre};

use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn legendre(n: usize) -> Vec<(f64, f64)> {
    if n == 1 {
        return vec![(0.0, 2.0)];
    }
    let mut pairs = GaussLegendre::new(n)
        .expect("degree >= 2")
        .into_node_weight_pairs();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

/// Gauss-Hermite rule for the standard normal density: `E[f(X)] ~ sum w f(x)`.
pub fn hermite_normal(n: usize) -> Vec<(f64, f64)> {
    if n == 1 {
        return vec![(0.0, 1.0)];
    }
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = GaussHermite::new(n)
        .expect("degree >= 2")
        .into_node_weight_pairs()
        .into_iter()
        .map(|(x, w)| (x * std::f64::consts::SQRT_2, w / sqrt_pi))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

fn legendre_values(x: f64, n: usize) -> Vec<f64> {
    let mut p = vec![1.0; n + 2];
    if n + 2 > 1 {
        p[1] = x;
    }
    for k in 1..n + 1 {
        p[k + 1] = ((2 * k + 1) as f64 * x * p[k] - k as f64 * p[k - 1]) / (k + 1) as f64;
    }
    p
}

/// Gauss-Legendre collocation on `[0, 1]` with the cumulative integration matrix
/// `cum[i][j] = int_0^{x_i} l_j(x) dx` of the Lagrange basis.
#[derive(Clone, Debug)]
pub struct Collocation {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub cum: Vec<Vec<f64>>,
}

impl Collocation {
    pub fn new(n: usize) -> Self {
        let rule = legendre(n);
        let t: Vec<f64> = rule.iter().map(|p| p.0).collect();
        let wt: Vec<f64> = rule.iter().map(|p| p.1).collect();
        let pv: Vec<Vec<f64>> = t.iter().map(|&ti| legendre_values(ti, n)).collect();
        let mut cum = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                // l_j(t) = sum_k w_j P_k(t_j) (2k+1)/2 P_k(t), exact for k < n
                let mut s = wt[j] / 2.0 * (t[i] + 1.0);
                for k in 1..n {
                    s += wt[j] * pv[j][k] * (pv[i][k + 1] - pv[i][k - 1]) / 2.0;
                }
                cum[i][j] = s / 2.0;
            }
        }
        Collocation {
            x: t.iter().map(|v| 0.5 * (v + 1.0)).collect(),
            w: wt.iter().map(|v| v / 2.0).collect(),
            cum,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Endpoint of an oriented time path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum End {
    Finite(f64),
    PlusInfinity,
    MinusInfinity,
}

/// Node of a path panel: time and `d tau / d x` for the panel reference variable.
#[derive(Clone, Copy, Debug)]
pub struct PathNode {
    pub t: f64,
    pub dt: f64,
}

/// An oriented path `a -> b` cut into collocation panels. Infinite ends use the
/// map `t = t_end -/+ (1 - u)/u`, cut where the offset from `t_end` reaches `tail`.
#[derive(Clone, Debug)]
pub struct Path {
    pub rule: Collocation,
    pub panels: Vec<Vec<PathNode>>,
}

impl Path {
    pub fn new(a: End, b: End, spacing: f64, tail: f64, order: usize) -> Result<Path> {
        if !(spacing > 0.0) || !(tail >= 0.0) {
            return Err(Error::Input("path spacing and tail must be positive".into()));
        }
        let rule = Collocation::new(order);
        let panels = match (a, b) {
            (End::Finite(a), End::Finite(b)) => finite_panels(&rule, a, b, spacing),
            (End::Finite(a), End::PlusInfinity) => half_line(&rule, a, 1.0, spacing, tail),
            (End::Finite(a), End::MinusInfinity) => half_line(&rule, a, -1.0, spacing, tail),
            (End::MinusInfinity, End::Finite(b)) => reversed(half_line(&rule, b, -1.0, spacing, tail)),
            (End::PlusInfinity, End::Finite(b)) => reversed(half_line(&rule, b, 1.0, spacing, tail)),
            (End::MinusInfinity, End::PlusInfinity) => {
                let mut p = reversed(half_line(&rule, 0.0, -1.0, spacing, tail));
                p.extend(half_line(&rule, 0.0, 1.0, spacing, tail));
                p
            }
            (End::PlusInfinity, End::MinusInfinity) => {
                let mut p = reversed(half_line(&rule, 0.0, 1.0, spacing, tail));
                p.extend(half_line(&rule, 0.0, -1.0, spacing, tail));
                p
            }
            _ => return Err(Error::Input("degenerate path between equal infinities".into())),
        };
        Ok(Path { rule, panels })
    }

    pub fn node_count(&self) -> usize {
        self.panels.len() * self.rule.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &PathNode> {
        self.panels.iter().flatten()
    }
}

fn finite_panels(rule: &Collocation, a: f64, b: f64, spacing: f64) -> Vec<Vec<PathNode>> {
    if a == b {
        return Vec::new();
    }
    let k = ((b - a).abs() / spacing).ceil().max(1.0) as usize;
    let h = (b - a) / k as f64;
    (0..k)
        .map(|p| {
            let t0 = a + p as f64 * h;
            rule.x.iter().map(|&x| PathNode { t: t0 + x * h, dt: h }).collect()
        })
        .collect()
}

fn half_line(rule: &Collocation, start: f64, dir: f64, spacing: f64, tail: f64) -> Vec<Vec<PathNode>> {
    let k = (tail / spacing).ceil().max(1.0) as usize;
    (0..k)
        .map(|p| {
            let u0 = 1.0 / (1.0 + p as f64 * spacing);
            let u1 = 1.0 / (1.0 + (p + 1) as f64 * spacing);
            rule.x
                .iter()
                .map(|&x| {
                    let u = u0 + x * (u1 - u0);
                    PathNode {
                        t: start + dir * (1.0 - u) / u,
                        dt: -dir * (u1 - u0) / (u * u),
                    }
                })
                .collect()
        })
        .collect()
}

fn reversed(panels: Vec<Vec<PathNode>>) -> Vec<Vec<PathNode>> {
    panels
        .into_iter()
        .rev()
        .map(|p| p.into_iter().rev().map(|n| PathNode { t: n.t, dt: -n.dt }).collect())
        .collect()
}

/// Double-exponential (tanh-sinh) rule on `[-1, 1]` with step `h`.
pub fn tanh_sinh(h: f64) -> Vec<(f64, f64)> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut out = Vec::new();
    let mut k = 0i64;
    loop {
        let s = k as f64 * h;
        let arg = half_pi * s.sinh();
        let x = arg.tanh();
        let c = arg.cosh();
        let w = h * half_pi * s.cosh() / (c * c);
        if w < 1e-300 || 1.0 - x < 1e-300 {
            break;
        }
        if k == 0 {
            out.push((0.0, w));
        } else {
            out.push((x, w));
            out.push((-x, w));
        }
        k += 1;
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collocation_integrates_polynomials_cumulatively() {
        let c = Collocation::new(8);
        for (i, &xi) in c.x.iter().enumerate() {
            let v: f64 = (0..8).map(|j| c.cum[i][j] * c.x[j].powi(5)).sum();
            assert!((v - xi.powi(6) / 6.0).abs() < 1e-14);
        }
    }

    #[test]
    fn hermite_normal_moments() {
        let r = hermite_normal(12);
        let m2: f64 = r.iter().map(|(x, w)| w * x * x).sum();
        let m4: f64 = r.iter().map(|(x, w)| w * x.powi(4)).sum();
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!((m4 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn half_line_path_integrates_exponential() {
        let p = Path::new(End::MinusInfinity, End::Finite(0.5), 0.5, 60.0, 12).unwrap();
        let v: f64 = p
            .panels
            .iter()
            .map(|pan| pan.iter().zip(&p.rule.w).map(|(n, w)| w * n.dt * n.t.exp()).sum::<f64>())
            .sum();
        assert!((v - 0.5f64.exp()).abs() < 1e-12);
        let q = Path::new(End::PlusInfinity, End::Finite(0.0), 0.5, 60.0, 12).unwrap();
        let v: f64 = q
            .panels
            .iter()
            .map(|pan| pan.iter().zip(&q.rule.w).map(|(n, w)| w * n.dt * (-n.t).exp()).sum::<f64>())
            .sum();
        assert!((v + 1.0).abs() < 1e-12);
    }

    #[test]
    fn tanh_sinh_handles_bump() {
        let r = tanh_sinh(0.05);
        let v: f64 = r.iter().map(|(x, w)| w * (1.0 - x * x).sqrt()).sum();
        assert!((v - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }
}
