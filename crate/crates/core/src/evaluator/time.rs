//! Time integrals of ordered vertex groups: closed forms in the adiabatic
//! limit, spectral outer factors and direct nested quadrature with a profile.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::interaction::TimeProfile;
use crate::quadrature::{legendre, End, Path};
use crate::types::C64;

const I: C64 = C64::new(0.0, 1.0);
const ONE: C64 = C64::new(1.0, 0.0);
const ZERO: C64 = C64::new(0.0, 0.0);

/// One term `c prod_k t_k^{pow_k} exp(i freq_k t_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub c: C64,
    pub freq: Vec<f64>,
    pub pow: Vec<u32>,
}

/// Sum of polynomial-exponential terms in a fixed list of time variables.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpSum {
    pub vars: usize,
    pub terms: Vec<Term>,
}

/// `E[X^m]` for a normal law with complex mean `mean` and variance `var`.
fn gaussian_moment(m: u32, mean: C64, var: f64) -> C64 {
    let (mut prev, mut cur) = (ZERO, ONE);
    for k in 1..=m {
        let next = mean * cur + (k - 1) as f64 * var * prev;
        prev = cur;
        cur = next;
    }
    cur
}

impl ExpSum {
    pub fn constant(vars: usize, c: C64) -> Self {
        ExpSum {
            vars,
            terms: vec![Term {
                c,
                freq: vec![0.0; vars],
                pow: vec![0; vars],
            }],
        }
    }

    pub fn zero(vars: usize) -> Self {
        ExpSum { vars, terms: Vec::new() }
    }

    pub fn scale(&mut self, c: C64) {
        for t in &mut self.terms {
            t.c *= c;
        }
    }

    /// Multiplies every term by `exp(i b t_var)`.
    pub fn shift(&mut self, var: usize, b: f64) {
        for t in &mut self.terms {
            t.freq[var] += b;
        }
    }

    pub fn product(&self, other: &ExpSum) -> ExpSum {
        assert_eq!(self.vars, other.vars);
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(Term {
                    c: a.c * b.c,
                    freq: a.freq.iter().zip(&b.freq).map(|(x, y)| x + y).collect(),
                    pow: a.pow.iter().zip(&b.pow).map(|(x, y)| x + y).collect(),
                });
            }
        }
        ExpSum { vars: self.vars, terms }
    }

    pub fn add(&mut self, other: ExpSum) {
        assert_eq!(self.vars, other.vars);
        self.terms.extend(other.terms);
    }

    pub fn eval(&self, t: &[f64]) -> C64 {
        self.terms
            .iter()
            .map(|term| {
                let mono: f64 = term.pow.iter().zip(t).map(|(&m, x)| x.powi(m as i32)).product();
                term.c * C64::from_polar(mono, term.freq.iter().zip(t).map(|(b, x)| b * x).sum())
            })
            .sum()
    }

    /// Integral against normalised Gaussians of the given centres and widths.
    pub fn smeared(&self, centres: &[f64], widths: &[f64]) -> C64 {
        self.terms
            .iter()
            .map(|term| {
                let mut v = term.c;
                for k in 0..self.vars {
                    let (b, mu, w2) = (term.freq[k], centres[k], widths[k] * widths[k]);
                    v *= C64::from_polar((-0.5 * b * b * w2).exp(), b * mu);
                    if term.pow[k] > 0 {
                        v *= gaussian_moment(term.pow[k], C64::new(mu, b * w2), w2);
                    }
                }
                v
            })
            .sum()
    }

    /// `(2 pi)^{-n} int_{t_0 > t_1 > ...} prod dt e^{i sum E t}` of the sum, as a
    /// density with respect to `delta(sum E)`. Variable 0 is the latest time.
    /// The sum must be invariant under a common time shift; the earliest time is set to zero.
    pub fn fourier(&self, energies: &[f64], floor: f64) -> Result<C64> {
        let n = self.vars;
        let mut acc = ZERO;
        for term in &self.terms {
            if n > 0 && term.pow[n - 1] > 0 {
                continue;
            }
            // coefficients of s^k in G(s) e^{-i C s}
            let mut g = vec![term.c];
            let mut c = 0.0;
            for j in 0..n.saturating_sub(1) {
                let m = term.pow[j] as usize;
                let mut shifted = vec![ZERO; m];
                shifted.extend_from_slice(&g);
                c += energies[j] + term.freq[j];
                if c.abs() < floor {
                    return Err(Error::Numeric(format!(
                        "energy partial sum over the {} latest times is {c:.3e}, within the pole margin",
                        j + 1
                    )));
                }
                // int_s^inf t^k e^{iCt} dt = -s^k e^{iCs}/(iC) - k/(iC) int_s^inf t^{k-1} e^{iCt} dt
                let inv = -ONE / (I * c);
                let mut out = vec![ZERO; shifted.len()];
                let mut jk: Vec<C64> = Vec::with_capacity(shifted.len());
                for (k, coef) in shifted.iter().enumerate() {
                    let mut next = vec![ZERO; k + 1];
                    next[k] = inv;
                    for (r, v) in jk.iter().enumerate() {
                        next[r] += inv * k as f64 * v;
                    }
                    for (r, v) in next.iter().enumerate() {
                        out[r] += coef * v;
                    }
                    jk = next;
                }
                g = out;
            }
            acc += g[0];
        }
        Ok(acc * (2.0 * PI).powi(1 - n as i32))
    }

    /// Re-indexes a sum in `self.vars` variables into `vars` variables.
    pub fn embed(&self, vars: usize, positions: &[usize]) -> ExpSum {
        ExpSum {
            vars,
            terms: self
                .terms
                .iter()
                .map(|term| {
                    let mut freq = vec![0.0; vars];
                    let mut pow = vec![0; vars];
                    for (k, &p) in positions.iter().enumerate() {
                        freq[p] += term.freq[k];
                        pow[p] += term.pow[k];
                    }
                    Term { c: term.c, freq, pow }
                })
                .collect(),
        }
    }
}

/// Latest outer group in the adiabatic limit, `(-i)^v int_{t1 < tau_v < ... < tau_1} prod e^{i D tau}`:
/// coefficient `prod_j 1/(D_1 + ... + D_j)` of `e^{i sum D t1}`. Deltas are latest first.
pub fn first_slot_adiabatic(deltas: &[f64]) -> (C64, f64) {
    let mut c = ONE;
    let mut s = 0.0;
    for d in deltas {
        s += d;
        c /= s;
    }
    (c, s)
}

/// Earliest outer group: coefficient `prod_j (-1)/(D_j + ... + D_v)` of `e^{i sum D t_n}`.
pub fn last_slot_adiabatic(deltas: &[f64]) -> (C64, f64) {
    let mut c = ONE;
    let mut s = 0.0;
    for d in deltas.iter().rev() {
        s += d;
        c *= -1.0 / s;
    }
    (c, s)
}

/// Inner group between `a` (earlier, variable 1) and `b` (later, variable 0):
/// `(-i)^v int_{a < tau_v < ... < tau_1 < b} prod e^{i D_j tau_j}` as a sum of
/// polynomial-exponential terms. Exponents below `tolerance` times the total
/// `|D|` are treated as exactly zero.
pub fn simplex_expsum(deltas: &[f64], tolerance: f64) -> ExpSum {
    let scale: f64 = deltas.iter().map(|d| d.abs()).sum::<f64>();
    // c tau^m e^{i beta tau} a^r e^{i gamma a}
    let mut terms: Vec<Inner> = vec![Inner { c: ONE, m: 0, beta: 0.0, r: 0, gamma: 0.0 }];
    for &d in deltas.iter().rev() {
        let mut next: Vec<Inner> = Vec::with_capacity(2 * terms.len());
        for t in &terms {
            let e = d + t.beta;
            if e.abs() <= tolerance * scale {
                let k = -I * t.c / (t.m + 1) as f64;
                push_merged(&mut next, Inner { c: k, m: t.m + 1, beta: 0.0, ..*t });
                push_merged(&mut next, Inner { c: -k, m: 0, beta: 0.0, r: t.r + t.m + 1, gamma: t.gamma });
                continue;
            }
            // antiderivative of tau^m e^{i e tau}: sum_q (-1)^q m!/(m-q)! tau^{m-q} e^{i e tau} / (i e)^{q+1}
            let mut coef = ONE / (I * e);
            for q in 0..=t.m {
                let k = -I * t.c * coef;
                push_merged(&mut next, Inner { c: k, m: t.m - q, beta: e, ..*t });
                push_merged(&mut next, Inner { c: -k, m: 0, beta: 0.0, r: t.r + t.m - q, gamma: t.gamma + e });
                coef *= -((t.m - q) as f64) / (I * e);
            }
        }
        terms = next;
    }
    ExpSum {
        vars: 2,
        terms: terms
            .into_iter()
            .map(|t| Term {
                c: t.c,
                freq: vec![t.beta, t.gamma],
                pow: vec![t.m, t.r],
            })
            .collect(),
    }
}

#[derive(Clone, Copy)]
struct Inner {
    c: C64,
    m: u32,
    beta: f64,
    r: u32,
    gamma: f64,
}

fn push_merged(v: &mut Vec<Inner>, t: Inner) {
    if let Some(x) = v.iter_mut().find(|x| x.m == t.m && x.beta == t.beta && x.r == t.r && x.gamma == t.gamma) {
        x.c += t.c;
    } else {
        v.push(t);
    }
}

/// Weights `ghat(w)/(2 pi)` on a composite Gauss-Legendre rule over the band.
#[derive(Clone, Debug)]
pub struct SpectralRule {
    pub nodes: Vec<(f64, f64)>,
}

impl SpectralRule {
    pub fn new(profile: &dyn TimeProfile, panel_width: f64, order: usize) -> Result<Self> {
        let band = profile
            .band()
            .ok_or_else(|| Error::Input("spectral outer factors need a band-limited profile".into()))?;
        let panels = ((2.0 * band / panel_width).ceil() as usize).max(2);
        let h = 2.0 * band / panels as f64;
        let rule = legendre(order);
        let mut nodes = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let lo = -band + p as f64 * h;
            for &(x, w) in &rule {
                let om = lo + 0.5 * h * (x + 1.0);
                let v = 0.5 * h * w * profile.spectrum(om) / (2.0 * PI);
                if v != 0.0 {
                    nodes.push((om, v));
                }
            }
        }
        Ok(SpectralRule { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Which outer group a spectral factor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OuterGroup {
    First,
    Last,
}

/// Outer factor with a band-limited profile: integral over the spectra of the
/// group's vertices of the boundary phase and the real denominators.
/// `floor` is the guaranteed lower bound on every denominator.
pub fn outer_time_factor(
    group: OuterGroup,
    deltas: &[f64],
    boundary: f64,
    rule: &SpectralRule,
    floor: f64,
    budget: usize,
) -> Result<C64> {
    let v = deltas.len();
    if v == 0 {
        return Ok(ONE);
    }
    let count = rule.len().checked_pow(v as u32).unwrap_or(usize::MAX);
    if count > budget {
        return Err(Error::Budget {
            what: "spectral outer nodes".into(),
            needed: count,
            limit: budget,
        });
    }
    let order: Vec<usize> = match group {
        OuterGroup::First => (0..v).collect(),
        OuterGroup::Last => (0..v).rev().collect(),
    };
    let sign = match group {
        OuterGroup::First => 1.0,
        OuterGroup::Last => -1.0,
    };
    let mut total = ZERO;
    let mut idx = vec![0usize; v];
    loop {
        let mut w = 1.0;
        let mut phase = 0.0;
        let mut s = 0.0;
        let mut den = 1.0;
        for &j in &order {
            let (om, wt) = rule.nodes[idx[j]];
            w *= wt;
            let a = deltas[j] - om;
            phase += a;
            s += a;
            if s.abs() < floor - 1e-9 {
                return Err(Error::Numeric(format!(
                    "outer denominator {s:.3e} below the floor {floor:.3e}"
                )));
            }
            den *= sign * s;
        }
        total += C64::from_polar(w / den, phase * boundary);
        let mut k = 0;
        loop {
            if k == v {
                return Ok(total);
            }
            idx[k] += 1;
            if idx[k] < rule.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Collocation path between an earlier end `a` and a later end `b` with
/// cached profile values.
#[derive(Clone, Debug)]
pub struct SlotPath {
    pub path: Path,
    pub profile: Vec<Vec<f64>>,
}

impl SlotPath {
    pub fn new(a: End, b: End, profile: &dyn TimeProfile, spacing: f64, tail: f64, order: usize) -> Result<Self> {
        let path = Path::new(a, b, spacing, tail, order)?;
        let values = path
            .panels
            .iter()
            .map(|pan| pan.iter().map(|n| profile.value(n.t)).collect())
            .collect();
        Ok(SlotPath { path, profile: values })
    }

    /// `(-i)^v int_{a < tau_v < ... < tau_1 < b} prod g(tau_j) e^{i D_j tau_j}`, deltas latest first.
    pub fn nested(&self, deltas: &[f64]) -> C64 {
        let v = deltas.len();
        if v == 0 {
            return ONE;
        }
        let rule = &self.path.rule;
        let p = rule.len();
        let mut start = vec![ZERO; v];
        let mut prev = vec![ONE; p];
        let mut cur = vec![ZERO; p];
        let mut f = vec![ZERO; p];
        for (pan, g) in self.path.panels.iter().zip(&self.profile) {
            prev.iter_mut().for_each(|x| *x = ONE);
            for k in 0..v {
                let d = deltas[v - 1 - k];
                for l in 0..p {
                    f[l] = -I * C64::from_polar(g[l] * pan[l].dt, d * pan[l].t) * prev[l];
                }
                for i in 0..p {
                    let mut s = start[k];
                    for l in 0..p {
                        s += rule.cum[i][l] * f[l];
                    }
                    cur[i] = s;
                }
                let mut e = start[k];
                for l in 0..p {
                    e += rule.w[l] * f[l];
                }
                start[k] = e;
                std::mem::swap(&mut prev, &mut cur);
            }
        }
        start[v - 1]
    }
}

/// Inner factor with a time profile, by nested quadrature between `a` (earlier) and `b` (later).
pub fn inner_time_factor(
    deltas: &[f64],
    profile: &dyn TimeProfile,
    a: f64,
    b: f64,
    spacing: f64,
    order: usize,
) -> Result<C64> {
    if deltas.is_empty() {
        return Ok(ONE);
    }
    if a == b {
        return Ok(ZERO);
    }
    Ok(SlotPath::new(End::Finite(a), End::Finite(b), profile, spacing, 0.0, order)?.nested(deltas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::{make_temporal_cutoff, AdiabaticFamily, BaseProfile, VertexCutoff};

    struct Flat;
    impl TimeProfile for Flat {
        fn value(&self, _: f64) -> f64 {
            1.0
        }
        fn spectrum(&self, _: f64) -> f64 {
            0.0
        }
        fn band(&self) -> Option<f64> {
            None
        }
        fn horizon(&self, _: f64) -> f64 {
            0.0
        }
    }

    #[test]
    fn simplex_closed_form_matches_quadrature() {
        let d = [0.7, -1.3, 2.1];
        let (b, a) = (1.4, -0.3);
        for d in [&d[..], &[1.0, -1.0], &[0.5, 0.0, -0.5, 0.8]] {
            let closed = simplex_expsum(d, 1e-7).eval(&[b, a]);
            let direct = inner_time_factor(d, &Flat, a, b, 0.25, 16).unwrap();
            assert!((closed - direct).norm() < 1e-12, "{d:?} {closed} {direct}");
        }
    }

    #[test]
    fn empty_and_zero_length_groups() {
        assert_eq!(inner_time_factor(&[], &Flat, 0.0, 1.0, 0.5, 8).unwrap(), ONE);
        assert_eq!(inner_time_factor(&[0.4], &Flat, 0.7, 0.7, 0.5, 8).unwrap(), ZERO);
        let (c, s) = first_slot_adiabatic(&[]);
        assert_eq!((c, s), (ONE, 0.0));
    }

    #[test]
    fn one_vertex_inner_factor_with_band_limited_profile() {
        let family = AdiabaticFamily::new(BaseProfile::A, 1.0).unwrap();
        let cut = VertexCutoff::new(family, Some(make_temporal_cutoff(0.3).unwrap()));
        let (a, b, d) = (-0.6, 0.9, 1.7);
        let got = inner_time_factor(&[d], &cut, a, b, 0.5, 16).unwrap();
        // independent: plain Gauss-Legendre on the interval
        let rule = legendre(64);
        let mut want = ZERO;
        for (x, w) in rule {
            let t = a + 0.5 * (b - a) * (x + 1.0);
            want += 0.5 * (b - a) * w * cut.value(t) * C64::from_polar(1.0, d * t);
        }
        want *= -I;
        assert!((got - want).norm() < 1e-8);
    }

    #[test]
    fn spectral_outer_factor_matches_time_domain() {
        let family = AdiabaticFamily::new(BaseProfile::A, 1.0).unwrap();
        let cut = VertexCutoff::new(family, Some(make_temporal_cutoff(0.3).unwrap()));
        let rule = SpectralRule::new(&cut, 0.05, 8).unwrap();
        let t = 0.4;
        let d = -1.6;
        let spectral = outer_time_factor(OuterGroup::First, &[d], t, &rule, 1.0, 1 << 20).unwrap();
        let tail = cut.horizon(1e-14) + t.abs();
        let direct = SlotPath::new(End::Finite(t), End::PlusInfinity, &cut, 0.5, tail, 16)
            .unwrap()
            .nested(&[d]);
        assert!((spectral - direct).norm() < 1e-6, "{spectral} {direct}");
        let spectral = outer_time_factor(OuterGroup::Last, &[1.2], t, &rule, 0.5, 1 << 20).unwrap();
        let direct = SlotPath::new(End::MinusInfinity, End::Finite(t), &cut, 0.5, tail, 16)
            .unwrap()
            .nested(&[1.2]);
        assert!((spectral - direct).norm() < 1e-6, "{spectral} {direct}");
    }

    #[test]
    fn two_vertex_outer_factors_and_floor() {
        let family = AdiabaticFamily::new(BaseProfile::A, 1.0).unwrap();
        let cut = VertexCutoff::new(family, Some(make_temporal_cutoff(0.2).unwrap()));
        let rule = SpectralRule::new(&cut, 0.05, 8).unwrap();
        let tail = cut.horizon(1e-14) + 1.0;
        let d = [-1.3, -0.9];
        let spectral = outer_time_factor(OuterGroup::First, &d, -0.5, &rule, 1.0 - 0.4, 1 << 20).unwrap();
        let direct = SlotPath::new(End::Finite(-0.5), End::PlusInfinity, &cut, 0.5, tail, 16)
            .unwrap()
            .nested(&d);
        assert!((spectral - direct).norm() < 1e-6, "{spectral} {direct}");
        let d = [0.8, 1.1];
        let spectral = outer_time_factor(OuterGroup::Last, &d, 0.3, &rule, 0.6, 1 << 20).unwrap();
        let direct = SlotPath::new(End::MinusInfinity, End::Finite(0.3), &cut, 0.5, tail, 16)
            .unwrap()
            .nested(&d);
        assert!((spectral - direct).norm() < 1e-6, "{spectral} {direct}");
        // a denominator that can reach zero violates the floor
        assert!(matches!(
            outer_time_factor(OuterGroup::First, &[-0.1], 0.0, &rule, 0.5, 1 << 20),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn adiabatic_outer_forms_are_the_flat_limit() {
        let (c, s) = first_slot_adiabatic(&[-1.0, -2.0]);
        assert!((c - C64::new(1.0 / 3.0, 0.0)).norm() < 1e-15);
        assert_eq!(s, -3.0);
        let (c, _) = last_slot_adiabatic(&[1.0, 2.0]);
        assert!((c - C64::new(1.0 / 6.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn fourier_of_ordered_exponential() {
        // one term e^{i(b0 t0 + b1 t1)}, b0 + b1 = 0
        let e = ExpSum {
            vars: 2,
            terms: vec![Term {
                c: ONE,
                freq: vec![-1.5, 1.5],
                pow: vec![0, 0],
            }],
        };
        let v = e.fourier(&[0.2, -0.2], 1e-3).unwrap();
        let want = I / (0.2 - 1.5) / (2.0 * PI);
        assert!((v - want).norm() < 1e-15);
        assert!(e.fourier(&[1.5, -1.5], 1e-3).is_err());
        let s = e.smeared(&[0.0, 0.0], &[1e-9, 1e-9]);
        assert!((s - ONE).norm() < 1e-12);
    }

    #[test]
    fn polynomial_terms_in_fourier_and_smearing() {
        let e = ExpSum {
            vars: 2,
            terms: vec![Term {
                c: ONE,
                freq: vec![-1.5, 0.0],
                pow: vec![2, 0],
            }],
        };
        // int_0^inf t^2 e^{iCt} dt = -2 i / C^3
        let c = 0.2 - 1.5;
        let v = e.fourier(&[0.2, -0.2], 1e-3).unwrap();
        let want = -2.0 * I / (c * c * c) / (2.0 * PI);
        assert!((v - want).norm() < 1e-14, "{v} {want}");
        let s = e.smeared(&[0.7, 0.0], &[1e-5, 1e-5]);
        assert!((s - e.eval(&[0.7, 0.0])).norm() < 1e-8);
        // second moment of a real normal law
        let f = ExpSum {
            vars: 1,
            terms: vec![Term {
                c: ONE,
                freq: vec![0.0],
                pow: vec![2],
            }],
        };
        assert!((f.smeared(&[0.5], &[0.3]) - C64::new(0.25 + 0.09, 0.0)).norm() < 1e-15);
    }
}
