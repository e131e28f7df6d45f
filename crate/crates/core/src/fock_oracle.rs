//! Brute-force reference: a momentum grid, a truncated Fock space, and the
//! Dyson series computed as finite-dimensional linear algebra.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::combinatorics::{contraction_factor, factorial};
use crate::error::{Error, Result};
use crate::interaction::{InteractionSpec, TimeProfile, VertexCutoff};
use crate::quadrature::{End, Path};
use crate::request::{CorrelatorKind, CorrelatorRequest, MomentumSmearing};
use crate::types::{Sign, Vec3, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct MomentumGrid {
    points: Vec<Vec3>,
    cell_volume: f64,
    negated: Vec<usize>,
}

fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
    (0..3).all(|c| (a[c] - b[c]).abs() <= tol)
}

impl MomentumGrid {
    pub fn new(points: Vec<Vec3>, cell_volume: f64) -> Result<Self> {
        if !(cell_volume > 0.0) {
            return Err(Error::Input("grid cell volume must be positive".into()));
        }
        let scale = points
            .iter()
            .flat_map(|p| p.iter().map(|c| c.abs()))
            .fold(1.0f64, f64::max);
        let tol = 1e-10 * scale;
        let mut negated = Vec::with_capacity(points.len());
        for (i, &p) in points.iter().enumerate() {
            if points[..i].iter().any(|&q| close(p, q, tol)) {
                return Err(Error::Input(format!("grid point {i} is duplicated")));
            }
            let neg = [-p[0], -p[1], -p[2]];
            match points.iter().position(|&q| close(q, neg, tol)) {
                Some(j) => negated.push(j),
                None => return Err(Error::Input(format!("grid is not symmetric: -p{i} missing"))),
            }
        }
        Ok(MomentumGrid {
            points,
            cell_volume,
            negated,
        })
    }

    /// `count` points `k * spacing` along the first axis, symmetric about 0.
    pub fn quasi_1d(count: usize, spacing: f64, cell_volume: f64) -> Result<Self> {
        if count == 0 || !(spacing > 0.0) {
            return Err(Error::Input("grid needs at least one point and positive spacing".into()));
        }
        let mid = (count as f64 - 1.0) / 2.0;
        let pts = (0..count).map(|k| [(k as f64 - mid) * spacing, 0.0, 0.0]).collect();
        MomentumGrid::new(pts, cell_volume)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn negated(&self, i: usize) -> usize {
        self.negated[i]
    }

    pub fn index_of(&self, p: Vec3) -> Option<usize> {
        let scale = p.iter().map(|c| c.abs()).fold(1.0f64, f64::max);
        self.points.iter().position(|&q| close(p, q, 1e-9 * scale))
    }
}

/// Occupation-number basis with at most `nmax` particles.
#[derive(Clone, Debug)]
pub struct FockSpace {
    grid: MomentumGrid,
    nmax: usize,
    states: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
}

pub fn fock_dimension(modes: usize, nmax: usize) -> usize {
    crate::combinatorics::binomial((modes + nmax) as u64, nmax as u64) as usize
}

impl FockSpace {
    pub fn new(grid: MomentumGrid, nmax: usize, max_dim: usize) -> Result<Self> {
        let dim = fock_dimension(grid.len(), nmax);
        if dim > max_dim {
            return Err(Error::Budget {
                what: format!("oracle Fock space ({} modes, nmax {nmax})", grid.len()),
                needed: dim,
                limit: max_dim,
            });
        }
        let mut states = Vec::with_capacity(dim);
        for n in 0..=nmax {
            let mut occ = vec![0u8; grid.len()];
            fill(&mut occ, 0, n, &mut states);
        }
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(FockSpace {
            grid,
            nmax,
            states,
            index,
        })
    }

    pub fn grid(&self) -> &MomentumGrid {
        &self.grid
    }

    pub fn nmax(&self) -> usize {
        self.nmax
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, i: usize) -> &[u8] {
        &self.states[i]
    }

    pub fn index_of(&self, occ: &[u8]) -> Option<usize> {
        self.index.get(occ).copied()
    }

    pub fn particles(&self, i: usize) -> usize {
        self.states[i].iter().map(|&n| n as usize).sum()
    }

    pub fn energies(&self, spec: &InteractionSpec) -> Vec<f64> {
        let om: Vec<f64> = self.grid.points().iter().map(|&p| spec.dispersion.omega(p)).collect();
        self.states
            .iter()
            .map(|s| s.iter().zip(&om).map(|(&n, w)| n as f64 * w).sum())
            .collect()
    }

    /// `b_k |i>` as (state, amplitude).
    pub fn lower(&self, k: usize, i: usize) -> Option<(usize, f64)> {
        let s = &self.states[i];
        if s[k] == 0 {
            return None;
        }
        let mut t = s.clone();
        t[k] -= 1;
        Some((self.index[&t], (s[k] as f64).sqrt()))
    }

    /// `b_k^dag |i>` as (state, amplitude); `None` when truncated away.
    pub fn raise(&self, k: usize, i: usize) -> Option<(usize, f64)> {
        let s = &self.states[i];
        let mut t = s.clone();
        t[k] += 1;
        self.index.get(&t).map(|&j| (j, (t[k] as f64).sqrt()))
    }
}

fn fill(occ: &mut Vec<u8>, pos: usize, left: usize, out: &mut Vec<Vec<u8>>) {
    if pos == occ.len() - 1 {
        occ[pos] = left as u8;
        out.push(occ.clone());
        occ[pos] = 0;
        return;
    }
    for k in (0..=left).rev() {
        occ[pos] = k as u8;
        fill(occ, pos + 1, left - k, out);
    }
    occ[pos] = 0;
}

/// Grid kernel `A(out; in)` with `creators` out-legs and `annihilators` in-legs.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelOperator {
    pub modes: usize,
    pub creators: usize,
    pub annihilators: usize,
    pub amps: Vec<C64>,
}

fn tuples(modes: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..modes).map(move |k| {
                    let mut u = t.clone();
                    u.push(k);
                    u
                })
            })
            .collect();
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

impl KernelOperator {
    pub fn zeros(modes: usize, creators: usize, annihilators: usize) -> Self {
        KernelOperator {
            modes,
            creators,
            annihilators,
            amps: vec![ZERO; modes.pow((creators + annihilators) as u32)],
        }
    }

    pub fn from_fn(modes: usize, creators: usize, annihilators: usize, mut f: impl FnMut(&[usize], &[usize]) -> C64) -> Self {
        let mut k = KernelOperator::zeros(modes, creators, annihilators);
        for t in tuples(modes, creators + annihilators) {
            let v = f(&t[..creators], &t[creators..]);
            k.set(&t[..creators], &t[creators..], v);
        }
        k
    }

    fn offset(&self, out: &[usize], inc: &[usize]) -> usize {
        out.iter().chain(inc).fold(0, |acc, &k| acc * self.modes + k)
    }

    pub fn get(&self, out: &[usize], inc: &[usize]) -> C64 {
        self.amps[self.offset(out, inc)]
    }

    pub fn set(&mut self, out: &[usize], inc: &[usize], v: C64) {
        let o = self.offset(out, inc);
        self.amps[o] = v;
    }

    /// Averages over permutations within the out block and within the in block.
    pub fn symmetrized(&self) -> KernelOperator {
        let po = permutations(self.creators);
        let pi = permutations(self.annihilators);
        let norm = (po.len() * pi.len()) as f64;
        KernelOperator::from_fn(self.modes, self.creators, self.annihilators, |out, inc| {
            let mut acc = ZERO;
            for a in &po {
                let o: Vec<usize> = a.iter().map(|&j| out[j]).collect();
                for b in &pi {
                    let i: Vec<usize> = b.iter().map(|&j| inc[j]).collect();
                    acc += self.get(&o, &i);
                }
            }
            acc / norm
        })
    }

    /// Kernel of the adjoint operator.
    pub fn adjoint(&self) -> KernelOperator {
        KernelOperator::from_fn(self.modes, self.annihilators, self.creators, |out, inc| self.get(inc, out).conj())
    }
}

/// Dense operator on a Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct FockOperator {
    pub matrix: DMatrix<C64>,
}

impl FockOperator {
    pub fn zeros(dim: usize) -> Self {
        FockOperator {
            matrix: DMatrix::from_element(dim, dim, ZERO),
        }
    }

    pub fn identity(dim: usize) -> Self {
        FockOperator {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn adjoint(&self) -> Self {
        FockOperator {
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn max_abs_diff(&self, other: &FockOperator) -> f64 {
        (&self.matrix - &other.matrix).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Matrix of `sum dv^{(l+l')/2} A(out; in) b^dag_out b_in`, truncated at `nmax`.
pub fn second_quantize(a: &KernelOperator, space: &FockSpace) -> Result<FockOperator> {
    if a.modes != space.grid().len() {
        return Err(Error::Input("kernel and Fock space use different grids".into()));
    }
    let dim = space.dim();
    let weight = space.grid().cell_volume().powf((a.creators + a.annihilators) as f64 / 2.0);
    let ins = tuples(a.modes, a.annihilators);
    let outs = tuples(a.modes, a.creators);
    let cols: Vec<Vec<(usize, C64)>> = (0..dim)
        .into_par_iter()
        .map(|col| {
            let mut acc: HashMap<usize, C64> = HashMap::new();
            for inc in &ins {
                let mut st = Some((col, 1.0));
                for &k in inc {
                    st = st.and_then(|(s, amp)| space.lower(k, s).map(|(t, f)| (t, amp * f)));
                }
                let Some((mid, amp_in)) = st else { continue };
                for out in &outs {
                    let v = a.get(out, inc);
                    if v == ZERO {
                        continue;
                    }
                    let mut st = Some((mid, amp_in));
                    for &k in out {
                        st = st.and_then(|(s, amp)| space.raise(k, s).map(|(t, f)| (t, amp * f)));
                    }
                    if let Some((row, amp)) = st {
                        *acc.entry(row).or_insert(ZERO) += v * amp * weight;
                    }
                }
            }
            let mut v: Vec<(usize, C64)> = acc.into_iter().collect();
            v.sort_by_key(|e| e.0);
            v
        })
        .collect();
    let mut m = FockOperator::zeros(dim);
    for (col, entries) in cols.into_iter().enumerate() {
        for (row, v) in entries {
            m.matrix[(row, col)] = v;
        }
    }
    Ok(m)
}

/// Terms `(factor, A (x)_r B)` with `A^ B^ = sum factor (A (x)_r B)^`.
pub fn wick_product(a: &KernelOperator, b: &KernelOperator, grid: &MomentumGrid) -> Result<Vec<(f64, KernelOperator)>> {
    if a.modes != grid.len() || b.modes != grid.len() {
        return Err(Error::Input("kernels are defined on different grids".into()));
    }
    let dv = grid.cell_volume();
    let mut terms = Vec::new();
    for r in 0..=a.annihilators.min(b.creators) {
        let factor = contraction_factor(a.annihilators as u64, r as u64, b.creators as u64)? as f64;
        let creators = a.creators + b.creators - r;
        let annihilators = a.annihilators - r + b.annihilators;
        let contracted = tuples(a.modes, r);
        let k = KernelOperator::from_fn(a.modes, creators, annihilators, |out, inc| {
            let (out_a, out_b) = out.split_at(a.creators);
            let (in_a, in_b) = inc.split_at(a.annihilators - r);
            let mut acc = ZERO;
            let mut ia = in_a.to_vec();
            let mut ob: Vec<usize> = Vec::with_capacity(b.creators);
            for c in &contracted {
                ia.truncate(in_a.len());
                ia.extend_from_slice(c);
                ob.clear();
                ob.extend_from_slice(c);
                ob.extend_from_slice(out_b);
                acc += a.get(out_a, &ia) * b.get(&ob, in_b);
            }
            acc * dv.powi(r as i32)
        });
        terms.push((factor, k.symmetrized()));
    }
    Ok(terms)
}

/// Time-independent part `V` of the interaction on the grid: kernels times
/// spatial cut-off of the vertex defect, with the `1/(l! l'!)` weights.
fn interaction_kernels(spec: &InteractionSpec, cutoff: &VertexCutoff, grid: &MomentumGrid) -> Vec<KernelOperator> {
    spec.kernels
        .iter()
        .map(|(&(lo, li), kern)| {
            let w = 1.0 / (factorial(lo as u64) * factorial(li as u64)) as f64;
            KernelOperator::from_fn(grid.len(), lo, li, |out, inc| {
                let po: Vec<Vec3> = out.iter().map(|&k| grid.point(k)).collect();
                let pi: Vec<Vec3> = inc.iter().map(|&k| grid.point(k)).collect();
                let mut defect = [0.0; 3];
                for p in &po {
                    for c in 0..3 {
                        defect[c] += p[c];
                    }
                }
                for p in &pi {
                    for c in 0..3 {
                        defect[c] -= p[c];
                    }
                }
                kern.eval(&po, &pi) * cutoff.spatial(defect) * w
            })
        })
        .collect()
}

fn static_interaction(spec: &InteractionSpec, cutoff: &VertexCutoff, space: &FockSpace) -> Result<FockOperator> {
    if spec.max_legs > 2 * space.nmax() {
        return Err(Error::Input(format!(
            "interaction legs {} exceed twice nmax {}",
            spec.max_legs,
            space.nmax()
        )));
    }
    let mut total = FockOperator::zeros(space.dim());
    for k in interaction_kernels(spec, cutoff, space.grid()) {
        total.matrix += second_quantize(&k, space)?.matrix;
    }
    Ok(total)
}

/// `H_I(t) = g(t) D(t) V D(t)^dag` with `D = diag(exp(i E t))`.
pub fn hamiltonian_matrix(spec: &InteractionSpec, cutoff: &VertexCutoff, t: f64, space: &FockSpace) -> Result<FockOperator> {
    let v = static_interaction(spec, cutoff, space)?;
    let e = space.energies(spec);
    let g = cutoff.value(t);
    let mut m = v;
    for r in 0..space.dim() {
        for c in 0..space.dim() {
            m.matrix[(r, c)] *= C64::from_polar(g, (e[r] - e[c]) * t);
        }
    }
    Ok(m)
}

/// Time discretisation of the oracle's Dyson integrals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeSettings {
    pub spacing: f64,
    pub nodes_per_panel: usize,
    pub tail_tolerance: f64,
}

impl Default for TimeSettings {
    fn default() -> Self {
        TimeSettings {
            spacing: 0.5,
            nodes_per_panel: 16,
            tail_tolerance: 1e-14,
        }
    }
}

struct SparseRows {
    rows: Vec<Vec<(usize, C64)>>,
}

impl SparseRows {
    fn from_dense(m: &FockOperator) -> Self {
        let n = m.dim();
        SparseRows {
            rows: (0..n)
                .map(|r| (0..n).filter(|&c| m.matrix[(r, c)] != ZERO).map(|c| (c, m.matrix[(r, c)])).collect())
                .collect(),
        }
    }
}

/// Everything needed to evolve states with the cut-off interaction.
pub struct OracleContext {
    pub spec: InteractionSpec,
    pub cutoff: Arc<VertexCutoff>,
    pub space: FockSpace,
    pub settings: TimeSettings,
    energies: Vec<f64>,
    interaction: SparseRows,
    horizon: f64,
}

impl OracleContext {
    pub fn new(spec: InteractionSpec, cutoff: Arc<VertexCutoff>, space: FockSpace, settings: TimeSettings) -> Result<Self> {
        let v = static_interaction(&spec, &cutoff, &space)?;
        let energies = space.energies(&spec);
        let horizon = cutoff.horizon(settings.tail_tolerance);
        Ok(OracleContext {
            interaction: SparseRows::from_dense(&v),
            spec,
            cutoff,
            space,
            settings,
            energies,
            horizon,
        })
    }

    fn path(&self, a: End, b: End) -> Result<Path> {
        let anchor = match (a, b) {
            (End::Finite(x), _) | (_, End::Finite(x)) => x.abs(),
            _ => 0.0,
        };
        Path::new(a, b, self.settings.spacing, self.horizon + anchor, self.settings.nodes_per_panel)
    }

    fn apply_h(&self, t: f64, g: f64, x: &[C64], out: &mut [C64]) {
        let z: Vec<C64> = x
            .iter()
            .zip(&self.energies)
            .map(|(v, e)| v * C64::from_polar(1.0, -e * t))
            .collect();
        for (r, row) in self.interaction.rows.iter().enumerate() {
            let mut acc = ZERO;
            for &(c, v) in row {
                acc += v * z[c];
            }
            out[r] = acc * C64::from_polar(g, self.energies[r] * t);
        }
    }

    /// Series of `U(b, a) psi` given the series `psi` (index = power of g).
    pub fn propagate(&self, psi: &[Vec<C64>], a: End, b: End) -> Result<Vec<Vec<C64>>> {
        let order = psi.len() - 1;
        let dim = self.space.dim();
        let mut y: Vec<Vec<C64>> = psi.to_vec();
        if order == 0 {
            return Ok(y);
        }
        let path = self.path(a, b)?;
        let p = path.rule.len();
        let profile: Vec<Vec<f64>> = path
            .panels
            .par_iter()
            .map(|pan| pan.iter().map(|n| self.cutoff.value(n.t)).collect())
            .collect();
        let minus_i = C64::new(0.0, -1.0);
        for (pan, gvals) in path.panels.iter().zip(&profile) {
            // nodal values of y^(j-1), starting from the constant y^(0)
            let mut prev: Vec<Vec<C64>> = vec![y[0].clone(); p];
            for j in 1..=order {
                let hy: Vec<Vec<C64>> = (0..p)
                    .into_par_iter()
                    .map(|l| {
                        let mut o = vec![ZERO; dim];
                        self.apply_h(pan[l].t, gvals[l] * pan[l].dt, &prev[l], &mut o);
                        o
                    })
                    .collect();
                let start = y[j].clone();
                let mut cur = vec![start.clone(); p];
                for (i, ci) in cur.iter_mut().enumerate() {
                    for (l, h) in hy.iter().enumerate() {
                        let c = path.rule.cum[i][l] * minus_i;
                        for (d, v) in ci.iter_mut().zip(h) {
                            *d += c * v;
                        }
                    }
                }
                for (l, h) in hy.iter().enumerate() {
                    let c = path.rule.w[l] * minus_i;
                    for (d, v) in y[j].iter_mut().zip(h) {
                        *d += c * v;
                    }
                }
                prev = cur;
            }
        }
        Ok(y)
    }

    /// `U_(0..=order)(t2, t1)` as matrices.
    pub fn dyson_u(&self, order: usize, t2: End, t1: End) -> Result<Vec<FockOperator>> {
        let dim = self.space.dim();
        let cols: Vec<Vec<Vec<C64>>> = (0..dim)
            .map(|c| {
                let mut psi = vec![vec![ZERO; dim]; order + 1];
                psi[0][c] = C64::new(1.0, 0.0);
                self.propagate(&psi, t1, t2)
            })
            .collect::<Result<_>>()?;
        Ok((0..=order)
            .map(|k| {
                let mut m = FockOperator::zeros(dim);
                for (c, col) in cols.iter().enumerate() {
                    for r in 0..dim {
                        m.matrix[(r, c)] = col[k][r];
                    }
                }
                m
            })
            .collect())
    }

    /// Applies the free field `phi_alpha(t, p)` to a state.
    pub fn apply_field(&self, sign: Sign, p: Vec3, t: f64, x: &[C64]) -> Result<Vec<C64>> {
        let grid = self.space.grid();
        let Some(k) = grid.index_of(p) else {
            return Err(Error::Input(format!("momentum {p:?} is not a grid point")));
        };
        let om = self.spec.dispersion.omega(p);
        let pref = C64::from_polar(
            1.0 / (grid.cell_volume().sqrt() * self.spec.leg_norm(p)),
            sign.value() * om * t,
        );
        let mut out = vec![ZERO; x.len()];
        for (i, &v) in x.iter().enumerate() {
            if v == ZERO {
                continue;
            }
            let step = match sign {
                Sign::Plus => self.space.raise(k, i),
                Sign::Minus => self.space.lower(grid.negated(k), i),
            };
            if let Some((j, amp)) = step {
                out[j] += pref * amp * v;
            }
        }
        Ok(out)
    }

    /// Vacuum expectation `(Omega, S Omega)` per power of g.
    pub fn vacuum_series(&self, order: usize) -> Result<Vec<C64>> {
        let mut psi = vec![vec![ZERO; self.space.dim()]; order + 1];
        psi[0][0] = C64::new(1.0, 0.0);
        let out = self.propagate(&psi, End::MinusInfinity, End::PlusInfinity)?;
        Ok(out.iter().map(|v| v[0]).collect())
    }

    /// Unnormalised Wightman numerator per power of g.
    pub fn wightman_numerator(&self, alpha: &[Sign], times: &[f64], momenta: &[Vec3], order: usize) -> Result<Vec<C64>> {
        let n = alpha.len();
        let dim = self.space.dim();
        let mut vac = vec![vec![ZERO; dim]; order + 1];
        vac[0][0] = C64::new(1.0, 0.0);
        if n == 0 {
            return self.vacuum_series(order);
        }
        let mut psi = self.propagate(&vac, End::MinusInfinity, End::Finite(times[n - 1]))?;
        for j in (0..n).rev() {
            psi = psi
                .iter()
                .map(|v| self.apply_field(alpha[j], momenta[j], times[j], v))
                .collect::<Result<_>>()?;
            if j > 0 {
                psi = self.propagate(&psi, End::Finite(times[j]), End::Finite(times[j - 1]))?;
            }
        }
        let chi = self.propagate(&vac, End::PlusInfinity, End::Finite(times[0]))?;
        Ok((0..=order)
            .map(|m| {
                (0..=m)
                    .map(|a| chi[a].iter().zip(&psi[m - a]).map(|(c, v)| c.conj() * v).sum::<C64>())
                    .sum()
            })
            .collect())
    }

    /// Normalised correlator per power of g (restricted Wightman or time-ordered Green).
    pub fn correlator(&self, request: &CorrelatorRequest) -> Result<Vec<C64>> {
        request.validate()?;
        if request.smearing != MomentumSmearing::Point {
            return Err(Error::Unsupported("oracle evaluates point momenta only".into()));
        }
        let (alpha, times, momenta) = match request.kind {
            CorrelatorKind::WightmanRestricted => (request.alpha.clone(), request.times.clone(), request.momenta.clone()),
            CorrelatorKind::GreenTime => {
                let mut idx: Vec<usize> = (0..request.n()).collect();
                idx.sort_by(|&a, &b| request.times[b].total_cmp(&request.times[a]));
                (
                    idx.iter().map(|&i| request.alpha[i]).collect(),
                    idx.iter().map(|&i| request.times[i]).collect(),
                    idx.iter().map(|&i| request.momenta[i]).collect(),
                )
            }
            _ => return Err(Error::Unsupported("oracle evaluates wightman_restricted and green_time".into())),
        };
        for p in &momenta {
            if self.space.grid().index_of(*p).is_none() {
                return Err(Error::Input(format!("momentum {p:?} is not a grid point")));
            }
        }
        let num = self.wightman_numerator(&alpha, &times, &momenta, request.order)?;
        let den = self.vacuum_series(request.order)?;
        series_divide(&num, &den)
    }
}

/// Coefficients of `num / den` as formal power series.
pub fn series_divide(num: &[C64], den: &[C64]) -> Result<Vec<C64>> {
    if den.is_empty() || den[0].norm() == 0.0 {
        return Err(Error::Numeric("vacuum series has zero constant term".into()));
    }
    let mut out: Vec<C64> = Vec::with_capacity(num.len());
    for m in 0..num.len() {
        let mut v = num[m];
        for k in 1..=m.min(den.len() - 1) {
            v -= den[k] * out[m - k];
        }
        out.push(v / den[0]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::{make_temporal_cutoff, preset_interaction, AdiabaticFamily, BaseProfile, PresetParams};
    use proptest::prelude::*;

    fn space(count: usize, nmax: usize) -> FockSpace {
        FockSpace::new(MomentumGrid::quasi_1d(count, 0.5, 0.3).unwrap(), nmax, 100_000).unwrap()
    }

    fn context(count: usize, nmax: usize, name: &str, band: Option<f64>) -> OracleContext {
        let spec = preset_interaction(name, PresetParams::new(1.0, 1.0)).unwrap();
        let fam = AdiabaticFamily::new(BaseProfile::A, 1.0).unwrap();
        let cut = VertexCutoff::new(fam, band.map(|d| make_temporal_cutoff(d).unwrap()));
        OracleContext::new(spec, Arc::new(cut), space(count, nmax), TimeSettings::default()).unwrap()
    }

    fn random_kernel(modes: usize, lo: usize, li: usize, seed: u64) -> KernelOperator {
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        KernelOperator::from_fn(modes, lo, li, |_, _| C64::new(next(), next())).symmetrized()
    }

    #[test]
    fn grid_checks() {
        assert!(MomentumGrid::new(vec![[1.0, 0.0, 0.0]], 1.0).is_err());
        assert!(MomentumGrid::new(vec![[0.0; 3], [0.0; 3]], 1.0).is_err());
        let g = MomentumGrid::quasi_1d(4, 0.5, 1.0).unwrap();
        assert_eq!(g.negated(0), 3);
        let s = space(3, 3);
        assert_eq!(s.dim(), fock_dimension(3, 3));
        assert_eq!(s.dim(), 20);
        assert!(matches!(
            FockSpace::new(MomentumGrid::quasi_1d(7, 0.5, 1.0).unwrap(), 4, 100),
            Err(Error::Budget { needed: 330, .. })
        ));
    }

    #[test]
    fn number_operator_from_identity_kernel() {
        let s = space(3, 3);
        let dv = s.grid().cell_volume();
        let id = KernelOperator::from_fn(3, 1, 1, |o, i| if o == i { C64::new(1.0 / dv, 0.0) } else { ZERO });
        let n = second_quantize(&id, &s).unwrap();
        for i in 0..s.dim() {
            for j in 0..s.dim() {
                let expect = if i == j { s.particles(i) as f64 } else { 0.0 };
                assert!((n.matrix[(i, j)] - C64::new(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn creator_kernel_builds_one_particle_state() {
        let s = space(3, 2);
        let dv = s.grid().cell_volume();
        let f = KernelOperator::from_fn(3, 1, 0, |o, _| C64::new(0.2 + o[0] as f64, -0.1 * o[0] as f64));
        let op = second_quantize(&f, &s).unwrap();
        for k in 0..3 {
            let mut occ = vec![0u8; 3];
            occ[k] = 1;
            let i = s.index_of(&occ).unwrap();
            // normalised grid state b_k^dag Omega has wavefunction value sqrt(dv) f(k)
            assert!((op.matrix[(i, 0)] - f.get(&[k], &[]) * dv.sqrt()).norm() < 1e-14);
        }
        let adj = second_quantize(&f.adjoint(), &s).unwrap();
        assert!(adj.max_abs_diff(&op.adjoint()) < 1e-14);
    }

    #[test]
    fn commutator_from_wick_product() {
        let g = MomentumGrid::quasi_1d(3, 0.5, 0.3).unwrap();
        let dv = g.cell_volume();
        for (k0, k1) in [(0usize, 0usize), (0, 2), (1, 1)] {
            let a = KernelOperator::from_fn(3, 0, 1, |_, i| if i[0] == k0 { C64::new(1.0 / dv, 0.0) } else { ZERO });
            let b = KernelOperator::from_fn(3, 1, 0, |o, _| if o[0] == k1 { C64::new(1.0 / dv, 0.0) } else { ZERO });
            let terms = wick_product(&a, &b, &g).unwrap();
            assert_eq!(terms.len(), 2);
            let (f, c) = &terms[1];
            assert_eq!(*f, 1.0);
            let expect = if k0 == k1 { 1.0 / dv } else { 0.0 };
            assert!((c.amps[0] - C64::new(expect, 0.0)).norm() < 1e-12);
        }
        let no_ann = random_kernel(3, 2, 0, 3);
        assert_eq!(wick_product(&no_ann, &random_kernel(3, 1, 1, 4), &g).unwrap().len(), 1);
    }

    fn check_wick_identity(a: &KernelOperator, b: &KernelOperator, s: &FockSpace) -> f64 {
        let lhs = FockOperator {
            matrix: &second_quantize(a, s).unwrap().matrix * &second_quantize(b, s).unwrap().matrix,
        };
        let mut rhs = FockOperator::zeros(s.dim());
        for (f, k) in wick_product(a, b, s.grid()).unwrap() {
            rhs.matrix += second_quantize(&k, s).unwrap().matrix * C64::new(f, 0.0);
        }
        let mut worst = 0.0f64;
        for col in 0..s.dim() {
            let n = s.particles(col);
            if n < b.annihilators || n - b.annihilators + b.creators > s.nmax() {
                continue;
            }
            for row in 0..s.dim() {
                worst = worst.max((lhs.matrix[(row, col)] - rhs.matrix[(row, col)]).norm());
            }
        }
        worst
    }

    #[test]
    fn wick_identity_on_three_point_grid() {
        let s = space(3, 3);
        let a = random_kernel(3, 1, 2, 11);
        let b = random_kernel(3, 2, 1, 12);
        assert!(check_wick_identity(&a, &b, &s) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn wick_identity_random(la in 0usize..=2, lap in 0usize..=2, lb in 0usize..=2, lbp in 0usize..=2, seed in any::<u64>()) {
            let s = space(3, 3);
            let a = random_kernel(3, lap, la, seed);
            let b = random_kernel(3, lbp, lb, seed ^ 0x5555);
            prop_assert!(check_wick_identity(&a, &b, &s) < 1e-12);
        }

        #[test]
        fn second_quantization_is_injective(lo in 0usize..=2, li in 0usize..=2, seed in any::<u64>()) {
            let s = space(3, 2);
            let a = random_kernel(3, lo, li, seed);
            let b = random_kernel(3, lo, li, seed.wrapping_add(1));
            let qa = second_quantize(&a, &s).unwrap();
            let qb = second_quantize(&b, &s).unwrap();
            prop_assert!(qa.max_abs_diff(&qb) > 1e-6);
        }
    }

    #[test]
    fn hamiltonian_properties() {
        let spec = preset_interaction("gaussian-phi3", PresetParams::new(1.0, 1.0)).unwrap();
        let fam = AdiabaticFamily::new(BaseProfile::A, 1.0).unwrap();
        let cut = VertexCutoff::new(fam, None);
        let s = space(3, 3);
        for t in [0.0, 0.7, -2.3] {
            let h = hamiltonian_matrix(&spec, &cut, t, &s).unwrap();
            assert!(h.max_abs_diff(&h.adjoint()) < 1e-12);
        }
        let free = InteractionSpec::new(spec.dispersion.clone(), spec.conventions);
        let h = hamiltonian_matrix(&free, &cut, 0.3, &s).unwrap();
        assert_eq!(h.max_abs_diff(&FockOperator::zeros(s.dim())), 0.0);
        // single point grid: <2|H(0)|1> comes only from the (2,1) kernel
        let one = FockSpace::new(MomentumGrid::new(vec![[0.0; 3]], 0.4).unwrap(), 3, 100).unwrap();
        let h = hamiltonian_matrix(&spec, &cut, 0.0, &one).unwrap();
        let f = spec.kernel(2, 1).unwrap().eval(&[[0.0; 3]; 2], &[[0.0; 3]]);
        let expect = f * 0.5 * 0.4f64.powf(1.5) * cut.spatial([0.0; 3]) * 2f64.sqrt();
        assert!((h.matrix[(2, 1)] - expect).norm() < 1e-14 * expect.norm());
    }

    #[test]
    fn dyson_identities() {
        let ctx = context(2, 2, "gaussian-phi3", None);
        let dim = ctx.space.dim();
        let id = FockOperator::identity(dim);
        let same = ctx.dyson_u(2, End::Finite(0.4), End::Finite(0.4)).unwrap();
        assert!(same[0].max_abs_diff(&id) < 1e-15);
        assert!(same[1].max_abs_diff(&FockOperator::zeros(dim)) < 1e-15);
        let (t0, t1, t2) = (-1.5, 0.2, 1.9);
        let u21 = ctx.dyson_u(2, End::Finite(t2), End::Finite(t1)).unwrap();
        let u10 = ctx.dyson_u(2, End::Finite(t1), End::Finite(t0)).unwrap();
        let u20 = ctx.dyson_u(2, End::Finite(t2), End::Finite(t0)).unwrap();
        for n in 0..=2 {
            let mut comp = FockOperator::zeros(dim);
            let mut unit = FockOperator::zeros(dim);
            for k in 0..=n {
                comp.matrix += &u21[k].matrix * &u10[n - k].matrix;
                unit.matrix += &u20[k].matrix * u20[n - k].matrix.adjoint();
            }
            assert!(comp.max_abs_diff(&u20[n]) < 1e-6);
            let target = if n == 0 { id.clone() } else { FockOperator::zeros(dim) };
            assert!(unit.max_abs_diff(&target) < 1e-6);
        }
    }

    #[test]
    fn free_two_point_function() {
        let ctx = context(3, 2, "gaussian-phi3", Some(0.3));
        let p = [0.5, 0.0, 0.0];
        let req = CorrelatorRequest::wightman(vec![Sign::Minus, Sign::Plus], 1, vec![0.7, -0.4], vec![p, [-0.5, 0.0, 0.0]]);
        let w = ctx.correlator(&req).unwrap();
        let om = ctx.spec.dispersion.omega(p);
        let expect = C64::from_polar(1.0 / (0.3 * ctx.spec.leg_norm(p).powi(2)), -om * 1.1);
        assert!((w[0] - expect).norm() < 1e-12 * expect.norm());
        assert!(w[1].norm() < 1e-12 * expect.norm());
        let mismatched = CorrelatorRequest::wightman(vec![Sign::Minus, Sign::Plus], 0, vec![0.7, -0.4], vec![p, p]);
        assert!(ctx.correlator(&mismatched).unwrap()[0].norm() < 1e-15);
        let single = CorrelatorRequest::wightman(vec![Sign::Plus], 0, vec![0.0], vec![p]);
        assert_eq!(ctx.correlator(&single).unwrap()[0], ZERO);
        let off = CorrelatorRequest::wightman(vec![Sign::Plus, Sign::Minus], 0, vec![0.0, 1.0], vec![[0.25, 0.0, 0.0], p]);
        assert!(matches!(ctx.correlator(&off), Err(Error::Input(_))));
    }

    #[test]
    fn reversed_insertions_conjugate() {
        let ctx = context(3, 2, "gaussian-phi3", None);
        let p = [0.5, 0.0, 0.0];
        let q = [-0.5, 0.0, 0.0];
        let fwd = CorrelatorRequest::wightman(vec![Sign::Minus, Sign::Plus], 2, vec![0.3, -0.2], vec![p, q]);
        // (Omega, A B Omega)^* = (Omega, B^dag A^dag Omega); phi_-(t,p)^dag = phi_+(t,-p)
        let w = ctx.correlator(&fwd).unwrap();
        let back = CorrelatorRequest::wightman(vec![Sign::Minus, Sign::Plus], 2, vec![-0.2, 0.3], vec![p, q]);
        let wb = ctx.correlator(&back).unwrap();
        for k in 0..=2 {
            assert!((w[k] - wb[k].conj()).norm() < 1e-9 * w[0].norm(), "order {k}: {} vs {}", w[k], wb[k]);
        }
    }
}
