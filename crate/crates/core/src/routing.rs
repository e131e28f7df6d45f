//! Momentum routing: line momenta as linear functions of internal-line and
//! external momenta, vertex defects, and their completion to a basis.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graphs::{FeynmanGraph, Topology};
use crate::interaction::DispersionFunction;
use crate::types::{Sign, Vec3};

const RANK_TOL: f64 = 1e-10;

/// Where a line's momentum comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineKind {
    /// Free variable `k_j`.
    Internal(usize),
    /// `alpha_i p_i` for the line at external `i`.
    External(usize),
    /// Line joining two externals; carries `p` of its `+` end.
    Direct { plus: usize, minus: usize },
}

/// Oriented multigraph in the form routing needs.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedLines {
    pub alpha: Vec<Sign>,
    pub vertex_count: usize,
    /// Vertex id of external `i`.
    pub external_vertex: Vec<usize>,
    pub internal_vertices: Vec<usize>,
    /// `(tail, head)`: earlier to later.
    pub lines: Vec<(usize, usize)>,
}

impl OrientedLines {
    pub fn from_graph(g: &FeynmanGraph) -> Self {
        OrientedLines {
            alpha: g.alpha.clone(),
            vertex_count: g.vertices.len(),
            external_vertex: (0..g.n()).map(|i| g.external_vertex(i)).collect(),
            internal_vertices: g.internal_vertices(),
            lines: g.edges.clone(),
        }
    }

    /// Reference orientation for a topology: lines at externals follow the
    /// signs, internal lines point from the higher to the lower vertex id.
    pub fn from_topology(t: &Topology) -> Self {
        let n = t.n();
        let lines = t
            .edges
            .iter()
            .map(|&(a, b)| {
                if a < n && b < n {
                    if t.alpha[a] == Sign::Plus {
                        (a, b)
                    } else {
                        (b, a)
                    }
                } else if a < n {
                    match t.alpha[a] {
                        Sign::Plus => (a, b),
                        Sign::Minus => (b, a),
                    }
                } else {
                    (b, a)
                }
            })
            .collect();
        OrientedLines {
            alpha: t.alpha.clone(),
            vertex_count: t.vertex_count(),
            external_vertex: (0..n).collect(),
            internal_vertices: (n..t.vertex_count()).collect(),
            lines,
        }
    }

    fn external_index(&self, v: usize) -> Option<usize> {
        self.external_vertex.iter().position(|&x| x == v)
    }
}

/// Lines as an affine function `base + dirs * x` of some variables `x`
/// (the same matrix acts on each spatial component).
#[derive(Clone, Debug, PartialEq)]
pub struct AffineLines {
    pub base: Vec<Vec3>,
    pub dirs: DMatrix<f64>,
}

impl AffineLines {
    pub fn dim(&self) -> usize {
        self.dirs.ncols()
    }

    /// Line momenta at `x` given as `dim` 3-vectors.
    pub fn eval(&self, x: &[Vec3]) -> Vec<Vec3> {
        (0..self.base.len())
            .map(|l| {
                let mut v = self.base[l];
                for (j, xj) in x.iter().enumerate() {
                    let d = self.dirs[(l, j)];
                    if d != 0.0 {
                        for c in 0..3 {
                            v[c] += d * xj[c];
                        }
                    }
                }
                v
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct MomentumRouting {
    pub graph: OrientedLines,
    pub kinds: Vec<LineKind>,
    pub internal_lines: usize,
    /// Rows: internal vertices; columns: `(k, p)`. `kappa = forward * z`.
    pub forward: DMatrix<f64>,
    /// Lines as functions of `z`.
    pub line_map: DMatrix<f64>,
    /// Right inverse of `forward`.
    pub pinv: DMatrix<f64>,
    /// Orthonormal basis of the kernel of `forward`.
    pub completion: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    let gram = m.transpose() * m;
    let eig = SymmetricEigen::new(gram);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    let mut idx: Vec<usize> = (0..cols).filter(|&i| eig.eigenvalues[i].abs() <= RANK_TOL * scale).collect();
    idx.sort_unstable();
    let mut q = DMatrix::zeros(cols, idx.len());
    for (j, &i) in idx.iter().enumerate() {
        q.set_column(j, &eig.eigenvectors.column(i));
    }
    q
}

fn right_inverse(d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if d.nrows() == 0 {
        return Ok(DMatrix::zeros(d.ncols(), 0));
    }
    let ddt = d * d.transpose();
    let inv = ddt
        .try_inverse()
        .ok_or_else(|| Error::Numeric("defect functionals are linearly dependent".into()))?;
    Ok(d.transpose() * inv)
}

fn rank_check(d: &DMatrix<f64>) -> Result<Vec<f64>> {
    if d.nrows() == 0 {
        return Ok(Vec::new());
    }
    let sv = d.clone().svd(false, false).singular_values;
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let top = s.first().copied().unwrap_or(0.0).max(1.0);
    let rank = s.iter().filter(|&&x| x > RANK_TOL * top).count();
    if rank < d.nrows() {
        return Err(Error::Numeric(format!(
            "defect functionals have rank {rank} < {} (graph has a vacuum component?)",
            d.nrows()
        )));
    }
    Ok(s)
}

impl MomentumRouting {
    pub fn build(graph: &FeynmanGraph) -> Result<Self> {
        Self::from_lines(OrientedLines::from_graph(graph))
    }

    pub fn from_lines(graph: OrientedLines) -> Result<Self> {
        Self::assemble(graph, true)
    }

    /// Line and defect maps only, for graphs whose defects may be dependent
    /// (vacuum components); the inverse and the completion are left empty.
    pub fn unchecked(graph: &FeynmanGraph) -> Result<Self> {
        Self::assemble(OrientedLines::from_graph(graph), false)
    }

    fn assemble(graph: OrientedLines, check: bool) -> Result<Self> {
        let n = graph.alpha.len();
        let mut kinds = Vec::with_capacity(graph.lines.len());
        let mut internal_lines = 0;
        for &(a, b) in &graph.lines {
            let kind = match (graph.external_index(a), graph.external_index(b)) {
                (None, None) => {
                    internal_lines += 1;
                    LineKind::Internal(internal_lines - 1)
                }
                (Some(i), None) | (None, Some(i)) => LineKind::External(i),
                (Some(i), Some(j)) => {
                    if graph.alpha[i] != Sign::Plus || graph.alpha[j] != Sign::Minus {
                        return Err(Error::Input(format!(
                            "line between externals {} and {} needs a + tail and a - head",
                            i + 1,
                            j + 1
                        )));
                    }
                    LineKind::Direct { plus: i, minus: j }
                }
            };
            kinds.push(kind);
        }
        let cols = internal_lines + n;
        let mut line_map = DMatrix::zeros(graph.lines.len(), cols);
        for (l, kind) in kinds.iter().enumerate() {
            match *kind {
                LineKind::Internal(j) => line_map[(l, j)] = 1.0,
                LineKind::External(i) => line_map[(l, internal_lines + i)] = graph.alpha[i].value(),
                LineKind::Direct { plus, .. } => line_map[(l, internal_lines + plus)] = 1.0,
            }
        }
        let mut forward = DMatrix::zeros(graph.internal_vertices.len(), cols);
        for (r, &v) in graph.internal_vertices.iter().enumerate() {
            for (l, &(a, b)) in graph.lines.iter().enumerate() {
                let s = if a == v {
                    1.0
                } else if b == v {
                    -1.0
                } else {
                    continue;
                };
                for c in 0..cols {
                    forward[(r, c)] += s * line_map[(l, c)];
                }
            }
        }
        let (singular_values, pinv, completion) = if check {
            (rank_check(&forward)?, right_inverse(&forward)?, null_space(&forward))
        } else {
            (Vec::new(), DMatrix::zeros(cols, 0), DMatrix::zeros(cols, 0))
        };
        Ok(MomentumRouting {
            graph,
            kinds,
            internal_lines,
            forward,
            line_map,
            pinv,
            completion,
            singular_values,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.alpha.len()
    }

    pub fn defect_count(&self) -> usize {
        self.forward.nrows()
    }

    pub fn residual_count(&self) -> usize {
        self.completion.ncols()
    }

    /// Replaces the completion by `completion * rotation` for an orthogonal `rotation`.
    pub fn with_rotated_completion(mut self, rotation: &DMatrix<f64>) -> Result<Self> {
        if rotation.nrows() != self.residual_count() || rotation.ncols() != self.residual_count() {
            return Err(Error::Input("rotation has the wrong size".into()));
        }
        self.completion = &self.completion * rotation;
        Ok(self)
    }

    /// `z -> (kappa, q)`, per spatial component.
    pub fn to_defects(&self, z: &[Vec3]) -> (Vec<Vec3>, Vec<Vec3>) {
        (apply(&self.forward, z), apply(&self.completion.transpose(), z))
    }

    /// `(kappa, q) -> z`.
    pub fn from_defects(&self, kappa: &[Vec3], q: &[Vec3]) -> Vec<Vec3> {
        let a = apply(&self.pinv, kappa);
        let b = apply(&self.completion, q);
        a.iter().zip(&b).map(|(x, y)| crate::types::add3(*x, *y)).collect()
    }

    pub fn vertex_defects(&self, z: &[Vec3]) -> Vec<Vec3> {
        apply(&self.forward, z)
    }

    pub fn line_momenta(&self, z: &[Vec3]) -> Vec<Vec3> {
        apply(&self.line_map, z)
    }

    /// External momenta recovered from `z`.
    pub fn externals(&self, z: &[Vec3]) -> Vec<Vec3> {
        z[self.internal_lines..].to_vec()
    }

    /// Energy defect of each internal vertex for given line momenta.
    pub fn energy_defects_of_lines(&self, lines: &[Vec3], disp: &DispersionFunction) -> Vec<f64> {
        let om: Vec<f64> = lines.iter().map(|&k| disp.omega(k)).collect();
        self.graph
            .internal_vertices
            .iter()
            .map(|&v| {
                self.graph
                    .lines
                    .iter()
                    .zip(&om)
                    .map(|(&(a, b), &w)| {
                        if a == v {
                            w
                        } else if b == v {
                            -w
                        } else {
                            0.0
                        }
                    })
                    .sum()
            })
            .collect()
    }

    pub fn energy_defects(&self, disp: &DispersionFunction, kappa: &[Vec3], q: &[Vec3]) -> Vec<f64> {
        let z = self.from_defects(kappa, q);
        self.energy_defects_of_lines(&self.line_momenta(&z), disp)
    }

    /// Components of the graph that hold externals: external indices and
    /// whether the component has internal vertices.
    pub fn external_components(&self) -> Vec<(Vec<usize>, bool)> {
        let g = &self.graph;
        let mut parent: Vec<usize> = (0..g.vertex_count).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            r
        }
        for &(a, b) in &g.lines {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut groups: std::collections::BTreeMap<usize, (Vec<usize>, bool)> = Default::default();
        for (i, &v) in g.external_vertex.iter().enumerate() {
            let r = find(&mut parent, v);
            groups.entry(r).or_default().0.push(i);
        }
        for &v in &g.internal_vertices {
            let r = find(&mut parent, v);
            if let Some(e) = groups.get_mut(&r) {
                e.1 = true;
            }
        }
        groups.into_values().collect()
    }

    /// Variables `(k, u_C)`: internal-line momenta plus one total-momentum
    /// shift per component with internal vertices, applied to its first external. Returns the lines,
    /// the vertex defects and the shift columns as affine maps.
    pub fn shifted(&self, p: &[Vec3]) -> Result<(AffineLines, AffineLines, Vec<usize>)> {
        let n = self.n();
        if p.len() != n {
            return Err(Error::Input(format!("expected {n} external momenta")));
        }
        let comps: Vec<Vec<usize>> = self
            .external_components()
            .into_iter()
            .filter(|c| c.1)
            .map(|c| c.0)
            .collect();
        let k = self.internal_lines;
        let dim = k + comps.len();
        let mut embed = DMatrix::zeros(k + n, dim);
        for j in 0..k {
            embed[(j, j)] = 1.0;
        }
        for (c, comp) in comps.iter().enumerate() {
            embed[(k + comp[0], k + c)] = 1.0;
        }
        let mut z0 = vec![[0.0; 3]; k];
        z0.extend_from_slice(p);
        let lines = AffineLines {
            base: apply(&self.line_map, &z0),
            dirs: &self.line_map * &embed,
        };
        let defects = AffineLines {
            base: apply(&self.forward, &z0),
            dirs: &self.forward * &embed,
        };
        Ok((lines, defects, (k..dim).collect()))
    }

    /// Whether the external momenta of every component sum to zero (only
    /// components without internal vertices when `free_only`).
    pub fn conserves(&self, p: &[Vec3], free_only: bool) -> bool {
        let scale = p.iter().flat_map(|v| v.iter().map(|c| c.abs())).fold(1.0, f64::max);
        self.external_components()
            .into_iter()
            .filter(|(_, internal)| !(free_only && *internal))
            .all(|(comp, _)| (0..3).all(|c| comp.iter().map(|&i| p[i][c]).sum::<f64>().abs() <= 1e-9 * scale))
    }

    /// Line momenta on the support of all vertex deltas at fixed external
    /// momenta, as an affine function of the loop momenta, together with the
    /// Jacobian making the result a density in the component total momenta.
    pub fn loop_parametrization(&self, p: &[Vec3]) -> Result<(AffineLines, f64)> {
        self.loop_parametrization_in(p, LoopBasis::Orthonormal)
    }

    /// Like [`Self::loop_parametrization`] with loop coordinates chosen by `basis`.
    pub fn loop_parametrization_in(&self, p: &[Vec3], basis: LoopBasis) -> Result<(AffineLines, f64)> {
        let (lines, defects, _) = self.shifted(p)?;
        let scale = p.iter().flat_map(|v| v.iter().map(|c| c.abs())).fold(1.0, f64::max);
        if !self.conserves(p, false) {
            return Err(Error::Input(
                "external momenta of a connected component do not sum to zero".into(),
            ));
        }
        let d = &defects.dirs;
        let pinv = right_inverse(d)?;
        let t = basis.transform(null_space(d).ncols());
        let q = null_space(d) * &t;
        // particular solution of d x = -base
        let minus_base: Vec<Vec3> = defects.base.iter().map(|v| [-v[0], -v[1], -v[2]]).collect();
        let x0 = apply(&pinv, &minus_base);
        let residual = apply(d, &x0)
            .iter()
            .zip(&minus_base)
            .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if residual > 1e-9 * scale {
            return Err(Error::Numeric("no solution of the vertex constraints".into()));
        }
        let base = lines.eval(&x0);
        let det = if d.nrows() == 0 { 1.0 } else { (d * d.transpose()).determinant() };
        let jac = det.powf(-1.5) * t.determinant().abs().powi(3);
        Ok((
            AffineLines {
                base,
                dirs: &lines.dirs * &q,
            },
            jac,
        ))
    }
}

/// Coordinates on the loop momenta left free by the vertex constraints.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopBasis {
    /// Orthonormal basis of the constraint kernel.
    #[default]
    Orthonormal,
    /// The orthonormal basis times `-(1 + s) I + s U`, `U` strictly upper triangular ones.
    Skewed(f64),
}

impl LoopBasis {
    pub fn transform(self, dim: usize) -> DMatrix<f64> {
        match self {
            LoopBasis::Orthonormal => DMatrix::identity(dim, dim),
            LoopBasis::Skewed(s) => DMatrix::from_fn(dim, dim, |r, c| match r.cmp(&c) {
                std::cmp::Ordering::Equal => -(1.0 + s),
                std::cmp::Ordering::Less => s,
                std::cmp::Ordering::Greater => 0.0,
            }),
        }
    }
}

/// Applies a matrix to a list of 3-vectors, componentwise.
pub fn apply(m: &DMatrix<f64>, z: &[Vec3]) -> Vec<Vec3> {
    (0..m.nrows())
        .map(|r| {
            let mut v = [0.0; 3];
            for (c, zc) in z.iter().enumerate().take(m.ncols()) {
                let a = m[(r, c)];
                if a != 0.0 {
                    for s in 0..3 {
                        v[s] += a * zc[s];
                    }
                }
            }
            v
        })
        .collect()
}

/// Cumulative outer defects `(Omega^f, Omega^i)` of a totally ordered graph.
/// `Omega^f_j` covers the `j` latest slot-0 vertices, `Omega^i_j` the slot-n
/// vertices from the `j`-th latest to the earliest.
pub fn cumulative_outer_defects(graph: &FeynmanGraph, defects: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let internal = graph.internal_vertices();
    let delta_of = |v: usize| defects[internal.iter().position(|&x| x == v).expect("internal vertex")];
    let first: Vec<f64> = graph.slot_vertices(0).iter().map(|&v| delta_of(v)).collect();
    let last: Vec<f64> = graph.slot_vertices(graph.n()).iter().map(|&v| delta_of(v)).collect();
    let mut of = Vec::with_capacity(first.len());
    let mut acc = 0.0;
    for d in &first {
        acc -= d;
        of.push(acc);
    }
    let mut oi = vec![0.0; last.len()];
    let mut acc = 0.0;
    for j in (0..last.len()).rev() {
        acc += last[j];
        oi[j] = acc;
    }
    if graph.n() == 0 {
        // a single slot has no outer side to measure against
        return (of, Vec::new());
    }
    (of, oi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MassGapReport {
    pub samples: usize,
    pub min_margin: f64,
    pub worst_point: Vec<Vec3>,
    pub passed: bool,
}

/// Samples `(kappa = 0, q)` and checks every cumulative outer defect is at least `M`.
pub fn mass_gap_certificate(
    graph: &FeynmanGraph,
    routing: &MomentumRouting,
    disp: &DispersionFunction,
    samples: usize,
    seed: u64,
) -> MassGapReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = disp.mass();
    let dim = routing.residual_count();
    let kappa = vec![[0.0; 3]; routing.defect_count()];
    let mut min_margin = f64::INFINITY;
    let mut worst = Vec::new();
    for s in 0..samples {
        // a quarter of the points sit close to threshold
        let scale = match s % 4 {
            0 => 1e-3 * m,
            1 => 0.1 * m,
            2 => m,
            _ => 10.0 * m,
        };
        let q: Vec<Vec3> = (0..dim)
            .map(|_| {
                let mut v = [0.0; 3];
                for c in &mut v {
                    *c = scale * rng.sample::<f64, _>(StandardNormal);
                }
                v
            })
            .collect();
        let q = if s == 0 { vec![[0.0; 3]; dim] } else { q };
        let z = routing.from_defects(&kappa, &q);
        let defects = routing.energy_defects_of_lines(&routing.line_momenta(&z), disp);
        let (of, oi) = cumulative_outer_defects(graph, &defects);
        for &o in of.iter().chain(&oi) {
            let margin = o - m;
            if margin < min_margin {
                min_margin = margin;
                worst = q.clone();
            }
        }
    }
    MassGapReport {
        samples,
        min_margin,
        worst_point: worst,
        passed: min_margin >= -1e-9,
    }
}

/// Vertex defects recomputed straight from line momenta (independent of routing matrices).
pub fn raw_defects(graph: &FeynmanGraph, lines: &[Vec3]) -> Vec<Vec3> {
    graph
        .internal_vertices()
        .iter()
        .map(|&v| {
            let mut k = [0.0; 3];
            for (&(a, b), p) in graph.edges.iter().zip(lines) {
                for c in 0..3 {
                    if a == v {
                        k[c] += p[c];
                    }
                    if b == v {
                        k[c] -= p[c];
                    }
                }
            }
            k
        })
        .collect()
}

/// Random orthogonal matrix of the given size.
pub fn random_rotation(size: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(size, size, |_, _| rng.sample::<f64, _>(StandardNormal));
    if size == 0 {
        return m;
    }
    let qr = m.qr();
    qr.q()
}
