//! Graph contributions with the cut-off interaction, on a momentum grid or
//! with continuum momentum integrals.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::cubature::{Cubature, Envelope};
use super::time::{outer_time_factor, OuterGroup, SlotPath, SpectralRule};
use super::{leg_factor, Estimate, Evaluator, Insertion, Resolution};
use crate::error::{Error, Result};
use crate::fock_oracle::MomentumGrid;
use crate::graphs::FeynmanGraph;
use crate::interaction::{TimeProfile, VertexCutoff};
use crate::quadrature::End;
use crate::request::MomentumSmearing;
use crate::routing::{apply, LineKind, MomentumRouting};
use crate::types::{norm2, Vec3, C64};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Time factors of one graph at fixed external times.
struct Timing {
    spectral: Option<SpectralRule>,
    paths: Vec<Option<SlotPath>>,
    times: Vec<f64>,
    floor: f64,
    budget: usize,
}

impl Timing {
    fn new(ev: &Evaluator, cut: &VertexCutoff, graph: &FeynmanGraph, ins: &Insertion, res: Resolution) -> Result<Self> {
        let n = graph.n();
        let s = &ev.settings;
        let band = cut.band();
        let spectral_outer = band.is_some() && n > 0 && !graph.has_vacuum_components();
        let spectral = match band {
            Some(b) if spectral_outer => {
                let width = (b / 4.0).min(0.5 / cut.family.scale);
                Some(SpectralRule::new(cut, width, res.omega_order)?)
            }
            _ => None,
        };
        let anchor = ins.times.iter().fold(0.0f64, |a, t| a.max(t.abs()));
        let tail = cut.horizon(s.tail_tolerance) + anchor;
        let mut paths = Vec::with_capacity(n + 1);
        for slot in 0..=n {
            if graph.slot_vertices(slot).is_empty() {
                paths.push(None);
                continue;
            }
            let ends = if n == 0 {
                Some((End::MinusInfinity, End::PlusInfinity))
            } else if slot == 0 {
                (!spectral_outer).then_some((End::Finite(ins.times[0]), End::PlusInfinity))
            } else if slot == n {
                (!spectral_outer).then_some((End::MinusInfinity, End::Finite(ins.times[n - 1])))
            } else {
                Some((End::Finite(ins.times[slot]), End::Finite(ins.times[slot - 1])))
            };
            paths.push(match ends {
                Some((a, b)) => Some(SlotPath::new(a, b, cut, s.time_spacing, tail, res.collocation)?),
                None => None,
            });
        }
        let floor = ev.spec.mass() - graph.internal_count() as f64 * band.unwrap_or(0.0);
        Ok(Timing {
            spectral,
            paths,
            times: ins.times.clone(),
            floor,
            budget: s.cubature_budget,
        })
    }

    fn factor(&self, graph: &FeynmanGraph, deltas: &[f64]) -> Result<C64> {
        let n = graph.n();
        let mut out = C64::new(1.0, 0.0);
        for (slot, path) in self.paths.iter().enumerate() {
            let ds: Vec<f64> = graph.slot_vertices(slot).iter().map(|&v| deltas[v]).collect();
            if ds.is_empty() {
                continue;
            }
            out *= match (path, &self.spectral) {
                (Some(p), _) => p.nested(&ds),
                (None, Some(rule)) if slot == 0 => {
                    outer_time_factor(OuterGroup::First, &ds, self.times[0], rule, self.floor, self.budget)?
                }
                (None, Some(rule)) => {
                    outer_time_factor(OuterGroup::Last, &ds, self.times[n - 1], rule, self.floor, self.budget)?
                }
                (None, None) => unreachable!("outer group without a path or a spectral rule"),
            };
        }
        Ok(out)
    }
}

pub(crate) fn evaluate(ev: &Evaluator, graph: &FeynmanGraph, ins: &Insertion, grid: Option<&MomentumGrid>) -> Result<Estimate> {
    let cut = ev.cutoff()?;
    if graph.alpha != ins.alpha {
        return Err(Error::Input("graph and insertion have different sign vectors".into()));
    }
    let [coarse, fine] = ev.settings.passes();
    let routing = MomentumRouting::unchecked(graph)?;
    let run = |res: Resolution| -> Result<C64> {
        let timing = Timing::new(ev, cut, graph, ins, res)?;
        match grid {
            Some(g) => grid_pass(ev, cut, graph, ins, g, &routing, &timing),
            None => continuum_pass(ev, cut, graph, ins, &routing, &timing, res),
        }
    };
    let hi = run(fine)?;
    let lo = run(coarse)?;
    Ok((hi, (hi - lo).norm()))
}

fn external_phase(ev: &Evaluator, ins: &Insertion, momenta: &[Vec3]) -> C64 {
    let mut v = C64::new(1.0, 0.0);
    for (i, p) in momenta.iter().enumerate() {
        let om = ev.spec.dispersion.omega(*p);
        v *= C64::from_polar(leg_factor(&ev.spec, *p), ins.alpha[i].value() * om * ins.times[i]);
    }
    v
}

fn node_value(
    ev: &Evaluator,
    cut: &VertexCutoff,
    graph: &FeynmanGraph,
    routing: &MomentumRouting,
    timing: &Timing,
    z: &[Vec3],
) -> Result<C64> {
    let kappa = routing.vertex_defects(z);
    let s: f64 = kappa.iter().map(|&k| cut.spatial(k)).product();
    if s == 0.0 {
        return Ok(ZERO);
    }
    let lines = routing.line_momenta(z);
    let omega: Vec<f64> = lines.iter().map(|&k| ev.spec.dispersion.omega(k)).collect();
    let (k, deltas) = ev.vertex_data(graph, &lines, &omega)?;
    Ok(k * s * timing.factor(graph, &deltas)?)
}

fn grid_pass(
    ev: &Evaluator,
    cut: &VertexCutoff,
    graph: &FeynmanGraph,
    ins: &Insertion,
    grid: &MomentumGrid,
    routing: &MomentumRouting,
    timing: &Timing,
) -> Result<C64> {
    let dv = grid.cell_volume();
    let mut ext_idx = Vec::with_capacity(ins.n());
    for p in &ins.momenta {
        ext_idx.push(
            grid.index_of(*p)
                .ok_or_else(|| Error::Input(format!("momentum {p:?} is not a grid point")))?,
        );
    }
    let mut pref = 1.0 / graph.parallel_factor() as f64;
    for kind in &routing.kinds {
        if let LineKind::Direct { plus, minus } = *kind {
            if ext_idx[plus] != grid.negated(ext_idx[minus]) {
                return Ok(ZERO);
            }
            pref /= dv;
        }
    }
    let internal = routing.internal_lines;
    let g = grid.len();
    let count = g.checked_pow(internal as u32).unwrap_or(usize::MAX);
    if count > ev.settings.cubature_budget {
        return Err(Error::Budget {
            what: "grid momentum configurations".into(),
            needed: count,
            limit: ev.settings.cubature_budget,
        });
    }
    let parts: Vec<C64> = (0..count)
        .into_par_iter()
        .map(|c| {
            let mut z = Vec::with_capacity(internal + ins.n());
            let mut r = c;
            for _ in 0..internal {
                z.push(grid.point(r % g));
                r /= g;
            }
            z.extend_from_slice(&ins.momenta);
            node_value(ev, cut, graph, routing, timing, &z)
        })
        .collect::<Result<_>>()?;
    let sum: C64 = parts.iter().sum();
    Ok(sum * pref * dv.powi(internal as i32) * external_phase(ev, ins, &ins.momenta))
}

/// Integration variables of the continuum mode: `z = z0 + embed x` with
/// `z = (internal-line momenta, external momenta)`, and Gaussian test factors
/// `norm exp(-a |base + row x|^2)`.
struct Variables {
    dim: usize,
    z0: Vec<Vec3>,
    embed: DMatrix<f64>,
    tests: Vec<(f64, Vec3, Vec<f64>, f64)>,
}

impl Variables {
    fn z(&self, x: &[Vec3]) -> Vec<Vec3> {
        let shift = apply(&self.embed, x);
        self.z0
            .iter()
            .zip(&shift)
            .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
            .collect()
    }

    fn test_value(&self, x: &[Vec3]) -> f64 {
        self.tests
            .iter()
            .map(|(a, base, row, norm)| {
                let mut v = *base;
                for (j, xj) in x.iter().enumerate() {
                    for c in 0..3 {
                        v[c] += row[j] * xj[c];
                    }
                }
                norm * (-a * norm2(v)).exp()
            })
            .product()
    }
}

fn variables(routing: &MomentumRouting, ins: &Insertion, smearing: &MomentumSmearing) -> Result<Option<Variables>> {
    let k = routing.internal_lines;
    let n = ins.n();
    let directs: Vec<(usize, usize)> = routing
        .kinds
        .iter()
        .filter_map(|kind| match *kind {
            LineKind::Direct { plus, minus } => Some((plus, minus)),
            _ => None,
        })
        .collect();
    let mut z0 = vec![[0.0; 3]; k];
    let mut tests = Vec::new();
    let embed;
    let dim;
    match smearing {
        MomentumSmearing::Point | MomentumSmearing::TotalMomentum { .. } => {
            if !routing.conserves(&ins.momenta, true) {
                return Ok(None);
            }
            z0.extend_from_slice(&ins.momenta);
            let shifts: Vec<usize> = match smearing {
                MomentumSmearing::TotalMomentum { .. } => routing
                    .external_components()
                    .into_iter()
                    .filter(|c| c.1)
                    .map(|c| c.0[0])
                    .collect(),
                _ => Vec::new(),
            };
            dim = k + shifts.len();
            let mut e = DMatrix::zeros(k + n, dim);
            for j in 0..k {
                e[(j, j)] = 1.0;
            }
            for (c, &rep) in shifts.iter().enumerate() {
                e[(k + rep, k + c)] = 1.0;
                if let MomentumSmearing::TotalMomentum { width } = smearing {
                    let mut row = vec![0.0; dim];
                    row[k + c] = 1.0;
                    tests.push((0.5 / (width * width), [0.0; 3], row, 1.0));
                }
            }
            embed = e;
        }
        MomentumSmearing::Product { widths } => {
            let minus: Vec<usize> = directs.iter().map(|d| d.1).collect();
            let free: Vec<usize> = (0..n).filter(|i| !minus.contains(i)).collect();
            dim = k + free.len();
            let mut e = DMatrix::zeros(k + n, dim);
            for j in 0..k {
                e[(j, j)] = 1.0;
            }
            for (c, &i) in free.iter().enumerate() {
                e[(k + i, k + c)] = 1.0;
            }
            for &(plus, m) in &directs {
                let c = free.iter().position(|&i| i == plus).expect("plus end is free");
                e[(k + m, k + c)] = -1.0;
            }
            z0.extend(std::iter::repeat([0.0; 3]).take(n));
            for i in 0..n {
                let w = widths[i];
                let p = ins.momenta[i];
                let row: Vec<f64> = (0..dim).map(|c| e[(k + i, c)]).collect();
                tests.push((
                    0.5 / (w * w),
                    [-p[0], -p[1], -p[2]],
                    row,
                    (2.0 * std::f64::consts::PI * w * w).powf(-1.5),
                ));
            }
            embed = e;
        }
    }
    Ok(Some(Variables { dim, z0, embed, tests }))
}

fn continuum_pass(
    ev: &Evaluator,
    cut: &VertexCutoff,
    graph: &FeynmanGraph,
    ins: &Insertion,
    routing: &MomentumRouting,
    timing: &Timing,
    res: Resolution,
) -> Result<C64> {
    let Some(vars) = variables(routing, ins, &ins.smearing)? else {
        return Ok(ZERO);
    };
    let mut env = Envelope::new(vars.dim);
    for (a, base, row, _) in &vars.tests {
        env.add(*a, *base, row.clone());
    }
    let sigma = cut.family.spatial_sigma();
    let d_base = apply(&routing.forward, &vars.z0);
    let d_dirs = &routing.forward * &vars.embed;
    for r in 0..d_base.len() {
        env.add(0.5 / (sigma * sigma), d_base[r], d_dirs.row(r).iter().copied().collect());
    }
    let l_base = apply(&routing.line_map, &vars.z0);
    let l_dirs = &routing.line_map * &vars.embed;
    let ell = ev.kernel_length();
    for (l, &(a, b)) in graph.edges.iter().enumerate() {
        let legs = [a, b].iter().filter(|&&v| !graph.is_external(v)).count();
        env.add(legs as f64 * 0.5 * ell * ell, l_base[l], l_dirs.row(l).iter().copied().collect());
    }
    let rule = env.rule(res.hermite, ev.settings.cubature_budget, 0.0)?;
    let k = routing.internal_lines;
    let pref = 1.0 / graph.parallel_factor() as f64;
    let value = sum_nodes(&rule, |x| {
        let t = vars.test_value(x);
        if t == 0.0 {
            return Ok(ZERO);
        }
        let z = vars.z(x);
        let v = node_value(ev, cut, graph, routing, timing, &z)?;
        Ok(v * t * external_phase(ev, ins, &z[k..]))
    })?;
    Ok(value * pref)
}

/// Weighted sum over cubature nodes with a fixed reduction order.
pub(crate) fn sum_nodes<F>(rule: &Cubature, f: F) -> Result<C64>
where
    F: Fn(&[Vec3]) -> Result<C64> + Sync,
{
    const CHUNK: usize = 1024;
    let parts: Vec<C64> = rule
        .points
        .par_chunks(CHUNK)
        .zip(rule.weights.par_chunks(CHUNK))
        .map(|(ps, ws)| {
            let mut acc = ZERO;
            for (p, w) in ps.iter().zip(ws) {
                acc += f(p)? * *w;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}
