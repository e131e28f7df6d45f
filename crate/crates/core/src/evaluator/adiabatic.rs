//! Adiabatic-limit rules: ordered graphs in time or energy, and topologies
//! summed over orientations.

use std::collections::BTreeSet;

use super::cubature::Envelope;
use super::cutoff::sum_nodes;
use super::time::{first_slot_adiabatic, last_slot_adiabatic, simplex_expsum, ExpSum};
use super::{leg_factor, two_pi_power, Estimate, Evaluator, Insertion, Presentation};
use crate::combinatorics::{linear_extensions, Poset};
use crate::error::{Error, Result};
use crate::graphs::{enumerate_topologies, layout, FeynmanGraph, Topology};
use crate::request::CorrelatorKind;
use crate::routing::{AffineLines, MomentumRouting, OrientedLines};
use crate::types::{Vec3, C64};

const I: C64 = C64::new(0.0, 1.0);
const ONE: C64 = C64::new(1.0, 0.0);
const ZERO: C64 = C64::new(0.0, 0.0);

pub(crate) fn topologies(ev: &Evaluator, alpha: &[crate::types::Sign], order: usize) -> Vec<Topology> {
    let valences: BTreeSet<usize> = ev.spec.valences().into_iter().collect();
    enumerate_topologies(alpha, order, &valences, false)
}

pub(crate) fn topology_text(t: &Topology) -> String {
    let alpha: String = t.alpha.iter().map(|s| s.symbol()).collect();
    let edges: Vec<String> = t.edges.iter().map(|(a, b)| format!("{a}-{b}")).collect();
    format!("alpha={alpha};internal={};aut={};edges={}", t.internal, t.automorphisms, edges.join(","))
}

/// Momentum integral of `f(lines)` over the loop variables of `lines`, with
/// coarse and fine cubature.
fn integrate<F>(ev: &Evaluator, lines: &AffineLines, legs: &[usize], f: F) -> Result<Estimate>
where
    F: Fn(&[Vec3]) -> Result<C64> + Sync,
{
    let dim = lines.dim();
    if dim == 0 {
        return Ok((f(&lines.base)?, 0.0));
    }
    let ell = ev.kernel_length();
    let mut env = Envelope::new(dim);
    for (l, &n) in legs.iter().enumerate() {
        env.add(n as f64 * 0.5 * ell * ell, lines.base[l], lines.dirs.row(l).iter().copied().collect());
    }
    let [coarse, fine] = ev.settings.passes();
    let run = |nodes: usize| -> Result<C64> {
        let rule = env.rule(nodes, ev.settings.cubature_budget, 0.0)?;
        sum_nodes(&rule, |x| f(&lines.eval(x)))
    };
    let hi = run(fine.hermite)?;
    let lo = run(coarse.hermite)?;
    Ok((hi, (hi - lo).norm()))
}

fn internal_ends(lines: &[(usize, usize)], is_external: impl Fn(usize) -> bool) -> Vec<usize> {
    lines
        .iter()
        .map(|&(a, b)| [a, b].iter().filter(|&&v| !is_external(v)).count())
        .collect()
}

fn external_norm(ev: &Evaluator, ins: &Insertion) -> f64 {
    ins.momenta.iter().map(|&p| leg_factor(&ev.spec, p)).product()
}

/// Time dependence of an ordered graph at fixed line momenta, one variable per external.
fn ordered_expsum(ev: &Evaluator, graph: &FeynmanGraph, ins: &Insertion, deltas: &[f64]) -> Result<ExpSum> {
    let n = graph.n();
    let mut es = ExpSum::constant(n, ONE);
    for (i, &p) in ins.momenta.iter().enumerate() {
        es.shift(i, ins.alpha[i].value() * ev.spec.dispersion.omega(p));
    }
    for slot in 0..=n {
        let ds: Vec<f64> = graph.slot_vertices(slot).iter().map(|&v| deltas[v]).collect();
        if ds.is_empty() {
            continue;
        }
        if slot == 0 {
            let (c, s) = first_slot_adiabatic(&ds);
            es.scale(c);
            es.shift(0, s);
        } else if slot == n {
            let (c, s) = last_slot_adiabatic(&ds);
            es.scale(c);
            es.shift(n - 1, s);
        } else {
            let inner = simplex_expsum(&ds, ev.settings.degenerate_tolerance).embed(n, &[slot - 1, slot]);
            es = es.product(&inner);
        }
    }
    Ok(es)
}

fn reduce(ev: &Evaluator, ins: &Insertion, es: &ExpSum) -> Result<C64> {
    match ins.kind {
        CorrelatorKind::GreenEnergy => es.fourier(&ins.energies, ev.pole_floor()),
        CorrelatorKind::WightmanUnrestricted => Ok(es.smeared(&ins.times, &ins.time_widths)),
        _ => Ok(es.eval(&ins.times)),
    }
}

fn partial_sum_product(values: impl Iterator<Item = f64>, count: usize, floor: f64) -> Result<C64> {
    let mut s = 0.0;
    let mut out = ONE;
    for (j, v) in values.take(count).enumerate() {
        s += v;
        if s.abs() < floor {
            return Err(Error::Numeric(format!(
                "energy partial sum over the {} latest vertices is {s:.3e}, within the pole margin",
                j + 1
            )));
        }
        out *= I / s;
    }
    Ok(out)
}

/// Disconnected graphs at external energies: every component carries its own
/// energy delta. Returns true when one of them is off its support (the
/// contribution vanishes); fails when all of them sit on it.
fn split_energy_support(ins: &Insertion, components: &[Vec<usize>]) -> Result<bool> {
    if ins.kind != CorrelatorKind::GreenEnergy || components.len() < 2 {
        return Ok(false);
    }
    let scale: f64 = ins.energies.iter().map(|e| e.abs()).sum::<f64>().max(1.0);
    let off = components
        .iter()
        .any(|c| c.iter().map(|&i| ins.energies[i]).sum::<f64>().abs() > 1e-12 * scale);
    if off {
        Ok(true)
    } else {
        Err(Error::Unsupported(
            "disconnected graph with energies conserved per component".into(),
        ))
    }
}

pub(crate) fn evaluate_ordered(ev: &Evaluator, graph: &FeynmanGraph, ins: &Insertion, p: Presentation) -> Result<Estimate> {
    if graph.alpha != ins.alpha {
        return Err(Error::Input("graph and insertion have different sign vectors".into()));
    }
    if graph.has_vacuum_components() {
        return Err(Error::Unsupported("vacuum components in the adiabatic limit".into()));
    }
    let n = graph.n();
    if split_energy_support(ins, &graph.external_components())? {
        return Ok((ZERO, 0.0));
    }
    let routing = MomentumRouting::build(graph)?;
    if !routing.conserves(&ins.momenta, false) {
        return Ok((ZERO, 0.0));
    }
    let (lines, jac) = routing.loop_parametrization_in(&ins.momenta, ev.settings.loop_basis)?;
    let legs = internal_ends(&graph.edges, |v| graph.is_external(v));
    let weight = jac * external_norm(ev, ins) / graph.parallel_factor() as f64;
    let omega_of = |ls: &[Vec3]| -> Vec<f64> { ls.iter().map(|&k| ev.spec.dispersion.omega(k)).collect() };
    match p {
        Presentation::OrderedTime => integrate(ev, &lines, &legs, |ls| {
            let (k, deltas) = ev.vertex_data(graph, ls, &omega_of(ls))?;
            let mut es = ordered_expsum(ev, graph, ins, &deltas)?;
            es.scale(k * weight);
            reduce(ev, ins, &es)
        }),
        Presentation::OrderedEnergy => {
            if ins.kind != CorrelatorKind::GreenEnergy {
                return Err(Error::Unsupported("energy presentation needs external energies".into()));
            }
            let vertices = graph.vertices.len();
            let ext_freq: Vec<f64> = (0..n)
                .map(|i| ins.alpha[i].value() * ev.spec.dispersion.omega(ins.momenta[i]) + ins.energies[i])
                .collect();
            let pref = two_pi_power(1 - n as i32) * (-I).powu(graph.internal_count() as u32) * weight;
            integrate(ev, &lines, &legs, |ls| {
                let (k, deltas) = ev.vertex_data(graph, ls, &omega_of(ls))?;
                let freq = (0..vertices).map(|v| match graph.vertices[v] {
                    crate::graphs::Vertex::External { index, .. } => ext_freq[index],
                    _ => deltas[v],
                });
                Ok(k * pref * partial_sum_product(freq, vertices - 1, ev.pole_floor())?)
            })
        }
        _ => Err(Error::Input("ordered evaluation needs an ordered presentation".into())),
    }
}

/// Orientations of a topology's lines whose vertex splits all have kernels.
fn orientations(ev: &Evaluator, t: &Topology) -> Vec<Vec<(usize, usize)>> {
    let base = OrientedLines::from_topology(t);
    let n = t.n();
    let free: Vec<usize> = (0..base.lines.len())
        .filter(|&l| base.lines[l].0 >= n && base.lines[l].1 >= n)
        .collect();
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << free.len()) {
        let mut lines = base.lines.clone();
        for (bit, &l) in free.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                let (a, b) = lines[l];
                lines[l] = (b, a);
            }
        }
        let ok = (n..t.vertex_count()).all(|v| {
            let c = lines.iter().filter(|e| e.0 == v).count();
            let a = lines.iter().filter(|e| e.1 == v).count();
            ev.spec.kernel(c, a).is_some()
        });
        if ok {
            out.push(lines);
        }
    }
    out
}

/// Ordered graph for topology vertices listed latest first.
fn ordered_graph(t: &Topology, lines: &[(usize, usize)], order: &[usize]) -> FeynmanGraph {
    let n = t.n();
    let mut rank = vec![0; order.len()];
    let mut slots = vec![0usize; n + 1];
    let mut slot = 0;
    for (r, &v) in order.iter().enumerate() {
        rank[v] = r;
        if v < n {
            slot += 1;
        } else {
            slots[slot] += 1;
        }
    }
    let mut edges: Vec<(usize, usize)> = lines.iter().map(|&(a, b)| (rank[a], rank[b])).collect();
    edges.sort_unstable();
    let mut g = FeynmanGraph {
        alpha: t.alpha.clone(),
        vertices: layout(&t.alpha, &slots),
        slots,
        edges,
        total_order: true,
        automorphisms: 1,
    };
    g.automorphisms = g.parallel_factor();
    g
}

/// Topology summed over orientations and time orders, in the time presentation.
pub(crate) fn unordered_time(ev: &Evaluator, t: &Topology, ins: &Insertion) -> Result<Estimate> {
    let n = t.n();
    let mut total = ZERO;
    let mut err = 0.0;
    for lines in orientations(ev, t) {
        let mut rel = lines.clone();
        rel.extend((1..n).map(|i| (i, i - 1)));
        let poset = match Poset::new(t.vertex_count(), &rel) {
            Ok(p) => p,
            Err(Error::Cycle(..)) => continue,
            Err(e) => return Err(e),
        };
        for ext in linear_extensions(&poset) {
            let order: Vec<usize> = ext.into_iter().rev().collect();
            let g = ordered_graph(t, &lines, &order);
            let (v, e) = evaluate_ordered(ev, &g, ins, Presentation::OrderedTime)?;
            let f = g.parallel_factor() as f64 / t.automorphisms as f64;
            total += v * f;
            err += e * f;
        }
    }
    Ok((total, err))
}

/// Topology with energy-space propagators, summed over orientations; covers
/// every ordering of the externals at once.
pub(crate) fn unordered_energy(ev: &Evaluator, t: &Topology, ins: &Insertion) -> Result<Estimate> {
    if ins.kind != CorrelatorKind::GreenEnergy {
        return Err(Error::Unsupported("energy presentation needs external energies".into()));
    }
    let n = t.n();
    let comps: Vec<Vec<usize>> = t
        .components()
        .into_iter()
        .map(|c| c.into_iter().filter(|&v| v < n).collect())
        .collect();
    if split_energy_support(ins, &comps)? {
        return Ok((ZERO, 0.0));
    }
    let floor = ev.pole_floor();
    let pref = two_pi_power(1 - n as i32) * (-I).powu(t.internal as u32) * external_norm(ev, ins)
        / t.automorphisms as f64;
    let energies: Vec<Vec3> = ins.energies.iter().map(|&e| [-e, 0.0, 0.0]).collect();
    let mut total = ZERO;
    let mut err = 0.0;
    for lines in orientations(ev, t) {
        let ol = OrientedLines {
            alpha: t.alpha.clone(),
            vertex_count: t.vertex_count(),
            external_vertex: (0..n).collect(),
            internal_vertices: (n..t.vertex_count()).collect(),
            lines: lines.clone(),
        };
        let routing = MomentumRouting::from_lines(ol)?;
        if !routing.conserves(&ins.momenta, false) {
            return Ok((ZERO, 0.0));
        }
        let (mom, jac) = routing.loop_parametrization_in(&ins.momenta, ev.settings.loop_basis)?;
        let (nu, _) = routing.loop_parametrization_in(&energies, ev.settings.loop_basis)?;
        if nu.dim() > 1 {
            return Err(Error::Unsupported("energy presentation beyond one loop".into()));
        }
        let sigma: Vec<f64> = (0..lines.len())
            .map(|l| if nu.dim() == 0 || nu.dirs[(l, 0)].abs() < 1e-9 { 0.0 } else { nu.dirs[(l, 0)].signum() })
            .collect();
        let legs = internal_ends(&lines, |v| v < n);
        let (v, e) = integrate(ev, &mom, &legs, |ls| {
            let mut k = ONE;
            for v in n..t.vertex_count() {
                let out: Vec<Vec3> = lines.iter().zip(ls).filter(|(e, _)| e.0 == v).map(|(_, p)| *p).collect();
                let inc: Vec<Vec3> = lines.iter().zip(ls).filter(|(e, _)| e.1 == v).map(|(_, p)| *p).collect();
                let kern = ev
                    .spec
                    .kernel(out.len(), inc.len())
                    .ok_or_else(|| Error::Input("orientation without a kernel".into()))?;
                k *= kern.eval(&out, &inc);
            }
            let a: Vec<f64> = ls
                .iter()
                .zip(&nu.base)
                .map(|(&p, b)| b[0] - ev.spec.dispersion.omega(p))
                .collect();
            let mut prop = ONE;
            for l in 0..lines.len() {
                if sigma[l] == 0.0 {
                    prop *= pole(a[l], floor)?;
                }
            }
            if sigma.iter().any(|&s| s > 0.0) {
                // residues in the half-plane of the sigma < 0 poles; with no pole
                // on the other side the contour closes there and gives zero
                let mut loop_sum = ZERO;
                for j in (0..lines.len()).filter(|&j| sigma[j] < 0.0) {
                    let mut term = ONE;
                    for k2 in (0..lines.len()).filter(|&k2| k2 != j && sigma[k2] != 0.0) {
                        term *= pole(sigma[k2] * a[j] + a[k2], floor)?;
                    }
                    loop_sum += term;
                }
                prop *= loop_sum;
            } else if sigma.iter().any(|&s| s < 0.0) {
                return Ok(ZERO);
            }
            Ok(k * prop)
        })?;
        total += v * jac * pref;
        err += e * jac * pref.norm();
    }
    Ok((total, err))
}

fn pole(den: f64, floor: f64) -> Result<C64> {
    if den.abs() < floor {
        return Err(Error::Numeric(format!("propagator denominator {den:.3e} within the pole margin")));
    }
    Ok(I / den)
}
