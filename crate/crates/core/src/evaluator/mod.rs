//! Graph-by-graph evaluation of correlators, with an adiabatic cut-off or in
//! the adiabatic limit, and assembly into Wightman and Green functions.

pub mod adiabatic;
pub mod cubature;
pub mod cutoff;
pub mod scan;
pub mod time;

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock_oracle::MomentumGrid;
use crate::graphs::{enumerate_order, FeynmanGraph};
use crate::interaction::{InteractionSpec, KernelShape, VertexCutoff};
use crate::request::{CorrelatorKind, CorrelatorRequest, CorrelatorResult, GraphValue, MomentumSmearing};
use crate::routing::LoopBasis;
use crate::types::{Sign, Vec3, C64};

pub use scan::{adiabatic_scan, ScanRow, ScanTable};

/// Presentation of the adiabatic-limit rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Presentation {
    /// Ordered graphs, external times.
    OrderedTime,
    /// Ordered graphs, external energies.
    OrderedEnergy,
    /// Topologies summed over orientations, external times.
    UnorderedTime,
    /// Topologies with energy-space propagators, external energies.
    UnorderedEnergy,
}

#[derive(Clone, Debug)]
pub enum Mode {
    /// Cut-off interaction with internal momenta summed over a grid.
    CutoffGrid(MomentumGrid),
    /// Cut-off interaction with continuum momentum integrals.
    CutoffContinuum,
    Adiabatic(Presentation),
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::CutoffGrid(_) => "cutoff_grid",
            Mode::CutoffContinuum => "cutoff_continuum",
            Mode::Adiabatic(Presentation::OrderedTime) => "adiabatic_ordered_time",
            Mode::Adiabatic(Presentation::OrderedEnergy) => "adiabatic_ordered_energy",
            Mode::Adiabatic(Presentation::UnorderedTime) => "adiabatic_unordered_time",
            Mode::Adiabatic(Presentation::UnorderedEnergy) => "adiabatic_unordered_energy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Gauss-Hermite nodes per momentum component (the coarse rule uses 4 fewer).
    pub hermite_nodes: usize,
    pub cubature_budget: usize,
    /// Gauss-Legendre order per spectral panel.
    pub omega_order: usize,
    /// Collocation order per time panel.
    pub collocation_order: usize,
    pub time_spacing: f64,
    pub tail_tolerance: f64,
    /// Minimum distance of energy denominators from zero, in units of the mass.
    pub pole_margin: f64,
    pub degenerate_tolerance: f64,
    /// Keep graphs with vacuum components (unnormalised numerators).
    pub include_vacuum_graphs: bool,
    /// Loop momentum coordinates of the adiabatic presentations.
    pub loop_basis: LoopBasis,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            hermite_nodes: 12,
            cubature_budget: 4_000_000,
            omega_order: 8,
            collocation_order: 16,
            time_spacing: 0.5,
            tail_tolerance: 1e-14,
            pole_margin: 1e-3,
            degenerate_tolerance: 1e-7,
            include_vacuum_graphs: false,
            loop_basis: LoopBasis::Orthonormal,
        }
    }
}

/// Quadrature sizes of one evaluation pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Resolution {
    pub hermite: usize,
    pub omega_order: usize,
    pub collocation: usize,
}

impl EvalSettings {
    /// Coarse and fine passes; their difference is the error estimate.
    pub(crate) fn passes(&self) -> [Resolution; 2] {
        [
            Resolution {
                hermite: self.hermite_nodes.saturating_sub(4).max(2),
                omega_order: (self.omega_order * 3 / 4).max(2),
                collocation: (self.collocation_order * 3 / 4).max(2),
            },
            Resolution {
                hermite: self.hermite_nodes,
                omega_order: self.omega_order,
                collocation: self.collocation_order,
            },
        ]
    }
}

/// External data in product order (position 0 is the leftmost field).
#[derive(Clone, Debug, PartialEq)]
pub struct Insertion {
    pub kind: CorrelatorKind,
    pub alpha: Vec<Sign>,
    pub times: Vec<f64>,
    pub momenta: Vec<Vec3>,
    pub energies: Vec<f64>,
    pub time_widths: Vec<f64>,
    pub smearing: MomentumSmearing,
    /// Position `k` holds request field `perm[k]`.
    pub perm: Vec<usize>,
}

impl Insertion {
    pub fn from_request(r: &CorrelatorRequest, perm: Vec<usize>) -> Self {
        let pick = |v: &[f64]| -> Vec<f64> {
            if v.is_empty() {
                Vec::new()
            } else {
                perm.iter().map(|&i| v[i]).collect()
            }
        };
        Insertion {
            kind: r.kind,
            alpha: perm.iter().map(|&i| r.alpha[i]).collect(),
            times: pick(&r.times),
            momenta: perm.iter().map(|&i| r.momenta[i]).collect(),
            energies: pick(&r.energies),
            time_widths: pick(&r.time_widths),
            smearing: match &r.smearing {
                MomentumSmearing::Product { widths } => MomentumSmearing::Product {
                    widths: perm.iter().map(|&i| widths[i]).collect(),
                },
                s => s.clone(),
            },
            perm,
        }
    }

    fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(k, &i)| k == i)
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

pub struct Evaluator {
    pub spec: InteractionSpec,
    pub cutoff: Option<Arc<VertexCutoff>>,
    pub settings: EvalSettings,
}

/// Value and error estimate of one contribution.
pub type Estimate = (C64, f64);

impl Evaluator {
    pub fn new(spec: InteractionSpec, cutoff: Option<Arc<VertexCutoff>>, settings: EvalSettings) -> Self {
        Evaluator { spec, cutoff, settings }
    }

    pub fn splits(&self) -> BTreeSet<(usize, usize)> {
        self.spec.kernels.keys().copied().collect()
    }

    /// Totally ordered graphs at one order.
    pub fn graphs(&self, alpha: &[Sign], order: usize) -> Vec<FeynmanGraph> {
        enumerate_order(alpha, order, &self.splits(), self.settings.include_vacuum_graphs, true)
    }

    pub(crate) fn cutoff(&self) -> Result<&VertexCutoff> {
        self.cutoff
            .as_deref()
            .ok_or_else(|| Error::Input("cut-off mode needs a vertex cut-off profile".into()))
    }

    /// Gaussian decay length of the kernels, used to shape momentum cubature.
    pub(crate) fn kernel_length(&self) -> f64 {
        match self.spec.shape {
            KernelShape::Gaussian { length } | KernelShape::WickProduct { length } => length,
            KernelShape::Custom => 1.0 / self.spec.mass(),
        }
    }

    pub(crate) fn pole_floor(&self) -> f64 {
        self.settings.pole_margin * self.spec.mass()
    }

    /// Product of kernels and the energy defect per vertex id (zero at externals).
    pub(crate) fn vertex_data(&self, graph: &FeynmanGraph, lines: &[Vec3], omega: &[f64]) -> Result<(C64, Vec<f64>)> {
        let mut k = C64::new(1.0, 0.0);
        let mut deltas = vec![0.0; graph.vertices.len()];
        for v in graph.internal_vertices() {
            let mut out = Vec::new();
            let mut inc = Vec::new();
            for (l, &(a, b)) in graph.edges.iter().enumerate() {
                if a == v {
                    out.push(lines[l]);
                    deltas[v] += omega[l];
                } else if b == v {
                    inc.push(lines[l]);
                    deltas[v] -= omega[l];
                }
            }
            let kern = self
                .spec
                .kernel(out.len(), inc.len())
                .ok_or_else(|| Error::Input(format!("no kernel with {} creators and {} annihilators", out.len(), inc.len())))?;
            k *= kern.eval(&out, &inc);
        }
        Ok((k, deltas))
    }

    fn arrangements(&self, r: &CorrelatorRequest, mode: &Mode) -> Result<Vec<Insertion>> {
        let n = r.n();
        Ok(match r.kind {
            CorrelatorKind::WightmanRestricted | CorrelatorKind::WightmanUnrestricted => {
                vec![Insertion::from_request(r, (0..n).collect())]
            }
            CorrelatorKind::GreenTime => {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| r.times[b].total_cmp(&r.times[a]));
                vec![Insertion::from_request(r, idx)]
            }
            CorrelatorKind::GreenEnergy => {
                if let Mode::Adiabatic(Presentation::UnorderedEnergy) = mode {
                    vec![Insertion::from_request(r, (0..n).collect())]
                } else {
                    permutations(n).into_iter().map(|p| Insertion::from_request(r, p)).collect()
                }
            }
        })
    }

    fn check_mode(&self, r: &CorrelatorRequest, mode: &Mode) -> Result<()> {
        use CorrelatorKind::*;
        let ok = match mode {
            Mode::CutoffGrid(_) => matches!(r.kind, WightmanRestricted | GreenTime) && r.smearing == MomentumSmearing::Point,
            Mode::CutoffContinuum => matches!(r.kind, WightmanRestricted | GreenTime),
            Mode::Adiabatic(Presentation::OrderedTime) | Mode::Adiabatic(Presentation::UnorderedTime) => {
                !matches!(r.smearing, MomentumSmearing::Product { .. })
            }
            Mode::Adiabatic(_) => r.kind == GreenEnergy && !matches!(r.smearing, MomentumSmearing::Product { .. }),
        };
        if !ok {
            return Err(Error::Unsupported(format!("{:?} request in {} mode", r.kind, mode.name())));
        }
        if matches!(mode, Mode::Adiabatic(_)) && self.settings.include_vacuum_graphs {
            return Err(Error::Unsupported("vacuum graphs in the adiabatic limit".into()));
        }
        if r.kind == CorrelatorKind::GreenEnergy {
            let s: f64 = r.energies.iter().sum();
            let scale: f64 = r.energies.iter().map(|e| e.abs()).sum::<f64>().max(1.0);
            if s.abs() > 1e-12 * scale {
                return Err(Error::Input(format!("energies must sum to zero, got {s:e}")));
            }
        }
        Ok(())
    }

    /// Check that the band limit leaves a gap at every order up to `order`.
    fn check_band(&self, order: usize) -> Result<()> {
        if let Some(c) = &self.cutoff {
            if let Some(band) = c.temporal.as_ref().map(|h| h.delta()) {
                let bound = self.spec.mass() / (order as f64 + 1.0);
                if band > bound * (1.0 + 1e-12) {
                    return Err(Error::Input(format!(
                        "band limit {band} exceeds mass/(order+1) = {bound}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per-graph contributions of one arrangement at one order.
    fn contributions(&self, ins: &Insertion, order: usize, mode: &Mode) -> Result<Vec<(String, Estimate)>> {
        let prefix = if ins.is_identity() {
            String::new()
        } else {
            format!(
                "perm={};",
                ins.perm.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(",")
            )
        };
        match mode {
            Mode::Adiabatic(Presentation::UnorderedTime) | Mode::Adiabatic(Presentation::UnorderedEnergy) => {
                let tops = adiabatic::topologies(self, &ins.alpha, order);
                tops.par_iter()
                    .map(|t| {
                        let est = match mode {
                            Mode::Adiabatic(Presentation::UnorderedTime) => adiabatic::unordered_time(self, t, ins)?,
                            _ => adiabatic::unordered_energy(self, t, ins)?,
                        };
                        Ok((format!("{prefix}{}", adiabatic::topology_text(t)), est))
                    })
                    .collect()
            }
            _ => {
                let graphs = self.graphs(&ins.alpha, order);
                graphs
                    .par_iter()
                    .map(|g| {
                        let est = match mode {
                            Mode::CutoffGrid(grid) => self.evaluate_graph_cutoff(g, ins, Some(grid))?,
                            Mode::CutoffContinuum => self.evaluate_graph_cutoff(g, ins, None)?,
                            Mode::Adiabatic(p) => self.evaluate_graph_adiabatic(g, ins, *p)?,
                        };
                        Ok((format!("{prefix}{}", g.to_text()), est))
                    })
                    .collect()
            }
        }
    }

    /// Contribution of one ordered graph with the cut-off interaction.
    pub fn evaluate_graph_cutoff(&self, graph: &FeynmanGraph, ins: &Insertion, grid: Option<&MomentumGrid>) -> Result<Estimate> {
        cutoff::evaluate(self, graph, ins, grid)
    }

    /// Contribution of one ordered graph in the adiabatic limit.
    pub fn evaluate_graph_adiabatic(&self, graph: &FeynmanGraph, ins: &Insertion, presentation: Presentation) -> Result<Estimate> {
        adiabatic::evaluate_ordered(self, graph, ins, presentation)
    }

    /// All orders `0..=request.order` of a correlator.
    pub fn correlator(&self, request: &CorrelatorRequest, mode: &Mode) -> Result<CorrelatorResult> {
        request.validate()?;
        self.check_mode(request, mode)?;
        if matches!(mode, Mode::CutoffGrid(_) | Mode::CutoffContinuum) {
            self.cutoff()?;
            self.check_band(request.order)?;
        }
        let arrangements = self.arrangements(request, mode)?;
        let mut values = Vec::with_capacity(request.order + 1);
        let mut errors = Vec::with_capacity(request.order + 1);
        let mut graphs = Vec::new();
        for order in 0..=request.order {
            let mut total = C64::new(0.0, 0.0);
            let mut err = 0.0;
            for ins in &arrangements {
                for (id, (v, e)) in self.contributions(ins, order, mode)? {
                    total += v;
                    err += e;
                    graphs.push(GraphValue {
                        graph_id: id,
                        order,
                        value: v,
                        error: e,
                    });
                }
            }
            values.push(total);
            errors.push(err);
        }
        Ok(CorrelatorResult { values, errors, graphs })
    }
}

/// `1/sqrt(w 2 omega)` of an external leg.
pub(crate) fn leg_factor(spec: &InteractionSpec, p: Vec3) -> f64 {
    1.0 / spec.leg_norm(p)
}

pub(crate) fn two_pi_power(k: i32) -> f64 {
    (2.0 * PI).powi(k)
}

#[cfg(test)]
mod tests;
