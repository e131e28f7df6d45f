use std::io::Write;
use std::time::Instant;

use nlqft_core::evaluator::{adiabatic_scan, Evaluator, Mode};
use nlqft_core::fock_oracle::{FockSpace, OracleContext, TimeSettings};
use nlqft_core::graphs::enumerate_order;
use nlqft_core::request::{CorrelatorKind, CorrelatorRequest, MomentumSmearing};
use nlqft_core::{Conventions, C64};

use crate::config::{parse_mode, Loaded, ModeName};
use crate::error::CliError;
use crate::records::*;

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct RunFlags {
    pub seed: Option<u64>,
    pub timing: bool,
}

/// Whether any record reported a numeric failure or a failed comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Outcome {
    pub failed: bool,
}

struct Ctx<'a> {
    loaded: &'a Loaded,
    run_id: String,
    seed: u64,
    timing: bool,
}

impl<'a> Ctx<'a> {
    fn new(command: &str, loaded: &'a Loaded, flags: &RunFlags) -> Self {
        let seed = flags.seed.unwrap_or(loaded.config.seed);
        Ctx {
            loaded,
            run_id: run_id(command, &loaded.text, seed),
            seed,
            timing: flags.timing,
        }
    }

    fn elapsed(&self, start: Instant) -> Option<u64> {
        self.timing.then(|| start.elapsed().as_millis() as u64)
    }

    fn header(&self, out: &mut dyn Write, command: &str, mode: &str) -> Result<(), CliError> {
        let c = &self.loaded.config;
        emit(
            out,
            &Header {
                schema_version: SCHEMA_VERSION,
                run_id: &self.run_id,
                record: "header",
                command,
                mode,
                order: c.request.order,
                points: c.request.points.len(),
                seed: self.seed,
            },
        )
    }
}

pub fn cmd_graphs(loaded: &Loaded, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let c = &loaded.config;
    let spec = c.interaction(&loaded.base_dir, c.conventions())?;
    let splits = spec.kernels.keys().copied().collect();
    let alpha = c.alpha()?;
    let order = c.request.order;
    let graphs = enumerate_order(&alpha, order, &splits, c.quadrature.include_vacuum_graphs, true);
    for g in &graphs {
        writeln!(out, "V={order} symmetry={} {}", g.symmetry_factor(), g.to_text())?;
    }
    match graphs.len() {
        1 => writeln!(out, "1 graph")?,
        n => writeln!(out, "{n} graphs")?,
    }
    Ok(Outcome::default())
}

pub fn cmd_eval(loaded: &Loaded, flags: &RunFlags, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let ctx = Ctx::new("eval", loaded, flags);
    let c = &loaded.config;
    let mode_name = parse_mode(&c.request.mode)?;
    let mode = mode_name.to_mode(|| c.grid())?;
    let spec = c.interaction(&loaded.base_dir, c.conventions())?;
    let cutoff = if mode_name.needs_cutoff() {
        Some(c.vertex_cutoff(c.cutoff.scales[0])?)
    } else {
        None
    };
    let ev = Evaluator::new(spec, cutoff, c.settings());
    let requests = (0..c.request.points.len()).map(|i| c.request_at(i)).collect::<Result<Vec<_>, _>>()?;
    let mode_str = mode.name();
    ctx.header(out, "eval", mode_str)?;
    let mut outcome = Outcome::default();
    for (point, req) in requests.iter().enumerate() {
        let start = Instant::now();
        match ev.correlator(req, &mode) {
            Ok(r) => {
                let elapsed_ms = ctx.elapsed(start);
                for order in 0..=req.order {
                    emit(
                        out,
                        &ValueRecord {
                            schema_version: SCHEMA_VERSION,
                            run_id: &ctx.run_id,
                            record: "value",
                            point,
                            order,
                            graph_id: "total",
                            re: r.values[order].re,
                            im: r.values[order].im,
                            abs_err: r.errors[order],
                            mode: mode_str,
                            elapsed_ms,
                        },
                    )?;
                    for g in r.graphs.iter().filter(|g| g.order == order) {
                        emit(
                            out,
                            &ValueRecord {
                                schema_version: SCHEMA_VERSION,
                                run_id: &ctx.run_id,
                                record: "value",
                                point,
                                order,
                                graph_id: &g.graph_id,
                                re: g.value.re,
                                im: g.value.im,
                                abs_err: g.error,
                                mode: mode_str,
                                elapsed_ms: None,
                            },
                        )?;
                    }
                }
            }
            Err(e @ nlqft_core::Error::Numeric(_)) => {
                outcome.failed = true;
                emit(
                    out,
                    &FailureRecord {
                        schema_version: SCHEMA_VERSION,
                        run_id: &ctx.run_id,
                        record: "failure",
                        point,
                        order: req.order,
                        graph_id: "total",
                        mode: mode_str,
                        error: e.to_string(),
                        elapsed_ms: ctx.elapsed(start),
                    },
                )?;
            }
            Err(e) => return Err(CliError::Config(format!("request.points[{point}]: {e}"))),
        }
    }
    Ok(outcome)
}

/// Engine on the oracle grid against the truncated Fock-space oracle.
pub fn cmd_compare(loaded: &Loaded, flags: &RunFlags, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let ctx = Ctx::new("compare", loaded, flags);
    let c = &loaded.config;
    if !matches!(c.request.kind, CorrelatorKind::WightmanRestricted | CorrelatorKind::GreenTime) {
        return Err(CliError::Config(
            "request.kind: compare needs wightman_restricted or green_time".into(),
        ));
    }
    if !matches!(c.request.smearing, None | Some(MomentumSmearing::Point)) {
        return Err(CliError::Config("request.smearing: compare needs point momenta".into()));
    }
    let grid = c.grid()?;
    let space = FockSpace::new(grid.clone(), c.oracle.nmax, c.oracle.max_dim)
        .map_err(|e| CliError::Config(format!("oracle.max_dim: {e}")))?;
    let requests = (0..c.request.points.len()).map(|i| c.request_at(i)).collect::<Result<Vec<_>, _>>()?;
    for (i, r) in requests.iter().enumerate() {
        if let Some(p) = r.momenta.iter().find(|p| grid.index_of(**p).is_none()) {
            return Err(CliError::Config(format!("request.points[{i}].momenta: {p:?} is not an oracle grid point")));
        }
    }
    let oracle_conv = c.conventions();
    let engine_conv = match c.oracle.engine_volume_factor {
        Some(w) => Conventions { volume_factor: w },
        None => oracle_conv,
    };
    let cutoff = c.vertex_cutoff(c.cutoff.scales[0])?;
    let oracle_spec = c.interaction(&loaded.base_dir, oracle_conv)?;
    let lines = (c.alpha()?.len() + c.request.order * oracle_spec.max_legs).div_ceil(2);
    if c.oracle.nmax < lines {
        return Err(CliError::Config(format!(
            "oracle.nmax: {} truncates intermediate states at order {}; need at least {lines}",
            c.oracle.nmax, c.request.order
        )));
    }
    let fine_time = c.time_settings();
    let coarse_time = TimeSettings {
        nodes_per_panel: (fine_time.nodes_per_panel * 3 / 4).max(2),
        ..fine_time
    };
    let coarse_space = FockSpace::new(grid.clone(), c.oracle.nmax, c.oracle.max_dim)?;
    let oracle = OracleContext::new(oracle_spec.clone(), cutoff.clone(), space, fine_time)?;
    let oracle_coarse = OracleContext::new(oracle_spec, cutoff.clone(), coarse_space, coarse_time)?;
    let ev = Evaluator::new(c.interaction(&loaded.base_dir, engine_conv)?, Some(cutoff), c.settings());
    let mode = Mode::CutoffGrid(grid);
    let mode_str = mode.name();
    ctx.header(out, "compare", mode_str)?;
    let mut outcome = Outcome::default();
    for (point, req) in requests.iter().enumerate() {
        let start = Instant::now();
        let res = compare_point(&ev, &mode, &oracle, &oracle_coarse, req);
        let elapsed_ms = ctx.elapsed(start);
        let (engine, errors, fine, coarse) = match res {
            Ok(v) => v,
            Err(e @ nlqft_core::Error::Numeric(_)) => {
                outcome.failed = true;
                emit(
                    out,
                    &FailureRecord {
                        schema_version: SCHEMA_VERSION,
                        run_id: &ctx.run_id,
                        record: "failure",
                        point,
                        order: req.order,
                        graph_id: "total",
                        mode: mode_str,
                        error: e.to_string(),
                        elapsed_ms,
                    },
                )?;
                continue;
            }
            Err(e) => return Err(CliError::Config(format!("request.points[{point}]: {e}"))),
        };
        let ratio0 = engine[0] / fine[0];
        let conventions_differ = fine[0].norm() > 0.0 && (ratio0 - 1.0).norm() > 1e-6;
        for order in 0..=req.order {
            let oracle_err = (fine[order] - coarse[order]).norm();
            let abs_gap = (engine[order] - fine[order]).norm();
            let scale = fine[order].norm();
            let rel_gap = if scale > 0.0 { abs_gap / scale } else { abs_gap };
            let bound = 3.0 * (errors[order] + oracle_err) + 1e-10 * scale;
            let pass = abs_gap <= bound;
            outcome.failed |= !pass;
            let hint = (!pass).then(|| {
                if conventions_differ {
                    format!(
                        "engine/oracle ratio at order 0 is {:.6e}{:+.6e}i; order 0 depends only on conventions, \
                         check the volume convention (engine volume_factor {}, oracle volume_factor {}, cell_volume {})",
                        ratio0.re, ratio0.im, engine_conv.volume_factor, oracle_conv.volume_factor, c.oracle.cell_volume
                    )
                } else {
                    "order 0 agrees; raise quadrature.hermite_nodes, quadrature.omega_order or oracle.nodes_per_panel"
                        .to_string()
                }
            });
            emit(
                out,
                &CompareRecord {
                    schema_version: SCHEMA_VERSION,
                    run_id: &ctx.run_id,
                    record: "compare",
                    point,
                    order,
                    graph_id: "total",
                    re: engine[order].re,
                    im: engine[order].im,
                    abs_err: errors[order],
                    oracle_re: fine[order].re,
                    oracle_im: fine[order].im,
                    oracle_err,
                    abs_gap,
                    rel_gap,
                    bound,
                    pass,
                    hint,
                    mode: mode_str,
                    elapsed_ms,
                },
            )?;
        }
    }
    Ok(outcome)
}

type Comparison = (Vec<C64>, Vec<f64>, Vec<C64>, Vec<C64>);

fn compare_point(
    ev: &Evaluator,
    mode: &Mode,
    oracle: &OracleContext,
    coarse: &OracleContext,
    req: &CorrelatorRequest,
) -> nlqft_core::Result<Comparison> {
    let engine = ev.correlator(req, mode)?;
    let fine = oracle.correlator(req)?;
    let rough = coarse.correlator(req)?;
    Ok((engine.values, engine.errors, fine, rough))
}

pub fn cmd_scan(loaded: &Loaded, flags: &RunFlags, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let ctx = Ctx::new("scan", loaded, flags);
    let c = &loaded.config;
    if parse_mode(&c.request.mode)? != ModeName::Continuum {
        return Err(CliError::Config("request.mode: scan runs in cutoff_continuum mode".into()));
    }
    let spec = c.interaction(&loaded.base_dir, c.conventions())?;
    let base = c.base_profile()?;
    let requests = (0..c.request.points.len()).map(|i| c.request_at(i)).collect::<Result<Vec<_>, _>>()?;
    let mode_str = Mode::CutoffContinuum.name();
    ctx.header(out, "scan", mode_str)?;
    let mut outcome = Outcome::default();
    for (point, req) in requests.iter().enumerate() {
        let start = Instant::now();
        let table = match adiabatic_scan(&spec, c.settings(), req, c.band(), base, &c.cutoff.scales) {
            Ok(t) => t,
            Err(e @ nlqft_core::Error::Numeric(_)) => {
                outcome.failed = true;
                emit(
                    out,
                    &FailureRecord {
                        schema_version: SCHEMA_VERSION,
                        run_id: &ctx.run_id,
                        record: "failure",
                        point,
                        order: req.order,
                        graph_id: "total",
                        mode: mode_str,
                        error: e.to_string(),
                        elapsed_ms: ctx.elapsed(start),
                    },
                )?;
                continue;
            }
            Err(e) => return Err(CliError::Config(format!("request.points[{point}]: {e}"))),
        };
        let elapsed_ms = ctx.elapsed(start);
        for row in &table.rows {
            emit(
                out,
                &ScanRecord {
                    schema_version: SCHEMA_VERSION,
                    run_id: &ctx.run_id,
                    record: "scan",
                    point,
                    order: table.order,
                    graph_id: "total",
                    scale: row.scale,
                    re: row.value.re,
                    im: row.value.im,
                    abs_err: row.error,
                    gap: row.gap,
                    mode: mode_str,
                    elapsed_ms,
                },
            )?;
        }
        emit(
            out,
            &LimitRecord {
                schema_version: SCHEMA_VERSION,
                run_id: &ctx.run_id,
                record: "limit",
                point,
                order: table.order,
                graph_id: "total",
                re: table.limit.re,
                im: table.limit.im,
                abs_err: table.limit_error,
                extrapolated_re: table.extrapolated.re,
                extrapolated_im: table.extrapolated.im,
                extrapolated_err: table.extrapolated_error,
                mode: Mode::Adiabatic(nlqft_core::evaluator::Presentation::OrderedTime).name(),
                elapsed_ms,
            },
        )?;
    }
    Ok(outcome)
}
