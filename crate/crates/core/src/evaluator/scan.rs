//! Convergence of cut-off correlators towards the adiabatic limit.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{EvalSettings, Evaluator, Mode, Presentation};
use crate::error::{Error, Result};
use crate::interaction::{make_temporal_cutoff, AdiabaticFamily, BaseProfile, InteractionSpec, VertexCutoff};
use crate::request::{CorrelatorRequest, MomentumSmearing};
use crate::types::C64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub scale: f64,
    pub value: C64,
    pub error: f64,
    /// `|value - limit|`.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    pub order: usize,
    pub rows: Vec<ScanRow>,
    /// Adiabatic-limit value and its error estimate.
    pub limit: C64,
    pub limit_error: f64,
    /// Extrapolation of the two largest scales in `1/L^2`.
    pub extrapolated: C64,
    pub extrapolated_error: f64,
}

/// Cut-off correlator at order `request.order` for each scale `L` of the
/// family built on `base`, next to the adiabatic limit.
pub fn adiabatic_scan(
    spec: &InteractionSpec,
    settings: EvalSettings,
    request: &CorrelatorRequest,
    band: Option<f64>,
    base: BaseProfile,
    scales: &[f64],
) -> Result<ScanTable> {
    if scales.is_empty() || scales.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Input("scales must be non-empty and increasing".into()));
    }
    if matches!(request.smearing, MomentumSmearing::Product { .. }) {
        return Err(Error::Input("scans need point or total-momentum smearing".into()));
    }
    let order = request.order;
    let limit_ev = Evaluator::new(spec.clone(), None, settings);
    let lim = limit_ev.correlator(request, &Mode::Adiabatic(Presentation::OrderedTime))?;
    let limit = lim.values[order];
    let limit_error = lim.errors[order];
    let mut rows = Vec::with_capacity(scales.len());
    for &scale in scales {
        let temporal = band.map(make_temporal_cutoff).transpose()?;
        let cut = VertexCutoff::new(AdiabaticFamily::new(base, scale)?, temporal);
        let ev = Evaluator::new(spec.clone(), Some(Arc::new(cut)), settings);
        let r = ev.correlator(request, &Mode::CutoffContinuum)?;
        let value = r.values[order];
        rows.push(ScanRow {
            scale,
            value,
            error: r.errors[order],
            gap: (value - limit).norm(),
        });
    }
    let last = rows.last().expect("at least one scale");
    let (extrapolated, extrapolated_error) = if rows.len() >= 2 {
        let prev = &rows[rows.len() - 2];
        let (a, b) = (1.0 / (prev.scale * prev.scale), 1.0 / (last.scale * last.scale));
        let x = (last.value * a - prev.value * b) / (a - b);
        let amp = (a + b) / (a - b);
        (x, (x - last.value).norm() + amp * (last.error + prev.error))
    } else {
        (last.value, last.gap + last.error)
    };
    Ok(ScanTable {
        order,
        rows,
        limit,
        limit_error,
        extrapolated,
        extrapolated_error,
    })
}
