//! Correlator requests and results shared by the oracle, the evaluator and the CLI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Sign, Vec3, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelatorKind {
    WightmanRestricted,
    WightmanUnrestricted,
    GreenTime,
    GreenEnergy,
}

/// How external momenta enter a request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MomentumSmearing {
    /// Values at the given momenta (densities where delta functions survive).
    Point,
    /// Product of normalised Gaussians centred at the given momenta.
    Product { widths: Vec<f64> },
    /// Gaussian smearing of each connected component's total momentum.
    TotalMomentum { width: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorRequest {
    pub kind: CorrelatorKind,
    pub alpha: Vec<Sign>,
    pub order: usize,
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub energies: Vec<f64>,
    pub momenta: Vec<Vec3>,
    #[serde(default = "point")]
    pub smearing: MomentumSmearing,
    /// Gaussian widths for time smearing (unrestricted Wightman functions).
    #[serde(default)]
    pub time_widths: Vec<f64>,
}

fn point() -> MomentumSmearing {
    MomentumSmearing::Point
}

impl CorrelatorRequest {
    pub fn wightman(alpha: Vec<Sign>, order: usize, times: Vec<f64>, momenta: Vec<Vec3>) -> Self {
        CorrelatorRequest {
            kind: CorrelatorKind::WightmanRestricted,
            alpha,
            order,
            times,
            energies: Vec::new(),
            momenta,
            smearing: MomentumSmearing::Point,
            time_widths: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.momenta.len() != n {
            return Err(Error::Input(format!(
                "request has {n} signs but {} momenta",
                self.momenta.len()
            )));
        }
        match self.kind {
            CorrelatorKind::GreenEnergy => {
                if self.energies.len() != n {
                    return Err(Error::Input(format!("energies: expected {n} values")));
                }
            }
            _ => {
                if self.times.len() != n {
                    return Err(Error::Input(format!("times: expected {n} values")));
                }
            }
        }
        if self.kind == CorrelatorKind::GreenTime {
            for i in 0..n {
                for j in i + 1..n {
                    if self.times[i] == self.times[j] {
                        return Err(Error::Input(format!(
                            "times: green_time needs distinct times, t{} = t{}",
                            i + 1,
                            j + 1
                        )));
                    }
                }
            }
        }
        if self.kind == CorrelatorKind::WightmanUnrestricted && self.time_widths.len() != n {
            return Err(Error::Input(format!("time_widths: expected {n} values")));
        }
        if let MomentumSmearing::Product { widths } = &self.smearing {
            if widths.len() != n || widths.iter().any(|w| !(*w > 0.0)) {
                return Err(Error::Input(format!("smearing.widths: expected {n} positive values")));
            }
        }
        if let MomentumSmearing::TotalMomentum { width } = &self.smearing {
            if !(*width > 0.0) {
                return Err(Error::Input("smearing.width must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Contribution of one graph at one order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphValue {
    pub graph_id: String,
    pub order: usize,
    pub value: C64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorResult {
    /// Value per power of the coupling, `0..=order`.
    pub values: Vec<C64>,
    pub errors: Vec<f64>,
    pub graphs: Vec<GraphValue>,
}
