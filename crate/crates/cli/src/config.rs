//! Run configuration read from a TOML file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nlqft_core::evaluator::{EvalSettings, Mode, Presentation};
use nlqft_core::fock_oracle::{MomentumGrid, TimeSettings};
use nlqft_core::interaction::{
    make_relativistic_dispersion, make_temporal_cutoff, preset_interaction, AdiabaticFamily, BaseProfile, InteractionSpec,
    Kernel, KernelShape, PresetParams, VertexCutoff,
};
use nlqft_core::request::{CorrelatorKind, CorrelatorRequest, MomentumSmearing};
use nlqft_core::{norm2, Conventions, Sign, Vec3, C64};
use serde::Deserialize;

use crate::error::CliError;

pub const MAX_ORDER: usize = 4;
pub const MAX_EXTERNALS: usize = 6;
pub const MAX_POINTS: usize = 10_000;
pub const MAX_SCALES: usize = 16;
pub const MAX_GRID_SIZE: usize = 15;
pub const MAX_NMAX: usize = 8;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub model: ModelConfig,
    pub request: RequestConfig,
    #[serde(default)]
    pub cutoff: CutoffConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Option<String>,
    pub kernel_file: Option<PathBuf>,
    pub mass: f64,
    /// Gaussian smearing length of the kernels.
    pub smearing_length: f64,
    /// Leg count for `quantum-wick-product`.
    pub legs: Option<usize>,
    pub volume_factor: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestConfig {
    #[serde(default = "default_kind")]
    pub kind: CorrelatorKind,
    /// Signs of the external fields, e.g. `"-+"`.
    pub alpha: String,
    pub order: usize,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub points: Vec<PointConfig>,
    pub smearing: Option<MomentumSmearing>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub energies: Vec<f64>,
    pub momenta: Vec<Vec3>,
    #[serde(default)]
    pub time_widths: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffConfig {
    /// Band limit of `h` as a fraction of `mass/(order+1)`; absent means no `h`.
    pub delta_fraction: Option<f64>,
    #[serde(default = "default_profile")]
    pub profile: String,
    /// Scales `L`; `eval` and `compare` use the first one.
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        CutoffConfig {
            delta_fraction: None,
            profile: default_profile(),
            scales: default_scales(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub hermite_nodes: usize,
    pub cubature_budget: usize,
    pub omega_order: usize,
    pub collocation_order: usize,
    pub time_spacing: f64,
    pub include_vacuum_graphs: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        let s = EvalSettings::default();
        QuadratureConfig {
            hermite_nodes: s.hermite_nodes,
            cubature_budget: s.cubature_budget,
            omega_order: s.omega_order,
            collocation_order: s.collocation_order,
            time_spacing: s.time_spacing,
            include_vacuum_graphs: s.include_vacuum_graphs,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub grid_size: usize,
    pub spacing: f64,
    pub cell_volume: f64,
    pub nmax: usize,
    pub max_dim: usize,
    pub nodes_per_panel: usize,
    /// Volume factor used by the engine side of `compare` only (test fixture).
    pub engine_volume_factor: Option<f64>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            grid_size: 5,
            spacing: 0.6,
            cell_volume: 0.6,
            nmax: 4,
            max_dim: 200_000,
            nodes_per_panel: TimeSettings::default().nodes_per_panel,
            engine_volume_factor: None,
        }
    }
}

fn default_kind() -> CorrelatorKind {
    CorrelatorKind::WightmanRestricted
}

fn default_mode() -> String {
    "cutoff_continuum".into()
}

fn default_profile() -> String {
    "A".into()
}

fn default_scales() -> Vec<f64> {
    vec![1.0]
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {msg}"))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelFile {
    #[serde(rename = "split")]
    splits: Vec<KernelSplit>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSplit {
    creators: usize,
    annihilators: usize,
    coupling: f64,
    #[serde(default)]
    coupling_im: f64,
}

/// Validated configuration and the raw text it came from.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: RunConfig,
    pub text: String,
    pub base_dir: PathBuf,
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let config: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = Loaded { config, text, base_dir };
    loaded.config.validate()?;
    Ok(loaded)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        match (&m.preset, &m.kernel_file) {
            (Some(_), Some(_)) => return Err(field("model.preset", "give either preset or kernel_file, not both")),
            (None, None) => return Err(field("model.preset", "missing (or set model.kernel_file)")),
            _ => {}
        }
        if !(m.mass > 0.0) || !m.mass.is_finite() {
            return Err(field("model.mass", format!("must be positive, got {}", m.mass)));
        }
        if !(m.smearing_length > 0.0) || !m.smearing_length.is_finite() {
            return Err(field("model.smearing_length", format!("must be positive, got {}", m.smearing_length)));
        }
        if let Some(w) = m.volume_factor {
            if !(w > 0.0) {
                return Err(field("model.volume_factor", "must be positive"));
            }
        }
        let r = &self.request;
        let alpha = self.alpha()?;
        if alpha.len() > MAX_EXTERNALS {
            return Err(field("request.alpha", format!("at most {MAX_EXTERNALS} fields")));
        }
        if r.order > MAX_ORDER {
            return Err(field("request.order", format!("at most {MAX_ORDER}, got {}", r.order)));
        }
        if r.points.len() > MAX_POINTS {
            return Err(field("request.points", format!("at most {MAX_POINTS} points")));
        }
        parse_mode(&r.mode)?;
        for (i, _) in r.points.iter().enumerate() {
            self.request_at(i)?
                .validate()
                .map_err(|e| field(&format!("request.points[{i}]"), e))?;
        }
        let c = &self.cutoff;
        if let Some(f) = c.delta_fraction {
            if !(f > 0.0) {
                return Err(field("cutoff.delta_fraction", format!("must be positive, got {f}")));
            }
            let bound = m.mass / (r.order as f64 + 1.0);
            if f > 1.0 {
                return Err(field(
                    "cutoff.delta_fraction",
                    format!("band limit {} exceeds mass/(order+1) = {bound}", f * bound),
                ));
            }
        }
        self.base_profile()?;
        if c.scales.is_empty() || c.scales.len() > MAX_SCALES {
            return Err(field("cutoff.scales", format!("need 1 to {MAX_SCALES} values")));
        }
        if c.scales.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(field("cutoff.scales", "values must be positive"));
        }
        if c.scales.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(field("cutoff.scales", "values must be increasing"));
        }
        let q = &self.quadrature;
        if !(2..=40).contains(&q.hermite_nodes) {
            return Err(field("quadrature.hermite_nodes", "must be between 2 and 40"));
        }
        if q.cubature_budget == 0 {
            return Err(field("quadrature.cubature_budget", "must be positive"));
        }
        if !(2..=64).contains(&q.omega_order) {
            return Err(field("quadrature.omega_order", "must be between 2 and 64"));
        }
        if !(2..=64).contains(&q.collocation_order) {
            return Err(field("quadrature.collocation_order", "must be between 2 and 64"));
        }
        if !(q.time_spacing > 0.0) {
            return Err(field("quadrature.time_spacing", "must be positive"));
        }
        let o = &self.oracle;
        if o.grid_size == 0 || o.grid_size > MAX_GRID_SIZE {
            return Err(field("oracle.grid_size", format!("must be between 1 and {MAX_GRID_SIZE}")));
        }
        if !(o.spacing > 0.0) {
            return Err(field("oracle.spacing", "must be positive"));
        }
        if !(o.cell_volume > 0.0) {
            return Err(field("oracle.cell_volume", "must be positive"));
        }
        if o.nmax == 0 || o.nmax > MAX_NMAX {
            return Err(field("oracle.nmax", format!("must be between 1 and {MAX_NMAX}")));
        }
        if !(2..=64).contains(&o.nodes_per_panel) {
            return Err(field("oracle.nodes_per_panel", "must be between 2 and 64"));
        }
        if let Some(w) = o.engine_volume_factor {
            if !(w > 0.0) {
                return Err(field("oracle.engine_volume_factor", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn alpha(&self) -> Result<Vec<Sign>, CliError> {
        self.request
            .alpha
            .chars()
            .map(|c| Sign::parse(&c.to_string()).ok_or_else(|| field("request.alpha", format!("bad sign {c:?}"))))
            .collect()
    }

    pub fn base_profile(&self) -> Result<BaseProfile, CliError> {
        match self.cutoff.profile.as_str() {
            "A" | "a" => Ok(BaseProfile::A),
            "B" | "b" => Ok(BaseProfile::B),
            p => Err(field("cutoff.profile", format!("expected A or B, got {p:?}"))),
        }
    }

    /// Band limit of `h`, if any.
    pub fn band(&self) -> Option<f64> {
        self.cutoff
            .delta_fraction
            .map(|f| f * self.model.mass / (self.request.order as f64 + 1.0))
    }

    pub fn request_at(&self, i: usize) -> Result<CorrelatorRequest, CliError> {
        let p = &self.request.points[i];
        Ok(CorrelatorRequest {
            kind: self.request.kind,
            alpha: self.alpha()?,
            order: self.request.order,
            times: p.times.clone(),
            energies: p.energies.clone(),
            momenta: p.momenta.clone(),
            smearing: self.request.smearing.clone().unwrap_or(MomentumSmearing::Point),
            time_widths: p.time_widths.clone(),
        })
    }

    pub fn settings(&self) -> EvalSettings {
        let q = &self.quadrature;
        EvalSettings {
            hermite_nodes: q.hermite_nodes,
            cubature_budget: q.cubature_budget,
            omega_order: q.omega_order,
            collocation_order: q.collocation_order,
            time_spacing: q.time_spacing,
            include_vacuum_graphs: q.include_vacuum_graphs,
            ..EvalSettings::default()
        }
    }

    pub fn time_settings(&self) -> TimeSettings {
        TimeSettings {
            spacing: self.quadrature.time_spacing,
            nodes_per_panel: self.oracle.nodes_per_panel,
            ..TimeSettings::default()
        }
    }

    pub fn grid(&self) -> Result<MomentumGrid, CliError> {
        MomentumGrid::quasi_1d(self.oracle.grid_size, self.oracle.spacing, self.oracle.cell_volume)
            .map_err(|e| field("oracle", e))
    }

    pub fn conventions(&self) -> Conventions {
        match self.model.volume_factor {
            Some(w) => Conventions { volume_factor: w },
            None => Conventions::default(),
        }
    }

    pub fn interaction(&self, base_dir: &Path, conventions: Conventions) -> Result<InteractionSpec, CliError> {
        let m = &self.model;
        if let Some(name) = &m.preset {
            let mut params = PresetParams::new(m.mass, m.smearing_length);
            params.conventions = conventions;
            if let Some(l) = m.legs {
                params.legs = l;
            }
            return preset_interaction(name, params).map_err(|e| field("model.preset", e));
        }
        let path = base_dir.join(m.kernel_file.as_ref().expect("validated"));
        let text = std::fs::read_to_string(&path).map_err(|e| field("model.kernel_file", format!("{}: {e}", path.display())))?;
        let file: KernelFile = toml::from_str(&text).map_err(|e| field("model.kernel_file", e))?;
        kernel_spec(&file, m.mass, m.smearing_length, conventions)
    }

    pub fn vertex_cutoff(&self, scale: f64) -> Result<Arc<VertexCutoff>, CliError> {
        let family = AdiabaticFamily::new(self.base_profile()?, scale).map_err(|e| field("cutoff.scales", e))?;
        let h = self
            .band()
            .map(make_temporal_cutoff)
            .transpose()
            .map_err(|e| field("cutoff.delta_fraction", e))?;
        Ok(Arc::new(VertexCutoff::new(family, h)))
    }
}

/// Gaussian-smeared kernels with one coupling per split.
fn kernel_spec(file: &KernelFile, mass: f64, length: f64, conventions: Conventions) -> Result<InteractionSpec, CliError> {
    let disp = make_relativistic_dispersion(mass).map_err(|e| field("model.mass", e))?;
    if file.splits.is_empty() {
        return Err(field("model.kernel_file", "no [[split]] entries"));
    }
    let w = conventions.volume_factor;
    let mut spec = InteractionSpec::new(disp.clone(), conventions);
    spec.shape = KernelShape::Gaussian { length };
    for s in &file.splits {
        if s.creators + s.annihilators == 0 {
            return Err(field("model.kernel_file", "split with no legs"));
        }
        let partner = file
            .splits
            .iter()
            .find(|t| t.creators == s.annihilators && t.annihilators == s.creators)
            .ok_or_else(|| {
                field(
                    "model.kernel_file",
                    format!("split ({}, {}) has no adjoint partner", s.creators, s.annihilators),
                )
            })?;
        if partner.coupling != s.coupling || partner.coupling_im != -s.coupling_im {
            return Err(field(
                "model.kernel_file",
                format!("couplings of ({}, {}) and its adjoint are not conjugate", s.creators, s.annihilators),
            ));
        }
        let g = C64::new(s.coupling, s.coupling_im);
        let d = disp.clone();
        spec = spec.with_kernel(
            s.creators,
            s.annihilators,
            Kernel::new(move |out, inc| {
                let mut v = 1.0;
                for &k in out.iter().chain(inc) {
                    v *= (-0.5 * length * length * norm2(k)).exp() / (w * 2.0 * d.omega(k)).sqrt();
                }
                g * v
            }),
        );
    }
    spec.name = "kernel-file".into();
    Ok(spec)
}

/// Evaluation mode by name; `cutoff_grid` also needs the oracle grid.
pub fn parse_mode(name: &str) -> Result<ModeName, CliError> {
    Ok(match name {
        "cutoff_continuum" => ModeName::Continuum,
        "cutoff_grid" => ModeName::Grid,
        "adiabatic_ordered_time" => ModeName::Adiabatic(Presentation::OrderedTime),
        "adiabatic_ordered_energy" => ModeName::Adiabatic(Presentation::OrderedEnergy),
        "adiabatic_unordered_time" => ModeName::Adiabatic(Presentation::UnorderedTime),
        "adiabatic_unordered_energy" => ModeName::Adiabatic(Presentation::UnorderedEnergy),
        m => return Err(field("request.mode", format!("unknown mode {m:?}"))),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModeName {
    Continuum,
    Grid,
    Adiabatic(Presentation),
}

impl ModeName {
    pub fn to_mode(self, grid: impl FnOnce() -> Result<MomentumGrid, CliError>) -> Result<Mode, CliError> {
        Ok(match self {
            ModeName::Continuum => Mode::CutoffContinuum,
            ModeName::Grid => Mode::CutoffGrid(grid()?),
            ModeName::Adiabatic(p) => Mode::Adiabatic(p),
        })
    }

    pub fn needs_cutoff(self) -> bool {
        !matches!(self, ModeName::Adiabatic(_))
    }
}
