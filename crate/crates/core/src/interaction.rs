//! Dispersion, interaction kernels, form factors and cut-off profiles.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::quadrature::tanh_sinh;
use crate::types::{norm2, Conventions, Sign, Vec3, C64};

type DispersionFn = dyn Fn(Vec3) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct DispersionFunction {
    mass: f64,
    eval: Option<Arc<DispersionFn>>,
}

impl fmt::Debug for DispersionFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DispersionFunction")
            .field("mass", &self.mass)
            .field("relativistic", &self.eval.is_none())
            .finish()
    }
}

impl DispersionFunction {
    /// User dispersion; `mass` must be a lower bound of `eval`.
    pub fn custom(mass: f64, eval: impl Fn(Vec3) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::Input(format!("mass must be positive, got {mass}")));
        }
        Ok(DispersionFunction {
            mass,
            eval: Some(Arc::new(eval)),
        })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn omega(&self, p: Vec3) -> f64 {
        match &self.eval {
            None => (self.mass * self.mass + norm2(p)).sqrt(),
            Some(f) => f(p),
        }
    }
}

pub fn make_relativistic_dispersion(mass: f64) -> Result<DispersionFunction> {
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::Input(format!("mass must be positive, got {mass}")));
    }
    Ok(DispersionFunction { mass, eval: None })
}

type KernelFn = dyn Fn(&[Vec3], &[Vec3]) -> C64 + Send + Sync;

/// Kernel `F_(l',l)(p', p)`: first slice are creator momenta, second annihilator momenta.
#[derive(Clone)]
pub struct Kernel(Arc<KernelFn>);

impl Kernel {
    pub fn new(f: impl Fn(&[Vec3], &[Vec3]) -> C64 + Send + Sync + 'static) -> Kernel {
        Kernel(Arc::new(f))
    }

    pub fn eval(&self, out: &[Vec3], inc: &[Vec3]) -> C64 {
        (self.0)(out, inc)
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Kernel(..)")
    }
}

/// Gaussian envelope of a preset, used to centre momentum quadrature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelShape {
    Gaussian { length: f64 },
    WickProduct { length: f64 },
    Custom,
}

#[derive(Clone, Debug)]
pub struct InteractionSpec {
    pub dispersion: DispersionFunction,
    pub kernels: BTreeMap<(usize, usize), Kernel>,
    pub max_legs: usize,
    pub conventions: Conventions,
    pub shape: KernelShape,
    pub name: String,
}

impl InteractionSpec {
    pub fn new(dispersion: DispersionFunction, conventions: Conventions) -> Self {
        InteractionSpec {
            dispersion,
            kernels: BTreeMap::new(),
            max_legs: 0,
            conventions,
            shape: KernelShape::Custom,
            name: "custom".into(),
        }
    }

    pub fn with_kernel(mut self, creators: usize, annihilators: usize, kernel: Kernel) -> Self {
        self.max_legs = self.max_legs.max(creators + annihilators);
        self.kernels.insert((creators, annihilators), kernel);
        self
    }

    pub fn mass(&self) -> f64 {
        self.dispersion.mass()
    }

    /// Leg counts `l + l'` of the populated kernels.
    pub fn valences(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.kernels.keys().map(|(a, b)| a + b).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn kernel(&self, creators: usize, annihilators: usize) -> Option<&Kernel> {
        self.kernels.get(&(creators, annihilators))
    }

    /// `sqrt(w 2 omega(p))`.
    pub fn leg_norm(&self, p: Vec3) -> f64 {
        (self.conventions.volume_factor * 2.0 * self.dispersion.omega(p)).sqrt()
    }
}

/// Sign-indexed form factor derived from an interaction spec.
#[derive(Clone, Debug)]
pub struct FormFactor {
    pub alpha: Vec<Sign>,
    spec: InteractionSpec,
}

impl FormFactor {
    pub fn eval(&self, momenta: &[Vec3]) -> C64 {
        assert_eq!(momenta.len(), self.alpha.len());
        let mut out = Vec::new();
        let mut inc = Vec::new();
        for (s, &p) in self.alpha.iter().zip(momenta) {
            match s {
                Sign::Plus => out.push([-p[0], -p[1], -p[2]]),
                Sign::Minus => inc.push(p),
            }
        }
        let Some(k) = self.spec.kernel(out.len(), inc.len()) else {
            return C64::new(0.0, 0.0);
        };
        let norm: f64 = momenta.iter().map(|&p| self.spec.leg_norm(p)).product();
        k.eval(&out, &inc) * norm
    }
}

pub fn form_factor_from_kernels(spec: &InteractionSpec, alpha: &[Sign]) -> FormFactor {
    FormFactor {
        alpha: alpha.to_vec(),
        spec: spec.clone(),
    }
}

/// Inverse of the form-factor conversion: recovers `F_(l',l)(p', p)`.
pub fn kernel_from_form_factor(ff: &FormFactor, spec: &InteractionSpec, out: &[Vec3], inc: &[Vec3]) -> C64 {
    let mut momenta = Vec::new();
    let mut ip = out.iter();
    let mut im = inc.iter();
    for s in &ff.alpha {
        match s {
            Sign::Plus => {
                let p = ip.next().expect("creator count matches sign vector");
                momenta.push([-p[0], -p[1], -p[2]]);
            }
            Sign::Minus => momenta.push(*im.next().expect("annihilator count matches sign vector")),
        }
    }
    let norm: f64 = momenta.iter().map(|&p| spec.leg_norm(p)).product();
    ff.eval(&momenta) / norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PresetParams {
    pub mass: f64,
    pub smearing_length: f64,
    /// Leg count of the quantum Wick product (ignored by the Gaussian presets).
    pub legs: usize,
    pub conventions: Conventions,
}

impl PresetParams {
    pub fn new(mass: f64, smearing_length: f64) -> Self {
        PresetParams {
            mass,
            smearing_length,
            legs: 3,
            conventions: Conventions::default(),
        }
    }
}

pub const PRESET_NAMES: [&str; 3] = ["gaussian-phi3", "gaussian-phi4", "quantum-wick-product"];

pub fn preset_interaction(name: &str, params: PresetParams) -> Result<InteractionSpec> {
    let disp = make_relativistic_dispersion(params.mass)?;
    let ell = params.smearing_length;
    if !(ell > 0.0) {
        return Err(Error::Input(format!("smearing length must be positive, got {ell}")));
    }
    let legs = match name {
        "gaussian-phi3" => 3,
        "gaussian-phi4" => 4,
        "quantum-wick-product" => params.legs,
        _ => {
            return Err(Error::Input(format!(
                "unknown interaction preset '{name}' (expected one of {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    if legs == 0 {
        return Err(Error::Input("interaction needs at least one leg".into()));
    }
    let w = params.conventions.volume_factor;
    let mut spec = InteractionSpec::new(disp.clone(), params.conventions);
    spec.name = name.to_string();
    spec.shape = if name == "quantum-wick-product" {
        KernelShape::WickProduct { length: ell }
    } else {
        KernelShape::Gaussian { length: ell }
    };
    for creators in 0..=legs {
        let d = disp.clone();
        let kernel = if name == "quantum-wick-product" {
            Kernel::new(move |out, inc| C64::new(wick_product_kernel(&d, w, ell, out, inc), 0.0))
        } else {
            Kernel::new(move |out, inc| {
                let mut v = 1.0;
                for &k in out.iter().chain(inc) {
                    v *= (-0.5 * ell * ell * norm2(k)).exp() / (w * 2.0 * d.omega(k)).sqrt();
                }
                C64::new(v, 0.0)
            })
        };
        spec = spec.with_kernel(creators, legs - creators, kernel);
    }
    Ok(spec)
}

/// Closed form of the mean-constrained Gaussian smearing of an n-fold Wick product.
fn wick_product_kernel(d: &DispersionFunction, w: f64, ell: f64, out: &[Vec3], inc: &[Vec3]) -> f64 {
    let n = (out.len() + inc.len()) as f64;
    let mut sum_k2 = 0.0;
    let mut tot = [0.0; 3];
    let mut sum_w2 = 0.0;
    let mut tot_w = 0.0;
    let mut norm = 1.0;
    for (k, sign) in out.iter().map(|k| (k, 1.0)).chain(inc.iter().map(|k| (k, -1.0))) {
        let om = d.omega(*k);
        sum_k2 += norm2(*k);
        for c in 0..3 {
            tot[c] += sign * k[c];
        }
        sum_w2 += om * om;
        tot_w += sign * om;
        norm *= (w * 2.0 * om).sqrt();
    }
    let per_dim = n.sqrt() * (2.0 * PI * ell * ell).powf((n - 1.0) / 2.0);
    let fact: f64 = (1..=(out.len() + inc.len())).map(|i| i as f64).product();
    let expo = -0.5 * ell * ell * (sum_k2 - norm2(tot) / n + sum_w2 - tot_w * tot_w / n);
    fact * per_dim.powi(4) * expo.exp() / norm
}

/// Time profile entering a vertex: value in time and its Fourier transform
/// `ghat(w) = int g(t) e^{i w t} dt`.
pub trait TimeProfile: Send + Sync {
    fn value(&self, t: f64) -> f64;
    fn spectrum(&self, w: f64) -> f64;
    /// Half-width of the support of the spectrum, if compact.
    fn band(&self) -> Option<f64>;
    /// A time beyond which `|g| < tol`.
    fn horizon(&self, tol: f64) -> f64;
}

const DE_BASE_STEP: f64 = 0.05;
const DE_LEVELS: usize = 10;

/// Cached double-exponential samples of a compactly supported even spectrum,
/// used to evaluate the inverse transform at any time.
struct SpectralSamples {
    band: f64,
    levels: Vec<OnceLock<Vec<(f64, f64)>>>,
}

impl SpectralSamples {
    fn new(band: f64) -> Self {
        SpectralSamples {
            band,
            levels: (0..DE_LEVELS).map(|_| OnceLock::new()).collect(),
        }
    }

    fn level_for(&self, t: f64) -> usize {
        let want = (0.5 / (self.band * t.abs()).max(1e-300)).min(DE_BASE_STEP);
        let mut m = 0;
        while m + 1 < DE_LEVELS && DE_BASE_STEP / (1u64 << m) as f64 > want {
            m += 1;
        }
        m
    }

    fn samples(&self, level: usize, spectrum: &dyn Fn(f64) -> f64) -> &[(f64, f64)] {
        self.levels[level].get_or_init(|| {
            let h = DE_BASE_STEP / (1u64 << level) as f64;
            tanh_sinh(h)
                .into_iter()
                .filter(|&(x, _)| x >= 0.0)
                .map(|(x, wt)| {
                    let om = self.band * x;
                    let weight = if x == 0.0 { wt } else { 2.0 * wt };
                    (om, weight * self.band * spectrum(om) / (2.0 * PI))
                })
                .filter(|&(_, v)| v.abs() > 1e-300)
                .collect()
        })
    }

    fn inverse(&self, t: f64, spectrum: &dyn Fn(f64) -> f64) -> f64 {
        let s = self.samples(self.level_for(t), spectrum);
        s.iter().map(|&(om, v)| v * (om * t).cos()).sum()
    }

    fn horizon(&self, tol: f64, value: &dyn Fn(f64) -> f64) -> f64 {
        let step = 0.5 / self.band;
        let window = 64;
        let mut quiet = 0;
        let mut t = 0.0;
        while t < 1e6 {
            if value(t).abs() < tol {
                quiet += 1;
                if quiet >= window {
                    return t;
                }
            } else {
                quiet = 0;
            }
            t += step;
        }
        t
    }
}

/// Band-limited temporal cut-off: `hhat(w) = exp(1 - 1/(1-(w/D)^2))` on `(-D, D)`.
pub struct TemporalCutoff {
    delta: f64,
    samples: SpectralSamples,
}

impl fmt::Debug for TemporalCutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TemporalCutoff").field("delta", &self.delta).finish()
    }
}

pub fn make_temporal_cutoff(delta: f64) -> Result<TemporalCutoff> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Input(format!("band limit must be positive, got {delta}")));
    }
    Ok(TemporalCutoff {
        delta,
        samples: SpectralSamples::new(delta),
    })
}

pub fn bump(w: f64, delta: f64) -> f64 {
    let x = w / delta;
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - x * x)).exp()
    }
}

impl TemporalCutoff {
    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl TimeProfile for TemporalCutoff {
    fn value(&self, t: f64) -> f64 {
        let d = self.delta;
        self.samples.inverse(t, &|w| bump(w, d))
    }

    fn spectrum(&self, w: f64) -> f64 {
        bump(w, self.delta)
    }

    fn band(&self) -> Option<f64> {
        Some(self.delta)
    }

    fn horizon(&self, tol: f64) -> f64 {
        self.samples.horizon(tol, &|t| self.value(t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeShape {
    Gaussian,
    Sech,
}

/// Base profile `s(k) chi(t)`: isotropic Gaussian `s` of the given width with
/// unit integral, and `chi(0) = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaseProfile {
    pub spatial_width: f64,
    pub time: TimeShape,
}

impl BaseProfile {
    pub const A: BaseProfile = BaseProfile {
        spatial_width: 1.0,
        time: TimeShape::Gaussian,
    };
    pub const B: BaseProfile = BaseProfile {
        spatial_width: 0.5,
        time: TimeShape::Sech,
    };
}

/// Scaled family `L^3 s(k L) chi(t/L)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdiabaticFamily {
    pub base: BaseProfile,
    pub scale: f64,
}

impl AdiabaticFamily {
    pub fn new(base: BaseProfile, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !(base.spatial_width > 0.0) {
            return Err(Error::Input("adiabatic scale and width must be positive".into()));
        }
        Ok(AdiabaticFamily { base, scale })
    }

    /// Standard deviation of the scaled spatial profile per component.
    pub fn spatial_sigma(&self) -> f64 {
        self.base.spatial_width / self.scale
    }

    pub fn spatial(&self, k: Vec3) -> f64 {
        let s = self.spatial_sigma();
        (2.0 * PI * s * s).powf(-1.5) * (-0.5 * norm2(k) / (s * s)).exp()
    }

    pub fn value(&self, k: Vec3, t: f64) -> f64 {
        self.spatial(k) * TimeProfile::value(self, t)
    }
}

impl TimeProfile for AdiabaticFamily {
    fn value(&self, t: f64) -> f64 {
        let u = t / self.scale;
        match self.base.time {
            TimeShape::Gaussian => (-0.5 * u * u).exp(),
            TimeShape::Sech => 1.0 / u.cosh(),
        }
    }

    fn spectrum(&self, w: f64) -> f64 {
        let l = self.scale;
        match self.base.time {
            TimeShape::Gaussian => (2.0 * PI).sqrt() * l * (-0.5 * l * l * w * w).exp(),
            TimeShape::Sech => PI * l / (0.5 * PI * l * w).cosh(),
        }
    }

    fn band(&self) -> Option<f64> {
        None
    }

    fn horizon(&self, tol: f64) -> f64 {
        let l = self.scale;
        match self.base.time {
            TimeShape::Gaussian => l * (2.0 * (1.0 / tol).ln()).sqrt(),
            TimeShape::Sech => l * (2.0 / tol).ln(),
        }
    }
}

/// Cut-off vertex profile: the adiabatic family, optionally convolved in time
/// with the band-limited `h`.
pub struct VertexCutoff {
    pub family: AdiabaticFamily,
    pub temporal: Option<TemporalCutoff>,
    samples: Option<SpectralSamples>,
}

impl fmt::Debug for VertexCutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VertexCutoff")
            .field("family", &self.family)
            .field("temporal", &self.temporal)
            .finish()
    }
}

impl VertexCutoff {
    pub fn new(family: AdiabaticFamily, temporal: Option<TemporalCutoff>) -> Self {
        let samples = temporal.as_ref().map(|h| SpectralSamples::new(h.delta()));
        VertexCutoff {
            family,
            temporal,
            samples,
        }
    }

    pub fn spatial(&self, k: Vec3) -> f64 {
        self.family.spatial(k)
    }
}

impl TimeProfile for VertexCutoff {
    fn value(&self, t: f64) -> f64 {
        match &self.samples {
            None => self.family.value([0.0; 3], t) / self.family.spatial([0.0; 3]),
            Some(s) => s.inverse(t, &|w| self.spectrum(w)),
        }
    }

    fn spectrum(&self, w: f64) -> f64 {
        let base = TimeProfile::spectrum(&self.family, w);
        match &self.temporal {
            None => base,
            Some(h) => h.spectrum(w) * base,
        }
    }

    fn band(&self) -> Option<f64> {
        self.temporal.as_ref().map(|h| h.delta())
    }

    fn horizon(&self, tol: f64) -> f64 {
        match &self.samples {
            None => self.family.horizon(tol),
            Some(s) => s.horizon(tol, &|t| self.value(t)),
        }
    }
}
