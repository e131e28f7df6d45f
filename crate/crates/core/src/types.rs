use serde::{Deserialize, Serialize};

pub use num_complex::Complex64 as C64;

pub type Vec3 = [f64; 3];

/// Creation (`Plus`) or annihilation (`Minus`) label of a field or leg.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn parse(s: &str) -> Option<Sign> {
        match s {
            "+" | "plus" => Some(Sign::Plus),
            "-" | "minus" => Some(Sign::Minus),
            _ => None,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }
}

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale3(s: f64, a: Vec3) -> Vec3 {
    [s * a[0], s * a[1], s * a[2]]
}

pub fn norm2(a: Vec3) -> f64 {
    a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
}

/// Convention parameters shared by every evaluation path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    /// Volume factor `w` in the external normalisation `1/sqrt(w 2 omega)`.
    pub volume_factor: f64,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            volume_factor: (2.0 * std::f64::consts::PI).powi(3),
        }
    }
}
