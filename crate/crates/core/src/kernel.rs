//! Compactly supported kernel profiles and their horizon-scaled forms.
//!
//! A profile is a function `R` on `[0, inf)` supported in `[0, 1)` together
//! with its first and second tail antiderivatives
//! `Rbar(r) = int_r^inf R` and `Rbarbar(r) = int_r^inf Rbar`.
//! The scaled kernels evaluate a profile at `|x - y|^2 / (4 delta^2)`, so they
//! vanish once `|x - y| >= 2 delta`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::quadrature;

/// Errors raised while building or evaluating kernels.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("profile argument must be nonnegative, got {0}")]
    NegativeArgument(f64),
    #[error("unsupported dimension {0}; expected 1 or 2")]
    UnsupportedDimension(usize),
    #[error("degenerate profile: normalization integral vanishes")]
    DegenerateProfile,
    #[error("invalid profile table: {0}")]
    InvalidTable(String),
    #[error("unknown kernel profile '{0}'")]
    UnknownProfile(String),
    #[error("horizon must be positive, got {0}")]
    InvalidHorizon(f64),
}

/// Which member of the profile triple to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// The profile itself.
    Base,
    /// First tail antiderivative.
    Integrated,
    /// Second tail antiderivative.
    TwiceIntegrated,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Base, Variant::Integrated, Variant::TwiceIntegrated];
}

#[derive(Debug, Clone)]
enum Shape {
    Quadratic,
    Tabulated(Tabulated),
}

/// Kernel profile with its two tail antiderivatives.
#[derive(Debug, Clone)]
pub struct KernelProfile {
    name: String,
    shape: Shape,
    floor: f64,
}

impl KernelProfile {
    /// The default profile `R(r) = (1 - r)^2` on `[0, 1)`.
    pub fn quadratic() -> Self {
        Self { name: "quadratic".into(), shape: Shape::Quadratic, floor: 0.25 }
    }

    /// Looks up a built-in profile by name.
    pub fn by_name(name: &str) -> Result<Self, KernelError> {
        match name {
            "quadratic" => Ok(Self::quadratic()),
            other => Err(KernelError::UnknownProfile(other.to_string())),
        }
    }

    /// Builds a profile from samples `(r_k, R(r_k))` using monotone cubic
    /// interpolation. Knots must start at 0, end at 1 and increase strictly;
    /// values must be nonnegative with `R(1) = 0`.
    pub fn tabulated(name: &str, knots: &[f64], values: &[f64]) -> Result<Self, KernelError> {
        let table = Tabulated::new(knots, values)?;
        let floor = (0..=200)
            .map(|k| table.base(0.5 * k as f64 / 200.0))
            .fold(f64::INFINITY, f64::min);
        Ok(Self { name: name.to_string(), shape: Shape::Tabulated(table), floor })
    }

    /// Reads a two-column `r,R` table (comma or whitespace separated; lines
    /// starting with `#` and a non-numeric header are skipped).
    pub fn from_table_text(name: &str, text: &str) -> Result<Self, KernelError> {
        let mut knots = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            if fields.len() != 2 {
                return Err(KernelError::InvalidTable(format!("line {}: expected two columns", lineno + 1)));
            }
            match (fields[0].parse::<f64>(), fields[1].parse::<f64>()) {
                (Ok(r), Ok(v)) => {
                    knots.push(r);
                    values.push(v);
                }
                _ if knots.is_empty() => continue,
                _ => {
                    return Err(KernelError::InvalidTable(format!("line {}: not numeric", lineno + 1)));
                }
            }
        }
        Self::tabulated(name, &knots, &values)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Lower bound of the profile on `[0, 1/2]`.
    pub fn nondegeneracy_floor(&self) -> f64 {
        self.floor
    }

    /// Checks nonnegativity, compact support and the positive floor.
    pub fn check_assumptions(&self) -> Result<(), KernelError> {
        if self.floor > 0.0 {
            Ok(())
        } else {
            Err(KernelError::DegenerateProfile)
        }
    }

    /// Evaluates a profile member; rejects negative arguments.
    pub fn eval(&self, variant: Variant, r: f64) -> Result<f64, KernelError> {
        if r < 0.0 || r.is_nan() {
            return Err(KernelError::NegativeArgument(r));
        }
        Ok(self.value(variant, r))
    }

    /// Unchecked evaluation for hot loops; `r` must be nonnegative.
    #[inline]
    pub fn value(&self, variant: Variant, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        if r >= 1.0 {
            return 0.0;
        }
        match &self.shape {
            Shape::Quadratic => {
                let t = 1.0 - r;
                match variant {
                    Variant::Base => t * t,
                    Variant::Integrated => t * t * t / 3.0,
                    Variant::TwiceIntegrated => t * t * t * t / 12.0,
                }
            }
            Shape::Tabulated(tab) => match variant {
                Variant::Base => tab.base(r),
                Variant::Integrated => tab.integrated(r),
                Variant::TwiceIntegrated => tab.twice_integrated(r),
            },
        }
    }
}

/// Surface measure of the unit sphere in `dim` dimensions.
fn sphere_measure(dim: usize) -> Result<f64, KernelError> {
    match dim {
        1 => Ok(2.0),
        2 => Ok(2.0 * PI),
        d => Err(KernelError::UnsupportedDimension(d)),
    }
}

/// Constant `c` with `c * S_n * int_0^2 Rbar(r^2/4) r^(n-1) dr = 1`.
pub fn normalization_constant(profile: &KernelProfile, dim: usize) -> Result<f64, KernelError> {
    let sphere = sphere_measure(dim)?;
    let radial = |r: f64| profile.value(Variant::Integrated, r * r / 4.0) * r.powi(dim as i32 - 1);
    let integral = sphere * quadrature::adaptive(&radial, 0.0, 2.0, 1e-13);
    if !(integral.abs() > 1e-300) {
        return Err(KernelError::DegenerateProfile);
    }
    Ok(1.0 / integral)
}

/// A profile scaled to horizon `delta` in dimension 1 or 2.
#[derive(Debug, Clone)]
pub struct ScaledKernel {
    profile: Arc<KernelProfile>,
    horizon: f64,
    dim: usize,
    normalization: f64,
}

impl ScaledKernel {
    pub fn new(profile: KernelProfile, horizon: f64, dim: usize) -> Result<Self, KernelError> {
        let normalization = normalization_constant(&profile, dim)?;
        Self::from_parts(Arc::new(profile), horizon, dim, normalization)
    }

    fn from_parts(
        profile: Arc<KernelProfile>,
        horizon: f64,
        dim: usize,
        normalization: f64,
    ) -> Result<Self, KernelError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(KernelError::InvalidHorizon(horizon));
        }
        Ok(Self { profile, horizon, dim, normalization })
    }

    /// Same profile and dimension at a new horizon, reusing the cached constant.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self, KernelError> {
        Self::from_parts(self.profile.clone(), horizon, self.dim, self.normalization)
    }

    pub fn profile(&self) -> &KernelProfile {
        &self.profile
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// Distance beyond which every variant vanishes.
    pub fn support_radius(&self) -> f64 {
        2.0 * self.horizon
    }

    /// Kernel value as a function of the squared distance.
    #[inline]
    pub fn at_sq_dist(&self, variant: Variant, d2: f64) -> f64 {
        let s = d2 / (4.0 * self.horizon * self.horizon);
        if s >= 1.0 {
            return 0.0;
        }
        self.normalization * self.profile.value(variant, s) / self.horizon.powi(self.dim as i32)
    }

    /// Kernel value as a function of the distance.
    #[inline]
    pub fn at_dist(&self, variant: Variant, d: f64) -> f64 {
        self.at_sq_dist(variant, d * d)
    }

    /// Kernel value between two points of the kernel's dimension.
    pub fn eval(&self, variant: Variant, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        assert_eq!(y.len(), self.dim, "point dimension mismatch");
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        self.at_sq_dist(variant, d2)
    }
}

/// Monotone cubic (Fritsch-Carlson) interpolant with exact tail integrals.
#[derive(Debug, Clone)]
struct Tabulated {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    /// `int_{knot_k}^1 R`.
    tail_base: Vec<f64>,
    /// `int_{knot_k}^1 Rbar`.
    tail_integrated: Vec<f64>,
}

const GL4_NODES: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
const GL4_WEIGHTS: [f64; 4] = [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];

fn gl4(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
    GL4_NODES.iter().zip(GL4_WEIGHTS).map(|(t, w)| w * f(m + h * t)).sum::<f64>() * h
}

impl Tabulated {
    fn new(knots: &[f64], values: &[f64]) -> Result<Self, KernelError> {
        let n = knots.len();
        if n < 2 || values.len() != n {
            return Err(KernelError::InvalidTable("need at least two (r, R) pairs".into()));
        }
        if knots[0] != 0.0 || knots[n - 1] != 1.0 {
            return Err(KernelError::InvalidTable("knots must span [0, 1]".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(KernelError::InvalidTable("knots must increase strictly".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(KernelError::InvalidTable("values must be finite and nonnegative".into()));
        }
        if values[n - 1] != 0.0 {
            return Err(KernelError::InvalidTable("profile must vanish at r = 1".into()));
        }
        let secants: Vec<f64> =
            (0..n - 1).map(|k| (values[k + 1] - values[k]) / (knots[k + 1] - knots[k])).collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        // Zero end slope keeps the profile C1 at the support edge.
        slopes[n - 1] = 0.0;
        for k in 1..n - 1 {
            slopes[k] = if secants[k - 1] * secants[k] <= 0.0 {
                0.0
            } else {
                0.5 * (secants[k - 1] + secants[k])
            };
        }
        for k in 0..n - 1 {
            let d = secants[k];
            if d == 0.0 {
                slopes[k] = 0.0;
                slopes[k + 1] = 0.0;
                continue;
            }
            let a = slopes[k] / d;
            let b = slopes[k + 1] / d;
            let s = a * a + b * b;
            if s > 9.0 {
                let t = 3.0 / s.sqrt();
                slopes[k] = t * a * d;
                slopes[k + 1] = t * b * d;
            }
        }
        let mut table = Self {
            knots: knots.to_vec(),
            values: values.to_vec(),
            slopes,
            tail_base: vec![0.0; n],
            tail_integrated: vec![0.0; n],
        };
        for k in (0..n - 1).rev() {
            let (a, b) = (table.knots[k], table.knots[k + 1]);
            table.tail_base[k] = table.tail_base[k + 1] + gl4(a, b, |s| table.base(s));
        }
        for k in (0..n - 1).rev() {
            let (a, b) = (table.knots[k], table.knots[k + 1]);
            table.tail_integrated[k] = table.tail_integrated[k + 1] + gl4(a, b, |s| table.integrated(s));
        }
        Ok(table)
    }

    fn piece(&self, r: f64) -> usize {
        match self.knots.binary_search_by(|k| k.partial_cmp(&r).unwrap()) {
            Ok(i) => i.min(self.knots.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.knots.len() - 2),
        }
    }

    fn base(&self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        let k = self.piece(r);
        let h = self.knots[k + 1] - self.knots[k];
        let t = (r - self.knots[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.values[k] + h10 * h * self.slopes[k] + h01 * self.values[k + 1] + h11 * h * self.slopes[k + 1]
    }

    fn integrated(&self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        let k = self.piece(r);
        let right = self.knots[k + 1];
        gl4(r, right, |s| self.base(s)) + self.tail_base[k + 1]
    }

    fn twice_integrated(&self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        let k = self.piece(r);
        let right = self.knots[k + 1];
        // Rbar is a quartic on the piece, so four Gauss points are exact.
        gl4(r, right, |s| gl4(s, right, |t| self.base(t)) + self.tail_base[k + 1]) + self.tail_integrated[k + 1]
    }
}
