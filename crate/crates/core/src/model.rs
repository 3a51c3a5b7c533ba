//! The parametric deficit model and its pointwise evaluation.
//!
//! A model is a list of isotropic, unnormalized Gaussian kernels over the
//! unit-square visual field. From it we derive four quantities at any point:
//! the luminance degradation Γ, membership in the deficit region Ω_λ, the
//! rotational (swirl) displacement, and the radial spatial displacement.
//! The two displacements are summed into one backward-sampling map
//! `S(p) = p + D(p)`: the percept at `p` shows scene content from `S(p)`.

use std::ops::{Add, Mul, Sub};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Lattice size used by [`validate_model`] for its invertibility diagnostic.
pub const VALIDATION_LIPSCHITZ_GRID: usize = 64;

/// A point of the normalized visual field. Serialized as `[u, v]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub u: f64,
    pub v: f64,
}

impl Point2 {
    pub const fn new(u: f64, v: f64) -> Self {
        Point2 { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([u, v]: [f64; 2]) -> Self {
        Point2 { u, v }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.u, p.v]
    }
}

/// A displacement in visual-field units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub du: f64,
    pub dv: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { du: 0.0, dv: 0.0 };

    pub const fn new(du: f64, dv: f64) -> Self {
        Vec2 { du, dv }
    }

    pub fn norm(&self) -> f64 {
        self.du.hypot(self.dv)
    }

    pub fn is_finite(&self) -> bool {
        self.du.is_finite() && self.dv.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.du + rhs.du, self.dv + rhs.dv)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.du - rhs.du, self.dv - rhs.dv)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self * rhs.du, self * rhs.dv)
    }
}

impl Add<Vec2> for Point2 {
    type Output = Point2;
    fn add(self, rhs: Vec2) -> Point2 {
        Point2::new(self.u + rhs.du, self.v + rhs.dv)
    }
}

impl Sub for Point2 {
    type Output = Vec2;
    fn sub(self, rhs: Point2) -> Vec2 {
        Vec2::new(self.u - rhs.u, self.v - rhs.v)
    }
}

/// One deficit locus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianKernel {
    pub mu: Point2,
    /// Standard deviation in visual-field units.
    pub sigma: f64,
    /// Peak luminance deficit; also weights the rotational distortion.
    pub omega: f64,
    pub theta_rad: f64,
    /// Amplitude of the radial spatial distortion. Values below 1 keep the
    /// total map invertible by fixed-point iteration.
    pub psi_gain: f64,
}

impl GaussianKernel {
    /// A kernel contributing luminance loss only.
    pub fn luminance(mu: Point2, sigma: f64, omega: f64) -> Self {
        GaussianKernel {
            mu,
            sigma,
            omega,
            theta_rad: 0.0,
            psi_gain: 0.0,
        }
    }

    /// `exp(-|p - mu|^2 / (2 sigma^2))`, peak value 1 at the center.
    pub fn value(&self, p: Point2) -> f64 {
        let du = p.u - self.mu.u;
        let dv = p.v - self.mu.v;
        (-(du * du + dv * dv) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

pub fn kernel_value(k: &GaussianKernel, p: Point2) -> f64 {
    k.value(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeficitModel {
    pub version: u32,
    /// Default cutoff for the deficit region.
    pub lambda: f64,
    pub kernels: Vec<GaussianKernel>,
}

impl Default for DeficitModel {
    fn default() -> Self {
        DeficitModel::empty(0.5)
    }
}

/// Γ and the two displacement components at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub gamma: f64,
    pub rotation: Vec2,
    pub spatial: Vec2,
}

impl FieldSample {
    /// Total displacement `D(p)`.
    pub fn displacement(&self) -> Vec2 {
        self.rotation + self.spatial
    }
}

impl DeficitModel {
    /// The healthy (identity) model.
    pub fn empty(lambda: f64) -> Self {
        DeficitModel {
            version: MODEL_FORMAT_VERSION,
            lambda,
            kernels: Vec::new(),
        }
    }

    pub fn with_kernels(lambda: f64, kernels: Vec<GaussianKernel>) -> Self {
        DeficitModel {
            version: MODEL_FORMAT_VERSION,
            lambda,
            kernels,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialization is infallible")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization is infallible")
    }

    /// Precomputes per-kernel trigonometry for repeated evaluation.
    pub fn evaluator(&self) -> FieldEvaluator {
        FieldEvaluator::new(self)
    }

    pub fn gamma(&self, p: Point2) -> f64 {
        self.evaluator().gamma(p)
    }

    pub fn in_region(&self, p: Point2, lambda: f64) -> bool {
        self.gamma(p) >= lambda
    }

    pub fn rot_displacement(&self, p: Point2) -> Vec2 {
        self.evaluator().sample(p).rotation
    }

    pub fn psi_displacement(&self, p: Point2) -> Vec2 {
        self.evaluator().sample(p).spatial
    }

    pub fn displacement(&self, p: Point2) -> Vec2 {
        self.evaluator().displacement(p)
    }

    pub fn total_map(&self, p: Point2) -> Point2 {
        p + self.displacement(p)
    }

    /// Validates the model, turning violations into an error.
    pub fn validated(self) -> Result<Self> {
        let report = validate_model(&self);
        if report.violations.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidModel(report.violations))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PreparedKernel {
    mu: Point2,
    two_sigma_sq: f64,
    omega: f64,
    sin: f64,
    cos: f64,
    psi_gain: f64,
}

/// Pointwise evaluator over a model with kernel constants hoisted.
///
/// Accumulation order matches the per-component operations exactly, so
/// results are bit-identical to evaluating Γ, the rotation and the spatial
/// term separately.
#[derive(Debug, Clone)]
pub struct FieldEvaluator {
    kernels: Vec<PreparedKernel>,
}

impl FieldEvaluator {
    pub fn new(model: &DeficitModel) -> Self {
        let kernels = model
            .kernels
            .iter()
            .map(|k| {
                let (sin, cos) = k.theta_rad.sin_cos();
                PreparedKernel {
                    mu: k.mu,
                    two_sigma_sq: 2.0 * k.sigma * k.sigma,
                    omega: k.omega,
                    sin,
                    cos,
                    psi_gain: k.psi_gain,
                }
            })
            .collect();
        FieldEvaluator { kernels }
    }

    pub fn is_identity(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn sample(&self, p: Point2) -> FieldSample {
        let mut gamma = 0.0;
        let mut rotation = Vec2::ZERO;
        let mut spatial = Vec2::ZERO;
        for k in &self.kernels {
            let du = p.u - k.mu.u;
            let dv = p.v - k.mu.v;
            let n = (-(du * du + dv * dv) / k.two_sigma_sq).exp();
            let w = k.omega * n;
            gamma += w;
            // (R_theta - I) applied to the offset from the kernel center.
            let ru = k.cos * du - k.sin * dv - du;
            let rv = k.sin * du + k.cos * dv - dv;
            rotation.du += w * ru;
            rotation.dv += w * rv;
            let g = k.psi_gain * n;
            spatial.du += g * du;
            spatial.dv += g * dv;
        }
        FieldSample {
            gamma: gamma.clamp(0.0, 1.0),
            rotation,
            spatial,
        }
    }

    pub fn gamma(&self, p: Point2) -> f64 {
        self.sample(p).gamma
    }

    pub fn displacement(&self, p: Point2) -> Vec2 {
        self.sample(p).displacement()
    }

    pub fn total_map(&self, p: Point2) -> Point2 {
        p + self.displacement(p)
    }
}

pub fn eval_gamma(m: &DeficitModel, p: Point2) -> f64 {
    m.gamma(p)
}

/// Region membership uses `Γ >= λ`: points at least as degraded as the cutoff.
pub fn in_region(m: &DeficitModel, p: Point2, lambda: f64) -> bool {
    m.in_region(p, lambda)
}

pub fn rot_displacement(m: &DeficitModel, p: Point2) -> Vec2 {
    m.rot_displacement(p)
}

pub fn psi_displacement(m: &DeficitModel, p: Point2) -> Vec2 {
    m.psi_displacement(p)
}

pub fn total_map(m: &DeficitModel, p: Point2) -> Point2 {
    m.total_map(p)
}

const JACOBIAN_STEP: f64 = 1e-6;

/// Largest singular value of `[[a, b], [c, d]]`.
pub(crate) fn spectral_norm_2x2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let frob = a * a + b * b + c * c + d * d;
    let det = a * d - b * c;
    let disc = (frob * frob - 4.0 * det * det).max(0.0).sqrt();
    ((frob + disc) / 2.0).sqrt()
}

fn jacobian_norm(eval: &FieldEvaluator, p: Point2) -> f64 {
    let h = JACOBIAN_STEP;
    let du_plus = eval.displacement(Point2::new(p.u + h, p.v));
    let du_minus = eval.displacement(Point2::new(p.u - h, p.v));
    let dv_plus = eval.displacement(Point2::new(p.u, p.v + h));
    let dv_minus = eval.displacement(Point2::new(p.u, p.v - h));
    let col_u = (1.0 / (2.0 * h)) * (du_plus - du_minus);
    let col_v = (1.0 / (2.0 * h)) * (dv_plus - dv_minus);
    spectral_norm_2x2(col_u.du, col_v.du, col_u.dv, col_v.dv)
}

/// Estimates `sup |J_D|`, the Lipschitz constant of the total displacement.
///
/// The Jacobian is taken by central differences at every node of a
/// `grid x grid` lattice spanning `[0,1]^2` inclusive, and at every kernel
/// center (where single-kernel derivatives peak). `grid` is raised to 16 if
/// smaller. A value below 1 certifies that fixed-point inversion converges.
pub fn lipschitz_estimate(m: &DeficitModel, grid: usize) -> f64 {
    if m.kernels.is_empty() {
        return 0.0;
    }
    let grid = grid.max(16);
    let eval = m.evaluator();
    let step = 1.0 / (grid - 1) as f64;
    let lattice = (0..grid)
        .into_par_iter()
        .map(|j| {
            let v = j as f64 * step;
            (0..grid)
                .map(|i| jacobian_norm(&eval, Point2::new(i as f64 * step, v)))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    m.kernels
        .iter()
        .map(|k| jacobian_norm(&eval, k.mu))
        .fold(lattice, f64::max)
}

/// Outcome of [`validate_model`]. Violations are fatal; warnings are not.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Validation {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_model(m: &DeficitModel) -> Validation {
    let mut out = Validation::default();
    if m.version != MODEL_FORMAT_VERSION {
        out.violations.push(format!(
            "unsupported model version {} (expected {MODEL_FORMAT_VERSION})",
            m.version
        ));
    }
    if !(m.lambda > 0.0 && m.lambda < 1.0) {
        out.violations
            .push(format!("lambda must lie in (0, 1), got {}", m.lambda));
    }
    for (i, k) in m.kernels.iter().enumerate() {
        let mut bad = |msg: String| out.violations.push(format!("kernel[{i}]: {msg}"));
        if !k.mu.is_finite() {
            bad("mu must be finite".into());
        }
        if !k.sigma.is_finite() {
            bad("sigma must be finite".into());
        } else if k.sigma <= 0.0 {
            bad("sigma must be positive".into());
        }
        if !(0.0..=1.0).contains(&k.omega) {
            bad(format!("omega must lie in [0, 1], got {}", k.omega));
        }
        if !k.theta_rad.is_finite() {
            bad("theta_rad must be finite".into());
        } else if k.theta_rad.abs() > std::f64::consts::PI {
            bad(format!("theta_rad must lie in [-pi, pi], got {}", k.theta_rad));
        }
        if !k.psi_gain.is_finite() {
            bad("psi_gain must be finite".into());
        } else if k.psi_gain < 0.0 {
            bad(format!("psi_gain must be non-negative, got {}", k.psi_gain));
        }
    }
    if out.violations.is_empty() {
        let lip = lipschitz_estimate(m, VALIDATION_LIPSCHITZ_GRID);
        if lip >= 1.0 {
            out.warnings.push(format!(
                "displacement Lipschitz estimate {lip:.4} >= 1: geometric inversion may not converge"
            ));
        }
    }
    out
}
