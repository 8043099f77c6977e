//! Lorentz hyperboloid model with curvature `-c`.
//!
//! A point is stored by its space components only; the time component
//! `sqrt(1/c + |x_space|^2)` is recomputed whenever needed, so every stored
//! point lies on the hyperboloid `<x, x>_L = -1/c` by construction.
//!
//! The generic functions in this module (`*_s` and [`Lifted`]) are the
//! kernels shared by the `f64` API and the tape; the typed wrappers add the
//! contract checks.

use std::sync::Arc;

use crate::error::{contract, Result};
use crate::real::Real;

/// Below this tangent norm the expmap coefficient uses its Taylor series.
pub const TAU_SMALL: f64 = 1e-6;

/// At or below this `acosh` argument the geodesic distance passes zero
/// gradient. The value itself is floored at exactly 1.
pub const ACOSH_FLOOR: f64 = 1.0 + 1e-12;

pub const DEFAULT_K_APERTURE: f64 = 0.1;
pub const DEFAULT_EPS_CLAMP: f64 = 1e-8;

/// Curvature magnitude `c`, aperture constant `K` and clamp `eps`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureSpace {
    log_c: f64,
    k_aperture: f64,
    eps_clamp: f64,
}

impl CurvatureSpace {
    pub fn new(c: f64, k_aperture: f64, eps_clamp: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(contract("CurvatureSpace", format!("c must be > 0, got {c}")));
        }
        if !(k_aperture.is_finite() && k_aperture > 0.0) {
            return Err(contract(
                "CurvatureSpace",
                format!("K must be > 0, got {k_aperture}"),
            ));
        }
        if !(eps_clamp > 0.0 && eps_clamp < 1e-4) {
            return Err(contract(
                "CurvatureSpace",
                format!("eps must lie in (0, 1e-4), got {eps_clamp}"),
            ));
        }
        Ok(Self {
            log_c: c.ln(),
            k_aperture,
            eps_clamp,
        })
    }

    /// Curvature `c` with the default `K = 0.1` and `eps = 1e-8`.
    pub fn with_curvature(c: f64) -> Result<Self> {
        Self::new(c, DEFAULT_K_APERTURE, DEFAULT_EPS_CLAMP)
    }

    pub fn from_log_c(log_c: f64, k_aperture: f64, eps_clamp: f64) -> Result<Self> {
        if !log_c.is_finite() {
            return Err(contract("CurvatureSpace", "log c must be finite"));
        }
        let mut s = Self::new(1.0, k_aperture, eps_clamp)?;
        s.log_c = log_c;
        Ok(s)
    }

    pub fn c(&self) -> f64 {
        self.log_c.exp()
    }

    pub fn log_c(&self) -> f64 {
        self.log_c
    }

    pub fn k_aperture(&self) -> f64 {
        self.k_aperture
    }

    pub fn eps_clamp(&self) -> f64 {
        self.eps_clamp
    }

    pub fn shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}

/// A hyperboloid point in kernel form: space components plus the inferred
/// time component.
#[derive(Clone, Debug)]
pub struct Lifted<S> {
    pub space: Vec<S>,
    pub time: S,
}

impl<S: Real> Lifted<S> {
    pub fn from_space(c: S, space: Vec<S>) -> Self {
        let time = time_component_s(c, &space);
        Self { space, time }
    }

    pub fn space_norm(&self) -> S {
        S::dot(&self.space, &self.space).sqrt()
    }
}

pub fn time_component_s<S: Real>(c: S, space: &[S]) -> S {
    (c.recip() + S::dot(space, space)).sqrt()
}

pub fn inner_s<S: Real>(a: &Lifted<S>, b: &Lifted<S>) -> S {
    S::dot(&a.space, &b.space) - a.time * b.time
}

/// Space part of `expm_O([u, 0])`.
pub fn expmap_origin_s<S: Real>(c: S, u: &[S]) -> Vec<S> {
    let r2 = S::dot(u, u);
    let coef = if r2.value().sqrt() < TAU_SMALL {
        c * r2 / 6.0 + 1.0
    } else {
        let z = (c * r2).sqrt();
        z.sinh() / z
    };
    u.iter().map(|&x| x * coef).collect()
}

pub fn distance_s<S: Real>(c: S, a: &Lifted<S>, b: &Lifted<S>) -> S {
    let arg = -(c * inner_s(a, b));
    let arg = if arg.value() > ACOSH_FLOOR {
        arg
    } else {
        arg.saturate(arg.value().max(1.0))
    };
    arg.acosh() / c.sqrt()
}

/// `d(O, x) = acosh(sqrt(1 + c|x|^2)) / sqrt(c)`, evaluated as the equal
/// `asinh(sqrt(c)|x|) / sqrt(c)`.
pub fn distance_to_origin_s<S: Real>(c: S, a: &Lifted<S>) -> S {
    let sc = c.sqrt();
    (sc * a.space_norm()).asinh() / sc
}

/// A point on the hyperboloid of a shared [`CurvatureSpace`].
#[derive(Clone, Debug)]
pub struct LorentzPoint {
    space: Vec<f64>,
    curvature: Arc<CurvatureSpace>,
}

impl LorentzPoint {
    pub fn new(space: Vec<f64>, curvature: Arc<CurvatureSpace>) -> Result<Self> {
        if space.iter().any(|x| !x.is_finite()) {
            return Err(contract("LorentzPoint", "space components must be finite"));
        }
        Ok(Self { space, curvature })
    }

    /// `O = [0, sqrt(1/c)]`.
    pub fn origin(dim: usize, curvature: Arc<CurvatureSpace>) -> Self {
        Self {
            space: vec![0.0; dim],
            curvature,
        }
    }

    pub fn space(&self) -> &[f64] {
        &self.space
    }

    pub fn into_space(self) -> Vec<f64> {
        self.space
    }

    pub fn curvature(&self) -> &Arc<CurvatureSpace> {
        &self.curvature
    }

    pub fn dim(&self) -> usize {
        self.space.len()
    }

    pub fn time(&self) -> f64 {
        time_component_s(self.curvature.c(), &self.space)
    }

    pub fn lifted(&self) -> Lifted<f64> {
        Lifted {
            space: self.space.clone(),
            time: self.time(),
        }
    }

    pub fn space_norm(&self) -> f64 {
        f64::dot(&self.space, &self.space).sqrt()
    }
}

/// Checks that two points can be combined.
pub(crate) fn check_pair(op: &'static str, a: &LorentzPoint, b: &LorentzPoint) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(contract(
            op,
            format!("dimension mismatch: {} vs {}", a.dim(), b.dim()),
        ));
    }
    if !same_space(&a.curvature, &b.curvature) {
        return Err(contract(op, "points live in different curvature spaces"));
    }
    Ok(())
}

pub(crate) fn same_space(a: &Arc<CurvatureSpace>, b: &Arc<CurvatureSpace>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Checks a nonempty list of points for a common space and dimension.
pub(crate) fn check_all(op: &'static str, pts: &[LorentzPoint]) -> Result<()> {
    let first = pts
        .first()
        .ok_or_else(|| contract(op, "empty point list"))?;
    for p in &pts[1..] {
        check_pair(op, first, p)?;
    }
    Ok(())
}

/// Tangent vector `[vec, 0]` at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentAtOrigin {
    pub vec: Vec<f64>,
}

impl TangentAtOrigin {
    pub fn new(vec: Vec<f64>) -> Self {
        Self { vec }
    }

    pub fn norm(&self) -> f64 {
        f64::dot(&self.vec, &self.vec).sqrt()
    }
}

/// Per-modality embedding scale, stored as `ln(alpha)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleParam {
    pub log_alpha: f64,
}

impl ScaleParam {
    /// `alpha = 1/sqrt(n)`, so a norm-`sqrt(n)` encoder output lifts from a
    /// unit tangent vector.
    pub fn initial(dim: usize) -> Self {
        Self {
            log_alpha: -0.5 * (dim as f64).ln(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }
}

pub fn lorentz_inner(a: &LorentzPoint, b: &LorentzPoint) -> Result<f64> {
    check_pair("lorentz_inner", a, b)?;
    Ok(inner_s(&a.lifted(), &b.lifted()))
}

pub fn time_component(p: &LorentzPoint) -> f64 {
    p.time()
}

pub fn expmap_origin(u: &TangentAtOrigin, curvature: &Arc<CurvatureSpace>) -> Result<LorentzPoint> {
    if u.vec.iter().any(|x| !x.is_finite()) {
        return Err(contract("expmap_origin", "tangent vector must be finite"));
    }
    let space = expmap_origin_s(curvature.c(), &u.vec);
    LorentzPoint::new(space, curvature.clone())
}

/// `expm_O(alpha * encoder_output)`.
pub fn lift(
    encoder_output: &[f64],
    scale: ScaleParam,
    curvature: &Arc<CurvatureSpace>,
) -> Result<LorentzPoint> {
    let a = scale.alpha();
    let u = TangentAtOrigin::new(encoder_output.iter().map(|x| a * x).collect());
    expmap_origin(&u, curvature)
}

pub fn geodesic_distance(a: &LorentzPoint, b: &LorentzPoint) -> Result<f64> {
    check_pair("geodesic_distance", a, b)?;
    Ok(distance_s(a.curvature.c(), &a.lifted(), &b.lifted()))
}

pub fn distance_to_origin(a: &LorentzPoint) -> f64 {
    distance_to_origin_s(a.curvature.c(), &a.lifted())
}
