//! Entailment cones on the hyperboloid and the three-modality entailment
//! loss ordering text ⊃ point cloud ⊃ image.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{contract, Result};
use crate::lorentz::{check_pair, inner_s, same_space, CurvatureSpace, Lifted, LorentzPoint};
use crate::real::Real;

/// Cone geometry of a curvature space: `K` and `eps` come from the space.
#[derive(Clone, Debug)]
pub struct ConeParams {
    pub space: Arc<CurvatureSpace>,
}

impl ConeParams {
    pub fn new(space: Arc<CurvatureSpace>) -> Self {
        Self { space }
    }

    /// Radius `2K/sqrt(c)` below which the aperture saturates.
    pub fn min_radius(&self) -> f64 {
        2.0 * self.space.k_aperture() / self.space.c().sqrt()
    }
}

/// `asin(clamp(2K / (sqrt(c) |x_space|), eps, 1 - eps))`.
pub fn half_aperture_s<S: Real>(c: S, k: f64, eps: f64, x: &Lifted<S>) -> S {
    let norm = x.space_norm();
    if norm.value() == 0.0 {
        return norm.saturate(1.0 - eps).asin();
    }
    ((c.sqrt() * norm).recip() * (2.0 * k)).clamp(eps, 1.0 - eps).asin()
}

/// `pi - angle(O, x, y)`; `x` must not be the origin.
pub fn exterior_angle_s<S: Real>(c: S, eps: f64, x: &Lifted<S>, y: &Lifted<S>) -> S {
    let cxy = c * inner_s(x, y);
    let num = y.time + x.time * cxy;
    let radicand = (cxy * cxy - 1.0).clamp(eps, f64::INFINITY);
    let den = x.space_norm() * radicand.sqrt();
    (num / den).clamp(-1.0 + eps, 1.0 - eps).acos()
}

/// `max(0, ext(text, pts) + ext(pts, img) - aper(text) - aper(pts))`.
pub fn entailment_loss_s<S: Real>(
    c: S,
    k: f64,
    eps: f64,
    text: &Lifted<S>,
    pts: &Lifted<S>,
    img: &Lifted<S>,
) -> S {
    let v = exterior_angle_s(c, eps, text, pts) + exterior_angle_s(c, eps, pts, img)
        - half_aperture_s(c, k, eps, text)
        - half_aperture_s(c, k, eps, pts);
    v.relu()
}

/// Single-cone violation `max(0, ext(parent, child) - aper(parent))`.
pub fn cone_violation_s<S: Real>(
    c: S,
    k: f64,
    eps: f64,
    parent: &Lifted<S>,
    child: &Lifted<S>,
) -> S {
    (exterior_angle_s(c, eps, parent, child) - half_aperture_s(c, k, eps, parent)).relu()
}

/// Mean of [`entailment_loss_s`] over index-aligned triples.
pub fn batch_entailment_loss_s<S: Real>(
    c: S,
    k: f64,
    eps: f64,
    text: &[Lifted<S>],
    pts: &[Lifted<S>],
    img: &[Lifted<S>],
) -> S {
    let terms: Vec<S> = text
        .iter()
        .zip(pts)
        .zip(img)
        .map(|((t, p), i)| entailment_loss_s(c, k, eps, t, p, i))
        .collect();
    S::sum(&terms) / terms.len() as f64
}

fn check_params(op: &'static str, x: &LorentzPoint, params: &ConeParams) -> Result<()> {
    if !same_space(x.curvature(), &params.space) {
        return Err(contract(op, "point and cone parameters use different spaces"));
    }
    Ok(())
}

pub fn half_aperture(x: &LorentzPoint, params: &ConeParams) -> Result<f64> {
    check_params("half_aperture", x, params)?;
    let s = &params.space;
    Ok(half_aperture_s(
        s.c(),
        s.k_aperture(),
        s.eps_clamp(),
        &x.lifted(),
    ))
}

pub fn exterior_angle(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    check_pair("exterior_angle", x, y)?;
    if x.space_norm() == 0.0 {
        return Err(contract(
            "exterior_angle",
            "apex at the origin: the angle is undefined",
        ));
    }
    let s = x.curvature();
    Ok(exterior_angle_s(
        s.c(),
        s.eps_clamp(),
        &x.lifted(),
        &y.lifted(),
    ))
}

/// Entailment loss of one (text, point cloud, image) triple.
pub fn entailment_loss(
    text: &LorentzPoint,
    pts: &LorentzPoint,
    img: &LorentzPoint,
    params: &ConeParams,
) -> Result<f64> {
    check_pair("entailment_loss", text, pts)?;
    check_pair("entailment_loss", pts, img)?;
    check_params("entailment_loss", text, params)?;
    for (name, p) in [("text", text), ("pts", pts), ("img", img)] {
        if p.space_norm() == 0.0 {
            return Err(contract(
                "entailment_loss",
                format!("{name} embedding at the origin"),
            ));
        }
    }
    let s = &params.space;
    Ok(entailment_loss_s(
        s.c(),
        s.k_aperture(),
        s.eps_clamp(),
        &text.lifted(),
        &pts.lifted(),
        &img.lifted(),
    ))
}

/// Mean entailment loss over a batch of triples.
pub fn batch_entailment_loss(
    text: &[LorentzPoint],
    pts: &[LorentzPoint],
    img: &[LorentzPoint],
    params: &ConeParams,
) -> Result<f64> {
    if text.is_empty() || text.len() != pts.len() || pts.len() != img.len() {
        return Err(contract(
            "batch_entailment_loss",
            format!(
                "batches must be nonempty and aligned ({}, {}, {})",
                text.len(),
                pts.len(),
                img.len()
            ),
        ));
    }
    let mut total = 0.0;
    for ((t, p), i) in text.iter().zip(pts).zip(img) {
        total += entailment_loss(t, p, i, params)?;
    }
    Ok(total / text.len() as f64)
}

/// Bounds of the exterior angle imposed by the acos clamp.
pub fn exterior_angle_bounds(eps: f64) -> (f64, f64) {
    ((1.0 - eps).acos(), (-1.0 + eps).acos())
}

/// Upper bound of the aperture, `asin(1 - eps)`, just below `pi/2`.
pub fn max_aperture(eps: f64) -> f64 {
    debug_assert!((1.0 - eps).asin() < PI / 2.0);
    (1.0 - eps).asin()
}
