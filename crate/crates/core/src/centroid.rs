//! Einstein midpoints through the Klein model and the centroid-ordering
//! regulariser.
//!
//! Klein coordinates use the ball of radius `1/sqrt(c)`:
//! `k = x_space / (sqrt(c) x_time)`, so the Lorentz factor
//! `1/sqrt(1 - c|k|^2)` equals `sqrt(c) x_time`.

use std::sync::Arc;

use crate::error::{contract, Result};
use crate::lorentz::{check_all, distance_to_origin_s, CurvatureSpace, Lifted, LorentzPoint};
use crate::real::Real;

/// A point of the Klein ball `c |coords|^2 < 1`.
#[derive(Clone, Debug)]
pub struct KleinPoint {
    coords: Vec<f64>,
    curvature: Arc<CurvatureSpace>,
}

impl KleinPoint {
    pub fn new(coords: Vec<f64>, curvature: Arc<CurvatureSpace>) -> Result<Self> {
        let r2: f64 = coords.iter().map(|x| x * x).sum();
        if !(curvature.c() * r2 < 1.0) {
            return Err(contract(
                "KleinPoint",
                format!("c|k|^2 = {} lies outside the Klein ball", curvature.c() * r2),
            ));
        }
        Ok(Self { coords, curvature })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Distance targets of the three centroids; must satisfy `p > q > r > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CentroidTargets {
    /// Point-cloud centroid.
    pub p: f64,
    /// Text centroid.
    pub q: f64,
    /// Image centroid.
    pub r: f64,
}

impl CentroidTargets {
    pub fn new(p: f64, q: f64, r: f64) -> Result<Self> {
        if !(p > q && q > r && r > 0.0) {
            return Err(contract(
                "CentroidTargets",
                format!("expected p > q > r > 0, got p={p} q={q} r={r}"),
            ));
        }
        Ok(Self { p, q, r })
    }
}

impl Default for CentroidTargets {
    fn default() -> Self {
        Self {
            p: 1.5,
            q: 1.0,
            r: 0.5,
        }
    }
}

pub fn to_klein_s<S: Real>(c: S, x: &Lifted<S>) -> Vec<S> {
    let scale = (c.sqrt() * x.time).recip();
    x.space.iter().map(|&v| v * scale).collect()
}

pub fn lorentz_factor_s<S: Real>(c: S, k: &[S]) -> S {
    (-(c * S::dot(k, k)) + 1.0).sqrt().recip()
}

pub fn from_klein_s<S: Real>(c: S, k: &[S]) -> Lifted<S> {
    let sc = c.sqrt();
    let gamma = lorentz_factor_s(c, k);
    let time = gamma / sc;
    let space = k.iter().map(|&v| v * gamma).collect();
    Lifted { space, time }
}

/// Lorentz-factor-weighted Klein average mapped back to the hyperboloid.
pub fn einstein_midpoint_s<S: Real>(c: S, points: &[Lifted<S>]) -> Lifted<S> {
    let n = points[0].space.len();
    let klein: Vec<Vec<S>> = points.iter().map(|p| to_klein_s(c, p)).collect();
    let gammas: Vec<S> = klein.iter().map(|k| lorentz_factor_s(c, k)).collect();
    let total = S::sum(&gammas);
    let mid: Vec<S> = (0..n)
        .map(|d| {
            let col: Vec<S> = klein.iter().map(|k| k[d]).collect();
            S::dot(&gammas, &col) / total
        })
        .collect();
    from_klein_s(c, &mid)
}

/// Squared deviations of the three centroid distances from their targets.
pub fn centroid_loss_s<S: Real>(
    c: S,
    text: &[Lifted<S>],
    img: &[Lifted<S>],
    pts: &[Lifted<S>],
    targets: CentroidTargets,
) -> S {
    let d_txt = distance_to_origin_s(c, &einstein_midpoint_s(c, text));
    let d_img = distance_to_origin_s(c, &einstein_midpoint_s(c, img));
    let d_pts = distance_to_origin_s(c, &einstein_midpoint_s(c, pts));
    (d_pts - targets.p).square() + (d_txt - targets.q).square() + (d_img - targets.r).square()
}

pub fn to_klein(x: &LorentzPoint) -> KleinPoint {
    let c = x.curvature().c();
    KleinPoint {
        coords: to_klein_s(c, &x.lifted()),
        curvature: x.curvature().clone(),
    }
}

pub fn from_klein(k: &KleinPoint) -> Result<LorentzPoint> {
    let c = k.curvature.c();
    if !(c * f64::dot(&k.coords, &k.coords) < 1.0) {
        return Err(contract("from_klein", "point outside the Klein ball"));
    }
    LorentzPoint::new(from_klein_s(c, &k.coords).space, k.curvature.clone())
}

pub fn lorentz_factor(k: &KleinPoint) -> Result<f64> {
    let c = k.curvature.c();
    if !(c * f64::dot(&k.coords, &k.coords) < 1.0) {
        return Err(contract("lorentz_factor", "point outside the Klein ball"));
    }
    Ok(lorentz_factor_s(c, &k.coords))
}

pub fn einstein_midpoint(points: &[LorentzPoint]) -> Result<LorentzPoint> {
    check_all("einstein_midpoint", points)?;
    let space = points[0].curvature().clone();
    let lifted: Vec<Lifted<f64>> = points.iter().map(LorentzPoint::lifted).collect();
    LorentzPoint::new(einstein_midpoint_s(space.c(), &lifted).space, space)
}

/// Geodesic distances of the text, image and point-cloud centroids from `O`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CentroidDistances {
    pub text: f64,
    pub img: f64,
    pub pts: f64,
}

impl CentroidDistances {
    /// `d_pts > d_txt > d_img`.
    pub fn ordered(&self) -> bool {
        self.pts > self.text && self.text > self.img
    }
}

pub fn centroid_distances(
    text: &[LorentzPoint],
    img: &[LorentzPoint],
    pts: &[LorentzPoint],
) -> Result<CentroidDistances> {
    let d = |b: &[LorentzPoint]| -> Result<f64> {
        Ok(crate::lorentz::distance_to_origin(&einstein_midpoint(b)?))
    };
    Ok(CentroidDistances {
        text: d(text)?,
        img: d(img)?,
        pts: d(pts)?,
    })
}

pub fn centroid_loss(
    text: &[LorentzPoint],
    img: &[LorentzPoint],
    pts: &[LorentzPoint],
    targets: CentroidTargets,
) -> Result<f64> {
    let d = centroid_distances(text, img, pts)?;
    Ok((d.pts - targets.p).powi(2) + (d.text - targets.q).powi(2) + (d.img - targets.r).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorentz::{distance_to_origin, expmap_origin, TangentAtOrigin};
    use approx::assert_relative_eq;

    fn space(c: f64) -> Arc<CurvatureSpace> {
        CurvatureSpace::with_curvature(c).unwrap().shared()
    }

    fn exp(u: Vec<f64>, s: &Arc<CurvatureSpace>) -> LorentzPoint {
        expmap_origin(&TangentAtOrigin::new(u), s).unwrap()
    }

    #[test]
    fn origin_maps_to_klein_zero() {
        let s = space(2.0);
        let k = to_klein(&LorentzPoint::origin(3, s.clone()));
        assert_eq!(k.coords(), &[0.0; 3]);
        let o = from_klein(&k).unwrap();
        assert_eq!(o.space(), &[0.0; 3]);
    }

    #[test]
    fn one_dimensional_closed_form() {
        let s = space(1.0);
        let x = LorentzPoint::new(vec![1.0f64.sinh()], s.clone()).unwrap();
        let k = to_klein(&x);
        assert_relative_eq!(k.coords()[0], 1.0f64.tanh(), epsilon = 1e-15);
        let k2 = KleinPoint::new(vec![1.0f64.tanh()], s).unwrap();
        assert_relative_eq!(from_klein(&k2).unwrap().space()[0], 1.0f64.sinh(), epsilon = 1e-14);
    }

    #[test]
    fn lorentz_factor_values() {
        let s = space(1.0);
        assert_eq!(lorentz_factor(&KleinPoint::new(vec![0.0, 0.0], s.clone()).unwrap()).unwrap(), 1.0);
        let k = KleinPoint::new(vec![0.75f64.sqrt(), 0.0], s.clone()).unwrap();
        assert_relative_eq!(lorentz_factor(&k).unwrap(), 2.0, epsilon = 1e-12);
        let s4 = space(4.0);
        // c|k|^2 = 4 * 0.1875 = 0.75
        let k4 = KleinPoint::new(vec![0.1875f64.sqrt()], s4).unwrap();
        assert_relative_eq!(lorentz_factor(&k4).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn outside_ball_is_rejected() {
        let s = space(4.0);
        assert!(KleinPoint::new(vec![0.5], s.clone()).is_err());
        assert!(KleinPoint::new(vec![0.3, 0.4], s).is_err());
    }

    #[test]
    fn midpoint_of_single_point_and_symmetric_pair() {
        let s = space(1.0);
        let a = exp(vec![0.4, -1.3, 0.2], &s);
        let m = einstein_midpoint(&[a.clone()]).unwrap();
        for (x, y) in m.space().iter().zip(a.space()) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
        let b = exp(vec![-0.4, 1.3, -0.2], &s);
        let o = einstein_midpoint(&[a, b]).unwrap();
        assert!(o.space().iter().all(|v| v.abs() < 1e-8));
        assert!(einstein_midpoint(&[]).is_err());
    }

    #[test]
    fn centroid_loss_examples() {
        let s = space(1.0);
        let t = CentroidTargets::default();
        let dir = [0.6, 0.8];
        let at = |d: f64| exp(vec![dir[0] * d, dir[1] * d], &s);
        let zero = centroid_loss(&[at(t.q)], &[at(t.r)], &[at(t.p)], t).unwrap();
        assert!(zero < 1e-20);
        let o = LorentzPoint::origin(2, s.clone());
        let l = centroid_loss(&[o.clone()], &[o.clone()], &[o], t).unwrap();
        assert_relative_eq!(l, t.p * t.p + t.q * t.q + t.r * t.r, epsilon = 1e-12);
        assert_relative_eq!(distance_to_origin(&at(0.7)), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn targets_must_be_ordered() {
        assert!(CentroidTargets::new(1.0, 1.5, 0.5).is_err());
        assert!(CentroidTargets::new(1.5, 1.0, 0.0).is_err());
        assert!(CentroidTargets::new(1.5, 1.0, 0.5).is_ok());
    }
}
