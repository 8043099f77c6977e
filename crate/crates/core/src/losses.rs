//! Contrastive, alignment, reconstruction and multi-task losses.

use crate::error::{contract, Result};
use crate::lorentz::{check_all, check_pair, distance_s, Lifted, LorentzPoint};
use crate::real::Real;

/// Smooth-L1 transition point.
pub const SMOOTH_L1_BETA: f64 = 1.0;

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Names accepted by [`joint_loss`].
pub const TERM_CENT: &str = "L_cent";
pub const TERM_ENTAIL: &str = "L_entail";
pub const TERM_REC: &str = "L_Rec";
pub const TERM_CON: &str = "L_Con";
pub const TERM_NAMES: [&str; 4] = [TERM_CENT, TERM_ENTAIL, TERM_REC, TERM_CON];

/// Index-aligned text / image / point-cloud embeddings of one batch.
#[derive(Clone, Debug)]
pub struct EmbeddingBatch {
    pub text: Vec<LorentzPoint>,
    pub image: Vec<LorentzPoint>,
    pub pts: Vec<LorentzPoint>,
    pub pts_part: Option<Vec<LorentzPoint>>,
    pub text_part: Option<Vec<LorentzPoint>>,
}

impl EmbeddingBatch {
    pub fn new(
        text: Vec<LorentzPoint>,
        image: Vec<LorentzPoint>,
        pts: Vec<LorentzPoint>,
    ) -> Result<Self> {
        let b = Self {
            text,
            image,
            pts,
            pts_part: None,
            text_part: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_parts(
        mut self,
        pts_part: Option<Vec<LorentzPoint>>,
        text_part: Option<Vec<LorentzPoint>>,
    ) -> Result<Self> {
        self.pts_part = pts_part;
        self.text_part = text_part;
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.pts.len();
        let mut lists = vec![("text", &self.text), ("image", &self.image), ("pts", &self.pts)];
        if let Some(p) = &self.pts_part {
            lists.push(("pts_part", p));
        }
        if let Some(t) = &self.text_part {
            lists.push(("text_part", t));
        }
        for (name, l) in &lists {
            if l.len() != n {
                return Err(contract(
                    "EmbeddingBatch",
                    format!("{name} has {} entries, expected {n}", l.len()),
                ));
            }
        }
        let all: Vec<LorentzPoint> = lists.iter().flat_map(|(_, l)| l.iter().cloned()).collect();
        if !all.is_empty() {
            check_all("EmbeddingBatch", &all)?;
        }
        Ok(())
    }
}

/// Per-term log-variances `s_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskWeights {
    pub s: Vec<f64>,
}

impl TaskWeights {
    pub fn zeros(n: usize) -> Self {
        Self { s: vec![0.0; n] }
    }
}

/// Raw 3-D point coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    pub points: Vec<[f64; 3]>,
}

impl PointSet {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Symmetric InfoNCE with logits `-d_L(a_i, b_j) / temperature`.
pub fn infonce_lorentz_s<S: Real>(c: S, a: &[Lifted<S>], b: &[Lifted<S>], temperature: f64) -> S {
    let n = a.len();
    let inv_t = -1.0 / temperature;
    let logits: Vec<Vec<S>> = a
        .iter()
        .map(|ai| b.iter().map(|bj| distance_s(c, ai, bj) * inv_t).collect())
        .collect();
    let rows: Vec<S> = (0..n)
        .map(|i| S::log_sum_exp(&logits[i]) - logits[i][i])
        .collect();
    let cols: Vec<S> = (0..n)
        .map(|j| {
            let col: Vec<S> = logits.iter().map(|row| row[j]).collect();
            S::log_sum_exp(&col) - logits[j][j]
        })
        .collect();
    (S::sum(&rows) + S::sum(&cols)) / (2.0 * n as f64)
}

pub fn smooth_l1_s<S: Real>(x: S) -> S {
    let a = x.abs();
    if a.value() < SMOOTH_L1_BETA {
        x.square() * (0.5 / SMOOTH_L1_BETA)
    } else {
        a - 0.5 * SMOOTH_L1_BETA
    }
}

/// Mean over the batch of coordinate-summed Smooth-L1 between student space
/// components and gradient-stopped teacher space components.
pub fn smooth_l1_align_s<S: Real>(student: &[Lifted<S>], teacher: &[Lifted<S>]) -> S {
    let per: Vec<S> = student
        .iter()
        .zip(teacher)
        .map(|(z, t)| {
            let terms: Vec<S> = z
                .space
                .iter()
                .zip(&t.space)
                .map(|(&zi, &ti)| smooth_l1_s(zi - ti.detach()))
                .collect();
            S::sum(&terms)
        })
        .collect();
    S::sum(&per) / per.len() as f64
}

/// `align(pts, stopgrad(text)) + align(pts, stopgrad(img))`.
pub fn recon_con_loss_s<S: Real>(pts: &[Lifted<S>], text: &[Lifted<S>], img: &[Lifted<S>]) -> S {
    smooth_l1_align_s(pts, text) + smooth_l1_align_s(pts, img)
}

fn sq_dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn nearest(p: &[f64; 3], set: &[[f64; 3]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, q) in set.iter().enumerate() {
        let d = sq_dist3(p, q);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn values3<S: Real>(ps: &[[S; 3]]) -> Vec<[f64; 3]> {
    ps.iter()
        .map(|p| [p[0].value(), p[1].value(), p[2].value()])
        .collect()
}

/// Two-sided Chamfer distance with squared nearest-neighbour distances.
///
/// Nearest neighbours are selected on forward values (first index wins
/// ties); the expression is then built only over the selected pairs, which
/// is value- and gradient-identical to differentiating the `min`.
pub fn chamfer_s<S: Real>(pred: &[[S; 3]], gt: &[[S; 3]]) -> S {
    let pv = values3(pred);
    let gv = values3(gt);
    let sq = |a: &[S; 3], b: &[S; 3]| -> S {
        let d: Vec<S> = (0..3).map(|k| a[k] - b[k]).collect();
        S::dot(&d, &d)
    };
    let fwd: Vec<S> = pred
        .iter()
        .zip(&pv)
        .map(|(p, v)| sq(p, &gt[nearest(v, &gv)]))
        .collect();
    let bwd: Vec<S> = gt
        .iter()
        .zip(&gv)
        .map(|(g, v)| sq(g, &pred[nearest(v, &pv)]))
        .collect();
    S::sum(&fwd) / pred.len() as f64 + S::sum(&bwd) / gt.len() as f64
}

/// `Σ_i exp(-s_i) L_i + s_i`.
pub fn joint_loss_s<S: Real>(terms: &[S], s: &[S]) -> S {
    let parts: Vec<S> = terms
        .iter()
        .zip(s)
        .map(|(&l, &si)| (-si).exp() * l + si)
        .collect();
    S::sum(&parts)
}

fn check_batches(op: &'static str, a: &[LorentzPoint], b: &[LorentzPoint], min: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(contract(
            op,
            format!("batch lengths differ: {} vs {}", a.len(), b.len()),
        ));
    }
    if a.len() < min {
        return Err(contract(op, format!("need at least {min} samples, got {}", a.len())));
    }
    for (x, y) in a.iter().zip(b) {
        check_pair(op, x, y)?;
    }
    check_all(op, a)
}

fn lifted(ps: &[LorentzPoint]) -> Vec<Lifted<f64>> {
    ps.iter().map(LorentzPoint::lifted).collect()
}

pub fn infonce_lorentz(a: &[LorentzPoint], b: &[LorentzPoint], temperature: f64) -> Result<f64> {
    check_batches("infonce_lorentz", a, b, 2)?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(contract("infonce_lorentz", "temperature must be positive"));
    }
    let c = a[0].curvature().c();
    Ok(infonce_lorentz_s(c, &lifted(a), &lifted(b), temperature))
}

pub fn smooth_l1_align(student: &[LorentzPoint], teacher: &[LorentzPoint]) -> Result<f64> {
    check_batches("smooth_l1_align", student, teacher, 1)?;
    Ok(smooth_l1_align_s(&lifted(student), &lifted(teacher)))
}

pub fn recon_con_loss(batch: &EmbeddingBatch) -> Result<f64> {
    if batch.text.is_empty() || batch.image.is_empty() || batch.pts.is_empty() {
        return Err(contract("recon_con_loss", "text, image and pts must all be present"));
    }
    Ok(smooth_l1_align(&batch.pts, &batch.text)? + smooth_l1_align(&batch.pts, &batch.image)?)
}

pub fn chamfer_recon(pred: &PointSet, gt: &PointSet) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(contract("chamfer_recon", "point sets must be nonempty"));
    }
    Ok(chamfer_s(&pred.points, &gt.points))
}

pub fn joint_loss(terms: &[(&str, f64)], weights: &TaskWeights) -> Result<f64> {
    if terms.len() != weights.s.len() {
        return Err(contract(
            "joint_loss",
            format!("{} terms but {} weights", terms.len(), weights.s.len()),
        ));
    }
    for (i, (name, v)) in terms.iter().enumerate() {
        if !TERM_NAMES.contains(name) {
            return Err(contract("joint_loss", format!("unknown loss term `{name}`")));
        }
        if terms[..i].iter().any(|(n, _)| n == name) {
            return Err(contract("joint_loss", format!("duplicate loss term `{name}`")));
        }
        if !(v.is_finite() && *v >= 0.0) {
            return Err(contract("joint_loss", format!("term `{name}` = {v} is not a nonnegative real")));
        }
    }
    let values: Vec<f64> = terms.iter().map(|(_, v)| *v).collect();
    Ok(joint_loss_s(&values, &weights.s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{Parameter, Tape};
    use crate::lorentz::{expmap_origin, CurvatureSpace, TangentAtOrigin};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn space() -> Arc<CurvatureSpace> {
        CurvatureSpace::with_curvature(1.0).unwrap().shared()
    }

    fn exp(u: Vec<f64>, s: &Arc<CurvatureSpace>) -> LorentzPoint {
        expmap_origin(&TangentAtOrigin::new(u), s).unwrap()
    }

    #[test]
    fn infonce_two_by_two_closed_form() {
        let s = space();
        let batch = vec![LorentzPoint::origin(2, s.clone()), exp(vec![3.0, 4.0], &s)];
        let l = infonce_lorentz(&batch, &batch, 1.0).unwrap();
        // self-distance of the far point carries ~1e-6 cancellation noise
        assert_relative_eq!(l, (1.0 + (-5.0f64).exp()).ln(), epsilon = 1e-5);
    }

    #[test]
    fn infonce_uniform_logits() {
        let s = space();
        let p = exp(vec![0.2, -0.1], &s);
        let batch = vec![p; 5];
        assert_relative_eq!(infonce_lorentz(&batch, &batch, 0.07).unwrap(), 5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn infonce_is_permutation_invariant() {
        let s = space();
        let a: Vec<_> = (0..4).map(|i| exp(vec![i as f64 * 0.3, 0.1 - i as f64 * 0.2], &s)).collect();
        let b: Vec<_> = (0..4).map(|i| exp(vec![0.5 - i as f64 * 0.1, i as f64 * 0.25], &s)).collect();
        let perm = [2, 0, 3, 1];
        let ap: Vec<_> = perm.iter().map(|&i| a[i].clone()).collect();
        let bp: Vec<_> = perm.iter().map(|&i| b[i].clone()).collect();
        let l1 = infonce_lorentz(&a, &b, 0.5).unwrap();
        let l2 = infonce_lorentz(&ap, &bp, 0.5).unwrap();
        assert_relative_eq!(l1, l2, max_relative = 1e-12);
    }

    #[test]
    fn infonce_contract_errors() {
        let s = space();
        let p = exp(vec![0.2, -0.1], &s);
        assert!(infonce_lorentz(&[p.clone()], &[p.clone()], 1.0).is_err());
        assert!(infonce_lorentz(&[p.clone(), p.clone()], &[p.clone()], 1.0).is_err());
        assert!(infonce_lorentz(&[p.clone(), p.clone()], &[p.clone(), p], 0.0).is_err());
    }

    #[test]
    fn smooth_l1_branches() {
        let s = space();
        let z = LorentzPoint::new(vec![0.5], s.clone()).unwrap();
        let t = LorentzPoint::new(vec![0.0], s.clone()).unwrap();
        assert_relative_eq!(smooth_l1_align(&[z], &[t.clone()]).unwrap(), 0.125);
        let z2 = LorentzPoint::new(vec![2.0], s).unwrap();
        assert_relative_eq!(smooth_l1_align(&[z2], &[t.clone()]).unwrap(), 1.5);
        assert_eq!(smooth_l1_align(&[t.clone()], &[t]).unwrap(), 0.0);
    }

    #[test]
    fn recon_con_decomposes() {
        let s = space();
        let pts = vec![exp(vec![0.1, 0.9], &s), exp(vec![-1.4, 0.3], &s)];
        let text = vec![exp(vec![0.5, 0.2], &s), exp(vec![-0.1, 0.0], &s)];
        let img = vec![exp(vec![2.5, -0.7], &s), exp(vec![0.0, 1.1], &s)];
        let batch = EmbeddingBatch::new(text.clone(), img.clone(), pts.clone()).unwrap();
        let whole = recon_con_loss(&batch).unwrap();
        let parts = smooth_l1_align(&pts, &text).unwrap() + smooth_l1_align(&pts, &img).unwrap();
        assert_eq!(whole, parts);
        let same = EmbeddingBatch::new(pts.clone(), pts.clone(), pts).unwrap();
        assert_eq!(recon_con_loss(&same).unwrap(), 0.0);
    }

    #[test]
    fn teacher_gets_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(1.0);
        let mut student = Parameter::new("student", vec![0.3, -0.4]);
        let mut teacher = Parameter::new("teacher", vec![1.2, 0.8]);
        let sv = tape.param(&student);
        let tv = tape.param(&teacher);
        let z = Lifted::from_space(c, sv.clone());
        let t = Lifted::from_space(c, tv.clone());
        let loss = smooth_l1_align_s(&[z], &[t]);
        let g = tape.backward(loss).unwrap();
        g.accumulate(&mut student, &sv);
        g.accumulate(&mut teacher, &tv);
        assert_eq!(teacher.grad, vec![0.0, 0.0]);
        assert!(student.grad.iter().all(|x| *x != 0.0));
    }

    #[test]
    fn chamfer_examples() {
        let a = PointSet::new(vec![[0.0, 0.0, 0.0]]);
        let b = PointSet::new(vec![[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer_recon(&a, &b).unwrap(), 2.0);
        assert_eq!(chamfer_recon(&a, &a).unwrap(), 0.0);
        assert!(chamfer_recon(&a, &PointSet::new(vec![])).is_err());
    }

    #[test]
    fn joint_loss_examples() {
        let e = std::f64::consts::E;
        let l = joint_loss(&[(TERM_CON, e)], &TaskWeights { s: vec![1.0] }).unwrap();
        assert_relative_eq!(l, 2.0, epsilon = 1e-15);
        let terms = [(TERM_CENT, 0.3), (TERM_ENTAIL, 1.2), (TERM_REC, 4.0)];
        assert_relative_eq!(joint_loss(&terms, &TaskWeights::zeros(3)).unwrap(), 5.5);
        assert!(joint_loss(&terms, &TaskWeights::zeros(2)).is_err());
        assert!(joint_loss(&[("L_other", 1.0)], &TaskWeights::zeros(1)).is_err());
        assert!(joint_loss(&[(TERM_REC, 1.0), (TERM_REC, 2.0)], &TaskWeights::zeros(2)).is_err());
    }

    #[test]
    fn batch_lengths_validated() {
        let s = space();
        let p = exp(vec![0.2, -0.1], &s);
        assert!(EmbeddingBatch::new(vec![p.clone()], vec![p.clone()], vec![]).is_err());
        let b = EmbeddingBatch::new(vec![p.clone()], vec![p.clone()], vec![p.clone()]).unwrap();
        assert!(b.clone().with_parts(Some(vec![]), None).is_err());
        assert!(b.with_parts(Some(vec![p]), None).is_ok());
    }
}
