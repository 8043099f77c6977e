//! Synthetic three-view data over a concept tree, plus toy linear encoders.
//!
//! Points clouds are unions of spherical blobs, one per ancestor of the
//! sampled leaf, so a contiguous patch of the cloud carries the shape of a
//! single, more specific sub-concept.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{contract, Result};
use crate::hyperbolicity::DistanceMatrix;
use crate::lorentz::{expmap_origin_s, CurvatureSpace, Lifted, LorentzPoint, ScaleParam};
use crate::losses::PointSet;
use crate::real::Real;

pub const DEFAULT_FEAT_DIM: usize = 32;
pub const POINTS_PER_CLOUD: usize = 256;
pub const DEFAULT_MASK_RATIO: f64 = 0.25;
/// Per-level shrink factor of prototype perturbations.
pub const LEVEL_DECAY: f64 = 0.7;
/// Feature noise relative to the tree noise.
pub const FEATURE_NOISE: f64 = 0.1;
/// Blob radius at the root; shrinks with [`LEVEL_DECAY`].
pub const BLOB_RADIUS: f64 = 0.5;
/// Width of the random point featurizer.
pub const POINT_FEAT_DIM: usize = 32;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Derives an independent stream seed from `(a, b)`.
pub fn derive_seed(a: u64, b: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptNode {
    pub id: usize,
    pub parent: Option<usize>,
    /// Root is level 0.
    pub depth: usize,
    pub prototype: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptTree {
    pub nodes: Vec<ConceptNode>,
    pub branching: usize,
    /// Number of levels, root included.
    pub depth: usize,
    pub noise: f64,
    pub seed: u64,
    /// Fixed `3 x m` map from prototypes to blob centres, row-major.
    pub projection: Vec<f64>,
}

impl ConceptTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn feat_dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.prototype.len())
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.depth + 1 == self.depth)
            .map(|n| n.id)
            .collect()
    }

    pub fn children(&self, id: usize) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.parent == Some(id))
            .map(|n| n.id)
            .collect()
    }

    /// Root first, `id` last.
    pub fn ancestors(&self, id: usize) -> Vec<usize> {
        let mut chain = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        chain
    }

    pub fn is_ancestor(&self, a: usize, b: usize) -> bool {
        self.ancestors(b).contains(&a)
    }

    /// Number of edges on the tree path between `a` and `b`.
    pub fn graph_distance(&self, a: usize, b: usize) -> usize {
        let pa = self.ancestors(a);
        let pb = self.ancestors(b);
        let common = pa.iter().zip(&pb).take_while(|(x, y)| x == y).count();
        pa.len() + pb.len() - 2 * common
    }

    pub fn graph_distance_matrix(&self) -> Result<DistanceMatrix> {
        DistanceMatrix::from_fn(self.len(), |i, j| self.graph_distance(i, j) as f64)
    }

    /// Blob centre of a node in 3-space.
    pub fn blob_center(&self, id: usize) -> [f64; 3] {
        let proto = &self.nodes[id].prototype;
        let m = proto.len();
        let mut c = [0.0; 3];
        for (r, out) in c.iter_mut().enumerate() {
            *out = f64::dot(&self.projection[r * m..(r + 1) * m], proto);
        }
        c
    }

    /// Deterministic cloud of [`POINTS_PER_CLOUD`] points for a concept.
    pub fn point_cloud(&self, id: usize) -> PointSet {
        let chain = self.ancestors(id);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 0x100 + id as u64));
        let per = POINTS_PER_CLOUD / chain.len();
        let mut points = Vec::with_capacity(POINTS_PER_CLOUD);
        for (k, &node) in chain.iter().enumerate() {
            let count = if k + 1 == chain.len() {
                POINTS_PER_CLOUD - per * k
            } else {
                per
            };
            let center = self.blob_center(node);
            let radius = BLOB_RADIUS * LEVEL_DECAY.powi(self.nodes[node].depth as i32);
            for _ in 0..count {
                let g = [gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)];
                let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt().max(1e-12);
                let r = radius * rng.random::<f64>().cbrt();
                points.push([
                    center[0] + r * g[0] / norm,
                    center[1] + r * g[1] / norm,
                    center[2] + r * g[2] / norm,
                ]);
            }
        }
        PointSet::new(points)
    }

    /// Space components of a hyperbolic placement of the nodes at curvature
    /// `-c`: every edge is a geodesic of length `edge`, and children fan out
    /// at equal angles away from their parent in the first two coordinates.
    pub fn hyperbolic_embedding(&self, c: f64, edge: f64, dim: usize) -> Result<Vec<Vec<f64>>> {
        if !(c.is_finite() && c > 0.0 && edge.is_finite() && edge > 0.0) || dim < 2 {
            return Err(contract(
                "hyperbolic_embedding",
                format!("need c > 0, edge > 0 and dim >= 2, got {c}, {edge}, {dim}"),
            ));
        }
        // unit Poincare disk, rescaled to curvature -c at the end
        let r = (0.5 * edge * c.sqrt()).tanh();
        let mut z = vec![Complex64::new(0.0, 0.0); self.len()];
        for n in &self.nodes {
            let kids = self.children(n.id);
            let here = z[n.id];
            let to_origin = |w: Complex64| (w - here) / (1.0 - here.conj() * w);
            let (start, slots) = match n.parent {
                Some(p) => (to_origin(z[p]).arg(), kids.len() + 1),
                None => (0.0, kids.len()),
            };
            for (k, &child) in kids.iter().enumerate() {
                let theta = start + std::f64::consts::TAU * (k + usize::from(n.parent.is_some())) as f64 / slots as f64;
                let u = Complex64::from_polar(r, theta);
                z[child] = (u + here) / (1.0 + here.conj() * u);
            }
        }
        let s = 1.0 / c.sqrt();
        Ok(z
            .iter()
            .map(|w| {
                let f = 2.0 * s / (1.0 - w.norm_sqr());
                let mut x = vec![0.0; dim];
                x[0] = f * w.re;
                x[1] = f * w.im;
                x
            })
            .collect())
    }
}

pub fn generate_tree(branching: usize, depth: usize, noise: f64, seed: u64) -> Result<ConceptTree> {
    generate_tree_with_dim(branching, depth, noise, seed, DEFAULT_FEAT_DIM)
}

/// Full tree with `(branching^depth - 1) / (branching - 1)` nodes; the root
/// prototype is zero.
pub fn generate_tree_with_dim(
    branching: usize,
    depth: usize,
    noise: f64,
    seed: u64,
    feat_dim: usize,
) -> Result<ConceptTree> {
    if branching < 2 || depth < 2 {
        return Err(contract(
            "generate_tree",
            format!("need branching >= 2 and depth >= 2, got {branching} and {depth}"),
        ));
    }
    if !(noise.is_finite() && noise > 0.0) || feat_dim == 0 {
        return Err(contract("generate_tree", "noise must be positive and feat_dim nonzero"));
    }
    let total = (0..depth).map(|l| branching.pow(l as u32)).sum::<usize>();
    if total > 1_000_000 {
        return Err(contract("generate_tree", format!("{total} nodes is too many")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = vec![ConceptNode {
        id: 0,
        parent: None,
        depth: 0,
        prototype: vec![0.0; feat_dim],
    }];
    let mut frontier = vec![0usize];
    for level in 1..depth {
        let sd = noise * LEVEL_DECAY.powi(level as i32 - 1) / (feat_dim as f64).sqrt();
        let mut next = Vec::with_capacity(frontier.len() * branching);
        for &p in &frontier {
            for _ in 0..branching {
                let id = nodes.len();
                let prototype = nodes[p]
                    .prototype
                    .iter()
                    .map(|&v| v + sd * gaussian(&mut rng))
                    .collect();
                nodes.push(ConceptNode {
                    id,
                    parent: Some(p),
                    depth: level,
                    prototype,
                });
                next.push(id);
            }
        }
        frontier = next;
    }
    let scale = 1.0 / (feat_dim as f64).sqrt() * 4.0;
    let projection = (0..3 * feat_dim).map(|_| scale * gaussian(&mut rng)).collect();
    Ok(ConceptTree {
        nodes,
        branching,
        depth,
        noise,
        seed,
        projection,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModalitySample {
    pub concept: usize,
    pub text_feat: Vec<f64>,
    pub img_feat: Vec<f64>,
    /// `text_feat` with all but the leading `mask_ratio` fraction zeroed.
    pub text_part_feat: Vec<f64>,
    pub pts_raw: PointSet,
    pub pts_part_raw: PointSet,
}

/// Indices of the `keep` points nearest to `pts[seed_idx]`, ascending by
/// distance (ties by index).
pub fn nearest_ball(pts: &PointSet, seed_idx: usize, keep: usize) -> Vec<usize> {
    let c = pts.points[seed_idx];
    let mut order: Vec<(f64, usize)> = pts
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
            (d, i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(keep).map(|(_, i)| i).collect()
}

pub fn part_size(whole: usize, mask_ratio: f64) -> usize {
    ((whole as f64 * mask_ratio).round() as usize).clamp(1, whole)
}

/// Builds the sample for one concept; `rng` drives feature noise and the
/// part's seed point.
pub fn sample_concept(
    tree: &ConceptTree,
    concept: usize,
    mask_ratio: f64,
    rng: &mut ChaCha8Rng,
) -> ModalitySample {
    let m = tree.feat_dim();
    let sd = FEATURE_NOISE * tree.noise / (m as f64).sqrt();
    let proto = &tree.nodes[concept].prototype;
    let noisy = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        proto.iter().map(|&v| v + sd * gaussian(rng)).collect()
    };
    let text_feat = noisy(rng);
    let img_feat = noisy(rng);
    let kept = part_size(m, mask_ratio);
    let text_part_feat = text_feat
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < kept { v } else { 0.0 })
        .collect();
    let pts_raw = tree.point_cloud(concept);
    let seed_idx = rng.random_range(0..pts_raw.len());
    let idx = nearest_ball(&pts_raw, seed_idx, part_size(pts_raw.len(), mask_ratio));
    let pts_part_raw = PointSet::new(idx.iter().map(|&i| pts_raw.points[i]).collect());
    ModalitySample {
        concept,
        text_feat,
        img_feat,
        text_part_feat,
        pts_raw,
        pts_part_raw,
    }
}

/// Leaf-only batch.
pub fn sample_batch(
    tree: &ConceptTree,
    batch_size: usize,
    mask_ratio: f64,
    seed: u64,
) -> Result<Vec<ModalitySample>> {
    sample_from(tree, &tree.leaves(), batch_size, mask_ratio, seed)
}

/// Batch over every node, internal ones included.
pub fn sample_all_nodes(
    tree: &ConceptTree,
    batch_size: usize,
    mask_ratio: f64,
    seed: u64,
) -> Result<Vec<ModalitySample>> {
    let all: Vec<usize> = (0..tree.len()).collect();
    sample_from(tree, &all, batch_size, mask_ratio, seed)
}

/// Batch whose concepts are drawn uniformly from `concepts`.
pub fn sample_from(
    tree: &ConceptTree,
    concepts: &[usize],
    batch_size: usize,
    mask_ratio: f64,
    seed: u64,
) -> Result<Vec<ModalitySample>> {
    if tree.is_empty() || concepts.is_empty() {
        return Err(contract("sample_batch", "empty tree"));
    }
    if let Some(&bad) = concepts.iter().find(|&&c| c >= tree.len()) {
        return Err(contract("sample_batch", format!("concept {bad} not in the tree")));
    }
    if !(mask_ratio > 0.0 && mask_ratio < 1.0) {
        return Err(contract("sample_batch", format!("mask_ratio {mask_ratio} not in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..batch_size)
        .map(|_| {
            let c = concepts[rng.random_range(0..concepts.len())];
            sample_concept(tree, c, mask_ratio, &mut rng)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Text,
    Image,
    Points,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Image, Modality::Points];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Points => "pts",
        }
    }
}

/// Fixed random per-point features `relu(A p + b)`, mean-pooled.
#[derive(Clone, Debug, PartialEq)]
pub struct PointFeaturizer {
    pub a: Vec<[f64; 3]>,
    pub b: Vec<f64>,
}

impl PointFeaturizer {
    pub fn new(width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = (0..width)
            .map(|_| [gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)])
            .collect();
        let b = (0..width).map(|_| 0.5 * gaussian(&mut rng)).collect();
        Self { a, b }
    }

    pub fn width(&self) -> usize {
        self.b.len()
    }

    pub fn pool(&self, pts: &PointSet) -> Vec<f64> {
        let inv = 1.0 / pts.len().max(1) as f64;
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| {
                pts.points
                    .iter()
                    .map(|p| (a[0] * p[0] + a[1] * p[1] + a[2] * p[2] + b).max(0.0))
                    .sum::<f64>()
                    * inv
            })
            .collect()
    }
}

/// Linear map `W` (`out_dim x in_dim`, row-major) into the tangent space.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyEncoder {
    pub modality: Modality,
    pub w: crate::grad::Parameter,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Present for [`Modality::Points`].
    pub featurizer: Option<PointFeaturizer>,
}

impl ToyEncoder {
    /// Gaussian init with variance `1 / in_dim`.
    pub fn new(modality: Modality, feat_dim: usize, out_dim: usize, seed: u64) -> Self {
        let featurizer = (modality == Modality::Points)
            .then(|| PointFeaturizer::new(POINT_FEAT_DIM, derive_seed(seed, 0xFEA7)));
        let in_dim = featurizer.as_ref().map_or(feat_dim, PointFeaturizer::width);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim).map(|_| sd * gaussian(&mut rng)).collect();
        Self {
            modality,
            w: crate::grad::Parameter::new(format!("encoder_W_{}", modality.name()), w),
            in_dim,
            out_dim,
            featurizer,
        }
    }

    /// Input vector for the whole view, or the part view when `part` is set.
    pub fn input(&self, sample: &ModalitySample, part: bool) -> Vec<f64> {
        match (self.modality, part) {
            (Modality::Text, false) => sample.text_feat.clone(),
            (Modality::Text, true) => sample.text_part_feat.clone(),
            (Modality::Image, _) => sample.img_feat.clone(),
            (Modality::Points, p) => {
                let f = self.featurizer.as_ref().expect("points encoder has a featurizer");
                f.pool(if p { &sample.pts_part_raw } else { &sample.pts_raw })
            }
        }
    }

    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim {
            return Err(contract(
                "encode",
                format!("input has {} features, encoder expects {}", input.len(), self.in_dim),
            ));
        }
        Ok(linear_s(&self.w.value, self.out_dim, input))
    }
}

pub fn linear_s<S: Real>(w: &[S], out_dim: usize, input: &[f64]) -> Vec<S> {
    let m = input.len();
    (0..out_dim).map(|i| S::dot_f64(&w[i * m..(i + 1) * m], input)).collect()
}

/// `lift(W x)` with scale `exp(log_alpha)`.
pub fn encode_s<S: Real>(c: S, w: &[S], out_dim: usize, input: &[f64], log_alpha: S) -> Lifted<S> {
    let a = log_alpha.exp();
    let u: Vec<S> = linear_s(w, out_dim, input).into_iter().map(|v| v * a).collect();
    Lifted::from_space(c, expmap_origin_s(c, &u))
}

pub fn encode(
    encoder: &ToyEncoder,
    scale: ScaleParam,
    sample: &ModalitySample,
    part: bool,
    curvature: &Arc<CurvatureSpace>,
) -> Result<LorentzPoint> {
    let out = encoder.apply(&encoder.input(sample, part))?;
    crate::lorentz::lift(&out, scale, curvature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperbolicity::gromov_delta;

    #[test]
    fn node_counts() {
        assert_eq!(generate_tree(2, 3, 1.0, 0).unwrap().len(), 7);
        let t = generate_tree(3, 5, 1.0, 0).unwrap();
        assert_eq!(t.len(), 121);
        assert_eq!(t.leaves().len(), 81);
        assert!(generate_tree(1, 3, 1.0, 0).is_err());
        assert!(generate_tree(2, 1, 1.0, 0).is_err());
    }

    #[test]
    fn tree_structure() {
        let t = generate_tree(3, 4, 1.0, 9).unwrap();
        assert_eq!(t.nodes.iter().filter(|n| n.parent.is_none()).count(), 1);
        for n in &t.nodes {
            if let Some(p) = n.parent {
                assert_eq!(t.nodes[p].depth + 1, n.depth);
            }
        }
        assert_eq!(t, generate_tree(3, 4, 1.0, 9).unwrap());
        assert_ne!(t, generate_tree(3, 4, 1.0, 10).unwrap());
    }

    #[test]
    fn graph_metric_is_a_tree() {
        let t = generate_tree(2, 4, 1.0, 1).unwrap();
        let d = t.graph_distance_matrix().unwrap();
        assert_eq!(gromov_delta(&d, 0).unwrap(), 0.0);
        assert_eq!(gromov_delta(&d, 7).unwrap(), 0.0);
    }

    #[test]
    fn hyperbolic_embedding_has_equal_edges_and_is_tree_like() {
        let t = generate_tree(3, 5, 1.0, 0).unwrap();
        for c in [1.0, 0.5] {
            let x = t.hyperbolic_embedding(c, 3.0, 4).unwrap();
            let lift = |v: &Vec<f64>| Lifted::from_space(c, v.clone());
            for n in &t.nodes[1..] {
                let d = crate::lorentz::distance_s(c, &lift(&x[n.id]), &lift(&x[n.parent.unwrap()]));
                assert!((d - 3.0).abs() < 1e-6, "edge {} has length {d}", n.id);
            }
            let d = DistanceMatrix::from_fn(t.len(), |i, j| {
                crate::lorentz::distance_s(c, &lift(&x[i]), &lift(&x[j]))
            })
            .unwrap();
            assert!(crate::hyperbolicity::delta_rel(&d, 0).unwrap() < 0.1);
        }
        assert!(t.hyperbolic_embedding(1.0, 0.0, 4).is_err());
        assert!(t.hyperbolic_embedding(1.0, 1.0, 1).is_err());
    }

    #[test]
    fn part_is_contiguous_subset() {
        let t = generate_tree(3, 5, 1.0, 2).unwrap();
        let b = sample_batch(&t, 4, 0.25, 5).unwrap();
        for s in &b {
            assert_eq!(s.pts_raw.len(), 256);
            assert_eq!(s.pts_part_raw.len(), 64);
            assert!(s.pts_part_raw.points.iter().all(|p| s.pts_raw.points.contains(p)));
            assert!(t.leaves().contains(&s.concept));
        }
        assert_eq!(b, sample_batch(&t, 4, 0.25, 5).unwrap());
        assert!(sample_batch(&t, 4, 1.0, 5).is_err());
    }

    #[test]
    fn zero_weights_encode_to_origin() {
        let t = generate_tree(2, 3, 1.0, 2).unwrap();
        let s = &sample_batch(&t, 1, 0.25, 0).unwrap()[0];
        let space = CurvatureSpace::with_curvature(1.0).unwrap().shared();
        let mut enc = ToyEncoder::new(Modality::Points, t.feat_dim(), 8, 3);
        enc.w.value.iter_mut().for_each(|w| *w = 0.0);
        let p = encode(&enc, ScaleParam::initial(8), s, false, &space).unwrap();
        assert_eq!(p.space(), &[0.0; 8]);
    }

    #[test]
    fn scale_absorption() {
        let t = generate_tree(2, 3, 1.0, 2).unwrap();
        let s = &sample_batch(&t, 1, 0.25, 0).unwrap()[0];
        let space = CurvatureSpace::with_curvature(1.0).unwrap().shared();
        let enc = ToyEncoder::new(Modality::Text, t.feat_dim(), 8, 3);
        let mut doubled = enc.clone();
        doubled.w.value.iter_mut().for_each(|w| *w *= 2.0);
        let a = encode(&enc, ScaleParam::initial(8), s, false, &space).unwrap();
        let half = ScaleParam {
            log_alpha: ScaleParam::initial(8).log_alpha - 2f64.ln(),
        };
        let b = encode(&doubled, half, s, false, &space).unwrap();
        for (x, y) in a.space().iter().zip(b.space()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_input_is_rejected() {
        let enc = ToyEncoder::new(Modality::Text, 4, 2, 0);
        assert!(enc.apply(&[1.0; 3]).is_err());
    }
}
