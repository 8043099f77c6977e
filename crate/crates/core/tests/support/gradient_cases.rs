//! Finite-difference gradient cases shared by the core tests and the
//! acceptance harness. Each case panics on failure.

use hyp3d::centroid::{centroid_loss_s, CentroidTargets};
use hyp3d::entailment::{cone_violation_s, entailment_loss_s};
use hyp3d::grad::{check_objective, Objective};
use hyp3d::lorentz::{distance_s, Lifted, DEFAULT_EPS_CLAMP};
use hyp3d::losses::{chamfer_s, infonce_lorentz_s, joint_loss_s, smooth_l1_align_s, SMOOTH_L1_BETA};
use hyp3d::synth::{encode_s, generate_tree, sample_batch, Modality, ToyEncoder};
use hyp3d::{Parameter, Real, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;
pub const STEP: f64 = 1e-5;
pub const CONFIGS: usize = 50;

fn lifted<S: Real>(c: f64, flat: &[S], dim: usize) -> Vec<Lifted<S>> {
    flat.chunks(dim)
        .map(|ch| Lifted::from_space(ch[0].lit(c), ch.to_vec()))
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-r..r)).collect()
}

/// Draws configurations until `CONFIGS` non-degenerate ones pass; returns the
/// number rejected because a clamp saturated or `accept` refused them.
fn run<O: Objective>(
    name: &str,
    seed: u64,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> (O, Vec<Parameter>),
    accept: impl Fn(f64, &[Parameter]) -> bool,
) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rejected = 0;
    let mut passed = 0;
    while passed < CONFIGS {
        let (obj, mut params) = draw(&mut rng);
        let chk = check_objective(name, &obj, &mut params, STEP).unwrap();
        if chk.saturated_clamps > 0 || !accept(chk.value, &params) {
            rejected += 1;
            assert!(rejected < 20 * CONFIGS, "{name}: too many degenerate draws");
            continue;
        }
        assert!(
            chk.report.passes(TOL),
            "{name}: rel error {} at coordinate {}",
            chk.report.max_rel_error,
            chk.report.worst_coordinate
        );
        passed += 1;
    }
    rejected
}

struct Distance {
    c: f64,
}

impl Objective for Distance {
    fn eval<S: Real>(&self, p: &[Vec<S>]) -> S {
        let a = Lifted::from_space(p[0][0].lit(self.c), p[0].clone());
        let b = Lifted::from_space(p[1][0].lit(self.c), p[1].clone());
        distance_s(a.time.lit(self.c), &a, &b)
    }
}

pub fn geodesic_distance_gradient() {
    run(
        "geodesic_distance",
        1,
        |rng| {
            let c = [0.1, 1.0, 10.0][rng.random_range(0..3)];
            let params = vec![
                Parameter::new("a", uniform(rng, 4, 1.5)),
                Parameter::new("b", uniform(rng, 4, 1.5)),
            ];
            (Distance { c }, params)
        },
        |v, _| v > 1e-3,
    );
}

struct Entail {
    c: f64,
    k: f64,
}

impl Objective for Entail {
    fn eval<S: Real>(&self, p: &[Vec<S>]) -> S {
        let c = p[0][0].lit(self.c);
        let t = Lifted::from_space(c, p[0].clone());
        let x = Lifted::from_space(c, p[1].clone());
        let i = Lifted::from_space(c, p[2].clone());
        entailment_loss_s(c, self.k, DEFAULT_EPS_CLAMP, &t, &x, &i)
    }
}

pub fn entailment_gradient() {
    run(
        "entailment_loss",
        2,
        |rng| {
            let c = rng.random_range(0.5..2.0);
            let params = ["text", "pts", "img"]
                .iter()
                .map(|t| Parameter::new(*t, uniform(rng, 3, 2.0)))
                .collect();
            (Entail { c, k: 0.1 }, params)
        },
        |v, _| v > 1e-3,
    );
}

struct Cone {
    c: f64,
}

impl Objective for Cone {
    fn eval<S: Real>(&self, p: &[Vec<S>]) -> S {
        let c = p[0][0].lit(self.c);
        let a = Lifted::from_space(c, p[0].clone());
        let b = Lifted::from_space(c, p[1].clone());
        cone_violation_s(c, 0.1, DEFAULT_EPS_CLAMP, &a, &b)
    }
}

pub fn cone_violation_gradient() {
    run(
        "cone_violation",
        3,
        |rng| {
            let params = vec![
                Parameter::new("parent", uniform(rng, 3, 2.0)),
                Parameter::new("child", uniform(rng, 3, 2.0)),
            ];
            (Cone { c: 1.0 }, params)
        },
        |v, _| v > 1e-3,
    );
}

struct Centroid {
    c: f64,
    dim: usize,
}

impl Objective for Centroid {
    fn eval<S: Real>(&self, p: &[Vec<S>]) -> S {
        let c = p[0][0].lit(self.c);
        let t = lifted(self.c, &p[0], self.dim);
        let i = lifted(self.c, &p[1], self.dim);
        let x = lifted(self.c, &p[2], self.dim);
        centroid_loss_s(c, &t, &i, &x, CentroidTargets::default())
    }
}

pub fn centroid_gradient() {
    run(
        "centroid_loss",
        4,
        |rng| {
            let c = rng.random_range(0.5..2.0);
            let params = ["text", "img", "pts"]
                .iter()
                .map(|t| Parameter::new(*t, uniform(rng, 4 * 3, 2.0)))
                .collect();
            (Centroid { c, dim: 3 }, params)
        },
        |v, _| v > 1e-3,
    );
}

struct InfoNce {
    c: f64,
    t: f64,
}

impl Objective for InfoNce {
    fn eval<S: Real>(&self, p: &[Vec<S>]) -> S {
        let c = p[0][0].lit(self.c);
        infonce_lorentz_s(c, &lifted(self.c, &p[0], 3), &lifted(self.c, &p[1], 3), self.t)
    }
}

pub fn infonce_gradient() {
    run(
        "infonce_lorentz",
        5,
        |rng| {
            let t = rng.random_range(0.2..1.0);
            let params = vec![
                Parameter::new("a", uniform(rng, 4 * 3, 1.0)),
                Parameter::new("b", uniform(rng, 4 * 3, 1.0)),
            ];
            (InfoNce { c: 1.0, t }, params)
        },
        |_, _| true,
    );
}

struct Align {
    teacher: Vec<f64>,
}

impl Objective for Align {
    fn eval<S: Real>(&self, p: &[Vec<S>]) -> S {
        let teacher: Vec<S> = self.teacher.iter().map(|&v| p[0][0].lit(v)).collect();
        smooth_l1_align_s(&lifted(1.0, &p[0], 3), &lifted(1.0, &teacher, 3))
    }
}

pub fn smooth_l1_alignment_gradient() {
    run(
        "smooth_l1_align",
        6,
        |rng| {
            loop {
                let student = uniform(rng, 4 * 3, 2.0);
                let teacher = uniform(rng, 4 * 3, 2.0);
                let away_from_kink = student
                    .iter()
                    .zip(&teacher)
                    .all(|(s, t)| ((s - t).abs() - SMOOTH_L1_BETA).abs() > 1e-3);
                if away_from_kink {
                    return (Align { teacher }, vec![Parameter::new("student", student)]);
                }
            }
        },
        |_, _| true,
    );
}

pub fn stop_gradient_leaves_teacher_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..CONFIGS {
        let mut student = Parameter::new("student", uniform(&mut rng, 12, 2.0));
        let mut teacher = Parameter::new("teacher", uniform(&mut rng, 12, 2.0));
        let tape = Tape::new();
        let s = tape.param(&student);
        let t = tape.param(&teacher);
        let loss = smooth_l1_align_s(&lifted(1.0, &s, 3), &lifted(1.0, &t, 3));
        let g = tape.backward(loss).unwrap();
        g.accumulate(&mut student, &s);
        g.accumulate(&mut teacher, &t);
        assert!(teacher.grad.iter().all(|&v| v == 0.0));
        assert!(student.grad.iter().any(|&v| v != 0.0));
    }
}

struct Chamfer;

impl Objective for Chamfer {
    fn eval<S: Real>(&self, p: &[Vec<S>]) -> S {
        let pts = |flat: &[S]| -> Vec<[S; 3]> {
            flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
        };
        chamfer_s(&pts(&p[0]), &pts(&p[1]))
    }
}

/// Smallest gap between the nearest and second-nearest candidate over both
/// directions; small gaps sit near the switching surface of the `min`.
fn nn_margin(a: &[f64], b: &[f64]) -> f64 {
    let side = |x: &[f64], y: &[f64]| -> f64 {
        x.chunks(3)
            .map(|p| {
                let mut d: Vec<f64> = y
                    .chunks(3)
                    .map(|q| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum())
                    .collect();
                d.sort_by(f64::total_cmp);
                d[1] - d[0]
            })
            .fold(f64::INFINITY, f64::min)
    };
    side(a, b).min(side(b, a))
}

pub fn chamfer_gradient() {
    run(
        "chamfer",
        8,
        |rng| {
            loop {
                let pred = uniform(rng, 6 * 3, 1.0);
                let gt = uniform(rng, 5 * 3, 1.0);
                if nn_margin(&pred, &gt) > 1e-3 {
                    return (Chamfer, vec![Parameter::new("pred", pred), Parameter::new("gt", gt)]);
                }
            }
        },
        |_, _| true,
    );
}

struct Joint;

impl Objective for Joint {
    fn eval<S: Real>(&self, p: &[Vec<S>]) -> S {
        joint_loss_s(&p[0], &p[1])
    }
}

pub fn joint_loss_gradient() {
    run(
        "joint_loss",
        9,
        |rng| {
            let terms = (0..4).map(|_| rng.random_range(0.05..3.0)).collect();
            let s = uniform(rng, 4, 2.0);
            (Joint, vec![Parameter::new("terms", terms), Parameter::new("s", s)])
        },
        |_, _| true,
    );
}

/// Encoders and scales feeding entailment, centroid and contrastive terms.
/// Alignment is left out: its teacher path is cut on the tape but not in
/// the finite differences.
struct Encoded {
    inputs: [Vec<Vec<f64>>; 3],
    out_dim: usize,
}

impl Objective for Encoded {
    fn eval<S: Real>(&self, p: &[Vec<S>]) -> S {
        let c = p[0][0].lit(1.0);
        let enc = |k: usize| -> Vec<Lifted<S>> {
            self.inputs[k]
                .iter()
                .map(|x| encode_s(c, &p[k], self.out_dim, x, p[3 + k][0]))
                .collect()
        };
        let (t, i, x) = (enc(0), enc(1), enc(2));
        let ent: Vec<S> = t
            .iter()
            .zip(&x)
            .zip(&i)
            .map(|((t, x), i)| entailment_loss_s(c, 0.1, DEFAULT_EPS_CLAMP, t, x, i))
            .collect();
        S::sum(&ent)
            + centroid_loss_s(c, &t, &i, &x, CentroidTargets::default())
            + infonce_lorentz_s(c, &t, &i, 0.5)
    }
}

pub fn encoder_weights_and_scales_gradient() {
    let tree = generate_tree(3, 4, 1.0, 11).unwrap();
    let mut batch_seed = 0;
    run(
        "encoder_composite",
        10,
        |rng| {
            batch_seed += 1;
            let b = sample_batch(&tree, 3, 0.25, batch_seed).unwrap();
            let n = 4;
            let encs: Vec<ToyEncoder> = Modality::ALL
                .iter()
                .map(|&m| ToyEncoder::new(m, tree.feat_dim(), n, rng.random()))
                .collect();
            let inputs = [0, 1, 2].map(|k| b.iter().map(|s| encs[k].input(s, false)).collect());
            let mut params: Vec<Parameter> = encs.iter().map(|e| e.w.clone()).collect();
            for name in ["log_alpha_txt", "log_alpha_img", "log_alpha_pts"] {
                // keeps embeddings within a few units of the origin, where the
                // Klein factor 1 - c|k|^2 does not cancel
                params.push(Parameter::scalar(name, rng.random_range(-1.5..-0.3)));
            }
            (Encoded { inputs, out_dim: n }, params)
        },
        // coordinates whose true derivative is below the roundoff floor of
        // central differences are ill-conditioned, not wrong
        |_, ps| ps.iter().flat_map(|p| &p.grad).all(|g| g.abs() > 1e-5),
    );
}

#[allow(dead_code)]
pub const ALL: &[(&str, fn())] = &[
    ("geodesic_distance_gradient", geodesic_distance_gradient),
    ("entailment_gradient", entailment_gradient),
    ("cone_violation_gradient", cone_violation_gradient),
    ("centroid_gradient", centroid_gradient),
    ("infonce_gradient", infonce_gradient),
    ("smooth_l1_alignment_gradient", smooth_l1_alignment_gradient),
    ("stop_gradient_leaves_teacher_untouched", stop_gradient_leaves_teacher_untouched),
    ("chamfer_gradient", chamfer_gradient),
    ("joint_loss_gradient", joint_loss_gradient),
    ("encoder_weights_and_scales_gradient", encoder_weights_and_scales_gradient),
];
