//! The harness model: three toy encoders, their scales, a point decoder for
//! the reconstruction term and the uncertainty weights, evaluated with any
//! [`Real`].

use hyp3d::centroid::{centroid_loss_s, CentroidTargets};
use hyp3d::entailment::{batch_entailment_loss_s, cone_violation_s};
use hyp3d::lorentz::{Lifted, ScaleParam};
use hyp3d::losses::{chamfer_s, infonce_lorentz_s, joint_loss_s, recon_con_loss_s, TERM_NAMES};
use hyp3d::synth::{derive_seed, Modality, ModalitySample, PointFeaturizer, ToyEncoder};
use hyp3d::{Parameter, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const W_TEXT: usize = 0;
pub const W_IMG: usize = 1;
pub const W_PTS: usize = 2;
pub const LOG_ALPHA_TXT: usize = 3;
pub const LOG_ALPHA_IMG: usize = 4;
pub const LOG_ALPHA_PTS: usize = 5;
pub const DECODER: usize = 6;
pub const S_WEIGHTS: usize = 7;
pub const NUM_PARAMS: usize = 8;

pub const PARAM_TAGS: [&str; NUM_PARAMS] = [
    "encoder_W_text",
    "encoder_W_image",
    "encoder_W_pts",
    "log_alpha_txt",
    "log_alpha_img",
    "log_alpha_pts",
    "decoder_D",
    "s",
];

/// Points produced by the reconstruction decoder.
pub const DECODER_POINTS: usize = 16;
/// Every `GT_STRIDE`-th point of the whole cloud is a reconstruction target.
pub const GT_STRIDE: usize = 8;

/// Teacher parameters frozen by `freeze_teachers`.
pub const TEACHERS: [usize; 4] = [W_TEXT, W_IMG, LOG_ALPHA_TXT, LOG_ALPHA_IMG];

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: Vec<Parameter>,
    pub featurizer: PointFeaturizer,
    pub dim: usize,
    pub feat_dim: usize,
}

fn encoder_seed(cfg: &RunConfig, m: Modality) -> u64 {
    derive_seed(cfg.seed, 0xE0 + m as u64)
}

impl Model {
    pub fn init(cfg: &RunConfig) -> Self {
        let n = cfg.dim;
        let encs: Vec<ToyEncoder> = Modality::ALL
            .iter()
            .map(|&m| ToyEncoder::new(m, cfg.feat_dim, n, encoder_seed(cfg, m)))
            .collect();
        let featurizer = encs[2].featurizer.clone().expect("points encoder has a featurizer");
        let la = ScaleParam::initial(n).log_alpha;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xDEC0));
        let sd = 0.1 / ((n + 1) as f64).sqrt();
        let decoder = (0..DECODER_POINTS * 3 * (n + 1))
            .map(|_| sd * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let values: [Vec<f64>; NUM_PARAMS] = [
            encs[0].w.value.clone(),
            encs[1].w.value.clone(),
            encs[2].w.value.clone(),
            vec![la],
            vec![la],
            vec![la],
            decoder,
            vec![0.0; TERM_NAMES.len()],
        ];
        let params = values
            .into_iter()
            .zip(PARAM_TAGS)
            .map(|(v, tag)| Parameter::new(tag, v))
            .collect();
        Self {
            params,
            featurizer,
            dim: n,
            feat_dim: cfg.feat_dim,
        }
    }

    /// Rebuilds a model from stored parameter values, checking shapes.
    pub fn from_values(cfg: &RunConfig, values: Vec<(String, Vec<f64>)>) -> CliResult<Self> {
        let mut model = Self::init(cfg);
        if values.len() != NUM_PARAMS {
            return Err(CliError::Checkpoint(format!(
                "expected {NUM_PARAMS} parameters, found {}",
                values.len()
            )));
        }
        for (p, (tag, v)) in model.params.iter_mut().zip(values) {
            if p.tag != tag || p.value.len() != v.len() {
                return Err(CliError::Checkpoint(format!(
                    "parameter `{tag}` ({} values) does not match `{}` ({} values)",
                    v.len(),
                    p.tag,
                    p.value.len()
                )));
            }
            p.value = v;
        }
        Ok(model)
    }

    pub fn values(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn prepare(&self, samples: &[ModalitySample]) -> BatchInputs {
        BatchInputs {
            text: samples.iter().map(|s| s.text_feat.clone()).collect(),
            img: samples.iter().map(|s| s.img_feat.clone()).collect(),
            text_part: samples.iter().map(|s| s.text_part_feat.clone()).collect(),
            pts: samples.iter().map(|s| self.featurizer.pool(&s.pts_raw)).collect(),
            pts_part: samples.iter().map(|s| self.featurizer.pool(&s.pts_part_raw)).collect(),
            gt: samples
                .iter()
                .map(|s| s.pts_raw.points.iter().step_by(GT_STRIDE).copied().collect())
                .collect(),
        }
    }
}

/// Encoder inputs of one batch, precomputed in `f64`.
#[derive(Clone, Debug)]
pub struct BatchInputs {
    pub text: Vec<Vec<f64>>,
    pub img: Vec<Vec<f64>>,
    pub text_part: Vec<Vec<f64>>,
    pub pts: Vec<Vec<f64>>,
    pub pts_part: Vec<Vec<f64>>,
    pub gt: Vec<Vec<[f64; 3]>>,
}

impl BatchInputs {
    pub fn len(&self) -> usize {
        self.text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

pub struct Embedded<S> {
    pub text: Vec<Lifted<S>>,
    pub img: Vec<Lifted<S>>,
    pub pts: Vec<Lifted<S>>,
    pub pts_part: Vec<Lifted<S>>,
    pub text_part: Vec<Lifted<S>>,
}

fn encode_all<S: Real>(c: S, w: &[S], n: usize, xs: &[Vec<f64>], log_alpha: S) -> Vec<Lifted<S>> {
    xs.iter()
        .map(|x| hyp3d::synth::encode_s(c, w, n, x, log_alpha))
        .collect()
}

pub fn embed<S: Real>(cfg: &RunConfig, p: &[Vec<S>], inp: &BatchInputs, with_text_part: bool) -> Embedded<S> {
    let c = p[S_WEIGHTS][0].lit(cfg.curvature);
    let n = cfg.dim;
    Embedded {
        text: encode_all(c, &p[W_TEXT], n, &inp.text, p[LOG_ALPHA_TXT][0]),
        img: encode_all(c, &p[W_IMG], n, &inp.img, p[LOG_ALPHA_IMG][0]),
        pts: encode_all(c, &p[W_PTS], n, &inp.pts, p[LOG_ALPHA_PTS][0]),
        pts_part: encode_all(c, &p[W_PTS], n, &inp.pts_part, p[LOG_ALPHA_PTS][0]),
        text_part: if with_text_part {
            encode_all(c, &p[W_TEXT], n, &inp.text_part, p[LOG_ALPHA_TXT][0])
        } else {
            Vec::new()
        },
    }
}

/// Loss values; `None` for disabled terms.
pub struct Terms<S> {
    pub values: [Option<S>; 4],
    pub joint: S,
}

fn decode<S: Real>(d: &[S], z: &[S]) -> Vec<[S; 3]> {
    let w = z.len() + 1;
    (0..DECODER_POINTS)
        .map(|j| {
            let coord = |a: usize| {
                let row = &d[(j * 3 + a) * w..(j * 3 + a + 1) * w];
                S::dot(&row[..w - 1], z) + row[w - 1]
            };
            [coord(0), coord(1), coord(2)]
        })
        .collect()
}

fn mean<S: Real>(xs: &[S]) -> S {
    S::sum(xs) / xs.len() as f64
}

pub fn losses<S: Real>(cfg: &RunConfig, p: &[Vec<S>], inp: &BatchInputs, e: &Embedded<S>) -> Terms<S> {
    let c = p[S_WEIGHTS][0].lit(cfg.curvature);
    let (k, eps) = (cfg.k_aperture, cfg.eps_clamp);
    let cent = cfg.use_cent.then(|| {
        let targets = CentroidTargets {
            p: cfg.target_p,
            q: cfg.target_q,
            r: cfg.target_r,
        };
        centroid_loss_s(c, &e.text, &e.img, &e.pts, targets)
    });
    let entail = cfg.use_entail.then(|| {
        let mut l = batch_entailment_loss_s(c, k, eps, &e.text, &e.pts, &e.img);
        if cfg.part_entail {
            let v: Vec<S> = e
                .pts
                .iter()
                .zip(&e.pts_part)
                .map(|(w, q)| cone_violation_s(c, k, eps, w, q))
                .collect();
            l = l + mean(&v);
        }
        if cfg.text_part && !e.text_part.is_empty() {
            let v: Vec<S> = e
                .text
                .iter()
                .zip(&e.text_part)
                .map(|(w, q)| cone_violation_s(c, k, eps, w, q))
                .collect();
            l = l + mean(&v);
        }
        l
    });
    let rec = cfg.use_rec.then(|| {
        let per: Vec<S> = e
            .pts_part
            .iter()
            .zip(&inp.gt)
            .map(|(z, gt)| {
                let pred = decode(&p[DECODER], &z.space);
                let gt: Vec<[S; 3]> = gt.iter().map(|g| [c.lit(g[0]), c.lit(g[1]), c.lit(g[2])]).collect();
                chamfer_s(&pred, &gt)
            })
            .collect();
        mean(&per)
    });
    let con = cfg.use_con.then(|| {
        let mut l = recon_con_loss_s(&e.pts, &e.text, &e.img);
        if cfg.con_infonce {
            l = l
                + infonce_lorentz_s(c, &e.text, &e.img, cfg.temperature)
                + infonce_lorentz_s(c, &e.pts, &e.text, cfg.temperature);
        }
        l
    });
    let values = [cent, entail, rec, con];
    let (ls, ss): (Vec<S>, Vec<S>) = values
        .iter()
        .zip(&p[S_WEIGHTS])
        .filter_map(|(v, &s)| v.map(|v| (v, s)))
        .unzip();
    Terms {
        values,
        joint: joint_loss_s(&ls, &ss),
    }
}

pub fn forward<S: Real>(cfg: &RunConfig, p: &[Vec<S>], inp: &BatchInputs) -> (Embedded<S>, Terms<S>) {
    let e = embed(cfg, p, inp, cfg.text_part);
    let t = losses(cfg, p, inp, &e);
    (e, t)
}
