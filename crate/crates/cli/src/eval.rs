//! Hierarchy evaluation of a trained checkpoint on held-out batches.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hyp3d::centroid::einstein_midpoint_s;
use hyp3d::entailment::entailment_loss_s;
use hyp3d::lemb::LembFile;
use hyp3d::lorentz::{distance_to_origin_s, Lifted};
use hyp3d::synth::{derive_seed, sample_all_nodes, ConceptTree};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::load_tree;
use crate::error::{CliError, CliResult};
use crate::model::embed;

pub const EVAL_STREAM: u64 = 0xE7A1;
pub const HISTOGRAM_HEADER: &str = "modality,bin_left,bin_right,count";

/// Held-out embeddings by modality name, in a fixed order.
pub struct EvalEmbeddings {
    pub curvature: f64,
    pub sets: Vec<(&'static str, Vec<Lifted<f64>>)>,
}

impl EvalEmbeddings {
    pub fn get(&self, name: &str) -> &[Lifted<f64>] {
        self.sets
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| v.as_slice())
            .unwrap_or(&[])
    }
}

/// Embeds `eval_samples` held-out samples drawn over all tree nodes with the
/// checkpoint's parameters.
pub fn embed_held_out(ck: &Checkpoint, tree: &ConceptTree) -> CliResult<EvalEmbeddings> {
    let cfg = &ck.config;
    let model = ck.model()?;
    let seed = derive_seed(cfg.seed, EVAL_STREAM);
    let samples = sample_all_nodes(tree, cfg.eval_samples, cfg.mask_ratio, seed)?;
    let inp = model.prepare(&samples);
    let p = model.values();
    let e = embed(cfg, &p, &inp, true);
    Ok(EvalEmbeddings {
        curvature: cfg.curvature,
        sets: vec![
            ("text", e.text),
            ("image", e.img),
            ("pts", e.pts),
            ("pts_part", e.pts_part),
            ("text_part", e.text_part),
        ],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyMetrics {
    pub d_txt: f64,
    pub d_img: f64,
    pub d_pts: f64,
    pub ordered: bool,
    pub containment_rate: f64,
    pub mean_dist: Vec<(&'static str, f64)>,
    pub part_exceeds_whole: bool,
}

impl HierarchyMetrics {
    pub fn mean_dist(&self, name: &str) -> f64 {
        self.mean_dist.iter().find(|(n, _)| *n == name).map_or(f64::NAN, |p| p.1)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "centroid_dist_pts = {}", self.d_pts);
        let _ = writeln!(s, "centroid_dist_text = {}", self.d_txt);
        let _ = writeln!(s, "centroid_dist_image = {}", self.d_img);
        let _ = writeln!(s, "centroid_order_pts_text_image = {}", self.ordered);
        let _ = writeln!(s, "containment_rate = {}", self.containment_rate);
        for (n, v) in &self.mean_dist {
            let _ = writeln!(s, "mean_dist_{n} = {v}");
        }
        let _ = writeln!(s, "part_exceeds_whole = {}", self.part_exceeds_whole);
        s
    }
}

pub fn hierarchy_metrics(cfg: &RunConfig, e: &EvalEmbeddings) -> HierarchyMetrics {
    let c = e.curvature;
    let centroid = |name: &str| distance_to_origin_s(c, &einstein_midpoint_s(c, e.get(name)));
    let (d_txt, d_img, d_pts) = (centroid("text"), centroid("image"), centroid("pts"));
    let (text, pts, img) = (e.get("text"), e.get("pts"), e.get("image"));
    let contained = text
        .iter()
        .zip(pts)
        .zip(img)
        .filter(|((t, p), i)| entailment_loss_s(c, cfg.k_aperture, cfg.eps_clamp, t, p, i) == 0.0)
        .count();
    let mean_dist: Vec<(&'static str, f64)> = e
        .sets
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(n, v)| (*n, v.iter().map(|x| distance_to_origin_s(c, x)).sum::<f64>() / v.len() as f64))
        .collect();
    let md = |n: &str| mean_dist.iter().find(|(k, _)| *k == n).map_or(f64::NAN, |p| p.1);
    HierarchyMetrics {
        d_txt,
        d_img,
        d_pts,
        ordered: d_pts > d_txt && d_txt > d_img,
        containment_rate: contained as f64 / text.len() as f64,
        part_exceeds_whole: md("pts_part") > md("pts"),
        mean_dist,
    }
}

/// Shared-edge histograms of distance to the origin, `[0, max]` split into
/// `bins` equal bins; the last bin is closed.
pub fn histogram_csv(e: &EvalEmbeddings, bins: usize) -> String {
    let c = e.curvature;
    let dists: Vec<(&str, Vec<f64>)> = e
        .sets
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(n, v)| (*n, v.iter().map(|x| distance_to_origin_s(c, x)).collect()))
        .collect();
    let hi = dists
        .iter()
        .flat_map(|(_, d)| d.iter().copied())
        .fold(0.0, f64::max);
    let hi = if hi > 0.0 { hi } else { 1.0 };
    let width = hi / bins as f64;
    let mut out = format!("{HISTOGRAM_HEADER}\n");
    for (name, d) in &dists {
        let mut counts = vec![0usize; bins];
        for &x in d {
            counts[((x / width) as usize).min(bins - 1)] += 1;
        }
        for (b, n) in counts.iter().enumerate() {
            let left = b as f64 * width;
            let right = if b + 1 == bins { hi } else { (b + 1) as f64 * width };
            let _ = writeln!(out, "{name},{left},{right},{n}");
        }
    }
    out
}

/// Parsed histogram rows.
pub fn read_histogram(text: &str) -> CliResult<Vec<(String, f64, f64, usize)>> {
    let mut lines = text.lines();
    let bad = |m: String| CliError::Parse {
        path: "histogram.csv".into(),
        msg: m,
    };
    if lines.next() != Some(HISTOGRAM_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let row = || bad(format!("bad row {}", i + 1));
            if f.len() != 4 {
                return Err(row());
            }
            Ok((
                f[0].to_string(),
                f[1].parse().map_err(|_| row())?,
                f[2].parse().map_err(|_| row())?,
                f[3].parse().map_err(|_| row())?,
            ))
        })
        .collect()
}

/// Writes `hierarchy.txt`, `histogram.csv` and `emb_<modality>.lemb` into
/// `out_dir`.
pub fn cmd_eval(checkpoint: &Path, data_dir: &Path, out_dir: &Path) -> CliResult<HierarchyMetrics> {
    if !checkpoint.exists() {
        return Err(CliError::Checkpoint(format!(
            "{} not found; run `train` first",
            checkpoint.display()
        )));
    }
    let ck = Checkpoint::read(checkpoint)?;
    if ck.step == 0 {
        return Err(CliError::Checkpoint(format!(
            "{} is untrained (step 0)",
            checkpoint.display()
        )));
    }
    let tree = load_tree(data_dir)?;
    let e = embed_held_out(&ck, &tree)?;
    let m = hierarchy_metrics(&ck.config, &e);
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("hierarchy.txt"), m.to_kv())?;
    fs::write(out_dir.join("histogram.csv"), histogram_csv(&e, ck.config.hist_bins))?;
    export_embeddings(&e, out_dir)?;
    Ok(m)
}

pub fn export_embeddings(e: &EvalEmbeddings, dir: &Path) -> CliResult<()> {
    for (name, v) in e.sets.iter().filter(|(_, v)| !v.is_empty()) {
        let rows = v.iter().map(|x| x.space.clone()).collect();
        LembFile::new(e.curvature, v[0].space.len(), rows)?.write(&dir.join(format!("emb_{name}.lemb")))?;
    }
    Ok(())
}
