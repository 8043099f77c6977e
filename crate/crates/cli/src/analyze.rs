//! Batched δ-hyperbolicity reports per modality.
//!
//! Inputs are a checkpoint (`.json`, embedded on held-out samples), a single
//! `.lemb` file or a directory of `emb_<modality>.lemb` files. Rows of a
//! curvature-0 LEMB file are measured with Euclidean distances.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hyp3d::hyperbolicity::{batched_hyperbolicity, batched_hyperbolicity_euclidean, HyperbolicityReport};
use hyp3d::lemb::LembFile;
use hyp3d::CurvatureSpace;
use hyp3d::LorentzPoint;

use crate::checkpoint::Checkpoint;
use crate::data::load_tree;
use crate::error::{CliError, CliResult};
use crate::eval::embed_held_out;

pub const SUMMARY_HEADER: &str = "modality,mean_delta_rel,std_delta_rel,num_batches,batch_size";

/// One named embedding set.
pub enum Embeddings {
    Hyperbolic(Vec<LorentzPoint>),
    Euclidean(Vec<Vec<f64>>),
}

impl Embeddings {
    pub fn from_lemb(f: &LembFile) -> CliResult<Self> {
        if f.curvature == 0.0 {
            Ok(Self::Euclidean(f.rows.clone()))
        } else {
            Ok(Self::Hyperbolic(f.to_points()?))
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Hyperbolic(v) => v.len(),
            Self::Euclidean(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn report(&self, batch_size: usize, seed: u64) -> CliResult<HyperbolicityReport> {
        Ok(match self {
            Self::Hyperbolic(v) => batched_hyperbolicity(v, batch_size, seed)?,
            Self::Euclidean(v) => batched_hyperbolicity_euclidean(v, batch_size, seed)?,
        })
    }
}

fn lemb_inputs(paths: &[PathBuf]) -> CliResult<Vec<(String, Embeddings)>> {
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("emb");
            let name = stem.strip_prefix("emb_").unwrap_or(stem).to_string();
            Ok((name, Embeddings::from_lemb(&LembFile::read(p)?)?))
        })
        .collect()
}

/// Resolves `input` into named embedding sets.
pub fn load_inputs(input: &Path, data_dir: &Path) -> CliResult<Vec<(String, Embeddings)>> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(input)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "lemb")
                    && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("emb_"))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CliError::Parse {
                path: input.display().to_string(),
                msg: "no emb_*.lemb files".into(),
            });
        }
        return lemb_inputs(&files);
    }
    if input.extension().is_some_and(|x| x == "json") {
        let ck = Checkpoint::read(input)?;
        let tree = load_tree(data_dir)?;
        let e = embed_held_out(&ck, &tree)?;
        let space = CurvatureSpace::new(e.curvature, ck.config.k_aperture, ck.config.eps_clamp)?.shared();
        return e
            .sets
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(n, v)| {
                let pts = v
                    .into_iter()
                    .map(|x| LorentzPoint::new(x.space, space.clone()))
                    .collect::<hyp3d::Result<Vec<_>>>()?;
                Ok((n.to_string(), Embeddings::Hyperbolic(pts)))
            })
            .collect();
    }
    lemb_inputs(&[input.to_path_buf()])
}

pub fn summary_csv(reports: &[(String, HyperbolicityReport)]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for (name, r) in reports {
        let _ = writeln!(
            s,
            "{name},{},{},{},{}",
            r.mean_delta_rel, r.std_delta_rel, r.num_batches, r.batch_size
        );
    }
    s
}

/// Parsed summary rows: `(modality, mean, std, num_batches, batch_size)`.
pub fn read_summary(text: &str) -> CliResult<Vec<(String, f64, f64, usize, usize)>> {
    let bad = |m: String| CliError::Parse {
        path: "summary.csv".into(),
        msg: m,
    };
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let row = || bad(format!("bad row {}", i + 1));
            if f.len() != 5 {
                return Err(row());
            }
            Ok((
                f[0].to_string(),
                f[1].parse().map_err(|_| row())?,
                f[2].parse().map_err(|_| row())?,
                f[3].parse().map_err(|_| row())?,
                f[4].parse().map_err(|_| row())?,
            ))
        })
        .collect()
}

/// Writes `summary.csv`, `hyp_<modality>.txt` and
/// `hyp_<modality>_batches.csv` into `out_dir`.
pub fn cmd_analyze(
    input: &Path,
    data_dir: &Path,
    out_dir: &Path,
    batch_size: usize,
    seed: u64,
) -> CliResult<Vec<(String, HyperbolicityReport)>> {
    let inputs = load_inputs(input, data_dir)?;
    let reports = inputs
        .iter()
        .map(|(n, e)| Ok((n.clone(), e.report(batch_size, seed)?)))
        .collect::<CliResult<Vec<_>>>()?;
    fs::create_dir_all(out_dir)?;
    for (name, r) in &reports {
        fs::write(out_dir.join(format!("hyp_{name}.txt")), r.to_kv())?;
        fs::write(out_dir.join(format!("hyp_{name}_batches.csv")), r.batches_csv())?;
    }
    fs::write(out_dir.join("summary.csv"), summary_csv(&reports))?;
    Ok(reports)
}
