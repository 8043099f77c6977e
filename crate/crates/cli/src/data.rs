//! Dataset directories written by `gen` and read by `train` and `eval`.
//!
//! Layout:
//!
//! | file | contents |
//! |------|----------|
//! | `meta.txt` | `key = value` tree parameters |
//! | `tree.csv` | `id,parent,depth`; the root has an empty parent |
//! | `prototypes.lemb` | one prototype row per node, curvature 0 |
//! | `projection.lemb` | 3 rows mapping prototypes to blob centres |
//! | `tree_embedding.lemb` | hyperbolic placement of the nodes, edges of length [`TREE_EDGE`] |
//! | `samples.csv` | `index,concept` of the preview batch |
//! | `samples_text.lemb`, `samples_img.lemb` | preview features |
//! | `samples_pts.bin`, `samples_pts_part.bin` | preview point sets |

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hyp3d::lemb::{write_point_sets_file, LembFile};
use hyp3d::synth::{derive_seed, generate_tree_with_dim, sample_batch, ConceptNode, ConceptTree};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const PREVIEW_STREAM: u64 = 0x5A31;
pub const TREE_EDGE: f64 = 3.0;

fn parse_err(path: &Path, msg: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

pub fn tree_csv(tree: &ConceptTree) -> String {
    let mut s = String::from("id,parent,depth\n");
    for n in &tree.nodes {
        let parent = n.parent.map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{}", n.id, parent, n.depth);
    }
    s
}

/// Generates the tree and a preview batch for `cfg` into `dir`.
pub fn cmd_gen(cfg: &RunConfig, dir: &Path) -> CliResult<ConceptTree> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let tree = generate_tree_with_dim(cfg.branching, cfg.depth, cfg.tree_noise, cfg.seed, cfg.feat_dim)?;
    let meta = format!(
        "branching = {}\ndepth = {}\nnoise = {}\nseed = {}\nfeat_dim = {}\nnodes = {}\n",
        tree.branching,
        tree.depth,
        tree.noise,
        tree.seed,
        tree.feat_dim(),
        tree.len()
    );
    fs::write(dir.join("meta.txt"), meta)?;
    fs::write(dir.join("tree.csv"), tree_csv(&tree))?;
    let protos = tree.nodes.iter().map(|n| n.prototype.clone()).collect();
    LembFile::new(0.0, tree.feat_dim(), protos)?.write(&dir.join("prototypes.lemb"))?;
    let m = tree.feat_dim();
    let proj = tree.projection.chunks(m).map(<[f64]>::to_vec).collect();
    LembFile::new(0.0, m, proj)?.write(&dir.join("projection.lemb"))?;
    let dim = cfg.dim.max(2);
    let placed = tree.hyperbolic_embedding(cfg.curvature, TREE_EDGE, dim)?;
    LembFile::new(cfg.curvature, dim, placed)?.write(&dir.join("tree_embedding.lemb"))?;

    // the preview batch is drawn from the tree as it will be read back
    let tree = load_tree(dir)?;
    let samples = sample_batch(&tree, cfg.batch_size, cfg.mask_ratio, derive_seed(cfg.seed, PREVIEW_STREAM))?;
    let mut idx = String::from("index,concept\n");
    for (i, s) in samples.iter().enumerate() {
        let _ = writeln!(idx, "{i},{}", s.concept);
    }
    fs::write(dir.join("samples.csv"), idx)?;
    let feats = |f: &dyn Fn(&hyp3d::synth::ModalitySample) -> Vec<f64>| -> CliResult<LembFile> {
        Ok(LembFile::new(0.0, m, samples.iter().map(f).collect())?)
    };
    feats(&|s| s.text_feat.clone())?.write(&dir.join("samples_text.lemb"))?;
    feats(&|s| s.img_feat.clone())?.write(&dir.join("samples_img.lemb"))?;
    let whole: Vec<_> = samples.iter().map(|s| s.pts_raw.clone()).collect();
    let part: Vec<_> = samples.iter().map(|s| s.pts_part_raw.clone()).collect();
    write_point_sets_file(&whole, &dir.join("samples_pts.bin"))?;
    write_point_sets_file(&part, &dir.join("samples_pts_part.bin"))?;
    Ok(tree)
}

fn meta_value(meta: &str, key: &str, path: &Path) -> CliResult<String> {
    meta.lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim().to_string())
        .ok_or_else(|| parse_err(path, format!("missing `{key}`")))
}

/// Reads a dataset directory back into a tree.
pub fn load_tree(dir: &Path) -> CliResult<ConceptTree> {
    let meta_path = dir.join("meta.txt");
    let meta = fs::read_to_string(&meta_path)?;
    let num = |key: &str| -> CliResult<f64> {
        meta_value(&meta, key, &meta_path)?
            .parse()
            .map_err(|_| parse_err(&meta_path, format!("bad `{key}`")))
    };
    let branching = num("branching")? as usize;
    let depth = num("depth")? as usize;
    let noise = num("noise")?;
    let seed: u64 = meta_value(&meta, "seed", &meta_path)?
        .parse()
        .map_err(|_| parse_err(&meta_path, "bad `seed`"))?;

    let protos = LembFile::read(&dir.join("prototypes.lemb"))?;
    let proj = LembFile::read(&dir.join("projection.lemb"))?;
    if proj.rows.len() != 3 || proj.dim != protos.dim {
        return Err(parse_err(&dir.join("projection.lemb"), "expected 3 rows matching the prototype width"));
    }

    let csv_path = dir.join("tree.csv");
    let csv = fs::read_to_string(&csv_path)?;
    let mut lines = csv.lines();
    if lines.next() != Some("id,parent,depth") {
        return Err(parse_err(&csv_path, "unexpected header"));
    }
    let mut nodes = Vec::new();
    for (row, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || parse_err(&csv_path, format!("bad row {}", row + 1));
        if f.len() != 3 {
            return Err(bad());
        }
        let id: usize = f[0].parse().map_err(|_| bad())?;
        let parent = if f[1].is_empty() {
            None
        } else {
            Some(f[1].parse::<usize>().map_err(|_| bad())?)
        };
        let d: usize = f[2].parse().map_err(|_| bad())?;
        if id != row || parent.is_some_and(|p| p >= id) {
            return Err(bad());
        }
        let prototype = protos.rows.get(id).cloned().ok_or_else(bad)?;
        nodes.push(ConceptNode {
            id,
            parent,
            depth: d,
            prototype,
        });
    }
    if nodes.len() != protos.rows.len() || nodes.is_empty() {
        return Err(parse_err(&csv_path, "node count does not match prototypes"));
    }
    for n in &nodes {
        let ok = match n.parent {
            None => n.id == 0 && n.depth == 0,
            Some(p) => nodes[p].depth + 1 == n.depth,
        };
        if !ok {
            return Err(parse_err(&csv_path, format!("inconsistent depth at node {}", n.id)));
        }
    }
    Ok(ConceptTree {
        nodes,
        branching,
        depth,
        noise,
        seed,
        projection: proj.rows.concat(),
    })
}
