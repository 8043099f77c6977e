//! Training loop: synthetic batches, the joint loss on one tape per step,
//! SGD with momentum or AdamW, linear warm-up then cosine decay.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hyp3d::losses::TERM_NAMES;
use hyp3d::synth::{derive_seed, sample_batch, ConceptTree};
use hyp3d::Tape;

use crate::checkpoint::{Checkpoint, OptimizerState};
use crate::config::{OptimizerKind, Paths, RunConfig};
use crate::data::load_tree;
use crate::error::{CliError, CliResult};
use crate::model::{forward, Model, TEACHERS};

pub const TRAIN_STREAM: u64 = 0x7EA1;
pub const METRICS_HEADER: &str = "step,term_name,value";
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate at `step`: linear warm-up to `lr`, then half-cosine to 0.
pub fn learning_rate(cfg: &RunConfig, step: usize) -> f64 {
    let w = cfg.warmup_steps;
    if step < w {
        return cfg.lr * (step + 1) as f64 / w as f64;
    }
    let span = cfg.steps.saturating_sub(w).max(1) as f64;
    let t = ((step - w) as f64 / span).min(1.0);
    0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * t).cos())
}

pub fn batch_seed(cfg: &RunConfig, step: usize) -> u64 {
    derive_seed(derive_seed(cfg.seed, TRAIN_STREAM), step as u64)
}

/// Loss values of one step, taken before the update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub terms: [Option<f64>; 4],
    pub s: Vec<f64>,
    pub joint: f64,
    pub lr: f64,
}

impl StepRecord {
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for (i, name) in TERM_NAMES.iter().enumerate() {
            if let Some(v) = self.terms[i] {
                let _ = writeln!(out, "{},{name},{v}", self.step);
                let _ = writeln!(out, "{},s_{name},{}", self.step, self.s[i]);
            }
        }
        let _ = writeln!(out, "{},joint,{}", self.step, self.joint);
        let _ = writeln!(out, "{},lr,{}", self.step, self.lr);
        out
    }
}

pub struct Trainer<'a> {
    pub cfg: RunConfig,
    pub tree: &'a ConceptTree,
    pub model: Model,
    pub opt: OptimizerState,
    pub step: usize,
    tape: Tape,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &RunConfig, tree: &'a ConceptTree) -> CliResult<Self> {
        cfg.validate()?;
        check_tree(cfg, tree)?;
        let model = Model::init(cfg);
        let opt = empty_state(cfg, &model);
        Ok(Self {
            cfg: cfg.clone(),
            tree,
            model,
            opt,
            step: 0,
            tape: Tape::new(),
        })
    }

    pub fn resume(ck: &Checkpoint, tree: &'a ConceptTree) -> CliResult<Self> {
        ck.config.validate()?;
        check_tree(&ck.config, tree)?;
        let model = ck.model()?;
        let shapes_ok = |bufs: &Vec<Vec<f64>>| {
            bufs.len() == model.params.len() && bufs.iter().zip(&model.params).all(|(b, p)| b.len() == p.len())
        };
        let expect_v = ck.config.optimizer == OptimizerKind::Adamw;
        if !shapes_ok(&ck.optimizer.m) || (expect_v && !shapes_ok(&ck.optimizer.v)) {
            return Err(CliError::Checkpoint("optimizer state does not match the parameters".into()));
        }
        Ok(Self {
            cfg: ck.config.clone(),
            tree,
            model,
            opt: ck.optimizer.clone(),
            step: ck.step,
            tape: Tape::new(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.cfg, self.step, &self.model, self.opt.clone())
    }

    pub fn done(&self) -> bool {
        self.step >= self.cfg.steps
    }

    /// Runs one optimisation step and returns its pre-update losses.
    pub fn step(&mut self) -> CliResult<StepRecord> {
        let cfg = &self.cfg;
        let step = self.step;
        let samples = sample_batch(self.tree, cfg.batch_size, cfg.mask_ratio, batch_seed(cfg, step))?;
        let inp = self.model.prepare(&samples);
        self.tape.clear();
        let tape = &self.tape;
        let vars: Vec<_> = self.model.params.iter().map(|p| tape.param(p)).collect();
        let (_, t) = forward(cfg, &vars, &inp);
        let mut terms = [None; 4];
        for (i, v) in t.values.iter().enumerate() {
            if let Some(v) = v {
                let x = v.value();
                if !x.is_finite() {
                    return Err(CliError::NonFiniteTerm {
                        term: TERM_NAMES[i].into(),
                        step,
                    });
                }
                terms[i] = Some(x);
            }
        }
        let joint = t.joint.value();
        if !joint.is_finite() {
            return Err(CliError::NonFiniteTerm {
                term: "joint".into(),
                step,
            });
        }
        let grads = tape.backward(t.joint).map_err(|e| CliError::NonFiniteTerm {
            term: format!("joint ({e})"),
            step,
        })?;
        for (p, v) in self.model.params.iter_mut().zip(&vars) {
            p.zero_grad();
            grads.accumulate(p, v);
        }
        let lr = learning_rate(cfg, step);
        let record = StepRecord {
            step,
            terms,
            s: self.model.params[crate::model::S_WEIGHTS].value.clone(),
            joint,
            lr,
        };
        update(cfg, &mut self.model, &mut self.opt, lr);
        self.step += 1;
        Ok(record)
    }
}

fn check_tree(cfg: &RunConfig, tree: &ConceptTree) -> CliResult<()> {
    if tree.branching != cfg.branching || tree.depth != cfg.depth || tree.feat_dim() != cfg.feat_dim {
        return Err(CliError::Config(format!(
            "dataset has branching {} depth {} feat_dim {}, config asks for {} {} {}; rerun `gen` with this config",
            tree.branching,
            tree.depth,
            tree.feat_dim(),
            cfg.branching,
            cfg.depth,
            cfg.feat_dim
        )));
    }
    Ok(())
}

fn empty_state(cfg: &RunConfig, model: &Model) -> OptimizerState {
    let zeros = || model.params.iter().map(|p| vec![0.0; p.len()]).collect();
    OptimizerState {
        t: 0,
        m: zeros(),
        v: if cfg.optimizer == OptimizerKind::Adamw { zeros() } else { Vec::new() },
    }
}

fn update(cfg: &RunConfig, model: &mut Model, opt: &mut OptimizerState, lr: f64) {
    opt.t += 1;
    let t = opt.t as i32;
    for (i, p) in model.params.iter_mut().enumerate() {
        if cfg.freeze_teachers && TEACHERS.contains(&i) {
            continue;
        }
        match cfg.optimizer {
            OptimizerKind::Sgd => {
                for ((x, g), m) in p.value.iter_mut().zip(&p.grad).zip(&mut opt.m[i]) {
                    *m = cfg.momentum * *m + g;
                    *x -= lr * *m;
                }
            }
            OptimizerKind::Adamw => {
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for (((x, g), m), v) in p.value.iter_mut().zip(&p.grad).zip(&mut opt.m[i]).zip(&mut opt.v[i]) {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let step = (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
                    *x -= lr * (step + cfg.weight_decay * *x);
                }
            }
        }
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub first_joint: Option<f64>,
    pub last_joint: Option<f64>,
}

impl TrainOutcome {
    /// Whether the final joint loss is below the first one.
    pub fn improved(&self) -> Option<bool> {
        Some(self.last_joint? < self.first_joint?)
    }
}

/// Keeps metric rows of steps before `step`.
fn truncate_metrics(text: &str, step: usize) -> String {
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .is_some_and(|s| s < step);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

/// Trains from scratch, or from `resume`, writing into `paths.run_dir`:
/// `checkpoint_init.json` (fresh runs), `metrics.csv`, optional
/// `checkpoint_step<N>.json` and the final `checkpoint.json`.
pub fn cmd_train(cfg: &RunConfig, paths: &Paths, resume: Option<&Path>) -> CliResult<TrainOutcome> {
    let tree = load_tree(&paths.data_dir)?;
    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::read(p)?;
            if ck.config_hash != cfg.hash() {
                return Err(CliError::Checkpoint(format!(
                    "{} was written with a different config (hash {})",
                    p.display(),
                    ck.config_hash
                )));
            }
            Trainer::resume(&ck, &tree)?
        }
        None => Trainer::new(cfg, &tree)?,
    };
    fs::create_dir_all(&paths.run_dir)?;
    let metrics_path = paths.run_dir.join("metrics.csv");
    let mut metrics = if resume.is_some() && metrics_path.exists() {
        truncate_metrics(&fs::read_to_string(&metrics_path)?, trainer.step)
    } else {
        format!("{METRICS_HEADER}\n")
    };
    if resume.is_none() {
        trainer.checkpoint().write(&paths.run_dir.join("checkpoint_init.json"))?;
    }
    let mut first = None;
    let mut last = None;
    while !trainer.done() {
        let rec = trainer.step()?;
        first.get_or_insert(rec.joint);
        last = Some(rec.joint);
        metrics.push_str(&rec.csv_rows());
        let every = trainer.cfg.checkpoint_every;
        if every > 0 && trainer.step % every == 0 && !trainer.done() {
            let name = format!("checkpoint_step{}.json", trainer.step);
            trainer.checkpoint().write(&paths.run_dir.join(name))?;
        }
    }
    fs::write(&metrics_path, metrics)?;
    let checkpoint = trainer.checkpoint();
    let checkpoint_path = paths.run_dir.join("checkpoint.json");
    checkpoint.write(&checkpoint_path)?;
    Ok(TrainOutcome {
        checkpoint,
        checkpoint_path,
        first_joint: first,
        last_joint: last,
    })
}

/// Parsed `metrics.csv` rows.
pub fn read_metrics(path: &Path) -> CliResult<Vec<(usize, String, f64)>> {
    let text = fs::read_to_string(path)?;
    let bad = |row: usize| CliError::Parse {
        path: path.display().to_string(),
        msg: format!("bad row {row}"),
    };
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(CliError::Parse {
            path: path.display().to_string(),
            msg: "unexpected header".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(bad(i + 1));
            }
            Ok((
                f[0].parse().map_err(|_| bad(i + 1))?,
                f[1].to_string(),
                f[2].parse().map_err(|_| bad(i + 1))?,
            ))
        })
        .collect()
}
