//! Gromov delta-hyperbolicity of finite metric samples.
//!
//! With Gromov products `G[i][j] = (d[b][i] + d[b][j] - d[i][j]) / 2` taken at
//! a basepoint `b`, the basepointed delta is
//! `max_ij ((G ⊗ G)[i][j] - G[i][j])` where `⊗` is the (max, min) matrix
//! product. The relative score `2 delta / diam` lies in `[0, 1]`.
//!
//! Delta depends on the basepoint by at most a factor of two; batched reports
//! always use index 0 of each shuffled batch and record it.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{contract, Error, Result};
use crate::lorentz::{check_all, distance_s, Lifted, LorentzPoint};

pub const DEFAULT_BATCH_SIZE: usize = 128;

/// Largest sample accepted by [`gromov_delta_bruteforce`].
pub const BRUTEFORCE_MAX_N: usize = 256;

/// Symmetric, zero-diagonal matrix of finite nonnegative distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Validates and wraps a row-major `n x n` matrix.
    pub fn new(n: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n * n {
            return Err(contract(
                "DistanceMatrix",
                format!("expected {} entries, got {}", n * n, d.len()),
            ));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(contract("DistanceMatrix", format!("d[{i}][{i}] != 0")));
            }
            for j in 0..n {
                let v = d[i * n + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(contract(
                        "DistanceMatrix",
                        format!("d[{i}][{j}] = {v} is not a finite nonnegative distance"),
                    ));
                }
                if v != d[j * n + i] {
                    return Err(contract("DistanceMatrix", format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, d })
    }

    /// Builds the matrix from the upper triangle of `f`, mirrored.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (i + 1..n).map(|j| f(i, j)).collect())
            .collect();
        let mut d = vec![0.0; n * n];
        for (i, row) in rows.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                let j = i + 1 + off;
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self::new(n, d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }

    /// Same matrix with every entry multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.n, self.d.iter().map(|v| v * s).collect())
    }

    pub fn diameter(&self) -> f64 {
        self.d.iter().copied().fold(0.0, f64::max)
    }
}

pub fn distance_matrix_geodesic(points: &[LorentzPoint]) -> Result<DistanceMatrix> {
    if points.len() < 2 {
        return Err(contract(
            "distance_matrix_geodesic",
            format!("need at least 2 points, got {}", points.len()),
        ));
    }
    check_all("distance_matrix_geodesic", points)?;
    let c = points[0].curvature().c();
    let lifted: Vec<Lifted<f64>> = points.iter().map(LorentzPoint::lifted).collect();
    DistanceMatrix::from_fn(points.len(), |i, j| distance_s(c, &lifted[i], &lifted[j]))
}

/// Euclidean distances, for flat baselines.
pub fn distance_matrix_euclidean(points: &[Vec<f64>]) -> Result<DistanceMatrix> {
    if points.len() < 2 {
        return Err(contract("distance_matrix_euclidean", "need at least 2 points"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(contract("distance_matrix_euclidean", "ragged point dimensions"));
    }
    DistanceMatrix::from_fn(points.len(), |i, j| {
        points[i]
            .iter()
            .zip(&points[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    })
}

fn check_base(op: &'static str, d: &DistanceMatrix, base: usize) -> Result<()> {
    if base >= d.n {
        return Err(contract(op, format!("basepoint {base} out of range for n = {}", d.n)));
    }
    Ok(())
}

/// Row-major Gromov products at `base`.
pub fn gromov_products(d: &DistanceMatrix, base: usize) -> Result<Vec<f64>> {
    check_base("gromov_products", d, base)?;
    let n = d.n;
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        let dbi = d.get(base, i);
        for j in 0..n {
            g[i * n + j] = 0.5 * (dbi + d.get(base, j) - d.get(i, j));
        }
    }
    Ok(g)
}

/// Basepointed delta via the (max, min) product.
///
/// `G` is symmetric, so column `j` of `G` is row `j`; every entry of the
/// product is a reduction over two contiguous rows. Rows are processed in
/// parallel; `max` and `min` are exact, so the result does not depend on
/// scheduling.
pub fn gromov_delta(d: &DistanceMatrix, base: usize) -> Result<f64> {
    let n = d.n;
    let g = gromov_products(d, base)?;
    let delta = (0..n)
        .into_par_iter()
        .map(|i| {
            let gi = &g[i * n..(i + 1) * n];
            let mut best = 0.0f64;
            for j in 0..n {
                let gj = &g[j * n..(j + 1) * n];
                let mm = gi
                    .iter()
                    .zip(gj)
                    .map(|(a, b)| a.min(*b))
                    .fold(f64::NEG_INFINITY, f64::max);
                best = best.max(mm - gi[j]);
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(delta)
}

/// Explicit triple loop over `(i, j, k)`; reference for [`gromov_delta`].
pub fn gromov_delta_bruteforce(d: &DistanceMatrix, base: usize) -> Result<f64> {
    if d.n > BRUTEFORCE_MAX_N {
        return Err(contract(
            "gromov_delta_bruteforce",
            format!("n = {} exceeds {BRUTEFORCE_MAX_N}", d.n),
        ));
    }
    let n = d.n;
    let g = gromov_products(d, base)?;
    let mut delta = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let mut mm = f64::NEG_INFINITY;
            for k in 0..n {
                let v = if g[i * n + k] < g[k * n + j] {
                    g[i * n + k]
                } else {
                    g[k * n + j]
                };
                if v > mm {
                    mm = v;
                }
            }
            if mm - g[i * n + j] > delta {
                delta = mm - g[i * n + j];
            }
        }
    }
    Ok(delta)
}

/// `2 delta / diam`.
pub fn delta_rel(d: &DistanceMatrix, base: usize) -> Result<f64> {
    Ok(batch_measure(d, base)?.delta_rel)
}

/// Delta, diameter and relative delta of one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchHyperbolicity {
    pub delta: f64,
    pub diam: f64,
    pub delta_rel: f64,
}

pub fn batch_measure(d: &DistanceMatrix, base: usize) -> Result<BatchHyperbolicity> {
    let diam = d.diameter();
    if !(diam > 0.0) {
        return Err(contract(
            "delta_rel",
            "zero diameter: all sampled points coincide",
        ));
    }
    let delta = gromov_delta(d, base)?;
    let delta_rel = 2.0 * delta / diam;
    debug_assert!((0.0..=1.0 + 1e-12).contains(&delta_rel), "delta_rel = {delta_rel}");
    Ok(BatchHyperbolicity {
        delta,
        diam,
        delta_rel,
    })
}

/// Per-batch measurements and their summary.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperbolicityReport {
    pub batches: Vec<BatchHyperbolicity>,
    pub mean_delta_rel: f64,
    /// Population standard deviation (no Bessel correction).
    pub std_delta_rel: f64,
    pub batch_size: usize,
    pub num_batches: usize,
    pub basepoint: usize,
    pub seed: u64,
}

impl HyperbolicityReport {
    fn from_batches(batches: Vec<BatchHyperbolicity>, batch_size: usize, seed: u64) -> Self {
        let k = batches.len() as f64;
        let mean = batches.iter().map(|b| b.delta_rel).sum::<f64>() / k;
        let var = batches
            .iter()
            .map(|b| (b.delta_rel - mean).powi(2))
            .sum::<f64>()
            / k;
        Self {
            num_batches: batches.len(),
            batches,
            mean_delta_rel: mean,
            std_delta_rel: var.sqrt(),
            batch_size,
            basepoint: 0,
            seed,
        }
    }

    /// Mean delta over batches.
    pub fn mean_delta(&self) -> f64 {
        self.batches.iter().map(|b| b.delta).sum::<f64>() / self.batches.len() as f64
    }

    /// Mean diameter over batches.
    pub fn mean_diam(&self) -> f64 {
        self.batches.iter().map(|b| b.diam).sum::<f64>() / self.batches.len() as f64
    }

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mean_delta_rel={}", self.mean_delta_rel);
        let _ = writeln!(s, "std_delta_rel={}", self.std_delta_rel);
        let _ = writeln!(s, "std_kind=population");
        let _ = writeln!(s, "mean_delta={}", self.mean_delta());
        let _ = writeln!(s, "mean_diam={}", self.mean_diam());
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "num_batches={}", self.num_batches);
        let _ = writeln!(s, "basepoint={}", self.basepoint);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    /// CSV with header `batch_index,delta,diam,delta_rel`.
    pub fn batches_csv(&self) -> String {
        let mut s = String::from("batch_index,delta,diam,delta_rel\n");
        for (i, b) in self.batches.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{},{}", b.delta, b.diam, b.delta_rel);
        }
        s
    }

    /// Inverse of [`to_kv`](Self::to_kv) together with
    /// [`batches_csv`](Self::batches_csv).
    pub fn parse(kv: &str, csv: &str) -> Result<Self> {
        let fmt = |msg: String| Error::Format { offset: 0, msg };
        let get = |key: &str| -> Result<&str> {
            kv.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| fmt(format!("missing key `{key}`")))
        };
        let num = |key: &str| -> Result<f64> {
            get(key)?
                .parse()
                .map_err(|_| fmt(format!("bad value for `{key}`")))
        };
        let int = |key: &str| -> Result<u64> {
            get(key)?
                .parse()
                .map_err(|_| fmt(format!("bad value for `{key}`")))
        };
        let mut lines = csv.lines();
        if lines.next() != Some("batch_index,delta,diam,delta_rel") {
            return Err(fmt("unexpected batch CSV header".into()));
        }
        let mut batches = Vec::new();
        for (row, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let p = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| fmt(format!("bad batch row {row}")))
            };
            batches.push(BatchHyperbolicity {
                delta: p(1)?,
                diam: p(2)?,
                delta_rel: p(3)?,
            });
        }
        Ok(Self {
            batches,
            mean_delta_rel: num("mean_delta_rel")?,
            std_delta_rel: num("std_delta_rel")?,
            batch_size: int("batch_size")? as usize,
            num_batches: int("num_batches")? as usize,
            basepoint: int("basepoint")? as usize,
            seed: int("seed")?,
        })
    }
}

/// Shuffles `0..n` with `seed` and splits it into full batches.
pub fn shuffled_batches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.chunks_exact(batch_size).map(<[usize]>::to_vec).collect()
}

/// Batched relative hyperbolicity over any distance backend.
pub fn batched_hyperbolicity_with<F>(
    n: usize,
    batch_size: usize,
    seed: u64,
    matrix: F,
) -> Result<HyperbolicityReport>
where
    F: Fn(&[usize]) -> Result<DistanceMatrix> + Sync,
{
    if batch_size < 4 {
        return Err(contract("batched_hyperbolicity", "batch_size must be at least 4"));
    }
    if n < batch_size {
        return Err(contract(
            "batched_hyperbolicity",
            format!("{n} points cannot fill one batch of {batch_size}"),
        ));
    }
    let batches = shuffled_batches(n, batch_size, seed);
    let measured: Vec<BatchHyperbolicity> = batches
        .par_iter()
        .map(|b| batch_measure(&matrix(b)?, 0))
        .collect::<Result<_>>()?;
    Ok(HyperbolicityReport::from_batches(measured, batch_size, seed))
}

/// Shuffled fixed-size batches of geodesic distances, basepoint 0 per batch.
pub fn batched_hyperbolicity(
    points: &[LorentzPoint],
    batch_size: usize,
    seed: u64,
) -> Result<HyperbolicityReport> {
    if !points.is_empty() {
        check_all("batched_hyperbolicity", points)?;
    }
    batched_hyperbolicity_with(points.len(), batch_size, seed, |idx| {
        let sel: Vec<LorentzPoint> = idx.iter().map(|&i| points[i].clone()).collect();
        distance_matrix_geodesic(&sel)
    })
}

/// Euclidean counterpart of [`batched_hyperbolicity`].
pub fn batched_hyperbolicity_euclidean(
    points: &[Vec<f64>],
    batch_size: usize,
    seed: u64,
) -> Result<HyperbolicityReport> {
    batched_hyperbolicity_with(points.len(), batch_size, seed, |idx| {
        let sel: Vec<Vec<f64>> = idx.iter().map(|&i| points[i].clone()).collect();
        distance_matrix_euclidean(&sel)
    })
}
