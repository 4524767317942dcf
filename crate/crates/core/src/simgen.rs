//! Synthetic personalized-annotation data with a known decomposition.
//!
//! Ground truth: `theta ~ U(0,5) + N(0, 0.5²)` elementwise; `G` is zero
//! except on feature×user blocks whose entries are `N(C_b, 2.5²)` with one
//! centroid `C_b ~ U(0,10)` per block; `P` is `U(0,10)` on selected user
//! columns and zero elsewhere. Each user draws `x ~ N(0, I)`, scores
//! `s = X(θ + G_i + P_i) + ε` and labels the top `n_top_pos` scores `+1`.
//!
//! Randomness comes from ChaCha8 keyed by the seed. Stream 0 draws the
//! ground truth and stream `i + 1` draws everything for user `i`, so a
//! user's data does not depend on how many users are generated.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, ModelParams, UserTask};
use crate::error::{Error, Result};

/// Inclusive 1-based index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRange {
    pub start: usize,
    pub end: usize,
}

impl IndexRange {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    /// Zero-based half-open bounds.
    pub fn zero_based(&self) -> std::ops::Range<usize> {
        self.start - 1..self.end
    }

    fn check(&self, limit: usize, what: &str) -> Result<()> {
        if self.start == 0 || self.start > self.end || self.end > limit {
            return Err(Error::InvalidConfig(format!(
                "{what} range {}..={} is outside 1..={limit}",
                self.start, self.end
            )));
        }
        Ok(())
    }

    /// Maps a range over `1..=from` proportionally onto `1..=to`.
    fn rescale(&self, from: usize, to: usize) -> Self {
        let start = (self.start - 1) * to / from + 1;
        let end = (self.end * to / from).max(start);
        Self { start, end }
    }
}

/// A co-cluster block of `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub features: IndexRange,
    pub users: IndexRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_users: usize,
    pub n_samples: usize,
    pub dim: usize,
    pub n_top_pos: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub block_spec: Vec<Block>,
    pub p_col_spec: Vec<IndexRange>,
    /// Share of each user's instances kept for training (and validation).
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.85
}

const PAPER_USERS: usize = 100;
const PAPER_DIM: usize = 80;

fn paper_blocks() -> Vec<Block> {
    [
        ((1, 20), (1, 20)),
        ((21, 40), (21, 40)),
        ((41, 50), (41, 60)),
        ((51, 70), (61, 80)),
        ((71, 80), (81, 100)),
    ]
    .into_iter()
    .map(|((fa, fb), (ua, ub))| Block {
        features: IndexRange::new(fa, fb),
        users: IndexRange::new(ua, ub),
    })
    .collect()
}

fn paper_p_columns() -> Vec<IndexRange> {
    vec![IndexRange::new(1, 5), IndexRange::new(10, 15), IndexRange::new(20, 25)]
}

impl SimConfig {
    /// 100 users, 5000 samples each, 80 features, top-100 positives.
    pub fn paper_scale(seed: u64) -> Self {
        Self {
            n_users: PAPER_USERS,
            n_samples: 5000,
            dim: PAPER_DIM,
            n_top_pos: 100,
            noise_sd: 0.01,
            seed,
            block_spec: paper_blocks(),
            p_col_spec: paper_p_columns(),
            train_fraction: default_train_fraction(),
        }
    }

    /// The reference block and column layout rescaled to `dim × n_users`.
    /// At 80 features and 100 users this is exactly the reference layout.
    pub fn scaled(
        n_users: usize,
        n_samples: usize,
        dim: usize,
        n_top_pos: usize,
        noise_sd: f64,
        seed: u64,
    ) -> Self {
        let block_spec = paper_blocks()
            .into_iter()
            .map(|b| Block {
                features: b.features.rescale(PAPER_DIM, dim.max(1)),
                users: b.users.rescale(PAPER_USERS, n_users.max(1)),
            })
            .collect();
        let p_col_spec = paper_p_columns()
            .into_iter()
            .map(|r| r.rescale(PAPER_USERS, n_users.max(1)))
            .collect();
        Self {
            n_users,
            n_samples,
            dim,
            n_top_pos,
            noise_sd,
            seed,
            block_spec,
            p_col_spec,
            train_fraction: default_train_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_users == 0 || self.dim == 0 || self.n_samples == 0 {
            return bad("n_users, n_samples and dim must be positive".into());
        }
        if self.n_top_pos == 0 || self.n_top_pos >= self.n_samples {
            return bad(format!(
                "n_top_pos must be in 1..{}, got {}",
                self.n_samples, self.n_top_pos
            ));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad(format!("noise_sd must be non-negative, got {}", self.noise_sd));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            ));
        }
        for b in &self.block_spec {
            b.features.check(self.dim, "block feature")?;
            b.users.check(self.n_users, "block user")?;
        }
        for r in &self.p_col_spec {
            r.check(self.n_users, "personalized column")?;
        }
        Ok(())
    }

    pub fn total_annotations(&self) -> usize {
        self.n_users * self.n_samples
    }

    pub fn user_ids(&self) -> Vec<String> {
        let width = self.n_users.to_string().len();
        (1..=self.n_users).map(|i| format!("u{i:0width$}")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SimData {
    pub train: Dataset,
    pub test: Dataset,
    pub truth: ModelParams,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws the ground-truth decomposition.
pub fn generate_truth(cfg: &SimConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0);
    let (d, u) = (cfg.dim, cfg.n_users);
    let unit5 = Uniform::new(0.0, 5.0).expect("valid bounds");
    let unit10 = Uniform::new(0.0, 10.0).expect("valid bounds");
    let jitter = Normal::new(0.0, 0.5).expect("valid sd");
    let theta = DVector::from_fn(d, |_, _| unit5.sample(&mut rng) + jitter.sample(&mut rng));

    let mut g = DMatrix::zeros(d, u);
    for b in &cfg.block_spec {
        let centroid: f64 = unit10.sample(&mut rng);
        let spread = Normal::new(centroid, 2.5).expect("valid sd");
        for col in b.users.zero_based() {
            for row in b.features.zero_based() {
                g[(row, col)] = spread.sample(&mut rng);
            }
        }
    }
    let mut p = DMatrix::zeros(d, u);
    for r in &cfg.p_col_spec {
        for col in r.zero_based() {
            for row in 0..d {
                p[(row, col)] = unit10.sample(&mut rng);
            }
        }
    }
    ModelParams::new(theta, g, p, cfg.user_ids())
}

fn user_rng(cfg: &SimConfig, index: usize) -> ChaCha8Rng {
    stream_rng(cfg.seed, index as u64 + 1)
}

fn draw_user(cfg: &SimConfig, truth: &ModelParams, index: usize, rng: &mut ChaCha8Rng) -> Result<UserTask> {
    let (n, d) = (cfg.n_samples, cfg.dim);
    let mut x = DMatrix::zeros(n, d);
    for r in 0..n {
        for c in 0..d {
            x[(r, c)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let w = truth.user_weights(index)?;
    let mut scores = &x * &w;
    for s in scores.iter_mut() {
        *s += cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
    }
    // Highest scores first; equal scores keep ascending instance order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut labels = vec![-1i8; n];
    for &i in &order[..cfg.n_top_pos] {
        labels[i] = 1;
    }
    UserTask::new(truth.user_order()[index].clone(), x, labels)
}

/// All of user `index`'s instances before the train/test split.
pub fn generate_user(cfg: &SimConfig, truth: &ModelParams, index: usize) -> Result<UserTask> {
    let mut rng = user_rng(cfg, index);
    draw_user(cfg, truth, index, &mut rng)
}

fn subset(u: &UserTask, rows: &[usize]) -> Result<UserTask> {
    let x = u.features().select_rows(rows);
    let labels = rows.iter().map(|&r| u.labels()[r]).collect();
    UserTask::new(u.id(), x, labels)
}

fn split_user(cfg: &SimConfig, u: &UserTask, rng: &mut ChaCha8Rng) -> Result<(UserTask, UserTask)> {
    let n = u.n_samples();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ((n as f64 * cfg.train_fraction).round() as usize).clamp(1, n - 1);
    let (mut train, mut test) = (idx[..n_train].to_vec(), idx[n_train..].to_vec());
    train.sort_unstable();
    test.sort_unstable();
    Ok((subset(u, &train)?, subset(u, &test)?))
}

/// Generates the train and test splits together with the ground truth.
pub fn generate(cfg: &SimConfig) -> Result<SimData> {
    use rayon::prelude::*;

    let truth = generate_truth(cfg)?;
    let pairs: Vec<(UserTask, UserTask)> = (0..cfg.n_users)
        .into_par_iter()
        .map(|i| {
            let mut rng = user_rng(cfg, i);
            let full = draw_user(cfg, &truth, i, &mut rng)?;
            split_user(cfg, &full, &mut rng)
        })
        .collect::<Result<_>>()?;
    let (train, test): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(SimData {
        train: Dataset::new(train)?,
        test: Dataset::new(test)?,
        truth,
    })
}

/// Pearson correlation of two equally long sequences.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatEntry {
    pub feature: usize,
    pub user: String,
    pub w_true: f64,
    pub w_learned: f64,
    pub abs_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockMean {
    pub block: usize,
    pub true_mean: f64,
    pub learned_mean: f64,
}

/// Entrywise comparison of true and learned user weights.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub entries: Vec<HeatEntry>,
    pub block_means: Vec<BlockMean>,
    pub max_abs_err: f64,
    /// Pearson correlation of `vec W_true` and `vec W_learned`.
    pub correlation: f64,
}

impl StructureReport {
    pub fn write_heat_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_blocks_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for b in &self.block_means {
            w.serialize(b)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn structure_report(
    truth: &ModelParams,
    learned: &ModelParams,
    blocks: &[Block],
) -> Result<StructureReport> {
    if truth.dim() != learned.dim() || truth.user_order() != learned.user_order() {
        return Err(Error::ShapeMismatch(format!(
            "truth is {}×{} and learned is {}×{} (or user orders differ)",
            truth.dim(),
            truth.n_users(),
            learned.dim(),
            learned.n_users()
        )));
    }
    let wt = truth.weights_matrix();
    let wl = learned.weights_matrix();
    let mut entries = Vec::with_capacity(wt.len());
    let mut max_abs_err: f64 = 0.0;
    for (j, id) in truth.user_order().iter().enumerate() {
        for f in 0..truth.dim() {
            let err = (wt[(f, j)] - wl[(f, j)]).abs();
            max_abs_err = max_abs_err.max(err);
            entries.push(HeatEntry {
                feature: f + 1,
                user: id.clone(),
                w_true: wt[(f, j)],
                w_learned: wl[(f, j)],
                abs_err: err,
            });
        }
    }
    let mut block_means = Vec::with_capacity(blocks.len());
    for (k, b) in blocks.iter().enumerate() {
        b.features.check(truth.dim(), "block feature")?;
        b.users.check(truth.n_users(), "block user")?;
        let (mut st, mut sl, mut count) = (0.0, 0.0, 0.0);
        for j in b.users.zero_based() {
            for f in b.features.zero_based() {
                st += wt[(f, j)];
                sl += wl[(f, j)];
                count += 1.0;
            }
        }
        block_means.push(BlockMean {
            block: k + 1,
            true_mean: st / count,
            learned_mean: sl / count,
        });
    }
    Ok(StructureReport {
        entries,
        block_means,
        max_abs_err,
        correlation: pearson(wt.as_slice(), wl.as_slice()),
    })
}
