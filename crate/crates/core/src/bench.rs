//! Timing of the factored loss+gradient against the pairwise loop.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::aucgraph;
use crate::dataio::format_f64;
use crate::domain::UserTask;
use crate::error::Result;

/// Minimum wall time per timed sample; short calls are repeated until this
/// much time has passed and averaged.
const MIN_SAMPLE: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    /// Median seconds per fast loss+gradient call.
    pub t_fast: f64,
    /// Median seconds per pairwise call; `None` above the size cap.
    pub t_naive: Option<f64>,
}

impl BenchRow {
    pub fn ratio(&self) -> Option<f64> {
        self.t_naive.map(|t| t / self.t_fast)
    }
}

/// A user with `n / 2` positives (rounded up) and Gaussian features.
pub fn balanced_user(n: usize, dim: usize, seed: u64) -> Result<UserTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let labels = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
    UserTask::new(format!("bench{n}"), x, labels)
}

fn seconds_per_call<F: FnMut()>(mut f: F) -> f64 {
    let start = Instant::now();
    let mut calls = 0u32;
    loop {
        f();
        calls += 1;
        let elapsed = start.elapsed();
        if elapsed >= MIN_SAMPLE {
            return elapsed.as_secs_f64() / f64::from(calls);
        }
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn time_fast(u: &UserTask, w: &DVector<f64>, repeats: usize) -> Result<f64> {
    let cache = aucgraph::build_cache(u)?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        samples.push(seconds_per_call(|| {
            std::hint::black_box(aucgraph::loss_grad_user(u, &cache, w).expect("valid inputs"));
        }));
    }
    Ok(median(samples))
}

pub fn time_naive(u: &UserTask, w: &DVector<f64>, repeats: usize) -> Result<f64> {
    aucgraph::loss_grad_user_naive(u, w)?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        samples.push(seconds_per_call(|| {
            std::hint::black_box(aucgraph::loss_grad_user_naive(u, w).expect("valid inputs"));
        }));
    }
    Ok(median(samples))
}

/// Times both paths for each size. Sizes above `naive_cap` skip the
/// pairwise path.
pub fn bench_eval(
    sizes: &[usize],
    dim: usize,
    repeats: usize,
    naive_cap: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.1);
    sizes
        .iter()
        .map(|&n| {
            let u = balanced_user(n, dim, seed ^ n as u64)?;
            let t_fast = time_fast(&u, &w, repeats)?;
            let t_naive = if n <= naive_cap {
                Some(time_naive(&u, &w, repeats)?)
            } else {
                None
            };
            Ok(BenchRow { n, t_fast, t_naive })
        })
        .collect()
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut out: W) -> Result<()> {
    writeln!(out, "n,t_fast,t_naive,ratio")?;
    let cell = |v: Option<f64>| v.map_or_else(|| "nan".to_owned(), format_f64);
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.n,
            format_f64(r.t_fast),
            cell(r.t_naive),
            cell(r.ratio())
        )?;
    }
    out.flush()?;
    Ok(())
}
