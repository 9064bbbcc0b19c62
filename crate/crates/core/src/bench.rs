//! Wall-clock timing of the recurrent and kernel evaluation paths.

use std::hint::black_box;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::rng::{streams, Rng};
use crate::selfcheck::relative_max_error;
use crate::ssm::{PathRegistry, SequencePath, SsmDiscrete};

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub state: usize,
    /// Timed samples per path and length; the minimum is reported.
    pub repeats: usize,
    /// Each sample runs the path until at least this much time has passed.
    pub min_sample: Duration,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: vec![512, 1024, 2048, 4096],
            state: 8,
            repeats: 7,
            min_sample: Duration::from_millis(20),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub len: usize,
    /// Seconds per call.
    pub scan_secs: f64,
    pub kernel_secs: f64,
    /// Relative max disagreement between the two outputs.
    pub agreement: f64,
}

pub const AGREEMENT_TOL: f64 = 1e-6;

fn time_path(path: &dyn SequencePath, d: &SsmDiscrete, x: &[f64], cfg: &BenchConfig) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..cfg.repeats.max(1) {
        let start = Instant::now();
        let mut calls = 0u32;
        while calls == 0 || start.elapsed() < cfg.min_sample {
            black_box(path.eval(black_box(d), black_box(x))?);
            calls += 1;
        }
        best = best.min(start.elapsed().as_secs_f64() / calls as f64);
    }
    Ok(best)
}

/// Diagonally dominant stable system used for every length.
fn bench_system(m: usize, rng: &mut Rng) -> SsmDiscrete {
    let mut a: Vec<f64> = (0..m * m).map(|_| 0.02 * rng.normal()).collect();
    for i in 0..m {
        a[i * m + i] = 0.5 + 0.4 * rng.uniform();
    }
    let norm = a.chunks(m).map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    if norm >= 0.99 {
        a.iter_mut().for_each(|v| *v *= 0.95 / norm);
    }
    let b = (0..m).map(|_| rng.normal()).collect();
    let c = (0..m).map(|_| rng.normal()).collect();
    SsmDiscrete::new(a, b, c).expect("consistent extents")
}

/// Times the `recurrent` and `kernel` paths at each length. Both outputs are
/// compared before any timing starts.
pub fn run_bench(paths: &PathRegistry, cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.lengths.is_empty() || cfg.lengths.contains(&0) {
        return Err(Error::Usage("bench lengths must be a nonempty list of positive integers".into()));
    }
    if cfg.state == 0 {
        return Err(Error::Usage("bench state dimension must be positive".into()));
    }
    let scan = paths.get("recurrent")?;
    let kern = paths.get("kernel")?;
    let mut rng = Rng::new(cfg.seed, streams::CHECKS);
    let d = bench_system(cfg.state, &mut rng);
    let mut rows = Vec::with_capacity(cfg.lengths.len());
    for &len in &cfg.lengths {
        let x: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
        let agreement = relative_max_error(&scan.eval(&d, &x)?, &kern.eval(&d, &x)?);
        if agreement.is_nan() || agreement > AGREEMENT_TOL {
            return Err(Error::numeric(
                "bench",
                format!("recurrent and kernel outputs disagree at T={len}: relative error {agreement:e}"),
            ));
        }
        rows.push(BenchRow {
            len,
            scan_secs: time_path(scan, &d, &x, cfg)?,
            kernel_secs: time_path(kern, &d, &x, cfg)?,
            agreement,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("length,scan_seconds,kernel_seconds,relative_error\n");
    for r in rows {
        s.push_str(&format!("{},{:e},{:e},{:e}\n", r.len, r.scan_secs, r.kernel_secs, r.agreement));
    }
    s
}

/// `(scan, kernel)` time ratios between lengths `hi` and `lo`.
pub fn growth(rows: &[BenchRow], lo: usize, hi: usize) -> Option<(f64, f64)> {
    let a = rows.iter().find(|r| r.len == lo)?;
    let b = rows.iter().find(|r| r.len == hi)?;
    Some((b.scan_secs / a.scan_secs, b.kernel_secs / a.kernel_secs))
}
