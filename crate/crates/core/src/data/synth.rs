use serde::{Deserialize, Serialize};

use super::HsiCube;
use crate::error::{Error, Result};
use crate::rng::{streams, Rng};

/// Parameters of a synthetic labeled cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            bands: 16,
            classes: 3,
            noise: 0.05,
            seed: 0,
        }
    }
}

pub const MAX_SYNTH_CLASSES: usize = 16;

/// Gaussian bumps of width `bands / (2K)` over a 0.2 floor, centred at
/// `(k + ½)·bands / K`.
pub fn prototypes(bands: usize, classes: usize) -> Vec<Vec<f64>> {
    let width = (bands as f64 / (2.0 * classes as f64)).max(1.0);
    (0..classes)
        .map(|k| {
            let c = (k as f64 + 0.5) * bands as f64 / classes as f64;
            (0..bands)
                .map(|b| 0.2 + (-((b as f64 + 0.5 - c).powi(2)) / (2.0 * width * width)).exp())
                .collect()
        })
        .collect()
}

/// Smallest Euclidean distance between two prototypes.
pub fn min_separation(protos: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..protos.len() {
        for j in i + 1..protos.len() {
            let d: f64 = protos[i].iter().zip(&protos[j]).map(|(a, b)| (a - b).powi(2)).sum();
            best = best.min(d.sqrt());
        }
    }
    best
}

/// Cube whose classes occupy Voronoi regions of `2K` random seeds (seed `i`
/// belongs to class `i mod K + 1`). Every pixel is labeled; each is its class
/// prototype plus N(0, noise²) per band. Seeds are redrawn until every class
/// owns at least 3 pixels.
pub fn synthesize_dataset(spec: &SynthSpec) -> Result<HsiCube> {
    let &SynthSpec {
        height: h,
        width: w,
        bands: b,
        classes: k,
        noise,
        seed,
    } = spec;
    if k == 0 || k > MAX_SYNTH_CLASSES {
        return Err(Error::Config(format!("classes must be in 1..={MAX_SYNTH_CLASSES}, got {k}")));
    }
    if h == 0 || w == 0 || b == 0 {
        return Err(Error::Config(format!("extents {h}×{w}×{b} must be positive")));
    }
    if h * w < 3 * k {
        return Err(Error::Config(format!("{h}×{w} grid cannot hold 3 pixels for each of {k} classes")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise must be finite and ≥ 0, got {noise}")));
    }
    let mut rng = Rng::new(seed, streams::SYNTH);
    let n_seeds = 2 * k;
    let mut labels = vec![0u16; h * w];
    let mut ok = false;
    for _ in 0..1000 {
        let seeds: Vec<(f64, f64)> = (0..n_seeds)
            .map(|_| (rng.uniform() * h as f64, rng.uniform() * w as f64))
            .collect();
        let mut hist = vec![0usize; k];
        for y in 0..h {
            for x in 0..w {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                let mut best = (f64::INFINITY, 0);
                for (i, &(sy, sx)) in seeds.iter().enumerate() {
                    let d = (py - sy).powi(2) + (px - sx).powi(2);
                    if d < best.0 {
                        best = (d, i);
                    }
                }
                let class = best.1 % k;
                labels[y * w + x] = class as u16 + 1;
                hist[class] += 1;
            }
        }
        if hist.iter().all(|&c| c >= 3) {
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(Error::Data(format!(
            "could not place {k} classes with at least 3 pixels each on a {h}×{w} grid"
        )));
    }
    let protos = prototypes(b, k);
    let mut data = Vec::with_capacity(h * w * b);
    for &l in &labels {
        for &v in &protos[l as usize - 1] {
            data.push((v + noise * rng.normal()) as f32);
        }
    }
    let names = (1..=k).map(|i| format!("class {i}")).collect();
    HsiCube::new(h, w, b, data, labels, names)
}

/// Accuracy of assigning every labeled pixel to the nearest class mean
/// (means estimated from the same pixels).
pub fn nearest_centroid_accuracy(cube: &HsiCube) -> f64 {
    let (k, b) = (cube.classes(), cube.bands());
    let mut sums = vec![vec![0.0f64; b]; k];
    let mut counts = vec![0usize; k];
    for y in 0..cube.height() {
        for x in 0..cube.width() {
            let l = cube.label(y, x) as usize;
            if l == 0 {
                continue;
            }
            counts[l - 1] += 1;
            for (s, &v) in sums[l - 1].iter_mut().zip(cube.pixel(y, x)) {
                *s += v as f64;
            }
        }
    }
    let means: Vec<Option<Vec<f64>>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
        .collect();
    let (mut right, mut total) = (0usize, 0usize);
    for y in 0..cube.height() {
        for x in 0..cube.width() {
            let l = cube.label(y, x) as usize;
            if l == 0 {
                continue;
            }
            let p = cube.pixel(y, x);
            let pred = means
                .iter()
                .enumerate()
                .filter_map(|(i, m)| {
                    m.as_ref()
                        .map(|m| (i, m.iter().zip(p).map(|(a, &v)| (a - v as f64).powi(2)).sum::<f64>()))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            right += usize::from(pred + 1 == l);
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        right as f64 / total as f64
    }
}
