use serde::Serialize;

use crate::error::{Error, Result};

/// `K × K` counts, rows = truth, columns = prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Confusion {
    k: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("confusion matrix must be square".into()));
        }
        Ok(Self {
            k,
            counts: rows.concat(),
        })
    }

    /// Zero-based class indices.
    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.k + pred] += 1;
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.k..(i + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, j)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub confusion: Confusion,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// Recall per class; `None` for classes absent from the truth rows.
    pub per_class: Vec<Option<f64>>,
}

/// OA = trace / N; AA = mean recall over classes with at least one true
/// sample; κ = (p_o − p_e) / (1 − p_e), evaluated in integers as
/// `(N·trace − Σ r_i c_i) / (N² − Σ r_i c_i)`.
pub fn compute_metrics(conf: &Confusion) -> Result<Metrics> {
    let n = conf.total();
    if n == 0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let trace = conf.trace();
    let per_class: Vec<Option<f64>> = (0..conf.classes())
        .map(|i| {
            let r = conf.row_sum(i);
            (r > 0).then(|| conf.get(i, i) as f64 / r as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let aa = present.iter().sum::<f64>() / present.len() as f64;

    let n2 = n as u128 * n as u128;
    let chance: u128 = (0..conf.classes())
        .map(|i| conf.row_sum(i) as u128 * conf.col_sum(i) as u128)
        .sum();
    let num = n as u128 * trace as u128;
    let kappa = if n2 == chance {
        // p_e = 1 only when every sample sits in one diagonal cell.
        1.0
    } else {
        (num as f64 - chance as f64) / (n2 - chance) as f64
    };
    Ok(Metrics {
        confusion: conf.clone(),
        oa: trace as f64 / n as f64,
        aa,
        kappa,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_class_oracle() {
        let c = Confusion::from_rows(&[vec![40, 10], vec![20, 30]]).unwrap();
        let m = compute_metrics(&c).unwrap();
        assert_eq!(m.oa, 0.7);
        assert_eq!(m.aa, 0.7);
        assert_eq!(m.kappa, 0.4);
    }

    #[test]
    fn diagonal_is_perfect() {
        for rows in [vec![vec![5, 0], vec![0, 7]], vec![vec![3]], vec![vec![4, 0, 0], vec![0, 0, 0], vec![0, 0, 9]]] {
            let m = compute_metrics(&Confusion::from_rows(&rows).unwrap()).unwrap();
            assert_eq!((m.oa, m.aa, m.kappa), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn never_predicted_class() {
        let c = Confusion::from_rows(&[vec![10, 0], vec![5, 0]]).unwrap();
        let m = compute_metrics(&c).unwrap();
        assert_eq!(m.per_class, vec![Some(1.0), Some(0.0)]);
        assert_eq!(m.aa, 0.5);
        assert_eq!(m.kappa, 0.0);
    }

    #[test]
    fn outer_product_of_marginals_has_zero_kappa() {
        let r = [2u64, 3, 5];
        let c = [4u64, 1, 5];
        let rows: Vec<Vec<u64>> = r.iter().map(|&ri| c.iter().map(|&cj| ri * cj).collect()).collect();
        let m = compute_metrics(&Confusion::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(m.kappa, 0.0);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(compute_metrics(&Confusion::new(3)), Err(Error::Data(_))));
    }
}
