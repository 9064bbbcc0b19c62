use serde::{Deserialize, Serialize};

use super::HsiCube;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    /// Border pixels repeated outward.
    #[default]
    Replicate,
    Zero,
}

/// Grows the cube by `m` pixels on every side. Labels of new pixels are 0.
pub fn edge_pad(cube: &HsiCube, m: usize, mode: PadMode) -> HsiCube {
    if m == 0 {
        return cube.clone();
    }
    let (h, w, b) = (cube.height(), cube.width(), cube.bands());
    let (hp, wp) = (h + 2 * m, w + 2 * m);
    let mut data = Vec::with_capacity(hp * wp * b);
    let mut labels = vec![0u16; hp * wp];
    for y in 0..hp {
        for x in 0..wp {
            let inside = (m..m + h).contains(&y) && (m..m + w).contains(&x);
            if inside {
                labels[y * wp + x] = cube.label(y - m, x - m);
            }
            match (inside, mode) {
                (false, PadMode::Zero) => data.extend(std::iter::repeat_n(0.0f32, b)),
                _ => {
                    let sy = y.saturating_sub(m).min(h - 1);
                    let sx = x.saturating_sub(m).min(w - 1);
                    data.extend_from_slice(cube.pixel(sy, sx));
                }
            }
        }
    }
    HsiCube::new(hp, wp, b, data, labels, cube.class_names().to_vec()).expect("padding preserves invariants")
}

/// Blocks of side `block` centred on every labeled pixel of a padded cube.
/// Blocks are cut on demand.
#[derive(Clone, Debug)]
pub struct PatchSet {
    cube: HsiCube,
    block: usize,
    /// Centre coordinates in the padded cube.
    centers: Vec<(usize, usize)>,
    labels: Vec<u16>,
}

fn check_block(block: usize) -> Result<()> {
    if block == 0 || block.is_multiple_of(2) {
        return Err(Error::Config(format!("block side must be odd, got {block}")));
    }
    Ok(())
}

/// One patch per labeled pixel of `padded`, in raster order. `padded` must
/// already carry a margin of `(block − 1) / 2`, i.e. no labeled pixel may sit
/// closer than that to the border.
pub fn extract_patches(padded: &HsiCube, block: usize) -> Result<PatchSet> {
    check_block(block)?;
    let m = block / 2;
    let (h, w) = (padded.height(), padded.width());
    let mut centers = Vec::new();
    let mut labels = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = padded.label(y, x);
            if l == 0 {
                continue;
            }
            if y < m || x < m || y + m >= h || x + m >= w {
                return Err(Error::Data(format!(
                    "labeled pixel ({y}, {x}) is within {m} of the border; pad the cube first"
                )));
            }
            centers.push((y, x));
            labels.push(l);
        }
    }
    Ok(PatchSet {
        cube: padded.clone(),
        block,
        centers,
        labels,
    })
}

impl PatchSet {
    /// Pads `cube` by `(block − 1) / 2` and extracts every labeled pixel.
    pub fn from_cube(cube: &HsiCube, block: usize, mode: PadMode) -> Result<Self> {
        check_block(block)?;
        extract_patches(&edge_pad(cube, block / 2, mode), block)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn bands(&self) -> usize {
        self.cube.bands()
    }

    pub fn classes(&self) -> usize {
        self.cube.classes()
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// Centre of patch `i` in the coordinates of the unpadded cube.
    pub fn origin(&self, i: usize) -> (usize, usize) {
        let m = self.block / 2;
        let (y, x) = self.centers[i];
        (y - m, x - m)
    }

    /// Centre of patch `i` in the padded cube.
    pub fn center(&self, i: usize) -> (usize, usize) {
        self.centers[i]
    }

    fn write_patch(&self, i: usize, out: &mut Vec<f64>) {
        let m = self.block / 2;
        let (cy, cx) = self.centers[i];
        for y in cy - m..=cy + m {
            for x in cx - m..=cx + m {
                out.extend(self.cube.pixel(y, x).iter().map(|&v| v as f64));
            }
        }
    }

    /// Patch `i` as `[M, M, L]`.
    pub fn patch(&self, i: usize) -> Tensor {
        let mut d = Vec::with_capacity(self.block * self.block * self.bands());
        self.write_patch(i, &mut d);
        Tensor::new(&[self.block, self.block, self.bands()], d).unwrap()
    }

    /// Patches `idx` stacked as `[n, M, M, L]`.
    pub fn batch(&self, idx: &[usize]) -> Tensor {
        let per = self.block * self.block * self.bands();
        let mut d = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            self.write_patch(i, &mut d);
        }
        Tensor::new(&[idx.len(), self.block, self.block, self.bands()], d).unwrap()
    }

    /// Zero-based class targets for `idx`.
    pub fn targets(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i] as usize - 1).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(h: usize, w: usize, b: usize, labels: Vec<u16>) -> HsiCube {
        let data = (0..h * w * b).map(|i| i as f32).collect();
        HsiCube::new(h, w, b, data, labels, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn indian_pines_padding_arithmetic() {
        let c = HsiCube::new(145, 145, 1, vec![0.0; 145 * 145], vec![0; 145 * 145], vec![]).unwrap();
        let p = edge_pad(&c, 5, PadMode::Replicate);
        assert_eq!((p.height(), p.width(), p.bands()), (155, 155, 1));
    }

    #[test]
    fn replicate_corners_and_identity() {
        let c = cube(3, 4, 2, vec![1; 12]);
        assert_eq!(edge_pad(&c, 0, PadMode::Replicate), c);
        let p = edge_pad(&c, 2, PadMode::Replicate);
        assert_eq!(p.pixel(0, 0), c.pixel(0, 0));
        assert_eq!(p.pixel(6, 7), c.pixel(2, 3));
        assert_eq!(p.pixel(0, 7), c.pixel(0, 3));
        assert_eq!(p.label(0, 0), 0);
        assert_eq!(p.label(2, 2), 1);
        let z = edge_pad(&c, 1, PadMode::Zero);
        assert!(z.pixel(0, 0).iter().all(|&v| v == 0.0));
        assert_eq!(z.pixel(1, 1), c.pixel(0, 0));
    }

    #[test]
    fn one_patch_per_labeled_pixel() {
        let c = cube(4, 4, 3, vec![1, 2, 1, 2, 2, 1, 2, 1, 1, 1, 2, 2, 2, 2, 1, 1]);
        let ps = PatchSet::from_cube(&c, 3, PadMode::Replicate).unwrap();
        assert_eq!(ps.len(), 16);
        for i in 0..ps.len() {
            let (y, x) = ps.origin(i);
            assert_eq!(ps.labels()[i], c.label(y, x));
            let p = ps.patch(i);
            assert_eq!(p.shape(), &[3, 3, 3]);
            let centre: Vec<f32> = (0..3).map(|b| p.at(&[1, 1, b]) as f32).collect();
            assert_eq!(centre, c.pixel(y, x));
        }
    }

    #[test]
    fn even_block_and_unpadded_border() {
        let c = cube(4, 4, 1, vec![1; 16]);
        assert!(matches!(PatchSet::from_cube(&c, 4, PadMode::Replicate), Err(Error::Config(_))));
        assert!(matches!(extract_patches(&c, 3), Err(Error::Data(_))));
    }

    #[test]
    fn indian_pines_block_shape() {
        let mut labels = vec![0u16; 20 * 20];
        labels[0] = 1;
        labels[399] = 2;
        let c = HsiCube::new(20, 20, 200, vec![0.5; 20 * 20 * 200], labels, vec!["a".into(), "b".into()]).unwrap();
        let ps = PatchSet::from_cube(&c, 13, PadMode::Replicate).unwrap();
        assert_eq!(ps.batch(&[0, 1]).shape(), &[2, 13, 13, 200]);
        assert_eq!(ps.targets(&[0, 1]), vec![0, 1]);
    }
}
