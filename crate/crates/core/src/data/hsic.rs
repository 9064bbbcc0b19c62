//! `HSIC` cube files.
//!
//! ```text
//! offset  field
//! 0       "HSIC"
//! 4       version   u16 = 1
//! 6       H, W, B   u32 each
//! 18      dtype     u8 (0 = f32)
//! 19      reserved  u8
//! 20      payload   H·W·B f32, index (y·W + x)·B + b
//! ...     K         u16
//! ...     labels    H·W u16, 0 = unlabeled
//! ...     K names   u32 byte length + UTF-8 each
//! ```
//! All multi-byte values are little-endian.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HSIC";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 20;

/// Radiance cube with per-pixel labels. Labels are `0` (unlabeled) or `1..=K`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
    labels: Vec<u16>,
    class_names: Vec<String>,
}

impl HsiCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        data: Vec<f32>,
        labels: Vec<u16>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Data(format!("cube extents {height}×{width}×{bands} must be positive")));
        }
        if data.len() != height * width * bands {
            return Err(Error::Data(format!(
                "cube payload has {} values, expected {}",
                data.len(),
                height * width * bands
            )));
        }
        if labels.len() != height * width {
            return Err(Error::Data(format!(
                "label map has {} entries, expected {}",
                labels.len(),
                height * width
            )));
        }
        if class_names.len() > u16::MAX as usize {
            return Err(Error::Data("too many classes".into()));
        }
        let k = class_names.len() as u16;
        if let Some(i) = labels.iter().position(|&l| l > k) {
            return Err(Error::Data(format!(
                "label {} at pixel {i} exceeds class count {k}",
                labels[i]
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
            labels,
            class_names,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn label(&self, y: usize, x: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    /// Spectrum of pixel `(y, x)`.
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let o = (y * self.width + x) * self.bands;
        &self.data[o..o + self.bands]
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0).count()
    }

    /// Pixel count per class `1..=K` (index 0 holds class 1).
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes()];
        for &l in &self.labels {
            if l > 0 {
                h[l as usize - 1] += 1;
            }
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4 + self.labels.len() * 2 + 2);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.height, self.width, self.bands] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(0);
        out.push(0);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.classes() as u16).to_le_bytes());
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for name in &self.class_names {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::format(0, "bad magic, expected HSIC"));
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let h = r.u32("height")? as usize;
        let w = r.u32("width")? as usize;
        let b = r.u32("bands")? as usize;
        if h == 0 || w == 0 || b == 0 {
            return Err(Error::format(6, format!("zero extent in {h}×{w}×{b}")));
        }
        let dtype = r.take(1, "dtype")?[0];
        if dtype != 0 {
            return Err(Error::format(18, format!("unsupported dtype {dtype}")));
        }
        r.take(1, "reserved")?;
        let n = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(b))
            .ok_or_else(|| Error::format(6, "extents overflow"))?;
        let payload_at = r.pos;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format(6, "extents overflow"))?, "payload")?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format((payload_at + 4 * i) as u64, "non-finite sample"));
        }
        let k = r.u16("class count")?;
        let labels_at = r.pos;
        let raw = r.take(h * w * 2, "labels")?;
        let labels: Vec<u16> = raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        if let Some(i) = labels.iter().position(|&l| l > k) {
            return Err(Error::format(
                (labels_at + 2 * i) as u64,
                format!("label {} exceeds class count {k}", labels[i]),
            ));
        }
        let mut names = Vec::with_capacity(k as usize);
        for _ in 0..k {
            let at = r.pos;
            let len = r.u32("class name length")? as usize;
            let s = std::str::from_utf8(r.take(len, "class name")?)
                .map_err(|_| Error::format(at as u64 + 4, "class name is not UTF-8"))?;
            names.push(s.to_string());
        }
        if r.pos != buf.len() {
            return Err(Error::format(r.pos as u64, format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Self::new(h, w, b, data, labels, names)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if left < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {left} left"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load_hsic(path: &Path) -> Result<HsiCube> {
    HsiCube::from_bytes(&std::fs::read(path)?)
}

pub fn save_hsic(cube: &HsiCube, path: &Path) -> Result<()> {
    std::fs::write(path, cube.to_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HsiCube {
        HsiCube::new(
            2,
            3,
            2,
            (0..12).map(|i| i as f32 * 0.5 - 1.0).collect(),
            vec![0, 1, 2, 2, 1, 0],
            vec!["grass".into(), "wöods".into()],
        )
        .unwrap()
    }

    #[test]
    fn byte_layout() {
        let b = small().to_bytes();
        assert_eq!(&b[..4], b"HSIC");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u32::from_le_bytes(b[6..10].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[10..14].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(b[14..18].try_into().unwrap()), 2);
        assert_eq!(&b[18..20], &[0, 0]);
        // pixel (1, 0), band 1 → index (1·3 + 0)·2 + 1 = 7
        assert_eq!(f32::from_le_bytes(b[20 + 28..20 + 32].try_into().unwrap()), 2.5);
        let k_at = 20 + 48;
        assert_eq!(u16::from_le_bytes([b[k_at], b[k_at + 1]]), 2);
        let names_at = k_at + 2 + 12;
        assert_eq!(u32::from_le_bytes(b[names_at..names_at + 4].try_into().unwrap()), 5);
        assert_eq!(&b[names_at + 4..names_at + 9], b"grass");
        assert_eq!(b.len(), names_at + 9 + 4 + "wöods".len());
    }

    #[test]
    fn round_trip() {
        let c = small();
        assert_eq!(HsiCube::from_bytes(&c.to_bytes()).unwrap(), c);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.hsic");
        save_hsic(&c, &p).unwrap();
        assert_eq!(load_hsic(&p).unwrap(), c);
    }

    #[test]
    fn faults_report_offsets() {
        let b = small().to_bytes();
        for cut in [0, 3, 5, 17, 21, 67, 69, 80, b.len() - 1] {
            match HsiCube::from_bytes(&b[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset <= cut as u64, "cut {cut} offset {offset}"),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(HsiCube::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = b.clone();
        bad[4] = 2;
        assert!(matches!(HsiCube::from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
        let mut bad = b.clone();
        bad[20 + 48 + 2] = 9; // first label
        assert!(matches!(HsiCube::from_bytes(&bad), Err(Error::Format { offset: 70, .. })));
    }

    #[test]
    fn histogram() {
        assert_eq!(small().class_histogram(), vec![2, 2]);
        assert_eq!(small().labeled_count(), 4);
    }
}
