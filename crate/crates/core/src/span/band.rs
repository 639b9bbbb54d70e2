//! Diagonal band layout of the token-pair span tensor.
//!
//! Slot `(i, k)` with `k in 0..2m+1` holds matrix cell `(i, j)`,
//! `j = i + k - m`. It is valid iff `0 <= j < L`. Slots with `k >= m` are the
//! upper triangle (spans `i..=j`), slots with `k < m` the mirrored lower
//! triangle.

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BandGeometry {
    pub len: usize,
    /// One-sided half-width `m`.
    pub m: usize,
}

impl BandGeometry {
    pub fn new(len: usize, m: usize) -> Self {
        Self { len, m }
    }

    pub fn width(&self) -> usize {
        2 * self.m + 1
    }

    pub fn slots(&self) -> usize {
        self.len * self.width()
    }

    /// Matrix column of slot `(i, k)` if it lies inside the matrix.
    pub fn column(&self, i: usize, k: usize) -> Option<usize> {
        let j = (i + k).checked_sub(self.m)?;
        (j < self.len).then_some(j)
    }

    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let k = (j + self.m).checked_sub(i)?;
        (k < self.width()).then(|| i * self.width() + k)
    }

    pub fn is_valid(&self, i: usize, k: usize) -> bool {
        self.column(i, k).is_some()
    }

    pub fn validity(&self) -> Vec<bool> {
        let w = self.width();
        (0..self.slots()).map(|s| self.is_valid(s / w, s % w)).collect()
    }

    pub fn is_upper(&self, k: usize) -> bool {
        k >= self.m
    }

    /// Slot permutation that maps the row-organized band to the
    /// column-organized band: output slot `(j, k')` reads input slot
    /// `(j + k' - m, 2m - k')`, i.e. matrix cell `(i, j)` lands in row `j`.
    /// The map is an involution, so it also serves as its own inverse.
    pub fn skew_index(&self) -> Vec<Option<usize>> {
        let w = self.width();
        let mut src = Vec::with_capacity(self.slots());
        for j in 0..self.len {
            for kp in 0..w {
                src.push(self.column(j, kp).map(|i| i * w + (2 * self.m - kp)));
            }
        }
        src
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandTensor {
    pub geom: BandGeometry,
    pub channels: usize,
    /// `[L, 2m+1, c]`, zero at invalid slots.
    pub data: Vec<Scalar>,
    /// `[L, 2m+1]`
    pub valid: Vec<bool>,
}

impl BandTensor {
    pub fn zeros(len: usize, m: usize, channels: usize) -> Self {
        let geom = BandGeometry::new(len, m);
        Self {
            data: vec![0.0; geom.slots() * channels],
            valid: geom.validity(),
            geom,
            channels,
        }
    }

    /// Wraps `[L, 2m+1, c]` data, zeroing invalid slots.
    pub fn from_data(len: usize, m: usize, channels: usize, mut data: Vec<Scalar>) -> Result<Self> {
        let geom = BandGeometry::new(len, m);
        if data.len() != geom.slots() * channels {
            return Err(Error::Shape {
                op: "band",
                lhs: vec![len, geom.width(), channels],
                rhs: vec![data.len()],
            });
        }
        let valid = geom.validity();
        for (s, &v) in valid.iter().enumerate() {
            if !v {
                data[s * channels..(s + 1) * channels].iter_mut().for_each(|x| *x = 0.0);
            }
        }
        Ok(Self {
            geom,
            channels,
            data,
            valid,
        })
    }

    pub fn from_tensor(t: &Tensor, m: usize) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[1] != 2 * m + 1 {
            return Err(Error::Shape {
                op: "band",
                lhs: s.to_vec(),
                rhs: vec![2 * m + 1],
            });
        }
        Self::from_data(s[0], m, s[2], t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.geom.len, self.geom.width(), self.channels], self.data.clone()).unwrap()
    }

    /// Band extraction from a dense `[L, L, c]` tensor.
    pub fn from_dense(dense: &Tensor, m: usize) -> Result<Self> {
        let s = dense.shape();
        if s.len() != 3 || s[0] != s[1] {
            return Err(Error::Shape {
                op: "band_from_dense",
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        let (len, c) = (s[0], s[2]);
        let mut band = Self::zeros(len, m, c);
        for i in 0..len {
            for k in 0..band.geom.width() {
                if let Some(j) = band.geom.column(i, k) {
                    let dst = (i * band.geom.width() + k) * c;
                    band.data[dst..dst + c].copy_from_slice(&dense.data()[(i * len + j) * c..(i * len + j + 1) * c]);
                }
            }
        }
        Ok(band)
    }

    pub fn slot(&self, i: usize, k: usize) -> &[Scalar] {
        let s = (i * self.geom.width() + k) * self.channels;
        &self.data[s..s + self.channels]
    }

    fn permuted(&self, src: &[Option<usize>]) -> Self {
        let c = self.channels;
        let mut data = vec![0.0; self.data.len()];
        for (o, s) in src.iter().enumerate() {
            if let Some(s) = *s {
                data[o * c..(o + 1) * c].copy_from_slice(&self.data[s * c..(s + 1) * c]);
            }
        }
        Self {
            geom: self.geom,
            channels: c,
            data,
            valid: src.iter().map(Option::is_some).collect(),
        }
    }

    /// Row-organized band to column-organized band.
    pub fn skew_to_vertical(&self) -> Self {
        self.permuted(&self.geom.skew_index())
    }

    /// Inverse of [`skew_to_vertical`](Self::skew_to_vertical).
    pub fn skew_to_horizontal(&self) -> Self {
        self.permuted(&self.geom.skew_index())
    }
}
