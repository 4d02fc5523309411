use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Binary `h × w` mask, one byte per pixel holding 0 or 1.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    h: usize,
    w: usize,
    bits: Vec<u8>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({}×{}, area {})", self.h, self.w, self.area())
    }
}

impl Mask {
    pub fn new(h: usize, w: usize, bits: Vec<u8>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::shape(format!("mask extent {h}×{w} must be positive")));
        }
        if bits.len() != h * w {
            return Err(Error::shape(format!("mask {h}×{w} needs {} values, got {}", h * w, bits.len())));
        }
        if let Some(p) = bits.iter().position(|&b| b > 1) {
            return Err(Error::arg(format!("mask value {} at pixel {p} is not binary", bits[p])));
        }
        Ok(Self { h, w, bits })
    }

    pub fn empty(h: usize, w: usize) -> Result<Self> {
        Self::new(h, w, vec![0; h * w])
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut bits = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                bits.push(f(y, x) as u8);
            }
        }
        Self::new(h, w, bits)
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.w + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.bits[y * self.w + x] = on as u8;
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn expect_same_extent(&self, other: &Mask, what: &str) -> Result<()> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(Error::shape(format!(
                "{what}: masks {}×{} and {}×{} differ",
                self.h, self.w, other.h, other.w
            )));
        }
        Ok(())
    }

    /// Two-channel (background, object) indicator, `h × w × 2`.
    pub fn one_hot<T: Real>(&self) -> Tensor<T> {
        let mut data = Vec::with_capacity(self.bits.len() * 2);
        for &b in &self.bits {
            data.push(T::cast_from((1 - b) as f64));
            data.push(T::cast_from(b as f64));
        }
        Tensor::new([self.h, self.w, 2], data).expect("valid extent")
    }
}
