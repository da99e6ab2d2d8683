use crate::error::{Error, Result};

/// Binary label map: 0 = background, 1 = portrait.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim("height", "mask dimensions must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::dim(
                "width",
                format!("{}×{} mask needs {} values, got {}", height, width, height * width, data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Validation(format!("mask value {v} is not binary")));
        }
        Ok(BinaryMask { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask::new(height, width, vec![0; height * width]).expect("positive mask dims")
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        BinaryMask::new(height, width, data).expect("positive mask dims")
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    /// Fraction of pixels labelled portrait.
    pub fn foreground_fraction(&self) -> f64 {
        self.data.iter().map(|&v| v as usize).sum::<usize>() as f64 / self.data.len() as f64
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width) {
            data.extend(row.iter().rev());
        }
        BinaryMask {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn invert(&self) -> Self {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }
}
