use super::Real;
use crate::error::{ensure, Result};

/// Dense `n x h x w x c` tensor, channels fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(dims: (usize, usize, usize, usize), data: Vec<T>) -> Result<Self> {
        let (n, h, w, c) = dims;
        ensure!(
            data.len() == n * h * w * c,
            Shape,
            "tensor {n}x{h}x{w}x{c} needs {} values, got {}",
            n * h * w * c,
            data.len()
        );
        Ok(Self { n, h, w, c, data })
    }

    pub fn zeros(dims: (usize, usize, usize, usize)) -> Self {
        let (n, h, w, c) = dims;
        Self { n, h, w, c, data: vec![T::zero(); n * h * w * c] }
    }

    pub fn from_fn(dims: (usize, usize, usize, usize), mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let (n, h, w, c) = dims;
        let mut data = Vec::with_capacity(n * h * w * c);
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        data.push(f(b, y, x, ch));
                    }
                }
            }
        }
        Self { n, h, w, c, data }
    }

    /// `(n, h, w, c)`
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.h, self.w, self.c)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    /// Number of pixels, `n * h * w`.
    pub fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, b: usize, y: usize, x: usize, ch: usize) -> usize {
        ((b * self.h + y) * self.w + x) * self.c + ch
    }

    #[inline]
    pub fn get(&self, b: usize, y: usize, x: usize, ch: usize) -> T {
        self.data[self.offset(b, y, x, ch)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, y: usize, x: usize, ch: usize, v: T) {
        let i = self.offset(b, y, x, ch);
        self.data[i] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            n: self.n,
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        ensure!(self.dims() == other.dims(), Shape, "{:?} vs {:?}", self.dims(), other.dims());
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        })
    }
}
