//! Dense tensor containers: `Tensor3` (h×w×c), `Map2` (h×w) and `Kernel4`
//! (kh×kw×cin×cout convolution weights).
//!
//! All data is row-major. `Tensor3` indexes as `(row * width + col) * channels
//! + channel`; `Kernel4` as `((di * kw + dj) * cin + c) * cout + o`. The
//! element type is generic over [`Scalar`] so the same code path runs in f32
//! for the pipeline and in f64 for gradient checks; reductions always
//! accumulate in f64 regardless of the storage type.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::Debug;

use crate::error::{DclError, Result};

/// Element types the tensor math runs on.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static
{
    fn f64(self) -> f64;
    fn of(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline(always)]
    fn f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn of(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn of(v: f64) -> Self {
        v
    }
}

/// h×w×c tensor; holds images, activations and Q-volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T: Scalar> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

pub type Tensor3f = Tensor3<f32>;

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![T::zero(); height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(DclError::ShapeMismatch(format!(
                "expected {}x{}x{} = {} elements, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    data.push(f(i, j, c));
                }
            }
        }
        Self { height, width, channels, data }
    }

    #[inline(always)]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline(always)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline(always)]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline(always)]
    pub fn at(&self, i: usize, j: usize, c: usize) -> T {
        debug_assert!(i < self.height && j < self.width && c < self.channels);
        self.data[(i * self.width + j) * self.channels + c]
    }

    #[inline(always)]
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: T) {
        debug_assert!(i < self.height && j < self.width && c < self.channels);
        self.data[(i * self.width + j) * self.channels + c] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn spatial_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channel-concatenation `[self | other]` along the last axis.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(DclError::ShapeMismatch(format!(
                "cannot concatenate {}x{} with {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let channels = self.channels + other.channels;
        let mut data = Vec::with_capacity(self.height * self.width * channels);
        for px in 0..self.height * self.width {
            data.extend_from_slice(&self.data[px * self.channels..(px + 1) * self.channels]);
            data.extend_from_slice(&other.data[px * other.channels..(px + 1) * other.channels]);
        }
        Ok(Self { height: self.height, width: self.width, channels, data })
    }

    /// Lossy element-type conversion (used to move between the f32 pipeline
    /// and f64 gradient-check instances).
    pub fn cast<U: Scalar>(&self) -> Tensor3<U> {
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

/// h×w scalar map; reward images, value images, TD targets, masks-as-weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Map2<T: Scalar> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

pub type Map2f = Map2<f32>;

impl<T: Scalar> Map2<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![T::zero(); height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(DclError::ShapeMismatch(format!(
                "expected {}x{} = {} elements, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self { height, width, data }
    }

    #[inline(always)]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline(always)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline(always)]
    pub fn at(&self, i: usize, j: usize) -> T {
        debug_assert!(i < self.height && j < self.width);
        self.data[i * self.width + j]
    }

    #[inline(always)]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        debug_assert!(i < self.height && j < self.width);
        self.data[i * self.width + j] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v.f64()).sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &self.data {
            let x = v.f64();
            if x < lo {
                lo = x;
            }
            if x > hi {
                hi = x;
            }
        }
        (lo, hi)
    }

    pub fn cast<U: Scalar>(&self) -> Map2<U> {
        Map2 {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

/// Convolution weights: kh×kw spatial taps, cin input and cout output channels.
///
/// Odd spatial dimensions are required so that "same" zero-padded convolution
/// has a well-defined center tap.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel4<T: Scalar> {
    kh: usize,
    kw: usize,
    cin: usize,
    cout: usize,
    weights: Vec<T>,
}

impl<T: Scalar> Kernel4<T> {
    pub fn zeros(kh: usize, kw: usize, cin: usize, cout: usize) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 || kh == 0 || kw == 0 {
            return Err(DclError::EvenKernel { kh, kw });
        }
        Ok(Self { kh, kw, cin, cout, weights: vec![T::zero(); kh * kw * cin * cout] })
    }

    pub fn from_vec(kh: usize, kw: usize, cin: usize, cout: usize, weights: Vec<T>) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 || kh == 0 || kw == 0 {
            return Err(DclError::EvenKernel { kh, kw });
        }
        if weights.len() != kh * kw * cin * cout {
            return Err(DclError::ShapeMismatch(format!(
                "kernel {}x{}x{}x{} needs {} weights, got {}",
                kh,
                kw,
                cin,
                cout,
                kh * kw * cin * cout,
                weights.len()
            )));
        }
        Ok(Self { kh, kw, cin, cout, weights })
    }

    #[inline(always)]
    pub fn kh(&self) -> usize {
        self.kh
    }

    #[inline(always)]
    pub fn kw(&self) -> usize {
        self.kw
    }

    #[inline(always)]
    pub fn cin(&self) -> usize {
        self.cin
    }

    #[inline(always)]
    pub fn cout(&self) -> usize {
        self.cout
    }

    #[inline(always)]
    pub fn at(&self, di: usize, dj: usize, c: usize, o: usize) -> T {
        self.weights[((di * self.kw + dj) * self.cin + c) * self.cout + o]
    }

    #[inline(always)]
    pub fn set(&mut self, di: usize, dj: usize, c: usize, o: usize, v: T) {
        self.weights[((di * self.kw + dj) * self.cin + c) * self.cout + o] = v;
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.kh, self.kw, self.cin, self.cout) == (other.kh, other.kw, other.cin, other.cout)
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Kernel4<U> {
        Kernel4 {
            kh: self.kh,
            kw: self.kw,
            cin: self.cin,
            cout: self.cout,
            weights: self.weights.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}
