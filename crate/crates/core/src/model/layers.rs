//! Convolution and affine layers with explicit forward caches and backward passes.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::scalar::{gemm, Layout, Real};

/// Channel-major activation: `channels × height × width`, height = time.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }
}

fn he_normal<T: Real, R: Rng>(fan_in: usize, len: usize, rng: &mut R) -> Vec<T> {
    normal_init((2.0 / fan_in as f64).sqrt(), len, rng)
}

fn normal_init<T: Real, R: Rng>(std: f64, len: usize, rng: &mut R) -> Vec<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..len).map(|_| T::lit(normal.sample(rng))).collect()
}

/// 2-D convolution with square kernel, "same"-style padding `kernel / 2` and
/// a fused ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `out_channels × (in_channels · kernel²)`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// What the backward pass of a [`Conv2d`] needs from its forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    in_height: usize,
    in_width: usize,
    cols: Vec<T>,
    /// Post-ReLU output.
    pub output: Tensor3<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: he_normal(fan_in, out_channels * fan_in, rng),
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
            ..*self
        }
    }

    fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        let p = self.padding();
        (
            (height + 2 * p - self.kernel) / self.stride + 1,
            (width + 2 * p - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Tensor3<T>, out_h: usize, out_w: usize) -> Vec<T> {
        let (k, s, p) = (self.kernel, self.stride, self.padding() as isize);
        let plane = out_h * out_w;
        let mut cols = vec![T::zero(); self.in_channels * k * k * plane];
        for ci in 0..self.in_channels {
            let src = &x.data[ci * x.height * x.width..(ci + 1) * x.height * x.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oh in 0..out_h {
                        let ih = (oh * s) as isize + ki as isize - p;
                        if ih < 0 || ih >= x.height as isize {
                            continue;
                        }
                        let src_row = &src[ih as usize * x.width..(ih as usize + 1) * x.width];
                        let dst_row = &mut dst[oh * out_w..(oh + 1) * out_w];
                        for (ow, d) in dst_row.iter_mut().enumerate() {
                            let iw = (ow * s) as isize + kj as isize - p;
                            if iw >= 0 && iw < x.width as isize {
                                *d = src_row[iw as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], height: usize, width: usize, out_h: usize, out_w: usize) -> Vec<T> {
        let (k, s, p) = (self.kernel, self.stride, self.padding() as isize);
        let plane = out_h * out_w;
        let mut x = vec![T::zero(); self.in_channels * height * width];
        for ci in 0..self.in_channels {
            let dst = &mut x[ci * height * width..(ci + 1) * height * width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oh in 0..out_h {
                        let ih = (oh * s) as isize + ki as isize - p;
                        if ih < 0 || ih >= height as isize {
                            continue;
                        }
                        let dst_row = &mut dst[ih as usize * width..(ih as usize + 1) * width];
                        for ow in 0..out_w {
                            let iw = (ow * s) as isize + kj as isize - p;
                            if iw >= 0 && iw < width as isize {
                                dst_row[iw as usize] += src[oh * out_w + ow];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward(&self, x: &Tensor3<T>) -> ConvCache<T> {
        assert_eq!(x.channels, self.in_channels, "conv input channels");
        let (out_h, out_w) = self.output_size(x.height, x.width);
        let plane = out_h * out_w;
        let cols = self.im2col(x, out_h, out_w);
        let mut out = vec![T::zero(); self.out_channels * plane];
        for (chunk, &b) in out.chunks_exact_mut(plane).zip(&self.bias) {
            chunk.fill(b);
        }
        let kk = self.in_channels * self.kernel * self.kernel;
        gemm(
            self.out_channels,
            kk,
            plane,
            &self.weight,
            Layout::Plain,
            &cols,
            Layout::Plain,
            T::one(),
            &mut out,
        );
        for v in out.iter_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        ConvCache {
            in_height: x.height,
            in_width: x.width,
            cols,
            output: Tensor3::new(self.out_channels, out_h, out_w, out),
        }
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient when `need_input` is set. `d_out` is the gradient with
    /// respect to the post-ReLU output and is masked in place.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        d_out: &mut [T],
        grad: &mut Conv2d<T>,
        need_input: bool,
    ) -> Option<Tensor3<T>> {
        let out = &cache.output;
        let plane = out.height * out.width;
        for (d, &y) in d_out.iter_mut().zip(&out.data) {
            if y <= T::zero() {
                *d = T::zero();
            }
        }
        for (g, chunk) in grad.bias.iter_mut().zip(d_out.chunks_exact(plane)) {
            *g += chunk.iter().copied().sum::<T>();
        }
        let kk = self.in_channels * self.kernel * self.kernel;
        gemm(
            self.out_channels,
            plane,
            kk,
            d_out,
            Layout::Plain,
            &cache.cols,
            Layout::Transposed,
            T::one(),
            &mut grad.weight,
        );
        if !need_input {
            return None;
        }
        let mut d_cols = vec![T::zero(); kk * plane];
        gemm(
            kk,
            self.out_channels,
            plane,
            &self.weight,
            Layout::Transposed,
            d_out,
            Layout::Plain,
            T::zero(),
            &mut d_cols,
        );
        let data = self.col2im(&d_cols, cache.in_height, cache.in_width, out.height, out.width);
        Some(Tensor3::new(self.in_channels, cache.in_height, cache.in_width, data))
    }
}

/// Fully connected layer `y = W x + b`, `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: he_normal(in_dim, in_dim * out_dim, rng),
            bias: vec![T::zero(); out_dim],
        }
    }

    /// Weights drawn from `N(0, std²)`, zero bias.
    pub fn with_std<R: Rng>(in_dim: usize, out_dim: usize, std: f64, rng: &mut R) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: normal_init(std, in_dim * out_dim, rng),
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim, self.out_dim)
    }

    /// Applies the layer to `rows` inputs stored row-major (`rows × in_dim`).
    pub fn forward_batch(&self, x: &[T], rows: usize) -> Vec<T> {
        assert_eq!(x.len(), rows * self.in_dim, "linear input shape");
        let mut out = Vec::with_capacity(rows * self.out_dim);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias);
        }
        gemm(
            rows,
            self.in_dim,
            self.out_dim,
            x,
            Layout::Plain,
            &self.weight,
            Layout::Transposed,
            T::one(),
            &mut out,
        );
        out
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.forward_batch(x, 1)
    }

    /// Accumulates gradients for `rows` samples; returns the input gradient
    /// when requested.
    pub fn backward_batch(
        &self,
        x: &[T],
        d_out: &[T],
        rows: usize,
        grad: &mut Linear<T>,
        need_input: bool,
    ) -> Option<Vec<T>> {
        for row in d_out.chunks_exact(self.out_dim) {
            for (g, &d) in grad.bias.iter_mut().zip(row) {
                *g += d;
            }
        }
        gemm(
            self.out_dim,
            rows,
            self.in_dim,
            d_out,
            Layout::Transposed,
            x,
            Layout::Plain,
            T::one(),
            &mut grad.weight,
        );
        need_input.then(|| {
            let mut dx = vec![T::zero(); rows * self.in_dim];
            gemm(
                rows,
                self.out_dim,
                self.in_dim,
                d_out,
                Layout::Plain,
                &self.weight,
                Layout::Plain,
                T::zero(),
                &mut dx,
            );
            dx
        })
    }
}

pub fn relu_in_place<T: Real>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}
