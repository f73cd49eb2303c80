//! Dense rank-3 grids and the handful of kernels the synthesizer is built from.
//!
//! Layout is row-major with the channel index fastest: element `(r, c, k)`
//! lives at `(r * cols + c) * channels + k`. Rows run along the BEV x axis,
//! columns along y.

use std::fmt::{Debug, Display};
use std::io::{BufRead, Write};
use std::str::FromStr;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type of a [`FeatureMap`]. Implemented for `f32` (default) and `f64`.
pub trait Scalar: Float + Default + Debug + Display + FromStr + Send + Sync + 'static {
    /// `c = a * b + beta * c` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);

    fn from_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: slice lengths checked above; strides describe dense row-major storage.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: as above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn from_f64(v: f64) -> Self {
        v
    }
}

#[derive(Clone, PartialEq)]
pub struct FeatureMap<T: Scalar = f32> {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Debug for FeatureMap<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FeatureMap({}x{}x{})", self.rows, self.cols, self.channels)
    }
}

impl<T: Scalar> FeatureMap<T> {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Self::filled(rows, cols, channels, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, channels: usize, value: T) -> Self {
        Self { rows, cols, channels, data: vec![value; rows * cols * channels] }
    }

    pub fn from_vec(rows: usize, cols: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols * channels {
            return Err(Error::shape(format!("{} elements supplied for a {rows}x{cols}x{channels} map", data.len())));
        }
        Ok(Self { rows, cols, channels, data })
    }

    /// Builds a map by evaluating `f(row, col, channel)` at every element.
    pub fn from_fn(rows: usize, cols: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols * channels);
        for r in 0..rows {
            for c in 0..cols {
                for k in 0..channels {
                    data.push(f(r, c, k));
                }
            }
        }
        Self { rows, cols, channels, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, r: usize, c: usize, k: usize) -> usize {
        (r * self.cols + c) * self.channels + k
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, k: usize) -> T {
        self.data[self.index(r, c, k)]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, k: usize, v: T) {
        let i = self.index(r, c, k);
        self.data[i] = v;
    }

    /// Channel vector at one cell.
    pub fn cell(&self, r: usize, c: usize) -> &[T] {
        let start = self.index(r, c, 0);
        &self.data[start..start + self.channels]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN))).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!("cannot add {self:?} and {other:?}")));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, channels: self.channels, data })
    }

    /// Stacks maps of identical spatial size along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::shape("nothing to concatenate"))?;
        let (rows, cols) = (first.rows, first.cols);
        if let Some(bad) = parts.iter().find(|p| p.rows != rows || p.cols != cols) {
            return Err(Error::shape(format!("cannot concatenate {first:?} with {bad:?}")));
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(rows * cols * channels);
        for cell in 0..rows * cols {
            for p in parts {
                data.extend_from_slice(&p.data[cell * p.channels..(cell + 1) * p.channels]);
            }
        }
        Ok(Self { rows, cols, channels, data })
    }

    /// Writes the text dump: a `rows cols channels` header line followed by one
    /// value per line in storage order.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.rows, self.cols, self.channels)?;
        for v in &self.data {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, reason: "missing header".into() })?;
        let header = header?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: 1, reason: format!("bad header: {e}") })?;
        let [rows, cols, channels] = dims[..] else {
            return Err(Error::Parse { line: 1, reason: "header needs rows cols channels".into() });
        };
        let mut data = Vec::with_capacity(rows * cols * channels);
        for (i, line) in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let v = t.parse::<T>().map_err(|_| Error::Parse { line: i + 1, reason: format!("not a number: {t:?}") })?;
            data.push(v);
        }
        Self::from_vec(rows, cols, channels, data)
    }
}

/// Convolution weights in out×in×k×k order plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T: Scalar = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Square kernel side, 1 or 3. Padding is `kernel / 2`.
    pub kernel: usize,
    /// 1 or 2.
    pub stride: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    #[inline]
    pub fn weight_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.kernel, 1 | 3) {
            return Err(Error::config(format!("kernel size {} not supported", self.kernel)));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::config(format!("stride {} not supported", self.stride)));
        }
        let expect = self.out_channels * self.in_channels * self.kernel * self.kernel;
        if self.weight.len() != expect || self.bias.len() != self.out_channels {
            return Err(Error::shape(format!(
                "conv {}->{} k{} expects {expect} weights and {} biases, got {} and {}",
                self.in_channels,
                self.out_channels,
                self.kernel,
                self.out_channels,
                self.weight.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    pub fn output_dims(&self, rows: usize, cols: usize) -> (usize, usize) {
        let p = self.padding();
        let out = |n: usize| (n + 2 * p - self.kernel) / self.stride + 1;
        (out(rows), out(cols))
    }
}

/// Per-channel inference-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BnAffine<T: Scalar = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
    pub eps: T,
}

impl<T: Scalar> BnAffine<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;

    /// Freshly initialized statistics: mean 0, variance 1, unit scale, zero shift.
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            scale: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
            eps: T::from_f64(Self::DEFAULT_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

const IM2COL_CHUNK: usize = 1 << 22;

/// 2-D convolution with zero padding `kernel / 2`.
pub fn conv2d<T: Scalar>(x: &FeatureMap<T>, p: &ConvParams<T>) -> Result<FeatureMap<T>> {
    p.validate()?;
    if x.channels != p.in_channels {
        return Err(Error::shape(format!("conv expects {} input channels, map has {}", p.in_channels, x.channels)));
    }
    let (out_rows, out_cols) = p.output_dims(x.rows, x.cols);
    let (cin, cout, k) = (p.in_channels, p.out_channels, p.kernel);
    let kdim = k * k * cin;

    // Weights as a (ky, kx, in) × out matrix so the output lands channel-fastest.
    let mut b = vec![T::zero(); kdim * cout];
    for o in 0..cout {
        for i in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    b[((ky * k + kx) * cin + i) * cout + o] = p.weight[p.weight_index(o, i, ky, kx)];
                }
            }
        }
    }

    let mut out = FeatureMap::zeros(out_rows, out_cols, cout);
    for cell in out.data.chunks_exact_mut(cout) {
        cell.copy_from_slice(&p.bias);
    }
    if out_rows == 0 || out_cols == 0 {
        return Ok(out);
    }

    if k == 1 && p.stride == 1 {
        T::gemm(out_rows * out_cols, kdim, cout, &x.data, &b, T::one(), &mut out.data);
        return Ok(out);
    }

    let pad = p.padding() as isize;
    let rows_per_chunk = (IM2COL_CHUNK / (out_cols * kdim)).max(1);
    let mut patches = vec![T::zero(); rows_per_chunk.min(out_rows) * out_cols * kdim];
    let mut r0 = 0;
    while r0 < out_rows {
        let nrows = rows_per_chunk.min(out_rows - r0);
        let npix = nrows * out_cols;
        let a = &mut patches[..npix * kdim];
        for (pix, patch) in a.chunks_exact_mut(kdim).enumerate() {
            let orow = r0 + pix / out_cols;
            let ocol = pix % out_cols;
            for ky in 0..k {
                let ir = (orow * p.stride) as isize + ky as isize - pad;
                for kx in 0..k {
                    let ic = (ocol * p.stride) as isize + kx as isize - pad;
                    let dst = &mut patch[(ky * k + kx) * cin..(ky * k + kx + 1) * cin];
                    if ir < 0 || ic < 0 || ir >= x.rows as isize || ic >= x.cols as isize {
                        dst.fill(T::zero());
                    } else {
                        let src = x.index(ir as usize, ic as usize, 0);
                        dst.copy_from_slice(&x.data[src..src + cin]);
                    }
                }
            }
        }
        let c = &mut out.data[r0 * out_cols * cout..(r0 + nrows) * out_cols * cout];
        T::gemm(npix, kdim, cout, a, &b, T::one(), c);
        r0 += nrows;
    }
    Ok(out)
}

/// `y = scale * (x - mean) / sqrt(var + eps) + shift`, per channel.
pub fn bn_affine<T: Scalar>(x: &FeatureMap<T>, bn: &BnAffine<T>) -> Result<FeatureMap<T>> {
    if bn.channels() != x.channels
        || bn.var.len() != x.channels
        || bn.scale.len() != x.channels
        || bn.shift.len() != x.channels
    {
        return Err(Error::shape(format!("batch norm over {} channels applied to {x:?}", bn.channels())));
    }
    let gain: Vec<T> = bn.scale.iter().zip(&bn.var).map(|(&s, &v)| s / (v + bn.eps).sqrt()).collect();
    let mut out = x.clone();
    for cell in out.data.chunks_exact_mut(x.channels) {
        for (k, v) in cell.iter_mut().enumerate() {
            *v = (*v - bn.mean[k]) * gain[k] + bn.shift[k];
        }
    }
    Ok(out)
}

#[inline]
pub fn silu_scalar<T: Scalar>(v: T) -> T {
    v / (T::one() + (-v).exp())
}

pub fn silu<T: Scalar>(x: &FeatureMap<T>) -> FeatureMap<T> {
    x.map(silu_scalar)
}

/// Source coordinate and blend weight for half-pixel-center resampling.
fn bilinear_taps(out_len: usize, in_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor (1, 2 or 4), half-pixel centers,
/// edge-clamped.
pub fn bilinear_upsample<T: Scalar>(x: &FeatureMap<T>, factor: usize) -> Result<FeatureMap<T>> {
    if !matches!(factor, 1 | 2 | 4) {
        return Err(Error::config(format!("upsampling factor {factor} not supported")));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    if x.rows == 0 || x.cols == 0 {
        return Ok(FeatureMap::zeros(x.rows * factor, x.cols * factor, x.channels));
    }
    let (out_rows, out_cols) = (x.rows * factor, x.cols * factor);
    let row_taps = bilinear_taps(out_rows, x.rows, factor);
    let col_taps = bilinear_taps(out_cols, x.cols, factor);
    let ch = x.channels;
    let mut out = FeatureMap::zeros(out_rows, out_cols, ch);
    for (r, &(r0, r1, wr)) in row_taps.iter().enumerate() {
        let wr1 = T::from_f64(wr);
        let wr0 = T::from_f64(1.0 - wr);
        for (c, &(c0, c1, wc)) in col_taps.iter().enumerate() {
            let wc1 = T::from_f64(wc);
            let wc0 = T::from_f64(1.0 - wc);
            let dst = out.index(r, c, 0);
            let (a, b, cc, d) = (x.index(r0, c0, 0), x.index(r0, c1, 0), x.index(r1, c0, 0), x.index(r1, c1, 0));
            for k in 0..ch {
                let top = wc0 * x.data[a + k] + wc1 * x.data[b + k];
                let bottom = wc0 * x.data[cc + k] + wc1 * x.data[d + k];
                out.data[dst + k] = wr0 * top + wr1 * bottom;
            }
        }
    }
    Ok(out)
}

fn pool_windows(x_rows: usize, x_cols: usize, out_rows: usize, out_cols: usize) -> Result<(usize, usize)> {
    if out_rows == 0 || out_cols == 0 || out_rows > x_rows || out_cols > x_cols {
        return Err(Error::config(format!("cannot pool {x_rows}x{x_cols} to {out_rows}x{out_cols}")));
    }
    if x_rows % out_rows != 0 || x_cols % out_cols != 0 {
        return Err(Error::config(format!(
            "pooling {x_rows}x{x_cols} to {out_rows}x{out_cols} needs integer window ratios"
        )));
    }
    Ok((x_rows / out_rows, x_cols / out_cols))
}

fn pool_with<T: Scalar>(
    x: &FeatureMap<T>,
    out_rows: usize,
    out_cols: usize,
    init: T,
    fold: impl Fn(T, T) -> T,
    finish: impl Fn(T, usize) -> T,
) -> Result<FeatureMap<T>> {
    let (wr, wc) = pool_windows(x.rows, x.cols, out_rows, out_cols)?;
    let ch = x.channels;
    let mut out = FeatureMap::filled(out_rows, out_cols, ch, init);
    for r in 0..x.rows {
        for c in 0..x.cols {
            let src = x.index(r, c, 0);
            let dst = out.index(r / wr, c / wc, 0);
            for k in 0..ch {
                out.data[dst + k] = fold(out.data[dst + k], x.data[src + k]);
            }
        }
    }
    let n = wr * wc;
    for v in &mut out.data {
        *v = finish(*v, n);
    }
    Ok(out)
}

/// Mean over non-overlapping windows; input dims must be multiples of the output dims.
pub fn adaptive_avg_pool<T: Scalar>(x: &FeatureMap<T>, out_rows: usize, out_cols: usize) -> Result<FeatureMap<T>> {
    pool_with(x, out_rows, out_cols, T::zero(), |acc, v| acc + v, |s, n| s / T::from_f64(n as f64))
}

/// Max over non-overlapping windows; input dims must be multiples of the output dims.
pub fn max_pool_to<T: Scalar>(x: &FeatureMap<T>, out_rows: usize, out_cols: usize) -> Result<FeatureMap<T>> {
    pool_with(x, out_rows, out_cols, T::neg_infinity(), |acc, v| acc.max(v), |m, _| m)
}

/// Square-window (Chebyshev radius) max filter, clipped at the borders. On a
/// {0,1} mask this is binary dilation with a `(2r+1)²` kernel.
pub fn dilate_binary<T: Scalar>(mask: &FeatureMap<T>, radius: usize) -> FeatureMap<T> {
    if radius == 0 {
        return mask.clone();
    }
    let (rows, cols, ch) = mask.shape();
    let mut horiz = FeatureMap::zeros(rows, cols, ch);
    for r in 0..rows {
        for c in 0..cols {
            let lo = c.saturating_sub(radius);
            let hi = (c + radius).min(cols - 1);
            for k in 0..ch {
                let m = (lo..=hi).map(|cc| mask.get(r, cc, k)).fold(T::neg_infinity(), T::max);
                horiz.set(r, c, k, m);
            }
        }
    }
    let mut out = FeatureMap::zeros(rows, cols, ch);
    for r in 0..rows {
        let lo = r.saturating_sub(radius);
        let hi = (r + radius).min(rows - 1);
        for c in 0..cols {
            for k in 0..ch {
                let m = (lo..=hi).map(|rr| horiz.get(rr, c, k)).fold(T::neg_infinity(), T::max);
                out.set(r, c, k, m);
            }
        }
    }
    out
}
