//! Convolutional despeckler with a division skip connection.
//!
//! The network maps a speckled intensity image `y` to an estimate `n̂` of the
//! multiplicative noise field through a stack of 3×3 convolutions (stride 1,
//! zero padding 1, ReLU between layers, linear last layer). The clean
//! estimate is `x̂ = y / max(n̂, ε_div)`.
//!
//! Activations are stored per channel as zero-padded `(h+2)×(w+2)` planes.
//! With that layout each of the nine kernel taps is one GEMM over a shifted
//! view of the input plane; the two pad columns of every output row come out
//! as garbage and are re-zeroed after each layer.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use super::real::{gemm, Real, View};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Stream;

/// Floor applied to the estimated noise before the division.
pub const EPS_DIV: f64 = 1e-3;

const TAPS: usize = 9;
const INFERENCE_STRIP: usize = 256;
const COL_CHUNK: usize = 4096;

static STAMPS: AtomicU64 = AtomicU64::new(1);

fn next_stamp() -> u64 {
    STAMPS.fetch_add(1, Ordering::Relaxed)
}

/// One 3×3 convolution with bias and optional ReLU.
///
/// `weights[(o·in_ch + i)·9 + ky·3 + kx]` multiplies input channel `i` at
/// offset `(kx − 1, ky − 1)` for output channel `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    in_ch: usize,
    out_ch: usize,
    weights: Vec<T>,
    bias: Vec<T>,
    relu: bool,
}

impl<T: Real> ConvLayer<T> {
    pub fn new(in_ch: usize, out_ch: usize, weights: Vec<T>, bias: Vec<T>, relu: bool) -> Result<Self> {
        if in_ch == 0 || out_ch == 0 {
            return Err(Error::Network("layers need at least one channel".into()));
        }
        if weights.len() != out_ch * in_ch * TAPS || bias.len() != out_ch {
            return Err(Error::Network(format!(
                "layer {in_ch}->{out_ch} expects {} weights and {out_ch} biases, got {} and {}",
                out_ch * in_ch * TAPS,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Network("non-finite parameter".into()));
        }
        Ok(Self {
            in_ch,
            out_ch,
            weights,
            bias,
            relu,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn relu(&self) -> bool {
        self.relu
    }
}

#[derive(Debug, Clone)]
pub struct ConvNet<T: Real = f32> {
    layers: Vec<ConvLayer<T>>,
    /// Changes whenever parameters change; ties forward caches to weights.
    stamp: u64,
}

impl<T: Real> PartialEq for ConvNet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl<T: Real> ConvNet<T> {
    /// `depth` layers, `width` hidden channels, Glorot-uniform weights.
    ///
    /// Biases start at zero except the output bias, which starts at 1 so the
    /// untrained network predicts unit noise (an identity despeckler) and the
    /// division floor is inactive from the first step.
    pub fn new(depth: usize, width: usize, rng: &mut Stream) -> Result<Self> {
        if depth == 0 || width == 0 {
            return Err(Error::Network(format!(
                "depth and width must be positive, got depth {depth}, width {width}"
            )));
        }
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let in_ch = if l == 0 { 1 } else { width };
            let out_ch = if l + 1 == depth { 1 } else { width };
            let bound = (6.0 / ((in_ch + out_ch) * TAPS) as f64).sqrt();
            let weights = (0..out_ch * in_ch * TAPS)
                .map(|_| T::of(rng.range(-bound, bound)))
                .collect();
            let mut bias = vec![T::zero(); out_ch];
            let last = l + 1 == depth;
            if last {
                bias[0] = T::one();
            }
            layers.push(ConvLayer::new(in_ch, out_ch, weights, bias, !last)?);
        }
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<ConvLayer<T>>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::Network("network has no layers".into()));
        };
        if first.in_ch != 1 {
            return Err(Error::Network(format!(
                "first layer must take 1 channel, takes {}",
                first.in_ch
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_ch != pair[1].in_ch {
                return Err(Error::Network(format!(
                    "channel mismatch between layer {i} ({} out) and layer {} ({} in)",
                    pair[0].out_ch,
                    i + 1,
                    pair[1].in_ch
                )));
            }
        }
        let last = layers.last().expect("non-empty");
        if last.out_ch != 1 || last.relu {
            return Err(Error::Network(
                "last layer must be linear with a single output channel".into(),
            ));
        }
        Ok(Self {
            layers,
            stamp: next_stamp(),
        })
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Hidden channel count (1 for a single-layer network).
    pub fn width(&self) -> usize {
        if self.layers.len() > 1 {
            self.layers[0].out_ch
        } else {
            1
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameter slices in storage order: weights then bias, layer by layer.
    pub fn params(&self) -> impl Iterator<Item = &[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    /// Mutable parameter slices; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.stamp = next_stamp();
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Same network in another precision.
    pub fn cast<U: Real>(&self) -> ConvNet<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| ConvLayer {
                in_ch: l.in_ch,
                out_ch: l.out_ch,
                weights: l.weights.iter().map(|v| U::of(v.as_f64())).collect(),
                bias: l.bias.iter().map(|v| U::of(v.as_f64())).collect(),
                relu: l.relu,
            })
            .collect();
        ConvNet {
            layers,
            stamp: next_stamp(),
        }
    }

    pub(crate) fn stamp(&self) -> u64 {
        self.stamp
    }
}

/// Gradients laid out exactly like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &ConvNet<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![T::zero(); l.weights.len()],
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    /// Slices in the same order as [`ConvNet::params`].
    pub fn slices(&self) -> impl Iterator<Item = &[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += *y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += *y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.as_f64().abs()))
    }
}

/// Padded-plane geometry for a `w`×`h` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    w: usize,
    h: usize,
    /// Padded row length `w + 2`.
    pw: usize,
    /// Padded plane size `(h + 2)(w + 2)`.
    plane: usize,
    /// Number of GEMM columns per tap, `h(w + 2) − 2`.
    cols: usize,
    /// Plane index of pixel (0, 0).
    origin: usize,
}

impl Geometry {
    fn new(w: usize, h: usize) -> Self {
        let pw = w + 2;
        Self {
            w,
            h,
            pw,
            plane: (h + 2) * pw,
            cols: h * pw - 2,
            origin: pw + 1,
        }
    }

    #[inline]
    fn tap_offset(&self, tap: usize) -> usize {
        (tap / 3) * self.pw + tap % 3
    }

    #[inline]
    fn index(&self, x: usize, y: usize) -> usize {
        (y + 1) * self.pw + x + 1
    }

    /// Zero-padded single-channel plane holding `data` (row-major `w×h`).
    fn pad<T: Real>(&self, data: &[f64]) -> Vec<T> {
        let mut plane = vec![T::zero(); self.plane];
        for (y, row) in data.chunks_exact(self.w).enumerate() {
            let start = self.index(0, y);
            for (d, &s) in plane[start..start + self.w].iter_mut().zip(row) {
                *d = T::of(s);
            }
        }
        plane
    }

    /// Zeroes the pad ring of every channel plane in `buf`.
    fn clear_pads<T: Real>(&self, buf: &mut [T]) {
        for plane in buf.chunks_exact_mut(self.plane) {
            plane[..self.pw].fill(T::zero());
            plane[(self.h + 1) * self.pw..].fill(T::zero());
            for y in 1..=self.h {
                plane[y * self.pw] = T::zero();
                plane[y * self.pw + self.w + 1] = T::zero();
            }
        }
    }
}

/// Unfolds columns `c0..c0 + len` of the nine tap-shifted views of every
/// input plane into a `(in_ch·9) × len` matrix whose row order matches the
/// weight layout.
fn im2col<T: Real>(geo: &Geometry, in_ch: usize, input: &[T], c0: usize, len: usize, col: &mut Vec<T>) {
    col.clear();
    for c in 0..in_ch {
        let plane = &input[c * geo.plane..(c + 1) * geo.plane];
        for tap in 0..TAPS {
            let off = geo.tap_offset(tap) + c0;
            col.extend_from_slice(&plane[off..off + len]);
        }
    }
}

/// Convolution of one sample: `input` holds `in_ch` padded planes, the
/// returned buffer `out_ch` padded planes with clean pads. Columns are
/// processed in chunks so the unfolded matrix stays cache-sized on large
/// images.
fn conv_forward<T: Real>(layer: &ConvLayer<T>, geo: &Geometry, input: &[T]) -> Vec<T> {
    let k = layer.in_ch * TAPS;
    let mut out = vec![T::zero(); layer.out_ch * geo.plane];
    let mut col = Vec::with_capacity(k * geo.cols.min(COL_CHUNK));
    for c0 in (0..geo.cols).step_by(COL_CHUNK) {
        let len = COL_CHUNK.min(geo.cols - c0);
        im2col(geo, layer.in_ch, input, c0, len, &mut col);
        gemm(
            layer.out_ch,
            k,
            len,
            &layer.weights,
            View::new(0, k, 1),
            &col,
            View::new(0, len, 1),
            T::zero(),
            &mut out,
            View::new(geo.origin + c0, geo.plane, 1),
        );
    }
    for (plane, &b) in out.chunks_exact_mut(geo.plane).zip(&layer.bias) {
        for y in 0..geo.h {
            let start = geo.index(0, y);
            for v in &mut plane[start..start + geo.w] {
                let z = *v + b;
                *v = if layer.relu && z < T::zero() { T::zero() } else { z };
            }
        }
    }
    geo.clear_pads(&mut out);
    out
}

/// Activations of one sample: `acts[0]` is the padded input, `acts[l + 1]`
/// the output of layer `l`.
fn run_layers<T: Real>(net: &ConvNet<T>, geo: &Geometry, input: Vec<T>, keep: bool) -> Vec<Vec<T>> {
    let mut acts = vec![input];
    for layer in &net.layers {
        let next = conv_forward(layer, geo, acts.last().expect("input present"));
        if !keep {
            acts.clear();
        }
        acts.push(next);
    }
    acts
}

#[inline]
fn divide<T: Real>(y: T, noise: T) -> T {
    y / noise.max(T::of(EPS_DIV))
}

/// Activations retained for [`backward`].
#[derive(Debug, Clone)]
pub struct Cache<T> {
    stamp: u64,
    width: usize,
    height: usize,
    acts: Vec<Vec<Vec<T>>>,
}

impl<T> Cache<T> {
    pub fn batch_len(&self) -> usize {
        self.acts.len()
    }
}

/// Output of [`forward`]: per-sample row-major noise and clean estimates.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub noise_est: Vec<Vec<T>>,
    pub clean_est: Vec<Vec<T>>,
    pub cache: Cache<T>,
}

fn batch_dims(batch: &[Image]) -> Result<(usize, usize)> {
    let first = batch
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty batch".into()))?;
    for img in batch {
        first.check_same_shape(img)?;
    }
    Ok(first.dims())
}

fn unpad<T: Real>(geo: &Geometry, plane: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(geo.w * geo.h);
    for y in 0..geo.h {
        let start = geo.index(0, y);
        out.extend_from_slice(&plane[start..start + geo.w]);
    }
    out
}

/// Runs the network on a batch of equally sized noisy images.
pub fn forward<T: Real>(net: &ConvNet<T>, batch: &[Image]) -> Result<ForwardPass<T>> {
    let (w, h) = batch_dims(batch)?;
    let geo = Geometry::new(w, h);
    let acts: Vec<Vec<Vec<T>>> = batch
        .par_iter()
        .map(|img| run_layers(net, &geo, geo.pad(img.data()), true))
        .collect();
    let mut noise_est = Vec::with_capacity(batch.len());
    let mut clean_est = Vec::with_capacity(batch.len());
    for (img, a) in batch.iter().zip(&acts) {
        let noise = unpad(&geo, a.last().expect("output layer"));
        let clean = img
            .data()
            .iter()
            .zip(&noise)
            .map(|(&y, &n)| divide(T::of(y), n))
            .collect();
        noise_est.push(noise);
        clean_est.push(clean);
    }
    Ok(ForwardPass {
        noise_est,
        clean_est,
        cache: Cache {
            stamp: net.stamp(),
            width: w,
            height: h,
            acts,
        },
    })
}

/// Mean over batch and pixels of `(estimate − reference)²`.
pub fn loss_mse<T: Real>(clean_est: &[Vec<T>], clean_ref: &[Image]) -> Result<f64> {
    if clean_est.len() != clean_ref.len() || clean_est.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "batch sizes differ or are empty: {} estimates, {} references",
            clean_est.len(),
            clean_ref.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (est, r) in clean_est.iter().zip(clean_ref) {
        if est.len() != r.len() {
            return Err(Error::InvalidParameter(format!(
                "estimate has {} pixels, reference {}",
                est.len(),
                r.len()
            )));
        }
        sum += est
            .iter()
            .zip(r.data())
            .map(|(e, x)| (e.as_f64() - x) * (e.as_f64() - x))
            .sum::<f64>();
        count += est.len();
    }
    Ok(sum / count as f64)
}

fn backward_sample<T: Real>(
    net: &ConvNet<T>,
    geo: &Geometry,
    acts: &[Vec<T>],
    reference: &Image,
    scale: T,
) -> Gradients<T> {
    let mut grads = Gradients::zeros_like(net);
    let eps = T::of(EPS_DIV);
    let input = &acts[0];
    let noise = acts.last().expect("output layer");

    // d loss / d noise through x̂ = y / n (zero where the floor is active)
    let mut d_out = vec![T::zero(); geo.plane];
    for y in 0..geo.h {
        for x in 0..geo.w {
            let i = geo.index(x, y);
            let n = noise[i];
            if n > eps {
                let yv = input[i];
                let clean = yv / n;
                let g = scale * (clean - T::of(reference.get(x, y)));
                d_out[i] = -g * yv / (n * n);
            }
        }
    }

    for (l, layer) in net.layers.iter().enumerate().rev() {
        let layer_in = &acts[l];
        let layer_out = &acts[l + 1];
        if layer.relu {
            for (d, &a) in d_out.iter_mut().zip(layer_out) {
                if a <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        let lg = &mut grads.layers[l];
        for (gb, plane) in lg.bias.iter_mut().zip(d_out.chunks_exact(geo.plane)) {
            // pads are zero, so summing the whole plane sums the interior
            *gb = plane.iter().copied().sum();
        }
        let k = layer.in_ch * TAPS;
        let mut col = Vec::with_capacity(k * geo.cols);
        im2col(geo, layer.in_ch, layer_in, 0, geo.cols, &mut col);
        gemm(
            layer.out_ch,
            geo.cols,
            k,
            &d_out,
            View::new(geo.origin, geo.plane, 1),
            &col,
            View::new(0, 1, geo.cols),
            T::zero(),
            &mut lg.weights,
            View::new(0, k, 1),
        );
        if l > 0 {
            let mut d_col = col;
            gemm(
                k,
                layer.out_ch,
                geo.cols,
                &layer.weights,
                View::new(0, 1, k),
                &d_out,
                View::new(geo.origin, geo.plane, 1),
                T::zero(),
                &mut d_col,
                View::new(0, geo.cols, 1),
            );
            // fold the tap rows back onto the padded input planes
            let mut d_in = vec![T::zero(); layer.in_ch * geo.plane];
            for (row, src) in d_col.chunks_exact(geo.cols).enumerate() {
                let (c, tap) = (row / TAPS, row % TAPS);
                let start = c * geo.plane + geo.tap_offset(tap);
                for (d, &s) in d_in[start..start + geo.cols].iter_mut().zip(src) {
                    *d += s;
                }
            }
            // gradients landing on the zero padding are discarded
            geo.clear_pads(&mut d_in);
            d_out = d_in;
        }
    }
    grads
}

/// Exact gradients of [`loss_mse`] with respect to every parameter.
///
/// Per-sample gradients are summed in batch order, so the result does not
/// depend on the thread count.
pub fn backward<T: Real>(net: &ConvNet<T>, cache: &Cache<T>, clean_ref: &[Image]) -> Result<Gradients<T>> {
    if cache.stamp != net.stamp() {
        return Err(Error::StaleCache);
    }
    if clean_ref.len() != cache.acts.len() {
        return Err(Error::InvalidParameter(format!(
            "{} references for a batch of {}",
            clean_ref.len(),
            cache.acts.len()
        )));
    }
    for r in clean_ref {
        if r.dims() != (cache.width, cache.height) {
            return Err(Error::shape(r.dims(), (cache.width, cache.height)));
        }
    }
    let geo = Geometry::new(cache.width, cache.height);
    let count = clean_ref.len() * cache.width * cache.height;
    let scale = T::of(2.0 / count as f64);
    let per_sample: Vec<Gradients<T>> = cache
        .acts
        .par_iter()
        .zip(clean_ref)
        .map(|(acts, r)| backward_sample(net, &geo, acts, r, scale))
        .collect();
    let mut iter = per_sample.into_iter();
    let mut total = iter.next().expect("non-empty batch");
    for g in iter {
        total.add_assign(&g);
    }
    Ok(total)
}

/// Noise estimate for a single image, processed in horizontal strips with a
/// halo of `depth` rows so every output row sees its full receptive field.
fn noise_estimate<T: Real>(net: &ConvNet<T>, img: &Image) -> Vec<T> {
    let (w, h) = img.dims();
    let halo = net.depth();
    let strips: Vec<(usize, usize)> = (0..h)
        .step_by(INFERENCE_STRIP)
        .map(|y0| (y0, (y0 + INFERENCE_STRIP).min(h)))
        .collect();
    let parts: Vec<Vec<T>> = strips
        .par_iter()
        .map(|&(y0, y1)| {
            let top = y0.saturating_sub(halo);
            let bottom = (y1 + halo).min(h);
            let geo = Geometry::new(w, bottom - top);
            let input = geo.pad(&img.data()[top * w..bottom * w]);
            let acts = run_layers(net, &geo, input, false);
            let noise = unpad(&geo, &acts[acts.len() - 1]);
            noise[(y0 - top) * w..(y1 - top) * w].to_vec()
        })
        .collect();
    parts.concat()
}

/// Full-image despeckling; the output is floored at 0.
pub fn denoise_cnn<T: Real>(net: &ConvNet<T>, img: &Image) -> Result<Image> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let noise = noise_estimate(net, img);
    let data = img
        .data()
        .iter()
        .zip(&noise)
        .map(|(&y, &n)| {
            let v = divide(T::of(y), n).as_f64();
            if v.is_finite() {
                v.max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    Image::new(w, h, data)
}
