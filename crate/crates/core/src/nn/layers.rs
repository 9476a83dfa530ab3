//! Forward and backward kernels for the individual layer types.
//!
//! Every kernel works on channel-last [`FeatureMap`]s. Convolutions are lowered
//! to GEMM through an explicit patch matrix; the transposed convolution is the
//! exact adjoint of a strided convolution with the same window.

use rand::Rng;

use super::scalar::Real;
use super::tensor::FeatureMap;

/// Sliding-window geometry along (frequency, antenna).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub kf: usize,
    pub ka: usize,
    /// Stride along frequency. The antenna stride is always 1.
    pub stride: usize,
}

impl Window {
    pub fn new(kf: usize, ka: usize, stride: usize) -> Self {
        assert!(kf >= 1 && ka >= 1 && stride >= 1);
        Window { kf, ka, stride }
    }

    /// Leading pad along frequency; trailing pad is whatever keeps `out = in / stride`.
    pub fn pad_f(&self) -> usize {
        self.kf.saturating_sub(self.stride) / 2
    }

    pub fn pad_a(&self) -> usize {
        (self.ka - 1) / 2
    }

    pub fn taps(&self) -> usize {
        self.kf * self.ka
    }
}

/// Valid `ka` range for antenna position `a`: taps whose source antenna
/// `a + ka - pad_a` falls inside `[0, ant)`.
#[inline]
fn tap_span(a: usize, ant: usize, win: Window) -> (usize, usize) {
    let pa = win.pad_a();
    let lo = pa.saturating_sub(a);
    let hi = (ant + pa - a).min(win.ka);
    (lo, hi.max(lo))
}

/// Patch matrix of shape `(batch * out_f * ant, kf * ka * chan)` with
/// `out_f = x.freq / stride`. Out-of-range taps read zero.
pub fn im2col<T: Real>(x: &FeatureMap<T>, win: Window) -> Vec<T> {
    let out_f = x.freq / win.stride;
    let c = x.chan;
    let width = win.taps() * c;
    let mut cols = vec![T::zero(); x.batch * out_f * x.ant * width];
    let pf = win.pad_f() as isize;
    let pa = win.pad_a();
    for b in 0..x.batch {
        for fo in 0..out_f {
            let row0 = (b * out_f + fo) * x.ant;
            for kf in 0..win.kf {
                let fi = (win.stride * fo) as isize + kf as isize - pf;
                if fi < 0 || fi >= x.freq as isize {
                    continue;
                }
                let fi = fi as usize;
                for a in 0..x.ant {
                    let (lo, hi) = tap_span(a, x.ant, win);
                    if lo >= hi {
                        continue;
                    }
                    let src = x.index(b, fi, a + lo - pa, 0);
                    let dst = (row0 + a) * width + (kf * win.ka + lo) * c;
                    let n = (hi - lo) * c;
                    cols[dst..dst + n].copy_from_slice(&x.data[src..src + n]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch rows back and sums overlaps into a map
/// of shape `(batch, freq, ant, chan)`.
pub fn col2im<T: Real>(
    cols: &[T],
    batch: usize,
    freq: usize,
    ant: usize,
    chan: usize,
    win: Window,
) -> FeatureMap<T> {
    let out_f = freq / win.stride;
    let width = win.taps() * chan;
    debug_assert_eq!(cols.len(), batch * out_f * ant * width);
    let mut x = FeatureMap::zeros(batch, freq, ant, chan);
    let pf = win.pad_f() as isize;
    let pa = win.pad_a();
    for b in 0..batch {
        for fo in 0..out_f {
            let row0 = (b * out_f + fo) * ant;
            for kf in 0..win.kf {
                let fi = (win.stride * fo) as isize + kf as isize - pf;
                if fi < 0 || fi >= freq as isize {
                    continue;
                }
                let fi = fi as usize;
                for a in 0..ant {
                    let (lo, hi) = tap_span(a, ant, win);
                    if lo >= hi {
                        continue;
                    }
                    let dst = x.index(b, fi, a + lo - pa, 0);
                    let src = (row0 + a) * width + (kf * win.ka + lo) * chan;
                    let n = (hi - lo) * chan;
                    for (d, s) in x.data[dst..dst + n].iter_mut().zip(&cols[src..src + n]) {
                        *d += *s;
                    }
                }
            }
        }
    }
    x
}

fn add_bias<T: Real>(y: &mut [T], bias: &[T]) {
    for row in y.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

fn accumulate_bias_grad<T: Real>(dy: &[T], db: &mut [T]) {
    for row in dy.chunks_exact(db.len()) {
        for (g, v) in db.iter_mut().zip(row) {
            *g += *v;
        }
    }
}

/// Batch elements per lowering chunk, sized so a chunk's patch matrix stays
/// cache resident.
fn chunk_batches(rows_per_item: usize, width: usize) -> usize {
    const TARGET: usize = 1 << 16;
    (TARGET / (rows_per_item * width).max(1)).max(1)
}

/// Batch elements `[start, end)` of `x` as a standalone map.
fn batch_range<T: Real>(x: &FeatureMap<T>, start: usize, end: usize) -> FeatureMap<T> {
    let per = x.freq * x.ant * x.chan;
    FeatureMap::from_vec(end - start, x.freq, x.ant, x.chan, x.data[start * per..end * per].to_vec())
}

/// Same-padded convolution, stride 1. Weight layout `(kf, ka, cin, cout)`.
pub fn conv_forward<T: Real>(x: &FeatureMap<T>, w: &[T], bias: &[T], win: Window, cout: usize) -> FeatureMap<T> {
    debug_assert_eq!(win.stride, 1);
    let k = win.taps() * x.chan;
    assert_eq!(w.len(), k * cout, "conv weight shape");
    let mut y = FeatureMap::zeros(x.batch, x.freq, x.ant, cout);
    let per_rows = x.freq * x.ant;
    let step = chunk_batches(per_rows, k);
    let mut b0 = 0;
    while b0 < x.batch {
        let b1 = (b0 + step).min(x.batch);
        let cols = im2col(&batch_range(x, b0, b1), win);
        let rows = (b1 - b0) * per_rows;
        let out = &mut y.data[b0 * per_rows * cout..b1 * per_rows * cout];
        T::gemm(rows, k, cout, &cols, false, w, false, T::zero(), out);
        b0 = b1;
    }
    add_bias(&mut y.data, bias);
    y
}

/// Backward of [`conv_forward`] given its input `x`; accumulates into
/// `dw`/`db` and returns `dx` when requested.
pub fn conv_backward<T: Real>(
    x: &FeatureMap<T>,
    dy: &FeatureMap<T>,
    w: &[T],
    win: Window,
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<FeatureMap<T>> {
    let cin = x.chan;
    let k = win.taps() * cin;
    let cout = dy.chan;
    accumulate_bias_grad(&dy.data, db);
    let mut dx = need_dx.then(|| FeatureMap::zeros(x.batch, x.freq, x.ant, cin));
    let per_rows = x.freq * x.ant;
    let step = chunk_batches(per_rows, k);
    let mut b0 = 0;
    while b0 < x.batch {
        let b1 = (b0 + step).min(x.batch);
        let rows = (b1 - b0) * per_rows;
        let cols = im2col(&batch_range(x, b0, b1), win);
        let dyc = &dy.data[b0 * per_rows * cout..b1 * per_rows * cout];
        T::gemm(k, rows, cout, &cols, true, dyc, false, T::one(), dw);
        if let Some(dx) = dx.as_mut() {
            let mut dcols = cols;
            T::gemm(rows, cout, k, dyc, false, w, true, T::zero(), &mut dcols);
            let part = col2im(&dcols, b1 - b0, x.freq, x.ant, cin, win);
            dx.data[b0 * per_rows * cin..b1 * per_rows * cin].copy_from_slice(&part.data);
        }
        b0 = b1;
    }
    dx
}

/// Transposed convolution upsampling frequency by `win.stride`.
/// Weight layout `(cin, kf, ka, cout)`, i.e. a `cin x (taps * cout)` matrix.
pub fn tconv_forward<T: Real>(x: &FeatureMap<T>, w: &[T], bias: &[T], win: Window, cout: usize) -> FeatureMap<T> {
    let k = win.taps() * cout;
    assert_eq!(w.len(), x.chan * k, "transposed conv weight shape");
    let out_f = x.freq * win.stride;
    let mut y = FeatureMap::zeros(x.batch, out_f, x.ant, cout);
    let per_rows = x.freq * x.ant;
    let per_out = out_f * x.ant * cout;
    let step = chunk_batches(per_rows, k);
    let mut b0 = 0;
    while b0 < x.batch {
        let b1 = (b0 + step).min(x.batch);
        let rows = (b1 - b0) * per_rows;
        let mut cols = vec![T::zero(); rows * k];
        let xc = &x.data[b0 * per_rows * x.chan..b1 * per_rows * x.chan];
        T::gemm(rows, x.chan, k, xc, false, w, false, T::zero(), &mut cols);
        let part = col2im(&cols, b1 - b0, out_f, x.ant, cout, win);
        y.data[b0 * per_out..b1 * per_out].copy_from_slice(&part.data);
        b0 = b1;
    }
    add_bias(&mut y.data, bias);
    y
}

/// Backward of [`tconv_forward`]; `x` is the forward input.
pub fn tconv_backward<T: Real>(
    x: &FeatureMap<T>,
    dy: &FeatureMap<T>,
    w: &[T],
    win: Window,
    dw: &mut [T],
    db: &mut [T],
) -> FeatureMap<T> {
    let k = win.taps() * dy.chan;
    let cin = x.chan;
    accumulate_bias_grad(&dy.data, db);
    let mut dx = FeatureMap::zeros(x.batch, x.freq, x.ant, cin);
    let per_rows = x.freq * x.ant;
    let step = chunk_batches(per_rows, k);
    let mut b0 = 0;
    while b0 < x.batch {
        let b1 = (b0 + step).min(x.batch);
        let rows = (b1 - b0) * per_rows;
        let dcols = im2col(&batch_range(dy, b0, b1), win);
        let xc = &x.data[b0 * per_rows * cin..b1 * per_rows * cin];
        T::gemm(cin, rows, k, xc, true, &dcols, false, T::one(), dw);
        T::gemm(rows, k, cin, &dcols, false, w, true, T::zero(), &mut dx.data[b0 * per_rows * cin..b1 * per_rows * cin]);
        b0 = b1;
    }
    dx
}

pub fn relu_inplace<T: Real>(x: &mut FeatureMap<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Gate `dy` by the ReLU output `y` (gradient passes where `y > 0`).
pub fn relu_backward_inplace<T: Real>(y: &FeatureMap<T>, dy: &mut FeatureMap<T>) {
    for (g, v) in dy.data.iter_mut().zip(&y.data) {
        if *v <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Max pooling by `factor` along frequency. Returns the pooled map and, per
/// output element, the offset (0..factor) of the winning input. Ties go to the
/// first index.
pub fn maxpool_forward<T: Real>(x: &FeatureMap<T>, factor: usize) -> (FeatureMap<T>, Vec<u8>) {
    assert!(factor >= 1 && x.freq % factor == 0, "pool factor must divide frequency length");
    let out_f = x.freq / factor;
    let mut y = FeatureMap::zeros(x.batch, out_f, x.ant, x.chan);
    let mut arg = vec![0u8; y.data.len()];
    let run = x.ant * x.chan;
    for b in 0..x.batch {
        for fo in 0..out_f {
            let dst = y.index(b, fo, 0, 0);
            for e in 0..run {
                let mut best = x.data[x.index(b, fo * factor, 0, 0) + e];
                let mut best_i = 0u8;
                for p in 1..factor {
                    let v = x.data[x.index(b, fo * factor + p, 0, 0) + e];
                    if v > best {
                        best = v;
                        best_i = p as u8;
                    }
                }
                y.data[dst + e] = best;
                arg[dst + e] = best_i;
            }
        }
    }
    (y, arg)
}

pub fn maxpool_backward<T: Real>(dy: &FeatureMap<T>, arg: &[u8], factor: usize) -> FeatureMap<T> {
    let mut dx = FeatureMap::zeros(dy.batch, dy.freq * factor, dy.ant, dy.chan);
    let run = dy.ant * dy.chan;
    for b in 0..dy.batch {
        for fo in 0..dy.freq {
            let src = dy.index(b, fo, 0, 0);
            for e in 0..run {
                let p = arg[src + e] as usize;
                let dst = dx.index(b, fo * factor + p, 0, 0) + e;
                dx.data[dst] += dy.data[src + e];
            }
        }
    }
    dx
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`. Returns the
/// multiplicative mask.
pub fn dropout_forward<T: Real, R: Rng + ?Sized>(x: &mut FeatureMap<T>, rate: f64, rng: &mut R) -> Vec<T> {
    if rate <= 0.0 {
        return vec![T::one(); x.data.len()];
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.data.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    for (v, m) in x.data.iter_mut().zip(&mask) {
        *v *= *m;
    }
    mask
}

pub fn dropout_backward_inplace<T: Real>(dy: &mut FeatureMap<T>, mask: &[T]) {
    for (g, m) in dy.data.iter_mut().zip(mask) {
        *g *= *m;
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel statistics cached by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and biased batch variance, for the running-statistics update.
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Training-mode batch norm over all (batch, freq, antenna) positions.
pub fn batchnorm_train<T: Real>(x: &mut FeatureMap<T>, gamma: &[T], beta: &[T]) -> BatchNormCache<T> {
    let c = x.chan;
    let n = T::lit(x.rows() as f64);
    let mut mean = vec![T::zero(); c];
    for row in x.data.chunks_exact(c) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += *v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    let mut var = vec![T::zero(); c];
    for row in x.data.chunks_exact(c) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = *v - *m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s = *s / n);
    let eps = T::lit(BN_EPS);
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.data.len()];
    for (row, hrow) in x.data.chunks_exact_mut(c).zip(xhat.chunks_exact_mut(c)) {
        for ch in 0..c {
            let h = (row[ch] - mean[ch]) * inv_std[ch];
            hrow[ch] = h;
            row[ch] = gamma[ch] * h + beta[ch];
        }
    }
    BatchNormCache { xhat, inv_std, mean, var }
}

/// Exponential moving average with momentum [`BN_MOMENTUM`].
pub fn update_running_stats<T: Real>(cache: &BatchNormCache<T>, running_mean: &mut [T], running_var: &mut [T]) {
    let mom = T::lit(BN_MOMENTUM);
    for ch in 0..cache.mean.len() {
        running_mean[ch] = mom * running_mean[ch] + (T::one() - mom) * cache.mean[ch];
        running_var[ch] = mom * running_var[ch] + (T::one() - mom) * cache.var[ch];
    }
}

/// Inference-mode batch norm with running statistics.
pub fn batchnorm_infer<T: Real>(x: &mut FeatureMap<T>, gamma: &[T], beta: &[T], running_mean: &[T], running_var: &[T]) {
    let c = x.chan;
    let eps = T::lit(BN_EPS);
    let scale: Vec<T> = (0..c).map(|ch| gamma[ch] / (running_var[ch] + eps).sqrt()).collect();
    for row in x.data.chunks_exact_mut(c) {
        for ch in 0..c {
            row[ch] = (row[ch] - running_mean[ch]) * scale[ch] + beta[ch];
        }
    }
}

pub fn batchnorm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    dy: &FeatureMap<T>,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> FeatureMap<T> {
    let c = dy.chan;
    let n = T::lit(dy.rows() as f64);
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for (g, h) in dy.data.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for ch in 0..c {
            sum_dy[ch] += g[ch];
            sum_dy_xhat[ch] += g[ch] * h[ch];
        }
    }
    for ch in 0..c {
        dgamma[ch] += sum_dy_xhat[ch];
        dbeta[ch] += sum_dy[ch];
    }
    let mut dx = FeatureMap::zeros(dy.batch, dy.freq, dy.ant, c);
    for ((out, g), h) in dx.data.chunks_exact_mut(c).zip(dy.data.chunks_exact(c)).zip(cache.xhat.chunks_exact(c)) {
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / n;
            out[ch] = k * (n * g[ch] - sum_dy[ch] - h[ch] * sum_dy_xhat[ch]);
        }
    }
    dx
}

/// Mean squared error over unmasked frequency bins. `mask` has one entry per
/// `(batch, freq)`; nonzero means valid. Returns `None` when nothing is valid.
pub fn masked_mse<T: Real>(pred: &FeatureMap<T>, label: &FeatureMap<T>, mask: &[T]) -> Option<T> {
    assert!(pred.same_shape(label), "loss: prediction/label shape mismatch");
    assert_eq!(mask.len(), pred.batch * pred.freq, "loss: mask length");
    let run = pred.ant * pred.chan;
    let mut sum = T::zero();
    let mut count = 0usize;
    for (bin, m) in mask.iter().enumerate() {
        if *m == T::zero() {
            continue;
        }
        count += run;
        for e in bin * run..(bin + 1) * run {
            let d = pred.data[e] - label.data[e];
            sum += d * d;
        }
    }
    (count > 0).then(|| sum / T::lit(count as f64))
}

/// Gradient of [`masked_mse`] with respect to the prediction.
pub fn masked_mse_grad<T: Real>(pred: &FeatureMap<T>, label: &FeatureMap<T>, mask: &[T]) -> FeatureMap<T> {
    let run = pred.ant * pred.chan;
    let valid = mask.iter().filter(|m| **m != T::zero()).count() * run;
    let mut grad = FeatureMap::zeros(pred.batch, pred.freq, pred.ant, pred.chan);
    if valid == 0 {
        return grad;
    }
    let scale = T::lit(2.0 / valid as f64);
    for (bin, m) in mask.iter().enumerate() {
        if *m == T::zero() {
            continue;
        }
        for e in bin * run..(bin + 1) * run {
            grad.data[e] = scale * (pred.data[e] - label.data[e]);
        }
    }
    grad
}
