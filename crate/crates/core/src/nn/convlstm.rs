//! Stacked ConvLSTM scanned along the frequency axis.
//!
//! Each frequency bin is one time step. Gate pre-activations come from a
//! convolution over the antenna axis of `[x_t, h_{t-1}]`:
//!
//! ```text
//! i = σ(·)  f = σ(·)  g = tanh(·)  o = σ(·)
//! c_t = f ⊙ c_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! ```
//!
//! Gate column order in the weight matrix is `[i, f, g, o]`, each `hidden` wide.

use super::layers::{col2im, im2col, Window};
use super::scalar::Real;
use super::tensor::FeatureMap;

/// Parameters of one ConvLSTM layer: weight `(ka, cin + hidden, 4 * hidden)`
/// and bias `4 * hidden`.
#[derive(Clone, Copy, Debug)]
pub struct CellParams<'a, T> {
    pub w: &'a [T],
    pub b: &'a [T],
}

#[derive(Clone, Debug)]
struct StepCache<T> {
    cols: Vec<T>,
    /// Post-activation gates `[i, f, g, o]` per row.
    gates: Vec<T>,
    c_prev: Vec<T>,
    tanh_c: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct LayerCache<T> {
    input: FeatureMap<T>,
    steps: Vec<StepCache<T>>,
}

#[derive(Clone, Debug)]
pub struct ConvLstmCache<T> {
    layers: Vec<LayerCache<T>>,
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn cell_window(ka: usize) -> Window {
    Window::new(1, ka, 1)
}

/// Run one layer over the full sequence. `x` is `(batch, steps, ant, cin)`.
fn layer_forward<T: Real>(x: &FeatureMap<T>, p: CellParams<'_, T>, hidden: usize, ka: usize) -> (FeatureMap<T>, LayerCache<T>) {
    let win = cell_window(ka);
    let (batch, steps, ant) = (x.batch, x.freq, x.ant);
    let zin = x.chan + hidden;
    let k = ka * zin;
    let g4 = 4 * hidden;
    assert_eq!(p.w.len(), k * g4, "convlstm weight shape");
    let rows = batch * ant;
    let mut h = FeatureMap::zeros(batch, 1, ant, hidden);
    let mut c = vec![T::zero(); rows * hidden];
    let mut out = FeatureMap::zeros(batch, steps, ant, hidden);
    let mut caches = Vec::with_capacity(steps);
    for t in 0..steps {
        let z = x.freq_slice(t).concat_channels(&h);
        let cols = im2col(&z, win);
        let mut gates = vec![T::zero(); rows * g4];
        T::gemm(rows, k, g4, &cols, false, p.w, false, T::zero(), &mut gates);
        let c_prev = c.clone();
        let mut tanh_c = vec![T::zero(); rows * hidden];
        for r in 0..rows {
            let gr = &mut gates[r * g4..(r + 1) * g4];
            for u in 0..g4 {
                gr[u] += p.b[u];
            }
            for u in 0..hidden {
                let i = sigmoid(gr[u]);
                let f = sigmoid(gr[hidden + u]);
                let g = gr[2 * hidden + u].tanh();
                let o = sigmoid(gr[3 * hidden + u]);
                gr[u] = i;
                gr[hidden + u] = f;
                gr[2 * hidden + u] = g;
                gr[3 * hidden + u] = o;
                let cn = f * c_prev[r * hidden + u] + i * g;
                let tc = cn.tanh();
                c[r * hidden + u] = cn;
                tanh_c[r * hidden + u] = tc;
                h.data[r * hidden + u] = o * tc;
            }
        }
        out.set_freq_slice(t, &h);
        caches.push(StepCache { cols, gates, c_prev, tanh_c });
    }
    (out, LayerCache { input: x.clone(), steps: caches })
}

/// Backpropagation through time for one layer. Accumulates into `dw`/`db`
/// and returns the gradient with respect to the layer input.
fn layer_backward<T: Real>(
    cache: &LayerCache<T>,
    dout: &FeatureMap<T>,
    p: CellParams<'_, T>,
    hidden: usize,
    ka: usize,
    dw: &mut [T],
    db: &mut [T],
) -> FeatureMap<T> {
    let win = cell_window(ka);
    let x = &cache.input;
    let (batch, steps, ant, cin) = (x.batch, x.freq, x.ant, x.chan);
    let zin = cin + hidden;
    let k = ka * zin;
    let g4 = 4 * hidden;
    let rows = batch * ant;
    let mut dx = FeatureMap::zeros(batch, steps, ant, cin);
    let mut dh_next = vec![T::zero(); rows * hidden];
    let mut dc_next = vec![T::zero(); rows * hidden];
    let mut dgates = vec![T::zero(); rows * g4];
    for t in (0..steps).rev() {
        let sc = &cache.steps[t];
        let dy = dout.freq_slice(t);
        for r in 0..rows {
            let gr = &sc.gates[r * g4..(r + 1) * g4];
            for u in 0..hidden {
                let idx = r * hidden + u;
                let (i, f, g, o) = (gr[u], gr[hidden + u], gr[2 * hidden + u], gr[3 * hidden + u]);
                let tc = sc.tanh_c[idx];
                let dh = dy.data[idx] + dh_next[idx];
                let d_o = dh * tc;
                let dc = dc_next[idx] + dh * o * (T::one() - tc * tc);
                let di = dc * g;
                let dg = dc * i;
                let df = dc * sc.c_prev[idx];
                dc_next[idx] = dc * f;
                let dr = &mut dgates[r * g4..(r + 1) * g4];
                dr[u] = di * i * (T::one() - i);
                dr[hidden + u] = df * f * (T::one() - f);
                dr[2 * hidden + u] = dg * (T::one() - g * g);
                dr[3 * hidden + u] = d_o * o * (T::one() - o);
            }
        }
        T::gemm(k, rows, g4, &sc.cols, true, &dgates, false, T::one(), dw);
        for r in 0..rows {
            for u in 0..g4 {
                db[u] += dgates[r * g4 + u];
            }
        }
        let mut dcols = vec![T::zero(); rows * k];
        T::gemm(rows, g4, k, &dgates, false, p.w, true, T::zero(), &mut dcols);
        let dz = col2im(&dcols, batch, 1, ant, zin, win);
        let (dxt, dh_prev) = dz.split_channels(cin);
        dx.set_freq_slice(t, &dxt);
        dh_next = dh_prev.data;
    }
    dx
}

/// Forward through all layers; `x` is `(batch, steps, ant, cin)`, output is
/// `(batch, steps, ant, hidden)` from the top layer.
pub fn forward<T: Real>(
    x: &FeatureMap<T>,
    layers: &[CellParams<'_, T>],
    hidden: usize,
    ka: usize,
) -> (FeatureMap<T>, ConvLstmCache<T>) {
    let mut caches = Vec::with_capacity(layers.len());
    let mut cur = x.clone();
    for p in layers {
        let (out, cache) = layer_forward(&cur, *p, hidden, ka);
        caches.push(cache);
        cur = out;
    }
    (cur, ConvLstmCache { layers: caches })
}

/// Backward through all layers. `grads[l]` receives `(dw, db)` for layer `l`.
pub fn backward<T: Real>(
    cache: &ConvLstmCache<T>,
    dout: &FeatureMap<T>,
    layers: &[CellParams<'_, T>],
    hidden: usize,
    ka: usize,
    grads: &mut [(&mut [T], &mut [T])],
) -> FeatureMap<T> {
    let mut d = dout.clone();
    for l in (0..layers.len()).rev() {
        let (dw, db) = &mut grads[l];
        d = layer_backward(&cache.layers[l], &d, layers[l], hidden, ka, dw, db);
    }
    d
}
