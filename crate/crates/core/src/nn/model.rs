//! Encoder-decoder estimator with skip connections and an optional ConvLSTM
//! bottleneck.
//!
//! Topology for `n` blocks with channel ladder `C_b = base * 2^(b-1)`:
//!
//! ```text
//! input ─ enc1 ─ enc2 ─ … ─ encN ─ mid ─┐
//!           │      │           └──────── dec1 ─ dec2 ─ … ─ decN ─ out(1x1)
//!           │      └──────────────────────────────┘        │
//!           └──────────────────────────────────────────────┘
//! ```
//!
//! * enc b: conv → ReLU → conv → ReLU → max-pool (frequency); the last two
//!   blocks add dropout then batch norm.
//! * mid: two convolutions (`cnn`) or stacked ConvLSTM + 1x1 projection
//!   (`cnn-convlstm`).
//! * dec d (pairs with enc `N+1-d`): concat[prev, enc] → conv → ReLU → conv →
//!   ReLU → transposed conv (frequency upsampling) → ReLU.
//! * out: linear 1x1 convolution to one channel.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::convlstm::{self, CellParams, ConvLstmCache};
use super::layers::*;
use super::scalar::Real;
use super::tensor::{FeatureMap, Tensor, TensorMap};
use super::EstimatorError;
use crate::rng::{self, Domain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Cnn,
    CnnConvlstm,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Cnn => "cnn",
            Variant::CnnConvlstm => "cnn-convlstm",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cnn" => Ok(Variant::Cnn),
            "cnn-convlstm" | "cnn+convlstm" | "convlstm" => Ok(Variant::CnnConvlstm),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

/// Architecture description. Serialized into checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub n_blocks: usize,
    pub base_channels: usize,
    /// (frequency, antenna) extent of every convolution.
    pub conv_kernel: [usize; 2],
    /// (frequency, antenna) pooling factor. Antenna pooling must be 1.
    pub pool: [usize; 2],
    pub dropout_rate: f64,
    pub convlstm_hidden: usize,
    pub convlstm_layers: usize,
    /// (F_pad, antenna pairs, input channels).
    pub input_dims: [usize; 3],
}

impl ModelSpec {
    /// Subcarrier-integrated network on `f_pad` frequency bins.
    pub fn integrated(variant: Variant, f_pad: usize, ant: usize, base_channels: usize) -> Self {
        ModelSpec {
            variant,
            n_blocks: 4,
            base_channels,
            conv_kernel: [6, 2],
            pool: [2, 1],
            dropout_rate: 0.5,
            convlstm_hidden: 8,
            convlstm_layers: 2,
            input_dims: [f_pad, ant, 2],
        }
    }

    /// Subcarrier-individual network: the same block stacks without frequency
    /// pooling, frequency kernel extent 1.
    pub fn individual(variant: Variant, ant: usize, base_channels: usize) -> Self {
        ModelSpec { conv_kernel: [1, 2], pool: [1, 1], input_dims: [1, ant, 2], ..Self::integrated(variant, 1, ant, base_channels) }
    }

    /// Network for a dataset whose samples span `group` subcarriers padded to `f_pad`.
    pub fn for_group(variant: Variant, group: usize, f_pad: usize, ant: usize, base_channels: usize) -> Self {
        if group == 1 {
            Self::individual(variant, ant, base_channels)
        } else {
            Self::integrated(variant, f_pad, ant, base_channels)
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: String| Err(EstimatorError::InvalidSpec(m));
        let [f, a, c] = self.input_dims;
        if f == 0 || a == 0 || c == 0 {
            return bad("input dimensions must be positive".into());
        }
        if self.base_channels == 0 || self.conv_kernel.contains(&0) || self.pool.contains(&0) {
            return bad("channels, kernel and pool extents must be positive".into());
        }
        if self.pool[1] != 1 {
            return bad("pooling along the antenna axis is not supported".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        let stride = self.pool[0].pow(self.n_blocks as u32);
        if f % stride != 0 {
            return bad(format!("F_pad = {f} not divisible by {}^{} = {stride}", self.pool[0], self.n_blocks));
        }
        if self.variant == Variant::CnnConvlstm && (self.convlstm_hidden == 0 || self.convlstm_layers == 0) {
            return bad("ConvLSTM needs at least one layer and one hidden channel".into());
        }
        Ok(())
    }

    /// Output channels of encoder block `b` (0-based).
    pub fn channels(&self, b: usize) -> usize {
        self.base_channels << b
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.n_blocks.saturating_sub(1))
    }

    fn conv_window(&self) -> Window {
        Window::new(self.conv_kernel[0], self.conv_kernel[1], 1)
    }

    fn up_window(&self) -> Window {
        Window::new(self.conv_kernel[0], self.conv_kernel[1], self.pool[0])
    }

    fn has_norm(&self, b: usize) -> bool {
        b + 2 >= self.n_blocks
    }

    /// Every parameter key with its shape, in construction order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let [kf, ka] = self.conv_kernel;
        let mut out = Vec::new();
        let conv = |out: &mut Vec<(String, Vec<usize>)>, key: String, cin: usize, cout: usize| {
            out.push((format!("{key}.w"), vec![kf, ka, cin, cout]));
            out.push((format!("{key}.b"), vec![cout]));
        };
        let mut cin = self.input_dims[2];
        for b in 0..self.n_blocks {
            let c = self.channels(b);
            conv(&mut out, format!("enc{}.conv1", b + 1), cin, c);
            conv(&mut out, format!("enc{}.conv2", b + 1), c, c);
            if self.has_norm(b) {
                out.push((format!("enc{}.bn.gamma", b + 1), vec![c]));
                out.push((format!("enc{}.bn.beta", b + 1), vec![c]));
            }
            cin = c;
        }
        let cm = if self.n_blocks == 0 { self.input_dims[2] } else { self.bottleneck_channels() };
        match self.variant {
            Variant::Cnn => {
                conv(&mut out, "mid.conv1".into(), cm, cm);
                conv(&mut out, "mid.conv2".into(), cm, cm);
            }
            Variant::CnnConvlstm => {
                let h = self.convlstm_hidden;
                let mut lin = cm;
                for l in 0..self.convlstm_layers {
                    out.push((format!("mid.lstm{}.w", l + 1), vec![ka, lin + h, 4 * h]));
                    out.push((format!("mid.lstm{}.b", l + 1), vec![4 * h]));
                    lin = h;
                }
                out.push(("mid.proj.w".into(), vec![1, 1, h, cm]));
                out.push(("mid.proj.b".into(), vec![cm]));
            }
        }
        for d in 0..self.n_blocks {
            let b = self.n_blocks - 1 - d;
            let c = self.channels(b);
            let cup = self.channels(b.saturating_sub(1));
            conv(&mut out, format!("dec{}.conv1", d + 1), 2 * c, c);
            conv(&mut out, format!("dec{}.conv2", d + 1), c, c);
            out.push((format!("dec{}.up.w", d + 1), vec![c, kf, ka, cup]));
            out.push((format!("dec{}.up.b", d + 1), vec![cup]));
        }
        let cfin = if self.n_blocks == 0 { cm } else { self.channels(0) };
        out.push(("out.w".into(), vec![1, 1, cfin, 1]));
        out.push(("out.b".into(), vec![1]));
        out
    }

    pub fn state_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for b in 0..self.n_blocks {
            if self.has_norm(b) {
                let c = self.channels(b);
                out.push((format!("enc{}.bn.running_mean", b + 1), vec![c]));
                out.push((format!("enc{}.bn.running_var", b + 1), vec![c]));
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// Learned parameters plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T> {
    pub params: TensorMap<T>,
    pub state: TensorMap<T>,
}

/// Gradients keyed like [`ModelWeights::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads<T> {
    pub grads: TensorMap<T>,
}

impl<T: Real> LayerGrads<T> {
    pub fn zeros_like(w: &ModelWeights<T>) -> Self {
        LayerGrads { grads: w.params.iter().map(|(k, v)| (k.clone(), Tensor::zeros(&v.shape))).collect() }
    }

    pub fn is_finite(&self) -> Result<(), EstimatorError> {
        for (k, g) in &self.grads {
            if !g.data.iter().all(|v| v.is_finite()) {
                return Err(EstimatorError::NonFinite { layer: k.clone() });
            }
        }
        Ok(())
    }

    fn take(&mut self, key: &str) -> Vec<T> {
        std::mem::take(&mut self.grads.get_mut(key).unwrap_or_else(|| panic!("missing grad `{key}`")).data)
    }

    fn put(&mut self, key: &str, data: Vec<T>) {
        self.grads.get_mut(key).expect("grad key").data = data;
    }
}

impl<T: Real> ModelWeights<T> {
    /// All parameters zero (batch-norm scale included); running variance 1.
    pub fn zeros(spec: &ModelSpec) -> Self {
        let params = spec.param_shapes().into_iter().map(|(k, s)| (k, Tensor::zeros(&s))).collect();
        ModelWeights { params, state: Self::fresh_state(spec) }
    }

    fn fresh_state(spec: &ModelSpec) -> TensorMap<T> {
        spec.state_shapes()
            .into_iter()
            .map(|(k, s)| {
                let fill = if k.ends_with("running_var") { T::one() } else { T::zero() };
                (k, Tensor::filled(&s, fill))
            })
            .collect()
    }

    pub fn param(&self, key: &str) -> &[T] {
        &self.params.get(key).unwrap_or_else(|| panic!("missing parameter `{key}`")).data
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().chain(self.state.values()).all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Fold the batch statistics recorded by a training-mode forward pass
    /// into the running statistics.
    pub fn apply_running_stats(&mut self, tape: &Tape<T>) {
        for (b, enc) in tape.encoders.iter().enumerate() {
            if let Some(bn) = &enc.bn {
                let mk = format!("enc{}.bn.running_mean", b + 1);
                let vk = format!("enc{}.bn.running_var", b + 1);
                let mut mean = std::mem::take(&mut self.state.get_mut(&mk).expect("bn state").data);
                let var = &mut self.state.get_mut(&vk).expect("bn state").data;
                update_running_stats(bn, &mut mean, var);
                self.state.get_mut(&mk).expect("bn state").data = mean;
            }
        }
    }
}

/// Deterministic initialization: fan-in scaled uniform weights, zero biases,
/// unit batch-norm scale, ConvLSTM forget-gate bias +1. Each tensor draws from
/// its own stream keyed by its name, so shared layers initialize identically
/// across variants.
pub fn build_model<T: Real>(spec: &ModelSpec, seed: u64) -> Result<ModelWeights<T>, EstimatorError> {
    spec.validate()?;
    let mut w = ModelWeights::<T>::zeros(spec);
    let stride = spec.pool[0];
    for (key, t) in w.params.iter_mut() {
        if key.ends_with(".bn.gamma") {
            t.data.iter_mut().for_each(|v| *v = T::one());
            continue;
        }
        if key.starts_with("mid.lstm") && key.ends_with(".b") {
            let h = t.len() / 4;
            t.data[h..2 * h].iter_mut().for_each(|v| *v = T::one());
            continue;
        }
        if !key.ends_with(".w") {
            continue;
        }
        let s = &t.shape;
        let (fan_in, gain) = if key.ends_with(".up.w") {
            ((s[0] * s[1] * s[2]) as f64 / stride as f64, 6.0)
        } else if key.starts_with("mid.lstm") {
            ((s[0] * s[1]) as f64, 3.0)
        } else if key == "out.w" {
            ((s[0] * s[1] * s[2]) as f64, 3.0)
        } else {
            ((s[0] * s[1] * s[2]) as f64, 6.0)
        };
        let limit = (gain / fan_in.max(1.0)).sqrt();
        let mut rng = rng::stream(seed, Domain::Init, rng::fnv1a(key));
        for v in &mut t.data {
            *v = T::lit(rng.random_range(-limit..limit));
        }
    }
    Ok(w)
}

/// Forward-pass mode. Training mode enables dropout (drawing from the given
/// stream) and uses batch statistics in batch norm.
pub enum Mode<'r> {
    Train(&'r mut dyn RngCore),
    Infer,
}

struct ConvRecord<T> {
    input: FeatureMap<T>,
    /// Post-ReLU output (for ReLU layers) or raw output.
    out: FeatureMap<T>,
}

pub struct EncoderTape<T> {
    conv1: ConvRecord<T>,
    conv2: ConvRecord<T>,
    pool_arg: Vec<u8>,
    dropout: Option<Vec<T>>,
    bn: Option<BatchNormCache<T>>,
}

struct DecoderTape<T> {
    conv1: ConvRecord<T>,
    conv2: ConvRecord<T>,
    up_out: FeatureMap<T>,
    skip_chan: usize,
}

enum MidTape<T> {
    Cnn { conv1: ConvRecord<T>, conv2: ConvRecord<T> },
    ConvLstm { cache: ConvLstmCache<T>, proj: ConvRecord<T> },
}

/// Everything the backward pass needs from one forward pass.
pub struct Tape<T> {
    encoders: Vec<EncoderTape<T>>,
    mid: MidTape<T>,
    decoders: Vec<DecoderTape<T>>,
    out: ConvRecord<T>,
    training: bool,
}

fn check_finite<T: Real>(x: &FeatureMap<T>, layer: &str) -> Result<(), EstimatorError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(EstimatorError::NonFinite { layer: layer.to_string() })
    }
}

fn conv_relu<T: Real>(w: &ModelWeights<T>, key: &str, x: &FeatureMap<T>, win: Window, cout: usize, relu: bool) -> ConvRecord<T> {
    let mut out = conv_forward(x, w.param(&format!("{key}.w")), w.param(&format!("{key}.b")), win, cout);
    if relu {
        relu_inplace(&mut out);
    }
    ConvRecord { input: x.clone(), out }
}

fn conv_relu_back<T: Real>(
    w: &ModelWeights<T>,
    g: &mut LayerGrads<T>,
    key: &str,
    rec: &ConvRecord<T>,
    mut dy: FeatureMap<T>,
    win: Window,
    relu: bool,
    need_dx: bool,
) -> Option<FeatureMap<T>> {
    if relu {
        relu_backward_inplace(&rec.out, &mut dy);
    }
    let (wk, bk) = (format!("{key}.w"), format!("{key}.b"));
    let mut dw = g.take(&wk);
    let mut db = g.take(&bk);
    let dx = conv_backward(&rec.input, &dy, w.param(&wk), win, &mut dw, &mut db, need_dx);
    g.put(&wk, dw);
    g.put(&bk, db);
    dx
}

/// Run the network on a `(batch, F_pad, A, 2)` input. Returns the
/// `(batch, F_pad, A, 1)` prediction and the tape for [`backward`].
pub fn forward<T: Real>(
    weights: &ModelWeights<T>,
    spec: &ModelSpec,
    input: &FeatureMap<T>,
    mut mode: Mode<'_>,
) -> Result<(FeatureMap<T>, Tape<T>), EstimatorError> {
    let [f, a, c] = spec.input_dims;
    if input.freq != f || input.ant != a || input.chan != c {
        return Err(EstimatorError::Shape(format!(
            "input ({}, {}, {}) does not match spec ({f}, {a}, {c})",
            input.freq, input.ant, input.chan
        )));
    }
    let training = matches!(mode, Mode::Train(_));
    let win = spec.conv_window();
    let pool = spec.pool[0];
    let mut x = input.clone();
    let mut encoders = Vec::with_capacity(spec.n_blocks);
    let mut skips = Vec::with_capacity(spec.n_blocks);
    for b in 0..spec.n_blocks {
        let ch = spec.channels(b);
        let name = format!("enc{}", b + 1);
        let conv1 = conv_relu(weights, &format!("{name}.conv1"), &x, win, ch, true);
        let conv2 = conv_relu(weights, &format!("{name}.conv2"), &conv1.out, win, ch, true);
        let (mut out, pool_arg) = maxpool_forward(&conv2.out, pool);
        let (mut dropout, mut bn) = (None, None);
        if spec.has_norm(b) {
            let gamma = weights.param(&format!("{name}.bn.gamma"));
            let beta = weights.param(&format!("{name}.bn.beta"));
            match &mut mode {
                Mode::Train(rng) => {
                    dropout = Some(dropout_forward(&mut out, spec.dropout_rate, &mut **rng));
                    bn = Some(batchnorm_train(&mut out, gamma, beta));
                }
                Mode::Infer => {
                    let rm = &weights.state[&format!("{name}.bn.running_mean")].data;
                    let rv = &weights.state[&format!("{name}.bn.running_var")].data;
                    batchnorm_infer(&mut out, gamma, beta, rm, rv);
                }
            }
        }
        check_finite(&out, &name)?;
        encoders.push(EncoderTape { conv1, conv2, pool_arg, dropout, bn });
        skips.push(out.clone());
        x = out;
    }

    let cm = x.chan;
    let (mut x, mid) = match spec.variant {
        Variant::Cnn => {
            let conv1 = conv_relu(weights, "mid.conv1", &x, win, cm, true);
            let conv2 = conv_relu(weights, "mid.conv2", &conv1.out, win, cm, true);
            (conv2.out.clone(), MidTape::Cnn { conv1, conv2 })
        }
        Variant::CnnConvlstm => {
            let keys = lstm_keys(spec);
            let cells: Vec<CellParams<'_, T>> =
                keys.iter().map(|(wk, bk)| CellParams { w: weights.param(wk), b: weights.param(bk) }).collect();
            let (h, cache) = convlstm::forward(&x, &cells, spec.convlstm_hidden, spec.conv_kernel[1]);
            let proj = conv_relu(weights, "mid.proj", &h, Window::new(1, 1, 1), cm, true);
            (proj.out.clone(), MidTape::ConvLstm { cache, proj })
        }
    };
    check_finite(&x, "mid")?;

    let up = spec.up_window();
    let mut decoders = Vec::with_capacity(spec.n_blocks);
    for d in 0..spec.n_blocks {
        let b = spec.n_blocks - 1 - d;
        let ch = spec.channels(b);
        let cup = spec.channels(b.saturating_sub(1));
        let name = format!("dec{}", d + 1);
        let cat = x.concat_channels(&skips[b]);
        let conv1 = conv_relu(weights, &format!("{name}.conv1"), &cat, win, ch, true);
        let conv2 = conv_relu(weights, &format!("{name}.conv2"), &conv1.out, win, ch, true);
        let mut up_out =
            tconv_forward(&conv2.out, weights.param(&format!("{name}.up.w")), weights.param(&format!("{name}.up.b")), up, cup);
        relu_inplace(&mut up_out);
        check_finite(&up_out, &name)?;
        x = up_out.clone();
        decoders.push(DecoderTape { conv1, conv2, up_out, skip_chan: skips[b].chan });
    }

    let out = conv_relu(weights, "out", &x, Window::new(1, 1, 1), 1, false);
    check_finite(&out.out, "out")?;
    let pred = out.out.clone();
    Ok((pred, Tape { encoders, mid, decoders, out, training }))
}

fn lstm_keys(spec: &ModelSpec) -> Vec<(String, String)> {
    (1..=spec.convlstm_layers).map(|l| (format!("mid.lstm{l}.w"), format!("mid.lstm{l}.b"))).collect()
}

/// Exact gradients of a scalar objective given `dpred = ∂objective/∂prediction`.
pub fn backward<T: Real>(
    weights: &ModelWeights<T>,
    spec: &ModelSpec,
    tape: &Tape<T>,
    dpred: &FeatureMap<T>,
) -> Result<LayerGrads<T>, EstimatorError> {
    let mut g = LayerGrads::zeros_like(weights);
    let win = spec.conv_window();
    let up = spec.up_window();
    let unit = Window::new(1, 1, 1);
    let mut dx = conv_relu_back(weights, &mut g, "out", &tape.out, dpred.clone(), unit, false, true)
        .expect("dx requested");

    let mut dskips: Vec<Option<FeatureMap<T>>> = (0..spec.n_blocks).map(|_| None).collect();
    for d in (0..spec.n_blocks).rev() {
        let b = spec.n_blocks - 1 - d;
        let dec = &tape.decoders[d];
        let name = format!("dec{}", d + 1);
        relu_backward_inplace(&dec.up_out, &mut dx);
        let (wk, bk) = (format!("{name}.up.w"), format!("{name}.up.b"));
        let mut dw = g.take(&wk);
        let mut db = g.take(&bk);
        let d2 = tconv_backward(&dec.conv2.out, &dx, weights.param(&wk), up, &mut dw, &mut db);
        g.put(&wk, dw);
        g.put(&bk, db);
        let d1 = conv_relu_back(weights, &mut g, &format!("{name}.conv2"), &dec.conv2, d2, win, true, true).expect("dx");
        let dcat = conv_relu_back(weights, &mut g, &format!("{name}.conv1"), &dec.conv1, d1, win, true, true)
            .expect("dx");
        let (dprev, dskip) = dcat.split_channels(dcat.chan - dec.skip_chan);
        dskips[b] = Some(dskip);
        dx = dprev;
    }

    dx = match &tape.mid {
        MidTape::Cnn { conv1, conv2 } => {
            let d1 = conv_relu_back(weights, &mut g, "mid.conv2", conv2, dx, win, true, true).expect("dx");
            conv_relu_back(weights, &mut g, "mid.conv1", conv1, d1, win, true, true).expect("dx")
        }
        MidTape::ConvLstm { cache, proj } => {
            let h = spec.convlstm_hidden;
            let dh = conv_relu_back(weights, &mut g, "mid.proj", proj, dx, unit, true, true).expect("dx");
            let keys = lstm_keys(spec);
            let cells: Vec<CellParams<'_, T>> =
                keys.iter().map(|(wk, bk)| CellParams { w: weights.param(wk), b: weights.param(bk) }).collect();
            let mut bufs: Vec<(Vec<T>, Vec<T>)> = keys.iter().map(|(wk, bk)| (g.take(wk), g.take(bk))).collect();
            let mut refs: Vec<(&mut [T], &mut [T])> =
                bufs.iter_mut().map(|(w, b)| (w.as_mut_slice(), b.as_mut_slice())).collect();
            let dxin = convlstm::backward(cache, &dh, &cells, h, spec.conv_kernel[1], &mut refs);
            drop(refs);
            for ((wk, bk), (w, b)) in keys.iter().zip(bufs) {
                g.put(wk, w);
                g.put(bk, b);
            }
            dxin
        }
    };

    for b in (0..spec.n_blocks).rev() {
        let enc = &tape.encoders[b];
        let name = format!("enc{}", b + 1);
        if let Some(ds) = dskips[b].take() {
            dx.add_assign(&ds);
        }
        if let Some(bn) = &enc.bn {
            let (gk, bk) = (format!("{name}.bn.gamma"), format!("{name}.bn.beta"));
            let mut dgamma = g.take(&gk);
            let mut dbeta = g.take(&bk);
            dx = batchnorm_backward(bn, &dx, weights.param(&gk), &mut dgamma, &mut dbeta);
            g.put(&gk, dgamma);
            g.put(&bk, dbeta);
        } else if spec.has_norm(b) && !tape.training {
            return Err(EstimatorError::Shape("backward requires a training-mode tape".into()));
        }
        if let Some(mask) = &enc.dropout {
            dropout_backward_inplace(&mut dx, mask);
        }
        let d2 = maxpool_backward(&dx, &enc.pool_arg, spec.pool[0]);
        let d1 = conv_relu_back(weights, &mut g, &format!("{name}.conv2"), &enc.conv2, d2, win, true, true)
            .expect("dx");
        dx = conv_relu_back(weights, &mut g, &format!("{name}.conv1"), &enc.conv1, d1, win, true, b > 0)
            .unwrap_or_else(|| FeatureMap::zeros(0, 0, 0, 0));
    }
    g.is_finite()?;
    Ok(g)
}

/// One training example batch.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub input: FeatureMap<T>,
    pub label: FeatureMap<T>,
    /// One entry per `(sample, freq)`; nonzero marks a real subcarrier.
    pub mask: Vec<T>,
}

/// Masked MSE of a prediction; errors when every bin is padding.
pub fn loss<T: Real>(pred: &FeatureMap<T>, label: &FeatureMap<T>, mask: &[T]) -> Result<T, EstimatorError> {
    if !pred.same_shape(label) || mask.len() != pred.batch * pred.freq {
        return Err(EstimatorError::Shape("loss operands disagree in shape".into()));
    }
    masked_mse(pred, label, mask).ok_or(EstimatorError::AllMasked)
}

/// Forward in training mode, loss, and gradients of `loss_scale * loss`.
pub fn loss_and_grads<T: Real>(
    weights: &ModelWeights<T>,
    spec: &ModelSpec,
    batch: &Batch<T>,
    rng: &mut dyn RngCore,
    loss_scale: T,
) -> Result<(T, LayerGrads<T>, Tape<T>), EstimatorError> {
    let (pred, tape) = forward(weights, spec, &batch.input, Mode::Train(rng))?;
    let l = loss(&pred, &batch.label, &batch.mask)?;
    let mut dpred = masked_mse_grad(&pred, &batch.label, &batch.mask);
    dpred.data.iter_mut().for_each(|v| *v *= loss_scale);
    let grads = backward(weights, spec, &tape, &dpred)?;
    Ok((l, grads, tape))
}
