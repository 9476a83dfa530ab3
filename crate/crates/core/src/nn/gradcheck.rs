//! Central finite-difference checks of the hand-written gradients.
//!
//! Each check builds a small random problem, projects the layer output onto a
//! fixed random direction to get a scalar objective, and compares the
//! analytic gradient of every input and parameter with
//! `(L(x + h) - L(x - h)) / 2h`. The error of one entry is
//! `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::convlstm::{self, CellParams};
use super::layers::*;
use super::model::{build_model, forward, loss_and_grads, Batch, Mode, ModelSpec, Variant};
use super::scalar::Real;
use super::tensor::FeatureMap;

/// Finite-difference step, stencil and relative-error floor for one precision.
#[derive(Clone, Copy, Debug)]
pub struct Settings {
    pub step: f64,
    pub floor: f64,
    /// Five-point central stencil instead of the two-point one.
    pub five_point: bool,
    /// Skip entries whose one-sided differences disagree, i.e. where the
    /// step straddles a ReLU or max-pool kink.
    pub skip_kinks: bool,
}

impl Settings {
    pub fn for_type<T: Real>() -> Self {
        if T::DTYPE == 1 {
            Settings { step: 4e-2, floor: 1e-2, five_point: true, skip_kinks: false }
        } else {
            Settings { step: 1e-4, floor: 1e-6, five_point: false, skip_kinks: false }
        }
    }
}

/// Outcome of one check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub entries: usize,
    /// Entries left out because the difference step crossed a kink.
    pub skipped: usize,
}

fn random_vec<T: Real>(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.random_range(-scale..scale))).collect()
}

fn random_map<T: Real>(rng: &mut impl Rng, dims: [usize; 4], scale: f64) -> FeatureMap<T> {
    let n = dims.iter().product();
    FeatureMap::from_vec(dims[0], dims[1], dims[2], dims[3], random_vec(rng, n, scale))
}

/// `Σ r_i y_i` accumulated in `f64`.
fn project<T: Real>(y: &[T], r: &[f64]) -> f64 {
    y.iter().zip(r).map(|(a, b)| a.as_f64() * b).sum()
}

fn as_t<T: Real>(r: &[f64]) -> Vec<T> {
    r.iter().map(|&v| T::lit(v)).collect()
}

/// Central-difference derivative of `f` along entry `i` of `buf`; `buf` is
/// restored before returning.
fn numeric_entry<T: Real>(buf: &mut [T], i: usize, s: Settings, f: &mut impl FnMut(&[T]) -> f64) -> f64 {
    let orig = buf[i];
    let mut eval = |k: f64| {
        let xi = orig + T::lit(k * s.step);
        buf[i] = xi;
        (f(buf), xi.as_f64() - orig.as_f64())
    };
    let (fp, dp) = eval(1.0);
    let (fm, dm) = eval(-1.0);
    let numeric = if s.five_point {
        let (fp2, _) = eval(2.0);
        let (fm2, _) = eval(-2.0);
        (8.0 * (fp - fm) - (fp2 - fm2)) / (6.0 * (dp - dm))
    } else {
        (fp - fm) / (dp - dm)
    };
    buf[i] = orig;
    numeric
}

/// Compare `analytic` with central differences of `f` around `x`. Returns
/// the worst error, the entry count and the number of skipped entries.
fn compare<T: Real>(x: &[T], analytic: &[T], s: Settings, f: impl FnMut(&[T]) -> f64) -> (f64, usize, usize) {
    compare_entries(x, analytic, s, 0..x.len(), f)
}

fn compare_entries<T: Real>(
    x: &[T],
    analytic: &[T],
    s: Settings,
    entries: impl Iterator<Item = usize>,
    mut f: impl FnMut(&[T]) -> f64,
) -> (f64, usize, usize) {
    assert_eq!(x.len(), analytic.len());
    let mut buf = x.to_vec();
    let mut worst = 0.0f64;
    let mut skipped = 0;
    let mut count = 0;
    for i in entries {
        count += 1;
        let numeric = numeric_entry(&mut buf, i, s, &mut f);
        if s.skip_kinks {
            let half = numeric_entry(&mut buf, i, Settings { step: s.step / 2.0, ..s }, &mut f);
            if (numeric - half).abs() > 1e-7 * numeric.abs().max(half.abs()) + 1e-11 {
                skipped += 1;
                continue;
            }
        }
        let a = analytic[i].as_f64();
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(s.floor);
        worst = worst.max(err);
    }
    (worst, count, skipped)
}

struct Acc {
    name: String,
    worst: f64,
    entries: usize,
    skipped: usize,
}

impl Acc {
    fn new(name: impl Into<String>) -> Self {
        Acc { name: name.into(), worst: 0.0, entries: 0, skipped: 0 }
    }

    fn add(&mut self, (worst, n, skipped): (f64, usize, usize)) {
        self.worst = self.worst.max(worst);
        self.entries += n;
        self.skipped += skipped;
    }

    fn done(self) -> GradCheck {
        GradCheck { name: self.name, max_rel_err: self.worst, entries: self.entries, skipped: self.skipped }
    }
}

/// Same-padded convolution: input, weight and bias gradients.
pub fn check_conv<T: Real>(win: Window, seed: u64) -> GradCheck {
    let s = Settings::for_type::<T>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cin, cout) = (3, 4);
    let x = random_map::<T>(&mut rng, [2, 6, 4, cin], 1.0);
    let w = random_vec::<T>(&mut rng, win.taps() * cin * cout, 0.5);
    let b = random_vec::<T>(&mut rng, cout, 0.5);
    let n_out = 2 * 6 * 4 * cout;
    let r: Vec<f64> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dy = FeatureMap::from_vec(2, 6, 4, cout, as_t(&r));
    let (mut dw, mut db) = (vec![T::zero(); w.len()], vec![T::zero(); cout]);
    let dx = conv_backward(&x, &dy, &w, win, &mut dw, &mut db, true).expect("dx");
    let mut acc = Acc::new(format!("conv {}x{}", win.kf, win.ka));
    acc.add(compare(&x.data, &dx.data, s, |v| {
        let xm = FeatureMap::from_vec(2, 6, 4, cin, v.to_vec());
        project(&conv_forward(&xm, &w, &b, win, cout).data, &r)
    }));
    acc.add(compare(&w, &dw, s, |v| project(&conv_forward(&x, v, &b, win, cout).data, &r)));
    acc.add(compare(&b, &db, s, |v| project(&conv_forward(&x, &w, v, win, cout).data, &r)));
    acc.done()
}

/// Transposed convolution with frequency stride 2.
pub fn check_tconv<T: Real>(seed: u64) -> GradCheck {
    let s = Settings::for_type::<T>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let win = Window::new(6, 2, 2);
    let (cin, cout) = (3, 2);
    let x = random_map::<T>(&mut rng, [2, 4, 4, cin], 1.0);
    let w = random_vec::<T>(&mut rng, cin * win.taps() * cout, 0.5);
    let b = random_vec::<T>(&mut rng, cout, 0.5);
    let r: Vec<f64> = (0..2 * 8 * 4 * cout).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dy = FeatureMap::from_vec(2, 8, 4, cout, as_t(&r));
    let (mut dw, mut db) = (vec![T::zero(); w.len()], vec![T::zero(); cout]);
    let dx = tconv_backward(&x, &dy, &w, win, &mut dw, &mut db);
    let mut acc = Acc::new("transposed conv");
    acc.add(compare(&x.data, &dx.data, s, |v| {
        let xm = FeatureMap::from_vec(2, 4, 4, cin, v.to_vec());
        project(&tconv_forward(&xm, &w, &b, win, cout).data, &r)
    }));
    acc.add(compare(&w, &dw, s, |v| project(&tconv_forward(&x, v, &b, win, cout).data, &r)));
    acc.add(compare(&b, &db, s, |v| project(&tconv_forward(&x, &w, v, win, cout).data, &r)));
    acc.done()
}

/// Max pooling on inputs whose pool candidates are separated by far more
/// than the difference step.
pub fn check_maxpool<T: Real>(seed: u64) -> GradCheck {
    let s = Settings::for_type::<T>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * 8 * 3 * 2;
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let data: Vec<T> = order.iter().map(|&k| T::lit(k as f64 * 0.1 - 4.0)).collect();
    let x = FeatureMap::from_vec(2, 8, 3, 2, data);
    let r: Vec<f64> = (0..n / 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, arg) = maxpool_forward(&x, 2);
    let dx = maxpool_backward(&FeatureMap::from_vec(2, 4, 3, 2, as_t(&r)), &arg, 2);
    let mut acc = Acc::new("max-pool");
    acc.add(compare(&x.data, &dx.data, s, |v| {
        let xm = FeatureMap::from_vec(2, 8, 3, 2, v.to_vec());
        project(&maxpool_forward(&xm, 2).0.data, &r)
    }));
    acc.done()
}

/// Training-mode batch norm: input, scale and shift gradients.
pub fn check_batchnorm<T: Real>(seed: u64) -> GradCheck {
    let s = Settings::for_type::<T>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 3;
    let x = random_map::<T>(&mut rng, [3, 4, 2, c], 1.0);
    let gamma: Vec<T> = (0..c).map(|_| T::lit(rng.random_range(0.5..1.5))).collect();
    let beta = random_vec::<T>(&mut rng, c, 0.5);
    let r: Vec<f64> = (0..x.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let run = |xm: &FeatureMap<T>, g: &[T], bt: &[T]| {
        let mut y = xm.clone();
        batchnorm_train(&mut y, g, bt);
        project(&y.data, &r)
    };
    let mut y = x.clone();
    let cache = batchnorm_train(&mut y, &gamma, &beta);
    let (mut dg, mut dbt) = (vec![T::zero(); c], vec![T::zero(); c]);
    let dy = FeatureMap::from_vec(3, 4, 2, c, as_t(&r));
    let dx = batchnorm_backward(&cache, &dy, &gamma, &mut dg, &mut dbt);
    let mut acc = Acc::new("batch norm");
    acc.add(compare(&x.data, &dx.data, s, |v| run(&FeatureMap::from_vec(3, 4, 2, c, v.to_vec()), &gamma, &beta)));
    acc.add(compare(&gamma, &dg, s, |v| run(&x, v, &beta)));
    acc.add(compare(&beta, &dbt, s, |v| run(&x, &gamma, v)));
    acc.done()
}

/// Dropout with a fixed mask (the stream is reseeded for every evaluation).
pub fn check_dropout<T: Real>(seed: u64) -> GradCheck {
    let s = Settings::for_type::<T>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_map::<T>(&mut rng, [2, 4, 2, 3], 1.0);
    let r: Vec<f64> = (0..x.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let run = |xm: &FeatureMap<T>| {
        let mut y = xm.clone();
        let mask = dropout_forward(&mut y, 0.5, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xd0));
        (project(&y.data, &r), mask)
    };
    let (_, mask) = run(&x);
    let mut dx = FeatureMap::from_vec(2, 4, 2, 3, as_t(&r));
    dropout_backward_inplace(&mut dx, &mask);
    let mut acc = Acc::new("dropout");
    acc.add(compare(&x.data, &dx.data, s, |v| run(&FeatureMap::from_vec(2, 4, 2, 3, v.to_vec())).0));
    acc.done()
}

/// ReLU on inputs bounded away from the kink.
pub fn check_relu<T: Real>(seed: u64) -> GradCheck {
    let s = Settings::for_type::<T>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * 4 * 2 * 3;
    let data: Vec<T> = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.0);
            T::lit(if rng.random::<bool>() { m } else { -m })
        })
        .collect();
    let x = FeatureMap::from_vec(2, 4, 2, 3, data);
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut y = x.clone();
    relu_inplace(&mut y);
    let mut dx = FeatureMap::from_vec(2, 4, 2, 3, as_t(&r));
    relu_backward_inplace(&y, &mut dx);
    let mut acc = Acc::new("relu");
    acc.add(compare(&x.data, &dx.data, s, |v| {
        let mut ym = FeatureMap::from_vec(2, 4, 2, 3, v.to_vec());
        relu_inplace(&mut ym);
        project(&ym.data, &r)
    }));
    acc.done()
}

/// Channel concatenation followed by a convolution, differentiated with
/// respect to both concatenated operands.
pub fn check_concat<T: Real>(seed: u64) -> GradCheck {
    let s = Settings::for_type::<T>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let win = Window::new(2, 2, 1);
    let a = random_map::<T>(&mut rng, [2, 4, 3, 2], 1.0);
    let b = random_map::<T>(&mut rng, [2, 4, 3, 3], 1.0);
    let w = random_vec::<T>(&mut rng, win.taps() * 5 * 2, 0.5);
    let bias = vec![T::zero(); 2];
    let r: Vec<f64> = (0..2 * 4 * 3 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let run = |p: &FeatureMap<T>, q: &FeatureMap<T>| project(&conv_forward(&p.concat_channels(q), &w, &bias, win, 2).data, &r);
    let (mut dw, mut db) = (vec![T::zero(); w.len()], vec![T::zero(); 2]);
    let dy = FeatureMap::from_vec(2, 4, 3, 2, as_t(&r));
    let dcat = conv_backward(&a.concat_channels(&b), &dy, &w, win, &mut dw, &mut db, true).expect("dx");
    let (da, dbm) = dcat.split_channels(2);
    let mut acc = Acc::new("concat");
    acc.add(compare(&a.data, &da.data, s, |v| run(&FeatureMap::from_vec(2, 4, 3, 2, v.to_vec()), &b)));
    acc.add(compare(&b.data, &dbm.data, s, |v| run(&a, &FeatureMap::from_vec(2, 4, 3, 3, v.to_vec()))));
    acc.done()
}

/// Masked MSE with respect to the prediction; padding bins included.
pub fn check_masked_mse<T: Real>(seed: u64) -> GradCheck {
    let s = Settings::for_type::<T>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred = random_map::<T>(&mut rng, [2, 4, 3, 1], 1.0);
    let label = random_map::<T>(&mut rng, [2, 4, 3, 1], 1.0);
    let mask: Vec<T> = (0..8).map(|i| if i % 4 == 3 { T::zero() } else { T::one() }).collect();
    let grad = masked_mse_grad(&pred, &label, &mask);
    let mut acc = Acc::new("masked MSE");
    acc.add(compare(&pred.data, &grad.data, s, |v| {
        let p = FeatureMap::from_vec(2, 4, 3, 1, v.to_vec());
        masked_mse(&p, &label, &mask).expect("valid bins").as_f64()
    }));
    acc.done()
}

/// Two stacked ConvLSTM layers (hidden 8, antenna kernel 2) on a
/// `(1, 4, 4, 8)` bottleneck: input, gate weights and gate biases.
pub fn check_convlstm<T: Real>(seed: u64) -> GradCheck {
    let s = Settings::for_type::<T>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hidden, ka, cin) = (8, 2, 8);
    let x = random_map::<T>(&mut rng, [1, 4, 4, cin], 1.0);
    let mut ws = Vec::new();
    let mut bs = Vec::new();
    for l in 0..2 {
        let lin = if l == 0 { cin } else { hidden };
        ws.push(random_vec::<T>(&mut rng, ka * (lin + hidden) * 4 * hidden, 0.4));
        bs.push(random_vec::<T>(&mut rng, 4 * hidden, 0.4));
    }
    let r: Vec<f64> = (0..4 * 4 * hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
    let run = |xm: &FeatureMap<T>, ws: &[Vec<T>], bs: &[Vec<T>]| {
        let cells: Vec<_> = ws.iter().zip(bs).map(|(w, b)| CellParams { w, b }).collect();
        project(&convlstm::forward(xm, &cells, hidden, ka).0.data, &r)
    };
    let cells: Vec<_> = ws.iter().zip(&bs).map(|(w, b)| CellParams { w, b }).collect();
    let (_, cache) = convlstm::forward(&x, &cells, hidden, ka);
    let mut dws: Vec<Vec<T>> = ws.iter().map(|w| vec![T::zero(); w.len()]).collect();
    let mut dbs: Vec<Vec<T>> = bs.iter().map(|b| vec![T::zero(); b.len()]).collect();
    let dout = FeatureMap::from_vec(1, 4, 4, hidden, as_t(&r));
    let dx = {
        let mut grads: Vec<(&mut [T], &mut [T])> =
            dws.iter_mut().zip(dbs.iter_mut()).map(|(w, b)| (w.as_mut_slice(), b.as_mut_slice())).collect();
        convlstm::backward(&cache, &dout, &cells, hidden, ka, &mut grads)
    };
    let mut acc = Acc::new("ConvLSTM");
    acc.add(compare(&x.data, &dx.data, s, |v| run(&FeatureMap::from_vec(1, 4, 4, cin, v.to_vec()), &ws, &bs)));
    for l in 0..2 {
        acc.add(compare(&ws[l], &dws[l], s, |v| {
            let mut w2 = ws.clone();
            w2[l] = v.to_vec();
            run(&x, &w2, &bs)
        }));
        acc.add(compare(&bs[l], &dbs[l], s, |v| {
            let mut b2 = bs.clone();
            b2[l] = v.to_vec();
            run(&x, &ws, &b2)
        }));
    }
    acc.done()
}

/// Every layer-level check.
pub fn layer_suite<T: Real>(seed: u64) -> Vec<GradCheck> {
    vec![
        check_conv::<T>(Window::new(6, 2, 1), seed),
        check_conv::<T>(Window::new(3, 3, 1), seed + 1),
        check_conv::<T>(Window::new(1, 2, 1), seed + 2),
        check_tconv::<T>(seed + 3),
        check_maxpool::<T>(seed + 4),
        check_batchnorm::<T>(seed + 5),
        check_dropout::<T>(seed + 6),
        check_relu::<T>(seed + 7),
        check_concat::<T>(seed + 8),
        check_masked_mse::<T>(seed + 9),
        check_convlstm::<T>(seed + 10),
    ]
}

/// Whole network in training mode (fixed dropout stream) on a small
/// integrated spec, through the masked loss. Checks up to 48 evenly spaced
/// entries of every parameter tensor; steps that straddle a ReLU or max-pool
/// kink are skipped and counted.
pub fn check_model<T: Real>(variant: Variant, seed: u64) -> GradCheck {
    let s = Settings { skip_kinks: true, floor: 1e-5, ..Settings::for_type::<T>() };
    let mut spec = ModelSpec::integrated(variant, 16, 4, 2);
    spec.convlstm_hidden = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = build_model::<T>(&spec, seed).expect("valid spec");
    for t in w.params.values_mut() {
        if t.shape.len() == 1 {
            t.data.iter_mut().for_each(|v| *v += T::lit(rng.random_range(-0.1..0.1)));
        }
    }
    let batch = Batch {
        input: random_map::<T>(&mut rng, [2, 16, 4, 2], 1.0),
        label: random_map::<T>(&mut rng, [2, 16, 4, 1], 1.0),
        mask: (0..32).map(|i| if i % 16 < 13 { T::one() } else { T::zero() }).collect(),
    };
    let drop_stream = || ChaCha8Rng::seed_from_u64(seed ^ 0xd5);
    let (_, grads, _) = loss_and_grads(&w, &spec, &batch, &mut drop_stream(), T::one()).expect("finite");
    let mut acc = Acc::new(format!("model {variant}"));
    let keys: Vec<String> = w.params.keys().cloned().collect();
    for key in keys {
        let base = w.params[&key].data.clone();
        let analytic = grads.grads[&key].data.clone();
        let mut probe = w.clone();
        let stride = base.len().div_ceil(48);
        acc.add(compare_entries(&base, &analytic, s, (0..base.len()).step_by(stride), |v| {
            probe.params.get_mut(&key).expect("key").data.copy_from_slice(v);
            let mut stream = drop_stream();
            let (pred, _) = forward(&probe, &spec, &batch.input, Mode::Train(&mut stream as &mut dyn RngCore)).expect("finite");
            super::model::loss(&pred, &batch.label, &batch.mask).expect("valid").as_f64()
        }));
    }
    acc.done()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_suite<T: Real>(tol: f64) {
        for c in layer_suite::<T>(100) {
            assert!(c.max_rel_err < tol, "{} ({}): max rel err {:.3e}", c.name, T::NAME, c.max_rel_err);
            assert!(c.entries > 0);
        }
    }

    #[test]
    fn layers_f64() {
        assert_suite::<f64>(1e-6);
    }

    #[test]
    fn layers_f32() {
        assert_suite::<f32>(1e-3);
    }

    #[test]
    fn whole_model_f64() {
        for v in [Variant::Cnn, Variant::CnnConvlstm] {
            let c = check_model::<f64>(v, 7);
            eprintln!("{}: {:.3e} over {} entries, {} skipped", c.name, c.max_rel_err, c.entries, c.skipped);
            assert!(c.max_rel_err < 1e-6, "{}: {:.3e}", c.name, c.max_rel_err);
            assert!(c.skipped * 20 < c.entries, "{}: {} of {} entries straddle kinks", c.name, c.skipped, c.entries);
        }
    }
}
