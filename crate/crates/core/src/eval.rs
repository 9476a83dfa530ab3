//! Frobenius-error metrics, empirical CDFs, the configuration comparison, the
//! subcarrier-group sweep, and CSV/SVG report rendering.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, DatasetFile, RealizationSet, Split};
use crate::nn::{self, build_model, EstimatorError, Mode, ModelSpec, ModelWeights, Real, Variant};
use crate::train::{self, EpochRecord, Precision, TrainConfig, TrainError, TrainRecord};

/// Per-sample error definition stated in every report.
pub const FROBENIUS_DEFINITION: &str =
    "error = (1/K) * sum_k ||A_hat[k] - A[k]||_F over the sample's K subcarriers, on de-normalized amplitudes";

/// Published mean errors, kept as report metadata only.
pub const REFERENCE_CNN_CONVLSTM: f64 = 0.434;
pub const REFERENCE_CNN_INTEGRATED: f64 = 0.448;
pub const REFERENCE_CNN_INDIVIDUAL: f64 = 0.539;

const EVAL_BATCH: usize = 128;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input")]
    Empty,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dataset has no {0:?} samples")]
    MissingSplit(Split),
    #[error("group size {group} does not divide {total}")]
    GroupSize { group: usize, total: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// `(1/K) Σ_k ‖Â[k] − A[k]‖_F` for row-major `(K, n_ant)` amplitude slices.
pub fn frobenius_error(predicted: &[f64], truth: &[f64], n_ant: usize) -> Result<f64, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::Shape(format!("{} predicted vs {} true entries", predicted.len(), truth.len())));
    }
    if n_ant == 0 || truth.len() % n_ant != 0 {
        return Err(EvalError::Shape(format!("{} entries do not tile {n_ant} antenna pairs", truth.len())));
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let k = truth.len() / n_ant;
    let total: f64 = predicted
        .chunks_exact(n_ant)
        .zip(truth.chunks_exact(n_ant))
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .sum();
    if !total.is_finite() {
        return Err(EvalError::NonFinite("frobenius error"));
    }
    Ok(total / k as f64)
}

/// Right-continuous empirical CDF at the sorted unique values.
pub fn ecdf(errors: &[f64]) -> Result<Vec<(f64, f64)>, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(EvalError::NonFinite("ecdf input"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = frac,
            _ => out.push((v, frac)),
        }
    }
    Ok(out)
}

/// `F(x)` of a CDF from [`ecdf`].
pub fn ecdf_at(points: &[(f64, f64)], x: f64) -> f64 {
    let i = points.partition_point(|p| p.0 <= x);
    if i == 0 {
        0.0
    } else {
        points[i - 1].1
    }
}

/// Smallest value whose CDF reaches `p`.
pub fn ecdf_quantile(points: &[(f64, f64)], p: f64) -> f64 {
    points.iter().find(|q| q.1 >= p - 1e-12).or(points.last()).map_or(f64::NAN, |q| q.0)
}

/// Ground truth and prediction of the first antenna entry across one sample's
/// subcarriers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub subcarriers: Vec<i32>,
    pub truth: Vec<f64>,
    pub predicted: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub group_size: usize,
    pub dataset_hash: String,
    pub split: Split,
    /// Realization index of `errors[0]`.
    pub first_sample: usize,
    pub errors: Vec<f64>,
    pub mean: f64,
    pub ecdf: Vec<(f64, f64)>,
    pub reference: Option<f64>,
    pub definition: String,
    pub overlay: Overlay,
}

impl EvalReport {
    pub fn from_errors(
        variant: Variant,
        group_size: usize,
        dataset_hash: String,
        split: Split,
        first_sample: usize,
        errors: Vec<f64>,
        overlay: Overlay,
    ) -> Result<Self, EvalError> {
        let points = ecdf(&errors)?;
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        Ok(EvalReport {
            variant,
            group_size,
            dataset_hash,
            split,
            first_sample,
            errors,
            mean,
            ecdf: points,
            reference: None,
            definition: FROBENIUS_DEFINITION.into(),
            overlay,
        })
    }

    pub fn quantile(&self, p: f64) -> f64 {
        ecdf_quantile(&self.ecdf, p)
    }
}

/// Normalized predictions `(items, F_pad, A)` in inference mode.
pub fn predict<T: Real>(
    weights: &ModelWeights<T>,
    spec: &ModelSpec,
    data: &DatasetFile,
    items: &[usize],
) -> Result<Vec<f64>, EvalError> {
    let mut out = Vec::with_capacity(items.len() * data.f_pad() * data.n_ant());
    for chunk in items.chunks(EVAL_BATCH) {
        let batch = data.batch::<T>(chunk);
        let (pred, _) = nn::forward(weights, spec, &batch.input, Mode::Infer)?;
        out.extend(pred.data.iter().map(|v| v.as_f64()));
    }
    Ok(out)
}

/// Evaluate on a split. Samples are whole realizations: the groups cut from
/// one realization are pooled before averaging over subcarriers.
pub fn evaluate<T: Real>(
    weights: &ModelWeights<T>,
    spec: &ModelSpec,
    data: &DatasetFile,
    split: Split,
) -> Result<EvalReport, EvalError> {
    let items: Vec<usize> = data.split_items(split).collect();
    if items.is_empty() {
        return Err(EvalError::MissingSplit(split));
    }
    let (f, a) = (data.f_pad(), data.n_ant());
    let gpr = data.manifest.groups_per_realization;
    let scale = data.manifest.scale;
    let pred = predict(weights, spec, data, &items)?;
    if pred.len() != items.len() * f * a {
        return Err(EvalError::Shape("model output does not match the dataset layout".into()));
    }
    let first = data.realization_of(items[0]);
    let mut errors = Vec::with_capacity(items.len() / gpr);
    let mut overlay = Overlay::default();
    for (r, group_items) in items.chunks(gpr).enumerate() {
        let mut p = Vec::new();
        let mut t = Vec::new();
        for (j, &item) in group_items.iter().enumerate() {
            let base = (r * gpr + j) * f;
            for bin in 0..f {
                if data.mask[item * f + bin] == 0.0 {
                    continue;
                }
                for e in 0..a {
                    p.push(pred[(base + bin) * a + e] * scale);
                    t.push(data.labels[(item * f + bin) * a + e] as f64 * scale);
                }
            }
        }
        if r == 0 {
            overlay = Overlay {
                subcarriers: data.manifest.sim.occupied_subcarriers.clone(),
                truth: t.iter().step_by(a).copied().collect(),
                predicted: p.iter().step_by(a).copied().collect(),
            };
            if overlay.subcarriers.len() != overlay.truth.len() {
                overlay.subcarriers = (0..overlay.truth.len() as i32).collect();
            }
        }
        errors.push(frobenius_error(&p, &t, a)?);
    }
    EvalReport::from_errors(spec.variant, data.manifest.group_size, data.content_hash(), split, first, errors, overlay)
}

/// Outcome of training one configuration and scoring it on the test split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trained {
    pub spec: ModelSpec,
    pub report: EvalReport,
    pub record: TrainRecord,
}

fn train_eval_typed<T: Real>(
    data: &DatasetFile,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Trained, EvalError> {
    let init = build_model::<T>(spec, cfg.seed)?;
    let out = train::train(data, spec, cfg, init, on_epoch)?;
    let report = evaluate(&out.weights, spec, data, Split::Test)?;
    Ok(Trained { spec: spec.clone(), report, record: out.record })
}

/// Train `variant` on `group`-subcarrier samples cut from `set`, then
/// evaluate on the test split.
pub fn train_and_evaluate(
    set: &RealizationSet,
    variant: Variant,
    group: usize,
    base_channels: usize,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Trained, EvalError> {
    let data = set.dataset(group)?;
    let spec = ModelSpec::for_group(variant, group, data.f_pad(), data.n_ant(), base_channels);
    match cfg.precision {
        Precision::F32 => train_eval_typed::<f32>(&data, &spec, cfg, on_epoch),
        Precision::F64 => train_eval_typed::<f64>(&data, &spec, cfg, on_epoch),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub label: String,
    pub variant: Variant,
    pub group: usize,
    pub reference: Option<f64>,
}

/// The three published configurations for `k` subcarriers.
pub fn default_entries(k: usize) -> Vec<ComparisonEntry> {
    let entry = |label: &str, variant, group, reference| ComparisonEntry {
        label: label.into(),
        variant,
        group,
        reference: Some(reference),
    };
    vec![
        entry("integrated cnn-convlstm", Variant::CnnConvlstm, k, REFERENCE_CNN_CONVLSTM),
        entry("integrated cnn", Variant::Cnn, k, REFERENCE_CNN_INTEGRATED),
        entry("individual cnn", Variant::Cnn, 1, REFERENCE_CNN_INDIVIDUAL),
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub entry: ComparisonEntry,
    pub mean: f64,
    pub trained: Trained,
}

/// Train and test every entry on the same realizations.
pub fn run_comparison(
    set: &RealizationSet,
    entries: &[ComparisonEntry],
    base_channels: usize,
    cfg: &TrainConfig,
) -> Result<Vec<ComparisonRow>, EvalError> {
    if set.splits().range(Split::Test).is_empty() {
        return Err(EvalError::MissingSplit(Split::Test));
    }
    entries
        .par_iter()
        .map(|e| {
            let mut trained = train_and_evaluate(set, e.variant, e.group, base_channels, cfg, &mut |_| {})?;
            trained.report.reference = e.reference;
            Ok(ComparisonRow { entry: e.clone(), mean: trained.report.mean, trained })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub group: usize,
    pub label: String,
    pub mean: f64,
    pub n_items: usize,
    /// Unmasked label entries in the whole dataset.
    pub label_entries: usize,
    pub trained: Trained,
}

/// Row label used by reports.
pub fn group_label(group: usize, total: usize) -> String {
    match group {
        1 => "subcarrier-individual".into(),
        g if g == total => "subcarrier-integrated".into(),
        g => format!("{g}-subcarrier groups"),
    }
}

/// Train and test `variant` for every group size on the same realizations.
pub fn subcarrier_sweep(
    set: &RealizationSet,
    groups: &[usize],
    variant: Variant,
    base_channels: usize,
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>, EvalError> {
    let total = set.subcarriers.len();
    if groups.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&g) = groups.iter().find(|&&g| g == 0 || total % g != 0) {
        return Err(EvalError::GroupSize { group: g, total });
    }
    groups
        .par_iter()
        .map(|&g| {
            let trained = train_and_evaluate(set, variant, g, base_channels, cfg, &mut |_| {})?;
            Ok(SweepRow {
                group: g,
                label: group_label(g, total),
                mean: trained.report.mean,
                n_items: set.len() * (total / g),
                label_entries: set.len() * total * set.n_ant,
                trained,
            })
        })
        .collect()
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
    step: bool,
}

struct Chart<'a> {
    title: &'a str,
    x_label: &'a str,
    y_label: &'a str,
    log_x: bool,
    y_range: Option<(f64, f64)>,
    footer: Vec<String>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 0.5 } else { lo.abs() * 0.05 };
        (lo - pad, hi + pad)
    }
}

fn render_svg(chart: &Chart, series: &[Series]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 160.0;
    const T: f64 = 40.0;
    const B: f64 = 60.0;
    let tx = |x: f64| if chart.log_x { x.max(f64::MIN_POSITIVE).log10() } else { x };
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| tx(p.0)));
    let (x0, x1) = span(xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = chart.y_range.unwrap_or_else(|| {
        let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
        let lo = ys.clone().fold(f64::INFINITY, f64::min).min(0.0);
        span(lo, ys.fold(f64::NEG_INFINITY, f64::max))
    });
    let (pw, ph) = (W - L - R, H - T - B - 14.0 * chart.footer.len() as f64);
    let px = |x: f64| L + (tx(x) - x0) / (x1 - x0) * pw;
    let py = |y: f64| T + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let w = &mut s;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#).unwrap();
    writeln!(w, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(w, r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{}</text>"#, L + pw / 2.0, escape(chart.title)).unwrap();
    writeln!(w, r#"<rect x="{L}" y="{T}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#).unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let label = if chart.log_x { 10f64.powf(xv) } else { xv };
        let gx = L + f * pw;
        writeln!(w, r#"<line x1="{gx:.2}" y1="{:.2}" x2="{gx:.2}" y2="{:.2}" stroke="black"/>"#, T + ph, T + ph + 4.0).unwrap();
        writeln!(w, r#"<text x="{gx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, T + ph + 16.0, fmt_tick(label)).unwrap();
        let yv = y0 + f * (y1 - y0);
        let gy = T + ph - f * ph;
        writeln!(w, r#"<line x1="{:.2}" y1="{gy:.2}" x2="{L}" y2="{gy:.2}" stroke="black"/>"#, L - 4.0).unwrap();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, L - 6.0, gy + 4.0, fmt_tick(yv)).unwrap();
    }
    writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, L + pw / 2.0, T + ph + 32.0, escape(chart.x_label)).unwrap();
    writeln!(
        w,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        T + ph / 2.0,
        T + ph / 2.0,
        escape(chart.y_label)
    )
    .unwrap();
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = Vec::new();
        if ser.step {
            let mut prev = y0;
            for &(x, y) in &ser.points {
                pts.push((px(x), py(prev)));
                pts.push((px(x), py(y)));
                prev = y;
            }
            if let Some(&(x, y)) = ser.points.last() {
                pts.push((px(x).max(L + pw), py(y)));
            }
        } else {
            pts.extend(ser.points.iter().map(|&(x, y)| (px(x), py(y))));
        }
        let list: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        writeln!(w, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, list.join(" ")).unwrap();
        let ly = T + 12.0 + 16.0 * i as f64;
        writeln!(w, r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, L + pw + 10.0, L + pw + 30.0).unwrap();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, L + pw + 34.0, ly + 4.0, escape(&ser.name)).unwrap();
    }
    for (i, line) in chart.footer.iter().enumerate() {
        writeln!(w, r#"<text x="8" y="{:.2}" font-size="9">{}</text>"#, H - 8.0 - 14.0 * (chart.footer.len() - 1 - i) as f64, escape(line)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn footer(report: &EvalReport) -> Vec<String> {
    let mut lines = vec![FROBENIUS_DEFINITION.to_string()];
    let mut meta = format!("dataset {} | {} samples | mean {:.4}", report.dataset_hash, report.errors.len(), report.mean);
    if let Some(r) = report.reference {
        write!(meta, " | published reference {r} (ordering only)").unwrap();
    }
    lines.push(meta);
    lines
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Write CSV and SVG analogues of the error table, per-sample errors, the
/// error ECDF, the amplitude overlay and, if given, the group sweep. Returns
/// the written paths in order.
pub fn render_report(out_dir: &Path, reports: &[EvalReport], sweep: &[SweepRow]) -> Result<Vec<PathBuf>, EvalError> {
    if reports.is_empty() && sweep.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut tags: Vec<(Variant, usize)> = reports.iter().map(|r| (r.variant, r.group_size)).collect();
    tags.sort_by_key(|t| (t.0.name(), t.1));
    if tags.windows(2).any(|w| w[0] == w[1]) {
        return Err(EvalError::Invalid("two reports share a variant and group size".into()));
    }
    let io = |path: &Path, source| EvalError::Io { path: path.display().to_string(), source };
    std::fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();

    for r in reports {
        let tag = format!("{}_{}", r.variant, r.group_size);
        let rows = r.errors.iter().enumerate().map(|(i, e)| vec![(r.first_sample + i).to_string(), num(*e)]);
        files.push((format!("report_errors_{tag}.csv"), csv_bytes(&["sample", "frobenius_error"], rows)));
        let rows = r.ecdf.iter().map(|(v, f)| vec![num(*v), num(*f)]);
        files.push((format!("report_ecdf_{tag}.csv"), csv_bytes(&["error", "fraction"], rows)));
        let chart = Chart {
            title: &format!("Error ECDF, {} (g = {})", r.variant, r.group_size),
            x_label: "Frobenius error",
            y_label: "cumulative fraction",
            log_x: false,
            y_range: Some((0.0, 1.0)),
            footer: footer(r),
        };
        let series = [Series { name: r.variant.to_string(), points: r.ecdf.clone(), step: true }];
        files.push((format!("report_ecdf_{tag}.svg"), render_svg(&chart, &series).into_bytes()));
        let o = &r.overlay;
        if !o.truth.is_empty() {
            let rows = (0..o.truth.len()).map(|k| vec![o.subcarriers[k].to_string(), num(o.truth[k]), num(o.predicted[k])]);
            files.push((format!("report_overlay_{tag}.csv"), csv_bytes(&["subcarrier", "truth", "predicted"], rows)));
            let xs = |v: &[f64]| o.subcarriers.iter().zip(v).map(|(&k, &y)| (k as f64, y)).collect();
            let series = [
                Series { name: "ground truth".into(), points: xs(&o.truth), step: false },
                Series { name: "predicted".into(), points: xs(&o.predicted), step: false },
            ];
            let chart = Chart {
                title: &format!("|h11| recovery, sample {}, {} (g = {})", r.first_sample, r.variant, r.group_size),
                x_label: "subcarrier index",
                y_label: "amplitude",
                log_x: false,
                y_range: None,
                footer: footer(r),
            };
            files.push((format!("report_overlay_{tag}.svg"), render_svg(&chart, &series).into_bytes()));
        }
    }

    if !reports.is_empty() {
        let rows = reports.iter().map(|r| {
            vec![
                r.variant.to_string(),
                r.group_size.to_string(),
                r.errors.len().to_string(),
                num(r.mean),
                r.reference.map(num).unwrap_or_default(),
                r.dataset_hash.clone(),
                r.definition.clone(),
            ]
        });
        let header = ["variant", "group_size", "samples", "mean_error", "reference", "dataset_hash", "definition"];
        files.push(("report_table_all_all.csv".into(), csv_bytes(&header, rows)));
        let series: Vec<Series> = reports
            .iter()
            .map(|r| Series { name: format!("{} g={}", r.variant, r.group_size), points: r.ecdf.clone(), step: true })
            .collect();
        let chart = Chart {
            title: "Error ECDF by configuration",
            x_label: "Frobenius error",
            y_label: "cumulative fraction",
            log_x: false,
            y_range: Some((0.0, 1.0)),
            footer: vec![FROBENIUS_DEFINITION.into()],
        };
        files.push(("report_ecdf_all_all.svg".into(), render_svg(&chart, &series).into_bytes()));
    }

    if !sweep.is_empty() {
        let mut rows: Vec<&SweepRow> = sweep.iter().collect();
        rows.sort_by_key(|r| r.group);
        let variant = rows[0].trained.spec.variant;
        let csv_rows = rows.iter().map(|r| {
            vec![r.group.to_string(), r.label.clone(), num(r.mean), r.n_items.to_string(), r.label_entries.to_string()]
        });
        let header = ["group_size", "label", "mean_error", "samples", "label_entries"];
        files.push((format!("report_sweep_{variant}_all.csv"), csv_bytes(&header, csv_rows)));
        let series = [Series {
            name: variant.to_string(),
            points: rows.iter().map(|r| (r.group as f64, r.mean)).collect(),
            step: false,
        }];
        let chart = Chart {
            title: "Mean error by subcarriers per sample",
            x_label: "subcarriers per sample (log scale)",
            y_label: "mean Frobenius error",
            log_x: true,
            y_range: None,
            footer: vec![FROBENIUS_DEFINITION.into(), "g = 1 is subcarrier-individual estimation".into()],
        };
        files.push((format!("report_sweep_{variant}_all.svg"), render_svg(&chart, &series).into_bytes()));
    }

    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{load_profile, SimConfig};
    use crate::dataset::simulate_realizations;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn frobenius_examples() {
        let a = [0.3, 1.2, 0.0, 2.5, 0.7, 0.1, 0.9, 0.4];
        assert_eq!(frobenius_error(&a, &a, 4).unwrap(), 0.0);
        for k in [1, 3, 10] {
            let zero = vec![0.0; 4 * k];
            let ones = vec![1.0; 4 * k];
            assert_eq!(frobenius_error(&ones, &zero, 4).unwrap(), 2.0);
        }
        assert!(matches!(frobenius_error(&a[..4], &a, 4), Err(EvalError::Shape(_))));
        assert!(matches!(frobenius_error(&a[..3], &a[..3], 4), Err(EvalError::Shape(_))));
        assert!(matches!(frobenius_error(&[], &[], 4), Err(EvalError::Empty)));
    }

    #[test]
    fn frobenius_matches_double_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let k = rng.random_range(1..40);
            let p: Vec<f64> = (0..4 * k).map(|_| rng.random_range(0.0..3.0)).collect();
            let t: Vec<f64> = (0..4 * k).map(|_| rng.random_range(0.0..3.0)).collect();
            let mut total = 0.0;
            for kk in 0..k {
                let mut sq = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        let d = p[kk * 4 + i * 2 + j] - t[kk * 4 + i * 2 + j];
                        sq += d * d;
                    }
                }
                total += sq.sqrt();
            }
            assert!((frobenius_error(&p, &t, 4).unwrap() - total / k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn ecdf_examples() {
        let e = ecdf(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(e, vec![(1.0, 1.0 / 3.0), (2.0, 2.0 / 3.0), (3.0, 1.0)]);
        assert_eq!(ecdf_at(&e, 2.0), 2.0 / 3.0);
        assert_eq!(ecdf_at(&e, 1.999), 1.0 / 3.0);
        assert_eq!(ecdf_at(&e, 0.5), 0.0);
        assert_eq!(ecdf(&[4.0; 7]).unwrap(), vec![(4.0, 1.0)]);
        assert!(matches!(ecdf(&[]), Err(EvalError::Empty)));
        assert!(ecdf(&[1.0, f64::NAN]).is_err());
        assert_eq!(ecdf_quantile(&e, 0.5), 2.0);
        assert_eq!(ecdf_quantile(&e, 0.25), 1.0);
        assert_eq!(ecdf_quantile(&e, 2.0 / 3.0), 2.0);
    }

    #[test]
    fn ecdf_matches_counting_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..500).map(|_| (rng.random_range(0.0..10.0f64) * 4.0).round() / 4.0).collect();
        let e = ecdf(&xs).unwrap();
        for i in 0..100 {
            let probe = -0.5 + i as f64 * 0.11;
            let count = xs.iter().filter(|&&x| x <= probe).count() as f64 / xs.len() as f64;
            assert!((ecdf_at(&e, probe) - count).abs() < 1e-15, "probe {probe}");
        }
    }

    #[test]
    fn reference_values() {
        let e = default_entries(242);
        let refs: Vec<f64> = e.iter().map(|x| x.reference.unwrap()).collect();
        assert_eq!(refs, vec![0.434, 0.448, 0.539]);
        assert_eq!((e[0].variant, e[0].group), (Variant::CnnConvlstm, 242));
        assert_eq!((e[2].variant, e[2].group), (Variant::Cnn, 1));
        assert_eq!(group_label(1, 242), "subcarrier-individual");
        assert_eq!(group_label(242, 242), "subcarrier-integrated");
    }

    proptest! {
        #[test]
        fn frobenius_nonnegative_and_zero_only_on_equality(
            t in prop::collection::vec(0.0f64..5.0, 4..64),
            d in prop::collection::vec(-1.0f64..1.0, 64),
        ) {
            let n = t.len() / 4 * 4;
            let t = &t[..n];
            let p: Vec<f64> = t.iter().zip(&d).map(|(a, b)| a + b).collect();
            let e = frobenius_error(&p, t, 4).unwrap();
            prop_assert!(e >= 0.0);
            prop_assert_eq!(e == 0.0, p.as_slice() == t);
            prop_assert_eq!(frobenius_error(t, t, 4).unwrap(), 0.0);
        }

        #[test]
        fn ecdf_is_a_cdf(xs in prop::collection::vec(-100.0f64..100.0, 1..200)) {
            let e = ecdf(&xs).unwrap();
            prop_assert!(e.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
            prop_assert!(e[0].1 > 0.0);
            prop_assert_eq!(e.last().unwrap().1, 1.0);
            for &(v, f) in &e {
                prop_assert_eq!(ecdf_at(&e, v), f);
            }
        }
    }

    fn small_set(n: usize) -> RealizationSet {
        let profile = load_profile("model-b").unwrap();
        simulate_realizations(&SimConfig { n_samples: n, seed: 8, ..SimConfig::default() }, &profile).unwrap()
    }

    #[test]
    fn zero_predictor_matches_hand_oracle() {
        let set = small_set(20);
        for g in [1, 22, 242] {
            let data = set.dataset(g).unwrap();
            let spec = ModelSpec::for_group(Variant::Cnn, g, data.f_pad(), data.n_ant(), 2);
            let w = ModelWeights::<f64>::zeros(&spec);
            let report = evaluate(&w, &spec, &data, Split::Test).unwrap();
            let test: Vec<usize> = data.split_items(Split::Test).collect();
            let gpr = data.manifest.groups_per_realization;
            assert_eq!(report.errors.len(), test.len() / gpr);
            let s = data.manifest.scale;
            for (r, items) in test.chunks(gpr).enumerate() {
                let mut total = 0.0;
                let mut bins = 0;
                for &i in items {
                    let smp = data.sample(i);
                    for f in (0..smp.f_pad).filter(|&f| smp.mask[f]) {
                        let sq: f64 = (0..4).map(|a| (smp.label[f * 4 + a] as f64 * s).powi(2)).sum();
                        total += sq.sqrt();
                        bins += 1;
                    }
                }
                assert_eq!(bins, 242);
                assert!((report.errors[r] - total / 242.0).abs() < 1e-12);
            }
            let mean = report.errors.iter().sum::<f64>() / report.errors.len() as f64;
            assert!((report.mean - mean).abs() < 1e-12);
            assert_eq!(report.overlay.truth.len(), 242);
            assert!(report.overlay.predicted.iter().all(|&p| p == 0.0));
            assert_eq!(evaluate(&w, &spec, &data, Split::Test).unwrap(), report);
        }
    }

    #[test]
    fn sweep_rejects_non_divisors_and_conserves_labels() {
        let set = small_set(10);
        let cfg = TrainConfig { max_epochs: 1, ..Default::default() };
        assert!(matches!(
            subcarrier_sweep(&set, &[1, 5], Variant::Cnn, 2, &cfg),
            Err(EvalError::GroupSize { group: 5, total: 242 })
        ));
        assert_eq!(crate::dataset::divisors(242), vec![1, 2, 11, 22, 121, 242]);
        let mut totals = Vec::new();
        for g in crate::dataset::divisors(242) {
            let d = set.dataset(g).unwrap();
            totals.push(d.mask.iter().filter(|&&m| m != 0.0).count() * d.n_ant());
        }
        assert!(totals.iter().all(|&t| t == 10 * 242 * 4));
    }

    #[test]
    fn sweep_and_comparison_run_end_to_end() {
        let set = small_set(20);
        let cfg = TrainConfig { max_epochs: 1, batch_size: 32, precision: Precision::F64, deterministic: true, ..Default::default() };
        let rows = subcarrier_sweep(&set, &[2, 242], Variant::Cnn, 2, &cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].label, "subcarrier-integrated");
        assert_eq!(rows[0].label_entries, rows[1].label_entries);
        assert!(rows.iter().all(|r| r.mean.is_finite() && r.trained.record.epochs.len() == 1));
        let entries = vec![ComparisonEntry { label: "x".into(), variant: Variant::Cnn, group: 242, reference: Some(0.448) }];
        let cmp = run_comparison(&set, &entries, 2, &cfg).unwrap();
        assert_eq!(cmp[0].trained.report.reference, Some(0.448));
        assert_eq!(cmp[0].mean, rows[1].mean);
    }

    fn report_of(errors: &[f64], g: usize) -> EvalReport {
        let overlay = Overlay { subcarriers: vec![-2, -1, 1], truth: vec![1.0, 0.5, 0.25], predicted: vec![0.9, 0.6, 0.2] };
        EvalReport::from_errors(Variant::Cnn, g, "abc".into(), Split::Test, 900, errors.to_vec(), overlay).unwrap()
    }

    #[test]
    fn render_ecdf_of_three_values() {
        let dir = tempfile::tempdir().unwrap();
        let files = render_report(dir.path(), &[report_of(&[1.0, 2.0, 3.0], 242)], &[]).unwrap();
        let read = |n: &str| std::fs::read_to_string(dir.path().join(n)).unwrap();
        assert_eq!(read("report_ecdf_cnn_242.csv"), "error,fraction\n1,0.3333333333333333\n2,0.6666666666666666\n3,1\n");
        let svg = read("report_ecdf_cnn_242.svg");
        assert_eq!(svg.matches("<polyline").count(), 1);
        let poly = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        let pts: Vec<&str> = poly.split(' ').collect();
        // Rise and run for each of the three steps.
        assert_eq!(pts.len(), 7);
        assert!(!svg.contains("<script"));
        assert_eq!(read("report_errors_cnn_242.csv").lines().count(), 4);
        assert!(read("report_errors_cnn_242.csv").starts_with("sample,frobenius_error\n900,1\n"));
        assert!(read("report_overlay_cnn_242.csv").contains("-2,1,0.9\n"));
        assert!(files.iter().all(|p| p.file_name().unwrap().to_str().unwrap().starts_with("report_")));
        assert!(files.iter().all(|p| !std::fs::read(p).unwrap().contains(&b'\r')));
    }

    #[test]
    fn render_is_byte_deterministic() {
        let reports = [report_of(&[0.4, 0.2, 0.9, 0.2], 242), report_of(&[0.5, 0.7], 1)];
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let fa = render_report(a.path(), &reports, &[]).unwrap();
        let fb = render_report(b.path(), &reports, &[]).unwrap();
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(x.file_name(), y.file_name());
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let table = std::fs::read_to_string(a.path().join("report_table_all_all.csv")).unwrap();
        assert_eq!(table.lines().count(), 3);
    }

    #[test]
    fn render_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(render_report(dir.path(), &[], &[]), Err(EvalError::Empty)));
        let dup = [report_of(&[1.0], 2), report_of(&[2.0], 2)];
        assert!(matches!(render_report(dir.path(), &dup, &[]), Err(EvalError::Invalid(_))));
        let file = dir.path().join("plain");
        std::fs::write(&file, b"x").unwrap();
        assert!(matches!(render_report(&file.join("sub"), &[report_of(&[1.0], 2)], &[]), Err(EvalError::Io { .. })));
    }
}
