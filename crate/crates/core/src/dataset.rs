//! Training samples built from BFM/CSI pairs, realization-level splits and
//! the `BFMC` dataset file.
//!
//! A sample covers `g` consecutive occupied subcarriers of one realization.
//! Its input holds `(Re, Im)` of every `V[k]` entry and its label the CSI
//! amplitudes `|h_ij[k]| / s`, both laid out `(freq, antenna pair, channel)`
//! with antenna pairs flattened row-major. The frequency axis is zero-padded
//! to `F_pad` and the padding is masked.

use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bfm::{compute_bfm, BfmError, BfmTensor};
use crate::channel::{simulate_csi, ChannelError, ChannelProfile, CsiTensor, SimConfig};
use crate::container::{Block, BlockData, Container, ContainerError};
use crate::nn::{Batch, FeatureMap, Real};
use crate::rng::fnv1a;

pub const DATASET_MAGIC: [u8; 4] = *b"BFMC";
pub const DATASET_VERSION: u32 = 1;
const TENSOR_NAMES: [&str; 3] = ["inputs", "labels", "mask"];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("subcarrier indices of the BFM and CSI tensors differ")]
    MismatchedIndices,
    #[error("group is not a contiguous run of occupied subcarriers")]
    NonContiguousGroup,
    #[error("group size {group} does not divide {total} subcarriers")]
    GroupSize { group: usize, total: usize },
    #[error("unsupported antenna configuration: {0}")]
    Antennas(String),
    #[error("dataset is inconsistent: {0}")]
    Invalid(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Bfm(#[from] BfmError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Frequency length of a sample spanning `group` subcarriers. Groups of more
/// than one bin are padded to the next power of two of at least 16, which
/// four halvings divide; single-bin samples stay unpadded.
pub fn f_pad_for(group: usize) -> usize {
    if group <= 1 {
        1
    } else {
        group.max(16).next_power_of_two()
    }
}

/// Divisors of `k`, ascending.
pub fn divisors(k: usize) -> Vec<usize> {
    (1..=k).filter(|d| k % d == 0).collect()
}

/// One encoded sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub f_pad: usize,
    pub n_ant: usize,
    /// `(F_pad, A, 2)`.
    pub input: Vec<f32>,
    /// `(F_pad, A, 1)`.
    pub label: Vec<f32>,
    pub mask: Vec<bool>,
}

/// Encode the subcarriers listed in `group` (which must appear consecutively
/// in the tensors' subcarrier list) with labels divided by `scale`.
pub fn encode_sample(
    bfm: &BfmTensor,
    csi: &CsiTensor,
    scale: f64,
    group: &[i32],
    f_pad: usize,
) -> Result<Sample, DatasetError> {
    if bfm.subcarriers != csi.subcarriers {
        return Err(DatasetError::MismatchedIndices);
    }
    if csi.n_rx != csi.n_tx {
        return Err(DatasetError::Antennas(format!("{}x{} CSI; V and H must have equal entry counts", csi.n_rx, csi.n_tx)));
    }
    let start = group
        .first()
        .and_then(|first| csi.subcarriers.iter().position(|s| s == first))
        .ok_or(DatasetError::NonContiguousGroup)?;
    if csi.subcarriers.get(start..start + group.len()) != Some(group) {
        return Err(DatasetError::NonContiguousGroup);
    }
    if group.len() > f_pad {
        return Err(DatasetError::Invalid(format!("group of {} bins exceeds F_pad = {f_pad}", group.len())));
    }
    let n_ant = csi.n_rx * csi.n_tx;
    let mut input = vec![0.0f32; f_pad * n_ant * 2];
    let mut label = vec![0.0f32; f_pad * n_ant];
    let mut mask = vec![false; f_pad];
    for f in 0..group.len() {
        let k = start + f;
        for a in 0..n_ant {
            let v = bfm.v[k * n_ant + a];
            input[(f * n_ant + a) * 2] = v.re as f32;
            input[(f * n_ant + a) * 2 + 1] = v.im as f32;
            label[f * n_ant + a] = (csi.h[k * n_ant + a].norm() / scale) as f32;
        }
        mask[f] = true;
    }
    Ok(Sample { f_pad, n_ant, input, label, mask })
}

/// Inverse of [`encode_sample`] on the unmasked bins: per bin, the `V`
/// entries as `(re, im)` pairs and the de-normalized amplitudes.
pub fn decode_sample(sample: &Sample, scale: f64) -> (Vec<Vec<(f32, f32)>>, Vec<Vec<f64>>) {
    let a = sample.n_ant;
    let mut v = Vec::new();
    let mut amp = Vec::new();
    for f in (0..sample.f_pad).filter(|&f| sample.mask[f]) {
        v.push((0..a).map(|j| (sample.input[(f * a + j) * 2], sample.input[(f * a + j) * 2 + 1])).collect());
        amp.push((0..a).map(|j| sample.label[f * a + j] as f64 * scale).collect());
    }
    (v, amp)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Realization index ranges `[start, end)` of each split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: [usize; 2],
    pub val: [usize; 2],
    pub test: [usize; 2],
}

impl Splits {
    /// Test takes 10% of all realizations, validation 10% of the rest.
    pub fn for_count(n: usize) -> Self {
        let test = (n as f64 * 0.1).round() as usize;
        let pool = n - test;
        let val = (pool as f64 * 0.1).round() as usize;
        let train = pool - val;
        Splits { train: [0, train], val: [train, pool], test: [pool, n] }
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        let r = match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        };
        r[0]..r[1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    /// FNV-1a of the simulation config and profile, hex.
    pub config_hash: String,
    pub profile: String,
    /// Channel realizations.
    pub n_samples: usize,
    /// Encoded samples, `n_samples * groups_per_realization`.
    pub n_items: usize,
    pub group_size: usize,
    pub groups_per_realization: usize,
    pub f_pad: usize,
    pub n_ant: usize,
    /// Labels are amplitudes divided by this RMS of the train split.
    pub scale: f64,
    pub splits: Splits,
    pub seed: u64,
    pub sim: SimConfig,
    pub tensors: Vec<String>,
}

/// In-memory dataset: the manifest plus `inputs (N, F_pad, A, 2)`,
/// `labels (N, F_pad, A, 1)` and `mask (N, F_pad)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub manifest: DatasetManifest,
    pub inputs: Vec<f32>,
    pub labels: Vec<f32>,
    pub mask: Vec<f32>,
}

impl DatasetFile {
    pub fn n_items(&self) -> usize {
        self.manifest.n_items
    }

    pub fn f_pad(&self) -> usize {
        self.manifest.f_pad
    }

    pub fn n_ant(&self) -> usize {
        self.manifest.n_ant
    }

    /// Item index range of a split.
    pub fn split_items(&self, split: Split) -> Range<usize> {
        let r = self.manifest.splits.range(split);
        let g = self.manifest.groups_per_realization;
        r.start * g..r.end * g
    }

    /// Realization an item was cut from.
    pub fn realization_of(&self, item: usize) -> usize {
        item / self.manifest.groups_per_realization
    }

    pub fn sample(&self, item: usize) -> Sample {
        let (f, a) = (self.f_pad(), self.n_ant());
        Sample {
            f_pad: f,
            n_ant: a,
            input: self.inputs[item * f * a * 2..(item + 1) * f * a * 2].to_vec(),
            label: self.labels[item * f * a..(item + 1) * f * a].to_vec(),
            mask: self.mask[item * f..(item + 1) * f].iter().map(|&m| m != 0.0).collect(),
        }
    }

    /// Stack the listed items into a network batch.
    pub fn batch<T: Real>(&self, items: &[usize]) -> Batch<T> {
        let (f, a) = (self.f_pad(), self.n_ant());
        let gather = |src: &[f32], per: usize| -> Vec<T> {
            items.iter().flat_map(|&i| src[i * per..(i + 1) * per].iter().map(|&v| T::lit(v as f64))).collect()
        };
        Batch {
            input: FeatureMap::from_vec(items.len(), f, a, 2, gather(&self.inputs, f * a * 2)),
            label: FeatureMap::from_vec(items.len(), f, a, 1, gather(&self.labels, f * a)),
            mask: gather(&self.mask, f),
        }
    }

    /// FNV-1a of the encoded file, hex.
    pub fn content_hash(&self) -> String {
        format!("{:016x}", fnv1a(self.to_container().encode()))
    }

    fn to_container(&self) -> Container {
        let m = &self.manifest;
        let (n, f, a) = (m.n_items, m.f_pad, m.n_ant);
        Container {
            magic: DATASET_MAGIC,
            version: DATASET_VERSION,
            manifest: serde_json::to_string_pretty(m).expect("manifest serializes"),
            blocks: vec![
                Block::f32(&[n, f, a, 2], self.inputs.clone()),
                Block::f32(&[n, f, a, 1], self.labels.clone()),
                Block::f32(&[n, f], self.mask.clone()),
            ],
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        Ok(self.to_container().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let c = Container::load(path, DATASET_MAGIC, DATASET_VERSION)?;
        let manifest: DatasetManifest =
            serde_json::from_str(&c.manifest).map_err(|e| DatasetError::Invalid(format!("manifest: {e}")))?;
        if manifest.schema_version != DATASET_VERSION {
            return Err(ContainerError::VersionMismatch { found: manifest.schema_version, expected: DATASET_VERSION }.into());
        }
        let (n, f, a) = (manifest.n_items, manifest.f_pad, manifest.n_ant);
        let expected: [Vec<usize>; 3] = [vec![n, f, a, 2], vec![n, f, a, 1], vec![n, f]];
        if c.blocks.len() != 3 || manifest.tensors != TENSOR_NAMES {
            return Err(DatasetError::Invalid("expected inputs, labels and mask tensors".into()));
        }
        let mut data = Vec::with_capacity(3);
        for ((block, shape), name) in c.blocks.into_iter().zip(&expected).zip(TENSOR_NAMES) {
            if &block.shape() != shape {
                return Err(DatasetError::Invalid(format!("tensor `{name}` has shape {:?}, expected {shape:?}", block.dims)));
            }
            match block.data {
                BlockData::F32(v) => data.push(v),
                BlockData::F64(_) => return Err(DatasetError::Invalid(format!("tensor `{name}` must be f32"))),
            }
        }
        let g = manifest.groups_per_realization;
        let s = &manifest.splits;
        if g == 0
            || manifest.n_samples.checked_mul(g) != Some(n)
            || s.train[0] != 0
            || s.train[1] != s.val[0]
            || s.val[1] != s.test[0]
            || s.test[1] != manifest.n_samples
            || s.train[0] > s.train[1]
            || s.val[0] > s.val[1]
            || s.test[0] > s.test[1]
        {
            return Err(DatasetError::Invalid("split ranges do not tile the realizations".into()));
        }
        if !(manifest.scale > 0.0 && manifest.scale.is_finite()) {
            return Err(DatasetError::Invalid(format!("scale {} is not positive", manifest.scale)));
        }
        let mask = data.pop().expect("mask");
        let labels = data.pop().expect("labels");
        let inputs = data.pop().expect("inputs");
        Ok(DatasetFile { manifest, inputs, labels, mask })
    }
}

/// Fingerprint of everything that determines the simulated channels.
pub fn config_hash(config: &SimConfig, profile: &ChannelProfile) -> String {
    let text = serde_json::to_string(&(config, &profile.name, &profile.taps)).expect("config serializes");
    format!("{:016x}", fnv1a(text))
}

/// Simulated realizations in group-agnostic form, shared by datasets of
/// different group sizes.
pub struct RealizationSet {
    pub config: SimConfig,
    pub profile: String,
    pub config_hash: String,
    pub n_ant: usize,
    pub subcarriers: Vec<i32>,
    /// Per realization `(K, A, 2)` encoded `V` entries.
    inputs: Vec<Vec<f32>>,
    /// Per realization `(K, A)` raw amplitudes.
    amplitudes: Vec<Vec<f64>>,
}

/// Simulate `config.n_samples` realizations and their BFMs.
pub fn simulate_realizations(config: &SimConfig, profile: &ChannelProfile) -> Result<RealizationSet, DatasetError> {
    config.validate()?;
    if config.n_rx != config.n_tx {
        return Err(DatasetError::Antennas(format!("{}x{} links; datasets need n_rx = n_tx", config.n_rx, config.n_tx)));
    }
    let k = config.n_subcarriers();
    let per: Vec<(Vec<f32>, Vec<f64>)> = (0..config.n_samples)
        .into_par_iter()
        .map(|r| -> Result<_, DatasetError> {
            let csi = simulate_csi(profile, config, r as u64);
            let bfm = compute_bfm(&csi)?;
            let unit = encode_sample(&bfm, &csi, 1.0, &csi.subcarriers, k)?;
            let amps = csi.h.iter().map(|h| h.norm()).collect();
            Ok((unit.input, amps))
        })
        .collect::<Result<_, _>>()?;
    let (inputs, amplitudes) = per.into_iter().unzip();
    Ok(RealizationSet {
        config: config.clone(),
        profile: profile.name.clone(),
        config_hash: config_hash(config, profile),
        n_ant: config.n_rx * config.n_tx,
        subcarriers: config.occupied_subcarriers.clone(),
        inputs,
        amplitudes,
    })
}

impl RealizationSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Realization-level splits for this set.
    pub fn splits(&self) -> Splits {
        Splits::for_count(self.len())
    }

    /// RMS amplitude over the train split.
    pub fn train_scale(&self) -> f64 {
        let train = self.splits().range(Split::Train);
        let count: usize = self.amplitudes[train.clone()].iter().map(Vec::len).sum();
        let sum: f64 = self.amplitudes[train].iter().map(|a| a.iter().map(|v| v * v).sum::<f64>()).sum();
        if count == 0 {
            return 1.0;
        }
        (sum / count as f64).sqrt()
    }

    /// Cut every realization into groups of `group` subcarriers.
    pub fn dataset(&self, group: usize) -> Result<DatasetFile, DatasetError> {
        let k = self.subcarriers.len();
        if group == 0 || k % group != 0 {
            return Err(DatasetError::GroupSize { group, total: k });
        }
        let scale = self.train_scale();
        if !(scale > 0.0) {
            return Err(DatasetError::Invalid("train split has zero amplitude".into()));
        }
        let gpr = k / group;
        let (f_pad, a) = (f_pad_for(group), self.n_ant);
        let n_items = self.len() * gpr;
        let mut inputs = vec![0.0f32; n_items * f_pad * a * 2];
        let mut labels = vec![0.0f32; n_items * f_pad * a];
        let mut mask = vec![0.0f32; n_items * f_pad];
        let in_chunk = f_pad * a * 2;
        let lab_chunk = f_pad * a;
        inputs
            .par_chunks_mut(in_chunk * gpr)
            .zip(labels.par_chunks_mut(lab_chunk * gpr))
            .zip(mask.par_chunks_mut(f_pad * gpr))
            .enumerate()
            .for_each(|(r, ((inp, lab), msk))| {
                for q in 0..gpr {
                    let src = q * group * a;
                    inp[q * in_chunk..q * in_chunk + group * a * 2]
                        .copy_from_slice(&self.inputs[r][src * 2..(src + group * a) * 2]);
                    for (dst, amp) in lab[q * lab_chunk..q * lab_chunk + group * a]
                        .iter_mut()
                        .zip(&self.amplitudes[r][src..src + group * a])
                    {
                        *dst = (amp / scale) as f32;
                    }
                    msk[q * f_pad..q * f_pad + group].iter_mut().for_each(|m| *m = 1.0);
                }
            });
        let manifest = DatasetManifest {
            schema_version: DATASET_VERSION,
            config_hash: self.config_hash.clone(),
            profile: self.profile.clone(),
            n_samples: self.len(),
            n_items,
            group_size: group,
            groups_per_realization: gpr,
            f_pad,
            n_ant: a,
            scale,
            splits: self.splits(),
            seed: self.config.seed,
            sim: self.config.clone(),
            tensors: TENSOR_NAMES.iter().map(|s| s.to_string()).collect(),
        };
        Ok(DatasetFile { manifest, inputs, labels, mask })
    }
}

/// Simulate and encode a dataset of `group`-subcarrier samples.
pub fn generate_dataset(config: &SimConfig, profile: &ChannelProfile, group: usize) -> Result<DatasetFile, DatasetError> {
    let k = config.n_subcarriers();
    if group == 0 || k % group != 0 {
        return Err(DatasetError::GroupSize { group, total: k });
    }
    simulate_realizations(config, profile)?.dataset(group)
}
