//! Deterministic SGD training and evaluation harness. Batch samples are
//! processed in parallel as independent graphs; gradients merge in index
//! order so results are bit-identical regardless of thread count.

use crate::metrics::{evaluate_scores, max_f_sweep, EvalReport, MetricsError, ScoreMap};
use crate::net::{FusionMode, NetOutput, Network};
use crate::pl::{altitude_to_pl, depth_to_altitude, pl_feature_image, PlError};
use crate::scene::{load_sample, DatasetManifest, Sample, SceneError, Split, SKY_DEPTH};
use crate::tensor::{Graph, ParamGroup, SgdConfig, TensorError, TensorId};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Pl(#[from] PlError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("training diverged (non-finite value) at epoch {epoch}, step {step}; parameters rolled back to the last stable epoch")]
    Diverged { epoch: usize, step: usize },
    #[error("split {0:?} is empty")]
    EmptySplit(Split),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("epoch callback failed: {0}")]
    Record(String),
}

/// One sample converted to network inputs for a given fusion mode.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub width: usize,
    pub height: usize,
    /// Input to the (single or RGB) branch, channel-major.
    pub primary: Vec<f32>,
    pub primary_channels: usize,
    /// Input to the PL branch in two-branch modes.
    pub aux: Option<Vec<f32>>,
    pub aux_channels: usize,
    pub labels: Vec<u8>,
}

fn pl_feature(sample: &Sample, pl_clip: f64) -> Result<Vec<f32>, PlError> {
    let alt = depth_to_altitude(&sample.depth_map(), &sample.intrinsics)?;
    let pl = altitude_to_pl(&alt)?;
    Ok(pl_feature_image(&pl, pl_clip)?.into_iter().map(|v| v as f32).collect())
}

/// Convert a loaded sample to network inputs. `rgb_aux` replaces the PL
/// branch input with the RGB image (the distilled student configuration).
pub fn prepare_sample(
    sample: &Sample,
    mode: FusionMode,
    pl_clip: f64,
    rgb_aux: bool,
) -> Result<PreparedSample, TrainError> {
    let (w, h) = (sample.width, sample.height);
    let rgb: Vec<f32> = sample.rgb_chw().into_iter().map(|v| v as f32).collect();
    let labels = sample.labels();
    let prepared = match mode {
        FusionMode::NfRgb => PreparedSample {
            width: w,
            height: h,
            primary: rgb,
            primary_channels: 3,
            aux: None,
            aux_channels: 0,
            labels,
        },
        FusionMode::NfPl => PreparedSample {
            width: w,
            height: h,
            primary: pl_feature(sample, pl_clip)?,
            primary_channels: 1,
            aux: None,
            aux_channels: 0,
            labels,
        },
        FusionMode::NfDepth => PreparedSample {
            width: w,
            height: h,
            primary: sample.depth.iter().map(|&d| d / SKY_DEPTH).collect(),
            primary_channels: 1,
            aux: None,
            aux_channels: 0,
            labels,
        },
        FusionMode::Lif | FusionMode::Plif => {
            let (aux, aux_channels) = if rgb_aux {
                (rgb.clone(), 3)
            } else {
                (pl_feature(sample, pl_clip)?, 1)
            };
            PreparedSample {
                width: w,
                height: h,
                primary: rgb,
                primary_channels: 3,
                aux: Some(aux),
                aux_channels,
                labels,
            }
        }
    };
    Ok(prepared)
}

/// Load and prepare every index of a split, in order, in parallel.
pub fn load_split(
    manifest: &DatasetManifest,
    split: Split,
    mode: FusionMode,
    rgb_aux: bool,
) -> Result<Vec<PreparedSample>, TrainError> {
    let indices = manifest.split(split);
    if indices.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    indices
        .par_iter()
        .map(|&i| {
            let sample = load_sample(manifest, i)?;
            prepare_sample(&sample, mode, manifest.pl_clip, rgb_aux)
        })
        .collect()
}

/// Build input leaves and run the network forward on one prepared sample.
pub fn forward_prepared(
    net: &Network<f32>,
    g: &mut Graph<f32>,
    binding: &[TensorId],
    p: &PreparedSample,
) -> Result<NetOutput, TensorError> {
    let primary = g.constant(&[1, p.primary_channels, p.height, p.width], p.primary.clone())?;
    let aux = match &p.aux {
        Some(v) => Some(g.constant(&[1, p.aux_channels, p.height, p.width], v.clone())?),
        None => None,
    };
    net.forward(g, binding, primary, aux)
}

/// Cross-entropy segmentation loss against the sample's road mask.
pub fn seg_loss(g: &mut Graph<f32>, logits: TensorId, labels: &[u8]) -> Result<TensorId, TensorError> {
    g.softmax_cross_entropy(logits, labels, None)
}

/// Mean loss and index-ordered mean gradients over a batch. Each sample
/// evaluates `loss_fn` in its own graph; rayon parallelism never changes
/// the merged result because summation follows batch order.
pub fn batch_grads<F>(
    net: &Network<f32>,
    batch: &[&PreparedSample],
    loss_fn: &F,
) -> Result<(f64, Vec<Vec<f32>>), TrainError>
where
    F: Fn(&mut Graph<f32>, &[TensorId], &PreparedSample) -> Result<TensorId, TrainError> + Sync,
{
    let per_sample: Vec<Result<(f64, Vec<Vec<f32>>), TrainError>> = batch
        .par_iter()
        .map(|p| {
            let mut g = Graph::new();
            let binding = net.params.bind(&mut g)?;
            let loss = loss_fn(&mut g, &binding, p)?;
            g.backward(loss)?;
            let grads = binding
                .iter()
                .map(|&id| {
                    g.grad(id)
                        .map(|s| s.to_vec())
                        .unwrap_or_else(|| vec![0.0; g.value(id).len()])
                })
                .collect();
            Ok((g.value(loss)[0] as f64, grads))
        })
        .collect();
    let scale = 1.0 / batch.len() as f32;
    let mut mean_loss = 0.0;
    let mut merged: Option<Vec<Vec<f32>>> = None;
    for r in per_sample {
        let (loss, grads) = r?;
        mean_loss += loss;
        match &mut merged {
            None => merged = Some(grads),
            Some(acc) => {
                for (a, gvec) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.iter_mut().zip(gvec) {
                        *x += *y;
                    }
                }
            }
        }
    }
    let mut merged = merged.expect("empty batch");
    for gvec in &mut merged {
        for v in gvec.iter_mut() {
            *v *= scale;
        }
    }
    Ok((mean_loss / batch.len() as f64, merged))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub sgd: SgdConfig,
    /// Alternate parameter groups per minibatch: even global steps update
    /// the convolution weights, odd steps the path weights (IPPS search).
    pub alternate_path_weights: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_max_f: Option<f64>,
}

pub(crate) fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut x = seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ChaCha8Rng::seed_from_u64(x ^ (x >> 31))
}

pub(crate) fn snapshot(net: &Network<f32>) -> Vec<Vec<f32>> {
    net.params.iter().map(|p| p.data.clone()).collect()
}

pub(crate) fn restore(net: &mut Network<f32>, snap: &[Vec<f32>]) {
    for (idx, data) in snap.iter().enumerate() {
        net.params.get_mut(idx).data = data.clone();
    }
    net.params.reset_momentum();
}

/// Train on already-prepared samples with the segmentation loss. On a
/// non-finite value the parameters roll back to the last completed epoch
/// and `Diverged` is returned.
pub fn train_segmentation(
    net: &mut Network<f32>,
    train_set: &[PreparedSample],
    val_set: Option<&[PreparedSample]>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>, TrainError> {
    train_segmentation_with(net, train_set, val_set, cfg, |_| Ok(()))
}

/// Like [`train_segmentation`], invoking `on_epoch` after each completed
/// epoch (for journaling); a callback error aborts the run.
pub fn train_segmentation_with<F>(
    net: &mut Network<f32>,
    train_set: &[PreparedSample],
    val_set: Option<&[PreparedSample]>,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochLog>, TrainError>
where
    F: FnMut(&EpochLog) -> Result<(), TrainError>,
{
    cfg.sgd.validate().map_err(TrainError::InvalidConfig)?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut stable = snapshot(net);
    let mut global_step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.sgd.seed, epoch));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.sgd.batch_size) {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let step_result = batch_grads(net, &batch, &|g, binding, p| {
                let out = forward_prepared(net, g, binding, p)?;
                Ok(seg_loss(g, out.logits, &p.labels)?)
            })
            .and_then(|(loss, grads)| {
                let group = if cfg.alternate_path_weights {
                    Some(if global_step % 2 == 0 { ParamGroup::Weights } else { ParamGroup::PathWeights })
                } else {
                    None
                };
                net.params.sgd_step(&grads, &cfg.sgd, group)?;
                Ok(loss)
            });
            match step_result {
                Ok(loss) => {
                    epoch_loss += loss;
                    batches += 1;
                    global_step += 1;
                }
                Err(TrainError::Tensor(_)) => {
                    restore(net, &stable);
                    return Err(TrainError::Diverged { epoch, step: global_step });
                }
                Err(e) => return Err(e),
            }
        }
        let val_max_f = match val_set {
            Some(vs) if !vs.is_empty() => Some(max_f_on(net, vs)?),
            _ => None,
        };
        let log = EpochLog { epoch, train_loss: epoch_loss / batches as f64, val_max_f };
        on_epoch(&log)?;
        logs.push(log);
        stable = snapshot(net);
    }
    Ok(logs)
}

/// Per-pixel road scores in [0, 1] for one prepared sample: the softmax
/// probability of the road channel, sigmoid(l1 - l0).
pub fn score_prepared(net: &Network<f32>, p: &PreparedSample) -> Result<Vec<f64>, TrainError> {
    let mut g = Graph::new();
    let binding = net.params.bind(&mut g)?;
    let out = forward_prepared(net, &mut g, &binding, p)?;
    let plane = p.height * p.width;
    let v = g.value(out.logits);
    Ok((0..plane)
        .map(|i| {
            let d = (v[plane + i] - v[i]) as f64;
            1.0 / (1.0 + (-d).exp())
        })
        .collect())
}

fn score_maps(net: &Network<f32>, set: &[PreparedSample]) -> Result<Vec<ScoreMap>, TrainError> {
    set.par_iter()
        .map(|p| {
            let scores = score_prepared(net, p)?;
            let mask = p.labels.iter().map(|&l| l == 1).collect();
            Ok(ScoreMap::new(scores, mask)?)
        })
        .collect()
}

/// Held-out MaxF in percent, pooled over the set.
pub fn max_f_on(net: &Network<f32>, set: &[PreparedSample]) -> Result<f64, TrainError> {
    Ok(max_f_sweep(&score_maps(net, set)?)?.max_f * 100.0)
}

/// Full evaluation report over a prepared set.
pub fn evaluate_prepared(net: &Network<f32>, set: &[PreparedSample]) -> Result<EvalReport, TrainError> {
    Ok(evaluate_scores(&score_maps(net, set)?)?)
}

/// Evaluate a network on one split of a dataset.
pub fn evaluate_network(
    net: &Network<f32>,
    manifest: &DatasetManifest,
    split: Split,
    rgb_aux: bool,
) -> Result<EvalReport, TrainError> {
    let set = load_split(manifest, split, net.spec.mode, rgb_aux)?;
    evaluate_prepared(net, &set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_network, BackboneConfig, NetSpec};
    use crate::scene::{write_dataset, SceneConfig};
    use tempfile::tempdir;

    fn tiny_dataset() -> (tempfile::TempDir, DatasetManifest) {
        let dir = tempdir().unwrap();
        let cfg = SceneConfig { width: 32, height: 32, seed: 99, ..SceneConfig::default() };
        let manifest = write_dataset(&cfg, 10, dir.path()).unwrap();
        (dir, manifest)
    }

    fn small_spec(mode: FusionMode) -> NetSpec {
        NetSpec::new(mode, BackboneConfig { widths: [4, 8, 8, 8, 8], strides: [2, 1, 2, 2, 1], blocks: 1 })
    }

    fn quick_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            sgd: SgdConfig { learning_rate: 0.01, momentum: 0.9, batch_size: 4, seed: 7 },
            alternate_path_weights: false,
        }
    }

    #[test]
    fn zero_epochs_leaves_network_at_init() {
        let (_dir, manifest) = tiny_dataset();
        let train_set = load_split(&manifest, Split::Train, FusionMode::Plif, false).unwrap();
        let mut net = build_network::<f32>(small_spec(FusionMode::Plif), 1);
        let before = snapshot(&net);
        let logs = train_segmentation(&mut net, &train_set, None, &quick_cfg(0)).unwrap();
        assert!(logs.is_empty());
        assert_eq!(before, snapshot(&net));
    }

    #[test]
    fn seeded_rerun_is_bit_identical() {
        let (_dir, manifest) = tiny_dataset();
        let train_set = load_split(&manifest, Split::Train, FusionMode::Plif, false).unwrap();
        let run = || {
            let mut net = build_network::<f32>(small_spec(FusionMode::Plif), 1);
            train_segmentation(&mut net, &train_set, None, &quick_cfg(2)).unwrap();
            snapshot(&net)
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(&b) {
            let xb: Vec<u32> = x.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn training_reduces_loss_on_tiny_set() {
        let (_dir, manifest) = tiny_dataset();
        let train_set = load_split(&manifest, Split::Train, FusionMode::Plif, false).unwrap();
        let mut net = build_network::<f32>(small_spec(FusionMode::Plif), 1);
        let mut cfg = quick_cfg(12);
        cfg.sgd.learning_rate = 0.005;
        let logs = train_segmentation(&mut net, &train_set, None, &cfg).unwrap();
        let first: f64 = logs[..3].iter().map(|l| l.train_loss).sum::<f64>() / 3.0;
        let last: f64 = logs[logs.len() - 3..].iter().map(|l| l.train_loss).sum::<f64>() / 3.0;
        assert!(last < first, "loss did not drop: {first} -> {last}");
    }

    #[test]
    fn prepared_inputs_match_modes() {
        let (_dir, manifest) = tiny_dataset();
        let sample = load_sample(&manifest, 0).unwrap();
        for (mode, pc, ac) in [
            (FusionMode::NfRgb, 3, 0),
            (FusionMode::NfPl, 1, 0),
            (FusionMode::NfDepth, 1, 0),
            (FusionMode::Lif, 3, 1),
            (FusionMode::Plif, 3, 1),
        ] {
            let p = prepare_sample(&sample, mode, manifest.pl_clip, false).unwrap();
            assert_eq!(p.primary_channels, pc, "{mode}");
            assert_eq!(p.aux_channels, ac, "{mode}");
            assert_eq!(p.primary.len(), pc * p.width * p.height);
            assert!(p.primary.iter().all(|v| v.is_finite()));
        }
        let student = prepare_sample(&sample, FusionMode::Plif, manifest.pl_clip, true).unwrap();
        assert_eq!(student.aux_channels, 3);
        assert_eq!(student.aux.as_ref().unwrap(), &student.primary);
    }

    #[test]
    fn pl_feature_values_bounded() {
        let (_dir, manifest) = tiny_dataset();
        let sample = load_sample(&manifest, 3).unwrap();
        let p = prepare_sample(&sample, FusionMode::NfPl, manifest.pl_clip, false).unwrap();
        assert!(p.primary.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn divergent_step_rolls_back_and_reports() {
        let (_dir, manifest) = tiny_dataset();
        let train_set = load_split(&manifest, Split::Train, FusionMode::Plif, false).unwrap();
        let mut net = build_network::<f32>(small_spec(FusionMode::Plif), 1);
        let before = snapshot(&net);
        let mut cfg = quick_cfg(3);
        cfg.sgd.learning_rate = 1.0e25; // guaranteed overflow to inf
        let err = train_segmentation(&mut net, &train_set, None, &cfg).unwrap_err();
        assert!(matches!(err, TrainError::Diverged { .. }), "{err}");
        assert_eq!(before, snapshot(&net));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let (_dir, manifest) = tiny_dataset();
        let mut net = build_network::<f32>(small_spec(FusionMode::Plif), 1);
        let train_set = load_split(&manifest, Split::Train, FusionMode::Plif, false).unwrap();
        train_segmentation(&mut net, &train_set, None, &quick_cfg(2)).unwrap();
        let a = evaluate_network(&net, &manifest, Split::Val, false).unwrap();
        let b = evaluate_network(&net, &manifest, Split::Val, false).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn scores_are_probabilities() {
        let (_dir, manifest) = tiny_dataset();
        let net = build_network::<f32>(small_spec(FusionMode::NfRgb), 5);
        let set = load_split(&manifest, Split::Test, FusionMode::NfRgb, false).unwrap();
        let scores = score_prepared(&net, &set[0]).unwrap();
        assert_eq!(scores.len(), 32 * 32);
        assert!(scores.iter().all(|&s| (0.0..=1.0).contains(&s)));
    }

    #[test]
    fn empty_split_rejected() {
        let dir = tempdir().unwrap();
        let cfg = SceneConfig { width: 32, height: 32, seed: 1, ..SceneConfig::default() };
        let manifest = write_dataset(&cfg, 2, dir.path()).unwrap();
        // count 2 -> val split is empty
        assert!(matches!(
            load_split(&manifest, Split::Val, FusionMode::NfRgb, false),
            Err(TrainError::EmptySplit(Split::Val))
        ));
    }
}
