//! Information propagation path search: alternating optimization of network
//! weights and scalar path weights on the supernet, followed by per-stage
//! argmax selection of at most one shallow path.

use crate::net::{build_network, Branch, FusionMode, NetSpec, Network, PathSpec, SelectedPath, NUM_STAGES};
use crate::tensor::{ParamGroup, SgdConfig};
use crate::train::{
    batch_grads, epoch_rng, forward_prepared, restore, seg_loss, snapshot, PreparedSample, TrainError,
};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// One scalar path weight of the supernet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathWeight {
    pub branch: Branch,
    pub target_stage: usize,
    pub source_stage: usize,
    pub value: f64,
}

/// Read the current path weights out of a supernet, in a fixed order.
pub fn path_weights(net: &Network<f32>) -> Vec<PathWeight> {
    let mut out = Vec::new();
    for branch in [Branch::Rgb, Branch::Pl] {
        if !net.spec.mode.two_branch() && branch == Branch::Pl {
            continue;
        }
        for i in 1..=NUM_STAGES {
            for j in 1..=i {
                let name = format!("ipps.p.{}.{}.{}", branch.tag(), i, j);
                if let Some(idx) = net.params.index_of(&name) {
                    out.push(PathWeight {
                        branch,
                        target_stage: i,
                        source_stage: j,
                        value: net.params.get(idx).data[0] as f64,
                    });
                }
            }
        }
    }
    out
}

/// The selection rule: per (branch, target stage), keep the shallow source
/// with the maximum weight iff that maximum is non-negative. The identity
/// path never participates. Ties break toward the deeper source. Pure and
/// invariant under scaling all weights by any positive factor.
pub fn select_paths(weights: &[PathWeight]) -> Vec<SelectedPath> {
    let mut selected = Vec::new();
    for branch in [Branch::Rgb, Branch::Pl] {
        for i in 2..=NUM_STAGES {
            let mut best: Option<(usize, f64)> = None;
            for w in weights {
                if w.branch != branch || w.target_stage != i || w.source_stage >= i {
                    continue;
                }
                let better = match best {
                    None => true,
                    // >= prefers the later (deeper) source on exact ties
                    Some((_, bv)) => w.value >= bv,
                };
                if better {
                    best = Some((w.source_stage, w.value));
                }
            }
            if let Some((j, v)) = best {
                if v >= 0.0 {
                    selected.push(SelectedPath { branch, target_stage: i, source_stage: j });
                }
            }
        }
    }
    selected
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub epochs: usize,
    /// SGD settings for the network weights (even minibatches).
    pub sgd: SgdConfig,
    /// SGD settings for the path weights (odd minibatches).
    pub path_sgd: SgdConfig,
}

/// Full outcome of a search run: the selection, the raw final weights for
/// audit, and the per-epoch weight trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub selected: Vec<SelectedPath>,
    pub final_weights: Vec<PathWeight>,
    pub trajectory: Vec<Vec<PathWeight>>,
    pub epoch_losses: Vec<f64>,
}

/// Alternate per-minibatch updates of θ (network weights) and p (path
/// weights) on the supernet, both minimizing the segmentation loss.
/// Diverging runs roll back to the last completed epoch.
pub fn alternate_search(
    net: &mut Network<f32>,
    train_set: &[PreparedSample],
    cfg: &SearchConfig,
) -> Result<SearchResult, TrainError> {
    cfg.sgd.validate().map_err(TrainError::InvalidConfig)?;
    cfg.path_sgd.validate().map_err(TrainError::InvalidConfig)?;
    if !matches!(net.spec.paths, PathSpec::Supernet) {
        return Err(TrainError::InvalidConfig("alternate_search requires a supernet".into()));
    }
    if train_set.is_empty() {
        return Err(TrainError::InvalidConfig("empty training set".into()));
    }
    let mut trajectory = Vec::with_capacity(cfg.epochs);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut stable = snapshot(net);
    let mut global_step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.sgd.seed, epoch));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.sgd.batch_size) {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let step = batch_grads(net, &batch, &|g, binding, p| {
                let out = forward_prepared(net, g, binding, p)?;
                Ok(seg_loss(g, out.logits, &p.labels)?)
            })
            .and_then(|(loss, grads)| {
                if global_step % 2 == 0 {
                    net.params.sgd_step(&grads, &cfg.sgd, Some(ParamGroup::Weights))?;
                } else {
                    net.params.sgd_step(&grads, &cfg.path_sgd, Some(ParamGroup::PathWeights))?;
                }
                Ok(loss)
            });
            match step {
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
        trajectory.push(path_weights(net));
        epoch_losses.push(epoch_loss / batches as f64);
        stable = snapshot(net);
    }
    let final_weights = path_weights(net);
    Ok(SearchResult {
        selected: select_paths(&final_weights),
        final_weights,
        trajectory,
        epoch_losses,
    })
}

/// Build the deployable network for a selection: identity paths plus the
/// selected transfer paths, freshly initialized for retraining from scratch.
pub fn finalize(
    mode: FusionMode,
    backbone: crate::net::BackboneConfig,
    selected: &[SelectedPath],
    seed: u64,
) -> Network<f32> {
    let mut spec = NetSpec::new(mode, backbone);
    spec.paths = if selected.is_empty() {
        PathSpec::Identity
    } else {
        PathSpec::Selected(selected.to_vec())
    };
    build_network(spec, seed)
}
