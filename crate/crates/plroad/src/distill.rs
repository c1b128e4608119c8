//! Modality distillation: pixel-wise, patch-wise, and image-wise losses
//! tying an RGB-only student's last-CTG features to a frozen RGB+PL teacher.

use crate::net::Network;
use crate::tensor::{Graph, Real, TensorError, TensorId};
use crate::train::{
    batch_grads, epoch_rng, forward_prepared, max_f_on, restore, snapshot, EpochLog,
    PreparedSample, TrainConfig, TrainError,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_FLOOR: f64 = 1e-4;
/// Cosine clamp bound: strictly inside ±1 so arccos stays differentiable.
const COS_BOUND: f64 = 1.0 - 1e-9;
const ZERO_NORM_EPS: f64 = 1e-12;
const REDRAW_LIMIT: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MdConfig {
    /// Weight on each branch's distillation term (the segmentation term is
    /// unweighted).
    pub lambda: f64,
    pub ssim_window: usize,
    /// Pixel-pair draws for the image-wise loss.
    pub n_samples: usize,
    pub seed: u64,
    pub use_pixel: bool,
    pub use_patch: bool,
    pub use_image: bool,
}

impl Default for MdConfig {
    fn default() -> Self {
        MdConfig {
            lambda: 1.0,
            ssim_window: 11,
            n_samples: 128,
            seed: 0,
            use_pixel: true,
            use_patch: true,
            use_image: true,
        }
    }
}

impl MdConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.ssim_window % 2 == 0 || self.ssim_window == 0 {
            return Err(format!("ssim_window must be odd, got {}", self.ssim_window));
        }
        if self.n_samples == 0 {
            return Err("n_samples must be at least 1".into());
        }
        Ok(())
    }
}

fn require_same_shape<T: Real>(g: &Graph<T>, op: &'static str, a: TensorId, b: TensorId) -> Result<(), TensorError> {
    if g.shape(a) != g.shape(b) {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: g.shape(a).to_vec(),
            rhs: g.shape(b).to_vec(),
        });
    }
    Ok(())
}

/// Mean squared difference of sigmoid-mapped features over all pixels and
/// channels. Bounded in [0, 1]; zero when the features agree.
pub fn pixel_loss<T: Real>(g: &mut Graph<T>, h_t: TensorId, h_s: TensorId) -> Result<TensorId, TensorError> {
    require_same_shape(g, "pixel_loss", h_t, h_s)?;
    let st = g.sigmoid(h_t)?;
    let ss = g.sigmoid(h_s)?;
    let d = g.sub(st, ss)?;
    let sq = g.mul(d, d)?;
    g.mean(sq)
}

/// log10(1/ssim) of the sigmoid-mapped features with a uniform window,
/// dynamic range 1, standard stabilizers, channel-averaged ssim clamped to
/// [1e-4, 1]. Bounded in [0, 4].
pub fn patch_loss<T: Real>(
    g: &mut Graph<T>,
    h_t: TensorId,
    h_s: TensorId,
    window: usize,
) -> Result<TensorId, TensorError> {
    require_same_shape(g, "patch_loss", h_t, h_s)?;
    let x = g.sigmoid(h_t)?;
    let y = g.sigmoid(h_s)?;
    let mu_x = g.window_mean(x, window)?;
    let mu_y = g.window_mean(y, window)?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let m_xx = g.window_mean(xx, window)?;
    let m_yy = g.window_mean(yy, window)?;
    let m_xy = g.window_mean(xy, window)?;
    let mu_xx = g.mul(mu_x, mu_x)?;
    let mu_yy = g.mul(mu_y, mu_y)?;
    let mu_xy = g.mul(mu_x, mu_y)?;
    let var_x = g.sub(m_xx, mu_xx)?;
    let var_y = g.sub(m_yy, mu_yy)?;
    let cov = g.sub(m_xy, mu_xy)?;
    let c1 = T::from_f64(SSIM_C1);
    let c2 = T::from_f64(SSIM_C2);
    // numerator: (2 mu_x mu_y + C1)(2 cov + C2)
    let n1 = g.affine(mu_xy, T::from_f64(2.0), c1)?;
    let n2 = g.affine(cov, T::from_f64(2.0), c2)?;
    let num = g.mul(n1, n2)?;
    // denominator: (mu_x^2 + mu_y^2 + C1)(var_x + var_y + C2)
    let d1 = g.add(mu_xx, mu_yy)?;
    let d1 = g.affine(d1, T::one(), c1)?;
    let d2 = g.add(var_x, var_y)?;
    let d2 = g.affine(d2, T::one(), c2)?;
    let den = g.mul(d1, d2)?;
    let ssim_map = g.div(num, den)?;
    let ssim = g.mean(ssim_map)?;
    let clamped = g.clamp(ssim, T::from_f64(SSIM_FLOOR), T::one())?;
    // log10(1/s) = -ln(s) / ln(10)
    let ln_s = g.ln(clamped)?;
    g.affine(ln_s, T::from_f64(-1.0 / std::f64::consts::LN_10), T::zero())
}

/// Mean angular distance between the two maps' pixel-pair difference
/// vectors over `n_samples` seeded draws; in [0, 1]. Pairs whose teacher or
/// student difference vector has (near-)zero norm are redrawn a bounded
/// number of times and then skipped.
pub fn image_loss<T: Real>(
    g: &mut Graph<T>,
    h_t: TensorId,
    h_s: TensorId,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId, TensorError> {
    require_same_shape(g, "image_loss", h_t, h_s)?;
    let shape = g.shape(h_t).to_vec();
    if shape.len() != 4 || shape[2] * shape[3] < 2 {
        return Err(TensorError::InvalidArgument {
            op: "image_loss",
            msg: format!("need at least 2 pixel locations, got shape {shape:?}"),
        });
    }
    let (h, w) = (shape[2], shape[3]);
    let mut terms: Option<TensorId> = None;
    let mut counted = 0usize;
    for _ in 0..n_samples {
        let mut accepted = None;
        for _ in 0..REDRAW_LIMIT {
            let a = (rng.gen_range(0..h), rng.gen_range(0..w));
            let b = (rng.gen_range(0..h), rng.gen_range(0..w));
            if a == b {
                continue;
            }
            let dt = g.pixel_pair_diff(h_t, a, b)?;
            let ds = g.pixel_pair_diff(h_s, a, b)?;
            let nt: f64 = g.value(dt).iter().map(|&v| { let x = Real::to_f64(v); x * x }).sum::<f64>().sqrt();
            let ns: f64 = g.value(ds).iter().map(|&v| { let x = Real::to_f64(v); x * x }).sum::<f64>().sqrt();
            if nt < ZERO_NORM_EPS || ns < ZERO_NORM_EPS {
                continue;
            }
            accepted = Some((dt, ds));
            break;
        }
        let Some((dt, ds)) = accepted else { continue };
        let prod = g.mul(dt, ds)?;
        let dot = g.sum(prod)?;
        let tt = g.mul(dt, dt)?;
        let tt = g.sum(tt)?;
        let nt = g.sqrt(tt)?;
        let ss = g.mul(ds, ds)?;
        let ss = g.sum(ss)?;
        let ns = g.sqrt(ss)?;
        let nn = g.mul(nt, ns)?;
        let cos = g.div(dot, nn)?;
        let cos = g.clamp(cos, T::from_f64(-COS_BOUND), T::from_f64(COS_BOUND))?;
        let ang = g.acos(cos)?;
        terms = Some(match terms {
            None => ang,
            Some(t) => g.add(t, ang)?,
        });
        counted += 1;
    }
    let total = terms.ok_or_else(|| TensorError::InvalidArgument {
        op: "image_loss",
        msg: "every sampled pixel pair had a zero-norm difference vector".into(),
    })?;
    g.affine(total, T::from_f64(1.0 / (std::f64::consts::PI * counted as f64)), T::zero())
}

/// Sum of the enabled distillation terms for one (teacher, student) feature
/// pair. Returns None when every term is disabled.
pub fn md_pair_loss<T: Real>(
    g: &mut Graph<T>,
    h_t: TensorId,
    h_s: TensorId,
    cfg: &MdConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<TensorId>, TensorError> {
    let mut acc: Option<TensorId> = None;
    let push = |g: &mut Graph<T>, acc: &mut Option<TensorId>, t: TensorId| -> Result<(), TensorError> {
        *acc = Some(match *acc {
            None => t,
            Some(a) => g.add(a, t)?,
        });
        Ok(())
    };
    if cfg.use_pixel {
        let l = pixel_loss(g, h_t, h_s)?;
        push(g, &mut acc, l)?;
    }
    if cfg.use_patch {
        let l = patch_loss(g, h_t, h_s, cfg.ssim_window)?;
        push(g, &mut acc, l)?;
    }
    if cfg.use_image {
        let l = image_loss(g, h_t, h_s, cfg.n_samples, rng)?;
        push(g, &mut acc, l)?;
    }
    Ok(acc)
}

/// Eq. 8: lambda * (losses over the RGB-branch pair) + lambda * (losses over
/// the PL-branch pair) + segmentation cross entropy of the student.
#[allow(clippy::too_many_arguments)]
pub fn md_total<T: Real>(
    g: &mut Graph<T>,
    teacher_taps: (TensorId, TensorId),
    student_taps: (TensorId, TensorId),
    logits_s: TensorId,
    labels: &[u8],
    cfg: &MdConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId, TensorError> {
    let seg = g.softmax_cross_entropy(logits_s, labels, None)?;
    let mut total = seg;
    for (h_t, h_s) in [
        (teacher_taps.0, student_taps.0),
        (teacher_taps.1, student_taps.1),
    ] {
        if let Some(l) = md_pair_loss(g, h_t, h_s, cfg, rng)? {
            let weighted = g.affine(l, T::from_f64(cfg.lambda), T::zero())?;
            total = g.add(total, weighted)?;
        }
    }
    Ok(total)
}

/// Teacher features captured once per sample (the teacher is frozen).
#[derive(Debug, Clone)]
pub struct TeacherTaps {
    pub shape: Vec<usize>,
    pub rgb: Vec<f32>,
    pub pl: Vec<f32>,
}

/// Run the frozen teacher over the set and record its last-CTG outputs.
pub fn cache_teacher_taps(
    teacher: &Network<f32>,
    teacher_set: &[PreparedSample],
) -> Result<Vec<TeacherTaps>, TrainError> {
    use rayon::prelude::*;
    teacher_set
        .par_iter()
        .map(|p| {
            let mut g = Graph::new();
            let binding = teacher.params.bind(&mut g)?;
            let out = forward_prepared(teacher, &mut g, &binding, p)?;
            let (h_rgb, h_pl) = out.taps().ok_or_else(|| TensorError::InvalidArgument {
                op: "cache_teacher_taps",
                msg: "teacher has no fusion taps (single-branch mode)".into(),
            })?;
            Ok(TeacherTaps {
                shape: g.shape(h_rgb).to_vec(),
                rgb: g.value(h_rgb).to_vec(),
                pl: g.value(h_pl).to_vec(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillConfig {
    pub train: TrainConfig,
    pub md: MdConfig,
}

/// Train the student against the frozen teacher. `teacher_set` carries the
/// teacher's PL inputs; `student_set` carries the student's RGB-only inputs
/// for the same samples in the same order. Per-sample RNG streams make the
/// result independent of batch composition and thread order.
pub fn distill(
    teacher: &Network<f32>,
    student: &mut Network<f32>,
    teacher_set: &[PreparedSample],
    student_set: &[PreparedSample],
    val_set: Option<&[PreparedSample]>,
    cfg: &DistillConfig,
) -> Result<Vec<EpochLog>, TrainError> {
    cfg.train.sgd.validate().map_err(TrainError::InvalidConfig)?;
    cfg.md.validate().map_err(TrainError::InvalidConfig)?;
    if teacher_set.len() != student_set.len() || teacher_set.is_empty() {
        return Err(TrainError::InvalidConfig(format!(
            "teacher/student sets must be equal-length and nonempty, got {} and {}",
            teacher_set.len(),
            student_set.len()
        )));
    }
    if teacher.spec.backbone != student.spec.backbone || teacher.spec.paths != student.spec.paths {
        return Err(TrainError::InvalidConfig(
            "teacher and student architectures disagree; taps would not align".into(),
        ));
    }
    let taps = cache_teacher_taps(teacher, teacher_set)?;
    let mut logs = Vec::with_capacity(cfg.train.epochs);
    let mut stable = snapshot(student);
    let mut global_step = 0usize;
    for epoch in 0..cfg.train.epochs {
        let mut order: Vec<usize> = (0..student_set.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.train.sgd.seed, epoch));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.train.sgd.batch_size) {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &student_set[i]).collect();
            let ids: Vec<usize> = chunk.to_vec();
            let md = &cfg.md;
            let step = batch_grads(student, &batch, &|g, binding, p| {
                // identify the sample to pick its cached taps and RNG stream
                let sample_idx = ids
                    .iter()
                    .copied()
                    .find(|&i| std::ptr::eq(&student_set[i], p))
                    .expect("batch sample not in set");
                let cached = &taps[sample_idx];
                let out = forward_prepared(student, g, binding, p)?;
                let (s_rgb, s_pl) = out.taps().ok_or_else(|| TensorError::InvalidArgument {
                    op: "distill",
                    msg: "student has no fusion taps".into(),
                })?;
                let t_rgb = g.constant(&cached.shape, cached.rgb.clone())?;
                let t_pl = g.constant(&cached.shape, cached.pl.clone())?;
                let mut rng = epoch_rng(md.seed ^ (sample_idx as u64).rotate_left(17), epoch);
                Ok(md_total(g, (t_rgb, t_pl), (s_rgb, s_pl), out.logits, &p.labels, md, &mut rng)?)
            })
            .and_then(|(loss, grads)| {
                student.params.sgd_step(&grads, &cfg.train.sgd, None)?;
                Ok(loss)
            });
            match step {
                Ok(loss) => {
                    epoch_loss += loss;
                    batches += 1;
                    global_step += 1;
                }
                Err(TrainError::Tensor(_)) => {
                    restore(student, &stable);
                    return Err(TrainError::Diverged { epoch, step: global_step });
                }
                Err(e) => return Err(e),
            }
        }
        let val_max_f = match val_set {
            Some(vs) if !vs.is_empty() => Some(max_f_on(student, vs)?),
            _ => None,
        };
        logs.push(EpochLog { epoch, train_loss: epoch_loss / batches as f64, val_max_f });
        stable = snapshot(student);
    }
    Ok(logs)
}
