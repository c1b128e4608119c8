//! Two-branch fusion network: residual mini-backbone, CTG fusion blocks
//! after stages 1-4, pyramid pooling per branch, and a two-class head.

use crate::tensor::{he_init, Graph, ParamGroup, ParamStore, Real, TensorError, TensorId};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub const NUM_STAGES: usize = 4;
pub const PPM_BINS: [usize; 3] = [1, 2, 4];
const PPM_REDUCED: usize = 32;
const HEAD_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMode {
    #[serde(rename = "NF-RGB")]
    NfRgb,
    #[serde(rename = "NF-PL")]
    NfPl,
    #[serde(rename = "NF-Depth")]
    NfDepth,
    #[serde(rename = "LIF")]
    Lif,
    #[serde(rename = "PLIF")]
    Plif,
}

impl FusionMode {
    pub fn two_branch(self) -> bool {
        matches!(self, FusionMode::Lif | FusionMode::Plif)
    }

    /// Channel count of the single-branch input (NF modes).
    pub fn single_input_channels(self) -> usize {
        match self {
            FusionMode::NfRgb => 3,
            FusionMode::NfPl | FusionMode::NfDepth => 1,
            _ => unreachable!("two-branch mode"),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FusionMode::NfRgb => "NF-RGB",
            FusionMode::NfPl => "NF-PL",
            FusionMode::NfDepth => "NF-Depth",
            FusionMode::Lif => "LIF",
            FusionMode::Plif => "PLIF",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for FusionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NF-RGB" => Ok(FusionMode::NfRgb),
            "NF-PL" => Ok(FusionMode::NfPl),
            "NF-Depth" => Ok(FusionMode::NfDepth),
            "LIF" => Ok(FusionMode::Lif),
            "PLIF" => Ok(FusionMode::Plif),
            other => Err(format!("unknown fusion mode {other:?} (expected NF-RGB, NF-PL, NF-Depth, LIF, PLIF)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Rgb,
    Pl,
}

impl Branch {
    pub fn tag(self) -> &'static str {
        match self {
            Branch::Rgb => "rgb",
            Branch::Pl => "pl",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Stem width followed by the four stage widths.
    pub widths: [usize; 5],
    /// Stem stride followed by the four stage strides.
    pub strides: [usize; 5],
    /// Residual blocks per stage (the first block carries the stage stride).
    pub blocks: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { widths: [8, 16, 32, 64, 64], strides: [2, 1, 2, 2, 1], blocks: 1 }
    }
}

impl BackboneConfig {
    pub fn validate(&self, input_h: usize, input_w: usize) -> Result<(), String> {
        if self.widths.iter().any(|&w| w == 0) {
            return Err("stage widths must be positive".into());
        }
        if self.widths[1..].iter().any(|&w| w % 4 != 0) {
            return Err("stage widths must be divisible by 4 (CTG reductions and PPM)".into());
        }
        if self.strides.iter().any(|&s| s == 0 || s > 2) {
            return Err("strides must be 1 or 2".into());
        }
        if self.blocks == 0 {
            return Err("each stage needs at least one block".into());
        }
        let total: usize = self.strides.iter().product();
        if input_h / total == 0 || input_w / total == 0 || input_h % total != 0 || input_w % total != 0 {
            return Err(format!("input {input_h}x{input_w} is not divisible by the stride plan (total stride {total})"));
        }
        Ok(())
    }

    /// (height, width) of stage `i` features (0 = stem) for a given input.
    pub fn stage_extent(&self, input_h: usize, input_w: usize, stage: usize) -> (usize, usize) {
        let total: usize = self.strides[..=stage].iter().product();
        (input_h / total, input_w / total)
    }
}

/// One kept shallow-to-deep propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedPath {
    pub branch: Branch,
    pub target_stage: usize,
    pub source_stage: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathSpec {
    /// The manually designed network: each CTG reads its own stage only.
    Identity,
    /// Identity paths plus the listed extra transfer paths.
    Selected(Vec<SelectedPath>),
    /// Every candidate path, gated by learnable scalar weights.
    Supernet,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NetSpec {
    pub mode: FusionMode,
    pub backbone: BackboneConfig,
    pub paths: PathSpec,
    /// Channels fed to the PL branch (1 normally, 3 for an RGB-only student).
    pub pl_input_channels: usize,
}

impl NetSpec {
    pub fn new(mode: FusionMode, backbone: BackboneConfig) -> Self {
        NetSpec { mode, backbone, paths: PathSpec::Identity, pl_input_channels: 1 }
    }
}

pub struct Network<T: Real> {
    pub spec: NetSpec,
    pub params: ParamStore<T>,
}

/// Per-stage tensors recorded during a two-branch forward pass: the raw
/// stage outputs s, the path-combined CTG inputs o, and the CTG outputs h.
#[derive(Debug, Clone, Copy)]
pub struct StageTaps {
    pub s_rgb: TensorId,
    pub s_pl: TensorId,
    pub o_rgb: TensorId,
    pub o_pl: TensorId,
    pub h_rgb: TensorId,
    pub h_pl: TensorId,
}

pub struct NetOutput {
    pub logits: TensorId,
    /// One entry per stage in two-branch modes; empty otherwise.
    pub fusion: Vec<StageTaps>,
    pub stage_extents: Vec<(usize, usize)>,
}

impl NetOutput {
    /// Last-CTG outputs (rgb, pl): the distillation tap points.
    pub fn taps(&self) -> Option<(TensorId, TensorId)> {
        self.fusion.last().map(|t| (t.h_rgb, t.h_pl))
    }
}

struct ParamBuilder<'a, T: Real> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Real> ParamBuilder<'a, T> {
    fn conv(&mut self, name: &str, co: usize, ci: usize, k: usize) {
        self.conv_scaled(name, co, ci, k, 1.0);
    }

    fn conv_scaled(&mut self, name: &str, co: usize, ci: usize, k: usize, scale: f64) {
        let shape = [co, ci, k, k];
        let s = T::from_f64(scale);
        let mut data = he_init(&mut self.rng, &shape);
        for v in &mut data {
            *v *= s;
        }
        self.store.add(&format!("{name}.w"), &shape, data, ParamGroup::Weights);
        self.store.add(&format!("{name}.b"), &[co], vec![T::zero(); co], ParamGroup::Weights);
    }

    fn scalar(&mut self, name: &str, value: f64) {
        self.store.add(name, &[1], vec![T::from_f64(value)], ParamGroup::PathWeights);
    }
}

impl<T: Real> Network<T> {
    /// Construct with seeded He initialization. Parameter creation order is
    /// fixed, so a (spec, seed) pair fully determines the initial state.
    /// Use [`build_network`]; this leaves the head parameters out.
    fn init(spec: NetSpec, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let mut b = ParamBuilder { store: &mut params, rng: ChaCha8Rng::seed_from_u64(seed) };
        let w = spec.backbone.widths;
        let branches: Vec<(Branch, usize)> = if spec.mode.two_branch() {
            vec![(Branch::Rgb, 3), (Branch::Pl, spec.pl_input_channels)]
        } else {
            vec![(Branch::Rgb, spec.mode.single_input_channels())]
        };
        for (br, in_ch) in &branches {
            let t = br.tag();
            b.conv(&format!("{t}.stem"), w[0], *in_ch, 3);
            for i in 1..=NUM_STAGES {
                for k in 0..spec.backbone.blocks {
                    let ci = if k == 0 { w[i - 1] } else { w[i] };
                    b.conv(&format!("{t}.s{i}.b{k}.conv1"), w[i], ci, 3);
                    b.conv(&format!("{t}.s{i}.b{k}.conv2"), w[i], w[i], 3);
                    if k == 0 && (spec.backbone.strides[i] != 1 || w[i] != w[i - 1]) {
                        b.conv(&format!("{t}.s{i}.b{k}.proj"), w[i], ci, 1);
                    }
                }
            }
        }
        if spec.mode.two_branch() {
            for i in 1..=NUM_STAGES {
                let c = w[i];
                b.conv(&format!("ctg{i}.red_rgb"), c / 2, c, 1);
                b.conv(&format!("ctg{i}.red_pl"), c / 2, c, 1);
                b.conv(&format!("ctg{i}.tfn1"), c, c, 3);
                // small-scale init keeps the generated alpha/beta maps near
                // zero at the start, so fusion begins close to identity and
                // the multiplicative alpha*F terms cannot blow up early
                b.conv_scaled(&format!("ctg{i}.tfn2"), 4 * c, c, 3, 0.05);
            }
        }
        // transfer convolutions for shallow paths
        let transfer_paths: Vec<SelectedPath> = match &spec.paths {
            PathSpec::Identity => vec![],
            PathSpec::Selected(sel) => sel.clone(),
            PathSpec::Supernet => {
                let mut all = Vec::new();
                for (br, _) in &branches {
                    for i in 2..=NUM_STAGES {
                        for j in 1..i {
                            all.push(SelectedPath { branch: *br, target_stage: i, source_stage: j });
                        }
                    }
                }
                all
            }
        };
        for p in &transfer_paths {
            b.conv(&format!("transfer.{}.s{}to{}", p.branch.tag(), p.source_stage, p.target_stage), w[p.target_stage], w[p.source_stage], 1);
        }
        if matches!(spec.paths, PathSpec::Supernet) {
            // search starts at the manually designed network: identity 1, shallow 0
            for (br, _) in &branches {
                for i in 1..=NUM_STAGES {
                    for j in 1..=i {
                        let v = if j == i { 1.0 } else { 0.0 };
                        b.scalar(&format!("ipps.p.{}.{}.{}", br.tag(), i, j), v);
                    }
                }
            }
        }
        Network { spec, params }
    }

    pub fn pid(&self, binding: &[TensorId], name: &str) -> TensorId {
        let idx = self.params.index_of(name).unwrap_or_else(|| panic!("no parameter named {name}"));
        binding[idx]
    }

    fn conv_bias(
        &self,
        g: &mut Graph<T>,
        binding: &[TensorId],
        name: &str,
        x: TensorId,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId, TensorError> {
        let w = self.pid(binding, &format!("{name}.w"));
        let b = self.pid(binding, &format!("{name}.b"));
        let y = g.conv2d(x, w, (stride, stride), (pad, pad))?;
        g.bias_add(y, b)
    }

    fn stage(&self, g: &mut Graph<T>, binding: &[TensorId], branch: Branch, i: usize, x: TensorId) -> Result<TensorId, TensorError> {
        let t = branch.tag();
        let mut h = x;
        for k in 0..self.spec.backbone.blocks {
            let stride = if k == 0 { self.spec.backbone.strides[i] } else { 1 };
            let base = format!("{t}.s{i}.b{k}");
            let y = self.conv_bias(g, binding, &format!("{base}.conv1"), h, stride, 1)?;
            let y = g.relu(y)?;
            let y = self.conv_bias(g, binding, &format!("{base}.conv2"), y, 1, 1)?;
            let skip = if self.params.index_of(&format!("{base}.proj.w")).is_some() {
                self.conv_bias(g, binding, &format!("{base}.proj"), h, stride, 0)?
            } else {
                h
            };
            let s = g.add(y, skip)?;
            h = g.relu(s)?;
        }
        Ok(h)
    }

    /// CTG fusion (concatenation, transformation, generation). Returns the
    /// updated (rgb, pl) pair; in LIF mode the PL branch passes through.
    pub fn ctg_forward(
        &self,
        g: &mut Graph<T>,
        binding: &[TensorId],
        i: usize,
        f_rgb: TensorId,
        f_pl: TensorId,
    ) -> Result<(TensorId, TensorId), TensorError> {
        if g.shape(f_rgb) != g.shape(f_pl) {
            return Err(TensorError::ShapeMismatch {
                op: "ctg_forward",
                lhs: g.shape(f_rgb).to_vec(),
                rhs: g.shape(f_pl).to_vec(),
            });
        }
        let c = g.shape(f_rgb)[1];
        let a = self.conv_bias(g, binding, &format!("ctg{i}.red_rgb"), f_rgb, 1, 0)?;
        let a = g.relu(a)?;
        let b = self.conv_bias(g, binding, &format!("ctg{i}.red_pl"), f_pl, 1, 0)?;
        let b = g.relu(b)?;
        let cat = g.concat_channels(&[a, b])?;
        let t = self.conv_bias(g, binding, &format!("ctg{i}.tfn1"), cat, 1, 1)?;
        let t = g.relu(t)?;
        let ab = self.conv_bias(g, binding, &format!("ctg{i}.tfn2"), t, 1, 1)?;
        let alpha1 = g.slice_channels(ab, 0, c)?;
        let beta1 = g.slice_channels(ab, c, 2 * c)?;
        if self.spec.mode == FusionMode::Lif {
            let out_rgb = affine_update(g, f_rgb, f_pl, alpha1, beta1)?;
            Ok((out_rgb, f_pl))
        } else {
            let alpha2 = g.slice_channels(ab, 2 * c, 3 * c)?;
            let beta2 = g.slice_channels(ab, 3 * c, 4 * c)?;
            ctg_generation(g, f_rgb, f_pl, alpha1, beta1, alpha2, beta2)
        }
    }

    fn ppm(&self, g: &mut Graph<T>, binding: &[TensorId], branch: Branch, x: TensorId) -> Result<TensorId, TensorError> {
        let t = branch.tag();
        let (h, w) = (g.shape(x)[2], g.shape(x)[3]);
        let mut parts = vec![x];
        for &bins in PPM_BINS.iter() {
            let pooled = g.avg_pool_bins(x, (bins.min(h), bins.min(w)))?;
            let r = self.conv_bias(g, binding, &format!("{t}.ppm.bin{bins}"), pooled, 1, 0)?;
            let r = g.relu(r)?;
            parts.push(g.bilinear_resize(r, (h, w))?);
        }
        let cat = g.concat_channels(&parts)?;
        let red = self.conv_bias(g, binding, &format!("{t}.ppm.reduce"), cat, 1, 0)?;
        g.relu(red)
    }

    /// Stage input under the path plan. `stage_outputs[j-1]` holds s_j.
    fn path_input(
        &self,
        g: &mut Graph<T>,
        binding: &[TensorId],
        branch: Branch,
        i: usize,
        stage_outputs: &[TensorId],
    ) -> Result<TensorId, TensorError> {
        let s_i = stage_outputs[i - 1];
        match &self.spec.paths {
            PathSpec::Identity => Ok(s_i),
            PathSpec::Selected(sel) => {
                let mut acc = s_i;
                for p in sel {
                    if p.branch == branch && p.target_stage == i {
                        let name = format!("transfer.{}.s{}to{}", branch.tag(), p.source_stage, i);
                        let stride = self.transfer_stride(p.source_stage, i);
                        let src = stage_outputs[p.source_stage - 1];
                        let w = self.pid(binding, &format!("{name}.w"));
                        let b = self.pid(binding, &format!("{name}.b"));
                        let tr = g.conv2d(src, w, (stride, stride), (0, 0))?;
                        let tr = g.bias_add(tr, b)?;
                        acc = g.add(acc, tr)?;
                    }
                }
                Ok(acc)
            }
            PathSpec::Supernet => {
                let mut acc: Option<TensorId> = None;
                for j in 1..=i {
                    let p = self.pid(binding, &format!("ipps.p.{}.{}.{}", branch.tag(), i, j));
                    let term = if j == i {
                        g.mul(s_i, p)?
                    } else {
                        let name = format!("transfer.{}.s{}to{}", branch.tag(), j, i);
                        let stride = self.transfer_stride(j, i);
                        let w = self.pid(binding, &format!("{name}.w"));
                        let b = self.pid(binding, &format!("{name}.b"));
                        let tr = g.conv2d(stage_outputs[j - 1], w, (stride, stride), (0, 0))?;
                        let tr = g.bias_add(tr, b)?;
                        g.mul(tr, p)?
                    };
                    acc = Some(match acc {
                        None => term,
                        Some(a) => g.add(a, term)?,
                    });
                }
                Ok(acc.unwrap())
            }
        }
    }

    fn transfer_stride(&self, from: usize, to: usize) -> usize {
        self.spec.backbone.strides[from + 1..=to].iter().product()
    }

    /// Full forward pass. `rgb` feeds the RGB branch; `aux` feeds the PL
    /// branch in two-branch modes (ignored otherwise).
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        binding: &[TensorId],
        rgb: TensorId,
        aux: Option<TensorId>,
    ) -> Result<NetOutput, TensorError> {
        let (in_h, in_w) = (g.shape(rgb)[2], g.shape(rgb)[3]);
        self.spec
            .backbone
            .validate(in_h, in_w)
            .map_err(|msg| TensorError::InvalidArgument { op: "forward", msg })?;
        let mut extents = Vec::new();
        let out = if self.spec.mode.two_branch() {
            let aux = aux.ok_or_else(|| TensorError::InvalidArgument {
                op: "forward",
                msg: "two-branch mode requires the auxiliary input".into(),
            })?;
            if g.shape(rgb)[2..] != g.shape(aux)[2..] {
                return Err(TensorError::ShapeMismatch {
                    op: "forward",
                    lhs: g.shape(rgb).to_vec(),
                    rhs: g.shape(aux).to_vec(),
                });
            }
            let stem_r = self.conv_bias(g, binding, "rgb.stem", rgb, self.spec.backbone.strides[0], 1)?;
            let mut h_rgb = g.relu(stem_r)?;
            let stem_p = self.conv_bias(g, binding, "pl.stem", aux, self.spec.backbone.strides[0], 1)?;
            let mut h_pl = g.relu(stem_p)?;
            let mut s_rgb = Vec::new();
            let mut s_pl = Vec::new();
            let mut fusion = Vec::new();
            for i in 1..=NUM_STAGES {
                let si_rgb = self.stage(g, binding, Branch::Rgb, i, h_rgb)?;
                let si_pl = self.stage(g, binding, Branch::Pl, i, h_pl)?;
                s_rgb.push(si_rgb);
                s_pl.push(si_pl);
                extents.push((g.shape(si_rgb)[2], g.shape(si_rgb)[3]));
                let o_rgb = self.path_input(g, binding, Branch::Rgb, i, &s_rgb)?;
                let o_pl = self.path_input(g, binding, Branch::Pl, i, &s_pl)?;
                let (hr, hp) = self.ctg_forward(g, binding, i, o_rgb, o_pl)?;
                h_rgb = hr;
                h_pl = hp;
                fusion.push(StageTaps { s_rgb: si_rgb, s_pl: si_pl, o_rgb, o_pl, h_rgb: hr, h_pl: hp });
            }
            let ctx_r = self.ppm(g, binding, Branch::Rgb, h_rgb)?;
            let ctx_p = self.ppm(g, binding, Branch::Pl, h_pl)?;
            let cat = g.concat_channels(&[ctx_r, ctx_p])?;
            let hd = self.conv_bias(g, binding, "head.conv1", cat, 1, 0)?;
            let hd = g.relu(hd)?;
            let logits = self.conv_bias(g, binding, "head.conv2", hd, 1, 0)?;
            let logits = g.bilinear_resize(logits, (in_h, in_w))?;
            NetOutput { logits, fusion, stage_extents: extents }
        } else {
            let stem = self.conv_bias(g, binding, "rgb.stem", rgb, self.spec.backbone.strides[0], 1)?;
            let mut h = g.relu(stem)?;
            let mut s_out = Vec::new();
            for i in 1..=NUM_STAGES {
                let si = self.stage(g, binding, Branch::Rgb, i, h)?;
                s_out.push(si);
                extents.push((g.shape(si)[2], g.shape(si)[3]));
                h = self.path_input(g, binding, Branch::Rgb, i, &s_out)?;
            }
            let ctx = self.ppm(g, binding, Branch::Rgb, h)?;
            let hd = self.conv_bias(g, binding, "head.conv1", ctx, 1, 0)?;
            let hd = g.relu(hd)?;
            let logits = self.conv_bias(g, binding, "head.conv2", hd, 1, 0)?;
            let logits = g.bilinear_resize(logits, (in_h, in_w))?;
            NetOutput { logits, fusion: Vec::new(), stage_extents: extents }
        };
        Ok(out)
    }

    /// Head input width depends on branch count; declared here so init can
    /// size the head convolutions.
    fn head_in(&self) -> usize {
        if self.spec.mode.two_branch() {
            2 * PPM_REDUCED
        } else {
            PPM_REDUCED
        }
    }
}

/// Head/PPM parameters depend on derived widths, so they are appended after
/// the constructor body above; kept in one place via this helper.
fn add_head_params<T: Real>(net: &mut Network<T>, seed: u64) {
    let head_in = net.head_in();
    let mut b = ParamBuilder { store: &mut net.params, rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15) };
    let c_last = net.spec.backbone.widths[NUM_STAGES];
    let branches: Vec<Branch> = if net.spec.mode.two_branch() {
        vec![Branch::Rgb, Branch::Pl]
    } else {
        vec![Branch::Rgb]
    };
    for br in branches {
        let t = br.tag();
        for &bins in PPM_BINS.iter() {
            b.conv(&format!("{t}.ppm.bin{bins}"), c_last / 4, c_last, 1);
        }
        let cat = c_last + PPM_BINS.len() * (c_last / 4);
        b.conv(&format!("{t}.ppm.reduce"), PPM_REDUCED, cat, 1);
    }
    b.conv("head.conv1", HEAD_HIDDEN, head_in, 1);
    b.conv("head.conv2", 2, HEAD_HIDDEN, 1);
}

/// base + (alpha · other + beta), elementwise.
fn affine_update<T: Real>(
    g: &mut Graph<T>,
    base: TensorId,
    other: TensorId,
    alpha: TensorId,
    beta: TensorId,
) -> Result<TensorId, TensorError> {
    let gen = g.mul(alpha, other)?;
    let gen = g.add(gen, beta)?;
    g.add(base, gen)
}

/// The generation step of CTG: the cross-branch affine updates applied to
/// both branches. Symmetric by construction — swapping the inputs together
/// with the (alpha1, beta1) and (alpha2, beta2) roles swaps the outputs.
pub fn ctg_generation<T: Real>(
    g: &mut Graph<T>,
    f_rgb: TensorId,
    f_pl: TensorId,
    alpha1: TensorId,
    beta1: TensorId,
    alpha2: TensorId,
    beta2: TensorId,
) -> Result<(TensorId, TensorId), TensorError> {
    let out_rgb = affine_update(g, f_rgb, f_pl, alpha1, beta1)?;
    let out_pl = affine_update(g, f_pl, f_rgb, alpha2, beta2)?;
    Ok((out_rgb, out_pl))
}

pub fn build_network<T: Real>(spec: NetSpec, seed: u64) -> Network<T> {
    let mut net = Network::init(spec, seed);
    add_head_params(&mut net, seed);
    net
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::Rng;

    fn leaf_from<T: Real>(g: &mut Graph<T>, shape: &[usize], data: &[f64]) -> TensorId {
        let v: Vec<T> = data.iter().map(|&x| T::from_f64(x)).collect();
        g.leaf(shape, v, true).unwrap()
    }

    fn small_backbone() -> BackboneConfig {
        BackboneConfig { widths: [4, 4, 4, 4, 4], strides: [2, 1, 2, 2, 1], blocks: 1 }
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
    }

    #[test]
    fn forward_shapes_all_modes() {
        let (h, w) = (32usize, 96usize);
        for mode in [FusionMode::NfRgb, FusionMode::NfPl, FusionMode::NfDepth, FusionMode::Lif, FusionMode::Plif] {
            let spec = NetSpec::new(mode, BackboneConfig::default());
            let net = build_network::<f32>(spec, 7);
            let mut g = Graph::new();
            let binding = net.params.bind(&mut g).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let in_ch = if mode.two_branch() { 3 } else { mode.single_input_channels() };
            let rgb = g.leaf(&[1, in_ch, h, w], rand_vec(&mut rng, in_ch * h * w), false).unwrap();
            let aux = if mode.two_branch() {
                Some(g.leaf(&[1, 1, h, w], rand_vec(&mut rng, h * w), false).unwrap())
            } else {
                None
            };
            let out = net.forward(&mut g, &binding, rgb, aux).unwrap();
            assert_eq!(g.shape(out.logits), &[1, 2, h, w], "mode {mode}");
            assert_eq!(out.taps().is_some(), mode.two_branch(), "mode {mode}");
            assert_eq!(out.stage_extents, vec![(16, 48), (8, 24), (4, 12), (4, 12)]);
            if let Some((tr, tp)) = out.taps() {
                assert_eq!(g.shape(tr), &[1, 64, 4, 12]);
                assert_eq!(g.shape(tp), &[1, 64, 4, 12]);
            }
        }
    }

    #[test]
    fn ctg_with_zero_tfn_is_identity() {
        let spec = NetSpec::new(FusionMode::Plif, small_backbone());
        let mut net = build_network::<f32>(spec, 3);
        for name in ["ctg1.tfn2.w", "ctg1.tfn2.b"] {
            let idx = net.params.index_of(name).unwrap();
            net.params.get_mut(idx).data.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let binding = net.params.bind(&mut g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = net.spec.backbone.widths[1];
        let fr = rand_vec(&mut rng, c * 6 * 6);
        let fp = rand_vec(&mut rng, c * 6 * 6);
        let a = g.leaf(&[1, c, 6, 6], fr.clone(), false).unwrap();
        let b = g.leaf(&[1, c, 6, 6], fp.clone(), false).unwrap();
        let (or, op) = net.ctg_forward(&mut g, &binding, 1, a, b).unwrap();
        assert_eq!(g.value(or), &fr[..]);
        assert_eq!(g.value(op), &fp[..]);
    }

    #[test]
    fn ctg_constant_beta_shifts_rgb_only() {
        let spec = NetSpec::new(FusionMode::Plif, small_backbone());
        let mut net = build_network::<f32>(spec, 3);
        let wi = net.params.index_of("ctg1.tfn2.w").unwrap();
        net.params.get_mut(wi).data.iter_mut().for_each(|v| *v = 0.0);
        let bi = net.params.index_of("ctg1.tfn2.b").unwrap();
        let c = net.spec.backbone.widths[1];
        for (ch, v) in net.params.get_mut(bi).data.iter_mut().enumerate() {
            // channels [c, 2c) carry the additive term for the RGB update
            *v = if (c..2 * c).contains(&ch) { 0.25 } else { 0.0 };
        }
        let mut g = Graph::new();
        let binding = net.params.bind(&mut g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fr = rand_vec(&mut rng, c * 5 * 4);
        let fp = rand_vec(&mut rng, c * 5 * 4);
        let a = g.leaf(&[1, c, 5, 4], fr.clone(), false).unwrap();
        let b = g.leaf(&[1, c, 5, 4], fp.clone(), false).unwrap();
        let (or, op) = net.ctg_forward(&mut g, &binding, 1, a, b).unwrap();
        for (y, x) in g.value(or).iter().zip(&fr) {
            assert!((y - (x + 0.25)).abs() < 1e-6);
        }
        assert_eq!(g.value(op), &fp[..]);
    }

    #[test]
    fn lif_leaves_pl_branch_untouched() {
        let spec = NetSpec::new(FusionMode::Lif, small_backbone());
        let net = build_network::<f32>(spec, 9);
        let mut g = Graph::new();
        let binding = net.params.bind(&mut g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = net.spec.backbone.widths[1];
        let a = g.leaf(&[1, c, 4, 4], rand_vec(&mut rng, c * 16), false).unwrap();
        let b = g.leaf(&[1, c, 4, 4], rand_vec(&mut rng, c * 16), false).unwrap();
        let (_, op) = net.ctg_forward(&mut g, &binding, 1, a, b).unwrap();
        assert_eq!(op, b);
    }

    #[test]
    fn supernet_at_init_matches_identity_network() {
        let seed = 21;
        let ident = build_network::<f32>(NetSpec::new(FusionMode::Plif, small_backbone()), seed);
        let mut sup_spec = NetSpec::new(FusionMode::Plif, small_backbone());
        sup_spec.paths = PathSpec::Supernet;
        let sup = build_network::<f32>(sup_spec, seed);
        let (h, w) = (32usize, 32usize);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rgb_v = rand_vec(&mut rng, 3 * h * w);
        let pl_v = rand_vec(&mut rng, h * w);
        let run = |net: &Network<f32>| {
            let mut g = Graph::new();
            let binding = net.params.bind(&mut g).unwrap();
            let rgb = g.leaf(&[1, 3, h, w], rgb_v.clone(), false).unwrap();
            let aux = g.leaf(&[1, 1, h, w], pl_v.clone(), false).unwrap();
            let out = net.forward(&mut g, &binding, rgb, Some(aux)).unwrap();
            g.value(out.logits).to_vec()
        };
        let a = run(&ident);
        let b = run(&sup);
        let ab: Vec<u32> = a.iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u32> = b.iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }

    /// Union of nonzero-gradient flags over a few random inputs; narrow
    /// global-pooled units may be inactive for any single input.
    fn assert_all_params_live(net: &Network<f32>, seed: u64, rounds: usize) {
        let (h, w) = (32usize, 32usize);
        let mut live = vec![false; net.params.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for round in 0..rounds {
            let mut g = Graph::new();
            let binding = net.params.bind(&mut g).unwrap();
            let rgb = g.leaf(&[1, 3, h, w], rand_vec(&mut rng, 3 * h * w), false).unwrap();
            let aux = g.leaf(&[1, 1, h, w], rand_vec(&mut rng, h * w), false).unwrap();
            let out = net.forward(&mut g, &binding, rgb, Some(aux)).unwrap();
            let labels: Vec<u8> = (0..h * w).map(|i| ((i + round) % 2) as u8).collect();
            let loss = g.softmax_cross_entropy(out.logits, &labels, None).unwrap();
            g.backward(loss).unwrap();
            for (flag, &id) in live.iter_mut().zip(&binding) {
                let grad = g.grad(id).expect("missing gradient");
                *flag |= grad.iter().any(|&v| v != 0.0);
            }
        }
        for (param, &flag) in net.params.iter().zip(&live) {
            assert!(flag, "{}: gradient identically zero on every batch", param.name);
        }
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let mut bb = small_backbone();
        bb.widths = [8, 8, 8, 8, 8];
        let net = build_network::<f32>(NetSpec::new(FusionMode::Plif, bb), 11);
        assert_all_params_live(&net, 4, 3);
    }

    #[test]
    fn full_network_gradcheck() {
        let spec = NetSpec::new(FusionMode::Plif, small_backbone());
        let net = build_network::<f64>(spec, 17);
        let (h, w) = (32usize, 32usize);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut inputs: Vec<Vec<f64>> = vec![
            (0..3 * h * w).map(|_| rng.gen_range(-0.9..0.9)).collect(),
            (0..h * w).map(|_| rng.gen_range(-0.9..0.9)).collect(),
        ];
        for p in net.params.iter() {
            // jitter away from the zero-initialized biases: exact zeros put
            // ReLU preactivations on the kink, where central differences and
            // the subgradient legitimately disagree
            inputs.push(p.data.iter().map(|&v| v + rng.gen_range(-0.05..0.05)).collect());
        }
        let labels: Vec<u8> = (0..h * w).map(|i| ((i / 7) % 2) as u8).collect();
        // probe two coordinates of each input and each parameter tensor
        let mut probes = Vec::new();
        for (li, v) in inputs.iter().enumerate() {
            probes.push((li, 0));
            if v.len() > 1 {
                probes.push((li, v.len() / 2));
            }
        }
        let shapes: Vec<Vec<usize>> = net.params.iter().map(|p| p.shape.clone()).collect();
        let result = gradcheck::check_subset("full_network", &inputs, &probes, |g, vals| {
            let rgb = leaf_from(g, &[1, 3, h, w], &vals[0]);
            let aux = leaf_from(g, &[1, 1, h, w], &vals[1]);
            let mut leaves = vec![rgb, aux];
            let mut binding = Vec::new();
            for (shape, data) in shapes.iter().zip(&vals[2..]) {
                let id = leaf_from(g, shape, data);
                binding.push(id);
                leaves.push(id);
            }
            let out = net.forward(g, &binding, rgb, Some(aux)).unwrap();
            let loss = g.softmax_cross_entropy(out.logits, &labels, None).unwrap();
            (loss, leaves)
        });
        assert!(result.passed(), "{}: max rel err {:.3e} over {} probes", result.name, result.max_rel_err, result.checked);
    }

    #[test]
    fn supernet_path_weights_receive_gradient() {
        let mut spec = NetSpec::new(FusionMode::Plif, small_backbone());
        spec.paths = PathSpec::Supernet;
        let net = build_network::<f32>(spec, 19);
        let (h, w) = (32usize, 32usize);
        let mut g = Graph::new();
        let binding = net.params.bind(&mut g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rgb = g.leaf(&[1, 3, h, w], rand_vec(&mut rng, 3 * h * w), false).unwrap();
        let aux = g.leaf(&[1, 1, h, w], rand_vec(&mut rng, h * w), false).unwrap();
        let out = net.forward(&mut g, &binding, rgb, Some(aux)).unwrap();
        let labels: Vec<u8> = (0..h * w).map(|i| (i % 3 == 0) as u8).collect();
        let loss = g.softmax_cross_entropy(out.logits, &labels, None).unwrap();
        g.backward(loss).unwrap();
        let mut path_params = 0;
        for (param, &id) in net.params.iter().zip(&binding) {
            if param.group == ParamGroup::PathWeights {
                path_params += 1;
                let grad = g.grad(id).unwrap();
                assert!(grad[0] != 0.0, "{}: path weight gradient is zero", param.name);
            }
        }
        // 1 + 2 + 3 + 4 candidates per branch
        assert_eq!(path_params, 20);
    }

    #[test]
    fn selected_paths_change_output() {
        let seed = 23;
        let base = build_network::<f32>(NetSpec::new(FusionMode::Plif, small_backbone()), seed);
        let mut sel_spec = NetSpec::new(FusionMode::Plif, small_backbone());
        sel_spec.paths = PathSpec::Selected(vec![SelectedPath { branch: Branch::Pl, target_stage: 3, source_stage: 1 }]);
        let sel = build_network::<f32>(sel_spec, seed);
        assert!(sel.params.index_of("transfer.pl.s1to3.w").is_some());
        let (h, w) = (32usize, 32usize);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rgb_v = rand_vec(&mut rng, 3 * h * w);
        let pl_v = rand_vec(&mut rng, h * w);
        let run = |net: &Network<f32>| {
            let mut g = Graph::new();
            let binding = net.params.bind(&mut g).unwrap();
            let rgb = g.leaf(&[1, 3, h, w], rgb_v.clone(), false).unwrap();
            let aux = g.leaf(&[1, 1, h, w], pl_v.clone(), false).unwrap();
            let out = net.forward(&mut g, &binding, rgb, Some(aux)).unwrap();
            g.value(out.logits).to_vec()
        };
        let a = run(&base);
        let b = run(&sel);
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
    }

    #[test]
    fn bad_input_extent_rejected() {
        let net = build_network::<f32>(NetSpec::new(FusionMode::NfRgb, BackboneConfig::default()), 1);
        let mut g = Graph::new();
        let binding = net.params.bind(&mut g).unwrap();
        let rgb = g.leaf(&[1, 3, 30, 90], vec![0.1; 3 * 30 * 90], false).unwrap();
        assert!(net.forward(&mut g, &binding, rgb, None).is_err());
    }

    #[test]
    fn fusion_mode_serde_roundtrip() {
        for mode in [FusionMode::NfRgb, FusionMode::NfPl, FusionMode::NfDepth, FusionMode::Lif, FusionMode::Plif] {
            let s = serde_json::to_string(&mode).unwrap();
            let back: FusionMode = serde_json::from_str(&s).unwrap();
            assert_eq!(mode, back);
            let parsed: FusionMode = mode.to_string().parse().unwrap();
            assert_eq!(mode, parsed);
        }
    }
    /// Naive direct convolution used as a straight-line oracle.
    #[allow(clippy::too_many_arguments)]
    fn naive_conv(
        x: &[f64], ci: usize, h: usize, w: usize,
        k: &[f64], co: usize, kh: usize,
        bias: &[f64], stride: usize, pad: usize,
    ) -> (Vec<f64>, usize, usize) {
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kh) / stride + 1;
        let mut out = vec![0.0; co * oh * ow];
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[o];
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x[(c * h + iy as usize) * w + ix as usize]
                                        * k[((o * ci + c) * kh + ky) * kh + kx];
                                }
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        (out, oh, ow)
    }

    fn param_data(net: &Network<f64>, name: &str) -> Vec<f64> {
        net.params.get(net.params.index_of(name).unwrap()).data.clone()
    }

    #[test]
    fn ctg_generation_mirror_symmetry_bit_exact() {
        let mut g = Graph::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 2 * 4 * 4;
        let fr = g.leaf(&[1, 2, 4, 4], rand_vec(&mut rng, n), false).unwrap();
        let fp = g.leaf(&[1, 2, 4, 4], rand_vec(&mut rng, n), false).unwrap();
        let a1 = g.leaf(&[1, 2, 4, 4], rand_vec(&mut rng, n), false).unwrap();
        let b1 = g.leaf(&[1, 2, 4, 4], rand_vec(&mut rng, n), false).unwrap();
        let a2 = g.leaf(&[1, 2, 4, 4], rand_vec(&mut rng, n), false).unwrap();
        let b2 = g.leaf(&[1, 2, 4, 4], rand_vec(&mut rng, n), false).unwrap();
        let (x, y) = ctg_generation(&mut g, fr, fp, a1, b1, a2, b2).unwrap();
        let (ys, xs) = ctg_generation(&mut g, fp, fr, a2, b2, a1, b1).unwrap();
        let bits = |id: TensorId, g: &Graph<f32>| -> Vec<u32> { g.value(id).iter().map(|v| v.to_bits()).collect() };
        assert_eq!(bits(x, &g), bits(xs, &g));
        assert_eq!(bits(y, &g), bits(ys, &g));
    }

    #[test]
    fn ctg_generation_arithmetic() {
        // alpha1 = 1, beta1 = 0: the RGB update adds F_pl verbatim
        let mut g = Graph::<f32>::new();
        let fr = g.leaf(&[1, 1, 1, 2], vec![1.0, 2.0], false).unwrap();
        let fp = g.leaf(&[1, 1, 1, 2], vec![3.0, 4.0], false).unwrap();
        let one = g.leaf(&[1, 1, 1, 2], vec![1.0, 1.0], false).unwrap();
        let zero = g.leaf(&[1, 1, 1, 2], vec![0.0, 0.0], false).unwrap();
        let (x, _) = ctg_generation(&mut g, fr, fp, one, zero, zero, zero).unwrap();
        assert_eq!(g.value(x), &[4.0, 6.0]);
    }

    #[test]
    fn ctg_matches_straight_line_oracle() {
        let spec = NetSpec::new(FusionMode::Plif, small_backbone());
        let net = build_network::<f64>(spec, 41);
        let c = net.spec.backbone.widths[1];
        let (h, w) = (4usize, 4usize);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let fr: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fp: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let binding = net.params.bind(&mut g).unwrap();
        let a = g.leaf(&[1, c, h, w], fr.clone(), false).unwrap();
        let b = g.leaf(&[1, c, h, w], fp.clone(), false).unwrap();
        let (or, op) = net.ctg_forward(&mut g, &binding, 1, a, b).unwrap();

        // straight-line re-implementation
        let relu = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| x.max(0.0)).collect() };
        let (ra, _, _) = naive_conv(&fr, c, h, w, &param_data(&net, "ctg1.red_rgb.w"), c / 2, 1, &param_data(&net, "ctg1.red_rgb.b"), 1, 0);
        let (rb, _, _) = naive_conv(&fp, c, h, w, &param_data(&net, "ctg1.red_pl.w"), c / 2, 1, &param_data(&net, "ctg1.red_pl.b"), 1, 0);
        let mut cat = relu(ra);
        cat.extend(relu(rb));
        let (t, _, _) = naive_conv(&cat, c, h, w, &param_data(&net, "ctg1.tfn1.w"), c, 3, &param_data(&net, "ctg1.tfn1.b"), 1, 1);
        let t = relu(t);
        let (ab, _, _) = naive_conv(&t, c, h, w, &param_data(&net, "ctg1.tfn2.w"), 4 * c, 3, &param_data(&net, "ctg1.tfn2.b"), 1, 1);
        let plane = h * w;
        let mut exp_r = vec![0.0; c * plane];
        let mut exp_p = vec![0.0; c * plane];
        for ch in 0..c {
            for px in 0..plane {
                let i = ch * plane + px;
                let a1 = ab[i];
                let b1 = ab[(c + ch) * plane + px];
                let a2 = ab[(2 * c + ch) * plane + px];
                let b2 = ab[(3 * c + ch) * plane + px];
                exp_r[i] = fr[i] + (a1 * fp[i] + b1);
                exp_p[i] = fp[i] + (a2 * fr[i] + b2);
            }
        }
        for (got, want) in g.value(or).iter().zip(&exp_r) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        for (got, want) in g.value(op).iter().zip(&exp_p) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn supernet_matches_unrolled_sum_oracle() {
        let mut spec = NetSpec::new(FusionMode::Plif, small_backbone());
        spec.paths = PathSpec::Supernet;
        let mut net = build_network::<f64>(spec, 43);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for idx in 0..net.params.len() {
            if net.params.get(idx).group == ParamGroup::PathWeights {
                net.params.get_mut(idx).data[0] = rng.gen_range(-1.0..1.0);
            }
        }
        let (ih, iw) = (16usize, 48usize);
        let mut g = Graph::new();
        let binding = net.params.bind(&mut g).unwrap();
        let rgb_v: Vec<f64> = (0..3 * ih * iw).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pl_v: Vec<f64> = (0..ih * iw).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rgb = g.leaf(&[1, 3, ih, iw], rgb_v, false).unwrap();
        let aux = g.leaf(&[1, 1, ih, iw], pl_v, false).unwrap();
        let out = net.forward(&mut g, &binding, rgb, Some(aux)).unwrap();
        let widths = net.spec.backbone.widths;
        for branch in [Branch::Rgb, Branch::Pl] {
            let pick_s = |t: &StageTaps| match branch {
                Branch::Rgb => (t.s_rgb, t.o_rgb),
                Branch::Pl => (t.s_pl, t.o_pl),
            };
            for i in 1..=NUM_STAGES {
                let (s_i, o_i) = pick_s(&out.fusion[i - 1]);
                let (th, tw) = (g.shape(s_i)[2], g.shape(s_i)[3]);
                let mut expected = vec![0.0f64; widths[i] * th * tw];
                for j in 1..=i {
                    let p = param_data(&net, &format!("ipps.p.{}.{}.{}", branch.tag(), i, j))[0];
                    let term: Vec<f64> = if j == i {
                        g.value(s_i).to_vec()
                    } else {
                        let (s_j, _) = pick_s(&out.fusion[j - 1]);
                        let (sh, sw) = (g.shape(s_j)[2], g.shape(s_j)[3]);
                        let name = format!("transfer.{}.s{}to{}", branch.tag(), j, i);
                        let stride = sh / th;
                        let (v, oh, ow) = naive_conv(
                            g.value(s_j), widths[j], sh, sw,
                            &param_data(&net, &format!("{name}.w")), widths[i], 1,
                            &param_data(&net, &format!("{name}.b")), stride, 0,
                        );
                        assert_eq!((oh, ow), (th, tw));
                        v
                    };
                    for (e, v) in expected.iter_mut().zip(&term) {
                        *e += p * v;
                    }
                }
                for (got, want) in g.value(o_i).iter().zip(&expected) {
                    assert!((got - want).abs() < 1e-10, "branch {:?} stage {i}: {got} vs {want}", branch);
                }
            }
        }
    }

    #[test]
    fn zero_weight_head_gives_uniform_logits() {
        let spec = NetSpec::new(FusionMode::NfRgb, small_backbone());
        let mut net = build_network::<f32>(spec, 51);
        let wi = net.params.index_of("head.conv2.w").unwrap();
        net.params.get_mut(wi).data.iter_mut().for_each(|v| *v = 0.0);
        let bi = net.params.index_of("head.conv2.b").unwrap();
        net.params.get_mut(bi).data.copy_from_slice(&[0.75, -1.5]);
        let mut g = Graph::new();
        let binding = net.params.bind(&mut g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let rgb = g.leaf(&[1, 3, 32, 32], rand_vec(&mut rng, 3 * 32 * 32), false).unwrap();
        let out = net.forward(&mut g, &binding, rgb, None).unwrap();
        let v = g.value(out.logits);
        let plane = 32 * 32;
        assert!(v[..plane].iter().all(|&x| x == 0.75));
        assert!(v[plane..].iter().all(|&x| x == -1.5));
    }

    #[test]
    fn two_blocks_per_stage_forward_and_gradients() {
        let mut bb = small_backbone();
        bb.widths = [8, 8, 8, 8, 8];
        bb.blocks = 2;
        let spec = NetSpec::new(FusionMode::Plif, bb);
        let net = build_network::<f32>(spec, 53);
        assert!(net.params.index_of("rgb.s1.b1.conv1.w").is_some());
        assert!(net.params.index_of("rgb.s1.b1.proj.w").is_none());
        assert_all_params_live(&net, 54, 3);
    }
}

