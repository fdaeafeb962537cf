//! Sparsity-based CNN backbone: stacked dense-feature / sparse-attention
//! (DFSA) modules.
//!
//! Each module splits its input three ways. A single strided conv block keeps
//! large-scale position information cheaply (BEV maps are mostly empty, so
//! deep stacks at full resolution are wasted work). A spatial attention gate
//! — channel max and mean pooled, 7x7 conv, sigmoid — summarizes where the
//! occupied cells are. And a set of branches downsample harder (by `scales`),
//! run deeper (`blocks` conv blocks each), then upsample back and get
//! multiplied by the gate, spending depth on the dense small maps where the
//! receptive field per block is largest. Branch outputs and the large-scale
//! branch are concatenated and fused by a 1x1 conv block.
//!
//! The backbone concatenates all module outputs at a common scale.

use crate::nn::{self, Tensor4, UpsampleMode, WeightSpec, WeightStore};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Attention logits are clamped here before the sigmoid. f32 sigmoid
/// saturates to exactly 0 or 1 past ~17, and the gate must stay strictly
/// inside (0, 1); at ±15 the clamp changes values by less than 1e-7.
const ATTENTION_LOGIT_CLAMP: f32 = 15.0;

/// One dense-feature / sparse-attention module.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DfsaConfig {
    /// Stride of the module (and of its large-scale branch).
    pub stride: usize,
    /// Downsample factor per dense branch; powers of two, multiples of
    /// `stride`.
    pub scales: Vec<usize>,
    /// Conv blocks applied after each branch's downsample chain;
    /// nondecreasing with scale.
    pub blocks: Vec<usize>,
    pub branch_channels: usize,
    pub fused_channels: usize,
}

impl Default for DfsaConfig {
    fn default() -> Self {
        DfsaConfig {
            stride: 2,
            scales: vec![2, 4],
            blocks: vec![3, 5],
            branch_channels: 64,
            fused_channels: 128,
        }
    }
}

impl DfsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stride == 1 || self.stride == 2) {
            return Err(Error::Config(format!(
                "module stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        if self.scales.is_empty() || self.scales.len() != self.blocks.len() {
            return Err(Error::Config(format!(
                "scales ({:?}) and blocks ({:?}) must be non-empty and equal length",
                self.scales, self.blocks
            )));
        }
        for window in self.scales.windows(2) {
            if window[0] >= window[1] {
                return Err(Error::Config("scales must be strictly increasing".into()));
            }
        }
        for (i, &s) in self.scales.iter().enumerate() {
            if !s.is_power_of_two() || s < self.stride || s % self.stride != 0 {
                return Err(Error::Config(format!(
                    "scale {s} must be a power of two, >= stride {}, and divisible by it",
                    self.stride
                )));
            }
            if i > 0 && self.blocks[i] < self.blocks[i - 1] {
                return Err(Error::Config(format!(
                    "block counts {:?} must be nondecreasing with scale",
                    self.blocks
                )));
            }
        }
        if self.branch_channels < 1 || self.fused_channels < 1 {
            return Err(Error::Config("channel widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn max_scale(&self) -> usize {
        *self.scales.iter().max().expect("validated non-empty")
    }
}

/// The full backbone: modules applied in sequence, outputs concatenated at
/// `concat_stride` relative to the backbone input.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScbConfig {
    pub modules: Vec<DfsaConfig>,
    pub concat_stride: usize,
}

impl Default for ScbConfig {
    fn default() -> Self {
        preset("s24_n35").expect("default preset exists")
    }
}

impl ScbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modules.is_empty() {
            return Err(Error::Config("backbone needs at least one module".into()));
        }
        for m in &self.modules {
            m.validate()?;
        }
        if self.concat_stride < 1 {
            return Err(Error::Config("concat_stride must be >= 1".into()));
        }
        let mut cum = 1usize;
        for (k, m) in self.modules.iter().enumerate() {
            cum *= m.stride;
            if cum % self.concat_stride != 0 {
                return Err(Error::Config(format!(
                    "module {k} output stride {cum} not resizable to concat stride {}",
                    self.concat_stride
                )));
            }
        }
        Ok(())
    }

    /// Channel count of the concatenated backbone output.
    pub fn output_channels(&self) -> usize {
        self.modules.iter().map(|m| m.fused_channels).sum()
    }

    /// Input cells per output cell of the concatenated map.
    pub fn output_stride(&self) -> usize {
        self.concat_stride
    }

    /// Input spatial dims must be divisible by this for a clean forward pass.
    pub fn required_divisor(&self) -> usize {
        let mut div = 1usize;
        let mut cum = 1usize;
        for m in &self.modules {
            div = div.max(cum * m.max_scale());
            cum *= m.stride;
        }
        div
    }
}

/// Named backbone layouts: scales {2,4} or {4,8} crossed with block counts
/// {2,4} or {3,5}, two modules each.
pub fn preset(name: &str) -> Option<ScbConfig> {
    let (scales, blocks) = match name {
        "s24_n24" => (vec![2, 4], vec![2, 4]),
        "s24_n35" => (vec![2, 4], vec![3, 5]),
        "s48_n24" => (vec![4, 8], vec![2, 4]),
        "s48_n35" => (vec![4, 8], vec![3, 5]),
        _ => return None,
    };
    let module = DfsaConfig {
        stride: 2,
        scales,
        blocks,
        branch_channels: 64,
        fused_channels: 128,
    };
    Some(ScbConfig {
        modules: vec![module.clone(), module],
        concat_stride: 2,
    })
}

pub fn preset_names() -> [&'static str; 4] {
    ["s24_n24", "s24_n35", "s48_n24", "s48_n35"]
}

fn block_spec(prefix: &str, c_in: usize, c_out: usize) -> Vec<WeightSpec> {
    nn::ConvBlockSpec::new(c_in, c_out, 1).weight_specs(prefix)
}

/// Weight tensors for one module under `prefix`, given its input channels.
fn module_weight_specs(cfg: &DfsaConfig, in_channels: usize, prefix: &str) -> Vec<WeightSpec> {
    let bc = cfg.branch_channels;
    let mut specs = Vec::new();
    specs.extend(block_spec(&format!("{prefix}.large"), in_channels, bc));
    specs.push(WeightSpec {
        name: format!("{prefix}.attn.weight"),
        shape: vec![1, 2, 7, 7],
        fan_in: 2 * 7 * 7,
    });
    specs.push(WeightSpec {
        name: format!("{prefix}.attn.bias"),
        shape: vec![1],
        fan_in: 2 * 7 * 7,
    });
    for (i, (&scale, &blocks)) in cfg.scales.iter().zip(&cfg.blocks).enumerate() {
        let chain = scale.trailing_zeros() as usize;
        let mut c = in_channels;
        for j in 0..chain {
            specs.extend(block_spec(&format!("{prefix}.branch{i}.down{j}"), c, bc));
            c = bc;
        }
        for j in 0..blocks {
            specs.extend(block_spec(&format!("{prefix}.branch{i}.block{j}"), c, bc));
            c = bc;
        }
    }
    let concat_c = bc * (1 + cfg.scales.len());
    let mut fuse = nn::ConvBlockSpec::new(concat_c, cfg.fused_channels, 1)
        .with_kernel(1)
        .weight_specs(&format!("{prefix}.fuse"));
    specs.append(&mut fuse);
    specs
}

/// Weight tensors for the whole backbone, chaining channels module to module.
pub fn weight_specs(scb: &ScbConfig, in_channels: usize) -> Vec<WeightSpec> {
    let mut specs = Vec::new();
    let mut c = in_channels;
    for (k, m) in scb.modules.iter().enumerate() {
        specs.extend(module_weight_specs(m, c, &format!("scb.module{k}")));
        c = m.fused_channels;
    }
    specs
}

/// Single-channel spatial attention over `x`: sigmoid of a 7x7 conv over the
/// channel-max and channel-mean maps. Values are strictly inside (0, 1).
pub fn sparse_attention(x: &Tensor4, store: &WeightStore, prefix: &str) -> Result<Tensor4> {
    let pooled = nn::concat_channels(&[&nn::channel_max_pool(x), &nn::channel_avg_pool(x)])?;
    let weight = store.tensor4(&format!("{prefix}.attn.weight"))?;
    let bias = store.vector(&format!("{prefix}.attn.bias"))?;
    let mut logits = nn::conv2d(&pooled, &weight, bias, 1, 3)?;
    for v in logits.data_mut() {
        *v = v.clamp(-ATTENTION_LOGIT_CLAMP, ATTENTION_LOGIT_CLAMP);
    }
    Ok(nn::sigmoid(&logits))
}

/// Intermediate products of one module forward pass, for inspection.
#[derive(Debug, Clone)]
pub struct DfsaParts {
    /// Gate at output resolution.
    pub attention: Tensor4,
    pub large: Tensor4,
    /// Per-branch outputs before gating, at output resolution.
    pub branches: Vec<Tensor4>,
    /// Per-branch outputs after gating.
    pub gated: Vec<Tensor4>,
    pub output: Tensor4,
}

/// One DFSA module. Output spatial size is input divided by `cfg.stride`.
pub fn dfsa_forward(
    x: &Tensor4,
    cfg: &DfsaConfig,
    store: &WeightStore,
    prefix: &str,
) -> Result<Tensor4> {
    Ok(dfsa_forward_parts(x, cfg, store, prefix)?.output)
}

/// [`dfsa_forward`] that also returns every intermediate.
pub fn dfsa_forward_parts(
    x: &Tensor4,
    cfg: &DfsaConfig,
    store: &WeightStore,
    prefix: &str,
) -> Result<DfsaParts> {
    cfg.validate()?;
    let div = cfg.max_scale();
    if x.h % div != 0 || x.w % div != 0 {
        return Err(Error::Shape(format!(
            "dfsa input ({}, {}) not divisible by max scale {div}",
            x.h, x.w
        )));
    }

    let large = nn::conv_block(x, store, &format!("{prefix}.large"), cfg.stride)?;
    let attention = nn::downsample_nearest(&sparse_attention(x, store, prefix)?, cfg.stride)?;

    let mut branches = Vec::with_capacity(cfg.scales.len());
    let mut gated = Vec::with_capacity(cfg.scales.len());
    for (i, (&scale, &blocks)) in cfg.scales.iter().zip(&cfg.blocks).enumerate() {
        let mut cur = x.clone();
        for j in 0..scale.trailing_zeros() as usize {
            cur = nn::conv_block(&cur, store, &format!("{prefix}.branch{i}.down{j}"), 2)?;
        }
        for j in 0..blocks {
            cur = nn::conv_block(&cur, store, &format!("{prefix}.branch{i}.block{j}"), 1)?;
        }
        let up = nn::upsample(&cur, scale / cfg.stride, UpsampleMode::Bilinear)?;
        let g = nn::gate_by_map(&up, &attention)?;
        branches.push(up);
        gated.push(g);
    }

    let mut cat_inputs: Vec<&Tensor4> = vec![&large];
    cat_inputs.extend(gated.iter());
    let fused = nn::conv_block(
        &nn::concat_channels(&cat_inputs)?,
        store,
        &format!("{prefix}.fuse"),
        1,
    )?;
    Ok(DfsaParts {
        attention,
        large,
        branches,
        gated,
        output: fused,
    })
}

/// Run the stacked backbone: module `k` consumes module `k-1`'s output, every
/// module output is resized (bilinear) to `concat_stride`, and the resized
/// maps are concatenated in module order.
pub fn scb_forward(pseudo_image: &Tensor4, scb: &ScbConfig, store: &WeightStore) -> Result<Tensor4> {
    scb.validate()?;
    let mut cur = pseudo_image.clone();
    let mut cum = 1usize;
    let mut resized = Vec::with_capacity(scb.modules.len());
    for (k, m) in scb.modules.iter().enumerate() {
        cur = dfsa_forward(&cur, m, store, &format!("scb.module{k}"))?;
        cum *= m.stride;
        let factor = cum / scb.concat_stride;
        resized.push(nn::upsample(&cur, factor.max(1), UpsampleMode::Bilinear)?);
    }
    let refs: Vec<&Tensor4> = resized.iter().collect();
    nn::concat_channels(&refs)
}

/// Receptive field (input cells) of the deepest computational path through
/// the backbone, by the standard recurrence `r += (k - 1) * jump` per conv,
/// `jump *= stride`. Within a module the deepest path is the branch whose
/// downsample chain plus block stack grows the field the most.
pub fn receptive_field(scb: &ScbConfig) -> usize {
    let mut r: u64 = 1;
    let mut jump: u64 = 1;
    for m in &scb.modules {
        // large branch: a single 3x3 block
        let mut best: u64 = 2;
        for (&scale, &blocks) in m.scales.iter().zip(&m.blocks) {
            let mut add: u64 = 0;
            let mut j: u64 = 1;
            for _ in 0..scale.trailing_zeros() {
                add += 2 * j;
                j *= 2;
            }
            add += blocks as u64 * 2 * j;
            best = best.max(add);
        }
        r += best * jump;
        jump *= m.stride as u64;
    }
    r as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_weights;
    use rand::Rng as _;

    fn tiny_module() -> DfsaConfig {
        DfsaConfig {
            stride: 2,
            scales: vec![2, 4],
            blocks: vec![1, 2],
            branch_channels: 4,
            fused_channels: 6,
        }
    }

    fn random_input(rng: &mut crate::Rng, c: usize, h: usize, w: usize) -> Tensor4 {
        let data = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor4::from_vec(1, c, h, w, data).unwrap()
    }

    #[test]
    fn attention_is_half_when_weights_are_zero() {
        let mut rng = crate::rng_from_seed(1);
        let x = random_input(&mut rng, 3, 8, 8);
        let mut store = WeightStore::new();
        store
            .insert("m.attn.weight", vec![1, 2, 7, 7], vec![0.0; 98])
            .unwrap();
        store.insert("m.attn.bias", vec![1], vec![0.0]).unwrap();
        let a = sparse_attention(&x, &store, "m").unwrap();
        assert_eq!(a.shape(), (1, 1, 8, 8));
        assert!(a.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn attention_stays_strictly_inside_unit_interval() {
        let mut rng = crate::rng_from_seed(2);
        let mut store = WeightStore::new();
        // huge weights to force saturation pressure
        store
            .insert("m.attn.weight", vec![1, 2, 7, 7], vec![50.0; 98])
            .unwrap();
        store.insert("m.attn.bias", vec![1], vec![100.0]).unwrap();
        let x = random_input(&mut rng, 3, 8, 8);
        let a = sparse_attention(&x, &store, "m").unwrap();
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn constant_input_gives_constant_interior_attention() {
        let x = Tensor4::from_vec(1, 3, 16, 16, vec![0.7; 3 * 256]).unwrap();
        let specs = module_weight_specs(&tiny_module(), 3, "m");
        let store = init_weights(&specs, 5).unwrap();
        let a = sparse_attention(&x, &store, "m").unwrap();
        // away from the padding boundary by >= 3 cells the map is constant
        let v = a.get(0, 0, 8, 8);
        for y in 3..13 {
            for x_ in 3..13 {
                assert!((a.get(0, 0, y, x_) - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn output_shape_is_input_over_stride_for_all_presets() {
        let mut rng = crate::rng_from_seed(3);
        for name in preset_names() {
            let mut scb = preset(name).unwrap();
            for m in &mut scb.modules {
                m.branch_channels = 4;
                m.fused_channels = 6;
            }
            let x = random_input(&mut rng, 5, 32, 32);
            let store = init_weights(&weight_specs(&scb, 5), 7).unwrap();
            for (k, m) in scb.modules.iter().enumerate() {
                // per-module contract on a fitting input
                let input = if k == 0 {
                    x.clone()
                } else {
                    random_input(&mut rng, scb.modules[k - 1].fused_channels, 16, 16)
                };
                let y = dfsa_forward(&input, m, &store, &format!("scb.module{k}")).unwrap();
                assert_eq!(
                    (y.h, y.w),
                    (input.h / m.stride, input.w / m.stride),
                    "preset {name} module {k}"
                );
                assert_eq!(y.c, m.fused_channels);
            }
            let out = scb_forward(&x, &scb, &store).unwrap();
            assert_eq!((out.h, out.w), (16, 16));
            assert_eq!(out.c, scb.output_channels());
        }
    }

    #[test]
    fn forced_unit_attention_leaves_branches_ungated() {
        let mut rng = crate::rng_from_seed(4);
        let cfg = tiny_module();
        let mut store = init_weights(&module_weight_specs(&cfg, 3, "m"), 11).unwrap();
        // bias far above the clamp: the gate saturates to sigmoid(15)
        store.get_mut("m.attn.weight").unwrap().data.fill(0.0);
        store.get_mut("m.attn.bias").unwrap().data.fill(1e6);
        let x = random_input(&mut rng, 3, 16, 16);
        let parts = dfsa_forward_parts(&x, &cfg, &store, "m").unwrap();
        let gate = 1.0 / (1.0 + (-ATTENTION_LOGIT_CLAMP).exp());
        for (b, g) in parts.branches.iter().zip(&parts.gated) {
            for (bv, gv) in b.data().iter().zip(g.data()) {
                // gating is a pure product, and a saturated gate is a no-op
                assert!((bv * gate - gv).abs() <= 1e-6);
                assert!((bv - gv).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn gating_scales_linearly_with_attention() {
        let mut rng = crate::rng_from_seed(5);
        let cfg = tiny_module();
        let store = init_weights(&module_weight_specs(&cfg, 3, "m"), 13).unwrap();
        let x = random_input(&mut rng, 3, 16, 16);
        let parts = dfsa_forward_parts(&x, &cfg, &store, "m").unwrap();
        for lambda in [0.0f32, 0.25, 0.5, 1.0] {
            let mut scaled = parts.attention.clone();
            for v in scaled.data_mut() {
                *v *= lambda;
            }
            for (branch, gated) in parts.branches.iter().zip(&parts.gated) {
                let regated = nn::gate_by_map(branch, &scaled).unwrap();
                for (rv, gv) in regated.data().iter().zip(gated.data()) {
                    assert!((rv - lambda * gv).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn single_branch_module_matches_op_composition() {
        // n = 1, scale == stride, one block: compose the same ops by hand
        let mut rng = crate::rng_from_seed(6);
        let cfg = DfsaConfig {
            stride: 2,
            scales: vec![2],
            blocks: vec![1],
            branch_channels: 4,
            fused_channels: 5,
        };
        let store = init_weights(&module_weight_specs(&cfg, 3, "m"), 17).unwrap();
        let x = random_input(&mut rng, 3, 12, 12);
        let got = dfsa_forward(&x, &cfg, &store, "m").unwrap();

        let large = nn::conv_block(&x, &store, "m.large", 2).unwrap();
        let attn = nn::downsample_nearest(&sparse_attention(&x, &store, "m").unwrap(), 2).unwrap();
        let mut branch = nn::conv_block(&x, &store, "m.branch0.down0", 2).unwrap();
        branch = nn::conv_block(&branch, &store, "m.branch0.block0", 1).unwrap();
        let gated = nn::gate_by_map(&branch, &attn).unwrap();
        let cat = nn::concat_channels(&[&large, &gated]).unwrap();
        let want = nn::conv_block(&cat, &store, "m.fuse", 1).unwrap();

        assert_eq!(got.shape(), want.shape());
        for (g, e) in got.data().iter().zip(want.data()) {
            assert!((g - e).abs() <= 1e-6);
        }
    }

    #[test]
    fn one_module_scb_is_resized_dfsa() {
        let mut rng = crate::rng_from_seed(7);
        let cfg = tiny_module();
        let scb = ScbConfig {
            modules: vec![cfg.clone()],
            concat_stride: 2,
        };
        let store = init_weights(&weight_specs(&scb, 3), 19).unwrap();
        let x = random_input(&mut rng, 3, 16, 16);
        let via_scb = scb_forward(&x, &scb, &store).unwrap();
        let direct = dfsa_forward(&x, &cfg, &store, "scb.module0").unwrap();
        assert_eq!(via_scb, direct);
    }

    #[test]
    fn receptive_field_examples_and_monotonicity() {
        let single = |blocks: usize| ScbConfig {
            modules: vec![DfsaConfig {
                stride: 1,
                scales: vec![1],
                blocks: vec![blocks],
                branch_channels: 1,
                fused_channels: 1,
            }],
            concat_stride: 1,
        };
        assert_eq!(receptive_field(&single(1)), 3);
        assert_eq!(receptive_field(&single(2)), 5);

        let rf = |name: &str| receptive_field(&preset(name).unwrap());
        // more blocks at fixed scales: strictly larger
        assert!(rf("s24_n35") > rf("s24_n24"));
        assert!(rf("s48_n35") > rf("s48_n24"));
        // larger scales at fixed blocks: at least as large
        assert!(rf("s48_n35") >= rf("s24_n35"));
        assert!(rf("s48_n24") >= rf("s24_n24"));

        // growing any single block count never shrinks the field, and growing
        // the deepest branch strictly enlarges it
        let base = preset("s24_n35").unwrap();
        for k in 0..base.modules.len() {
            for i in 0..base.modules[k].blocks.len() {
                let mut bumped = base.clone();
                bumped.modules[k].blocks[i] += 1;
                assert!(receptive_field(&bumped) >= receptive_field(&base));
            }
            let deepest = base.modules[k].blocks.len() - 1;
            let mut bumped = base.clone();
            bumped.modules[k].blocks[deepest] += 1;
            assert!(receptive_field(&bumped) > receptive_field(&base));
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_module();
        assert!(cfg.validate().is_ok());
        cfg.blocks = vec![2, 1]; // decreasing with scale
        assert!(cfg.validate().is_err());
        cfg.blocks = vec![1, 2];
        cfg.scales = vec![3, 4]; // not a power of two
        assert!(cfg.validate().is_err());
        cfg.scales = vec![2, 4];
        cfg.stride = 4;
        assert!(cfg.validate().is_err());

        assert!(preset("s24_n35").unwrap().validate().is_ok());
        assert!(preset("bogus").is_none());
    }
}
