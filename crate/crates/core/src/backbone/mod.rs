//! The MVNet backbone: patch embedding, two convolutional stages, the
//! decoupled-attention bridge, two mixer stages and a linear head.

mod blocks;
mod config;

pub use blocks::{
    channel_attention, conv_block, decoupled_attention, downsample, halved, patch_embed, spatial_gate,
};
pub use config::ModelConfig;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mixers::{hsi_layer_forward, init_hsi_layer, LayerSpec, MixerRegistry, MixerSpec};
use crate::params::{init_linear, init_norm, Ctx, ParamStore};
use crate::rng::{streams, Rng};
use crate::tensor::{ConvMode, Precision, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Conv,
    Hsi,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageInfo {
    pub kind: StageKind,
    pub width: usize,
    /// Grid side after this stage's downsample (if any).
    pub extent: usize,
    pub downsample: bool,
    /// Mixer name per layer; empty for conv stages.
    pub layers: Vec<String>,
}

/// Per-stage wiring derived from a [`ModelConfig`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StagePlan {
    pub stages: Vec<StageInfo>,
    pub bridge: bool,
}

impl StagePlan {
    /// Stages 1–2 are conv stages at the embedding width. Stages 3–4 are
    /// mixer stages, each opened by a 2×2 stride-2 downsample that doubles the
    /// width. An empty stage is skipped entirely, downsample included. The
    /// bridge sits before the first mixer stage when any exists.
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut width = cfg.embed_dim;
        let mut extent = cfg.block;
        let mut stages = Vec::with_capacity(4);
        for i in 0..4 {
            let depth = cfg.stage_depths[i];
            let kind = if i < 2 { StageKind::Conv } else { StageKind::Hsi };
            let downsample = kind == StageKind::Hsi && depth > 0;
            if downsample {
                width *= 2;
                extent = halved(extent);
            }
            let layers = match kind {
                StageKind::Conv => Vec::new(),
                StageKind::Hsi => (0..depth)
                    .map(|j| {
                        if j < depth / 2 {
                            "mambavision".to_string()
                        } else {
                            "window-attention".to_string()
                        }
                    })
                    .collect(),
            };
            if depth > 0 && !width.is_multiple_of(cfg.heads[i]) {
                return Err(Error::Config(format!(
                    "stage {}: {} heads do not divide width {width}",
                    i + 1,
                    cfg.heads[i]
                )));
            }
            stages.push(StageInfo {
                kind,
                width,
                extent,
                downsample,
                layers,
            });
        }
        let bridge = cfg.stage_depths[2] + cfg.stage_depths[3] > 0;
        Ok(Self { stages, bridge })
    }

    pub fn out_width(&self) -> usize {
        self.stages[3].width
    }
}

pub struct Model {
    pub cfg: ModelConfig,
    pub plan: StagePlan,
    mixers: MixerRegistry,
}

fn name_stage(stage: &str, e: Error) -> Error {
    match e {
        Error::Dimension(m) => Error::Dimension(format!("{stage}: {m}")),
        other => other,
    }
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        Self::with_registry(cfg, MixerRegistry::with_defaults())
    }

    pub fn with_registry(cfg: ModelConfig, mixers: MixerRegistry) -> Result<Self> {
        let plan = StagePlan::new(&cfg)?;
        for s in &plan.stages {
            for l in &s.layers {
                mixers.get(l)?;
            }
        }
        Ok(Self { cfg, plan, mixers })
    }

    fn mixer_spec(&self, stage: usize) -> MixerSpec {
        MixerSpec {
            channels: self.plan.stages[stage].width,
            heads: self.cfg.heads[stage],
            window: self.cfg.windows[stage],
            state_dim: self.cfg.state_dim,
            conv_kernel: self.cfg.conv_kernel,
            conv_mode: if self.cfg.causal_conv {
                ConvMode::Causal
            } else {
                ConvMode::Same
            },
        }
    }

    fn layer_spec(&self, stage: usize, layer: usize) -> Result<LayerSpec<'_>> {
        Ok(LayerSpec {
            mixer: self.mixers.get(&self.plan.stages[stage].layers[layer])?,
            mixer_spec: self.mixer_spec(stage),
            mlp_ratio: self.cfg.mlp_ratio,
            drop_rate: self.cfg.drop_rate,
        })
    }

    /// Fresh parameters drawn from the init stream of `seed`.
    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = Rng::new(seed, streams::INIT);
        let mut store = ParamStore::new();
        let cfg = &self.cfg;
        let r = cfg.channel_attention_reduction;
        blocks::init_patch_embed(&mut store, cfg.embed_dim, &mut rng);
        let mut width = cfg.embed_dim;
        for (i, st) in self.plan.stages.iter().enumerate() {
            let depth = cfg.stage_depths[i];
            if i == 2 && self.plan.bridge {
                blocks::init_decoupled(&mut store, "bridge", width, r, &mut rng)?;
            }
            if st.downsample {
                blocks::init_downsample(&mut store, &format!("s{}.down", i + 1), width, st.width, &mut rng);
            }
            width = st.width;
            for j in 0..depth {
                let name = format!("s{}.b{j}", i + 1);
                match st.kind {
                    StageKind::Conv => blocks::init_conv_block(&mut store, &name, width, r, &mut rng)?,
                    StageKind::Hsi => init_hsi_layer(&mut store, &name, &self.layer_spec(i, j)?, &mut rng)?,
                }
            }
        }
        init_norm(&mut store, "head.norm", width);
        init_linear(&mut store, "head.fc", width, cfg.classes, &mut rng);
        Ok(store)
    }

    /// `batch: [B, M, N, L]` → logits `[B, K]`.
    pub fn forward(&self, ctx: &mut Ctx, batch: Var) -> Result<Var> {
        let cfg = &self.cfg;
        let s = ctx.tape.shape(batch).to_vec();
        if s.len() != 4 || s[1] != cfg.block || s[2] != cfg.block || s[3] != cfg.bands {
            return Err(Error::Dimension(format!(
                "input: expected [B, {m}, {m}, {l}], got {s:?}",
                m = cfg.block,
                l = cfg.bands
            )));
        }
        let b = s[0];
        let mut x = patch_embed(ctx, batch, cfg.spectral_stride).map_err(|e| name_stage("patch_embed", e))?;
        for (i, st) in self.plan.stages.iter().enumerate() {
            let stage = format!("stage{}", i + 1);
            if i == 2 && self.plan.bridge {
                x = decoupled_attention(ctx, "bridge", x).map_err(|e| name_stage("bridge", e))?;
            }
            if st.downsample {
                x = downsample(ctx, &format!("s{}.down", i + 1), x).map_err(|e| name_stage(&stage, e))?;
            }
            for j in 0..cfg.stage_depths[i] {
                let name = format!("s{}.b{j}", i + 1);
                x = match st.kind {
                    StageKind::Conv => conv_block(ctx, &name, x, cfg.gate_skip_threshold),
                    StageKind::Hsi => hsi_layer_forward(ctx, &name, &self.layer_spec(i, j)?, x),
                }
                .map_err(|e| name_stage(&stage, e))?;
            }
            let got = ctx.tape.shape(x);
            if got[1] != st.extent || got[2] != st.extent || got[3] != st.width {
                return Err(Error::Dimension(format!(
                    "{stage}: produced {got:?}, plan says {}×{}×{}",
                    st.extent, st.extent, st.width
                )));
            }
        }
        let [_, h, w, c] = ctx.tape.shape(x)[..] else { unreachable!() };
        let x = ctx.tape.reshape(x, &[b, h * w, c])?;
        let x = ctx.layer_norm("head.norm", x)?;
        let x = ctx.tape.mean_axis(x, 1)?;
        let x = ctx.tape.reshape(x, &[b, c])?;
        ctx.linear("head.fc", x)
    }

    /// Eval-mode logits for a batch of blocks.
    pub fn logits(&self, store: &ParamStore, batch: &Tensor, precision: Precision) -> Result<Tensor> {
        let mut ctx = Ctx::eval(store, precision);
        let x = ctx.tape.constant(batch.clone())?;
        let y = self.forward(&mut ctx, x)?;
        Ok(ctx.tape.value(y).clone())
    }

    /// Parameter count per module: `embed`, `stage1`..`stage4` (downsample
    /// included), `bridge`, `head`.
    pub fn param_table(&self) -> Result<Vec<(String, usize)>> {
        let store = self.init(0)?;
        let groups = [
            ("embed", vec!["embed."]),
            ("stage1", vec!["s1."]),
            ("stage2", vec!["s2."]),
            ("stage3", vec!["s3."]),
            ("stage4", vec!["s4."]),
            ("bridge", vec!["bridge."]),
            ("head", vec!["head."]),
        ];
        let table: Vec<(String, usize)> = groups
            .iter()
            .map(|(n, ps)| (n.to_string(), ps.iter().map(|p| store.numel_with_prefix(p)).sum()))
            .collect();
        debug_assert_eq!(table.iter().map(|(_, n)| n).sum::<usize>(), store.numel());
        Ok(table)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_table()?.iter().map(|(_, n)| n).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::grad_check_with_params;

    fn toy(depths: [usize; 4]) -> ModelConfig {
        let mut c = ModelConfig::new(8, 3);
        c.embed_dim = 4;
        c.block = 5;
        c.stage_depths = depths;
        c.windows = [2, 2, 2, 2];
        c.heads = [1, 1, 2, 2];
        c.channel_attention_reduction = 2;
        c.mlp_ratio = 2;
        c.state_dim = 2;
        c
    }

    #[test]
    fn full_config_plan() {
        let plan = StagePlan::new(&ModelConfig::new(200, 16)).unwrap();
        let ext: Vec<usize> = plan.stages.iter().map(|s| s.extent).collect();
        let wid: Vec<usize> = plan.stages.iter().map(|s| s.width).collect();
        assert_eq!(ext, vec![13, 13, 7, 4]);
        assert_eq!(wid, vec![80, 80, 160, 320]);
        assert_eq!(plan.stages[2].layers.iter().filter(|l| *l == "mambavision").count(), 4);
        assert_eq!(plan.stages[3].layers.len(), 16);
        let mut odd = ModelConfig::new(200, 16);
        odd.stage_depths = [1, 1, 3, 1];
        let plan = StagePlan::new(&odd).unwrap();
        assert_eq!(plan.stages[2].layers, vec!["mambavision", "window-attention", "window-attention"]);
        assert_eq!(plan.stages[3].layers, vec!["window-attention"]);
    }

    #[test]
    fn heads_must_divide_widths() {
        let mut c = toy([1, 1, 1, 1]);
        c.heads = [1, 1, 3, 1];
        assert!(matches!(StagePlan::new(&c), Err(Error::Config(_))));
    }

    // Hand enumeration for embed 4, bands 8, K 3, depths 1/0/0/0:
    // embed 27·4 + 4; one conv block: LN 8, conv 9·16 + 4, CA 4·2+2 + 2·4+4;
    // head: LN 8 + 4·3 + 3.
    #[test]
    fn param_table_matches_hand_count() {
        let m = Model::new(toy([1, 0, 0, 0])).unwrap();
        let t = m.param_table().unwrap();
        let get = |n: &str| t.iter().find(|(k, _)| k == n).unwrap().1;
        assert_eq!(get("embed"), 112);
        assert_eq!(get("stage1"), 8 + 148 + 10 + 12);
        assert_eq!(get("head"), 23);
        assert_eq!(get("bridge"), 0);
        let zero = Model::new(toy([0, 0, 0, 0])).unwrap();
        assert_eq!(zero.param_count().unwrap(), 112 + 23);
    }

    #[test]
    fn param_count_monotone_in_depths() {
        let mut prev = 0;
        for d in [[0, 0, 0, 0], [1, 0, 0, 0], [1, 1, 0, 0], [1, 1, 1, 0], [1, 1, 2, 0], [1, 1, 2, 1], [1, 1, 2, 2]] {
            let n = Model::new(toy(d)).unwrap().param_count().unwrap();
            assert!(n > prev, "{d:?}");
            prev = n;
        }
    }

    #[test]
    fn logits_shape_and_determinism() {
        let m = Model::new(toy([1, 1, 2, 2])).unwrap();
        let store = m.init(3).unwrap();
        for b in [1, 4] {
            let x = Tensor::randn(&[b, 5, 5, 8], 1.0, &mut Rng::new(b as u64, 0));
            let y = m.logits(&store, &x, Precision::F32).unwrap();
            assert_eq!(y.shape(), &[b, 3]);
            assert_eq!(y, m.logits(&store, &x, Precision::F32).unwrap());
        }
    }

    #[test]
    fn extent_mismatch_names_input() {
        let m = Model::new(toy([1, 1, 2, 2])).unwrap();
        let store = m.init(3).unwrap();
        let x = Tensor::zeros(&[1, 7, 7, 8]);
        match m.logits(&store, &x, Precision::F32) {
            Err(Error::Dimension(msg)) => assert!(msg.starts_with("input"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reduced_model_gradients() {
        let mut cfg = toy([1, 1, 2, 2]);
        cfg.drop_rate = 0.0;
        let m = Model::new(cfg).unwrap();
        let store = m.init(4).unwrap();
        let x = Tensor::randn(&[1, 5, 5, 8], 1.0, &mut Rng::new(5, 0));
        let rep = grad_check_with_params(&store, &[x], |c, v| m.forward(c, v[0]), 1e-4, 6, 3).unwrap();
        assert!(rep.passed, "{rep:?}");
    }
}
