//! Flat named parameter storage.
//!
//! All learnable tensors live in one contiguous buffer with a named layout,
//! which keeps the optimizer, gradient clipping, checkpoint serialization,
//! and finite-difference probing trivial: they all walk the same flat view.

use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::num::Scalar;

/// Handle to one named array inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct P(pub usize);

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    pub specs: Vec<ParamSpec>,
    pub total: usize,
}

impl ParamLayout {
    fn register(&mut self, name: String, shape: Vec<usize>) -> P {
        let len: usize = shape.iter().product();
        let spec = ParamSpec {
            name,
            shape,
            offset: self.total,
            len,
        };
        self.total += len;
        self.specs.push(spec);
        P(self.specs.len() - 1)
    }

    pub fn spec(&self, p: P) -> &ParamSpec {
        &self.specs[p.0]
    }

    pub fn by_name(&self, name: &str) -> Option<P> {
        self.specs.iter().position(|s| s.name == name).map(P)
    }
}

/// Flat storage of every learnable tensor, viewable by handle.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    pub layout: Arc<ParamLayout>,
    pub data: Vec<T>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let data = vec![T::zero(); layout.total];
        Self { layout, data }
    }

    pub fn mat(&self, p: P) -> ArrayView2<'_, T> {
        let s = self.layout.spec(p);
        debug_assert_eq!(s.shape.len(), 2, "{} is not a matrix", s.name);
        ArrayView2::from_shape((s.shape[0], s.shape[1]), &self.data[s.offset..s.offset + s.len])
            .unwrap()
    }

    pub fn vec(&self, p: P) -> ArrayView1<'_, T> {
        let s = self.layout.spec(p);
        debug_assert_eq!(s.shape.len(), 1, "{} is not a vector", s.name);
        ArrayView1::from_shape(s.shape[0], &self.data[s.offset..s.offset + s.len]).unwrap()
    }

    pub fn mat_mut(&mut self, p: P) -> ArrayViewMut2<'_, T> {
        let s = self.layout.spec(p).clone();
        ArrayViewMut2::from_shape(
            (s.shape[0], s.shape[1]),
            &mut self.data[s.offset..s.offset + s.len],
        )
        .unwrap()
    }

    pub fn vec_mut(&mut self, p: P) -> ArrayViewMut1<'_, T> {
        let s = self.layout.spec(p).clone();
        ArrayViewMut1::from_shape(s.shape[0], &mut self.data[s.offset..s.offset + s.len]).unwrap()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert element type (f32 <-> f64), preserving layout.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| U::of(v.cast_f64())).collect(),
        }
    }
}

/// Two-layer MLP with a linear bypass: `y = W2 gelu(W1 x + b1) + Wskip x + b2`.
/// The bypass makes an exact-identity initialization possible, which the
/// encoder/decoder tests use.
#[derive(Debug, Clone, Copy)]
pub struct Mlp2P {
    pub w1: P,
    pub b1: P,
    pub w2: P,
    pub b2: P,
    pub wskip: P,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockP {
    /// Timestep-conditioned modulation: width -> 4*width
    /// (shift1, scale1, shift2, scale2).
    pub mod_w: P,
    pub mod_b: P,
    pub wq: P,
    pub bq: P,
    pub wk: P,
    pub bk: P,
    pub wv: P,
    pub bv: P,
    pub wo: P,
    pub bo: P,
    pub mlp_w1: P,
    pub mlp_b1: P,
    pub mlp_w2: P,
    pub mlp_b2: P,
}

/// Handles for every named tensor of the model.
#[derive(Debug, Clone)]
pub struct WamHandles {
    pub patch_w: P,
    pub patch_b: P,
    pub spatial_emb: P,
    pub kind_emb: P,
    pub verb_emb: P,
    pub color_emb: P,
    pub region_emb: P,
    pub text_register: P,
    pub state_enc: Mlp2P,
    pub act_enc: Mlp2P,
    pub temb_w1: P,
    pub temb_b1: P,
    pub temb_w2: P,
    pub temb_b2: P,
    pub blocks: Vec<BlockP>,
    pub final_mod_w: P,
    pub final_mod_b: P,
    pub vid_head_w: P,
    pub vid_head_b: P,
    /// Timestep-gated bypass from the noisy video token latent straight to
    /// its velocity output; the trunk is narrower than the patch latent, so
    /// per-token noise must reach the head outside the residual stream.
    pub vid_byp_w: P,
    pub vid_gate_w: P,
    pub vid_gate_b: P,
    pub act_dec: Mlp2P,
}

/// Register the full parameter layout for a configuration.
pub fn build_layout(cfg: &ModelConfig) -> (Arc<ParamLayout>, WamHandles) {
    let mut l = ParamLayout::default();
    let d = cfg.width;
    let dp = cfg.d_patch();

    let mlp2 = |l: &mut ParamLayout, name: &str, din: usize, dout: usize, hidden: usize| Mlp2P {
        w1: l.register(format!("{name}.w1"), vec![din, hidden]),
        b1: l.register(format!("{name}.b1"), vec![hidden]),
        w2: l.register(format!("{name}.w2"), vec![hidden, dout]),
        b2: l.register(format!("{name}.b2"), vec![dout]),
        wskip: l.register(format!("{name}.wskip"), vec![din, dout]),
    };

    let patch_w = l.register("patch_proj.w".into(), vec![dp, d]);
    let patch_b = l.register("patch_proj.b".into(), vec![d]);
    let spatial_emb =
        l.register("spatial_emb".into(), vec![cfg.tokens_per_frame(), d]);
    let kind_emb = l.register("kind_emb".into(), vec![4, d]);
    // Last row of each table is the learned null condition for CFG.
    let verb_emb = l.register("text.verb_emb".into(), vec![cfg.n_verbs + 1, d]);
    let color_emb = l.register("text.color_emb".into(), vec![cfg.n_colors + 1, d]);
    let region_emb = l.register("text.region_emb".into(), vec![cfg.n_regions + 1, d]);
    let text_register = l.register("text.register".into(), vec![d]);
    let state_enc = mlp2(&mut l, "state_enc", cfg.state_dim, d, d);
    let act_enc = mlp2(&mut l, "act_enc", cfg.action_dim, d, d);
    let temb_w1 = l.register("temb.w1".into(), vec![cfg.time_dim, d]);
    let temb_b1 = l.register("temb.b1".into(), vec![d]);
    let temb_w2 = l.register("temb.w2".into(), vec![d, d]);
    let temb_b2 = l.register("temb.b2".into(), vec![d]);

    let mut blocks = Vec::with_capacity(cfg.layers);
    for i in 0..cfg.layers {
        let n = |s: &str| format!("block{i}.{s}");
        blocks.push(BlockP {
            mod_w: l.register(n("mod.w"), vec![d, 4 * d]),
            mod_b: l.register(n("mod.b"), vec![4 * d]),
            wq: l.register(n("attn.wq"), vec![d, d]),
            bq: l.register(n("attn.bq"), vec![d]),
            wk: l.register(n("attn.wk"), vec![d, d]),
            bk: l.register(n("attn.bk"), vec![d]),
            wv: l.register(n("attn.wv"), vec![d, d]),
            bv: l.register(n("attn.bv"), vec![d]),
            wo: l.register(n("attn.wo"), vec![d, d]),
            bo: l.register(n("attn.bo"), vec![d]),
            mlp_w1: l.register(n("mlp.w1"), vec![d, cfg.mlp_ratio * d]),
            mlp_b1: l.register(n("mlp.b1"), vec![cfg.mlp_ratio * d]),
            mlp_w2: l.register(n("mlp.w2"), vec![cfg.mlp_ratio * d, d]),
            mlp_b2: l.register(n("mlp.b2"), vec![d]),
        });
    }

    let final_mod_w = l.register("final.mod.w".into(), vec![d, 2 * d]);
    let final_mod_b = l.register("final.mod.b".into(), vec![2 * d]);
    let vid_head_w = l.register("vid_head.w".into(), vec![d, dp]);
    let vid_head_b = l.register("vid_head.b".into(), vec![dp]);
    let vid_byp_w = l.register("vid_head.byp_w".into(), vec![dp, dp]);
    let vid_gate_w = l.register("vid_head.gate_w".into(), vec![d]);
    let vid_gate_b = l.register("vid_head.gate_b".into(), vec![1]);
    let act_dec = mlp2(&mut l, "act_dec", d, cfg.action_dim, d);

    (Arc::new(l), WamHandles {
        patch_w,
        patch_b,
        spatial_emb,
        kind_emb,
        verb_emb,
        color_emb,
        region_emb,
        text_register,
        state_enc,
        act_enc,
        temb_w1,
        temb_b1,
        temb_w2,
        temb_b2,
        blocks,
        final_mod_w,
        final_mod_b,
        vid_head_w,
        vid_head_b,
        vid_byp_w,
        vid_gate_w,
        vid_gate_b,
        act_dec,
    })
}

/// Seeded initialization. Modulation layers and the velocity heads start at
/// zero so the freshly initialized model predicts zero velocity.
pub fn init_params<T: Scalar>(
    layout: Arc<ParamLayout>,
    handles: &WamHandles,
    seed: u64,
) -> ParamStore<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::zeros(layout.clone());
    let zeroed: Vec<usize> = {
        let mut z = vec![
            handles.final_mod_w.0,
            handles.final_mod_b.0,
            handles.vid_head_w.0,
            handles.vid_head_b.0,
            handles.vid_gate_w.0,
            handles.vid_gate_b.0,
            handles.act_dec.w2.0,
            handles.act_dec.b2.0,
            handles.act_dec.wskip.0,
        ];
        for b in &handles.blocks {
            z.push(b.mod_w.0);
            z.push(b.mod_b.0);
        }
        z
    };
    // Bypass starts as the identity so the zero-initialized gate alone
    // decides how much raw latent reaches the output.
    {
        let spec = layout.spec(handles.vid_byp_w).clone();
        let dp = spec.shape[0];
        for i in 0..dp {
            store.data[spec.offset + i * dp + i] = T::one();
        }
    }
    for (i, spec) in layout.specs.iter().enumerate() {
        if i == handles.vid_byp_w.0 {
            continue;
        }
        if zeroed.contains(&i) || spec.name.ends_with(".b1") || spec.name.ends_with(".b2")
            || spec.name.ends_with(".bq") || spec.name.ends_with(".bk")
            || spec.name.ends_with(".bv") || spec.name.ends_with(".bo")
        {
            continue; // biases and zero-initialized tensors stay zero
        }
        let std = 0.02;
        for v in &mut store.data[spec.offset..spec.offset + spec.len] {
            *v = T::of(<f64 as Scalar>::standard_normal(&mut rng) * std);
        }
    }
    store
}
