//! Forward velocity prediction and its hand-written backward pass.
//!
//! The packed sequence is `[text | clean video chunks | noisy groups]`; a
//! noisy group is `[noisy video | state token | action tokens]`. Every
//! token carries a timestep for adaptive modulation: clean spans and text
//! sit at t = 1, noisy video at the chunk's video timestep, state/action
//! tokens at the chunk's action timestep.
//!
//! `forward_batch` runs B samples that share one layout and mask, keeping
//! the large matrix products batched. The optional trace captures exactly
//! the activations `backward_batch` needs.

use ndarray::{s, Array1, Array2, Axis};

use super::layout::{SequenceLayout, SpanKind};
use super::net::{
    gelu_bwd, gelu_fwd, layer_norm_bwd, layer_norm_fwd, linear_fwd, modulate_bwd, modulate_fwd,
    sinusoid,
};
use super::params::{Mlp2P, ParamStore, WamHandles};
use super::{ModelConfig, WamError};
use crate::env::Instruction;
use crate::num::Scalar;

const TEMPORAL_PERIOD: f64 = 10_000.0;
/// Timesteps in [0,1] are scaled before the sinusoid so neighboring steps
/// are distinguishable.
const TIME_SCALE: f64 = 1_000.0;

const KIND_TEXT: usize = 0;
const KIND_VIDEO: usize = 1;
const KIND_STATE: usize = 2;
const KIND_ACTION: usize = 3;

/// Conditioning: an instruction or the learned null condition (for CFG).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cond {
    Instr(Instruction),
    Null,
}

impl Cond {
    fn ids(&self, cfg: &ModelConfig) -> (usize, usize, usize) {
        match self {
            Cond::Instr(i) => (i.verb as usize, i.color as usize, i.region as usize),
            Cond::Null => (cfg.n_verbs, cfg.n_colors, cfg.n_regions),
        }
    }
}

/// Clean context chunk: already-observed video latents.
#[derive(Debug, Clone)]
pub struct CleanChunkInput<T> {
    /// `(frames * tokens_per_frame, d_patch)`
    pub video: Array2<T>,
    /// Global latent-frame index of the chunk's first frame.
    pub start_frame: usize,
}

/// One chunk being denoised.
#[derive(Debug, Clone)]
pub struct NoisyChunkInput<T> {
    /// `(K * tokens_per_frame, d_patch)` noisy latents.
    pub video: Array2<T>,
    /// Raw proprioception at the chunk's first control tick.
    pub state: Array1<T>,
    /// `(H, action_dim)` noisy normalized actions.
    pub actions: Array2<T>,
    pub t_video: T,
    pub t_action: T,
    pub start_frame: usize,
}

/// One sample: conditioning, clean context, and the noisy chunks to denoise.
#[derive(Debug, Clone)]
pub struct WamInput<T> {
    pub cond: Cond,
    pub clean: Vec<CleanChunkInput<T>>,
    pub noisy: Vec<NoisyChunkInput<T>>,
    /// Chunk id offset of the first noisy group. Training uses 0 (noisy
    /// chunk k aligns with clean chunk k); single-chunk inference uses
    /// `clean.len()` so the group sees the whole context.
    pub noisy_offset: usize,
}

impl<T: Scalar> WamInput<T> {
    pub fn layout(&self, cfg: &ModelConfig) -> SequenceLayout {
        let clean_lens: Vec<usize> = self.clean.iter().map(|c| c.video.nrows()).collect();
        SequenceLayout::build(
            &clean_lens,
            self.noisy.len(),
            self.noisy_offset,
            cfg.video_tokens_per_chunk(),
            cfg.h,
            cfg.n_text,
        )
    }
}

/// Predicted velocities per noisy chunk.
#[derive(Debug, Clone)]
pub struct WamOutput<T> {
    /// `(K * tokens_per_frame, d_patch)` per chunk.
    pub video_velocity: Vec<Array2<T>>,
    /// `(H, action_dim)` per chunk.
    pub action_velocity: Vec<Array2<T>>,
}

// ---------------------------------------------------------------------------
// Two-layer MLP with linear bypass
// ---------------------------------------------------------------------------

pub(crate) struct Mlp2Trace<T> {
    x: Array2<T>,
    h_pre: Array2<T>,
    h_act: Array2<T>,
}

pub(crate) fn mlp2_fwd<T: Scalar>(
    store: &ParamStore<T>,
    p: &Mlp2P,
    x: Array2<T>,
) -> (Array2<T>, Mlp2Trace<T>) {
    let h_pre = linear_fwd(&x, &store.mat(p.w1), &store.vec(p.b1));
    let h_act = gelu_fwd(&h_pre);
    let mut y = h_act.dot(&store.mat(p.w2));
    y += &x.dot(&store.mat(p.wskip));
    y += &store.vec(p.b2);
    (y, Mlp2Trace { x, h_pre, h_act })
}

fn mlp2_bwd<T: Scalar>(
    store: &ParamStore<T>,
    grads: &mut ParamStore<T>,
    p: &Mlp2P,
    tr: &Mlp2Trace<T>,
    dy: &Array2<T>,
) -> Array2<T> {
    let d_hact = dy.dot(&store.mat(p.w2).t());
    {
        let mut g = grads.mat_mut(p.w2);
        g += &tr.h_act.t().dot(dy);
    }
    {
        let mut g = grads.vec_mut(p.b2);
        g += &dy.sum_axis(Axis(0));
    }
    let d_hpre = gelu_bwd(&tr.h_pre, &d_hact);
    {
        let mut g = grads.mat_mut(p.w1);
        g += &tr.x.t().dot(&d_hpre);
    }
    {
        let mut g = grads.vec_mut(p.b1);
        g += &d_hpre.sum_axis(Axis(0));
    }
    {
        let mut g = grads.mat_mut(p.wskip);
        g += &tr.x.t().dot(dy);
    }
    let mut dx = d_hpre.dot(&store.mat(p.w1).t());
    dx += &dy.dot(&store.mat(p.wskip).t());
    dx
}

// ---------------------------------------------------------------------------
// Row bookkeeping
// ---------------------------------------------------------------------------

/// Row metadata for one sample's layout, shared across the batch.
struct Rows {
    text: Vec<usize>,
    /// All video rows (clean then noisy, in span order) with their
    /// within-frame spatial index.
    video: Vec<usize>,
    video_spatial: Vec<usize>,
    /// Indices into `video` that belong to noisy spans, per noisy chunk.
    noisy_video: Vec<Vec<usize>>,
    state: Vec<usize>,
    action: Vec<Vec<usize>>,
}

fn collect_rows(layout: &SequenceLayout, cfg: &ModelConfig) -> Rows {
    let n_tok = cfg.tokens_per_frame();
    let mut rows = Rows {
        text: Vec::new(),
        video: Vec::new(),
        video_spatial: Vec::new(),
        noisy_video: Vec::new(),
        state: Vec::new(),
        action: Vec::new(),
    };
    for span in &layout.spans {
        match span.kind {
            SpanKind::Text => rows.text.extend(span.range()),
            SpanKind::CleanVideo | SpanKind::NoisyVideo => {
                let mut mine = Vec::with_capacity(span.len);
                for (i, r) in span.range().enumerate() {
                    mine.push(rows.video.len());
                    rows.video.push(r);
                    rows.video_spatial.push(i % n_tok);
                }
                if span.kind == SpanKind::NoisyVideo {
                    rows.noisy_video.push(mine);
                }
            }
            SpanKind::State => rows.state.extend(span.range()),
            SpanKind::Action => rows.action.push(span.range().collect()),
        }
    }
    rows
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

struct BlockTrace<T> {
    y1: Array2<T>,
    rstd1: Array1<T>,
    scale1: Array2<T>,
    a_mod: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    concat: Array2<T>,
    y2: Array2<T>,
    rstd2: Array1<T>,
    scale2: Array2<T>,
    b_mod: Array2<T>,
    h_pre: Array2<T>,
    h_act: Array2<T>,
}


pub struct BatchTrace<T> {
    b: usize,
    lat: Array2<T>,
    act_tr: Mlp2Trace<T>,
    state_tr: Mlp2Trace<T>,
    tfeat: Array2<T>,
    temb_hpre: Array2<T>,
    temb_hact: Array2<T>,
    temb: Array2<T>,
    blocks: Vec<BlockTrace<T>>,
    yf: Array2<T>,
    rstdf: Array1<T>,
    scale_f: Array2<T>,
    /// Modulated final activations gathered at noisy-video rows.
    vm: Array2<T>,
    /// Raw latents of the noisy video rows and their gate values.
    znv: Array2<T>,
    zb: Array2<T>,
    gate: Vec<T>,
    temb_nv: Array2<T>,
    act_head_tr: Mlp2Trace<T>,
    conds: Vec<(usize, usize, usize)>,
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

fn gather_rows<T: Scalar>(x: &Array2<T>, rows: &[usize]) -> Array2<T> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&x.row(r));
    }
    out
}

fn scatter_add_rows<T: Scalar>(dst: &mut Array2<T>, rows: &[usize], src: &Array2<T>) {
    for (i, &r) in rows.iter().enumerate() {
        let mut row = dst.row_mut(r);
        row += &src.row(i);
    }
}

/// Run the batched forward pass. All inputs must share the layout/mask.
///
/// Outputs are per sample; the optional trace enables `backward_batch`.
#[allow(clippy::type_complexity)]
pub fn forward_batch<T: Scalar>(
    store: &ParamStore<T>,
    handles: &WamHandles,
    cfg: &ModelConfig,
    inputs: &[WamInput<T>],
    layout: &SequenceLayout,
    mask: &Array2<bool>,
    want_trace: bool,
) -> Result<(Vec<WamOutput<T>>, Option<BatchTrace<T>>), WamError> {
    let b = inputs.len();
    let s = layout.total;
    let d = cfg.width;
    let rows = collect_rows(layout, cfg);
    let n_tok = cfg.tokens_per_frame();

    // ---- pack encoder inputs ------------------------------------------------
    let rv = rows.video.len();
    let ra: usize = rows.action.iter().map(|a| a.len()).sum();
    let rs = rows.state.len();
    let dp = cfg.d_patch();

    let mut lat = Array2::<T>::zeros((b * rv, dp));
    let mut act_in = Array2::<T>::zeros((b * ra, cfg.action_dim));
    let mut state_in = Array2::<T>::zeros((b * rs, cfg.state_dim));
    // Per packed row: timestep and temporal position (frame units).
    let mut t_tok = vec![T::one(); b * s];
    let mut tpos = vec![f64::NAN; b * s];
    let mut conds = Vec::with_capacity(b);

    for (bi, input) in inputs.iter().enumerate() {
        conds.push(input.cond.ids(cfg));
        let mut vrow = 0usize;
        let mut arow = 0usize;
        let mut srow = 0usize;
        let mut noisy_seen = 0usize;
        let mut clean_seen = 0usize;
        for span in &layout.spans {
            match span.kind {
                SpanKind::Text => {}
                SpanKind::CleanVideo => {
                    let c = &input.clean[clean_seen];
                    clean_seen += 1;
                    debug_assert_eq!(c.video.nrows(), span.len);
                    lat.slice_mut(s![bi * rv + vrow..bi * rv + vrow + span.len, ..])
                        .assign(&c.video);
                    for (i, tok) in span.range().enumerate() {
                        tpos[bi * s + tok] = c.start_frame as f64 + (i / n_tok) as f64;
                    }
                    vrow += span.len;
                }
                SpanKind::NoisyVideo => {
                    let nch = &input.noisy[noisy_seen];
                    debug_assert_eq!(nch.video.nrows(), span.len);
                    lat.slice_mut(s![bi * rv + vrow..bi * rv + vrow + span.len, ..])
                        .assign(&nch.video);
                    for (i, tok) in span.range().enumerate() {
                        tpos[bi * s + tok] = nch.start_frame as f64 + (i / n_tok) as f64;
                        t_tok[bi * s + tok] = nch.t_video;
                    }
                    vrow += span.len;
                }
                SpanKind::State => {
                    let nch = &input.noisy[noisy_seen];
                    for (j, val) in nch.state.iter().enumerate() {
                        state_in[[bi * rs + srow, j]] = *val;
                    }
                    let tok = span.start;
                    tpos[bi * s + tok] = nch.start_frame as f64;
                    t_tok[bi * s + tok] = nch.t_action;
                    srow += 1;
                }
                SpanKind::Action => {
                    let nch = &input.noisy[noisy_seen];
                    debug_assert_eq!(nch.actions.nrows(), span.len);
                    act_in
                        .slice_mut(s![bi * ra + arow..bi * ra + arow + span.len, ..])
                        .assign(&nch.actions);
                    for (j, tok) in span.range().enumerate() {
                        tpos[bi * s + tok] =
                            nch.start_frame as f64 + j as f64 * cfg.k as f64 / cfg.h as f64;
                        t_tok[bi * s + tok] = nch.t_action;
                    }
                    arow += span.len;
                    noisy_seen += 1;
                }
            }
        }
    }

    // ---- encoders -----------------------------------------------------------
    let video_x = linear_fwd(&lat, &store.mat(handles.patch_w), &store.vec(handles.patch_b));
    let (act_x, act_tr) = mlp2_fwd(store, &handles.act_enc, act_in);
    let (state_x, state_tr) = mlp2_fwd(store, &handles.state_enc, state_in);

    // ---- token embedding assembly -------------------------------------------
    let mut x = Array2::<T>::zeros((b * s, d));
    let kind = store.mat(handles.kind_emb);
    let spatial = store.mat(handles.spatial_emb);
    for bi in 0..b {
        // text tokens
        let (vi, ci, ri) = conds[bi];
        let t0 = bi * s + rows.text[0];
        x.row_mut(t0).assign(&store.mat(handles.verb_emb).row(vi));
        x.row_mut(t0 + 1)
            .assign(&store.mat(handles.color_emb).row(ci));
        x.row_mut(t0 + 2)
            .assign(&store.mat(handles.region_emb).row(ri));
        x.row_mut(t0 + 3).assign(&store.vec(handles.text_register));
        for tok in &rows.text {
            let mut row = x.row_mut(bi * s + tok);
            row += &kind.row(KIND_TEXT);
        }
        // video tokens
        for (i, &tok) in rows.video.iter().enumerate() {
            let mut row = x.row_mut(bi * s + tok);
            row += &video_x.row(bi * rv + i);
            row += &spatial.row(rows.video_spatial[i]);
            row += &kind.row(KIND_VIDEO);
            row += &sinusoid::<T>(tpos[bi * s + tok], d, TEMPORAL_PERIOD);
        }
        // state tokens
        for (i, &tok) in rows.state.iter().enumerate() {
            let mut row = x.row_mut(bi * s + tok);
            row += &state_x.row(bi * rs + i);
            row += &kind.row(KIND_STATE);
            row += &sinusoid::<T>(tpos[bi * s + tok], d, TEMPORAL_PERIOD);
        }
        // action tokens
        let mut flat_a = 0usize;
        for group in &rows.action {
            for &tok in group {
                let mut row = x.row_mut(bi * s + tok);
                row += &act_x.row(bi * ra + flat_a);
                row += &kind.row(KIND_ACTION);
                row += &sinusoid::<T>(tpos[bi * s + tok], d, TEMPORAL_PERIOD);
                flat_a += 1;
            }
        }
    }

    // ---- timestep embedding ---------------------------------------------------
    let mut tfeat = Array2::<T>::zeros((b * s, cfg.time_dim));
    for (i, &t) in t_tok.iter().enumerate() {
        tfeat
            .row_mut(i)
            .assign(&sinusoid::<T>(t.cast_f64() * TIME_SCALE, cfg.time_dim, TEMPORAL_PERIOD));
    }
    let temb_hpre = linear_fwd(&tfeat, &store.mat(handles.temb_w1), &store.vec(handles.temb_b1));
    let temb_hact = gelu_fwd(&temb_hpre);
    let temb = linear_fwd(
        &temb_hact,
        &store.mat(handles.temb_w2),
        &store.vec(handles.temb_b2),
    );

    // ---- transformer blocks ---------------------------------------------------
    let heads = cfg.heads;
    let dh = cfg.head_dim();
    let inv_sqrt = T::of(1.0 / (dh as f64).sqrt());
    let mut blocks = Vec::with_capacity(cfg.layers);

    for (li, blk) in handles.blocks.iter().enumerate() {
        let mod_out = linear_fwd(&temb, &store.mat(blk.mod_w), &store.vec(blk.mod_b));
        let shift1 = mod_out.slice(s![.., 0..d]).to_owned();
        let scale1 = mod_out.slice(s![.., d..2 * d]).to_owned();
        let shift2 = mod_out.slice(s![.., 2 * d..3 * d]).to_owned();
        let scale2 = mod_out.slice(s![.., 3 * d..4 * d]).to_owned();

        let (y1, rstd1) = layer_norm_fwd(&x);
        let a_mod = modulate_fwd(&y1, &shift1, &scale1);
        let q = linear_fwd(&a_mod, &store.mat(blk.wq), &store.vec(blk.bq));
        let k = linear_fwd(&a_mod, &store.mat(blk.wk), &store.vec(blk.bk));
        let v = linear_fwd(&a_mod, &store.mat(blk.wv), &store.vec(blk.bv));

        let mut concat = Array2::<T>::zeros((b * s, d));
        let mut probs_all = Vec::with_capacity(b * heads);
        let neg_inf = T::neg_infinity();
        for bi in 0..b {
            for hi in 0..heads {
                let qh = q.slice(s![bi * s..(bi + 1) * s, hi * dh..(hi + 1) * dh]);
                let kh = k.slice(s![bi * s..(bi + 1) * s, hi * dh..(hi + 1) * dh]);
                let vh = v.slice(s![bi * s..(bi + 1) * s, hi * dh..(hi + 1) * dh]);
                let mut scores = qh.dot(&kh.t());
                scores.mapv_inplace(|v| v * inv_sqrt);
                scores.zip_mut_with(mask, |sc, &m| {
                    if !m {
                        *sc = neg_inf;
                    }
                });
                for mut row in scores.rows_mut() {
                    let mx = row.iter().cloned().fold(neg_inf, T::max);
                    let mut sum = T::zero();
                    for e in row.iter_mut() {
                        *e = (*e - mx).exp();
                        sum += *e;
                    }
                    let inv = sum.recip();
                    for e in row.iter_mut() {
                        *e = *e * inv;
                    }
                }
                let out_h = scores.dot(&vh);
                concat
                    .slice_mut(s![bi * s..(bi + 1) * s, hi * dh..(hi + 1) * dh])
                    .assign(&out_h);
                probs_all.push(scores);
            }
        }
        let attn_out = linear_fwd(&concat, &store.mat(blk.wo), &store.vec(blk.bo));
        let x_mid = &x + &attn_out;

        let (y2, rstd2) = layer_norm_fwd(&x_mid);
        let b_mod = modulate_fwd(&y2, &shift2, &scale2);
        let h_pre = linear_fwd(&b_mod, &store.mat(blk.mlp_w1), &store.vec(blk.mlp_b1));
        let h_act = gelu_fwd(&h_pre);
        let mlp_out = linear_fwd(&h_act, &store.mat(blk.mlp_w2), &store.vec(blk.mlp_b2));
        let x_next = &x_mid + &mlp_out;

        if !x_next.sum().is_finite() {
            return Err(WamError::NonFinite { layer: li });
        }

        blocks.push(BlockTrace {
            y1,
            rstd1,
            scale1,
            a_mod,
            q,
            k,
            v,
            probs: probs_all,
            concat,
            y2,
            rstd2,
            scale2,
            b_mod,
            h_pre,
            h_act,
        });
        x = x_next;
    }

    // ---- final norm, modulation, heads ---------------------------------------
    let (yf, rstdf) = layer_norm_fwd(&x);
    let fmod = linear_fwd(
        &temb,
        &store.mat(handles.final_mod_w),
        &store.vec(handles.final_mod_b),
    );
    let shift_f = fmod.slice(s![.., 0..d]).to_owned();
    let scale_f = fmod.slice(s![.., d..2 * d]).to_owned();
    let fm = modulate_fwd(&yf, &shift_f, &scale_f);

    // Gather noisy video rows (batch-major, chunk order within a sample).
    let mut nv_rows_flat = Vec::new();
    for bi in 0..b {
        for group in &rows.noisy_video {
            for &vi in group {
                nv_rows_flat.push(bi * s + rows.video[vi]);
            }
        }
    }
    let mut act_rows_flat = Vec::new();
    for bi in 0..b {
        for group in &rows.action {
            for &tok in group {
                act_rows_flat.push(bi * s + tok);
            }
        }
    }
    let vm = gather_rows(&fm, &nv_rows_flat);
    let mut vid_flat =
        linear_fwd(&vm, &store.mat(handles.vid_head_w), &store.vec(handles.vid_head_b));
    // Timestep-gated latent bypass: the head sees each noisy token's raw
    // latent, scaled by a learned scalar function of the token timestep.
    let mut znv = Array2::<T>::zeros((nv_rows_flat.len(), cfg.d_patch()));
    {
        // Noisy rows sit after the clean rows inside the packed latents.
        let rv = rows.video.len();
        let mut flat = 0usize;
        for bi in 0..b {
            for group in &rows.noisy_video {
                for &vi in group {
                    znv.row_mut(flat).assign(&lat.row(bi * rv + vi));
                    flat += 1;
                }
            }
        }
    }
    let temb_nv = gather_rows(&temb, &nv_rows_flat);
    let gate_w = store.vec(handles.vid_gate_w);
    let gate_b = store.vec(handles.vid_gate_b)[0];
    let gate: Vec<T> = (0..temb_nv.nrows())
        .map(|i| {
            temb_nv
                .row(i)
                .iter()
                .zip(gate_w.iter())
                .map(|(&a, &w)| a * w)
                .fold(T::zero(), |acc, v| acc + v)
                + gate_b
        })
        .collect();
    let zb = znv.dot(&store.mat(handles.vid_byp_w));
    for (i, &g) in gate.iter().enumerate() {
        let mut row = vid_flat.row_mut(i);
        row.zip_mut_with(&zb.row(i), |o, &v| *o = *o + g * v);
    }
    let am = gather_rows(&fm, &act_rows_flat);
    let (act_flat, act_head_tr) = mlp2_fwd(store, &handles.act_dec, am);

    // ---- split per sample / per chunk ----------------------------------------
    let n_noisy = rows.noisy_video.len();
    let vtok = cfg.video_tokens_per_chunk();
    let h = cfg.h;
    let mut outputs = Vec::with_capacity(b);
    for bi in 0..b {
        let mut video_velocity = Vec::with_capacity(n_noisy);
        let mut action_velocity = Vec::with_capacity(n_noisy);
        for c in 0..n_noisy {
            let v0 = bi * (n_noisy * vtok) + c * vtok;
            video_velocity.push(vid_flat.slice(s![v0..v0 + vtok, ..]).to_owned());
            let a0 = bi * (n_noisy * h) + c * h;
            action_velocity.push(act_flat.slice(s![a0..a0 + h, ..]).to_owned());
        }
        outputs.push(WamOutput {
            video_velocity,
            action_velocity,
        });
    }

    let trace = want_trace.then(|| BatchTrace {
        b,
        lat,
        act_tr,
        state_tr,
        tfeat,
        temb_hpre,
        temb_hact,
        temb,
        blocks,
        yf,
        rstdf,
        scale_f,
        vm,
        znv,
        zb,
        gate,
        temb_nv,
        act_head_tr,
        conds,
    });
    Ok((outputs, trace))
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

/// Backpropagate loss gradients on the predicted velocities into parameter
/// gradients. `d_vid`/`d_act` mirror the per-sample, per-chunk structure of
/// [`WamOutput`].
pub fn backward_batch<T: Scalar>(
    store: &ParamStore<T>,
    handles: &WamHandles,
    cfg: &ModelConfig,
    layout: &SequenceLayout,
    trace: &BatchTrace<T>,
    d_vid: &[Vec<Array2<T>>],
    d_act: &[Vec<Array2<T>>],
) -> ParamStore<T> {
    let b = trace.b;
    let s = layout.total;
    let d = cfg.width;
    let rows = collect_rows(layout, cfg);
    let mut grads = ParamStore::<T>::zeros(store.layout.clone());

    let n_noisy = rows.noisy_video.len();
    let vtok = cfg.video_tokens_per_chunk();
    let h = cfg.h;

    // ---- heads ----------------------------------------------------------------
    let mut d_vid_flat = Array2::<T>::zeros((b * n_noisy * vtok, cfg.d_patch()));
    let mut d_act_flat = Array2::<T>::zeros((b * n_noisy * h, cfg.action_dim));
    for bi in 0..b {
        for c in 0..n_noisy {
            d_vid_flat
                .slice_mut(s![bi * n_noisy * vtok + c * vtok..bi * n_noisy * vtok + (c + 1) * vtok, ..])
                .assign(&d_vid[bi][c]);
            d_act_flat
                .slice_mut(s![bi * n_noisy * h + c * h..bi * n_noisy * h + (c + 1) * h, ..])
                .assign(&d_act[bi][c]);
        }
    }

    let mut d_fm = Array2::<T>::zeros((b * s, d));
    let mut d_temb = Array2::<T>::zeros((b * s, d));
    // video head
    {
        let d_vm = d_vid_flat.dot(&store.mat(handles.vid_head_w).t());
        {
            let mut g = grads.mat_mut(handles.vid_head_w);
            g += &trace.vm.t().dot(&d_vid_flat);
        }
        {
            let mut g = grads.vec_mut(handles.vid_head_b);
            g += &d_vid_flat.sum_axis(Axis(0));
        }
        let mut flat = Vec::new();
        for bi in 0..b {
            for group in &rows.noisy_video {
                for &vi in group {
                    flat.push(bi * s + rows.video[vi]);
                }
            }
        }
        scatter_add_rows(&mut d_fm, &flat, &d_vm);

        // Bypass: vid += gate * (znv W_byp).
        let n_nv = flat.len();
        let mut d_gate = vec![T::zero(); n_nv];
        for i in 0..n_nv {
            d_gate[i] = d_vid_flat
                .row(i)
                .iter()
                .zip(trace.zb.row(i).iter())
                .map(|(&a, &b)| a * b)
                .fold(T::zero(), |acc, v| acc + v);
        }
        {
            let mut g = grads.vec_mut(handles.vid_gate_w);
            for (i, &dg) in d_gate.iter().enumerate() {
                g.zip_mut_with(&trace.temb_nv.row(i), |o, &t| *o = *o + dg * t);
            }
        }
        {
            let mut g = grads.vec_mut(handles.vid_gate_b);
            g[0] += d_gate.iter().fold(T::zero(), |a, &b| a + b);
        }
        let mut d_zb = d_vid_flat.clone();
        for (i, &g) in trace.gate.iter().enumerate() {
            let mut row = d_zb.row_mut(i);
            row.mapv_inplace(|v| v * g);
        }
        {
            let mut g = grads.mat_mut(handles.vid_byp_w);
            g += &trace.znv.t().dot(&d_zb);
        }
        // Gate gradient flows into the timestep embedding of each row.
        let gate_w = store.vec(handles.vid_gate_w).to_owned();
        for (i, &row_idx) in flat.iter().enumerate() {
            let mut r = d_temb.row_mut(row_idx);
            r.zip_mut_with(&gate_w.view(), |o, &w| *o = *o + d_gate[i] * w);
        }
    }
    // action head
    {
        let d_am = mlp2_bwd(store, &mut grads, &handles.act_dec, &trace.act_head_tr, &d_act_flat);
        let mut flat = Vec::new();
        for bi in 0..b {
            for group in &rows.action {
                for &tok in group {
                    flat.push(bi * s + tok);
                }
            }
        }
        scatter_add_rows(&mut d_fm, &flat, &d_am);
    }

    // ---- final modulation + norm ----------------------------------------------
    let mut d_shift_f = Array2::<T>::zeros((b * s, d));
    let mut d_scale_f = Array2::<T>::zeros((b * s, d));
    let d_yf = modulate_bwd(&trace.yf, &trace.scale_f, &d_fm, &mut d_shift_f, &mut d_scale_f);
    {
        let mut d_fmod = Array2::<T>::zeros((b * s, 2 * d));
        d_fmod.slice_mut(s![.., 0..d]).assign(&d_shift_f);
        d_fmod.slice_mut(s![.., d..2 * d]).assign(&d_scale_f);
        d_temb += &d_fmod.dot(&store.mat(handles.final_mod_w).t());
        {
            let mut g = grads.mat_mut(handles.final_mod_w);
            g += &trace.temb.t().dot(&d_fmod);
        }
        {
            let mut g = grads.vec_mut(handles.final_mod_b);
            g += &d_fmod.sum_axis(Axis(0));
        }
    }
    let mut d_x = layer_norm_bwd(&trace.yf, &trace.rstdf, &d_yf);

    // ---- blocks in reverse ------------------------------------------------------
    let heads = cfg.heads;
    let dh = cfg.head_dim();
    let inv_sqrt = T::of(1.0 / (dh as f64).sqrt());
    for (blk, tr) in handles.blocks.iter().zip(trace.blocks.iter()).rev() {
        // MLP branch: x_next = x_mid + mlp(modulate(ln(x_mid)))
        let d_mlp_out = d_x.clone();
        let d_hact = d_mlp_out.dot(&store.mat(blk.mlp_w2).t());
        {
            let mut g = grads.mat_mut(blk.mlp_w2);
            g += &tr.h_act.t().dot(&d_mlp_out);
        }
        {
            let mut g = grads.vec_mut(blk.mlp_b2);
            g += &d_mlp_out.sum_axis(Axis(0));
        }
        let d_hpre = gelu_bwd(&tr.h_pre, &d_hact);
        {
            let mut g = grads.mat_mut(blk.mlp_w1);
            g += &tr.b_mod.t().dot(&d_hpre);
        }
        {
            let mut g = grads.vec_mut(blk.mlp_b1);
            g += &d_hpre.sum_axis(Axis(0));
        }
        let d_bmod = d_hpre.dot(&store.mat(blk.mlp_w1).t());
        let mut d_shift2 = Array2::<T>::zeros((b * s, d));
        let mut d_scale2 = Array2::<T>::zeros((b * s, d));
        let d_y2 = modulate_bwd(&tr.y2, &tr.scale2, &d_bmod, &mut d_shift2, &mut d_scale2);
        let mut d_xmid = layer_norm_bwd(&tr.y2, &tr.rstd2, &d_y2);
        d_xmid += &d_x; // residual

        // Attention branch: x_mid = x_in + proj(attn(modulate(ln(x_in))))
        let d_attn_out = d_xmid.clone();
        let d_concat = d_attn_out.dot(&store.mat(blk.wo).t());
        {
            let mut g = grads.mat_mut(blk.wo);
            g += &tr.concat.t().dot(&d_attn_out);
        }
        {
            let mut g = grads.vec_mut(blk.bo);
            g += &d_attn_out.sum_axis(Axis(0));
        }

        let mut d_q = Array2::<T>::zeros((b * s, d));
        let mut d_k = Array2::<T>::zeros((b * s, d));
        let mut d_v = Array2::<T>::zeros((b * s, d));
        for bi in 0..b {
            for hi in 0..heads {
                let probs = &tr.probs[bi * heads + hi];
                let d_outh = d_concat.slice(s![bi * s..(bi + 1) * s, hi * dh..(hi + 1) * dh]);
                let vh = tr.v.slice(s![bi * s..(bi + 1) * s, hi * dh..(hi + 1) * dh]);
                let qh = tr.q.slice(s![bi * s..(bi + 1) * s, hi * dh..(hi + 1) * dh]);
                let kh = tr.k.slice(s![bi * s..(bi + 1) * s, hi * dh..(hi + 1) * dh]);

                let d_probs = d_outh.dot(&vh.t());
                let d_vh = probs.t().dot(&d_outh);
                // softmax backward per row
                let mut d_scores = d_probs;
                for (mut drow, prow) in d_scores.rows_mut().into_iter().zip(probs.rows()) {
                    let dot = drow
                        .iter()
                        .zip(prow.iter())
                        .map(|(&a, &b)| a * b)
                        .fold(T::zero(), |a, b| a + b);
                    for (e, &p) in drow.iter_mut().zip(prow.iter()) {
                        *e = p * (*e - dot);
                    }
                }
                d_scores.mapv_inplace(|v| v * inv_sqrt);
                let d_qh = d_scores.dot(&kh);
                let d_kh = d_scores.t().dot(&qh);
                d_q.slice_mut(s![bi * s..(bi + 1) * s, hi * dh..(hi + 1) * dh])
                    .assign(&d_qh);
                d_k.slice_mut(s![bi * s..(bi + 1) * s, hi * dh..(hi + 1) * dh])
                    .assign(&d_kh);
                d_v.slice_mut(s![bi * s..(bi + 1) * s, hi * dh..(hi + 1) * dh])
                    .assign(&d_vh);
            }
        }

        let mut d_amod = d_q.dot(&store.mat(blk.wq).t());
        d_amod += &d_k.dot(&store.mat(blk.wk).t());
        d_amod += &d_v.dot(&store.mat(blk.wv).t());
        for (w, bq, dmat) in [
            (blk.wq, blk.bq, &d_q),
            (blk.wk, blk.bk, &d_k),
            (blk.wv, blk.bv, &d_v),
        ] {
            let mut g = grads.mat_mut(w);
            g += &tr.a_mod.t().dot(dmat);
            drop(g);
            let mut gb = grads.vec_mut(bq);
            gb += &dmat.sum_axis(Axis(0));
        }

        let mut d_shift1 = Array2::<T>::zeros((b * s, d));
        let mut d_scale1 = Array2::<T>::zeros((b * s, d));
        let d_y1 = modulate_bwd(&tr.y1, &tr.scale1, &d_amod, &mut d_shift1, &mut d_scale1);
        let mut d_xin = layer_norm_bwd(&tr.y1, &tr.rstd1, &d_y1);
        d_xin += &d_xmid; // residual

        // Modulation linear of this block.
        let mut d_modout = Array2::<T>::zeros((b * s, 4 * d));
        d_modout.slice_mut(s![.., 0..d]).assign(&d_shift1);
        d_modout.slice_mut(s![.., d..2 * d]).assign(&d_scale1);
        d_modout.slice_mut(s![.., 2 * d..3 * d]).assign(&d_shift2);
        d_modout.slice_mut(s![.., 3 * d..4 * d]).assign(&d_scale2);
        d_temb += &d_modout.dot(&store.mat(blk.mod_w).t());
        {
            let mut g = grads.mat_mut(blk.mod_w);
            g += &trace.temb.t().dot(&d_modout);
        }
        {
            let mut g = grads.vec_mut(blk.mod_b);
            g += &d_modout.sum_axis(Axis(0));
        }

        d_x = d_xin;
    }

    // ---- timestep embedding MLP -------------------------------------------------
    {
        let d_hact = d_temb.dot(&store.mat(handles.temb_w2).t());
        {
            let mut g = grads.mat_mut(handles.temb_w2);
            g += &trace.temb_hact.t().dot(&d_temb);
        }
        {
            let mut g = grads.vec_mut(handles.temb_b2);
            g += &d_temb.sum_axis(Axis(0));
        }
        let d_hpre = gelu_bwd(&trace.temb_hpre, &d_hact);
        {
            let mut g = grads.mat_mut(handles.temb_w1);
            g += &trace.tfeat.t().dot(&d_hpre);
        }
        {
            let mut g = grads.vec_mut(handles.temb_b1);
            g += &d_hpre.sum_axis(Axis(0));
        }
    }

    // ---- input embeddings ---------------------------------------------------------
    let rv = rows.video.len();
    let ra: usize = rows.action.iter().map(|a| a.len()).sum();
    let rs = rows.state.len();

    // video rows -> patch projection + spatial + kind
    {
        let mut d_vrows = Array2::<T>::zeros((b * rv, d));
        for bi in 0..b {
            for (i, &tok) in rows.video.iter().enumerate() {
                d_vrows.row_mut(bi * rv + i).assign(&d_x.row(bi * s + tok));
            }
        }
        {
            let mut g = grads.mat_mut(handles.patch_w);
            g += &trace.lat.t().dot(&d_vrows);
        }
        {
            let mut g = grads.vec_mut(handles.patch_b);
            g += &d_vrows.sum_axis(Axis(0));
        }
        {
            let mut g = grads.mat_mut(handles.spatial_emb);
            for bi in 0..b {
                for (i, &sp) in rows.video_spatial.iter().enumerate() {
                    let mut row = g.row_mut(sp);
                    row += &d_vrows.row(bi * rv + i);
                }
            }
        }
        let mut g = grads.mat_mut(handles.kind_emb);
        let mut krow = g.row_mut(KIND_VIDEO);
        krow += &d_vrows.sum_axis(Axis(0));
    }

    // state rows
    {
        let mut d_srows = Array2::<T>::zeros((b * rs, d));
        for bi in 0..b {
            for (i, &tok) in rows.state.iter().enumerate() {
                d_srows.row_mut(bi * rs + i).assign(&d_x.row(bi * s + tok));
            }
        }
        let _ = mlp2_bwd(store, &mut grads, &handles.state_enc, &trace.state_tr, &d_srows);
        let mut g = grads.mat_mut(handles.kind_emb);
        let mut krow = g.row_mut(KIND_STATE);
        krow += &d_srows.sum_axis(Axis(0));
    }

    // action rows
    {
        let mut d_arows = Array2::<T>::zeros((b * ra, d));
        for bi in 0..b {
            let mut flat_a = 0usize;
            for group in &rows.action {
                for &tok in group {
                    d_arows
                        .row_mut(bi * ra + flat_a)
                        .assign(&d_x.row(bi * s + tok));
                    flat_a += 1;
                }
            }
        }
        let _ = mlp2_bwd(store, &mut grads, &handles.act_enc, &trace.act_tr, &d_arows);
        let mut g = grads.mat_mut(handles.kind_emb);
        let mut krow = g.row_mut(KIND_ACTION);
        krow += &d_arows.sum_axis(Axis(0));
    }

    // text rows
    for bi in 0..b {
        let (vi, ci, ri) = trace.conds[bi];
        let t0 = bi * s + rows.text[0];
        {
            let mut g = grads.mat_mut(handles.verb_emb);
            let mut row = g.row_mut(vi);
            row += &d_x.row(t0);
        }
        {
            let mut g = grads.mat_mut(handles.color_emb);
            let mut row = g.row_mut(ci);
            row += &d_x.row(t0 + 1);
        }
        {
            let mut g = grads.mat_mut(handles.region_emb);
            let mut row = g.row_mut(ri);
            row += &d_x.row(t0 + 2);
        }
        {
            let mut g = grads.vec_mut(handles.text_register);
            g += &d_x.row(t0 + 3);
        }
        let mut g = grads.mat_mut(handles.kind_emb);
        let mut krow = g.row_mut(KIND_TEXT);
        for tok in &rows.text {
            krow += &d_x.row(bi * s + tok);
        }
    }

    grads
}

// ---------------------------------------------------------------------------
// Cached single-sequence pieces (used by the inference engine)
// ---------------------------------------------------------------------------

/// Text token embeddings for a condition, `(n_text, width)`.
pub(crate) fn text_token_matrix<T: Scalar>(
    store: &ParamStore<T>,
    handles: &WamHandles,
    cfg: &ModelConfig,
    cond: Cond,
) -> Array2<T> {
    let (vi, ci, ri) = cond.ids(cfg);
    let d = cfg.width;
    let mut x = Array2::<T>::zeros((cfg.n_text, d));
    x.row_mut(0).assign(&store.mat(handles.verb_emb).row(vi));
    x.row_mut(1).assign(&store.mat(handles.color_emb).row(ci));
    x.row_mut(2).assign(&store.mat(handles.region_emb).row(ri));
    x.row_mut(3).assign(&store.vec(handles.text_register));
    let kind = store.mat(handles.kind_emb);
    for mut row in x.rows_mut() {
        row += &kind.row(KIND_TEXT);
    }
    x
}

/// Clean-chunk video token embeddings (timestep 1), `(frames * n_tok, width)`.
pub(crate) fn clean_video_token_matrix<T: Scalar>(
    store: &ParamStore<T>,
    handles: &WamHandles,
    cfg: &ModelConfig,
    latents: &Array2<T>,
    start_frame: usize,
) -> Array2<T> {
    let n_tok = cfg.tokens_per_frame();
    let mut x = linear_fwd(latents, &store.mat(handles.patch_w), &store.vec(handles.patch_b));
    let kind = store.mat(handles.kind_emb);
    let spatial = store.mat(handles.spatial_emb);
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        row += &spatial.row(i % n_tok);
        row += &kind.row(KIND_VIDEO);
        row += &sinusoid::<T>(start_frame as f64 + (i / n_tok) as f64, cfg.width, TEMPORAL_PERIOD);
    }
    x
}

/// Noisy-group token embeddings `(K*n_tok + 1 + H, width)` plus per-row
/// timesteps.
pub(crate) fn noisy_group_token_matrix<T: Scalar>(
    store: &ParamStore<T>,
    handles: &WamHandles,
    cfg: &ModelConfig,
    chunk: &NoisyChunkInput<T>,
) -> (Array2<T>, Vec<T>) {
    let n_tok = cfg.tokens_per_frame();
    let d = cfg.width;
    let vtok = chunk.video.nrows();
    let rows_total = vtok + 1 + chunk.actions.nrows();
    let mut x = Array2::<T>::zeros((rows_total, d));
    let mut t_rows = vec![chunk.t_video; rows_total];

    let vx = linear_fwd(&chunk.video, &store.mat(handles.patch_w), &store.vec(handles.patch_b));
    let kind = store.mat(handles.kind_emb);
    let spatial = store.mat(handles.spatial_emb);
    for i in 0..vtok {
        let mut row = x.row_mut(i);
        row += &vx.row(i);
        row += &spatial.row(i % n_tok);
        row += &kind.row(KIND_VIDEO);
        row += &sinusoid::<T>(
            chunk.start_frame as f64 + (i / n_tok) as f64,
            d,
            TEMPORAL_PERIOD,
        );
    }

    let state_in = chunk
        .state
        .clone()
        .into_shape_with_order((1, cfg.state_dim))
        .unwrap();
    let (sx, _) = mlp2_fwd(store, &handles.state_enc, state_in);
    {
        let mut row = x.row_mut(vtok);
        row += &sx.row(0);
        row += &kind.row(KIND_STATE);
        row += &sinusoid::<T>(chunk.start_frame as f64, d, TEMPORAL_PERIOD);
        t_rows[vtok] = chunk.t_action;
    }

    let (ax, _) = mlp2_fwd(store, &handles.act_enc, chunk.actions.clone());
    for j in 0..chunk.actions.nrows() {
        let mut row = x.row_mut(vtok + 1 + j);
        row += &ax.row(j);
        row += &kind.row(KIND_ACTION);
        row += &sinusoid::<T>(
            chunk.start_frame as f64 + j as f64 * cfg.k as f64 / cfg.h as f64,
            d,
            TEMPORAL_PERIOD,
        );
        t_rows[vtok + 1 + j] = chunk.t_action;
    }
    (x, t_rows)
}

/// Timestep embeddings for explicit per-row timesteps (no trace).
pub(crate) fn timestep_embedding_rows<T: Scalar>(
    store: &ParamStore<T>,
    handles: &WamHandles,
    cfg: &ModelConfig,
    t_rows: &[T],
) -> Array2<T> {
    let mut tfeat = Array2::<T>::zeros((t_rows.len(), cfg.time_dim));
    for (i, &t) in t_rows.iter().enumerate() {
        tfeat
            .row_mut(i)
            .assign(&sinusoid::<T>(t.cast_f64() * TIME_SCALE, cfg.time_dim, TEMPORAL_PERIOD));
    }
    let h = gelu_fwd(&linear_fwd(
        &tfeat,
        &store.mat(handles.temb_w1),
        &store.vec(handles.temb_b1),
    ));
    linear_fwd(&h, &store.mat(handles.temb_w2), &store.vec(handles.temb_b2))
}

/// One transformer block over query rows against `[context ; queries]` keys.
/// Returns this layer's key/value rows for the queries so callers can extend
/// a cache. Queries attend to every context row and to each other.
pub(crate) fn block_forward_cached<T: Scalar>(
    store: &ParamStore<T>,
    blk: &super::params::BlockP,
    cfg: &ModelConfig,
    x: &mut Array2<T>,
    temb: &Array2<T>,
    ctx_k: Option<&Array2<T>>,
    ctx_v: Option<&Array2<T>>,
) -> (Array2<T>, Array2<T>) {
    let d = cfg.width;
    let heads = cfg.heads;
    let dh = cfg.head_dim();
    let nq = x.nrows();
    let inv_sqrt = T::of(1.0 / (dh as f64).sqrt());

    let mod_out = linear_fwd(temb, &store.mat(blk.mod_w), &store.vec(blk.mod_b));
    let shift1 = mod_out.slice(s![.., 0..d]).to_owned();
    let scale1 = mod_out.slice(s![.., d..2 * d]).to_owned();
    let shift2 = mod_out.slice(s![.., 2 * d..3 * d]).to_owned();
    let scale2 = mod_out.slice(s![.., 3 * d..4 * d]).to_owned();

    let (y1, _) = layer_norm_fwd(x);
    let a_mod = modulate_fwd(&y1, &shift1, &scale1);
    let q = linear_fwd(&a_mod, &store.mat(blk.wq), &store.vec(blk.bq));
    let k_new = linear_fwd(&a_mod, &store.mat(blk.wk), &store.vec(blk.bk));
    let v_new = linear_fwd(&a_mod, &store.mat(blk.wv), &store.vec(blk.bv));

    let (k_all, v_all) = match (ctx_k, ctx_v) {
        (Some(ck), Some(cv)) => (
            ndarray::concatenate(Axis(0), &[ck.view(), k_new.view()]).unwrap(),
            ndarray::concatenate(Axis(0), &[cv.view(), v_new.view()]).unwrap(),
        ),
        _ => (k_new.clone(), v_new.clone()),
    };

    let mut concat = Array2::<T>::zeros((nq, d));
    for hi in 0..heads {
        let qh = q.slice(s![.., hi * dh..(hi + 1) * dh]);
        let kh = k_all.slice(s![.., hi * dh..(hi + 1) * dh]);
        let vh = v_all.slice(s![.., hi * dh..(hi + 1) * dh]);
        let mut scores = qh.dot(&kh.t());
        scores.mapv_inplace(|v| v * inv_sqrt);
        for mut row in scores.rows_mut() {
            let mx = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for e in row.iter_mut() {
                *e = (*e - mx).exp();
                sum += *e;
            }
            let inv = sum.recip();
            for e in row.iter_mut() {
                *e = *e * inv;
            }
        }
        concat
            .slice_mut(s![.., hi * dh..(hi + 1) * dh])
            .assign(&scores.dot(&vh));
    }
    let attn_out = linear_fwd(&concat, &store.mat(blk.wo), &store.vec(blk.bo));
    let x_mid = &*x + &attn_out;

    let (y2, _) = layer_norm_fwd(&x_mid);
    let b_mod = modulate_fwd(&y2, &shift2, &scale2);
    let h_act = gelu_fwd(&linear_fwd(&b_mod, &store.mat(blk.mlp_w1), &store.vec(blk.mlp_b1)));
    let mlp_out = linear_fwd(&h_act, &store.mat(blk.mlp_w2), &store.vec(blk.mlp_b2));
    *x = x_mid + mlp_out;

    (k_new, v_new)
}

/// Final norm + modulation + heads over noisy-group rows only. `z` carries
/// the group's raw video latents for the gated bypass.
pub(crate) fn heads_on_noisy_group<T: Scalar>(
    store: &ParamStore<T>,
    handles: &WamHandles,
    cfg: &ModelConfig,
    x: &Array2<T>,
    temb: &Array2<T>,
    z: &Array2<T>,
) -> (Array2<T>, Array2<T>) {
    let d = cfg.width;
    let vtok = z.nrows();
    let (yf, _) = layer_norm_fwd(x);
    let fmod = linear_fwd(
        temb,
        &store.mat(handles.final_mod_w),
        &store.vec(handles.final_mod_b),
    );
    let shift_f = fmod.slice(s![.., 0..d]).to_owned();
    let scale_f = fmod.slice(s![.., d..2 * d]).to_owned();
    let fm = modulate_fwd(&yf, &shift_f, &scale_f);

    let vm = fm.slice(s![0..vtok, ..]).to_owned();
    let mut vid =
        linear_fwd(&vm, &store.mat(handles.vid_head_w), &store.vec(handles.vid_head_b));
    let gate_w = store.vec(handles.vid_gate_w);
    let gate_b = store.vec(handles.vid_gate_b)[0];
    let zb = z.dot(&store.mat(handles.vid_byp_w));
    for i in 0..vtok {
        let g = temb
            .row(i)
            .iter()
            .zip(gate_w.iter())
            .map(|(&a, &w)| a * w)
            .fold(T::zero(), |acc, v| acc + v)
            + gate_b;
        let mut row = vid.row_mut(i);
        row.zip_mut_with(&zb.row(i), |o, &v| *o = *o + g * v);
    }
    let am = fm.slice(s![vtok + 1.., ..]).to_owned();
    let (act, _) = mlp2_fwd(store, &handles.act_dec, am);
    (vid, act)
}
