//! Bidirectional GRU session encoder with mastery injection, an EMA user
//! vector and five multi-task pre-training heads.
//!
//! Step input: `[E_state ‖ E_outcome ‖ E_dc ‖ E_crown ‖ mean(E_card) ‖ P(cont)]`
//! where `cont = [gap_log, avg_elixir]` is standardized with fixed training
//! statistics, passed through a learned per-feature affine and projected.
//! The summary is `z_raw = W_o [h_fwd(K) ‖ h_bwd(1)] + b_o` and
//! `z_cls = z_raw + W_m mf + b_m` with the raw mastery vector.

use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::archetype::N_STATES;
use crate::error::{Error, Result};
use crate::flatfile::{FlatReader, FlatWriter};
use crate::matchlog::{Outcome, DECK_SIZE};
use crate::metrics::{argmax, auc};
use crate::nn::tensorfile::{assign_tensors, read_tensor_map, write_tensors};
use crate::nn::{
    clip_grad_norm, join, sigmoid, softmax, softplus, sum_rows, Adam, BiGru, Linear, Params,
};
use crate::seed::derive_seed;
use crate::window::{mastery_features, Window, N_MASTERY};

pub const N_CROWN: usize = 7;
pub const N_CONT: usize = 2;
/// EMA decay of the user vector and the weight of the newest window.
pub const USER_DECAY: f64 = 0.9;
pub const USER_WEIGHT: f64 = 0.1;
/// Windows per parallel chunk inside a batch; fixes the reduction order.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub dc: f64,
    pub dv: f64,
    pub win: f64,
    pub sub: f64,
    pub cd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            dc: 1.5,
            dv: 1.5,
            win: 1.0,
            sub: 1.0,
            cd: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Width of the state, outcome, deck-change and crown embeddings.
    pub d_cat: usize,
    pub d_card: usize,
    pub d_cont: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub d_z: usize,
    pub loss_weights: LossWeights,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub clip: f64,
    /// Deterministic subsample of the training windows, if set.
    pub max_train_windows: Option<usize>,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_cat: 8,
            d_card: 32,
            d_cont: 8,
            hidden: 128,
            n_layers: 2,
            d_z: 128,
            loss_weights: LossWeights::default(),
            lr: 1e-3,
            batch_size: 256,
            epochs: 20,
            patience: 3,
            clip: 5.0,
            max_train_windows: None,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Dimensions used by the gradient check.
    pub fn tiny() -> Self {
        Self {
            d_cat: 2,
            d_card: 3,
            d_cont: 2,
            hidden: 4,
            d_z: 4,
            ..Self::default()
        }
    }

    /// Small dimensions for fast local runs and tests.
    pub fn desk() -> Self {
        Self {
            d_cat: 4,
            d_card: 8,
            d_cont: 4,
            hidden: 16,
            d_z: 16,
            epochs: 6,
            ..Self::default()
        }
    }

    pub fn step_dim(&self) -> usize {
        4 * self.d_cat + self.d_card + self.d_cont
    }
}

// ── Parameters ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub emb_state: Array2<f64>,
    pub emb_outcome: Array2<f64>,
    pub emb_dc: Array2<f64>,
    pub emb_crown: Array2<f64>,
    /// `vocab + 1` rows; the last row is the unknown card.
    pub emb_card: Array2<f64>,
    pub cont_gamma: Array2<f64>,
    pub cont_beta: Array2<f64>,
    pub cont_proj: Linear,
    pub gru: BiGru,
    pub out: Linear,
    pub mastery: Linear,
    pub head_dc: Linear,
    pub head_dv: Linear,
    pub head_win: Linear,
    pub head_sub: Linear,
    pub head_cd: Linear,
}

impl EncoderParams {
    pub fn new(cfg: &EncoderConfig, vocab: usize, rng: &mut ChaCha8Rng) -> Self {
        let emb = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            crate::nn::uniform_fan(rows, cols, cols, rng)
        };
        Self {
            emb_state: emb(N_STATES + 1, cfg.d_cat, rng),
            emb_outcome: emb(2, cfg.d_cat, rng),
            emb_dc: emb(2, cfg.d_cat, rng),
            emb_crown: emb(N_CROWN, cfg.d_cat, rng),
            emb_card: emb(vocab + 1, cfg.d_card, rng),
            cont_gamma: Array2::ones((1, N_CONT)),
            cont_beta: Array2::zeros((1, N_CONT)),
            cont_proj: Linear::new(N_CONT, cfg.d_cont, rng),
            gru: BiGru::new(cfg.step_dim(), cfg.hidden, cfg.n_layers, rng),
            out: Linear::new(2 * cfg.hidden, cfg.d_z, rng),
            mastery: Linear::new(N_MASTERY, cfg.d_z, rng),
            head_dc: Linear::new(cfg.d_z, 1, rng),
            head_dv: Linear::new(cfg.d_z, 3, rng),
            head_win: Linear::new(cfg.d_z, 1, rng),
            head_sub: Linear::new(cfg.d_z, 3, rng),
            head_cd: Linear::new(cfg.d_z, 1, rng),
        }
    }
}

impl Params for EncoderParams {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        f(&join(p, "emb_state"), &self.emb_state);
        f(&join(p, "emb_outcome"), &self.emb_outcome);
        f(&join(p, "emb_dc"), &self.emb_dc);
        f(&join(p, "emb_crown"), &self.emb_crown);
        f(&join(p, "emb_card"), &self.emb_card);
        f(&join(p, "cont_gamma"), &self.cont_gamma);
        f(&join(p, "cont_beta"), &self.cont_beta);
        self.cont_proj.visit(&join(p, "cont_proj"), f);
        self.gru.visit(&join(p, "gru"), f);
        self.out.visit(&join(p, "out"), f);
        self.mastery.visit(&join(p, "mastery"), f);
        self.head_dc.visit(&join(p, "head_dc"), f);
        self.head_dv.visit(&join(p, "head_dv"), f);
        self.head_win.visit(&join(p, "head_win"), f);
        self.head_sub.visit(&join(p, "head_sub"), f);
        self.head_cd.visit(&join(p, "head_cd"), f);
    }

    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f(&join(p, "emb_state"), &mut self.emb_state);
        f(&join(p, "emb_outcome"), &mut self.emb_outcome);
        f(&join(p, "emb_dc"), &mut self.emb_dc);
        f(&join(p, "emb_crown"), &mut self.emb_crown);
        f(&join(p, "emb_card"), &mut self.emb_card);
        f(&join(p, "cont_gamma"), &mut self.cont_gamma);
        f(&join(p, "cont_beta"), &mut self.cont_beta);
        self.cont_proj.visit_mut(&join(p, "cont_proj"), f);
        self.gru.visit_mut(&join(p, "gru"), f);
        self.out.visit_mut(&join(p, "out"), f);
        self.mastery.visit_mut(&join(p, "mastery"), f);
        self.head_dc.visit_mut(&join(p, "head_dc"), f);
        self.head_dv.visit_mut(&join(p, "head_dv"), f);
        self.head_win.visit_mut(&join(p, "head_win"), f);
        self.head_sub.visit_mut(&join(p, "head_sub"), f);
        self.head_cd.visit_mut(&join(p, "head_cd"), f);
    }
}

// ── Forward pass ────────────────────────────────────────────────────────

/// Encoder outputs for a batch, one row per window.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub z_raw: Array2<f64>,
    pub z_cls: Array2<f64>,
    pub mf: Array2<f64>,
}

/// One window's embedding together with its EMA user vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionEmbedding {
    pub z_raw: Array1<f64>,
    pub z_cls: Array1<f64>,
    /// User vector seen by this window (from prior windows only).
    pub z_user: Array1<f64>,
    /// User vector for the player's next window.
    pub z_user_next: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub dc: Array2<f64>,
    pub dv: Array2<f64>,
    pub win: Array2<f64>,
    pub sub: Array2<f64>,
    pub cd: Array2<f64>,
}

struct InputCache {
    state: Vec<Vec<usize>>,
    outcome: Vec<Vec<usize>>,
    dc: Vec<Vec<usize>>,
    crown: Vec<Vec<usize>>,
    cards: Vec<Vec<[usize; DECK_SIZE]>>,
    xhat: Vec<Array2<f64>>,
    affine: Vec<Array2<f64>>,
}

struct ForwardCache {
    input: InputCache,
    gru: crate::nn::gru::BiGruCache,
    summary: Array2<f64>,
    z_cls: Array2<f64>,
    mf: Array2<f64>,
    heads: HeadOutputs,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub vocab: usize,
    pub cont_mean: [f64; N_CONT],
    pub cont_std: [f64; N_CONT],
    pub params: EncoderParams,
}

fn crown_index(cd: i8) -> usize {
    (i64::from(cd).clamp(-3, 3) + 3) as usize
}

impl Encoder {
    pub fn new(config: EncoderConfig, vocab: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "encoder-init"));
        let params = EncoderParams::new(&config, vocab, &mut rng);
        Self {
            config,
            vocab,
            cont_mean: [0.0; N_CONT],
            cont_std: [1.0; N_CONT],
            params,
        }
    }

    pub fn d_z(&self) -> usize {
        self.config.d_z
    }

    /// Sets the fixed standardization statistics of the continuous inputs.
    pub fn fit_cont_stats(&mut self, windows: &[Window]) {
        let mut sum = [0.0; N_CONT];
        let mut sq = [0.0; N_CONT];
        let mut n = 0.0;
        for st in windows.iter().flat_map(|w| &w.steps) {
            for (i, v) in [st.gap_log, st.avg_elixir].into_iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
            n += 1.0;
        }
        if n == 0.0 {
            return;
        }
        for i in 0..N_CONT {
            let m = sum[i] / n;
            let var = (sq[i] / n - m * m).max(0.0);
            self.cont_mean[i] = m;
            self.cont_std[i] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        }
    }

    fn card_row(&self, c: u32) -> usize {
        let c = c as usize;
        if c < self.vocab {
            c
        } else {
            self.vocab
        }
    }

    fn inputs(&self, p: &EncoderParams, windows: &[&Window]) -> (Vec<Array2<f64>>, InputCache) {
        let cfg = &self.config;
        let b = windows.len();
        let k = windows.first().map_or(0, |w| w.k());
        let d = cfg.step_dim();
        let mut cache = InputCache {
            state: Vec::with_capacity(k),
            outcome: Vec::with_capacity(k),
            dc: Vec::with_capacity(k),
            crown: Vec::with_capacity(k),
            cards: Vec::with_capacity(k),
            xhat: Vec::with_capacity(k),
            affine: Vec::with_capacity(k),
        };
        let mut xs = Vec::with_capacity(k);
        for t in 0..k {
            let mut x = Array2::zeros((b, d));
            let mut xhat = Array2::zeros((b, N_CONT));
            let (mut st, mut oc, mut dc, mut cr, mut cards) = (
                Vec::with_capacity(b),
                Vec::with_capacity(b),
                Vec::with_capacity(b),
                Vec::with_capacity(b),
                Vec::with_capacity(b),
            );
            for (i, w) in windows.iter().enumerate() {
                let step = &w.steps[t];
                let idx = [
                    step.state.index().min(N_STATES),
                    usize::from(step.outcome.is_win()),
                    usize::from(step.deck_changed),
                    crown_index(step.crown_diff),
                ];
                let tables = [&p.emb_state, &p.emb_outcome, &p.emb_dc, &p.emb_crown];
                for (j, (table, &row)) in tables.iter().zip(&idx).enumerate() {
                    x.slice_mut(s![i, j * cfg.d_cat..(j + 1) * cfg.d_cat])
                        .assign(&table.row(row));
                }
                let rows: [usize; DECK_SIZE] =
                    std::array::from_fn(|c| self.card_row(step.cards[c]));
                let base = 4 * cfg.d_cat;
                let mut slot = x.slice_mut(s![i, base..base + cfg.d_card]);
                for &r in &rows {
                    slot.scaled_add(1.0 / DECK_SIZE as f64, &p.emb_card.row(r));
                }
                for (j, v) in [step.gap_log, step.avg_elixir].into_iter().enumerate() {
                    xhat[(i, j)] = (v - self.cont_mean[j]) / self.cont_std[j];
                }
                st.push(idx[0]);
                oc.push(idx[1]);
                dc.push(idx[2]);
                cr.push(idx[3]);
                cards.push(rows);
            }
            let affine = &xhat * &p.cont_gamma + &p.cont_beta;
            let proj = p.cont_proj.forward(&affine);
            x.slice_mut(s![.., d - cfg.d_cont..]).assign(&proj);
            xs.push(x);
            cache.state.push(st);
            cache.outcome.push(oc);
            cache.dc.push(dc);
            cache.crown.push(cr);
            cache.cards.push(cards);
            cache.xhat.push(xhat);
            cache.affine.push(affine);
        }
        (xs, cache)
    }

    fn forward_with(&self, p: &EncoderParams, windows: &[&Window]) -> (Embeddings, ForwardCache) {
        let (xs, input) = self.inputs(p, windows);
        let (summary, gru) = p.gru.forward(&xs);
        let z_raw = p.out.forward(&summary);
        let mut mf = Array2::zeros((windows.len(), N_MASTERY));
        for (i, w) in windows.iter().enumerate() {
            mf.row_mut(i).assign(&Array1::from(
                mastery_features(&w.steps).to_array().to_vec(),
            ));
        }
        let z_cls = &z_raw + &p.mastery.forward(&mf);
        let heads = HeadOutputs {
            dc: p.head_dc.forward(&z_cls),
            dv: p.head_dv.forward(&z_cls),
            win: p.head_win.forward(&z_cls),
            sub: p.head_sub.forward(&z_cls),
            cd: p.head_cd.forward(&z_cls),
        };
        let emb = Embeddings {
            z_raw,
            z_cls: z_cls.clone(),
            mf: mf.clone(),
        };
        let cache = ForwardCache {
            input,
            gru,
            summary,
            z_cls,
            mf,
            heads,
        };
        (emb, cache)
    }

    fn embed_chunk(&self, windows: &[&Window]) -> (Embeddings, HeadOutputs) {
        let (e, c) = self.forward_with(&self.params, windows);
        (e, c.heads)
    }

    fn chunked(&self, windows: &[&Window]) -> Vec<(Embeddings, HeadOutputs)> {
        windows
            .par_chunks(CHUNK)
            .map(|c| self.embed_chunk(c))
            .collect()
    }

    /// Batched inference; rows follow the input order.
    pub fn encode_batch(&self, windows: &[&Window]) -> Embeddings {
        let parts = self.chunked(windows);
        let cat = |f: fn(&Embeddings) -> &Array2<f64>, cols: usize| {
            if parts.is_empty() {
                return Array2::zeros((0, cols));
            }
            let views: Vec<_> = parts.iter().map(|(e, _)| f(e).view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("same widths")
        };
        Embeddings {
            z_raw: cat(|e| &e.z_raw, self.d_z()),
            z_cls: cat(|e| &e.z_cls, self.d_z()),
            mf: cat(|e| &e.mf, N_MASTERY),
        }
    }

    /// Head outputs for a batch: raw logits (dc, dv, win, sub) and cd.
    pub fn heads(&self, windows: &[&Window]) -> HeadOutputs {
        let parts = self.chunked(windows);
        let cat = |f: fn(&HeadOutputs) -> &Array2<f64>, cols: usize| {
            if parts.is_empty() {
                return Array2::zeros((0, cols));
            }
            let views: Vec<_> = parts.iter().map(|(_, h)| f(h).view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("same widths")
        };
        HeadOutputs {
            dc: cat(|h| &h.dc, 1),
            dv: cat(|h| &h.dv, 3),
            win: cat(|h| &h.win, 1),
            sub: cat(|h| &h.sub, 3),
            cd: cat(|h| &h.cd, 1),
        }
    }

    /// Encodes one window given the user vector built from the player's
    /// earlier windows.
    pub fn encode(&self, window: &Window, z_user: &Array1<f64>) -> SessionEmbedding {
        let e = self.encode_batch(&[window]);
        let z_cls = e.z_cls.row(0).to_owned();
        SessionEmbedding {
            z_raw: e.z_raw.row(0).to_owned(),
            z_user_next: ema_next(z_user, &z_cls),
            z_cls,
            z_user: z_user.clone(),
        }
    }

    // ── Loss and gradient ───────────────────────────────────────────────

    fn loss_grad_chunk(
        &self,
        p: &EncoderParams,
        windows: &[&Window],
        norm: Norms,
        weights: &LossWeights,
    ) -> (LossParts, EncoderParams) {
        let (_, c) = self.forward_with(p, windows);
        let b = windows.len();
        let mut parts = LossParts::default();
        let mut d_dc = Array2::zeros((b, 1));
        let mut d_dv = softmax(&c.heads.dv);
        let mut d_win = Array2::zeros((b, 1));
        let mut d_sub = softmax(&c.heads.sub);
        let mut d_cd = Array2::zeros((b, 1));
        for (i, w) in windows.iter().enumerate() {
            let t = w.targets.as_ref().expect("training windows carry targets");
            let y_dc = f64::from(u8::from(t.next_dc));
            let x = c.heads.dc[(i, 0)];
            parts.dc += (softplus(x) - y_dc * x) / norm.n;
            d_dc[(i, 0)] = weights.dc * (sigmoid(x) - y_dc) / norm.n;

            let tt = t.transition as usize;
            parts.dv +=
                (log_sum_exp(c.heads.dv.row(i).as_slice().unwrap()) - c.heads.dv[(i, tt)]) / norm.n;
            d_dv[(i, tt)] -= 1.0;
            d_dv.row_mut(i).mapv_inplace(|v| weights.dv * v / norm.n);

            let y_w = t.next_outcome.as_f64();
            let x = c.heads.win[(i, 0)];
            parts.win += (softplus(x) - y_w * x) / norm.n;
            d_win[(i, 0)] = weights.win * (sigmoid(x) - y_w) / norm.n;

            match w.subtype {
                Some(u) if norm.n_sub > 0.0 => {
                    let row = c.heads.sub.row(i);
                    parts.sub +=
                        (log_sum_exp(row.as_slice().unwrap()) - row[u.index()]) / norm.n_sub;
                    d_sub[(i, u.index())] -= 1.0;
                    d_sub
                        .row_mut(i)
                        .mapv_inplace(|v| weights.sub * v / norm.n_sub);
                }
                _ => d_sub.row_mut(i).fill(0.0),
            }

            let target = f64::from(t.next_crown_diff) / 3.0;
            let e = c.heads.cd[(i, 0)] - target;
            parts.cd += e * e / norm.n;
            d_cd[(i, 0)] = weights.cd * 2.0 * e / norm.n;
        }

        let mut g = p.zeroed();
        let mut dz = p.head_dc.backward(&c.z_cls, &d_dc, &mut g.head_dc);
        dz += &p.head_dv.backward(&c.z_cls, &d_dv, &mut g.head_dv);
        dz += &p.head_win.backward(&c.z_cls, &d_win, &mut g.head_win);
        dz += &p.head_sub.backward(&c.z_cls, &d_sub, &mut g.head_sub);
        dz += &p.head_cd.backward(&c.z_cls, &d_cd, &mut g.head_cd);
        p.mastery.backward(&c.mf, &dz, &mut g.mastery);
        let d_summary = p.out.backward(&c.summary, &dz, &mut g.out);
        let dxs = p.gru.backward(&c.gru, &d_summary, &mut g.gru);
        self.embedding_backward(p, &c.input, &dxs, &mut g);
        (parts, g)
    }

    fn embedding_backward(
        &self,
        p: &EncoderParams,
        cache: &InputCache,
        dxs: &[Array2<f64>],
        g: &mut EncoderParams,
    ) {
        let cfg = &self.config;
        let d = cfg.step_dim();
        for (t, dx) in dxs.iter().enumerate() {
            for i in 0..dx.nrows() {
                let idx = [
                    cache.state[t][i],
                    cache.outcome[t][i],
                    cache.dc[t][i],
                    cache.crown[t][i],
                ];
                let tables = [
                    &mut g.emb_state,
                    &mut g.emb_outcome,
                    &mut g.emb_dc,
                    &mut g.emb_crown,
                ];
                for (j, (table, row)) in tables.into_iter().zip(idx).enumerate() {
                    let mut dst = table.row_mut(row);
                    dst += &dx.slice(s![i, j * cfg.d_cat..(j + 1) * cfg.d_cat]);
                }
                let base = 4 * cfg.d_cat;
                let src = dx.slice(s![i, base..base + cfg.d_card]);
                for &r in &cache.cards[t][i] {
                    g.emb_card
                        .row_mut(r)
                        .scaled_add(1.0 / DECK_SIZE as f64, &src);
                }
            }
            let d_proj = dx.slice(s![.., d - cfg.d_cont..]).to_owned();
            let d_aff = p
                .cont_proj
                .backward(&cache.affine[t], &d_proj, &mut g.cont_proj);
            g.cont_gamma += &sum_rows(&(&d_aff * &cache.xhat[t]));
            g.cont_beta += &sum_rows(&d_aff);
        }
    }

    /// Weighted multi-task loss and its gradient over `windows` with the
    /// encoder's configured loss weights.
    pub fn loss_and_grad(&self, windows: &[&Window]) -> (LossParts, EncoderParams) {
        self.loss_and_grad_with(&self.params, windows, &self.config.loss_weights)
    }

    pub fn loss_and_grad_with(
        &self,
        p: &EncoderParams,
        windows: &[&Window],
        weights: &LossWeights,
    ) -> (LossParts, EncoderParams) {
        let norm = Norms::of(windows);
        let results: Vec<(LossParts, EncoderParams)> = windows
            .par_chunks(CHUNK)
            .map(|c| self.loss_grad_chunk(p, c, norm, weights))
            .collect();
        let mut parts = LossParts::default();
        let mut grad = p.zeroed();
        for (lp, g) in &results {
            parts.add(lp);
            grad.add_scaled(g, 1.0);
        }
        parts.total = parts.weighted(weights);
        (parts, grad)
    }

    /// Loss only (no gradient), reduced in fixed chunk order.
    pub fn loss(&self, windows: &[&Window]) -> LossParts {
        self.loss_with(&self.params, windows)
    }

    fn loss_with(&self, p: &EncoderParams, windows: &[&Window]) -> LossParts {
        let norm = Norms::of(windows);
        let parts: Vec<LossParts> = windows
            .par_chunks(CHUNK)
            .map(|chunk| {
                let (_, c) = self.forward_with(p, chunk);
                head_losses(&c.heads, chunk, norm)
            })
            .collect();
        let mut total = LossParts::default();
        for lp in &parts {
            total.add(lp);
        }
        total.total = total.weighted(&self.config.loss_weights);
        total
    }

    pub fn metrics(&self, windows: &[&Window]) -> EncoderMetrics {
        let h = self.heads(windows);
        let loss = self.loss(windows);
        let mut dc_s = Vec::new();
        let mut dc_y = Vec::new();
        let mut win_s = Vec::new();
        let mut win_y = Vec::new();
        let (mut dv_ok, mut sub_ok, mut sub_n, mut cd_se) = (0usize, 0usize, 0usize, 0.0);
        for (i, w) in windows.iter().enumerate() {
            let Some(t) = &w.targets else { continue };
            dc_s.push(h.dc[(i, 0)]);
            dc_y.push(t.next_dc);
            win_s.push(h.win[(i, 0)]);
            win_y.push(t.next_outcome == Outcome::Win);
            if argmax(h.dv.row(i).as_slice().unwrap()) == t.transition as usize {
                dv_ok += 1;
            }
            if let Some(u) = w.subtype {
                sub_n += 1;
                if argmax(h.sub.row(i).as_slice().unwrap()) == u.index() {
                    sub_ok += 1;
                }
            }
            let e = h.cd[(i, 0)] - f64::from(t.next_crown_diff) / 3.0;
            cd_se += e * e;
        }
        let n = dc_s.len().max(1) as f64;
        EncoderMetrics {
            loss: loss.total,
            dc_auc: auc(&dc_s, &dc_y),
            win_auc: auc(&win_s, &win_y),
            dv_accuracy: dv_ok as f64 / n,
            sub_accuracy: (sub_n > 0).then(|| sub_ok as f64 / sub_n as f64),
            cd_mse: cd_se / n,
        }
    }

    // ── Persistence ─────────────────────────────────────────────────────

    pub fn to_flat(&self) -> String {
        let c = &self.config;
        let mut w = FlatWriter::new("tqp-encoder", 1);
        w.comment("bidirectional GRU session encoder; tensors are row-major");
        w.record(
            "dims",
            [
                c.d_cat, c.d_card, c.d_cont, c.hidden, c.n_layers, c.d_z, self.vocab,
            ],
        );
        let lw = c.loss_weights;
        w.record("loss_weights", [lw.dc, lw.dv, lw.win, lw.sub, lw.cd]);
        w.record(
            "train",
            [
                c.lr,
                c.batch_size as f64,
                c.epochs as f64,
                c.patience as f64,
                c.clip,
            ],
        );
        w.record("seed", [c.seed]);
        w.record("cont_mean", self.cont_mean);
        w.record("cont_std", self.cont_std);
        write_tensors(&mut w, "", &self.params);
        w.finish()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_flat()).map_err(|e| Error::io(path, e))
    }

    pub fn from_flat(r: &FlatReader) -> Result<Self> {
        let dims: Vec<usize> = r.one("dims")?.parse_all(0)?;
        let [d_cat, d_card, d_cont, hidden, n_layers, d_z, vocab] = dims[..] else {
            return Err(Error::Model("`dims` needs 7 fields".into()));
        };
        let lw: Vec<f64> = r.one("loss_weights")?.parse_all(0)?;
        let tr: Vec<f64> = r.one("train")?.parse_all(0)?;
        if lw.len() != 5 || tr.len() != 5 {
            return Err(Error::Model("bad `loss_weights` or `train` record".into()));
        }
        let config = EncoderConfig {
            d_cat,
            d_card,
            d_cont,
            hidden,
            n_layers,
            d_z,
            loss_weights: LossWeights {
                dc: lw[0],
                dv: lw[1],
                win: lw[2],
                sub: lw[3],
                cd: lw[4],
            },
            lr: tr[0],
            batch_size: tr[1] as usize,
            epochs: tr[2] as usize,
            patience: tr[3] as usize,
            clip: tr[4],
            max_train_windows: None,
            seed: r.one("seed")?.parse_at(0)?,
        };
        let mut enc = Encoder::new(config, vocab, 0);
        let pair = |key: &str| -> Result<[f64; N_CONT]> {
            let v: Vec<f64> = r.one(key)?.parse_all(0)?;
            v.try_into()
                .map_err(|_| Error::Model(format!("`{key}` needs {N_CONT} values")))
        };
        enc.cont_mean = pair("cont_mean")?;
        enc.cont_std = pair("cont_std")?;
        let map = read_tensor_map(r)?;
        assign_tensors(&map, "", &mut enc.params)?;
        Ok(enc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_flat(&FlatReader::load(path, "tqp-encoder", 1)?)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn head_losses(h: &HeadOutputs, windows: &[&Window], norm: Norms) -> LossParts {
    let mut parts = LossParts::default();
    for (i, w) in windows.iter().enumerate() {
        let Some(t) = &w.targets else { continue };
        let x = h.dc[(i, 0)];
        parts.dc += (softplus(x) - f64::from(u8::from(t.next_dc)) * x) / norm.n;
        let row = h.dv.row(i);
        parts.dv += (log_sum_exp(row.as_slice().unwrap()) - row[t.transition as usize]) / norm.n;
        let x = h.win[(i, 0)];
        parts.win += (softplus(x) - t.next_outcome.as_f64() * x) / norm.n;
        if let Some(u) = w.subtype {
            let row = h.sub.row(i);
            parts.sub += (log_sum_exp(row.as_slice().unwrap()) - row[u.index()]) / norm.n_sub;
        }
        let e = h.cd[(i, 0)] - f64::from(t.next_crown_diff) / 3.0;
        parts.cd += e * e / norm.n;
    }
    parts
}

#[derive(Debug, Clone, Copy)]
struct Norms {
    n: f64,
    n_sub: f64,
}

impl Norms {
    fn of(windows: &[&Window]) -> Self {
        Self {
            n: windows.len().max(1) as f64,
            n_sub: windows.iter().filter(|w| w.subtype.is_some()).count() as f64,
        }
    }
}

/// Per-head mean losses (unweighted) and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub dc: f64,
    pub dv: f64,
    pub win: f64,
    pub sub: f64,
    pub cd: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.dc += o.dc;
        self.dv += o.dv;
        self.win += o.win;
        self.sub += o.sub;
        self.cd += o.cd;
    }

    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.dc * self.dc + w.dv * self.dv + w.win * self.win + w.sub * self.sub + w.cd * self.cd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderMetrics {
    pub loss: f64,
    pub dc_auc: Option<f64>,
    pub win_auc: Option<f64>,
    pub dv_accuracy: f64,
    pub sub_accuracy: Option<f64>,
    pub cd_mse: f64,
}

// ── User vector ─────────────────────────────────────────────────────────

pub fn ema_next(z_user: &Array1<f64>, z_cls: &Array1<f64>) -> Array1<f64> {
    z_user * USER_DECAY + z_cls * USER_WEIGHT
}

/// Row `i` is the user vector of window `i`, built only from rows `< i` of
/// `z_cls` (one player's windows in chronological order).
pub fn user_vectors(z_cls: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(z_cls.raw_dim());
    let mut u = Array1::zeros(z_cls.ncols());
    for i in 0..z_cls.nrows() {
        out.row_mut(i).assign(&u);
        u = ema_next(&u, &z_cls.row(i).to_owned());
    }
    out
}

// ── Training ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub n_train: usize,
    pub val: Option<EncoderMetrics>,
}

/// Multi-task pre-training with Adam, gradient-norm clipping and early
/// stopping on validation loss. Returns the best-validation parameters.
pub fn pretrain(
    train: &[Window],
    val: &[Window],
    vocab: usize,
    cfg: &EncoderConfig,
) -> Result<(Encoder, TrainReport)> {
    if train.is_empty() {
        return Err(Error::Degenerate("no training windows".into()));
    }
    if train.iter().any(|w| w.targets.is_none()) {
        return Err(Error::Config("training windows must carry targets".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "encoder-shuffle"));
    if let Some(cap) = cfg.max_train_windows {
        if cap < order.len() {
            order.shuffle(&mut rng);
            order.truncate(cap);
            order.sort_unstable();
        }
    }
    let subset: Vec<Window> = order.iter().map(|&i| train[i].clone()).collect();
    let val_refs: Vec<&Window> = val.iter().filter(|w| w.targets.is_some()).collect();

    let mut enc = Encoder::new(cfg.clone(), vocab, cfg.seed);
    enc.fit_cont_stats(&subset);
    let mut opt = Adam::new(cfg.lr);
    let mut best = (f64::INFINITY, enc.params.clone(), 0usize);
    let mut since_best = 0;
    let mut logs = Vec::new();
    let mut stopped_early = false;
    let mut idx: Vec<usize> = (0..subset.len()).collect();
    for epoch in 1..=cfg.epochs {
        idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, batch) in idx.chunks(cfg.batch_size.max(1)).enumerate() {
            let refs: Vec<&Window> = batch.iter().map(|&i| &subset[i]).collect();
            let (parts, mut grad) = enc.loss_and_grad(&refs);
            if !parts.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    loss: parts.total,
                });
            }
            loss_sum += parts.total * refs.len() as f64;
            clip_grad_norm(&mut grad, cfg.clip);
            opt.step(&mut enc.params, &grad);
        }
        let train_loss = loss_sum / subset.len() as f64;
        let val_loss = (!val_refs.is_empty()).then(|| enc.loss(&val_refs).total);
        info!(epoch, train_loss, ?val_loss, "encoder epoch");
        logs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        let monitor = val_loss.unwrap_or(train_loss);
        if monitor < best.0 {
            best = (monitor, enc.params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    enc.params = best.1;
    let val_metrics = (!val_refs.is_empty()).then(|| enc.metrics(&val_refs));
    Ok((
        enc,
        TrainReport {
            epochs: logs,
            best_epoch: best.2,
            stopped_early,
            n_train: subset.len(),
            val: val_metrics,
        },
    ))
}

// ── Gradient check ──────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub n_checked: usize,
}

/// Central finite differences over every parameter of `enc` against the
/// analytic gradient of the total loss on `windows`. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-5)`.
pub fn gradient_check(enc: &Encoder, windows: &[&Window], eps: f64) -> GradCheck {
    let (_, analytic) = enc.loss_and_grad(windows);
    let mut grads = Vec::new();
    analytic.visit("", &mut |name, t| grads.push((name.to_string(), t.clone())));
    let mut worst = (0.0, String::new());
    let mut n = 0;
    for (ti, (name, g)) in grads.iter().enumerate() {
        for (flat, &a) in g.iter().enumerate() {
            let at = |delta: f64| {
                let mut p = enc.params.clone();
                let mut k = 0;
                p.visit_mut("", &mut |_, t| {
                    if k == ti {
                        let cols = t.ncols();
                        t[(flat / cols, flat % cols)] += delta;
                    }
                    k += 1;
                });
                enc.loss_with(&p, windows).total
            };
            let num = (at(eps) - at(-eps)) / (2.0 * eps);
            let err = (a - num).abs() / a.abs().max(num.abs()).max(1e-5);
            n += 1;
            if err > worst.0 {
                worst = (err, format!("{name}[{flat}]"));
            }
        }
    }
    GradCheck {
        max_rel_error: worst.0,
        worst_param: worst.1,
        n_checked: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archetype::StateId;
    use crate::subtype::SubtypeLabel;
    use crate::window::{Step, TransitionType, WindowTargets};
    use rand::Rng;

    fn random_window(rng: &mut ChaCha8Rng, vocab: u32, with_sub: bool) -> Window {
        let steps = (0..10)
            .map(|_| {
                let win = rng.random::<bool>();
                let mut cards: [u32; DECK_SIZE] =
                    std::array::from_fn(|_| rng.random_range(0..vocab + 2));
                cards.sort_unstable();
                Step {
                    state: StateId(rng.random_range(0..13)),
                    outcome: if win { Outcome::Win } else { Outcome::Loss },
                    deck_changed: rng.random::<bool>(),
                    crown_diff: if win {
                        rng.random_range(1..=3)
                    } else {
                        -rng.random_range(1..=3)
                    },
                    gap_log: rng.random_range(0.0..10.0),
                    avg_elixir: rng.random_range(2.0..5.0),
                    cards,
                }
            })
            .collect();
        let next_dc = rng.random::<bool>();
        Window {
            player_id: "p".into(),
            start: 0,
            steps,
            targets: Some(WindowTargets {
                next_dc,
                transition: if next_dc {
                    TransitionType::CrossState
                } else {
                    TransitionType::NoChange
                },
                next_outcome: Outcome::Loss,
                next_crown_diff: -2,
            }),
            subtype: with_sub.then_some(SubtypeLabel::LossReactive),
        }
    }

    fn tiny(seed: u64) -> (Encoder, Vec<Window>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc = Encoder::new(EncoderConfig::tiny(), 6, seed);
        let ws: Vec<Window> = (0..3).map(|i| random_window(&mut rng, 6, i != 1)).collect();
        enc.fit_cont_stats(&ws);
        (enc, ws)
    }

    #[test]
    fn tiny_gradient_check_passes() {
        let (enc, ws) = tiny(11);
        let gc = gradient_check(&enc, &[&ws[0]], 1e-4);
        assert!(gc.max_rel_error < 1e-3, "{gc:?}");
        assert_eq!(gc.n_checked, enc.params.n_params());
    }

    #[test]
    fn mastery_injection_is_additive() {
        let (enc, ws) = tiny(2);
        let refs: Vec<&Window> = ws.iter().collect();
        let e = enc.encode_batch(&refs);
        let proj = enc.params.mastery.forward(&e.mf);
        assert_eq!(&e.z_raw + &proj, e.z_cls);
    }

    #[test]
    fn ema_unrolls_two_steps() {
        let z = ndarray::array![[1.0, -2.0], [4.0, 0.5], [3.0, 3.0]];
        let u = user_vectors(&z);
        assert_eq!(u.row(0).to_vec(), vec![0.0, 0.0]);
        let z1 = z.row(0).to_owned();
        let z2 = z.row(1).to_owned();
        let u1 = &z1 * 0.1;
        assert_eq!(u.row(1).to_owned(), u1);
        let u2 = &u1 * 0.9 + &z2 * 0.1;
        assert_eq!(u.row(2).to_owned(), u2);
    }

    #[test]
    fn user_vector_has_no_future_leakage() {
        let z = ndarray::array![[1.0], [2.0], [3.0], [4.0], [5.0]];
        let full = user_vectors(&z);
        let cut = user_vectors(&z.slice(s![..3, ..]).to_owned());
        assert_eq!(full.slice(s![..3, ..]), cut);
    }

    #[test]
    fn loss_weights_scale_their_head_gradients() {
        let (enc, ws) = tiny(4);
        let refs: Vec<&Window> = ws.iter().collect();
        let only_dc = LossWeights {
            dc: 1.0,
            dv: 0.0,
            win: 0.0,
            sub: 0.0,
            cd: 0.0,
        };
        let doubled = LossWeights { dc: 2.0, ..only_dc };
        let (_, g1) = enc.loss_and_grad_with(&enc.params, &refs, &only_dc);
        let (_, g2) = enc.loss_and_grad_with(&enc.params, &refs, &doubled);
        assert_eq!(g1.head_dc.w.mapv(|v| 2.0 * v), g2.head_dc.w);
        // heads with zero weight receive no gradient
        assert!(g1.head_win.w.iter().all(|v| *v == 0.0));
        assert!(g1.head_sub.w.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_mastery_gives_z_raw() {
        let (mut enc, ws) = tiny(5);
        enc.params.mastery.w.fill(0.0);
        let e = enc.encode_batch(&[&ws[0]]);
        assert_eq!(e.z_cls, e.z_raw);
        let again = enc.encode_batch(&[&ws[0]]);
        assert_eq!(e, again);
    }

    #[test]
    fn unknown_cards_use_the_reserved_row() {
        let (enc, ws) = tiny(6);
        let mut w = ws[0].clone();
        w.steps[0].cards = [u32::MAX; DECK_SIZE];
        let a = enc.encode_batch(&[&w]);
        w.steps[0].cards = [enc.vocab as u32 + 5; DECK_SIZE];
        let b = enc.encode_batch(&[&w]);
        assert_eq!(a, b);
    }

    #[test]
    fn batch_equals_single_window_inference() {
        let (enc, ws) = tiny(7);
        let refs: Vec<&Window> = ws.iter().collect();
        let all = enc.encode_batch(&refs);
        for (i, w) in ws.iter().enumerate() {
            let one = enc.encode_batch(&[w]);
            for j in 0..enc.d_z() {
                assert!((all.z_cls[(i, j)] - one.z_cls[(0, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn file_round_trip_is_exact() {
        let (enc, ws) = tiny(8);
        let r = FlatReader::parse(&enc.to_flat(), "tqp-encoder", 1).unwrap();
        let back = Encoder::from_flat(&r).unwrap();
        assert_eq!(back.params, enc.params);
        assert_eq!(back.encode_batch(&[&ws[0]]), enc.encode_batch(&[&ws[0]]));
    }

    #[test]
    fn stationary_problem_has_zero_head_gradient() {
        // all weights zero: every head sees z_cls = 0 and outputs its bias;
        // biases set to the optimal constants force zero bias gradients
        let (mut enc, _) = tiny(9);
        enc.params.visit_mut("", &mut |_, t| t.fill(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = random_window(&mut rng, 6, true);
        let mut b = random_window(&mut rng, 6, true);
        for (w, dc) in [(&mut a, true), (&mut b, false)] {
            let t = w.targets.as_mut().unwrap();
            t.next_dc = dc;
            t.transition = if dc {
                TransitionType::CrossState
            } else {
                TransitionType::NoChange
            };
            t.next_crown_diff = 0;
        }
        // dc: one positive and one negative, p = 0.5 at logit 0
        let (_, g) = enc.loss_and_grad_with(&enc.params, &[&a, &b], &LossWeights::default());
        assert!(g.head_dc.b[(0, 0)].abs() < 1e-15);
        assert!(g.head_cd.b[(0, 0)].abs() < 1e-15);
        assert!(g.gru.layers[0].0.w_x.iter().all(|v| *v == 0.0));
    }
}
