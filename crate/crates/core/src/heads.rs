//! Decision heads on the frozen encoder: the timing gate (is switching now
//! better than staying?) and the transition-quality predictor (`ŷ_tq` for a
//! candidate `from → to`), plus predictor-level evaluation.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::archetype::{StateId, N_STATES};
use crate::error::{Error, Result};
use crate::flatfile::{FlatReader, FlatWriter};
use crate::metrics::{mean, percentile};
use crate::nn::tensorfile::{assign_tensors, read_tensor_map, write_tensors};
use crate::nn::{clip_grad_norm, sigmoid, softplus, Adam, Mlp, Params};
use crate::seed::derive_seed;
use crate::subtype::{SubtypeLabel, N_SUBTYPES};
use crate::window::N_MASTERY;

/// Everything the heads see about one decision point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextFeatures {
    pub z_cls: Vec<f64>,
    pub z_user: Vec<f64>,
    pub mf: [f64; N_MASTERY],
    pub subtype: SubtypeLabel,
    pub state: StateId,
}

fn one_hot(out: &mut Vec<f64>, n: usize, i: usize) {
    out.extend((0..n).map(|j| if j == i { 1.0 } else { 0.0 }));
}

/// `[z_cls ‖ z_user ‖ mf ‖ subtype one-hot ‖ state one-hot]`
pub fn gate_features(c: &ContextFeatures) -> Vec<f64> {
    let mut v = Vec::with_capacity(c.z_cls.len() * 2 + N_MASTERY + N_SUBTYPES + N_STATES);
    v.extend(&c.z_cls);
    v.extend(&c.z_user);
    v.extend(c.mf);
    one_hot(&mut v, N_SUBTYPES, c.subtype.index());
    one_hot(&mut v, N_STATES, c.state.index());
    v
}

/// `[z_cls ‖ z_user ‖ mf ‖ from one-hot ‖ to one-hot]`
pub fn quality_features(c: &ContextFeatures, to: StateId) -> Vec<f64> {
    let mut v = Vec::with_capacity(c.z_cls.len() * 2 + N_MASTERY + 2 * N_STATES);
    v.extend(&c.z_cls);
    v.extend(&c.z_user);
    v.extend(c.mf);
    one_hot(&mut v, N_STATES, c.state.index());
    one_hot(&mut v, N_STATES, to.index());
    v
}

pub fn stack_rows(rows: &[Vec<f64>]) -> Array2<f64> {
    let d = rows.first().map_or(0, Vec::len);
    let mut x = Array2::zeros((rows.len(), d));
    for (i, r) in rows.iter().enumerate() {
        x.row_mut(i)
            .assign(&ndarray::ArrayView1::from(r.as_slice()));
    }
    x
}

// ── Config and scaling ──────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: usize,
    /// Number of linear layers.
    pub n_layers: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub clip: f64,
    pub w_pos: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            n_layers: 3,
            lr: 1e-3,
            batch_size: 256,
            epochs: 30,
            patience: 3,
            clip: 5.0,
            w_pos: 1.5,
            seed: 0,
        }
    }
}

impl HeadConfig {
    pub fn desk() -> Self {
        Self {
            hidden: 64,
            epochs: 15,
            ..Self::default()
        }
    }

    fn dims(&self, input: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(std::iter::repeat_n(
            self.hidden,
            self.n_layers.saturating_sub(1),
        ));
        d.push(1);
        d
    }
}

/// Per-column standardization with statistics frozen at fit time.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &Array2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = vec![0.0; x.ncols()];
        let mut std = vec![1.0; x.ncols()];
        for (j, col) in x.columns().into_iter().enumerate() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        out
    }

    fn write(&self, w: &mut FlatWriter) {
        w.record("scaler_mean", &self.mean);
        w.record("scaler_std", &self.std);
    }

    fn read(r: &FlatReader) -> Result<Self> {
        Ok(Self {
            mean: r.one("scaler_mean")?.parse_all(0)?,
            std: r.one("scaler_std")?.parse_all(0)?,
        })
    }
}

// ── Training loop ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Binary cross-entropy with weight `w_pos` on positive targets.
    WeightedBce {
        w_pos: f64,
    },
    Mse,
}

impl Objective {
    /// Mean loss over the rows and `dL/d(output)` per row.
    pub fn loss_grad(&self, out: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
        let n = out.len().max(1) as f64;
        let mut loss = 0.0;
        let grad = out
            .iter()
            .zip(y)
            .map(|(&x, &t)| match *self {
                Objective::WeightedBce { w_pos } => {
                    let w = if t > 0.5 { w_pos } else { 1.0 };
                    loss += w * (softplus(x) - t * x) / n;
                    w * (sigmoid(x) - t) / n
                }
                Objective::Mse => {
                    let e = x - t;
                    loss += e * e / n;
                    2.0 * e / n
                }
            })
            .collect();
        (loss, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

fn column(x: &Array2<f64>) -> Vec<f64> {
    x.column(0).to_vec()
}

fn eval_loss(mlp: &Mlp, x: &Array2<f64>, y: &[f64], obj: Objective) -> f64 {
    obj.loss_grad(&column(&mlp.predict(x)), y).0
}

/// Mini-batch Adam with clipping and early stopping on validation loss.
/// Inputs must already be standardized.
pub fn fit_mlp(
    x: &Array2<f64>,
    y: &[f64],
    val: Option<(&Array2<f64>, &[f64])>,
    obj: Objective,
    cfg: &HeadConfig,
    label: &str,
) -> Result<(Mlp, Vec<HeadEpoch>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("{label}-init")));
    let mut mlp = Mlp::new(&cfg.dims(x.ncols()), &mut rng);
    if obj == Objective::Mse {
        // win-rate deltas are small; start near the target mean
        let last = mlp.layers.len() - 1;
        mlp.layers[last].w *= 0.1;
        mlp.layers[last].b.fill(mean(y).unwrap_or(0.0));
    }
    let mut opt = Adam::new(cfg.lr);
    let mut idx: Vec<usize> = (0..x.nrows()).collect();
    let mut best = (f64::INFINITY, mlp.clone());
    let mut since = 0;
    let mut logs = Vec::new();
    for epoch in 1..=cfg.epochs {
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, batch) in idx.chunks(cfg.batch_size.max(1)).enumerate() {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let (out, cache) = mlp.forward(&xb);
            let (loss, g) = obj.loss_grad(&column(&out), &yb);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    loss,
                });
            }
            total += loss * batch.len() as f64;
            let dy = Array2::from_shape_vec((g.len(), 1), g).expect("column");
            let mut grad = mlp.zeroed();
            mlp.backward(&cache, &dy, &mut grad);
            clip_grad_norm(&mut grad, cfg.clip);
            opt.step(&mut mlp, &grad);
        }
        let train_loss = total / x.nrows().max(1) as f64;
        let val_loss = val.map(|(xv, yv)| eval_loss(&mlp, xv, yv, obj));
        info!(head = label, epoch, train_loss, ?val_loss, "head epoch");
        logs.push(HeadEpoch {
            epoch,
            train_loss,
            val_loss,
        });
        let monitor = val_loss.unwrap_or(train_loss);
        if monitor < best.0 {
            best = (monitor, mlp.clone());
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience {
                break;
            }
        }
    }
    Ok((best.1, logs))
}

fn predict_column(mlp: &Mlp, scaler: &Scaler, x: &Array2<f64>) -> Vec<f64> {
    let parts: Vec<Vec<f64>> = x
        .axis_chunks_iter(Axis(0), 2048)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|chunk| column(&mlp.predict(&scaler.apply(&chunk.to_owned()))))
        .collect();
    parts.concat()
}

fn write_head(
    kind: &str,
    cfg: &HeadConfig,
    scaler: &Scaler,
    mlp: &Mlp,
    extra: impl FnOnce(&mut FlatWriter),
) -> String {
    let mut w = FlatWriter::new(kind, 1);
    w.record("dims", [mlp.input_dim(), cfg.hidden, cfg.n_layers]);
    w.record(
        "train",
        [
            cfg.lr,
            cfg.batch_size as f64,
            cfg.epochs as f64,
            cfg.patience as f64,
            cfg.clip,
            cfg.w_pos,
        ],
    );
    w.record("seed", [cfg.seed]);
    extra(&mut w);
    scaler.write(&mut w);
    write_tensors(&mut w, "mlp", mlp);
    w.finish()
}

fn read_head(r: &FlatReader) -> Result<(HeadConfig, Scaler, Mlp)> {
    let dims: Vec<usize> = r.one("dims")?.parse_all(0)?;
    let tr: Vec<f64> = r.one("train")?.parse_all(0)?;
    let (&[input, hidden, n_layers], &[lr, batch, epochs, patience, clip, w_pos]) =
        (&dims[..], &tr[..])
    else {
        return Err(Error::Model("bad `dims` or `train` record".into()));
    };
    let cfg = HeadConfig {
        hidden,
        n_layers,
        lr,
        batch_size: batch as usize,
        epochs: epochs as usize,
        patience: patience as usize,
        clip,
        w_pos,
        seed: r.one("seed")?.parse_at(0)?,
    };
    let mut mlp = Mlp::new(&cfg.dims(input), &mut ChaCha8Rng::seed_from_u64(0));
    assign_tensors(&read_tensor_map(r)?, "mlp", &mut mlp)?;
    Ok((cfg, Scaler::read(r)?, mlp))
}

// ── Timing gate ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct GateModel {
    pub config: HeadConfig,
    pub scaler: Scaler,
    pub mlp: Mlp,
    pub theta: f64,
}

pub fn approves(prob: f64, theta: f64) -> bool {
    prob >= theta
}

impl GateModel {
    pub fn probs(&self, x: &Array2<f64>) -> Vec<f64> {
        predict_column(&self.mlp, &self.scaler, x)
            .into_iter()
            .map(sigmoid)
            .collect()
    }

    pub fn prob(&self, ctx: &ContextFeatures) -> f64 {
        self.probs(&stack_rows(&[gate_features(ctx)]))[0]
    }

    pub fn to_flat(&self) -> String {
        write_head("tqp-gate", &self.config, &self.scaler, &self.mlp, |w| {
            w.record("theta", [self.theta]);
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_flat()).map_err(|e| Error::io(path, e))
    }

    pub fn from_flat(r: &FlatReader) -> Result<Self> {
        let (config, scaler, mlp) = read_head(r)?;
        Ok(Self {
            config,
            scaler,
            mlp,
            theta: r.one("theta")?.parse_at(0)?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_flat(&FlatReader::load(path, "tqp-gate", 1)?)
    }
}

/// Trains the gate on the (undersampled) labeled mix. `theta` starts at 0.5;
/// see [`select_threshold`].
pub fn train_timing_gate(
    x: &Array2<f64>,
    labels: &[bool],
    val: Option<(&Array2<f64>, &[bool])>,
    cfg: &HeadConfig,
) -> Result<(GateModel, Vec<HeadEpoch>)> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Degenerate("timing labels are all one class".into()));
    }
    let scaler = Scaler::fit(x);
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let val_prepared = val.map(|(xv, lv)| {
        (
            scaler.apply(xv),
            lv.iter()
                .map(|&l| f64::from(u8::from(l)))
                .collect::<Vec<_>>(),
        )
    });
    let (mlp, logs) = fit_mlp(
        &scaler.apply(x),
        &y,
        val_prepared.as_ref().map(|(a, b)| (a, b.as_slice())),
        Objective::WeightedBce { w_pos: cfg.w_pos },
        cfg,
        "gate",
    )?;
    Ok((
        GateModel {
            config: cfg.clone(),
            scaler,
            mlp,
            theta: 0.5,
        },
        logs,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub theta: f64,
    pub switch_gap: Option<f64>,
    pub approval_rate: f64,
    pub approved_switchers: usize,
    /// False when no grid value met the constraints.
    pub feasible: bool,
}

/// Picks θ on a 0.01 grid maximizing SwitchGap among actual switchers,
/// subject to an approval rate ≤ `max_rate` and at least
/// `min_approved_switchers` approved switchers. Ties keep the smaller θ.
/// Without a feasible θ, falls back to the smallest θ meeting the rate cap.
pub fn select_threshold(
    probs: &[f64],
    is_switch: &[bool],
    y: &[f64],
    max_rate: f64,
    min_approved_switchers: usize,
) -> ThresholdChoice {
    let n = probs.len().max(1) as f64;
    let mut best: Option<ThresholdChoice> = None;
    let mut fallback: Option<ThresholdChoice> = None;
    for step in 0..=100 {
        let theta = step as f64 / 100.0;
        let approved: Vec<bool> = probs.iter().map(|&p| approves(p, theta)).collect();
        let rate = approved.iter().filter(|&&a| a).count() as f64 / n;
        if rate > max_rate {
            continue;
        }
        let mut acc = Vec::new();
        let mut rej = Vec::new();
        for i in 0..probs.len() {
            if is_switch[i] {
                if approved[i] { &mut acc } else { &mut rej }.push(y[i]);
            }
        }
        let gap = match (mean(&acc), mean(&rej)) {
            (Some(a), Some(r)) => Some(a - r),
            _ => None,
        };
        let choice = ThresholdChoice {
            theta,
            switch_gap: gap,
            approval_rate: rate,
            approved_switchers: acc.len(),
            feasible: true,
        };
        if fallback.is_none() {
            fallback = Some(ThresholdChoice {
                feasible: false,
                ..choice.clone()
            });
        }
        if acc.len() < min_approved_switchers {
            continue;
        }
        if let Some(g) = gap {
            if best
                .as_ref()
                .is_none_or(|b| g > b.switch_gap.unwrap_or(f64::NEG_INFINITY))
            {
                best = Some(choice);
            }
        }
    }
    best.or(fallback).unwrap_or(ThresholdChoice {
        theta: 1.0,
        switch_gap: None,
        approval_rate: 0.0,
        approved_switchers: 0,
        feasible: false,
    })
}

// ── Quality predictor ───────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct QualityModel {
    pub config: HeadConfig,
    pub scaler: Scaler,
    pub mlp: Mlp,
}

impl QualityModel {
    pub fn predict(&self, x: &Array2<f64>) -> Vec<f64> {
        predict_column(&self.mlp, &self.scaler, x)
    }

    pub fn predict_one(&self, ctx: &ContextFeatures, to: StateId) -> f64 {
        self.predict(&stack_rows(&[quality_features(ctx, to)]))[0]
    }

    /// `ŷ` for every destination state, in state order.
    pub fn predict_all_targets(&self, ctx: &ContextFeatures) -> Vec<f64> {
        let rows: Vec<Vec<f64>> = StateId::all().map(|s| quality_features(ctx, s)).collect();
        self.predict(&stack_rows(&rows))
    }

    pub fn to_flat(&self) -> String {
        write_head("tqp-quality", &self.config, &self.scaler, &self.mlp, |_| {})
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_flat()).map_err(|e| Error::io(path, e))
    }

    pub fn from_flat(r: &FlatReader) -> Result<Self> {
        let (config, scaler, mlp) = read_head(r)?;
        Ok(Self {
            config,
            scaler,
            mlp,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_flat(&FlatReader::load(path, "tqp-quality", 1)?)
    }
}

pub fn train_quality(
    x: &Array2<f64>,
    y: &[f64],
    val: Option<(&Array2<f64>, &[f64])>,
    cfg: &HeadConfig,
) -> Result<(QualityModel, Vec<HeadEpoch>)> {
    if x.nrows() < 100 {
        warn!(
            n = x.nrows(),
            "fewer than 100 switch events; quality estimates will be noisy"
        );
    }
    if x.nrows() == 0 {
        return Err(Error::Degenerate("no switch events to train on".into()));
    }
    let scaler = Scaler::fit(x);
    let val_x = val.map(|(xv, _)| scaler.apply(xv));
    let (mlp, logs) = fit_mlp(
        &scaler.apply(x),
        y,
        val_x.as_ref().zip(val.map(|(_, yv)| yv)),
        Objective::Mse,
        cfg,
        "quality",
    )?;
    Ok((
        QualityModel {
            config: cfg.clone(),
            scaler,
            mlp,
        },
        logs,
    ))
}

// ── Predictor evaluation ────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    pub n: usize,
    pub mae: f64,
    pub direction_accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub n_pred_beneficial: usize,
    pub n_pred_harmful: usize,
    /// Mean `y` over `ŷ > 0` minus mean `y` over `ŷ ≤ 0`.
    pub gap: Option<f64>,
    pub gap_ci: Option<(f64, f64)>,
    pub negative_confirmation: Option<f64>,
}

/// Discrimination gap by definition; `None` when either side is empty.
pub fn discrimination_gap(pred: &[f64], y: &[f64]) -> Option<f64> {
    let (mut sp, mut np, mut sn, mut nn) = (0.0, 0usize, 0.0, 0usize);
    for (&p, &t) in pred.iter().zip(y) {
        if p > 0.0 {
            sp += t;
            np += 1;
        } else {
            sn += t;
            nn += 1;
        }
    }
    (np > 0 && nn > 0).then(|| sp / np as f64 - sn / nn as f64)
}

/// Percentile bootstrap of the discrimination gap. Resample `r` draws its
/// indices from its own derived seed, so the result is schedule-independent.
pub fn bootstrap_gap_ci(
    pred: &[f64],
    y: &[f64],
    resamples: usize,
    seed: u64,
    level: f64,
) -> Option<(f64, f64)> {
    let n = pred.len();
    if n == 0 || resamples == 0 {
        return None;
    }
    let mut gaps: Vec<f64> = (0..resamples)
        .into_par_iter()
        .filter_map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("bootstrap-{r}")));
            let (mut sp, mut np, mut sn, mut nn) = (0.0, 0usize, 0.0, 0usize);
            for _ in 0..n {
                let i = rng.random_range(0..n);
                if pred[i] > 0.0 {
                    sp += y[i];
                    np += 1;
                } else {
                    sn += y[i];
                    nn += 1;
                }
            }
            (np > 0 && nn > 0).then(|| sp / np as f64 - sn / nn as f64)
        })
        .collect();
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Some((percentile(&gaps, tail), percentile(&gaps, 1.0 - tail)))
}

/// Positive means `> 0` for both prediction and outcome; zeros count as
/// non-positive on both sides.
pub fn evaluate_predictor(pred: &[f64], y: &[f64], resamples: usize, seed: u64) -> PredictorReport {
    assert_eq!(pred.len(), y.len());
    let n = pred.len();
    let (mut tp, mut fp, mut tn, mut fne) = (0usize, 0usize, 0usize, 0usize);
    let mut abs_err = 0.0;
    for (&p, &t) in pred.iter().zip(y) {
        abs_err += (p - t).abs();
        match (p > 0.0, t > 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fne += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fne);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    let gap = discrimination_gap(pred, y);
    PredictorReport {
        n,
        mae: abs_err / n.max(1) as f64,
        direction_accuracy: (tp + tn) as f64 / n.max(1) as f64,
        precision,
        recall,
        f1,
        n_pred_beneficial: tp + fp,
        n_pred_harmful: tn + fne,
        gap,
        gap_ci: gap.and_then(|_| bootstrap_gap_ci(pred, y, resamples, seed, 0.95)),
        negative_confirmation: ratio(tn, tn + fne),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_confusion_matrix() {
        let r = evaluate_predictor(&[0.1, 0.2, -0.1, -0.2], &[0.05, -0.05, -0.1, 0.1], 100, 1);
        // |0.05| + |0.25| + |0| + |0.3| over 4
        let oracle = [(0.1f64, 0.05f64), (0.2, -0.05), (-0.1, -0.1), (-0.2, 0.1)]
            .iter()
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>()
            / 4.0;
        assert!((r.mae - oracle).abs() < 1e-15);
        assert!((r.mae - 0.15).abs() < 1e-12);
        assert_eq!(r.direction_accuracy, 0.5);
        assert_eq!(r.precision, Some(0.5));
        assert_eq!(r.recall, Some(0.5));
    }

    #[test]
    fn always_zero_and_perfect_predictors() {
        let y = [0.1, -0.2, 0.0, 0.3, -0.1, 0.0];
        let zero = evaluate_predictor(&[0.0; 6], &y, 10, 1);
        let nonpos = y.iter().filter(|&&v| v <= 0.0).count() as f64 / 6.0;
        assert_eq!(zero.direction_accuracy, nonpos);
        assert_eq!(zero.gap, None);

        let perfect = evaluate_predictor(&y, &y, 10, 1);
        assert_eq!(perfect.mae, 0.0);
        assert_eq!(perfect.f1, Some(1.0));
        let pos: Vec<f64> = y.iter().copied().filter(|&v| v > 0.0).collect();
        let neg: Vec<f64> = y.iter().copied().filter(|&v| v <= 0.0).collect();
        assert_eq!(perfect.gap, Some(mean(&pos).unwrap() - mean(&neg).unwrap()));
    }

    #[test]
    fn bootstrap_is_seeded_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pred: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = pred
            .iter()
            .map(|p| p * 0.3 + rng.random_range(-0.2..0.2))
            .collect();
        let a = bootstrap_gap_ci(&pred, &y, 1000, 9, 0.95).unwrap();
        assert_eq!(a, bootstrap_gap_ci(&pred, &y, 1000, 9, 0.95).unwrap());
        assert!(a.0 <= a.1);
        let gap = discrimination_gap(&pred, &y).unwrap();
        assert!(a.0 < gap && gap < a.1);
    }

    #[test]
    fn positive_weight_scales_gradient() {
        let out = [0.3, -0.7];
        let y = [1.0, 0.0];
        let (_, g1) = Objective::WeightedBce { w_pos: 1.0 }.loss_grad(&out, &y);
        let (_, g15) = Objective::WeightedBce { w_pos: 1.5 }.loss_grad(&out, &y);
        assert_eq!(g15[0], g1[0] * 1.5);
        assert_eq!(g15[1], g1[1]);
    }

    #[test]
    fn threshold_limits_and_monotonicity() {
        let probs = [0.0, 0.2, 0.5, 0.9, 1.0];
        assert!(probs.iter().all(|&p| approves(p, 0.0)));
        assert!(probs.iter().all(|&p| !approves(p, 1.0 + 1e-9)));
        let mut last = usize::MAX;
        for step in 0..=100 {
            let n = probs
                .iter()
                .filter(|&&p| approves(p, step as f64 / 100.0))
                .count();
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn threshold_selection_respects_rate_cap() {
        // 100 events; the gate ranks the 10 best switchers highest
        let mut probs = Vec::new();
        let mut sw = Vec::new();
        let mut y = Vec::new();
        for i in 0..100 {
            probs.push(i as f64 / 100.0);
            sw.push(i % 2 == 0 || i >= 80);
            y.push(if i >= 80 { 0.3 } else { -0.1 });
        }
        let c = select_threshold(&probs, &sw, &y, 0.15, 10);
        assert!(c.feasible);
        assert!(c.approval_rate <= 0.15);
        assert!(c.approved_switchers >= 10);
        // the cap binds: 15 of 100 approved, all of them switchers with y = 0.3
        assert_eq!(c.theta, 0.85);
    }

    #[test]
    fn constant_target_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_simple_fn((400, 5), || rng.random_range(-1.0..1.0));
        let y = vec![0.07; 400];
        let cfg = HeadConfig {
            hidden: 16,
            epochs: 60,
            ..HeadConfig::default()
        };
        let (m, _) = train_quality(&x, &y, None, &cfg).unwrap();
        let pred = m.predict(&x);
        let mae = pred.iter().map(|p| (p - 0.07).abs()).sum::<f64>() / 400.0;
        assert!(mae < 0.01, "{mae}");
    }

    #[test]
    fn gate_rejects_single_class_and_round_trips() {
        let x = Array2::from_shape_fn((20, 3), |(i, j)| (i * j) as f64);
        assert!(train_timing_gate(&x, &[false; 20], None, &HeadConfig::desk()).is_err());
        let labels: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
        let cfg = HeadConfig {
            hidden: 8,
            epochs: 2,
            ..HeadConfig::default()
        };
        let (mut g, _) = train_timing_gate(&x, &labels, None, &cfg).unwrap();
        g.theta = 0.37;
        let r = FlatReader::parse(&g.to_flat(), "tqp-gate", 1).unwrap();
        let back = GateModel::from_flat(&r).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.probs(&x), g.probs(&x));
    }

    #[test]
    fn feature_layouts() {
        let c = ContextFeatures {
            z_cls: vec![1.0, 2.0],
            z_user: vec![3.0, 4.0],
            mf: [0.5; N_MASTERY],
            subtype: SubtypeLabel::Flex,
            state: StateId(12),
        };
        let g = gate_features(&c);
        assert_eq!(g.len(), 4 + N_MASTERY + 3 + 13);
        assert_eq!(g[4 + N_MASTERY + 2], 1.0);
        assert_eq!(g[g.len() - 1], 1.0);
        let q = quality_features(&c, StateId(0));
        assert_eq!(q.len(), 4 + N_MASTERY + 26);
        assert_eq!(q[4 + N_MASTERY + 12], 1.0);
        assert_eq!(q[4 + N_MASTERY + 13], 1.0);
    }
}
