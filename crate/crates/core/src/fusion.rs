//! Score fusion: candidate construction, adoptability, fused ranking and the
//! final Stay/Switch decision.
//!
//! `score(s') = α · norm(adopt(s')) + (1 − α) · tanh(ŷ(s') / scale)`, where
//! adoptability is min-max normalized within the query.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::archetype::{StateId, N_STATES};
use crate::error::{Error, Result};
use crate::flatfile::{FlatReader, FlatWriter};
use crate::heads::{approves, ContextFeatures, GateModel, QualityModel};
use crate::subtype::{persona_gate, GateDecision, SubtypeLabel};
use crate::transition::TransitionEvent;

pub const MIN_CANDIDATE_SUPPORT: usize = 3;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const TANH_SCALE: f64 = 0.1;

// ── Transition counts and adoptability ──────────────────────────────────

/// `count(u, s → s')` over training cross-state switches.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransitionCounts {
    counts: BTreeMap<(u8, u8, u8), usize>,
}

impl TransitionCounts {
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a TransitionEvent>) -> Self {
        let mut t = Self::default();
        for e in events {
            if e.is_switch() && e.is_cross_state() {
                t.add(e.subtype, e.from_state, e.to_state, 1);
            }
        }
        t
    }

    pub fn add(&mut self, u: SubtypeLabel, from: StateId, to: StateId, n: usize) {
        *self
            .counts
            .entry((u.index() as u8, from.0, to.0))
            .or_default() += n;
    }

    pub fn count(&self, u: SubtypeLabel, from: StateId, to: StateId) -> usize {
        self.counts
            .get(&(u.index() as u8, from.0, to.0))
            .copied()
            .unwrap_or(0)
    }

    pub fn total_from(&self, u: SubtypeLabel, from: StateId) -> usize {
        let u = u.index() as u8;
        self.counts
            .range((u, from.0, 0)..=(u, from.0, u8::MAX))
            .map(|(_, c)| c)
            .sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn to_flat(&self) -> String {
        let mut w = FlatWriter::new("tqp-transition-counts", 1);
        w.comment("count\tsubtype\tfrom\tto\tn");
        for (&(u, f, t), &n) in &self.counts {
            w.record("count", [u as usize, f as usize, t as usize, n]);
        }
        w.finish()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_flat()).map_err(|e| Error::io(path, e))
    }

    pub fn from_flat(r: &FlatReader) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for rec in r.all("count") {
            let v: Vec<usize> = rec.parse_all(0)?;
            let &[u, f, t, n] = &v[..] else {
                return Err(Error::parse(rec.line, "`count` needs 4 fields"));
            };
            if u > 2 || f >= N_STATES || t >= N_STATES {
                return Err(Error::parse(rec.line, "subtype or state out of range"));
            }
            counts.insert((u as u8, f as u8, t as u8), n);
        }
        Ok(Self { counts })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_flat(&FlatReader::load(path, "tqp-transition-counts", 1)?)
    }
}

/// Raw relative adoptability of `from → to` for a player. Scores are only
/// compared within one query, so any finite scale works.
pub trait AdoptabilityScorer: Send + Sync {
    fn score(
        &self,
        u: SubtypeLabel,
        from: StateId,
        to: StateId,
        ctx: Option<&ContextFeatures>,
    ) -> f64;
}

/// `(count(u, s→s') + 1) / (count(u, s→·) + |states|)`
#[derive(Debug, Clone, Copy)]
pub struct LaplaceScorer<'a>(pub &'a TransitionCounts);

impl AdoptabilityScorer for LaplaceScorer<'_> {
    fn score(
        &self,
        u: SubtypeLabel,
        from: StateId,
        to: StateId,
        _: Option<&ContextFeatures>,
    ) -> f64 {
        (self.0.count(u, from, to) + 1) as f64 / (self.0.total_from(u, from) + N_STATES) as f64
    }
}

// ── Scoring ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub alpha: f64,
    pub scale: f64,
    pub grid: Vec<f64>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            scale: TANH_SCALE,
            grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || self.grid.iter().any(|a| !(0.0..=1.0).contains(a))
        {
            return Err(Error::Config("alpha must lie in [0, 1]".into()));
        }
        if self.scale <= 0.0 || !self.scale.is_finite() {
            return Err(Error::Config("tanh scale must be positive".into()));
        }
        Ok(())
    }

    pub fn to_flat(&self) -> String {
        let mut w = FlatWriter::new("tqp-fusion", 1);
        w.record("alpha", [self.alpha]);
        w.record("scale", [self.scale]);
        w.record("grid", &self.grid);
        w.finish()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_flat()).map_err(|e| Error::io(path, e))
    }

    pub fn from_flat(r: &FlatReader) -> Result<Self> {
        let cfg = Self {
            alpha: r.one("alpha")?.parse_at(0)?,
            scale: r.one("scale")?.parse_at(0)?,
            grid: r.one("grid")?.parse_all(0)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_flat(&FlatReader::load(path, "tqp-fusion", 1)?)
    }
}

pub fn fused_score(alpha: f64, norm_adopt: f64, quality: f64, scale: f64) -> f64 {
    alpha * norm_adopt + (1.0 - alpha) * (quality / scale).tanh()
}

/// Min-max normalization; a constant set (including a single value) maps to 1.
pub fn min_max(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    raw.iter()
        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 1.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub to_state: StateId,
    pub support: usize,
    pub adoptability: f64,
    pub norm_adoptability: f64,
    pub quality: f64,
    pub fused: f64,
}

/// Stage 1 keeps `s' ≠ s` with support ≥ 3; stage 2 drops `ŷ ≤ 0`.
/// `quality[s']` is `ŷ(s → s')`; scores are filled in by [`fuse_scores`].
pub fn build_candidates(
    u: SubtypeLabel,
    from: StateId,
    counts: &TransitionCounts,
    quality: &[f64],
    scorer: &dyn AdoptabilityScorer,
    ctx: Option<&ContextFeatures>,
) -> Vec<Candidate> {
    supported_targets(u, from, counts)
        .into_iter()
        .filter(|s| quality[s.index()] > 0.0)
        .map(|s| Candidate {
            to_state: s,
            support: counts.count(u, from, s),
            adoptability: scorer.score(u, from, s, ctx),
            norm_adoptability: 0.0,
            quality: quality[s.index()],
            fused: 0.0,
        })
        .collect()
}

/// Destinations passing the support filter, in state order.
pub fn supported_targets(
    u: SubtypeLabel,
    from: StateId,
    counts: &TransitionCounts,
) -> Vec<StateId> {
    StateId::all()
        .filter(|&s| s != from && counts.count(u, from, s) >= MIN_CANDIDATE_SUPPORT)
        .collect()
}

/// Fills normalized and fused scores and sorts best first: fused score,
/// then larger `ŷ`, then lower state id.
pub fn fuse_scores(cands: &mut [Candidate], alpha: f64, scale: f64) {
    let raw: Vec<f64> = cands.iter().map(|c| c.adoptability).collect();
    for (c, n) in cands.iter_mut().zip(min_max(&raw)) {
        c.norm_adoptability = n;
        c.fused = fused_score(alpha, n, c.quality, scale);
    }
    cands.sort_by(|a, b| {
        b.fused
            .total_cmp(&a.fused)
            .then(b.quality.total_cmp(&a.quality))
            .then(a.to_state.cmp(&b.to_state))
    });
}

// ── Recommendation ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "target_state", rename_all = "snake_case")]
pub enum Decision {
    Stay,
    Switch(StateId),
}

impl Decision {
    pub fn target(self) -> Option<StateId> {
        match self {
            Decision::Stay => None,
            Decision::Switch(s) => Some(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    PersonaGate,
    TimingGate,
    NoCandidates,
    Fusion,
}

impl Provenance {
    pub fn explain(self) -> &'static str {
        match self {
            Provenance::PersonaGate => {
                "held by PersonaGate: your consistency profile outperforms switching"
            }
            Provenance::TimingGate => {
                "held by TimingGate: switching now is not expected to beat staying"
            }
            Provenance::NoCandidates => {
                "no well-supported destination is predicted to improve your win rate"
            }
            Provenance::Fusion => {
                "switch recommended: top destination by fused adoptability and quality"
            }
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::PersonaGate => "persona_gate",
            Provenance::TimingGate => "timing_gate",
            Provenance::NoCandidates => "no_candidates",
            Provenance::Fusion => "fusion",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub decision: Decision,
    pub subtype: SubtypeLabel,
    pub from_state: StateId,
    /// Absent when PersonaGate holds before the timing gate runs.
    pub gate_prob: Option<f64>,
    pub candidates: Vec<Candidate>,
    pub provenance: Provenance,
}

/// Everything [`decide`] needs besides the per-query scores.
pub struct FusionParts<'a> {
    pub counts: &'a TransitionCounts,
    pub scorer: &'a dyn AdoptabilityScorer,
    pub theta: f64,
    pub alpha: f64,
    pub scale: f64,
}

/// The Who → When → What cascade on precomputed scores. `gate_prob` is
/// only evaluated when PersonaGate forwards; `quality` yields `ŷ` for all
/// destinations.
pub fn decide(
    u: SubtypeLabel,
    from: StateId,
    ctx: Option<&ContextFeatures>,
    gate_prob: impl FnOnce() -> f64,
    quality: impl FnOnce() -> Vec<f64>,
    parts: &FusionParts<'_>,
) -> Recommendation {
    let stay = |gate_prob, provenance, candidates| Recommendation {
        decision: Decision::Stay,
        subtype: u,
        from_state: from,
        gate_prob,
        candidates,
        provenance,
    };
    if persona_gate(u) == GateDecision::Stay {
        return stay(None, Provenance::PersonaGate, Vec::new());
    }
    let p = gate_prob();
    if !approves(p, parts.theta) {
        return stay(Some(p), Provenance::TimingGate, Vec::new());
    }
    let q = quality();
    let mut cands = build_candidates(u, from, parts.counts, &q, parts.scorer, ctx);
    if cands.is_empty() {
        return stay(Some(p), Provenance::NoCandidates, cands);
    }
    fuse_scores(&mut cands, parts.alpha, parts.scale);
    Recommendation {
        decision: Decision::Switch(cands[0].to_state),
        subtype: u,
        from_state: from,
        gate_prob: Some(p),
        candidates: cands,
        provenance: Provenance::Fusion,
    }
}

/// Frozen decision components.
pub struct Recommender<'a> {
    pub gate: &'a GateModel,
    pub quality: &'a QualityModel,
    pub counts: &'a TransitionCounts,
    pub scorer: &'a dyn AdoptabilityScorer,
    pub config: &'a FusionConfig,
}

impl Recommender<'_> {
    pub fn recommend(&self, ctx: &ContextFeatures) -> Recommendation {
        let parts = FusionParts {
            counts: self.counts,
            scorer: self.scorer,
            theta: self.gate.theta,
            alpha: self.config.alpha,
            scale: self.config.scale,
        };
        decide(
            ctx.subtype,
            ctx.state,
            Some(ctx),
            || self.gate.prob(ctx),
            || self.quality.predict_all_targets(ctx),
            &parts,
        )
    }
}

// ── α search ────────────────────────────────────────────────────────────

/// One validation decision point with its model scores precomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningItem {
    pub subtype: SubtypeLabel,
    pub from_state: StateId,
    pub gate_prob: f64,
    /// `ŷ(from → s')` for every state.
    pub quality: Vec<f64>,
    pub is_switch: bool,
    pub to_state: StateId,
    pub y_tq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaChoice {
    pub alpha: f64,
    /// `(α, objective)` per grid value; `None` where undefined.
    pub curve: Vec<(f64, Option<f64>)>,
    pub degenerate: bool,
}

/// Transition-level SwitchGap at one α: among actual switchers, mean `y`
/// of those whose exact transition the pipeline would recommend minus
/// the mean of the rest.
pub fn endorsed_gap(items: &[TuningItem], alpha: f64, parts: &FusionParts<'_>) -> Option<f64> {
    let parts = FusionParts { alpha, ..*parts };
    let (mut se, mut ne, mut sr, mut nr) = (0.0, 0usize, 0.0, 0usize);
    for it in items.iter().filter(|it| it.is_switch) {
        let rec = decide(
            it.subtype,
            it.from_state,
            None,
            || it.gate_prob,
            || it.quality.clone(),
            &parts,
        );
        if rec.decision == Decision::Switch(it.to_state) {
            se += it.y_tq;
            ne += 1;
        } else {
            sr += it.y_tq;
            nr += 1;
        }
    }
    (ne > 0 && nr > 0).then(|| se / ne as f64 - sr / nr as f64)
}

/// Grid search; ties keep the smaller α. Falls back to 0.5 when the
/// objective is undefined everywhere.
pub fn tune_alpha(items: &[TuningItem], grid: &[f64], parts: &FusionParts<'_>) -> AlphaChoice {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let curve: Vec<(f64, Option<f64>)> = sorted
        .iter()
        .map(|&a| (a, endorsed_gap(items, a, parts)))
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for &(a, g) in &curve {
        if let Some(g) = g {
            if best.is_none_or(|(_, bg)| g > bg) {
                best = Some((a, g));
            }
        }
    }
    match best {
        Some((alpha, _)) => AlphaChoice {
            alpha,
            curve,
            degenerate: false,
        },
        None => {
            warn!("no α yields a defined objective on validation; using the default");
            AlphaChoice {
                alpha: DEFAULT_ALPHA,
                curve,
                degenerate: true,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s(i: u8) -> StateId {
        StateId(i)
    }

    fn counts(entries: &[(u8, u8, usize)], u: SubtypeLabel) -> TransitionCounts {
        let mut t = TransitionCounts::default();
        for &(f, to, n) in entries {
            t.add(u, s(f), s(to), n);
        }
        t
    }

    #[test]
    fn support_filter_keeps_three_or_more() {
        let u = SubtypeLabel::LossReactive;
        let c = counts(&[(0, 2, 5), (0, 7, 2)], u);
        let q = vec![0.1; N_STATES];
        let cands = build_candidates(u, s(0), &c, &q, &LaplaceScorer(&c), None);
        assert_eq!(
            cands.iter().map(|c| c.to_state).collect::<Vec<_>>(),
            vec![s(2)]
        );
    }

    #[test]
    fn quality_filter_drops_nonpositive() {
        let u = SubtypeLabel::Flex;
        let c = counts(&[(0, 2, 5), (0, 3, 4), (0, 4, 3)], u);
        let mut q = vec![0.1; N_STATES];
        q[2] = -0.01;
        q[4] = 0.0;
        let cands = build_candidates(u, s(0), &c, &q, &LaplaceScorer(&c), None);
        assert_eq!(
            cands.iter().map(|c| c.to_state).collect::<Vec<_>>(),
            vec![s(3)]
        );
    }

    #[test]
    fn laplace_scores() {
        let u = SubtypeLabel::Flex;
        let c = counts(&[(1, 2, 5), (1, 3, 2)], u);
        let sc = LaplaceScorer(&c);
        assert_eq!(sc.score(u, s(1), s(2), None), 6.0 / 20.0);
        assert_eq!(sc.score(u, s(1), s(9), None), 1.0 / 20.0);
        assert_eq!(
            sc.score(SubtypeLabel::LossReactive, s(1), s(2), None),
            1.0 / 13.0
        );
    }

    #[test]
    fn fused_values_closed_form() {
        let a = fused_score(0.5, 1.0, 0.1, 0.1);
        let b = fused_score(0.5, 0.0, 0.15, 0.1);
        assert!((a - (0.5 + 0.5 * 1f64.tanh())).abs() < 1e-15);
        assert!((a - 0.8808).abs() < 5e-5);
        assert!((b - 0.5 * 1.5f64.tanh()).abs() < 1e-15);
        assert!((b - 0.4526).abs() < 5e-5);
    }

    fn cand(to: u8, adopt: f64, q: f64) -> Candidate {
        Candidate {
            to_state: s(to),
            support: 3,
            adoptability: adopt,
            norm_adoptability: 0.0,
            quality: q,
            fused: 0.0,
        }
    }

    #[test]
    fn degenerate_alphas_follow_one_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cands: Vec<Candidate> = (0..8)
            .map(|i| cand(i, rng.random_range(0.0..1.0), rng.random_range(0.001..0.5)))
            .collect();
        let mut by_adopt = cands.clone();
        by_adopt.sort_by(|a, b| b.adoptability.total_cmp(&a.adoptability));
        let mut by_q = cands.clone();
        by_q.sort_by(|a, b| b.quality.total_cmp(&a.quality));
        fuse_scores(&mut cands, 1.0, 0.1);
        assert_eq!(
            cands.iter().map(|c| c.to_state).collect::<Vec<_>>(),
            by_adopt.iter().map(|c| c.to_state).collect::<Vec<_>>()
        );
        fuse_scores(&mut cands, 0.0, 0.1);
        assert_eq!(
            cands.iter().map(|c| c.to_state).collect::<Vec<_>>(),
            by_q.iter().map(|c| c.to_state).collect::<Vec<_>>()
        );
    }

    #[test]
    fn normalization_is_shift_invariant_and_single_is_one() {
        let mut a = vec![cand(1, 0.2, 0.1), cand(2, 0.5, 0.05), cand(3, 0.3, 0.2)];
        let mut b: Vec<Candidate> = a
            .iter()
            .map(|c| Candidate {
                adoptability: c.adoptability + 7.0,
                ..c.clone()
            })
            .collect();
        fuse_scores(&mut a, 0.5, 0.1);
        fuse_scores(&mut b, 0.5, 0.1);
        assert_eq!(
            a.iter().map(|c| c.to_state).collect::<Vec<_>>(),
            b.iter().map(|c| c.to_state).collect::<Vec<_>>()
        );
        let mut one = vec![cand(4, 0.01, 0.1)];
        fuse_scores(&mut one, 0.5, 0.1);
        assert_eq!(one[0].norm_adoptability, 1.0);
    }

    #[test]
    fn ties_prefer_quality_then_lower_state() {
        let mut c = vec![cand(5, 0.3, 0.1), cand(2, 0.3, 0.1), cand(9, 0.3, 0.2)];
        // α = 1 and equal adoptability: every fused score is 1
        fuse_scores(&mut c, 1.0, 0.1);
        assert_eq!(
            c.iter().map(|c| c.to_state.0).collect::<Vec<_>>(),
            vec![9, 2, 5]
        );
    }

    fn parts(c: &TransitionCounts) -> FusionParts<'_> {
        FusionParts {
            counts: c,
            scorer: Box::leak(Box::new(LaplaceScorer(Box::leak(Box::new(c.clone()))))),
            theta: 0.5,
            alpha: 0.5,
            scale: 0.1,
        }
    }

    #[test]
    fn cascade_provenance() {
        let c = counts(&[(0, 1, 10), (0, 2, 3)], SubtypeLabel::Flex);
        let p = parts(&c);
        let q = || {
            let mut v = vec![-0.1; N_STATES];
            v[1] = 0.1;
            v[2] = 0.15;
            v
        };
        let r = decide(
            SubtypeLabel::Loyalist,
            s(0),
            None,
            || panic!("gate must not run"),
            q,
            &p,
        );
        assert_eq!(
            (r.decision, r.provenance, r.gate_prob),
            (Decision::Stay, Provenance::PersonaGate, None)
        );
        let r = decide(SubtypeLabel::LossReactive, s(0), None, || 0.3, q, &p);
        assert_eq!(r.provenance, Provenance::TimingGate);
        let r = decide(SubtypeLabel::LossReactive, s(0), None, || 0.9, q, &p);
        assert_eq!(r.provenance, Provenance::NoCandidates);
        let r = decide(SubtypeLabel::Flex, s(0), None, || 0.9, q, &p);
        assert_eq!(r.decision, Decision::Switch(s(1)));
        assert!((r.candidates[0].fused - 0.8808).abs() < 5e-5);
        assert_eq!(r.candidates[1].norm_adoptability, 0.0);
        assert!(r.candidates.iter().all(|c| c.to_state != s(0)));
    }

    #[test]
    fn noise_quality_selects_pure_adoptability() {
        // destination 1 is both the popular and the good one; quality is noise
        let u = SubtypeLabel::Flex;
        let c = counts(&[(0, 1, 20), (0, 2, 5)], u);
        let p = parts(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let items: Vec<TuningItem> = (0..200)
            .map(|i| {
                let to = if i % 2 == 0 { 1 } else { 2 };
                TuningItem {
                    subtype: u,
                    from_state: s(0),
                    gate_prob: 0.9,
                    quality: (0..N_STATES).map(|_| rng.random_range(0.01..0.3)).collect(),
                    is_switch: true,
                    to_state: s(to),
                    y_tq: if to == 1 { 0.2 } else { -0.2 },
                }
            })
            .collect();
        let choice = tune_alpha(&items, &[0.0, 1.0], &p);
        assert_eq!(choice.alpha, 1.0);
        assert!(!choice.degenerate);
    }

    #[test]
    fn flat_alpha_curve_ties_to_smallest_and_degenerate_falls_back() {
        let u = SubtypeLabel::Flex;
        let c = counts(&[(0, 1, 20)], u);
        let p = parts(&c);
        let item = |to: u8, y: f64| TuningItem {
            subtype: u,
            from_state: s(0),
            gate_prob: 0.9,
            quality: vec![0.1; N_STATES],
            is_switch: true,
            to_state: s(to),
            y_tq: y,
        };
        let items = vec![item(1, 0.1), item(3, -0.1)];
        assert_eq!(
            tune_alpha(&items, &FusionConfig::default().grid, &p).alpha,
            0.0
        );
        let none = tune_alpha(&[item(1, 0.1)], &[0.2, 0.7], &p);
        assert!(none.degenerate);
        assert_eq!(none.alpha, DEFAULT_ALPHA);
    }

    #[test]
    fn counts_round_trip_and_decision_json() {
        let c = counts(&[(0, 1, 20), (4, 12, 3)], SubtypeLabel::LossReactive);
        let r = FlatReader::parse(&c.to_flat(), "tqp-transition-counts", 1).unwrap();
        assert_eq!(TransitionCounts::from_flat(&r).unwrap(), c);
        assert_eq!(c.total_from(SubtypeLabel::LossReactive, s(0)), 20);
        let j = serde_json::to_value(Decision::Switch(s(4))).unwrap();
        assert_eq!(
            j,
            serde_json::json!({"decision": "switch", "target_state": 4})
        );
        assert_eq!(
            serde_json::to_value(Decision::Stay).unwrap(),
            serde_json::json!({"decision": "stay"})
        );
    }
}
