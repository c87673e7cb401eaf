//! Offline policy evaluation on logged test events: switch rate, SwitchGap,
//! Rec_TQP and Prec@1 for the baselines and the incremental pipeline.
//!
//! Prec@1 uses the observed transition's outcome even when a policy's
//! target differs from the player's actual destination. Logged data offers
//! no counterfactual, so this is an offline approximation.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archetype::{StateId, N_STATES};
use crate::error::{Error, Result};
use crate::flatfile::FlatWriter;
use crate::fusion::{decide, supported_targets, Decision, FusionParts, TransitionCounts};
use crate::heads::{approves, PredictorReport};
use crate::seed::derive_seed;
use crate::subtype::{persona_gate, GateDecision, SubtypeLabel};
use crate::transition::TransitionEvent;

pub const WR_THRESHOLD: f64 = 0.45;
pub const ORACLE_MARGIN: f64 = 0.02;

/// A test event with the model scores every policy may consult.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEvent {
    pub event: TransitionEvent,
    pub gate_prob: f64,
    /// `ŷ(from → s')` for every state.
    pub quality: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub approve: bool,
    pub target: Option<StateId>,
}

impl PolicyDecision {
    pub const STAY: Self = Self {
        approve: false,
        target: None,
    };

    pub fn switch(target: Option<StateId>) -> Self {
        Self {
            approve: true,
            target,
        }
    }
}

// ── Metrics ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub n_events: usize,
    pub n_approved: usize,
    pub switch_rate: Option<f64>,
    pub n_switchers: usize,
    /// `|approved ∩ actual switch|`
    pub n_approved_switchers: usize,
    pub switch_gap: Option<f64>,
    pub rec_tqp: Option<f64>,
    pub prec_at_1: Option<f64>,
}

/// Mean `y_tq` over approved actual switchers minus the mean over rejected
/// ones; `None` if either side is empty.
pub fn switch_gap(events: &[&TransitionEvent], approved: &[bool]) -> Option<f64> {
    let (mut sa, mut na, mut sr, mut nr) = (0.0, 0usize, 0.0, 0usize);
    for (e, &a) in events.iter().zip(approved) {
        if !e.is_switch() {
            continue;
        }
        if a {
            sa += e.y_tq;
            na += 1;
        } else {
            sr += e.y_tq;
            nr += 1;
        }
    }
    (na > 0 && nr > 0).then(|| sa / na as f64 - sr / nr as f64)
}

/// Rec_TQP scores the policy's target, or the actual destination when the
/// policy names none.
pub fn policy_metrics(events: &[&ScoredEvent], decisions: &[PolicyDecision]) -> PolicyMetrics {
    assert_eq!(events.len(), decisions.len());
    let n = events.len();
    let n_approved = decisions.iter().filter(|d| d.approve).count();
    let mut q_sum = 0.0;
    let mut hits = 0usize;
    let mut n_as = 0usize;
    for (se, d) in events.iter().zip(decisions) {
        let e = &se.event;
        if d.approve && e.is_switch() {
            n_as += 1;
            q_sum += se.quality[d.target.unwrap_or(e.to_state).index()];
            hits += usize::from(e.y_tq > 0.0);
        }
    }
    let evs: Vec<&TransitionEvent> = events.iter().map(|s| &s.event).collect();
    let approved: Vec<bool> = decisions.iter().map(|d| d.approve).collect();
    PolicyMetrics {
        n_events: n,
        n_approved,
        switch_rate: (n > 0).then(|| n_approved as f64 / n as f64),
        n_switchers: evs.iter().filter(|e| e.is_switch()).count(),
        n_approved_switchers: n_as,
        switch_gap: switch_gap(&evs, &approved),
        rec_tqp: (n_as > 0).then(|| q_sum / n_as as f64),
        prec_at_1: (n_as > 0).then(|| hits as f64 / n_as as f64),
    }
}

// ── Baseline auxiliaries ────────────────────────────────────────────────

/// One player's training-segment matches as `(state, won)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerStates {
    pub player_id: String,
    pub matches: Vec<(StateId, bool)>,
}

/// Rank-`k` factorization of the player × state win-rate matrix by
/// alternating least squares over observed cells, centered on the global
/// mean.
#[derive(Debug, Clone, PartialEq)]
pub struct CfModel {
    pub global_mean: f64,
    pub players: HashMap<String, usize>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlsConfig {
    pub rank: usize,
    pub iterations: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            iterations: 20,
            lambda: 0.1,
            seed: 0,
        }
    }
}

fn ridge_solve(basis: &DMatrix<f64>, obs: &[(usize, f64)], lambda: f64) -> DVector<f64> {
    let k = basis.ncols();
    let mut a = DMatrix::<f64>::identity(k, k) * lambda;
    let mut b = DVector::<f64>::zeros(k);
    for &(j, r) in obs {
        let row = basis.row(j).transpose();
        a += &row * row.transpose();
        b += row * r;
    }
    a.cholesky()
        .map_or_else(|| DVector::zeros(k), |c| c.solve(&b))
}

impl CfModel {
    pub fn fit(players: &[PlayerStates], cfg: &AlsConfig) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(players.len());
        let mut index = HashMap::new();
        let (mut total, mut n) = (0.0, 0usize);
        for (i, p) in players.iter().enumerate() {
            index.insert(p.player_id.clone(), i);
            let mut wins = [0usize; N_STATES];
            let mut cnt = [0usize; N_STATES];
            for &(s, w) in &p.matches {
                cnt[s.index()] += 1;
                wins[s.index()] += usize::from(w);
            }
            let obs: Vec<(usize, f64)> = (0..N_STATES)
                .filter(|&s| cnt[s] > 0)
                .map(|s| (s, wins[s] as f64 / cnt[s] as f64))
                .collect();
            for &(_, r) in &obs {
                total += r;
                n += 1;
            }
            rows.push(obs);
        }
        let global_mean = if n > 0 { total / n as f64 } else { 0.5 };
        for obs in &mut rows {
            for o in obs.iter_mut() {
                o.1 -= global_mean;
            }
        }
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); N_STATES];
        for (i, obs) in rows.iter().enumerate() {
            for &(s, r) in obs {
                cols[s].push((i, r));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "als-init"));
        let mut q = DMatrix::from_fn(N_STATES, cfg.rank, |_, _| rng.random_range(-0.1..0.1));
        let mut p = DMatrix::zeros(players.len(), cfg.rank);
        for _ in 0..cfg.iterations {
            for (i, obs) in rows.iter().enumerate() {
                p.set_row(i, &ridge_solve(&q, obs, cfg.lambda).transpose());
            }
            for (s, obs) in cols.iter().enumerate() {
                q.set_row(s, &ridge_solve(&p, obs, cfg.lambda).transpose());
            }
        }
        Self {
            global_mean,
            players: index,
            p,
            q,
        }
    }

    pub fn predict_row(&self, player_id: &str) -> Option<Vec<f64>> {
        let i = *self.players.get(player_id)?;
        let pr = self.p.row(i);
        Some(
            (0..N_STATES)
                .map(|s| self.global_mean + pr.dot(&self.q.row(s)))
                .collect(),
        )
    }
}

/// Auxiliary fitted state for the non-learned baselines, all from training data.
#[derive(Debug, Clone)]
pub struct BaselineAux {
    /// Pooled match win rate per state.
    pub state_winrate: [Option<f64>; N_STATES],
    pub cf: CfModel,
    /// Most frequent training destination per `(player, from)`.
    pub last_k: HashMap<(String, StateId), StateId>,
    pub counts: TransitionCounts,
    pub seed: u64,
}

impl BaselineAux {
    pub fn fit(
        players: &[PlayerStates],
        train_events: &[TransitionEvent],
        als: &AlsConfig,
        seed: u64,
    ) -> Self {
        let mut wins = [0usize; N_STATES];
        let mut cnt = [0usize; N_STATES];
        for p in players {
            for &(s, w) in &p.matches {
                cnt[s.index()] += 1;
                wins[s.index()] += usize::from(w);
            }
        }
        let state_winrate =
            std::array::from_fn(|s| (cnt[s] > 0).then(|| wins[s] as f64 / cnt[s] as f64));
        let mut freq: BTreeMap<(String, StateId), [usize; N_STATES]> = BTreeMap::new();
        for e in train_events
            .iter()
            .filter(|e| e.is_switch() && e.is_cross_state())
        {
            freq.entry((e.player_id.clone(), e.from_state))
                .or_insert([0; N_STATES])[e.to_state.index()] += 1;
        }
        let last_k = freq
            .into_iter()
            .map(|(key, c)| {
                // mode; ties go to the lower state id
                let best = (0..N_STATES).fold(0, |b, s| if c[s] > c[b] { s } else { b });
                (key, StateId(best as u8))
            })
            .collect();
        Self {
            state_winrate,
            cf: CfModel::fit(players, als),
            last_k,
            counts: TransitionCounts::from_events(train_events),
            seed,
        }
    }
}

// ── Policies ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    AlwaysStay,
    AlwaysSwitch,
    WrThreshold,
    PopulationOracle,
    CollaborativeFiltering,
    LastK,
    /// (a) adoptability only, approve everything
    AdoptabilityOnly,
    /// (b) + PersonaGate
    WithPersonaGate,
    /// (c) + TimingGate
    WithTimingGate,
    /// (d) + TQP fusion
    FullPipeline,
}

impl PolicyKind {
    pub const BASELINES: [PolicyKind; 6] = [
        PolicyKind::AlwaysStay,
        PolicyKind::AlwaysSwitch,
        PolicyKind::WrThreshold,
        PolicyKind::PopulationOracle,
        PolicyKind::CollaborativeFiltering,
        PolicyKind::LastK,
    ];
    pub const ABLATION: [PolicyKind; 4] = [
        PolicyKind::AdoptabilityOnly,
        PolicyKind::WithPersonaGate,
        PolicyKind::WithTimingGate,
        PolicyKind::FullPipeline,
    ];

    pub fn all() -> impl Iterator<Item = PolicyKind> {
        Self::BASELINES.into_iter().chain(Self::ABLATION)
    }

    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::AlwaysStay => "Always-Stay",
            PolicyKind::AlwaysSwitch => "Always-Switch",
            PolicyKind::WrThreshold => "WR-Threshold",
            PolicyKind::PopulationOracle => "Population Oracle",
            PolicyKind::CollaborativeFiltering => "Collaborative Filtering",
            PolicyKind::LastK => "Last-K",
            PolicyKind::AdoptabilityOnly => "(a) Adoptability only",
            PolicyKind::WithPersonaGate => "(b) + PersonaGate",
            PolicyKind::WithTimingGate => "(c) + TimingGate",
            PolicyKind::FullPipeline => "(d) + TQP fusion",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            PolicyKind::AlwaysStay => "always_stay",
            PolicyKind::AlwaysSwitch => "always_switch",
            PolicyKind::WrThreshold => "wr_threshold",
            PolicyKind::PopulationOracle => "population_oracle",
            PolicyKind::CollaborativeFiltering => "collaborative_filtering",
            PolicyKind::LastK => "last_k",
            PolicyKind::AdoptabilityOnly => "ablation_a",
            PolicyKind::WithPersonaGate => "ablation_b",
            PolicyKind::WithTimingGate => "ablation_c",
            PolicyKind::FullPipeline => "ablation_d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::all().find(|k| k.key() == s)
    }
}

/// Parses `all` or a comma-separated list of policy keys.
pub fn parse_policy_list(s: &str) -> Result<Vec<PolicyKind>> {
    if s.trim() == "all" {
        return Ok(PolicyKind::all().collect());
    }
    s.split(',')
        .map(|k| {
            PolicyKind::parse(k.trim())
                .ok_or_else(|| Error::Config(format!("unknown policy `{k}`")))
        })
        .collect()
}

fn adoptability_target(e: &TransitionEvent, counts: &TransitionCounts) -> Option<StateId> {
    let mut best: Option<(StateId, usize)> = None;
    // Laplace scores share a denominator, so the argmax is the largest count
    for s in supported_targets(e.subtype, e.from_state, counts) {
        let c = counts.count(e.subtype, e.from_state, s);
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((s, c));
        }
    }
    best.map(|(s, _)| s)
}

pub fn run_policy(
    kind: PolicyKind,
    events: &[&ScoredEvent],
    aux: &BaselineAux,
    pipe: &FusionParts<'_>,
) -> Vec<PolicyDecision> {
    events
        .iter()
        .map(|se| {
            let e = &se.event;
            match kind {
                PolicyKind::AlwaysStay => PolicyDecision::STAY,
                PolicyKind::AlwaysSwitch => PolicyDecision::switch(None),
                PolicyKind::WrThreshold => {
                    if e.wr_current < WR_THRESHOLD {
                        let mut pool = supported_targets(e.subtype, e.from_state, &aux.counts);
                        if pool.is_empty() {
                            pool = StateId::all().filter(|&s| s != e.from_state).collect();
                        }
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                            aux.seed,
                            &format!("wr-threshold-{}", e.id),
                        ));
                        PolicyDecision::switch(pool.choose(&mut rng).copied())
                    } else {
                        PolicyDecision::STAY
                    }
                }
                PolicyKind::PopulationOracle => {
                    let best = StateId::all()
                        .filter_map(|s| aux.state_winrate[s.index()].map(|w| (s, w)))
                        .fold(None::<(StateId, f64)>, |b, (s, w)| match b {
                            Some((_, bw)) if bw >= w => b,
                            _ => Some((s, w)),
                        });
                    match (best, aux.state_winrate[e.from_state.index()]) {
                        (Some((s, bw)), Some(cw)) if cw < bw - ORACLE_MARGIN => {
                            PolicyDecision::switch(Some(s))
                        }
                        _ => PolicyDecision::STAY,
                    }
                }
                PolicyKind::CollaborativeFiltering => match aux.cf.predict_row(&e.player_id) {
                    Some(row) => {
                        let best =
                            (0..N_STATES).fold(0, |b, s| if row[s] > row[b] { s } else { b });
                        if best != e.from_state.index()
                            && row[best] - row[e.from_state.index()] > 0.0
                        {
                            PolicyDecision::switch(Some(StateId(best as u8)))
                        } else {
                            PolicyDecision::STAY
                        }
                    }
                    None => PolicyDecision::STAY,
                },
                PolicyKind::LastK => PolicyDecision::switch(
                    aux.last_k
                        .get(&(e.player_id.clone(), e.from_state))
                        .copied(),
                ),
                PolicyKind::AdoptabilityOnly => {
                    PolicyDecision::switch(adoptability_target(e, &aux.counts))
                }
                PolicyKind::WithPersonaGate => match persona_gate(e.subtype) {
                    GateDecision::Forward => {
                        PolicyDecision::switch(adoptability_target(e, &aux.counts))
                    }
                    GateDecision::Stay => PolicyDecision::STAY,
                },
                PolicyKind::WithTimingGate => {
                    if persona_gate(e.subtype) == GateDecision::Forward
                        && approves(se.gate_prob, pipe.theta)
                    {
                        PolicyDecision::switch(adoptability_target(e, &aux.counts))
                    } else {
                        PolicyDecision::STAY
                    }
                }
                PolicyKind::FullPipeline => {
                    let rec = decide(
                        e.subtype,
                        e.from_state,
                        None,
                        || se.gate_prob,
                        || se.quality.clone(),
                        pipe,
                    );
                    match rec.decision {
                        Decision::Switch(t) => PolicyDecision::switch(Some(t)),
                        Decision::Stay => PolicyDecision::STAY,
                    }
                }
            }
        })
        .collect()
}

// ── Report ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub policy: PolicyKind,
    pub metrics: PolicyMetrics,
    pub by_subtype: Vec<(SubtypeLabel, PolicyMetrics)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_events: usize,
    pub rows: Vec<PolicyRow>,
    /// TQP and the Always-Zero predictor on test switch events.
    pub predictors: Vec<(String, PredictorReport)>,
    pub theta: f64,
    pub alpha: f64,
}

/// Subtypes that policies are evaluated on.
pub const EVAL_SUBTYPES: [SubtypeLabel; 2] = [SubtypeLabel::LossReactive, SubtypeLabel::Flex];

pub fn evaluate_policies(
    events: &[ScoredEvent],
    policies: &[PolicyKind],
    aux: &BaselineAux,
    pipe: &FusionParts<'_>,
) -> Vec<PolicyRow> {
    let evs: Vec<&ScoredEvent> = events
        .iter()
        .filter(|e| EVAL_SUBTYPES.contains(&e.event.subtype))
        .collect();
    let decisions: Vec<(PolicyKind, Vec<PolicyDecision>)> = policies
        .par_iter()
        .map(|&k| (k, run_policy(k, &evs, aux, pipe)))
        .collect();
    decisions
        .into_iter()
        .map(|(policy, d)| {
            let by_subtype = EVAL_SUBTYPES
                .iter()
                .map(|&u| {
                    let (ev, dv): (Vec<&ScoredEvent>, Vec<PolicyDecision>) = evs
                        .iter()
                        .zip(&d)
                        .filter(|(e, _)| e.event.subtype == u)
                        .map(|(e, d)| (*e, *d))
                        .unzip();
                    (u, policy_metrics(&ev, &dv))
                })
                .collect();
            PolicyRow {
                policy,
                metrics: policy_metrics(&evs, &d),
                by_subtype,
            }
        })
        .collect()
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "---".to_string(), |v| format!("{:.1}", v * 100.0))
}

fn signed_pp(v: Option<f64>) -> String {
    v.map_or_else(|| "---".to_string(), |v| format!("{:+.1}", v * 100.0))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

impl EvalReport {
    pub fn row(&self, kind: PolicyKind) -> Option<&PolicyRow> {
        self.rows.iter().find(|r| r.policy == kind)
    }

    /// Aligned text table; percentages and percentage points to one decimal.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let header = |out: &mut String| {
            let _ = writeln!(
                out,
                "{:<26} {:>7} {:>10} {:>9} {:>8}",
                "Policy", "Sw%", "SwitchGap", "Rec_TQP", "Prec@1"
            );
            let _ = writeln!(out, "{}", "-".repeat(64));
        };
        let line = |out: &mut String, name: &str, m: &PolicyMetrics| {
            let _ = writeln!(
                out,
                "{:<26} {:>7} {:>10} {:>9} {:>8}",
                name,
                pct(m.switch_rate),
                signed_pp(m.switch_gap),
                signed_pp(m.rec_tqp),
                pct(m.prec_at_1)
            );
        };
        if !self.rows.is_empty() {
            let _ = writeln!(
                out,
                "Policy evaluation on {} test events (subtypes 1 and 2)",
                self.n_events
            );
            let _ = writeln!(out, "theta = {}, alpha = {}\n", self.theta, self.alpha);
            header(&mut out);
            for r in self
                .rows
                .iter()
                .filter(|r| PolicyKind::BASELINES.contains(&r.policy))
            {
                line(&mut out, r.policy.label(), &r.metrics);
            }
            let _ = writeln!(out, "{}", "-".repeat(64));
            for r in self
                .rows
                .iter()
                .filter(|r| PolicyKind::ABLATION.contains(&r.policy))
            {
                line(&mut out, r.policy.label(), &r.metrics);
            }
            let _ = writeln!(out, "\nPer-subtype breakdown\n");
            header(&mut out);
            for r in &self.rows {
                for (u, m) in &r.by_subtype {
                    line(&mut out, &format!("{} / {}", r.policy.key(), u.index()), m);
                }
            }
        }
        if !self.predictors.is_empty() {
            let _ = writeln!(out, "\nQuality predictors on test switch events\n");
            let _ = writeln!(
                out,
                "{:<12} {:>7} {:>8} {:>7} {:>7} {:>7} {:>8} {:>20}",
                "Predictor", "MAE", "DirAcc", "Prec", "Recall", "F1", "Gap(pp)", "95% CI (pp)"
            );
            for (name, p) in &self.predictors {
                let ci = p.gap_ci.map_or_else(
                    || "---".to_string(),
                    |(lo, hi)| format!("[{:+.2}, {:+.2}]", lo * 100.0, hi * 100.0),
                );
                let _ = writeln!(
                    out,
                    "{:<12} {:>7.4} {:>8.3} {:>7} {:>7} {:>7} {:>8} {:>20}",
                    name,
                    p.mae,
                    p.direction_accuracy,
                    p.precision.map_or("---".into(), |v| format!("{v:.3}")),
                    p.recall.map_or("---".into(), |v| format!("{v:.3}")),
                    p.f1.map_or("---".into(), |v| format!("{v:.3}")),
                    p.gap.map_or("---".into(), |v| format!("{:+.2}", v * 100.0)),
                    ci
                );
            }
        }
        let _ = writeln!(
            out,
            "\nPrec@1 scores the observed transition's outcome even when the policy's target differs (no counterfactual correction)."
        );
        out
    }

    pub fn to_flat(&self) -> String {
        let mut w = FlatWriter::new("tqp-eval-report", 1);
        w.comment("policy\tkey\tsubtype\tn_events\tn_approved\tswitch_rate\tn_switchers\tn_approved_switchers\tswitch_gap\trec_tqp\tprec_at_1");
        w.record("n_events", [self.n_events]);
        w.record("theta", [self.theta]);
        w.record("alpha", [self.alpha]);
        let rec = |w: &mut FlatWriter, key: &str, sub: &str, m: &PolicyMetrics| {
            w.record(
                "policy",
                [
                    key.to_string(),
                    sub.to_string(),
                    m.n_events.to_string(),
                    m.n_approved.to_string(),
                    opt(m.switch_rate),
                    m.n_switchers.to_string(),
                    m.n_approved_switchers.to_string(),
                    opt(m.switch_gap),
                    opt(m.rec_tqp),
                    opt(m.prec_at_1),
                ],
            );
        };
        for r in &self.rows {
            rec(&mut w, r.policy.key(), "all", &r.metrics);
            for (u, m) in &r.by_subtype {
                rec(&mut w, r.policy.key(), &u.index().to_string(), m);
            }
        }
        for (name, p) in &self.predictors {
            w.record(
                "predictor",
                [
                    name.clone(),
                    p.n.to_string(),
                    p.mae.to_string(),
                    p.direction_accuracy.to_string(),
                    opt(p.precision),
                    opt(p.recall),
                    opt(p.f1),
                    opt(p.gap),
                    opt(p.gap_ci.map(|c| c.0)),
                    opt(p.gap_ci.map(|c| c.1)),
                    opt(p.negative_confirmation),
                ],
            );
        }
        w.finish()
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let t = dir.join("report.txt");
        std::fs::write(&t, self.render_table()).map_err(|e| Error::io(&t, e))?;
        let f = dir.join("report.tsv");
        std::fs::write(&f, self.to_flat()).map_err(|e| Error::io(&f, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::LaplaceScorer;
    use crate::matchlog::Segment;
    use crate::transition::{wr_bucket, Action};
    use crate::window::TransitionType;

    pub(crate) fn event(
        id: usize,
        player: &str,
        u: SubtypeLabel,
        from: u8,
        to: Option<u8>,
        y: f64,
    ) -> TransitionEvent {
        let to_state = StateId(to.unwrap_or(from));
        TransitionEvent {
            id,
            player_id: player.into(),
            segment: Segment::Test,
            start: id,
            boundary: id + 10,
            action: if to.is_some() {
                Action::Switch
            } else {
                Action::Stay
            },
            transition: TransitionType::classify(to.is_some(), StateId(from), to_state),
            from_state: StateId(from),
            to_state,
            wins_current: 4,
            k: 10,
            wins_next: 5,
            n_next: 10,
            wr_current: 0.4,
            wr_next: 0.5,
            y_tq: y,
            subtype: u,
            bucket: wr_bucket(0.4),
            baseline: None,
            net: None,
        }
    }

    fn scored(e: TransitionEvent) -> ScoredEvent {
        ScoredEvent {
            event: e,
            gate_prob: 0.5,
            quality: vec![0.01; N_STATES],
        }
    }

    #[test]
    fn switch_gap_hand_example() {
        let u = SubtypeLabel::Flex;
        let evs = [
            event(0, "a", u, 0, Some(1), 0.1),
            event(1, "a", u, 0, Some(1), 0.2),
            event(2, "a", u, 0, Some(2), -0.1),
            event(3, "a", u, 0, Some(2), 0.0),
        ];
        let refs: Vec<&TransitionEvent> = evs.iter().collect();
        let g = switch_gap(&refs, &[true, true, false, false]).unwrap();
        assert!((g - 0.2).abs() < 1e-15);
        assert_eq!(switch_gap(&refs, &[true; 4]), None);
    }

    #[test]
    fn stays_do_not_move_switch_gap() {
        let u = SubtypeLabel::Flex;
        let mut evs = vec![
            event(0, "a", u, 0, Some(1), 0.1),
            event(1, "a", u, 0, Some(1), -0.3),
        ];
        let approved = vec![true, false];
        let base = switch_gap(&evs.iter().collect::<Vec<_>>(), &approved);
        evs.push(event(2, "a", u, 0, None, 0.9));
        evs.push(event(3, "a", u, 0, None, -0.9));
        let more = switch_gap(&evs.iter().collect::<Vec<_>>(), &[true, false, true, false]);
        assert_eq!(base, more);
    }

    #[test]
    fn always_policies() {
        let u = SubtypeLabel::LossReactive;
        let evs: Vec<ScoredEvent> = (0..6)
            .map(|i| {
                scored(event(
                    i,
                    "a",
                    u,
                    0,
                    (i % 2 == 0).then_some(1),
                    i as f64 / 10.0 - 0.2,
                ))
            })
            .collect();
        let refs: Vec<&ScoredEvent> = evs.iter().collect();
        let stay = policy_metrics(&refs, &[PolicyDecision::STAY; 6]);
        assert_eq!(stay.switch_rate, Some(0.0));
        assert_eq!(
            (stay.switch_gap, stay.rec_tqp, stay.prec_at_1),
            (None, None, None)
        );
        let all = policy_metrics(&refs, &[PolicyDecision::switch(None); 6]);
        assert_eq!(all.switch_rate, Some(1.0));
        assert_eq!(all.switch_gap, None);
        assert_eq!(all.n_approved_switchers, 3);
    }

    fn aux_for(train: &[TransitionEvent], players: &[PlayerStates]) -> BaselineAux {
        BaselineAux::fit(players, train, &AlsConfig::default(), 3)
    }

    fn pipe(c: &TransitionCounts) -> FusionParts<'_> {
        FusionParts {
            counts: c,
            scorer: Box::leak(Box::new(LaplaceScorer(Box::leak(Box::new(c.clone()))))),
            theta: 0.5,
            alpha: 0.5,
            scale: 0.1,
        }
    }

    #[test]
    fn wr_threshold_boundary_and_last_k_mode() {
        let u = SubtypeLabel::Flex;
        let mut train = Vec::new();
        for (i, to) in [2u8, 2, 2, 5].iter().enumerate() {
            train.push(event(i, "p", u, 0, Some(*to), 0.0));
        }
        let aux = aux_for(&train, &[]);
        let mut lo = scored(event(10, "p", u, 0, None, 0.0));
        lo.event.wr_current = 0.44;
        let mut at = lo.clone();
        at.event.wr_current = 0.45;
        let c = TransitionCounts::default();
        let p = pipe(&c);
        let d = run_policy(PolicyKind::WrThreshold, &[&lo, &at], &aux, &p);
        assert!(d[0].approve && !d[1].approve);
        assert_eq!(d[0].target, Some(StateId(2)));
        let d = run_policy(PolicyKind::LastK, &[&lo], &aux, &p);
        assert_eq!(d[0], PolicyDecision::switch(Some(StateId(2))));
    }

    #[test]
    fn population_oracle_and_cf() {
        let players: Vec<PlayerStates> = (0..30)
            .map(|i| PlayerStates {
                player_id: format!("p{i}"),
                matches: (0..40)
                    .map(|t| {
                        let s = if t % 2 == 0 { 3 } else { 7 };
                        (StateId(s), if s == 3 { t % 10 != 0 } else { t % 4 == 1 })
                    })
                    .collect(),
            })
            .collect();
        let aux = aux_for(&[], &players);
        let c = TransitionCounts::default();
        let p = pipe(&c);
        let e = scored(event(0, "p1", SubtypeLabel::Flex, 7, None, 0.0));
        let d = run_policy(PolicyKind::PopulationOracle, &[&e], &aux, &p);
        assert_eq!(d[0], PolicyDecision::switch(Some(StateId(3))));
        let d = run_policy(PolicyKind::CollaborativeFiltering, &[&e], &aux, &p);
        assert_eq!(d[0], PolicyDecision::switch(Some(StateId(3))));
        let row = aux.cf.predict_row("p1").unwrap();
        assert!(row[3] > row[7]);
        let e3 = scored(event(1, "p1", SubtypeLabel::Flex, 3, None, 0.0));
        assert_eq!(
            run_policy(PolicyKind::PopulationOracle, &[&e3], &aux, &p)[0],
            PolicyDecision::STAY
        );
    }

    #[test]
    fn subtype_sums_recombine_to_pooled() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let evs: Vec<ScoredEvent> = (0..300)
            .map(|i| {
                let u = if rng.random_bool(0.4) {
                    SubtypeLabel::LossReactive
                } else {
                    SubtypeLabel::Flex
                };
                let to = rng.random_bool(0.3).then(|| rng.random_range(1..13u8));
                let mut s = scored(event(i, "p", u, 0, to, rng.random_range(-0.5..0.5)));
                s.gate_prob = rng.random_range(0.0..1.0);
                s
            })
            .collect();
        let c = TransitionCounts::default();
        let aux = aux_for(&[], &[]);
        let rows = evaluate_policies(&evs, &[PolicyKind::WithTimingGate], &aux, &pipe(&c));
        let r = &rows[0];
        let approved_mean =
            |m: &PolicyMetrics| m.prec_at_1.map(|p| p * m.n_approved_switchers as f64);
        let pooled: f64 = r
            .by_subtype
            .iter()
            .filter_map(|(_, m)| approved_mean(m))
            .sum();
        assert_eq!(
            r.metrics.n_approved_switchers,
            r.by_subtype
                .iter()
                .map(|(_, m)| m.n_approved_switchers)
                .sum::<usize>()
        );
        assert!((pooled - approved_mean(&r.metrics).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn policy_keys_round_trip() {
        for k in PolicyKind::all() {
            assert_eq!(PolicyKind::parse(k.key()), Some(k));
        }
        assert_eq!(parse_policy_list("all").unwrap().len(), 10);
        assert!(parse_policy_list("last_k,nope").is_err());
    }

    #[test]
    fn render_uses_dashes_for_undefined() {
        let m = PolicyMetrics {
            n_events: 4,
            n_approved: 4,
            switch_rate: Some(1.0),
            n_switchers: 2,
            n_approved_switchers: 2,
            switch_gap: None,
            rec_tqp: Some(0.0123),
            prec_at_1: Some(0.5),
        };
        let rep = EvalReport {
            n_events: 4,
            rows: vec![PolicyRow {
                policy: PolicyKind::AlwaysSwitch,
                metrics: m,
                by_subtype: vec![],
            }],
            predictors: vec![],
            theta: 0.5,
            alpha: 0.5,
        };
        let t = rep.render_table();
        let line = t.lines().find(|l| l.starts_with("Always-Switch")).unwrap();
        assert!(
            line.contains("100.0")
                && line.contains("---")
                && line.contains("+1.2")
                && line.contains("50.0")
        );
    }
}
