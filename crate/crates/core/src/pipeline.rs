//! End-to-end run: filters and splits, archetypes, subtypes, encoder,
//! events and labels, decision heads, fusion, and the evaluation report.
//!
//! [`Models`] is the frozen bundle the service loads; [`Models::advise`] is
//! the offline recommendation for a match history and the reference the
//! service must reproduce.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::archetype::{
    deck_features, fit_archetypes, ArchetypeFitConfig, ArchetypeModel, StateId, N_STATES,
};
use crate::cluster::subsample_indices;
use crate::encoder::{pretrain, user_vectors, Encoder, EncoderConfig, TrainReport};
use crate::error::{Error, Result};
use crate::fusion::{
    tune_alpha, AlphaChoice, FusionConfig, FusionParts, LaplaceScorer, Recommendation, Recommender,
    TransitionCounts, TuningItem,
};
use crate::heads::{
    evaluate_predictor, gate_features, quality_features, select_threshold, stack_rows,
    train_quality, train_timing_gate, ContextFeatures, GateModel, HeadConfig, HeadEpoch,
    PredictorReport, QualityModel, ThresholdChoice,
};
use crate::matchlog::{
    apply_filters, make_splits, Catalog, Deck, FilterReport, MatchRecord, PlayerHistory, Segment,
    SplitAssignment, DEFAULT_SPLIT, MIN_MATCHES,
};
use crate::policyeval::{
    evaluate_policies, AlsConfig, BaselineAux, EvalReport, PlayerStates, PolicyKind, ScoredEvent,
    EVAL_SUBTYPES,
};
use crate::seed::derive_seed;
use crate::subtype::{
    behavior_profile, fit_subtypes, persona_gate, write_label_table, GateDecision, LabelRow,
    SubtypeLabel, SubtypeModel,
};
use crate::transition::{
    attach_net, build_timing_labels, extract_events, save_events, save_labels, ExtractReport,
    PlayerInput, StayBaselineTable, TrainingMix, TransitionEvent, DEFAULT_MIN_SUPPORT,
};
use crate::window::{build_window, extract_windows, Window, DEFAULT_K, N_MASTERY};

/// Histories shorter than this get the provisional (Flex) subtype.
pub const SUBTYPE_MIN_MATCHES: usize = MIN_MATCHES;
pub const PROVISIONAL_SUBTYPE: SubtypeLabel = SubtypeLabel::Flex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub k: usize,
    pub split: (f64, f64, f64),
    /// Cap on distinct decks used to fit the archetype clustering.
    pub archetype_sample: usize,
    pub archetype_restarts: usize,
    pub encoder: EncoderConfig,
    pub gate: HeadConfig,
    pub quality: HeadConfig,
    pub fusion: FusionConfig,
    pub baseline_min_support: usize,
    pub max_approval_rate: f64,
    pub min_approved_switchers: usize,
    pub bootstrap_resamples: usize,
}

impl PipelineConfig {
    /// Published model sizes.
    pub fn full(seed: u64) -> Self {
        Self {
            seed,
            k: DEFAULT_K,
            split: DEFAULT_SPLIT,
            archetype_sample: 20_000,
            archetype_restarts: 50,
            encoder: EncoderConfig {
                seed,
                ..EncoderConfig::default()
            },
            gate: HeadConfig {
                seed: derive_seed(seed, "gate"),
                ..HeadConfig::default()
            },
            quality: HeadConfig {
                seed: derive_seed(seed, "quality"),
                ..HeadConfig::default()
            },
            fusion: FusionConfig::default(),
            baseline_min_support: DEFAULT_MIN_SUPPORT,
            max_approval_rate: 0.15,
            min_approved_switchers: 10,
            bootstrap_resamples: 10_000,
        }
    }

    /// Reduced widths and a capped encoder sample for single-core machines.
    pub fn desk(seed: u64) -> Self {
        let full = Self::full(seed);
        Self {
            archetype_sample: 8_000,
            archetype_restarts: 20,
            encoder: EncoderConfig {
                seed,
                max_train_windows: Some(40_000),
                ..EncoderConfig::desk()
            },
            gate: HeadConfig {
                seed: full.gate.seed,
                ..HeadConfig::desk()
            },
            quality: HeadConfig {
                seed: full.quality.seed,
                ..HeadConfig::desk()
            },
            ..full
        }
    }

    /// Seconds-scale run for tests and demos on small corpora.
    pub fn smoke(seed: u64) -> Self {
        let desk = Self::desk(seed);
        let head = |seed| HeadConfig {
            hidden: 16,
            n_layers: 2,
            epochs: 4,
            seed,
            ..HeadConfig::default()
        };
        Self {
            archetype_sample: 2_000,
            archetype_restarts: 4,
            encoder: EncoderConfig {
                epochs: 2,
                max_train_windows: Some(5_000),
                ..desk.encoder
            },
            gate: head(desk.gate.seed),
            quality: head(desk.quality.seed),
            bootstrap_resamples: 500,
            ..desk
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "full" => Ok(Self::full(seed)),
            "desk" => Ok(Self::desk(seed)),
            "smoke" => Ok(Self::smoke(seed)),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected full, desk or smoke)"
            ))),
        }
    }
}

// ── Stages ──────────────────────────────────────────────────────────────

/// Clusters distinct decks; deck order is canonical so the sample is
/// deterministic.
pub fn fit_archetype_stage(
    catalog: &Catalog,
    histories: &[PlayerHistory],
    sample: usize,
    restarts: usize,
    seed: u64,
) -> Result<ArchetypeModel> {
    let decks: BTreeSet<&Deck> = histories
        .iter()
        .flat_map(|h| h.matches.iter().map(|m| &m.deck))
        .collect();
    let decks: Vec<&Deck> = decks.into_iter().collect();
    let feats = subsample_indices(decks.len(), sample)
        .into_iter()
        .map(|i| deck_features(decks[i], catalog))
        .collect::<Result<Vec<_>>>()?;
    info!(
        distinct = decks.len(),
        used = feats.len(),
        "fitting archetypes"
    );
    fit_archetypes(
        &feats,
        &ArchetypeFitConfig {
            restarts,
            ..ArchetypeFitConfig::new(seed)
        },
    )
}

/// State of every match, memoized per distinct deck.
pub fn assign_states(
    model: &ArchetypeModel,
    catalog: &Catalog,
    histories: &[PlayerHistory],
) -> Result<Vec<Vec<StateId>>> {
    let mut memo: HashMap<&Deck, StateId> = HashMap::new();
    histories
        .iter()
        .map(|h| {
            h.matches
                .iter()
                .map(|m| {
                    if let Some(&s) = memo.get(&m.deck) {
                        return Ok(s);
                    }
                    let s = model.assign(&m.deck, catalog)?;
                    memo.insert(&m.deck, s);
                    Ok(s)
                })
                .collect()
        })
        .collect()
}

/// Subtypes from training-segment behavior only.
pub fn fit_subtype_stage(
    histories: &[PlayerHistory],
    splits: &SplitAssignment,
    seed: u64,
) -> Result<(SubtypeModel, Vec<LabelRow>)> {
    let profiles: Vec<_> = histories
        .iter()
        .map(|h| {
            let r = splits
                .get(&h.player_id)
                .map_or(0..h.len(), |b| b.range(Segment::Train));
            behavior_profile(&h.matches[r])
        })
        .collect();
    let fit = fit_subtypes(&profiles, seed)?;
    let rows = histories
        .iter()
        .zip(&fit.labels)
        .zip(&profiles)
        .map(|((h, &label), &profile)| LabelRow {
            player_id: h.player_id.clone(),
            label,
            profile,
        })
        .collect();
    Ok((fit.model, rows))
}

pub fn segment_windows(
    catalog: &Catalog,
    histories: &[PlayerHistory],
    states: &[Vec<StateId>],
    labels: &[SubtypeLabel],
    splits: &SplitAssignment,
    segment: Segment,
    k: usize,
) -> Vec<Window> {
    histories
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, h)| {
            let range = splits.get(&h.player_id).map_or(0..0, |b| b.range(segment));
            extract_windows(h, &states[i], catalog, Some(labels[i]), range, k)
        })
        .collect()
}

/// Context of every complete window `[start, start + k)` of one history,
/// indexed by `start`. The user vector folds in earlier windows only.
pub fn history_contexts(
    encoder: &Encoder,
    catalog: &Catalog,
    history: &PlayerHistory,
    states: &[StateId],
    subtype: SubtypeLabel,
    k: usize,
) -> Vec<ContextFeatures> {
    if history.len() < k {
        return Vec::new();
    }
    let windows: Vec<Window> = (0..=history.len() - k)
        .map(|s| build_window(history, states, catalog, None, s, k))
        .collect();
    let refs: Vec<&Window> = windows.iter().collect();
    let emb = encoder.encode_batch(&refs);
    let users = user_vectors(&emb.z_cls);
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let mut mf = [0.0; N_MASTERY];
            for (j, v) in mf.iter_mut().enumerate() {
                *v = emb.mf[(i, j)];
            }
            ContextFeatures {
                z_cls: emb.z_cls.row(i).to_vec(),
                z_user: users.row(i).to_vec(),
                mf,
                subtype,
                state: w.steps[k - 1].state,
            }
        })
        .collect()
}

// ── Frozen bundle ───────────────────────────────────────────────────────

/// Everything needed to advise on a fresh match history.
pub struct Models {
    pub catalog: Catalog,
    pub archetype: ArchetypeModel,
    pub subtype: SubtypeModel,
    pub encoder: Encoder,
    pub gate: GateModel,
    pub quality: QualityModel,
    pub counts: TransitionCounts,
    pub fusion: FusionConfig,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Advice {
    NeedMatches {
        have: usize,
        need: usize,
    },
    Ready {
        recommendation: Recommendation,
        provisional: bool,
    },
}

pub const MODEL_FILES: [&str; 8] = [
    "cards.jsonl",
    "archetype.tsv",
    "subtype.tsv",
    "encoder.tsv",
    "gate.tsv",
    "quality.tsv",
    "transition_counts.tsv",
    "fusion.tsv",
];

impl Models {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.catalog.save(dir.join("cards.jsonl"))?;
        self.archetype.save(dir.join("archetype.tsv"))?;
        self.subtype.save(dir.join("subtype.tsv"))?;
        self.encoder.save(dir.join("encoder.tsv"))?;
        self.gate.save(dir.join("gate.tsv"))?;
        self.quality.save(dir.join("quality.tsv"))?;
        self.counts.save(dir.join("transition_counts.tsv"))?;
        self.fusion.save(dir.join("fusion.tsv"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if let Some(missing) = MODEL_FILES.iter().find(|f| !dir.join(f).is_file()) {
            return Err(Error::Model(format!(
                "{} is missing from {}",
                missing,
                dir.display()
            )));
        }
        Ok(Self {
            catalog: Catalog::load(dir.join("cards.jsonl"))?,
            archetype: ArchetypeModel::load(dir.join("archetype.tsv"))?,
            subtype: SubtypeModel::load(dir.join("subtype.tsv"))?,
            encoder: Encoder::load(dir.join("encoder.tsv"))?,
            gate: GateModel::load(dir.join("gate.tsv"))?,
            quality: QualityModel::load(dir.join("quality.tsv"))?,
            counts: TransitionCounts::load(dir.join("transition_counts.tsv"))?,
            fusion: FusionConfig::load(dir.join("fusion.tsv"))?,
            k: DEFAULT_K,
        })
    }

    pub fn recommender<'a>(&'a self, scorer: &'a LaplaceScorer<'a>) -> Recommender<'a> {
        Recommender {
            gate: &self.gate,
            quality: &self.quality,
            counts: &self.counts,
            scorer,
            config: &self.fusion,
        }
    }

    /// Subtype from the whole history, or the provisional label when it is
    /// too short to profile.
    pub fn subtype_of(&self, matches: &[MatchRecord]) -> (SubtypeLabel, bool) {
        if matches.len() < SUBTYPE_MIN_MATCHES {
            (PROVISIONAL_SUBTYPE, true)
        } else {
            (self.subtype.assign(&behavior_profile(matches)), false)
        }
    }

    /// Decision context right after the last match, if there are `k` matches.
    pub fn context(&self, history: &PlayerHistory) -> Result<Option<(ContextFeatures, bool)>> {
        if history.len() < self.k {
            return Ok(None);
        }
        let states = assign_states(
            &self.archetype,
            &self.catalog,
            std::slice::from_ref(history),
        )?
        .remove(0);
        let (subtype, provisional) = self.subtype_of(&history.matches);
        let ctx = history_contexts(
            &self.encoder,
            &self.catalog,
            history,
            &states,
            subtype,
            self.k,
        )
        .pop();
        Ok(ctx.map(|c| (c, provisional)))
    }

    /// Offline recommendation for a chronological match history.
    pub fn advise(&self, history: &PlayerHistory) -> Result<Advice> {
        match self.context(history)? {
            None => Ok(Advice::NeedMatches {
                have: history.len(),
                need: self.k - history.len(),
            }),
            Some((ctx, provisional)) => {
                let scorer = LaplaceScorer(&self.counts);
                Ok(Advice::Ready {
                    recommendation: self.recommender(&scorer).recommend(&ctx),
                    provisional,
                })
            }
        }
    }
}

// ── Staged run ──────────────────────────────────────────────────────────

/// Filtered histories with splits, per-match states and subtype labels.
pub struct Corpus {
    pub catalog: Catalog,
    pub histories: Vec<PlayerHistory>,
    pub splits: SplitAssignment,
    pub states: Vec<Vec<StateId>>,
    pub labels: Vec<SubtypeLabel>,
}

impl Corpus {
    pub fn new(
        catalog: Catalog,
        histories: Vec<PlayerHistory>,
        split: (f64, f64, f64),
        archetype: &ArchetypeModel,
        labels: Vec<SubtypeLabel>,
    ) -> Result<Self> {
        if labels.len() != histories.len() {
            return Err(Error::Config(
                "one subtype label per player is required".into(),
            ));
        }
        let splits = make_splits(&histories, split);
        let states = assign_states(archetype, &catalog, &histories)?;
        Ok(Self {
            catalog,
            histories,
            splits,
            states,
            labels,
        })
    }

    pub fn windows(&self, segment: Segment, k: usize) -> Vec<Window> {
        segment_windows(
            &self.catalog,
            &self.histories,
            &self.states,
            &self.labels,
            &self.splits,
            segment,
            k,
        )
    }

    /// Events of all segments with net effects attached from a training-only
    /// stay baseline.
    pub fn events(
        &self,
        k: usize,
        min_support: usize,
    ) -> Result<(Vec<TransitionEvent>, StayBaselineTable, ExtractReport)> {
        let inputs: Vec<PlayerInput<'_>> = self
            .histories
            .iter()
            .enumerate()
            .map(|(i, h)| PlayerInput {
                history: h,
                states: &self.states[i],
                subtype: self.labels[i],
                bounds: *self
                    .splits
                    .get(&h.player_id)
                    .expect("split for every player"),
            })
            .collect();
        let (mut events, extract) = extract_events(&inputs, &Segment::ALL, k);
        let train: Vec<TransitionEvent> = events
            .iter()
            .filter(|e| e.segment == Segment::Train)
            .cloned()
            .collect();
        let baseline = StayBaselineTable::build(&train, min_support)?;
        attach_net(&mut events, &baseline);
        Ok((events, baseline, extract))
    }

    /// Training-segment `(state, won)` sequences for the baselines.
    pub fn train_states(&self) -> Vec<PlayerStates> {
        self.histories
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let r = self
                    .splits
                    .get(&h.player_id)
                    .expect("split")
                    .range(Segment::Train);
                PlayerStates {
                    player_id: h.player_id.clone(),
                    matches: r
                        .map(|t| (self.states[i][t], h.matches[t].outcome.is_win()))
                        .collect(),
                }
            })
            .collect()
    }
}

/// Decision contexts for every window of every player.
pub struct ContextIndex {
    contexts: Vec<Vec<ContextFeatures>>,
    index: HashMap<String, usize>,
}

impl ContextIndex {
    pub fn build(corpus: &Corpus, encoder: &Encoder, k: usize) -> Self {
        let contexts = corpus
            .histories
            .par_iter()
            .enumerate()
            .map(|(i, h)| {
                history_contexts(
                    encoder,
                    &corpus.catalog,
                    h,
                    &corpus.states[i],
                    corpus.labels[i],
                    k,
                )
            })
            .collect();
        let index = corpus
            .histories
            .iter()
            .enumerate()
            .map(|(i, h)| (h.player_id.clone(), i))
            .collect();
        Self { contexts, index }
    }

    pub fn get(&self, e: &TransitionEvent) -> &ContextFeatures {
        &self.contexts[self.index[&e.player_id]][e.start]
    }

    pub fn gate_rows(&self, events: &[&TransitionEvent]) -> Array2<f64> {
        stack_rows(
            &events
                .iter()
                .map(|e| gate_features(self.get(e)))
                .collect::<Vec<_>>(),
        )
    }

    /// Rows for the actual transition of each event.
    pub fn quality_rows(&self, events: &[&TransitionEvent]) -> Array2<f64> {
        stack_rows(
            &events
                .iter()
                .map(|e| quality_features(self.get(e), e.to_state))
                .collect::<Vec<_>>(),
        )
    }
}

pub fn in_segment(events: &[TransitionEvent], s: Segment) -> Vec<&TransitionEvent> {
    events.iter().filter(|e| e.segment == s).collect()
}

fn forwarded<'a>(events: &[&'a TransitionEvent]) -> Vec<&'a TransitionEvent> {
    events
        .iter()
        .copied()
        .filter(|e| persona_gate(e.subtype) == GateDecision::Forward)
        .collect()
}

fn switches<'a>(events: &[&'a TransitionEvent]) -> Vec<&'a TransitionEvent> {
    events.iter().copied().filter(|e| e.is_switch()).collect()
}

fn owned(events: &[&TransitionEvent]) -> Vec<TransitionEvent> {
    events.iter().map(|e| (*e).clone()).collect()
}

pub struct GateStage {
    pub gate: GateModel,
    pub log: Vec<HeadEpoch>,
    pub threshold: ThresholdChoice,
    pub mix: TrainingMix,
}

/// Trains on the undersampled training mix (validation mix for early
/// stopping), then picks θ on forwarded validation events.
pub fn train_gate_stage(
    events: &[TransitionEvent],
    ctx: &ContextIndex,
    cfg: &PipelineConfig,
) -> Result<GateStage> {
    let mix = build_timing_labels(
        &owned(&in_segment(events, Segment::Train)),
        derive_seed(cfg.seed, "timing-train"),
    );
    let val = in_segment(events, Segment::Val);
    let val_mix = build_timing_labels(&owned(&val), derive_seed(cfg.seed, "timing-val"));
    let by_id: HashMap<usize, &TransitionEvent> = events.iter().map(|e| (e.id, e)).collect();
    let rows = |m: &TrainingMix| {
        let evs: Vec<&TransitionEvent> = m.labels.iter().map(|l| by_id[&l.event_id]).collect();
        (
            ctx.gate_rows(&evs),
            m.labels.iter().map(|l| l.label).collect::<Vec<bool>>(),
        )
    };
    let (x, y) = rows(&mix);
    let (vx, vy) = rows(&val_mix);
    let valid = (!vy.is_empty()).then_some((&vx, vy.as_slice()));
    if valid.is_none() {
        warn!("no validation events; timing gate trains without early stopping");
    }
    let (mut gate, log) = train_timing_gate(&x, &y, valid, &cfg.gate)?;
    // Short histories can leave the validation segment without switchers;
    // θ then comes from forwarded training events.
    let mut pool = forwarded(&val);
    if !pool.iter().any(|e| e.is_switch()) {
        warn!("no validation switchers; selecting theta on training events");
        pool = forwarded(&in_segment(events, Segment::Train));
    }
    let probs = if pool.is_empty() {
        Vec::new()
    } else {
        gate.probs(&ctx.gate_rows(&pool))
    };
    let threshold = select_threshold(
        &probs,
        &pool.iter().map(|e| e.is_switch()).collect::<Vec<_>>(),
        &pool.iter().map(|e| e.y_tq).collect::<Vec<_>>(),
        cfg.max_approval_rate,
        cfg.min_approved_switchers,
    );
    gate.theta = threshold.theta;
    info!(theta = gate.theta, "timing gate trained");
    Ok(GateStage {
        gate,
        log,
        threshold,
        mix,
    })
}

/// Fits on training switch events, early-stopping on validation switches.
pub fn train_quality_stage(
    events: &[TransitionEvent],
    ctx: &ContextIndex,
    cfg: &PipelineConfig,
) -> Result<(QualityModel, Vec<HeadEpoch>)> {
    let tr = switches(&in_segment(events, Segment::Train));
    let va = switches(&in_segment(events, Segment::Val));
    let y = |evs: &[&TransitionEvent]| evs.iter().map(|e| e.y_tq).collect::<Vec<f64>>();
    if tr.is_empty() {
        return Err(Error::Degenerate(
            "no training switch events for the quality head".into(),
        ));
    }
    let (vx, vy) = (ctx.quality_rows(&va), y(&va));
    let valid = (!vy.is_empty()).then_some((&vx, vy.as_slice()));
    if valid.is_none() {
        warn!("no validation switch events; quality head trains without early stopping");
    }
    train_quality(&ctx.quality_rows(&tr), &y(&tr), valid, &cfg.quality)
}

/// Gate probability and `ŷ` for every destination of each event.
pub fn score_events(
    events: &[&TransitionEvent],
    ctx: &ContextIndex,
    gate: &GateModel,
    quality: &QualityModel,
) -> Vec<ScoredEvent> {
    if events.is_empty() {
        return Vec::new();
    }
    let probs = gate.probs(&ctx.gate_rows(events));
    let rows: Vec<Vec<f64>> = events
        .iter()
        .flat_map(|e| StateId::all().map(move |s| quality_features(ctx.get(e), s)))
        .collect();
    let q = quality.predict(&stack_rows(&rows));
    events
        .iter()
        .zip(probs)
        .zip(q.chunks(N_STATES))
        .map(|((e, p), q)| ScoredEvent {
            event: (*e).clone(),
            gate_prob: p,
            quality: q.to_vec(),
        })
        .collect()
}

/// α search on forwarded validation switchers.
pub fn tune_fusion_stage(
    events: &[TransitionEvent],
    ctx: &ContextIndex,
    gate: &GateModel,
    quality: &QualityModel,
    counts: &TransitionCounts,
    fusion: &FusionConfig,
) -> AlphaChoice {
    let val = switches(&forwarded(&in_segment(events, Segment::Val)));
    let items: Vec<TuningItem> = score_events(&val, ctx, gate, quality)
        .into_iter()
        .map(|s| TuningItem {
            subtype: s.event.subtype,
            from_state: s.event.from_state,
            gate_prob: s.gate_prob,
            quality: s.quality,
            is_switch: s.event.is_switch(),
            to_state: s.event.to_state,
            y_tq: s.event.y_tq,
        })
        .collect();
    let scorer = LaplaceScorer(counts);
    let parts = FusionParts {
        counts,
        scorer: &scorer,
        theta: gate.theta,
        alpha: fusion.alpha,
        scale: fusion.scale,
    };
    let choice = tune_alpha(&items, &fusion.grid, &parts);
    info!(alpha = choice.alpha, "fusion weight selected");
    choice
}

/// Scored test events of the evaluated subtypes.
pub fn test_scored(
    events: &[TransitionEvent],
    ctx: &ContextIndex,
    gate: &GateModel,
    quality: &QualityModel,
) -> Vec<ScoredEvent> {
    let test: Vec<&TransitionEvent> = in_segment(events, Segment::Test)
        .into_iter()
        .filter(|e| EVAL_SUBTYPES.contains(&e.subtype))
        .collect();
    score_events(&test, ctx, gate, quality)
}

/// TQP against Always-Zero on every test switch event.
pub fn predictor_reports(
    events: &[TransitionEvent],
    ctx: &ContextIndex,
    quality: &QualityModel,
    resamples: usize,
    seed: u64,
) -> Vec<(String, PredictorReport)> {
    let sw = switches(&in_segment(events, Segment::Test));
    if sw.is_empty() {
        return Vec::new();
    }
    let y: Vec<f64> = sw.iter().map(|e| e.y_tq).collect();
    let pred = quality.predict(&ctx.quality_rows(&sw));
    let seed = derive_seed(seed, "bootstrap");
    vec![
        (
            "TQP".to_string(),
            evaluate_predictor(&pred, &y, resamples, seed),
        ),
        (
            "Always-Zero".to_string(),
            evaluate_predictor(&vec![0.0; y.len()], &y, resamples, seed),
        ),
    ]
}

/// Baselines, ablation rows and predictor reports on the test split.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_stage(
    corpus: &Corpus,
    events: &[TransitionEvent],
    ctx: &ContextIndex,
    models: &Models,
    policies: &[PolicyKind],
    cfg: &PipelineConfig,
) -> (EvalReport, Vec<ScoredEvent>) {
    let scored = test_scored(events, ctx, &models.gate, &models.quality);
    let train = owned(&in_segment(events, Segment::Train));
    let aux = BaselineAux::fit(
        &corpus.train_states(),
        &train,
        &AlsConfig {
            seed: derive_seed(cfg.seed, "als"),
            ..AlsConfig::default()
        },
        derive_seed(cfg.seed, "baselines"),
    );
    let scorer = LaplaceScorer(&models.counts);
    let parts = FusionParts {
        counts: &models.counts,
        scorer: &scorer,
        theta: models.gate.theta,
        alpha: models.fusion.alpha,
        scale: models.fusion.scale,
    };
    let rows = evaluate_policies(&scored, policies, &aux, &parts);
    let report = EvalReport {
        n_events: scored.len(),
        rows,
        predictors: predictor_reports(
            events,
            ctx,
            &models.quality,
            cfg.bootstrap_resamples,
            cfg.seed,
        ),
        theta: models.gate.theta,
        alpha: models.fusion.alpha,
    };
    (report, scored)
}

// ── Full run ────────────────────────────────────────────────────────────

pub struct PipelineRun {
    pub config: PipelineConfig,
    pub filter: FilterReport,
    pub models: Models,
    pub label_rows: Vec<LabelRow>,
    pub encoder_report: TrainReport,
    pub extract: ExtractReport,
    pub baseline: StayBaselineTable,
    pub events: Vec<TransitionEvent>,
    pub timing_mix: TrainingMix,
    pub gate_log: Vec<HeadEpoch>,
    pub quality_log: Vec<HeadEpoch>,
    pub threshold: ThresholdChoice,
    pub alpha: AlphaChoice,
    pub test_events: Vec<ScoredEvent>,
    pub eval: EvalReport,
}

/// Runs every stage on raw histories. `skipped_other_modes` is carried into
/// the filter report.
pub fn run_pipeline(
    catalog: Catalog,
    histories: Vec<PlayerHistory>,
    skipped_other_modes: usize,
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    cfg.fusion.validate()?;
    let (hist, mut filter) = apply_filters(histories);
    filter.skipped_other_modes = skipped_other_modes;
    if hist.is_empty() {
        return Err(Error::Degenerate("no player survives the filters".into()));
    }
    let splits = make_splits(&hist, cfg.split);
    let archetype = fit_archetype_stage(
        &catalog,
        &hist,
        cfg.archetype_sample,
        cfg.archetype_restarts,
        cfg.seed,
    )?;
    let (subtype, label_rows) =
        fit_subtype_stage(&hist, &splits, derive_seed(cfg.seed, "subtype"))?;
    let corpus = Corpus::new(
        catalog,
        hist,
        cfg.split,
        &archetype,
        label_rows.iter().map(|r| r.label).collect(),
    )?;
    info!(
        players = corpus.histories.len(),
        "archetypes and subtypes fitted"
    );

    let (encoder, encoder_report) = pretrain(
        &corpus.windows(Segment::Train, cfg.k),
        &corpus.windows(Segment::Val, cfg.k),
        corpus.catalog.len(),
        &cfg.encoder,
    )?;
    info!(best_epoch = encoder_report.best_epoch, "encoder trained");

    let (events, baseline, extract) = corpus.events(cfg.k, cfg.baseline_min_support)?;
    let ctx = ContextIndex::build(&corpus, &encoder, cfg.k);
    let gs = train_gate_stage(&events, &ctx, cfg)?;
    let (quality, quality_log) = train_quality_stage(&events, &ctx, cfg)?;
    let counts =
        TransitionCounts::from_events(events.iter().filter(|e| e.segment == Segment::Train));
    let alpha = tune_fusion_stage(&events, &ctx, &gs.gate, &quality, &counts, &cfg.fusion);

    let models = Models {
        catalog: corpus.catalog.clone(),
        archetype,
        subtype,
        encoder,
        gate: gs.gate,
        quality,
        counts,
        fusion: FusionConfig {
            alpha: alpha.alpha,
            ..cfg.fusion.clone()
        },
        k: cfg.k,
    };
    let policies: Vec<PolicyKind> = PolicyKind::all().collect();
    let (eval, test_events) = evaluate_stage(&corpus, &events, &ctx, &models, &policies, cfg);

    Ok(PipelineRun {
        config: cfg.clone(),
        filter,
        models,
        label_rows,
        encoder_report,
        extract,
        baseline,
        events,
        timing_mix: gs.mix,
        gate_log: gs.log,
        quality_log,
        threshold: gs.threshold,
        alpha,
        test_events,
        eval,
    })
}

fn f4(v: Option<f64>) -> String {
    v.map_or_else(|| "---".to_string(), |v| format!("{v:.4}"))
}

impl PipelineRun {
    /// Deterministic human-readable report: run summary then the policy table.
    pub fn render_report(&self) -> String {
        let mut o = String::new();
        let c = &self.config;
        let _ = writeln!(o, "TQP pipeline report");
        let _ = writeln!(o, "seed {}  k {}  split {:?}\n", c.seed, c.k, c.split);
        let _ = writeln!(o, "[data]\n{}\n", self.filter);
        let _ = writeln!(
            o,
            "[archetypes]\nstates {}  silhouette {:.4}  inertia {:.4}\n",
            self.models.archetype.n_states(),
            self.models.archetype.silhouette,
            self.models.archetype.inertia
        );
        let mut sizes = [0usize; 3];
        for r in &self.label_rows {
            sizes[r.label.index()] += 1;
        }
        let _ = writeln!(
            o,
            "[subtypes]\nloyalist {}  loss_reactive {}  flex {}  silhouette {:.4}\n",
            sizes[0], sizes[1], sizes[2], self.models.subtype.silhouette
        );
        let er = &self.encoder_report;
        let _ = writeln!(
            o,
            "[encoder]\ntrain windows {}  best epoch {}  stopped early {}",
            er.n_train, er.best_epoch, er.stopped_early
        );
        for e in &er.epochs {
            let _ = writeln!(
                o,
                "  epoch {:>2}  train {:.5}  val {}",
                e.epoch,
                e.train_loss,
                f4(e.val_loss)
            );
        }
        if let Some(m) = &er.val {
            let _ = writeln!(
                o,
                "  val dc_auc {}  win_auc {}  dv_acc {:.4}  sub_acc {}  cd_mse {:.4}",
                f4(m.dc_auc),
                f4(m.win_auc),
                m.dv_accuracy,
                f4(m.sub_accuracy),
                m.cd_mse
            );
        }
        let ex = &self.extract;
        let _ = writeln!(
            o,
            "\n[events]\nevents {}  switches {}  dropped short tail {}",
            ex.events, ex.switches, ex.dropped_short_tail
        );
        let _ = writeln!(
            o,
            "stay baseline cells {}  global mean {:.4}",
            self.baseline.cells.len(),
            self.baseline.global.mean
        );
        let m = &self.timing_mix;
        let _ = writeln!(
            o,
            "timing mix: {} switches, {} of {} stays sampled\n",
            m.n_switch, m.n_stay_sampled, m.n_stay_available
        );
        let last = |log: &[HeadEpoch]| {
            log.last().map_or("---".to_string(), |e| {
                format!("{} epochs, last val {}", e.epoch, f4(e.val_loss))
            })
        };
        let t = &self.threshold;
        let _ = writeln!(
            o,
            "[gate]\n{}\ntheta {:.2}  val approval {:.4}  approved switchers {}  val SwitchGap {}  feasible {}\n",
            last(&self.gate_log),
            t.theta,
            t.approval_rate,
            t.approved_switchers,
            f4(t.switch_gap),
            t.feasible
        );
        let _ = writeln!(o, "[quality]\n{}\n", last(&self.quality_log));
        let _ = write!(
            o,
            "[fusion]\nalpha {:.1}  degenerate {}\n  curve",
            self.alpha.alpha, self.alpha.degenerate
        );
        for (a, g) in &self.alpha.curve {
            let _ = write!(o, " {a:.1}:{}", f4(*g));
        }
        let _ = writeln!(o, "\n");
        o.push_str(&self.eval.render_table());
        if let (Some(cr), Some(dr)) = (
            self.eval.row(PolicyKind::WithTimingGate),
            self.eval.row(PolicyKind::FullPipeline),
        ) {
            let holds = matches!((cr.metrics.switch_gap, dr.metrics.switch_gap), (Some(c), Some(d)) if d >= c);
            let _ = writeln!(
                o,
                "\nsoft check SwitchGap(d) >= SwitchGap(c): {}",
                if holds { "holds" } else { "does not hold" }
            );
        }
        o
    }

    /// Writes models, events, labels and reports under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.models.save(dir.join("models"))?;
        self.baseline.save(dir.join("stay_baseline.tsv"))?;
        save_events(&self.events, dir.join("events.tsv"))?;
        save_labels(&self.timing_mix.labels, dir.join("timing_labels.tsv"))?;
        write_label_table(&self.label_rows, dir.join("subtypes.tsv"))?;
        self.eval.write(dir)?;
        let p = dir.join("pipeline_report.txt");
        std::fs::write(&p, self.render_report()).map_err(|e| Error::io(&p, e))
    }
}
