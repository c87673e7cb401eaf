//! Work-directory layout and the stage drivers behind the `tqp` CLI.
//!
//! Each stage reads the artifacts of earlier stages from one directory and
//! writes its own next to them, so stages can be run one at a time or all at
//! once by `pipeline`. The models subdirectory is the bundle `serve` loads.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::archetype::{clustering_stability, deck_features, ArchetypeModel, Stability};
use crate::cluster::subsample_indices;
use crate::encoder::{
    gradient_check, pretrain, user_vectors, Encoder, EncoderConfig, GradCheck, TrainReport,
};
use crate::error::{Error, Result};
use crate::fusion::{AlphaChoice, FusionConfig, Recommendation, TransitionCounts};
use crate::heads::{ContextFeatures, HeadEpoch, PredictorReport, QualityModel};
use crate::matchlog::{
    apply_filters, load_matchlog, save_matchlog, Catalog, FilterReport, PlayerHistory, Segment,
};
use crate::pipeline::{
    assign_states, evaluate_stage, fit_archetype_stage, fit_subtype_stage, predictor_reports,
    run_pipeline, train_gate_stage, train_quality_stage, tune_fusion_stage, Advice, ContextIndex,
    Corpus, GateStage, Models, PipelineConfig, PipelineRun,
};
use crate::policyeval::{EvalReport, PolicyKind};
use crate::seed::derive_seed;
use crate::subtype::{
    behavior_profile, read_label_table, write_label_table, LabelRow, SubtypeModel,
};
use crate::synthgen::{generate_population, write_population, GeneratorConfig};
use crate::transition::{
    attach_net, build_timing_labels, load_events, save_events, save_labels, ExtractReport,
    StayBaselineTable, TrainingMix, TransitionEvent,
};
use crate::window::extract_windows;

// ── Layout ──────────────────────────────────────────────────────────────

pub struct WorkDir {
    root: PathBuf,
}

impl WorkDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.models().join(name)
    }

    fn require(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::Config(format!(
                "{} not found; run `tqp {producer}` first",
                p.display()
            )))
        }
    }

    fn require_model(&self, name: &str, producer: &str) -> Result<PathBuf> {
        self.require(&format!("models/{name}"), producer)
    }

    fn ensure_models(&self) -> Result<()> {
        let d = self.models();
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ── Data ────────────────────────────────────────────────────────────────

/// Loads and filters a matchlog, writing the survivors, the catalog and the
/// filter report under `out`.
pub fn ingest(matchlog: &Path, cards: &Path, out: &Path) -> Result<FilterReport> {
    let catalog = Catalog::load(cards)?;
    let log = load_matchlog(matchlog, &catalog)?;
    let (hist, mut report) = apply_filters(log.histories);
    report.skipped_other_modes = log.skipped_other_modes;
    let w = WorkDir::new(out);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    save_matchlog(&hist, w.path("matchlog.jsonl"))?;
    catalog.save(w.path("cards.jsonl"))?;
    write_text(&w.path("filter_report.txt"), &report.to_string())?;
    Ok(report)
}

pub fn synth(config: Option<&Path>, out: &Path) -> Result<usize> {
    let cfg = match config {
        Some(p) => GeneratorConfig::load(p)?,
        None => GeneratorConfig::default(),
    };
    let pop = generate_population(&cfg)?;
    write_population(&pop, out)?;
    Ok(pop.histories.len())
}

/// Catalog and filtered histories of a work directory.
pub fn load_histories(w: &WorkDir) -> Result<(Catalog, Vec<PlayerHistory>, FilterReport)> {
    let catalog = Catalog::load(w.require("cards.jsonl", "ingest")?)?;
    let log = load_matchlog(w.require("matchlog.jsonl", "ingest")?, &catalog)?;
    let (hist, mut report) = apply_filters(log.histories);
    report.skipped_other_modes = log.skipped_other_modes;
    if hist.is_empty() {
        return Err(Error::Degenerate("no player survives the filters".into()));
    }
    Ok((catalog, hist, report))
}

fn corpus(w: &WorkDir, cfg: &PipelineConfig) -> Result<Corpus> {
    let (catalog, hist, _) = load_histories(w)?;
    let archetype = ArchetypeModel::load(w.require_model("archetype.tsv", "archetype fit")?)?;
    let table = read_label_table(w.require("subtypes.tsv", "subtype fit")?)?;
    let labels = hist
        .iter()
        .map(|h| {
            table.get(&h.player_id).copied().ok_or_else(|| {
                Error::Config(format!("player {} missing from subtypes.tsv", h.player_id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(catalog, hist, cfg.split, &archetype, labels)
}

fn encoder(w: &WorkDir) -> Result<Encoder> {
    Encoder::load(w.require_model("encoder.tsv", "encoder pretrain")?)
}

fn events(w: &WorkDir) -> Result<Vec<TransitionEvent>> {
    load_events(w.require("events.tsv", "transition extract")?)
}

// ── Archetypes and subtypes ─────────────────────────────────────────────

pub fn archetype_fit(w: &WorkDir, cfg: &PipelineConfig) -> Result<ArchetypeModel> {
    let (catalog, hist, _) = load_histories(w)?;
    let model = fit_archetype_stage(
        &catalog,
        &hist,
        cfg.archetype_sample,
        cfg.archetype_restarts,
        cfg.seed,
    )?;
    w.ensure_models()?;
    catalog.save(w.model("cards.jsonl"))?;
    model.save(w.model("archetype.tsv"))?;
    Ok(model)
}

/// Writes `states.tsv`: player, match index, state.
pub fn archetype_assign(w: &WorkDir) -> Result<usize> {
    let (catalog, hist, _) = load_histories(w)?;
    let model = ArchetypeModel::load(w.require_model("archetype.tsv", "archetype fit")?)?;
    let states = assign_states(&model, &catalog, &hist)?;
    let mut out = String::from("# player_id\tseq_index\tstate\n");
    let mut n = 0;
    for (h, s) in hist.iter().zip(&states) {
        for (t, st) in s.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}", h.player_id, t, st.0);
            n += 1;
        }
    }
    write_text(&w.path("states.tsv"), &out)?;
    Ok(n)
}

/// Refits with `runs` seeds on one deck sample; mean pairwise ARI/NMI.
pub fn archetype_stability(w: &WorkDir, cfg: &PipelineConfig, runs: usize) -> Result<Stability> {
    let (catalog, hist, _) = load_histories(w)?;
    let models = (0..runs)
        .map(|r| {
            fit_archetype_stage(
                &catalog,
                &hist,
                cfg.archetype_sample,
                cfg.archetype_restarts,
                derive_seed(cfg.seed, &format!("stability-{r}")),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let decks: std::collections::BTreeSet<_> = hist
        .iter()
        .flat_map(|h| h.matches.iter().map(|m| &m.deck))
        .collect();
    let decks: Vec<_> = decks.into_iter().collect();
    let feats = subsample_indices(decks.len(), cfg.archetype_sample.min(4000))
        .into_iter()
        .map(|i| deck_features(decks[i], &catalog))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<Vec<f64>> = feats.iter().map(|f| models[0].embed(f)).collect();
    let labelings: Vec<Vec<usize>> = models
        .iter()
        .map(|m| {
            feats
                .iter()
                .map(|f| usize::from(m.assign_features(f).0))
                .collect()
        })
        .collect();
    clustering_stability(&points, &labelings)
}

pub fn subtype_fit(w: &WorkDir, cfg: &PipelineConfig) -> Result<(SubtypeModel, Vec<LabelRow>)> {
    let (_, hist, _) = load_histories(w)?;
    let splits = crate::matchlog::make_splits(&hist, cfg.split);
    let (model, rows) = fit_subtype_stage(&hist, &splits, derive_seed(cfg.seed, "subtype"))?;
    w.ensure_models()?;
    model.save(w.model("subtype.tsv"))?;
    write_label_table(&rows, w.path("subtypes.tsv"))?;
    Ok((model, rows))
}

/// Labels every history of `matchlog` (default: the work directory's) from
/// its whole-history profile.
pub fn subtype_assign(w: &WorkDir, matchlog: Option<&Path>, out: &Path) -> Result<usize> {
    let model = SubtypeModel::load(w.require_model("subtype.tsv", "subtype fit")?)?;
    let hist = match matchlog {
        Some(p) => {
            let catalog = Catalog::load(w.require("cards.jsonl", "ingest")?)?;
            load_matchlog(p, &catalog)?.histories
        }
        None => load_histories(w)?.1,
    };
    let rows: Vec<LabelRow> = hist
        .iter()
        .map(|h| {
            let profile = behavior_profile(&h.matches);
            LabelRow {
                player_id: h.player_id.clone(),
                label: model.assign(&profile),
                profile,
            }
        })
        .collect();
    write_label_table(&rows, out)?;
    Ok(rows.len())
}

// ── Encoder ─────────────────────────────────────────────────────────────

pub fn encoder_pretrain(w: &WorkDir, cfg: &PipelineConfig) -> Result<TrainReport> {
    let c = corpus(w, cfg)?;
    let (enc, report) = pretrain(
        &c.windows(Segment::Train, cfg.k),
        &c.windows(Segment::Val, cfg.k),
        c.catalog.len(),
        &cfg.encoder,
    )?;
    w.ensure_models()?;
    enc.save(w.model("encoder.tsv"))?;
    write_text(&w.path("encoder_report.txt"), &render_train_report(&report))?;
    Ok(report)
}

pub fn render_train_report(r: &TrainReport) -> String {
    let mut o = String::new();
    let _ = writeln!(
        o,
        "train windows {}  best epoch {}  stopped early {}",
        r.n_train, r.best_epoch, r.stopped_early
    );
    for e in &r.epochs {
        let _ = writeln!(
            o,
            "epoch {:>2}  train {:.5}  val {}",
            e.epoch,
            e.train_loss,
            e.val_loss.map_or("---".into(), |v| format!("{v:.5}"))
        );
    }
    if let Some(m) = &r.val {
        let _ = writeln!(o, "val {m:?}");
    }
    o
}

/// Writes `z_cls` and `z_user` of every window in `segment`.
pub fn encoder_encode(
    w: &WorkDir,
    cfg: &PipelineConfig,
    segment: Segment,
    out: &Path,
) -> Result<usize> {
    let c = corpus(w, cfg)?;
    let enc = encoder(w)?;
    let mut text = String::from("# player_id\tstart\tsegment\tz_cls...\tz_user...\n");
    let mut n = 0;
    for (i, h) in c.histories.iter().enumerate() {
        let all = extract_windows(
            h,
            &c.states[i],
            &c.catalog,
            Some(c.labels[i]),
            0..h.len(),
            cfg.k,
        );
        if all.is_empty() {
            continue;
        }
        let z = enc.encode_batch(&all.iter().collect::<Vec<_>>()).z_cls;
        let zu = user_vectors(&z);
        let bounds = c.splits.get(&h.player_id).expect("split");
        for (j, win) in all.iter().enumerate() {
            if bounds.segment_of(win.start + cfg.k - 1) != segment {
                continue;
            }
            let _ = write!(text, "{}\t{}\t{}", h.player_id, win.start, segment.as_str());
            for v in z.row(j).iter().chain(zu.row(j).iter()) {
                let _ = write!(text, "\t{v}");
            }
            text.push('\n');
            n += 1;
        }
    }
    write_text(out, &text)?;
    Ok(n)
}

/// Finite-difference check of the tiny encoder on a small synthetic corpus.
pub fn encoder_gradcheck(seed: u64, n_windows: usize) -> Result<GradCheck> {
    let pop = generate_population(&GeneratorConfig {
        n_players: 4,
        matches_min: 30,
        matches_max: 30,
        rng_seed: seed,
        ..GeneratorConfig::default()
    })?;
    let states: Vec<Vec<_>> = pop
        .histories
        .iter()
        .map(|h| h.matches.iter().map(|m| pop.truth.decks[&m.deck]).collect())
        .collect();
    let mut windows = Vec::new();
    for (h, s) in pop.histories.iter().zip(&states) {
        let u = pop.truth.subtype_of(&h.player_id).expect("truth");
        windows.extend(extract_windows(
            h,
            s,
            &pop.catalog,
            Some(u),
            0..h.len(),
            crate::window::DEFAULT_K,
        ));
    }
    windows.truncate(n_windows.max(1));
    let mut enc = Encoder::new(EncoderConfig::tiny(), pop.catalog.len(), seed);
    enc.fit_cont_stats(&windows);
    Ok(gradient_check(
        &enc,
        &windows.iter().collect::<Vec<_>>(),
        1e-5,
    ))
}

// ── Transitions ─────────────────────────────────────────────────────────

/// Writes `events.tsv` (net effects attached) and `stay_baseline.tsv`.
pub fn transition_extract(w: &WorkDir, cfg: &PipelineConfig) -> Result<ExtractReport> {
    let c = corpus(w, cfg)?;
    let (events, baseline, report) = c.events(cfg.k, cfg.baseline_min_support)?;
    save_events(&events, w.path("events.tsv"))?;
    baseline.save(w.path("stay_baseline.tsv"))?;
    Ok(report)
}

/// Rebuilds the stay baseline from training events and reattaches net
/// effects.
pub fn transition_baseline(w: &WorkDir, cfg: &PipelineConfig) -> Result<StayBaselineTable> {
    let mut ev = events(w)?;
    let train: Vec<TransitionEvent> = ev
        .iter()
        .filter(|e| e.segment == Segment::Train)
        .cloned()
        .collect();
    let table = StayBaselineTable::build(&train, cfg.baseline_min_support)?;
    attach_net(&mut ev, &table);
    table.save(w.path("stay_baseline.tsv"))?;
    save_events(&ev, w.path("events.tsv"))?;
    Ok(table)
}

pub fn transition_labels(w: &WorkDir, cfg: &PipelineConfig) -> Result<TrainingMix> {
    let train: Vec<TransitionEvent> = events(w)?
        .into_iter()
        .filter(|e| e.segment == Segment::Train)
        .collect();
    let mix = build_timing_labels(&train, derive_seed(cfg.seed, "timing-train"));
    save_labels(&mix.labels, w.path("timing_labels.tsv"))?;
    Ok(mix)
}

// ── Heads and fusion ────────────────────────────────────────────────────

fn render_log(name: &str, log: &[HeadEpoch]) -> String {
    let mut o = format!("{name}\n");
    for e in log {
        let _ = writeln!(o, "{e:?}");
    }
    o
}

pub fn heads_train_gate(w: &WorkDir, cfg: &PipelineConfig) -> Result<GateStage> {
    let c = corpus(w, cfg)?;
    let ev = events(w)?;
    let ctx = ContextIndex::build(&c, &encoder(w)?, cfg.k);
    let gs = train_gate_stage(&ev, &ctx, cfg)?;
    w.ensure_models()?;
    gs.gate.save(w.model("gate.tsv"))?;
    let mut rep = render_log("timing gate", &gs.log);
    let _ = writeln!(rep, "threshold {:?}", gs.threshold);
    write_text(&w.path("gate_report.txt"), &rep)?;
    Ok(gs)
}

pub fn heads_train_quality(w: &WorkDir, cfg: &PipelineConfig) -> Result<Vec<HeadEpoch>> {
    let c = corpus(w, cfg)?;
    let ev = events(w)?;
    let ctx = ContextIndex::build(&c, &encoder(w)?, cfg.k);
    let (q, log) = train_quality_stage(&ev, &ctx, cfg)?;
    w.ensure_models()?;
    q.save(w.model("quality.tsv"))?;
    write_text(
        &w.path("quality_report.txt"),
        &render_log("quality head", &log),
    )?;
    Ok(log)
}

/// TQP and Always-Zero on test switch events; writes the predictor table
/// and flat file.
pub fn heads_eval(w: &WorkDir, cfg: &PipelineConfig) -> Result<Vec<(String, PredictorReport)>> {
    let c = corpus(w, cfg)?;
    let ev = events(w)?;
    let ctx = ContextIndex::build(&c, &encoder(w)?, cfg.k);
    let q = QualityModel::load(w.require_model("quality.tsv", "heads train-quality")?)?;
    let reports = predictor_reports(&ev, &ctx, &q, cfg.bootstrap_resamples, cfg.seed);
    let rep = EvalReport {
        n_events: 0,
        rows: Vec::new(),
        predictors: reports.clone(),
        theta: f64::NAN,
        alpha: f64::NAN,
    };
    write_text(&w.path("predictor_report.txt"), &rep.render_table())?;
    write_text(&w.path("predictor_report.tsv"), &rep.to_flat())?;
    Ok(reports)
}

/// Counts transitions on training events and selects α on validation.
pub fn fuse_tune_alpha(w: &WorkDir, cfg: &PipelineConfig) -> Result<AlphaChoice> {
    let c = corpus(w, cfg)?;
    let ev = events(w)?;
    let ctx = ContextIndex::build(&c, &encoder(w)?, cfg.k);
    let gate = crate::heads::GateModel::load(w.require_model("gate.tsv", "heads train-gate")?)?;
    let q = QualityModel::load(w.require_model("quality.tsv", "heads train-quality")?)?;
    let counts = TransitionCounts::from_events(ev.iter().filter(|e| e.segment == Segment::Train));
    let choice = tune_fusion_stage(&ev, &ctx, &gate, &q, &counts, &cfg.fusion);
    w.ensure_models()?;
    counts.save(w.model("transition_counts.tsv"))?;
    FusionConfig {
        alpha: choice.alpha,
        ..cfg.fusion.clone()
    }
    .save(w.model("fusion.tsv"))?;
    Ok(choice)
}

/// What `fuse recommend` prints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecommendOutput {
    Advice(Advice),
    Recommendation(Recommendation),
}

/// `context` is either a JSON [`ContextFeatures`] object or a matchlog file
/// holding one player's history.
pub fn fuse_recommend(models_dir: &Path, context: &Path) -> Result<RecommendOutput> {
    let models = Models::load(models_dir)?;
    let text = std::fs::read_to_string(context).map_err(|e| Error::io(context, e))?;
    if let Ok(ctx) = serde_json::from_str::<ContextFeatures>(&text) {
        let scorer = crate::fusion::LaplaceScorer(&models.counts);
        return Ok(RecommendOutput::Recommendation(
            models.recommender(&scorer).recommend(&ctx),
        ));
    }
    let log = crate::matchlog::read_matchlog(text.as_bytes(), &models.catalog)?;
    let [history] = <[PlayerHistory; 1]>::try_from(log.histories).map_err(|h| {
        Error::Config(format!(
            "context file must hold exactly one player, found {}",
            h.len()
        ))
    })?;
    Ok(RecommendOutput::Advice(models.advise(&history)?))
}

// ── Evaluation ──────────────────────────────────────────────────────────

pub fn evaluate(
    w: &WorkDir,
    cfg: &PipelineConfig,
    policies: &[PolicyKind],
    out: &Path,
) -> Result<EvalReport> {
    let c = corpus(w, cfg)?;
    let ev = events(w)?;
    let models = Models::load(w.models())?;
    let ctx = ContextIndex::build(&c, &models.encoder, cfg.k);
    let (report, _) = evaluate_stage(&c, &ev, &ctx, &models, policies, cfg);
    report.write(out)?;
    Ok(report)
}

/// Ingest plus every stage; all artifacts land in `out`.
pub fn pipeline(
    matchlog: &Path,
    cards: &Path,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    let catalog = Catalog::load(cards)?;
    let log = load_matchlog(matchlog, &catalog)?;
    let run = run_pipeline(catalog, log.histories, log.skipped_other_modes, cfg)?;
    let w = WorkDir::new(out);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    run.write(out)?;
    let (hist, _) = apply_filters(load_matchlog(matchlog, &run.models.catalog)?.histories);
    save_matchlog(&hist, w.path("matchlog.jsonl"))?;
    run.models.catalog.save(w.path("cards.jsonl"))?;
    write_text(&w.path("filter_report.txt"), &run.filter.to_string())?;
    let mut f =
        std::fs::File::create(w.path("pipeline_config.json")).map_err(|e| Error::io(out, e))?;
    let cfg_json = serde_json::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))?;
    f.write_all(cfg_json.as_bytes())
        .map_err(|e| Error::io(out, e))?;
    info!(dir = %out.display(), "pipeline artifacts written");
    Ok(run)
}
