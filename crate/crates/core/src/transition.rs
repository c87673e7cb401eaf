//! Transition and stay events at window boundaries, the matched stay
//! baseline and timing labels.
//!
//! For a window covering matches `[start, start + K)` the boundary is
//! `start + K`. `WR_current` is the window's win rate and `WR_next` the win
//! rate over the next `H` matches of the same split segment (at least
//! [`MIN_NEXT`] of them, otherwise the boundary yields no event).
//! `y_tq = WR_next - WR_current` and `net = y_tq - stay_baseline(s, u, b)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::archetype::StateId;
use crate::error::{Error, Result};
use crate::flatfile::{FlatReader, FlatWriter};
use crate::matchlog::{window_starts, PlayerHistory, Segment, SplitBounds};
use crate::seed::derive_seed;
use crate::subtype::SubtypeLabel;
use crate::window::TransitionType;

pub const HORIZON: usize = 10;
pub const MIN_NEXT: usize = 5;
pub const BUCKET_EDGES: [f64; 4] = [0.3, 0.45, 0.55, 0.7];
pub const N_BUCKETS: usize = 5;
pub const DEFAULT_MIN_SUPPORT: usize = 5;

/// Half-open buckets `[0,.3) [.3,.45) [.45,.55) [.55,.7) [.7,1]`.
pub fn wr_bucket(wr: f64) -> u8 {
    BUCKET_EDGES.iter().take_while(|&&e| wr >= e).count() as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Stay,
    Switch,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Stay => "stay",
            Action::Switch => "switch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub id: usize,
    pub player_id: String,
    pub segment: Segment,
    /// First match of the input window.
    pub start: usize,
    /// Index of the first post-boundary match.
    pub boundary: usize,
    pub action: Action,
    pub transition: TransitionType,
    pub from_state: StateId,
    pub to_state: StateId,
    pub wins_current: usize,
    pub k: usize,
    pub wins_next: usize,
    pub n_next: usize,
    pub wr_current: f64,
    pub wr_next: f64,
    pub y_tq: f64,
    pub subtype: SubtypeLabel,
    pub bucket: u8,
    pub baseline: Option<f64>,
    pub net: Option<f64>,
}

impl TransitionEvent {
    pub fn is_switch(&self) -> bool {
        self.action == Action::Switch
    }

    pub fn is_cross_state(&self) -> bool {
        self.transition == TransitionType::CrossState
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub events: usize,
    pub switches: usize,
    pub dropped_short_tail: usize,
}

/// Events for every window of `history` inside `segment`.
pub fn player_events(
    history: &PlayerHistory,
    states: &[StateId],
    subtype: SubtypeLabel,
    bounds: &SplitBounds,
    segment: Segment,
    k: usize,
    report: &mut ExtractReport,
) -> Vec<TransitionEvent> {
    let range = bounds.range(segment);
    let end = range.end;
    let mut out = Vec::new();
    for start in window_starts(range, k) {
        let boundary = start + k;
        let next_end = (boundary + HORIZON).min(end);
        let n_next = next_end - boundary;
        if n_next < MIN_NEXT {
            report.dropped_short_tail += 1;
            continue;
        }
        let wins =
            |r: std::ops::Range<usize>| r.filter(|&t| history.matches[t].outcome.is_win()).count();
        let wins_current = wins(start..boundary);
        let wins_next = wins(boundary..next_end);
        let dc = history.deck_changed(boundary);
        let from_state = states[boundary - 1];
        let to_state = if dc { states[boundary] } else { from_state };
        let wr_current = wins_current as f64 / k as f64;
        let wr_next = wins_next as f64 / n_next as f64;
        out.push(TransitionEvent {
            id: 0,
            player_id: history.player_id.clone(),
            segment,
            start,
            boundary,
            action: if dc { Action::Switch } else { Action::Stay },
            transition: TransitionType::classify(dc, from_state, states[boundary]),
            from_state,
            to_state,
            wins_current,
            k,
            wins_next,
            n_next,
            wr_current,
            wr_next,
            y_tq: wr_next - wr_current,
            subtype,
            bucket: wr_bucket(wr_current),
            baseline: None,
            net: None,
        });
    }
    report.events += out.len();
    report.switches += out.iter().filter(|e| e.is_switch()).count();
    out
}

/// One player's inputs to event extraction.
pub struct PlayerInput<'a> {
    pub history: &'a PlayerHistory,
    pub states: &'a [StateId],
    pub subtype: SubtypeLabel,
    pub bounds: SplitBounds,
}

/// Events for all players and the requested segments, in player order then
/// segment order then boundary order; ids are assigned sequentially.
pub fn extract_events(
    players: &[PlayerInput<'_>],
    segments: &[Segment],
    k: usize,
) -> (Vec<TransitionEvent>, ExtractReport) {
    let mut report = ExtractReport::default();
    let mut events = Vec::new();
    for p in players {
        for &seg in segments {
            events.extend(player_events(
                p.history,
                p.states,
                p.subtype,
                &p.bounds,
                seg,
                k,
                &mut report,
            ));
        }
    }
    for (i, e) in events.iter_mut().enumerate() {
        e.id = i;
    }
    (events, report)
}

// ── Stay baseline ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineSource {
    Cell,
    StateSubtype,
    Global,
}

impl BaselineSource {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineSource::Cell => "cell",
            BaselineSource::StateSubtype => "state_subtype",
            BaselineSource::Global => "global",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub mean: f64,
    pub support: usize,
}

type CellKey = (u8, u8, u8);

/// Mean stay `y_tq` per (state, subtype, bucket) cell with a two-level
/// fallback for cells below `min_support`.
#[derive(Debug, Clone, PartialEq)]
pub struct StayBaselineTable {
    pub min_support: usize,
    pub cells: BTreeMap<CellKey, CellStat>,
    pub state_subtype: BTreeMap<(u8, u8), CellStat>,
    pub global: CellStat,
}

fn finish<K: Ord>(acc: BTreeMap<K, (f64, usize)>) -> BTreeMap<K, CellStat> {
    acc.into_iter()
        .map(|(k, (sum, n))| {
            (
                k,
                CellStat {
                    mean: sum / n as f64,
                    support: n,
                },
            )
        })
        .collect()
}

impl StayBaselineTable {
    /// Sums run in event order, so each mean equals a plain recomputation
    /// over the cell's members.
    pub fn build(events: &[TransitionEvent], min_support: usize) -> Result<Self> {
        let mut cells: BTreeMap<CellKey, (f64, usize)> = BTreeMap::new();
        let mut su: BTreeMap<(u8, u8), (f64, usize)> = BTreeMap::new();
        let (mut sum, mut n) = (0.0, 0usize);
        for e in events.iter().filter(|e| e.action == Action::Stay) {
            let key = (e.from_state.0, e.subtype.index() as u8, e.bucket);
            let c = cells.entry(key).or_default();
            c.0 += e.y_tq;
            c.1 += 1;
            let c = su.entry((key.0, key.1)).or_default();
            c.0 += e.y_tq;
            c.1 += 1;
            sum += e.y_tq;
            n += 1;
        }
        if n == 0 {
            return Err(Error::Degenerate(
                "no stay events to build a baseline".into(),
            ));
        }
        Ok(Self {
            min_support,
            cells: finish(cells),
            state_subtype: finish(su),
            global: CellStat {
                mean: sum / n as f64,
                support: n,
            },
        })
    }

    pub fn lookup(
        &self,
        state: StateId,
        subtype: SubtypeLabel,
        bucket: u8,
    ) -> (f64, BaselineSource) {
        let u = subtype.index() as u8;
        if let Some(c) = self.cells.get(&(state.0, u, bucket)) {
            if c.support >= self.min_support {
                return (c.mean, BaselineSource::Cell);
            }
        }
        if let Some(c) = self.state_subtype.get(&(state.0, u)) {
            if c.support >= self.min_support {
                return (c.mean, BaselineSource::StateSubtype);
            }
        }
        (self.global.mean, BaselineSource::Global)
    }

    pub fn baseline_of(&self, e: &TransitionEvent) -> (f64, BaselineSource) {
        self.lookup(e.from_state, e.subtype, e.bucket)
    }

    pub fn to_flat(&self) -> String {
        let mut w = FlatWriter::new("tqp-baseline", 1);
        w.comment("stay baseline: cell = state, subtype, bucket; fields mean, support");
        w.record("min_support", [self.min_support]);
        w.record(
            "global",
            [
                self.global.mean.to_string(),
                self.global.support.to_string(),
            ],
        );
        for ((s, u), c) in &self.state_subtype {
            w.record(
                "state_subtype",
                [
                    s.to_string(),
                    u.to_string(),
                    c.mean.to_string(),
                    c.support.to_string(),
                ],
            );
        }
        for ((s, u, b), c) in &self.cells {
            w.record(
                "cell",
                [
                    s.to_string(),
                    u.to_string(),
                    b.to_string(),
                    c.mean.to_string(),
                    c.support.to_string(),
                ],
            );
        }
        w.finish()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_flat()).map_err(|e| Error::io(path, e))
    }

    pub fn from_flat(r: &FlatReader) -> Result<Self> {
        let g = r.one("global")?;
        let mut t = Self {
            min_support: r.one("min_support")?.parse_at(0)?,
            cells: BTreeMap::new(),
            state_subtype: BTreeMap::new(),
            global: CellStat {
                mean: g.parse_at(0)?,
                support: g.parse_at(1)?,
            },
        };
        for rec in r.all("state_subtype") {
            t.state_subtype.insert(
                (rec.parse_at(0)?, rec.parse_at(1)?),
                CellStat {
                    mean: rec.parse_at(2)?,
                    support: rec.parse_at(3)?,
                },
            );
        }
        for rec in r.all("cell") {
            t.cells.insert(
                (rec.parse_at(0)?, rec.parse_at(1)?, rec.parse_at(2)?),
                CellStat {
                    mean: rec.parse_at(3)?,
                    support: rec.parse_at(4)?,
                },
            );
        }
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_flat(&FlatReader::load(path, "tqp-baseline", 1)?)
    }
}

pub fn net_effect(y_tq: f64, baseline: f64) -> f64 {
    y_tq - baseline
}

/// Attaches the baseline and `ΔWR_net` to every event.
pub fn attach_net(events: &mut [TransitionEvent], table: &StayBaselineTable) {
    for e in events {
        let (b, _) = table.baseline_of(e);
        e.baseline = Some(b);
        e.net = Some(net_effect(e.y_tq, b));
    }
}

// ── Timing labels ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    GoodSwitch,
    BadSwitch,
    StayNegative,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::GoodSwitch => "good_switch",
            LabelSource::BadSwitch => "bad_switch",
            LabelSource::StayNegative => "stay_negative",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingLabel {
    pub event_id: usize,
    pub label: bool,
    pub source: LabelSource,
}

/// Positive iff the event is a switch whose net effect is strictly positive.
pub fn timing_label(e: &TransitionEvent) -> TimingLabel {
    let net = e.net.expect("net effect attached");
    let (label, source) = match e.action {
        Action::Switch if net > 0.0 => (true, LabelSource::GoodSwitch),
        Action::Switch => (false, LabelSource::BadSwitch),
        Action::Stay => (false, LabelSource::StayNegative),
    };
    TimingLabel {
        event_id: e.id,
        label,
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMix {
    /// Labels in event order.
    pub labels: Vec<TimingLabel>,
    pub n_switch: usize,
    pub n_stay_available: usize,
    pub n_stay_sampled: usize,
}

/// All switch events plus a uniform sample of stay events of equal size,
/// drawn without replacement. Uses every stay when there are fewer.
pub fn build_timing_labels(train: &[TransitionEvent], seed: u64) -> TrainingMix {
    let stays: Vec<usize> = (0..train.len())
        .filter(|&i| !train[i].is_switch())
        .collect();
    let n_switch = train.len() - stays.len();
    let mut keep = vec![false; train.len()];
    for (i, e) in train.iter().enumerate() {
        keep[i] = e.is_switch();
    }
    if stays.len() <= n_switch {
        if stays.len() < n_switch {
            warn!(
                stays = stays.len(),
                switches = n_switch,
                "fewer stay than switch events; using all stays"
            );
        }
        for &i in &stays {
            keep[i] = true;
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "timing-undersample"));
        for j in rand::seq::index::sample(&mut rng, stays.len(), n_switch) {
            keep[stays[j]] = true;
        }
    }
    let labels: Vec<TimingLabel> = train
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(e, _)| timing_label(e))
        .collect();
    let n_stay_sampled = labels.len() - n_switch;
    TrainingMix {
        labels,
        n_switch,
        n_stay_available: stays.len(),
        n_stay_sampled,
    }
}

// ── Event files ─────────────────────────────────────────────────────────

const EVENT_FIELDS: &str =
    "id player_id segment start boundary action transition from_state to_state \
wins_current k wins_next n_next wr_current wr_next y_tq subtype bucket baseline net";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

pub fn events_to_flat(events: &[TransitionEvent]) -> String {
    let mut w = FlatWriter::new("tqp-events", 1);
    w.comment(&format!("fields: {EVENT_FIELDS}"));
    for e in events {
        let transition = match e.transition {
            TransitionType::NoChange => "no_change",
            TransitionType::WithinState => "within_state",
            TransitionType::CrossState => "cross_state",
        };
        w.record(
            "event",
            [
                e.id.to_string(),
                e.player_id.clone(),
                e.segment.as_str().to_string(),
                e.start.to_string(),
                e.boundary.to_string(),
                e.action.as_str().to_string(),
                transition.to_string(),
                e.from_state.to_string(),
                e.to_state.to_string(),
                e.wins_current.to_string(),
                e.k.to_string(),
                e.wins_next.to_string(),
                e.n_next.to_string(),
                e.wr_current.to_string(),
                e.wr_next.to_string(),
                e.y_tq.to_string(),
                e.subtype.to_string(),
                e.bucket.to_string(),
                opt(e.baseline),
                opt(e.net),
            ],
        );
    }
    w.finish()
}

pub fn save_events(events: &[TransitionEvent], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, events_to_flat(events)).map_err(|e| Error::io(path, e))
}

pub fn events_from_flat(r: &FlatReader) -> Result<Vec<TransitionEvent>> {
    let mut out = Vec::new();
    for rec in r.all("event") {
        let bad = |what: &str| Error::parse(rec.line, format!("bad {what}"));
        let f = |i: usize| rec.fields.get(i).map(String::as_str).unwrap_or("");
        let optf = |i: usize| -> Result<Option<f64>> {
            match f(i) {
                "-" => Ok(None),
                _ => rec.parse_at(i).map(Some),
            }
        };
        out.push(TransitionEvent {
            id: rec.parse_at(0)?,
            player_id: f(1).to_string(),
            segment: Segment::parse(f(2)).ok_or_else(|| bad("segment"))?,
            start: rec.parse_at(3)?,
            boundary: rec.parse_at(4)?,
            action: match f(5) {
                "stay" => Action::Stay,
                "switch" => Action::Switch,
                _ => return Err(bad("action")),
            },
            transition: match f(6) {
                "no_change" => TransitionType::NoChange,
                "within_state" => TransitionType::WithinState,
                "cross_state" => TransitionType::CrossState,
                _ => return Err(bad("transition")),
            },
            from_state: StateId(rec.parse_at(7)?),
            to_state: StateId(rec.parse_at(8)?),
            wins_current: rec.parse_at(9)?,
            k: rec.parse_at(10)?,
            wins_next: rec.parse_at(11)?,
            n_next: rec.parse_at(12)?,
            wr_current: rec.parse_at(13)?,
            wr_next: rec.parse_at(14)?,
            y_tq: rec.parse_at(15)?,
            subtype: SubtypeLabel::from_index(rec.parse_at(16)?).ok_or_else(|| bad("subtype"))?,
            bucket: rec.parse_at(17)?,
            baseline: optf(18)?,
            net: optf(19)?,
        });
    }
    Ok(out)
}

pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<TransitionEvent>> {
    events_from_flat(&FlatReader::load(path, "tqp-events", 1)?)
}

pub fn save_labels(labels: &[TimingLabel], path: impl AsRef<Path>) -> Result<()> {
    let mut w = FlatWriter::new("tqp-timing-labels", 1);
    w.comment("fields: event_id label source");
    for l in labels {
        w.record(
            "label",
            [
                l.event_id.to_string(),
                u8::from(l.label).to_string(),
                l.source.to_string(),
            ],
        );
    }
    w.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matchlog::{Deck, MatchRecord, Mode, Outcome};

    fn history(outcomes: &[bool], deck_ids: &[usize]) -> PlayerHistory {
        let decks: Vec<Deck> = (0..3)
            .map(|d| Deck::new((0..8).map(|c| format!("c{}", c + d))).unwrap())
            .collect();
        PlayerHistory {
            player_id: "p".into(),
            matches: outcomes
                .iter()
                .zip(deck_ids)
                .enumerate()
                .map(|(t, (&w, &d))| MatchRecord {
                    player_id: "p".into(),
                    seq_index: t,
                    timestamp: t as i64 * 100,
                    deck: decks[d].clone(),
                    avg_elixir: 3.0,
                    outcome: if w { Outcome::Win } else { Outcome::Loss },
                    crown_diff: if w { 1 } else { -1 },
                    mode: Mode::Pvp,
                })
                .collect(),
        }
    }

    fn one_segment(h: &PlayerHistory) -> SplitBounds {
        SplitBounds {
            train_end: h.len(),
            val_end: h.len(),
            len: h.len(),
        }
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(wr_bucket(0.0), 0);
        assert_eq!(wr_bucket(0.29), 0);
        assert_eq!(wr_bucket(0.3), 1);
        assert_eq!(wr_bucket(0.45), 2);
        assert_eq!(wr_bucket(0.52), 2);
        assert_eq!(wr_bucket(0.55), 3);
        assert_eq!(wr_bucket(0.7), 4);
        assert_eq!(wr_bucket(1.0), 4);
    }

    #[test]
    fn symmetric_window_gives_zero_and_stay_keeps_state() {
        let pattern = [
            true, true, true, false, true, false, true, false, true, false,
        ];
        let outcomes: Vec<bool> = pattern.iter().chain(&pattern).copied().collect();
        let h = history(&outcomes, &[0; 20]);
        let states = vec![StateId(4); 20];
        let mut rep = ExtractReport::default();
        let ev = player_events(
            &h,
            &states,
            SubtypeLabel::Flex,
            &one_segment(&h),
            Segment::Train,
            10,
            &mut rep,
        );
        // boundaries 10..=19 see 10, 9, .., 1 next matches; fewer than 5 drops
        assert_eq!(ev.len(), 6);
        assert_eq!(rep.dropped_short_tail, 4);
        assert_eq!(ev[0].wins_current, 6);
        assert_eq!(ev[0].y_tq, 0.0);
        assert_eq!(ev[0].action, Action::Stay);
        assert_eq!(ev[0].to_state, ev[0].from_state);
    }

    #[test]
    fn switch_boundary_records_destination() {
        let outcomes = [false; 10]
            .iter()
            .chain(&[true; 10])
            .copied()
            .collect::<Vec<_>>();
        let decks: Vec<usize> = (0..20).map(|t| usize::from(t >= 10)).collect();
        let h = history(&outcomes, &decks);
        let states: Vec<StateId> = decks.iter().map(|&d| StateId(d as u8 * 3)).collect();
        let mut rep = ExtractReport::default();
        let ev = player_events(
            &h,
            &states,
            SubtypeLabel::LossReactive,
            &one_segment(&h),
            Segment::Train,
            10,
            &mut rep,
        );
        let e = &ev[0];
        assert_eq!(e.action, Action::Switch);
        assert_eq!(e.transition, TransitionType::CrossState);
        assert_eq!((e.from_state, e.to_state), (StateId(0), StateId(3)));
        assert_eq!((e.wr_current, e.wr_next, e.y_tq), (0.0, 1.0, 1.0));
    }

    #[test]
    fn net_effect_arithmetic() {
        assert!((net_effect(0.05, 0.08) + 0.03).abs() < 1e-15);
        assert_eq!(net_effect(0.2, 0.2), 0.0);
        assert!((0.6f64 - 0.4 - 0.2).abs() < 1e-15);
    }

    fn ev(id: usize, action: Action, y: f64, state: u8, bucket: u8) -> TransitionEvent {
        TransitionEvent {
            id,
            player_id: format!("p{id}"),
            segment: Segment::Train,
            start: 0,
            boundary: 10,
            action,
            transition: if action == Action::Switch {
                TransitionType::CrossState
            } else {
                TransitionType::NoChange
            },
            from_state: StateId(state),
            to_state: StateId(if action == Action::Switch {
                state + 1
            } else {
                state
            }),
            wins_current: 5,
            k: 10,
            wins_next: 5,
            n_next: 10,
            wr_current: 0.5,
            wr_next: 0.5,
            y_tq: y,
            subtype: SubtypeLabel::Flex,
            bucket,
            baseline: None,
            net: None,
        }
    }

    #[test]
    fn baseline_cell_mean_and_fallback_chain() {
        let mut events = vec![
            ev(0, Action::Stay, 0.1, 1, 2),
            ev(1, Action::Stay, -0.1, 1, 2),
        ];
        let t = StayBaselineTable::build(&events, 1).unwrap();
        assert_eq!(
            t.lookup(StateId(1), SubtypeLabel::Flex, 2),
            (0.0, BaselineSource::Cell)
        );

        // three stays in one cell plus three in a sibling bucket
        events = (0..3).map(|i| ev(i, Action::Stay, 0.1, 1, 2)).collect();
        events.extend((3..6).map(|i| ev(i, Action::Stay, 0.4, 1, 3)));
        let t = StayBaselineTable::build(&events, 5).unwrap();
        let (v, src) = t.lookup(StateId(1), SubtypeLabel::Flex, 2);
        assert_eq!(src, BaselineSource::StateSubtype);
        assert_eq!(v, (0.1 + 0.1 + 0.1 + 0.4 + 0.4 + 0.4) / 6.0);
        let (_, src) = t.lookup(StateId(7), SubtypeLabel::Flex, 2);
        assert_eq!(src, BaselineSource::Global);

        assert!(StayBaselineTable::build(&[ev(0, Action::Switch, 0.1, 1, 2)], 5).is_err());
    }

    #[test]
    fn self_mean_identity() {
        let mut events = vec![
            ev(0, Action::Stay, 0.3, 2, 1),
            ev(1, Action::Stay, -0.2, 5, 3),
        ];
        let t = StayBaselineTable::build(&events, 1).unwrap();
        attach_net(&mut events, &t);
        assert!(events.iter().all(|e| e.net == Some(0.0)));
    }

    #[test]
    fn undersampling_matches_switch_count_and_keeps_labels() {
        let mut events: Vec<TransitionEvent> = (0..100)
            .map(|i| ev(i, Action::Switch, if i % 3 == 0 { 0.2 } else { -0.1 }, 1, 2))
            .collect();
        events.extend((100..1100).map(|i| ev(i, Action::Stay, 0.0, 1, 2)));
        let t = StayBaselineTable::build(&events, 5).unwrap();
        attach_net(&mut events, &t);
        let a = build_timing_labels(&events, 1);
        assert_eq!(a.labels.len(), 200);
        let b = build_timing_labels(&events, 2);
        assert_ne!(a.labels, b.labels);
        for l in a.labels.iter().chain(&b.labels) {
            assert_eq!(l.label, timing_label(&events[l.event_id]).label);
        }
        assert_eq!(a, build_timing_labels(&events, 1));
    }

    #[test]
    fn zero_net_switch_is_negative() {
        let mut e = ev(0, Action::Switch, 0.1, 1, 2);
        e.net = Some(0.0);
        assert!(!timing_label(&e).label);
        assert_eq!(timing_label(&e).source, LabelSource::BadSwitch);
    }

    #[test]
    fn event_file_round_trip() {
        let mut events = vec![
            ev(0, Action::Stay, 0.1, 1, 2),
            ev(1, Action::Switch, -1.0 / 3.0, 4, 0),
        ];
        events[1].net = Some(0.25);
        let r = FlatReader::parse(&events_to_flat(&events), "tqp-events", 1).unwrap();
        assert_eq!(events_from_flat(&r).unwrap(), events);
        let t = StayBaselineTable::build(&events, 1).unwrap();
        let r = FlatReader::parse(&t.to_flat(), "tqp-baseline", 1).unwrap();
        assert_eq!(StayBaselineTable::from_flat(&r).unwrap(), t);
    }
}
