//! Match-log data model, ingestion, player filters and chronological splits.
//!
//! A matchlog file holds one JSON object per line:
//!
//! ```text
//! {"player_id":"p0001","timestamp":1700000000,"deck":["c01",...,"c08"],"outcome":"win","crown_diff":2,"mode":"pvp"}
//! ```
//!
//! The card catalog uses the same line-delimited style, one card per line
//! with `card_id`, `elixir_cost` and `func_type`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DECK_SIZE: usize = 8;

/// Minimum total matches a player needs to be retained.
pub const MIN_MATCHES: usize = 20;
/// Minimum observations following a loss, and following a win.
pub const MIN_POST_OUTCOME: usize = 5;

// ── Cards ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuncType {
    WinCondition,
    Spell,
    Building,
    Support,
}

impl FuncType {
    pub const ALL: [FuncType; 4] = [
        FuncType::WinCondition,
        FuncType::Spell,
        FuncType::Building,
        FuncType::Support,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Card {
    pub card_id: String,
    pub elixir_cost: u8,
    pub func_type: FuncType,
}

/// Card catalog with id lookup. Card indices follow file order and double
/// as the encoder's card vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    cards: Vec<Card>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(cards: Vec<Card>) -> Result<Self> {
        let mut index = HashMap::with_capacity(cards.len());
        for (i, card) in cards.iter().enumerate() {
            if !(1..=9).contains(&card.elixir_cost) {
                return Err(Error::parse(
                    i + 1,
                    format!(
                        "card `{}` has elixir cost {}",
                        card.card_id, card.elixir_cost
                    ),
                ));
            }
            if index.insert(card.card_id.clone(), i).is_some() {
                return Err(Error::parse(
                    i + 1,
                    format!("duplicate card `{}`", card.card_id),
                ));
            }
        }
        Ok(Self { cards, index })
    }

    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }

    pub fn cards(&self) -> &[Card] {
        &self.cards
    }

    pub fn get(&self, card_id: &str) -> Option<&Card> {
        self.index.get(card_id).map(|&i| &self.cards[i])
    }

    pub fn index_of(&self, card_id: &str) -> Option<usize> {
        self.index.get(card_id).copied()
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self> {
        let mut cards = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::parse(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let card: Card =
                serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
            cards.push(card);
        }
        Self::new(cards)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for card in &self.cards {
            serde_json::to_writer(&mut w, card)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

// ── Matches ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Win,
    Loss,
}

impl Outcome {
    pub fn is_win(self) -> bool {
        self == Outcome::Win
    }

    pub fn as_f64(self) -> f64 {
        if self.is_win() {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Pvp,
    PathOfLegend,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "pvp" => Some(Mode::Pvp),
            "path_of_legend" => Some(Mode::PathOfLegend),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Pvp => "pvp",
            Mode::PathOfLegend => "path_of_legend",
        }
    }
}

/// A deck as a set of exactly eight distinct card ids, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Deck(Vec<String>);

impl Deck {
    pub fn new<S: Into<String>>(cards: impl IntoIterator<Item = S>) -> Result<Self, String> {
        let mut cards: Vec<String> = cards.into_iter().map(Into::into).collect();
        if cards.len() != DECK_SIZE {
            return Err(format!(
                "deck must have {DECK_SIZE} cards, got {}",
                cards.len()
            ));
        }
        cards.sort();
        if cards.windows(2).any(|w| w[0] == w[1]) {
            return Err("deck contains duplicate cards".to_string());
        }
        Ok(Deck(cards))
    }

    pub fn cards(&self) -> &[String] {
        &self.0
    }

    /// Jaccard distance `1 - |A∩B| / |A∪B|`.
    pub fn jaccard_distance(&self, other: &Deck) -> f64 {
        let a: HashSet<&str> = self.0.iter().map(String::as_str).collect();
        let inter = other.0.iter().filter(|c| a.contains(c.as_str())).count();
        let union = 2 * DECK_SIZE - inter;
        1.0 - inter as f64 / union as f64
    }

    pub fn avg_elixir(&self, catalog: &Catalog) -> Result<f64> {
        let mut total = 0u32;
        for c in &self.0 {
            let card = catalog
                .get(c)
                .ok_or_else(|| Error::UnknownCard(c.clone()))?;
            total += u32::from(card.elixir_cost);
        }
        Ok(f64::from(total) / DECK_SIZE as f64)
    }
}

impl fmt::Display for Deck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.0.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    pub player_id: String,
    pub seq_index: usize,
    pub timestamp: i64,
    pub deck: Deck,
    pub avg_elixir: f64,
    pub outcome: Outcome,
    pub crown_diff: i8,
    pub mode: Mode,
}

/// Wire form of one matchlog line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchLine {
    pub player_id: String,
    pub timestamp: i64,
    pub deck: Vec<String>,
    pub outcome: Outcome,
    pub crown_diff: i8,
    pub mode: String,
}

impl From<&MatchRecord> for MatchLine {
    fn from(m: &MatchRecord) -> Self {
        MatchLine {
            player_id: m.player_id.clone(),
            timestamp: m.timestamp,
            deck: m.deck.cards().to_vec(),
            outcome: m.outcome,
            crown_diff: m.crown_diff,
            mode: m.mode.as_str().to_string(),
        }
    }
}

/// Checks the crown/outcome agreement rule. Ties are rejected.
pub fn validate_crowns(outcome: Outcome, crown_diff: i8) -> Result<(), String> {
    if !(-3..=3).contains(&crown_diff) {
        return Err(format!("crown_diff {crown_diff} outside [-3, 3]"));
    }
    match outcome {
        Outcome::Win if crown_diff < 1 => Err(format!("win with crown_diff {crown_diff}")),
        Outcome::Loss if crown_diff > -1 => Err(format!("loss with crown_diff {crown_diff}")),
        _ => Ok(()),
    }
}

/// Validates deck membership against the catalog and returns the deck with
/// its mean elixir cost.
pub fn validate_deck(cards: &[String], catalog: &Catalog) -> Result<(Deck, f64), String> {
    let deck = Deck::new(cards.iter().cloned())?;
    for c in deck.cards() {
        if catalog.get(c).is_none() {
            return Err(format!("unknown card `{c}`"));
        }
    }
    let avg = deck.avg_elixir(catalog).map_err(|e| e.to_string())?;
    Ok((deck, avg))
}

// ── Histories ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct PlayerHistory {
    pub player_id: String,
    pub matches: Vec<MatchRecord>,
}

impl PlayerHistory {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// `dc_t`: whether match `t` used a different deck than match `t-1`.
    /// `dc_0` is false.
    pub fn deck_changed(&self, t: usize) -> bool {
        t > 0 && self.matches[t].deck != self.matches[t - 1].deck
    }

    pub fn deck_changes(&self) -> Vec<bool> {
        (0..self.len()).map(|t| self.deck_changed(t)).collect()
    }

    /// Number of matches at `t >= 1` whose predecessor ended in a loss and in a win.
    pub fn post_outcome_counts(&self) -> (usize, usize) {
        let mut after_loss = 0;
        let mut after_win = 0;
        for pair in self.matches.windows(2) {
            match pair[0].outcome {
                Outcome::Loss => after_loss += 1,
                Outcome::Win => after_win += 1,
            }
        }
        (after_loss, after_win)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Matchlog {
    pub histories: Vec<PlayerHistory>,
    /// Lines dropped because their mode is not a 1v1 competitive mode.
    pub skipped_other_modes: usize,
}

/// Parses a matchlog. Records are grouped by player (players ordered by id),
/// stably sorted by timestamp, and assigned `seq_index` 0..n.
pub fn read_matchlog(reader: impl BufRead, catalog: &Catalog) -> Result<Matchlog> {
    let mut by_player: BTreeMap<String, Vec<MatchRecord>> = BTreeMap::new();
    let mut skipped = 0;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MatchLine =
            serde_json::from_str(&line).map_err(|e| Error::parse(lineno, e.to_string()))?;
        let Some(mode) = Mode::parse(&rec.mode) else {
            skipped += 1;
            continue;
        };
        let (deck, avg_elixir) =
            validate_deck(&rec.deck, catalog).map_err(|m| Error::parse(lineno, m))?;
        validate_crowns(rec.outcome, rec.crown_diff).map_err(|m| Error::parse(lineno, m))?;
        by_player
            .entry(rec.player_id.clone())
            .or_default()
            .push(MatchRecord {
                player_id: rec.player_id,
                seq_index: 0,
                timestamp: rec.timestamp,
                deck,
                avg_elixir,
                outcome: rec.outcome,
                crown_diff: rec.crown_diff,
                mode,
            });
    }
    let histories = by_player
        .into_iter()
        .map(|(player_id, mut matches)| {
            matches.sort_by_key(|m| m.timestamp);
            for (i, m) in matches.iter_mut().enumerate() {
                m.seq_index = i;
            }
            PlayerHistory { player_id, matches }
        })
        .collect();
    Ok(Matchlog {
        histories,
        skipped_other_modes: skipped,
    })
}

pub fn load_matchlog(path: impl AsRef<Path>, catalog: &Catalog) -> Result<Matchlog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_matchlog(BufReader::new(file), catalog)
}

pub fn write_matchlog<'a>(
    histories: impl IntoIterator<Item = &'a PlayerHistory>,
    mut w: impl Write,
) -> std::io::Result<()> {
    for h in histories {
        for m in &h.matches {
            serde_json::to_writer(&mut w, &MatchLine::from(m))?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn save_matchlog(histories: &[PlayerHistory], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_matchlog(histories, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

// ── Filters ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_players: usize,
    pub skipped_other_modes: usize,
    pub removed_too_few_matches: usize,
    pub removed_few_post_loss: usize,
    pub removed_few_post_win: usize,
    pub retained_players: usize,
    pub retained_matches: usize,
}

impl fmt::Display for FilterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "input_players\t{}", self.input_players)?;
        writeln!(f, "skipped_other_modes\t{}", self.skipped_other_modes)?;
        writeln!(
            f,
            "removed_too_few_matches\t{}",
            self.removed_too_few_matches
        )?;
        writeln!(f, "removed_few_post_loss\t{}", self.removed_few_post_loss)?;
        writeln!(f, "removed_few_post_win\t{}", self.removed_few_post_win)?;
        writeln!(f, "retained_players\t{}", self.retained_players)?;
        write!(f, "retained_matches\t{}", self.retained_matches)
    }
}

/// Keeps players with at least 20 matches, 5 post-loss and 5 post-win
/// observations. Each removed player is charged to the first rule it fails.
pub fn apply_filters(histories: Vec<PlayerHistory>) -> (Vec<PlayerHistory>, FilterReport) {
    let mut report = FilterReport {
        input_players: histories.len(),
        ..Default::default()
    };
    let kept: Vec<PlayerHistory> = histories
        .into_iter()
        .filter(|h| {
            if h.len() < MIN_MATCHES {
                report.removed_too_few_matches += 1;
                return false;
            }
            let (after_loss, after_win) = h.post_outcome_counts();
            if after_loss < MIN_POST_OUTCOME {
                report.removed_few_post_loss += 1;
                return false;
            }
            if after_win < MIN_POST_OUTCOME {
                report.removed_few_post_win += 1;
                return false;
            }
            true
        })
        .collect();
    report.retained_players = kept.len();
    report.retained_matches = kept.iter().map(PlayerHistory::len).sum();
    (kept, report)
}

// ── Splits ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Train,
    Val,
    Test,
}

impl Segment {
    pub const ALL: [Segment; 3] = [Segment::Train, Segment::Val, Segment::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Train => "train",
            Segment::Val => "val",
            Segment::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Segment> {
        Segment::ALL.into_iter().find(|seg| seg.as_str() == s)
    }
}

/// Per-player chronological boundaries: `[0, train_end)` train,
/// `[train_end, val_end)` validation, `[val_end, len)` test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub train_end: usize,
    pub val_end: usize,
    pub len: usize,
}

impl SplitBounds {
    pub fn new(len: usize, ratios: (f64, f64, f64)) -> Self {
        // The epsilon keeps products like 0.8 * 20 from flooring to 15.
        let train = ((ratios.0 * len as f64) + 1e-9).floor() as usize;
        let val = ((ratios.1 * len as f64) + 1e-9).floor() as usize;
        let train_end = train.min(len);
        let val_end = (train_end + val).min(len);
        Self {
            train_end,
            val_end,
            len,
        }
    }

    pub fn range(&self, seg: Segment) -> Range<usize> {
        match seg {
            Segment::Train => 0..self.train_end,
            Segment::Val => self.train_end..self.val_end,
            Segment::Test => self.val_end..self.len,
        }
    }

    pub fn segment_of(&self, index: usize) -> Segment {
        if index < self.train_end {
            Segment::Train
        } else if index < self.val_end {
            Segment::Val
        } else {
            Segment::Test
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub bounds: BTreeMap<String, SplitBounds>,
}

impl SplitAssignment {
    pub fn get(&self, player_id: &str) -> Option<&SplitBounds> {
        self.bounds.get(player_id)
    }
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.8, 0.1, 0.1);

pub fn make_splits(histories: &[PlayerHistory], ratios: (f64, f64, f64)) -> SplitAssignment {
    SplitAssignment {
        bounds: histories
            .iter()
            .map(|h| (h.player_id.clone(), SplitBounds::new(h.len(), ratios)))
            .collect(),
    }
}

/// Start indices of all K-windows inside `segment` that still have a target
/// match inside the segment: `count = len - K` when `len >= K + 1`.
pub fn window_starts(segment: Range<usize>, k: usize) -> Range<usize> {
    if segment.len() < k + 1 {
        return segment.start..segment.start;
    }
    segment.start..segment.end - k
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_catalog() -> Catalog {
        let cards = (0..12)
            .map(|i| Card {
                card_id: format!("c{i:02}"),
                elixir_cost: (i % 9 + 1) as u8,
                func_type: FuncType::ALL[i % 4],
            })
            .collect();
        Catalog::new(cards).unwrap()
    }

    fn line(player: &str, ts: i64, deck: &[&str], outcome: &str, cd: i8) -> String {
        format!(
            r#"{{"player_id":"{player}","timestamp":{ts},"deck":{deck:?},"outcome":"{outcome}","crown_diff":{cd},"mode":"pvp"}}"#
        )
    }

    const D1: [&str; 8] = ["c00", "c01", "c02", "c03", "c04", "c05", "c06", "c07"];
    const D2: [&str; 8] = ["c00", "c01", "c02", "c03", "c04", "c05", "c06", "c08"];

    #[test]
    fn three_lines_one_player() {
        let text = [
            line("p", 30, &D1, "win", 1),
            line("p", 10, &D1, "loss", -2),
            line("p", 20, &D2, "win", 3),
        ]
        .join("\n");
        let log = read_matchlog(text.as_bytes(), &toy_catalog()).unwrap();
        assert_eq!(log.histories.len(), 1);
        let h = &log.histories[0];
        let seq: Vec<_> = h.matches.iter().map(|m| m.seq_index).collect();
        assert_eq!(seq, vec![0, 1, 2]);
        let ts: Vec<_> = h.matches.iter().map(|m| m.timestamp).collect();
        assert_eq!(ts, vec![10, 20, 30]);
        assert_eq!(h.deck_changes(), vec![false, true, true]);
    }

    #[test]
    fn seven_card_deck_names_line() {
        let text = [
            line("p", 1, &D1, "win", 1),
            line("p", 2, &D1[..7], "win", 1),
        ]
        .join("\n");
        match read_matchlog(text.as_bytes(), &toy_catalog()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("8 cards"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn tie_and_sign_mismatch_rejected() {
        for (outcome, cd) in [("win", 0), ("loss", 0), ("win", -1), ("loss", 2)] {
            let text = line("p", 1, &D1, outcome, cd);
            assert!(matches!(
                read_matchlog(text.as_bytes(), &toy_catalog()),
                Err(Error::Parse { line: 1, .. })
            ));
        }
    }

    #[test]
    fn unknown_card_rejected_and_other_modes_skipped() {
        let bad = line(
            "p",
            1,
            &["c00", "c01", "c02", "c03", "c04", "c05", "c06", "zz"],
            "win",
            1,
        );
        assert!(read_matchlog(bad.as_bytes(), &toy_catalog()).is_err());
        let other = line("p", 1, &D1, "win", 1).replace("\"pvp\"", "\"2v2\"");
        let log = read_matchlog(other.as_bytes(), &toy_catalog()).unwrap();
        assert_eq!(log.skipped_other_modes, 1);
        assert!(log.histories.is_empty());
    }

    #[test]
    fn empty_file_is_empty_list() {
        let log = read_matchlog("".as_bytes(), &toy_catalog()).unwrap();
        assert!(log.histories.is_empty());
    }

    #[test]
    fn interleaved_players_match_sort_then_group_oracle() {
        let raw = vec![
            ("b", 5),
            ("a", 9),
            ("b", 1),
            ("a", 3),
            ("a", 7),
            ("b", 3),
            ("a", 1),
        ];
        let text = raw
            .iter()
            .map(|(p, t)| line(p, *t, &D1, "win", 1))
            .collect::<Vec<_>>()
            .join("\n");
        let log = read_matchlog(text.as_bytes(), &toy_catalog()).unwrap();

        let mut oracle = raw.clone();
        oracle.sort_by(|x, y| x.0.cmp(y.0).then(x.1.cmp(&y.1)));
        let got: Vec<(&str, i64)> = log
            .histories
            .iter()
            .flat_map(|h| {
                h.matches
                    .iter()
                    .map(move |m| (h.player_id.as_str(), m.timestamp))
            })
            .collect();
        assert_eq!(got, oracle);
        assert_eq!(log.histories.len(), 2);
    }

    fn history(outcomes: &[Outcome]) -> PlayerHistory {
        let deck = Deck::new(D1).unwrap();
        PlayerHistory {
            player_id: "p".into(),
            matches: outcomes
                .iter()
                .enumerate()
                .map(|(i, &outcome)| MatchRecord {
                    player_id: "p".into(),
                    seq_index: i,
                    timestamp: i as i64,
                    deck: deck.clone(),
                    avg_elixir: 4.0,
                    outcome,
                    crown_diff: if outcome.is_win() { 1 } else { -1 },
                    mode: Mode::Pvp,
                })
                .collect(),
        }
    }

    #[test]
    fn filter_rules() {
        use Outcome::*;
        let nineteen = history(&[Win, Loss].repeat(10)[..19]);
        let all_wins = history(&[Win; 30]);
        // 25 matches alternating: 12 post-loss, 12 post-win observations
        let mixed = history(&[Win, Loss].repeat(13)[..25]);
        let (after_loss, after_win) = mixed.post_outcome_counts();
        assert!(after_loss >= 10 && after_win >= 10);

        let (kept, report) = apply_filters(vec![nineteen, all_wins, mixed]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].len(), 25);
        assert_eq!(report.removed_too_few_matches, 1);
        assert_eq!(report.removed_few_post_loss, 1);
        assert_eq!(report.retained_players, 1);
    }

    #[test]
    fn split_arithmetic() {
        let cases = [(100, (80, 10, 10)), (23, (18, 2, 3)), (20, (16, 2, 2))];
        for (n, (tr, va, te)) in cases {
            let b = SplitBounds::new(n, DEFAULT_SPLIT);
            assert_eq!(b.range(Segment::Train).len(), tr, "n={n}");
            assert_eq!(b.range(Segment::Val).len(), va, "n={n}");
            assert_eq!(b.range(Segment::Test).len(), te, "n={n}");
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_starts(0..11, 10).len(), 1);
        assert_eq!(window_starts(0..20, 10).len(), 10);
        assert_eq!(window_starts(0..10, 10).len(), 0);
        assert_eq!(window_starts(80..90, 10).len(), 0);
        assert_eq!(window_starts(80..100, 10), 80..90);
    }

    #[test]
    fn jaccard_one_card_swap() {
        let a = Deck::new(["a", "b", "c", "d", "e", "f", "g", "h"]).unwrap();
        let b = Deck::new(["a", "b", "c", "d", "e", "f", "g", "i"]).unwrap();
        assert!((a.jaccard_distance(&b) - 2.0 / 9.0).abs() < 1e-15);
        assert_eq!(a.jaccard_distance(&a), 0.0);
    }
}
