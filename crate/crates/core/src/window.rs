//! K-match input windows with next-match targets, and the window-level
//! mastery feature vector.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::archetype::StateId;
use crate::matchlog::{self, Catalog, Outcome, PlayerHistory, DECK_SIZE};
use crate::subtype::SubtypeLabel;

pub const DEFAULT_K: usize = 10;
pub const N_MASTERY: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionType {
    NoChange = 0,
    WithinState = 1,
    CrossState = 2,
}

impl TransitionType {
    pub fn classify(deck_changed: bool, from: StateId, to: StateId) -> Self {
        match (deck_changed, from == to) {
            (false, _) => TransitionType::NoChange,
            (true, true) => TransitionType::WithinState,
            (true, false) => TransitionType::CrossState,
        }
    }
}

/// One match as the encoder sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: StateId,
    pub outcome: Outcome,
    pub deck_changed: bool,
    pub crown_diff: i8,
    /// `ln(1 + seconds since previous match)`, 0 for a first match.
    pub gap_log: f64,
    pub avg_elixir: f64,
    /// Catalog indices of the eight cards, sorted. Values at or beyond the
    /// encoder vocabulary map to the reserved unknown-card row.
    pub cards: [u32; DECK_SIZE],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowTargets {
    pub next_dc: bool,
    pub transition: TransitionType,
    pub next_outcome: Outcome,
    pub next_crown_diff: i8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub player_id: String,
    pub start: usize,
    pub steps: Vec<Step>,
    pub targets: Option<WindowTargets>,
    pub subtype: Option<SubtypeLabel>,
}

impl Window {
    pub fn k(&self) -> usize {
        self.steps.len()
    }

    /// Index of the match right after the window.
    pub fn boundary(&self) -> usize {
        self.start + self.steps.len()
    }
}

pub fn step_at(history: &PlayerHistory, states: &[StateId], catalog: &Catalog, t: usize) -> Step {
    let m = &history.matches[t];
    let gap = if t == 0 {
        0.0
    } else {
        (m.timestamp - history.matches[t - 1].timestamp).max(0) as f64
    };
    let mut cards = [u32::MAX; DECK_SIZE];
    for (slot, id) in cards.iter_mut().zip(m.deck.cards()) {
        *slot = catalog.index_of(id).map_or(u32::MAX, |i| i as u32);
    }
    cards.sort_unstable();
    Step {
        state: states[t],
        outcome: m.outcome,
        deck_changed: history.deck_changed(t),
        crown_diff: m.crown_diff,
        gap_log: gap.ln_1p(),
        avg_elixir: m.avg_elixir,
        cards,
    }
}

/// Builds the window covering matches `[start, start + k)`; targets come
/// from match `start + k` when it exists.
pub fn build_window(
    history: &PlayerHistory,
    states: &[StateId],
    catalog: &Catalog,
    subtype: Option<SubtypeLabel>,
    start: usize,
    k: usize,
) -> Window {
    let steps = (start..start + k)
        .map(|t| step_at(history, states, catalog, t))
        .collect();
    let next = start + k;
    let targets = (next < history.len()).then(|| {
        let m = &history.matches[next];
        let dc = history.deck_changed(next);
        WindowTargets {
            next_dc: dc,
            transition: TransitionType::classify(dc, states[next - 1], states[next]),
            next_outcome: m.outcome,
            next_crown_diff: m.crown_diff,
        }
    });
    Window {
        player_id: history.player_id.clone(),
        start,
        steps,
        targets,
        subtype,
    }
}

/// Sliding windows (stride 1) inside one split segment, each with a target
/// match inside the same segment.
pub fn extract_windows(
    history: &PlayerHistory,
    states: &[StateId],
    catalog: &Catalog,
    subtype: Option<SubtypeLabel>,
    segment: Range<usize>,
    k: usize,
) -> Vec<Window> {
    matchlog::window_starts(segment, k)
        .map(|s| build_window(history, states, catalog, subtype, s, k))
        .collect()
}

// ── Mastery features ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MasteryVector {
    pub avg_win_rate: f64,
    pub avg_deck_switch_rate: f64,
    pub avg_elixir: f64,
    pub tilt_signal: u8,
    pub win_rate_trend: f64,
    pub crown_trend: f64,
    pub deck_switch_concentration: f64,
}

impl MasteryVector {
    pub fn to_array(&self) -> [f64; N_MASTERY] {
        [
            self.avg_win_rate,
            self.avg_deck_switch_rate,
            self.avg_elixir,
            f64::from(self.tilt_signal),
            self.win_rate_trend,
            self.crown_trend,
            self.deck_switch_concentration,
        ]
    }
}

/// Closed-form least-squares slope of `ys` against indices `1..=n`.
pub fn ols_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let x_mean = (n + 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = (i + 1) as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    sxy / sxx
}

pub fn mastery_features(steps: &[Step]) -> MasteryVector {
    let k = steps.len() as f64;
    let wins: Vec<f64> = steps.iter().map(|s| s.outcome.as_f64()).collect();
    let crowns: Vec<f64> = steps.iter().map(|s| f64::from(s.crown_diff)).collect();
    let tilt = steps
        .iter()
        .rev()
        .take(3)
        .filter(|s| s.outcome == Outcome::Loss)
        .count() as u8;
    let mut decks: Vec<(&[u32; DECK_SIZE], usize)> = Vec::new();
    for s in steps {
        match decks.iter_mut().find(|(d, _)| **d == s.cards) {
            Some((_, c)) => *c += 1,
            None => decks.push((&s.cards, 1)),
        }
    }
    let herfindahl = decks.iter().map(|(_, c)| (*c as f64 / k).powi(2)).sum();
    MasteryVector {
        avg_win_rate: wins.iter().sum::<f64>() / k,
        avg_deck_switch_rate: steps.iter().filter(|s| s.deck_changed).count() as f64 / k,
        avg_elixir: steps.iter().map(|s| s.avg_elixir).sum::<f64>() / k,
        tilt_signal: tilt,
        win_rate_trend: ols_slope(&wins),
        crown_trend: ols_slope(&crowns),
        deck_switch_concentration: herfindahl,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(outcome: Outcome, deck: u32, crown: i8) -> Step {
        Step {
            state: StateId(0),
            outcome,
            deck_changed: false,
            crown_diff: crown,
            gap_log: 0.0,
            avg_elixir: 3.5,
            cards: [deck, 1, 2, 3, 4, 5, 6, 7],
        }
    }

    fn naive_slope(ys: &[f64]) -> f64 {
        // normal equations on [1, x] solved directly
        let n = ys.len() as f64;
        let sx: f64 = (1..=ys.len()).map(|x| x as f64).sum();
        let sxx: f64 = (1..=ys.len()).map(|x| (x * x) as f64).sum();
        let sy: f64 = ys.iter().sum();
        let sxy: f64 = ys.iter().enumerate().map(|(i, y)| (i + 1) as f64 * y).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn tilt_counts_last_three() {
        use Outcome::*;
        let mut steps: Vec<Step> = (0..7).map(|_| step(Win, 0, 1)).collect();
        steps.extend([step(Loss, 0, -1), step(Loss, 0, -1), step(Win, 0, 1)]);
        assert_eq!(mastery_features(&steps).tilt_signal, 2);
    }

    #[test]
    fn single_deck_window() {
        let steps: Vec<Step> = (0..10).map(|_| step(Outcome::Win, 0, 2)).collect();
        let mf = mastery_features(&steps);
        assert_eq!(mf.avg_deck_switch_rate, 0.0);
        assert_eq!(mf.deck_switch_concentration, 1.0);
        assert_eq!(mf.avg_win_rate, 1.0);
        assert_eq!(mf.win_rate_trend, 0.0);
    }

    #[test]
    fn alternating_outcomes_slope_matches_normal_equations() {
        use Outcome::*;
        let w_first: Vec<Step> = (0..10)
            .map(|i| {
                if i % 2 == 0 {
                    step(Win, 0, 1)
                } else {
                    step(Loss, 0, -1)
                }
            })
            .collect();
        let l_first: Vec<Step> = (0..10)
            .map(|i| {
                if i % 2 == 0 {
                    step(Loss, 0, -1)
                } else {
                    step(Win, 0, 1)
                }
            })
            .collect();
        let a = mastery_features(&w_first).win_rate_trend;
        let b = mastery_features(&l_first).win_rate_trend;
        let ys: Vec<f64> = w_first.iter().map(|s| s.outcome.as_f64()).collect();
        assert!((a - naive_slope(&ys)).abs() < 1e-15);
        // an even-length alternation is not slope-free: the W-first sequence
        // puts its wins one index earlier on average
        assert!((a + 1.0 / 33.0).abs() < 1e-15);
        assert!((a + b).abs() < 1e-15);
    }

    #[test]
    fn concentration_bounds() {
        let distinct: Vec<Step> = (0..10).map(|d| step(Outcome::Win, 100 + d, 1)).collect();
        let mf = mastery_features(&distinct);
        assert!((mf.deck_switch_concentration - 0.1).abs() < 1e-15);
        let two: Vec<Step> = (0..10)
            .map(|d| step(Outcome::Win, 100 + d % 2, 1))
            .collect();
        assert!((mastery_features(&two).deck_switch_concentration - 0.5).abs() < 1e-15);
    }

    #[test]
    fn crown_trend_of_linear_ramp() {
        let steps: Vec<Step> = (0..6)
            .map(|i| step(Outcome::Win, 0, [1, 1, 2, 2, 3, 3][i]))
            .collect();
        let ys: Vec<f64> = steps.iter().map(|s| f64::from(s.crown_diff)).collect();
        assert!((mastery_features(&steps).crown_trend - naive_slope(&ys)).abs() < 1e-14);
    }
}
