//! Synthetic match-log populations with planted archetypes, behavioral
//! subtypes, mastery dynamics and loss-reactive switching.
//!
//! Each player follows a small automaton: after every match a switch is
//! sampled from the subtype's post-outcome probability; a switch is either
//! a within-state card swap or a cross-state overhaul. The latent win
//! probability is `clamp(tier base + state affinity + state meta offset +
//! mastery - opponent meta, 0.05, 0.95)`. Mastery grows with consecutive
//! use of the same deck and is partially lost on every switch.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archetype::{StateId, N_STATES};
use crate::error::{Error, Result};
use crate::matchlog::{Card, Catalog, Deck, FuncType, MatchRecord, Mode, Outcome, PlayerHistory};
use crate::seed::derive_seed;
use crate::subtype::SubtypeLabel;

/// Number of interchangeable cards for every (func_type, cost) pair.
pub const VARIANTS: usize = 2;

type Slot = (FuncType, u8);

const W: FuncType = FuncType::WinCondition;
const S: FuncType = FuncType::Spell;
const B: FuncType = FuncType::Building;
const U: FuncType = FuncType::Support;

/// Planted archetype templates, one per strategy state. Only cost and
/// function enter the deck features, so variants of a slot are equivalent.
pub const TEMPLATES: [[Slot; 8]; N_STATES] = [
    // 0 all-in beatdown
    [
        (W, 7),
        (W, 5),
        (S, 2),
        (S, 4),
        (U, 6),
        (U, 5),
        (U, 4),
        (U, 3),
    ],
    // 1 unit-heavy control
    [
        (W, 4),
        (S, 2),
        (U, 5),
        (U, 5),
        (U, 4),
        (U, 4),
        (U, 3),
        (U, 3),
    ],
    // 2 standard control
    [
        (W, 4),
        (S, 3),
        (S, 2),
        (B, 4),
        (U, 5),
        (U, 4),
        (U, 3),
        (U, 2),
    ],
    // 3 bridge spam
    [
        (W, 4),
        (W, 4),
        (S, 2),
        (S, 3),
        (U, 5),
        (U, 4),
        (U, 3),
        (U, 2),
    ],
    // 4 classic cycle
    [
        (W, 3),
        (S, 2),
        (S, 4),
        (B, 3),
        (U, 1),
        (U, 2),
        (U, 3),
        (U, 4),
    ],
    // 5 classic beatdown
    [
        (W, 7),
        (S, 2),
        (S, 4),
        (U, 5),
        (U, 4),
        (U, 3),
        (U, 4),
        (U, 3),
    ],
    // 6 defensive heavy
    [
        (W, 6),
        (S, 3),
        (S, 2),
        (B, 5),
        (U, 5),
        (U, 4),
        (U, 4),
        (U, 3),
    ],
    // 7 hyper cycle
    [
        (W, 3),
        (S, 2),
        (S, 1),
        (U, 1),
        (U, 1),
        (U, 2),
        (U, 2),
        (U, 3),
    ],
    // 8 three musketeers
    [
        (W, 9),
        (S, 2),
        (U, 4),
        (U, 3),
        (U, 2),
        (U, 2),
        (U, 1),
        (U, 3),
    ],
    // 9 siege / heavy control
    [
        (B, 6),
        (B, 4),
        (S, 4),
        (S, 2),
        (U, 5),
        (U, 3),
        (U, 2),
        (U, 3),
    ],
    // 10 defensive heavy variant
    [
        (W, 6),
        (W, 5),
        (S, 4),
        (B, 5),
        (U, 6),
        (U, 4),
        (U, 3),
        (U, 2),
    ],
    // 11 off-meta cycle
    [
        (W, 2),
        (S, 2),
        (S, 3),
        (B, 3),
        (B, 2),
        (U, 1),
        (U, 2),
        (U, 3),
    ],
    // 12 spell cycle / troll
    [
        (W, 4),
        (S, 2),
        (S, 3),
        (S, 4),
        (S, 6),
        (B, 3),
        (U, 1),
        (U, 2),
    ],
];

// ── Config ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtypeParams {
    pub p_switch_after_loss: f64,
    pub p_switch_after_win: f64,
    pub within_state_adjust_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_players: usize,
    pub matches_min: usize,
    pub matches_max: usize,
    /// Loyalist / Loss-Reactive / Flex shares.
    pub subtype_mix: [f64; 3],
    pub subtypes: [SubtypeParams; 3],
    pub tier_mix: Vec<f64>,
    /// Base win rate of each skill tier.
    pub base_winrate: Vec<f64>,
    /// Spread of the per-player, per-state affinity offset (uniform).
    pub state_affinity_sd: f64,
    pub mastery_gain: f64,
    pub mastery_cap: f64,
    pub mastery_retain_cross: f64,
    pub mastery_retain_within: f64,
    pub state_meta_penalty: BTreeMap<u8, f64>,
    pub opponent_meta: f64,
    /// Probability that a freshly built deck has one slot shifted by ±1 elixir.
    pub deck_noise_prob: f64,
    /// Probability that a Flex player off their primary state returns to it.
    pub flex_return_prob: f64,
    pub path_of_legend_share: f64,
    pub rng_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_players: 2000,
            matches_min: 180,
            matches_max: 220,
            subtype_mix: [0.481, 0.160, 0.359],
            subtypes: [
                SubtypeParams {
                    p_switch_after_loss: 0.0,
                    p_switch_after_win: 0.0,
                    within_state_adjust_prob: 0.5,
                },
                SubtypeParams {
                    p_switch_after_loss: 0.487,
                    p_switch_after_win: 0.064,
                    within_state_adjust_prob: 0.3,
                },
                SubtypeParams {
                    p_switch_after_loss: 0.148,
                    p_switch_after_win: 0.066,
                    within_state_adjust_prob: 0.4,
                },
            ],
            tier_mix: vec![0.3, 0.4, 0.3],
            base_winrate: vec![0.46, 0.50, 0.54],
            state_affinity_sd: 0.04,
            mastery_gain: 0.005,
            mastery_cap: 0.06,
            mastery_retain_cross: 0.4,
            mastery_retain_within: 0.8,
            state_meta_penalty: BTreeMap::from([(12, -0.08)]),
            opponent_meta: 0.0,
            deck_noise_prob: 0.15,
            flex_return_prob: 0.7,
            path_of_legend_share: 0.2,
            rng_seed: 7,
        }
    }
}

fn prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {p} is not a probability")))
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let mix: f64 = self.subtype_mix.iter().sum();
        if (mix - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("subtype_mix sums to {mix}")));
        }
        for (i, p) in self.subtype_mix.iter().enumerate() {
            prob(&format!("subtype_mix[{i}]"), *p)?;
        }
        for (i, s) in self.subtypes.iter().enumerate() {
            prob(&format!("p_switch_after_loss[{i}]"), s.p_switch_after_loss)?;
            prob(&format!("p_switch_after_win[{i}]"), s.p_switch_after_win)?;
            prob(
                &format!("within_state_adjust_prob[{i}]"),
                s.within_state_adjust_prob,
            )?;
        }
        if self.tier_mix.is_empty() || self.tier_mix.len() != self.base_winrate.len() {
            return Err(Error::Config("tier_mix and base_winrate must align".into()));
        }
        let tiers: f64 = self.tier_mix.iter().sum();
        if (tiers - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("tier_mix sums to {tiers}")));
        }
        for p in self.tier_mix.iter().chain(&self.base_winrate) {
            prob("tier value", *p)?;
        }
        for &s in self.state_meta_penalty.keys() {
            if usize::from(s) >= N_STATES {
                return Err(Error::Config(format!(
                    "state_meta_penalty names state {s}, which has no deck template"
                )));
            }
        }
        prob("mastery_retain_cross", self.mastery_retain_cross)?;
        prob("mastery_retain_within", self.mastery_retain_within)?;
        prob("deck_noise_prob", self.deck_noise_prob)?;
        prob("flex_return_prob", self.flex_return_prob)?;
        prob("path_of_legend_share", self.path_of_legend_share)?;
        if self.mastery_gain < 0.0 || self.mastery_cap < 0.0 || self.state_affinity_sd < 0.0 {
            return Err(Error::Config(
                "mastery and affinity parameters must be >= 0".into(),
            ));
        }
        if self.matches_min == 0 || self.matches_min > self.matches_max {
            return Err(Error::Config("need 0 < matches_min <= matches_max".into()));
        }
        Ok(())
    }

    /// Parses the flat `key = value` config format. Unknown keys are errors;
    /// missing keys keep their defaults. List values are comma-separated and
    /// `state_meta_penalty` is a list of `state:offset` pairs.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<f64> {
                v.trim()
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("bad number `{v}`")))
            };
            let list = |v: &str| -> Result<Vec<f64>> { v.split(',').map(num).collect() };
            let triple = |v: &str| -> Result<[f64; 3]> {
                list(v)?
                    .try_into()
                    .map_err(|_| Error::parse(lineno, format!("`{key}` needs three values")))
            };
            let int = |v: &str| -> Result<usize> {
                v.parse()
                    .map_err(|_| Error::parse(lineno, format!("bad integer `{v}`")))
            };
            match key {
                "n_players" => cfg.n_players = int(value)?,
                "matches_min" => cfg.matches_min = int(value)?,
                "matches_max" => cfg.matches_max = int(value)?,
                "subtype_mix" => cfg.subtype_mix = triple(value)?,
                "p_switch_after_loss" => {
                    for (s, v) in cfg.subtypes.iter_mut().zip(triple(value)?) {
                        s.p_switch_after_loss = v;
                    }
                }
                "p_switch_after_win" => {
                    for (s, v) in cfg.subtypes.iter_mut().zip(triple(value)?) {
                        s.p_switch_after_win = v;
                    }
                }
                "within_state_adjust_prob" => {
                    for (s, v) in cfg.subtypes.iter_mut().zip(triple(value)?) {
                        s.within_state_adjust_prob = v;
                    }
                }
                "tier_mix" => cfg.tier_mix = list(value)?,
                "base_winrate" => cfg.base_winrate = list(value)?,
                "state_affinity_sd" => cfg.state_affinity_sd = num(value)?,
                "mastery_gain" => cfg.mastery_gain = num(value)?,
                "mastery_cap" => cfg.mastery_cap = num(value)?,
                "mastery_retain_cross" => cfg.mastery_retain_cross = num(value)?,
                "mastery_retain_within" => cfg.mastery_retain_within = num(value)?,
                "state_meta_penalty" => {
                    cfg.state_meta_penalty.clear();
                    for pair in value.split(',').filter(|p| !p.trim().is_empty()) {
                        let (s, v) = pair
                            .split_once(':')
                            .ok_or_else(|| Error::parse(lineno, "expected `state:offset`"))?;
                        let s: u8 = s
                            .trim()
                            .parse()
                            .map_err(|_| Error::parse(lineno, format!("bad state `{s}`")))?;
                        cfg.state_meta_penalty.insert(s, num(v)?);
                    }
                }
                "opponent_meta" => cfg.opponent_meta = num(value)?,
                "deck_noise_prob" => cfg.deck_noise_prob = num(value)?,
                "flex_return_prob" => cfg.flex_return_prob = num(value)?,
                "path_of_legend_share" => cfg.path_of_legend_share = num(value)?,
                "rng_seed" => {
                    cfg.rng_seed = value
                        .parse()
                        .map_err(|_| Error::parse(lineno, format!("bad seed `{value}`")))?
                }
                other => return Err(Error::parse(lineno, format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let per =
            |f: fn(&SubtypeParams) -> f64| join(&self.subtypes.iter().map(f).collect::<Vec<_>>());
        let penalty = self
            .state_meta_penalty
            .iter()
            .map(|(s, v)| format!("{s}:{v}"))
            .collect::<Vec<_>>()
            .join(",");
        [
            format!("n_players = {}", self.n_players),
            format!("matches_min = {}", self.matches_min),
            format!("matches_max = {}", self.matches_max),
            format!("subtype_mix = {}", join(&self.subtype_mix)),
            format!("p_switch_after_loss = {}", per(|s| s.p_switch_after_loss)),
            format!("p_switch_after_win = {}", per(|s| s.p_switch_after_win)),
            format!(
                "within_state_adjust_prob = {}",
                per(|s| s.within_state_adjust_prob)
            ),
            format!("tier_mix = {}", join(&self.tier_mix)),
            format!("base_winrate = {}", join(&self.base_winrate)),
            format!("state_affinity_sd = {}", self.state_affinity_sd),
            format!("mastery_gain = {}", self.mastery_gain),
            format!("mastery_cap = {}", self.mastery_cap),
            format!("mastery_retain_cross = {}", self.mastery_retain_cross),
            format!("mastery_retain_within = {}", self.mastery_retain_within),
            format!("state_meta_penalty = {penalty}"),
            format!("opponent_meta = {}", self.opponent_meta),
            format!("deck_noise_prob = {}", self.deck_noise_prob),
            format!("flex_return_prob = {}", self.flex_return_prob),
            format!("path_of_legend_share = {}", self.path_of_legend_share),
            format!("rng_seed = {}", self.rng_seed),
        ]
        .join("\n")
            + "\n"
    }
}

// ── Cards ───────────────────────────────────────────────────────────────

fn card_id(func: FuncType, cost: u8, variant: usize) -> String {
    let tag = match func {
        FuncType::WinCondition => "wc",
        FuncType::Spell => "sp",
        FuncType::Building => "bd",
        FuncType::Support => "su",
    };
    format!("{tag}{cost}{}", (b'a' + variant as u8) as char)
}

/// Every (func_type, cost 1..9) pair with two interchangeable variants: 72 cards.
pub fn generate_cards(_cfg: &GeneratorConfig) -> Catalog {
    let mut cards = Vec::new();
    for func in FuncType::ALL {
        for cost in 1..=9u8 {
            for v in 0..VARIANTS {
                cards.push(Card {
                    card_id: card_id(func, cost, v),
                    elixir_cost: cost,
                    func_type: func,
                });
            }
        }
    }
    Catalog::new(cards).expect("generated catalog is valid")
}

/// The noise-free deck of a template using variant `a` everywhere it can.
/// Repeated slots take successive variants so the cards stay distinct.
pub fn template_deck(state: StateId) -> Deck {
    let slots = TEMPLATES[state.index()];
    let mut used: Vec<String> = Vec::new();
    for (f, c) in slots {
        let id = (0..VARIANTS)
            .map(|v| card_id(f, c, v))
            .find(|id| !used.contains(id))
            .expect("at most two repeats per slot");
        used.push(id);
    }
    Deck::new(used).expect("template deck valid")
}

fn build_deck(state: StateId, noise_prob: f64, rng: &mut impl Rng) -> Deck {
    let mut slots = TEMPLATES[state.index()];
    if rng.random::<f64>() < noise_prob {
        let i = rng.random_range(0..slots.len());
        let up = rng.random::<bool>();
        let (f, c) = slots[i];
        let shifted = (f, if up { (c + 1).min(9) } else { (c - 1).max(1) });
        // a slot can repeat at most as often as it has variants
        if slots.iter().filter(|&&s| s == shifted).count() < VARIANTS {
            slots[i] = shifted;
        }
    }
    loop {
        let cards: Vec<String> = slots
            .iter()
            .map(|&(f, c)| card_id(f, c, rng.random_range(0..VARIANTS)))
            .collect();
        if let Ok(deck) = Deck::new(cards) {
            return deck;
        }
    }
}

/// Replaces one card with another variant of the same slot; the deck set
/// changes but its structural features do not.
fn adjust_deck(deck: &Deck, catalog: &Catalog, rng: &mut impl Rng) -> Deck {
    loop {
        let cards = deck.cards();
        let i = rng.random_range(0..cards.len());
        let card = catalog.get(&cards[i]).expect("generated card");
        let replacement: Vec<String> = (0..VARIANTS)
            .map(|v| card_id(card.func_type, card.elixir_cost, v))
            .filter(|id| !cards.contains(id))
            .collect();
        if let Some(new) = replacement.choose(rng) {
            let mut next = cards.to_vec();
            next[i] = new.clone();
            return Deck::new(next).expect("distinct cards");
        }
    }
}

// ── Population ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerTruth {
    pub player_id: String,
    pub subtype: SubtypeLabel,
    pub tier: usize,
    pub primary_state: u8,
    /// Latent win probability of each match.
    pub win_prob: Vec<f64>,
}

/// Ground truth emitted next to the matchlog. The pipeline never reads it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub players: Vec<PlayerTruth>,
    /// Planted archetype of every generated deck.
    pub decks: BTreeMap<Deck, StateId>,
}

impl GroundTruth {
    pub fn subtype_of(&self, player_id: &str) -> Option<SubtypeLabel> {
        self.players
            .iter()
            .find(|p| p.player_id == player_id)
            .map(|p| p.subtype)
    }
}

#[derive(Debug, Clone)]
pub struct Population {
    pub catalog: Catalog,
    pub histories: Vec<PlayerHistory>,
    pub truth: GroundTruth,
}

fn pick_weighted(weights: &[f64], rng: &mut impl Rng) -> usize {
    let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn crowns(outcome: Outcome, rng: &mut impl Rng) -> i8 {
    let magnitude = match rng.random::<f64>() {
        x if x < 0.55 => 1,
        x if x < 0.85 => 2,
        _ => 3,
    };
    if outcome.is_win() {
        magnitude
    } else {
        -magnitude
    }
}

struct Generated {
    history: PlayerHistory,
    truth: PlayerTruth,
    decks: Vec<(Deck, StateId)>,
}

fn generate_player(cfg: &GeneratorConfig, catalog: &Catalog, index: usize) -> Generated {
    let player_id = format!("p{index:05}");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, &player_id));
    let subtype = SubtypeLabel::ALL[pick_weighted(&cfg.subtype_mix, &mut rng)];
    let params = &cfg.subtypes[subtype.index()];
    let tier = pick_weighted(&cfg.tier_mix, &mut rng);
    let n = rng.random_range(cfg.matches_min..=cfg.matches_max);

    let half_width = cfg.state_affinity_sd * 3f64.sqrt();
    let affinity: Vec<f64> = (0..N_STATES)
        .map(|_| {
            if half_width > 0.0 {
                rng.random_range(-half_width..half_width)
            } else {
                0.0
            }
        })
        .collect();
    let primary = StateId(rng.random_range(0..N_STATES as u8));
    let mut pool = vec![primary];
    while pool.len() < 4 {
        let s = StateId(rng.random_range(0..N_STATES as u8));
        if !pool.contains(&s) {
            pool.push(s);
        }
    }

    let mut saved: BTreeMap<StateId, Deck> = BTreeMap::new();
    let mut all_decks: Vec<(Deck, StateId)> = Vec::new();
    let mut state = primary;
    let mut deck = build_deck(state, cfg.deck_noise_prob, &mut rng);
    saved.insert(state, deck.clone());
    all_decks.push((deck.clone(), state));
    let mut mastery = cfg.mastery_cap * rng.random::<f64>();

    let mut timestamp: i64 = 1_700_000_000 + rng.random_range(0..86_400 * 30);
    let mut matches = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    for t in 0..n {
        let meta = cfg.state_meta_penalty.get(&state.0).copied().unwrap_or(0.0);
        let p = (cfg.base_winrate[tier] + affinity[state.index()] + meta + mastery
            - cfg.opponent_meta)
            .clamp(0.05, 0.95);
        let outcome = if rng.random::<f64>() < p {
            Outcome::Win
        } else {
            Outcome::Loss
        };
        let mode = if rng.random::<f64>() < cfg.path_of_legend_share {
            Mode::PathOfLegend
        } else {
            Mode::Pvp
        };
        let avg_elixir = deck.avg_elixir(catalog).expect("generated deck");
        matches.push(MatchRecord {
            player_id: player_id.clone(),
            seq_index: t,
            timestamp,
            deck: deck.clone(),
            avg_elixir,
            outcome,
            crown_diff: crowns(outcome, &mut rng),
            mode,
        });
        probs.push(p);
        mastery = (mastery + cfg.mastery_gain).min(cfg.mastery_cap);

        timestamp += if rng.random::<f64>() < 0.1 {
            rng.random_range(7_200..72_000)
        } else {
            60 + rng.random_range(0..1_200)
        };

        let p_switch = match outcome {
            Outcome::Loss => params.p_switch_after_loss,
            Outcome::Win => params.p_switch_after_win,
        };
        if rng.random::<f64>() >= p_switch {
            continue;
        }
        if rng.random::<f64>() < params.within_state_adjust_prob {
            deck = adjust_deck(&deck, catalog, &mut rng);
            mastery *= cfg.mastery_retain_within;
        } else {
            let next = if subtype == SubtypeLabel::Flex
                && state != primary
                && rng.random::<f64>() < cfg.flex_return_prob
            {
                primary
            } else {
                let others: Vec<StateId> = pool.iter().copied().filter(|&s| s != state).collect();
                *others.choose(&mut rng).expect("pool has four states")
            };
            state = next;
            let candidate = saved
                .get(&state)
                .cloned()
                .unwrap_or_else(|| build_deck(state, cfg.deck_noise_prob, &mut rng));
            deck = if candidate == deck {
                build_deck(state, 0.0, &mut rng)
            } else {
                candidate
            };
            mastery *= cfg.mastery_retain_cross;
        }
        saved.insert(state, deck.clone());
        all_decks.push((deck.clone(), state));
    }
    Generated {
        history: PlayerHistory {
            player_id: player_id.clone(),
            matches,
        },
        truth: PlayerTruth {
            player_id,
            subtype,
            tier,
            primary_state: primary.0,
            win_prob: probs,
        },
        decks: all_decks,
    }
}

/// Generates the whole population. Player `i` draws from a sub-seed of
/// `(rng_seed, player_id)`, so output does not depend on thread scheduling.
pub fn generate_population(cfg: &GeneratorConfig) -> Result<Population> {
    cfg.validate()?;
    let catalog = generate_cards(cfg);
    let players: Vec<Generated> = (0..cfg.n_players)
        .into_par_iter()
        .map(|i| generate_player(cfg, &catalog, i))
        .collect();
    let mut truth = GroundTruth::default();
    let mut histories = Vec::with_capacity(players.len());
    for g in players {
        for (d, s) in g.decks {
            truth.decks.entry(d).or_insert(s);
        }
        truth.players.push(g.truth);
        histories.push(g.history);
    }
    Ok(Population {
        catalog,
        histories,
        truth,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TruthLine {
    Player {
        player_id: String,
        subtype: usize,
        tier: usize,
        primary_state: u8,
        win_prob: Vec<f64>,
    },
    Deck {
        deck: Vec<String>,
        archetype: u8,
    },
}

pub fn write_ground_truth(truth: &GroundTruth, mut w: impl Write) -> std::io::Result<()> {
    for p in &truth.players {
        let line = TruthLine::Player {
            player_id: p.player_id.clone(),
            subtype: p.subtype.index(),
            tier: p.tier,
            primary_state: p.primary_state,
            win_prob: p.win_prob.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    for (d, s) in &truth.decks {
        let line = TruthLine::Deck {
            deck: d.cards().to_vec(),
            archetype: s.0,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut truth = GroundTruth::default();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let rec: TruthLine =
            serde_json::from_str(line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        match rec {
            TruthLine::Player {
                player_id,
                subtype,
                tier,
                primary_state,
                win_prob,
            } => truth.players.push(PlayerTruth {
                player_id,
                subtype: SubtypeLabel::from_index(subtype)
                    .ok_or_else(|| Error::parse(i + 1, "bad subtype"))?,
                tier,
                primary_state,
                win_prob,
            }),
            TruthLine::Deck { deck, archetype } => {
                let deck = Deck::new(deck).map_err(|m| Error::parse(i + 1, m))?;
                truth.decks.insert(deck, StateId(archetype));
            }
        }
    }
    Ok(truth)
}

/// Writes `matchlog.jsonl`, `cards.jsonl` and `truth.jsonl` into `dir`.
pub fn write_population(pop: &Population, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::matchlog::save_matchlog(&pop.histories, dir.join("matchlog.jsonl"))?;
    pop.catalog.save(dir.join("cards.jsonl"))?;
    let path = dir.join("truth.jsonl");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    write_ground_truth(&pop.truth, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archetype::deck_features;

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_players: 30,
            matches_min: 40,
            matches_max: 60,
            rng_seed: seed,
            ..Default::default()
        }
    }

    #[test]
    fn catalog_is_deterministic_and_covers_types_and_costs() {
        let a = generate_cards(&small(1));
        let b = generate_cards(&small(1));
        assert_eq!(a, b);
        assert!(a.len() >= 60);
        for t in FuncType::ALL {
            assert!(a.cards().iter().any(|c| c.func_type == t));
        }
        for cost in 1..=9 {
            assert!(a.cards().iter().any(|c| c.elixir_cost == cost));
        }
        assert!(a.cards().iter().any(|c| c.elixir_cost <= 2));
    }

    #[test]
    fn templates_are_structurally_distinct() {
        let cat = generate_cards(&small(1));
        let feats: Vec<[f64; 7]> = StateId::all()
            .map(|s| deck_features(&template_deck(s), &cat).unwrap().to_array())
            .collect();
        for i in 0..feats.len() {
            for j in i + 1..feats.len() {
                assert_ne!(feats[i], feats[j], "templates {i} and {j}");
            }
        }
    }

    #[test]
    fn same_seed_same_population() {
        let a = generate_population(&small(5)).unwrap();
        let b = generate_population(&small(5)).unwrap();
        assert_eq!(a.histories, b.histories);
        assert_eq!(a.truth, b.truth);
        let c = generate_population(&small(6)).unwrap();
        assert_ne!(a.histories, c.histories);
    }

    #[test]
    fn loyalists_never_switch() {
        let cfg = GeneratorConfig {
            subtype_mix: [1.0, 0.0, 0.0],
            ..small(3)
        };
        let pop = generate_population(&cfg).unwrap();
        for h in &pop.histories {
            assert!(h.deck_changes().iter().all(|c| !c));
        }
    }

    #[test]
    fn every_switch_changes_the_deck() {
        let cfg = GeneratorConfig {
            subtype_mix: [0.0, 1.0, 0.0],
            subtypes: std::array::from_fn(|_| SubtypeParams {
                p_switch_after_loss: 1.0,
                p_switch_after_win: 1.0,
                within_state_adjust_prob: 0.5,
            }),
            ..small(4)
        };
        let pop = generate_population(&cfg).unwrap();
        for h in &pop.histories {
            assert!(h.deck_changes().iter().skip(1).all(|&c| c));
        }
    }

    #[test]
    fn matches_satisfy_record_invariants() {
        let pop = generate_population(&small(9)).unwrap();
        for h in &pop.histories {
            for w in h.matches.windows(2) {
                assert!(w[1].timestamp >= w[0].timestamp);
            }
            for m in &h.matches {
                crate::matchlog::validate_crowns(m.outcome, m.crown_diff).unwrap();
                let avg = m.deck.avg_elixir(&pop.catalog).unwrap();
                assert!((avg - m.avg_elixir).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn config_text_round_trip_and_errors() {
        let cfg = GeneratorConfig::default();
        assert_eq!(GeneratorConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(GeneratorConfig::parse("subtype_mix = 0.5,0.5,0.5").is_err());
        assert!(GeneratorConfig::parse("state_meta_penalty = 13:-0.1").is_err());
        assert!(GeneratorConfig::parse("bogus = 1").is_err());
    }
}
