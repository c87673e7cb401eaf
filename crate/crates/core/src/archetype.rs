//! Deck archetype clustering: seven structural indicators, per-feature
//! quantile normalization, weighted k-means into 13 strategy states.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::{self, KMeansConfig};
use crate::error::{Error, Result};
use crate::flatfile::{FlatReader, FlatWriter};
use crate::matchlog::{Catalog, Deck, FuncType};

pub const N_STATES: usize = 13;
pub const N_DECK_FEATURES: usize = 7;

pub const FEATURE_NAMES: [&str; N_DECK_FEATURES] = [
    "avg_elixir",
    "elixir_std",
    "ratio_win_condition",
    "ratio_spell",
    "ratio_building",
    "ratio_support",
    "ratio_cheap",
];

/// Strategy-state id in `0..13`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub u8);

impl StateId {
    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn all() -> impl Iterator<Item = StateId> {
        (0..N_STATES as u8).map(StateId)
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeckFeatures {
    pub avg_elixir: f64,
    pub elixir_std: f64,
    pub ratio_win_condition: f64,
    pub ratio_spell: f64,
    pub ratio_building: f64,
    pub ratio_support: f64,
    pub ratio_cheap: f64,
}

impl DeckFeatures {
    pub fn from_costs(cards: &[(u8, FuncType)]) -> Self {
        let n = cards.len() as f64;
        let avg = cards.iter().map(|c| f64::from(c.0)).sum::<f64>() / n;
        let var = cards
            .iter()
            .map(|c| (f64::from(c.0) - avg).powi(2))
            .sum::<f64>()
            / n;
        let ratio = |t: FuncType| cards.iter().filter(|c| c.1 == t).count() as f64 / n;
        Self {
            avg_elixir: avg,
            elixir_std: var.sqrt(),
            ratio_win_condition: ratio(FuncType::WinCondition),
            ratio_spell: ratio(FuncType::Spell),
            ratio_building: ratio(FuncType::Building),
            ratio_support: ratio(FuncType::Support),
            ratio_cheap: cards.iter().filter(|c| c.0 <= 2).count() as f64 / n,
        }
    }

    pub fn to_array(&self) -> [f64; N_DECK_FEATURES] {
        [
            self.avg_elixir,
            self.elixir_std,
            self.ratio_win_condition,
            self.ratio_spell,
            self.ratio_building,
            self.ratio_support,
            self.ratio_cheap,
        ]
    }
}

pub fn deck_features(deck: &Deck, catalog: &Catalog) -> Result<DeckFeatures> {
    let cards = deck
        .cards()
        .iter()
        .map(|id| {
            catalog
                .get(id)
                .map(|c| (c.elixir_cost, c.func_type))
                .ok_or_else(|| Error::UnknownCard(id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DeckFeatures::from_costs(&cards))
}

// ── Quantile map ────────────────────────────────────────────────────────

/// Per-feature empirical CDF over a reference corpus, linearly interpolated
/// between reference quantiles. Values tied with a run of reference
/// quantiles map to the middle of that run.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileMap {
    /// `quantiles[f]` is sorted ascending.
    pub quantiles: Vec<Vec<f64>>,
}

impl QuantileMap {
    pub const MAX_QUANTILES: usize = 1000;

    pub fn fit(rows: &[[f64; N_DECK_FEATURES]]) -> Self {
        let m = rows.len().min(Self::MAX_QUANTILES);
        let quantiles = (0..N_DECK_FEATURES)
            .map(|f| {
                let mut col: Vec<f64> = rows.iter().map(|r| r[f]).collect();
                col.sort_by(f64::total_cmp);
                if m <= 1 {
                    return col;
                }
                (0..m)
                    .map(|j| {
                        let pos = j as f64 * (col.len() - 1) as f64 / (m - 1) as f64;
                        let lo = pos.floor() as usize;
                        let hi = pos.ceil() as usize;
                        col[lo] + (col[hi] - col[lo]) * (pos - lo as f64)
                    })
                    .collect()
            })
            .collect();
        Self { quantiles }
    }

    pub fn transform_value(&self, feature: usize, v: f64) -> f64 {
        let q = &self.quantiles[feature];
        let m = q.len();
        if m < 2 || v <= q[0] {
            return 0.0;
        }
        if v >= q[m - 1] {
            return 1.0;
        }
        let r = |i: usize| i as f64 / (m - 1) as f64;
        let lo = q.partition_point(|&x| x < v);
        let hi = q.partition_point(|&x| x <= v);
        if hi > lo {
            return 0.5 * (r(lo) + r(hi - 1));
        }
        // q[lo - 1] < v < q[lo]
        let (x0, x1) = (q[lo - 1], q[lo]);
        r(lo - 1) + (v - x0) / (x1 - x0) * (r(lo) - r(lo - 1))
    }

    pub fn transform(&self, row: &[f64; N_DECK_FEATURES]) -> [f64; N_DECK_FEATURES] {
        let mut out = [0.0; N_DECK_FEATURES];
        for (f, o) in out.iter_mut().enumerate() {
            *o = self.transform_value(f, row[f]);
        }
        out
    }
}

// ── States ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateGroup {
    Cycle,
    Control,
    Beatdown,
    Specialist,
}

impl StateGroup {
    /// Cosmetic grouping from a cluster's mean raw indicators.
    pub fn classify(mean: &[f64; N_DECK_FEATURES]) -> Self {
        let (avg, std, spell, cheap) = (mean[0], mean[1], mean[3], mean[6]);
        if avg <= 3.0 || cheap >= 0.45 {
            StateGroup::Cycle
        } else if spell >= 0.4 || std >= 2.2 {
            StateGroup::Specialist
        } else if avg >= 3.9 {
            StateGroup::Beatdown
        } else {
            StateGroup::Control
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "Cycle" => Some(StateGroup::Cycle),
            "Control" => Some(StateGroup::Control),
            "Beatdown" => Some(StateGroup::Beatdown),
            "Specialist" => Some(StateGroup::Specialist),
            _ => None,
        }
    }
}

impl fmt::Display for StateGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyState {
    pub id: StateId,
    pub group: StateGroup,
    pub name: String,
}

// ── Model ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ArchetypeModel {
    pub quantiles: QuantileMap,
    pub weights: [f64; N_DECK_FEATURES],
    /// Centroids in weighted quantile space, indexed by state id.
    pub centroids: Vec<Vec<f64>>,
    pub states: Vec<StrategyState>,
    pub inertia: f64,
    pub silhouette: f64,
}

#[derive(Debug, Clone)]
pub struct ArchetypeFitConfig {
    pub k: usize,
    pub weights: [f64; N_DECK_FEATURES],
    pub seed: u64,
    pub restarts: usize,
    /// Upper bound on points used for the silhouette score.
    pub silhouette_sample: usize,
}

impl ArchetypeFitConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            k: N_STATES,
            weights: [1.0; N_DECK_FEATURES],
            seed,
            restarts: 50,
            silhouette_sample: 4000,
        }
    }
}

impl ArchetypeModel {
    pub fn embed(&self, f: &DeckFeatures) -> Vec<f64> {
        self.quantiles
            .transform(&f.to_array())
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| x * w)
            .collect()
    }

    /// Nearest centroid; ties go to the lowest state id.
    pub fn assign_features(&self, f: &DeckFeatures) -> StateId {
        let (j, _) = cluster::nearest(&self.embed(f), &self.centroids);
        StateId(j as u8)
    }

    pub fn assign(&self, deck: &Deck, catalog: &Catalog) -> Result<StateId> {
        Ok(self.assign_features(&deck_features(deck, catalog)?))
    }

    pub fn assign_batch(&self, feats: &[DeckFeatures]) -> Vec<StateId> {
        feats.iter().map(|f| self.assign_features(f)).collect()
    }

    pub fn n_states(&self) -> usize {
        self.centroids.len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_flat().save(path)
    }

    pub fn to_flat(&self) -> FlatWriter {
        let mut w = FlatWriter::new("tqp-archetype", 1);
        w.comment("func_type taxonomy and unit weights are stand-ins, not published values");
        w.record("features", FEATURE_NAMES);
        w.record("weights", self.weights);
        for (f, q) in self.quantiles.quantiles.iter().enumerate() {
            w.record(&format!("quantiles.{}", FEATURE_NAMES[f]), q);
        }
        w.record("fit", [self.inertia, self.silhouette]);
        for (s, c) in self.states.iter().zip(&self.centroids) {
            let mut fields = vec![s.id.to_string(), s.group.to_string(), s.name.clone()];
            fields.extend(c.iter().map(|x| x.to_string()));
            w.record("state", fields);
        }
        w
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_flat(&FlatReader::load(path, "tqp-archetype", 1)?)
    }

    pub fn from_flat(r: &FlatReader) -> Result<Self> {
        let names = &r.one("features")?.fields;
        if names.iter().map(String::as_str).ne(FEATURE_NAMES) {
            return Err(Error::Model(format!("unexpected feature order {names:?}")));
        }
        let weights_v: Vec<f64> = r.one("weights")?.parse_all(0)?;
        let weights: [f64; N_DECK_FEATURES] = weights_v
            .try_into()
            .map_err(|_| Error::Model("weights must have 7 entries".into()))?;
        let quantiles = FEATURE_NAMES
            .iter()
            .map(|n| r.one(&format!("quantiles.{n}"))?.parse_all(0))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let fit = r.one("fit")?;
        let mut states = Vec::new();
        let mut centroids = Vec::new();
        for rec in r.all("state") {
            let id: u8 = rec.parse_at(0)?;
            if usize::from(id) != states.len() {
                return Err(Error::parse(rec.line, "states must be listed in id order"));
            }
            let group = StateGroup::parse(&rec.fields[1])
                .ok_or_else(|| Error::parse(rec.line, "unknown state group"))?;
            states.push(StrategyState {
                id: StateId(id),
                group,
                name: rec.fields[2].clone(),
            });
            centroids.push(rec.parse_all(3)?);
        }
        Ok(Self {
            quantiles: QuantileMap { quantiles },
            weights,
            centroids,
            states,
            inertia: fit.parse_at(0)?,
            silhouette: fit.parse_at(1)?,
        })
    }
}

/// Fits the archetype model on a deck-feature corpus.
///
/// States are numbered by ascending mean raw `avg_elixir` of their members
/// so that ids are stable across seeds on well-separated corpora.
pub fn fit_archetypes(decks: &[DeckFeatures], cfg: &ArchetypeFitConfig) -> Result<ArchetypeModel> {
    if cfg.weights.iter().any(|&w| w <= 0.0 || !w.is_finite()) {
        return Err(Error::Config("feature weights must be positive".into()));
    }
    let raw: Vec<[f64; N_DECK_FEATURES]> = decks.iter().map(DeckFeatures::to_array).collect();
    let quantiles = QuantileMap::fit(&raw);
    let points: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| {
            quantiles
                .transform(r)
                .iter()
                .zip(&cfg.weights)
                .map(|(x, w)| x * w)
                .collect()
        })
        .collect();
    let km = cluster::kmeans(
        &points,
        &KMeansConfig {
            restarts: cfg.restarts,
            ..KMeansConfig::new(cfg.k, cfg.seed)
        },
    )?;

    let mut means = vec![[0.0; N_DECK_FEATURES]; cfg.k];
    let mut counts = vec![0usize; cfg.k];
    for (r, &l) in raw.iter().zip(&km.labels) {
        counts[l] += 1;
        for f in 0..N_DECK_FEATURES {
            means[l][f] += r[f];
        }
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        for v in m.iter_mut() {
            *v /= c.max(1) as f64;
        }
    }
    let mut order: Vec<usize> = (0..cfg.k).collect();
    order.sort_by(|&a, &b| {
        means[a][0].total_cmp(&means[b][0]).then_with(|| {
            km.centroids[a]
                .iter()
                .zip(&km.centroids[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });

    let mut group_counts = [0usize; 4];
    let mut states = Vec::with_capacity(cfg.k);
    let mut centroids = Vec::with_capacity(cfg.k);
    for (new_id, &old) in order.iter().enumerate() {
        let group = StateGroup::classify(&means[old]);
        group_counts[group as usize] += 1;
        states.push(StrategyState {
            id: StateId(new_id as u8),
            group,
            name: format!("{group}-{}", group_counts[group as usize]),
        });
        centroids.push(km.centroids[old].clone());
    }
    let mut model = ArchetypeModel {
        quantiles,
        weights: cfg.weights,
        centroids,
        states,
        inertia: km.inertia,
        silhouette: f64::NAN,
    };
    if cfg.k >= 2 {
        let idx = cluster::subsample_indices(points.len(), cfg.silhouette_sample);
        let sub_pts: Vec<Vec<f64>> = idx.iter().map(|&i| points[i].clone()).collect();
        let sub_labels: Vec<usize> = idx
            .iter()
            .map(|&i| model.assign_features(&decks[i]).index())
            .collect();
        model.silhouette = cluster::silhouette(&sub_pts, &sub_labels).unwrap_or(f64::NAN);
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    pub ari: f64,
    pub nmi: f64,
    pub silhouette: f64,
}

/// Mean pairwise ARI/NMI across labelings of the same points, plus the
/// silhouette of the first labeling.
pub fn clustering_stability(points: &[Vec<f64>], labelings: &[Vec<usize>]) -> Result<Stability> {
    if labelings.len() < 2 {
        return Err(Error::Config("stability needs at least two runs".into()));
    }
    let mut ari = 0.0;
    let mut nmi = 0.0;
    let mut pairs = 0.0;
    for i in 0..labelings.len() {
        for j in i + 1..labelings.len() {
            ari += cluster::adjusted_rand_index(&labelings[i], &labelings[j]);
            nmi += cluster::normalized_mutual_info(&labelings[i], &labelings[j]);
            pairs += 1.0;
        }
    }
    let silhouette = cluster::silhouette(points, &labelings[0])?;
    Ok(Stability {
        ari: ari / pairs,
        nmi: nmi / pairs,
        silhouette,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn feats(cards: &[(u8, FuncType)]) -> DeckFeatures {
        DeckFeatures::from_costs(cards)
    }

    #[test]
    fn uniform_support_deck() {
        let f = feats(&[(4, FuncType::Support); 8]);
        assert_eq!(f.avg_elixir, 4.0);
        assert_eq!(f.elixir_std, 0.0);
        assert_eq!(
            [
                f.ratio_win_condition,
                f.ratio_spell,
                f.ratio_building,
                f.ratio_support
            ],
            [0.0, 0.0, 0.0, 1.0]
        );
        assert_eq!(f.ratio_cheap, 0.0);
    }

    #[test]
    fn hand_computed_moments() {
        let costs = [1, 1, 2, 2, 3, 3, 4, 4];
        let cards: Vec<_> = costs.iter().map(|&c| (c, FuncType::Spell)).collect();
        let f = feats(&cards);
        assert_eq!(f.avg_elixir, 2.5);
        assert!((f.elixir_std - 1.25f64.sqrt()).abs() < 1e-12);
        assert!((f.elixir_std - 1.1180).abs() < 1e-4);
        assert_eq!(f.ratio_cheap, 0.5);
    }

    #[test]
    fn balanced_func_ratios() {
        let cards: Vec<_> = FuncType::ALL
            .iter()
            .flat_map(|&t| [(3, t), (5, t)])
            .collect();
        let f = feats(&cards);
        assert_eq!(
            [
                f.ratio_win_condition,
                f.ratio_spell,
                f.ratio_building,
                f.ratio_support
            ],
            [0.25; 4]
        );
    }

    #[test]
    fn quantile_endpoints_and_ties() {
        let rows: Vec<[f64; 7]> = [0.0, 1.0, 1.0, 1.0, 2.0].iter().map(|&v| [v; 7]).collect();
        let q = QuantileMap::fit(&rows);
        assert_eq!(q.transform_value(0, -5.0), 0.0);
        assert_eq!(q.transform_value(0, 0.0), 0.0);
        assert_eq!(q.transform_value(0, 2.0), 1.0);
        assert_eq!(q.transform_value(0, 1.0), 0.5);
        assert!((q.transform_value(0, 1.5) - 0.875).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn quantile_map_monotone_in_unit_interval(
            refs in prop::collection::vec(-10.0f64..10.0, 2..60),
            a in -12.0f64..12.0,
            b in -12.0f64..12.0,
        ) {
            let rows: Vec<[f64; 7]> = refs.iter().map(|&v| [v; 7]).collect();
            let q = QuantileMap::fit(&rows);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (tl, th) = (q.transform_value(0, lo), q.transform_value(0, hi));
            prop_assert!((0.0..=1.0).contains(&tl) && (0.0..=1.0).contains(&th));
            prop_assert!(tl <= th);
        }
    }

    fn tiny_model() -> ArchetypeModel {
        ArchetypeModel {
            quantiles: QuantileMap {
                quantiles: vec![vec![0.0, 1.0]; 7],
            },
            weights: [1.0; 7],
            centroids: vec![vec![0.2; 7], vec![0.8; 7]],
            states: vec![
                StrategyState {
                    id: StateId(0),
                    group: StateGroup::Cycle,
                    name: "a".into(),
                },
                StrategyState {
                    id: StateId(1),
                    group: StateGroup::Control,
                    name: "b".into(),
                },
            ],
            inertia: 0.0,
            silhouette: 0.0,
        }
    }

    fn raw(v: f64) -> DeckFeatures {
        DeckFeatures {
            avg_elixir: v,
            elixir_std: v,
            ratio_win_condition: v,
            ratio_spell: v,
            ratio_building: v,
            ratio_support: v,
            ratio_cheap: v,
        }
    }

    #[test]
    fn assignment_zero_distance_and_tie() {
        let m = tiny_model();
        assert_eq!(m.assign_features(&raw(0.8)), StateId(1));
        assert_eq!(m.assign_features(&raw(0.2)), StateId(0));
        // equidistant from both centroids
        assert_eq!(m.assign_features(&raw(0.5)), StateId(0));
    }

    #[test]
    fn model_file_round_trip() {
        let m = tiny_model();
        let text = m.to_flat().finish();
        let back =
            ArchetypeModel::from_flat(&FlatReader::parse(&text, "tqp-archetype", 1).unwrap())
                .unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn unit_weights_equal_unweighted_distance() {
        let mut m = tiny_model();
        let f = raw(0.37);
        let unweighted = m.quantiles.transform(&f.to_array()).to_vec();
        assert_eq!(m.embed(&f), unweighted);
        m.weights = [2.0; 7];
        assert_ne!(m.embed(&f), unweighted);
    }
}
