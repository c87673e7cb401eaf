//! Behavioral subtypes (Who): per-player switching statistics, k = 3
//! clustering with canonical naming, and the PersonaGate predicate.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::{self, KMeansConfig};
use crate::error::{Error, Result};
use crate::flatfile::{FlatReader, FlatWriter};
use crate::matchlog::{Deck, MatchRecord, Outcome};

pub const N_SUBTYPES: usize = 3;
pub const N_PROFILE_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubtypeLabel {
    Loyalist = 0,
    LossReactive = 1,
    Flex = 2,
}

impl SubtypeLabel {
    pub const ALL: [SubtypeLabel; 3] = [
        SubtypeLabel::Loyalist,
        SubtypeLabel::LossReactive,
        SubtypeLabel::Flex,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SubtypeLabel::Loyalist => "One-deck Loyalist",
            SubtypeLabel::LossReactive => "Loss-Reactive Switcher",
            SubtypeLabel::Flex => "Flex Player",
        }
    }
}

impl fmt::Display for SubtypeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProfile {
    pub overall_switch_rate: f64,
    pub post_loss_switch_rate: f64,
    pub post_win_switch_rate: f64,
    pub loss_reactivity: f64,
    pub avg_change_magnitude: f64,
    pub top_deck_occupancy: f64,
    /// Shannon entropy (bits) of exact-deck usage; reported, not clustered.
    pub deck_entropy: f64,
}

impl BehaviorProfile {
    /// The four clustering features.
    pub fn features(&self) -> [f64; N_PROFILE_FEATURES] {
        [
            self.overall_switch_rate,
            self.loss_reactivity,
            self.avg_change_magnitude,
            self.top_deck_occupancy,
        ]
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Switching statistics over a chronological match sequence. Zero
/// denominators yield zero rates.
pub fn behavior_profile(matches: &[MatchRecord]) -> BehaviorProfile {
    let mut switches = 0;
    let (mut after_loss, mut after_loss_sw) = (0, 0);
    let (mut after_win, mut after_win_sw) = (0, 0);
    let mut magnitude = 0.0;
    for pair in matches.windows(2) {
        let changed = pair[1].deck != pair[0].deck;
        if changed {
            switches += 1;
            magnitude += pair[1].deck.jaccard_distance(&pair[0].deck);
        }
        match pair[0].outcome {
            Outcome::Loss => {
                after_loss += 1;
                after_loss_sw += usize::from(changed);
            }
            Outcome::Win => {
                after_win += 1;
                after_win_sw += usize::from(changed);
            }
        }
    }
    let mut usage: HashMap<&Deck, usize> = HashMap::new();
    for m in matches {
        *usage.entry(&m.deck).or_default() += 1;
    }
    let n = matches.len().max(1) as f64;
    let top = usage.values().copied().max().unwrap_or(0) as f64;
    let mut counts: Vec<usize> = usage.values().copied().collect();
    counts.sort_unstable();
    let entropy = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>();
    let post_loss = ratio(after_loss_sw, after_loss);
    let post_win = ratio(after_win_sw, after_win);
    BehaviorProfile {
        overall_switch_rate: ratio(switches, matches.len().saturating_sub(1)),
        post_loss_switch_rate: post_loss,
        post_win_switch_rate: post_win,
        loss_reactivity: post_loss - post_win,
        avg_change_magnitude: if switches == 0 {
            0.0
        } else {
            magnitude / switches as f64
        },
        top_deck_occupancy: top / n,
        deck_entropy: entropy,
    }
}

// ── Model ───────────────────────────────────────────────────────────────

/// Standardization statistics plus three centroids, stored in canonical
/// label order so that nearest-centroid index equals the label.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtypeModel {
    pub mean: [f64; N_PROFILE_FEATURES],
    pub std: [f64; N_PROFILE_FEATURES],
    pub centroids: Vec<Vec<f64>>,
    /// Raw k-means cluster id for each canonical label.
    pub raw_cluster: [usize; N_SUBTYPES],
    pub silhouette: f64,
}

impl SubtypeModel {
    pub fn standardize(&self, p: &BehaviorProfile) -> Vec<f64> {
        p.features()
            .iter()
            .enumerate()
            .map(|(i, x)| (x - self.mean[i]) / self.std[i])
            .collect()
    }

    pub fn assign(&self, p: &BehaviorProfile) -> SubtypeLabel {
        let (j, _) = cluster::nearest(&self.standardize(p), &self.centroids);
        SubtypeLabel::ALL[j]
    }

    pub fn assign_batch(&self, ps: &[BehaviorProfile]) -> Vec<SubtypeLabel> {
        ps.iter().map(|p| self.assign(p)).collect()
    }

    pub fn to_flat(&self) -> FlatWriter {
        let mut w = FlatWriter::new("tqp-subtype", 1);
        w.record(
            "features",
            [
                "overall_switch_rate",
                "loss_reactivity",
                "avg_change_magnitude",
                "top_deck_occupancy",
            ],
        );
        w.record("mean", self.mean);
        w.record("std", self.std);
        w.record("raw_cluster", self.raw_cluster);
        w.record("silhouette", [self.silhouette]);
        for (l, c) in SubtypeLabel::ALL.iter().zip(&self.centroids) {
            let mut fields = vec![l.index().to_string(), l.name().replace(' ', "_")];
            fields.extend(c.iter().map(|x| x.to_string()));
            w.record("centroid", fields);
        }
        w
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_flat().save(path)
    }

    pub fn from_flat(r: &FlatReader) -> Result<Self> {
        let arr = |key: &str| -> Result<[f64; N_PROFILE_FEATURES]> {
            r.one(key)?
                .parse_all::<f64>(0)?
                .try_into()
                .map_err(|_| Error::Model(format!("`{key}` needs 4 values")))
        };
        let raw: Vec<usize> = r.one("raw_cluster")?.parse_all(0)?;
        let centroids = r
            .all("centroid")
            .map(|rec| rec.parse_all(2))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        if centroids.len() != N_SUBTYPES {
            return Err(Error::Model("subtype model needs 3 centroids".into()));
        }
        Ok(Self {
            mean: arr("mean")?,
            std: arr("std")?,
            centroids,
            raw_cluster: raw
                .try_into()
                .map_err(|_| Error::Model("raw_cluster needs 3 values".into()))?,
            silhouette: r.one("silhouette")?.parse_at(0)?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_flat(&FlatReader::load(path, "tqp-subtype", 1)?)
    }
}

/// Canonical naming: lowest mean switch rate → Loyalist; of the other two,
/// higher mean loss_reactivity → Loss-Reactive; the rest → Flex.
/// Returns `raw_cluster` indexed by canonical label.
pub fn canonical_order(profiles: &[BehaviorProfile], raw_labels: &[usize]) -> [usize; N_SUBTYPES] {
    let mut sums = [[0.0; 2]; N_SUBTYPES];
    let mut counts = [0usize; N_SUBTYPES];
    for (p, &l) in profiles.iter().zip(raw_labels) {
        sums[l][0] += p.overall_switch_rate;
        sums[l][1] += p.loss_reactivity;
        counts[l] += 1;
    }
    let mean = |c: usize, f: usize| sums[c][f] / counts[c].max(1) as f64;
    let mut ids = [0, 1, 2];
    ids.sort_by(|&a, &b| mean(a, 0).total_cmp(&mean(b, 0)).then(a.cmp(&b)));
    let loyal = ids[0];
    let (x, y) = (ids[1], ids[2]);
    let (reactive, flex) = if mean(y, 1) > mean(x, 1) {
        (y, x)
    } else {
        (x, y)
    };
    [loyal, reactive, flex]
}

#[derive(Debug, Clone)]
pub struct SubtypeFit {
    pub model: SubtypeModel,
    pub labels: Vec<SubtypeLabel>,
}

pub fn fit_subtypes(profiles: &[BehaviorProfile], seed: u64) -> Result<SubtypeFit> {
    if profiles.len() < N_SUBTYPES {
        return Err(Error::Degenerate(format!(
            "{} profiles for {N_SUBTYPES} subtypes",
            profiles.len()
        )));
    }
    let n = profiles.len() as f64;
    let mut mean = [0.0; N_PROFILE_FEATURES];
    let mut std = [0.0; N_PROFILE_FEATURES];
    for p in profiles {
        for (m, x) in mean.iter_mut().zip(p.features()) {
            *m += x / n;
        }
    }
    for p in profiles {
        for (i, x) in p.features().iter().enumerate() {
            std[i] += (x - mean[i]).powi(2) / n;
        }
    }
    for s in std.iter_mut() {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    let points: Vec<Vec<f64>> = profiles
        .iter()
        .map(|p| {
            p.features()
                .iter()
                .enumerate()
                .map(|(i, x)| (x - mean[i]) / std[i])
                .collect()
        })
        .collect();
    let km = cluster::kmeans(&points, &KMeansConfig::new(N_SUBTYPES, seed))?;
    let raw_cluster = canonical_order(profiles, &km.labels);
    let mut model = SubtypeModel {
        mean,
        std,
        centroids: raw_cluster
            .iter()
            .map(|&r| km.centroids[r].clone())
            .collect(),
        raw_cluster,
        silhouette: f64::NAN,
    };
    let labels = model.assign_batch(profiles);
    let idx = cluster::subsample_indices(points.len(), 4000);
    let sub_pts: Vec<Vec<f64>> = idx.iter().map(|&i| points[i].clone()).collect();
    let sub_labels: Vec<usize> = idx.iter().map(|&i| labels[i].index()).collect();
    model.silhouette = cluster::silhouette(&sub_pts, &sub_labels).unwrap_or(f64::NAN);
    Ok(SubtypeFit { model, labels })
}

// ── PersonaGate ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateDecision {
    Forward,
    Stay,
}

/// Loyalists are held with an immediate Stay; everyone else moves on to the
/// timing stage.
pub fn persona_gate(label: SubtypeLabel) -> GateDecision {
    match label {
        SubtypeLabel::Loyalist => GateDecision::Stay,
        SubtypeLabel::LossReactive | SubtypeLabel::Flex => GateDecision::Forward,
    }
}

// ── Label table ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub player_id: String,
    pub label: SubtypeLabel,
    pub profile: BehaviorProfile,
}

pub fn write_label_table(rows: &[LabelRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from(
        "player_id\tlabel\toverall_switch_rate\tloss_reactivity\tavg_change_magnitude\ttop_deck_occupancy\n",
    );
    for r in rows {
        let f = r.profile.features();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.player_id, r.label, f[0], f[1], f[2], f[3]
        ));
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads `player_id → label` from a label table.
pub fn read_label_table(path: impl AsRef<Path>) -> Result<HashMap<String, SubtypeLabel>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let mut parts = line.split('\t');
        let (Some(id), Some(l)) = (parts.next(), parts.next()) else {
            return Err(Error::parse(i + 1, "expected player_id and label"));
        };
        let label = l
            .parse::<usize>()
            .ok()
            .and_then(SubtypeLabel::from_index)
            .ok_or_else(|| Error::parse(i + 1, format!("bad label `{l}`")))?;
        out.insert(id.to_string(), label);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matchlog::Mode;

    fn deck(tag: &str) -> Deck {
        Deck::new((0..7).map(|i| format!("c{i}")).chain([tag.to_string()])).unwrap()
    }

    fn matches(seq: &[(&str, Outcome)]) -> Vec<MatchRecord> {
        seq.iter()
            .enumerate()
            .map(|(i, (d, o))| MatchRecord {
                player_id: "p".into(),
                seq_index: i,
                timestamp: i as i64,
                deck: deck(d),
                avg_elixir: 3.0,
                outcome: *o,
                crown_diff: if o.is_win() { 1 } else { -1 },
                mode: Mode::Pvp,
            })
            .collect()
    }

    #[test]
    fn paper_reactivity_signature() {
        let p = BehaviorProfile {
            overall_switch_rate: 0.27,
            post_loss_switch_rate: 0.487,
            post_win_switch_rate: 0.064,
            loss_reactivity: 0.487 - 0.064,
            avg_change_magnitude: 0.3,
            top_deck_occupancy: 0.5,
            deck_entropy: 1.0,
        };
        assert!((p.loss_reactivity - 0.423).abs() < 1e-12);
    }

    #[test]
    fn never_switching_player() {
        use Outcome::*;
        let p = behavior_profile(&matches(&[
            ("a", Win),
            ("a", Loss),
            ("a", Win),
            ("a", Loss),
        ]));
        assert_eq!(p.overall_switch_rate, 0.0);
        assert_eq!(p.avg_change_magnitude, 0.0);
        assert_eq!(p.top_deck_occupancy, 1.0);
        assert_eq!(p.deck_entropy, 0.0);
    }

    #[test]
    fn rates_match_naive_scan() {
        use Outcome::*;
        let seq = [
            ("a", Loss),
            ("b", Loss),
            ("b", Win),
            ("b", Win),
            ("a", Loss),
            ("c", Win),
            ("c", Loss),
            ("a", Win),
        ];
        let p = behavior_profile(&matches(&seq));
        // after-loss indices 0,1,4,6 -> next changes: 0->1 yes, 1->2 no, 4->5 yes, 6->7 yes
        assert!((p.post_loss_switch_rate - 3.0 / 4.0).abs() < 1e-15);
        // after-win indices 2,3,5 -> 2->3 no, 3->4 yes, 5->6 no
        assert!((p.post_win_switch_rate - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.overall_switch_rate - 4.0 / 7.0).abs() < 1e-15);
        assert_eq!(
            p.loss_reactivity,
            p.post_loss_switch_rate - p.post_win_switch_rate
        );
        // every change swaps one card: Jaccard distance 2/9
        assert!((p.avg_change_magnitude - 2.0 / 9.0).abs() < 1e-12);
        assert!((p.top_deck_occupancy - 3.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn persona_gate_rule() {
        assert_eq!(persona_gate(SubtypeLabel::Loyalist), GateDecision::Stay);
        assert_eq!(
            persona_gate(SubtypeLabel::LossReactive),
            GateDecision::Forward
        );
        assert_eq!(persona_gate(SubtypeLabel::Flex), GateDecision::Forward);
    }

    fn profile(sw: f64, react: f64, mag: f64, occ: f64) -> BehaviorProfile {
        BehaviorProfile {
            overall_switch_rate: sw,
            post_loss_switch_rate: react,
            post_win_switch_rate: 0.0,
            loss_reactivity: react,
            avg_change_magnitude: mag,
            top_deck_occupancy: occ,
            deck_entropy: 0.0,
        }
    }

    fn three_regimes() -> (Vec<BehaviorProfile>, Vec<SubtypeLabel>) {
        let mut ps = Vec::new();
        let mut truth = Vec::new();
        for i in 0..30 {
            let e = (i % 5) as f64 * 0.002;
            ps.push(profile(0.0 + e, 0.0 + e, 0.0, 1.0 - e));
            truth.push(SubtypeLabel::Loyalist);
            ps.push(profile(0.27 + e, 0.42 - e, 0.5, 0.4 + e));
            truth.push(SubtypeLabel::LossReactive);
            ps.push(profile(0.10 + e, 0.08 + e, 0.3, 0.75 - e));
            truth.push(SubtypeLabel::Flex);
        }
        (ps, truth)
    }

    #[test]
    fn canonical_labels_on_planted_regimes() {
        let (ps, truth) = three_regimes();
        let fit = fit_subtypes(&ps, 3).unwrap();
        assert_eq!(fit.labels, truth);
        // the reference Loss-Reactive signature lands in label 1
        let sig = profile(0.27, 0.42, 0.5, 0.4);
        assert_eq!(fit.model.assign(&sig), SubtypeLabel::LossReactive);
        // assigning a training player reproduces its fitted label
        for (p, l) in ps.iter().zip(&fit.labels) {
            assert_eq!(fit.model.assign(p), *l);
        }
    }

    #[test]
    fn canonical_order_ignores_raw_numbering() {
        let (ps, truth) = three_regimes();
        let raw: Vec<usize> = truth.iter().map(|l| l.index()).collect();
        for perm in [[0, 1, 2], [2, 0, 1], [1, 2, 0], [2, 1, 0]] {
            let relabeled: Vec<usize> = raw.iter().map(|&r| perm[r]).collect();
            let order = canonical_order(&ps, &relabeled);
            assert_eq!(order, [perm[0], perm[1], perm[2]]);
        }
    }

    #[test]
    fn shuffled_input_order_keeps_labels() {
        let (ps, _) = three_regimes();
        let fit = fit_subtypes(&ps, 3).unwrap();
        let mut rev = ps.clone();
        rev.reverse();
        let fit_rev = fit_subtypes(&rev, 17).unwrap();
        let mut back = fit_rev.labels.clone();
        back.reverse();
        assert_eq!(back, fit.labels);
    }

    #[test]
    fn fewer_than_three_distinct_profiles() {
        let p = profile(0.1, 0.1, 0.1, 0.9);
        assert!(fit_subtypes(&[p, p, p, p], 0).is_err());
        assert!(fit_subtypes(&[p, p], 0).is_err());
    }

    #[test]
    fn model_round_trip() {
        let (ps, _) = three_regimes();
        let fit = fit_subtypes(&ps, 1).unwrap();
        let text = fit.model.to_flat().finish();
        let back =
            SubtypeModel::from_flat(&FlatReader::parse(&text, "tqp-subtype", 1).unwrap()).unwrap();
        assert_eq!(back.assign_batch(&ps), fit.labels);
    }
}
