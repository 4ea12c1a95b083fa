//! Deterministic train/validation/calibration/test partitioning.
//!
//! Split sizes come from largest-remainder apportionment of the population
//! over the four ratios. Stratified splits keep those global sizes exactly
//! and distribute each class as close to its own proportional share as the
//! global totals allow.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::types::{Label, LabeledScores, ScoreMatrix};

/// Ratios used when preparing data for conformal calibration:
/// train, validation, calibration, test.
pub const DEFAULT_RATIOS: [f64; 4] = [0.6, 0.1, 0.2, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Calib,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 4] = [SplitTag::Train, SplitTag::Val, SplitTag::Calib, SplitTag::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Calib => "calib",
            SplitTag::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        SplitTag::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| format!("unknown split tag '{s}'"))
    }
}

/// Which split every sample id belongs to, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    assignments: IndexMap<String, SplitTag>,
    ratios: [f64; 4],
    seed: u64,
    stratified: bool,
}

impl SplitManifest {
    pub fn new(assignments: IndexMap<String, SplitTag>, ratios: [f64; 4], seed: u64, stratified: bool) -> Result<Self> {
        check_ratios(ratios)?;
        Ok(Self { assignments, ratios, seed, stratified })
    }

    pub fn assignments(&self) -> &IndexMap<String, SplitTag> {
        &self.assignments
    }

    pub fn get(&self, id: &str) -> Option<SplitTag> {
        self.assignments.get(id).copied()
    }

    pub fn ratios(&self) -> [f64; 4] {
        self.ratios
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stratified(&self) -> bool {
        self.stratified
    }

    /// Number of ids per split, in `SplitTag::ALL` order.
    pub fn sizes(&self) -> [usize; 4] {
        let mut sizes = [0; 4];
        for tag in self.assignments.values() {
            sizes[tag.index()] += 1;
        }
        sizes
    }
}

fn check_ratios(ratios: [f64; 4]) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::RatiosDoNotSumToOne(ratios));
    }
    Ok(())
}

/// Largest-remainder apportionment of `total` units over `ratios`.
/// Leftover units go to the largest fractional parts, lower index first on ties.
pub fn apportion(total: usize, ratios: &[f64; 4]) -> [usize; 4] {
    let quotas = ratios.map(|r| total as f64 * r);
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Per-class split counts whose column sums equal `global` exactly.
///
/// Each cell starts at the floor of its proportional quota; the remaining
/// units go to cells in descending order of fractional part, subject to both
/// the class and the split still needing units.
fn stratified_counts(class_sizes: &[usize], ratios: &[f64; 4], global: [usize; 4]) -> Vec<[usize; 4]> {
    let mut counts: Vec<[usize; 4]> = Vec::with_capacity(class_sizes.len());
    let mut cells = Vec::new();
    for (c, &n) in class_sizes.iter().enumerate() {
        let quotas = ratios.map(|r| n as f64 * r);
        counts.push(quotas.map(|q| q.floor() as usize));
        for (s, q) in quotas.iter().enumerate() {
            cells.push((q - q.floor(), c, s));
        }
    }
    let mut row_need: Vec<usize> =
        class_sizes.iter().zip(&counts).map(|(&n, row)| n - row.iter().sum::<usize>()).collect();
    let mut col_need: [usize; 4] = std::array::from_fn(|s| global[s] - counts.iter().map(|row| row[s]).sum::<usize>());

    cells.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for &(_, c, s) in &cells {
        if row_need[c] > 0 && col_need[s] > 0 {
            counts[c][s] += 1;
            row_need[c] -= 1;
            col_need[s] -= 1;
        }
    }
    // Greedy can strand a few units; totals still balance, so place them
    // wherever both sides have room.
    for c in 0..counts.len() {
        for s in 0..4 {
            let take = row_need[c].min(col_need[s]);
            counts[c][s] += take;
            row_need[c] -= take;
            col_need[s] -= take;
        }
    }
    counts
}

/// Assigns every id to one of the four splits.
///
/// The result depends only on `(ids, labels, ratios, seed, stratified)`.
pub fn make_split(
    ids: &[String],
    labels: &[Label],
    ratios: [f64; 4],
    seed: u64,
    stratified: bool,
) -> Result<SplitManifest> {
    check_ratios(ratios)?;
    if ids.len() != labels.len() {
        return Err(Error::LengthMismatch { what: "ids vs labels", left: ids.len(), right: labels.len() });
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateIds(id.clone()));
        }
    }

    let mut rng = rng::seeded(seed);
    let global = apportion(ids.len(), &ratios);
    let mut tags = vec![SplitTag::Train; ids.len()];

    let mut assign = |members: &mut Vec<usize>, counts: [usize; 4], rng: &mut rng::Rng| {
        rng::shuffle(rng, members);
        let mut it = members.iter();
        for (tag, n) in SplitTag::ALL.into_iter().zip(counts) {
            for &i in it.by_ref().take(n) {
                tags[i] = tag;
            }
        }
    };

    if stratified {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, (id, label)) in ids.iter().zip(labels).enumerate() {
            let l = label.ok_or_else(|| Error::UnknownLabelWithStratification(id.clone()))?;
            by_class.entry(l).or_default().push(i);
        }
        let class_sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
        let counts = stratified_counts(&class_sizes, &ratios, global);
        for (members, c) in by_class.values_mut().zip(counts) {
            assign(members, c, &mut rng);
        }
    } else {
        let mut all: Vec<usize> = (0..ids.len()).collect();
        assign(&mut all, global, &mut rng);
    }

    let assignments = ids.iter().cloned().zip(tags).collect();
    SplitManifest::new(assignments, ratios, seed, stratified)
}

/// Rows of `data` assigned to `tag`, in input order.
pub fn apply_split(data: &LabeledScores, manifest: &SplitManifest, tag: SplitTag) -> Result<LabeledScores> {
    let mut keep = Vec::new();
    for (i, id) in data.ids().iter().enumerate() {
        match manifest.get(id) {
            Some(t) if t == tag => keep.push(i),
            Some(_) => {}
            None => return Err(Error::IdMissingFromManifest(id.clone())),
        }
    }
    Ok(data.select(&keep))
}

/// Concatenates tagged parts, namespacing ids as `<tag>/<id>`.
pub fn merge_labeled(parts: &[(&str, &LabeledScores)]) -> Result<LabeledScores> {
    let Some((_, first)) = parts.first() else {
        return Err(Error::TooFewModels(0));
    };
    let k = first.num_classes();
    let total: usize = parts.iter().map(|(_, p)| p.len()).sum();
    let mut ids = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut values = Vec::with_capacity(total * k);
    let mut seen: HashMap<String, ()> = HashMap::with_capacity(total);
    for (tag, part) in parts {
        if part.num_classes() != k {
            return Err(Error::ClassCountMismatch { expected: k, found: part.num_classes() });
        }
        for id in part.ids() {
            let name = format!("{tag}/{id}");
            if seen.insert(name.clone(), ()).is_some() {
                return Err(Error::DuplicateIdAfterNamespacing(name));
            }
            ids.push(name);
        }
        labels.extend_from_slice(part.labels());
        values.extend_from_slice(part.scores().values());
    }
    // rows were validated when each part was built
    let scores = ScoreMatrix::from_flat(k, values, f64::INFINITY)?;
    LabeledScores::new(ids, labels, scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_score_matrix;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn apportion_ten() {
        assert_eq!(apportion(10, &DEFAULT_RATIOS), [6, 1, 2, 1]);
        assert_eq!(apportion(100, &DEFAULT_RATIOS), [60, 10, 20, 10]);
        assert_eq!(apportion(7, &[0.25; 4]), [2, 2, 2, 1]);
        assert_eq!(apportion(0, &DEFAULT_RATIOS), [0; 4]);
    }

    #[test]
    fn ten_ids_split_six_one_two_one() {
        for seed in [0, 1, 99] {
            let m = make_split(&ids(10), &[None; 10], DEFAULT_RATIOS, seed, false).unwrap();
            assert_eq!(m.sizes(), [6, 1, 2, 1]);
        }
    }

    #[test]
    fn degenerate_single_id() {
        let m = make_split(&ids(1), &[Some(0)], [1.0, 0.0, 0.0, 0.0], 5, true).unwrap();
        assert_eq!(m.get("s0"), Some(SplitTag::Train));
    }

    #[test]
    fn deterministic() {
        let labels: Vec<Label> = (0..50).map(|i| Some(i % 3)).collect();
        let a = make_split(&ids(50), &labels, DEFAULT_RATIOS, 42, true).unwrap();
        let b = make_split(&ids(50), &labels, DEFAULT_RATIOS, 42, true).unwrap();
        assert_eq!(a, b);
        let c = make_split(&ids(50), &labels, DEFAULT_RATIOS, 43, true).unwrap();
        assert_ne!(a.assignments(), c.assignments());
    }

    #[test]
    fn stratified_keeps_global_sizes_on_imbalanced_labels() {
        let labels: Vec<Label> = (0..100)
            .map(|i| {
                Some(if i < 70 {
                    0
                } else if i < 95 {
                    1
                } else {
                    2 + i % 5
                })
            })
            .collect();
        let m = make_split(&ids(100), &labels, DEFAULT_RATIOS, 1, true).unwrap();
        assert_eq!(m.sizes(), [60, 10, 20, 10]);
        // class 0 has 70 members -> 42/7/14/7
        let mut class0 = [0; 4];
        for (i, tag) in m.assignments().values().enumerate() {
            if labels[i] == Some(0) {
                class0[tag.index()] += 1;
            }
        }
        assert_eq!(class0, [42, 7, 14, 7]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            make_split(&ids(3), &[None; 3], [0.5, 0.5, 0.5, 0.0], 0, false),
            Err(Error::RatiosDoNotSumToOne(_))
        ));
        assert!(matches!(
            make_split(&ids(3), &[None; 3], [1.5, -0.5, 0.0, 0.0], 0, false),
            Err(Error::RatiosDoNotSumToOne(_))
        ));
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(matches!(make_split(&dup, &[None; 2], DEFAULT_RATIOS, 0, false), Err(Error::DuplicateIds(_))));
        assert!(matches!(
            make_split(&ids(2), &[Some(0), None], DEFAULT_RATIOS, 0, true),
            Err(Error::UnknownLabelWithStratification(_))
        ));
    }

    fn tiny(ids: &[&str], k: usize) -> LabeledScores {
        let rows: Vec<Vec<f64>> = ids.iter().map(|_| vec![1.0 / k as f64; k]).collect();
        let m = if ids.is_empty() { ScoreMatrix::empty(k).unwrap() } else { validate_score_matrix(&rows).unwrap() };
        LabeledScores::new(ids.iter().map(|s| s.to_string()).collect(), vec![Some(0); ids.len()], m).unwrap()
    }

    #[test]
    fn apply_split_examples() {
        let data = tiny(&["a", "b"], 2);
        let mut map = IndexMap::new();
        map.insert("a".to_string(), SplitTag::Calib);
        map.insert("b".to_string(), SplitTag::Test);
        let manifest = SplitManifest::new(map, DEFAULT_RATIOS, 0, false).unwrap();
        let calib = apply_split(&data, &manifest, SplitTag::Calib).unwrap();
        assert_eq!(calib.ids(), &["a".to_string()]);
        assert!(apply_split(&data, &manifest, SplitTag::Train).unwrap().is_empty());

        let more = tiny(&["a", "b", "c"], 2);
        assert!(
            matches!(apply_split(&more, &manifest, SplitTag::Calib), Err(Error::IdMissingFromManifest(id)) if id == "c")
        );
    }

    #[test]
    fn merge_examples() {
        let a = tiny(&["x", "y", "z"], 7);
        let b = tiny(&["x", "w"], 7);
        let m = merge_labeled(&[("ham", &a), ("dmf", &b)]).unwrap();
        assert_eq!(m.len(), 5);
        assert_eq!(m.ids()[3], "dmf/x");

        let c = tiny(&["q"], 5);
        assert!(matches!(merge_labeled(&[("a", &a), ("c", &c)]), Err(Error::ClassCountMismatch { .. })));

        let single = merge_labeled(&[("only", &a)]).unwrap();
        assert_eq!(single.scores(), a.scores());
        assert_eq!(single.labels(), a.labels());
        assert_eq!(single.ids()[0], "only/x");

        assert!(matches!(merge_labeled(&[("a", &a), ("a", &a)]), Err(Error::DuplicateIdAfterNamespacing(_))));
    }

    proptest! {
        #[test]
        fn splits_partition_the_input(
            n in 0usize..300,
            raw in prop::array::uniform4(0u32..10),
            seed in any::<u64>(),
            k in 1usize..6,
            stratified in any::<bool>(),
        ) {
            let total: u32 = raw.iter().sum::<u32>().max(1);
            let mut ratios = raw.map(|r| r as f64 / total as f64);
            if raw.iter().all(|&r| r == 0) {
                ratios = DEFAULT_RATIOS;
            }
            let fix: f64 = ratios.iter().sum();
            prop_assume!((fix - 1.0).abs() <= 1e-9);
            let ids = ids(n);
            let labels: Vec<Label> = (0..n).map(|i| Some((i * 7 + 3) % k)).collect();
            let m = make_split(&ids, &labels, ratios, seed, stratified).unwrap();

            prop_assert_eq!(m.assignments().len(), n);
            let sizes = m.sizes();
            for s in 0..4 {
                prop_assert!((sizes[s] as f64 - n as f64 * ratios[s]).abs() < 1.0);
            }

            let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![0.5, 0.5]).collect();
            let scores = if n == 0 { ScoreMatrix::empty(2).unwrap() } else { validate_score_matrix(&rows).unwrap() };
            let data = LabeledScores::new(ids.clone(), vec![None; n], scores).unwrap();
            let mut union: Vec<String> = Vec::new();
            for tag in SplitTag::ALL {
                union.extend(apply_split(&data, &m, tag).unwrap().ids().iter().cloned());
            }
            prop_assert_eq!(union.len(), n);
            union.sort();
            let mut expected = ids.clone();
            expected.sort();
            prop_assert_eq!(union, expected);
        }
    }
}
