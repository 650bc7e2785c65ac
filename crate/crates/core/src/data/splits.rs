use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::quads::{
    parse_quadruples_with_vocab, write_quadruples, EntityId, Quadruple, Vocab, Vocabularies,
};
use crate::error::{FiltError, Result};
use crate::rng::rng_for;

/// Which of the three meta-learning sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaSplit {
    Train,
    Valid,
    Test,
}

impl MetaSplit {
    pub const ALL: [MetaSplit; 3] = [MetaSplit::Train, MetaSplit::Valid, MetaSplit::Test];

    pub fn name(self) -> &'static str {
        match self {
            MetaSplit::Train => "train",
            MetaSplit::Valid => "valid",
            MetaSplit::Test => "test",
        }
    }
}

impl std::str::FromStr for MetaSplit {
    type Err = FiltError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(MetaSplit::Train),
            "valid" => Ok(MetaSplit::Valid),
            "test" => Ok(MetaSplit::Test),
            _ => Err(FiltError::InvalidArgument(format!(
                "unknown split `{s}` (expected train, valid or test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub low: usize,
    pub high: usize,
    pub sample_frac: f64,
    pub ratio: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            low: 10,
            high: 25,
            sample_frac: 0.5,
            ratio: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl SplitConfig {
    fn check(&self) -> Result<()> {
        if self.low > self.high {
            return Err(FiltError::InvalidArgument(format!(
                "low threshold {} exceeds high threshold {}",
                self.low, self.high
            )));
        }
        if !(self.sample_frac > 0.0 && self.sample_frac <= 1.0) {
            return Err(FiltError::InvalidArgument(format!(
                "sample fraction {} outside (0, 1]",
                self.sample_frac
            )));
        }
        let sum: f64 = self.ratio.iter().sum();
        if self.ratio.iter().any(|r| *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(FiltError::InvalidArgument(format!(
                "split ratio {:?} must be non-negative and sum to 1",
                self.ratio
            )));
        }
        Ok(())
    }
}

/// Background graph plus the three meta-learning sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub vocab: Vocabularies,
    pub background: Vec<Quadruple>,
    pub meta_train: Vec<Quadruple>,
    pub meta_valid: Vec<Quadruple>,
    pub meta_test: Vec<Quadruple>,
    /// Quadruples joining unseen entities of two different meta sets.
    pub discarded: Vec<Quadruple>,
    pub unseen_train: BTreeSet<EntityId>,
    pub unseen_valid: BTreeSet<EntityId>,
    pub unseen_test: BTreeSet<EntityId>,
}

impl DatasetSplits {
    pub fn meta(&self, split: MetaSplit) -> &[Quadruple] {
        match split {
            MetaSplit::Train => &self.meta_train,
            MetaSplit::Valid => &self.meta_valid,
            MetaSplit::Test => &self.meta_test,
        }
    }

    pub fn unseen(&self, split: MetaSplit) -> &BTreeSet<EntityId> {
        match split {
            MetaSplit::Train => &self.unseen_train,
            MetaSplit::Valid => &self.unseen_valid,
            MetaSplit::Test => &self.unseen_test,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.relations.len()
    }

    pub fn is_unseen(&self, e: EntityId) -> bool {
        MetaSplit::ALL.iter().any(|&s| self.unseen(s).contains(&e))
    }

    pub fn all_unseen(&self) -> BTreeSet<EntityId> {
        MetaSplit::ALL
            .iter()
            .flat_map(|&s| self.unseen(s).iter().copied())
            .collect()
    }

    /// Entities with at least one background quadruple.
    pub fn background_entities(&self) -> BTreeSet<EntityId> {
        self.background
            .iter()
            .flat_map(|q| [q.subject, q.object])
            .collect()
    }

    /// Every known fact: background, the three meta sets and discarded links.
    pub fn all_quads(&self) -> impl Iterator<Item = &Quadruple> {
        self.background
            .iter()
            .chain(&self.meta_train)
            .chain(&self.meta_valid)
            .chain(&self.meta_test)
            .chain(&self.discarded)
    }
}

/// Number of quadruples each entity takes part in; a self-loop counts once.
pub fn entity_frequencies(quads: &[Quadruple], num_entities: usize) -> Vec<usize> {
    let mut freq = vec![0usize; num_entities];
    for q in quads {
        freq[q.subject] += 1;
        if q.object != q.subject {
            freq[q.object] += 1;
        }
    }
    freq
}

/// Largest-remainder apportionment of `total` items by `ratios`; ties in the
/// fractional part go to the earlier slot.
pub fn largest_remainder(total: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    let mut counts = [0usize; 3];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = q.floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Select low-frequency entities, sample a fraction of them as unseen
/// entities, split those 3-way and distribute the quadruples.
pub fn build_ooc_splits(
    quads: &[Quadruple],
    vocab: &Vocabularies,
    cfg: &SplitConfig,
) -> Result<DatasetSplits> {
    cfg.check()?;
    let num_entities = vocab.entities.len();
    if let Some(q) = quads.iter().find(|q| q.subject >= num_entities || q.object >= num_entities) {
        return Err(FiltError::InvalidArgument(format!(
            "quadruple {q:?} references an entity outside the vocabulary"
        )));
    }

    let freq = entity_frequencies(quads, num_entities);
    let band: Vec<EntityId> = (0..num_entities)
        .filter(|&e| freq[e] >= cfg.low && freq[e] <= cfg.high)
        .collect();
    if band.is_empty() {
        log::warn!(
            "no entity has a frequency in [{}, {}]; all quadruples go to the background",
            cfg.low,
            cfg.high
        );
    }

    let n_unseen = ((band.len() as f64) * cfg.sample_frac).round() as usize;
    let mut rng = rng_for(cfg.seed, &[0x5EED_5B17]);
    let picked: Vec<EntityId> = index::sample(&mut rng, band.len(), n_unseen)
        .into_iter()
        .map(|i| band[i])
        .collect();
    let [n_train, n_valid, _] = largest_remainder(n_unseen, &cfg.ratio);

    // 0 = train, 1 = valid, 2 = test
    let mut owner: HashMap<EntityId, usize> = HashMap::new();
    for (i, &e) in picked.iter().enumerate() {
        let set = if i < n_train {
            0
        } else if i < n_train + n_valid {
            1
        } else {
            2
        };
        owner.insert(e, set);
    }

    let mut sets: [Vec<Quadruple>; 3] = Default::default();
    let mut background = Vec::new();
    let mut discarded = Vec::new();
    for q in quads {
        let a = owner.get(&q.subject).copied();
        let b = owner.get(&q.object).copied();
        match (a, b) {
            (None, None) => background.push(*q),
            (Some(x), None) | (None, Some(x)) => sets[x].push(*q),
            (Some(x), Some(y)) if x == y => sets[x].push(*q),
            _ => discarded.push(*q),
        }
    }

    let unseen = |set: usize| -> BTreeSet<EntityId> {
        owner
            .iter()
            .filter(|(_, &s)| s == set)
            .map(|(&e, _)| e)
            .collect()
    };
    let [meta_train, meta_valid, meta_test] = sets;
    Ok(DatasetSplits {
        vocab: vocab.clone(),
        background,
        meta_train,
        meta_valid,
        meta_test,
        discarded,
        unseen_train: unseen(0),
        unseen_valid: unseen(1),
        unseen_test: unseen(2),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub offenders: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub discarded_cross_links: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(f, "[{}] {}", if c.passed { "pass" } else { "FAIL" }, c.name)?;
            if !c.offenders.is_empty() {
                let shown: Vec<_> = c.offenders.iter().take(10).cloned().collect();
                write!(f, " ({} offenders: {}", c.offenders.len(), shown.join(", "))?;
                if c.offenders.len() > 10 {
                    write!(f, ", ...")?;
                }
                write!(f, ")")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "discarded cross-set links: {}", self.discarded_cross_links)
    }
}

fn fmt_quad(q: &Quadruple) -> String {
    format!("({}, {}, {}, {})", q.subject, q.relation, q.object, q.timestamp)
}

fn check(name: impl Into<String>, offenders: Vec<String>) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: offenders.is_empty(),
        offenders,
    }
}

/// Check every structural invariant of a split. Never fails; the report
/// lists offending ids per check.
pub fn validate_splits(splits: &DatasetSplits) -> ValidationReport {
    let mut checks = Vec::new();
    let set_of = |e: EntityId| -> Vec<MetaSplit> {
        MetaSplit::ALL
            .iter()
            .copied()
            .filter(|&s| splits.unseen(s).contains(&e))
            .collect()
    };

    let mut overlap: Vec<String> = splits
        .all_unseen()
        .into_iter()
        .filter(|&e| set_of(e).len() > 1)
        .map(|e| e.to_string())
        .collect();
    overlap.sort();
    checks.push(check("unseen-sets-disjoint", overlap));

    let mut purity = Vec::new();
    let bg_entities = splits.background_entities();
    for e in splits.all_unseen() {
        if bg_entities.contains(&e) {
            purity.push(format!("entity {e}"));
        }
    }
    for q in &splits.background {
        if splits.is_unseen(q.subject) || splits.is_unseen(q.object) {
            purity.push(fmt_quad(q));
        }
    }
    checks.push(check("background-purity", purity));

    for split in MetaSplit::ALL {
        let own = splits.unseen(split);
        let offenders = splits
            .meta(split)
            .iter()
            .filter(|q| !own.contains(&q.subject) && !own.contains(&q.object))
            .map(fmt_quad)
            .collect();
        checks.push(check(format!("meta-{}-membership", split.name()), offenders));
    }

    let mut cross = Vec::new();
    for split in MetaSplit::ALL {
        for q in splits.meta(split) {
            let foreign = [q.subject, q.object]
                .iter()
                .any(|&e| set_of(e).iter().any(|&s| s != split));
            if foreign {
                cross.push(format!("{} in meta-{}", fmt_quad(q), split.name()));
            }
        }
    }
    checks.push(check("no-cross-links", cross));

    let (ne, nr, nt) = (
        splits.vocab.entities.len(),
        splits.vocab.relations.len(),
        splits.vocab.times.len(),
    );
    let out_of_range = splits
        .all_quads()
        .filter(|q| q.subject >= ne || q.object >= ne || q.relation >= nr || q.timestamp >= nt)
        .map(fmt_quad)
        .collect();
    checks.push(check("ids-in-range", out_of_range));

    ValidationReport {
        checks,
        discarded_cross_links: splits.discarded.len(),
    }
}

/// Column semantics follow the usual dataset-statistics table.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_timestamps: usize,
    pub unseen_train: usize,
    pub unseen_valid: usize,
    pub unseen_test: usize,
    pub n_back: usize,
    pub n_meta_train: usize,
    pub n_meta_valid: usize,
    pub n_meta_test: usize,
}

impl DatasetStats {
    pub const CSV_HEADER: &'static str = "dataset,entities,relations,timestamps,unseen_train,unseen_valid,unseen_test,n_back,n_meta_train,n_meta_valid,n_meta_test";

    pub fn csv_row(&self, dataset: &str) -> String {
        format!(
            "{dataset},{},{},{},{},{},{},{},{},{},{}",
            self.num_entities,
            self.num_relations,
            self.num_timestamps,
            self.unseen_train,
            self.unseen_valid,
            self.unseen_test,
            self.n_back,
            self.n_meta_train,
            self.n_meta_valid,
            self.n_meta_test
        )
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>8} {:>6} {:>6} {:>9} {:>9} {:>8} {:>9} {:>11} {:>11} {:>10}",
            "|E|", "|R|", "|T|", "|E'_tr|", "|E'_va|", "|E'_te|", "N_back", "N_meta_tr", "N_meta_va", "N_meta_te"
        )?;
        write!(
            f,
            "{:>8} {:>6} {:>6} {:>9} {:>9} {:>8} {:>9} {:>11} {:>11} {:>10}",
            self.num_entities,
            self.num_relations,
            self.num_timestamps,
            self.unseen_train,
            self.unseen_valid,
            self.unseen_test,
            self.n_back,
            self.n_meta_train,
            self.n_meta_valid,
            self.n_meta_test
        )
    }
}

pub fn dataset_stats(splits: &DatasetSplits) -> DatasetStats {
    DatasetStats {
        num_entities: splits.vocab.entities.len(),
        num_relations: splits.vocab.relations.len(),
        num_timestamps: splits.vocab.times.len(),
        unseen_train: splits.unseen_train.len(),
        unseen_valid: splits.unseen_valid.len(),
        unseen_test: splits.unseen_test.len(),
        n_back: splits.background.len(),
        n_meta_train: splits.meta_train.len(),
        n_meta_valid: splits.meta_valid.len(),
        n_meta_test: splits.meta_test.len(),
    }
}

/// `manifest.json` written next to persisted splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub config: Option<SplitConfig>,
    pub stats: DatasetStats,
    pub discarded_cross_links: usize,
}

const QUAD_FILES: [&str; 5] = [
    "background.txt",
    "meta_train.txt",
    "meta_valid.txt",
    "meta_test.txt",
    "discarded.txt",
];

fn write_vocab(path: &Path, v: &Vocab) -> Result<()> {
    let mut text = v.tokens().join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| FiltError::io(path, e))
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path).map_err(|e| FiltError::io(path, e))?;
    Vocab::from_tokens(text.lines().filter(|l| !l.is_empty()))
}

fn write_unseen(path: &Path, set: &BTreeSet<EntityId>, v: &Vocab) -> Result<()> {
    let text: String = set
        .iter()
        .map(|&e| format!("{e}\t{}\n", v.token(e).unwrap_or("")))
        .collect();
    fs::write(path, text).map_err(|e| FiltError::io(path, e))
}

fn read_unseen(path: &Path) -> Result<BTreeSet<EntityId>> {
    let text = fs::read_to_string(path).map_err(|e| FiltError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split('\t')
                .next()
                .and_then(|id| id.trim().parse().ok())
                .ok_or_else(|| FiltError::Parse {
                    source_name: path.display().to_string(),
                    line: i + 1,
                    msg: "expected an entity id".into(),
                })
        })
        .collect()
}

/// Persist splits as five quadruple files, three unseen-entity lists, the
/// vocabularies and a JSON manifest.
pub fn save_splits(
    dir: impl AsRef<Path>,
    splits: &DatasetSplits,
    config: Option<&SplitConfig>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| FiltError::io(dir, e))?;
    let lists = [
        &splits.background,
        &splits.meta_train,
        &splits.meta_valid,
        &splits.meta_test,
        &splits.discarded,
    ];
    for (name, quads) in QUAD_FILES.iter().zip(lists) {
        write_quadruples(dir.join(name), quads, &splits.vocab)?;
    }
    for split in MetaSplit::ALL {
        write_unseen(
            &dir.join(format!("unseen_{}.txt", split.name())),
            splits.unseen(split),
            &splits.vocab.entities,
        )?;
    }
    write_vocab(&dir.join("entities.txt"), &splits.vocab.entities)?;
    write_vocab(&dir.join("relations.txt"), &splits.vocab.relations)?;
    write_vocab(&dir.join("times.txt"), &splits.vocab.times)?;
    let manifest = SplitManifest {
        config: config.cloned(),
        stats: dataset_stats(splits),
        discarded_cross_links: splits.discarded.len(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| FiltError::io(&path, e))
}

pub fn load_splits(dir: impl AsRef<Path>) -> Result<DatasetSplits> {
    let dir = dir.as_ref();
    let vocab = Vocabularies {
        entities: read_vocab(&dir.join("entities.txt"))?,
        relations: read_vocab(&dir.join("relations.txt"))?,
        times: read_vocab(&dir.join("times.txt"))?,
    };
    let mut lists = Vec::new();
    for name in QUAD_FILES {
        lists.push(parse_quadruples_with_vocab(dir.join(name), &vocab)?);
    }
    let mut lists = lists.into_iter();
    let mut next = || lists.next().unwrap_or_default();
    Ok(DatasetSplits {
        background: next(),
        meta_train: next(),
        meta_valid: next(),
        meta_test: next(),
        discarded: next(),
        unseen_train: read_unseen(&dir.join("unseen_train.txt"))?,
        unseen_valid: read_unseen(&dir.join("unseen_valid.txt"))?,
        unseen_test: read_unseen(&dir.join("unseen_test.txt"))?,
        vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> Vocabularies {
        Vocabularies {
            entities: Vocab::from_tokens((0..n).map(|i| format!("e{i}"))).unwrap(),
            relations: Vocab::from_tokens(["r0", "r1"]).unwrap(),
            times: Vocab::from_tokens((0..10).map(|i| i.to_string())).unwrap(),
        }
    }

    #[test]
    fn largest_remainder_preserves_total() {
        assert_eq!(largest_remainder(5, &[0.8, 0.1, 0.1]), [4, 1, 0]);
        assert_eq!(largest_remainder(10, &[0.8, 0.1, 0.1]), [8, 1, 1]);
        assert_eq!(largest_remainder(0, &[0.8, 0.1, 0.1]), [0, 0, 0]);
        for n in 0..200 {
            assert_eq!(largest_remainder(n, &[0.8, 0.1, 0.1]).iter().sum::<usize>(), n);
            assert_eq!(largest_remainder(n, &[0.34, 0.33, 0.33]).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn self_loop_counts_once() {
        let q = [Quadruple::new(0, 0, 0, 0), Quadruple::new(0, 0, 1, 0)];
        assert_eq!(entity_frequencies(&q, 2), vec![2, 1]);
    }

    #[test]
    fn empty_band_puts_everything_in_background() {
        let quads: Vec<_> = (0..6).map(|i| Quadruple::new(i, 0, i + 1, 0)).collect();
        let cfg = SplitConfig {
            low: 100,
            high: 200,
            ..Default::default()
        };
        let s = build_ooc_splits(&quads, &vocab(7), &cfg).unwrap();
        assert_eq!(s.background, quads);
        assert!(s.meta_train.is_empty() && s.meta_valid.is_empty() && s.meta_test.is_empty());
        assert!(s.all_unseen().is_empty());
        assert!(validate_splits(&s).passed());
    }

    #[test]
    fn rejects_bad_config() {
        let q = [Quadruple::new(0, 0, 1, 0)];
        let bad = [
            SplitConfig { low: 5, high: 4, ..Default::default() },
            SplitConfig { sample_frac: 0.0, ..Default::default() },
            SplitConfig { ratio: [0.5, 0.5, 0.5], ..Default::default() },
        ];
        for cfg in bad {
            assert!(build_ooc_splits(&q, &vocab(2), &cfg).is_err());
        }
    }

    fn planted() -> DatasetSplits {
        DatasetSplits {
            vocab: vocab(6),
            background: vec![Quadruple::new(0, 0, 1, 0)],
            meta_train: vec![Quadruple::new(2, 0, 0, 1)],
            meta_valid: vec![Quadruple::new(3, 1, 1, 2)],
            meta_test: vec![Quadruple::new(4, 0, 0, 3)],
            discarded: vec![],
            unseen_train: [2].into(),
            unseen_valid: [3].into(),
            unseen_test: [4].into(),
        }
    }

    #[test]
    fn planted_cross_link_is_reported() {
        let mut s = planted();
        assert!(validate_splits(&s).passed());
        let bad = Quadruple::new(2, 1, 4, 5);
        s.meta_train.push(bad);
        let r = validate_splits(&s);
        let c = r.check("no-cross-links").unwrap();
        assert!(!c.passed);
        assert_eq!(c.offenders, vec!["(2, 1, 4, 5) in meta-train".to_string()]);
    }

    #[test]
    fn planted_background_leak_is_reported() {
        let mut s = planted();
        s.background.push(Quadruple::new(3, 0, 0, 0));
        let r = validate_splits(&s);
        let c = r.check("background-purity").unwrap();
        assert!(!c.passed);
        assert!(c.offenders.contains(&"entity 3".to_string()));
        assert!(r.check("no-cross-links").unwrap().passed);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = planted();
        save_splits(dir.path(), &s, Some(&SplitConfig::default())).unwrap();
        let back = load_splits(dir.path()).unwrap();
        assert_eq!(back, s);
        let m: SplitManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(m.stats, dataset_stats(&s));
    }

    #[test]
    fn stats_of_empty_meta_sets_are_zero() {
        let mut s = planted();
        s.meta_train.clear();
        s.meta_valid.clear();
        s.meta_test.clear();
        let st = dataset_stats(&s);
        assert_eq!((st.n_meta_train, st.n_meta_valid, st.n_meta_test), (0, 0, 0));
        assert_eq!(st.n_back, 1);
    }
}
