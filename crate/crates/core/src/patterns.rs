//! Task-execution transaction database and frequent co-assignment sequences.
//!
//! Each server contributes one sequence of itemsets: the tasks that failed
//! (or succeeded) there at each timestamp. Patterns frequent among failures
//! form `Nf` (avoid), patterns frequent among successes form `Sf` (prefer).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ResourceVector, ServerId, TaskId, VmId};

/// Relative support values swept in the mining experiment.
pub const MIN_SUP_SWEEP: [f64; 5] = [0.009, 0.040, 0.065, 0.100, 0.250];

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("duplicate record for task {task} at t={timestamp}")]
    DuplicateEntry { task: TaskId, timestamp: u64 },
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Failed,
    Succeeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub timestamp: u64,
    pub task_id: TaskId,
    pub vm_id: VmId,
    pub server_id: ServerId,
    pub usage: ResourceVector,
    pub outcome: Outcome,
}

/// Validated transaction database indexed by (server, timestamp) and task.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tdtdb {
    records: Vec<TransactionRecord>,
    by_server_time: BTreeMap<(ServerId, u64), Vec<usize>>,
    by_task: BTreeMap<TaskId, BTreeMap<u64, usize>>,
}

impl Tdtdb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn build(records: Vec<TransactionRecord>) -> Result<Self, PatternError> {
        let mut db = Self::new();
        for r in records {
            db.insert(r)?;
        }
        Ok(db)
    }

    pub fn insert(&mut self, record: TransactionRecord) -> Result<(), PatternError> {
        let slot = self.by_task.entry(record.task_id).or_default();
        if slot.contains_key(&record.timestamp) {
            return Err(PatternError::DuplicateEntry {
                task: record.task_id,
                timestamp: record.timestamp,
            });
        }
        let idx = self.records.len();
        slot.insert(record.timestamp, idx);
        self.by_server_time
            .entry((record.server_id, record.timestamp))
            .or_default()
            .push(idx);
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TransactionRecord] {
        &self.records
    }

    pub fn servers(&self) -> BTreeSet<ServerId> {
        self.by_server_time.keys().map(|(s, _)| *s).collect()
    }

    pub fn timestamps(&self) -> BTreeSet<u64> {
        self.by_server_time.keys().map(|(_, t)| *t).collect()
    }

    pub fn task_history(&self, task: TaskId) -> impl Iterator<Item = &TransactionRecord> {
        self.by_task
            .get(&task)
            .into_iter()
            .flat_map(|m| m.values().map(|&i| &self.records[i]))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), PatternError> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, PatternError> {
        let mut db = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: TransactionRecord = serde_json::from_str(&line).map_err(|e| PatternError::Format {
                line: i + 1,
                reason: e.to_string(),
            })?;
            db.insert(r)?;
        }
        Ok(db)
    }
}

pub type Itemset = Vec<TaskId>;
pub type Sequence = Vec<Itemset>;

/// One sequence per server (or per server and window), itemsets sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SequenceDb {
    pub sequences: Vec<Sequence>,
}

impl SequenceDb {
    pub fn new(sequences: Vec<Sequence>) -> Self {
        let sequences = sequences
            .into_iter()
            .map(|s| {
                s.into_iter()
                    .map(|mut is| {
                        is.sort_unstable();
                        is.dedup();
                        is
                    })
                    .filter(|is| !is.is_empty())
                    .collect::<Sequence>()
            })
            .filter(|s| !s.is_empty())
            .collect();
        Self { sequences }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Per-server time-ordered itemsets of tasks with the given outcome.
pub fn extract_sequences(db: &Tdtdb, outcome: Outcome) -> SequenceDb {
    extract_windowed(db, outcome, None)
}

/// Like [`extract_sequences`] but cuts each server's sequence into tumbling
/// windows of `window_min` minutes measured from the first timestamp.
pub fn extract_windowed(db: &Tdtdb, outcome: Outcome, window_min: Option<u64>) -> SequenceDb {
    let t0 = db.timestamps().first().copied().unwrap_or(0);
    let mut groups: BTreeMap<(ServerId, u64), Sequence> = BTreeMap::new();
    for (&(server, ts), idxs) in &db.by_server_time {
        let items: Itemset = idxs
            .iter()
            .map(|&i| &db.records[i])
            .filter(|r| r.outcome == outcome)
            .map(|r| r.task_id)
            .collect();
        let win = window_min.filter(|w| *w > 0).map_or(0, |w| (ts - t0) / w);
        groups.entry((server, win)).or_default().push(items);
    }
    SequenceDb::new(groups.into_values().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SequencePattern {
    pub elements: Vec<Itemset>,
    pub support: usize,
}

impl SequencePattern {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for SequencePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<")?;
        for (i, e) in self.elements.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str("{")?;
            for (j, t) in e.iter().enumerate() {
                if j > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{t}")?;
            }
            f.write_str("}")?;
        }
        f.write_str(">")
    }
}

/// Bounds on pattern shape; `None` is unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningLimits {
    pub max_elements: Option<usize>,
    pub max_itemset_size: Option<usize>,
}

/// `ceil(rel · db_len)`, at least one.
pub fn absolute_min_sup(relative: f64, db_len: usize) -> usize {
    ((relative * db_len as f64) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningRun {
    pub patterns: Vec<SequencePattern>,
    pub runtime_ms: f64,
    pub peak_memory_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningMetrics {
    pub pattern_count: usize,
    pub runtime_ms: f64,
    /// Estimated from the sizes of the projected databases alive at once.
    pub peak_memory_bytes: usize,
}

pub fn mining_metrics(run: &MiningRun) -> MiningMetrics {
    MiningMetrics {
        pattern_count: run.patterns.len(),
        runtime_ms: run.runtime_ms,
        peak_memory_bytes: run.peak_memory_bytes,
    }
}

// A pattern's projection: for each containing sequence, every position at
// which some embedding of the pattern ends.
struct Projection {
    rows: Vec<(usize, Vec<usize>)>,
}

impl Projection {
    fn bytes(&self) -> usize {
        self.rows.iter().map(|(_, e)| 16 + 8 * e.len()).sum()
    }
}

struct Miner<'a> {
    db: &'a SequenceDb,
    min_sup: usize,
    limits: MiningLimits,
}

impl Miner<'_> {
    fn grow(&self, elements: &mut Vec<Itemset>, proj: &Projection, out: &mut Vec<SequencePattern>, peak: &mut usize, live: usize) {
        let live = live + proj.bytes();
        *peak = (*peak).max(live);
        out.push(SequencePattern {
            elements: elements.clone(),
            support: proj.rows.len(),
        });
        let last = elements.last().expect("non-empty pattern");
        let last_max = *last.last().expect("non-empty itemset");
        let can_i = self.limits.max_itemset_size.is_none_or(|m| last.len() < m);
        let can_s = self.limits.max_elements.is_none_or(|m| elements.len() < m);

        let mut i_ext: BTreeMap<TaskId, Vec<(usize, Vec<usize>)>> = BTreeMap::new();
        let mut s_ext: BTreeMap<TaskId, Vec<(usize, Vec<usize>)>> = BTreeMap::new();
        for (seq_idx, ends) in &proj.rows {
            let seq = &self.db.sequences[*seq_idx];
            if can_i {
                let mut local: BTreeMap<TaskId, Vec<usize>> = BTreeMap::new();
                for &k in ends {
                    for &x in seq[k].iter().filter(|x| **x > last_max) {
                        local.entry(x).or_default().push(k);
                    }
                }
                for (x, e) in local {
                    i_ext.entry(x).or_default().push((*seq_idx, e));
                }
            }
            if can_s {
                let first = ends[0];
                let mut local: BTreeMap<TaskId, Vec<usize>> = BTreeMap::new();
                for (k, itemset) in seq.iter().enumerate().skip(first + 1) {
                    for &x in itemset {
                        local.entry(x).or_default().push(k);
                    }
                }
                for (x, e) in local {
                    s_ext.entry(x).or_default().push((*seq_idx, e));
                }
            }
        }
        for (x, rows) in i_ext {
            if rows.len() >= self.min_sup {
                elements.last_mut().unwrap().push(x);
                self.grow(elements, &Projection { rows }, out, peak, live);
                elements.last_mut().unwrap().pop();
            }
        }
        for (x, rows) in s_ext {
            if rows.len() >= self.min_sup {
                elements.push(vec![x]);
                self.grow(elements, &Projection { rows }, out, peak, live);
                elements.pop();
            }
        }
    }
}

/// All patterns (ordered subsequences of itemset subsets) contained in at
/// least `min_sup` sequences, sorted canonically.
pub fn mine_frequent(db: &SequenceDb, min_sup: usize, limits: MiningLimits) -> Vec<SequencePattern> {
    mine_with_metrics(db, min_sup, limits).patterns
}

pub fn mine_with_metrics(db: &SequenceDb, min_sup: usize, limits: MiningLimits) -> MiningRun {
    let start = Instant::now();
    let min_sup = min_sup.max(1);
    let base_bytes: usize = db.sequences.iter().flatten().map(|is| 24 + 8 * is.len()).sum();
    let mut singles: BTreeMap<TaskId, Vec<(usize, Vec<usize>)>> = BTreeMap::new();
    for (seq_idx, seq) in db.sequences.iter().enumerate() {
        let mut local: BTreeMap<TaskId, Vec<usize>> = BTreeMap::new();
        for (k, itemset) in seq.iter().enumerate() {
            for &x in itemset {
                local.entry(x).or_default().push(k);
            }
        }
        for (x, e) in local {
            singles.entry(x).or_default().push((seq_idx, e));
        }
    }
    let allowed = limits.max_elements != Some(0) && limits.max_itemset_size != Some(0);
    let roots: Vec<(TaskId, Vec<(usize, Vec<usize>)>)> = singles
        .into_iter()
        .filter(|(_, rows)| allowed && rows.len() >= min_sup)
        .collect();
    let miner = Miner { db, min_sup, limits };
    let branches: Vec<(Vec<SequencePattern>, usize)> = roots
        .into_par_iter()
        .map(|(x, rows)| {
            let mut out = Vec::new();
            let mut peak = 0;
            miner.grow(&mut vec![vec![x]], &Projection { rows }, &mut out, &mut peak, 0);
            (out, peak)
        })
        .collect();
    let peak_branch = branches.iter().map(|(_, p)| *p).max().unwrap_or(0);
    let mut patterns: Vec<SequencePattern> = branches.into_iter().flat_map(|(p, _)| p).collect();
    patterns.sort_unstable_by(|a, b| a.elements.cmp(&b.elements));
    MiningRun {
        patterns,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
        peak_memory_bytes: base_bytes + peak_branch,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternClass {
    Nf,
    Sf,
}

impl fmt::Display for PatternClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatternClass::Nf => "Nf",
            PatternClass::Sf => "Sf",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatternKnowledge {
    pub fsp: SequenceDb,
    pub ssp: SequenceDb,
    pub nf: Vec<SequencePattern>,
    pub sf: Vec<SequencePattern>,
    pub min_sup: usize,
}

impl PatternKnowledge {
    pub fn is_empty(&self) -> bool {
        self.nf.is_empty() && self.sf.is_empty()
    }
}

/// Patterns below `min_sup` are dropped; a pattern frequent in both inputs
/// is kept in `nf` only.
pub fn classify_patterns(fsp_patterns: &[SequencePattern], ssp_patterns: &[SequencePattern], min_sup: usize) -> PatternKnowledge {
    let nf: Vec<SequencePattern> = fsp_patterns.iter().filter(|p| p.support >= min_sup).cloned().collect();
    let nf_keys: BTreeSet<&Vec<Itemset>> = nf.iter().map(|p| &p.elements).collect();
    let sf = ssp_patterns
        .iter()
        .filter(|p| p.support >= min_sup && !nf_keys.contains(&p.elements))
        .cloned()
        .collect();
    PatternKnowledge {
        nf,
        sf,
        min_sup,
        ..Default::default()
    }
}

/// Extract, mine and classify in one pass. `relative_min_sup` is converted
/// per sequence database; the stored `min_sup` is the failure-side count.
pub fn build_knowledge(db: &Tdtdb, relative_min_sup: f64, window_min: Option<u64>, limits: MiningLimits) -> PatternKnowledge {
    let fsp = extract_windowed(db, Outcome::Failed, window_min);
    let ssp = extract_windowed(db, Outcome::Succeeded, window_min);
    let f_sup = absolute_min_sup(relative_min_sup, fsp.len());
    let s_sup = absolute_min_sup(relative_min_sup, ssp.len());
    let nf = mine_frequent(&fsp, f_sup, limits);
    let nf_keys: BTreeSet<&Vec<Itemset>> = nf.iter().map(|p| &p.elements).collect();
    let sf = mine_frequent(&ssp, s_sup, limits)
        .into_iter()
        .filter(|p| !nf_keys.contains(&p.elements))
        .collect();
    PatternKnowledge {
        fsp,
        ssp,
        nf,
        sf,
        min_sup: f_sup,
    }
}

/// CSV with columns `pattern,support,class`.
pub fn write_pattern_report<W: Write>(w: W, knowledge: &PatternKnowledge) -> Result<(), PatternError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["pattern", "support", "class"])?;
    for (class, set) in [(PatternClass::Nf, &knowledge.nf), (PatternClass::Sf, &knowledge.sf)] {
        for p in set {
            out.write_record([p.canonical(), p.support.to_string(), class.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(ts: u64, task: u64, server: u32, outcome: Outcome) -> TransactionRecord {
        TransactionRecord {
            timestamp: ts,
            task_id: TaskId(task),
            vm_id: VmId(server),
            server_id: ServerId(server),
            usage: ResourceVector::ZERO,
            outcome,
        }
    }

    fn seq(items: &[&[u64]]) -> Sequence {
        items.iter().map(|is| is.iter().map(|&t| TaskId(t)).collect()).collect()
    }

    fn pat(items: &[&[u64]], support: usize) -> SequencePattern {
        SequencePattern {
            elements: seq(items),
            support,
        }
    }

    fn contains(s: &Sequence, p: &[Itemset]) -> bool {
        let mut k = 0;
        for e in p {
            while k < s.len() && !e.iter().all(|x| s[k].binary_search(x).is_ok()) {
                k += 1;
            }
            if k == s.len() {
                return false;
            }
            k += 1;
        }
        true
    }

    fn subsets(is: &Itemset) -> Vec<Itemset> {
        (1u32..(1 << is.len()))
            .map(|m| is.iter().enumerate().filter(|(i, _)| m & (1 << i) != 0).map(|(_, x)| *x).collect())
            .collect()
    }

    fn all_subsequences(s: &Sequence) -> BTreeSet<Vec<Itemset>> {
        let mut acc: BTreeSet<Vec<Itemset>> = BTreeSet::new();
        for mask in 1u32..(1 << s.len()) {
            let chosen: Vec<&Itemset> = (0..s.len()).filter(|i| mask & (1 << i) != 0).map(|i| &s[i]).collect();
            let mut partial: Vec<Vec<Itemset>> = vec![Vec::new()];
            for is in chosen {
                let subs = subsets(is);
                partial = partial
                    .into_iter()
                    .flat_map(|p| {
                        subs.iter().map(move |x| {
                            let mut q = p.clone();
                            q.push(x.clone());
                            q
                        })
                    })
                    .collect();
            }
            acc.extend(partial);
        }
        acc
    }

    fn brute_force(db: &SequenceDb, min_sup: usize) -> Vec<SequencePattern> {
        let mut counts: BTreeMap<Vec<Itemset>, usize> = BTreeMap::new();
        for s in &db.sequences {
            for p in all_subsequences(s) {
                *counts.entry(p).or_default() += 1;
            }
        }
        counts
            .into_iter()
            .filter(|(_, c)| *c >= min_sup)
            .map(|(elements, support)| SequencePattern { elements, support })
            .collect()
    }

    #[test]
    fn empty_and_duplicate() {
        assert!(Tdtdb::build(vec![]).unwrap().is_empty());
        let err = Tdtdb::build(vec![rec(0, 1, 1, Outcome::Failed), rec(0, 1, 2, Outcome::Succeeded)]).unwrap_err();
        assert!(matches!(err, PatternError::DuplicateEntry { timestamp: 0, .. }));
    }

    #[test]
    fn groups_by_server() {
        let db = Tdtdb::build(vec![
            rec(0, 1, 1, Outcome::Succeeded),
            rec(0, 2, 2, Outcome::Succeeded),
            rec(0, 3, 3, Outcome::Succeeded),
        ])
        .unwrap();
        assert_eq!(db.servers().len(), 3);
        assert_eq!(extract_sequences(&db, Outcome::Succeeded).len(), 3);
    }

    #[test]
    fn failed_sequence_shape() {
        let db = Tdtdb::build(vec![
            rec(0, 3, 1, Outcome::Failed),
            rec(0, 1, 1, Outcome::Failed),
            rec(0, 2, 1, Outcome::Succeeded),
            rec(5, 4, 1, Outcome::Failed),
            rec(10, 1, 1, Outcome::Succeeded),
        ])
        .unwrap();
        let fsp = extract_sequences(&db, Outcome::Failed);
        assert_eq!(fsp.sequences, vec![seq(&[&[1, 3], &[4]])]);
        let none = Tdtdb::build(vec![rec(0, 1, 1, Outcome::Succeeded)]).unwrap();
        assert!(extract_sequences(&none, Outcome::Failed).is_empty());
        let all_failed = Tdtdb::build(vec![rec(0, 1, 1, Outcome::Failed)]).unwrap();
        assert!(extract_sequences(&all_failed, Outcome::Succeeded).is_empty());
    }

    #[test]
    fn tumbling_windows_split_sequences() {
        let db = Tdtdb::build((0..6).map(|i| rec(i * 5, 1, 1, Outcome::Failed)).collect()).unwrap();
        assert_eq!(extract_windowed(&db, Outcome::Failed, Some(10)).len(), 3);
        assert_eq!(extract_windowed(&db, Outcome::Failed, None).len(), 1);
    }

    #[test]
    fn miner_small_example() {
        let mut seqs = vec![seq(&[&[1], &[2]]); 3];
        seqs.push(seq(&[&[3]]));
        let db = SequenceDb::new(seqs);
        let got = mine_frequent(&db, 2, MiningLimits::default());
        assert_eq!(got, vec![pat(&[&[1]], 3), pat(&[&[1], &[2]], 3), pat(&[&[2]], 3)]);
        assert!(mine_frequent(&db, 5, MiningLimits::default()).is_empty());
    }

    #[test]
    fn single_sequence_all_subsequences() {
        let db = SequenceDb::new(vec![seq(&[&[1, 2], &[1], &[3, 2]])]);
        assert_eq!(mine_frequent(&db, 1, MiningLimits::default()), brute_force(&db, 1));
    }

    #[test]
    fn limits_bound_shape() {
        let db = SequenceDb::new(vec![seq(&[&[1, 2, 3], &[1, 2], &[3]])]);
        let lim = MiningLimits {
            max_elements: Some(2),
            max_itemset_size: Some(2),
        };
        let got = mine_frequent(&db, 1, lim);
        assert!(got.iter().all(|p| p.len() <= 2 && p.elements.iter().all(|e| e.len() <= 2)));
        let expect: Vec<_> = brute_force(&db, 1)
            .into_iter()
            .filter(|p| p.len() <= 2 && p.elements.iter().all(|e| e.len() <= 2))
            .collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn overlap_goes_to_nf() {
        let x = pat(&[&[1, 2]], 3);
        let y = pat(&[&[4]], 1);
        let k = classify_patterns(&[x.clone(), y.clone()], &[x.clone(), pat(&[&[5]], 2)], 2);
        assert_eq!(k.nf, vec![x]);
        assert_eq!(k.sf, vec![pat(&[&[5]], 2)]);
    }

    #[test]
    fn relative_support_conversion() {
        assert_eq!(absolute_min_sup(0.1, 10), 1);
        assert_eq!(absolute_min_sup(0.25, 10), 3);
        assert_eq!(absolute_min_sup(0.009, 10), 1);
        assert_eq!(absolute_min_sup(0.5, 0), 1);
    }

    #[test]
    fn canonical_string() {
        assert_eq!(pat(&[&[1, 3], &[4]], 1).canonical(), "<{a1,a3},{a4}>");
    }

    #[test]
    fn metrics_on_empty_db() {
        let run = mine_with_metrics(&SequenceDb::default(), 1, MiningLimits::default());
        assert_eq!(mining_metrics(&run).pattern_count, 0);
    }

    #[test]
    fn tdtdb_jsonl_round_trip() {
        let db = Tdtdb::build(vec![rec(0, 1, 1, Outcome::Failed), rec(5, 1, 2, Outcome::Succeeded)]).unwrap();
        let mut buf = Vec::new();
        db.write_jsonl(&mut buf).unwrap();
        let back = Tdtdb::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, db);
        assert!(Tdtdb::read_jsonl(&b"{not json}\n"[..]).is_err());
    }

    fn arb_db() -> impl Strategy<Value = SequenceDb> {
        let itemset = prop::collection::btree_set(1u64..6, 1..=4).prop_map(|s| s.into_iter().map(TaskId).collect::<Itemset>());
        let sequence = prop::collection::vec(itemset, 1..=4);
        prop::collection::vec(sequence, 0..=6).prop_map(SequenceDb::new)
    }

    proptest! {
        #[test]
        fn equals_brute_force(db in arb_db(), min_sup in 1usize..4) {
            prop_assert_eq!(mine_frequent(&db, min_sup, MiningLimits::default()), brute_force(&db, min_sup));
        }

        #[test]
        fn anti_monotone(db in arb_db()) {
            let found = mine_frequent(&db, 1, MiningLimits::default());
            let index: BTreeMap<&Vec<Itemset>, usize> = found.iter().map(|p| (&p.elements, p.support)).collect();
            for p in &found {
                for sub in all_subsequences(&p.elements) {
                    let s = index.get(&sub).copied();
                    prop_assert!(s.is_some_and(|s| s >= p.support));
                }
                let direct = db.sequences.iter().filter(|s| contains(s, &p.elements)).count();
                prop_assert_eq!(direct, p.support);
            }
        }

        #[test]
        fn raising_min_sup_never_adds(db in arb_db(), a in 1usize..4, b in 1usize..4) {
            let (lo, hi) = (a.min(b), a.max(b));
            let l: BTreeSet<_> = mine_frequent(&db, lo, MiningLimits::default()).into_iter().map(|p| p.elements).collect();
            let h: BTreeSet<_> = mine_frequent(&db, hi, MiningLimits::default()).into_iter().map(|p| p.elements).collect();
            prop_assert!(h.is_subset(&l));
        }
    }
}
