//! Near-duplicate removal: exact all-pairs cosine search, union-find
//! clustering and centroid-nearest representative retention.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{dot_unchecked, EmbeddingStore, Modality};
use crate::error::{Error, Result};
use crate::record::{ReasonCode, Record, Verdict};

/// Disjoint sets over `0..n` with path compression and union by rank.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Merges the sets of `a` and `b`; false when already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }

    /// Components as ascending index lists, ordered by smallest member.
    pub fn components(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut first: Vec<Option<usize>> = vec![None; self.len()];
        let mut order = Vec::new();
        for i in 0..self.len() {
            let r = self.find(i);
            if first[r].is_none() {
                first[r] = Some(order.len());
                order.push(r);
            }
            by_root.entry(r).or_default().push(i);
        }
        order.into_iter().map(|r| by_root.remove(&r).unwrap()).collect()
    }
}

const BLOCK: usize = 64;

/// Index pairs `(i, j)`, `i < j`, whose cosine distance is strictly below
/// `beta`. Rows are processed in blocks on the current rayon pool; output
/// is sorted.
pub fn duplicate_index_pairs(vectors: &[&[f64]], beta: f64) -> Vec<(usize, usize)> {
    let n = vectors.len();
    let blocks: Vec<Vec<(usize, usize)>> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut out = Vec::new();
            for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
                for j in i + 1..n {
                    let d = (1.0 - dot_unchecked(vectors[i], vectors[j])).max(0.0);
                    if d < beta {
                        out.push((i, j));
                    }
                }
            }
            out
        })
        .collect();
    blocks.into_iter().flatten().collect()
}

fn sorted_ids<S: AsRef<str>>(ids: &[S]) -> Vec<&str> {
    let mut v: Vec<&str> = ids.iter().map(AsRef::as_ref).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn unit_vectors<'a>(store: &'a EmbeddingStore, ids: &[&str]) -> Result<Vec<&'a [f64]>> {
    ids.iter().map(|id| store.require(id, Modality::Image)).collect()
}

/// Unordered pairs of ids (smaller id first) with cosine distance `< beta`,
/// sorted.
pub fn find_duplicate_pairs<S: AsRef<str>>(
    store: &EmbeddingStore,
    ids: &[S],
    beta: f64,
) -> Result<Vec<(String, String)>> {
    let ids = sorted_ids(ids);
    let vecs = unit_vectors(store, &ids)?;
    Ok(duplicate_index_pairs(&vecs, beta)
        .into_iter()
        .map(|(i, j)| (ids[i].to_string(), ids[j].to_string()))
        .collect())
}

/// Connected components of the pair graph over `all_ids`, singletons
/// included. Members are sorted; sets are ordered by smallest member.
pub fn cluster_duplicates<S: AsRef<str>, T: AsRef<str>>(pairs: &[(S, S)], all_ids: &[T]) -> Result<Vec<Vec<String>>> {
    let ids = sorted_ids(all_ids);
    let pos = |id: &str| {
        ids.binary_search(&id)
            .map_err(|_| Error::Lookup(id.to_string()))
    };
    let mut uf = UnionFind::new(ids.len());
    for (a, b) in pairs {
        uf.union(pos(a.as_ref())?, pos(b.as_ref())?);
    }
    Ok(uf
        .components()
        .into_iter()
        .map(|c| c.into_iter().map(|i| ids[i].to_string()).collect())
        .collect())
}

/// One duplicate set with its retained member.
#[derive(Debug, Clone, PartialEq)]
pub struct DupSet {
    pub member_ids: Vec<String>,
    /// Renormalized mean of the members; all zeros when the mean vanishes.
    pub centroid: Vec<f64>,
    pub representative_id: String,
    /// Cosine distance of each member (same order) to the centroid.
    pub distances: Vec<f64>,
}

/// Picks the member nearest the set centroid, ties to the smaller id.
pub fn representative(members: &[String], store: &EmbeddingStore) -> Result<DupSet> {
    let mut members = members.to_vec();
    members.sort();
    let vecs: Vec<&[f64]> = members
        .iter()
        .map(|m| store.require(m, Modality::Image))
        .collect::<Result<_>>()?;
    let dim = store.dim();
    let mut mean = vec![0.0; dim];
    for v in &vecs {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    let degenerate = !(norm > 1e-12);
    let centroid: Vec<f64> = if degenerate {
        vec![0.0; dim]
    } else {
        mean.iter().map(|x| x / norm).collect()
    };
    let distances: Vec<f64> = vecs
        .iter()
        .map(|v| (1.0 - dot_unchecked(v, &centroid)).clamp(0.0, 2.0))
        .collect();
    let mut best = 0;
    if !degenerate {
        for (i, d) in distances.iter().enumerate() {
            if *d < distances[best] {
                best = i;
            }
        }
    }
    Ok(DupSet {
        representative_id: members[best].clone(),
        member_ids: members,
        centroid,
        distances,
    })
}

/// Kept representatives and dropped members of a list of sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Selection {
    pub sets: Vec<DupSet>,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
}

pub fn select_representatives(sets: &[Vec<String>], store: &EmbeddingStore) -> Result<Selection> {
    let sets: Vec<DupSet> = sets
        .par_iter()
        .map(|s| representative(s, store))
        .collect::<Result<_>>()?;
    let mut sel = Selection::default();
    for s in &sets {
        for m in &s.member_ids {
            if *m == s.representative_id {
                sel.kept.push(m.clone());
            } else {
                sel.dropped.push(m.clone());
            }
        }
    }
    sel.kept.sort();
    sel.dropped.sort();
    sel.sets = sets;
    Ok(sel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupScope {
    /// Each batch is deduplicated on its own.
    WithinBatch,
    /// All batches are deduplicated together.
    CrossBatch,
}

impl DedupScope {
    pub fn stage_name(self) -> &'static str {
        match self {
            DedupScope::WithinBatch => "dedup_within",
            DedupScope::CrossBatch => "dedup_cross",
        }
    }

    pub fn reason(self) -> ReasonCode {
        match self {
            DedupScope::WithinBatch => ReasonCode::NearDuplicate,
            DedupScope::CrossBatch => ReasonCode::CrossBatchDuplicate,
        }
    }
}

/// One line of the dedup audit file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupAuditRow {
    pub set_id: String,
    pub member_id: String,
    pub is_representative: bool,
    pub distance_to_centroid: f64,
}

#[derive(Debug, Clone, Default)]
pub struct DedupOutput {
    /// Survivors in input order.
    pub kept: Vec<Record>,
    /// Dropped records in input order, verdict appended.
    pub dropped: Vec<Record>,
    /// Members of every set with more than one member.
    pub audit: Vec<DedupAuditRow>,
}

/// Deduplicates `records` by image embedding. Every input record must have
/// an image vector in `store`.
pub fn run_dedup_stage(
    records: Vec<Record>,
    store: &EmbeddingStore,
    beta: f64,
    scope: DedupScope,
) -> Result<DedupOutput> {
    let missing = store.missing(records.iter().map(|r| r.id.as_str()), Modality::Image);
    if !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing));
    }
    let mut groups: BTreeMap<Option<u32>, Vec<&str>> = BTreeMap::new();
    for r in &records {
        let key = match scope {
            DedupScope::WithinBatch => Some(r.batch_id),
            DedupScope::CrossBatch => None,
        };
        groups.entry(key).or_default().push(&r.id);
    }
    let mut dropped = std::collections::HashSet::new();
    let mut audit = Vec::new();
    for (batch, ids) in groups {
        let pairs = find_duplicate_pairs(store, &ids, beta)?;
        let sets = cluster_duplicates(&pairs, &ids)?;
        let sel = select_representatives(&sets, store)?;
        let mut n = 0;
        for s in sel.sets.iter().filter(|s| s.member_ids.len() > 1) {
            let set_id = match batch {
                Some(b) => format!("b{b}:{n}"),
                None => format!("x:{n}"),
            };
            n += 1;
            for (m, d) in s.member_ids.iter().zip(&s.distances) {
                audit.push(DedupAuditRow {
                    set_id: set_id.clone(),
                    member_id: m.clone(),
                    is_representative: *m == s.representative_id,
                    distance_to_centroid: *d,
                });
            }
        }
        dropped.extend(sel.dropped);
    }
    let stage = scope.stage_name();
    let mut out = DedupOutput {
        audit,
        ..Default::default()
    };
    for mut r in records {
        if dropped.contains(&r.id) {
            r.push_verdict(Verdict::reject(stage, scope.reason()))?;
            out.dropped.push(r);
        } else {
            r.push_verdict(Verdict::keep(stage))?;
            out.kept.push(r);
        }
    }
    Ok(out)
}

pub fn write_dedup_audit(rows: &[DedupAuditRow], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)
            .map_err(|e| Error::Format(format!("audit csv: {e}")))?;
    }
    wr.flush().map_err(|e| Error::io("dedup audit", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vs: &[(&str, &[f32])]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(vs[0].1.len());
        for (id, v) in vs {
            s.insert(id, Modality::Image, v).unwrap();
        }
        s
    }

    fn at_angle(theta: f64) -> [f32; 2] {
        [theta.cos() as f32, theta.sin() as f32]
    }

    #[test]
    fn union_find_basics() {
        let mut uf = UnionFind::new(5);
        assert!(uf.union(0, 1));
        assert!(uf.union(3, 1));
        assert!(!uf.union(0, 3));
        assert_eq!(uf.find(3), uf.find(0));
        assert_eq!(uf.components(), vec![vec![0, 1, 3], vec![2], vec![4]]);
    }

    #[test]
    fn pair_examples() {
        let s = store(&[("a", &[1.0, 0.0]), ("b", &[1.0, 0.0]), ("c", &[0.0, 1.0])]);
        assert_eq!(find_duplicate_pairs(&s, &["c", "b", "a"], 0.1).unwrap(), [("a".into(), "b".into())]);
        // d(1,2) = d(2,3) = 0.05, d(1,3) = 1 - cos(2t) ~ 0.19
        let t = (0.95f64).acos();
        let s = store(&[("1", &at_angle(0.0)), ("2", &at_angle(t)), ("3", &at_angle(2.0 * t))]);
        let pairs = find_duplicate_pairs(&s, &["1", "2", "3"], 0.1).unwrap();
        assert_eq!(pairs, [("1".into(), "2".into()), ("2".into(), "3".into())]);
        let sets = cluster_duplicates(&pairs, &["1", "2", "3"]).unwrap();
        assert_eq!(sets, [vec!["1", "2", "3"]]);
        assert!(find_duplicate_pairs(&s, &["zz"], 0.1).is_err());
    }

    #[test]
    fn clusters_and_chain() {
        assert_eq!(cluster_duplicates::<&str, _>(&[], &["a", "b", "c", "d", "e"]).unwrap().len(), 5);
        let ids: Vec<String> = (0..101).map(|i| format!("{i:03}")).collect();
        let pairs: Vec<(String, String)> = (0..100).map(|i| (ids[i].clone(), ids[i + 1].clone())).collect();
        let sets = cluster_duplicates(&pairs, &ids).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].len(), 101);
    }

    #[test]
    fn representative_examples() {
        let s = store(&[("1", &at_angle(-0.1)), ("2", &at_angle(0.0)), ("3", &at_angle(0.1))]);
        let sel = select_representatives(&[vec!["1".into(), "2".into(), "3".into()]], &s).unwrap();
        assert_eq!(sel.kept, ["2"]);
        assert_eq!(sel.dropped, ["1", "3"]);
        let s = store(&[("b", &[0.6, 0.8]), ("a", &[0.6, 0.8])]);
        let sel = select_representatives(&[vec!["b".into(), "a".into()]], &s).unwrap();
        assert_eq!(sel.kept, ["a"]);
        let s = store(&[("y", &[1.0, 0.0]), ("x", &[-1.0, 0.0])]);
        let d = representative(&["y".into(), "x".into()], &s).unwrap();
        assert_eq!(d.representative_id, "x");
        assert!(d.centroid.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn scope_semantics() {
        let s = store(&[("a", &[1.0, 0.0]), ("b", &[1.0, 0.0])]);
        let recs = vec![
            Record::new("a", "http://x.cn", "t", "i", 0),
            Record::new("b", "http://x.cn", "t", "i", 1),
        ];
        let within = run_dedup_stage(recs.clone(), &s, 0.1, DedupScope::WithinBatch).unwrap();
        assert_eq!(within.kept.len(), 2);
        let cross = run_dedup_stage(recs, &s, 0.1, DedupScope::CrossBatch).unwrap();
        assert_eq!(cross.kept.len(), 1);
        assert_eq!(cross.dropped[0].id, "b");
        assert_eq!(cross.dropped[0].rejection().unwrap().reason, Some(ReasonCode::CrossBatchDuplicate));
        assert_eq!(cross.audit.len(), 2);
    }

    #[test]
    fn missing_embeddings_abort() {
        let s = store(&[("a", &[1.0, 0.0])]);
        let recs = vec![Record::new("a", "u", "t", "i", 0), Record::new("q", "u", "t", "i", 0)];
        match run_dedup_stage(recs, &s, 0.1, DedupScope::CrossBatch) {
            Err(Error::MissingEmbeddings(ids)) => assert_eq!(ids, ["q"]),
            other => panic!("{other:?}"),
        }
    }
}
