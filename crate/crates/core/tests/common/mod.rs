#![allow(dead_code)]

use std::collections::BTreeMap;

use lmkbqa::kb::{Direction, EntityId, KnowledgeGraph, RelationId, Triple};
use rand::Rng;

pub fn random_graph(rng: &mut impl Rng, max_nodes: usize, max_edges: usize) -> KnowledgeGraph {
    let nodes = rng.gen_range(1..=max_nodes);
    let edges = rng.gen_range(0..=max_edges);
    let triples: Vec<Triple> = (0..edges)
        .map(|_| {
            Triple::new(
                &format!("/m/n{}", rng.gen_range(0..nodes)),
                &format!("/r/{}", ["a", "b", "c"][rng.gen_range(0..3)]),
                &format!("/m/n{}", rng.gen_range(0..nodes)),
            )
        })
        .collect();
    let names = (0..nodes).map(|i| (EntityId::new(format!("/m/n{i}")), format!("node {i}")));
    KnowledgeGraph::from_parts(triples, names, RelationId::new("is_a"))
}

type Step = (RelationId, Direction);

/// Edges touching `x`, computed by scanning every triple.
fn scan_edges(triples: &[Triple], x: &EntityId) -> Vec<(Step, EntityId)> {
    let mut out = Vec::new();
    for t in triples {
        if &t.subject == x {
            out.push(((t.predicate.clone(), Direction::Forward), t.object.clone()));
        }
        if &t.object == x {
            out.push(((t.predicate.clone(), Direction::Reverse), t.subject.clone()));
        }
    }
    out
}

/// Every entity reachable from `topic` over one or two edges (either
/// direction), with its hop count and the smallest (relations, intermediate)
/// among its shortest paths.
pub fn brute_force_candidates(
    kb: &KnowledgeGraph,
    topic: &EntityId,
) -> BTreeMap<EntityId, (usize, Vec<Step>, Option<EntityId>)> {
    let triples: Vec<Triple> = kb.triples().cloned().collect();
    let mut all: Vec<(EntityId, usize, Vec<Step>, Option<EntityId>)> = Vec::new();
    for (s1, e1) in scan_edges(&triples, topic) {
        all.push((e1.clone(), 1, vec![s1.clone()], None));
        for (s2, e2) in scan_edges(&triples, &e1) {
            all.push((e2, 2, vec![s1.clone(), s2], Some(e1.clone())));
        }
    }
    let mut best: BTreeMap<EntityId, (usize, Vec<Step>, Option<EntityId>)> = BTreeMap::new();
    for (e, hops, rels, mid) in all {
        if &e == topic {
            continue;
        }
        let cand = (hops, rels, mid);
        match best.get(&e) {
            Some(cur) if *cur <= cand => {}
            _ => {
                best.insert(e, cand);
            }
        }
    }
    best
}

pub fn is_subsequence<T: PartialEq>(sub: &[T], of: &[T]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

/// All subsequences of `a` as index tuples, by enumerating every subset.
pub fn index_subsequences(len: usize) -> impl Iterator<Item = Vec<usize>> {
    (0u32..(1 << len)).map(move |mask| (0..len).filter(|i| mask & (1 << i) != 0).collect())
}

/// Exhaustive LCS oracle: the longest subsequence of `a` that is also a
/// subsequence of `b`; ties go to the lexicographically smallest index tuple
/// in `a`.
pub fn brute_force_lcs<T: PartialEq + Clone>(a: &[T], b: &[T]) -> Vec<T> {
    let mut best: Option<Vec<usize>> = None;
    for idx in index_subsequences(a.len()) {
        let seq: Vec<T> = idx.iter().map(|&i| a[i].clone()).collect();
        if !is_subsequence(&seq, b) {
            continue;
        }
        best = match best {
            None => Some(idx),
            Some(cur) if idx.len() > cur.len() || (idx.len() == cur.len() && idx < cur) => {
                Some(idx)
            }
            keep => keep,
        };
    }
    best.unwrap_or_default()
        .iter()
        .map(|&i| a[i].clone())
        .collect()
}
