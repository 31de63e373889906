//! Finite directed graphs with the insert / extends / union algebra.
//!
//! This is the generic structure that block DAGs specialize. It is kept
//! separate because some structural facts (for instance, that re-inserting an
//! existing vertex with new edges does not produce an extension) only make
//! sense when edges are not fixed by vertex content.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reach {
    /// At least one edge.
    Strict,
    /// Zero or more edges.
    Reflexive,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("edge source is not a vertex of the graph")]
pub struct UnknownSource;

/// A digraph `(V, E)` stored as a successor map. Every vertex has an entry,
/// possibly empty, so structural equality is equality of `(V, E)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph<V: Ord + Clone> {
    succ: BTreeMap<V, BTreeSet<V>>,
    edge_count: usize,
}

impl<V: Ord + Clone> Default for Digraph<V> {
    fn default() -> Self {
        Self { succ: BTreeMap::new(), edge_count: 0 }
    }
}

impl<V: Ord + Clone> Digraph<V> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from vertices and edges; edge endpoints are added as
    /// vertices.
    pub fn from_parts(vertices: impl IntoIterator<Item = V>, edges: impl IntoIterator<Item = (V, V)>) -> Self {
        let mut g = Self::new();
        for v in vertices {
            g.succ.entry(v).or_default();
        }
        for (a, b) in edges {
            g.succ.entry(b.clone()).or_default();
            if g.succ.entry(a).or_default().insert(b) {
                g.edge_count += 1;
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.succ.len()
    }

    pub fn is_empty(&self) -> bool {
        self.succ.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn contains(&self, v: &V) -> bool {
        self.succ.contains_key(v)
    }

    pub fn has_edge(&self, a: &V, b: &V) -> bool {
        self.succ.get(a).is_some_and(|s| s.contains(b))
    }

    pub fn vertices(&self) -> impl Iterator<Item = &V> {
        self.succ.keys()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&V, &V)> {
        self.succ.iter().flat_map(|(a, bs)| bs.iter().map(move |b| (a, b)))
    }

    pub fn successors(&self, v: &V) -> impl Iterator<Item = &V> {
        self.succ.get(v).into_iter().flatten()
    }

    /// Adds `v` together with edges `(s, v)` for every `s` in `sources`.
    /// Every source must already be a vertex before the call. Inserting an existing vertex
    /// with a subset of its existing in-edges is a no-op.
    pub fn insert(&mut self, v: V, sources: impl IntoIterator<Item = V>) -> Result<(), UnknownSource> {
        let sources: BTreeSet<V> = sources.into_iter().collect();
        if sources.iter().any(|s| !self.contains(s)) {
            return Err(UnknownSource);
        }
        self.succ.entry(v.clone()).or_default();
        for s in sources {
            if self.succ.get_mut(&s).expect("source present").insert(v.clone()) {
                self.edge_count += 1;
            }
        }
        Ok(())
    }

    /// `self ≤ other`: every vertex of `self` is in `other` and `self` has
    /// exactly the edges of `other` between its own vertices.
    pub fn extends_to(&self, other: &Self) -> bool {
        for (a, bs) in &self.succ {
            let Some(obs) = other.succ.get(a) else {
                return false;
            };
            if !bs.is_subset(obs) {
                return false;
            }
            if obs.iter().any(|b| self.contains(b) && !bs.contains(b)) {
                return false;
            }
        }
        true
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (a, bs) in &other.succ {
            let entry = out.succ.entry(a.clone()).or_default();
            for b in bs {
                if entry.insert(b.clone()) {
                    out.edge_count += 1;
                }
            }
        }
        for b in other.succ.values().flatten() {
            out.succ.entry(b.clone()).or_default();
        }
        out
    }

    /// Path from `a` to `b` in the chosen closure. A vertex not in the graph
    /// reaches nothing.
    pub fn reaches(&self, a: &V, b: &V, mode: Reach) -> bool {
        if !self.contains(a) {
            return false;
        }
        if mode == Reach::Reflexive && a == b {
            return true;
        }
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&V> = self.successors(a).collect();
        while let Some(v) = queue.pop_front() {
            if v == b {
                return true;
            }
            if seen.insert(v) {
                queue.extend(self.successors(v));
            }
        }
        false
    }

    /// All vertices reachable from `a` by at least one edge.
    pub fn descendants(&self, a: &V) -> BTreeSet<V> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&V> = self.successors(a).collect();
        while let Some(v) = queue.pop_front() {
            if seen.insert(v.clone()) {
                queue.extend(self.successors(v));
            }
        }
        seen
    }

    pub fn is_acyclic(&self) -> bool {
        let mut indegree: BTreeMap<&V, usize> = self.succ.keys().map(|v| (v, 0)).collect();
        for (_, b) in self.edges() {
            *indegree.get_mut(b).expect("edge target is a vertex") += 1;
        }
        let mut ready: Vec<&V> = indegree.iter().filter(|(_, d)| **d == 0).map(|(v, _)| *v).collect();
        let mut visited = 0;
        while let Some(v) = ready.pop() {
            visited += 1;
            for s in self.successors(v) {
                let d = indegree.get_mut(s).expect("vertex");
                *d -= 1;
                if *d == 0 {
                    ready.push(s);
                }
            }
        }
        visited == self.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reinserting_a_vertex_with_a_new_edge_is_not_an_extension() {
        let mut g: Digraph<u8> = Digraph::new();
        g.insert(1, []).unwrap();
        g.insert(2, []).unwrap();
        let mut g2 = g.clone();
        g2.insert(2, [1]).unwrap();
        assert!(g2.has_edge(&1, &2));
        assert!(!g.extends_to(&g2));
        assert!(g.extends_to(&g));
    }

    #[test]
    fn insert_rejects_unknown_sources() {
        let mut g: Digraph<u8> = Digraph::new();
        assert_eq!(g.insert(1, [0]), Err(UnknownSource));
        assert!(g.is_empty());
    }

    #[test]
    fn reachability_modes() {
        let g = Digraph::from_parts([1u8, 2, 3], [(1, 2), (2, 3)]);
        assert!(g.reaches(&1, &3, Reach::Strict));
        assert!(!g.reaches(&1, &1, Reach::Strict));
        assert!(g.reaches(&1, &1, Reach::Reflexive));
        assert!(!g.reaches(&3, &1, Reach::Reflexive));
        assert!(!g.reaches(&9, &9, Reach::Reflexive));
        assert_eq!(g.descendants(&1), BTreeSet::from([2, 3]));
    }

    #[test]
    fn cycle_detection() {
        let g = Digraph::from_parts([1u8, 2], [(1, 2), (2, 1)]);
        assert!(!g.is_acyclic());
        assert!(g.reaches(&1, &1, Reach::Strict));
        let h = Digraph::from_parts([1u8, 2, 3], [(1, 2), (1, 3), (2, 3)]);
        assert!(h.is_acyclic());
    }

    #[test]
    fn union_is_least_upper_bound_of_compatible_graphs() {
        let base = Digraph::from_parts([1u8], []);
        let mut a = base.clone();
        a.insert(2, [1]).unwrap();
        let mut b = base.clone();
        b.insert(3, [1]).unwrap();
        let u = a.union(&b);
        assert!(a.extends_to(&u) && b.extends_to(&u));
        assert_eq!(u.len(), 3);
        assert_eq!(u.edge_count(), 2);
    }
}
