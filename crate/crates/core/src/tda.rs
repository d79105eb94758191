//! Minimum spanning trees and 0-dimensional persistent homology.
//!
//! For a finite point cloud every connected component of the Vietoris-Rips
//! filtration is born at scale 0, and a component dies exactly when Kruskal's
//! algorithm merges it into another. The finite PH₀ deaths are therefore the
//! MST edge lengths, and the total persistence `E(S)` is the MST weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pairwise_distances, DistanceMatrix, PointCloud};

/// Disjoint-set forest with path compression and union by rank.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
    components: usize,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n], components: n }
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

    /// Merges the sets of `a` and `b`; false if they were already joined.
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
        self.components -= 1;
        true
    }

    pub fn components(&self) -> usize {
        self.components
    }
}

/// One MST edge, canonically ordered with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MstEdge {
    pub i: usize,
    pub j: usize,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MstResult {
    /// Edges in the order Kruskal accepted them (non-decreasing length).
    pub edges: Vec<MstEdge>,
    pub total_length: f64,
}

/// A PH₀ bar. Births are always 0 for Vietoris-Rips filtrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistenceInterval {
    pub birth: f64,
    pub death: f64,
}

impl PersistenceInterval {
    pub fn length(&self) -> f64 {
        self.death - self.birth
    }
}

/// Minimum spanning tree of the complete graph weighted by `dm`.
///
/// Ties are broken by `(length, i, j)` so the edge set is deterministic.
pub fn mst(dm: &DistanceMatrix) -> MstResult {
    let n = dm.len();
    kruskal(n, |a, b| dm.get(a, b), |a| a)
}

/// Minimum spanning tree of the points `subset` of `dm`.
///
/// Edges are reported with indices into `dm` (not positions in `subset`);
/// ties are broken by position within `subset`.
pub fn mst_subset(dm: &DistanceMatrix, subset: &[usize]) -> MstResult {
    kruskal(subset.len(), |a, b| dm.get(subset[a], subset[b]), |a| subset[a])
}

fn kruskal(n: usize, weight: impl Fn(usize, usize) -> f64, label: impl Fn(usize) -> usize) -> MstResult {
    if n < 2 {
        return MstResult { edges: Vec::new(), total_length: 0.0 };
    }
    let mut candidates: Vec<(f64, u32, u32)> = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in (a + 1)..n {
            candidates.push((weight(a, b), a as u32, b as u32));
        }
    }
    candidates.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut uf = UnionFind::new(n);
    let mut edges = Vec::with_capacity(n - 1);
    let mut total_length = 0.0;
    for (length, a, b) in candidates {
        if uf.union(a as usize, b as usize) {
            let (ga, gb) = (label(a as usize), label(b as usize));
            edges.push(MstEdge { i: ga.min(gb), j: ga.max(gb), length });
            total_length += length;
            if edges.len() == n - 1 {
                break;
            }
        }
    }
    MstResult { edges, total_length }
}

/// Finite PH₀ intervals of the Vietoris-Rips filtration of `cloud`, sorted by
/// death. The single infinite bar is omitted, leaving `n - 1` intervals.
pub fn ph0(cloud: &PointCloud) -> Vec<PersistenceInterval> {
    mst(&pairwise_distances(cloud))
        .edges
        .iter()
        .map(|e| PersistenceInterval { birth: 0.0, death: e.length })
        .collect()
}

/// Total persistence `E(S)`: the summed length of the finite PH₀ bars, which
/// equals the MST weight.
pub fn total_persistence(cloud: &PointCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::invalid("total persistence needs at least two points"));
    }
    Ok(mst(&pairwise_distances(cloud)).total_length)
}
