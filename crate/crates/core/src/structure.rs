//! Edge scoring and private spanning-tree selection.
//!
//! Three selectors share one private Kruskal loop: at every round the
//! feasible edges are those that keep the graph acyclic and pass a
//! method-specific filter, and one of them is drawn with the exponential
//! mechanism.
//!
//! * [`select_tree_mst`]: no filter.
//! * [`select_tree_privci`]: an edge is feasible only if, after adding it,
//!   the graph induced on `V \ Z` still has no path from `X` to `Y`.
//! * [`select_tree_prefair`]: a static filter applied before any round;
//!   `X` nodes may only touch `X ∪ Z` and `Y` nodes only `Y ∪ Z`.

use serde::{Deserialize, Serialize};

use crate::data::{CIConstraint, Dataset};
use crate::dp::{exponential_mechanism, RngStream};
use crate::error::{Error, Result};
use crate::marginals::{normalize, one_way_counts, two_way_counts, CountTable};

/// Unordered attribute pair, stored with the smaller index first.
pub type Edge = (usize, usize);

pub fn edge(i: usize, j: usize) -> Edge {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// All `d(d−1)/2` pairs in lexicographic order.
pub fn all_pairs(d: usize) -> impl Iterator<Item = Edge> {
    (0..d).flat_map(move |i| (i + 1..d).map(move |j| (i, j)))
}

fn pair_index(i: usize, j: usize, d: usize) -> usize {
    debug_assert!(i < j && j < d);
    i * (2 * d - i - 1) / 2 + (j - i - 1)
}

/// A score for every attribute pair.
///
/// `delta_q` is the global sensitivity used by the exponential mechanism;
/// report-only scores (not safe to select with) carry `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeScores {
    d: usize,
    q: Vec<f64>,
    delta_q: Option<f64>,
}

impl EdgeScores {
    /// `q` lists the pairs in [`all_pairs`] order.
    pub fn new(d: usize, q: Vec<f64>, delta_q: f64) -> Result<Self> {
        if !(delta_q.is_finite() && delta_q > 0.0) {
            return Err(Error::argument(format!("score sensitivity must be positive, got {delta_q}")));
        }
        Self::checked(d, q, Some(delta_q))
    }

    pub fn report_only(d: usize, q: Vec<f64>) -> Result<Self> {
        Self::checked(d, q, None)
    }

    pub fn from_fn(d: usize, delta_q: f64, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let q = all_pairs(d).map(|(i, j)| f(i, j)).collect();
        Self::new(d, q, delta_q)
    }

    fn checked(d: usize, q: Vec<f64>, delta_q: Option<f64>) -> Result<Self> {
        if d < 2 {
            return Err(Error::argument("scores need at least 2 attributes"));
        }
        if q.len() != d * (d - 1) / 2 {
            return Err(Error::argument(format!(
                "expected {} pair scores for d = {d}, got {}",
                d * (d - 1) / 2,
                q.len()
            )));
        }
        if q.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::argument("pair scores must be finite and nonnegative"));
        }
        Ok(EdgeScores { d, q, delta_q })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn delta_q(&self) -> Option<f64> {
        self.delta_q
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = edge(i, j);
        self.q[pair_index(a, b, self.d)]
    }

    pub fn try_get(&self, e: Edge) -> Result<f64> {
        let (a, b) = edge(e.0, e.1);
        if a == b || b >= self.d {
            return Err(Error::argument(format!("no score for edge {e:?} with d = {}", self.d)));
        }
        Ok(self.get(a, b))
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }
}

/// Disjoint-set forest with path halving and union by rank.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets of `a` and `b`; returns false if they were already joined.
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
}

/// An acyclic edge set over `d` nodes. Edges are kept sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tree {
    d: usize,
    edges: Vec<Edge>,
}

impl Tree {
    pub fn new(d: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut edges: Vec<Edge> = edges.into_iter().map(|(i, j)| edge(i, j)).collect();
        edges.sort_unstable();
        let mut uf = UnionFind::new(d);
        for &(i, j) in &edges {
            if i == j || j >= d {
                return Err(Error::Structure(format!("invalid edge ({i}, {j}) for d = {d}")));
            }
            if !uf.union(i, j) {
                return Err(Error::Structure(format!("edge ({i}, {j}) closes a cycle")));
            }
        }
        Ok(Tree { d, edges })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `d − 1` edges and acyclic, hence connected.
    pub fn is_spanning(&self) -> bool {
        self.edges.len() + 1 == self.d
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&edge(i, j)).is_ok()
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.d];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }
}

/// Private edge scores `q_ij = ‖C_ij − n̂·P̂_i ⊗ P̂_j‖₁` with `Δq = 2`.
///
/// `C_ij` is the exact two-way count table; `P̂` are the clipped and
/// normalized noisy one-way marginals and `n̂` the mean clipped noisy total.
pub fn quality_scores(d: &Dataset, noisy_one_way: &[CountTable]) -> Result<EdgeScores> {
    let dim = d.d();
    if noisy_one_way.len() != dim {
        return Err(Error::argument(format!(
            "need one noisy one-way table per attribute ({dim}), got {}",
            noisy_one_way.len()
        )));
    }
    for (i, t) in noisy_one_way.iter().enumerate() {
        if t.attrs != [i] || t.cells.len() != d.schema().domain_size(i) {
            return Err(Error::argument(format!(
                "one-way table {i} has attrs {:?} and {} cells",
                t.attrs,
                t.cells.len()
            )));
        }
    }
    let clipped: Vec<CountTable> = noisy_one_way.iter().map(CountTable::clipped).collect();
    let n_hat = clipped.iter().map(CountTable::total).sum::<f64>() / dim as f64;
    let probs: Vec<Vec<f64>> = clipped.iter().map(|t| normalize(t).cells).collect();
    let mut q = Vec::with_capacity(dim * (dim - 1) / 2);
    for (i, j) in all_pairs(dim) {
        let joint = two_way_counts(d, i, j)?;
        let kj = joint.shape[1];
        let score = joint
            .cells
            .iter()
            .enumerate()
            .map(|(c, &count)| (count - n_hat * probs[i][c / kj] * probs[j][c % kj]).abs())
            .sum();
        q.push(score);
    }
    EdgeScores::new(dim, q, 2.0)
}

/// [`quality_scores`] evaluated on exact one-way counts. Not private.
pub fn exact_count_scores(d: &Dataset) -> Result<EdgeScores> {
    let exact = (0..d.d())
        .map(|i| one_way_counts(d, i))
        .collect::<Result<Vec<_>>>()?;
    quality_scores(d, &exact)
}

/// Report-side scores `‖P(Xi,Xj) − P(Xi)P(Xj)‖₂²` from exact data. Not private.
pub fn probability_scores(d: &Dataset) -> Result<EdgeScores> {
    let dim = d.d();
    let margins: Vec<Vec<f64>> = (0..dim)
        .map(|i| one_way_counts(d, i).map(|t| normalize(&t).cells))
        .collect::<Result<_>>()?;
    let q = all_pairs(dim)
        .map(|(i, j)| {
            let joint = normalize(&two_way_counts(d, i, j)?);
            let kj = joint.shape[1];
            Ok(joint
                .cells
                .iter()
                .enumerate()
                .map(|(c, &p)| (p - margins[i][c / kj] * margins[j][c % kj]).powi(2))
                .sum())
        })
        .collect::<Result<Vec<f64>>>()?;
    EdgeScores::report_only(dim, q)
}

fn node_count(edges: &[Edge], extra: Option<Edge>, ci: &CIConstraint) -> usize {
    edges
        .iter()
        .chain(extra.iter())
        .flat_map(|&(a, b)| [a, b])
        .chain(ci.x.iter().chain(&ci.y).chain(&ci.z).copied())
        .max()
        .map_or(0, |m| m + 1)
}

/// Whether no component of the graph induced on `V \ Z` by `edges` (plus
/// `candidate`) contains both an `X` node and a `Y` node.
fn z_separates(n: usize, edges: &[Edge], candidate: Option<Edge>, ci: &CIConstraint) -> bool {
    let mut uf = UnionFind::new(n);
    for &(a, b) in edges.iter().chain(candidate.iter()) {
        if !ci.in_z(a) && !ci.in_z(b) {
            uf.union(a, b);
        }
    }
    let x_roots: Vec<usize> = ci.x.iter().map(|&v| uf.find(v)).collect();
    !ci.y.iter().any(|&v| {
        let r = uf.find(v);
        x_roots.contains(&r)
    })
}

/// Whether adding `candidate` to `edges` keeps `Z` separating `X` from `Y`.
pub fn is_ci_consistent(edges: &[Edge], candidate: Edge, ci: &CIConstraint) -> bool {
    let n = node_count(edges, Some(candidate), ci);
    z_separates(n, edges, Some(candidate), ci)
}

/// Whether deleting `Z` from `tree` leaves no path between `X` and `Y`.
pub fn separates(tree: &Tree, ci: &CIConstraint) -> bool {
    let n = tree.d().max(node_count(tree.edges(), None, ci));
    z_separates(n, tree.edges(), None, ci)
}

/// Static edge filter of the PreFair baseline.
pub fn prefair_allows(e: Edge, ci: &CIConstraint) -> bool {
    let side_ok = |w: usize, other: usize| {
        if ci.in_x(w) {
            ci.in_x(other) || ci.in_z(other)
        } else if ci.in_y(w) {
            ci.in_y(other) || ci.in_z(other)
        } else {
            true
        }
    };
    side_ok(e.0, e.1) && side_ok(e.1, e.0)
}

/// One round of a selector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub round: usize,
    pub feasible: usize,
    pub chosen: Edge,
    pub score: f64,
}

/// Selected tree and the per-round record that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub tree: Tree,
    pub trace: Vec<TraceStep>,
}

impl Selection {
    /// Chosen edges in selection order.
    pub fn chosen(&self) -> Vec<Edge> {
        self.trace.iter().map(|s| s.chosen).collect()
    }

    /// The trace as JSON lines, one round per line.
    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|s| serde_json::to_string(s).expect("trace step serializes") + "\n")
            .collect()
    }
}

/// Private Kruskal: `d − 1` rounds, each drawing one feasible edge with the
/// exponential mechanism. Round `t` uses the stream `rng.child("edge-t")`.
fn private_kruskal(
    scores: &EdgeScores,
    eps_prime: f64,
    rng: &RngStream,
    admissible: impl Fn(&[Edge], Edge) -> bool,
) -> Result<Selection> {
    let delta_q = scores
        .delta_q()
        .ok_or_else(|| Error::argument("these scores carry no sensitivity and cannot drive selection"))?;
    let d = scores.d();
    let mut uf = UnionFind::new(d);
    let mut edges = Vec::with_capacity(d - 1);
    let mut trace = Vec::with_capacity(d - 1);
    for round in 1..d {
        let feasible: Vec<Edge> = all_pairs(d)
            .filter(|&(i, j)| uf.find(i) != uf.find(j) && admissible(&edges, (i, j)))
            .collect();
        if feasible.is_empty() {
            debug_assert!(false, "no feasible edge at round {round}");
            return Err(Error::Selection(format!("no feasible edge at round {round}")));
        }
        let q: Vec<f64> = feasible.iter().map(|&(i, j)| scores.get(i, j)).collect();
        let mut stream = rng.child(&format!("edge-{round}"));
        let chosen = exponential_mechanism(&feasible, &q, eps_prime, delta_q, &mut stream)?;
        uf.union(chosen.0, chosen.1);
        edges.push(chosen);
        trace.push(TraceStep {
            round,
            feasible: feasible.len(),
            chosen,
            score: scores.get(chosen.0, chosen.1),
        });
    }
    Ok(Selection {
        tree: Tree::new(d, edges)?,
        trace,
    })
}

/// Unconstrained private maximum spanning tree.
pub fn select_tree_mst(scores: &EdgeScores, eps_prime: f64, rng: &RngStream) -> Result<Selection> {
    private_kruskal(scores, eps_prime, rng, |_, _| true)
}

/// CI-aware private Kruskal: candidates that would connect `X` and `Y`
/// outside `Z` are infeasible.
pub fn select_tree_privci(
    scores: &EdgeScores,
    ci: &CIConstraint,
    eps_prime: f64,
    rng: &RngStream,
) -> Result<Selection> {
    check_constraint(scores.d(), ci)?;
    private_kruskal(scores, eps_prime, rng, |edges, e| is_ci_consistent(edges, e, ci))
}

/// PreFair baseline: inadmissible edges are removed up front, then the
/// unconstrained private Kruskal runs on what is left.
pub fn select_tree_prefair(
    scores: &EdgeScores,
    ci: &CIConstraint,
    eps_prime: f64,
    rng: &RngStream,
) -> Result<Selection> {
    check_constraint(scores.d(), ci)?;
    private_kruskal(scores, eps_prime, rng, |_, e| prefair_allows(e, ci))
}

fn check_constraint(d: usize, ci: &CIConstraint) -> Result<()> {
    ci.validate(d).map_err(|e| match e {
        Error::Config(m) => Error::argument(m),
        other => other,
    })
}

/// Classical Kruskal maximum spanning tree, ties broken towards the
/// lexicographically smallest edge.
pub fn kruskal_max_spanning_tree(scores: &EdgeScores) -> Tree {
    let d = scores.d();
    let mut order: Vec<Edge> = all_pairs(d).collect();
    // Stable sort keeps lexicographic order among equal scores.
    order.sort_by(|a, b| scores.get(b.0, b.1).total_cmp(&scores.get(a.0, a.1)));
    let mut uf = UnionFind::new(d);
    let edges: Vec<Edge> = order.into_iter().filter(|&(i, j)| uf.union(i, j)).collect();
    Tree::new(d, edges).expect("kruskal output is a forest")
}

/// Labeled tree encoded by a Prüfer sequence of length `d − 2`.
pub fn prufer_decode(seq: &[usize], d: usize) -> Vec<Edge> {
    assert_eq!(seq.len() + 2, d, "Prüfer sequence must have length d - 2");
    let mut degree = vec![1usize; d];
    for &v in seq {
        degree[v] += 1;
    }
    let mut edges = Vec::with_capacity(d - 1);
    for &v in seq {
        let leaf = (0..d).find(|&u| degree[u] == 1).expect("a leaf exists");
        edges.push(edge(leaf, v));
        degree[leaf] -= 1;
        degree[v] -= 1;
    }
    let rest: Vec<usize> = (0..d).filter(|&u| degree[u] == 1).collect();
    edges.push(edge(rest[0], rest[1]));
    edges
}

/// Result of exhaustive search over spanning trees.
#[derive(Clone, Debug, PartialEq)]
pub struct BruteForce {
    pub tree: Tree,
    pub total: f64,
    /// Number of labeled spanning trees enumerated (before filtering).
    pub enumerated: usize,
    /// Number that satisfied the separation requirement.
    pub feasible: usize,
}

pub const BRUTE_FORCE_MAX_D: usize = 8;

/// Best spanning tree by total score among those in which `Z` separates `X`
/// and `Y` (all trees when `ci` is `None`). Ties go to the lexicographically
/// smallest sorted edge list. Refuses `d > 8`.
pub fn brute_force_best_ci_tree(scores: &EdgeScores, ci: Option<&CIConstraint>) -> Result<BruteForce> {
    let d = scores.d();
    if d > BRUTE_FORCE_MAX_D {
        return Err(Error::argument(format!(
            "exhaustive search refused for d = {d} (limit {BRUTE_FORCE_MAX_D})"
        )));
    }
    let mut best: Option<(f64, Vec<Edge>)> = None;
    let mut enumerated = 0;
    let mut feasible = 0;
    let mut seq = vec![0usize; d - 2];
    loop {
        let mut edges = prufer_decode(&seq, d);
        edges.sort_unstable();
        enumerated += 1;
        let ok = ci.is_none_or(|c| z_separates(d, &edges, None, c));
        if ok {
            feasible += 1;
            let total: f64 = edges.iter().map(|&(i, j)| scores.get(i, j)).sum();
            let better = match &best {
                None => true,
                Some((bt, be)) => total > *bt || (total == *bt && edges < *be),
            };
            if better {
                best = Some((total, edges));
            }
        }
        // Odometer increment over [0, d)^(d-2).
        let mut k = 0;
        while k < seq.len() {
            seq[k] += 1;
            if seq[k] < d {
                break;
            }
            seq[k] = 0;
            k += 1;
        }
        if k == seq.len() {
            break;
        }
    }
    let (total, edges) = best.ok_or_else(|| Error::Structure("no feasible spanning tree".into()))?;
    Ok(BruteForce {
        tree: Tree::new(d, edges)?,
        total,
        enumerated,
        feasible,
    })
}
