//! Multi-domain communication graphs.
//!
//! Graphs are undirected and static for a run. Nodes are densely numbered
//! `0..N` and partitioned into `D` domains; bans change which edges are
//! *effective* in a round, but never the graph itself.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DomainId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl DomainId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Number of redraws attempted before isolated nodes are patched directly.
const REDRAW_ATTEMPTS: u64 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiDomainGraph {
    domain_of: Vec<DomainId>,
    n_domains: usize,
    /// Sorted adjacency lists; symmetric.
    adjacency: Vec<Vec<NodeId>>,
}

impl MultiDomainGraph {
    /// Build from a domain assignment and an edge list. Duplicate edges are
    /// merged; self-loops and out-of-range endpoints are rejected.
    pub fn from_edges(domain_of: Vec<DomainId>, edges: &[(NodeId, NodeId)]) -> Result<Self> {
        let n = domain_of.len();
        let n_domains = domain_of.iter().map(|d| d.index() + 1).max().unwrap_or(0);
        let mut seen = vec![false; n_domains];
        for d in &domain_of {
            seen[d.index()] = true;
        }
        if n == 0 || seen.iter().any(|s| !s) {
            return Err(Error::config("domain assignment must cover every domain 0..D with at least one node"));
        }
        let mut sets = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a.index() >= n {
                return Err(Error::InvalidNode(a, n));
            }
            if b.index() >= n {
                return Err(Error::InvalidNode(b, n));
            }
            if a == b {
                return Err(Error::config(format!("self-loop on node {a}")));
            }
            sets[a.index()].insert(b);
            sets[b.index()].insert(a);
        }
        Ok(Self {
            domain_of,
            n_domains,
            adjacency: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.domain_of.len()
    }

    pub fn n_domains(&self) -> usize {
        self.n_domains
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.n_nodes() as u32).map(NodeId)
    }

    pub fn domain_of(&self, i: NodeId) -> Result<DomainId> {
        self.domain_of
            .get(i.index())
            .copied()
            .ok_or(Error::InvalidNode(i, self.n_nodes()))
    }

    pub fn domain_assignment(&self) -> &[DomainId] {
        &self.domain_of
    }

    /// Nodes of domain `d` in ascending order.
    pub fn members(&self, d: DomainId) -> Vec<NodeId> {
        self.nodes().filter(|&i| self.domain_of[i.index()] == d).collect()
    }

    pub fn domain_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_domains];
        for d in &self.domain_of {
            sizes[d.index()] += 1;
        }
        sizes
    }

    /// Sorted neighbor list of `i`. Because the graph is undirected this is
    /// also the set of nodes that rate `i`.
    pub fn neighbors(&self, i: NodeId) -> Result<&[NodeId]> {
        self.adjacency
            .get(i.index())
            .map(Vec::as_slice)
            .ok_or(Error::InvalidNode(i, self.n_nodes()))
    }

    pub fn degree(&self, i: NodeId) -> usize {
        self.adjacency[i.index()].len()
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency
            .get(a.index())
            .is_some_and(|adj| adj.binary_search(&b).is_ok())
    }

    /// Undirected edges as `(low, high)` pairs in lexicographic order.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for (i, adj) in self.adjacency.iter().enumerate() {
            let i = NodeId(i as u32);
            out.extend(adj.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_inter_domain(&self, a: NodeId, b: NodeId) -> bool {
        self.domain_of[a.index()] != self.domain_of[b.index()]
    }

    /// `(intra, inter)` undirected edge counts.
    pub fn edge_classes(&self) -> (usize, usize) {
        self.edges()
            .into_iter()
            .fold((0, 0), |(intra, inter), (a, b)| {
                if self.is_inter_domain(a, b) {
                    (intra, inter + 1)
                } else {
                    (intra + 1, inter)
                }
            })
    }

    /// Number of neighbors of `i` living in another domain.
    pub fn inter_domain_degree(&self, i: NodeId) -> usize {
        self.adjacency[i.index()]
            .iter()
            .filter(|&&j| self.is_inter_domain(i, j))
            .count()
    }

    pub fn isolated_nodes(&self) -> Vec<NodeId> {
        self.nodes().filter(|&i| self.degree(i) == 0).collect()
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.n_edges() as f64 / self.n_nodes() as f64
    }

    /// Write the edge-list format: `N D`, then the N domain indices, then
    /// one `i j` pair per line.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.n_nodes(), self.n_domains)?;
        let assignment: Vec<String> = self.domain_of.iter().map(|d| d.0.to_string()).collect();
        writeln!(w, "{}", assignment.join(" "))?;
        for (a, b) in self.edges() {
            writeln!(w, "{a} {b}")?;
        }
        Ok(())
    }

    pub fn read_edge_list<R: BufRead>(r: R) -> Result<Self> {
        let parse_err = |detail: String| Error::Parse { what: "edge list", detail };
        let mut lines = r.lines().filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let header = lines.next().ok_or_else(|| parse_err("missing header".into()))??;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(format!("header: {e}")))?;
        let [n, d] = head[..] else {
            return Err(parse_err(format!("header must be `N D`, got `{header}`")));
        };
        let assign_line = lines.next().ok_or_else(|| parse_err("missing domain assignment".into()))??;
        let domain_of: Vec<DomainId> = assign_line
            .split_whitespace()
            .map(|s| s.parse().map(DomainId))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(format!("domain assignment: {e}")))?;
        if domain_of.len() != n {
            return Err(parse_err(format!("expected {n} domain indices, got {}", domain_of.len())));
        }
        if domain_of.iter().any(|x| x.index() >= d) {
            return Err(parse_err(format!("domain index out of range 0..{d}")));
        }
        let mut edges = Vec::new();
        for line in lines {
            let line = line?;
            let ends: Vec<u32> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(format!("edge `{line}`: {e}")))?;
            let [a, b] = ends[..] else {
                return Err(parse_err(format!("edge line must be `i j`, got `{line}`")));
            };
            edges.push((NodeId(a), NodeId(b)));
        }
        let g = Self::from_edges(domain_of, &edges)?;
        if g.n_domains != d {
            return Err(parse_err(format!("header declares {d} domains, assignment uses {}", g.n_domains)));
        }
        Ok(g)
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

fn assignment_from_sizes(sizes: &[usize]) -> Result<Vec<DomainId>> {
    if sizes.is_empty() {
        return Err(Error::config("at least one domain is required"));
    }
    if let Some(d) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::config(format!("domain {d} has no nodes")));
    }
    Ok(sizes
        .iter()
        .enumerate()
        .flat_map(|(d, &s)| std::iter::repeat_n(DomainId(d as u32), s))
        .collect())
}

/// Raw D-block stochastic block model draw: same-domain pairs connect with
/// probability `p1`, cross-domain pairs with `p2`. Isolated nodes are kept.
pub fn generate_sbm(nodes_per_domain: &[usize], p1: f64, p2: f64, seed: u64) -> Result<MultiDomainGraph> {
    check_probability("p1", p1)?;
    check_probability("p2", p2)?;
    let domain_of = assignment_from_sizes(nodes_per_domain)?;
    Ok(draw_sbm(domain_of, p1, p2, seed))
}

fn draw_sbm(domain_of: Vec<DomainId>, p1: f64, p2: f64, seed: u64) -> MultiDomainGraph {
    let n = domain_of.len();
    let mut rng = rng::rng_for(seed, Stream::Topology, n as u64, 0);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let p = if domain_of[a] == domain_of[b] { p1 } else { p2 };
            // Always draw so the stream position does not depend on p.
            let u: f64 = rng.random();
            if u < p {
                edges.push((NodeId(a as u32), NodeId(b as u32)));
            }
        }
    }
    MultiDomainGraph::from_edges(domain_of, &edges).expect("valid by construction")
}

/// SBM draw without isolated nodes: redraws with `seed + k` for up to 32
/// attempts, then links every remaining isolated node to a random peer of
/// its own domain (any other node if its domain is a singleton).
pub fn generate_sbm_connected(
    nodes_per_domain: &[usize],
    p1: f64,
    p2: f64,
    seed: u64,
) -> Result<MultiDomainGraph> {
    check_probability("p1", p1)?;
    check_probability("p2", p2)?;
    let domain_of = assignment_from_sizes(nodes_per_domain)?;
    if domain_of.len() < 2 {
        return Err(Error::config("a connected draw needs at least two nodes"));
    }
    let mut g = draw_sbm(domain_of.clone(), p1, p2, seed);
    for attempt in 1..REDRAW_ATTEMPTS {
        if g.isolated_nodes().is_empty() {
            return Ok(g);
        }
        g = draw_sbm(domain_of.clone(), p1, p2, seed.wrapping_add(attempt));
    }
    let isolated = g.isolated_nodes();
    if isolated.is_empty() {
        return Ok(g);
    }
    let mut rng = rng::rng_for(seed, Stream::Topology, u64::MAX, 1);
    let mut edges = g.edges();
    for i in isolated {
        let d = g.domain_of[i.index()];
        let mut peers: Vec<NodeId> = g.members(d).into_iter().filter(|&j| j != i).collect();
        if peers.is_empty() {
            peers = g.nodes().filter(|&j| j != i).collect();
        }
        let j = *peers.choose(&mut rng).expect("at least two nodes");
        edges.push((i, j));
    }
    MultiDomainGraph::from_edges(domain_of, &edges)
}

/// Intra-domain edge probability giving an expected degree of
/// `target_degree`, clamped to a complete graph.
pub fn target_degree_p1(n_in_domain: usize, target_degree: f64) -> f64 {
    if n_in_domain < 2 {
        return 0.0;
    }
    (target_degree / (n_in_domain as f64 - 1.0)).clamp(0.0, 1.0)
}

/// Single-domain random k-regular graph by stub pairing with local rejection
/// of self-loops and multi-edges; a stuck pairing restarts.
pub fn generate_regular(n: usize, k: usize, seed: u64) -> Result<MultiDomainGraph> {
    if k >= n {
        return Err(Error::config(format!("k-regular graph needs k < n (k = {k}, n = {n})")));
    }
    if (n * k) % 2 == 1 {
        return Err(Error::config(format!("no {k}-regular graph on {n} nodes: n*k is odd")));
    }
    let mut rng = rng::rng_for(seed, Stream::Topology, n as u64, k as u64);
    const RESTARTS: usize = 10_000;
    for _ in 0..RESTARTS {
        if let Some(edges) = try_pairing(n, k, &mut rng) {
            return MultiDomainGraph::from_edges(vec![DomainId(0); n], &edges);
        }
    }
    Err(Error::config(format!("failed to draw a {k}-regular graph on {n} nodes")))
}

fn try_pairing<R: Rng>(n: usize, k: usize, rng: &mut R) -> Option<Vec<(NodeId, NodeId)>> {
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, k)).collect();
    let mut adj = vec![vec![false; n]; n];
    let mut edges = Vec::with_capacity(n * k / 2);
    let suitable = |a: usize, b: usize, adj: &Vec<Vec<bool>>| a != b && !adj[a][b];
    while !stubs.is_empty() {
        let mut placed = false;
        for _ in 0..64 {
            let x = rng.random_range(0..stubs.len());
            let y = rng.random_range(0..stubs.len());
            if x != y && suitable(stubs[x], stubs[y], &adj) {
                let (a, b) = (stubs[x], stubs[y]);
                adj[a][b] = true;
                adj[b][a] = true;
                edges.push((NodeId(a as u32), NodeId(b as u32)));
                let (hi, lo) = if x > y { (x, y) } else { (y, x) };
                stubs.swap_remove(hi);
                stubs.swap_remove(lo);
                placed = true;
                break;
            }
        }
        if !placed {
            // Fall back to an exhaustive scan before declaring the pairing stuck.
            let options: Vec<(usize, usize)> = (0..stubs.len())
                .flat_map(|x| (x + 1..stubs.len()).map(move |y| (x, y)))
                .filter(|&(x, y)| suitable(stubs[x], stubs[y], &adj))
                .collect();
            let &(x, y) = options.choose(rng)?;
            let (a, b) = (stubs[x], stubs[y]);
            adj[a][b] = true;
            adj[b][a] = true;
            edges.push((NodeId(a as u32), NodeId(b as u32)));
            stubs.swap_remove(y);
            stubs.swap_remove(x);
        }
    }
    Some(edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_inter_probability_gives_no_inter_edges() {
        let g = generate_sbm(&[10, 12], 0.5, 0.0, 3).unwrap();
        assert_eq!(g.edge_classes().1, 0);
        assert!(g.edge_classes().0 > 0);
    }

    #[test]
    fn zero_intra_probability_gives_no_intra_edges() {
        let g = generate_sbm(&[6, 7, 5], 0.0, 0.4, 9).unwrap();
        assert_eq!(g.edge_classes().0, 0);
    }

    #[test]
    fn p1_one_single_domain_is_complete() {
        let g = generate_sbm(&[5], 1.0, 0.0, 0).unwrap();
        assert!(g.nodes().all(|i| g.degree(i) == 4));
        assert_eq!(g.n_edges(), 10);
    }

    #[test]
    fn empty_block_is_a_config_error() {
        assert!(matches!(generate_sbm(&[4, 0], 0.5, 0.1, 1), Err(Error::Config(_))));
        assert!(matches!(generate_sbm(&[], 0.5, 0.1, 1), Err(Error::Config(_))));
        assert!(matches!(generate_sbm(&[3], 1.5, 0.1, 1), Err(Error::Config(_))));
    }

    #[test]
    fn sbm_mean_degree_matches_expectation() {
        let p1 = target_degree_p1(20, 8.0);
        let mean: f64 = (0..1000)
            .map(|s| generate_sbm(&[20], p1, 0.0, s).unwrap().mean_degree())
            .sum::<f64>()
            / 1000.0;
        assert!((mean - 8.0).abs() <= 0.2, "mean degree {mean}");
    }

    #[test]
    fn target_degree_examples() {
        assert!((target_degree_p1(20, 8.0) - 8.0 / 19.0).abs() < 1e-15);
        assert_eq!(target_degree_p1(9, 8.0), 1.0);
        assert!((target_degree_p1(100, 8.0) - 8.0 / 99.0).abs() < 1e-15);
    }

    #[test]
    fn regular_graph_examples() {
        let g = generate_regular(4, 2, 1).unwrap();
        assert!(g.nodes().all(|i| g.degree(i) == 2));
        let g = generate_regular(20, 8, 11).unwrap();
        assert!(g.nodes().all(|i| g.degree(i) == 8));
        let g = generate_regular(5, 4, 2).unwrap();
        assert_eq!(g.n_edges(), 10);
        assert!(matches!(generate_regular(5, 3, 0), Err(Error::Config(_))));
        assert!(matches!(generate_regular(4, 4, 0), Err(Error::Config(_))));
    }

    #[test]
    fn neighbors_examples() {
        let g = MultiDomainGraph::from_edges(vec![DomainId(0); 4], &[(NodeId(0), NodeId(1))]).unwrap();
        assert!(g.neighbors(NodeId(3)).unwrap().is_empty());
        assert!(matches!(g.neighbors(NodeId(4)), Err(Error::InvalidNode(..))));
        let k3 = generate_sbm(&[3], 1.0, 0.0, 0).unwrap();
        assert_eq!(k3.neighbors(NodeId(0)).unwrap(), &[NodeId(1), NodeId(2)]);
    }

    #[test]
    fn seed_47_sbm_is_symmetric() {
        let g = generate_sbm(&[15, 10, 12], 0.3, 0.05, 47).unwrap();
        for i in g.nodes() {
            for j in g.nodes() {
                let ij = g.neighbors(i).unwrap().contains(&j);
                let ji = g.neighbors(j).unwrap().contains(&i);
                assert_eq!(ij, ji, "pair ({i}, {j})");
            }
        }
    }

    #[test]
    fn connected_draw_has_no_isolated_nodes() {
        for seed in 0..50 {
            let g = generate_sbm_connected(&[6, 6], 0.1, 0.01, seed).unwrap();
            assert!(g.isolated_nodes().is_empty());
        }
        // Nothing can be drawn here, so the patch path must run.
        let g = generate_sbm_connected(&[3, 1], 0.0, 0.0, 5).unwrap();
        assert!(g.isolated_nodes().is_empty());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = generate_sbm(&[5, 4], 0.6, 0.2, 8).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("9 2\n0 0 0 0 0 1 1 1 1\n"));
        let back = MultiDomainGraph::read_edge_list(&buf[..]).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn edge_list_rejects_bad_input() {
        assert!(MultiDomainGraph::read_edge_list("2 1\n0 0\n0 0\n".as_bytes()).is_err());
        assert!(MultiDomainGraph::read_edge_list("2 1\n0\n".as_bytes()).is_err());
        assert!(MultiDomainGraph::read_edge_list("2 1\n0 0\n0 5\n".as_bytes()).is_err());
        assert!(MultiDomainGraph::read_edge_list("2 2\n0 0\n".as_bytes()).is_err());
    }
}
