//! Feynman graph classes: external vertices at fixed product positions,
//! internal vertices in the slots between them, oriented lines.
//!
//! Vertices are indexed in product order, leftmost (latest) first:
//! slot 0, external 1, slot 1, ..., external n, slot n.
//! A line `(tail, head)` runs from the earlier vertex (creator side) to the
//! later one (annihilator side).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::combinatorics::{factorial, linear_extensions, Poset};
use crate::error::{Error, Result};
use crate::types::Sign;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Vertex {
    External { index: usize, sign: Sign },
    Internal { slot: usize, pos: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeynmanGraph {
    pub alpha: Vec<Sign>,
    pub slots: Vec<usize>,
    pub vertices: Vec<Vertex>,
    /// Sorted `(tail, head)` pairs; parallel lines repeat.
    pub edges: Vec<(usize, usize)>,
    /// Within-slot order is fixed by vertex index when true.
    pub total_order: bool,
    /// `|Aut|` of the class; the graph enters sums with weight `1/|Aut|`.
    pub automorphisms: u64,
}

/// Which graphs to enumerate for one slot occupancy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphClassQuery {
    pub alpha: Vec<Sign>,
    pub slots: Vec<usize>,
    /// Populated `(creators, annihilators)` kernel splits.
    pub splits: BTreeSet<(usize, usize)>,
    pub allow_vacuum_components: bool,
    pub require_total_order: bool,
}

impl GraphClassQuery {
    pub fn new(alpha: Vec<Sign>, slots: Vec<usize>, splits: BTreeSet<(usize, usize)>) -> Result<Self> {
        if slots.len() != alpha.len() + 1 {
            return Err(Error::Input(format!(
                "slots: expected {} occupancies for {} externals",
                alpha.len() + 1,
                alpha.len()
            )));
        }
        Ok(GraphClassQuery {
            alpha,
            slots,
            splits,
            allow_vacuum_components: false,
            require_total_order: true,
        })
    }
}

pub(crate) fn layout(alpha: &[Sign], slots: &[usize]) -> Vec<Vertex> {
    let mut v = Vec::new();
    for (i, &count) in slots.iter().enumerate() {
        if i > 0 {
            v.push(Vertex::External {
                index: i - 1,
                sign: alpha[i - 1],
            });
        }
        for pos in 0..count {
            v.push(Vertex::Internal { slot: i, pos });
        }
    }
    v
}

/// All occupancies `(v_0, ..., v_n)` with the given total.
pub fn slot_compositions(n: usize, total: usize) -> Vec<Vec<usize>> {
    fn rec(parts: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in (0..=left).rev() {
            cur.push(k);
            rec(parts - 1, left - k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n + 1, total, &mut Vec::new(), &mut out);
    out
}

impl FeynmanGraph {
    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn internal_count(&self) -> usize {
        self.slots.iter().sum()
    }

    pub fn is_external(&self, v: usize) -> bool {
        matches!(self.vertices[v], Vertex::External { .. })
    }

    pub fn external_vertex(&self, i: usize) -> usize {
        self.vertices
            .iter()
            .position(|v| matches!(v, Vertex::External { index, .. } if *index == i))
            .expect("external vertex present")
    }

    pub fn internal_vertices(&self) -> Vec<usize> {
        (0..self.vertices.len()).filter(|&v| !self.is_external(v)).collect()
    }

    pub fn slot_of(&self, v: usize) -> Option<usize> {
        match self.vertices[v] {
            Vertex::Internal { slot, .. } => Some(slot),
            _ => None,
        }
    }

    /// Internal vertices of one slot, latest first for totally ordered graphs.
    pub fn slot_vertices(&self, slot: usize) -> Vec<usize> {
        (0..self.vertices.len()).filter(|&v| self.slot_of(v) == Some(slot)).collect()
    }

    /// `(creators, annihilators)` of a vertex: lines to later and from earlier vertices.
    pub fn split(&self, v: usize) -> (usize, usize) {
        let out = self.edges.iter().filter(|e| e.0 == v).count();
        let inc = self.edges.iter().filter(|e| e.1 == v).count();
        (out, inc)
    }

    pub fn multiplicities(&self) -> BTreeMap<(usize, usize), usize> {
        let mut m = BTreeMap::new();
        for &e in &self.edges {
            *m.entry(e).or_insert(0) += 1;
        }
        m
    }

    /// Product of `m!` over classes of parallel lines.
    pub fn parallel_factor(&self) -> u64 {
        self.multiplicities().values().map(|&m| factorial(m as u64) as u64).product()
    }

    pub fn symmetry_factor(&self) -> f64 {
        1.0 / self.automorphisms as f64
    }

    /// Connected components as sorted vertex lists.
    pub fn components(&self) -> Vec<Vec<usize>> {
        components(self.vertices.len(), &self.edges)
    }

    pub fn vacuum_components(&self) -> Vec<Vec<usize>> {
        self.components()
            .into_iter()
            .filter(|c| c.iter().all(|&v| !self.is_external(v)))
            .collect()
    }

    pub fn has_vacuum_components(&self) -> bool {
        !self.vacuum_components().is_empty()
    }

    /// Components holding at least one external vertex, with their external indices.
    pub fn external_components(&self) -> Vec<Vec<usize>> {
        self.components()
            .into_iter()
            .filter_map(|c| {
                let ext: Vec<usize> = c
                    .iter()
                    .filter_map(|&v| match self.vertices[v] {
                        Vertex::External { index, .. } => Some(index),
                        _ => None,
                    })
                    .collect();
                (!ext.is_empty()).then_some(ext)
            })
            .collect()
    }

    /// The order relations `a < b` ("a earlier than b") of the graph.
    pub fn poset(&self) -> Result<Poset> {
        let n_v = self.vertices.len();
        let mut rel: Vec<(usize, usize)> = self.edges.iter().copied().collect();
        let ext: Vec<usize> = (0..self.n()).map(|i| self.external_vertex(i)).collect();
        for w in ext.windows(2) {
            rel.push((w[1], w[0]));
        }
        for v in 0..n_v {
            if let Some(slot) = self.slot_of(v) {
                if slot > 0 {
                    rel.push((v, ext[slot - 1]));
                }
                if slot < self.n() {
                    rel.push((ext[slot], v));
                }
            }
        }
        if self.total_order {
            for slot in 0..self.slots.len() {
                let vs = self.slot_vertices(slot);
                for w in vs.windows(2) {
                    rel.push((w[1], w[0]));
                }
            }
        }
        Poset::new(n_v, &rel)
    }

    /// Totally ordered graphs refining this one, one per linear extension.
    pub fn total_orderings(&self) -> Result<Vec<FeynmanGraph>> {
        if self.total_order {
            return Ok(vec![self.clone()]);
        }
        let poset = self.poset()?;
        let mut out = Vec::new();
        for ext in linear_extensions(&poset) {
            // extension lists vertices earliest first; product order is the reverse
            let order: Vec<usize> = ext.into_iter().rev().collect();
            let mut rank = vec![0; order.len()];
            for (r, &v) in order.iter().enumerate() {
                rank[v] = r;
            }
            let mut edges: Vec<(usize, usize)> = self.edges.iter().map(|&(a, b)| (rank[a], rank[b])).collect();
            edges.sort_unstable();
            let g = FeynmanGraph {
                alpha: self.alpha.clone(),
                slots: self.slots.clone(),
                vertices: layout(&self.alpha, &self.slots),
                edges,
                total_order: true,
                automorphisms: self.parallel_factor(),
            };
            debug_assert!(g.vertices.iter().zip(&order).all(|(a, &b)| match (a, self.vertices[b]) {
                (Vertex::Internal { slot: s1, .. }, Vertex::Internal { slot: s2, .. }) => *s1 == s2,
                (x, y) => *x == y,
            }));
            out.push(g);
        }
        Ok(out)
    }

    /// Checks degree, orientation, order and kernel-support invariants.
    pub fn validate(&self, splits: &BTreeSet<(usize, usize)>) -> Result<()> {
        if self.vertices != layout(&self.alpha, &self.slots) {
            return Err(Error::Input("vertex layout does not match slots".into()));
        }
        for &(a, b) in &self.edges {
            if a == b {
                return Err(Error::Input(format!("self-loop at vertex {a}")));
            }
            let same_slot = self.slot_of(a).is_some() && self.slot_of(a) == self.slot_of(b);
            if (self.total_order || !same_slot) && a <= b {
                return Err(Error::Input(format!("line {a}->{b} points to an earlier vertex")));
            }
        }
        for v in 0..self.vertices.len() {
            let (out, inc) = self.split(v);
            match self.vertices[v] {
                Vertex::External { sign, index } => {
                    let ok = match sign {
                        Sign::Plus => (out, inc) == (1, 0),
                        Sign::Minus => (out, inc) == (0, 1),
                    };
                    if !ok {
                        return Err(Error::Input(format!("external {} has wrong lines", index + 1)));
                    }
                }
                Vertex::Internal { .. } => {
                    if !splits.contains(&(out, inc)) {
                        return Err(Error::Input(format!("vertex {v} has unsupported split ({out}, {inc})")));
                    }
                }
            }
        }
        self.poset().map(|_| ())
    }

    /// Stable one-line text form.
    pub fn to_text(&self) -> String {
        let alpha: String = self.alpha.iter().map(|s| s.symbol()).collect();
        let slots: Vec<String> = self.slots.iter().map(|v| v.to_string()).collect();
        let edges: Vec<String> = self.edges.iter().map(|(a, b)| format!("{a}>{b}")).collect();
        format!(
            "alpha={};slots={};order={};aut={};edges={}",
            alpha,
            slots.join(","),
            if self.total_order { "total" } else { "partial" },
            self.automorphisms,
            edges.join(",")
        )
    }

    pub fn from_text(text: &str) -> Result<FeynmanGraph> {
        let mut fields = BTreeMap::new();
        for part in text.trim().split(';') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("graph text: malformed field {part:?}")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Input(format!("graph text: missing {k}")))
        };
        let alpha = get("alpha")?
            .chars()
            .map(|c| Sign::parse(&c.to_string()).ok_or_else(|| Error::Input(format!("graph text: bad sign {c}"))))
            .collect::<Result<Vec<_>>>()?;
        let slots = get("slots")?
            .split(',')
            .map(|s| s.parse::<usize>().map_err(|_| Error::Input(format!("graph text: bad slot {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if slots.len() != alpha.len() + 1 {
            return Err(Error::Input("graph text: slot count mismatch".into()));
        }
        let total_order = match get("order")? {
            "total" => true,
            "partial" => false,
            o => return Err(Error::Input(format!("graph text: bad order {o:?}"))),
        };
        let automorphisms = get("aut")?
            .parse()
            .map_err(|_| Error::Input("graph text: bad aut".into()))?;
        let edge_text = get("edges")?;
        let mut edges = Vec::new();
        if !edge_text.is_empty() {
            for e in edge_text.split(',') {
                let (a, b) = e
                    .split_once('>')
                    .ok_or_else(|| Error::Input(format!("graph text: bad edge {e:?}")))?;
                let a: usize = a.parse().map_err(|_| Error::Input(format!("graph text: bad edge {e:?}")))?;
                let b: usize = b.parse().map_err(|_| Error::Input(format!("graph text: bad edge {e:?}")))?;
                edges.push((a, b));
            }
        }
        let vertices = layout(&alpha, &slots);
        if edges.iter().any(|&(a, b)| a >= vertices.len() || b >= vertices.len()) {
            return Err(Error::Input("graph text: edge endpoint out of range".into()));
        }
        edges.sort_unstable();
        Ok(FeynmanGraph {
            alpha,
            slots,
            vertices,
            edges,
            total_order,
            automorphisms,
        })
    }
}

impl fmt::Display for FeynmanGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn components(count: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..count).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let next = p[y];
            p[y] = r;
            y = next;
        }
        r
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..count {
        let r = find(&mut parent, v);
        groups.entry(r).or_default().push(v);
    }
    groups.into_values().collect()
}

struct Search<'a> {
    vertices: Vec<Vertex>,
    splits: &'a BTreeSet<(usize, usize)>,
    out_deg: Vec<usize>,
    in_deg: Vec<usize>,
    edges: Vec<(usize, usize)>,
    found: Vec<Vec<(usize, usize)>>,
}

impl Search<'_> {
    /// Largest annihilator count still admissible for vertex `b`.
    fn in_capacity(&self, b: usize, out_final: bool) -> usize {
        match self.vertices[b] {
            Vertex::External { sign: Sign::Minus, .. } => 1,
            Vertex::External { sign: Sign::Plus, .. } => 0,
            Vertex::Internal { .. } => self
                .splits
                .iter()
                .filter(|&&(lo, _)| !out_final || lo == self.out_deg[b])
                .map(|&(_, li)| li)
                .max()
                .unwrap_or(0),
        }
    }

    fn out_choices(&self, x: usize) -> Vec<usize> {
        match self.vertices[x] {
            Vertex::External { sign: Sign::Plus, .. } => vec![1],
            Vertex::External { sign: Sign::Minus, .. } => vec![0],
            Vertex::Internal { .. } => {
                let set: BTreeSet<usize> = self
                    .splits
                    .iter()
                    .filter(|&&(_, li)| li >= self.in_deg[x])
                    .map(|&(lo, _)| lo)
                    .collect();
                set.into_iter().collect()
            }
        }
    }

    fn run(&mut self, x: usize) {
        if x == self.vertices.len() {
            let ok = (0..self.vertices.len()).all(|v| match self.vertices[v] {
                Vertex::External { sign: Sign::Minus, .. } => self.in_deg[v] == 1,
                Vertex::External { sign: Sign::Plus, .. } => self.in_deg[v] == 0,
                Vertex::Internal { .. } => self.splits.contains(&(self.out_deg[v], self.in_deg[v])),
            });
            if ok {
                let mut e = self.edges.clone();
                e.sort_unstable();
                self.found.push(e);
            }
            return;
        }
        // vertices later than x are final on their creator side
        for b in 0..x {
            if self.in_deg[b] > self.in_capacity(b, true) {
                return;
            }
        }
        for lo in self.out_choices(x) {
            self.distribute(x, lo, 0);
        }
    }

    fn distribute(&mut self, x: usize, left: usize, from: usize) {
        if left == 0 {
            self.out_deg[x] = self.edges.iter().filter(|e| e.0 == x).count();
            self.run(x + 1);
            return;
        }
        for b in from..x {
            if self.in_deg[b] < self.in_capacity(b, true) {
                self.in_deg[b] += 1;
                self.edges.push((x, b));
                self.distribute(x, left - 1, b);
                self.edges.pop();
                self.in_deg[b] -= 1;
            }
        }
    }
}

/// Totally ordered labeled graphs of one slot occupancy, weight `1/prod m!`.
fn enumerate_total(query: &GraphClassQuery) -> Vec<FeynmanGraph> {
    let vertices = layout(&query.alpha, &query.slots);
    let count = vertices.len();
    let mut s = Search {
        vertices: vertices.clone(),
        splits: &query.splits,
        out_deg: vec![0; count],
        in_deg: vec![0; count],
        edges: Vec::new(),
        found: Vec::new(),
    };
    s.run(0);
    let mut out: Vec<FeynmanGraph> = s
        .found
        .into_iter()
        .map(|edges| {
            let mut g = FeynmanGraph {
                alpha: query.alpha.clone(),
                slots: query.slots.clone(),
                vertices: vertices.clone(),
                edges,
                total_order: true,
                automorphisms: 1,
            };
            g.automorphisms = g.parallel_factor();
            g
        })
        .filter(|g| query.allow_vacuum_components || !g.has_vacuum_components())
        .collect();
    out.sort_by(|a, b| a.edges.cmp(&b.edges));
    out.dedup_by(|a, b| a.edges == b.edges);
    out
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for (i, &x) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

/// Relabelings permuting internal vertices within each slot.
fn slot_relabelings(g: &FeynmanGraph) -> Vec<Vec<usize>> {
    let mut maps: Vec<Vec<usize>> = vec![(0..g.vertices.len()).collect()];
    for slot in 0..g.slots.len() {
        let vs = g.slot_vertices(slot);
        if vs.len() < 2 {
            continue;
        }
        let perms = permutations(&vs);
        maps = maps
            .into_iter()
            .flat_map(|m| {
                let vs = vs.clone();
                perms.iter().map(move |p| {
                    let mut m2 = m.clone();
                    for (k, &v) in vs.iter().enumerate() {
                        m2[v] = p[k];
                    }
                    m2
                })
            })
            .collect();
    }
    maps
}

fn relabel(edges: &[(usize, usize)], map: &[usize]) -> Vec<(usize, usize)> {
    let mut e: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (map[a], map[b])).collect();
    e.sort_unstable();
    e
}

/// Classes of graphs with unordered vertices inside each slot.
fn enumerate_partial(query: &GraphClassQuery) -> Vec<FeynmanGraph> {
    let total = enumerate_total(query);
    let mut seen: HashSet<Vec<(usize, usize)>> = HashSet::new();
    let mut out = Vec::new();
    for g in total {
        let maps = slot_relabelings(&g);
        let canon = maps.iter().map(|m| relabel(&g.edges, m)).min().expect("identity present");
        if !seen.insert(canon.clone()) {
            continue;
        }
        // transitive closure edges are implied by the order; keep only the lines
        let stabilizer = maps.iter().filter(|m| relabel(&g.edges, m) == g.edges).count() as u64;
        let mut rep = FeynmanGraph {
            edges: canon,
            total_order: false,
            ..g
        };
        rep.automorphisms = stabilizer * rep.parallel_factor();
        out.push(rep);
    }
    out
}

pub fn enumerate_graphs(query: &GraphClassQuery) -> Vec<FeynmanGraph> {
    if query.require_total_order {
        enumerate_total(query)
    } else {
        enumerate_partial(query)
    }
}

/// All graphs at `order` internal vertices, over every slot occupancy.
pub fn enumerate_order(
    alpha: &[Sign],
    order: usize,
    splits: &BTreeSet<(usize, usize)>,
    allow_vacuum_components: bool,
    require_total_order: bool,
) -> Vec<FeynmanGraph> {
    let mut out = Vec::new();
    for slots in slot_compositions(alpha.len(), order) {
        let mut q = GraphClassQuery::new(alpha.to_vec(), slots, splits.clone()).expect("slot count matches");
        q.allow_vacuum_components = allow_vacuum_components;
        q.require_total_order = require_total_order;
        out.extend(enumerate_graphs(&q));
    }
    out
}

/// Graph without order or slot data; internal lines carry no orientation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Topology {
    pub alpha: Vec<Sign>,
    pub internal: usize,
    /// Sorted undirected pairs over vertices `0..n` (externals) then internals.
    pub edges: Vec<(usize, usize)>,
    pub automorphisms: u64,
}

impl Topology {
    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.n() + self.internal
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|e| e.0 == v || e.1 == v).count()
    }

    pub fn components(&self) -> Vec<Vec<usize>> {
        components(self.vertex_count(), &self.edges)
    }

    pub fn has_vacuum_components(&self) -> bool {
        self.components().iter().any(|c| c.iter().all(|&v| v >= self.n()))
    }

    pub fn multiplicities(&self) -> BTreeMap<(usize, usize), usize> {
        let mut m = BTreeMap::new();
        for &e in &self.edges {
            *m.entry(e).or_insert(0) += 1;
        }
        m
    }

    pub fn symmetry_factor(&self) -> f64 {
        1.0 / self.automorphisms as f64
    }
}

fn canonical_undirected(edges: &[(usize, usize)], n: usize, internal: usize) -> (Vec<(usize, usize)>, u64) {
    let ids: Vec<usize> = (n..n + internal).collect();
    let mut best: Option<Vec<(usize, usize)>> = None;
    let mut stab = 0u64;
    for p in permutations(&ids) {
        let mut map: Vec<usize> = (0..n + internal).collect();
        for (k, &v) in ids.iter().enumerate() {
            map[v] = p[k];
        }
        let mut e: Vec<(usize, usize)> = edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (map[a], map[b]);
                (x.min(y), x.max(y))
            })
            .collect();
        e.sort_unstable();
        if e == edges {
            stab += 1;
        }
        if best.as_ref().map_or(true, |b| e < *b) {
            best = Some(e);
        }
    }
    (best.expect("at least the identity"), stab)
}

/// Unordered topologies with `internal` vertices whose degrees lie in `valences`.
pub fn enumerate_topologies(
    alpha: &[Sign],
    internal: usize,
    valences: &BTreeSet<usize>,
    allow_vacuum_components: bool,
) -> Vec<Topology> {
    let n = alpha.len();
    let total = n + internal;
    let max_deg = valences.iter().copied().max().unwrap_or(0);
    let cap: Vec<usize> = (0..total).map(|v| if v < n { 1 } else { max_deg }).collect();
    let pairs: Vec<(usize, usize)> = (0..total)
        .flat_map(|a| (a + 1..total).map(move |b| (a, b)))
        .filter(|&(a, b)| !(a < n && b < n && alpha[a] == alpha[b]))
        .collect();
    let mut found: HashSet<Vec<(usize, usize)>> = HashSet::new();
    let mut out = Vec::new();
    let mut deg = vec![0usize; total];
    let mut edges = Vec::new();
    #[allow(clippy::too_many_arguments)]
    fn rec(
        k: usize,
        pairs: &[(usize, usize)],
        deg: &mut Vec<usize>,
        cap: &[usize],
        edges: &mut Vec<(usize, usize)>,
        done: &mut dyn FnMut(&[(usize, usize)], &[usize]),
    ) {
        if k == pairs.len() {
            done(edges, deg);
            return;
        }
        let (a, b) = pairs[k];
        let mut m = 0;
        loop {
            rec(k + 1, pairs, deg, cap, edges, done);
            if deg[a] >= cap[a] || deg[b] >= cap[b] {
                break;
            }
            deg[a] += 1;
            deg[b] += 1;
            edges.push((a, b));
            m += 1;
        }
        for _ in 0..m {
            edges.pop();
            deg[a] -= 1;
            deg[b] -= 1;
        }
    }
    let mut done = |e: &[(usize, usize)], d: &[usize]| {
        if (0..n).any(|v| d[v] != 1) || (n..total).any(|v| !valences.contains(&d[v])) {
            return;
        }
        let mut e = e.to_vec();
        e.sort_unstable();
        let (canon, stab) = canonical_undirected(&e, n, internal);
        if found.insert(canon.clone()) {
            let mut t = Topology {
                alpha: alpha.to_vec(),
                internal,
                edges: canon,
                automorphisms: 0,
            };
            let par: u64 = t.multiplicities().values().map(|&m| factorial(m as u64) as u64).product();
            t.automorphisms = stab * par;
            if allow_vacuum_components || !t.has_vacuum_components() {
                out.push(t);
            }
        }
    };
    rec(0, &pairs, &mut deg, &cap, &mut edges, &mut done);
    out.sort_by(|a, b| a.edges.cmp(&b.edges));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::linear_extensions;

    fn phi3() -> BTreeSet<(usize, usize)> {
        [(3, 0), (2, 1), (1, 2), (0, 3)].into_iter().collect()
    }

    fn phi4() -> BTreeSet<(usize, usize)> {
        [(4, 0), (3, 1), (2, 2), (1, 3), (0, 4)].into_iter().collect()
    }

    fn mp() -> Vec<Sign> {
        vec![Sign::Minus, Sign::Plus]
    }

    #[test]
    fn free_two_point_graph() {
        let gs = enumerate_order(&mp(), 0, &phi3(), false, true);
        assert_eq!(gs.len(), 1);
        assert_eq!(gs[0].edges, vec![(1, 0)]);
        assert_eq!(gs[0].symmetry_factor(), 1.0);
        assert!(gs[0].vacuum_components().is_empty());
        assert!(enumerate_order(&[Sign::Plus, Sign::Minus], 0, &phi3(), false, true).is_empty());
    }

    #[test]
    fn no_first_order_cubic_graph() {
        assert!(enumerate_order(&mp(), 1, &phi3(), false, true).is_empty());
        assert!(enumerate_order(&mp(), 1, &phi3(), true, true).is_empty());
    }

    #[test]
    fn sunset_topology_and_factors() {
        let valences: BTreeSet<usize> = [3].into_iter().collect();
        let tops = enumerate_topologies(&mp(), 2, &valences, false);
        assert_eq!(tops.len(), 1);
        assert_eq!(tops[0].automorphisms, 2);
        let gs = enumerate_order(&mp(), 2, &phi3(), false, true);
        assert!(!gs.is_empty());
        for g in &gs {
            g.validate(&phi3()).unwrap();
            assert_eq!(g.symmetry_factor(), 0.5);
        }
    }

    /// Brute force over all multisets of vertex pairs with the right degrees.
    fn brute_force_topologies(alpha: &[Sign], internal: usize, valence: usize, vacuum: bool) -> usize {
        let n = alpha.len();
        let total = n + internal;
        let pairs: Vec<(usize, usize)> = (0..total).flat_map(|a| (a + 1..total).map(move |b| (a, b))).collect();
        let edge_count = (n + internal * valence) / 2;
        if (n + internal * valence) % 2 == 1 {
            return 0;
        }
        let mut classes = HashSet::new();
        let mut idx = vec![0usize; edge_count];
        fn rec(
            pos: usize,
            start: usize,
            idx: &mut Vec<usize>,
            pairs: &[(usize, usize)],
            f: &mut dyn FnMut(&[usize]),
        ) {
            if pos == idx.len() {
                f(idx);
                return;
            }
            for k in start..pairs.len() {
                idx[pos] = k;
                rec(pos + 1, k, idx, pairs, f);
            }
        }
        let mut f = |sel: &[usize]| {
            let edges: Vec<(usize, usize)> = sel.iter().map(|&k| pairs[k]).collect();
            let mut deg = vec![0; total];
            for &(a, b) in &edges {
                deg[a] += 1;
                deg[b] += 1;
            }
            if (0..n).any(|v| deg[v] != 1) || (n..total).any(|v| deg[v] != valence) {
                return;
            }
            if edges.iter().any(|&(a, b)| a < n && b < n && alpha[a] == alpha[b]) {
                return;
            }
            let comps = components(total, &edges);
            if !vacuum && comps.iter().any(|c| c.iter().all(|&v| v >= n)) {
                return;
            }
            classes.insert(canonical_undirected(&edges, n, internal).0);
        };
        rec(0, 0, &mut idx, &pairs, &mut f);
        classes.len()
    }

    #[test]
    fn topology_counts_match_brute_force() {
        for (alpha, v, val) in [
            (mp(), 2, 3),
            (mp(), 2, 4),
            (vec![Sign::Minus, Sign::Minus, Sign::Plus, Sign::Plus], 1, 4),
            (vec![Sign::Minus, Sign::Plus, Sign::Minus, Sign::Plus], 2, 3),
            (vec![Sign::Plus], 3, 3),
        ] {
            for vacuum in [false, true] {
                let set: BTreeSet<usize> = [val].into_iter().collect();
                let got = enumerate_topologies(&alpha, v, &set, vacuum).len();
                assert_eq!(got, brute_force_topologies(&alpha, v, val, vacuum), "{alpha:?} V={v} deg={val}");
            }
        }
    }

    #[test]
    fn topology_counts_are_covariant_in_alpha() {
        let set: BTreeSet<usize> = [3].into_iter().collect();
        let base = vec![Sign::Minus, Sign::Minus, Sign::Plus, Sign::Plus];
        let count = enumerate_topologies(&base, 2, &set, false).len();
        for perm in permutations(&[0, 1, 2, 3]) {
            let a: Vec<Sign> = perm.iter().map(|&i| base[i]).collect();
            assert_eq!(enumerate_topologies(&a, 2, &set, false).len(), count);
        }
    }

    #[test]
    fn symmetry_factor_examples() {
        let g = FeynmanGraph::from_text("alpha=-+;slots=0,2,0;order=total;aut=2;edges=1>0,2>1,2>1,3>2").unwrap();
        g.validate(&phi3()).unwrap();
        assert_eq!(g.parallel_factor(), 2);
        let triple = FeynmanGraph::from_text("alpha=;slots=2;order=total;aut=6;edges=1>0,1>0,1>0").unwrap();
        triple.validate(&phi3()).unwrap();
        assert_eq!(triple.parallel_factor(), 6);
        assert_eq!(triple.vacuum_components(), vec![vec![0, 1]]);
    }

    #[test]
    fn partial_classes_reproduce_total_orders() {
        for (alpha, v, splits) in [
            (mp(), 2, phi3()),
            (mp(), 2, phi4()),
            (vec![Sign::Minus, Sign::Minus, Sign::Plus, Sign::Plus], 2, phi3()),
            (mp(), 3, phi4()),
        ] {
            for vacuum in [false, true] {
                let total: f64 = enumerate_order(&alpha, v, &splits, vacuum, true)
                    .iter()
                    .map(|g| g.symmetry_factor())
                    .sum();
                let partial = enumerate_order(&alpha, v, &splits, vacuum, false);
                let mut via: f64 = 0.0;
                let mut count = 0;
                for g in &partial {
                    g.validate(&splits).unwrap();
                    let ext = g.total_orderings().unwrap();
                    assert_eq!(ext.len(), linear_extensions(&g.poset().unwrap()).len());
                    via += g.symmetry_factor() * ext.len() as f64;
                    count += ext.len();
                }
                assert!((via - total).abs() < 1e-12, "{alpha:?} V={v}: {via} vs {total}");
                assert!(count >= partial.len());
            }
        }
    }

    #[test]
    fn sunset_in_one_slot_has_two_orderings() {
        let mut q = GraphClassQuery::new(mp(), vec![0, 2, 0], phi3()).unwrap();
        q.require_total_order = false;
        let gs = enumerate_graphs(&q);
        for g in &gs {
            let ext = g.total_orderings().unwrap();
            // brute force: count orders of the two slot vertices consistent with lines
            let vs = g.slot_vertices(1);
            let mut brute = 0;
            for p in permutations(&vs) {
                let pos = |v: usize| p.iter().position(|&x| x == v);
                let ok = g.edges.iter().all(|&(a, b)| match (pos(a), pos(b)) {
                    (Some(i), Some(j)) => i > j,
                    _ => true,
                });
                brute += ok as usize;
            }
            assert_eq!(ext.len(), brute);
        }
        let total = enumerate_graphs(&GraphClassQuery::new(mp(), vec![0, 2, 0], phi3()).unwrap());
        // each class stands for |ext| / |stabilizer| totally ordered graphs
        let via: f64 = gs
            .iter()
            .map(|g| {
                let stab = g.automorphisms / g.parallel_factor();
                g.total_orderings().unwrap().len() as f64 / stab as f64
            })
            .sum();
        assert_eq!(via, total.len() as f64);
    }

    #[test]
    fn enumerated_graphs_satisfy_invariants() {
        for alpha in [mp(), vec![Sign::Plus, Sign::Minus, Sign::Minus, Sign::Plus]] {
            for v in 0..=3 {
                for splits in [phi3(), phi4()] {
                    let gs = enumerate_order(&alpha, v, &splits, true, true);
                    let mut seen = HashSet::new();
                    for g in gs {
                        g.validate(&splits).unwrap();
                        assert!(seen.insert(g.to_text()));
                        assert_eq!(FeynmanGraph::from_text(&g.to_text()).unwrap(), g);
                    }
                }
            }
        }
    }

    #[test]
    fn text_parsing_rejects_garbage() {
        assert!(FeynmanGraph::from_text("alpha=-+;slots=0,0").is_err());
        assert!(FeynmanGraph::from_text("alpha=-x;slots=0,0,0;order=total;aut=1;edges=").is_err());
        assert!(FeynmanGraph::from_text("alpha=-+;slots=0,0,0;order=total;aut=1;edges=9>0").is_err());
    }
}
