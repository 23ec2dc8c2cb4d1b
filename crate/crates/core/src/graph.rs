//! Finite ball truncations of infinite weighted graphs.
//!
//! A [`GraphBall`] stores a finite piece of an infinite graph: an *interior*
//! region on which operators are evaluated, plus its one-step outer boundary
//! (the *halo*) carrying Dirichlet data. Two built-in families are provided:
//!
//! * spherically symmetric trees with a branching function `b(r)`, truncated
//!   at combinatorial depth `R` (interior = layers `0..=R`, halo = layer `R+1`);
//! * the integer lattice `Z^n` with unit edge weights and node measure `2n`,
//!   truncated at Euclidean radius `R` (interior = `{ |x| < R }`).
//!
//! Balls are immutable after construction; vertices are indexed `0..n` in
//! lexicographic label order so that all iteration is deterministic.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the number of stored vertices (interior plus halo).
/// Power branching functions explode quickly; the radial module is the
/// intended tool for large radii.
pub const DEFAULT_VERTEX_CAP: usize = 5_000_000;

pub type Vertex = u32;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("vertex cap exceeded: truncation needs {needed} vertices, cap is {cap}")]
    CapExceeded { needed: u128, cap: usize },
    #[error("invalid graph specification: {0}")]
    InvalidSpec(String),
    #[error("unknown vertex id `{0}`")]
    UnknownVertex(String),
    #[error("outer/inner degree undefined at `{0}`: vertex must be interior with layer >= 1")]
    DegreeUndefined(String),
    #[error("malformed ball parts: {0}")]
    BadParts(String),
}

/// Branching function of a spherically symmetric tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Branching {
    Constant { b0: u64 },
    Power { p: u32 },
}

impl Branching {
    /// Number of forward children of a vertex on sphere `r`.
    pub fn value(&self, r: u32) -> u64 {
        match self {
            Branching::Constant { b0 } => *b0,
            Branching::Power { p } => (r as u64 + 1).pow(*p),
        }
    }

    pub fn value_f64(&self, r: u32) -> f64 {
        match self {
            Branching::Constant { b0 } => *b0 as f64,
            Branching::Power { p } => (r as f64 + 1.0).powi(*p as i32),
        }
    }

    /// Exponent `p` when the branching is the power family.
    pub fn power_exponent(&self) -> Option<u32> {
        match self {
            Branching::Power { p } => Some(*p),
            Branching::Constant { .. } => None,
        }
    }

    /// Parses the CLI form: `"3"`, `"constant:3"` or `"power:2"`.
    pub fn parse_flag(s: &str) -> Result<Self, GraphError> {
        let bad = || GraphError::InvalidSpec(format!("cannot parse branching `{s}`"));
        if let Ok(b0) = s.parse::<u64>() {
            if b0 == 0 {
                return Err(bad());
            }
            return Ok(Branching::Constant { b0 });
        }
        match s.split_once(':') {
            Some(("constant", v)) => {
                let b0: u64 = v.parse().map_err(|_| bad())?;
                if b0 == 0 {
                    return Err(bad());
                }
                Ok(Branching::Constant { b0 })
            }
            Some(("power", v)) => {
                let p: u32 = v.parse().map_err(|_| bad())?;
                if p == 0 {
                    return Err(bad());
                }
                Ok(Branching::Power { p })
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Branching {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branching::Constant { b0 } => write!(f, "constant:{b0}"),
            Branching::Power { p } => write!(f, "power:{p}"),
        }
    }
}

/// Spherically symmetric tree truncated at combinatorial depth `radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub branching: Branching,
    pub radius: u32,
}

/// Integer lattice `Z^n` truncated at Euclidean radius `radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub n: usize,
    pub radius: f64,
}

/// JSON graph-family specification:
/// `{"family":"tree","branching":{"kind":"constant","b0":2},"radius":4}` or
/// `{"family":"lattice","n":3,"radius":10.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum GraphSpec {
    Tree(TreeSpec),
    Lattice(LatticeSpec),
}

impl GraphSpec {
    pub fn from_json(s: &str) -> Result<Self, GraphError> {
        serde_json::from_str(s).map_err(|e| GraphError::InvalidSpec(e.to_string()))
    }

    pub fn build(&self) -> Result<GraphBall, GraphError> {
        self.build_with_cap(DEFAULT_VERTEX_CAP)
    }

    pub fn build_with_cap(&self, cap: usize) -> Result<GraphBall, GraphError> {
        match self {
            GraphSpec::Tree(t) => build_tree_ball_with_cap(t, cap),
            GraphSpec::Lattice(l) => build_lattice_ball_with_cap(l, cap),
        }
    }

    /// Same spec with the truncation radius replaced (used by exhaustion runs).
    pub fn with_radius(&self, radius: f64) -> Result<Self, GraphError> {
        match self {
            GraphSpec::Tree(t) => {
                if radius < 0.0 || radius.fract() != 0.0 || radius > u32::MAX as f64 {
                    return Err(GraphError::InvalidSpec(format!(
                        "tree radius must be a nonnegative integer, got {radius}"
                    )));
                }
                Ok(GraphSpec::Tree(TreeSpec {
                    branching: t.branching.clone(),
                    radius: radius as u32,
                }))
            }
            GraphSpec::Lattice(l) => Ok(GraphSpec::Lattice(LatticeSpec {
                n: l.n,
                radius,
            })),
        }
    }
}

/// Structured vertex identifier. Trees use `(layer, index-within-layer)`,
/// lattices use the coordinate tuple; the derived lexicographic order fixes
/// the vertex numbering of a ball.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VertexLabel {
    Tree { layer: u32, index: u64 },
    Lattice(Vec<i64>),
}

impl fmt::Display for VertexLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VertexLabel::Tree { layer, index } => write!(f, "{layer}:{index}"),
            VertexLabel::Lattice(coords) => {
                let parts: Vec<String> = coords.iter().map(|c| c.to_string()).collect();
                write!(f, "{}", parts.join(":"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BallFamily {
    Tree(TreeSpec),
    Lattice(LatticeSpec),
    Custom,
}

/// One violated [`GraphBall`] invariant, as reported by [`GraphBall::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    AsymmetricWeight { x: String, y: String },
    SelfLoop { x: String },
    NegativeWeight { x: String, y: String },
    NonpositiveMeasure { x: String },
    ClosureViolation { x: String, expected: f64, found: usize },
    DisconnectedInterior { reached: usize, interior: usize },
    LayerAdjacency { x: String, y: String },
    CenterLayerMismatch { x: String },
    HaloNotAdjacent { x: String },
    EmptyInterior,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::AsymmetricWeight { x, y } => {
                write!(f, "asymmetric edge weight between {x} and {y}")
            }
            Violation::SelfLoop { x } => write!(f, "self loop at {x}"),
            Violation::NegativeWeight { x, y } => {
                write!(f, "negative edge weight between {x} and {y}")
            }
            Violation::NonpositiveMeasure { x } => write!(f, "nonpositive measure at {x}"),
            Violation::ClosureViolation { x, expected, found } => write!(
                f,
                "interior vertex {x} has incomplete neighborhood: expected degree {expected}, stored {found} edges"
            ),
            Violation::DisconnectedInterior { reached, interior } => write!(
                f,
                "interior not connected: reached {reached} of {interior} vertices from the center"
            ),
            Violation::LayerAdjacency { x, y } => write!(
                f,
                "positive edge between {x} and {y} does not connect consecutive layers"
            ),
            Violation::CenterLayerMismatch { x } => {
                write!(f, "vertex {x} has layer 0 if and only if it is a center vertex")
            }
            Violation::HaloNotAdjacent { x } => {
                write!(f, "halo vertex {x} has no positive edge into the interior")
            }
            Violation::EmptyInterior => write!(f, "interior is empty"),
        }
    }
}

/// Finite truncation of an infinite weighted graph.
#[derive(Debug, Clone)]
pub struct GraphBall {
    family: BallFamily,
    labels: Vec<VertexLabel>,
    mu: Vec<f64>,
    /// Combinatorial distance to the center set in the infinite graph.
    rho: Vec<u32>,
    interior_mask: Vec<bool>,
    interior: Vec<Vertex>,
    halo: Vec<Vertex>,
    center: Vec<Vertex>,
    /// Squared Euclidean norms, lattice balls only.
    euclid2: Option<Vec<u64>>,
    adj_off: Vec<usize>,
    adj_dst: Vec<Vertex>,
    adj_w: Vec<f64>,
}

impl GraphBall {
    /// Assembles a ball from raw parts. `labels` must be strictly sorted;
    /// `edges` lists each unordered pair once and is mirrored internally.
    /// No invariant checking happens here; run [`GraphBall::validate`].
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        family: BallFamily,
        labels: Vec<VertexLabel>,
        mu: Vec<f64>,
        rho: Vec<u32>,
        interior_mask: Vec<bool>,
        center: Vec<Vertex>,
        euclid2: Option<Vec<u64>>,
        edges: &[(Vertex, Vertex, f64)],
    ) -> Result<Self, GraphError> {
        let n = labels.len();
        if mu.len() != n || rho.len() != n || interior_mask.len() != n {
            return Err(GraphError::BadParts("per-vertex arrays disagree in length".into()));
        }
        if let Some(e2) = &euclid2 {
            if e2.len() != n {
                return Err(GraphError::BadParts("euclid2 length mismatch".into()));
            }
        }
        if !labels.windows(2).all(|w| w[0] < w[1]) {
            return Err(GraphError::BadParts("labels must be strictly sorted".into()));
        }
        for &(a, b, _) in edges {
            if a as usize >= n || b as usize >= n {
                return Err(GraphError::BadParts(format!("edge ({a},{b}) out of range")));
            }
        }
        for &c in &center {
            if c as usize >= n {
                return Err(GraphError::BadParts("center index out of range".into()));
            }
        }
        let (adj_off, adj_dst, adj_w) = build_csr(n, edges);
        let mut interior = Vec::new();
        let mut halo = Vec::new();
        for v in 0..n as Vertex {
            if interior_mask[v as usize] {
                interior.push(v);
            } else {
                halo.push(v);
            }
        }
        Ok(GraphBall {
            family,
            labels,
            mu,
            rho,
            interior_mask,
            interior,
            halo,
            center,
            euclid2,
            adj_off,
            adj_dst,
            adj_w,
        })
    }

    pub fn family(&self) -> &BallFamily {
        &self.family
    }

    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }

    /// Interior vertices in ascending index order.
    pub fn interior(&self) -> &[Vertex] {
        &self.interior
    }

    /// Halo (one-step outer boundary) vertices in ascending index order.
    pub fn halo(&self) -> &[Vertex] {
        &self.halo
    }

    pub fn center(&self) -> &[Vertex] {
        &self.center
    }

    pub fn is_interior(&self, v: Vertex) -> bool {
        self.interior_mask[v as usize]
    }

    pub fn label(&self, v: Vertex) -> &VertexLabel {
        &self.labels[v as usize]
    }

    pub fn vertex_id(&self, v: Vertex) -> String {
        self.labels[v as usize].to_string()
    }

    /// Resolves a textual vertex id (`"layer:index"` on trees, `"x1:..:xn"`
    /// on lattices) to the vertex index.
    pub fn vertex_by_id(&self, id: &str) -> Result<Vertex, GraphError> {
        let parts: Result<Vec<i64>, _> = id.split(':').map(|p| p.trim().parse::<i64>()).collect();
        let parts = parts.map_err(|_| GraphError::UnknownVertex(id.to_string()))?;
        let label = match &self.family {
            BallFamily::Tree(_) => {
                if parts.len() != 2 || parts[0] < 0 || parts[1] < 0 {
                    return Err(GraphError::UnknownVertex(id.to_string()));
                }
                VertexLabel::Tree {
                    layer: parts[0] as u32,
                    index: parts[1] as u64,
                }
            }
            BallFamily::Lattice(spec) => {
                if parts.len() != spec.n {
                    return Err(GraphError::UnknownVertex(id.to_string()));
                }
                VertexLabel::Lattice(parts)
            }
            BallFamily::Custom => {
                // try both shapes
                let tree = if parts.len() == 2 && parts[0] >= 0 && parts[1] >= 0 {
                    Some(VertexLabel::Tree {
                        layer: parts[0] as u32,
                        index: parts[1] as u64,
                    })
                } else {
                    None
                };
                if let Some(t) = tree {
                    if let Ok(v) = self.index_of(&t) {
                        return Ok(v);
                    }
                }
                VertexLabel::Lattice(parts)
            }
        };
        self.index_of(&label)
            .map_err(|_| GraphError::UnknownVertex(id.to_string()))
    }

    fn index_of(&self, label: &VertexLabel) -> Result<Vertex, GraphError> {
        self.labels
            .binary_search(label)
            .map(|i| i as Vertex)
            .map_err(|_| GraphError::UnknownVertex(label.to_string()))
    }

    pub fn mu(&self, v: Vertex) -> f64 {
        self.mu[v as usize]
    }

    /// Combinatorial distance `rho(v, center)` in the infinite graph.
    pub fn rho(&self, v: Vertex) -> u32 {
        self.rho[v as usize]
    }

    /// Squared Euclidean norm `|x|^2` of a lattice vertex.
    pub fn euclid_norm2(&self, v: Vertex) -> Option<u64> {
        self.euclid2.as_ref().map(|e| e[v as usize])
    }

    pub fn has_euclidean_metric(&self) -> bool {
        self.euclid2.is_some()
    }

    /// Stored positive-or-zero weighted edges out of `v`, ordered by target.
    pub fn neighbors(&self, v: Vertex) -> impl Iterator<Item = (Vertex, f64)> + '_ {
        let lo = self.adj_off[v as usize];
        let hi = self.adj_off[v as usize + 1];
        self.adj_dst[lo..hi]
            .iter()
            .copied()
            .zip(self.adj_w[lo..hi].iter().copied())
    }

    /// Stored weight of the pair `(x, y)`; zero when no edge is stored.
    pub fn weight(&self, x: Vertex, y: Vertex) -> f64 {
        let lo = self.adj_off[x as usize];
        let hi = self.adj_off[x as usize + 1];
        match self.adj_dst[lo..hi].binary_search(&y) {
            Ok(k) => self.adj_w[lo + k],
            Err(_) => 0.0,
        }
    }

    /// deg(v): sum of stored edge weights at `v`. Complete only for
    /// interior vertices; halo rows hold just the edges into the interior.
    pub fn degree(&self, v: Vertex) -> f64 {
        self.neighbors(v).map(|(_, w)| w).sum()
    }

    /// Deg(v) = deg(v) / mu(v).
    pub fn weighted_degree(&self, v: Vertex) -> f64 {
        self.degree(v) / self.mu(v)
    }

    /// Outer and inner degrees `(D+, D-)` of an interior vertex with layer
    /// `r >= 1`: the mu-normalized edge weight into spheres `r+1` and `r-1`.
    pub fn outer_inner_degree(&self, v: Vertex) -> Result<(f64, f64), GraphError> {
        if !self.is_interior(v) || self.rho(v) == 0 {
            return Err(GraphError::DegreeUndefined(self.vertex_id(v)));
        }
        let r = self.rho(v);
        let mut outward = 0.0;
        let mut inward = 0.0;
        for (y, w) in self.neighbors(v) {
            if self.rho(y) == r + 1 {
                outward += w;
            } else if self.rho(y) + 1 == r {
                inward += w;
            }
        }
        let mu = self.mu(v);
        Ok((outward / mu, inward / mu))
    }

    /// Largest combinatorial layer among interior vertices.
    pub fn max_interior_rho(&self) -> u32 {
        self.interior.iter().map(|&v| self.rho(v)).max().unwrap_or(0)
    }

    /// Vertex counts per combinatorial layer, `0..=max stored layer`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let top = self.rho.iter().copied().max().unwrap_or(0) as usize;
        let mut sizes = vec![0usize; top + 1];
        for &r in &self.rho {
            sizes[r as usize] += 1;
        }
        sizes
    }

    /// Distinct squared norms of interior lattice vertices, ascending.
    pub fn interior_shells(&self) -> Vec<u64> {
        let Some(e2) = &self.euclid2 else {
            return Vec::new();
        };
        let mut shells: Vec<u64> = self.interior.iter().map(|&v| e2[v as usize]).collect();
        shells.sort_unstable();
        shells.dedup();
        shells
    }

    /// Checks every structural invariant and returns the violations found.
    /// An empty list means the ball is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.vertex_count();

        if self.interior.is_empty() {
            out.push(Violation::EmptyInterior);
        }

        for v in 0..n as Vertex {
            if self.mu(v) <= 0.0 {
                out.push(Violation::NonpositiveMeasure { x: self.vertex_id(v) });
            }
            let is_center = self.center.contains(&v);
            if (self.rho(v) == 0) != is_center {
                out.push(Violation::CenterLayerMismatch { x: self.vertex_id(v) });
            }
        }

        // Edge checks on stored pairs: symmetry (bit-exact), sign, loops,
        // and the consecutive-layer property of combinatorial spheres.
        for x in 0..n as Vertex {
            for (y, w) in self.neighbors(x) {
                if x == y && w != 0.0 {
                    out.push(Violation::SelfLoop { x: self.vertex_id(x) });
                    continue;
                }
                if w < 0.0 && x < y {
                    out.push(Violation::NegativeWeight {
                        x: self.vertex_id(x),
                        y: self.vertex_id(y),
                    });
                }
                if x < y && self.weight(y, x) != w {
                    out.push(Violation::AsymmetricWeight {
                        x: self.vertex_id(x),
                        y: self.vertex_id(y),
                    });
                }
                if w > 0.0 && x < y {
                    let (rx, ry) = (self.rho(x), self.rho(y));
                    if rx.abs_diff(ry) != 1 {
                        out.push(Violation::LayerAdjacency {
                            x: self.vertex_id(x),
                            y: self.vertex_id(y),
                        });
                    }
                }
            }
        }

        // Closure: interior vertices must carry their full infinite-graph
        // neighborhood. Checkable whenever the family fixes the degree.
        for &v in &self.interior {
            let expected = match &self.family {
                BallFamily::Tree(spec) => {
                    let r = self.rho(v);
                    if r == 0 {
                        spec.branching.value_f64(0)
                    } else {
                        spec.branching.value_f64(r) + 1.0
                    }
                }
                BallFamily::Lattice(spec) => 2.0 * spec.n as f64,
                BallFamily::Custom => continue,
            };
            let found = self.neighbors(v).filter(|&(_, w)| w > 0.0).count();
            if found as f64 != expected {
                out.push(Violation::ClosureViolation {
                    x: self.vertex_id(v),
                    expected,
                    found,
                });
            }
        }

        for &v in &self.halo {
            let touches_interior = self.neighbors(v).any(|(y, w)| w > 0.0 && self.is_interior(y));
            if !touches_interior {
                out.push(Violation::HaloNotAdjacent { x: self.vertex_id(v) });
            }
        }

        // Connectivity of the interior through positive-weight edges.
        if !self.interior.is_empty() {
            let start = self.center.first().copied().unwrap_or(self.interior[0]);
            let start = if self.is_interior(start) { start } else { self.interior[0] };
            let mut seen = vec![false; n];
            let mut queue = VecDeque::new();
            seen[start as usize] = true;
            queue.push_back(start);
            let mut reached = 1usize;
            while let Some(x) = queue.pop_front() {
                for (y, w) in self.neighbors(x) {
                    if w > 0.0 && self.is_interior(y) && !seen[y as usize] {
                        seen[y as usize] = true;
                        reached += 1;
                        queue.push_back(y);
                    }
                }
            }
            if reached != self.interior.len() {
                out.push(Violation::DisconnectedInterior {
                    reached,
                    interior: self.interior.len(),
                });
            }
        }

        out
    }

    #[cfg(test)]
    pub(crate) fn corrupt_weight_one_direction(&mut self, x: Vertex, y: Vertex, w: f64) {
        let lo = self.adj_off[x as usize];
        let hi = self.adj_off[x as usize + 1];
        let k = self.adj_dst[lo..hi].binary_search(&y).expect("edge exists");
        self.adj_w[lo + k] = w;
    }

    #[cfg(test)]
    pub(crate) fn drop_edge(&mut self, x: Vertex, y: Vertex) {
        self.corrupt_weight_one_direction(x, y, 0.0);
        self.corrupt_weight_one_direction(y, x, 0.0);
    }
}

fn build_csr(n: usize, edges: &[(Vertex, Vertex, f64)]) -> (Vec<usize>, Vec<Vertex>, Vec<f64>) {
    let mut deg = vec![0usize; n];
    for &(a, b, _) in edges {
        deg[a as usize] += 1;
        deg[b as usize] += 1;
    }
    let mut off = vec![0usize; n + 1];
    for i in 0..n {
        off[i + 1] = off[i] + deg[i];
    }
    let mut dst = vec![0 as Vertex; off[n]];
    let mut wts = vec![0.0f64; off[n]];
    let mut cursor = off.clone();
    for &(a, b, w) in edges {
        dst[cursor[a as usize]] = b;
        wts[cursor[a as usize]] = w;
        cursor[a as usize] += 1;
        dst[cursor[b as usize]] = a;
        wts[cursor[b as usize]] = w;
        cursor[b as usize] += 1;
    }
    // sort each row by destination for reproducible iteration
    for i in 0..n {
        let lo = off[i];
        let hi = off[i + 1];
        let mut row: Vec<(Vertex, f64)> = dst[lo..hi].iter().copied().zip(wts[lo..hi].iter().copied()).collect();
        row.sort_by_key(|&(d, _)| d);
        for (k, (d, w)) in row.into_iter().enumerate() {
            dst[lo + k] = d;
            wts[lo + k] = w;
        }
    }
    (off, dst, wts)
}

/// Builds the ball of a spherically symmetric tree: unit weights, unit
/// measure, no intra-sphere edges, sphere sizes `|S_r| = prod b(k)`.
pub fn build_tree_ball(spec: &TreeSpec) -> Result<GraphBall, GraphError> {
    build_tree_ball_with_cap(spec, DEFAULT_VERTEX_CAP)
}

pub fn build_tree_ball_with_cap(spec: &TreeSpec, cap: usize) -> Result<GraphBall, GraphError> {
    let radius = spec.radius;
    // sphere sizes through the halo layer R+1, with overflow treated as a cap hit
    let mut sizes: Vec<u128> = Vec::with_capacity(radius as usize + 2);
    sizes.push(1);
    let mut total: u128 = 1;
    for r in 0..=radius {
        let b = spec.branching.value(r);
        if b == 0 {
            return Err(GraphError::InvalidSpec("branching values must be positive".into()));
        }
        let next = sizes
            .last()
            .unwrap()
            .checked_mul(b as u128)
            .ok_or(GraphError::CapExceeded { needed: u128::MAX, cap })?;
        sizes.push(next);
        total = total
            .checked_add(next)
            .ok_or(GraphError::CapExceeded { needed: u128::MAX, cap })?;
        if total > cap as u128 {
            return Err(GraphError::CapExceeded { needed: total, cap });
        }
    }

    let mut offsets: Vec<u64> = Vec::with_capacity(sizes.len() + 1);
    offsets.push(0);
    for s in &sizes {
        offsets.push(offsets.last().unwrap() + *s as u64);
    }
    let n = *offsets.last().unwrap() as usize;

    let mut labels = Vec::with_capacity(n);
    let mut rho = Vec::with_capacity(n);
    for (layer, &size) in sizes.iter().enumerate() {
        for index in 0..size as u64 {
            labels.push(VertexLabel::Tree { layer: layer as u32, index });
            rho.push(layer as u32);
        }
    }

    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    for r in 0..=radius {
        let b = spec.branching.value(r);
        for i in 0..sizes[r as usize] as u64 {
            let parent = offsets[r as usize] + i;
            for k in 0..b {
                let child = offsets[r as usize + 1] + i * b + k;
                edges.push((parent as Vertex, child as Vertex, 1.0));
            }
        }
    }

    let interior_mask: Vec<bool> = rho.iter().map(|&r| r <= radius).collect();
    GraphBall::from_parts(
        BallFamily::Tree(spec.clone()),
        labels,
        vec![1.0; n],
        rho,
        interior_mask,
        vec![0],
        None,
        &edges,
    )
}

/// Unit steps of `Z^n` around `x`: the `2n` points differing by +-1 in one
/// coordinate.
pub fn lattice_neighbors(x: &[i64]) -> Vec<Vec<i64>> {
    let mut out = Vec::with_capacity(2 * x.len());
    for k in 0..x.len() {
        for step in [-1i64, 1] {
            let mut y = x.to_vec();
            y[k] += step;
            out.push(y);
        }
    }
    out
}

pub fn norm2(x: &[i64]) -> u64 {
    x.iter().map(|&c| (c * c) as u64).sum()
}

/// Builds the Euclidean ball of `Z^n`: interior `{|x| < R}`, halo = outside
/// neighbors of the interior, unit weights, measure `2n`.
pub fn build_lattice_ball(spec: &LatticeSpec) -> Result<GraphBall, GraphError> {
    build_lattice_ball_with_cap(spec, DEFAULT_VERTEX_CAP)
}

pub fn build_lattice_ball_with_cap(spec: &LatticeSpec, cap: usize) -> Result<GraphBall, GraphError> {
    if spec.n == 0 {
        return Err(GraphError::InvalidSpec("lattice dimension must be >= 1".into()));
    }
    if !(spec.radius >= 1.0) || !spec.radius.is_finite() {
        return Err(GraphError::InvalidSpec(format!(
            "lattice radius must be >= 1, got {}",
            spec.radius
        )));
    }
    let r2 = spec.radius * spec.radius;
    let interior_of = |x: &[i64]| (norm2(x) as f64) < r2;

    let m = spec.radius.floor() as i64 + 1;
    let mut labels: Vec<VertexLabel> = Vec::new();
    let mut interior_mask: Vec<bool> = Vec::new();

    // lexicographic sweep of the bounding cube keeps labels sorted
    let mut coords = vec![-m; spec.n];
    'sweep: loop {
        let inside = interior_of(&coords);
        let keep = inside
            || lattice_neighbors(&coords).iter().any(|y| interior_of(y));
        if keep {
            if labels.len() + 1 > cap {
                return Err(GraphError::CapExceeded { needed: labels.len() as u128 + 1, cap });
            }
            labels.push(VertexLabel::Lattice(coords.clone()));
            interior_mask.push(inside);
        }
        // advance odometer, last coordinate fastest
        for k in (0..spec.n).rev() {
            coords[k] += 1;
            if coords[k] <= m {
                continue 'sweep;
            }
            coords[k] = -m;
        }
        break;
    }

    let n = labels.len();
    let coords_of = |v: usize| match &labels[v] {
        VertexLabel::Lattice(c) => c,
        _ => unreachable!(),
    };
    let mut rho = Vec::with_capacity(n);
    let mut euclid2 = Vec::with_capacity(n);
    for v in 0..n {
        let c = coords_of(v);
        rho.push(c.iter().map(|x| x.unsigned_abs() as u32).sum::<u32>());
        euclid2.push(norm2(c));
    }

    let mut edges = Vec::new();
    for v in 0..n {
        if !interior_mask[v] {
            continue;
        }
        let x = coords_of(v).clone();
        for y in lattice_neighbors(&x) {
            let ylabel = VertexLabel::Lattice(y);
            let w = labels
                .binary_search(&ylabel)
                .unwrap_or_else(|_| panic!("neighbor of interior vertex missing from ball"));
            if interior_mask[w] {
                if v < w {
                    edges.push((v as Vertex, w as Vertex, 1.0));
                }
            } else {
                edges.push((v as Vertex, w as Vertex, 1.0));
            }
        }
    }

    let origin = VertexLabel::Lattice(vec![0; spec.n]);
    let center = labels
        .binary_search(&origin)
        .map(|i| vec![i as Vertex])
        .map_err(|_| GraphError::InvalidSpec("origin not contained in the ball".into()))?;

    GraphBall::from_parts(
        BallFamily::Lattice(spec.clone()),
        labels,
        vec![2.0 * spec.n as f64; n],
        rho,
        interior_mask,
        center,
        Some(euclid2),
        &edges,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_layer_sizes_constant_branching() {
        let ball = build_tree_ball(&TreeSpec {
            branching: Branching::Constant { b0: 2 },
            radius: 2,
        })
        .unwrap();
        assert_eq!(ball.layer_sizes(), vec![1, 2, 4, 8]);
        assert_eq!(ball.interior().len(), 7);
        assert_eq!(ball.halo().len(), 8);
        assert!(ball.validate().is_empty());
    }

    #[test]
    fn tree_layer_sizes_power_branching() {
        let ball = build_tree_ball(&TreeSpec {
            branching: Branching::Power { p: 2 },
            radius: 3,
        })
        .unwrap();
        assert_eq!(ball.layer_sizes(), vec![1, 1, 4, 36, 576]);
        assert!(ball.validate().is_empty());
    }

    #[test]
    fn tree_path_graph_degenerate_branching() {
        let ball = build_tree_ball(&TreeSpec {
            branching: Branching::Constant { b0: 1 },
            radius: 5,
        })
        .unwrap();
        assert_eq!(ball.vertex_count(), 7);
        for &v in ball.interior() {
            if ball.rho(v) >= 1 {
                let (dp, dm) = ball.outer_inner_degree(v).unwrap();
                assert_eq!((dp, dm), (1.0, 1.0));
            }
        }
        assert!(ball.validate().is_empty());
    }

    #[test]
    fn tree_cardinality_recursion() {
        for spec in [
            TreeSpec { branching: Branching::Constant { b0: 3 }, radius: 4 },
            TreeSpec { branching: Branching::Power { p: 1 }, radius: 5 },
        ] {
            let ball = build_tree_ball(&spec).unwrap();
            let sizes = ball.layer_sizes();
            for r in 0..sizes.len() - 1 {
                assert_eq!(
                    sizes[r + 1] as u64,
                    spec.branching.value(r as u32) * sizes[r] as u64
                );
            }
        }
    }

    #[test]
    fn tree_outer_inner_degree_matches_branching() {
        let spec = TreeSpec { branching: Branching::Power { p: 2 }, radius: 3 };
        let ball = build_tree_ball(&spec).unwrap();
        for &v in ball.interior() {
            let r = ball.rho(v);
            if r >= 1 {
                let (dp, dm) = ball.outer_inner_degree(v).unwrap();
                assert_eq!(dp, spec.branching.value_f64(r));
                assert_eq!(dm, 1.0);
            }
        }
    }

    #[test]
    fn tree_cap_guard() {
        let err = build_tree_ball_with_cap(
            &TreeSpec { branching: Branching::Constant { b0: 2 }, radius: 50 },
            1000,
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::CapExceeded { .. }));
    }

    #[test]
    fn lattice_one_dimensional_interval() {
        let ball = build_lattice_ball(&LatticeSpec { n: 1, radius: 2.5 }).unwrap();
        let interior: Vec<String> = ball.interior().iter().map(|&v| ball.vertex_id(v)).collect();
        let halo: Vec<String> = ball.halo().iter().map(|&v| ball.vertex_id(v)).collect();
        assert_eq!(interior, vec!["-2", "-1", "0", "1", "2"]);
        assert_eq!(halo, vec!["-3", "3"]);
        assert!(ball.validate().is_empty());
    }

    #[test]
    fn lattice_small_plus_shape() {
        // radius in (1, sqrt(2)] keeps only the origin and its four neighbors
        let ball = build_lattice_ball(&LatticeSpec { n: 2, radius: 1.2 }).unwrap();
        let mut interior: Vec<String> = ball.interior().iter().map(|&v| ball.vertex_id(v)).collect();
        interior.sort();
        assert_eq!(interior, vec!["-1:0", "0:-1", "0:0", "0:1", "1:0"]);
        assert!(ball.validate().is_empty());
    }

    #[test]
    fn lattice_radius_one_and_a_half_includes_diagonals() {
        // |(1,1)| = sqrt(2) < 1.5, so the diagonal points are interior
        let ball = build_lattice_ball(&LatticeSpec { n: 2, radius: 1.5 }).unwrap();
        assert_eq!(ball.interior().len(), 9);
        assert!(ball.vertex_by_id("1:1").is_ok());
        assert!(ball.is_interior(ball.vertex_by_id("1:1").unwrap()));
        assert!(ball.validate().is_empty());
    }

    #[test]
    fn lattice_three_dimensional_degrees() {
        let ball = build_lattice_ball(&LatticeSpec { n: 3, radius: 3.0 }).unwrap();
        for &v in ball.interior() {
            assert_eq!(ball.neighbors(v).count(), 6);
            assert_eq!(ball.mu(v), 6.0);
        }
        assert!(ball.validate().is_empty());
    }

    #[test]
    fn lattice_outer_inner_degree_examples() {
        let ball = build_lattice_ball(&LatticeSpec { n: 2, radius: 3.0 }).unwrap();
        let v = ball.vertex_by_id("1:0").unwrap();
        assert_eq!(ball.outer_inner_degree(v).unwrap(), (0.75, 0.25));

        let line = build_lattice_ball(&LatticeSpec { n: 1, radius: 6.5 }).unwrap();
        let v = line.vertex_by_id("5").unwrap();
        assert_eq!(line.outer_inner_degree(v).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn degree_identity_on_interior() {
        for ball in [
            build_tree_ball(&TreeSpec { branching: Branching::Constant { b0: 3 }, radius: 4 }).unwrap(),
            build_lattice_ball(&LatticeSpec { n: 3, radius: 4.0 }).unwrap(),
        ] {
            for &v in ball.interior() {
                if ball.rho(v) >= 1 {
                    let (dp, dm) = ball.outer_inner_degree(v).unwrap();
                    let rel = ((dp + dm) - ball.weighted_degree(v)).abs()
                        / ball.weighted_degree(v).max(1.0);
                    assert!(rel <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn outer_inner_degree_rejects_halo_and_center() {
        let ball = build_tree_ball(&TreeSpec { branching: Branching::Constant { b0: 2 }, radius: 2 }).unwrap();
        let root = ball.center()[0];
        assert!(ball.outer_inner_degree(root).is_err());
        let halo = ball.halo()[0];
        assert!(ball.outer_inner_degree(halo).is_err());
    }

    #[test]
    fn validate_flags_injected_asymmetry() {
        let mut ball = build_tree_ball(&TreeSpec { branching: Branching::Constant { b0: 2 }, radius: 2 }).unwrap();
        let root = ball.center()[0];
        let child = ball.neighbors(root).next().unwrap().0;
        ball.corrupt_weight_one_direction(root, child, 2.0);
        let violations = ball.validate();
        assert_eq!(
            violations
                .iter()
                .filter(|v| matches!(v, Violation::AsymmetricWeight { .. }))
                .count(),
            1
        );
    }

    #[test]
    fn validate_flags_missing_neighbor() {
        let mut ball = build_lattice_ball(&LatticeSpec { n: 2, radius: 2.5 }).unwrap();
        let x = ball.vertex_by_id("0:0").unwrap();
        let y = ball.vertex_by_id("0:1").unwrap();
        ball.drop_edge(x, y);
        let violations = ball.validate();
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::ClosureViolation { .. })));
    }

    #[test]
    fn layer_adjacency_of_generated_balls() {
        for ball in [
            build_tree_ball(&TreeSpec { branching: Branching::Power { p: 2 }, radius: 3 }).unwrap(),
            build_lattice_ball(&LatticeSpec { n: 2, radius: 4.0 }).unwrap(),
        ] {
            for x in 0..ball.vertex_count() as Vertex {
                for (y, w) in ball.neighbors(x) {
                    if w > 0.0 {
                        assert_eq!(ball.rho(x).abs_diff(ball.rho(y)), 1);
                    }
                }
            }
        }
    }

    #[test]
    fn lattice_sum_identity_integer() {
        // sum over neighbors of |y|^2 - |x|^2 equals 2n, exact in integers
        for n in 1..=3usize {
            let x: Vec<i64> = (0..n).map(|k| 3 * k as i64 - 2).collect();
            let t = norm2(&x) as i64;
            let total: i64 = lattice_neighbors(&x)
                .iter()
                .map(|y| norm2(y) as i64 - t)
                .sum();
            assert_eq!(total, 2 * n as i64);
        }
    }

    #[test]
    fn graph_spec_json_round_trip() {
        let tree: GraphSpec = GraphSpec::from_json(
            r#"{"family":"tree","branching":{"kind":"constant","b0":2},"radius":4}"#,
        )
        .unwrap();
        assert_eq!(
            tree,
            GraphSpec::Tree(TreeSpec { branching: Branching::Constant { b0: 2 }, radius: 4 })
        );
        let lattice: GraphSpec =
            GraphSpec::from_json(r#"{"family":"lattice","n":3,"radius":10.0}"#).unwrap();
        assert_eq!(lattice, GraphSpec::Lattice(LatticeSpec { n: 3, radius: 10.0 }));
        let power: GraphSpec = GraphSpec::from_json(
            r#"{"family":"tree","branching":{"kind":"power","p":2},"radius":3}"#,
        )
        .unwrap();
        let round = serde_json::to_string(&power).unwrap();
        assert_eq!(GraphSpec::from_json(&round).unwrap(), power);
    }

    #[test]
    fn vertex_ids_resolve_back() {
        let ball = build_lattice_ball(&LatticeSpec { n: 3, radius: 2.5 }).unwrap();
        for v in 0..ball.vertex_count() as Vertex {
            assert_eq!(ball.vertex_by_id(&ball.vertex_id(v)).unwrap(), v);
        }
        assert!(ball.vertex_by_id("9:9:9").is_err());
        assert!(ball.vertex_by_id("not-a-vertex").is_err());
    }
}
