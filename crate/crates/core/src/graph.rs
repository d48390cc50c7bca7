//! Constraint graphs: which states a segment may take and which changes are
//! allowed between them.
//!
//! Graphs are usually written as small text files:
//!
//! ```text
//! # two-state graph: baseline and R wave
//! state B
//! state R
//! edge B R up gap=0.5 penalty=2
//! edge R B down gap=0.5 penalty=0
//! start B R
//! end B R
//! ```
//!
//! `state` lines declare vertices in id order. `edge` lines declare edges with
//! ids `1, 2, ...` in file order (id 0 means "no change" and is never used).
//! `start` and `end` restrict the first and last state; both default to every
//! state.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexId(pub u32);

impl VertexId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Edge identifier. Zero is reserved for "no change".
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub u32);

impl EdgeId {
    pub const NO_CHANGE: EdgeId = EdgeId(0);
}

/// Direction of the mean change along an edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// The next mean is at least `gap` above the previous one.
    Up,
    /// The next mean is at least `gap` below the previous one.
    Down,
}

impl Direction {
    /// The sign `δ` in `g(before, after) = δ·(before − after) + gap`.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Up => 1.0,
            Direction::Down => -1.0,
        }
    }

    /// Value of the constraint function; the change is allowed when it is `≤ 0`.
    pub fn constraint(self, gap: f64, before: f64, after: f64) -> f64 {
        self.sign() * (before - after) + gap
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Up => "up",
            Direction::Down => "down",
        })
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            other => Err(format!("expected `up` or `down`, found `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: VertexId,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub source: VertexId,
    pub target: VertexId,
    pub direction: Direction,
    /// Minimum magnitude of the change, in signal units.
    pub gap: f64,
    pub penalty: f64,
}

impl Edge {
    /// Whether moving from mean `before` to mean `after` along this edge is
    /// allowed, up to `tol`.
    pub fn admits(&self, before: f64, after: f64, tol: f64) -> bool {
        self.direction.constraint(self.gap, before, after) <= tol
    }
}

/// A directed graph of states. Edges may form cycles and self-loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    /// States allowed for the first sample, sorted.
    pub start_states: Vec<VertexId>,
    /// States allowed for the last sample, sorted.
    pub end_states: Vec<VertexId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            message: message.into(),
        }
    }

    fn warning(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

impl ConstraintGraph {
    pub fn vertex(&self, id: VertexId) -> &Vertex {
        &self.vertices[id.index()]
    }

    pub fn vertex_by_name(&self, name: &str) -> Option<&Vertex> {
        self.vertices.iter().find(|v| v.name == name)
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.iter().find(|e| e.id == id)
    }

    /// Edges entering `target`, in id order.
    pub fn incoming(&self, target: VertexId) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.target == target)
    }

    pub fn max_gap(&self) -> f64 {
        self.edges.iter().map(|e| e.gap).fold(0.0, f64::max)
    }

    /// Multiplies every edge penalty by `factor`.
    pub fn scale_penalties(&self, factor: f64) -> ConstraintGraph {
        let mut g = self.clone();
        for e in &mut g.edges {
            e.penalty *= factor;
        }
        g
    }

    /// Checks the graph. Errors make the graph unusable; warnings flag states
    /// that can never appear in a segmentation.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let n = self.vertices.len();
        if n == 0 {
            out.push(Diagnostic::error("graph has no states"));
        }

        let mut names = BTreeSet::new();
        for (i, v) in self.vertices.iter().enumerate() {
            if v.id.index() != i {
                out.push(Diagnostic::error(format!(
                    "state `{}` has id {} but is declared at position {i}",
                    v.name, v.id.0
                )));
            }
            if !names.insert(v.name.as_str()) {
                out.push(Diagnostic::error(format!("duplicate state `{}`", v.name)));
            }
        }

        let mut ids = BTreeSet::new();
        for e in &self.edges {
            if e.id == EdgeId::NO_CHANGE {
                out.push(Diagnostic::error(
                    "edge id 0 is reserved for \"no change\"".to_string(),
                ));
            }
            if !ids.insert(e.id) {
                out.push(Diagnostic::error(format!("duplicate edge id {}", e.id.0)));
            }
            for (role, v) in [("source", e.source), ("target", e.target)] {
                if v.index() >= n {
                    out.push(Diagnostic::error(format!(
                        "edge {} {role} refers to missing state id {}",
                        e.id.0, v.0
                    )));
                }
            }
            if !(e.gap.is_finite() && e.gap >= 0.0) {
                out.push(Diagnostic::error(format!(
                    "edge {} has invalid gap {}",
                    e.id.0, e.gap
                )));
            }
            if !(e.penalty.is_finite() && e.penalty >= 0.0) {
                out.push(Diagnostic::error(format!(
                    "edge {} has invalid penalty {}",
                    e.id.0, e.penalty
                )));
            }
        }

        for (label, set) in [("start", &self.start_states), ("end", &self.end_states)] {
            if set.is_empty() {
                out.push(Diagnostic::error(format!("{label} states are empty")));
            }
            for v in set {
                if v.index() >= n {
                    out.push(Diagnostic::error(format!(
                        "{label} state id {} does not exist",
                        v.0
                    )));
                }
            }
        }

        if out.iter().any(|d| d.severity == Severity::Error) {
            return out;
        }

        let mut reached = vec![false; n];
        let mut queue: VecDeque<VertexId> = self.start_states.iter().copied().collect();
        for v in &self.start_states {
            reached[v.index()] = true;
        }
        while let Some(v) = queue.pop_front() {
            for e in self.edges.iter().filter(|e| e.source == v) {
                if !reached[e.target.index()] {
                    reached[e.target.index()] = true;
                    queue.push_back(e.target);
                }
            }
        }
        for v in &self.vertices {
            if !reached[v.id.index()] {
                out.push(Diagnostic::warning(format!(
                    "state `{}` is unreachable from the start states",
                    v.name
                )));
            }
            let leaves = self
                .edges
                .iter()
                .any(|e| e.source == v.id && e.target != v.id);
            if !leaves && !self.end_states.contains(&v.id) {
                out.push(Diagnostic::warning(format!(
                    "state `{}` has no outgoing edge and is not an end state",
                    v.name
                )));
            }
        }
        out
    }

    pub fn has_errors(&self) -> bool {
        self.validate()
            .iter()
            .any(|d| d.severity == Severity::Error)
    }

    /// Renders the graph in the text format accepted by [`parse_graph`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            out.push_str(&format!("state {}\n", v.name));
        }
        let mut edges: Vec<&Edge> = self.edges.iter().collect();
        edges.sort_by_key(|e| e.id);
        for e in edges {
            out.push_str(&format!(
                "edge {} {} {} gap={} penalty={}\n",
                self.vertex(e.source).name,
                self.vertex(e.target).name,
                e.direction,
                e.gap,
                e.penalty
            ));
        }
        let all: Vec<VertexId> = self.vertices.iter().map(|v| v.id).collect();
        for (keyword, set) in [("start", &self.start_states), ("end", &self.end_states)] {
            if *set != all {
                let names: Vec<&str> = set.iter().map(|v| self.vertex(*v).name.as_str()).collect();
                out.push_str(&format!("{keyword} {}\n", names.join(" ")));
            }
        }
        out
    }
}

impl fmt::Display for ConstraintGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for ConstraintGraph {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_graph(s)
    }
}

fn parse_number(line: usize, key: &str, token: &str) -> Result<f64> {
    let value = token
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| Error::parse(line, format!("expected `{key}=<number>`, found `{token}`")))?;
    let x: f64 = value
        .parse()
        .map_err(|_| Error::parse(line, format!("`{value}` is not a number")))?;
    if !x.is_finite() {
        return Err(Error::parse(line, format!("{key} must be finite")));
    }
    if x < 0.0 {
        return Err(Error::parse(line, format!("{key} must be non-negative, found {x}")));
    }
    Ok(x)
}

/// Parses the line-oriented graph format described in the module docs.
pub fn parse_graph(text: &str) -> Result<ConstraintGraph> {
    let mut vertices: Vec<Vertex> = Vec::new();
    let mut by_name: BTreeMap<String, VertexId> = BTreeMap::new();
    let mut edges: Vec<Edge> = Vec::new();
    let mut start: Option<BTreeSet<VertexId>> = None;
    let mut end: Option<BTreeSet<VertexId>> = None;
    let mut line_count = 0;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        line_count = line;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let lookup = |name: &str| {
            by_name
                .get(name)
                .copied()
                .ok_or_else(|| Error::parse(line, format!("unknown state `{name}`")))
        };
        match tokens[0] {
            "state" => {
                let [_, name] = tokens[..] else {
                    return Err(Error::parse(line, "expected `state <NAME>`"));
                };
                if by_name.contains_key(name) {
                    return Err(Error::parse(line, format!("state `{name}` declared twice")));
                }
                let id = VertexId(vertices.len() as u32);
                by_name.insert(name.to_string(), id);
                vertices.push(Vertex {
                    id,
                    name: name.to_string(),
                });
            }
            "edge" => {
                if tokens.len() != 6 {
                    return Err(Error::parse(
                        line,
                        "expected `edge <SRC> <DST> <up|down> gap=<x> penalty=<x>`",
                    ));
                }
                let source = lookup(tokens[1])?;
                let target = lookup(tokens[2])?;
                let direction: Direction =
                    tokens[3].parse().map_err(|m: String| Error::parse(line, m))?;
                let (gap_tok, pen_tok) = if tokens[4].starts_with("gap=") {
                    (tokens[4], tokens[5])
                } else {
                    (tokens[5], tokens[4])
                };
                let gap = parse_number(line, "gap", gap_tok)?;
                let penalty = parse_number(line, "penalty", pen_tok)?;
                let duplicate = edges.iter().any(|e| {
                    e.source == source
                        && e.target == target
                        && e.direction == direction
                        && e.gap == gap
                        && e.penalty == penalty
                });
                if duplicate {
                    return Err(Error::parse(line, "duplicate edge"));
                }
                edges.push(Edge {
                    id: EdgeId(edges.len() as u32 + 1),
                    source,
                    target,
                    direction,
                    gap,
                    penalty,
                });
            }
            keyword @ ("start" | "end") => {
                if tokens.len() < 2 {
                    return Err(Error::parse(line, format!("`{keyword}` needs at least one state")));
                }
                let set = if keyword == "start" { &mut start } else { &mut end };
                let set = set.get_or_insert_with(BTreeSet::new);
                for name in &tokens[1..] {
                    set.insert(lookup(name)?);
                }
            }
            other => {
                return Err(Error::parse(line, format!("unknown directive `{other}`")));
            }
        }
    }

    if vertices.is_empty() {
        return Err(Error::parse(line_count.max(1), "graph declares no states"));
    }
    let all: Vec<VertexId> = vertices.iter().map(|v| v.id).collect();
    let graph = ConstraintGraph {
        vertices,
        edges,
        start_states: start.map_or_else(|| all.clone(), |s| s.into_iter().collect()),
        end_states: end.map_or_else(|| all.clone(), |s| s.into_iter().collect()),
    };
    if let Some(d) = graph
        .validate()
        .into_iter()
        .find(|d| d.severity == Severity::Error)
    {
        return Err(Error::parse(line_count.max(1), d.message));
    }
    Ok(graph)
}

/// ECG waveforms that a template graph can model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Wave {
    P,
    Q,
    R,
    S,
    T,
}

impl Wave {
    pub const ALL: [Wave; 5] = [Wave::P, Wave::Q, Wave::R, Wave::S, Wave::T];

    /// Polarity relative to the isoelectric baseline.
    pub fn polarity(self) -> Direction {
        match self {
            Wave::P | Wave::R | Wave::T => Direction::Up,
            Wave::Q | Wave::S => Direction::Down,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Wave::P => "P",
            Wave::Q => "Q",
            Wave::R => "R",
            Wave::S => "S",
            Wave::T => "T",
        }
    }

    /// Parses a set such as `"PQRST"` or `"R"`.
    pub fn parse_set(s: &str) -> Result<BTreeSet<Wave>> {
        s.chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .map(|c| match c.to_ascii_uppercase() {
                'P' => Ok(Wave::P),
                'Q' => Ok(Wave::Q),
                'R' => Ok(Wave::R),
                'S' => Ok(Wave::S),
                'T' => Ok(Wave::T),
                other => Err(Error::invalid(format!("unknown waveform `{other}`"))),
            })
            .collect()
    }
}

/// Minimum jump size for the edges around each waveform.
///
/// The gap of a waveform applies to the edge entering it and to the edge
/// returning from it to a baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct GapTable {
    pub default: f64,
    pub per_wave: BTreeMap<Wave, f64>,
}

impl GapTable {
    pub fn uniform(gap: f64) -> Self {
        GapTable {
            default: gap,
            per_wave: BTreeMap::new(),
        }
    }

    pub fn with(mut self, wave: Wave, gap: f64) -> Self {
        self.per_wave.insert(wave, gap);
        self
    }

    pub fn gap(&self, wave: Wave) -> f64 {
        self.per_wave.get(&wave).copied().unwrap_or(self.default)
    }
}

#[derive(Clone, Copy)]
enum Node {
    Baseline,
    Wave(Wave),
}

/// Builds a cyclic ECG graph visiting the requested waveforms in
/// physiological order, with isoelectric baselines between the P wave, the
/// QRS complex and the T wave.
///
/// With every waveform the cycle is `B1 → P → B2 → Q → R → S → B3 → T → B1`.
/// Missing waveforms drop out and adjacent baselines merge; a lone baseline
/// is named `B`. Edges entering a waveform cost `penalty`, edges returning to
/// a baseline are free.
pub fn ecg_template(waves: &BTreeSet<Wave>, gaps: &GapTable, penalty: f64) -> Result<ConstraintGraph> {
    if !waves.contains(&Wave::R) {
        return Err(Error::invalid("an ECG template needs the R wave"));
    }
    if !(penalty.is_finite() && penalty >= 0.0) {
        return Err(Error::invalid(format!("penalty must be finite and non-negative, got {penalty}")));
    }
    for &w in waves {
        let g = gaps.gap(w);
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::invalid(format!(
                "gap for the {} wave must be positive, got {g}",
                w.name()
            )));
        }
    }

    let has = |w| waves.contains(&w);
    let mut cycle = vec![Node::Baseline];
    if has(Wave::P) {
        cycle.extend([Node::Wave(Wave::P), Node::Baseline]);
    }
    if has(Wave::Q) {
        cycle.push(Node::Wave(Wave::Q));
    }
    cycle.push(Node::Wave(Wave::R));
    if has(Wave::S) {
        cycle.push(Node::Wave(Wave::S));
    }
    if has(Wave::T) {
        cycle.extend([Node::Baseline, Node::Wave(Wave::T)]);
    }

    let baselines = cycle.iter().filter(|n| matches!(n, Node::Baseline)).count();
    let mut seen = 0;
    let vertices: Vec<Vertex> = cycle
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let name = match node {
                Node::Wave(w) => w.name().to_string(),
                Node::Baseline if baselines == 1 => "B".to_string(),
                Node::Baseline => {
                    seen += 1;
                    format!("B{seen}")
                }
            };
            Vertex {
                id: VertexId(i as u32),
                name,
            }
        })
        .collect();

    let edges = (0..cycle.len())
        .map(|i| {
            let j = (i + 1) % cycle.len();
            let (direction, gap, cost) = match (cycle[i], cycle[j]) {
                (_, Node::Wave(w)) => (w.polarity(), gaps.gap(w), penalty),
                (Node::Wave(w), Node::Baseline) => (w.polarity().opposite(), gaps.gap(w), 0.0),
                (Node::Baseline, Node::Baseline) => unreachable!("baselines never neighbour"),
            };
            Edge {
                id: EdgeId(i as u32 + 1),
                source: VertexId(i as u32),
                target: VertexId(j as u32),
                direction,
                gap,
                penalty: cost,
            }
        })
        .collect();

    let all: Vec<VertexId> = vertices.iter().map(|v| v.id).collect();
    Ok(ConstraintGraph {
        vertices,
        edges,
        start_states: all.clone(),
        end_states: all,
    })
}
