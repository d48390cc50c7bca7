//! The constrained changepoint dynamic program.
//!
//! For every state `v` and time `t` the solver keeps `C[v,t](m)`, the best
//! cost of `y[1..=t]` given that sample `t` is in state `v` with segment mean
//! `m`:
//!
//! ```text
//! C[v,1](m) = (m − y1)²                         if v is a start state, else +∞
//! C[v,t](m) = (m − yt)² + min( C[v,t−1](m),
//!                              min over edges e: u → v of
//!                                  λe + min { C[u,t−1](m′) : m′ allowed before m along e } )
//! ```
//!
//! The optimum is the smallest `C[v,N]` minimum over end states. Each cost
//! function is a [`PiecewiseQuad`] on the whole real line; pieces that come
//! from a change are kept in a compact trace table so the segmentation can be
//! read back without storing every function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ConstraintGraph, Edge, EdgeId, VertexId};
use crate::piecewise::{ChangeTag, PiecewiseQuad, PrevMean, Quad};

/// Tolerance used when checking a change against its edge constraint.
pub const CONSTRAINT_TOL: f64 = 1e-9;

/// A run of samples `start..=end` (1-based) sharing one state and one mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub state: VertexId,
    pub mean: f64,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

/// A change between sample `position` and `position + 1` along `edge`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Change {
    pub position: usize,
    pub edge: EdgeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    pub changes: Vec<Change>,
    pub total_cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct TraceEntry {
    lo: f64,
    hi: f64,
    edge: EdgeId,
    source: VertexId,
    prev_mean: PrevMean,
}

/// Change pieces of every `C[v,t]`, `t ≥ 2`, stored back to back.
struct Trace {
    states: usize,
    entries: Vec<TraceEntry>,
    offsets: Vec<usize>,
}

impl Trace {
    fn new(states: usize, steps: usize) -> Self {
        let mut offsets = Vec::with_capacity(states * steps + 1);
        offsets.push(0);
        Trace {
            states,
            entries: Vec::with_capacity(states * steps),
            offsets,
        }
    }

    fn record(&mut self, f: &PiecewiseQuad, graph: &ConstraintGraph) {
        for p in f.pieces() {
            if let Some(tag) = p.origin.change {
                let source = graph
                    .edge(tag.edge)
                    .expect("trace refers to a graph edge")
                    .source;
                self.entries.push(TraceEntry {
                    lo: p.lo,
                    hi: p.hi,
                    edge: tag.edge,
                    source,
                    prev_mean: p.origin.prev_mean,
                });
            }
        }
        self.offsets.push(self.entries.len());
    }

    /// The change piece of `C[v,t]` containing `m`, if any.
    fn lookup(&self, v: VertexId, t: usize, m: f64) -> Option<&TraceEntry> {
        let slot = (t - 2) * self.states + v.index();
        let slice = &self.entries[self.offsets[slot]..self.offsets[slot + 1]];
        let i = slice.partition_point(|e| e.hi < m);
        slice.get(i).filter(|e| e.lo <= m)
    }
}

fn check_signal(signal: &[f64]) -> Result<()> {
    if signal.is_empty() {
        return Err(Error::invalid("signal is empty"));
    }
    if let Some(i) = signal.iter().position(|y| !y.is_finite()) {
        return Err(Error::invalid(format!("sample {} is not finite", i + 1)));
    }
    Ok(())
}

fn check_graph(graph: &ConstraintGraph) -> Result<()> {
    if let Some(d) = graph
        .validate()
        .into_iter()
        .find(|d| d.severity == crate::graph::Severity::Error)
    {
        return Err(Error::invalid(format!("invalid graph: {}", d.message)));
    }
    Ok(())
}

/// Finds the globally optimal constrained segmentation of `signal`.
///
/// Ties are resolved deterministically: staying in a segment beats a change
/// of equal cost, a lower edge id beats a higher one, and among end states the
/// lower vertex id wins.
pub fn solve(signal: &[f64], graph: &ConstraintGraph) -> Result<Segmentation> {
    check_signal(signal)?;
    check_graph(graph)?;

    let n = signal.len();
    let states = graph.vertices.len();
    let (lo, hi) = (f64::NEG_INFINITY, f64::INFINITY);

    let mut incoming: Vec<Vec<&Edge>> = vec![Vec::new(); states];
    for e in &graph.edges {
        incoming[e.target.index()].push(e);
    }
    for list in &mut incoming {
        list.sort_by_key(|e| e.id);
    }

    let first = PiecewiseQuad::from_quad(lo, hi, Quad::square_loss(signal[0]))?;
    let blocked = PiecewiseQuad::infeasible(lo, hi)?;
    let mut costs: Vec<PiecewiseQuad> = (0..states)
        .map(|v| {
            if graph.start_states.contains(&VertexId(v as u32)) {
                first.clone()
            } else {
                blocked.clone()
            }
        })
        .collect();

    let mut trace = Trace::new(states, n.saturating_sub(1));
    for t in 2..=n {
        let y = signal[t - 1];
        let mut next = Vec::with_capacity(states);
        for v in 0..states {
            let mut entering: Option<PiecewiseQuad> = None;
            for e in &incoming[v] {
                let source = &costs[e.source.index()];
                if !source.is_feasible_anywhere() {
                    continue;
                }
                let candidate = source
                    .min_transform(e.direction, e.gap)?
                    .add_constant(e.penalty)?
                    .with_change(ChangeTag {
                        edge: e.id,
                        position: t - 1,
                    });
                entering = Some(match entering {
                    None => candidate,
                    Some(acc) => acc.point_min(&candidate)?,
                });
            }
            let stay = costs[v].with_origin(Default::default());
            let combined = match entering {
                Some(change) => stay.point_min(&change)?,
                None => stay,
            };
            debug_assert!(combined.is_tiling());
            trace.record(&combined, graph);
            next.push(combined.add_point_loss(y));
        }
        costs = next;
    }

    let mut best: Option<(VertexId, f64, f64)> = None;
    for &v in &graph.end_states {
        let f = &costs[v.index()];
        if !f.is_feasible_anywhere() {
            continue;
        }
        let min = f.global_min()?;
        if best.is_none_or(|(_, cost, _)| min.cost < cost) {
            best = Some((v, min.cost, min.mean));
        }
    }
    let Some((mut state, total_cost, mut mean)) = best else {
        return Err(Error::Infeasible(format!(
            "no end state is reachable after {n} samples"
        )));
    };

    let mut segments = Vec::new();
    let mut changes = Vec::new();
    let mut end = n;
    for t in (2..=n).rev() {
        if let Some(entry) = trace.lookup(state, t, mean) {
            segments.push(Segment {
                start: t,
                end,
                state,
                mean,
            });
            changes.push(Change {
                position: t - 1,
                edge: entry.edge,
            });
            mean = entry.prev_mean.resolve(mean);
            state = entry.source;
            end = t - 1;
        }
    }
    segments.push(Segment {
        start: 1,
        end,
        state,
        mean,
    });
    segments.reverse();
    changes.reverse();
    for s in &mut segments {
        s.mean += 0.0; // no negative zero in output
    }

    Ok(Segmentation {
        segments,
        changes,
        total_cost,
    })
}

/// Objective value of a segmentation, recomputed from scratch, together with
/// whether it respects the graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostCheck {
    pub cost: f64,
    pub feasible: bool,
}

fn check_structure(seg: &Segmentation, n: usize) -> Result<()> {
    let Some(first) = seg.segments.first() else {
        return Err(Error::invalid("segmentation has no segments"));
    };
    if first.start != 1 {
        return Err(Error::invalid("first segment must start at sample 1"));
    }
    for s in &seg.segments {
        if s.start > s.end {
            return Err(Error::invalid(format!("segment {}..{} is empty", s.start, s.end)));
        }
    }
    for w in seg.segments.windows(2) {
        if w[1].start != w[0].end + 1 {
            return Err(Error::invalid(format!(
                "segments {}..{} and {}..{} do not touch",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
    }
    let last = seg.segments[seg.segments.len() - 1].end;
    if last != n {
        return Err(Error::invalid(format!(
            "segments cover {last} samples, signal has {n}"
        )));
    }
    if seg.changes.len() + 1 != seg.segments.len() {
        return Err(Error::invalid("need exactly one change between consecutive segments"));
    }
    for (c, s) in seg.changes.iter().zip(&seg.segments) {
        if c.position != s.end {
            return Err(Error::invalid(format!(
                "change at {} does not sit at segment end {}",
                c.position, s.end
            )));
        }
    }
    Ok(())
}

/// Recomputes squared error plus penalties and checks every change against
/// its edge (states, direction and gap) and the start/end states.
pub fn cost_of(seg: &Segmentation, signal: &[f64], graph: &ConstraintGraph) -> Result<CostCheck> {
    check_structure(seg, signal.len())?;

    let mut cost = 0.0;
    for s in &seg.segments {
        cost += signal[s.start - 1..s.end]
            .iter()
            .map(|y| (y - s.mean) * (y - s.mean))
            .sum::<f64>();
    }

    let states = graph.vertices.len();
    let mut feasible = seg.segments.iter().all(|s| s.state.index() < states)
        && graph.start_states.contains(&seg.segments[0].state)
        && graph
            .end_states
            .contains(&seg.segments[seg.segments.len() - 1].state);
    for (k, c) in seg.changes.iter().enumerate() {
        let (before, after) = (&seg.segments[k], &seg.segments[k + 1]);
        match graph.edge(c.edge) {
            Some(e) => {
                cost += e.penalty;
                feasible &= e.source == before.state
                    && e.target == after.state
                    && e.admits(before.mean, after.mean, CONSTRAINT_TOL);
            }
            None => feasible = false,
        }
    }
    Ok(CostCheck { cost, feasible })
}

/// Expands a segmentation into one state per sample.
pub fn decode_states(seg: &Segmentation, n: usize) -> Result<Vec<VertexId>> {
    check_structure(seg, n)?;
    let mut out = Vec::with_capacity(n);
    for s in &seg.segments {
        out.extend(std::iter::repeat_n(s.state, s.len()));
    }
    Ok(out)
}

impl Segmentation {
    pub fn change_count(&self) -> usize {
        self.changes.len()
    }

    /// The fitted mean of every sample.
    pub fn means_per_sample(&self) -> Vec<f64> {
        self.segments
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.mean, s.len()))
            .collect()
    }

    pub fn to_document(&self, graph: &ConstraintGraph) -> SegmentationDocument {
        SegmentationDocument {
            segments: self
                .segments
                .iter()
                .map(|s| SegmentRecord {
                    start: s.start,
                    end: s.end,
                    state: graph.vertex(s.state).name.clone(),
                    mean: s.mean,
                })
                .collect(),
            changes: self
                .changes
                .iter()
                .map(|c| ChangeRecord {
                    position: c.position,
                    edge: c.edge.0,
                })
                .collect(),
            total_cost: self.total_cost,
        }
    }
}

/// Serialisable form of a [`Segmentation`] with states by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationDocument {
    pub segments: Vec<SegmentRecord>,
    pub changes: Vec<ChangeRecord>,
    pub total_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub start: usize,
    pub end: usize,
    pub state: String,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub position: usize,
    pub edge: u32,
}

impl SegmentationDocument {
    /// Resolves state names against `graph`.
    pub fn to_segmentation(&self, graph: &ConstraintGraph) -> Result<Segmentation> {
        let segments = self
            .segments
            .iter()
            .map(|s| {
                let v = graph
                    .vertex_by_name(&s.state)
                    .ok_or_else(|| Error::invalid(format!("unknown state `{}`", s.state)))?;
                Ok(Segment {
                    start: s.start,
                    end: s.end,
                    state: v.id,
                    mean: s.mean,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Segmentation {
            segments,
            changes: self
                .changes
                .iter()
                .map(|c| Change {
                    position: c.position,
                    edge: EdgeId(c.edge),
                })
                .collect(),
            total_cost: self.total_cost,
        })
    }
}
