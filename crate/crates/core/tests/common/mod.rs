#![allow(dead_code)]

use gccd::piecewise::{Origin, Piece};
use gccd::{ConstraintGraph, Direction, Edge, EdgeId, PiecewiseQuad, Quad, Vertex, VertexId};
use rand::Rng;

/// Random graph with up to `max_states` states, gaps on the 0.01 grid in
/// `[0, 3]` and penalties in `[0, 5]`.
pub fn random_graph(rng: &mut impl Rng, max_states: usize) -> ConstraintGraph {
    let states = rng.random_range(1..=max_states);
    let vertices = (0..states)
        .map(|i| Vertex {
            id: VertexId(i as u32),
            name: format!("S{i}"),
        })
        .collect();
    let n_edges = rng.random_range(0..=2 * states + 1);
    let mut edges: Vec<Edge> = Vec::new();
    for _ in 0..n_edges {
        let edge = Edge {
            id: EdgeId(edges.len() as u32 + 1),
            source: VertexId(rng.random_range(0..states) as u32),
            target: VertexId(rng.random_range(0..states) as u32),
            direction: if rng.random_bool(0.5) { Direction::Up } else { Direction::Down },
            gap: rng.random_range(0..=300) as f64 / 100.0,
            penalty: rng.random_range(0..=500) as f64 / 100.0,
        };
        let duplicate = edges.iter().any(|e| {
            (e.source, e.target, e.direction, e.gap, e.penalty)
                == (edge.source, edge.target, edge.direction, edge.gap, edge.penalty)
        });
        if !duplicate {
            edges.push(edge);
        }
    }
    let subset = |rng: &mut dyn rand::RngCore| {
        let mut s: Vec<VertexId> = (0..states)
            .filter(|_| rng.random_bool(0.6))
            .map(|i| VertexId(i as u32))
            .collect();
        if s.is_empty() {
            s.push(VertexId(rng.random_range(0..states) as u32));
        }
        s
    };
    let start_states = subset(rng);
    let end_states = subset(rng);
    ConstraintGraph {
        vertices,
        edges,
        start_states,
        end_states,
    }
}

pub fn random_signal(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..10.0)).collect()
}

/// Random convex-piece function on `[lo, hi]`, some pieces infeasible.
pub fn random_piecewise(rng: &mut impl Rng, lo: f64, hi: f64) -> PiecewiseQuad {
    let k = rng.random_range(1..=6);
    let mut cuts: Vec<f64> = (1..k).map(|_| rng.random_range(lo..hi)).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| *a - *b < 1e-6);
    let mut bounds = vec![lo];
    bounds.extend(cuts);
    bounds.push(hi);
    let pieces = bounds
        .windows(2)
        .map(|w| {
            let cost = if rng.random_bool(0.15) {
                None
            } else {
                let a = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..2.0) };
                Some(Quad::new(a, rng.random_range(-5.0..5.0), rng.random_range(0.0..10.0)))
            };
            Piece::new(w[0], w[1], cost, Origin::NO_CHANGE)
        })
        .collect();
    PiecewiseQuad::new(pieces).expect("pieces tile the domain")
}

/// Exact minimum of `f` over `[a, b] ∩ domain`, piece by piece.
pub fn exact_min_on(f: &PiecewiseQuad, a: f64, b: f64) -> f64 {
    let mut best = f64::INFINITY;
    for p in f.pieces() {
        let Some(q) = p.cost else { continue };
        let (lo, hi) = (p.lo.max(a), p.hi.min(b));
        if lo > hi {
            continue;
        }
        let mut cand = q.eval(lo).min(q.eval(hi));
        if q.a > 0.0 {
            let v = -q.b / (2.0 * q.a);
            if v > lo && v < hi {
                cand = cand.min(q.eval(v));
            }
        }
        best = best.min(cand);
    }
    best
}

/// Reference for the constrained running minimum.
pub fn reference_min_transform(f: &PiecewiseQuad, dir: Direction, gap: f64, m: f64) -> f64 {
    let (lo, hi) = f.domain();
    match dir {
        Direction::Up => exact_min_on(f, lo, m - gap),
        Direction::Down => exact_min_on(f, m + gap, hi),
    }
}

pub fn grid(lo: f64, hi: f64, points: usize) -> impl Iterator<Item = f64> {
    (0..points).map(move |i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).min(hi))
}

/// `|a − b|` treating two infinities of the same sign as equal.
pub fn gap_between(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}
