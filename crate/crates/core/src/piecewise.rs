//! Piecewise-quadratic functions of a segment mean.
//!
//! The dynamic program keeps, for every state, the optimal cost of the data
//! seen so far as a function of the mean of the segment in progress. Under
//! square loss that function is piecewise quadratic, and every step of the
//! recursion is one of a handful of exact operations on it:
//!
//! * [`PiecewiseQuad::add_point_loss`] adds `(m − y)²` for a new sample,
//! * [`PiecewiseQuad::add_constant`] adds a change penalty,
//! * [`PiecewiseQuad::min_transform`] restricts the previous mean to one side
//!   of the current one (a directional change with a minimum gap),
//! * [`PiecewiseQuad::point_min`] takes the lower envelope of alternatives.
//!
//! Every piece carries an [`Origin`] that records how its values were derived
//! from the previous step, which is what the traceback follows.

use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{Direction, EdgeId};

/// Pieces narrower than this are absorbed into a neighbour.
pub const MIN_PIECE_WIDTH: f64 = 1e-12;

/// `a·m² + b·m + c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quad {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Quad {
    pub const ZERO: Quad = Quad::constant(0.0);

    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Quad { a, b, c }
    }

    pub const fn constant(c: f64) -> Self {
        Quad { a: 0.0, b: 0.0, c }
    }

    /// `(m − y)²`.
    pub fn square_loss(y: f64) -> Self {
        Quad::new(1.0, -2.0 * y, y * y)
    }

    pub fn eval(&self, m: f64) -> f64 {
        (self.a * m + self.b) * m + self.c
    }

    /// Value at `m`, taking limits at infinite arguments.
    fn eval_limit(&self, m: f64) -> f64 {
        if m.is_finite() {
            return self.eval(m);
        }
        let lead = if self.a != 0.0 {
            self.a
        } else if self.b != 0.0 {
            self.b * m.signum()
        } else {
            return self.c;
        };
        lead.signum() * f64::INFINITY
    }

    /// The function `m ↦ self(m − delta)`.
    pub fn shifted(&self, delta: f64) -> Quad {
        Quad::new(
            self.a,
            self.b - 2.0 * self.a * delta,
            (self.a * delta - self.b) * delta + self.c,
        )
    }

    /// The function `m ↦ self(−m)`.
    pub fn reflected(&self) -> Quad {
        Quad::new(self.a, -self.b, self.c)
    }

    fn minus(&self, other: &Quad) -> Quad {
        Quad::new(self.a - other.a, self.b - other.b, self.c - other.c)
    }

    /// Real roots strictly inside `(lo, hi)`, ascending.
    fn roots_between(&self, lo: f64, hi: f64) -> Vec<f64> {
        let Quad { a, b, c } = *self;
        let mut roots = Vec::with_capacity(2);
        if a == 0.0 {
            if b != 0.0 {
                roots.push(-c / b);
            }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let q = -0.5 * (b + b.signum() * disc.sqrt());
                if q != 0.0 {
                    roots.push(q / a);
                    roots.push(c / q);
                } else {
                    // b = 0 and disc = 0, so c = 0: double root at zero.
                    roots.push(0.0);
                }
            }
        }
        roots.retain(|r| r.is_finite() && *r > lo && *r < hi);
        roots.sort_by(f64::total_cmp);
        roots.dedup();
        roots
    }
}

impl fmt::Display for Quad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}·m² + {}·m + {}", self.a, self.b, self.c)
    }
}

/// Where the previous segment's mean sits relative to the current mean `m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PrevMean {
    /// Same mean (no change, or the first sample).
    Same,
    /// Previous mean is `m + offset`.
    Offset(f64),
    /// Previous mean is this fixed value.
    At(f64),
}

impl PrevMean {
    pub fn resolve(self, m: f64) -> f64 {
        match self {
            PrevMean::Same => m,
            PrevMean::Offset(d) => m + d,
            PrevMean::At(x) => x,
        }
    }

    fn reflected(self) -> PrevMean {
        match self {
            PrevMean::Same => PrevMean::Same,
            PrevMean::Offset(d) => PrevMean::Offset(-d),
            PrevMean::At(x) => PrevMean::At(-x),
        }
    }
}

/// A change taken at `position`: the previous segment ends at sample
/// `position` and the next begins at `position + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChangeTag {
    pub edge: EdgeId,
    pub position: usize,
}

/// Back-reference from a piece to the step that produced it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Origin {
    /// `None` means the segment continues unchanged.
    pub change: Option<ChangeTag>,
    pub prev_mean: PrevMean,
}

impl Origin {
    pub const NO_CHANGE: Origin = Origin {
        change: None,
        prev_mean: PrevMean::Same,
    };

    pub fn is_change(&self) -> bool {
        self.change.is_some()
    }
}

impl Default for Origin {
    fn default() -> Self {
        Origin::NO_CHANGE
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    /// `None` marks an infeasible (+∞) piece.
    pub cost: Option<Quad>,
    pub origin: Origin,
}

impl Piece {
    pub fn new(lo: f64, hi: f64, cost: Option<Quad>, origin: Origin) -> Self {
        Piece { lo, hi, cost, origin }
    }

    pub fn is_feasible(&self) -> bool {
        self.cost.is_some()
    }

    pub fn value(&self, m: f64) -> f64 {
        self.cost.map_or(f64::INFINITY, |q| q.eval(m))
    }
}

/// The minimum of a function, see [`PiecewiseQuad::global_min`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Minimum {
    pub cost: f64,
    pub mean: f64,
    pub origin: Origin,
}

/// A function on `[lo, hi]` made of quadratic or infeasible pieces that tile
/// the domain. The domain may be unbounded on either side.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseQuad {
    pieces: Vec<Piece>,
}

/// Accumulates pieces left to right, enforcing exact tiling, dropping
/// splinters and merging neighbours that are the same function.
struct Builder {
    lo: f64,
    pieces: Vec<Piece>,
    pending: Option<Piece>,
}

impl Builder {
    fn new(lo: f64, capacity: usize) -> Self {
        Builder {
            lo,
            pieces: Vec::with_capacity(capacity),
            pending: None,
        }
    }

    fn cursor(&self) -> f64 {
        self.pieces.last().map_or(self.lo, |p| p.hi)
    }

    fn push(&mut self, hi: f64, cost: Option<Quad>, origin: Origin) {
        let lo = self.cursor();
        if !(hi - lo > MIN_PIECE_WIDTH) {
            self.pending = Some(Piece::new(lo, hi, cost, origin));
            return;
        }
        self.pending = None;
        if let Some(last) = self.pieces.last_mut() {
            if last.cost == cost && last.origin == origin {
                last.hi = hi;
                return;
            }
        }
        self.pieces.push(Piece::new(lo, hi, cost, origin));
    }

    fn finish(mut self, hi: f64) -> PiecewiseQuad {
        match self.pieces.last_mut() {
            Some(last) => last.hi = hi,
            None => {
                let p = self
                    .pending
                    .expect("builder finished without any piece");
                self.pieces.push(Piece::new(self.lo, hi, p.cost, p.origin));
            }
        }
        PiecewiseQuad { pieces: self.pieces }
    }
}

/// A point strictly inside `(lo, hi)`, which may be unbounded.
fn interior(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => lo + 0.5 * (hi - lo),
        (false, true) => hi - hi.abs().max(1.0),
        (true, false) => lo + lo.abs().max(1.0),
        (false, false) => 0.0,
    }
}

/// Building block of a running minimum: on `[lo, hi]` the running minimum
/// either follows a quadratic that is non-increasing there, or is flat at the
/// value attained at `at`.
#[derive(Clone, Copy, Debug)]
enum Run {
    Follow(Quad),
    Flat { value: f64, at: f64 },
}

impl PiecewiseQuad {
    /// Builds a function from pieces, checking that they tile a domain.
    pub fn new(pieces: Vec<Piece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::invalid("a piecewise function needs at least one piece"));
        }
        for p in &pieces {
            if p.lo.is_nan() || p.hi.is_nan() || !(p.lo < p.hi) {
                return Err(Error::invalid(format!("piece [{}, {}] is empty", p.lo, p.hi)));
            }
            if let Some(q) = p.cost {
                if !(q.a.is_finite() && q.b.is_finite() && q.c.is_finite()) {
                    return Err(Error::invalid("quadratic coefficients must be finite"));
                }
            }
        }
        for w in pieces.windows(2) {
            if w[0].hi != w[1].lo {
                return Err(Error::invalid(format!(
                    "pieces do not tile: {} != {}",
                    w[0].hi, w[1].lo
                )));
            }
        }
        Ok(PiecewiseQuad { pieces })
    }

    /// A single quadratic on `[lo, hi]`.
    pub fn from_quad(lo: f64, hi: f64, quad: Quad) -> Result<Self> {
        Self::new(vec![Piece::new(lo, hi, Some(quad), Origin::NO_CHANGE)])
    }

    pub fn constant(lo: f64, hi: f64, value: f64) -> Result<Self> {
        Self::from_quad(lo, hi, Quad::constant(value))
    }

    pub fn infeasible(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![Piece::new(lo, hi, None, Origin::NO_CHANGE)])
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.pieces[0].lo, self.pieces[self.pieces.len() - 1].hi)
    }

    pub fn is_feasible_anywhere(&self) -> bool {
        self.pieces.iter().any(Piece::is_feasible)
    }

    /// Whether the pieces tile the domain with strictly increasing bounds.
    pub fn is_tiling(&self) -> bool {
        !self.pieces.is_empty()
            && self.pieces.iter().all(|p| p.lo < p.hi)
            && self.pieces.windows(2).all(|w| w[0].hi == w[1].lo)
    }

    /// Index of the piece that owns `m`. A shared boundary belongs to the
    /// left piece unless only the right one is feasible.
    pub fn piece_index(&self, m: f64) -> Result<usize> {
        let (lo, hi) = self.domain();
        if !(m >= lo && m <= hi) {
            return Err(Error::Domain { mean: m, lo, hi });
        }
        let i = self.pieces.partition_point(|p| p.hi < m);
        let i = i.min(self.pieces.len() - 1);
        let p = &self.pieces[i];
        if m == p.hi && !p.is_feasible() {
            if let Some(next) = self.pieces.get(i + 1) {
                if next.is_feasible() {
                    return Ok(i + 1);
                }
            }
        }
        Ok(i)
    }

    /// The function value at `m`; `+∞` on infeasible pieces.
    pub fn evaluate(&self, m: f64) -> Result<f64> {
        let i = self.piece_index(m)?;
        Ok(self.pieces[i].value(m))
    }

    fn map_feasible(&self, f: impl Fn(Quad) -> Quad) -> PiecewiseQuad {
        PiecewiseQuad {
            pieces: self
                .pieces
                .iter()
                .map(|p| Piece {
                    cost: p.cost.map(&f),
                    ..*p
                })
                .collect(),
        }
    }

    /// Adds the square loss `(m − y)²` of one sample to every feasible piece.
    pub fn add_point_loss(&self, y: f64) -> PiecewiseQuad {
        let loss = Quad::square_loss(y);
        self.map_feasible(|q| Quad::new(q.a + loss.a, q.b + loss.b, q.c + loss.c))
    }

    /// Adds a non-negative constant to every feasible piece.
    pub fn add_constant(&self, k: f64) -> Result<PiecewiseQuad> {
        if !(k.is_finite() && k >= 0.0) {
            return Err(Error::invalid(format!(
                "constant must be finite and non-negative, got {k}"
            )));
        }
        Ok(self.map_feasible(|q| Quad::new(q.a, q.b, q.c + k)))
    }

    /// Replaces every piece's origin.
    pub fn with_origin(&self, origin: Origin) -> PiecewiseQuad {
        PiecewiseQuad {
            pieces: self.pieces.iter().map(|p| Piece { origin, ..*p }).collect(),
        }
    }

    /// Stamps a change on every piece, keeping each piece's previous-mean link.
    pub fn with_change(&self, change: ChangeTag) -> PiecewiseQuad {
        PiecewiseQuad {
            pieces: self
                .pieces
                .iter()
                .map(|p| Piece {
                    origin: Origin {
                        change: Some(change),
                        prev_mean: p.origin.prev_mean,
                    },
                    ..*p
                })
                .collect(),
        }
    }

    /// Pointwise minimum. Where both are equal the piece from `self` wins.
    pub fn point_min(&self, other: &PiecewiseQuad) -> Result<PiecewiseQuad> {
        let (lo, hi) = self.domain();
        let (olo, ohi) = other.domain();
        if lo != olo || hi != ohi {
            return Err(Error::invalid(format!(
                "domains differ: [{lo}, {hi}] vs [{olo}, {ohi}]"
            )));
        }

        let mut out = Builder::new(lo, self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        let mut left = lo;
        while i < self.pieces.len() && j < other.pieces.len() {
            let f = &self.pieces[i];
            let g = &other.pieces[j];
            let right = f.hi.min(g.hi);
            emit_min(&mut out, left, right, f, g);
            if f.hi <= right {
                i += 1;
            }
            if g.hi <= right {
                j += 1;
            }
            left = right;
        }
        Ok(out.finish(hi))
    }

    /// Constrained running minimum for a change along an edge with the given
    /// direction and gap:
    ///
    /// * `Up`:   `result(m) = min { f(m′) : m′ ≤ m − gap }`
    /// * `Down`: `result(m) = min { f(m′) : m′ ≥ m + gap }`
    ///
    /// Where no `m′` in the domain qualifies the result is infeasible. Output
    /// pieces link back to the previous mean: pieces that follow `f` are
    /// `Offset(∓gap)`, flat pieces are `At(argmin)`.
    pub fn min_transform(&self, direction: Direction, gap: f64) -> Result<PiecewiseQuad> {
        if !(gap.is_finite() && gap >= 0.0) {
            return Err(Error::invalid(format!(
                "gap must be finite and non-negative, got {gap}"
            )));
        }
        Ok(match direction {
            Direction::Up => self.min_less(gap),
            Direction::Down => self.reflected().min_less(gap).reflected(),
        })
    }

    fn reflected(&self) -> PiecewiseQuad {
        PiecewiseQuad {
            pieces: self
                .pieces
                .iter()
                .rev()
                .map(|p| Piece {
                    lo: -p.hi,
                    hi: -p.lo,
                    cost: p.cost.map(|q| q.reflected()),
                    origin: Origin {
                        change: p.origin.change,
                        prev_mean: p.origin.prev_mean.reflected(),
                    },
                })
                .collect(),
        }
    }

    /// The running minimum from the left, as `(hi, run)` spans covering the
    /// domain. `None` spans are infeasible.
    fn running_min(&self) -> Vec<(f64, Option<Run>)> {
        let mut spans: Vec<(f64, Option<Run>)> = Vec::with_capacity(self.len() + 2);
        let mut best: Option<(f64, f64)> = None;

        fn flat(spans: &mut Vec<(f64, Option<Run>)>, hi: f64, best: Option<(f64, f64)>) {
            spans.push((hi, best.map(|(value, at)| Run::Flat { value, at })));
        }

        for p in &self.pieces {
            let Some(q) = p.cost else {
                flat(&mut spans, p.hi, best);
                continue;
            };
            for (s, e, run) in local_running_min(q, p.lo, p.hi) {
                match run {
                    Run::Flat { value, at } => {
                        if best.is_none_or(|(b, _)| value < b) {
                            best = Some((value, at));
                        }
                        flat(&mut spans, e, best);
                    }
                    Run::Follow(q) => {
                        let start = q.eval_limit(s);
                        let end = q.eval_limit(e);
                        match best {
                            Some((b, _)) if end >= b => flat(&mut spans, e, best),
                            Some((b, _)) if start > b => {
                                let x = crossing_on_decreasing(q, s, e, b);
                                flat(&mut spans, x, best);
                                spans.push((e, Some(Run::Follow(q))));
                                best = Some((end, e));
                            }
                            _ => {
                                spans.push((e, Some(Run::Follow(q))));
                                best = Some((end, e));
                            }
                        }
                    }
                }
            }
        }
        spans
    }

    fn min_less(&self, gap: f64) -> PiecewiseQuad {
        let (lo, hi) = self.domain();
        let mut out = Builder::new(lo, self.len() + 2);
        let start = lo + gap;
        if !(start < hi) {
            out.push(hi, None, Origin::NO_CHANGE);
            return out.finish(hi);
        }
        if start > lo {
            out.push(start, None, Origin::NO_CHANGE);
        }
        for (span_hi, run) in self.running_min() {
            let shifted_hi = span_hi + gap;
            let (cost, prev_mean) = match run {
                None => (None, PrevMean::Same),
                Some(Run::Follow(q)) => (Some(q.shifted(gap)), PrevMean::Offset(-gap)),
                Some(Run::Flat { value, at }) => (Some(Quad::constant(value)), PrevMean::At(at)),
            };
            let origin = Origin {
                change: None,
                prev_mean,
            };
            if shifted_hi >= hi {
                out.push(hi, cost, origin);
                break;
            }
            out.push(shifted_hi, cost, origin);
        }
        out.finish(hi)
    }

    /// Smallest value, the leftmost mean attaining it, and the origin of the
    /// piece it lies in. At a jump between two pieces the lower one-sided
    /// value counts, so the result is the infimum.
    pub fn global_min(&self) -> Result<Minimum> {
        let mut best: Option<Minimum> = None;
        for p in &self.pieces {
            let Some(q) = p.cost else { continue };
            let mut candidates = [f64::NAN; 3];
            candidates[0] = p.lo;
            if q.a > 0.0 {
                let v = -q.b / (2.0 * q.a);
                if v > p.lo && v < p.hi {
                    candidates[1] = v;
                }
            }
            candidates[2] = p.hi;
            if q.a == 0.0 && q.b == 0.0 && !p.lo.is_finite() {
                candidates[0] = if p.hi.is_finite() { p.hi } else { 0.0 };
            }
            for m in candidates.into_iter().filter(|m| !m.is_nan()) {
                let cost = q.eval_limit(m);
                if best.is_none_or(|b| cost < b.cost) {
                    best = Some(Minimum {
                        cost,
                        mean: m,
                        origin: p.origin,
                    });
                }
            }
        }
        best.ok_or_else(|| Error::Infeasible("function is infeasible everywhere".into()))
    }
}

/// On `[lo, hi]`, the running minimum of a single quadratic from `lo`, split
/// into spans that either follow `q` (where it is non-increasing) or are flat.
fn local_running_min(q: Quad, lo: f64, hi: f64) -> Vec<(f64, f64, Run)> {
    let mut spans = Vec::with_capacity(2);
    if q.a > 0.0 {
        let vertex = (-q.b / (2.0 * q.a)).clamp(lo, hi);
        if vertex > lo {
            spans.push((lo, vertex, Run::Follow(q)));
        }
        if vertex < hi {
            let value = q.eval(vertex);
            spans.push((vertex, hi, Run::Flat { value, at: vertex }));
        }
    } else if q.a < 0.0 {
        // Concave: the minimum so far is min(q(lo), q(x)).
        let vertex = -q.b / (2.0 * q.a);
        let turn = if vertex <= lo { lo } else { (2.0 * vertex - lo).min(hi) };
        if turn > lo {
            let value = q.eval_limit(lo);
            spans.push((lo, turn, Run::Flat { value, at: lo }));
        }
        if turn < hi {
            spans.push((turn, hi, Run::Follow(q)));
        }
    } else if q.b < 0.0 {
        spans.push((lo, hi, Run::Follow(q)));
    } else {
        let at = if lo.is_finite() { lo } else if hi.is_finite() { hi } else { 0.0 };
        spans.push((lo, hi, Run::Flat { value: q.eval_limit(lo), at }));
    }
    spans
}

/// The point in `[s, e]` where a quadratic that is non-increasing there falls
/// to `level`. Requires `q(s) > level > q(e)`.
fn crossing_on_decreasing(q: Quad, s: f64, e: f64, level: f64) -> f64 {
    let shifted = Quad::new(q.a, q.b, q.c - level);
    let x = if q.a == 0.0 {
        -shifted.c / shifted.b
    } else {
        let disc = (shifted.b * shifted.b - 4.0 * shifted.a * shifted.c).max(0.0);
        // Non-increasing branch: left root when convex, right root when
        // concave; the sign of `a` flips the same expression accordingly.
        (-shifted.b - disc.sqrt()) / (2.0 * shifted.a)
    };
    if x.is_nan() {
        return s;
    }
    x.clamp(s, e)
}

fn emit_min(out: &mut Builder, lo: f64, hi: f64, f: &Piece, g: &Piece) {
    match (f.cost, g.cost) {
        (None, None) | (Some(_), None) => out.push(hi, f.cost, f.origin),
        (None, Some(_)) => out.push(hi, g.cost, g.origin),
        (Some(qf), Some(qg)) => {
            let d = qf.minus(&qg);
            let scale = qf.b.abs() + qg.b.abs() + qf.c.abs() + qg.c.abs();
            if d.a == 0.0 && d.b.abs() + d.c.abs() <= 1e-14 * scale {
                out.push(hi, f.cost, f.origin);
                return;
            }
            let mut left = lo;
            for cut in d.roots_between(lo, hi).into_iter().chain([hi]) {
                let x = interior(left, cut);
                let diff = d.eval(x);
                let tol = 1e-13 * (qf.eval(x).abs() + qg.eval(x).abs());
                if diff <= tol {
                    out.push(cut, f.cost, f.origin);
                } else {
                    out.push(cut, g.cost, g.origin);
                }
                left = cut;
            }
        }
    }
}
