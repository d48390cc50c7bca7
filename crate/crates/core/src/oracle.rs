//! Brute-force reference solver for tiny instances.
//!
//! Means are restricted to the grid `{k·step}` and the problem is solved
//! exactly over that grid by exhaustive dynamic programming on
//! `(time, state, grid point)`. Nothing here touches the piecewise engine, so
//! the two solvers can check each other.
//!
//! The returned cost is the cost of a feasible segmentation and therefore
//! never below the true optimum. When every gap is a multiple of the step,
//! rounding the true optimum's means to the nearest grid point keeps it
//! feasible, which bounds how far above the optimum the grid answer can be;
//! that bound is reported as [`OracleSolution::grid_bound`].

use crate::error::{Error, Result};
use crate::graph::{ConstraintGraph, Direction, VertexId};
use crate::solver::{Change, Segment, Segmentation};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleConfig {
    pub mean_grid_step: f64,
    pub max_n: usize,
    pub max_states: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            mean_grid_step: 0.01,
            max_n: 12,
            max_states: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    pub cost: f64,
    pub segmentation: Segmentation,
    /// `cost − optimum ≤ grid_bound` whenever `gaps_aligned` holds.
    pub grid_bound: f64,
    /// Whether every edge gap is an integer number of grid steps.
    pub gaps_aligned: bool,
}

const STAY: u16 = 0;

/// Best value over a prefix (or suffix) of a row, with the index attaining it.
fn running_best(row: &[f64], from_left: bool) -> Vec<(f64, usize)> {
    let mut out = vec![(f64::INFINITY, 0); row.len()];
    let mut best = (f64::INFINITY, 0);
    let order: Box<dyn Iterator<Item = usize>> = if from_left {
        Box::new(0..row.len())
    } else {
        Box::new((0..row.len()).rev())
    };
    for k in order {
        // leftmost index wins ties in both directions
        if row[k] < best.0 || (!from_left && row[k] == best.0) {
            best = (row[k], k);
        }
        out[k] = best;
    }
    out
}

pub fn oracle_solve(signal: &[f64], graph: &ConstraintGraph, cfg: &OracleConfig) -> Result<OracleSolution> {
    let n = signal.len();
    let states = graph.vertices.len();
    let step = cfg.mean_grid_step;
    if n == 0 {
        return Err(Error::invalid("signal is empty"));
    }
    if n > cfg.max_n {
        return Err(Error::invalid(format!("oracle handles at most {} samples, got {n}", cfg.max_n)));
    }
    if states > cfg.max_states {
        return Err(Error::invalid(format!(
            "oracle handles at most {} states, got {states}",
            cfg.max_states
        )));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid("grid step must be positive"));
    }
    if graph.has_errors() {
        return Err(Error::invalid("invalid graph"));
    }

    let lo_y = signal.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_y = signal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Any optimal mean lies within (segments − 1)·max_gap of the data range.
    let reach = (n - 1) as f64 * graph.max_gap() + step;
    let first = ((lo_y - reach) / step).floor() as i64;
    let last = ((hi_y + reach) / step).ceil() as i64;
    let grid: Vec<f64> = (first..=last).map(|k| k as f64 * step).collect();
    let g = grid.len();

    let mut gaps_aligned = true;
    let offsets: Vec<usize> = graph
        .edges
        .iter()
        .map(|e| {
            let units = e.gap / step;
            let rounded = units.round();
            if (units - rounded).abs() <= 1e-9 * units.max(1.0) {
                rounded as usize
            } else {
                gaps_aligned = false;
                (units - 1e-9).ceil() as usize
            }
        })
        .collect();

    // value[t][v][k], choice[t][v][k]: 0 = stay, i + 1 = graph.edges[i]
    let mut value = vec![vec![vec![f64::INFINITY; g]; states]; n];
    let mut choice = vec![vec![vec![STAY; g]; states]; n];
    for &v in &graph.start_states {
        for (k, m) in grid.iter().enumerate() {
            value[0][v.index()][k] = (signal[0] - m) * (signal[0] - m);
        }
    }

    for t in 1..n {
        let below: Vec<Vec<(f64, usize)>> = (0..states)
            .map(|u| running_best(&value[t - 1][u], true))
            .collect();
        let above: Vec<Vec<(f64, usize)>> = (0..states)
            .map(|u| running_best(&value[t - 1][u], false))
            .collect();
        for v in 0..states {
            for k in 0..g {
                let mut best = value[t - 1][v][k];
                let mut pick = STAY;
                for (i, e) in graph.edges.iter().enumerate() {
                    if e.target.index() != v {
                        continue;
                    }
                    let u = e.source.index();
                    let prev = match e.direction {
                        Direction::Up => k.checked_sub(offsets[i]).map(|j| below[u][j].0),
                        Direction::Down => above[u].get(k + offsets[i]).map(|b| b.0),
                    };
                    if let Some(p) = prev {
                        let cand = p + e.penalty;
                        if cand < best {
                            best = cand;
                            pick = i as u16 + 1;
                        }
                    }
                }
                let y = signal[t];
                value[t][v][k] = best + (y - grid[k]) * (y - grid[k]);
                choice[t][v][k] = pick;
            }
        }
    }

    let mut end: Option<(usize, usize, f64)> = None;
    for &v in &graph.end_states {
        for k in 0..g {
            let c = value[n - 1][v.index()][k];
            if c < end.map_or(f64::INFINITY, |e| e.2) {
                end = Some((v.index(), k, c));
            }
        }
    }
    let Some((mut v, mut k, cost)) = end else {
        return Err(Error::Infeasible(format!(
            "no end state is reachable after {n} samples"
        )));
    };

    let mut segments = Vec::new();
    let mut changes = Vec::new();
    let mut seg_end = n;
    for t in (1..n).rev() {
        let pick = choice[t][v][k];
        if pick == STAY {
            continue;
        }
        let i = (pick - 1) as usize;
        let e = &graph.edges[i];
        segments.push(Segment {
            start: t + 1,
            end: seg_end,
            state: VertexId(v as u32),
            mean: grid[k],
        });
        changes.push(Change {
            position: t,
            edge: e.id,
        });
        let u = e.source.index();
        let row = &value[t - 1][u];
        k = match e.direction {
            Direction::Up => running_best(row, true)[k - offsets[i]].1,
            Direction::Down => running_best(row, false)[k + offsets[i]].1,
        };
        v = u;
        seg_end = t;
    }
    segments.push(Segment {
        start: 1,
        end: seg_end,
        state: VertexId(v as u32),
        mean: grid[k],
    });
    segments.reverse();
    changes.reverse();

    // Σ|residual| ≤ sqrt(N·Σ residual²) ≤ sqrt(N·cost).
    let nf = n as f64;
    let grid_bound = nf * (step / 2.0).powi(2) + step * (nf * cost.max(0.0)).sqrt();

    Ok(OracleSolution {
        cost,
        segmentation: Segmentation {
            segments,
            changes,
            total_cost: cost,
        },
        grid_bound,
        gaps_aligned,
    })
}
