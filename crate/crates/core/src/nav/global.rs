//! A* over the inflated costmap.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::Point2;
use crate::{CellIndex, Costmap, Pose2D, INSCRIBED};

/// Divisor applied to cell cost in the step penalty `len * (1 + cost / 64)`.
pub const COST_DIVISOR: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum PlanError {
    #[error("goal is unreachable")]
    Unreachable,
    #[error("start cell is untraversable")]
    StartBlocked,
    #[error("start or goal outside the costmap")]
    OutOfBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPath {
    /// Every cell visited, start to goal.
    pub cells: Vec<CellIndex>,
    /// Cell centers after collinear points are dropped.
    pub waypoints: Vec<Point2>,
    /// Accumulated step cost in cell units.
    pub cost: f64,
}

impl GlobalPath {
    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }
}

pub fn traversable(cost: u8) -> bool {
    cost < INSCRIBED
}

pub fn step_cost(len: f64, dest_cost: u8) -> f64 {
    len * (1.0 + dest_cost as f64 / COST_DIVISOR)
}

fn octile(a: CellIndex, b: CellIndex) -> f64 {
    let dx = a.ix.abs_diff(b.ix) as f64;
    let dy = a.iy.abs_diff(b.iy) as f64;
    dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
}

/// 8-connected neighbors with step length; diagonal moves may not cut
/// the corner of an untraversable cell.
pub(crate) fn neighbors(costmap: &Costmap, c: CellIndex) -> impl Iterator<Item = (CellIndex, f64)> + '_ {
    let g = *costmap.geometry();
    const DIRS: [(i64, i64); 8] = [(1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (-1, -1), (1, -1)];
    DIRS.iter().filter_map(move |&(dx, dy)| {
        let (x, y) = (c.ix as i64, c.iy as i64);
        let n = g.checked_cell(x + dx, y + dy)?;
        if !traversable(costmap.cost(n)) {
            return None;
        }
        if dx != 0 && dy != 0 {
            let a = g.checked_cell(x + dx, y)?;
            let b = g.checked_cell(x, y + dy)?;
            if !traversable(costmap.cost(a)) || !traversable(costmap.cost(b)) {
                return None;
            }
            Some((n, std::f64::consts::SQRT_2))
        } else {
            Some((n, 1.0))
        }
    })
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    h: f64,
    seq: u64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(other.h.total_cmp(&self.h))
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn endpoints(costmap: &Costmap, start: &Pose2D, goal: &Pose2D) -> Result<(CellIndex, CellIndex), PlanError> {
    let s = costmap.world_to_grid(&start.position()).ok_or(PlanError::OutOfBounds)?;
    let g = costmap.world_to_grid(&goal.position()).ok_or(PlanError::OutOfBounds)?;
    if !traversable(costmap.cost(s)) {
        return Err(PlanError::StartBlocked);
    }
    if !traversable(costmap.cost(g)) {
        return Err(PlanError::Unreachable);
    }
    Ok((s, g))
}

pub fn plan(costmap: &Costmap, start: &Pose2D, goal: &Pose2D) -> Result<GlobalPath, PlanError> {
    let (s, g) = endpoints(costmap, start, goal)?;
    search(costmap, s, g, true)
}

/// Same search with a zero heuristic. Used as an optimality reference.
pub fn dijkstra(costmap: &Costmap, start: &Pose2D, goal: &Pose2D) -> Result<GlobalPath, PlanError> {
    let (s, g) = endpoints(costmap, start, goal)?;
    search(costmap, s, g, false)
}

fn search(costmap: &Costmap, start: CellIndex, goal: CellIndex, heuristic: bool) -> Result<GlobalPath, PlanError> {
    let geom = *costmap.geometry();
    let n = geom.len();
    let mut g_cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let h = |c: CellIndex| if heuristic { octile(c, goal) } else { 0.0 };

    let si = geom.index(start);
    g_cost[si] = 0.0;
    heap.push(Open { f: h(start), h: h(start), seq, idx: si });

    let gi = geom.index(goal);
    while let Some(Open { idx, .. }) = heap.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        if idx == gi {
            break;
        }
        let c = geom.cell_of(idx);
        for (nc, len) in neighbors(costmap, c) {
            let ni = geom.index(nc);
            if closed[ni] {
                continue;
            }
            let tentative = g_cost[idx] + step_cost(len, costmap.cost(nc));
            if tentative < g_cost[ni] {
                g_cost[ni] = tentative;
                parent[ni] = idx;
                seq += 1;
                let hn = h(nc);
                heap.push(Open { f: tentative + hn, h: hn, seq, idx: ni });
            }
        }
    }
    if !closed[gi] {
        return Err(PlanError::Unreachable);
    }
    let mut cells = vec![goal];
    let mut cur = gi;
    while cur != si {
        cur = parent[cur];
        cells.push(geom.cell_of(cur));
    }
    cells.reverse();
    let waypoints = simplify(&cells).into_iter().map(|c| geom.cell_center(c)).collect();
    Ok(GlobalPath { cells, waypoints, cost: g_cost[gi] })
}

/// Drops interior cells where the step direction does not change.
pub fn simplify(cells: &[CellIndex]) -> Vec<CellIndex> {
    if cells.len() <= 2 {
        return cells.to_vec();
    }
    let dir = |a: CellIndex, b: CellIndex| (b.ix as i64 - a.ix as i64, b.iy as i64 - a.iy as i64);
    let mut out = vec![cells[0]];
    for w in cells.windows(3) {
        if dir(w[0], w[1]) != dir(w[1], w[2]) {
            out.push(w[1]);
        }
    }
    out.push(*cells.last().unwrap());
    out
}
