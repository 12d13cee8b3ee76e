//! Grid A* over the vertical plane with inflated circular obstacles.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::Obstacle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

/// Uniform grid whose nodes sit at `min + i * cell` up to and including the
/// upper bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub cell: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub connectivity: Connectivity,
    /// Added to each obstacle radius before marking cells blocked.
    pub inflation: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            cell: 0.1,
            x_min: -4.0,
            x_max: 4.0,
            d_min: 0.0,
            d_max: 8.0,
            connectivity: Connectivity::Eight,
            inflation: 0.2,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell > 0.0 && self.x_max > self.x_min && self.d_max > self.d_min && self.inflation >= 0.0) {
            return Err(Error::invalid("grid needs a positive cell, ordered bounds and a non-negative inflation"));
        }
        Ok(())
    }

    fn dims(&self) -> (usize, usize) {
        let nx = ((self.x_max - self.x_min) / self.cell + 1e-9).floor() as usize + 1;
        let nd = ((self.d_max - self.d_min) / self.cell + 1e-9).floor() as usize + 1;
        (nx, nd)
    }

    fn point(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x_min + i as f64 * self.cell, self.d_min + j as f64 * self.cell)
    }

    fn nearest(&self, p: (f64, f64)) -> (usize, usize) {
        let (nx, nd) = self.dims();
        let i = ((p.0 - self.x_min) / self.cell).round().clamp(0.0, (nx - 1) as f64) as usize;
        let j = ((p.1 - self.d_min) / self.cell).round().clamp(0.0, (nd - 1) as f64) as usize;
        (i, j)
    }

    fn contains(&self, p: (f64, f64)) -> bool {
        let eps = 1e-9;
        p.0 >= self.x_min - eps && p.0 <= self.x_max + eps && p.1 >= self.d_min - eps && p.1 <= self.d_max + eps
    }

    fn blocked(&self, p: (f64, f64), obstacles: &[Obstacle]) -> bool {
        obstacles.iter().any(|o| (p.0 - o.x).hypot(p.1 - o.d) < o.a + self.inflation)
    }

    fn moves(&self) -> &'static [(i64, i64)] {
        match self.connectivity {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
        }
    }

    /// Occupancy of every node, row-major in `x`.
    pub fn occupancy(&self, obstacles: &[Obstacle]) -> Vec<bool> {
        let (nx, nd) = self.dims();
        let mut occ = vec![false; nx * nd];
        for j in 0..nd {
            for i in 0..nx {
                occ[j * nx + i] = self.blocked(self.point(i, j), obstacles);
            }
        }
        occ
    }
}

/// Polyline from start to goal in metres.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPath {
    pub waypoints: Vec<(f64, f64)>,
    pub length: f64,
    /// Cost of the node-to-node part of the path on the grid.
    pub grid_cost: f64,
}

impl GridPath {
    fn from_points(waypoints: Vec<(f64, f64)>, grid_cost: f64) -> Self {
        let length = waypoints.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum();
        GridPath {
            waypoints,
            length,
            grid_cost,
        }
    }

    /// Position and velocity at time `t` when the path is traversed at
    /// constant speed over `[0, t_f]`; the goal is held afterwards.
    pub fn sample(&self, t: f64, t_f: f64) -> ((f64, f64), (f64, f64)) {
        let last = *self.waypoints.last().expect("path has at least one waypoint");
        if self.length == 0.0 || t >= t_f {
            return (last, (0.0, 0.0));
        }
        let speed = self.length / t_f;
        let mut s = speed * t.max(0.0);
        for w in self.waypoints.windows(2) {
            let seg = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            if seg == 0.0 {
                continue;
            }
            let dir = ((w[1].0 - w[0].0) / seg, (w[1].1 - w[0].1) / seg);
            if s <= seg {
                return ((w[0].0 + dir.0 * s, w[0].1 + dir.1 * s), (dir.0 * speed, dir.1 * speed));
            }
            s -= seg;
        }
        (last, (0.0, 0.0))
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    f: f64,
    g: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on f, then on larger g, then on node index
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f).then(self.g.total_cmp(&o.g)).then(o.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Shortest grid path between the nodes nearest to `start` and `goal`,
/// with the exact endpoints prepended and appended.
pub fn astar_plan(grid: &GridSpec, start: (f64, f64), goal: (f64, f64), obstacles: &[Obstacle]) -> Result<GridPath> {
    grid.validate()?;
    if !grid.contains(start) || !grid.contains(goal) {
        return Err(Error::invalid("start and goal must lie inside the grid bounds"));
    }
    if grid.blocked(start, obstacles) {
        return Err(Error::invalid("start lies inside an inflated obstacle"));
    }
    if grid.blocked(goal, obstacles) {
        return Err(Error::NoPath);
    }
    if start == goal {
        return Ok(GridPath::from_points(vec![start], 0.0));
    }
    let (nx, nd) = grid.dims();
    let occ = grid.occupancy(obstacles);
    let (si, sj) = grid.nearest(start);
    let (gi, gj) = grid.nearest(goal);
    let (s, g) = (sj * nx + si, gj * nx + gi);
    if occ[s] || occ[g] {
        return Err(Error::NoPath);
    }
    let h = |n: usize| {
        let (i, j) = ((n % nx) as f64, (n / nx) as f64);
        grid.cell * (i - gi as f64).hypot(j - gj as f64)
    };

    let mut dist = vec![f64::INFINITY; nx * nd];
    let mut parent = vec![usize::MAX; nx * nd];
    let mut closed = vec![false; nx * nd];
    let mut open = BinaryHeap::new();
    dist[s] = 0.0;
    open.push(Entry { f: h(s), g: 0.0, node: s });
    while let Some(Entry { g: gc, node, .. }) = open.pop() {
        if closed[node] {
            continue;
        }
        closed[node] = true;
        if node == g {
            break;
        }
        let (i, j) = ((node % nx) as i64, (node / nx) as i64);
        for &(di, dj) in grid.moves() {
            let (a, b) = (i + di, j + dj);
            if a < 0 || b < 0 || a >= nx as i64 || b >= nd as i64 {
                continue;
            }
            let nb = b as usize * nx + a as usize;
            if occ[nb] || closed[nb] {
                continue;
            }
            let cand = gc + grid.cell * ((di * di + dj * dj) as f64).sqrt();
            if cand < dist[nb] {
                dist[nb] = cand;
                parent[nb] = node;
                open.push(Entry {
                    f: cand + h(nb),
                    g: cand,
                    node: nb,
                });
            }
        }
    }
    if !closed[g] {
        return Err(Error::NoPath);
    }
    let mut nodes = vec![g];
    while *nodes.last().unwrap() != s {
        nodes.push(parent[*nodes.last().unwrap()]);
    }
    nodes.reverse();
    let mut pts = vec![start];
    pts.extend(nodes.iter().map(|&n| grid.point(n % nx, n / nx)));
    pts.push(goal);
    pts.dedup();
    Ok(GridPath::from_points(pts, dist[g]))
}
