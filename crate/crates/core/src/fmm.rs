//! First-order fast marching on the 4-neighborhood.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::gridworld::{Environment, OccupancyGrid};
use crate::planner::{FailureReason, PathResult};
use crate::{Config2, Error, Real, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FmmGrid<T> {
    pub width: usize,
    pub height: usize,
    pub cell_size: T,
    pub origin: Config2<T>,
    /// Arrival time per cell (row-major); infinite where unreached.
    pub times: Vec<T>,
    pub sources: Vec<usize>,
    /// Cells in the order they were accepted.
    pub accepted: Vec<usize>,
}

/// Upwind update from the smaller axis-neighbor values `a` (x) and `b` (y) with
/// slowness `f` and spacing `h`.
#[inline]
pub fn godunov_update<T: Real>(a: T, b: T, f: T, h: T) -> T {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let fh = f * h;
    if !b.is_finite() || b - a >= fh {
        a + fh
    } else {
        let d = a - b;
        (a + b + (T::lit(2.0) * fh * fh - d * d).sqrt()) * T::lit(0.5)
    }
}

#[derive(PartialEq)]
struct Entry<T>(T, usize);

impl<T: PartialOrd> Eq for Entry<T> {}

impl<T: PartialOrd> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: PartialOrd> Ord for Entry<T> {
    // Min-heap on time, ties broken by lower index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .partial_cmp(&self.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.1.cmp(&self.1))
    }
}

/// Solves `|grad t| = 1 / speed` from the given source cells. Occupied cells stay infinite.
pub fn fmm_solve<T: Real>(grid: &OccupancyGrid<T>, speed: &[T], sources: &[(usize, usize)]) -> Result<FmmGrid<T>> {
    let (w, h) = (grid.width, grid.height);
    if speed.len() != w * h {
        return Err(Error::InvalidArgument("speed grid size mismatch".into()));
    }
    if sources.is_empty() {
        return Err(Error::InvalidArgument("no sources".into()));
    }
    for (k, &s) in speed.iter().enumerate() {
        if !grid.cells[k] && !(s > T::zero() && s.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-positive speed at free cell {k}")));
        }
    }
    let inf = T::infinity();
    let mut times = vec![inf; w * h];
    let mut done = vec![false; w * h];
    let mut heap = BinaryHeap::new();
    let mut src = Vec::with_capacity(sources.len());
    for &(i, j) in sources {
        if i >= w || j >= h {
            return Err(Error::InvalidArgument(format!("source ({i}, {j}) outside grid")));
        }
        let k = j * w + i;
        if grid.cells[k] {
            return Err(Error::InvalidArgument(format!("source ({i}, {j}) is occupied")));
        }
        times[k] = T::zero();
        src.push(k);
        heap.push(Entry(T::zero(), k));
    }
    let hs = grid.cell_size;
    let mut accepted = Vec::new();
    while let Some(Entry(t, k)) = heap.pop() {
        if done[k] || t > times[k] {
            continue;
        }
        done[k] = true;
        accepted.push(k);
        let (i, j) = (k % w, k / w);
        for (ni, nj) in neighbors4(i, j, w, h) {
            let nk = nj * w + ni;
            if done[nk] || grid.cells[nk] {
                continue;
            }
            let cand = update_cell(&times, &done, ni, nj, w, h, T::one() / speed[nk], hs);
            if cand < times[nk] {
                times[nk] = cand;
                heap.push(Entry(cand, nk));
            }
        }
    }
    Ok(FmmGrid {
        width: w,
        height: h,
        cell_size: grid.cell_size,
        origin: grid.origin,
        times,
        sources: src,
        accepted,
    })
}

fn neighbors4(i: usize, j: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let cand = [
        (i.wrapping_sub(1), j),
        (i + 1, j),
        (i, j.wrapping_sub(1)),
        (i, j + 1),
    ];
    cand.into_iter().filter(move |&(a, b)| a < w && b < h)
}

#[allow(clippy::too_many_arguments)]
fn update_cell<T: Real>(times: &[T], known: &[bool], i: usize, j: usize, w: usize, h: usize, f: T, hs: T) -> T {
    let val = |a: usize, b: usize| {
        if a < w && b < h && known[b * w + a] {
            times[b * w + a]
        } else {
            T::infinity()
        }
    };
    let a = val(i.wrapping_sub(1), j).min(val(i + 1, j));
    let b = val(i, j.wrapping_sub(1)).min(val(i, j + 1));
    godunov_update(a, b, f, hs)
}

impl<T: Real> FmmGrid<T> {
    #[inline]
    pub fn time_at(&self, i: usize, j: usize) -> T {
        self.times[j * self.width + i]
    }

    fn cell_of(&self, q: &Config2<T>) -> Option<(usize, usize)> {
        let fx = ((q[0] - self.origin[0]) / self.cell_size).floor();
        let fy = ((q[1] - self.origin[1]) / self.cell_size).floor();
        let (i, j) = (fx.to_i64()?, fy.to_i64()?);
        let (w, h) = (self.width as i64, self.height as i64);
        // The upper domain edge belongs to the last cell.
        let i = if i == w && q[0] <= self.origin[0] + self.cell_size * T::from_i64(w).unwrap() { w - 1 } else { i };
        let j = if j == h && q[1] <= self.origin[1] + self.cell_size * T::from_i64(h).unwrap() { h - 1 } else { j };
        (i >= 0 && j >= 0 && i < w && j < h).then_some((i as usize, j as usize))
    }

    fn center(&self, i: usize, j: usize) -> Config2<T> {
        let half = T::lit(0.5);
        Config2([
            self.origin[0] + (T::from_usize(i).unwrap() + half) * self.cell_size,
            self.origin[1] + (T::from_usize(j).unwrap() + half) * self.cell_size,
        ])
    }

    /// Bilinear time and gradient; `None` when any surrounding center is unreached.
    fn interpolate(&self, q: &Config2<T>) -> Option<(T, Config2<T>)> {
        let half = T::lit(0.5);
        let fx = (q[0] - self.origin[0]) / self.cell_size - half;
        let fy = (q[1] - self.origin[1]) / self.cell_size - half;
        let i0 = fx.floor().to_i64()?.clamp(0, self.width as i64 - 2) as usize;
        let j0 = fy.floor().to_i64()?.clamp(0, self.height as i64 - 2) as usize;
        let tx = fx - T::from_usize(i0).unwrap();
        let ty = fy - T::from_usize(j0).unwrap();
        let t00 = self.time_at(i0, j0);
        let t10 = self.time_at(i0 + 1, j0);
        let t01 = self.time_at(i0, j0 + 1);
        let t11 = self.time_at(i0 + 1, j0 + 1);
        if !(t00.is_finite() && t10.is_finite() && t01.is_finite() && t11.is_finite()) {
            return None;
        }
        let one = T::one();
        let t = (t00 * (one - tx) + t10 * tx) * (one - ty) + (t01 * (one - tx) + t11 * tx) * ty;
        let gx = ((t10 - t00) * (one - ty) + (t11 - t01) * ty) / self.cell_size;
        let gy = ((t01 - t00) * (one - tx) + (t11 - t10) * tx) / self.cell_size;
        Some((t, Config2([gx, gy])))
    }

    /// Lowest-time 8-neighbor of a cell, if strictly below the cell's own time.
    fn descend_cell(&self, i: usize, j: usize) -> Option<(usize, usize)> {
        let mut best = (self.time_at(i, j), None);
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                let (a, b) = (i as i64 + di, j as i64 + dj);
                if (di, dj) == (0, 0) || a < 0 || b < 0 || a >= self.width as i64 || b >= self.height as i64 {
                    continue;
                }
                let t = self.time_at(a as usize, b as usize);
                if t < best.0 {
                    best = (t, Some((a as usize, b as usize)));
                }
            }
        }
        best.1
    }

    fn is_source(&self, i: usize, j: usize) -> bool {
        self.sources.contains(&(j * self.width + i))
    }
}

/// Follows the interpolated negative time gradient (steps of half a cell) until a source
/// cell is entered. Falls back to the lowest-time neighbor whenever interpolation is
/// unavailable or a step fails to decrease the time.
pub fn fmm_backtrack<T: Real>(g: &FmmGrid<T>, start: &Config2<T>) -> Result<Vec<Config2<T>>> {
    let (mut i, mut j) = g.cell_of(start).ok_or(Error::OutOfBounds {
        x: start[0].to_f64_lossy(),
        y: start[1].to_f64_lossy(),
    })?;
    if !g.time_at(i, j).is_finite() {
        return Err(Error::Unreachable);
    }
    let mut path = vec![*start];
    let mut q = *start;
    let step = g.cell_size * T::lit(0.5);
    let continuous_budget = 4 * (g.width + g.height) * 4;
    let mut iters = 0usize;
    while !g.is_source(i, j) {
        iters += 1;
        let mut moved = false;
        if iters <= continuous_budget {
            if let Some((t, grad)) = g.interpolate(&q) {
                let n = grad.norm();
                if n > T::zero() {
                    let next = q - grad * (step / n);
                    if let (Some((ni, nj)), Some((tn, _))) = (g.cell_of(&next), g.interpolate(&next)) {
                        if tn < t && g.time_at(ni, nj).is_finite() {
                            q = next;
                            (i, j) = (ni, nj);
                            moved = true;
                        }
                    }
                }
            }
        }
        if !moved {
            // Discrete descent strictly decreases the cell time, so this terminates.
            let (ni, nj) = g.descend_cell(i, j).ok_or(Error::Numerical("fmm backtrack stalled"))?;
            q = g.center(ni, nj);
            (i, j) = (ni, nj);
        }
        path.push(q);
    }
    Ok(path)
}

/// True iff the cell containing `q` has a finite arrival time.
pub fn reachable<T: Real>(g: &FmmGrid<T>, q: &Config2<T>) -> bool {
    g.cell_of(q).map(|(i, j)| g.time_at(i, j).is_finite()).unwrap_or(false)
}

/// Solves from the goal cell on the environment's speed grid.
pub fn solve_from<T: Real>(env: &Environment<T>, goal: &Config2<T>) -> Result<FmmGrid<T>> {
    let cell = env.grid().cell_of(goal).ok_or(Error::OutOfBounds {
        x: goal[0].to_f64_lossy(),
        y: goal[1].to_f64_lossy(),
    })?;
    fmm_solve(env.grid(), &env.speed_grid(), &[cell])
}

/// Grid-oracle planner: solve from the goal, backtrack from the start, then step onto the goal.
pub fn fmm_plan<T: Real>(env: &Environment<T>, q_s: &Config2<T>, q_g: &Config2<T>, d_safe: T) -> Result<PathResult<T>> {
    let start = Instant::now();
    if !env.is_free(q_s, d_safe) {
        return Err(Error::InvalidStart);
    }
    if !env.is_free(q_g, d_safe) {
        return Err(Error::InvalidGoal);
    }
    let grid = solve_from(env, q_g)?;
    let mut path = match fmm_backtrack(&grid, q_s) {
        Ok(p) => p,
        Err(Error::Unreachable) => {
            return Ok(PathResult::finish(vec![*q_s], false, FailureReason::MaxSteps, start));
        }
        Err(e) => return Err(e),
    };
    if path.last() != Some(q_g) {
        path.push(*q_g);
    }
    let mut clear = true;
    for w in path.windows(2) {
        if !env.segment_clear(&w[0], &w[1], d_safe)? {
            clear = false;
            break;
        }
    }
    Ok(PathResult::finish(path, clear, FailureReason::Collision, start))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn update_formulas() {
        assert_eq!(godunov_update(0.0, f64::INFINITY, 1.0, 1.0), 1.0);
        assert!((godunov_update(0.0, 0.0, 1.0, 1.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(godunov_update(3.0, 0.0, 1.0, 2.0), 2.0);
    }

    fn unit_speed(g: &OccupancyGrid<f64>) -> Vec<f64> {
        vec![1.0; g.width * g.height]
    }

    #[test]
    fn sources_and_obstacles() {
        let mut g = OccupancyGrid::<f64>::empty(10, 10, 1.0).unwrap();
        g.set(5, 5, true);
        let s = fmm_solve(&g, &unit_speed(&g), &[(2, 2)]).unwrap();
        assert_eq!(s.time_at(2, 2), 0.0);
        assert!(s.time_at(5, 5).is_infinite());
        assert!(reachable(&s, &Config2::new(2.5, 2.5)));
        assert!(!reachable(&s, &Config2::new(5.5, 5.5)));
        assert!(fmm_solve(&g, &unit_speed(&g), &[(5, 5)]).is_err());
    }

    #[test]
    fn sealed_chamber() {
        let mut g = OccupancyGrid::<f64>::empty(12, 12, 1.0).unwrap();
        for k in 3..8 {
            g.set(k, 3, true);
            g.set(k, 7, true);
            g.set(3, k, true);
            g.set(7, k, true);
        }
        let s = fmm_solve(&g, &unit_speed(&g), &[(0, 0)]).unwrap();
        let inside = Config2::new(5.5, 5.5);
        assert!(!reachable(&s, &inside));
        assert!(matches!(fmm_backtrack(&s, &inside), Err(Error::Unreachable)));
    }

    #[test]
    fn backtrack_from_neighbor() {
        let g = OccupancyGrid::<f64>::empty(10, 10, 1.0).unwrap();
        let s = fmm_solve(&g, &unit_speed(&g), &[(4, 4)]).unwrap();
        let p = fmm_backtrack(&s, &Config2::new(5.5, 4.5)).unwrap();
        assert!(p.len() <= 3);
        let last = p.last().unwrap();
        assert_eq!(s.cell_of(last), Some((4, 4)));
    }

    #[test]
    fn corridor_backtrack_length() {
        let mut g = OccupancyGrid::<f64>::empty(40, 7, 1.0).unwrap();
        for i in 0..40 {
            g.set(i, 0, true);
            g.set(i, 6, true);
        }
        let s = fmm_solve(&g, &unit_speed(&g), &[(2, 3)]).unwrap();
        let start = Config2::new(36.5, 3.5);
        let p = fmm_backtrack(&s, &start).unwrap();
        let len = crate::planner::path_length(&p).unwrap();
        let straight = 34.0;
        assert!((len - straight).abs() <= 0.1 * straight, "{len}");
    }
}
