use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gridworld::OccupancyGrid;
use crate::{Error, Real, Result};

pub const WALL_THICKNESS: usize = 2;
pub const DOOR_WIDTH: usize = 4;
const MIN_ROOM: usize = 6;

#[derive(Clone, Copy, Debug)]
struct Room {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Room {
    fn len(&self, axis: usize) -> usize {
        if axis == 0 {
            self.x1 - self.x0
        } else {
            self.y1 - self.y0
        }
    }

    fn area(&self) -> usize {
        self.len(0) * self.len(1)
    }
}

/// Recursive-division maze: a one-cell border and `room_count` rooms separated by
/// two-cell walls, each wall pierced by one door. Walls never end inside an existing door.
pub fn gen_maze<T: Real>(width: usize, height: usize, room_count: usize, cell_size: T, seed: u64) -> Result<OccupancyGrid<T>> {
    if room_count == 0 {
        return Err(Error::InvalidArgument("room_count must be at least 1".into()));
    }
    if width < 3 || height < 3 {
        return Err(Error::InvalidArgument("maze needs at least 3x3 cells".into()));
    }
    let mut g = OccupancyGrid::empty(width, height, cell_size)?;
    for i in 0..width {
        g.set(i, 0, true);
        g.set(i, height - 1, true);
    }
    for j in 0..height {
        g.set(0, j, true);
        g.set(width - 1, j, true);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rooms = vec![Room {
        x0: 1,
        y0: 1,
        x1: width - 1,
        y1: height - 1,
    }];
    let mut blocked = vec![false];
    while rooms.len() < room_count {
        let pick = (0..rooms.len())
            .filter(|&k| !blocked[k])
            .max_by(|&a, &b| rooms[a].area().cmp(&rooms[b].area()).then(b.cmp(&a)));
        let Some(k) = pick else {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} map is too small for {room_count} rooms"
            )));
        };
        let r = rooms[k];
        let first = match r.len(0).cmp(&r.len(1)) {
            std::cmp::Ordering::Greater => 0,
            std::cmp::Ordering::Less => 1,
            std::cmp::Ordering::Equal => rng.random_range(0..2),
        };
        let mut split = None;
        for axis in [first, 1 - first] {
            let cands = wall_positions(&g, &r, axis);
            if !cands.is_empty() {
                split = Some((axis, cands[rng.random_range(0..cands.len())]));
                break;
            }
        }
        let Some((axis, p)) = split else {
            blocked[k] = true;
            continue;
        };
        let span = r.len(1 - axis);
        let door = rng.random_range(0..=span - DOOR_WIDTH);
        for t in 0..span {
            let open = (door..door + DOOR_WIDTH).contains(&t);
            for w in 0..WALL_THICKNESS {
                let (i, j) = if axis == 0 { (p + w, r.y0 + t) } else { (r.x0 + t, p + w) };
                g.set(i, j, !open);
            }
        }
        let (a, b) = if axis == 0 {
            (Room { x1: p, ..r }, Room { x0: p + WALL_THICKNESS, ..r })
        } else {
            (Room { y1: p, ..r }, Room { y0: p + WALL_THICKNESS, ..r })
        };
        rooms[k] = a;
        rooms.push(b);
        blocked[k] = false;
        blocked.push(false);
    }
    Ok(g)
}

/// Wall offsets along `axis` that leave both sides at least `MIN_ROOM` wide and whose
/// ends abut solid wall.
fn wall_positions<T: Real>(g: &OccupancyGrid<T>, r: &Room, axis: usize) -> Vec<usize> {
    let (lo, hi) = if axis == 0 { (r.x0, r.x1) } else { (r.y0, r.y1) };
    if r.len(1 - axis) < DOOR_WIDTH || hi - lo < 2 * MIN_ROOM + WALL_THICKNESS {
        return Vec::new();
    }
    (lo + MIN_ROOM..=hi - MIN_ROOM - WALL_THICKNESS)
        .filter(|&p| {
            (p..p + WALL_THICKNESS).all(|c| {
                if axis == 0 {
                    g.is_occupied(c, r.y0 - 1) && g.is_occupied(c, r.y1)
                } else {
                    g.is_occupied(r.x0 - 1, c) && g.is_occupied(r.x1, c)
                }
            })
        })
        .collect()
}

/// Number of 4-connected components of free cells.
pub fn flood_fill_components<T: Real>(g: &OccupancyGrid<T>) -> usize {
    let mut seen = vec![false; g.width * g.height];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..seen.len() {
        if seen[start] || g.cells[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(k) = queue.pop_front() {
            let (i, j) = (k % g.width, k / g.width);
            let mut visit = |ni: usize, nj: usize| {
                let nk = nj * g.width + ni;
                if !seen[nk] && !g.cells[nk] {
                    seen[nk] = true;
                    queue.push_back(nk);
                }
            };
            if i > 0 {
                visit(i - 1, j);
            }
            if i + 1 < g.width {
                visit(i + 1, j);
            }
            if j > 0 {
                visit(i, j - 1);
            }
            if j + 1 < g.height {
                visit(i, j + 1);
            }
        }
    }
    count
}
