//! RRT-Connect with random shortcut smoothing.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gridworld::{uniform_in, Environment};
use crate::planner::{FailureReason, PathResult};
use crate::{Config2, Error, Real, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RrtConfig {
    /// Extension step (meters); defaults to 5 cells.
    pub step: Option<f64>,
    pub goal_bias: f64,
    pub max_iters: usize,
    /// Seconds.
    pub time_limit: f64,
    pub smoothing_iters: usize,
    pub seed: u64,
    /// Clearance (meters); defaults to half a cell.
    pub d_safe: Option<f64>,
}

impl Default for RrtConfig {
    fn default() -> Self {
        RrtConfig {
            step: None,
            goal_bias: 0.05,
            max_iters: 100_000,
            time_limit: 10.0,
            smoothing_iters: 200,
            seed: 0,
            d_safe: None,
        }
    }
}

struct Tree<T> {
    nodes: Vec<Config2<T>>,
    parent: Vec<usize>,
}

impl<T: Real> Tree<T> {
    fn new(root: Config2<T>) -> Self {
        Tree {
            nodes: vec![root],
            parent: vec![usize::MAX],
        }
    }

    fn nearest(&self, q: &Config2<T>) -> usize {
        let mut best = (T::infinity(), 0);
        for (k, n) in self.nodes.iter().enumerate() {
            let d = (*n - *q).dot(&(*n - *q));
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    }

    fn push(&mut self, q: Config2<T>, parent: usize) -> usize {
        self.nodes.push(q);
        self.parent.push(parent);
        self.nodes.len() - 1
    }

    /// Root-to-node chain.
    fn chain(&self, mut k: usize) -> Vec<Config2<T>> {
        let mut out = Vec::new();
        while k != usize::MAX {
            out.push(self.nodes[k]);
            k = self.parent[k];
        }
        out.reverse();
        out
    }
}

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

fn steer<T: Real>(from: &Config2<T>, to: &Config2<T>, step: T) -> (Config2<T>, bool) {
    let d = from.dist(to);
    if d <= step {
        (*to, true)
    } else {
        (*from + (*to - *from) * (step / d), false)
    }
}

fn extend<T: Real>(env: &Environment<T>, tree: &mut Tree<T>, target: &Config2<T>, step: T, d_safe: T) -> Result<Extend> {
    let near = tree.nearest(target);
    let from = tree.nodes[near];
    let (q, reached) = steer(&from, target, step);
    if q == from || !env.segment_clear(&from, &q, d_safe)? {
        return Ok(if q == from && reached { Extend::Reached(near) } else { Extend::Trapped });
    }
    let k = tree.push(q, near);
    Ok(if reached { Extend::Reached(k) } else { Extend::Advanced(k) })
}

fn connect<T: Real>(env: &Environment<T>, tree: &mut Tree<T>, target: &Config2<T>, step: T, d_safe: T) -> Result<Extend> {
    loop {
        match extend(env, tree, target, step, d_safe)? {
            Extend::Advanced(_) => continue,
            other => return Ok(other),
        }
    }
}

/// Random-pair shortcutting; a shortcut is kept only if clear and strictly shorter.
pub fn shortcut<T: Real, R: Rng + ?Sized>(
    env: &Environment<T>,
    path: &mut Vec<Config2<T>>,
    iters: usize,
    d_safe: T,
    rng: &mut R,
) -> Result<()> {
    for _ in 0..iters {
        if path.len() < 3 {
            break;
        }
        let a = rng.random_range(0..path.len());
        let b = rng.random_range(0..path.len());
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        if j < i + 2 {
            continue;
        }
        let old: T = path[i..=j].windows(2).map(|w| w[0].dist(&w[1])).sum();
        if path[i].dist(&path[j]) < old && env.segment_clear(&path[i], &path[j], d_safe)? {
            path.drain(i + 1..j);
        }
    }
    Ok(())
}

pub fn rrt_connect<T: Real>(env: &Environment<T>, q_s: &Config2<T>, q_g: &Config2<T>, cfg: &RrtConfig) -> Result<PathResult<T>> {
    let start = Instant::now();
    let cs = env.grid().cell_size.to_f64_lossy();
    let step = cfg.step.unwrap_or(5.0 * cs);
    let d_safe = cfg.d_safe.unwrap_or(0.5 * cs);
    if !(step > 0.0) || !(cfg.time_limit > 0.0) || !(0.0..=1.0).contains(&cfg.goal_bias) {
        return Err(Error::InvalidArgument("rrt config needs step > 0, time_limit > 0, goal_bias in [0, 1]".into()));
    }
    let (step, d_safe) = (T::lit(step), T::lit(d_safe));
    if !env.is_free(q_s, d_safe) {
        return Err(Error::InvalidStart);
    }
    if !env.is_free(q_g, d_safe) {
        return Err(Error::InvalidGoal);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if env.segment_clear(q_s, q_g, d_safe)? {
        let path = if q_s == q_g { vec![*q_s] } else { vec![*q_s, *q_g] };
        return Ok(PathResult::finish(path, true, FailureReason::None, start));
    }
    let bounds = env.bounds();
    let mut a = Tree::new(*q_s);
    let mut b = Tree::new(*q_g);
    // `a_is_start` tracks which tree is rooted at q_s after swaps.
    let mut a_is_start = true;
    for _ in 0..cfg.max_iters {
        if start.elapsed().as_secs_f64() > cfg.time_limit {
            return Ok(PathResult::finish(vec![*q_s], false, FailureReason::TimeLimit, start));
        }
        let target = if rng.random::<f64>() < cfg.goal_bias {
            b.nodes[0]
        } else {
            uniform_in(&bounds, &mut rng)
        };
        let new = match extend(env, &mut a, &target, step, d_safe)? {
            Extend::Trapped => None,
            Extend::Advanced(k) | Extend::Reached(k) => Some(k),
        };
        if let Some(ka) = new {
            let q_new = a.nodes[ka];
            if let Extend::Reached(kb) = connect(env, &mut b, &q_new, step, d_safe)? {
                let (ts, ks, tg, kg) = if a_is_start { (&a, ka, &b, kb) } else { (&b, kb, &a, ka) };
                let mut path = ts.chain(ks);
                let mut back = tg.chain(kg);
                back.reverse();
                // Both chains end at the shared connection point.
                path.extend(back.into_iter().skip(1));
                shortcut(env, &mut path, cfg.smoothing_iters, d_safe, &mut rng)?;
                return Ok(PathResult::finish(path, true, FailureReason::None, start));
            }
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    Ok(PathResult::finish(vec![*q_s], false, FailureReason::MaxSteps, start))
}
