//! Bidirectional gradient-descent path extraction on a learned time field.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::field::FieldModel;
use crate::gridworld::Environment;
use crate::{Config2, Error, Real, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    /// Step size as a fraction of the larger domain extent.
    pub gamma: f64,
    /// Termination distance between the two fronts (meters); defaults to 2 cells.
    pub tau: Option<f64>,
    pub max_steps: usize,
    /// Required clearance (meters); defaults to half a cell.
    pub d_safe: Option<f64>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            gamma: 0.05,
            tau: None,
            max_steps: 2000,
            d_safe: None,
        }
    }
}

/// Plan parameters in world units for a specific map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanParams<T> {
    pub step: T,
    pub tau: T,
    pub max_steps: usize,
    pub d_safe: T,
}

impl PlanConfig {
    pub fn resolve<T: Real>(&self, env: &Environment<T>) -> Result<PlanParams<T>> {
        let cs = env.grid().cell_size.to_f64_lossy();
        let ext = env.bounds().extent();
        let extent = ext[0].max(ext[1]).to_f64_lossy();
        let tau = self.tau.unwrap_or(2.0 * cs);
        let d_safe = self.d_safe.unwrap_or(0.5 * cs);
        if !(self.gamma > 0.0) || !(tau > 0.0) || self.max_steps == 0 || !(d_safe >= 0.0) {
            return Err(Error::InvalidArgument(
                "plan config needs gamma > 0, tau > 0, max_steps >= 1, d_safe >= 0".into(),
            ));
        }
        Ok(PlanParams {
            step: T::lit(self.gamma * extent),
            tau: T::lit(tau),
            max_steps: self.max_steps,
            d_safe: T::lit(d_safe),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    None,
    MaxSteps,
    Collision,
    Numerical,
    TimeLimit,
}

impl FailureReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureReason::None => "none",
            FailureReason::MaxSteps => "max_steps",
            FailureReason::Collision => "collision",
            FailureReason::Numerical => "numerical",
            FailureReason::TimeLimit => "time_limit",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathResult<T> {
    pub path: Vec<Config2<T>>,
    pub success: bool,
    pub wall_time: f64,
    pub length: T,
    pub failure_reason: FailureReason,
}

impl<T: Real> PathResult<T> {
    pub(crate) fn finish(path: Vec<Config2<T>>, success: bool, reason: FailureReason, start: Instant) -> Self {
        let length = path_length(&path).unwrap_or(T::zero());
        PathResult {
            path,
            success,
            wall_time: start.elapsed().as_secs_f64(),
            length,
            failure_reason: if success { FailureReason::None } else { reason },
        }
    }

    /// `x,y` rows, one waypoint per line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for q in &self.path {
            s.push_str(&format!("{},{}\n", q[0], q[1]));
        }
        s
    }
}

/// Sum of segment lengths.
pub fn path_length<T: Real>(path: &[Config2<T>]) -> Result<T> {
    if path.is_empty() {
        return Err(Error::InvalidArgument("empty path".into()));
    }
    Ok(path.windows(2).map(|w| w[0].dist(&w[1])).sum())
}

/// One applied descent update, for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord<T> {
    /// Which front moved: `false` = start side, `true` = goal side.
    pub goal_side: bool,
    pub applied: T,
    pub speed: T,
}

pub fn plan<T: Real>(
    model: &FieldModel<T>,
    env: &Environment<T>,
    q_s: &Config2<T>,
    q_g: &Config2<T>,
    cfg: &PlanConfig,
) -> Result<PathResult<T>> {
    plan_traced(model, env, q_s, q_g, cfg, |_| {})
}

/// As [`plan`], reporting every applied update to `on_step`.
pub fn plan_traced<T: Real>(
    model: &FieldModel<T>,
    env: &Environment<T>,
    q_s: &Config2<T>,
    q_g: &Config2<T>,
    cfg: &PlanConfig,
    mut on_step: impl FnMut(StepRecord<T>),
) -> Result<PathResult<T>> {
    let start = Instant::now();
    let p = cfg.resolve(env)?;
    if !env.is_free(q_s, p.d_safe) {
        return Err(Error::InvalidStart);
    }
    if !env.is_free(q_g, p.d_safe) {
        return Err(Error::InvalidGoal);
    }
    let bounds = env.bounds();
    let mut fwd = vec![*q_s];
    let mut bwd = vec![*q_g];
    let mut s = *q_s;
    let mut g = *q_g;

    let joined = |fwd: &[Config2<T>], bwd: &[Config2<T>]| -> Vec<Config2<T>> {
        let mut path = fwd.to_vec();
        if fwd.last() != bwd.last() {
            path.extend(bwd.iter().rev());
        } else {
            path.extend(bwd.iter().rev().skip(1));
        }
        path
    };
    let finish_met = |path: Vec<Config2<T>>| -> Result<PathResult<T>> {
        let mut clear = true;
        for w in path.windows(2) {
            if !env.segment_clear(&w[0], &w[1], p.d_safe)? {
                clear = false;
                break;
            }
        }
        Ok(PathResult::finish(path, clear, FailureReason::Collision, start))
    };

    if s.dist(&g) < p.tau {
        return finish_met(joined(&fwd, &bwd));
    }

    let mut s_emb = match model.blended(&s) {
        Ok(v) => v,
        Err(_) => return Ok(PathResult::finish(joined(&fwd, &bwd), false, FailureReason::Numerical, start)),
    };
    let mut g_emb = match model.blended(&g) {
        Ok(v) => v,
        Err(_) => return Ok(PathResult::finish(joined(&fwd, &bwd), false, FailureReason::Numerical, start)),
    };
    for _ in 0..p.max_steps {
        for goal_side in [false, true] {
            let e = match model.evaluate_blended(&s_emb, &g_emb) {
                Ok(e) => e,
                Err(_) => return Ok(PathResult::finish(joined(&fwd, &bwd), false, FailureReason::Numerical, start)),
            };
            let (q, grad, speed) = if goal_side {
                (&mut g, e.grad_g, e.speed_g)
            } else {
                (&mut s, e.grad_s, e.speed_s)
            };
            let next = bounds.clamp(&(*q - grad * (p.step * speed * speed)));
            on_step(StepRecord {
                goal_side,
                applied: next.dist(q),
                speed,
            });
            *q = next;
            let emb = match model.blended(q) {
                Ok(v) => v,
                Err(_) => return Ok(PathResult::finish(joined(&fwd, &bwd), false, FailureReason::Numerical, start)),
            };
            if goal_side {
                g_emb = emb;
                bwd.push(g);
            } else {
                s_emb = emb;
                fwd.push(s);
            }
            if s.dist(&g) < p.tau {
                return finish_met(joined(&fwd, &bwd));
            }
        }
    }
    Ok(PathResult::finish(joined(&fwd, &bwd), false, FailureReason::MaxSteps, start))
}
