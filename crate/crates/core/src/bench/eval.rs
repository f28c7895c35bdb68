use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::FieldModel;
use crate::fmm::{fmm_plan, reachable, solve_from};
use crate::gridworld::{Environment, FreeSampler};
use crate::planner::{plan, FailureReason, PathResult, PlanConfig};
use crate::rrt::{rrt_connect, RrtConfig};
use crate::{Config2, Error, Real, Result};

/// A planner under evaluation. `query` is the index of the pair, for per-query seeding.
pub trait Planner<T: Real> {
    fn name(&self) -> &str;
    fn plan(&self, env: &Environment<T>, q_s: &Config2<T>, q_g: &Config2<T>, query: usize) -> Result<PathResult<T>>;
}

pub struct LearnedPlanner<'a, T> {
    pub model: &'a FieldModel<T>,
    pub cfg: PlanConfig,
}

impl<T: Real> Planner<T> for LearnedPlanner<'_, T> {
    fn name(&self) -> &str {
        "learned"
    }

    fn plan(&self, env: &Environment<T>, q_s: &Config2<T>, q_g: &Config2<T>, _: usize) -> Result<PathResult<T>> {
        plan(self.model, env, q_s, q_g, &self.cfg)
    }
}

pub struct FmmPlanner {
    /// Clearance (meters) used to validate the backtracked path.
    pub d_safe: f64,
}

impl<T: Real> Planner<T> for FmmPlanner {
    fn name(&self) -> &str {
        "fmm"
    }

    fn plan(&self, env: &Environment<T>, q_s: &Config2<T>, q_g: &Config2<T>, _: usize) -> Result<PathResult<T>> {
        fmm_plan(env, q_s, q_g, T::lit(self.d_safe))
    }
}

pub struct RrtPlanner {
    pub cfg: RrtConfig,
}

impl<T: Real> Planner<T> for RrtPlanner {
    fn name(&self) -> &str {
        "rrt"
    }

    fn plan(&self, env: &Environment<T>, q_s: &Config2<T>, q_g: &Config2<T>, query: usize) -> Result<PathResult<T>> {
        let cfg = RrtConfig {
            seed: self.cfg.seed.wrapping_add(query as u64),
            ..self.cfg.clone()
        };
        rrt_connect(env, q_s, q_g, &cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub method: String,
    pub query: usize,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub success: bool,
    pub time: f64,
    pub length: f64,
    pub failure_reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: String,
    /// Percent of queries solved.
    pub sr: f64,
    pub successes: usize,
    pub mean_time: f64,
    pub std_time: f64,
    pub mean_len: f64,
    pub std_len: f64,
}

impl MethodStats {
    /// Aggregates records of one method; time and length statistics use successes only
    /// (population standard deviation, NaN when nothing succeeded).
    pub fn from_records(method: &str, records: &[QueryRecord]) -> Self {
        let mine: Vec<_> = records.iter().filter(|r| r.method == method).collect();
        let ok: Vec<_> = mine.iter().filter(|r| r.success).collect();
        let times: Vec<f64> = ok.iter().map(|r| r.time).collect();
        let lens: Vec<f64> = ok.iter().map(|r| r.length).collect();
        let (mean_time, std_time) = mean_std(&times);
        let (mean_len, std_len) = mean_std(&lens);
        MethodStats {
            method: method.to_string(),
            sr: if mine.is_empty() { 0.0 } else { 100.0 * ok.len() as f64 / mine.len() as f64 },
            successes: ok.len(),
            mean_time,
            std_time,
            mean_len,
            std_len,
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env_id: String,
    pub seed: u64,
    pub n_pairs: usize,
    pub methods: Vec<MethodStats>,
    pub queries: Vec<QueryRecord>,
}

impl EvalReport {
    /// Summary with columns `method,sr,mean_time,std_time,mean_len,std_len`.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,sr,mean_time,std_time,mean_len,std_len\n");
        for m in &self.methods {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                m.method, m.sr, m.mean_time, m.std_time, m.mean_len, m.std_len
            );
        }
        s
    }

    /// One row per planner call.
    pub fn queries_csv(&self) -> String {
        let mut s = String::from("method,query,start_x,start_y,goal_x,goal_y,success,time,length,failure_reason\n");
        for r in &self.queries {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.query,
                r.start[0],
                r.start[1],
                r.goal[0],
                r.goal[1],
                r.success as u8,
                r.time,
                r.length,
                r.failure_reason
            );
        }
        s
    }

    pub fn method(&self, name: &str) -> Option<&MethodStats> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// Start/goal pairs free at `d_safe` whose start is reachable from the goal on the oracle grid.
pub fn sample_pairs<T: Real>(env: &Environment<T>, n_pairs: usize, seed: u64, d_safe: T) -> Result<Vec<(Config2<T>, Config2<T>)>> {
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("n_pairs must be at least 1".into()));
    }
    let sampler = FreeSampler::new(&env.field, d_safe)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut rejected = 0usize;
    while pairs.len() < n_pairs {
        let q_s = sampler.sample(&mut rng);
        let q_g = sampler.sample(&mut rng);
        let grid = solve_from(env, &q_g)?;
        if reachable(&grid, &q_s) {
            pairs.push((q_s, q_g));
        } else {
            rejected += 1;
            if rejected > 100 * n_pairs {
                return Err(Error::InvalidArgument("free space is too fragmented to sample reachable pairs".into()));
            }
        }
    }
    Ok(pairs)
}

/// Runs every planner on the same reachable pair list; timing wraps the plan call only.
pub fn evaluate<T: Real>(
    env: &Environment<T>,
    env_id: &str,
    planners: &[&dyn Planner<T>],
    n_pairs: usize,
    seed: u64,
    d_safe: T,
) -> Result<EvalReport> {
    let pairs = sample_pairs(env, n_pairs, seed, d_safe)?;
    evaluate_pairs(env, env_id, planners, &pairs, seed)
}

pub fn evaluate_pairs<T: Real>(
    env: &Environment<T>,
    env_id: &str,
    planners: &[&dyn Planner<T>],
    pairs: &[(Config2<T>, Config2<T>)],
    seed: u64,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("n_pairs must be at least 1".into()));
    }
    let mut queries = Vec::with_capacity(pairs.len() * planners.len());
    for p in planners {
        for (k, (q_s, q_g)) in pairs.iter().enumerate() {
            let start = Instant::now();
            let out = p.plan(env, q_s, q_g, k);
            let time = start.elapsed().as_secs_f64();
            let (success, length, reason) = match out {
                Ok(r) => (r.success, r.length.to_f64_lossy(), r.failure_reason.as_str().to_string()),
                Err(Error::Numerical(_)) => (false, 0.0, FailureReason::Numerical.as_str().to_string()),
                Err(e) => return Err(e),
            };
            queries.push(QueryRecord {
                method: p.name().to_string(),
                query: k,
                start: [q_s[0].to_f64_lossy(), q_s[1].to_f64_lossy()],
                goal: [q_g[0].to_f64_lossy(), q_g[1].to_f64_lossy()],
                success,
                time,
                length: if success { length } else { f64::NAN },
                failure_reason: reason,
            });
        }
    }
    let methods = planners.iter().map(|p| MethodStats::from_records(p.name(), &queries)).collect();
    Ok(EvalReport {
        env_id: env_id.to_string(),
        seed,
        n_pairs: pairs.len(),
        methods,
        queries,
    })
}
