use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::{evaluate_pairs, LearnedPlanner};
use crate::decomposition::Decomposition;
use crate::field::FieldModel;
use crate::gridworld::Environment;
use crate::siren::EncoderArch;
use crate::trainer::{fit, TrainConfig, TrainLog};
use crate::{Config2, Result};

/// Single-encoder architecture whose parameter count is closest to `target`
/// (only the hidden width changes).
pub fn matched_hidden(arch: &EncoderArch, target: usize) -> EncoderArch {
    let mut best = (usize::MAX, *arch);
    for h in 1..=4096 {
        let a = EncoderArch { hidden: h, ..*arch };
        let gap = a.param_count().abs_diff(target);
        if gap < best.0 {
            best = (gap, a);
        }
        if a.param_count() > target {
            break;
        }
    }
    best.1
}

/// Trains with the run's settings but the given decomposition, architecture and seed.
pub fn train_variant(
    env: &Environment<f64>,
    run: &RunConfig,
    n_per_axis: usize,
    arch: &EncoderArch,
    seed: u64,
) -> Result<(FieldModel<f64>, TrainLog)> {
    let d = Decomposition::build(env.bounds(), n_per_axis, run.decomposition.overlap)?;
    let cfg = TrainConfig { seed, ..run.train.clone() };
    fit(env, &d, arch, &run.generator, &cfg, |_, _| {})
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub tier: String,
    pub n_per_axis: usize,
    pub hidden: usize,
    pub params: usize,
    pub seed: u64,
    pub sr: f64,
    pub mean_len: f64,
    pub epoch_seconds: f64,
}

/// Trains one variant and scores its learned planner on `pairs`.
pub fn ablation_row(
    env: &Environment<f64>,
    run: &RunConfig,
    tier: &str,
    n_per_axis: usize,
    arch: &EncoderArch,
    seed: u64,
    pairs: &[(Config2<f64>, Config2<f64>)],
) -> Result<(AblationRow, FieldModel<f64>)> {
    let (model, log) = train_variant(env, run, n_per_axis, arch, seed)?;
    let planner = LearnedPlanner {
        model: &model,
        cfg: run.plan.clone(),
    };
    let report = evaluate_pairs(env, "ablation", &[&planner], pairs, run.eval.seed)?;
    let m = &report.methods[0];
    let row = AblationRow {
        tier: tier.to_string(),
        n_per_axis,
        hidden: arch.hidden,
        params: model.param_count(),
        seed,
        sr: m.sr,
        mean_len: m.mean_len,
        epoch_seconds: log.mean_epoch_seconds(),
    };
    Ok((row, model))
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("tier,n_per_axis,hidden,params,seed,sr,mean_len,epoch_seconds\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.tier, r.n_per_axis, r.hidden, r.params, r.seed, r.sr, r.mean_len, r.epoch_seconds
        );
    }
    s
}
