//! Nonparametric bootstrap of the weighting estimators on a fixed dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::montecarlo::{evaluate_methods, run_indexed};
use super::{MethodSpec, MonteCarloSummary, ReplicationResult};
use crate::error::{KdbError, Result};
use crate::model::{Dataset, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resampling {
    /// Draw `n` rows from the whole sample; group sizes vary.
    Pooled,
    /// Draw `n1` treated and `n0` control rows separately.
    WithinGroup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub b: usize,
    pub methods: Vec<MethodSpec>,
    pub target: Target,
    pub seed: u64,
    pub resampling: Resampling,
    /// Extra draws allowed when a pooled resample misses a group.
    pub max_redraws: usize,
    pub jobs: usize,
}

impl BootstrapConfig {
    pub fn new(b: usize, methods: Vec<MethodSpec>, target: Target, seed: u64) -> Self {
        BootstrapConfig { b, methods, target, seed, resampling: Resampling::Pooled, max_redraws: 100, jobs: 1 }
    }
}

fn resample(data: &Dataset, cfg: &BootstrapConfig, index: usize) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let n = data.n();
    match cfg.resampling {
        Resampling::Pooled => {
            let mut last = KdbError::EmptySample;
            for _ in 0..=cfg.max_redraws {
                let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                match data.select_rows(&rows) {
                    Ok(d) => return Ok(d),
                    Err(e @ KdbError::EmptyGroup { .. }) => last = e,
                    Err(e) => return Err(e),
                }
            }
            Err(last)
        }
        Resampling::WithinGroup => {
            let pick = |idx: &[usize], rng: &mut ChaCha8Rng| -> Vec<usize> {
                (0..idx.len()).map(|_| idx[rng.gen_range(0..idx.len())]).collect()
            };
            let mut rows = pick(data.treated_indices(), &mut rng);
            rows.extend(pick(data.control_indices(), &mut rng));
            data.select_rows(&rows)
        }
    }
}

/// Re-estimate every method on `b` resamples. Each method's reference
/// value is its own full-sample estimate, NaN if that estimate fails.
pub fn bootstrap(data: &Dataset, cfg: &BootstrapConfig) -> Result<(MonteCarloSummary, Vec<ReplicationResult>)> {
    if cfg.b < 2 {
        return Err(KdbError::InvalidArgument(format!("bootstrap needs at least 2 resamples, got {}", cfg.b)));
    }
    if cfg.methods.is_empty() {
        return Err(KdbError::InvalidArgument("no methods requested".into()));
    }
    let truths: Vec<f64> = evaluate_methods(data, &cfg.methods, cfg.target, None, None)
        .into_iter()
        .map(|r| r.map(|m| m.estimate).unwrap_or(f64::NAN))
        .collect();
    let results = run_indexed(cfg.b, cfg.jobs, |i| match resample(data, cfg, i) {
        Ok(d) => ReplicationResult {
            rep: i,
            generation_failed: false,
            methods: evaluate_methods(&d, &cfg.methods, cfg.target, None, None),
        },
        Err(e) => ReplicationResult {
            rep: i,
            generation_failed: true,
            methods: cfg.methods.iter().map(|_| Err(e.clone())).collect(),
        },
    })?;
    let summary = MonteCarloSummary::from_results(cfg.target, &cfg.methods, Vec::new(), &results, &truths);
    Ok((summary, results))
}
