//! Replicated estimation over a simulation design.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::kang_schafer::kang_schafer_with_rng;
use super::sim2::sim2_with_rng;
use super::{KangSchaferConfig, Sim2Config, SimulatedData};
use crate::balancing::{estimate, solve_weights, BalanceScheme, MomentConstraints};
use crate::baselines::{
    fit_propensity_logistic, ipw_ate_weights, ipw_att_weights, ipw_att_weights_normalized, oracle_ate,
    oracle_att, unadjusted_weights, PropensityModel,
};
use crate::diagnostics::{balance_report, estimator_metrics, per_covariate_asmd};
use crate::error::{KdbError, Result};
use crate::kernel::{median_bandwidth, Bandwidth};
use crate::model::{BalanceReport, BalanceWeights, Dataset, EstimateReport, Target};

#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    KangSchafer(KangSchaferConfig),
    Sim2(Sim2Config),
}

impl Design {
    pub fn seed(&self) -> u64 {
        match self {
            Design::KangSchafer(c) => c.seed,
            Design::Sim2(c) => c.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Design::KangSchafer(c) => c.validate(),
            Design::Sim2(c) => c.validate(),
        }
    }

    /// Dataset for replication `rep`: the base seed selects the key and the
    /// replication index selects the ChaCha stream.
    pub fn generate_replication(&self, rep: usize) -> Result<SimulatedData> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed());
        rng.set_stream(rep as u64);
        match self {
            Design::KangSchafer(c) => kang_schafer_with_rng(c, &mut rng),
            Design::Sim2(c) => sim2_with_rng(c, &mut rng),
        }
    }

    /// Hidden covariates whose balance is reported in summaries.
    pub fn reported_hidden(&self) -> Vec<String> {
        match self {
            Design::KangSchafer(_) => Vec::new(),
            Design::Sim2(_) => vec!["X5".into(), "X6".into()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Unadjusted,
    /// Inverse propensity weights; odds weights for ATT.
    Ipw,
    /// Odds weights normalized on the control side; same as `Ipw` for ATE.
    IpwNormalized,
    Kdbc,
    Kdm1,
    Oracle,
}

impl MethodKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unad" | "unadjusted" => Ok(MethodKind::Unadjusted),
            "ipw" => Ok(MethodKind::Ipw),
            "ipw-norm" | "ipw_norm" => Ok(MethodKind::IpwNormalized),
            "kdbc" => Ok(MethodKind::Kdbc),
            "kdm1" => Ok(MethodKind::Kdm1),
            "oracle" => Ok(MethodKind::Oracle),
            other => Err(KdbError::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MethodKind::Unadjusted => "UnAD",
            MethodKind::Ipw => "IPW",
            MethodKind::IpwNormalized => "IPW_NORM",
            MethodKind::Kdbc => "KDBC",
            MethodKind::Kdm1 => "KDM1",
            MethodKind::Oracle => "Oracle",
        }
    }

    pub fn uses_lambda(self) -> bool {
        matches!(self, MethodKind::Kdbc | MethodKind::Kdm1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSpec {
    pub kind: MethodKind,
    pub lambda: f64,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        MethodSpec { kind, lambda: 0.0 }
    }

    /// One spec per kind, with kernel methods repeated over `lambdas`.
    pub fn expand(kinds: &[MethodKind], lambdas: &[f64]) -> Vec<MethodSpec> {
        let mut out = Vec::new();
        for &kind in kinds {
            if kind.uses_lambda() && !lambdas.is_empty() {
                out.extend(lambdas.iter().map(|&lambda| MethodSpec { kind, lambda }));
            } else {
                out.push(MethodSpec::new(kind));
            }
        }
        out
    }

    fn scheme(&self, target: Target) -> Option<BalanceScheme> {
        let moments = match self.kind {
            MethodKind::Kdbc => MomentConstraints::None,
            MethodKind::Kdm1 => MomentConstraints::FirstMoment,
            _ => return None,
        };
        Some(BalanceScheme::new(target, moments, self.lambda))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig {
    pub design: Design,
    pub methods: Vec<MethodSpec>,
    pub target: Target,
    pub reps: usize,
    /// Worker threads; the output does not depend on it.
    pub jobs: usize,
}

/// One method's outcome on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct RepMethodResult {
    pub estimate: f64,
    /// Absent for the oracle, which uses no weights, and when the
    /// diagnostics are undefined on the replication.
    pub balance: Option<BalanceReport>,
    pub hidden_asmd: Vec<f64>,
    /// `|term1 + term2 + term3 - (τ̂ - τ)|`, zero for the oracle.
    pub identity_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub rep: usize,
    /// Whether the design itself failed, in which case every method
    /// carries that error.
    pub generation_failed: bool,
    pub methods: Vec<std::result::Result<RepMethodResult, KdbError>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub spec: MethodSpec,
    /// `None` when fewer than two replications succeeded.
    pub report: Option<EstimateReport>,
    /// Field-wise average over successful replications.
    pub balance: Option<BalanceReport>,
    pub hidden_asmd: Vec<f64>,
    pub successes: usize,
    pub failures: usize,
    pub max_identity_error: f64,
    pub first_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub target: Target,
    pub replications: usize,
    /// Replications whose dataset could not be generated.
    pub failed_replications: usize,
    pub hidden_names: Vec<String>,
    pub methods: Vec<MethodSummary>,
}

struct Context<'a> {
    data: &'a Dataset,
    bw: Result<Bandwidth>,
    target: Target,
    model: Option<std::result::Result<PropensityModel, KdbError>>,
}

impl Context<'_> {
    fn propensity(&mut self) -> Result<&PropensityModel> {
        if self.model.is_none() {
            self.model = Some(fit_propensity_logistic(self.data));
        }
        self.model.as_ref().unwrap().as_ref().map_err(Clone::clone)
    }

    fn weights(&mut self, spec: &MethodSpec) -> Result<BalanceWeights> {
        if let Some(scheme) = spec.scheme(self.target) {
            let bw = self.bw.clone()?;
            return solve_weights(self.data, &scheme, bw);
        }
        let data = self.data;
        let target = self.target;
        match spec.kind {
            MethodKind::Unadjusted => Ok(unadjusted_weights(data)),
            MethodKind::Ipw => {
                let m = self.propensity()?;
                match target {
                    Target::Ate => ipw_ate_weights(m, data),
                    Target::Att => ipw_att_weights(m, data),
                }
            }
            MethodKind::IpwNormalized => {
                let m = self.propensity()?;
                match target {
                    Target::Ate => ipw_ate_weights(m, data),
                    Target::Att => ipw_att_weights_normalized(m, data),
                }
            }
            _ => unreachable!("kernel and oracle methods are handled elsewhere"),
        }
    }
}

/// Weights of one method on `data`, using the median-heuristic bandwidth
/// for kernel methods. The oracle has no weights.
pub fn method_weights(data: &Dataset, spec: &MethodSpec, target: Target) -> Result<BalanceWeights> {
    if spec.kind == MethodKind::Oracle {
        return Err(KdbError::InvalidArgument("the oracle estimator has no weights".into()));
    }
    let bw = median_bandwidth(data.x());
    Context { data, bw, target, model: None }.weights(spec)
}

/// Weights, estimate and diagnostics of every method on one dataset.
pub(crate) fn evaluate_methods(
    data: &Dataset,
    methods: &[MethodSpec],
    target: Target,
    hidden: Option<&Dataset>,
    bias: Option<(&SimulatedData, f64)>,
) -> Vec<Result<RepMethodResult>> {
    let bw = median_bandwidth(data.x());
    let mut ctx = Context { data, bw: bw.clone(), target, model: None };
    methods
        .iter()
        .map(|spec| {
            if spec.kind == MethodKind::Oracle {
                let estimate = match target {
                    Target::Ate => oracle_ate(data)?,
                    Target::Att => oracle_att(data)?,
                };
                return Ok(RepMethodResult { estimate, balance: None, hidden_asmd: Vec::new(), identity_error: 0.0 });
            }
            let w = ctx.weights(spec)?;
            let est = estimate(data, &w)?;
            let balance = bw.as_ref().ok().and_then(|&bw| balance_report(data, &w, bw).ok());
            let hidden_asmd = hidden.and_then(|h| per_covariate_asmd(h, &w).ok()).unwrap_or_default();
            let identity_error = match bias {
                Some((sim, tau)) => (sim.bias_terms(&w)?.total() - (est - tau)).abs(),
                None => 0.0,
            };
            Ok(RepMethodResult { estimate: est, balance, hidden_asmd, identity_error })
        })
        .collect()
}

fn run_replication(cfg: &MonteCarloConfig, rep: usize, reported_hidden: bool) -> ReplicationResult {
    let sim = match cfg.design.generate_replication(rep) {
        Ok(s) => s,
        Err(e) => {
            return ReplicationResult {
                rep,
                generation_failed: true,
                methods: cfg.methods.iter().map(|_| Err(e.clone())).collect(),
            }
        }
    };
    let hidden = if reported_hidden { sim.hidden_dataset().ok() } else { None };
    let methods = evaluate_methods(&sim.data, &cfg.methods, cfg.target, hidden.as_ref(), Some((&sim, sim.tau)));
    ReplicationResult { rep, generation_failed: false, methods }
}

pub(crate) fn run_indexed<T, F>(n: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| KdbError::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()))
}

/// Run `reps` replications and summarize each method against the design's
/// population effect.
pub fn monte_carlo(cfg: &MonteCarloConfig) -> Result<(MonteCarloSummary, Vec<ReplicationResult>)> {
    if cfg.reps < 2 {
        return Err(KdbError::InvalidArgument(format!("reps must be at least 2, got {}", cfg.reps)));
    }
    if cfg.methods.is_empty() {
        return Err(KdbError::InvalidArgument("no methods requested".into()));
    }
    cfg.design.validate()?;
    let hidden_names = cfg.design.reported_hidden();
    let report_hidden = !hidden_names.is_empty();
    let results = run_indexed(cfg.reps, cfg.jobs, |rep| run_replication(cfg, rep, report_hidden))?;
    let truth = match &cfg.design {
        Design::KangSchafer(c) => c.gamma,
        Design::Sim2(c) => c.gamma,
    };
    let truths = vec![truth; cfg.methods.len()];
    let summary = MonteCarloSummary::from_results(cfg.target, &cfg.methods, hidden_names, &results, &truths);
    Ok((summary, results))
}

fn average_balance(reports: &[&BalanceReport]) -> Option<BalanceReport> {
    let first = reports.first()?;
    let k = reports.len() as f64;
    let avg = |f: fn(&BalanceReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / k;
    let d = first.per_covariate_asmd.len();
    Some(BalanceReport {
        rw: avg(|r| r.rw),
        kd: avg(|r| r.kd),
        max_asmd: avg(|r| r.max_asmd),
        mean_asmd: avg(|r| r.mean_asmd),
        med_asmd: avg(|r| r.med_asmd),
        per_covariate_asmd: (0..d)
            .map(|j| reports.iter().map(|r| r.per_covariate_asmd[j]).sum::<f64>() / k)
            .collect(),
        mean_ks: avg(|r| r.mean_ks),
        mean_t: avg(|r| r.mean_t),
    })
}

impl MonteCarloSummary {
    /// Serial aggregation of stored replication results, in replication
    /// order. `truths` holds one target value per method.
    pub fn from_results(
        target: Target,
        methods: &[MethodSpec],
        hidden_names: Vec<String>,
        results: &[ReplicationResult],
        truths: &[f64],
    ) -> MonteCarloSummary {
        let mut summaries = Vec::with_capacity(methods.len());
        for (m, spec) in methods.iter().enumerate() {
            let ok: Vec<&RepMethodResult> = results.iter().filter_map(|r| r.methods[m].as_ref().ok()).collect();
            let first_error = results.iter().find_map(|r| r.methods[m].as_ref().err().map(|e| e.to_string()));
            let estimates: Vec<f64> = ok.iter().map(|r| r.estimate).collect();
            let label = method_label(spec);
            let balances: Vec<&BalanceReport> = ok.iter().filter_map(|r| r.balance.as_ref()).collect();
            let h = hidden_names.len();
            let with_hidden: Vec<&&RepMethodResult> = ok.iter().filter(|r| r.hidden_asmd.len() == h).collect();
            let hidden_asmd = if h > 0 && !with_hidden.is_empty() {
                (0..h)
                    .map(|j| with_hidden.iter().map(|r| r.hidden_asmd[j]).sum::<f64>() / with_hidden.len() as f64)
                    .collect()
            } else {
                Vec::new()
            };
            summaries.push(MethodSummary {
                spec: *spec,
                report: estimator_metrics(&label, &estimates, truths[m]).ok(),
                balance: average_balance(&balances),
                hidden_asmd,
                successes: ok.len(),
                failures: results.len() - ok.len(),
                max_identity_error: ok.iter().map(|r| r.identity_error).fold(0.0, f64::max),
                first_error,
            });
        }
        MonteCarloSummary {
            target,
            replications: results.len(),
            failed_replications: results.iter().filter(|r| r.generation_failed).count(),
            hidden_names,
            methods: summaries,
        }
    }

    pub fn method(&self, kind: MethodKind, lambda: f64) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.spec.kind == kind && m.spec.lambda == lambda)
    }
}

pub(crate) fn method_label(spec: &MethodSpec) -> String {
    spec.kind.label().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ks_config(reps: usize, jobs: usize, methods: &[MethodKind]) -> MonteCarloConfig {
        MonteCarloConfig {
            design: Design::KangSchafer(KangSchaferConfig { n: 60, seed: 21, ..Default::default() }),
            methods: MethodSpec::expand(methods, &[]),
            target: Target::Ate,
            reps,
            jobs,
        }
    }

    #[test]
    fn oracle_has_no_bias_noise_free() {
        let cfg = MonteCarloConfig {
            design: Design::KangSchafer(KangSchaferConfig { n: 40, sigma2_outcome: 0.0, seed: 1, ..Default::default() }),
            methods: vec![MethodSpec::new(MethodKind::Oracle)],
            target: Target::Ate,
            reps: 2,
            jobs: 1,
        };
        let (s, _) = monte_carlo(&cfg).unwrap();
        let r = s.methods[0].report.as_ref().unwrap();
        assert!(r.bias.abs() < 1e-12);
        assert!(r.rmse < 1e-12);
    }

    #[test]
    fn parallel_matches_serial() {
        let kinds = [MethodKind::Unadjusted, MethodKind::Ipw, MethodKind::Kdm1, MethodKind::Oracle];
        let (a, ra) = monte_carlo(&ks_config(6, 1, &kinds)).unwrap();
        let (b, rb) = monte_carlo(&ks_config(6, 4, &kinds)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let truths = vec![20.0; 4];
        let re = MonteCarloSummary::from_results(Target::Ate, &ks_config(6, 1, &kinds).methods, vec![], &ra, &truths);
        assert_eq!(re, a);
        for m in &a.methods {
            assert_eq!(m.successes + m.failures, a.replications);
            assert!(m.max_identity_error <= 1e-10);
        }
    }

    #[test]
    fn replications_differ() {
        let d = Design::Sim2(Sim2Config { n: 30, ..Default::default() });
        let a = d.generate_replication(0).unwrap();
        let b = d.generate_replication(1).unwrap();
        assert_ne!(a.data, b.data);
        assert_eq!(a.data, d.generate_replication(0).unwrap().data);
    }

    #[test]
    fn degenerate_replications_are_counted() {
        let cfg = MonteCarloConfig {
            design: Design::Sim2(Sim2Config { n: 4, p_treat: 0.02, ..Default::default() }),
            methods: vec![MethodSpec::new(MethodKind::Unadjusted)],
            target: Target::Ate,
            reps: 20,
            jobs: 2,
        };
        let (s, _) = monte_carlo(&cfg).unwrap();
        assert!(s.failed_replications > 0);
        assert_eq!(s.methods[0].failures, s.failed_replications);
        assert!(s.methods[0].first_error.as_deref().unwrap().contains("treated"));
    }

    #[test]
    fn sim2_reports_hidden_asmd() {
        let cfg = MonteCarloConfig {
            design: Design::Sim2(Sim2Config { n: 80, seed: 4, ..Default::default() }),
            methods: MethodSpec::expand(&[MethodKind::Kdbc, MethodKind::Unadjusted], &[0.0, 10.0]),
            target: Target::Ate,
            reps: 3,
            jobs: 1,
        };
        assert_eq!(cfg.methods.len(), 3);
        let (s, _) = monte_carlo(&cfg).unwrap();
        assert_eq!(s.hidden_names, vec!["X5", "X6"]);
        for m in &s.methods {
            assert_eq!(m.hidden_asmd.len(), 2);
        }
        assert!(s.method(MethodKind::Kdbc, 10.0).is_some());
    }

    #[test]
    fn rejects_single_replication() {
        assert!(monte_carlo(&ks_config(1, 1, &[MethodKind::Unadjusted])).is_err());
    }

    #[test]
    fn method_names_parse() {
        for (s, k) in [("unad", MethodKind::Unadjusted), ("IPW", MethodKind::Ipw), ("kdm1", MethodKind::Kdm1)] {
            assert_eq!(MethodKind::parse(s).unwrap(), k);
        }
        assert!(MethodKind::parse("kdps").is_err());
    }
}
