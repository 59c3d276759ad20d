//! Command-line front end. `cli_dispatch` returns the process exit code:
//! 0 on success, 1 on usage errors, 2 on data errors and 3 when the
//! solver fails.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::balancing::estimate;
use crate::diagnostics::{balance_report, group_samples, silverman_bandwidth, weighted_density_series, weighted_ecdf};
use crate::error::{KdbError, Result};
use crate::io::{
    csv_columns, format_summary_table, load_config, read_csv, resolve, write_series, write_summary_csv,
    write_weights, CsvSchema, FileConfig,
};
use crate::kernel::median_bandwidth;
use crate::model::{BalanceReport, BalanceWeights, Dataset, Target};
use crate::simlab::{
    bootstrap, method_weights, monte_carlo, BootstrapConfig, CovariateSet, Design, KangSchaferConfig, MethodKind,
    MethodSpec, MonteCarloConfig, Resampling, Sim2Config,
};

#[derive(Debug, Parser)]
#[command(name = "kdb", version, about = "Kernel-distance-based covariate balancing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute balancing weights for a CSV dataset.
    Weights(WeightsArgs),
    /// Weights, treatment effect estimate and balance report.
    Estimate(WeightsArgs),
    /// Monte Carlo study of a simulation design.
    Simulate(SimulateArgs),
    /// Bootstrap the estimators on a CSV dataset.
    Bootstrap(BootstrapArgs),
    /// Balance report and ECDF/density plot data.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    Kdbc,
    Kdm1,
    Ipw,
    IpwNorm,
    Unad,
}

impl SchemeArg {
    fn kind(self) -> MethodKind {
        match self {
            SchemeArg::Kdbc => MethodKind::Kdbc,
            SchemeArg::Kdm1 => MethodKind::Kdm1,
            SchemeArg::Ipw => MethodKind::Ipw,
            SchemeArg::IpwNorm => MethodKind::IpwNormalized,
            SchemeArg::Unad => MethodKind::Unadjusted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TargetArg {
    Ate,
    Att,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Ate => Target::Ate,
            TargetArg::Att => Target::Att,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DesignArg {
    KangSchafer,
    Sim2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SetArg {
    X,
    U,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ResamplingArg {
    Pooled,
    Within,
}

#[derive(Debug, Clone, Args)]
struct DataArgs {
    /// Input CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Treatment column (values 0/1) [default: T].
    #[arg(long)]
    treatment: Option<String>,
    /// Outcome column [default: Y].
    #[arg(long)]
    outcome: Option<String>,
    /// Covariate columns [default: every other column].
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// The file has no header; columns are named 1, 2, ...
    #[arg(long)]
    no_header: bool,
    /// TOML file with default settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct WeightsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Weighting scheme [default: kdm1].
    #[arg(long, value_enum, ignore_case = true)]
    scheme: Option<SchemeArg>,
    /// Estimand [default: ate].
    #[arg(long, value_enum, ignore_case = true)]
    target: Option<TargetArg>,
    /// Ridge toward uniform weights [default: 0].
    #[arg(long)]
    lambda: Option<f64>,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct SimulateArgs {
    /// TOML file with default settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// [default: kang-schafer]
    #[arg(long, value_enum, ignore_case = true)]
    design: Option<DesignArg>,
    /// Units per dataset [default: 200].
    #[arg(long)]
    n: Option<usize>,
    /// Outcome error variance [default: 10].
    #[arg(long)]
    sigma2: Option<f64>,
    /// Potential-outcome error correlation [default: 0].
    #[arg(long)]
    rho: Option<f64>,
    /// Covariates of the treatment model [default: X].
    #[arg(long, value_enum, ignore_case = true)]
    dt: Option<SetArg>,
    /// Covariates of the outcome model [default: X].
    #[arg(long = "do", value_enum, ignore_case = true)]
    do_outcome: Option<SetArg>,
    /// Treatment effect [default: 20, or 10 for sim2].
    #[arg(long)]
    gamma: Option<f64>,
    /// Treatment probability (sim2) [default: 0.5].
    #[arg(long)]
    p_treat: Option<f64>,
    /// Mean shift of X1 and X2 in the control group (sim2) [default: 0.8].
    #[arg(long)]
    alpha1: Option<f64>,
    /// Added to the X1/X2 covariance of 0.5 (sim2) [default: 0.2].
    #[arg(long)]
    alpha2: Option<f64>,
    /// Coefficient of X5 = X1*X2 in the outcome (sim2) [default: 1].
    #[arg(long)]
    alpha3: Option<f64>,
    /// Coefficient of X6 = X3^2 in the outcome (sim2) [default: 2].
    #[arg(long)]
    alpha4: Option<f64>,
    /// Lambdas for kernel methods [default: 0, or 0,1,2,5,10,100 for sim2].
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Replications [default: 500].
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated methods [default: unad,ipw,kdbc,kdm1].
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<MethodKind>>,
    /// Estimand [default: ate].
    #[arg(long, value_enum, ignore_case = true)]
    target: Option<TargetArg>,
    /// Base seed; replication r uses stream r [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads [default: 1].
    #[arg(long)]
    jobs: Option<usize>,
    /// Summary CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct BootstrapArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Resamples [default: 500].
    #[arg(long)]
    b: Option<usize>,
    /// Comma-separated methods [default: unad,ipw,kdbc,kdm1].
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<MethodKind>>,
    /// Estimand [default: ate].
    #[arg(long, value_enum, ignore_case = true)]
    target: Option<TargetArg>,
    /// Ridge for kernel methods [default: 0].
    #[arg(long)]
    lambda: Option<f64>,
    /// [default: pooled]
    #[arg(long, value_enum, ignore_case = true)]
    resampling: Option<ResamplingArg>,
    /// Base seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads [default: 1].
    #[arg(long)]
    jobs: Option<usize>,
    /// Summary CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    weights: WeightsArgs,
    /// Covariates to emit plot data for [default: all].
    #[arg(long, value_delimiter = ',')]
    plot: Option<Vec<String>>,
    /// Grid points for density series.
    #[arg(long, default_value_t = 200)]
    grid: usize,
    /// Directory for plot-data files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_method(s: &str) -> std::result::Result<MethodKind, String> {
    MethodKind::parse(s).map_err(|e| e.to_string())
}

fn usage(msg: impl Into<String>) -> KdbError {
    KdbError::InvalidArgument(msg.into())
}

fn exit_code(e: &KdbError) -> i32 {
    match e {
        KdbError::InvalidArgument(_) | KdbError::SchemeMismatch { .. } => 1,
        KdbError::RankDeficient { .. }
        | KdbError::SingularQ
        | KdbError::NumericalBreakdown(_)
        | KdbError::InfeasibleBalance(_)
        | KdbError::DegenerateWitness => 3,
        _ => 2,
    }
}

fn value_enum<T: ValueEnum>(key: &str, s: Option<String>) -> Result<Option<T>> {
    s.map(|v| T::from_str(&v, true).map_err(|_| usage(format!("config key {key}: unknown value {v:?}"))))
        .transpose()
}

fn config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(FileConfig::default()),
    }
}

fn methods_from(flag: Option<Vec<MethodKind>>, file: Option<Vec<String>>) -> Result<Vec<MethodKind>> {
    let file = file.map(|v| v.iter().map(|s| MethodKind::parse(s)).collect::<Result<Vec<_>>>()).transpose()?;
    let default = vec![MethodKind::Unadjusted, MethodKind::Ipw, MethodKind::Kdbc, MethodKind::Kdm1];
    Ok(resolve(flag, file, default))
}

fn load_data(a: &DataArgs, cfg: &FileConfig) -> Result<Dataset> {
    let path = a
        .csv
        .clone()
        .or_else(|| cfg.csv.clone().map(PathBuf::from))
        .ok_or_else(|| usage("--csv is required"))?;
    if !a.delimiter.is_ascii() {
        return Err(usage("--delimiter must be a single ASCII character"));
    }
    let delimiter = a.delimiter as u8;
    let header = !a.no_header;
    let treatment = resolve(a.treatment.clone(), cfg.treatment.clone(), "T".into());
    let outcome = resolve(a.outcome.clone(), cfg.outcome.clone(), "Y".into());
    let covariates = match a.covariates.clone().or(cfg.covariates.clone()) {
        Some(c) => c,
        None => {
            let f = File::open(&path).map_err(|e| KdbError::Io(format!("{}: {e}", path.display())))?;
            csv_columns(f, delimiter, header)?
                .into_iter()
                .filter(|c| *c != treatment && *c != outcome)
                .collect()
        }
    };
    let schema = CsvSchema {
        treatment_column: treatment,
        outcome_column: outcome,
        covariate_columns: covariates,
        delimiter,
        header,
    };
    read_csv(&path, &schema)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| KdbError::Io(format!("{}: {e}", path.display())))
}

struct Resolved {
    data: Dataset,
    target: Target,
    spec: MethodSpec,
}

fn resolve_weights_args(a: &WeightsArgs) -> Result<Resolved> {
    let cfg = config(&a.data.config)?;
    let data = load_data(&a.data, &cfg)?;
    let scheme = resolve(a.scheme, value_enum("scheme", cfg.scheme.clone())?, SchemeArg::Kdm1);
    let target: Target = resolve(a.target, value_enum("target", cfg.target.clone())?, TargetArg::Ate).into();
    let lambda = resolve(a.lambda, cfg.lambda, 0.0);
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(usage(format!("--lambda must be finite and nonnegative, got {lambda}")));
    }
    Ok(Resolved { data, target, spec: MethodSpec { kind: scheme.kind(), lambda } })
}

fn cmd_weights(a: &WeightsArgs, out: &mut dyn Write) -> Result<()> {
    let r = resolve_weights_args(a)?;
    let w = method_weights(&r.data, &r.spec, r.target)?;
    match &a.out {
        Some(p) => write_weights(create(p)?, &r.data, &w),
        None => write_weights(out, &r.data, &w),
    }
}

fn report_lines(w: &BalanceWeights, est: f64, b: &BalanceReport) -> Vec<(String, f64)> {
    let mut v = vec![
        (w.scheme.target().name().to_string(), est),
        ("rw".into(), b.rw),
        ("KD".into(), b.kd),
        ("maxASMD".into(), b.max_asmd),
        ("meanASMD".into(), b.mean_asmd),
        ("medASMD".into(), b.med_asmd),
        ("meanKS".into(), b.mean_ks),
        ("meanT".into(), b.mean_t),
    ];
    for (k, a) in b.per_covariate_asmd.iter().enumerate() {
        v.push((format!("ASMD[{}]", k + 1), *a));
    }
    v
}

fn print_report(out: &mut dyn Write, scheme: &str, lines: &[(String, f64)]) -> Result<()> {
    writeln!(out, "scheme {scheme}")?;
    for (k, v) in lines {
        writeln!(out, "{k} {v:.5}")?;
    }
    Ok(())
}

fn write_report(path: &Path, lines: &[(String, f64)]) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "key,value")?;
    for (k, v) in lines {
        writeln!(f, "{k},{v}")?;
    }
    f.flush()?;
    Ok(())
}

// Balance diagnostics are a courtesy here; when they are undefined the
// estimate is still reported.
fn cmd_estimate(a: &WeightsArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let r = resolve_weights_args(a)?;
    let w = method_weights(&r.data, &r.spec, r.target)?;
    let est = estimate(&r.data, &w)?;
    let lines = match median_bandwidth(r.data.x()).and_then(|bw| balance_report(&r.data, &w, bw)) {
        Ok(b) => report_lines(&w, est, &b),
        Err(e) => {
            writeln!(err, "warning: balance diagnostics unavailable: {e}")?;
            vec![(w.scheme.target().name().to_string(), est)]
        }
    };
    print_report(out, w.scheme.name(), &lines)?;
    if let Some(p) = &a.out {
        write_report(p, &lines)?;
    }
    Ok(())
}

fn simulate_config(a: &SimulateArgs) -> Result<MonteCarloConfig> {
    let cfg = config(&a.config)?;
    let design = resolve(a.design, value_enum("design", cfg.design.clone())?, DesignArg::KangSchafer);
    let seed = resolve(a.seed, cfg.seed, 0);
    let n = resolve(a.n, cfg.n, 200);
    let sigma2 = resolve(a.sigma2, cfg.sigma2, 10.0);
    let (design, default_grid) = match design {
        DesignArg::KangSchafer => {
            let set = |s: SetArg| if s == SetArg::X { CovariateSet::X } else { CovariateSet::U };
            let dt = resolve(a.dt, value_enum("dt", cfg.dt.clone())?, SetArg::X);
            let dox = resolve(a.do_outcome, value_enum("do_outcome", cfg.do_outcome.clone())?, SetArg::X);
            let ks = KangSchaferConfig {
                n,
                sigma2_outcome: sigma2,
                rho: resolve(a.rho, cfg.rho, 0.0),
                delta_t: set(dt),
                delta_o: set(dox),
                gamma: resolve(a.gamma, cfg.gamma, 20.0),
                seed,
            };
            (Design::KangSchafer(ks), vec![0.0])
        }
        DesignArg::Sim2 => {
            let d = Sim2Config::default();
            let s2 = Sim2Config {
                n,
                p_treat: resolve(a.p_treat, cfg.p_treat, d.p_treat),
                alpha1: resolve(a.alpha1, cfg.alpha1, d.alpha1),
                alpha2: resolve(a.alpha2, cfg.alpha2, d.alpha2),
                alpha3: resolve(a.alpha3, cfg.alpha3, d.alpha3),
                alpha4: resolve(a.alpha4, cfg.alpha4, d.alpha4),
                gamma: resolve(a.gamma, cfg.gamma, d.gamma),
                sigma2_outcome: sigma2,
                lambda_grid: d.lambda_grid.clone(),
                seed,
            };
            (Design::Sim2(s2), d.lambda_grid)
        }
    };
    let grid = resolve(a.lambda_grid.clone(), cfg.lambda_grid.clone(), default_grid);
    if grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(usage("--lambda-grid entries must be finite and nonnegative"));
    }
    let design = match design {
        Design::Sim2(c) => Design::Sim2(Sim2Config { lambda_grid: grid.clone(), ..c }),
        other => other,
    };
    let kinds = methods_from(a.methods.clone(), cfg.methods.clone())?;
    Ok(MonteCarloConfig {
        design,
        methods: MethodSpec::expand(&kinds, &grid),
        target: resolve(a.target, value_enum("target", cfg.target.clone())?, TargetArg::Ate).into(),
        reps: resolve(a.reps, cfg.reps, 500),
        jobs: resolve(a.jobs, cfg.jobs, 1),
    })
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mc = simulate_config(a)?;
    let (summary, _) = monte_carlo(&mc)?;
    write!(out, "{}", format_summary_table(&summary))?;
    if summary.failed_replications > 0 {
        writeln!(err, "{} of {} replications failed", summary.failed_replications, summary.replications)?;
    }
    if let Some(p) = &a.out {
        let mut f = create(p)?;
        write_summary_csv(&mut f, &summary)?;
        f.flush()?;
    }
    Ok(())
}

fn cmd_bootstrap(a: &BootstrapArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = config(&a.data.config)?;
    let data = load_data(&a.data, &cfg)?;
    let kinds = methods_from(a.methods.clone(), cfg.methods.clone())?;
    let lambda = resolve(a.lambda, cfg.lambda, 0.0);
    let resampling = match resolve(a.resampling, value_enum("resampling", cfg.resampling.clone())?, ResamplingArg::Pooled)
    {
        ResamplingArg::Pooled => Resampling::Pooled,
        ResamplingArg::Within => Resampling::WithinGroup,
    };
    let target: Target = resolve(a.target, value_enum("target", cfg.target.clone())?, TargetArg::Ate).into();
    let bc = BootstrapConfig {
        resampling,
        jobs: resolve(a.jobs, cfg.jobs, 1),
        ..BootstrapConfig::new(
            resolve(a.b, cfg.b, 500),
            MethodSpec::expand(&kinds, &[lambda]),
            target,
            resolve(a.seed, cfg.seed, 0),
        )
    };
    let (summary, _) = bootstrap(&data, &bc)?;
    write!(out, "{}", format_summary_table(&summary))?;
    if let Some(p) = &a.out {
        let mut f = create(p)?;
        write_summary_csv(&mut f, &summary)?;
        f.flush()?;
    }
    Ok(())
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn cmd_diagnose(a: &DiagnoseArgs, out: &mut dyn Write) -> Result<()> {
    let r = resolve_weights_args(&a.weights)?;
    let w = method_weights(&r.data, &r.spec, r.target)?;
    let est = estimate(&r.data, &w)?;
    let bw = median_bandwidth(r.data.x())?;
    let b = balance_report(&r.data, &w, bw)?;
    let lines = report_lines(&w, est, &b);
    print_report(out, w.scheme.name(), &lines)?;
    if let Some(p) = &a.weights.out {
        write_report(p, &lines)?;
    }
    let Some(dir) = &a.out_dir else { return Ok(()) };
    std::fs::create_dir_all(dir).map_err(|e| KdbError::Io(format!("{}: {e}", dir.display())))?;
    let names = resolve_covariate_names(&a.weights.data, &r.data)?;
    let chosen: Vec<String> = a.plot.clone().unwrap_or_else(|| names.clone());
    if a.grid < 2 {
        return Err(usage("--grid needs at least 2 points"));
    }
    for name in &chosen {
        let d = names.iter().position(|n| n == name).ok_or_else(|| usage(format!("--plot: unknown covariate {name:?}")))?;
        let (t, c) = group_samples(&r.data, &w, d)?;
        let lo = t.values().iter().chain(c.values()).copied().fold(f64::INFINITY, f64::min);
        let hi = t.values().iter().chain(c.values()).copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = if hi > lo { 0.1 * (hi - lo) } else { 1.0 };
        let grid: Vec<f64> = (0..a.grid)
            .map(|k| lo - pad + (hi - lo + 2.0 * pad) * k as f64 / (a.grid - 1) as f64)
            .collect();
        let stem = file_stem(name);
        for (group, s) in [("treated", &t), ("control", &c)] {
            let ecdf = weighted_ecdf(s).breakpoints();
            write_series(create(&dir.join(format!("ecdf_{stem}_{group}.csv")))?, ("x", "F"), &ecdf)?;
            let h = silverman_bandwidth(s).ok();
            let dens = weighted_density_series(s, &grid, h.or(Some(1.0)))?;
            let pts: Vec<(f64, f64)> = grid.iter().copied().zip(dens).collect();
            write_series(create(&dir.join(format!("density_{stem}_{group}.csv")))?, ("x", "density"), &pts)?;
        }
    }
    Ok(())
}

fn resolve_covariate_names(a: &DataArgs, data: &Dataset) -> Result<Vec<String>> {
    let cfg = config(&a.config)?;
    if let Some(c) = a.covariates.clone().or(cfg.covariates) {
        return Ok(c);
    }
    let path = a.csv.clone().or(cfg.csv.map(PathBuf::from)).ok_or_else(|| usage("--csv is required"))?;
    let treatment = resolve(a.treatment.clone(), cfg.treatment, "T".into());
    let outcome = resolve(a.outcome.clone(), cfg.outcome, "Y".into());
    let f = File::open(&path).map_err(|e| KdbError::Io(format!("{}: {e}", path.display())))?;
    let names: Vec<String> = csv_columns(f, a.delimiter as u8, !a.no_header)?
        .into_iter()
        .filter(|c| *c != treatment && *c != outcome)
        .collect();
    debug_assert_eq!(names.len(), data.d());
    Ok(names)
}

/// Parse `argv` (including the program name) and run, writing to the
/// given streams.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let result = match &cli.command {
        Command::Weights(a) => cmd_weights(a, out),
        Command::Estimate(a) => cmd_estimate(a, out, err),
        Command::Simulate(a) => cmd_simulate(a, out, err),
        Command::Bootstrap(a) => cmd_bootstrap(a, out),
        Command::Diagnose(a) => cmd_diagnose(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Run against the process's standard streams.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let mut out = stdout.lock();
    let mut err = stderr.lock();
    let code = run(argv, &mut out, &mut err);
    let _ = out.flush();
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim_args(extra: &[&str]) -> SimulateArgs {
        let mut argv = vec!["kdb", "simulate"];
        argv.extend_from_slice(extra);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Simulate(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&usage("x")), 1);
        assert_eq!(exit_code(&KdbError::InfeasibleBalance("x".into())), 3);
        assert_eq!(exit_code(&KdbError::Parse { row: 1, column: "a".into(), message: "b".into() }), 2);
        assert_eq!(exit_code(&KdbError::EmptyGroup { group: "treated" }), 2);
    }

    #[test]
    fn simulate_defaults() {
        let mc = simulate_config(&sim_args(&[])).unwrap();
        assert_eq!(mc.reps, 500);
        assert_eq!(mc.jobs, 1);
        assert_eq!(mc.target, Target::Ate);
        assert_eq!(mc.methods.len(), 4);
        match mc.design {
            Design::KangSchafer(c) => assert_eq!(c, KangSchaferConfig::default()),
            _ => panic!(),
        }
        let mc = simulate_config(&sim_args(&["--design", "sim2", "--methods", "kdm1"])).unwrap();
        assert_eq!(mc.methods.len(), 6);
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "reps = 40\nseed = 9\nrho = 0.3\ndt = \"U\"\n").unwrap();
        let p = path.to_str().unwrap();
        let cases: [(&[&str], usize, u64, f64); 3] = [
            (&["--config", p], 40, 9, 0.3),
            (&["--config", p, "--reps", "7", "--rho", "0.1"], 7, 9, 0.1),
            (&["--reps", "7"], 7, 0, 0.0),
        ];
        for (flags, reps, seed, rho) in cases {
            let mc = simulate_config(&sim_args(flags)).unwrap();
            assert_eq!(mc.reps, reps);
            let Design::KangSchafer(c) = mc.design else { panic!() };
            assert_eq!(c.seed, seed);
            assert_eq!(c.rho, rho);
        }
        let mc = simulate_config(&sim_args(&["--config", p])).unwrap();
        let Design::KangSchafer(c) = mc.design else { panic!() };
        assert_eq!(c.delta_t, CovariateSet::U);
    }

    #[test]
    fn usage_error_names_flag() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(["kdb", "simulate", "--methods", "kdps"], &mut out, &mut err);
        assert_eq!(code, 1);
        assert!(String::from_utf8(err).unwrap().contains("--methods"));
        let mut err = Vec::new();
        assert_eq!(run(["kdb", "simulate", "--bogus"], &mut out, &mut err), 1);
        assert!(String::from_utf8(err).unwrap().contains("--bogus"));
        let mut out = Vec::new();
        assert_eq!(run(["kdb", "--help"], &mut out, &mut Vec::new()), 0);
        assert!(!out.is_empty());
    }

    #[test]
    fn missing_csv_is_usage_error() {
        let mut err = Vec::new();
        assert_eq!(run(["kdb", "weights"], &mut Vec::new(), &mut err), 1);
        assert!(String::from_utf8(err).unwrap().contains("--csv"));
    }
}
