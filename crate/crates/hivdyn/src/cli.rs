//! Command-line workflows: simulate, fit, summarize, analyze, efficacy.
//!
//! Every command is deterministic given its configuration and seed. Settings
//! come from three layers, strongest last applied first: command-line flags
//! beat the optional `--config` file, which beats built-in defaults. The
//! config file is plain `key = value` text with `#` comments. Progress goes
//! to standard error; data only to files or standard output.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    load_chain, load_dataset, write_chain, write_dataset, write_trajectories, DatasetPaths, ViralLoadUnit,
};
use crate::error::{Error, Result};
use crate::inference::{summarize, ChainSummary, Hyperpriors, McmcConfig};
use crate::ode::IntegratorConfig;
use crate::study::{classify_response, compare_groups, compute_trajectories, correlate_baseline, simulate_cohort,
    CohortDesign, ResponseStatus, SubjectTruth};
use crate::{N_PARAMS, PARAM_NAMES};

/// Simulates and fits long-term viral-load dynamics under time-varying
/// drug efficacy.
#[derive(Debug, Parser)]
#[command(name = "hivdyn", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with known ground truth.
    Simulate(SimulateArgs),
    /// Fit the hierarchical model to a dataset and write chain files.
    Fit(FitArgs),
    /// Summarize previously written chain files.
    Summarize(SummarizeArgs),
    /// Correlation and response-group analyses from a chain and dataset.
    Analyze(AnalyzeArgs),
    /// Drug-efficacy time course for one subject's inputs.
    Efficacy(EfficacyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory for the dataset files and truth file.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Optional key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of subjects to simulate.
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Measurement-error standard deviation on the log10 scale.
    #[arg(long)]
    pub error_sd: Option<f64>,
    /// Probability a subject develops resistance on one drug.
    #[arg(long)]
    pub resistance_fraction: Option<f64>,
    /// Per-interval probability of an adherence lapse.
    #[arg(long)]
    pub lapse_probability: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Directory holding the dataset files.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Directory for chain files, summary, and trajectories.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Optional key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<u64>,
    /// Post-burn-in sweeps.
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub thin: Option<u64>,
    /// Worker threads for subject updates; 0 uses all cores. Draws do not
    /// depend on this.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Shortened schedule (burn-in 5000, 20000 iterations, thin 5) for
    /// desk-scale runs; explicit schedule flags still win.
    #[arg(long)]
    pub short: bool,
    /// Treat viral-load values in the input as raw copies/mL.
    #[arg(long)]
    pub raw_copies: bool,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Directory holding chain files written by fit.
    #[arg(long)]
    pub chain_dir: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory holding chain files written by fit.
    #[arg(long)]
    pub chain_dir: PathBuf,
    /// Directory holding the dataset the chain was fitted to.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Directory for the correlation, comparison, and status tables.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Treat viral-load values in the input as raw copies/mL.
    #[arg(long)]
    pub raw_copies: bool,
}

#[derive(Debug, Args)]
pub struct EfficacyArgs {
    /// Directory holding the dataset files.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Subject whose inputs to evaluate.
    #[arg(long)]
    pub subject: String,
    /// Efficacy midpoint parameter; defaults to the prior center exp(4).
    #[arg(long)]
    pub phi: Option<f64>,
    /// Last day of the series.
    #[arg(long, default_value_t = 168.0)]
    pub horizon: f64,
    /// Grid spacing in days.
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Settings accepted in a `--config` file. Any key may be omitted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub burn_in: Option<u64>,
    pub iterations: Option<u64>,
    pub thin: Option<u64>,
    pub workers: Option<usize>,
    pub subjects: Option<usize>,
    pub error_sd: Option<f64>,
    pub resistance_fraction: Option<f64>,
    pub lapse_probability: Option<f64>,
}

/// Parses `key = value` lines; `#` starts a comment and blank lines are
/// skipped. Unknown keys are errors.
pub fn parse_config_file(path: &Path) -> Result<FileConfig> {
    let content = std::fs::read_to_string(path)?;
    let mut config = FileConfig::default();
    for (i, raw) in content.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.into(), line: i + 1, msg };
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
        macro_rules! set {
            ($field:ident, $ty:ty) => {
                config.$field = Some(
                    value
                        .parse::<$ty>()
                        .map_err(|_| err(format!("cannot parse {key} value {value:?}")))?,
                )
            };
        }
        match key {
            "seed" => set!(seed, u64),
            "burn_in" => set!(burn_in, u64),
            "iterations" => set!(iterations, u64),
            "thin" => set!(thin, u64),
            "workers" => set!(workers, usize),
            "subjects" => set!(subjects, usize),
            "error_sd" => set!(error_sd, f64),
            "resistance_fraction" => set!(resistance_fraction, f64),
            "lapse_probability" => set!(lapse_probability, f64),
            other => return Err(err(format!("unknown configuration key {other:?}"))),
        }
    }
    Ok(config)
}

fn load_file_config(path: Option<&PathBuf>) -> Result<FileConfig> {
    path.map(|p| parse_config_file(p)).transpose().map(Option::unwrap_or_default)
}

/// Dispatches a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Fit(args) => cmd_fit(&args),
        Command::Summarize(args) => cmd_summarize(&args),
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Efficacy(args) => cmd_efficacy(&args),
    }
}

fn write_or_stdout(out: Option<&PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

/// Generates a cohort and writes the dataset plus a `truth.csv` with the
/// generating log parameters and redraw counts.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let file = load_file_config(args.config.as_ref())?;
    let seed = args.seed.or(file.seed).unwrap_or(1);
    let mut design = CohortDesign::default();
    if let Some(n) = args.subjects.or(file.subjects) {
        design.n_subjects = n;
    }
    if let Some(sd) = args.error_sd.or(file.error_sd) {
        design.error_sd = sd;
    }
    if let Some(p) = args.resistance_fraction.or(file.resistance_fraction) {
        design.resistance_fraction = p;
    }
    if let Some(p) = args.lapse_probability.or(file.lapse_probability) {
        design.lapse_probability = p;
    }

    let cohort = simulate_cohort(&design, seed)?;
    write_dataset(&args.out_dir, &cohort.records)?;
    std::fs::write(args.out_dir.join("truth.csv"), render_truth(&cohort.truth, seed))?;
    eprintln!("simulated {} subjects into {}", cohort.records.len(), args.out_dir.display());
    Ok(())
}

fn render_truth(truth: &[SubjectTruth], seed: u64) -> String {
    let mut out = format!("# seed={seed}\nsubject");
    for p in PARAM_NAMES {
        out.push_str(&format!(",log_{p}"));
    }
    out.push_str(",redraws\n");
    let mut rows: Vec<&SubjectTruth> = truth.iter().collect();
    rows.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    for t in rows {
        out.push_str(&t.subject_id);
        for j in 0..N_PARAMS {
            out.push_str(&format!(",{}", t.log_params[j]));
        }
        out.push_str(&format!(",{}\n", t.redraws));
    }
    out
}

fn unit_of(raw_copies: bool) -> ViralLoadUnit {
    if raw_copies {
        ViralLoadUnit::CopiesPerMl
    } else {
        ViralLoadUnit::Log10CopiesPerMl
    }
}

/// Fits the model and writes chain files, a summary, and fitted
/// trajectories. On a chain abort the retained draws are still flushed and
/// the error is returned.
pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let file = load_file_config(args.config.as_ref())?;
    let defaults = McmcConfig::default();
    let (short_burn, short_iter, short_thin) = (5000, 20_000, 5);
    let config = McmcConfig {
        burn_in: args
            .burn_in
            .or_else(|| args.short.then_some(short_burn))
            .or(file.burn_in)
            .unwrap_or(defaults.burn_in),
        iterations: args
            .iterations
            .or_else(|| args.short.then_some(short_iter))
            .or(file.iterations)
            .unwrap_or(defaults.iterations),
        thin: args.thin.or_else(|| args.short.then_some(short_thin)).or(file.thin).unwrap_or(defaults.thin),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        workers: args.workers.or(file.workers).unwrap_or(0),
        adapt: true,
    };
    let priors = Hyperpriors::default();

    let records = load_dataset(&DatasetPaths::in_dir(&args.data_dir), unit_of(args.raw_copies))?;
    std::fs::create_dir_all(&args.out_dir)?;

    let stderr = std::io::stderr();
    let progress = move |done: u64, total: u64| {
        if done % 1000 == 0 || done == total {
            let mut err = stderr.lock();
            let _ = writeln!(err, "sweep {done}/{total}");
        }
    };

    let chain = match crate::inference::run_chain_with(
        &crate::inference::OdeModel::default(),
        &records,
        &priors,
        &config,
        progress,
    ) {
        Ok(chain) => chain,
        Err(abort) => {
            write_chain(&args.out_dir, &abort.partial)?;
            eprintln!(
                "chain aborted at sweep {}; {} retained draws flushed to {}",
                abort.iteration,
                abort.partial.population.len(),
                args.out_dir.display()
            );
            return Err(abort.source);
        }
    };

    write_chain(&args.out_dir, &chain)?;
    let summary = summarize(&chain)?;
    std::fs::write(args.out_dir.join("summary.txt"), render_summary(&summary, &chain.config, &priors))?;
    let trajectories = compute_trajectories(&records, &summary.subjects, &IntegratorConfig::default())?;
    write_trajectories(&args.out_dir.join("trajectories.csv"), &trajectories)?;
    eprintln!("chain written to {}", args.out_dir.display());
    Ok(())
}

fn join_row(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(",")
}

fn render_summary(summary: &ChainSummary, config: &McmcConfig, priors: &Hyperpriors) -> String {
    let mut out = String::new();
    out.push_str("# chain summary\n");
    out.push_str(&format!("# seed={}\n", config.seed));
    out.push_str(&format!(
        "# schedule: burn_in={} iterations={} thin={} retained={}\n",
        config.burn_in, config.iterations, config.thin, summary.retained
    ));
    out.push_str(&format!(
        "# hyperpriors: error_shape={} error_scale={} precision_df={}\n",
        priors.error_shape, priors.error_scale, priors.precision_df
    ));
    out.push_str(&format!(
        "# mean_loc={}\n",
        (0..N_PARAMS).map(|j| priors.mean_loc[j].to_string()).collect::<Vec<_>>().join(",")
    ));
    out.push_str(&format!(
        "# mean_cov_diag={}\n",
        (0..N_PARAMS).map(|j| priors.mean_cov[(j, j)].to_string()).collect::<Vec<_>>().join(",")
    ));
    out.push_str(&format!(
        "# precision_scale_diag={}\n",
        (0..N_PARAMS).map(|j| priors.precision_scale[(j, j)].to_string()).collect::<Vec<_>>().join(",")
    ));
    out.push_str(&format!("# subjects={}\n\n", summary.subjects.len()));

    out.push_str("population estimates (natural scale)\n");
    out.push_str(&format!("row,{}\n", PARAM_NAMES.join(",")));
    out.push_str(&format!("PM,{}\n", join_row(summary.population.iter().map(|p| p.mean))));
    out.push_str(&format!("L_CI,{}\n", join_row(summary.population.iter().map(|p| p.lower))));
    out.push_str(&format!("R_CI,{}\n", join_row(summary.population.iter().map(|p| p.upper))));
    out.push_str(&format!(
        "\nerror_sd: PM={:.4} L_CI={:.4} R_CI={:.4}\n",
        summary.error_sd.mean, summary.error_sd.lower, summary.error_sd.upper
    ));

    if !summary.spread.is_empty() {
        out.push_str("\nindividual estimate spread (natural scale)\n");
        out.push_str("parameter,min,median,max,mean,sd,cv_percent\n");
        for s in &summary.spread {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.1}\n",
                s.name, s.min, s.median, s.max, s.mean, s.sd, s.cv * 100.0
            ));
        }

        out.push_str("\nsubject posterior means (natural scale)\n");
        out.push_str(&format!("subject,{}\n", PARAM_NAMES.join(",")));
        for s in &summary.subjects {
            out.push_str(&format!("{},{}\n", s.subject_id, join_row(s.mean_natural.iter().copied())));
        }
    }
    out
}

/// Reads chain files and writes the summary to a file or standard output.
pub fn cmd_summarize(args: &SummarizeArgs) -> Result<()> {
    let chain = load_chain(&args.chain_dir)?;
    let summary = summarize(&chain)?;
    write_or_stdout(args.out.as_ref(), &render_summary(&summary, &chain.config, &Hyperpriors::default()))
}

/// Writes baseline-correlation, group-comparison, and response-status
/// tables computed from a chain and its dataset.
pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let chain = load_chain(&args.chain_dir)?;
    let summary = summarize(&chain)?;
    let records = load_dataset(&DatasetPaths::in_dir(&args.data_dir), unit_of(args.raw_copies))?;
    std::fs::create_dir_all(&args.out_dir)?;

    let statuses: Vec<(String, ResponseStatus)> =
        records.iter().map(|r| (r.subject_id.clone(), classify_response(r))).collect();
    let mut status_table = format!("# seed={}\nsubject,status\n", chain.seed);
    for (id, status) in &statuses {
        let label = match status {
            ResponseStatus::Success => "success",
            ResponseStatus::Failure => "failure",
            ResponseStatus::Missing => "missing",
        };
        status_table.push_str(&format!("{id},{label}\n"));
    }
    std::fs::write(args.out_dir.join("statuses.csv"), status_table)?;

    let (correlations, missing_cd4) = correlate_baseline(&summary.subjects, &records)?;
    let mut corr_table = format!("# seed={}\n# excluded_missing_cd4={missing_cd4}\n", chain.seed);
    corr_table.push_str("parameter,factor,rho,p_value,n\n");
    for row in &correlations {
        corr_table.push_str(&format!(
            "{},{},{:.4},{:.4},{}\n",
            row.parameter, row.factor, row.rho, row.p_value, row.n
        ));
    }
    std::fs::write(args.out_dir.join("correlations.csv"), corr_table)?;

    let (comparisons, missing_status) = compare_groups(&summary.subjects, &statuses)?;
    let mut cmp_table = format!("# seed={}\n# excluded_missing_status={missing_status}\n", chain.seed);
    cmp_table.push_str("parameter,rank_sum,p_value,n_success,n_failure\n");
    for row in &comparisons {
        cmp_table.push_str(&format!(
            "{},{},{:.4},{},{}\n",
            row.parameter, row.statistic, row.p_value, row.n_success, row.n_failure
        ));
    }
    std::fs::write(args.out_dir.join("comparisons.csv"), cmp_table)?;
    eprintln!(
        "analysis written to {} ({} subjects, {missing_status} missing status)",
        args.out_dir.display(),
        records.len()
    );
    Ok(())
}

/// Writes the efficacy time course (IC50, adherence, inhibitory quotient,
/// combined potency, and efficacy) for one subject's inputs.
pub fn cmd_efficacy(args: &EfficacyArgs) -> Result<()> {
    if !(args.step > 0.0 && args.step.is_finite()) {
        return Err(Error::Config(format!("grid step {} must be positive", args.step)));
    }
    if !(args.horizon >= 0.0 && args.horizon.is_finite()) {
        return Err(Error::Config(format!("horizon {} must be nonnegative", args.horizon)));
    }
    let phi = args.phi.unwrap_or_else(|| 4f64.exp());
    let records = load_dataset(&DatasetPaths::in_dir(&args.data_dir), ViralLoadUnit::Log10CopiesPerMl)?;
    let record = records
        .iter()
        .find(|r| r.subject_id == args.subject)
        .ok_or_else(|| Error::Config(format!("subject {:?} not in the dataset", args.subject)))?;

    let mut out = String::from("day,ic50_1,ic50_2,adherence_1,adherence_2,iq_1,iq_2,potency,gamma\n");
    let steps = (args.horizon / args.step).floor() as usize;
    for k in 0..=steps {
        let t = k as f64 * args.step;
        let e = &record.efficacy;
        let gamma = e.gamma(phi, t)?;
        out.push_str(&format!(
            "{t},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            e.drugs[0].ic50.value_at(t),
            e.drugs[1].ic50.value_at(t),
            e.drugs[0].adherence.value_at(t),
            e.drugs[1].adherence.value_at(t),
            e.drugs[0].inhibitory_quotient(t),
            e.drugs[1].inhibitory_quotient(t),
            e.potency(t),
            gamma
        ));
    }
    write_or_stdout(args.out.as_ref(), &out)
}
