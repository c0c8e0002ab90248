//! Command implementations. Inputs and the output directory are checked before
//! any computation, and every file is written after the computation is done.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use lowrank_markov::admm::ConvergenceReport;
use lowrank_markov::chain::{
    count_transitions, neg_log_likelihood, simulate, InitialState, Trajectory, TransitionCounts, TransitionMatrix,
};
use lowrank_markov::dc::DcTrace;
use lowrank_markov::eval::aggregate::{aggregate_states, ClusterResult, DEFAULT_RESTARTS};
use lowrank_markov::eval::benchmark::{
    benchmark_run, fit, sample_size, summarize, write_plot_data, write_rows, write_summary, BenchmarkConfig, Estimate,
    Estimator, LambdaRule, SolverOptions,
};
use lowrank_markov::eval::ingest::{ingest_transitions, read_records, StateIndex};
use lowrank_markov::io::{read_counts, read_trajectory, write_matrix, write_trajectory};
use lowrank_markov::matops::numerical_rank;
use lowrank_markov::synth::{generate, SynthConfig};
use lowrank_markov::Error;
use serde::Serialize;

use crate::config::{FileConfig, Initial, LambdaSection};
use crate::error::CliError;
use crate::{AggregateArgs, BenchmarkArgs, Cli, Command, EstimateArgs, LambdaArgs, SimulateArgs};

pub const MATRIX_FILE: &str = "matrix.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const SIMULATE_META_FILE: &str = "simulate.toml";
pub const ESTIMATE_FILE: &str = "estimate.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const BENCHMARK_FILE: &str = "benchmark.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PLOT_FILE: &str = "plot.csv";
pub const BENCHMARK_META_FILE: &str = "benchmark.toml";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const DESTINATIONS_FILE: &str = "destinations.csv";
pub const AGGREGATE_META_FILE: &str = "aggregate.toml";

pub const TRACE_HEADER: &str = "stage,iter,objective,residual,rank,c";

/// Settings shared by every command.
#[derive(Debug, Clone)]
pub struct Globals {
    pub seed: u64,
    pub out: PathBuf,
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let globals = Globals {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out: cli.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from(".")),
    };
    let threads = cli.threads.or(file.threads);
    if threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let work = move || match cli.command {
        Command::Simulate(a) => cmd_simulate(&globals, &file, &a),
        Command::Estimate(a) => cmd_estimate(&globals, &file, &a),
        Command::Benchmark(a) => cmd_benchmark(&globals, &file, &a),
        Command::Aggregate(a) => cmd_aggregate(&globals, &file, &a),
    };
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {t} threads: {e}")))?
            .install(work),
        None => work(),
    }
}

fn required<T>(v: Option<T>, name: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("missing `{name}` (flag or config key)")))
}

fn pair(v: Option<Vec<f64>>) -> Result<Option<(f64, f64)>, CliError> {
    match v.as_deref() {
        None => Ok(None),
        Some(&[a, b]) => Ok(Some((a, b))),
        Some(other) => Err(CliError::Usage(format!("--imbalance takes two values, got {}", other.len()))),
    }
}

fn estimator(name: &str) -> Result<Estimator, CliError> {
    name.parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

/// Opens an input file, failing before any work is done.
fn open_input(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    if dir.exists() && !dir.is_dir() {
        return Err(CliError::Usage(format!("output path {} is not a directory", dir.display())));
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(&path, e))
}

fn write_toml<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let text = toml::to_string(value).map_err(|e| CliError::Usage(format!("cannot serialize {name}: {e}")))?;
    write_file(dir, name, |w| w.write_all(text.as_bytes()))
}

/// Solver options with the lambda flags applied. `fallback` is the rule used
/// when neither the flags nor the config name one.
fn solver_options(file: &FileConfig, flags: &LambdaArgs, fallback: LambdaRule) -> Result<SolverOptions, CliError> {
    let mut opts = file.solver.options()?;
    let section = LambdaSection {
        rule: flags.lambda_rule.clone().or_else(|| file.solver.lambda.rule.clone()),
        value: flags.lambda_value.or(file.solver.lambda.value),
        ..file.solver.lambda.clone()
    };
    opts.lambda = if section.rule.is_none() { fallback } else { section.rule()? };
    Ok(opts)
}

/// Rule used when the data carry no trajectory to cross-validate on.
fn counts_only_rule() -> LambdaRule {
    LambdaRule::Scaled(1.0)
}

#[derive(Debug, Serialize)]
struct SimulateMeta {
    seed: u64,
    p: usize,
    r: usize,
    n: usize,
    imbalance: Option<[f64; 2]>,
    initial: Initial,
    matrix: String,
    trajectory: String,
}

pub fn cmd_simulate(g: &Globals, file: &FileConfig, a: &SimulateArgs) -> Result<(), CliError> {
    let s = &file.simulate;
    let p = required(a.p.or(s.p), "p")?;
    let r = required(a.r.or(s.r), "r")?;
    let n = required(a.n.or(s.n), "n")?;
    if n == 0 {
        return Err(CliError::Usage("n must be at least 1".into()));
    }
    let imbalance = pair(a.imbalance.clone())?.or(s.imbalance.map(|[x, y]| (x, y)));
    let initial = match &a.initial {
        Some(text) => match text.parse::<usize>() {
            Ok(k) => Initial::State(k),
            Err(_) => Initial::Named(text.clone()),
        },
        None => s.initial.clone().unwrap_or(Initial::Named("stationary".into())),
    };
    let init = match &initial {
        Initial::State(k) if *k < p => InitialState::Fixed(*k),
        Initial::State(k) => return Err(CliError::Usage(format!("initial state {k} outside [0, {p})"))),
        Initial::Named(name) if name == "stationary" => InitialState::Stationary,
        Initial::Named(name) if name == "uniform" => InitialState::Uniform,
        Initial::Named(name) => {
            return Err(CliError::Usage(format!("unknown initial state `{name}` (stationary, uniform or an index)")))
        }
    };
    let cfg = SynthConfig { p, r, seed: g.seed, imbalance };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    prepare_out(&g.out)?;

    let truth = generate(&cfg)?;
    let traj = simulate(&truth, n, g.seed, init)?;

    write_file(&g.out, MATRIX_FILE, |w| write_matrix(w, truth.matrix()))?;
    write_file(&g.out, TRAJECTORY_FILE, |w| write_trajectory(w, &traj))?;
    let meta = SimulateMeta {
        seed: g.seed,
        p,
        r,
        n,
        imbalance: imbalance.map(|(x, y)| [x, y]),
        initial,
        matrix: MATRIX_FILE.into(),
        trajectory: TRAJECTORY_FILE.into(),
    };
    write_toml(&g.out, SIMULATE_META_FILE, &meta)
}

enum EstimateInput {
    Trajectory(Trajectory),
    Counts(TransitionCounts),
}

pub fn cmd_estimate(g: &Globals, file: &FileConfig, a: &EstimateArgs) -> Result<(), CliError> {
    let s = &file.estimate;
    let est = estimator(a.estimator.as_deref().or(s.estimator.as_deref()).unwrap_or("nuclear"))?;
    let traj_path = a.trajectory.clone().or_else(|| if a.counts.is_some() { None } else { s.trajectory.clone() });
    let counts_path = a.counts.clone().or_else(|| if a.trajectory.is_some() { None } else { s.counts.clone() });
    let input = match (traj_path, counts_path) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("give either a trajectory or a counts file, not both".into()))
        }
        (None, None) => return Err(CliError::Usage("missing input: `trajectory` or `counts`".into())),
        (Some(path), None) => {
            let reader = open_input(&path)?;
            EstimateInput::Trajectory(read_trajectory(reader).map_err(|e| CliError::input(&path, e))?)
        }
        (None, Some(path)) => {
            let reader = open_input(&path)?;
            EstimateInput::Counts(read_counts(reader).map_err(|e| CliError::input(&path, e))?)
        }
    };
    let (counts, traj) = match &input {
        EstimateInput::Trajectory(t) => (count_transitions(t), Some(t)),
        EstimateInput::Counts(c) => (c.clone(), None),
    };
    let p = counts.p();
    let r = a.r.or(s.r);
    if matches!(est, Estimator::Rank | Estimator::Spectral) && r.is_none() {
        return Err(CliError::Usage(format!("estimator {est} needs a target rank `r`")));
    }
    let r = r.unwrap_or(p);
    if r == 0 || r > p {
        return Err(CliError::Usage(format!("rank {r} must lie in [1, p = {p}]")));
    }
    let fallback = if traj.is_some() { LambdaRule::default() } else { counts_only_rule() };
    let opts = solver_options(file, &a.lambda, fallback)?;
    prepare_out(&g.out)?;

    match fit(est, &counts, traj, r, &opts) {
        Ok(fitted) => {
            let report = estimate_report(&fitted, &counts, r, &opts);
            write_file(&g.out, ESTIMATE_FILE, |w| write_matrix(w, fitted.matrix.matrix()))?;
            write_file(&g.out, TRACE_FILE, |w| write_trace(w, &fitted))?;
            write_file(&g.out, REPORT_FILE, |w| w.write_all(report.as_bytes()))
        }
        Err(err) => {
            let (admm, dc) = match &err {
                Error::Convergence { report, .. } => (report.as_deref(), None),
                Error::RankFailure { trace, .. } => (None, Some(trace.as_ref())),
                _ => return Err(err.into()),
            };
            write_file(&g.out, TRACE_FILE, |w| {
                writeln!(w, "{TRACE_HEADER}")?;
                if let Some(rep) = admm {
                    write_admm_trace(w, rep, f64::NAN)?;
                }
                if let Some(tr) = dc {
                    write_dc_trace(w, tr)?;
                }
                Ok(())
            })?;
            let text = format!(
                "estimator: {est}\nstates: {p}\ntransitions: {}\nstatus: failed\nerror: {err}\n",
                counts.total()
            );
            write_file(&g.out, REPORT_FILE, |w| w.write_all(text.as_bytes()))?;
            Err(err.into())
        }
    }
}

fn real(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:e}")
    }
}

fn write_admm_trace<W: Write>(w: &mut W, rep: &ConvergenceReport, lambda: f64) -> std::io::Result<()> {
    for t in &rep.trace {
        writeln!(w, "admm,{},{},{},,{}", t.iter, real(t.primal_obj), real(t.kkt), real(lambda))?;
    }
    Ok(())
}

fn write_dc_trace<W: Write>(w: &mut W, tr: &DcTrace) -> std::io::Result<()> {
    for (k, rec) in tr.records.iter().enumerate() {
        writeln!(
            w,
            "pdc,{},{},{},{},{}",
            k + 1,
            real(rec.objective),
            real(rec.step_norm),
            rec.rank_est,
            real(rec.c_current)
        )?;
    }
    Ok(())
}

fn write_trace<W: Write>(w: &mut W, est: &Estimate) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    if let Some(n) = &est.nuclear {
        write_admm_trace(w, &n.report, n.lambda)?;
    }
    if let Some(res) = &est.rank {
        write_dc_trace(w, &res.trace)?;
    }
    Ok(())
}

fn estimate_report(est: &Estimate, counts: &TransitionCounts, r: usize, opts: &SolverOptions) -> String {
    let mut lines = vec![
        format!("estimator: {}", est.estimator),
        format!("states: {}", counts.p()),
        format!("transitions: {}", counts.total()),
        format!("target_rank: {r}"),
    ];
    let rank = match &est.rank {
        Some(res) => res.rank,
        None => numerical_rank(est.matrix.matrix(), opts.pdc.rank_tol),
    };
    lines.push(format!("rank_est: {rank}"));
    let nll = neg_log_likelihood(est.matrix.matrix(), counts).unwrap_or(f64::INFINITY);
    lines.push(format!("neg_log_likelihood: {nll:e}"));
    if let Some(cv) = &est.cv {
        lines.push(format!(
            "lambda_rule: cv (constant {}, mean held-out loss {:e})",
            cv.constant,
            cv.table.iter().find(|row| row.constant == cv.constant).map_or(f64::NAN, |row| row.mean_loss)
        ));
    }
    if let Some(n) = &est.nuclear {
        lines.push(format!("lambda: {:e}", n.lambda));
        lines.push(format!("admm_objective: {:e}", n.report.primal_obj));
        lines.push(format!("admm_dual_objective: {:e}", n.report.dual_obj));
        lines.push(format!("admm_kkt: {:e}", n.report.kkt));
        lines.push(format!("admm_iterations: {}", n.report.iters));
        lines.push(format!("admm_converged: {}", n.report.converged));
        lines.push(format!("completion_clamped: {}", n.completion.clamped));
    }
    if let Some(res) = &est.rank {
        let last = res.trace.records.last();
        lines.push(format!("pdc_objective: {:e}", last.map_or(f64::NAN, |rec| rec.objective)));
        lines.push(format!("pdc_c_final: {:e}", res.c_final));
        lines.push(format!("pdc_outer_steps: {}", res.trace.records.len()));
        lines.push(format!("pdc_levels: {}", res.trace.levels.len()));
        lines.push(format!("pdc_last_step: {:e}", last.map_or(f64::NAN, |rec| rec.step_norm)));
        lines.push(format!("pdc_criticality: {:e}", res.trace.criticality));
    }
    lines.push("status: ok".into());
    lines.join("\n") + "\n"
}

#[derive(Debug, Serialize)]
struct BenchmarkMeta {
    seed: u64,
    p: usize,
    r: usize,
    rolls: usize,
    k_grid: Vec<f64>,
    /// `round(k r p ln p)` for each entry of `k_grid`.
    n: Vec<usize>,
    estimators: Vec<String>,
    imbalance: Option<[f64; 2]>,
    timing: bool,
}

pub fn cmd_benchmark(g: &Globals, file: &FileConfig, a: &BenchmarkArgs) -> Result<(), CliError> {
    let s = &file.benchmark;
    let p = required(a.p.or(s.p), "p")?;
    let r = required(a.r.or(s.r), "r")?;
    let k_grid = required(a.k_grid.clone().or_else(|| s.k_grid.clone()), "k_grid")?;
    let names = a.estimators.clone().or_else(|| s.estimators.clone());
    let estimators = match names {
        Some(names) => names.iter().map(|n| estimator(n)).collect::<Result<Vec<_>, _>>()?,
        None => Estimator::ALL.to_vec(),
    };
    let cfg = BenchmarkConfig {
        p,
        r,
        k_grid,
        rolls: a.rolls.or(s.rolls).unwrap_or(10),
        seed: g.seed,
        estimators,
        imbalance: pair(a.imbalance.clone())?.or(s.imbalance.map(|[x, y]| (x, y))),
        solver: solver_options(file, &a.lambda, LambdaRule::default())?,
        timing: a.timing || s.timing.unwrap_or(false),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let plot = !a.no_plot && s.plot.unwrap_or(true);
    prepare_out(&g.out)?;

    let rows = benchmark_run(&cfg)?;
    let summary = summarize(&rows);

    write_file(&g.out, BENCHMARK_FILE, |w| write_rows(w, &rows))?;
    write_file(&g.out, SUMMARY_FILE, |w| write_summary(w, &summary))?;
    if plot {
        write_file(&g.out, PLOT_FILE, |w| write_plot_data(w, &summary))?;
    }
    let meta = BenchmarkMeta {
        seed: cfg.seed,
        p,
        r,
        rolls: cfg.rolls,
        n: cfg.k_grid.iter().map(|&k| sample_size(k, r, p)).collect(),
        k_grid: cfg.k_grid.clone(),
        estimators: cfg.estimators.iter().map(|e| e.name().to_owned()).collect(),
        imbalance: cfg.imbalance.map(|(x, y)| [x, y]),
        timing: cfg.timing,
    };
    write_toml(&g.out, BENCHMARK_META_FILE, &meta)
}

#[derive(Debug, Serialize)]
struct AggregateMeta {
    seed: u64,
    estimator: String,
    r: usize,
    k: usize,
    min_visits: u64,
    states: usize,
    transitions: u64,
    inertia: f64,
    effective_clusters: usize,
}

pub fn cmd_aggregate(g: &Globals, file: &FileConfig, a: &AggregateArgs) -> Result<(), CliError> {
    let s = &file.aggregate;
    let path = required(a.records.clone().or_else(|| s.records.clone()), "records")?;
    let est = estimator(a.estimator.as_deref().or(s.estimator.as_deref()).unwrap_or("rank"))?;
    let r = required(a.r.or(s.r), "r")?;
    let k = required(a.k.or(s.k), "k")?;
    let min_visits = a.min_visits.or(s.min_visits).unwrap_or(1);
    let restarts = a.restarts.or(s.restarts).unwrap_or(DEFAULT_RESTARTS);
    let opts = solver_options(file, &a.lambda, counts_only_rule())?;
    if matches!(opts.lambda, LambdaRule::CrossValidated { .. }) && matches!(est, Estimator::Nuclear | Estimator::Rank) {
        return Err(CliError::Usage("cross-validation needs a trajectory; use the scaled or fixed lambda rule".into()));
    }
    let reader = open_input(&path)?;
    let records = read_records(reader).map_err(|e| CliError::input(&path, e))?;
    let (counts, index) = ingest_transitions(&records, min_visits)?;
    let p = counts.p();
    if r == 0 || r > p {
        return Err(CliError::Usage(format!("rank {r} must lie in [1, {p}] ({p} states survive the visit threshold)")));
    }
    if k == 0 || k > p {
        return Err(CliError::Usage(format!("cluster count {k} must lie in [1, {p}]")));
    }
    prepare_out(&g.out)?;

    let fitted = fit(est, &counts, None, r, &opts)?;
    let clusters = aggregate_states(&fitted.matrix, r, k, g.seed, restarts)?;
    let dest = destinations(&fitted.matrix, &clusters);

    write_csv(&g.out, CLUSTERS_FILE, |w| {
        w.write_record(["state_id", "label"])?;
        for (id, label) in index.ids().iter().zip(&clusters.labels) {
            w.write_record([id.as_str(), &label.to_string()])?;
        }
        Ok(())
    })?;
    write_csv(&g.out, DESTINATIONS_FILE, |w| write_destinations(w, &index, &dest))?;
    let meta = AggregateMeta {
        seed: g.seed,
        estimator: est.name().into(),
        r,
        k,
        min_visits,
        states: p,
        transitions: counts.total(),
        inertia: clusters.inertia,
        effective_clusters: clusters.effective_clusters,
    };
    write_toml(&g.out, AGGREGATE_META_FILE, &meta)
}

/// Mean transition row of each cluster's members; `None` for empty clusters.
pub fn destinations(phat: &TransitionMatrix, clusters: &ClusterResult) -> Vec<Option<Vec<f64>>> {
    let p = phat.p();
    let k = clusters.centers.nrows();
    let mut sums = vec![vec![0.0; p]; k];
    let mut sizes = vec![0usize; k];
    for (i, &l) in clusters.labels.iter().enumerate() {
        sizes[l] += 1;
        for (j, acc) in sums[l].iter_mut().enumerate() {
            *acc += phat.get(i, j);
        }
    }
    sums.into_iter()
        .zip(sizes)
        .map(|(row, n)| (n > 0).then(|| row.into_iter().map(|v| v / n as f64).collect()))
        .collect()
}

fn write_destinations<W: Write>(
    w: &mut csv::Writer<W>,
    index: &StateIndex,
    dest: &[Option<Vec<f64>>],
) -> csv::Result<()> {
    let mut header = vec!["label".to_owned()];
    header.extend(index.ids().iter().cloned());
    w.write_record(&header)?;
    for (label, row) in dest.iter().enumerate() {
        if let Some(row) = row {
            let mut rec = vec![label.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
    }
    Ok(())
}

fn write_csv(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut csv::Writer<File>) -> csv::Result<()>,
) -> Result<(), CliError> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e.into()))?;
    f(&mut w).map_err(|e| CliError::io(&path, e.into()))?;
    w.flush().map_err(|e| CliError::io(&path, e))
}
