use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use dlra_hjb::{
    lqr_for, open_loop_optimize, sample_initial_conditions, simulate_closed_loop, solve_value_function_with, BasisSet,
    Benchmark, ControlProblem, Controller, FeedbackLaw, Solution, Trajectory, ValueFunctionPath,
};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::plot;
use crate::report::{self, EvaluationReport, EvaluationRow, TableRow};

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const PARTIAL_CHECKPOINT: &str = "checkpoint.partial.bin";
pub const DIAGNOSTICS: &str = "diagnostics.csv";
pub const ROWS: &str = "evaluation_rows.csv";
pub const SUMMARY: &str = "evaluation_summary.csv";
pub const TABLE: &str = "table.csv";

pub struct SolveOutcome {
    pub solution: Solution,
    pub checkpoint: PathBuf,
    /// Solver wall time without file output.
    pub seconds: f64,
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_path(path: &Path, vf: &ValueFunctionPath) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    vf.write_to(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn solve(config: &RunConfig, out: &Path) -> CliResult<SolveOutcome> {
    create_dir(out)?;
    let config_path = out.join("config.toml");
    std::fs::write(&config_path, config.to_toml()).map_err(|e| CliError::io(&config_path, e))?;

    let problem = config.benchmark()?;
    let solver = config.solver_config();
    let every = config.output.checkpoint_interval;
    let partial = out.join(PARTIAL_CHECKPOINT);
    let mut io_seconds = 0.0;
    let mut done = 0usize;
    let clock = Instant::now();
    let solution = solve_value_function_with(&problem, &solver, |report, forward| {
        done += 1;
        if every == 0 || done % every != 0 {
            return Ok(());
        }
        let io_clock = Instant::now();
        let times = (report.interval..=solver.intervals()).map(|k| k as f64 * solver.tau).collect();
        let vf = ValueFunctionPath::new(times, forward.to_vec(), solver.interpolation)?;
        let file = File::create(&partial)?;
        let mut w = BufWriter::new(file);
        vf.write_to(&mut w)?;
        w.flush()?;
        io_seconds += io_clock.elapsed().as_secs_f64();
        Ok(())
    })?;
    let seconds = clock.elapsed().as_secs_f64() - io_seconds;
    log::info!("solve finished in {seconds:.2} s");

    let checkpoint = out.join(CHECKPOINT);
    write_path(&checkpoint, &solution.path)?;
    let rows = report::diagnostics(&solution.reports, solver.tau);
    report::write_csv(&out.join(DIAGNOSTICS), &rows)?;
    plot::write_residuals(out, &rows)?;
    if partial.exists() {
        std::fs::remove_file(&partial).map_err(|e| CliError::io(&partial, e))?;
    }
    Ok(SolveOutcome {
        solution,
        checkpoint,
        seconds,
    })
}

/// Reads a checkpoint and checks it against the configured dimension and
/// basis.
pub fn load_feedback(checkpoint: &Path, config: &RunConfig, problem: &Benchmark) -> CliResult<FeedbackLaw> {
    let file = File::open(checkpoint).map_err(|e| CliError::io(checkpoint, e))?;
    let path = ValueFunctionPath::read_from(&mut BufReader::new(file))?;
    let n = config.solver.basis_size;
    if let Some(tt) = path.tensors().first() {
        if tt.order() != config.problem.dim || tt.mode_sizes().iter().any(|&m| m != n) {
            return Err(CliError::Config(format!(
                "checkpoint {} has order {} and modes {:?}, config expects dim {} and basis_size {n}",
                checkpoint.display(),
                tt.order(),
                tt.mode_sizes(),
                config.problem.dim
            )));
        }
    }
    let interpolation = config.solver_config().interpolation;
    let basis = BasisSet::h2(n)?;
    Ok(FeedbackLaw::new(
        path.with_interpolation(interpolation),
        basis,
        config.problem.gamma,
        problem.interface().to_vec(),
    )?)
}

struct Run<'a> {
    config: &'a RunConfig,
    problem: &'a Benchmark,
    feedback: &'a FeedbackLaw,
    lqr: Option<&'a (dyn Controller + Sync)>,
}

struct IcResult {
    rows: Vec<EvaluationRow>,
    reference_failed: bool,
}

impl Run<'_> {
    fn label(&self) -> &'static str {
        self.config.solver.method.label()
    }

    fn simulate(&self, controller: &dyn Controller, x0: &[f64]) -> dlra_hjb::Result<Trajectory> {
        let s = &self.config.solver;
        simulate_closed_loop(self.problem, controller, x0, 0.0, s.horizon, s.tau, self.config.integrator())
    }

    /// `(method, cost, converged, seconds, trajectory)` for every controller.
    fn run_ic(&self, x0: &[f64]) -> Vec<(String, f64, bool, f64, Option<Trajectory>)> {
        let mut out = Vec::new();
        let mut closed = |name: &str, c: &dyn Controller| {
            let clock = Instant::now();
            let traj = self.simulate(c, x0).ok();
            let secs = clock.elapsed().as_secs_f64();
            let cost = traj.as_ref().map_or(f64::INFINITY, |t| t.cost);
            out.push((name.to_string(), cost, traj.is_some(), secs, traj));
        };
        closed(self.label(), self.feedback);
        if let Some(lqr) = self.lqr {
            closed("lqr", lqr);
        }
        if self.config.evaluate.open_loop {
            let steps = (self.config.solver.horizon / self.config.solver.tau).round() as usize;
            let init = out
                .iter()
                .rev()
                .find_map(|o| o.4.as_ref().map(|t| t.controls.clone()))
                .unwrap_or_else(|| vec![0.0; steps]);
            let clock = Instant::now();
            let s = &self.config.solver;
            let result = open_loop_optimize(
                self.problem,
                x0,
                s.horizon,
                s.tau,
                &init,
                self.config.open_loop_options(),
            );
            let secs = clock.elapsed().as_secs_f64();
            match result {
                Ok(sol) => {
                    let traj = self.simulate(&sol.controls, x0).ok();
                    out.push(("open_loop".into(), sol.cost, sol.converged, secs, traj));
                }
                Err(e) => {
                    log::warn!("open-loop optimization failed: {e}");
                    out.push(("open_loop".into(), f64::INFINITY, false, secs, None));
                }
            }
        }
        out
    }

    fn evaluate_ic(&self, ic_id: usize, x0: &[f64]) -> IcResult {
        let results = self.run_ic(x0);
        let reference_failed = results.iter().any(|r| r.0 == "open_loop" && !r.2);
        let rows = results
            .into_iter()
            .map(|(method, cost, converged, wall_time, _)| EvaluationRow {
                ic_id,
                method,
                cost,
                converged,
                omitted: reference_failed,
                wall_time,
            })
            .collect();
        IcResult { rows, reference_failed }
    }

    fn write_traces(&self, dir: &Path, prefix: &str, x0: &[f64]) -> CliResult<()> {
        let mut methods = Vec::new();
        for (method, _, _, _, traj) in self.run_ic(x0) {
            let Some(traj) = traj else { continue };
            let path = dir.join(format!("{prefix}_{method}.csv"));
            let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
            let mut w = BufWriter::new(file);
            traj.write_csv(&mut w)?;
            w.flush().map_err(|e| CliError::io(&path, e))?;
            methods.push(method);
        }
        plot::write_trace_script(dir, prefix, &methods)
    }
}

pub fn evaluate(checkpoint: &Path, config: &RunConfig, out: &Path) -> CliResult<EvaluationReport> {
    create_dir(out)?;
    let problem = config.benchmark()?;
    let feedback = load_feedback(checkpoint, config, &problem)?;
    let s = &config.solver;
    let lqr = if config.evaluate.lqr {
        Some(lqr_for(&problem, s.horizon, s.tau)?)
    } else {
        None
    };
    let run = Run {
        config,
        problem: &problem,
        feedback: &feedback,
        lqr: lqr.as_ref().map(|c| c as &(dyn Controller + Sync)),
    };
    let e = &config.evaluate;
    let ics = sample_initial_conditions(config.ic_kind(), e.ic_count, config.problem.dim, e.seed);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(e.threads)
        .build()
        .map_err(|err| CliError::Config(format!("evaluate.threads: {err}")))?;
    let results: Vec<IcResult> = pool.install(|| {
        ics.par_iter()
            .enumerate()
            .map(|(k, x0)| run.evaluate_ic(k, x0))
            .collect()
    });
    let omitted = results.iter().filter(|r| r.reference_failed).count();
    if omitted > 0 {
        log::warn!("{omitted} of {} initial conditions omitted: open-loop reference did not converge", ics.len());
    }
    let report = EvaluationReport::from_rows(results.into_iter().flat_map(|r| r.rows).collect());

    report::write_csv(&out.join(ROWS), &report.rows)?;
    report::write_csv(&out.join(SUMMARY), &report.aggregates)?;
    if let Some(c) = e.trace_constant {
        run.write_traces(out, &format!("trace_const_{c}"), &vec![c; config.problem.dim])?;
    }
    for (k, x0) in ics.iter().take(e.trace_ics).enumerate() {
        run.write_traces(out, &format!("trace_ic{k}"), x0)?;
    }
    for a in &report.aggregates {
        log::info!("{}: mean cost {:.6} over {} initial conditions", a.method, a.mean_cost, a.count);
    }
    Ok(report)
}

fn cost_cell(v: Option<f64>) -> String {
    v.map(|c| format!("{c:.4}")).unwrap_or_default()
}

/// Solves and evaluates every config and collects one table row per degree.
pub fn compare(configs: &[PathBuf], out: &Path) -> CliResult<Vec<TableRow>> {
    let loaded = configs
        .iter()
        .map(|p| RunConfig::load(p).map(|c| (p, c)))
        .collect::<CliResult<Vec<_>>>()?;
    create_dir(out)?;
    let mut table: BTreeMap<usize, TableRow> = BTreeMap::new();
    for (k, (path, config)) in loaded.iter().enumerate() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        let dir = out.join(format!("{k:02}_{stem}"));
        let method = config.solver.method.label();
        let degree = config.degree();
        let row = table.entry(degree).or_insert_with(|| TableRow {
            degree,
            ..Default::default()
        });
        let result = solve(config, &dir).and_then(|s| {
            let report = evaluate(&s.checkpoint, config, &dir)?;
            Ok((s.seconds, report))
        });
        match result {
            Ok((seconds, report)) => {
                row.set(method, format!("{seconds:.2}"), cost_cell(report.mean_cost(method)));
                if let Some(opt) = report.mean_cost("open_loop") {
                    row.optimal_cost = cost_cell(Some(opt));
                }
            }
            Err(e) => {
                log::error!("{}: {e}", path.display());
                row.set(method, "failed".into(), "failed".into());
            }
        }
    }
    let rows: Vec<TableRow> = table.into_values().collect();
    report::write_csv(&out.join(TABLE), &rows)?;
    plot::write_cost_vs_degree(out, &rows)?;
    Ok(rows)
}
