//! Batch front end: configuration and gains files, synthesis, single steps,
//! simulations, Monte Carlo campaigns and the bundled benchmark run.

pub mod args;
pub mod svg;
pub mod tables;

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use sdjls_core::chance::{quantile_scale, tighten, ChanceMode};
use sdjls_core::config::{Config, GainsFile};
use sdjls_core::fixtures;
use sdjls_core::lmi::{
    assemble_prestab_lmis, extract_gains, solve_lmi_feasibility, verify_ms_stability,
    SynthesisResult, DEFAULT_EPSILON, DEFAULT_MAX_ITERS,
};
use sdjls_core::model::SdjlsModel;
use sdjls_core::sim::{moment_diagnostics, summarize, Experiment, MonteCarloReport, Trajectory};

use crate::args::{Cli, Command, Common};
use crate::svg::{line_chart, Series};
use crate::tables::SweepRow;

/// Runs a parsed command line, writing human-readable output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synthesize { common, max_iters } => synthesize_cmd(&common, max_iters, out),
        Command::Step {
            common,
            theta,
            x,
            k,
        } => step_cmd(&common, theta, &x, k, out),
        Command::Simulate { common, run } => simulate_cmd(&common, run, out),
        Command::Montecarlo { common, serial } => montecarlo_cmd(&common, serial, out),
        Command::ReproducePaper { common, serial } => reproduce_cmd(&common, serial, out),
    }
}

/// Reads the config (bundled benchmark when absent) and applies overrides.
pub fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            Config::from_toml(&text)
                .with_context(|| format!("invalid config {}", path.display()))?
        }
        None => Config::benchmark(),
    };
    if let Some(seed) = common.seed {
        cfg.experiment.master_seed = seed;
    }
    if let Some(runs) = common.runs {
        cfg.experiment.runs = runs;
    }
    if let Some(steps) = common.steps {
        cfg.experiment.steps = steps;
    }
    if let Some(xi) = common.xi {
        cfg.chance.xi = xi;
    }
    if common.joint {
        cfg.chance.mode = ChanceMode::Joint.into();
    }
    if common.individual {
        cfg.chance.mode = ChanceMode::Individual.into();
    }
    cfg.model()?;
    for f in &cfg.output.formats {
        if f != "csv" && f != "svg" {
            bail!("unknown output format {f:?} (expected csv or svg)");
        }
    }
    Ok(cfg)
}

fn wants(cfg: &Config, format: &str) -> bool {
    cfg.output.formats.iter().any(|f| f == format)
}

pub fn synthesize(model: &SdjlsModel, max_iters: usize) -> Result<SynthesisResult> {
    let sys = assemble_prestab_lmis(model, DEFAULT_EPSILON)?;
    solve_lmi_feasibility(&sys, max_iters, DEFAULT_EPSILON).map_err(|r| {
        anyhow::anyhow!(
            "gain synthesis failed after {} iterations: worst eigenvalue {:e}",
            r.iterations,
            r.margin
        )
    })
}

fn load_gains(common: &Common, cfg: &Config) -> Result<SynthesisResult> {
    match common.gains.as_deref() {
        Some("published") => Ok(GainsFile::benchmark().to_result()?),
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("cannot read gains {path}"))?;
            Ok(GainsFile::from_toml(&text)
                .and_then(|g| g.to_result())
                .with_context(|| format!("invalid gains {path}"))?)
        }
        None => synthesize(&cfg.model()?, DEFAULT_MAX_ITERS),
    }
}

fn out_dir(common: &Common, cfg: &Config) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn fmt_row(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            r.iter()
                .map(|v| format!("{v:.6}"))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .collect();
    format!("[{}]", rows.join("; "))
}

fn synthesize_cmd(common: &Common, max_iters: usize, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(common)?;
    let model = cfg.model()?;
    let res = synthesize(&model, max_iters)?;
    let path = match common.gains.as_deref() {
        Some(p) if p != "published" => PathBuf::from(p),
        _ => out_dir(common, &cfg)?.join("gains.toml"),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("cannot create output directory {}", parent.display()))?;
    }
    write_file(&path, &GainsFile::from_result(&res).to_toml()?)?;
    writeln!(
        out,
        "certified margin = {:e} after {} iterations",
        res.margin, res.iterations
    )?;
    for (i, k) in res.k.iter().enumerate() {
        writeln!(out, "K_{} = {}", i + 1, fmt_row(k))?;
    }
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}

fn step_cmd(common: &Common, theta: usize, x: &[f64], k: usize, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(common)?;
    let gains = load_gains(common, &cfg)?;
    let ctl = cfg.controller(gains.k)?;
    if x.len() != ctl.model.n() {
        bail!("state has {} entries, expected {}", x.len(), ctl.model.n());
    }
    let x = nalgebra::DVector::from_column_slice(x);
    let sol = ctl.step(theta, &x, k)?;
    let list = |v: &nalgebra::DVector<f64>| {
        v.iter()
            .map(|e| format!("{e}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    writeln!(out, "theta = {theta}")?;
    writeln!(out, "k = {k}")?;
    writeln!(out, "nu = [{}]", list(&sol.nu))?;
    writeln!(out, "rho = {}", sol.rho)?;
    writeln!(out, "u = [{}]", list(&sol.u))?;
    writeln!(out, "jstar = {}", sol.jstar)?;
    writeln!(out, "status = {:?}", sol.qp_status)?;
    writeln!(out, "pi_trace = {}", sol.pi_trace)?;
    writeln!(out, "unrelaxed_optimal = {}", sol.unrelaxed_optimal)?;
    Ok(())
}

/// Writes the resolved config and the gains next to the results so the run
/// can be repeated from the output directory alone.
fn write_inputs(dir: &Path, cfg: &Config, gains: &SynthesisResult) -> Result<()> {
    write_file(&dir.join("config.toml"), &cfg.to_toml()?)?;
    write_file(
        &dir.join("gains.toml"),
        &GainsFile::from_result(gains).to_toml()?,
    )
}

fn simulate_cmd(common: &Common, run: u64, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(common)?;
    let gains = load_gains(common, &cfg)?;
    let exp = cfg.experiment(gains.k.clone())?;
    let tr = exp.run(run)?;
    let dir = out_dir(common, &cfg)?;
    write_inputs(&dir, &cfg, &gains)?;
    if wants(&cfg, "csv") {
        write_file(
            &dir.join("trajectory.csv"),
            &tables::step_csv(&tr, exp.controller.model.m())?,
        )?;
    }
    if wants(&cfg, "svg") {
        write_trajectory_charts(&dir, &exp, &tr)?;
    }
    writeln!(
        out,
        "run {run}: {} steps, final state {}",
        tr.steps(),
        fmt_row(&DMatrix::from_row_slice(
            1,
            tr.records.last().unwrap().x.len(),
            tr.records.last().unwrap().x.as_slice()
        ))
    )?;
    writeln!(out, "wrote {}", dir.display())?;
    Ok(())
}

fn write_trajectory_charts(dir: &Path, exp: &Experiment, tr: &Trajectory) -> Result<()> {
    let modes: Vec<(f64, f64)> = tr
        .records
        .iter()
        .map(|r| (r.k as f64, r.theta as f64))
        .collect();
    write_file(
        &dir.join("mode_path.svg"),
        &line_chart("Mode path", "k", "mode", &[Series::steps("theta", modes)]),
    )?;
    let jstar: Vec<(f64, f64)> = tr
        .records
        .iter()
        .filter_map(|r| r.control.as_ref().map(|c| (r.k as f64, c.jstar)))
        .collect();
    write_file(
        &dir.join("jstar.svg"),
        &line_chart(
            "Optimal one-step cost",
            "k",
            "J*",
            &[Series::line("J*", jstar)],
        ),
    )?;
    let region = &exp.controller.constraints;
    let mut series = Vec::new();
    for j in 0..region.rows() {
        let g = region.g.row(j);
        series.push(Series::line(
            format!("G_{} x", j + 1),
            tr.records
                .iter()
                .map(|r| (r.k as f64, (g * &r.x)[0]))
                .collect(),
        ));
        series.push(
            Series::line(
                format!("H_{}(k)", j + 1),
                tr.records
                    .iter()
                    .map(|r| (r.k as f64, region.h(r.k)[j]))
                    .collect(),
            )
            .dashed(),
        );
    }
    write_file(
        &dir.join("band.svg"),
        &line_chart("Constrained outputs and bounds", "k", "value", &series),
    )
}

fn run_ensemble(
    exp: &Experiment,
    runs: usize,
    serial: bool,
) -> Result<(Vec<Trajectory>, MonteCarloReport)> {
    if runs == 0 {
        bail!("at least one run is required");
    }
    let trs = exp.ensemble(runs, !serial)?;
    let rep = summarize(&trs);
    Ok((trs, rep))
}

fn max_replay_error(exp: &Experiment, trs: &[Trajectory]) -> Result<f64> {
    trs.iter().try_fold(0.0f64, |acc, t| {
        Ok(acc.max(t.replay_error(&exp.controller)?))
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |q| format!("{q:.4}"))
}

fn campaign_summary(cfg: &Config, rep: &MonteCarloReport, replay: f64) -> String {
    let d = &rep.diagnostics;
    let min_sat = rep
        .row_satisfaction
        .iter()
        .skip(1)
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let mut s = String::new();
    let _ = writeln!(s, "runs = {}", rep.runs);
    let _ = writeln!(s, "steps = {}", rep.steps);
    let _ = writeln!(s, "master_seed = {}", cfg.experiment.master_seed);
    let _ = writeln!(s, "xi = {}", cfg.chance.xi);
    let _ = writeln!(s, "mode = {}", ChanceMode::from(cfg.chance.mode));
    let _ = writeln!(s, "min_row_satisfaction = {min_sat}");
    let _ = writeln!(s, "row_violations = {}", rep.row_violations);
    let _ = writeln!(s, "joint_violations = {}", rep.joint_violations);
    let _ = writeln!(s, "slack_usage = {}", rep.slack_usage);
    let _ = writeln!(s, "total_slack = {}", rep.total_slack);
    let _ = writeln!(s, "max_slack = {}", rep.max_slack);
    let _ = writeln!(s, "max_replay_error = {replay:e}");
    let _ = writeln!(s, "q = {}", fmt_opt(d.q));
    let _ = writeln!(s, "beta1 = {}", d.beta1);
    let _ = writeln!(s, "beta2 = {}", d.beta2);
    let _ = writeln!(s, "late_over_mid = {}", d.late_average / d.mid_average);
    let _ = writeln!(s, "max_over_median = {}", d.max_over_median);
    let _ = writeln!(s, "verdict = {}", d.verdict);
    s
}

fn satisfaction_series(label: &str, rep: &MonteCarloReport) -> Vec<Series> {
    let r = rep.row_satisfaction[0].len();
    (0..r)
        .map(|j| {
            let pts = (1..=rep.steps)
                .map(|k| (k as f64, rep.row_satisfaction[k][j]))
                .collect();
            Series::line(format!("{label} row {}", j + 1), pts)
        })
        .collect()
}

fn level_series(xi: f64, steps: usize) -> Series {
    Series::line(
        format!("xi = {xi}"),
        vec![(1.0, xi), (steps.max(1) as f64, xi)],
    )
    .dashed()
}

fn write_campaign(dir: &Path, cfg: &Config, rep: &MonteCarloReport, replay: f64) -> Result<()> {
    if wants(cfg, "csv") {
        write_file(&dir.join("aggregate.csv"), &tables::aggregate_csv(rep)?)?;
    }
    write_file(
        &dir.join("summary.txt"),
        &campaign_summary(cfg, rep, replay),
    )?;
    if wants(cfg, "svg") {
        let mut sat = satisfaction_series("", rep);
        sat.push(level_series(cfg.chance.xi, rep.steps));
        write_file(
            &dir.join("satisfaction.svg"),
            &line_chart("Empirical row satisfaction", "k", "rate", &sat),
        )?;
        let msq = rep
            .mean_sq_norm
            .iter()
            .enumerate()
            .map(|(k, v)| (k as f64, *v))
            .collect();
        write_file(
            &dir.join("mean_sq_norm.svg"),
            &line_chart(
                "Ensemble mean of |x|^2",
                "k",
                "E|x|^2",
                &[Series::line("E|x|^2", msq)],
            ),
        )?;
        let slack = rep
            .slack_rate
            .iter()
            .enumerate()
            .map(|(k, v)| (k as f64, *v))
            .collect();
        let mean = rep
            .mean_slack
            .iter()
            .enumerate()
            .map(|(k, v)| (k as f64, *v))
            .collect();
        write_file(
            &dir.join("slack.svg"),
            &line_chart(
                "Slack usage",
                "k",
                "value",
                &[
                    Series::line("fraction with slack", slack),
                    Series::line("mean slack", mean),
                ],
            ),
        )?;
    }
    Ok(())
}

fn montecarlo_cmd(common: &Common, serial: bool, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(common)?;
    let gains = load_gains(common, &cfg)?;
    let exp = cfg.experiment(gains.k.clone())?;
    let (trs, rep) = run_ensemble(&exp, cfg.experiment.runs, serial)?;
    let replay = max_replay_error(&exp, &trs)?;
    let dir = out_dir(common, &cfg)?;
    write_inputs(&dir, &cfg, &gains)?;
    write_campaign(&dir, &cfg, &rep, replay)?;
    out.write_all(campaign_summary(&cfg, &rep, replay).as_bytes())?;
    writeln!(out, "wrote {}", dir.display())?;
    Ok(())
}

const SWEEP: [f64; 4] = [0.3, 0.5, 0.85, 0.95];

fn reproduce_cmd(common: &Common, serial: bool, out: &mut dyn Write) -> Result<()> {
    let base = load_config(common)?;
    let model = base.model()?;
    let dir = out_dir(common, &base)?;
    let mut md = String::new();
    let _ = writeln!(md, "# Benchmark reproduction\n");
    let _ = writeln!(
        md,
        "master_seed = {}, runs = {}, steps = {}\n",
        base.experiment.master_seed, base.experiment.runs, base.experiment.steps
    );

    // Gains recovered from the published X, Y.
    let (xs, ys) = fixtures::benchmark_x_y();
    let k_ext = extract_gains(&xs, &ys)?;
    let table = fixtures::benchmark_gain_table();
    let published = SynthesisResult::from_parts(xs, ys, k_ext.clone(), f64::NAN)?;
    let check = verify_ms_stability(&model, &published.k, &published.p, DEFAULT_EPSILON)?;
    let published = SynthesisResult {
        margin: check.max_eigenvalue,
        ..published
    };
    write_file(
        &dir.join("gains_published.toml"),
        &GainsFile::from_result(&published).to_toml()?,
    )?;
    let max_dev = k_ext
        .iter()
        .zip(&table)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    let _ = writeln!(md, "## Gains from the published X, Y\n");
    for (i, k) in k_ext.iter().enumerate() {
        let _ = writeln!(md, "- K_{} = {}", i + 1, fmt_row(k));
    }
    let _ = writeln!(
        md,
        "- largest deviation from the published gain table: {max_dev:.2e}"
    );
    for c in &check.conditions {
        let _ = writeln!(
            md,
            "- E_{} ({}) eigenvalues: {:?}",
            c.mode,
            c.regime,
            c.eigenvalues
                .iter()
                .map(|e| format!("{e:.4}"))
                .collect::<Vec<_>>()
        );
    }
    let _ = writeln!(
        md,
        "- largest eigenvalue {:.4}, {}\n",
        check.max_eigenvalue,
        if check.pass {
            "verified"
        } else {
            "NOT verified"
        }
    );
    let table_res = GainsFile::benchmark().to_result()?;
    for (i, k) in table_res.k.iter().enumerate() {
        let closed = model.closed_loop(i + 1, k)?;
        let _ = writeln!(
            md,
            "- closed loop of mode {} with the table gain: {}",
            i + 1,
            fmt_row(&closed)
        );
    }

    let fresh = synthesize(&model, DEFAULT_MAX_ITERS)?;
    write_file(
        &dir.join("gains_synthesized.toml"),
        &GainsFile::from_result(&fresh).to_toml()?,
    )?;
    let _ = writeln!(md, "\n## Fresh synthesis\n");
    let _ = writeln!(
        md,
        "- certified margin {:.4e} after {} iterations",
        fresh.margin, fresh.iterations
    );
    for (i, k) in fresh.k.iter().enumerate() {
        let _ = writeln!(md, "- K_{} = {}", i + 1, fmt_row(k));
    }

    // Campaigns run with the published gain table unless --gains says otherwise.
    let gains = match &common.gains {
        Some(_) => load_gains(common, &base)?,
        None => table_res,
    };
    let campaign = |xi: f64,
                    mode: ChanceMode|
     -> Result<(Config, Experiment, Vec<Trajectory>, MonteCarloReport)> {
        let mut cfg = base.clone();
        cfg.chance.xi = xi;
        cfg.chance.mode = mode.into();
        let exp = cfg.experiment(gains.k.clone())?;
        let (trs, rep) = run_ensemble(&exp, cfg.experiment.runs, serial)?;
        Ok((cfg, exp, trs, rep))
    };

    let xi = base.chance.xi;
    let mut reports = Vec::new();
    for mode in [ChanceMode::Individual, ChanceMode::Joint] {
        let (cfg, exp, trs, rep) = campaign(xi, mode)?;
        let replay = max_replay_error(&exp, &trs)?;
        let sub = dir.join(mode.to_string());
        fs::create_dir_all(&sub)
            .with_context(|| format!("cannot create output directory {}", sub.display()))?;
        write_inputs(&sub, &cfg, &gains)?;
        write_campaign(&sub, &cfg, &rep, replay)?;
        if mode == ChanceMode::Individual {
            if wants(&cfg, "csv") {
                write_file(
                    &dir.join("trajectory.csv"),
                    &tables::step_csv(&trs[0], model.m())?,
                )?;
            }
            if wants(&cfg, "svg") {
                write_trajectory_charts(&dir, &exp, &trs[0])?;
            }
        }
        let _ = writeln!(md, "\n## {mode} constraints, xi = {xi}\n");
        for line in campaign_summary(&cfg, &rep, replay).lines() {
            let _ = writeln!(md, "- {line}");
        }
        reports.push((mode, rep));
    }

    let mut sweep = Vec::new();
    let mut sweep_reports = Vec::new();
    for &level in &SWEEP {
        let (cfg, exp, _, rep) = campaign(level, ChanceMode::Individual)?;
        let t = tighten(&exp.controller.constraints, 0, cfg.chance_spec(), model.n())?;
        sweep.push(SweepRow {
            xi: level,
            delta: quantile_scale(cfg.chance_spec(), model.n())?,
            offsets: t.offsets.iter().copied().collect(),
            total_slack: rep.total_slack,
            slack_usage: rep.slack_usage,
            row_violations: rep.row_violations,
            joint_violations: rep.joint_violations,
        });
        sweep_reports.push((level, rep));
    }
    if wants(&base, "csv") {
        write_file(&dir.join("sweep.csv"), &tables::sweep_csv(&sweep)?)?;
    }
    let _ = writeln!(md, "\n## Chance-level sweep (individual)\n");
    let _ = writeln!(
        md,
        "| xi | delta | total slack | slack usage | row violations |"
    );
    let _ = writeln!(md, "|---|---|---|---|---|");
    for s in &sweep {
        let _ = writeln!(
            md,
            "| {} | {:.6} | {:.6} | {:.4} | {} |",
            s.xi, s.delta, s.total_slack, s.slack_usage, s.row_violations
        );
    }

    if wants(&base, "svg") {
        let (ind, joint) = (&reports[0].1, &reports[1].1);
        let jstar = |rep: &MonteCarloReport| {
            rep.mean_jstar
                .iter()
                .enumerate()
                .map(|(k, v)| (k as f64, *v))
                .collect()
        };
        write_file(
            &dir.join("jstar_comparison.svg"),
            &line_chart(
                "Mean optimal cost",
                "k",
                "E J*",
                &[
                    Series::line("individual", jstar(ind)),
                    Series::line("joint", jstar(joint)),
                ],
            ),
        )?;
        let mut series = satisfaction_series("individual", ind);
        series.extend(satisfaction_series("joint", joint));
        series.push(level_series(xi, ind.steps));
        write_file(
            &dir.join("satisfaction.svg"),
            &line_chart("Row satisfaction by tightening", "k", "rate", &series),
        )?;
        let sweep_series: Vec<Series> = sweep_reports
            .iter()
            .map(|(level, rep)| {
                let pts = (1..=rep.steps)
                    .map(|k| (k as f64, rep.joint_satisfaction[k]))
                    .collect();
                Series::line(format!("xi = {level}"), pts)
            })
            .collect();
        write_file(
            &dir.join("xi_comparison.svg"),
            &line_chart("All rows satisfied, by level", "k", "rate", &sweep_series),
        )?;
        let msq = ind
            .mean_sq_norm
            .iter()
            .enumerate()
            .map(|(k, v)| (k as f64, *v))
            .collect();
        let d = moment_diagnostics(&ind.mean_sq_norm, ind.mean_sq_norm[0]);
        let mut series = vec![Series::line("E|x|^2", msq)];
        if let Some(q) = d.q {
            let env = (0..=ind.steps)
                .map(|k| {
                    (
                        k as f64,
                        d.beta1 * ind.mean_sq_norm[0] * q.powi(k as i32) + d.beta2,
                    )
                })
                .collect();
            series.push(Series::line("fitted bound", env).dashed());
        }
        write_file(
            &dir.join("mean_sq_norm.svg"),
            &line_chart("Mean-square state", "k", "E|x|^2", &series),
        )?;
    }

    write_file(&dir.join("summary.md"), &md)?;
    out.write_all(md.as_bytes())?;
    writeln!(out, "wrote {}", dir.display())?;
    Ok(())
}
