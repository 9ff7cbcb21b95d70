//! Mode pipelines and artifact emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use ndnn::autodiff::MlpParams;
use ndnn::events::{self, EventKind, EventReport};
use ndnn::fv::{extract_shock_path, godunov_solve, layout_l1_dl_error, FvGrid};
use ndnn::geometry::{fmt_num, FieldAdapter, LineRole, SubdomainLayout};
use ndnn::loss::{direct_pinn_config, direct_pinn_layout};
use ndnn::problem::ProblemSpec;
use ndnn::riemann::{
    decompose_three, decompose_two, exact_riemann_oracle, handoff_many, write_curve_csv,
    Decomposition, WaveFit,
};
use ndnn::train::{ddm_train, gd_train, write_loss_csv, DdmLayout, TrainHistory, TrainRun};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Mode, RunConfig, StateSource};
use crate::CliError;

/// Record of a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub config_sha256: String,
    pub version: String,
    /// Produced files relative to the output directory.
    pub files: Vec<String>,
    pub summary: Value,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Time points of line diagnostics.
const DIAGNOSTIC_POINTS: usize = 101;

/// Jump floor for Godunov shock tracking, relative to the data's total
/// variation.
const TRACK_FLOOR: f64 = 0.05;

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError {
            code: 1,
            message: e.to_string(),
        })?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Executes the configured pipeline and writes every artifact plus
/// `manifest.json` into the output directory.
pub fn run(config: &RunConfig) -> Result<Manifest, CliError> {
    let mut config = config.clone();
    config.train.seed = config.seed;
    config.validate()?;
    let dir = config
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(&config.name));
    std::fs::create_dir_all(&dir)?;
    let mut out = Output {
        dir,
        files: Vec::new(),
    };
    out.json("config.json", &config)?;
    info!("running {} in mode {:?}", config.name, config.mode);
    let summary = match config.mode {
        Mode::Ndnn => run_ndnn(&config, &mut out)?,
        Mode::Ddm => run_ddm(&config, &mut out)?,
        Mode::DirectPinn => run_direct_pinn(&config, &mut out)?,
        Mode::Godunov => run_godunov(&config, &mut out)?.0,
        Mode::RiemannDecompose => run_decompose(&config, &mut out)?,
        Mode::Compare => run_compare(&config, &mut out)?,
    };
    let manifest = Manifest {
        name: config.name.clone(),
        mode: config.mode,
        seed: config.seed,
        config_sha256: config.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        files: out.files.clone(),
        summary,
    };
    let mut w = BufWriter::new(File::create(out.dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut w, &manifest).expect("manifests serialize");
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(manifest)
}

fn rng(config: &RunConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(config.seed)
}

/// Rows `t, x, u_1, ..., u_m` on the output grid, physical time.
fn write_solution(
    layout: &SubdomainLayout,
    grid: crate::config::OutputGrid,
    out: impl Write,
) -> Result<(), CliError> {
    let m = layout.problem.flux.components();
    let (a, b) = layout.problem.domain();
    let big_t = layout.final_time();
    let offset = layout.problem.time_offset;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "x".into()];
    header.extend((1..=m).map(|k| format!("u_{k}")));
    w.write_record(&header).map_err(ndnn::NdnnError::from)?;
    for q in 0..grid.nt {
        let t = big_t * q as f64 / (grid.nt - 1) as f64;
        // Past a crossing the layout no longer partitions the domain.
        if let Err(e) = layout.check_order(t) {
            info!("solution export stops at t = {}: {e}", t + offset);
            break;
        }
        for j in 0..grid.nx {
            let x = a + (b - a) * j as f64 / (grid.nx - 1) as f64;
            let u = layout.reconstruct(x, t)?;
            let mut row = vec![fmt_num(t + offset), fmt_num(x)];
            row.extend(u.into_iter().map(fmt_num));
            w.write_record(&row).map_err(ndnn::NdnnError::from)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn history_summary(h: &TrainHistory) -> Value {
    json!({
        "epochs": h.records.last().map_or(0, |r| r.epoch),
        "initial_loss": h.initial_loss(),
        "final_loss": h.final_loss(),
        "stop": h.stop,
        "ordering_violation": h.ordering_violation,
    })
}

/// Loss history, trajectories, grid solution and line diagnostics of one
/// trained layout, file names suffixed with `tag`.
fn emit_layout(
    config: &RunConfig,
    out: &mut Output,
    layout: &SubdomainLayout,
    history: Option<&TrainHistory>,
    tag: &str,
) -> Result<(), CliError> {
    if let Some(h) = history {
        let w = out.create(&format!("loss{tag}.csv"))?;
        h.write_csv(w)?;
    }
    let w = out.create(&format!("lines{tag}.csv"))?;
    layout.write_trajectories(w)?;
    let w = out.create(&format!("solution{tag}.csv"))?;
    write_solution(layout, config.grid, w)?;
    if layout.interior_count() > 0 {
        let w = out.create(&format!("diagnostics{tag}.csv"))?;
        events::write_diagnostics(layout, DIAGNOSTIC_POINTS, w)?;
    }
    Ok(())
}

fn train_layout(
    layout: SubdomainLayout,
    run: &TrainRun,
) -> Result<(SubdomainLayout, TrainHistory), CliError> {
    let outcome = gd_train(layout, run)?;
    Ok((outcome.layout, outcome.history))
}

/// Generation reports for artificial lines, interaction reports for
/// neighboring interior lines.
fn detect_events(
    config: &RunConfig,
    layout: &SubdomainLayout,
) -> Result<Vec<EventReport>, CliError> {
    let mut reports = Vec::new();
    let n = layout.lines.len();
    if config.events.generation {
        let tol = events::generation_tolerance(&layout.problem);
        for i in 1..n - 1 {
            if layout.lines[i].role == LineRole::Artificial {
                if let Some(r) = events::detect_generation(layout, i, tol)? {
                    info!("line {i}: shock generated at t = {}", r.physical_time);
                    reports.push(r);
                }
            }
        }
    }
    if config.events.interaction {
        for i in 1..n.saturating_sub(2) {
            if let Some(r) = events::detect_interaction(layout, i)? {
                info!(
                    "lines {i} and {}: interaction at t = {}",
                    i + 1,
                    r.physical_time
                );
                reports.push(r);
            }
        }
    }
    Ok(reports)
}

fn run_ndnn(config: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let mut rng = rng(config);
    let net = &config.networks;
    let layout = SubdomainLayout::build(
        &config.problem,
        &net.field_hidden,
        &net.line_hidden,
        &mut rng,
    )?;
    let (layout, history) = train_layout(layout, &config.train)?;
    emit_layout(config, out, &layout, Some(&history), "")?;
    let mut summary = json!({ "train": history_summary(&history) });
    let reports = detect_events(config, &layout)?;
    if config.events.generation || config.events.interaction {
        out.json("events.json", &reports)?;
        summary["events"] = serde_json::to_value(&reports).expect("reports serialize");
    }
    let first = reports
        .iter()
        .filter(|r| r.kind == EventKind::Interaction)
        .min_by(|a, b| a.time.total_cmp(&b.time));
    if let (true, Some(report)) = (config.events.redecompose, first) {
        let (_, next) = events::redecompose(
            &layout,
            report,
            &net.field_hidden,
            &net.line_hidden,
            &mut rng,
        )?;
        let (next, history) = train_layout(next, &config.train)?;
        emit_layout(config, out, &next, Some(&history), "_after")?;
        let lax: Vec<String> = (1..next.lines.len() - 1)
            .map(|i| {
                events::check_lax(&next, i, 0.5 * next.final_time())
                    .map(|c| c.label())
                    .unwrap_or_else(|_| "inadmissible".into())
            })
            .collect();
        summary["after"] = json!({
            "time_offset": next.problem.time_offset,
            "train": history_summary(&history),
            "lax_midpoint": lax,
        });
    }
    Ok(summary)
}

fn run_ddm(config: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let mut rng = rng(config);
    let net = &config.networks;
    let ddm = DdmLayout::build(
        &config.problem,
        &net.field_hidden,
        &net.line_hidden,
        &mut rng,
    )?;
    let outcome = ddm_train(ddm, &config.train)?;
    let h = &outcome.history;
    {
        let n = outcome.layout.pieces.len();
        let mut w = csv::Writer::from_writer(out.create("sweeps.csv")?);
        let mut header = vec!["sweep".to_string(), "mismatch".into()];
        header.extend((0..n).map(|i| format!("start_loss_{i}")));
        header.extend((0..n).map(|i| format!("end_loss_{i}")));
        w.write_record(&header).map_err(ndnn::NdnnError::from)?;
        for s in &h.sweeps {
            let mut row = vec![s.sweep.to_string(), format!("{:.10e}", s.mismatch)];
            row.extend(s.start_losses.iter().map(|l| format!("{:.10e}", l.total)));
            row.extend(s.end_losses.iter().map(|l| format!("{:.10e}", l.total)));
            w.write_record(&row).map_err(ndnn::NdnnError::from)?;
        }
        w.flush()?;
    }
    for (i, records) in h.inner.iter().enumerate() {
        let w = out.create(&format!("loss_subdomain_{i}.csv"))?;
        write_loss_csv(records, w)?;
    }
    let merged = outcome.layout.merged(config.train.ddm_tolerance, true)?;
    emit_layout(config, out, &merged, None, "")?;
    Ok(json!({
        "entry_mismatch": h.entry_mismatch,
        "sweeps": h.sweeps.len(),
        "final_mismatch": h.sweeps.last().map_or(h.entry_mismatch, |s| s.mismatch),
        "stop": h.stop,
    }))
}

fn run_direct_pinn(config: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let mut rng = rng(config);
    let m = config.problem.flux.components();
    let arch: Vec<usize> = std::iter::once(2)
        .chain(config.networks.field_hidden.iter().copied())
        .chain([m])
        .collect();
    let field = FieldAdapter::Network(MlpParams::init(&arch, &mut rng)?);
    let layout = direct_pinn_layout(&config.problem, field)?;
    let mut run = config.train.clone();
    run.loss = direct_pinn_config(&config.train.loss.weights);
    let (layout, history) = train_layout(layout, &run)?;
    let w = out.create("loss.csv")?;
    history.write_csv(w)?;
    let w = out.create("solution.csv")?;
    write_solution(&layout, config.grid, w)?;
    Ok(json!({ "train": history_summary(&history) }))
}

/// Godunov snapshots plus the tracked shock paths that survive the floor.
fn run_godunov(
    config: &RunConfig,
    out: &mut Output,
) -> Result<(Value, FvGrid, Vec<Vec<(f64, f64)>>), CliError> {
    let p = &config.problem;
    let grid = godunov_solve(&p.flux, &p.initial, &config.godunov, p.final_time)?;
    let w = out.create("godunov.csv")?;
    grid.write_csv(p.time_offset, w)?;
    let floor = TRACK_FLOOR * p.initial.total_variation();
    let mut paths = Vec::new();
    for rank in 0..p.initial.breakpoints().len() {
        match extract_shock_path(&p.flux, &grid, rank, floor) {
            Ok(path) => paths.push(path),
            Err(e) => {
                warn!("shock {rank}: {e}");
                break;
            }
        }
    }
    let mut w = csv::Writer::from_writer(out.create("shocks.csv")?);
    w.write_record(["t", "shock", "x"])
        .map_err(ndnn::NdnnError::from)?;
    for (k, path) in paths.iter().enumerate() {
        for &(t, x) in path {
            w.write_record([fmt_num(t + p.time_offset), k.to_string(), fmt_num(x)])
                .map_err(ndnn::NdnnError::from)?;
        }
    }
    w.flush()?;
    let summary = json!({
        "cells": grid.cells,
        "steps": grid.steps,
        "dx": grid.dx,
        "shocks_tracked": paths.len(),
    });
    Ok((summary, grid, paths))
}

fn run_compare(config: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let mut rng = rng(config);
    let net = &config.networks;
    let layout = SubdomainLayout::build(
        &config.problem,
        &net.field_hidden,
        &net.line_hidden,
        &mut rng,
    )?;
    let (layout, history) = train_layout(layout, &config.train)?;
    emit_layout(config, out, &layout, Some(&history), "")?;
    let (fv_summary, grid, paths) = run_godunov(config, out)?;
    let big_t = layout.final_time();
    let last = grid.snapshots.len() - 1;
    let mut w = csv::Writer::from_writer(out.create("compare.csv")?);
    w.write_record(["t", "x", "ndnn", "godunov"])
        .map_err(ndnn::NdnnError::from)?;
    for j in 0..grid.cells {
        let x = grid.center(j);
        let u = layout.reconstruct(x, big_t)?[0];
        w.write_record([
            fmt_num(big_t),
            fmt_num(x),
            fmt_num(u),
            fmt_num(grid.snapshots[last][j]),
        ])
        .map_err(ndnn::NdnnError::from)?;
    }
    w.flush()?;
    let mut summary = json!({ "train": history_summary(&history), "godunov": fv_summary });
    if paths.len() == layout.interior_count() {
        let times: Vec<f64> = (0..=100).map(|q| big_t * q as f64 / 100.0).collect();
        summary["l1_dl_error"] = json!(layout_l1_dl_error(&layout, &paths, &times));
    }
    Ok(summary)
}

fn side_states(problem: &ProblemSpec, breakpoint: usize) -> (Vec<f64>, Vec<f64>) {
    let x = problem.initial.breakpoints()[breakpoint];
    let left = problem.initial.profiles[breakpoint].eval(x);
    let right = problem.initial.profiles[breakpoint + 1].eval(x);
    (left, right)
}

fn write_fit(out: &mut Output, breakpoint: usize, fit: &WaveFit) -> Result<(), CliError> {
    for (k, c) in fit.curves.iter().enumerate() {
        let w = out.create(&format!("curve_bp{breakpoint}_family{}.csv", k + 1))?;
        write_curve_csv(c, 201, w)?;
    }
    let mut w = csv::Writer::from_writer(out.create(&format!("curve_loss_bp{breakpoint}.csv"))?);
    let mut header = vec!["epoch".to_string()];
    header.extend((1..=fit.histories.len()).map(|k| format!("family{k}")));
    w.write_record(&header).map_err(ndnn::NdnnError::from)?;
    let longest = fit
        .histories
        .iter()
        .map(|h| h.losses.len())
        .max()
        .unwrap_or(0);
    for e in 0..longest {
        let mut row = vec![e.to_string()];
        row.extend(fit.histories.iter().map(|h| {
            h.losses
                .get(e)
                .map_or(String::new(), |v| format!("{v:.10e}"))
        }));
        w.write_record(&row).map_err(ndnn::NdnnError::from)?;
    }
    w.flush()?;
    Ok(())
}

fn run_decompose(config: &RunConfig, out: &mut Output) -> Result<Value, CliError> {
    let spec = config.decompose.as_ref().expect("validated");
    let mut rng = rng(config);
    let p = &config.problem;
    let mut chosen: Vec<(usize, Decomposition)> = Vec::new();
    let mut reports = Vec::new();
    for &b in &spec.breakpoints {
        let (ul, ur) = side_states(p, b);
        let exact = exact_riemann_oracle(&p.flux, &ul, &ur);
        let neural = match spec.source {
            StateSource::Exact => None,
            StateSource::Neural => {
                let fit = match spec.kinds.as_slice() {
                    [a, c] => decompose_two(&p.flux, &ul, &ur, [*a, *c], &spec.config, &mut rng)?,
                    [a, c, d] => {
                        decompose_three(&p.flux, &ul, &ur, [*a, *c, *d], &spec.config, &mut rng)?
                    }
                    _ => unreachable!("validated"),
                };
                write_fit(out, b, &fit)?;
                Some(fit)
            }
        };
        let exact_value = match &exact {
            Ok(d) => serde_json::to_value(d).expect("decompositions serialize"),
            Err(e) => json!({ "error": e.to_string() }),
        };
        let relative = match (&neural, &exact) {
            (Some(f), Ok(d)) => Some(state_errors(&f.decomposition, d)),
            _ => None,
        };
        reports.push(json!({
            "breakpoint": b,
            "left": ul,
            "right": ur,
            "neural": neural.as_ref().map(|f| &f.decomposition),
            "parameters": neural.as_ref().map(|f| &f.parameters),
            "exact": exact_value,
            "relative_state_error": relative,
        }));
        let used = match neural {
            Some(f) => f.decomposition,
            None => exact?,
        };
        chosen.push((b, used));
    }
    out.json("decomposition.json", &reports)?;
    let mut summary = json!({ "decompositions": reports });
    if spec.then_train {
        let pairs: Vec<(usize, &Decomposition)> = chosen.iter().map(|(b, d)| (*b, d)).collect();
        let net = &config.networks;
        let (_, layout) = handoff_many(&pairs, p, &net.field_hidden, &net.line_hidden, &mut rng)?;
        let (layout, history) = train_layout(layout, &config.train)?;
        emit_layout(config, out, &layout, Some(&history), "")?;
        summary["train"] = history_summary(&history);
    }
    Ok(summary)
}

/// Relative Euclidean error of each intermediate state.
fn state_errors(neural: &Decomposition, exact: &Decomposition) -> Vec<f64> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    neural
        .states
        .iter()
        .zip(&exact.states)
        .skip(1)
        .take(neural.states.len().saturating_sub(2))
        .map(|(a, b)| {
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            norm(&d) / norm(b)
        })
        .collect()
}

/// Reads the manifest of a finished run.
pub fn load_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(e.to_string()))
}
