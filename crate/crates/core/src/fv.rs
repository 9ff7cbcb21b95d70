//! Godunov finite-volume reference solver for scalar convex conservation
//! laws, shock-path extraction from its snapshots, and line error norms.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NdnnError, Result};
use crate::geometry::{fmt_num, SubdomainLayout};
use crate::problem::{eval_initial, FluxModel, InitialData};

/// Gauss-Legendre nodes and weights on `[-1, 1]` for initial averages.
const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

/// Cells above which flux evaluation is spread over threads.
const PARALLEL_CELLS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FvBoundary {
    /// Zero-gradient ghost cells.
    Transmissive,
    /// Ghost cells held at the problem's boundary states.
    Dirichlet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FvConfig {
    pub cells: usize,
    pub cfl: f64,
    /// Uniform snapshot times in `[0, T]`, both ends included.
    pub snapshots: usize,
    pub boundary: FvBoundary,
}

impl Default for FvConfig {
    fn default() -> Self {
        FvConfig {
            cells: 200,
            cfl: 0.9,
            snapshots: 50,
            boundary: FvBoundary::Transmissive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FvGrid {
    pub cells: usize,
    pub interval: (f64, f64),
    pub cfl: f64,
    pub dx: f64,
    pub times: Vec<f64>,
    /// Cell averages at each snapshot time.
    pub snapshots: Vec<Vec<f64>>,
    pub steps: usize,
}

impl FvGrid {
    pub fn center(&self, j: usize) -> f64 {
        self.interval.0 + (j as f64 + 0.5) * self.dx
    }

    /// `sum_j |u_j - exact(x_j)| dx`, the exact solution averaged over
    /// eight sub-points per cell.
    pub fn l1_error(&self, snapshot: usize, exact: impl Fn(f64) -> f64) -> f64 {
        let u = &self.snapshots[snapshot];
        (0..self.cells)
            .map(|j| {
                let lo = self.interval.0 + j as f64 * self.dx;
                let avg = (0..8)
                    .map(|q| exact(lo + (q as f64 + 0.5) * self.dx / 8.0))
                    .sum::<f64>()
                    / 8.0;
                (u[j] - avg).abs() * self.dx
            })
            .sum()
    }

    /// CSV rows `t, x_center, u` for every snapshot.
    pub fn write_csv<W: Write>(&self, time_offset: f64, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x_center", "u"])?;
        for (t, snap) in self.times.iter().zip(&self.snapshots) {
            for (j, u) in snap.iter().enumerate() {
                w.write_record([
                    fmt_num(t + time_offset),
                    fmt_num(self.center(j)),
                    fmt_num(*u),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn require_scalar(flux: &FluxModel) -> Result<()> {
    if flux.is_scalar() {
        Ok(())
    } else {
        Err(NdnnError::Config(
            "the Godunov reference handles scalar fluxes only".into(),
        ))
    }
}

fn critical(flux: &FluxModel, lo: f64, hi: f64) -> Option<f64> {
    let inside = |c: f64| (lo..=hi).contains(&c).then_some(c);
    match flux {
        FluxModel::Burgers => inside(0.0),
        FluxModel::Quadratic => inside(1.0),
        _ => flux.critical_point(lo, hi),
    }
}

fn scalar_flux(flux: &FluxModel, u: f64) -> f64 {
    match flux {
        FluxModel::Burgers => 0.5 * u * u,
        FluxModel::Quadratic => 4.0 * u * (2.0 - u),
        _ => flux.flux(&[u]).expect("scalar states are admissible")[0],
    }
}

/// Exact-Riemann Godunov flux: the minimum of `f` between the states when
/// `ul <= ur`, the maximum otherwise.
pub fn godunov_flux(flux: &FluxModel, ul: f64, ur: f64) -> f64 {
    let (lo, hi) = if ul <= ur { (ul, ur) } else { (ur, ul) };
    let mut vals = [scalar_flux(flux, ul), scalar_flux(flux, ur), f64::NAN];
    if let Some(c) = critical(flux, lo, hi) {
        vals[2] = scalar_flux(flux, c);
    }
    let candidates = vals.iter().copied().filter(|v| !v.is_nan());
    if ul <= ur {
        candidates.fold(f64::INFINITY, f64::min)
    } else {
        candidates.fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One conservative update; returns the new averages and the fluxes
/// through the left and right domain ends.
pub fn godunov_step(
    flux: &FluxModel,
    u: &[f64],
    dx: f64,
    dt: f64,
    ghosts: (f64, f64),
) -> (Vec<f64>, (f64, f64)) {
    let n = u.len();
    let at = |i: usize| -> f64 {
        // Interface i sits between cells i - 1 and i.
        let l = if i == 0 { ghosts.0 } else { u[i - 1] };
        let r = if i == n { ghosts.1 } else { u[i] };
        godunov_flux(flux, l, r)
    };
    let fluxes: Vec<f64> = if n >= PARALLEL_CELLS {
        (0..=n).into_par_iter().map(at).collect()
    } else {
        (0..=n).map(at).collect()
    };
    let r = dt / dx;
    let next = (0..n)
        .map(|j| u[j] - r * (fluxes[j + 1] - fluxes[j]))
        .collect();
    (next, (fluxes[0], fluxes[n]))
}

/// Cell averages of the initial data.
pub fn initial_averages(data: &InitialData, cells: usize) -> Result<Vec<f64>> {
    let (a, b) = data.domain();
    let dx = (b - a) / cells as f64;
    (0..cells)
        .map(|j| {
            let mid = a + (j as f64 + 0.5) * dx;
            GAUSS5
                .iter()
                .map(|&(x, w)| Ok(0.5 * w * eval_initial(data, mid + 0.5 * dx * x)?[0]))
                .sum::<Result<f64>>()
        })
        .collect()
}

pub fn godunov_solve(
    flux: &FluxModel,
    data: &InitialData,
    config: &FvConfig,
    final_time: f64,
) -> Result<FvGrid> {
    require_scalar(flux)?;
    if !(config.cfl > 0.0 && config.cfl <= 1.0) {
        return Err(NdnnError::StepSize(format!(
            "CFL number {} outside (0, 1]",
            config.cfl
        )));
    }
    if config.cells == 0 || config.snapshots < 2 {
        return Err(NdnnError::Config(
            "Godunov needs at least one cell and two snapshots".into(),
        ));
    }
    if !(final_time > 0.0) {
        return Err(NdnnError::Config(format!(
            "final time must be positive, got {final_time}"
        )));
    }
    let (a, b) = data.domain();
    let dx = (b - a) / config.cells as f64;
    let dirichlet = (data.left_boundary()[0], data.right_boundary()[0]);
    let times: Vec<f64> = (0..config.snapshots)
        .map(|k| final_time * k as f64 / (config.snapshots - 1) as f64)
        .collect();
    let mut u = initial_averages(data, config.cells)?;
    let mut snapshots = vec![u.clone()];
    let mut t = 0.0;
    let mut steps = 0;
    for &target in &times[1..] {
        while t < target {
            let speed = u
                .iter()
                .chain([&dirichlet.0, &dirichlet.1])
                .fold(0.0f64, |m, &v| m.max(flux.scalar_derivative(v).abs()));
            let mut dt = if speed > 0.0 {
                config.cfl * dx / speed
            } else {
                target - t
            };
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(NdnnError::StepSize(format!("time step {dt} at t = {t}")));
            }
            let last = t + dt >= target;
            if last {
                dt = target - t;
            }
            let ghosts = match config.boundary {
                FvBoundary::Transmissive => (u[0], u[config.cells - 1]),
                FvBoundary::Dirichlet => dirichlet,
            };
            u = godunov_step(flux, &u, dx, dt, ghosts).0;
            t = if last { target } else { t + dt };
            steps += 1;
        }
        snapshots.push(u.clone());
    }
    Ok(FvGrid {
        cells: config.cells,
        interval: (a, b),
        cfl: config.cfl,
        dx,
        times,
        snapshots,
        steps,
    })
}

/// Follows the `rank`-th (0-based, left to right) discontinuity of the
/// first snapshot through all snapshots. Positions are cell interfaces
/// maximizing `|u_{j+1} - u_j|` in a window seeded by the previous
/// position; `floor` is the smallest jump across the four cells around
/// that interface still counted as a shock.
pub fn extract_shock_path(
    flux: &FluxModel,
    grid: &FvGrid,
    rank: usize,
    floor: f64,
) -> Result<Vec<(f64, f64)>> {
    let interface = |j: usize| grid.interval.0 + (j + 1) as f64 * grid.dx;
    let jumps = |s: &[f64]| -> Vec<f64> { s.windows(2).map(|w| (w[1] - w[0]).abs()).collect() };
    let first = jumps(&grid.snapshots[0]);
    // Distinct discontinuities: local maxima above the floor.
    let peaks: Vec<usize> = (0..first.len())
        .filter(|&j| {
            first[j] > floor
                && (j == 0 || first[j] >= first[j - 1])
                && (j + 1 == first.len() || first[j] > first[j + 1])
        })
        .collect();
    let Some(&seed) = peaks.get(rank) else {
        return Err(NdnnError::TrackingLost {
            last_time: grid.times[0],
        });
    };
    let mut path = vec![(grid.times[0], interface(seed))];
    let mut pos = seed;
    for k in 1..grid.snapshots.len() {
        let snap = &grid.snapshots[k];
        let speed = snap
            .iter()
            .fold(0.0f64, |m, &v| m.max(flux.scalar_derivative(v).abs()));
        let reach = ((speed * (grid.times[k] - grid.times[k - 1]) / grid.dx).ceil() as usize) + 3;
        let lo = pos.saturating_sub(reach);
        let hi = (pos + reach).min(snap.len() - 2);
        let d = jumps(&snap[lo..=hi + 1]);
        let (off, &best) = d
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty window");
        let j = lo + off;
        // A captured shock spans a few cells.
        let spread = (snap[(j + 3).min(snap.len() - 1)] - snap[j.saturating_sub(1)]).abs();
        if best.max(spread) < floor {
            return Err(NdnnError::TrackingLost {
                last_time: path.last().expect("seeded").0,
            });
        }
        pos = j;
        path.push((grid.times[k], interface(pos)));
    }
    Ok(path)
}

/// Piecewise-linear interpolation of a sampled path, clamped at its ends.
pub fn interpolate_path(path: &[(f64, f64)], t: f64) -> f64 {
    if t <= path[0].0 {
        return path[0].1;
    }
    for w in path.windows(2) {
        if t <= w[1].0 {
            let s = (t - w[0].0) / (w[1].0 - w[0].0);
            return w[0].1 + s * (w[1].1 - w[0].1);
        }
    }
    path.last().expect("nonempty path").1
}

/// Mean absolute gap between each line and its reference path on `times`.
pub fn l1_dl_error(
    lines: &[&dyn Fn(f64) -> f64],
    references: &[Vec<(f64, f64)>],
    times: &[f64],
) -> Vec<f64> {
    lines
        .iter()
        .zip(references)
        .map(|(line, path)| {
            times
                .iter()
                .map(|&t| (line(t) - interpolate_path(path, t)).abs())
                .sum::<f64>()
                / times.len() as f64
        })
        .collect()
}

/// [`l1_dl_error`] for the interior lines of a layout, in order.
pub fn layout_l1_dl_error(
    layout: &SubdomainLayout,
    references: &[Vec<(f64, f64)>],
    times: &[f64],
) -> Vec<f64> {
    let interior = &layout.lines[1..layout.lines.len() - 1];
    let fns: Vec<Box<dyn Fn(f64) -> f64 + '_>> = interior
        .iter()
        .map(|l| Box::new(move |t| l.position(t)) as _)
        .collect();
    let refs: Vec<&dyn Fn(f64) -> f64> = fns.iter().map(|f| f.as_ref()).collect();
    l1_dl_error(&refs, references, times)
}
