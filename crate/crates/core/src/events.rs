//! Shock generation and interaction detection, re-decomposition after an
//! interaction, and jump diagnostics along lines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NdnnError, Result};
use crate::geometry::{fmt_num, LineRole, SubdomainLayout};
use crate::problem::{FluxModel, InitialData, ProblemSpec, Profile};

/// Uniform time-grid size used by both detectors.
pub const EVENT_GRID: usize = 1000;

/// Bisection stops once the bracket is this narrow.
pub const BISECTION_TOLERANCE: f64 = 1e-10;

/// Relative tolerance of the equality branch of the Lax test.
pub const LAX_EQUALITY: f64 = 1e-6;

/// Generation tolerance as a fraction of the initial total variation.
pub const GENERATION_FRACTION: f64 = 0.01;

/// Samples per interval of re-decomposed initial data.
pub const REDECOMPOSE_SAMPLES: usize = 401;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Generation,
    Interaction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub kind: EventKind,
    /// Time on the layout's own clock.
    pub time: f64,
    /// `time` plus the layout's time offset.
    pub physical_time: f64,
    pub position: f64,
    /// Indices into the layout's line list.
    pub lines: Vec<usize>,
    /// Jump (generation) or gap (interaction) magnitude at detection.
    pub confidence: f64,
    /// Later crossings of the same pair.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub further_crossings: Vec<f64>,
}

impl EventReport {
    /// Role of a generated line at `t`: artificial before the event.
    pub fn role_at(&self, t: f64) -> LineRole {
        if t < self.time {
            LineRole::Artificial
        } else {
            LineRole::Physical
        }
    }
}

fn grid(final_time: f64) -> impl Iterator<Item = f64> {
    (0..EVENT_GRID).map(move |j| final_time * j as f64 / (EVENT_GRID - 1) as f64)
}

fn check_interior(layout: &SubdomainLayout, i: usize) -> Result<()> {
    if i == 0 || i + 1 >= layout.lines.len() {
        return Err(NdnnError::Structural(format!(
            "line {i} is not an interior line of a layout with {} lines",
            layout.lines.len()
        )));
    }
    Ok(())
}

/// `|N+ - N-|` across interior line `i` at `t`.
pub fn jump_norm(layout: &SubdomainLayout, i: usize, t: f64) -> f64 {
    let (minus, plus) = layout.traces(i, t);
    minus
        .iter()
        .zip(&plus)
        .map(|(a, b)| (b - a).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Default generation tolerance for a problem.
pub fn generation_tolerance(problem: &ProblemSpec) -> f64 {
    GENERATION_FRACTION * problem.initial.total_variation()
}

/// Latest time before which the jump across line `i` stays within
/// `tolerance`. Returns `None` when the jump is within tolerance at `T`; a
/// jump already present at `t = 0` is reported at `t* = 0`.
pub fn detect_generation(
    layout: &SubdomainLayout,
    i: usize,
    tolerance: f64,
) -> Result<Option<EventReport>> {
    check_interior(layout, i)?;
    let big_t = layout.final_time();
    let jumps: Vec<(f64, f64)> = grid(big_t).map(|t| (t, jump_norm(layout, i, t))).collect();
    let report = |time: f64, confidence: f64| EventReport {
        kind: EventKind::Generation,
        time,
        physical_time: time + layout.problem.time_offset,
        position: layout.lines[i].position(time),
        lines: vec![i],
        confidence,
        further_crossings: Vec::new(),
    };
    let Some(k) = jumps.iter().rposition(|&(_, j)| j <= tolerance) else {
        return Ok(Some(report(0.0, jumps[0].1)));
    };
    if k + 1 == jumps.len() {
        return Ok(None);
    }
    let (mut lo, mut hi) = (jumps[k].0, jumps[k + 1].0);
    while hi - lo > BISECTION_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if jump_norm(layout, i, mid) <= tolerance {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t_star = 0.5 * (lo + hi);
    Ok(Some(report(t_star, jumps[k + 1].1)))
}

/// First crossing of interior lines `i` and `i + 1`, refined by bisection.
pub fn detect_interaction(layout: &SubdomainLayout, i: usize) -> Result<Option<EventReport>> {
    check_interior(layout, i)?;
    check_interior(layout, i + 1)?;
    let (l, r) = (&layout.lines[i], &layout.lines[i + 1]);
    let gap = |t: f64| r.position(t) - l.position(t);
    let ts: Vec<f64> = grid(layout.final_time()).collect();
    let mut crossings = Vec::new();
    // Lines leaving one breakpoint start with a zero gap.
    let mut prev = (ts[1], gap(ts[1]));
    for &t in &ts[2..] {
        let g = gap(t);
        if g <= 0.0 && prev.1 > 0.0 || g > 0.0 && prev.1 <= 0.0 {
            crossings.push((prev.0, t));
        }
        prev = (t, g);
    }
    if gap(ts[1]) <= 0.0 {
        crossings.insert(0, (0.0, ts[1]));
    }
    let Some(&(lo0, hi0)) = crossings.first() else {
        return Ok(None);
    };
    let sign_lo = gap(lo0) > 0.0;
    let (mut lo, mut hi) = (lo0, hi0);
    while hi - lo > BISECTION_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if (gap(mid) > 0.0) == sign_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t_star = 0.5 * (lo + hi);
    let position = 0.5 * (l.position(t_star) + r.position(t_star));
    Ok(Some(EventReport {
        kind: EventKind::Interaction,
        time: t_star,
        physical_time: t_star + layout.problem.time_offset,
        position,
        lines: vec![i, i + 1],
        confidence: gap(t_star).abs(),
        further_crossings: crossings[1..].iter().map(|&(a, b)| 0.5 * (a + b)).collect(),
    }))
}

/// Interaction-free problem on `[t*, T]`: the subdomain squeezed between
/// the two colliding lines is dropped, a single line is pinned at `x*`, and
/// the initial data is the old reconstruction at `t*`.
pub fn redecompose_problem(layout: &SubdomainLayout, report: &EventReport) -> Result<ProblemSpec> {
    if report.kind != EventKind::Interaction
        || report.lines.len() != 2
        || report.lines[1] != report.lines[0] + 1
    {
        return Err(NdnnError::Structural(
            "re-decomposition needs an interaction of two adjacent lines".into(),
        ));
    }
    let (i, j) = (report.lines[0], report.lines[1]);
    let n_lines = layout.lines.len();
    if i == 0 || j + 1 >= n_lines {
        return Err(NdnnError::Structural(
            "frozen domain ends never merge".into(),
        ));
    }
    let t_star = report.time;
    if !(t_star > 0.0 && t_star < layout.final_time()) {
        return Err(NdnnError::Structural(format!(
            "interaction time {t_star} outside (0, T)"
        )));
    }
    // Surviving lines: every line except the pair, plus the merged one.
    let mut edges = Vec::with_capacity(n_lines - 1);
    let mut owners = Vec::with_capacity(n_lines - 2);
    let mut artificial = Vec::new();
    for (k, line) in layout.lines.iter().enumerate() {
        if k == j {
            continue;
        }
        let x = if k == i {
            report.position
        } else {
            line.position(t_star)
        };
        if k > 0 && k + 1 < n_lines && k != i && line.role == LineRole::Artificial {
            artificial.push(edges.len() - 1);
        }
        edges.push(x);
        // Interval to the right of this line is owned by the old subdomain
        // right of it (right of `j` for the merged line).
        if k + 1 < n_lines {
            owners.push(if k == i { j } else { k });
        }
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(NdnnError::Structural(format!(
            "lines out of order at t* = {t_star}: {edges:?}"
        )));
    }
    let profiles = owners
        .iter()
        .zip(edges.windows(2))
        .map(|(&s, w)| {
            let (lo, hi) = (w[0], w[1]);
            let xs: Vec<f64> = (0..REDECOMPOSE_SAMPLES)
                .map(|q| lo + (hi - lo) * q as f64 / (REDECOMPOSE_SAMPLES - 1) as f64)
                .collect();
            let values = xs
                .iter()
                .map(|&x| layout.fields[s].value(&layout.scaling, x, t_star))
                .collect();
            Profile::Tabulated { xs, values }
        })
        .collect();
    let old = &layout.problem;
    let mut initial = InitialData::new(edges, profiles);
    initial.left_state = Some(old.initial.left_boundary());
    initial.right_state = Some(old.initial.right_boundary());
    Ok(ProblemSpec {
        flux: old.flux.clone(),
        initial,
        final_time: old.final_time - t_star,
        wave_counts: Vec::new(),
        artificial,
        time_offset: old.time_offset + t_star,
    })
}

/// [`redecompose_problem`] plus a freshly initialized layout.
pub fn redecompose<R: Rng + ?Sized>(
    layout: &SubdomainLayout,
    report: &EventReport,
    field_hidden: &[usize],
    line_hidden: &[usize],
    rng: &mut R,
) -> Result<(ProblemSpec, SubdomainLayout)> {
    let problem = redecompose_problem(layout, report)?;
    let fresh = SubdomainLayout::build(&problem, field_hidden, line_hidden, rng)?;
    Ok((problem, fresh))
}

/// `f(N+) - f(N-)` across interior line `i` at `t`.
pub fn flux_jump(layout: &SubdomainLayout, i: usize, t: f64) -> Result<Vec<f64>> {
    check_interior(layout, i)?;
    let (minus, plus) = layout.traces(i, t);
    let (fm, fp) = (
        layout.problem.flux.flux(&minus)?,
        layout.problem.flux.flux(&plus)?,
    );
    Ok(fp.iter().zip(&fm).map(|(p, m)| p - m).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", content = "family", rename_all = "snake_case")]
pub enum LaxClass {
    /// Lax shock of the given (0-based) family.
    Entropic(usize),
    /// Characteristic speeds of the family equal the line speed on both
    /// sides.
    Contact(usize),
    Violated,
}

impl LaxClass {
    pub fn label(&self) -> String {
        match self {
            LaxClass::Entropic(k) => format!("entropic-{}", k + 1),
            LaxClass::Contact(k) => format!("contact-{}", k + 1),
            LaxClass::Violated => "violated".into(),
        }
    }
}

/// Lax classification of a jump from `minus` to `plus` moving at `speed`.
pub fn classify_lax(flux: &FluxModel, minus: &[f64], plus: &[f64], speed: f64) -> Result<LaxClass> {
    let lm = flux.eigenvalues(minus)?;
    let lp = flux.eigenvalues(plus)?;
    let scale = lm
        .iter()
        .chain(&lp)
        .fold(speed.abs().max(1.0), |s, l| s.max(l.abs()));
    let tol = LAX_EQUALITY * scale;
    let m = lm.len();
    for k in 0..m {
        if (lm[k] - speed).abs() <= tol && (lp[k] - speed).abs() <= tol {
            return Ok(LaxClass::Contact(k));
        }
    }
    for k in 0..m {
        let own = lp[k] < speed && speed < lm[k];
        let below = k == 0 || lm[k - 1] < speed;
        let above = k + 1 == m || speed < lp[k + 1];
        if own && below && above && !flux.linearly_degenerate(k) {
            return Ok(LaxClass::Entropic(k));
        }
    }
    Ok(LaxClass::Violated)
}

/// Lax classification of interior line `i` at `t`.
pub fn check_lax(layout: &SubdomainLayout, i: usize, t: f64) -> Result<LaxClass> {
    check_interior(layout, i)?;
    let (minus, plus) = layout.traces(i, t);
    let (_, speed) = layout.lines[i].eval(t);
    classify_lax(&layout.problem.flux, &minus, &plus, speed)
}

/// CSV rows `t, line, lax, df_1, ..., df_m` on a uniform grid, every
/// interior line per time, physical time.
pub fn write_diagnostics<W: std::io::Write>(
    layout: &SubdomainLayout,
    points: usize,
    out: W,
) -> Result<()> {
    let m = layout.problem.flux.components();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "line".into(), "lax".into()];
    header.extend((1..=m).map(|k| format!("flux_jump_{k}")));
    w.write_record(&header)?;
    let big_t = layout.final_time();
    for q in 0..points {
        let t = big_t * q as f64 / (points - 1).max(1) as f64;
        for i in 1..layout.lines.len() - 1 {
            let mut row = vec![fmt_num(t + layout.problem.time_offset), i.to_string()];
            row.push(match check_lax(layout, i, t) {
                Ok(c) => c.label(),
                Err(_) => "inadmissible".into(),
            });
            match flux_jump(layout, i, t) {
                Ok(j) => row.extend(j.into_iter().map(fmt_num)),
                Err(_) => row.extend((0..m).map(|_| "nan".to_string())),
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
