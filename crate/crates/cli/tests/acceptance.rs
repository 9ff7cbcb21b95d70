//! Acceptance suite: one PASS/FAIL line per criterion. Always exits 0 so
//! failures are reported rather than hidden behind a red build.

use std::time::Instant;

use ndnn::events::{self, LaxClass};
use ndnn::fv::{extract_shock_path, godunov_solve, layout_l1_dl_error, FvConfig};
use ndnn::geometry::{DiscontinuityLine, FieldAdapter, LineRole, SubdomainLayout};
use ndnn::loss::*;
use ndnn::problem::{euler_conservative, FluxModel, InitialData, ProblemSpec, Profile};
use ndnn::riemann::*;
use ndnn::train::{ddm_train, gd_train, DdmLayout, TrainRun};
use ndnn_cli::{bundled, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

type Outcome = Result<(bool, String), String>;

fn config(name: &str) -> RunConfig {
    bundled(name)
        .expect("bundled experiment")
        .with_overrides(None, None, None)
}

fn counts(rect: usize, edge: usize) -> SampleCounts {
    SampleCounts {
        rect,
        cone: rect,
        unit: edge,
        time: edge,
    }
}

fn train(cfg: &RunConfig) -> Result<(SubdomainLayout, ndnn::train::TrainHistory), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = &cfg.networks;
    let layout =
        SubdomainLayout::build(&cfg.problem, &net.field_hidden, &net.line_hidden, &mut rng)
            .map_err(err)?;
    let out = gd_train(layout, &cfg.train).map_err(err)?;
    Ok((out.layout, out.history))
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|q| t0 + (t1 - t0) * q as f64 / n as f64)
        .collect()
}

fn relative(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    d / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

/// Exact Exp-2 state at `T = 1/2`.
fn exp2_exact(x: f64) -> f64 {
    if x < 0.375 {
        1.0
    } else if x < 0.625 {
        0.5
    } else {
        -2.0
    }
}

fn c1_two_shocks() -> Outcome {
    let cfg = config("exp2");
    let (layout, history) = train(&cfg)?;
    let exact: [fn(f64) -> f64; 2] = [|t| 0.75 * t, |t| 1.0 - 0.75 * t];
    let ts = grid(0.0, 0.5, 500);
    let errs: Vec<f64> = exact
        .iter()
        .enumerate()
        .map(|(k, x)| {
            ts.iter()
                .map(|&t| (layout.lines[k + 1].position(t) - x(t)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let decay = history.initial_loss() / history.final_loss();
    let pass = errs.iter().all(|&e| e <= 0.02) && decay >= 1e3;
    Ok((
        pass,
        format!(
            "max line errors {:.4} {:.4} (limit 0.02); loss decay {decay:.2e} (limit 1e3)",
            errs[0], errs[1]
        ),
    ))
}

/// RK4 on `gamma' = 4 (1/2 - u_L)` from `(1/2, 0)`, with `u_L` the fan
/// state `1 - (x + 2) / (8 t)` clamped to its plateaus.
fn exp1_oracle(t_end: f64) -> f64 {
    let rhs = |t: f64, g: f64| 4.0 * (0.5 - (1.0 - (2.0 + g) / (8.0 * t)).clamp(0.5, 1.0));
    let steps = 1000;
    let h = (t_end - 0.5) / steps as f64;
    let (mut t, mut g) = (0.5, 0.0);
    for _ in 0..steps {
        let k1 = rhs(t, g);
        let k2 = rhs(t + h / 2.0, g + h / 2.0 * k1);
        let k3 = rhs(t + h / 2.0, g + h / 2.0 * k2);
        let k4 = rhs(t + h, g + h * k3);
        g += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
    }
    g
}

fn c2_stationary_shock() -> Outcome {
    let mut cfg = config("exp1");
    cfg.train.samples = SampleCounts::from_points(500);
    cfg.train.learning_rate = 0.0125;
    cfg.train.max_epochs = 20_000;
    let (layout, _) = train(&cfg)?;
    let line = &layout.lines[1];
    let early = grid(0.0, 0.5, 500)
        .iter()
        .map(|&t| line.position(t).abs())
        .fold(0.0, f64::max);
    let oracle = exp1_oracle(0.75);
    let closed = 4.0 * 1.5f64.sqrt() - 3.0 - 2.0;
    let late = (line.position(0.75) - oracle).abs();
    let pass = early <= 0.02 && late <= 0.03;
    Ok((
        pass,
        format!(
            "max |n| on [0,0.5] {early:.4} (limit 0.02); n(3/4) {:.4} vs oracle {oracle:.5} (closed form {closed:.5}), error {late:.4} (limit 0.03)",
            line.position(0.75)
        ),
    ))
}

const STEP: f64 = 1e-5;
const DRAWS: usize = 100;
const GRAD_LIMIT: f64 = 1e-6;
const GRAD: SampleCounts = SampleCounts {
    rect: 16,
    cone: 16,
    unit: 16,
    time: 16,
};
const TERMS: [&str; 4] = ["residual", "rh", "ic", "interface"];

fn only(term: &str) -> LossConfig {
    let mut w = LossWeights {
        residual: 0.0,
        rh: 0.0,
        ic: 0.0,
        interface: 0.0,
    };
    match term {
        "residual" => w.residual = 1.0,
        "rh" => w.rh = 1.0,
        "ic" => w.ic = 1.0,
        _ => w.interface = 1.0,
    }
    LossConfig {
        weights: w,
        boundary_inflow: true,
        boundary_rh: true,
    }
}

/// Uniform parameters in `[-0.5, 0.5]`, output biases restored so system
/// states stay admissible.
fn redraw(layout: &mut SubdomainLayout, biases: &[Vec<f64>], rng: &mut ChaCha8Rng) {
    let n = layout.parameters().len();
    let flat: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    layout.set_parameters(&flat).expect("length matches");
    for (f, b) in layout.fields.iter_mut().zip(biases) {
        if let Some(p) = f.params_mut() {
            p.set_output_bias(b);
            p.scale_output_weights(0.1);
        }
    }
}

type Built = (SubdomainLayout, Vec<Vec<f64>>);

fn scalar_layouts(rng: &mut ChaCha8Rng) -> Result<Vec<(&'static str, Built)>, String> {
    let burgers = ProblemSpec::new(
        FluxModel::Burgers,
        InitialData::new(
            vec![-1.0, 0.0, 1.0, 2.0],
            vec![
                Profile::Const(vec![1.0]),
                Profile::Const(vec![0.5]),
                Profile::Const(vec![-2.0]),
            ],
        ),
        0.5,
    );
    let quadratic = config("exp1").problem;
    Ok(vec![
        (
            "burgers",
            (
                SubdomainLayout::build(&burgers, &[4], &[4], rng).map_err(err)?,
                vec![vec![0.0]; 3],
            ),
        ),
        (
            "quadratic",
            (
                SubdomainLayout::build(&quadratic, &[4], &[4], rng).map_err(err)?,
                vec![vec![0.0]; 2],
            ),
        ),
    ])
}

fn system_layout(
    flux: FluxModel,
    ul: Vec<f64>,
    ur: Vec<f64>,
    edges: Vec<f64>,
    t: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Built, String> {
    let p = ProblemSpec::new(
        flux.clone(),
        InitialData::new(
            edges,
            vec![Profile::Const(ul.clone()), Profile::Const(ur.clone())],
        ),
        t,
    );
    let d = exact_riemann_oracle(&flux, &ul, &ur).map_err(err)?;
    let (_, layout) = handoff(&d, &p, 0, &[4], &[4], rng).map_err(err)?;
    Ok((layout, d.states.clone()))
}

fn global_worst(built: &mut Built, seed: u64, rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let samples = SampleSet::draw(GRAD, built.0.final_time(), seed).map_err(err)?;
    let mut worst: f64 = 0.0;
    for term in &TERMS[..3] {
        let cfg = only(term);
        for _ in 0..DRAWS {
            redraw(&mut built.0, &built.1, rng);
            worst = worst.max(global_gradient_error(&built.0, &cfg, &samples, STEP).map_err(err)?);
        }
    }
    Ok(worst)
}

fn local_worst(built: &mut Built, seed: u64, rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let samples = SampleSet::draw(GRAD, built.0.final_time(), seed).map_err(err)?;
    let mut worst: f64 = 0.0;
    for term in TERMS {
        let cfg = only(term);
        for _ in 0..DRAWS {
            redraw(&mut built.0, &built.1, rng);
            let mut ddm = DdmLayout::split(&built.0);
            let n = ddm.pieces.len();
            for piece in &mut ddm.pieces[1..] {
                if let Some(p) = piece.left.params_mut() {
                    let flat: Vec<f64> = (0..p.len()).map(|_| rng.gen_range(-0.5..0.5)).collect();
                    p.assign_flat(&flat).map_err(err)?;
                }
            }
            for i in 0..n {
                let p = &ddm.pieces[i];
                let view = LocalView {
                    index: i,
                    field: &p.field,
                    left: &p.left,
                    right: &p.right,
                    kind: p.kind,
                    left_neighbor: (i > 0)
                        .then(|| (&ddm.pieces[i - 1].field, &ddm.pieces[i - 1].right)),
                    right_neighbor: (i + 1 < n)
                        .then(|| (&ddm.pieces[i + 1].field, &ddm.pieces[i + 1].left)),
                };
                let e =
                    local_gradient_error(&ddm.problem, &ddm.scaling, &view, &cfg, &samples, STEP)
                        .map_err(err)?;
                worst = worst.max(e);
            }
        }
    }
    Ok(worst)
}

fn c3_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cases = scalar_layouts(&mut rng)?;
    let sw = FluxModel::ShallowWater { g: 1.0 };
    cases.push((
        "shallow-water",
        system_layout(
            sw,
            vec![3.0, 5.0],
            vec![3.0, -5.0],
            vec![-0.1, 0.0, 0.1],
            0.0025,
            &mut rng,
        )?,
    ));
    let g = 1.4;
    cases.push((
        "euler",
        system_layout(
            FluxModel::Euler { gamma: g },
            euler_conservative(g, 1.0, 0.0, 1.0),
            euler_conservative(g, 0.125, 0.0, 0.1),
            vec![0.0, 0.5, 1.0],
            0.2,
            &mut rng,
        )?,
    ));
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for (seed, (name, built)) in cases.iter_mut().enumerate() {
        let e = global_worst(built, seed as u64, &mut rng)?;
        parts.push(format!("{name} {e:.1e}"));
        worst = worst.max(e);
    }
    for (seed, k) in [(10, 0), (11, 2)] {
        let e = local_worst(&mut cases[k].1, seed, &mut rng)?;
        parts.push(format!("local {} {e:.1e}", cases[k].0));
        worst = worst.max(e);
    }
    Ok((
        worst <= GRAD_LIMIT,
        format!(
            "worst relative error {worst:.2e} (limit 1e-6): {}",
            parts.join(", ")
        ),
    ))
}

fn c4_exact_oracle() -> Outcome {
    let p = config("exp2").problem;
    let lines = vec![
        DiscontinuityLine::boundary(-1.0),
        DiscontinuityLine::analytic(|t| (0.75 * t, 0.75), LineRole::Physical, 0),
        DiscontinuityLine::analytic(|t| (1.0 - 0.75 * t, -0.75), LineRole::Physical, 1),
        DiscontinuityLine::boundary(2.0),
    ];
    let fields = vec![
        FieldAdapter::constant(vec![1.0]),
        FieldAdapter::constant(vec![0.5]),
        FieldAdapter::constant(vec![-2.0]),
    ];
    let layout = SubdomainLayout::from_parts(&p, lines, fields).map_err(err)?;
    let samples = SampleSet::draw(SampleCounts::from_points(500), p.final_time, 0).map_err(err)?;
    let l = global_loss(&layout, &LossConfig::default(), &samples).map_err(err)?;
    Ok((
        l.total <= 1e-10,
        format!("global loss {:.3e} (limit 1e-10)", l.total),
    ))
}

fn c5_interaction() -> Outcome {
    let cfg = config("exp5");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = &cfg.networks;
    let layout =
        SubdomainLayout::build(&cfg.problem, &net.field_hidden, &net.line_hidden, &mut rng)
            .map_err(err)?;
    let layout = gd_train(layout, &cfg.train).map_err(err)?.layout;
    let Some(report) = events::detect_interaction(&layout, 1).map_err(err)? else {
        return Ok((false, "no interaction detected".into()));
    };
    let (t, x) = (report.physical_time, report.position);
    let (_, fresh) = events::redecompose(
        &layout,
        &report,
        &net.field_hidden,
        &net.line_hidden,
        &mut rng,
    )
    .map_err(err)?;
    let count = fresh.subdomain_count();
    let after = gd_train(fresh, &cfg.train).map_err(err)?.layout;
    let mut bad = 0;
    let ts = grid(0.0, after.final_time(), 100);
    for i in 1..after.lines.len() - 1 {
        for &s in &ts[1..] {
            if !matches!(events::check_lax(&after, i, s), Ok(LaxClass::Entropic(_))) {
                bad += 1;
            }
        }
    }
    let pass = (t - 0.45).abs() <= 0.02 && (x - 0.55).abs() <= 0.02 && count == 2 && bad == 0;
    Ok((
        pass,
        format!("t* {t:.4}, x* {x:.4} (targets 0.45, 0.55 +- 0.02); {count} subdomains after; {bad} of {} grid times fail check_lax", ts.len() - 1),
    ))
}

fn c6_generation() -> Outcome {
    let mut cfg = config("exp4");
    cfg.train.learning_rate = 0.02;
    cfg.train.max_epochs = 10_000;
    let (layout, _) = train(&cfg)?;
    let tol = events::generation_tolerance(&layout.problem);
    let Some(report) = events::detect_generation(&layout, 1, tol).map_err(err)? else {
        return Ok((
            false,
            format!("no generation detected (tolerance {tol:.3})"),
        ));
    };
    let ts_star = report.time;
    let flux_jump = |t: f64| -> Result<f64, String> {
        Ok(events::flux_jump(&layout, 1, t)
            .map_err(err)?
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt())
    };
    let ts = grid(0.0, layout.final_time(), 200);
    let mut before: f64 = 0.0;
    let mut after = Vec::new();
    for &t in &ts {
        let j = flux_jump(t)?;
        if t < ts_star {
            before = before.max(j);
        } else {
            after.push(j);
        }
    }
    let last = *after.last().unwrap_or(&0.0);
    let drop = after.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    let grows = last > tol && drop <= 0.05 * last && last > after[0];
    let pass = (ts_star - 0.25).abs() <= 0.025 && before <= tol && grows;
    Ok((
        pass,
        format!(
            "t* {ts_star:.4} (target 0.25 +- 0.025); max flux jump before t* {before:.4}, tolerance {tol:.4}; flux jump {:.4} at t* and {last:.4} at T",
            after.first().copied().unwrap_or(0.0)
        ),
    ))
}

fn decompose_h(name: &str) -> Result<(f64, f64), String> {
    let cfg = config(name);
    let spec = cfg.decompose.as_ref().ok_or("no decompose section")?;
    let p = &cfg.problem;
    let x = p.initial.breakpoints()[0];
    let ul = p.initial.profiles[0].eval(x);
    let ur = p.initial.profiles[1].eval(x);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fit = decompose_two(
        &p.flux,
        &ul,
        &ur,
        [spec.kinds[0], spec.kinds[1]],
        &spec.config,
        &mut rng,
    )
    .map_err(err)?;
    let exact = exact_riemann_oracle(&p.flux, &ul, &ur).map_err(err)?;
    Ok((fit.decomposition.states[1][0], exact.states[1][0]))
}

fn c7_riemann() -> Outcome {
    let (h1, e1) = decompose_h("exp8a-shocks")?;
    let (h2, e2) = decompose_h("exp8a-shock-rarefaction")?;
    let stated1 = (h1 - 6.428).abs() / 6.428;
    let exact1 = (h1 - e1).abs() / e1;
    let stated2 = (h2 - 6.3298).abs() / 6.3298;
    let pass = stated1 <= 0.1 && exact1 <= 0.02 && stated2 <= 0.1;
    Ok((
        pass,
        format!(
            "shocks: h* {h1:.4}, {:.1}% from 6.428 (limit 10%), {:.1}% from exact {e1:.4} (limit 2%); shock/rarefaction: h* {h2:.4}, {:.1}% from 6.3298 (limit 10%, exact {e2:.4})",
            100.0 * stated1,
            100.0 * exact1,
            100.0 * stated2
        ),
    ))
}

fn c8_ddm() -> Outcome {
    let mut cfg = config("exp7");
    cfg.train.samples = counts(300, 150);
    cfg.train.learning_rate = 0.02;
    let run: &TrainRun = &cfg.train;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = &cfg.networks;
    let ddm = DdmLayout::build(&cfg.problem, &net.field_hidden, &net.line_hidden, &mut rng)
        .map_err(err)?;
    let h = ddm_train(ddm, run).map_err(err)?.history;
    let final_mismatch = h.sweeps.last().map_or(h.entry_mismatch, |s| s.mismatch);
    let sums: Vec<f64> = h
        .sweeps
        .iter()
        .map(|s| s.end_losses.iter().map(|l| l.total).sum())
        .collect();
    let worst_rise = sums.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    let pass = final_mismatch < 1e-3 && h.sweeps.len() <= 50 && worst_rise <= 1.05;
    Ok((
        pass,
        format!(
            "{} sweeps, final mismatch {final_mismatch:.3e} (limit 1e-3); summed local loss {:.3e} -> {:.3e}, worst sweep-to-sweep ratio {worst_rise:.3} (limit 1.05)",
            h.sweeps.len(),
            sums.first().copied().unwrap_or(0.0),
            sums.last().copied().unwrap_or(0.0)
        ),
    ))
}

/// Cells in `[lo, hi]` whose value sits between the plateaus `a` and `b`
/// by more than a tenth of the jump.
fn intermediate(xs: &[f64], us: &[f64], (lo, hi): (f64, f64), a: f64, b: f64) -> usize {
    let margin = 0.1 * (a - b).abs();
    let (min, max) = (a.min(b) + margin, a.max(b) - margin);
    xs.iter()
        .zip(us)
        .filter(|(x, u)| (lo..=hi).contains(*x) && (min..=max).contains(*u))
        .count()
}

fn c9_godunov() -> Outcome {
    let cfg = config("exp2");
    let p = &cfg.problem;
    let solve = |cells: usize| {
        let fv = FvConfig {
            cells,
            ..cfg.godunov.clone()
        };
        godunov_solve(&p.flux, &p.initial, &fv, p.final_time).map_err(err)
    };
    let coarse = solve(200)?;
    let fine = solve(400)?;
    let e200 = coarse.l1_error(coarse.snapshots.len() - 1, exp2_exact);
    let e400 = fine.l1_error(fine.snapshots.len() - 1, exp2_exact);
    let ratio = e200 / e400;
    let (layout, _) = train(&cfg)?;
    let xs: Vec<f64> = (0..coarse.cells).map(|j| coarse.center(j)).collect();
    let ndnn: Vec<f64> = xs
        .iter()
        .map(|&x| layout.reconstruct(x, 0.5).map(|u| u[0]))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let window = (0.2, 0.55);
    let smeared = intermediate(
        &xs,
        coarse.snapshots.last().expect("snapshots"),
        window,
        1.0,
        0.5,
    );
    let sharp = intermediate(&xs, &ndnn, window, 1.0, 0.5);
    let pass = (1.8..=2.2).contains(&ratio) && smeared >= 2 && sharp < smeared;
    Ok((
        pass,
        format!(
            "L1 error {e200:.4e} (200 cells), {e400:.4e} (400 cells), ratio {ratio:.3} (range 1.8-2.2); intermediate cells at the x = 0.375 shock: Godunov {smeared}, NDNN {sharp}"
        ),
    ))
}

fn c10_trend() -> Outcome {
    let base = config("exp3");
    let p = &base.problem;
    let fine = godunov_solve(&p.flux, &p.initial, &base.godunov, p.final_time).map_err(err)?;
    let floor = 0.05 * p.initial.total_variation();
    let refs: Vec<_> = (0..p.initial.breakpoints().len())
        .map(|r| extract_shock_path(&p.flux, &fine, r, floor))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let times = grid(0.0, p.final_time, 100);
    let mut sums = Vec::new();
    for n in [2, 4, 8, 16] {
        let mut cfg = base.clone();
        cfg.networks.field_hidden = vec![n];
        cfg.networks.line_hidden = vec![n];
        cfg.train.samples = counts(512, 256);
        cfg.train.max_epochs = 20_000;
        let (layout, _) = train(&cfg)?;
        sums.push(
            layout_l1_dl_error(&layout, &refs, &times)
                .iter()
                .sum::<f64>(),
        );
    }
    let pass = sums.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = [2, 4, 8, 16]
        .iter()
        .zip(&sums)
        .map(|(n, e)| format!("{n}: {e:.4e}"))
        .collect();
    Ok((
        pass,
        format!("summed l1 DL error by width {}", shown.join(", ")),
    ))
}

fn euler_properties() -> Outcome {
    let g = 1.4;
    let eu = FluxModel::Euler { gamma: g };
    let cfg = DecomposeConfig {
        fit: CurveFit {
            max_epochs: 5000,
            ..Default::default()
        },
        ..Default::default()
    };
    let pairs = [
        (
            euler_conservative(g, 1.0, 0.2, 1.0),
            euler_conservative(g, 1.1, 0.0, 1.2),
            [CurveKind::Shock; 3],
        ),
        (
            euler_conservative(g, 1.0, 0.0, 1.0),
            euler_conservative(g, 0.9, 0.0, 0.85),
            [CurveKind::Rarefaction, CurveKind::Shock, CurveKind::Shock],
        ),
    ];
    let mut worst: f64 = 0.0;
    let mut inconsistent = 0;
    for (seed, (ul, ur, kinds)) in pairs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let exact = exact_riemann_oracle(&eu, ul, ur).map_err(err)?;
        let d = decompose_three(&eu, ul, ur, *kinds, &cfg, &mut rng)
            .map_err(err)?
            .decomposition;
        for k in 1..3 {
            worst = worst.max(relative(&d.states[k], &exact.states[k]));
        }
        for w in &d.waves {
            let ok = match (w.kind, w.lax) {
                (WaveKind::Shock, Some(LaxClass::Entropic(f))) => f == w.family,
                (WaveKind::Contact, Some(LaxClass::Contact(f))) => f == w.family,
                (WaveKind::Rarefaction, lax) => lax != Some(LaxClass::Violated),
                _ => false,
            };
            inconsistent += usize::from(!ok);
        }
    }
    Ok((
        worst < 0.02 && inconsistent == 0,
        format!("worst relative state error {worst:.2e} (limit 2%); {inconsistent} waves with inconsistent Lax class"),
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("1 two-shock Burgers lines", c1_two_shocks),
        ("2 stationary shock and interaction", c2_stationary_shock),
        ("3 gradient correctness", c3_gradients),
        ("4 exact-solution oracle", c4_exact_oracle),
        ("5 shock interaction", c5_interaction),
        ("6 shock generation", c6_generation),
        ("7 Riemann decomposition", c7_riemann),
        ("8 DDM convergence", c8_ddm),
        ("9 finite-volume reference", c9_godunov),
        ("10 convergence trend", c10_trend),
        ("Euler decomposition properties", euler_properties),
    ];
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += usize::from(!pass);
        println!(
            "{} criterion {name}: {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("{failed} criteria failed");
}
