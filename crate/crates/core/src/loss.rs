//! Sampled loss functionals.
//!
//! Every term is a mean over its learning points. Terms are first recorded
//! on a [`Tape`] so the same assembly yields values and exact gradients;
//! the plain `*_term` functions evaluate a single term with every network
//! frozen.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::gradcheck::{central_difference, relative_error};
use crate::autodiff::{GradVector, Mat, MlpParams, NetVars, Tape, Var};
use crate::error::{NdnnError, Result};
use crate::geometry::{
    DiscontinuityLine, FieldAdapter, InputScaling, ReferenceDomain, SubdomainLayout,
    CONE_APEX_FRACTION,
};
use crate::problem::{eval_initial, FluxModel, InitialData};

/// Weights of the residual, Rankine-Hugoniot, initial-condition and
/// interface-matching terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub residual: f64,
    pub rh: f64,
    pub ic: f64,
    pub interface: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            residual: 0.5,
            rh: 0.5,
            ic: 0.5,
            interface: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("residual", self.residual),
            ("rh", self.rh),
            ("ic", self.ic),
            ("interface", self.interface),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(NdnnError::Config(format!(
                    "loss weight `{name}` must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        LossWeights {
            residual: s * self.residual,
            rh: s * self.rh,
            ic: s * self.ic,
            interface: s * self.interface,
        }
    }
}

/// Weights plus the boundary policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub weights: LossWeights,
    /// Penalize mismatch with the boundary state at `a` or `b` wherever a
    /// characteristic enters the domain there.
    pub boundary_inflow: bool,
    /// Add Rankine-Hugoniot terms on the frozen ends against the constant
    /// boundary states.
    pub boundary_rh: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            boundary_inflow: true,
            boundary_rh: false,
        }
    }
}

/// Learning-point counts per reference domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    /// Points in `(0, 1) x (0, T)`.
    pub rect: usize,
    /// Points in the cone `|x| <= t <= T`.
    pub cone: usize,
    /// Points on `(0, 1)` for the initial condition.
    pub unit: usize,
    /// Points on `(0, T)` for line terms.
    pub time: usize,
}

impl SampleCounts {
    /// `n` interior points and `max(n / 2, 50)` points on each edge set.
    pub fn from_points(n: usize) -> Self {
        let edge = (n / 2).max(50);
        SampleCounts {
            rect: n,
            cone: n,
            unit: edge,
            time: edge,
        }
    }
}

/// Learning points held fixed for a whole training run; each set is a
/// `1 x count` row.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub rect_x: Mat,
    pub rect_t: Mat,
    pub cone_x: Mat,
    pub cone_t: Mat,
    pub unit_x: Mat,
    pub time_t: Mat,
    pub seed: u64,
}

fn row(v: Vec<f64>) -> Mat {
    let n = v.len();
    Mat::from_shape_vec((1, n), v).unwrap()
}

impl SampleSet {
    /// Uniform draws, except cone times which have density proportional to
    /// `t` above the apex band so that points are uniform in the cone.
    pub fn draw(counts: SampleCounts, final_time: f64, seed: u64) -> Result<Self> {
        if counts.rect == 0 || counts.cone == 0 || counts.unit == 0 || counts.time == 0 {
            return Err(NdnnError::Config(format!(
                "sample counts must be positive: {counts:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let big_t = final_time;
        let mut uniform =
            |n: usize, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.gen::<f64>() * hi).collect() };
        let rect_x = uniform(counts.rect, 1.0);
        let rect_t = uniform(counts.rect, big_t);
        let unit_x = uniform(counts.unit, 1.0);
        let time_t = uniform(counts.time, big_t);
        let tmin = CONE_APEX_FRACTION * big_t;
        let u = uniform(counts.cone, 1.0);
        let v = uniform(counts.cone, 1.0);
        let cone_t: Vec<f64> = u
            .iter()
            .map(|&s| (tmin * tmin + s * (big_t * big_t - tmin * tmin)).sqrt())
            .collect();
        let cone_x = cone_t
            .iter()
            .zip(&v)
            .map(|(&t, &s)| t * (2.0 * s - 1.0))
            .collect();
        Ok(SampleSet {
            rect_x: row(rect_x),
            rect_t: row(rect_t),
            cone_x: row(cone_x),
            cone_t: row(cone_t),
            unit_x: row(unit_x),
            time_t: row(time_t),
            seed,
        })
    }
}

/// Unweighted sums of each term family plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub residual: f64,
    pub rh: f64,
    pub ic: f64,
    pub interface: f64,
}

impl LossBreakdown {
    fn check(self) -> Result<Self> {
        for (term, v) in [
            ("residual", self.residual),
            ("rh", self.rh),
            ("ic", self.ic),
            ("interface", self.interface),
            ("total", self.total),
        ] {
            if !v.is_finite() {
                return Err(NdnnError::Divergence {
                    epoch: 0,
                    term: term.into(),
                    subdomain: None,
                });
            }
        }
        Ok(self)
    }
}

/// A field together with its trainable binding, if any.
#[derive(Clone, Copy)]
pub struct FieldRef<'a, 't> {
    pub field: &'a FieldAdapter,
    pub net: Option<&'a NetVars<'t>>,
}

/// A line together with its trainable binding, if any.
#[derive(Clone, Copy)]
pub struct LineRef<'a, 't> {
    pub line: &'a DiscontinuityLine,
    pub net: Option<&'a NetVars<'t>>,
}

impl<'a, 't> FieldRef<'a, 't> {
    pub fn frozen(field: &'a FieldAdapter) -> Self {
        FieldRef { field, net: None }
    }
}

impl<'a, 't> LineRef<'a, 't> {
    pub fn frozen(line: &'a DiscontinuityLine) -> Self {
        LineRef { line, net: None }
    }
}

/// Field values only (no partials) at positions `x` and times `t`.
fn field_values<'t>(
    tape: &'t Tape,
    f: FieldRef<'_, 't>,
    scaling: &InputScaling,
    x: Var<'t>,
    t: &Mat,
) -> Vec<Var<'t>> {
    match f.field {
        FieldAdapter::Network(p) => {
            let bound;
            let nv = match f.net {
                Some(nv) => nv,
                None => {
                    bound = p.bind_const(tape);
                    &bound
                }
            };
            let input = tape.stack(&[
                x * scaling.x_scale + scaling.x_shift,
                tape.constant(t * scaling.t_scale),
            ]);
            let out = nv.forward(input);
            (0..nv.output_dim()).map(|k| out.row(k)).collect()
        }
        FieldAdapter::Analytic(_) => f.field.vars(tape, None, scaling, x, t).u,
    }
}

fn sum_rows<'t>(rows: impl IntoIterator<Item = Var<'t>>) -> Var<'t> {
    rows.into_iter()
        .reduce(|a, b| a + b)
        .expect("at least one component")
}

/// Mean of `sum_k |d_t N_k + (A(N) d_x N)_k|^2` over the subdomain image of
/// the reference samples.
pub fn residual_var<'t>(
    tape: &'t Tape,
    flux: &FluxModel,
    scaling: &InputScaling,
    field: FieldRef<'_, 't>,
    left: LineRef<'_, 't>,
    right: LineRef<'_, 't>,
    kind: ReferenceDomain,
    samples: &SampleSet,
) -> Var<'t> {
    let (xr, t) = match kind {
        ReferenceDomain::Rectangle => (&samples.rect_x, &samples.rect_t),
        ReferenceDomain::Cone => (&samples.cone_x, &samples.cone_t),
    };
    let (nl, _) = left.line.vars(tape, left.net, t);
    let (nr, _) = right.line.vars(tape, right.net, t);
    let x = match kind {
        ReferenceDomain::Rectangle => (nr - nl) * tape.constant(xr.clone()) + nl,
        ReferenceDomain::Cone => {
            let w = tape.constant((t - xr) / (t * 2.0));
            w * (nl - nr) + nr
        }
    };
    let fv = field.field.vars(tape, field.net, scaling, x, t);
    let flux_x = flux.jvp_vars(&fv.u, &fv.ux);
    sum_rows(fv.ut.iter().zip(flux_x).map(|(&ut, fx)| (ut + fx).square())).mean_over_samples()
}

/// Mean of `|n'(N+ - N-) - (f(N+) - f(N-))|^2` along a line.
pub fn rh_var<'t>(
    tape: &'t Tape,
    flux: &FluxModel,
    scaling: &InputScaling,
    minus: FieldRef<'_, 't>,
    plus: FieldRef<'_, 't>,
    line: LineRef<'_, 't>,
    samples: &SampleSet,
) -> Var<'t> {
    let t = &samples.time_t;
    let (n, dn) = line.line.vars(tape, line.net, t);
    let um = field_values(tape, minus, scaling, n, t);
    let up = field_values(tape, plus, scaling, n, t);
    let fm = flux.flux_vars(&um);
    let fp = flux.flux_vars(&up);
    let terms = (0..um.len()).map(|k| (dn * (up[k] - um[k]) - (fp[k] - fm[k])).square());
    sum_rows(terms).mean_over_samples()
}

/// Mean squared mismatch with the initial data over the subdomain's
/// extent at `t = 0`.
pub fn ic_var<'t>(
    tape: &'t Tape,
    scaling: &InputScaling,
    field: FieldRef<'_, 't>,
    left: &DiscontinuityLine,
    right: &DiscontinuityLine,
    initial: &InitialData,
    samples: &SampleSet,
) -> Result<Var<'t>> {
    let (nl, nr) = (left.position(0.0), right.position(0.0));
    let xs: Vec<f64> = samples.unit_x.iter().map(|&s| (nr - nl) * s + nl).collect();
    let m = initial.profiles[0].eval(xs[0]).len();
    let mut target = vec![Vec::with_capacity(xs.len()); m];
    for &x in &xs {
        for (k, v) in eval_initial(initial, x)?.into_iter().enumerate() {
            target[k].push(v);
        }
    }
    let t0 = Mat::zeros((1, xs.len()));
    let u = field_values(tape, field, scaling, tape.row(&xs), &t0);
    Ok(sum_rows(
        u.into_iter()
            .zip(target)
            .map(|(uk, tk)| (uk - tape.row(&tk)).square()),
    )
    .mean_over_samples())
}

/// Mean squared mismatch with a boundary state along `x = x_b`.
pub fn boundary_var<'t>(
    tape: &'t Tape,
    scaling: &InputScaling,
    field: FieldRef<'_, 't>,
    x_b: f64,
    state: &[f64],
    samples: &SampleSet,
) -> Var<'t> {
    let t = &samples.time_t;
    let xs = tape.constant(Mat::from_elem(t.dim(), x_b));
    let u = field_values(tape, field, scaling, xs, t);
    sum_rows(u.into_iter().zip(state).map(|(uk, &s)| (uk - s).square())).mean_over_samples()
}

/// Mean squared gap between two lines.
pub fn interface_var<'t>(
    tape: &'t Tape,
    own: LineRef<'_, 't>,
    other: LineRef<'_, 't>,
    samples: &SampleSet,
) -> Var<'t> {
    let t = &samples.time_t;
    let (a, _) = own.line.vars(tape, own.net, t);
    let (b, _) = other.line.vars(tape, other.net, t);
    (a - b).square().mean_over_samples()
}

/// Whether some characteristic enters the domain through the left (or
/// right) end at the given boundary state.
pub fn inflow(flux: &FluxModel, state: &[f64], left_end: bool) -> Result<bool> {
    let speeds = flux.eigenvalues(state)?;
    Ok(if left_end {
        speeds.iter().any(|&l| l > 0.0)
    } else {
        speeds.iter().any(|&l| l < 0.0)
    })
}

fn finite(v: f64, term: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(NdnnError::Divergence {
            epoch: 0,
            term: term.into(),
            subdomain: None,
        })
    }
}

/// Residual term with everything frozen.
pub fn residual_term(
    flux: &FluxModel,
    scaling: &InputScaling,
    field: &FieldAdapter,
    left: &DiscontinuityLine,
    right: &DiscontinuityLine,
    kind: ReferenceDomain,
    samples: &SampleSet,
) -> Result<f64> {
    let tape = Tape::new();
    let v = residual_var(
        &tape,
        flux,
        scaling,
        FieldRef::frozen(field),
        LineRef::frozen(left),
        LineRef::frozen(right),
        kind,
        samples,
    );
    finite(v.item(), "residual")
}

/// Rankine-Hugoniot term with everything frozen.
pub fn rh_term(
    flux: &FluxModel,
    scaling: &InputScaling,
    minus: &FieldAdapter,
    plus: &FieldAdapter,
    line: &DiscontinuityLine,
    samples: &SampleSet,
) -> Result<f64> {
    let tape = Tape::new();
    let v = rh_var(
        &tape,
        flux,
        scaling,
        FieldRef::frozen(minus),
        FieldRef::frozen(plus),
        LineRef::frozen(line),
        samples,
    );
    finite(v.item(), "rh")
}

/// Initial-condition term with everything frozen.
pub fn ic_term(
    scaling: &InputScaling,
    field: &FieldAdapter,
    left: &DiscontinuityLine,
    right: &DiscontinuityLine,
    initial: &InitialData,
    samples: &SampleSet,
) -> Result<f64> {
    let tape = Tape::new();
    let v = ic_var(
        &tape,
        scaling,
        FieldRef::frozen(field),
        left,
        right,
        initial,
        samples,
    )?;
    finite(v.item(), "ic")
}

/// Interface-matching term with both lines frozen.
pub fn interface_match_term(
    own: &DiscontinuityLine,
    other: &DiscontinuityLine,
    samples: &SampleSet,
) -> Result<f64> {
    let tape = Tape::new();
    let v = interface_var(&tape, LineRef::frozen(own), LineRef::frozen(other), samples);
    finite(v.item(), "interface")
}

/// Recorded term families of one assembly.
struct Assembled<'t> {
    total: Var<'t>,
    residual: Option<Var<'t>>,
    rh: Option<Var<'t>>,
    ic: Option<Var<'t>>,
    interface: Option<Var<'t>>,
}

impl<'t> Assembled<'t> {
    fn breakdown(&self) -> Result<LossBreakdown> {
        let item = |v: &Option<Var<'t>>| v.map(|v| v.item()).unwrap_or(0.0);
        LossBreakdown {
            total: self.total.item(),
            residual: item(&self.residual),
            rh: item(&self.rh),
            ic: item(&self.ic),
            interface: item(&self.interface),
        }
        .check()
    }
}

#[derive(Default)]
struct Families<'t> {
    residual: Vec<Var<'t>>,
    rh: Vec<Var<'t>>,
    ic: Vec<Var<'t>>,
    interface: Vec<Var<'t>>,
}

impl<'t> Families<'t> {
    fn finish(self, tape: &'t Tape, w: &LossWeights) -> Assembled<'t> {
        let sum = |v: Vec<Var<'t>>| v.into_iter().reduce(|a, b| a + b);
        let (residual, rh, ic, interface) = (
            sum(self.residual),
            sum(self.rh),
            sum(self.ic),
            sum(self.interface),
        );
        let mut total = tape.scalar(0.0);
        for (v, weight) in [
            (residual, w.residual),
            (rh, w.rh),
            (ic, w.ic),
            (interface, w.interface),
        ] {
            if let Some(v) = v {
                total = total + v * weight;
            }
        }
        Assembled {
            total,
            residual,
            rh,
            ic,
            interface,
        }
    }
}

/// Index of each trainable network within a flat binding list.
struct Slots {
    fields: Vec<Option<usize>>,
    lines: Vec<Option<usize>>,
}

/// Gradient of a layout loss, per field and per line (`None` for frozen or
/// closed-form members).
#[derive(Clone, Debug, PartialEq)]
pub struct LayoutGradient {
    pub fields: Vec<Option<GradVector>>,
    pub lines: Vec<Option<GradVector>>,
}

impl LayoutGradient {
    /// Concatenation in [`SubdomainLayout::parameters`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.fields
            .iter()
            .chain(&self.lines)
            .flatten()
            .flat_map(|g| g.0.iter().copied())
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.fields
            .iter()
            .chain(&self.lines)
            .flatten()
            .map(|g| g.norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn layout_params(layout: &SubdomainLayout) -> (Vec<&MlpParams>, Slots) {
    let mut params = Vec::new();
    let mut fields = Vec::with_capacity(layout.fields.len());
    for f in &layout.fields {
        fields.push(f.params().map(|p| {
            params.push(p);
            params.len() - 1
        }));
    }
    let mut lines = Vec::with_capacity(layout.lines.len());
    for l in &layout.lines {
        lines.push(l.params().map(|p| {
            params.push(p);
            params.len() - 1
        }));
    }
    (params, Slots { fields, lines })
}

fn assemble_global<'t>(
    tape: &'t Tape,
    layout: &SubdomainLayout,
    cfg: &LossConfig,
    samples: &SampleSet,
    nets: &[NetVars<'t>],
    slots: Option<&Slots>,
) -> Result<Assembled<'t>> {
    let p = &layout.problem;
    let sc = &layout.scaling;
    let fref = |s: usize| FieldRef {
        field: &layout.fields[s],
        net: slots.and_then(|sl| sl.fields[s]).map(|i| &nets[i]),
    };
    let lref = |i: usize| LineRef {
        line: &layout.lines[i],
        net: slots.and_then(|sl| sl.lines[i]).map(|k| &nets[k]),
    };
    let n_sub = layout.subdomain_count();
    let mut fam = Families::default();
    for s in 0..n_sub {
        let kind = layout.kind(s);
        fam.residual.push(residual_var(
            tape,
            &p.flux,
            sc,
            fref(s),
            lref(s),
            lref(s + 1),
            kind,
            samples,
        ));
        if kind == ReferenceDomain::Rectangle {
            fam.ic.push(ic_var(
                tape,
                sc,
                fref(s),
                &layout.lines[s],
                &layout.lines[s + 1],
                &p.initial,
                samples,
            )?);
        }
    }
    for i in 1..n_sub {
        fam.rh.push(rh_var(
            tape,
            &p.flux,
            sc,
            fref(i - 1),
            fref(i),
            lref(i),
            samples,
        ));
    }
    let (a, b) = p.domain();
    let (ua, ub) = (p.initial.left_boundary(), p.initial.right_boundary());
    let ends = [(0, a, &ua, true), (n_sub - 1, b, &ub, false)];
    for (s, x_b, state, left_end) in ends {
        if cfg.boundary_inflow && inflow(&p.flux, state, left_end)? {
            fam.ic
                .push(boundary_var(tape, sc, fref(s), x_b, state, samples));
        }
        if cfg.boundary_rh {
            fam.rh.push(boundary_rh_var(
                tape,
                layout,
                s,
                state,
                left_end,
                fref(s),
                samples,
            ));
        }
    }
    Ok(fam.finish(tape, &cfg.weights))
}

fn boundary_rh_var<'t>(
    tape: &'t Tape,
    layout: &SubdomainLayout,
    s: usize,
    state: &[f64],
    left_end: bool,
    field: FieldRef<'_, 't>,
    samples: &SampleSet,
) -> Var<'t> {
    let outside = FieldAdapter::constant(state.to_vec());
    let line_idx = if left_end { s } else { s + 1 };
    let line = LineRef::frozen(&layout.lines[line_idx]);
    let sc = &layout.scaling;
    let flux = &layout.problem.flux;
    if left_end {
        rh_var(
            tape,
            flux,
            sc,
            FieldRef::frozen(&outside),
            field,
            line,
            samples,
        )
    } else {
        rh_var(
            tape,
            flux,
            sc,
            field,
            FieldRef::frozen(&outside),
            line,
            samples,
        )
    }
}

/// `lambda sum residual + mu sum RH + kappa sum IC` over a layout; cones
/// contribute residuals only.
pub fn global_loss(
    layout: &SubdomainLayout,
    cfg: &LossConfig,
    samples: &SampleSet,
) -> Result<LossBreakdown> {
    let tape = Tape::new();
    assemble_global(&tape, layout, cfg, samples, &[], None)?.breakdown()
}

/// Global loss and its exact gradient with respect to every network.
pub fn global_loss_gradient(
    layout: &SubdomainLayout,
    cfg: &LossConfig,
    samples: &SampleSet,
) -> Result<(LossBreakdown, LayoutGradient)> {
    let (params, slots) = layout_params(layout);
    let tape = Tape::new();
    let nets: Vec<NetVars<'_>> = params.iter().map(|p| p.bind(&tape)).collect();
    let asm = assemble_global(&tape, layout, cfg, samples, &nets, Some(&slots))?;
    let breakdown = asm.breakdown()?;
    let grads = tape.backward(asm.total);
    let pick = |s: &Option<usize>| s.map(|i| nets[i].grad(&grads));
    Ok((
        breakdown,
        LayoutGradient {
            fields: slots.fields.iter().map(pick).collect(),
            lines: slots.lines.iter().map(pick).collect(),
        },
    ))
}

/// A single whole-domain field loss without lines:
/// `lambda residual + kappa IC`.
pub fn direct_pinn_loss(
    problem: &crate::problem::ProblemSpec,
    field: &FieldAdapter,
    weights: &LossWeights,
    samples: &SampleSet,
) -> Result<LossBreakdown> {
    let layout = direct_pinn_layout(problem, field.clone())?;
    global_loss(&layout, &direct_pinn_config(weights), samples)
}

/// Single-subdomain layout between the frozen ends.
pub fn direct_pinn_layout(
    problem: &crate::problem::ProblemSpec,
    field: FieldAdapter,
) -> Result<SubdomainLayout> {
    let (a, b) = problem.domain();
    SubdomainLayout::from_parts(
        problem,
        vec![
            DiscontinuityLine::boundary(a),
            DiscontinuityLine::boundary(b),
        ],
        vec![field],
    )
}

pub fn direct_pinn_config(weights: &LossWeights) -> LossConfig {
    LossConfig {
        weights: *weights,
        boundary_inflow: false,
        boundary_rh: false,
    }
}

/// One subdomain's share of a domain-decomposition sweep: its own field
/// and line copies (trainable) and frozen snapshots of its neighbors.
#[derive(Clone, Copy)]
pub struct LocalView<'a> {
    pub index: usize,
    pub field: &'a FieldAdapter,
    pub left: &'a DiscontinuityLine,
    pub right: &'a DiscontinuityLine,
    pub kind: ReferenceDomain,
    /// Neighbor field and the neighbor's copy of the shared line.
    pub left_neighbor: Option<(&'a FieldAdapter, &'a DiscontinuityLine)>,
    pub right_neighbor: Option<(&'a FieldAdapter, &'a DiscontinuityLine)>,
}

/// Gradient of a local loss with respect to the owned networks.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalGradient {
    pub field: Option<GradVector>,
    pub left: Option<GradVector>,
    pub right: Option<GradVector>,
}

fn assemble_local<'t>(
    tape: &'t Tape,
    problem: &crate::problem::ProblemSpec,
    scaling: &InputScaling,
    view: &LocalView<'_>,
    cfg: &LossConfig,
    samples: &SampleSet,
    nets: [Option<&NetVars<'t>>; 3],
) -> Result<Assembled<'t>> {
    let flux = &problem.flux;
    let own = FieldRef {
        field: view.field,
        net: nets[0],
    };
    let left = LineRef {
        line: view.left,
        net: nets[1],
    };
    let right = LineRef {
        line: view.right,
        net: nets[2],
    };
    let mut fam = Families::default();
    fam.residual.push(residual_var(
        tape, flux, scaling, own, left, right, view.kind, samples,
    ));
    if view.kind == ReferenceDomain::Rectangle {
        fam.ic.push(ic_var(
            tape,
            scaling,
            own,
            view.left,
            view.right,
            &problem.initial,
            samples,
        )?);
    }
    let (a, b) = problem.domain();
    match view.left_neighbor {
        Some((nf, nl)) => {
            fam.rh.push(rh_var(
                tape,
                flux,
                scaling,
                FieldRef::frozen(nf),
                own,
                left,
                samples,
            ));
            fam.interface
                .push(interface_var(tape, left, LineRef::frozen(nl), samples));
        }
        None => {
            let ua = problem.initial.left_boundary();
            if cfg.boundary_inflow && inflow(flux, &ua, true)? {
                fam.ic
                    .push(boundary_var(tape, scaling, own, a, &ua, samples));
            }
            if cfg.boundary_rh {
                let outside = FieldAdapter::constant(ua);
                fam.rh.push(rh_var(
                    tape,
                    flux,
                    scaling,
                    FieldRef::frozen(&outside),
                    own,
                    left,
                    samples,
                ));
            }
        }
    }
    match view.right_neighbor {
        Some((nf, nr)) => {
            fam.rh.push(rh_var(
                tape,
                flux,
                scaling,
                own,
                FieldRef::frozen(nf),
                right,
                samples,
            ));
            fam.interface
                .push(interface_var(tape, right, LineRef::frozen(nr), samples));
        }
        None => {
            let ub = problem.initial.right_boundary();
            if cfg.boundary_inflow && inflow(flux, &ub, false)? {
                fam.ic
                    .push(boundary_var(tape, scaling, own, b, &ub, samples));
            }
            if cfg.boundary_rh {
                let outside = FieldAdapter::constant(ub);
                fam.rh.push(rh_var(
                    tape,
                    flux,
                    scaling,
                    own,
                    FieldRef::frozen(&outside),
                    right,
                    samples,
                ));
            }
        }
    }
    Ok(fam.finish(tape, &cfg.weights))
}

/// `lambda residual + mu (left RH + right RH) + kappa IC + nu (interface
/// gaps)` for one subdomain against frozen neighbors.
pub fn local_loss(
    problem: &crate::problem::ProblemSpec,
    scaling: &InputScaling,
    view: &LocalView<'_>,
    cfg: &LossConfig,
    samples: &SampleSet,
) -> Result<LossBreakdown> {
    let tape = Tape::new();
    assemble_local(&tape, problem, scaling, view, cfg, samples, [None; 3])?
        .breakdown()
        .map_err(|e| tag_subdomain(e, view.index))
}

/// Local loss and its gradient with respect to the owned networks.
pub fn local_loss_gradient(
    problem: &crate::problem::ProblemSpec,
    scaling: &InputScaling,
    view: &LocalView<'_>,
    cfg: &LossConfig,
    samples: &SampleSet,
) -> Result<(LossBreakdown, LocalGradient)> {
    let tape = Tape::new();
    let f = view.field.params().map(|p| p.bind(&tape));
    let l = view.left.params().map(|p| p.bind(&tape));
    let r = view.right.params().map(|p| p.bind(&tape));
    let asm = assemble_local(
        &tape,
        problem,
        scaling,
        view,
        cfg,
        samples,
        [f.as_ref(), l.as_ref(), r.as_ref()],
    )
    .map_err(|e| tag_subdomain(e, view.index))?;
    let breakdown = asm.breakdown().map_err(|e| tag_subdomain(e, view.index))?;
    let grads = tape.backward(asm.total);
    Ok((
        breakdown,
        LocalGradient {
            field: f.map(|n| n.grad(&grads)),
            left: l.map(|n| n.grad(&grads)),
            right: r.map(|n| n.grad(&grads)),
        },
    ))
}

/// Relative error between the tape gradient of the global loss and
/// central differences with step `step`.
pub fn global_gradient_error(
    layout: &SubdomainLayout,
    cfg: &LossConfig,
    samples: &SampleSet,
    step: f64,
) -> Result<f64> {
    let (_, grad) = global_loss_gradient(layout, cfg, samples)?;
    let x = layout.parameters();
    let mut probe = layout.clone();
    let mut failure = None;
    let fd = central_difference(&x, step, |p| {
        probe.set_parameters(p).expect("same layout");
        match global_loss(&probe, cfg, samples) {
            Ok(b) => b.total,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(relative_error(&grad.to_flat(), &fd)),
    }
}

/// Local-loss counterpart of [`global_gradient_error`], over the owned
/// field and line networks.
pub fn local_gradient_error(
    problem: &crate::problem::ProblemSpec,
    scaling: &InputScaling,
    view: &LocalView<'_>,
    cfg: &LossConfig,
    samples: &SampleSet,
    step: f64,
) -> Result<f64> {
    let (_, grad) = local_loss_gradient(problem, scaling, view, cfg, samples)?;
    let analytic: Vec<f64> = [&grad.field, &grad.left, &grad.right]
        .into_iter()
        .flatten()
        .flat_map(|g| g.0.iter().copied())
        .collect();
    let (mut field, mut left, mut right) =
        (view.field.clone(), view.left.clone(), view.right.clone());
    let x: Vec<f64> = [field.params(), left.params(), right.params()]
        .into_iter()
        .flatten()
        .flat_map(MlpParams::to_flat)
        .collect();
    let mut failure = None;
    let fd = central_difference(&x, step, |p| {
        let mut offset = 0;
        for net in [field.params_mut(), left.params_mut(), right.params_mut()]
            .into_iter()
            .flatten()
        {
            let n = net.len();
            net.assign_flat(&p[offset..offset + n]).expect("same sizes");
            offset += n;
        }
        let probe = LocalView {
            field: &field,
            left: &left,
            right: &right,
            ..*view
        };
        match local_loss(problem, scaling, &probe, cfg, samples) {
            Ok(b) => b.total,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(relative_error(&analytic, &fd)),
    }
}

fn tag_subdomain(e: NdnnError, index: usize) -> NdnnError {
    match e {
        NdnnError::Divergence { epoch, term, .. } => NdnnError::Divergence {
            epoch,
            term,
            subdomain: Some(index),
        },
        other => other,
    }
}
