//! Moving subdomains bounded by discontinuity lines.
//!
//! Lines are stored left to right, frozen domain ends included: line `s`
//! and line `s + 1` bound subdomain `s`. A subdomain whose two lines leave
//! the same breakpoint is a cone (its width vanishes at `t = 0`); every
//! other subdomain is a rectangle image.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{pinned_line_vars, Mat, MlpParams, NetVars, PinnedLine, Tape, Var};
use crate::error::{NdnnError, Result};
use crate::problem::{eval_initial, ProblemSpec};

/// Widths below this cannot be inverted.
pub const WIDTH_TOLERANCE: f64 = 1e-10;

/// Cone samples stay above `CONE_APEX_FRACTION * T`.
pub const CONE_APEX_FRACTION: f64 = 1e-3;

/// Points on the export grid of line trajectories.
pub const TRAJECTORY_POINTS: usize = 401;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineRole {
    Physical,
    /// Placed at a breakpoint where a shock may or may not form.
    Artificial,
    /// Frozen end of the domain.
    Boundary,
}

/// Closed-form curve `t -> (n(t), n'(t))`.
pub type LineFn = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;

#[derive(Clone)]
pub enum LineShape {
    Frozen(f64),
    Network(PinnedLine),
    Analytic(LineFn),
}

impl fmt::Debug for LineShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LineShape::Frozen(x) => f.debug_tuple("Frozen").field(x).finish(),
            LineShape::Network(l) => f.debug_tuple("Network").field(l).finish(),
            LineShape::Analytic(_) => f.write_str("Analytic(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DiscontinuityLine {
    pub shape: LineShape,
    pub role: LineRole,
    /// Breakpoint the line leaves from (interior lines only).
    pub breakpoint: Option<usize>,
}

impl DiscontinuityLine {
    pub fn boundary(x: f64) -> Self {
        DiscontinuityLine {
            shape: LineShape::Frozen(x),
            role: LineRole::Boundary,
            breakpoint: None,
        }
    }

    pub fn network(line: PinnedLine, role: LineRole, breakpoint: usize) -> Self {
        DiscontinuityLine {
            shape: LineShape::Network(line),
            role,
            breakpoint: Some(breakpoint),
        }
    }

    pub fn analytic(
        f: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static,
        role: LineRole,
        breakpoint: usize,
    ) -> Self {
        DiscontinuityLine {
            shape: LineShape::Analytic(Arc::new(f)),
            role,
            breakpoint: Some(breakpoint),
        }
    }

    /// Position and velocity.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        match &self.shape {
            LineShape::Frozen(x) => (*x, 0.0),
            LineShape::Network(l) => l.eval(t),
            LineShape::Analytic(f) => f(t),
        }
    }

    pub fn position(&self, t: f64) -> f64 {
        self.eval(t).0
    }

    pub fn params(&self) -> Option<&MlpParams> {
        match &self.shape {
            LineShape::Network(l) => Some(&l.params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut MlpParams> {
        match &mut self.shape {
            LineShape::Network(l) => Some(&mut l.params),
            _ => None,
        }
    }

    pub fn is_frozen(&self) -> bool {
        matches!(self.shape, LineShape::Frozen(_))
    }

    /// Position and velocity rows on a tape for a `1 x batch` row of times.
    /// `net` carries the trainable binding of a network line; without it the
    /// line enters as a constant.
    pub fn vars<'t>(
        &self,
        tape: &'t Tape,
        net: Option<&NetVars<'t>>,
        t: &Mat,
    ) -> (Var<'t>, Var<'t>) {
        match &self.shape {
            LineShape::Network(l) => match net {
                Some(nv) => pinned_line_vars(nv, t, l.anchor, l.time_scale),
                None => pinned_line_vars(&l.params.bind_const(tape), t, l.anchor, l.time_scale),
            },
            _ => {
                let (n, dn): (Vec<f64>, Vec<f64>) = t.iter().map(|&s| self.eval(s)).unzip();
                (tape.row(&n), tape.row(&dn))
            }
        }
    }
}

/// Pointwise value and first partials of a field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldValue {
    pub u: Vec<f64>,
    pub ux: Vec<f64>,
    pub ut: Vec<f64>,
}

/// Closed-form field `(x, t) -> (u, u_x, u_t)`.
pub type FieldFn = Arc<dyn Fn(f64, f64) -> FieldValue + Send + Sync>;

/// Affine map from physical `(x, t)` to network inputs in `[-1, 1] x [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputScaling {
    pub x_scale: f64,
    pub x_shift: f64,
    pub t_scale: f64,
}

impl InputScaling {
    pub fn new(a: f64, b: f64, final_time: f64) -> Self {
        InputScaling {
            x_scale: 2.0 / (b - a),
            x_shift: -(a + b) / (b - a),
            t_scale: 1.0 / final_time,
        }
    }

    pub fn for_problem(problem: &ProblemSpec) -> Self {
        let (a, b) = problem.domain();
        Self::new(a, b, problem.final_time)
    }
}

/// A sub-solution: either a network over physical coordinates or a
/// closed-form field with the same evaluation contract.
#[derive(Clone)]
pub enum FieldAdapter {
    Network(MlpParams),
    Analytic(FieldFn),
}

impl fmt::Debug for FieldAdapter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldAdapter::Network(p) => f.debug_tuple("Network").field(p).finish(),
            FieldAdapter::Analytic(_) => f.write_str("Analytic(..)"),
        }
    }
}

/// Field trace on a batch: one `1 x batch` row per component.
pub struct FieldVars<'t> {
    pub u: Vec<Var<'t>>,
    pub ux: Vec<Var<'t>>,
    pub ut: Vec<Var<'t>>,
}

impl FieldAdapter {
    pub fn analytic(f: impl Fn(f64, f64) -> FieldValue + Send + Sync + 'static) -> Self {
        FieldAdapter::Analytic(Arc::new(f))
    }

    /// Constant state.
    pub fn constant(u: Vec<f64>) -> Self {
        let zero = vec![0.0; u.len()];
        FieldAdapter::analytic(move |_, _| FieldValue {
            u: u.clone(),
            ux: zero.clone(),
            ut: zero.clone(),
        })
    }

    pub fn params(&self) -> Option<&MlpParams> {
        match self {
            FieldAdapter::Network(p) => Some(p),
            FieldAdapter::Analytic(_) => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut MlpParams> {
        match self {
            FieldAdapter::Network(p) => Some(p),
            FieldAdapter::Analytic(_) => None,
        }
    }

    pub fn eval(&self, scaling: &InputScaling, x: f64, t: f64) -> FieldValue {
        match self {
            FieldAdapter::Network(p) => {
                let input = [scaling.x_scale * x + scaling.x_shift, scaling.t_scale * t];
                let (u, d) = p
                    .forward_with_input_derivs(&input)
                    .expect("field networks take (x, t)");
                FieldValue {
                    ux: d[0].iter().map(|v| v * scaling.x_scale).collect(),
                    ut: d[1].iter().map(|v| v * scaling.t_scale).collect(),
                    u,
                }
            }
            FieldAdapter::Analytic(f) => f(x, t),
        }
    }

    pub fn value(&self, scaling: &InputScaling, x: f64, t: f64) -> Vec<f64> {
        match self {
            FieldAdapter::Network(p) => p
                .forward(&[scaling.x_scale * x + scaling.x_shift, scaling.t_scale * t])
                .expect("field networks take (x, t)"),
            FieldAdapter::Analytic(f) => f(x, t).u,
        }
    }

    /// Value and physical partials at positions `x` (depending on line
    /// parameters) and constant times `t`. Closed-form fields carry the
    /// sensitivity of their value to `x`; their partials enter as constants.
    pub fn vars<'t>(
        &self,
        tape: &'t Tape,
        net: Option<&NetVars<'t>>,
        scaling: &InputScaling,
        x: Var<'t>,
        t: &Mat,
    ) -> FieldVars<'t> {
        match self {
            FieldAdapter::Network(p) => {
                let bound;
                let nv = match net {
                    Some(nv) => nv,
                    None => {
                        bound = p.bind_const(tape);
                        &bound
                    }
                };
                let xin = x * scaling.x_scale + scaling.x_shift;
                let tin = tape.constant(t * scaling.t_scale);
                let input = tape.stack(&[xin, tin]);
                let dx =
                    tape.constant(Mat::from_shape_vec((2, 1), vec![scaling.x_scale, 0.0]).unwrap());
                let dt =
                    tape.constant(Mat::from_shape_vec((2, 1), vec![0.0, scaling.t_scale]).unwrap());
                let (out, d) = nv.forward_jet(input, &[dx, dt]);
                let m = nv.output_dim();
                FieldVars {
                    u: (0..m).map(|k| out.row(k)).collect(),
                    ux: (0..m).map(|k| d[0].row(k)).collect(),
                    ut: (0..m).map(|k| d[1].row(k)).collect(),
                }
            }
            FieldAdapter::Analytic(f) => {
                let xs = x.value();
                let vals: Vec<FieldValue> = xs
                    .iter()
                    .zip(t.iter())
                    .map(|(&xi, &ti)| f(xi, ti))
                    .collect();
                let m = vals.first().map(|v| v.u.len()).unwrap_or(1);
                let n = vals.len();
                let row = |g: &dyn Fn(&FieldValue) -> f64| {
                    Mat::from_shape_fn((1, n), |(_, j)| g(&vals[j]))
                };
                let mut fv = FieldVars {
                    u: Vec::with_capacity(m),
                    ux: Vec::with_capacity(m),
                    ut: Vec::with_capacity(m),
                };
                for k in 0..m {
                    let ux = row(&|v| v.ux[k]);
                    fv.u.push(tape.local(x, row(&|v| v.u[k]), ux.clone()));
                    fv.ux.push(tape.constant(ux));
                    fv.ut.push(tape.constant(row(&|v| v.ut[k])));
                }
                fv
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceDomain {
    /// `(0, 1) x (0, T)`
    Rectangle,
    /// `|x| <= t <= T`
    Cone,
}

/// `X = (n_r(t) - n_l(t)) x_ref + n_l(t)`.
pub fn transform_rect(
    left: &DiscontinuityLine,
    right: &DiscontinuityLine,
    x_ref: f64,
    t: f64,
) -> (f64, f64) {
    let (nl, nr) = (left.position(t), right.position(t));
    ((nr - nl) * x_ref + nl, t)
}

/// `X = (t - x_ref) / (2t) (n_l(t) - n_r(t)) + n_r(t)`; the apex maps to
/// the common anchor.
pub fn transform_cone(
    left: &DiscontinuityLine,
    right: &DiscontinuityLine,
    x_ref: f64,
    t: f64,
) -> Result<(f64, f64)> {
    if x_ref.abs() > t * (1.0 + 1e-14) || t < 0.0 {
        return Err(NdnnError::ReferenceDomain { x: x_ref, t });
    }
    let (nl, nr) = (left.position(t), right.position(t));
    if t == 0.0 {
        return Ok((nr, 0.0));
    }
    Ok(((t - x_ref) / (2.0 * t) * (nl - nr) + nr, t))
}

/// Inverse of [`transform_rect`].
pub fn invert_rect(
    left: &DiscontinuityLine,
    right: &DiscontinuityLine,
    x: f64,
    t: f64,
) -> Result<f64> {
    let (nl, nr) = (left.position(t), right.position(t));
    let width = nr - nl;
    if width.abs() <= WIDTH_TOLERANCE {
        return Err(NdnnError::Collapse { width, t });
    }
    Ok((x - nl) / width)
}

/// Inverse of [`transform_cone`].
pub fn invert_cone(
    left: &DiscontinuityLine,
    right: &DiscontinuityLine,
    x: f64,
    t: f64,
) -> Result<f64> {
    let (nl, nr) = (left.position(t), right.position(t));
    let width = nl - nr;
    if width.abs() <= WIDTH_TOLERANCE {
        return Err(NdnnError::Collapse { width, t });
    }
    Ok(t - 2.0 * t * (x - nr) / width)
}

/// Lines, sub-solutions and reference domains of one problem.
#[derive(Clone, Debug)]
pub struct SubdomainLayout {
    pub problem: ProblemSpec,
    /// `S + 1` lines, frozen ends first and last.
    pub lines: Vec<DiscontinuityLine>,
    /// `S` sub-solutions.
    pub fields: Vec<FieldAdapter>,
    pub scaling: InputScaling,
}

impl SubdomainLayout {
    /// Network lines at every breakpoint (`m_i` per breakpoint) and one
    /// network per subdomain. `field_hidden` and `line_hidden` list hidden
    /// layer widths. Field output biases start at the mean initial state of
    /// their interval so training begins near the data.
    pub fn build<R: Rng + ?Sized>(
        problem: &ProblemSpec,
        field_hidden: &[usize],
        line_hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        problem.validate()?;
        let m = problem.flux.components();
        let (a, b) = problem.domain();
        let time_scale = 1.0 / problem.final_time;
        let field_arch: Vec<usize> = std::iter::once(2)
            .chain(field_hidden.iter().copied())
            .chain([m])
            .collect();
        let line_arch: Vec<usize> = std::iter::once(1)
            .chain(line_hidden.iter().copied())
            .chain([1])
            .collect();

        let mut lines = vec![DiscontinuityLine::boundary(a)];
        for (i, &x) in problem.initial.breakpoints().iter().enumerate() {
            let role = if problem.artificial.contains(&i) {
                LineRole::Artificial
            } else {
                LineRole::Physical
            };
            for _ in 0..problem.wave_count(i) {
                let params = MlpParams::init(&line_arch, rng)?;
                lines.push(DiscontinuityLine::network(
                    PinnedLine::new(params, x, time_scale)?,
                    role,
                    i,
                ));
            }
        }
        lines.push(DiscontinuityLine::boundary(b));

        let mut fields = Vec::with_capacity(lines.len() - 1);
        for s in 0..lines.len() - 1 {
            let mut params = MlpParams::init(&field_arch, rng)?;
            let (lo, hi) = (lines[s].position(0.0), lines[s + 1].position(0.0));
            if hi > lo {
                let n = 64;
                let mut mean = vec![0.0; m];
                for j in 0..n {
                    let x = lo + (hi - lo) * (j as f64 + 0.5) / n as f64;
                    for (acc, v) in mean.iter_mut().zip(eval_initial(&problem.initial, x)?) {
                        *acc += v / n as f64;
                    }
                }
                params.set_output_bias(&mean);
            }
            fields.push(FieldAdapter::Network(params));
        }
        Ok(SubdomainLayout {
            problem: problem.clone(),
            lines,
            fields,
            scaling: InputScaling::for_problem(problem),
        })
    }

    /// Layout from explicit parts; `lines` must include both frozen ends.
    pub fn from_parts(
        problem: &ProblemSpec,
        lines: Vec<DiscontinuityLine>,
        fields: Vec<FieldAdapter>,
    ) -> Result<Self> {
        if lines.len() != fields.len() + 1 || lines.len() < 2 {
            return Err(NdnnError::Structural(format!(
                "{} lines cannot bound {} subdomains",
                lines.len(),
                fields.len()
            )));
        }
        if !lines[0].is_frozen() || !lines[lines.len() - 1].is_frozen() {
            return Err(NdnnError::Structural(
                "outer lines must be frozen domain ends".into(),
            ));
        }
        let anchors: Vec<f64> = lines.iter().map(|l| l.position(0.0)).collect();
        if anchors.windows(2).any(|w| w[0] > w[1]) {
            return Err(NdnnError::Structural(format!(
                "line anchors out of order: {anchors:?}"
            )));
        }
        Ok(SubdomainLayout {
            problem: problem.clone(),
            lines,
            fields,
            scaling: InputScaling::for_problem(problem),
        })
    }

    pub fn subdomain_count(&self) -> usize {
        self.fields.len()
    }

    /// Every trainable parameter, fields first then lines, each network in
    /// `MlpParams::to_flat` order.
    pub fn parameters(&self) -> Vec<f64> {
        let fields = self.fields.iter().filter_map(FieldAdapter::params);
        let lines = self.lines.iter().filter_map(DiscontinuityLine::params);
        fields.chain(lines).flat_map(MlpParams::to_flat).collect()
    }

    /// Inverse of [`SubdomainLayout::parameters`].
    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        let mut offset = 0;
        let fields = self.fields.iter_mut().filter_map(FieldAdapter::params_mut);
        let lines = self
            .lines
            .iter_mut()
            .filter_map(DiscontinuityLine::params_mut);
        for p in fields.chain(lines) {
            let n = p.len();
            let chunk = flat.get(offset..offset + n).ok_or_else(|| {
                NdnnError::Structural(format!("flat vector of length {} is too short", flat.len()))
            })?;
            p.assign_flat(chunk)?;
            offset += n;
        }
        if offset != flat.len() {
            return Err(NdnnError::Structural(format!(
                "flat vector of length {} for {offset} parameters",
                flat.len()
            )));
        }
        Ok(())
    }

    /// Interior line count `D`.
    pub fn interior_count(&self) -> usize {
        self.lines.len() - 2
    }

    pub fn kind(&self, s: usize) -> ReferenceDomain {
        match (self.lines[s].breakpoint, self.lines[s + 1].breakpoint) {
            (Some(l), Some(r)) if l == r => ReferenceDomain::Cone,
            _ => ReferenceDomain::Rectangle,
        }
    }

    pub fn final_time(&self) -> f64 {
        self.problem.final_time
    }

    /// Checks that lines are ordered at `t`.
    pub fn check_order(&self, t: f64) -> Result<()> {
        let pos: Vec<f64> = self.lines.iter().map(|l| l.position(t)).collect();
        for (i, w) in pos.windows(2).enumerate() {
            if w[0] > w[1] {
                return Err(NdnnError::Ordering {
                    left: i,
                    right: i + 1,
                    t,
                });
            }
        }
        Ok(())
    }

    /// Subdomain owning `(x, t)`; a point on a line belongs to the right.
    pub fn locate(&self, x: f64, t: f64) -> Result<usize> {
        let (a, b) = self.problem.domain();
        if !(a..=b).contains(&x) {
            return Err(NdnnError::OutOfDomain { x, a, b });
        }
        self.check_order(t)?;
        let interior = &self.lines[1..self.lines.len() - 1];
        Ok(interior.iter().take_while(|l| l.position(t) <= x).count())
    }

    pub fn reconstruct(&self, x: f64, t: f64) -> Result<Vec<f64>> {
        let s = self.locate(x, t)?;
        Ok(self.fields[s].value(&self.scaling, x, t))
    }

    /// States just left and right of interior line `i` (1-based over
    /// `lines`) at `t`.
    pub fn traces(&self, i: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
        let x = self.lines[i].position(t);
        (
            self.fields[i - 1].value(&self.scaling, x, t),
            self.fields[i].value(&self.scaling, x, t),
        )
    }

    /// Interior line positions on a uniform grid over `[0, T]`.
    pub fn trajectories(&self, points: usize) -> Vec<(f64, Vec<f64>)> {
        let t_end = self.final_time();
        (0..points)
            .map(|j| {
                let t = t_end * j as f64 / (points - 1) as f64;
                let pos = self.lines[1..self.lines.len() - 1]
                    .iter()
                    .map(|l| l.position(t))
                    .collect();
                (t, pos)
            })
            .collect()
    }

    /// CSV rows `t, n_1, ..., n_D` in physical time.
    pub fn write_trajectories<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.interior_count()).map(|i| format!("n_{i}")));
        w.write_record(&header)?;
        for (t, pos) in self.trajectories(TRAJECTORY_POINTS) {
            let mut row = vec![fmt_num(t + self.problem.time_offset)];
            row.extend(pos.into_iter().map(fmt_num));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fixed CSV number format.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.10e}")
}
