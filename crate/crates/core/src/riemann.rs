//! Wave decomposition of Riemann data.
//!
//! Each simple wave is described by a curve in phase space: a pinned
//! network `nu(xi) = anchor + (xi - xi0) N(xi)` trained so that `nu'`
//! follows an eigenvector field. Shock curves use the unit eigenvector
//! (arc-length parameter, `xi0 = 0`); rarefaction curves use the field
//! scaled so that `lambda_k(nu(xi)) = xi` (`xi0 = lambda_k(anchor)`).
//! Intermediate states sit at curve intersections. Exact solvers for
//! scalar, shallow-water and Euler data serve as oracles.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{loss_gradient, GradVector, Mat, MlpParams, NetVars, Tape, Var};
use crate::error::{NdnnError, Result};
use crate::events::{classify_lax, LaxClass};
use crate::geometry::{fmt_num, LineRole, SubdomainLayout};
use crate::problem::{euler_conservative, euler_primitives, FluxModel, ProblemSpec};

/// Grid size of the shared-parameter intersection scan.
pub const SHARED_SCAN: usize = 2001;

/// Per-axis grid size of the independent-parameter intersection scan.
pub const INDEPENDENT_SCAN: usize = 201;

/// Relative agreement of `lambda_k` across a contact.
pub const CONTACT_TOLERANCE: f64 = 1e-4;

/// Which side of its wave the anchor state sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Shock,
    Rarefaction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveCurve {
    /// 0-based characteristic family.
    pub family: usize,
    pub kind: CurveKind,
    pub side: Side,
    pub anchor: Vec<f64>,
    /// Parameter value at which the curve equals `anchor`.
    pub anchor_param: f64,
    pub interval: (f64, f64),
    /// `1 -> m` network of the normalized parameter.
    pub net: MlpParams,
}

impl WaveCurve {
    /// Curve of family `k` leaving `anchor`, covering `length` units of arc
    /// length along the branch that can hold an admissible wave. The
    /// network starts at the linearization `anchor + (xi - xi0) t(anchor)`
    /// plus small random output weights.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        flux: &FluxModel,
        family: usize,
        kind: CurveKind,
        side: Side,
        anchor: &[f64],
        length: f64,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let m = flux.components();
        if family >= m || anchor.len() != m {
            return Err(NdnnError::Structural(format!(
                "family {family} or state width {} does not fit an {m}-component flux",
                anchor.len()
            )));
        }
        if !(length >= 0.0 && length.is_finite()) {
            return Err(NdnnError::Config(format!(
                "curve length must be nonnegative, got {length}"
            )));
        }
        let pairs = flux.eigen(anchor)?;
        let g = flux.nonlinearity(family, anchor)?;
        let (anchor_param, interval, direction) = match kind {
            CurveKind::Shock => {
                // Lax: lambda_k drops from the left state to the right one.
                let forward = match side {
                    Side::Left => g <= 0.0,
                    Side::Right => g >= 0.0,
                };
                let iv = if forward {
                    (0.0, length)
                } else {
                    (-length, 0.0)
                };
                (0.0, iv, pairs[family].1.clone())
            }
            CurveKind::Rarefaction => {
                if flux.linearly_degenerate(family) || g == 0.0 {
                    return Err(NdnnError::Config(format!(
                        "family {} carries no rarefaction",
                        family + 1
                    )));
                }
                let l0 = pairs[family].0;
                let span = length * g.abs();
                let iv = match side {
                    Side::Left => (l0, l0 + span),
                    Side::Right => (l0 - span, l0),
                };
                (l0, iv, pairs[family].1.iter().map(|r| r / g).collect())
            }
        };
        let arch: Vec<usize> = std::iter::once(1)
            .chain(hidden.iter().copied())
            .chain([m])
            .collect();
        let mut net = MlpParams::init(&arch, rng)?;
        net.scale_output_weights(0.01);
        net.set_output_bias(&direction);
        Ok(WaveCurve {
            family,
            kind,
            side,
            anchor: anchor.to_vec(),
            anchor_param,
            interval,
            net,
        })
    }

    /// Slope of the affine map sending the interval onto `[-1, 1]`.
    fn input_scale(&self) -> f64 {
        let w = self.interval.1 - self.interval.0;
        if w > 0.0 {
            2.0 / w
        } else {
            1.0
        }
    }

    fn input(&self, xi: f64) -> f64 {
        (xi - 0.5 * (self.interval.0 + self.interval.1)) * self.input_scale()
    }

    pub fn eval(&self, xi: f64) -> Vec<f64> {
        let s = xi - self.anchor_param;
        let out = self
            .net
            .forward(&[self.input(xi)])
            .expect("curve networks take one input");
        self.anchor
            .iter()
            .zip(out)
            .map(|(a, n)| a + s * n)
            .collect()
    }

    /// `d nu / d xi`.
    pub fn derivative(&self, xi: f64) -> Vec<f64> {
        let s = xi - self.anchor_param;
        let scale = self.input_scale();
        let (out, d) = self
            .net
            .forward_with_input_derivs(&[self.input(xi)])
            .expect("curve networks take one input");
        out.iter()
            .zip(&d[0])
            .map(|(n, dn)| n + s * dn * scale)
            .collect()
    }

    /// Values and parameter derivatives on a `1 x n` row of parameters,
    /// one `1 x n` row per component.
    fn vars<'t>(&self, net: &NetVars<'t>, xi: Var<'t>) -> (Vec<Var<'t>>, Vec<Var<'t>>) {
        let tape = xi.tape();
        let scale = self.input_scale();
        let s = xi - self.anchor_param;
        let dir = tape.constant(Mat::from_elem((1, xi.shape().1), scale));
        let centre = 0.5 * (self.interval.0 + self.interval.1);
        let (out, d) = net.forward_jet((xi - centre) * scale, &[dir]);
        let m = self.anchor.len();
        let val = (0..m).map(|k| s * out.row(k) + self.anchor[k]).collect();
        let der = (0..m).map(|k| out.row(k) + s * d[0].row(k)).collect();
        (val, der)
    }

    /// Target direction field on batched rows.
    fn target_vars<'t>(&self, flux: &FluxModel, u: &[Var<'t>]) -> Vec<Var<'t>> {
        match self.kind {
            CurveKind::Shock => flux.eigvec_vars(self.family, u),
            CurveKind::Rarefaction => flux.rarefaction_vars(self.family, u),
        }
    }

    fn grid(&self, n: usize) -> Vec<f64> {
        let (lo, hi) = self.interval;
        if n <= 1 {
            return vec![self.anchor_param];
        }
        (0..n)
            .map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64)
            .collect()
    }

    /// Root-mean-square defect `|nu' - t(nu)|` on `n` grid points.
    pub fn defect(&self, flux: &FluxModel, n: usize) -> Result<f64> {
        let xs = self.grid(n);
        let tape = Tape::new();
        let net = self.net.bind_const(&tape);
        let loss = curve_defect(self, flux, &net, tape.row(&xs));
        let v = loss.item();
        if !v.is_finite() {
            return Err(NdnnError::Inadmissible {
                component: 0,
                value: v,
                reason: "curve leaves the admissible set".into(),
            });
        }
        Ok(v.sqrt())
    }
}

fn curve_defect<'t>(
    curve: &WaveCurve,
    flux: &FluxModel,
    net: &NetVars<'t>,
    xi: Var<'t>,
) -> Var<'t> {
    let (val, der) = curve.vars(net, xi);
    let target = curve.target_vars(flux, &val);
    der.iter()
        .zip(&target)
        .map(|(d, t)| (*d - *t).square())
        .reduce(|a, b| a + b)
        .expect("at least one component")
        .mean_over_samples()
}

/// Plain gradient-descent settings for curve fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveFit {
    pub samples: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop once the root-mean-square defect falls below this.
    pub tolerance: f64,
}

impl Default for CurveFit {
    fn default() -> Self {
        CurveFit {
            samples: 150,
            learning_rate: 0.2,
            max_epochs: 20_000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveHistory {
    /// Mean-squared defect per epoch.
    pub losses: Vec<f64>,
    /// Interval kept after an admissibility cut.
    pub curtailed: Option<(f64, f64)>,
}

const MAX_HALVINGS: usize = 40;

/// Trains `curve` to follow its eigenvector field. When the trained curve
/// leaves the admissible set its interval is cut back to the admissible
/// part next to the anchor.
pub fn fit_curve(flux: &FluxModel, curve: &mut WaveCurve, fit: &CurveFit) -> Result<CurveHistory> {
    let mut history = CurveHistory::default();
    if curve.interval.1 <= curve.interval.0 {
        history.losses.push(0.0);
        return Ok(history);
    }
    let xs = curve.grid(fit.samples.max(2));
    let mut rate = fit.learning_rate;
    let mut halvings = 0;
    let mut epoch = 0;
    let mut previous: Option<MlpParams> = None;
    while epoch < fit.max_epochs {
        let step = loss_gradient(&[&curve.net], |tape, nets| {
            Ok(curve_defect(curve, flux, &nets[0], tape.row(&xs)))
        });
        match (step, previous.take()) {
            (Ok((loss, grads)), _) => {
                history.losses.push(loss);
                if loss.sqrt() < fit.tolerance {
                    break;
                }
                previous = Some(curve.net.clone());
                curve.net.descend(&grads[0], rate);
                epoch += 1;
            }
            (Err(_), Some(good)) if halvings < MAX_HALVINGS => {
                // The last step left the admissible set: undo it.
                halvings += 1;
                curve.net = good;
                rate *= 0.5;
                log::warn!("curve fit diverged at epoch {epoch}; learning rate halved to {rate}");
            }
            (Err(_), _) => {
                return Err(NdnnError::Divergence {
                    epoch,
                    term: format!("curve-{}", curve.family + 1),
                    subdomain: None,
                });
            }
        }
    }
    curtail(flux, curve, &xs, &mut history);
    Ok(history)
}

fn curtail(flux: &FluxModel, curve: &mut WaveCurve, xs: &[f64], history: &mut CurveHistory) {
    let ok = |x: f64| {
        let u = curve.eval(x);
        u.iter().all(|v| v.is_finite()) && flux.eigen(&u).is_ok()
    };
    let (lo, hi) = curve.interval;
    let a = curve.anchor_param;
    let mut new = (lo, hi);
    // Walk outwards from the anchor on each side.
    let right: Vec<f64> = xs.iter().copied().filter(|&x| x >= a).collect();
    if let Some(p) = right.iter().position(|&x| !ok(x)) {
        new.1 = if p == 0 { a } else { right[p - 1] };
    }
    let left: Vec<f64> = xs.iter().rev().copied().filter(|&x| x <= a).collect();
    if let Some(p) = left.iter().position(|&x| !ok(x)) {
        new.0 = if p == 0 { a } else { left[p - 1] };
    }
    if new != (lo, hi) {
        log::warn!(
            "curve of family {} leaves the admissible set; interval cut from {:?} to {:?}",
            curve.family + 1,
            (lo, hi),
            new
        );
        curve.interval = new;
        history.curtailed = Some(new);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntersectMode {
    /// Both curves evaluated at one common parameter.
    SharedParameter,
    /// Each curve has its own parameter.
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    /// Parameters on the first and second curve (equal in shared mode).
    pub xi: (f64, f64),
    /// Midpoint of the two curve points.
    pub state: Vec<f64>,
    pub gap: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || hi <= lo {
        return vec![lo];
    }
    (0..n)
        .map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64)
        .collect()
}

/// Closest approach of two curves: a coarse scan followed by local
/// refinement. Fails when the remaining gap exceeds `tolerance` times
/// `max(1, |anchor|)`.
pub fn intersect_two(
    c1: &WaveCurve,
    c2: &WaveCurve,
    mode: IntersectMode,
    tolerance: f64,
) -> Result<Intersection> {
    let (xi1, xi2) = match mode {
        IntersectMode::SharedParameter => {
            let lo = c1.interval.0.max(c2.interval.0);
            let hi = c1.interval.1.min(c2.interval.1);
            if lo > hi {
                return Err(NdnnError::NoIntersection { gap: f64::INFINITY });
            }
            let d = |x: f64| dist(&c1.eval(x), &c2.eval(x));
            let xs = linspace(lo, hi, SHARED_SCAN);
            let mut best = (0, f64::INFINITY);
            for (j, &x) in xs.iter().enumerate() {
                let v = d(x);
                if v < best.1 {
                    best = (j, v);
                }
            }
            let j = best.0;
            let x = if best.1 == 0.0 || xs.len() == 1 {
                xs[j]
            } else {
                golden_min(d, xs[j.saturating_sub(1)], xs[(j + 1).min(xs.len() - 1)])
            };
            (x, x)
        }
        IntersectMode::Independent => independent_intersection(c1, c2),
    };
    let (p1, p2) = (c1.eval(xi1), c2.eval(xi2));
    let gap = dist(&p1, &p2);
    let scale = norm(&c1.anchor).max(norm(&c2.anchor)).max(1.0);
    if !(gap <= tolerance * scale) {
        return Err(NdnnError::NoIntersection { gap });
    }
    Ok(Intersection {
        xi: (xi1, xi2),
        state: p1.iter().zip(&p2).map(|(a, b)| 0.5 * (a + b)).collect(),
        gap,
    })
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if b - a <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn independent_intersection(c1: &WaveCurve, c2: &WaveCurve) -> (f64, f64) {
    let g1 = linspace(c1.interval.0, c1.interval.1, INDEPENDENT_SCAN);
    let g2 = linspace(c2.interval.0, c2.interval.1, INDEPENDENT_SCAN);
    let p1: Vec<Vec<f64>> = g1.iter().map(|&x| c1.eval(x)).collect();
    let p2: Vec<Vec<f64>> = g2.iter().map(|&x| c2.eval(x)).collect();
    let mut best = (0, 0, f64::INFINITY);
    for (i, a) in p1.iter().enumerate() {
        for (j, b) in p2.iter().enumerate() {
            let d = dist(a, b);
            if d < best.2 {
                best = (i, j, d);
            }
        }
    }
    let (mut x1, mut x2) = (g1[best.0], g2[best.1]);
    let clamp = |x: f64, iv: (f64, f64)| x.clamp(iv.0, iv.1);
    let mut gap = best.2;
    // Damped Gauss-Newton on nu_1(x1) - nu_2(x2).
    let mut mu = 1e-12;
    for _ in 0..200 {
        if gap == 0.0 {
            break;
        }
        let f: Vec<f64> = c1
            .eval(x1)
            .iter()
            .zip(c2.eval(x2))
            .map(|(a, b)| a - b)
            .collect();
        let j1 = c1.derivative(x1);
        let j2: Vec<f64> = c2.derivative(x2).into_iter().map(|v| -v).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let (a11, a12, a22) = (dot(&j1, &j1), dot(&j1, &j2), dot(&j2, &j2));
        let (b1, b2) = (-dot(&j1, &f), -dot(&j2, &f));
        let mut improved = false;
        for _ in 0..30 {
            let (d11, d22) = (a11 * (1.0 + mu) + mu, a22 * (1.0 + mu) + mu);
            let det = d11 * d22 - a12 * a12;
            if det == 0.0 {
                mu *= 10.0;
                continue;
            }
            let s1 = (b1 * d22 - b2 * a12) / det;
            let s2 = (d11 * b2 - a12 * b1) / det;
            let (n1, n2) = (clamp(x1 + s1, c1.interval), clamp(x2 + s2, c2.interval));
            let ng = dist(&c1.eval(n1), &c2.eval(n2));
            if ng < gap {
                let moved = (n1 - x1).abs() + (n2 - x2).abs();
                x1 = n1;
                x2 = n2;
                gap = ng;
                mu = (mu * 0.1).max(1e-15);
                improved = moved > 1e-15;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (x1, x2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveKind {
    Shock,
    Rarefaction,
    Contact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub family: usize,
    pub kind: WaveKind,
    /// Speed of the wave's left edge (equal to `right_speed` for jumps).
    pub left_speed: f64,
    pub right_speed: f64,
    /// Lax classification of jumps at their Rankine-Hugoniot speed.
    pub lax: Option<LaxClass>,
}

impl Wave {
    pub fn speed(&self) -> f64 {
        0.5 * (self.left_speed + self.right_speed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// `u_L`, the intermediate states, `u_R`.
    pub states: Vec<Vec<f64>>,
    /// One wave between each consecutive pair of states.
    pub waves: Vec<Wave>,
    /// Largest matching gap left by the construction.
    pub residual: f64,
}

/// Least-squares Rankine-Hugoniot speed `[f].[u] / |[u]|^2`.
pub fn rh_speed(flux: &FluxModel, minus: &[f64], plus: &[f64]) -> Result<Option<f64>> {
    let (fm, fp) = (flux.flux(minus)?, flux.flux(plus)?);
    let du: Vec<f64> = plus.iter().zip(minus).map(|(a, b)| a - b).collect();
    let n2: f64 = du.iter().map(|x| x * x).sum();
    if n2 == 0.0 {
        return Ok(None);
    }
    Ok(Some(
        fp.iter()
            .zip(&fm)
            .zip(&du)
            .map(|((a, b), d)| (a - b) * d)
            .sum::<f64>()
            / n2,
    ))
}

impl Decomposition {
    /// Waves between consecutive states, family `k` for the `k`-th gap.
    pub fn from_states(
        flux: &FluxModel,
        states: Vec<Vec<f64>>,
        kinds: &[WaveKind],
        residual: f64,
    ) -> Result<Self> {
        if states.len() != kinds.len() + 1 {
            return Err(NdnnError::Structural(format!(
                "{} states cannot bound {} waves",
                states.len(),
                kinds.len()
            )));
        }
        for s in &states {
            flux.check_admissible(s)?;
        }
        let mut waves = Vec::with_capacity(kinds.len());
        for (k, &kind) in kinds.iter().enumerate() {
            let (l, r) = (&states[k], &states[k + 1]);
            let (ll, lr) = (flux.eigenvalues(l)?[k], flux.eigenvalues(r)?[k]);
            let wave = match kind {
                WaveKind::Rarefaction => Wave {
                    family: k,
                    kind,
                    left_speed: ll,
                    right_speed: lr,
                    lax: None,
                },
                WaveKind::Contact => {
                    let s = 0.5 * (ll + lr);
                    let scale = ll.abs().max(lr.abs()).max(1.0);
                    let lax = if (ll - lr).abs() <= CONTACT_TOLERANCE * scale {
                        LaxClass::Contact(k)
                    } else {
                        LaxClass::Violated
                    };
                    Wave {
                        family: k,
                        kind,
                        left_speed: s,
                        right_speed: s,
                        lax: Some(lax),
                    }
                }
                WaveKind::Shock => {
                    let s = rh_speed(flux, l, r)?.unwrap_or(0.5 * (ll + lr));
                    Wave {
                        family: k,
                        kind,
                        left_speed: s,
                        right_speed: s,
                        lax: Some(classify_lax(flux, l, r, s)?),
                    }
                }
            };
            waves.push(wave);
        }
        Ok(Decomposition {
            states,
            waves,
            residual,
        })
    }

    /// Self-similar solution at `xi = x / t`, with rarefaction fans filled
    /// by the exact fan formulas.
    pub fn sample(&self, flux: &FluxModel, xi: f64) -> Vec<f64> {
        for (k, w) in self.waves.iter().enumerate() {
            if xi < w.left_speed {
                return self.states[k].clone();
            }
            if w.kind == WaveKind::Rarefaction && xi <= w.right_speed {
                return fan_state(flux, w.family, &self.states[k], &self.states[k + 1], xi);
            }
        }
        self.states.last().expect("at least one state").clone()
    }
}

/// State inside a centered `k`-rarefaction fan between `left` and `right`.
pub fn fan_state(flux: &FluxModel, k: usize, left: &[f64], right: &[f64], xi: f64) -> Vec<f64> {
    match flux {
        FluxModel::Burgers => vec![xi],
        FluxModel::Quadratic => vec![1.0 - xi / 8.0],
        FluxModel::Polynomial { .. } => {
            let (mut a, mut b) = (left[0], right[0]);
            let fa = flux.scalar_derivative(a) - xi;
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if (flux.scalar_derivative(mid) - xi).signum() == fa.signum() {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            vec![0.5 * (a + b)]
        }
        FluxModel::ShallowWater { g } => {
            if k == 0 {
                let (v, c) = (left[1] / left[0], (g * left[0]).sqrt());
                let cs = (v + 2.0 * c - xi) / 3.0;
                let h = cs * cs / g;
                vec![h, h * (xi + cs)]
            } else {
                let (v, c) = (right[1] / right[0], (g * right[0]).sqrt());
                let cs = (xi - v + 2.0 * c) / 3.0;
                let h = cs * cs / g;
                vec![h, h * (xi - cs)]
            }
        }
        FluxModel::Euler { gamma } => {
            let gm = gamma - 1.0;
            let gp = gamma + 1.0;
            let (state, sign) = if k == 0 { (left, 1.0) } else { (right, -1.0) };
            let (v, c, _) = euler_primitives(*gamma, state);
            let rho = state[0];
            let p = c * c * rho / gamma;
            let cf = 2.0 / gp * (c + sign * 0.5 * gm * (v - xi));
            let vf = 2.0 / gp * (sign * c + 0.5 * gm * v + xi);
            let ratio = cf / c;
            euler_conservative(
                *gamma,
                rho * ratio.powf(2.0 / gm),
                vf,
                p * ratio.powf(2.0 * gamma / gm),
            )
        }
    }
}

/// Exact (entropy) solution of a Riemann problem.
pub fn exact_riemann_oracle(flux: &FluxModel, ul: &[f64], ur: &[f64]) -> Result<Decomposition> {
    flux.check_admissible(ul)?;
    flux.check_admissible(ur)?;
    match flux {
        FluxModel::ShallowWater { g } => shallow_water_exact(flux, *g, ul, ur),
        FluxModel::Euler { gamma } => euler_exact(flux, *gamma, ul, ur),
        _ => {
            let kind = if flux.scalar_derivative(ul[0]) > flux.scalar_derivative(ur[0]) {
                WaveKind::Shock
            } else {
                WaveKind::Rarefaction
            };
            Decomposition::from_states(flux, vec![ul.to_vec(), ur.to_vec()], &[kind], 0.0)
        }
    }
}

/// Newton iteration on a monotone increasing function with a positivity
/// constraint on the unknown.
fn positive_newton(f: impl Fn(f64) -> (f64, f64), x0: f64, scale: f64) -> Result<f64> {
    let mut x = x0;
    for _ in 0..200 {
        let (v, d) = f(x);
        if v.abs() <= 1e-12 * scale {
            return Ok(x);
        }
        let mut next = x - v / d;
        while next <= 0.0 {
            next = 0.5 * (x + next.max(0.0));
            if next <= 1e-300 {
                break;
            }
        }
        if (next - x).abs() <= 1e-15 * x {
            return Ok(next);
        }
        x = next;
    }
    let (v, _) = f(x);
    if v.abs() <= 1e-10 * scale {
        Ok(x)
    } else {
        Err(NdnnError::DecompositionFailure(format!(
            "star-state Newton iteration stalled at residual {v}"
        )))
    }
}

fn shallow_water_exact(flux: &FluxModel, g: f64, ul: &[f64], ur: &[f64]) -> Result<Decomposition> {
    let (hl, vl) = (ul[0], ul[1] / ul[0]);
    let (hr, vr) = (ur[0], ur[1] / ur[0]);
    let (cl, cr) = ((g * hl).sqrt(), (g * hr).sqrt());
    if 2.0 * (cl + cr) <= vr - vl {
        return Err(NdnnError::Vacuum);
    }
    // Velocity change across a wave from depth hk to depth h, and its
    // derivative in h.
    let branch = |h: f64, hk: f64| -> (f64, f64) {
        if h > hk {
            let q = 0.5 * g * (h + hk) / (h * hk);
            let dq = -0.5 * g / (h * h);
            let sq = q.sqrt();
            ((h - hk) * sq, sq + (h - hk) * dq / (2.0 * sq))
        } else {
            (2.0 * ((g * h).sqrt() - (g * hk).sqrt()), (g / h).sqrt())
        }
    };
    let phi = |h: f64| {
        let (fl, dl) = branch(h, hl);
        let (fr, dr) = branch(h, hr);
        (fl + fr + vr - vl, dl + dr)
    };
    let c0 = 0.5 * (cl + cr) - 0.25 * (vr - vl);
    let scale = vl.abs().max(vr.abs()).max(cl).max(cr).max(1.0);
    let h = positive_newton(phi, (c0 * c0 / g).max(1e-8 * hl.min(hr)), scale)?;
    let (fl, _) = branch(h, hl);
    let (fr, _) = branch(h, hr);
    let v = 0.5 * (vl + vr) + 0.5 * (fr - fl);
    let kind = |hk: f64| {
        if h > hk {
            WaveKind::Shock
        } else {
            WaveKind::Rarefaction
        }
    };
    Decomposition::from_states(
        flux,
        vec![ul.to_vec(), vec![h, h * v], ur.to_vec()],
        &[kind(hl), kind(hr)],
        0.0,
    )
}

fn euler_exact(flux: &FluxModel, gamma: f64, ul: &[f64], ur: &[f64]) -> Result<Decomposition> {
    let (vl, cl, _) = euler_primitives(gamma, ul);
    let (vr, cr, _) = euler_primitives(gamma, ur);
    let (rl, rr) = (ul[0], ur[0]);
    let (pl, pr) = (cl * cl * rl / gamma, cr * cr * rr / gamma);
    let gm = gamma - 1.0;
    let gp = gamma + 1.0;
    if 2.0 / gm * (cl + cr) <= vr - vl {
        return Err(NdnnError::Vacuum);
    }
    let branch = |p: f64, rk: f64, pk: f64, ck: f64| -> (f64, f64) {
        if p > pk {
            let a = 2.0 / (gp * rk);
            let b = gm / gp * pk;
            let sq = (a / (p + b)).sqrt();
            ((p - pk) * sq, sq * (1.0 - 0.5 * (p - pk) / (b + p)))
        } else {
            let z = gm / (2.0 * gamma);
            let ratio = p / pk;
            (
                2.0 * ck / gm * (ratio.powf(z) - 1.0),
                ratio.powf(-0.5 * gp / gamma) / (rk * ck),
            )
        }
    };
    let phi = |p: f64| {
        let (fl, dl) = branch(p, rl, pl, cl);
        let (fr, dr) = branch(p, rr, pr, cr);
        (fl + fr + vr - vl, dl + dr)
    };
    let z = gm / (2.0 * gamma);
    let p_tr =
        ((cl + cr - 0.5 * gm * (vr - vl)) / (cl / pl.powf(z) + cr / pr.powf(z))).powf(1.0 / z);
    let scale = vl.abs().max(vr.abs()).max(cl).max(cr).max(1.0);
    let p = positive_newton(phi, p_tr.max(1e-10 * pl.min(pr)), scale)?;
    let (fl, _) = branch(p, rl, pl, cl);
    let (fr, _) = branch(p, rr, pr, cr);
    let v = 0.5 * (vl + vr) + 0.5 * (fr - fl);
    let g6 = gm / gp;
    let star_rho = |rk: f64, pk: f64| {
        let ratio = p / pk;
        if p > pk {
            rk * (ratio + g6) / (g6 * ratio + 1.0)
        } else {
            rk * ratio.powf(1.0 / gamma)
        }
    };
    let kind = |pk: f64| {
        if p > pk {
            WaveKind::Shock
        } else {
            WaveKind::Rarefaction
        }
    };
    let states = vec![
        ul.to_vec(),
        euler_conservative(gamma, star_rho(rl, pl), v, p),
        euler_conservative(gamma, star_rho(rr, pr), v, p),
        ur.to_vec(),
    ];
    Decomposition::from_states(flux, states, &[kind(pl), WaveKind::Contact, kind(pr)], 0.0)
}

/// Result of a neural wave decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveFit {
    pub decomposition: Decomposition,
    pub curves: Vec<WaveCurve>,
    pub histories: Vec<CurveHistory>,
    /// Curve parameters at the matched points, per curve.
    pub parameters: Vec<f64>,
}

/// Settings shared by the two- and three-wave drivers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeConfig {
    pub fit: CurveFit,
    pub hidden: Vec<usize>,
    /// Curve length in arc length; `None` means `2 |u_L - u_R|`.
    pub length: Option<f64>,
    pub mode: IntersectMode,
    /// Admissible matching gap relative to `max(1, |u|)`.
    pub tolerance: f64,
    /// Weights of defect, start match and end match (three waves).
    pub weights: [f64; 3],
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig {
            fit: CurveFit::default(),
            hidden: vec![5, 5],
            length: None,
            mode: IntersectMode::SharedParameter,
            tolerance: 1e-2,
            weights: [1.0, 1.0, 1.0],
        }
    }
}

impl DecomposeConfig {
    fn length(&self, ul: &[f64], ur: &[f64]) -> f64 {
        self.length.unwrap_or_else(|| 2.0 * dist(ul, ur))
    }
}

fn wave_kind(flux: &FluxModel, family: usize, kind: CurveKind) -> WaveKind {
    match kind {
        CurveKind::Rarefaction => WaveKind::Rarefaction,
        CurveKind::Shock if flux.linearly_degenerate(family) => WaveKind::Contact,
        CurveKind::Shock => WaveKind::Shock,
    }
}

/// Two-wave decomposition (`m = 2`): a 1-curve from `u_L`, a 2-curve from
/// `u_R`, and their intersection.
pub fn decompose_two<R: Rng + ?Sized>(
    flux: &FluxModel,
    ul: &[f64],
    ur: &[f64],
    kinds: [CurveKind; 2],
    config: &DecomposeConfig,
    rng: &mut R,
) -> Result<WaveFit> {
    if flux.components() != 2 {
        return Err(NdnnError::Config(
            "two-wave decomposition needs a 2-component flux".into(),
        ));
    }
    let length = config.length(ul, ur);
    let mut c1 = WaveCurve::new(
        flux,
        0,
        kinds[0],
        Side::Left,
        ul,
        length,
        &config.hidden,
        rng,
    )?;
    let mut c2 = WaveCurve::new(
        flux,
        1,
        kinds[1],
        Side::Right,
        ur,
        length,
        &config.hidden,
        rng,
    )?;
    let (h1, h2) = rayon::join(
        || fit_curve(flux, &mut c1, &config.fit),
        || fit_curve(flux, &mut c2, &config.fit),
    );
    let (h1, h2) = (h1?, h2?);
    let hit = intersect_two(&c1, &c2, config.mode, config.tolerance)?;
    let states = vec![ul.to_vec(), hit.state.clone(), ur.to_vec()];
    let kinds = [wave_kind(flux, 0, kinds[0]), wave_kind(flux, 1, kinds[1])];
    let decomposition = Decomposition::from_states(flux, states, &kinds, hit.gap)?;
    Ok(WaveFit {
        decomposition,
        curves: vec![c1, c2],
        histories: vec![h1, h2],
        parameters: vec![hit.xi.0, hit.xi.1],
    })
}

/// Coefficients of `b` in the eigenbasis at `u`.
fn eigen_coordinates(flux: &FluxModel, u: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let pairs = flux.eigen(u)?;
    let m = b.len();
    // Gaussian elimination with partial pivoting on [r_1 ... r_m | b].
    let mut a: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|k| pairs[k].1[i]).chain([b[i]]).collect())
        .collect();
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("nonempty");
        a.swap(col, piv);
        for row in col + 1..m {
            let f = a[row][col] / a[col][col];
            for k in col..=m {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut x = vec![0.0; m];
    for row in (0..m).rev() {
        let s: f64 = (row + 1..m).map(|k| a[row][k] * x[k]).sum();
        x[row] = (a[row][m] - s) / a[row][row];
    }
    Ok(x)
}

/// Parameter on `curve` reached by moving `alpha` along the unit
/// eigenvector from its anchor, to first order.
fn linear_parameter(flux: &FluxModel, curve: &WaveCurve, alpha: f64) -> Result<f64> {
    let p = match curve.kind {
        CurveKind::Shock => alpha,
        CurveKind::Rarefaction => {
            curve.anchor_param + alpha * flux.nonlinearity(curve.family, &curve.anchor)?
        }
    };
    Ok(p.clamp(curve.interval.0, curve.interval.1))
}

/// Three-wave decomposition (`m = 3`). The outer curves are fitted from
/// `u_L` and `u_R`; the middle curve has a free start point `c` and is
/// trained jointly with the three matching parameters on
/// `g1 |nu_2' - r_2(nu_2)|^2 + g2 |c - nu_1(xi_1)|^2 + g3 |nu_2(xi_2) - nu_3(xi_3)|^2`.
/// Only arc-length middle curves are supported.
pub fn decompose_three<R: Rng + ?Sized>(
    flux: &FluxModel,
    ul: &[f64],
    ur: &[f64],
    kinds: [CurveKind; 3],
    config: &DecomposeConfig,
    rng: &mut R,
) -> Result<WaveFit> {
    if flux.components() != 3 {
        return Err(NdnnError::Config(
            "three-wave decomposition needs a 3-component flux".into(),
        ));
    }
    if kinds[1] != CurveKind::Shock {
        return Err(NdnnError::Config(
            "the middle curve must be of shock (arc-length) kind".into(),
        ));
    }
    let [g1, g2, g3] = config.weights;
    if !(g1 > 0.0 && g2 > 0.0 && g3 > 0.0) {
        return Err(NdnnError::Config(format!(
            "decomposition weights must be positive, got {:?}",
            config.weights
        )));
    }
    let length = config.length(ul, ur);
    let mut c1 = WaveCurve::new(
        flux,
        0,
        kinds[0],
        Side::Left,
        ul,
        length,
        &config.hidden,
        rng,
    )?;
    let mut c3 = WaveCurve::new(
        flux,
        2,
        kinds[2],
        Side::Right,
        ur,
        length,
        &config.hidden,
        rng,
    )?;
    let (h1, h3) = rayon::join(
        || fit_curve(flux, &mut c1, &config.fit),
        || fit_curve(flux, &mut c3, &config.fit),
    );
    let (h1, h3) = (h1?, h3?);

    // Linearized wave strengths from the mean state.
    let mean: Vec<f64> = ul.iter().zip(ur).map(|(a, b)| 0.5 * (a + b)).collect();
    let jump: Vec<f64> = ur.iter().zip(ul).map(|(a, b)| a - b).collect();
    let alpha = eigen_coordinates(flux, &mean, &jump)?;
    let mut xi1 = linear_parameter(flux, &c1, alpha[0])?;
    let mut xi3 = linear_parameter(flux, &c3, -alpha[2])?;
    let mut xi2 = alpha[1];
    let start_guess = c1.eval(xi1);
    let mut middle = WaveCurve::new(
        flux,
        1,
        CurveKind::Shock,
        Side::Left,
        &start_guess,
        length,
        &config.hidden,
        rng,
    )?;
    middle.interval = (-length, length);
    let samples = middle.grid(config.fit.samples.max(2));

    let mut start = start_guess;
    let mut curve_losses = Vec::new();
    let mut rate = config.fit.learning_rate;
    let mut halvings = 0;
    let mut epoch = 0;
    let mut backup = None;
    while epoch < config.fit.max_epochs {
        let tape = Tape::new();
        let net = middle.net.bind(&tape);
        let n1 = c1.net.bind_const(&tape);
        let n3 = c3.net.bind_const(&tape);
        let x1 = tape.param(Mat::from_elem((1, 1), xi1));
        let x2 = tape.param(Mat::from_elem((1, 1), xi2));
        let x3 = tape.param(Mat::from_elem((1, 1), xi3));
        let cv = tape.param(Mat::from_shape_vec((start.len(), 1), start.clone()).expect("column"));
        let mut shifted = middle.clone();
        shifted.anchor = vec![0.0; start.len()];
        let (val, der) = shifted.vars(&net, tape.row(&samples));
        let val: Vec<Var> = val
            .iter()
            .enumerate()
            .map(|(k, v)| *v + cv.row(k))
            .collect();
        let target = flux.eigvec_vars(1, &val);
        let defect = der
            .iter()
            .zip(&target)
            .map(|(d, t)| (*d - *t).square())
            .reduce(|a, b| a + b)
            .expect("components")
            .mean_over_samples();
        let (p1, _) = c1.vars(&n1, x1);
        let (p3, _) = c3.vars(&n3, x3);
        let (mid_end, _) = shifted.vars(&net, x2);
        let m = start.len();
        let start_gap = (0..m)
            .map(|k| (cv.row(k) - p1[k]).square())
            .reduce(|a, b| a + b)
            .expect("m > 0");
        let end_gap = (0..m)
            .map(|k| (mid_end[k] + cv.row(k) - p3[k]).square())
            .reduce(|a, b| a + b)
            .expect("m > 0");
        let loss = defect * g1 + start_gap * g2 + end_gap * g3;
        let value = loss.item();
        if !value.is_finite() {
            halvings += 1;
            if halvings > MAX_HALVINGS || curve_losses.is_empty() {
                return Err(NdnnError::Divergence {
                    epoch,
                    term: "curve-2".into(),
                    subdomain: None,
                });
            }
            rate *= 0.5;
            log::warn!(
                "middle-curve fit diverged at epoch {epoch}; learning rate halved to {rate}"
            );
            continue;
        }
        if let (Some(prev), Some(&last)) = (backup.take(), curve_losses.last()) {
            if value > last {
                (middle.net, xi1, xi2, xi3, start) = prev;
                rate *= 0.5;
                epoch += 1;
                continue;
            }
        }
        curve_losses.push(value);
        if value.sqrt() < config.fit.tolerance {
            break;
        }
        let grads = tape.backward(loss);
        let gnet: GradVector = net.grad(&grads);
        let snapshot = (middle.net.clone(), xi1, xi2, xi3, start.clone());
        middle.net.descend(&gnet, rate);
        xi1 = (xi1 - rate * grads.wrt(x1)[[0, 0]]).clamp(c1.interval.0, c1.interval.1);
        xi2 -= rate * grads.wrt(x2)[[0, 0]];
        xi3 = (xi3 - rate * grads.wrt(x3)[[0, 0]]).clamp(c3.interval.0, c3.interval.1);
        for (s, g) in start.iter_mut().zip(grads.wrt(cv).iter()) {
            *s -= rate * g;
        }
        if start.iter().any(|v| !v.is_finite()) || flux.eigen(&start).is_err() {
            (middle.net, xi1, xi2, xi3, start) = snapshot;
            rate *= 0.5;
            halvings += 1;
            if halvings > MAX_HALVINGS {
                return Err(NdnnError::Divergence {
                    epoch,
                    term: "curve-2".into(),
                    subdomain: None,
                });
            }
            continue;
        }
        backup = Some(snapshot);
        epoch += 1;
    }
    middle.anchor = start.clone();
    middle.anchor_param = 0.0;
    let a = c1.eval(xi1);
    let b = middle.eval(xi2);
    let c = c3.eval(xi3);
    let u1: Vec<f64> = a.iter().zip(&start).map(|(x, y)| 0.5 * (x + y)).collect();
    let u2: Vec<f64> = b.iter().zip(&c).map(|(x, y)| 0.5 * (x + y)).collect();
    let residual = dist(&a, &start).max(dist(&b, &c));
    let scale = norm(ul).max(norm(ur)).max(1.0);
    if residual > config.tolerance * scale {
        return Err(NdnnError::DecompositionFailure(format!(
            "endpoint matching gap {residual:.3e} exceeds {:.3e}",
            config.tolerance * scale
        )));
    }
    let kinds = [
        wave_kind(flux, 0, kinds[0]),
        wave_kind(flux, 1, kinds[1]),
        wave_kind(flux, 2, kinds[2]),
    ];
    let decomposition = Decomposition::from_states(
        flux,
        vec![ul.to_vec(), u1, u2, ur.to_vec()],
        &kinds,
        residual,
    )?;
    Ok(WaveFit {
        decomposition,
        curves: vec![c1, middle, c3],
        histories: vec![
            h1,
            CurveHistory {
                losses: curve_losses,
                curtailed: None,
            },
            h3,
        ],
        parameters: vec![xi1, xi2, xi3],
    })
}

/// Replaces breakpoint `breakpoint` by one anchored line per wave and
/// warm-starts the layout from the decomposition: line output biases at the
/// wave speeds and cone fields at the intermediate states. Rarefactions
/// become artificial lines along the fan edge facing the intermediate
/// state.
pub fn handoff<R: Rng + ?Sized>(
    decomposition: &Decomposition,
    problem: &ProblemSpec,
    breakpoint: usize,
    field_hidden: &[usize],
    line_hidden: &[usize],
    rng: &mut R,
) -> Result<(ProblemSpec, SubdomainLayout)> {
    handoff_many(
        &[(breakpoint, decomposition)],
        problem,
        field_hidden,
        line_hidden,
        rng,
    )
}

/// [`handoff`] for several breakpoints at once.
pub fn handoff_many<R: Rng + ?Sized>(
    decompositions: &[(usize, &Decomposition)],
    problem: &ProblemSpec,
    field_hidden: &[usize],
    line_hidden: &[usize],
    rng: &mut R,
) -> Result<(ProblemSpec, SubdomainLayout)> {
    let d = problem.initial.breakpoints().len();
    let mut next = problem.clone();
    if next.wave_counts.is_empty() {
        next.wave_counts = vec![1; d];
    }
    for &(breakpoint, decomposition) in decompositions {
        if breakpoint >= d {
            return Err(NdnnError::Structural(format!(
                "breakpoint {breakpoint} does not exist"
            )));
        }
        next.wave_counts[breakpoint] = decomposition.waves.len();
    }
    let mut layout = SubdomainLayout::build(&next, field_hidden, line_hidden, rng)?;
    for &(breakpoint, decomposition) in decompositions {
        let first = layout
            .lines
            .iter()
            .position(|l| l.breakpoint == Some(breakpoint))
            .expect("built layouts carry every breakpoint");
        let waves = &decomposition.waves;
        let last = waves.len() - 1;
        for (j, w) in waves.iter().enumerate() {
            let speed = match w.kind {
                WaveKind::Rarefaction if j == 0 && last > 0 => w.right_speed,
                WaveKind::Rarefaction if j == last && last > 0 => w.left_speed,
                _ => w.speed(),
            };
            let line = &mut layout.lines[first + j];
            if w.kind == WaveKind::Rarefaction {
                line.role = LineRole::Artificial;
            }
            if let Some(p) = line.params_mut() {
                p.set_output_bias(&[speed]);
            }
        }
        for j in 0..last {
            if let Some(p) = layout.fields[first + j].params_mut() {
                p.set_output_bias(&decomposition.states[j + 1]);
            }
        }
    }
    Ok((next, layout))
}

/// CSV rows `xi, u_1, ..., u_m` on `points` uniform parameters.
pub fn write_curve_csv<W: Write>(curve: &WaveCurve, points: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let m = curve.anchor.len();
    let mut header = vec!["xi".to_string()];
    header.extend((1..=m).map(|k| format!("u_{k}")));
    w.write_record(&header)?;
    for xi in linspace(curve.interval.0, curve.interval.1, points) {
        let mut row = vec![fmt_num(xi)];
        row.extend(curve.eval(xi).into_iter().map(fmt_num));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn straight(anchor: Vec<f64>, dir: Vec<f64>, interval: (f64, f64)) -> WaveCurve {
        let mut net = MlpParams::zeros(&[1, 3, dir.len()]).unwrap();
        net.set_output_bias(&dir);
        WaveCurve {
            family: 0,
            kind: CurveKind::Shock,
            side: Side::Left,
            anchor,
            anchor_param: 0.0,
            interval,
            net,
        }
    }

    #[test]
    fn burgers_curve_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = WaveCurve::new(
            &FluxModel::Burgers,
            0,
            CurveKind::Shock,
            Side::Left,
            &[1.0],
            3.0,
            &[4],
            &mut rng,
        )
        .unwrap();
        assert_eq!(c.interval, (-3.0, 0.0));
        let h = fit_curve(&FluxModel::Burgers, &mut c, &CurveFit::default()).unwrap();
        assert!(h.losses.last().unwrap().sqrt() < 1e-4);
        assert!((c.eval(-2.0)[0] - (-1.0)).abs() < 1e-4);
        assert_eq!(c.eval(0.0), vec![1.0]);
    }

    #[test]
    fn zero_length_curve_is_anchor_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sw = FluxModel::ShallowWater { g: 1.0 };
        let mut c = WaveCurve::new(
            &sw,
            0,
            CurveKind::Shock,
            Side::Left,
            &[3.0, 5.0],
            0.0,
            &[5, 5],
            &mut rng,
        )
        .unwrap();
        let h = fit_curve(&sw, &mut c, &CurveFit::default()).unwrap();
        assert_eq!(h.losses, vec![0.0]);
        assert_eq!(c.eval(0.0), vec![3.0, 5.0]);
    }

    #[test]
    fn intersection_examples() {
        let a = straight(vec![0.0, 0.0], vec![1.0, 1.0], (0.0, 2.0));
        let same = intersect_two(&a, &a.clone(), IntersectMode::SharedParameter, 1e-9).unwrap();
        assert_eq!(same.xi.0, 0.0);
        assert_eq!(same.gap, 0.0);
        // (0,0) + xi (1,1) meets (2,0) + xi (-1,1) at xi = 1.
        let b = straight(vec![2.0, 0.0], vec![-1.0, 1.0], (0.0, 2.0));
        let hit = intersect_two(&a, &b, IntersectMode::SharedParameter, 1e-9).unwrap();
        assert!((hit.xi.0 - 1.0).abs() < 1e-9 && hit.gap < 1e-9);
        // Independent: (0,0) + s (1,0) meets (1,-2) + t (0,1) at s=1, t=2.
        let c = straight(vec![0.0, 0.0], vec![1.0, 0.0], (0.0, 2.0));
        let d = straight(vec![1.0, -2.0], vec![0.0, 1.0], (0.0, 3.0));
        assert!(intersect_two(&c, &d, IntersectMode::SharedParameter, 1e-6).is_err());
        let hit = intersect_two(&c, &d, IntersectMode::Independent, 1e-9).unwrap();
        assert!((hit.xi.0 - 1.0).abs() < 1e-9 && (hit.xi.1 - 2.0).abs() < 1e-9);
        assert!((hit.state[0] - 1.0).abs() < 1e-9 && hit.state[1].abs() < 1e-9);
        let far = straight(vec![10.0, 10.0], vec![1.0, 0.0], (0.0, 2.0));
        assert!(matches!(
            intersect_two(&c, &far, IntersectMode::Independent, 1e-3),
            Err(NdnnError::NoIntersection { .. })
        ));
    }

    #[test]
    fn burgers_oracle_examples() {
        let b = FluxModel::Burgers;
        let d = exact_riemann_oracle(&b, &[1.0], &[-2.0]).unwrap();
        assert_eq!(d.waves[0].kind, WaveKind::Shock);
        assert_eq!(d.waves[0].speed(), -0.5);
        assert_eq!(d.waves[0].lax, Some(LaxClass::Entropic(0)));
        let d = exact_riemann_oracle(&b, &[-2.0], &[1.0]).unwrap();
        assert_eq!(d.waves[0].kind, WaveKind::Rarefaction);
    }

    #[test]
    fn burgers_oracle_matches_closed_form_on_grid() {
        let b = FluxModel::Burgers;
        let vals: Vec<f64> = (0..20).map(|i| -2.0 + 4.0 * i as f64 / 19.0).collect();
        for &ul in &vals {
            for &ur in &vals {
                let d = exact_riemann_oracle(&b, &[ul], &[ur]).unwrap();
                for q in 0..41 {
                    let xi = -3.0 + 6.0 * q as f64 / 40.0;
                    let exact = if ul > ur {
                        if xi < 0.5 * (ul + ur) {
                            ul
                        } else {
                            ur
                        }
                    } else {
                        xi.clamp(ul, ur)
                    };
                    assert_eq!(d.sample(&b, xi), vec![exact], "{ul} {ur} {xi}");
                }
            }
        }
    }

    #[test]
    fn shallow_water_oracle_satisfies_rankine_hugoniot() {
        let sw = FluxModel::ShallowWater { g: 1.0 };
        let d = exact_riemann_oracle(&sw, &[3.0, 5.0], &[3.0, -5.0]).unwrap();
        let star = &d.states[1];
        assert!(star[1].abs() < 1e-12);
        assert!(d.waves.iter().all(|w| w.kind == WaveKind::Shock));
        assert_eq!(d.waves[0].lax, Some(LaxClass::Entropic(0)));
        assert_eq!(d.waves[1].lax, Some(LaxClass::Entropic(1)));
        for k in 0..2 {
            let (l, r) = (&d.states[k], &d.states[k + 1]);
            let s = d.waves[k].speed();
            let (fl, fr) = (sw.flux(l).unwrap(), sw.flux(r).unwrap());
            for c in 0..2 {
                assert!(((fr[c] - fl[c]) - s * (r[c] - l[c])).abs() < 1e-10);
            }
        }
        assert!((star[0] - 6.3657).abs() < 1e-3, "{}", star[0]);
        let rare = exact_riemann_oracle(&sw, &[5.0, 3.0], &[8.0, 2.5]).unwrap();
        assert_eq!(rare.waves[0].kind, WaveKind::Shock);
        assert_eq!(rare.waves[1].kind, WaveKind::Rarefaction);
        // The fan is continuous at both edges.
        let w = &rare.waves[1];
        let edge = rare.sample(&sw, w.left_speed + 1e-12);
        assert!(dist(&edge, &rare.states[1]) < 1e-9);
        let edge = rare.sample(&sw, w.right_speed);
        assert!(dist(&edge, &rare.states[2]) < 1e-9);
        assert!(matches!(
            exact_riemann_oracle(&sw, &[1.0, -5.0], &[1.0, 5.0]),
            Err(NdnnError::Vacuum)
        ));
    }

    #[test]
    fn euler_oracle_reproduces_sod() {
        let gamma = 1.4;
        let eu = FluxModel::Euler { gamma };
        let ul = euler_conservative(gamma, 1.0, 0.0, 1.0);
        let ur = euler_conservative(gamma, 0.125, 0.0, 0.1);
        let d = exact_riemann_oracle(&eu, &ul, &ur).unwrap();
        let (v, c, _) = euler_primitives(gamma, &d.states[1]);
        let p = c * c * d.states[1][0] / gamma;
        // Reference star values of the Sod tube.
        assert!((p - 0.30313).abs() < 1e-4, "{p}");
        assert!((v - 0.92745).abs() < 1e-4, "{v}");
        assert!((d.states[1][0] - 0.42632).abs() < 1e-4);
        assert!((d.states[2][0] - 0.26557).abs() < 1e-4);
        let kinds: Vec<WaveKind> = d.waves.iter().map(|w| w.kind).collect();
        assert_eq!(
            kinds,
            vec![WaveKind::Rarefaction, WaveKind::Contact, WaveKind::Shock]
        );
        assert_eq!(d.waves[1].lax, Some(LaxClass::Contact(1)));
        assert_eq!(d.waves[2].lax, Some(LaxClass::Entropic(2)));
        let fan = &d.waves[0];
        assert!(dist(&d.sample(&eu, fan.right_speed), &d.states[1]) < 1e-9);
        assert!(dist(&d.sample(&eu, fan.left_speed), &d.states[0]) < 1e-9);
        let vac_l = euler_conservative(gamma, 1.0, -20.0, 1.0);
        let vac_r = euler_conservative(gamma, 1.0, 20.0, 1.0);
        assert!(matches!(
            exact_riemann_oracle(&eu, &vac_l, &vac_r),
            Err(NdnnError::Vacuum)
        ));
    }

    #[test]
    fn handoff_counts_lines_and_warm_starts() {
        use crate::problem::{InitialData, Profile};
        let sw = FluxModel::ShallowWater { g: 1.0 };
        let initial = InitialData::new(
            vec![-0.1, 0.0, 0.1],
            vec![
                Profile::Const(vec![3.0, 5.0]),
                Profile::Const(vec![3.0, -5.0]),
            ],
        );
        let problem = ProblemSpec::new(sw.clone(), initial, 0.0025);
        let d = exact_riemann_oracle(&sw, &[3.0, 5.0], &[3.0, -5.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, lay) = handoff(&d, &problem, 0, &[4, 4], &[4, 4], &mut rng).unwrap();
        assert_eq!(p.wave_counts, vec![2]);
        assert_eq!(lay.subdomain_count(), 3);
        assert_eq!(lay.kind(1), crate::geometry::ReferenceDomain::Cone);
        let cone_bias = lay.fields[1]
            .params()
            .unwrap()
            .forward(&[0.0, 0.0])
            .unwrap();
        assert!(dist(&cone_bias, &d.states[1]) < 3.0);

        let gamma = 1.4;
        let eu = FluxModel::Euler { gamma };
        let ul = euler_conservative(gamma, 1.0, 0.0, 1.0);
        let ur = euler_conservative(gamma, 0.125, 0.0, 0.1);
        let initial = InitialData::new(
            vec![0.0, 0.5, 1.0],
            vec![Profile::Const(ul.clone()), Profile::Const(ur.clone())],
        );
        let problem = ProblemSpec::new(eu.clone(), initial, 0.2);
        let d = exact_riemann_oracle(&eu, &ul, &ur).unwrap();
        let (_, lay) = handoff(&d, &problem, 0, &[4], &[4], &mut rng).unwrap();
        assert_eq!(lay.subdomain_count(), 4);
        assert_eq!(lay.interior_count(), 3);
        assert_eq!(lay.lines[1].role, LineRole::Artificial);
        assert_eq!(lay.lines[2].role, LineRole::Physical);
    }

    #[test]
    fn curve_csv_has_header_and_rows() {
        let a = straight(vec![0.0, 1.0], vec![1.0, 0.0], (0.0, 1.0));
        let mut buf = Vec::new();
        write_curve_csv(&a, 5, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("xi,u_1,u_2\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
