//! Problem definitions: flux models, initial data and the space-time box.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{NdnnError, Result};

/// Lower bound for depth, density and internal energy.
pub const ADMISSIBILITY_FLOOR: f64 = 1e-12;

/// Flux `f(u)` of a conservation law `u_t + f(u)_x = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FluxModel {
    /// `u^2 / 2`
    Burgers,
    /// `4u(2 - u)`
    Quadratic,
    /// `sum_k c_k u^k`
    Polynomial { coeffs: Vec<f64> },
    /// State `(h, hu)`.
    ShallowWater { g: f64 },
    /// State `(rho, rho u, rho E)`, perfect gas.
    Euler { gamma: f64 },
}

impl FluxModel {
    pub fn components(&self) -> usize {
        match self {
            FluxModel::ShallowWater { .. } => 2,
            FluxModel::Euler { .. } => 3,
            _ => 1,
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.components() == 1
    }

    pub fn check_admissible(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.components() {
            return Err(NdnnError::Structural(format!(
                "state of length {} for a model with {} components",
                u.len(),
                self.components()
            )));
        }
        if let Some((component, value)) =
            u.iter().copied().enumerate().find(|(_, v)| !v.is_finite())
        {
            return Err(NdnnError::Inadmissible {
                component,
                value,
                reason: "non-finite",
            });
        }
        match self {
            FluxModel::ShallowWater { .. } if u[0] < ADMISSIBILITY_FLOOR => {
                Err(NdnnError::Inadmissible {
                    component: 0,
                    value: u[0],
                    reason: "depth must be positive",
                })
            }
            FluxModel::Euler { .. } => {
                if u[0] < ADMISSIBILITY_FLOOR {
                    return Err(NdnnError::Inadmissible {
                        component: 0,
                        value: u[0],
                        reason: "density must be positive",
                    });
                }
                let vel = u[1] / u[0];
                let internal = u[2] / u[0] - 0.5 * vel * vel;
                if internal < ADMISSIBILITY_FLOOR {
                    return Err(NdnnError::Inadmissible {
                        component: 2,
                        value: u[2],
                        reason: "internal energy must be positive",
                    });
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn flux(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_admissible(u)?;
        Ok(match self {
            FluxModel::Burgers => vec![0.5 * u[0] * u[0]],
            FluxModel::Quadratic => vec![4.0 * u[0] * (2.0 - u[0])],
            FluxModel::Polynomial { coeffs } => vec![horner(coeffs, u[0])],
            FluxModel::ShallowWater { g } => {
                let (h, m) = (u[0], u[1]);
                vec![m, m * m / h + 0.5 * g * h * h]
            }
            FluxModel::Euler { gamma } => {
                let (rho, m, e) = (u[0], u[1], u[2]);
                let vel = m / rho;
                let p = (gamma - 1.0) * (e - 0.5 * m * vel);
                vec![m, m * vel + p, (e + p) * vel]
            }
        })
    }

    /// Analytic Jacobian `A(u)`, row-major.
    pub fn jacobian(&self, u: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_admissible(u)?;
        Ok(match self {
            FluxModel::ShallowWater { g } => {
                let v = u[1] / u[0];
                vec![vec![0.0, 1.0], vec![g * u[0] - v * v, 2.0 * v]]
            }
            FluxModel::Euler { gamma } => {
                let (rho, m, e) = (u[0], u[1], u[2]);
                let v = m / rho;
                let g1 = gamma - 1.0;
                vec![
                    vec![0.0, 1.0, 0.0],
                    vec![0.5 * (gamma - 3.0) * v * v, (3.0 - gamma) * v, g1],
                    vec![
                        -gamma * e * v / rho + g1 * v * v * v,
                        gamma * e / rho - 1.5 * g1 * v * v,
                        gamma * v,
                    ],
                ]
            }
            _ => vec![vec![self.scalar_derivative(u[0])]],
        })
    }

    /// `f'(u)` for scalar models.
    pub fn scalar_derivative(&self, u: f64) -> f64 {
        match self {
            FluxModel::Burgers => u,
            FluxModel::Quadratic => 8.0 - 8.0 * u,
            FluxModel::Polynomial { coeffs } => horner(&poly_derivative(coeffs), u),
            _ => panic!("scalar_derivative on a system flux"),
        }
    }

    /// `f''(u)` for scalar models.
    pub fn scalar_second_derivative(&self, u: f64) -> f64 {
        match self {
            FluxModel::Burgers => 1.0,
            FluxModel::Quadratic => -8.0,
            FluxModel::Polynomial { coeffs } => {
                horner(&poly_derivative(&poly_derivative(coeffs)), u)
            }
            _ => panic!("scalar_second_derivative on a system flux"),
        }
    }

    /// Root of `f'` inside `[lo, hi]`, if any (scalar models).
    pub fn critical_point(&self, lo: f64, hi: f64) -> Option<f64> {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let d = |u: f64| self.scalar_derivative(u);
        let (mut a, mut b) = (lo, hi);
        let (fa, fb) = (d(a), d(b));
        if fa == 0.0 {
            return Some(a);
        }
        if fb == 0.0 {
            return Some(b);
        }
        if fa.signum() == fb.signum() {
            return None;
        }
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if d(mid).signum() == fa.signum() {
                a = mid;
            } else {
                b = mid;
            }
        }
        Some(0.5 * (a + b))
    }

    /// Eigenpairs of `A(u)` with increasing eigenvalues and unit
    /// eigenvectors whose first nonzero component is positive.
    pub fn eigen(&self, u: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
        self.check_admissible(u)?;
        let pairs: Vec<(f64, Vec<f64>)> = match self {
            FluxModel::ShallowWater { g } => {
                let v = u[1] / u[0];
                let c = (g * u[0]).sqrt();
                vec![(v - c, vec![1.0, v - c]), (v + c, vec![1.0, v + c])]
            }
            FluxModel::Euler { gamma } => {
                let (v, c, h) = euler_primitives(*gamma, u);
                vec![
                    (v - c, vec![1.0, v - c, h - v * c]),
                    (v, vec![1.0, v, 0.5 * v * v]),
                    (v + c, vec![1.0, v + c, h + v * c]),
                ]
            }
            _ => vec![(self.scalar_derivative(u[0]), vec![1.0])],
        };
        for w in pairs.windows(2) {
            let scale = w[0].0.abs().max(w[1].0.abs()).max(1.0);
            if w[1].0 - w[0].0 <= 1e-12 * scale {
                return Err(NdnnError::Hyperbolicity(w[0].0, w[1].0));
            }
        }
        Ok(pairs.into_iter().map(|(l, r)| (l, normalize(r))).collect())
    }

    pub fn eigenvalues(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eigen(u)?.into_iter().map(|(l, _)| l).collect())
    }

    /// Whether characteristic family `k` (0-based) is linearly degenerate.
    pub fn linearly_degenerate(&self, k: usize) -> bool {
        matches!(self, FluxModel::Euler { .. }) && k == 1
    }

    /// `max_k |lambda_k(u)|`.
    pub fn max_speed(&self, u: &[f64]) -> Result<f64> {
        if self.is_scalar() {
            return Ok(self.scalar_derivative(u[0]).abs());
        }
        Ok(self
            .eigenvalues(u)?
            .into_iter()
            .fold(0.0, |m, l| m.max(l.abs())))
    }

    /// Flux of a batched state given as one `1 x batch` row per component.
    pub fn flux_vars<'t>(&self, u: &[Var<'t>]) -> Vec<Var<'t>> {
        match self {
            FluxModel::Burgers => vec![u[0].square() * 0.5],
            FluxModel::Quadratic => vec![u[0] * (2.0 - u[0]) * 4.0],
            FluxModel::Polynomial { coeffs } => vec![horner_vars(coeffs, u[0])],
            FluxModel::ShallowWater { g } => {
                let (h, m) = (u[0], u[1]);
                vec![m, m.square() / h + h.square() * (0.5 * g)]
            }
            FluxModel::Euler { gamma } => {
                let (rho, m, e) = (u[0], u[1], u[2]);
                let vel = m / rho;
                let p = (e - m * vel * 0.5) * (gamma - 1.0);
                vec![m, m * vel + p, (e + p) * vel]
            }
        }
    }

    /// `A(u) du` on batched rows.
    pub fn jvp_vars<'t>(&self, u: &[Var<'t>], du: &[Var<'t>]) -> Vec<Var<'t>> {
        match self {
            FluxModel::Burgers => vec![u[0] * du[0]],
            FluxModel::Quadratic => vec![(8.0 - u[0] * 8.0) * du[0]],
            FluxModel::Polynomial { coeffs } => {
                vec![horner_vars(&poly_derivative(coeffs), u[0]) * du[0]]
            }
            FluxModel::ShallowWater { g } => {
                let v = u[1] / u[0];
                vec![du[1], (u[0] * *g - v.square()) * du[0] + v * du[1] * 2.0]
            }
            FluxModel::Euler { gamma } => {
                let (rho, m, e) = (u[0], u[1], u[2]);
                let g1 = gamma - 1.0;
                let v = m / rho;
                let v2 = v.square();
                let row2 =
                    v2 * (0.5 * (gamma - 3.0)) * du[0] + v * (3.0 - gamma) * du[1] + du[2] * g1;
                let ev = e / rho;
                let row3 = (v2 * v * g1 - ev * v * *gamma) * du[0]
                    + (ev * *gamma - v2 * (1.5 * g1)) * du[1]
                    + v * *gamma * du[2];
                vec![du[1], row2, row3]
            }
        }
    }

    /// Unit eigenvector `r_k(u)` on batched rows (sign convention of
    /// [`FluxModel::eigen`]).
    pub fn eigvec_vars<'t>(&self, k: usize, u: &[Var<'t>]) -> Vec<Var<'t>> {
        let tape = u[0].tape();
        let one = || tape.scalar(1.0).broadcast(u[0].shape());
        let comps: Vec<Var<'t>> = match self {
            FluxModel::ShallowWater { g } => {
                let v = u[1] / u[0];
                let c = (u[0] * *g).sqrt();
                let s = if k == 0 { v - c } else { v + c };
                vec![one(), s]
            }
            FluxModel::Euler { gamma } => {
                let (rho, m, e) = (u[0], u[1], u[2]);
                let v = m / rho;
                let p = (e - m * v * 0.5) * (gamma - 1.0);
                let c = (p * *gamma / rho).sqrt();
                let h = (e + p) / rho;
                match k {
                    0 => vec![one(), v - c, h - v * c],
                    1 => vec![one(), v, v.square() * 0.5],
                    _ => vec![one(), v + c, h + v * c],
                }
            }
            _ => return vec![one()],
        };
        let norm = comps
            .iter()
            .skip(1)
            .fold(comps[0].square(), |acc, c| acc + c.square())
            .sqrt();
        comps.into_iter().map(|c| c / norm).collect()
    }
}

impl FluxModel {
    /// `grad lambda_k . r_k` with the unit eigenvector of [`FluxModel::eigen`];
    /// zero for a linearly degenerate family.
    pub fn nonlinearity(&self, k: usize, u: &[f64]) -> Result<f64> {
        let pairs = self.eigen(u)?;
        let r0 = pairs[k].1[0];
        Ok(match self {
            // Coefficients for r = (1, ...), rescaled to the unit vector.
            FluxModel::ShallowWater { g } => {
                let c = (g * u[0]).sqrt();
                let sign = if k == 0 { -1.0 } else { 1.0 };
                sign * 1.5 * c / u[0] * r0
            }
            FluxModel::Euler { gamma } => {
                let (_, c, _) = euler_primitives(*gamma, u);
                match k {
                    0 => -0.5 * (gamma + 1.0) * c / u[0] * r0,
                    1 => 0.0,
                    _ => 0.5 * (gamma + 1.0) * c / u[0] * r0,
                }
            }
            _ => self.scalar_second_derivative(u[0]),
        })
    }

    /// Eigenvector field of family `k` scaled so that `lambda_k` grows at
    /// unit rate along it, on batched rows. Undefined for linearly
    /// degenerate families.
    pub fn rarefaction_vars<'t>(&self, k: usize, u: &[Var<'t>]) -> Vec<Var<'t>> {
        let tape = u[0].tape();
        let one = || tape.scalar(1.0).broadcast(u[0].shape());
        match self {
            FluxModel::ShallowWater { g } => {
                let v = u[1] / u[0];
                let c = (u[0] * *g).sqrt();
                let (s, sign) = if k == 0 { (v - c, -1.0) } else { (v + c, 1.0) };
                let scale = u[0] / c * (sign / 1.5);
                vec![scale, s * scale]
            }
            FluxModel::Euler { gamma } => {
                let (rho, m, e) = (u[0], u[1], u[2]);
                let v = m / rho;
                let p = (e - m * v * 0.5) * (gamma - 1.0);
                let c = (p * *gamma / rho).sqrt();
                let h = (e + p) / rho;
                let sign = if k == 0 { -1.0 } else { 1.0 };
                let scale = rho / c * (2.0 * sign / (gamma + 1.0));
                let s = if k == 0 { v - c } else { v + c };
                let third = if k == 0 { h - v * c } else { h + v * c };
                vec![scale, s * scale, third * scale]
            }
            FluxModel::Burgers => vec![one()],
            FluxModel::Quadratic => vec![one() * (-1.0 / 8.0)],
            FluxModel::Polynomial { coeffs } => {
                vec![one() / horner_vars(&poly_derivative(&poly_derivative(coeffs)), u[0])]
            }
        }
    }
}

/// Velocity, sound speed and total enthalpy of a conservative Euler state.
pub fn euler_primitives(gamma: f64, u: &[f64]) -> (f64, f64, f64) {
    let (rho, m, e) = (u[0], u[1], u[2]);
    let v = m / rho;
    let p = (gamma - 1.0) * (e - 0.5 * m * v);
    let c = (gamma * p / rho).sqrt();
    (v, c, (e + p) / rho)
}

/// Conservative Euler state from `(rho, u, p)`.
pub fn euler_conservative(gamma: f64, rho: f64, vel: f64, p: f64) -> Vec<f64> {
    vec![rho, rho * vel, p / (gamma - 1.0) + 0.5 * rho * vel * vel]
}

fn normalize(mut r: Vec<f64>) -> Vec<f64> {
    let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sign = r
        .iter()
        .find(|x| **x != 0.0)
        .map(|x| x.signum())
        .unwrap_or(1.0);
    for x in &mut r {
        *x *= sign / n;
    }
    r
}

fn horner(coeffs: &[f64], u: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
}

fn horner_vars<'t>(coeffs: &[f64], u: Var<'t>) -> Var<'t> {
    let tape = u.tape();
    let mut acc = tape.scalar(0.0).broadcast(u.shape());
    for &c in coeffs.iter().rev() {
        acc = acc * u + c;
    }
    acc
}

fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| k as f64 * c)
        .collect()
}

/// Initial profile on one interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Const(Vec<f64>),
    /// `a x + b`
    Affine {
        a: f64,
        b: f64,
    },
    /// `shift + amp * tanh(slope * (x - center))`
    Tanh {
        amp: f64,
        shift: f64,
        slope: f64,
        #[serde(default)]
        center: f64,
    },
    /// `scale * (1 + (-e^{kx} - c1 e^{-kx}) / (e^{kx} + c2 e^{-kx}))`
    ExpRatio {
        scale: f64,
        k: f64,
        c1: f64,
        c2: f64,
    },
    /// Piecewise-linear interpolation of sampled states.
    Tabulated {
        xs: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl Profile {
    pub fn eval(&self, x: f64) -> Vec<f64> {
        match self {
            Profile::Const(v) => v.clone(),
            Profile::Affine { a, b } => vec![a * x + b],
            Profile::Tanh {
                amp,
                shift,
                slope,
                center,
            } => vec![shift + amp * (slope * (x - center)).tanh()],
            Profile::ExpRatio { scale, k, c1, c2 } => {
                // Divide through by e^{kx} to stay finite for large |x|.
                let e = (-2.0 * k * x).exp();
                let frac = if e.is_finite() {
                    (-1.0 - c1 * e) / (1.0 + c2 * e)
                } else {
                    -c1 / c2
                };
                vec![scale * (1.0 + frac)]
            }
            Profile::Tabulated { xs, values } => {
                let j = xs.partition_point(|&p| p < x);
                if j == 0 {
                    return values[0].clone();
                }
                if j >= xs.len() {
                    return values[xs.len() - 1].clone();
                }
                let w = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
                values[j - 1]
                    .iter()
                    .zip(&values[j])
                    .map(|(l, r)| l + w * (r - l))
                    .collect()
            }
        }
    }

    /// Derivative of a scalar profile (finite difference for tabulated).
    pub fn slope(&self, x: f64) -> f64 {
        match self {
            Profile::Const(_) => 0.0,
            Profile::Affine { a, .. } => *a,
            Profile::Tanh {
                amp, slope, center, ..
            } => {
                let th = (slope * (x - center)).tanh();
                amp * slope * (1.0 - th * th)
            }
            _ => {
                let h = 1e-6;
                (self.eval(x + h)[0] - self.eval(x - h)[0]) / (2.0 * h)
            }
        }
    }

    fn width(&self) -> Option<usize> {
        match self {
            Profile::Const(v) => Some(v.len()),
            Profile::Tabulated { values, .. } => values.first().map(Vec::len),
            _ => Some(1),
        }
    }
}

/// Piecewise initial data with ordered breakpoints `a = x_0 < ... < x_{D+1} = b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub edges: Vec<f64>,
    pub profiles: Vec<Profile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_state: Option<Vec<f64>>,
}

impl InitialData {
    pub fn new(edges: Vec<f64>, profiles: Vec<Profile>) -> Self {
        InitialData {
            edges,
            profiles,
            left_state: None,
            right_state: None,
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.edges[0], *self.edges.last().unwrap())
    }

    /// Interior breakpoints `x_1, ..., x_D`.
    pub fn breakpoints(&self) -> &[f64] {
        &self.edges[1..self.edges.len() - 1]
    }

    /// Interval index containing `x`; breakpoints belong to the left interval.
    pub fn interval_of(&self, x: f64) -> Result<usize> {
        let (a, b) = self.domain();
        if !(a..=b).contains(&x) {
            return Err(NdnnError::OutOfDomain { x, a, b });
        }
        let j = self.edges[1..].partition_point(|&e| e < x);
        Ok(j.min(self.profiles.len() - 1))
    }

    pub fn left_boundary(&self) -> Vec<f64> {
        self.left_state
            .clone()
            .unwrap_or_else(|| self.profiles[0].eval(self.edges[0]))
    }

    pub fn right_boundary(&self) -> Vec<f64> {
        let (_, b) = self.domain();
        self.right_state
            .clone()
            .unwrap_or_else(|| self.profiles.last().unwrap().eval(b))
    }

    /// Total variation of the first component on a fine grid.
    pub fn total_variation(&self) -> f64 {
        let (a, b) = self.domain();
        let n = 4000;
        let vals: Vec<f64> = (0..=n)
            .map(|i| eval_initial(self, a + (b - a) * i as f64 / n as f64).unwrap()[0])
            .collect();
        vals.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }
}

/// `u_0(x)`; the left-interval value at an interior breakpoint.
pub fn eval_initial(data: &InitialData, x: f64) -> Result<Vec<f64>> {
    let j = data.interval_of(x)?;
    Ok(data.profiles[j].eval(x))
}

/// `f(u)`.
pub fn eval_flux(model: &FluxModel, u: &[f64]) -> Result<Vec<f64>> {
    model.flux(u)
}

/// Ordered eigenpairs `(lambda_k, r_k)`.
pub fn eval_eigen(model: &FluxModel, u: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
    model.eigen(u)
}

fn default_wave_counts() -> Vec<usize> {
    Vec::new()
}

/// A complete initial-boundary value problem on `(a, b) x (0, T)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub flux: FluxModel,
    pub initial: InitialData,
    pub final_time: f64,
    /// Lines emanating from each interior breakpoint (1 when empty).
    #[serde(default = "default_wave_counts")]
    pub wave_counts: Vec<usize>,
    /// Breakpoints (0-based) whose line is artificial, i.e. a guess for a
    /// shock that has not formed yet.
    #[serde(default)]
    pub artificial: Vec<usize>,
    /// Physical time at which this problem's `t = 0` sits.
    #[serde(default)]
    pub time_offset: f64,
}

impl ProblemSpec {
    pub fn new(flux: FluxModel, initial: InitialData, final_time: f64) -> Self {
        ProblemSpec {
            flux,
            initial,
            final_time,
            wave_counts: Vec::new(),
            artificial: Vec::new(),
            time_offset: 0.0,
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        self.initial.domain()
    }

    pub fn wave_count(&self, breakpoint: usize) -> usize {
        self.wave_counts.get(breakpoint).copied().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(NdnnError::Config(m));
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            return cfg(format!(
                "final_time must be positive, got {}",
                self.final_time
            ));
        }
        let edges = &self.initial.edges;
        if edges.len() < 2 {
            return cfg("initial.edges needs at least the two domain ends".into());
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return cfg(format!(
                "initial.edges must be strictly increasing: {edges:?}"
            ));
        }
        if self.initial.profiles.len() != edges.len() - 1 {
            return cfg(format!(
                "initial.profiles has {} entries for {} intervals",
                self.initial.profiles.len(),
                edges.len() - 1
            ));
        }
        let m = self.flux.components();
        for (i, p) in self.initial.profiles.iter().enumerate() {
            if p.width() != Some(m) {
                return cfg(format!(
                    "initial.profiles[{i}] does not have {m} components"
                ));
            }
            if let Profile::Tabulated { xs, values } = p {
                if xs.is_empty() || xs.len() != values.len() || xs.windows(2).any(|w| w[0] >= w[1])
                {
                    return cfg(format!("initial.profiles[{i}] has a malformed table"));
                }
            }
        }
        let d = edges.len() - 2;
        if !self.wave_counts.is_empty() && self.wave_counts.len() != d {
            return cfg(format!(
                "wave_counts has {} entries for {d} breakpoints",
                self.wave_counts.len()
            ));
        }
        if let Some(w) = self.wave_counts.iter().find(|&&w| w == 0 || w > m) {
            return cfg(format!("wave_counts entry {w} outside 1..={m}"));
        }
        if let Some(i) = self.artificial.iter().find(|&&i| i >= d) {
            return cfg(format!("artificial breakpoint {i} does not exist"));
        }
        for s in [self.initial.left_boundary(), self.initial.right_boundary()] {
            self.flux
                .check_admissible(&s)
                .map_err(|e| NdnnError::Config(format!("boundary state: {e}")))?;
        }
        // Admissibility and genuine nonlinearity over the sampled data range.
        let (a, b) = self.domain();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..=400 {
            let x = a + (b - a) * i as f64 / 400.0;
            let u = eval_initial(&self.initial, x)?;
            self.flux
                .check_admissible(&u)
                .map_err(|e| NdnnError::Config(format!("initial data at x = {x}: {e}")))?;
            lo = lo.min(u[0]);
            hi = hi.max(u[0]);
        }
        if self.flux.is_scalar() {
            let s0 = self.flux.scalar_second_derivative(lo).signum();
            let ok = (0..=50).all(|i| {
                let u = lo + (hi - lo) * i as f64 / 50.0;
                let s = self.flux.scalar_second_derivative(u);
                s != 0.0 && s.signum() == s0
            });
            if !ok {
                return cfg(format!(
                    "flux is not strictly convex or concave on [{lo}, {hi}]"
                ));
            }
        }
        Ok(())
    }
}
