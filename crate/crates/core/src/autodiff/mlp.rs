//! Fully connected tanh networks.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Mat, Tape, Var};
use crate::error::{NdnnError, Result};

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    w: Array2<f64>,
    b: Array1<f64>,
}

/// Weights and biases of a network with architecture `[n_0, ..., n_l]`.
///
/// Hidden layers use tanh; the output layer is affine. The flat view lists,
/// layer by layer, the row-major weight matrix followed by the bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatParams", into = "FlatParams")]
pub struct MlpParams {
    arch: Vec<usize>,
    layers: Vec<Layer>,
}

/// Serialized form: architecture plus flat parameter array.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlatParams {
    pub architecture: Vec<usize>,
    pub params: Vec<f64>,
}

impl TryFrom<FlatParams> for MlpParams {
    type Error = NdnnError;
    fn try_from(f: FlatParams) -> Result<Self> {
        MlpParams::from_flat(&f.architecture, &f.params)
    }
}

impl From<MlpParams> for FlatParams {
    fn from(p: MlpParams) -> Self {
        FlatParams {
            params: p.to_flat(),
            architecture: p.arch,
        }
    }
}

/// Gradient aligned with [`MlpParams::to_flat`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn zeros(len: usize) -> Self {
        GradVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn add_assign(&mut self, other: &GradVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }
}

fn check_arch(arch: &[usize]) -> Result<()> {
    if arch.len() < 2 || arch.contains(&0) {
        return Err(NdnnError::Structural(format!(
            "invalid architecture {arch:?}"
        )));
    }
    Ok(())
}

impl MlpParams {
    pub fn zeros(arch: &[usize]) -> Result<Self> {
        check_arch(arch)?;
        let layers = arch
            .windows(2)
            .map(|w| Layer {
                w: Array2::zeros((w[1], w[0])),
                b: Array1::zeros(w[1]),
            })
            .collect();
        Ok(MlpParams {
            arch: arch.to_vec(),
            layers,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: &[usize], rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        for layer in &mut p.layers {
            let (fan_out, fan_in) = layer.w.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            layer.w.mapv_inplace(|_| rng.gen_range(-limit..=limit));
        }
        Ok(p)
    }

    pub fn from_flat(arch: &[usize], flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        if flat.len() != p.len() {
            return Err(NdnnError::Structural(format!(
                "flat parameter length {} does not match architecture {arch:?} ({})",
                flat.len(),
                p.len()
            )));
        }
        p.set_flat(flat);
        Ok(p)
    }

    pub fn architecture(&self) -> &[usize] {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.arch.last().unwrap()
    }

    /// Number of scalar parameters, `sum n_i (n_{i-1} + 1)`.
    pub fn len(&self) -> usize {
        self.arch.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for layer in &self.layers {
            out.extend(layer.w.iter());
            out.extend(layer.b.iter());
        }
        out
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for layer in &mut self.layers {
            for w in layer.w.iter_mut() {
                *w = it.next().unwrap();
            }
            for b in layer.b.iter_mut() {
                *b = it.next().unwrap();
            }
        }
    }

    /// Overwrites every parameter from a flat vector in `to_flat` order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(NdnnError::Structural(format!(
                "flat vector of length {} for {} parameters",
                flat.len(),
                self.len()
            )));
        }
        self.set_flat(flat);
        Ok(())
    }

    /// `self -= rate * grad`.
    pub fn descend(&mut self, grad: &GradVector, rate: f64) {
        assert_eq!(grad.len(), self.len());
        let mut g = grad.0.iter();
        for layer in &mut self.layers {
            for w in layer.w.iter_mut() {
                *w -= rate * g.next().unwrap();
            }
            for b in layer.b.iter_mut() {
                *b -= rate * g.next().unwrap();
            }
        }
    }

    /// Sets the output bias; handy for warm starts at a known state.
    pub fn set_output_bias(&mut self, bias: &[f64]) {
        let last = self.layers.last_mut().unwrap();
        assert_eq!(bias.len(), last.b.len());
        last.b.assign(&Array1::from(bias.to_vec()));
    }

    /// Scales the output-layer weights.
    pub fn scale_output_weights(&mut self, factor: f64) {
        self.layers
            .last_mut()
            .unwrap()
            .w
            .mapv_inplace(|w| w * factor);
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(NdnnError::Structural(format!(
                "input of length {} for a network with {} inputs",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut h = Array1::from(input.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.w.dot(&h) + &layer.b;
            h = if i == last { z } else { z.mapv(f64::tanh) };
        }
        Ok(h.to_vec())
    }

    /// Value and the partial derivatives of every output with respect to
    /// every input; `derivs[j][k] = d out_k / d in_j`.
    pub fn forward_with_input_derivs(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self.check_input(input)?;
        let n0 = self.input_dim();
        let mut h = Array1::from(input.to_vec());
        // Tangents as columns: dh / d input_j.
        let mut dh = Array2::<f64>::eye(n0);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.w.dot(&h) + &layer.b;
            let dz = layer.w.dot(&dh);
            if i == last {
                h = z;
                dh = dz;
            } else {
                h = z.mapv(f64::tanh);
                let s = h.mapv(|y| 1.0 - y * y);
                dh = dz * &s.insert_axis(ndarray::Axis(1));
            }
        }
        let derivs = (0..n0).map(|j| dh.column(j).to_vec()).collect();
        Ok((h.to_vec(), derivs))
    }

    /// Records the parameters as differentiable leaves.
    pub fn bind<'t>(&self, tape: &'t Tape) -> NetVars<'t> {
        self.bind_with(tape, true)
    }

    /// Records the parameters as constants (frozen snapshots).
    pub fn bind_const<'t>(&self, tape: &'t Tape) -> NetVars<'t> {
        self.bind_with(tape, false)
    }

    fn bind_with<'t>(&self, tape: &'t Tape, trainable: bool) -> NetVars<'t> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let b = l.b.clone().insert_axis(ndarray::Axis(1));
                if trainable {
                    (tape.param(l.w.clone()), tape.param(b))
                } else {
                    (tape.constant(l.w.clone()), tape.constant(b))
                }
            })
            .collect();
        NetVars {
            layers,
            arch: self.arch.clone(),
        }
    }
}

/// A network bound to a tape.
#[derive(Clone, Debug)]
pub struct NetVars<'t> {
    layers: Vec<(Var<'t>, Var<'t>)>,
    arch: Vec<usize>,
}

impl<'t> NetVars<'t> {
    pub fn output_dim(&self) -> usize {
        *self.arch.last().unwrap()
    }

    /// Batched forward pass; `input` is `n_0 x batch`.
    pub fn forward(&self, input: Var<'t>) -> Var<'t> {
        let mut h = input;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = w.matmul(h) + b;
            h = if i == last { z } else { z.tanh() };
        }
        h
    }

    /// Forward pass carrying directional sensitivities; each tangent is an
    /// `n_0 x batch` direction in input space.
    pub fn forward_jet(&self, input: Var<'t>, tangents: &[Var<'t>]) -> (Var<'t>, Vec<Var<'t>>) {
        let mut h = input;
        let mut dh: Vec<Var<'t>> = tangents.to_vec();
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = w.matmul(h) + b;
            let dz: Vec<_> = dh.iter().map(|&d| w.matmul(d)).collect();
            if i == last {
                h = z;
                dh = dz;
            } else {
                h = z.tanh();
                let s = 1.0 - h.square();
                dh = dz.into_iter().map(|d| d * s).collect();
            }
        }
        (h, dh)
    }

    /// Weight and bias leaves, layer by layer.
    pub fn parameters(&self) -> impl Iterator<Item = Var<'t>> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Collects parameter adjoints in flat order.
    pub fn grad(&self, grads: &Gradients) -> GradVector {
        let mut out = Vec::new();
        for &(w, b) in &self.layers {
            out.extend(grads.wrt(w).iter());
            out.extend(grads.wrt(b).iter());
        }
        GradVector(out)
    }
}

/// A line `anchor + t * N(t * time_scale)`, pinned at `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinnedLine {
    pub params: MlpParams,
    pub anchor: f64,
    pub time_scale: f64,
}

impl PinnedLine {
    pub fn new(params: MlpParams, anchor: f64, time_scale: f64) -> Result<Self> {
        if params.input_dim() != 1 || params.output_dim() != 1 {
            return Err(NdnnError::Structural(
                "a pinned line needs a 1-input, 1-output network".into(),
            ));
        }
        Ok(PinnedLine {
            params,
            anchor,
            time_scale,
        })
    }

    /// Position and velocity at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let (v, d) = self
            .params
            .forward_with_input_derivs(&[t * self.time_scale])
            .expect("line networks take one input");
        let n = self.anchor + t * v[0];
        let dn = v[0] + t * d[0][0] * self.time_scale;
        (n, dn)
    }

    pub fn position(&self, t: f64) -> f64 {
        self.eval(t).0
    }
}

/// `x_i + t * forward(params, t)`.
pub fn pinned_line(params: &MlpParams, t: f64, anchor: f64) -> Result<f64> {
    let v = params.forward(&[t])?;
    Ok(anchor + t * v[0])
}

/// Pinned-line position and velocity on a tape, for a `1 x batch` row of
/// times.
pub fn pinned_line_vars<'t>(
    net: &NetVars<'t>,
    t: &Mat,
    anchor: f64,
    time_scale: f64,
) -> (Var<'t>, Var<'t>) {
    let tape = net.layers[0].0.tape();
    let t_var = tape.constant(t.clone());
    let input = t_var * time_scale;
    let dir = tape.constant(Mat::from_elem((1, t.ncols()), time_scale));
    let (out, d) = net.forward_jet(input, &[dir]);
    let n = t_var * out + anchor;
    let dn = out + t_var * d[0];
    (n, dn)
}

/// Value and exact gradient of a scalar loss built from the given networks.
///
/// Every network is bound as trainable; the closure receives the bound
/// networks in the same order.
pub fn loss_gradient<F>(nets: &[&MlpParams], loss: F) -> Result<(f64, Vec<GradVector>)>
where
    F: for<'t> FnOnce(&'t Tape, &[NetVars<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let bound: Vec<NetVars<'_>> = nets.iter().map(|p| p.bind(&tape)).collect();
    let out = loss(&tape, &bound)?;
    let value = out.item();
    if !value.is_finite() {
        return Err(NdnnError::Divergence {
            epoch: 0,
            term: "total".into(),
            subdomain: None,
        });
    }
    let grads = tape.backward(out);
    Ok((value, bound.iter().map(|b| b.grad(&grads)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_net(w1: f64, w2: f64) -> MlpParams {
        MlpParams::from_flat(&[1, 1, 1], &[w1, 0.0, w2, 0.0]).unwrap()
    }

    #[test]
    fn flat_length_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::init(&[2, 5, 3, 2], &mut rng).unwrap();
        assert_eq!(p.len(), 5 * 3 + 3 * 6 + 2 * 4);
        let q = MlpParams::from_flat(p.architecture(), &p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(MlpParams::from_flat(&[2, 5, 1], &[0.0; 3]).is_err());
    }

    #[test]
    fn forward_examples() {
        let z = MlpParams::zeros(&[2, 4, 3]).unwrap();
        assert_eq!(z.forward(&[0.3, -1.0]).unwrap(), vec![0.0; 3]);
        let id = MlpParams::from_flat(&[2, 2], &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(id.forward(&[0.25, -4.0]).unwrap(), vec![0.25, -4.0]);
        let (v, d) = id.forward_with_input_derivs(&[0.25, -4.0]).unwrap();
        assert_eq!(v, vec![0.25, -4.0]);
        assert_eq!(d[0], vec![1.0, 0.0]);
        let u = unit_net(1.0, 1.0);
        let (v, d) = u.forward_with_input_derivs(&[0.5]).unwrap();
        assert!((v[0] - 0.462117157).abs() < 1e-9);
        assert!((d[0][0] - 0.786447733).abs() < 1e-9);
        let (_, dz) = z.forward_with_input_derivs(&[0.1, 0.2]).unwrap();
        assert!(dz.iter().flatten().all(|&x| x == 0.0));
        assert!(z.forward(&[1.0]).is_err());
    }

    #[test]
    fn pinned_line_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = MlpParams::init(&[1, 6, 1], &mut rng).unwrap();
        assert_eq!(pinned_line(&p, 0.0, 0.37).unwrap(), 0.37);
        let z = MlpParams::zeros(&[1, 6, 1]).unwrap();
        assert_eq!(pinned_line(&z, 0.8, -1.5).unwrap(), -1.5);
        let mut c = MlpParams::zeros(&[1, 3, 1]).unwrap();
        c.set_output_bias(&[1.7]);
        assert!((pinned_line(&c, 0.5, 0.0).unwrap() - 0.85).abs() < 1e-15);
        let line = PinnedLine::new(c, 0.0, 2.0).unwrap();
        assert_eq!(line.eval(0.5), (0.85, 1.7));
    }

    #[test]
    fn zero_params_squared_output_gradient() {
        let p = MlpParams::zeros(&[2, 3, 1]).unwrap();
        let (v, g) = loss_gradient(&[&p], |tape, nets| {
            let x = tape.constant(Mat::from_shape_vec((2, 1), vec![0.4, -0.3]).unwrap());
            Ok(nets[0].forward(x).square().sum())
        })
        .unwrap();
        assert_eq!(v, 0.0);
        // d(b_l^2)/db_l = 2 b_l = 0 at zero; every other path carries a zero factor.
        assert!(g[0].0.iter().all(|&x| x == 0.0));

        let mut q = p.clone();
        q.set_output_bias(&[0.5]);
        let (_, g) = loss_gradient(&[&q], |tape, nets| {
            let x = tape.constant(Mat::from_shape_vec((2, 1), vec![0.4, -0.3]).unwrap());
            Ok(nets[0].forward(x).square().sum())
        })
        .unwrap();
        let last = g[0].0.len() - 1;
        assert_eq!(g[0].0[last], 1.0);
        assert!(g[0].0[..last].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn independent_network_gets_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = MlpParams::init(&[1, 4, 1], &mut rng).unwrap();
        let b = MlpParams::init(&[1, 4, 1], &mut rng).unwrap();
        let (_, g) = loss_gradient(&[&a, &b], |tape, nets| {
            let x = tape.row(&[0.1, 0.2]);
            Ok(nets[0].forward(x).square().sum())
        })
        .unwrap();
        assert!(g[1].0.iter().all(|&x| x == 0.0));
        assert!(g[0].norm() > 0.0);
    }

    #[test]
    fn tape_jet_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = MlpParams::init(&[2, 7, 5, 2], &mut rng).unwrap();
        let pts = [[0.3, 0.1], [-0.7, 0.9], [1.2, -0.4]];
        let tape = Tape::new();
        let net = p.bind(&tape);
        let input = Mat::from_shape_fn((2, 3), |(r, c)| pts[c][r]);
        let ex = tape.constant(Mat::from_shape_fn(
            (2, 3),
            |(r, _)| if r == 0 { 1.0 } else { 0.0 },
        ));
        let et = tape.constant(Mat::from_shape_fn(
            (2, 3),
            |(r, _)| if r == 1 { 1.0 } else { 0.0 },
        ));
        let (v, d) = net.forward_jet(tape.constant(input), &[ex, et]);
        let (v, dx, dt) = (v.value(), d[0].value(), d[1].value());
        for (c, pt) in pts.iter().enumerate() {
            let (val, der) = p.forward_with_input_derivs(pt).unwrap();
            for k in 0..2 {
                assert!((v[[k, c]] - val[k]).abs() < 1e-14);
                assert!((dx[[k, c]] - der[0][k]).abs() < 1e-14);
                assert!((dt[[k, c]] - der[1][k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn serde_uses_architecture_and_flat_array() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = MlpParams::init(&[1, 2, 1], &mut rng).unwrap();
        let json = serde_json::to_value(&p).unwrap();
        assert_eq!(json["architecture"], serde_json::json!([1, 2, 1]));
        assert_eq!(json["params"].as_array().unwrap().len(), 7);
        let back: MlpParams = serde_json::from_value(json).unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn flat_round_trip_is_bit_exact(vals in proptest::collection::vec(-1e3f64..1e3, 17)) {
            let p = MlpParams::from_flat(&[2, 3, 2], &vals).unwrap();
            prop_assert_eq!(p.to_flat(), vals);
        }

        #[test]
        fn input_derivs_match_finite_differences(seed in 0u64..1000, x in -1.5f64..1.5, t in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = MlpParams::init(&[2, 6, 6, 1], &mut rng).unwrap();
            let (_, d) = p.forward_with_input_derivs(&[x, t]).unwrap();
            let h = 1e-5;
            let fx = (p.forward(&[x + h, t]).unwrap()[0] - p.forward(&[x - h, t]).unwrap()[0]) / (2.0 * h);
            let ft = (p.forward(&[x, t + h]).unwrap()[0] - p.forward(&[x, t - h]).unwrap()[0]) / (2.0 * h);
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-3);
            prop_assert!(rel(d[0][0], fx) <= 1e-7, "{} vs {}", d[0][0], fx);
            prop_assert!(rel(d[1][0], ft) <= 1e-7, "{} vs {}", d[1][0], ft);
        }
    }
}
