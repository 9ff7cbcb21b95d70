use ndnn::geometry::SubdomainLayout;
use ndnn::loss::*;
use ndnn::problem::{euler_conservative, FluxModel, InitialData, ProblemSpec, Profile};
use ndnn::riemann::{exact_riemann_oracle, handoff};
use ndnn::train::DdmLayout;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const DRAWS: usize = 100;
const LIMIT: f64 = 1e-6;
const COUNTS: SampleCounts = SampleCounts {
    rect: 16,
    cone: 16,
    unit: 16,
    time: 16,
};

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
        "interface" => w.interface = 1.0,
        _ => unreachable!(),
    }
    LossConfig {
        weights: w,
        boundary_inflow: true,
        boundary_rh: true,
    }
}

/// Uniform parameters in `[-0.5, 0.5]`, with field output biases restored so
/// system states stay admissible.
fn redraw(layout: &mut SubdomainLayout, biases: &[Vec<f64>], rng: &mut ChaCha8Rng) {
    let n = layout.parameters().len();
    let flat: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    layout.set_parameters(&flat).unwrap();
    for (f, b) in layout.fields.iter_mut().zip(biases) {
        if let Some(p) = f.params_mut() {
            p.set_output_bias(b);
            p.scale_output_weights(0.1);
        }
    }
}

fn scalar_layout(rng: &mut ChaCha8Rng) -> (SubdomainLayout, Vec<Vec<f64>>) {
    let initial = InitialData::new(
        vec![-1.0, 0.0, 1.0, 2.0],
        vec![
            Profile::Const(vec![1.0]),
            Profile::Const(vec![0.5]),
            Profile::Const(vec![-2.0]),
        ],
    );
    let p = ProblemSpec::new(FluxModel::Burgers, initial, 0.5);
    let layout = SubdomainLayout::build(&p, &[4], &[4], rng).unwrap();
    (layout, vec![vec![0.0]; 3])
}

fn quadratic_layout(rng: &mut ChaCha8Rng) -> (SubdomainLayout, Vec<Vec<f64>>) {
    let initial = InitialData::new(
        vec![-4.0, 0.0, 1.0],
        vec![
            Profile::Tanh {
                amp: -0.25,
                shift: 0.75,
                slope: 20.0,
                center: -2.0,
            },
            Profile::Const(vec![1.5]),
        ],
    );
    let p = ProblemSpec::new(FluxModel::Quadratic, initial, 0.75);
    let layout = SubdomainLayout::build(&p, &[4], &[4], rng).unwrap();
    (layout, vec![vec![0.0]; 2])
}

fn shallow_water_layout(rng: &mut ChaCha8Rng) -> (SubdomainLayout, Vec<Vec<f64>>) {
    let sw = FluxModel::ShallowWater { g: 1.0 };
    let initial = InitialData::new(
        vec![-0.1, 0.0, 0.1],
        vec![
            Profile::Const(vec![3.0, 5.0]),
            Profile::Const(vec![3.0, -5.0]),
        ],
    );
    let p = ProblemSpec::new(sw.clone(), initial, 0.0025);
    let d = exact_riemann_oracle(&sw, &[3.0, 5.0], &[3.0, -5.0]).unwrap();
    let (_, layout) = handoff(&d, &p, 0, &[4], &[4], rng).unwrap();
    (layout, d.states.clone())
}

fn euler_layout(rng: &mut ChaCha8Rng) -> (SubdomainLayout, Vec<Vec<f64>>) {
    let g = 1.4;
    let eu = FluxModel::Euler { gamma: g };
    let ul = euler_conservative(g, 1.0, 0.0, 1.0);
    let ur = euler_conservative(g, 0.125, 0.0, 0.1);
    let initial = InitialData::new(
        vec![0.0, 0.5, 1.0],
        vec![Profile::Const(ul.clone()), Profile::Const(ur.clone())],
    );
    let p = ProblemSpec::new(eu.clone(), initial, 0.2);
    let d = exact_riemann_oracle(&eu, &ul, &ur).unwrap();
    let (_, layout) = handoff(&d, &p, 0, &[4], &[4], rng).unwrap();
    (layout, d.states.clone())
}

type Builder = fn(&mut ChaCha8Rng) -> (SubdomainLayout, Vec<Vec<f64>>);

fn check_global(build: Builder, terms: &[&str], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut layout, biases) = build(&mut rng);
    let samples = SampleSet::draw(COUNTS, layout.final_time(), seed).unwrap();
    for term in terms {
        let cfg = only(term);
        let mut worst: f64 = 0.0;
        for _ in 0..DRAWS {
            redraw(&mut layout, &biases, &mut rng);
            worst = worst.max(global_gradient_error(&layout, &cfg, &samples, STEP).unwrap());
        }
        assert!(worst <= LIMIT, "{term}: relative error {worst:e}");
    }
}

fn check_local(build: Builder, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut layout, biases) = build(&mut rng);
    let samples = SampleSet::draw(COUNTS, layout.final_time(), seed).unwrap();
    for term in ["residual", "rh", "ic", "interface"] {
        let cfg = only(term);
        let mut worst: f64 = 0.0;
        for _ in 0..DRAWS {
            redraw(&mut layout, &biases, &mut rng);
            let mut ddm = DdmLayout::split(&layout);
            let n = ddm.pieces.len();
            for piece in &mut ddm.pieces[1..] {
                if let Some(p) = piece.left.params_mut() {
                    let flat: Vec<f64> = (0..p.len()).map(|_| rng.gen_range(-0.5..0.5)).collect();
                    p.assign_flat(&flat).unwrap();
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
                        .unwrap();
                worst = worst.max(e);
            }
        }
        assert!(worst <= LIMIT, "local {term}: relative error {worst:e}");
    }
}

#[test]
fn burgers_global_terms() {
    check_global(scalar_layout, &["residual", "rh", "ic"], 1);
}

#[test]
fn quadratic_global_terms() {
    check_global(quadratic_layout, &["residual", "rh", "ic"], 2);
}

#[test]
fn shallow_water_cone_terms() {
    check_global(shallow_water_layout, &["residual", "rh", "ic"], 3);
}

#[test]
fn euler_cone_terms() {
    check_global(euler_layout, &["residual", "rh", "ic"], 4);
}

#[test]
fn local_terms_scalar() {
    check_local(scalar_layout, 5);
}

#[test]
fn local_terms_shallow_water() {
    check_local(shallow_water_layout, 6);
}
