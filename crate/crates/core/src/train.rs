//! Plain gradient-descent drivers: global training of a whole layout and
//! Schwarz-style domain decomposition with doubled interface lines.

use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradVector, Mat, MlpParams, PinnedLine};
use crate::error::{NdnnError, Result};
use crate::geometry::{
    DiscontinuityLine, FieldAdapter, InputScaling, LineShape, ReferenceDomain, SubdomainLayout,
    TRAJECTORY_POINTS,
};
use crate::loss::{
    global_loss_gradient, local_loss, local_loss_gradient, LayoutGradient, LocalGradient,
    LocalView, LossBreakdown, LossConfig, SampleCounts, SampleSet,
};
use crate::problem::ProblemSpec;

/// Time-grid size of the final ordering check.
pub const ORDER_CHECK_POINTS: usize = 1000;

/// Halvings of the learning rate tolerated before giving up.
const MAX_HALVINGS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop once the summed L2(0,T) movement of all lines between two
    /// consecutive iterates falls below this.
    pub line_tolerance: f64,
    /// Epoch cadence of the movement check.
    pub check_every: usize,
    /// Domain-decomposition stop threshold on the summed interface gap.
    pub ddm_tolerance: f64,
    /// Gradient steps per subdomain per sweep.
    pub inner_epochs: usize,
    pub max_sweeps: usize,
    /// Sweep subdomains concurrently against the previous sweep's
    /// snapshot; otherwise sweep left to right using fresh neighbors.
    pub parallel_sweeps: bool,
    pub halve_on_divergence: bool,
    pub loss: LossConfig,
    pub samples: SampleCounts,
    pub seed: u64,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            learning_rate: 2e-3,
            max_epochs: 10_000,
            line_tolerance: 1e-8,
            check_every: 100,
            ddm_tolerance: 1e-5,
            inner_epochs: 1_000,
            max_sweeps: 50,
            parallel_sweeps: true,
            halve_on_divergence: true,
            loss: LossConfig::default(),
            samples: SampleCounts::from_points(500),
            seed: 0,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainRun {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NdnnError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.line_tolerance > 0.0 && self.ddm_tolerance > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.check_every == 0 {
            return bad("check_every must be at least 1".into());
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be at least 1".into());
        }
        self.loss.weights.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LinesSettled,
    EpochBudget,
    Converged,
    SweepBudget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Loss at the parameters each step starts from, then at the final
    /// parameters.
    pub records: Vec<EpochRecord>,
    /// `(epoch, movement)` at every check.
    pub line_moves: Vec<(usize, f64)>,
    pub stop: StopReason,
    /// First crossing found on the final ordering check.
    pub ordering_violation: Option<(usize, usize, f64)>,
}

impl TrainHistory {
    pub fn initial_loss(&self) -> f64 {
        self.records
            .first()
            .map(|r| r.loss.total)
            .unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.records
            .last()
            .map(|r| r.loss.total)
            .unwrap_or(f64::NAN)
    }

    /// CSV rows `epoch, total, residual, rh, ic, interface`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_loss_csv(&self.records, out)
    }
}

pub fn write_loss_csv<W: std::io::Write>(records: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "total", "residual", "rh", "ic", "interface"])?;
    for r in records {
        let l = r.loss;
        w.write_record([
            r.epoch.to_string(),
            format!("{:.10e}", l.total),
            format!("{:.10e}", l.residual),
            format!("{:.10e}", l.rh),
            format!("{:.10e}", l.ic),
            format!("{:.10e}", l.interface),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// State a descent loop can differentiate and update.
trait Descent: Clone {
    type Grad;
    fn loss_grad(&self, samples: &SampleSet) -> Result<(LossBreakdown, Self::Grad)>;
    fn apply(&mut self, grad: &Self::Grad, rate: f64);
    /// Positions of the trainable lines on `t`.
    fn line_positions(&self, t: &Mat) -> Vec<Vec<f64>>;
}

fn positions(line: &DiscontinuityLine, t: &Mat) -> Vec<f64> {
    t.iter().map(|&s| line.position(s)).collect()
}

/// `sqrt(T mean(gap^2))`, the L2(0,T) norm on a uniform-in-time sample.
fn l2_time(a: &[f64], b: &[f64], final_time: f64) -> f64 {
    let mean = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64;
    (final_time * mean).sqrt()
}

fn descend_grad(p: Option<&mut MlpParams>, g: &Option<GradVector>, rate: f64) {
    if let (Some(p), Some(g)) = (p, g) {
        p.descend(g, rate);
    }
}

fn apply_layout(layout: &mut SubdomainLayout, grad: &LayoutGradient, rate: f64) {
    for (f, g) in layout.fields.iter_mut().zip(&grad.fields) {
        descend_grad(f.params_mut(), g, rate);
    }
    for (l, g) in layout.lines.iter_mut().zip(&grad.lines) {
        descend_grad(l.params_mut(), g, rate);
    }
}

/// A layout paired with its loss configuration.
#[derive(Clone)]
struct GlobalTask {
    layout: SubdomainLayout,
    cfg: LossConfig,
}

impl Descent for GlobalTask {
    type Grad = LayoutGradient;

    fn loss_grad(&self, samples: &SampleSet) -> Result<(LossBreakdown, LayoutGradient)> {
        global_loss_gradient(&self.layout, &self.cfg, samples)
    }

    fn apply(&mut self, grad: &LayoutGradient, rate: f64) {
        apply_layout(&mut self.layout, grad, rate);
    }

    fn line_positions(&self, t: &Mat) -> Vec<Vec<f64>> {
        let lines = self.layout.lines.iter().filter(|l| l.params().is_some());
        lines.map(|l| positions(l, t)).collect()
    }
}

struct LoopSpec<'a> {
    start_epoch: usize,
    epochs: usize,
    rate: f64,
    movement_stop: bool,
    run: &'a TrainRun,
    final_time: f64,
    subdomain: Option<usize>,
}

struct LoopResult {
    rate: f64,
    stop: StopReason,
}

/// Runs plain gradient descent with optional learning-rate halving.
/// `checkpoint` is called after every completed epoch.
fn descend_loop<S: Descent>(
    state: &mut S,
    samples: &SampleSet,
    spec: LoopSpec<'_>,
    records: &mut Vec<EpochRecord>,
    moves: &mut Vec<(usize, f64)>,
    mut checkpoint: impl FnMut(usize, f64, &S, &[EpochRecord], &[(usize, f64)]) -> Result<()>,
) -> Result<LoopResult> {
    let mut rate = spec.rate;
    let mut halvings = 0;
    // Lowest-loss iterate so far and its epoch; a blow-up can stay finite
    // for several epochs before it overflows.
    let mut best: Option<(S, usize, f64)> = None;
    let check_lines = spec.movement_stop && !state.line_positions(&samples.time_t).is_empty();
    let end = spec.start_epoch + spec.epochs;
    let mut epoch = spec.start_epoch;
    let tag = |mut e: NdnnError, epoch: usize| {
        if let NdnnError::Divergence {
            epoch: ref mut ep,
            ref mut subdomain,
            ..
        } = e
        {
            *ep = epoch;
            if subdomain.is_none() {
                *subdomain = spec.subdomain;
            }
        }
        e
    };
    while epoch < end {
        let (loss, grad) = match state.loss_grad(samples) {
            Ok(v) => v,
            Err(e @ NdnnError::Divergence { .. })
                if spec.run.halve_on_divergence && halvings < MAX_HALVINGS =>
            {
                let Some((good, at, _)) = &best else {
                    return Err(tag(e, epoch));
                };
                halvings += 1;
                rate *= 0.5;
                warn!("{}; halving learning rate to {rate:e}", tag(e, epoch));
                *state = good.clone();
                epoch = *at;
                records.truncate(
                    records
                        .iter()
                        .rposition(|r| r.epoch < epoch)
                        .map_or(0, |i| i + 1),
                );
                moves.retain(|&(m, _)| m <= epoch);
                continue;
            }
            Err(e) => return Err(tag(e, epoch)),
        };
        records.push(EpochRecord {
            epoch,
            learning_rate: rate,
            loss,
        });
        if best.as_ref().is_none_or(|b| loss.total <= b.2) {
            best = Some((state.clone(), epoch, loss.total));
        }
        let check = check_lines && (epoch + 1) % spec.run.check_every == 0;
        let before = if check {
            state.line_positions(&samples.time_t)
        } else {
            Vec::new()
        };
        state.apply(&grad, rate);
        epoch += 1;
        if check {
            let after = state.line_positions(&samples.time_t);
            let movement: f64 = before
                .iter()
                .zip(&after)
                .map(|(a, b)| l2_time(a, b, spec.final_time))
                .sum();
            moves.push((epoch, movement));
            debug!(
                "epoch {epoch}: loss {:.3e}, line movement {movement:.3e}",
                loss.total
            );
            if movement < spec.run.line_tolerance {
                checkpoint(epoch, rate, state, records, moves)?;
                return Ok(LoopResult {
                    rate,
                    stop: StopReason::LinesSettled,
                });
            }
        }
        checkpoint(epoch, rate, state, records, moves)?;
    }
    Ok(LoopResult {
        rate,
        stop: StopReason::EpochBudget,
    })
}

/// Parameters and history at an epoch boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub learning_rate: f64,
    pub fields: Vec<Option<MlpParams>>,
    pub lines: Vec<Option<MlpParams>>,
    pub records: Vec<EpochRecord>,
    pub line_moves: Vec<(usize, f64)>,
}

impl Checkpoint {
    pub fn capture(
        layout: &SubdomainLayout,
        epoch: usize,
        learning_rate: f64,
        records: &[EpochRecord],
    ) -> Self {
        Checkpoint {
            epoch,
            learning_rate,
            fields: layout.fields.iter().map(|f| f.params().cloned()).collect(),
            lines: layout.lines.iter().map(|l| l.params().cloned()).collect(),
            records: records.to_vec(),
            line_moves: Vec::new(),
        }
    }

    /// Writes the parameters back into a layout of the same shape.
    pub fn restore(&self, layout: &mut SubdomainLayout) -> Result<()> {
        if self.fields.len() != layout.fields.len() || self.lines.len() != layout.lines.len() {
            return Err(NdnnError::Structural(
                "checkpoint does not match the layout".into(),
            ));
        }
        for (f, p) in layout.fields.iter_mut().zip(&self.fields) {
            if let (Some(dst), Some(src)) = (f.params_mut(), p) {
                *dst = src.clone();
            }
        }
        for (l, p) in layout.lines.iter_mut().zip(&self.lines) {
            if let (Some(dst), Some(src)) = (l.params_mut(), p) {
                *dst = src.clone();
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// File name of the latest checkpoint in a checkpoint directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub layout: SubdomainLayout,
    pub history: TrainHistory,
}

/// Global gradient descent on the whole layout until lines settle or the
/// epoch budget runs out.
pub fn gd_train(layout: SubdomainLayout, run: &TrainRun) -> Result<TrainOutcome> {
    gd_train_from(layout, run, None)
}

/// Continues a run from a checkpoint taken with the same configuration.
pub fn gd_train_resume(
    mut layout: SubdomainLayout,
    run: &TrainRun,
    checkpoint: &Checkpoint,
) -> Result<TrainOutcome> {
    checkpoint.restore(&mut layout)?;
    gd_train_from(layout, run, Some(checkpoint))
}

fn gd_train_from(
    layout: SubdomainLayout,
    run: &TrainRun,
    from: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    run.validate()?;
    let final_time = layout.final_time();
    let samples = SampleSet::draw(run.samples, final_time, run.seed)?;
    let (start, rate, mut records, mut moves) = match from {
        Some(c) => (
            c.epoch,
            c.learning_rate,
            c.records.clone(),
            c.line_moves.clone(),
        ),
        None => (0, run.learning_rate, Vec::new(), Vec::new()),
    };
    let mut task = GlobalTask {
        layout,
        cfg: run.loss,
    };
    let spec = LoopSpec {
        start_epoch: start,
        epochs: run.max_epochs.saturating_sub(start),
        rate,
        movement_stop: true,
        run,
        final_time,
        subdomain: None,
    };
    let result = descend_loop(
        &mut task,
        &samples,
        spec,
        &mut records,
        &mut moves,
        |epoch, rate, state, recs, mv| {
            if let (Some(k), Some(dir)) = (run.checkpoint_every, &run.checkpoint_dir) {
                if epoch % k == 0 {
                    let mut c = Checkpoint::capture(&state.layout, epoch, rate, recs);
                    c.line_moves = mv.to_vec();
                    c.save(&dir.join(CHECKPOINT_FILE))?;
                }
            }
            Ok(())
        },
    )?;
    let (final_loss, _) = task.loss_grad(&samples).map_err(|e| match e {
        NdnnError::Divergence {
            term, subdomain, ..
        } => NdnnError::Divergence {
            epoch: run.max_epochs,
            term,
            subdomain,
        },
        other => other,
    })?;
    let last_epoch = records.last().map_or(start, |r| r.epoch + 1);
    records.push(EpochRecord {
        epoch: last_epoch,
        learning_rate: result.rate,
        loss: final_loss,
    });
    let layout = task.layout;
    let ordering_violation = ordering_check(&layout);
    if let Some((l, r, t)) = ordering_violation {
        warn!("lines {l} and {r} cross at t = {t}");
    }
    info!(
        "trained {} epochs: loss {:.3e} -> {:.3e} ({:?})",
        last_epoch, records[0].loss.total, final_loss.total, result.stop
    );
    Ok(TrainOutcome {
        layout,
        history: TrainHistory {
            records,
            line_moves: moves,
            stop: result.stop,
            ordering_violation,
        },
    })
}

/// First crossing of interior lines on a uniform time grid, if any.
pub fn ordering_check(layout: &SubdomainLayout) -> Option<(usize, usize, f64)> {
    let t_end = layout.final_time();
    (0..ORDER_CHECK_POINTS).find_map(|j| {
        let t = t_end * j as f64 / (ORDER_CHECK_POINTS - 1) as f64;
        match layout.check_order(t) {
            Err(NdnnError::Ordering { left, right, t }) => Some((left, right, t)),
            _ => None,
        }
    })
}

/// One subdomain of a decomposition with its own copies of both lines.
#[derive(Clone, Debug)]
pub struct LocalPiece {
    pub field: FieldAdapter,
    pub left: DiscontinuityLine,
    pub right: DiscontinuityLine,
    pub kind: ReferenceDomain,
}

/// Subdomains with doubled interface lines.
#[derive(Clone, Debug)]
pub struct DdmLayout {
    pub problem: ProblemSpec,
    pub scaling: InputScaling,
    pub pieces: Vec<LocalPiece>,
}

impl DdmLayout {
    /// Copies each interior line into both adjacent subdomains.
    pub fn split(layout: &SubdomainLayout) -> Self {
        let pieces = (0..layout.subdomain_count())
            .map(|s| LocalPiece {
                field: layout.fields[s].clone(),
                left: layout.lines[s].clone(),
                right: layout.lines[s + 1].clone(),
                kind: layout.kind(s),
            })
            .collect();
        DdmLayout {
            problem: layout.problem.clone(),
            scaling: layout.scaling,
            pieces,
        }
    }

    /// Fresh networks where the two copies of every interior line are
    /// initialized independently.
    pub fn build<R: Rng + ?Sized>(
        problem: &ProblemSpec,
        field_hidden: &[usize],
        line_hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let base = SubdomainLayout::build(problem, field_hidden, line_hidden, rng)?;
        let mut ddm = Self::split(&base);
        for s in 1..ddm.pieces.len() {
            let copy = &mut ddm.pieces[s].left;
            if let LineShape::Network(l) = &copy.shape {
                let fresh = MlpParams::init(l.params.architecture(), rng)?;
                copy.shape = LineShape::Network(PinnedLine::new(fresh, l.anchor, l.time_scale)?);
            }
        }
        Ok(ddm)
    }

    pub fn interface_count(&self) -> usize {
        self.pieces.len().saturating_sub(1)
    }

    /// `sum_i ||n_i^l - n_{i-1}^r||` in L2(0,T) on a time sample.
    pub fn mismatch(&self, t: &Mat) -> f64 {
        let big_t = self.problem.final_time;
        self.pieces
            .windows(2)
            .map(|w| l2_time(&positions(&w[1].left, t), &positions(&w[0].right, t), big_t))
            .sum()
    }

    /// Single-line layout from consensus lines; refuses when some
    /// interface is above `tolerance` unless `force` is set.
    pub fn merged(&self, tolerance: f64, force: bool) -> Result<SubdomainLayout> {
        let mut lines = vec![self.pieces[0].left.clone()];
        for w in self.pieces.windows(2) {
            match consensus_line(&w[0].right, &w[1].left, self.problem.final_time, tolerance) {
                Consensus::Merged(l) => lines.push(l),
                Consensus::Refused { gap, left, right } => {
                    if !force {
                        return Err(NdnnError::Structural(format!(
                            "interface gap {gap:e} above tolerance {tolerance:e}"
                        )));
                    }
                    lines.push(average_line(&left, &right));
                }
            }
        }
        lines.push(self.pieces.last().unwrap().right.clone());
        let fields = self.pieces.iter().map(|p| p.field.clone()).collect();
        let mut layout = SubdomainLayout::from_parts(&self.problem, lines, fields)?;
        layout.scaling = self.scaling;
        Ok(layout)
    }
}

/// Outcome of merging the two copies of an interface line.
#[derive(Clone, Debug)]
pub enum Consensus {
    Merged(DiscontinuityLine),
    Refused {
        gap: f64,
        left: DiscontinuityLine,
        right: DiscontinuityLine,
    },
}

fn average_line(a: &DiscontinuityLine, b: &DiscontinuityLine) -> DiscontinuityLine {
    let (a2, b2) = (a.clone(), b.clone());
    let mut line = DiscontinuityLine::analytic(
        move |t| {
            let (p, dp) = a2.eval(t);
            let (q, dq) = b2.eval(t);
            (0.5 * (p + q), 0.5 * (dp + dq))
        },
        a.role,
        a.breakpoint.unwrap_or(0),
    );
    line.breakpoint = a.breakpoint;
    line
}

/// Pointwise average of the two copies of an interface line, provided
/// their L2(0,T) gap on the export grid is below `tolerance`.
pub fn consensus_line(
    n_left: &DiscontinuityLine,
    n_right: &DiscontinuityLine,
    final_time: f64,
    tolerance: f64,
) -> Consensus {
    let grid = Mat::from_shape_fn((1, TRAJECTORY_POINTS), |(_, j)| {
        final_time * j as f64 / (TRAJECTORY_POINTS - 1) as f64
    });
    let gap = l2_time(
        &positions(n_left, &grid),
        &positions(n_right, &grid),
        final_time,
    );
    if gap >= tolerance {
        return Consensus::Refused {
            gap,
            left: n_left.clone(),
            right: n_right.clone(),
        };
    }
    match (&n_left.shape, &n_right.shape) {
        (LineShape::Frozen(a), LineShape::Frozen(b)) if a == b => Consensus::Merged(n_left.clone()),
        _ => Consensus::Merged(average_line(n_left, n_right)),
    }
}

/// Per-sweep record of a decomposition run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    /// Interface mismatch after the sweep.
    pub mismatch: f64,
    /// Local loss of each subdomain at the start of the sweep.
    pub start_losses: Vec<LossBreakdown>,
    /// Local loss of each subdomain after its inner descent.
    pub end_losses: Vec<LossBreakdown>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdmHistory {
    pub entry_mismatch: f64,
    pub sweeps: Vec<SweepRecord>,
    /// Inner-loop records per subdomain, concatenated over sweeps.
    pub inner: Vec<Vec<EpochRecord>>,
    pub stop: StopReason,
}

#[derive(Clone, Debug)]
pub struct DdmOutcome {
    pub layout: DdmLayout,
    pub history: DdmHistory,
}

/// A subdomain paired with frozen neighbor snapshots.
#[derive(Clone)]
struct LocalTask<'a> {
    piece: LocalPiece,
    index: usize,
    problem: &'a ProblemSpec,
    scaling: InputScaling,
    cfg: LossConfig,
    left: Option<(&'a FieldAdapter, &'a DiscontinuityLine)>,
    right: Option<(&'a FieldAdapter, &'a DiscontinuityLine)>,
}

impl LocalTask<'_> {
    fn view(&self) -> LocalView<'_> {
        LocalView {
            index: self.index,
            field: &self.piece.field,
            left: &self.piece.left,
            right: &self.piece.right,
            kind: self.piece.kind,
            left_neighbor: self.left,
            right_neighbor: self.right,
        }
    }
}

impl Descent for LocalTask<'_> {
    type Grad = LocalGradient;

    fn loss_grad(&self, samples: &SampleSet) -> Result<(LossBreakdown, LocalGradient)> {
        local_loss_gradient(
            self.problem,
            &self.scaling,
            &self.view(),
            &self.cfg,
            samples,
        )
    }

    fn apply(&mut self, g: &LocalGradient, rate: f64) {
        descend_grad(self.piece.field.params_mut(), &g.field, rate);
        descend_grad(self.piece.left.params_mut(), &g.left, rate);
        descend_grad(self.piece.right.params_mut(), &g.right, rate);
    }

    fn line_positions(&self, t: &Mat) -> Vec<Vec<f64>> {
        [&self.piece.left, &self.piece.right]
            .into_iter()
            .filter(|l| l.params().is_some())
            .map(|l| positions(l, t))
            .collect()
    }
}

fn neighbors(pieces: &[LocalPiece], i: usize) -> [Option<(&FieldAdapter, &DiscontinuityLine)>; 2] {
    let left = (i > 0).then(|| (&pieces[i - 1].field, &pieces[i - 1].right));
    let right = (i + 1 < pieces.len()).then(|| (&pieces[i + 1].field, &pieces[i + 1].left));
    [left, right]
}

/// Schwarz iteration: every subdomain minimizes its local loss for
/// `inner_epochs` steps against neighbor snapshots, until the summed
/// interface gap drops below `ddm_tolerance`.
pub fn ddm_train(mut ddm: DdmLayout, run: &TrainRun) -> Result<DdmOutcome> {
    run.validate()?;
    let final_time = ddm.problem.final_time;
    let samples = SampleSet::draw(run.samples, final_time, run.seed)?;
    let n = ddm.pieces.len();
    let entry_mismatch = ddm.mismatch(&samples.time_t);
    let mut history = DdmHistory {
        entry_mismatch,
        sweeps: Vec::new(),
        inner: vec![Vec::new(); n],
        stop: StopReason::SweepBudget,
    };
    if ddm.interface_count() > 0 && entry_mismatch < run.ddm_tolerance {
        history.stop = StopReason::Converged;
        return Ok(DdmOutcome {
            layout: ddm,
            history,
        });
    }
    let mut rates = vec![run.learning_rate; n];
    for sweep in 0..run.max_sweeps {
        let epoch0 = sweep * run.inner_epochs;
        let solve = |i: usize,
                     pieces: &[LocalPiece],
                     rate: f64|
         -> Result<(
            LocalPiece,
            Vec<EpochRecord>,
            f64,
            LossBreakdown,
            LossBreakdown,
        )> {
            let [left, right] = neighbors(pieces, i);
            let mut task = LocalTask {
                piece: pieces[i].clone(),
                index: i,
                problem: &ddm.problem,
                scaling: ddm.scaling,
                cfg: run.loss,
                left,
                right,
            };
            let mut records = Vec::new();
            let mut moves = Vec::new();
            let spec = LoopSpec {
                start_epoch: epoch0,
                epochs: run.inner_epochs,
                rate,
                movement_stop: false,
                run,
                final_time,
                subdomain: Some(i),
            };
            let res = descend_loop(
                &mut task,
                &samples,
                spec,
                &mut records,
                &mut moves,
                |_, _, _, _, _| Ok(()),
            )?;
            let end = local_loss(
                &ddm.problem,
                &ddm.scaling,
                &task.view(),
                &run.loss,
                &samples,
            )?;
            let start = records.first().map(|r| r.loss).unwrap_or(end);
            records.push(EpochRecord {
                epoch: epoch0 + run.inner_epochs,
                learning_rate: res.rate,
                loss: end,
            });
            Ok((task.piece, records, res.rate, start, end))
        };
        let results: Vec<_> = if run.parallel_sweeps {
            let snapshot = ddm.pieces.clone();
            let out: Result<Vec<_>> = (0..n)
                .into_par_iter()
                .map(|i| solve(i, &snapshot, rates[i]))
                .collect();
            out?
        } else {
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let r = solve(i, &ddm.pieces, rates[i])?;
                ddm.pieces[i] = r.0.clone();
                out.push(r);
            }
            out
        };
        let mut start_losses = Vec::with_capacity(n);
        let mut end_losses = Vec::with_capacity(n);
        for (i, (piece, mut records, rate, start, end)) in results.into_iter().enumerate() {
            ddm.pieces[i] = piece;
            rates[i] = rate;
            // A repeated boundary epoch marks the sweep's final evaluation.
            history.inner[i].append(&mut records);
            start_losses.push(start);
            end_losses.push(end);
        }
        let mismatch = ddm.mismatch(&samples.time_t);
        info!(
            "sweep {sweep}: interface mismatch {mismatch:.3e}, local losses {:?}",
            end_losses.iter().map(|l| l.total).collect::<Vec<_>>()
        );
        history.sweeps.push(SweepRecord {
            sweep,
            mismatch,
            start_losses,
            end_losses,
        });
        if ddm.interface_count() == 0 || mismatch < run.ddm_tolerance {
            history.stop = StopReason::Converged;
            break;
        }
    }
    Ok(DdmOutcome {
        layout: ddm,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::loss_gradient;
    use crate::geometry::LineRole;
    use crate::problem::{FluxModel, InitialData, Profile};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp2() -> ProblemSpec {
        let data = InitialData::new(
            vec![-1.0, 0.0, 1.0, 2.0],
            vec![
                Profile::Const(vec![1.0]),
                Profile::Const(vec![0.5]),
                Profile::Const(vec![-2.0]),
            ],
        );
        ProblemSpec::new(FluxModel::Burgers, data, 0.5)
    }

    fn small_run() -> TrainRun {
        TrainRun {
            max_epochs: 40,
            inner_epochs: 40,
            max_sweeps: 2,
            samples: SampleCounts::from_points(100),
            learning_rate: 1e-2,
            ..TrainRun::default()
        }
    }

    #[test]
    fn zero_epochs_leaves_layout_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lay = SubdomainLayout::build(&exp2(), &[5], &[5], &mut rng).unwrap();
        let run = TrainRun {
            max_epochs: 0,
            ..small_run()
        };
        let out = gd_train(lay.clone(), &run).unwrap();
        for (a, b) in out.layout.fields.iter().zip(&lay.fields) {
            assert_eq!(a.params(), b.params());
        }
        for (a, b) in out.layout.lines.iter().zip(&lay.lines) {
            assert_eq!(a.params(), b.params());
        }
        assert_eq!(out.history.records.len(), 1);
    }

    #[test]
    fn quadratic_toy_contracts_by_point_nine() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = MlpParams::init(&[2, 3, 1], &mut rng).unwrap();
        for _ in 0..5 {
            let before = p.to_flat();
            let (_, g) = loss_gradient(&[&p], |tape, nets| {
                let half_sq = nets[0].parameters().map(|v| v.square().sum() * 0.5);
                Ok(half_sq.fold(tape.scalar(0.0), |a, b| a + b))
            })
            .unwrap();
            p.descend(&g[0], 0.1);
            for (a, b) in p.to_flat().iter().zip(&before) {
                assert!((a - 0.9 * b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = small_run();
        let make = || {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            SubdomainLayout::build(&exp2(), &[5], &[5], &mut rng).unwrap()
        };
        let a = gd_train(make(), &run).unwrap();
        let b = gd_train(make(), &run).unwrap();
        assert_eq!(a.history, b.history);
        assert!(a.history.final_loss() < a.history.initial_loss());
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let make = || {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            SubdomainLayout::build(&exp2(), &[5], &[5], &mut rng).unwrap()
        };
        let full = gd_train(make(), &small_run()).unwrap();
        let first = TrainRun {
            max_epochs: 20,
            checkpoint_every: Some(10),
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..small_run()
        };
        gd_train(make(), &first).unwrap();
        let ckpt = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(ckpt.epoch, 20);
        let resumed = gd_train_resume(make(), &small_run(), &ckpt).unwrap();
        assert_eq!(resumed.history.records, full.history.records);
        for (a, b) in resumed.layout.fields.iter().zip(&full.layout.fields) {
            assert_eq!(a.params(), b.params());
        }
    }

    #[test]
    fn single_subdomain_ddm_equals_gd() {
        let data = InitialData::new(
            vec![-1.0, 2.0],
            vec![Profile::Tanh {
                amp: -0.5,
                shift: 0.5,
                slope: 1.0,
                center: 0.0,
            }],
        );
        let p = ProblemSpec::new(FluxModel::Burgers, data, 0.5);
        let make = || {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            SubdomainLayout::build(&p, &[5], &[5], &mut rng).unwrap()
        };
        let run = TrainRun {
            max_sweeps: 5,
            ..small_run()
        };
        let gd = gd_train(make(), &run).unwrap();
        let dd = ddm_train(DdmLayout::split(&make()), &run).unwrap();
        assert_eq!(dd.history.sweeps.len(), 1);
        assert_eq!(dd.history.inner[0], gd.history.records);
        assert_eq!(
            dd.layout.pieces[0].field.params(),
            gd.layout.fields[0].params()
        );
    }

    fn straight(x0: f64, c: f64, bp: usize) -> DiscontinuityLine {
        DiscontinuityLine::analytic(move |t| (x0 + c * t, c), LineRole::Physical, bp)
    }

    #[test]
    fn exact_two_subdomains_need_no_sweep() {
        let data = InitialData::new(
            vec![-1.0, 0.0, 1.0],
            vec![Profile::Const(vec![1.0]), Profile::Const(vec![-1.0])],
        );
        let p = ProblemSpec::new(FluxModel::Burgers, data, 0.5);
        let lay = SubdomainLayout::from_parts(
            &p,
            vec![
                DiscontinuityLine::boundary(-1.0),
                straight(0.0, 0.0, 0),
                DiscontinuityLine::boundary(1.0),
            ],
            vec![
                FieldAdapter::constant(vec![1.0]),
                FieldAdapter::constant(vec![-1.0]),
            ],
        )
        .unwrap();
        let out = ddm_train(DdmLayout::split(&lay), &small_run()).unwrap();
        assert!(out.history.sweeps.is_empty());
        assert_eq!(out.history.stop, StopReason::Converged);
    }

    #[test]
    fn gauss_seidel_and_jacobi_both_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ddm = DdmLayout::build(&exp2(), &[4], &[4], &mut rng).unwrap();
        assert!(ddm.mismatch(&Mat::from_elem((1, 3), 0.3)) > 0.0);
        for parallel in [true, false] {
            let run = TrainRun {
                parallel_sweeps: parallel,
                ..small_run()
            };
            let out = ddm_train(ddm.clone(), &run).unwrap();
            assert_eq!(out.history.sweeps.len(), 2);
            assert!(out.history.sweeps[1].mismatch.is_finite());
        }
    }

    #[test]
    fn consensus_examples() {
        let l = straight(0.3, 0.7, 0);
        match consensus_line(&l, &l.clone(), 1.0, 1e-5) {
            Consensus::Merged(m) => assert_eq!(m.position(0.6), l.position(0.6)),
            other => panic!("{other:?}"),
        }
        let (p, m) = (straight(0.3, 1e-7, 0), straight(0.3, -1e-7, 0));
        match consensus_line(&p, &m, 1.0, 1e-5) {
            Consensus::Merged(c) => assert!((c.position(0.8) - 0.3).abs() < 1e-16),
            other => panic!("{other:?}"),
        }
        let b = DiscontinuityLine::boundary(2.0);
        match consensus_line(&b, &b.clone(), 1.0, 1e-5) {
            Consensus::Merged(c) => assert!(c.is_frozen() && c.position(0.5) == 2.0),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            consensus_line(&straight(0.0, 1.0, 0), &straight(0.0, -1.0, 0), 1.0, 1e-5),
            Consensus::Refused { .. }
        ));
    }
}
