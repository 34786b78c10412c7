//! Teacher pretraining, student distillation and the ablation sweep.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::ad::{Graph, Tensor, Var};
use crate::data::{Dataset, Sample};
use crate::hand::HandRig;
use crate::losses::{total_loss, FeatureMap, GtWeights, KdConfig, KdMode, Prediction, Projection, TeacherView};
use crate::metrics::{bench, evaluate, output_gap, Clock, MetricsReport, DEFAULT_THRESHOLDS};
use crate::nets::{init_model, Model, NetConfig, StudentSize};
use crate::rng::{rng_for, stream};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments, one tensor per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Registers a model with the optimizer. Frozen models are refused.
    pub fn for_model(model: &Model) -> Result<Self, Error> {
        if model.is_frozen() {
            return Err(Error::Frozen);
        }
        Ok(Self::new(model.params()))
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, hyper: &AdamConfig) -> Result<(), Error> {
    let ok = params.len() == grads.len()
        && params.len() == state.m.len()
        && params.len() == state.v.len()
        && params
            .iter()
            .zip(grads)
            .zip(state.m.iter().zip(&state.v))
            .all(|((p, g), (m, v))| p.shape() == g.shape() && p.shape() == m.shape() && p.shape() == v.shape());
    if !ok {
        return Err(Error::InvalidInput("parameter, gradient and moment shapes disagree".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - libm::pow(hyper.beta1, t as f64);
    let c2 = 1.0 - libm::pow(hyper.beta2, t as f64);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
            *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= hyper.lr * m_hat / (libm::sqrt(v_hat) + hyper.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Drives batch order and the projection initialization.
    pub seed: u64,
    pub kd: KdConfig,
    pub weights: GtWeights,
    /// Evaluate on the held-out split every this many epochs (0: last epoch only).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            kd: KdConfig::none(),
            weights: GtWeights::default(),
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be finite and non-negative, got {}", self.adam.lr)));
        }
        self.kd.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_gt: f64,
    pub loss_kd_out: Option<f64>,
    pub loss_kd_feat: Option<f64>,
    /// Held-out PA-MPJPE and PA-MPVPE, when evaluated this epoch.
    pub eval: Option<(f64, f64)>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

impl TrainLog {
    /// CSV with one row per epoch. Wall time is left out so equal runs
    /// produce equal bytes.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss_total,loss_gt,loss_kd_out,loss_kd_feat,eval_j_err,eval_v_err\n");
        for r in &self.records {
            let (j, v) = r.eval.map_or((None, None), |(j, v)| (Some(j), Some(v)));
            s += &format!(
                "{},{:e},{:e},{},{},{},{}\n",
                r.epoch,
                r.loss_total,
                r.loss_gt,
                opt(r.loss_kd_out),
                opt(r.loss_kd_feat),
                opt(j),
                opt(v)
            );
        }
        s
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Frozen teacher outputs for every training sample, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherCache {
    pub outputs: Vec<(Prediction, FeatureMap)>,
    pub teacher_checksum: u64,
    pub channels: usize,
}

impl TeacherCache {
    pub fn build(teacher: &Model, samples: &[Sample], rig: &HandRig) -> Result<Self, Error> {
        if !teacher.is_frozen() {
            return Err(Error::TeacherNotFrozen);
        }
        let outputs = samples
            .iter()
            .map(|s| teacher.predict(&s.image, rig, &s.camera.intrinsics))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            outputs,
            teacher_checksum: teacher.checksum(),
            channels: teacher.config().feature_shape().0,
        })
    }
}

struct Batch {
    total: f64,
    gt: f64,
    kd_out: f64,
    kd_feat: f64,
}

fn numerical(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Camera(crate::camera::CameraError::NonPositiveDepth { depth, .. }) | Error::Ad(crate::AdError::NonPositiveDepth { depth, .. })
            if depth.is_nan() =>
        {
            Error::NonFinite {
                what: "prediction",
                epoch,
                batch,
            }
        }
        Error::Camera(crate::camera::CameraError::NonPositiveDepth { .. }) | Error::Ad(crate::AdError::NonPositiveDepth { .. }) => {
            Error::NonFinite {
                what: "camera depth",
                epoch,
                batch,
            }
        }
        other => other,
    }
}

/// Optimizes `model` (and `phi`, if given) on the training split.
///
/// Each batch builds one graph holding every sample's forward pass; the
/// batch loss is the mean of per-sample totals.
pub fn fit(
    model: &mut Model,
    mut phi: Option<&mut Projection>,
    data: &Dataset,
    rig: &HandRig,
    cfg: &TrainConfig,
    teacher: Option<&TeacherCache>,
    clock: &dyn Clock,
) -> Result<TrainLog, Error> {
    cfg.validate()?;
    let mode = cfg.kd.mode;
    let train = data.train();
    if train.is_empty() {
        return Err(Error::InvalidInput("dataset has no training samples".into()));
    }
    if mode != KdMode::None {
        let t = teacher.ok_or(Error::MissingTeacherArtifact("teacher output"))?;
        if t.outputs.len() != train.len() {
            return Err(Error::InvalidInput(format!(
                "teacher cache covers {} samples but the training split has {}",
                t.outputs.len(),
                train.len()
            )));
        }
    }
    if mode.uses_feature() && phi.is_none() {
        return Err(Error::MissingTeacherArtifact("feature projection"));
    }
    // Student and projection form one parameter group.
    let mut state = AdamState::for_model(model)?;
    if let Some(p) = phi.as_deref() {
        let extra = AdamState::new(&[p.weight.clone(), p.bias.clone()]);
        state.m.extend(extra.m);
        state.v.extend(extra.v);
    }
    let mut log = TrainLog::default();
    let start = clock.seconds();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(cfg.seed, stream::SHUFFLE, epoch as u64));
        let mut sums = Batch {
            total: 0.0,
            gt: 0.0,
            kd_out: 0.0,
            kd_feat: 0.0,
        };
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (values, grads, phi_grads) =
                batch_gradients(model, phi.as_deref(), train, chunk, rig, cfg, teacher).map_err(|e| numerical(e, epoch, b))?;
            if !values.total.is_finite() {
                return Err(Error::NonFinite { what: "loss", epoch, batch: b });
            }
            if grads.iter().chain(phi_grads.iter().flatten()).any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    what: "gradient",
                    epoch,
                    batch: b,
                });
            }
            let n = chunk.len() as f64;
            sums.total += values.total * n;
            sums.gt += values.gt * n;
            sums.kd_out += values.kd_out * n;
            sums.kd_feat += values.kd_feat * n;

            let params = model.params_mut()?;
            match (phi.as_deref_mut(), phi_grads) {
                (Some(p), Some(pg)) => {
                    let mut all = params.to_vec();
                    all.push(p.weight.clone());
                    all.push(p.bias.clone());
                    let mut all_grads = grads;
                    all_grads.extend(pg);
                    adam_step(&mut all, &all_grads, &mut state, &cfg.adam)?;
                    p.bias = all.pop().expect("bias");
                    p.weight = all.pop().expect("weight");
                    params.clone_from_slice(&all);
                }
                _ => adam_step(params, &grads, &mut state, &cfg.adam)?,
            }
        }
        let n = train.len() as f64;
        let last = epoch + 1 == cfg.epochs;
        let due = cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
        let eval = if (last || due) && !data.eval().is_empty() {
            let r = evaluate(model, data.eval(), rig, &[])?;
            Some((r.j_err, r.v_err))
        } else {
            None
        };
        log.records.push(EpochRecord {
            epoch,
            loss_total: sums.total / n,
            loss_gt: sums.gt / n,
            loss_kd_out: mode.uses_output().then_some(sums.kd_out / n),
            loss_kd_feat: mode.uses_feature().then_some(sums.kd_feat / n),
            eval,
            wall_seconds: clock.seconds() - start,
        });
    }
    Ok(log)
}

type Gradients = (Batch, Vec<Tensor>, Option<Vec<Tensor>>);

fn grad_or_zero(g: &Graph, v: Var) -> Tensor {
    g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
}

fn batch_gradients(
    model: &Model,
    phi: Option<&Projection>,
    train: &[Sample],
    chunk: &[usize],
    rig: &HandRig,
    cfg: &TrainConfig,
    teacher: Option<&TeacherCache>,
) -> Result<Gradients, Error> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let phi_vars = phi.map(|p| p.bind(&mut g));
    let mut total: Option<Var> = None;
    let mut sums = Batch {
        total: 0.0,
        gt: 0.0,
        kd_out: 0.0,
        kd_feat: 0.0,
    };
    for &i in chunk {
        let s = &train[i];
        let x = g.constant(s.image.clone());
        let f = bound.forward_backbone(&mut g, x)?;
        let head = bound.forward_head(&mut g, f, rig, &s.camera.intrinsics)?;
        let view = teacher.filter(|_| cfg.kd.mode != KdMode::None).map(|t| TeacherView {
            prediction: &t.outputs[i].0,
            features: &t.outputs[i].1,
        });
        let terms = total_loss(&mut g, &head.prediction, f, view, phi_vars.as_ref(), &s.gt, &cfg.kd, &cfg.weights)?;
        sums.gt += g.value(terms.gt.total).item();
        sums.kd_out += terms.kd_out.map_or(0.0, |v| g.value(v).item());
        sums.kd_feat += terms.kd_feat.map_or(0.0, |v| g.value(v).item());
        total = Some(match total {
            None => terms.total,
            Some(acc) => g.add(acc, terms.total)?,
        });
    }
    let n = chunk.len() as f64;
    let loss = g.mul_scalar(total.expect("batches are non-empty"), 1.0 / n);
    sums.total = g.value(loss).item();
    sums.gt /= n;
    sums.kd_out /= n;
    sums.kd_feat /= n;
    if !sums.total.is_finite() {
        return Ok((sums, Vec::new(), None));
    }
    g.backward(loss)?;
    let grads = bound.vars().iter().map(|&v| grad_or_zero(&g, v)).collect();
    let phi_grads = phi_vars.map(|p| alloc::vec![grad_or_zero(&g, p.weight), grad_or_zero(&g, p.bias)]);
    Ok((sums, grads, phi_grads))
}

/// Pretrains a network on ground truth alone.
pub fn train_teacher(data: &Dataset, rig: &HandRig, net: &NetConfig, cfg: &TrainConfig, clock: &dyn Clock) -> Result<(Model, TrainLog), Error> {
    let cfg = TrainConfig {
        kd: KdConfig::none(),
        ..*cfg
    };
    let mut model = init_model(net)?;
    let log = fit(&mut model, None, data, rig, &cfg, None, clock)?;
    Ok((model, log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distilled {
    pub student: Model,
    /// Trained projection; discarded at inference.
    pub phi: Option<Projection>,
    pub log: TrainLog,
}

/// Trains a fresh student from `student_cfg` against a frozen teacher.
pub fn distill(
    teacher: &Model,
    student_cfg: &NetConfig,
    cfg: &TrainConfig,
    data: &Dataset,
    rig: &HandRig,
    clock: &dyn Clock,
) -> Result<Distilled, Error> {
    if !teacher.is_frozen() {
        return Err(Error::TeacherNotFrozen);
    }
    let cache = if cfg.kd.mode == KdMode::None {
        None
    } else {
        Some(TeacherCache::build(teacher, data.train(), rig)?)
    };
    distill_from(cache.as_ref(), init_model(student_cfg)?, cfg, data, rig, clock)
}

/// Trains a given student against cached teacher outputs.
pub fn distill_from(
    cache: Option<&TeacherCache>,
    mut student: Model,
    cfg: &TrainConfig,
    data: &Dataset,
    rig: &HandRig,
    clock: &dyn Clock,
) -> Result<Distilled, Error> {
    let mut phi = if cfg.kd.mode.uses_feature() {
        let t = cache.ok_or(Error::MissingTeacherArtifact("teacher output"))?;
        Some(Projection::init(t.channels, student.config().feature_shape().0, cfg.seed))
    } else {
        None
    };
    let log = fit(&mut student, phi.as_mut(), data, rig, cfg, cache, clock)?;
    Ok(Distilled { student, phi, log })
}

/// One sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub mode: KdMode,
    pub lambda_kd: f64,
    pub gamma_fd: f64,
    pub size: StudentSize,
    pub seed: u64,
}

impl SweepCell {
    pub fn kd(&self) -> KdConfig {
        KdConfig {
            mode: self.mode,
            lambda_kd: if self.mode == KdMode::None { 0.0 } else { self.lambda_kd },
            gamma_fd: if self.mode.uses_feature() { self.gamma_fd } else { 0.0 },
        }
    }
}

/// The shipped grid: every mode with λ/γ pairs (0.3, 6), (0.5, 6),
/// (0.8, 12), both student sizes, seeds 0 to 2. Baselines appear once per
/// size and seed.
pub fn default_grid() -> Vec<SweepCell> {
    let pairs = [(0.3, 6.0), (0.5, 6.0), (0.8, 12.0)];
    let mut cells = Vec::new();
    for size in [StudentSize::Small, StudentSize::Large] {
        for seed in 0..3 {
            cells.push(SweepCell {
                mode: KdMode::None,
                lambda_kd: 0.0,
                gamma_fd: 0.0,
                size,
                seed,
            });
            for mode in [KdMode::Output, KdMode::Feature, KdMode::Combined] {
                for (l, g) in pairs {
                    cells.push(SweepCell {
                        mode,
                        lambda_kd: l,
                        gamma_fd: g,
                        size,
                        seed,
                    });
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub metrics: MetricsReport,
    /// Mean output gap between student and teacher on the held-out split.
    pub teacher_gap: f64,
    pub log: TrainLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub result: Result<CellResult, String>,
}

pub struct SweepOptions<'a> {
    pub base: TrainConfig,
    pub thresholds: &'a [f64],
    /// Benchmark each student with `(clock, warmup, iters)`.
    pub bench: Option<(&'a dyn Clock, usize, usize)>,
}

impl Default for SweepOptions<'_> {
    fn default() -> Self {
        Self {
            base: TrainConfig::default(),
            thresholds: &DEFAULT_THRESHOLDS,
            bench: None,
        }
    }
}

/// Held-out teacher predictions, for output-gap measurement.
pub fn teacher_eval_outputs(teacher: &Model, data: &Dataset, rig: &HandRig) -> Result<Vec<Prediction>, Error> {
    data.eval()
        .iter()
        .map(|s| Ok(teacher.predict(&s.image, rig, &s.camera.intrinsics)?.0))
        .collect()
}

/// Runs every cell, recording failures without stopping.
pub fn run_sweep(
    teacher: &Model,
    cells: &[SweepCell],
    data: &Dataset,
    rig: &HandRig,
    opts: &SweepOptions<'_>,
    clock: &dyn Clock,
) -> Result<Vec<SweepRow>, Error> {
    if cells.is_empty() {
        return Err(Error::InvalidInput("sweep grid is empty".into()));
    }
    if !teacher.is_frozen() {
        return Err(Error::TeacherNotFrozen);
    }
    let cache = TeacherCache::build(teacher, data.train(), rig)?;
    let teacher_eval = teacher_eval_outputs(teacher, data, rig)?;
    Ok(cells
        .iter()
        .map(|cell| SweepRow {
            cell: *cell,
            result: run_cell(cell, &cache, &teacher_eval, data, rig, opts, clock).map_err(|e| e.to_string()),
        })
        .collect())
}

pub fn run_cell(
    cell: &SweepCell,
    cache: &TeacherCache,
    teacher_eval: &[Prediction],
    data: &Dataset,
    rig: &HandRig,
    opts: &SweepOptions<'_>,
    clock: &dyn Clock,
) -> Result<CellResult, Error> {
    let cfg = TrainConfig {
        kd: cell.kd(),
        seed: cell.seed,
        ..opts.base
    };
    let mut net = cell.size.config(cell.seed);
    net.input_size = (data.config.intrinsics.image_h, data.config.intrinsics.image_w);
    let student = init_model(&net)?;
    let out = distill_from(Some(cache), student, &cfg, data, rig, clock)?;
    let mut metrics = evaluate(&out.student, data.eval(), rig, opts.thresholds)?;
    if let Some((c, warmup, iters)) = opts.bench {
        let intr = data.config.intrinsics;
        metrics.throughput = Some(bench(&out.student, rig, &intr, warmup, iters, c)?.throughput);
    }
    let mut gap = 0.0;
    for (s, t) in data.eval().iter().zip(teacher_eval) {
        let p = out.student.predict(&s.image, rig, &s.camera.intrinsics)?.0;
        gap += output_gap(&p, t);
    }
    let teacher_gap = if teacher_eval.is_empty() { 0.0 } else { gap / teacher_eval.len() as f64 };
    Ok(CellResult {
        metrics,
        teacher_gap,
        log: out.log,
    })
}
