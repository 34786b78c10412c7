//! Procrustes-aligned joint and vertex errors, point-cloud F-scores, model
//! evaluation and the parameter/throughput benchmark.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::ad::Tensor;
use crate::camera::Intrinsics;
use crate::data::Sample;
use crate::hand::HandRig;
use crate::losses::Prediction;
use crate::nets::{Model, ParamCount};
use crate::rng::{rng_for, stream};
use crate::Error;

pub const DEFAULT_THRESHOLDS: [f64; 2] = [5.0, 15.0];

/// Point sets whose spread is below this (mm²) cannot be aligned.
const MIN_VARIANCE: f64 = 1e-12;

/// `x ↦ s·R·x + t`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    /// Applies the transform to every row of an `N×3` set.
    pub fn apply_all(&self, points: &[f64]) -> Vec<f64> {
        points
            .chunks(3)
            .flat_map(|p| {
                let q = self.apply(Vector3::new(p[0], p[1], p[2]));
                [q.x, q.y, q.z]
            })
            .collect()
    }
}

fn as_points(name: &str, t: &[f64]) -> Result<Vec<Vector3<f64>>, Error> {
    if t.is_empty() || !t.len().is_multiple_of(3) {
        return Err(Error::InvalidInput(format!("{name} must be a non-empty N×3 point set, got {} values", t.len())));
    }
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{name} contains non-finite coordinates")));
    }
    Ok(t.chunks(3).map(|p| Vector3::new(p[0], p[1], p[2])).collect())
}

fn centroid(ps: &[Vector3<f64>]) -> Vector3<f64> {
    ps.iter().sum::<Vector3<f64>>() / ps.len() as f64
}

/// Least-squares similarity taking `p` onto `q` (both `N×3`, row-major):
/// centre, SVD of the cross-covariance with a determinant sign fix, and the
/// variance-ratio scale.
pub fn procrustes_align(p: &[f64], q: &[f64]) -> Result<SimilarityTransform, Error> {
    let (ps, qs) = (as_points("source", p)?, as_points("target", q)?);
    if ps.len() != qs.len() {
        return Err(Error::InvalidInput(format!("point counts differ: {} vs {}", ps.len(), qs.len())));
    }
    if ps.len() < 3 {
        return Err(Error::InvalidInput(format!("alignment needs at least 3 points, got {}", ps.len())));
    }
    let n = ps.len() as f64;
    let (mp, mq) = (centroid(&ps), centroid(&qs));
    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    for (a, b) in ps.iter().zip(&qs) {
        let (da, db) = (a - mp, b - mq);
        cov += db * da.transpose();
        var_p += da.norm_squared();
    }
    cov /= n;
    var_p /= n;
    let spread = ps.iter().map(|a| a.norm_squared()).sum::<f64>() / n;
    if var_p <= MIN_VARIANCE * spread.max(1.0) {
        return Err(Error::Degenerate(format!("source points have variance {var_p:e}")));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = if (u.determinant() * v_t.determinant()) < 0.0 { -1.0 } else { 1.0 };
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = u * fix * v_t;
    let s = svd.singular_values;
    let scale = (s[0] + s[1] + d * s[2]) / var_p;
    let translation = mq - rotation * mp * scale;
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

fn mean_distance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() / 3;
    a.chunks(3)
        .zip(b.chunks(3))
        .map(|(p, q)| {
            let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
            libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        })
        .sum::<f64>()
        / n as f64
}

/// Mean per-point distance without alignment.
pub fn mpjpe(pred: &[f64], gt: &[f64]) -> Result<f64, Error> {
    let (p, g) = (as_points("prediction", pred)?, as_points("ground truth", gt)?);
    if p.len() != g.len() {
        return Err(Error::InvalidInput(format!("point counts differ: {} vs {}", p.len(), g.len())));
    }
    Ok(mean_distance(pred, gt))
}

/// Mean per-point distance after aligning `pred` to `gt`.
pub fn pa_error(pred: &[f64], gt: &[f64]) -> Result<f64, Error> {
    let t = procrustes_align(pred, gt)?;
    Ok(mean_distance(&t.apply_all(pred), gt))
}

/// PA-MPJPE in mm over `21×3` keypoints.
pub fn pa_mpjpe(pred: &Tensor, gt: &Tensor) -> Result<f64, Error> {
    check_same_shape(pred, gt)?;
    pa_error(pred.data(), gt.data())
}

/// PA-MPVPE in mm over `N_v×3` vertices.
pub fn pa_mpvpe(pred: &Tensor, gt: &Tensor) -> Result<f64, Error> {
    check_same_shape(pred, gt)?;
    pa_error(pred.data(), gt.data())
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<(), Error> {
    if a.shape() != b.shape() || a.rank() != 2 || a.shape()[1] != 3 {
        return Err(Error::InvalidInput(format!("expected equal N×3 shapes, got {:?} and {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn fraction_within(from: &[Vector3<f64>], to: &[Vector3<f64>], t2: f64) -> f64 {
    let hits = from
        .iter()
        .filter(|a| to.iter().map(|b| (*a - b).norm_squared()).fold(f64::INFINITY, f64::min) <= t2)
        .count();
    hits as f64 / from.len() as f64
}

/// Harmonic mean of precision and recall at distance `threshold` (mm),
/// optionally after aligning `pred` to `gt`.
pub fn f_score(pred: &[f64], gt: &[f64], threshold: f64, aligned: bool) -> Result<f64, Error> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidInput(format!("threshold must be positive, got {threshold}")));
    }
    let g = as_points("ground truth", gt)?;
    let p = if aligned {
        let t = procrustes_align(pred, gt)?;
        as_points("prediction", &t.apply_all(pred))?
    } else {
        as_points("prediction", pred)?
    };
    let t2 = threshold * threshold;
    let precision = fraction_within(&p, &g, t2);
    let recall = fraction_within(&g, &p, t2);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// PA-MPJPE, mm.
    pub j_err: f64,
    /// PA-MPVPE, mm.
    pub v_err: f64,
    /// `(threshold mm, F-score)` pairs in threshold order.
    pub f_at: Vec<(f64, f64)>,
    pub n_samples: usize,
    pub params: ParamCount,
    /// Forward passes per second, when benchmarked.
    pub throughput: Option<f64>,
}

impl MetricsReport {
    pub fn f_score_at(&self, threshold: f64) -> Option<f64> {
        self.f_at.iter().find(|(t, _)| *t == threshold).map(|&(_, f)| f)
    }

    pub fn is_finite(&self) -> bool {
        self.j_err.is_finite() && self.v_err.is_finite() && self.f_at.iter().all(|(_, f)| f.is_finite())
    }
}

/// Per-sample metric values.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMetrics {
    pub j_err: f64,
    pub v_err: f64,
    pub f_at: Vec<f64>,
}

pub fn sample_metrics(pred: &Prediction, sample: &Sample, rig: &HandRig, thresholds: &[f64]) -> Result<SampleMetrics, Error> {
    let truth = rig.forward(&sample.params)?;
    Ok(SampleMetrics {
        j_err: pa_mpjpe(&pred.k3d, &truth.joints3d)?,
        v_err: pa_mpvpe(&pred.vertices, &truth.vertices)?,
        f_at: thresholds
            .iter()
            .map(|&t| f_score(pred.vertices.data(), truth.vertices.data(), t, true))
            .collect::<Result<_, _>>()?,
    })
}

/// Averages per-sample metrics over `samples`, predicting with `predict`.
pub fn evaluate_with<F>(samples: &[Sample], rig: &HandRig, thresholds: &[f64], mut predict: F) -> Result<MetricsReport, Error>
where
    F: FnMut(&Sample) -> Result<Prediction, Error>,
{
    if samples.is_empty() {
        return Err(Error::InvalidInput("evaluation needs at least one sample".into()));
    }
    let mut j = 0.0;
    let mut v = 0.0;
    let mut f = alloc::vec![0.0; thresholds.len()];
    for s in samples {
        let m = sample_metrics(&predict(s)?, s, rig, thresholds)?;
        j += m.j_err;
        v += m.v_err;
        for (acc, x) in f.iter_mut().zip(&m.f_at) {
            *acc += x;
        }
    }
    let n = samples.len() as f64;
    Ok(MetricsReport {
        j_err: j / n,
        v_err: v / n,
        f_at: thresholds.iter().zip(f).map(|(&t, s)| (t, s / n)).collect(),
        n_samples: samples.len(),
        params: ParamCount::default(),
        throughput: None,
    })
}

pub fn evaluate(model: &Model, samples: &[Sample], rig: &HandRig, thresholds: &[f64]) -> Result<MetricsReport, Error> {
    let mut report = evaluate_with(samples, rig, thresholds, |s| {
        Ok(model.predict(&s.image, rig, &s.camera.intrinsics)?.0)
    })?;
    report.params = model.param_count();
    Ok(report)
}

/// Output-level gap between two predictions, normalised like the
/// output distillation loss.
pub fn output_gap(a: &Prediction, b: &Prediction) -> f64 {
    let per_point = |x: &Tensor, y: &Tensor| {
        let rows = x.shape()[0] as f64;
        x.data().iter().zip(y.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / rows
    };
    let (pa, pb) = (a.mano_params(), b.mano_params());
    let params = pa.iter().zip(&pb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / pa.len() as f64;
    per_point(&a.k3d, &b.k3d) + per_point(&a.k2d, &b.k2d) + params
}

/// Monotonic time source in seconds.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// A clock that never advances, for builds without a time source.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub params: ParamCount,
    /// Forward passes per second.
    pub throughput: f64,
    pub iters: usize,
    pub seconds: f64,
}

/// Times `iters` full forward passes on a fixed random input after
/// `warmup` untimed passes.
pub fn bench(model: &Model, rig: &HandRig, intr: &Intrinsics, warmup: usize, iters: usize, clock: &dyn Clock) -> Result<BenchReport, Error> {
    if iters == 0 {
        return Err(Error::InvalidInput("bench needs at least one timed iteration".into()));
    }
    let cfg = model.config();
    let (h, w) = cfg.input_size;
    let mut rng = rng_for(cfg.seed, stream::BENCH, 0);
    let n = cfg.input_channels * h * w;
    let image = Tensor::new(&[cfg.input_channels, h, w], (0..n).map(|_| rng.random_range(0.0..1.0)).collect())?;
    for _ in 0..warmup {
        model.predict(&image, rig, intr)?;
    }
    let start = clock.seconds();
    for _ in 0..iters {
        model.predict(&image, rig, intr)?;
    }
    let seconds = clock.seconds() - start;
    let throughput = if seconds > 0.0 { iters as f64 / seconds } else { f64::INFINITY };
    Ok(BenchReport {
        params: model.param_count(),
        throughput,
        iters,
        seconds,
    })
}
