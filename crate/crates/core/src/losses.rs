//! Training objectives: ground-truth supervision, output-level and
//! feature-level distillation, and their weighted totals.
//!
//! Every squared-L2 term is divided by its element count, where an element
//! of a keypoint set is one point and of any other tensor one scalar. Teacher
//! quantities enter the graph as constants, so no gradient can reach them.

use alloc::format;
use alloc::vec::Vec;

use crate::ad::{Graph, Tensor, Var};
use crate::camera::Intrinsics;
use crate::hand::{NUM_BETAS, NUM_KEYPOINTS, PARAM_DIM, POSE_DIM};
use crate::Error;

/// Graph handles of one network output.
#[derive(Debug, Clone, Copy)]
pub struct PredictionVars {
    /// `21×3` mm
    pub k3d: Var,
    /// `21×2` px
    pub k2d: Var,
    /// 48 axis-angle values
    pub theta: Var,
    /// 10 shape coefficients
    pub beta: Var,
    /// 3-vector, mm
    pub translation: Var,
    /// `N_v×3` mm
    pub vertices: Var,
}

/// Detached network output `{K3D, K2D, θ, β, π}` plus the posed mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub k3d: Tensor,
    pub k2d: Tensor,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub translation: [f64; 3],
    pub intrinsics: Intrinsics,
    pub vertices: Tensor,
}

impl Prediction {
    pub fn from_graph(g: &Graph, v: &PredictionVars, intrinsics: Intrinsics) -> Self {
        let t = g.value(v.translation).data();
        Self {
            k3d: g.value(v.k3d).clone(),
            k2d: g.value(v.k2d).clone(),
            theta: g.value(v.theta).data().to_vec(),
            beta: g.value(v.beta).data().to_vec(),
            translation: [t[0], t[1], t[2]],
            intrinsics,
            vertices: g.value(v.vertices).clone(),
        }
    }

    /// θ ‖ β
    pub fn mano_params(&self) -> Vec<f64> {
        let mut v = self.theta.clone();
        v.extend_from_slice(&self.beta);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.k3d.is_finite()
            && self.k2d.is_finite()
            && self.theta.iter().chain(&self.beta).chain(&self.translation).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnnotationMode {
    Full3d,
    Only2d,
}

/// Supervision for one sample. 2D keypoints are always present; 3D
/// keypoints and MANO parameters exist exactly when the mode is `Full3d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    k2d: Tensor,
    k3d: Option<Tensor>,
    mano: Option<Vec<f64>>,
}

impl GroundTruth {
    pub fn full(k2d: Tensor, k3d: Tensor, mano: Vec<f64>) -> Result<Self, Error> {
        check_shape("K2D", &k2d, &[NUM_KEYPOINTS, 2])?;
        check_shape("K3D", &k3d, &[NUM_KEYPOINTS, 3])?;
        if mano.len() != PARAM_DIM {
            return Err(Error::InvalidInput(format!("MANO parameters need {PARAM_DIM} values, got {}", mano.len())));
        }
        Ok(Self {
            k2d,
            k3d: Some(k3d),
            mano: Some(mano),
        })
    }

    pub fn only_2d(k2d: Tensor) -> Result<Self, Error> {
        check_shape("K2D", &k2d, &[NUM_KEYPOINTS, 2])?;
        Ok(Self {
            k2d,
            k3d: None,
            mano: None,
        })
    }

    pub fn mode(&self) -> AnnotationMode {
        if self.k3d.is_some() {
            AnnotationMode::Full3d
        } else {
            AnnotationMode::Only2d
        }
    }

    pub fn k2d(&self) -> &Tensor {
        &self.k2d
    }

    pub fn k3d(&self) -> Option<&Tensor> {
        self.k3d.as_ref()
    }

    pub fn mano(&self) -> Option<&[f64]> {
        self.mano.as_deref()
    }
}

fn check_shape(what: &str, t: &Tensor, shape: &[usize]) -> Result<(), Error> {
    if t.shape() != shape {
        return Err(Error::InvalidInput(format!("{what} must have shape {shape:?}, got {:?}", t.shape())));
    }
    Ok(())
}

/// Backbone activation grid `C×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap(Tensor);

impl FeatureMap {
    pub fn new(values: Tensor) -> Result<Self, Error> {
        match *values.shape() {
            [c, h, w] if c > 0 && h > 0 && w > 0 && values.is_finite() => Ok(Self(values)),
            _ => Err(Error::InvalidInput(format!(
                "feature map must be a finite C×H×W tensor with positive extents, got {:?}",
                values.shape()
            ))),
        }
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }
    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }
    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }
    pub fn values(&self) -> &Tensor {
        &self.0
    }
    pub fn into_values(self) -> Tensor {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KdMode {
    None,
    Output,
    Feature,
    Combined,
}

impl KdMode {
    pub const ALL: [KdMode; 4] = [KdMode::None, KdMode::Output, KdMode::Feature, KdMode::Combined];

    pub fn uses_output(self) -> bool {
        matches!(self, KdMode::Output | KdMode::Combined)
    }

    pub fn uses_feature(self) -> bool {
        matches!(self, KdMode::Feature | KdMode::Combined)
    }

    pub fn name(self) -> &'static str {
        match self {
            KdMode::None => "none",
            KdMode::Output => "output",
            KdMode::Feature => "feature",
            KdMode::Combined => "combined",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        KdMode::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }
}

/// Distillation weights: `lambda_kd` scales the whole distillation term,
/// `gamma_fd` only the feature part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdConfig {
    pub mode: KdMode,
    pub lambda_kd: f64,
    pub gamma_fd: f64,
}

impl KdConfig {
    pub fn none() -> Self {
        Self {
            mode: KdMode::None,
            lambda_kd: 0.0,
            gamma_fd: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.lambda_kd >= 0.0 && self.lambda_kd.is_finite()) || !(self.gamma_fd >= 0.0 && self.gamma_fd.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda_kd and gamma_fd must be finite and non-negative, got {} and {}",
                self.lambda_kd, self.gamma_fd
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtWeights {
    pub w2d: f64,
    pub w3d: f64,
    pub wmano: f64,
}

impl Default for GtWeights {
    fn default() -> Self {
        Self {
            w2d: 1.0,
            w3d: 1.0,
            wmano: 1.0,
        }
    }
}

/// The learnable 1×1 projection φ from teacher to student channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `C_S × C_T`
    pub weight: Tensor,
    /// `C_S`
    pub bias: Tensor,
}

impl Projection {
    pub fn identity(channels: usize) -> Self {
        Self {
            weight: Tensor::eye(channels),
            bias: Tensor::zeros(&[channels]),
        }
    }

    /// Fan-in scaled uniform weights, zero bias.
    pub fn init(teacher_channels: usize, student_channels: usize, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = crate::rng::rng_for(seed, crate::rng::stream::PROJECTION, 0);
        let bound = 1.0 / libm::sqrt(teacher_channels as f64);
        let data = (0..teacher_channels * student_channels)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor::matrix(student_channels, teacher_channels, data),
            bias: Tensor::zeros(&[student_channels]),
        }
    }

    pub fn teacher_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn student_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn bind(&self, g: &mut Graph) -> ProjectionVars {
        ProjectionVars {
            weight: g.param(self.weight.clone()),
            bias: g.param(self.bias.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionVars {
    pub weight: Var,
    pub bias: Var,
}

fn mean_sq(g: &mut Graph, a: Var, b: Var) -> Result<Var, Error> {
    let n = g.value(a).numel() as f64;
    let s = g.sq_l2(a, b)?;
    Ok(g.mul_scalar(s, 1.0 / n))
}

/// Squared distance averaged over the rows (points) of an `N×D` set.
fn mean_sq_points(g: &mut Graph, a: Var, b: Var) -> Result<Var, Error> {
    let n = g.value(a).shape()[0] as f64;
    let s = g.sq_l2(a, b)?;
    Ok(g.mul_scalar(s, 1.0 / n))
}

/// Individual ground-truth terms; 3D terms are `None` for 2D-only samples.
#[derive(Debug, Clone, Copy)]
pub struct GtTerms {
    pub total: Var,
    pub l2d: Var,
    pub l3d: Option<Var>,
    pub lmano: Option<Var>,
}

/// `w_2D·L_2D [+ w_3D·L_3D + w_MANO·L_MANO]`, bracketed terms only with 3D labels.
pub fn loss_gt(g: &mut Graph, pred: &PredictionVars, gt: &GroundTruth, w: &GtWeights) -> Result<GtTerms, Error> {
    let k2d = g.constant(gt.k2d.clone());
    let l2d = mean_sq_points(g, pred.k2d, k2d)?;
    let mut total = g.mul_scalar(l2d, w.w2d);
    let (mut l3d, mut lmano) = (None, None);
    if let (Some(k3d), Some(mano)) = (&gt.k3d, &gt.mano) {
        let target = g.constant(k3d.clone());
        let term = mean_sq_points(g, pred.k3d, target)?;
        let weighted = g.mul_scalar(term, w.w3d);
        total = g.add(total, weighted)?;
        l3d = Some(term);

        let params = mano_vector(g, pred)?;
        let target = g.constant(Tensor::vector(mano.clone()));
        let term = mean_sq(g, params, target)?;
        let weighted = g.mul_scalar(term, w.wmano);
        total = g.add(total, weighted)?;
        lmano = Some(term);
    }
    Ok(GtTerms { total, l2d, l3d, lmano })
}

/// θ ‖ β as one 58-vector.
pub fn mano_vector(g: &mut Graph, pred: &PredictionVars) -> Result<Var, Error> {
    let theta = g.reshape(pred.theta, &[POSE_DIM])?;
    let beta = g.reshape(pred.beta, &[NUM_BETAS])?;
    Ok(g.concat(&[theta, beta], 0)?)
}

/// Output-level distillation: mean squared gaps in K3D, K2D and θ ‖ β.
pub fn loss_kd_out(g: &mut Graph, student: &PredictionVars, teacher: &Prediction) -> Result<Var, Error> {
    let t3 = g.constant(teacher.k3d.clone());
    let t2 = g.constant(teacher.k2d.clone());
    let tp = g.constant(Tensor::vector(teacher.mano_params()));
    let l3 = mean_sq_points(g, student.k3d, t3)?;
    let l2 = mean_sq_points(g, student.k2d, t2)?;
    let sp = mano_vector(g, student)?;
    let lp = mean_sq(g, sp, tp)?;
    let s = g.add(l3, l2)?;
    Ok(g.add(s, lp)?)
}

/// Feature-level distillation: project teacher channels with φ, resize to
/// the student grid if needed, then mean squared gap.
pub fn loss_kd_feat(g: &mut Graph, student: Var, teacher: &FeatureMap, phi: &ProjectionVars) -> Result<Var, Error> {
    let (cs, hs, ws) = match *g.value(student).shape() {
        [c, h, w] => (c, h, w),
        ref s => return Err(Error::InvalidInput(format!("student features must be C×H×W, got {s:?}"))),
    };
    let (pc_s, pc_t) = (g.value(phi.weight).shape()[0], g.value(phi.weight).shape()[1]);
    if pc_t != teacher.channels() || pc_s != cs {
        return Err(Error::InvalidInput(format!(
            "projection maps {pc_t}→{pc_s} channels but features are teacher {} / student {cs}",
            teacher.channels()
        )));
    }
    let ft = g.constant(teacher.values().clone());
    let mut projected = g.conv_1x1(ft, phi.weight, phi.bias)?;
    if teacher.height() != hs || teacher.width() != ws {
        projected = g.bilinear_resize(projected, hs, ws)?;
    }
    mean_sq(g, student, projected)
}

/// Teacher artifacts for one sample.
#[derive(Debug, Clone, Copy)]
pub struct TeacherView<'a> {
    pub prediction: &'a Prediction,
    pub features: &'a FeatureMap,
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub gt: GtTerms,
    pub kd_out: Option<Var>,
    pub kd_feat: Option<Var>,
}

/// Per-sample objective for `cfg.mode`:
/// none `L_GT`; output `L_GT + λ·L_out`; feature `L_GT + λ·(γ·L_feat)`;
/// combined `L_GT + λ·(L_out + γ·L_feat)`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    g: &mut Graph,
    student: &PredictionVars,
    student_features: Var,
    teacher: Option<TeacherView<'_>>,
    phi: Option<&ProjectionVars>,
    gt: &GroundTruth,
    cfg: &KdConfig,
    weights: &GtWeights,
) -> Result<LossTerms, Error> {
    cfg.validate()?;
    let gt_terms = loss_gt(g, student, gt, weights)?;
    let mode = cfg.mode;
    if mode == KdMode::None {
        return Ok(LossTerms {
            total: gt_terms.total,
            gt: gt_terms,
            kd_out: None,
            kd_feat: None,
        });
    }
    let teacher = teacher.ok_or(Error::MissingTeacherArtifact("teacher output"))?;
    let kd_out = if mode.uses_output() {
        Some(loss_kd_out(g, student, teacher.prediction)?)
    } else {
        None
    };
    let kd_feat = if mode.uses_feature() {
        let phi = phi.ok_or(Error::MissingTeacherArtifact("feature projection"))?;
        Some(loss_kd_feat(g, student_features, teacher.features, phi)?)
    } else {
        None
    };
    let scaled_feat = kd_feat.map(|f| g.mul_scalar(f, cfg.gamma_fd));
    let kd = match (kd_out, scaled_feat) {
        (Some(o), Some(f)) => g.add(o, f)?,
        (Some(o), None) => o,
        (None, Some(f)) => f,
        (None, None) => unreachable!("mode {mode:?} uses a distillation term"),
    };
    let kd = g.mul_scalar(kd, cfg.lambda_kd);
    let total = g.add(gt_terms.total, kd)?;
    Ok(LossTerms {
        total,
        gt: gt_terms,
        kd_out,
        kd_feat,
    })
}
