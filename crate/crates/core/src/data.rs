//! Deterministic synthetic hand dataset: random hand poses and shapes seen
//! through a pinhole camera, rendered as one Gaussian heatmap per keypoint.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::ad::Tensor;
use crate::camera::{project, CameraParams, Intrinsics, MIN_DEPTH};
use crate::hand::{HandOutput, HandParams, HandRig, NUM_BETAS, NUM_JOINTS, NUM_KEYPOINTS};
use crate::losses::{AnnotationMode, GroundTruth};
use crate::rng::{rng_for, stream};
use crate::Error;

pub const JOINT_ANGLE_RANGE: f64 = 0.6;
pub const GLOBAL_ANGLE_RANGE: f64 = core::f64::consts::FRAC_PI_4;
pub const BETA_CLIP: f64 = 2.0;
pub const DEPTH_RANGE: (f64, f64) = (400.0, 800.0);
pub const LATERAL_RANGE: f64 = 50.0;
pub const MAX_ATTEMPTS: usize = 100;

/// Ground-truth draw for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GtDraw {
    pub params: HandParams,
    pub camera: CameraParams,
    pub output: HandOutput,
    pub k2d: Tensor,
}

/// Draws pose, shape and camera until every vertex and keypoint lies in
/// front of the camera.
pub fn sample_gt<R: Rng + ?Sized>(rng: &mut R, rig: &HandRig, intrinsics: Intrinsics) -> Result<GtDraw, Error> {
    for _ in 0..MAX_ATTEMPTS {
        let theta: Vec<f64> = (0..3 * NUM_JOINTS)
            .map(|i| {
                let r = if i < 3 { GLOBAL_ANGLE_RANGE } else { JOINT_ANGLE_RANGE };
                rng.random_range(-r..=r)
            })
            .collect();
        let beta: Vec<f64> = (0..NUM_BETAS)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z.clamp(-BETA_CLIP, BETA_CLIP)
            })
            .collect();
        let translation = [
            rng.random_range(-LATERAL_RANGE..=LATERAL_RANGE),
            rng.random_range(-LATERAL_RANGE..=LATERAL_RANGE),
            rng.random_range(DEPTH_RANGE.0..=DEPTH_RANGE.1),
        ];
        let params = HandParams { theta, beta };
        let output = rig.forward(&params)?;
        let in_front = |t: &Tensor| t.data().chunks(3).all(|p| p[2] + translation[2] > MIN_DEPTH);
        if !in_front(&output.vertices) || !in_front(&output.joints3d) {
            continue;
        }
        let camera = CameraParams { translation, intrinsics };
        let k2d = project(&output.joints3d, &camera)?;
        return Ok(GtDraw {
            params,
            camera,
            output,
            k2d,
        });
    }
    Err(Error::InvalidInput(format!("no valid sample after {MAX_ATTEMPTS} attempts")))
}

/// One Gaussian bump of peak 1 per keypoint, pixel `(x, y)` centred at
/// integer coordinates, plus optional Gaussian noise.
pub fn render_input<R: Rng + ?Sized>(
    k2d: &Tensor,
    size: (usize, usize),
    sigma: f64,
    noise_std: f64,
    rng: &mut R,
) -> Result<Tensor, Error> {
    let (h, w) = size;
    if !(sigma > 0.0) || !(noise_std >= 0.0) || k2d.rank() != 2 || k2d.shape()[1] != 2 {
        return Err(Error::InvalidInput(format!(
            "render_input needs sigma > 0, noise_std ≥ 0 and N×2 keypoints (got {sigma}, {noise_std}, {:?})",
            k2d.shape()
        )));
    }
    let k = k2d.shape()[0];
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut data = vec![0.0; k * h * w];
    let (mut gx, mut gy) = (vec![0.0; w], vec![0.0; h]);
    for (j, plane) in data.chunks_mut(h * w).enumerate() {
        let (u, v) = (k2d.at2(j, 0), k2d.at2(j, 1));
        for (x, g) in gx.iter_mut().enumerate() {
            let d = x as f64 - u;
            *g = libm::exp(-d * d * inv);
        }
        for (y, g) in gy.iter_mut().enumerate() {
            let d = y as f64 - v;
            *g = libm::exp(-d * d * inv);
        }
        for (row, &fy) in plane.chunks_mut(w).zip(&gy) {
            for (p, &fx) in row.iter_mut().zip(&gx) {
                *p = fy * fx;
            }
        }
    }
    if noise_std > 0.0 {
        let noise = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidInput(format!("{e}")))?;
        for p in &mut data {
            *p += noise.sample(rng);
        }
    }
    Ok(Tensor::new(&[k, h, w], data)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `21×H×W` heatmaps.
    pub image: Tensor,
    pub gt: GroundTruth,
    pub params: HandParams,
    pub camera: CameraParams,
}

impl Sample {
    pub fn mode(&self) -> AnnotationMode {
        self.gt.mode()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub frac_2d_only: f64,
    pub sigma: f64,
    pub noise_std: f64,
    pub intrinsics: Intrinsics,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_eval: 500,
            seed: 0,
            frac_2d_only: 0.3,
            sigma: 2.0,
            noise_std: 0.05,
            intrinsics: Intrinsics::default(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.n_train == 0 {
            return Err(Error::InvalidConfig("dataset needs at least one training sample".into()));
        }
        if !(0.0..=1.0).contains(&self.frac_2d_only) {
            return Err(Error::InvalidConfig(format!("frac_2d_only must lie in [0, 1], got {}", self.frac_2d_only)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) || !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma must be positive and noise_std non-negative, got {} and {}",
                self.sigma, self.noise_std
            )));
        }
        if !(self.intrinsics.focal > 0.0) || self.intrinsics.image_h == 0 || self.intrinsics.image_w == 0 {
            return Err(Error::InvalidConfig("camera intrinsics must be positive".into()));
        }
        Ok(())
    }

    /// Number of leading training samples that carry only 2D labels.
    pub fn num_2d_only(&self) -> usize {
        libm::ceil(self.n_train as f64 * self.frac_2d_only) as usize
    }
}

/// Which rig labelled the data: its content digest and vertex count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RigId {
    pub digest: u64,
    pub vertices: usize,
}

impl RigId {
    pub fn of(rig: &HandRig) -> Self {
        Self {
            digest: crate::codec::rig_digest(rig),
            vertices: rig.num_vertices(),
        }
    }
}

/// Training samples followed by evaluation samples. The evaluation tail is
/// always fully annotated.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DataConfig,
    pub rig: RigId,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn train(&self) -> &[Sample] {
        &self.samples[..self.config.n_train]
    }

    pub fn eval(&self) -> &[Sample] {
        &self.samples[self.config.n_train..]
    }

    /// FNV-1a digest of the encoded dataset.
    pub fn checksum(&self) -> u64 {
        let mut h = crate::codec::Fnv1a::default();
        crate::codec::write_dataset(&mut h, self);
        h.finish()
    }

    pub fn check_rig(&self, rig: &HandRig) -> Result<(), Error> {
        let id = RigId::of(rig);
        if id != self.rig {
            return Err(Error::InvalidInput(format!(
                "dataset was labelled with rig {:016x} ({} vertices) but rig {:016x} ({} vertices) was supplied",
                self.rig.digest, self.rig.vertices, id.digest, id.vertices
            )));
        }
        Ok(())
    }
}

/// Builds sample `index` of a dataset from its own derived stream.
pub fn make_sample(cfg: &DataConfig, rig: &HandRig, index: usize) -> Result<Sample, Error> {
    let mut rng = rng_for(cfg.seed, stream::SAMPLE, index as u64);
    let draw = sample_gt(&mut rng, rig, cfg.intrinsics)?;
    let size = (cfg.intrinsics.image_h, cfg.intrinsics.image_w);
    let image = render_input(&draw.k2d, size, cfg.sigma, cfg.noise_std, &mut rng)?;
    let gt = if index < cfg.num_2d_only() {
        GroundTruth::only_2d(draw.k2d)?
    } else {
        GroundTruth::full(draw.k2d, draw.output.joints3d, draw.params.concat())?
    };
    Ok(Sample {
        image,
        gt,
        params: draw.params,
        camera: draw.camera,
    })
}

pub fn make_dataset(cfg: &DataConfig, rig: &HandRig) -> Result<Dataset, Error> {
    cfg.validate()?;
    if rig.num_joints() != NUM_JOINTS || rig.num_betas() != NUM_BETAS || rig.num_keypoints() != NUM_KEYPOINTS {
        return Err(Error::InvalidInput(format!(
            "dataset generation needs a {NUM_JOINTS}-joint, {NUM_BETAS}-shape, {NUM_KEYPOINTS}-keypoint rig"
        )));
    }
    let samples = (0..cfg.n_train + cfg.n_eval)
        .map(|i| make_sample(cfg, rig, i))
        .collect::<Result<_, _>>()?;
    Ok(Dataset {
        config: *cfg,
        rig: RigId::of(rig),
        samples,
    })
}
