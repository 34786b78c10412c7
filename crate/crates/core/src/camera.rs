//! Full-perspective pinhole projection with the principal point at the image
//! centre. The regressed camera is the translation `t`; focal length and
//! image size are dataset-level constants.

use alloc::vec::Vec;

use crate::ad::{AdError, Graph, Tensor, Var};

/// Smallest admissible `z + t_z`, in millimetres.
pub const MIN_DEPTH: f64 = 1e-3;
pub const DEFAULT_FOCAL: f64 = 100.0;
pub const DEFAULT_IMAGE_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    /// Pixels.
    pub focal: f64,
    pub image_h: usize,
    pub image_w: usize,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            focal: DEFAULT_FOCAL,
            image_h: DEFAULT_IMAGE_SIZE,
            image_w: DEFAULT_IMAGE_SIZE,
        }
    }
}

impl Intrinsics {
    pub fn principal_point(&self) -> (f64, f64) {
        (self.image_w as f64 / 2.0, self.image_h as f64 / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams {
    /// Millimetres.
    pub translation: [f64; 3],
    pub intrinsics: Intrinsics,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("point {index} has non-positive depth {depth} mm")]
    NonPositiveDepth { index: usize, depth: f64 },
    #[error("focal length must be positive, got {0}")]
    InvalidFocal(f64),
    #[error(transparent)]
    Ad(AdError),
}

impl From<AdError> for CameraError {
    fn from(e: AdError) -> Self {
        match e {
            AdError::NonPositiveDepth { index, depth } => CameraError::NonPositiveDepth { index, depth },
            other => CameraError::Ad(other),
        }
    }
}

/// Records `u = f·(x+t_x)/(z+t_z) + W/2`, `v = f·(y+t_y)/(z+t_z) + H/2`.
pub fn project_graph(g: &mut Graph, points: Var, translation: Var, intr: &Intrinsics) -> Result<Var, CameraError> {
    if !(intr.focal > 0.0) {
        return Err(CameraError::InvalidFocal(intr.focal));
    }
    let offsets = g.project(points, translation, intr.focal)?;
    let n = g.value(offsets).shape()[0];
    let (cx, cy) = intr.principal_point();
    let centre: Vec<f64> = (0..n).flat_map(|_| [cx, cy]).collect();
    let centre = g.constant(Tensor::matrix(n, 2, centre));
    Ok(g.add(offsets, centre)?)
}

/// Projects an `N×3` millimetre point set to `N×2` pixels.
pub fn project(points: &Tensor, cam: &CameraParams) -> Result<Tensor, CameraError> {
    let mut g = Graph::no_grad();
    let p = g.constant(points.clone());
    let t = g.constant(Tensor::vector(cam.translation.to_vec()));
    let uv = project_graph(&mut g, p, t, &cam.intrinsics)?;
    Ok(g.value(uv).clone())
}
