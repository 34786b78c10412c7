//! MANO-style differentiable hand: shape blendshapes, a kinematic tree of
//! axis-angle joints, linear blend skinning and keypoint regression.
//!
//! All lengths are millimetres in the model frame. Pose-corrective
//! blendshapes are not modelled.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ad::{AdError, Graph, Tensor, Var};
use crate::rng;

pub const NUM_JOINTS: usize = 16;
pub const NUM_BETAS: usize = 10;
pub const NUM_KEYPOINTS: usize = 21;
pub const POSE_DIM: usize = NUM_JOINTS * 3;
/// θ ‖ β
pub const PARAM_DIM: usize = POSE_DIM + NUM_BETAS;
pub const DEFAULT_VERTICES: usize = 97;
/// Smallest vertex count [`make_synthetic_rig`] accepts.
pub const MIN_SYNTHETIC_VERTICES: usize = 6;

const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HandError {
    #[error("invalid rig: {0}")]
    InvalidRig(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Ad(#[from] AdError),
}

/// Pose θ (3 axis-angle values per joint, joint 0 = global orientation) and
/// shape β.
#[derive(Debug, Clone, PartialEq)]
pub struct HandParams {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
}

impl HandParams {
    pub fn zeros() -> Self {
        Self {
            theta: vec![0.0; POSE_DIM],
            beta: vec![0.0; NUM_BETAS],
        }
    }

    /// Full-size parameters from the concatenated θ ‖ β vector.
    pub fn from_concat(values: &[f64]) -> Result<Self, HandError> {
        if values.len() != PARAM_DIM {
            return Err(HandError::InvalidParams(format!("expected {PARAM_DIM} values, got {}", values.len())));
        }
        Ok(Self {
            theta: values[..POSE_DIM].to_vec(),
            beta: values[POSE_DIM..].to_vec(),
        })
    }

    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.theta.clone();
        v.extend_from_slice(&self.beta);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.beta).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandOutput {
    /// `N_v × 3`
    pub vertices: Tensor,
    /// `N_k × 3`
    pub joints3d: Tensor,
}

/// Graph handles produced by [`HandRig::forward_graph`].
#[derive(Debug, Clone, Copy)]
pub struct HandVars {
    pub vertices: Var,
    pub joints3d: Var,
}

/// Constants of the parametric hand. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct HandRig {
    num_vertices: usize,
    num_joints: usize,
    num_betas: usize,
    num_keypoints: usize,
    template: Vec<f64>,
    blendshapes: Vec<f64>,
    joint_regressor: Vec<f64>,
    parents: Vec<Option<usize>>,
    skinning_weights: Vec<f64>,
    keypoint_regressor: Vec<f64>,
    consts: RigConstants,
}

/// Graph-ready reshapes of the rig arrays, built once.
#[derive(Debug, Clone, PartialEq)]
struct RigConstants {
    template: Tensor,
    /// `3N_v × N_β`
    blend_matrix: Tensor,
    joint_regressor: Tensor,
    keypoint_regressor: Tensor,
    /// `N_v × 3N_j`, weight of joint j repeated over its 3 columns.
    expanded_weights: Tensor,
    /// `3N_j × 3`, stacked identities summing the per-joint blocks.
    block_sum: Tensor,
    ones: Tensor,
}

fn check_convex_rows(name: &str, data: &[f64], rows: usize, cols: usize) -> Result<(), HandError> {
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        if row.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(HandError::InvalidRig(format!("{name} row {r} has a negative or non-finite weight")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(HandError::InvalidRig(format!("{name} row {r} sums to {s}")));
        }
    }
    Ok(())
}

impl HandRig {
    /// Validates and assembles a rig.
    ///
    /// Layouts: `template` is `N_v×3`, `blendshapes` is `N_β×N_v×3`,
    /// `joint_regressor` is `N_j×N_v`, `skinning_weights` is `N_v×N_j`,
    /// `keypoint_regressor` is `N_k×N_v`, all row-major. `parents[0]` must be
    /// `None` and every other parent index must be smaller than its child.
    pub fn new(
        template: Vec<f64>,
        blendshapes: Vec<f64>,
        joint_regressor: Vec<f64>,
        parents: Vec<Option<usize>>,
        skinning_weights: Vec<f64>,
        keypoint_regressor: Vec<f64>,
    ) -> Result<Self, HandError> {
        let bad = |m: String| Err(HandError::InvalidRig(m));
        if template.is_empty() || !template.len().is_multiple_of(3) {
            return bad(format!("template length {} is not a positive multiple of 3", template.len()));
        }
        let nv = template.len() / 3;
        let nj = parents.len();
        if nj == 0 {
            return bad("no joints".into());
        }
        if !blendshapes.len().is_multiple_of(nv * 3) {
            return bad(format!("blendshapes length {} is not a multiple of 3·N_v", blendshapes.len()));
        }
        let nb = blendshapes.len() / (nv * 3);
        if joint_regressor.len() != nj * nv {
            return bad(format!("joint_regressor has {} values, expected {}", joint_regressor.len(), nj * nv));
        }
        if skinning_weights.len() != nv * nj {
            return bad(format!("skinning_weights has {} values, expected {}", skinning_weights.len(), nv * nj));
        }
        if keypoint_regressor.is_empty() || !keypoint_regressor.len().is_multiple_of(nv) {
            return bad(format!("keypoint_regressor length {} is not a multiple of N_v", keypoint_regressor.len()));
        }
        let nk = keypoint_regressor.len() / nv;
        if parents[0].is_some() {
            return bad("joint 0 must be the root".into());
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => return bad(format!("joint {j} has parent {p:?}; parents must precede children")),
            }
        }
        if template.iter().chain(&blendshapes).any(|v| !v.is_finite()) {
            return bad("non-finite template or blendshape value".into());
        }
        check_convex_rows("skinning_weights", &skinning_weights, nv, nj)?;
        check_convex_rows("joint_regressor", &joint_regressor, nj, nv)?;
        check_convex_rows("keypoint_regressor", &keypoint_regressor, nk, nv)?;

        let mut blend_matrix = vec![0.0; nv * 3 * nb];
        for k in 0..nb {
            for i in 0..nv * 3 {
                blend_matrix[i * nb + k] = blendshapes[k * nv * 3 + i];
            }
        }
        let mut expanded = vec![0.0; nv * 3 * nj];
        for v in 0..nv {
            for j in 0..nj {
                let w = skinning_weights[v * nj + j];
                for c in 0..3 {
                    expanded[v * 3 * nj + 3 * j + c] = w;
                }
            }
        }
        let mut block_sum = vec![0.0; 3 * nj * 3];
        for j in 0..nj {
            for c in 0..3 {
                block_sum[(3 * j + c) * 3 + c] = 1.0;
            }
        }
        let consts = RigConstants {
            template: Tensor::matrix(nv, 3, template.clone()),
            blend_matrix: Tensor::matrix(nv * 3, nb, blend_matrix),
            joint_regressor: Tensor::matrix(nj, nv, joint_regressor.clone()),
            keypoint_regressor: Tensor::matrix(nk, nv, keypoint_regressor.clone()),
            expanded_weights: Tensor::matrix(nv, 3 * nj, expanded),
            block_sum: Tensor::matrix(3 * nj, 3, block_sum),
            ones: Tensor::full(&[nv, 1], 1.0),
        };
        Ok(Self {
            num_vertices: nv,
            num_joints: nj,
            num_betas: nb,
            num_keypoints: nk,
            template,
            blendshapes,
            joint_regressor,
            parents,
            skinning_weights,
            keypoint_regressor,
            consts,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }
    pub fn num_joints(&self) -> usize {
        self.num_joints
    }
    pub fn num_betas(&self) -> usize {
        self.num_betas
    }
    pub fn num_keypoints(&self) -> usize {
        self.num_keypoints
    }
    pub fn template(&self) -> &[f64] {
        &self.template
    }
    pub fn blendshapes(&self) -> &[f64] {
        &self.blendshapes
    }
    pub fn joint_regressor(&self) -> &[f64] {
        &self.joint_regressor
    }
    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }
    pub fn skinning_weights(&self) -> &[f64] {
        &self.skinning_weights
    }
    pub fn keypoint_regressor(&self) -> &[f64] {
        &self.keypoint_regressor
    }

    fn check_params(&self, theta_len: usize, beta_len: usize) -> Result<(), HandError> {
        if theta_len != 3 * self.num_joints || beta_len != self.num_betas {
            return Err(HandError::InvalidParams(format!(
                "rig expects θ of {} and β of {}, got {theta_len} and {beta_len}",
                3 * self.num_joints,
                self.num_betas
            )));
        }
        Ok(())
    }

    /// Records the hand on `g`. `theta` holds `3·N_j` values and `beta`
    /// `N_β` values, in any shape.
    pub fn forward_graph(&self, g: &mut Graph, theta: Var, beta: Var) -> Result<HandVars, HandError> {
        self.check_params(g.value(theta).numel(), g.value(beta).numel())?;
        let (nv, nj, nb) = (self.num_vertices, self.num_joints, self.num_betas);
        let c = &self.consts;

        let beta_col = g.reshape(beta, &[nb, 1])?;
        let blend = g.constant(c.blend_matrix.clone());
        let offsets = g.matmul(blend, beta_col)?;
        let offsets = g.reshape(offsets, &[nv, 3])?;
        let template = g.constant(c.template.clone());
        let shaped = g.add(template, offsets)?;

        let jreg = g.constant(c.joint_regressor.clone());
        let rest_joints = g.matmul(jreg, shaped)?;
        let rest_cols = g.transpose(rest_joints)?;
        let joint_col: Vec<Var> = (0..nj)
            .map(|j| g.narrow(rest_cols, 1, j, 1))
            .collect::<Result<_, _>>()?;

        // Each joint contributes A_j = A_parent ∘ (rotation R_j about its rest
        // position). Skinning blends the displacements (A_j − I)·v, so the
        // rest pose reproduces the shaped template bit for bit.
        let theta = g.reshape(theta, &[nj, 3])?;
        let eye = g.constant(Tensor::eye(3));
        let mut rot_world: Vec<Var> = Vec::with_capacity(nj);
        let mut offset_world: Vec<Var> = Vec::with_capacity(nj);
        let mut blocks: Vec<Var> = Vec::with_capacity(nj);
        for j in 0..nj {
            let aa = g.narrow(theta, 0, j, 1)?;
            let local_rot = g.rodrigues(aa)?;
            let turned = g.matmul(local_rot, joint_col[j])?;
            let pivot = g.sub(joint_col[j], turned)?;
            let (rot, offset) = match self.parents[j] {
                None => (local_rot, pivot),
                Some(p) => {
                    let rot = g.matmul(rot_world[p], local_rot)?;
                    let moved = g.matmul(rot_world[p], pivot)?;
                    let offset = g.add(moved, offset_world[p])?;
                    (rot, offset)
                }
            };
            let delta = g.sub(rot, eye)?;
            let affine = g.concat(&[delta, offset], 1)?;
            blocks.push(g.transpose(affine)?);
            rot_world.push(rot);
            offset_world.push(offset);
        }
        let stacked = g.concat(&blocks, 1)?;
        let ones = g.constant(c.ones.clone());
        let homogeneous = g.concat(&[shaped, ones], 1)?;
        let per_joint = g.matmul(homogeneous, stacked)?;
        let weights = g.constant(c.expanded_weights.clone());
        let weighted = g.mul(per_joint, weights)?;
        let block_sum = g.constant(c.block_sum.clone());
        let displacement = g.matmul(weighted, block_sum)?;
        let vertices = g.add(shaped, displacement)?;

        let kreg = g.constant(c.keypoint_regressor.clone());
        let joints3d = g.matmul(kreg, vertices)?;
        Ok(HandVars { vertices, joints3d })
    }

    /// Value-only forward pass.
    pub fn forward(&self, params: &HandParams) -> Result<HandOutput, HandError> {
        if !params.is_finite() {
            return Err(HandError::InvalidParams("non-finite parameter".into()));
        }
        self.check_params(params.theta.len(), params.beta.len())?;
        let mut g = Graph::no_grad();
        let theta = g.constant(Tensor::vector(params.theta.clone()));
        let beta = g.constant(Tensor::vector(params.beta.clone()));
        let out = self.forward_graph(&mut g, theta, beta)?;
        Ok(HandOutput {
            vertices: g.value(out.vertices).clone(),
            joints3d: g.value(out.joints3d).clone(),
        })
    }
}

/// Rest skeleton of the synthetic hand, wrist-relative, in millimetres.
/// Fingers in kinematic order index, middle, pinky, ring, thumb; each entry
/// is (base position, direction, three segment lengths).
const FINGERS: [([f64; 3], [f64; 3], [f64; 3]); 5] = [
    ([24.0, 85.0, 0.0], [0.1, 1.0, 0.0], [38.0, 24.0, 20.0]),
    ([4.0, 90.0, 0.0], [0.0, 1.0, 0.0], [42.0, 27.0, 22.0]),
    ([-32.0, 75.0, 0.0], [-0.2, 1.0, 0.0], [30.0, 19.0, 18.0]),
    ([-14.0, 85.0, 0.0], [-0.1, 1.0, 0.0], [38.0, 25.0, 21.0]),
    ([22.0, 20.0, 5.0], [0.7, 0.7, 0.1], [35.0, 30.0, 25.0]),
];
/// Shift applied to the wrist-relative skeleton so the hand is roughly
/// centred on the model-frame origin.
const ROOT_OFFSET: [f64; 3] = [0.0, -60.0, 0.0];
const SKIN_TEMPERATURE: f64 = 5.0;
const REGRESSOR_NEIGHBOURS: usize = 4;

fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn norm3(a: [f64; 3]) -> f64 {
    libm::sqrt(dot3(a, a))
}

fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = sub3(b, a);
    let t = (dot3(sub3(p, a), ab) / dot3(ab, ab)).clamp(0.0, 1.0);
    norm3(sub3(p, add3(a, scale3(ab, t))))
}

/// Row of `n` weights averaging the `k` vertices nearest `target`.
fn nearest_average(vertices: &[[f64; 3]], target: [f64; 3]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..vertices.len()).collect();
    order.sort_by(|&a, &b| {
        let da = norm3(sub3(vertices[a], target));
        let db = norm3(sub3(vertices[b], target));
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let k = REGRESSOR_NEIGHBOURS.min(vertices.len());
    let mut row = vec![0.0; vertices.len()];
    for &i in &order[..k] {
        row[i] = 1.0 / k as f64;
    }
    row
}

/// Parent table of the 16-joint hand: wrist, then three joints per finger.
pub fn hand_parents() -> Vec<Option<usize>> {
    let mut parents = vec![None];
    for f in 0..5 {
        let base = 1 + 3 * f;
        parents.push(Some(0));
        parents.push(Some(base));
        parents.push(Some(base + 1));
    }
    parents
}

/// Deterministic stand-in for the MANO asset.
///
/// Vertices are scattered around a 16-bone skeleton (one palm bone from the
/// wrist plus three bones per finger), skinned to their two nearest bones by
/// a distance softmax, and regressors average the nearest vertices to each
/// joint and fingertip.
pub fn make_synthetic_rig(seed: u64, num_vertices: usize) -> Result<HandRig, HandError> {
    if num_vertices < MIN_SYNTHETIC_VERTICES {
        return Err(HandError::InvalidRig(format!(
            "need at least {MIN_SYNTHETIC_VERTICES} vertices, got {num_vertices}"
        )));
    }
    let mut rng = rng::rng_for(seed, rng::stream::RIG, 0);
    let jitter = |rng: &mut rand_chacha::ChaCha8Rng, s: f64| -> f64 { rng.random_range(-s..s) };

    let mut joints = vec![[0.0; 3]; NUM_JOINTS];
    let mut tips = [[0.0; 3]; 5];
    joints[0] = ROOT_OFFSET;
    for (f, (base, dir, lengths)) in FINGERS.iter().enumerate() {
        let n = norm3(*dir);
        let dir = scale3(*dir, 1.0 / n);
        let mut p = add3(add3(*base, ROOT_OFFSET), [jitter(&mut rng, 2.0), jitter(&mut rng, 2.0), jitter(&mut rng, 1.0)]);
        for (s, len) in lengths.iter().enumerate() {
            joints[1 + 3 * f + s] = p;
            let len = len * (1.0 + jitter(&mut rng, 0.05));
            p = add3(p, scale3(dir, len));
        }
        tips[f] = p;
    }
    // Bone j runs from joint j to its child (or fingertip); the palm bone
    // runs from the wrist to the middle-finger base.
    let bones: Vec<([f64; 3], [f64; 3])> = (0..NUM_JOINTS)
        .map(|j| {
            if j == 0 {
                (joints[0], joints[4])
            } else if (j - 1) % 3 == 2 {
                (joints[j], tips[(j - 1) / 3])
            } else {
                (joints[j], joints[j + 1])
            }
        })
        .collect();

    let mut vertices = Vec::with_capacity(num_vertices);
    for i in 0..num_vertices {
        let bone = i % NUM_JOINTS;
        let v = if bone == 0 {
            add3(
                ROOT_OFFSET,
                [rng.random_range(-30.0..28.0), rng.random_range(5.0..80.0), rng.random_range(-10.0..10.0)],
            )
        } else {
            let (a, b) = bones[bone];
            let u: f64 = rng.random_range(0.0..1.0);
            let along = add3(a, scale3(sub3(b, a), u));
            let radial = [rng.random_range(-8.0..8.0), 0.0, rng.random_range(-8.0..8.0)];
            add3(along, radial)
        };
        vertices.push(v);
    }

    let mut skinning = vec![0.0; num_vertices * NUM_JOINTS];
    for (v, p) in vertices.iter().enumerate() {
        let mut d: Vec<(f64, usize)> = bones
            .iter()
            .enumerate()
            .map(|(j, (a, b))| (segment_distance(*p, *a, *b), j))
            .collect();
        d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let (d0, j0) = d[0];
        let (d1, j1) = d[1];
        let w0 = libm::exp(-d0 / SKIN_TEMPERATURE);
        let w1 = libm::exp(-d1 / SKIN_TEMPERATURE);
        let w0n = w0 / (w0 + w1);
        skinning[v * NUM_JOINTS + j0] = w0n;
        skinning[v * NUM_JOINTS + j1] = 1.0 - w0n;
    }

    let mut joint_regressor = Vec::with_capacity(NUM_JOINTS * num_vertices);
    for j in &joints {
        joint_regressor.extend(nearest_average(&vertices, *j));
    }
    let mut keypoint_regressor = joint_regressor.clone();
    for t in &tips {
        keypoint_regressor.extend(nearest_average(&vertices, *t));
    }

    let centroid = scale3(vertices.iter().fold([0.0; 3], |acc, v| add3(acc, *v)), 1.0 / num_vertices as f64);
    let mut blendshapes = Vec::with_capacity(NUM_BETAS * num_vertices * 3);
    for k in 0..NUM_BETAS {
        // Shape 0 is a uniform 4% scale; the rest are random smooth linear
        // deformations about the centroid plus sub-millimetre noise.
        let mut a = [0.0; 9];
        if k == 0 {
            a[0] = 0.04;
            a[4] = 0.04;
            a[8] = 0.04;
        } else {
            for e in a.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *e = 0.02 * z;
            }
        }
        for v in &vertices {
            let r = sub3(*v, centroid);
            for c in 0..3 {
                let z: f64 = StandardNormal.sample(&mut rng);
                blendshapes.push(a[c * 3] * r[0] + a[c * 3 + 1] * r[1] + a[c * 3 + 2] * r[2] + 0.3 * z);
            }
        }
    }

    let template = vertices.iter().flat_map(|v| v.iter().copied()).collect();
    HandRig::new(template, blendshapes, joint_regressor, hand_parents(), skinning, keypoint_regressor)
}

#[cfg(test)]
mod tests;
