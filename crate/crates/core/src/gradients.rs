//! Reverse-mode gradients of the condition → pose → splat → L1 pipeline.
//!
//! Each stage has a hand-derived adjoint. The ones for conditioning and pose
//! assembly live here; the rasterizer's adjoint is [`render_backward`]. The
//! [`check_gradients`] harness compares any [`Objective`] against central
//! finite differences.
//!
//! Triangular solve adjoint: for `w = L⁻ᵀ v` and cotangent `ḡ_w`, solve
//! `L ḡ_v = ḡ_w`; then `ḡ_v` flows to `v` and `ḡ_L = −w ḡ_vᵀ` (lower part).

use crate::conditioning::{condition_primitive, ConditionError, ConditionedOffsets};
use crate::hypergauss::{
    apply_offsets, sigmoid, Gaussian3D, HyperGaussianBlock, HyperPrimitive, ModelError, Partition,
};
use crate::linalg::{
    back_substitute_transposed, forward_substitute, packed_index, packed_len, unit_quat_to_rotmat, Mat3,
};
use crate::rng::{self, Stream};
use crate::splat::{render_backward, render_forward, Camera, Gaussian3DGrad, Image, RenderOptions};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Denominator floor of the relative error in [`GradReport`].
pub const GRAD_ABS_FLOOR: f64 = 1e-6;
/// At most this many coordinates are probed by [`check_gradients`].
pub const MAX_CHECKED_COORDS: usize = 500;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("loss is not finite ({0}); reduce the step size")]
    NonFiniteLoss(f64),
    #[error("empty frame batch")]
    EmptyBatch,
    #[error("frame {frame} out of range ({frames} latents)")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("target is {found:?}, camera renders {expected:?}")]
    TargetSize { expected: (usize, usize), found: (usize, usize) },
    #[error("parameter vector has {found} entries, layout expects {expected}")]
    Layout { expected: usize, found: usize },
    #[error(transparent)]
    Condition(#[from] ConditionError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything a fit optimizes: the primitives and one latent code per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub primitives: Vec<HyperPrimitive>,
    pub latents: Vec<Vec<f64>>,
}

impl Model {
    pub fn latent_dim(&self) -> usize {
        self.primitives
            .first()
            .map(HyperPrimitive::latent_dim)
            .or_else(|| self.latents.first().map(Vec::len))
            .unwrap_or(0)
    }

    pub fn num_frames(&self) -> usize {
        self.latents.len()
    }

    /// Same shapes, every value zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        visit_mut(&mut z, |_, v| *v = 0.0);
        z
    }

    /// Conditions every primitive on `z` and assembles the 3D Gaussians.
    pub fn gaussians(&self, z: &[f64]) -> Result<Vec<Gaussian3D>, GradError> {
        self.primitives
            .iter()
            .map(|p| {
                let o = condition_primitive(p, z)?;
                Ok(apply_offsets(p, o.d_mu, o.d_rot, o.d_scale)?)
            })
            .collect()
    }

    pub fn render_frame(&self, frame: usize, cam: &Camera, opts: &RenderOptions) -> Result<Image, GradError> {
        let z = self
            .latents
            .get(frame)
            .ok_or(GradError::FrameOutOfRange { frame, frames: self.latents.len() })?;
        Ok(render_forward(&self.gaussians(z)?, cam, opts).0)
    }
}

/// Which optimizer group a scalar belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Position,
    Rotation,
    Scale,
    Opacity,
    Color,
    /// `mu_a`, `mu_b`, `raw_L11`, `L21` of every block.
    Hyper,
    Latent,
}

/// Visits every optimizable scalar in the canonical order:
///
/// per primitive `base_mu, base_rot, base_scale, opacity_raw, color`, then
/// `mu_a, mu_b, raw_L11, L21` of `block_pos`, `block_rot`, `block_scale`;
/// finally all latents, frame-major.
pub fn visit_mut(model: &mut Model, mut f: impl FnMut(ParamGroup, &mut f64)) {
    use ParamGroup::*;
    for p in &mut model.primitives {
        p.base_mu.iter_mut().for_each(|v| f(Position, v));
        p.base_rot.iter_mut().for_each(|v| f(Rotation, v));
        p.base_scale.iter_mut().for_each(|v| f(Scale, v));
        f(Opacity, &mut p.opacity_raw);
        p.color.iter_mut().for_each(|v| f(Color, v));
        for b in [&mut p.block_pos, &mut p.block_rot, &mut p.block_scale] {
            b.mu_a
                .iter_mut()
                .chain(&mut b.mu_b)
                .chain(&mut b.raw_l11)
                .chain(&mut b.l21)
                .for_each(|v| f(Hyper, v));
        }
    }
    for z in &mut model.latents {
        z.iter_mut().for_each(|v| f(Latent, v));
    }
}

/// Shape of a flattened [`Model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub num_primitives: usize,
    pub latent_dim: usize,
    pub num_frames: usize,
}

impl Layout {
    pub fn of(model: &Model) -> Self {
        Self { num_primitives: model.primitives.len(), latent_dim: model.latent_dim(), num_frames: model.num_frames() }
    }

    /// Scalars per primitive: 14 base values plus three blocks.
    pub fn primitive_stride(&self) -> usize {
        let n = self.latent_dim;
        14 + [3usize, 4, 3].iter().map(|&m| m + n + packed_len(m) + n * m).sum::<usize>()
    }

    pub fn len(&self) -> usize {
        self.num_primitives * self.primitive_stride() + self.num_frames * self.latent_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat view over every optimizable scalar of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    template: Model,
    pub values: Vec<f64>,
}

impl ParamSet {
    pub fn from_model(model: &Model) -> Self {
        let mut values = Vec::with_capacity(Layout::of(model).len());
        let mut m = model.clone();
        visit_mut(&mut m, |_, v| values.push(*v));
        Self { template: m, values }
    }

    pub fn layout(&self) -> Layout {
        Layout::of(&self.template)
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut out = Vec::with_capacity(self.values.len());
        visit_mut(&mut self.template.clone(), |g, _| out.push(g));
        out
    }

    pub fn to_model(&self) -> Model {
        let mut m = self.template.clone();
        self.write_into(&mut m);
        m
    }

    /// Copies the flat values into a model of the same layout.
    pub fn write_into(&self, model: &mut Model) {
        assert_eq!(Layout::of(model), self.layout(), "layout mismatch");
        let mut it = self.values.iter();
        visit_mut(model, |_, v| *v = *it.next().expect("layout checked"));
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, GradError> {
        if values.len() != self.values.len() {
            return Err(GradError::Layout { expected: self.values.len(), found: values.len() });
        }
        Ok(Self { template: self.template.clone(), values })
    }
}

/// Target frames for one objective evaluation.
#[derive(Debug, Clone)]
pub struct FrameBatch<'a> {
    pub cam: &'a Camera,
    pub opts: RenderOptions,
    /// `(frame index, target image)`.
    pub items: Vec<(usize, &'a Image)>,
}

impl<'a> FrameBatch<'a> {
    pub fn all(cam: &'a Camera, opts: RenderOptions, targets: &'a [Image]) -> Self {
        Self { cam, opts, items: targets.iter().enumerate().collect() }
    }

    fn check(&self, model: &Model) -> Result<(), GradError> {
        if self.items.is_empty() {
            return Err(GradError::EmptyBatch);
        }
        let expected = (self.cam.width, self.cam.height);
        for &(frame, img) in &self.items {
            if frame >= model.num_frames() {
                return Err(GradError::FrameOutOfRange { frame, frames: model.num_frames() });
            }
            if img.dims() != expected {
                return Err(GradError::TargetSize { expected, found: img.dims() });
            }
        }
        Ok(())
    }

    fn normalizer(&self) -> f64 {
        (self.items.len() * self.cam.width * self.cam.height * 3) as f64
    }
}

/// Mean absolute RGB error over the batch.
pub fn loss(model: &Model, batch: &FrameBatch) -> Result<f64, GradError> {
    batch.check(model)?;
    let mut total = 0.0;
    for &(frame, target) in &batch.items {
        let img = model.render_frame(frame, batch.cam, &batch.opts)?;
        total += img.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    let l = total / batch.normalizer();
    if !l.is_finite() {
        return Err(GradError::NonFiniteLoss(l));
    }
    Ok(l)
}

/// Loss and its gradient as a [`Model`]-shaped value.
///
/// Frames are processed in batch order and primitives in index order, so the
/// result is bitwise reproducible.
pub fn loss_and_grad(model: &Model, batch: &FrameBatch) -> Result<(f64, Model), GradError> {
    batch.check(model)?;
    let norm = batch.normalizer();
    let mut grad = model.zeros_like();
    let mut total = 0.0;
    let mut offsets = Vec::with_capacity(model.primitives.len());
    let mut gaussians = Vec::with_capacity(model.primitives.len());
    for &(frame, target) in &batch.items {
        let z = &model.latents[frame];
        offsets.clear();
        gaussians.clear();
        for p in &model.primitives {
            let o = condition_primitive(p, z)?;
            gaussians.push(apply_offsets(p, o.d_mu, o.d_rot, o.d_scale)?);
            offsets.push(o);
        }
        let (img, tape) = render_forward(&gaussians, batch.cam, &batch.opts);
        let mut g_img = Image::black(img.width, img.height);
        for ((g, a), b) in g_img.data.iter_mut().zip(&img.data).zip(&target.data) {
            let d = a - b;
            total += d.abs();
            *g = if d > 0.0 {
                1.0 / norm
            } else if d < 0.0 {
                -1.0 / norm
            } else {
                0.0
            };
        }
        let g3 = render_backward(&tape, &g_img);
        let (prim_grads, latent_grads) = (&mut grad.primitives, &mut grad.latents);
        for ((p, o), (gp, g)) in model.primitives.iter().zip(&offsets).zip(prim_grads.iter_mut().zip(&g3)) {
            primitive_backward(p, o, z, g, 0.0, gp, &mut latent_grads[frame]);
        }
    }
    let l = total / norm;
    if !l.is_finite() {
        return Err(GradError::NonFiniteLoss(l));
    }
    Ok((l, grad))
}

/// [`loss_and_grad`] on the flat view.
pub fn grad_objective(model: &ParamSet, batch: &FrameBatch) -> Result<(f64, ParamSet), GradError> {
    let (l, g) = loss_and_grad(&model.to_model(), batch)?;
    Ok((l, ParamSet::from_model(&g)))
}

/// Adjoint of [`crate::conditioning::condition_fast`].
///
/// Accumulates `∂/∂(mu_a, mu_b, raw_L11, L21)` into `grad` and `∂/∂γ_b` into
/// `g_gamma`, given cotangents of the conditional mean and of the
/// log-determinant.
pub fn condition_fast_backward(
    block: &HyperGaussianBlock,
    gamma_b: &[f64],
    g_mu: &[f64],
    g_logdet: f64,
    grad: &mut HyperGaussianBlock,
    g_gamma: &mut [f64],
) {
    let m = block.m();
    let mut l11 = [0.0; 16];
    let l11 = if packed_len(m) <= 16 { &mut l11[..packed_len(m)] } else { unreachable!("attribute blocks have m <= 4") };
    block.activated_l11_into(l11);
    let mut w = [0.0; 4];
    let w = &mut w[..m];
    for (k, (g, mb)) in gamma_b.iter().zip(&block.mu_b).enumerate() {
        let d = g - mb;
        for (wj, l) in w.iter_mut().zip(&block.l21[k * m..(k + 1) * m]) {
            *wj += l * d;
        }
    }
    back_substitute_transposed(l11, m, w);
    for (ga, g) in grad.mu_a.iter_mut().zip(g_mu) {
        *ga += g;
    }
    // g_w = −g_mu; g_v = L11⁻¹ g_w
    let mut g_v = [0.0; 4];
    let g_v = &mut g_v[..m];
    for (gv, g) in g_v.iter_mut().zip(g_mu) {
        *gv = -g;
    }
    forward_substitute(l11, m, g_v);
    for i in 0..m {
        for j in 0..=i {
            let g_l = -w[i] * g_v[j];
            let k = packed_index(i, j);
            grad.raw_l11[k] += if i == j { g_l * l11[k] } else { g_l };
        }
        grad.raw_l11[packed_index(i, i)] -= 2.0 * g_logdet;
    }
    for (k, (g, mb)) in gamma_b.iter().zip(&block.mu_b).enumerate() {
        let d = g - mb;
        let row = &block.l21[k * m..(k + 1) * m];
        let g_row = &mut grad.l21[k * m..(k + 1) * m];
        let mut g_d = 0.0;
        for j in 0..m {
            g_row[j] += g_v[j] * d;
            g_d += row[j] * g_v[j];
        }
        g_gamma[k] += g_d;
        grad.mu_b[k] -= g_d;
    }
}

/// `∂L/∂q` for `R(q)` with `q` a unit quaternion, given `∂L/∂R`.
fn rotmat_backward([w, x, y, z]: [f64; 4], g: &Mat3) -> [f64; 4] {
    [
        2.0 * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]),
        2.0 * (y * g[0][1] + z * g[0][2] + y * g[1][0] - 2.0 * x * g[1][1] - w * g[1][2] + z * g[2][0] + w * g[2][1]
            - 2.0 * x * g[2][2]),
        2.0 * (-2.0 * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1]
            - 2.0 * y * g[2][2]),
        2.0 * (-2.0 * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - 2.0 * z * g[1][1] + y * g[1][2]
            + x * g[2][0]
            + y * g[2][1]),
    ]
}

/// Gradients of [`apply_offsets`] with respect to its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseGrad {
    pub base_mu: [f64; 3],
    pub base_rot: [f64; 4],
    pub base_scale: [f64; 3],
    pub opacity_raw: f64,
    pub color: [f64; 3],
    pub d_mu: [f64; 3],
    pub d_rot: [f64; 4],
    pub d_scale: [f64; 3],
}

/// Adjoint of [`apply_offsets`].
pub fn apply_offsets_backward(
    base: &HyperPrimitive,
    d_rot: [f64; 4],
    d_scale: [f64; 3],
    g: &Gaussian3DGrad,
) -> PoseGrad {
    let u: [f64; 4] = std::array::from_fn(|i| base.base_rot[i] + d_rot[i]);
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let q = u.map(|v| v / norm);
    let s: [f64; 3] = std::array::from_fn(|i| (base.base_scale[i] + d_scale[i]).exp());
    let r = unit_quat_to_rotmat(q);
    // Σ = M Mᵀ, M = R diag(s) ⇒ ∂L/∂M = (G + Gᵀ) M
    let mut g_r = [[0.0; 3]; 3];
    let mut g_log_s = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut g_m = 0.0;
            for k in 0..3 {
                g_m += (g.cov[i][k] + g.cov[k][i]) * r[k][j] * s[j];
            }
            g_r[i][j] = g_m * s[j];
            g_log_s[j] += g_m * r[i][j] * s[j];
        }
    }
    let g_q = rotmat_backward(q, &g_r);
    let dot: f64 = q.iter().zip(&g_q).map(|(a, b)| a * b).sum();
    let g_u: [f64; 4] = std::array::from_fn(|i| (g_q[i] - q[i] * dot) / norm);
    let o = sigmoid(base.opacity_raw);
    PoseGrad {
        base_mu: g.mu,
        base_rot: g_u,
        base_scale: g_log_s,
        opacity_raw: g.opacity * o * (1.0 - o),
        color: g.color,
        d_mu: g.mu,
        d_rot: g_u,
        d_scale: g_log_s,
    }
}

/// Full per-primitive adjoint: pose assembly then the three conditionals.
/// `g_sigma` is the cotangent of the summed uncertainty.
pub fn primitive_backward(
    prim: &HyperPrimitive,
    offsets: &ConditionedOffsets,
    z: &[f64],
    g: &Gaussian3DGrad,
    g_sigma: f64,
    grad: &mut HyperPrimitive,
    g_z: &mut [f64],
) {
    let pg = apply_offsets_backward(prim, offsets.d_rot, offsets.d_scale, g);
    let add = |dst: &mut [f64], src: &[f64]| dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
    add(&mut grad.base_mu, &pg.base_mu);
    add(&mut grad.base_rot, &pg.base_rot);
    add(&mut grad.base_scale, &pg.base_scale);
    grad.opacity_raw += pg.opacity_raw;
    add(&mut grad.color, &pg.color);
    condition_fast_backward(&prim.block_pos, z, &pg.d_mu, g_sigma, &mut grad.block_pos, g_z);
    condition_fast_backward(&prim.block_rot, z, &pg.d_rot, g_sigma, &mut grad.block_rot, g_z);
    condition_fast_backward(&prim.block_scale, z, &pg.d_scale, g_sigma, &mut grad.block_scale, g_z);
}

/// A scalar function with an analytic gradient.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Result of one finite-difference comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub op: String,
    /// `max |a − f| / max(|a|, |f|, GRAD_ABS_FLOOR)` over checked coordinates.
    pub max_rel_error: f64,
    pub argmax: usize,
    pub coords_checked: usize,
}

/// Coordinates probed for a `dim`-dimensional input: all of them up to
/// [`MAX_CHECKED_COORDS`], otherwise that many evenly strided indices.
pub fn checked_coordinates(dim: usize) -> Vec<usize> {
    if dim <= MAX_CHECKED_COORDS {
        (0..dim).collect()
    } else {
        (0..MAX_CHECKED_COORDS).map(|k| k * dim / MAX_CHECKED_COORDS).collect()
    }
}

/// Compares the analytic gradient of `f` at `point` with central differences
/// `(f(x+ε) − f(x−ε)) / 2ε`.
///
/// Panics unless `eps` lies in `[1e-8, 1e-3]`.
pub fn check_gradients(op: &str, f: &dyn Objective, point: &[f64], eps: f64) -> GradReport {
    assert!((1e-8..=1e-3).contains(&eps), "eps must lie in [1e-8, 1e-3]");
    let analytic = f.gradient(point);
    assert_eq!(analytic.len(), point.len());
    let mut x = point.to_vec();
    let mut worst = (0.0_f64, 0);
    let coords = checked_coordinates(point.len());
    for &i in &coords {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = f.value(&x);
        x[i] = orig - eps;
        let fm = f.value(&x);
        x[i] = orig;
        let fd = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(GRAD_ABS_FLOOR);
        if rel > worst.0 || rel.is_nan() {
            worst = (rel, i);
        }
    }
    GradReport { op: op.to_string(), max_rel_error: worst.0, argmax: worst.1, coords_checked: coords.len() }
}

/// `½ xᵀ A x + bᵀ x` with a symmetric `A`.
pub struct Quadratic {
    pub a: crate::linalg::Mat,
    pub b: Vec<f64>,
}

impl Objective for Quadratic {
    fn value(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut s = 0.0;
        for i in 0..n {
            s += self.b[i] * x[i];
            for j in 0..n {
                s += 0.5 * x[i] * self.a[(i, j)] * x[j];
            }
        }
        s
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len()).map(|i| self.b[i] + (0..x.len()).map(|j| self.a[(i, j)] * x[j]).sum::<f64>()).collect()
    }
}

/// `w_muᵀ μ_{a|b} + w_logdet · log det Σ_{a|b}` as a function of all block
/// parameters followed by `γ_b`.
pub struct ConditionObjective {
    pub partition: Partition,
    pub w_mu: Vec<f64>,
    pub w_logdet: f64,
}

impl ConditionObjective {
    fn split(&self, x: &[f64]) -> (HyperGaussianBlock, Vec<f64>) {
        let mut b = HyperGaussianBlock::zeros(self.partition);
        let mut it = x.iter();
        for v in b.mu_a.iter_mut().chain(&mut b.mu_b).chain(&mut b.raw_l11).chain(&mut b.l21) {
            *v = *it.next().expect("length");
        }
        (b, it.copied().collect())
    }

    pub fn pack(block: &HyperGaussianBlock, gamma_b: &[f64]) -> Vec<f64> {
        block.mu_a.iter().chain(&block.mu_b).chain(&block.raw_l11).chain(&block.l21).chain(gamma_b).copied().collect()
    }
}

impl Objective for ConditionObjective {
    fn value(&self, x: &[f64]) -> f64 {
        let (b, g) = self.split(x);
        let r = crate::conditioning::condition_fast(&b, &g).expect("consistent shapes");
        r.mu_cond.iter().zip(&self.w_mu).map(|(a, w)| a * w).sum::<f64>() + self.w_logdet * r.logdet_cov_cond
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (b, g) = self.split(x);
        let mut grad = HyperGaussianBlock::zeros(self.partition);
        let mut g_gamma = vec![0.0; g.len()];
        condition_fast_backward(&b, &g, &self.w_mu, self.w_logdet, &mut grad, &mut g_gamma);
        Self::pack(&grad, &g_gamma)
    }
}

/// `⟨W_mu, μ⟩ + ⟨W_cov, Σ⟩ + w_o·opacity + ⟨w_c, color⟩` of
/// [`apply_offsets`], over base pose (14 values) then offsets (10 values).
pub struct PoseObjective {
    pub weights: Gaussian3DGrad,
}

impl PoseObjective {
    fn split(x: &[f64]) -> (HyperPrimitive, [f64; 3], [f64; 4], [f64; 3]) {
        let mut p = HyperPrimitive::uncoupled([0.0; 3], [1.0, 0.0, 0.0, 0.0], [0.0; 3], 0.0, [0.0; 3], 0);
        p.base_mu.copy_from_slice(&x[0..3]);
        p.base_rot.copy_from_slice(&x[3..7]);
        p.base_scale.copy_from_slice(&x[7..10]);
        p.opacity_raw = x[10];
        p.color.copy_from_slice(&x[11..14]);
        (p, [x[14], x[15], x[16]], [x[17], x[18], x[19], x[20]], [x[21], x[22], x[23]])
    }
}

impl Objective for PoseObjective {
    fn value(&self, x: &[f64]) -> f64 {
        let (p, dm, dr, ds) = Self::split(x);
        let g = apply_offsets(&p, dm, dr, ds).expect("non-degenerate rotation");
        let w = &self.weights;
        let mut s = w.opacity * g.opacity;
        for i in 0..3 {
            s += w.mu[i] * g.mu[i] + w.color[i] * g.color[i];
            for j in 0..3 {
                s += w.cov[i][j] * g.cov[i][j];
            }
        }
        s
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (p, _, dr, ds) = Self::split(x);
        let g = apply_offsets_backward(&p, dr, ds, &self.weights);
        let mut out = Vec::with_capacity(24);
        out.extend_from_slice(&g.base_mu);
        out.extend_from_slice(&g.base_rot);
        out.extend_from_slice(&g.base_scale);
        out.push(g.opacity_raw);
        out.extend_from_slice(&g.color);
        out.extend_from_slice(&g.d_mu);
        out.extend_from_slice(&g.d_rot);
        out.extend_from_slice(&g.d_scale);
        out
    }
}

/// The full pipeline loss over a flattened model.
pub struct PipelineObjective<'a> {
    pub template: ParamSet,
    pub batch: FrameBatch<'a>,
}

impl Objective for PipelineObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let m = self.template.with_values(x.to_vec()).expect("length").to_model();
        loss(&m, &self.batch).unwrap_or(f64::NAN)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let p = self.template.with_values(x.to_vec()).expect("length");
        grad_objective(&p, &self.batch).map(|(_, g)| g.values).unwrap_or_else(|_| vec![f64::NAN; x.len()])
    }
}

/// A small random scene for pipeline gradient checks: `prims` primitives in
/// front of a `size`×`size` camera, `frames` frames with random latents and
/// random target images.
pub struct PipelineInstance {
    pub model: Model,
    pub cam: Camera,
    pub targets: Vec<Image>,
}

impl PipelineInstance {
    pub fn random(seed: u64, prims: usize, size: usize, latent_dim: usize, frames: usize) -> Self {
        let mut rng = rng::stream(seed, "gradcheck");
        let cam = Camera::look_at([0.0, 0.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0], 1.6 * size as f64, size, size);
        let uni = |rng: &mut Stream, lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
        let primitives = (0..prims)
            .map(|_| {
                let base_mu = [uni(&mut rng, -0.5, 0.5), uni(&mut rng, -0.5, 0.5), uni(&mut rng, -0.3, 0.3)];
                let base_rot = [1.0 + 0.3 * rng::normal(&mut rng), 0.3 * rng::normal(&mut rng), 0.3 * rng::normal(&mut rng), 0.3 * rng::normal(&mut rng)];
                let base_scale = [uni(&mut rng, -1.8, -1.0), uni(&mut rng, -1.8, -1.0), uni(&mut rng, -1.8, -1.0)];
                let opacity_raw = uni(&mut rng, -1.0, 0.5);
                let color = [uni(&mut rng, 0.1, 0.9), uni(&mut rng, 0.1, 0.9), uni(&mut rng, 0.1, 0.9)];
                let mut p = HyperPrimitive::uncoupled(base_mu, base_rot, base_scale, opacity_raw, color, latent_dim);
                for b in [&mut p.block_pos, &mut p.block_rot, &mut p.block_scale] {
                    b.mu_a = rng::normals(&mut rng, b.m(), 0.05);
                    b.mu_b = rng::normals(&mut rng, b.n(), 0.3);
                    b.raw_l11 = rng::normals(&mut rng, b.raw_l11.len(), 0.2);
                    b.l21 = rng::normals(&mut rng, b.l21.len(), 0.1);
                }
                p
            })
            .collect();
        let latents = (0..frames).map(|_| rng::normals(&mut rng, latent_dim, 1.0)).collect();
        let targets = (0..frames)
            .map(|_| Image { width: size, height: size, data: (0..size * size * 3).map(|_| uni(&mut rng, 0.05, 0.95)).collect() })
            .collect();
        Self { model: Model { primitives, latents }, cam, targets }
    }

    /// Exact (untruncated) rendering keeps the loss smooth for finite
    /// differences.
    pub fn objective(&self) -> PipelineObjective<'_> {
        PipelineObjective {
            template: ParamSet::from_model(&self.model),
            batch: FrameBatch::all(&self.cam, RenderOptions::exact(), &self.targets),
        }
    }
}

/// Operators the `gradcheck` command knows how to probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradOp {
    Quadratic,
    ConditionFast,
    ApplyOffsets,
    Pipeline,
}

impl GradOp {
    pub const ALL: [GradOp; 4] = [GradOp::Quadratic, GradOp::ConditionFast, GradOp::ApplyOffsets, GradOp::Pipeline];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::Quadratic => "quadratic",
            GradOp::ConditionFast => "condition_fast",
            GradOp::ApplyOffsets => "apply_offsets",
            GradOp::Pipeline => "pipeline",
        }
    }

    /// Runs the check on a seeded random instance.
    pub fn check(self, seed: u64, eps: f64) -> GradReport {
        let mut rng = rng::stream(seed, self.name());
        match self {
            GradOp::Quadratic => {
                let n = 6;
                let r = crate::linalg::Mat::from_vec(n, n, rng::normals(&mut rng, n * n, 1.0)).expect("finite");
                let a = r.matmul(&r.transpose()).expect("square");
                let q = Quadratic { a, b: rng::normals(&mut rng, n, 1.0) };
                check_gradients(self.name(), &q, &rng::normals(&mut rng, n, 1.0), eps)
            }
            GradOp::ConditionFast => {
                let partition = Partition { m: 3, n: 8 };
                let mut b = HyperGaussianBlock::zeros(partition);
                b.mu_a = rng::normals(&mut rng, 3, 1.0);
                b.mu_b = rng::normals(&mut rng, 8, 1.0);
                b.raw_l11 = rng::normals(&mut rng, 6, 0.3);
                b.l21 = rng::normals(&mut rng, 24, 0.5);
                let gamma = rng::normals(&mut rng, 8, 1.0);
                let f = ConditionObjective { partition, w_mu: rng::normals(&mut rng, 3, 1.0), w_logdet: rng.random() };
                check_gradients(self.name(), &f, &ConditionObjective::pack(&b, &gamma), eps)
            }
            GradOp::ApplyOffsets => {
                let mut x = rng::normals(&mut rng, 24, 0.3);
                x[3] += 1.0;
                let w = Gaussian3DGrad {
                    mu: std::array::from_fn(|_| rng::normal(&mut rng)),
                    cov: std::array::from_fn(|_| std::array::from_fn(|_| rng::normal(&mut rng))),
                    opacity: rng::normal(&mut rng),
                    color: std::array::from_fn(|_| rng::normal(&mut rng)),
                };
                check_gradients(self.name(), &PoseObjective { weights: w }, &x, eps)
            }
            GradOp::Pipeline => {
                let inst = PipelineInstance::random(seed, 4, 8, 2, 2);
                let f = inst.objective();
                let x = f.template.values.clone();
                check_gradients(self.name(), &f, &x, eps)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(n: usize, frames: usize) -> Model {
        let mut rng = rng::stream(3, "test");
        let primitives = (0..2)
            .map(|i| HyperPrimitive::new([i as f64, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [-2.0; 3], 0.0, [0.5; 3], n, &mut rng))
            .collect();
        Model { primitives, latents: vec![vec![0.25; n]; frames] }
    }

    #[test]
    fn layout_counts_every_scalar() {
        let m = small_model(3, 4);
        let p = ParamSet::from_model(&m);
        assert_eq!(p.values.len(), p.layout().len());
        assert_eq!(p.layout().primitive_stride(), 46 + 13 * 3);
        assert_eq!(p.to_model(), m);
    }

    #[test]
    fn static_layout_has_no_latent_slots() {
        let p = ParamSet::from_model(&small_model(0, 5));
        assert!(!p.groups().contains(&ParamGroup::Latent));
        assert_eq!(p.values.len(), 2 * 46);
    }

    #[test]
    fn logdet_gradient_is_minus_two_per_raw_diagonal() {
        let mut block = HyperGaussianBlock::zeros(Partition { m: 3, n: 2 });
        block.raw_l11 = vec![0.3, 0.1, -0.4, 0.2, 0.05, 0.9];
        let mut grad = HyperGaussianBlock::zeros(block.partition);
        let mut g_gamma = vec![0.0; 2];
        condition_fast_backward(&block, &[0.7, -0.2], &[0.0; 3], 1.0, &mut grad, &mut g_gamma);
        assert_eq!(grad.raw_l11, vec![-2.0, 0.0, -2.0, 0.0, 0.0, -2.0]);
        assert_eq!(g_gamma, vec![0.0, 0.0]);
    }

    #[test]
    fn quadratic_check_is_exact() {
        let r = GradOp::Quadratic.check(1, 1e-3);
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn empty_batch_is_rejected() {
        let m = small_model(1, 1);
        let cam = Camera::look_at([0.0, 0.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0], 10.0, 4, 4);
        let batch = FrameBatch { cam: &cam, opts: RenderOptions::default(), items: vec![] };
        assert!(matches!(loss_and_grad(&m, &batch), Err(GradError::EmptyBatch)));
    }
}
