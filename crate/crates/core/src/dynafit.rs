//! Synthetic dynamic scenes and the per-frame-latent fitting loop.
//!
//! A scene is a set of ground-truth Gaussians animated by a named preset and
//! rendered from a fixed camera. A fit places one [`HyperPrimitive`] per
//! anchor point of the scene, gives every frame its own free latent code, and
//! minimizes the L1 photometric loss with Adam. `latent_dim = 0` is the
//! static baseline.
//!
//! Presets, with about a quarter of the primitives in the deforming region:
//!
//! * `swirl`: primitives near the image center rotate about the view axis by
//!   an angle that decays with radius and oscillates over time.
//! * `blink`: primitives in the top band collapse along y (down to
//!   `1 − amplitude` of their height) and sag slightly, three blinks per clip.
//! * `glint`: primitives in the right band flash toward white.

use crate::gradients::{self, FrameBatch, GradError, Model, ParamGroup, ParamSet};
use crate::hypergauss::{covariance_from_unit, logit, sigmoid, Gaussian3D, HyperPrimitive, SCHEMA_VERSION};
use crate::rng;
use crate::splat::{rasterize, render_forward, Camera, Image, RenderOptions, SplatError};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
/// Camera distance from the scene origin.
pub const EYE_DISTANCE: f64 = 3.0;
pub const PRESETS: [&str; 3] = ["swirl", "blink", "glint"];

#[derive(Debug, Error)]
pub enum FitError {
    #[error("unknown preset {0:?} (expected one of swirl, blink, glint)")]
    UnknownPreset(String),
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Splat(#[from] SplatError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything needed to regenerate a scene bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub schema_version: u32,
    pub preset: String,
    pub seed: u64,
    pub num_frames: usize,
    pub num_primitives: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
    /// Preset strength: swirl angle in radians, blink collapse fraction,
    /// glint blend toward white.
    pub amplitude: f64,
}

impl SceneSpec {
    /// Defaults for `preset`: 64 primitives, 64×64, 60 frames.
    pub fn preset(preset: &str, seed: u64) -> Self {
        let amplitude = match preset {
            "swirl" => 0.8,
            "glint" => 0.8,
            _ => 0.7,
        };
        Self {
            schema_version: SCHEMA_VERSION,
            preset: preset.to_string(),
            seed,
            num_frames: 60,
            num_primitives: 64,
            width: 64,
            height: 64,
            focal: 100.0,
            amplitude,
        }
    }

    pub fn camera(&self) -> Camera {
        Camera::look_at([0.0, 0.0, EYE_DISTANCE], [0.0; 3], [0.0, 1.0, 0.0], self.focal, self.width, self.height)
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(FitError::SchemaVersion(self.schema_version));
        }
        if !PRESETS.contains(&self.preset.as_str()) {
            return Err(FitError::UnknownPreset(self.preset.clone()));
        }
        if self.num_frames == 0 || self.num_primitives == 0 {
            return Err(FitError::Scene("need at least one frame and one primitive".into()));
        }
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0) {
            return Err(FitError::Scene("image size and focal length must be positive".into()));
        }
        if !self.amplitude.is_finite() {
            return Err(FitError::Scene("amplitude must be finite".into()));
        }
        Ok(())
    }
}

/// Ground-truth frames plus the rest pose they were animated from.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSequence {
    pub spec: SceneSpec,
    pub cam: Camera,
    pub frames: Vec<Image>,
    /// Undeformed ground-truth Gaussians.
    pub rest: Vec<Gaussian3D>,
    /// Whether each rest Gaussian lies in the preset's deforming region.
    pub deforming: Vec<bool>,
}

impl SceneSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

fn in_region(preset: &str, mu: [f64; 3]) -> bool {
    match preset {
        "swirl" => (mu[0] * mu[0] + mu[1] * mu[1]).sqrt() < 0.45,
        "blink" => mu[1] > 0.4,
        _ => mu[0] > 0.4,
    }
}

/// Bump in `[0, 1]` peaking `blinks` times over the clip.
fn pulse(t: f64, blinks: f64, width: f64) -> f64 {
    let phase = (t * blinks).fract();
    (-((phase - 0.5) / width).powi(2)).exp()
}

/// Quaternion of a rotation by `theta` about the z axis.
fn z_rotation(theta: f64) -> [f64; 4] {
    [(0.5 * theta).cos(), 0.0, 0.0, (0.5 * theta).sin()]
}

fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

struct RestPrimitive {
    mu: [f64; 3],
    rot: [f64; 4],
    scale: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl RestPrimitive {
    fn gaussian(&self) -> Gaussian3D {
        Gaussian3D { mu: self.mu, cov: covariance_from_unit(self.rot, self.scale), opacity: self.opacity, color: self.color }
    }
}

fn animate(spec: &SceneSpec, p: &RestPrimitive, region: bool, t: f64) -> Gaussian3D {
    if !region {
        return p.gaussian();
    }
    let a = spec.amplitude;
    match spec.preset.as_str() {
        "swirl" => {
            let r2 = p.mu[0] * p.mu[0] + p.mu[1] * p.mu[1];
            let theta = a * (2.0 * std::f64::consts::PI * t).sin() * (-r2 / 0.09).exp();
            let (s, c) = theta.sin_cos();
            let mu = [c * p.mu[0] - s * p.mu[1], s * p.mu[0] + c * p.mu[1], p.mu[2]];
            let rot = quat_mul(z_rotation(theta), p.rot);
            Gaussian3D { mu, cov: covariance_from_unit(rot, p.scale), opacity: p.opacity, color: p.color }
        }
        "blink" => {
            let k = pulse(t, 3.0, 0.12);
            let scale = [p.scale[0], p.scale[1] * (1.0 - a * k), p.scale[2]];
            let mu = [p.mu[0], p.mu[1] - 0.05 * k, p.mu[2]];
            Gaussian3D { mu, cov: covariance_from_unit(p.rot, scale), opacity: p.opacity, color: p.color }
        }
        _ => {
            let k = a * pulse(t, 2.0, 0.08);
            let color = p.color.map(|c| c + k * (1.0 - c));
            let opacity = p.opacity + k * (0.99 - p.opacity);
            Gaussian3D { mu: p.mu, cov: p.gaussian().cov, opacity, color }
        }
    }
}

/// Generates and renders a scene. Reproducible from `spec` alone.
pub fn make_scene(spec: &SceneSpec) -> Result<SceneSequence, FitError> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, "scene");
    let rest: Vec<RestPrimitive> = (0..spec.num_primitives)
        .map(|_| {
            let mu = [r.random_range(-0.8..0.8), r.random_range(-0.8..0.8), r.random_range(-0.1..0.1)];
            let angle = r.random_range(0.0..std::f64::consts::PI);
            let scale = [r.random_range(0.08..0.15), r.random_range(0.08..0.15), 0.1];
            let color = [r.random_range(0.1..1.0), r.random_range(0.1..1.0), r.random_range(0.1..1.0)];
            RestPrimitive { mu, rot: z_rotation(angle), scale, opacity: 0.8, color }
        })
        .collect();
    let deforming: Vec<bool> = rest.iter().map(|p| in_region(&spec.preset, p.mu)).collect();
    let cam = spec.camera();
    let frames = (0..spec.num_frames)
        .map(|f| {
            let t = f as f64 / spec.num_frames as f64;
            let gs: Vec<Gaussian3D> = rest.iter().zip(&deforming).map(|(p, &d)| animate(spec, p, d, t)).collect();
            rasterize(&gs, &cam)
        })
        .collect();
    Ok(SceneSequence {
        spec: spec.clone(),
        cam,
        frames,
        rest: rest.iter().map(RestPrimitive::gaussian).collect(),
        deforming,
    })
}

/// Writes every frame as `frame_0000.ppm`, ... into `dir`.
pub fn export_frames(scene: &SceneSequence, dir: impl AsRef<Path>) -> Result<(), FitError> {
    std::fs::create_dir_all(dir.as_ref())?;
    for (i, f) in scene.frames.iter().enumerate() {
        f.write_ppm(dir.as_ref().join(format!("frame_{i:04}.ppm")))?;
    }
    Ok(())
}

/// Optimizer and model settings for [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub latent_dim: usize,
    pub iterations: usize,
    /// Step size of the HyperGaussian parameters (`mu_a`, `mu_b`, `raw_L11`, `L21`).
    pub lr: f64,
    pub lr_latent: f64,
    pub lr_position: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Model primitives; primitive `i` is anchored at rest Gaussian
    /// `i mod scene size`.
    pub num_primitives: usize,
    /// Std of the position jitter applied to the anchors.
    pub init_jitter: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            iterations: 400,
            lr: 1e-4,
            lr_latent: 1e-2,
            lr_position: 1e-3,
            lr_rotation: 1e-3,
            lr_scale: 5e-3,
            lr_opacity: 5e-2,
            lr_color: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            num_primitives: 64,
            init_jitter: 0.02,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let rates = [
            ("lr", self.lr),
            ("lr_latent", self.lr_latent),
            ("lr_position", self.lr_position),
            ("lr_rotation", self.lr_rotation),
            ("lr_scale", self.lr_scale),
            ("lr_opacity", self.lr_opacity),
            ("lr_color", self.lr_color),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FitError::Config(format!("{name} must be positive")));
            }
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(FitError::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(FitError::Config("adam_eps must be positive".into()));
        }
        if self.num_primitives == 0 {
            return Err(FitError::Config("num_primitives must be positive".into()));
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return Err(FitError::Config("init_jitter must be non-negative".into()));
        }
        Ok(())
    }

    fn rate(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Position => self.lr_position,
            ParamGroup::Rotation => self.lr_rotation,
            ParamGroup::Scale => self.lr_scale,
            ParamGroup::Opacity => self.lr_opacity,
            ParamGroup::Color => self.lr_color,
            ParamGroup::Hyper => self.lr,
            ParamGroup::Latent => self.lr_latent,
        }
    }
}

/// Initial model: anchors from the scene's rest pose plus jitter, identity
/// rotation, scale 0.1, opacity 0.5, gray, fresh blocks and zero latents.
pub fn init_model(scene: &SceneSequence, cfg: &FitConfig) -> Model {
    let mut r = rng::stream(cfg.seed, "init");
    let primitives = (0..cfg.num_primitives)
        .map(|i| {
            let a = scene.rest[i % scene.rest.len()].mu;
            let j = rng::normals(&mut r, 3, cfg.init_jitter);
            let mu = [a[0] + j[0], a[1] + j[1], a[2] + j[2]];
            HyperPrimitive::new(mu, [1.0, 0.0, 0.0, 0.0], [0.1f64.ln(); 3], logit(0.5), [0.5; 3], cfg.latent_dim, &mut r)
        })
        .collect();
    Model { primitives, latents: vec![vec![0.0; cfg.latent_dim]; scene.num_frames()] }
}

/// Adam over a flat parameter vector with one step size per scalar.
#[derive(Debug, Clone)]
pub struct Adam {
    rates: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
}

impl Adam {
    pub fn new(rates: Vec<f64>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let n = rates.len();
        Self { rates, m: vec![0.0; n], v: vec![0.0; n], beta1, beta2, eps, t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.rates[i] * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    /// `loss_trace[k]` is the loss after `k` steps; length `iterations + 1`.
    pub loss_trace: Vec<f64>,
    pub psnr: Vec<f64>,
    pub wall_time_s: f64,
    pub model: Model,
}

impl FitReport {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace is never empty")
    }

    /// Mean of the per-frame PSNR values.
    pub fn mean_psnr(&self) -> f64 {
        self.psnr.iter().sum::<f64>() / self.psnr.len() as f64
    }
}

/// Fits a model to every frame of `scene` with full-batch Adam.
pub fn fit(scene: &SceneSequence, cfg: &FitConfig) -> Result<FitReport, FitError> {
    fit_from(scene, cfg, init_model(scene, cfg))
}

/// [`fit`] starting from a given model.
pub fn fit_from(scene: &SceneSequence, cfg: &FitConfig, model: Model) -> Result<FitReport, FitError> {
    cfg.validate()?;
    if model.num_frames() != scene.num_frames() || model.latent_dim() != cfg.latent_dim {
        return Err(FitError::DimensionMismatch(format!(
            "model has {} frames of dimension {}, expected {} of dimension {}",
            model.num_frames(),
            model.latent_dim(),
            scene.num_frames(),
            cfg.latent_dim
        )));
    }
    let start = Instant::now();
    let batch = FrameBatch::all(&scene.cam, RenderOptions::default(), &scene.frames);
    let mut params = ParamSet::from_model(&model);
    let groups = params.groups();
    let color_mask: Vec<bool> = groups.iter().map(|g| *g == ParamGroup::Color).collect();
    let mut adam = Adam::new(groups.iter().map(|g| cfg.rate(*g)).collect(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut model = model;
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    for _ in 0..cfg.iterations {
        let (l, g) = gradients::loss_and_grad(&model, &batch)?;
        trace.push(l);
        let g = ParamSet::from_model(&g);
        adam.step(&mut params.values, &g.values);
        for (v, is_color) in params.values.iter_mut().zip(&color_mask) {
            if *is_color {
                *v = v.clamp(0.0, 1.0);
            }
        }
        params.write_into(&mut model);
    }
    trace.push(gradients::loss(&model, &batch)?);
    let psnr = evaluate(&model, scene)?;
    Ok(FitReport { loss_trace: trace, psnr, wall_time_s: start.elapsed().as_secs_f64(), model })
}

/// `10·log10(1 / MSE)` over all RGB samples, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64, FitError> {
    if a.dims() != b.dims() {
        return Err(FitError::DimensionMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Per-frame PSNR of the model's renders against the scene.
pub fn evaluate(model: &Model, scene: &SceneSequence) -> Result<Vec<f64>, FitError> {
    if model.num_frames() != scene.num_frames() {
        return Err(FitError::DimensionMismatch(format!(
            "model has {} latents, scene has {} frames",
            model.num_frames(),
            scene.num_frames()
        )));
    }
    let opts = RenderOptions::default();
    (0..scene.num_frames())
        .map(|f| psnr(&model.render_frame(f, &scene.cam, &opts)?, &scene.frames[f]))
        .collect()
}

/// Summed log-determinant of the three conditionals of `p`.
pub fn primitive_sigma(p: &HyperPrimitive) -> f64 {
    p.blocks().iter().map(|b| -2.0 * (0..b.m()).map(|i| b.raw_diag(i)).sum::<f64>()).sum()
}

const LOW: [f64; 3] = [0x66 as f64 / 255.0, 0xB5 as f64 / 255.0, 0x6B as f64 / 255.0];
const HIGH: [f64; 3] = [1.0, 0.0, 0.0];

/// Green for 0, red for 1, linear in between.
pub fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    std::array::from_fn(|i| LOW[i] + t * (HIGH[i] - LOW[i]))
}

/// Renders frame `frame` with every primitive recolored by
/// `colormap(sigmoid(σ))`.
pub fn uncertainty_map(model: &Model, cam: &Camera, frame: usize) -> Result<Image, FitError> {
    let z = model
        .latents
        .get(frame)
        .ok_or_else(|| FitError::DimensionMismatch(format!("frame {frame} of {}", model.num_frames())))?;
    let mut gs = model.gaussians(z)?;
    for (g, p) in gs.iter_mut().zip(&model.primitives) {
        g.color = colormap(sigmoid(primitive_sigma(p)));
    }
    Ok(render_forward(&gs, cam, &RenderOptions::default()).0)
}

/// Mean σ over model primitives anchored in the deforming region and over
/// the rest. `None` for an empty side.
pub fn region_sigma_means(model: &Model, scene: &SceneSequence) -> (Option<f64>, Option<f64>) {
    let (mut d, mut s) = (Vec::new(), Vec::new());
    for (i, p) in model.primitives.iter().enumerate() {
        let side = if scene.deforming[i % scene.deforming.len()] { &mut d } else { &mut s };
        side.push(primitive_sigma(p));
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    (mean(&d), mean(&s))
}

/// Fitted model plus the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub scene: SceneSpec,
    pub config: FitConfig,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(scene: &SceneSpec, config: &FitConfig, model: &Model) -> Self {
        Self { schema_version: SCHEMA_VERSION, scene: scene.clone(), config: config.clone(), model: model.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, FitError> {
        let c: Self = serde_json::from_str(s)?;
        if c.schema_version != SCHEMA_VERSION {
            return Err(FitError::SchemaVersion(c.schema_version));
        }
        for p in &c.model.primitives {
            p.validate().map_err(GradError::from)?;
        }
        Ok(c)
    }
}

/// `iteration,loss` rows.
pub fn write_trace_csv(trace: &[f64], path: impl AsRef<Path>) -> Result<(), FitError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "loss"])?;
    for (i, l) in trace.iter().enumerate() {
        w.write_record([i.to_string(), format!("{l:e}")])?;
    }
    w.flush()?;
    Ok(())
}
