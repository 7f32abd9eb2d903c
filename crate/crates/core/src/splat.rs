//! Deterministic CPU rasterizer for 3D Gaussians.
//!
//! Gaussians are projected with the local affine (EWA) approximation
//! `Σ₂D = J W Σ Wᵀ Jᵀ + 0.3·I`, sorted once per image by camera depth (ties by
//! input index) and alpha-blended front to back:
//!
//! ```text
//! C = Σᵢ cᵢ αᵢ′ Πⱼ<ᵢ (1 − αⱼ′),   αᵢ′ = αᵢ · exp(−½ dᵀ Σ₂D⁻¹ d)
//! ```
//!
//! Pixel `(x, y)` is sampled at the integer coordinate `(x, y)`. The forward
//! pass can keep a [`RenderTape`] from which [`render_backward`] propagates an
//! image cotangent back to every input Gaussian.

use crate::hypergauss::Gaussian3D;
use crate::linalg::{LinalgError, Mat2, Mat3};
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

/// Low-pass dilation added to the diagonal of every projected covariance, px².
pub const COV2_DILATION: f64 = 0.3;
/// Blending for a pixel stops once transmittance falls below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Default support radius of a splat, in standard deviations.
pub const DEFAULT_EXTENT_SIGMA: f64 = 3.0;

const TILE: usize = 16;

#[derive(Debug, Error)]
pub enum SplatError {
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("image is {found:?}, expected {expected:?}")]
    Dimensions { expected: (usize, usize), found: (usize, usize) },
    #[error("malformed PPM: {0}")]
    Ppm(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Pinhole camera with a rigid world-to-camera transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub view: [[f64; 4]; 4],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

impl Camera {
    /// Camera at `eye` looking at `target`; +y of the image points along
    /// `-up` (image rows grow downward).
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], focal: f64, width: usize, height: usize) -> Self {
        let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let cross = |a: [f64; 3], b: [f64; 3]| {
            [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
        };
        let norm = |a: [f64; 3]| {
            let l = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            [a[0] / l, a[1] / l, a[2] / l]
        };
        let forward = norm(sub(target, eye));
        let right = norm(cross(forward, up));
        let down = cross(forward, right);
        let rows = [right, down, forward];
        let mut view = [[0.0; 4]; 4];
        for (i, r) in rows.iter().enumerate() {
            view[i][..3].copy_from_slice(r);
            view[i][3] = -(r[0] * eye[0] + r[1] * eye[1] + r[2] * eye[2]);
        }
        view[3][3] = 1.0;
        Self {
            view,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            near: 0.01,
        }
    }

    pub fn rotation(&self) -> Mat3 {
        std::array::from_fn(|i| [self.view[i][0], self.view[i][1], self.view[i][2]])
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| {
            self.view[i][0] * p[0] + self.view[i][1] * p[1] + self.view[i][2] * p[2] + self.view[i][3]
        })
    }

    pub fn validate(&self) -> Result<(), SplatError> {
        let bad = |s: &str| Err(SplatError::Camera(s.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.near > 0.0) {
            return bad("near plane must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image must be non-empty");
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    return bad("view rotation is not orthonormal");
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-9 {
            return bad("view rotation has determinant != +1");
        }
        if self.view[3] != [0.0, 0.0, 0.0, 1.0] {
            return bad("view must be affine");
        }
        Ok(())
    }
}

/// RGB image, row-major, samples nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn black(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self { width, height, data: rgb.iter().copied().cycle().take(width * height * 3).collect() }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Binary PPM (P6, 8-bit), samples rounded after clamping to `[0, 1]`.
    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<(), SplatError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_ppm_bytes())?;
        Ok(())
    }

    pub fn from_ppm_bytes(bytes: &[u8]) -> Result<Self, SplatError> {
        let err = |s: &str| SplatError::Ppm(s.to_string());
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(err("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| err("header not ascii"))?);
        }
        if fields[0] != "P6" {
            return Err(err("not a P6 file"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| err("bad header number"));
        let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval != 255 {
            return Err(err("only 8-bit PPM is supported"));
        }
        let body = &bytes[pos + 1..];
        if body.len() != width * height * 3 {
            return Err(err("pixel data length does not match header"));
        }
        Ok(Self { width, height, data: body.iter().map(|&b| f64::from(b) / 255.0).collect() })
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self, SplatError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_ppm_bytes(&bytes)
    }
}

/// Image-plane footprint of a Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub mu2: [f64; 2],
    pub cov2: Mat2,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Support radius in standard deviations; `f64::INFINITY` evaluates every
    /// Gaussian at every pixel and disables viewport culling.
    pub extent_sigma: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { extent_sigma: DEFAULT_EXTENT_SIGMA }
    }
}

impl RenderOptions {
    pub fn exact() -> Self {
        Self { extent_sigma: f64::INFINITY }
    }
}

/// Everything the projection produces for one Gaussian, including the
/// quantities its adjoint needs.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    mu2: [f64; 2],
    cov2: Mat2,
    depth: f64,
    p_cam: [f64; 3],
    /// `J·W`, 2×3.
    jw: [[f64; 3]; 2],
}

fn footprint(g: &Gaussian3D, cam: &Camera) -> Option<Footprint> {
    let p = cam.to_camera(g.mu);
    let [x, y, z] = p;
    if !(z >= cam.near) {
        return None;
    }
    let w = cam.rotation();
    let j = [[cam.fx / z, 0.0, -cam.fx * x / (z * z)], [0.0, cam.fy / z, -cam.fy * y / (z * z)]];
    let jw: [[f64; 3]; 2] = std::array::from_fn(|r| std::array::from_fn(|c| (0..3).map(|k| j[r][k] * w[k][c]).sum()));
    let mut cov2 = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let mut s = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    s += jw[r][a] * g.cov[a][b] * jw[c][b];
                }
            }
            cov2[r][c] = s;
        }
    }
    cov2[0][0] += COV2_DILATION;
    cov2[1][1] += COV2_DILATION;
    let mu2 = [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy];
    Some(Footprint { mu2, cov2, depth: z, p_cam: p, jw })
}

/// Largest eigenvalue of a symmetric 2×2.
fn max_eigen(c: &Mat2) -> f64 {
    let mid = 0.5 * (c[0][0] + c[1][1]);
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    mid + (mid * mid - det).max(0.0).sqrt()
}

/// Inclusive pixel bounds `(x0, x1, y0, y1)` of a footprint, or `None` when
/// its support misses the viewport.
fn pixel_bounds(mu2: [f64; 2], cov2: &Mat2, extent: f64, cam: &Camera) -> Option<(usize, usize, usize, usize)> {
    let (w, h) = (cam.width as f64, cam.height as f64);
    if extent.is_infinite() {
        return Some((0, cam.width - 1, 0, cam.height - 1));
    }
    let r = extent * max_eigen(cov2).sqrt();
    let x0 = (mu2[0] - r).ceil().max(0.0);
    let x1 = (mu2[0] + r).floor().min(w - 1.0);
    let y0 = (mu2[1] - r).ceil().max(0.0);
    let y1 = (mu2[1] + r).floor().min(h - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
}

/// Projects a Gaussian; `None` means culled (behind the near plane or
/// entirely outside the viewport at 3σ).
pub fn project(g: &Gaussian3D, cam: &Camera) -> Option<Projected> {
    project_with(g, cam, &RenderOptions::default())
}

pub fn project_with(g: &Gaussian3D, cam: &Camera, opts: &RenderOptions) -> Option<Projected> {
    let f = footprint(g, cam)?;
    pixel_bounds(f.mu2, &f.cov2, opts.extent_sigma, cam)?;
    Some(Projected { mu2: f.mu2, cov2: f.cov2, depth: f.depth })
}

/// `[a, b, c]` of the inverse of a symmetric 2×2 `[[A, B], [B, C]]`.
fn conic(cov2: &Mat2) -> Option<[f64; 3]> {
    let det = cov2[0][0] * cov2[1][1] - cov2[0][1] * cov2[1][0];
    if !(det > 0.0 && cov2[0][0] > 0.0) {
        return None;
    }
    Some([cov2[1][1] / det, -cov2[0][1] / det, cov2[0][0] / det])
}

/// `exp(−½ (x−μ)ᵀ Σ⁻¹ (x−μ))` for a 2D Gaussian.
pub fn density_2d(mu2: [f64; 2], cov2: &Mat2, pixel: [f64; 2]) -> Result<f64, LinalgError> {
    let [a, b, c] = conic(cov2).ok_or(LinalgError::NotPositiveDefinite { index: 0, value: cov2[0][0] })?;
    let (dx, dy) = (pixel[0] - mu2[0], pixel[1] - mu2[1]);
    Ok((-0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)).exp())
}

#[derive(Debug, Clone)]
struct Splat {
    index: usize,
    fp: Footprint,
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    cov3: Mat3,
}

/// Forward state of one render, enough to run the adjoint.
#[derive(Debug, Clone)]
pub struct RenderTape {
    width: usize,
    height: usize,
    extent_sq: f64,
    splats: Vec<Splat>,
    tiles_x: usize,
    tile_lists: Vec<Vec<u32>>,
    /// Number of tile-list entries visited per pixel.
    visited: Vec<u32>,
    final_t: Vec<f64>,
    weight_sum: Vec<f64>,
    /// Pre-clamp colors.
    raw: Vec<f64>,
    num_inputs: usize,
    rotation: Mat3,
    fx: f64,
    fy: f64,
}

impl RenderTape {
    /// Transmittance left after blending pixel `(x, y)`.
    pub fn final_transmittance(&self, x: usize, y: usize) -> f64 {
        self.final_t[y * self.width + x]
    }

    /// `Σᵢ αᵢ′ Πⱼ<ᵢ(1 − αⱼ′)` at pixel `(x, y)`.
    pub fn weight_sum(&self, x: usize, y: usize) -> f64 {
        self.weight_sum[y * self.width + x]
    }

    /// Blended color before clamping.
    pub fn raw_pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.raw[i], self.raw[i + 1], self.raw[i + 2]]
    }

    /// Number of Gaussians that survived culling.
    pub fn visible(&self) -> usize {
        self.splats.len()
    }
}

/// Renders with default options.
pub fn rasterize(gaussians: &[Gaussian3D], cam: &Camera) -> Image {
    render_forward(gaussians, cam, &RenderOptions::default()).0
}

pub fn rasterize_with(gaussians: &[Gaussian3D], cam: &Camera, opts: &RenderOptions) -> Image {
    render_forward(gaussians, cam, opts).0
}

/// Renders and keeps the tape for [`render_backward`].
pub fn render_forward(gaussians: &[Gaussian3D], cam: &Camera, opts: &RenderOptions) -> (Image, RenderTape) {
    let (w, h) = (cam.width, cam.height);
    let mut splats: Vec<Splat> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(index, g)| {
            let fp = footprint(g, cam)?;
            let conic = conic(&fp.cov2)?;
            Some(Splat { index, fp, conic, opacity: g.opacity, color: g.color, cov3: g.cov })
        })
        .collect();
    splats.sort_by(|a, b| a.fp.depth.total_cmp(&b.fp.depth).then(a.index.cmp(&b.index)));

    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    let mut kept = Vec::with_capacity(splats.len());
    for s in splats {
        let Some((x0, x1, y0, y1)) = pixel_bounds(s.fp.mu2, &s.fp.cov2, opts.extent_sigma, cam) else {
            continue;
        };
        let id = kept.len() as u32;
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                tile_lists[ty * tiles_x + tx].push(id);
            }
        }
        kept.push(s);
    }

    let extent_sq = opts.extent_sigma * opts.extent_sigma;
    let mut tape = RenderTape {
        width: w,
        height: h,
        extent_sq,
        splats: kept,
        tiles_x,
        tile_lists,
        visited: vec![0; w * h],
        final_t: vec![1.0; w * h],
        weight_sum: vec![0.0; w * h],
        raw: vec![0.0; w * h * 3],
        num_inputs: gaussians.len(),
        rotation: cam.rotation(),
        fx: cam.fx,
        fy: cam.fy,
    };
    let mut image = Image::black(w, h);
    for y in 0..h {
        for x in 0..w {
            let list = &tape.tile_lists[(y / TILE) * tiles_x + x / TILE];
            let (px, py) = (x as f64, y as f64);
            let mut t = 1.0;
            let mut acc = [0.0; 3];
            let mut wsum = 0.0;
            let mut visited = 0;
            for &id in list {
                visited += 1;
                let s = &tape.splats[id as usize];
                let (dx, dy) = (px - s.fp.mu2[0], py - s.fp.mu2[1]);
                let [a, b, c] = s.conic;
                let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
                if q > extent_sq {
                    continue;
                }
                let alpha = s.opacity * (-0.5 * q).exp();
                let wgt = alpha * t;
                for (acc_c, col) in acc.iter_mut().zip(s.color) {
                    *acc_c += wgt * col;
                }
                wsum += wgt;
                t *= 1.0 - alpha;
                if t < TRANSMITTANCE_MIN {
                    break;
                }
            }
            let p = y * w + x;
            tape.visited[p] = visited;
            tape.final_t[p] = t;
            tape.weight_sum[p] = wsum;
            tape.raw[p * 3..p * 3 + 3].copy_from_slice(&acc);
            image.set_pixel(x, y, acc.map(|v| v.clamp(0.0, 1.0)));
        }
    }
    (image, tape)
}

/// Gradient of a scalar loss with respect to one [`Gaussian3D`].
///
/// `cov` holds `∂L/∂Σᵢⱼ` treating all nine entries as independent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Gaussian3DGrad {
    pub mu: [f64; 3],
    pub cov: Mat3,
    pub opacity: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    mu2: [f64; 2],
    /// ∂L/∂(a, b, c) with `b` the shared off-diagonal.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

struct Contribution {
    id: u32,
    alpha: f64,
    t: f64,
    gauss: f64,
    dx: f64,
    dy: f64,
}

/// Propagates `∂L/∂image` (w.r.t. the clamped output) back to the inputs of
/// [`render_forward`]. Culled Gaussians receive zero gradient.
pub fn render_backward(tape: &RenderTape, grad_image: &Image) -> Vec<Gaussian3DGrad> {
    let (w, h) = (tape.width, tape.height);
    assert_eq!(grad_image.dims(), (w, h), "gradient image does not match the render");
    let mut sg = vec![SplatGrad::default(); tape.splats.len()];
    let mut contribs: Vec<Contribution> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut g_c = grad_image.pixel(x, y);
            for (k, g) in g_c.iter_mut().enumerate() {
                let raw = tape.raw[p * 3 + k];
                if !(0.0..=1.0).contains(&raw) {
                    *g = 0.0;
                }
            }
            if g_c == [0.0; 3] {
                continue;
            }
            // replay the forward blend for this pixel
            contribs.clear();
            let list = &tape.tile_lists[(y / TILE) * tape.tiles_x + x / TILE];
            let (px, py) = (x as f64, y as f64);
            let mut t = 1.0;
            for &id in &list[..tape.visited[p] as usize] {
                let s = &tape.splats[id as usize];
                let (dx, dy) = (px - s.fp.mu2[0], py - s.fp.mu2[1]);
                let [a, b, c] = s.conic;
                let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
                if q > tape.extent_sq {
                    continue;
                }
                let gauss = (-0.5 * q).exp();
                let alpha = s.opacity * gauss;
                contribs.push(Contribution { id, alpha, t, gauss, dx, dy });
                t *= 1.0 - alpha;
            }
            // back to front; `behind` is the normalized color behind entry i
            let mut behind = [0.0; 3];
            for ct in contribs.iter().rev() {
                let s = &tape.splats[ct.id as usize];
                let g = &mut sg[ct.id as usize];
                let wgt = ct.alpha * ct.t;
                let mut g_alpha = 0.0;
                for k in 0..3 {
                    g.color[k] += wgt * g_c[k];
                    g_alpha += ct.t * (s.color[k] - behind[k]) * g_c[k];
                    behind[k] = ct.alpha * s.color[k] + (1.0 - ct.alpha) * behind[k];
                }
                g.opacity += g_alpha * ct.gauss;
                let g_gauss = g_alpha * s.opacity;
                let g_q = -0.5 * ct.gauss * g_gauss;
                let [a, b, c] = s.conic;
                let (dx, dy) = (ct.dx, ct.dy);
                g.conic[0] += g_q * dx * dx;
                g.conic[1] += g_q * 2.0 * dx * dy;
                g.conic[2] += g_q * dy * dy;
                // d = pixel − μ₂ ⇒ ∂/∂μ₂ = −∂/∂d
                g.mu2[0] -= g_q * 2.0 * (a * dx + b * dy);
                g.mu2[1] -= g_q * 2.0 * (b * dx + c * dy);
            }
        }
    }

    let mut out = vec![Gaussian3DGrad::default(); tape.num_inputs];
    for (s, g) in tape.splats.iter().zip(&sg) {
        out[s.index] = footprint_backward(tape, s, g);
    }
    out
}

fn footprint_backward(tape: &RenderTape, s: &Splat, g: &SplatGrad) -> Gaussian3DGrad {
    let [a, b, c] = s.conic;
    let k = [[a, b], [b, c]];
    let gk = [[g.conic[0], 0.5 * g.conic[1]], [0.5 * g.conic[1], g.conic[2]]];
    // Σ₂ = K⁻¹ ⇒ ∂L/∂Σ₂ = −K (∂L/∂K) K
    let mut g_cov2 = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = 0.0;
            for p in 0..2 {
                for q in 0..2 {
                    acc += k[i][p] * gk[p][q] * k[q][j];
                }
            }
            g_cov2[i][j] = -acc;
        }
    }
    let jw = &s.fp.jw;
    // Σ₂ = T Σ Tᵀ ⇒ ∂L/∂Σ = Tᵀ G T
    let mut g_cov = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for p in 0..2 {
                for q in 0..2 {
                    acc += jw[p][i] * g_cov2[p][q] * jw[q][j];
                }
            }
            g_cov[i][j] = acc;
        }
    }
    // ∂L/∂T = (G + Gᵀ) T Σ
    let cov3 = &s.cov3;
    let mut t_sigma = [[0.0; 3]; 2];
    for r in 0..2 {
        for cidx in 0..3 {
            t_sigma[r][cidx] = (0..3).map(|m| jw[r][m] * cov3[m][cidx]).sum();
        }
    }
    let g_sym = [
        [2.0 * g_cov2[0][0], g_cov2[0][1] + g_cov2[1][0]],
        [g_cov2[0][1] + g_cov2[1][0], 2.0 * g_cov2[1][1]],
    ];
    let mut g_t = [[0.0; 3]; 2];
    for r in 0..2 {
        for cidx in 0..3 {
            g_t[r][cidx] = g_sym[r][0] * t_sigma[0][cidx] + g_sym[r][1] * t_sigma[1][cidx];
        }
    }
    // T = J W ⇒ ∂L/∂J = ∂L/∂T Wᵀ
    let w = tape.rotation;
    let mut g_j = [[0.0; 3]; 2];
    for r in 0..2 {
        for cidx in 0..3 {
            g_j[r][cidx] = (0..3).map(|m| g_t[r][m] * w[cidx][m]).sum();
        }
    }
    let [x, y, z] = s.fp.p_cam;
    let (fx, fy) = (tape.fx, tape.fy);
    let (z2, z3) = (z * z, z * z * z);
    let mut g_p = [0.0; 3];
    // μ₂ = (fx x/z + cx, fy y/z + cy)
    g_p[0] += g.mu2[0] * fx / z;
    g_p[1] += g.mu2[1] * fy / z;
    g_p[2] += -g.mu2[0] * fx * x / z2 - g.mu2[1] * fy * y / z2;
    // J = [[fx/z, 0, −fx x/z²], [0, fy/z, −fy y/z²]]
    g_p[0] += -g_j[0][2] * fx / z2;
    g_p[1] += -g_j[1][2] * fy / z2;
    g_p[2] += -g_j[0][0] * fx / z2 + g_j[0][2] * 2.0 * fx * x / z3 - g_j[1][1] * fy / z2
        + g_j[1][2] * 2.0 * fy * y / z3;
    let g_mu = std::array::from_fn(|i| (0..3).map(|k| w[k][i] * g_p[k]).sum());
    Gaussian3DGrad { mu: g_mu, cov: g_cov, opacity: g.opacity, color: g.color }
}
