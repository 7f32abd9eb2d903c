//! The HyperGaussian primitive.
//!
//! A [`HyperGaussianBlock`] is an `(m+n)`-dimensional Gaussian stored through
//! its precision matrix `Λ = L·Lᵀ`. Only the parts of the Cholesky factor that
//! conditioning needs are kept: the attribute block `L11` (with its diagonal in
//! log-domain) and the coupling block `L21`. A [`HyperPrimitive`] bundles three
//! such blocks (position, rotation, scale offsets) with the base quantities of
//! a plain 3D Gaussian.

use crate::linalg::{
    mat3_mul, mat3_transpose, packed_index, packed_len, unit_quat_to_rotmat, LinalgError, LowerTri,
    Mat, Mat3,
};
use crate::rng::{self, Stream};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard deviation of the `L21` initialization noise.
pub const L21_INIT_STD: f64 = 1e-2;

/// Rotations whose composed quaternion is shorter than this are rejected.
pub const MIN_QUAT_NORM: f64 = 1e-8;

/// Version tag written into every JSON document this crate produces.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid partition: attribute dimension must be at least 1")]
    EmptyAttribute,
    #[error("{field}: expected {expected} values, found {found}")]
    Shape { field: &'static str, expected: usize, found: usize },
    #[error("blocks disagree on latent dimension ({0} vs {1})")]
    LatentDimMismatch(usize, usize),
    #[error("{0} contains a non-finite value")]
    NonFinite(&'static str),
    #[error("composed rotation quaternion is degenerate (norm {0:e})")]
    DegenerateRotation(f64),
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("json: {0}")]
    Json(String),
}

/// Split of a HyperGaussian's dimensions into attribute (`m`) and latent (`n`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub m: usize,
    pub n: usize,
}

impl Partition {
    pub fn new(m: usize, n: usize) -> Result<Self, ModelError> {
        if m == 0 {
            return Err(ModelError::EmptyAttribute);
        }
        Ok(Self { m, n })
    }

    pub fn total(&self) -> usize {
        self.m + self.n
    }
}

/// One attribute's joint Gaussian over `(γ_a, γ_b)`, parameterized by the
/// means and the `L11`, `L21` blocks of the precision Cholesky factor.
///
/// `raw_l11` is packed row-major lower-triangular; its diagonal is stored in
/// log-domain and exponentiated on use. `l21` is `n×m`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGaussianBlock {
    pub partition: Partition,
    pub mu_a: Vec<f64>,
    pub mu_b: Vec<f64>,
    #[serde(rename = "raw_L11")]
    pub raw_l11: Vec<f64>,
    #[serde(rename = "L21")]
    pub l21: Vec<f64>,
}

impl HyperGaussianBlock {
    /// Block with unit `L11` and no coupling: conditioning returns `mu_a`.
    pub fn zeros(partition: Partition) -> Self {
        let Partition { m, n } = partition;
        Self {
            partition,
            mu_a: vec![0.0; m],
            mu_b: vec![0.0; n],
            raw_l11: vec![0.0; packed_len(m)],
            l21: vec![0.0; n * m],
        }
    }

    /// Default initialization: zero means, unit `L11`, `L21 ~ N(0, 1e-4)`.
    pub fn init(partition: Partition, rng: &mut Stream) -> Self {
        let mut block = Self::zeros(partition);
        block.l21 = rng::normals(rng, block.l21.len(), L21_INIT_STD);
        block
    }

    pub fn m(&self) -> usize {
        self.partition.m
    }

    pub fn n(&self) -> usize {
        self.partition.n
    }

    /// Raw diagonal entry `i` of `L11` (log-domain).
    pub fn raw_diag(&self, i: usize) -> f64 {
        self.raw_l11[packed_index(i, i)]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let Partition { m, n } = self.partition;
        if m == 0 {
            return Err(ModelError::EmptyAttribute);
        }
        let check = |field, expected, v: &[f64]| {
            if v.len() != expected {
                return Err(ModelError::Shape { field, expected, found: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::NonFinite(field));
            }
            Ok(())
        };
        check("mu_a", m, &self.mu_a)?;
        check("mu_b", n, &self.mu_b)?;
        check("raw_L11", packed_len(m), &self.raw_l11)?;
        check("L21", n * m, &self.l21)
    }

    /// Writes the activated `L11` (diagonal exponentiated) into `out`.
    #[inline]
    pub fn activated_l11_into(&self, out: &mut [f64]) {
        let m = self.m();
        out.copy_from_slice(&self.raw_l11);
        for i in 0..m {
            let k = packed_index(i, i);
            out[k] = out[k].exp();
        }
    }
}

/// `(L11, L21)` with the diagonal of `L11` exponentiated.
pub fn activate_factors(block: &HyperGaussianBlock) -> (LowerTri, Mat) {
    let m = block.m();
    let mut l11 = vec![0.0; packed_len(m)];
    block.activated_l11_into(&mut l11);
    let l11 = LowerTri::new(m, l11).expect("exp keeps the diagonal positive");
    let l21 = Mat::from_vec(block.n(), m, block.l21.clone()).expect("validated block");
    (l11, l21)
}

/// A splattable primitive whose position, rotation and scale are offset by
/// three HyperGaussian conditionals sharing one latent realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPrimitive {
    pub base_mu: [f64; 3],
    pub base_rot: [f64; 4],
    /// Log-domain.
    pub base_scale: [f64; 3],
    /// Pre-sigmoid.
    pub opacity_raw: f64,
    pub color: [f64; 3],
    pub block_pos: HyperGaussianBlock,
    pub block_rot: HyperGaussianBlock,
    pub block_scale: HyperGaussianBlock,
}

impl HyperPrimitive {
    /// Primitive with the given base pose and freshly initialized blocks.
    pub fn new(
        base_mu: [f64; 3],
        base_rot: [f64; 4],
        base_scale: [f64; 3],
        opacity_raw: f64,
        color: [f64; 3],
        latent_dim: usize,
        rng: &mut Stream,
    ) -> Self {
        Self {
            base_mu,
            base_rot,
            base_scale,
            opacity_raw,
            color,
            block_pos: HyperGaussianBlock::init(Partition { m: 3, n: latent_dim }, rng),
            block_rot: HyperGaussianBlock::init(Partition { m: 4, n: latent_dim }, rng),
            block_scale: HyperGaussianBlock::init(Partition { m: 3, n: latent_dim }, rng),
        }
    }

    /// Primitive whose blocks have zero coupling (`L21 = 0`).
    pub fn uncoupled(
        base_mu: [f64; 3],
        base_rot: [f64; 4],
        base_scale: [f64; 3],
        opacity_raw: f64,
        color: [f64; 3],
        latent_dim: usize,
    ) -> Self {
        Self {
            base_mu,
            base_rot,
            base_scale,
            opacity_raw,
            color,
            block_pos: HyperGaussianBlock::zeros(Partition { m: 3, n: latent_dim }),
            block_rot: HyperGaussianBlock::zeros(Partition { m: 4, n: latent_dim }),
            block_scale: HyperGaussianBlock::zeros(Partition { m: 3, n: latent_dim }),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.block_pos.n()
    }

    pub fn blocks(&self) -> [&HyperGaussianBlock; 3] {
        [&self.block_pos, &self.block_rot, &self.block_scale]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (block, m) in self.blocks().into_iter().zip([3, 4, 3]) {
            block.validate()?;
            if block.m() != m {
                return Err(ModelError::Shape { field: "partition.m", expected: m, found: block.m() });
            }
        }
        let n = self.block_pos.n();
        for b in [&self.block_rot, &self.block_scale] {
            if b.n() != n {
                return Err(ModelError::LatentDimMismatch(n, b.n()));
            }
        }
        let base = self
            .base_mu
            .iter()
            .chain(&self.base_rot)
            .chain(&self.base_scale)
            .chain(&self.color)
            .chain(std::iter::once(&self.opacity_raw));
        if base.into_iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("base parameters"));
        }
        Ok(())
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_raw)
    }
}

/// A plain 3D Gaussian ready for rasterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian3D {
    pub mu: [f64; 3],
    pub cov: Mat3,
    pub opacity: f64,
    pub color: [f64; 3],
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Normalizes a quaternion, failing below [`MIN_QUAT_NORM`].
pub fn normalize_quat(q: [f64; 4]) -> Result<([f64; 4], f64), ModelError> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm >= MIN_QUAT_NORM) {
        return Err(ModelError::DegenerateRotation(norm));
    }
    Ok((q.map(|v| v / norm), norm))
}

/// `R·S·Sᵀ·Rᵀ` for a unit quaternion and activated (linear) scales.
#[inline]
pub fn covariance_from_unit(q: [f64; 4], scale: [f64; 3]) -> Mat3 {
    let r = unit_quat_to_rotmat(q);
    let mut m = r;
    for row in m.iter_mut() {
        for (v, s) in row.iter_mut().zip(scale) {
            *v *= s;
        }
    }
    mat3_mul(&m, &mat3_transpose(&m))
}

/// Splatting covariance `R·S·Sᵀ·Rᵀ` from a rotation quaternion and
/// log-domain scales.
pub fn splat_covariance(rot: [f64; 4], log_scale: [f64; 3]) -> Result<Mat3, LinalgError> {
    let norm = rot.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(LinalgError::ZeroQuaternion);
    }
    Ok(covariance_from_unit(rot.map(|v| v / norm), log_scale.map(f64::exp)))
}

/// Composes the base pose with conditioned offsets:
/// position adds, rotation adds then renormalizes, scale adds in log-domain.
pub fn apply_offsets(
    base: &HyperPrimitive,
    d_mu: [f64; 3],
    d_rot: [f64; 4],
    d_scale: [f64; 3],
) -> Result<Gaussian3D, ModelError> {
    let mu = std::array::from_fn(|i| base.base_mu[i] + d_mu[i]);
    let (q, _) = normalize_quat(std::array::from_fn(|i| base.base_rot[i] + d_rot[i]))?;
    let scale = std::array::from_fn(|i| (base.base_scale[i] + d_scale[i]).exp());
    Ok(Gaussian3D {
        mu,
        cov: covariance_from_unit(q, scale),
        opacity: base.opacity(),
        color: base.color,
    })
}

/// JSON document holding a set of primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveSet {
    pub schema_version: u32,
    pub primitives: Vec<HyperPrimitive>,
}

impl PrimitiveSet {
    pub fn new(primitives: Vec<HyperPrimitive>) -> Self {
        Self { schema_version: SCHEMA_VERSION, primitives }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ModelError::SchemaVersion(self.schema_version));
        }
        let mut latent = None;
        for p in &self.primitives {
            p.validate()?;
            match latent {
                None => latent = Some(p.latent_dim()),
                Some(n) if n != p.latent_dim() => {
                    return Err(ModelError::LatentDimMismatch(n, p.latent_dim()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let set: Self = serde_json::from_str(s).map_err(|e| ModelError::Json(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn prim(n: usize) -> HyperPrimitive {
        HyperPrimitive::uncoupled([0.1, -0.2, 3.0], [1.0, 0.0, 0.0, 0.0], [0.0; 3], 0.3, [0.2, 0.4, 0.6], n)
    }

    #[test]
    fn activation_of_zero_block_is_unit() {
        let block = HyperGaussianBlock::zeros(Partition::new(1, 1).unwrap());
        let (l11, l21) = activate_factors(&block);
        assert_eq!(l11.as_slice(), &[1.0]);
        assert_eq!(l21.as_slice(), &[0.0]);
    }

    #[test]
    fn activation_exponentiates_diagonal_only() {
        let mut block = HyperGaussianBlock::zeros(Partition::new(2, 1).unwrap());
        block.raw_l11 = vec![LN_2, -0.7, 3f64.ln()];
        block.l21 = vec![0.5, -1.5];
        let (l11, l21) = activate_factors(&block);
        assert!((l11.get(0, 0) - 2.0).abs() < 1e-15);
        assert!((l11.get(1, 1) - 3.0).abs() < 1e-15);
        assert_eq!(l11.get(1, 0), -0.7);
        assert_eq!(l21.as_slice(), &[0.5, -1.5]);
        assert_eq!(activate_factors(&block), (l11, l21));
    }

    #[test]
    fn splat_covariance_axis_aligned() {
        let id = splat_covariance([1.0, 0.0, 0.0, 0.0], [0.0; 3]).unwrap();
        assert_eq!(id, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let c = splat_covariance([1.0, 0.0, 0.0, 0.0], [LN_2, 0.0, 0.0]).unwrap();
        assert!((c[0][0] - 4.0).abs() < 1e-14);
        assert_eq!(c[1][1], 1.0);
        assert_eq!(c[2][2], 1.0);
        assert!(splat_covariance([0.0; 4], [0.0; 3]).is_err());
    }

    #[test]
    fn zero_offsets_give_base_pose() {
        let p = prim(2);
        let g = apply_offsets(&p, [0.0; 3], [0.0; 4], [0.0; 3]).unwrap();
        assert_eq!(g.mu, p.base_mu);
        assert_eq!(g.cov, splat_covariance(p.base_rot, p.base_scale).unwrap());
        assert_eq!(g.opacity, sigmoid(0.3));
        assert_eq!(g.color, p.color);
    }

    #[test]
    fn translation_offset_leaves_covariance() {
        let p = prim(0);
        let g0 = apply_offsets(&p, [0.0; 3], [0.0; 4], [0.0; 3]).unwrap();
        let g1 = apply_offsets(&p, [1.0, 0.0, 0.0], [0.0; 4], [0.0; 3]).unwrap();
        assert_eq!(g1.mu, [1.1, -0.2, 3.0]);
        assert_eq!(g1.cov, g0.cov);
    }

    #[test]
    fn cancelling_rotation_offset_is_rejected() {
        let p = prim(0);
        let err = apply_offsets(&p, [0.0; 3], [-1.0, 0.0, 0.0, 0.0], [0.0; 3]).unwrap_err();
        assert!(matches!(err, ModelError::DegenerateRotation(_)));
    }

    #[test]
    fn json_uses_documented_field_names() {
        let set = PrimitiveSet::new(vec![prim(1)]);
        let json = set.to_json();
        for key in ["raw_L11", "L21", "mu_a", "mu_b", "base_mu", "opacity_raw", "block_scale"] {
            assert!(json.contains(&format!("\"{key}\"")), "missing {key}");
        }
        assert_eq!(PrimitiveSet::from_json(&json).unwrap(), set);
    }

    #[test]
    fn json_rejects_inconsistent_blocks() {
        let mut p = prim(2);
        p.block_rot = HyperGaussianBlock::zeros(Partition { m: 4, n: 3 });
        let json = serde_json::to_string(&PrimitiveSet::new(vec![p])).unwrap();
        assert!(matches!(PrimitiveSet::from_json(&json), Err(ModelError::LatentDimMismatch(2, 3))));
    }
}
