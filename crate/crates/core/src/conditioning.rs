//! Conditioning a HyperGaussian on a latent realization.
//!
//! Two routes compute the same conditional `p(γ_a | γ_b)`:
//!
//! * [`condition_naive`] works from the covariance view and has to factor the
//!   `n×n` latent block `Σ_bb`.
//! * [`condition_fast`] works from the precision view. With `Λ = L·Lᵀ` and
//!   `L = [[L11, 0], [L21, L22]]` one gets `Λ_aa⁻¹ Λ_ab = L11⁻ᵀ L21ᵀ`, so the
//!   conditional mean costs one `m×m` triangular solve and
//!   `log det Σ_{a|b} = −2 Σ log (L11)ᵢᵢ` is read off the diagonal.
//!
//! The fast route never forms an `n×n` matrix and never touches `L22`.

use crate::hypergauss::{HyperGaussianBlock, HyperPrimitive, ModelError};
use crate::linalg::{
    back_substitute_transposed, cholesky, forward_substitute, logdet_from_tri, packed_index,
    packed_len, solve_lower, LinalgError, LowerTri, Mat,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConditionError {
    #[error("latent realization has length {found}, block expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("batch lengths differ: {primitives} primitives, {latents} latents")]
    LengthMismatch { primitives: usize, latents: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Conditional mean and `log det Σ_{a|b}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalResult {
    pub mu_cond: Vec<f64>,
    pub logdet_cov_cond: f64,
}

/// A joint Gaussian in covariance form, for the reference route.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseJoint {
    pub mu: Vec<f64>,
    pub cov: Mat,
}

impl DenseJoint {
    pub fn new(mu: Vec<f64>, cov: Mat) -> Result<Self, ConditionError> {
        if cov.rows() != mu.len() || cov.cols() != mu.len() {
            return Err(ConditionError::DimensionMismatch { expected: mu.len(), found: cov.rows() });
        }
        Ok(Self { mu, cov })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma_aa(&self, m: usize) -> Mat {
        self.cov.block(0, 0, m, m)
    }

    pub fn sigma_ab(&self, m: usize) -> Mat {
        self.cov.block(0, m, m, self.dim() - m)
    }

    pub fn sigma_ba(&self, m: usize) -> Mat {
        self.cov.block(m, 0, self.dim() - m, m)
    }

    pub fn sigma_bb(&self, m: usize) -> Mat {
        let n = self.dim() - m;
        self.cov.block(m, m, n, n)
    }
}

/// Conditional `(μ_{a|b}, Σ_{a|b})` from the covariance view:
/// `μ_a + Σ_ab Σ_bb⁻¹ (γ_b − μ_b)` and `Σ_aa − Σ_ab Σ_bb⁻¹ Σ_ba`.
pub fn condition_naive(
    joint: &DenseJoint,
    m: usize,
    gamma_b: &[f64],
) -> Result<(Vec<f64>, Mat), ConditionError> {
    if m == 0 || m > joint.dim() {
        return Err(ConditionError::DimensionMismatch { expected: joint.dim(), found: m });
    }
    let n = joint.dim() - m;
    if gamma_b.len() != n {
        return Err(ConditionError::DimensionMismatch { expected: n, found: gamma_b.len() });
    }
    let sigma_ab = joint.sigma_ab(m);
    if n == 0 {
        return Ok((joint.mu[..m].to_vec(), joint.sigma_aa(m)));
    }
    let chol_bb = cholesky(&joint.sigma_bb(m))?;
    // Σ_bb⁻¹ r through the factor, Σ_bb⁻¹ Σ_ba likewise.
    let mut x: Vec<f64> = gamma_b.iter().zip(&joint.mu[m..]).map(|(g, mu)| g - mu).collect();
    forward_substitute(chol_bb.as_slice(), n, &mut x);
    back_substitute_transposed(chol_bb.as_slice(), n, &mut x);
    let mu_cond = (0..m)
        .map(|i| joint.mu[i] + sigma_ab.row(i).iter().zip(&x).map(|(s, v)| s * v).sum::<f64>())
        .collect();
    let y = solve_lower(&chol_bb, &joint.sigma_ba(m))?;
    let cov_cond = joint.sigma_aa(m).sub(&y.transpose().matmul(&y)?)?;
    Ok((mu_cond, cov_cond))
}

fn check_latent(block: &HyperGaussianBlock, gamma_b: &[f64]) -> Result<(), ConditionError> {
    if gamma_b.len() != block.n() {
        return Err(ConditionError::DimensionMismatch { expected: block.n(), found: gamma_b.len() });
    }
    Ok(())
}

/// Slice-level fast conditioning kernel.
///
/// `l11` is scratch of length `m(m+1)/2`; `mu_out` receives the conditional
/// mean. Returns `log det Σ_{a|b}`. Allocation-free.
#[inline]
pub fn condition_fast_into(
    block: &HyperGaussianBlock,
    gamma_b: &[f64],
    l11: &mut [f64],
    mu_out: &mut [f64],
) -> f64 {
    let m = block.m();
    block.activated_l11_into(l11);
    // v = L21ᵀ (γ_b − μ_b), accumulated row by row of L21
    mu_out.fill(0.0);
    for (k, (g, mb)) in gamma_b.iter().zip(&block.mu_b).enumerate() {
        let d = g - mb;
        for (v, l) in mu_out.iter_mut().zip(&block.l21[k * m..(k + 1) * m]) {
            *v += l * d;
        }
    }
    back_substitute_transposed(l11, m, mu_out);
    for (v, a) in mu_out.iter_mut().zip(&block.mu_a) {
        *v = a - *v;
    }
    -2.0 * (0..m).map(|i| block.raw_l11[packed_index(i, i)]).sum::<f64>()
}

/// Conditional mean `μ_a − L11⁻ᵀ L21ᵀ (γ_b − μ_b)` and `log det Σ_{a|b}`.
pub fn condition_fast(
    block: &HyperGaussianBlock,
    gamma_b: &[f64],
) -> Result<ConditionalResult, ConditionError> {
    check_latent(block, gamma_b)?;
    let m = block.m();
    let mut l11 = vec![0.0; packed_len(m)];
    let mut mu_cond = vec![0.0; m];
    let logdet_cov_cond = condition_fast_into(block, gamma_b, &mut l11, &mut mu_cond);
    Ok(ConditionalResult { mu_cond, logdet_cov_cond })
}

/// Dense `Σ_{a|b} = L11⁻ᵀ L11⁻¹`. Debug accessor; the hot path never needs it.
pub fn conditional_covariance(block: &HyperGaussianBlock) -> Mat {
    let (l11, _) = crate::hypergauss::activate_factors(block);
    let linv = solve_lower(&l11, &Mat::identity(block.m())).expect("square");
    linv.transpose().matmul(&linv).expect("square")
}

/// Dense precision matrix `Λ = L·Lᵀ` with `L = [[L11, 0], [L21, L22]]`.
///
/// `l22` defaults to the identity; conditioning does not depend on it.
pub fn precision_matrix(block: &HyperGaussianBlock, l22: Option<&LowerTri>) -> Result<Mat, ConditionError> {
    let (m, n) = (block.m(), block.n());
    let (l11, l21) = crate::hypergauss::activate_factors(block);
    let mut l = Mat::zeros(m + n, m + n);
    for i in 0..m {
        for j in 0..=i {
            l[(i, j)] = l11.get(i, j);
        }
    }
    for k in 0..n {
        for j in 0..m {
            l[(m + k, j)] = l21[(k, j)];
        }
        for j in 0..=k {
            l[(m + k, m + j)] = match l22 {
                Some(t) => t.get(k, j),
                None => f64::from(u8::from(j == k)),
            };
        }
    }
    if let Some(t) = l22 {
        if t.dim() != n {
            return Err(ConditionError::DimensionMismatch { expected: n, found: t.dim() });
        }
    }
    Ok(l.matmul(&l.transpose())?)
}

/// Offsets produced by conditioning one primitive on a latent code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionedOffsets {
    pub d_mu: [f64; 3],
    pub d_rot: [f64; 4],
    pub d_scale: [f64; 3],
    /// Sum of the three `log det Σ_{a|b}` values.
    pub sigma: f64,
}

/// Conditions all three blocks of `prim` on the same realization `z`.
pub fn condition_primitive(prim: &HyperPrimitive, z: &[f64]) -> Result<ConditionedOffsets, ConditionError> {
    for block in prim.blocks() {
        check_latent(block, z)?;
    }
    let mut l11 = [0.0; packed_len(4)];
    let mut out = ConditionedOffsets { d_mu: [0.0; 3], d_rot: [0.0; 4], d_scale: [0.0; 3], sigma: 0.0 };
    out.sigma += condition_fast_into(&prim.block_pos, z, &mut l11[..6], &mut out.d_mu);
    out.sigma += condition_fast_into(&prim.block_rot, z, &mut l11, &mut out.d_rot);
    out.sigma += condition_fast_into(&prim.block_scale, z, &mut l11[..6], &mut out.d_scale);
    Ok(out)
}

fn check_batch<Z>(prims: &[HyperPrimitive], zs: &[Z]) -> Result<(), ConditionError> {
    if prims.len() != zs.len() {
        return Err(ConditionError::LengthMismatch { primitives: prims.len(), latents: zs.len() });
    }
    Ok(())
}

/// [`condition_primitive`] over a batch, in order.
pub fn condition_batch<Z: AsRef<[f64]>>(
    prims: &[HyperPrimitive],
    z_per_prim: &[Z],
) -> Result<Vec<ConditionedOffsets>, ConditionError> {
    check_batch(prims, z_per_prim)?;
    prims.iter().zip(z_per_prim).map(|(p, z)| condition_primitive(p, z.as_ref())).collect()
}

/// Data-parallel [`condition_batch`]; output order and values are identical.
pub fn condition_batch_par<Z: AsRef<[f64]> + Sync>(
    prims: &[HyperPrimitive],
    z_per_prim: &[Z],
) -> Result<Vec<ConditionedOffsets>, ConditionError> {
    check_batch(prims, z_per_prim)?;
    prims
        .par_iter()
        .zip(z_per_prim.par_iter())
        .map(|(p, z)| condition_primitive(p, z.as_ref()))
        .collect()
}

/// `log det Σ_{a|b}` of a block via its activated factor.
pub fn block_logdet(block: &HyperGaussianBlock) -> f64 {
    -logdet_from_tri(&crate::hypergauss::activate_factors(block).0)
}
