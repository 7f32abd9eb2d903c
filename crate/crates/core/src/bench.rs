//! Forward+backward conditioning benchmark: covariance route vs. precision
//! route over a batch of `G` blocks.
//!
//! Both methods compute the conditional mean and `log det Σ_{a|b}` of every
//! block, then back-propagate the cotangents `∂/∂μ = 1`, `∂/∂logdet = 1` into
//! their own parameters and the latent realization.
//!
//! The covariance route parameterizes the joint by its covariance Cholesky
//! factor `[[A, 0], [B, D]]`, so `Σ_aa = AAᵀ`, `Σ_ab = ABᵀ`,
//! `Σ_bb = S = BBᵀ + DDᵀ`. Its backward pass, with `x = S⁻¹r`,
//! `Q = S⁻¹Pᵀ`, `P = ABᵀ`, `K = AAᵀ − PQ`:
//!
//! ```text
//! ḡK = ḡld·K⁻¹           ḡP = ḡμ xᵀ − 2 ḡK Qᵀ     h = Q ḡμ
//! ḡS = −h xᵀ + Q ḡK Qᵀ   ḡA = 2 ḡK A + ḡP B       ḡB = (ḡS + ḡSᵀ) B + ḡPᵀ A
//! ḡD = (ḡS + ḡSᵀ) D      ḡγ = h                   ḡμ_b = −h
//! ```
//!
//! Memory is accounted analytically, as a batched module would hold it:
//! parameters, their gradients, latents and their gradients, and every
//! intermediate buffer, per block, times `G`.
//!
//! Distinct parameter slots are capped at [`POOL_BYTES`]; block `i` uses slot
//! `i mod pool`. Reuse only ever helps the covariance route's cache
//! behavior, never the precision route's.

use crate::conditioning::condition_fast_into;
use crate::gradients::condition_fast_backward;
use crate::hypergauss::{HyperGaussianBlock, Partition};
use crate::linalg::{back_substitute_transposed, cholesky_packed_in_place, forward_substitute, packed_index, packed_len};
use crate::rng::{self, Stream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::hint::black_box;
use std::path::Path;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Blocks conditioned per pass in the reference protocol.
pub const REFERENCE_G: usize = 14_876;
pub const REFERENCE_RUNS: usize = 1000;
pub const REFERENCE_N_LIST: [usize; 8] = [1, 2, 4, 8, 16, 32, 64, 128];
/// Cap on distinct parameter + gradient storage per method.
pub const POOL_BYTES: usize = 512 << 20;
const F64: usize = std::mem::size_of::<f64>();

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark parameters: {0}")]
    Params(String),
    #[error("no records to write")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed CSV: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Naive,
    Fast,
}

impl Method {
    pub fn tag(self, parallel: bool) -> &'static str {
        match (self, parallel) {
            (Method::Naive, false) => "naive",
            (Method::Fast, false) => "fast",
            (Method::Naive, true) => "naive-par",
            (Method::Fast, true) => "fast-par",
        }
    }
}

/// One measured (method, n) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: String,
    pub n: usize,
    #[serde(rename = "G")]
    pub g: usize,
    /// Mean wall time of one batched forward+backward pass.
    pub time_ms: f64,
    pub mem_bytes: u64,
    /// Measured passes (may be below the request when a time budget applies).
    pub runs: usize,
    pub std_ms: f64,
    pub warmup: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchParams {
    #[serde(rename = "G")]
    pub g: usize,
    pub m: usize,
    pub n_list: Vec<usize>,
    pub runs: usize,
    pub warmup: usize,
    /// Per-cell limit in seconds, applied separately to warmup and to
    /// measurement; each phase still completes at least one pass.
    pub time_budget_s: Option<f64>,
    /// Use the data-parallel batch path (method tags get a `-par` suffix).
    pub parallel: bool,
    pub seed: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            g: REFERENCE_G,
            m: 3,
            n_list: REFERENCE_N_LIST.to_vec(),
            runs: REFERENCE_RUNS,
            warmup: 10,
            time_budget_s: None,
            parallel: false,
            seed: 0,
        }
    }
}

impl BenchParams {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.g == 0 {
            return Err(BenchError::Params("G must be at least 1".into()));
        }
        if self.runs == 0 {
            return Err(BenchError::Params("runs must be at least 1".into()));
        }
        if !(1..=4).contains(&self.m) {
            return Err(BenchError::Params("m must lie in 1..=4".into()));
        }
        if self.n_list.is_empty() {
            return Err(BenchError::Params("n_list must not be empty".into()));
        }
        if let Some(b) = self.time_budget_s {
            if !(b > 0.0) {
                return Err(BenchError::Params("time_budget_s must be positive".into()));
            }
        }
        Ok(())
    }
}

fn fast_param_count(m: usize, n: usize) -> usize {
    m + n + packed_len(m) + n * m
}

fn naive_param_count(m: usize, n: usize) -> usize {
    m + n + packed_len(m) + n * m + packed_len(n)
}

/// Per-block bytes of the precision route: parameters and gradients, latent
/// and its gradient, activated `L11`, `w`, `μ`, `ḡv`.
pub fn fast_bytes_per_block(m: usize, n: usize) -> usize {
    F64 * (2 * fast_param_count(m, n) + 2 * n + packed_len(m) + 3 * m)
}

/// Per-block bytes of the covariance route: parameters and gradients, latent
/// and its gradient, `S`, its factor, `x`, `P`, `Q`, `K`, its factor, `K⁻¹`,
/// `ḡK`, `ḡP`, `h`, `ḡS`, `μ`.
pub fn naive_bytes_per_block(m: usize, n: usize) -> usize {
    let interm = n * n + packed_len(n) + n + 2 * m * n + m * m + packed_len(m) + 2 * m * m + m * n + n + n * n + m;
    F64 * (2 * naive_param_count(m, n) + 2 * n + interm)
}

/// Analytic working memory of a batched pass over `g` blocks.
pub fn working_memory(method: Method, g: usize, m: usize, n: usize) -> u64 {
    let per = match method {
        Method::Fast => fast_bytes_per_block(m, n),
        Method::Naive => naive_bytes_per_block(m, n),
    };
    (per * g) as u64
}

/// Covariance-route parameters: mean and the joint covariance factor.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBlock {
    pub m: usize,
    pub n: usize,
    pub mu_a: Vec<f64>,
    pub mu_b: Vec<f64>,
    /// Packed lower `m×m`.
    pub a: Vec<f64>,
    /// `n×m` row-major.
    pub b: Vec<f64>,
    /// Packed lower `n×n`.
    pub d: Vec<f64>,
}

impl NaiveBlock {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            mu_a: vec![0.0; m],
            mu_b: vec![0.0; n],
            a: vec![0.0; packed_len(m)],
            b: vec![0.0; n * m],
            d: vec![0.0; packed_len(n)],
        }
    }

    /// Well-conditioned random instance.
    pub fn random(m: usize, n: usize, rng: &mut Stream) -> Self {
        let lower = |rng: &mut Stream, k: usize| {
            let mut v = rng::normals(rng, packed_len(k), 0.1);
            for i in 0..k {
                v[packed_index(i, i)] = 1.0 + 0.2 * rng::normal(rng).abs();
            }
            v
        };
        Self {
            m,
            n,
            mu_a: rng::normals(rng, m, 1.0),
            mu_b: rng::normals(rng, n, 1.0),
            a: lower(rng, m),
            b: rng::normals(rng, n * m, 0.3),
            d: lower(rng, n),
        }
    }

    /// Flat parameter view, `mu_a, mu_b, a, b, d`.
    pub fn values(&self) -> Vec<f64> {
        self.mu_a.iter().chain(&self.mu_b).chain(&self.a).chain(&self.b).chain(&self.d).copied().collect()
    }

    pub fn from_values(m: usize, n: usize, x: &[f64]) -> Self {
        let mut s = Self::zeros(m, n);
        let mut it = x.iter();
        for v in s.mu_a.iter_mut().chain(&mut s.mu_b).chain(&mut s.a).chain(&mut s.b).chain(&mut s.d) {
            *v = *it.next().expect("length");
        }
        s
    }

    /// Dense joint covariance `L Lᵀ`, row-major `(m+n)²`.
    pub fn joint_covariance(&self) -> Vec<f64> {
        let (m, n) = (self.m, self.n);
        let k = m + n;
        let mut l = vec![0.0; k * k];
        for i in 0..m {
            for j in 0..=i {
                l[i * k + j] = self.a[packed_index(i, j)];
            }
        }
        for r in 0..n {
            for c in 0..m {
                l[(m + r) * k + c] = self.b[r * m + c];
            }
            for c in 0..=r {
                l[(m + r) * k + m + c] = self.d[packed_index(r, c)];
            }
        }
        let mut s = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                s[i * k + j] = (0..k).map(|t| l[i * k + t] * l[j * k + t]).sum();
            }
        }
        s
    }
}

/// Scratch for one covariance-route pass; sizes match
/// [`naive_bytes_per_block`].
#[derive(Debug, Clone)]
pub struct NaiveWorkspace {
    s: Vec<f64>,
    chol_s: Vec<f64>,
    x: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    chol_k: Vec<f64>,
    k_inv: Vec<f64>,
    g_k: Vec<f64>,
    g_p: Vec<f64>,
    h: Vec<f64>,
    g_s: Vec<f64>,
    pub mu: Vec<f64>,
    pub logdet: f64,
}

impl NaiveWorkspace {
    pub fn new(m: usize, n: usize) -> Self {
        Self {
            s: vec![0.0; n * n],
            chol_s: vec![0.0; packed_len(n)],
            x: vec![0.0; n],
            p: vec![0.0; m * n],
            q: vec![0.0; n * m],
            k: vec![0.0; m * m],
            chol_k: vec![0.0; packed_len(m)],
            k_inv: vec![0.0; m * m],
            g_k: vec![0.0; m * m],
            g_p: vec![0.0; m * n],
            h: vec![0.0; n],
            g_s: vec![0.0; n * n],
            mu: vec![0.0; m],
            logdet: 0.0,
        }
    }
}

/// Covariance-route forward pass: fills `ws.mu` and `ws.logdet`.
///
/// Panics if `Σ_bb` or the conditional covariance is not positive definite,
/// which cannot happen for a factor with a nonzero diagonal.
pub fn naive_forward(blk: &NaiveBlock, gamma: &[f64], ws: &mut NaiveWorkspace) {
    let (m, n) = (blk.m, blk.n);
    // S = B Bᵀ + D Dᵀ
    for i in 0..n {
        for j in 0..=i {
            let mut v = 0.0;
            for c in 0..m {
                v += blk.b[i * m + c] * blk.b[j * m + c];
            }
            for c in 0..=j {
                v += blk.d[packed_index(i, c)] * blk.d[packed_index(j, c)];
            }
            ws.s[i * n + j] = v;
            ws.s[j * n + i] = v;
            ws.chol_s[packed_index(i, j)] = v;
        }
    }
    cholesky_packed_in_place(&mut ws.chol_s, n).expect("Σ_bb is positive definite");
    for i in 0..n {
        ws.x[i] = gamma[i] - blk.mu_b[i];
    }
    forward_substitute(&ws.chol_s, n, &mut ws.x);
    back_substitute_transposed(&ws.chol_s, n, &mut ws.x);
    // P = A Bᵀ
    for i in 0..m {
        for j in 0..n {
            ws.p[i * n + j] = (0..=i).map(|c| blk.a[packed_index(i, c)] * blk.b[j * m + c]).sum();
        }
    }
    for i in 0..m {
        ws.mu[i] = blk.mu_a[i] + (0..n).map(|j| ws.p[i * n + j] * ws.x[j]).sum::<f64>();
    }
    // Q = S⁻¹ Pᵀ, column by column; `h` is free until the backward pass
    for c in 0..m {
        ws.h.copy_from_slice(&ws.p[c * n..(c + 1) * n]);
        forward_substitute(&ws.chol_s, n, &mut ws.h);
        back_substitute_transposed(&ws.chol_s, n, &mut ws.h);
        for r in 0..n {
            ws.q[r * m + c] = ws.h[r];
        }
    }
    // K = A Aᵀ − P Q
    for i in 0..m {
        for j in 0..m {
            let aa: f64 = (0..=i.min(j)).map(|c| blk.a[packed_index(i, c)] * blk.a[packed_index(j, c)]).sum();
            let pq: f64 = (0..n).map(|t| ws.p[i * n + t] * ws.q[t * m + j]).sum();
            ws.k[i * m + j] = aa - pq;
        }
    }
    for i in 0..m {
        for j in 0..=i {
            ws.chol_k[packed_index(i, j)] = 0.5 * (ws.k[i * m + j] + ws.k[j * m + i]);
        }
    }
    cholesky_packed_in_place(&mut ws.chol_k, m).expect("conditional covariance is positive definite");
    ws.logdet = 2.0 * (0..m).map(|i| ws.chol_k[packed_index(i, i)].ln()).sum::<f64>();
}

/// Covariance-route backward pass; call after [`naive_forward`] on the same
/// workspace. Accumulates into `grad` and `g_gamma`.
pub fn naive_backward(
    blk: &NaiveBlock,
    g_mu: &[f64],
    g_logdet: f64,
    ws: &mut NaiveWorkspace,
    grad: &mut NaiveBlock,
    g_gamma: &mut [f64],
) {
    let (m, n) = (blk.m, blk.n);
    // K⁻¹ from its factor
    let mut e = [0.0; 4];
    for c in 0..m {
        e[..m].fill(0.0);
        e[c] = 1.0;
        forward_substitute(&ws.chol_k, m, &mut e[..m]);
        back_substitute_transposed(&ws.chol_k, m, &mut e[..m]);
        for r in 0..m {
            ws.k_inv[r * m + c] = e[r];
        }
    }
    for i in 0..m * m {
        ws.g_k[i] = g_logdet * ws.k_inv[i];
    }
    for i in 0..m {
        for j in 0..n {
            let gkq: f64 = (0..m).map(|t| ws.g_k[i * m + t] * ws.q[j * m + t]).sum();
            ws.g_p[i * n + j] = g_mu[i] * ws.x[j] - 2.0 * gkq;
        }
    }
    for r in 0..n {
        ws.h[r] = (0..m).map(|c| ws.q[r * m + c] * g_mu[c]).sum();
    }
    // ḡS = −h xᵀ + Q ḡK Qᵀ
    for i in 0..n {
        for j in 0..n {
            let mut v = -ws.h[i] * ws.x[j];
            for a in 0..m {
                let qa = ws.q[i * m + a];
                for b in 0..m {
                    v += qa * ws.g_k[a * m + b] * ws.q[j * m + b];
                }
            }
            ws.g_s[i * n + j] = v;
        }
    }
    for i in 0..m {
        grad.mu_a[i] += g_mu[i];
    }
    for r in 0..n {
        g_gamma[r] += ws.h[r];
        grad.mu_b[r] -= ws.h[r];
    }
    // ḡA = 2 ḡK A + ḡP B, lower part
    for i in 0..m {
        for j in 0..=i {
            let kk: f64 = (j..m).map(|t| ws.g_k[i * m + t] * blk.a[packed_index(t, j)]).sum();
            let pb: f64 = (0..n).map(|t| ws.g_p[i * n + t] * blk.b[t * m + j]).sum();
            grad.a[packed_index(i, j)] += 2.0 * kk + pb;
        }
    }
    // ḡB = (ḡS + ḡSᵀ) B + ḡPᵀ A
    for r in 0..n {
        for c in 0..m {
            let mut v: f64 = (0..n).map(|t| (ws.g_s[r * n + t] + ws.g_s[t * n + r]) * blk.b[t * m + c]).sum();
            v += (c..m).map(|t| ws.g_p[t * n + r] * blk.a[packed_index(t, c)]).sum::<f64>();
            grad.b[r * m + c] += v;
        }
    }
    // ḡD = (ḡS + ḡSᵀ) D, lower part
    for r in 0..n {
        for c in 0..=r {
            let v: f64 = (c..n).map(|t| (ws.g_s[r * n + t] + ws.g_s[t * n + r]) * blk.d[packed_index(t, c)]).sum();
            grad.d[packed_index(r, c)] += v;
        }
    }
}

fn pool_size(g: usize, bytes_per_slot: usize) -> usize {
    g.min((POOL_BYTES / bytes_per_slot.max(1)).max(1))
}

struct FastBatch {
    params: Vec<HyperGaussianBlock>,
    grads: Vec<HyperGaussianBlock>,
    gammas: Vec<Vec<f64>>,
    g_gammas: Vec<Vec<f64>>,
}

struct NaiveBatch {
    params: Vec<NaiveBlock>,
    grads: Vec<NaiveBlock>,
    gammas: Vec<Vec<f64>>,
    g_gammas: Vec<Vec<f64>>,
}

fn fast_batch(g: usize, m: usize, n: usize, rng: &mut Stream) -> FastBatch {
    let pool = pool_size(g, 2 * F64 * (fast_param_count(m, n) + n));
    let partition = Partition { m, n };
    let params = (0..pool)
        .map(|_| {
            let mut b = HyperGaussianBlock::zeros(partition);
            b.mu_a = rng::normals(rng, m, 1.0);
            b.mu_b = rng::normals(rng, n, 1.0);
            b.raw_l11 = rng::normals(rng, packed_len(m), 0.1);
            b.l21 = rng::normals(rng, n * m, 0.3);
            b
        })
        .collect();
    FastBatch {
        params,
        grads: vec![HyperGaussianBlock::zeros(partition); pool],
        gammas: (0..pool).map(|_| rng::normals(rng, n, 1.0)).collect(),
        g_gammas: vec![vec![0.0; n]; pool],
    }
}

fn naive_batch(g: usize, m: usize, n: usize, rng: &mut Stream) -> NaiveBatch {
    let pool = pool_size(g, 2 * F64 * (naive_param_count(m, n) + n));
    NaiveBatch {
        params: (0..pool).map(|_| NaiveBlock::random(m, n, rng)).collect(),
        grads: vec![NaiveBlock::zeros(m, n); pool],
        gammas: (0..pool).map(|_| rng::normals(rng, n, 1.0)).collect(),
        g_gammas: vec![vec![0.0; n]; pool],
    }
}

/// Blocks `slot, slot + pool, slot + 2·pool, …` below `g`.
fn slot_count(g: usize, pool: usize, slot: usize) -> usize {
    (g - slot).div_ceil(pool)
}

fn fast_pass(batch: &mut FastBatch, g: usize, m: usize, parallel: bool) -> f64 {
    let pool = batch.params.len();
    let ones = [1.0; 4];
    let work = |(slot, ((p, gr), (gm, gg))): (usize, ((&HyperGaussianBlock, &mut HyperGaussianBlock), (&Vec<f64>, &mut Vec<f64>)))| {
        let mut l11 = [0.0; 10];
        let mut mu = [0.0; 4];
        let mut acc = 0.0;
        for _ in 0..slot_count(g, pool, slot) {
            let ld = condition_fast_into(p, gm, &mut l11[..packed_len(m)], &mut mu[..m]);
            condition_fast_backward(p, gm, &ones[..m], 1.0, gr, gg);
            acc += mu[0] + ld;
        }
        acc
    };
    let FastBatch { params, grads, gammas, g_gammas } = batch;
    if parallel {
        params
            .par_iter()
            .zip(grads.par_iter_mut())
            .zip(gammas.par_iter().zip(g_gammas.par_iter_mut()))
            .enumerate()
            .map(work)
            .collect::<Vec<f64>>()
            .iter()
            .sum()
    } else {
        params.iter().zip(grads.iter_mut()).zip(gammas.iter().zip(g_gammas.iter_mut())).enumerate().map(work).sum()
    }
}

fn naive_pass(batch: &mut NaiveBatch, g: usize, m: usize, n: usize, parallel: bool) -> f64 {
    let pool = batch.params.len();
    let ones = [1.0; 4];
    let run = |ws: &mut NaiveWorkspace, slot: usize, p: &NaiveBlock, gr: &mut NaiveBlock, gm: &[f64], gg: &mut [f64]| {
        let mut acc = 0.0;
        for _ in 0..slot_count(g, pool, slot) {
            naive_forward(p, gm, ws);
            naive_backward(p, &ones[..m], 1.0, ws, gr, gg);
            acc += ws.mu[0] + ws.logdet;
        }
        acc
    };
    let NaiveBatch { params, grads, gammas, g_gammas } = batch;
    if parallel {
        params
            .par_iter()
            .zip(grads.par_iter_mut())
            .zip(gammas.par_iter().zip(g_gammas.par_iter_mut()))
            .enumerate()
            .map_init(|| NaiveWorkspace::new(m, n), |ws, (slot, ((p, gr), (gm, gg)))| run(ws, slot, p, gr, gm, gg))
            .collect::<Vec<f64>>()
            .iter()
            .sum()
    } else {
        let mut ws = NaiveWorkspace::new(m, n);
        params
            .iter()
            .zip(grads.iter_mut())
            .zip(gammas.iter().zip(g_gammas.iter_mut()))
            .enumerate()
            .map(|(slot, ((p, gr), (gm, gg)))| run(&mut ws, slot, p, gr, gm, gg))
            .sum()
    }
}

fn measure(mut pass: impl FnMut() -> f64, runs: usize, warmup: usize, budget: Option<Duration>) -> (f64, f64, usize) {
    let start = Instant::now();
    for _ in 0..warmup {
        black_box(pass());
        if budget.is_some_and(|b| start.elapsed() >= b) {
            break;
        }
    }
    let start = Instant::now();
    let mut times = Vec::with_capacity(runs);
    while times.len() < runs {
        let t = Instant::now();
        black_box(pass());
        times.push(t.elapsed().as_secs_f64() * 1e3);
        if budget.is_some_and(|b| start.elapsed() >= b) {
            break;
        }
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / times.len() as f64;
    (mean, var.sqrt(), times.len())
}

/// Times one (method, n) cell.
pub fn bench_cell(method: Method, n: usize, p: &BenchParams) -> BenchRecord {
    let mut rng = rng::stream(p.seed, &format!("bench-{}-{n}", method.tag(false)));
    let budget = p.time_budget_s.map(Duration::from_secs_f64);
    let (time_ms, std_ms, runs) = match method {
        Method::Fast => {
            let mut b = fast_batch(p.g, p.m, n, &mut rng);
            measure(|| fast_pass(&mut b, p.g, p.m, p.parallel), p.runs, p.warmup, budget)
        }
        Method::Naive => {
            let mut b = naive_batch(p.g, p.m, n, &mut rng);
            measure(|| naive_pass(&mut b, p.g, p.m, n, p.parallel), p.runs, p.warmup, budget)
        }
    };
    BenchRecord {
        method: method.tag(p.parallel).to_string(),
        n,
        g: p.g,
        time_ms,
        mem_bytes: working_memory(method, p.g, p.m, n),
        runs,
        std_ms,
        warmup: p.warmup,
    }
}

/// Runs the sweep: for each `n`, the covariance route then the precision
/// route.
pub fn bench_conditioning(p: &BenchParams) -> Result<Vec<BenchRecord>, BenchError> {
    p.validate()?;
    let mut out = Vec::with_capacity(2 * p.n_list.len());
    for &n in &p.n_list {
        out.push(bench_cell(Method::Naive, n, p));
        out.push(bench_cell(Method::Fast, n, p));
    }
    Ok(out)
}

pub fn emit_csv(records: &[BenchRecord], path: impl AsRef<Path>) -> Result<(), BenchError> {
    std::fs::write(path, to_csv(records)?)?;
    Ok(())
}

/// Columns `method,n,G,time_ms,mem_bytes,runs,std_ms,warmup`.
pub fn to_csv(records: &[BenchRecord]) -> Result<String, BenchError> {
    if records.is_empty() {
        return Err(BenchError::Empty);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?)
        .map_err(|e| BenchError::Parse(e.to_string()))
}

pub fn parse_csv(text: &str) -> Result<Vec<BenchRecord>, BenchError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Least-squares slope of `log time` against `log n` for one method, over
/// records with `n ≥ min_n`. `None` with fewer than two points.
pub fn loglog_slope(records: &[BenchRecord], method: &str, min_n: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.method == method && r.n >= min_n && r.n > 0)
        .map(|r| ((r.n as f64).ln(), r.time_ms.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// `naive / fast` time and memory ratios at `n`, if both were measured.
pub fn ratios(records: &[BenchRecord], n: usize) -> Option<(f64, f64)> {
    let find = |prefix: &str| records.iter().find(|r| r.n == n && r.method.starts_with(prefix));
    let (a, b) = (find("naive")?, find("fast")?);
    Some((a.time_ms / b.time_ms, a.mem_bytes as f64 / b.mem_bytes as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_ratios_at_reference_dims() {
        let r8 = working_memory(Method::Naive, REFERENCE_G, 3, 8) as f64 / working_memory(Method::Fast, REFERENCE_G, 3, 8) as f64;
        let r128 =
            working_memory(Method::Naive, REFERENCE_G, 3, 128) as f64 / working_memory(Method::Fast, REFERENCE_G, 3, 128) as f64;
        assert!(r8 >= 1.5, "{r8}");
        assert!(r128 >= 10.0, "{r128}");
    }

    #[test]
    fn workspace_matches_accounting() {
        for (m, n) in [(3, 0), (3, 8), (4, 17)] {
            let ws = NaiveWorkspace::new(m, n);
            let interm = ws.s.len()
                + ws.chol_s.len()
                + ws.x.len()
                + ws.p.len()
                + ws.q.len()
                + ws.k.len()
                + ws.chol_k.len()
                + ws.k_inv.len()
                + ws.g_k.len()
                + ws.g_p.len()
                + ws.h.len()
                + ws.g_s.len()
                + ws.mu.len();
            assert_eq!(naive_bytes_per_block(m, n), F64 * (2 * naive_param_count(m, n) + 2 * n + interm));
        }
    }

    #[test]
    fn slots_cover_every_block_once() {
        for (g, pool) in [(10, 3), (7, 7), (1, 1), (14876, 3634)] {
            assert_eq!((0..pool).map(|s| slot_count(g, pool, s)).sum::<usize>(), g);
        }
    }
}
