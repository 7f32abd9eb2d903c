//! Independent reference computations for the integration tests.
//!
//! Nothing here calls into the library's factorizations or solvers: inverses
//! and determinants use Gauss-Jordan elimination with partial pivoting on
//! plain nested vectors.

#![allow(dead_code)]

use hypergaussians::hypergauss::{HyperGaussianBlock, Partition};
use hypergaussians::linalg::{LowerTri, Mat};
use hypergaussians::rng::{self, Stream};

pub type Dense = Vec<Vec<f64>>;

pub fn dense(m: &Mat) -> Dense {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            out[i][j] = (0..k).map(|t| a[i][t] * b[t][j]).sum();
        }
    }
    out
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Dense) -> Dense {
    let n = a.len();
    let mut m: Dense = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular");
        m[col].iter_mut().for_each(|v| *v /= p);
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// `ln |det a|` and the sign, by elimination with partial pivoting.
pub fn log_abs_det(a: &Dense) -> (f64, f64) {
    let n = a.len();
    let mut m = a.clone();
    let (mut logdet, mut sign) = (0.0, 1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        if piv != col {
            m.swap(col, piv);
            sign = -sign;
        }
        let p = m[col][col];
        logdet += p.abs().ln();
        if p < 0.0 {
            sign = -sign;
        }
        for r in col + 1..n {
            let f = m[r][col] / p;
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    (logdet, sign)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `max |a − b| / max(|b|, 1)` elementwise.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

/// A block with every parameter drawn at random (not the small default init).
pub fn random_block(rng: &mut Stream, m: usize, n: usize) -> HyperGaussianBlock {
    let mut b = HyperGaussianBlock::zeros(Partition { m, n });
    b.mu_a = rng::normals(rng, m, 1.0);
    b.mu_b = rng::normals(rng, n, 1.0);
    b.raw_l11 = rng::normals(rng, b.raw_l11.len(), 0.3);
    b.l21 = rng::normals(rng, n * m, 0.5);
    b
}

/// Random lower factor with diagonal in roughly `[0.5, 2]`.
pub fn random_lower(rng: &mut Stream, n: usize) -> LowerTri {
    let mut rows: Dense = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..i {
            rows[i][j] = 0.3 * rng::normal(rng);
        }
        rows[i][i] = (0.4 * rng::normal(rng)).exp();
    }
    LowerTri::from_mat(&Mat::from_rows(&rows)).unwrap()
}

/// Full precision `L Lᵀ` with `L = [[L11, 0], [L21, L22]]`, assembled by hand.
pub fn joint_precision(block: &HyperGaussianBlock, l22: &LowerTri) -> Dense {
    let (m, n) = (block.m(), block.n());
    let mut l = vec![vec![0.0; m + n]; m + n];
    let mut k = 0;
    for i in 0..m {
        for j in 0..=i {
            l[i][j] = if i == j { block.raw_l11[k].exp() } else { block.raw_l11[k] };
            k += 1;
        }
    }
    for r in 0..n {
        for c in 0..m {
            l[m + r][c] = block.l21[r * m + c];
        }
        for c in 0..=r {
            l[m + r][m + c] = l22.get(r, c);
        }
    }
    matmul(&l, &transpose(&l))
}

/// Central difference of `f` along coordinate `i`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, eps: f64) -> f64 {
    let mut p = x.to_vec();
    p[i] = x[i] + eps;
    let fp = f(&p);
    p[i] = x[i] - eps;
    let fm = f(&p);
    (fp - fm) / (2.0 * eps)
}
