//! Householder QR with column pivoting.

use nalgebra::{DMatrix, DVector};

/// Relative rank tolerance against the largest column norm.
pub(crate) const RANK_TOL: f64 = 1e-8;

pub(crate) struct PivotedQr {
    /// Reflectors, stored as (v, beta) with H = I - beta v v'.
    reflectors: Vec<(DVector<f64>, f64)>,
    /// Upper-trapezoidal factor with columns in pivoted order, `rank` rows kept.
    r: DMatrix<f64>,
    /// perm[k] = original column placed at position k.
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub(crate) fn new(a: &DMatrix<f64>) -> Self {
        let (n, p) = a.shape();
        let mut w = a.clone();
        let mut perm: Vec<usize> = (0..p).collect();
        let max_norm = (0..p).map(|j| w.column(j).norm()).fold(0.0, f64::max);
        let tol = RANK_TOL * max_norm.max(f64::MIN_POSITIVE);
        let mut reflectors = Vec::new();
        let mut rank = 0;
        for k in 0..p.min(n) {
            let (best, best_norm) = (k..p).map(|j| (j, w.view((k, j), (n - k, 1)).norm())).fold((k, -1.0), |acc, x| {
                if x.1 > acc.1 {
                    x
                } else {
                    acc
                }
            });
            if best_norm <= tol {
                break;
            }
            if best != k {
                w.swap_columns(k, best);
                perm.swap(k, best);
            }
            let x = w.view((k, k), (n - k, 1)).clone_owned();
            let alpha = if x[0] >= 0.0 { -best_norm } else { best_norm };
            let mut v = x;
            v[0] -= alpha;
            let vnorm2 = v.norm_squared();
            let beta = if vnorm2 > 0.0 { 2.0 / vnorm2 } else { 0.0 };
            for j in k..p {
                let mut col = w.view_mut((k, j), (n - k, 1));
                let s = beta * v.dot(&col);
                col -= &v * s;
            }
            for i in k + 1..n {
                w[(i, k)] = 0.0;
            }
            reflectors.push((v.column(0).clone_owned(), beta));
            rank += 1;
        }
        let r = w.rows(0, rank).clone_owned();
        PivotedQr { reflectors, r, perm, rank }
    }

    pub(crate) fn rank(&self) -> usize {
        self.rank
    }

    /// Original indices of columns aliased with the basis.
    pub(crate) fn aliased_columns(&self) -> Vec<usize> {
        let mut b = self.perm[self.rank..].to_vec();
        b.sort_unstable();
        b
    }

    /// Computes Q'b.
    pub(crate) fn qt_mul(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut y = b.clone();
        let n = y.len();
        for (k, (v, beta)) in self.reflectors.iter().enumerate() {
            let mut seg = y.rows_mut(k, n - k);
            let s = beta * v.dot(&seg);
            seg.axpy(-s, v, 1.0);
        }
        y
    }

    fn r11(&self) -> DMatrix<f64> {
        self.r.columns(0, self.rank).clone_owned()
    }

    /// Least-squares solution with aliased coefficients set to zero.
    pub(crate) fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let p = self.perm.len();
        let qtb = self.qt_mul(b);
        let z = solve_upper(&self.r11(), &qtb.rows(0, self.rank).clone_owned());
        let mut x = DVector::zeros(p);
        for k in 0..self.rank {
            x[self.perm[k]] = z[k];
        }
        x
    }

    /// Generalized inverse of A'A consistent with [`Self::solve`], p×p.
    pub(crate) fn gram_ginv(&self) -> DMatrix<f64> {
        let p = self.perm.len();
        let rinv = upper_inverse(&self.r11());
        let inner = &rinv * rinv.transpose();
        let mut out = DMatrix::zeros(p, p);
        for a in 0..self.rank {
            for b in 0..self.rank {
                out[(self.perm[a], self.perm[b])] = inner[(a, b)];
            }
        }
        out
    }

    /// Basis of the null space of A, p × (p - rank).
    pub(crate) fn null_space(&self) -> DMatrix<f64> {
        let p = self.perm.len();
        let m = p - self.rank;
        let mut out = DMatrix::zeros(p, m);
        if m == 0 {
            return out;
        }
        let r11 = self.r11();
        let r12 = self.r.columns(self.rank, m).clone_owned();
        for j in 0..m {
            let rhs = r12.column(j).clone_owned();
            let z = solve_upper(&r11, &rhs);
            for k in 0..self.rank {
                out[(self.perm[k], j)] = -z[k];
            }
            out[(self.perm[self.rank + j], j)] = 1.0;
        }
        // orthonormalize so estimability checks are scale-free
        let qr = out.clone().qr();
        qr.q().columns(0, m).clone_owned()
    }

    /// log |det R11|, i.e. half the log-determinant of the reduced A'A.
    pub(crate) fn log_abs_det_r(&self) -> f64 {
        (0..self.rank).map(|k| self.r[(k, k)].abs().ln()).sum()
    }
}

pub(crate) fn solve_upper(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut x = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= r[(i, j)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

fn upper_inverse(r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        inv.set_column(j, &solve_upper(r, &e));
    }
    inv
}
