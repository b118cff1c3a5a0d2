//! Complex banded LU, inverse Lanczos for `σ_min`, dense SVD oracle and shift-invert Arnoldi.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Complex symmetric periodic tridiagonal matrix with real couplings.
/// `off[j]` couples `j` and `(j + 1) mod n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicTridiag {
    pub diag: Vec<C64>,
    pub off: Vec<f64>,
}

/// Ordering `0, n-1, 1, n-2, …` that turns a periodic tridiagonal into a pentadiagonal band.
pub fn interleaved_order(n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order = Vec::with_capacity(n);
    let (mut lo, mut hi) = (0usize, n - 1);
    while lo <= hi {
        order.push(lo);
        if hi != lo {
            order.push(hi);
        }
        lo += 1;
        if hi == 0 {
            break;
        }
        hi -= 1;
    }
    let mut pos = vec![0; n];
    for (p, &node) in order.iter().enumerate() {
        pos[node] = p;
    }
    (order, pos)
}

impl PeriodicTridiag {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        let n = self.len();
        (0..n)
            .map(|j| self.diag[j] * u[j] + u[(j + 1) % n] * self.off[j] + u[(j + n - 1) % n] * self.off[(j + n - 1) % n])
            .collect()
    }

    pub fn dense(&self) -> DMatrix<C64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            m[(j, j)] += self.diag[j];
            let k = (j + 1) % n;
            m[(j, k)] += C64::new(self.off[j], 0.0);
            m[(k, j)] += C64::new(self.off[j], 0.0);
        }
        m
    }

    /// Frobenius-type scale used for the near-pole test.
    pub fn scale(&self) -> f64 {
        self.diag.iter().map(|d| d.norm()).chain(self.off.iter().map(|o| 2.0 * o.abs())).fold(0.0, f64::max)
    }

    /// Factor `self − shift·I` in the interleaved band ordering.
    pub fn factor(&self, shift: C64) -> Option<PermutedLu> {
        let n = self.len();
        let (order, pos) = interleaved_order(n);
        let mut band = BandBuilder::new(n, 2, 2);
        for j in 0..n {
            band.add(pos[j], pos[j], self.diag[j] - shift);
            let k = (j + 1) % n;
            band.add(pos[j], pos[k], C64::new(self.off[j], 0.0));
            band.add(pos[k], pos[j], C64::new(self.off[j], 0.0));
        }
        band.factor().map(|lu| PermutedLu { lu, order, pos })
    }
}

/// Band matrix assembly prior to factorization.
pub struct BandBuilder {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<C64>,
}

impl BandBuilder {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandBuilder { n, kl, ku, width, data: vec![ZERO; n * width] }
    }

    /// Accumulate `v` at `(i, j)`; panics if outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: C64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i},{j}) outside band");
        let idx = i * self.width + (j + self.kl - i);
        self.data[idx] += v;
    }

    /// LU with partial pivoting; `None` on an exactly zero pivot.
    pub fn factor(mut self) -> Option<BandedLu> {
        let (n, kl, w) = (self.n, self.kl, self.width);
        let uw = self.kl + self.ku;
        let at = |i: usize, j: usize| i * w + (j + kl - i);
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[at(k, k)].norm();
            for i in k + 1..=last {
                let v = self.data[at(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[k] = p;
            if best == 0.0 {
                return None;
            }
            let jmax = (k + uw).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    self.data.swap(at(k, j), at(p, j));
                }
            }
            let pivot = self.data[at(k, k)];
            for i in k + 1..=last {
                let l = self.data[at(i, k)] / pivot;
                self.data[at(i, k)] = l;
                if l != ZERO {
                    for j in k + 1..=jmax {
                        let ukj = self.data[at(k, j)];
                        self.data[at(i, j)] -= l * ukj;
                    }
                }
            }
        }
        Some(BandedLu { n, kl, uw, width: w, data: self.data, piv })
    }
}

/// Banded LU factors with row pivots applied column by column.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    uw: usize,
    width: usize,
    data: Vec<C64>,
    piv: Vec<usize>,
}

impl BandedLu {
    #[inline]
    fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.width + (j + self.kl - i)]
    }

    pub fn solve_in_place(&self, b: &mut [C64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != ZERO {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    b[i] -= self.get(i, k) * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + self.uw).min(n - 1) {
                s -= self.get(k, j) * b[j];
            }
            b[k] = s / self.get(k, k);
        }
    }

    /// Solve with the conjugate transpose.
    pub fn solve_adjoint_in_place(&self, b: &mut [C64]) {
        let n = self.n;
        for k in 0..n {
            let mut s = b[k];
            for i in k.saturating_sub(self.uw)..k {
                s -= self.get(i, k).conj() * b[i];
            }
            b[k] = s / self.get(k, k).conj();
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for i in k + 1..=(k + self.kl).min(n - 1) {
                s -= self.get(i, k).conj() * b[i];
            }
            b[k] = s;
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
        }
    }

    /// Smallest pivot modulus, a cheap singularity indicator.
    pub fn min_pivot(&self) -> f64 {
        (0..self.n).map(|k| self.get(k, k).norm()).fold(f64::INFINITY, f64::min)
    }
}

/// Banded LU of a symmetrically permuted matrix; solves in original ordering.
#[derive(Debug, Clone)]
pub struct PermutedLu {
    lu: BandedLu,
    order: Vec<usize>,
    pos: Vec<usize>,
}

impl PermutedLu {
    pub fn solve(&self, b: &mut [C64], scratch: &mut Vec<C64>) {
        scratch.clear();
        scratch.extend(self.order.iter().map(|&node| b[node]));
        self.lu.solve_in_place(scratch);
        for (node, v) in b.iter_mut().enumerate() {
            *v = scratch[self.pos[node]];
        }
    }

    pub fn solve_adjoint(&self, b: &mut [C64], scratch: &mut Vec<C64>) {
        scratch.clear();
        scratch.extend(self.order.iter().map(|&node| b[node]));
        self.lu.solve_adjoint_in_place(scratch);
        for (node, v) in b.iter_mut().enumerate() {
            *v = scratch[self.pos[node]];
        }
    }
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn random_unit(n: usize, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let s = norm(&v);
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Outcome of a Lanczos run for the top eigenvalue of a Hermitian PSD operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanczosResult {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest eigenvalue of a Hermitian positive semidefinite operator, with full reorthogonalization.
pub fn lanczos_top(n: usize, mut apply: impl FnMut(&[C64], &mut [C64]), max_iter: usize, tol: f64) -> LanczosResult {
    let kmax = max_iter.min(n);
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(kmax + 1);
    basis.push(random_unit(n, 0x5eed));
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![ZERO; n];
    let mut prev = f64::NAN;
    let mut value = 0.0;
    for k in 0..kmax {
        apply(&basis[k], &mut w);
        let a = dot(&basis[k], &w).re;
        alpha.push(a);
        for q in &basis {
            let c = dot(q, &w);
            w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
        for q in &basis {
            let c = dot(q, &w);
            w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
        let b = norm(&w);
        let dim = alpha.len();
        let check = dim < 60 || dim.is_multiple_of(4) || dim == kmax || b == 0.0;
        if check {
            let t = DMatrix::from_fn(dim, dim, |i, j| {
                if i == j {
                    alpha[i]
                } else if i + 1 == j {
                    beta[i]
                } else if j + 1 == i {
                    beta[j]
                } else {
                    0.0
                }
            });
            let eig = nalgebra::SymmetricEigen::new(t);
            let (imax, &top) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap();
            value = top;
            let resid = b * eig.eigenvectors[(dim - 1, imax)].abs();
            let settled = prev.is_finite() && (top - prev).abs() <= tol * top.abs();
            if b <= 1e-300 || (settled && resid <= tol.sqrt() * top.abs()) {
                return LanczosResult { value, iterations: dim, converged: true };
            }
            prev = top;
        }
        if dim == n {
            return LanczosResult { value, iterations: dim, converged: true };
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    LanczosResult { value, iterations: alpha.len(), converged: false }
}

/// Smallest singular value from a dense SVD.
pub fn dense_sigma_min(m: &DMatrix<C64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// `σ_min` of a periodic tridiagonal through inverse Lanczos on `S^{-1} S^{-*}`.
/// Returns `None` when the factorization hits a zero pivot.
pub fn iterative_sigma_min(s: &PeriodicTridiag, max_iter: usize, tol: f64) -> Option<(f64, LanczosResult)> {
    let lu = s.factor(ZERO)?;
    let mut scratch = Vec::new();
    let res = lanczos_top(
        s.len(),
        |x, out| {
            out.copy_from_slice(x);
            lu.solve_adjoint(out, &mut scratch);
            lu.solve(out, &mut scratch);
        },
        max_iter,
        tol,
    );
    Some((1.0 / res.value.sqrt(), res))
}

/// Eigenvalue estimate from shift-invert Arnoldi.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RitzPair {
    pub lambda: C64,
    /// Relative residual of the inverted problem, `|β_k y_k| / |θ|`.
    pub residual: f64,
}

/// Eigenvalues of `A` nearest `sigma`, from `steps` Arnoldi iterations on `(A − σ)^{-1}`.
/// `solve` applies the inverse in place.
pub fn shift_invert_arnoldi(
    n: usize,
    sigma: C64,
    mut solve: impl FnMut(&mut [C64]),
    steps: usize,
    seed: u64,
) -> Vec<RitzPair> {
    let k = steps.min(n);
    let mut v: Vec<Vec<C64>> = vec![random_unit(n, seed)];
    let mut hmat = DMatrix::<C64>::zeros(k + 1, k);
    let mut kk = k;
    for j in 0..k {
        let mut w = v[j].clone();
        solve(&mut w);
        for _ in 0..2 {
            for (i, q) in v.iter().enumerate() {
                let c = dot(q, &w);
                hmat[(i, j)] += c;
                w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = norm(&w);
        hmat[(j + 1, j)] = C64::new(b, 0.0);
        if b < 1e-14 * hmat.column(j).norm() {
            kk = j + 1;
            break;
        }
        v.push(w.iter().map(|x| x / b).collect());
    }
    let hk = hmat.view((0, 0), (kk, kk)).into_owned();
    let beta = hmat[(kk, kk - 1)].norm();
    let schur = nalgebra::Schur::new(hk);
    let (q, t) = schur.unpack();
    let mut out = Vec::with_capacity(kk);
    for i in 0..kk {
        let theta = t[(i, i)];
        // Eigenvector of the triangular factor by back substitution.
        let mut y = DVector::<C64>::zeros(kk);
        y[i] = C64::new(1.0, 0.0);
        for r in (0..i).rev() {
            let mut s = ZERO;
            for c in r + 1..=i {
                s += t[(r, c)] * y[c];
            }
            let mut d = t[(r, r)] - theta;
            if d.norm() < 1e-14 * theta.norm().max(1e-300) {
                d = C64::new(1e-14 * theta.norm().max(1e-300), 0.0);
            }
            y[r] = -s / d;
        }
        let yv = &q * &y;
        let yn = yv.norm();
        let last = yv[kk - 1].norm() / yn;
        if theta.norm() == 0.0 {
            continue;
        }
        out.push(RitzPair { lambda: sigma + C64::new(1.0, 0.0) / theta, residual: beta * last / theta.norm() });
    }
    out
}
