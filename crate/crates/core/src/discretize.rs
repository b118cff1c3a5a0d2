//! Flux-form discretization of the angular-mode operators.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Profile, WarpedSurface};
use crate::linalg::PeriodicTridiag;

/// Periodic grid on `[-period/2, period/2)` with the warped measure `w_j = A(x_j) Δx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    pub n: usize,
    pub dx: f64,
    pub period: f64,
    pub x: Vec<f64>,
    /// `A(x_j)`.
    pub a_node: Vec<f64>,
    /// `A(x_j + Δx/2)`.
    pub a_half: Vec<f64>,
    pub w: Vec<f64>,
}

pub fn build_grid(surface: &WarpedSurface, n: usize) -> Result<Grid1D> {
    if n < 64 {
        return Err(Error::InvalidResolution(n));
    }
    let period = surface.period;
    let dx = period / n as f64;
    let x: Vec<f64> = (0..n).map(|j| -period / 2.0 + dx * j as f64).collect();
    let a_node: Vec<f64> = x.iter().map(|&xj| surface.a(xj)).collect();
    let a_half: Vec<f64> = x.iter().map(|&xj| surface.a(xj + dx / 2.0)).collect();
    let w = a_node.iter().map(|a| a * dx).collect();
    Ok(Grid1D { n, dx, period, x, a_node, a_half, w })
}

/// Resolution policy: the smallest power of two with at least `ppw` points per
/// wavelength `2πh` and at least 256 points.
pub fn resolution_for(h: f64, period: f64, ppw: f64) -> usize {
    let need = (ppw * period / (2.0 * std::f64::consts::PI * h)).ceil() as usize;
    need.max(256).next_power_of_two()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// `h² L + i h a`.
    Damped,
    /// `h² L + i W`.
    Absorbing,
    /// `h² L + i h √z a − z` for the stored `z`.
    Modified { re: f64, im: f64 },
}

impl OperatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            OperatorKind::Damped => "damped",
            OperatorKind::Absorbing => "absorbing",
            OperatorKind::Modified { .. } => "modified",
        }
    }

    pub fn modified(z: C64) -> Self {
        OperatorKind::Modified { re: z.re, im: z.im }
    }
}

/// Discretized operator for angular mode `n` at semiclassical parameter `h`.
#[derive(Debug, Clone)]
pub struct ModeOperator {
    pub grid: Arc<Grid1D>,
    pub h: f64,
    pub n: u32,
    pub kind: OperatorKind,
    /// Real diagonal of `h² L_n`.
    pub lap_diag: Vec<f64>,
    /// `M[j][j+1]` of `h² L_n` (index `j` couples `j` and `j+1 mod N`).
    pub upper: Vec<f64>,
    /// `M[j+1][j]`.
    pub lower: Vec<f64>,
    /// Symmetrized coupling `−h² A_{j+½} / (Δx² √(A_j A_{j+1}))`.
    pub sym_off: Vec<f64>,
    /// Skew coefficient at the nodes (`a` or `W`).
    pub coeff: Vec<f64>,
}

pub fn build_mode_operator(
    grid: Arc<Grid1D>,
    coeff_profile: &Profile,
    h: f64,
    n: u32,
    kind: OperatorKind,
) -> Result<ModeOperator> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::InvalidParameter(format!("h = {h} must lie in (0, 1]")));
    }
    if let OperatorKind::Modified { re, im } = kind {
        if re <= 0.0 {
            return Err(Error::BranchCut { re, im });
        }
    }
    let coeff = coeff_profile.sample(&grid.x);
    Ok(ModeOperator::from_coefficients(grid, coeff, h, n, kind))
}

impl ModeOperator {
    pub fn from_coefficients(grid: Arc<Grid1D>, coeff: Vec<f64>, h: f64, n: u32, kind: OperatorKind) -> Self {
        let nn = grid.n;
        let h2 = h * h;
        let dx2 = grid.dx * grid.dx;
        let hn2 = (h * n as f64).powi(2);
        let mut lap_diag = vec![0.0; nn];
        let mut upper = vec![0.0; nn];
        let mut lower = vec![0.0; nn];
        let mut sym_off = vec![0.0; nn];
        for j in 0..nn {
            let jp = (j + 1) % nn;
            let jm = (j + nn - 1) % nn;
            let aj = grid.a_node[j];
            let ap = grid.a_half[j];
            let am = grid.a_half[jm];
            lap_diag[j] = h2 * (ap + am) / (aj * dx2) + hn2 / (aj * aj);
            upper[j] = -h2 * ap / (aj * dx2);
            lower[j] = -h2 * ap / (grid.a_node[jp] * dx2);
            sym_off[j] = -h2 * ap / (dx2 * (aj * grid.a_node[jp]).sqrt());
        }
        ModeOperator { grid, h, n, kind, lap_diag, upper, lower, sym_off, coeff }
    }

    pub fn len(&self) -> usize {
        self.grid.n
    }

    pub fn is_empty(&self) -> bool {
        self.grid.n == 0
    }

    /// Same mode and profile, different kind.
    pub fn with_kind(&self, kind: OperatorKind) -> Self {
        ModeOperator { kind, ..self.clone() }
    }

    /// Diagonal skew part at spectral parameter `z`.
    fn skew(&self, z: C64) -> C64 {
        match self.kind {
            OperatorKind::Damped => C64::new(0.0, self.h),
            OperatorKind::Absorbing => C64::new(0.0, 1.0),
            OperatorKind::Modified { .. } => C64::new(0.0, self.h) * z.sqrt(),
        }
    }

    /// Diagonal of the matrix whose inverse is the resolvent at `z`:
    /// `M − z` for damped/absorbing, `P̃(z)` for the modified family.
    pub fn shifted_diag(&self, z: C64) -> Vec<C64> {
        let s = self.skew(z);
        self.lap_diag.iter().zip(&self.coeff).map(|(&d, &c)| C64::new(d, 0.0) + s * c - z).collect()
    }

    /// Weighted symmetrization `D^{½}(M − z)D^{−½}` (or of `P̃(z)`).
    pub fn symmetrized(&self, z: C64) -> PeriodicTridiag {
        PeriodicTridiag { diag: self.shifted_diag(z), off: self.sym_off.clone() }
    }

    /// Stored spectral parameter of the modified kind, zero otherwise.
    pub fn own_shift(&self) -> C64 {
        match self.kind {
            OperatorKind::Modified { re, im } => C64::new(re, im),
            _ => C64::new(0.0, 0.0),
        }
    }

    /// The operator matrix itself: `M` (damped/absorbing) or `P̃(z)` (modified).
    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        let diag = self.shifted_diag(self.own_shift());
        self.apply_with_diag(&diag, u)
    }

    fn apply_with_diag(&self, diag: &[C64], u: &[C64]) -> Vec<C64> {
        let n = self.len();
        (0..n)
            .map(|j| {
                let jp = (j + 1) % n;
                let jm = (j + n - 1) % n;
                diag[j] * u[j] + u[jp] * self.upper[j] + u[jm] * self.lower[jm]
            })
            .collect()
    }

    /// `(M − z) u` for damped/absorbing kinds, `P̃(z) u` for modified.
    pub fn apply_shifted(&self, z: C64, u: &[C64]) -> Vec<C64> {
        self.apply_with_diag(&self.shifted_diag(z), u)
    }

    /// Triplets `(row, col, value)` of the operator matrix.
    pub fn triplets(&self) -> Vec<(usize, usize, C64)> {
        let n = self.len();
        let diag = self.shifted_diag(self.own_shift());
        let mut out = Vec::with_capacity(3 * n);
        for j in 0..n {
            out.push((j, j, diag[j]));
            out.push((j, (j + 1) % n, C64::new(self.upper[j], 0.0)));
            out.push(((j + 1) % n, j, C64::new(self.lower[j], 0.0)));
        }
        out.sort_by_key(|t| (t.0, t.1));
        out
    }

    /// Dense operator matrix, for small-N cross-checks.
    pub fn dense(&self) -> nalgebra::DMatrix<C64> {
        let n = self.len();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }
}

/// `⟨u, v⟩ = Σ w_j u_j conj(v_j)`.
pub fn weighted_inner(u: &[C64], v: &[C64], grid: &Grid1D) -> Result<C64> {
    if u.len() != v.len() || u.len() != grid.n {
        return Err(Error::LengthMismatch(u.len(), v.len()));
    }
    Ok(u.iter().zip(v).zip(&grid.w).map(|((a, b), w)| a * b.conj() * *w).sum())
}

pub fn weighted_norm(u: &[C64], grid: &Grid1D) -> Result<f64> {
    if u.len() != grid.n {
        return Err(Error::LengthMismatch(u.len(), grid.n));
    }
    Ok(u.iter().zip(&grid.w).map(|(a, w)| a.norm_sqr() * w).sum::<f64>().sqrt())
}

/// Normalized defect of `Im⟨(P − z)u, u⟩ = h⟨au, u⟩ − Im z ‖u‖²`.
pub fn stationary_identity_residual(op: &ModeOperator, u: &[C64], z: C64) -> Result<f64> {
    if op.kind != OperatorKind::Damped {
        return Err(Error::InvalidParameter("identity applies to the damped kind".into()));
    }
    let g = &op.grid;
    let f = op.apply_shifted(z, u);
    let lhs = weighted_inner(&f, u, g)?.im;
    let au: Vec<C64> = u.iter().zip(&op.coeff).map(|(x, a)| x * *a).collect();
    let damp = weighted_inner(&au, u, g)?.re;
    let nrm2 = weighted_norm(u, g)?.powi(2);
    Ok((lhs - op.h * damp + z.im * nrm2).abs() / (nrm2 + f64::MIN_POSITIVE))
}


#[cfg(test)]
mod properties {
    use super::*;
    use crate::geometry::{make_profile, ProfileName, Shape, Zone};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn stationary_identity_holds(seed in 0u64..10_000, inv_h in 4.0f64..64.0, n in 0u32..80, re in 0.2f64..2.0, im in -1.0f64..1.0) {
            let s = WarpedSurface::torus(1 + (seed % 3) as u32).unwrap();
            let a = make_profile(ProfileName::A, Shape::Outer { inner: 1.0, outer: 1.7 }, 3.0, s.period, Zone::Avoid(0.5)).unwrap();
            let op = build_mode_operator(Arc::new(build_grid(&s, 256).unwrap()), &a, 1.0 / inv_h, n, OperatorKind::Damped).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<C64> = (0..256).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            prop_assert!(stationary_identity_residual(&op, &u, C64::new(re, im)).unwrap() < 1e-12);
        }
    }
}
