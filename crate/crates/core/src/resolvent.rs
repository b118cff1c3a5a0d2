//! Resolvent norms, cutoff norms, scaling fits, transfer and strip checks.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{build_grid, resolution_for, Grid1D, ModeOperator, OperatorKind};
use crate::error::{Error, Result};
use crate::geometry::{Profile, ProfileSet, WarpedSurface};
use crate::linalg::{self, BandBuilder, PeriodicTridiag, RitzPair};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// How `σ_min` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    Dense,
    Iterative,
    /// Dense up to the given size, iterative above.
    Auto { dense_max: usize },
}

/// Lanczos budget before falling back to the dense oracle.
pub const LANCZOS_MAX_ITER: usize = 200;
pub const LANCZOS_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolventNorm {
    /// `1/σ_min`; infinite when `near_pole`.
    pub norm: f64,
    pub near_pole: bool,
    pub dense: bool,
}

impl ResolventNorm {
    fn from_sigma(sigma: f64, scale: f64, dense: bool) -> Self {
        if !(sigma > 1e-14 * scale) {
            ResolventNorm { norm: f64::INFINITY, near_pole: true, dense }
        } else {
            ResolventNorm { norm: 1.0 / sigma, near_pole: false, dense }
        }
    }
}

/// `1/σ_min` of a symmetrized matrix.
pub fn inverse_norm(s: &PeriodicTridiag, method: NormMethod) -> ResolventNorm {
    let scale = s.scale();
    let dense = match method {
        NormMethod::Dense => true,
        NormMethod::Iterative => false,
        NormMethod::Auto { dense_max } => s.len() <= dense_max,
    };
    if dense {
        return ResolventNorm::from_sigma(linalg::dense_sigma_min(&s.dense()), scale, true);
    }
    match linalg::iterative_sigma_min(s, LANCZOS_MAX_ITER, LANCZOS_TOL) {
        None => ResolventNorm { norm: f64::INFINITY, near_pole: true, dense: false },
        Some((sigma, res)) if res.converged => ResolventNorm::from_sigma(sigma, scale, false),
        Some(_) => ResolventNorm::from_sigma(linalg::dense_sigma_min(&s.dense()), scale, true),
    }
}

/// Weighted operator norm of the resolvent at `z`.
pub fn resolvent_norm(op: &ModeOperator, z: C64) -> ResolventNorm {
    inverse_norm(&op.symmetrized(z), NormMethod::Iterative)
}

pub fn resolvent_norm_with(op: &ModeOperator, z: C64, method: NormMethod) -> ResolventNorm {
    inverse_norm(&op.symmetrized(z), method)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffSide {
    Right,
    Both,
}

/// Reject cutoffs that do not vanish near the trapped set.
pub fn validate_cutoff(cutoff: &Profile, trapped: &[f64], margin: f64) -> Result<()> {
    for &x0 in trapped {
        let n = 64;
        for k in 0..=n {
            let x = x0 - margin + 2.0 * margin * k as f64 / n as f64;
            if cutoff.eval(x) > 0.0 {
                return Err(Error::InvalidCutoff(x0));
            }
        }
    }
    Ok(())
}

/// `‖R χ‖` (right) or `‖χ R χ‖` (both); `trapped` lists the projected trapped set.
pub fn cutoff_resolvent_norm(op: &ModeOperator, z: C64, side: CutoffSide, cutoff: &Profile, trapped: &[f64]) -> Result<f64> {
    validate_cutoff(cutoff, trapped, 2.0 * op.grid.dx)?;
    let chi = cutoff.sample(&op.grid.x);
    Ok(cutoff_norm_values(op, z, side, &chi))
}

/// Cutoff norm for pre-sampled cutoff values (no trapped-set validation).
pub fn cutoff_norm_values(op: &ModeOperator, z: C64, side: CutoffSide, chi: &[f64]) -> f64 {
    if chi.iter().all(|&c| c == 0.0) {
        return 0.0;
    }
    let s = op.symmetrized(z);
    let Some(lu) = s.factor(ZERO) else { return f64::INFINITY };
    let mut scratch = Vec::new();
    let res = linalg::lanczos_top(
        op.len(),
        |x, out| {
            for ((o, v), c) in out.iter_mut().zip(x).zip(chi) {
                *o = v * *c;
            }
            lu.solve(out, &mut scratch);
            if side == CutoffSide::Both {
                out.iter_mut().zip(chi).for_each(|(o, c)| *o *= c * c);
            }
            lu.solve_adjoint(out, &mut scratch);
            out.iter_mut().zip(chi).for_each(|(o, c)| *o *= *c);
        },
        LANCZOS_MAX_ITER,
        LANCZOS_TOL,
    );
    res.value.max(0.0).sqrt()
}

/// Grid and coefficient samples shared by all modes at one `h`.
#[derive(Debug, Clone)]
pub struct ModeFamily {
    pub surface: WarpedSurface,
    pub h: f64,
    pub grid: Arc<Grid1D>,
    pub damping: Vec<f64>,
    pub absorption: Vec<f64>,
}

impl ModeFamily {
    pub fn new(surface: &WarpedSurface, profiles: &ProfileSet, h: f64, ppw: f64) -> Result<Self> {
        let n = resolution_for(h, surface.period, ppw);
        Self::with_resolution(surface, profiles, h, n)
    }

    pub fn with_resolution(surface: &WarpedSurface, profiles: &ProfileSet, h: f64, n: usize) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::InvalidParameter(format!("h = {h} must lie in (0, 1]")));
        }
        let grid = Arc::new(build_grid(surface, n)?);
        let damping = profiles.damping.sample(&grid.x);
        let absorption = profiles.absorption.sample(&grid.x);
        Ok(ModeFamily { surface: surface.clone(), h, grid, damping, absorption })
    }

    pub fn op(&self, n: u32, kind: OperatorKind) -> ModeOperator {
        let coeff = match kind {
            OperatorKind::Absorbing => self.absorption.clone(),
            _ => self.damping.clone(),
        };
        ModeOperator::from_coefficients(self.grid.clone(), coeff, self.h, n, kind)
    }

    /// Mode whose Clairaut level sits at the neck: `h n ≈ A(0)`.
    pub fn neck_mode(&self) -> u32 {
        (self.surface.a(0.0) / self.h).round() as u32
    }

    /// Truncation `n_max = ceil(2 max A / h)`.
    pub fn n_max(&self) -> u32 {
        (2.0 * self.surface.max_a() / self.h).ceil() as u32
    }

    /// First mode whose symbol `(hn)²/A²` exceeds `Re z + δ` everywhere.
    pub fn band_edge(&self, re_z: f64, delta: f64) -> u32 {
        (self.surface.max_a() * (re_z + delta).max(0.0).sqrt() / self.h).ceil() as u32
    }
}

/// Supremum over modes of the resolvent norm at a fixed `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalNorm {
    pub norm: f64,
    pub n_star: u32,
    pub tail_monotone: bool,
    pub per_mode: Vec<(u32, f64)>,
}

pub fn global_resolvent_norm(family: &ModeFamily, z: C64, kind: OperatorKind, delta: f64, subsample: u32) -> GlobalNorm {
    let n_max = family.n_max();
    let edge = family.band_edge(z.re, delta).min(n_max);
    let step = subsample.max(1);
    let mut modes: Vec<u32> = (0..edge).step_by(step as usize).collect();
    modes.extend(edge..=n_max);
    let per_mode: Vec<(u32, f64)> = modes.par_iter().map(|&n| (n, resolvent_norm(&family.op(n, kind), z).norm)).collect();
    let (n_star, norm) = per_mode.iter().cloned().fold((0, 0.0), |acc, (n, v)| if v > acc.1 { (n, v) } else { acc });
    let tail: Vec<f64> = per_mode.iter().filter(|(n, _)| *n >= edge).map(|p| p.1).collect();
    let tail_monotone = tail.windows(2).all(|w| w[1] <= 1.05 * w[0]);
    GlobalNorm { norm, n_star, tail_monotone, per_mode }
}

/// Quantity maximized over the spectral window.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Plain,
    Cutoff { side: CutoffSide, chi: Vec<f64> },
}

impl Target {
    fn eval(&self, op: &ModeOperator, z: C64) -> f64 {
        match self {
            Target::Plain => resolvent_norm(op, z).norm,
            Target::Cutoff { side, chi } => cutoff_norm_values(op, z, *side, chi),
        }
    }
}

/// Eigenvalues of a damped or absorbing mode operator near the real shifts.
pub fn eigenvalues_near(op: &ModeOperator, shifts: &[f64], steps: usize, tol: f64) -> Vec<C64> {
    let base = op.symmetrized(ZERO);
    let mut out: Vec<C64> = Vec::new();
    let mut scratch = Vec::new();
    for (i, &s) in shifts.iter().enumerate() {
        let sigma = C64::new(s, 0.0);
        let Some(lu) = base.factor(sigma) else { continue };
        let ritz = linalg::shift_invert_arnoldi(op.len(), sigma, |b| lu.solve(b, &mut scratch), steps, 17 + i as u64);
        push_converged(&mut out, &ritz, tol);
    }
    out
}

fn push_converged(out: &mut Vec<C64>, ritz: &[RitzPair], tol: f64) {
    for r in ritz.iter().filter(|r| r.residual <= tol) {
        let scale = r.lambda.norm().max(1.0);
        if !out.iter().any(|e| (e - r.lambda).norm() <= 1e-9 * scale) {
            out.push(r.lambda);
        }
    }
}

/// Eigenvalues `s` of the quadratic pencil `h²L + i h s a − s²` near the real shifts,
/// via the companion linearization `s (u, v) = (v, h²L u + i h a v)`.
pub fn pencil_roots_near(op: &ModeOperator, shifts: &[f64], steps: usize, tol: f64) -> Vec<C64> {
    let n = op.len();
    let (_, pos) = linalg::interleaved_order(n);
    let idx = |j: usize, c: usize| 2 * pos[j] + c;
    let mut out = Vec::new();
    for (i, &s) in shifts.iter().enumerate() {
        let sigma = C64::new(s, 0.0);
        let mut b = BandBuilder::new(2 * n, 5, 5);
        for j in 0..n {
            let jp = (j + 1) % n;
            b.add(idx(j, 0), idx(j, 0), -sigma);
            b.add(idx(j, 0), idx(j, 1), C64::new(1.0, 0.0));
            b.add(idx(j, 1), idx(j, 0), C64::new(op.lap_diag[j], 0.0));
            b.add(idx(j, 1), idx(j, 1), C64::new(0.0, op.h * op.coeff[j]) - sigma);
            b.add(idx(j, 1), idx(jp, 0), C64::new(op.sym_off[j], 0.0));
            b.add(idx(jp, 1), idx(j, 0), C64::new(op.sym_off[j], 0.0));
        }
        let Some(lu) = b.factor() else { continue };
        let ritz = linalg::shift_invert_arnoldi(2 * n, sigma, |v| lu.solve_in_place(v), steps, 31 + i as u64);
        push_converged(&mut out, &ritz, tol);
    }
    out
}

/// Golden-section maximization of a unimodal-near-peak function on `[a, b]`.
pub fn maximize_scalar(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, xtol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (a, b);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let (fa, fb) = (f(a), f(b));
    while (b - a).abs() > xtol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    [(c, fc), (d, fd), (a, fa), (b, fb)]
        .into_iter()
        .fold((c, f64::MIN), |acc, (x, v)| if v > acc.1 { (x, v) } else { acc })
}

/// Supremum over real `z ∈ [center − half, center + half]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSup {
    pub z: f64,
    pub norm: f64,
    pub eigenvalues: Vec<(f64, f64)>,
}

/// Maximize the target over the real window, guided by nearby eigenvalues.
pub fn windowed_sup(op: &ModeOperator, center: f64, half: f64, target: &Target) -> WindowSup {
    let (lo, hi) = (center - half, center + half);
    let shifts: Vec<f64> = (0..5).map(|k| lo + 2.0 * half * k as f64 / 4.0).collect();
    let eigs: Vec<C64> = eigenvalues_near(op, &shifts, 30, 1e-8)
        .into_iter()
        .filter(|e| e.re >= lo - half && e.re <= hi + half)
        .collect();
    let f = |x: f64| target.eval(op, C64::new(x, 0.0));
    let mut best = (center, f(center));
    let consider = |x: f64, w: f64, best: &mut (f64, f64)| {
        let a = (x - 2.0 * w).max(lo);
        let b = (x + 2.0 * w).min(hi);
        if b <= a {
            return;
        }
        let r = maximize_scalar(f, a, b, w * 1e-4);
        if r.1 > best.1 {
            *best = r;
        }
    };
    for e in &eigs {
        let w = e.im.abs().max(1e-9);
        let x = e.re.clamp(lo, hi);
        consider(x, w, &mut best);
    }
    let grid = 16;
    let spacing = 2.0 * half / grid as f64;
    let mut samples: Vec<(f64, f64)> = (0..=grid).map(|k| lo + spacing * k as f64).map(|x| (x, f(x))).collect();
    samples.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    for &(x, _) in samples.iter().take(3) {
        consider(x, spacing / 2.0, &mut best);
    }
    WindowSup { z: best.0, norm: best.1, eigenvalues: eigs.iter().map(|e| (e.re, e.im)).collect() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `norm ≈ C h^{e}`.
    Power,
    /// `norm ≈ C |log h| / h`.
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub model: FitModel,
    /// Log-log slope (power model).
    pub exponent: f64,
    /// Prefactor of the power model.
    pub power_coeff: f64,
    pub power_residual: f64,
    /// Prefactor of the log model.
    pub log_coeff: f64,
    pub log_residual: f64,
    pub h_range: (f64, f64),
}

impl ScalingFit {
    pub fn residual(&self) -> f64 {
        match self.model {
            FitModel::Power => self.power_residual,
            FitModel::Log => self.log_residual,
        }
    }

    /// Fitted norm at `h`.
    pub fn predict(&self, h: f64) -> f64 {
        match self.model {
            FitModel::Power => self.power_coeff * h.powf(self.exponent),
            FitModel::Log => self.log_coeff * h.ln().abs() / h,
        }
    }

    /// `α(h) = h · norm(h)` from the fitted model.
    pub fn alpha(&self, h: f64) -> f64 {
        h * self.predict(h)
    }
}

/// Least squares in log-log coordinates for both models.
pub fn fit_scaling(samples: &[(f64, f64)], model: FitModel) -> Result<ScalingFit> {
    if samples.len() < 5 {
        return Err(Error::InsufficientSamples(format!("{} samples, need 5", samples.len())));
    }
    let hmin = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let hmax = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    if hmax / hmin < 8.0 - 1e-9 {
        return Err(Error::InsufficientSamples(format!("h spans a factor {:.3}, need 8", hmax / hmin)));
    }
    if samples.iter().any(|s| !(s.0 > 0.0 && s.0 < 1.0 && s.1 > 0.0 && s.1.is_finite())) {
        return Err(Error::InsufficientSamples("samples need 0 < h < 1 and finite positive norms".into()));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let power_residual = (xs.iter().zip(&ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum::<f64>() / n).sqrt();
    let logs: Vec<f64> = samples.iter().map(|s| s.1.ln() - (s.0.ln().abs() / s.0).ln()).collect();
    let lc = logs.iter().sum::<f64>() / n;
    let log_residual = (logs.iter().map(|l| (l - lc).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ScalingFit {
        model,
        exponent: slope,
        power_coeff: icpt.exp(),
        power_residual,
        log_coeff: lc.exp(),
        log_residual,
        h_range: (hmin, hmax),
    })
}

/// Per-`h` record of the damping-vs-absorption comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub h: f64,
    pub absorbing: f64,
    pub damped: f64,
    pub alpha: f64,
    /// `damped · h / α(h)`.
    pub constant: f64,
    /// Same constant against the weak prediction `α(h)²`.
    pub weak_constant: f64,
    /// Damped norm at `z* ± i c₀ h / α(h)`.
    pub off_axis: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub rows: Vec<TransferRow>,
    pub absorbing_fit: ScalingFit,
    pub damped_fit: ScalingFit,
    pub exponent_gap: f64,
    pub constant_ratio: f64,
    pub bounded: bool,
}

/// Window half-width around `z = 1` used for the mode-`n₀` supremum.
pub fn sup_half_width(h: f64) -> f64 {
    2.0 * h
}

/// Damped norms against the absorbing fit `α(h)`.
pub fn verify_transfer(families: &[ModeFamily], absorbing_fit: &ScalingFit, c0: f64, bound_factor: f64) -> Result<TransferReport> {
    if families.is_empty() {
        return Err(Error::MissingFit);
    }
    let rows: Vec<TransferRow> = families
        .par_iter()
        .map(|fam| {
            let h = fam.h;
            let n0 = fam.neck_mode();
            let abs = windowed_sup(&fam.op(n0, OperatorKind::Absorbing), 1.0, sup_half_width(h), &Target::Plain);
            let dop = fam.op(n0, OperatorKind::Damped);
            let dmp = windowed_sup(&dop, 1.0, sup_half_width(h), &Target::Plain);
            let alpha = absorbing_fit.alpha(h);
            let shift = c0 * h / alpha;
            let up = resolvent_norm(&dop, C64::new(dmp.z, shift)).norm;
            let down = resolvent_norm(&dop, C64::new(dmp.z, -shift)).norm;
            TransferRow {
                h,
                absorbing: abs.norm,
                damped: dmp.norm,
                alpha,
                constant: dmp.norm * h / alpha,
                weak_constant: dmp.norm * h / (alpha * alpha),
                off_axis: (up, down),
            }
        })
        .collect();
    let damped_fit = fit_scaling(&rows.iter().map(|r| (r.h, r.damped)).collect::<Vec<_>>(), absorbing_fit.model)?;
    let cmax = rows.iter().map(|r| r.constant).fold(0.0, f64::max);
    let cmin = rows.iter().map(|r| r.constant).fold(f64::INFINITY, f64::min);
    let constant_ratio = cmax / cmin;
    Ok(TransferReport {
        exponent_gap: (damped_fit.exponent - absorbing_fit.exponent).abs(),
        absorbing_fit: absorbing_fit.clone(),
        damped_fit,
        constant_ratio,
        bounded: constant_ratio < bound_factor,
        rows,
    })
}

/// Strip scan outcome at one `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripReport {
    pub h: f64,
    pub alpha: f64,
    /// Largest `c₀` with no damped eigenvalue in `[1−δ, 1+δ] + i[0, c₀ h/α]`.
    pub damped_threshold: f64,
    /// Largest `c₀` with no modified-pencil spectrum in `[1 − c₀/α, 1 + c₀/α] + i[0, c₀ h/α]`.
    pub modified_threshold: f64,
    /// `(c₀, min σ_min · α / h)` over the sampled rectangles.
    pub sweep: Vec<(f64, f64)>,
    pub modes: (u32, u32),
}

/// Sweep of `c₀` values: 20 logarithmic steps around `center`.
pub fn c0_sweep(center: f64) -> Vec<f64> {
    (0..20).map(|k| center * 10f64.powf(-1.0 + 2.0 * k as f64 / 19.0)).collect()
}

/// Spectrum-free strip widths for the damped operator and the modified pencil.
pub fn strip_scan(family: &ModeFamily, alpha: f64, delta: f64, n_points: usize) -> StripReport {
    let h = family.h;
    let lo_mode = ((1.0 - delta).sqrt() * 0.9 / h).floor() as u32;
    let hi_mode = ((1.0 + delta).sqrt() * 1.1 / h).ceil() as u32;
    let spacing = 0.02;
    let shifts: Vec<f64> = {
        let k = (2.0 * delta / spacing).round() as usize;
        (0..=k).map(|i| 1.0 - delta + spacing * i as f64).collect()
    };
    let (slo, shi) = ((1.0 - delta).sqrt(), (1.0 + delta).sqrt());
    let s_shifts: Vec<f64> = {
        let k = ((shi - slo) / spacing).ceil() as usize;
        (0..=k).map(|i| slo + (shi - slo) * i as f64 / k as f64).collect()
    };
    let per_mode: Vec<(f64, f64)> = (lo_mode..=hi_mode)
        .into_par_iter()
        .map(|n| {
            let op = family.op(n, OperatorKind::Damped);
            let damped = eigenvalues_near(&op, &shifts, 30, 1e-8)
                .into_iter()
                .filter(|e| (e.re - 1.0).abs() <= delta)
                .map(|e| e.im * alpha / h)
                .fold(f64::INFINITY, f64::min);
            let modified = pencil_roots_near(&op, &s_shifts, 30, 1e-8)
                .into_iter()
                .filter(|s| s.re > 0.0)
                .map(|s| s * s)
                .filter(|z| (z.re - 1.0).abs() <= delta)
                .map(|z| ((z.re - 1.0).abs() * alpha).max(z.im * alpha / h))
                .fold(f64::INFINITY, f64::min);
            (damped, modified)
        })
        .collect();
    let damped_threshold = per_mode.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let modified_threshold = per_mode.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let n0 = family.neck_mode();
    let op = family.op(n0, OperatorKind::Damped);
    let npts = n_points.max(2);
    let sweep = c0_sweep(damped_threshold)
        .into_iter()
        .map(|c0| {
            let top = c0 * h / alpha;
            let mut m = f64::INFINITY;
            for i in 0..npts {
                let re = 1.0 - delta + 2.0 * delta * i as f64 / (npts - 1) as f64;
                for k in 0..npts {
                    let im = top * k as f64 / (npts - 1) as f64;
                    let r = resolvent_norm(&op, C64::new(re, im));
                    m = m.min(if r.near_pole { 0.0 } else { 1.0 / r.norm });
                }
            }
            (c0, m * alpha / h)
        })
        .collect();
    StripReport { h, alpha, damped_threshold, modified_threshold, sweep, modes: (lo_mode, hi_mode) }
}

/// Lower-half-plane check: `(z, norm, 1/|Im z|)` for each sample.
pub fn lower_half_plane(op: &ModeOperator, zs: &[C64]) -> Vec<(C64, f64, f64)> {
    zs.iter().map(|&z| (z, resolvent_norm(op, z).norm, 1.0 / z.im.abs())).collect()
}

/// Smallest constants making each inequality of the control chain hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlConstants {
    pub h: f64,
    pub propagation: f64,
    pub control: f64,
    pub identity: f64,
}

/// Evaluate the three inequalities on `u = (P − z)^{-1} f` for the given sources.
pub fn verify_control_chain(
    op: &ModeOperator,
    z: f64,
    alpha: f64,
    b1: &Profile,
    phi: &Profile,
    chi: &Profile,
    sources: &[Vec<C64>],
) -> ControlConstants {
    let g = &op.grid;
    let b1v = b1.sample(&g.x);
    let phiv = phi.sample(&g.x);
    let chiv = chi.sample(&g.x);
    let sq: Vec<f64> = g.w.iter().map(|w| w.sqrt()).collect();
    let s = op.symmetrized(C64::new(z, 0.0));
    let lu = s.factor(ZERO).expect("resolvent at a real point of the window");
    let mut scratch = Vec::new();
    let nrm = |v: &[C64], c: Option<&[f64]>| -> f64 {
        v.iter()
            .enumerate()
            .map(|(j, x)| x.norm_sqr() * c.map_or(1.0, |c| c[j] * c[j]))
            .sum::<f64>()
            .sqrt()
    };
    let one_minus: Vec<f64> = b1v.iter().map(|b| 1.0 - b).collect();
    let h = op.h;
    let mut out = ControlConstants { h, propagation: 0.0, control: 0.0, identity: 0.0 };
    for f in sources {
        // Work with D^{1/2}-scaled vectors so Euclidean norms are weighted norms.
        let ft: Vec<C64> = f.iter().zip(&sq).map(|(x, s)| x * *s).collect();
        let mut u = ft.clone();
        lu.solve(&mut u, &mut scratch);
        let fn_ = nrm(&ft, None);
        let un = nrm(&u, None);
        let b1u = nrm(&u, Some(&b1v));
        let b1f = nrm(&ft, Some(&b1v));
        let phiu = nrm(&u, Some(&phiv));
        let chiu = nrm(&u, Some(&chiv));
        let rest = nrm(&u, Some(&one_minus));
        let prop = ((b1u - alpha / h * b1f).max(0.0)) / (alpha.sqrt() * phiu).max(f64::MIN_POSITIVE);
        let ctl = rest.max(phiu) / (fn_ / h + chiu);
        let ident = chiu * chiu * h / (fn_ * un);
        out.propagation = out.propagation.max(prop);
        out.control = out.control.max(ctl);
        out.identity = out.identity.max(ident);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::build_mode_operator;
    use crate::geometry::{make_profile, ProfileName, Shape, Zone};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn standard(period: f64) -> ProfileSet {
        ProfileSet {
            damping: make_profile(ProfileName::A, Shape::Outer { inner: 1.0, outer: 1.7 }, 8.0, period, Zone::Avoid(0.5)).unwrap(),
            absorption: make_profile(ProfileName::W, Shape::Outer { inner: 1.0, outer: 1.7 }, 2.0, period, Zone::Avoid(0.5)).unwrap(),
        }
    }

    #[test]
    fn eight_by_eight_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = PeriodicTridiag {
            diag: (0..8).map(|_| C64::new(rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0))).collect(),
            off: (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let inv = s.dense().try_inverse().unwrap();
        let spec = inv.svd(false, false).singular_values.max();
        for m in [NormMethod::Dense, NormMethod::Iterative] {
            let r = inverse_norm(&s, m);
            assert!((r.norm - spec).abs() <= 1e-10 * spec);
        }
    }

    #[test]
    fn constant_absorber_bounds_norm() {
        let s = WarpedSurface::torus(2).unwrap();
        let g = Arc::new(build_grid(&s, 128).unwrap());
        let w = make_profile(ProfileName::W, Shape::Constant, 1.0, 4.0, Zone::Free).unwrap();
        for n in [0, 5, 30] {
            let op = build_mode_operator(g.clone(), &w, 0.05, n, OperatorKind::Absorbing).unwrap();
            for z in [0.5, 1.0, 1.7] {
                assert!(resolvent_norm(&op, C64::new(z, 0.0)).norm <= 1.0 + 1e-12);
            }
            let r = resolvent_norm(&op, C64::new(1.0, -0.1)).norm;
            assert!(r <= 1.0 / 1.1 + 1e-12);
        }
    }

    #[test]
    fn symmetrization_conventions_agree() {
        let s = WarpedSurface::torus(2).unwrap();
        let fam = ModeFamily::with_resolution(&s, &standard(4.0), 0.1, 128).unwrap();
        let op = fam.op(9, OperatorKind::Damped);
        let z = C64::new(0.97, 0.0);
        let a = resolvent_norm_with(&op, z, NormMethod::Dense).norm;
        // D^{-1/2} (D (M - z)) D^{-1/2} built from the unsymmetrized matrix.
        let m = op.dense() - DMatrix::<C64>::identity(128, 128) * z;
        let d = DMatrix::from_fn(128, 128, |i, j| if i == j { C64::new(op.grid.w[i], 0.0) } else { ZERO });
        let dm = DMatrix::from_fn(128, 128, |i, j| if i == j { C64::new(op.grid.w[i].powf(-0.5), 0.0) } else { ZERO });
        let b = 1.0 / linalg::dense_sigma_min(&(&dm * (&d * m) * &dm));
        assert!((a - b).abs() <= 1e-12 * a, "{a} {b}");
    }

    #[test]
    fn cutoff_identity_and_zero() {
        let s = WarpedSurface::torus(2).unwrap();
        let fam = ModeFamily::with_resolution(&s, &standard(4.0), 0.1, 128).unwrap();
        let op = fam.op(10, OperatorKind::Absorbing);
        let z = C64::new(1.0, 0.0);
        let zero = make_profile(ProfileName::Chi, Shape::Constant, 0.0, 4.0, Zone::Free).unwrap();
        let one = make_profile(ProfileName::Chi, Shape::Constant, 1.0, 4.0, Zone::Free).unwrap();
        assert_eq!(cutoff_resolvent_norm(&op, z, CutoffSide::Right, &zero, &[0.0]).unwrap(), 0.0);
        let full = resolvent_norm(&op, z).norm;
        for side in [CutoffSide::Right, CutoffSide::Both] {
            let c = cutoff_resolvent_norm(&op, z, side, &one, &[]).unwrap();
            assert!((c - full).abs() < 1e-9 * full);
        }
        assert!(matches!(cutoff_resolvent_norm(&op, z, CutoffSide::Right, &one, &[0.0]), Err(Error::InvalidCutoff(_))));
        let away = make_profile(ProfileName::Chi, Shape::Outer { inner: 0.4, outer: 0.7 }, 1.0, 4.0, Zone::Avoid(0.3)).unwrap();
        let c = cutoff_resolvent_norm(&op, z, CutoffSide::Right, &away, &[0.0]).unwrap();
        assert!(c > 0.0 && c <= full * (1.0 + 1e-9));
    }

    #[test]
    fn gcc_damping_bound() {
        let s = WarpedSurface::torus(1).unwrap();
        let a = make_profile(ProfileName::A, Shape::Floor { base: 1.0, inner: 1.0, outer: 1.7 }, 3.0, 4.0, Zone::Free).unwrap();
        let p = ProfileSet { damping: a.clone(), absorption: a };
        let h = 1.0 / 16.0;
        let fam = ModeFamily::new(&s, &p, h, 16.0).unwrap();
        let g = global_resolvent_norm(&fam, C64::new(1.0, 0.0), OperatorKind::Damped, 0.25, 1);
        assert!(g.norm <= 1.0 / h * (1.0 + 1e-9));
        assert!(g.tail_monotone);
    }

    #[test]
    fn trapping_happens_at_the_neck_level() {
        let s = WarpedSurface::torus(1).unwrap();
        let h = 1.0 / 32.0;
        let fam = ModeFamily::new(&s, &standard(4.0), h, 16.0).unwrap();
        let g = global_resolvent_norm(&fam, C64::new(1.0, 0.0), OperatorKind::Damped, 0.25, 1);
        assert!((h * g.n_star as f64 - 1.0).abs() <= 0.2, "n* = {}", g.n_star);
        assert!(g.tail_monotone);
    }

    #[test]
    fn fits_identify_models() {
        let hs = [1.0 / 16.0, 1.0 / 23.0, 1.0 / 32.0, 1.0 / 45.0, 1.0 / 64.0, 1.0 / 128.0];
        let p: Vec<(f64, f64)> = hs.iter().map(|&h| (h, 3.0 / h)).collect();
        let f = fit_scaling(&p, FitModel::Power).unwrap();
        assert!((f.exponent + 1.0).abs() < 0.01 && f.power_residual < 1e-10);
        let l: Vec<(f64, f64)> = hs.iter().map(|&h| (h, h.ln().abs() / h)).collect();
        let f = fit_scaling(&l, FitModel::Log).unwrap();
        assert!(f.log_residual < 1e-10 && f.power_residual > f.log_residual);
        assert!(fit_scaling(&p[..4], FitModel::Power).is_err());
        let narrow: Vec<(f64, f64)> = (0..6).map(|k| (0.1 + 0.01 * k as f64, 1.0)).collect();
        assert!(fit_scaling(&narrow, FitModel::Power).is_err());
    }

    #[test]
    fn window_sup_finds_resonant_peak() {
        let s = WarpedSurface::torus(2).unwrap();
        let h = 1.0 / 16.0;
        let fam = ModeFamily::new(&s, &standard(4.0), h, 16.0).unwrap();
        let op = fam.op(fam.neck_mode(), OperatorKind::Absorbing);
        let sup = windowed_sup(&op, 1.0, 2.0 * h, &Target::Plain);
        // Dense scan oracle on a fine grid.
        let mut best: f64 = 0.0;
        for k in 0..=2000 {
            let z = 1.0 - 2.0 * h + 4.0 * h * k as f64 / 2000.0;
            best = best.max(resolvent_norm(&op, C64::new(z, 0.0)).norm);
        }
        assert!(sup.norm >= best * (1.0 - 1e-6), "{} vs {}", sup.norm, best);
    }

    #[test]
    fn pencil_roots_solve_the_quadratic_problem() {
        let s = WarpedSurface::torus(1).unwrap();
        let fam = ModeFamily::with_resolution(&s, &standard(4.0), 1.0 / 8.0, 128).unwrap();
        let op = fam.op(8, OperatorKind::Damped);
        let roots = pencil_roots_near(&op, &[0.95, 1.05], 30, 1e-8);
        assert!(!roots.is_empty());
        for s in roots {
            let z = s * s;
            let pt = op.with_kind(OperatorKind::modified(z));
            let r = resolvent_norm_with(&pt, z, NormMethod::Dense);
            assert!(r.near_pole || r.norm > 1e6, "s = {s}: norm {}", r.norm);
            assert!(s.im >= -1e-10);
        }
    }

    #[test]
    fn golden_section_maximizes() {
        let (x, v) = maximize_scalar(|x| -(x - 0.3).powi(2), 0.0, 1.0, 1e-9);
        assert!((x - 0.3).abs() < 1e-8 && v <= 0.0);
    }
}
