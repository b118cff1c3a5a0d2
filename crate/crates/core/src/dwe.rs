//! Mode-by-mode damped wave evolution, decay fits and the resolvent-to-decay rate calculus.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::discretize::{build_mode_operator, Grid1D, ModeOperator, OperatorKind};
use crate::error::{Error, Result};
use crate::geometry::{reduce, Profile};
use crate::linalg::{interleaved_order, BandBuilder, BandedLu};
use crate::resolvent::{FitModel, ScalingFit};
use crate::C64;

/// First-order system `d/dt (u, v) = (v, −L_n u − a v)` for one angular mode.
#[derive(Debug, Clone)]
pub struct Generator {
    /// Mode operator at `h = 1`, so its real part is the unscaled `L_n`.
    pub op: ModeOperator,
    /// Gershgorin bound for the largest frequency `√λ_max(L_n)`.
    pub omega_max: f64,
}

pub fn assemble_generator(grid: Arc<Grid1D>, damping: &Profile, n: u32) -> Result<Generator> {
    let op = build_mode_operator(grid, damping, 1.0, n, OperatorKind::Damped)?;
    let len = op.len();
    let bound = (0..len)
        .map(|j| op.lap_diag[j] + op.upper[j].abs() + op.lower[(j + len - 1) % len].abs())
        .fold(0.0, f64::max);
    Ok(Generator { omega_max: bound.sqrt(), op })
}

impl Generator {
    pub fn len(&self) -> usize {
        self.op.len()
    }

    pub fn is_empty(&self) -> bool {
        self.op.is_empty()
    }

    pub fn damping(&self) -> &[f64] {
        &self.op.coeff
    }

    /// `L_n u`.
    pub fn laplacian(&self, u: &[C64]) -> Vec<C64> {
        let n = self.len();
        let op = &self.op;
        (0..n)
            .map(|j| {
                let jp = (j + 1) % n;
                let jm = (j + n - 1) % n;
                u[j] * op.lap_diag[j] + u[jp] * op.upper[j] + u[jm] * op.lower[jm]
            })
            .collect()
    }

    pub fn apply(&self, u: &[C64], v: &[C64]) -> (Vec<C64>, Vec<C64>) {
        let lu = self.laplacian(u);
        let dv = lu.iter().zip(v).zip(self.damping()).map(|((l, v), a)| -l - v * a).collect();
        (v.to_vec(), dv)
    }

    /// Dense `2N × 2N` real block matrix `[[0, I], [−L_n, −a]]`.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut g = DMatrix::zeros(2 * n, 2 * n);
        for j in 0..n {
            g[(j, n + j)] = 1.0;
            g[(n + j, j)] = -self.op.lap_diag[j];
            g[(n + j, (j + 1) % n)] -= self.op.upper[j];
            g[(n + (j + 1) % n, j)] -= self.op.lower[j];
            g[(n + j, n + j)] = -self.op.coeff[j];
        }
        g
    }
}

/// Pair `(u, ∂_t u)` of one angular mode at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveState {
    pub n: u32,
    pub u: Vec<C64>,
    pub v: Vec<C64>,
    pub t: f64,
}

impl WaveState {
    /// `u₀ = 0` and `u₁` a periodized Gaussian of width `width` centred at `x0`.
    pub fn gaussian_velocity(grid: &Grid1D, n: u32, x0: f64, width: f64) -> Self {
        let v = grid
            .x
            .iter()
            .map(|&x| {
                let d = reduce(x - x0, grid.period);
                C64::new((-(d * d) / (2.0 * width * width)).exp(), 0.0)
            })
            .collect();
        WaveState { n, u: vec![C64::new(0.0, 0.0); grid.n], v, t: 0.0 }
    }

    /// Remove the constant stationary component of the `n = 0` mode.
    pub fn project_constant(&mut self, grid: &Grid1D) {
        if self.n != 0 {
            return;
        }
        let area: f64 = grid.w.iter().sum();
        let mean: C64 = self.u.iter().zip(&grid.w).map(|(u, w)| u * w).sum::<C64>() / area;
        for u in &mut self.u {
            *u -= mean;
        }
    }
}

/// `½(‖v‖² + |∂_x u|² + n²/A²|u|²)` with the flux-form gradient quadrature.
pub fn energy(state: &WaveState, gen: &Generator) -> f64 {
    let g = &gen.op.grid;
    let n = g.n;
    let nn = (state.n as f64).powi(2);
    let mut e = 0.0;
    for j in 0..n {
        let jp = (j + 1) % n;
        e += g.w[j] * state.v[j].norm_sqr();
        e += g.a_half[j] / g.dx * (state.u[jp] - state.u[j]).norm_sqr();
        e += g.w[j] * nn / (g.a_node[j] * g.a_node[j]) * state.u[j].norm_sqr();
    }
    0.5 * e
}

/// Instantaneous loss rate `∫ a|v|²`.
pub fn dissipated_power(state: &WaveState, gen: &Generator) -> f64 {
    let g = &gen.op.grid;
    state.v.iter().zip(&g.w).zip(gen.damping()).map(|((v, w), a)| w * a * v.norm_sqr()).sum()
}

/// Factored Crank–Nicolson step for a fixed `dt`.
pub struct CrankNicolson<'a> {
    gen: &'a Generator,
    dt: f64,
    lu: BandedLu,
    order: Vec<usize>,
    pos: Vec<usize>,
}

impl<'a> CrankNicolson<'a> {
    pub fn new(gen: &'a Generator, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || dt * gen.omega_max > 0.5 {
            return Err(Error::Scheme(format!("dt = {dt} with dt·ω_max = {:.3} exceeds 0.5", dt * gen.omega_max)));
        }
        let n = gen.len();
        let (order, pos) = interleaved_order(n);
        let mut band = BandBuilder::new(n, 2, 2);
        let half = dt / 2.0;
        for j in 0..n {
            let k = (j + 1) % n;
            band.add(pos[j], pos[j], C64::new(2.0 / dt + gen.op.coeff[j] + half * gen.op.lap_diag[j], 0.0));
            band.add(pos[j], pos[k], C64::new(half * gen.op.upper[j], 0.0));
            band.add(pos[k], pos[j], C64::new(half * gen.op.lower[j], 0.0));
        }
        let lu = band.factor().ok_or_else(|| Error::Scheme("singular Crank–Nicolson matrix".into()))?;
        Ok(CrankNicolson { gen, dt, lu, order, pos })
    }

    pub fn step(&self, state: &mut WaveState, scratch: &mut Vec<C64>) {
        let dt = self.dt;
        let lu0 = self.gen.laplacian(&state.u);
        let rhs: Vec<C64> = (0..state.u.len())
            .map(|j| state.u[j] * (2.0 / dt + self.gen.op.coeff[j]) + state.v[j] * 2.0 - lu0[j] * (dt / 2.0))
            .collect();
        scratch.clear();
        scratch.extend(self.order.iter().map(|&node| rhs[node]));
        self.lu.solve_in_place(scratch);
        for j in 0..state.u.len() {
            let u1 = scratch[self.pos[j]];
            state.v[j] = (u1 - state.u[j]) * (2.0 / dt) - state.v[j];
            state.u[j] = u1;
        }
        state.t += dt;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub t: f64,
    pub energy: f64,
    pub dissipated_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evolution {
    pub state: WaveState,
    pub trace: Vec<EnergySample>,
    /// `max_k |E_k − E_0 + ∫₀^{t_k} a|v|²| / E_0` with trapezoid time quadrature.
    pub identity_residual: f64,
}

/// Crank–Nicolson evolution with energy bookkeeping every `record_every` steps.
pub fn evolve(state: WaveState, gen: &Generator, dt: f64, steps: usize, record_every: usize) -> Result<Evolution> {
    let cn = CrankNicolson::new(gen, dt)?;
    let mut s = state;
    let e0 = energy(&s, gen);
    let mut prev_e = e0;
    let mut prev_p = dissipated_power(&s, gen);
    let mut dissipated = 0.0;
    let mut worst: f64 = 0.0;
    let mut trace = vec![EnergySample { t: s.t, energy: e0, dissipated_power: prev_p }];
    let mut scratch = Vec::with_capacity(s.u.len());
    let every = record_every.max(1);
    for k in 1..=steps {
        cn.step(&mut s, &mut scratch);
        let e = energy(&s, gen);
        let p = dissipated_power(&s, gen);
        if e > prev_e + 1e-10 * e0 {
            return Err(Error::Scheme(format!("energy grew from {prev_e} to {e} at t = {}", s.t)));
        }
        dissipated += 0.5 * dt * (prev_p + p);
        if e0 > 0.0 {
            worst = worst.max((e - e0 + dissipated).abs() / e0);
        }
        prev_e = e;
        prev_p = p;
        if k % every == 0 || k == steps {
            trace.push(EnergySample { t: s.t, energy: e, dissipated_power: p });
        }
    }
    Ok(Evolution { state: s, trace, identity_residual: worst })
}

/// Templates for `log E(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum DecayTemplate {
    /// `c − r t`.
    Exp,
    /// `c − r √t`.
    ExpSqrt,
    /// `c − s (log t − q log log(2 + t))`.
    PolyLog { q: f64 },
}

impl DecayTemplate {
    fn feature(&self, t: f64) -> f64 {
        match self {
            DecayTemplate::Exp => t,
            DecayTemplate::ExpSqrt => t.sqrt(),
            DecayTemplate::PolyLog { q } => t.ln() - q * (2.0 + t).ln().ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub template: DecayTemplate,
    pub rate: f64,
    pub intercept: f64,
    /// RMS misfit of `log E`.
    pub residual: f64,
    pub decades: f64,
    /// Fewer than two decades of decay were captured.
    pub qualitative: bool,
}

/// Least squares of `log E` against the template feature over `(t, E)` samples with `t > 0`.
pub fn fit_decay(trace: &[(f64, f64)], template: DecayTemplate) -> Result<DecayFit> {
    for i in 1..trace.len() {
        if trace[i].1 > trace[i - 1].1 * (1.0 + 1e-10) {
            return Err(Error::NonMonotone(i));
        }
    }
    let pts: Vec<(f64, f64)> =
        trace.iter().filter(|(t, e)| *t > 0.0 && *e > 0.0).map(|&(t, e)| (template.feature(t), e.ln())).collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientSamples(format!("{} usable energy samples", pts.len())));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / k).sqrt();
    let decades = (pts[0].1 - pts[pts.len() - 1].1) / std::f64::consts::LN_10;
    Ok(DecayFit { template, rate: -slope, intercept, residual, decades, qualitative: decades < 2.0 })
}

/// Strip-width profile `P(r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StripProfile {
    Constant { p0: f64 },
    /// `c / log r`.
    InverseLog { c: f64 },
    /// `c · r^{−exponent}`.
    Power { c: f64, exponent: f64 },
}

impl StripProfile {
    /// `P(e^{lf})`.
    pub fn at_log(&self, lf: f64) -> f64 {
        match *self {
            StripProfile::Constant { p0 } => p0,
            StripProfile::InverseLog { c } => c / lf,
            StripProfile::Power { c, exponent } => c * (-exponent * lf).exp(),
        }
    }
}

/// Resolvent growth bound `G(r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GrowthBound {
    Constant { g0: f64 },
    /// `c · log r`.
    Log { c: f64 },
    /// `c · r^n`.
    Power { c: f64, n: f64 },
}

impl GrowthBound {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            GrowthBound::Constant { g0 } => g0,
            GrowthBound::Log { c } => c * r.ln(),
            GrowthBound::Power { c, n } => c * r.powf(n),
        }
    }

    /// Polynomial order `N` with `G = O(r^N)`; logarithmic growth counts as `0⁺`.
    pub fn order(&self) -> f64 {
        match *self {
            GrowthBound::Constant { .. } | GrowthBound::Log { .. } => 0.0,
            GrowthBound::Power { n, .. } => n.max(0.0),
        }
    }
}

/// Closed-form decay profiles `F(t)`, evaluated as `log F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DecayProfile {
    Exp { rate: f64 },
    /// `e^{√t / c}`.
    ExpSqrt { c: f64 },
    /// `t^s / log^q(2 + t)`.
    PolyLog { s: f64, q: f64 },
}

impl DecayProfile {
    pub fn log_f(&self, t: f64) -> f64 {
        match *self {
            DecayProfile::Exp { rate } => rate * t,
            DecayProfile::ExpSqrt { c } => t.sqrt() / c,
            DecayProfile::PolyLog { s, q } => s * t.ln() - q * (2.0 + t).ln().ln(),
        }
    }
}

/// `((k+1)/2) log F − t P(F)`; the decay condition asks for this to be `≤ 0`.
pub fn fcond_residual(t: f64, lf: f64, p: &StripProfile, k: u32) -> f64 {
    (k as f64 + 1.0) / 2.0 * lf - t * p.at_log(lf)
}

pub fn log_grid(t0: f64, t1: f64, count: usize) -> Vec<f64> {
    let (a, b) = (t0.ln(), t1.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1).max(1) as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCheck {
    pub max_residual: f64,
    /// Smallest grid time after which `log F` is nondecreasing.
    pub monotone_from: Option<f64>,
}

/// Evaluate the decay condition for a closed-form `F` on a time grid.
pub fn check_profile(f: &DecayProfile, p: &StripProfile, k: u32, ts: &[f64]) -> ProfileCheck {
    let lfs: Vec<f64> = ts.iter().map(|&t| f.log_f(t)).collect();
    let max_residual = ts.iter().zip(&lfs).map(|(&t, &lf)| fcond_residual(t, lf, p, k)).fold(f64::MIN, f64::max);
    let mut start = ts.len();
    while start > 1 && lfs[start - 1] >= lfs[start - 2] {
        start -= 1;
    }
    let monotone_from = if start == ts.len() { None } else { Some(ts[start - 1]) };
    ProfileCheck { max_residual, monotone_from }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    pub g: GrowthBound,
    pub p: StripProfile,
    pub k: u32,
    pub n_order: f64,
    /// `(t, log F(t))` at saturation of the decay condition.
    pub samples: Vec<(f64, f64)>,
    pub max_residual: f64,
    pub monotone: bool,
}

impl DecayModel {
    /// `log` of the energy bound `F^{−s}` for data in `H^s`, `0 < s ≤ k`.
    pub fn log_energy_bound(&self, s: f64) -> Vec<(f64, f64)> {
        self.samples.iter().map(|&(t, lf)| (t, -s * lf)).collect()
    }
}

fn saturate(t: f64, p: &StripProfile, k: u32) -> f64 {
    let g = |lf: f64| fcond_residual(t, lf, p, k);
    let (mut lo, mut hi) = match p {
        StripProfile::InverseLog { .. } => (1e-300, 1.0),
        _ => (-1.0, 1.0),
    };
    while g(lo) > 0.0 {
        lo = if lo > 0.0 { lo * 1e-3 } else { lo * 2.0 };
    }
    while g(hi) <= 0.0 {
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Largest `F` obeying `F^{(k+1)/2} ≤ exp(t P(F))` at each time, by bisection in `log F`.
pub fn rate_from_resolvent(g: GrowthBound, p: StripProfile, k: u32, ts: &[f64]) -> Result<DecayModel> {
    let n_order = g.order();
    let kk = k as f64;
    if kk <= n_order + 1.0 || (matches!(g, GrowthBound::Log { .. }) && k < 2) {
        return Err(Error::RegularityInsufficient { k, bound: n_order + 1.0 });
    }
    let samples: Vec<(f64, f64)> = ts.iter().map(|&t| (t, saturate(t, &p, k))).collect();
    let max_residual = samples.iter().map(|&(t, lf)| fcond_residual(t, lf, &p, k)).fold(f64::MIN, f64::max);
    let monotone = samples.windows(2).all(|w| w[1].1 >= w[0].1);
    Ok(DecayModel { g, p, k, n_order, samples, max_residual, monotone })
}

/// Resolvent data for the wave generator derived from a fitted loss factor `α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorBounds {
    pub g: GrowthBound,
    pub p: StripProfile,
    pub n_order: f64,
    /// Polynomial order too large for `k_max`; the bounds use `α²`.
    pub weak: bool,
}

/// `G(r) = α(1/r)`, `P(r) = c / α(1/r)` for the fitted `α(h) = h · norm(h)`.
pub fn alpha_to_g_p(fit: &ScalingFit, c: f64, k_max: u32) -> GeneratorBounds {
    let (g, p) = match fit.model {
        FitModel::Log => (GrowthBound::Log { c: fit.log_coeff }, StripProfile::InverseLog { c: c / fit.log_coeff }),
        FitModel::Power => {
            let order = -(fit.exponent + 1.0);
            if order <= 0.0 {
                (GrowthBound::Constant { g0: fit.power_coeff }, StripProfile::Constant { p0: c / fit.power_coeff })
            } else {
                (
                    GrowthBound::Power { c: fit.power_coeff, n: order },
                    StripProfile::Power { c: c / fit.power_coeff, exponent: order },
                )
            }
        }
    };
    let n_order = g.order();
    if n_order + 1.0 < k_max as f64 {
        return GeneratorBounds { g, p, n_order, weak: false };
    }
    let (g, p) = match (g, p) {
        (GrowthBound::Power { c: gc, n }, StripProfile::Power { c: pc, exponent }) => (
            GrowthBound::Power { c: gc * gc, n: 2.0 * n },
            StripProfile::Power { c: pc * pc / c.max(f64::MIN_POSITIVE), exponent: 2.0 * exponent },
        ),
        other => other,
    };
    GeneratorBounds { g, p, n_order: g.order(), weak: true }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::build_grid;
    use crate::geometry::{make_profile, ProfileName, Shape, WarpedSurface, Zone};
    use proptest::prelude::*;

    fn flat_gen(n: usize, plateau: f64, mode: u32) -> Generator {
        let s = WarpedSurface::flat(2.0);
        let grid = Arc::new(build_grid(&s, n).unwrap());
        let a = make_profile(ProfileName::A, Shape::Constant, plateau, 2.0, Zone::Free).unwrap();
        assemble_generator(grid, &a, mode).unwrap()
    }

    fn torus_gen(n: usize, a: &Profile, mode: u32) -> Generator {
        let s = WarpedSurface::torus(1).unwrap();
        let grid = Arc::new(build_grid(&s, n).unwrap());
        assemble_generator(grid, a, mode).unwrap()
    }

    #[test]
    fn undamped_spectrum_is_imaginary_and_paired() {
        let g = flat_gen(64, 0.0, 0);
        let ev = g.dense().complex_eigenvalues();
        let dx = 2.0 / 64.0;
        let mut freqs: Vec<f64> = ev.iter().map(|l| l.im.abs()).collect();
        freqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected: Vec<f64> = (0..64)
            .flat_map(|k| {
                let mu = 4.0 / (dx * dx) * (std::f64::consts::PI * k as f64 / 64.0).sin().powi(2);
                [mu.sqrt(), mu.sqrt()]
            })
            .collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (f, e) in freqs.iter().zip(&expected) {
            assert!((f - e).abs() < 1e-6 * (1.0 + e), "{f} vs {e}");
        }
        // The zero eigenvalue is a Jordan block, so its real part is only accurate to √ε‖G‖.
        let tol = 1e-6 * g.omega_max;
        for l in ev.iter() {
            assert!(l.re.abs() < tol);
            let mirror = C64::new(-l.re, l.im);
            assert!(ev.iter().any(|m| (m - mirror).norm() < tol));
        }
    }

    #[test]
    fn constant_state_is_stationary() {
        let g = flat_gen(64, 0.7, 0);
        let one = vec![C64::new(1.0, 0.0); 64];
        let (du, dv) = g.apply(&one, &vec![C64::new(0.0, 0.0); 64]);
        assert!(du.iter().chain(&dv).all(|z| z.norm() < 1e-12));
        let s = WaveState { n: 0, u: one, v: vec![C64::new(0.0, 0.0); 64], t: 0.0 };
        assert!(energy(&s, &g).abs() < 1e-20);
    }

    #[test]
    fn energy_zero_and_standing_wave() {
        let g = flat_gen(128, 0.0, 0);
        let zero = WaveState { n: 0, u: vec![C64::new(0.0, 0.0); 128], v: vec![C64::new(0.0, 0.0); 128], t: 0.0 };
        assert_eq!(energy(&zero, &g), 0.0);
        let amp = 0.8;
        let k = 3.0 * std::f64::consts::PI;
        let v: Vec<C64> = g.op.grid.x.iter().map(|&x| C64::new(amp * (k * x).sin(), 0.0)).collect();
        let s = WaveState { n: 0, u: zero.u.clone(), v, t: 0.0 };
        let e0 = energy(&s, &g);
        assert!((e0 - 0.25 * 2.0 * amp * amp).abs() < 1e-12);
        let dt = 0.4 / g.omega_max;
        let ev = evolve(s, &g, dt, (5.0 / dt) as usize, 50).unwrap();
        for smp in &ev.trace {
            assert!((smp.energy - e0).abs() / e0 < 1e-8);
        }
    }

    #[test]
    fn conservation_without_damping_on_torus() {
        let zero = make_profile(ProfileName::A, Shape::Constant, 0.0, 4.0, Zone::Free).unwrap();
        let g = torus_gen(256, &zero, 3);
        let s = WaveState::gaussian_velocity(&g.op.grid, 3, 0.3, 0.2);
        let e0 = energy(&s, &g);
        let dt = 0.5 / g.omega_max;
        let ev = evolve(s, &g, dt, (5.0 / dt) as usize, 100).unwrap();
        assert!(ev.trace.iter().all(|smp| (smp.energy - e0).abs() / e0 < 1e-8));
    }

    #[test]
    fn dissipation_identity_is_second_order() {
        let a = make_profile(ProfileName::A, Shape::Outer { inner: 0.5, outer: 1.2 }, 2.0, 4.0, Zone::Free).unwrap();
        let g = torus_gen(128, &a, 2);
        let s = WaveState::gaussian_velocity(&g.op.grid, 2, 1.0, 0.3);
        let base = 0.4 / g.omega_max;
        let res: Vec<f64> = [1usize, 2, 4]
            .iter()
            .map(|&k| evolve(s.clone(), &g, base / k as f64, (2.0 / base) as usize * k, 1_000_000).unwrap().identity_residual)
            .collect();
        let (r1, r2) = (res[0] / res[1], res[1] / res[2]);
        assert!((3.5..=4.5).contains(&r1) && (3.5..=4.5).contains(&r2), "{res:?}");
    }

    #[test]
    fn cfl_precondition_enforced() {
        let g = flat_gen(64, 1.0, 0);
        assert!(matches!(CrankNicolson::new(&g, 1.0 / g.omega_max), Err(Error::Scheme(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn step_is_energy_contractive(seed in 0u64..10_000, mode in 0u32..6) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = make_profile(ProfileName::A, Shape::Outer { inner: 1.0, outer: 1.7 }, 3.0, 4.0, Zone::Free).unwrap();
            let g = torus_gen(64, &a, mode);
            let mut rv = |_: usize| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let u: Vec<C64> = (0..64).map(&mut rv).collect();
            let v: Vec<C64> = (0..64).map(&mut rv).collect();
            let mut s = WaveState { n: mode, u, v, t: 0.0 };
            let e0 = energy(&s, &g);
            let cn = CrankNicolson::new(&g, 0.5 / g.omega_max).unwrap();
            let mut scratch = Vec::new();
            cn.step(&mut s, &mut scratch);
            prop_assert!(energy(&s, &g) <= e0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn fits_identify_templates() {
        let ts: Vec<f64> = (1..200).map(|i| i as f64 * 0.05).collect();
        let exp: Vec<(f64, f64)> = ts.iter().map(|&t| (t, (-2.0 * t).exp())).collect();
        let f = fit_decay(&exp, DecayTemplate::Exp).unwrap();
        assert!((f.rate - 2.0).abs() < 0.01 && !f.qualitative);
        let sq: Vec<(f64, f64)> = ts.iter().map(|&t| (t, (-3.0 * t.sqrt()).exp())).collect();
        let fs = fit_decay(&sq, DecayTemplate::ExpSqrt).unwrap();
        let fe = fit_decay(&sq, DecayTemplate::Exp).unwrap();
        assert!((fs.rate - 3.0).abs() < 0.01);
        assert!(fe.residual > fs.residual);
        let pl: Vec<(f64, f64)> = ts.iter().map(|&t| (t, (-1.5 * (t.ln() - 2.0 * (2.0 + t).ln().ln())).exp())).collect();
        assert!((fit_decay(&pl, DecayTemplate::PolyLog { q: 2.0 }).unwrap().rate - 1.5).abs() < 1e-9);
        let bad = vec![(0.1, 1.0), (0.2, 0.5), (0.3, 0.7)];
        assert!(matches!(fit_decay(&bad, DecayTemplate::Exp), Err(Error::NonMonotone(2))));
    }

    #[test]
    fn constant_strip_gives_exponential_profile() {
        let ts = log_grid(1.0, 1e6, 200);
        let m = rate_from_resolvent(GrowthBound::Constant { g0: 1.0 }, StripProfile::Constant { p0: 0.3 }, 2, &ts).unwrap();
        for &(t, lf) in &m.samples {
            assert!((lf - 0.2 * t).abs() <= 1e-12 * lf.max(1.0));
        }
        assert!(m.max_residual <= 0.0 && m.monotone);
        let exact = check_profile(&DecayProfile::Exp { rate: 0.2 }, &StripProfile::Constant { p0: 0.3 }, 2, &ts);
        assert!(exact.max_residual.abs() <= 1e-12 * 0.3e6);
    }

    #[test]
    fn log_and_power_profiles_pass() {
        let ts = log_grid(1.0, 1e6, 400);
        let c = check_profile(&DecayProfile::ExpSqrt { c: 2.0 }, &StripProfile::InverseLog { c: 1.0 }, 2, &ts);
        assert!(c.max_residual <= 0.0);
        let tight = check_profile(&DecayProfile::ExpSqrt { c: 1.0 }, &StripProfile::InverseLog { c: 1.0 }, 2, &ts);
        assert!(tight.max_residual > 0.0);
        let m2 = check_profile(&DecayProfile::PolyLog { s: 3.0, q: 13.5 }, &StripProfile::Power { c: 1.0, exponent: 1.0 / 3.0 }, 2, &ts);
        assert!(m2.max_residual <= 0.0);
        assert!(m2.monotone_from.unwrap() > 10.0);
        for (p, g) in [
            (StripProfile::InverseLog { c: 1.0 }, GrowthBound::Log { c: 1.0 }),
            (StripProfile::Power { c: 1.0, exponent: 1.0 / 3.0 }, GrowthBound::Power { c: 1.0, n: 1.0 / 3.0 }),
        ] {
            let m = rate_from_resolvent(g, p, 2, &ts).unwrap();
            assert!(m.max_residual <= 0.0 && m.monotone);
        }
    }

    #[test]
    fn regularity_gate() {
        let ts = log_grid(1.0, 10.0, 5);
        let g = GrowthBound::Power { c: 1.0, n: 1.0 / 3.0 };
        let p = StripProfile::Power { c: 1.0, exponent: 1.0 / 3.0 };
        assert!(matches!(rate_from_resolvent(g, p, 1, &ts), Err(Error::RegularityInsufficient { k: 1, .. })));
        assert!(rate_from_resolvent(g, p, 2, &ts).is_ok());
    }

    fn synthetic_fit(model: FitModel, exponent: f64) -> ScalingFit {
        ScalingFit {
            model,
            exponent,
            power_coeff: 2.0,
            power_residual: 0.0,
            log_coeff: 3.0,
            log_residual: 0.0,
            h_range: (1.0 / 128.0, 1.0 / 16.0),
        }
    }

    #[test]
    fn alpha_translation() {
        let b = alpha_to_g_p(&synthetic_fit(FitModel::Log, -1.0), 0.5, 4);
        assert_eq!(b.g, GrowthBound::Log { c: 3.0 });
        assert_eq!(b.p, StripProfile::InverseLog { c: 0.5 / 3.0 });
        assert!(!b.weak && b.n_order == 0.0);
        let b = alpha_to_g_p(&synthetic_fit(FitModel::Power, -4.0 / 3.0), 0.5, 4);
        assert!((b.n_order - 1.0 / 3.0).abs() < 1e-12 && !b.weak);
        assert!((b.g.eval(8.0) - 2.0 * 2.0).abs() < 1e-12);
        let b = alpha_to_g_p(&synthetic_fit(FitModel::Power, -1.0), 0.5, 4);
        assert_eq!(b.g, GrowthBound::Constant { g0: 2.0 });
        assert_eq!(b.p, StripProfile::Constant { p0: 0.25 });
        let b = alpha_to_g_p(&synthetic_fit(FitModel::Power, -5.0), 0.5, 4);
        assert!(b.weak && (b.n_order - 8.0).abs() < 1e-12);
    }

    /// Spectral gap of a GCC generator against the fitted energy decay rate.
    #[test]
    fn exponential_profile_matches_direct_decay() {
        let a = make_profile(ProfileName::A, Shape::Floor { base: 0.5, inner: 1.0, outer: 1.7 }, 1.0, 4.0, Zone::Free).unwrap();
        let g = torus_gen(64, &a, 1);
        let gap = g.dense().complex_eigenvalues().iter().map(|l| -l.re).fold(f64::INFINITY, f64::min);
        assert!(gap > 0.0);
        let ts = log_grid(1.0, 100.0, 20);
        let m = rate_from_resolvent(GrowthBound::Constant { g0: 1.0 }, StripProfile::Constant { p0: gap }, 2, &ts).unwrap();
        let bound_rate = -(m.log_energy_bound(2.0)[19].1 - m.log_energy_bound(2.0)[0].1) / (100.0 - 1.0);
        let s = WaveState::gaussian_velocity(&g.op.grid, 1, 0.0, 0.3);
        let dt = 0.5 / g.omega_max;
        let ev = evolve(s, &g, dt, (20.0 / dt) as usize, 20).unwrap();
        let tr: Vec<(f64, f64)> = ev.trace.iter().filter(|s| s.t >= 2.0).map(|s| (s.t, s.energy)).collect();
        let fit = fit_decay(&tr, DecayTemplate::Exp).unwrap();
        let ratio = fit.rate / bound_rate;
        assert!((0.25..=4.0).contains(&ratio), "fit {} bound {}", fit.rate, bound_rate);
    }
}
