//! Geodesic flow on the warped product, control times, monodromy and pressure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{reduce, Profile, WarpedSurface};

/// Cotangent state `(x, θ, ξ, η)`; `η` is the Clairaut invariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicState {
    pub x: f64,
    pub theta: f64,
    pub xi: f64,
    pub eta: f64,
}

impl GeodesicState {
    pub fn new(x: f64, theta: f64, xi: f64, eta: f64) -> Self {
        GeodesicState { x, theta, xi, eta }
    }

    /// Unit-energy state at `x` with direction angle `φ` from the `x`-axis.
    pub fn unit(surface: &WarpedSurface, x: f64, phi: f64) -> Self {
        GeodesicState { x, theta: 0.0, xi: phi.cos(), eta: surface.a(x) * phi.sin() }
    }

    /// Symbol `p = ξ² + η²/A(x)²`.
    pub fn p(&self, surface: &WarpedSurface) -> f64 {
        let a = surface.a(self.x);
        self.xi * self.xi + self.eta * self.eta / (a * a)
    }

    fn to_array(self) -> [f64; 4] {
        [self.x, self.theta, self.xi, self.eta]
    }

    fn from_array(v: [f64; 4]) -> Self {
        GeodesicState { x: v[0], theta: v[1], xi: v[2], eta: v[3] }
    }
}

fn hamilton(surface: &WarpedSurface, s: [f64; 4]) -> [f64; 4] {
    let (a, a1, _) = surface.eval(s[0]);
    let eta = s[3];
    [2.0 * s[2], 2.0 * eta / (a * a), 2.0 * eta * eta * a1 / (a * a * a), 0.0]
}

/// Jacobian of the Hamilton vector field in `(x, θ, ξ, η)`.
fn jacobian(surface: &WarpedSurface, s: [f64; 4]) -> [[f64; 4]; 4] {
    let (a, a1, a2) = surface.eval(s[0]);
    let eta = s[3];
    let a3 = a * a * a;
    [
        [0.0, 0.0, 2.0, 0.0],
        [-4.0 * eta * a1 / a3, 0.0, 0.0, 2.0 / (a * a)],
        [2.0 * eta * eta * (a2 / a3 - 3.0 * a1 * a1 / (a3 * a)), 0.0, 0.0, 4.0 * eta * a1 / a3],
        [0.0; 4],
    ]
}

fn axpy(y: [f64; 4], k: f64, x: [f64; 4]) -> [f64; 4] {
    [y[0] + k * x[0], y[1] + k * x[1], y[2] + k * x[2], y[3] + k * x[3]]
}

fn rk4(surface: &WarpedSurface, s: [f64; 4], dt: f64) -> [f64; 4] {
    let k1 = hamilton(surface, s);
    let k2 = hamilton(surface, axpy(s, dt / 2.0, k1));
    let k3 = hamilton(surface, axpy(s, dt / 2.0, k2));
    let k4 = hamilton(surface, axpy(s, dt, k3));
    let mut out = s;
    for i in 0..3 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

type Mat4 = [[f64; 4]; 4];

fn matmul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn mat_axpy(y: &Mat4, k: f64, x: &Mat4) -> Mat4 {
    let mut c = *y;
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] += k * x[i][j];
        }
    }
    c
}

const IDENTITY4: Mat4 = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

/// RK4 on the state together with its fundamental matrix.
fn rk4_variational(surface: &WarpedSurface, s: [f64; 4], m: &Mat4, dt: f64) -> ([f64; 4], Mat4) {
    let f = |s: [f64; 4], m: &Mat4| (hamilton(surface, s), matmul(&jacobian(surface, s), m));
    let (k1, l1) = f(s, m);
    let (k2, l2) = f(axpy(s, dt / 2.0, k1), &mat_axpy(m, dt / 2.0, &l1));
    let (k3, l3) = f(axpy(s, dt / 2.0, k2), &mat_axpy(m, dt / 2.0, &l2));
    let (k4, l4) = f(axpy(s, dt, k3), &mat_axpy(m, dt, &l3));
    let mut out = s;
    for i in 0..3 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let mut mm = *m;
    for i in 0..4 {
        for j in 0..4 {
            mm[i][j] += dt / 6.0 * (l1[i][j] + 2.0 * l2[i][j] + 2.0 * l3[i][j] + l4[i][j]);
        }
    }
    (out, mm)
}

/// Default step `10⁻³ / max(1, |ξ| + |η|)`.
pub fn default_dt(state: &GeodesicState) -> f64 {
    1e-3 / (state.xi.abs() + state.eta.abs()).max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub end: GeodesicState,
    /// `(t, state)` samples, at most about 10⁴.
    pub samples: Vec<(f64, GeodesicState)>,
    pub p_drift: f64,
}

/// Integrate the geodesic flow for signed time `t` with fixed-step RK4.
pub fn flow(state: GeodesicState, t: f64, surface: &WarpedSurface, dt: f64) -> Result<FlowResult> {
    let steps = ((t.abs() / dt).ceil() as usize).max(1);
    let step = t / steps as f64;
    let stride = (steps / 10_000).max(1);
    let p0 = state.p(surface);
    let mut s = state.to_array();
    let mut samples = vec![(0.0, state)];
    for k in 1..=steps {
        s = rk4(surface, s, step);
        if k % stride == 0 || k == steps {
            samples.push((step * k as f64, GeodesicState::from_array(s)));
        }
    }
    let end = GeodesicState::from_array(s);
    let p_drift = (end.p(surface) - p0).abs();
    let budget = 1e-9 * t.abs().max(1.0) * p0.max(1.0);
    if p_drift > budget {
        return Err(Error::StepRejected { drift: p_drift, budget });
    }
    Ok(FlowResult { end, samples, p_drift })
}

/// Outcome of the undamped-set test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Control {
    /// First time `|t|` at which `a(x(t))` exceeds the threshold, in either direction.
    Controlled { t_hit: f64 },
    Undamped { integral: f64 },
    /// Never above threshold, yet the damping integral is not negligible.
    Marginal { integral: f64 },
}

/// Integrate both time directions until the damping threshold is crossed or `t_max` elapses.
pub fn classify_undamped(
    surface: &WarpedSurface,
    state: GeodesicState,
    a: &Profile,
    t_max: f64,
    threshold: f64,
    dt: f64,
) -> Control {
    if a.eval(state.x) > threshold {
        return Control::Controlled { t_hit: 0.0 };
    }
    let mut fwd = state.to_array();
    let mut bwd = state.to_array();
    let steps = (t_max / dt).ceil() as usize;
    let mut integral = 0.0;
    let (mut af, mut ab) = (a.eval(state.x), a.eval(state.x));
    for k in 1..=steps {
        fwd = rk4(surface, fwd, dt);
        bwd = rk4(surface, bwd, -dt);
        let (nf, nb) = (a.eval(fwd[0]), a.eval(bwd[0]));
        integral += 0.5 * dt * (af + nf + ab + nb);
        if nf > threshold || nb > threshold {
            return Control::Controlled { t_hit: dt * k as f64 };
        }
        af = nf;
        ab = nb;
    }
    if integral < threshold * t_max * 1e-6 {
        Control::Undamped { integral }
    } else {
        Control::Marginal { integral }
    }
}

/// Sampling of the unit cosphere bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub nx: usize,
    /// Directions at the midpoints `2π(k + ½)/ndir`.
    pub ndir: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GccTime {
    Finite { t0: f64 },
    Unbounded { witness: GeodesicState },
}

/// Uniform control time over a sample of `S*X`, plus the closed parallels at the necks.
pub fn gcc_time(surface: &WarpedSurface, a: &Profile, grid: SampleGrid, t_max: f64, threshold: f64) -> GccTime {
    let mut states: Vec<GeodesicState> = Vec::with_capacity(grid.nx * grid.ndir);
    for i in 0..grid.nx {
        let x = -surface.period / 2.0 + surface.period * i as f64 / grid.nx as f64;
        for k in 0..grid.ndir {
            let phi = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / grid.ndir as f64;
            states.push(GeodesicState::unit(surface, x, phi));
        }
    }
    for x0 in surface.neck_points() {
        states.push(GeodesicState::new(x0, 0.0, 0.0, surface.a(x0)));
    }
    let outcomes: Vec<(GeodesicState, Control)> = states
        .par_iter()
        .map(|&s| (s, classify_undamped(surface, s, a, t_max, threshold, 2e-3)))
        .collect();
    let mut t0: f64 = 0.0;
    for (s, c) in outcomes {
        match c {
            Control::Controlled { t_hit } => t0 = t0.max(t_hit),
            _ => return GccTime::Unbounded { witness: s },
        }
    }
    GccTime::Finite { t0 }
}

/// Closed-geodesic data for the neck orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitAnalysis {
    pub state: GeodesicState,
    pub period: f64,
    /// Transverse monodromy on `(δx, δξ)`.
    pub monodromy: [[f64; 2]; 2],
    pub det: f64,
    /// Eigenvalues as `(re, im)` pairs.
    pub eigenvalues: [(f64, f64); 2],
    pub lambda: f64,
    pub degenerate: bool,
    pub unstable: [f64; 2],
    pub stable: [f64; 2],
    pub dt: f64,
}

/// Monodromy of the parallel geodesic `x = x₀, ξ = 0` at energy `p`.
pub fn monodromy(surface: &WarpedSurface, x0: f64, p: f64, dt: f64) -> Result<OrbitAnalysis> {
    let (a0, a1, _) = surface.eval(x0);
    if a1.abs() > 1e-12 {
        return Err(Error::NonClosedOrbit(format!("A'({x0}) = {a1} is not zero")));
    }
    if !(p > 0.0) {
        return Err(Error::NonClosedOrbit(format!("energy p = {p} must be positive")));
    }
    let eta = a0 * p.sqrt();
    let state = GeodesicState::new(x0, 0.0, 0.0, eta);
    let period = std::f64::consts::PI * a0 * a0 / eta;
    let steps = (period / dt).ceil() as usize;
    let step = period / steps as f64;
    let mut s = state.to_array();
    let mut m = IDENTITY4;
    for _ in 0..steps {
        let (ns, nm) = rk4_variational(surface, s, &m, step);
        s = ns;
        m = nm;
    }
    let closes = (s[0] - x0).abs() < 1e-9 && s[2].abs() < 1e-9 && (s[1] - 2.0 * std::f64::consts::PI).abs() < 1e-8;
    if !closes {
        return Err(Error::NonClosedOrbit(format!("return state {s:?}")));
    }
    let mono = [[m[0][0], m[0][2]], [m[2][0], m[2][2]]];
    let tr = mono[0][0] + mono[1][1];
    let det = mono[0][0] * mono[1][1] - mono[0][1] * mono[1][0];
    let disc = tr * tr / 4.0 - det;
    let (eigenvalues, rho) = if disc >= 0.0 {
        let r = disc.sqrt();
        let (l1, l2) = (tr / 2.0 + r, tr / 2.0 - r);
        ([(l1, 0.0), (l2, 0.0)], l1.abs().max(l2.abs()))
    } else {
        let r = (-disc).sqrt();
        ([(tr / 2.0, r), (tr / 2.0, -r)], det.abs().sqrt())
    };
    let lambda = rho.ln().max(0.0) / period;
    let degenerate = lambda * period < 1e-4;
    let eigvec = |l: f64| -> [f64; 2] {
        let v = if mono[0][1].abs() > 1e-300 { [mono[0][1], l - mono[0][0]] } else { [l - mono[1][1], mono[1][0]] };
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if n == 0.0 {
            [1.0, 0.0]
        } else {
            [v[0] / n, v[1] / n]
        }
    };
    let (unstable, stable) = if disc >= 0.0 && !degenerate {
        let (l1, l2) = (eigenvalues[0].0, eigenvalues[1].0);
        (eigvec(l1), eigvec(l2))
    } else {
        ([1.0, 0.0], [1.0, 0.0])
    };
    Ok(OrbitAnalysis { state, period, monodromy: mono, det, eigenvalues, lambda, degenerate, unstable, stable, dt })
}

fn gram_volume(u: [f64; 4], v: [f64; 4]) -> f64 {
    let uu: f64 = u.iter().map(|x| x * x).sum();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    let uv: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    (uu * vv - uv * uv).max(0.0).sqrt()
}

/// `J_t^u(ρ)`: volume ratio of `de^{−tH_p}` on the weak-unstable plane at a point `ρ` of the orbit.
pub fn unstable_jacobian(surface: &WarpedSurface, orbit: &OrbitAnalysis, rho: GeodesicState, t: f64) -> Result<f64> {
    if orbit.degenerate {
        return Err(Error::UnsupportedDegenerate(orbit.lambda));
    }
    if (rho.x - orbit.state.x).abs() > 1e-8 || rho.xi.abs() > 1e-8 || (rho.eta - orbit.state.eta).abs() > 1e-12 {
        return Err(Error::NonClosedOrbit("base point is not on the orbit".into()));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let v1 = hamilton(surface, rho.to_array());
    let v2 = [orbit.unstable[0], 0.0, orbit.unstable[1], 0.0];
    let steps = ((t.abs() / orbit.dt).ceil() as usize).max(1);
    let step = -t / steps as f64;
    let mut s = rho.to_array();
    let mut m = IDENTITY4;
    for _ in 0..steps {
        let (ns, nm) = rk4_variational(surface, s, &m, step);
        s = ns;
        m = nm;
    }
    let apply = |v: [f64; 4]| -> [f64; 4] {
        let mut o = [0.0; 4];
        for i in 0..4 {
            o[i] = (0..4).map(|k| m[i][k] * v[k]).sum();
        }
        o
    };
    Ok(gram_volume(apply(v1), apply(v2)) / gram_volume(v1, v2))
}

/// States spread uniformly in time along the orbit.
pub fn orbit_samples(surface: &WarpedSurface, orbit: &OrbitAnalysis, count: usize) -> Result<Vec<GeodesicState>> {
    let mut out = Vec::with_capacity(count);
    let mut s = orbit.state;
    let dt = orbit.period / count as f64;
    for _ in 0..count {
        out.push(s);
        s = flow(s, dt, surface, orbit.dt)?.end;
    }
    Ok(out)
}

/// Birkhoff average `(1/T)∮ f` over the orbit (entropy of a single orbit is zero).
pub fn birkhoff_pressure(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

fn chart_distance(a: &GeodesicState, b: &GeodesicState) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let dth = reduce(a.theta - b.theta, two_pi);
    ((a.x - b.x).powi(2) + dth * dth + (a.xi - b.xi).powi(2) + (a.eta - b.eta).powi(2)).sqrt()
}

/// Pressure estimate for one `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureEstimate {
    pub eps: f64,
    /// `(n, (1/n) log Z_{n,ε})`.
    pub by_n: Vec<(usize, f64)>,
    /// Intercept of the fit `a + b/n`.
    pub extrapolated: f64,
    /// Greedy separated sets give a lower bound for the supremum.
    pub lower_bound_note: String,
}

/// Greedy `(ε, n)`-separated-set pressure of `f` over a sample of an invariant set.
///
/// `orbits[i][k]` is the `k`-th unit-time iterate of sample `i` and `weights[i][k] = f` there.
pub fn separated_set_pressure(
    orbits: &[Vec<GeodesicState>],
    weights: &[Vec<f64>],
    n_list: &[usize],
    eps_list: &[f64],
) -> Result<Vec<PressureEstimate>> {
    if orbits.is_empty() || n_list.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut out = Vec::new();
    for &eps in eps_list {
        let mut by_n = Vec::new();
        for &n in n_list {
            let mut order: Vec<(usize, f64)> =
                weights.iter().enumerate().map(|(i, w)| (i, w[..n].iter().sum::<f64>())).collect();
            order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let mut chosen: Vec<usize> = Vec::new();
            for &(i, _) in &order {
                let separated = chosen.iter().all(|&j| (0..n).map(|k| chart_distance(&orbits[i][k], &orbits[j][k])).fold(0.0, f64::max) > eps);
                if separated {
                    chosen.push(i);
                }
            }
            let sums: Vec<f64> = chosen.iter().map(|&i| order.iter().find(|o| o.0 == i).unwrap().1).collect();
            let mx = sums.iter().cloned().fold(f64::MIN, f64::max);
            let log_z = mx + sums.iter().map(|s| (s - mx).exp()).sum::<f64>().ln();
            by_n.push((n, log_z / n as f64));
        }
        let extrapolated = if by_n.len() == 1 {
            by_n[0].1
        } else {
            let xs: Vec<f64> = by_n.iter().map(|(n, _)| 1.0 / *n as f64).collect();
            let ys: Vec<f64> = by_n.iter().map(|p| p.1).collect();
            let k = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / k;
            let my = ys.iter().sum::<f64>() / k;
            let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            my - sxy / sxx * mx
        };
        out.push(PressureEstimate { eps, by_n, extrapolated, lower_bound_note: "greedy separated subset of a finite sample".into() });
    }
    Ok(out)
}

/// Unit-time iterates of each sample.
pub fn unit_time_orbits(surface: &WarpedSurface, samples: &[GeodesicState], n: usize, dt: f64) -> Result<Vec<Vec<GeodesicState>>> {
    samples
        .par_iter()
        .map(|&s| {
            let mut v = Vec::with_capacity(n);
            let mut cur = s;
            for _ in 0..n {
                v.push(cur);
                cur = flow(cur, 1.0, surface, dt)?.end;
            }
            Ok(v)
        })
        .collect()
}

/// Pressure of `½ log J_1^u` on a hyperbolic closed orbit, by two routes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitPressure {
    /// Birkhoff average of the weight over orbit samples.
    pub birkhoff: f64,
    pub separated: Vec<PressureEstimate>,
    /// `−λ/2` from the monodromy.
    pub monodromy_route: f64,
}

pub fn orbit_pressure(
    surface: &WarpedSurface,
    orbit: &OrbitAnalysis,
    samples: usize,
    n_list: &[usize],
    eps_list: &[f64],
) -> Result<OrbitPressure> {
    if orbit.degenerate {
        return Err(Error::UnsupportedDegenerate(orbit.lambda));
    }
    let n_max = n_list.iter().copied().max().ok_or(Error::EmptySample)?;
    let points = orbit_samples(surface, orbit, samples)?;
    let orbits = unit_time_orbits(surface, &points, n_max, orbit.dt)?;
    let weights: Vec<Vec<f64>> = orbits
        .par_iter()
        .map(|o| o.iter().map(|&r| unstable_jacobian(surface, orbit, r, 1.0).map(|j| 0.5 * j.ln())).collect())
        .collect::<Result<_>>()?;
    let first: Vec<f64> = weights.iter().map(|w| w[0]).collect();
    Ok(OrbitPressure {
        birkhoff: birkhoff_pressure(&first)?,
        separated: separated_set_pressure(&orbits, &weights, n_list, eps_list)?,
        monodromy_route: -orbit.lambda / 2.0,
    })
}

/// State on the stable (`inward`) or unstable branch of the neck orbit's level set.
pub fn stable_set_state(surface: &WarpedSurface, u: f64, eta: f64, inward: bool) -> GeodesicState {
    let a0 = surface.a(0.0);
    let au = surface.a(u);
    let mag = eta * (1.0 / (a0 * a0) - 1.0 / (au * au)).max(0.0).sqrt();
    let sign = if inward { -u.signum() } else { u.signum() };
    GeodesicState::new(u, 0.0, sign * mag, eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableReport {
    pub initial: GeodesicState,
    /// Smallest `(u, ξ)` distance to the trapped circle over the run.
    pub min_distance: f64,
    pub final_distance: f64,
    pub max_abs_u: f64,
    pub converged: bool,
    pub escaped: bool,
}

/// Flow each state for `t` and record its approach to, or escape from, the trapped circle.
pub fn stable_manifold_check(surface: &WarpedSurface, states: &[GeodesicState], t: f64) -> Result<Vec<StableReport>> {
    states
        .iter()
        .map(|&s| {
            let dt = 1e-3;
            let steps = (t / dt).ceil() as usize;
            let mut v = s.to_array();
            let dist = |v: &[f64; 4]| (v[0] * v[0] + v[2] * v[2]).sqrt();
            let mut min_distance = dist(&v);
            let mut max_abs_u = v[0].abs();
            for _ in 0..steps {
                v = rk4(surface, v, dt);
                min_distance = min_distance.min(dist(&v));
                max_abs_u = max_abs_u.max(v[0].abs());
            }
            Ok(StableReport {
                initial: s,
                min_distance,
                final_distance: dist(&v),
                max_abs_u,
                converged: min_distance < 1e-6,
                escaped: max_abs_u > 0.5,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_profile, ProfileName, Shape, Zone};
    use proptest::prelude::*;

    fn damping(period: f64) -> Profile {
        make_profile(ProfileName::A, Shape::Outer { inner: 1.0, outer: 1.7 }, 8.0, period, Zone::Avoid(0.5)).unwrap()
    }

    #[test]
    fn flat_geodesics_are_straight() {
        let s = WarpedSurface::flat(2.0);
        let st = GeodesicState::new(0.1, 0.0, 0.6, 0.8);
        let r = flow(st, 3.0, &s, 1e-3).unwrap();
        assert!((reduce(r.end.x, 2.0) - reduce(0.1 + 2.0 * 0.6 * 3.0, 2.0)).abs() < 1e-10);
        assert_eq!(r.end.eta, 0.8);
    }

    #[test]
    fn trapped_orbit_stays_put() {
        let s = WarpedSurface::torus(1).unwrap();
        let r = flow(GeodesicState::new(0.0, 0.0, 0.0, 1.0), 10.0, &s, 1e-3).unwrap();
        assert_eq!(r.end.x, 0.0);
        assert_eq!(r.end.xi, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn energy_conserved_and_reversible(x in -2.0f64..2.0, phi in 0.0f64..std::f64::consts::TAU, m in 1u32..4) {
            let s = WarpedSurface::torus(m).unwrap();
            let st = GeodesicState::unit(&s, x, phi);
            let r = flow(st, 10.0, &s, default_dt(&st)).unwrap();
            prop_assert!((r.end.p(&s) - st.p(&s)).abs() < 1e-9 * 10.0);
            prop_assert_eq!(r.end.eta, st.eta);
            let back = flow(r.end, -10.0, &s, default_dt(&st)).unwrap().end;
            prop_assert!((back.x - st.x).abs() < 1e-8 && (back.xi - st.xi).abs() < 1e-8 && (back.theta - st.theta).abs() < 1e-8);
        }
    }

    #[test]
    fn undamped_classification() {
        let s = WarpedSurface::torus(1).unwrap();
        let a = damping(4.0);
        assert!(matches!(classify_undamped(&s, GeodesicState::new(0.0, 0.0, 0.0, 1.0), &a, 50.0, 1e-3, 2e-3), Control::Undamped { .. }));
        // Clairaut level slightly below the neck: the geodesic crosses the neck and reaches damping.
        let st = GeodesicState::new(0.0, 0.0, (1.0f64 - 0.95 * 0.95).sqrt(), 0.95);
        match classify_undamped(&s, st, &a, 50.0, 1e-3, 2e-3) {
            Control::Controlled { t_hit } => assert!(t_hit > 0.0 && t_hit < 5.0),
            c => panic!("{c:?}"),
        }
        let flat = WarpedSurface::flat(2.0);
        let fa = make_profile(ProfileName::A, Shape::Band { start: 0.5, rise: 0.6, fall: 0.9, end: 0.99 }, 1.0, 2.0, Zone::Free).unwrap();
        let st = GeodesicState::new(0.0, 0.0, 0.3, (1.0f64 - 0.09).sqrt());
        assert!(matches!(classify_undamped(&flat, st, &fa, 20.0, 1e-3, 1e-3), Control::Controlled { .. }));
    }

    #[test]
    fn time_reversal_symmetry_of_control() {
        let s = WarpedSurface::torus(2).unwrap();
        let a = damping(4.0);
        for phi in [0.3, 1.0, 1.4, 2.2] {
            let st = GeodesicState::unit(&s, 0.4, phi);
            let rev = GeodesicState { xi: -st.xi, ..st };
            let (c1, c2) = (classify_undamped(&s, st, &a, 30.0, 1e-3, 2e-3), classify_undamped(&s, rev, &a, 30.0, 1e-3, 2e-3));
            assert_eq!(c1, c2);
        }
    }

    #[test]
    fn gcc_times() {
        let s = WarpedSurface::torus(1).unwrap();
        let grid = SampleGrid { nx: 8, ndir: 8 };
        assert!(matches!(gcc_time(&s, &damping(4.0), grid, 30.0, 1e-3), GccTime::Unbounded { .. }));
        let full = make_profile(ProfileName::A, Shape::Constant, 1.0, 4.0, Zone::Free).unwrap();
        assert_eq!(gcc_time(&s, &full, grid, 30.0, 1e-3), GccTime::Finite { t0: 0.0 });
        let flat = WarpedSurface::flat(2.0);
        let fa = make_profile(ProfileName::A, Shape::Outer { inner: 0.7, outer: 0.75 }, 1.0, 2.0, Zone::Free).unwrap();
        match gcc_time(&flat, &fa, SampleGrid { nx: 16, ndir: 16 }, 100.0, 1e-3) {
            GccTime::Finite { t0 } => {
                let min_speed = 2.0 * (2.0 * std::f64::consts::PI * 3.5 / 16.0).cos().abs();
                assert!(t0 <= 2.0 / min_speed + 1.0, "t0 = {t0}");
            }
            g => panic!("{g:?}"),
        }
    }

    #[test]
    fn monodromy_m1_matches_linearization() {
        let s = WarpedSurface::torus(1).unwrap();
        let o = monodromy(&s, 0.0, 1.0, 1e-3).unwrap();
        assert!((o.period - std::f64::consts::PI).abs() < 1e-12);
        assert!((o.lambda - 2.0).abs() < 1e-3, "lambda {}", o.lambda);
        assert!((o.det - 1.0).abs() < 1e-6);
        // Closed form exp(T [[0,2],[2,0]]).
        let c = (2.0 * o.period).cosh();
        let sh = (2.0 * o.period).sinh();
        assert!((o.monodromy[0][0] - c).abs() < 1e-6 * c && (o.monodromy[0][1] - sh).abs() < 1e-6 * c);
        assert!(!o.degenerate);
    }

    #[test]
    fn monodromy_degenerate_for_higher_order() {
        for m in [2, 3] {
            let s = WarpedSurface::torus(m).unwrap();
            let o = monodromy(&s, 0.0, 1.0, 1e-3).unwrap();
            assert!((o.eigenvalues[0].0 - 1.0).abs() < 1e-6 && (o.eigenvalues[1].0 - 1.0).abs() < 1e-6);
            assert!((o.det - 1.0).abs() < 1e-6);
            assert!(o.degenerate);
            assert!(matches!(unstable_jacobian(&s, &o, o.state, 1.0), Err(Error::UnsupportedDegenerate(_))));
        }
        let s = WarpedSurface::torus(1).unwrap();
        assert!(matches!(monodromy(&s, 0.5, 1.0, 1e-3), Err(Error::NonClosedOrbit(_))));
    }

    #[test]
    fn unstable_jacobian_asymptotics_and_cocycle() {
        let s = WarpedSurface::torus(1).unwrap();
        let o = monodromy(&s, 0.0, 1.0, 1e-3).unwrap();
        assert_eq!(unstable_jacobian(&s, &o, o.state, 0.0).unwrap(), 1.0);
        let j5 = unstable_jacobian(&s, &o, o.state, 5.0).unwrap();
        assert!(((j5.ln() / 5.0) + o.lambda).abs() < 0.05 * o.lambda);
        let j2 = unstable_jacobian(&s, &o, o.state, 2.0).unwrap();
        let moved = flow(o.state, -2.0, &s, 1e-3).unwrap().end;
        let j3 = unstable_jacobian(&s, &o, moved, 3.0).unwrap();
        assert!((j5 - j2 * j3).abs() < 1e-6 * j5);
    }

    #[test]
    fn pressure_on_single_orbit() {
        let s = WarpedSurface::torus(1).unwrap();
        let o = monodromy(&s, 0.0, 1.0, 1e-3).unwrap();
        let samples = orbit_samples(&s, &o, 60).unwrap();
        let orbits = unit_time_orbits(&s, &samples, 8, 1e-3).unwrap();
        let zero: Vec<Vec<f64>> = orbits.iter().map(|v| vec![0.0; v.len()]).collect();
        let est = separated_set_pressure(&orbits, &zero, &[2, 4, 8], &[0.3]).unwrap();
        assert!(est[0].extrapolated.abs() < 1e-9);
        let c: Vec<Vec<f64>> = orbits.iter().map(|v| vec![0.7; v.len()]).collect();
        let est = separated_set_pressure(&orbits, &c, &[2, 4, 8], &[0.3]).unwrap();
        assert!((est[0].extrapolated - 0.7).abs() < 1e-9);
        assert!(matches!(separated_set_pressure(&[], &[], &[2], &[0.3]), Err(Error::EmptySample)));
    }

    #[test]
    fn half_log_jacobian_pressure_two_routes() {
        let s = WarpedSurface::torus(1).unwrap();
        let o = monodromy(&s, 0.0, 1.0, 1e-3).unwrap();
        let pr = orbit_pressure(&s, &o, 24, &[2, 4, 6], &[0.2, 0.1]).unwrap();
        assert!((pr.monodromy_route + 1.0).abs() < 1e-2);
        assert!((pr.birkhoff - pr.monodromy_route).abs() < 1e-2, "{pr:?}");
        for e in &pr.separated {
            assert!((e.extrapolated - pr.birkhoff).abs() < 1e-2, "{e:?}");
        }
    }

    #[test]
    fn peanut_stable_set() {
        let s = WarpedSurface::peanut();
        let on = vec![stable_set_state(&s, 0.3, 1.0, true), stable_set_state(&s, -0.4, 1.0, true)];
        for r in stable_manifold_check(&s, &on, 20.0).unwrap() {
            assert!(r.converged, "{r:?}");
        }
        let out = stable_manifold_check(&s, &[stable_set_state(&s, 0.3, 1.0, false)], 20.0).unwrap();
        assert!(out[0].escaped);
        let trapped = stable_manifold_check(&s, &[GeodesicState::new(0.0, 0.0, 0.0, 1.0)], 20.0).unwrap();
        assert_eq!(trapped[0].final_distance, 0.0);
        let mut off = stable_set_state(&s, 0.3, 1.0, true);
        off.xi *= 1.1f64.sqrt();
        let mut hi = off;
        hi.xi = -(1.1 - 1.0 / 0.3f64.cosh().powi(2)).sqrt();
        let mut lo = off;
        lo.xi = -(0.9 - 1.0 / 0.3f64.cosh().powi(2)).max(0.0).sqrt();
        for r in stable_manifold_check(&s, &[hi, lo], 20.0).unwrap() {
            assert!(r.min_distance > 1e-2, "{r:?}");
        }
    }
}
