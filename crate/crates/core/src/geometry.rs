//! Surfaces of revolution `dx² + A(x)² dθ²` and smooth axisymmetric coefficient profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// C^∞ transition `s(t) = f(t) / (f(t) + f(1 - t))` with `f(t) = exp(-1/t)`.
///
/// Returns `(s, s', s'')`. Identically 0 for `t <= 0` and 1 for `t >= 1`.
pub fn smoothstep(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let (f, f1, f2) = bump_base(t);
    let (g, gm1, g2) = bump_base(1.0 - t);
    // g(t) = f(1 - t): chain rule flips the sign of the first derivative.
    let g1 = -gm1;
    let d = f + g;
    let d1 = f1 + g1;
    let num = f1 * g - f * g1;
    let num1 = f2 * g - f * g2;
    let s = f / d;
    let s1 = num / (d * d);
    let s2 = (num1 * d - 2.0 * num * d1) / (d * d * d);
    (s, s1, s2)
}

fn bump_base(t: f64) -> (f64, f64, f64) {
    let f = (-1.0 / t).exp();
    if f == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let it = 1.0 / t;
    let it2 = it * it;
    (f, f * it2, f * (it2 * it2 - 2.0 * it2 * it))
}

/// Reduce `x` into the symmetric cell `[-period/2, period/2]`.
pub fn reduce(x: f64, period: f64) -> f64 {
    x - period * (x / period).round()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceKind {
    /// `A = (1 + |x|^{2m})^{1/(2m)}` near the neck, capped to a flat fat part.
    TorusFamily,
    /// `A = cosh x` near the neck, capped to a flat fat part.
    Peanut,
    /// `A ≡ 1`.
    Flat,
}

/// Flat-cap blend: the local model is kept exactly for `|x| <= inner`,
/// smoothly interpolated to a constant for `|x| >= outer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapBlend {
    pub inner: f64,
    pub outer: f64,
}

impl CapBlend {
    pub const DEFAULT: CapBlend = CapBlend { inner: 1.6, outer: 1.9 };
}

/// Warped product surface with a periodic `x`-cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpedSurface {
    pub kind: SurfaceKind,
    /// Degeneracy order at the neck (1 for the peanut and the flat torus).
    pub m: u32,
    pub period: f64,
    pub blend: Option<CapBlend>,
}

/// Cell length of the curved model surfaces.
pub const MODEL_PERIOD: f64 = 4.0;

impl WarpedSurface {
    pub fn torus(m: u32) -> Result<Self> {
        build_surface(SurfaceKind::TorusFamily, m)
    }

    pub fn peanut() -> Self {
        WarpedSurface {
            kind: SurfaceKind::Peanut,
            m: 1,
            period: MODEL_PERIOD,
            blend: Some(CapBlend::DEFAULT),
        }
    }

    pub fn flat(period: f64) -> Self {
        WarpedSurface { kind: SurfaceKind::Flat, m: 1, period, blend: None }
    }

    /// `(A, A', A'')` at `x` (reduced modulo the period).
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let xr = reduce(x, self.period);
        let r = xr.abs();
        let sgn = if xr < 0.0 { -1.0 } else { 1.0 };
        let (a, ar, arr) = match self.kind {
            SurfaceKind::Flat => (1.0, 0.0, 0.0),
            SurfaceKind::TorusFamily => self.torus_radial(r),
            SurfaceKind::Peanut => self.peanut_radial(r),
        };
        (a, sgn * ar, arr)
    }

    pub fn a(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    fn blend_weight(&self, r: f64) -> (f64, f64, f64) {
        match self.blend {
            None => (0.0, 0.0, 0.0),
            Some(b) => {
                let w = b.outer - b.inner;
                let (s, s1, s2) = smoothstep((r - b.inner) / w);
                (s, s1 / w, s2 / (w * w))
            }
        }
    }

    fn torus_radial(&self, r: f64) -> (f64, f64, f64) {
        let k = 2 * self.m as i32;
        let kf = k as f64;
        let cap = self.blend.map_or(0.0, |b| b.outer.powi(k));
        let rk = r.powi(k);
        let rk1 = kf * r.powi(k - 1);
        let rk2 = kf * (kf - 1.0) * r.powi(k - 2);
        let (b, b1, b2) = self.blend_weight(r);
        let g = rk + b * (cap - rk);
        let g1 = rk1 * (1.0 - b) + b1 * (cap - rk);
        let g2 = rk2 * (1.0 - b) - 2.0 * rk1 * b1 + b2 * (cap - rk);
        let p = 1.0 / kf;
        let base = 1.0 + g;
        let a = base.powf(p);
        let a1 = p * a / base * g1;
        let a2 = p * (p - 1.0) * a / (base * base) * g1 * g1 + p * a / base * g2;
        (a, a1, a2)
    }

    fn peanut_radial(&self, r: f64) -> (f64, f64, f64) {
        let cap = self.blend.map_or(0.0, |b| b.outer.cosh());
        let (c, s) = (r.cosh(), r.sinh());
        let (b, b1, b2) = self.blend_weight(r);
        let a = c + b * (cap - c);
        let a1 = s * (1.0 - b) + b1 * (cap - c);
        let a2 = c * (1.0 - b) - 2.0 * b1 * s + b2 * (cap - c);
        (a, a1, a2)
    }

    /// Isolated minima of `A` in the cell. The parallel geodesic through each is closed.
    pub fn neck_points(&self) -> Vec<f64> {
        match self.kind {
            SurfaceKind::Flat => Vec::new(),
            _ => vec![0.0],
        }
    }

    /// Maximum of `A` over the cell, sampled.
    pub fn max_a(&self) -> f64 {
        let n = 2048;
        (0..=n)
            .map(|j| self.a(-self.period / 2.0 + self.period * j as f64 / n as f64))
            .fold(f64::MIN, f64::max)
    }
}

/// Construct a model surface.
pub fn build_surface(kind: SurfaceKind, m: u32) -> Result<WarpedSurface> {
    if m < 1 {
        return Err(Error::InvalidParameter(format!("degeneracy order m = {m} must be >= 1")));
    }
    Ok(match kind {
        SurfaceKind::TorusFamily => WarpedSurface {
            kind,
            m,
            period: MODEL_PERIOD,
            blend: Some(CapBlend::DEFAULT),
        },
        SurfaceKind::Peanut => WarpedSurface::peanut(),
        SurfaceKind::Flat => WarpedSurface::flat(2.0),
    })
}

/// Convenience accessor mirroring [`WarpedSurface::eval`].
pub fn warp_eval(surface: &WarpedSurface, x: f64) -> (f64, f64, f64) {
    surface.eval(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    /// Damping `a`.
    A,
    /// Complex absorbing potential `W`.
    W,
    Chi,
    B1,
    Phi,
}

impl ProfileName {
    pub fn label(self) -> &'static str {
        match self {
            ProfileName::A => "a",
            ProfileName::W => "W",
            ProfileName::Chi => "chi",
            ProfileName::B1 => "B1",
            ProfileName::Phi => "phi",
        }
    }
}

/// Radial shape of a profile; every transition is a [`smoothstep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    /// 0 for `|x| <= inner`, plateau for `|x| >= outer`.
    Outer { inner: f64, outer: f64 },
    /// Plateau for `|x| <= flat`, 0 for `|x| >= edge`.
    Inner { flat: f64, edge: f64 },
    /// 0 below `start`, plateau on `[rise, fall]`, 0 above `end`.
    Band { start: f64, rise: f64, fall: f64, end: f64 },
    /// `base` for `|x| <= inner`, plateau for `|x| >= outer`.
    Floor { base: f64, inner: f64, outer: f64 },
    Constant,
    /// plateau · s((a/eps0 - lo)/(hi - lo)) of a damping profile `a`.
    Level { source: Box<Profile>, eps0: f64, lo: f64, hi: f64 },
}

/// Constraint on where a profile may live.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Free,
    /// Must vanish on `|x| < r`.
    Avoid(f64),
    /// Support must lie in `|x| < r`.
    Within(f64),
}

/// Smooth axisymmetric coefficient on the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: ProfileName,
    pub shape: Shape,
    pub plateau: f64,
    pub period: f64,
}

fn ramp(r: f64, lo: f64, hi: f64) -> f64 {
    smoothstep((r - lo) / (hi - lo)).0
}

impl Profile {
    pub fn eval(&self, x: f64) -> f64 {
        let r = reduce(x, self.period).abs();
        let unit = match &self.shape {
            Shape::Outer { inner, outer } => ramp(r, *inner, *outer),
            Shape::Inner { flat, edge } => 1.0 - ramp(r, *flat, *edge),
            Shape::Band { start, rise, fall, end } => {
                ramp(r, *start, *rise) * (1.0 - ramp(r, *fall, *end))
            }
            Shape::Floor { base, inner, outer } => {
                if self.plateau == 0.0 {
                    return 0.0;
                }
                let b = base / self.plateau;
                b + (1.0 - b) * ramp(r, *inner, *outer)
            }
            Shape::Constant => 1.0,
            Shape::Level { source, eps0, lo, hi } => {
                let t = source.eval(x) / eps0;
                ramp(t, *lo, *hi)
            }
        };
        self.plateau * unit
    }

    pub fn sample(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }

    /// Closed range of `|x|` outside of which the profile vanishes.
    pub fn support_radius(&self) -> (f64, f64) {
        let half = self.period / 2.0;
        match &self.shape {
            Shape::Outer { inner, .. } => (*inner, half),
            Shape::Inner { edge, .. } => (0.0, edge.min(half)),
            Shape::Band { start, end, .. } => (*start, end.min(half)),
            Shape::Floor { base, inner, .. } => {
                if *base > 0.0 {
                    (0.0, half)
                } else {
                    (*inner, half)
                }
            }
            Shape::Constant => (0.0, half),
            Shape::Level { .. } => {
                let n = 4096;
                let mut lo = half;
                let mut hi: f64 = 0.0;
                for j in 0..=n {
                    let r = half * j as f64 / n as f64;
                    if self.eval(r) > 0.0 {
                        lo = lo.min(r);
                        hi = hi.max(r);
                    }
                }
                (lo.min(hi), hi)
            }
        }
    }

    /// Support as intervals in `x` (the profile is even).
    pub fn support(&self) -> Vec<(f64, f64)> {
        let (lo, hi) = self.support_radius();
        if lo <= 0.0 {
            vec![(-hi, hi)]
        } else {
            vec![(-hi, -lo), (lo, hi)]
        }
    }

    /// Maximum over a fine sample of the cell.
    pub fn sampled_max(&self) -> f64 {
        let n = 8192;
        let half = self.period / 2.0;
        (0..=n).map(|j| self.eval(half * j as f64 / n as f64)).fold(0.0, f64::max)
    }
}

fn check_monotone_params(name: ProfileName, vals: &[f64]) -> Result<()> {
    if vals.windows(2).any(|w| !(w[0] < w[1])) || vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidSupport {
            name: name.label().into(),
            reason: format!("transition points {vals:?} must be nonnegative and increasing"),
        });
    }
    Ok(())
}

/// Build a profile and validate it against its zone.
pub fn make_profile(name: ProfileName, shape: Shape, plateau: f64, period: f64, zone: Zone) -> Result<Profile> {
    let bad = |reason: String| Error::InvalidSupport { name: name.label().into(), reason };
    if !(plateau >= 0.0) || !plateau.is_finite() {
        return Err(bad(format!("plateau {plateau} must be a finite nonnegative number")));
    }
    match &shape {
        Shape::Outer { inner, outer } => check_monotone_params(name, &[*inner, *outer])?,
        Shape::Inner { flat, edge } => check_monotone_params(name, &[*flat, *edge])?,
        Shape::Band { start, rise, fall, end } => check_monotone_params(name, &[*start, *rise, *fall, *end])?,
        Shape::Floor { base, inner, outer } => {
            check_monotone_params(name, &[*inner, *outer])?;
            if !(*base >= 0.0 && *base <= plateau) {
                return Err(bad(format!("floor {base} must lie in [0, plateau]")));
            }
        }
        Shape::Constant => {}
        Shape::Level { eps0, lo, hi, .. } => {
            check_monotone_params(name, &[*lo, *hi])?;
            if !(*eps0 > 0.0) {
                return Err(bad("eps0 must be positive".into()));
            }
        }
    }
    let p = Profile { name, shape, plateau, period };
    let (lo, hi) = p.support_radius();
    match zone {
        Zone::Free => {}
        Zone::Avoid(r0) => {
            if plateau > 0.0 && lo < r0 {
                return Err(bad(format!("support reaches |x| = {lo}, inside forbidden zone |x| < {r0}")));
            }
        }
        Zone::Within(r0) => {
            if hi >= r0 {
                return Err(bad(format!("support reaches |x| = {hi}, outside allowed zone |x| < {r0}")));
            }
        }
    }
    Ok(p)
}

/// `χ` with `supp χ ⊂ {a > ε₀/2}` and `χ = 1` where `a >= ε₀`; `ε₀` is the sampled maximum of `a`.
pub fn chi_from_damping(a: &Profile) -> Result<Profile> {
    let eps0 = a.sampled_max();
    if eps0 <= 0.0 {
        return Err(Error::InvalidSupport { name: "chi".into(), reason: "damping vanishes identically".into() });
    }
    make_profile(
        ProfileName::Chi,
        Shape::Level { source: Box::new(a.clone()), eps0, lo: 0.6, hi: 1.0 },
        1.0,
        a.period,
        Zone::Free,
    )
}

/// `B₁ = 1` on `|x| < v1`, supported in `|x| < o1`, and `φ = 1` on `v1 <= |x| <= o1` vanishing near 0.
pub fn control_cutoffs(v1: f64, o1: f64, margin: f64, period: f64) -> Result<(Profile, Profile)> {
    let b1 = make_profile(ProfileName::B1, Shape::Inner { flat: v1, edge: o1 }, 1.0, period, Zone::Within(o1 + 1e-12))?;
    let phi = make_profile(
        ProfileName::Phi,
        Shape::Band { start: v1 / 2.0, rise: v1, fall: o1, end: o1 + margin },
        1.0,
        period,
        Zone::Avoid(v1 / 2.0),
    )?;
    Ok((b1, phi))
}

/// Coefficient set shared by every mode operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub damping: Profile,
    pub absorption: Profile,
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn surface(kind: u8, m: u32) -> WarpedSurface {
        match kind {
            0 => WarpedSurface::torus(m).unwrap(),
            1 => WarpedSurface::peanut(),
            _ => WarpedSurface::flat(2.0),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn warp_is_even_positive_periodic(kind in 0u8..3, m in 1u32..4, x in -3.0f64..3.0) {
            let s = surface(kind, m);
            let (a, a1, a2) = s.eval(x);
            let (b, b1, b2) = s.eval(-x);
            let (c, c1, c2) = s.eval(x + s.period);
            prop_assert!(a > 0.0);
            prop_assert!((a - b).abs() < 1e-12 && (a1 + b1).abs() < 1e-10 && (a2 - b2).abs() < 1e-9);
            prop_assert!((a - c).abs() < 1e-12 && (a1 - c1).abs() < 1e-10 && (a2 - c2).abs() < 1e-9);
        }

        #[test]
        fn profiles_stay_in_range(inner in 0.2f64..0.9, width in 0.1f64..0.9, plateau in 0.0f64..5.0, x in -4.0f64..4.0) {
            let p = make_profile(ProfileName::A, Shape::Outer { inner, outer: inner + width }, plateau, 4.0, Zone::Free).unwrap();
            let v = p.eval(x);
            prop_assert!((0.0..=plateau).contains(&v));
            prop_assert!((v - p.eval(-x)).abs() < 1e-12);
        }
    }
}
