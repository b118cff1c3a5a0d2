//! Acceptance criteria 1 to 11, one PASS/FAIL line each.

use std::process::ExitCode;
use std::sync::Arc;

use damplab::discretize::{build_grid, build_mode_operator, stationary_identity_residual, Grid1D, ModeOperator, OperatorKind};
use damplab::dwe::{assemble_generator, evolve, WaveState};
use damplab::experiment::{run_preset, ExperimentConfig, Preset, RunManifest};
use damplab::geometry::{make_profile, ProfileName, Shape, WarpedSurface, Zone};
use damplab::resolvent::{resolvent_norm, resolvent_norm_with, NormMethod};
use damplab::C64;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn run(preset: Preset, m: Option<u32>, dir: &std::path::Path) -> RunManifest {
    let mut cfg = ExperimentConfig::preset_default(preset);
    if let Some(m) = m {
        cfg.surface.m = m;
    }
    cfg.output_dir = dir.join(format!("{}-m{}", preset.name(), cfg.surface.m));
    run_preset(&cfg).unwrap_or_else(|e| panic!("{} failed: {e}", preset.name()))
}

/// Conjunction of named manifest assertions with their observed values.
fn assertions(runs: &[(&str, &RunManifest, &[&str])]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, m, names) in runs {
        for name in *names {
            let a = m.assertion(name).unwrap_or_else(|| panic!("{} has no assertion {name}", m.preset));
            pass &= a.pass;
            parts.push(format!("{label}{name}={:.4} {}", a.observed, a.tolerance()));
        }
    }
    verdict(pass, parts.join("; "))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

fn identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let surface = WarpedSurface::torus(2).unwrap();
    let a = make_profile(ProfileName::A, Shape::Outer { inner: 1.0, outer: 1.7 }, 8.0, surface.period, Zone::Avoid(0.5)).unwrap();
    let grid = Arc::new(build_grid(&surface, 512).unwrap());
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let h = rng.random_range(1.0 / 128.0..0.25);
        let n = rng.random_range(0..(1.5 / h) as u32);
        let z = C64::new(rng.random_range(0.5..1.5), rng.random_range(-0.5..0.5));
        let op = build_mode_operator(grid.clone(), &a, h, n, OperatorKind::Damped).unwrap();
        let u = random_vec(&mut rng, grid.n);
        worst = worst.max(stationary_identity_residual(&op, &u, z).unwrap());
    }
    let torus1 = WarpedSurface::torus(1).unwrap();
    let a1 = make_profile(ProfileName::A, Shape::Outer { inner: 0.5, outer: 1.2 }, 2.0, torus1.period, Zone::Free).unwrap();
    let gen = assemble_generator(Arc::new(build_grid(&torus1, 128).unwrap()), &a1, 2).unwrap();
    let s = WaveState::gaussian_velocity(&gen.op.grid, 2, 1.0, 0.3);
    let base = 0.4 / gen.omega_max;
    let res: Vec<f64> = [1usize, 2, 4]
        .iter()
        .map(|&k| evolve(s.clone(), &gen, base / k as f64, (2.0 / base) as usize * k, usize::MAX).unwrap().identity_residual)
        .collect();
    let ratios = [res[0] / res[1], res[1] / res[2]];
    let ok = worst < 1e-12 && ratios.iter().all(|r| (3.5..=4.5).contains(r));
    verdict(ok, format!("max stationary residual {worst:.2e}; dissipation ratios {:.3}, {:.3}", ratios[0], ratios[1]))
}

/// Operator on a tiny periodic grid, assembled without the resolution floor.
fn small_operator(rng: &mut ChaCha8Rng, n: usize) -> ModeOperator {
    let dx = 1.0 / n as f64;
    let a_node: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let a_half: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let grid = Grid1D {
        n,
        dx,
        period: 1.0,
        x: (0..n).map(|j| j as f64 * dx).collect(),
        w: a_node.iter().map(|a| a * dx).collect(),
        a_node,
        a_half,
    };
    let coeff = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    ModeOperator::from_coefficients(Arc::new(grid), coeff, 0.1, 3, OperatorKind::Damped)
}

fn oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let surfaces = [WarpedSurface::torus(1).unwrap(), WarpedSurface::torus(2).unwrap(), WarpedSurface::peanut()];
    let mut worst = 0.0f64;
    for i in 0..50 {
        let surface = &surfaces[i % 3];
        let points = rng.random_range(64..=1024);
        let grid = Arc::new(build_grid(surface, points).unwrap());
        let h = rng.random_range(1.0 / 64.0..0.25);
        let n = (surface.a(0.0) / h).round() as u32 + rng.random_range(0..3);
        let kind = if rng.random_bool(0.5) { OperatorKind::Damped } else { OperatorKind::Absorbing };
        let a = make_profile(ProfileName::A, Shape::Outer { inner: 1.0, outer: 1.7 }, 2.0, surface.period, Zone::Avoid(0.5)).unwrap();
        let op = build_mode_operator(grid, &a, h, n, kind).unwrap();
        let z = C64::new(rng.random_range(0.9..1.1), rng.random_range(-0.05..0.05));
        let it = resolvent_norm_with(&op, z, NormMethod::Iterative).norm;
        let de = resolvent_norm_with(&op, z, NormMethod::Dense).norm;
        worst = worst.max((it - de).abs() / de);
    }
    let op = small_operator(&mut rng, 8);
    let z = C64::new(0.3, 0.1);
    let d = op.dense() - DMatrix::<C64>::identity(8, 8) * z;
    let inv = d.try_inverse().unwrap();
    let root: Vec<f64> = op.grid.w.iter().map(|w| w.sqrt()).collect();
    let weighted = DMatrix::from_fn(8, 8, |i, j| inv[(i, j)] * root[i] / root[j]);
    let explicit = weighted.singular_values().max();
    let small = (resolvent_norm(&op, z).norm - explicit).abs() / explicit;
    verdict(worst < 1e-8 && small < 1e-10, format!("max relative gap iterative vs dense {worst:.2e}; 8x8 vs explicit inverse {small:.2e}"))
}

fn lower_half_plane() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = ExperimentConfig::preset_default(Preset::Transfer);
    let surface = cfg.surface.build().unwrap();
    let profiles = cfg.profile_set(&surface).unwrap();
    let mut worst = 0.0f64;
    for k in 0..20 {
        let h = cfg.h_list[k % cfg.h_list.len()];
        let grid = Arc::new(build_grid(&surface, damplab::discretize::resolution_for(h, surface.period, 16.0)).unwrap());
        let n = (surface.a(0.0) / h).round() as u32;
        let op = build_mode_operator(grid, &profiles.absorption, h, n, OperatorKind::Absorbing).unwrap();
        let z = C64::new(rng.random_range(0.75..1.25), -10f64.powf(rng.random_range(-4.0..0.5)));
        worst = worst.max(resolvent_norm(&op, z).norm * z.im.abs());
    }
    verdict(worst <= 1.0 + 1e-10, format!("max norm*|Im z| = {worst:.12}"))
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut failed = 0;
    let mut report = |k: u32, v: Verdict| {
        println!("criterion {k:>2}: {}  {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    };
    report(1, identities());
    report(2, oracles());
    let gcc = run(Preset::Gcc, None, d);
    report(3, assertions(&[("", &gcc, &["gcc_exponent"])]));
    let (deg2, deg3) = (run(Preset::DegenerateM, Some(2), d), run(Preset::DegenerateM, Some(3), d));
    report(4, assertions(&[("m2 ", &deg2, &["absorbing_exponent"]), ("m3 ", &deg3, &["absorbing_exponent"])]));
    let (tr2, tr3) = (run(Preset::Transfer, Some(2), d), run(Preset::Transfer, Some(3), d));
    let transfer = ["exponent_gap", "constant_spread"];
    report(5, assertions(&[("m2 ", &tr2, &transfer), ("m3 ", &tr3, &transfer)]));
    let cut = run(Preset::CutoffGain, Some(2), d);
    report(6, assertions(&[("", &cut, &["right_cutoff_gain"])]));
    let (st1, st2) = (run(Preset::Strip, Some(1), d), run(Preset::Strip, Some(2), d));
    let strip = ["damped_strip_floor", "modified_strip_floor", "strip_positive"];
    report(7, assertions(&[("m1 ", &st1, &strip), ("m2 ", &st2, &strip)]));
    report(8, lower_half_plane());
    let (pr, nh) = (run(Preset::Pressure, Some(1), d), run(Preset::Normhyp, None, d));
    report(
        9,
        assertions(&[
            ("", &pr, &["lambda", "monodromy_det", "pressure_birkhoff", "pressure_separated_eps_0.2", "pressure_separated_eps_0.1"]),
            ("peanut ", &nh, &["stable_set_failures"]),
        ]),
    );
    let decay = run(Preset::Decay, Some(1), d);
    report(10, assertions(&[("", &decay, &["fcond_exp_sqrt", "fcond_poly_log", "fcond_exponential", "regularity_gate"])]));
    report(
        11,
        assertions(&[("", &decay, &["gcc_rate_min", "gcc_rate_spread", "trapped_template_gap", "trapped_energy_increases"])]),
    );
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
