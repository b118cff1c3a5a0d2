//! Fixtures shared by the kernel benchmarks.

use std::sync::Arc;

use damplab::discretize::{build_grid, build_mode_operator, resolution_for, ModeOperator, OperatorKind};
use damplab::dwe::{assemble_generator, Generator};
use damplab::geometry::{make_profile, ProfileName, Shape, WarpedSurface, Zone};

/// Neck-mode operator on the `m = 2` torus at the standard resolution for `h`.
pub fn neck_operator(h: f64, kind: OperatorKind) -> ModeOperator {
    let surface = WarpedSurface::torus(2).expect("torus");
    let profile = make_profile(ProfileName::A, Shape::Outer { inner: 1.0, outer: 1.7 }, 2.0, surface.period, Zone::Avoid(0.5))
        .expect("profile");
    let grid = Arc::new(build_grid(&surface, resolution_for(h, surface.period, 16.0)).expect("grid"));
    let n = (surface.a(0.0) / h).round() as u32;
    build_mode_operator(grid, &profile, h, n, kind).expect("operator")
}

/// Damped-wave generator for one mode of the `m = 1` torus.
pub fn wave_generator(points: usize, mode: u32) -> Generator {
    let surface = WarpedSurface::torus(1).expect("torus");
    let profile = make_profile(ProfileName::A, Shape::Outer { inner: 1.0, outer: 1.7 }, 2.0, surface.period, Zone::Avoid(0.5))
        .expect("profile");
    assemble_generator(Arc::new(build_grid(&surface, points).expect("grid")), &profile, mode).expect("generator")
}
