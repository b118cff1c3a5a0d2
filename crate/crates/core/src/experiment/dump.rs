use std::path::Path;
use std::sync::Arc;

use super::config::ExperimentConfig;
use super::output::{num, ArtifactWriter};
use crate::discretize::{build_grid, build_mode_operator, resolution_for, OperatorKind};
use crate::error::Result;
use crate::geometry::{chi_from_damping, control_cutoffs};

/// Samples `A`, `A'`, the damping and the control cutoffs on `points` nodes of one period.
pub fn dump_geometry(cfg: &ExperimentConfig, points: usize, dir: &Path) -> Result<()> {
    cfg.validate()?;
    let surface = cfg.surface.build()?;
    let profiles = cfg.profile_set(&surface)?;
    let chi = chi_from_damping(&profiles.damping)?;
    let (b1, phi) = control_cutoffs(0.6, 0.9, 0.2, surface.period)?;
    let grid = build_grid(&surface, points)?;
    let rows: Vec<Vec<String>> = grid
        .x
        .iter()
        .map(|&x| {
            let (a, a1, _) = surface.eval(x);
            [x, a, a1, profiles.damping.eval(x), chi.eval(x), b1.eval(x), phi.eval(x)].map(num).to_vec()
        })
        .collect();
    let mut w = ArtifactWriter::new(dir)?;
    w.csv("geometry.csv", &["x", "A", "dA", "a", "chi", "B1", "phi"], &rows)
}

/// Nonzero entries of the mode operator at `(h, n)` as `(row, col, re, im)` triplets.
pub fn dump_operator(cfg: &ExperimentConfig, h: f64, n: u32, kind: OperatorKind, dir: &Path) -> Result<()> {
    cfg.validate()?;
    let surface = cfg.surface.build()?;
    let profiles = cfg.profile_set(&surface)?;
    let points = resolution_for(h, surface.period, cfg.resolution.points_per_wavelength);
    let grid = Arc::new(build_grid(&surface, points)?);
    let profile = match kind {
        OperatorKind::Absorbing => &profiles.absorption,
        _ => &profiles.damping,
    };
    let op = build_mode_operator(grid, profile, h, n, kind)?;
    let rows: Vec<Vec<String>> =
        op.triplets().iter().map(|&(i, j, v)| vec![i.to_string(), j.to_string(), num(v.re), num(v.im)]).collect();
    let mut w = ArtifactWriter::new(dir)?;
    w.csv("operator.csv", &["row", "col", "re", "im"], &rows)
}
