use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{build_surface, make_profile, Profile, ProfileName, ProfileSet, Shape, SurfaceKind, WarpedSurface, Zone};

pub const SCHEMA_VERSION: u32 = 1;

/// Named pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Gcc,
    Normhyp,
    DegenerateM,
    Transfer,
    CutoffGain,
    Pressure,
    Decay,
    Strip,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::Gcc,
        Preset::Normhyp,
        Preset::DegenerateM,
        Preset::Transfer,
        Preset::CutoffGain,
        Preset::Pressure,
        Preset::Decay,
        Preset::Strip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Gcc => "gcc",
            Preset::Normhyp => "normhyp",
            Preset::DegenerateM => "degenerate-m",
            Preset::Transfer => "transfer",
            Preset::CutoffGain => "cutoff-gain",
            Preset::Pressure => "pressure",
            Preset::Decay => "decay",
            Preset::Strip => "strip",
        }
    }

    /// Presets that fit a scaling law in `h`.
    pub fn is_scaling(self) -> bool {
        !matches!(self, Preset::Pressure | Preset::Decay)
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.iter().copied().find(|p| p.name() == s).ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    pub kind: SurfaceKind,
    pub m: u32,
}

impl SurfaceSpec {
    pub fn build(&self) -> Result<WarpedSurface> {
        build_surface(self.kind, self.m)
    }
}

/// A profile as written in the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    #[serde(flatten)]
    pub shape: Shape,
    pub plateau: f64,
    pub zone: Zone,
}

impl ProfileSpec {
    pub fn build(&self, name: ProfileName, period: f64) -> Result<Profile> {
        make_profile(name, self.shape.clone(), self.plateau, period, self.zone)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilesSpec {
    pub damping: ProfileSpec,
    pub absorption: ProfileSpec,
    pub cutoff: Option<ProfileSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    /// Half-width of the real window `[1 − δ, 1 + δ]`.
    pub delta: f64,
    /// Strip factor for the off-axis damped norms.
    pub c0: f64,
    /// Allowed max/min spread of empirical constants.
    pub bound_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModePolicy {
    /// Stride through modes below the band edge in global scans.
    pub subsample: u32,
    /// Scaling model used to define `α(h)`.
    pub fit_model: crate::resolvent::FitModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionPolicy {
    /// Grid points per `2πh` wavelength; `N` is the next power of two, at least 256.
    pub points_per_wavelength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StripSpec {
    /// Number of leading (largest) `h` values scanned.
    pub levels: usize,
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    pub dt: f64,
    pub orbit_samples: usize,
    pub n_list: Vec<usize>,
    pub eps_list: Vec<f64>,
    pub stable_u: Vec<f64>,
    pub stable_time: f64,
    pub trajectory_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySpec {
    pub gcc_damping: ProfileSpec,
    pub gcc_modes: Vec<u32>,
    pub gcc_points: usize,
    pub gcc_time: f64,
    pub fit_start: f64,
    /// Semiclassical scale of the trapped run; the mode is `round(A(0)/h)`.
    pub h: f64,
    pub points: usize,
    /// Centre of the initial velocity bump.
    pub x0: f64,
    /// Bump width in grid cells.
    pub width_cells: f64,
    pub time: f64,
    /// The captured window ends once `E < floor · E(0)`.
    pub energy_floor: f64,
    pub fcond_t: (f64, f64),
    pub fcond_points: usize,
    pub sqrt_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub preset: Preset,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub h_list: Vec<f64>,
    pub surface: SurfaceSpec,
    pub profiles: ProfilesSpec,
    pub window: WindowSpec,
    pub modes: ModePolicy,
    pub resolution: ResolutionPolicy,
    pub strip: Option<StripSpec>,
    pub dynamics: Option<DynamicsSpec>,
    pub decay: Option<DecaySpec>,
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig { field: field.to_string(), reason: reason.into() }
}

fn outer(inner: f64, outer: f64, plateau: f64, zone: Zone) -> ProfileSpec {
    ProfileSpec { shape: Shape::Outer { inner, outer }, plateau, zone }
}

/// The standard `h` ladder `1/16 … 1/128`.
pub fn standard_h_list() -> Vec<f64> {
    [16.0, 23.0, 32.0, 45.0, 64.0, 91.0, 128.0].iter().map(|d| 1.0 / d).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| invalid("(document)", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid("(document)", e.to_string()))
    }

    /// SHA-256 of the canonical serialization, ignoring where the output goes.
    pub fn hash(&self) -> Result<String> {
        let mut canon = self.clone();
        canon.output_dir = PathBuf::new();
        Ok(hex::encode(Sha256::digest(canon.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("expected {SCHEMA_VERSION}, found {}", self.schema_version)));
        }
        if self.h_list.iter().any(|h| !(*h > 0.0 && *h <= 1.0)) {
            return Err(invalid("h_list", "every h must lie in (0, 1]"));
        }
        if self.h_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("h_list", "must be strictly decreasing"));
        }
        if self.preset.is_scaling() {
            if self.h_list.len() < 5 {
                return Err(invalid("h_list", format!("{} entries, scaling presets need at least 5", self.h_list.len())));
            }
            let span = self.h_list[0] / self.h_list[self.h_list.len() - 1];
            if span < 8.0 - 1e-9 {
                return Err(invalid("h_list", format!("spans a factor {span:.3}, scaling presets need 8")));
            }
        }
        if !(self.window.delta > 0.0 && self.window.delta < 1.0) {
            return Err(invalid("window.delta", "must lie in (0, 1)"));
        }
        if !(self.window.c0 > 0.0) || !(self.window.bound_factor > 1.0) {
            return Err(invalid("window", "c0 must be positive and bound_factor above 1"));
        }
        if self.modes.subsample == 0 {
            return Err(invalid("modes.subsample", "must be at least 1"));
        }
        if !(self.resolution.points_per_wavelength >= 4.0) {
            return Err(invalid("resolution.points_per_wavelength", "must be at least 4"));
        }
        let surface = self.surface.build().map_err(|e| invalid("surface", e.to_string()))?;
        self.profile_set(&surface)?;
        if let Some(c) = &self.profiles.cutoff {
            c.build(ProfileName::Chi, surface.period).map_err(|e| invalid("profiles.cutoff", e.to_string()))?;
        }
        let need = |present: bool, field: &str| if present { Ok(()) } else { Err(invalid(field, "section required by this preset")) };
        match self.preset {
            Preset::CutoffGain => need(self.profiles.cutoff.is_some(), "profiles.cutoff")?,
            Preset::Strip => {
                need(self.strip.is_some(), "strip")?;
                let s = self.strip.as_ref().unwrap();
                if s.levels < 2 || s.levels > self.h_list.len() || s.grid_points < 2 {
                    return Err(invalid("strip", "levels must lie in [2, len(h_list)] and grid_points >= 2"));
                }
            }
            Preset::Pressure | Preset::Normhyp => {
                need(self.dynamics.is_some(), "dynamics")?;
                let d = self.dynamics.as_ref().unwrap();
                if !(d.dt > 0.0) || d.n_list.is_empty() || d.eps_list.is_empty() || d.orbit_samples == 0 {
                    return Err(invalid("dynamics", "dt must be positive and n_list, eps_list, orbit_samples nonempty"));
                }
            }
            Preset::Decay => {
                need(self.decay.is_some(), "decay")?;
                let d = self.decay.as_ref().unwrap();
                d.gcc_damping.build(ProfileName::A, surface.period).map_err(|e| invalid("decay.gcc_damping", e.to_string()))?;
                if d.gcc_modes.is_empty() || !(d.h > 0.0 && d.h <= 1.0) || !(d.fcond_t.0 > 0.0 && d.fcond_t.1 > d.fcond_t.0) {
                    return Err(invalid("decay", "gcc_modes nonempty, h in (0, 1] and 0 < fcond_t.0 < fcond_t.1 required"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn profile_set(&self, surface: &WarpedSurface) -> Result<ProfileSet> {
        Ok(ProfileSet {
            damping: self.profiles.damping.build(ProfileName::A, surface.period).map_err(|e| invalid("profiles.damping", e.to_string()))?,
            absorption: self
                .profiles
                .absorption
                .build(ProfileName::W, surface.period)
                .map_err(|e| invalid("profiles.absorption", e.to_string()))?,
        })
    }

    /// Built-in configuration for a preset, written to `output_dir = out/<preset>`.
    pub fn preset_default(preset: Preset) -> Self {
        let damping = outer(1.0, 1.7, 8.0, Zone::Avoid(0.5));
        let absorption = outer(1.0, 1.7, 2.0, Zone::Avoid(0.5));
        let mut cfg = ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            preset,
            seed: 20240,
            output_dir: PathBuf::from("out").join(preset.name()),
            h_list: standard_h_list(),
            surface: SurfaceSpec { kind: SurfaceKind::TorusFamily, m: 2 },
            profiles: ProfilesSpec { damping, absorption, cutoff: None },
            window: WindowSpec { delta: 0.25, c0: 0.1, bound_factor: 10.0 },
            modes: ModePolicy { subsample: 1, fit_model: crate::resolvent::FitModel::Power },
            resolution: ResolutionPolicy { points_per_wavelength: 16.0 },
            strip: None,
            dynamics: None,
            decay: None,
        };
        let dynamics = DynamicsSpec {
            dt: 1e-3,
            orbit_samples: 24,
            n_list: vec![2, 4, 6],
            eps_list: vec![0.2, 0.1],
            stable_u: vec![-0.4, 0.3, 0.6],
            stable_time: 20.0,
            trajectory_time: 5.0,
        };
        match preset {
            Preset::Gcc => {
                cfg.surface.m = 1;
                let floor = ProfileSpec { shape: Shape::Floor { base: 1.0, inner: 1.0, outer: 1.7 }, plateau: 3.0, zone: Zone::Free };
                cfg.profiles.damping = floor.clone();
                cfg.profiles.absorption = floor;
            }
            Preset::Normhyp => {
                cfg.surface = SurfaceSpec { kind: SurfaceKind::Peanut, m: 1 };
                cfg.modes.fit_model = crate::resolvent::FitModel::Log;
                cfg.dynamics = Some(dynamics);
            }
            Preset::CutoffGain => {
                cfg.profiles.cutoff = Some(outer(0.4, 0.7, 1.0, Zone::Avoid(0.3)));
            }
            Preset::Strip => {
                cfg.surface.m = 1;
                cfg.modes.fit_model = crate::resolvent::FitModel::Power;
                cfg.strip = Some(StripSpec { levels: 5, grid_points: 5 });
            }
            Preset::Pressure => {
                cfg.surface.m = 1;
                cfg.dynamics = Some(dynamics);
            }
            Preset::Decay => {
                cfg.surface.m = 1;
                cfg.profiles.damping = outer(1.0, 1.7, 2.0, Zone::Avoid(0.5));
                cfg.decay = Some(DecaySpec {
                    gcc_damping: ProfileSpec { shape: Shape::Floor { base: 0.5, inner: 1.0, outer: 1.7 }, plateau: 1.0, zone: Zone::Free },
                    gcc_modes: vec![0, 2, 4],
                    gcc_points: 256,
                    gcc_time: 20.0,
                    fit_start: 2.0,
                    h: 1.0 / 32.0,
                    points: 512,
                    x0: 2.0,
                    width_cells: 10.0,
                    time: 40.0,
                    energy_floor: 1e-6,
                    fcond_t: (1.0, 1e6),
                    fcond_points: 400,
                    sqrt_constant: 2.0,
                });
            }
            Preset::DegenerateM | Preset::Transfer => {}
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for p in Preset::ALL {
            let cfg = ExperimentConfig::preset_default(p);
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            let back = ExperimentConfig::parse(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_toml().unwrap(), text);
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
    }

    #[test]
    fn field_level_errors() {
        let mut cfg = ExperimentConfig::preset_default(Preset::DegenerateM);
        cfg.h_list = vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 23.0, 1.0 / 64.0, 1.0 / 128.0];
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig { field, .. }) if field == "h_list"));
        cfg.h_list = vec![1.0 / 16.0, 1.0 / 18.0, 1.0 / 20.0, 1.0 / 22.0, 1.0 / 24.0];
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig { field, .. }) if field == "h_list"));
        let mut cfg = ExperimentConfig::preset_default(Preset::CutoffGain);
        cfg.profiles.cutoff = None;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig { field, .. }) if field == "profiles.cutoff"));
        let mut cfg = ExperimentConfig::preset_default(Preset::Transfer);
        cfg.profiles.damping.zone = Zone::Avoid(1.5);
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig { field, .. }) if field == "profiles.damping"));
        assert!(matches!("bogus".parse::<Preset>(), Err(Error::UnknownPreset(_))));
        let text = ExperimentConfig::preset_default(Preset::Gcc).to_toml().unwrap().replace("seed =", "sede =");
        assert!(matches!(ExperimentConfig::parse(&text), Err(Error::InvalidConfig { .. })));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::preset_default(Preset::Gcc);
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
