//! TOML scenario files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blocks::{parse_ratio, CanonicalBlock, ScheduleParams};
use crate::energy::ScalingMode;
use crate::fields::{
    extend_field, stirring_field, AmbientField, Band, BandProfile, CutoffProfile, ExtensionMode, TangentField,
};
use crate::geometry::{tubular_chart, EmbeddedSurface, SurfaceKind};

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldChoice {
    /// Symplectic gradient of the band stream function.
    #[default]
    Stirring,
    /// Plain gradient of the same stream function; compressive control.
    Gradient,
    /// Alias of `gradient`.
    Compressive,
}

/// Unknown keys are not rejected here: serde cannot combine that check with
/// a flattened profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub axis: usize,
    #[serde(flatten)]
    pub profile: BandProfile,
    pub amplitude: f64,
    pub turns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeSpec {
    pub delta: f64,
    pub extension: ExtensionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionSpec {
    pub surface: [usize; 2],
    pub normal_points: usize,
    pub steps_per_turn: usize,
    pub particles: usize,
    pub divergence_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub blocks: usize,
    pub rho0: String,
    pub decay: String,
    pub k_max: usize,
    pub bounds: Vec<f64>,
    pub audit: usize,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative to the largest sampled speed.
    pub divergence: f64,
    pub fd_step: f64,
    pub volume: f64,
    pub duality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub field: FieldChoice,
    pub mode: ScalingMode,
    pub surface: SurfaceKind,
    pub band: BandSpec,
    pub tube: TubeSpec,
    pub resolution: ResolutionSpec,
    pub schedule: ScheduleSpec,
    pub tolerances: Tolerances,
}

impl Default for Scenario {
    /// The canonical torus block: meridional stir on a plateau band in the
    /// toroidal angle, inside a ball of radius 4.
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: None,
            field: FieldChoice::Stirring,
            mode: ScalingMode::Derived,
            surface: SurfaceKind::TorusRevolution { major: 2.0, minor: 1.0 },
            band: BandSpec {
                axis: 1,
                profile: BandProfile::Plateau { center: 0.0, half_width: 0.6, ramp: 0.6 },
                amplitude: 1.0,
                turns: 1,
            },
            tube: TubeSpec { delta: 0.05, extension: ExtensionMode::Corrected },
            resolution: ResolutionSpec {
                surface: [64, 128],
                normal_points: 8,
                steps_per_turn: 512,
                particles: 64,
                divergence_points: 10_000,
            },
            schedule: ScheduleSpec {
                blocks: 8,
                rho0: "1/8".into(),
                decay: "1/2".into(),
                k_max: 20_000,
                bounds: vec![1.0, 2.0, 5.0],
                audit: 3,
                radius: 4.0,
            },
            tolerances: Tolerances { divergence: 1e-5, fd_step: 1e-6, volume: 1e-6, duality: 1e-4 },
        }
    }
}

fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let s: Scenario = toml::from_str(text).map_err(|e| config(format!("scenario does not parse: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| config(format!("scenario does not serialize: {e}")))
    }

    /// Preconditions that do not need any construction.
    pub fn validate(&self) -> Result<(), CliError> {
        let r = &self.resolution;
        if r.steps_per_turn < crate::flow::MIN_STEPS_PER_TURN {
            return Err(config(format!(
                "resolution.steps_per_turn = {} is below the lift-safety minimum {}",
                r.steps_per_turn,
                crate::flow::MIN_STEPS_PER_TURN
            )));
        }
        if r.particles == 0 || r.divergence_points == 0 || r.normal_points < 2 {
            return Err(config("resolution needs particles >= 1, divergence_points >= 1 and normal_points >= 2"));
        }
        if self.band.turns == 0 {
            return Err(config("band.turns must be at least 1"));
        }
        let t = &self.tolerances;
        for (name, v) in [("divergence", t.divergence), ("fd_step", t.fd_step), ("volume", t.volume), ("duality", t.duality)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config(format!("tolerances.{name} must be positive")));
            }
        }
        if self.schedule.bounds.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(config("schedule.bounds must be positive"));
        }
        self.schedule_params()?;
        Ok(())
    }

    pub fn surface(&self) -> Result<EmbeddedSurface, CliError> {
        match self.surface {
            SurfaceKind::TorusRevolution { major, minor } => EmbeddedSurface::torus(major, minor),
            SurfaceKind::SpherePatch { radius, max_latitude } => EmbeddedSurface::sphere_patch(radius, max_latitude),
            SurfaceKind::FlatStrip { width, height } => EmbeddedSurface::flat_strip(width, height),
            SurfaceKind::FlatAnnulus { inner, outer } => EmbeddedSurface::flat_annulus(inner, outer),
        }
        .map_err(|e| config(format!("surface: {e}")))
    }

    pub fn tangent_field(&self) -> Result<TangentField, CliError> {
        let surface = self.surface()?;
        let band = Band { axis: self.band.axis, profile: self.band.profile };
        let f = stirring_field(&surface, band, self.band.amplitude, self.band.turns)
            .map_err(|e| config(format!("band: {e}")))?;
        Ok(match self.field {
            FieldChoice::Stirring => f,
            FieldChoice::Gradient | FieldChoice::Compressive => f.gradient_control(),
        })
    }

    pub fn ambient_field(&self) -> Result<AmbientField, CliError> {
        let tangent = self.tangent_field()?;
        let chart = tubular_chart(tangent.surface(), self.tube.delta).map_err(|e| config(format!("tube: {e}")))?;
        let cutoff = CutoffProfile::new(self.tube.delta).map_err(|e| config(format!("tube: {e}")))?;
        extend_field(&tangent, &chart, &cutoff, self.tube.extension).map_err(|e| config(format!("tube: {e}")))
    }

    pub fn canonical_block(&self) -> Result<CanonicalBlock, CliError> {
        CanonicalBlock::new(
            &self.ambient_field()?,
            self.schedule.radius,
            self.resolution.surface,
            self.resolution.normal_points,
        )
        .map_err(|e| config(format!("schedule: {e}")))
    }

    pub fn schedule_params(&self) -> Result<ScheduleParams, CliError> {
        let s = &self.schedule;
        let rho0 = parse_ratio(&s.rho0).map_err(|e| config(format!("schedule.rho0: {e}")))?;
        let decay = parse_ratio(&s.decay).map_err(|e| config(format!("schedule.decay: {e}")))?;
        ScheduleParams::new(rho0, decay, self.mode, s.k_max).map_err(|e| config(format!("schedule: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let s = Scenario::default();
        let text = s.to_toml().unwrap();
        let back = Scenario::from_toml(&text).unwrap();
        assert_eq!(s, back);
        assert_eq!(text, back.to_toml().unwrap());
    }

    #[test]
    fn unsupported_surface_is_a_config_error() {
        let text = Scenario::default().to_toml().unwrap().replace("torus_revolution", "implicit");
        assert!(matches!(Scenario::from_toml(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = Scenario::default().to_toml().unwrap().replace("[tube]", "[tube]\nradius = 1.0");
        assert!(matches!(Scenario::from_toml(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn coarse_time_grid_is_rejected() {
        let mut s = Scenario::default();
        s.resolution.steps_per_turn = 16;
        assert!(s.validate().is_err());
    }
}
