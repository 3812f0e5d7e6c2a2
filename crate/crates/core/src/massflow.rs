//! Mass flow of isotopies against circle-valued test maps, and its flux dual.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fields::{FieldError, TangentField};
use crate::flow::Isotopy;
use crate::geometry::{EmbeddedSurface, QuadratureMesh, TubularChart, Vec3};

/// Largest wrapped per-step increment accepted by the lift.
pub const LIFT_THRESHOLD: f64 = PI / 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiftError {
    #[error("lift is ambiguous: step {step} jumps by {jump:.4} rad (limit {threshold:.4}); refine the time grid")]
    Ambiguous { step: usize, jump: f64, threshold: f64 },
    #[error("circle map is undefined at {point:?}")]
    Undefined { point: Vec<f64> },
    #[error("invalid circle map: {0}")]
    InvalidMap(String),
    #[error("{particles} particles but {weights} weights")]
    WeightMismatch { particles: usize, weights: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Representative in `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Real increments of the continuous lift through successive circle values.
pub fn lift_increments(angles: &[f64]) -> Result<Vec<f64>, LiftError> {
    angles
        .windows(2)
        .enumerate()
        .map(|(step, w)| {
            let d = wrap_angle(w[1] - w[0]);
            if d.abs() > LIFT_THRESHOLD {
                Err(LiftError::Ambiguous { step, jump: d, threshold: LIFT_THRESHOLD })
            } else {
                Ok(d)
            }
        })
        .collect()
}

/// Continuous lift with `lift[0] = 0`.
pub fn lift(angles: &[f64]) -> Result<Vec<f64>, LiftError> {
    let mut out = Vec::with_capacity(angles.len());
    out.push(0.0);
    let mut acc = 0.0;
    for d in lift_increments(angles)? {
        acc += d;
        out.push(acc);
    }
    Ok(out)
}

/// A map to the circle evaluated at points of some coordinate space.
pub trait CircleValued<const D: usize>: Sync {
    fn angle(&self, x: &[f64; D]) -> Result<f64, LiftError>;
}

/// `f(u, v) = offset + 2π Σ wᵢ xᵢ / Pᵢ (mod 2π)` in chart coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CircleMap {
    pub winding: [i64; 2],
    pub periods: [f64; 2],
    pub offset: f64,
}

impl CircleMap {
    /// Integer winding is only allowed along periodic axes.
    pub fn new(surface: &EmbeddedSurface, winding: [i64; 2], offset: f64) -> Result<Self, LiftError> {
        let axes = surface.axes();
        for (i, a) in axes.iter().enumerate() {
            if winding[i] != 0 && !a.is_periodic() {
                return Err(LiftError::InvalidMap(format!(
                    "winding {} along non-periodic axis {i}",
                    winding[i]
                )));
            }
        }
        Ok(Self { winding, periods: [axes[0].extent(), axes[1].extent()], offset })
    }

    /// The angle coordinate along periodic `axis`.
    pub fn basis(surface: &EmbeddedSurface, axis: usize) -> Result<Self, LiftError> {
        let mut w = [0; 2];
        w[axis] = 1;
        Self::new(surface, w, 0.0)
    }

    pub fn constant(surface: &EmbeddedSurface, value: f64) -> Result<Self, LiftError> {
        Self::new(surface, [0, 0], value)
    }

    /// Chart components of `df`.
    pub fn differential(&self) -> [f64; 2] {
        [TAU * self.winding[0] as f64 / self.periods[0], TAU * self.winding[1] as f64 / self.periods[1]]
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let [a, b] = self.differential();
        wrap_angle(self.offset + a * u + b * v)
    }
}

impl CircleValued<2> for CircleMap {
    fn angle(&self, x: &[f64; 2]) -> Result<f64, LiftError> {
        Ok(self.eval(x[0], x[1]))
    }
}

/// A chart circle map composed with the nearest-point projection of a tube.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientCircleMap {
    pub chart: TubularChart,
    pub map: CircleMap,
}

impl CircleValued<3> for AmbientCircleMap {
    fn angle(&self, x: &[f64; 3]) -> Result<f64, LiftError> {
        let p = self
            .chart
            .locate(&Vec3::new(x[0], x[1], x[2]))
            .ok_or_else(|| LiftError::Undefined { point: x.to_vec() })?;
        Ok(self.map.eval(p.u, p.v))
    }
}

/// Winding of `f` along the basis loop of periodic `axis` through the chart
/// point `at`, by unwrapping `samples` values.
pub fn numerical_winding(
    surface: &EmbeddedSurface,
    f: &CircleMap,
    axis: usize,
    at: [f64; 2],
    samples: usize,
) -> Result<f64, LiftError> {
    let a = surface.axes()[axis];
    if !a.is_periodic() {
        return Err(LiftError::InvalidMap(format!("axis {axis} carries no loop")));
    }
    let angles: Vec<f64> = (0..=samples)
        .map(|k| {
            let mut p = at;
            p[axis] = a.start() + a.extent() * k as f64 / samples as f64;
            f.eval(p[0], p[1])
        })
        .collect();
    Ok(lift(&angles)?.last().copied().unwrap_or(0.0) / TAU)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassFlowValue {
    /// `∫ lift(f∘h₁ − f) dμ`.
    pub value: f64,
    /// `μ(M)`.
    pub measure: f64,
}

impl MassFlowValue {
    /// Surrogate norm `|value / μ(M)| / ‖df‖_Ω`.
    pub fn norm(&self, basis_norm: f64) -> f64 {
        (self.value / self.measure).abs() / basis_norm
    }
}

/// Terminal lifts of every particle, integrated against `weights`.
pub fn mass_flow<const D: usize, F: CircleValued<D>>(
    iso: &Isotopy<D>,
    f: &F,
    weights: &[f64],
) -> Result<MassFlowValue, LiftError> {
    if weights.len() != iso.particle_count() {
        return Err(LiftError::WeightMismatch { particles: iso.particle_count(), weights: weights.len() });
    }
    let terminal = iso
        .trajectories
        .par_iter()
        .map(|path| {
            let angles = path.iter().map(|x| f.angle(x)).collect::<Result<Vec<_>, _>>()?;
            Ok(lift_increments(&angles)?.iter().sum::<f64>())
        })
        .collect::<Result<Vec<f64>, LiftError>>()?;
    Ok(MassFlowValue {
        value: terminal.iter().zip(weights).map(|(l, w)| l * w).sum(),
        measure: weights.iter().sum(),
    })
}

/// `∫ df(V) dμ` by quadrature.
pub fn flux_pairing(field: &TangentField, f: &CircleMap, mesh: &QuadratureMesh) -> Result<f64, LiftError> {
    let df = f.differential();
    mesh.try_integrate(|u, v| {
        let c = field.components(u, v)?;
        Ok::<f64, LiftError>(df[0] * c[0] + df[1] * c[1])
    })
}

/// `‖df‖_Ω = (μ(M)⁻¹ ∫ |df|²_g dμ)^{1/2}`.
pub fn cocycle_norm(surface: &EmbeddedSurface, f: &CircleMap, mesh: &QuadratureMesh) -> Result<f64, LiftError> {
    let df = f.differential();
    let total = mesh.try_integrate(|u, v| {
        let gi = surface.metric_at(u, v).map_err(FieldError::from)?.inverse;
        Ok::<f64, LiftError>(
            gi[(0, 0)] * df[0] * df[0] + 2.0 * gi[(0, 1)] * df[0] * df[1] + gi[(1, 1)] * df[1] * df[1],
        )
    })?;
    Ok((total / mesh.total_weight()).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JensenCheck {
    pub pass: bool,
    pub energy: f64,
    pub bound: f64,
    /// `energy / bound`; 1 when both vanish.
    pub slack: f64,
}

/// Checks `J ≥ (Vol/2)·θ̃_norm²` with `θ̃_norm = |θ̃/Vol| / ‖df‖_Ω`, which
/// reduces to `½‖V‖² ≥ ½ (∫df(V))² / ‖df‖²_{L²}`.
pub fn jensen_chain(energy: f64, theta_norm: f64, volume: f64) -> JensenCheck {
    let bound = 0.5 * volume * theta_norm * theta_norm;
    let slack = if bound > 0.0 {
        energy / bound
    } else if energy == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    JensenCheck { pass: energy >= bound, energy, bound, slack }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * TAU + 0.25) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn lift_recovers_linear_ramp() {
        let raw: Vec<f64> = (0..200).map(|k| 0.1 * k as f64).collect();
        let wrapped: Vec<f64> = raw.iter().map(|&a| wrap_angle(a)).collect();
        let l = lift(&wrapped).unwrap();
        for (a, b) in l.iter().zip(&raw) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let wrapped: Vec<f64> = (0..10).map(|k| wrap_angle(2.0 * k as f64)).collect();
        assert!(matches!(lift(&wrapped), Err(LiftError::Ambiguous { step: 0, .. })));
    }

    #[test]
    fn winding_along_interval_is_rejected() {
        let s = EmbeddedSurface::flat_annulus(1.0, 2.0).unwrap();
        assert!(CircleMap::new(&s, [1, 0], 0.0).is_err());
        assert!(CircleMap::basis(&s, 1).is_ok());
    }

    #[test]
    fn declared_winding_matches_numerical() {
        let t = EmbeddedSurface::torus(2.0, 1.0).unwrap();
        let f = CircleMap::new(&t, [2, -1], 0.3).unwrap();
        assert!((numerical_winding(&t, &f, 0, [0.0, 0.4], 64).unwrap() - 2.0).abs() < 1e-12);
        assert!((numerical_winding(&t, &f, 1, [1.0, 0.0], 64).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn circle_map_agrees_across_periodicity() {
        let t = EmbeddedSurface::torus(2.0, 1.0).unwrap();
        let f = CircleMap::new(&t, [1, 3], 0.0).unwrap();
        let a = f.eval(-PI + 1e-9, 0.7);
        let b = f.eval(PI + 1e-9, 0.7);
        assert!(wrap_angle(a - b).abs() < 1e-9);
    }

    #[test]
    fn jensen_zero_field_slack_is_one() {
        let c = jensen_chain(0.0, 0.0, 3.0);
        assert!(c.pass);
        assert_eq!(c.slack, 1.0);
    }

    #[test]
    fn jensen_is_quadratically_homogeneous() {
        let a = jensen_chain(2.0, 0.5, 4.0);
        let b = jensen_chain(2.0 * 49.0, 0.5 * 7.0, 4.0);
        assert!((a.slack - b.slack).abs() < 1e-12);
    }
}
