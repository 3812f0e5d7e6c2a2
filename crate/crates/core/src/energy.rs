//! Kinetic energy of stirring fields on surfaces and tubes, the tubular lower
//! bound, and homothety scaling of the action.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{AmbientField, CutoffProfile, FieldError, TangentField};
use crate::flow::VectorField;
use crate::geometry::{build_quadrature, GeometryError, QuadratureMesh, TubeMesh};

/// Order claimed for the tensor-product rules on C² integrands.
pub const DECLARED_ORDER: f64 = 2.0;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output failed: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("invalid energy request: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    /// Unit-time homothety: `λ^{n+2}`.
    #[default]
    Derived,
    /// Squared Jacobian of the homothety: `λ^{2n}`.
    #[serde(rename = "paper")]
    Doubled,
}

impl ScalingMode {
    pub fn exponent(self, n: u32) -> u32 {
        match self {
            ScalingMode::Derived => n + 2,
            ScalingMode::Doubled => 2 * n,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalingMode::Derived => "derived",
            ScalingMode::Doubled => "paper",
        }
    }
}

impl std::str::FromStr for ScalingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "derived" => Ok(ScalingMode::Derived),
            "paper" => Ok(ScalingMode::Doubled),
            other => Err(format!("unknown exponent mode `{other}` (expected derived or paper)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Surface,
    Tube,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub block: Option<u64>,
    pub domain: Domain,
    pub energy: f64,
    /// Tube energy with the offset volume factor replaced by 1.
    pub energy_ideal_jacobian: Option<f64>,
    pub mode: ScalingMode,
    pub lambda: f64,
    pub delta: Option<f64>,
    pub turns: u64,
    pub resolution: [usize; 2],
    pub normal_points: Option<usize>,
    /// `|J(h) − J(h/2)|`.
    pub refinement_error: f64,
}

/// `½ Σ w |V|²_g` on a surface rule.
pub fn surface_energy(field: &TangentField, mesh: &QuadratureMesh) -> Result<f64, FieldError> {
    let surf = field.surface();
    let twice = mesh.try_integrate(|u, v| {
        let frame = surf.frame(u, v)?;
        Ok::<f64, FieldError>(frame.norm_sq(field.components_with(&frame, u, v)))
    })?;
    Ok(0.5 * twice)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TubeEnergy {
    pub energy: f64,
    pub ideal_jacobian: f64,
}

/// `½ ∫ |Ṽ|² dV` over the tube, with and without the offset volume factor.
pub fn tube_energy(field: &AmbientField, mesh: &TubeMesh) -> Result<TubeEnergy, FieldError> {
    if mesh.chart.surface() != field.chart().surface() || mesh.chart.delta() != field.chart().delta() {
        return Err(FieldError::InvalidParameter("tube mesh and field live on different tubes".into()));
    }
    let integrand = |frame: &crate::geometry::SurfaceFrame, u: f64, v: f64, s: f64| {
        field.velocity_with(frame, u, v, s).norm_squared()
    };
    Ok(TubeEnergy {
        energy: 0.5 * mesh.integrate(false, integrand)?,
        ideal_jacobian: 0.5 * mesh.integrate(true, integrand)?,
    })
}

fn doubled(resolution: [usize; 2]) -> [usize; 2] {
    [2 * resolution[0], 2 * resolution[1]]
}

/// Surface energy at `resolution`, with the error estimated against the
/// doubled resolution.
pub fn surface_report(field: &TangentField, resolution: [usize; 2]) -> Result<EnergyReport, EnergyError> {
    let coarse = surface_energy(field, &build_quadrature(field.surface(), resolution)?)?;
    let fine = surface_energy(field, &build_quadrature(field.surface(), doubled(resolution))?)?;
    Ok(EnergyReport {
        block: None,
        domain: Domain::Surface,
        energy: coarse,
        energy_ideal_jacobian: None,
        mode: ScalingMode::Derived,
        lambda: 1.0,
        delta: None,
        turns: field.turns(),
        resolution,
        normal_points: None,
        refinement_error: (fine - coarse).abs(),
    })
}

pub fn tube_report(
    field: &AmbientField,
    resolution: [usize; 2],
    normal_points: usize,
) -> Result<EnergyReport, EnergyError> {
    let coarse = tube_energy(field, &TubeMesh::new(*field.chart(), resolution, normal_points)?)?;
    let fine = tube_energy(field, &TubeMesh::new(*field.chart(), doubled(resolution), normal_points)?)?;
    Ok(EnergyReport {
        block: None,
        domain: Domain::Tube,
        energy: coarse.energy,
        energy_ideal_jacobian: Some(coarse.ideal_jacobian),
        mode: ScalingMode::Derived,
        lambda: 1.0,
        delta: Some(field.chart().delta()),
        turns: field.tangent().turns(),
        resolution,
        normal_points: Some(normal_points),
        refinement_error: (fine.energy - coarse.energy).abs(),
    })
}

/// `½ ∫₀¹ Σ w |V(t, x)|² dt` with the trapezoid rule on `time_samples`
/// intervals; reduces to the autonomous energy for autonomous fields.
pub fn time_averaged_energy<const D: usize, V: VectorField<D>>(
    field: &V,
    nodes: &[[f64; D]],
    weights: &[f64],
    time_samples: usize,
) -> Result<f64, EnergyError> {
    if nodes.len() != weights.len() {
        return Err(EnergyError::Invalid(format!("{} nodes but {} weights", nodes.len(), weights.len())));
    }
    let samples = if field.is_autonomous() { 0 } else { time_samples.max(1) };
    let mut acc = 0.0;
    for k in 0..=samples {
        let t = if samples == 0 { 0.0 } else { k as f64 / samples as f64 };
        let tw = if samples == 0 || (k > 0 && k < samples) { 1.0 } else { 0.5 };
        let mut e = 0.0;
        for (x, w) in nodes.iter().zip(weights) {
            let v = field.velocity(t, x)?;
            let s = field.speed(x, &v)?;
            e += w * s * s;
        }
        acc += tw * e;
    }
    Ok(0.5 * acc / samples.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TubularCheck {
    pub pass: bool,
    pub bound: f64,
    /// `J_ambient / J_surface`.
    pub ratio: f64,
    /// `∫_{−δ}^{δ} η²(|s|) ds`, exact in the flat case.
    pub expected_ratio: f64,
}

/// `J_ambient ≥ ½ δ^{codim} J_surface`.
pub fn tubular_energy_check(j_ambient: f64, j_surface: f64, delta: f64, codim: u32) -> Result<TubularCheck, FieldError> {
    let bound = 0.5 * delta.powi(codim as i32) * j_surface;
    let expected = CutoffProfile::new(delta)?.square_integral();
    Ok(TubularCheck {
        pass: j_ambient >= bound,
        bound,
        ratio: if j_surface > 0.0 { j_ambient / j_surface } else { 0.0 },
        expected_ratio: expected,
    })
}

/// Energy of the `λ`-homothetic copy under `mode`.
pub fn scaled_energy(j: f64, lambda: f64, mode: ScalingMode, n: u32) -> Result<f64, EnergyError> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(EnergyError::Invalid(format!("scaling ratio {lambda} outside (0, 1]")));
    }
    Ok(lambda.powi(mode.exponent(n) as i32) * j)
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    block: String,
    domain: &'a str,
    energy: f64,
    energy_ideal_jacobian: String,
    mode: &'a str,
    lambda: f64,
    delta: String,
    turns: u64,
    resolution: String,
    normal_points: String,
    refinement_error: f64,
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One CSV row per report, header first.
pub fn write_csv<W: Write>(reports: &[EnergyReport], out: W) -> Result<(), EnergyError> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(CsvRow {
            block: opt(r.block),
            domain: match r.domain {
                Domain::Surface => "surface",
                Domain::Tube => "tube",
            },
            energy: r.energy,
            energy_ideal_jacobian: opt(r.energy_ideal_jacobian),
            mode: r.mode.name(),
            lambda: r.lambda,
            delta: opt(r.delta),
            turns: r.turns,
            resolution: format!("{}x{}", r.resolution[0], r.resolution[1]),
            normal_points: opt(r.normal_points),
            refinement_error: r.refinement_error,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{extend_field, stirring_field, Band, ExtensionMode};
    use crate::geometry::{tubular_chart, EmbeddedSurface};

    fn annulus_rigid() -> TangentField {
        let s = EmbeddedSurface::flat_annulus(1.0, 2.0).unwrap();
        stirring_field(&s, Band::rigid(0), 1.0, 1).unwrap()
    }

    #[test]
    fn rigid_annulus_energy() {
        let f = annulus_rigid();
        let mesh = build_quadrature(f.surface(), [400, 16]).unwrap();
        let j = surface_energy(&f, &mesh).unwrap();
        // midpoint rule in r: error h²/24 · ∫ (r³)'' dr · π
        assert!((j - 15.0 * std::f64::consts::PI / 4.0).abs() < 1e-4, "{j}");
    }

    #[test]
    fn energy_is_quadratic_in_turns() {
        let f = annulus_rigid();
        let mesh = build_quadrature(f.surface(), [64, 16]).unwrap();
        let j1 = surface_energy(&f, &mesh).unwrap();
        let j3 = surface_energy(&f.with_turns(3), &mesh).unwrap();
        assert!((j3 / j1 - 9.0).abs() < 1e-12);
        assert_eq!(surface_energy(&f.with_turns(0), &mesh).unwrap(), 0.0);
    }

    #[test]
    fn modes_differ_by_lambda_power() {
        let d = scaled_energy(1.0, 0.5, ScalingMode::Derived, 3).unwrap();
        let p = scaled_energy(1.0, 0.5, ScalingMode::Doubled, 3).unwrap();
        assert_eq!(d, 1.0 / 32.0);
        assert_eq!(p, 1.0 / 64.0);
        assert_eq!(scaled_energy(7.0, 1.0, ScalingMode::Doubled, 3).unwrap(), 7.0);
        assert!(scaled_energy(1.0, 1.5, ScalingMode::Derived, 3).is_err());
    }

    #[test]
    fn flat_tube_ratio_is_cutoff_square_integral() {
        let s = EmbeddedSurface::flat_annulus(1.0, 2.0).unwrap();
        let f = stirring_field(&s, Band::rigid(0), 1.0, 1).unwrap();
        let delta = 0.1;
        let amb = extend_field(
            &f,
            &tubular_chart(&s, delta).unwrap(),
            &CutoffProfile::new(delta).unwrap(),
            ExtensionMode::Corrected,
        ).unwrap();
        let res = [32, 16];
        let js = surface_energy(&f, &build_quadrature(&s, res).unwrap()).unwrap();
        let jt = tube_energy(&amb, &TubeMesh::new(*amb.chart(), res, 8).unwrap()).unwrap();
        assert!((jt.energy / js - delta * 1105.0 / 924.0).abs() < 1e-12);
        assert_eq!(jt.energy, jt.ideal_jacobian);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let f = annulus_rigid();
        let r = surface_report(&f, [16, 8]).unwrap();
        let mut buf = Vec::new();
        write_csv(&[r.clone(), r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("block,domain,energy"));
    }
}
