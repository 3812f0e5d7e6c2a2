//! Stirring fields on the surface and their divergence-free extension into
//! the tube.
//!
//! A stirring field is the symplectic gradient of a stream function that
//! depends only on the band coordinate `b`. Its flow runs along the other,
//! periodic chart axis. The band derivative is
//! `∂_b ψ = ±A · N · p(b) · w(b)` where `p` is the band profile, `A` the
//! amplitude and `w` the orbit-averaged area density, so that orbits in the
//! plateau complete `A·N/2π` mean turns per unit time.

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    ChartAxis, EmbeddedSurface, GeometryError, SurfaceFrame, SurfaceKind, TubularChart, Vec3, FD_STEP,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("point ({x}, {y}, {z}) is outside the region where the field can be evaluated")]
    OutsideDomain { x: f64, y: f64, z: f64 },
    #[error("band support [{lo}, {hi}] touches the chart boundary [{chart_lo}, {chart_hi}]")]
    BandTouchesBoundary { lo: f64, hi: f64, chart_lo: f64, chart_hi: f64 },
    #[error("band support width {width} must be shorter than the period {period}")]
    BandTooWide { width: f64, period: f64 },
    #[error("flow axis {axis} must be periodic")]
    FlowAxisNotPeriodic { axis: usize },
    #[error("cutoff width {cutoff} differs from tube half-width {tube}")]
    CutoffMismatch { cutoff: f64, tube: f64 },
    #[error("{mode:?} extension has divergence up to {bound:e}, which cannot meet tolerance {tol:e}")]
    ModeCannotMeetTolerance { mode: ExtensionMode, bound: f64, tol: f64 },
    #[error("invalid field parameter: {0}")]
    InvalidParameter(String),
}

/// Quintic smoothstep `x³(10 − 15x + 6x²)` on `[0, 1]`, clamped outside. Its
/// first and second derivatives vanish at both ends.
pub fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
}

/// Cutoff `η(s)`: 1 on `[0, δ/2]`, strictly decreasing on `(δ/2, 3δ/4)`,
/// 0 from `3δ/4` on.
pub fn cutoff(s: f64, delta: f64) -> f64 {
    if s <= 0.5 * delta {
        1.0
    } else if s >= 0.75 * delta {
        0.0
    } else {
        1.0 - smoothstep((s - 0.5 * delta) / (0.25 * delta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffProfile {
    delta: f64,
}

impl CutoffProfile {
    pub fn new(delta: f64) -> Result<Self, FieldError> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(FieldError::InvalidParameter(format!("cutoff width must be positive, got {delta}")));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `η(|s|)`, so that it can be evaluated directly on signed offsets.
    pub fn eval(&self, s: f64) -> f64 {
        cutoff(s.abs(), self.delta)
    }

    /// `∫_{−δ}^{δ} η(|s|)² ds` by Gauss–Legendre on the ramp; the plateau
    /// contributes exactly `δ`.
    pub fn square_integral(&self) -> f64 {
        let rule = GaussLegendre::new(12.try_into().expect("nonzero")).expect("rule");
        let (a, b) = (0.5 * self.delta, 0.75 * self.delta);
        let ramp = rule.integrate(a, b, |s| cutoff(s, self.delta).powi(2));
        self.delta + 2.0 * ramp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum BandProfile {
    /// Profile ≡ 1 over the whole chart, i.e. rigid rotation.
    Rigid,
    /// 1 within `half_width` of `center`, smoothstep down to 0 over `ramp`.
    Plateau { center: f64, half_width: f64, ramp: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    /// Chart axis the profile depends on; the flow runs along the other one.
    pub axis: usize,
    pub profile: BandProfile,
}

impl Band {
    pub fn rigid(axis: usize) -> Self {
        Self { axis, profile: BandProfile::Rigid }
    }

    pub fn plateau(axis: usize, center: f64, half_width: f64, ramp: f64) -> Self {
        Self { axis, profile: BandProfile::Plateau { center, half_width, ramp } }
    }

    pub fn flow_axis(&self) -> usize {
        1 - self.axis
    }

    /// Profile value at band coordinate `b`.
    pub fn weight(&self, axis: &ChartAxis, b: f64) -> f64 {
        match self.profile {
            BandProfile::Rigid => 1.0,
            BandProfile::Plateau { center, half_width, ramp } => {
                let d = axis.offset(b, center).abs();
                1.0 - smoothstep((d - half_width) / ramp)
            }
        }
    }

    /// Band support `[lo, hi]` on the band axis (whole axis for rigid bands).
    pub fn support(&self, axis: &ChartAxis) -> (f64, f64) {
        match self.profile {
            BandProfile::Rigid => (axis.start(), axis.start() + axis.extent()),
            BandProfile::Plateau { center, half_width, ramp } => {
                (center - half_width - ramp, center + half_width + ramp)
            }
        }
    }

    /// Breakpoints of the piecewise definition, ascending.
    fn breakpoints(&self, axis: &ChartAxis) -> Vec<f64> {
        match self.profile {
            BandProfile::Rigid => vec![axis.start(), axis.start() + axis.extent()],
            BandProfile::Plateau { center, half_width, ramp } => vec![
                center - half_width - ramp,
                center - half_width,
                center + half_width,
                center + half_width + ramp,
            ],
        }
    }

    fn scaled(&self, lambda: f64) -> Self {
        match self.profile {
            BandProfile::Rigid => *self,
            BandProfile::Plateau { center, half_width, ramp } => Band::plateau(
                self.axis,
                center * lambda,
                half_width * lambda,
                ramp * lambda,
            ),
        }
    }
}

/// Stream function of the stirring field, represented through its band
/// derivative. `ψ` itself is locally constant off the band (0 below it, the
/// total flux above it); its differential vanishes there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamFunction {
    surface: EmbeddedSurface,
    band: Band,
    amplitude: f64,
    turns: u64,
}

impl StreamFunction {
    pub fn surface(&self) -> &EmbeddedSurface {
        &self.surface
    }

    pub fn band(&self) -> &Band {
        &self.band
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn turns(&self) -> u64 {
        self.turns
    }

    fn band_axis(&self) -> ChartAxis {
        self.surface.axes()[self.band.axis]
    }

    /// Unsigned flux density `A·N·p(b)·w(b)`.
    pub fn flux_density(&self, b: f64) -> f64 {
        let w = self.surface.orbit_mean_density(self.band.flow_axis(), b);
        self.amplitude * self.turns as f64 * self.band.weight(&self.band_axis(), b) * w
    }

    /// `∂_b ψ`, signed so that the symplectic gradient points along `+flow`.
    pub fn band_derivative(&self, b: f64) -> f64 {
        let sign = if self.band.axis == 1 { 1.0 } else { -1.0 };
        sign * self.flux_density(b)
    }

    /// `ψ(b)` measured from the lower end of the band support.
    pub fn value(&self, b: f64) -> f64 {
        let axis = self.band_axis();
        let (lo, _) = self.band.support(&axis);
        let target = match self.band.profile {
            BandProfile::Plateau { center, .. } => center + axis.offset(b, center),
            BandProfile::Rigid => b,
        };
        let rule = GaussLegendre::new(16.try_into().expect("nonzero")).expect("rule");
        let mut acc = 0.0;
        let mut prev = lo;
        for &bp in self.band.breakpoints(&axis).iter().skip(1) {
            let end = bp.min(target);
            if end > prev {
                acc += rule.integrate(prev, end, |x| self.band_derivative(x));
            }
            prev = prev.max(end);
            if bp >= target {
                break;
            }
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TangentKind {
    /// `Vⁱ = εⁱʲ ∂_j ψ / √det g`: divergence-free.
    Symplectic,
    /// `Vⁱ = gⁱʲ ∂_j ψ`: negative control with nonzero divergence.
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentField {
    stream: StreamFunction,
    kind: TangentKind,
}

/// Builds `V_N = N · V_1`.
pub fn stirring_field(
    surface: &EmbeddedSurface,
    band: Band,
    amplitude: f64,
    turns: u64,
) -> Result<TangentField, FieldError> {
    if band.axis > 1 {
        return Err(FieldError::InvalidParameter(format!("band axis must be 0 or 1, got {}", band.axis)));
    }
    if !amplitude.is_finite() {
        return Err(FieldError::InvalidParameter(format!("amplitude must be finite, got {amplitude}")));
    }
    let axes = surface.axes();
    if !axes[band.flow_axis()].is_periodic() {
        return Err(FieldError::FlowAxisNotPeriodic { axis: band.flow_axis() });
    }
    if let BandProfile::Plateau { half_width, ramp, .. } = band.profile {
        if !(half_width >= 0.0 && ramp > 0.0) {
            return Err(FieldError::InvalidParameter(format!(
                "plateau needs half_width >= 0 and ramp > 0, got {half_width}, {ramp}"
            )));
        }
        let axis = axes[band.axis];
        let (lo, hi) = band.support(&axis);
        match axis {
            ChartAxis::Interval { lo: clo, hi: chi } => {
                if lo <= clo || hi >= chi {
                    return Err(FieldError::BandTouchesBoundary { lo, hi, chart_lo: clo, chart_hi: chi });
                }
            }
            ChartAxis::Periodic { period, .. } => {
                if hi - lo >= period {
                    return Err(FieldError::BandTooWide { width: hi - lo, period });
                }
            }
        }
    }
    let stream = StreamFunction { surface: *surface, band, amplitude, turns };
    Ok(TangentField { stream, kind: TangentKind::Symplectic })
}

impl TangentField {
    /// The non-rotated gradient of the same stream function.
    pub fn gradient_control(&self) -> Self {
        Self { kind: TangentKind::Gradient, ..*self }
    }

    pub fn kind(&self) -> TangentKind {
        self.kind
    }

    pub fn stream(&self) -> &StreamFunction {
        &self.stream
    }

    pub fn surface(&self) -> &EmbeddedSurface {
        &self.stream.surface
    }

    pub fn turns(&self) -> u64 {
        self.stream.turns
    }

    pub fn with_turns(&self, turns: u64) -> Self {
        Self { stream: StreamFunction { turns, ..self.stream }, ..*self }
    }

    /// The same construction on the homothetic surface `λ·M`: angular speeds
    /// are kept, so velocities scale by `λ`.
    pub fn scaled(&self, lambda: f64) -> Result<Self, FieldError> {
        let surface = self.stream.surface.scaled(lambda)?;
        let band_len = self.stream.surface.axis_is_length(self.stream.band.axis);
        let flow_len = self.stream.surface.axis_is_length(self.stream.band.flow_axis());
        let band = if band_len { self.stream.band.scaled(lambda) } else { self.stream.band };
        let amplitude = if flow_len { self.stream.amplitude * lambda } else { self.stream.amplitude };
        let stream = StreamFunction { surface, band, amplitude, turns: self.stream.turns };
        Ok(Self { stream, kind: self.kind })
    }

    fn band_coordinate(&self, u: f64, v: f64) -> f64 {
        if self.stream.band.axis == 0 {
            u
        } else {
            v
        }
    }

    /// Chart components `(V^u, V^v)` given a precomputed frame.
    pub fn components_with(&self, frame: &SurfaceFrame, u: f64, v: f64) -> [f64; 2] {
        let b = self.band_coordinate(u, v);
        let dpsi = self.stream.band_derivative(b);
        let mut grad = [0.0; 2];
        grad[self.stream.band.axis] = dpsi;
        match self.kind {
            TangentKind::Symplectic => [grad[1] / frame.sqrt_det, -grad[0] / frame.sqrt_det],
            TangentKind::Gradient => {
                let gi = &frame.metric.inverse;
                [
                    gi[(0, 0)] * grad[0] + gi[(0, 1)] * grad[1],
                    gi[(1, 0)] * grad[0] + gi[(1, 1)] * grad[1],
                ]
            }
        }
    }

    pub fn components(&self, u: f64, v: f64) -> Result<[f64; 2], FieldError> {
        let m = self.surface().metric_at(u, v)?;
        let b = self.band_coordinate(u, v);
        let dpsi = self.stream.band_derivative(b);
        let mut grad = [0.0; 2];
        grad[self.stream.band.axis] = dpsi;
        Ok(match self.kind {
            TangentKind::Symplectic => {
                let r = m.det.sqrt();
                [grad[1] / r, -grad[0] / r]
            }
            TangentKind::Gradient => {
                let gi = &m.inverse;
                [
                    gi[(0, 0)] * grad[0] + gi[(0, 1)] * grad[1],
                    gi[(1, 0)] * grad[0] + gi[(1, 1)] * grad[1],
                ]
            }
        })
    }

    /// Euclidean vector `Vⁱ X_i`.
    pub fn vector(&self, u: f64, v: f64) -> Result<Vec3, FieldError> {
        let frame = self.surface().frame(u, v)?;
        Ok(frame.push(self.components_with(&frame, u, v)))
    }

    pub fn speed(&self, u: f64, v: f64) -> Result<f64, FieldError> {
        let frame = self.surface().frame(u, v)?;
        Ok(frame.norm_sq(self.components_with(&frame, u, v)).sqrt())
    }

    /// Minimum angular speed along the plateau orbit, `A·N·w / max √det g`.
    pub fn plateau_speed(&self) -> f64 {
        let s = &self.stream;
        let axis = s.surface.axes()[s.band.axis];
        let b = match s.band.profile {
            BandProfile::Plateau { center, .. } => center,
            BandProfile::Rigid => axis.start() + 0.5 * axis.extent(),
        };
        let w = s.surface.orbit_mean_density(s.band.flow_axis(), b);
        let max_density = match (s.surface.kind(), s.band.flow_axis()) {
            (SurfaceKind::TorusRevolution { major, minor }, 0) => minor * (major + minor),
            _ => w,
        };
        let period = s.surface.axes()[s.band.flow_axis()].extent();
        s.amplitude * s.turns as f64 * w / max_density * (std::f64::consts::TAU / period)
    }
}

/// `div_g V = (1/√det g) ∂_j(√det g Vʲ)` by central differences.
pub fn intrinsic_divergence(field: &TangentField, u: f64, v: f64) -> Result<f64, FieldError> {
    let surf = field.surface();
    let [a0, a1] = surf.axes();
    let (hu, hv) = (FD_STEP * a0.scale(), FD_STEP * a1.scale());
    let flux = |u: f64, v: f64, i: usize| -> Result<f64, FieldError> {
        let m = surf.metric_at(u, v)?;
        Ok(m.det.sqrt() * field.components(u, v)?[i])
    };
    let du = (flux(u + hu, v, 0)? - flux(u - hu, v, 0)?) / (2.0 * hu);
    let dv = (flux(u, v + hv, 1)? - flux(u, v - hv, 1)?) / (2.0 * hv);
    let r = surf.metric_at(u, v)?.det.sqrt();
    Ok((du + dv) / r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionMode {
    /// `Ṽ(x_h + sν) = η(s) V(x_h)`.
    Product,
    /// `Ṽ(Φ(x_h, s)) = η(s) DΦ·V(x_h) / det DΦ`, exactly divergence-free.
    Corrected,
}

/// Extension of a tangent field into the tube; no normal component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbientField {
    tangent: TangentField,
    chart: TubularChart,
    cutoff: CutoffProfile,
    mode: ExtensionMode,
}

pub fn extend_field(
    tangent: &TangentField,
    chart: &TubularChart,
    cutoff: &CutoffProfile,
    mode: ExtensionMode,
) -> Result<AmbientField, FieldError> {
    if (cutoff.delta() - chart.delta()).abs() > 1e-15 * chart.delta() {
        return Err(FieldError::CutoffMismatch { cutoff: cutoff.delta(), tube: chart.delta() });
    }
    if chart.surface() != tangent.surface() {
        return Err(FieldError::InvalidParameter("tangent field and tube live on different surfaces".into()));
    }
    Ok(AmbientField { tangent: *tangent, chart: *chart, cutoff: *cutoff, mode })
}

impl AmbientField {
    pub fn tangent(&self) -> &TangentField {
        &self.tangent
    }

    pub fn chart(&self) -> &TubularChart {
        &self.chart
    }

    pub fn mode(&self) -> ExtensionMode {
        self.mode
    }

    pub fn cutoff(&self) -> &CutoffProfile {
        &self.cutoff
    }

    pub fn with_turns(&self, turns: u64) -> Self {
        Self { tangent: self.tangent.with_turns(turns), ..*self }
    }

    /// Homothetic copy of the whole block (surface, tube and field).
    pub fn scaled(&self, lambda: f64) -> Result<Self, FieldError> {
        let tangent = self.tangent.scaled(lambda)?;
        let chart = crate::geometry::tubular_chart(tangent.surface(), self.chart.delta() * lambda)?;
        let cutoff = CutoffProfile::new(self.cutoff.delta() * lambda)?;
        extend_field(&tangent, &chart, &cutoff, self.mode)
    }

    /// Value at tube coordinates, with the frame at the foot point supplied.
    pub fn velocity_with(&self, frame: &SurfaceFrame, u: f64, v: f64, s: f64) -> Vec3 {
        let eta = self.cutoff.eval(s);
        if eta == 0.0 {
            return Vec3::zeros();
        }
        let c = self.tangent.components_with(frame, u, v);
        match self.mode {
            ExtensionMode::Product => frame.push(c) * eta,
            ExtensionMode::Corrected => {
                let m = nalgebra::Matrix2::identity() - frame.shape * s;
                let det = m.determinant();
                let w = m * nalgebra::Vector2::new(c[0], c[1]);
                frame.push([w[0], w[1]]) * (eta / det)
            }
        }
    }

    pub fn velocity_at(&self, u: f64, v: f64, s: f64) -> Result<Vec3, FieldError> {
        let frame = self.chart.surface().frame(u, v)?;
        Ok(self.velocity_with(&frame, u, v, s))
    }

    /// Value at a Euclidean point; zero off the tube.
    pub fn velocity(&self, x: &Vec3) -> Result<Vec3, FieldError> {
        let surf = self.chart.surface();
        let Some(p) = surf.project(x) else {
            return Err(FieldError::OutsideDomain { x: x.x, y: x.y, z: x.z });
        };
        if p.s.abs() >= 0.75 * self.cutoff.delta() || !surf.contains(p.u, p.v) {
            return Ok(Vec3::zeros());
        }
        self.velocity_at(p.u, p.v, p.s)
    }

    /// A priori bound on the Euclidean divergence, per unit length: 0 in
    /// corrected mode, `3 δ κ_max max|V|` in product mode.
    pub fn divergence_bound(&self, max_speed: f64) -> f64 {
        match self.mode {
            ExtensionMode::Corrected => 0.0,
            ExtensionMode::Product => 3.0 * self.chart.delta() * self.chart.surface().kappa_max() * max_speed,
        }
    }

    /// Fails when the mode cannot reach `tol` on this surface.
    pub fn require_divergence_tolerance(&self, tol: f64, max_speed: f64) -> Result<(), FieldError> {
        let bound = self.divergence_bound(max_speed);
        if bound > tol {
            Err(FieldError::ModeCannotMeetTolerance { mode: self.mode, bound, tol })
        } else {
            Ok(())
        }
    }
}

/// Fourth-order central-difference divergence of a Euclidean field.
pub fn euclidean_divergence<F>(field: F, x: &Vec3, h: f64) -> Result<f64, FieldError>
where
    F: Fn(&Vec3) -> Result<Vec3, FieldError>,
{
    let mut div = 0.0;
    for i in 0..3 {
        let mut e = Vec3::zeros();
        e[i] = h;
        let f1 = field(&(x + e))?[i];
        let f_1 = field(&(x - e))?[i];
        let f2 = field(&(x + 2.0 * e))?[i];
        let f_2 = field(&(x - 2.0 * e))?[i];
        div += (8.0 * (f1 - f_1) - (f2 - f_2)) / (12.0 * h);
    }
    Ok(div)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tubular_chart;
    use std::f64::consts::PI;

    fn torus_field(turns: u64) -> TangentField {
        let t = EmbeddedSurface::torus(2.0, 1.0).unwrap();
        stirring_field(&t, Band::plateau(1, 0.0, 0.6, 0.6), 1.0, turns).unwrap()
    }

    #[test]
    fn cutoff_clauses() {
        let d = 0.2;
        assert_eq!(cutoff(0.3 * d, d), 1.0);
        assert_eq!(cutoff(0.9 * d, d), 0.0);
        let (a, b) = (cutoff(0.6 * d, d), cutoff(0.7 * d, d));
        assert!(a > 0.0 && a < 1.0 && a > b);
        assert_eq!(cutoff(0.5 * d, d), 1.0);
        assert_eq!(cutoff(0.75 * d, d), 0.0);
    }

    #[test]
    fn cutoff_is_c2_at_the_junctions() {
        let d = 1.0;
        let h = 1e-4;
        for &s0 in &[0.5, 0.75] {
            let second = |s: f64| (cutoff(s + h, d) - 2.0 * cutoff(s, d) + cutoff(s - h, d)) / (h * h);
            // η'' is linear in the distance to a junction, slope 60/(δ/4)³
            for k in [2.0, 4.0] {
                assert!(second(s0 - k * h).abs() <= 4000.0 * k * h);
                assert!(second(s0 + k * h).abs() <= 4000.0 * k * h);
            }
        }
    }

    #[test]
    fn zero_turns_is_the_zero_field() {
        let f = torus_field(0);
        assert_eq!(f.components(0.3, 0.1).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn turns_scale_linearly() {
        let (f1, f3) = (torus_field(1), torus_field(3));
        for &(u, v) in &[(0.1, 0.2), (2.0, -0.9), (-1.0, 0.7)] {
            let a = f1.components(u, v).unwrap();
            let b = f3.components(u, v).unwrap();
            assert!((b[0] - 3.0 * a[0]).abs() <= 1e-15 * b[0].abs());
            assert!((b[1] - 3.0 * a[1]).abs() <= 1e-15 * b[1].abs());
        }
    }

    #[test]
    fn rigid_annulus_speed_is_radius() {
        let ann = EmbeddedSurface::flat_annulus(1.0, 2.0).unwrap();
        let f = stirring_field(&ann, Band::rigid(0), 1.0, 1).unwrap();
        for &r in &[1.0, 1.3, 1.9] {
            assert!((f.speed(r, 0.4).unwrap() - r).abs() < 1e-14);
            let c = f.components(r, 0.4).unwrap();
            assert!((c[1] - 1.0).abs() < 1e-15 && c[0] == 0.0);
        }
    }

    #[test]
    fn field_vanishes_off_band() {
        let f = torus_field(2);
        assert_eq!(f.components(0.4, 1.3).unwrap(), [0.0, 0.0]);
        assert_eq!(f.components(0.4, PI).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn band_touching_boundary_is_rejected() {
        let ann = EmbeddedSurface::flat_annulus(1.0, 2.0).unwrap();
        let err = stirring_field(&ann, Band::plateau(0, 1.5, 0.3, 0.2), 1.0, 1).unwrap_err();
        assert!(matches!(err, FieldError::BandTouchesBoundary { .. }));
    }

    #[test]
    fn flow_axis_must_be_periodic() {
        let strip = EmbeddedSurface::flat_strip(1.0, 1.0).unwrap();
        let err = stirring_field(&strip, Band::plateau(0, 0.5, 0.1, 0.1), 1.0, 1).unwrap_err();
        assert_eq!(err, FieldError::FlowAxisNotPeriodic { axis: 1 });
    }

    #[test]
    fn symplectic_field_is_divergence_free_and_gradient_is_not() {
        let f = torus_field(1);
        let g = f.gradient_control();
        let mut worst_g: f64 = 0.0;
        for i in 0..40 {
            let (u, v) = (0.15 * i as f64, -1.3 + 0.065 * i as f64);
            assert!(intrinsic_divergence(&f, u, v).unwrap().abs() < 1e-6);
            worst_g = worst_g.max(intrinsic_divergence(&g, u, v).unwrap().abs());
        }
        assert!(worst_g > 1e-2, "{worst_g}");
    }

    #[test]
    fn stream_function_is_locally_constant_off_band() {
        let f = torus_field(1);
        let s = f.stream();
        assert_eq!(s.value(-1.25), 0.0);
        let top = s.value(1.2);
        assert!((s.value(1.5) - top).abs() < 1e-12);
        // flux across the band: A·N·w·∫p = 1·1·2·(2·0.6 + 0.6)
        assert!((top - 2.0 * 1.8).abs() < 1e-12, "{top}");
    }

    #[test]
    fn product_and_corrected_agree_on_flat_surfaces() {
        let ann = EmbeddedSurface::flat_annulus(1.0, 3.0).unwrap();
        let f = stirring_field(&ann, Band::plateau(0, 2.0, 0.3, 0.3), 1.0, 1).unwrap();
        let chart = tubular_chart(&ann, 0.2).unwrap();
        let eta = CutoffProfile::new(0.2).unwrap();
        let p = extend_field(&f, &chart, &eta, ExtensionMode::Product).unwrap();
        let c = extend_field(&f, &chart, &eta, ExtensionMode::Corrected).unwrap();
        for &(u, v, s) in &[(1.8, 0.3, 0.05), (2.4, 2.0, -0.12), (2.0, -1.0, 0.14)] {
            assert_eq!(p.velocity_at(u, v, s).unwrap(), c.velocity_at(u, v, s).unwrap());
        }
    }

    #[test]
    fn restriction_to_surface_is_the_tangent_field() {
        let f = torus_field(1);
        let chart = tubular_chart(f.surface(), 0.05).unwrap();
        let eta = CutoffProfile::new(0.05).unwrap();
        for mode in [ExtensionMode::Product, ExtensionMode::Corrected] {
            let a = extend_field(&f, &chart, &eta, mode).unwrap();
            let (u, v) = (0.7, 0.3);
            assert_eq!(a.velocity_at(u, v, 0.0).unwrap(), f.vector(u, v).unwrap());
        }
    }

    #[test]
    fn cutoff_mismatch_is_rejected() {
        let f = torus_field(1);
        let chart = tubular_chart(f.surface(), 0.05).unwrap();
        let eta = CutoffProfile::new(0.04).unwrap();
        let err = extend_field(&f, &chart, &eta, ExtensionMode::Corrected).unwrap_err();
        assert!(matches!(err, FieldError::CutoffMismatch { .. }));
    }

    #[test]
    fn product_mode_reports_unreachable_tolerance() {
        let f = torus_field(1);
        let chart = tubular_chart(f.surface(), 0.05).unwrap();
        let eta = CutoffProfile::new(0.05).unwrap();
        let p = extend_field(&f, &chart, &eta, ExtensionMode::Product).unwrap();
        assert!(p.require_divergence_tolerance(1e-5, 2.0).is_err());
        let c = extend_field(&f, &chart, &eta, ExtensionMode::Corrected).unwrap();
        assert!(c.require_divergence_tolerance(1e-5, 2.0).is_ok());
    }

    #[test]
    fn square_integral_of_cutoff() {
        let eta = CutoffProfile::new(0.08).unwrap();
        let r = eta.square_integral() / 0.08;
        assert!(r > 1.0 && r < 1.5);
    }
}
