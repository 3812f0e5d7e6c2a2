//! Parametric surfaces in Euclidean 3-space, their induced metrics, tubular
//! charts and quadrature rules.
//!
//! Chart coordinates are `(u, v)`. Each axis is either periodic or a closed
//! interval. The unit normal is `X_u × X_v / |X_u × X_v|`, and the shape
//! operator `S = g⁻¹ II` is taken with respect to that normal, so the offset
//! map `Φ(u, v, s) = X(u, v) + s ν(u, v)` has volume factor `det(I − s S)`
//! relative to `√det g du dv ds`.

use std::f64::consts::{PI, TAU};

use gauss_quad::GaussLegendre;
use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Relative finite-difference step for first derivatives of the embedding.
pub const FD_STEP: f64 = 1e-5;
/// Relative step for second derivatives; smaller steps drown in round-off.
const FD_STEP_SECOND: f64 = 1e-4;
/// Admissible tube half-width is `TUBE_SAFETY / κ_max`.
pub const TUBE_SAFETY: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("parametrization is not an immersion at (u, v) = ({u}, {v}): det g = {det_g:e}")]
    NonImmersion { u: f64, v: f64, det_g: f64 },
    #[error("point (u, v) = ({u}, {v}) lies outside the chart domain")]
    OutsideChart { u: f64, v: f64 },
    #[error("tube half-width {delta} exceeds the admissible bound {max} = {TUBE_SAFETY}/kappa_max")]
    TubeTooWide { delta: f64, max: f64 },
    #[error("invalid surface parameter: {0}")]
    InvalidParameter(String),
    #[error("resolution {got} on axis {axis} is below the minimum {min}")]
    ResolutionTooLow { axis: usize, got: usize, min: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChartAxis {
    Periodic { start: f64, period: f64 },
    Interval { lo: f64, hi: f64 },
}

impl ChartAxis {
    pub fn is_periodic(&self) -> bool {
        matches!(self, ChartAxis::Periodic { .. })
    }

    pub fn extent(&self) -> f64 {
        match *self {
            ChartAxis::Periodic { period, .. } => period,
            ChartAxis::Interval { lo, hi } => hi - lo,
        }
    }

    pub fn start(&self) -> f64 {
        match *self {
            ChartAxis::Periodic { start, .. } => start,
            ChartAxis::Interval { lo, .. } => lo,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match *self {
            ChartAxis::Periodic { .. } => x.is_finite(),
            ChartAxis::Interval { lo, hi } => x >= lo && x <= hi,
        }
    }

    /// Length scale used for finite-difference steps along this axis.
    pub fn scale(&self) -> f64 {
        match *self {
            ChartAxis::Periodic { period, .. } => period / TAU,
            ChartAxis::Interval { lo, hi } => hi - lo,
        }
    }

    /// Signed offset `x − c` reduced to the symmetric fundamental interval on
    /// periodic axes.
    pub fn offset(&self, x: f64, c: f64) -> f64 {
        match *self {
            ChartAxis::Periodic { period, .. } => {
                let d = (x - c).rem_euclid(period);
                if d > 0.5 * period {
                    d - period
                } else {
                    d
                }
            }
            ChartAxis::Interval { .. } => x - c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceKind {
    /// `((A + a cos u) cos v, (A + a cos u) sin v, a sin u)`.
    TorusRevolution { major: f64, minor: f64 },
    /// Latitude `u ∈ [−lat, lat]`, longitude `v`.
    SpherePatch { radius: f64, max_latitude: f64 },
    /// `(u, v, 0)` on `[0, width] × [0, height]`.
    FlatStrip { width: f64, height: f64 },
    /// Polar chart `(r cos θ, r sin θ, 0)`, `r ∈ [inner, outer]`.
    FlatAnnulus { inner: f64, outer: f64 },
}

/// A concrete embedded 2-manifold with its chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedSurface {
    kind: SurfaceKind,
    analytic: bool,
}

/// Chart coordinates plus signed normal offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubePoint {
    pub u: f64,
    pub v: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSample {
    pub g: Matrix2<f64>,
    pub det: f64,
    pub inverse: Matrix2<f64>,
    pub normal: Vec3,
}

/// Everything the field and energy code needs at one chart point.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceFrame {
    pub point: Vec3,
    pub tangents: [Vec3; 2],
    pub metric: MetricSample,
    pub sqrt_det: f64,
    /// Shape operator in chart components, `S = g⁻¹ II`.
    pub shape: Matrix2<f64>,
}

impl SurfaceFrame {
    /// Pushes chart components forward to a Euclidean vector.
    pub fn push(&self, c: [f64; 2]) -> Vec3 {
        self.tangents[0] * c[0] + self.tangents[1] * c[1]
    }

    pub fn norm_sq(&self, c: [f64; 2]) -> f64 {
        let g = &self.metric.g;
        g[(0, 0)] * c[0] * c[0] + 2.0 * g[(0, 1)] * c[0] * c[1] + g[(1, 1)] * c[1] * c[1]
    }

    /// `det(I − s S)`.
    pub fn offset_det(&self, s: f64) -> f64 {
        (Matrix2::identity() - self.shape * s).determinant()
    }
}

fn positive(name: &str, x: f64) -> Result<(), GeometryError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(GeometryError::InvalidParameter(format!("{name} must be positive, got {x}")))
    }
}

impl EmbeddedSurface {
    pub fn torus(major: f64, minor: f64) -> Result<Self, GeometryError> {
        positive("minor radius", minor)?;
        positive("major radius", major)?;
        if major <= minor {
            return Err(GeometryError::InvalidParameter(format!(
                "torus needs major > minor (got {major} <= {minor}); otherwise it self-intersects"
            )));
        }
        Ok(Self::from_kind(SurfaceKind::TorusRevolution { major, minor }))
    }

    pub fn sphere_patch(radius: f64, max_latitude: f64) -> Result<Self, GeometryError> {
        positive("radius", radius)?;
        if !(max_latitude > 0.0 && max_latitude <= 0.5 * PI) {
            return Err(GeometryError::InvalidParameter(format!(
                "max latitude must lie in (0, pi/2], got {max_latitude}"
            )));
        }
        Ok(Self::from_kind(SurfaceKind::SpherePatch { radius, max_latitude }))
    }

    pub fn flat_strip(width: f64, height: f64) -> Result<Self, GeometryError> {
        positive("width", width)?;
        positive("height", height)?;
        Ok(Self::from_kind(SurfaceKind::FlatStrip { width, height }))
    }

    pub fn flat_annulus(inner: f64, outer: f64) -> Result<Self, GeometryError> {
        positive("inner radius", inner)?;
        if outer <= inner {
            return Err(GeometryError::InvalidParameter(format!(
                "annulus needs outer > inner (got {outer} <= {inner})"
            )));
        }
        Ok(Self::from_kind(SurfaceKind::FlatAnnulus { inner, outer }))
    }

    pub fn from_kind(kind: SurfaceKind) -> Self {
        Self { kind, analytic: true }
    }

    /// Switches between analytic derivatives and central differences.
    pub fn with_analytic(mut self, analytic: bool) -> Self {
        self.analytic = analytic;
        self
    }

    pub fn kind(&self) -> SurfaceKind {
        self.kind
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        self.analytic
    }

    pub fn axes(&self) -> [ChartAxis; 2] {
        match self.kind {
            SurfaceKind::TorusRevolution { .. } => [
                ChartAxis::Periodic { start: 0.0, period: TAU },
                ChartAxis::Periodic { start: 0.0, period: TAU },
            ],
            SurfaceKind::SpherePatch { max_latitude, .. } => [
                ChartAxis::Interval { lo: -max_latitude, hi: max_latitude },
                ChartAxis::Periodic { start: 0.0, period: TAU },
            ],
            SurfaceKind::FlatStrip { width, height } => [
                ChartAxis::Interval { lo: 0.0, hi: width },
                ChartAxis::Interval { lo: 0.0, hi: height },
            ],
            SurfaceKind::FlatAnnulus { inner, outer } => [
                ChartAxis::Interval { lo: inner, hi: outer },
                ChartAxis::Periodic { start: 0.0, period: TAU },
            ],
        }
    }

    /// Whether a chart axis measures length (as opposed to an angle). Length
    /// axes rescale under homotheties, angular ones do not.
    pub fn axis_is_length(&self, axis: usize) -> bool {
        match self.kind {
            SurfaceKind::TorusRevolution { .. } | SurfaceKind::SpherePatch { .. } => false,
            SurfaceKind::FlatStrip { .. } => true,
            SurfaceKind::FlatAnnulus { .. } => axis == 0,
        }
    }

    /// Upper bound on the principal-curvature magnitude.
    pub fn kappa_max(&self) -> f64 {
        match self.kind {
            SurfaceKind::TorusRevolution { major, minor } => (1.0 / minor).max(1.0 / (major - minor)),
            SurfaceKind::SpherePatch { radius, .. } => 1.0 / radius,
            SurfaceKind::FlatStrip { .. } | SurfaceKind::FlatAnnulus { .. } => 0.0,
        }
    }

    /// Radius of a ball about the origin containing the surface.
    pub fn bounding_radius(&self) -> f64 {
        match self.kind {
            SurfaceKind::TorusRevolution { major, minor } => major + minor,
            SurfaceKind::SpherePatch { radius, .. } => radius,
            SurfaceKind::FlatStrip { width, height } => width.hypot(height),
            SurfaceKind::FlatAnnulus { outer, .. } => outer,
        }
    }

    /// Homothetic copy `x ↦ λ x`.
    pub fn scaled(&self, lambda: f64) -> Result<Self, GeometryError> {
        positive("scale factor", lambda)?;
        let kind = match self.kind {
            SurfaceKind::TorusRevolution { major, minor } => {
                SurfaceKind::TorusRevolution { major: major * lambda, minor: minor * lambda }
            }
            SurfaceKind::SpherePatch { radius, max_latitude } => {
                SurfaceKind::SpherePatch { radius: radius * lambda, max_latitude }
            }
            SurfaceKind::FlatStrip { width, height } => {
                SurfaceKind::FlatStrip { width: width * lambda, height: height * lambda }
            }
            SurfaceKind::FlatAnnulus { inner, outer } => {
                SurfaceKind::FlatAnnulus { inner: inner * lambda, outer: outer * lambda }
            }
        };
        Ok(Self { kind, analytic: self.analytic })
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        let [a0, a1] = self.axes();
        a0.contains(u) && a1.contains(v)
    }

    pub fn point(&self, u: f64, v: f64) -> Vec3 {
        let (cu, su) = (u.cos(), u.sin());
        let (cv, sv) = (v.cos(), v.sin());
        match self.kind {
            SurfaceKind::TorusRevolution { major, minor } => {
                let p = major + minor * cu;
                Vec3::new(p * cv, p * sv, minor * su)
            }
            SurfaceKind::SpherePatch { radius, .. } => radius * Vec3::new(cu * cv, cu * sv, su),
            SurfaceKind::FlatStrip { .. } => Vec3::new(u, v, 0.0),
            SurfaceKind::FlatAnnulus { .. } => Vec3::new(u * cv, u * sv, 0.0),
        }
    }

    fn analytic_tangents(&self, u: f64, v: f64) -> [Vec3; 2] {
        let (cu, su) = (u.cos(), u.sin());
        let (cv, sv) = (v.cos(), v.sin());
        match self.kind {
            SurfaceKind::TorusRevolution { major, minor } => {
                let p = major + minor * cu;
                [
                    Vec3::new(-minor * su * cv, -minor * su * sv, minor * cu),
                    Vec3::new(-p * sv, p * cv, 0.0),
                ]
            }
            SurfaceKind::SpherePatch { radius, .. } => [
                radius * Vec3::new(-su * cv, -su * sv, cu),
                radius * Vec3::new(-cu * sv, cu * cv, 0.0),
            ],
            SurfaceKind::FlatStrip { .. } => [Vec3::x(), Vec3::y()],
            SurfaceKind::FlatAnnulus { .. } => [Vec3::new(cv, sv, 0.0), Vec3::new(-u * sv, u * cv, 0.0)],
        }
    }

    /// `[X_uu, X_uv, X_vv]`.
    fn analytic_second(&self, u: f64, v: f64) -> [Vec3; 3] {
        let (cu, su) = (u.cos(), u.sin());
        let (cv, sv) = (v.cos(), v.sin());
        match self.kind {
            SurfaceKind::TorusRevolution { major, minor } => {
                let p = major + minor * cu;
                [
                    Vec3::new(-minor * cu * cv, -minor * cu * sv, -minor * su),
                    Vec3::new(minor * su * sv, -minor * su * cv, 0.0),
                    Vec3::new(-p * cv, -p * sv, 0.0),
                ]
            }
            SurfaceKind::SpherePatch { radius, .. } => [
                radius * Vec3::new(-cu * cv, -cu * sv, -su),
                radius * Vec3::new(su * sv, -su * cv, 0.0),
                radius * Vec3::new(-cu * cv, -cu * sv, 0.0),
            ],
            SurfaceKind::FlatStrip { .. } => [Vec3::zeros(); 3],
            SurfaceKind::FlatAnnulus { .. } => {
                [Vec3::zeros(), Vec3::new(-sv, cv, 0.0), Vec3::new(-u * cv, -u * sv, 0.0)]
            }
        }
    }

    fn fd_steps(&self, rel: f64) -> [f64; 2] {
        let [a0, a1] = self.axes();
        [rel * a0.scale(), rel * a1.scale()]
    }

    pub fn tangents(&self, u: f64, v: f64) -> [Vec3; 2] {
        if self.analytic {
            return self.analytic_tangents(u, v);
        }
        let [hu, hv] = self.fd_steps(FD_STEP);
        [
            (self.point(u + hu, v) - self.point(u - hu, v)) / (2.0 * hu),
            (self.point(u, v + hv) - self.point(u, v - hv)) / (2.0 * hv),
        ]
    }

    pub fn second_derivatives(&self, u: f64, v: f64) -> [Vec3; 3] {
        if self.analytic {
            return self.analytic_second(u, v);
        }
        let [hu, hv] = self.fd_steps(FD_STEP_SECOND);
        let x = |a: f64, b: f64| self.point(a, b);
        let c = x(u, v);
        [
            (x(u + hu, v) - 2.0 * c + x(u - hu, v)) / (hu * hu),
            (x(u + hu, v + hv) - x(u + hu, v - hv) - x(u - hu, v + hv) + x(u - hu, v - hv))
                / (4.0 * hu * hv),
            (x(u, v + hv) - 2.0 * c + x(u, v - hv)) / (hv * hv),
        ]
    }

    pub fn metric_at(&self, u: f64, v: f64) -> Result<MetricSample, GeometryError> {
        if !self.contains(u, v) {
            return Err(GeometryError::OutsideChart { u, v });
        }
        let [xu, xv] = self.tangents(u, v);
        metric_from_tangents(u, v, xu, xv)
    }

    pub fn frame(&self, u: f64, v: f64) -> Result<SurfaceFrame, GeometryError> {
        if !self.contains(u, v) {
            return Err(GeometryError::OutsideChart { u, v });
        }
        let tangents = self.tangents(u, v);
        let metric = metric_from_tangents(u, v, tangents[0], tangents[1])?;
        let [xuu, xuv, xvv] = self.second_derivatives(u, v);
        let n = metric.normal;
        let second = Matrix2::new(xuu.dot(&n), xuv.dot(&n), xuv.dot(&n), xvv.dot(&n));
        Ok(SurfaceFrame {
            point: self.point(u, v),
            tangents,
            metric,
            sqrt_det: metric.det.sqrt(),
            shape: metric.inverse * second,
        })
    }

    /// Eigenvalues of the shape operator, ascending.
    pub fn principal_curvatures(&self, u: f64, v: f64) -> Result<[f64; 2], GeometryError> {
        let s = self.frame(u, v)?.shape;
        let tr = s.trace();
        let det = s.determinant();
        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
        Ok([0.5 * tr - disc, 0.5 * tr + disc])
    }

    /// Inverse of the offset map `Φ`. Returns `None` where the normal
    /// coordinates degenerate (torus core circle, axis of revolution, sphere
    /// centre). Periodic coordinates come back in `(−π, π]`; interval axes are
    /// not clamped, so callers check [`contains`](Self::contains).
    pub fn project(&self, x: &Vec3) -> Option<TubePoint> {
        match self.kind {
            SurfaceKind::TorusRevolution { major, minor } => {
                let rho = x.x.hypot(x.y);
                let d = (rho - major).hypot(x.z);
                if rho == 0.0 || d == 0.0 {
                    return None;
                }
                Some(TubePoint { u: x.z.atan2(rho - major), v: x.y.atan2(x.x), s: minor - d })
            }
            SurfaceKind::SpherePatch { radius, .. } => {
                let d = x.norm();
                let rho = x.x.hypot(x.y);
                if d == 0.0 || rho == 0.0 {
                    return None;
                }
                Some(TubePoint { u: x.z.atan2(rho), v: x.y.atan2(x.x), s: radius - d })
            }
            SurfaceKind::FlatStrip { .. } => Some(TubePoint { u: x.x, v: x.y, s: x.z }),
            SurfaceKind::FlatAnnulus { .. } => {
                let r = x.x.hypot(x.y);
                if r == 0.0 {
                    return None;
                }
                Some(TubePoint { u: r, v: x.y.atan2(x.x), s: x.z })
            }
        }
    }

    /// Orbit-averaged area density `(1/P) ∫ √det g` along the periodic
    /// `flow_axis`, as a function of the other coordinate `b`. Stirring fields
    /// use it so that their mean angular frequency equals the band profile.
    pub fn orbit_mean_density(&self, flow_axis: usize, b: f64) -> f64 {
        match (self.kind, flow_axis) {
            (SurfaceKind::TorusRevolution { major, minor }, 0) => minor * major,
            (SurfaceKind::TorusRevolution { major, minor }, _) => minor * (major + minor * b.cos()),
            (SurfaceKind::SpherePatch { radius, .. }, _) => radius * radius * b.cos(),
            (SurfaceKind::FlatStrip { .. }, _) => 1.0,
            (SurfaceKind::FlatAnnulus { .. }, _) => b,
        }
    }
}

fn metric_from_tangents(u: f64, v: f64, xu: Vec3, xv: Vec3) -> Result<MetricSample, GeometryError> {
    let g = Matrix2::new(xu.dot(&xu), xu.dot(&xv), xu.dot(&xv), xv.dot(&xv));
    let det = g.determinant();
    let scale = g[(0, 0)].max(g[(1, 1)]).max(f64::MIN_POSITIVE);
    if !(det > 1e-14 * scale * scale) {
        return Err(GeometryError::NonImmersion { u, v, det_g: det });
    }
    let inverse = Matrix2::new(g[(1, 1)], -g[(0, 1)], -g[(1, 0)], g[(0, 0)]) / det;
    let cross = xu.cross(&xv);
    Ok(MetricSample { g, det, inverse, normal: cross / cross.norm() })
}

/// The offset chart `Φ(u, v, s) = X(u, v) + s ν(u, v)` on `|s| ≤ δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubularChart {
    surface: EmbeddedSurface,
    delta: f64,
}

pub fn tubular_chart(surface: &EmbeddedSurface, delta: f64) -> Result<TubularChart, GeometryError> {
    positive("tube half-width", delta)?;
    let kappa = surface.kappa_max();
    if kappa > 0.0 {
        let max = TUBE_SAFETY / kappa;
        if delta > max * (1.0 + 1e-12) {
            return Err(GeometryError::TubeTooWide { delta, max });
        }
    }
    Ok(TubularChart { surface: *surface, delta })
}

impl TubularChart {
    pub fn surface(&self) -> &EmbeddedSurface {
        &self.surface
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn map(&self, u: f64, v: f64, s: f64) -> Result<Vec3, GeometryError> {
        let n = self.surface.metric_at(u, v)?.normal;
        Ok(self.surface.point(u, v) + n * s)
    }

    /// Volume factor of `Φ` relative to `√det g du dv ds`, i.e. `det(I − sS)`.
    pub fn det_jacobian(&self, u: f64, v: f64, s: f64) -> Result<f64, GeometryError> {
        Ok(self.surface.frame(u, v)?.offset_det(s))
    }

    /// The same factor under the block-diagonal metric `diag(g, 1)`, which
    /// ignores the curvature of the offset surfaces.
    pub fn det_jacobian_ideal(&self, _u: f64, _v: f64, _s: f64) -> f64 {
        1.0
    }

    /// Inverse chart restricted to the tube and the chart domain.
    pub fn locate(&self, x: &Vec3) -> Option<TubePoint> {
        self.surface
            .project(x)
            .filter(|p| p.s.abs() <= self.delta && self.surface.contains(p.u, p.v))
    }
}

/// Tensor-product rule on the chart: trapezoid on periodic axes, midpoint on
/// intervals. Weights carry `√det g`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureMesh {
    pub nodes: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub resolution: [usize; 2],
}

pub const MIN_PERIODIC_NODES: usize = 8;

fn axis_nodes(axis: &ChartAxis, n: usize) -> Vec<f64> {
    let h = axis.extent() / n as f64;
    match *axis {
        ChartAxis::Periodic { start, .. } => (0..n).map(|i| start + i as f64 * h).collect(),
        ChartAxis::Interval { lo, .. } => (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect(),
    }
}

pub fn build_quadrature(
    surface: &EmbeddedSurface,
    resolution: [usize; 2],
) -> Result<QuadratureMesh, GeometryError> {
    let axes = surface.axes();
    for (axis, (a, &n)) in axes.iter().zip(resolution.iter()).enumerate() {
        let min = if a.is_periodic() { MIN_PERIODIC_NODES } else { 1 };
        if n < min {
            return Err(GeometryError::ResolutionTooLow { axis, got: n, min });
        }
    }
    let nu = axis_nodes(&axes[0], resolution[0]);
    let nv = axis_nodes(&axes[1], resolution[1]);
    let cell = axes[0].extent() / resolution[0] as f64 * axes[1].extent() / resolution[1] as f64;
    let nodes: Vec<[f64; 2]> = nu.iter().flat_map(|&u| nv.iter().map(move |&v| [u, v])).collect();
    let weights = nodes
        .par_iter()
        .map(|&[u, v]| surface.metric_at(u, v).map(|m| cell * m.det.sqrt()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QuadratureMesh { nodes, weights, resolution })
}

impl QuadratureMesh {
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Σ wᵢ f(nodeᵢ)` with per-node evaluation in parallel and the sum taken
    /// in node order.
    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        let values: Vec<f64> = self.nodes.par_iter().map(|&[u, v]| f(u, v)).collect();
        values.iter().zip(&self.weights).map(|(f, w)| f * w).sum()
    }

    pub fn try_integrate<F, E>(&self, f: F) -> Result<f64, E>
    where
        F: Fn(f64, f64) -> Result<f64, E> + Sync,
        E: Send,
    {
        let values = self.nodes.par_iter().map(|&[u, v]| f(u, v)).collect::<Result<Vec<f64>, E>>()?;
        Ok(values.iter().zip(&self.weights).map(|(f, w)| f * w).sum())
    }
}

/// Gauss–Legendre nodes in the normal direction, split at `±δ/2` and
/// `±3δ/4` where the cutoff changes regime, so each piece is integrated as a
/// smooth function.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalRule {
    pub fn for_cutoff(delta: f64, points_per_piece: usize) -> Self {
        let rule = GaussLegendre::new(points_per_piece.max(2).try_into().expect("nonzero"))
            .expect("Gauss-Legendre rule");
        let breaks = [-0.75 * delta, -0.5 * delta, 0.5 * delta, 0.75 * delta];
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            let mut piece: Vec<(f64, f64)> =
                rule.nodes().zip(rule.weights()).map(|(x, wt)| (mid + half * x, half * wt)).collect();
            piece.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (x, wt) in piece {
                nodes.push(x);
                weights.push(wt);
            }
        }
        Self { nodes, weights }
    }
}

/// Surface rule times normal rule, with the offset volume factor applied.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeMesh {
    pub chart: TubularChart,
    pub surface: QuadratureMesh,
    pub normal: NormalRule,
}

impl TubeMesh {
    pub fn new(
        chart: TubularChart,
        resolution: [usize; 2],
        points_per_piece: usize,
    ) -> Result<Self, GeometryError> {
        let surface = build_quadrature(chart.surface(), resolution)?;
        let normal = NormalRule::for_cutoff(chart.delta(), points_per_piece);
        Ok(Self { chart, surface, normal })
    }

    /// `∫ f dV` over the tube. `ideal` replaces `det(I − sS)` by 1.
    pub fn integrate<F>(&self, ideal: bool, f: F) -> Result<f64, GeometryError>
    where
        F: Fn(&SurfaceFrame, f64, f64, f64) -> f64 + Sync,
    {
        let surf = self.chart.surface();
        let per_node = self
            .surface
            .nodes
            .par_iter()
            .map(|&[u, v]| {
                let frame = surf.frame(u, v)?;
                let mut acc = 0.0;
                for (&s, &w) in self.normal.nodes.iter().zip(&self.normal.weights) {
                    let jac = if ideal { 1.0 } else { frame.offset_det(s) };
                    acc += w * jac * f(&frame, u, v, s);
                }
                Ok(acc)
            })
            .collect::<Result<Vec<f64>, GeometryError>>()?;
        Ok(per_node.iter().zip(&self.surface.weights).map(|(a, w)| a * w).sum())
    }
}

/// Determinant of a 3×3 matrix with columns `a, b, c`.
pub fn det3(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    Matrix3::from_columns(&[*a, *b, *c]).determinant()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn torus() -> EmbeddedSurface {
        EmbeddedSurface::torus(2.0, 1.0).unwrap()
    }

    #[test]
    fn flat_strip_metric_is_identity() {
        let s = EmbeddedSurface::flat_strip(1.0, 1.0).unwrap();
        let m = s.metric_at(0.3, 0.7).unwrap();
        assert_eq!(m.g, Matrix2::identity());
        assert_eq!(m.det, 1.0);
        assert_eq!(m.normal, Vec3::z());
    }

    #[test]
    fn torus_metric_at_origin() {
        let m = torus().metric_at(0.0, 0.0).unwrap();
        assert!(close(m.g[(0, 0)], 1.0, 1e-15));
        assert!(close(m.g[(1, 1)], 9.0, 1e-14));
        assert!(close(m.g[(0, 1)], 0.0, 1e-15));
        assert!(close(m.det, 9.0, 1e-13));
    }

    #[test]
    fn sphere_equator_metric() {
        let s = EmbeddedSurface::sphere_patch(1.0, 1.2).unwrap();
        let m = s.metric_at(0.0, 0.4).unwrap();
        assert!(close(m.g[(0, 0)], 1.0, 1e-15));
        assert!(close(m.g[(1, 1)], 1.0, 1e-15));
    }

    #[test]
    fn degenerate_parametrization_is_reported() {
        let s = EmbeddedSurface::sphere_patch(1.0, 0.5 * PI).unwrap();
        let err = s.metric_at(0.5 * PI, 0.0).unwrap_err();
        assert!(matches!(err, GeometryError::NonImmersion { .. }), "{err}");
    }

    #[test]
    fn finite_difference_metric_matches_analytic() {
        for surf in [torus(), EmbeddedSurface::sphere_patch(1.0, 1.2).unwrap()] {
            let fd = surf.with_analytic(false);
            for &(u, v) in &[(0.1, 0.2), (1.0, -2.0), (-0.7, 3.0)] {
                let a = surf.metric_at(u, v).unwrap().g;
                let b = fd.metric_at(u, v).unwrap().g;
                let h = FD_STEP;
                assert!((a - b).abs().max() <= 10.0 * h * h * a.abs().max().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn sphere_offset_factor() {
        let s = EmbeddedSurface::sphere_patch(1.0, 1.2).unwrap();
        let chart = tubular_chart(&s, 0.1).unwrap();
        let d = chart.det_jacobian(0.0, 0.3, 0.05).unwrap();
        assert!(close(d, 0.9025, 1e-13), "{d}");
        assert_eq!(chart.det_jacobian(0.4, 0.3, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn flat_offset_factor_is_one() {
        let s = EmbeddedSurface::flat_strip(1.0, 1.0).unwrap();
        let chart = tubular_chart(&s, 5.0).unwrap();
        assert_eq!(chart.det_jacobian(0.2, 0.9, 3.0).unwrap(), 1.0);
    }

    #[test]
    fn offset_factor_matches_principal_curvatures() {
        let chart = tubular_chart(&torus(), 0.1).unwrap();
        for &(u, v, s) in &[(0.3, 1.0, 0.07), (2.5, -1.0, -0.09), (PI, 0.0, 0.1)] {
            let [k1, k2] = torus().principal_curvatures(u, v).unwrap();
            let prod = (1.0 - s * k1) * (1.0 - s * k2);
            let d = chart.det_jacobian(u, v, s).unwrap();
            assert!(close(d, prod, 1e-13));
            assert!(d > 0.0);
            assert!(k1.abs().max(k2.abs()) <= torus().kappa_max() + 1e-12);
        }
    }

    #[test]
    fn tube_too_wide_is_rejected() {
        let err = tubular_chart(&torus(), 0.2).unwrap_err();
        assert_eq!(err, GeometryError::TubeTooWide { delta: 0.2, max: 0.1 });
    }

    #[test]
    fn projection_inverts_offset_map() {
        let chart = tubular_chart(&torus(), 0.1).unwrap();
        let (u, v, s) = (0.8, -2.1, 0.06);
        let x = chart.map(u, v, s).unwrap();
        let p = chart.locate(&x).unwrap();
        assert!(close(p.u, u, 1e-13) && close(p.v, v, 1e-13) && close(p.s, s, 1e-13));
    }

    #[test]
    fn flat_strip_weights_sum_to_area_exactly() {
        let s = EmbeddedSurface::flat_strip(1.0, 1.0).unwrap();
        for n in [1, 4, 16, 64] {
            assert_eq!(build_quadrature(&s, [n, n]).unwrap().total_weight(), 1.0);
        }
    }

    #[test]
    fn periodic_axes_need_eight_nodes() {
        let err = build_quadrature(&torus(), [4, 16]).unwrap_err();
        assert_eq!(err, GeometryError::ResolutionTooLow { axis: 0, got: 4, min: 8 });
    }

    #[test]
    fn periodic_offset_wraps_symmetrically() {
        let a = ChartAxis::Periodic { start: 0.0, period: TAU };
        assert!(close(a.offset(TAU - 0.1, 0.0), -0.1, 1e-14));
        assert!(close(a.offset(0.1, TAU), 0.1, 1e-14));
    }

    #[test]
    fn normal_rule_integrates_polynomials() {
        let r = NormalRule::for_cutoff(0.4, 6);
        let sum: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x * x).sum();
        let exact = 2.0 * 0.3f64.powi(3) / 3.0;
        assert!(close(sum, exact, 1e-15));
    }
}
