//! Particle flow maps of velocity fields, with the Jacobian determinant
//! carried along by the variational equation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fields::{AmbientField, FieldError, TangentField};
use crate::geometry::Vec3;
use crate::massflow::{lift_increments, CircleValued, LiftError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("particle {particle} left the evaluable region at t = {time}: {source}")]
    LeftDomain {
        particle: usize,
        time: f64,
        #[source]
        source: FieldError,
    },
    #[error("isotopy was integrated without Jacobian tracking")]
    JacobianNotTracked,
    #[error("invalid integration setup: {0}")]
    InvalidSetup(String),
    #[error(transparent)]
    Lift(#[from] LiftError),
}

/// A velocity field in some coordinate system with invariant density `ρ`
/// (the flow preserves `ρ dx` when the field is divergence-free).
pub trait VectorField<const D: usize>: Sync {
    fn velocity(&self, t: f64, x: &[f64; D]) -> Result<[f64; D], FieldError>;

    fn density(&self, _x: &[f64; D]) -> Result<f64, FieldError> {
        Ok(1.0)
    }

    /// Length of a velocity vector at `x`.
    fn speed(&self, _x: &[f64; D], v: &[f64; D]) -> Result<f64, FieldError> {
        Ok(v.iter().map(|c| c * c).sum::<f64>().sqrt())
    }

    fn is_autonomous(&self) -> bool {
        true
    }

    /// `∂vⁱ/∂xʲ` by a fourth-order central stencil of step `h`.
    fn jacobian(&self, t: f64, x: &[f64; D], h: f64) -> Result<[[f64; D]; D], FieldError> {
        let mut jac = [[0.0; D]; D];
        for j in 0..D {
            let shifted = |k: f64| {
                let mut y = *x;
                y[j] += k * h;
                self.velocity(t, &y)
            };
            let (p1, m1, p2, m2) = (shifted(1.0)?, shifted(-1.0)?, shifted(2.0)?, shifted(-2.0)?);
            for i in 0..D {
                jac[i][j] = (8.0 * (p1[i] - m1[i]) - (p2[i] - m2[i])) / (12.0 * h);
            }
        }
        Ok(jac)
    }
}

impl VectorField<3> for AmbientField {
    fn velocity(&self, _t: f64, x: &[f64; 3]) -> Result<[f64; 3], FieldError> {
        let v = AmbientField::velocity(self, &Vec3::new(x[0], x[1], x[2]))?;
        Ok([v.x, v.y, v.z])
    }
}

/// Chart-coordinate flow on the surface; invariant density `√det g`.
impl VectorField<2> for TangentField {
    fn velocity(&self, _t: f64, x: &[f64; 2]) -> Result<[f64; 2], FieldError> {
        self.components(x[0], x[1])
    }

    fn density(&self, x: &[f64; 2]) -> Result<f64, FieldError> {
        Ok(self.surface().metric_at(x[0], x[1])?.det.sqrt())
    }

    fn speed(&self, x: &[f64; 2], v: &[f64; 2]) -> Result<f64, FieldError> {
        let g = self.surface().metric_at(x[0], x[1])?.g;
        Ok((g[(0, 0)] * v[0] * v[0] + 2.0 * g[(0, 1)] * v[0] * v[1] + g[(1, 1)] * v[1] * v[1]).sqrt())
    }
}

/// Closure-backed field, for controls and analytic test flows.
pub struct FnField<F> {
    f: F,
    autonomous: bool,
}

impl<F> FnField<F> {
    pub fn autonomous(f: F) -> Self {
        Self { f, autonomous: true }
    }

    pub fn time_dependent(f: F) -> Self {
        Self { f, autonomous: false }
    }
}

impl<const D: usize, F> VectorField<D> for FnField<F>
where
    F: Fn(f64, &[f64; D]) -> [f64; D] + Sync,
{
    fn velocity(&self, t: f64, x: &[f64; D]) -> Result<[f64; D], FieldError> {
        Ok((self.f)(t, x))
    }

    fn is_autonomous(&self) -> bool {
        self.autonomous
    }
}

/// `(1 − 2t)·V`: reverses direction at `t = 1/2`.
pub struct Reversing<'a, V>(pub &'a V);

impl<const D: usize, V: VectorField<D>> VectorField<D> for Reversing<'_, V> {
    fn velocity(&self, t: f64, x: &[f64; D]) -> Result<[f64; D], FieldError> {
        let mut v = self.0.velocity(t, x)?;
        v.iter_mut().for_each(|c| *c *= 1.0 - 2.0 * t);
        Ok(v)
    }

    fn density(&self, x: &[f64; D]) -> Result<f64, FieldError> {
        self.0.density(x)
    }

    fn speed(&self, x: &[f64; D], v: &[f64; D]) -> Result<f64, FieldError> {
        self.0.speed(x, v)
    }

    fn is_autonomous(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integration {
    pub steps: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub track_jacobian: bool,
    /// Stencil step for the velocity gradient.
    pub jacobian_step: f64,
}

/// Minimum steps per unit time per turn for unambiguous lifts.
pub const MIN_STEPS_PER_TURN: usize = 64;

impl Integration {
    pub fn unit_time(steps: usize) -> Self {
        Self { steps, t_start: 0.0, t_end: 1.0, track_jacobian: false, jacobian_step: 1e-5 }
    }

    /// `steps_per_turn · max(N, 1)` steps over unit time; rejects fewer than
    /// [`MIN_STEPS_PER_TURN`] per turn.
    pub fn for_turns(turns: u64, steps_per_turn: usize) -> Result<Self, FlowError> {
        if steps_per_turn < MIN_STEPS_PER_TURN {
            return Err(FlowError::InvalidSetup(format!(
                "{steps_per_turn} steps per turn is below the lift-safety minimum {MIN_STEPS_PER_TURN}"
            )));
        }
        Ok(Self::unit_time(steps_per_turn * turns.max(1) as usize))
    }

    pub fn with_jacobian(mut self, step: f64) -> Self {
        self.track_jacobian = true;
        self.jacobian_step = step;
        self
    }

    pub fn over(mut self, t_start: f64, t_end: f64) -> Self {
        self.t_start = t_start;
        self.t_end = t_end;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Isotopy<const D: usize> {
    pub times: Vec<f64>,
    /// `trajectories[p][k]` is particle `p` at `times[k]`.
    #[serde(skip)]
    pub trajectories: Vec<Vec<[f64; D]>>,
    /// `det Dflow · ρ(x_t) / ρ(x_0)` per particle and time.
    pub volume_ratio: Option<Vec<Vec<f64>>>,
    /// Largest particle speed at each time.
    pub speed_sup: Vec<f64>,
    pub autonomous: bool,
}

impl<const D: usize> Isotopy<D> {
    pub fn final_positions(&self) -> Vec<[f64; D]> {
        self.trajectories.iter().map(|t| *t.last().expect("non-empty")).collect()
    }

    pub fn particle_count(&self) -> usize {
        self.trajectories.len()
    }
}

fn axpy<const D: usize>(x: &[f64; D], a: f64, k: &[f64; D]) -> [f64; D] {
    std::array::from_fn(|i| x[i] + a * k[i])
}

fn mat_mul<const D: usize>(a: &[[f64; D]; D], b: &[[f64; D]; D]) -> [[f64; D]; D] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..D).map(|k| a[i][k] * b[k][j]).sum()))
}

fn mat_axpy<const D: usize>(x: &[[f64; D]; D], a: f64, k: &[[f64; D]; D]) -> [[f64; D]; D] {
    std::array::from_fn(|i| std::array::from_fn(|j| x[i][j] + a * k[i][j]))
}

pub fn determinant<const D: usize>(m: &[[f64; D]; D]) -> f64 {
    let mut a = *m;
    let mut det = 1.0;
    for c in 0..D {
        let p = (c..D).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).expect("rows");
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..D {
            let f = a[r][c] / a[c][c];
            for k in c..D {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    det
}

struct Track<const D: usize> {
    path: Vec<[f64; D]>,
    ratio: Vec<f64>,
    speeds: Vec<f64>,
}

fn integrate_one<const D: usize, V: VectorField<D>>(
    field: &V,
    x0: [f64; D],
    cfg: &Integration,
) -> Result<Track<D>, (f64, FieldError)> {
    let dt = (cfg.t_end - cfg.t_start) / cfg.steps as f64;
    let identity: [[f64; D]; D] = std::array::from_fn(|i| std::array::from_fn(|j| (i == j) as u8 as f64));
    let mut x = x0;
    let mut jac = identity;
    let rho0 = field.density(&x0).map_err(|e| (cfg.t_start, e))?;
    let mut track = Track {
        path: Vec::with_capacity(cfg.steps + 1),
        ratio: Vec::with_capacity(if cfg.track_jacobian { cfg.steps + 1 } else { 0 }),
        speeds: Vec::with_capacity(cfg.steps + 1),
    };
    let h = cfg.jacobian_step;
    let stage = |t: f64, y: &[f64; D], j: &[[f64; D]; D]| -> Result<([f64; D], [[f64; D]; D]), FieldError> {
        let v = field.velocity(t, y)?;
        let dj = if cfg.track_jacobian { mat_mul(&field.jacobian(t, y, h)?, j) } else { [[0.0; D]; D] };
        Ok((v, dj))
    };
    for k in 0..=cfg.steps {
        let t = cfg.t_start + k as f64 * dt;
        track.path.push(x);
        if cfg.track_jacobian {
            let rho = field.density(&x).map_err(|e| (t, e))?;
            track.ratio.push(determinant(&jac) * rho / rho0);
        }
        let (k1, j1) = stage(t, &x, &jac).map_err(|e| (t, e))?;
        track.speeds.push(field.speed(&x, &k1).map_err(|e| (t, e))?);
        if k == cfg.steps {
            break;
        }
        let (k2, j2) = stage(t + 0.5 * dt, &axpy(&x, 0.5 * dt, &k1), &mat_axpy(&jac, 0.5 * dt, &j1))
            .map_err(|e| (t, e))?;
        let (k3, j3) = stage(t + 0.5 * dt, &axpy(&x, 0.5 * dt, &k2), &mat_axpy(&jac, 0.5 * dt, &j2))
            .map_err(|e| (t, e))?;
        let (k4, j4) =
            stage(t + dt, &axpy(&x, dt, &k3), &mat_axpy(&jac, dt, &j3)).map_err(|e| (t, e))?;
        x = std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        if cfg.track_jacobian {
            jac = std::array::from_fn(|i| {
                std::array::from_fn(|j| {
                    jac[i][j] + dt / 6.0 * (j1[i][j] + 2.0 * j2[i][j] + 2.0 * j3[i][j] + j4[i][j])
                })
            });
        }
    }
    Ok(track)
}

/// Classical fourth-order Runge–Kutta flow of `field` from each particle.
pub fn integrate_isotopy<const D: usize, V: VectorField<D>>(
    field: &V,
    particles: &[[f64; D]],
    cfg: &Integration,
) -> Result<Isotopy<D>, FlowError> {
    if cfg.steps == 0 || !(cfg.t_end > cfg.t_start) {
        return Err(FlowError::InvalidSetup(format!(
            "need steps >= 1 and t_end > t_start (got {} steps on [{}, {}])",
            cfg.steps, cfg.t_start, cfg.t_end
        )));
    }
    let tracks = particles
        .par_iter()
        .enumerate()
        .map(|(p, &x0)| {
            integrate_one(field, x0, cfg)
                .map_err(|(time, source)| FlowError::LeftDomain { particle: p, time, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let dt = (cfg.t_end - cfg.t_start) / cfg.steps as f64;
    let times = (0..=cfg.steps).map(|k| cfg.t_start + k as f64 * dt).collect();
    let mut speed_sup = vec![0.0f64; cfg.steps + 1];
    for t in &tracks {
        for (s, &v) in speed_sup.iter_mut().zip(&t.speeds) {
            *s = s.max(v);
        }
    }
    let mut trajectories = Vec::with_capacity(tracks.len());
    let mut ratios = Vec::with_capacity(tracks.len());
    for t in tracks {
        trajectories.push(t.path);
        ratios.push(t.ratio);
    }
    Ok(Isotopy {
        times,
        trajectories,
        volume_ratio: cfg.track_jacobian.then_some(ratios),
        speed_sup,
        autonomous: field.is_autonomous(),
    })
}

/// `max |det Dflow − 1|` over particles and times.
pub fn volume_defect<const D: usize>(iso: &Isotopy<D>) -> Result<f64, FlowError> {
    let ratios = iso.volume_ratio.as_ref().ok_or(FlowError::JacobianNotTracked)?;
    Ok(ratios.iter().flatten().fold(0.0f64, |m, r| m.max((r - 1.0).abs())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NeverStops {
    pub never_stops: bool,
    /// Smallest rate of increase of the tracer's lifted angle.
    pub margin: f64,
    /// Smallest over sampled times of the largest particle speed.
    pub min_speed: f64,
}

/// The isotopy keeps moving (sup-speed stays positive) and the tracer's
/// lifted angle increases strictly between every pair of sample times.
pub fn never_stops<const D: usize, F: CircleValued<D>>(
    iso: &Isotopy<D>,
    f: &F,
    tracer: usize,
) -> Result<NeverStops, FlowError> {
    let path = iso.trajectories.get(tracer).ok_or_else(|| {
        FlowError::InvalidSetup(format!("tracer {tracer} out of range ({} particles)", iso.particle_count()))
    })?;
    let angles = path.iter().map(|x| f.angle(x)).collect::<Result<Vec<_>, _>>()?;
    let incs = lift_increments(&angles)?;
    let margin = incs
        .iter()
        .zip(iso.times.windows(2))
        .map(|(d, w)| d / (w[1] - w[0]))
        .fold(f64::INFINITY, f64::min);
    let min_speed = iso.speed_sup.iter().copied().fold(f64::INFINITY, f64::min);
    let margin = if margin.is_finite() { margin } else { 0.0 };
    let never_stops = min_speed > 0.0 && margin > 0.0;
    Ok(NeverStops { never_stops, margin: margin.max(0.0), min_speed })
}

/// Deterministic Kronecker (R_d) sequence in `[0, 1)^D`, with a seeded
/// starting offset.
pub fn low_discrepancy<const D: usize>(count: usize, seed: u64) -> Vec<[f64; D]> {
    // generalized golden ratio: unique positive root of x^(D+1) = x + 1
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (D as f64 + 1.0));
    }
    let alpha: [f64; D] = std::array::from_fn(|i| phi.powi(-(i as i32 + 1)).fract());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: [f64; D] = std::array::from_fn(|_| rng.random::<f64>());
    (1..=count)
        .map(|n| std::array::from_fn(|i| (offset[i] + n as f64 * alpha[i]).fract()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotation() -> FnField<impl Fn(f64, &[f64; 2]) -> [f64; 2] + Sync> {
        FnField::autonomous(|_t, x: &[f64; 2]| [-x[1], x[0]])
    }

    #[test]
    fn zero_field_gives_identity() {
        let f = FnField::autonomous(|_t, _x: &[f64; 3]| [0.0; 3]);
        let ps = vec![[0.1, 0.2, 0.3], [1.0, -1.0, 2.0]];
        let iso = integrate_isotopy(&f, &ps, &Integration::unit_time(16).with_jacobian(1e-5)).unwrap();
        for (p, traj) in ps.iter().zip(&iso.trajectories) {
            assert!(traj.iter().all(|x| x == p));
        }
        assert_eq!(volume_defect(&iso).unwrap(), 0.0);
    }

    #[test]
    fn rigid_rotation_orbit() {
        let iso = integrate_isotopy(&rotation(), &[[1.5, 0.0]], &Integration::unit_time(64)).unwrap();
        let [x, y] = iso.final_positions()[0];
        assert!((y.atan2(x) - 1.0).abs() < 1e-8);
        assert!((x.hypot(y) - 1.5).abs() < 1e-8);
    }

    #[test]
    fn rigid_rotation_preserves_area() {
        let iso = integrate_isotopy(
            &rotation(),
            &[[1.5, 0.0], [0.2, -0.7]],
            &Integration::unit_time(64).with_jacobian(1e-4),
        )
        .unwrap();
        assert!(volume_defect(&iso).unwrap() <= 1e-10);
    }

    #[test]
    fn compressive_field_defect() {
        let f = FnField::autonomous(|_t, x: &[f64; 3]| [-x[0], 0.0, 0.0]);
        let iso =
            integrate_isotopy(&f, &[[0.3, 0.1, 0.0]], &Integration::unit_time(128).with_jacobian(1e-4)).unwrap();
        let d = volume_defect(&iso).unwrap();
        assert!((d - (1.0 - (-1.0f64).exp())).abs() < 1e-8, "{d}");
    }

    #[test]
    fn defect_requires_tracking() {
        let iso = integrate_isotopy(&rotation(), &[[1.0, 0.0]], &Integration::unit_time(8)).unwrap();
        assert_eq!(volume_defect(&iso), Err(FlowError::JacobianNotTracked));
    }

    #[test]
    fn too_few_steps_per_turn_rejected() {
        assert!(Integration::for_turns(3, 32).is_err());
        assert_eq!(Integration::for_turns(3, 64).unwrap().steps, 192);
    }

    #[test]
    fn determinant_matches_closed_form() {
        let m = [[2.0, 1.0, 0.0], [0.5, 3.0, 1.0], [1.0, 0.0, 4.0]];
        let exact = 2.0 * (12.0 - 0.0) - 1.0 * (2.0 - 1.0) + 0.0;
        assert!((determinant(&m) - exact).abs() < 1e-12);
    }

    #[test]
    fn kronecker_points_are_reproducible() {
        let a = low_discrepancy::<3>(10, 7);
        assert_eq!(a, low_discrepancy::<3>(10, 7));
        assert_ne!(a, low_discrepancy::<3>(10, 8));
        assert!(a.iter().flatten().all(|&c| (0.0..1.0).contains(&c)));
    }
}
