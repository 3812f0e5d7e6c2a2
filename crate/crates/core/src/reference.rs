//! Closed-form values for the flat annulus stir, computed by a separate
//! code path: its own profile evaluation and its own adaptive Simpson rule.

use std::f64::consts::PI;

use serde::Serialize;

pub const ORACLE_TOLERANCE: f64 = 1e-10;

/// Angular speed `ω(r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum AngularProfile {
    /// `ω ≡ amplitude`.
    Rigid { amplitude: f64 },
    /// `amplitude` on `|r − center| ≤ half_width`, quintic ramps of width
    /// `ramp` on either side, zero beyond.
    Bump { center: f64, half_width: f64, ramp: f64, amplitude: f64 },
}

impl AngularProfile {
    pub fn omega(&self, r: f64) -> f64 {
        match *self {
            AngularProfile::Rigid { amplitude } => amplitude,
            AngularProfile::Bump { center, half_width, ramp, amplitude } => {
                let d = (r - center).abs();
                if d <= half_width {
                    amplitude
                } else if d >= half_width + ramp {
                    0.0
                } else {
                    let x = (d - half_width) / ramp;
                    // 1 − (10x³ − 15x⁴ + 6x⁵)
                    amplitude * (1.0 - x.powi(3) * (10.0 - 15.0 * x + 6.0 * x * x))
                }
            }
        }
    }

    pub fn times(&self, n: f64) -> Self {
        match *self {
            AngularProfile::Rigid { amplitude } => AngularProfile::Rigid { amplitude: n * amplitude },
            AngularProfile::Bump { center, half_width, ramp, amplitude } => {
                AngularProfile::Bump { center, half_width, ramp, amplitude: n * amplitude }
            }
        }
    }

    fn kinks(&self) -> Vec<f64> {
        match *self {
            AngularProfile::Rigid { .. } => vec![],
            AngularProfile::Bump { center, half_width, ramp, .. } => vec![
                center - half_width - ramp,
                center - half_width,
                center + half_width,
                center + half_width + ramp,
            ],
        }
    }
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        left + right + diff / 15.0
    } else {
        adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson with Richardson correction.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    adapt(&f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 50)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnulusValues {
    pub area: f64,
    pub energy: f64,
    pub mass_flow: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnulusOracle {
    pub inner: f64,
    pub outer: f64,
    pub profile: AngularProfile,
}

impl AnnulusOracle {
    pub fn new(inner: f64, outer: f64, profile: AngularProfile) -> Result<Self, String> {
        if !(inner > 0.0 && outer >= inner) {
            return Err(format!("need 0 < r0 <= r1, got {inner}, {outer}"));
        }
        if let AngularProfile::Bump { center, half_width, ramp, .. } = profile {
            if center - half_width - ramp <= inner || center + half_width + ramp >= outer {
                return Err("bump support must lie strictly inside the annulus".into());
            }
        }
        Ok(Self { inner, outer, profile })
    }

    pub fn rigid(inner: f64, outer: f64) -> Self {
        Self::new(inner, outer, AngularProfile::Rigid { amplitude: 1.0 }).expect("valid radii")
    }

    fn radial<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let mut cuts = vec![self.inner];
        cuts.extend(self.profile.kinks().into_iter().filter(|&k| k > self.inner && k < self.outer));
        cuts.push(self.outer);
        cuts.windows(2).map(|w| adaptive_simpson(&f, w[0], w[1], ORACLE_TOLERANCE)).sum()
    }

    /// Area, `J = π ∫ ω² r³ dr` and mass flow `2π ∫ ω r dr` against the
    /// angle map over unit time.
    pub fn values(&self) -> AnnulusValues {
        let w = |r: f64| self.profile.omega(r);
        AnnulusValues {
            area: PI * (self.outer * self.outer - self.inner * self.inner),
            energy: PI * self.radial(|r| w(r) * w(r) * r * r * r),
            mass_flow: 2.0 * PI * self.radial(|r| w(r) * r),
        }
    }

    /// `∫ |dθ|² dA = 2π ln(r1 / r0)`.
    pub fn angle_form_norm_sq(&self) -> f64 {
        2.0 * PI * (self.outer / self.inner).ln()
    }

    /// `J / (½ θ̃² / ‖dθ‖²)`.
    pub fn jensen_slack(&self) -> f64 {
        let v = self.values();
        v.energy / (0.5 * v.mass_flow * v.mass_flow / self.angle_form_norm_sq())
    }

    /// Polar position `(r, θ₀ + ω(r) t)`.
    pub fn orbit(&self, r: f64, theta0: f64, t: f64) -> (f64, f64) {
        (r, theta0 + self.profile.omega(r) * t)
    }
}
