//! Countable schedules of homothetic stirring blocks in the unit cube, their
//! energy lower bounds, and certificates that the total action diverges.

use std::str::FromStr;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::energy::{surface_energy, tube_energy, EnergyError, ScalingMode};
use crate::fields::{AmbientField, BandProfile, FieldError};
use crate::flow::{integrate_isotopy, never_stops, FlowError, Integration, NeverStops};
use crate::geometry::{build_quadrature, GeometryError, TubeMesh, Vec3};
use crate::massflow::{AmbientCircleMap, CircleMap, LiftError};

pub const SCHEMA: &str = "sdiff-lab.divergence-certificate/1";
/// Ambient dimension of the cube and dimension of the stirred surface.
pub const AMBIENT_DIM: u32 = 3;
pub const SURFACE_DIM: u32 = 2;
/// All-pairs exact disjointness is checked up to this many balls.
pub const EXACT_PAIR_LIMIT: usize = 64;
/// Partial sums are re-verified in exact arithmetic up to this many blocks.
pub const EXACT_SUM_LIMIT: usize = 256;
/// Exact integers are printed when they have at most this many digits.
pub const MAX_EXACT_DIGITS: usize = 120;
/// Turn counts above `2^MAX_TURN_BITS` are reported as unreachable.
pub const MAX_TURN_BITS: u64 = 1 << 22;

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("invalid schedule parameter: {0}")]
    InvalidParameter(String),
    #[error("balls {first} and {second} overlap")]
    Overlap { first: usize, second: usize },
    #[error("ball {index} is not contained in the open unit cube")]
    Escape { index: usize },
    #[error("block {index}: target unreachable ({reason})")]
    Unreachable { index: usize, reason: String },
    #[error("insufficient schedule length: bound {bound} not reached within {k_max} blocks (S = {reached})")]
    InsufficientSchedule { bound: f64, k_max: usize, reached: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Lift(#[from] LiftError),
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// Parses `p/q`, an integer, or a terminating decimal into an exact ratio.
pub fn parse_ratio(s: &str) -> Result<BigRational, BlockError> {
    let bad = || BlockError::InvalidParameter(format!("`{s}` is not a rational number"));
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p = BigInt::from_str(p.trim()).map_err(|_| bad())?;
        let q = BigInt::from_str(q.trim()).map_err(|_| bad())?;
        if q.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(p, q));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let digits = BigInt::from_str(&format!("{int}{frac}")).map_err(|_| bad())?;
        return Ok(BigRational::new(digits, BigInt::from(10u32).pow(frac.len() as u32)));
    }
    Ok(BigRational::from_integer(BigInt::from_str(s).map_err(|_| bad())?))
}

/// Exact value of a finite float.
pub fn exact(x: f64) -> Result<BigRational, BlockError> {
    BigRational::from_float(x).ok_or_else(|| BlockError::InvalidParameter(format!("{x} is not finite")))
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn log2_uint(n: &BigUint) -> f64 {
    let bits = n.bits();
    if bits <= 1000 {
        return n.to_f64().expect("fits").log2();
    }
    let shift = bits - 64;
    (n >> shift).to_f64().expect("fits").log2() + shift as f64
}

fn log2_ratio(r: &BigRational) -> f64 {
    log2_uint(r.numer().magnitude()) - log2_uint(r.denom().magnitude())
}

/// `⌈√n⌉`.
pub fn ceil_sqrt(n: &BigUint) -> BigUint {
    let s = n.sqrt();
    if &(&s * &s) < n {
        s + 1u32
    } else {
        s
    }
}

fn short(s: String) -> Option<String> {
    (s.len() <= MAX_EXACT_DIGITS).then_some(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub index: usize,
    pub center: [BigRational; 3],
    pub radius: BigRational,
}

impl Ball {
    pub fn center_f64(&self) -> Vec3 {
        Vec3::new(to_f64(&self.center[0]), to_f64(&self.center[1]), to_f64(&self.center[2]))
    }

    pub fn inside_unit_cube(&self) -> bool {
        self.center.iter().all(|c| c - &self.radius > BigRational::zero() && c + &self.radius < BigRational::one())
    }
}

/// `|c_a − c_b| > ρ_a + ρ_b`, exactly.
pub fn balls_disjoint(a: &Ball, b: &Ball) -> bool {
    let d2 = a.center.iter().zip(&b.center).fold(BigRational::zero(), |acc, (x, y)| {
        let d = x - y;
        acc + &d * &d
    });
    let r = &a.radius + &b.radius;
    d2 > &r * &r
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packing {
    pub rho0: BigRational,
    pub decay: BigRational,
    pub balls: Vec<Ball>,
}

/// Radii `ρ_j = ρ₀ d^{j−1}`, centers `(x_j, 2ρ_j, 2ρ_j)` marching from
/// `x₁ = 1 − 2ρ₁` towards the face `x = 0` with gaps `ρ_j + 2ρ_{j+1}`.
pub fn pack_balls(count: usize, rho0: &BigRational, decay: &BigRational) -> Result<Packing, BlockError> {
    validate_packing_params(count, rho0, decay)?;
    let two = BigRational::from_integer(2.into());
    let mut balls = Vec::with_capacity(count);
    let mut rho = rho0.clone();
    let mut x = BigRational::one() - &two * &rho;
    for index in 1..=count {
        let c = &two * &rho;
        balls.push(Ball { index, center: [x.clone(), c.clone(), c], radius: rho.clone() });
        let next = &rho * decay;
        x = x - &rho - &two * &next;
        rho = next;
    }
    verify_packing(&balls)?;
    Ok(Packing { rho0: rho0.clone(), decay: decay.clone(), balls })
}

fn validate_packing_params(count: usize, rho0: &BigRational, decay: &BigRational) -> Result<(), BlockError> {
    if count == 0 {
        return Err(BlockError::InvalidParameter("at least one block is required".into()));
    }
    if !(rho0.is_positive() && *rho0 <= BigRational::new(1.into(), 8.into())) {
        return Err(BlockError::InvalidParameter(format!("base radius {rho0} outside (0, 1/8]")));
    }
    let lo = BigRational::new(1.into(), 8.into());
    let hi = BigRational::new(1.into(), 2.into());
    if *decay < lo || *decay > hi {
        return Err(BlockError::InvalidParameter(format!(
            "decay factor {decay} outside [1/8, 1/2]; radii must shrink to zero"
        )));
    }
    Ok(())
}

/// Containment for every ball; disjoint x-projections along the march
/// (which implies pairwise disjointness); all pairs directly for small counts.
pub fn verify_packing(balls: &[Ball]) -> Result<(), BlockError> {
    for b in balls {
        if !b.inside_unit_cube() {
            return Err(BlockError::Escape { index: b.index });
        }
    }
    for w in balls.windows(2) {
        if &w[0].center[0] - &w[0].radius <= &w[1].center[0] + &w[1].radius {
            return Err(BlockError::Overlap { first: w[0].index, second: w[1].index });
        }
    }
    if balls.len() <= EXACT_PAIR_LIMIT {
        for (i, a) in balls.iter().enumerate() {
            for b in &balls[i + 1..] {
                if !balls_disjoint(a, b) {
                    return Err(BlockError::Overlap { first: a.index, second: b.index });
                }
            }
        }
    }
    Ok(())
}

/// The unit-turn stirring block inside the ball of radius `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalBlock {
    pub field: AmbientField,
    pub radius: f64,
    pub resolution: [usize; 2],
    pub normal_points: usize,
}

pub const CANONICAL_RADIUS: f64 = 4.0;

impl CanonicalBlock {
    pub fn new(field: &AmbientField, radius: f64, resolution: [usize; 2], normal_points: usize) -> Result<Self, BlockError> {
        let delta = field.chart().delta();
        let reach = field.chart().surface().bounding_radius() + delta;
        if !(radius >= reach) {
            return Err(BlockError::InvalidParameter(format!(
                "canonical radius {radius} does not contain the tube (needs >= {reach})"
            )));
        }
        if !(delta < radius / 2.0) {
            return Err(BlockError::InvalidParameter(format!("tube half-width {delta} must be below R/2")));
        }
        Ok(Self { field: field.with_turns(1), radius, resolution, normal_points })
    }

    pub fn measure(&self) -> Result<BlockConstants, BlockError> {
        let mesh = build_quadrature(self.field.chart().surface(), self.resolution)?;
        let js = surface_energy(self.field.tangent(), &mesh)?;
        let jt = tube_energy(&self.field, &TubeMesh::new(*self.field.chart(), self.resolution, self.normal_points)?)?;
        Ok(BlockConstants {
            radius: self.radius,
            delta: self.field.chart().delta(),
            ambient_dim: AMBIENT_DIM,
            surface_dim: SURFACE_DIM,
            surface_energy: js,
            ambient_energy: jt.energy,
            ambient_energy_ideal: jt.ideal_jacobian,
        })
    }

    /// Block `j` with its own scale and turn count, centered at the origin.
    pub fn placed(&self, lambda: f64, turns: u64) -> Result<AmbientField, BlockError> {
        Ok(self.field.scaled(lambda)?.with_turns(turns))
    }
}

/// Measured unit-turn quantities of the canonical block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockConstants {
    pub radius: f64,
    pub delta: f64,
    pub ambient_dim: u32,
    pub surface_dim: u32,
    pub surface_energy: f64,
    pub ambient_energy: f64,
    pub ambient_energy_ideal: f64,
}

impl BlockConstants {
    pub fn codim(&self) -> u32 {
        self.ambient_dim - self.surface_dim
    }

    /// `c = ½ δ^{n−m} J_surface(1)`.
    pub fn bound_constant(&self) -> f64 {
        0.5 * self.delta.powi(self.codim() as i32) * self.surface_energy
    }
}

/// Least `N ≥ 1` with `unit · N² ≥ target`.
pub fn choose_turns(index: usize, target: &BigRational, unit: &BigRational) -> Result<BigUint, BlockError> {
    if !target.is_positive() {
        return Ok(BigUint::one());
    }
    if !unit.is_positive() {
        return Err(BlockError::Unreachable { index, reason: format!("per-turn energy {unit} is not positive") });
    }
    let q = target / unit;
    let need = q.numer().magnitude().div_ceil(q.denom().magnitude());
    if need.bits() > 2 * MAX_TURN_BITS {
        return Err(BlockError::Unreachable { index, reason: format!("N would need about {} bits", need.bits() / 2) });
    }
    Ok(ceil_sqrt(&need).max(BigUint::one()))
}

/// `⌈j^{−1/2} ρ^{−2n} δ^{m−n}⌉`, computed as `⌈√⌈X²/j⌉⌉` with
/// `X = ρ^{−2n} δ^{m−n}` (for `m ≤ n`).
pub fn literal_turns(j: usize, rho: &BigRational, delta: &BigRational, n: u32, m: u32) -> BigUint {
    let x = rho.recip().pow(2 * n as i32) * delta.recip().pow((n - m) as i32);
    let x2j = &x * &x / BigRational::from_integer(BigInt::from(j));
    ceil_sqrt(&x2j.numer().magnitude().div_ceil(x2j.denom().magnitude()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleParams {
    pub rho0: BigRational,
    pub decay: BigRational,
    pub mode: ScalingMode,
    pub k_max: usize,
    /// Applied to every chosen `N(j)`.
    pub turn_multiplier: u64,
}

impl ScheduleParams {
    pub fn new(rho0: BigRational, decay: BigRational, mode: ScalingMode, k_max: usize) -> Result<Self, BlockError> {
        validate_packing_params(k_max.max(1), &rho0, &decay)?;
        Ok(Self { rho0, decay, mode, k_max, turn_multiplier: 1 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockEntry {
    pub index: usize,
    pub log2_radius: f64,
    pub log2_lambda: f64,
    pub log2_delta: f64,
    pub radius_exact: Option<String>,
    pub turns_bits: u64,
    pub log10_turns: f64,
    pub turns_exact: Option<String>,
    /// `L_j = λ_j^e c N(j)²`.
    pub lower_bound: f64,
    pub log10_literal_turns: f64,
    pub literal_turns_exact: Option<String>,
}

impl BlockEntry {
    pub fn turns_u64(&self) -> Option<u64> {
        self.turns_exact.as_deref().and_then(|s| s.parse().ok())
    }

    pub fn lambda(&self) -> f64 {
        self.log2_lambda.exp2()
    }
}

/// Blocks `1..=K` with exact turn choices and partial sums.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub params: ScheduleParams,
    pub constants: BlockConstants,
    pub entries: Vec<BlockEntry>,
    pub partial_sums: Vec<f64>,
    exact_terms: Vec<BigRational>,
    state: Builder,
}

#[derive(Debug, Clone, PartialEq)]
struct Builder {
    rho: BigRational,
    unit_num: BigUint,
    unit_den: BigUint,
    decay_pow_num: BigUint,
    decay_pow_den: BigUint,
    delta: BigRational,
    radius: BigRational,
}

/// Exact literal turn counts are computed up to this index.
const EXACT_LITERAL_LIMIT: usize = 24;

impl Schedule {
    pub fn new(params: ScheduleParams, constants: BlockConstants) -> Result<Self, BlockError> {
        let e = params.mode.exponent(constants.ambient_dim);
        let c = exact(constants.bound_constant())?;
        let radius = exact(constants.radius)?;
        let lambda1 = &params.rho0 / (BigRational::from_integer(2.into()) * &radius);
        let unit = lambda1.pow(e as i32) * &c;
        let dpow = params.decay.pow(e as i32);
        let state = Builder {
            rho: params.rho0.clone(),
            unit_num: unit.numer().magnitude().clone(),
            unit_den: unit.denom().magnitude().clone(),
            decay_pow_num: dpow.numer().magnitude().clone(),
            decay_pow_den: dpow.denom().magnitude().clone(),
            delta: exact(constants.delta)?,
            radius,
        };
        Ok(Self { params, constants, entries: vec![], partial_sums: vec![], exact_terms: vec![], state })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn exponent(&self) -> u32 {
        self.params.mode.exponent(self.constants.ambient_dim)
    }

    pub fn total(&self) -> f64 {
        self.partial_sums.last().copied().unwrap_or(0.0)
    }

    /// Appends block `K + 1` with per-block target `1/(K + 1)`.
    pub fn push(&mut self) -> Result<(), BlockError> {
        let j = self.entries.len() + 1;
        if j > self.params.k_max {
            return Err(BlockError::InvalidParameter(format!("schedule is capped at {} blocks", self.params.k_max)));
        }
        let st = &self.state;
        let jn = BigUint::from(j);
        let need = st.unit_den.div_ceil(&(&st.unit_num * &jn));
        if need.bits() > 2 * MAX_TURN_BITS {
            return Err(BlockError::Unreachable { index: j, reason: format!("N would need about {} bits", need.bits() / 2) });
        }
        let turns = ceil_sqrt(&need).max(BigUint::one()) * self.params.turn_multiplier;
        let term_num = &st.unit_num * &turns * &turns;
        let lower_bound = Ratio::new_raw(BigInt::from(term_num.clone()), BigInt::from(st.unit_den.clone()))
            .to_f64()
            .unwrap_or(f64::NAN);
        if j <= EXACT_SUM_LIMIT {
            self.exact_terms.push(BigRational::new(term_num.into(), st.unit_den.clone().into()));
        }

        let two_r = BigRational::from_integer(2.into()) * &st.radius;
        let lambda = &st.rho / &two_r;
        let log2_lambda = log2_ratio(&lambda);
        let n = self.constants.ambient_dim;
        let m = self.constants.surface_dim;
        let (log10_literal_turns, literal_turns_exact) = if j <= EXACT_LITERAL_LIMIT {
            let lit = literal_turns(j, &st.rho, &(&lambda * &st.delta), n, m);
            (log2_uint(&lit) * std::f64::consts::LOG10_2, short(lit.to_string()))
        } else {
            let log2_delta_j = log2_lambda + st.delta.to_f64().expect("finite").log2();
            let l2 = -((2 * n) as f64) * log2_ratio(&st.rho) - (n - m) as f64 * log2_delta_j - 0.5 * (j as f64).log2();
            (l2 * std::f64::consts::LOG10_2, None)
        };
        let entry = BlockEntry {
            index: j,
            log2_radius: log2_ratio(&st.rho),
            log2_lambda,
            log2_delta: log2_lambda + st.delta.to_f64().expect("finite").log2(),
            radius_exact: short(st.rho.to_string()),
            turns_bits: turns.bits(),
            log10_turns: log2_uint(&turns) * std::f64::consts::LOG10_2,
            turns_exact: short(turns.to_string()),
            lower_bound,
            log10_literal_turns,
            literal_turns_exact,
        };
        let prev = self.total();
        self.partial_sums.push(prev + lower_bound);
        self.entries.push(entry);

        let st = &mut self.state;
        st.rho = &st.rho * &self.params.decay;
        st.unit_num *= &st.decay_pow_num;
        st.unit_den *= &st.decay_pow_den;
        Ok(())
    }

    pub fn extend_to(&mut self, count: usize) -> Result<(), BlockError> {
        while self.entries.len() < count {
            self.push()?;
        }
        Ok(())
    }

    /// Exact `S_K` for `K ≤ EXACT_SUM_LIMIT`.
    pub fn exact_partial_sum(&self, k: usize) -> Option<BigRational> {
        (k <= self.exact_terms.len()).then(|| self.exact_terms[..k].iter().fold(BigRational::zero(), |a, t| a + t))
    }

    /// A bound on `|S_K(f64) − S_K|`: each term and each addition is
    /// correctly rounded.
    pub fn rounding_bound(&self, k: usize) -> f64 {
        let s = self.partial_sums.get(k.wrapping_sub(1)).copied().unwrap_or(0.0);
        2.0 * (k as f64 + 1.0) * f64::EPSILON * s
    }
}

pub fn build_schedule(params: ScheduleParams, constants: BlockConstants, count: usize) -> Result<Schedule, BlockError> {
    let mut s = Schedule::new(params, constants)?;
    s.extend_to(count)?;
    Ok(s)
}

/// `L_j` recomputed from the scaling law for arbitrary `N`.
pub fn block_lower_bound(constants: &BlockConstants, mode: ScalingMode, lambda: f64, turns: f64) -> f64 {
    lambda.powi(mode.exponent(constants.ambient_dim) as i32) * constants.bound_constant() * turns * turns
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verification {
    Exact,
    RoundingBounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub bound: f64,
    pub k: usize,
    pub partial_sum: f64,
    pub previous_sum: f64,
    pub verification: Verification,
    /// `S_{K−1} < B` could be certified.
    pub minimal: bool,
}

fn find_witness(schedule: &Schedule, bound: f64) -> Option<Witness> {
    let k = schedule.partial_sums.iter().position(|&s| s - schedule.rounding_bound(schedule.len()) >= bound)? + 1;
    let mut k = k;
    while k > 1 && schedule.partial_sums[k - 2] >= bound {
        k -= 1;
    }
    let previous_sum = if k >= 2 { schedule.partial_sums[k - 2] } else { 0.0 };
    let exact_b = exact(bound).ok()?;
    match (schedule.exact_partial_sum(k), schedule.exact_partial_sum(k - 1)) {
        (Some(sk), Some(sprev)) => {
            // rounding may put the f64 crossing one block off
            let mut k = k;
            let mut sk = sk;
            let mut sprev = sprev;
            while sprev >= exact_b && k > 1 {
                k -= 1;
                sk = sprev;
                sprev = schedule.exact_partial_sum(k - 1)?;
            }
            while sk < exact_b {
                k += 1;
                sprev = sk;
                sk = schedule.exact_partial_sum(k)?;
            }
            Some(Witness {
                bound,
                k,
                partial_sum: schedule.partial_sums[k - 1],
                previous_sum: if k >= 2 { schedule.partial_sums[k - 2] } else { 0.0 },
                verification: Verification::Exact,
                minimal: sprev < exact_b,
            })
        }
        _ => {
            let err = schedule.rounding_bound(k);
            Some(Witness {
                bound,
                k,
                partial_sum: schedule.partial_sums[k - 1],
                previous_sum,
                verification: Verification::RoundingBounded,
                minimal: previous_sum + err < bound,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialSum {
    pub k: usize,
    pub sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub index: usize,
    pub lambda: f64,
    pub turns: u64,
    pub direct_energy: f64,
    pub lower_bound: f64,
    pub ratio: f64,
    /// `L_j ≤ J_block ≤ 10 L_j`.
    pub pass: bool,
}

/// Direct tube quadrature of the first `count` blocks, each rebuilt at its
/// own scale and turn count.
pub fn audit_prefix(canonical: &CanonicalBlock, schedule: &Schedule, count: usize) -> Result<Vec<AuditEntry>, BlockError> {
    schedule.entries.iter().take(count).map(|e| audit_block(canonical, schedule, e)).collect()
}

fn audit_block(canonical: &CanonicalBlock, _schedule: &Schedule, e: &BlockEntry) -> Result<AuditEntry, BlockError> {
    let turns = e.turns_u64().ok_or_else(|| BlockError::InvalidParameter(format!("block {} has too many turns to audit", e.index)))?;
    let lambda = e.lambda();
    let field = canonical.placed(lambda, turns)?;
    let mesh = TubeMesh::new(*field.chart(), canonical.resolution, canonical.normal_points)?;
    let direct = tube_energy(&field, &mesh)?.energy;
    let ratio = direct / e.lower_bound;
    Ok(AuditEntry {
        index: e.index,
        lambda,
        turns,
        direct_energy: direct,
        lower_bound: e.lower_bound,
        ratio,
        pass: (1.0..=10.0).contains(&ratio),
    })
}

/// A point of the canonical stirring plateau on the surface.
pub fn plateau_tracer(canonical: &CanonicalBlock) -> [f64; 2] {
    let t = canonical.field.tangent();
    let band = t.stream().band();
    let axes = t.surface().axes();
    let b = match band.profile {
        BandProfile::Plateau { center, .. } => center,
        BandProfile::Rigid => axes[band.axis].start() + 0.5 * axes[band.axis].extent(),
    };
    let flow = band.flow_axis();
    let mut p = [0.0; 2];
    p[band.axis] = b;
    p[flow] = axes[flow].start() + 0.25 * axes[flow].extent();
    p
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotionSummary {
    /// Unit-turn canonical block, integrated directly.
    pub unit: NeverStops,
    /// `log₂` of the lift-rate margin of block `j`, `N(j) ·` the unit margin.
    pub log2_margins: Vec<f64>,
    /// Block 1 integrated directly over one canonical-time window `[0, 1/N(1)]`.
    pub direct_window: Option<NeverStops>,
    pub all_positive: bool,
}

/// Lift-rate margins for every block. Block `j` is the `λ_j`-homothety of the
/// canonical flow sped up by `N(j)`; chart angles are homothety invariant.
pub fn block_motion(canonical: &CanonicalBlock, schedule: &Schedule, steps_per_turn: usize) -> Result<MotionSummary, BlockError> {
    let tracer = plateau_tracer(canonical);
    let chart = *canonical.field.chart();
    let x0 = chart.map(tracer[0], tracer[1], 0.0)?;
    let band = canonical.field.tangent().stream().band();
    let f = AmbientCircleMap { chart, map: CircleMap::basis(chart.surface(), band.flow_axis())? };
    let cfg = Integration::for_turns(1, steps_per_turn)?;
    let iso = integrate_isotopy(&canonical.field, &[[x0.x, x0.y, x0.z]], &cfg)?;
    let unit = never_stops(&iso, &f, 0)?;

    let direct_window = match schedule.entries.first().and_then(|e| e.turns_u64().map(|n| (e, n))) {
        Some((e, n)) => {
            let field = canonical.placed(e.lambda(), n)?;
            let ch = *field.chart();
            let y0 = ch.map(tracer[0], tracer[1], 0.0)?;
            let g = AmbientCircleMap { chart: ch, map: CircleMap::basis(ch.surface(), band.flow_axis())? };
            let w = Integration::unit_time(cfg.steps).over(0.0, 1.0 / n as f64);
            let iso = integrate_isotopy(&field, &[[y0.x, y0.y, y0.z]], &w)?;
            Some(never_stops(&iso, &g, 0)?)
        }
        None => None,
    };
    let log2_margins: Vec<f64> = if unit.margin > 0.0 {
        schedule.entries.iter().map(|e| e.log10_turns / std::f64::consts::LOG10_2 + unit.margin.log2()).collect()
    } else {
        vec![f64::NEG_INFINITY; schedule.len()]
    };
    let all_positive =
        unit.never_stops && log2_margins.iter().all(|m| m.is_finite()) && direct_window.is_none_or(|w| w.never_stops);
    Ok(MotionSummary { unit, log2_margins, direct_window, all_positive })
}

/// Disjoint homothetic blocks placed in their balls.
#[derive(Debug, Clone)]
pub struct GluedField {
    pub blocks: Vec<PlacedBlock>,
}

#[derive(Debug, Clone)]
pub struct PlacedBlock {
    pub index: usize,
    pub center: Vec3,
    pub radius: f64,
    pub field: AmbientField,
}

pub fn glue(canonical: &CanonicalBlock, packing: &Packing, schedule: &Schedule, count: usize) -> Result<GluedField, BlockError> {
    let blocks = packing
        .balls
        .iter()
        .zip(&schedule.entries)
        .take(count)
        .map(|(b, e)| {
            let turns = e.turns_u64().ok_or_else(|| {
                BlockError::InvalidParameter(format!("block {} has too many turns to evaluate in f64", e.index))
            })?;
            Ok(PlacedBlock {
                index: b.index,
                center: b.center_f64(),
                radius: to_f64(&b.radius),
                field: canonical.placed(e.lambda(), turns)?,
            })
        })
        .collect::<Result<_, BlockError>>()?;
    Ok(GluedField { blocks })
}

impl GluedField {
    pub fn velocity(&self, x: &Vec3) -> Result<Vec3, FieldError> {
        for b in &self.blocks {
            let y = x - b.center;
            if y.norm() < b.radius {
                return b.field.velocity(&y);
            }
        }
        Ok(Vec3::zeros())
    }

    /// Samples uniform points of the cube and of each ball; a nonzero value
    /// must lie within `3δ_j/4` of block `j`'s surface and inside `¾ B_j`.
    pub fn check_support(&self, samples: usize, seed: u64) -> Result<SupportCheck, FieldError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut check = SupportCheck { samples: 0, nonzero: 0, violations: 0 };
        let test = |x: Vec3, check: &mut SupportCheck| -> Result<(), FieldError> {
            check.samples += 1;
            if self.velocity(&x)?.norm() == 0.0 {
                return Ok(());
            }
            check.nonzero += 1;
            let ok = self.blocks.iter().any(|b| {
                let y = x - b.center;
                let d = b.field.chart().delta();
                y.norm() < 0.75 * b.radius
                    && b.field.chart().locate(&y).is_some_and(|p| p.s.abs() < 0.75 * d)
            });
            if !ok {
                check.violations += 1;
            }
            Ok(())
        };
        for _ in 0..samples {
            let x = Vec3::new(rng.random(), rng.random(), rng.random());
            test(x, &mut check)?;
        }
        for b in &self.blocks {
            for _ in 0..samples {
                let dir = Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                let x = b.center + dir * (2.0 * b.radius);
                test(x, &mut check)?;
            }
        }
        Ok(check)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SupportCheck {
    pub samples: usize,
    pub nonzero: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceCertificate {
    pub schema: String,
    pub tool_version: String,
    pub config_hash: String,
    pub exponent_mode: ScalingMode,
    pub exponent: u32,
    pub rho0: String,
    pub decay: String,
    pub turn_multiplier: u64,
    pub constants: BlockConstants,
    pub bound_constant: f64,
    pub blocks: Vec<BlockEntry>,
    pub partial_sums: Vec<PartialSum>,
    pub witnesses: Vec<Witness>,
    pub audit: Vec<AuditEntry>,
    pub motion: Option<MotionSummary>,
    pub notes: Vec<String>,
}

#[derive(Serialize)]
struct HashInput<'a> {
    rho0: String,
    decay: String,
    mode: ScalingMode,
    k_max: usize,
    turn_multiplier: u64,
    constants: &'a BlockConstants,
    bounds: &'a [f64],
}

/// SHA-256 of the canonical JSON of the schedule configuration.
pub fn config_hash(params: &ScheduleParams, constants: &BlockConstants, bounds: &[f64]) -> Result<String, BlockError> {
    let input = HashInput {
        rho0: params.rho0.to_string(),
        decay: params.decay.to_string(),
        mode: params.mode,
        k_max: params.k_max,
        turn_multiplier: params.turn_multiplier,
        constants,
        bounds,
    };
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&input)?)))
}

/// Extends the schedule until every bound is reached and records the
/// minimal witnesses.
pub fn certify_divergence(
    params: ScheduleParams,
    constants: BlockConstants,
    bounds: &[f64],
) -> Result<(DivergenceCertificate, Schedule), BlockError> {
    if bounds.iter().any(|b| !b.is_finite()) {
        return Err(BlockError::InvalidParameter("bounds must be finite".into()));
    }
    let top = bounds.iter().copied().fold(0.0, f64::max);
    let mut schedule = Schedule::new(params.clone(), constants)?;
    schedule.push()?;
    while schedule.total() - schedule.rounding_bound(schedule.len()) < top {
        if schedule.len() >= params.k_max {
            return Err(BlockError::InsufficientSchedule { bound: top, k_max: params.k_max, reached: schedule.total() });
        }
        schedule.push()?;
    }
    // room for the exact witness search to step one block past the f64 crossing
    if schedule.len() < params.k_max && schedule.len() < EXACT_SUM_LIMIT {
        schedule.push()?;
    }
    let witnesses = bounds
        .iter()
        .map(|&b| {
            find_witness(&schedule, b).ok_or(BlockError::InsufficientSchedule {
                bound: b,
                k_max: params.k_max,
                reached: schedule.total(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cert = DivergenceCertificate {
        schema: SCHEMA.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(&params, &constants, bounds)?,
        exponent_mode: params.mode,
        exponent: schedule.exponent(),
        rho0: params.rho0.to_string(),
        decay: params.decay.to_string(),
        turn_multiplier: params.turn_multiplier,
        constants,
        bound_constant: constants.bound_constant(),
        blocks: schedule.entries.clone(),
        partial_sums: schedule.partial_sums.iter().enumerate().map(|(i, &s)| PartialSum { k: i + 1, sum: s }).collect(),
        witnesses,
        audit: vec![],
        motion: None,
        notes: vec![
            "per-block target 1/j: every certified term satisfies L_j >= 1/j exactly, so S_K >= H_K".into(),
            "blocks beyond the audited prefix are certified by the homothety law".into(),
            "the finite-energy companion isotopy is not constructed; its existence is cited from \
             Shnirelman's attainability theorem (every element of SDiff of the cube is attainable when n >= 3)"
                .into(),
        ],
    };
    Ok((cert, schedule))
}

impl DivergenceCertificate {
    pub fn to_json(&self) -> Result<String, BlockError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Every witness reaches its bound and the partial sums never decrease.
    pub fn is_consistent(&self) -> bool {
        let monotone = self.partial_sums.windows(2).all(|w| w[1].sum >= w[0].sum);
        let reached = self.witnesses.iter().all(|w| w.partial_sum >= w.bound);
        let audited = self.audit.iter().all(|a| a.pass);
        let moving = self.motion.as_ref().is_none_or(|m| m.all_positive);
        monotone && reached && audited && moving
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> BigRational {
        parse_ratio(s).unwrap()
    }

    #[test]
    fn parses_fractions_and_decimals() {
        assert_eq!(q("1/8"), BigRational::new(1.into(), 8.into()));
        assert_eq!(q("0.125"), q("1/8"));
        assert_eq!(q("3"), BigRational::from_integer(3.into()));
        assert!(parse_ratio("1/0").is_err());
        assert!(parse_ratio("x").is_err());
    }

    #[test]
    fn three_ball_packing() {
        let p = pack_balls(3, &q("1/8"), &q("1/4")).unwrap();
        let r: Vec<_> = p.balls.iter().map(|b| b.radius.clone()).collect();
        assert_eq!(r, vec![q("1/8"), q("1/32"), q("1/128")]);
        assert!(balls_disjoint(&p.balls[0], &p.balls[1]));
    }

    #[test]
    fn constant_radii_rejected() {
        assert!(pack_balls(3, &q("1/8"), &q("1")).is_err());
        assert!(pack_balls(3, &q("1/4"), &q("1/2")).is_err());
    }

    #[test]
    fn zero_target_gives_one_turn() {
        assert_eq!(choose_turns(1, &BigRational::zero(), &q("1/32")).unwrap(), BigUint::one());
    }

    #[test]
    fn least_turn_count() {
        assert_eq!(choose_turns(1, &q("1"), &q("1/32")).unwrap(), BigUint::from(6u32));
        assert_eq!(choose_turns(1, &q("1"), &q("1/36")).unwrap(), BigUint::from(6u32));
        assert_eq!(choose_turns(1, &q("1"), &q("1/37")).unwrap(), BigUint::from(7u32));
    }

    #[test]
    fn literal_formula_example() {
        let n = literal_turns(1, &q("1/4"), &q("1/32"), 3, 2);
        assert_eq!(n, BigUint::from(131072u32));
        // j = 2 divides by √2 before the ceiling
        let n2 = literal_turns(2, &q("1/4"), &q("1/32"), 3, 2);
        assert_eq!(n2, BigUint::from(92682u32));
    }

    #[test]
    fn ceil_sqrt_edges() {
        for (n, r) in [(0u32, 0u32), (1, 1), (2, 2), (4, 2), (5, 3), (9, 3), (10, 4)] {
            assert_eq!(ceil_sqrt(&BigUint::from(n)), BigUint::from(r));
        }
    }
}
