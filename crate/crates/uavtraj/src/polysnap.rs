//! Minimum-snap trajectory planning through timed waypoints.
//!
//! A flight plan is a sequence of [`Waypoint`]s (3D position plus yaw) visited
//! at the knots of a [`SegmentedTimeline`]. Between consecutive waypoints each
//! of the four flat-output channels (x, y, z, yaw) is an order-`n` polynomial
//! in *normalized segment time* τ = (t − t_j) / T_j ∈ [0, 1]; working in τ
//! keeps the monomial basis well conditioned for long segments, with all
//! duration scaling folded into the cost and constraint rows.
//!
//! The planner minimizes the integral of the squared 4th position derivative
//! (snap) and squared 2nd yaw derivative, subject to equality constraints:
//! waypoint interpolation at every knot, continuity of derivatives 1..k−1 at
//! interior knots, and rest-to-rest boundaries (derivatives 1..k−1 zero at
//! both ends). That is an equality-constrained QP; [`solve_min_snap`] solves
//! its KKT system with a dense full-pivoting factorization.

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

/// Flat-output channels: x, y, z, yaw.
pub const FLAT_CHANNELS: usize = 4;

/// Index of the yaw channel among the flat outputs.
pub const YAW_CHANNEL: usize = 3;

#[derive(Debug, Error)]
pub enum PolysnapError {
    #[error("waypoint position components must be finite")]
    NonFinitePosition,
    #[error("yaw {0} is outside [-pi, pi]")]
    YawOutOfRange(f64),
    #[error("need at least two waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("speed must be positive, got {0}")]
    NonPositiveSpeed(f64),
    #[error("waypoints {0} and {1} coincide (distance below 1e-9 m)")]
    ZeroLengthSegment(usize, usize),
    #[error("knots must be finite and strictly increasing")]
    NonIncreasingKnots,
    #[error("timeline has {segments} segments but {waypoints} waypoints were given")]
    TimelineMismatch { segments: usize, waypoints: usize },
    #[error("polynomial order {order} cannot satisfy the per-segment constraints (need at least {min})")]
    InsufficientOrder { order: usize, min: usize },
    #[error("KKT system is numerically singular (condition estimate {0:.3e})")]
    SingularKkt(f64),
    #[error("time {t} is outside the trajectory domain [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },
}

/// A position in space along with a yaw angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub position: Vector3<f64>,
    pub yaw: f64,
}

impl Waypoint {
    pub fn new(position: Vector3<f64>, yaw: f64) -> Result<Self, PolysnapError> {
        if !position.iter().all(|v| v.is_finite()) {
            return Err(PolysnapError::NonFinitePosition);
        }
        if !yaw.is_finite() || !(-std::f64::consts::PI..=std::f64::consts::PI).contains(&yaw) {
            return Err(PolysnapError::YawOutOfRange(yaw));
        }
        Ok(Self { position, yaw })
    }

    /// Waypoint at `(x, y, z)` with zero yaw.
    pub fn at(x: f64, y: f64, z: f64) -> Self {
        assert!(
            x.is_finite() && y.is_finite() && z.is_finite(),
            "waypoint coordinates must be finite"
        );
        Self {
            position: Vector3::new(x, y, z),
            yaw: 0.0,
        }
    }

    /// Value of flat-output channel `c` (0..=2 position, 3 yaw).
    pub fn channel(&self, c: usize) -> f64 {
        if c == YAW_CHANNEL {
            self.yaw
        } else {
            self.position[c]
        }
    }
}

/// Strictly increasing knot times t_0 < t_1 < … < t_m bounding m segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedTimeline {
    knots: Vec<f64>,
}

impl SegmentedTimeline {
    pub fn new(knots: Vec<f64>) -> Result<Self, PolysnapError> {
        if knots.len() < 2
            || knots.iter().any(|k| !k.is_finite())
            || knots.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(PolysnapError::NonIncreasingKnots);
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn segments(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn duration(&self, segment: usize) -> f64 {
        self.knots[segment + 1] - self.knots[segment]
    }

    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    pub fn end(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn total(&self) -> f64 {
        self.end() - self.start()
    }

    /// Timeline with every segment duration multiplied by `factor`,
    /// anchored at the same start time.
    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor > 0.0 && factor.is_finite());
        let start = self.start();
        Self {
            knots: self.knots.iter().map(|k| start + (k - start) * factor).collect(),
        }
    }

    /// Segment that owns time `t`. Knots belong to the segment on their left,
    /// except the start knot which belongs to segment 0.
    pub fn segment_of(&self, t: f64) -> Result<usize, PolysnapError> {
        if !(t >= self.start() && t <= self.end()) {
            return Err(PolysnapError::OutOfDomain {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        if t == self.start() {
            return Ok(0);
        }
        Ok(self.knots.partition_point(|&k| k < t) - 1)
    }
}

/// Cost/constraint configuration for the minimum-snap problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinSnapConfig {
    /// Polynomial order n per segment (n + 1 coefficients).
    pub order: usize,
    /// Derivative order minimized for the position channels (snap = 4).
    /// Continuity and rest boundary conditions cover orders 1..k−1.
    pub position_smoothness: usize,
    /// Derivative order minimized for the yaw channel.
    pub yaw_smoothness: usize,
    /// Cost weight on the position integrand.
    pub position_weight: f64,
    /// Cost weight on the yaw integrand.
    pub yaw_weight: f64,
}

impl Default for MinSnapConfig {
    fn default() -> Self {
        Self {
            order: 7,
            position_smoothness: 4,
            yaw_smoothness: 2,
            position_weight: 1.0,
            yaw_weight: 1.0,
        }
    }
}

impl MinSnapConfig {
    fn smoothness(&self, channel: usize) -> usize {
        if channel == YAW_CHANNEL {
            self.yaw_smoothness
        } else {
            self.position_smoothness
        }
    }

    fn weight(&self, channel: usize) -> f64 {
        if channel == YAW_CHANNEL {
            self.yaw_weight
        } else {
            self.position_weight
        }
    }

    fn min_order(&self) -> usize {
        2 * self.position_smoothness.max(self.yaw_smoothness) - 1
    }
}

/// The assembled quadratic program `min cᵀ Q c + fᵀ c  s.t.  A c = b`.
///
/// Decision vector layout: segment-major, then channel, then ascending
/// monomial power, i.e. index `((seg · 4) + channel) · (n + 1) + power`,
/// with polynomials expressed over normalized segment time.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSystem {
    /// Symmetric positive semidefinite cost matrix Q.
    pub cost: DMatrix<f64>,
    /// Linear cost term f (identically zero for this problem family).
    pub linear: DVector<f64>,
    /// Equality constraint matrix A.
    pub constraints: DMatrix<f64>,
    /// Equality right-hand side b.
    pub rhs: DVector<f64>,
    order: usize,
    segments: usize,
}

impl QpSystem {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn decision_len(&self) -> usize {
        self.cost.nrows()
    }

    pub fn constraint_len(&self) -> usize {
        self.constraints.nrows()
    }

    /// Column of the decision variable for (segment, channel, power).
    pub fn index(&self, segment: usize, channel: usize, power: usize) -> usize {
        coeff_index(self.order, segment, channel, power)
    }
}

fn coeff_index(order: usize, segment: usize, channel: usize, power: usize) -> usize {
    (segment * FLAT_CHANNELS + channel) * (order + 1) + power
}

/// i! / (i − r)!, the coefficient picked up by differentiating τ^i r times.
fn falling_factorial(i: usize, r: usize) -> f64 {
    if i < r {
        return 0.0;
    }
    ((i - r + 1)..=i).map(|v| v as f64).product()
}

/// Gram matrix of the k-th derivative over τ ∈ [0, 1]:
/// H[i][j] = ∫₀¹ (d^k τ^i / dτ^k)(d^k τ^j / dτ^k) dτ.
fn derivative_gram(order: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(order + 1, order + 1, |i, j| {
        if i < k || j < k {
            0.0
        } else {
            falling_factorial(i, k) * falling_factorial(j, k) / (i + j - 2 * k + 1) as f64
        }
    })
}

/// Row of r-th derivative monomial values at τ: w_i = (i!/(i−r)!) τ^{i−r}.
fn derivative_row(order: usize, r: usize, tau: f64) -> Vec<f64> {
    (0..=order)
        .map(|i| {
            if i < r {
                0.0
            } else {
                falling_factorial(i, r) * tau.powi((i - r) as i32)
            }
        })
        .collect()
}

/// Travel times from Euclidean waypoint distances at a constant speed.
/// The returned timeline starts at t = 0.
pub fn allocate_times(
    waypoints: &[Waypoint],
    speed: f64,
) -> Result<SegmentedTimeline, PolysnapError> {
    if waypoints.len() < 2 {
        return Err(PolysnapError::TooFewWaypoints(waypoints.len()));
    }
    if !speed.is_finite() || speed <= 0.0 {
        return Err(PolysnapError::NonPositiveSpeed(speed));
    }
    let mut knots = Vec::with_capacity(waypoints.len());
    knots.push(0.0);
    for (j, pair) in waypoints.windows(2).enumerate() {
        let dist = (pair[1].position - pair[0].position).norm();
        if dist < 1e-9 {
            return Err(PolysnapError::ZeroLengthSegment(j, j + 1));
        }
        knots.push(knots[j] + dist / speed);
    }
    SegmentedTimeline::new(knots)
}

/// Assemble the cost matrix and equality constraints for the waypoint plan.
pub fn build_qp(
    waypoints: &[Waypoint],
    timeline: &SegmentedTimeline,
    config: &MinSnapConfig,
) -> Result<QpSystem, PolysnapError> {
    if waypoints.len() < 2 {
        return Err(PolysnapError::TooFewWaypoints(waypoints.len()));
    }
    if timeline.segments() + 1 != waypoints.len() {
        return Err(PolysnapError::TimelineMismatch {
            segments: timeline.segments(),
            waypoints: waypoints.len(),
        });
    }
    if config.order < config.min_order() {
        return Err(PolysnapError::InsufficientOrder {
            order: config.order,
            min: config.min_order(),
        });
    }

    let n = config.order;
    let m = timeline.segments();
    let d = FLAT_CHANNELS * (n + 1) * m;

    let mut cost = DMatrix::zeros(d, d);
    for channel in 0..FLAT_CHANNELS {
        let k = config.smoothness(channel);
        let weight = config.weight(channel);
        let gram = derivative_gram(n, k);
        for seg in 0..m {
            // ∫ over real time of the squared k-th time derivative of a
            // normalized-time polynomial picks up T^(1-2k).
            let scale = weight * timeline.duration(seg).powi(1 - 2 * k as i32);
            let base = coeff_index(n, seg, channel, 0);
            for i in 0..=n {
                for j in 0..=n {
                    cost[(base + i, base + j)] = scale * gram[(i, j)];
                }
            }
        }
    }

    // Constraint rows per channel: waypoint values at both ends of every
    // segment, derivative continuity at interior knots, rest boundaries.
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for channel in 0..FLAT_CHANNELS {
        let k = config.smoothness(channel);
        for seg in 0..m {
            let value_row = derivative_row(n, 0, 0.0);
            rows.push((
                sparse_row(n, seg, channel, &value_row, 1.0),
                waypoints[seg].channel(channel),
            ));
            let value_row = derivative_row(n, 0, 1.0);
            rows.push((
                sparse_row(n, seg, channel, &value_row, 1.0),
                waypoints[seg + 1].channel(channel),
            ));
        }
        for knot in 1..m {
            let (left, right) = (knot - 1, knot);
            for r in 1..k {
                let mut entries = sparse_row(
                    n,
                    left,
                    channel,
                    &derivative_row(n, r, 1.0),
                    timeline.duration(left).powi(-(r as i32)),
                );
                entries.extend(sparse_row(
                    n,
                    right,
                    channel,
                    &derivative_row(n, r, 0.0),
                    -timeline.duration(right).powi(-(r as i32)),
                ));
                rows.push((entries, 0.0));
            }
        }
        for r in 1..k {
            rows.push((
                sparse_row(
                    n,
                    0,
                    channel,
                    &derivative_row(n, r, 0.0),
                    timeline.duration(0).powi(-(r as i32)),
                ),
                0.0,
            ));
            rows.push((
                sparse_row(
                    n,
                    m - 1,
                    channel,
                    &derivative_row(n, r, 1.0),
                    timeline.duration(m - 1).powi(-(r as i32)),
                ),
                0.0,
            ));
        }
    }

    let e = rows.len();
    let mut constraints = DMatrix::zeros(e, d);
    let mut rhs = DVector::zeros(e);
    for (row, (entries, b)) in rows.iter().enumerate() {
        for &(col, v) in entries {
            constraints[(row, col)] += v;
        }
        rhs[row] = *b;
    }

    Ok(QpSystem {
        cost,
        linear: DVector::zeros(d),
        constraints,
        rhs,
        order: n,
        segments: m,
    })
}

fn sparse_row(
    order: usize,
    seg: usize,
    channel: usize,
    weights: &[f64],
    scale: f64,
) -> Vec<(usize, f64)> {
    weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(power, w)| (coeff_index(order, seg, channel, power), w * scale))
        .collect()
}

/// Solve the equality-constrained QP through its KKT system
/// `[[2Q, Aᵀ], [A, 0]] [c; λ] = [0; b]`.
///
/// The raw KKT matrix mixes the per-segment duration scalings T^(1−2k), so
/// its entries can span fifteen orders of magnitude on legitimate problems.
/// A symmetric equilibration pass removes that scaling before the dense
/// full-pivoting factorization; the singularity estimate is taken on the
/// equilibrated matrix, where it reflects actual solvability rather than
/// unit mismatch.
pub fn solve_qp(qp: &QpSystem) -> Result<DVector<f64>, PolysnapError> {
    let d = qp.decision_len();
    let e = qp.constraint_len();
    let n = d + e;
    let mut kkt = DMatrix::zeros(n, n);
    kkt.view_mut((0, 0), (d, d)).copy_from(&(2.0 * &qp.cost));
    kkt.view_mut((0, d), (d, e)).copy_from(&qp.constraints.transpose());
    kkt.view_mut((d, 0), (e, d)).copy_from(&qp.constraints);
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(d, e).copy_from(&qp.rhs);

    let scale = DVector::from_fn(n, |i, _| {
        let row_max = kkt.row(i).amax();
        if row_max > 0.0 {
            1.0 / row_max.sqrt()
        } else {
            1.0
        }
    });
    let scaled = DMatrix::from_fn(n, n, |i, j| scale[i] * kkt[(i, j)] * scale[j]);
    let scaled_rhs = rhs.component_mul(&scale);

    let lu = scaled.clone().full_piv_lu();
    let diag = lu.u().diagonal().map(|v| v.abs());
    let (max_d, min_d) = (diag.max(), diag.min());
    let cond = if min_d > 0.0 { max_d / min_d } else { f64::INFINITY };
    if cond > 1e14 {
        return Err(PolysnapError::SingularKkt(cond));
    }
    let mut solution = lu.solve(&scaled_rhs).ok_or(PolysnapError::SingularKkt(cond))?;

    // One step of iterative refinement in the scaled system.
    let correction = lu.solve(&(&scaled_rhs - &scaled * &solution));
    if let Some(correction) = correction {
        solution += correction;
    }

    let coeffs = DVector::from_fn(d, |i, _| solution[i] * scale[i]);
    let residual = (&qp.constraints * &coeffs - &qp.rhs).amax();
    if !residual.is_finite() || residual > 1e-6 * (1.0 + qp.rhs.amax()) {
        return Err(PolysnapError::SingularKkt(cond));
    }
    Ok(coeffs)
}

/// Build and solve the minimum-snap problem for a timed waypoint plan.
pub fn solve_min_snap(
    waypoints: &[Waypoint],
    timeline: &SegmentedTimeline,
    config: &MinSnapConfig,
) -> Result<PiecewiseTrajectory, PolysnapError> {
    let qp = build_qp(waypoints, timeline, config)?;
    let coefficients = solve_qp(&qp)?;
    Ok(PiecewiseTrajectory {
        timeline: timeline.clone(),
        config: *config,
        coefficients,
    })
}

/// A solved piecewise-polynomial trajectory over all four flat-output
/// channels, with coefficients in normalized segment time.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseTrajectory {
    timeline: SegmentedTimeline,
    config: MinSnapConfig,
    coefficients: DVector<f64>,
}

impl PiecewiseTrajectory {
    /// Wrap an explicit coefficient vector (layout as in [`QpSystem`]).
    pub fn from_coefficients(
        timeline: SegmentedTimeline,
        config: MinSnapConfig,
        coefficients: DVector<f64>,
    ) -> Result<Self, PolysnapError> {
        let expected = FLAT_CHANNELS * (config.order + 1) * timeline.segments();
        if coefficients.len() != expected {
            return Err(PolysnapError::TimelineMismatch {
                segments: timeline.segments(),
                waypoints: coefficients.len(),
            });
        }
        Ok(Self {
            timeline,
            config,
            coefficients,
        })
    }

    pub fn timeline(&self) -> &SegmentedTimeline {
        &self.timeline
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    pub fn config(&self) -> &MinSnapConfig {
        &self.config
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    /// Coefficients of one segment/channel polynomial, ascending power.
    pub fn segment_coefficients(&self, segment: usize, channel: usize) -> &[f64] {
        let n = self.config.order;
        let base = coeff_index(n, segment, channel, 0);
        &self.coefficients.as_slice()[base..base + n + 1]
    }

    /// Evaluate the `derivative`-th time derivative of all four channels at
    /// `t`. Knots are owned by the segment on their left (except the start).
    /// Derivative orders above the polynomial order yield zeros.
    pub fn evaluate(&self, t: f64, derivative: usize) -> Result<[f64; FLAT_CHANNELS], PolysnapError> {
        let segment = self.timeline.segment_of(t)?;
        Ok(self.evaluate_in_segment(segment, t, derivative))
    }

    /// Evaluate within a specific segment, extrapolating its polynomial if
    /// `t` lies outside. Used for knot-continuity checks from both sides.
    pub fn evaluate_in_segment(
        &self,
        segment: usize,
        t: f64,
        derivative: usize,
    ) -> [f64; FLAT_CHANNELS] {
        let n = self.config.order;
        let duration = self.timeline.duration(segment);
        let tau = (t - self.timeline.knots()[segment]) / duration;
        let mut out = [0.0; FLAT_CHANNELS];
        if derivative > n {
            return out;
        }
        let chain = duration.powi(-(derivative as i32));
        for (channel, slot) in out.iter_mut().enumerate() {
            let coeffs = self.segment_coefficients(segment, channel);
            // Horner on the derivative polynomial, highest power first.
            let mut acc = 0.0;
            for i in (derivative..=n).rev() {
                acc = acc * tau + coeffs[i] * falling_factorial(i, derivative);
            }
            *slot = acc * chain;
        }
        out
    }

    /// Position channels at `t`.
    pub fn position(&self, t: f64) -> Result<Vector3<f64>, PolysnapError> {
        let v = self.evaluate(t, 0)?;
        Ok(Vector3::new(v[0], v[1], v[2]))
    }

    /// The quadratic objective value cᵀQc of this trajectory: the integral of
    /// the weighted squared smoothness derivatives over the whole timeline.
    pub fn snap_cost(&self, position_weight: f64, yaw_weight: f64) -> f64 {
        let n = self.config.order;
        let mut total = 0.0;
        for channel in 0..FLAT_CHANNELS {
            let k = self.config.smoothness(channel);
            let weight = if channel == YAW_CHANNEL { yaw_weight } else { position_weight };
            let gram = derivative_gram(n, k);
            for seg in 0..self.timeline.segments() {
                let scale = weight * self.timeline.duration(seg).powi(1 - 2 * k as i32);
                let coeffs = self.segment_coefficients(seg, channel);
                let mut quad = 0.0;
                for i in k..=n {
                    for j in k..=n {
                        quad += coeffs[i] * gram[(i, j)] * coeffs[j];
                    }
                }
                total += scale * quad;
            }
        }
        total
    }
}
