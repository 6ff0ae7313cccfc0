//! Mission planning: the greedy shrinking-circle search and its
//! finite-state machine.
//!
//! Each iteration places three measuring positions on a circle around the
//! current estimate, collects measurements there (hovering in discrete
//! mode, orbiting in continuous mode), re-estimates, then re-centers on the
//! new estimate with a smaller circle. Radii shrink every iteration, so the
//! search contracts toward the transmitter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::LocalPoint;

/// Measuring positions per circle. Three is the minimum that surrounds the
/// estimate, and more positions trade flight time for little accuracy.
pub const POSITIONS_PER_CIRCLE: usize = 3;

/// Errors from mission configuration and planning.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("invalid mission config: {reason}")]
    InvalidConfig { reason: String },
    #[error("invalid transition {from:?} -> {to:?}")]
    InvalidTransition { from: Phase, to: Phase },
    #[error("drone index {got} out of range for {n} drones")]
    DroneIndex { got: usize, n: usize },
    #[error("invalid plan geometry: {reason}")]
    BadGeometry { reason: String },
    #[error("operation requires phase {expected:?}, current phase is {found:?}")]
    WrongPhase { expected: Phase, found: Phase },
}

/// Mission phases. Legal transitions:
/// Idle -> Planning -> Navigating -> Measuring -> Estimating, then back to
/// Planning for another iteration or to Done.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Planning,
    Navigating,
    Measuring,
    Estimating,
    Done,
}

impl Phase {
    fn can_transition_to(self, to: Phase) -> bool {
        use Phase::*;
        matches!(
            (self, to),
            (Idle, Planning)
                | (Planning, Navigating)
                | (Navigating, Measuring)
                | (Measuring, Estimating)
                | (Estimating, Planning)
                | (Estimating, Done)
        )
    }
}

/// How drones gather measurements at each circle position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionMode {
    /// Fly to each position, hover, then move on.
    Discrete,
    /// Orbit around each position, measuring on the move.
    Continuous,
}

/// Radii for one search iteration, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiusStep {
    /// Circle on which the measuring positions sit.
    pub waypoint_radius_m: f64,
    /// Orbit radius around each measuring position (continuous mode).
    #[serde(default)]
    pub orbit_radius_m: Option<f64>,
}

/// Shrinking-circle mission parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissionConfig {
    pub mode: MissionMode,
    pub n_drones: usize,
    pub n_iterations: usize,
    /// Beacon emissions to wait out at each discrete measuring position.
    pub measurements_per_point: u32,
    /// Explicit radii per iteration; when empty, a halving schedule is
    /// derived from `initial_uncertainty_m`.
    pub radius_schedule: Vec<RadiusStep>,
    pub speed_mps: f64,
    /// Hover time budgeted per requested measurement (discrete mode).
    pub hover_s_per_measurement: f64,
    /// Radius of the region the network-side coarse estimate may miss by.
    pub initial_uncertainty_m: f64,
    /// Flight altitude above the local origin, in meters.
    pub altitude_m: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            mode: MissionMode::Discrete,
            n_drones: 3,
            n_iterations: 2,
            measurements_per_point: 2,
            radius_schedule: Vec::new(),
            speed_mps: 5.0,
            hover_s_per_measurement: 20.0,
            initial_uncertainty_m: 300.0,
            altitude_m: 40.0,
        }
    }
}

impl MissionConfig {
    /// Discrete-mode mission with the default halving radius schedule.
    pub fn discrete(n_drones: usize, n_iterations: usize, measurements_per_point: u32) -> Self {
        Self {
            mode: MissionMode::Discrete,
            n_drones,
            n_iterations,
            measurements_per_point,
            ..Self::default()
        }
    }

    /// Continuous-mode mission; drones measure while orbiting, so the
    /// per-point measurement count does not apply.
    pub fn continuous(n_drones: usize, n_iterations: usize) -> Self {
        Self {
            mode: MissionMode::Continuous,
            n_drones,
            n_iterations,
            measurements_per_point: 1,
            speed_mps: 3.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        let fail = |reason: String| Err(PlannerError::InvalidConfig { reason });
        if self.n_drones != 1 && self.n_drones != 3 {
            return fail(format!("n_drones = {} (supported: 1 or 3)", self.n_drones));
        }
        if self.n_iterations == 0 {
            return fail("n_iterations must be at least 1".into());
        }
        if self.measurements_per_point == 0 {
            return fail("measurements_per_point must be at least 1".into());
        }
        if !(self.speed_mps > 0.0) || !self.speed_mps.is_finite() {
            return fail(format!("speed_mps = {} must be positive", self.speed_mps));
        }
        if !(self.hover_s_per_measurement >= 0.0) || !self.hover_s_per_measurement.is_finite() {
            return fail("hover_s_per_measurement must be non-negative".into());
        }
        if !(self.initial_uncertainty_m > 0.0) || !self.initial_uncertainty_m.is_finite() {
            return fail("initial_uncertainty_m must be positive".into());
        }
        if !(self.altitude_m > 0.0) || !self.altitude_m.is_finite() {
            return fail(format!("altitude_m = {} must be positive", self.altitude_m));
        }
        if !self.radius_schedule.is_empty() && self.radius_schedule.len() != self.n_iterations {
            return fail(format!(
                "radius_schedule has {} steps for {} iterations",
                self.radius_schedule.len(),
                self.n_iterations
            ));
        }
        let schedule = self.schedule();
        let mut prev = f64::INFINITY;
        for (i, step) in schedule.iter().enumerate() {
            if !(step.waypoint_radius_m > 0.0) || !step.waypoint_radius_m.is_finite() {
                return fail(format!("iteration {i}: waypoint radius must be positive"));
            }
            if step.waypoint_radius_m >= prev {
                return fail("radius schedule must be strictly decreasing".into());
            }
            prev = step.waypoint_radius_m;
            if let Some(r) = step.orbit_radius_m {
                if !(r > 0.0) || !r.is_finite() {
                    return fail(format!("iteration {i}: orbit radius must be positive"));
                }
            } else if self.mode == MissionMode::Continuous && self.n_drones > 1 {
                return fail(format!(
                    "iteration {i}: continuous multi-drone missions need an orbit radius"
                ));
            }
        }
        Ok(())
    }

    /// The effective radius schedule: explicit steps, or a halving ladder
    /// starting at half the initial uncertainty.
    pub fn schedule(&self) -> Vec<RadiusStep> {
        if !self.radius_schedule.is_empty() {
            return self.radius_schedule.clone();
        }
        let mut r = self.initial_uncertainty_m / 2.0;
        let mut steps = Vec::with_capacity(self.n_iterations);
        for _ in 0..self.n_iterations {
            steps.push(RadiusStep {
                waypoint_radius_m: r,
                orbit_radius_m: Some(r / 2.0),
            });
            r /= 2.0;
        }
        steps
    }

    /// Hover time at each discrete measuring position.
    pub fn dwell_s(&self) -> f64 {
        f64::from(self.measurements_per_point) * self.hover_s_per_measurement
    }
}

/// Orbit direction, seen from above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitDirection {
    CounterClockwise,
    Clockwise,
}

/// A circular measuring pattern around a point. The entry point on the
/// circle is resolved at execution time from the drone's approach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSpec {
    pub center: LocalPoint,
    pub radius_m: f64,
    pub angular_span_deg: f64,
    pub direction: OrbitDirection,
}

impl OrbitSpec {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if !self.center.is_finite() {
            return Err(PlannerError::BadGeometry {
                reason: "orbit center must be finite".into(),
            });
        }
        if !(self.radius_m > 0.0) || !self.radius_m.is_finite() {
            return Err(PlannerError::BadGeometry {
                reason: format!("orbit radius {} must be positive", self.radius_m),
            });
        }
        if !(self.angular_span_deg > 0.0) || !self.angular_span_deg.is_finite() {
            return Err(PlannerError::BadGeometry {
                reason: "orbit span must be positive".into(),
            });
        }
        Ok(())
    }
}

/// What one drone was assigned for the current iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DroneTask {
    /// Visit these waypoints in order, dwelling at each.
    Waypoints(Vec<LocalPoint>),
    Orbit(OrbitSpec),
}

/// Compass bearing from `from` to `to` in degrees: 0 = north, clockwise.
fn bearing_deg(from: &LocalPoint, to: &LocalPoint) -> f64 {
    let de = to.east - from.east;
    let dn = to.north - from.north;
    if de.abs() < 1e-9 && dn.abs() < 1e-9 {
        return 0.0;
    }
    let b = de.atan2(dn).to_degrees();
    if b < 0.0 {
        b + 360.0
    } else {
        b
    }
}

/// Evenly spaced positions on a circle around `center` at the mission
/// altitude, starting at compass bearing `phase_deg` and proceeding
/// clockwise.
pub fn circle_waypoints(
    center: &LocalPoint,
    radius_m: f64,
    n_points: usize,
    phase_deg: f64,
    altitude_m: f64,
) -> Result<Vec<LocalPoint>, PlannerError> {
    if !(radius_m > 0.0) || !radius_m.is_finite() {
        return Err(PlannerError::BadGeometry {
            reason: format!("circle radius {radius_m} must be positive"),
        });
    }
    if n_points == 0 {
        return Err(PlannerError::BadGeometry {
            reason: "need at least one waypoint".into(),
        });
    }
    if !phase_deg.is_finite() || !altitude_m.is_finite() || !center.is_finite() {
        return Err(PlannerError::BadGeometry {
            reason: "non-finite circle parameters".into(),
        });
    }
    let mut out = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let bearing = (phase_deg + 360.0 * k as f64 / n_points as f64).to_radians();
        out.push(LocalPoint::new(
            center.east + radius_m * bearing.sin(),
            center.north + radius_m * bearing.cos(),
            altitude_m,
        ));
    }
    Ok(out)
}

/// Full orbit of `radius_m` around a measuring position.
pub fn orbit_around(
    position: &LocalPoint,
    radius_m: f64,
    angular_span_deg: f64,
    altitude_m: f64,
) -> Result<OrbitSpec, PlannerError> {
    let spec = OrbitSpec {
        center: LocalPoint::new(position.east, position.north, altitude_m),
        radius_m,
        angular_span_deg,
        direction: OrbitDirection::CounterClockwise,
    };
    spec.validate()?;
    Ok(spec)
}

/// Assign one target to each drone, minimizing total 3-D travel distance.
///
/// Returns `assignment[drone] = target index`. Ties resolve to the
/// lexicographically first assignment, so identical costs stay stable.
pub fn assign_drones(
    targets: &[LocalPoint],
    drone_positions: &[LocalPoint],
) -> Result<Vec<usize>, PlannerError> {
    if targets.len() != drone_positions.len() || targets.is_empty() {
        return Err(PlannerError::BadGeometry {
            reason: format!(
                "{} targets for {} drones",
                targets.len(),
                drone_positions.len()
            ),
        });
    }
    let n = targets.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    // Lexicographic permutation walk; n is 1 or 3, so brute force is fine.
    loop {
        let cost: f64 = perm
            .iter()
            .enumerate()
            .map(|(d, &t)| drone_positions[d].distance_to(&targets[t]))
            .sum();
        // Strict improvement keeps the first (lexicographically smallest)
        // permutation on ties.
        if best.as_ref().is_none_or(|(c, _)| cost < *c - 1e-12) {
            best = Some((cost, perm.clone()));
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best.expect("at least one permutation").1)
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Progress report from [`MissionState::note_completion`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompletionStatus {
    /// More measuring-position completions expected this iteration.
    MoreExpected,
    /// All positions done; the mission is ready to estimate.
    IterationComplete,
}

/// The planner's run-time record: phase, iteration, current plan, and the
/// bookkeeping needed to tell when an iteration's measuring is complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionState {
    pub phase: Phase,
    pub iteration: usize,
    /// Estimate the current iteration's circle is centered on.
    pub center: LocalPoint,
    /// Last known drone positions, by drone index.
    pub drone_positions: Vec<LocalPoint>,
    /// Current task per drone.
    pub tasks: Vec<DroneTask>,
    expected_completions: usize,
    received_completions: usize,
    /// Set when the mission reaches [`Phase::Done`].
    pub final_position: Option<LocalPoint>,
}

impl MissionState {
    /// Explicit FSM transition; anything outside the legal table errors.
    pub fn transition(&mut self, to: Phase) -> Result<(), PlannerError> {
        if !self.phase.can_transition_to(to) {
            return Err(PlannerError::InvalidTransition {
                from: self.phase,
                to,
            });
        }
        self.phase = to;
        Ok(())
    }

    pub fn update_drone_position(
        &mut self,
        drone_index: usize,
        pos: LocalPoint,
    ) -> Result<(), PlannerError> {
        let n = self.drone_positions.len();
        if drone_index >= n {
            return Err(PlannerError::DroneIndex {
                got: drone_index,
                n,
            });
        }
        self.drone_positions[drone_index] = pos;
        Ok(())
    }

    /// Record that a drone finished one measuring position (a dwell in
    /// discrete mode, a whole orbit in continuous mode).
    pub fn note_completion(
        &mut self,
        drone_index: usize,
    ) -> Result<CompletionStatus, PlannerError> {
        let n = self.drone_positions.len();
        if drone_index >= n {
            return Err(PlannerError::DroneIndex {
                got: drone_index,
                n,
            });
        }
        match self.phase {
            Phase::Navigating => self.transition(Phase::Measuring)?,
            Phase::Measuring => {}
            other => {
                return Err(PlannerError::WrongPhase {
                    expected: Phase::Measuring,
                    found: other,
                })
            }
        }
        self.received_completions += 1;
        if self.received_completions >= self.expected_completions {
            self.transition(Phase::Estimating)?;
            Ok(CompletionStatus::IterationComplete)
        } else {
            Ok(CompletionStatus::MoreExpected)
        }
    }
}

/// Plan the tasks for one iteration of the shrinking-circle search.
///
/// The first measuring position is phased toward drone 0's current
/// position to minimize approach travel; with multiple drones the
/// position-to-drone assignment then minimizes total travel.
fn plan_iteration(
    cfg: &MissionConfig,
    iteration: usize,
    center: &LocalPoint,
    drone_positions: &[LocalPoint],
) -> Result<(Vec<DroneTask>, usize), PlannerError> {
    let schedule = cfg.schedule();
    let step = schedule[iteration];
    let flat_center = LocalPoint::new(center.east, center.north, cfg.altitude_m);
    let phase = bearing_deg(&flat_center, &drone_positions[0]);
    let positions = circle_waypoints(
        &flat_center,
        step.waypoint_radius_m,
        POSITIONS_PER_CIRCLE,
        phase,
        cfg.altitude_m,
    )?;

    let tasks = match (cfg.mode, cfg.n_drones) {
        (MissionMode::Discrete, 1) => {
            vec![DroneTask::Waypoints(order_for_single_drone(
                &positions,
                &drone_positions[0],
            ))]
        }
        (MissionMode::Discrete, _) => {
            let assignment = assign_drones(&positions, drone_positions)?;
            assignment
                .into_iter()
                .map(|t| DroneTask::Waypoints(vec![positions[t]]))
                .collect()
        }
        (MissionMode::Continuous, 1) => {
            vec![DroneTask::Orbit(orbit_around(
                &flat_center,
                step.waypoint_radius_m,
                360.0,
                cfg.altitude_m,
            )?)]
        }
        (MissionMode::Continuous, _) => {
            let orbit_r = step
                .orbit_radius_m
                .ok_or_else(|| PlannerError::InvalidConfig {
                    reason: "continuous multi-drone missions need an orbit radius".into(),
                })?;
            let assignment = assign_drones(&positions, drone_positions)?;
            assignment
                .into_iter()
                .map(|t| {
                    orbit_around(&positions[t], orbit_r, 360.0, cfg.altitude_m)
                        .map(DroneTask::Orbit)
                })
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    let expected = match cfg.mode {
        MissionMode::Discrete => POSITIONS_PER_CIRCLE,
        MissionMode::Continuous => cfg.n_drones,
    };
    Ok((tasks, expected))
}

/// Visit order for one drone covering all positions: nearest first, then
/// whichever way around the circle is shorter.
fn order_for_single_drone(positions: &[LocalPoint], drone: &LocalPoint) -> Vec<LocalPoint> {
    let n = positions.len();
    let nearest = (0..n)
        .min_by(|&a, &b| {
            drone
                .distance_to(&positions[a])
                .total_cmp(&drone.distance_to(&positions[b]))
        })
        .expect("positions not empty");
    let forward: Vec<LocalPoint> = (0..n).map(|k| positions[(nearest + k) % n]).collect();
    let backward: Vec<LocalPoint> = (0..n)
        .map(|k| positions[(nearest + n - k % n) % n])
        .collect();
    let path_len = |path: &[LocalPoint]| -> f64 {
        let mut total = drone.distance_to(&path[0]);
        for w in path.windows(2) {
            total += w[0].distance_to(&w[1]);
        }
        total
    };
    if path_len(&backward) < path_len(&forward) - 1e-12 {
        backward
    } else {
        forward
    }
}

/// Start a mission: validate the config, plan iteration 0 around the
/// initial estimate, and leave the state in `Navigating`.
pub fn start_mission(
    cfg: &MissionConfig,
    initial_estimate: &LocalPoint,
    drone_positions: &[LocalPoint],
) -> Result<MissionState, PlannerError> {
    cfg.validate()?;
    if drone_positions.len() != cfg.n_drones {
        return Err(PlannerError::InvalidConfig {
            reason: format!(
                "{} drone positions for {} drones",
                drone_positions.len(),
                cfg.n_drones
            ),
        });
    }
    if !initial_estimate.is_finite() {
        return Err(PlannerError::BadGeometry {
            reason: "initial estimate must be finite".into(),
        });
    }
    let mut state = MissionState {
        phase: Phase::Idle,
        iteration: 0,
        center: *initial_estimate,
        drone_positions: drone_positions.to_vec(),
        tasks: Vec::new(),
        expected_completions: 0,
        received_completions: 0,
        final_position: None,
    };
    state.transition(Phase::Planning)?;
    let (tasks, expected) = plan_iteration(cfg, 0, initial_estimate, drone_positions)?;
    state.tasks = tasks;
    state.expected_completions = expected;
    state.transition(Phase::Navigating)?;
    Ok(state)
}

/// Advance past an estimate: either plan the next, smaller circle around
/// it, or finish the mission if the schedule is exhausted.
///
/// Requires phase `Estimating`; returns the successor state.
pub fn next_iteration(
    state: &MissionState,
    estimate: &LocalPoint,
    cfg: &MissionConfig,
) -> Result<MissionState, PlannerError> {
    if state.phase != Phase::Estimating {
        return Err(PlannerError::WrongPhase {
            expected: Phase::Estimating,
            found: state.phase,
        });
    }
    if !estimate.is_finite() {
        return Err(PlannerError::BadGeometry {
            reason: "estimate must be finite".into(),
        });
    }
    let mut next = state.clone();
    next.center = *estimate;
    if state.iteration + 1 >= cfg.n_iterations {
        next.transition(Phase::Done)?;
        next.final_position = Some(*estimate);
        next.tasks = Vec::new();
        return Ok(next);
    }
    next.iteration += 1;
    next.transition(Phase::Planning)?;
    let (tasks, expected) = plan_iteration(cfg, next.iteration, estimate, &next.drone_positions)?;
    next.tasks = tasks;
    next.expected_completions = expected;
    next.received_completions = 0;
    next.transition(Phase::Navigating)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wp(e: f64, n: f64, u: f64) -> LocalPoint {
        LocalPoint::new(e, n, u)
    }

    #[test]
    fn circle_chord_matches_oracle() {
        // Chord between adjacent thirds of a 100 m circle:
        // 2 * 100 * sin(60 deg) = 173.20508075688772 m.
        let wps = circle_waypoints(&LocalPoint::ORIGIN, 100.0, 3, 0.0, 40.0).unwrap();
        let chord = wps[0].horizontal_distance_to(&wps[1]);
        assert!(
            (chord - 173.205_080_756_887_72).abs() < 1e-9,
            "chord = {chord}"
        );
        // Phase 0 puts the first waypoint due north.
        assert!((wps[0].east - 0.0).abs() < 1e-9);
        assert!((wps[0].north - 100.0).abs() < 1e-9);
        assert!(wps.iter().all(|w| w.up == 40.0));
    }

    #[test]
    fn circle_phase_rotates_clockwise() {
        let wps = circle_waypoints(&LocalPoint::ORIGIN, 50.0, 3, 90.0, 10.0).unwrap();
        // Bearing 90 = due east.
        assert!((wps[0].east - 50.0).abs() < 1e-9);
        assert!(wps[0].north.abs() < 1e-9);
        // Next bearing 210 = south-west.
        assert!(wps[1].east < 0.0 && wps[1].north < 0.0);
    }

    #[test]
    fn circle_rejects_bad_parameters() {
        assert!(circle_waypoints(&LocalPoint::ORIGIN, 0.0, 3, 0.0, 10.0).is_err());
        assert!(circle_waypoints(&LocalPoint::ORIGIN, -5.0, 3, 0.0, 10.0).is_err());
        assert!(circle_waypoints(&LocalPoint::ORIGIN, 10.0, 0, 0.0, 10.0).is_err());
        assert!(circle_waypoints(&LocalPoint::ORIGIN, 10.0, 3, f64::NAN, 10.0).is_err());
    }

    #[test]
    fn assignment_prefers_short_crossings() {
        let targets = [
            wp(100.0, 0.0, 40.0),
            wp(-100.0, 0.0, 40.0),
            wp(0.0, 100.0, 40.0),
        ];
        // Drones parked near the "wrong" targets in reverse order.
        let drones = [
            wp(-90.0, 0.0, 40.0),
            wp(95.0, 5.0, 40.0),
            wp(5.0, 90.0, 40.0),
        ];
        let a = assign_drones(&targets, &drones).unwrap();
        assert_eq!(a, vec![1, 0, 2]);
    }

    #[test]
    fn assignment_tie_breaks_to_identity() {
        // All drones at the circle center: every permutation costs the same.
        let targets = [
            wp(50.0, 0.0, 0.0),
            wp(-25.0, 43.3, 0.0),
            wp(-25.0, -43.3, 0.0),
        ];
        let drones = [LocalPoint::ORIGIN; 3];
        let a = assign_drones(&targets, &drones).unwrap();
        assert_eq!(a, vec![0, 1, 2]);
    }

    #[test]
    fn assignment_requires_matching_counts() {
        let targets = [wp(1.0, 0.0, 0.0)];
        let drones = [LocalPoint::ORIGIN, LocalPoint::ORIGIN];
        assert!(assign_drones(&targets, &drones).is_err());
    }

    #[test]
    fn default_schedule_halves_from_half_uncertainty() {
        let cfg = MissionConfig::discrete(3, 3, 2);
        let schedule = cfg.schedule();
        assert_eq!(schedule.len(), 3);
        assert_eq!(schedule[0].waypoint_radius_m, 150.0);
        assert_eq!(schedule[1].waypoint_radius_m, 75.0);
        assert_eq!(schedule[2].waypoint_radius_m, 37.5);
        cfg.validate().unwrap();
    }

    #[test]
    fn config_validation_catches_bad_inputs() {
        let mut cfg = MissionConfig::discrete(2, 2, 2);
        assert!(cfg.validate().is_err()); // 2 drones unsupported
        cfg = MissionConfig::discrete(3, 2, 2);
        cfg.radius_schedule = vec![
            RadiusStep {
                waypoint_radius_m: 100.0,
                orbit_radius_m: None,
            },
            RadiusStep {
                waypoint_radius_m: 100.0,
                orbit_radius_m: None,
            },
        ];
        assert!(cfg.validate().is_err()); // not strictly decreasing
        cfg = MissionConfig::continuous(3, 2);
        cfg.radius_schedule = vec![
            RadiusStep {
                waypoint_radius_m: 80.0,
                orbit_radius_m: Some(70.0),
            },
            RadiusStep {
                waypoint_radius_m: 50.0,
                orbit_radius_m: None,
            },
        ];
        assert!(cfg.validate().is_err()); // missing orbit radius
        cfg.radius_schedule[1].orbit_radius_m = Some(30.0);
        cfg.validate().unwrap();
        let mut cfg = MissionConfig::discrete(1, 2, 2);
        cfg.speed_mps = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dwell_scales_with_measurements() {
        let cfg = MissionConfig::discrete(3, 2, 2);
        assert_eq!(cfg.dwell_s(), 40.0);
        let cfg4 = MissionConfig::discrete(3, 2, 4);
        assert_eq!(cfg4.dwell_s(), 80.0);
    }

    #[test]
    fn fsm_follows_legal_path_and_rejects_shortcuts() {
        let cfg = MissionConfig::discrete(1, 2, 2);
        let drones = [wp(0.0, 0.0, 40.0)];
        let mut state = start_mission(&cfg, &LocalPoint::ORIGIN, &drones).unwrap();
        assert_eq!(state.phase, Phase::Navigating);
        // Cannot jump straight to Done or back to Planning.
        assert!(state.clone().transition(Phase::Done).is_err());
        assert!(state.clone().transition(Phase::Planning).is_err());
        // Three dwell completions drive Navigating -> Measuring -> Estimating.
        assert_eq!(
            state.note_completion(0).unwrap(),
            CompletionStatus::MoreExpected
        );
        assert_eq!(state.phase, Phase::Measuring);
        assert_eq!(
            state.note_completion(0).unwrap(),
            CompletionStatus::MoreExpected
        );
        assert_eq!(
            state.note_completion(0).unwrap(),
            CompletionStatus::IterationComplete
        );
        assert_eq!(state.phase, Phase::Estimating);
        // Completions outside Navigating/Measuring are rejected.
        assert!(state.note_completion(0).is_err());
    }

    #[test]
    fn single_drone_visits_nearest_waypoint_first() {
        let cfg = MissionConfig::discrete(1, 1, 2);
        let drone = wp(10.0, 140.0, 40.0); // near the northern waypoint
        let state = start_mission(&cfg, &LocalPoint::ORIGIN, &[drone]).unwrap();
        let DroneTask::Waypoints(wps) = &state.tasks[0] else {
            panic!("expected waypoints");
        };
        assert_eq!(wps.len(), 3);
        // First waypoint is the one nearest the drone; the rest follow
        // around the circle, so hops stay chord-length.
        let d0 = drone.distance_to(&wps[0]);
        assert!(wps.iter().skip(1).all(|w| drone.distance_to(w) >= d0));
        let r = cfg.schedule()[0].waypoint_radius_m;
        let chord = 2.0 * r * (std::f64::consts::PI / 3.0).sin();
        assert!((wps[0].horizontal_distance_to(&wps[1]) - chord).abs() < 1e-6);
    }

    #[test]
    fn three_drone_discrete_assigns_one_waypoint_each() {
        let cfg = MissionConfig::discrete(3, 2, 2);
        let drones = [
            wp(0.0, 160.0, 40.0),
            wp(10.0, -150.0, 40.0),
            wp(-170.0, 0.0, 40.0),
        ];
        let state = start_mission(&cfg, &LocalPoint::ORIGIN, &drones).unwrap();
        assert_eq!(state.tasks.len(), 3);
        for (i, t) in state.tasks.iter().enumerate() {
            let DroneTask::Waypoints(wps) = t else {
                panic!("expected waypoints")
            };
            assert_eq!(wps.len(), 1, "drone {i}");
        }
        // Drone 0 sits due north, so phasing points the first position at it
        // and the assignment keeps drone 0 on it.
        let DroneTask::Waypoints(wps0) = &state.tasks[0] else {
            unreachable!()
        };
        assert!(wps0[0].north > 0.0 && wps0[0].east.abs() < 1e-6);
    }

    #[test]
    fn continuous_single_drone_orbits_the_estimate() {
        let cfg = MissionConfig::continuous(1, 2);
        let state = start_mission(&cfg, &wp(20.0, -30.0, 0.0), &[wp(0.0, 0.0, 40.0)]).unwrap();
        let DroneTask::Orbit(orbit) = &state.tasks[0] else {
            panic!("expected orbit");
        };
        assert_eq!(orbit.center.east, 20.0);
        assert_eq!(orbit.center.north, -30.0);
        assert_eq!(orbit.center.up, cfg.altitude_m);
        assert_eq!(orbit.radius_m, cfg.schedule()[0].waypoint_radius_m);
        assert_eq!(orbit.angular_span_deg, 360.0);
    }

    #[test]
    fn continuous_three_drone_orbits_measuring_positions() {
        let mut cfg = MissionConfig::continuous(3, 2);
        cfg.radius_schedule = vec![
            RadiusStep {
                waypoint_radius_m: 80.0,
                orbit_radius_m: Some(70.0),
            },
            RadiusStep {
                waypoint_radius_m: 50.0,
                orbit_radius_m: Some(30.0),
            },
        ];
        let drones = [
            wp(0.0, 90.0, 40.0),
            wp(70.0, -50.0, 40.0),
            wp(-70.0, -50.0, 40.0),
        ];
        let state = start_mission(&cfg, &LocalPoint::ORIGIN, &drones).unwrap();
        for t in &state.tasks {
            let DroneTask::Orbit(o) = t else {
                panic!("expected orbit")
            };
            assert_eq!(o.radius_m, 70.0);
            let center_dist = o.center.horizontal_distance_to(&LocalPoint::ORIGIN);
            assert!((center_dist - 80.0).abs() < 1e-9);
        }
    }

    #[test]
    fn next_iteration_shrinks_and_recenters() {
        let cfg = MissionConfig::discrete(3, 2, 2);
        let drones = [
            wp(0.0, 150.0, 40.0),
            wp(130.0, -75.0, 40.0),
            wp(-130.0, -75.0, 40.0),
        ];
        let mut state = start_mission(&cfg, &LocalPoint::ORIGIN, &drones).unwrap();
        for _ in 0..3 {
            state.note_completion(0).unwrap();
        }
        let new_est = wp(12.0, -9.0, 0.0);
        let next = next_iteration(&state, &new_est, &cfg).unwrap();
        assert_eq!(next.phase, Phase::Navigating);
        assert_eq!(next.iteration, 1);
        assert_eq!(next.center, new_est);
        let DroneTask::Waypoints(wps) = &next.tasks[0] else {
            panic!()
        };
        let r = wps[0].horizontal_distance_to(&LocalPoint::new(12.0, -9.0, 40.0));
        assert!((r - 75.0).abs() < 1e-9, "radius = {r}");
    }

    #[test]
    fn mission_finishes_after_last_iteration() {
        let cfg = MissionConfig::discrete(1, 1, 2);
        let mut state = start_mission(&cfg, &LocalPoint::ORIGIN, &[wp(0.0, 0.0, 40.0)]).unwrap();
        for _ in 0..3 {
            state.note_completion(0).unwrap();
        }
        let final_est = wp(3.0, 4.0, 0.0);
        let done = next_iteration(&state, &final_est, &cfg).unwrap();
        assert_eq!(done.phase, Phase::Done);
        assert_eq!(done.final_position, Some(final_est));
        assert!(done.tasks.is_empty());
        // No further planning allowed.
        assert!(next_iteration(&done, &final_est, &cfg).is_err());
    }

    #[test]
    fn next_iteration_requires_estimating_phase() {
        let cfg = MissionConfig::discrete(1, 2, 2);
        let state = start_mission(&cfg, &LocalPoint::ORIGIN, &[wp(0.0, 0.0, 40.0)]).unwrap();
        assert!(matches!(
            next_iteration(&state, &LocalPoint::ORIGIN, &cfg),
            Err(PlannerError::WrongPhase { .. })
        ));
    }

    proptest! {
        #[test]
        fn waypoints_sit_on_the_circle(
            ce in -200.0f64..200.0,
            cn in -200.0f64..200.0,
            r in 1.0f64..500.0,
            phase in 0.0f64..360.0,
            n in 1usize..8,
        ) {
            let center = wp(ce, cn, 0.0);
            let wps = circle_waypoints(&center, r, n, phase, 40.0).unwrap();
            let flat = wp(ce, cn, 40.0);
            for w in &wps {
                let d = w.horizontal_distance_to(&flat);
                prop_assert!((d - r).abs() < 1e-9 * r.max(1.0));
                prop_assert!(w.up == 40.0);
            }
            // Centroid of a full even spread is the center.
            if n >= 3 {
                let me = wps.iter().map(|w| w.east).sum::<f64>() / n as f64;
                let mn = wps.iter().map(|w| w.north).sum::<f64>() / n as f64;
                prop_assert!((me - ce).abs() < 1e-6);
                prop_assert!((mn - cn).abs() < 1e-6);
            }
        }

        #[test]
        fn assignment_is_a_permutation(
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut pts = || wp(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), 40.0);
            let targets = [pts(), pts(), pts()];
            let drones = [pts(), pts(), pts()];
            let a = assign_drones(&targets, &drones).unwrap();
            let mut seen = [false; 3];
            for &t in &a {
                prop_assert!(!seen[t]);
                seen[t] = true;
            }
        }
    }
}
