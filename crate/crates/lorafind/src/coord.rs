//! The coordination server: ingests gateway uplinks into a deduplicated
//! datapoint store, drives the mission planner from drone status events,
//! runs position estimates, and emits tasking commands.
//!
//! The server is transport-agnostic: [`Coordinator::handle`] maps one
//! inbound [`Message`] to zero or more outbound ones, and [`serve`] wraps
//! that in newline-delimited JSON over any byte streams. An optional
//! journal records every message in wire format; replaying it rebuilds
//! the datapoint store exactly.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, GeoPoint, LocalPoint};
use crate::multilat::{self, BBox, Datapoint, EstimateError, EstimateOptions, PositionEstimate};
use crate::planner::{
    self, CompletionStatus, DroneTask, MissionConfig, MissionState, Phase, PlannerError,
};
use crate::signal::{self, AntennaModel, PathLossModel, SignalError};
use crate::wire::{
    to_line, DoneReport, DroneEvent, DroneStatus, EstimateReport, Message, UplinkReport,
    WaypointCommand, WireError, WireOrbit,
};

/// Errors from the coordination server.
#[derive(Debug, Error)]
pub enum CoordError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Geo(#[from] geo::GeoError),
    #[error("status from unknown drone {id:?}")]
    UnknownDrone { id: String },
    #[error("server does not accept inbound {kind} messages")]
    NotAccepted { kind: &'static str },
    #[error("journal write failed: {0}")]
    Journal(String),
    #[error("io error: {0}")]
    Io(String),
}

use crate::wire::{to_local_position, to_wire_position};

/// Where the mission's starting estimate comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialEstimate {
    /// Provided out of band (e.g. the network operator's last fix).
    Explicit(LocalPoint),
    /// Estimated from the first uplinks heard by fixed gateways.
    FromUplinks { min_points: usize },
}

/// Server configuration: mission plan, estimation models, and options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordConfig {
    pub mission: MissionConfig,
    pub path_loss: PathLossModel,
    #[serde(default)]
    pub antenna: AntennaModel,
    #[serde(default)]
    pub estimator: EstimateOptions,
    pub initial_estimate: InitialEstimate,
    /// Tangent-plane origin; when set, outbound positions are geodetic.
    #[serde(default)]
    pub origin: Option<GeoPoint>,
}

impl CoordConfig {
    pub fn validate(&self) -> Result<(), CoordError> {
        self.mission.validate()?;
        self.path_loss.validate()?;
        self.antenna.validate()?;
        self.estimator.validate()?;
        if let Some(o) = &self.origin {
            o.validate()?;
        }
        if let InitialEstimate::FromUplinks { min_points } = self.initial_estimate {
            if min_points < 3 {
                return Err(CoordError::Estimate(EstimateError::InvalidOptions {
                    reason: format!("initial estimate needs min_points >= 3, got {min_points}"),
                }));
            }
        }
        Ok(())
    }

    /// Drone identifiers by index: `drone-0`, `drone-1`, ...
    pub fn drone_ids(&self) -> Vec<String> {
        (0..self.mission.n_drones)
            .map(|i| format!("drone-{i}"))
            .collect()
    }
}

/// One stored measurement with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredPoint {
    pub point: Datapoint,
    /// Mission iteration during which the point arrived (0 before start).
    pub iteration: usize,
    pub time_s: f64,
}

/// Which stored points an estimate should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFilter {
    /// Everything collected so far (the default for mission estimates).
    All,
    /// Only points tagged with one iteration.
    Iteration(usize),
    /// Points from this iteration onward.
    SinceIteration(usize),
}

/// Append-only datapoint store with (msg_id, gateway_id) deduplication.
#[derive(Debug, Default, Clone)]
pub struct DatapointStore {
    rows: Vec<StoredPoint>,
    seen: BTreeSet<(u64, String)>,
}

impl DatapointStore {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[StoredPoint] {
        &self.rows
    }

    /// Insert unless the (msg_id, gateway_id) pair was already stored.
    /// Returns whether the row was new.
    pub fn insert(&mut self, row: StoredPoint) -> bool {
        let key = (row.point.msg_id, row.point.source_id.clone());
        if !self.seen.insert(key) {
            return false;
        }
        // Iteration tags never decrease: ingest follows mission order.
        debug_assert!(self
            .rows
            .last()
            .is_none_or(|r| r.iteration <= row.iteration));
        self.rows.push(row);
        true
    }

    pub fn contains(&self, msg_id: u64, gateway_id: &str) -> bool {
        self.seen.contains(&(msg_id, gateway_id.to_string()))
    }

    pub fn select(&self, filter: DataFilter) -> Vec<Datapoint> {
        self.rows
            .iter()
            .filter(|r| match filter {
                DataFilter::All => true,
                DataFilter::Iteration(k) => r.iteration == k,
                DataFilter::SinceIteration(k) => r.iteration >= k,
            })
            .map(|r| r.point.clone())
            .collect()
    }
}

/// A position estimate the server produced during a mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub iteration: usize,
    pub time_s: f64,
    pub estimate: PositionEstimate,
    pub n_datapoints: usize,
}

/// The coordination server.
pub struct Coordinator {
    cfg: CoordConfig,
    drone_ids: Vec<String>,
    store: DatapointStore,
    state: Option<MissionState>,
    ready: Vec<bool>,
    drone_positions: Vec<Option<LocalPoint>>,
    initial_center: Option<LocalPoint>,
    estimates: Vec<EstimateRecord>,
    done: Option<DoneReport>,
    last_time_s: f64,
    journal: Option<Box<dyn Write + Send>>,
}

impl Coordinator {
    pub fn new(cfg: CoordConfig) -> Result<Self, CoordError> {
        cfg.validate()?;
        let n = cfg.mission.n_drones;
        let initial_center = match cfg.initial_estimate {
            InitialEstimate::Explicit(p) => {
                Some(LocalPoint::new(p.east, p.north, cfg.estimator.beacon_alt_m))
            }
            InitialEstimate::FromUplinks { .. } => None,
        };
        Ok(Self {
            drone_ids: cfg.drone_ids(),
            cfg,
            store: DatapointStore::default(),
            state: None,
            ready: vec![false; n],
            drone_positions: vec![None; n],
            initial_center,
            estimates: Vec::new(),
            done: None,
            last_time_s: 0.0,
            journal: None,
        })
    }

    /// Record every inbound and outbound message, in wire format.
    pub fn set_journal(&mut self, journal: Box<dyn Write + Send>) {
        self.journal = Some(journal);
    }

    pub fn store(&self) -> &DatapointStore {
        &self.store
    }

    pub fn estimates(&self) -> &[EstimateRecord] {
        &self.estimates
    }

    pub fn done_report(&self) -> Option<&DoneReport> {
        self.done.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done.is_some()
    }

    pub fn mission_state(&self) -> Option<&MissionState> {
        self.state.as_ref()
    }

    fn journal_msg(&mut self, msg: &Message) -> Result<(), CoordError> {
        if let Some(j) = &mut self.journal {
            let line = to_line(msg)?;
            j.write_all(line.as_bytes())
                .and_then(|_| j.flush())
                .map_err(|e| CoordError::Journal(e.to_string()))?;
        }
        Ok(())
    }

    fn drone_index(&self, id: &str) -> Result<usize, CoordError> {
        self.drone_ids
            .iter()
            .position(|d| d == id)
            .ok_or_else(|| CoordError::UnknownDrone { id: id.to_string() })
    }

    /// Does the angle to `center` fall outside the antenna model's
    /// validated range at this receiver?
    fn low_confidence_flag(&self, receiver: &LocalPoint) -> bool {
        let Some(center) = self.current_center() else {
            return false;
        };
        let h = center.horizontal_distance_to(receiver);
        let dv = center.up - receiver.up;
        signal::vertical_angle_deg(h, dv) > self.cfg.antenna.valid_max_deg
    }

    /// The server's current belief about the transmitter position.
    fn current_center(&self) -> Option<LocalPoint> {
        if let Some(state) = &self.state {
            return Some(state.center);
        }
        self.initial_center
    }

    fn current_iteration(&self) -> usize {
        self.state.as_ref().map_or(0, |s| s.iteration)
    }

    /// Process one inbound message and return the replies to broadcast.
    pub fn handle(&mut self, msg: &Message) -> Result<Vec<Message>, CoordError> {
        msg.validate()?;
        self.journal_msg(msg)?;
        let replies = match msg {
            Message::Uplink(u) => {
                self.ingest(u)?;
                // An uplink can complete the coarse network fix that the
                // mission is waiting on.
                self.try_start()?
            }
            Message::DroneStatus(s) => self.on_status(s)?,
            Message::WaypointCmd(_) => {
                return Err(CoordError::NotAccepted {
                    kind: "waypoint_cmd",
                })
            }
            Message::Estimate(_) => return Err(CoordError::NotAccepted { kind: "estimate" }),
            Message::Done(_) => return Err(CoordError::NotAccepted { kind: "done" }),
        };
        for r in &replies {
            self.journal_msg(r)?;
        }
        Ok(replies)
    }

    /// Validate, dedupe, and store one uplink. Returns whether it was new.
    pub fn ingest(&mut self, u: &UplinkReport) -> Result<bool, CoordError> {
        Message::Uplink(u.clone()).validate()?;
        self.last_time_s = self.last_time_s.max(u.time_s);
        if self.store.contains(u.msg_id, &u.gateway_id) {
            return Ok(false);
        }
        let receiver = to_local_position(&u.position, self.cfg.origin.as_ref())?;
        let esp = signal::esp_from_rssi_snr(u.rssi_dbm, u.snr_db)?;
        if !(signal::MIN_POWER_DBM..=signal::MAX_POWER_DBM).contains(&u.rssi_dbm) {
            return Err(CoordError::Signal(SignalError::OutOfRange {
                field: "rssi_dbm",
                value: u.rssi_dbm,
                min: signal::MIN_POWER_DBM,
                max: signal::MAX_POWER_DBM,
            }));
        }
        let low_confidence = self.low_confidence_flag(&receiver);
        let inserted = self.store.insert(StoredPoint {
            point: Datapoint::new(
                u.msg_id,
                u.gateway_id.clone(),
                receiver,
                esp,
                low_confidence,
            ),
            iteration: self.current_iteration(),
            time_s: u.time_s,
        });
        debug_assert!(inserted, "dedupe checked above");
        Ok(true)
    }

    fn on_status(&mut self, s: &DroneStatus) -> Result<Vec<Message>, CoordError> {
        let idx = self.drone_index(&s.drone_id)?;
        self.last_time_s = self.last_time_s.max(s.time_s);
        let pos = to_local_position(&s.position, self.cfg.origin.as_ref())?;
        self.drone_positions[idx] = Some(pos);
        if let Some(state) = &mut self.state {
            state.update_drone_position(idx, pos)?;
        }
        match s.event {
            DroneEvent::Ready => {
                self.ready[idx] = true;
                self.try_start()
            }
            DroneEvent::WaypointReached | DroneEvent::OrbitComplete => {
                let Some(state) = &mut self.state else {
                    return Err(CoordError::Planner(PlannerError::WrongPhase {
                        expected: Phase::Measuring,
                        found: Phase::Idle,
                    }));
                };
                match state.note_completion(idx)? {
                    CompletionStatus::MoreExpected => Ok(Vec::new()),
                    CompletionStatus::IterationComplete => self.estimate_and_advance(),
                }
            }
        }
    }

    /// Start the mission once every drone is ready and a starting estimate
    /// exists. Idempotent: returns no messages when conditions aren't met
    /// or the mission already started.
    fn try_start(&mut self) -> Result<Vec<Message>, CoordError> {
        if self.state.is_some() || self.done.is_some() {
            return Ok(Vec::new());
        }
        if !self.ready.iter().all(|r| *r) {
            return Ok(Vec::new());
        }
        let center = match self.initial_center {
            Some(c) => c,
            None => {
                let InitialEstimate::FromUplinks { min_points } = self.cfg.initial_estimate else {
                    unreachable!("explicit initial estimate is set in the constructor");
                };
                if self.store.len() < min_points {
                    return Ok(Vec::new());
                }
                match self.run_estimate() {
                    Ok(est) => est.position,
                    // Too little or too flat data: keep listening.
                    Err(EstimateError::InsufficientData { .. })
                    | Err(EstimateError::DegenerateGeometry { .. }) => return Ok(Vec::new()),
                    Err(e) => return Err(e.into()),
                }
            }
        };
        self.initial_center = Some(center);
        let positions: Vec<LocalPoint> = self
            .drone_positions
            .iter()
            .map(|p| p.expect("all drones reported ready with a position"))
            .collect();
        let state = planner::start_mission(&self.cfg.mission, &center, &positions)?;
        self.state = Some(state);
        // Announce the starting belief, then the first tasking round.
        let mut replies = vec![Message::Estimate(EstimateReport {
            iteration: 0,
            position: to_wire_position(&center, self.cfg.origin.as_ref())?,
            rms_residual_db: 0.0,
            n_points: 0,
            converged: false,
            time_s: self.last_time_s,
        })];
        replies.extend(self.commands_for_current_tasks()?);
        Ok(replies)
    }

    fn commands_for_current_tasks(&self) -> Result<Vec<Message>, CoordError> {
        let state = self.state.as_ref().expect("mission started");
        let origin = self.cfg.origin.as_ref();
        let mut out = Vec::new();
        for (idx, task) in state.tasks.iter().enumerate() {
            let cmd = match task {
                DroneTask::Waypoints(wps) => {
                    let waypoints = wps
                        .iter()
                        .map(|w| to_wire_position(w, origin))
                        .collect::<Result<Vec<_>, _>>()?;
                    WaypointCommand {
                        drone_id: self.drone_ids[idx].clone(),
                        iteration: state.iteration,
                        waypoints: Some(waypoints),
                        dwell_s: Some(self.cfg.mission.dwell_s()),
                        orbit: None,
                    }
                }
                DroneTask::Orbit(o) => WaypointCommand {
                    drone_id: self.drone_ids[idx].clone(),
                    iteration: state.iteration,
                    waypoints: None,
                    dwell_s: None,
                    orbit: Some(WireOrbit {
                        center: to_wire_position(&o.center, origin)?,
                        radius_m: o.radius_m,
                        angular_span_deg: o.angular_span_deg,
                        direction: o.direction,
                    }),
                },
            };
            out.push(Message::WaypointCmd(cmd));
        }
        Ok(out)
    }

    /// Estimator options for the next estimate. When the configuration
    /// leaves the search region open, it is centered on the current belief
    /// with generous margin over the initial uncertainty, rather than
    /// derived from the receiver footprint — fixed gateways can sit
    /// kilometers out, and a footprint-sized grid starts the solver far
    /// too coarse.
    pub fn estimator_options(&self) -> EstimateOptions {
        let mut opts = self.cfg.estimator.clone();
        if opts.bbox.is_none() {
            if let Some(c) = self.current_center() {
                let r = 1.5 * self.cfg.mission.initial_uncertainty_m;
                opts.bbox = Some(BBox {
                    min_east: c.east - r,
                    min_north: c.north - r,
                    max_east: c.east + r,
                    max_north: c.north + r,
                });
            }
        }
        opts
    }

    fn run_estimate(&self) -> Result<PositionEstimate, EstimateError> {
        multilat::estimate_position(
            &self.store.select(DataFilter::All),
            &self.cfg.path_loss,
            &self.cfg.antenna,
            &self.estimator_options(),
        )
    }

    /// Estimate from everything collected so far, then either plan the
    /// next iteration or finish the mission.
    fn estimate_and_advance(&mut self) -> Result<Vec<Message>, CoordError> {
        let state = self.state.as_ref().expect("mission started");
        debug_assert_eq!(state.phase, Phase::Estimating);
        let completed_iteration = state.iteration;
        let est = self.run_estimate()?;
        self.estimates.push(EstimateRecord {
            iteration: completed_iteration,
            time_s: self.last_time_s,
            estimate: est.clone(),
            n_datapoints: self.store.len(),
        });
        let mut replies = vec![Message::Estimate(EstimateReport {
            iteration: completed_iteration,
            position: to_wire_position(&est.position, self.cfg.origin.as_ref())?,
            rms_residual_db: est.rms_residual_db,
            n_points: est.n_points,
            converged: est.converged,
            time_s: self.last_time_s,
        })];

        let next = planner::next_iteration(
            self.state.as_ref().expect("mission started"),
            &est.position,
            &self.cfg.mission,
        )?;
        let finished = next.phase == Phase::Done;
        self.state = Some(next);
        if finished {
            let done = DoneReport {
                position: to_wire_position(&est.position, self.cfg.origin.as_ref())?,
                rms_residual_db: est.rms_residual_db,
                n_points: self.store.len(),
                iterations_run: self.cfg.mission.n_iterations,
                time_s: self.last_time_s,
            };
            self.done = Some(done.clone());
            replies.push(Message::Done(done));
        } else {
            replies.extend(self.commands_for_current_tasks()?);
        }
        Ok(replies)
    }

    /// Run a one-off estimate over a subset of the store.
    pub fn request_estimate(&self, filter: DataFilter) -> Result<PositionEstimate, CoordError> {
        Ok(multilat::estimate_position(
            &self.store.select(filter),
            &self.cfg.path_loss,
            &self.cfg.antenna,
            &self.estimator_options(),
        )?)
    }
}

/// Rebuild a datapoint store from a journal (or any message stream).
///
/// Estimate broadcasts in the stream update the "current belief" used for
/// low-confidence flagging, so flags come out exactly as the live server
/// assigned them. Iteration tags are likewise reconstructed from the
/// tasking commands seen.
pub fn replay_store<R: BufRead>(
    reader: R,
    cfg: &CoordConfig,
) -> Result<DatapointStore, CoordError> {
    let mut store = DatapointStore::default();
    let mut center: Option<LocalPoint> = match cfg.initial_estimate {
        InitialEstimate::Explicit(p) => {
            Some(LocalPoint::new(p.east, p.north, cfg.estimator.beacon_alt_m))
        }
        InitialEstimate::FromUplinks { .. } => None,
    };
    let mut iteration = 0usize;
    let origin = cfg.origin.as_ref();
    for msg in crate::wire::read_ndjson(reader)? {
        match msg {
            Message::Uplink(u) => {
                let receiver = to_local_position(&u.position, origin)?;
                let esp = signal::esp_from_rssi_snr(u.rssi_dbm, u.snr_db)?;
                let low_confidence = match center {
                    None => false,
                    Some(c) => {
                        let h = c.horizontal_distance_to(&receiver);
                        signal::vertical_angle_deg(h, c.up - receiver.up)
                            > cfg.antenna.valid_max_deg
                    }
                };
                store.insert(StoredPoint {
                    point: Datapoint::new(
                        u.msg_id,
                        u.gateway_id.clone(),
                        receiver,
                        esp,
                        low_confidence,
                    ),
                    iteration,
                    time_s: u.time_s,
                });
            }
            Message::Estimate(e) => {
                center = Some(to_local_position(&e.position, origin)?);
            }
            Message::WaypointCmd(c) => iteration = c.iteration,
            _ => {}
        }
    }
    Ok(store)
}

/// Run the server over byte streams: read ndjson messages, write ndjson
/// replies. Returns the final report if the mission finished, or `None`
/// if the input ended first.
pub fn serve<R: BufRead, W: Write>(
    coordinator: &mut Coordinator,
    input: R,
    mut output: W,
) -> Result<Option<DoneReport>, CoordError> {
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| CoordError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let msg = crate::wire::parse_line(&line, i + 1)?;
        for reply in coordinator.handle(&msg)? {
            output
                .write_all(to_line(&reply)?.as_bytes())
                .map_err(|e| CoordError::Io(e.to_string()))?;
        }
        output.flush().map_err(|e| CoordError::Io(e.to_string()))?;
        if coordinator.is_done() {
            break;
        }
    }
    Ok(coordinator.done_report().cloned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> CoordConfig {
        CoordConfig {
            mission: MissionConfig::discrete(1, 1, 2),
            path_loss: PathLossModel::esp_characterization(),
            antenna: AntennaModel::default(),
            estimator: EstimateOptions::default(),
            initial_estimate: InitialEstimate::Explicit(LocalPoint::ORIGIN),
            origin: None,
        }
    }

    fn uplink(msg_id: u64, gateway_id: &str, pos: LocalPoint, rssi: f64, time_s: f64) -> Message {
        Message::Uplink(UplinkReport {
            msg_id,
            gateway_id: gateway_id.into(),
            position: pos.into(),
            time_s,
            rssi_dbm: rssi,
            snr_db: 8.0,
        })
    }

    fn ready(drone_id: &str, pos: LocalPoint, time_s: f64) -> Message {
        Message::DroneStatus(DroneStatus {
            drone_id: drone_id.into(),
            event: DroneEvent::Ready,
            position: pos.into(),
            time_s,
            waypoint_index: None,
            iteration: None,
        })
    }

    fn reached(drone_id: &str, pos: LocalPoint, index: usize, time_s: f64) -> Message {
        Message::DroneStatus(DroneStatus {
            drone_id: drone_id.into(),
            event: DroneEvent::WaypointReached,
            position: pos.into(),
            time_s,
            waypoint_index: Some(index),
            iteration: Some(0),
        })
    }

    #[test]
    fn ingest_dedupes_on_msg_and_gateway() {
        let mut c = Coordinator::new(config()).unwrap();
        let pos = LocalPoint::new(10.0, 0.0, 15.0);
        assert!(c.ingest(&sample_uplink(1, "gw-1", pos)).unwrap());
        assert!(!c.ingest(&sample_uplink(1, "gw-1", pos)).unwrap());
        // Same message heard by another gateway is new information.
        assert!(c.ingest(&sample_uplink(1, "gw-2", pos)).unwrap());
        assert!(c.ingest(&sample_uplink(2, "gw-1", pos)).unwrap());
        assert_eq!(c.store().len(), 3);
    }

    fn sample_uplink(msg_id: u64, gw: &str, pos: LocalPoint) -> UplinkReport {
        UplinkReport {
            msg_id,
            gateway_id: gw.into(),
            position: pos.into(),
            time_s: 1.0,
            rssi_dbm: -70.0,
            snr_db: 8.0,
        }
    }

    #[test]
    fn ingest_computes_esp_exactly() {
        let mut c = Coordinator::new(config()).unwrap();
        c.ingest(&sample_uplink(5, "gw-1", LocalPoint::new(50.0, 0.0, 15.0)))
            .unwrap();
        let expected = signal::esp_from_rssi_snr(-70.0, 8.0).unwrap();
        assert_eq!(c.store().rows()[0].point.esp_dbm, expected);
    }

    #[test]
    fn ingest_rejects_geo_without_origin() {
        let mut c = Coordinator::new(config()).unwrap();
        let geo_pos = GeoPoint::new(46.5, 6.5, 400.0).unwrap();
        let mut u = sample_uplink(1, "gw-1", LocalPoint::ORIGIN);
        u.position = geo_pos.into();
        assert!(c.ingest(&u).is_err());
    }

    #[test]
    fn ingest_flags_overhead_receptions() {
        // Receiver almost directly above the believed position: the angle
        // exceeds the validated antenna range, so the point gets flagged.
        let mut c = Coordinator::new(config()).unwrap();
        c.ingest(&sample_uplink(
            1,
            "drone-0",
            LocalPoint::new(5.0, 0.0, 40.0),
        ))
        .unwrap();
        assert!(c.store().rows()[0].point.low_confidence);
        c.ingest(&sample_uplink(2, "gw-1", LocalPoint::new(200.0, 0.0, 15.0)))
            .unwrap();
        assert!(!c.store().rows()[1].point.low_confidence);
    }

    #[test]
    fn full_single_drone_mission_over_typed_messages() {
        // Truth at (20, 30): the coordinator should converge near it when
        // fed noiseless uplinks from its commanded waypoints.
        let truth = LocalPoint::new(20.0, 30.0, 0.0);
        let mut c = Coordinator::new(CoordConfig {
            mission: MissionConfig::discrete(1, 2, 2),
            ..config()
        })
        .unwrap();
        let mut msg_id = 0u64;
        let mut time = 0.0;
        let mut make_uplinks = |pos: LocalPoint, time: &mut f64| -> Vec<Message> {
            let h = truth.horizontal_distance_to(&pos);
            let dv = truth.up - pos.up;
            let dist = (h * h + dv * dv).sqrt();
            let theta = signal::vertical_angle_deg(h, dv);
            let esp = signal::expected_esp(
                dist,
                theta,
                &PathLossModel::esp_characterization(),
                &AntennaModel::default(),
            )
            .unwrap();
            msg_id += 1;
            *time += 4.0;
            // snr must match the uplink() helper's, or the server's ESP
            // recovery would see a synthetic bias.
            vec![uplink(
                msg_id,
                "drone-0",
                pos,
                signal::rssi_from_esp_snr(esp, 8.0),
                *time,
            )]
        };

        let replies = c
            .handle(&ready("drone-0", LocalPoint::new(0.0, 0.0, 40.0), 0.0))
            .unwrap();
        // Initial belief broadcast plus one waypoint command.
        assert_eq!(replies.len(), 2);
        let Message::Estimate(e0) = &replies[0] else {
            panic!("expected estimate")
        };
        assert_eq!(e0.n_points, 0);
        let Message::WaypointCmd(cmd) = &replies[1] else {
            panic!("expected command")
        };
        let wps: Vec<LocalPoint> = cmd
            .waypoints
            .as_ref()
            .unwrap()
            .iter()
            .map(|w| to_local_position(w, None).unwrap())
            .collect();
        assert_eq!(wps.len(), 3);
        assert_eq!(cmd.dwell_s, Some(40.0));

        // Fly the plan: at each waypoint, deliver uplinks then the status.
        let mut pending = vec![(0usize, wps)];
        let mut iterations_seen = 0;
        while let Some((iter, wps)) = pending.pop() {
            let mut new_cmds = Vec::new();
            for (i, wp) in wps.iter().enumerate() {
                for u in make_uplinks(*wp, &mut time) {
                    c.handle(&u).unwrap();
                }
                let replies = c.handle(&reached("drone-0", *wp, i, time)).unwrap();
                for r in replies {
                    match r {
                        Message::Estimate(e) => {
                            assert_eq!(e.iteration, iter);
                            iterations_seen += 1;
                        }
                        Message::WaypointCmd(cmd) => {
                            let wps: Vec<LocalPoint> = cmd
                                .waypoints
                                .as_ref()
                                .unwrap()
                                .iter()
                                .map(|w| to_local_position(w, None).unwrap())
                                .collect();
                            new_cmds.push((cmd.iteration, wps));
                        }
                        Message::Done(d) => {
                            let pos = to_local_position(&d.position, None).unwrap();
                            let err = pos.horizontal_distance_to(&truth);
                            assert!(err < 1.0, "final error = {err}");
                            assert_eq!(d.iterations_run, 2);
                        }
                        other => panic!("unexpected reply {other:?}"),
                    }
                }
            }
            pending.extend(new_cmds);
        }
        assert_eq!(iterations_seen, 2);
        assert!(c.is_done());
        assert_eq!(c.estimates().len(), 2);
    }

    #[test]
    fn unknown_drone_is_rejected() {
        let mut c = Coordinator::new(config()).unwrap();
        let err = c
            .handle(&ready("drone-9", LocalPoint::ORIGIN, 0.0))
            .unwrap_err();
        assert!(matches!(err, CoordError::UnknownDrone { .. }));
    }

    #[test]
    fn server_rejects_inbound_server_messages() {
        let mut c = Coordinator::new(config()).unwrap();
        let est = Message::Estimate(EstimateReport {
            iteration: 0,
            position: LocalPoint::ORIGIN.into(),
            rms_residual_db: 0.0,
            n_points: 0,
            converged: false,
            time_s: 0.0,
        });
        assert!(matches!(
            c.handle(&est),
            Err(CoordError::NotAccepted { kind: "estimate" })
        ));
    }

    #[test]
    fn from_uplinks_start_waits_for_enough_data() {
        let truth = LocalPoint::new(40.0, -25.0, 0.0);
        let cfg = CoordConfig {
            initial_estimate: InitialEstimate::FromUplinks { min_points: 3 },
            ..config()
        };
        let mut c = Coordinator::new(cfg).unwrap();
        assert!(c
            .handle(&ready("drone-0", LocalPoint::new(0.0, 0.0, 40.0), 0.0))
            .unwrap()
            .is_empty());
        let gws = [
            LocalPoint::new(300.0, 100.0, 15.0),
            LocalPoint::new(-250.0, 200.0, 15.0),
            LocalPoint::new(50.0, -350.0, 15.0),
        ];
        for (i, gw) in gws.iter().enumerate() {
            let h = truth.horizontal_distance_to(gw);
            let dv = truth.up - gw.up;
            let dist = (h * h + dv * dv).sqrt();
            let theta = signal::vertical_angle_deg(h, dv);
            let esp = signal::expected_esp(
                dist,
                theta,
                &PathLossModel::esp_characterization(),
                &AntennaModel::default(),
            )
            .unwrap();
            let replies = c
                .handle(&uplink(
                    1,
                    &format!("gw-{i}"),
                    *gw,
                    signal::rssi_from_esp_snr(esp, 8.0),
                    1.0,
                ))
                .unwrap();
            if i < 2 {
                assert!(replies.is_empty(), "started too early at gateway {i}");
            } else {
                // Third gateway completes the coarse fix; mission starts.
                assert!(!replies.is_empty());
                let Message::Estimate(e) = &replies[0] else {
                    panic!()
                };
                let pos = to_local_position(&e.position, None).unwrap();
                assert!(pos.horizontal_distance_to(&truth) < 1.0);
            }
        }
    }

    #[test]
    fn journal_replay_reconstructs_store() {
        use std::sync::{Arc, Mutex};

        #[derive(Clone, Default)]
        struct SharedBuf(Arc<Mutex<Vec<u8>>>);
        impl Write for SharedBuf {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.lock().unwrap().extend_from_slice(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }

        let cfg = config();
        let buf = SharedBuf::default();
        let mut c = Coordinator::new(cfg.clone()).unwrap();
        c.set_journal(Box::new(buf.clone()));
        c.handle(&ready("drone-0", LocalPoint::new(0.0, 0.0, 40.0), 0.0))
            .unwrap();
        for i in 0..5 {
            c.handle(&uplink(
                i,
                "gw-1",
                LocalPoint::new(100.0 + i as f64, 50.0, 15.0),
                -70.0 - i as f64,
                i as f64,
            ))
            .unwrap();
            // Duplicate deliveries must not change the replayed store
            // either: they are journaled but deduped on both paths.
            c.handle(&uplink(
                i,
                "gw-1",
                LocalPoint::new(100.0 + i as f64, 50.0, 15.0),
                -70.0 - i as f64,
                i as f64,
            ))
            .unwrap();
        }
        let journal_bytes = buf.0.lock().unwrap().clone();
        let replayed = replay_store(&journal_bytes[..], &cfg).unwrap();
        assert_eq!(replayed.len(), c.store().len());
        assert_eq!(replayed.rows(), c.store().rows());
    }
}
