//! Newline-delimited JSON message schema spoken between the coordination
//! server, gateways, and drones.
//!
//! One JSON object per line, discriminated by a `type` field. Every parse
//! is strict: unknown types and unknown fields are rejected, as are
//! non-finite numbers, so a journal or socket stream either replays
//! exactly or fails loudly at the offending line.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoPoint, LocalPoint};
use crate::planner::OrbitDirection;

/// Errors from parsing or validating wire messages.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid message: {reason}")]
    Invalid { reason: String },
    #[error("io error: {0}")]
    Io(String),
}

/// A position either in geodetic coordinates or on the local tangent
/// plane; the field names disambiguate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WirePosition {
    Geo(GeoPoint),
    Local(LocalPoint),
}

impl WirePosition {
    pub fn is_finite(&self) -> bool {
        match self {
            WirePosition::Geo(g) => g.validate().is_ok(),
            WirePosition::Local(l) => l.is_finite(),
        }
    }
}

impl From<LocalPoint> for WirePosition {
    fn from(p: LocalPoint) -> Self {
        WirePosition::Local(p)
    }
}

impl From<GeoPoint> for WirePosition {
    fn from(p: GeoPoint) -> Self {
        WirePosition::Geo(p)
    }
}

/// Convert a local position for the wire: geodetic when an origin is
/// declared, local offsets otherwise.
pub fn to_wire_position(
    p: &LocalPoint,
    origin: Option<&GeoPoint>,
) -> Result<WirePosition, WireError> {
    match origin {
        Some(o) => Ok(WirePosition::Geo(crate::geo::from_local(p, o).map_err(
            |e| WireError::Invalid {
                reason: e.to_string(),
            },
        )?)),
        None => Ok(WirePosition::Local(*p)),
    }
}

/// Resolve a wire position onto the local tangent plane.
pub fn to_local_position(
    p: &WirePosition,
    origin: Option<&GeoPoint>,
) -> Result<LocalPoint, WireError> {
    match p {
        WirePosition::Local(l) => Ok(*l),
        WirePosition::Geo(g) => match origin {
            Some(o) => crate::geo::to_local(g, o).map_err(|e| WireError::Invalid {
                reason: e.to_string(),
            }),
            None => Err(WireError::Invalid {
                reason: "geodetic position received but no origin is configured".into(),
            }),
        },
    }
}

/// A gateway's report of one received beacon packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UplinkReport {
    /// Beacon emission counter; receptions of the same emission share it.
    pub msg_id: u64,
    pub gateway_id: String,
    /// Receiver position at reception time.
    pub position: WirePosition,
    pub time_s: f64,
    pub rssi_dbm: f64,
    pub snr_db: f64,
}

/// Orbit parameters as sent to a drone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireOrbit {
    pub center: WirePosition,
    pub radius_m: f64,
    pub angular_span_deg: f64,
    pub direction: OrbitDirection,
}

/// Server-to-drone tasking: either an ordered waypoint list (with a dwell
/// at each) or an orbit. Exactly one of the two must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointCommand {
    pub drone_id: String,
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waypoints: Option<Vec<WirePosition>>,
    /// Hover time at each waypoint, seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dwell_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orbit: Option<WireOrbit>,
}

/// Drone lifecycle events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DroneEvent {
    /// Powered up and listening for commands.
    Ready,
    /// Finished the dwell at one waypoint.
    WaypointReached,
    /// Completed the commanded orbit span.
    OrbitComplete,
}

/// Drone-to-server progress report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroneStatus {
    pub drone_id: String,
    pub event: DroneEvent,
    pub position: WirePosition,
    pub time_s: f64,
    /// Index into the commanded waypoint list, for `waypoint_reached`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waypoint_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
}

/// Server broadcast of a refreshed position estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateReport {
    pub iteration: usize,
    pub position: WirePosition,
    pub rms_residual_db: f64,
    pub n_points: usize,
    pub converged: bool,
    pub time_s: f64,
}

/// Server broadcast ending the mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoneReport {
    pub position: WirePosition,
    pub rms_residual_db: f64,
    pub n_points: usize,
    pub iterations_run: usize,
    pub time_s: f64,
}

/// Everything that can travel on the wire (and into journals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Uplink(UplinkReport),
    WaypointCmd(WaypointCommand),
    DroneStatus(DroneStatus),
    Estimate(EstimateReport),
    Done(DoneReport),
}

fn finite(value: f64, field: &str) -> Result<(), WireError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(WireError::Invalid {
            reason: format!("{field} = {value} is not finite"),
        })
    }
}

fn finite_pos(pos: &WirePosition, field: &str) -> Result<(), WireError> {
    if pos.is_finite() {
        Ok(())
    } else {
        Err(WireError::Invalid {
            reason: format!("{field} holds a non-finite or out-of-range position"),
        })
    }
}

impl Message {
    /// Structural checks beyond what the JSON schema enforces.
    pub fn validate(&self) -> Result<(), WireError> {
        match self {
            Message::Uplink(u) => {
                finite_pos(&u.position, "position")?;
                finite(u.time_s, "time_s")?;
                finite(u.rssi_dbm, "rssi_dbm")?;
                finite(u.snr_db, "snr_db")?;
                if u.gateway_id.is_empty() {
                    return Err(WireError::Invalid {
                        reason: "gateway_id must not be empty".into(),
                    });
                }
            }
            Message::WaypointCmd(c) => {
                if c.drone_id.is_empty() {
                    return Err(WireError::Invalid {
                        reason: "drone_id must not be empty".into(),
                    });
                }
                match (&c.waypoints, &c.orbit) {
                    (Some(wps), None) => {
                        if wps.is_empty() {
                            return Err(WireError::Invalid {
                                reason: "waypoint list must not be empty".into(),
                            });
                        }
                        for (i, w) in wps.iter().enumerate() {
                            finite_pos(w, &format!("waypoints[{i}]"))?;
                        }
                        if let Some(d) = c.dwell_s {
                            finite(d, "dwell_s")?;
                            if d < 0.0 {
                                return Err(WireError::Invalid {
                                    reason: format!("dwell_s = {d} must be non-negative"),
                                });
                            }
                        }
                    }
                    (None, Some(o)) => {
                        finite_pos(&o.center, "orbit.center")?;
                        finite(o.radius_m, "orbit.radius_m")?;
                        finite(o.angular_span_deg, "orbit.angular_span_deg")?;
                        if o.radius_m <= 0.0 || o.angular_span_deg <= 0.0 {
                            return Err(WireError::Invalid {
                                reason: "orbit radius and span must be positive".into(),
                            });
                        }
                    }
                    (Some(_), Some(_)) => {
                        return Err(WireError::Invalid {
                            reason: "command carries both waypoints and an orbit".into(),
                        })
                    }
                    (None, None) => {
                        return Err(WireError::Invalid {
                            reason: "command carries neither waypoints nor an orbit".into(),
                        })
                    }
                }
            }
            Message::DroneStatus(s) => {
                if s.drone_id.is_empty() {
                    return Err(WireError::Invalid {
                        reason: "drone_id must not be empty".into(),
                    });
                }
                finite_pos(&s.position, "position")?;
                finite(s.time_s, "time_s")?;
                if s.event == DroneEvent::WaypointReached && s.waypoint_index.is_none() {
                    return Err(WireError::Invalid {
                        reason: "waypoint_reached status needs waypoint_index".into(),
                    });
                }
            }
            Message::Estimate(e) => {
                finite_pos(&e.position, "position")?;
                finite(e.rms_residual_db, "rms_residual_db")?;
                finite(e.time_s, "time_s")?;
            }
            Message::Done(d) => {
                finite_pos(&d.position, "position")?;
                finite(d.rms_residual_db, "rms_residual_db")?;
                finite(d.time_s, "time_s")?;
            }
        }
        Ok(())
    }
}

/// Serialize one message as a single newline-terminated JSON line.
pub fn to_line(msg: &Message) -> Result<String, WireError> {
    msg.validate()?;
    let mut s = serde_json::to_string(msg).map_err(|e| WireError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Parse one line. `line_no` is 1-based and only used for error context.
pub fn parse_line(line: &str, line_no: usize) -> Result<Message, WireError> {
    let msg: Message = serde_json::from_str(line.trim()).map_err(|e| WireError::Parse {
        line: line_no,
        reason: e.to_string(),
    })?;
    msg.validate().map_err(|e| WireError::Parse {
        line: line_no,
        reason: e.to_string(),
    })?;
    Ok(msg)
}

/// Read a whole ndjson stream, skipping blank lines.
pub fn read_ndjson<R: BufRead>(reader: R) -> Result<Vec<Message>, WireError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| WireError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uplink() -> Message {
        Message::Uplink(UplinkReport {
            msg_id: 42,
            gateway_id: "gw-1".into(),
            position: LocalPoint::new(10.5, -3.25, 15.0).into(),
            time_s: 12.3,
            rssi_dbm: -71.5,
            snr_db: 6.75,
        })
    }

    #[test]
    fn golden_uplink_line() {
        let line = to_line(&uplink()).unwrap();
        assert_eq!(
            line,
            "{\"type\":\"uplink\",\"msg_id\":42,\"gateway_id\":\"gw-1\",\
             \"position\":{\"east_m\":10.5,\"north_m\":-3.25,\"up_m\":15.0},\
             \"time_s\":12.3,\"rssi_dbm\":-71.5,\"snr_db\":6.75}\n"
        );
    }

    #[test]
    fn round_trips_every_variant() {
        let msgs = vec![
            uplink(),
            Message::Uplink(UplinkReport {
                msg_id: 1,
                gateway_id: "gw-2".into(),
                position: GeoPoint::new(46.52, 6.565, 412.0).unwrap().into(),
                time_s: 0.0,
                rssi_dbm: -101.0,
                snr_db: -4.5,
            }),
            Message::WaypointCmd(WaypointCommand {
                drone_id: "drone-0".into(),
                iteration: 0,
                waypoints: Some(vec![LocalPoint::new(0.0, 150.0, 40.0).into()]),
                dwell_s: Some(40.0),
                orbit: None,
            }),
            Message::WaypointCmd(WaypointCommand {
                drone_id: "drone-1".into(),
                iteration: 1,
                waypoints: None,
                dwell_s: None,
                orbit: Some(WireOrbit {
                    center: LocalPoint::new(5.0, -8.0, 40.0).into(),
                    radius_m: 70.0,
                    angular_span_deg: 360.0,
                    direction: OrbitDirection::CounterClockwise,
                }),
            }),
            Message::DroneStatus(DroneStatus {
                drone_id: "drone-0".into(),
                event: DroneEvent::WaypointReached,
                position: LocalPoint::new(0.0, 150.0, 40.0).into(),
                time_s: 77.7,
                waypoint_index: Some(0),
                iteration: Some(0),
            }),
            Message::DroneStatus(DroneStatus {
                drone_id: "drone-2".into(),
                event: DroneEvent::Ready,
                position: LocalPoint::new(4.0, 0.0, 40.0).into(),
                time_s: 0.0,
                waypoint_index: None,
                iteration: None,
            }),
            Message::Estimate(EstimateReport {
                iteration: 0,
                position: LocalPoint::new(12.0, -9.0, 0.0).into(),
                rms_residual_db: 2.41,
                n_points: 17,
                converged: true,
                time_s: 135.0,
            }),
            Message::Done(DoneReport {
                position: LocalPoint::new(11.5, -8.75, 0.0).into(),
                rms_residual_db: 2.2,
                n_points: 33,
                iterations_run: 2,
                time_s: 260.4,
            }),
        ];
        for m in msgs {
            let line = to_line(&m).unwrap();
            assert_eq!(line.matches('\n').count(), 1);
            let back = parse_line(&line, 1).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn geo_and_local_positions_disambiguate() {
        let geo = "{\"type\":\"drone_status\",\"drone_id\":\"d\",\"event\":\"ready\",\
                   \"position\":{\"lat\":46.5,\"lon\":6.5,\"alt\":400.0},\"time_s\":0.0}";
        let m = parse_line(geo, 1).unwrap();
        let Message::DroneStatus(s) = m else { panic!() };
        assert!(matches!(s.position, WirePosition::Geo(_)));

        let local = "{\"type\":\"drone_status\",\"drone_id\":\"d\",\"event\":\"ready\",\
                     \"position\":{\"east_m\":1.0,\"north_m\":2.0,\"up_m\":3.0},\"time_s\":0.0}";
        let m = parse_line(local, 1).unwrap();
        let Message::DroneStatus(s) = m else { panic!() };
        assert!(matches!(s.position, WirePosition::Local(_)));
    }

    #[test]
    fn rejects_unknown_type_and_fields() {
        let bad_type = "{\"type\":\"teleport\",\"drone_id\":\"d\"}";
        assert!(matches!(
            parse_line(bad_type, 3),
            Err(WireError::Parse { line: 3, .. })
        ));
        let extra = "{\"type\":\"uplink\",\"msg_id\":1,\"gateway_id\":\"g\",\
                     \"position\":{\"east_m\":0.0,\"north_m\":0.0,\"up_m\":0.0},\
                     \"time_s\":0.0,\"rssi_dbm\":-70.0,\"snr_db\":5.0,\"bogus\":1}";
        assert!(parse_line(extra, 1).is_err());
    }

    #[test]
    fn rejects_non_finite_and_malformed_values() {
        // JSON has no NaN literal; a string where a number belongs fails.
        let nan = "{\"type\":\"uplink\",\"msg_id\":1,\"gateway_id\":\"g\",\
                   \"position\":{\"east_m\":0.0,\"north_m\":0.0,\"up_m\":0.0},\
                   \"time_s\":0.0,\"rssi_dbm\":\"NaN\",\"snr_db\":5.0}";
        assert!(parse_line(nan, 1).is_err());
        // Construction-side validation refuses non-finite values too.
        let msg = Message::Uplink(UplinkReport {
            msg_id: 1,
            gateway_id: "g".into(),
            position: LocalPoint::new(0.0, 0.0, 0.0).into(),
            time_s: f64::NAN,
            rssi_dbm: -70.0,
            snr_db: 5.0,
        });
        assert!(to_line(&msg).is_err());
    }

    #[test]
    fn command_needs_exactly_one_target_kind() {
        let both = Message::WaypointCmd(WaypointCommand {
            drone_id: "d".into(),
            iteration: 0,
            waypoints: Some(vec![LocalPoint::ORIGIN.into()]),
            dwell_s: None,
            orbit: Some(WireOrbit {
                center: LocalPoint::ORIGIN.into(),
                radius_m: 10.0,
                angular_span_deg: 360.0,
                direction: OrbitDirection::Clockwise,
            }),
        });
        assert!(to_line(&both).is_err());
        let neither = Message::WaypointCmd(WaypointCommand {
            drone_id: "d".into(),
            iteration: 0,
            waypoints: None,
            dwell_s: None,
            orbit: None,
        });
        assert!(to_line(&neither).is_err());
        let empty = Message::WaypointCmd(WaypointCommand {
            drone_id: "d".into(),
            iteration: 0,
            waypoints: Some(vec![]),
            dwell_s: None,
            orbit: None,
        });
        assert!(to_line(&empty).is_err());
    }

    #[test]
    fn ndjson_stream_reads_with_line_numbers() {
        let good = to_line(&uplink()).unwrap();
        let stream = format!("{good}\n{good}");
        let msgs = read_ndjson(stream.as_bytes()).unwrap();
        assert_eq!(msgs.len(), 2);

        let broken = format!("{good}not json\n");
        let err = read_ndjson(broken.as_bytes()).unwrap_err();
        assert!(matches!(err, WireError::Parse { line: 2, .. }));
    }

    #[test]
    fn f64_values_survive_the_wire_bit_exactly() {
        let mut m = uplink();
        if let Message::Uplink(u) = &mut m {
            u.rssi_dbm = -87.12345678901234;
            u.snr_db = 1e-300;
            u.time_s = 0.1 + 0.2; // classic non-representable sum
        }
        let line = to_line(&m).unwrap();
        let back = parse_line(&line, 1).unwrap();
        assert_eq!(back, m);
    }
}
