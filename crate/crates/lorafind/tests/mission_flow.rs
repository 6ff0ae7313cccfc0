//! End-to-end flow equivalence: the in-process mission loop, the
//! byte-stream server, and journal replay must all tell the same story.

use std::io::Write;
use std::sync::{Arc, Mutex};

use lorafind::coord::{replay_store, serve, CoordConfig, Coordinator, InitialEstimate};
use lorafind::run::{run_mission, InitialFix, MissionResult, RunConfig};
use lorafind::wire::{read_ndjson, to_line, Message};

/// Clonable journal sink so the bytes survive the coordinator.
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

fn journal_mission(preset: &str, seed: u64) -> (RunConfig, MissionResult, Vec<u8>) {
    let cfg = RunConfig::preset(preset).unwrap();
    let buf = SharedBuf::default();
    let (result, _world) = run_mission(&cfg, seed, Some(Box::new(buf.clone()))).unwrap();
    let bytes = buf.0.lock().unwrap().clone();
    (cfg, result, bytes)
}

/// Server config equivalent to what `run_mission` builds for a
/// network-initial run (the only mode whose starting belief is fully
/// determined by the config plus the uplink stream).
fn coord_config(cfg: &RunConfig) -> CoordConfig {
    let InitialFix::NetworkFix { min_points, .. } = cfg.initial else {
        panic!("test requires the network-fix preset");
    };
    CoordConfig {
        mission: cfg.mission.clone(),
        path_loss: cfg.world.path_loss,
        antenna: cfg.world.antenna,
        estimator: cfg.estimator.clone(),
        initial_estimate: InitialEstimate::FromUplinks { min_points },
        origin: cfg.world.origin,
    }
}

fn split_journal(journal: &[u8]) -> (Vec<u8>, String) {
    let mut input = Vec::new();
    let mut replies = String::new();
    for msg in read_ndjson(journal).unwrap() {
        let line = to_line(&msg).unwrap();
        match msg {
            Message::Uplink(_) | Message::DroneStatus(_) => {
                input.extend_from_slice(line.as_bytes())
            }
            Message::WaypointCmd(_) | Message::Estimate(_) | Message::Done(_) => {
                replies.push_str(&line)
            }
        }
    }
    (input, replies)
}

#[test]
fn byte_stream_server_reproduces_journaled_replies() {
    let (cfg, result, journal) = journal_mission("network-initial", 7);
    let (input, expected_replies) = split_journal(&journal);

    let mut coordinator = Coordinator::new(coord_config(&cfg)).unwrap();
    let mut output = Vec::new();
    let report = serve(&mut coordinator, &input[..], &mut output)
        .unwrap()
        .expect("mission finishes before the input runs out");

    assert_eq!(String::from_utf8(output).unwrap(), expected_replies);
    assert_eq!(report.n_points, result.n_datapoints);
    assert_eq!(report.iterations_run, result.iterations_run);
    assert!((report.time_s - result.flight_time_s).abs() < 1e-9);
}

#[test]
fn journal_replay_rebuilds_the_live_store() {
    let (cfg, _result, journal) = journal_mission("network-initial", 11);
    let (input, _) = split_journal(&journal);

    // The served coordinator's store is the live article...
    let ccfg = coord_config(&cfg);
    let mut coordinator = Coordinator::new(ccfg.clone()).unwrap();
    serve(&mut coordinator, &input[..], &mut Vec::new()).unwrap();

    // ...and the offline replay must match it row for row.
    let replayed = replay_store(&journal[..], &ccfg).unwrap();
    assert_eq!(replayed.rows(), coordinator.store().rows());
    assert!(!replayed.is_empty());
}

#[test]
fn duplicated_stream_changes_nothing() {
    let (cfg, _result, journal) = journal_mission("network-initial", 13);
    let ccfg = coord_config(&cfg);

    let once = replay_store(&journal[..], &ccfg).unwrap();
    let mut doubled = journal.clone();
    doubled.extend_from_slice(&journal);
    let twice = replay_store(&doubled[..], &ccfg).unwrap();

    assert_eq!(once.rows(), twice.rows());
}

#[test]
fn journaled_estimates_do_not_regress_at_the_end() {
    // Each broadcast estimate should use strictly more data than the last;
    // the final one is the done report's position.
    let (_cfg, result, journal) = journal_mission("network-initial", 17);
    let msgs = read_ndjson(&journal[..]).unwrap();
    let mut n_points_seen = Vec::new();
    let mut done_position = None;
    for msg in &msgs {
        match msg {
            Message::Estimate(e) => n_points_seen.push(e.n_points),
            Message::Done(d) => done_position = Some(d.position),
            _ => {}
        }
    }
    assert!(
        n_points_seen.windows(2).all(|w| w[0] < w[1]),
        "{n_points_seen:?}"
    );
    let done_position = done_position.expect("done broadcast present");
    let final_local = lorafind::wire::to_local_position(&done_position, None).unwrap();
    assert_eq!(final_local, result.final_position);
}
