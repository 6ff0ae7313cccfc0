//! Position estimation from ESP datapoints: a coarse grid search seeds a
//! damped Gauss-Newton refinement of the 2-D transmitter position, with
//! residuals formed in the dB domain against the fitted path-loss curve.
//!
//! The transmitter altitude is not observable from near-horizontal links,
//! so the vertical coordinate is pinned to a configured value and only
//! east/north are solved for.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::LocalPoint;
use crate::signal::{self, AntennaModel, PathLossModel, SignalError};

/// Errors from position estimation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("need at least {needed} usable datapoints, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("receiver geometry is degenerate: {reason}")]
    DegenerateGeometry { reason: String },
    #[error("candidate coincides with receiver {receiver_id}")]
    ZeroDistance { receiver_id: String },
    #[error("invalid option: {reason}")]
    InvalidOptions { reason: String },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("csv row {row}: {reason}")]
    Csv { row: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

/// One usable measurement: where it was received and how strong it was.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Datapoint {
    pub msg_id: u64,
    /// Identifier of the receiving gateway (fixed or drone).
    pub source_id: String,
    pub receiver_pos: LocalPoint,
    pub esp_dbm: f64,
    /// Set when the antenna model had to extrapolate past its validated
    /// angle range for this reception; such points are dropped by default.
    pub low_confidence: bool,
}

impl Datapoint {
    pub fn new(
        msg_id: u64,
        source_id: impl Into<String>,
        receiver_pos: LocalPoint,
        esp_dbm: f64,
        low_confidence: bool,
    ) -> Self {
        Self {
            msg_id,
            source_id: source_id.into(),
            receiver_pos,
            esp_dbm,
            low_confidence,
        }
    }
}

/// Axis-aligned search region on the local tangent plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BBox {
    pub min_east: f64,
    pub min_north: f64,
    pub max_east: f64,
    pub max_north: f64,
}

impl BBox {
    pub fn validate(&self) -> Result<(), EstimateError> {
        let vals = [self.min_east, self.min_north, self.max_east, self.max_north];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(EstimateError::InvalidOptions {
                reason: "bbox coordinates must be finite".into(),
            });
        }
        if self.min_east >= self.max_east || self.min_north >= self.max_north {
            return Err(EstimateError::InvalidOptions {
                reason: "bbox must have positive extent".into(),
            });
        }
        Ok(())
    }

    fn expand(&self, margin: f64) -> BBox {
        BBox {
            min_east: self.min_east - margin,
            min_north: self.min_north - margin,
            max_east: self.max_east + margin,
            max_north: self.max_north + margin,
        }
    }
}

/// Tuning knobs for [`estimate_position`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateOptions {
    /// Vertical coordinate assumed for the transmitter, in meters.
    pub beacon_alt_m: f64,
    /// Refinement stops once the accepted step is shorter than this.
    pub tol_m: f64,
    pub max_iter: usize,
    /// Grid resolution per axis for the coarse initializer.
    pub grid_cells: usize,
    /// Search region; derived from receiver positions and the path-loss
    /// ranges they imply when absent.
    pub bbox: Option<BBox>,
    /// Keep datapoints flagged low-confidence instead of dropping them.
    pub keep_low_confidence: bool,
    /// Optional per-source weights applied to squared residuals; sources
    /// not listed weigh 1.
    pub source_weights: BTreeMap<String, f64>,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            beacon_alt_m: 0.0,
            tol_m: 0.01,
            max_iter: 100,
            grid_cells: 25,
            bbox: None,
            keep_low_confidence: false,
            source_weights: BTreeMap::new(),
        }
    }
}

impl EstimateOptions {
    pub fn validate(&self) -> Result<(), EstimateError> {
        if !self.beacon_alt_m.is_finite() {
            return Err(EstimateError::InvalidOptions {
                reason: "beacon_alt_m must be finite".into(),
            });
        }
        if !(self.tol_m > 0.0) {
            return Err(EstimateError::InvalidOptions {
                reason: format!("tol_m = {} must be positive", self.tol_m),
            });
        }
        if self.max_iter == 0 {
            return Err(EstimateError::InvalidOptions {
                reason: "max_iter must be at least 1".into(),
            });
        }
        if self.grid_cells < 2 {
            return Err(EstimateError::InvalidOptions {
                reason: "grid_cells must be at least 2".into(),
            });
        }
        if let Some(b) = &self.bbox {
            b.validate()?;
        }
        for (id, w) in &self.source_weights {
            if !w.is_finite() || *w < 0.0 {
                return Err(EstimateError::InvalidOptions {
                    reason: format!("weight for source {id} must be finite and non-negative"),
                });
            }
        }
        Ok(())
    }
}

/// The solver's answer plus diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub position: LocalPoint,
    /// Weighted RMS of ESP residuals at the estimate, in dB.
    pub rms_residual_db: f64,
    pub n_points: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// ESP residual of one datapoint at a candidate transmitter position:
/// measured minus modeled.
pub fn residual(
    candidate: &LocalPoint,
    point: &Datapoint,
    model: &PathLossModel,
    antenna: &AntennaModel,
) -> Result<f64, EstimateError> {
    let h = candidate.horizontal_distance_to(&point.receiver_pos);
    let dv = candidate.up - point.receiver_pos.up;
    let dist = (h * h + dv * dv).sqrt();
    if dist < 1e-9 {
        return Err(EstimateError::ZeroDistance {
            receiver_id: point.source_id.clone(),
        });
    }
    let theta = signal::vertical_angle_deg(h, dv);
    let modeled = signal::expected_esp(dist, theta, model, antenna)?;
    Ok(point.esp_dbm - modeled)
}

/// Residual with the distance floored away from zero, for solver internals
/// that must evaluate arbitrary candidates without erroring.
fn residual_clamped(
    east: f64,
    north: f64,
    up: f64,
    point: &Datapoint,
    model: &PathLossModel,
    antenna: &AntennaModel,
) -> f64 {
    let de = east - point.receiver_pos.east;
    let dn = north - point.receiver_pos.north;
    let h = (de * de + dn * dn).sqrt();
    let dv = up - point.receiver_pos.up;
    let dist = (h * h + dv * dv).sqrt().max(1e-6);
    let theta = signal::vertical_angle_deg(h, dv);
    // Models are validated before the solver loop; angle >= 0 by construction.
    let modeled = signal::expected_esp(dist, theta, model, antenna)
        .expect("validated model and non-negative angle");
    point.esp_dbm - modeled
}

struct Problem<'a> {
    points: &'a [Datapoint],
    weights: Vec<f64>,
    model: &'a PathLossModel,
    antenna: &'a AntennaModel,
    up: f64,
}

impl Problem<'_> {
    fn loss(&self, east: f64, north: f64) -> f64 {
        let mut sum = 0.0;
        for (p, w) in self.points.iter().zip(&self.weights) {
            let r = residual_clamped(east, north, self.up, p, self.model, self.antenna);
            sum += w * r * r;
        }
        sum
    }

    fn weighted_rms(&self, east: f64, north: f64) -> f64 {
        let wsum: f64 = self.weights.iter().sum();
        if wsum == 0.0 {
            return 0.0;
        }
        (self.loss(east, north) / wsum).sqrt()
    }
}

/// Coarse search: evaluate the loss at every cell center of an
/// `options.grid_cells`-per-axis grid over `bbox` and return the best cell.
pub fn grid_init(
    points: &[Datapoint],
    bbox: &BBox,
    grid_cells: usize,
    model: &PathLossModel,
    antenna: &AntennaModel,
    beacon_alt_m: f64,
) -> Result<LocalPoint, EstimateError> {
    bbox.validate()?;
    if grid_cells < 2 {
        return Err(EstimateError::InvalidOptions {
            reason: "grid_cells must be at least 2".into(),
        });
    }
    if points.is_empty() {
        return Err(EstimateError::InsufficientData { needed: 1, got: 0 });
    }
    model.validate()?;
    let prob = Problem {
        points,
        weights: vec![1.0; points.len()],
        model,
        antenna,
        up: beacon_alt_m,
    };
    let best = grid_scan(&prob, bbox, grid_cells, 1);
    Ok(best[0].0)
}

/// Scan the grid and return up to `k` low-loss cell centers with their
/// losses, ascending. Picks are kept at least two cells apart so multiple
/// candidates probe distinct basins instead of one cluster.
fn grid_scan(prob: &Problem, bbox: &BBox, cells: usize, k: usize) -> Vec<(LocalPoint, f64)> {
    const MIN_SEP_CELLS: usize = 2;
    let de = (bbox.max_east - bbox.min_east) / cells as f64;
    let dn = (bbox.max_north - bbox.min_north) / cells as f64;
    let mut scored: Vec<(f64, usize, usize)> = Vec::with_capacity(cells * cells);
    for i in 0..cells {
        let east = bbox.min_east + (i as f64 + 0.5) * de;
        for j in 0..cells {
            let north = bbox.min_north + (j as f64 + 0.5) * dn;
            scored.push((prob.loss(east, north), i, j));
        }
    }
    // Ties resolve to the lowest (i, j) scan order, keeping the pick stable.
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut picked: Vec<(usize, usize)> = Vec::new();
    let mut out = Vec::new();
    for (loss, i, j) in scored {
        if picked
            .iter()
            .any(|&(pi, pj)| pi.abs_diff(i) <= MIN_SEP_CELLS && pj.abs_diff(j) <= MIN_SEP_CELLS)
        {
            continue;
        }
        picked.push((i, j));
        out.push((
            LocalPoint::new(
                bbox.min_east + (i as f64 + 0.5) * de,
                bbox.min_north + (j as f64 + 0.5) * dn,
                prob.up,
            ),
            loss,
        ));
        if out.len() == k {
            break;
        }
    }
    out
}

/// Re-scan shrinking windows around `start` to walk it to within a small
/// fraction of the original cell size of its basin's bottom. Needed because
/// the top-level grid can be kilometers wide when fixed gateways sit far
/// from the search area, leaving single cells too coarse to seed the
/// Gauss-Newton polish reliably.
fn zoom(
    prob: &Problem,
    start: (LocalPoint, f64),
    cell_east: f64,
    cell_north: f64,
) -> (LocalPoint, f64) {
    const ZOOM_CELLS: usize = 9;
    const ZOOM_LEVELS: usize = 3;
    let mut best = start;
    let mut we = 1.5 * cell_east;
    let mut wn = 1.5 * cell_north;
    for _ in 0..ZOOM_LEVELS {
        let window = BBox {
            min_east: best.0.east - we,
            max_east: best.0.east + we,
            min_north: best.0.north - wn,
            max_north: best.0.north + wn,
        };
        let cand = grid_scan(prob, &window, ZOOM_CELLS, 1)[0];
        if cand.1 < best.1 {
            best = cand;
        }
        we = 3.0 * we / ZOOM_CELLS as f64;
        wn = 3.0 * wn / ZOOM_CELLS as f64;
    }
    best
}

/// Derive a search region from the receiver footprint expanded by the
/// distances the path-loss model assigns to each measured ESP.
fn derive_bbox(
    points: &[Datapoint],
    model: &PathLossModel,
    antenna: &AntennaModel,
) -> Result<BBox, EstimateError> {
    let mut min_e = f64::INFINITY;
    let mut max_e = f64::NEG_INFINITY;
    let mut min_n = f64::INFINITY;
    let mut max_n = f64::NEG_INFINITY;
    let mut reach: f64 = 10.0;
    for p in points {
        min_e = min_e.min(p.receiver_pos.east);
        max_e = max_e.max(p.receiver_pos.east);
        min_n = min_n.min(p.receiver_pos.north);
        max_n = max_n.max(p.receiver_pos.north);
        let d = signal::distance_from_esp(p.esp_dbm, 0.0, model, antenna)?;
        reach = reach.max(d.min(10_000.0));
    }
    Ok(BBox {
        min_east: min_e,
        min_north: min_n,
        max_east: max_e,
        max_north: max_n,
    }
    .expand(reach))
}

fn check_geometry(points: &[Datapoint]) -> Result<(), EstimateError> {
    // Distinct receiver positions, horizontal plane only.
    let mut distinct: Vec<(f64, f64)> = Vec::new();
    for p in points {
        let pos = (p.receiver_pos.east, p.receiver_pos.north);
        if !distinct
            .iter()
            .any(|q| (q.0 - pos.0).abs() < 1e-9 && (q.1 - pos.1).abs() < 1e-9)
        {
            distinct.push(pos);
        }
    }
    if distinct.len() < 3 {
        return Err(EstimateError::DegenerateGeometry {
            reason: format!(
                "only {} distinct receiver positions; at least 3 non-collinear needed",
                distinct.len()
            ),
        });
    }
    // Collinearity via the 2x2 position scatter matrix: the smaller
    // eigenvalue vanishes when all receivers sit on one line.
    let n = distinct.len() as f64;
    let me = distinct.iter().map(|p| p.0).sum::<f64>() / n;
    let mn = distinct.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut see, mut snn, mut sen) = (0.0, 0.0, 0.0);
    for (e, npos) in &distinct {
        see += (e - me) * (e - me);
        snn += (npos - mn) * (npos - mn);
        sen += (e - me) * (npos - mn);
    }
    let tr = see + snn;
    let det = see * snn - sen * sen;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let lam_min = tr / 2.0 - disc;
    let lam_max = tr / 2.0 + disc;
    if lam_min <= 1e-12 * lam_max {
        return Err(EstimateError::DegenerateGeometry {
            reason: "receiver positions are collinear; the transmitter side is ambiguous".into(),
        });
    }
    Ok(())
}

/// Solve a 2x2 linear system; `None` when singular beyond tolerance.
fn solve2(a11: f64, a12: f64, a22: f64, b1: f64, b2: f64) -> Option<(f64, f64)> {
    let det = a11 * a22 - a12 * a12;
    let scale = a11.abs().max(a22.abs()).max(a12.abs());
    if det.abs() <= 1e-14 * scale * scale {
        return None;
    }
    Some(((b1 * a22 - b2 * a12) / det, (b2 * a11 - b1 * a12) / det))
}

/// Estimate the transmitter position from ESP datapoints.
///
/// Runs [`grid_init`] over the search region, refines the best few cells
/// with damped Gauss-Newton steps, and returns whichever candidate ends at
/// the lowest weighted loss (never worse than the grid pick).
pub fn estimate_position(
    points: &[Datapoint],
    model: &PathLossModel,
    antenna: &AntennaModel,
    options: &EstimateOptions,
) -> Result<PositionEstimate, EstimateError> {
    options.validate()?;
    model.validate()?;
    antenna.validate().map_err(EstimateError::Signal)?;

    let usable: Vec<Datapoint> = points
        .iter()
        .filter(|p| options.keep_low_confidence || !p.low_confidence)
        .cloned()
        .collect();
    if usable.len() < 3 {
        return Err(EstimateError::InsufficientData {
            needed: 3,
            got: usable.len(),
        });
    }
    for p in &usable {
        if !p.receiver_pos.is_finite() || !p.esp_dbm.is_finite() {
            return Err(EstimateError::InvalidOptions {
                reason: format!("datapoint msg {} has non-finite fields", p.msg_id),
            });
        }
    }
    check_geometry(&usable)?;

    let bbox = match options.bbox {
        Some(b) => b,
        None => derive_bbox(&usable, model, antenna)?,
    };
    bbox.validate()?;

    let weights: Vec<f64> = usable
        .iter()
        .map(|p| {
            options
                .source_weights
                .get(&p.source_id)
                .copied()
                .unwrap_or(1.0)
        })
        .collect();
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(EstimateError::InvalidOptions {
            reason: "all datapoints have zero weight".into(),
        });
    }
    let prob = Problem {
        points: &usable,
        weights,
        model,
        antenna,
        up: options.beacon_alt_m,
    };

    // A handful of well-separated starts guards against secondary basins;
    // each is walked toward its basin bottom by zoomed re-scans before the
    // Gauss-Newton polish.
    let starts = grid_scan(&prob, &bbox, options.grid_cells, 5);
    let grid_best_loss = starts[0].1;
    let cell_east = (bbox.max_east - bbox.min_east) / options.grid_cells as f64;
    let cell_north = (bbox.max_north - bbox.min_north) / options.grid_cells as f64;

    let mut best: Option<(f64, LocalPoint, usize, bool)> = None;
    for start in &starts {
        let zoomed = zoom(&prob, *start, cell_east, cell_north);
        let (pos, iters, converged, loss) = refine(&prob, &zoomed.0, options);
        let better = match &best {
            None => true,
            Some((bl, ..)) => loss < *bl,
        };
        if better {
            best = Some((loss, pos, iters, converged));
        }
    }
    let (mut best_loss, mut best_pos, iterations, converged) = best.expect("at least one start");

    // The refined answer must never lose to the plain grid pick.
    if grid_best_loss < best_loss {
        best_loss = grid_best_loss;
        best_pos = starts[0].0;
    }
    debug_assert!(best_loss <= grid_best_loss + 1e-12);

    Ok(PositionEstimate {
        position: best_pos,
        rms_residual_db: prob.weighted_rms(best_pos.east, best_pos.north),
        n_points: usable.len(),
        iterations,
        converged,
    })
}

/// Damped Gauss-Newton on the 2-D position, multiplicative damping adjusted
/// by whether a step reduces the loss.
fn refine(
    prob: &Problem,
    start: &LocalPoint,
    options: &EstimateOptions,
) -> (LocalPoint, usize, bool, f64) {
    const FD_STEP: f64 = 1e-3; // meters; central differences
    const DAMP_UP: f64 = 10.0;
    const DAMP_DOWN: f64 = 0.25;
    const DAMP_MIN: f64 = 1e-12;
    const DAMP_MAX: f64 = 1e12;
    const LOSS_FLOOR: f64 = 1e-20;

    let mut east = start.east;
    let mut north = start.north;
    let mut loss = prob.loss(east, north);
    let mut damping = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    'outer: for _ in 0..options.max_iter {
        if loss <= LOSS_FLOOR {
            converged = true;
            break;
        }
        // Weighted normal equations from central-difference Jacobians.
        let (mut a11, mut a12, mut a22) = (0.0, 0.0, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (p, w) in prob.points.iter().zip(&prob.weights) {
            let r = residual_clamped(east, north, prob.up, p, prob.model, prob.antenna);
            let re =
                (residual_clamped(east + FD_STEP, north, prob.up, p, prob.model, prob.antenna)
                    - residual_clamped(
                        east - FD_STEP,
                        north,
                        prob.up,
                        p,
                        prob.model,
                        prob.antenna,
                    ))
                    / (2.0 * FD_STEP);
            let rn =
                (residual_clamped(east, north + FD_STEP, prob.up, p, prob.model, prob.antenna)
                    - residual_clamped(
                        east,
                        north - FD_STEP,
                        prob.up,
                        p,
                        prob.model,
                        prob.antenna,
                    ))
                    / (2.0 * FD_STEP);
            a11 += w * re * re;
            a12 += w * re * rn;
            a22 += w * rn * rn;
            g1 += w * re * r;
            g2 += w * rn * r;
        }
        // Inner loop: raise damping until a step improves the loss.
        loop {
            let d11 = a11 * (1.0 + damping) + DAMP_MIN;
            let d22 = a22 * (1.0 + damping) + DAMP_MIN;
            let Some((se, sn)) = solve2(d11, a12, d22, -g1, -g2) else {
                converged = true; // flat gradient: nothing left to do
                break 'outer;
            };
            let (ne, nn) = (east + se, north + sn);
            let new_loss = prob.loss(ne, nn);
            if new_loss < loss {
                east = ne;
                north = nn;
                loss = new_loss;
                damping = (damping * DAMP_DOWN).max(DAMP_MIN);
                iterations += 1;
                if (se * se + sn * sn).sqrt() < options.tol_m {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            damping *= DAMP_UP;
            if damping > DAMP_MAX {
                // No descent direction at numerical resolution: converged.
                converged = true;
                break 'outer;
            }
        }
    }
    (
        LocalPoint::new(east, north, prob.up),
        iterations,
        converged,
        loss,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct DatapointRow {
    msg_id: u64,
    source_id: String,
    east_m: f64,
    north_m: f64,
    up_m: f64,
    esp_dbm: f64,
    low_confidence: bool,
}

/// Read datapoints from CSV with header
/// `msg_id,source_id,east_m,north_m,up_m,esp_dbm,low_confidence`.
pub fn read_datapoints_csv<R: Read>(reader: R) -> Result<Vec<Datapoint>, EstimateError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<DatapointRow>().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| EstimateError::Csv {
            row,
            reason: e.to_string(),
        })?;
        if ![rec.east_m, rec.north_m, rec.up_m, rec.esp_dbm]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(EstimateError::Csv {
                row,
                reason: "non-finite numeric field".into(),
            });
        }
        out.push(Datapoint {
            msg_id: rec.msg_id,
            source_id: rec.source_id,
            receiver_pos: LocalPoint::new(rec.east_m, rec.north_m, rec.up_m),
            esp_dbm: rec.esp_dbm,
            low_confidence: rec.low_confidence,
        });
    }
    Ok(out)
}

/// Write datapoints in the same CSV schema [`read_datapoints_csv`] accepts.
pub fn write_datapoints_csv<W: Write>(
    writer: W,
    points: &[Datapoint],
) -> Result<(), EstimateError> {
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(DatapointRow {
            msg_id: p.msg_id,
            source_id: p.source_id.clone(),
            east_m: p.receiver_pos.east,
            north_m: p.receiver_pos.north,
            up_m: p.receiver_pos.up,
            esp_dbm: p.esp_dbm,
            low_confidence: p.low_confidence,
        })
        .map_err(|e| EstimateError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| EstimateError::Io(e.to_string()))?;
    Ok(())
}

/// [`read_datapoints_csv`] from a file path.
pub fn read_datapoints_file<P: AsRef<Path>>(path: P) -> Result<Vec<Datapoint>, EstimateError> {
    let f = std::fs::File::open(path).map_err(|e| EstimateError::Io(e.to_string()))?;
    read_datapoints_csv(f)
}
