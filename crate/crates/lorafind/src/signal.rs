//! Radio signal modeling: ESP computation, antenna-angle compensation,
//! path-loss curves, shadowing noise, and fits of all three from
//! characterization data.
//!
//! ESP (estimated signal power) folds RSSI and SNR into one number that
//! tracks the wanted-signal power even when packets arrive below the noise
//! floor: `esp = rssi - 10*log10(1 + 10^(-snr/10))`. Distance inference
//! inverts a fitted `distance = a * exp(b * esp)` curve after compensating
//! the receive-antenna gain for the vertical angle to the transmitter.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest RSSI/ESP value accepted as a plausible measurement, in dBm.
pub const MIN_POWER_DBM: f64 = -150.0;
/// Highest RSSI/ESP value accepted as a plausible measurement, in dBm.
pub const MAX_POWER_DBM: f64 = 0.0;

/// Errors from signal-model validation, evaluation, and fitting.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("{field} = {value} is not finite")]
    NonFinite { field: &'static str, value: f64 },
    #[error("{field} = {value} outside accepted range [{min}, {max}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("path-loss model invalid: {reason}")]
    InvalidModel { reason: String },
    #[error("need at least {needed} samples ({context}), got {got}")]
    InsufficientData {
        needed: usize,
        got: usize,
        context: &'static str,
    },
    #[error("samples are degenerate for fitting: {reason}")]
    DegenerateFit { reason: String },
    #[error("csv row {row}: {reason}")]
    Csv { row: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

/// Estimated signal power from RSSI and SNR, both in dB units.
///
/// For high SNR this approaches RSSI; for negative SNR it digs the wanted
/// signal out of a reading dominated by noise.
pub fn esp_from_rssi_snr(rssi_dbm: f64, snr_db: f64) -> Result<f64, SignalError> {
    if !rssi_dbm.is_finite() {
        return Err(SignalError::NonFinite {
            field: "rssi_dbm",
            value: rssi_dbm,
        });
    }
    if !snr_db.is_finite() {
        return Err(SignalError::NonFinite {
            field: "snr_db",
            value: snr_db,
        });
    }
    Ok(rssi_dbm - 10.0 * (1.0 + 10f64.powf(-snr_db / 10.0)).log10())
}

/// The noise-fraction term `10*log10(1 + 10^(-snr/10))` that separates RSSI
/// from ESP. Adding it to an ESP value reconstructs the matching RSSI.
pub fn rssi_from_esp_snr(esp_dbm: f64, snr_db: f64) -> f64 {
    esp_dbm + 10.0 * (1.0 + 10f64.powf(-snr_db / 10.0)).log10()
}

/// One characterization sample: a received packet with known geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioSample {
    /// Ground-truth transmitter-receiver distance in meters, when known.
    pub distance_m: Option<f64>,
    /// Vertical angle between receiver antenna plane and transmitter,
    /// in degrees, when known.
    pub theta_deg: Option<f64>,
    pub rssi_dbm: f64,
    pub snr_db: f64,
    pub esp_dbm: f64,
}

impl RadioSample {
    /// Build a sample, deriving ESP from RSSI and SNR.
    pub fn new(
        distance_m: Option<f64>,
        theta_deg: Option<f64>,
        rssi_dbm: f64,
        snr_db: f64,
    ) -> Result<Self, SignalError> {
        if !(MIN_POWER_DBM..=MAX_POWER_DBM).contains(&rssi_dbm) {
            return Err(SignalError::OutOfRange {
                field: "rssi_dbm",
                value: rssi_dbm,
                min: MIN_POWER_DBM,
                max: MAX_POWER_DBM,
            });
        }
        if let Some(d) = distance_m {
            if !d.is_finite() || d <= 0.0 {
                return Err(SignalError::OutOfRange {
                    field: "distance_m",
                    value: d,
                    min: f64::MIN_POSITIVE,
                    max: f64::INFINITY,
                });
            }
        }
        if let Some(t) = theta_deg {
            if !t.is_finite() || !(0.0..=90.0).contains(&t) {
                return Err(SignalError::OutOfRange {
                    field: "theta_deg",
                    value: t,
                    min: 0.0,
                    max: 90.0,
                });
            }
        }
        let esp_dbm = esp_from_rssi_snr(rssi_dbm, snr_db)?;
        Ok(Self {
            distance_m,
            theta_deg,
            rssi_dbm,
            snr_db,
            esp_dbm,
        })
    }
}

/// Antenna gain versus vertical angle, as a linear attenuation in dB:
/// `gain = -(slope * theta + intercept)`.
///
/// The fit is only trusted up to `valid_max_deg`; beyond that the line is
/// extrapolated and the result is flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AntennaModel {
    pub slope_db_per_deg: f64,
    pub intercept_db: f64,
    pub valid_max_deg: f64,
}

impl Default for AntennaModel {
    fn default() -> Self {
        // Coefficients fitted from an anechoic-chamber sweep of the
        // gateway antenna used in the reference measurement campaign.
        Self {
            slope_db_per_deg: 0.5667,
            intercept_db: 1.38,
            valid_max_deg: 60.0,
        }
    }
}

/// An antenna gain value plus a flag marking extrapolation beyond the
/// model's validated angle range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntennaGain {
    pub db: f64,
    pub extrapolated: bool,
}

impl AntennaModel {
    pub fn validate(&self) -> Result<(), SignalError> {
        for (field, value) in [
            ("slope_db_per_deg", self.slope_db_per_deg),
            ("intercept_db", self.intercept_db),
            ("valid_max_deg", self.valid_max_deg),
        ] {
            if !value.is_finite() {
                return Err(SignalError::NonFinite { field, value });
            }
        }
        if self.valid_max_deg <= 0.0 {
            return Err(SignalError::OutOfRange {
                field: "valid_max_deg",
                value: self.valid_max_deg,
                min: f64::MIN_POSITIVE,
                max: 90.0,
            });
        }
        Ok(())
    }

    /// Total antenna gain at vertical angle `theta_deg` (>= 0).
    pub fn gain(&self, theta_deg: f64) -> Result<AntennaGain, SignalError> {
        if !theta_deg.is_finite() {
            return Err(SignalError::NonFinite {
                field: "theta_deg",
                value: theta_deg,
            });
        }
        if theta_deg < 0.0 {
            return Err(SignalError::OutOfRange {
                field: "theta_deg",
                value: theta_deg,
                min: 0.0,
                max: 90.0,
            });
        }
        Ok(AntennaGain {
            db: -(self.slope_db_per_deg * theta_deg + self.intercept_db),
            extrapolated: theta_deg > self.valid_max_deg,
        })
    }
}

/// Vertical angle in degrees between the horizontal plane at the receiver
/// and the line of sight to the transmitter.
pub fn vertical_angle_deg(horizontal_m: f64, vertical_m: f64) -> f64 {
    vertical_m.abs().atan2(horizontal_m.abs()).to_degrees()
}

/// Distance-versus-ESP curve. The exponential form is the primary model;
/// the linear form exists for side-by-side comparison on refit studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathLossModel {
    /// `distance = a * exp(b * esp)` with `a > 0`, `b < 0`.
    Exponential { a: f64, b: f64 },
    /// `distance = max(slope * esp + intercept, min_distance_m)`.
    Linear {
        slope_m_per_db: f64,
        intercept_m: f64,
        #[serde(default = "default_min_distance")]
        min_distance_m: f64,
    },
}

fn default_min_distance() -> f64 {
    0.1
}

impl PathLossModel {
    /// Exponential coefficients fitted on ESP from the reference urban
    /// measurement campaign.
    pub fn esp_characterization() -> Self {
        PathLossModel::Exponential {
            a: 0.1973,
            b: -0.0902,
        }
    }

    /// Exponential coefficients fitted on raw RSSI from the same campaign.
    pub fn rssi_characterization() -> Self {
        PathLossModel::Exponential {
            a: 0.2189,
            b: -0.0894,
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        match *self {
            PathLossModel::Exponential { a, b } => {
                if !a.is_finite() || !b.is_finite() {
                    return Err(SignalError::InvalidModel {
                        reason: format!("non-finite coefficients a={a}, b={b}"),
                    });
                }
                if a <= 0.0 {
                    return Err(SignalError::InvalidModel {
                        reason: format!("scale a={a} must be positive"),
                    });
                }
                if b >= 0.0 {
                    return Err(SignalError::InvalidModel {
                        reason: format!(
                            "rate b={b} must be negative (weaker signal, larger distance)"
                        ),
                    });
                }
            }
            PathLossModel::Linear {
                slope_m_per_db,
                intercept_m,
                min_distance_m,
            } => {
                if !slope_m_per_db.is_finite()
                    || !intercept_m.is_finite()
                    || !min_distance_m.is_finite()
                {
                    return Err(SignalError::InvalidModel {
                        reason: "non-finite linear coefficients".into(),
                    });
                }
                if slope_m_per_db >= 0.0 {
                    return Err(SignalError::InvalidModel {
                        reason: format!("slope {slope_m_per_db} must be negative"),
                    });
                }
                if min_distance_m <= 0.0 {
                    return Err(SignalError::InvalidModel {
                        reason: format!("min_distance_m {min_distance_m} must be positive"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Distance for a gain-compensated ESP value (no antenna term).
    fn distance_from_compensated(&self, esp_comp: f64) -> f64 {
        match *self {
            PathLossModel::Exponential { a, b } => a * (b * esp_comp).exp(),
            PathLossModel::Linear {
                slope_m_per_db,
                intercept_m,
                min_distance_m,
            } => (slope_m_per_db * esp_comp + intercept_m).max(min_distance_m),
        }
    }

    /// Gain-compensated ESP expected at `distance_m` (no antenna term).
    fn compensated_from_distance(&self, distance_m: f64) -> f64 {
        match *self {
            PathLossModel::Exponential { a, b } => (distance_m / a).ln() / b,
            PathLossModel::Linear {
                slope_m_per_db,
                intercept_m,
                ..
            } => (distance_m - intercept_m) / slope_m_per_db,
        }
    }
}

/// ESP expected at a receiver `distance_m` away with vertical angle
/// `theta_deg`: the path-loss curve inverted for ESP, plus antenna gain.
pub fn expected_esp(
    distance_m: f64,
    theta_deg: f64,
    model: &PathLossModel,
    antenna: &AntennaModel,
) -> Result<f64, SignalError> {
    model.validate()?;
    if !distance_m.is_finite() || distance_m <= 0.0 {
        return Err(SignalError::OutOfRange {
            field: "distance_m",
            value: distance_m,
            min: f64::MIN_POSITIVE,
            max: f64::INFINITY,
        });
    }
    let gain = antenna.gain(theta_deg)?;
    Ok(model.compensated_from_distance(distance_m) + gain.db)
}

/// Distance implied by a measured ESP at vertical angle `theta_deg`.
///
/// The antenna gain is subtracted before the path-loss curve is applied.
pub fn distance_from_esp(
    esp_dbm: f64,
    theta_deg: f64,
    model: &PathLossModel,
    antenna: &AntennaModel,
) -> Result<f64, SignalError> {
    model.validate()?;
    if !esp_dbm.is_finite() {
        return Err(SignalError::NonFinite {
            field: "esp_dbm",
            value: esp_dbm,
        });
    }
    let gain = antenna.gain(theta_deg)?;
    Ok(model.distance_from_compensated(esp_dbm - gain.db))
}

/// Lognormal shadowing: zero-mean Gaussian noise in the dB domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub sigma_db: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        // Conservative default; the reference campaign measured ~2 dB.
        Self { sigma_db: 2.5 }
    }
}

impl NoiseModel {
    /// Shadowing spread measured in the reference campaign.
    pub fn measured() -> Self {
        Self { sigma_db: 2.0 }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !self.sigma_db.is_finite() || self.sigma_db < 0.0 {
            return Err(SignalError::OutOfRange {
                field: "sigma_db",
                value: self.sigma_db,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        Ok(())
    }
}

/// Draw one noisy ESP observation for the given geometry.
pub fn sample_esp<R: Rng + ?Sized>(
    distance_m: f64,
    theta_deg: f64,
    model: &PathLossModel,
    antenna: &AntennaModel,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<f64, SignalError> {
    noise.validate()?;
    let mean = expected_esp(distance_m, theta_deg, model, antenna)?;
    if noise.sigma_db == 0.0 {
        return Ok(mean);
    }
    let normal = Normal::new(0.0, noise.sigma_db).expect("validated sigma");
    Ok(mean + normal.sample(rng))
}

/// A fitted path-loss model plus fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathLossFit {
    pub model: PathLossModel,
    /// RMS of distance residuals (meters) over the fitted samples.
    pub rms_residual_m: f64,
    pub n_samples: usize,
}

/// Which functional form [`fit_path_loss`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitForm {
    Exponential,
    Linear,
}

/// Fit a path-loss curve to characterization samples with known distances.
///
/// Antenna gain is subtracted from each sample's ESP first (angle treated
/// as 0 when unknown). The exponential form is fit as a linear regression
/// of `ln(distance)` on compensated ESP; the linear form regresses distance
/// directly.
pub fn fit_path_loss(
    samples: &[RadioSample],
    form: FitForm,
    antenna: &AntennaModel,
) -> Result<PathLossFit, SignalError> {
    let mut xs = Vec::new(); // compensated esp
    let mut ds = Vec::new(); // true distance
    for s in samples {
        let Some(d) = s.distance_m else { continue };
        let gain = antenna.gain(s.theta_deg.unwrap_or(0.0))?;
        xs.push(s.esp_dbm - gain.db);
        ds.push(d);
    }
    if xs.len() < 2 {
        return Err(SignalError::InsufficientData {
            needed: 2,
            got: xs.len(),
            context: "path-loss fit requires samples with known distance",
        });
    }
    let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - xs.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread < 1e-9 {
        return Err(SignalError::DegenerateFit {
            reason: "all compensated ESP values identical; curve slope is unconstrained".into(),
        });
    }

    let ys: Vec<f64> = match form {
        FitForm::Exponential => ds.iter().map(|d| d.ln()).collect(),
        FitForm::Linear => ds.clone(),
    };
    let (slope, intercept) = least_squares_line(&xs, &ys);
    let model = match form {
        FitForm::Exponential => PathLossModel::Exponential {
            a: intercept.exp(),
            b: slope,
        },
        FitForm::Linear => PathLossModel::Linear {
            slope_m_per_db: slope,
            intercept_m: intercept,
            min_distance_m: default_min_distance(),
        },
    };
    model.validate()?;
    let mut sq = 0.0;
    for (x, d) in xs.iter().zip(&ds) {
        let r = model.distance_from_compensated(*x) - d;
        sq += r * r;
    }
    Ok(PathLossFit {
        model,
        rms_residual_m: (sq / ds.len() as f64).sqrt(),
        n_samples: ds.len(),
    })
}

fn least_squares_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Estimate the shadowing spread from repeated samples at identical
/// geometries.
///
/// Samples are grouped by exact (distance, angle) key; the deviation of
/// each sample's ESP from its group mean pools into one variance with
/// `n - groups` degrees of freedom. Groups with a single sample contribute
/// nothing.
pub fn fit_noise(samples: &[RadioSample]) -> Result<NoiseModel, SignalError> {
    let mut groups: BTreeMap<(u64, u64), Vec<f64>> = BTreeMap::new();
    for s in samples {
        let key = (
            s.distance_m.unwrap_or(f64::NAN).to_bits(),
            s.theta_deg.unwrap_or(-1.0).to_bits(),
        );
        groups.entry(key).or_default().push(s.esp_dbm);
    }
    let mut ss = 0.0;
    let mut dof = 0usize;
    for esps in groups.values() {
        if esps.len() < 2 {
            continue;
        }
        let mean = esps.iter().sum::<f64>() / esps.len() as f64;
        for e in esps {
            ss += (e - mean) * (e - mean);
        }
        dof += esps.len() - 1;
    }
    if dof == 0 {
        return Err(SignalError::InsufficientData {
            needed: 2,
            got: 1,
            context: "noise fit requires repeated samples at identical geometry",
        });
    }
    Ok(NoiseModel {
        sigma_db: (ss / dof as f64).sqrt(),
    })
}

#[derive(Debug, Deserialize)]
struct CharacterizationRow {
    distance_m: f64,
    theta_deg: Option<f64>,
    rssi_dbm: f64,
    snr_db: f64,
}

/// Read characterization samples from CSV with header
/// `distance_m,theta_deg,rssi_dbm,snr_db` (theta may be empty).
pub fn read_characterization_csv<R: Read>(reader: R) -> Result<Vec<RadioSample>, SignalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<CharacterizationRow>().enumerate() {
        let row = i + 2; // 1-based, after the header line
        let rec = rec.map_err(|e| SignalError::Csv {
            row,
            reason: e.to_string(),
        })?;
        let sample = RadioSample::new(
            Some(rec.distance_m),
            rec.theta_deg,
            rec.rssi_dbm,
            rec.snr_db,
        )
        .map_err(|e| SignalError::Csv {
            row,
            reason: e.to_string(),
        })?;
        out.push(sample);
    }
    Ok(out)
}

/// [`read_characterization_csv`] from a file path.
pub fn read_characterization_file<P: AsRef<Path>>(
    path: P,
) -> Result<Vec<RadioSample>, SignalError> {
    let f = std::fs::File::open(path).map_err(|e| SignalError::Io(e.to_string()))?;
    read_characterization_csv(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const ESP: fn() -> PathLossModel = PathLossModel::esp_characterization;

    #[test]
    fn esp_matches_oracle_values() {
        // Oracles computed with 30-digit arithmetic.
        let e = esp_from_rssi_snr(-50.0, 0.0).unwrap();
        assert!((e - -53.010_299_956_639_8).abs() < 1e-12, "esp = {e}");
        let e = esp_from_rssi_snr(-60.0, 10.0).unwrap();
        assert!((e - -60.413_926_851_582_25).abs() < 1e-12, "esp = {e}");
        // At very high SNR the correction vanishes: delta = 4.3429e-10 dB.
        let e = esp_from_rssi_snr(-50.0, 100.0).unwrap();
        assert!((e + 50.0).abs() < 1e-9);
        assert!(e < -50.0);
    }

    #[test]
    fn esp_is_below_rssi_and_monotone_in_snr() {
        let mut prev = f64::NEG_INFINITY;
        for snr in [-20.0, -10.0, -3.0, 0.0, 3.0, 10.0, 25.0] {
            let e = esp_from_rssi_snr(-70.0, snr).unwrap();
            assert!(e < -70.0);
            assert!(e > prev);
            prev = e;
        }
    }

    #[test]
    fn rssi_esp_round_trip_is_exact() {
        for (rssi, snr) in [(-50.0, 0.0), (-91.3, 7.25), (-120.0, -12.5)] {
            let esp = esp_from_rssi_snr(rssi, snr).unwrap();
            let back = rssi_from_esp_snr(esp, snr);
            assert_eq!(back, rssi);
        }
    }

    #[test]
    fn antenna_gain_oracle_values() {
        let ant = AntennaModel::default();
        let g0 = ant.gain(0.0).unwrap();
        assert!((g0.db - -1.38).abs() < 1e-12);
        assert!(!g0.extrapolated);
        let g30 = ant.gain(30.0).unwrap();
        assert!((g30.db - -18.381).abs() < 1e-12);
        assert!(!g30.extrapolated);
        let g60 = ant.gain(60.0).unwrap();
        assert!((g60.db - -35.382).abs() < 1e-12);
        assert!(!g60.extrapolated);
        let g75 = ant.gain(75.0).unwrap();
        assert!(g75.extrapolated);
        assert!(g75.db < g60.db);
        assert!(ant.gain(-1.0).is_err());
    }

    #[test]
    fn vertical_angle_oracle() {
        // atan2(10, 75) = 7.5946433... degrees.
        let t = vertical_angle_deg(75.0, 10.0);
        assert!((t - 7.594_643_368_591_456).abs() < 1e-9, "theta = {t}");
        assert_eq!(vertical_angle_deg(10.0, 0.0), 0.0);
        assert_eq!(vertical_angle_deg(0.0, 10.0), 90.0);
    }

    #[test]
    fn distance_oracle_esp_coefficients() {
        // 0.1973 * exp(-0.0902 * -60) = 44.21084557775441 m.
        let d = distance_from_esp(
            -60.0,
            0.0,
            &ESP(),
            &AntennaModel {
                intercept_db: 0.0,
                slope_db_per_deg: 0.0,
                ..AntennaModel::default()
            },
        )
        .unwrap();
        assert!((d - 44.210_845_577_754_41).abs() < 1e-9, "d = {d}");
    }

    #[test]
    fn distance_oracle_rssi_coefficients() {
        // 0.2189 * exp(-0.0894 * -60) = 46.75212576203885 m.
        let zero_gain = AntennaModel {
            slope_db_per_deg: 0.0,
            intercept_db: 0.0,
            ..AntennaModel::default()
        };
        let d = distance_from_esp(
            -60.0,
            0.0,
            &PathLossModel::rssi_characterization(),
            &zero_gain,
        )
        .unwrap();
        assert!((d - 46.752_125_762_038_85).abs() < 1e-9, "d = {d}");
    }

    #[test]
    fn expected_esp_inverts_distance() {
        let ant = AntennaModel::default();
        // Unit distance equals the scale coefficient at zero compensated ESP.
        let esp = expected_esp(
            0.1973,
            0.0,
            &ESP(),
            &AntennaModel {
                slope_db_per_deg: 0.0,
                intercept_db: 0.0,
                ..ant
            },
        )
        .unwrap();
        assert!(esp.abs() < 1e-12);
        // Forward then inverse is the identity for any valid angle.
        for (d, theta) in [(44.21, 0.0), (120.0, 30.0), (15.0, 59.0), (300.0, 75.0)] {
            let esp = expected_esp(d, theta, &ESP(), &ant).unwrap();
            let back = distance_from_esp(esp, theta, &ESP(), &ant).unwrap();
            assert!((back - d).abs() / d < 1e-9, "d = {d}, back = {back}");
        }
    }

    #[test]
    fn antenna_gain_shrinks_inferred_distance_at_angle() {
        // Same measured ESP read at a larger vertical angle implies the
        // transmitter is closer, because the antenna attenuates more.
        let ant = AntennaModel::default();
        let d0 = distance_from_esp(-70.0, 0.0, &ESP(), &ant).unwrap();
        let d30 = distance_from_esp(-70.0, 30.0, &ESP(), &ant).unwrap();
        assert!(d30 < d0);
    }

    #[test]
    fn linear_model_clamps_to_min_distance() {
        let m = PathLossModel::Linear {
            slope_m_per_db: -5.0,
            intercept_m: -100.0,
            min_distance_m: 0.1,
        };
        let ant = AntennaModel::default();
        // Strong signal drives the line negative; clamp keeps it positive.
        let d = distance_from_esp(-10.0, 0.0, &m, &ant).unwrap();
        assert!(d >= 0.1);
    }

    #[test]
    fn model_validation_rejects_bad_coefficients() {
        assert!(PathLossModel::Exponential { a: 0.0, b: -0.1 }
            .validate()
            .is_err());
        assert!(PathLossModel::Exponential { a: 1.0, b: 0.1 }
            .validate()
            .is_err());
        assert!(PathLossModel::Exponential {
            a: f64::NAN,
            b: -0.1
        }
        .validate()
        .is_err());
        assert!(PathLossModel::Linear {
            slope_m_per_db: 1.0,
            intercept_m: 0.0,
            min_distance_m: 0.1
        }
        .validate()
        .is_err());
        assert!(ESP().validate().is_ok());
    }

    #[test]
    fn noiseless_sampling_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let quiet = NoiseModel { sigma_db: 0.0 };
        let ant = AntennaModel::default();
        let s = sample_esp(100.0, 10.0, &ESP(), &ant, &quiet, &mut rng).unwrap();
        let e = expected_esp(100.0, 10.0, &ESP(), &ant).unwrap();
        assert_eq!(s, e);
    }

    #[test]
    fn sampled_esp_spread_matches_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise = NoiseModel::default();
        let ant = AntennaModel::default();
        let mean = expected_esp(80.0, 5.0, &ESP(), &ant).unwrap();
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let s = sample_esp(80.0, 5.0, &ESP(), &ant, &noise, &mut rng).unwrap();
            sum += s - mean;
            sq += (s - mean) * (s - mean);
        }
        let emp_mean = sum / n as f64;
        let emp_std = (sq / n as f64 - emp_mean * emp_mean).sqrt();
        assert!(emp_mean.abs() < 0.05, "mean = {emp_mean}");
        assert!((emp_std - 2.5).abs() / 2.5 < 0.02, "std = {emp_std}");
    }

    #[test]
    fn exact_fit_through_two_points() {
        // Two noiseless samples determine the exponential exactly.
        let zero_gain = AntennaModel {
            slope_db_per_deg: 0.0,
            intercept_db: 0.0,
            ..AntennaModel::default()
        };
        let mk = |d: f64| {
            let esp = expected_esp(d, 0.0, &ESP(), &zero_gain).unwrap();
            // High SNR so RSSI ~ ESP and stays in the accepted range.
            RadioSample::new(Some(d), Some(0.0), rssi_from_esp_snr(esp, 60.0), 60.0).unwrap()
        };
        let fit = fit_path_loss(&[mk(20.0), mk(200.0)], FitForm::Exponential, &zero_gain).unwrap();
        let PathLossModel::Exponential { a, b } = fit.model else {
            panic!("expected exponential fit");
        };
        assert!((a - 0.1973).abs() < 1e-9, "a = {a}");
        assert!((b - -0.0902).abs() < 1e-12, "b = {b}");
        assert!(fit.rms_residual_m < 1e-9);
    }

    #[test]
    fn noisy_fit_recovers_coefficients_within_10_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = NoiseModel { sigma_db: 2.0 };
        let ant = AntennaModel::default();
        let mut samples = Vec::new();
        // Log-spaced distances, 500 samples.
        for i in 0..500 {
            let f = i as f64 / 499.0;
            let d = 10.0 * (300.0f64 / 10.0).powf(f);
            let esp = sample_esp(d, 0.0, &ESP(), &ant, &noise, &mut rng).unwrap();
            samples.push(
                RadioSample::new(Some(d), Some(0.0), rssi_from_esp_snr(esp, 60.0), 60.0).unwrap(),
            );
        }
        let fit = fit_path_loss(&samples, FitForm::Exponential, &ant).unwrap();
        let PathLossModel::Exponential { a, b } = fit.model else {
            panic!("expected exponential fit");
        };
        assert!((b - -0.0902).abs() / 0.0902 < 0.10, "b = {b}");
        assert!((a.ln() - 0.1973f64.ln()).abs() < 0.35, "a = {a}");
    }

    #[test]
    fn fit_rejects_degenerate_inputs() {
        let s = RadioSample::new(Some(50.0), Some(0.0), -70.0, 10.0).unwrap();
        assert!(matches!(
            fit_path_loss(
                std::slice::from_ref(&s),
                FitForm::Exponential,
                &AntennaModel::default()
            ),
            Err(SignalError::InsufficientData { .. })
        ));
        let mut s2 = s.clone();
        s2.distance_m = Some(80.0);
        // Same ESP at two distances: slope unconstrained.
        assert!(matches!(
            fit_path_loss(&[s, s2], FitForm::Exponential, &AntennaModel::default()),
            Err(SignalError::DegenerateFit { .. })
        ));
    }

    #[test]
    fn noise_fit_recovers_sigma_within_10_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = NoiseModel { sigma_db: 2.0 };
        let ant = AntennaModel::default();
        let mut samples = Vec::new();
        for d in [20.0, 50.0, 90.0, 140.0, 200.0] {
            for _ in 0..200 {
                let esp = sample_esp(d, 0.0, &ESP(), &ant, &noise, &mut rng).unwrap();
                samples.push(
                    RadioSample::new(Some(d), Some(0.0), rssi_from_esp_snr(esp, 60.0), 60.0)
                        .unwrap(),
                );
            }
        }
        let fitted = fit_noise(&samples).unwrap();
        assert!(
            (fitted.sigma_db - 2.0).abs() / 2.0 < 0.10,
            "sigma = {}",
            fitted.sigma_db
        );
    }

    #[test]
    fn noise_fit_requires_repeats() {
        let mk = |d: f64| RadioSample::new(Some(d), Some(0.0), -70.0, 10.0).unwrap();
        assert!(matches!(
            fit_noise(&[mk(10.0), mk(20.0), mk(30.0)]),
            Err(SignalError::InsufficientData { .. })
        ));
    }

    #[test]
    fn characterization_csv_round_trip() {
        let csv = "distance_m,theta_deg,rssi_dbm,snr_db\n\
                   25.0,10.0,-61.5,7.5\n\
                   100.0,,-75.0,-2.0\n";
        let samples = read_characterization_csv(csv.as_bytes()).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].distance_m, Some(25.0));
        assert_eq!(samples[0].theta_deg, Some(10.0));
        assert_eq!(samples[1].theta_deg, None);
        let esp = esp_from_rssi_snr(-75.0, -2.0).unwrap();
        assert_eq!(samples[1].esp_dbm, esp);
    }

    #[test]
    fn characterization_csv_reports_bad_rows() {
        let csv = "distance_m,theta_deg,rssi_dbm,snr_db\n\
                   25.0,10.0,-61.5,7.5\n\
                   -5.0,0.0,-70.0,1.0\n";
        let err = read_characterization_csv(csv.as_bytes()).unwrap_err();
        match err {
            SignalError::Csv { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn esp_always_below_rssi(rssi in -140.0f64..-20.0, snr in -30.0f64..40.0) {
            let esp = esp_from_rssi_snr(rssi, snr).unwrap();
            prop_assert!(esp < rssi);
            prop_assert!(esp.is_finite());
        }

        #[test]
        fn distance_monotone_decreasing_in_esp(
            esp1 in -140.0f64..-20.0,
            delta in 0.1f64..40.0,
            theta in 0.0f64..80.0,
        ) {
            let ant = AntennaModel::default();
            let d_weak = distance_from_esp(esp1, theta, &ESP(), &ant).unwrap();
            let d_strong = distance_from_esp(esp1 + delta, theta, &ESP(), &ant).unwrap();
            prop_assert!(d_strong < d_weak);
        }

        #[test]
        fn inverse_pair_round_trips(
            d in 1.0f64..2_000.0,
            theta in 0.0f64..85.0,
        ) {
            let ant = AntennaModel::default();
            let esp = expected_esp(d, theta, &ESP(), &ant).unwrap();
            let back = distance_from_esp(esp, theta, &ESP(), &ant).unwrap();
            prop_assert!((back - d).abs() / d < 1e-9);
        }
    }
}
