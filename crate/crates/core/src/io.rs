//! File formats: event and feature CSVs, the model JSON document,
//! vehicle/controller profiles, and evaluation report emission.
//!
//! CSV files may start with `#`-prefixed comment lines carrying the
//! configuration hash and seed; readers skip them. Floating-point values
//! are written in shortest-roundtrip form, so outputs are byte-stable for
//! identical inputs.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bgm::{Bounds, BoundedGmm};
use crate::controller::{ControlOutcome, ControllerParams};
use crate::error::{Error, Result};
use crate::evaluation::{EvaluationReport, SweepRow};
use crate::features::{
    resample_to_uniform, DepartureEvent, FeatureVector, Side, TrajectorySample,
};
use crate::qmc::QmcConfig;
use crate::vehicle::VehicleParams;

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Hash of a resolved configuration: SHA-256 over its canonical JSON.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(cfg)?.as_bytes()))
}

/// Hash of a feature matrix: dimensions plus little-endian IEEE bytes.
pub fn data_hash(data: &DMatrix<f64>) -> String {
    let mut bytes = Vec::with_capacity(16 + data.len() * 8);
    bytes.extend_from_slice(&(data.nrows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(data.ncols() as u64).to_le_bytes());
    for r in 0..data.nrows() {
        for c in 0..data.ncols() {
            bytes.extend_from_slice(&data[(r, c)].to_le_bytes());
        }
    }
    sha256_hex(&bytes)
}

fn write_comment<W: Write>(w: &mut W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// event CSV: event_id,side,t,y,v,c
// ---------------------------------------------------------------------------

pub fn write_events_csv<W: Write>(
    mut out: W,
    events: &[DepartureEvent],
    comment: Option<&str>,
) -> Result<()> {
    write_comment(&mut out, comment)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["event_id", "side", "t", "y", "v", "c"])?;
    for e in events {
        for s in e.samples() {
            w.write_record(&[
                e.event_id().to_string(),
                e.side().code().to_string(),
                format_f64(s.t),
                format_f64(s.y),
                format_f64(s.v),
                format_f64(s.c),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_csv_path(
    path: &Path,
    events: &[DepartureEvent],
    comment: Option<&str>,
) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_events_csv(std::io::BufWriter::new(f), events, comment)
}

/// Reads an event CSV. Rows are grouped by `event_id` in order of first
/// appearance and sorted by time within each event; events with
/// non-uniform spacing are resampled onto a uniform grid.
pub fn read_events_csv(path: &Path) -> Result<Vec<DepartureEvent>> {
    let f = std::fs::File::open(path)?;
    read_events_csv_reader(std::io::BufReader::new(f), &path.display().to_string())
}

pub fn read_events_csv_reader<R: std::io::Read>(
    input: R,
    path: &str,
) -> Result<Vec<DepartureEvent>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_string(),
                column: name.to_string(),
            })
    };
    let (ci_id, ci_side, ci_t, ci_y, ci_v, ci_c) = (
        col("event_id")?,
        col("side")?,
        col("t")?,
        col("y")?,
        col("v")?,
        col("c")?,
    );

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (Side, Vec<TrajectorySample>)> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let rownum = i + 2; // header is row 1
        let id = rec.get(ci_id).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::MalformedRow {
                path: path.to_string(),
                row: rownum,
                reason: "empty event_id".into(),
            });
        }
        let side = Side::parse(rec.get(ci_side).unwrap_or("")).ok_or(Error::MalformedRow {
            path: path.to_string(),
            row: rownum,
            reason: format!("invalid side `{}`", rec.get(ci_side).unwrap_or("")),
        })?;
        let parse = |idx: usize, name: &str| -> Result<f64> {
            let raw = rec.get(idx).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::MalformedRow {
                path: path.to_string(),
                row: rownum,
                reason: format!("column {name}: cannot parse `{raw}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::MalformedRow {
                    path: path.to_string(),
                    row: rownum,
                    reason: format!("column {name}: non-finite value"),
                });
            }
            Ok(v)
        };
        let sample = TrajectorySample {
            t: parse(ci_t, "t")?,
            y: parse(ci_y, "y")?,
            v: parse(ci_v, "v")?,
            c: parse(ci_c, "c")?,
        };
        match groups.get_mut(&id) {
            Some((s, samples)) => {
                if *s != side {
                    return Err(Error::MalformedRow {
                        path: path.to_string(),
                        row: rownum,
                        reason: format!("event {id} changes side mid-file"),
                    });
                }
                samples.push(sample);
            }
            None => {
                order.push(id.clone());
                groups.insert(id, (side, vec![sample]));
            }
        }
    }

    let mut events = Vec::with_capacity(order.len());
    for id in order {
        let (side, mut samples) = groups.remove(&id).unwrap();
        samples.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
        let event = match DepartureEvent::new(&id, side, samples.clone()) {
            Ok(e) => e,
            Err(Error::NonUniformSampling { .. }) => {
                let fixed = resample_to_uniform(&id, &samples)?;
                DepartureEvent::new(&id, side, fixed)?
            }
            Err(e) => return Err(e),
        };
        events.push(event);
    }
    Ok(events)
}

// ---------------------------------------------------------------------------
// feature CSV: event_id,side,T,d_y,sigma_y,v_bar,a_bar,sigma_v,c0,delta_c
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub event_id: String,
    pub side: Side,
    pub features: FeatureVector,
}

pub fn write_features_csv<W: Write>(
    mut out: W,
    rows: &[FeatureRow],
    comment: Option<&str>,
) -> Result<()> {
    write_comment(&mut out, comment)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["event_id", "side"];
    header.extend(FeatureVector::NAMES);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.event_id.clone(), r.side.code().to_string()];
        rec.extend(r.features.to_array().iter().map(|v| format_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_features_csv_path(
    path: &Path,
    rows: &[FeatureRow],
    comment: Option<&str>,
) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_features_csv(std::io::BufWriter::new(f), rows, comment)
}

pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureRow>> {
    let f = std::fs::File::open(path)?;
    read_features_csv_reader(std::io::BufReader::new(f), &path.display().to_string())
}

pub fn read_features_csv_reader<R: std::io::Read>(input: R, path: &str) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_string(),
                column: name.to_string(),
            })
    };
    let ci_id = col("event_id")?;
    let ci_side = col("side")?;
    let mut ci_feat = [0usize; FeatureVector::DIM];
    for (j, name) in FeatureVector::NAMES.iter().enumerate() {
        ci_feat[j] = col(name)?;
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let rownum = i + 2;
        let side = Side::parse(rec.get(ci_side).unwrap_or("")).ok_or(Error::MalformedRow {
            path: path.to_string(),
            row: rownum,
            reason: format!("invalid side `{}`", rec.get(ci_side).unwrap_or("")),
        })?;
        let mut a = [0.0_f64; FeatureVector::DIM];
        for (j, &ci) in ci_feat.iter().enumerate() {
            let raw = rec.get(ci).unwrap_or("");
            a[j] = raw.parse().map_err(|_| Error::MalformedRow {
                path: path.to_string(),
                row: rownum,
                reason: format!(
                    "column {}: cannot parse `{raw}`",
                    FeatureVector::NAMES[j]
                ),
            })?;
            if !a[j].is_finite() {
                return Err(Error::MalformedRow {
                    path: path.to_string(),
                    row: rownum,
                    reason: format!("column {}: non-finite value", FeatureVector::NAMES[j]),
                });
            }
        }
        rows.push(FeatureRow {
            event_id: rec.get(ci_id).unwrap_or("").to_string(),
            side,
            features: FeatureVector::from_array(a),
        });
    }
    Ok(rows)
}

/// Feature matrix of the rows on one side.
pub fn side_matrix(rows: &[FeatureRow], side: Side) -> DMatrix<f64> {
    let sel: Vec<&FeatureRow> = rows.iter().filter(|r| r.side == side).collect();
    let mut m = DMatrix::zeros(sel.len(), FeatureVector::DIM);
    for (i, r) in sel.iter().enumerate() {
        for (j, v) in r.features.to_array().iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

// ---------------------------------------------------------------------------
// model JSON
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub data_hash: String,
    /// fitted-model log-likelihood; null for hand-specified models
    pub loglik: Option<f64>,
    pub bic: Option<f64>,
}

/// On-disk model document; covariances are row-major full matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub lower_bounds: Vec<f64>,
    pub upper_bounds: Vec<f64>,
    pub meta: ModelMeta,
}

impl ModelFile {
    pub fn from_model(model: &BoundedGmm, meta: ModelMeta) -> Self {
        let d = model.dim();
        let k = model.k();
        let means = (0..k)
            .map(|j| model.mean(j).iter().cloned().collect())
            .collect();
        let covariances = (0..k)
            .map(|j| {
                let c = model.covariance(j);
                (0..d)
                    .map(|r| (0..d).map(|cc| c[(r, cc)]).collect())
                    .collect()
            })
            .collect();
        ModelFile {
            d,
            k,
            weights: model.weights().to_vec(),
            means,
            covariances,
            lower_bounds: model.bounds().lower.clone(),
            upper_bounds: model.bounds().upper.clone(),
            meta,
        }
    }

    pub fn to_model(&self, qmc: QmcConfig) -> Result<BoundedGmm> {
        if self.weights.len() != self.k || self.means.len() != self.k {
            return Err(Error::InvalidModel {
                reason: format!("K = {} but {} means present", self.k, self.means.len()),
            });
        }
        let means: Vec<DVector<f64>> = self
            .means
            .iter()
            .map(|m| DVector::from_vec(m.clone()))
            .collect();
        let mut covs = Vec::with_capacity(self.k);
        for c in &self.covariances {
            if c.len() != self.d || c.iter().any(|row| row.len() != self.d) {
                return Err(Error::InvalidModel {
                    reason: "covariance matrix has wrong shape".into(),
                });
            }
            let flat: Vec<f64> = c.iter().flatten().cloned().collect();
            covs.push(DMatrix::from_row_slice(self.d, self.d, &flat));
        }
        let bounds = Bounds::new(self.lower_bounds.clone(), self.upper_bounds.clone())?;
        BoundedGmm::new(self.weights.clone(), means, covs, bounds, qmc)
    }
}

pub fn save_model(path: &Path, file: &ModelFile) -> Result<()> {
    let json = serde_json::to_string_pretty(file)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------------
// parameter profiles (JSON or TOML by extension)
// ---------------------------------------------------------------------------

fn load_profile<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => Ok(toml::from_str(&text)?),
        _ => Ok(serde_json::from_str(&text)?),
    }
}

pub fn load_vehicle_profile(path: &Path) -> Result<VehicleParams> {
    let p: VehicleParams = load_profile(path)?;
    p.validate()?;
    Ok(p)
}

pub fn load_controller_profile(path: &Path) -> Result<ControllerParams> {
    load_profile(path)
}

// ---------------------------------------------------------------------------
// trajectory CSV: t,e_y,e_y_dot,e_psi,e_psi_dot,delta,triggered
// ---------------------------------------------------------------------------

pub fn write_trajectory_csv<W: Write>(
    mut out: W,
    outcome: &ControlOutcome,
    comment: Option<&str>,
) -> Result<()> {
    write_comment(&mut out, comment)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "e_y", "e_y_dot", "e_psi", "e_psi_dot", "delta", "triggered"])?;
    match outcome {
        ControlOutcome::Triggered(traj) => {
            for (i, s) in traj.states.iter().enumerate() {
                w.write_record(&[
                    format_f64(traj.t[i]),
                    format_f64(s.e_y),
                    format_f64(s.e_y_dot),
                    format_f64(s.e_psi),
                    format_f64(s.e_psi_dot),
                    format_f64(traj.delta[i]),
                    "true".to_string(),
                ])?;
            }
        }
        ControlOutcome::NotTriggered { t, e_y } => {
            for i in 0..t.len() {
                // finite-difference rate for bookkeeping rows
                let rate = if i == 0 {
                    (e_y[1] - e_y[0]) / (t[1] - t[0])
                } else if i == t.len() - 1 {
                    (e_y[i] - e_y[i - 1]) / (t[i] - t[i - 1])
                } else {
                    (e_y[i + 1] - e_y[i - 1]) / (t[i + 1] - t[i - 1])
                };
                w.write_record(&[
                    format_f64(t[i]),
                    format_f64(e_y[i]),
                    format_f64(rate),
                    "0".to_string(),
                    "0".to_string(),
                    "0".to_string(),
                    "false".to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluation report emission
// ---------------------------------------------------------------------------

pub fn write_report_json(path: &Path, report: &EvaluationReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn write_report_csv<W: Write>(
    mut out: W,
    report: &EvaluationReport,
    comment: Option<&str>,
) -> Result<()> {
    write_comment(&mut out, comment)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "event_id",
        "side",
        "triggered",
        "t_trigger",
        "s_uncontrolled",
        "s_controlled",
        "reduction_percent",
    ])?;
    for r in &report.per_event {
        w.write_record(&[
            r.event_id.clone(),
            r.side.code().to_string(),
            r.triggered.to_string(),
            r.t_trigger.map(format_f64).unwrap_or_default(),
            format_f64(r.s_uncontrolled),
            r.s_controlled.map(format_f64).unwrap_or_default(),
            r.reduction_percent.map(format_f64).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Bar-plot data: one row per (side, arm) with mean and std of S.
pub fn write_plot_means_csv<W: Write>(
    mut out: W,
    report: &EvaluationReport,
    comment: Option<&str>,
) -> Result<()> {
    write_comment(&mut out, comment)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["side", "arm", "mean_s", "std_s", "n_triggered"])?;
    for agg in [&report.left, &report.right].into_iter().flatten() {
        if let (Some(mu), Some(sd)) = (agg.mean_s_uncontrolled, agg.std_s_uncontrolled) {
            w.write_record(&[
                agg.side.code().to_string(),
                "uncontrolled".to_string(),
                format_f64(mu),
                format_f64(sd),
                agg.n_triggered.to_string(),
            ])?;
        }
        if let (Some(mu), Some(sd)) = (agg.mean_s_controlled, agg.std_s_controlled) {
            w.write_record(&[
                agg.side.code().to_string(),
                "controlled".to_string(),
                format_f64(mu),
                format_f64(sd),
                agg.n_triggered.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(
    mut out: W,
    rows: &[SweepRow],
    comment: Option<&str>,
) -> Result<()> {
    write_comment(&mut out, comment)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "side", "arm", "mean_s", "std_s", "sem_s"])?;
    for r in rows {
        w.write_record(&[
            r.n.to_string(),
            r.side.code().to_string(),
            r.arm.to_string(),
            format_f64(r.mean_s),
            format_f64(r.std_s),
            format_f64(r.sem_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest-roundtrip decimal form.
fn format_f64(v: f64) -> String {
    let mut buf = ryu_format(v);
    // trim the ".0" that the shortest form appends to integers, keeping
    // outputs compact and stable
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_format(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}
