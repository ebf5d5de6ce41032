//! IMU CSV files with JSON sidecar manifests.
//!
//! CSV header `t,ax,ay,az,gx,gy,gz,mx,my,mz`, time in seconds from the
//! first sample. The sidecar sits next to the CSV with a `.json`
//! extension.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{ImuStream, Origin, SynthError};
use crate::egomotion::io::write_atomic;

pub const CSV_HEADER: [&str; 10] = ["t", "ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamManifest {
    pub subject: String,
    pub label: String,
    pub placement: String,
    pub rate: f64,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
}

impl StreamManifest {
    pub fn from_stream(stream: &ImuStream) -> Self {
        Self {
            subject: stream.subject.clone(),
            label: stream.label.clone(),
            placement: stream.placement.clone(),
            rate: stream.rate,
            origin: stream.origin,
            clip: None,
            track: None,
            config_fingerprint: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    t: f64,
    ax: f64,
    ay: f64,
    az: f64,
    gx: f64,
    gy: f64,
    gz: f64,
    mx: f64,
    my: f64,
    mz: f64,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// `<clip>_t<track>_<placement>.csv`
pub fn stream_file_name(clip: &str, track: u64, placement: &str) -> String {
    format!("{clip}_t{track}_{placement}.csv")
}

pub fn encode_csv(stream: &ImuStream) -> Result<Vec<u8>, SynthError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for i in 0..stream.len() {
        let (a, g, m) = (stream.accel[i], stream.gyro[i], stream.mag[i]);
        w.serialize(Row {
            t: i as f64 / stream.rate,
            ax: a.x,
            ay: a.y,
            az: a.z,
            gx: g.x,
            gy: g.y,
            gz: g.z,
            mx: m.x,
            my: m.y,
            mz: m.z,
        })
        .map_err(|e| SynthError::Format(e.to_string()))?;
    }
    if stream.is_empty() {
        w.write_record(CSV_HEADER)
            .map_err(|e| SynthError::Format(e.to_string()))?;
    }
    w.into_inner()
        .map_err(|e| SynthError::Format(e.to_string()))
}

/// Write the CSV and its sidecar atomically.
pub fn write_stream(
    path: &Path,
    stream: &ImuStream,
    extra: &StreamManifest,
) -> Result<(), SynthError> {
    let io = |e: crate::egomotion::EgoError| SynthError::Format(e.to_string());
    write_atomic(path, &encode_csv(stream)?).map_err(io)?;
    let manifest = StreamManifest {
        subject: stream.subject.clone(),
        label: stream.label.clone(),
        placement: stream.placement.clone(),
        rate: stream.rate,
        origin: stream.origin,
        ..extra.clone()
    };
    let mut json =
        serde_json::to_vec_pretty(&manifest).map_err(|e| SynthError::Format(e.to_string()))?;
    json.push(b'\n');
    write_atomic(&sidecar_path(path), &json).map_err(io)
}

/// Read a CSV plus sidecar; errors name the file and the offending field.
pub fn read_stream(path: &Path) -> Result<(ImuStream, StreamManifest), SynthError> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| SynthError::Io {
        path: side.display().to_string(),
        source: e,
    })?;
    let manifest: StreamManifest = serde_json::from_str(&text).map_err(|e| SynthError::Schema {
        file: side.display().to_string(),
        detail: e.to_string(),
    })?;
    if !(manifest.rate > 0.0 && manifest.rate.is_finite()) {
        return Err(SynthError::Schema {
            file: side.display().to_string(),
            detail: format!("field `rate` must be positive, got {}", manifest.rate),
        });
    }
    let bytes = fs::read(path).map_err(|e| SynthError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let schema = |detail: String| SynthError::Schema {
        file: path.display().to_string(),
        detail,
    };
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header = r.headers().map_err(|e| schema(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(schema(format!("header must be `{}`", CSV_HEADER.join(","))));
    }
    let mut stream = ImuStream {
        rate: manifest.rate,
        accel: Vec::new(),
        gyro: Vec::new(),
        mag: Vec::new(),
        placement: manifest.placement.clone(),
        label: manifest.label.clone(),
        subject: manifest.subject.clone(),
        origin: manifest.origin,
    };
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| schema(format!("row {}: {e}", i + 2)))?;
        let mut v = [0.0; 10];
        for (k, field) in CSV_HEADER.iter().enumerate() {
            let cell = row
                .get(k)
                .ok_or_else(|| schema(format!("row {}: missing field `{field}`", i + 2)))?;
            v[k] = cell
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| {
                    schema(format!(
                        "row {}: field `{field}` is not a finite number: {cell:?}",
                        i + 2
                    ))
                })?;
        }
        stream.accel.push(Vector3::new(v[1], v[2], v[3]));
        stream.gyro.push(Vector3::new(v[4], v[5], v[6]));
        stream.mag.push(Vector3::new(v[7], v[8], v[9]));
    }
    Ok((stream, manifest))
}
