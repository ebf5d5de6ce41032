//! Loading IMU stream directories into evaluation datasets, fitting
//! distribution maps from them, and writing evaluation reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::config::PipelineConfig;
use super::{write_atomic, PipelineError};
use crate::distmap::{fit_map, placement_channels, DistributionMap};
use crate::harlab::{
    evaluate_loso, window_slice, Dataset, EvalConfig, EvalReport, Protocol, Window,
};
use crate::imusynth::io::{read_stream, StreamManifest};
use crate::imusynth::ImuStream;

/// A stream read from disk with its sidecar.
#[derive(Debug, Clone)]
pub struct LoadedStream {
    pub path: PathBuf,
    pub stream: ImuStream,
    pub meta: StreamManifest,
}

impl LoadedStream {
    /// Streams sharing this key were recorded together (one per placement).
    fn recording(&self) -> String {
        match (&self.meta.clip, self.meta.track) {
            (Some(c), Some(t)) => format!("{c}/t{t}"),
            (Some(c), None) => c.clone(),
            _ => {
                let stem = self
                    .path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                stem.strip_suffix(&format!("_{}", self.stream.placement))
                    .unwrap_or(&stem)
                    .to_string()
            }
        }
    }
}

/// Every `*.csv` stream in `dir`, in file-name order.
pub fn load_streams(dir: &Path) -> Result<Vec<LoadedStream>, PipelineError> {
    let entries = std::fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| PipelineError::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            paths.push(p);
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let (stream, meta) = read_stream(&path)?;
            Ok(LoadedStream { path, stream, meta })
        })
        .collect()
}

/// Group streams into recordings and cut them into windows with the
/// placements in the given order. Recordings missing a placement are
/// skipped with a warning.
pub fn build_windows(
    streams: &[LoadedStream],
    placements: &[String],
    cfg: &EvalConfig,
) -> Result<(Vec<Window>, Vec<String>), PipelineError> {
    let mut groups: BTreeMap<String, BTreeMap<&str, &ImuStream>> = BTreeMap::new();
    for s in streams {
        groups
            .entry(s.recording())
            .or_default()
            .insert(&s.stream.placement, &s.stream);
    }
    let mut windows = Vec::new();
    let mut warnings = Vec::new();
    for (rec, by_placement) in &groups {
        let ordered: Option<Vec<&ImuStream>> = placements
            .iter()
            .map(|p| by_placement.get(p.as_str()).copied())
            .collect();
        match ordered {
            Some(ordered) => {
                windows.extend(window_slice(&ordered, cfg.window_s, cfg.overlap, rec)?)
            }
            None => warnings.push(format!("recording {rec}: missing placement(s); skipped")),
        }
    }
    Ok((windows, warnings))
}

fn channel_names(placements: &[String]) -> Vec<String> {
    placements
        .iter()
        .flat_map(|p| placement_channels(p))
        .collect()
}

/// Real and virtual windows for evaluation.
pub fn load_dataset(
    real_dir: &Path,
    virtual_dir: &Path,
    cfg: &PipelineConfig,
) -> Result<(Dataset, Vec<String>), PipelineError> {
    let placements = &cfg.synth.placements;
    let (real, mut warnings) = build_windows(&load_streams(real_dir)?, placements, &cfg.eval)?;
    let (virtual_, w) = build_windows(&load_streams(virtual_dir)?, placements, &cfg.eval)?;
    warnings.extend(w);
    if real.is_empty() {
        return Err(PipelineError::Data(format!(
            "no complete real recordings in {}",
            real_dir.display()
        )));
    }
    Ok((
        Dataset {
            real,
            virtual_,
            channel_names: channel_names(placements),
        },
        warnings,
    ))
}

/// Fit a per-channel map from virtual to real streams. With a budget, at
/// most `budget_s` seconds of real data per class are used, split evenly
/// over the class's recordings (the leading part of each) so that every
/// subject contributes.
pub fn fit_stream_map(
    virtual_: &[LoadedStream],
    real: &[LoadedStream],
    placements: &[String],
    budget_s: Option<f64>,
) -> Result<DistributionMap, PipelineError> {
    let mut names = Vec::new();
    let mut v_samples = Vec::new();
    let mut r_samples = Vec::new();
    for p in placements {
        let mut v = vec![Vec::new(); 9];
        let mut r = vec![Vec::new(); 9];
        for s in virtual_.iter().filter(|s| &s.stream.placement == p) {
            for i in 0..s.stream.len() {
                for (c, x) in s.stream.sample(i).into_iter().enumerate() {
                    v[c].push(x);
                }
            }
        }
        let real_p: Vec<&ImuStream> = real
            .iter()
            .filter(|s| &s.stream.placement == p)
            .map(|s| &s.stream)
            .collect();
        let mut per_class: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &real_p {
            *per_class.entry(&s.label).or_default() += 1;
        }
        for s in &real_p {
            let n = match budget_s {
                Some(b) => {
                    let share = b * s.rate / per_class[s.label.as_str()] as f64;
                    s.len().min(share.floor() as usize)
                }
                None => s.len(),
            };
            for i in 0..n {
                for (c, x) in s.sample(i).into_iter().enumerate() {
                    r[c].push(x);
                }
            }
        }
        names.extend(placement_channels(p));
        v_samples.extend(v);
        r_samples.extend(r);
    }
    Ok(fit_map(&names, &v_samples, &r_samples)?)
}

/// Evaluate each protocol and write `<protocol>.json`, `<protocol>.txt`
/// and `<protocol>_confusion.csv` under `out`.
pub fn report(
    real_dir: &Path,
    virtual_dir: &Path,
    protocols: &[Protocol],
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<Vec<EvalReport>, PipelineError> {
    let (data, warnings) = load_dataset(real_dir, virtual_dir, cfg)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut reports = Vec::new();
    for &protocol in protocols {
        if protocol != Protocol::R2R && data.virtual_.is_empty() {
            return Err(PipelineError::Data(format!(
                "{protocol} needs virtual data but {} holds no complete recordings",
                virtual_dir.display()
            )));
        }
        let rep =
            crate::par::with_workers(cfg.workers, || evaluate_loso(&data, protocol, &cfg.eval))?;
        write_atomic(
            &out.join(format!("{protocol}.json")),
            format!("{}\n", rep.to_json()).as_bytes(),
        )?;
        write_atomic(
            &out.join(format!("{protocol}.txt")),
            rep.to_table().as_bytes(),
        )?;
        write_atomic(
            &out.join(format!("{protocol}_confusion.csv")),
            rep.confusion_csv().as_bytes(),
        )?;
        reports.push(rep);
    }
    Ok(reports)
}
