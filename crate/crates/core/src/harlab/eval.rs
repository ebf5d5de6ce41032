//! Leave-one-subject-out evaluation under the R2R, V2R and Mix2R
//! protocols.
//!
//! Every fold holds out one test subject and uses the next subject (in
//! sorted order, cyclically) for validation; the remaining subjects train.
//! Test data is always real. Each fold records which subjects contributed
//! to the distribution map, the grid search and the training set, and the
//! harness refuses to report a fold whose test subject appears in any of
//! them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::{forest_predict, forest_train, ForestConfig};
use super::{ecdf_features, macro_f1, mix_datasets, wilson_interval, HarError, Window};
use crate::distmap::{apply_map, fit_map, DistributionMap};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    R2R,
    V2R,
    Mix2R,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::R2R, Protocol::V2R, Protocol::Mix2R];
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::R2R => "R2R",
            Protocol::V2R => "V2R",
            Protocol::Mix2R => "Mix2R",
        })
    }
}

impl FromStr for Protocol {
    type Err = HarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "r2r" => Ok(Protocol::R2R),
            "v2r" => Ok(Protocol::V2R),
            "mix2r" => Ok(Protocol::Mix2R),
            other => Err(HarError::InvalidParameter(format!(
                "unknown protocol `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Window length in seconds.
    pub window_s: f64,
    pub overlap: f64,
    pub n_components: usize,
    pub trees_grid: Vec<usize>,
    pub min_leaf_grid: Vec<usize>,
    pub seed: u64,
    /// Map virtual training data onto the real domain (V2R, Mix2R).
    pub use_mapping: bool,
    /// Seconds of train-subject real data per class used to fit the
    /// distribution map; `None` uses all of it.
    pub map_budget_s: Option<f64>,
    /// Seconds of real training data per class; `None` keeps all.
    pub real_cap_per_class_s: Option<f64>,
    /// Virtual windows per real window in Mix2R.
    pub mix_virtual_ratio: f64,
    /// Normal quantile of the Wilson interval.
    pub z: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            window_s: 1.0,
            overlap: 0.5,
            n_components: 15,
            trees_grid: vec![3, 10, 25, 50],
            min_leaf_grid: vec![1, 5, 20, 50],
            seed: 0,
            use_mapping: true,
            map_budget_s: None,
            real_cap_per_class_s: None,
            mix_virtual_ratio: 1.0,
            z: 1.96,
        }
    }
}

impl EvalConfig {
    /// Windows standing for `seconds` of data: each window counts as
    /// `window_s` seconds.
    pub fn windows_for(&self, seconds: f64) -> usize {
        (seconds / self.window_s + 1e-9).floor() as usize
    }

    fn validate(&self, protocol: Protocol) -> Result<(), HarError> {
        if self.trees_grid.is_empty() || self.min_leaf_grid.is_empty() {
            return Err(HarError::InvalidParameter(
                "hyperparameter grid is empty".into(),
            ));
        }
        if self.trees_grid.contains(&0) || self.min_leaf_grid.contains(&0) {
            return Err(HarError::InvalidParameter(
                "grid values must be >= 1".into(),
            ));
        }
        if self.n_components == 0 {
            return Err(HarError::InvalidParameter(
                "n_components must be >= 1".into(),
            ));
        }
        if !(self.window_s > 0.0) {
            return Err(HarError::InvalidParameter(
                "window_s must be positive".into(),
            ));
        }
        if protocol != Protocol::R2R && self.use_mapping {
            if let Some(b) = self.map_budget_s {
                if !(b > 0.0) || self.windows_for(b) == 0 {
                    return Err(HarError::InvalidParameter(format!(
                        "distribution mapping requires real data: map budget {b} s per class is less than one window"
                    )));
                }
            }
        }
        if let Some(c) = self.real_cap_per_class_s {
            if self.windows_for(c) == 0 {
                return Err(HarError::InvalidParameter(format!(
                    "real cap {c} s per class is less than one window"
                )));
            }
        }
        if !(self.mix_virtual_ratio >= 0.0) {
            return Err(HarError::InvalidParameter(
                "mix_virtual_ratio must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Real and virtual windows plus the names of their channels, in the
/// window channel order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub real: Vec<Window>,
    pub virtual_: Vec<Window>,
    pub channel_names: Vec<String>,
}

/// Which subjects influenced each part of a fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldProvenance {
    pub map_subjects: Vec<String>,
    pub grid_subjects: Vec<String>,
    pub training_subjects: Vec<String>,
}

impl FoldProvenance {
    pub fn touches(&self, subject: &str) -> bool {
        [
            &self.map_subjects,
            &self.grid_subjects,
            &self.training_subjects,
        ]
        .iter()
        .any(|v| v.iter().any(|s| s == subject))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub test_subject: String,
    pub validation_subject: String,
    pub n_trees: usize,
    pub min_leaf: usize,
    pub validation_f1: f64,
    pub test_f1: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub correct: usize,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<u64>>,
    pub provenance: FoldProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub classes: Vec<String>,
    pub folds: Vec<FoldResult>,
    /// Macro F1 per fold, then averaged over folds.
    pub mean_macro_f1: f64,
    /// Fraction of correctly classified test windows, pooled over folds.
    pub window_accuracy: f64,
    /// Wilson interval of `window_accuracy`.
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub confusion: Vec<Vec<u64>>,
    pub config_fingerprint: String,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text summary, one row per fold.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "protocol {}  config {}\n",
            self.protocol,
            &self.config_fingerprint[..12.min(self.config_fingerprint.len())]
        );
        s += &format!(
            "{:<12} {:<12} {:>6} {:>8} {:>8} {:>8} {:>8}\n",
            "test", "validation", "trees", "min_leaf", "val_f1", "test_f1", "windows"
        );
        for f in &self.folds {
            s += &format!(
                "{:<12} {:<12} {:>6} {:>8} {:>8.4} {:>8.4} {:>8}\n",
                f.test_subject,
                f.validation_subject,
                f.n_trees,
                f.min_leaf,
                f.validation_f1,
                f.test_f1,
                f.n_test
            );
        }
        s += &format!(
            "mean macro F1 {:.4}  window accuracy {:.4}  Wilson [{:.4}, {:.4}]\n",
            self.mean_macro_f1, self.window_accuracy, self.wilson_low, self.wilson_high
        );
        s
    }

    /// Pooled confusion matrix with class names on both axes.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("truth\\predicted");
        for c in &self.classes {
            s += &format!(",{c}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            s += c;
            for v in row {
                s += &format!(",{v}");
            }
            s.push('\n');
        }
        s
    }
}

fn sorted_unique<'a>(it: impl Iterator<Item = &'a str>) -> Vec<String> {
    it.collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect()
}

/// Seeded per-class subsample of at most `per_class` windows, returned in
/// input order.
fn cap_per_class<'a>(windows: &[&'a Window], per_class: usize, seed: u64) -> Vec<&'a Window> {
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        by_class.entry(&w.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for (_, mut idx) in by_class {
        idx.shuffle(&mut rng);
        idx.truncate(per_class);
        keep.extend(idx);
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| windows[i]).collect()
}

fn fit_window_map(
    names: &[String],
    source: &[&Window],
    target: &[&Window],
) -> Result<DistributionMap, HarError> {
    let pool = |ws: &[&Window]| -> Vec<Vec<f64>> {
        (0..names.len())
            .map(|c| {
                ws.iter()
                    .flat_map(|w| w.channels[c].iter().copied())
                    .collect()
            })
            .collect()
    };
    Ok(fit_map(names, &pool(source), &pool(target))?)
}

fn map_window(map: &DistributionMap, w: &Window) -> Window {
    let mut out = w.clone();
    for (c, ch) in out.channels.iter_mut().enumerate() {
        for v in ch.iter_mut() {
            *v = apply_map(map, *v, c);
        }
    }
    out
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

struct FoldInput<'a> {
    protocol: Protocol,
    cfg: &'a EvalConfig,
    data: &'a Dataset,
    classes: &'a [String],
    real_features: &'a [Vec<f64>],
}

impl FoldInput<'_> {
    fn class_of(&self, w: &Window) -> usize {
        self.classes
            .binary_search(&w.label)
            .expect("label collected")
    }

    fn run(&self, fold: usize, test: &str, validation: &str) -> Result<FoldResult, HarError> {
        let cfg = self.cfg;
        let seed = fold_seed(cfg.seed, fold);
        let is_train = |s: &str| s != test && s != validation;
        let train_real: Vec<&Window> = self
            .data
            .real
            .iter()
            .filter(|w| is_train(&w.subject))
            .collect();
        let train_real = match cfg.real_cap_per_class_s {
            Some(c) => cap_per_class(&train_real, cfg.windows_for(c), seed),
            None => train_real,
        };
        let mut map_subjects = Vec::new();
        let train: Vec<Window> = if self.protocol == Protocol::R2R {
            train_real.iter().map(|w| (*w).clone()).collect()
        } else {
            let train_virtual: Vec<&Window> = self
                .data
                .virtual_
                .iter()
                .filter(|w| is_train(&w.subject))
                .collect();
            let virtual_ = if cfg.use_mapping {
                let target = match cfg.map_budget_s {
                    Some(b) => cap_per_class(&train_real, cfg.windows_for(b), seed ^ 0x5bd1_e995),
                    None => train_real.clone(),
                };
                map_subjects = sorted_unique(target.iter().map(|w| w.subject.as_str()));
                let map = fit_window_map(&self.data.channel_names, &train_virtual, &target)?;
                par::map(&train_virtual, |w| map_window(&map, w))
            } else {
                train_virtual.into_iter().cloned().collect()
            };
            if self.protocol == Protocol::V2R {
                virtual_
            } else {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for w in &train_real {
                    *counts.entry(&w.label).or_default() += 1;
                }
                let per_class = counts.values().copied().min().unwrap_or(0);
                let real: Vec<Window> = train_real.iter().map(|w| (*w).clone()).collect();
                mix_datasets(&real, &virtual_, per_class, cfg.mix_virtual_ratio, seed)?
            }
        };
        let training_subjects = sorted_unique(train.iter().map(|w| w.subject.as_str()));
        let provenance = FoldProvenance {
            map_subjects,
            grid_subjects: vec![validation.to_string()],
            training_subjects,
        };
        if provenance.touches(test) {
            return Err(HarError::InvalidParameter(format!(
                "test subject {test} leaked into fold {fold}"
            )));
        }

        let x_train = par::map(&train, |w| ecdf_features(w, cfg.n_components));
        let y_train: Vec<usize> = train.iter().map(|w| self.class_of(w)).collect();
        let split = |subject: &str| -> (Vec<Vec<f64>>, Vec<usize>) {
            self.data
                .real
                .iter()
                .zip(self.real_features)
                .filter(|(w, _)| w.subject == subject)
                .map(|(w, f)| (f.clone(), self.class_of(w)))
                .unzip()
        };
        let (x_val, y_val) = split(validation);
        let (x_test, y_test) = split(test);
        if x_val.is_empty() || x_test.is_empty() {
            return Err(HarError::Insufficient(format!(
                "fold {fold}: no real windows for {validation} or {test}"
            )));
        }

        let grid: Vec<(usize, usize)> = cfg
            .trees_grid
            .iter()
            .flat_map(|&t| cfg.min_leaf_grid.iter().map(move |&m| (t, m)))
            .collect();
        let n_classes = self.classes.len();
        let scored = par::map(&grid, |&(n_trees, min_leaf)| -> Result<_, HarError> {
            let model = forest_train(
                &x_train,
                &y_train,
                &ForestConfig {
                    n_trees,
                    min_leaf,
                    seed,
                },
            )?;
            let pred = forest_predict(&model, &x_val)?;
            Ok((macro_f1(&pred.labels, &y_val, n_classes), model))
        });
        let mut best: Option<(usize, f64, _)> = None;
        for (g, r) in scored.into_iter().enumerate() {
            let (f1, model) = r?;
            if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
                best = Some((g, f1, model));
            }
        }
        let (g, validation_f1, model) = best.expect("grid is non-empty");
        let pred = forest_predict(&model, &x_test)?;
        let mut confusion = vec![vec![0u64; n_classes]; n_classes];
        for (&p, &t) in pred.labels.iter().zip(&y_test) {
            confusion[t][p] += 1;
        }
        Ok(FoldResult {
            test_subject: test.to_string(),
            validation_subject: validation.to_string(),
            n_trees: grid[g].0,
            min_leaf: grid[g].1,
            validation_f1,
            test_f1: macro_f1(&pred.labels, &y_test, n_classes),
            n_train: train.len(),
            n_test: y_test.len(),
            correct: pred
                .labels
                .iter()
                .zip(&y_test)
                .filter(|(p, t)| p == t)
                .count(),
            confusion,
            provenance,
        })
    }
}

/// Run one protocol over all leave-one-subject-out folds. Subjects are
/// those with real windows; folds run in parallel and merge in subject
/// order.
pub fn evaluate_loso(
    data: &Dataset,
    protocol: Protocol,
    cfg: &EvalConfig,
) -> Result<EvalReport, HarError> {
    cfg.validate(protocol)?;
    let n_channels = data.channel_names.len();
    let len = data.real.first().map_or(0, Window::len);
    for w in data.real.iter().chain(&data.virtual_) {
        if w.channels.len() != n_channels {
            return Err(HarError::DimensionMismatch(n_channels, w.channels.len()));
        }
        if w.len() != len || w.channels.iter().any(|c| c.len() != len) {
            return Err(HarError::LengthMismatch(len, w.len()));
        }
    }
    let subjects = sorted_unique(data.real.iter().map(|w| w.subject.as_str()));
    if subjects.len() < 3 {
        return Err(HarError::TooFewSubjects(subjects.len()));
    }
    let classes = sorted_unique(
        data.real
            .iter()
            .chain(&data.virtual_)
            .map(|w| w.label.as_str()),
    );
    let real_features = par::map(&data.real, |w| ecdf_features(w, cfg.n_components));
    let input = FoldInput {
        protocol,
        cfg,
        data,
        classes: &classes,
        real_features: &real_features,
    };
    let n = subjects.len();
    let folds = par::map_range(n, |i| input.run(i, &subjects[i], &subjects[(i + 1) % n]))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mean_macro_f1 = folds.iter().map(|f| f.test_f1).sum::<f64>() / folds.len() as f64;
    let correct: usize = folds.iter().map(|f| f.correct).sum();
    let total: usize = folds.iter().map(|f| f.n_test).sum();
    let (wilson_low, wilson_high) = wilson_interval(correct as u64, total as u64, cfg.z)?;
    let mut confusion = vec![vec![0u64; classes.len()]; classes.len()];
    for f in &folds {
        for (row, frow) in confusion.iter_mut().zip(&f.confusion) {
            for (v, fv) in row.iter_mut().zip(frow) {
                *v += fv;
            }
        }
    }
    Ok(EvalReport {
        protocol,
        classes,
        folds,
        mean_macro_f1,
        window_accuracy: correct as f64 / total as f64,
        wilson_low,
        wilson_high,
        confusion,
        config_fingerprint: crate::fingerprint(&(protocol, cfg)),
    })
}
