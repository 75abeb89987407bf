use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coarse_target;
use crate::datagen::{DatasetSample, Manifest};
use crate::error::{FscError, Result};
use crate::geom::{subsample_random, PointCloud};
use crate::metrics::{chamfer_l1, chamfer_l2, emd, REPORT_SCALE};
use crate::model::Model;
use crate::rng::{derive_seed, derive_seed_n};

pub const OVERALL: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub split: String,
    pub resolutions: Vec<usize>,
    pub with_l2: bool,
    pub with_emd: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: "test".into(),
            resolutions: vec![2048, 1024, 512, 256, 128, 64],
            with_l2: true,
            with_emd: true,
        }
    }
}

/// Means over one (category, resolution) cell, times 1000.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub resolution: usize,
    pub category: String,
    pub count: usize,
    pub cd_l1: f64,
    pub cd_l2: Option<f64>,
    pub emd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFailure {
    pub id: String,
    pub resolution: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub failures: Vec<EvalFailure>,
}

impl EvalReport {
    pub fn overall(&self, resolution: usize) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.resolution == resolution && r.category == OVERALL)
    }

    /// `(resolution, overall CD-l1)` in report order.
    pub fn curve(&self) -> Vec<(usize, f64)> {
        self.rows.iter().filter(|r| r.category == OVERALL).map(|r| (r.resolution, r.cd_l1)).collect()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut s = String::from("resolution,category,count,cd_l1,cd_l2,emd\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:.6},{},{}", r.resolution, r.category, r.count, r.cd_l1, opt(r.cd_l2), opt(r.emd));
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// A prediction: the detailed cloud and, optionally, the coarse one.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub detail: PointCloud,
    pub coarse: Option<PointCloud>,
}

/// The partial view of `sample` at `resolution`. Resolutions that were not
/// generated are drawn from the smallest stored level above them.
pub fn input_at(sample: &DatasetSample, resolution: usize) -> Result<PointCloud> {
    if let Some(p) = sample.partials.get(&resolution) {
        return Ok(p.clone());
    }
    let (_, source) = sample.partials.range(resolution..).next().ok_or_else(|| {
        FscError::InvalidValue(format!("sample {} has no partial with at least {resolution} points", sample.id))
    })?;
    subsample_random(source, resolution, derive_seed_n(derive_seed(0, &sample.id), resolution as u64))
}

struct Cell {
    category: String,
    cd_l1: f64,
    cd_l2: Option<f64>,
    emd: Option<f64>,
}

fn score(
    sample: &DatasetSample,
    resolution: usize,
    opts: &EvalOptions,
    predict: &(dyn Fn(&PointCloud) -> Result<Prediction> + Sync),
) -> Result<Cell> {
    let input = input_at(sample, resolution)?;
    let pred = predict(&input)?;
    let cd_l1 = chamfer_l1(&pred.detail, &sample.gt)? * REPORT_SCALE;
    let cd_l2 = if opts.with_l2 { Some(chamfer_l2(&pred.detail, &sample.gt)? * REPORT_SCALE) } else { None };
    let emd = match (&pred.coarse, opts.with_emd) {
        (Some(c), true) => Some(emd(c, &coarse_target(sample, c.len())?)?.0 * REPORT_SCALE),
        _ => None,
    };
    Ok(Cell { category: sample.category.clone(), cd_l1, cd_l2, emd })
}

fn mean_opt(vals: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = vals.iter().copied().collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores `predict` on every sample and resolution. Samples that fail are
/// recorded in `failures` and skipped.
pub fn evaluate_samples(
    samples: &[DatasetSample],
    opts: &EvalOptions,
    predict: &(dyn Fn(&PointCloud) -> Result<Prediction> + Sync),
) -> EvalReport {
    let mut report = EvalReport::default();
    for &r in &opts.resolutions {
        let cells: Vec<(String, Result<Cell>)> =
            samples.par_iter().map(|s| (s.id.clone(), score(s, r, opts, predict))).collect();
        let mut by_cat: BTreeMap<String, Vec<Cell>> = BTreeMap::new();
        let mut all = Vec::new();
        for (id, c) in cells {
            match c {
                Ok(c) => {
                    all.push((c.cd_l1, c.cd_l2, c.emd));
                    by_cat.entry(c.category.clone()).or_default().push(c);
                }
                Err(e) => report.failures.push(EvalFailure { id, resolution: Some(r), message: e.to_string() }),
            }
        }
        let row = |category: &str, vals: &[(f64, Option<f64>, Option<f64>)]| EvalRow {
            resolution: r,
            category: category.to_string(),
            count: vals.len(),
            cd_l1: vals.iter().map(|v| v.0).sum::<f64>() / vals.len() as f64,
            cd_l2: mean_opt(&vals.iter().map(|v| v.1).collect::<Vec<_>>()),
            emd: mean_opt(&vals.iter().map(|v| v.2).collect::<Vec<_>>()),
        };
        for (cat, cells) in &by_cat {
            let vals: Vec<_> = cells.iter().map(|c| (c.cd_l1, c.cd_l2, c.emd)).collect();
            report.rows.push(row(cat, &vals));
        }
        if !all.is_empty() {
            report.rows.push(row(OVERALL, &all));
        }
    }
    report
}

/// Evaluates `model` on one split of a generated dataset. Unreadable
/// samples are reported and skipped.
pub fn evaluate(model: &Model, root: &Path, manifest: &Manifest, opts: &EvalOptions) -> Result<EvalReport> {
    let entries = manifest.split(&opts.split)?;
    let loaded: Vec<(String, Result<DatasetSample>)> =
        entries.par_iter().map(|e| (e.id.clone(), DatasetSample::load(root, e))).collect();
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (id, s) in loaded {
        match s {
            Ok(s) => samples.push(s),
            Err(e) => failures.push(EvalFailure { id, resolution: None, message: e.to_string() }),
        }
    }
    let predict = |x: &PointCloud| {
        let c = model.complete(x)?;
        Ok(Prediction { detail: c.y_detail, coarse: Some(c.y_coarse) })
    };
    let mut report = evaluate_samples(&samples, opts, &predict);
    failures.append(&mut report.failures);
    report.failures = failures;
    Ok(report)
}
