//! General-test, early-test and mask-detect evaluation, metrics and reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{DatasetSplit, FeatureSchema, SplitKind};
use crate::error::{Error, Result};
use crate::model::{EndemicModel, ModelDims};
use crate::pipeline::{evidence_mode_for, DataBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Plain,
    MaskDetect,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Plain => "plain",
            EvalMode::MaskDetect => "mask_detect",
        }
    }
}

/// Replaces every time-variant feature with the masking token (`None`).
pub fn mask_time_variant(
    tweet_features: &[Option<f64>],
    user_features: &[Option<f64>],
    schema: &FeatureSchema,
) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let mask = |values: &[Option<f64>], defs: &[crate::datamodel::FeatureDef]| -> Vec<Option<f64>> {
        values
            .iter()
            .enumerate()
            .map(|(j, v)| match defs.get(j) {
                Some(d) if d.time_variant => None,
                _ => *v,
            })
            .collect()
    };
    (mask(tweet_features, &schema.tweet), mask(user_features, &schema.user))
}

/// Confusion counts with "fake" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted_fake: bool, actual_fake: bool) {
        match (predicted_fake, actual_fake) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run: String,
    pub split: SplitKind,
    pub mode: EvalMode,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub n_fake: usize,
    pub n_genuine: usize,
    pub excluded_unlabelled: usize,
    /// Accuracy of the reference run minus this run's; unset on the reference.
    pub delta_acc: Option<f64>,
}

impl MetricsReport {
    pub fn from_confusion(run: &str, split: SplitKind, mode: EvalMode, confusion: Confusion, excluded: usize) -> Self {
        MetricsReport {
            run: run.to_string(),
            split,
            mode,
            accuracy: confusion.accuracy(),
            precision: confusion.precision(),
            recall: confusion.recall(),
            f1: confusion.f1(),
            confusion,
            n_fake: confusion.tp + confusion.fn_,
            n_genuine: confusion.fp + confusion.tn,
            excluded_unlabelled: excluded,
            delta_acc: None,
        }
    }

    /// Recomputes every metric from the confusion counts.
    pub fn check_consistency(&self) -> Result<()> {
        let c = &self.confusion;
        let expected = [
            ("accuracy", self.accuracy, c.accuracy()),
            ("precision", self.precision, c.precision()),
            ("recall", self.recall, c.recall()),
            ("f1", self.f1, c.f1()),
        ];
        for (name, have, want) in expected {
            if (have - want).abs() > 1e-9 || !(0.0..=1.0).contains(&have) {
                return Err(Error::numeric("metrics report", format!("{name} = {have}, confusion gives {want}")));
            }
        }
        if self.n_fake + self.n_genuine != c.total() {
            return Err(Error::numeric("metrics report", "class counts disagree with confusion total".to_string()));
        }
        Ok(())
    }
}

/// Scores pre-computed `(predicted, actual)` class pairs; `None` actual means
/// the tweet is unlabelled and is excluded.
pub fn score(run: &str, split: SplitKind, mode: EvalMode, pairs: &[(usize, Option<usize>)]) -> MetricsReport {
    let mut c = Confusion::default();
    let mut excluded = 0;
    for &(pred, actual) in pairs {
        match actual {
            Some(y) => c.add(pred == 1, y == 1),
            None => excluded += 1,
        }
    }
    MetricsReport::from_confusion(run, split, mode, c, excluded)
}

/// Eval-mode predictions over `split`, aggregated in tweet-id order.
pub fn evaluate(
    model: &EndemicModel,
    data: &DataBundle,
    split: &DatasetSplit,
    mode: EvalMode,
    run: &str,
) -> Result<MetricsReport> {
    if split.tweet_ids.is_empty() {
        return Err(Error::Precondition(format!("{} split is empty", split.kind.as_str())));
    }
    let dims: ModelDims = model.dims;
    let fetch = evidence_mode_for(split.kind);
    let mut ids: Vec<&String> = split.tweet_ids.iter().collect();
    ids.sort();
    let pairs: Vec<(usize, Option<usize>)> = ids
        .par_iter()
        .map(|id| {
            let actual = data.tweet(id)?.label.class_index();
            if actual.is_none() {
                return Ok((0, None));
            }
            let input = data.input(&dims, id, fetch, mode == EvalMode::MaskDetect)?;
            let p = model.predict(&input)?;
            Ok((usize::from(p[1] > p[0]), actual))
        })
        .collect::<Result<_>>()?;
    let report = score(run, split.kind, mode, &pairs);
    if report.excluded_unlabelled > 0 {
        log::warn!(
            "{}: excluded {} unlabelled tweets",
            split.kind.as_str(),
            report.excluded_unlabelled
        );
    }
    Ok(report)
}

/// Fills `delta_acc` relative to the first run.
pub fn with_deltas(runs: &[MetricsReport]) -> Vec<MetricsReport> {
    let mut out = runs.to_vec();
    if let Some(reference) = runs.first().map(|r| r.accuracy) {
        for (i, r) in out.iter_mut().enumerate() {
            r.delta_acc = (i > 0).then(|| reference - r.accuracy);
        }
    }
    out
}

pub const CSV_HEADER: &str = "run,split,mode,n,accuracy,precision,recall,f1,tp,fp,fn,tn,excluded_unlabelled,delta_acc";

pub fn csv_row(r: &MetricsReport) -> String {
    let c = &r.confusion;
    format!(
        "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{}",
        r.run,
        r.split.as_str(),
        r.mode.as_str(),
        c.total(),
        r.accuracy,
        r.precision,
        r.recall,
        r.f1,
        c.tp,
        c.fp,
        c.fn_,
        c.tn,
        r.excluded_unlabelled,
        r.delta_acc.map(|d| format!("{d:.6}")).unwrap_or_default()
    )
}

fn text_table(runs: &[MetricsReport]) -> String {
    let width = runs.iter().map(|r| r.run.len()).max().unwrap_or(3).max(3);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:<12}  {:<11}  {:>5}  {:>8}  {:>9}  {:>8}  {:>8}  {:>8}",
        "run", "split", "mode", "n", "accuracy", "precision", "recall", "f1", "ΔAcc"
    );
    for r in runs {
        let delta = r.delta_acc.map(|d| format!("{d:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<width$}  {:<12}  {:<11}  {:>5}  {:>8.4}  {:>9.4}  {:>8.4}  {:>8.4}  {:>8}",
            r.run,
            r.split.as_str(),
            r.mode.as_str(),
            r.confusion.total(),
            r.accuracy,
            r.precision,
            r.recall,
            r.f1,
            delta
        );
    }
    s
}

const BAR_COLOURS: [[u8; 3]; 4] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40]];

/// Grouped bars (accuracy, precision, recall, F1) for each run, on a 0..1 axis.
fn bar_plot(runs: &[&MetricsReport]) -> RgbImage {
    let (w, h) = (80 + 120 * runs.len() as u32, 300u32);
    let (top, bottom, left) = (20u32, 270u32, 40u32);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    for q in 0..=4 {
        let y = bottom - (bottom - top) * q / 4;
        for x in left..w - 10 {
            img.put_pixel(x, y, Rgb(if q == 0 { [0, 0, 0] } else { [220, 220, 220] }));
        }
    }
    for y in top..=bottom {
        img.put_pixel(left, y, Rgb([0, 0, 0]));
    }
    for (i, r) in runs.iter().enumerate() {
        let values = [r.accuracy, r.precision, r.recall, r.f1];
        for (j, v) in values.iter().enumerate() {
            let x0 = left + 20 + 120 * i as u32 + 22 * j as u32;
            let bar = ((bottom - top) as f64 * v.clamp(0.0, 1.0)).round() as u32;
            for x in x0..x0 + 18 {
                for y in bottom - bar..bottom {
                    img.put_pixel(x, y, Rgb(BAR_COLOURS[j]));
                }
            }
        }
    }
    img
}

/// Writes `report.csv`, `report.txt` and one bar plot per split.
pub fn report(runs: &[MetricsReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if runs.is_empty() {
        return Err(Error::Precondition("report needs at least one run".into()));
    }
    let runs = with_deltas(runs);
    let plots = out_dir.join("plots");
    std::fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &runs {
        csv.push_str(&csv_row(r));
        csv.push('\n');
    }
    let csv_path = out_dir.join("report.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let txt_path = out_dir.join("report.txt");
    std::fs::write(&txt_path, text_table(&runs)).map_err(|e| Error::io(&txt_path, e))?;

    let mut paths = vec![csv_path, txt_path];
    let mut kinds: Vec<SplitKind> = runs.iter().map(|r| r.split).collect();
    kinds.sort();
    kinds.dedup();
    for kind in kinds {
        let group: Vec<&MetricsReport> = runs.iter().filter(|r| r.split == kind).collect();
        let path = plots.join(format!("{}.png", kind.as_str()));
        bar_plot(&group)
            .save(&path)
            .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        paths.push(path);
    }
    Ok(paths)
}
