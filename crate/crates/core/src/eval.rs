//! Colorization metrics over a split and report formatting.
//!
//! All errors are taken on normalized channels. `mae` and `mse_ab` compare
//! the predicted and true chroma directly. `mse_lab` renders both sides to
//! clamped 8-bit sRGB first and re-extracts L, a* and b*, so lightness
//! shifts caused by gamut clamping count as error.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colorspace::{assemble_output, normalize, rgb_to_lab, Planes};
use crate::dataset::{Example, ExampleSource};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::train::collate;

pub const CSV_HEADER: [&str; 4] = ["Config. Name", "Avg. MAE", "Avg. MSE a*b*", "Avg. MSE La*b*"];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub mae: f64,
    pub mse_ab: f64,
    pub mse_lab: f64,
}

/// Metrics for one image. `pred_ab` and `gt_ab` are `2 x H x W` normalized
/// chroma, `l` is the `1 x H x W` lightness plane in [0, 100].
pub fn image_metrics(pred_ab: &Planes, gt_ab: &Planes, l: &Planes) -> Result<ImageMetrics> {
    let dims = |p: &Planes| (p.channels, p.height, p.width);
    if dims(pred_ab) != dims(gt_ab) || pred_ab.channels != 2 {
        return Err(Error::Shape(format!(
            "prediction is {:?} but ground truth is {:?}, both must be 2xHxW",
            dims(pred_ab),
            dims(gt_ab)
        )));
    }
    let n = pred_ab.data.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, t) in pred_ab.data.iter().zip(&gt_ab.data) {
        abs += (p - t).abs();
        sq += (p - t) * (p - t);
    }
    let render = |ab: &Planes| -> Result<Vec<f64>> {
        let pair = normalize(&rgb_to_lab(&assemble_output(l, ab)?));
        Ok([pair.l_norm.data, pair.ab_norm.data].concat())
    };
    let (p, t) = (render(pred_ab)?, render(gt_ab)?);
    let mse_lab = p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
    Ok(ImageMetrics { mae: abs / n, mse_ab: sq / n, mse_lab })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub name: String,
    #[serde(flatten)]
    pub metrics: ImageMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub images: usize,
    pub avg_mae: f64,
    pub avg_mse_ab: f64,
    pub avg_mse_lab: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_image: Option<Vec<ImageRow>>,
}

impl MetricReport {
    /// Averages per-image metrics with equal weight per image.
    pub fn from_rows(model: &str, rows: Vec<ImageRow>, keep_rows: bool) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
        Self {
            model: model.to_string(),
            images: rows.len(),
            avg_mae: mean(|m| m.mae),
            avg_mse_ab: mean(|m| m.mse_ab),
            avg_mse_lab: mean(|m| m.mse_lab),
            per_image: keep_rows.then_some(rows),
        }
    }

    /// A report carrying only the averages, e.g. published reference values.
    pub fn summary(model: &str, avg_mae: f64, avg_mse_ab: f64, avg_mse_lab: f64) -> Self {
        Self { model: model.to_string(), images: 0, avg_mae, avg_mse_ab, avg_mse_lab, per_image: None }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// CSV with one row per report under the [`CSV_HEADER`] columns.
pub fn to_csv(reports: &[MetricReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in reports {
        w.write_record([r.model.clone(), format!("{:.6}", r.avg_mae), format!("{:.6}", r.avg_mse_ab), format!("{:.6}", r.avg_mse_lab)])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Scores every example of `data` with `predict`, which maps an example to
/// its predicted `2 x H x W` chroma.
pub fn evaluate_with<S, F>(data: &S, model: &str, keep_rows: bool, predict: F) -> Result<MetricReport>
where
    S: ExampleSource + ?Sized,
    F: Fn(&Example) -> Result<Planes> + Sync,
{
    let rows = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let ex = data.load(i)?;
            let pred = predict(&ex)?;
            Ok(ImageRow { name: data.describe(i), metrics: example_metrics(&ex, &pred)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_rows(model, rows, keep_rows))
}

fn example_metrics(ex: &Example, pred: &Planes) -> Result<ImageMetrics> {
    let (h, w) = (ex.target.dim(1), ex.target.dim(2));
    let to_f64 = |d: &[f32]| d.iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
    let gt = Planes::new(2, h, w, to_f64(ex.target.data()))?;
    let l = Planes::new(1, h, w, ex.input.item(0)[..h * w].iter().map(|&v| 100.0 * f64::from(v)).collect())?;
    image_metrics(pred, &gt, &l)
}

/// Inference-mode predictions of `g` for a batch of examples.
pub fn predict_batch(g: &ModelGraph<f32>, batch: &[Example]) -> Result<Vec<Planes>> {
    let (x, _, _) = collate(batch)?;
    let out = g.infer(&x)?;
    let (h, w) = (out.ab.dim(2), out.ab.dim(3));
    (0..batch.len())
        .map(|i| Planes::new(2, h, w, out.ab.item(i).iter().map(|&v| f64::from(v)).collect()))
        .collect()
}

/// Evaluates `g` over `data`, running inference `batch` images at a time.
pub fn evaluate<S: ExampleSource + ?Sized>(
    g: &ModelGraph<f32>,
    data: &S,
    model: &str,
    batch: usize,
    keep_rows: bool,
) -> Result<MetricReport> {
    if batch == 0 {
        return Err(Error::Config("batch must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch) {
        let examples = chunk.par_iter().map(|&i| data.load(i)).collect::<Result<Vec<_>>>()?;
        let preds = predict_batch(g, &examples)?;
        let metrics = examples
            .par_iter()
            .zip(&preds)
            .map(|(ex, p)| example_metrics(ex, p))
            .collect::<Result<Vec<_>>>()?;
        rows.extend(chunk.iter().zip(metrics).map(|(&i, metrics)| ImageRow { name: data.describe(i), metrics }));
    }
    Ok(MetricReport::from_rows(model, rows, keep_rows))
}

/// Reports ordered by ascending average MAE, ties broken by name.
pub fn compare(reports: &[MetricReport]) -> Vec<&MetricReport> {
    let mut out: Vec<&MetricReport> = reports.iter().collect();
    out.sort_by(|a, b| a.avg_mae.total_cmp(&b.avg_mae).then_with(|| a.model.cmp(&b.model)));
    out
}

pub fn ranking_table(reports: &[MetricReport]) -> String {
    let ranked = compare(reports);
    let width = ranked.iter().map(|r| r.model.chars().count()).chain([CSV_HEADER[0].len()]).max().unwrap_or(0);
    let mut s = String::new();
    writeln!(s, "{:>4}  {:<width$}  {:>10}  {:>13}  {:>14}", "rank", CSV_HEADER[0], CSV_HEADER[1], CSV_HEADER[2], CSV_HEADER[3])
        .unwrap();
    for (i, r) in ranked.iter().enumerate() {
        writeln!(s, "{:>4}  {:<width$}  {:>10.6}  {:>13.6}  {:>14.6}", i + 1, r.model, r.avg_mae, r.avg_mse_ab, r.avg_mse_lab)
            .unwrap();
    }
    s
}

/// Identity predictor: returns the ground-truth chroma.
pub fn ground_truth(ex: &Example) -> Result<Planes> {
    let (h, w) = (ex.target.dim(1), ex.target.dim(2));
    Planes::new(2, h, w, ex.target.data().iter().map(|&v| f64::from(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic_examples;
    use crate::model::{ChannelScale, ModelConfig};

    fn planes(c: usize, v: Vec<f64>) -> Planes {
        let side = ((v.len() / c) as f64).sqrt() as usize;
        Planes::new(c, side, side, v).unwrap()
    }

    #[test]
    fn offset_prediction() {
        let gt = planes(2, (0..32).map(|i| 0.3 + 0.01 * i as f64).collect());
        let pred = planes(2, gt.data.iter().map(|v| v + 0.1).collect());
        let l = Planes::filled(1, 4, 4, 50.0);
        let m = image_metrics(&pred, &gt, &l).unwrap();
        assert!((m.mae - 0.1).abs() < 1e-12);
        assert!((m.mse_ab - 0.01).abs() < 1e-12);
        assert!(m.mse_lab > 0.0);
        let same = image_metrics(&gt, &gt, &l).unwrap();
        assert_eq!(same, ImageMetrics::default());
    }

    #[test]
    fn shape_mismatch() {
        let l = Planes::filled(1, 4, 4, 50.0);
        assert!(image_metrics(&Planes::filled(2, 4, 4, 0.5), &Planes::filled(2, 2, 8, 0.5), &l).is_err());
        assert!(image_metrics(&Planes::filled(3, 4, 4, 0.5), &Planes::filled(3, 4, 4, 0.5), &l).is_err());
    }

    #[test]
    fn json_keys_and_csv_columns() {
        let r = MetricReport::summary("Proposed 3", 0.043767, 0.002177, 0.005151);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for k in ["avg_mae", "avg_mse_ab", "avg_mse_lab"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert!(v.get("per_image").is_none());
        let csv = to_csv(&[r]);
        assert_eq!(
            csv,
            "Config. Name,Avg. MAE,Avg. MSE a*b*,Avg. MSE La*b*\nProposed 3,0.043767,0.002177,0.005151\n"
        );
    }

    #[test]
    fn model_evaluation_is_deterministic() {
        let cfg = ModelConfig { num_classes: 3, input_size: 32, channel_scale: ChannelScale::new(1, 16).unwrap(), ..Default::default() };
        let g = ModelGraph::<f32>::new(cfg, 4).unwrap();
        let data = synthetic_examples(5, 32, 3, 9);
        let a = evaluate(&g, &data, "m", 2, true).unwrap();
        let b = evaluate(&g, &data, "m", 3, true).unwrap();
        assert_eq!(a.images, 5);
        assert_eq!(a.per_image.as_ref().unwrap().len(), 5);
        assert_eq!(a, b);
        let per_image = evaluate_with(&data, "m", false, |ex| Ok(predict_batch(&g, std::slice::from_ref(ex))?.remove(0))).unwrap();
        assert!((per_image.avg_mae - a.avg_mae).abs() < 1e-7);
    }
}
