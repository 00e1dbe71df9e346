use std::fmt;

use serde::Serialize;

use super::{LayerShape, ModelConfig, ModelGraph, Widths, INPUT_CHANNELS, OUTPUT_CHANNELS};
use crate::error::Result;
use crate::tensor::Scalar;

pub const TABLE_ROWS: [&str; 15] = [
    "Input Block",
    "Input Pool",
    "Down Block Layer 1",
    "Down Block Layer 2",
    "Down Block Layer 3",
    "Down Block Layer 4",
    "Bridge Layer",
    "Global Layer",
    "Classification Layer",
    "Up Block Layer 1",
    "Up Block Layer 2",
    "Up Block Layer 3",
    "Up Block Layer 4",
    "Up Block Layer 5",
    "Conv Out Layer",
];

/// Parameter-name prefixes owned by each row of [`TABLE_ROWS`].
const ROW_PREFIXES: [&[&str]; 15] = [
    &["encoder.conv1.", "encoder.bn1."],
    &[],
    &["encoder.layer1."],
    &["encoder.layer2."],
    &["encoder.layer3."],
    &["encoder.layer4."],
    &["bridge."],
    &["global."],
    &["classifier."],
    &["up1."],
    &["up2."],
    &["up3."],
    &["up4."],
    &["up5."],
    &["out."],
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerReport {
    pub name: &'static str,
    /// `K x K x O x I` description of the main operator(s).
    pub kernel: String,
    pub output: Vec<Vec<usize>>,
    pub batch_norm: bool,
    pub activation: &'static str,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParameterReport {
    pub rows: Vec<LayerReport>,
    pub total: usize,
}

impl ParameterReport {
    pub fn row(&self, name: &str) -> Option<&LayerReport> {
        self.rows.iter().find(|r| r.name == name)
    }
}

fn fmt_shape(shapes: &[Vec<usize>]) -> String {
    shapes
        .iter()
        .map(|s| if s.len() == 1 { format!("{} x 1", s[0]) } else { s.iter().map(usize::to_string).collect::<Vec<_>>().join(" x ") })
        .collect::<Vec<_>>()
        .join(", ")
}

fn group(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl fmt::Display for ParameterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<22} {:<40} {:<22} {:<6} {:<8} {:>12}",
            "Layer", "Size (K x K x O x I)", "Output (O x W x H)", "BN", "Act.", "Parameters"
        )?;
        writeln!(f, "{}", "-".repeat(115))?;
        for r in &self.rows {
            let params = if r.params == 0 { "-".to_string() } else { group(r.params) };
            writeln!(
                f,
                "{:<22} {:<40} {:<22} {:<6} {:<8} {:>12}",
                r.name,
                r.kernel,
                fmt_shape(&r.output),
                if r.batch_norm { "True" } else { "False" },
                r.activation,
                params
            )?;
        }
        writeln!(f, "{}", "-".repeat(115))?;
        writeln!(f, "{:<102} {:>12}", "Total Parameters", group(self.total))
    }
}

/// Output shape of every stage, derived from the configuration alone.
pub fn shape_trace(cfg: &ModelConfig) -> Result<Vec<LayerShape>> {
    let w = cfg.validate()?;
    let s = cfg.input_size;
    let mut out = vec![
        LayerShape { name: TABLE_ROWS[0], shapes: vec![vec![w.stem, s / 2, s / 2]] },
        LayerShape { name: TABLE_ROWS[1], shapes: vec![vec![w.stem, s / 4, s / 4]] },
    ];
    for (i, &c) in w.stages.iter().enumerate() {
        let side = s / (4 << i);
        out.push(LayerShape { name: TABLE_ROWS[2 + i], shapes: vec![vec![c, side, side]] });
    }
    out.push(LayerShape { name: TABLE_ROWS[6], shapes: vec![vec![w.stages[3], s / 32, s / 32]] });
    if cfg.fusion_enabled {
        out.push(LayerShape { name: TABLE_ROWS[7], shapes: vec![vec![w.global[1]], vec![w.global[2]]] });
        out.push(LayerShape { name: TABLE_ROWS[8], shapes: vec![vec![cfg.num_classes]] });
    }
    for (i, &c) in w.up.iter().enumerate() {
        let side = s / (16 >> i);
        out.push(LayerShape { name: TABLE_ROWS[9 + i], shapes: vec![vec![c, side, side]] });
    }
    out.push(LayerShape { name: TABLE_ROWS[14], shapes: vec![vec![OUTPUT_CHANNELS, s, s]] });
    Ok(out)
}

fn kernel_column(row: usize, cfg: &ModelConfig, w: &Widths) -> String {
    let k = |k: usize, o: usize, i: usize| format!("{k} x {k} x {o} x {i}");
    let c = w.stages;
    let flat = c[3] * cfg.bottleneck_size() * cfg.bottleneck_size();
    let fused_in = c[3] + if cfg.fusion_enabled { w.global[2] } else { c[2] };
    match row {
        0 => k(7, w.stem, INPUT_CHANNELS),
        1 => k(3, w.stem, w.stem),
        2 => k(3, c[0], w.stem),
        3..=5 => k(3, c[row - 2], c[row - 3]),
        6 => k(3, c[3], c[3]),
        7 => [k(1, w.global[0], flat), k(1, w.global[1], w.global[0]), k(1, w.global[2], w.global[1])].join(", "),
        8 => [k(1, w.class_hidden, w.global[1]), k(1, cfg.num_classes, w.class_hidden)].join(", "),
        9 if cfg.fusion_enabled => format!("{} (fusion)", k(3, w.up[0], fused_in)),
        9 => k(3, w.up[0], fused_in),
        10..=13 => k(2, w.up[row - 9], w.up[row - 10]),
        _ => k(1, OUTPUT_CHANNELS, w.up[4]),
    }
}

/// Per-stage trainable parameter counts (weights, biases and batch-norm
/// scale/shift; running statistics excluded) alongside kernel and output
/// descriptions.
pub fn parameter_report<T: Scalar>(g: &ModelGraph<T>) -> ParameterReport {
    let cfg = g.config();
    let widths = g.widths();
    let trace = shape_trace(cfg).expect("built graphs have valid configs");
    let params = g.params();
    let mut rows = Vec::new();
    for shape in trace {
        let i = TABLE_ROWS.iter().position(|&r| r == shape.name).expect("trace names come from TABLE_ROWS");
        let count = params
            .iter()
            .filter(|p| p.is_trainable() && ROW_PREFIXES[i].iter().any(|pre| p.name.starts_with(pre)))
            .map(|p| p.value.len())
            .sum();
        let activation = match i {
            1 => "-",
            8 => "Softmax",
            14 => "Sigmoid",
            _ => "ReLU",
        };
        rows.push(LayerReport {
            name: shape.name,
            kernel: kernel_column(i, cfg, widths),
            output: shape.shapes,
            batch_norm: i != 1,
            activation,
            params: count,
        });
    }
    let total = rows.iter().map(|r| r.params).sum();
    debug_assert_eq!(total, g.trainable_count());
    ParameterReport { rows, total }
}
