use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use super::formulas::{dwa_cost, mlp_cost, pwa_cost, sepvit_block_cost, two_window_blocks_cost};
use crate::backbone::{MergeKind, ModelConfig, SepVit};
use crate::error::{Error, Result};
use crate::nn::{Forward, Module};
use crate::tensor::{macs, Scalar, Tape, Tensor};

/// One component of the network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostRow {
    /// Scope path, e.g. `stage2.block1.pwa`.
    pub name: String,
    /// 1-based stage; 0 for the head.
    pub stage: usize,
    pub analytic_macs: u64,
    pub empirical_macs: Option<u64>,
    pub params: u64,
}

impl CostRow {
    pub fn is_attention(&self) -> bool {
        self.name.ends_with(".dwa") || self.name.ends_with(".pwa")
    }
}

/// Geometry of one stage, echoed into every report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageGeometry {
    pub stage: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub window: usize,
    pub group: usize,
    /// Windows at side `M`.
    pub windows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub model: String,
    pub resolution: usize,
    pub batch: usize,
    pub stages: Vec<StageGeometry>,
    pub rows: Vec<CostRow>,
    pub notes: Vec<String>,
}

impl CostReport {
    pub fn total_analytic(&self) -> u64 {
        self.rows.iter().map(|r| r.analytic_macs).sum()
    }

    /// `None` unless every row was measured.
    pub fn total_empirical(&self) -> Option<u64> {
        self.rows.iter().map(|r| r.empirical_macs).sum()
    }

    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    /// Attention rows whose measured MACs differ from the formula.
    pub fn attention_mismatches(&self) -> Vec<&CostRow> {
        self.rows
            .iter()
            .filter(|r| r.is_attention() && r.empirical_macs != Some(r.analytic_macs))
            .collect()
    }

    /// `name,stage,analytic_macs,empirical_macs,params`, one row per
    /// component; unmeasured cells are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Contract(format!("csv output failed: {e}"));
        w.write_record(["name", "stage", "analytic_macs", "empirical_macs", "params"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                r.stage.to_string(),
                r.analytic_macs.to_string(),
                r.empirical_macs.map(|v| v.to_string()).unwrap_or_default(),
                r.params.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Contract(format!("csv output failed: {e}")))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory csv");
        String::from_utf8(buf).expect("utf-8")
    }

    /// Aligned plain-text table with a totals line.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>5} {:>15} {:>15} {:>12}", "component", "stage", "analytic_macs", "empirical_macs", "params");
        for r in &self.rows {
            let emp = r.empirical_macs.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "{:<24} {:>5} {:>15} {:>15} {:>12}", r.name, r.stage, r.analytic_macs, emp, r.params);
        }
        let emp = self.total_empirical().map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(s, "{:<24} {:>5} {:>15} {:>15} {:>12}", "total", "", self.total_analytic(), emp, self.total_params());
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

const NOTES: [&str; 2] = [
    "1 MAC = one multiply-accumulate; layer norm, softmax, GELU and scaling count 0",
    "GMACs are reported where the literature writes FLOPs",
];

fn stage_geometry(config: &ModelConfig) -> Result<Vec<StageGeometry>> {
    let sides = config.stage_sides()?;
    Ok(config
        .stages
        .iter()
        .zip(sides)
        .enumerate()
        .map(|(i, (s, side))| StageGeometry {
            stage: i + 1,
            height: side,
            width: side,
            channels: s.channels,
            window: s.window,
            group: s.group,
            windows: side * side / (s.window * s.window),
        })
        .collect())
}

/// Component name for a parameter: the scope its compute is recorded under.
pub fn component_of(param: &str) -> String {
    let parts: Vec<&str> = param.split('.').collect();
    match parts.as_slice() {
        ["stages", i, "blocks", j, rest @ ..] => {
            let stage = i.parse::<usize>().map_or(0, |v| v + 1);
            let part = match rest.first().copied() {
                Some("dwa") | Some("norm1") | Some("window_tokens") => "dwa",
                Some("pwa") => "pwa",
                _ => "mlp",
            };
            format!("stage{stage}.block{j}.{part}")
        }
        ["stages", i, part, ..] => {
            let stage = i.parse::<usize>().map_or(0, |v| v + 1);
            format!("stage{stage}.{part}")
        }
        [first, ..] => first.to_string(),
        [] => String::new(),
    }
}

/// Exact per-component parameter totals, in model order.
pub fn count_params<T: Scalar, M: Module<T>>(model: &M) -> Vec<(String, u64)> {
    let mut rows: Vec<(String, u64)> = Vec::new();
    model.visit(&mut |p| {
        let c = component_of(&p.name);
        match rows.iter_mut().find(|(n, _)| *n == c) {
            Some(row) => row.1 += p.numel() as u64,
            None => rows.push((c, p.numel() as u64)),
        }
    });
    rows
}

/// Parameter count derived from the configuration alone.
pub fn analytic_param_count(config: &ModelConfig) -> Result<u64> {
    config.validate()?;
    let sides = config.stage_sides()?;
    let r = config.mlp_ratio;
    let mut total = 0;
    let mut c_in = config.in_channels;
    for (s, side) in config.stages.iter().zip(sides) {
        let c = s.channels;
        total += s.merge.num_params(c_in, c);
        for kind in &s.block_pattern {
            let ws = s.window_side(*kind);
            let n = side * side / (ws * ws);
            total += 6 * (c * c + c) + 3 * 2 * c + 2 * r * c * c + r * c + c + n * c;
        }
        total += 9 * c + c;
        c_in = c;
    }
    total += 2 * c_in + c_in * config.num_classes + config.num_classes;
    Ok(total as u64)
}

/// Formula-only report for a configuration at batch size `batch`.
pub fn analytic_report(config: &ModelConfig, batch: usize) -> Result<CostReport> {
    config.validate()?;
    let geo = stage_geometry(config)?;
    let b = batch as u64;
    let ratio = config.mlp_ratio as u64;
    let mut rows = Vec::new();
    let mut c_in = config.in_channels as u64;
    let mut params = BTreeMap::new();
    if let Ok(model) = SepVit::<f32>::new(config, 0) {
        params.extend(count_params(&model));
    }
    let mut row = |name: String, stage, macs: u64| {
        let p = params.get(&name).copied().unwrap_or(0);
        rows.push(CostRow {
            name,
            stage,
            analytic_macs: macs * b,
            empirical_macs: None,
            params: p,
        });
    };
    for (s, g) in config.stages.iter().zip(&geo) {
        let (h, w, c) = (g.height as u64, g.width as u64, s.channels as u64);
        let k2 = (s.merge.kernel * s.merge.kernel) as u64;
        let merge = match s.merge.kind {
            MergeKind::Dense => h * w * c * c_in * k2,
            MergeKind::Separable => h * w * c_in * k2 + h * w * c_in * c,
        };
        row(format!("stage{}.merge", g.stage), g.stage, merge);
        for (j, kind) in s.block_pattern.iter().enumerate() {
            let m = s.window_side(*kind) as u64;
            let cost = sepvit_block_cost(h, w, c, m, ratio)?;
            row(format!("stage{}.block{j}.dwa", g.stage), g.stage, cost.dwa);
            row(format!("stage{}.block{j}.pwa", g.stage), g.stage, cost.pwa);
            row(format!("stage{}.block{j}.mlp", g.stage), g.stage, cost.mlp);
        }
        row(format!("stage{}.cpe", g.stage), g.stage, h * w * c * 9);
        c_in = c;
    }
    row("head".into(), 0, c_in * config.num_classes as u64);
    Ok(CostReport {
        model: config.name.clone(),
        resolution: config.input_resolution,
        batch,
        stages: geo,
        rows,
        notes: NOTES.iter().map(|s| s.to_string()).collect(),
    })
}

/// Run one instrumented forward pass on zero images of `input_shape` and
/// attach measured MACs to the analytic report.
pub fn count_macs_empirical<T: Scalar>(model: &SepVit<T>, input_shape: &[usize]) -> Result<CostReport> {
    let batch = input_shape.first().copied().unwrap_or(0);
    let mut report = analytic_report(&model.config, batch)?;
    let own = count_params(model);
    let (res, log) = macs::count(|| {
        let tape = Tape::new();
        let ctx = Forward::inference(&tape);
        model.forward(&ctx, &tape.constant(Tensor::zeros(input_shape))).map(|_| ())
    });
    res?;
    for r in &mut report.rows {
        r.empirical_macs = Some(log.get(&r.name));
        r.params = own.iter().find(|(n, _)| *n == r.name).map_or(0, |(_, p)| *p);
    }
    for (scope, n) in &log.entries {
        if !report.rows.iter().any(|r| &r.name == scope) {
            report.notes.push(format!("unattributed scope {scope}: {n} MACs"));
            report.rows.push(CostRow {
                name: scope.clone(),
                stage: 0,
                analytic_macs: 0,
                empirical_macs: Some(*n),
                params: 0,
            });
        }
    }
    Ok(report)
}

/// Separable block against two successive window-attention blocks at
/// each stage's DSSA geometry.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageComparison {
    pub stage: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub window: usize,
    pub windows: usize,
    pub sepvit_macs: u64,
    pub two_block_macs: u64,
    pub ratio: f64,
}

pub fn block_comparison(config: &ModelConfig) -> Result<Vec<StageComparison>> {
    let ratio = config.mlp_ratio as u64;
    stage_geometry(config)?
        .into_iter()
        .map(|g| {
            let (h, w, c, m) = (g.height as u64, g.width as u64, g.channels as u64, g.window as u64);
            let sep = dwa_cost(h, w, c, m)? + pwa_cost(h, w, c, m)? + mlp_cost(h, w, c, ratio);
            let pair = two_window_blocks_cost(h, w, c, m, ratio)?;
            Ok(StageComparison {
                stage: g.stage,
                height: g.height,
                width: g.width,
                channels: g.channels,
                window: g.window,
                windows: g.windows,
                sepvit_macs: sep,
                two_block_macs: pair,
                ratio: sep as f64 / pair as f64,
            })
        })
        .collect()
}

pub fn write_comparison_csv<W: Write>(rows: &[StageComparison], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Contract(format!("csv output failed: {e}"));
    w.write_record(["stage", "height", "width", "channels", "window", "windows", "sepvit_macs", "two_block_macs", "ratio"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.stage.to_string(),
            r.height.to_string(),
            r.width.to_string(),
            r.channels.to_string(),
            r.window.to_string(),
            r.windows.to_string(),
            r.sepvit_macs.to_string(),
            r.two_block_macs.to_string(),
            format!("{:.6}", r.ratio),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Contract(format!("csv output failed: {e}")))
}
