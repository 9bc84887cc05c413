//! Result files.
//!
//! A run directory holds `layout.json`, `trace.{csv,json}`,
//! `alarms.{csv,json}`, `metrics.json`, `gain.json` and `scenario.json`.
//! Floats are written in shortest round-trip form, so parsing a trace back
//! yields the stored values bit for bit and metrics recomputed from it match
//! exactly.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fdi::Hypothesis;
use crate::matstat::Vector;

use super::baseline::BaselineComparison;
use super::montecarlo::MonteCarloReport;
use super::run::{mse_trace, RunResult, TraceData, TraceLayout};
use super::scenario::component_name;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Parse(format!("unknown format {other:?} (csv | json)"))),
        }
    }
}

/// One row of the trace table: one state coordinate of one CAV's estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub time: f64,
    pub cav_id: usize,
    pub hdv_id: usize,
    pub channel: String,
    pub truth: f64,
    pub estimate: f64,
    pub measurement: Option<f64>,
    pub residual: Option<f64>,
    /// One entry per detector, in layout order.
    pub hypotheses: Vec<Option<Hypothesis>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmRow {
    pub step: usize,
    pub time: f64,
    pub cav_id: usize,
    pub channel: usize,
    pub detector: String,
    pub mode: String,
    pub statistic: f64,
    pub threshold: f64,
    pub implied_far: f64,
    pub hypothesis: Hypothesis,
}

/// `coord -> channel index` for each CAV.
fn channel_maps(layout: &TraceLayout) -> Vec<HashMap<usize, usize>> {
    layout
        .channels
        .iter()
        .map(|chs| chs.iter().enumerate().map(|(r, c)| (c.coordinate(layout.m), r)).collect())
        .collect()
}

fn time(layout: &TraceLayout, k: usize) -> f64 {
    k as f64 * layout.dt
}

pub fn trace_rows(trace: &TraceData, layout: &TraceLayout) -> Vec<TraceRow> {
    let maps = channel_maps(layout);
    let nm = layout.nm();
    let mut rows = Vec::with_capacity((layout.horizon + 1) * layout.n_cav * nm);
    for k in 0..=layout.horizon {
        for i in 0..layout.n_cav {
            for c in 0..nm {
                let ch = maps[i].get(&c).copied();
                let at = |v: &Vec<Vec<Vec<f64>>>| ch.and_then(|r| v[k][i].get(r).copied());
                rows.push(TraceRow {
                    step: k,
                    time: time(layout, k),
                    cav_id: i,
                    hdv_id: c / layout.m,
                    channel: component_name(c % layout.m).to_string(),
                    truth: trace.truth[k][c],
                    estimate: trace.estimates[k][i][c],
                    measurement: at(&trace.measurements),
                    residual: at(&trace.residuals),
                    hypotheses: trace
                        .hypotheses
                        .iter()
                        .map(|h| ch.and_then(|r| h[k][i].get(r).copied().flatten()))
                        .collect(),
                });
            }
        }
    }
    rows
}

pub fn alarm_rows(result: &RunResult) -> Vec<AlarmRow> {
    let layout = &result.layout;
    let mut rows = Vec::new();
    for k in 0..=layout.horizon {
        for (d, spec) in layout.detectors.iter().enumerate() {
            for i in 0..layout.n_cav {
                for (r, ev) in result.evaluations[d][k][i].iter().enumerate() {
                    if let Some(ev) = ev {
                        rows.push(AlarmRow {
                            step: k,
                            time: time(layout, k),
                            cav_id: i,
                            channel: r,
                            detector: spec.label(),
                            mode: spec.mode().to_string(),
                            statistic: ev.statistic,
                            threshold: ev.threshold,
                            implied_far: ev.implied_far,
                            hypothesis: ev.hypothesis,
                        });
                    }
                }
            }
        }
    }
    rows
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow], labels: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = [
        "step", "time", "cav_id", "hdv_id", "channel", "truth", "estimate", "measurement", "residual",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.step.to_string(),
            r.time.to_string(),
            r.cav_id.to_string(),
            r.hdv_id.to_string(),
            r.channel.clone(),
            r.truth.to_string(),
            r.estimate.to_string(),
            opt(r.measurement),
            opt(r.residual),
        ];
        rec.extend(r.hypotheses.iter().map(|h| opt(*h)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_alarms_csv(path: &Path, rows: &[AlarmRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "step", "time", "cav_id", "channel", "detector", "mode", "statistic", "threshold", "implied_far", "hypothesis",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.time.to_string(),
            r.cav_id.to_string(),
            r.channel.to_string(),
            r.detector.clone(),
            r.mode.clone(),
            r.statistic.to_string(),
            r.threshold.to_string(),
            r.implied_far.to_string(),
            r.hypothesis.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse(format!("{what}: bad number {s:?}")))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Parse(format!("{what}: bad integer {s:?}")))
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s, what).map(Some)
    }
}

fn parse_hyp(s: &str) -> Result<Option<Hypothesis>> {
    match s {
        "" => Ok(None),
        "H0" => Ok(Some(Hypothesis::H0)),
        "H1" => Ok(Some(Hypothesis::H1)),
        other => Err(Error::Parse(format!("bad hypothesis {other:?}"))),
    }
}

pub fn read_trace_rows_csv(path: &Path, n_detectors: usize) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let width = r.headers().map_err(csv_err)?.len();
    if width != 9 + n_detectors {
        return Err(Error::Parse(format!(
            "trace has {width} columns, expected {}",
            9 + n_detectors
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        rows.push(TraceRow {
            step: parse_usize(&rec[0], "step")?,
            time: parse_f64(&rec[1], "time")?,
            cav_id: parse_usize(&rec[2], "cav_id")?,
            hdv_id: parse_usize(&rec[3], "hdv_id")?,
            channel: rec[4].to_string(),
            truth: parse_f64(&rec[5], "truth")?,
            estimate: parse_f64(&rec[6], "estimate")?,
            measurement: parse_opt(&rec[7], "measurement")?,
            residual: parse_opt(&rec[8], "residual")?,
            hypotheses: (0..n_detectors).map(|d| parse_hyp(&rec[9 + d])).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

/// Rebuild the in-memory trace from its rows.
pub fn trace_from_rows(rows: &[TraceRow], layout: &TraceLayout) -> Result<TraceData> {
    let nm = layout.nm();
    let n = layout.n_cav;
    let steps = layout.horizon + 1;
    if rows.len() != steps * n * nm {
        return Err(Error::Missing(format!(
            "trace has {} rows, layout implies {}",
            rows.len(),
            steps * n * nm
        )));
    }
    let maps = channel_maps(layout);
    let nd = layout.detectors.len();
    let mut truth = vec![Vector::zeros(nm); steps];
    let mut estimates = vec![vec![Vector::zeros(nm); n]; steps];
    let chans = |k: usize| -> Vec<Vec<f64>> {
        layout
            .channels
            .iter()
            .map(|c| if k == 0 { Vec::new() } else { vec![0.0; c.len()] })
            .collect()
    };
    let mut measurements: Vec<Vec<Vec<f64>>> = (0..steps).map(chans).collect();
    let mut residuals = measurements.clone();
    let mut hypotheses =
        vec![(0..steps).map(|_| layout.channels.iter().map(|c| vec![None; c.len()]).collect::<Vec<_>>()).collect::<Vec<_>>(); nd];
    for (idx, row) in rows.iter().enumerate() {
        let c = idx % nm;
        let i = (idx / nm) % n;
        let k = idx / (nm * n);
        if row.step != k || row.cav_id != i || row.hdv_id != c / layout.m {
            return Err(Error::Parse(format!("trace row {idx} out of order")));
        }
        truth[k][c] = row.truth;
        estimates[k][i][c] = row.estimate;
        if let Some(&r) = maps[i].get(&c) {
            if k > 0 {
                measurements[k][i][r] = row
                    .measurement
                    .ok_or_else(|| Error::Missing(format!("measurement at step {k}, cav {i}")))?;
                residuals[k][i][r] = row
                    .residual
                    .ok_or_else(|| Error::Missing(format!("residual at step {k}, cav {i}")))?;
            }
            for (d, h) in row.hypotheses.iter().enumerate() {
                hypotheses[d][k][i][r] = *h;
            }
        }
    }
    Ok(TraceData {
        truth,
        estimates,
        measurements,
        residuals,
        hypotheses,
    })
}

pub fn read_layout(dir: &Path) -> Result<TraceLayout> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join("layout.json"))?)?)
}

/// Read a run directory's trace in whichever format it was written.
pub fn read_trace(dir: &Path, layout: &TraceLayout) -> Result<TraceData> {
    let csv = dir.join("trace.csv");
    let rows = if csv.exists() {
        read_trace_rows_csv(&csv, layout.detectors.len())?
    } else {
        let v: Value = serde_json::from_str(&fs::read_to_string(dir.join("trace.json"))?)?;
        serde_json::from_value(v["rows"].clone())?
    };
    trace_from_rows(&rows, layout)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Write every artifact of a run into `dir`.
pub fn write_run(dir: &Path, result: &RunResult, scenario_raw: &Value, format: Format) -> Result<()> {
    fs::create_dir_all(dir)?;
    let layout = &result.layout;
    write_json(&dir.join("layout.json"), layout)?;
    write_json(&dir.join("scenario.json"), scenario_raw)?;
    write_json(&dir.join("gain.json"), &result.certificates)?;
    write_json(
        &dir.join("metrics.json"),
        &json!({
            "scenario": layout.scenario,
            "seed": layout.seed,
            "metrics": result.metrics,
            "messages": result.messages,
            "error_dynamics_defect": result.defect,
        }),
    )?;
    let rows = trace_rows(&result.trace, layout);
    let alarms = alarm_rows(result);
    match format {
        Format::Csv => {
            write_trace_csv(&dir.join("trace.csv"), &rows, &layout.labels())?;
            write_alarms_csv(&dir.join("alarms.csv"), &alarms)?;
        }
        Format::Json => {
            write_json(&dir.join("trace.json"), &json!({"detectors": layout.labels(), "rows": rows}))?;
            write_json(&dir.join("alarms.json"), &alarms)?;
        }
    }
    Ok(())
}

/// `montecarlo.json`, plus `trials.csv` with one row per trial for csv.
pub fn write_montecarlo(dir: &Path, report: &MonteCarloReport, format: Format) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("montecarlo.json"), report)?;
    if format == Format::Csv {
        let mut w = csv::Writer::from_path(dir.join("trials.csv")).map_err(csv_err)?;
        w.write_record(["trial", "seed", "mse_mean", "disagreement_rms", "error_dynamics_defect"])
            .map_err(csv_err)?;
        for t in &report.trials {
            w.write_record([
                t.index.to_string(),
                t.seed.to_string(),
                t.metrics.mse_mean.to_string(),
                t.metrics.disagreement_rms.to_string(),
                t.defect.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn write_baseline(dir: &Path, cmp: &BaselineComparison, format: Format) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("baseline.json"), cmp)?;
    if format == Format::Csv {
        write_baseline_mse_csv(&dir.join("baseline_mse.csv"), cmp)?;
    }
    Ok(())
}

fn write_baseline_mse_csv(path: &Path, cmp: &BaselineComparison) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["step", "time", "observer", "sweeps", "mse"]).map_err(csv_err)?;
    for curve in std::iter::once(&cmp.proposed).chain(&cmp.baselines) {
        for (k, v) in curve.mse.iter().enumerate() {
            w.write_record([
                k.to_string(),
                (k as f64 * cmp.dt).to_string(),
                curve.name.clone(),
                curve.sweeps.to_string(),
                v.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    pub id: String,
    pub title: String,
    pub file: String,
    pub x: String,
    pub y: Vec<String>,
    /// Columns that split the table into series.
    pub series: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotManifest {
    pub scenario: String,
    pub seed: u64,
    pub figures: Vec<FigureSpec>,
}

fn fig(id: &str, title: &str, file: &str, x: &str, y: &[&str], series: &[&str]) -> FigureSpec {
    FigureSpec {
        id: id.into(),
        title: title.into(),
        file: file.into(),
        x: x.into(),
        y: y.iter().map(|s| s.to_string()).collect(),
        series: series.iter().map(|s| s.to_string()).collect(),
    }
}

fn emit_trace_plots(
    dir: &Path,
    out: &Path,
    layout: &TraceLayout,
    trace: &TraceData,
    figures: &mut Vec<FigureSpec>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("estimates.csv")).map_err(csv_err)?;
    w.write_record(["step", "time", "cav_id", "hdv_id", "component", "truth", "estimate"])
        .map_err(csv_err)?;
    for k in 0..=layout.horizon {
        for i in 0..layout.n_cav {
            for c in 0..layout.nm() {
                w.write_record([
                    k.to_string(),
                    time(layout, k).to_string(),
                    i.to_string(),
                    (c / layout.m).to_string(),
                    component_name(c % layout.m).to_string(),
                    trace.truth[k][c].to_string(),
                    trace.estimates[k][i][c].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    figures.push(fig(
        "estimates",
        "HDV states and every CAV's estimate",
        "estimates.csv",
        "time",
        &["truth", "estimate"],
        &["hdv_id", "component", "cav_id"],
    ));

    let mut w = csv::Writer::from_path(out.join("mse.csv")).map_err(csv_err)?;
    w.write_record(["step", "time", "cav_id", "mse"]).map_err(csv_err)?;
    let nm = layout.nm() as f64;
    let avg = mse_trace(trace);
    for (k, a) in avg.iter().enumerate() {
        for (i, e) in trace.errors(k).iter().enumerate() {
            w.write_record([k.to_string(), time(layout, k).to_string(), i.to_string(), (e.norm_squared() / nm).to_string()])
                .map_err(csv_err)?;
        }
        w.write_record([k.to_string(), time(layout, k).to_string(), "mean".into(), a.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    figures.push(fig("mse", "Estimation MSE per CAV", "mse.csv", "time", &["mse"], &["cav_id"]));

    let mut w = csv::Writer::from_path(out.join("residuals.csv")).map_err(csv_err)?;
    w.write_record(["step", "time", "cav_id", "channel", "hdv_id", "component", "residual"])
        .map_err(csv_err)?;
    for k in 1..=layout.horizon {
        for i in 0..layout.n_cav {
            for (r, ch) in layout.channels[i].iter().enumerate() {
                w.write_record([
                    k.to_string(),
                    time(layout, k).to_string(),
                    i.to_string(),
                    r.to_string(),
                    ch.hdv.to_string(),
                    component_name(ch.component).to_string(),
                    trace.residuals[k][i][r].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    figures.push(fig(
        "residuals",
        "Residual magnitude per CAV channel",
        "residuals.csv",
        "time",
        &["residual"],
        &["cav_id", "channel"],
    ));

    let alarms_csv = dir.join("alarms.csv");
    let alarms: Option<Vec<AlarmRow>> = if alarms_csv.exists() {
        let mut r = csv::Reader::from_path(&alarms_csv).map_err(csv_err)?;
        let mut v = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            v.push(AlarmRow {
                step: parse_usize(&rec[0], "step")?,
                time: parse_f64(&rec[1], "time")?,
                cav_id: parse_usize(&rec[2], "cav_id")?,
                channel: parse_usize(&rec[3], "channel")?,
                detector: rec[4].to_string(),
                mode: rec[5].to_string(),
                statistic: parse_f64(&rec[6], "statistic")?,
                threshold: parse_f64(&rec[7], "threshold")?,
                implied_far: parse_f64(&rec[8], "implied_far")?,
                hypothesis: parse_hyp(&rec[9])?.ok_or_else(|| Error::Parse("empty hypothesis".into()))?,
            });
        }
        Some(v)
    } else if dir.join("alarms.json").exists() {
        Some(serde_json::from_str(&fs::read_to_string(dir.join("alarms.json"))?)?)
    } else {
        None
    };
    if let Some(alarms) = alarms {
        let mut w = csv::Writer::from_path(out.join("statistics.csv")).map_err(csv_err)?;
        w.write_record(["step", "time", "cav_id", "channel", "detector", "statistic", "threshold", "alarm"])
            .map_err(csv_err)?;
        for a in &alarms {
            w.write_record([
                a.step.to_string(),
                a.time.to_string(),
                a.cav_id.to_string(),
                a.channel.to_string(),
                a.detector.clone(),
                a.statistic.to_string(),
                a.threshold.to_string(),
                (a.hypothesis.is_alarm() as u8).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        figures.push(fig(
            "statistics",
            "Detection statistic against its threshold",
            "statistics.csv",
            "time",
            &["statistic", "threshold"],
            &["detector", "cav_id", "channel"],
        ));
    }

    Ok(())
}

/// Long-format plot tables and a manifest under `<dir>/plots`, built from
/// the stored result files only.
pub fn emit_plots(dir: &Path) -> Result<PlotManifest> {
    let out = dir.join("plots");
    fs::create_dir_all(&out)?;
    let mut figures = Vec::new();
    let mut scenario = None;

    if dir.join("layout.json").exists() {
        let layout = read_layout(dir)?;
        let trace = read_trace(dir, &layout)?;
        emit_trace_plots(dir, &out, &layout, &trace, &mut figures)?;
        scenario = Some((layout.scenario.clone(), layout.seed));
    }

    let baseline = dir.join("baseline.json");
    if baseline.exists() {
        let cmp: BaselineComparison = serde_json::from_str(&fs::read_to_string(&baseline)?)?;
        scenario.get_or_insert((cmp.scenario.clone(), cmp.seed));
        write_baseline_mse_csv(&out.join("baseline_mse.csv"), &cmp)?;
        figures.push(fig(
            "baseline_mse",
            "MSE of the single time-scale observer and the inner-loop baselines",
            "baseline_mse.csv",
            "time",
            &["mse"],
            &["observer"],
        ));
    }

    let Some((scenario, seed)) = scenario else {
        return Err(Error::Missing(format!(
            "{} holds neither layout.json nor baseline.json",
            dir.display()
        )));
    };
    let manifest = PlotManifest {
        scenario,
        seed,
        figures,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
