//! CSV summaries and SVG figures from a run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::harness::experiments::{sanitize, seed_dir_name, top2_mean, Arm};
use crate::harness::record::{RunRecord, RunStatus};
use crate::harness::svg::{Chart, Series};
use crate::probes::csv_err;

pub const REPORT_DIR: &str = "report";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    Curves,
    Cka,
    Sweeps,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::Curves, PlotKind::Cka, PlotKind::Sweeps];
}

/// Mean and range of one arm's headline metric across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub group: String,
    pub name: String,
    pub value: Option<f64>,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Percent drop when the arm has one, else the task-1 final accuracy.
pub fn headline(arm: &Arm) -> Option<(&'static str, f64)> {
    arm.percent_drop
        .map(|v| ("task1_percent_drop", v))
        .or(arm.task1_final.map(|v| ("task1_final", v)))
}

/// One row per (group, arm) in first-seen order, aggregated over successful records.
pub fn sweep_rows(records: &[RunRecord]) -> Vec<SweepRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut acc: BTreeMap<(String, String), (Option<f64>, &'static str, Vec<f64>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.status == RunStatus::Ok) {
        for arm in &r.outcome.arms {
            let Some((metric, v)) = headline(arm) else { continue };
            let key = (arm.group.clone(), arm.name.clone());
            let e = acc.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                (arm.value, metric, Vec::new())
            });
            e.2.push(v);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (value, metric, vals) = &acc[&key];
            let n = vals.len();
            SweepRow {
                group: key.0.clone(),
                name: key.1.clone(),
                value: *value,
                metric: metric.to_string(),
                n,
                mean: vals.iter().sum::<f64>() / n as f64,
                min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::State(format!("csv buffer: {e}")))
}

struct Out {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Out {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        write_atomic(&path, bytes)?;
        self.files.push(path);
        Ok(())
    }
}

/// Writes the summary CSVs and the requested plots into `<run_dir>/report/`.
pub fn report(run_dir: &Path, records: &[RunRecord], kinds: &[PlotKind]) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Data("no run records to report on".into()));
    }
    let mut out = Out {
        dir: run_dir.join(REPORT_DIR),
        files: Vec::new(),
    };

    let summary: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let t = |i: usize| r.outcome.report.as_ref().and_then(|rep| rep.tasks.get(i));
            vec![
                r.seed.to_string(),
                r.kind.name().to_string(),
                format!("{:?}", r.status).to_lowercase(),
                opt(t(0).map(|a| a.before)),
                opt(t(0).map(|a| a.after)),
                opt(t(0).map(|a| a.percent_drop)),
                opt(t(1).map(|a| a.before)),
                opt(t(1).map(|a| a.after)),
                opt(top2_mean(&r.stage_cka)),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    out.write(
        "summary.csv",
        &csv_bytes(
            &[
                "seed", "kind", "status", "task1_before", "task1_after", "task1_percent_drop", "task2_before",
                "task2_after", "top2_cka", "error",
            ],
            summary,
        )?,
    )?;

    let arms: Vec<Vec<String>> = records
        .iter()
        .flat_map(|r| {
            r.outcome.arms.iter().map(move |a| {
                vec![
                    r.seed.to_string(),
                    a.group.clone(),
                    a.name.clone(),
                    opt(a.value),
                    opt(a.task1_final),
                    opt(a.task2_final),
                    opt(a.percent_drop),
                    opt(a.top2_cka()),
                ]
            })
        })
        .collect();
    if !arms.is_empty() {
        out.write(
            "arms.csv",
            &csv_bytes(
                &["seed", "group", "name", "value", "task1_final", "task2_final", "percent_drop", "top2_cka"],
                arms,
            )?,
        )?;
    }

    let rows = sweep_rows(records);
    let mut groups: Vec<String> = rows.iter().map(|r| r.group.clone()).collect();
    groups.dedup();
    for g in &groups {
        let mine: Vec<&SweepRow> = rows.iter().filter(|r| &r.group == g).collect();
        let table = mine
            .iter()
            .map(|r| {
                vec![
                    r.name.clone(),
                    opt(r.value),
                    r.metric.clone(),
                    r.n.to_string(),
                    r.mean.to_string(),
                    r.min.to_string(),
                    r.max.to_string(),
                ]
            })
            .collect();
        let stem = format!("sweep-{}", sanitize(g));
        out.write(&format!("{stem}.csv"), &csv_bytes(&["name", "value", "metric", "n", "mean", "min", "max"], table)?)?;
        if kinds.contains(&PlotKind::Sweeps) && mine.len() > 1 {
            out.write(&format!("{stem}.svg"), sweep_chart(g, &mine).render().as_bytes())?;
        }
    }

    for r in records.iter().filter(|r| r.status == RunStatus::Ok) {
        let seed_dir = seed_dir_name(r.seed);
        if kinds.contains(&PlotKind::Curves) {
            for (task, chart) in curve_charts(r) {
                out.write(&format!("{seed_dir}/curves-{}.svg", sanitize(&task)), chart.render().as_bytes())?;
            }
        }
        if kinds.contains(&PlotKind::Cka) {
            if let Some(chart) = cka_chart(r) {
                out.write(&format!("{seed_dir}/cka.svg"), chart.render().as_bytes())?;
            }
        }
    }
    Ok(out.files)
}

fn sweep_chart(group: &str, rows: &[&SweepRow]) -> Chart {
    let numeric = rows.iter().all(|r| r.value.is_some());
    let x = |i: usize, r: &SweepRow| if numeric { r.value.unwrap_or(0.0) } else { i as f64 };
    Chart {
        title: format!("{group}: mean and range over seeds"),
        x_label: if numeric { "value".into() } else { String::new() },
        y_label: rows[0].metric.clone(),
        series: vec![Series {
            name: group.to_string(),
            points: rows.iter().enumerate().map(|(i, r)| (x(i, r), r.mean)).collect(),
            band: rows.iter().enumerate().map(|(i, r)| (x(i, r), r.min, r.max)).collect(),
        }],
        categories: if numeric { Vec::new() } else { rows.iter().map(|r| r.name.clone()).collect() },
    }
}

/// One chart per evaluated task, with the plain run and every arm that recorded that curve.
pub fn curve_charts(r: &RunRecord) -> Vec<(String, Chart)> {
    let mut by_task: BTreeMap<String, Vec<Series>> = BTreeMap::new();
    let mut add = |label: String, curves: &BTreeMap<String, Vec<f64>>| {
        for (task, ys) in curves {
            by_task.entry(task.clone()).or_default().push(Series {
                name: label.clone(),
                points: ys.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect(),
                band: Vec::new(),
            });
        }
    };
    if !r.outcome.curves.is_empty() {
        add("plain".into(), &r.outcome.curves);
    }
    for a in &r.outcome.arms {
        add(format!("{}/{}", a.group, a.name), &a.curves);
    }
    by_task
        .into_iter()
        .map(|(task, series)| {
            let chart = Chart {
                title: format!("{task} test accuracy, seed {}", r.seed),
                x_label: "epoch".into(),
                y_label: "accuracy".into(),
                series,
                categories: Vec::new(),
            };
            (task, chart)
        })
        .collect()
}

/// Dot plot of stage CKA for the plain run and every arm that has a table.
pub fn cka_chart(r: &RunRecord) -> Option<Chart> {
    let mut tables: Vec<(String, &Vec<(String, f64)>)> = Vec::new();
    if !r.stage_cka.is_empty() {
        tables.push(("plain".into(), &r.stage_cka));
    }
    for a in &r.outcome.arms {
        if !a.stage_cka.is_empty() {
            tables.push((format!("{}/{}", a.group, a.name), &a.stage_cka));
        }
    }
    let categories: Vec<String> = tables.first()?.1.iter().map(|(s, _)| s.clone()).collect();
    Some(Chart {
        title: format!("CKA before vs after task 2, seed {}", r.seed),
        x_label: "stage".into(),
        y_label: "CKA".into(),
        series: tables
            .into_iter()
            .map(|(name, t)| Series {
                name,
                points: t.iter().enumerate().map(|(i, (_, v))| (i as f64, *v)).collect(),
                band: Vec::new(),
            })
            .collect(),
        categories,
    })
}
