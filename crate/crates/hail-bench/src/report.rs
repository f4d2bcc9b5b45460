//! Result emission: the per-task accuracy CSV, a lossless records dump, the
//! per-method summary JSON, and a hand-rolled SVG of mean accuracy per
//! stage. Every file is written atomically and deterministically.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use hail_core::metrics::{acc_to_f64, Acc, AccuracyMatrix};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::runner::RunOutcome;
use crate::{BenchError, Result};

/// Writes `bytes` to `path` via a sibling temp file and a rename, so readers
/// never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn sorted_outcomes(outcomes: &[RunOutcome]) -> Vec<&RunOutcome> {
    let mut refs: Vec<&RunOutcome> = outcomes.iter().collect();
    refs.sort_by(|a, b| (&a.method, a.seed).cmp(&(&b.method, b.seed)));
    refs
}

pub fn results_csv(outcomes: &[RunOutcome]) -> String {
    let mut out = String::from("method,seed,stage,task,accuracy\n");
    for o in sorted_outcomes(outcomes) {
        for k in 1..=o.matrix.stages() {
            for j in 1..=k {
                let acc = acc_to_f64(o.matrix.get(k, j).unwrap());
                out.push_str(&format!("{},{},{k},{j},{acc:.6}\n", o.method, o.seed));
            }
        }
    }
    out
}

/// Lossless dump of every run; the `report` subcommand rebuilds all other
/// files from this one.
#[derive(Debug, Serialize, Deserialize)]
struct RecordsFile {
    records: Vec<RecordDump>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordDump {
    method: String,
    seed: u64,
    storage_footprint: usize,
    /// Accuracy matrix rows as exact (numerator, denominator) pairs.
    rows: Vec<Vec<(i64, i64)>>,
}

pub fn records_json(outcomes: &[RunOutcome]) -> Result<String> {
    let records = sorted_outcomes(outcomes)
        .into_iter()
        .map(|o| {
            let rows = (1..=o.matrix.stages())
                .map(|k| {
                    (1..=k)
                        .map(|j| {
                            let acc = o.matrix.get(k, j).unwrap();
                            (*acc.numer(), *acc.denom())
                        })
                        .collect()
                })
                .collect();
            RecordDump {
                method: o.method.clone(),
                seed: o.seed,
                storage_footprint: o.storage_footprint,
                rows,
            }
        })
        .collect();
    Ok(serde_json::to_string_pretty(&RecordsFile { records })?)
}

pub fn load_records(path: &Path) -> Result<Vec<RunOutcome>> {
    let text = fs::read_to_string(path)?;
    let file: RecordsFile = serde_json::from_str(&text)?;
    let mut outcomes = Vec::new();
    for dump in file.records {
        let mut matrix = AccuracyMatrix::new();
        for row in &dump.rows {
            let entries: Vec<Acc> = row
                .iter()
                .map(|(num, den)| {
                    if *den <= 0 {
                        return Err(BenchError::BadResults(format!(
                            "nonpositive denominator {den}"
                        )));
                    }
                    Ok(Ratio::new(*num, *den))
                })
                .collect::<Result<_>>()?;
            matrix.push_row(entries).map_err(BenchError::Core)?;
        }
        outcomes.push(RunOutcome {
            method: dump.method,
            seed: dump.seed,
            matrix,
            storage_footprint: dump.storage_footprint,
        });
    }
    Ok(outcomes)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

fn mean_sd(values: &[f64]) -> MeanSd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanSd { mean, sd: var.sqrt() }
}

#[derive(Debug, Serialize)]
pub struct MethodSummary {
    pub seeds: usize,
    pub final_avg_acc: MeanSd,
    /// Absent when only one stage was run (forgetting needs a past task).
    pub final_forgetting: Option<MeanSd>,
    pub storage_footprint_bytes: MeanSd,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub final_stage: usize,
    pub methods: BTreeMap<String, MethodSummary>,
}

pub fn summarize(outcomes: &[RunOutcome]) -> Result<Summary> {
    if outcomes.is_empty() {
        return Err(BenchError::BadResults("no run records to summarize".into()));
    }
    let final_stage = outcomes[0].matrix.stages();
    let mut grouped: BTreeMap<&str, Vec<&RunOutcome>> = BTreeMap::new();
    for o in outcomes {
        if o.matrix.stages() != final_stage {
            return Err(BenchError::BadResults(format!(
                "{} seed {} ran {} stages, expected {final_stage}",
                o.method,
                o.seed,
                o.matrix.stages()
            )));
        }
        grouped.entry(&o.method).or_default().push(o);
    }

    let mut methods = BTreeMap::new();
    for (method, runs) in grouped {
        let accs: Vec<f64> = runs
            .iter()
            .map(|o| Ok(acc_to_f64(o.matrix.avg_accuracy(final_stage)?)))
            .collect::<hail_core::Result<_>>()?;
        let forgetting = if final_stage >= 2 {
            let values: Vec<f64> = runs
                .iter()
                .map(|o| Ok(acc_to_f64(o.matrix.forgetting(final_stage)?)))
                .collect::<hail_core::Result<_>>()?;
            Some(mean_sd(&values))
        } else {
            None
        };
        let footprints: Vec<f64> = runs.iter().map(|o| o.storage_footprint as f64).collect();
        methods.insert(
            method.to_string(),
            MethodSummary {
                seeds: runs.len(),
                final_avg_acc: mean_sd(&accs),
                final_forgetting: forgetting,
                storage_footprint_bytes: mean_sd(&footprints),
            },
        );
    }
    Ok(Summary { final_stage, methods })
}

const PALETTE: [&str; 7] =
    ["#1b6ca8", "#c0392b", "#27ae60", "#8e44ad", "#d68910", "#16a085", "#5d6d7e"];

/// Mean average-accuracy curve per method as a self-contained SVG.
pub fn accuracy_curve_svg(outcomes: &[RunOutcome]) -> Result<String> {
    if outcomes.is_empty() {
        return Err(BenchError::BadResults("no run records to chart".into()));
    }
    let stages = outcomes[0].matrix.stages();
    let mut per_method: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for o in sorted_outcomes(outcomes) {
        let curve: Vec<f64> = (1..=o.matrix.stages())
            .map(|k| Ok(acc_to_f64(o.matrix.avg_accuracy(k)?)))
            .collect::<hail_core::Result<_>>()?;
        per_method.entry(&o.method).or_default().push(curve);
    }

    let (width, height) = (640.0, 420.0);
    let (left, right, top, bottom) = (64.0, 180.0, 24.0, 48.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let x_of = |stage: usize| {
        if stages == 1 {
            left + plot_w / 2.0
        } else {
            left + plot_w * (stage - 1) as f64 / (stages - 1) as f64
        }
    };
    let y_of = |acc: f64| top + plot_h * (1.0 - acc);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));

    // Axes with ticks and labels.
    svg.push_str(&format!(
        "  <line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        top + plot_h,
        left + plot_w,
        top + plot_h
    ));
    svg.push_str(&format!(
        "  <line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>\n",
        top + plot_h
    ));
    for tick in 0..=4 {
        let acc = tick as f64 / 4.0;
        let y = y_of(acc);
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{y:.1}\" x2=\"{left}\" y2=\"{y:.1}\" stroke=\"black\"/>\n",
            left - 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"end\">{acc:.2}</text>\n",
            left - 9.0,
            y + 4.0
        ));
    }
    for stage in 1..=stages {
        let x = x_of(stage);
        svg.push_str(&format!(
            "  <line x1=\"{x:.1}\" y1=\"{}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"black\"/>\n",
            top + plot_h,
            top + plot_h + 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{x:.1}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{stage}</text>\n",
            top + plot_h + 18.0
        ));
    }
    svg.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"13\" text-anchor=\"middle\">stage</text>\n",
        left + plot_w / 2.0,
        height - 12.0
    ));
    svg.push_str(&format!(
        "  <text x=\"16\" y=\"{:.1}\" font-size=\"13\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {:.1})\">average accuracy</text>\n",
        top + plot_h / 2.0,
        top + plot_h / 2.0
    ));

    for (idx, (method, curves)) in per_method.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut mean_curve = vec![0.0; stages];
        for curve in curves {
            for (slot, v) in mean_curve.iter_mut().zip(curve) {
                *slot += v / curves.len() as f64;
            }
        }
        let points: Vec<String> = mean_curve
            .iter()
            .enumerate()
            .map(|(i, acc)| format!("{:.1},{:.1}", x_of(i + 1), y_of(*acc)))
            .collect();
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let legend_y = top + 16.0 + idx as f64 * 18.0;
        svg.push_str(&format!(
            "  <line x1=\"{:.1}\" y1=\"{legend_y:.1}\" x2=\"{:.1}\" y2=\"{legend_y:.1}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>\n",
            width - right + 12.0,
            width - right + 34.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">{method}</text>\n",
            width - right + 40.0,
            legend_y + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes results.csv, records.json, summary.json, and accuracy_curve.svg.
pub fn emit_reports(outcomes: &[RunOutcome], out_dir: &Path) -> Result<()> {
    if outcomes.is_empty() {
        return Err(BenchError::BadResults("no run records to report".into()));
    }
    fs::create_dir_all(out_dir)?;
    write_atomic(&out_dir.join("results.csv"), results_csv(outcomes).as_bytes())?;
    write_atomic(&out_dir.join("records.json"), records_json(outcomes)?.as_bytes())?;
    let summary = summarize(outcomes)?;
    write_atomic(
        &out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    write_atomic(&out_dir.join("accuracy_curve.svg"), accuracy_curve_svg(outcomes)?.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(method: &str, seed: u64, rows: Vec<Vec<(i64, i64)>>) -> RunOutcome {
        let mut matrix = AccuracyMatrix::new();
        for row in rows {
            matrix
                .push_row(row.into_iter().map(|(n, d)| Ratio::new(n, d)).collect())
                .unwrap();
        }
        RunOutcome { method: method.into(), seed, matrix, storage_footprint: 1024 }
    }

    fn hand_case() -> RunOutcome {
        outcome("hail", 1, vec![vec![(9, 10)], vec![(7, 10), (8, 10)]])
    }

    #[test]
    fn summary_matches_the_hand_oracle() {
        let summary = summarize(&[hand_case()]).unwrap();
        let entry = &summary.methods["hail"];
        assert_eq!(entry.final_avg_acc.mean, 0.75);
        assert_eq!(entry.final_avg_acc.sd, 0.0);
        let f = entry.final_forgetting.unwrap();
        assert_eq!(f.mean, 0.2);
        assert_eq!(f.sd, 0.0);
        assert_eq!(entry.seeds, 1);
    }

    #[test]
    fn single_stage_runs_have_no_forgetting_entry() {
        let summary = summarize(&[outcome("hail", 1, vec![vec![(1, 1)]])]).unwrap();
        assert!(summary.methods["hail"].final_forgetting.is_none());
    }

    #[test]
    fn csv_rows_are_sorted_and_fixed_precision() {
        let outcomes = vec![
            outcome("lwf", 2, vec![vec![(1, 2)], vec![(1, 3), (2, 3)]]),
            outcome("hail", 1, vec![vec![(1, 1)], vec![(1, 1), (1, 1)]]),
        ];
        let csv = results_csv(&outcomes);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,seed,stage,task,accuracy");
        assert_eq!(lines[1], "hail,1,1,1,1.000000");
        assert_eq!(lines[3], "hail,1,2,2,1.000000");
        assert_eq!(lines[4], "lwf,2,1,1,0.500000");
        assert_eq!(lines[5], "lwf,2,2,1,0.333333");
    }

    #[test]
    fn records_round_trip_exactly() {
        let dir = std::env::temp_dir().join("hail-records-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("records.json");
        let outcomes = vec![hand_case(), outcome("ewc", 3, vec![vec![(1, 3)], vec![(1, 7), (2, 7)]])];
        write_atomic(&path, records_json(&outcomes).unwrap().as_bytes()).unwrap();
        let loaded = load_records(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        let ewc = loaded.iter().find(|o| o.method == "ewc").unwrap();
        assert_eq!(ewc.matrix.get(2, 1).unwrap(), Ratio::new(1, 7));
        assert_eq!(ewc.storage_footprint, 1024);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn svg_has_one_polyline_per_method_and_axis_labels() {
        let outcomes = vec![
            hand_case(),
            outcome("finetune", 1, vec![vec![(4, 5)], vec![(1, 5), (3, 5)]]),
        ];
        let svg = accuracy_curve_svg(&outcomes).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("average accuracy"));
        assert!(svg.contains(">stage<"));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_reports_are_rejected() {
        assert!(summarize(&[]).is_err());
        assert!(accuracy_curve_svg(&[]).is_err());
        assert!(emit_reports(&[], Path::new("/tmp/unused")).is_err());
    }
}
