//! CSV logs, SVG plots and the text summary of a run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::{DMatrix, DVector};
use pma_core::experiment::{Oracle, RunReport, Verdict};
use pma_core::{EconomicCost, LiftedLinearModel};

use crate::svg::{ramp, render, Panel, Series};

/// 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn push_vec(row: &mut Vec<String>, v: &DVector<f64>) {
    row.extend(v.iter().map(|x| num(*x)));
}

fn header(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn to_csv(head: &[String], rows: &[Vec<String>]) -> String {
    let mut s = head.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

pub fn drto_csv(report: &RunReport) -> String {
    let (nx, nu) = report
        .drto
        .first()
        .map(|r| (r.predicted.x0.len(), r.predicted.inputs[0].len()))
        .unwrap_or((0, 0));
    let period = report.drto.first().map_or(0, |r| r.predicted.period());
    let mut head: Vec<String> = [
        "l",
        "phi_model",
        "phi_plant",
        "phi_plant_economic",
        "cost_gap",
        "eps_norm",
        "lambda_norm",
        "kkt_residual",
        "plant_kkt_residual",
        "oracle_distance",
        "prediction_error",
        "lambda_mismatch",
        "sqp_iterations",
        "status",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    head.extend(header("x0_", nx));
    for k in 0..period {
        head.extend(header(&format!("u{k}_"), nu));
    }
    let rows: Vec<Vec<String>> = report
        .drto
        .iter()
        .map(|r| {
            let mut row = vec![
                r.iteration.to_string(),
                num(r.model_cost),
                num(r.plant_cost),
                num(r.plant_economic_cost),
                opt(r.cost_gap),
                num(r.eps_norm),
                num(r.lambda_norm),
                num(r.kkt_residual),
                num(r.plant_kkt_residual),
                opt(r.oracle_distance),
                num(r.prediction_error),
                num(r.lambda_mismatch),
                r.sqp_iterations.to_string(),
                format!("{:?}", r.status),
            ];
            push_vec(&mut row, &r.theta);
            row
        })
        .collect();
    to_csv(&head, &rows)
}

pub fn ticks_csv(report: &RunReport) -> String {
    let (nz, nv) = report
        .ticks
        .first()
        .map(|t| (t.state.len(), t.input.len()))
        .unwrap_or((0, 0));
    let mut head = vec!["j".to_string()];
    head.extend(header("z", nz));
    head.extend(header("v", nv));
    head.extend(header("d", nz));
    head.extend(
        [
            "innovation_norm",
            "tracking_error",
            "reference_iteration",
            "fallback",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let rows: Vec<Vec<String>> = report
        .ticks
        .iter()
        .map(|t| {
            let mut row = vec![t.tick.to_string()];
            push_vec(&mut row, &t.state);
            push_vec(&mut row, &t.input);
            push_vec(&mut row, &t.disturbance);
            row.push(num(t.innovation_norm));
            row.push(num(t.tracking_error));
            row.push(t.reference_iteration.to_string());
            row.push(u8::from(t.fallback.is_some()).to_string());
            row
        })
        .collect();
    to_csv(&head, &rows)
}

/// `x_0..x_T` with the input and stage cost of each stage (empty at `T`).
pub fn oracle_csv(oracle: &Oracle, cost: &EconomicCost) -> Result<String> {
    let traj = &oracle.trajectory;
    let (nx, nu, t) = (traj.x0.len(), traj.inputs[0].len(), traj.period());
    let mut head = vec!["i".to_string()];
    head.extend(header("x", nx));
    head.extend(header("u", nu));
    head.push("stage_cost".into());
    let mut rows = Vec::new();
    for i in 0..=t {
        let mut row = vec![i.to_string()];
        push_vec(&mut row, traj.state(i));
        if i < t {
            push_vec(&mut row, &traj.inputs[i]);
            row.push(num(cost.stage(traj.state(i), &traj.inputs[i])?));
        } else {
            row.extend(std::iter::repeat_n(String::new(), nu + 1));
        }
        rows.push(row);
    }
    Ok(to_csv(&head, &rows))
}

/// `Fx`, `Fu` and `c` of the lifted model in long form.
pub fn model_csv(lifted: &LiftedLinearModel) -> String {
    let mut s = String::from("matrix,row,col,value\n");
    let mut dump = |name: &str, m: &DMatrix<f64>| {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let _ = writeln!(s, "{name},{r},{c},{}", num(m[(r, c)]));
            }
        }
    };
    dump("Fx", &lifted.fx);
    dump("Fu", &lifted.fu);
    dump(
        "c",
        &DMatrix::from_column_slice(lifted.c.len(), 1, lifted.c.as_slice()),
    );
    s
}

pub fn summary(report: &RunReport) -> String {
    let mut s = String::new();
    let verdict = match &report.verdict {
        Verdict::Converged => "converged".to_string(),
        Verdict::MaxIter => "maximum iterations reached".to_string(),
        Verdict::Failed(e) => format!("failed: {e}"),
    };
    let _ = writeln!(s, "drto iterations: {}", report.drto.len());
    let _ = writeln!(s, "verdict: {verdict}");
    if let Some(o) = &report.oracle {
        let _ = writeln!(s, "oracle cost: {}", num(o.cost));
        let _ = writeln!(s, "oracle economic cost: {}", num(o.economic_cost));
        if let Some(v) = report.oracle_dominance_violation() {
            let _ = writeln!(s, "oracle dominance margin: {}", num(-v));
        }
    }
    if let Some(last) = report.drto.last() {
        let _ = writeln!(s, "final plant cost: {}", num(last.plant_cost));
        if let Some(g) = last.cost_gap {
            let _ = writeln!(s, "final relative cost gap: {}", num(g));
        }
        if let Some(d) = last.oracle_distance {
            let _ = writeln!(s, "final oracle state distance: {}", num(d));
        }
        let _ = writeln!(s, "final prediction error: {}", num(last.prediction_error));
    }
    if !report.ticks.is_empty() {
        let inn = report.period_innovations();
        let _ = writeln!(s, "control ticks: {}", report.ticks.len());
        let _ = writeln!(s, "final period innovation: {}", num(*inn.last().unwrap()));
        let fallbacks = report.ticks.iter().filter(|t| t.fallback.is_some()).count();
        let _ = writeln!(s, "fallback ticks: {fallbacks}");
    }
    s
}

const ORACLE: &str = "#000000";

pub fn levels_svg(report: &RunReport) -> String {
    let n = report.drto.len();
    let nx = report.drto.first().map_or(0, |r| r.predicted.x0.len());
    let panels: Vec<Panel> = (0..nx)
        .map(|k| {
            let mut series: Vec<Series> = report
                .drto
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let pts = (0..=r.predicted.period())
                        .map(|t| (t as f64, r.predicted.state(t)[k]))
                        .collect();
                    Series::line(format!("iteration {}", r.iteration), pts, ramp(i, n), 1.2)
                })
                .collect();
            if let Some(o) = &report.oracle {
                let pts = (0..=o.trajectory.period())
                    .map(|t| (t as f64, o.trajectory.state(t)[k]))
                    .collect();
                series.push(Series::line("oracle", pts, ORACLE, 2.5));
            }
            Panel {
                title: format!("tank {}", k + 1),
                x_label: "stage".into(),
                y_label: "level (m)".into(),
                series,
                log_y: false,
            }
        })
        .collect();
    render(
        "Predicted levels per DRTO iteration",
        &panels,
        2,
        &legend(n),
    )
}

pub fn inputs_svg(report: &RunReport) -> String {
    let n = report.drto.len();
    let nu = report
        .drto
        .first()
        .map_or(0, |r| r.predicted.inputs[0].len());
    let held = |inputs: &[DVector<f64>], k: usize| -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = inputs
            .iter()
            .enumerate()
            .map(|(t, u)| (t as f64, u[k]))
            .collect();
        if let Some(last) = inputs.last() {
            pts.push((inputs.len() as f64, last[k]));
        }
        pts
    };
    let panels: Vec<Panel> = (0..nu)
        .map(|k| {
            let mut series: Vec<Series> = report
                .drto
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    Series::line(
                        format!("iteration {}", r.iteration),
                        held(&r.predicted.inputs, k),
                        ramp(i, n),
                        1.2,
                    )
                    .stepped()
                })
                .collect();
            if let Some(o) = &report.oracle {
                series.push(
                    Series::line("oracle", held(&o.trajectory.inputs, k), ORACLE, 2.5).stepped(),
                );
            }
            Panel {
                title: format!("input {}", k + 1),
                x_label: "stage".into(),
                y_label: "flow (m3/h)".into(),
                series,
                log_y: false,
            }
        })
        .collect();
    render("Inputs per DRTO iteration", &panels, 2, &legend(n))
}

pub fn convergence_svg(report: &RunReport) -> String {
    let pts = |f: &dyn Fn(&pma_core::experiment::DrtoRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        report
            .drto
            .iter()
            .filter_map(|r| f(r).map(|v| (r.iteration as f64, v)))
            .collect()
    };
    let modifiers = Panel {
        title: "modifier norms".into(),
        x_label: "DRTO iteration".into(),
        y_label: "inf-norm".into(),
        series: vec![
            Series::line("eps", pts(&|r| Some(r.eps_norm)), "#1f77b4", 2.0),
            Series::line("lambda", pts(&|r| Some(r.lambda_norm)), "#d62728", 2.0),
            Series::line(
                "prediction error",
                pts(&|r| Some(r.prediction_error)),
                "#2ca02c",
                1.5,
            ),
        ],
        log_y: true,
    };
    let gap = Panel {
        title: "distance to the oracle".into(),
        x_label: "DRTO iteration".into(),
        y_label: "value".into(),
        series: vec![
            Series::line(
                "relative cost gap",
                pts(&|r| r.cost_gap.map(f64::abs)),
                "#9467bd",
                2.0,
            ),
            Series::line(
                "state distance (m)",
                pts(&|r| r.oracle_distance),
                "#ff7f0e",
                2.0,
            ),
        ],
        log_y: true,
    };
    let legend = [
        ("eps".to_string(), "#1f77b4".to_string()),
        ("lambda".to_string(), "#d62728".to_string()),
        ("prediction error".to_string(), "#2ca02c".to_string()),
        ("cost gap".to_string(), "#9467bd".to_string()),
        ("state distance".to_string(), "#ff7f0e".to_string()),
    ];
    render("Convergence", &[modifiers, gap], 2, &legend)
}

pub fn control_svg(report: &RunReport) -> String {
    let ticks = &report.ticks;
    let nz = ticks.first().map_or(0, |t| t.state.len());
    let nv = ticks.first().map_or(0, |t| t.input.len());
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];
    let levels = Panel {
        title: "measured levels".into(),
        x_label: "tick".into(),
        y_label: "level (m)".into(),
        series: (0..nz)
            .map(|k| {
                let pts = ticks.iter().map(|t| (t.tick as f64, t.state[k])).collect();
                Series::line(format!("z{}", k + 1), pts, colors[k % 4], 1.2)
            })
            .collect(),
        log_y: false,
    };
    let inputs = Panel {
        title: "applied inputs".into(),
        x_label: "tick".into(),
        y_label: "flow (m3/h)".into(),
        series: (0..nv)
            .map(|k| {
                let pts = ticks.iter().map(|t| (t.tick as f64, t.input[k])).collect();
                Series::line(format!("v{}", k + 1), pts, colors[k % 4], 1.2).stepped()
            })
            .collect(),
        log_y: false,
    };
    let per_period = report.period_innovations();
    let errors = Panel {
        title: "per-period maxima".into(),
        x_label: "period".into(),
        y_label: "inf-norm".into(),
        series: vec![
            Series::line(
                "innovation",
                per_period
                    .iter()
                    .enumerate()
                    .map(|(p, v)| (p as f64, *v))
                    .collect(),
                "#9467bd",
                2.0,
            ),
            Series::line(
                "tracking error",
                ticks
                    .chunks(report.local_period.max(1))
                    .enumerate()
                    .map(|(p, c)| {
                        (
                            p as f64,
                            c.iter().map(|t| t.tracking_error).fold(0.0, f64::max),
                        )
                    })
                    .collect(),
                "#ff7f0e",
                2.0,
            ),
        ],
        log_y: true,
    };
    render("Closed loop", &[levels, inputs, errors], 2, &[])
}

fn legend(n: usize) -> Vec<(String, String)> {
    let mut l = Vec::new();
    if n > 0 {
        l.push(("first iteration".to_string(), ramp(0, n)));
        l.push(("last iteration".to_string(), ramp(n - 1, n)));
    }
    l.push(("oracle".to_string(), ORACLE.to_string()));
    l
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Writes every artifact of `report` into `dir`.
pub fn emit(report: &RunReport, cost: &EconomicCost, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(dir, "drto_iters.csv", &drto_csv(report))?;
    write(dir, "control_ticks.csv", &ticks_csv(report))?;
    if let Some(o) = &report.oracle {
        write(dir, "oracle.csv", &oracle_csv(o, cost)?)?;
    }
    write(dir, "summary.txt", &summary(report))?;
    write(dir, "levels.svg", &levels_svg(report))?;
    write(dir, "inputs.svg", &inputs_svg(report))?;
    write(dir, "convergence.svg", &convergence_svg(report))?;
    if !report.ticks.is_empty() {
        write(dir, "control.svg", &control_svg(report))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip_exactly() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(num(1.5), "1.5000000000000000e0");
    }

    #[test]
    fn csv_has_one_line_per_row() {
        let s = to_csv(&["a".into(), "b".into()], &[vec!["1".into(), "2".into()]]);
        assert_eq!(s, "a,b\n1,2\n");
    }
}
