//! CSV layouts. Floats use Rust's shortest round-trip formatting, so the
//! same numbers always give the same bytes.

use anyhow::Result;
use sdjls_core::sim::{MonteCarloReport, Trajectory};

fn num(v: f64) -> String {
    format!("{v}")
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    Ok(String::from_utf8(
        w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?,
    )?)
}

/// `k, theta, x_1..x_n, nu_1..nu_m, rho, u_1..u_m, jstar, in_C1, margin_1..margin_r`.
///
/// The final record has no control; its control cells are empty.
pub fn step_csv(tr: &Trajectory, m: usize) -> Result<String> {
    let first = &tr.records[0];
    let (n, r) = (first.x.len(), first.margins.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["k".to_string(), "theta".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|i| format!("nu_{i}")));
    header.push("rho".into());
    header.extend((1..=m).map(|i| format!("u_{i}")));
    header.push("jstar".into());
    header.push("in_C1".into());
    header.extend((1..=r).map(|i| format!("margin_{i}")));
    w.write_record(&header)?;
    for rec in &tr.records {
        let mut row = vec![rec.k.to_string(), rec.theta.to_string()];
        row.extend(rec.x.iter().map(|v| num(*v)));
        match &rec.control {
            Some(c) => {
                row.extend(c.nu.iter().map(|v| num(*v)));
                row.push(num(c.rho));
                row.extend(c.u.iter().map(|v| num(*v)));
                row.push(num(c.jstar));
            }
            None => row.extend(std::iter::repeat_n(String::new(), 2 * m + 2)),
        }
        row.push(u8::from(rec.in_c1).to_string());
        row.extend(rec.margins.iter().map(|v| num(*v)));
        w.write_record(&row)?;
    }
    finish(w)
}

/// Per-step ensemble statistics. Control columns are empty at `k = T`.
pub fn aggregate_csv(rep: &MonteCarloReport) -> Result<String> {
    let r = rep.row_satisfaction.first().map_or(0, Vec::len);
    let n = rep.mean_state.first().map_or(0, |v| v.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["k".to_string()];
    header.extend((1..=r).map(|j| format!("sat_{j}")));
    header.push("sat_joint".into());
    header.extend((1..=r).map(|j| format!("sat_no_slack_{j}")));
    header.push("no_slack_runs".into());
    header.push("mean_sq_norm".into());
    header.extend((1..=n).map(|i| format!("mean_x_{i}")));
    header.extend(["slack_rate", "mean_slack", "mean_jstar"].map(String::from));
    w.write_record(&header)?;
    for k in 0..=rep.steps {
        let mut row = vec![k.to_string()];
        row.extend(rep.row_satisfaction[k].iter().map(|v| num(*v)));
        row.push(num(rep.joint_satisfaction[k]));
        row.extend(rep.row_satisfaction_no_slack[k].iter().map(|v| num(*v)));
        row.push(rep.no_slack_runs[k].to_string());
        row.push(num(rep.mean_sq_norm[k]));
        row.extend(rep.mean_state[k].iter().map(|v| num(*v)));
        if k < rep.steps {
            row.extend([
                num(rep.slack_rate[k]),
                num(rep.mean_slack[k]),
                num(rep.mean_jstar[k]),
            ]);
        } else {
            row.extend(std::iter::repeat_n(String::new(), 3));
        }
        w.write_record(&row)?;
    }
    finish(w)
}

/// One row per level of a chance-level sweep.
pub struct SweepRow {
    pub xi: f64,
    pub delta: f64,
    pub offsets: Vec<f64>,
    pub total_slack: f64,
    pub slack_usage: f64,
    pub row_violations: usize,
    pub joint_violations: usize,
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let r = rows.first().map_or(0, |s| s.offsets.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["xi".to_string(), "delta".to_string()];
    header.extend((1..=r).map(|j| format!("offset_{j}")));
    header.extend(
        [
            "total_slack",
            "slack_usage",
            "row_violations",
            "joint_violations",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for s in rows {
        let mut row = vec![num(s.xi), num(s.delta)];
        row.extend(s.offsets.iter().map(|v| num(*v)));
        row.extend([
            num(s.total_slack),
            num(s.slack_usage),
            s.row_violations.to_string(),
            s.joint_violations.to_string(),
        ]);
        w.write_record(&row)?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sdjls_core::chance::ChanceMode;
    use sdjls_core::fixtures::*;
    use sdjls_core::rhc::RhcController;
    use sdjls_core::sim::{rollout, summarize, RngSpec, RolloutOptions};

    fn trajectory(steps: usize) -> Trajectory {
        let ctl = RhcController::new(
            benchmark_model(),
            benchmark_gain_table(),
            benchmark_weights(),
            benchmark_input_set(),
            benchmark_chance(0.85, ChanceMode::Individual),
        )
        .unwrap();
        rollout(
            &ctl,
            &benchmark_x0(),
            1,
            steps,
            &mut RngSpec::new(3).streams(0),
            RolloutOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn step_csv_schema_and_values_round_trip() {
        let tr = trajectory(4);
        let text = step_csv(&tr, 1).unwrap();
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(
            header,
            [
                "k", "theta", "x_1", "x_2", "nu_1", "rho", "u_1", "jstar", "in_C1", "margin_1",
                "margin_2"
            ]
        );
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 5);
        for (rec, row) in tr.records.iter().zip(&rows) {
            assert_eq!(row[3].parse::<f64>().unwrap(), rec.x[1]);
            if let Some(c) = &rec.control {
                assert_eq!(row[4].parse::<f64>().unwrap(), c.nu[0]);
            }
        }
        assert_eq!(&rows[4][4], "");
    }

    #[test]
    fn aggregate_csv_has_one_row_per_step() {
        let rep = summarize(&[trajectory(6), trajectory(6)]);
        let text = aggregate_csv(&rep).unwrap();
        assert_eq!(text.lines().count(), 8);
        assert!(text.starts_with("k,sat_1,sat_2,sat_joint,"));
    }
}
