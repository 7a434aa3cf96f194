//! CSV serialization of simulation logs.
//!
//! Schema (one row per retained step):
//! `t,x1..xn,u1..um,u_sg1..u_sgm,h,B,delta_t,Wc1..WcL,Wa1..WaL,th1..thp,gamma_min,status`
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! a column back with `str::parse::<f64>` recovers the logged value exactly.

use std::fmt::Write as _;
use std::path::Path;

use safe_mbrl::sim::{SimLog, TerminalStatus};

/// Column header for a log with the given dimensions.
pub fn header(n: usize, m: usize, l: usize, p: usize) -> String {
    let mut cols: Vec<String> = vec!["t".into()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend((1..=m).map(|i| format!("u{i}")));
    cols.extend((1..=m).map(|i| format!("u_sg{i}")));
    cols.push("h".into());
    cols.push("B".into());
    cols.push("delta_t".into());
    cols.extend((1..=l).map(|i| format!("Wc{i}")));
    cols.extend((1..=l).map(|i| format!("Wa{i}")));
    cols.extend((1..=p).map(|i| format!("th{i}")));
    cols.push("gamma_min".into());
    cols.push("status".into());
    cols.join(",")
}

/// Number of columns in the schema.
pub fn column_count(n: usize, m: usize, l: usize, p: usize) -> usize {
    1 + n + 2 * m + 3 + 2 * l + p + 2
}

/// Render the log as CSV text, keeping every `decimate`-th record plus the
/// final one.
pub fn to_csv(log: &SimLog, decimate: usize) -> String {
    let decimate = decimate.max(1);
    let mut out = String::new();
    out.push_str(&header(
        log.state_dim,
        log.input_dim,
        log.basis_len,
        log.param_dim,
    ));
    out.push('\n');
    let last = log.records.len().saturating_sub(1);
    for (i, r) in log.records.iter().enumerate() {
        if i % decimate != 0 && i != last {
            continue;
        }
        let mut row: Vec<String> = Vec::with_capacity(
            column_count(log.state_dim, log.input_dim, log.basis_len, log.param_dim),
        );
        row.push(fmt(r.t));
        row.extend(r.x.iter().map(|&v| fmt(v)));
        row.extend(r.u_total.iter().map(|&v| fmt(v)));
        row.extend(r.u_safeguard.iter().map(|&v| fmt(v)));
        row.push(fmt(r.h));
        row.push(fmt(r.b));
        row.push(fmt(r.delta_t));
        row.extend(r.w_c.iter().map(|&v| fmt(v)));
        row.extend(r.w_a.iter().map(|&v| fmt(v)));
        row.extend(r.theta_hat.iter().map(|&v| fmt(v)));
        row.push(fmt(r.gamma_min));
        row.push(row_status(log, i).to_string());
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

fn row_status(log: &SimLog, idx: usize) -> &'static str {
    let terminal = idx + 1 == log.records.len();
    if terminal && log.status != TerminalStatus::Completed {
        return log.status.as_str();
    }
    let r = &log.records[idx];
    if r.h <= 0.0 || r.cost_substituted {
        "violation"
    } else {
        "ok"
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Write the CSV to disk.
pub fn write_log(log: &SimLog, path: &Path, decimate: usize) -> std::io::Result<()> {
    std::fs::write(path, to_csv(log, decimate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use safe_mbrl::scenarios::scenario_by_name;
    use safe_mbrl::sim::run_scenario;

    #[test]
    fn column_count_matches_header_and_formula() {
        // Nonlinear scenario dimensions: n = 2, m = 1, L = 3, p = 3.
        let h = header(2, 1, 3, 3);
        assert_eq!(h.split(',').count(), column_count(2, 1, 3, 3));
        assert_eq!(column_count(2, 1, 3, 3), 19);
        assert_eq!(
            h,
            "t,x1,x2,u1,u_sg1,h,B,delta_t,Wc1,Wc2,Wc3,Wa1,Wa2,Wa3,th1,th2,th3,gamma_min,status"
        );
        // Integrator dimensions: n = 2, m = 2, L = 3, p = 0.
        assert_eq!(header(2, 2, 3, 0).split(',').count(), column_count(2, 2, 3, 0));
    }

    #[test]
    fn zero_horizon_gives_header_plus_one_row() {
        let mut cfg = scenario_by_name("nonlinear_convex_safe").unwrap();
        cfg.horizon = 0.0;
        let log = run_scenario(&cfg).unwrap();
        let csv = to_csv(&log, 10);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split(',').count(), 19);
    }

    #[test]
    fn floats_round_trip_exactly() {
        let mut cfg = scenario_by_name("nonlinear_convex_safe").unwrap();
        cfg.horizon = 0.03;
        let log = run_scenario(&cfg).unwrap();
        let csv = to_csv(&log, 1);
        let mut lines = csv.lines();
        let _ = lines.next();
        for (row, rec) in lines.zip(&log.records) {
            let fields: Vec<&str> = row.split(',').collect();
            assert_eq!(fields[0].parse::<f64>().unwrap(), rec.t);
            assert_eq!(fields[1].parse::<f64>().unwrap(), rec.x[0]);
            assert_eq!(fields[2].parse::<f64>().unwrap(), rec.x[1]);
            assert_eq!(fields[3].parse::<f64>().unwrap(), rec.u_total[0]);
            let gamma_col = fields.len() - 2;
            assert_eq!(fields[gamma_col].parse::<f64>().unwrap(), rec.gamma_min);
        }
    }

    #[test]
    fn decimation_keeps_every_tenth_and_final_record() {
        let mut cfg = scenario_by_name("nonlinear_convex_safe").unwrap();
        cfg.horizon = 0.025; // 26 records: indices 0, 10, 20, 25
        let log = run_scenario(&cfg).unwrap();
        assert_eq!(log.records.len(), 26);
        let csv = to_csv(&log, 10);
        assert_eq!(csv.lines().count(), 1 + 4);
    }
}
