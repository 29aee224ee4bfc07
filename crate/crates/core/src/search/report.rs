use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::RankedResult;
use crate::simulate::{DataError, Dataset, SimError, Simulator, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

/// Renders the ranked table with one row per structure and the fitted
/// parameters. Parameter columns are the union of all names in first-seen
/// order; absent parameters are left blank.
pub fn report(results: &[RankedResult], format: ReportFormat) -> String {
    let names = param_union(results);
    match format {
        ReportFormat::Text => text(results, &names),
        ReportFormat::Json => serde_json::to_string_pretty(&json_doc(results)).expect("json values serialize"),
        ReportFormat::Csv => csv_table(results, &names),
    }
}

fn param_union(results: &[RankedResult]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in results {
        for n in &r.names {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
    }
    names
}

fn text(results: &[RankedResult], names: &[String]) -> String {
    let width = results.iter().map(|r| r.id.len()).max().unwrap_or(0).max(5);
    let test_col = results.first().map(|r| format!("Test RRMSE ({})", r.test_output)).unwrap_or_default();
    let mut s = String::new();
    let _ = writeln!(s, "{:>4}  {:<width$}  {:>24}  {:>18}", "Rank", "Model", "Validation summed RRMSE", test_col);
    for r in results {
        let _ = writeln!(s, "{:>4}  {:<width$}  {:>24.6}  {:>18.6}", r.rank, r.id, r.validation_error, r.test_error);
    }
    if !names.is_empty() {
        let _ = writeln!(s, "\nParameters");
        let _ = write!(s, "{:<width$}", "Model");
        for n in names {
            let _ = write!(s, "  {n:>12}");
        }
        s.push('\n');
        for r in results {
            let _ = write!(s, "{:<width$}", r.id);
            for n in names {
                match r.param(n) {
                    Some(v) => {
                        let _ = write!(s, "  {v:>12.6}");
                    }
                    None => {
                        let _ = write!(s, "  {:>12}", "");
                    }
                }
            }
            s.push('\n');
        }
    }
    s
}

fn json_doc(results: &[RankedResult]) -> Value {
    let rows: Vec<Value> = results
        .iter()
        .map(|r| {
            json!({
                "rank": r.rank,
                "model": r.id,
                "validation_rrmse": finite_or_null(r.validation_error),
                "test_rrmse": finite_or_null(r.test_error),
                "train_rrmse": finite_or_null(r.train_error),
                "test_output": r.test_output,
                "outputs": r.outputs,
                "params": r.names.iter().zip(&r.params).map(|(n, v)| (n.clone(), json!(v))).collect::<serde_json::Map<_, _>>(),
                "seed": r.seed,
                "evals": r.evals,
            })
        })
        .collect();
    json!({ "results": rows })
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn csv_table(results: &[RankedResult], names: &[String]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["rank", "model", "validation_rrmse", "test_rrmse", "train_rrmse"];
    header.extend(names.iter().map(String::as_str));
    w.write_record(&header).expect("in-memory write");
    for r in results {
        let mut row = vec![
            r.rank.to_string(),
            r.id.clone(),
            r.validation_error.to_string(),
            r.test_error.to_string(),
            r.train_error.to_string(),
        ];
        row.extend(names.iter().map(|n| r.param(n).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Writes `t, <o>_measured, <o>_simulated` for every fitted output of
/// `result` over the whole grid. Samples past a simulation failure are blank.
pub fn write_series<W: Write>(
    result: &RankedResult,
    data: &Dataset,
    solver: &SolverConfig,
    writer: W,
) -> Result<(), SimError> {
    let traj = Simulator::new(&result.model, data)?.run(&result.params, solver);
    let mut outputs = result.outputs.clone();
    if !outputs.contains(&result.test_output) {
        outputs.push(result.test_output.clone());
    }
    let measured: Vec<&[f64]> = outputs.iter().map(|o| data.require(o)).collect::<Result<_, _>>()?;
    let simulated: Vec<&[f64]> = outputs.iter().map(|o| traj.series(o).unwrap_or(&[])).collect();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    for o in &outputs {
        header.push(format!("{o}_measured"));
        header.push(format!("{o}_simulated"));
    }
    w.write_record(&header).map_err(DataError::from)?;
    for (i, t) in data.t().iter().enumerate() {
        let mut row = vec![t.to_string()];
        for (m, s) in measured.iter().zip(&simulated) {
            row.push(m[i].to_string());
            row.push(s.get(i).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row).map_err(DataError::from)?;
    }
    w.flush().map_err(DataError::from)?;
    Ok(())
}
