use anyhow::{bail, Context, Result};
use std::io::Write;
use std::path::Path;

use crate::run::TIMESERIES;

/// Resolves a quantity to a column: the exact name, or the unique column
/// `<name>_<theta>`.
fn resolve(headers: &[String], quantity: &str) -> Result<usize> {
    if let Some(i) = headers.iter().position(|h| h == quantity) {
        return Ok(i);
    }
    let prefix = format!("{quantity}_");
    let hits: Vec<usize> = (0..headers.len()).filter(|&i| headers[i].starts_with(&prefix)).collect();
    match hits.as_slice() {
        [i] => Ok(*i),
        [] => bail!("unknown quantity {quantity:?}; available columns: {}", headers.join(", ")),
        _ => {
            let names: Vec<&str> = hits.iter().map(|&i| headers[i].as_str()).collect();
            bail!("quantity {quantity:?} is ambiguous; pick one of {}", names.join(", "))
        }
    }
}

/// Writes `t,<quantity>` (plus the entropy flag for entropy columns), with
/// values optionally replaced by their natural log.
pub fn cmd_plotdata(run_dir: &Path, quantity: &str, log: bool, sink: &mut dyn Write) -> Result<()> {
    let path = run_dir.join(TIMESERIES);
    let mut rd = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let headers: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let col = resolve(&headers, quantity)?;
    let t_col = resolve(&headers, "t")?;
    let flag_col = headers[col].starts_with("entropy").then(|| resolve(&headers, "entropy_flag")).transpose()?;
    let name = if log { format!("log_{}", headers[col]) } else { headers[col].clone() };
    let mut wr = csv::Writer::from_writer(sink);
    match flag_col {
        Some(_) => wr.write_record(["t", name.as_str(), "entropy_flag"])?,
        None => wr.write_record(["t", name.as_str()])?,
    }
    for row in rd.records() {
        let row = row?;
        let raw = &row[col];
        let value = match (log, raw.parse::<f64>()) {
            (true, Ok(x)) if x > 0.0 => x.ln().to_string(),
            (true, _) => String::new(),
            (false, _) => raw.to_string(),
        };
        match flag_col {
            Some(f) => wr.write_record([&row[t_col], value.as_str(), &row[f]])?,
            None => wr.write_record([&row[t_col], value.as_str()])?,
        }
    }
    wr.flush()?;
    Ok(())
}
