//! Text, JSON-lines and CSV renderings of results.

use std::io::{self, Write};

use duet_core::sim::{row_status, SweepMetric, SweepRow};
use duet_core::{BudgetReport, DropSchedule};
use serde_json::json;

/// Rounds to six significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

/// Six significant digits, always with a decimal point: `960.0`, `191.75`.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    let x = if x == 0.0 { 0.0 } else { round_sig(x) };
    let s = x.to_string();
    if s.contains('.') {
        s
    } else {
        s + ".0"
    }
}

pub fn write_budget_text<W: Write + ?Sized>(
    out: &mut W,
    r: &BudgetReport,
    schedule: &DropSchedule,
) -> io::Result<()> {
    writeln!(out, "n0             {}", r.n0)?;
    writeln!(out, "layers         {}", schedule.total_layers())?;
    writeln!(out, "schedule       {schedule}")?;
    writeln!(out, "average        {}", fmt_num(r.average))?;
    writeln!(out, "base_tokens    {}", r.base_tokens)?;
    writeln!(out, "reduction_pct  {}", fmt_num(r.reduction_pct))?;
    writeln!(out, "flop_proxy     {}", fmt_num(r.flop_proxy))?;
    Ok(())
}

/// One `layer` record per backbone layer, then a `summary` record.
pub fn write_budget_jsonl<W: Write + ?Sized>(
    out: &mut W,
    r: &BudgetReport,
    schedule: &DropSchedule,
) -> io::Result<()> {
    for (i, &c) in r.per_layer_counts.iter().enumerate() {
        writeln!(out, "{}", json!({"type": "layer", "layer": i + 1, "count": c}))?;
    }
    let summary = json!({
        "type": "summary",
        "n0": r.n0,
        "layers": schedule.total_layers(),
        "schedule": schedule.to_string(),
        "average": round_sig(r.average),
        "base_tokens": r.base_tokens,
        "reduction_pct": round_sig(r.reduction_pct),
        "flop_proxy": round_sig(r.flop_proxy),
        "d_model": r.d_model,
    });
    writeln!(out, "{summary}")
}

/// `value,<metric>,status`. Failed rows leave the metric empty.
pub fn write_sweep_csv<W: Write>(out: W, metric: SweepMetric, rows: &[SweepRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["value", &metric.to_string(), "status"])?;
    for row in rows {
        let value = match &row.result {
            Ok(v) => fmt_num(*v),
            Err(_) => String::new(),
        };
        w.write_record([row.value.to_string(), value, row_status(row)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(960.0), "960.0");
        assert_eq!(fmt_num(191.75), "191.75");
        assert_eq!(fmt_num(0.0), "0.0");
        assert_eq!(fmt_num(-0.0), "0.0");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_num(2.0 / 3.0), "0.666667");
        assert_eq!(fmt_num(123456789.0), "123457000.0");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(-1.25e-7), "-0.000000125");
    }
}
