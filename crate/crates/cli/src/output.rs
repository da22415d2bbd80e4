//! Number formatting, report emission and report reading.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};
use spheregap::verify::{CheckRecord, Status, Summary, SuiteConfig, VerificationReport};

pub const REPORT_VERSION: &str = "1";

/// Fifteen significant digits in exponent form, the same on every platform.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.14e}")
    }
}

/// Plain decimal notation with exactly `digits` significant digits.
pub fn sig_digits(x: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if !x.is_finite() {
        return format_number(x);
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i64 = exp.parse().expect("integer exponent");
    let neg = mant.starts_with('-');
    let ds: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    let body = if exp >= 0 {
        let int_len = exp as usize + 1;
        if int_len >= ds.len() {
            format!("{ds}{}", "0".repeat(int_len - ds.len()))
        } else {
            format!("{}.{}", &ds[..int_len], &ds[int_len..])
        }
    } else {
        format!("0.{}{ds}", "0".repeat((-exp - 1) as usize))
    };
    if neg { format!("-{body}") } else { body }
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Pass => "pass",
        Status::Fail => "fail",
        Status::Skipped => "skipped",
    }
}

fn check_json(c: &CheckRecord) -> Value {
    let mut o = Map::new();
    o.insert("id".into(), json!(c.id));
    o.insert("anchor".into(), json!(c.anchor));
    o.insert("manifold".into(), json!(c.manifold));
    o.insert("lhs".into(), json!(format_number(c.lhs)));
    o.insert("rhs".into(), json!(format_number(c.rhs)));
    o.insert("relation".into(), json!(c.relation.symbol()));
    o.insert("margin".into(), json!(format_number(c.margin)));
    o.insert("tol".into(), json!(format_number(c.tol)));
    o.insert("pass".into(), json!(c.pass));
    o.insert("status".into(), json!(status_name(c.status)));
    o.insert("confidence".into(), json!(c.confidence.name()));
    o.insert("grid".into(), json!(c.grid));
    if let Some(n) = &c.note {
        o.insert("note".into(), json!(n));
    }
    if let Some(r) = &c.reason {
        o.insert("reason".into(), json!(r));
    }
    if let Some(ms) = c.runtime_ms {
        o.insert("runtime_ms".into(), json!(ms));
    }
    Value::Object(o)
}

fn config_json(cfg: &SuiteConfig) -> Value {
    let grids: Map<String, Value> = cfg.grids.iter().map(|(k, g)| (k.clone(), json!(g.summary()))).collect();
    let tols: Vec<Value> = cfg
        .tolerances
        .iter()
        .map(|(p, t)| json!({"pattern": p, "tol": format_number(*t)}))
        .collect();
    json!({
        "manifolds": cfg.manifolds,
        "suite": cfg.select,
        "grids": grids,
        "seed": cfg.seed,
        "tolerances": tols,
        "samples": cfg.samples,
    })
}

pub fn report_json(cfg: &SuiteConfig, report: &VerificationReport) -> String {
    let s = report.summary;
    let v = json!({
        "version": REPORT_VERSION,
        "config": config_json(cfg),
        "checks": report.checks.iter().map(check_json).collect::<Vec<_>>(),
        "summary": {"total": s.total, "passed": s.passed, "failed": s.failed, "skipped": s.skipped},
    });
    let mut out = serde_json::to_string_pretty(&v).expect("report serialises");
    out.push('\n');
    out
}

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

pub fn write_report_csv<W: Write>(w: W, report: &VerificationReport) -> csv::Result<()> {
    let mut wr = csv_writer(w);
    let runtime = report.checks.iter().any(|c| c.runtime_ms.is_some());
    let mut header = vec![
        "id", "anchor", "manifold", "lhs", "relation", "rhs", "margin", "tol", "pass", "status", "confidence", "grid", "note",
        "reason",
    ];
    if runtime {
        header.push("runtime_ms");
    }
    wr.write_record(&header)?;
    for c in &report.checks {
        let mut row = vec![
            c.id.clone(),
            c.anchor.clone(),
            c.manifold.clone(),
            format_number(c.lhs),
            c.relation.symbol().to_string(),
            format_number(c.rhs),
            format_number(c.margin),
            format_number(c.tol),
            c.pass.to_string(),
            status_name(c.status).to_string(),
            c.confidence.name().to_string(),
            c.grid.clone(),
            c.note.clone().unwrap_or_default(),
            c.reason.clone().unwrap_or_default(),
        ];
        if runtime {
            row.push(c.runtime_ms.map(|v| v.to_string()).unwrap_or_default());
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Summary of a JSON report on disk, recounted from its check records.
/// Errors if the stored summary disagrees with the records.
pub fn read_report_summary(path: &Path) -> Result<Summary, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| format!("{} is not JSON: {e}", path.display()))?;
    let checks = v["checks"].as_array().ok_or("report lacks a checks array")?;
    let mut s = Summary {
        total: checks.len(),
        ..Summary::default()
    };
    for c in checks {
        match c["status"].as_str() {
            Some("pass") => s.passed += 1,
            Some("fail") => s.failed += 1,
            Some("skipped") => s.skipped += 1,
            other => return Err(format!("bad status {other:?}")),
        }
        for key in ["lhs", "rhs", "margin", "tol"] {
            let field = c[key].as_str().ok_or_else(|| format!("check field {key} is not a string"))?;
            field.parse::<f64>().map_err(|e| format!("check field {key} = {field:?}: {e}"))?;
        }
    }
    let stored = &v["summary"];
    let field = |k: &str| stored[k].as_u64().map(|x| x as usize);
    let recorded = Summary {
        total: field("total").ok_or("summary lacks total")?,
        passed: field("passed").ok_or("summary lacks passed")?,
        failed: field("failed").ok_or("summary lacks failed")?,
        skipped: field("skipped").ok_or("summary lacks skipped")?,
    };
    if recorded != s {
        return Err(format!("stored summary {recorded:?} disagrees with the records {s:?}"));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(sig_digits(3f64.sqrt() / 2.0, 12), "0.866025403784");
        assert_eq!(sig_digits(2.0 * std::f64::consts::PI.powi(2), 12), "19.7392088022");
        assert_eq!(sig_digits(-0.000123456789012345, 12), "-0.000123456789012");
        assert_eq!(sig_digits(1234.0, 2), "1200");
        assert_eq!(sig_digits(9.9999999999999, 12), "10.0000000000");
        assert_eq!(sig_digits(0.0, 12), "0");
        assert_eq!(sig_digits(f64::NAN, 12), "NaN");
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, -1.5, 1e-300, 6.02214076e23, std::f64::consts::PI] {
            let s = format_number(x);
            let back: f64 = s.parse().unwrap();
            assert!((back - x).abs() <= 1e-14 * x.abs(), "{s}");
        }
        assert!(format_number(f64::NAN).parse::<f64>().unwrap().is_nan());
        assert_eq!(format_number(-f64::INFINITY), "-inf");
    }
}
