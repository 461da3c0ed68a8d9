use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use szzkit::agent::{read_trace_dir, PriceTable};
use szzkit::trace::{analyse, read_materials_dir, AnalysisReport};

use crate::config::parse_toml;
use crate::Status;

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report(r: &AnalysisReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("analysis.json"), serde_json::to_string_pretty(r)? + "\n")?;
    write_csv(
        &out.join("tool_distribution.csv"),
        &["tool", "fraction"],
        r.tool_distribution.iter().map(|(k, v)| [k.to_string(), v.to_string()]),
    )?;
    write_csv(
        &out.join("provenance.csv"),
        &["label", "count", "percent"],
        r.provenance_histogram
            .iter()
            .map(|h| [h.label.name().to_string(), h.count.to_string(), format!("{:.2}", h.percent)]),
    )?;
    write_csv(
        &out.join("grep_calls.csv"),
        &["session_id", "seq", "pattern", "normalized", "literal", "labels"],
        r.grep_calls.iter().map(|g| {
            let labels: Vec<&str> = g.labels.iter().map(|l| l.name()).collect();
            [
                g.session_id.clone(),
                g.seq.to_string(),
                g.pattern.clone(),
                g.normalized.clone(),
                g.literal.to_string(),
                labels.join(";"),
            ]
        }),
    )?;
    let stats: Vec<[String; 2]> = match &r.pattern_stats {
        None => vec![["absent".into(), "true".into()]],
        Some(s) => vec![
            ["count".into(), s.count.to_string()],
            ["median_len".into(), s.median_len.to_string()],
            ["mean_len".into(), s.mean_len.to_string()],
            ["std_len".into(), s.std_len.to_string()],
            ["min_len".into(), s.min_len.to_string()],
            ["max_len".into(), s.max_len.to_string()],
            ["literal_fraction".into(), s.literal_fraction.to_string()],
        ],
    };
    write_csv(&out.join("pattern_stats.csv"), &["metric", "value"], stats)?;
    write_csv(
        &out.join("usage.csv"),
        &[
            "fix", "sessions", "candidate_count", "input_tokens", "output_tokens", "cache_tokens",
            "total_tokens", "cost_usd", "tool_calls",
        ],
        r.usage.per_fix.iter().map(|u| {
            [
                u.fix.clone(),
                u.sessions.to_string(),
                u.candidate_count.map(|c| c.to_string()).unwrap_or_default(),
                u.input_tokens.to_string(),
                u.output_tokens.to_string(),
                u.cache_tokens.to_string(),
                u.total_tokens.to_string(),
                u.cost_usd.to_string(),
                u.tool_calls.to_string(),
            ]
        }),
    )?;
    Ok(())
}

pub fn cmd_trace_report(
    traces_dir: &Path,
    materials: Option<&Path>,
    prices: Option<&Path>,
    out: &Path,
) -> Result<Status> {
    let traces = read_trace_dir(traces_dir).with_context(|| format!("reading {}", traces_dir.display()))?;
    if traces.is_empty() {
        bail!("no traces in {}", traces_dir.display());
    }
    let default_materials = traces_dir.parent().map(|p| p.join("materials"));
    let materials_dir = match materials {
        Some(m) => Some(m.to_path_buf()),
        None => default_materials.filter(|p| p.is_dir()),
    };
    let materials = match &materials_dir {
        Some(d) => read_materials_dir(d).map_err(|e| anyhow!("{}: {e}", d.display()))?,
        None => BTreeMap::new(),
    };
    let prices: PriceTable = match prices {
        Some(p) => parse_toml(&fs::read_to_string(p)?, &p.display().to_string())?,
        None => PriceTable::default(),
    };
    let report = analyse(&traces, &materials, &prices)?;
    write_report(&report, out)?;

    println!("{} sessions over {} fixes", report.sessions, report.fixes);
    for (tool, f) in &report.tool_distribution {
        println!("  {tool:<6} {:>6.2}%", f * 100.0);
    }
    for h in &report.provenance_histogram {
        println!("  {:<20} {:>4} {:>6.2}%", h.label.name(), h.count, h.percent);
    }
    match &report.pattern_stats {
        Some(s) => println!(
            "patterns: n={} median={} mean={:.2} std={:.2}",
            s.count, s.median_len, s.mean_len, s.std_len
        ),
        None => println!("patterns: absent (no grep calls)"),
    }
    if !report.fixes_without_materials.is_empty() {
        log::warn!(
            "{} fix(es) had grep calls but no materials",
            report.fixes_without_materials.len()
        );
    }
    println!("mean cost per fix: {} USD", report.usage.mean_cost_usd);
    Ok(Status::Ok)
}
