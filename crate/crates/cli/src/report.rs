use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use crate::eval::{write_metric_rows, MetricsDoc};
use crate::files::{ensure_dir, read_text, split_csv};
use crate::svg::{line_chart, Axis, Series};
use crate::{Common, Format, Outcome};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics from `eval`: metrics.json (with PR curves) or metrics.csv.
    #[arg(long, value_name = "FILE")]
    pub metrics: Option<PathBuf>,
    /// CSV loss log: a step column followed by one column per loss series.
    #[arg(long, value_name = "FILE")]
    pub loss_log: Option<PathBuf>,
}

type Rows = Vec<(String, String, f64)>;

fn parse_metric_csv(path: &Path) -> Result<Rows> {
    let text = read_text(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if split_csv(h) == ["metric", "class", "value"] => {}
        _ => bail!("{}: expected header metric,class,value", path.display()),
    }
    lines
        .map(|(i, line)| {
            let f = split_csv(line);
            let [m, c, v] = &f[..] else {
                bail!(
                    "{}:{}: expected 3 fields, got {}",
                    path.display(),
                    i + 1,
                    f.len()
                );
            };
            let v: f64 = v
                .trim()
                .parse()
                .with_context(|| format!("{}:{}: bad value {v:?}", path.display(), i + 1))?;
            Ok((m.clone(), c.clone(), v))
        })
        .collect()
}

struct LossLog {
    x_label: String,
    series: Vec<Series>,
}

fn parse_loss_log(path: &Path) -> Result<LossLog> {
    let text = read_text(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        bail!("{}: empty loss log", path.display());
    };
    let header = split_csv(header);
    if header.len() < 2 {
        bail!(
            "{}: need a step column and at least one loss column",
            path.display()
        );
    }
    let mut series: Vec<Series> = header[1..]
        .iter()
        .map(|n| Series {
            name: n.trim().to_string(),
            points: Vec::new(),
        })
        .collect();
    for (i, line) in lines {
        let fields = split_csv(line);
        if fields.len() != header.len() {
            bail!(
                "{}:{}: expected {} fields, got {}",
                path.display(),
                i + 1,
                header.len(),
                fields.len()
            );
        }
        let nums: Vec<f64> = fields
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("{}:{}: non-numeric field", path.display(), i + 1))?;
        for (s, &v) in series.iter_mut().zip(&nums[1..]) {
            s.points.push((nums[0], v));
        }
    }
    Ok(LossLog {
        x_label: header[0].trim().to_string(),
        series,
    })
}

/// Lowercase alphanumerics and underscores, for file names.
fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    let parts: Vec<&str> = s.split('_').filter(|p| !p.is_empty()).collect();
    if parts.is_empty() {
        "series".into()
    } else {
        parts.join("_")
    }
}

pub fn run(common: &Common, args: &ReportArgs) -> Result<Outcome> {
    let Some(out_dir) = common.out.as_deref() else {
        bail!("report needs --out <DIR>");
    };
    if args.metrics.is_none() && args.loss_log.is_none() {
        bail!("nothing to report: give --metrics and/or --loss-log");
    }
    // Parse everything before writing anything.
    let mut rows: Rows = Vec::new();
    let mut curves: Vec<(usize, String, Vec<(f64, f64)>)> = Vec::new();
    if let Some(path) = &args.metrics {
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        {
            let doc: MetricsDoc = serde_json::from_str(&read_text(path)?)
                .with_context(|| format!("parsing {}", path.display()))?;
            rows = doc.rows();
            curves = doc
                .per_class
                .iter()
                .map(|c| (c.class_id, c.name.clone(), c.pr_curve.clone()))
                .collect();
        } else {
            rows = parse_metric_csv(path)?;
        }
    }
    let loss = args.loss_log.as_deref().map(parse_loss_log).transpose()?;

    let out_dir = ensure_dir(out_dir)?;
    let mut written = Vec::new();
    if args.metrics.is_some() {
        let mut buf = Vec::new();
        write_metric_rows(&mut buf, &rows)?;
        let p = out_dir.join("summary.csv");
        fs::write(&p, &buf)?;
        written.push(p);
    }
    for (id, name, points) in &curves {
        let svg = line_chart(
            &format!("Precision-recall: {name}"),
            &Axis::new("recall", 0.0, 1.0),
            &Axis::new("precision", 0.0, 1.0),
            &[Series {
                name: name.clone(),
                points: points.clone(),
            }],
        );
        let p = out_dir.join(format!("pr_{id}_{}.svg", slug(name)));
        fs::write(&p, svg)?;
        written.push(p);
    }
    if let Some(log) = &loss {
        for s in &log.series {
            let x = Axis::enclosing(&log.x_label, s.points.iter().map(|p| p.0));
            let y = Axis::enclosing(&s.name, s.points.iter().map(|p| p.1));
            let svg = line_chart(&s.name, &x, &y, std::slice::from_ref(s));
            let p = out_dir.join(format!("loss_{}.svg", slug(&s.name)));
            fs::write(&p, svg)?;
            written.push(p);
        }
    }

    let mut out = std::io::stdout().lock();
    match common.format {
        Format::Csv => write_metric_rows(&mut out, &rows)?,
        Format::Json => {
            let entries: Vec<serde_json::Value> = rows
                .iter()
                .map(|(m, c, v)| serde_json::json!({"metric": m, "class": c, "value": v}))
                .collect();
            serde_json::to_writer_pretty(&mut out, &entries)?;
            writeln!(out)?;
        }
        Format::Table => {
            for (m, c, v) in &rows {
                writeln!(out, "{m:<12} {c:<28} {v:.4}")?;
            }
            for p in &written {
                writeln!(out, "wrote {}", p.display())?;
            }
        }
    }
    Ok(Outcome::Success)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slug("Occupant State - Sitting"), "occupant_state_sitting");
        assert_eq!(slug("val/box_loss"), "val_box_loss");
        assert_eq!(slug("--"), "series");
    }
}
