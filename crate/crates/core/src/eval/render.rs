use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Accuracy, EvalReport};
use crate::corpus::{Label, Split};
use crate::error::{Error, Result};
use crate::geometry::ReducedMatrix;
use crate::mft_gen::MftSuite;
use crate::suite::{MftTopicModel, SizeRow};

/// 2-D case coordinates to plot, by label and (when given) by topic.
pub struct PlotInput<'a> {
    /// File stem, e.g. `train_original`.
    pub name: &'a str,
    pub coords: &'a ReducedMatrix,
    pub suite: &'a MftSuite,
    pub topics: Option<&'a MftTopicModel>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RenderedFiles {
    pub paths: Vec<PathBuf>,
}

struct Table {
    title: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn markdown(&self) -> String {
        let mut s = format!("## {}\n\n", self.title);
        let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
        s.push_str(&line(&self.header));
        s.push_str(&line(&vec!["---".to_string(); self.header.len()]));
        for r in &self.rows {
            s.push_str(&line(r));
        }
        s
    }

    fn csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
    }
}

const NA: &str = "n/a";

fn splits(reports: &[EvalReport]) -> Vec<Split> {
    let mut out: Vec<Split> = Vec::new();
    for v in &reports[0].variants {
        if !out.contains(&v.split) {
            out.push(v.split);
        }
    }
    out
}

/// Models as rows; per split a raw-split column, then the selected datasets.
fn wide_table(title: &str, reports: &[EvalReport], keep: impl Fn(&str) -> bool) -> Table {
    let mut header = vec!["Dataset \\ Model".to_string()];
    let mut columns: Vec<(Split, Option<String>)> = Vec::new();
    for split in splits(reports) {
        header.push(split.title().to_string());
        columns.push((split, None));
        for v in reports[0].variants.iter().filter(|v| v.split == split && keep(&v.dataset)) {
            header.push(v.dataset.clone());
            columns.push((split, Some(v.dataset.clone())));
        }
    }
    let rows = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.model_name.clone()];
            for (split, dataset) in &columns {
                let cell = match dataset {
                    None => r.raw_splits.get(split).map(Accuracy::render),
                    Some(d) => r.variants.iter().find(|v| &v.dataset == d).map(|v| v.accuracy.render()),
                };
                row.push(cell.unwrap_or_else(|| NA.into()));
            }
            row
        })
        .collect();
    Table {
        title: title.into(),
        header,
        rows,
    }
}

fn topic_table(reports: &[EvalReport]) -> Option<Table> {
    let names: Vec<String> = reports
        .iter()
        .flat_map(|r| r.topics.iter().map(|t| t.topic_name.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if names.is_empty() {
        return None;
    }
    // Column order follows topic index of the first report that has topics.
    let first = reports.iter().find(|r| !r.topics.is_empty())?;
    let mut ordered: Vec<String> = first.topics.iter().map(|t| t.topic_name.clone()).collect();
    let extra: Vec<String> = names.into_iter().filter(|n| !ordered.contains(n)).collect();
    ordered.extend(extra);
    let suite = first.topic_suite.clone().unwrap_or_default();
    let mut header = vec!["MFT Topic \\ Model".to_string()];
    header.extend(ordered.iter().cloned());
    let rows = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.model_name.clone()];
            for n in &ordered {
                row.push(
                    r.topics
                        .iter()
                        .find(|t| &t.topic_name == n)
                        .map_or_else(|| NA.into(), |t| t.accuracy.render()),
                );
            }
            row
        })
        .collect();
    Some(Table {
        title: format!("Accuracy by MFT topic ({suite})"),
        header,
        rows,
    })
}

fn stability_table(reports: &[EvalReport]) -> Table {
    let splits = splits(reports);
    let mut header = vec!["Model".to_string()];
    header.extend(splits.iter().map(|s| format!("{} MFT std", s.title())));
    let rows = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.model_name.clone()];
            row.extend(
                splits
                    .iter()
                    .map(|s| r.stability.get(s).map_or_else(|| NA.into(), |v| format!("{v:.2}"))),
            );
            row
        })
        .collect();
    Table {
        title: "Stability across seeds".into(),
        header,
        rows,
    }
}

fn size_table(sizes: &[SizeRow]) -> Table {
    Table {
        title: "Suite sizes".into(),
        header: vec!["Dataset".into(), "Data Size".into(), "Before QC".into()],
        rows: sizes
            .iter()
            .map(|r| {
                vec![
                    r.dataset.clone(),
                    r.data_size.to_string(),
                    r.pre_qc_size.map_or_else(|| NA.into(), |n| n.to_string()),
                ]
            })
            .collect(),
    }
}

fn accuracy_long(reports: &[EvalReport]) -> Table {
    let mut rows = Vec::new();
    for r in reports {
        for v in &r.variants {
            rows.push(vec![
                r.model_name.clone(),
                v.split.name().into(),
                v.dataset.clone(),
                v.accuracy.correct.to_string(),
                v.accuracy.total.to_string(),
                v.accuracy.render(),
            ]);
        }
    }
    Table {
        title: "Accuracy".into(),
        header: ["model", "split", "dataset", "correct", "total", "accuracy"]
            .map(String::from)
            .to_vec(),
        rows,
    }
}

const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

/// Points are `(x, y, class)`; only classes that occur get a legend entry.
pub fn scatter_svg(title: &str, points: &[(f64, f64, usize)], class_names: &[String], colors: &[&str]) -> Result<String> {
    if points.is_empty() {
        return Err(Error::NothingToRender);
    }
    let (w, h, pad, legend_w) = (640.0, 480.0, 40.0, 200.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, _) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let span = |a: f64, b: f64| if b - a > 0.0 { b - a } else { 1.0 };
    let plot_w = w - legend_w - 2.0 * pad;
    let plot_h = h - 2.0 * pad;
    let sx = |x: f64| pad + (x - x0) / span(x0, x1) * plot_w;
    let sy = |y: f64| h - pad - (y - y0) / span(y0, y1) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="24" font-family="sans-serif" font-size="14">{}</text>"#,
        html_escape::encode_text(title)
    );
    let color = |c: usize| colors.get(c).copied().unwrap_or(PALETTE[c % PALETTE.len()]);
    for &(x, y, c) in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.8"/>"#,
            sx(x),
            sy(y),
            color(c)
        );
    }
    let present: BTreeSet<usize> = points.iter().map(|p| p.2).collect();
    let lx = w - legend_w + 10.0;
    for (i, c) in present.into_iter().enumerate() {
        let ly = pad + 20.0 * i as f64;
        let name = class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
        let _ = writeln!(
            s,
            r#"<g class="legend-entry"><rect x="{lx}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text></g>"#,
            ly,
            color(c),
            lx + 18.0,
            ly + 10.0,
            html_escape::encode_text(&name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn plot_points(p: &PlotInput, class_of: impl Fn(&str) -> Option<usize>) -> Result<Vec<(f64, f64, usize)>> {
    if p.coords.dims() < 2 {
        return Err(Error::Invalid(format!("{}: plots need 2-D coordinates", p.name)));
    }
    p.coords
        .ids
        .iter()
        .zip(&p.coords.coords)
        .map(|(id, xy)| {
            class_of(id)
                .map(|c| (xy[0], xy[1], c))
                .ok_or_else(|| Error::UnknownId(id.clone()))
        })
        .collect()
}

fn write(out_dir: &Path, name: &str, bytes: &[u8], files: &mut RenderedFiles) -> Result<()> {
    let path = out_dir.join(name);
    crate::io::write_atomic(&path, bytes)?;
    files.paths.push(path);
    Ok(())
}

/// Writes `report.md`, one CSV per table and the scatter plots.
pub fn render(reports: &[EvalReport], sizes: &[SizeRow], plots: &[PlotInput], out_dir: &Path) -> Result<RenderedFiles> {
    if reports.is_empty() || reports.iter().all(|r| r.variants.is_empty()) {
        return Err(Error::NothingToRender);
    }
    let mut files = RenderedFiles::default();
    let per_seed = wide_table("Accuracy on per-seed suites", reports, |d| {
        !d.ends_with("(Original)") && !d.ends_with("(Extended)")
    });
    let combined = wide_table("Accuracy on combined suites", reports, |d| {
        d.ends_with("(Original)") || d.ends_with("(Extended)")
    });
    let stab = stability_table(reports);
    let topics = topic_table(reports);
    let long = accuracy_long(reports);

    let mut md = String::from("# MFT evaluation report\n\n");
    let mut tables: Vec<(&str, &Table)> = vec![("per_seed", &per_seed), ("combined", &combined)];
    if let Some(t) = &topics {
        tables.push(("topics", t));
    }
    tables.push(("stability", &stab));
    let sizes_t = size_table(sizes);
    if !sizes.is_empty() {
        tables.push(("sizes", &sizes_t));
    }
    for (stem, t) in &tables {
        md.push_str(&t.markdown());
        if *stem == "stability" {
            md.push_str("\nStandard deviation uses the sample (n - 1) denominator over per-seed accuracies in percent.\n");
        }
        md.push('\n');
        write(out_dir, &format!("{stem}.csv"), &t.csv()?, &mut files)?;
    }
    md.push_str("Accuracies are exact correct/total ratios shown to two decimals, rounded half up.\n");
    write(out_dir, "accuracy.csv", &long.csv()?, &mut files)?;
    write(out_dir, "report.md", md.as_bytes(), &mut files)?;

    for p in plots {
        let label_of = |id: &str| p.suite.get(id).map(|c| c.expected_label().as_u8() as usize);
        let names: Vec<String> = Label::ALL.iter().map(|l| l.name().to_string()).collect();
        // Negative blue, positive green.
        let svg = scatter_svg(
            &format!("{}: cases by label", p.suite.name),
            &plot_points(p, label_of)?,
            &names,
            &["#1f77b4", "#2ca02c"],
        )?;
        write(out_dir, &format!("{}_by_label.svg", p.name), svg.as_bytes(), &mut files)?;
        if let Some(model) = p.topics {
            let topic_of = |id: &str| model.assignments.get(id).copied();
            let svg = scatter_svg(
                &format!("{}: cases by topic", p.suite.name),
                &plot_points(p, topic_of)?,
                &model.topic_names,
                &[],
            )?;
            write(out_dir, &format!("{}_by_topic.svg", p.name), svg.as_bytes(), &mut files)?;
        }
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legend_lists_present_classes_only() {
        let svg = scatter_svg("t", &[(0.0, 0.0, 0), (1.0, 1.0, 1), (2.0, 0.5, 1)], &["a".into(), "b".into(), "c".into()], &[]).unwrap();
        assert_eq!(svg.matches("class=\"legend-entry\"").count(), 2);
        assert!(svg.contains(">b</text>"));
        assert!(!svg.contains(">c</text>"));
    }

    #[test]
    fn empty_plot() {
        assert!(matches!(scatter_svg("t", &[], &[], &[]), Err(Error::NothingToRender)));
    }
}
