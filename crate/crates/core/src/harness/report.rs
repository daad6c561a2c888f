//! Grid, parity and ranking report writers.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Cell, GridResult, HarnessError, ParitySeries, RankingOutcome};
use crate::dataset::PropertyDataset;
use crate::metrics::RankTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

fn csv_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Grid as CSV: a header of query keys, then one row per context term.
/// Failed cells are written as `ERR`.
pub fn write_grid_csv<W: Write>(grid: &GridResult, writer: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["context_term".to_string()];
    header.extend(grid.keys.iter().cloned());
    w.write_record(&header).map_err(csv_io)?;
    for (term, row) in grid.terms.iter().zip(&grid.cells) {
        let mut record = vec![term.clone()];
        record.extend(row.iter().map(|c| match c {
            Cell::Rho(r) => r.to_string(),
            Cell::Error(_) => "ERR".to_string(),
        }));
        w.write_record(&record).map_err(csv_io)?;
    }
    w.flush()
}

pub fn write_grid_json<W: Write>(grid: &GridResult, writer: W) -> io::Result<()> {
    serde_json::to_writer_pretty(writer, grid).map_err(io::Error::other)
}

pub fn read_grid_json<R: Read>(reader: R) -> io::Result<GridResult> {
    serde_json::from_reader(reader).map_err(io::Error::other)
}

/// Parity pairs as CSV: `item,truth_rank,similarity_rank,bin_count`.
pub fn write_parity_csv<W: Write>(parity: &ParitySeries, writer: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["item", "truth_rank", "similarity_rank", "bin_count"])
        .map_err(csv_io)?;
    for i in 0..parity.len() {
        w.write_record([
            parity.items[i].clone(),
            parity.truth_ranks[i].to_string(),
            parity.similarity_ranks[i].to_string(),
            parity.bin_count(i).to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()
}

/// Per-item ranking table: `item,score,similarity_rank,truth_value,truth_rank`.
pub fn write_ranking_csv<W: Write>(
    dataset: &PropertyDataset,
    truth: &RankTable,
    outcome: &RankingOutcome,
    writer: W,
) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["item", "score", "similarity_rank", "truth_value", "truth_rank"])
        .map_err(csv_io)?;
    for (i, record) in dataset.records.iter().enumerate() {
        let item = record.key();
        w.write_record([
            item.clone(),
            outcome.scores[i].to_string(),
            outcome.similarity.ranks()[i].to_string(),
            record.value.to_string(),
            truth.rank_of(&item).map(|r| r.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Diverging blue-white-red colour for ρ in [-1, 1], white at 0.
fn diverging_color(rho: f64) -> String {
    let t = rho.clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        // white -> (178, 24, 43)
        (
            255.0 - t * (255.0 - 178.0),
            255.0 - t * (255.0 - 24.0),
            255.0 - t * (255.0 - 43.0),
        )
    } else {
        // white -> (33, 102, 172)
        let s = -t;
        (
            255.0 - s * (255.0 - 33.0),
            255.0 - s * (255.0 - 102.0),
            255.0 - s * (255.0 - 172.0),
        )
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

fn label(s: &str) -> &str {
    if s.is_empty() {
        "(empty)"
    } else {
        s
    }
}

/// Heat map of the grid as a standalone SVG document.
pub fn write_heatmap_svg<W: Write>(grid: &GridResult, mut writer: W) -> io::Result<()> {
    const CELL: usize = 48;
    let margin_left = 10 + 7 * grid.terms.iter().map(|t| label(t).len()).max().unwrap_or(0);
    let margin_top = 10 + 7 * grid.keys.iter().map(|k| label(k).len()).max().unwrap_or(0);
    let width = margin_left + CELL * grid.keys.len() + 10;
    let height = margin_top + CELL * grid.terms.len() + 10;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r#"<title>Spearman rho: {} on {}</title>"#,
        escape_xml(&grid.metadata.model_id),
        escape_xml(&grid.metadata.dataset)
    );
    for (c, key) in grid.keys.iter().enumerate() {
        let x = margin_left + c * CELL + CELL / 2;
        let y = margin_top - 6;
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{y}" transform="rotate(-60 {x} {y})">{}</text>"#,
            escape_xml(label(key))
        );
    }
    for (r, (term, row)) in grid.terms.iter().zip(&grid.cells).enumerate() {
        let y = margin_top + r * CELL;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            margin_left - 6,
            y + CELL / 2 + 4,
            escape_xml(label(term))
        );
        for (c, cell) in row.iter().enumerate() {
            let x = margin_left + c * CELL;
            let (fill, text) = match cell {
                Cell::Rho(rho) => (diverging_color(*rho), format!("{rho:.2}")),
                Cell::Error(_) => ("#bdbdbd".to_string(), "ERR".to_string()),
            };
            let _ = writeln!(
                svg,
                r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#ffffff"/>"##
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle">{text}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4
            );
        }
    }
    svg.push_str("</svg>\n");
    writer.write_all(svg.as_bytes())
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::OutputUnwritable {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
}

/// Writes `grid.csv`, `grid.json` and/or `grid.svg` into `dir`, returning the
/// paths written.
pub fn emit_grid_reports(
    grid: &GridResult,
    dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::OutputUnwritable {
        path: dir.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut written = Vec::new();
    for format in formats {
        let (name, result) = match format {
            ReportFormat::Csv => {
                let path = dir.join("grid.csv");
                let r = write_grid_csv(grid, create(&path)?);
                (path, r)
            }
            ReportFormat::Json => {
                let path = dir.join("grid.json");
                let r = write_grid_json(grid, create(&path)?);
                (path, r)
            }
            ReportFormat::Svg => {
                let path = dir.join("grid.svg");
                let r = write_heatmap_svg(grid, create(&path)?);
                (path, r)
            }
        };
        result.map_err(|e| HarnessError::OutputUnwritable {
            path: name.display().to_string(),
            reason: e.to_string(),
        })?;
        written.push(name);
    }
    Ok(written)
}
