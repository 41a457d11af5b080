//! File formats: point-cloud CSVs, series directories, codeword, alignment
//! and ground-truth tables, JSON configs.
//!
//! Every float is written with Rust's shortest round-trip formatting, so a
//! write followed by a read reproduces values exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::alignreg::AlignmentSequence;
use crate::error::{Error, Result};
use crate::foldnet::Codeword;
use crate::geometry::{Point3, PointCloud, SeriesFrameSet};

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(file))
}

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(headers)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn write_row(w: &mut csv::Writer<fs::File>, path: &Path, fields: &[String]) -> Result<()> {
    w.write_record(fields).map_err(|e| csv_error(path, e))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads every record, parsing each field as `f64`; returns `(line, values)`.
fn numeric_rows(path: &Path, headers: bool) -> Result<(Vec<String>, Vec<(u64, Vec<f64>)>)> {
    let mut r = reader(path, headers)?;
    let header = if headers {
        r.headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let values = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| parse_error(path, line, format!("not a number: {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((line, values));
    }
    Ok((header, rows))
}

fn expect_header(path: &Path, header: &[String], expected: &[&str]) -> Result<()> {
    if header.len() < expected.len() || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(parse_error(
            path,
            1,
            format!("expected header starting {}, got {}", expected.join(","), header.join(",")),
        ));
    }
    Ok(())
}

fn index_value(path: &Path, line: u64, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(parse_error(path, line, format!("not a frame index: {v}")))
    }
}

/// Headerless `x,y,z` rows.
pub fn write_cloud_csv(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = writer(path)?;
    for p in cloud.points() {
        write_row(&mut w, path, &[p.x.to_string(), p.y.to_string(), p.z.to_string()])?;
    }
    finish(w, path)
}

pub fn read_cloud_csv(path: &Path) -> Result<PointCloud> {
    let (_, rows) = numeric_rows(path, false)?;
    let mut points = Vec::with_capacity(rows.len());
    for (line, v) in rows {
        if v.len() != 3 {
            return Err(parse_error(path, line, format!("expected 3 columns, got {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(parse_error(path, line, "non-finite coordinate"));
        }
        points.push(Point3::new(v[0], v[1], v[2]));
    }
    if points.is_empty() {
        return Err(parse_error(path, 0, "no points"));
    }
    PointCloud::new(points)
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.csv")
}

/// Writes `frame_0001.csv ... frame_TTTT.csv` into `dir`.
pub fn write_series_dir(dir: &Path, series: &SeriesFrameSet) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(series.len());
    for (i, frame) in series.frames().iter().enumerate() {
        let path = dir.join(frame_file_name(i + 1));
        write_cloud_csv(&path, frame)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Reads every `frame_*.csv` in `dir`, in file-name order.
pub fn read_series_dir(dir: &Path, minutes_per_frame: f64) -> Result<SeriesFrameSet> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".csv"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no frame_*.csv files in {}", dir.display())));
    }
    let frames = paths.iter().map(|p| read_cloud_csv(p)).collect::<Result<Vec<_>>>()?;
    SeriesFrameSet::new(frames, minutes_per_frame)
}

/// Header `frame,c0,...,c{d-1}`.
pub fn write_codewords_csv(path: &Path, codes: &[Codeword]) -> Result<()> {
    let dim = codes.first().map_or(0, |c| c.values.len());
    if codes.iter().any(|c| c.values.len() != dim) {
        return Err(Error::invalid("codewords have differing lengths"));
    }
    let mut w = writer(path)?;
    let mut header = vec!["frame".to_string()];
    header.extend((0..dim).map(|i| format!("c{i}")));
    write_row(&mut w, path, &header)?;
    for c in codes {
        let mut row = vec![c.frame_index.to_string()];
        row.extend(c.values.iter().map(f64::to_string));
        write_row(&mut w, path, &row)?;
    }
    finish(w, path)
}

pub fn read_codewords_csv(path: &Path) -> Result<Vec<Codeword>> {
    let (header, rows) = numeric_rows(path, true)?;
    expect_header(path, &header, &["frame"])?;
    let mut codes = Vec::with_capacity(rows.len());
    for (line, v) in rows {
        if v.len() != header.len() {
            return Err(parse_error(path, line, format!("expected {} columns, got {}", header.len(), v.len())));
        }
        codes.push(Codeword {
            frame_index: index_value(path, line, v[0])?,
            values: v[1..].to_vec(),
        });
    }
    Ok(codes)
}

/// One row of an alignment file.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentRow {
    pub query_frame: usize,
    pub raw_index: f64,
    pub monotone_index: f64,
    pub ground_truth_index: Option<f64>,
}

pub fn alignment_rows(seq: &AlignmentSequence, ground_truth: Option<&[f64]>) -> Result<Vec<AlignmentRow>> {
    if let Some(gt) = ground_truth {
        if gt.len() != seq.raw.len() {
            return Err(Error::invalid(format!(
                "ground truth has {} frames, alignment has {}",
                gt.len(),
                seq.raw.len()
            )));
        }
    }
    Ok((0..seq.raw.len())
        .map(|i| AlignmentRow {
            query_frame: i + 1,
            raw_index: seq.raw[i],
            monotone_index: seq.postprocessed[i],
            ground_truth_index: ground_truth.map(|g| g[i]),
        })
        .collect())
}

/// Header `query_frame,raw_index,monotone_index[,ground_truth_index]`.
pub fn write_alignment_csv(path: &Path, rows: &[AlignmentRow]) -> Result<()> {
    let with_gt = rows.first().is_some_and(|r| r.ground_truth_index.is_some());
    if rows.iter().any(|r| r.ground_truth_index.is_some() != with_gt) {
        return Err(Error::invalid("ground truth present on only some alignment rows"));
    }
    let mut w = writer(path)?;
    let mut header = vec!["query_frame".to_string(), "raw_index".into(), "monotone_index".into()];
    if with_gt {
        header.push("ground_truth_index".into());
    }
    write_row(&mut w, path, &header)?;
    for r in rows {
        let mut row = vec![r.query_frame.to_string(), r.raw_index.to_string(), r.monotone_index.to_string()];
        if let Some(g) = r.ground_truth_index {
            row.push(g.to_string());
        }
        write_row(&mut w, path, &row)?;
    }
    finish(w, path)
}

pub fn read_alignment_csv(path: &Path) -> Result<Vec<AlignmentRow>> {
    let (header, rows) = numeric_rows(path, true)?;
    expect_header(path, &header, &["query_frame", "raw_index", "monotone_index"])?;
    let with_gt = match header.len() {
        3 => false,
        4 if header[3] == "ground_truth_index" => true,
        _ => return Err(parse_error(path, 1, format!("unexpected header {}", header.join(",")))),
    };
    rows.into_iter()
        .map(|(line, v)| {
            if v.len() != header.len() {
                return Err(parse_error(path, line, format!("expected {} columns, got {}", header.len(), v.len())));
            }
            Ok(AlignmentRow {
                query_frame: index_value(path, line, v[0])?,
                raw_index: v[1],
                monotone_index: v[2],
                ground_truth_index: with_gt.then(|| v[3]),
            })
        })
        .collect()
}

/// Header `warped_frame,reference_index`.
pub fn write_ground_truth_csv(path: &Path, ground_truth: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    write_row(&mut w, path, &["warped_frame".into(), "reference_index".into()])?;
    for (i, g) in ground_truth.iter().enumerate() {
        write_row(&mut w, path, &[(i + 1).to_string(), g.to_string()])?;
    }
    finish(w, path)
}

pub fn read_ground_truth_csv(path: &Path) -> Result<Vec<f64>> {
    let (header, rows) = numeric_rows(path, true)?;
    expect_header(path, &header, &["warped_frame", "reference_index"])?;
    let mut out = Vec::with_capacity(rows.len());
    for (expected, (line, v)) in (1..).zip(rows) {
        if v.len() != 2 {
            return Err(parse_error(path, line, format!("expected 2 columns, got {}", v.len())));
        }
        if index_value(path, line, v[0])? != expected {
            return Err(parse_error(path, line, format!("expected warped frame {expected}")));
        }
        out.push(v[1]);
    }
    Ok(out)
}

/// Generic headed numeric table, e.g. centroid curves or embeddings.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = writer(path)?;
    write_row(&mut w, path, &header.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::invalid(format!("row of {} values under {} columns", r.len(), header.len())));
        }
        write_row(&mut w, path, &r.iter().map(f64::to_string).collect::<Vec<_>>())?;
    }
    finish(w, path)
}

pub fn read_table_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let (header, rows) = numeric_rows(path, true)?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, v) in rows {
        if v.len() != header.len() {
            return Err(parse_error(path, line, format!("expected {} columns, got {}", header.len(), v.len())));
        }
        out.push(v);
    }
    Ok((header, out))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
