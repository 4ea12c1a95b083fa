//! On-disk formats.
//!
//! All files are UTF-8 with LF line endings and `.` as decimal separator.
//!
//! | value               | file                                                  |
//! |---------------------|-------------------------------------------------------|
//! | scores              | CSV `sample_id,true_label,p_0,...,p_{K-1}`             |
//! | split manifest      | CSV `sample_id,split` + `<file>.meta.json` sidecar     |
//! | calibration         | JSON                                                  |
//! | prediction sets     | CSV `sample_id,set` + `<file>.meta.json` sidecar       |
//! | evaluation report   | JSON, plus flat CSVs for plotting                     |
//!
//! `true_label` is `-1` for unlabeled samples. Probabilities are written with
//! 12 significant digits. A set cell is its class indices joined with `|` in
//! ascending order; the empty set is an empty cell. Every JSON document
//! carries `"format_version": "1"` and rejects unknown fields.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::metrics::{EvaluationReport, Histogram};
use crate::simulator::SimulatorConfig;
use crate::splits::{SplitManifest, SplitTag};
use crate::types::{
    CalibrationArtifact, Label, LabeledScores, PredictionSetBatch, ScoreKind, ScoreMatrix, EXTERNAL_ROW_TOLERANCE,
};

pub const FORMAT_VERSION: &str = "1";

/// Who wrote a file and how.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool_version: String,
    pub invocation: String,
}

impl Provenance {
    pub fn new(invocation: impl Into<String>) -> Self {
        Self { tool_version: env!("CARGO_PKG_VERSION").to_string(), invocation: invocation.into() }
    }
}

/// Path of the JSON sidecar that accompanies a CSV.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Formats a value with 12 significant digits, `%.12g` style.
pub fn format_sig12(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{:.11e}", v.abs());
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if v < 0.0 { "-" } else { "" };
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if !(-5..12).contains(&exp) {
        return format!("{sign}{}e{exp}", trim(mantissa.to_string()));
    }
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let body = if exp >= 0 {
        let split = exp as usize + 1;
        format!("{}.{}", &digits[..split], &digits[split..])
    } else {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    };
    format!("{sign}{}", trim(body))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv { path: path.to_path_buf(), source }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(file))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(file)))
}

fn finish<W: Write>(path: &Path, w: csv::Writer<W>) -> Result<()> {
    let mut inner = w.into_inner().map_err(|e| Error::Io { path: path.to_path_buf(), source: e.into_error() })?;
    inner.flush().map_err(io_err(path))
}

/// Reads the header row, returning the records iterator positioned after it.
fn header(path: &Path, reader: &mut csv::Reader<File>) -> Result<csv::StringRecord> {
    let mut rec = csv::StringRecord::new();
    let got = reader.read_record(&mut rec).map_err(csv_err(path))?;
    if !got {
        return Err(Error::MissingHeader { path: path.into(), detail: "file is empty".into() });
    }
    Ok(rec)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_label(path: &Path, rec: &csv::StringRecord, cell: &str) -> Result<Label> {
    match cell.trim().parse::<i64>() {
        Ok(-1) => Ok(None),
        Ok(l) if l >= 0 => Ok(Some(l as usize)),
        Ok(l) => Err(Error::MalformedRow {
            path: path.into(),
            line: line_of(rec),
            detail: format!("label {l} is neither a class index nor -1"),
        }),
        Err(_) => Err(Error::NonNumericCell { path: path.into(), line: line_of(rec), cell: cell.into() }),
    }
}

/// Reads a scores CSV. The number of classes comes from the header.
pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<LabeledScores> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let head = header(path, &mut reader)?;
    let k = head.len().saturating_sub(2);
    let expected: Vec<String> = ["sample_id".to_string(), "true_label".to_string()]
        .into_iter()
        .chain((0..k).map(|j| format!("p_{j}")))
        .collect();
    if head.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::MissingHeader {
            path: path.into(),
            detail: format!(
                "expected 'sample_id,true_label,p_0,...', found '{}'",
                head.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    if k < 2 {
        return Err(Error::TooFewClasses(k).in_file(path));
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut rec = csv::StringRecord::new();
    while reader.read_record(&mut rec).map_err(csv_err(path))? {
        if rec.len() != k + 2 {
            return Err(Error::RaggedRow { row: ids.len(), expected: k + 2, found: rec.len() }.in_file(path));
        }
        ids.push(rec[0].to_string());
        labels.push(parse_label(path, &rec, &rec[1])?);
        for cell in rec.iter().skip(2) {
            let v: f64 = cell.trim().parse().map_err(|_| Error::NonNumericCell {
                path: path.into(),
                line: line_of(&rec),
                cell: cell.into(),
            })?;
            values.push(v);
        }
    }
    let scores = ScoreMatrix::from_flat(k, values, EXTERNAL_ROW_TOLERANCE).map_err(|e| e.in_file(path))?;
    LabeledScores::new(ids, labels, scores).map_err(|e| e.in_file(path))
}

pub fn write_scores_csv(data: &LabeledScores, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let k = data.num_classes();
    let mut head = vec!["sample_id".to_string(), "true_label".to_string()];
    head.extend((0..k).map(|j| format!("p_{j}")));
    w.write_record(&head).map_err(csv_err(path))?;
    let mut row = Vec::with_capacity(k + 2);
    for (i, (id, label)) in data.ids().iter().zip(data.labels()).enumerate() {
        row.clear();
        row.push(id.clone());
        row.push(label.map_or("-1".to_string(), |l| l.to_string()));
        row.extend(data.scores().row(i).iter().map(|&p| format_sig12(p)));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    finish(path, w)
}

/// Reads `sample_id,true_label` from the first two columns of any CSV whose
/// header starts that way (a scores CSV qualifies).
pub fn read_labels_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Label>)> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let head = header(path, &mut reader)?;
    if head.len() < 2 || &head[0] != "sample_id" || &head[1] != "true_label" {
        return Err(Error::MissingHeader { path: path.into(), detail: "expected 'sample_id,true_label,...'".into() });
    }
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut rec = csv::StringRecord::new();
    while reader.read_record(&mut rec).map_err(csv_err(path))? {
        if rec.len() < 2 {
            return Err(Error::RaggedRow { row: ids.len(), expected: head.len(), found: rec.len() }.in_file(path));
        }
        ids.push(rec[0].to_string());
        labels.push(parse_label(path, &rec, &rec[1])?);
    }
    Ok((ids, labels))
}

// ---------------------------------------------------------------- JSON

fn write_json(path: &Path, mut body: Map<String, Value>, provenance: Option<&Provenance>) -> Result<()> {
    body.insert("format_version".into(), Value::String(FORMAT_VERSION.into()));
    if let Some(p) = provenance {
        body.insert("provenance".into(), serde_json::to_value(p).expect("provenance serializes"));
    }
    let mut text = serde_json::to_string_pretty(&Value::Object(body)).expect("JSON value serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn to_map<T: Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value).expect("serializable") {
        Value::Object(map) => map,
        _ => unreachable!("structs serialize to objects"),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<(T, Option<Provenance>)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let json = |source| Error::Json { path: path.into(), source };
    let value: Value = serde_json::from_str(&text).map_err(json)?;
    let Value::Object(mut map) = value else {
        return Err(Error::MissingHeader { path: path.into(), detail: "top level is not a JSON object".into() });
    };
    match map.remove("format_version") {
        Some(Value::String(v)) if v == FORMAT_VERSION => {}
        other => {
            let found = match other {
                Some(Value::String(s)) => s,
                Some(v) => v.to_string(),
                None => "<missing>".into(),
            };
            return Err(Error::SchemaVersionMismatch { expected: FORMAT_VERSION.into(), found }.in_file(path));
        }
    }
    let provenance = match map.remove("provenance") {
        Some(v) => Some(serde_json::from_value(v).map_err(json)?),
        None => None,
    };
    let body = serde_json::from_value(Value::Object(map)).map_err(json)?;
    Ok((body, provenance))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArtifactJson {
    alpha: f64,
    n_calibration: usize,
    num_classes: usize,
    q_hat: f64,
    score_kind: ScoreKind,
    created_from: String,
}

pub fn write_artifact(
    artifact: &CalibrationArtifact,
    path: impl AsRef<Path>,
    provenance: Option<&Provenance>,
) -> Result<()> {
    let body = ArtifactJson {
        alpha: artifact.alpha(),
        n_calibration: artifact.n_calibration(),
        num_classes: artifact.num_classes(),
        q_hat: artifact.q_hat(),
        score_kind: artifact.score_kind(),
        created_from: artifact.created_from().to_string(),
    };
    write_json(path.as_ref(), to_map(&body), provenance)
}

pub fn read_artifact(path: impl AsRef<Path>) -> Result<CalibrationArtifact> {
    let path = path.as_ref();
    let (a, _): (ArtifactJson, _) = read_json(path)?;
    CalibrationArtifact::new(a.alpha, a.n_calibration, a.num_classes, a.q_hat, a.score_kind, a.created_from)
        .map_err(|e| e.in_file(path))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestMeta {
    ratios: [f64; 4],
    seed: u64,
    stratified: bool,
}

pub fn write_manifest(manifest: &SplitManifest, path: impl AsRef<Path>, provenance: Option<&Provenance>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(["sample_id", "split"]).map_err(csv_err(path))?;
    for (id, tag) in manifest.assignments() {
        w.write_record([id.as_str(), tag.as_str()]).map_err(csv_err(path))?;
    }
    finish(path, w)?;
    let meta = ManifestMeta { ratios: manifest.ratios(), seed: manifest.seed(), stratified: manifest.stratified() };
    write_json(&sidecar_path(path), to_map(&meta), provenance)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<SplitManifest> {
    let path = path.as_ref();
    let (meta, _): (ManifestMeta, _) = read_json(&sidecar_path(path))?;
    let mut reader = csv_reader(path)?;
    let head = header(path, &mut reader)?;
    if head.iter().ne(["sample_id", "split"]) {
        return Err(Error::MissingHeader { path: path.into(), detail: "expected 'sample_id,split'".into() });
    }
    let mut assignments = indexmap::IndexMap::new();
    let mut rec = csv::StringRecord::new();
    while reader.read_record(&mut rec).map_err(csv_err(path))? {
        if rec.len() != 2 {
            return Err(Error::RaggedRow { row: assignments.len(), expected: 2, found: rec.len() }.in_file(path));
        }
        let tag: SplitTag =
            rec[1].parse().map_err(|detail| Error::MalformedRow { path: path.into(), line: line_of(&rec), detail })?;
        if assignments.insert(rec[0].to_string(), tag).is_some() {
            return Err(Error::DuplicateIds(rec[0].to_string()).in_file(path));
        }
    }
    SplitManifest::new(assignments, meta.ratios, meta.seed, meta.stratified).map_err(|e| e.in_file(path))
}

/// Formats a prediction set as a cell: `0|2|5`, or empty.
pub fn format_set(set: &[usize]) -> String {
    set.iter().map(usize::to_string).collect::<Vec<_>>().join("|")
}

/// Parses a canonical set cell. Indices must be plain decimals without
/// leading zeros, strictly ascending.
pub fn parse_set(cell: &str) -> Result<Vec<usize>> {
    if cell.is_empty() {
        return Ok(Vec::new());
    }
    let bad = || Error::MalformedSetCell(cell.to_string());
    let mut out: Vec<usize> = Vec::new();
    for part in cell.split('|') {
        let canonical =
            !part.is_empty() && part.bytes().all(|b| b.is_ascii_digit()) && (part == "0" || !part.starts_with('0'));
        if !canonical {
            return Err(bad());
        }
        let v: usize = part.parse().map_err(|_| bad())?;
        if out.last().is_some_and(|&prev| prev >= v) {
            return Err(bad());
        }
        out.push(v);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetsMeta {
    num_classes: usize,
    q_hat_used: f64,
    allow_empty: bool,
}

pub fn write_sets(batch: &PredictionSetBatch, path: impl AsRef<Path>, provenance: Option<&Provenance>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(["sample_id", "set"]).map_err(csv_err(path))?;
    for (id, set) in batch.ids().iter().zip(batch.sets()) {
        w.write_record([id.as_str(), &format_set(set)]).map_err(csv_err(path))?;
    }
    finish(path, w)?;
    let meta =
        SetsMeta { num_classes: batch.num_classes(), q_hat_used: batch.q_hat_used(), allow_empty: batch.allow_empty() };
    write_json(&sidecar_path(path), to_map(&meta), provenance)
}

pub fn read_sets(path: impl AsRef<Path>) -> Result<PredictionSetBatch> {
    let path = path.as_ref();
    let (meta, _): (SetsMeta, _) = read_json(&sidecar_path(path))?;
    let mut reader = csv_reader(path)?;
    let head = header(path, &mut reader)?;
    if head.iter().ne(["sample_id", "set"]) {
        return Err(Error::MissingHeader { path: path.into(), detail: "expected 'sample_id,set'".into() });
    }
    let mut ids = Vec::new();
    let mut sets = Vec::new();
    let mut seen = HashMap::new();
    let mut rec = csv::StringRecord::new();
    while reader.read_record(&mut rec).map_err(csv_err(path))? {
        if rec.len() != 2 {
            return Err(Error::RaggedRow { row: ids.len(), expected: 2, found: rec.len() }.in_file(path));
        }
        if seen.insert(rec[0].to_string(), ()).is_some() {
            return Err(Error::DuplicateSampleId(rec[0].to_string()).in_file(path));
        }
        ids.push(rec[0].to_string());
        sets.push(parse_set(&rec[1]).map_err(|e| e.in_file(path))?);
    }
    PredictionSetBatch::new(ids, sets, meta.num_classes, meta.q_hat_used, meta.allow_empty).map_err(|e| e.in_file(path))
}

pub fn write_report(report: &EvaluationReport, path: impl AsRef<Path>, provenance: Option<&Provenance>) -> Result<()> {
    write_json(path.as_ref(), to_map(report), provenance)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvaluationReport> {
    Ok(read_json(path.as_ref())?.0)
}

pub fn read_simulator_config(path: impl AsRef<Path>) -> Result<SimulatorConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut value: Value = serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })?;
    // format_version is optional in hand-written configs
    if let Value::Object(map) = &mut value {
        match map.remove("format_version") {
            None => {}
            Some(Value::String(v)) if v == FORMAT_VERSION => {}
            Some(v) => {
                return Err(Error::SchemaVersionMismatch { expected: FORMAT_VERSION.into(), found: v.to_string() }
                    .in_file(path))
            }
        }
    }
    let config: SimulatorConfig =
        serde_json::from_value(value).map_err(|source| Error::Json { path: path.into(), source })?;
    config.validate().map_err(|e| e.in_file(path))?;
    Ok(config)
}

pub fn write_simulator_config(config: &SimulatorConfig, path: impl AsRef<Path>) -> Result<()> {
    write_json(path.as_ref(), to_map(config), None)
}

/// The report as `key,value` lines, for spreadsheets and plotting scripts.
/// Empty strata leave the value empty.
pub fn write_report_csv(report: &EvaluationReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let rows: Vec<(&str, String)> = vec![
        ("n_test", report.n_test.to_string()),
        ("num_classes", report.num_classes.to_string()),
        ("q_hat_used", report.q_hat_used.to_string()),
        ("coverage", report.coverage.to_string()),
        ("avg_set_size", report.avg_set_size.to_string()),
        ("avg_set_size_correct", opt(report.avg_set_size_correct)),
        ("avg_set_size_incorrect", opt(report.avg_set_size_incorrect)),
        ("n_correct", report.n_correct.to_string()),
        ("n_incorrect", report.n_incorrect.to_string()),
        ("accuracy", report.accuracy.to_string()),
        ("macro_precision", report.macro_precision.to_string()),
        ("macro_recall", report.macro_recall.to_string()),
        ("macro_f1", report.macro_f1.to_string()),
    ];
    w.write_record(["key", "value"]).map_err(csv_err(path))?;
    for (k, v) in rows {
        w.write_record([k, v.as_str()]).map_err(csv_err(path))?;
    }
    finish(path, w)
}

fn write_histogram_csv(h: &Histogram, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["bin_lo", "bin_hi", "bin_center", "count"]).map_err(csv_err(path))?;
    for (i, c) in h.counts.iter().enumerate() {
        let (lo, hi) = (h.bin_edges[i], h.bin_edges[i + 1]);
        w.write_record([lo.to_string(), hi.to_string(), ((lo + hi) / 2.0).to_string(), c.to_string()])
            .map_err(csv_err(path))?;
    }
    finish(path, w)
}

/// Writes chart-ready series into `dir`:
/// `coverage_by_set_size.csv`, `uncertainty_correct.csv`,
/// `uncertainty_incorrect.csv` and `report.csv`.
pub fn write_plot_data(report: &EvaluationReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("coverage_by_set_size.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["set_size", "count", "coverage", "cumulative_count", "cumulative_coverage"])
        .map_err(csv_err(&path))?;
    for (k, v) in &report.coverage_by_set_size {
        w.write_record([
            k.to_string(),
            v.count.to_string(),
            v.coverage.to_string(),
            v.cumulative_count.to_string(),
            v.cumulative_coverage.to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    finish(&path, w)?;
    write_histogram_csv(&report.uncertainty_histogram_correct, &dir.join("uncertainty_correct.csv"))?;
    write_histogram_csv(&report.uncertainty_histogram_incorrect, &dir.join("uncertainty_incorrect.csv"))?;
    write_report_csv(report, dir.join("report.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_score_matrix;

    #[test]
    fn sig12_formatting() {
        assert_eq!(format_sig12(0.7), "0.7");
        assert_eq!(format_sig12(1.0), "1");
        assert_eq!(format_sig12(0.0), "0");
        assert_eq!(format_sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_sig12(2.0 / 3.0), "0.666666666667");
        assert_eq!(format_sig12(1e-7), "1e-7");
        assert_eq!(format_sig12(0.000_012_5), "0.0000125");
        assert_eq!(format_sig12(123.5), "123.5");
        assert_eq!(format_sig12(-0.25), "-0.25");
        assert_eq!(format_sig12(1.234_567_890_123_4e-9), "1.23456789012e-9");
        for v in [0.1, 0.123_456_789_012_345, 9.999_999_999_999e-6, 0.5 + 1e-13] {
            let back: f64 = format_sig12(v).parse().unwrap();
            assert!((back - v).abs() <= 5e-12 * v.abs());
        }
    }

    #[test]
    fn set_cells() {
        assert_eq!(format_set(&[0, 2, 5]), "0|2|5");
        assert_eq!(format_set(&[]), "");
        assert_eq!(parse_set("0|2|5").unwrap(), vec![0, 2, 5]);
        assert_eq!(parse_set("").unwrap(), Vec::<usize>::new());
        for bad in ["2|0", "1|1", "01", "a", "1||2", "|1", "-1", " 1"] {
            assert!(matches!(parse_set(bad), Err(Error::MalformedSetCell(_))), "{bad}");
        }
    }

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn reads_scores_and_sentinels() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s.csv", "sample_id,true_label,p_0,p_1,p_2\na,0,0.7,0.2,0.1\nb,-1,0.1,0.8,0.1\n");
        let s = read_scores_csv(&p).unwrap();
        assert_eq!((s.len(), s.num_classes()), (2, 3));
        assert_eq!(s.labels(), &[Some(0), None]);
    }

    #[test]
    fn scores_errors() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let cases: &[(&str, &str)] = &[
            ("", "MISSING_HEADER"),
            ("id,label,p_0,p_1\n", "MISSING_HEADER"),
            ("sample_id,true_label,p_0\na,0,1\n", "TOO_FEW_CLASSES"),
            ("sample_id,true_label,p_0,p_1,p_2\na,0,0.7,0.3\n", "RAGGED_ROW"),
            ("sample_id,true_label,p_0,p_1\na,0,x,0.3\n", "NON_NUMERIC_CELL"),
            ("sample_id,true_label,p_0,p_1\na,zero,0.5,0.5\n", "NON_NUMERIC_CELL"),
            ("sample_id,true_label,p_0,p_1\na,0,0.5,0.6\n", "ROW_SUM_OUT_OF_TOLERANCE"),
            ("sample_id,true_label,p_0,p_1\na,0,0.5,0.5\na,1,0.5,0.5\n", "DUPLICATE_SAMPLE_ID"),
            ("sample_id,true_label,p_0,p_1\na,2,0.5,0.5\n", "LABEL_OUT_OF_RANGE"),
            ("sample_id,true_label,p_0,p_1\na,0,1.2,-0.2\n", "NEGATIVE_ENTRY"),
        ];
        for (i, (text, code)) in cases.iter().enumerate() {
            let p = write(d, &format!("c{i}.csv"), text);
            let err = read_scores_csv(&p).unwrap_err();
            assert_eq!(err.code(), *code, "case {i}: {err}");
        }
    }

    #[test]
    fn scores_writer_output_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = validate_score_matrix(&[vec![0.7, 0.2, 0.1], vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]).unwrap();
        let data = LabeledScores::new(vec!["a".into(), "b,c".into()], vec![Some(2), None], m).unwrap();
        let p = dir.path().join("o.csv");
        write_scores_csv(&data, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "sample_id,true_label,p_0,p_1,p_2\na,2,0.7,0.2,0.1\n\"b,c\",-1,0.333333333333,0.333333333333,0.333333333333\n"
        );
        let back = read_scores_csv(&p).unwrap();
        assert_eq!(back.ids(), data.ids());
    }

    #[test]
    fn json_version_and_strictness() {
        let dir = tempfile::tempdir().unwrap();
        let art = CalibrationArtifact::new(0.1, 50, 7, 0.42, ScoreKind::OneMinusTrueClassProb, "calib.csv").unwrap();
        let p = dir.path().join("a.json");
        write_artifact(&art, &p, Some(&Provenance::new("confens calibrate"))).unwrap();
        assert_eq!(read_artifact(&p).unwrap(), art);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"score_kind\": \"one_minus_true_class_prob\""));

        fs::write(&p, text.replace("\"format_version\": \"1\"", "\"format_version\": \"2\"")).unwrap();
        assert_eq!(read_artifact(&p).unwrap_err().code(), "SCHEMA_VERSION_MISMATCH");

        fs::write(&p, text.replace("\"alpha\"", "\"extra\": 1, \"alpha\"")).unwrap();
        assert_eq!(read_artifact(&p).unwrap_err().code(), "MALFORMED_JSON");

        fs::write(&p, text.replace("\"q_hat\": 0.42", "\"q_hat\": 1.42")).unwrap();
        assert!(read_artifact(&p).is_err());
    }

    #[test]
    fn sets_reader_rejects_non_canonical_cells() {
        let dir = tempfile::tempdir().unwrap();
        let batch =
            PredictionSetBatch::new(vec!["a".into(), "b".into()], vec![vec![0, 2], vec![]], 3, 0.5, true).unwrap();
        let p = dir.path().join("sets.csv");
        write_sets(&batch, &p, None).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "sample_id,set\na,0|2\nb,\n");
        assert_eq!(read_sets(&p).unwrap(), batch);
        fs::write(&p, "sample_id,set\na,2|0\nb,\n").unwrap();
        assert_eq!(read_sets(&p).unwrap_err().code(), "MALFORMED_SET_CELL");
        fs::write(&p, "sample_id,set\na,0|5\n").unwrap();
        assert_eq!(read_sets(&p).unwrap_err().code(), "MALFORMED_SET_CELL");
    }

    #[test]
    fn labels_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "l.csv", "sample_id,true_label\nx,3\ny,-1\n");
        let (ids, labels) = read_labels_csv(&p).unwrap();
        assert_eq!(ids, vec!["x", "y"]);
        assert_eq!(labels, vec![Some(3), None]);
    }

    #[test]
    fn simulator_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sim.json");
        let cfg = SimulatorConfig::default();
        write_simulator_config(&cfg, &p).unwrap();
        assert_eq!(read_simulator_config(&p).unwrap(), cfg);
        let p2 = write(
            dir.path(),
            "bad.json",
            r#"{"num_classes":1,"num_domains":1,"per_domain_concentration":[1],"per_domain_fidelity":[1],"samples_per_domain":[1],"seed":0}"#,
        );
        assert_eq!(read_simulator_config(&p2).unwrap_err().code(), "INVALID_CONFIG");
    }
}
