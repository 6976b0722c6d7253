//! Plain-text grasp trace files.
//!
//! ```text
//! # comment lines and blank lines are ignored anywhere in the header
//! source force            # force | pressure, default force
//! freq_hz 16.7
//! channels 16
//! outcome failure         # success | failure
//! direction back          # back | right | top (force only, required there)
//! object bottle           # required for force
//! weight 300g             # required for force
//! force_level high        # required for force
//! lift_step 100           # optional
//! slip_onset 230          # optional, first unstable step (ground truth)
//! drop_step 262           # optional, drop step (ground truth)
//! initial 6458 6263 6357 6458   # optional; pressure zero positions
//! data
//! 812 790 ... (one row per step, `channels` whitespace-separated integers)
//! ```
//!
//! Values are single tokens (no spaces). The set id is the file stem.
//! [`write_trace`] emits keys in the order above, so parse → write is the
//! identity on files it wrote.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Direction, GraspSet, Outcome};
use crate::error::{Error, Result};
use crate::io::{file_digest, write_atomic};
use crate::signal::SensorSource;

pub const TRACE_EXTENSION: &str = "trace";
pub const MANIFEST_FILE: &str = "manifest.json";

const KEYS: [&str; 12] = [
    "source",
    "freq_hz",
    "channels",
    "outcome",
    "direction",
    "object",
    "weight",
    "force_level",
    "lift_step",
    "slip_onset",
    "drop_step",
    "initial",
];

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses one trace file's text; `path` names the set and error locations.
pub fn parse_trace(text: &str, path: &Path) -> Result<GraspSet> {
    let mut header: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut data_line = None;
    for (no, raw) in lines.by_ref() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line == "data" {
            data_line = Some(no);
            break;
        }
        let (key, value) = line
            .split_once(char::is_whitespace)
            .map(|(k, v)| (k, v.trim()))
            .ok_or_else(|| parse_err(path, no, format!("header line '{line}' has no value")))?;
        if !KEYS.contains(&key) {
            return Err(parse_err(path, no, format!("unknown header key '{key}'")));
        }
        if header.insert(key, (no, value)).is_some() {
            return Err(parse_err(path, no, format!("duplicate header key '{key}'")));
        }
    }
    let data_line =
        data_line.ok_or_else(|| parse_err(path, text.lines().count(), "missing 'data' line"))?;

    let get = |key: &str| header.get(key).copied();
    let require = |key: &str| {
        get(key).ok_or_else(|| parse_err(path, data_line, format!("missing header key '{key}'")))
    };
    fn num<T: std::str::FromStr>(path: &Path, (no, v): (usize, &str), what: &str) -> Result<T> {
        v.parse()
            .map_err(|_| parse_err(path, no, format!("{what} '{v}' is not a valid number")))
    }

    let source = match get("source") {
        None => SensorSource::Force,
        Some((no, v)) => SensorSource::parse(v)
            .ok_or_else(|| parse_err(path, no, format!("unknown source '{v}'")))?,
    };
    let freq_hz: f64 = num(path, require("freq_hz")?, "freq_hz")?;
    let channels: usize = num(path, require("channels")?, "channels")?;
    let (no, v) = require("outcome")?;
    let outcome: Outcome = v
        .parse()
        .map_err(|e: Error| parse_err(path, no, e.to_string()))?;
    let direction = match get("direction") {
        None => None,
        Some((no, v)) => Some(
            v.parse::<Direction>()
                .map_err(|e| parse_err(path, no, e.to_string()))?,
        ),
    };
    let text_field = |key: &str| -> Result<String> {
        match (get(key), source) {
            (Some((_, v)), _) => Ok(v.to_string()),
            (None, SensorSource::Force) => Err(parse_err(
                path,
                data_line,
                format!("missing header key '{key}'"),
            )),
            (None, SensorSource::Pressure) => Ok("n/a".to_string()),
        }
    };
    if source == SensorSource::Force && direction.is_none() {
        return Err(parse_err(path, data_line, "missing header key 'direction'"));
    }
    let object = text_field("object")?;
    let weight = text_field("weight")?;
    let force_level = text_field("force_level")?;
    let opt_step = |key: &str| get(key).map(|kv| num::<usize>(path, kv, key)).transpose();
    let lift_step = opt_step("lift_step")?;
    let slip_onset = opt_step("slip_onset")?;
    let drop_step = opt_step("drop_step")?;
    let initial = match get("initial") {
        None => None,
        Some((no, v)) => Some(
            v.split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        parse_err(path, no, format!("initial value '{t}' is not a number"))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        ),
    };

    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); channels];
    for (no, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut n = 0;
        for tok in line.split_whitespace() {
            let v: i64 = tok
                .parse()
                .map_err(|_| parse_err(path, no, format!("non-numeric cell '{tok}'")))?;
            if n < channels {
                cols[n].push(v as f64);
            }
            n += 1;
        }
        if n != channels {
            return Err(parse_err(
                path,
                no,
                format!("expected {channels} values, found {n}"),
            ));
        }
    }

    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let set = GraspSet {
        id,
        source,
        freq_hz,
        outcome,
        direction,
        object,
        weight,
        force_level,
        channels: cols,
        slip_onset,
        drop_step,
        lift_step,
        initial,
    };
    set.validate()
        .map_err(|e| parse_err(path, data_line, e.to_string()))?;
    Ok(set)
}

pub fn load_trace_file(path: &Path) -> Result<GraspSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text, path)
}

/// Serializes a set. Samples must be integers.
pub fn write_trace(set: &GraspSet) -> Result<String> {
    let mut out = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| {
        let _ = writeln!(out, "{k} {v}");
    };
    kv("source", &set.source.as_str());
    kv("freq_hz", &set.freq_hz);
    kv("channels", &set.channels.len());
    kv("outcome", &set.outcome);
    if let Some(d) = set.direction {
        kv("direction", &d);
    }
    for (k, v) in [
        ("object", &set.object),
        ("weight", &set.weight),
        ("force_level", &set.force_level),
    ] {
        if v.is_empty() || v.contains(char::is_whitespace) || v.contains('#') {
            return Err(Error::InvalidArgument(format!(
                "{k} '{v}' must be one token"
            )));
        }
        kv(k, v);
    }
    for (k, v) in [
        ("lift_step", set.lift_step),
        ("slip_onset", set.slip_onset),
        ("drop_step", set.drop_step),
    ] {
        if let Some(v) = v {
            kv(k, &v);
        }
    }
    if let Some(init) = &set.initial {
        let s: Vec<String> = init.iter().map(|v| v.to_string()).collect();
        kv("initial", &s.join(" "));
    }
    out.push_str("data\n");
    for t in 0..set.len() {
        for (c, ch) in set.channels.iter().enumerate() {
            let v = ch[t];
            if v.fract() != 0.0 || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "sample {v} at step {t} channel {c} is not an integer"
                )));
            }
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", v as i64);
        }
        out.push('\n');
    }
    Ok(out)
}

/// `*.trace` files in `dir`, sorted by file name.
pub fn trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == TRACE_EXTENSION))
        .collect();
    files.sort();
    Ok(files)
}

/// All sets in `dir`, parsed in parallel, returned in file-name order.
pub fn load_dataset(dir: &Path) -> Result<Vec<GraspSet>> {
    let files = trace_files(dir)?;
    files.par_iter().map(|p| load_trace_file(p)).collect()
}

/// Like [`load_dataset`], but every set must be a force recording.
pub fn load_force_dataset(dir: &Path) -> Result<Vec<GraspSet>> {
    let sets = load_dataset(dir)?;
    if let Some(s) = sets.iter().find(|s| s.source != SensorSource::Force) {
        return Err(Error::InvalidTrace(format!(
            "set {} is not a force recording",
            s.id
        )));
    }
    Ok(sets)
}

/// Reads a CSV of integer samples, one row per step and one column per
/// channel. A leading non-numeric row is taken as a header.
pub fn read_csv_channels(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if i == 0 && rec.iter().any(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        if cols.is_empty() {
            cols = vec![Vec::new(); rec.len()];
        }
        if rec.len() != cols.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} values, found {}", cols.len(), rec.len()),
            ));
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(path, line, format!("non-numeric cell '{cell}'")))?;
            cols[c].push(v.round());
        }
    }
    if cols.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub id: String,
    pub source: SensorSource,
    pub outcome: Outcome,
    pub direction: Option<Direction>,
    pub steps: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_sets: usize,
    pub n_success: usize,
    pub n_failure: usize,
    pub total_steps: usize,
    pub by_direction: BTreeMap<String, usize>,
    /// Per-channel sample range over all sets.
    pub channel_min: Vec<f64>,
    pub channel_max: Vec<f64>,
}

/// Index of a dataset directory: each set file with its digest, plus totals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub sets: Vec<ManifestEntry>,
    pub stats: DatasetStats,
}

impl DatasetManifest {
    /// Loads and digests every trace file in `dir`.
    pub fn scan(dir: &Path) -> Result<Self> {
        let files = trace_files(dir)?;
        let parsed: Vec<(GraspSet, String)> = files
            .par_iter()
            .map(|p| Ok((load_trace_file(p)?, file_digest(p)?)))
            .collect::<Result<_>>()?;
        let mut m = DatasetManifest::default();
        for (path, (set, sha256)) in files.iter().zip(parsed) {
            m.add(
                &path.file_name().unwrap_or_default().to_string_lossy(),
                &set,
                sha256,
            );
        }
        Ok(m)
    }

    fn add(&mut self, file: &str, set: &GraspSet, sha256: String) {
        let s = &mut self.stats;
        s.n_sets += 1;
        match set.outcome {
            Outcome::Success => s.n_success += 1,
            Outcome::Failure => s.n_failure += 1,
        }
        s.total_steps += set.len();
        *s.by_direction.entry(set.condition()).or_default() += 1;
        for (c, ch) in set.channels.iter().enumerate() {
            let lo = ch.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if c >= s.channel_min.len() {
                s.channel_min.push(lo);
                s.channel_max.push(hi);
            } else {
                s.channel_min[c] = s.channel_min[c].min(lo);
                s.channel_max[c] = s.channel_max[c].max(hi);
            }
        }
        self.sets.push(ManifestEntry {
            file: file.to_string(),
            id: set.id.clone(),
            source: set.source,
            outcome: set.outcome,
            direction: set.direction,
            steps: set.len(),
            sha256,
        });
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST_FILE), self.to_json()?.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn fixture(channels: usize, steps: usize) -> String {
        let mut s = String::from(
            "# fixture\nfreq_hz 16.7\nchannels CH\noutcome failure\ndirection top\nobject cup\nweight 200g\nforce_level low\ndrop_step 3\ndata\n",
        )
        .replace("CH", &channels.to_string());
        for t in 0..steps {
            let row: Vec<String> = (0..channels).map(|c| (t * 100 + c).to_string()).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    #[test]
    fn parses_fixture() {
        let set = parse_trace(&fixture(16, 5), Path::new("dir/set-7.trace")).unwrap();
        assert_eq!(set.id, "set-7");
        assert_eq!(set.n_channels(), 16);
        assert_eq!(set.len(), 5);
        assert_eq!(set.direction, Some(Direction::Top));
        assert_eq!(set.drop_step, Some(3));
        assert_eq!(set.channels[15][4], 415.0);
    }

    #[test]
    fn fifteen_channels_rejected() {
        let e = parse_trace(&fixture(15, 5), Path::new("x.trace")).unwrap_err();
        assert!(e.to_string().contains("expected 16 channels"), "{e}");
    }

    #[test]
    fn bad_cell_reports_line() {
        let text = fixture(16, 3).replace("201 202", "201 x2");
        match parse_trace(&text, Path::new("f.trace")).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 13);
                assert!(message.contains("x2"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn short_row_and_missing_key() {
        let text = fixture(16, 3).replace("201 202 ", "");
        assert!(matches!(
            parse_trace(&text, Path::new("f.trace")),
            Err(Error::Parse { line: 13, .. })
        ));
        let text = fixture(16, 3).replace("object cup\n", "");
        assert!(parse_trace(&text, Path::new("f.trace"))
            .unwrap_err()
            .to_string()
            .contains("object"));
    }

    #[test]
    fn round_trip_is_identity() {
        let set = parse_trace(&fixture(16, 4), Path::new("a.trace")).unwrap();
        let text = write_trace(&set).unwrap();
        let again = parse_trace(&text, Path::new("a.trace")).unwrap();
        assert_eq!(set, again);
        assert_eq!(write_trace(&again).unwrap(), text);
    }

    #[test]
    fn pressure_header_defaults() {
        let text = "source pressure\nfreq_hz 71\nchannels 4\noutcome success\ninitial 6458 6263 6357 6458\ndata\n1 2 3 4\n";
        let set = parse_trace(text, Path::new("p.trace")).unwrap();
        assert_eq!(set.source, SensorSource::Pressure);
        assert_eq!(set.object, "n/a");
        assert_eq!(
            set.initial.as_deref(),
            Some(&[6458.0, 6263.0, 6357.0, 6458.0][..])
        );
    }
}
