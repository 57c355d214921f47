//! Conversion from a CAMELS-US directory tree to the data-directory schema.
//!
//! Expected inputs (as distributed):
//!
//! ```text
//! <root>/basin_mean_forcing/<source>/<huc>/<id>_lump_<source>_forcing_leap.txt
//! <root>/usgs_streamflow/<huc>/<id>_streamflow_qc.txt
//! <root>/camels_attributes_v2.0/camels_{clim,topo,vege,soil,geol}.txt
//! ```
//!
//! Forcing files carry latitude, elevation and area (m^2) on their first
//! three lines. Streamflow is in cubic feet per second and is converted to
//! mm/day with that area.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::io::{write_attributes, write_basin, write_basin_list, DataDir};
use super::{BasinRecord, DataError, ATTRIBUTE_COLUMNS};

const CUBIC_FEET_TO_M3: f64 = 0.028_316_846_592;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CamelsLayout {
    pub root: PathBuf,
    /// Forcing product directory name, e.g. `nldas`, `daymet`, `maurer`.
    pub source: String,
}

impl CamelsLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            source: "nldas".into(),
        }
    }

    fn find(&self, dir: &Path, file_name: &str) -> Option<PathBuf> {
        let direct = dir.join(file_name);
        if direct.is_file() {
            return Some(direct);
        }
        let entries = fs::read_dir(dir).ok()?;
        let mut subdirs: Vec<PathBuf> = entries.flatten().map(|e| e.path()).filter(|p| p.is_dir()).collect();
        subdirs.sort();
        subdirs.into_iter().map(|d| d.join(file_name)).find(|p| p.is_file())
    }

    pub fn forcing_file(&self, basin_id: &str) -> Option<PathBuf> {
        let dir = self.root.join("basin_mean_forcing").join(&self.source);
        self.find(&dir, &format!("{basin_id}_lump_{}_forcing_leap.txt", self.source))
    }

    pub fn streamflow_file(&self, basin_id: &str) -> Option<PathBuf> {
        self.find(&self.root.join("usgs_streamflow"), &format!("{basin_id}_streamflow_qc.txt"))
    }

    fn attribute_dir(&self) -> PathBuf {
        let v2 = self.root.join("camels_attributes_v2.0");
        if v2.is_dir() {
            v2
        } else {
            self.root.clone()
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

fn malformed(path: &Path, line: usize, detail: impl Into<String>) -> DataError {
    DataError::Malformed {
        path: path.to_path_buf(),
        line: line as u64,
        detail: detail.into(),
    }
}

fn num(path: &Path, line: usize, s: &str) -> Result<f64, DataError> {
    s.parse().map_err(|_| malformed(path, line, format!("bad number {s:?}")))
}

fn date(path: &Path, line: usize, y: &str, m: &str, d: &str) -> Result<NaiveDate, DataError> {
    let (y, m, d) = (y.parse().ok(), m.parse().ok(), d.parse().ok());
    match (y, m, d) {
        (Some(y), Some(m), Some(d)) => {
            NaiveDate::from_ymd_opt(y, m, d).ok_or_else(|| malformed(path, line, "invalid date"))
        }
        _ => Err(malformed(path, line, "bad date fields")),
    }
}

/// Area (m^2) and daily `[tmax, tmin, prcp, srad, vp]` rows keyed by date.
fn read_camels_forcing(path: &Path) -> Result<(f64, BTreeMap<NaiveDate, [f64; 5]>), DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let _lat = lines.next();
    let _elev = lines.next();
    let area_line = lines.next().ok_or_else(|| malformed(path, 3, "missing area line"))?;
    let area = num(path, 3, area_line.trim())?;
    if !(area > 0.0) {
        return Err(malformed(path, 3, "area must be positive"));
    }
    let header: Vec<&str> = lines.next().ok_or_else(|| malformed(path, 4, "missing header"))?.split_whitespace().collect();
    let col = |prefix: &str| {
        header
            .iter()
            .position(|h| h.to_ascii_lowercase().starts_with(prefix))
            .ok_or_else(|| malformed(path, 4, format!("no {prefix} column")))
    };
    let idx = [col("tmax")?, col("tmin")?, col("prcp")?, col("srad")?, col("vp")?];
    let mut rows = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 5;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() < header.len() {
            return Err(malformed(path, lineno, "too few fields"));
        }
        let d = date(path, lineno, f[0], f[1], f[2])?;
        let mut row = [0.0; 5];
        for (k, &j) in idx.iter().enumerate() {
            row[k] = num(path, lineno, f[j])?;
        }
        rows.insert(d, row);
    }
    Ok((area, rows))
}

/// Streamflow in cfs keyed by date; negative values mark missing days.
fn read_camels_streamflow(path: &Path) -> Result<BTreeMap<NaiveDate, Option<f64>>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() < 5 {
            return Err(malformed(path, i + 1, "too few fields"));
        }
        let d = date(path, i + 1, f[1], f[2], f[3])?;
        let q = num(path, i + 1, f[4])?;
        out.insert(d, (q >= 0.0).then_some(q));
    }
    Ok(out)
}

fn canonical_attribute(name: &str) -> &str {
    match name {
        "geol_permeabilty" => "geol_permeability",
        other => other,
    }
}

fn read_camels_attributes(dir: &Path) -> Result<HashMap<String, HashMap<String, f64>>, DataError> {
    let mut out: HashMap<String, HashMap<String, f64>> = HashMap::new();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("camels_") && n.ends_with(".txt"))
        })
        .collect();
    files.sort();
    for path in files {
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let mut lines = text.lines();
        let Some(header) = lines.next() else { continue };
        let names: Vec<&str> = header.split(';').map(str::trim).collect();
        if names.first() != Some(&"gauge_id") {
            continue;
        }
        for line in lines {
            let f: Vec<&str> = line.split(';').map(str::trim).collect();
            if f.len() != names.len() {
                continue;
            }
            let entry = out.entry(f[0].to_string()).or_default();
            for (n, v) in names.iter().zip(&f).skip(1) {
                if let Ok(v) = v.parse::<f64>() {
                    entry.insert(canonical_attribute(n).to_string(), v);
                }
            }
        }
    }
    Ok(out)
}

fn convert_one(
    layout: &CamelsLayout,
    basin_id: &str,
    attributes: &HashMap<String, HashMap<String, f64>>,
) -> Result<BasinRecord, DataError> {
    let missing = || DataError::MissingBasins(vec![basin_id.to_string()]);
    let forcing_path = layout.forcing_file(basin_id).ok_or_else(missing)?;
    let flow_path = layout.streamflow_file(basin_id).ok_or_else(missing)?;
    let (area, forcing) = read_camels_forcing(&forcing_path)?;
    let flow = read_camels_streamflow(&flow_path)?;
    let attrs = attributes.get(basin_id).ok_or_else(missing)?;
    let attributes = ATTRIBUTE_COLUMNS
        .iter()
        .map(|name| {
            attrs
                .get(*name)
                .copied()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::BadAttribute {
                    basin: basin_id.to_string(),
                    name: name.to_string(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    // common contiguous span: forcing dates that also have a streamflow row
    let first = forcing.keys().find(|d| flow.contains_key(d)).copied();
    let last = forcing.keys().rev().find(|d| flow.contains_key(d)).copied();
    let (Some(first), Some(last)) = (first, last) else {
        return Err(DataError::DateMismatch {
            basin: basin_id.to_string(),
            detail: "no overlapping dates".into(),
        });
    };
    let to_mm = CUBIC_FEET_TO_M3 * 86_400.0 * 1_000.0 / area;
    let mut rows = Vec::new();
    let mut discharge = Vec::new();
    let mut d = first;
    while d <= last {
        let row = forcing.get(&d).ok_or_else(|| DataError::DateGap {
            path: forcing_path.clone(),
            after: d.pred_opt().unwrap_or(d),
            before: d,
        })?;
        rows.push(*row);
        discharge.push(flow.get(&d).copied().flatten().map(|q| q * to_mm));
        d = d.succ_opt().expect("date in range");
    }
    Ok(BasinRecord {
        basin_id: basin_id.to_string(),
        start: first,
        forcing: rows,
        attributes,
        discharge,
    })
}

/// Convert the listed basins into `out`. Basins whose inputs are absent are
/// collected and reported together; nothing is written in that case.
pub fn convert_camels(layout: &CamelsLayout, basins: &[String], out: &DataDir) -> Result<Vec<BasinRecord>, DataError> {
    let attributes = read_camels_attributes(&layout.attribute_dir())?;
    let absent: Vec<String> = basins
        .iter()
        .filter(|b| {
            layout.forcing_file(b).is_none() || layout.streamflow_file(b).is_none() || !attributes.contains_key(*b)
        })
        .cloned()
        .collect();
    if !absent.is_empty() {
        return Err(DataError::MissingBasins(absent));
    }
    let records = basins
        .iter()
        .map(|b| convert_one(layout, b, &attributes))
        .collect::<Result<Vec<_>, _>>()?;
    for r in &records {
        write_basin(out, r)?;
    }
    let names: Vec<String> = ATTRIBUTE_COLUMNS.iter().map(|s| s.to_string()).collect();
    write_attributes(&out.attributes(), &names, &records)?;
    write_basin_list(&out.basin_list(), basins)?;
    Ok(records)
}
