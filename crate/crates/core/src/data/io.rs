use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::{BasinRecord, DataError, FORCING_COLUMNS, MISSING_DISCHARGE};

/// Paths inside a data directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataDir {
    pub root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn attributes(&self) -> PathBuf {
        self.root.join("attributes.csv")
    }

    pub fn forcing(&self, basin_id: &str) -> PathBuf {
        self.root.join("forcing").join(format!("{basin_id}.csv"))
    }

    pub fn streamflow(&self, basin_id: &str) -> PathBuf {
        self.root.join("streamflow").join(format!("{basin_id}.csv"))
    }

    pub fn basin_list(&self) -> PathBuf {
        self.root.join("basins.txt")
    }
}

/// Static attributes keyed by basin id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttributeTable {
    pub names: Vec<String>,
    pub rows: BTreeMap<String, Vec<f64>>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

fn malformed(path: &Path, line: u64, detail: impl Into<String>) -> DataError {
    DataError::Malformed {
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>, DataError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_header(path: &Path, reader: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<(), DataError> {
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| io_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != expected {
        return Err(DataError::Header {
            path: path.to_path_buf(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found,
        });
    }
    Ok(())
}

fn records<'a>(
    path: &Path,
    reader: &'a mut csv::Reader<fs::File>,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord), DataError>> + 'a {
    let path = path.to_path_buf();
    reader.records().map(move |r| {
        let rec = r.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(&path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        Ok((line, rec))
    })
}

fn parse_date(path: &Path, line: u64, s: &str) -> Result<NaiveDate, DataError> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| malformed(path, line, format!("bad date {s:?}: {e}")))
}

fn parse_f64(path: &Path, line: u64, column: &str, s: &str) -> Result<f64, DataError> {
    s.parse::<f64>()
        .map_err(|_| malformed(path, line, format!("column {column}: bad number {s:?}")))
}

/// Enforce strictly increasing, gap-free daily dates.
struct DateChain<'a> {
    path: &'a Path,
    start: Option<NaiveDate>,
    last: Option<NaiveDate>,
}

impl<'a> DateChain<'a> {
    fn new(path: &'a Path) -> Self {
        Self {
            path,
            start: None,
            last: None,
        }
    }

    fn push(&mut self, line: u64, d: NaiveDate) -> Result<(), DataError> {
        if let Some(prev) = self.last {
            let step = (d - prev).num_days();
            if step <= 0 {
                return Err(malformed(
                    self.path,
                    line,
                    format!("date {d} does not follow {prev}"),
                ));
            }
            if step > 1 {
                return Err(DataError::DateGap {
                    path: self.path.to_path_buf(),
                    after: prev,
                    before: d,
                });
            }
        } else {
            self.start = Some(d);
        }
        self.last = Some(d);
        Ok(())
    }
}

/// Forcing table: first date and `[T, 5]` rows.
pub fn read_forcing(path: &Path) -> Result<(NaiveDate, Vec<[f64; 5]>), DataError> {
    let mut reader = open_csv(path)?;
    let mut header = vec!["date"];
    header.extend(FORCING_COLUMNS);
    check_header(path, &mut reader, &header)?;
    let mut chain = DateChain::new(path);
    let mut rows = Vec::new();
    for r in records(path, &mut reader) {
        let (line, rec) = r?;
        chain.push(line, parse_date(path, line, &rec[0])?)?;
        let mut row = [0.0; 5];
        for (j, v) in row.iter_mut().enumerate() {
            *v = parse_f64(path, line, FORCING_COLUMNS[j], &rec[j + 1])?;
            if !v.is_finite() {
                return Err(malformed(path, line, format!("column {}: non-finite", FORCING_COLUMNS[j])));
            }
        }
        rows.push(row);
    }
    let start = chain.start.ok_or_else(|| io_err(path, "no data rows"))?;
    Ok((start, rows))
}

/// Streamflow table: first date and discharge with missing days as `None`.
pub fn read_streamflow(path: &Path) -> Result<(NaiveDate, Vec<Option<f64>>), DataError> {
    let mut reader = open_csv(path)?;
    check_header(path, &mut reader, &["date", "discharge_mm_day"])?;
    let mut chain = DateChain::new(path);
    let mut q = Vec::new();
    for r in records(path, &mut reader) {
        let (line, rec) = r?;
        chain.push(line, parse_date(path, line, &rec[0])?)?;
        let s = &rec[1];
        if s.is_empty() {
            q.push(None);
            continue;
        }
        let v = parse_f64(path, line, "discharge_mm_day", s)?;
        if v == MISSING_DISCHARGE || v.is_nan() {
            q.push(None);
        } else if v < 0.0 || !v.is_finite() {
            return Err(malformed(path, line, format!("invalid discharge {v}")));
        } else {
            q.push(Some(v));
        }
    }
    let start = chain.start.ok_or_else(|| io_err(path, "no data rows"))?;
    Ok((start, q))
}

pub fn load_attributes(path: &Path) -> Result<AttributeTable, DataError> {
    let mut reader = open_csv(path)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| io_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("basin_id") {
        return Err(DataError::Header {
            path: path.to_path_buf(),
            expected: vec!["basin_id".into()],
            found: header,
        });
    }
    let names = header[1..].to_vec();
    let mut rows = BTreeMap::new();
    for r in records(path, &mut reader) {
        let (line, rec) = r?;
        let id = rec[0].to_string();
        let mut values = Vec::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            let v = parse_f64(path, line, name, &rec[j + 1])?;
            if !v.is_finite() {
                return Err(DataError::BadAttribute { basin: id, name: name.clone() });
            }
            values.push(v);
        }
        if rows.insert(id.clone(), values).is_some() {
            return Err(malformed(path, line, format!("duplicate basin {id}")));
        }
    }
    Ok(AttributeTable { names, rows })
}

fn merge(
    basin_id: &str,
    attributes: Vec<f64>,
    (f_start, forcing): (NaiveDate, Vec<[f64; 5]>),
    (q_start, discharge): (NaiveDate, Vec<Option<f64>>),
) -> Result<BasinRecord, DataError> {
    if f_start != q_start || forcing.len() != discharge.len() {
        let end = |s: NaiveDate, n: usize| s + chrono::Days::new(n.saturating_sub(1) as u64);
        return Err(DataError::DateMismatch {
            basin: basin_id.to_string(),
            detail: format!(
                "forcing {}..{}, streamflow {}..{}",
                f_start,
                end(f_start, forcing.len()),
                q_start,
                end(q_start, discharge.len())
            ),
        });
    }
    Ok(BasinRecord {
        basin_id: basin_id.to_string(),
        start: f_start,
        forcing,
        attributes,
        discharge,
    })
}

pub fn load_basin(
    forcing_path: &Path,
    attributes_path: &Path,
    streamflow_path: &Path,
    basin_id: &str,
) -> Result<BasinRecord, DataError> {
    let table = load_attributes(attributes_path)?;
    let attributes = table
        .rows
        .get(basin_id)
        .cloned()
        .ok_or_else(|| DataError::UnknownBasin(basin_id.to_string()))?;
    merge(
        basin_id,
        attributes,
        read_forcing(forcing_path)?,
        read_streamflow(streamflow_path)?,
    )
}

/// Load every listed basin. Absent files or attribute rows are collected and
/// reported together.
pub fn load_dataset(dir: &DataDir, basins: &[String]) -> Result<(Vec<String>, Vec<BasinRecord>), DataError> {
    let table = load_attributes(&dir.attributes())?;
    let missing: Vec<String> = basins
        .iter()
        .filter(|b| !table.rows.contains_key(*b) || !dir.forcing(b).is_file() || !dir.streamflow(b).is_file())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(DataError::MissingBasins(missing));
    }
    let records = basins
        .iter()
        .map(|b| {
            merge(
                b,
                table.rows[b].clone(),
                read_forcing(&dir.forcing(b))?,
                read_streamflow(&dir.streamflow(b))?,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((table.names, records))
}

pub fn load_basin_list(path: &Path) -> Result<Vec<String>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>, DataError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    Ok(std::io::BufWriter::new(fs::File::create(path).map_err(|e| io_err(path, e))?))
}

pub fn write_basin_list(path: &Path, basins: &[String]) -> Result<(), DataError> {
    let mut w = create(path)?;
    for b in basins {
        writeln!(w, "{b}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_attributes(path: &Path, names: &[String], records: &[BasinRecord]) -> Result<(), DataError> {
    let mut w = create(path)?;
    let err = |e: std::io::Error| io_err(path, e);
    write!(w, "basin_id").map_err(err)?;
    for n in names {
        write!(w, ",{n}").map_err(err)?;
    }
    writeln!(w).map_err(err)?;
    for r in records {
        write!(w, "{}", r.basin_id).map_err(err)?;
        for v in &r.attributes {
            write!(w, ",{v}").map_err(err)?;
        }
        writeln!(w).map_err(err)?;
    }
    w.flush().map_err(err)
}

/// Write a record's forcing and streamflow tables under `dir`.
pub fn write_basin(dir: &DataDir, record: &BasinRecord) -> Result<(), DataError> {
    let path = dir.forcing(&record.basin_id);
    let mut w = create(&path)?;
    let err = |e: std::io::Error| io_err(&path, e);
    writeln!(w, "date,{}", FORCING_COLUMNS.join(",")).map_err(err)?;
    for (t, row) in record.forcing.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            record.date(t),
            row[0],
            row[1],
            row[2],
            row[3],
            row[4]
        )
        .map_err(err)?;
    }
    w.flush().map_err(err)?;

    let path = dir.streamflow(&record.basin_id);
    let mut w = create(&path)?;
    let err = |e: std::io::Error| io_err(&path, e);
    writeln!(w, "date,discharge_mm_day").map_err(err)?;
    for (t, q) in record.discharge.iter().enumerate() {
        match q {
            Some(v) => writeln!(w, "{},{v}", record.date(t)),
            None => writeln!(w, "{},{MISSING_DISCHARGE}", record.date(t)),
        }
        .map_err(err)?;
    }
    w.flush().map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(path: &Path, text: &str) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, text).unwrap();
    }

    const FORCING: &str = "date,tmax_c,tmin_c,prcp_mm_day,srad_w_m2,vp_pa\n\
        2000-01-01,10.5,1.0,0.0,150.0,800\n\
        2000-01-02,11.0,2.0,5.5,120.0,810\n\
        2000-01-03,9.0,-1.5,12.0,90.0,790\n";

    fn toy(dir: &Path, streamflow: &str) -> DataDir {
        let d = DataDir::new(dir);
        write(&d.forcing("01013500"), FORCING);
        write(&d.streamflow("01013500"), streamflow);
        write(&d.attributes(), "basin_id,p_mean,area_gages2\n01013500,3.1,2252.7\n02000000,1.0,5.0\n");
        d
    }

    #[test]
    fn loads_three_day_toy_basin() {
        let tmp = tempfile::tempdir().unwrap();
        let d = toy(tmp.path(), "date,discharge_mm_day\n2000-01-01,0.5\n2000-01-02,0.7\n2000-01-03,1.9\n");
        let r = load_basin(&d.forcing("01013500"), &d.attributes(), &d.streamflow("01013500"), "01013500").unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r.start.to_string(), "2000-01-01");
        assert_eq!(r.forcing[1], [11.0, 2.0, 5.5, 120.0, 810.0]);
        assert_eq!(r.forcing[2][1], -1.5);
        assert_eq!(r.attributes, vec![3.1, 2252.7]);
        assert_eq!(r.discharge, vec![Some(0.5), Some(0.7), Some(1.9)]);
        assert_eq!(r.date(2).to_string(), "2000-01-03");
    }

    #[test]
    fn missing_discharge_markers() {
        let tmp = tempfile::tempdir().unwrap();
        let d = toy(tmp.path(), "date,discharge_mm_day\n2000-01-01,0.5\n2000-01-02,-999\n2000-01-03,\n");
        let r = load_basin(&d.forcing("01013500"), &d.attributes(), &d.streamflow("01013500"), "01013500").unwrap();
        assert_eq!(r.discharge, vec![Some(0.5), None, None]);
    }

    #[test]
    fn date_gap_is_named() {
        let tmp = tempfile::tempdir().unwrap();
        let d = toy(tmp.path(), "date,discharge_mm_day\n2000-01-01,0.5\n2000-01-03,1.9\n");
        let err = read_streamflow(&d.streamflow("01013500")).unwrap_err();
        assert!(err.to_string().contains("2000-01-01 and 2000-01-03"), "{err}");
    }

    #[test]
    fn forcing_streamflow_mismatch() {
        let tmp = tempfile::tempdir().unwrap();
        let d = toy(tmp.path(), "date,discharge_mm_day\n2000-01-02,0.5\n2000-01-03,1.9\n2000-01-04,1.0\n");
        let err = load_basin(&d.forcing("01013500"), &d.attributes(), &d.streamflow("01013500"), "01013500").unwrap_err();
        assert!(matches!(err, DataError::DateMismatch { .. }), "{err}");
    }

    #[test]
    fn unknown_basin() {
        let tmp = tempfile::tempdir().unwrap();
        let d = toy(tmp.path(), "date,discharge_mm_day\n2000-01-01,0.5\n2000-01-02,0.7\n2000-01-03,1.9\n");
        let err = load_basin(&d.forcing("01013500"), &d.attributes(), &d.streamflow("01013500"), "99").unwrap_err();
        assert_eq!(err, DataError::UnknownBasin("99".into()));
    }

    #[test]
    fn malformed_row_reports_line() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("f.csv");
        write(&path, "date,tmax_c,tmin_c,prcp_mm_day,srad_w_m2,vp_pa\n2000-01-01,1,2,3,4,5\n2000-01-02,1,x,3,4,5\n");
        match read_forcing(&path).unwrap_err() {
            DataError::Malformed { line, detail, .. } => {
                assert_eq!(line, 3);
                assert!(detail.contains("tmin_c"));
            }
            e => panic!("{e:?}"),
        }
        write(&path, "date,tmax,tmin_c,prcp_mm_day,srad_w_m2,vp_pa\n");
        assert!(matches!(read_forcing(&path), Err(DataError::Header { .. })));
    }

    #[test]
    fn dataset_reports_all_missing_basins() {
        let tmp = tempfile::tempdir().unwrap();
        let d = toy(tmp.path(), "date,discharge_mm_day\n2000-01-01,0.5\n2000-01-02,0.7\n2000-01-03,1.9\n");
        let ids = vec!["01013500".to_string(), "02000000".to_string(), "x".to_string()];
        assert_eq!(
            load_dataset(&d, &ids).unwrap_err(),
            DataError::MissingBasins(vec!["02000000".into(), "x".into()])
        );
        let (names, recs) = load_dataset(&d, &ids[..1]).unwrap();
        assert_eq!(names, vec!["p_mean", "area_gages2"]);
        assert_eq!(recs.len(), 1);
    }

    #[test]
    fn write_then_read_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let d = DataDir::new(tmp.path());
        let rec = BasinRecord {
            basin_id: "0042".into(),
            start: NaiveDate::from_ymd_opt(1999, 12, 30).unwrap(),
            forcing: vec![[0.1, -0.2, 1.0 / 3.0, 4.0, 5.0]; 4],
            attributes: vec![1.5, 2.5e-7],
            discharge: vec![Some(0.25), None, Some(1e-9), Some(3.0)],
        };
        write_basin(&d, &rec).unwrap();
        write_attributes(&d.attributes(), &["a".into(), "b".into()], std::slice::from_ref(&rec)).unwrap();
        write_basin_list(&d.basin_list(), &["0042".into()]).unwrap();
        let ids = load_basin_list(&d.basin_list()).unwrap();
        let (_, back) = load_dataset(&d, &ids).unwrap();
        assert_eq!(back[0], rec);
    }
}
