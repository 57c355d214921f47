use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::attribution::BasinAttribution;
use super::metrics::{metric_suite, MetricReport, Metrics};
use super::signatures::{signatures, SignatureSet};
use super::EvalError;
use crate::data::{read_streamflow, BasinRecord, DataDir, Period};
use crate::train::PredictionRow;

/// One member's simulation of one basin aligned with observations.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSeries {
    pub basin_id: String,
    pub member: u64,
    pub dates: Vec<NaiveDate>,
    /// `NaN` where discharge is missing.
    pub obs: Vec<f64>,
    pub sim: Vec<f64>,
}

/// Observed daily discharge of one basin.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedSeries {
    pub basin_id: String,
    pub start: NaiveDate,
    pub discharge: Vec<Option<f64>>,
}

impl ObservedSeries {
    pub fn from_record(r: &BasinRecord) -> Self {
        Self {
            basin_id: r.basin_id.clone(),
            start: r.start,
            discharge: r.discharge.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.discharge.len()
    }

    pub fn is_empty(&self) -> bool {
        self.discharge.is_empty()
    }

    pub fn date(&self, t: usize) -> NaiveDate {
        self.start + chrono::Days::new(t as u64)
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start).num_days();
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }

    /// Observations within `period`.
    pub fn within(&self, period: &Period) -> &[Option<f64>] {
        let lo = (0..self.len()).find(|&t| self.date(t) >= period.start).unwrap_or(self.len());
        let hi = (lo..self.len()).find(|&t| self.date(t) > period.end).unwrap_or(self.len());
        &self.discharge[lo..hi]
    }
}

/// Read `streamflow/<basin>.csv` for each basin under `dir`.
pub fn load_observations(dir: &DataDir, basins: &[String]) -> Result<Vec<ObservedSeries>, EvalError> {
    let missing: Vec<&str> = basins.iter().filter(|b| !dir.streamflow(b).is_file()).map(String::as_str).collect();
    if let Some(b) = missing.first() {
        return Err(EvalError::MissingBasin {
            basin: b.to_string(),
            table: format!("observations in {}", dir.root.display()),
        });
    }
    basins
        .iter()
        .map(|b| {
            let path = dir.streamflow(b);
            let (start, discharge) = read_streamflow(&path).map_err(|e| io_err(&path, e))?;
            Ok(ObservedSeries {
                basin_id: b.clone(),
                start,
                discharge,
            })
        })
        .collect()
}

/// Group predictions by basin and member and look up the observation for
/// every predicted date. Dates outside the observed record are an error.
pub fn pair_with_observations(rows: &[PredictionRow], records: &[ObservedSeries]) -> Result<Vec<PairedSeries>, EvalError> {
    let by_id: HashMap<&str, &ObservedSeries> = records.iter().map(|r| (r.basin_id.as_str(), r)).collect();
    let mut groups: BTreeMap<(&str, u64), Vec<&PredictionRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((&r.basin_id, r.member)).or_default().push(r);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((basin, member), mut rows) in groups {
        let rec = by_id.get(basin).ok_or_else(|| EvalError::MissingBasin {
            basin: basin.to_string(),
            table: "observations".into(),
        })?;
        rows.sort_by_key(|r| r.date);
        let (first, last) = (rows[0].date, rows[rows.len() - 1].date);
        let (obs_start, obs_end) = (rec.start, rec.date(rec.len().saturating_sub(1)));
        if rec.is_empty() || first < obs_start || last > obs_end {
            return Err(EvalError::DateMisalignment {
                basin: basin.to_string(),
                detail: format!("predictions span {first}..{last} but observations cover {obs_start}..{obs_end}"),
            });
        }
        if let Some(w) = rows.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(EvalError::DateMisalignment {
                basin: basin.to_string(),
                detail: format!("member {member} predicts {} twice", w[0].date),
            });
        }
        let obs = rows
            .iter()
            .map(|r| {
                let t = rec.index_of(r.date).expect("date within record");
                rec.discharge[t].unwrap_or(f64::NAN)
            })
            .collect();
        out.push(PairedSeries {
            basin_id: basin.to_string(),
            member,
            dates: rows.iter().map(|r| r.date).collect(),
            obs,
            sim: rows.iter().map(|r| r.q_sim).collect(),
        });
    }
    Ok(out)
}

/// Metrics for every (basin, member) in `rows`, sorted by basin then member.
pub fn evaluate(rows: &[PredictionRow], records: &[ObservedSeries]) -> Result<Vec<MetricReport>, EvalError> {
    pair_with_observations(rows, records)?
        .into_iter()
        .map(|p| {
            metric_suite(&p.obs, &p.sim)
                .map(|m| MetricReport::new(p.basin_id.clone(), p.member, m))
                .map_err(|e| EvalError::InBasin {
                    basin: p.basin_id.clone(),
                    member: p.member,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Signatures of each basin's observed discharge within `period`.
pub fn record_signatures(records: &[ObservedSeries], period: &Period) -> Result<BTreeMap<String, SignatureSet>, EvalError> {
    records
        .iter()
        .map(|r| {
            let q = r.within(period);
            signatures(q)
                .map(|s| (r.basin_id.clone(), s))
                .map_err(|e| EvalError::InBasin {
                    basin: r.basin_id.clone(),
                    member: 0,
                    source: Box::new(e),
                })
        })
        .collect()
}

fn io_err(path: &Path, e: impl ToString) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

#[derive(Serialize, Deserialize)]
struct MetricRow {
    basin_id: String,
    member: u64,
    nse: f64,
    kge: f64,
    pearson_r: f64,
    fhv: f64,
    flv: f64,
    pbias: f64,
}

/// `basin_id,member,nse,kge,pearson_r,fhv,flv,pbias`; undefined values are
/// written as `NaN`.
pub fn write_metrics(path: &Path, reports: &[MetricReport]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in reports {
        let m = &r.metrics;
        w.serialize(MetricRow {
            basin_id: r.basin_id.clone(),
            member: r.member,
            nse: m.nse,
            kge: m.kge,
            pearson_r: m.pearson_r,
            fhv: m.fhv,
            flv: m.flv,
            pbias: m.pbias,
        })
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricReport>, EvalError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize::<MetricRow>()
        .map(|row| {
            let row = row.map_err(|e| io_err(path, e))?;
            Ok(MetricReport::new(
                row.basin_id,
                row.member,
                Metrics::from_values([row.nse, row.kge, row.pearson_r, row.fhv, row.flv, row.pbias]),
            ))
        })
        .collect()
}

#[derive(Serialize)]
struct SkillRow<'a> {
    basin_id: &'a str,
    group: u8,
    nse_skill: f64,
    kge_skill: f64,
    fhv_improvement: f64,
    pearson_r_improvement: f64,
    pbias_improvement: f64,
}

pub fn write_skill_scores(path: &Path, basins: &[BasinAttribution]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for b in basins {
        w.serialize(SkillRow {
            basin_id: &b.basin_id,
            group: b.group,
            nse_skill: b.nse_skill,
            kge_skill: b.kge_skill,
            fhv_improvement: b.improvements.fhv,
            pearson_r_improvement: b.improvements.pearson_r,
            pbias_improvement: b.improvements.pbias,
        })
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_signatures(path: &Path, sigs: &BTreeMap<String, SignatureSet>) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(std::iter::once("basin_id").chain(SignatureSet::NAMES))
        .map_err(|e| io_err(path, e))?;
    for (b, s) in sigs {
        let fields = std::iter::once(b.clone()).chain(s.values().into_iter().map(|v| v.to_string()));
        w.write_record(fields).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_signatures(path: &Path) -> Result<BTreeMap<String, SignatureSet>, EvalError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = r.headers().map_err(|e| io_err(path, e))?.clone();
    let expected: Vec<&str> = std::iter::once("basin_id").chain(SignatureSet::NAMES).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(io_err(path, format!("expected header {}", expected.join(","))));
    }
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let v: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|e| io_err(path, format!("{f}: {e}"))))
            .collect::<Result<_, _>>()?;
        out.insert(
            rec[0].to_string(),
            SignatureSet {
                q_mean: v[0],
                q5: v[1],
                q95: v[2],
                high_q_freq: v[3],
                high_q_dur: v[4],
                low_q_freq: v[5],
                low_q_dur: v[6],
                zero_q_freq: v[7],
            },
        );
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EvalError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}
