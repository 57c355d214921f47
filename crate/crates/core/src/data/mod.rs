//! Basin records, CSV I/O, standardization and look-back windows.
//!
//! On-disk layout of a data directory:
//!
//! ```text
//! <data_dir>/attributes.csv          basin_id,<attribute columns>
//! <data_dir>/forcing/<basin_id>.csv  date,tmax_c,tmin_c,prcp_mm_day,srad_w_m2,vp_pa
//! <data_dir>/streamflow/<basin_id>.csv  date,discharge_mm_day
//! <data_dir>/basins.txt              one basin_id per line (optional)
//! ```

mod camels;
mod io;
mod normalize;
pub mod synthetic;
mod window;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

pub use camels::{convert_camels, CamelsLayout};
pub use io::{
    load_attributes, load_basin, load_basin_list, load_dataset, read_forcing, read_streamflow,
    write_attributes, write_basin, write_basin_list, AttributeTable, DataDir,
};
pub use normalize::{fit_normalizer, Normalizer};
pub use window::{build_windows, SequenceSample, WindowedDataset};

pub const FORCING_COLUMNS: [&str; 5] = ["tmax_c", "tmin_c", "prcp_mm_day", "srad_w_m2", "vp_pa"];

/// Static catchment attributes, in input order.
pub const ATTRIBUTE_COLUMNS: [&str; 27] = [
    "p_mean",
    "pet_mean",
    "aridity",
    "p_seasonality",
    "frac_snow",
    "high_prec_freq",
    "high_prec_dur",
    "low_prec_freq",
    "low_prec_dur",
    "elev_mean",
    "slope_mean",
    "area_gages2",
    "frac_forest",
    "lai_max",
    "lai_diff",
    "gvf_max",
    "gvf_diff",
    "soil_depth_pelletier",
    "soil_depth_statsgo",
    "soil_porosity",
    "soil_conductivity",
    "max_water_content",
    "sand_frac",
    "silt_frac",
    "clay_frac",
    "carbonate_rocks_frac",
    "geol_permeability",
];

pub const MISSING_DISCHARGE: f64 = -999.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{path}: {detail}")]
    Io { path: PathBuf, detail: String },
    #[error("{path}:{line}: {detail}")]
    Malformed {
        path: PathBuf,
        line: u64,
        detail: String,
    },
    #[error("{path}: expected header {expected:?}, found {found:?}")]
    Header {
        path: PathBuf,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("{path}: date gap between {after} and {before}")]
    DateGap {
        path: PathBuf,
        after: NaiveDate,
        before: NaiveDate,
    },
    #[error("basin {basin}: forcing and streamflow dates differ ({detail})")]
    DateMismatch { basin: String, detail: String },
    #[error("unknown basin {0}")]
    UnknownBasin(String),
    #[error("missing data for basins: {}", .0.join(", "))]
    MissingBasins(Vec<String>),
    #[error("basin {basin}: attribute {name} is missing or non-finite")]
    BadAttribute { basin: String, name: String },
    #[error("feature {0} has zero variance over the training period")]
    ZeroVariance(String),
    #[error("no training rows in period {0}")]
    EmptyTraining(Period),
    #[error("inconsistent records: {0}")]
    Inconsistent(String),
    #[error("invalid period: start {start} after end {end}")]
    InvalidPeriod { start: NaiveDate, end: NaiveDate },
}

/// Inclusive calendar date range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl std::fmt::Display for Period {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid calendar date")
}

impl Period {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, DataError> {
        if start > end {
            return Err(DataError::InvalidPeriod { start, end });
        }
        Ok(Self { start, end })
    }

    /// 1999-10-01 to 2008-09-30.
    pub fn default_train() -> Self {
        Self {
            start: ymd(1999, 10, 1),
            end: ymd(2008, 9, 30),
        }
    }

    /// 1989-10-01 to 1999-09-30.
    pub fn default_test() -> Self {
        Self {
            start: ymd(1989, 10, 1),
            end: ymd(1999, 9, 30),
        }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// One basin's date-aligned daily series and static attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct BasinRecord {
    pub basin_id: String,
    /// First date; day `t` is `start + t` days.
    pub start: NaiveDate,
    /// `[T, 5]` in [`FORCING_COLUMNS`] order.
    pub forcing: Vec<[f64; 5]>,
    pub attributes: Vec<f64>,
    /// mm/day; `None` where the observation is missing.
    pub discharge: Vec<Option<f64>>,
}

impl BasinRecord {
    pub fn len(&self) -> usize {
        self.forcing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forcing.is_empty()
    }

    pub fn date(&self, t: usize) -> NaiveDate {
        self.start + chrono::Days::new(t as u64)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.len()).map(|t| self.date(t))
    }

    /// Index of `date`, if the record covers it.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start).num_days();
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }

    /// Index range of the record that falls inside `period`.
    pub fn period_range(&self, period: &Period) -> std::ops::Range<usize> {
        if self.is_empty() {
            return 0..0;
        }
        let last = self.date(self.len() - 1);
        if period.end < self.start || period.start > last {
            return 0..0;
        }
        let lo = if period.start <= self.start {
            0
        } else {
            (period.start - self.start).num_days() as usize
        };
        let hi = if period.end >= last {
            self.len()
        } else {
            (period.end - self.start).num_days() as usize + 1
        };
        lo..hi
    }

    pub fn input_dim(&self) -> usize {
        FORCING_COLUMNS.len() + self.attributes.len()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.discharge.len() != self.forcing.len() {
            return Err(DataError::Inconsistent(format!(
                "basin {}: {} forcing rows but {} discharge rows",
                self.basin_id,
                self.forcing.len(),
                self.discharge.len()
            )));
        }
        if let Some(i) = self.attributes.iter().position(|v| !v.is_finite()) {
            return Err(DataError::BadAttribute {
                basin: self.basin_id.clone(),
                name: ATTRIBUTE_COLUMNS.get(i).map_or_else(|| format!("#{i}"), |s| s.to_string()),
            });
        }
        if let Some(t) = self.forcing.iter().position(|row| row.iter().any(|v| !v.is_finite())) {
            return Err(DataError::Inconsistent(format!(
                "basin {}: non-finite forcing on {}",
                self.basin_id,
                self.date(t)
            )));
        }
        Ok(())
    }
}

/// Names of the model inputs: forcing columns followed by attribute names.
pub fn input_names(attribute_names: &[String]) -> Vec<String> {
    FORCING_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(attribute_names.iter().cloned())
        .collect()
}
