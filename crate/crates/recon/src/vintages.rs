//! Ingestion and alignment of multi-release ("vintage") data.
//!
//! Statistical agencies publish several successive estimates of the same
//! quarter: an early release followed by revisions. This module parses such
//! data from CSV, validates it, and lays it out as the time-by-release
//! observation matrix consumed by the Kalman filter. Missing entries are
//! first-class: a release that was never published (or arrives late) simply
//! stays masked.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ssm::ReconConfig;

/// Identifier of one of the two measured series (e.g. expenditure-side
/// vs. income-side output growth).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeriesId(u8);

impl SeriesId {
    /// Construct from a 0/1 index.
    pub fn new(index: u8) -> Result<Self> {
        if index > 1 {
            return Err(Error::Invalid(format!(
                "series id must be 0 or 1, got {index}"
            )));
        }
        Ok(SeriesId(index))
    }

    /// Zero-based index of the series.
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for SeriesId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A calendar quarter, ordered chronologically, displayed as `YYYYQn`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quarter {
    year: i32,
    quarter: u8,
}

impl Quarter {
    pub fn new(year: i32, quarter: u8) -> Result<Self> {
        if !(1..=4).contains(&quarter) {
            return Err(Error::Invalid(format!(
                "quarter index must be 1..=4, got {quarter}"
            )));
        }
        Ok(Quarter { year, quarter })
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn quarter(&self) -> u8 {
        self.quarter
    }

    /// Quarters elapsed since 0001Q1; used for contiguous indexing.
    fn ordinal(&self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    /// The quarter `n` steps after `self`.
    pub fn offset(&self, n: i64) -> Quarter {
        let ord = self.ordinal() + n;
        Quarter {
            year: ord.div_euclid(4) as i32,
            quarter: (ord.rem_euclid(4) + 1) as u8,
        }
    }

    /// Number of quarters from `self` to `other` (negative if `other` is
    /// earlier).
    pub fn distance_to(&self, other: &Quarter) -> i64 {
        other.ordinal() - self.ordinal()
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

impl FromStr for Quarter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = || Error::Parse(format!("malformed period `{s}`, expected YYYYQn"));
        let upper = s.trim();
        let qpos = upper.find(['Q', 'q']).ok_or_else(err)?;
        let (ystr, qstr) = upper.split_at(qpos);
        let year: i32 = ystr.parse().map_err(|_| err())?;
        let quarter: u8 = qstr[1..].parse().map_err(|_| err())?;
        Quarter::new(year, quarter).map_err(|_| err())
    }
}

/// A single published estimate: series, period, ordinal release position,
/// and the value as published.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VintageObservation {
    pub series: SeriesId,
    pub period: Quarter,
    /// Ordinal position in the release schedule in use (1 = earliest).
    /// The mapping to calendar publication lags lives in run metadata,
    /// not here: the model cares about ordering only.
    pub release: u32,
    pub value: f64,
}

/// A validated collection of vintage observations covering a contiguous
/// span of quarters. Periods inside the span may be arbitrarily sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct VintagePanel {
    observations: BTreeMap<(SeriesId, Quarter, u32), f64>,
    period_range: (Quarter, Quarter),
    release_labels: [Vec<String>; 2],
}

impl VintagePanel {
    /// Assemble a panel from individual observations. The period range is
    /// inferred as the min..max period seen (including `extra_periods`,
    /// which lets explicit `NA` rows extend the span without contributing
    /// values).
    pub fn from_observations(
        obs: impl IntoIterator<Item = VintageObservation>,
        extra_periods: impl IntoIterator<Item = Quarter>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut lo: Option<Quarter> = None;
        let mut hi: Option<Quarter> = None;
        let mut max_release = [0u32; 2];
        let mut span = |q: Quarter| {
            lo = Some(lo.map_or(q, |v| v.min(q)));
            hi = Some(hi.map_or(q, |v| v.max(q)));
        };
        for o in obs {
            if o.release == 0 {
                return Err(Error::Invalid(format!(
                    "release index must be >= 1 (series {}, period {})",
                    o.series, o.period
                )));
            }
            if !o.value.is_finite() {
                return Err(Error::Invalid(format!(
                    "non-finite value at series {}, period {}, release {}",
                    o.series, o.period, o.release
                )));
            }
            if map
                .insert((o.series, o.period, o.release), o.value)
                .is_some()
            {
                return Err(Error::Invalid(format!(
                    "duplicate observation for series {}, period {}, release {}",
                    o.series, o.period, o.release
                )));
            }
            max_release[o.series.index()] = max_release[o.series.index()].max(o.release);
            span(o.period);
        }
        for q in extra_periods {
            span(q);
        }
        if map.is_empty() {
            return Err(Error::Invalid("empty panel".into()));
        }
        let release_labels = max_release.map(|n| {
            (1..=n).map(|r| format!("release {r}")).collect::<Vec<_>>()
        });
        Ok(VintagePanel {
            observations: map,
            period_range: (lo.unwrap(), hi.unwrap()),
            release_labels,
        })
    }

    /// Inclusive quarter span covered by the panel.
    pub fn period_range(&self) -> (Quarter, Quarter) {
        self.period_range
    }

    /// Number of quarters in the span (all retained, even if unobserved).
    pub fn n_periods(&self) -> usize {
        (self.period_range.0.distance_to(&self.period_range.1) + 1) as usize
    }

    /// Highest release index present for each series.
    pub fn releases_per_series(&self) -> [u32; 2] {
        [
            self.release_labels[0].len() as u32,
            self.release_labels[1].len() as u32,
        ]
    }

    /// Release labels per series (ordinal placeholders unless renamed).
    pub fn release_labels(&self) -> &[Vec<String>; 2] {
        &self.release_labels
    }

    /// Observations in (series, period, release) order.
    pub fn observations(&self) -> impl Iterator<Item = VintageObservation> + '_ {
        self.observations
            .iter()
            .map(|(&(series, period, release), &value)| VintageObservation {
                series,
                period,
                release,
                value,
            })
    }

    /// Number of stored (non-missing) observations.
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Look up one entry.
    pub fn get(&self, series: SeriesId, period: Quarter, release: u32) -> Option<f64> {
        self.observations.get(&(series, period, release)).copied()
    }
}

/// Observations laid out as a `T x 2l` grid: one row per quarter in the
/// panel span, columns ordered series 0 releases `1..l`, then series 1
/// releases `1..l`. Masked cells carry no value.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    values: DMatrix<f64>,
    missing: DMatrix<bool>,
    start: Quarter,
}

impl ObservationMatrix {
    /// Build directly from a dense grid; `NaN` entries become masked.
    pub fn from_dense(values: DMatrix<f64>, start: Quarter) -> Self {
        let missing = DMatrix::from_fn(values.nrows(), values.ncols(), |i, j| {
            !values[(i, j)].is_finite()
        });
        let mut clean = values;
        for v in clean.iter_mut() {
            if !v.is_finite() {
                *v = 0.0;
            }
        }
        ObservationMatrix {
            values: clean,
            missing,
            start,
        }
    }

    pub fn n_periods(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.values.ncols()
    }

    /// Quarter label of row `t`.
    pub fn period(&self, t: usize) -> Quarter {
        self.start.offset(t as i64)
    }

    /// Value at `(t, column)` if observed.
    pub fn get(&self, t: usize, col: usize) -> Option<f64> {
        if self.missing[(t, col)] {
            None
        } else {
            Some(self.values[(t, col)])
        }
    }

    pub fn is_missing(&self, t: usize, col: usize) -> bool {
        self.missing[(t, col)]
    }

    /// Column holding `(series, release)`; releases are 1-based.
    pub fn column_of(&self, series: SeriesId, release: u32, l: usize) -> usize {
        series.index() * l + (release as usize - 1)
    }

    /// Count of observed (unmasked) cells.
    pub fn n_observed(&self) -> usize {
        self.missing.iter().filter(|m| !**m).count()
    }

    /// Mask a whole column (used to study information content of a release).
    pub fn mask_column(&mut self, col: usize) {
        for t in 0..self.missing.nrows() {
            self.missing[(t, col)] = true;
            self.values[(t, col)] = 0.0;
        }
    }

    /// Subtract a constant from every observed cell.
    pub fn subtract(&mut self, offset: f64) {
        for t in 0..self.values.nrows() {
            for j in 0..self.values.ncols() {
                if !self.missing[(t, j)] {
                    self.values[(t, j)] -= offset;
                }
            }
        }
    }

    /// Mean of all observed cells, if any.
    pub fn observed_mean(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for t in 0..self.values.nrows() {
            for j in 0..self.values.ncols() {
                if !self.missing[(t, j)] {
                    sum += self.values[(t, j)];
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// Raw storage (masked cells hold 0.0); mainly for diagnostics export.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

const CSV_HEADER: [&str; 4] = ["series", "period", "release", "value"];

/// Parse the vintage CSV format: header `series,period,release,value`,
/// period as `YYYYQn`, value a decimal or the literal `NA`. Absent rows and
/// `NA` rows both denote missing data; `NA` rows still extend the period
/// span.
pub fn parse_vintage_csv(text: &str) -> Result<VintagePanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("bad CSV header: {e}")))?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != CSV_HEADER {
        return Err(Error::Parse(format!(
            "expected header `series,period,release,value`, got `{}`",
            got.join(",")
        )));
    }

    let mut obs = Vec::new();
    let mut na_periods = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("row {}: {e}", i + 2)))?;
        if record.len() != 4 {
            return Err(Error::Parse(format!(
                "row {}: expected 4 fields, got {}",
                i + 2,
                record.len()
            )));
        }
        let series_raw: i64 = record[0]
            .parse()
            .map_err(|_| Error::Parse(format!("row {}: bad series `{}`", i + 2, &record[0])))?;
        if !(0..=1).contains(&series_raw) {
            return Err(Error::Parse(format!(
                "row {}: series must be 0 or 1, got {series_raw}",
                i + 2
            )));
        }
        let series = SeriesId(series_raw as u8);
        let period: Quarter = record[1]
            .parse()
            .map_err(|e| Error::Parse(format!("row {}: {e}", i + 2)))?;
        let release: i64 = record[2]
            .parse()
            .map_err(|_| Error::Parse(format!("row {}: bad release `{}`", i + 2, &record[2])))?;
        if release < 1 {
            return Err(Error::Parse(format!(
                "row {}: release index must be >= 1, got {release}",
                i + 2
            )));
        }
        let value_field = &record[3];
        if value_field == "NA" {
            na_periods.push(period);
            continue;
        }
        let value: f64 = value_field.parse().map_err(|_| {
            Error::Parse(format!(
                "row {}: value must be a decimal or `NA`, got `{value_field}`",
                i + 2
            ))
        })?;
        obs.push(VintageObservation {
            series,
            period,
            release: release as u32,
            value,
        });
    }

    VintagePanel::from_observations(obs, na_periods).map_err(|e| match e {
        Error::Invalid(msg) if msg == "empty panel" => Error::Parse("empty panel".into()),
        other => other,
    })
}

/// Serialize a panel back to the CSV format, rows sorted by
/// (series, period, release). Missing entries are simply absent.
pub fn serialize_vintage_csv(panel: &VintagePanel) -> String {
    let mut out = String::from("series,period,release,value\n");
    for o in panel.observations() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            o.series, o.period, o.release, o.value
        ));
    }
    out
}

/// Lay a panel out as the observation matrix for `config`: one row per
/// quarter in the panel span, `2l` columns in series-major, release-minor
/// order. Entries absent from the panel are masked; releases beyond the
/// configured `l` are an error.
pub fn to_observation_matrix(panel: &VintagePanel, config: &ReconConfig) -> Result<ObservationMatrix> {
    let l = config.l;
    let max_seen = panel.releases_per_series();
    for (s, &seen) in max_seen.iter().enumerate() {
        if seen as usize > l {
            return Err(Error::Invalid(format!(
                "series {s} has release index {seen} but config allows l = {l}"
            )));
        }
    }
    let t_len = panel.n_periods();
    let (start, _) = panel.period_range();
    let mut values = DMatrix::zeros(t_len, 2 * l);
    let mut missing = DMatrix::from_element(t_len, 2 * l, true);
    for o in panel.observations() {
        let t = start.distance_to(&o.period) as usize;
        let col = o.series.index() * l + (o.release as usize - 1);
        values[(t, col)] = o.value;
        missing[(t, col)] = false;
    }
    Ok(ObservationMatrix {
        values,
        missing,
        start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{CrossMode, ReconConfig};

    fn base_config(l: usize) -> ReconConfig {
        ReconConfig {
            l,
            p: 1,
            center: false,
            spillovers: false,
            cross_news: CrossMode::None,
            cross_noise: CrossMode::None,
        }
    }

    #[test]
    fn quarter_parses_and_displays() {
        let q: Quarter = "2003Q1".parse().unwrap();
        assert_eq!(q.to_string(), "2003Q1");
        assert_eq!(q.offset(4), "2004Q1".parse().unwrap());
        assert_eq!(q.offset(-1), "2002Q4".parse().unwrap());
        assert!("2003".parse::<Quarter>().is_err());
        assert!("2003Q5".parse::<Quarter>().is_err());
        assert!("20x3Q1".parse::<Quarter>().is_err());
    }

    #[test]
    fn header_only_is_empty_panel() {
        let err = parse_vintage_csv("series,period,release,value\n").unwrap_err();
        assert!(err.to_string().contains("empty panel"), "{err}");
    }

    #[test]
    fn minimal_panel_parses() {
        let text = "series,period,release,value\n0,2003Q1,1,2.1\n0,2003Q1,2,2.4\n";
        let panel = parse_vintage_csv(text).unwrap();
        assert_eq!(panel.len(), 2);
        let (lo, hi) = panel.period_range();
        assert_eq!(lo.to_string(), "2003Q1");
        assert_eq!(hi.to_string(), "2003Q1");
    }

    #[test]
    fn series_without_first_release_is_valid() {
        // Mirrors an agency that never publishes an early estimate for the
        // income-side series.
        let text = "series,period,release,value\n\
                    0,2003Q1,1,2.0\n0,2003Q2,1,2.2\n\
                    1,2003Q1,2,1.8\n1,2003Q2,2,2.4\n";
        let panel = parse_vintage_csv(text).unwrap();
        assert_eq!(panel.len(), 4);
        assert_eq!(panel.get(SeriesId::new(1).unwrap(), "2003Q1".parse().unwrap(), 1), None);
    }

    #[test]
    fn duplicates_and_bad_fields_rejected() {
        let dup = "series,period,release,value\n0,2003Q1,1,2.1\n0,2003Q1,1,2.2\n";
        assert!(parse_vintage_csv(dup).is_err());
        let bad_release = "series,period,release,value\n0,2003Q1,0,2.1\n";
        assert!(parse_vintage_csv(bad_release).is_err());
        let bad_value = "series,period,release,value\n0,2003Q1,1,abc\n";
        assert!(parse_vintage_csv(bad_value).is_err());
        let bad_period = "series,period,release,value\n0,2003-1,1,2.1\n";
        assert!(parse_vintage_csv(bad_period).is_err());
        let bad_series = "series,period,release,value\n2,2003Q1,1,2.1\n";
        assert!(parse_vintage_csv(bad_series).is_err());
    }

    #[test]
    fn crlf_and_na_handled() {
        let text = "series,period,release,value\r\n0,2003Q1,1,2.1\r\n0,2003Q4,1,NA\r\n";
        let panel = parse_vintage_csv(text).unwrap();
        assert_eq!(panel.len(), 1);
        // The NA row extends the span without contributing a value.
        assert_eq!(panel.n_periods(), 4);
    }

    #[test]
    fn round_trip_is_order_independent() {
        let a = "series,period,release,value\n0,2003Q2,1,1.5\n0,2003Q1,1,2.1\n1,2003Q1,2,0.3\n";
        let b = "series,period,release,value\n1,2003Q1,2,0.3\n0,2003Q1,1,2.1\n0,2003Q2,1,1.5\n";
        let pa = parse_vintage_csv(a).unwrap();
        let pb = parse_vintage_csv(b).unwrap();
        assert_eq!(serialize_vintage_csv(&pa), serialize_vintage_csv(&pb));
        let reparsed = parse_vintage_csv(&serialize_vintage_csv(&pa)).unwrap();
        assert_eq!(reparsed, pa);
    }

    #[test]
    fn matrix_fully_observed() {
        let text = "series,period,release,value\n\
                    0,2003Q1,1,1.0\n0,2003Q1,2,2.0\n1,2003Q1,1,3.0\n1,2003Q1,2,4.0\n";
        let panel = parse_vintage_csv(text).unwrap();
        let m = to_observation_matrix(&panel, &base_config(2)).unwrap();
        assert_eq!(m.n_periods(), 1);
        assert_eq!(m.n_columns(), 4);
        assert_eq!(m.n_observed(), 4);
        assert_eq!(m.get(0, 0), Some(1.0));
        assert_eq!(m.get(0, 3), Some(4.0));
    }

    #[test]
    fn matrix_masks_absent_release_column() {
        // Series 1 release 1 absent in every period: its column is fully
        // masked and the column index is 2l/2 + 1 - 1 = l.
        let text = "series,period,release,value\n\
                    0,2003Q1,1,1.0\n0,2003Q1,2,2.0\n1,2003Q1,2,4.0\n\
                    0,2003Q2,1,1.1\n0,2003Q2,2,2.1\n1,2003Q2,2,4.1\n";
        let panel = parse_vintage_csv(text).unwrap();
        let m = to_observation_matrix(&panel, &base_config(2)).unwrap();
        for t in 0..2 {
            assert!(m.is_missing(t, 2));
        }
        assert_eq!(m.n_observed(), 6);
    }

    #[test]
    fn matrix_masks_only_q4_rows() {
        // A release published for Q1-Q3 but folded into a later estimate in
        // Q4: only Q4 rows of that column are masked.
        let mut text = String::from("series,period,release,value\n");
        for q in 1..=4 {
            text.push_str(&format!("0,2003Q{q},1,1.0\n"));
            if q != 4 {
                text.push_str(&format!("1,2003Q{q},1,2.0\n"));
            }
            text.push_str(&format!("1,2003Q{q},2,2.5\n"));
        }
        let panel = parse_vintage_csv(&text).unwrap();
        let m = to_observation_matrix(&panel, &base_config(2)).unwrap();
        let col = 2; // series 1, release 1
        assert!(!m.is_missing(0, col));
        assert!(!m.is_missing(2, col));
        assert!(m.is_missing(3, col));
    }

    #[test]
    fn matrix_rejects_config_with_small_l() {
        let text = "series,period,release,value\n0,2003Q1,1,1.0\n0,2003Q1,3,2.0\n";
        let panel = parse_vintage_csv(text).unwrap();
        assert!(to_observation_matrix(&panel, &base_config(2)).is_err());
    }

    #[test]
    fn observed_count_matches_panel() {
        let text = "series,period,release,value\n\
                    0,2003Q1,1,1.0\n0,2003Q3,2,2.0\n1,2004Q1,2,4.0\n";
        let panel = parse_vintage_csv(text).unwrap();
        let m = to_observation_matrix(&panel, &base_config(2)).unwrap();
        // to_observation_matrix never invents values.
        assert_eq!(m.n_observed(), panel.len());
        // All-missing interior quarters are retained as rows.
        assert_eq!(m.n_periods(), 5);
    }
}
