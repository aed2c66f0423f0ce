//! Property records, empirical quantiles, chronological splits and the
//! synthetic market generator.
//!
//! Records carry a sale price only when the property sold; unsold rows
//! belong to the assessment roll and are valued but never scored.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyRecord {
    pub id: String,
    pub features: Vec<f64>,
    /// Absent for unsold assessment rows.
    pub sale_price: Option<f64>,
    /// Ordinal period index (months).
    pub sale_date: i64,
    /// Assessed value from the previous year's model.
    pub prior_assessment: f64,
}

impl PropertyRecord {
    pub fn is_sold(&self) -> bool {
        self.sale_price.is_some()
    }
}

/// Checks the record invariants against a declared feature dimension.
pub fn validate_records(records: &[PropertyRecord], feature_dim: usize) -> Result<()> {
    for (row, r) in records.iter().enumerate() {
        if r.features.len() != feature_dim {
            return Err(Error::Row {
                row,
                message: format!(
                    "expected {feature_dim} features, found {}",
                    r.features.len()
                ),
            });
        }
        if !(r.prior_assessment.is_finite() && r.prior_assessment > 0.0) {
            return Err(Error::Row {
                row,
                message: format!("prior_assessment must be positive, got {}", r.prior_assessment),
            });
        }
        if let Some(p) = r.sale_price {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Row {
                    row,
                    message: format!("sale_price must be positive, got {p}"),
                });
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Quantiles

/// Sorted reference population answering `N(x)/m` queries, where `N(x)`
/// counts the values less than or equal to `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileIndex {
    sorted_values: Vec<f64>,
}

impl QuantileIndex {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dataset("cannot build a quantile index from no values".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!("non-finite quantile reference value {bad}")));
        }
        let mut sorted_values = values.to_vec();
        sorted_values.sort_by(f64::total_cmp);
        Ok(Self { sorted_values })
    }

    /// Rebuilds an index from already-sorted values, as read back from disk.
    pub fn from_sorted(sorted_values: Vec<f64>) -> Result<Self> {
        if sorted_values.is_empty() {
            return Err(Error::Dataset("empty quantile index".into()));
        }
        if sorted_values.windows(2).any(|w| w[0] > w[1]) || sorted_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("quantile index values must be finite and ascending".into()));
        }
        Ok(Self { sorted_values })
    }

    pub fn population_size(&self) -> usize {
        self.sorted_values.len()
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted_values
    }

    /// Number of reference values `<= x`.
    pub fn count_le(&self, x: f64) -> usize {
        self.sorted_values.partition_point(|&v| v <= x)
    }

    pub fn quantile_of(&self, x: f64) -> f64 {
        self.count_le(x) as f64 / self.population_size() as f64
    }
}

pub fn build_quantile_index(values: &[f64]) -> Result<QuantileIndex> {
    QuantileIndex::new(values)
}

// ---------------------------------------------------------------------------
// CSV ingestion

/// Column-name mapping between a CSV file and [`PropertyRecord`] fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    #[serde(default = "CsvSchema::default_id")]
    pub id: String,
    pub features: Vec<String>,
    #[serde(default = "CsvSchema::default_sale_price")]
    pub sale_price: String,
    #[serde(default = "CsvSchema::default_sale_date")]
    pub sale_date: String,
    #[serde(default = "CsvSchema::default_prior_assessment")]
    pub prior_assessment: String,
}

impl CsvSchema {
    fn default_id() -> String {
        "id".into()
    }
    fn default_sale_price() -> String {
        "sale_price".into()
    }
    fn default_sale_date() -> String {
        "sale_date".into()
    }
    fn default_prior_assessment() -> String {
        "prior_assessment".into()
    }

    /// Default column names with features `f0..f{dim-1}`.
    pub fn with_feature_dim(dim: usize) -> Self {
        Self {
            id: Self::default_id(),
            features: (0..dim).map(|j| format!("f{j}")).collect(),
            sale_price: Self::default_sale_price(),
            sale_date: Self::default_sale_date(),
            prior_assessment: Self::default_prior_assessment(),
        }
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema {
            column: name.to_string(),
        })
}

fn parse_real(cell: &str, row: usize, column: &str) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| Error::Row {
        row,
        message: format!("column `{column}`: cannot parse `{cell}` as a number"),
    })
}

/// Accepts either an integer period or `YYYY-MM`, mapped to `year * 12 + month - 1`.
fn parse_period(cell: &str, row: usize, column: &str) -> Result<i64> {
    let cell = cell.trim();
    if let Ok(p) = cell.parse::<i64>() {
        return Ok(p);
    }
    let bad = || Error::Row {
        row,
        message: format!("column `{column}`: cannot parse `{cell}` as a period"),
    };
    let (y, m) = cell.split_once('-').ok_or_else(bad)?;
    let y: i64 = y.parse().map_err(|_| bad())?;
    let m: i64 = m.parse().map_err(|_| bad())?;
    if !(1..=12).contains(&m) {
        return Err(bad());
    }
    Ok(y * 12 + m - 1)
}

/// Reads an assessment roll. Row numbers in errors are 1-based data rows
/// (the header is not counted).
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<PropertyRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Vec<PropertyRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Dataset(format!("cannot read header: {e}")))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::Dataset("empty file".into()));
    }

    let id_col = column_index(&headers, &schema.id)?;
    let feature_cols = schema
        .features
        .iter()
        .map(|f| column_index(&headers, f))
        .collect::<Result<Vec<_>>>()?;
    let price_col = column_index(&headers, &schema.sale_price)?;
    let date_col = column_index(&headers, &schema.sale_date)?;
    let prior_col = column_index(&headers, &schema.prior_assessment)?;

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Row {
            row: row_no,
            message: e.to_string(),
        })?;
        let cell = |c: usize| row.get(c).unwrap_or("");

        let features = feature_cols
            .iter()
            .zip(&schema.features)
            .map(|(&c, name)| parse_real(cell(c), row_no, name))
            .collect::<Result<Vec<_>>>()?;
        let price_cell = cell(price_col).trim();
        let sale_price = if price_cell.is_empty() {
            None
        } else {
            Some(parse_real(price_cell, row_no, &schema.sale_price)?)
        };
        let record = PropertyRecord {
            id: cell(id_col).trim().to_string(),
            features,
            sale_price,
            sale_date: parse_period(cell(date_col), row_no, &schema.sale_date)?,
            prior_assessment: parse_real(cell(prior_col), row_no, &schema.prior_assessment)?,
        };
        if !(record.prior_assessment.is_finite() && record.prior_assessment > 0.0) {
            return Err(Error::Row {
                row: row_no,
                message: "prior_assessment must be positive".into(),
            });
        }
        if matches!(record.sale_price, Some(p) if !(p.is_finite() && p > 0.0)) {
            return Err(Error::Row {
                row: row_no,
                message: "sale_price must be positive".into(),
            });
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Dataset("file has no data rows".into()));
    }
    Ok(records)
}

/// Writes records with the given schema; reals use shortest round-trip formatting.
pub fn write_csv<W: std::io::Write>(writer: W, records: &[PropertyRecord], schema: &CsvSchema) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let ser = |e: csv::Error| Error::Serialization(e.to_string());
    let mut header = vec![schema.id.clone()];
    header.extend(schema.features.iter().cloned());
    header.extend([
        schema.sale_price.clone(),
        schema.sale_date.clone(),
        schema.prior_assessment.clone(),
    ]);
    wtr.write_record(&header).map_err(ser)?;
    for r in records {
        let mut row = vec![r.id.clone()];
        row.extend(r.features.iter().map(|v| v.to_string()));
        row.push(r.sale_price.map(|p| p.to_string()).unwrap_or_default());
        row.push(r.sale_date.to_string());
        row.push(r.prior_assessment.to_string());
        wtr.write_record(&row).map_err(ser)?;
    }
    wtr.flush().map_err(|e| Error::Serialization(e.to_string()))
}

pub fn save_csv(path: &Path, records: &[PropertyRecord], schema: &CsvSchema) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(file), records, schema)
}

// ---------------------------------------------------------------------------
// Splits

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default = "SplitSpec::default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "SplitSpec::default_windows")]
    pub validation_windows: usize,
}

impl SplitSpec {
    fn default_train_fraction() -> f64 {
        0.9
    }
    fn default_windows() -> usize {
        3
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Split(format!(
                "train_fraction must lie in (0, 1], got {}",
                self.train_fraction
            )));
        }
        if self.validation_windows == 0 {
            return Err(Error::Split("validation_windows must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: Self::default_train_fraction(),
            validation_windows: Self::default_windows(),
        }
    }
}

/// One rolling-origin fold: fit on every train period before
/// `validation_period`, validate on that period alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub validation_period: i64,
    pub fit: Vec<usize>,
    pub validate: Vec<usize>,
}

/// Indices into the record slice handed to [`make_splits`].
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub folds: Vec<Fold>,
}

/// Chronological train/test split over sold records with expanding-window
/// folds inside the training part. Unsold records are ignored.
pub fn make_splits(records: &[PropertyRecord], spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let mut sold: Vec<usize> = (0..records.len()).filter(|&i| records[i].is_sold()).collect();
    sold.sort_by_key(|&i| (records[i].sale_date, i));

    // 1e-9 absorbs representation error in products like 0.9 * 10.
    let n_train = ((spec.train_fraction * sold.len() as f64) + 1e-9).floor() as usize;
    let n_train = n_train.min(sold.len());
    let test = sold.split_off(n_train);
    let train = sold;

    let periods: Vec<i64> = train
        .iter()
        .map(|&i| records[i].sale_date)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let windows = spec.validation_windows;
    if periods.len() < windows + 1 {
        return Err(Error::Split(format!(
            "{} distinct training periods, need at least {} for {} validation windows",
            periods.len(),
            windows + 1,
            windows
        )));
    }

    let folds = periods[periods.len() - windows..]
        .iter()
        .map(|&period| Fold {
            validation_period: period,
            fit: train.iter().copied().filter(|&i| records[i].sale_date < period).collect(),
            validate: train.iter().copied().filter(|&i| records[i].sale_date == period).collect(),
        })
        .collect();

    Ok(Splits { train, test, folds })
}

// ---------------------------------------------------------------------------
// Synthetic markets

/// Parameters of a seeded synthetic property market.
///
/// Values follow a smooth surface over `feature_dim + hidden_features`
/// covariates; only the first `feature_dim` are exported, so part of the
/// value is invisible to a features-only model while still shaping the prior
/// assessment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticMarketConfig {
    pub num_properties: usize,
    pub feature_dim: usize,
    pub noise_scale: f64,
    pub regressivity_strength: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "SyntheticMarketConfig::default_hidden")]
    pub hidden_features: usize,
    /// Sales are spread uniformly over periods `0..months`.
    #[serde(default = "SyntheticMarketConfig::default_months")]
    pub months: u32,
    /// Share of properties placed on the assessment roll, dated `months`.
    #[serde(default)]
    pub assessment_fraction: f64,
    /// Share of assessment-roll properties that also sold.
    #[serde(default = "SyntheticMarketConfig::default_assessment_sold")]
    pub assessment_sold_fraction: f64,
}

impl SyntheticMarketConfig {
    fn default_hidden() -> usize {
        1
    }
    fn default_months() -> u32 {
        108
    }
    fn default_assessment_sold() -> f64 {
        0.5
    }

    pub fn new(num_properties: usize, feature_dim: usize, noise_scale: f64, regressivity_strength: f64, seed: u64) -> Self {
        Self {
            num_properties,
            feature_dim,
            noise_scale,
            regressivity_strength,
            seed,
            hidden_features: Self::default_hidden(),
            months: Self::default_months(),
            assessment_fraction: 0.0,
            assessment_sold_fraction: Self::default_assessment_sold(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Dataset(m));
        if self.num_properties == 0 {
            return fail("num_properties must be positive".into());
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive".into());
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return fail(format!("noise_scale must be nonnegative, got {}", self.noise_scale));
        }
        if !(0.0..=1.0).contains(&self.regressivity_strength) {
            return fail(format!(
                "regressivity_strength must lie in [0, 1], got {}",
                self.regressivity_strength
            ));
        }
        if self.months == 0 {
            return fail("months must be positive".into());
        }
        for (name, v) in [
            ("assessment_fraction", self.assessment_fraction),
            ("assessment_sold_fraction", self.assessment_sold_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

/// Log of the true value as a function of all covariates in `[0, 1]`.
fn log_value_surface(x: &[f64]) -> f64 {
    let shaped: f64 = x
        .iter()
        .enumerate()
        .map(|(j, &t)| match j % 4 {
            0 => t,
            1 => t * t,
            2 => (PI * t).sin(),
            _ => t.sqrt(),
        })
        .sum();
    let interaction = if x.len() >= 2 { 0.6 * x[0] * x[1] } else { 0.0 };
    10.0 + shaped + interaction
}

pub fn generate_synthetic(config: &SyntheticMarketConfig) -> Result<Vec<PropertyRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dims = config.feature_dim + config.hidden_features;

    struct Draw {
        covariates: Vec<f64>,
        log_true: f64,
        sale_z: f64,
        prior_z: f64,
        on_roll: bool,
        roll_sold: bool,
        month: i64,
    }

    // Every property consumes the same number of draws so the stream stays aligned.
    let draws: Vec<Draw> = (0..config.num_properties)
        .map(|_| {
            let covariates: Vec<f64> = (0..dims).map(|_| rng.gen::<f64>()).collect();
            let sale_z: f64 = rng.sample(StandardNormal);
            let prior_z: f64 = rng.sample(StandardNormal);
            let on_roll = rng.gen::<f64>() < config.assessment_fraction;
            let roll_sold = rng.gen::<f64>() < config.assessment_sold_fraction;
            let month = rng.gen_range(0..config.months) as i64;
            Draw {
                log_true: log_value_surface(&covariates),
                covariates,
                sale_z,
                prior_z,
                on_roll,
                roll_sold,
                month,
            }
        })
        .collect();

    let mean_log = draws.iter().map(|d| d.log_true).sum::<f64>() / draws.len() as f64;
    let mean_value = mean_log.exp();
    let s = config.regressivity_strength;

    let records = draws
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let true_value = d.log_true.exp();
            let sale_price = true_value * (config.noise_scale * d.sale_z).exp();
            let prior_assessment =
                mean_value.powf(s) * true_value.powf(1.0 - s) * (config.noise_scale * d.prior_z).exp();
            let (sale_date, sold) = if d.on_roll {
                (config.months as i64, d.roll_sold)
            } else {
                (d.month, true)
            };
            PropertyRecord {
                id: format!("p{i:06}"),
                features: d.covariates[..config.feature_dim].to_vec(),
                sale_price: sold.then_some(sale_price),
                sale_date,
                prior_assessment,
            }
        })
        .collect();
    Ok(records)
}

/// True values are not stored on records; this recomputes them for tests and
/// diagnostics by replaying the generator.
pub fn synthetic_true_values(config: &SyntheticMarketConfig) -> Result<Vec<f64>> {
    let mut quiet = config.clone();
    quiet.noise_scale = 0.0;
    quiet.regressivity_strength = 0.0;
    quiet.assessment_fraction = 0.0;
    Ok(generate_synthetic(&quiet)?
        .into_iter()
        .map(|r| r.prior_assessment)
        .collect())
}
