//! File formats shared by the CLI and the generators: responses.csv with a
//! sidecar schema.json declaring level counts, covariates.csv, truth.json,
//! and the flat key-value run configuration.

use crate::error::{Error, Result};
use crate::model::{CategoricalDataset, CovariateMatrix, ItemProbs};
use crate::simulate::GenerativeSpec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Sidecar schema declaring item names and category counts. Declared K_j
/// beats inference from observed maxima.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResponseSchema {
    pub items: Vec<ItemSchema>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ItemSchema {
    pub name: String,
    pub levels: usize,
}

impl ResponseSchema {
    pub fn new(names: &[String], levels: &[usize]) -> Self {
        ResponseSchema {
            items: names
                .iter()
                .zip(levels)
                .map(|(name, &levels)| ItemSchema {
                    name: name.clone(),
                    levels,
                })
                .collect(),
        }
    }

    pub fn levels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.levels).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.items.iter().map(|i| i.name.clone()).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(file)?)
    }
}

/// Write responses.csv: a header row of item names, then 1-based integer
/// codes.
pub fn write_responses(path: &Path, data: &CategoricalDataset, names: &[String]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(names)?;
    for i in 0..data.n_obs() {
        let row: Vec<String> = data
            .row(i)
            .iter()
            .map(|&code| (code + 1).to_string())
            .collect();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Read responses.csv against a declared schema. Rows with missing values
/// are rejected (or dropped when `drop_incomplete` is set); codes outside
/// 1..=K_j abort with the offending row and column.
pub fn read_responses(
    path: &Path,
    schema: &ResponseSchema,
    drop_incomplete: bool,
) -> Result<(CategoricalDataset, Vec<usize>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() != schema.items.len() {
        return Err(Error::Ingestion {
            row: 1,
            column: "header".into(),
            message: format!(
                "{} columns in responses.csv but schema declares {} items",
                headers.len(),
                schema.items.len()
            ),
        });
    }
    let levels = schema.levels();
    let mut rows: Vec<Vec<u16>> = Vec::new();
    let mut dropped: Vec<usize> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let row_number = idx + 2; // 1-based, after the header
        if record.len() != schema.items.len() {
            return Err(Error::Ingestion {
                row: row_number,
                column: "row".into(),
                message: format!(
                    "{} fields, expected {}",
                    record.len(),
                    schema.items.len()
                ),
            });
        }
        let mut row = Vec::with_capacity(schema.items.len());
        let mut incomplete = false;
        for (j, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() || field.eq_ignore_ascii_case("na") {
                incomplete = true;
                break;
            }
            let code: u16 = field.parse().map_err(|_| Error::Ingestion {
                row: row_number,
                column: schema.items[j].name.clone(),
                message: format!("non-integer code '{field}'"),
            })?;
            if code == 0 || code as usize > levels[j] {
                return Err(Error::Ingestion {
                    row: row_number,
                    column: schema.items[j].name.clone(),
                    message: format!("code {code} outside 1..={}", levels[j]),
                });
            }
            row.push(code);
        }
        if incomplete {
            dropped.push(row_number);
            continue;
        }
        rows.push(row);
    }
    if !dropped.is_empty() && !drop_incomplete {
        return Err(Error::Ingestion {
            row: dropped[0],
            column: "row".into(),
            message: format!(
                "{} rows with missing responses (first at row {}); \
                 pass --drop-incomplete to drop them",
                dropped.len(),
                dropped[0]
            ),
        });
    }
    let data = CategoricalDataset::from_rows(&rows, levels)?;
    Ok((data, dropped))
}

/// Write covariates.csv: a header row, then 64-bit decimal floats. The
/// intercept column is added internally at read time and never stored.
pub fn write_covariates(path: &Path, covariates: &CovariateMatrix, names: &[String]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(names)?;
    for i in 0..covariates.n_obs() {
        let row: Vec<String> = covariates.row(i)[1..]
            .iter()
            .map(|x| format!("{x:?}"))
            .collect();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_covariates(path: &Path, skip_rows: &[usize]) -> Result<CovariateMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row_number = idx + 2;
        if skip_rows.contains(&row_number) {
            continue;
        }
        let record = record?;
        let mut row = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| Error::Ingestion {
                row: row_number,
                column: format!("covariate {}", j + 1),
                message: format!("non-numeric value '{field}'"),
            })?;
            row.push(value);
        }
        rows.push(row);
    }
    CovariateMatrix::from_predictor_rows(&rows)
}

/// Ground truth emitted alongside simulated data: theta, beta, and labels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Truth {
    /// theta[class][item][category].
    pub theta: Vec<Vec<Vec<f64>>>,
    /// beta[coefficient][class], baseline column zero.
    pub beta: Vec<Vec<f64>>,
    /// 1-based class label per observation.
    pub labels: Vec<usize>,
}

impl Truth {
    pub fn from_spec(spec: &GenerativeSpec, labels: &[usize]) -> Self {
        let g_total = spec.n_classes();
        let theta = (0..g_total)
            .map(|g| {
                (0..spec.theta.levels.len())
                    .map(|j| spec.theta.item_row(g, j).to_vec())
                    .collect()
            })
            .collect();
        let beta = (0..spec.beta.nrows())
            .map(|r| (0..g_total).map(|g| spec.beta[(r, g)]).collect())
            .collect();
        Truth {
            theta,
            beta,
            labels: labels.iter().map(|&z| z + 1).collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(file)?)
    }

    pub fn labels_zero_based(&self) -> Vec<usize> {
        self.labels.iter().map(|&z| z - 1).collect()
    }

    pub fn beta_matrix(&self) -> DMatrix<f64> {
        let rows = self.beta.len();
        let cols = self.beta.first().map_or(0, Vec::len);
        DMatrix::from_fn(rows, cols, |r, c| self.beta[r][c])
    }

    pub fn theta_probs(&self) -> Result<ItemProbs> {
        ItemProbs::from_rows(&self.theta)
    }
}

/// Flat key-value run configuration (`key = value` lines, `#` comments).
///
/// Documented keys: model, mode, g, n_iter, burn_in, thin, seed, alpha,
/// lambda, coef_prior_var, coef_prior_var_overrides, item_prior, pred_prior.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfigFile {
    pub values: BTreeMap<String, String>,
}

impl RunConfigFile {
    pub const KNOWN_KEYS: [&'static str; 13] = [
        "model",
        "mode",
        "g",
        "n_iter",
        "burn_in",
        "thin",
        "seed",
        "alpha",
        "lambda",
        "coef_prior_var",
        "coef_prior_var_overrides",
        "item_prior",
        "pred_prior",
    ];

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "config line {} is not 'key = value': '{raw}'",
                    line_no + 1
                ))
            })?;
            let key = key.trim().to_string();
            if !Self::KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "unknown config key '{key}' at line {}",
                    line_no + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(RunConfigFile { values })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("config key '{key}' has invalid value '{raw}'"))
            }),
        }
    }

    /// Per-coefficient prior variance overrides, e.g. for separation
    /// regularisation: comma-separated `class:coef:variance` triples with
    /// 1-based class (non-baseline) and 0-based coefficient (0 = intercept).
    pub fn coef_variance_overrides(&self) -> Result<Vec<(usize, usize, f64)>> {
        let raw = match self.values.get("coef_prior_var_overrides") {
            None => return Ok(Vec::new()),
            Some(raw) => raw,
        };
        let mut out = Vec::new();
        for part in raw.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let fields: Vec<&str> = part.split(':').collect();
            if fields.len() != 3 {
                return Err(Error::Config(format!(
                    "override '{part}' is not class:coef:variance"
                )));
            }
            let class: usize = fields[0].parse().map_err(|_| {
                Error::Config(format!("override '{part}' has a bad class index"))
            })?;
            let coef: usize = fields[1].parse().map_err(|_| {
                Error::Config(format!("override '{part}' has a bad coefficient index"))
            })?;
            let variance: f64 = fields[2].parse().map_err(|_| {
                Error::Config(format!("override '{part}' has a bad variance"))
            })?;
            if class == 0 {
                return Err(Error::Config(
                    "override class indices are 1-based non-baseline classes".into(),
                ));
            }
            if !(variance > 0.0) {
                return Err(Error::Config(format!(
                    "override variance must be positive, got {variance}"
                )));
            }
            out.push((class - 1, coef, variance));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{generate, sim1_spec};
    use tempfile::tempdir;

    #[test]
    fn responses_round_trip_is_identity() {
        let dir = tempdir().unwrap();
        let spec = sim1_spec(50);
        let (data, _, _) = generate(&spec, 11).unwrap();
        let names: Vec<String> = (1..=8).map(|j| format!("item{j}")).collect();
        let schema = ResponseSchema::new(&names, data.levels());
        let path = dir.path().join("responses.csv");
        write_responses(&path, &data, &names).unwrap();
        let (back, dropped) = read_responses(&path, &schema, false).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(back.n_obs(), data.n_obs());
        for i in 0..data.n_obs() {
            assert_eq!(back.row(i), data.row(i));
        }
    }

    #[test]
    fn covariates_round_trip_is_identity() {
        let dir = tempdir().unwrap();
        let spec = sim1_spec(30);
        let (_, covs, _) = generate(&spec, 12).unwrap();
        let names: Vec<String> = (1..=6).map(|l| format!("x{l}")).collect();
        let path = dir.path().join("covariates.csv");
        write_covariates(&path, &covs, &names).unwrap();
        let back = read_covariates(&path, &[]).unwrap();
        assert_eq!(back.n_obs(), covs.n_obs());
        for i in 0..covs.n_obs() {
            for (a, b) in back.row(i).iter().zip(covs.row(i)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn bad_codes_report_row_and_column() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("responses.csv");
        std::fs::write(&path, "a,b\n1,2\n3,1\n").unwrap();
        let schema = ResponseSchema::new(
            &["a".to_string(), "b".to_string()],
            &[2, 2],
        );
        match read_responses(&path, &schema, false) {
            Err(Error::Ingestion { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "a");
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn missing_values_rejected_unless_dropped() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("responses.csv");
        std::fs::write(&path, "a,b\n1,2\n,1\n2,2\n").unwrap();
        let schema = ResponseSchema::new(
            &["a".to_string(), "b".to_string()],
            &[2, 2],
        );
        assert!(read_responses(&path, &schema, false).is_err());
        let (data, dropped) = read_responses(&path, &schema, true).unwrap();
        assert_eq!(data.n_obs(), 2);
        assert_eq!(dropped, vec![3]);
    }

    #[test]
    fn truth_round_trip() {
        let dir = tempdir().unwrap();
        let spec = sim1_spec(10);
        let (_, _, labels) = generate(&spec, 13).unwrap();
        let truth = Truth::from_spec(&spec, &labels);
        let path = dir.path().join("truth.json");
        truth.write(&path).unwrap();
        let back = Truth::read(&path).unwrap();
        assert_eq!(back.labels, truth.labels);
        assert_eq!(back.beta, truth.beta);
        assert_eq!(back.theta, truth.theta);
        assert_eq!(back.labels_zero_based(), labels);
    }

    #[test]
    fn config_parsing_and_overrides() {
        let cfg = RunConfigFile::parse(
            "# comment\nmodel = lcr\nmode = both\ng = 2\nn_iter = 500\n\
             coef_prior_var_overrides = 1:3:25, 2:0:5.5\n",
        )
        .unwrap();
        assert_eq!(cfg.get("model"), Some("lcr"));
        assert_eq!(cfg.get_parsed::<usize>("g").unwrap(), Some(2));
        assert_eq!(
            cfg.coef_variance_overrides().unwrap(),
            vec![(0, 3, 25.0), (1, 0, 5.5)]
        );
        assert!(RunConfigFile::parse("bogus_key = 1").is_err());
        assert!(RunConfigFile::parse("model: lcr").is_err());
    }
}
