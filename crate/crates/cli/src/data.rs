//! CSV ingestion for `y,x1,...,xk` data and design selection.

use std::path::Path;

use dpdwald::glm::{FixedDesign, GlmFamily};
use nalgebra::DMatrix;

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub design: FixedDesign,
}

pub fn parse_family(name: &str) -> Result<GlmFamily, CliError> {
    match name.to_ascii_lowercase().as_str() {
        "normal" | "gaussian" => Ok(GlmFamily::NormalIdentity),
        "poisson" => Ok(GlmFamily::PoissonLog),
        other => Err(CliError::Input(format!("--family must be normal or poisson, got {other:?}"))),
    }
}

pub fn read_dataset(path: &Path, family: GlmFamily) -> Result<Dataset, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("{}: header: {e}", path.display())))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(CliError::Input("no observations".into()));
    }
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names[0] != "y" {
        return Err(CliError::Input(format!("column 1 must be named y, found {:?}", names[0])));
    }
    for (j, name) in names.iter().enumerate().skip(1) {
        if *name != format!("x{j}") {
            return Err(CliError::Input(format!("column {} must be named x{j}, found {name:?}", j + 1)));
        }
    }
    let k = names.len() - 1;
    if k == 0 {
        return Err(CliError::Input("data needs at least one covariate column x1".into()));
    }
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 2;
        let record = record.map_err(|e| CliError::Input(format!("row {row}: {e}")))?;
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| CliError::Input(format!("row {row}, column {}: cannot parse {field:?}", c + 1)))?;
            if !v.is_finite() {
                return Err(CliError::Input(format!("row {row}, column {}: non-finite value", c + 1)));
            }
            if c == 0 {
                if family == GlmFamily::PoissonLog && (v < 0.0 || v.fract() != 0.0) {
                    return Err(CliError::Input(format!(
                        "row {row}, column 1: Poisson response must be a non-negative integer, got {v}"
                    )));
                }
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    if y.is_empty() {
        return Err(CliError::Input("no observations".into()));
    }
    let design = FixedDesign::new(DMatrix::from_row_slice(y.len(), k, &x))?;
    Ok(Dataset { y, design })
}

/// `1`..`4` selects a reference design of `n` rows; anything else is read as
/// an `x1,...,xk` CSV path.
pub fn resolve_design(source: &str, n: usize) -> Result<FixedDesign, CliError> {
    if let Ok(number) = source.parse::<u8>() {
        return Ok(FixedDesign::reference(number, n)?);
    }
    let file =
        std::fs::File::open(source).map_err(|e| CliError::Input(format!("cannot open design {source}: {e}")))?;
    Ok(FixedDesign::read_csv(file)?)
}
