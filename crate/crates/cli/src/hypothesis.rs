//! `--hypothesis` parsing: `h` / `h=v` for a single coefficient (one-based),
//! or `L:l0` with rows of `L` separated by `;`, e.g. `1,0;0,1:1,1`.

use dpdwald::glm::GlmFamily;
use dpdwald::wald::LinearHypothesis;
use dpdwald::ParamVector;
use nalgebra::{DMatrix, DVector};

use crate::error::CliError;
use crate::settings::parse_list;

pub fn parse_hypothesis(spec: &str, k: usize) -> Result<LinearHypothesis, CliError> {
    let spec = spec.trim();
    if let Some((lhs, rhs)) = spec.split_once(':') {
        let rows: Vec<Vec<f64>> = lhs
            .split(';')
            .map(|row| parse_list(row, "hypothesis L"))
            .collect::<Result<_, _>>()?;
        if rows.iter().any(|r| r.len() != k) {
            return Err(CliError::Input(format!("hypothesis: every row of L needs {k} entries")));
        }
        let l = DMatrix::from_row_iterator(rows.len(), k, rows.into_iter().flatten());
        let l0 = DVector::from_vec(parse_list(rhs, "hypothesis l0")?);
        return LinearHypothesis::new(l, l0).map_err(|e| CliError::Input(format!("hypothesis: {e}")));
    }
    let (index, value) = match spec.split_once('=') {
        Some((h, v)) => (h, v.trim().parse::<f64>().map_err(|_| bad(spec))?),
        None => (spec, 0.0),
    };
    let h: usize = index.trim().parse().map_err(|_| bad(spec))?;
    if h == 0 || h > k {
        return Err(CliError::Input(format!("hypothesis: coefficient index {h} out of range 1..={k}")));
    }
    Ok(LinearHypothesis::coordinate(k, h - 1, value)?)
}

fn bad(spec: &str) -> CliError {
    CliError::Input(format!("hypothesis {spec:?}: expected h, h=value or L:l0"))
}

/// A null parameter: `β` closest to all-ones satisfying `Lβ = l₀`, with `φ = 1`
/// appended for the normal family.
pub fn default_null(hyp: &LinearHypothesis, family: GlmFamily) -> Result<ParamVector, CliError> {
    let k = hyp.k();
    let ones = DVector::from_element(k, 1.0);
    let gram = &hyp.l * hyp.l.transpose();
    let gap = &hyp.l0 - &hyp.l * &ones;
    let step = gram
        .cholesky()
        .ok_or_else(|| CliError::Input("hypothesis: L is not of full row rank".into()))?
        .solve(&gap);
    let beta = ones + hyp.l.transpose() * step;
    Ok(with_dispersion(beta, family))
}

fn with_dispersion(beta: DVector<f64>, family: GlmFamily) -> ParamVector {
    if family.has_dispersion() {
        let k = beta.len();
        let mut theta = beta.resize_vertically(k + 1, 0.0);
        theta[k] = 1.0;
        theta
    } else {
        beta
    }
}

/// Human-readable form for reports.
pub fn describe(hyp: &LinearHypothesis) -> String {
    let rows: Vec<String> = hyp
        .l
        .row_iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
        .collect();
    let l0: Vec<String> = hyp.l0.iter().map(|v| v.to_string()).collect();
    format!("{}:{}", rows.join(";"), l0.join(","))
}
