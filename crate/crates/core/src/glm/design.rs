//! Fixed design matrices, the four reference designs, CSV I/O and the
//! regularity diagnostics.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DpdError, Result};
use crate::linalg::sym_eigenvalues;

/// Seed used for the fixed-normal design covariates.
pub const DESIGN2_SEED: u64 = 20_170_531;

/// How a design was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignKind {
    /// Two-point design: `(1, a)` for the first half, `(1, b)` for the rest.
    TwoPoint { a: f64, b: f64 },
    /// `(1, x_i)` with `x_i` drawn once from `N(mean, sd²)` using ChaCha8 seeded by `seed`.
    FixedNormal { seed: u64, mean: f64, sd: f64 },
    /// `(1, i)`.
    Divergent,
    /// `(1, 1/i, 1/i²)`.
    Convergent,
    UserSupplied,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedDesign {
    /// `n × k`, one row per observation.
    pub x: DMatrix<f64>,
    pub kind: DesignKind,
}

impl FixedDesign {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(DpdError::InvalidInput("no observations".into()));
        }
        if x.ncols() == 0 {
            return Err(DpdError::InvalidInput("design has no columns".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DpdError::InvalidInput("design contains non-finite entries".into()));
        }
        Ok(Self {
            x,
            kind: DesignKind::UserSupplied,
        })
    }

    pub fn design1(n: usize, a: f64, b: f64) -> Self {
        let x = DMatrix::from_fn(n, 2, |i, j| match j {
            0 => 1.0,
            _ if i < n / 2 => a,
            _ => b,
        });
        Self {
            x,
            kind: DesignKind::TwoPoint { a, b },
        }
    }

    pub fn design2(n: usize, seed: u64, mean: f64, sd: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(mean, sd).expect("finite normal parameters");
        let draws: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { draws[i] });
        Self {
            x,
            kind: DesignKind::FixedNormal { seed, mean, sd },
        }
    }

    pub fn design3(n: usize) -> Self {
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i + 1) as f64 });
        Self {
            x,
            kind: DesignKind::Divergent,
        }
    }

    pub fn design4(n: usize) -> Self {
        let x = DMatrix::from_fn(n, 3, |i, j| ((i + 1) as f64).powi(-(j as i32)));
        Self {
            x,
            kind: DesignKind::Convergent,
        }
    }

    /// Reference design by number (1-4) with the default settings
    /// `a = 1, b = 2` and standard normal covariates.
    pub fn reference(number: u8, n: usize) -> Result<Self> {
        match number {
            1 => Ok(Self::design1(n, 1.0, 2.0)),
            2 => Ok(Self::design2(n, DESIGN2_SEED, 0.0, 1.0)),
            3 => Ok(Self::design3(n)),
            4 => Ok(Self::design4(n)),
            _ => Err(DpdError::InvalidInput(format!("unknown design {number}, expected 1-4"))),
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// `(1/n) XᵀX`, the finite-sample `C_x`.
    pub fn cx(&self) -> DMatrix<f64> {
        self.x.transpose() * &self.x / self.n() as f64
    }

    /// Rows permuted by `perm` (row `i` of the result is row `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let x = DMatrix::from_fn(self.n(), self.k(), |i, j| self.x[(perm[i], j)]);
        Self {
            x,
            kind: self.kind.clone(),
        }
    }

    /// Reads a design from CSV with header `x1,...,xk`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| DpdError::InvalidInput(format!("design CSV header: {e}")))?
            .clone();
        let k = headers.len();
        for (j, h) in headers.iter().enumerate() {
            if h.trim() != format!("x{}", j + 1) {
                return Err(DpdError::InvalidInput(format!(
                    "design CSV column {} must be named x{}, found {h:?}",
                    j + 1,
                    j + 1
                )));
            }
        }
        let mut values = Vec::new();
        let mut rows = 0;
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| DpdError::InvalidInput(format!("design CSV row {}: {e}", r + 2)))?;
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    DpdError::InvalidInput(format!("design CSV row {}, column {}: cannot parse {field:?}", r + 2, c + 1))
                })?;
                values.push(v);
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(DpdError::InvalidInput("no observations".into()));
        }
        Self::new(DMatrix::from_row_slice(rows, k, &values))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| DpdError::InvalidInput(format!("writing design CSV: {e}"));
        wtr.write_record((1..=self.k()).map(|j| format!("x{j}"))).map_err(io)?;
        for i in 0..self.n() {
            wtr.write_record(self.x.row(i).iter().map(|v| format!("{v:?}"))).map_err(io)?;
        }
        wtr.flush().map_err(|e| DpdError::InvalidInput(format!("writing design CSV: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticStatus {
    Pass,
    Warn,
}

/// Finite-sample summaries of the design regularity conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignDiagnostics {
    pub max_abs: f64,
    pub max_abs_pair: f64,
    pub mean_abs_triple: f64,
    pub min_eigenvalue: f64,
    pub cx: DMatrix<f64>,
    pub status: DiagnosticStatus,
    pub notes: Vec<String>,
}

/// Eigenvalue floor below which `C_x` is flagged.
pub const CX_EIGEN_WARN: f64 = 1e-8;

pub fn design_diagnostics(design: &FixedDesign) -> DesignDiagnostics {
    let (n, k) = (design.n(), design.k());
    let x = &design.x;
    let max_abs = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut max_abs_pair = 0.0_f64;
    let mut mean_abs_triple = 0.0_f64;
    for j in 0..k {
        for l in 0..k {
            for i in 0..n {
                max_abs_pair = max_abs_pair.max((x[(i, j)] * x[(i, l)]).abs());
            }
            for h in 0..k {
                let m = (0..n).map(|i| (x[(i, j)] * x[(i, l)] * x[(i, h)]).abs()).sum::<f64>() / n as f64;
                mean_abs_triple = mean_abs_triple.max(m);
            }
        }
    }
    let cx = design.cx();
    let min_eigenvalue = sym_eigenvalues(&cx).first().copied().unwrap_or(0.0);
    let status = if min_eigenvalue < CX_EIGEN_WARN {
        DiagnosticStatus::Warn
    } else {
        DiagnosticStatus::Pass
    };
    let mut notes = Vec::new();
    if status == DiagnosticStatus::Warn {
        notes.push(format!("(1/n)XᵀX is near singular (min eigenvalue {min_eigenvalue:.3e})"));
    }
    match design.kind {
        DesignKind::Divergent => notes.push("entries of (1/n)XᵀX diverge as n grows; finite-sample C_x used".into()),
        DesignKind::Convergent => {
            notes.push("(1/n)XᵀX tends to a singular limit as n grows; finite-sample C_x used".into())
        }
        _ => {}
    }
    DesignDiagnostics {
        max_abs,
        max_abs_pair,
        mean_abs_triple,
        min_eigenvalue,
        cx,
        status,
        notes,
    }
}
