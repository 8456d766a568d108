use std::io::Write;
use std::path::{Path, PathBuf};

use dpdwald::glm::{glm_sandwich, FixedDesign, GlmFamily, GlmModel};
use dpdwald::mc::{Contamination, ContaminationPoint};
use dpdwald::robustness::{default_grid, ContaminationSpec, IfProfile, InfluenceContext};
use dpdwald::tables::{normal_power_table, poisson_reference_table, NORMAL_DX, NORMAL_K};
use dpdwald::wald::{wald_composite, CompositeHypothesis, LinearHypothesis};
use dpdwald::{fit_mdpde, run_mc, IntegralEngine, McConfig, McTest, ModelFamily, ParamVector, Scenario, SolverOptions, Support};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{parse_family, read_dataset, resolve_design};
use crate::error::CliError;
use crate::hypothesis::{default_null, describe, parse_hypothesis};
use crate::settings::{parse_list, Settings};
use crate::Common;

const SCHEMA: u32 = 1;
const COMMON_KEYS: [&str; 4] = ["family", "tau", "alpha", "out"];

fn keys(extra: &[&'static str]) -> Vec<&'static str> {
    COMMON_KEYS.iter().copied().chain(extra.iter().copied()).collect()
}

fn settings(common: &Common, extra: &[&'static str], flags: Vec<(&str, Option<String>)>) -> Result<Settings, CliError> {
    let s = Settings::load(common.config.as_deref(), &keys(extra), flags)?;
    if let Some(out) = s.path("out") {
        check_out(&out)?;
    }
    Ok(s)
}

fn check_out(out: &Path) -> Result<(), CliError> {
    match out.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(CliError::Input(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn check_in(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("input file {} not found", path.display())))
    }
}

fn emit(out: Option<PathBuf>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(&path, bytes)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: Option<PathBuf>, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    text.push('\n');
    emit(out, text.as_bytes())
}

fn family(s: &Settings) -> Result<GlmFamily, CliError> {
    parse_family(s.str("family").unwrap_or("normal"))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitEntry {
    pub tau: f64,
    pub theta: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub fallback_steps: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitOutput {
    pub schema: u32,
    pub command: String,
    pub family: String,
    pub n: usize,
    pub k: usize,
    pub fits: Vec<FitEntry>,
}

fn fit_all(model: &GlmModel, y: &[f64], taus: &[f64]) -> Result<Vec<FitEntry>, CliError> {
    let opts = SolverOptions::default();
    taus.iter()
        .map(|&tau| {
            let fit = fit_mdpde(model, y, tau, None, &opts)?;
            let cov = glm_sandwich(model, &fit.theta, tau, &opts.engine)?;
            Ok(FitEntry {
                tau,
                theta: fit.theta.as_slice().to_vec(),
                std_errors: cov.standard_errors(y.len()),
                iterations: fit.iterations,
                grad_norm: fit.grad_norm,
                fallback_steps: fit.fallback_steps,
            })
        })
        .collect()
}

pub fn fit(common: &Common, flags: Vec<(&str, Option<String>)>) -> Result<(), CliError> {
    let s = settings(common, &["data"], flags)?;
    let path = PathBuf::from(s.required("data")?);
    check_in(&path)?;
    let fam = family(&s)?;
    let taus = s.tau_grid()?;
    let data = read_dataset(&path, fam)?;
    let model = GlmModel::new(fam, data.design.clone());
    let fits = fit_all(&model, &data.y, &taus)?;
    emit_json(
        s.path("out"),
        &FitOutput {
            schema: SCHEMA,
            command: "fit".into(),
            family: fam.name().into(),
            n: data.y.len(),
            k: data.design.k(),
            fits,
        },
    )
}

#[derive(Debug, Serialize)]
struct TestEntry {
    tau: f64,
    theta: Vec<f64>,
    statistic: f64,
    df: usize,
    p_value: f64,
    reject: bool,
    alpha: f64,
    critical_value: f64,
}

#[derive(Debug, Serialize)]
struct TestOutput {
    schema: u32,
    command: &'static str,
    family: &'static str,
    n: usize,
    hypothesis: String,
    reports: Vec<TestEntry>,
}

pub fn test(common: &Common, flags: Vec<(&str, Option<String>)>) -> Result<(), CliError> {
    let s = settings(common, &["data", "fit", "hypothesis"], flags)?;
    let path = PathBuf::from(s.required("data")?);
    check_in(&path)?;
    let fit_path = s.path("fit");
    if let Some(p) = &fit_path {
        check_in(p)?;
    }
    let fam = family(&s)?;
    let alpha = s.alpha()?;
    let data = read_dataset(&path, fam)?;
    let k = data.design.k();
    let hyp = parse_hypothesis(s.required("hypothesis")?, k)?;
    let model = GlmModel::new(fam, data.design.clone());
    let composite = hyp.to_composite(model.dim())?;
    let n = data.y.len();

    let estimates: Vec<(f64, Vec<f64>)> = match fit_path {
        Some(p) => {
            let text = std::fs::read_to_string(&p)?;
            let fit: FitOutput = serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: not a fit output: {e}", p.display())))?;
            if fit.schema != SCHEMA || fit.family != fam.name() || fit.n != n || fit.k != k {
                return Err(CliError::Input(format!(
                    "{} does not match the data (schema {}, family {}, n {}, k {})",
                    p.display(),
                    fit.schema,
                    fit.family,
                    fit.n,
                    fit.k
                )));
            }
            if s.str("tau").is_some() {
                let want = s.tau_grid()?;
                let have: Vec<f64> = fit.fits.iter().map(|f| f.tau).collect();
                if want != have {
                    return Err(CliError::Input(format!("--tau {want:?} differs from the fit file {have:?}")));
                }
            }
            fit.fits.into_iter().map(|f| (f.tau, f.theta)).collect()
        }
        None => fit_all(&model, &data.y, &s.tau_grid()?)?
            .into_iter()
            .map(|f| (f.tau, f.theta))
            .collect(),
    };

    let engine = IntegralEngine::default();
    let mut reports = Vec::new();
    for (tau, theta) in estimates {
        let theta = DVector::from_vec(theta);
        if theta.len() != model.dim() {
            return Err(CliError::Input(format!("estimate for tau {tau} has length {}", theta.len())));
        }
        let cov = glm_sandwich(&model, &theta, tau, &engine)?;
        let r = wald_composite(&theta, &composite, &cov, n, alpha)?;
        reports.push(TestEntry {
            tau,
            theta: theta.as_slice().to_vec(),
            statistic: r.statistic,
            df: r.df,
            p_value: r.p_value,
            reject: r.reject,
            alpha: r.alpha,
            critical_value: r.critical_value,
        });
    }
    emit_json(
        s.path("out"),
        &TestOutput {
            schema: SCHEMA,
            command: "test",
            family: fam.name(),
            n,
            hypothesis: describe(&hyp),
            reports,
        },
    )
}

pub fn power_table(common: &Common, flags: Vec<(&str, Option<String>)>) -> Result<(), CliError> {
    let s = settings(common, &["design", "phi0"], flags)?;
    let fam = family(&s)?;
    let taus = s.tau_grid()?;
    let alpha = s.alpha()?;
    let cells = match fam {
        GlmFamily::NormalIdentity => {
            let phi0 = s.parse("phi0", 1.0)?;
            normal_power_table(&NORMAL_K, &NORMAL_DX, &taus, phi0, alpha)?
        }
        GlmFamily::PoissonLog => {
            let designs: Vec<u8> = match s.str("design").unwrap_or("all") {
                "all" => vec![1, 2, 3, 4],
                d => vec![d
                    .parse()
                    .map_err(|_| CliError::Input(format!("--design must be 1-4 or all, got {d:?}")))?],
            };
            let engine = IntegralEngine::default();
            let mut cells = Vec::new();
            for d in designs {
                cells.extend(poisson_reference_table(d, &taus, alpha, &engine)?);
            }
            cells
        }
    };
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for cell in &cells {
        wtr.serialize(cell).map_err(|e| CliError::Input(e.to_string()))?;
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    emit(s.path("out"), &bytes)
}

pub enum ProfileKind {
    If2,
    Pif,
}

/// The tested hypothesis and its null parameter for profile and MC commands.
fn null_setup(
    s: &Settings,
    fam: GlmFamily,
    k: usize,
) -> Result<(LinearHypothesis, ParamVector, bool), CliError> {
    let explicit = s.str("hypothesis").is_some();
    let hyp = match s.str("hypothesis") {
        Some(spec) => parse_hypothesis(spec, k)?,
        None => match fam {
            GlmFamily::NormalIdentity => LinearHypothesis::all_coefficients(&DVector::from_element(k, 1.0)),
            GlmFamily::PoissonLog => LinearHypothesis::coordinate(k, k - 1, 0.0)?,
        },
    };
    let theta0 = match s.str("theta0") {
        Some(list) => DVector::from_vec(parse_list(list, "theta0")?),
        None => default_null(&hyp, fam)?,
    };
    let p = if fam.has_dispersion() { k + 1 } else { k };
    if theta0.len() != p {
        return Err(CliError::Input(format!("theta0 needs {p} entries, got {}", theta0.len())));
    }
    let beta = theta0.rows(0, k).into_owned();
    let gap = (&hyp.l * beta - &hyp.l0).amax();
    if gap > 1e-10 {
        return Err(CliError::Input(format!("theta0 violates the hypothesis by {gap:.3e}")));
    }
    Ok((hyp, theta0, explicit))
}

fn shift_vector(hyp: &CompositeHypothesis, theta0: &ParamVector, size: f64) -> ParamVector {
    hyp.jacobian(theta0.as_slice()) * DVector::from_element(hyp.r(), size)
}

pub fn profile(common: &Common, flags: Vec<(&str, Option<String>)>, kind: ProfileKind) -> Result<(), CliError> {
    let extra: &[&str] = match kind {
        ProfileKind::If2 => &["design", "n", "direction", "hypothesis", "theta0"],
        ProfileKind::Pif => &["design", "n", "direction", "hypothesis", "theta0", "shift"],
    };
    let s = settings(common, extra, flags)?;
    let fam = family(&s)?;
    let taus = s.tau_grid()?;
    let alpha = s.alpha()?;
    let n = s.parse("n", 50usize)?;
    let design = resolve_design(s.str("design").unwrap_or("1"), n)?;
    let n = design.n();
    let (hyp, theta0, _) = null_setup(&s, fam, design.k())?;
    let model = GlmModel::new(fam, design);
    let composite = hyp.to_composite(model.dim())?;
    let direction = match s.str("direction").unwrap_or("1") {
        "all" => None,
        d => {
            let i: usize = d
                .parse()
                .map_err(|_| CliError::Input(format!("--direction must be an index or all, got {d:?}")))?;
            if i == 0 || i > n {
                return Err(CliError::Input(format!("--direction {i} out of range 1..={n}")));
            }
            Some(i - 1)
        }
    };
    let th = theta0.as_slice();
    let phi = model.phi(th);
    let means: Vec<f64> = (0..n).map(|i| fam.mean(model.eta(i, th))).collect();
    let (centre, sd) = match direction {
        Some(i) => (means[i], fam.variance(model.eta(i, th), phi).sqrt()),
        None => {
            let c = means.iter().sum::<f64>() / n as f64;
            let v = (0..n).map(|i| fam.variance(model.eta(i, th), phi)).sum::<f64>() / n as f64;
            (c, v.sqrt())
        }
    };
    let support = match fam {
        GlmFamily::NormalIdentity => Support::ContinuousReal,
        GlmFamily::PoissonLog => Support::NonNegativeInteger,
    };
    let grid = default_grid(support, centre, sd);
    let shift = match kind {
        ProfileKind::Pif => Some(shift_vector(&composite, &theta0, s.parse("shift", 1.0)?)),
        ProfileKind::If2 => None,
    };
    let engine = IntegralEngine::default();

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["t", "tau", "value"]).map_err(|e| CliError::Input(e.to_string()))?;
    for &tau in &taus {
        let ctx = InfluenceContext::new(&model, &theta0, tau, &engine)?;
        let profile = IfProfile::evaluate(grid.clone(), tau, |t| {
            let spec = match direction {
                Some(i0) => ContaminationSpec::Single { i0, t },
                None => ContaminationSpec::all_at(n, t),
            };
            let ifv = ctx.if_mdpde(&model, &spec)?;
            match &shift {
                Some(d) => ctx.pif(d, &ifv, Some(&composite), alpha),
                None => ctx.if2_composite(&composite, &ifv),
            }
        })?;
        for (t, v) in profile.grid.iter().zip(&profile.values) {
            wtr.write_record([format!("{t:?}"), format!("{tau:?}"), format!("{v:?}")])
                .map_err(|e| CliError::Input(e.to_string()))?;
        }
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    emit(s.path("out"), &bytes)
}

fn parse_scenario(spec: &str, direction: &ParamVector) -> Result<Scenario, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |i: usize| -> Result<f64, CliError> {
        parts
            .get(i)
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| CliError::Input(format!("--scenario {spec:?}: missing or bad number at position {i}")))
    };
    let arity = |want: usize| -> Result<(), CliError> {
        if parts.len() == want {
            Ok(())
        } else {
            Err(CliError::Input(format!("--scenario {spec:?}: expected {} values", want - 1)))
        }
    };
    Ok(match parts[0] {
        "null" => {
            arity(1)?;
            Scenario::Null
        }
        "fixed" => {
            arity(2)?;
            Scenario::FixedAlternative {
                theta_star: direction * num(1)?,
            }
        }
        "contiguous" => {
            arity(2)?;
            Scenario::Contiguous { d: direction * num(1)? }
        }
        "contaminated-level" => {
            arity(3)?;
            Scenario::ContaminatedLevel(Contamination {
                epsilon: num(1)?,
                point: ContaminationPoint::MeanShift(num(2)?),
            })
        }
        "contaminated-power" => {
            arity(4)?;
            Scenario::ContaminatedPower {
                d: direction * num(1)?,
                contamination: Contamination {
                    epsilon: num(2)?,
                    point: ContaminationPoint::MeanShift(num(3)?),
                },
            }
        }
        other => return Err(CliError::Input(format!("unknown scenario {other:?}"))),
    })
}

pub fn mc(common: &Common, flags: Vec<(&str, Option<String>)>) -> Result<(), CliError> {
    let s = settings(common, &["design", "n", "reps", "seed", "scenario", "hypothesis"], flags)?;
    let fam = family(&s)?;
    let n = s.parse("n", 200usize)?;
    let design: FixedDesign = resolve_design(s.str("design").unwrap_or("1"), n)?;
    let n = design.n();
    let (hyp, theta0, explicit) = null_setup(&s, fam, design.k())?;
    let model = GlmModel::new(fam, design);
    let composite = hyp.to_composite(model.dim())?;
    let test = if explicit || fam == GlmFamily::PoissonLog {
        McTest::Composite(composite.clone())
    } else {
        McTest::Simple
    };
    let unit = shift_vector(&composite, &theta0, 1.0);
    let mut scenario = parse_scenario(s.str("scenario").unwrap_or("null"), &unit)?;
    if let Scenario::FixedAlternative { theta_star } = &mut scenario {
        *theta_star += &theta0;
    }
    let mut config = McConfig::new(
        s.parse("reps", 1000usize)?,
        n,
        s.parse("seed", 1u64)?,
        s.tau_grid()?,
        scenario,
    );
    config.alpha = s.alpha()?;
    let report = run_mc(&config, &model, &theta0, &test)?;
    let out = s.path("out");
    let json = out
        .as_ref()
        .and_then(|p| p.extension())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if json {
        let mut value = report.to_json();
        value["schema"] = SCHEMA.into();
        value["command"] = "mc".into();
        emit_json(out, &value)
    } else {
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        emit(out, &buf)
    }
}
