//! Minimum density power divergence estimation and robust Wald-type tests
//! for independent, non-identically distributed observations.

pub mod distributions;
pub mod error;
pub mod glm;
pub mod integrate;
pub mod linalg;
pub mod mc;
pub mod mdpde;
pub mod model;
pub mod robustness;
pub mod tables;
pub mod wald;

pub use error::{DpdError, Result};
pub use integrate::{Integral, IntegralEngine};
pub use mdpde::{dpd_objective, estimating_equation, fit_mdpde, sandwich_cov, xi_vector, MdpdeFit, SandwichCov, SolverOptions};
pub use model::{ModelFamily, Moments, ParamVector, Support};
pub use wald::{
    contaminated_contiguous_power, contiguous_power_composite, contiguous_power_simple, power_fixed_alternative,
    sample_size_for_power, wald_composite, wald_simple, CompositeAt, CompositeHypothesis, ContiguousShift, LinearHypothesis,
    NullSpec, TestReport,
};
pub use robustness::{if2_wald_composite, if2_wald_simple, if_mdpde, lif, pif, ContaminationSpec, IfProfile, InfluenceContext};
pub use mc::{run_mc, McConfig, McReport, McRow, McTest, Scenario};
