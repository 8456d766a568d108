//! Fixed-design generalized linear models.

pub mod design;
pub mod family;
pub mod model;

pub use design::{design_diagnostics, DesignDiagnostics, DesignKind, DiagnosticStatus, FixedDesign, DESIGN2_SEED};
pub use family::{k_functions, GlmFamily};
pub use model::{
    gamma_integrals, glm_contiguous_delta, glm_sandwich, normal_delta, normal_gamma_closed, normal_if2_closed,
    normal_pif_closed, normal_wald_statistic, s_vector, upsilon_beta, upsilon_phi, GammaIntegrals, GlmModel,
    GlmTheta,
};
