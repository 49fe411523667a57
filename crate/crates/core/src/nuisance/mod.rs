//! Working models for the propensity score, the event-time distribution F,
//! the truncation distribution G and the residual censoring survival S_D.

pub mod cox;
pub mod dist;
pub mod features;
pub mod logistic;
pub mod propensity;
pub mod scheme;

pub use cox::{fit_cox, CoxData, CoxFit, CoxModel, TimeOrientation};
pub use dist::{ConditionalDistribution, CoxDistribution, DistKind, DistributionSource};
pub use features::{expand_features, FeatureMap, FeatureSpec, Subject};
pub use propensity::{PropensityModel, PropensitySource};
pub use scheme::{
    fit_event_cdf_f, fit_propensity, fit_residual_censoring_s, fit_scheme_a, fit_truncation_cdf_g, propensity_weights, ModelKind,
    NuisanceBundle, NuisanceConfig, NuisanceSpec, PcoxSettings, Scheme,
};
