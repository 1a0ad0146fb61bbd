//! Mendelian factorial design estimation of vaccine efficacy.
//!
//! A randomized vaccine trial augmented with a protective genetic factor
//! (e.g. the sickle cell trait) forms a natural 2x2 factorial experiment
//! that identifies efficacy against disease-attributable outcomes even
//! when cases cannot be classified by cause. This crate implements:
//!
//! - the trial data model with CSV ingestion and positivity checks
//!   ([`data`]);
//! - the two-step targeted Poisson working model ([`glm`]) and the
//!   substitution, naive, s-corrected, and bounded estimators with
//!   influence-function inference ([`estimators`]);
//! - the time-to-first-fever variant via Cox partial likelihood
//!   ([`survival`]);
//! - a seeded Monte Carlo study engine with dependent negative binomial
//!   counts ([`sim`]) and study aggregation helpers ([`report`]).
//!
//! All numeric code is generic over the scalar type through
//! [`num::Scalar`] (`f32` or `f64`); the aliases below pin the `f64`
//! instantiations used by the command-line tools.

pub mod data;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod linalg;
pub mod num;
pub mod report;
pub mod seed;
pub mod sim;
pub mod stats;
pub mod survival;

pub use error::{Error, Result};

/// f64 instantiations of the core types.
pub type TrialDataset64 = data::TrialDataset<f64>;
pub type SubjectRecord64 = data::SubjectRecord<f64>;
pub type CellSummary64 = data::CellSummary<f64>;
pub type DesignMatrix64 = glm::DesignMatrix<f64>;
pub type GlmFit64 = glm::GlmFit<f64>;
pub type MuEstimates64 = estimators::MuEstimates<f64>;
pub type InfluenceValues64 = estimators::InfluenceValues<f64>;
pub type EfficacyEstimate64 = estimators::EfficacyEstimate<f64>;
pub type EstimationOptions64 = estimators::EstimationOptions<f64>;
pub type CoxFit64 = survival::CoxFit<f64>;
pub type SurvivalScenario64 = survival::SurvivalScenario<f64>;
pub type ScenarioConfig64 = sim::ScenarioConfig<f64>;
pub type SimSummary64 = sim::SimSummary<f64>;
