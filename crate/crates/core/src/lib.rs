//! Harness for specifying, scoring, generating, deploying and black-box
//! testing microservice-based applications.
//!
//! The crate is organised around the life of one generated service:
//!
//! - [`spec_model`] parses the six-field application specs in `corpus/`.
//! - [`complexity`] scores a spec: word count, dependency count, packages
//!   per service and a model-assigned difficulty.
//! - [`prompt_forge`] builds the generation, reflection, regeneration and
//!   judge prompts and routes every model call through a [`prompt_forge::Gateway`].
//! - [`codefab`] turns a model reply into a build directory.
//! - [`arena`] deploys one generated service next to the ground-truth
//!   implementations of the others and runs its suite.
//! - [`probe`] is the declarative REST test engine.
//! - [`reference_services`] holds the ground-truth library services.
//! - [`ledger`] drives the generate/test/reflect/regenerate loop and
//!   aggregates results into report tables.

pub mod arena;
pub mod codefab;
pub mod complexity;
pub mod corpus;
pub mod ledger;
pub mod probe;
pub mod prompt_forge;
pub mod reference_services;
pub mod spec_model;

pub use corpus::Corpus;
