//! Labels hidden neurons of an image classifier with class expressions
//! induced over a class hierarchy, then checks the labels statistically.
//!
//! The flow is: [`hierarchy`] and [`knowledge_base`] turn a taxonomy and
//! per-image object tags into a knowledge base; [`neuron_analysis`] splits
//! images into positive and negative examples per neuron and runs
//! [`induction`] on them; confirmation and evaluation use [`statistics`];
//! [`concept_activation`] trains linear and kernel probes in activation space.
//! [`synthetic`] generates corpora with planted neuron concepts and
//! [`pipeline`] runs every stage end to end.

pub mod concept_activation;
pub mod error;
pub mod hierarchy;
pub mod induction;
pub mod io;
pub mod knowledge_base;
pub mod neuron_analysis;
pub mod pipeline;
pub mod report;
pub mod statistics;
pub mod synthetic;
pub mod tag_mapping;

pub use error::{Error, ErrorCategory, Result};
pub use hierarchy::{parse_hierarchy, ClassHierarchy, ClassId, HierarchyBuilder};
pub use induction::{coverage, induce, ExampleSets, InductionConfig, ScoredHypothesis};
pub use knowledge_base::{build_kb, ClassExpression, ImageAnnotation, ImageId, KnowledgeBase};
pub use neuron_analysis::{ActivationMatrix, ImageSetManifest, ThresholdConfig};
