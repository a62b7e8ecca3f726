//! Desk-scale toolkit for robotic manipulation failure data: builds expert
//! task plans, injects taxonomy-classified failures, simulates kinematic
//! episodes, synthesizes a question-answer corpus, scores candidate models,
//! and runs a closed-loop correction protocol against pluggable critics.

pub mod correctionloop;
pub mod dataset;
pub mod evalharness;
pub mod geometry;
pub mod grammar;
pub mod injector;
pub mod net;
pub mod qasynth;
pub mod rng;
pub mod simulator;
pub mod taskmodel;
