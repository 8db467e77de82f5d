//! BCAT: block-causal transformer next-frame prediction for 2D PDE fields.
//!
//! Desk-scale, fully testable pipeline: synthetic PDE trajectory
//! generators with analytic oracles, a patch tokenizer, the transformer
//! backbone with its ablation variants, teacher-forced training,
//! autoregressive rollout with KV caching, and relative-L2 evaluation.

pub mod datagen;
pub mod dataio;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod rollout;
pub mod tokenizer;
pub mod training;
