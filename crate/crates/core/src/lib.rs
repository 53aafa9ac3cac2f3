//! Chemistry side of the fragment-conditioned generation pipeline: SMILES
//! graphs, energy-based fragmentation, training corpora, property critics and
//! multi-objective rewards.

pub mod corpus;
pub mod critics;
pub mod fragmenter;
pub mod molgraph;
pub mod rewards;
pub mod toygen;
