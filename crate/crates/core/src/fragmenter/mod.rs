//! Energy-ordered bond cleavage and the link/merge/grow training pairs built
//! from it.

mod cleave;
mod energy;
mod mcs;
mod tasks;

use thiserror::Error;

use crate::molgraph::SmilesError;

pub use cleave::{cleave, CleaveOptions, FragmentSet};
pub use energy::{annotate_energies, eligible_bonds, BondEnergyTable};
pub use mcs::{find_mcs, mcs, merge_on_mcs, McsMatch, McsOptions};
pub use tasks::{
    best_split, make_grow_example, make_link_example, make_merge_example, Split, TaskExample, TaskKind,
};

#[derive(Debug, Error)]
pub enum FragmentError {
    #[error("molecule cannot be split into enough fragments")]
    InsufficientFragments,
    #[error("molecule has {atoms} atoms, above the limit of {limit}")]
    SizeLimit { atoms: usize, limit: usize },
    #[error("molecules share no common substructure")]
    EmptyOverlap,
    #[error("invalid molecule: {0}")]
    Invalid(#[from] SmilesError),
}
