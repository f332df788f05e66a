//! Subgroup-equivariant sequence models by symmetry breaking.
//!
//! Edge orbits of a permutation group `G <= S_n` on ordered pairs are used as
//! learnable edge features of a message-passing network. Because the edge
//! embedding depends only on the orbit color, the network commutes with
//! every permutation that preserves the coloring.
//!
//! Permutations compose right to left: `a.compose(&b)` maps `i` to `a(b(i))`.

pub mod groupcatalog;
pub mod nn;
pub mod orbitclosure;
pub mod par;
pub mod permgroup;
pub mod taskgen;
pub mod trainer;
pub mod verify;

/// Hash of the library sources at build time.
pub const BUILD_HASH: &str = env!("SYMBREAK_BUILD_HASH");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `<version>+<hash>`, echoed into every report.
pub fn build_id() -> String {
    format!("{VERSION}+{BUILD_HASH}")
}
