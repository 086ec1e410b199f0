//! Videos as implicit neural representations generated by a latent-conditioned
//! hypernetwork.

pub mod diffcore;
pub mod field;
pub mod hypernet;
pub mod dataio;
pub mod metrics;
pub mod trainer;
pub mod inversion;
pub mod sampler;
