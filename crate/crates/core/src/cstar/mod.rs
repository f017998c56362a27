//! Crossed products `C(X) ⋊ Z^m` on sampled systems and the finite
//! approximation pipeline through `M_{|J_n|}(C(X))`.

pub mod band;
pub mod compressed;
pub mod inner;
pub mod norm;
pub mod pipeline;

pub use band::{crossed_norm, BandOperator, NormEnclosure};
pub use compressed::{compress_psi, mu, CompressedOperator, DiagonalWeight};
pub use inner::{IdentityApproximation, InnerApproximation};
pub use norm::{NormPolicy, C64};
pub use pipeline::{pipeline_defect, PipelineConfig, PipelineReport};
