//! Dense tensors, linear algebra, seeded randomness and a finite-difference oracle.

mod diff;
mod linalg;
mod rng;
mod tensor;

pub use diff::finite_diff_grad;
pub use linalg::{determinant, givens_product, svd, SvdResult};
pub(crate) use rng::fnv1a;
pub use rng::Rng;
pub(crate) use tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
pub use tensor::{frobenius_norm, matmul, Tensor};
