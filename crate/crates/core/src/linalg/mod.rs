//! Dense numeric kernels: symmetric eigendecomposition, 3×3 SVD and k-means.

mod eig;
mod kmeans;
mod svd;

pub use eig::{sym_eig, sym_eig_jacobi, EigenDecomposition, SymMatrix};
pub use kmeans::{kmeans, KMeansResult};
pub use svd::{svd3, Svd3};
