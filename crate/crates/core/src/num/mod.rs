//! Shared numerical kernels: dense tensors, seeded randomness, symmetric
//! eigendecomposition and matrix exponentials, a plain DFT, and a tape-based
//! reverse-mode gradient facility sized for the denoiser's op set.

pub mod dft;
pub mod gradcheck;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use dft::{dft, idft, idft_real};
pub use gradcheck::grad_check;
pub use linalg::{sym_eig, sym_expm, SymEig};
pub use optim::Adam;
pub use rng::Rng;
pub use tape::{Tape, Var};
pub use tensor::{matmul, Tensor};
