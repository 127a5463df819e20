//! Quantale-valued fixed-point iteration and its probabilistic
//! instantiations: the law of large numbers and the central limit theorem
//! as Banach iterations of rescaled self-convolution.

pub mod cltsys;
pub mod linalg;
pub mod measure;
pub mod psd;
pub mod quantale;
pub mod selfcheck;
pub mod vspace;
