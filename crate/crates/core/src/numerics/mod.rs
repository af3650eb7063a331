//! Numerical kernel shared by the likelihood and estimating-equation code.

mod diff;
mod optim;
mod quadrature;
mod roots;

pub use diff::{default_step, gradient_jacobian, numeric_gradient, numeric_hessian};
pub use optim::{maximize, MaximizeOptions, Objective, OptimResult};
pub use quadrature::{expect_normal, gauss_hermite, QuadratureRule, DEFAULT_ORDER};
pub use roots::{find_root, find_root_newton};
