//! Finite element core for incompressible and nearly incompressible linear
//! elasticity: Taylor-Hood discretisation, weakly symmetric stress
//! equilibration on vertex patches, guaranteed a posteriori error bounds and
//! adaptive refinement by newest vertex bisection.
//!
//! The crate is `no_std` and only needs `alloc`. Linear solvers for the
//! global saddle point system are plugged in through [`linalg::LinearSolver`];
//! patch solves and element loops can be distributed through
//! [`equilibration::Executor`].

#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adaptivity;
pub mod elasticity;
pub mod equilibration;
pub mod estimator;
pub mod linalg;
pub mod mesh;
pub mod poly;
pub mod quadrature;
pub mod spaces;
pub mod tensor;

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn sq(x: f64) -> f64 {
    x * x
}
