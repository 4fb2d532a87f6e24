//! Shape optimization of 2D annular domains under Stokes flow.
//!
//! The crate is organized around five pieces:
//!
//! * [`mesh`] — triangulated annular domains, deformation, quality, file I/O;
//! * [`fields`] — closed-form vector fields (targets, body forces, boundary data);
//! * [`fem`] — the mixed linear-velocity-with-bubble / linear-pressure Stokes
//!   solver, its adjoint, and the tracking cost;
//! * [`shape`] — shape derivatives of the cost: boundary density, volume
//!   form, and a finite-difference transport oracle;
//! * [`optim`] — the regularized-descent moving-mesh optimization loop.
//!
//! All numerics are generic over the scalar type through [`scalar::Real`];
//! the aliases below fix `f64`, which is what the command-line driver uses.

pub mod fem;
pub mod fields;
pub mod geom;
pub mod mesh;
pub mod optim;
pub mod quadrature;
pub mod scalar;
pub mod shape;
pub mod vtk;

/// Default scalar type for applications.
pub type Scalar = f64;
/// `f64` mesh.
pub type TriMesh = mesh::TriMesh<Scalar>;
/// `f64` displacement field.
pub type DisplacementField = mesh::DisplacementField<Scalar>;
/// `f64` velocity/pressure pair.
pub type FlowField = fem::FlowField<Scalar>;
/// `f64` shape-gradient boundary density.
pub type BoundaryDensity = shape::BoundaryDensity<Scalar>;
