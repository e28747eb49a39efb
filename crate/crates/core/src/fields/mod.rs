//! Unit-speed vector fields: Legendre angle functions, their fit from
//! observed headings, and flow-map integration.

pub mod angle;
pub mod flow;
pub mod legendre;

pub use angle::{fit_angle_field, gradient_gram, AngleField, AngleFit, AngleFitConfig};
pub use flow::{flow, rk4_step, FlowTable, FnField, SceneField, Scaled, VectorField};
pub use legendre::{basis_index, basis_len, gauss_legendre, legendre_tensor_basis};
