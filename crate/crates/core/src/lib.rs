//! Spectral flow of Dirac-type operators: crossing counts along operator
//! paths, heat-trace estimates, the circle and cylinder models with local
//! boundary conditions, and the half-line heat kernels.

pub mod circle;
pub mod cylinder;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod getzler;
pub mod halfcyl;
pub mod linalg;
pub mod quadrature;

pub use circle::{boundary_sf, build_boundary_dirac, BoundarySplitting, CircleGrid, GaugeMap, GaugeSpec};
pub use cylinder::{cylinder_sf, CylinderBVP, CylinderGauge};
pub use error::{Error, Result};
pub use flow::{spectral_flow, FlowOptions, OperatorPath, SpectralFlowResult};
pub use getzler::{eps_sweep, getzler_estimate, GetzlerOptions};
pub use linalg::{SelfAdjointOp, UnitaryOp};
