//! Process definitions: drift and noise matrices, schedules, grids and the
//! configuration format they are read from.

pub mod axes;
pub mod grid;
pub mod matrix_fn;
pub mod schedule;
pub mod spec;

pub use axes::{paddim_axes_from_data, AxisScheduleSet, PrincipalAxes};
pub use grid::{GridConfig, TimeGrid};
pub use matrix_fn::{plane_rotation, MatrixFn, MatrixFnConfig, Role};
pub use schedule::{Schedule, ScheduleForm};
pub use spec::{
    constant_spec, diffusion_matrix, plain_vanilla_spec, ProcessConfig, ProcessKind, ProcessSpec, DEFAULT_ALPHA_MIN,
};
