//! CSV ingestion of station observations and forecast grids, and assembly
//! into a [`Dataset`](crate::dataset::Dataset).

pub mod assemble;
pub mod grid;
pub mod idw;
pub mod obs;

pub use assemble::{assemble_dataset, AssembleConfig, Assembled, FieldSource};
pub use grid::{parse_grid, write_grid, ForecastGridSet, GridGeometry};
pub use idw::{great_circle_km, idw_interpolate, idw_weighted, GridNode, IdwConfig, Stencil};
pub use obs::{parse_observations, write_observations, Observation, ObservationTable};
