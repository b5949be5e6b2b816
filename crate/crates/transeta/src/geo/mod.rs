//! Geographic and planar geometry primitives: great-circle distance, local
//! projection, polyline simplification, dilation, and polygon boolean
//! operations.
//!
//! Everything here is a pure function over immutable inputs and safe to call
//! from many threads at once.

pub mod boolean;
mod distance;
mod dilate;
pub mod geojson;
mod project;
mod simplify;
mod types;

pub use boolean::{polygon_difference, polygon_intersection, polygon_union_all, total_area};
pub use dilate::{dilate_polyline, dilate_polyline_with, DEFAULT_DISC_SIDES};
pub use distance::{haversine_distance, nearest_point_on_polyline, NearestPoint, EARTH_RADIUS_M};
pub use project::{project_local, LocalProjection};
pub use simplify::douglas_peucker;
pub use types::{ring_signed_area, GeoPoint, PlanarPoint, PlanarPolygon, RoutePolyline};
