//! Distance transforms, steering sample positions and the scattered linear
//! interpolants that define the steering direction.

mod distance;
mod interpolate;
mod positions;

pub use distance::{distance_to_condition, nearest_site_transform, DistanceField};
pub use interpolate::{interpolate_scattered, phi1, phi2, ScatteredInterpolator};
pub use positions::{select_positions, Origin, SamplingPositions};
