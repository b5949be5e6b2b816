use super::distance::EARTH_RADIUS_M;
use super::types::{GeoPoint, PlanarPoint};
use crate::error::{Error, Result};

/// Equirectangular chart anchored at an origin point. Good to well under
/// 0.5 m of round-trip error at city scale, which is all the pipeline needs.
#[derive(Debug, Clone, Copy)]
pub struct LocalProjection {
    origin: GeoPoint,
    cos_lat0: f64,
}

impl LocalProjection {
    pub fn new(origin: GeoPoint) -> Self {
        LocalProjection {
            origin,
            cos_lat0: origin.lat().to_radians().cos(),
        }
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    /// Projects to local meters. Points beyond 1 degree of the origin in
    /// either axis are rejected.
    pub fn forward(&self, p: &GeoPoint) -> Result<PlanarPoint> {
        let dlon = p.lon() - self.origin.lon();
        let dlat = p.lat() - self.origin.lat();
        if dlon.abs() > 1.0 || dlat.abs() > 1.0 {
            return Err(Error::OutsideProjection {
                lon: p.lon(),
                lat: p.lat(),
            });
        }
        Ok(self.forward_unchecked(p))
    }

    /// Same chart without the 1 degree guard, for internal callers that only
    /// compare distances.
    pub(crate) fn forward_unchecked(&self, p: &GeoPoint) -> PlanarPoint {
        let dlon = p.lon() - self.origin.lon();
        let dlat = p.lat() - self.origin.lat();
        PlanarPoint::new(
            dlon.to_radians() * self.cos_lat0 * EARTH_RADIUS_M,
            dlat.to_radians() * EARTH_RADIUS_M,
        )
    }

    pub fn inverse(&self, p: &PlanarPoint) -> Result<GeoPoint> {
        let dlon = (p.x / (self.cos_lat0 * EARTH_RADIUS_M)).to_degrees();
        let dlat = (p.y / EARTH_RADIUS_M).to_degrees();
        GeoPoint::new(self.origin.lon() + dlon, self.origin.lat() + dlat)
    }
}

/// Projects a batch of points into the local chart of `origin`.
pub fn project_local(points: &[GeoPoint], origin: &GeoPoint) -> Result<Vec<PlanarPoint>> {
    let proj = LocalProjection::new(*origin);
    points.iter().map(|p| proj.forward(p)).collect()
}
