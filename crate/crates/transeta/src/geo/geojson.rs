//! Minimal GeoJSON (RFC 7946) import/export for the geometry types used by
//! the pipeline. Coordinates are always `[lon, lat]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::types::{GeoPoint, PlanarPoint, PlanarPolygon, RoutePolyline};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Geometry {
    LineString { coordinates: Vec<[f64; 2]> },
    Polygon { coordinates: Vec<Vec<[f64; 2]>> },
    MultiPolygon { coordinates: Vec<Vec<Vec<[f64; 2]>>> },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Feature {
    #[serde(rename = "type")]
    pub feature_type: String,
    pub geometry: Geometry,
    #[serde(default)]
    pub properties: Map<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeatureCollection {
    #[serde(rename = "type")]
    pub collection_type: String,
    pub features: Vec<Feature>,
}

impl FeatureCollection {
    pub fn new(features: Vec<Feature>) -> Self {
        FeatureCollection {
            collection_type: "FeatureCollection".into(),
            features,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }
}

pub fn feature_from_polyline(points: &[GeoPoint], properties: Map<String, Value>) -> Feature {
    Feature {
        feature_type: "Feature".into(),
        geometry: Geometry::LineString {
            coordinates: points.iter().map(|p| [p.lon(), p.lat()]).collect(),
        },
        properties,
    }
}

/// Serializes a degree-plane polygon; rings are closed on output.
pub fn feature_from_polygon(poly: &PlanarPolygon, properties: Map<String, Value>) -> Feature {
    let close = |ring: &[PlanarPoint]| -> Vec<[f64; 2]> {
        let mut c: Vec<[f64; 2]> = ring.iter().map(|p| [p.x, p.y]).collect();
        if let Some(first) = c.first().copied() {
            c.push(first);
        }
        c
    };
    let mut rings = vec![close(poly.exterior())];
    rings.extend(poly.holes().iter().map(|h| close(h)));
    Feature {
        feature_type: "Feature".into(),
        geometry: Geometry::Polygon { coordinates: rings },
        properties,
    }
}

/// Reads a FeatureCollection of LineStrings into route polylines. The route
/// id comes from the `route_id` property, falling back to `id` or the
/// feature index.
pub fn read_routes(path: &Path) -> Result<Vec<RoutePolyline>> {
    let fc = FeatureCollection::read(path)?;
    let mut routes = Vec::new();
    for (idx, feat) in fc.features.into_iter().enumerate() {
        let coords = match feat.geometry {
            Geometry::LineString { coordinates } => coordinates,
            _ => {
                return Err(Error::Malformed(format!(
                    "feature {idx} in {} is not a LineString",
                    path.display()
                )))
            }
        };
        let route_id = feat
            .properties
            .get("route_id")
            .or_else(|| feat.properties.get("id"))
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_else(|| format!("route-{idx}"));
        let points = coords
            .into_iter()
            .map(|[lon, lat]| GeoPoint::new(lon, lat))
            .collect::<Result<Vec<_>>>()?;
        routes.push(RoutePolyline::new(route_id, points)?);
    }
    Ok(routes)
}

pub fn write_routes(routes: &[RoutePolyline], path: &Path) -> Result<()> {
    let features = routes
        .iter()
        .map(|r| {
            let mut props = Map::new();
            props.insert("route_id".into(), Value::String(r.route_id().to_string()));
            feature_from_polyline(r.points(), props)
        })
        .collect();
    FeatureCollection::new(features).write(path)
}
