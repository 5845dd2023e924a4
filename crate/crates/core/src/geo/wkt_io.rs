use std::str::FromStr;

use wkt::types::{Coord, Dimension, LineString, Point};
use wkt::Wkt;

use super::{GeoError, GeoPoint, Geometry, Polygon};

fn to_point(c: &Coord<f64>) -> Result<GeoPoint, GeoError> {
    let p = GeoPoint::new(c.y, c.x)?;
    match c.z {
        Some(z) => p.with_alt(z),
        None => Ok(p),
    }
}

fn to_points(coords: &[Coord<f64>]) -> Result<Vec<GeoPoint>, GeoError> {
    coords.iter().map(to_point).collect()
}

/// Parses `POINT`, `LINESTRING` and `POLYGON` (outer ring only). Axis order
/// is WKT's `x y [z]`, i.e. `lon lat [alt]`.
pub fn geometry_from_wkt(s: &str) -> Result<Geometry, GeoError> {
    let parsed = Wkt::<f64>::from_str(s).map_err(|e| GeoError::Malformed(format!("{e}: {s:?}")))?;
    match parsed {
        Wkt::Point(p) => {
            let c = p.coord().ok_or_else(|| GeoError::Malformed("empty POINT".into()))?;
            Ok(Geometry::Point(to_point(c)?))
        }
        Wkt::LineString(ls) => Geometry::polyline(to_points(ls.coords())?),
        Wkt::Polygon(poly) => {
            let outer = poly
                .rings()
                .first()
                .ok_or_else(|| GeoError::Malformed("empty POLYGON".into()))?;
            if poly.rings().len() > 1 {
                log::warn!("polygon holes are ignored");
            }
            Ok(Geometry::Polygon(Polygon::new(to_points(outer.coords())?)?))
        }
        other => Err(GeoError::Malformed(format!(
            "unsupported WKT geometry type {}",
            other.to_string().split(['(', ' ']).next().unwrap_or("?")
        ))),
    }
}

fn to_coord(p: &GeoPoint) -> Coord<f64> {
    Coord { x: p.lon, y: p.lat, z: p.alt, m: None }
}

fn dim_of(points: &[GeoPoint]) -> Dimension {
    if !points.is_empty() && points.iter().all(|p| p.alt.is_some()) {
        Dimension::XYZ
    } else {
        Dimension::XY
    }
}

fn coords(points: &[GeoPoint], dim: Dimension) -> Vec<Coord<f64>> {
    points
        .iter()
        .map(|p| {
            let mut c = to_coord(p);
            if dim == Dimension::XY {
                c.z = None;
            }
            c
        })
        .collect()
}

pub fn geometry_to_wkt(g: &Geometry) -> String {
    match g {
        Geometry::Point(p) => {
            let pts = std::slice::from_ref(p);
            let dim = dim_of(pts);
            Wkt::from(Point::new(coords(pts, dim).pop(), dim)).to_string()
        }
        Geometry::Polyline(pts) => {
            let dim = dim_of(pts);
            Wkt::from(LineString::new(coords(pts, dim), dim)).to_string()
        }
        Geometry::Polygon(poly) => {
            let dim = dim_of(poly.ring());
            let ring = LineString::new(coords(poly.ring(), dim), dim);
            Wkt::from(wkt::types::Polygon::new(vec![ring], dim)).to_string()
        }
    }
}
