//! Geometry primitives on raw latitude/longitude.
//!
//! Distances are great-circle distances on a sphere of radius
//! [`EARTH_RADIUS_M`]. Planar tests (containment, centroids) work directly in
//! the lat/lon plane, which is adequate at city scale.

mod index;
mod wkt_io;

pub use index::{SpatialIndex, DEFAULT_CELL_SIZE_M};
pub use wkt_io::{geometry_from_wkt, geometry_to_wkt};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used for every distance computation.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Meters per degree of latitude on the sphere.
pub const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("altitude {0} is not finite")]
    Altitude(f64),
    #[error("bounding box has min > max on the {0} axis")]
    InvertedBox(&'static str),
    #[error("malformed geometry: {0}")]
    Malformed(String),
    #[error("point for id {id} lies outside the index bounding box")]
    OutsideBox { id: String },
    #[error("id {0} indexed twice")]
    DuplicateId(String),
    #[error("cell size must be positive, got {0}")]
    CellSize(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint")]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt: Option<f64>,
}

#[derive(Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
    #[serde(default)]
    alt: Option<f64>,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        let p = GeoPoint::new(raw.lat, raw.lon)?;
        match raw.alt {
            Some(alt) => p.with_alt(alt),
            None => Ok(p),
        }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::Latitude(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::Longitude(lon));
        }
        Ok(GeoPoint { lat, lon, alt: None })
    }

    pub fn with_alt(self, alt: f64) -> Result<Self, GeoError> {
        if !alt.is_finite() {
            return Err(GeoError::Altitude(alt));
        }
        Ok(GeoPoint { alt: Some(alt), ..self })
    }

    /// Point displaced by `north_m` / `east_m` meters, using a local flat
    /// approximation. Latitude is clamped and longitude wrapped.
    pub fn offset_m(&self, north_m: f64, east_m: f64) -> GeoPoint {
        let lat = (self.lat + north_m / METERS_PER_DEGREE).clamp(-90.0, 90.0);
        let cos = self.lat.to_radians().cos().max(1e-9);
        let mut lon = self.lon + east_m / (METERS_PER_DEGREE * cos);
        if lon > 180.0 {
            lon -= 360.0;
        } else if lon < -180.0 {
            lon += 360.0;
        }
        GeoPoint { lat, lon, alt: self.alt }
    }
}

/// Haversine distance in meters.
pub fn geo_distance(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let d_phi = (b.lat - a.lat).to_radians();
    let d_lambda = (b.lon - a.lon).to_radians();
    let h = (d_phi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (d_lambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

#[derive(Deserialize)]
struct RawBox {
    min_lat: f64,
    max_lat: f64,
    min_lon: f64,
    max_lon: f64,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = GeoError;

    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        BoundingBox::new(raw.min_lat, raw.max_lat, raw.min_lon, raw.max_lon)
    }
}

impl BoundingBox {
    pub fn new(min_lat: f64, max_lat: f64, min_lon: f64, max_lon: f64) -> Result<Self, GeoError> {
        GeoPoint::new(min_lat, min_lon)?;
        GeoPoint::new(max_lat, max_lon)?;
        if min_lat > max_lat {
            return Err(GeoError::InvertedBox("latitude"));
        }
        if min_lon > max_lon {
            return Err(GeoError::InvertedBox("longitude"));
        }
        Ok(BoundingBox { min_lat, max_lat, min_lon, max_lon })
    }

    /// Smallest box covering every point; `None` for an empty iterator.
    pub fn covering<'a>(points: impl IntoIterator<Item = &'a GeoPoint>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = BoundingBox {
            min_lat: first.lat,
            max_lat: first.lat,
            min_lon: first.lon,
            max_lon: first.lon,
        };
        for p in it {
            b.min_lat = b.min_lat.min(p.lat);
            b.max_lat = b.max_lat.max(p.lat);
            b.min_lon = b.min_lon.min(p.lon);
            b.max_lon = b.max_lon.max(p.lon);
        }
        Some(b)
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        within_bbox(p, self)
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lat: (self.min_lat + self.max_lat) / 2.0,
            lon: (self.min_lon + self.max_lon) / 2.0,
            alt: None,
        }
    }
}

/// Inclusive on both axes.
pub fn within_bbox(p: &GeoPoint, b: &BoundingBox) -> bool {
    b.min_lat <= p.lat && p.lat <= b.max_lat && b.min_lon <= p.lon && p.lon <= b.max_lon
}

/// Closed ring; the first vertex is repeated as the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    ring: Vec<GeoPoint>,
}

impl Polygon {
    pub fn new(ring: Vec<GeoPoint>) -> Result<Self, GeoError> {
        if ring.len() < 4 {
            return Err(GeoError::Malformed(format!(
                "polygon ring needs at least 4 points (3 distinct + closing), got {}",
                ring.len()
            )));
        }
        if !same_xy(&ring[0], &ring[ring.len() - 1]) {
            return Err(GeoError::Malformed("polygon ring is not closed".into()));
        }
        Ok(Polygon { ring })
    }

    /// Builds a polygon from an open vertex list, closing it.
    pub fn from_vertices(mut vertices: Vec<GeoPoint>) -> Result<Self, GeoError> {
        if let (Some(first), Some(last)) = (vertices.first().copied(), vertices.last()) {
            if !same_xy(&first, last) {
                vertices.push(first);
            }
        }
        Polygon::new(vertices)
    }

    pub fn ring(&self) -> &[GeoPoint] {
        &self.ring
    }

    /// Vertices without the closing duplicate.
    pub fn vertices(&self) -> &[GeoPoint] {
        &self.ring[..self.ring.len() - 1]
    }

    /// Signed shoelace area in squared degrees (x = lon, y = lat).
    fn signed_area(&self) -> f64 {
        self.ring
            .windows(2)
            .map(|w| w[0].lon * w[1].lat - w[1].lon * w[0].lat)
            .sum::<f64>()
            / 2.0
    }

    pub fn is_degenerate(&self) -> bool {
        self.signed_area().abs() < 1e-18
    }

    pub fn centroid(&self) -> GeoPoint {
        let a = self.signed_area();
        if a.abs() < 1e-18 {
            return mean_point(self.vertices());
        }
        let (mut cx, mut cy) = (0.0, 0.0);
        for w in self.ring.windows(2) {
            let cross = w[0].lon * w[1].lat - w[1].lon * w[0].lat;
            cx += (w[0].lon + w[1].lon) * cross;
            cy += (w[0].lat + w[1].lat) * cross;
        }
        GeoPoint { lat: cy / (6.0 * a), lon: cx / (6.0 * a), alt: None }
    }

    pub fn bounds(&self) -> BoundingBox {
        BoundingBox::covering(&self.ring).expect("ring is non-empty")
    }
}

fn same_xy(a: &GeoPoint, b: &GeoPoint) -> bool {
    a.lat == b.lat && a.lon == b.lon
}

fn mean_point(points: &[GeoPoint]) -> GeoPoint {
    let n = points.len() as f64;
    GeoPoint {
        lat: points.iter().map(|p| p.lat).sum::<f64>() / n,
        lon: points.iter().map(|p| p.lon).sum::<f64>() / n,
        alt: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "coords", rename_all = "lowercase")]
pub enum Geometry {
    Point(GeoPoint),
    Polyline(Vec<GeoPoint>),
    Polygon(Polygon),
}

impl Geometry {
    pub fn polyline(points: Vec<GeoPoint>) -> Result<Self, GeoError> {
        if points.len() < 2 {
            return Err(GeoError::Malformed("polyline needs at least 2 points".into()));
        }
        if points.iter().all(|p| same_xy(p, &points[0])) {
            return Err(GeoError::Malformed("polyline needs 2 distinct points".into()));
        }
        Ok(Geometry::Polyline(points))
    }

    /// Point used for proximity: the point itself, the vertex mean of a
    /// polyline, or the area centroid of a polygon.
    pub fn representative_point(&self) -> GeoPoint {
        match self {
            Geometry::Point(p) => *p,
            Geometry::Polyline(pts) => mean_point(pts),
            Geometry::Polygon(poly) => poly.centroid(),
        }
    }

    /// Every vertex; used for containment and localization checks.
    pub fn vertices(&self) -> &[GeoPoint] {
        match self {
            Geometry::Point(p) => std::slice::from_ref(p),
            Geometry::Polyline(pts) => pts,
            Geometry::Polygon(poly) => poly.vertices(),
        }
    }

    pub fn as_polygon(&self) -> Option<&Polygon> {
        match self {
            Geometry::Polygon(p) => Some(p),
            _ => None,
        }
    }
}

/// Even-odd ray casting in the lat/lon plane. Points on the boundary are
/// inside.
pub fn point_in_polygon(p: &GeoPoint, poly: &Polygon) -> Result<bool, GeoError> {
    if poly.is_degenerate() {
        return Err(GeoError::Malformed("polygon has zero area".into()));
    }
    let ring = poly.ring();
    if ring.windows(2).any(|w| on_segment(p, &w[0], &w[1])) {
        return Ok(true);
    }
    let (x, y) = (p.lon, p.lat);
    let mut inside = false;
    for w in ring.windows(2) {
        let (xi, yi) = (w[0].lon, w[0].lat);
        let (xj, yj) = (w[1].lon, w[1].lat);
        if (yi > y) != (yj > y) {
            let x_cross = xi + (y - yi) * (xj - xi) / (yj - yi);
            if x < x_cross {
                inside = !inside;
            }
        }
    }
    Ok(inside)
}

fn on_segment(p: &GeoPoint, a: &GeoPoint, b: &GeoPoint) -> bool {
    let cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    let scale = (b.lon - a.lon).abs().max((b.lat - a.lat).abs()).max(1e-12);
    if cross.abs() > 1e-12 * scale {
        return false;
    }
    p.lon >= a.lon.min(b.lon)
        && p.lon <= a.lon.max(b.lon)
        && p.lat >= a.lat.min(b.lat)
        && p.lat <= a.lat.max(b.lat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    /// Spherical law of cosines, an independent route to the same distance.
    fn cosine_law(a: &GeoPoint, b: &GeoPoint) -> f64 {
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dl = (b.lon - a.lon).to_radians();
        let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
        EARTH_RADIUS_M * c.clamp(-1.0, 1.0).acos()
    }

    fn unit_square() -> Polygon {
        Polygon::from_vertices(vec![pt(0.0, 0.0), pt(0.0, 1.0), pt(1.0, 1.0), pt(1.0, 0.0)]).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(geo_distance(&pt(46.0, 11.0), &pt(46.0, 11.0)), 0.0);

        let d = geo_distance(&pt(0.0, 0.0), &pt(0.0, 1.0));
        assert!((d - cosine_law(&pt(0.0, 0.0), &pt(0.0, 1.0))).abs() < 1e-6);
        assert!((d - 111_195.0).abs() < 1.0, "{d}");

        let d = geo_distance(&pt(46.06, 11.12), &pt(46.07, 11.12));
        assert!((d - cosine_law(&pt(46.06, 11.12), &pt(46.07, 11.12))).abs() < 1e-3);
        assert!((d - 1_112.0).abs() < 1.0, "{d}");
    }

    #[test]
    fn rejects_out_of_range_coordinates() {
        assert_eq!(GeoPoint::new(91.0, 0.0), Err(GeoError::Latitude(91.0)));
        assert_eq!(GeoPoint::new(0.0, -181.0), Err(GeoError::Longitude(-181.0)));
        assert!(pt(0.0, 0.0).with_alt(f64::NAN).is_err());
        assert!(serde_json::from_str::<GeoPoint>(r#"{"lat": 100, "lon": 0}"#).is_err());
    }

    #[test]
    fn polygon_containment_examples() {
        let sq = unit_square();
        assert!(point_in_polygon(&pt(0.5, 0.5), &sq).unwrap());
        assert!(!point_in_polygon(&pt(11.0, 0.5), &sq).unwrap());
        assert!(point_in_polygon(&pt(0.0, 0.0), &sq).unwrap());
        assert!(point_in_polygon(&pt(0.5, 1.0), &sq).unwrap());
    }

    #[test]
    fn degenerate_polygon_is_an_error() {
        let flat = Polygon::from_vertices(vec![pt(0.0, 0.0), pt(0.0, 1.0), pt(0.0, 2.0)]).unwrap();
        assert!(matches!(point_in_polygon(&pt(0.0, 0.5), &flat), Err(GeoError::Malformed(_))));
    }

    #[test]
    fn malformed_geometries() {
        assert!(Polygon::new(vec![pt(0.0, 0.0), pt(1.0, 1.0), pt(0.0, 0.0)]).is_err());
        assert!(Polygon::new(vec![pt(0.0, 0.0), pt(1.0, 1.0), pt(1.0, 0.0), pt(0.5, 0.0)]).is_err());
        assert!(Geometry::polyline(vec![pt(0.0, 0.0)]).is_err());
        assert!(Geometry::polyline(vec![pt(0.0, 0.0), pt(0.0, 0.0)]).is_err());
    }

    #[test]
    fn bbox_inclusive() {
        let b = BoundingBox::new(45.0, 47.0, 10.0, 12.0).unwrap();
        assert!(within_bbox(&pt(46.0, 11.0), &b));
        assert!(!within_bbox(&pt(48.0, 11.0), &b));
        assert!(within_bbox(&pt(45.0, 11.0), &b));
        assert!(BoundingBox::new(47.0, 45.0, 10.0, 12.0).is_err());
    }

    #[test]
    fn centroid_of_square() {
        let c = unit_square().centroid();
        assert!((c.lat - 0.5).abs() < 1e-12 && (c.lon - 0.5).abs() < 1e-12);
    }

    /// Winding number around `p`; nonzero means inside.
    fn winding_number(p: &GeoPoint, ring: &[GeoPoint]) -> i32 {
        let mut wn = 0;
        for w in ring.windows(2) {
            let is_left = (w[1].lon - w[0].lon) * (p.lat - w[0].lat) - (p.lon - w[0].lon) * (w[1].lat - w[0].lat);
            if w[0].lat <= p.lat {
                if w[1].lat > p.lat && is_left > 0.0 {
                    wn += 1;
                }
            } else if w[1].lat <= p.lat && is_left < 0.0 {
                wn -= 1;
            }
        }
        wn
    }

    fn convex_polygon(cx: f64, cy: f64, r: f64, mut angles: Vec<f64>) -> Polygon {
        angles.sort_by(f64::total_cmp);
        angles.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
        let verts = angles.iter().map(|a| pt(cy + r * a.sin(), cx + r * a.cos())).collect();
        Polygon::from_vertices(verts).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn pip_agrees_with_winding_number(
            cx in -10.0f64..10.0, cy in -10.0f64..10.0, r in 0.01f64..5.0,
            angles in prop::collection::vec(0.0f64..std::f64::consts::TAU, 3..12),
            px in -1.5f64..1.5, py in -1.5f64..1.5,
        ) {
            let poly = convex_polygon(cx, cy, r, angles);
            prop_assume!(poly.vertices().len() >= 3 && !poly.is_degenerate());
            let p = pt(cy + py * r, cx + px * r);
            let on_edge = poly.ring().windows(2).any(|w| on_segment(&p, &w[0], &w[1]));
            prop_assume!(!on_edge);
            let expected = winding_number(&p, poly.ring()) != 0;
            prop_assert_eq!(point_in_polygon(&p, &poly).unwrap(), expected);
        }

        #[test]
        fn distance_symmetric_and_triangle(
            a in (-89.0f64..89.0, -179.0f64..179.0),
            b in (-89.0f64..89.0, -179.0f64..179.0),
            c in (-89.0f64..89.0, -179.0f64..179.0),
        ) {
            let (a, b, c) = (pt(a.0, a.1), pt(b.0, b.1), pt(c.0, c.1));
            prop_assert_eq!(geo_distance(&a, &b), geo_distance(&b, &a));
            prop_assert!(geo_distance(&a, &b) >= 0.0);
            prop_assert!(geo_distance(&a, &c) <= geo_distance(&a, &b) + geo_distance(&b, &c) + 1e-6);
        }
    }
}
