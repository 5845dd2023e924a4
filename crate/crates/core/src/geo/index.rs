use std::collections::{BTreeSet, HashMap};
use std::fmt::Display;

use super::{geo_distance, BoundingBox, GeoError, GeoPoint, EARTH_RADIUS_M, METERS_PER_DEGREE};

pub const DEFAULT_CELL_SIZE_M: f64 = 100.0;

/// Uniform lat/lon grid over a bounding box.
///
/// Cells are sized in meters at the box's most poleward latitude, so a cell is
/// never narrower than `cell_size` meters. Queries scan the cells covering a
/// conservative lat/lon window around the probe and then filter by exact
/// haversine distance, which makes results identical to a brute-force scan.
#[derive(Debug, Clone)]
pub struct SpatialIndex<K = String> {
    bbox: BoundingBox,
    cell_size_m: f64,
    cell_lat: f64,
    cell_lon: f64,
    entries: Vec<(K, GeoPoint)>,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl<K: Clone + Ord + Display> SpatialIndex<K> {
    pub fn build(
        bbox: BoundingBox,
        cell_size_m: f64,
        entries: impl IntoIterator<Item = (K, GeoPoint)>,
    ) -> Result<Self, GeoError> {
        if !(cell_size_m > 0.0 && cell_size_m.is_finite()) {
            return Err(GeoError::CellSize(cell_size_m));
        }
        let poleward = bbox.min_lat.abs().max(bbox.max_lat.abs()).min(89.0);
        let cell_lat = cell_size_m / METERS_PER_DEGREE;
        let cell_lon = cell_size_m / (METERS_PER_DEGREE * poleward.to_radians().cos());
        let mut ix = SpatialIndex {
            bbox,
            cell_size_m,
            cell_lat,
            cell_lon,
            entries: Vec::new(),
            cells: HashMap::new(),
        };
        let mut seen = BTreeSet::new();
        for (id, p) in entries {
            if !bbox.contains(&p) {
                return Err(GeoError::OutsideBox { id: id.to_string() });
            }
            if !seen.insert(id.clone()) {
                return Err(GeoError::DuplicateId(id.to_string()));
            }
            let key = ix.cell_of(&p);
            ix.cells.entry(key).or_default().push(ix.entries.len());
            ix.entries.push((id, p));
        }
        Ok(ix)
    }

    fn row(&self, lat: f64) -> i64 {
        ((lat - self.bbox.min_lat) / self.cell_lat).floor() as i64
    }

    fn col(&self, lon: f64) -> i64 {
        ((lon - self.bbox.min_lon) / self.cell_lon).floor() as i64
    }

    fn cell_of(&self, p: &GeoPoint) -> (i64, i64) {
        (self.row(p.lat), self.col(p.lon))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn cell_size_m(&self) -> f64 {
        self.cell_size_m
    }

    pub fn entries(&self) -> &[(K, GeoPoint)] {
        &self.entries
    }

    /// Longitude intervals (already clipped to the box) that can hold a point
    /// within `radius` of `p`.
    fn lon_windows(&self, p: &GeoPoint, radius: f64, lat_lo: f64, lat_hi: f64) -> Vec<(f64, f64)> {
        let full = vec![(self.bbox.min_lon, self.bbox.max_lon)];
        let poleward = lat_lo.abs().max(lat_hi.abs());
        if poleward >= 90.0 {
            return full;
        }
        let s = (radius / (2.0 * EARTH_RADIUS_M)).sin() / poleward.to_radians().cos();
        if s >= 1.0 {
            return full;
        }
        let dlon = (2.0 * s.asin()).to_degrees() * (1.0 + 1e-9) + 1e-12;
        if dlon >= 180.0 {
            return full;
        }
        let (lo, hi) = (p.lon - dlon, p.lon + dlon);
        let mut raw = vec![(lo.max(-180.0), hi.min(180.0))];
        if lo < -180.0 {
            raw.push((lo + 360.0, 180.0));
        }
        if hi > 180.0 {
            raw.push((-180.0, hi - 360.0));
        }
        raw.into_iter()
            .filter_map(|(a, b)| {
                let a = a.max(self.bbox.min_lon);
                let b = b.min(self.bbox.max_lon);
                (a <= b).then_some((a, b))
            })
            .collect()
    }

    /// Ids whose point lies inside `b` (inclusive), sorted by id.
    pub fn query_bbox(&self, b: &BoundingBox) -> Vec<K> {
        let (r0, r1) = (self.row(b.min_lat.max(self.bbox.min_lat)), self.row(b.max_lat.min(self.bbox.max_lat)));
        let (c0, c1) = (self.col(b.min_lon.max(self.bbox.min_lon)), self.col(b.max_lon.min(self.bbox.max_lon)));
        let mut out = Vec::new();
        let mut take = |members: &Vec<usize>| {
            for &i in members {
                if b.contains(&self.entries[i].1) {
                    out.push(self.entries[i].0.clone());
                }
            }
        };
        if r1 < r0 || c1 < c0 {
            return out;
        }
        if ((r1 - r0 + 1) * (c1 - c0 + 1)) as usize > self.cells.len() {
            for (&(r, c), members) in &self.cells {
                if (r0..=r1).contains(&r) && (c0..=c1).contains(&c) {
                    take(members);
                }
            }
        } else {
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if let Some(members) = self.cells.get(&(r, c)) {
                        take(members);
                    }
                }
            }
        }
        out.sort();
        out
    }

    /// Ids within `radius` meters of `p`, sorted by distance then id.
    pub fn query_within(&self, p: &GeoPoint, radius: f64) -> Vec<(K, f64)> {
        if radius.is_nan() || radius < 0.0 || self.entries.is_empty() {
            return Vec::new();
        }
        let dlat = (radius / EARTH_RADIUS_M).to_degrees() * (1.0 + 1e-9) + 1e-12;
        let lat_lo = (p.lat - dlat).max(-90.0);
        let lat_hi = (p.lat + dlat).min(90.0);
        let lat_lo_c = lat_lo.max(self.bbox.min_lat);
        let lat_hi_c = lat_hi.min(self.bbox.max_lat);
        if lat_lo_c > lat_hi_c {
            return Vec::new();
        }
        let windows = self.lon_windows(p, radius, lat_lo, lat_hi);
        let (r0, r1) = (self.row(lat_lo_c), self.row(lat_hi_c));
        let spans: Vec<(i64, i64)> = windows.iter().map(|&(a, b)| (self.col(a), self.col(b))).collect();
        let n_cells: i64 = spans.iter().map(|(c0, c1)| c1 - c0 + 1).sum::<i64>() * (r1 - r0 + 1);

        let mut hits = Vec::new();
        let mut consider = |i: usize| {
            let (id, q) = &self.entries[i];
            let d = geo_distance(p, q);
            if d <= radius {
                hits.push((id.clone(), d));
            }
        };
        if n_cells as usize > self.cells.len() {
            // window covers more cells than are occupied
            for (&(r, c), members) in &self.cells {
                if r >= r0 && r <= r1 && spans.iter().any(|&(c0, c1)| c >= c0 && c <= c1) {
                    members.iter().for_each(|&i| consider(i));
                }
            }
        } else {
            for r in r0..=r1 {
                for &(c0, c1) in &spans {
                    for c in c0..=c1 {
                        if let Some(members) = self.cells.get(&(r, c)) {
                            members.iter().for_each(|&i| consider(i));
                        }
                    }
                }
            }
        }
        hits.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        hits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(entries: &[(String, GeoPoint)], p: &GeoPoint, r: f64) -> Vec<(String, f64)> {
        let mut v: Vec<_> = entries
            .iter()
            .map(|(id, q)| (id.clone(), geo_distance(p, q)))
            .filter(|(_, d)| *d <= r)
            .collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        v
    }

    fn trento() -> BoundingBox {
        BoundingBox::new(46.0, 46.1, 11.0, 11.2).unwrap()
    }

    fn random_points(n: usize, b: &BoundingBox, seed: u64) -> Vec<(String, GeoPoint)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let lat = rng.random_range(b.min_lat..=b.max_lat);
                let lon = rng.random_range(b.min_lon..=b.max_lon);
                (format!("p{i:05}"), GeoPoint::new(lat, lon).unwrap())
            })
            .collect()
    }

    #[test]
    fn empty_index_returns_nothing() {
        let ix = SpatialIndex::<String>::build(trento(), 100.0, vec![]).unwrap();
        assert!(ix.is_empty());
        assert!(ix.query_within(&trento().center(), 1e6).is_empty());
    }

    #[test]
    fn out_of_box_point_names_id() {
        let err = SpatialIndex::build(trento(), 100.0, vec![("far".to_string(), GeoPoint::new(0.0, 0.0).unwrap())])
            .unwrap_err();
        assert_eq!(err, GeoError::OutsideBox { id: "far".into() });
    }

    #[test]
    fn self_retrieval_at_radius_zero() {
        let pts = random_points(1000, &trento(), 1);
        let ix = SpatialIndex::build(trento(), 100.0, pts.clone()).unwrap();
        for (id, p) in &pts {
            assert!(ix.query_within(p, 0.0).iter().any(|(h, _)| h == id));
        }
    }

    #[test]
    fn distance_ordering_examples() {
        let probe = GeoPoint::new(46.05, 11.1).unwrap();
        let pts = vec![
            ("b".to_string(), probe.offset_m(30.0, 0.0)),
            ("a".to_string(), probe.offset_m(0.0, 10.0)),
            ("far".to_string(), probe.offset_m(5000.0, 0.0)),
        ];
        let ix = SpatialIndex::build(trento(), 100.0, pts.clone()).unwrap();
        let hits = ix.query_within(&probe, 50.0);
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].0, "a");
        assert!((hits[0].1 - geo_distance(&probe, &pts[1].1)).abs() < 1e-9);
        assert!((hits[0].1 - 10.0).abs() < 0.01);

        let lonely = GeoPoint::new(46.0, 11.0).unwrap();
        assert!(ix.query_within(&lonely, 50.0).is_empty());
    }

    #[test]
    fn matches_brute_force_on_10k_points() {
        let pts = random_points(10_000, &trento(), 7);
        let ix = SpatialIndex::build(trento(), 100.0, pts.clone()).unwrap();
        let probes = random_points(1000, &trento(), 8);
        for (_, p) in &probes {
            assert_eq!(ix.query_within(p, 50.0), brute(&pts, p, 50.0));
        }
    }

    #[test]
    fn wraps_across_antimeridian() {
        let world = BoundingBox::new(-10.0, 10.0, -180.0, 180.0).unwrap();
        let pts = vec![
            ("east".to_string(), GeoPoint::new(0.0, 179.9999).unwrap()),
            ("west".to_string(), GeoPoint::new(0.0, -179.9999).unwrap()),
        ];
        let ix = SpatialIndex::build(world, 100.0, pts.clone()).unwrap();
        let p = GeoPoint::new(0.0, 180.0).unwrap();
        assert_eq!(ix.query_within(&p, 50.0), brute(&pts, &p, 50.0));
        assert_eq!(ix.query_within(&p, 50.0).len(), 2);
    }

    #[test]
    fn bbox_query_matches_filter() {
        let pts = random_points(2000, &trento(), 3);
        let ix = SpatialIndex::build(trento(), 100.0, pts.clone()).unwrap();
        let q = BoundingBox::new(46.02, 46.03, 11.05, 11.09).unwrap();
        let mut expected: Vec<_> = pts.iter().filter(|(_, p)| q.contains(p)).map(|(id, _)| id.clone()).collect();
        expected.sort();
        assert_eq!(ix.query_bbox(&q), expected);
        assert!(!expected.is_empty());
    }

    proptest! {
        #[test]
        fn equals_brute_force_anywhere(
            seed in any::<u64>(),
            n in 0usize..300,
            lat0 in -89.0f64..88.0,
            lon0 in -180.0f64..179.0,
            span in 0.0001f64..1.0,
            cell in 10.0f64..2000.0,
            radius in 0.0f64..5000.0,
        ) {
            let b = BoundingBox::new(lat0, (lat0 + span).min(90.0), lon0, (lon0 + span).min(180.0)).unwrap();
            let pts = random_points(n, &b, seed);
            let ix = SpatialIndex::build(b, cell, pts.clone()).unwrap();
            for (_, p) in random_points(20, &b, seed ^ 0xdead) {
                prop_assert_eq!(ix.query_within(&p, radius), brute(&pts, &p, radius));
            }
        }
    }
}
