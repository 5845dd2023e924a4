//! Readers and writers for the on-disk formats: place CSV and GeoJSON,
//! battery and GPS CSV, and line-delimited JSON.

use std::io::{BufRead, Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{geometry_from_wkt, geometry_to_wkt, GeoError, GeoPoint, Geometry, Polygon};
use crate::personal::{GpsSample, QuestionBattery};
use crate::reference::PlaceRecord;
use crate::time::Timestamp;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {message}")]
    Record { line: u64, message: String },
    #[error("geojson: {0}")]
    GeoJson(String),
}

fn record_err(line: u64, message: impl ToString) -> IoError {
    IoError::Record { line, message: message.to_string() }
}

fn blank_to_none(s: String) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

#[derive(Serialize, Deserialize)]
struct PlaceRow {
    id: String,
    #[serde(default)]
    name: String,
    fclass: String,
    #[serde(rename = "type", default)]
    kind: String,
    geometry_wkt: String,
}

/// Columns `id,name,fclass,type,geometry_wkt`.
pub fn read_places_csv(r: impl Read) -> Result<Vec<PlaceRecord>, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize::<PlaceRow>() {
        let row = row?;
        let line = out.len() as u64 + 2;
        let geometry = geometry_from_wkt(&row.geometry_wkt).map_err(|e| record_err(line, e))?;
        out.push(PlaceRecord {
            id: row.id,
            name: blank_to_none(row.name),
            fclass: row.fclass,
            geometry,
            kind: blank_to_none(row.kind),
        });
    }
    Ok(out)
}

pub fn write_places_csv(places: &[PlaceRecord], w: impl Write) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    for p in places {
        wtr.serialize(PlaceRow {
            id: p.id.clone(),
            name: p.name.clone().unwrap_or_default(),
            fclass: p.fclass.clone(),
            kind: p.kind.clone().unwrap_or_default(),
            geometry_wkt: geometry_to_wkt(&p.geometry),
        })?;
    }
    wtr.flush()?;
    Ok(())
}

fn position(p: &geojson::Position) -> Result<GeoPoint, IoError> {
    match p.as_slice() {
        [lon, lat] => Ok(GeoPoint::new(*lat, *lon).map_err(|e| IoError::GeoJson(e.to_string()))?),
        [lon, lat, alt, ..] => GeoPoint::new(*lat, *lon)
            .and_then(|g| g.with_alt(*alt))
            .map_err(|e| IoError::GeoJson(e.to_string())),
        _ => Err(IoError::GeoJson("position with fewer than 2 coordinates".into())),
    }
}

fn geometry_from_geojson(g: &geojson::Geometry) -> Result<Geometry, IoError> {
    let geo = |e: GeoError| IoError::GeoJson(e.to_string());
    match &g.value {
        geojson::GeometryValue::Point { coordinates } => Ok(Geometry::Point(position(coordinates)?)),
        geojson::GeometryValue::LineString { coordinates } => {
            Geometry::polyline(coordinates.iter().map(position).collect::<Result<_, _>>()?).map_err(geo)
        }
        geojson::GeometryValue::Polygon { coordinates } => {
            let outer = coordinates.first().ok_or_else(|| IoError::GeoJson("empty polygon".into()))?;
            let ring = outer.iter().map(position).collect::<Result<_, _>>()?;
            Ok(Geometry::Polygon(Polygon::new(ring).map_err(geo)?))
        }
        other => Err(IoError::GeoJson(format!("unsupported geometry type {}", other.type_name()))),
    }
}

fn string_prop(props: &geojson::JsonObject, key: &str) -> Option<String> {
    match props.get(key)? {
        serde_json::Value::String(s) => blank_to_none(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// A FeatureCollection whose features carry `name`, `fclass` and optionally
/// `type` properties. The id comes from the feature id or an `id` property.
pub fn read_places_geojson(s: &str) -> Result<Vec<PlaceRecord>, IoError> {
    let fc: geojson::FeatureCollection = s.parse().map_err(|e: geojson::Error| IoError::GeoJson(e.to_string()))?;
    let mut out = Vec::new();
    for (i, f) in fc.features.iter().enumerate() {
        let empty = geojson::JsonObject::new();
        let props = f.properties.as_ref().unwrap_or(&empty);
        let id = match &f.id {
            Some(geojson::feature::Id::String(s)) => Some(s.clone()),
            Some(geojson::feature::Id::Number(n)) => Some(n.to_string()),
            None => string_prop(props, "id"),
        }
        .ok_or_else(|| IoError::GeoJson(format!("feature {i} has no id")))?;
        let geometry = f
            .geometry
            .as_ref()
            .ok_or_else(|| IoError::GeoJson(format!("feature {id:?} has no geometry")))?;
        out.push(PlaceRecord {
            geometry: geometry_from_geojson(geometry)?,
            name: string_prop(props, "name"),
            fclass: string_prop(props, "fclass").unwrap_or_default(),
            kind: string_prop(props, "type"),
            id,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct BatteryRow {
    userid: u32,
    timestamp: String,
    #[serde(rename = "where", default)]
    where_: String,
    #[serde(default)]
    what: String,
    #[serde(rename = "withWhom", default)]
    with_whom: String,
    #[serde(default)]
    mood: String,
}

/// Columns `userid,timestamp,where,what,withWhom,mood`; empty cells are
/// unanswered questions.
pub fn read_batteries_csv(r: impl Read) -> Result<Vec<QuestionBattery>, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize::<BatteryRow>() {
        let row = row?;
        let line = out.len() as u64 + 2;
        let timestamp = Timestamp::parse(&row.timestamp).map_err(|e| record_err(line, e))?;
        let mood = match blank_to_none(row.mood) {
            None => None,
            Some(m) => {
                let v: u8 = m.parse().map_err(|_| record_err(line, format!("mood {m:?} is not an integer")))?;
                if !(1..=5).contains(&v) {
                    return Err(record_err(line, format!("mood {v} is outside 1..=5")));
                }
                Some(v)
            }
        };
        out.push(QuestionBattery {
            userid: row.userid,
            timestamp,
            where_: blank_to_none(row.where_),
            what: blank_to_none(row.what),
            with_whom: blank_to_none(row.with_whom),
            mood,
        });
    }
    Ok(out)
}

pub fn write_batteries_csv(batteries: &[QuestionBattery], w: impl Write) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    for b in batteries {
        wtr.serialize(BatteryRow {
            userid: b.userid,
            timestamp: b.timestamp.to_string(),
            where_: b.where_.clone().unwrap_or_default(),
            what: b.what.clone().unwrap_or_default(),
            with_whom: b.with_whom.clone().unwrap_or_default(),
            mood: b.mood.map(|m| m.to_string()).unwrap_or_default(),
        })?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct GpsRow {
    userid: u32,
    timestamp: String,
    lat: f64,
    lon: f64,
    alt: Option<f64>,
}

/// Columns `userid,timestamp,lat,lon,alt`; `alt` may be empty.
pub fn read_gps_csv(r: impl Read) -> Result<Vec<GpsSample>, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize::<GpsRow>() {
        let row = row?;
        let line = out.len() as u64 + 2;
        let timestamp = Timestamp::parse(&row.timestamp).map_err(|e| record_err(line, e))?;
        let mut point = GeoPoint::new(row.lat, row.lon).map_err(|e| record_err(line, e))?;
        if let Some(a) = row.alt {
            point = point.with_alt(a).map_err(|e| record_err(line, e))?;
        }
        out.push(GpsSample { userid: row.userid, timestamp, point });
    }
    Ok(out)
}

pub fn write_gps_csv(samples: &[GpsSample], w: impl Write) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    for s in samples {
        wtr.serialize(GpsRow {
            userid: s.userid,
            timestamp: s.timestamp.to_string(),
            lat: s.point.lat,
            lon: s.point.lon,
            alt: s.point.alt,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>, mut w: impl Write) -> Result<(), IoError> {
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(r: impl BufRead) -> Result<Vec<T>, IoError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| record_err(i as u64 + 1, e))?);
    }
    Ok(out)
}

pub fn to_jsonl_bytes<T: Serialize>(items: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_jsonl(items, &mut buf).expect("writing to memory cannot fail");
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn places_csv_round_trip() {
        let text = "id,name,fclass,type,geometry_wkt\n\
                    n1,Biba's,restaurant,,POINT(11.12 46.07)\n\
                    w2,,building,apartments,\"POLYGON((11.1 46.0,11.2 46.0,11.2 46.1,11.1 46.0))\"\n";
        let places = read_places_csv(text.as_bytes()).unwrap();
        assert_eq!(places.len(), 2);
        assert_eq!(places[0].name.as_deref(), Some("Biba's"));
        assert_eq!(places[0].kind, None);
        assert_eq!(places[1].kind.as_deref(), Some("apartments"));
        let mut buf = Vec::new();
        write_places_csv(&places, &mut buf).unwrap();
        assert_eq!(read_places_csv(buf.as_slice()).unwrap(), places);
    }

    #[test]
    fn bad_wkt_reports_line() {
        let text = "id,name,fclass,type,geometry_wkt\nn1,a,cafe,,POINT(11 46)\nn2,b,cafe,,CIRCLE(1)\n";
        let err = read_places_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 3"), "{err}");
    }

    #[test]
    fn geojson_places() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","id":"n1","geometry":{"type":"Point","coordinates":[11.12,46.07]},
             "properties":{"name":"Biba's","fclass":"restaurant"}},
            {"type":"Feature","geometry":{"type":"LineString","coordinates":[[11.1,46.0],[11.2,46.1]]},
             "properties":{"id":7,"fclass":"footway"}}]}"#;
        let places = read_places_geojson(text).unwrap();
        assert_eq!(places[0].id, "n1");
        assert_eq!(places[1].id, "7");
        assert!(matches!(places[1].geometry, Geometry::Polyline(_)));
        assert!((places[0].geometry.representative_point().lat - 46.07).abs() < 1e-12);
    }

    #[test]
    fn batteries_round_trip_with_blanks() {
        let text = "userid,timestamp,where,what,withWhom,mood\n\
                    73,05-10 13:00:00,Restaurant / Canteen,Eating,Friend(s),4\n\
                    73,05-10 13:30:00,,,,\n";
        let bs = read_batteries_csv(text.as_bytes()).unwrap();
        assert_eq!(bs[0].mood, Some(4));
        assert!(bs[1].is_blank());
        let mut buf = Vec::new();
        write_batteries_csv(&bs, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn mood_out_of_range_rejected() {
        let text = "userid,timestamp,where,what,withWhom,mood\n1,05-10 13:00:00,,,,7\n";
        assert!(read_batteries_csv(text.as_bytes()).unwrap_err().to_string().contains("mood 7"));
    }

    #[test]
    fn gps_round_trip() {
        let text = "userid,timestamp,lat,lon,alt\n1,05-10 13:00:00,46.07,11.12,210.5\n1,05-10 13:01:00,46.07,11.12,\n";
        let s = read_gps_csv(text.as_bytes()).unwrap();
        assert_eq!(s[0].point.alt, Some(210.5));
        assert_eq!(s[1].point.alt, None);
        let mut buf = Vec::new();
        write_gps_csv(&s, &mut buf).unwrap();
        assert_eq!(read_gps_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn jsonl_round_trip() {
        let v = vec![vec![1, 2], vec![3]];
        let bytes = to_jsonl_bytes(&v);
        assert_eq!(read_jsonl::<Vec<i32>>(bytes.as_slice()).unwrap(), v);
    }
}
