//! File formats.
//!
//! | content | format | columns / properties |
//! |---|---|---|
//! | boundary, range maps | GeoJSON | `Polygon` (first ring) or `MultiPolygon` geometries |
//! | covariates | CSV | `x,y,name,value` |
//! | counts | CSV | `x,y,count[,duration]` |
//! | occupancy | CSV | `x,y,visits,detections` |
//! | presence-only | CSV | `x,y` |
//! | regional lists | GeoJSON | polygon features with boolean `present` |
//!
//! Readers report the 1-based data row (header excluded) of a bad record.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use geojson::{Feature, FeatureCollection, GeoJson, Geometry, GeometryValue, JsonObject};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Point2D, Polygon, TriangulatedDomain};
use crate::observation::{CountRecord, OccupancyRecord, RegionalRecord};
use crate::process_model::{CovariateField, CovariateSet};

/// `v` with `digits` significant digits, trailing zeros dropped.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{:.*e}", digits.saturating_sub(1), v);
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if !(-5..16).contains(&exp) {
        let (mant, e) = sci.split_at(sci.find('e').unwrap());
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        return format!("{mant}{e}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn parse_err(context: &str, message: impl ToString) -> Error {
    Error::Parse {
        context: context.to_string(),
        message: message.to_string(),
    }
}

fn rows<T: for<'de> Deserialize<'de>>(input: impl Read, context: &str) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<T>().enumerate() {
        out.push(rec.map_err(|e| parse_err(&format!("{context} row {}", i + 1), e))?);
    }
    Ok(out)
}

fn finite(context: &str, row: usize, vals: &[f64]) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(parse_err(
            &format!("{context} row {row}"),
            "non-finite number",
        ))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct XyRow {
    x: f64,
    y: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CountRow {
    x: f64,
    y: f64,
    count: u64,
    #[serde(default)]
    duration: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OccRow {
    x: f64,
    y: f64,
    visits: u64,
    detections: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CovRow {
    x: f64,
    y: f64,
    name: String,
    value: f64,
}

pub fn read_points_csv(input: impl Read, context: &str) -> Result<Vec<Point2D>> {
    let rows: Vec<XyRow> = rows(input, context)?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            finite(context, i + 1, &[r.x, r.y])?;
            Ok(Point2D::new(r.x, r.y))
        })
        .collect()
}

pub fn read_counts_csv(input: impl Read, context: &str) -> Result<Vec<CountRecord>> {
    let rows: Vec<CountRow> = rows(input, context)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            finite(context, i + 1, &[r.x, r.y, r.duration.unwrap_or(1.0)])?;
            Ok(CountRecord {
                site: Point2D::new(r.x, r.y),
                count: r.count,
                duration: r.duration,
            })
        })
        .collect()
}

pub fn read_occupancy_csv(input: impl Read, context: &str) -> Result<Vec<OccupancyRecord>> {
    let rows: Vec<OccRow> = rows(input, context)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            finite(context, i + 1, &[r.x, r.y])?;
            if r.detections > r.visits {
                return Err(parse_err(
                    &format!("{context} row {}", i + 1),
                    "detections exceed visits",
                ));
            }
            Ok(OccupancyRecord {
                site: Point2D::new(r.x, r.y),
                visits: r.visits,
                detections: r.detections,
            })
        })
        .collect()
}

/// Scattered `x,y,name,value` rows projected onto mesh vertices by nearest
/// neighbour, one covariate per distinct name in order of first appearance.
pub fn read_covariates_csv(
    input: impl Read,
    context: &str,
    mesh: &TriangulatedDomain,
) -> Result<CovariateSet> {
    let rows: Vec<CovRow> = rows(input, context)?;
    let mut order = Vec::new();
    let mut by_name: BTreeMap<String, Vec<(Point2D, f64)>> = BTreeMap::new();
    for (i, r) in rows.into_iter().enumerate() {
        finite(context, i + 1, &[r.x, r.y, r.value])?;
        if !by_name.contains_key(&r.name) {
            order.push(r.name.clone());
        }
        by_name
            .entry(r.name)
            .or_default()
            .push((Point2D::new(r.x, r.y), r.value));
    }
    let mut set = CovariateSet::new();
    for name in order {
        set.insert(CovariateField::from_points(
            mesh,
            name.clone(),
            &by_name[&name],
        )?)?;
    }
    Ok(set)
}

fn writer(out: impl Write) -> csv::Writer<impl Write> {
    csv::WriterBuilder::new().from_writer(out)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Numerical(format!("csv writer: {other:?}")),
    }
}

/// Coordinates use the shortest representation that reads back exactly.
pub fn write_points_csv(out: impl Write, points: &[Point2D]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["x", "y"]).map_err(csv_err)?;
    for p in points {
        w.write_record([p.x.to_string(), p.y.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_counts_csv(out: impl Write, records: &[CountRecord]) -> Result<()> {
    let mut w = writer(out);
    let with_duration = records.iter().any(|r| r.duration.is_some());
    if with_duration {
        w.write_record(["x", "y", "count", "duration"])
            .map_err(csv_err)?;
    } else {
        w.write_record(["x", "y", "count"]).map_err(csv_err)?;
    }
    for r in records {
        let mut row = vec![
            r.site.x.to_string(),
            r.site.y.to_string(),
            r.count.to_string(),
        ];
        if with_duration {
            row.push(r.duration.map(|d| d.to_string()).unwrap_or_default());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_occupancy_csv(out: impl Write, records: &[OccupancyRecord]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["x", "y", "visits", "detections"])
        .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.site.x.to_string(),
            r.site.y.to_string(),
            r.visits.to_string(),
            r.detections.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn ring_of(poly: &[Vec<geojson::Position>], context: &str) -> Result<Polygon> {
    let outer = poly
        .first()
        .ok_or_else(|| parse_err(context, "polygon without rings"))?;
    let pts = outer
        .iter()
        .map(|p| match p.as_slice() {
            [x, y, ..] if x.is_finite() && y.is_finite() => Ok(Point2D::new(*x, *y)),
            _ => Err(parse_err(context, "position needs two finite coordinates")),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Polygon::new(pts))
}

fn polygons_of(geom: &Geometry, context: &str, out: &mut Vec<Polygon>) -> Result<()> {
    match &geom.value {
        GeometryValue::Polygon { coordinates } => out.push(ring_of(coordinates, context)?),
        GeometryValue::MultiPolygon { coordinates } => {
            for c in coordinates {
                out.push(ring_of(c, context)?);
            }
        }
        GeometryValue::GeometryCollection { geometries } => {
            for g in geometries {
                polygons_of(g, context, out)?;
            }
        }
        other => {
            return Err(parse_err(
                context,
                format!("expected polygons, found {}", other.type_name()),
            ))
        }
    }
    Ok(())
}

fn parse_geojson(text: &str, context: &str) -> Result<GeoJson> {
    text.parse::<GeoJson>().map_err(|e| parse_err(context, e))
}

/// Every polygon in a GeoJSON document, outer rings only.
pub fn read_polygons_geojson(text: &str, context: &str) -> Result<Vec<Polygon>> {
    let mut out = Vec::new();
    match parse_geojson(text, context)? {
        GeoJson::Geometry(g) => polygons_of(&g, context, &mut out)?,
        GeoJson::Feature(f) => {
            if let Some(g) = &f.geometry {
                polygons_of(g, context, &mut out)?;
            }
        }
        GeoJson::FeatureCollection(fc) => {
            for (i, f) in fc.features.iter().enumerate() {
                if let Some(g) = &f.geometry {
                    polygons_of(g, &format!("{context} feature {}", i + 1), &mut out)?;
                }
            }
        }
    }
    if out.is_empty() {
        return Err(parse_err(context, "no polygon geometry found"));
    }
    Ok(out)
}

/// The first polygon of a GeoJSON document.
pub fn read_boundary_geojson(text: &str, context: &str) -> Result<Polygon> {
    Ok(read_polygons_geojson(text, context)?.swap_remove(0))
}

fn polygon_geometry(p: &Polygon) -> Geometry {
    let mut ring: Vec<geojson::Position> = p.ring.iter().map(|q| [q.x, q.y].into()).collect();
    if let Some(first) = ring.first().cloned() {
        ring.push(first);
    }
    Geometry::new(GeometryValue::Polygon {
        coordinates: vec![ring],
    })
}

fn feature(p: &Polygon, properties: JsonObject) -> Feature {
    Feature {
        bbox: None,
        geometry: Some(polygon_geometry(p)),
        id: None,
        properties: Some(properties),
        foreign_members: None,
    }
}

pub fn write_polygons_geojson(polygons: &[Polygon]) -> String {
    let fc: FeatureCollection = polygons
        .iter()
        .map(|p| feature(p, JsonObject::new()))
        .collect();
    GeoJson::FeatureCollection(fc).to_string()
}

pub fn read_regional_geojson(text: &str, context: &str) -> Result<Vec<RegionalRecord>> {
    let GeoJson::FeatureCollection(fc) = parse_geojson(text, context)? else {
        return Err(parse_err(
            context,
            "regional lists must be a FeatureCollection",
        ));
    };
    fc.features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let ctx = format!("{context} feature {}", i + 1);
            let present = f
                .property("present")
                .and_then(|v| v.as_bool())
                .ok_or_else(|| parse_err(&ctx, "missing boolean `present` property"))?;
            let geom = f
                .geometry
                .as_ref()
                .ok_or_else(|| parse_err(&ctx, "feature without geometry"))?;
            let mut polys = Vec::new();
            polygons_of(geom, &ctx, &mut polys)?;
            if polys.len() != 1 {
                return Err(parse_err(&ctx, "each region must be a single polygon"));
            }
            Ok(RegionalRecord {
                region: polys.swap_remove(0),
                present,
            })
        })
        .collect()
}

pub fn write_regional_geojson(records: &[RegionalRecord]) -> String {
    let fc: FeatureCollection = records
        .iter()
        .map(|r| {
            let mut props = JsonObject::new();
            props.insert("present".into(), r.present.into());
            feature(&r.region, props)
        })
        .collect();
    GeoJson::FeatureCollection(fc).to_string()
}

/// A row of a prediction grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub x: f64,
    pub y: f64,
    pub mean: f64,
    pub se: Option<f64>,
    #[serde(default)]
    pub species: Option<String>,
}

/// `x,y,mean,se[,species]`; values at 9 significant digits, empty `se` when unknown.
pub fn write_grid_csv(out: impl Write, rows: &[GridRow]) -> Result<()> {
    let mut w = writer(out);
    let with_species = rows.iter().any(|r| r.species.is_some());
    let mut header = vec!["x", "y", "mean", "se"];
    if with_species {
        header.push("species");
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut row = vec![
            r.x.to_string(),
            r.y.to_string(),
            format_sig(r.mean, 9),
            r.se.map(|s| format_sig(s, 9)).unwrap_or_default(),
        ];
        if with_species {
            row.push(r.species.clone().unwrap_or_default());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid_csv(input: impl Read, context: &str) -> Result<Vec<GridRow>> {
    rows(input, context)
}
