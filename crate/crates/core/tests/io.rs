use isdm_core::io::{
    format_sig, read_counts_csv, read_grid_csv, read_occupancy_csv, read_points_csv,
    read_regional_geojson, write_counts_csv, write_grid_csv, write_occupancy_csv, write_points_csv,
    write_regional_geojson, GridRow,
};
use isdm_core::mesh::{Point2D, Polygon};
use isdm_core::observation::{CountRecord, OccupancyRecord, RegionalRecord};
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, -1.0f64..1.0, Just(0.0), Just(1.0 / 3.0)]
}

fn point() -> impl Strategy<Value = Point2D> {
    (coord(), coord()).prop_map(|(x, y)| Point2D::new(x, y))
}

proptest! {
    #[test]
    fn points_round_trip(points in prop::collection::vec(point(), 0..20)) {
        let mut buf = Vec::new();
        write_points_csv(&mut buf, &points).unwrap();
        prop_assert_eq!(read_points_csv(buf.as_slice(), "t").unwrap(), points);
    }

    #[test]
    fn counts_round_trip(
        rows in prop::collection::vec((point(), 0u64..1000, prop::option::of(0.01f64..10.0)), 1..20),
    ) {
        let recs: Vec<CountRecord> =
            rows.into_iter().map(|(site, count, duration)| CountRecord { site, count, duration }).collect();
        let mut buf = Vec::new();
        write_counts_csv(&mut buf, &recs).unwrap();
        prop_assert_eq!(read_counts_csv(buf.as_slice(), "t").unwrap(), recs);
    }

    #[test]
    fn occupancy_round_trip(rows in prop::collection::vec((point(), 0u64..10, 0u64..10), 0..20)) {
        let recs: Vec<OccupancyRecord> = rows
            .into_iter()
            .map(|(site, a, b)| OccupancyRecord { site, visits: a.max(b), detections: a.min(b) })
            .collect();
        let mut buf = Vec::new();
        write_occupancy_csv(&mut buf, &recs).unwrap();
        prop_assert_eq!(read_occupancy_csv(buf.as_slice(), "t").unwrap(), recs);
    }

    #[test]
    fn regional_round_trip(rows in prop::collection::vec((point(), 0.01f64..2.0, any::<bool>()), 0..8)) {
        let recs: Vec<RegionalRecord> = rows
            .into_iter()
            .map(|(c, s, present)| RegionalRecord { region: Polygon::rectangle(c.x, c.y, c.x + s, c.y + s), present })
            .collect();
        let text = write_regional_geojson(&recs);
        prop_assert_eq!(read_regional_geojson(&text, "t").unwrap(), recs);
    }

    #[test]
    fn nine_digits_are_within_half_an_ulp_of_the_ninth(v in -1e12f64..1e12) {
        let back: f64 = format_sig(v, 9).parse().unwrap();
        prop_assert!((back - v).abs() <= 5e-9 * v.abs().max(f64::MIN_POSITIVE));
    }
}

#[test]
fn grid_csv_has_species_column_only_when_needed() {
    let rows = vec![
        GridRow {
            x: 0.25,
            y: 0.75,
            mean: 1.0 / 3.0,
            se: Some(0.125),
            species: None,
        },
        GridRow {
            x: 0.75,
            y: 0.75,
            mean: -2.0,
            se: None,
            species: None,
        },
    ];
    let mut buf = Vec::new();
    write_grid_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(
        text,
        "x,y,mean,se\n0.25,0.75,0.333333333,0.125\n0.75,0.75,-2,\n"
    );
    let back = read_grid_csv(buf.as_slice(), "g").unwrap();
    assert_eq!(back[1].se, None);
    let mut with = rows.clone();
    with[0].species = Some("cod".into());
    let mut buf = Vec::new();
    write_grid_csv(&mut buf, &with).unwrap();
    assert!(String::from_utf8(buf)
        .unwrap()
        .starts_with("x,y,mean,se,species\n"));
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(read_occupancy_csv("x,y,visits,detections\n0,0,1,2\n".as_bytes(), "t").is_err());
    assert!(read_points_csv("x,y\n0,NaN\n".as_bytes(), "t").is_err());
    assert!(read_points_csv("x,y,z\n0,0,0\n".as_bytes(), "t").is_err());
    let no_flag = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{},
        "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]]]}}]}"#;
    assert!(read_regional_geojson(no_flag, "t").is_err());
}
