use std::io::Write;

use chrono::NaiveDate;
use gpsmc::data::{
    denormalize, encode_date, future_times, load_csv, normalize, split, TimeFormat, TimeKind,
    TimeSeries,
};
use gpsmc::Error;
use proptest::prelude::*;

fn write_csv(body: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(body.as_bytes()).unwrap();
    f
}

#[test]
fn loads_dates_as_epoch_seconds() {
    let f = write_csv("ds,y\n2020-03-01,3\n2020-01-01,1\n2020-02-01,2\n");
    let s = load_csv(f.path(), "ds", "y", TimeFormat::Auto).unwrap();
    assert_eq!(s.kind, TimeKind::Date);
    assert_eq!(s.times, vec![1_577_836_800.0, 1_580_515_200.0, 1_583_020_800.0]);
    assert_eq!(s.values, vec![1.0, 2.0, 3.0]);
    assert_eq!(s.stamps[0], "2020-01-01");
}

#[test]
fn numeric_times_pass_through() {
    let f = write_csv("t,value,other\n1,0.5,x\n2,0.25,y\n3,-1,z\n");
    let s = load_csv(f.path(), "t", "value", TimeFormat::Auto).unwrap();
    assert_eq!(s.kind, TimeKind::Numeric);
    assert_eq!(s.times, vec![1.0, 2.0, 3.0]);
    let forced = load_csv(f.path(), "t", "value", TimeFormat::Numeric).unwrap();
    assert_eq!(forced.times, s.times);
}

#[test]
fn errors_carry_row_numbers() {
    let dup = write_csv("ds,y\n2020-01-01,1\n2020-02-01,2\n2020-01-01,3\n");
    match load_csv(dup.path(), "ds", "y", TimeFormat::Auto) {
        Err(Error::Data { row, message, .. }) => {
            assert!(message.contains("duplicate"), "{message}");
            assert!(row == 2 || row == 4, "row {row}");
        }
        other => panic!("expected a data error, got {other:?}"),
    }
    let bad = write_csv("ds,y\n2020-01-01,1\n2020-02-01,abc\n");
    assert!(matches!(
        load_csv(bad.path(), "ds", "y", TimeFormat::Auto),
        Err(Error::Data { row: 3, .. })
    ));
    let nan = write_csv("ds,y\n1,1\n2,NaN\n");
    assert!(matches!(
        load_csv(nan.path(), "ds", "y", TimeFormat::Auto),
        Err(Error::Data { row: 3, .. })
    ));
    let date = write_csv("ds,y\n2020-01-01,1\n2020-13-01,2\n");
    assert!(matches!(
        load_csv(date.path(), "ds", "y", TimeFormat::Date),
        Err(Error::Data { row: 3, .. })
    ));
    assert!(matches!(
        load_csv(date.path(), "when", "y", TimeFormat::Date),
        Err(Error::Data { .. })
    ));
}

#[test]
fn normalization_ignores_held_out_rows() {
    let body: String = std::iter::once("ds,y\n".to_string())
        .chain((0..30).map(|i| format!("{},{}\n", i, (i as f64 * 0.7).sin() * 10.0 + i as f64)))
        .collect();
    let full = write_csv(&body);
    let train_only: String = body.lines().take(1 + 24).map(|l| format!("{l}\n")).collect();
    let short = write_csv(&train_only);
    let a = load_csv(full.path(), "ds", "y", TimeFormat::Auto).unwrap();
    let b = load_csv(short.path(), "ds", "y", TimeFormat::Auto).unwrap();
    let (train, test) = split(&a, 6).unwrap();
    assert_eq!(test.len(), 6);
    assert_eq!(normalize(&train).unwrap().record, normalize(&b).unwrap().record);
    assert_eq!(train.hash(), b.hash());
}

#[test]
fn calendar_month_queries() {
    let s = TimeSeries {
        stamps: vec!["2019-12-01".into(), "2020-01-01".into()],
        times: vec![encode_date("2019-12-01").unwrap(), encode_date("2020-01-01").unwrap()],
        values: vec![0.0, 1.0],
        kind: TimeKind::Date,
    };
    let (stamps, times) = future_times(&s, 3).unwrap();
    assert_eq!(stamps, vec!["2020-02-01", "2020-03-01", "2020-04-01"]);
    assert_eq!(times[0], 1_580_515_200.0);
    assert_eq!(times[1], 1_583_020_800.0);
    // Unequal month lengths: February 2020 has 29 days.
    assert_eq!(times[1] - times[0], 29.0 * 86_400.0);
    assert_eq!(future_times(&s, 0).unwrap().1.len(), 0);

    let numeric = TimeSeries::from_numeric(vec![1.0, 2.0, 3.0], vec![0.0; 3]).unwrap();
    assert_eq!(future_times(&numeric, 2).unwrap().1, vec![4.0, 5.0]);
}

#[test]
fn split_preserves_order() {
    let s = TimeSeries::from_numeric(vec![3.0, 1.0, 2.0, 5.0, 4.0], vec![30.0, 10.0, 20.0, 50.0, 40.0])
        .unwrap();
    let (train, test) = split(&s, 2).unwrap();
    assert_eq!(train.times, vec![1.0, 2.0, 3.0]);
    assert_eq!(test.values, vec![40.0, 50.0]);
}

proptest! {
    #[test]
    fn encoding_is_monotone(a in 0i64..40_000, b in 0i64..40_000) {
        prop_assume!(a != b);
        let base = NaiveDate::from_ymd_opt(1950, 1, 1).unwrap();
        let da = base + chrono::Duration::days(a);
        let db = base + chrono::Duration::days(b);
        let ea = encode_date(&da.format("%Y-%m-%d").to_string()).unwrap();
        let eb = encode_date(&db.format("%Y-%m-%d").to_string()).unwrap();
        prop_assert_eq!(a < b, ea < eb);
    }

    #[test]
    fn normalization_round_trips(
        y in prop::collection::vec(-1e6f64..1e6, 2..60),
        t0 in -1e9f64..1e9,
        dt in 0.5f64..1e6,
    ) {
        let t: Vec<f64> = (0..y.len()).map(|i| t0 + dt * i as f64).collect();
        let s = TimeSeries::from_numeric(t.clone(), y.clone()).unwrap();
        let n = normalize(&s).unwrap();
        prop_assert!(n.times.iter().all(|u| (-1e-12..=1.0 + 1e-12).contains(u)));
        let back = denormalize(&n.values, &n.record);
        for (a, b) in back.iter().zip(&y) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(n.record.value_scale));
        }
        for (u, orig) in n.times.iter().zip(&t) {
            let tb = n.record.time_inverse(*u);
            prop_assert!((tb - orig).abs() <= 1e-12 * orig.abs().max(n.record.time_scale));
        }
    }
}
