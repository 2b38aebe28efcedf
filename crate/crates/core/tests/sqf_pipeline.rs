use std::collections::HashSet;
use std::io::Write;

use biaslab::estimation::Outcome;
use biaslab::logistic::IrlsOptions;
use biaslab::sqf::*;
use biaslab::Error;

fn small_data(seed: u64) -> StopData {
    generate_data(
        &GeneratorSpec {
            n: 20_000,
            ..Default::default()
        },
        seed,
    )
    .unwrap()
}

#[test]
fn ingest_from_path_with_custom_schema() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "grp,zone,flag_a,flag_b,srch,found").unwrap();
    writeln!(f, "1,north,yes,no,1,0").unwrap();
    writeln!(f, "0,south,no,no,0,0").unwrap();
    writeln!(f, "1,south,no,yes,1,1").unwrap();
    writeln!(f, "2,north,no,yes,1,1").unwrap();
    let schema = SchemaConfig {
        group_column: "grp".into(),
        group1_values: vec!["1".into()],
        group0_values: vec!["0".into()],
        x_columns: vec![XColumn {
            name: "zone".into(),
            coding: Coding::Categorical,
        }],
        u_columns: vec!["flag_a".into(), "flag_b".into()],
        searched_column: "srch".into(),
        contraband_column: "found".into(),
    };
    let d = ingest_path(f.path(), &schema).unwrap();
    assert_eq!(d.records.len(), 3);
    assert_eq!(d.report.dropped_other_group, 1);
    assert_eq!(
        d.x_levels,
        vec![vec!["north".to_string(), "south".to_string()]]
    );
    assert_eq!(d.records[2].x, vec![1]);
    assert_eq!(d.records[2].u, vec![false, true]);
    assert_eq!(d.records[2].contraband, Some(true));
}

#[test]
fn schema_config_round_trips_through_json() {
    let s = SchemaConfig::default();
    let text = serde_json::to_string(&s).unwrap();
    let back: SchemaConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(s, back);
    let partial: SchemaConfig = serde_json::from_str(r#"{"searched_column": "frisked"}"#).unwrap();
    assert_eq!(partial.group_column, "race");
    assert_eq!(partial.searched_column, "frisked");
}

#[test]
fn split_is_disjoint_exhaustive_and_seeded() {
    let data = small_data(3);
    let searched = data.records.iter().filter(|r| r.searched).count();
    let (a, b) = split(&data.records, 0.5, 4).unwrap();
    assert_eq!(a.len() + b.len(), searched);
    assert_eq!(a.len(), searched / 2);
    assert!(a
        .iter()
        .chain(&b)
        .all(|r| r.searched && r.contraband.is_some()));
    let (a2, _) = split(&data.records, 0.5, 4).unwrap();
    assert_eq!(a, a2);
    let (a3, _) = split(&data.records, 0.5, 5).unwrap();
    assert_ne!(a, a3);

    // identify records by position to check disjointness
    let tagged: Vec<StopRecord> = (0..101)
        .map(|i| StopRecord {
            x: vec![i],
            r: (i % 2) as u8,
            u: vec![],
            searched: true,
            contraband: Some(false),
        })
        .collect();
    let (a, b) = split(&tagged, 0.5, 1).unwrap();
    let ia: HashSet<u32> = a.iter().map(|r| r.x[0]).collect();
    let ib: HashSet<u32> = b.iter().map(|r| r.x[0]).collect();
    assert!(ia.is_disjoint(&ib));
    assert_eq!(ia.len() + ib.len(), 101);
}

#[test]
fn constant_labels_give_flagged_intercept_fit() {
    let data = small_data(8);
    let (a, _) = split(&data.records, 0.5, 1).unwrap();
    let constant: Vec<StopRecord> = a
        .into_iter()
        .map(|mut r| {
            r.contraband = Some(false);
            r
        })
        .collect();
    let risk = fit_risk_model(&constant, &data.level_codes(), &IrlsOptions::default()).unwrap();
    assert!(risk.fit_meta().degenerate);
    assert!(risk.model.coefficients[1..].iter().all(|&b| b == 0.0));
}

#[test]
fn synthetic_set_never_carries_unsearched_labels() {
    let data = small_data(6);
    let (a, b) = split(&data.records, 0.5, 2).unwrap();
    let risk = fit_risk_model(&a, &data.level_codes(), &IrlsOptions::default()).unwrap();
    let mut by_group = [Vec::new(), Vec::new()];
    for r in &b {
        by_group[r.r as usize].push(risk.score(r).unwrap());
    }
    let cal = calibrate_thresholds([&by_group[0], &by_group[1]], 0.5, 0.9).unwrap();
    let set = synthesize(&b, cal.c, &risk).unwrap();
    for (rec, orig) in set.records.iter().zip(&b) {
        let score = risk.score(orig).unwrap();
        match rec.outcome {
            Outcome::Selected { y } => {
                assert!(score > cal.c[orig.r as usize]);
                assert_eq!(Some(y), orig.contraband);
            }
            Outcome::Unselected => assert!(score <= cal.c[orig.r as usize]),
        }
    }
    assert!((set.realized_share - cal.realized_share).abs() < 1e-12);

    let equal = synthesize(&b, [0.2, 0.2], &risk).unwrap();
    assert_eq!(equal.tau, 0.0);
}

#[test]
fn figure_run_is_reproducible_and_writes_expected_columns() {
    let data = small_data(10);
    let cfg = FigureConfig {
        share_grid: vec![0.8, 0.875, 0.95],
        bootstrap_reps: 5,
        ..Default::default()
    };
    let a = replicate_figure(&data, &cfg, 21).unwrap();
    let b = replicate_figure(&data, &cfg, 21).unwrap();
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    let text = String::from_utf8(ca).unwrap();
    assert!(text.starts_with("aa_share,tau,exercise,group,top_share\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 3 * 2);
    assert_eq!(a.chart(), b.chart());
    // tau rises with the share at a fixed rate
    let taus: Vec<f64> = a.calibrations.iter().map(|c| c.tau).collect();
    assert!(taus.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn figure_config_rejects_bad_grids() {
    let data = small_data(1);
    let bad = |grid: Vec<f64>| FigureConfig {
        share_grid: grid,
        ..Default::default()
    };
    assert!(matches!(
        replicate_figure(&data, &bad(vec![]), 1),
        Err(Error::EmptyGrid)
    ));
    assert!(matches!(
        replicate_figure(&data, &bad(vec![0.9, 0.8]), 1),
        Err(Error::GridNotAscending)
    ));
    assert!(replicate_figure(&data, &bad(vec![0.5, 1.0]), 1).is_err());
}

#[test]
fn trend_rule_allows_one_small_inversion() {
    let clean = [(0.5, 0.01), (0.45, 0.01), (0.4, 0.01)];
    assert!(trend_holds(&clean, false).0);
    let small = [(0.5, 0.01), (0.51, 0.01), (0.4, 0.01)];
    assert!(trend_holds(&small, false).0);
    let large = [(0.5, 0.001), (0.52, 0.001), (0.4, 0.001)];
    assert!(!trend_holds(&large, false).0);
    let two = [(0.5, 0.01), (0.51, 0.01), (0.4, 0.01), (0.41, 0.01)];
    assert!(!trend_holds(&two, false).0);
    assert!(trend_holds(&[(0.3, 0.0)], true).0);
}
