use msnet::metrics::{
    auc, auc_records, cal_n, calibration_error, gauc, grouped_report, read_predictions, rela_impr, write_predictions,
    Group, PredictionHeader, PredictionRecord, ReportMeta,
};
use proptest::prelude::*;

/// All-pairs count, ties worth one half, accumulated in doubled integers.
fn brute_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let (mut doubled, mut pairs) = (0u64, 0u64);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                pairs += 1;
                doubled += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    (pairs > 0).then(|| doubled as f64 / (2 * pairs) as f64)
}

fn rec(user: u64, p: f64, y: u8, part: u8) -> PredictionRecord {
    PredictionRecord {
        user_id: user,
        item_id: user * 31 + u64::from(part),
        p,
        label: y,
        is_new: part % 3 == 0,
        is_limited: part % 2 == 0,
        partition_id: part,
    }
}

/// Scores drawn from a coarse grid so ties are common.
fn scored(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    prop::collection::vec((0u32..20, 0u8..2), 1..max)
        .prop_map(|v| v.into_iter().map(|(s, y)| ((f64::from(s) + 0.5) / 20.0, y)).unzip())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_equals_brute_force((scores, labels) in scored(120)) {
        prop_assert_eq!(auc(&scores, &labels), brute_auc(&scores, &labels));
    }

    #[test]
    fn auc_ignores_monotone_maps((scores, labels) in scored(80), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let mapped: Vec<f64> = scores.iter().map(|s| (a * s + b).tanh() * 3.0 + s.powi(3)).collect();
        prop_assert_eq!(auc(&scores, &labels), auc(&mapped, &labels));
    }

    #[test]
    fn gauc_of_one_user_is_auc((scores, labels) in scored(60)) {
        let records: Vec<_> = scores.iter().zip(&labels).map(|(&p, &y)| rec(7, p, y, 0)).collect();
        match (gauc(&records), auc_records(&records)) {
            (Some(g), Some(a)) => prop_assert!((g - a).abs() <= 1e-15, "{} vs {}", g, a),
            (g, a) => prop_assert_eq!(g, a),
        }
    }

    #[test]
    fn calibration_error_is_symmetric(pcoc in 0.01f64..100.0) {
        let (a, b) = (calibration_error(pcoc), calibration_error(1.0 / pcoc));
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn cal_n_is_zero_only_when_calibrated(factors in prop::collection::vec(0.5f64..2.0, 10)) {
        let mut records = Vec::new();
        for (k, f) in factors.iter().enumerate() {
            records.push(rec(k as u64, 0.5 * f, 1, k as u8));
            records.push(rec(k as u64, 0.5 * f, 0, k as u8));
        }
        let c = cal_n(&records, 10).value.unwrap();
        prop_assert!(c >= 0.0);
        prop_assert_eq!(c == 0.0, factors.iter().all(|f| *f == 1.0));
    }

    #[test]
    fn rela_impr_of_self_is_zero(x in 0.0f64..1.0) {
        prop_assume!(x != 0.5);
        prop_assert_eq!(rela_impr(x, x), Some(0.0));
    }
}

#[test]
fn auc_examples() {
    assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]), Some(1.0));
    assert_eq!(auc(&[0.5, 0.5], &[1, 0]), Some(0.5));
    assert_eq!(auc(&[0.3, 0.4], &[1, 1]), None);
}

#[test]
fn gauc_weighted_by_impressions() {
    let mut r = vec![rec(1, 0.9, 1, 0), rec(1, 0.8, 1, 0), rec(1, 0.2, 0, 0), rec(1, 0.1, 0, 0)];
    r.extend([rec(2, 0.5, 1, 0), rec(2, 0.5, 0, 0)]);
    r.push(rec(3, 0.4, 1, 0));
    let g = gauc(&r).unwrap();
    assert!((g - 5.0 / 6.0).abs() < 1e-15, "{g}");
}

#[test]
fn cal_n_examples() {
    let mut r = Vec::new();
    for k in 0..10u8 {
        r.push(rec(u64::from(k), 0.55, 1, k));
        r.push(rec(u64::from(k), 0.55, 0, k));
    }
    let c = cal_n(&r, 10);
    assert!((c.value.unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(c.excluded, 0);
    assert!((calibration_error(0.8) - 0.25).abs() < 1e-15);
}

#[test]
fn report_reproduces_from_prediction_file() {
    let mut records = Vec::new();
    for i in 0..400u64 {
        let p = ((i * 7919) % 997) as f64 / 1000.0 + 0.001;
        let y = u8::from((i * 104729) % 3 == 0);
        records.push(rec(i % 23, p, y, (i % 10) as u8));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.tsv");
    let header = PredictionHeader {
        model: "m".into(),
        config_hash: "c".into(),
        dataset_hash: "d".into(),
        partition_seed: 0,
    };
    write_predictions(&path, &header, &records).unwrap();
    let (h2, back) = read_predictions(&path).unwrap();
    assert_eq!(h2, header);
    assert_eq!(back, records);
    let meta = ReportMeta::new("m", "c", "d", 0, 2);
    let a = grouped_report(&records, meta.clone(), None);
    let b = grouped_report(&back, meta, Some(&a));
    assert_eq!(a.to_json(), grouped_report(&back, a.meta.clone(), None).to_json());
    for g in &b.groups {
        if g.absent.is_none() {
            assert_eq!(g.rela_impr_auc, Some(0.0), "{:?}", g.group);
        }
    }
}

#[test]
fn empty_group_is_absent() {
    let records: Vec<_> = (0..50u64)
        .map(|i| PredictionRecord {
            is_limited: false,
            ..rec(i % 5, (i as f64 + 0.5) / 50.0, (i % 2) as u8, (i % 10) as u8)
        })
        .collect();
    let r = grouped_report(&records, ReportMeta::new("m", "c", "d", 0, 2), None);
    let limited = r.group(Group::Limited).unwrap();
    assert!(limited.absent.is_some());
    assert_eq!(limited.auc_mean, None);
}
