mod common;

use common::{case_dataset, case_pipeline};
use mqmeval::calibration::{calibrate_threshold, percentile_nearest_rank, CalibrationConfig, CalibrationError};
use mqmeval::orchestrator::RecordStage;

const ZH_EN_POOL: [f64; 11] =
    [-1.25, -0.875, -1.625, -0.75, -1.125, -1.3125, -0.6875, -1.0, -1.375, -0.5625, -0.78125];

#[tokio::test]
async fn pools_scripted_confidences() {
    let p = case_pipeline("zh-en", 0.0);
    let data = case_dataset("zh-en");
    let c = calibrate_threshold(&data, &p, &CalibrationConfig::default()).await.unwrap();
    let mut want = ZH_EN_POOL.to_vec();
    want.sort_by(f64::total_cmp);
    assert_eq!(c.pool, want);
    // ceil(0.6 · 11) = 7th smallest
    assert_eq!(c.threshold, -0.875);
    assert_eq!(c.threshold, percentile_nearest_rank(&ZH_EN_POOL, 0.6).unwrap());
    assert_eq!((c.excluded, c.failed_records), (0, 0));

    let top = calibrate_threshold(&data, &p, &CalibrationConfig::new(1.0).unwrap()).await.unwrap();
    assert_eq!(top.threshold, -0.5625);
}

#[tokio::test]
async fn deterministic_across_runs() {
    let data = case_dataset("en-de");
    let mut seen = Vec::new();
    for _ in 0..3 {
        let p = case_pipeline("en-de", 0.0);
        seen.push(calibrate_threshold(&data, &p, &CalibrationConfig::default()).await.unwrap());
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(seen[0].pool, [-1.0625, -0.9375, -0.125]);
    assert_eq!(seen[0].threshold, -0.9375);
}

#[tokio::test]
async fn never_discusses() {
    // Calibration must not consume discussion replies: the scripted tier
    // replies are single-use, so a discussion would exhaust them.
    let p = case_pipeline("zh-en", 0.0);
    calibrate_threshold(&case_dataset("zh-en"), &p, &CalibrationConfig::default()).await.unwrap();
    let results = p.evaluate_dataset(&case_dataset("zh-en")).await.unwrap();
    assert!(results.iter().flat_map(|r| &r.records).all(|r| r.error.is_none()));
    assert!(results.iter().flat_map(|r| &r.records).any(|r| r.entered(RecordStage::CD)));
}

#[tokio::test]
async fn empty_pool_is_an_error() {
    let data = mqmeval::Dataset::from_tsv(
        "clean",
        "system\tdomain\tdoc_id\tseg_id\tsource\ttarget\treference\ns\tnews\td\tx\tNothing wrong here.\tNothing wrong here.\t\n",
        None,
    )
    .unwrap();
    let p = case_pipeline("zh-en", 0.0);
    let err = calibrate_threshold(&data, &p, &CalibrationConfig::default()).await.unwrap_err();
    assert!(matches!(err, CalibrationError::EmptyPool { .. }), "{err}");
}
