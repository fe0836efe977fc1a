mod common;

use common::{case_dataset, case_pipeline, CASE_THRESHOLD};
use mqmeval::orchestrator::{FindingStatus, Provenance, RecordStage, SegmentResult};
use mqmeval::Severity;

fn with_findings(r: &SegmentResult) -> Vec<&str> {
    r.records.iter().filter(|rec| !rec.findings.is_empty()).map(|rec| rec.subtype.as_str()).collect()
}

fn with_status(r: &SegmentResult, status: FindingStatus) -> Vec<&str> {
    r.findings().filter(|f| f.status == status).map(|f| f.subtype.as_str()).collect()
}

fn discussed(r: &SegmentResult) -> Vec<&str> {
    r.records.iter().filter(|rec| rec.entered(RecordStage::CD)).map(|rec| rec.subtype.as_str()).collect()
}

fn confirmed(r: &SegmentResult) -> Vec<(String, Severity, String)> {
    r.confirmed().map(|f| (f.subtype.clone(), f.severity, f.span_text.clone())).collect()
}

fn assert_clean(r: &SegmentResult) {
    for rec in &r.records {
        assert!(!rec.is_flagged(), "{}: {:?} {:?}", rec.subtype, rec.flags, rec.error);
        assert!(rec.findings.iter().all(|f| f.status.is_terminal()));
    }
}

#[tokio::test]
async fn chinese_english_cases() {
    let p = case_pipeline("zh-en", CASE_THRESHOLD);
    let results = p.evaluate_dataset(&case_dataset("zh-en")).await.unwrap();
    assert_eq!(results.len(), 2);

    let c1 = &results[0];
    assert_eq!(c1.seg_id, "case1");
    assert_clean(c1);
    assert_eq!(sorted(with_findings(c1)), ["addition", "awkward", "inappropriate_for_context", "mistranslation", "omission"]);
    assert_eq!(c1.findings().count(), 5);
    assert_eq!(sorted(with_status(c1, FindingStatus::Dropped)), ["addition", "awkward", "inappropriate_for_context", "omission"]);
    let sr_dropped: Vec<_> = c1
        .findings()
        .filter(|f| f.status == FindingStatus::Dropped && f.provenance == Provenance::SR)
        .map(|f| f.subtype.as_str())
        .collect();
    assert_eq!(sorted(sr_dropped), ["inappropriate_for_context", "omission"]);
    assert_eq!(sorted(discussed(c1)), ["addition", "awkward", "mistranslation"]);
    assert_eq!(confirmed(c1), [("mistranslation".to_string(), Severity::Major, "know about it".to_string())]);
    assert_eq!(c1.score.to_f64(), -5.0);

    let c2 = &results[1];
    assert_eq!(c2.seg_id, "case2");
    assert_clean(c2);
    assert_eq!(c2.findings().count(), 6);
    assert_eq!(
        sorted(with_findings(c2)),
        ["addition", "awkward", "grammar", "inconsistency", "mistranslation", "omission"]
    );
    let sr_dropped: Vec<_> =
        c2.findings().filter(|f| f.provenance == Provenance::SR).map(|f| f.subtype.as_str()).collect();
    assert_eq!(sorted(sr_dropped), ["grammar", "omission"]);
    assert_eq!(sorted(discussed(c2)), ["addition", "awkward", "inconsistency", "mistranslation"]);
    assert_eq!(confirmed(c2), [("mistranslation".to_string(), Severity::Major, "the late stage".to_string())]);
    assert_eq!(c2.score.to_f64(), -5.0);
}

#[tokio::test]
async fn english_german_case() {
    let p = case_pipeline("en-de", CASE_THRESHOLD);
    let results = p.evaluate_dataset(&case_dataset("en-de")).await.unwrap();
    let c3 = &results[0];
    assert_clean(c3);
    assert_eq!(sorted(with_findings(c3)), ["awkward", "inconsistency", "mistranslation"]);

    let awkward = c3.records.iter().find(|r| r.subtype == "awkward").unwrap();
    assert_eq!(awkward.stage_path, [RecordStage::SE, RecordStage::SR, RecordStage::Final]);
    assert!(awkward.sr_confidence.unwrap() >= CASE_THRESHOLD);
    assert_eq!(awkward.findings[0].provenance, Provenance::SR);

    let inconsistency = c3.records.iter().find(|r| r.subtype == "inconsistency").unwrap();
    assert_eq!(inconsistency.findings[0].status, FindingStatus::Dropped);
    assert_eq!(discussed(c3), ["mistranslation"]);

    let mut got = confirmed(c3);
    got.sort();
    assert_eq!(
        got,
        [
            ("awkward".to_string(), Severity::Minor, "stärker gemacht wurde".to_string()),
            ("mistranslation".to_string(), Severity::Minor, "Feuerwerk".to_string()),
        ]
    );
    assert_eq!(c3.score.to_f64(), -2.0);
}

#[tokio::test]
async fn gate_extremes_on_case_fixtures() {
    let p = case_pipeline("zh-en", f64::NEG_INFINITY);
    let results = p.evaluate_dataset(&case_dataset("zh-en")).await.unwrap();
    assert!(results.iter().all(|r| discussed(r).is_empty()));
    // Without discussion every SR-validated finding counts.
    assert_eq!(results[0].score.to_f64(), -7.0);

    let p = case_pipeline("en-de", f64::INFINITY);
    let results = p.evaluate_dataset(&case_dataset("en-de")).await;
    // The awkward finding has no scripted discussion, so forcing it into one fails that record.
    let c3 = &results.unwrap()[0];
    let awkward = c3.records.iter().find(|r| r.subtype == "awkward").unwrap();
    assert!(awkward.entered(RecordStage::CD));
    assert!(awkward.error.is_some());
}

fn sorted(mut v: Vec<&str>) -> Vec<&str> {
    v.sort();
    v
}
