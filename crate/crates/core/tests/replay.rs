mod common;

use std::sync::Arc;

use common::{case_backend, case_dataset, pipeline_with, CASE_THRESHOLD};
use mqmeval::gateway::{ChatBackend, DiskCache, Gateway, OfflineBackend};
use mqmeval::orchestrator::report::report_jsonl;

#[tokio::test]
async fn warm_cache_replays_offline_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let data = case_dataset("zh-en");

    let mock = case_backend("zh-en");
    let backend: Arc<dyn ChatBackend> = mock.clone();
    let cold = pipeline_with(Gateway::new(backend).with_cache(DiskCache::open(dir.path()).unwrap()), "zh-en", CASE_THRESHOLD);
    let first = report_jsonl(&cold.evaluate_dataset(&data).await.unwrap());
    assert!(mock.uses().iter().sum::<usize>() > 0);

    let mut reports = Vec::new();
    for _ in 0..2 {
        let offline = Arc::new(OfflineBackend::new());
        let backend: Arc<dyn ChatBackend> = offline.clone();
        let warm = pipeline_with(Gateway::new(backend).with_cache(DiskCache::open(dir.path()).unwrap()), "zh-en", CASE_THRESHOLD);
        reports.push(report_jsonl(&warm.evaluate_dataset(&data).await.unwrap()));
        assert_eq!(offline.attempts(), 0);
        assert_eq!(warm.gateway().stats().backend_calls, 0);
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], first);
}

#[tokio::test]
async fn cold_cache_offline_fails_records() {
    let dir = tempfile::tempdir().unwrap();
    let backend: Arc<dyn ChatBackend> = Arc::new(OfflineBackend::new());
    let p = pipeline_with(Gateway::new(backend).with_cache(DiskCache::open(dir.path()).unwrap()), "zh-en", CASE_THRESHOLD);
    let results = p.evaluate_dataset(&case_dataset("zh-en")).await.unwrap();
    assert!(results.iter().flat_map(|r| &r.records).all(|r| r.error.as_deref().is_some_and(|e| e.contains("network access is disabled"))));
}
