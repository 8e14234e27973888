//! HTTP endpoint against an in-process server speaking the segment-query
//! protocol.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use segquery_core::chunk::{
    EndpointError, SegmentQueryRequest, SegmentQueryResponse, SEGMENT_QUERY_PATH,
};
use segquery_core::synthetic::{write_synthetic, SyntheticSpec};
use segquery_core::{
    load_manifest, run_chunked, ChunkError, ChunkSpec, HttpEndpoint, InferConfig, ModelEndpoint,
    OracleEndpoint, RetryPolicy,
};

struct ServerState {
    oracle: OracleEndpoint,
    fail_first: u32,
    calls: AtomicU32,
    drop_mask: bool,
}

async fn segment_query(
    State(state): State<Arc<ServerState>>,
    Json(req): Json<SegmentQueryRequest>,
) -> Result<Json<SegmentQueryResponse>, (StatusCode, String)> {
    let n = state.calls.fetch_add(1, Ordering::SeqCst);
    if n < state.fail_first {
        return Err((StatusCode::SERVICE_UNAVAILABLE, "warming up".into()));
    }
    let mut resp = state
        .oracle
        .submit(&req.image_id, &req.query)
        .map_err(|e| (StatusCode::NOT_FOUND, e.to_string()))?;
    if state.drop_mask {
        resp.masks.pop();
    }
    Ok(Json(resp))
}

fn spawn_server(state: ServerState) -> (SocketAddr, Arc<ServerState>) {
    let state = Arc::new(state);
    let app = Router::new()
        .route(SEGMENT_QUERY_PATH, post(segment_query))
        .with_state(state.clone());
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || rt.block_on(async { axum::serve(listener, app).await.unwrap() }));
    (addr, state)
}

fn fixture() -> (tempfile::TempDir, segquery_core::Manifest) {
    let dir = tempfile::tempdir().unwrap();
    let path = write_synthetic(dir.path(), &SyntheticSpec::default()).unwrap();
    let manifest = load_manifest(path).unwrap();
    (dir, manifest)
}

fn cfg(spec: ChunkSpec) -> InferConfig {
    InferConfig {
        spec,
        parallelism: 3,
        retry: RetryPolicy {
            max_retries: 2,
            base_backoff: Duration::from_millis(1),
        },
        ..Default::default()
    }
}

#[test]
fn http_matches_in_process_oracle() {
    let (_dir, m) = fixture();
    let oracle = OracleEndpoint::from_manifest(&m).unwrap();
    let (addr, _) = spawn_server(ServerState {
        oracle: oracle.clone(),
        fail_first: 0,
        calls: AtomicU32::new(0),
        drop_mask: false,
    });
    let http = HttpEndpoint::new(&format!("http://{addr}"), Duration::from_secs(5)).unwrap();
    let ids = m.table.ids();
    for rec in &m.images {
        let over_http = run_chunked(
            &rec.image_id,
            &ids,
            &m.table,
            &http,
            &cfg(ChunkSpec::Fraction(3)),
        )
        .unwrap();
        let local = run_chunked(
            &rec.image_id,
            &ids,
            &m.table,
            &oracle,
            &cfg(ChunkSpec::Whole),
        )
        .unwrap();
        assert_eq!(over_http.canonical_jsonl(), local.canonical_jsonl());
    }
}

#[test]
fn transient_failures_are_retried() {
    let (_dir, m) = fixture();
    let (addr, state) = spawn_server(ServerState {
        oracle: OracleEndpoint::from_manifest(&m).unwrap(),
        fail_first: 2,
        calls: AtomicU32::new(0),
        drop_mask: false,
    });
    let http = HttpEndpoint::new(&format!("http://{addr}"), Duration::from_secs(5)).unwrap();
    let config = InferConfig {
        parallelism: 1,
        ..cfg(ChunkSpec::Whole)
    };
    let pred = run_chunked(
        &m.images[0].image_id,
        &m.table.ids(),
        &m.table,
        &http,
        &config,
    )
    .unwrap();
    assert_eq!(pred.classes.len(), m.table.len());
    assert_eq!(state.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn persistent_failure_names_chunk() {
    let (_dir, m) = fixture();
    let (addr, _) = spawn_server(ServerState {
        oracle: OracleEndpoint::from_manifest(&m).unwrap(),
        fail_first: u32::MAX,
        calls: AtomicU32::new(0),
        drop_mask: false,
    });
    let http = HttpEndpoint::new(&format!("http://{addr}"), Duration::from_secs(5)).unwrap();
    let config = InferConfig {
        parallelism: 1,
        ..cfg(ChunkSpec::Whole)
    };
    let err = run_chunked(
        &m.images[0].image_id,
        &m.table.ids(),
        &m.table,
        &http,
        &config,
    )
    .unwrap_err();
    match err {
        ChunkError::Transport {
            chunk: 0,
            attempts: 3,
            source: EndpointError::Status { status: 503, .. },
        } => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let http = HttpEndpoint::new(&format!("http://{addr}"), Duration::from_secs(2)).unwrap();
    assert!(matches!(
        http.submit("img", "<IMAGE> Can you segment the sky in this image?"),
        Err(EndpointError::Transport(_))
    ));
}

#[test]
fn mask_count_mismatch_over_http() {
    let (_dir, m) = fixture();
    let (addr, _) = spawn_server(ServerState {
        oracle: OracleEndpoint::from_manifest(&m).unwrap(),
        fail_first: 0,
        calls: AtomicU32::new(0),
        drop_mask: true,
    });
    let http = HttpEndpoint::new(&format!("http://{addr}"), Duration::from_secs(5)).unwrap();
    let rec = m.images.iter().find(|r| !r.present_ids.is_empty()).unwrap();
    let err = run_chunked(
        &rec.image_id,
        &m.table.ids(),
        &m.table,
        &http,
        &cfg(ChunkSpec::Whole),
    )
    .unwrap_err();
    assert!(
        matches!(err, ChunkError::MaskCount { chunk: 0, .. }),
        "{err:?}"
    );
}
