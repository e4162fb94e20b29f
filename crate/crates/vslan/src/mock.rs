//! In-process stand-in for the entailment scorer: `POST /score` answers
//! with the token-overlap F1 of premise and hypothesis.

use std::collections::BTreeMap;
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use tokio::net::TcpListener;
use tokio::sync::Notify;
use vslan_core::vocab::tokenize;

use crate::reward::{ScoreRequest, ScoreResponse};

/// Multiset token-overlap F1 after metric tokenization.
pub fn overlap_f1(premise: &str, hypothesis: &str) -> f64 {
    let (p, h) = (tokenize(premise), tokenize(hypothesis));
    if p.is_empty() && h.is_empty() {
        return 1.0;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in &p {
        *counts.entry(w).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for w in &h {
        if let Some(c) = counts.get_mut(w.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / h.len() as f64;
    let recall = common as f64 / p.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

struct ServerState {
    served: AtomicUsize,
    max_requests: Option<usize>,
    done: Notify,
}

async fn score(State(st): State<Arc<ServerState>>, body: Bytes) -> Response {
    let resp = match serde_json::from_slice::<ScoreRequest>(&body) {
        Ok(req) => Json(ScoreResponse {
            score: overlap_f1(&req.premise, &req.hypothesis),
        })
        .into_response(),
        Err(e) => (StatusCode::BAD_REQUEST, Json(serde_json::json!({ "error": e.to_string() }))).into_response(),
    };
    let n = st.served.fetch_add(1, Ordering::SeqCst) + 1;
    if st.max_requests.is_some_and(|m| n >= m) {
        st.done.notify_one();
    }
    resp
}

/// Serves until `max_requests` requests were answered (or forever).
pub async fn serve(listener: TcpListener, max_requests: Option<usize>) -> io::Result<()> {
    let state = Arc::new(ServerState {
        served: AtomicUsize::new(0),
        max_requests,
        done: Notify::new(),
    });
    let app = Router::new().route("/score", post(score)).with_state(state.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(async move { state.done.notified().await })
        .await
}

/// Binds `127.0.0.1:port`, reports the bound address through `on_bound`
/// and blocks while serving.
pub fn run_blocking(port: u16, max_requests: Option<usize>, on_bound: impl FnOnce(SocketAddr)) -> io::Result<()> {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = TcpListener::bind(("127.0.0.1", port)).await?;
        on_bound(listener.local_addr()?);
        serve(listener, max_requests).await
    })
}

/// Starts a server on an ephemeral port in a background thread.
pub fn spawn_background(max_requests: Option<usize>) -> io::Result<(SocketAddr, std::thread::JoinHandle<io::Result<()>>)> {
    let (tx, rx) = std::sync::mpsc::channel();
    let handle = std::thread::spawn(move || {
        run_blocking(0, max_requests, |addr| {
            let _ = tx.send(addr);
        })
    });
    let addr = rx
        .recv()
        .map_err(|_| io::Error::other("mock server failed to start"))?;
    Ok((addr, handle))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sentences_score_one() {
        assert_eq!(overlap_f1("a man is playing", "a man is playing"), 1.0);
    }

    #[test]
    fn disjoint_sentences_score_zero() {
        assert_eq!(overlap_f1("a man is playing", "the dog runs"), 0.0);
    }

    #[test]
    fn three_of_four_shared_tokens() {
        // P = 3/4, R = 3/4, F1 = 2PR / (P + R)
        let (p, r) = (0.75, 0.75);
        let oracle = 2.0 * p * r / (p + r);
        assert!((overlap_f1("a man is playing", "a man is talking") - oracle).abs() < 1e-15);
        assert!((oracle - 0.75).abs() < 1e-15);
    }

    #[test]
    fn tokenization_ignores_case_and_punctuation() {
        assert_eq!(overlap_f1("A man, playing.", "a MAN playing"), 1.0);
    }
}
