use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use forklens_core::ingest::{MetadataClient, MetadataError, RetryPolicy};

/// Serves canned JSON: `route(path, hit_number) -> (status, extra headers, body)`.
fn serve<F>(route: F) -> (String, Arc<AtomicUsize>)
where
    F: Fn(&str, usize) -> (u16, Vec<(String, String)>, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let host = base.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() {
                continue;
            }
            loop {
                let mut h = String::new();
                if reader.read_line(&mut h).unwrap_or(0) == 0 || h == "\r\n" {
                    break;
                }
            }
            let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let (status, headers, body) = route(&path, n);
            let mut resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
                body.len()
            );
            for (k, v) in headers {
                resp.push_str(&format!("{k}: {}\r\n", v.replace("{base}", &host)));
            }
            resp.push_str("\r\n");
            resp.push_str(&body);
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    (base, hits)
}

fn items(n: usize) -> String {
    let v: Vec<String> = (0..n).map(|i| format!("{{\"id\":{i}}}")).collect();
    format!("[{}]", v.join(","))
}

fn fast_policy(retries: u32) -> RetryPolicy {
    RetryPolicy {
        max_retries: retries,
        base_delay: Duration::from_millis(1),
        max_delay: Duration::from_millis(5),
    }
}

#[test]
fn paginated_counts_follow_link_headers() {
    let (base, _) = serve(|path, _| {
        if path.starts_with("/repos/o/r/stargazers") && path.contains("page=2") {
            (200, vec![], items(12))
        } else if path.starts_with("/repos/o/r/stargazers") {
            let link = "<{base}/repos/o/r/stargazers?per_page=30&page=2>; rel=\"next\"".to_string();
            (200, vec![("Link".into(), link)], items(30))
        } else if path.starts_with("/repos/o/r/issues") {
            let body = r#"[{"state":"open"},{"state":"closed"},{"state":"closed"},{"state":"open","pull_request":{}}]"#;
            (200, vec![], body.to_string())
        } else if path.starts_with("/repos/o/r/releases") {
            (200, vec![], items(3))
        } else {
            (200, vec![], "[]".into())
        }
    });
    let meta = MetadataClient::new(base).with_per_page(30).with_policy(fast_policy(2)).fetch("o/r").unwrap();
    assert_eq!(meta.star, 42);
    assert_eq!((meta.issues_open, meta.issues_closed, meta.issues_total), (1, 2, 3));
    assert_eq!(meta.releases, 3);
    assert_eq!(meta.fork_count, 0);
}

#[test]
fn rate_limit_is_retried_then_succeeds() {
    let (base, hits) = serve(|_, n| {
        if n < 2 {
            (429, vec![("Retry-After".into(), "0".into())], "{}".into())
        } else {
            (200, vec![], "[]".into())
        }
    });
    let meta = MetadataClient::new(base).with_policy(fast_policy(3)).fetch("o/r").unwrap();
    assert_eq!(meta.star, 0);
    assert!(hits.load(Ordering::SeqCst) >= 9);
}

#[test]
fn rate_limit_cap_is_reported() {
    let (base, _) = serve(|_, _| {
        (403, vec![("x-ratelimit-remaining".into(), "0".into())], "{}".into())
    });
    let err = MetadataClient::new(base).with_policy(fast_policy(2)).fetch("o/r").unwrap_err();
    assert!(matches!(err, MetadataError::RateLimitExceeded { retries: 2, .. }), "{err:?}");
}

#[test]
fn not_found_fails_without_retry() {
    let (base, hits) = serve(|_, _| (404, vec![], "{}".into()));
    let err = MetadataClient::new(base).with_policy(fast_policy(4)).fetch("o/r").unwrap_err();
    assert!(matches!(err, MetadataError::NetworkFailure { .. }));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn non_array_body_is_schema_mismatch() {
    let (base, _) = serve(|_, _| (200, vec![], "{\"message\":\"x\"}".into()));
    let err = MetadataClient::new(base).with_policy(fast_policy(0)).fetch("o/r").unwrap_err();
    assert!(matches!(err, MetadataError::SchemaMismatch(_)));
}
