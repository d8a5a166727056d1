mod common;

use std::time::Duration;

use common::{chat_body, TestServer};
use policyx::gateway::{
    BackendConfig, CompletionRequest, Gateway, GatewayError, HttpConfig, MockScript, ResponseCache,
};

fn http(server: &TestServer, attempts: u32) -> BackendConfig {
    let mut config = HttpConfig::new(&server.base_url);
    config.api_key = Some("test-key".into());
    config.max_attempts = attempts;
    config.initial_backoff = Duration::from_millis(5);
    BackendConfig::Http(config)
}

fn request(text: &str) -> CompletionRequest {
    CompletionRequest::new("m", text, 64)
}

#[test]
fn sends_openai_shaped_request() {
    let server = TestServer::start(|_, body| {
        assert_eq!(body["model"], "m");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 64);
        assert_eq!(body["messages"][0]["role"], "user");
        (
            200,
            chat_body(&format!(
                "echo: {}",
                body["messages"][0]["content"].as_str().unwrap()
            )),
        )
    });
    let gw = Gateway::new(http(&server, 1), None, 2).unwrap();
    let resp = gw.complete(&request("hello"), "r/x").unwrap();
    assert_eq!(resp.text, "echo: hello");
    assert!(!resp.from_cache);
    assert_eq!(gw.network_requests(), 1);
}

#[test]
fn retries_429_and_5xx_then_succeeds() {
    let server = TestServer::start(|n, _| match n {
        1 => (429, "slow down".into()),
        2 => (503, "unavailable".into()),
        _ => (200, chat_body("ok")),
    });
    let gw = Gateway::new(http(&server, 3), None, 1).unwrap();
    assert_eq!(gw.complete(&request("q"), "r/x").unwrap().text, "ok");
    assert_eq!(server.hits(), 3);
    assert_eq!(gw.network_requests(), 3);
}

#[test]
fn gives_up_after_max_attempts() {
    let server = TestServer::start(|_, _| (500, "boom".into()));
    let gw = Gateway::new(http(&server, 2), None, 1).unwrap();
    match gw.complete(&request("q"), "r/x") {
        Err(GatewayError::BackendUnavailable {
            attempts,
            last_error,
        }) => {
            assert_eq!(attempts, 2);
            assert!(last_error.contains("500"));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(server.hits(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let server = TestServer::start(|_, _| (400, "bad request".into()));
    let gw = Gateway::new(http(&server, 3), None, 1).unwrap();
    assert!(matches!(
        gw.complete(&request("q"), "r/x"),
        Err(GatewayError::Rejected { status: 400, .. })
    ));
    assert_eq!(server.hits(), 1);
}

#[test]
fn malformed_success_body() {
    let server = TestServer::start(|_, _| (200, "{\"choices\": []}".into()));
    let gw = Gateway::new(http(&server, 3), None, 1).unwrap();
    assert!(matches!(
        gw.complete(&request("q"), "r/x"),
        Err(GatewayError::MalformedResponse(_))
    ));
}

#[test]
fn unreachable_host_is_backend_unavailable() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let mut config = HttpConfig::new(format!("http://{addr}"));
    config.api_key = Some("k".into());
    config.max_attempts = 2;
    config.initial_backoff = Duration::from_millis(1);
    let gw = Gateway::new(BackendConfig::Http(config), None, 1).unwrap();
    assert!(matches!(
        gw.complete(&request("q"), "r/x"),
        Err(GatewayError::BackendUnavailable { attempts: 2, .. })
    ));
}

#[test]
fn missing_key_fails_before_any_call() {
    let config = HttpConfig::new("http://127.0.0.1:9");
    assert!(matches!(
        Gateway::new(BackendConfig::Http(config), None, 1),
        Err(GatewayError::AuthMissing)
    ));
}

#[test]
fn warm_cache_means_zero_network() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(|n, _| (200, chat_body(&format!("answer {n}"))));

    let cold = Gateway::new(http(&server, 1), Some(ResponseCache::new(dir.path())), 2).unwrap();
    let first = cold.complete(&request("q"), "r/x").unwrap();
    assert_eq!(first.text, "answer 1");
    assert_eq!(server.hits(), 1);

    let warm = Gateway::new(http(&server, 1), Some(ResponseCache::new(dir.path())), 2).unwrap();
    let second = warm.complete(&request("q"), "r/x").unwrap();
    assert_eq!(second.text, "answer 1");
    assert!(second.from_cache);
    assert_eq!(warm.network_requests(), 0);
    assert_eq!(server.hits(), 1);

    let mut hotter = request("q");
    hotter.temperature = 0.5;
    assert_eq!(warm.complete(&hotter, "r/x").unwrap().text, "answer 2");
    assert_eq!(
        warm.complete(&request("q2"), "r/x").unwrap().text,
        "answer 3"
    );
}

#[test]
fn replay_serves_cache_and_names_misses() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::new(dir.path());
    cache.put(&request("known"), "cached text").unwrap();

    let gw = Gateway::new(
        BackendConfig::Replay,
        Some(ResponseCache::new(dir.path())),
        1,
    )
    .unwrap();
    assert_eq!(
        gw.complete(&request("known"), "r/x").unwrap().text,
        "cached text"
    );
    match gw.complete(&request("unknown"), "r-9/PolicyAnalyst") {
        Err(GatewayError::CacheMiss { key, source_key }) => {
            assert_eq!(key, request("unknown").cache_key().to_string());
            assert_eq!(source_key, "r-9/PolicyAnalyst");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(gw.network_requests(), 0);
}

#[test]
fn mock_is_keyed_by_source_and_never_cached() {
    let dir = tempfile::tempdir().unwrap();
    let mut script = MockScript::default();
    script.insert("r-1/FoodExpert", "{\"grow\": 1}");
    let gw = Gateway::new(
        BackendConfig::Mock(script),
        Some(ResponseCache::new(dir.path())),
        1,
    )
    .unwrap();
    assert_eq!(
        gw.complete(&request("anything"), "r-1/FoodExpert")
            .unwrap()
            .text,
        "{\"grow\": 1}"
    );
    assert!(matches!(
        gw.complete(&request("anything"), "r-2/FoodExpert"),
        Err(GatewayError::ScriptMiss(_))
    ));
    assert_eq!(ResponseCache::new(dir.path()).stats().entries, 0);
}

#[test]
fn in_flight_limit_is_respected() {
    let server = TestServer::start(|_, _| {
        std::thread::sleep(Duration::from_millis(20));
        (200, chat_body("ok"))
    });
    let gw = Gateway::new(http(&server, 1), None, 3).unwrap();
    std::thread::scope(|s| {
        for i in 0..12 {
            let gw = &gw;
            s.spawn(move || gw.complete(&request(&format!("q{i}")), "r/x").unwrap());
        }
    });
    assert_eq!(server.hits(), 12);
    assert!(gw.peak_in_flight() <= 3, "peak {}", gw.peak_in_flight());
    assert!(gw.peak_in_flight() >= 2);
}

#[test]
fn cache_stats_and_prune() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::new(dir.path());
    cache.put(&request("a"), "1").unwrap();
    cache
        .put(&CompletionRequest::new("other", "b", 64), "2")
        .unwrap();
    let stats = cache.stats();
    assert_eq!(stats.entries, 2);
    assert_eq!(stats.models.get("m"), Some(&1));

    let summary = cache.prune(None, Some("other")).unwrap();
    assert_eq!((summary.removed, summary.kept), (1, 1));
    // nothing is older than the epoch
    assert_eq!(cache.prune(Some(0), None).unwrap().removed, 0);
    assert_eq!(cache.prune(None, None).unwrap().removed, 1);
    assert_eq!(cache.stats().entries, 0);
}
