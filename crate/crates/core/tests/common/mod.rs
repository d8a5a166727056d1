#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use policyx::corpus::{load_corpus, Corpus, CorpusFormat};
use policyx::gateway::MockScript;
use policyx::prompting::{MethodId, RoleId, TemplateSet};
use policyx::taxonomy::Taxonomy;
use serde_json::{json, Value};

pub const MODEL: &str = "fixture-model";

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(rel)
}

pub fn corpus() -> Corpus {
    load_corpus(
        &fixture("corpus.csv"),
        CorpusFormat::Csv,
        &Taxonomy::default(),
    )
    .unwrap()
}

pub fn mixed_corpus() -> Corpus {
    load_corpus(
        &fixture("eval/corpus_mixed.csv"),
        CorpusFormat::Csv,
        &Taxonomy::default(),
    )
    .unwrap()
}

pub fn role_script() -> MockScript {
    MockScript::from_path(&fixture("mock_role_based.json")).unwrap()
}

pub fn baseline_script() -> MockScript {
    MockScript::from_path(&fixture("mock_baselines.json")).unwrap()
}

/// Prompt text → scripted answer, for every role-based call on `corpus`.
pub fn role_answers(corpus: &Corpus, script: &MockScript) -> HashMap<String, String> {
    let templates = TemplateSet::builtin();
    let mut out = HashMap::new();
    for record in corpus.records() {
        for role in RoleId::ALL {
            let prompt = templates.render_role(role, record, MODEL);
            out.insert(prompt.text.clone(), script.0[&prompt.source_key()].clone());
        }
    }
    out
}

/// Same for a baseline without exemplars.
pub fn baseline_answers(
    corpus: &Corpus,
    method: MethodId,
    script: &MockScript,
) -> HashMap<String, String> {
    let templates = TemplateSet::builtin();
    corpus
        .records()
        .iter()
        .map(|r| {
            let prompt = templates.render_baseline(method, r, &[], MODEL).unwrap();
            (prompt.text.clone(), script.0[&prompt.source_key()].clone())
        })
        .collect()
}

pub fn chat_body(content: &str) -> String {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]})
        .to_string()
}

type Handler = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server on an ephemeral port. The handler sees the
/// 1-based hit number and the parsed JSON request body.
pub struct TestServer {
    pub base_url: String,
    hits: Arc<AtomicUsize>,
}

impl TestServer {
    pub fn start(handler: impl Fn(usize, &Value) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let handler = handler.clone();
                let counter = counter.clone();
                std::thread::spawn(move || serve(stream, &*handler, &counter));
            }
        });
        TestServer { base_url, hits }
    }

    /// Answers each prompt from `answers`; unknown prompts get a 404.
    pub fn answering(answers: HashMap<String, String>) -> Self {
        TestServer::start(move |_, body| {
            let prompt = body["messages"]
                .as_array()
                .and_then(|m| m.last())
                .and_then(|m| m["content"].as_str())
                .unwrap_or_default();
            match answers.get(prompt) {
                Some(text) => (200, chat_body(text)),
                None => (404, "{\"error\": \"unknown prompt\"}".into()),
            }
        })
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, handler: &Handler, hits: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    loop {
        let mut length = 0usize;
        let mut line = String::new();
        match reader.read_line(&mut line) {
            Ok(0) | Err(_) => return,
            Ok(_) => {}
        }
        loop {
            let mut header = String::new();
            if reader.read_line(&mut header).unwrap_or(0) == 0 {
                return;
            }
            let header = header.trim_end();
            if header.is_empty() {
                break;
            }
            if let Some((name, value)) = header.split_once(':') {
                if name.eq_ignore_ascii_case("content-length") {
                    length = value.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        let n = hits.fetch_add(1, Ordering::SeqCst) + 1;
        let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
        let (status, text) = handler(n, &request);
        let response = format!(
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{text}",
            text.len()
        );
        if writer.write_all(response.as_bytes()).is_err() {
            return;
        }
    }
}
