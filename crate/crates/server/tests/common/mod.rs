#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use ledgerlens::{generate_synthetic, import_tags, Corpus, GeneratorConfig, SyntheticCorpus};
use ledgerlens_server::{serve, ServerConfig};
use reqwest::{Client, Method, StatusCode};
use serde_json::Value;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

pub fn synthetic(cfg: &GeneratorConfig) -> (SyntheticCorpus, Corpus) {
    let synth = generate_synthetic(cfg).unwrap();
    let mut jsonl = Vec::new();
    synth.write_jsonl(&mut jsonl).unwrap();
    let mut corpus = Corpus::from_jsonl(jsonl.as_slice()).unwrap();
    let mut csv = Vec::new();
    synth.write_tags_csv(&mut csv).unwrap();
    let tags = import_tags(csv.as_slice(), &corpus.store).unwrap();
    corpus.set_tags(tags);
    (synth, corpus)
}

pub fn small_config(seed: u64) -> GeneratorConfig {
    GeneratorConfig { seed, n_entities: 300, duration_days: 400, ..GeneratorConfig::default() }
}

pub struct Server {
    pub base: String,
    pub http: Client,
    stop: Option<oneshot::Sender<()>>,
}

impl Server {
    pub async fn start(corpus: Corpus, config: ServerConfig) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}/api/v1", listener.local_addr().unwrap());
        let (stop, rx) = oneshot::channel::<()>();
        tokio::spawn(serve(listener, Arc::new(corpus), config, async {
            let _ = rx.await;
        }));
        Self { base, http: Client::new(), stop: Some(stop) }
    }

    pub async fn call(&self, method: Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status();
        let bytes = resp.bytes().await.unwrap();
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, value)
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        self.call(Method::GET, path, None).await
    }

    pub async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, path, Some(body)).await
    }

    pub async fn put(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::PUT, path, Some(body)).await
    }

    pub async fn delete(&self, path: &str) -> (StatusCode, Value) {
        self.call(Method::DELETE, path, None).await
    }

    /// Creates a session and returns its id.
    pub async fn session(&self, body: Value) -> String {
        let (status, v) = self.post("/sessions", body).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_owned()
    }

    /// Polls a clustering job until it leaves the running state.
    pub async fn wait_job(&self, job: &str) -> Value {
        for _ in 0..6000 {
            let (status, v) = self.get(&format!("/jobs/{job}")).await;
            assert_eq!(status, StatusCode::OK, "{v}");
            if v["status"] != "running" {
                return v;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("job {job} did not finish");
    }

    /// Every entity id of a node, fetched page by page.
    pub async fn all_entities(&self, sid: &str, query: &str, page_size: usize) -> Vec<Value> {
        let mut out = Vec::new();
        for page in 0.. {
            let (status, v) =
                self.get(&format!("/sessions/{sid}/entities?{query}&page={page}&page_size={page_size}")).await;
            assert_eq!(status, StatusCode::OK, "{v}");
            let cards = v["entities"].as_array().unwrap();
            if cards.is_empty() {
                break;
            }
            out.extend(cards.iter().cloned());
        }
        out
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
    }
}

pub fn node_count(tree: &Value, id: u64) -> u64 {
    tree["nodes"].as_array().unwrap().iter().find(|n| n["id"] == id).unwrap()["count"].as_u64().unwrap()
}
