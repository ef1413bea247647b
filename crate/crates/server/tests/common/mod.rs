#![allow(dead_code)]

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use basinfo_server::service::NewUser;
use basinfo_server::{Config, Service, Session};
use chrono::{DateTime, Duration, Utc};
use serde_json::Value;

pub const PASSWORD: &str = "correct-horse";

pub fn test_config(dir: &std::path::Path) -> Config {
    let mut cfg = Config::new(dir);
    cfg.secret = Some("test-secret".into());
    cfg.pbkdf2_iterations = 1000;
    cfg.asset_limit = 4096;
    cfg
}

/// Clock that tests can move forward.
#[derive(Clone, Default)]
pub struct TestClock(Arc<AtomicI64>);

impl TestClock {
    pub fn advance(&self, d: Duration) {
        self.0.fetch_add(d.num_seconds(), Ordering::SeqCst);
    }

    pub fn clock(&self) -> basinfo_server::service::Clock {
        let offset = self.0.clone();
        Arc::new(move || Utc::now() + Duration::seconds(offset.load(Ordering::SeqCst)))
    }
}

pub struct Server {
    pub svc: Arc<Service>,
    pub http: Http,
    pub clock: TestClock,
    pub dir: tempfile::TempDir,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn open_service(dir: &std::path::Path, clock: &TestClock) -> Arc<Service> {
    Arc::new(Service::open_with_clock(test_config(dir), clock.clock()).unwrap())
}

/// Fresh store with an `admin` account, served on an ephemeral port.
pub fn start() -> Server {
    let dir = tempfile::tempdir().unwrap();
    let clock = TestClock::default();
    let svc = open_service(dir.path(), &clock);
    add_user(&svc, "admin", &[], true);
    serve(svc, clock, dir)
}

pub fn serve(svc: Arc<Service>, clock: TestClock, dir: tempfile::TempDir) -> Server {
    let (port_tx, port_rx) = std::sync::mpsc::channel();
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let served = svc.clone();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            port_tx.send(listener.local_addr().unwrap().port()).unwrap();
            basinfo_server::api::serve(listener, served, async {
                let _ = stop_rx.await;
            })
            .await
            .unwrap();
        });
    });
    let port = port_rx.recv().unwrap();
    Server {
        svc,
        http: Http::new(format!("http://127.0.0.1:{port}")),
        clock,
        dir,
        stop: Some(stop_tx),
        thread: Some(thread),
    }
}

pub fn add_user(svc: &Service, name: &str, groups: &[&str], admin: bool) {
    svc.create_user(
        &Session::system(),
        &NewUser {
            username: name.into(),
            password: PASSWORD.into(),
            groups: groups.iter().map(|g| g.to_string()).collect(),
            is_admin: admin,
        },
    )
    .unwrap();
}

pub struct Http {
    agent: ureq::Agent,
    pub base: String,
}

pub struct Reply {
    pub status: u16,
    pub body: Vec<u8>,
    pub headers: Vec<(String, String)>,
}

impl Reply {
    pub fn text(&self) -> String {
        String::from_utf8(self.body.clone()).unwrap()
    }

    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.text()))
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

fn finish(r: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Reply {
    let mut r = r.unwrap();
    let headers = r
        .headers()
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_str().unwrap_or("").to_string()))
        .collect();
    Reply {
        status: r.status().as_u16(),
        body: r.body_mut().with_config().limit(u64::MAX).read_to_vec().unwrap(),
        headers,
    }
}

impl Http {
    pub fn new(base: String) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self { agent, base }
    }

    pub fn get(&self, path: &str, token: Option<&str>) -> Reply {
        let mut req = self.agent.get(format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        finish(req.call())
    }

    pub fn post_raw(&self, path: &str, token: Option<&str>, content_type: &str, body: &[u8]) -> Reply {
        let mut req = self.agent.post(format!("{}{path}", self.base)).header("Content-Type", content_type);
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        finish(req.send(body))
    }

    pub fn post(&self, path: &str, token: Option<&str>, body: &Value) -> Reply {
        self.post_raw(path, token, "application/json", body.to_string().as_bytes())
    }

    pub fn login(&self, user: &str) -> String {
        let r = self.post("/api/auth/login", None, &serde_json::json!({"username": user, "password": PASSWORD}));
        assert_eq!(r.status, 200, "{}", r.text());
        r.json()["token"].as_str().unwrap().to_string()
    }
}

pub fn now() -> DateTime<Utc> {
    Utc::now()
}
