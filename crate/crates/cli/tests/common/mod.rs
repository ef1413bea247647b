#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

pub const PASSWORD: &str = "correct-horse";

pub fn command(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_basinfo"));
    c.env("BASINFO_DATA_DIR", dir)
        .env("BASINFO_SECRET", "test-secret")
        .env("BASINFO_PBKDF2_ITERATIONS", "1000")
        .env_remove("BASINFO_PORT");
    c
}

pub fn basinfo(dir: &Path, args: &[&str]) -> Output {
    command(dir).args(args).stdin(Stdio::null()).output().unwrap()
}

pub fn basinfo_with_input(dir: &Path, args: &[&str], input: &str) -> Output {
    let mut child = command(dir)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn ok(o: Output) -> Output {
    assert_eq!(o.status.code(), Some(0), "stdout: {}\nstderr: {}", stdout(&o), stderr(&o));
    o
}

pub fn add_admin(dir: &Path) {
    ok(basinfo_with_input(dir, &["user", "add", "admin", "--admin"], &format!("{PASSWORD}\n")));
}

/// `basinfo serve` on an ephemeral port; killed on drop.
pub struct Running {
    pub child: Child,
    pub base: String,
    agent: ureq::Agent,
}

pub fn spawn_server(dir: &Path) -> Running {
    let mut child = command(dir)
        .args(["serve", "--port", "0"])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
        .to_string();
    let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    Running { child, base, agent }
}

impl Running {
    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn finish(r: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> (u16, String) {
        let mut r = r.unwrap();
        let status = r.status().as_u16();
        (status, r.body_mut().with_config().limit(u64::MAX).read_to_string().unwrap())
    }

    pub fn get(&self, path: &str, token: Option<&str>) -> (u16, String) {
        let mut req = self.agent.get(format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        Self::finish(req.call())
    }

    pub fn post(&self, path: &str, token: Option<&str>, body: &Value) -> (u16, String) {
        let mut req = self
            .agent
            .post(format!("{}{path}", self.base))
            .header("Content-Type", "application/json");
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        Self::finish(req.send(body.to_string()))
    }

    pub fn post_raw(&self, path: &str, token: Option<&str>, content_type: &str, body: &[u8]) -> (u16, String) {
        let mut req = self.agent.post(format!("{}{path}", self.base)).header("Content-Type", content_type);
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        Self::finish(req.send(body))
    }

    pub fn login(&self, user: &str) -> String {
        let (status, body) = self.post(
            "/api/auth/login",
            None,
            &serde_json::json!({"username": user, "password": PASSWORD}),
        );
        assert_eq!(status, 200, "{body}");
        let v: Value = serde_json::from_str(&body).unwrap();
        v["token"].as_str().unwrap().to_string()
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        self.kill();
    }
}
