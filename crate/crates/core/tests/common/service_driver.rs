//! Drives the `serve` binary over HTTP, kills it mid-run, then rebuilds the
//! state offline with `export`.
#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};

use markfeed::corpus::{write_jsonl, CorpusRecord, Position};
use markfeed::planner::ids;
use serde_json::{json, Value};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_markfeed")
}

fn corpus(dir: &Path) {
    let mut recs = Vec::new();
    for t in ids("talk", 9) {
        for p in Position::ALL {
            for k in 0..40 {
                recs.push(CorpusRecord {
                    id: format!("{t}-{p}-{k:02}"),
                    src: format!("das ist satz {k} aus {t} ."),
                    trg: Some(format!("this is sentence {k} from {t} .")),
                    talk_id: t.clone(),
                    position: Some(p),
                    topic: if k % 2 == 0 { "science" } else { "culture" }.into(),
                    hyp: Some(format!("this be sentence {k} of {t} .")),
                });
            }
        }
    }
    write_jsonl(&dir.join("corpus.jsonl"), &recs).unwrap();
}

struct Server {
    child: Child,
    base: String,
}

fn start(dir: &Path) -> Server {
    let mut child = Command::new(bin())
        .args([
            "serve",
            "--set",
            &format!("corpus={}", dir.join("corpus.jsonl").display()),
            "--set",
            &format!("plan={}", dir.join("plan/plan.jsonl").display()),
            "--set",
            "snapshot_every=64",
            "--store",
            &dir.join("store").to_string_lossy(),
            "--addr",
            "127.0.0.1:0",
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
        .to_string();
    Server {
        child,
        base: format!("http://{addr}"),
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

fn get(a: &ureq::Agent, url: &str) -> (u16, String) {
    let mut r = a.get(url).call().unwrap();
    (r.status().as_u16(), r.body_mut().read_to_string().unwrap())
}

fn post(a: &ureq::Agent, url: &str, body: &Value) -> (u16, String) {
    let mut r = a
        .post(url)
        .header("content-type", "application/json")
        .send(body.to_string())
        .unwrap();
    (r.status().as_u16(), r.body_mut().read_to_string().unwrap())
}

fn payload(item: &Value, nonce: &str, i: usize) -> Value {
    let mode = item["instruction_mode"].as_str().unwrap();
    let effective = if mode == "choice" {
        if i % 3 == 0 {
            "postedit"
        } else {
            "marking"
        }
    } else {
        mode
    };
    let n = item["hypothesis_tokens"].as_array().unwrap().len();
    let mut body = json!({
        "sentence_id": item["sentence_id"],
        "mode": mode,
        "keystrokes": i % 17,
        "mouse_actions": i % 5,
        "nonce": nonce,
    });
    if mode == "choice" {
        body["chosen_mode"] = json!(effective);
    }
    if effective == "marking" {
        body["flags"] = json!((0..n).map(|j| (i + j) % 4 == 0).collect::<Vec<_>>());
    } else {
        body["edited_text"] = json!(format!("this is sentence {i} ."));
    }
    body
}

/// What the live server and the offline replay produced.
pub struct KillReplay {
    pub accepted: Vec<Value>,
    pub retry_matched: bool,
    pub last_seq: Value,
    pub live_dataset: String,
    pub live_effort: String,
    pub offline_dataset: String,
    pub offline_effort: String,
    pub stored: Vec<Value>,
}

/// Submits `total` annotations round-robin for three annotators and kills
/// the server with SIGKILL right after submission `kill_at`.
pub fn kill_and_replay(dir: &Path, total: usize, kill_at: usize) -> KillReplay {
    corpus(dir);
    let st = Command::new(bin())
        .args([
            "assign",
            "--talks",
            "9",
            "--annotators",
            "3",
            "--seed",
            "5",
            "--out",
        ])
        .arg(dir.join("plan"))
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(st.success());

    let a = agent();
    let annotators = ids("ann", 3);
    let mut server = start(dir);
    let mut accepted = Vec::new();
    let mut retry_matched = false;
    for i in 0..total {
        let ann = &annotators[i % 3];
        let (code, body) = get(&a, &format!("{}/session/{ann}/next", server.base));
        assert_eq!(code, 200, "{body}");
        let item: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(item["status"], "item", "queue of {ann} ran out at {i}");
        let req = payload(&item, &format!("{ann}-{i}"), i);
        let (code, body) = post(&a, &format!("{}/session/{ann}/submit", server.base), &req);
        assert_eq!(code, 200, "{body}");
        let stored: Value = serde_json::from_str::<Value>(&body).unwrap()["annotation"].clone();
        if i == kill_at {
            // a client that lost the reply retries with the same nonce
            // against the restarted server
            server.child.kill().unwrap();
            server.child.wait().unwrap();
            drop(server);
            server = start(dir);
            let (code, retry) = post(&a, &format!("{}/session/{ann}/submit", server.base), &req);
            assert_eq!(code, 200, "{retry}");
            retry_matched = serde_json::from_str::<Value>(&retry).unwrap()["annotation"] == stored;
        }
        accepted.push(stored);
    }

    let (_, live_dataset) = get(&a, &format!("{}/export/dataset.jsonl", server.base));
    let (_, live_effort) = get(&a, &format!("{}/export/effort.csv", server.base));
    let (_, health) = get(&a, &format!("{}/health", server.base));
    let last_seq = serde_json::from_str::<Value>(&health).unwrap()["last_seq"].clone();
    drop(server);

    let st = Command::new(bin())
        .args(["export", "--set"])
        .arg(format!("corpus={}", dir.join("corpus.jsonl").display()))
        .arg("--set")
        .arg(format!("plan={}", dir.join("plan/plan.jsonl").display()))
        .arg("--store")
        .arg(dir.join("store"))
        .arg("--out")
        .arg(dir.join("offline"))
        .status()
        .unwrap();
    assert!(st.success());
    let read = |f: &str| std::fs::read_to_string(dir.join("offline").join(f)).unwrap();
    let state: Value = serde_json::from_str(&read("state.json")).unwrap();
    KillReplay {
        accepted,
        retry_matched,
        last_seq,
        live_dataset,
        live_effort,
        offline_dataset: read("dataset.jsonl"),
        offline_effort: read("effort.csv"),
        stored: state["annotations"].as_array().unwrap().clone(),
    }
}
