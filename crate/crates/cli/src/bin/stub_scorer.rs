//! Test double for the external scorer protocol: a uniform model over a
//! vocabulary of `--vocab` symbols, so every token costs ln V and every
//! sentence has perplexity V.
//!
//! Replies are held back in windows of `--window` requests (or until input
//! pauses) and released in reverse, to exercise out-of-order handling.

use std::io::{self, BufRead, Write};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use clap::Parser;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "gec-stub-scorer",
    about = "Uniform-vocabulary scorer speaking the NDJSON protocol"
)]
struct Opts {
    #[arg(long, default_value_t = 100)]
    vocab: u64,
    /// Release replies in reverse order, this many at a time.
    #[arg(long, default_value_t = 1)]
    window: usize,
    /// Answer this request id with an error object.
    #[arg(long)]
    error_on: Option<u64>,
    /// Answer this request id with a line that is not JSON.
    #[arg(long)]
    garbage_on: Option<u64>,
    /// Answer this request id twice.
    #[arg(long)]
    duplicate_on: Option<u64>,
}

fn reply(opts: &Opts, line: &str) -> Vec<String> {
    let request: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return vec![json!({"id": -1, "error": format!("malformed request: {e}")}).to_string()],
    };
    let (Some(id), Some(text)) = (request["id"].as_u64(), request["text"].as_str()) else {
        return vec![json!({"id": -1, "error": "request needs integer id and string text"}).to_string()];
    };
    if opts.garbage_on == Some(id) {
        return vec!["not json".to_string()];
    }
    if opts.error_on == Some(id) {
        return vec![json!({"id": id, "error": "requested failure"}).to_string()];
    }
    if text.is_empty() {
        return vec![json!({"id": id, "error": "empty text"}).to_string()];
    }
    let cost = (opts.vocab as f64).ln();
    let nll = vec![cost; text.chars().count() + 1];
    let answer = json!({"id": id, "nll": nll}).to_string();
    if opts.duplicate_on == Some(id) {
        vec![answer.clone(), answer]
    } else {
        vec![answer]
    }
}

fn main() {
    let opts = Opts::parse();
    let (tx, rx) = mpsc::channel::<String>();
    thread::spawn(move || {
        for line in io::stdin().lock().lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });

    let stdout = io::stdout();
    let mut held: Vec<String> = Vec::new();
    let flush = |held: &mut Vec<String>| {
        let mut out = stdout.lock();
        for r in held.drain(..).rev() {
            let _ = writeln!(out, "{r}");
        }
        let _ = out.flush();
    };
    loop {
        match rx.recv_timeout(Duration::from_millis(20)) {
            Ok(line) => {
                held.extend(reply(&opts, &line));
                if held.len() >= opts.window {
                    flush(&mut held);
                }
            }
            Err(RecvTimeoutError::Timeout) => flush(&mut held),
            Err(RecvTimeoutError::Disconnected) => {
                flush(&mut held);
                break;
            }
        }
    }
}
