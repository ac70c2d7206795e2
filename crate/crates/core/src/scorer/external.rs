use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{perplexity, Perplexity, ScoreError, Scorer, TokenLogProbs};

/// Environment variable naming the external scorer command.
pub const SCORER_CMD_ENV: &str = "GEC_SCORER_CMD";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerRequest {
    pub id: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScorerReply {
    Scores { id: u64, nll: Vec<f64> },
    Error { id: i64, error: String },
}

struct Connection {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    broken: Option<String>,
}

/// Client for a long-running scorer process speaking newline-delimited JSON
/// on its stdin/stdout.
///
/// Requests on one client are serialized; open several clients for
/// independent connections. Replies may come back in any order.
pub struct ExternalScorer {
    conn: Mutex<Connection>,
    timeout: Duration,
}

impl ExternalScorer {
    /// Runs `command` through `sh -c`.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, ScoreError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });

        Ok(Self {
            conn: Mutex::new(Connection {
                child,
                stdin: Some(BufWriter::new(stdin)),
                lines: rx,
                next_id: 0,
                broken: None,
            }),
            timeout,
        })
    }

    /// Uses the command in `GEC_SCORER_CMD`.
    pub fn from_env(timeout: Duration) -> Result<Self, ScoreError> {
        let cmd = std::env::var(SCORER_CMD_ENV)
            .map_err(|_| ScoreError::InvalidParameters(format!("{SCORER_CMD_ENV} is not set")))?;
        Self::spawn(&cmd, timeout)
    }

    fn request(&self, sentences: &[&str]) -> Result<Vec<Perplexity>, ScoreError> {
        let mut conn = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        let first_id = conn.next_id;
        if let Some(reason) = &conn.broken {
            return Err(ScoreError::Protocol {
                id: first_id,
                message: format!("connection unusable after earlier failure: {reason}"),
            });
        }
        conn.next_id += sentences.len() as u64;

        let result = exchange(&mut conn, first_id, sentences, self.timeout);
        if let Err(e) = &result {
            let cause = match e {
                ScoreError::Batch { source, .. } => source.as_ref(),
                other => other,
            };
            if !matches!(
                cause,
                ScoreError::Remote { .. } | ScoreError::NonFinite { .. } | ScoreError::EmptySentence
            ) {
                conn.broken = Some(e.to_string());
            }
        }
        result
    }
}

fn exchange(
    conn: &mut Connection,
    first_id: u64,
    sentences: &[&str],
    timeout: Duration,
) -> Result<Vec<Perplexity>, ScoreError> {
    if let Some(index) = sentences.iter().position(|s| s.is_empty()) {
        return Err(ScoreError::Batch {
            index,
            source: Box::new(ScoreError::EmptySentence),
        });
    }
    let stdin = conn.stdin.as_mut().expect("stdin open while connected");
    for (offset, text) in sentences.iter().enumerate() {
        let request = ScorerRequest {
            id: first_id + offset as u64,
            text: (*text).to_string(),
        };
        serde_json::to_writer(&mut *stdin, &request).map_err(std::io::Error::from)?;
        stdin.write_all(b"\n")?;
    }
    stdin.flush()?;

    let mut replies: Vec<Option<Result<Perplexity, ScoreError>>> = (0..sentences.len()).map(|_| None).collect();
    let mut outstanding = sentences.len();
    let end_id = first_id + sentences.len() as u64;
    while outstanding > 0 {
        let waiting_on = first_id + replies.iter().position(Option::is_none).unwrap_or(0) as u64;
        let line = match conn.lines.recv_timeout(timeout) {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => {
                return Err(ScoreError::Timeout {
                    id: waiting_on,
                    seconds: timeout.as_secs_f64(),
                })
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(ScoreError::Protocol {
                    id: waiting_on,
                    message: "scorer closed its output".into(),
                })
            }
        };
        let reply: ScorerReply = serde_json::from_str(&line).map_err(|e| ScoreError::Protocol {
            id: waiting_on,
            message: format!("unparseable reply {line:?}: {e}"),
        })?;
        let (id, outcome) = match reply {
            ScorerReply::Scores { id, nll } => {
                let outcome = if nll.iter().any(|v| !v.is_finite()) {
                    Err(ScoreError::NonFinite { id })
                } else {
                    TokenLogProbs::new(nll)
                        .map(|t| perplexity(&t))
                        .map_err(|e| ScoreError::Protocol {
                            id,
                            message: e.to_string(),
                        })
                };
                (id as i64, outcome)
            }
            ScorerReply::Error { id, error } => (
                id,
                Err(ScoreError::Remote {
                    id: id.max(0) as u64,
                    message: error,
                }),
            ),
        };
        if id < first_id as i64 || id >= end_id as i64 {
            return Err(ScoreError::Protocol {
                id: waiting_on,
                message: format!("reply for unknown id {id}"),
            });
        }
        let slot = &mut replies[(id as u64 - first_id) as usize];
        if slot.is_some() {
            return Err(ScoreError::Protocol {
                id: id as u64,
                message: "duplicate reply".into(),
            });
        }
        *slot = Some(outcome);
        outstanding -= 1;
    }

    replies
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.expect("all replies received").map_err(|e| ScoreError::Batch {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

impl Scorer for ExternalScorer {
    fn score(&self, sentence: &str) -> Result<Perplexity, ScoreError> {
        self.request(&[sentence]).map(|mut v| v.remove(0)).map_err(|e| match e {
            ScoreError::Batch { source, .. } => *source,
            other => other,
        })
    }

    fn score_batch(&self, sentences: &[&str]) -> Result<Vec<Perplexity>, ScoreError> {
        if sentences.is_empty() {
            return Ok(Vec::new());
        }
        self.request(sentences)
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        let conn = self.conn.get_mut().unwrap_or_else(|e| e.into_inner());
        conn.stdin.take();
        let _ = conn.child.kill();
        let _ = conn.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format() {
        let req = ScorerRequest {
            id: 7,
            text: "我家".into(),
        };
        assert_eq!(serde_json::to_string(&req).unwrap(), r#"{"id":7,"text":"我家"}"#);

        let ok: ScorerReply = serde_json::from_str(r#"{"id": 3, "nll": [0.5, 1.0]}"#).unwrap();
        assert_eq!(
            ok,
            ScorerReply::Scores {
                id: 3,
                nll: vec![0.5, 1.0]
            }
        );
        let err: ScorerReply = serde_json::from_str(r#"{"id": -1, "error": "bad json"}"#).unwrap();
        assert_eq!(
            err,
            ScorerReply::Error {
                id: -1,
                error: "bad json".into()
            }
        );
    }

    #[test]
    fn scores_through_a_shell_pipeline() {
        // replies nll=[0,0] to every request
        let cmd = r#"while IFS= read -r line; do id=${line#*\"id\":}; id=${id%%,*}; printf '{"id":%s,"nll":[0,0]}\n' "$id"; done"#;
        let scorer = ExternalScorer::spawn(cmd, Duration::from_secs(10)).unwrap();
        assert_eq!(scorer.score("ab").unwrap().value(), 1.0);
        let batch = scorer.score_batch(&["a", "b", "c"]).unwrap();
        assert!(batch.iter().all(|p| p.value() == 1.0));
    }

    #[test]
    fn silent_scorer_times_out() {
        let scorer = ExternalScorer::spawn("cat > /dev/null", Duration::from_millis(200)).unwrap();
        let err = scorer.score("a").unwrap_err();
        assert!(matches!(err, ScoreError::Timeout { id: 0, .. }), "{err}");
        assert!(scorer.score("b").is_err());
    }

    #[test]
    fn empty_sentence_is_rejected_locally() {
        let scorer = ExternalScorer::spawn("cat > /dev/null", Duration::from_millis(200)).unwrap();
        assert!(matches!(scorer.score(""), Err(ScoreError::EmptySentence)));
    }
}
