//! External scorer wire protocol: JSON lines over a child process's standard
//! streams or a TCP socket, plus record/replay for offline runs.
//!
//! Request: `{"id": ..., "query": ..., "candidates": [..., "NULL"]}`.
//! Response: `{"id": ..., "logits": [...]}` with one logit per candidate.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};

use crate::candidates::{Candidate, CandidateList};
use crate::error::{Error, Result};
use crate::kb::QueryAtom;
use crate::lexnorm::NormConfig;
use crate::reranker::{build_request, PairScorer, ScoreRequest, ScoreResponse, NO_PREFERRED_MARKER, NULL_TEXT, PREFERRED_MARKER};
use crate::scorer::{feature_rows, FeatureScorerWeights};

/// Where to reach an external scorer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Endpoint {
    /// Spawn a command and talk over its stdin/stdout.
    Exec(Vec<String>),
    /// Connect to `host:port`.
    Tcp(String),
}

impl Endpoint {
    /// Parses `exec:<command> [args...]` or `tcp:<host:port>`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("exec:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err(Error::Config("exec endpoint needs a command".into()));
            }
            Ok(Endpoint::Exec(argv))
        } else if let Some(addr) = s.strip_prefix("tcp:") {
            Ok(Endpoint::Tcp(addr.to_string()))
        } else {
            Err(Error::Config(format!(
                "scorer endpoint {s:?} must start with exec: or tcp:"
            )))
        }
    }
}

fn proto_err(id: &str, message: impl Into<String>) -> Error {
    Error::Scorer {
        id: id.to_string(),
        message: message.into(),
    }
}

/// One JSON-lines connection. At most one request is in flight.
pub struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Option<Box<dyn Write + Send>>,
    child: Option<Child>,
}

impl Connection {
    pub fn from_streams(reader: impl BufRead + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        Self {
            reader: Box::new(reader),
            writer: Some(Box::new(writer)),
            child: None,
        }
    }

    pub fn open(endpoint: &Endpoint) -> Result<Self> {
        match endpoint {
            Endpoint::Exec(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(|e| proto_err("", format!("cannot spawn {:?}: {e}", argv[0])))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Self {
                    reader: Box::new(BufReader::new(stdout)),
                    writer: Some(Box::new(BufWriter::new(stdin))),
                    child: Some(child),
                })
            }
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(|e| proto_err("", format!("cannot connect to {addr}: {e}")))?;
                let read_half = stream
                    .try_clone()
                    .map_err(|e| proto_err("", format!("socket clone failed: {e}")))?;
                Ok(Self::from_streams(BufReader::new(read_half), BufWriter::new(stream)))
            }
        }
    }

    pub fn exchange(&mut self, req: &ScoreRequest) -> Result<Vec<f64>> {
        let id = req.id.as_str();
        let writer = self.writer.as_mut().ok_or_else(|| proto_err(id, "connection closed"))?;
        let line = serde_json::to_string(req)?;
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .and_then(|_| writer.flush())
            .map_err(|e| proto_err(id, format!("write failed: {e}")))?;
        let mut reply = String::new();
        let n = self
            .reader
            .read_line(&mut reply)
            .map_err(|e| proto_err(id, format!("read failed: {e}")))?;
        if n == 0 {
            return Err(proto_err(id, "scorer closed the connection"));
        }
        let resp: ScoreResponse =
            serde_json::from_str(reply.trim_end()).map_err(|e| proto_err(id, format!("bad response: {e}")))?;
        if resp.id != req.id {
            return Err(proto_err(id, format!("response id {:?} does not match", resp.id)));
        }
        if resp.logits.len() != req.candidates.len() {
            return Err(proto_err(
                id,
                format!("expected {} logits, got {}", req.candidates.len(), resp.logits.len()),
            ));
        }
        Ok(resp.logits)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        // closing stdin asks the child to exit
        self.writer.take();
        if let Some(mut child) = self.child.take() {
            let _ = child.wait();
        }
    }
}

struct PoolState {
    idle: Vec<Connection>,
    open: usize,
}

/// Scorer reached over the wire protocol through a bounded connection pool.
pub struct ProtocolScorer {
    endpoint: Endpoint,
    max_connections: usize,
    retries: usize,
    state: Mutex<PoolState>,
    freed: Condvar,
}

impl ProtocolScorer {
    pub fn new(endpoint: Endpoint, max_connections: usize) -> Self {
        Self {
            endpoint,
            max_connections: max_connections.max(1),
            retries: 1,
            state: Mutex::new(PoolState { idle: Vec::new(), open: 0 }),
            freed: Condvar::new(),
        }
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }

    fn acquire(&self) -> Result<Connection> {
        let mut st = self.state.lock().expect("pool lock");
        loop {
            if let Some(c) = st.idle.pop() {
                return Ok(c);
            }
            if st.open < self.max_connections {
                st.open += 1;
                drop(st);
                return Connection::open(&self.endpoint).inspect_err(|_| {
                    self.state.lock().expect("pool lock").open -= 1;
                    self.freed.notify_one();
                });
            }
            st = self.freed.wait(st).expect("pool lock");
        }
    }

    fn release(&self, conn: Option<Connection>) {
        let mut st = self.state.lock().expect("pool lock");
        match conn {
            Some(c) => st.idle.push(c),
            None => st.open -= 1,
        }
        self.freed.notify_one();
    }

    pub fn request(&self, req: &ScoreRequest) -> Result<Vec<f64>> {
        let mut attempt = 0;
        loop {
            let result = self.acquire().and_then(|mut conn| {
                let r = conn.exchange(req);
                // a failed exchange may leave a half-read line behind; discard the connection
                self.release(r.is_ok().then_some(conn));
                r
            });
            match result {
                Err(e) if e.is_retriable() && attempt < self.retries => {
                    log::warn!("scorer request {:?} failed, retrying: {e}", req.id);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

impl PairScorer for ProtocolScorer {
    fn logits(&self, q: &QueryAtom, list: &CandidateList) -> Result<Vec<f64>> {
        self.request(&build_request(q, list))
    }
}

/// A recorded request with the logits the scorer returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub id: String,
    pub query: String,
    pub candidates: Vec<String>,
    pub logits: Vec<f64>,
}

/// Answers requests from a recording; any request that differs from the
/// recorded one is a protocol error.
pub struct ReplayScorer {
    records: HashMap<String, ReplayRecord>,
}

impl ReplayScorer {
    pub fn from_records(records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        Self {
            records: records.into_iter().map(|r| (r.id.clone(), r)).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(Self::from_records(records))
    }

    pub fn replay(&self, req: &ScoreRequest) -> Result<Vec<f64>> {
        let rec = self
            .records
            .get(&req.id)
            .ok_or_else(|| proto_err(&req.id, "no recording for this id"))?;
        if rec.query != req.query || rec.candidates != req.candidates {
            return Err(proto_err(&req.id, "request differs from the recording"));
        }
        Ok(rec.logits.clone())
    }
}

impl PairScorer for ReplayScorer {
    fn logits(&self, q: &QueryAtom, list: &CandidateList) -> Result<Vec<f64>> {
        self.replay(&build_request(q, list))
    }
}

/// Wraps a scorer and keeps every (request, logits) pair it produced.
pub struct RecordingScorer<S> {
    inner: S,
    records: Mutex<Vec<ReplayRecord>>,
}

impl<S: PairScorer> RecordingScorer<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            records: Mutex::new(Vec::new()),
        }
    }

    /// Recorded pairs sorted by id.
    pub fn records(&self) -> Vec<ReplayRecord> {
        let mut r = self.records.lock().expect("records lock").clone();
        r.sort_by(|a, b| a.id.cmp(&b.id));
        r
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for r in self.records() {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl<S: PairScorer> PairScorer for RecordingScorer<S> {
    fn logits(&self, q: &QueryAtom, list: &CandidateList) -> Result<Vec<f64>> {
        let logits = self.inner.logits(q, list)?;
        let req = build_request(q, list);
        self.records.lock().expect("records lock").push(ReplayRecord {
            id: req.id,
            query: req.query,
            candidates: req.candidates,
            logits: logits.clone(),
        });
        Ok(logits)
    }
}

/// Reference protocol server scoring marker-suffixed texts with the feature
/// weights. Texts carry no embedding, so the candidate-cosine feature is zero.
pub struct TextFeatureServer {
    weights: FeatureScorerWeights,
    norm: NormConfig,
}

impl TextFeatureServer {
    pub fn new(weights: FeatureScorerWeights, norm: NormConfig) -> Self {
        Self { weights, norm }
    }

    pub fn score(&self, req: &ScoreRequest) -> Vec<f64> {
        let (query, has_rba) = match req.query.strip_suffix(NO_PREFERRED_MARKER) {
            Some(q) => (q, false),
            None => (req.query.as_str(), true),
        };
        let q = QueryAtom {
            atom_id: req.id.clone(),
            string: query.to_string(),
            source: String::new(),
            source_concept_id: None,
            semantic_group: String::new(),
            language: String::new(),
            active: true,
            suppressible: false,
            gold: None,
        };
        // NULL may be sent anywhere; score it with the NULL row
        let entries: Vec<Candidate> = req
            .candidates
            .iter()
            .filter(|c| c.as_str() != NULL_TEXT)
            .map(|c| {
                let (s, pref) = match c.strip_suffix(PREFERRED_MARKER) {
                    Some(s) => (s, true),
                    None => (c.as_str(), false),
                };
                Candidate {
                    concept_id: String::new(),
                    representative_atom_id: String::new(),
                    representative_string: s.to_string(),
                    score: 0.0,
                    rba_preferred: pref,
                }
            })
            .collect();
        let list = CandidateList {
            query_atom_id: req.id.clone(),
            k: entries.len(),
            has_rba_synonyms: has_rba,
            entries,
        };
        let w = self.weights.as_array();
        let rows = feature_rows(&q, &list, &self.norm);
        let null_logit: f64 = w.iter().zip(&rows[rows.len() - 1]).map(|(a, b)| a * b).sum();
        let mut concept_logits = rows[..rows.len() - 1]
            .iter()
            .map(|f| w.iter().zip(f).map(|(a, b)| a * b).sum::<f64>());
        req.candidates
            .iter()
            .map(|c| {
                if c == NULL_TEXT {
                    null_logit
                } else {
                    concept_logits.next().expect("one row per candidate")
                }
            })
            .collect()
    }

    /// Serves requests until `input` ends. Malformed lines get an error
    /// object and the loop continues.
    pub fn serve<R: BufRead, W: Write>(&self, input: R, mut output: W) -> std::io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let reply = match serde_json::from_str::<ScoreRequest>(&line) {
                Ok(req) => serde_json::to_string(&ScoreResponse {
                    id: req.id.clone(),
                    logits: self.score(&req),
                }),
                Err(e) => serde_json::to_string(&serde_json::json!({ "error": e.to_string() })),
            }
            .expect("responses serialize");
            writeln!(output, "{reply}")?;
            output.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn req(id: &str, n: usize) -> ScoreRequest {
        let mut candidates: Vec<String> = (0..n).map(|i| format!("cand {i}")).collect();
        candidates.push("NULL".into());
        ScoreRequest {
            id: id.into(),
            query: "cand 1 (No Preferred Candidate)".into(),
            candidates,
        }
    }

    #[test]
    fn endpoint_parsing() {
        assert_eq!(
            Endpoint::parse("exec:python3 bridge.py --stdio").unwrap(),
            Endpoint::Exec(vec!["python3".into(), "bridge.py".into(), "--stdio".into()])
        );
        assert_eq!(Endpoint::parse("tcp:127.0.0.1:9000").unwrap(), Endpoint::Tcp("127.0.0.1:9000".into()));
        assert!(Endpoint::parse("http://x").is_err());
        assert!(Endpoint::parse("exec:").is_err());
    }

    #[test]
    fn exchange_validates_response() {
        let good = "{\"id\":\"q1\",\"logits\":[1.0,2.0,0.5]}\n";
        let mut c = Connection::from_streams(Cursor::new(good.as_bytes().to_vec()), Vec::new());
        assert_eq!(c.exchange(&req("q1", 2)).unwrap(), vec![1.0, 2.0, 0.5]);

        let short = "{\"id\":\"q1\",\"logits\":[1.0]}\n";
        let mut c = Connection::from_streams(Cursor::new(short.as_bytes().to_vec()), Vec::new());
        assert!(c.exchange(&req("q1", 2)).unwrap_err().is_retriable());

        let wrong_id = "{\"id\":\"zz\",\"logits\":[1.0,2.0,3.0]}\n";
        let mut c = Connection::from_streams(Cursor::new(wrong_id.as_bytes().to_vec()), Vec::new());
        assert!(c.exchange(&req("q1", 2)).is_err());

        let mut c = Connection::from_streams(Cursor::new(Vec::new()), Vec::new());
        assert!(c.exchange(&req("q1", 2)).is_err());
    }

    #[test]
    fn reference_server_keeps_arity_and_survives_garbage() {
        let server = TextFeatureServer::new(
            FeatureScorerWeights::from_array([2.0, 1.0, 1.0, 0.0, 1.0, 0.5, 0.3]),
            NormConfig::default(),
        );
        let mut input = String::new();
        input.push_str(&serde_json::to_string(&req("a", 3)).unwrap());
        input.push_str("\nnot json\n");
        input.push_str(&serde_json::to_string(&req("b", 0)).unwrap());
        input.push('\n');
        let mut out = Vec::new();
        server.serve(Cursor::new(input), &mut out).unwrap();
        let lines: Vec<serde_json::Value> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0]["logits"].as_array().unwrap().len(), 4);
        assert!(lines[1]["error"].is_string());
        assert_eq!(lines[2]["id"], "b");
        assert_eq!(lines[2]["logits"].as_array().unwrap().len(), 1);
        // the exact-match candidate beats the others
        let l: Vec<f64> = serde_json::from_value(lines[0]["logits"].clone()).unwrap();
        assert!(l[1] > l[0] && l[1] > l[2]);
    }

    #[test]
    fn duplicate_candidate_texts_get_equal_logits() {
        let server = TextFeatureServer::new(
            FeatureScorerWeights::from_array([2.0, 1.0, 1.0, 0.0, 1.0, 0.5, 0.3]),
            NormConfig::default(),
        );
        let r = ScoreRequest {
            id: "d".into(),
            query: "fever".into(),
            candidates: vec!["pyrexia".into(), "pyrexia".into(), "NULL".into()],
        };
        let l = server.score(&r);
        assert_eq!(l[0], l[1]);
    }

    #[test]
    fn replay_rejects_changed_requests() {
        let r = req("q", 1);
        let rec = ReplayRecord {
            id: r.id.clone(),
            query: r.query.clone(),
            candidates: r.candidates.clone(),
            logits: vec![0.1, 0.2],
        };
        let replay = ReplayScorer::from_records([rec]);
        assert_eq!(replay.replay(&r).unwrap(), vec![0.1, 0.2]);
        let mut changed = r.clone();
        changed.query = "other".into();
        assert!(replay.replay(&changed).is_err());
        assert!(replay.replay(&req("missing", 1)).is_err());
    }
}
