//! Deterministic stand-in for an external scorer or embedder, speaking the
//! line protocol on stdin/stdout.
//!
//! `sentret-stub score` answers `{"id", "query", "text"}` with the lexical
//! overlap score; `sentret-stub embed --dim N` answers `{"id", "text"}` with
//! a feature-hashing vector. `--fail-on WORD` turns any request whose text
//! contains WORD into an error record; `--sleep-ms` delays every request.

use std::io;
use std::thread;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use serde_json::{json, Map, Value};

use sentret::rerank::protocol::serve;
use sentret::rerank::{HashEmbedder, OverlapScorer};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Score,
    Embed,
}

#[derive(Parser, Debug)]
#[command(name = "sentret-stub", version, about = "Lexical stub scorer and hashing embedder")]
struct Opts {
    #[arg(value_enum)]
    mode: Mode,
    /// Embedding dimension announced in the handshake.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Send vectors of this length instead of `dim` (contract testing).
    #[arg(long)]
    send_dim: Option<usize>,
    /// Reply with an error record for texts containing this word.
    #[arg(long)]
    fail_on: Option<String>,
    /// Delay before answering each request.
    #[arg(long, default_value_t = 0)]
    sleep_ms: u64,
}

fn text_field<'a>(req: &'a Value, key: &str) -> Result<&'a str, String> {
    req.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("missing string field `{key}`"))
}

fn main() -> io::Result<()> {
    let opts = Opts::parse();

    let embedder = HashEmbedder {
        dim: opts.send_dim.unwrap_or(opts.dim),
    };
    let handshake = match opts.mode {
        Mode::Score => json!({ "protocol": 1 }),
        Mode::Embed => json!({ "protocol": 1, "dim": opts.dim }),
    };
    let handler = |req: &Value| -> Result<Map<String, Value>, String> {
        if opts.sleep_ms > 0 {
            thread::sleep(Duration::from_millis(opts.sleep_ms));
        }
        let text = text_field(req, "text")?;
        if let Some(w) = &opts.fail_on {
            if text.contains(w.as_str()) {
                return Err(format!("refusing text containing `{w}`"));
            }
        }
        let mut m = Map::new();
        match opts.mode {
            Mode::Score => {
                let query = text_field(req, "query")?;
                m.insert("score".into(), json!(OverlapScorer::overlap(query, text)));
            }
            Mode::Embed => {
                m.insert("vector".into(), json!(embedder.vector(text)));
            }
        }
        Ok(m)
    };
    serve(io::stdin().lock(), io::stdout().lock(), handshake, handler)
}
