//! One prompt through the HTTP backend.
//!
//! ```text
//! cargo run --example http_backend [-- ENDPOINT MODEL [ollama|openai]]
//! ```
//!
//! Without arguments a throwaway local server stands in for the model: it
//! fails the first request with a 503 to show the transport retry, then
//! answers in the Ollama chat format.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use cpa::llm::{ApiFlavor, BackendConfig, HttpBackend, PromptContext, PromptKind, complete};
use cpa::prompt::{PromptParts, PromptTemplate};
use cpa::reduce::CandidateSet;
use cpa::table::{RelationLabel, Table};

fn stand_in_server() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let addr = listener.local_addr().expect("addr");
    thread::spawn(move || {
        let replies = [
            (503, r#"{"error":"loading model"}"#),
            (
                200,
                r#"{"message":{"role":"assistant","content":"The column lists writers, so: author"}}"#,
            ),
        ];
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else {
                return;
            };
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
            let mut request = vec![0; length];
            let _ = reader.read_exact(&mut request);
            let mut stream = reader.into_inner();
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    format!("http://{addr}")
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = BackendConfig {
        backoff_base_ms: 100,
        ..BackendConfig::default()
    };
    match args.as_slice() {
        [] => config.endpoint = stand_in_server(),
        [endpoint, model, rest @ ..] => {
            config.endpoint = endpoint.clone();
            config.model_name = model.clone();
            if let Some(flavor) = rest.first() {
                config.api_flavor = flavor.parse::<ApiFlavor>().map_err(anyhow::Error::msg)?;
            }
        }
        _ => anyhow::bail!("usage: http_backend [ENDPOINT MODEL [ollama|openai]]"),
    }
    let backend = HttpBackend::new(config.clone())?;
    println!("POST {}", backend.url());

    let table = Table::new(
        "Book_0",
        2,
        vec![
            vec!["The Hobbit".into(), "J. R. R. Tolkien".into()],
            vec!["Dune".into(), "Frank Herbert".into()],
        ],
    )?;
    let candidates = CandidateSet::from_relations(
        ["author", "name", "publisher"].map(|r| RelationLabel::new(r).expect("label")),
    );
    let prompt =
        PromptTemplate::default().render_annotation_prompt(&table, 1, &candidates, PromptParts::all(), 5)?;
    let context = PromptContext {
        kind: PromptKind::Annotate,
        table_id: table.id().into(),
        column_index: Some(1),
        options: candidates.relations().iter().map(|r| r.to_string()).collect(),
    };
    let response = complete(&backend, &prompt, &context, &config, false)?;
    println!(
        "{} answered in {:.3}s after {} transport retr{}: {:?}",
        response.model_used,
        response.latency_seconds,
        response.transport_retries,
        if response.transport_retries == 1 {
            "y"
        } else {
            "ies"
        },
        response.text
    );
    let parsed = cpa::llm::parse_single_relation(&response.text, &candidates);
    println!(
        "parsed relation: {}",
        parsed.as_ref().map_or("(none)", |r| r.as_str())
    );
    Ok(())
}
