//! Optional chat-completions client for the user preference step.
//!
//! The rest of the pipeline only consumes precomputed `user_text` features;
//! this client exists to produce the answers those features are encoded from.

use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde_json::json;

use super::PromptRecord;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ChatClient {
    pub endpoint: String,
    pub token: Option<String>,
    pub model: String,
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl ChatClient {
    pub fn new(endpoint: impl Into<String>, token: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token,
            model: "QwQ-32B".to_string(),
            max_attempts: 5,
            initial_backoff: Duration::from_millis(250),
        }
    }

    fn post_once(&self, prompt: &str) -> std::result::Result<String, (bool, String)> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        })
        .to_string();
        let mut req = ureq::post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        match req.send(body.as_bytes()) {
            Ok(mut resp) => resp
                .body_mut()
                .read_to_string()
                .map_err(|e| (true, e.to_string())),
            Err(ureq::Error::StatusCode(code)) => {
                let transient = code == 429 || code >= 500;
                Err((transient, format!("status {code}")))
            }
            Err(e) => Err((true, e.to_string())),
        }
    }

    /// Sends one prompt with exponential backoff on transient failures and
    /// returns `choices[0].message.content`.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let mut backoff = self.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.max_attempts.max(1) {
            match self.post_once(prompt) {
                Ok(raw) => {
                    debug!("chat response: {raw}");
                    let v: serde_json::Value = serde_json::from_str(&raw)?;
                    return v["choices"][0]["message"]["content"]
                        .as_str()
                        .map(str::to_string)
                        .ok_or_else(|| Error::Http("response lacks choices[0].message.content".into()));
                }
                Err((transient, msg)) => {
                    warn!("chat request attempt {attempt} failed: {msg}");
                    last = msg;
                    if !transient {
                        break;
                    }
                    if attempt < self.max_attempts {
                        thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(Error::Http(last))
    }
}

/// Returns the text between `<answer>` and `</answer>`, if both are present.
pub fn extract_answer(content: &str) -> Option<&str> {
    let start = content.find("<answer>")? + "<answer>".len();
    let end = content[start..].find("</answer>")? + start;
    Some(content[start..end].trim())
}

pub fn fetch_user_preference(record: &PromptRecord, client: &ChatClient) -> Result<PromptRecord> {
    let content = client.complete(&record.prompt_text)?;
    let mut out = record.clone();
    match extract_answer(&content) {
        Some(answer) => {
            out.answer_text = answer.to_string();
            out.unstructured_answer = false;
        }
        None => {
            warn!("unstructured answer for user {}", record.user_id);
            out.answer_text = content;
            out.unstructured_answer = true;
        }
    }
    Ok(out)
}

/// Fetches every record with at most `concurrency` requests in flight.
/// Results keep the input order.
pub fn fetch_all(
    records: &[PromptRecord],
    client: &ChatClient,
    concurrency: usize,
) -> Vec<Result<PromptRecord>> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(concurrency.max(1)) {
        let results: Vec<_> = thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|r| s.spawn(move || fetch_user_preference(r, client)))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        out.extend(results);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned `(status, body)` per connection, in order.
    fn mock_server(responses: Vec<(u16, String)>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}/v1/chat/completions")
    }

    fn completion(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn client(url: String) -> ChatClient {
        ChatClient {
            initial_backoff: Duration::from_millis(1),
            ..ChatClient::new(url, Some("token".into()))
        }
    }

    fn record() -> PromptRecord {
        PromptRecord {
            user_id: 3,
            prompt_text: "hello".into(),
            answer_text: String::new(),
            unstructured_answer: false,
        }
    }

    #[test]
    fn parses_tagged_answer() {
        let url = mock_server(vec![(
            200,
            completion("<think>hmm</think><answer>likes red strollers</answer>"),
        )]);
        let r = fetch_user_preference(&record(), &client(url)).unwrap();
        assert_eq!(r.answer_text, "likes red strollers");
        assert!(!r.unstructured_answer);
    }

    #[test]
    fn retries_transient_failures() {
        let url = mock_server(vec![
            (500, "{}".into()),
            (500, "{}".into()),
            (500, "{}".into()),
            (200, completion("<answer>ok</answer>")),
        ]);
        let r = fetch_user_preference(&record(), &client(url)).unwrap();
        assert_eq!(r.answer_text, "ok");
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let url = mock_server(vec![(503, "{}".into()), (503, "{}".into())]);
        let c = ChatClient {
            max_attempts: 2,
            ..client(url)
        };
        assert!(matches!(fetch_user_preference(&record(), &c), Err(Error::Http(_))));
    }

    #[test]
    fn untagged_answer_kept_with_flag() {
        let url = mock_server(vec![(200, completion("just some prose"))]);
        let r = fetch_user_preference(&record(), &client(url)).unwrap();
        assert_eq!(r.answer_text, "just some prose");
        assert!(r.unstructured_answer);
    }

    #[test]
    fn bounded_concurrency_keeps_order() {
        let url = mock_server(
            (0..4)
                .map(|k| (200, completion(&format!("<answer>a{k}</answer>"))))
                .collect(),
        );
        let recs: Vec<PromptRecord> = (0..4).map(|_| record()).collect();
        let out = fetch_all(&recs, &client(url), 1);
        let answers: Vec<String> = out.into_iter().map(|r| r.unwrap().answer_text).collect();
        assert_eq!(answers, ["a0", "a1", "a2", "a3"]);
    }

    #[test]
    fn answer_extraction() {
        assert_eq!(extract_answer("x<answer> y </answer>z"), Some("y"));
        assert_eq!(extract_answer("<answer>open"), None);
    }
}
