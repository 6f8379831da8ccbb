//! Newline-delimited JSON protocol spoken with external generator processes.
//!
//! Version 1. The harness writes requests to the peer's stdin and reads one
//! reply line per request from its stdout, in request order:
//!
//! ```text
//! -> {"type":"hello","vocab":["a",...," "],"protocol":1}
//! <- {"type":"ready","capabilities":["sample","dist"]}
//! -> {"type":"sample","id":7,"prefix":[0,1],"count":3,"seed":42}
//! <- {"type":"samples","id":7,"tokens":[4,0,26]}
//! -> {"type":"dist","id":8,"prefix":[0]}
//! <- {"type":"distribution","id":8,"probs":[...]}
//! <- {"type":"error","id":8,"message":"..."}
//! ```
//!
//! `ready` may also carry `vocab` and `protocol`; when present they must
//! match what the harness sent. `seed` follows the scheme in
//! [`crate::seed`], so peers wrapping a builtin model can reproduce its
//! samples bit for bit.

use serde::{Deserialize, Serialize};

use crate::vocab::TokenId;

pub const PROTOCOL_VERSION: u32 = 1;

/// Longest accepted message line, in bytes.
pub const MAX_LINE_BYTES: usize = 10 * 1024 * 1024;

pub const CAP_SAMPLE: &str = "sample";
pub const CAP_DIST: &str = "dist";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello {
        vocab: Vec<String>,
        protocol: u32,
    },
    Ready {
        capabilities: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vocab: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        protocol: Option<u32>,
    },
    Sample {
        id: u64,
        prefix: Vec<TokenId>,
        count: u64,
        seed: u64,
    },
    Samples {
        id: u64,
        tokens: Vec<u64>,
    },
    Dist {
        id: u64,
        prefix: Vec<TokenId>,
    },
    Distribution {
        id: u64,
        probs: Vec<f64>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
    },
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("protocol messages always serialize");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end_matches(['\n', '\r']))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shapes() {
        let hello = Message::Hello { vocab: vec!["a".into(), " ".into()], protocol: 1 };
        assert_eq!(hello.to_line(), "{\"type\":\"hello\",\"vocab\":[\"a\",\" \"],\"protocol\":1}\n");
        let req = Message::Sample { id: 7, prefix: vec![0, 1], count: 3, seed: 42 };
        assert_eq!(req.to_line(), "{\"type\":\"sample\",\"id\":7,\"prefix\":[0,1],\"count\":3,\"seed\":42}\n");
        let ready = Message::parse("{\"type\":\"ready\",\"capabilities\":[\"sample\",\"dist\"]}").unwrap();
        assert_eq!(
            ready,
            Message::Ready { capabilities: vec!["sample".into(), "dist".into()], vocab: None, protocol: None }
        );
        let err = Message::parse("{\"type\":\"error\",\"message\":\"boom\"}").unwrap();
        assert_eq!(err, Message::Error { id: None, message: "boom".into() });
    }

    #[test]
    fn seeds_keep_full_u64_range() {
        let req = Message::Sample { id: 1, prefix: vec![], count: 1, seed: u64::MAX };
        assert_eq!(Message::parse(&req.to_line()).unwrap(), req);
    }

    #[test]
    fn unknown_type_is_rejected() {
        assert!(Message::parse("{\"type\":\"bogus\"}").is_err());
        assert!(Message::parse("not json").is_err());
    }
}
