use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{Message, CAP_DIST, CAP_SAMPLE, MAX_LINE_BYTES, PROTOCOL_VERSION};
use super::{Generator, GeneratorError};
use crate::dist::CategoricalDistribution;
use crate::seed::jump;
use crate::vocab::{TokenId, Vocabulary};

pub const DEFAULT_BATCH_LIMIT: usize = 1024;
pub const DEFAULT_REPLY_TIMEOUT: Duration = Duration::from_secs(120);

enum ReadEvent {
    Line(String),
    Eof,
    TooLong,
    Failed(String),
}

/// One running peer process.
struct Peer {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<ReadEvent>,
    next_id: u64,
    timeout: Duration,
}

impl Peer {
    fn spawn(command: &str, timeout: Duration) -> Result<Self, GeneratorError> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(command).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::inherit());
        // Own process group, so a stuck peer can be killed along with the shell.
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
        let mut child = cmd.spawn().map_err(GeneratorError::Spawn)?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut buf = Vec::new();
                let event = match reader.by_ref().take(MAX_LINE_BYTES as u64 + 1).read_until(b'\n', &mut buf) {
                    Ok(0) => ReadEvent::Eof,
                    Ok(_) if buf.len() > MAX_LINE_BYTES => ReadEvent::TooLong,
                    Ok(_) => match String::from_utf8(buf) {
                        Ok(line) => ReadEvent::Line(line),
                        Err(_) => ReadEvent::Failed("reply is not valid UTF-8".into()),
                    },
                    Err(e) => ReadEvent::Failed(e.to_string()),
                };
                let stop = !matches!(event, ReadEvent::Line(_));
                if tx.send(event).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, lines: rx, next_id: 0, timeout })
    }

    fn send(&mut self, msg: &Message) -> Result<(), GeneratorError> {
        let stdin = self.stdin.as_mut().ok_or_else(|| GeneratorError::protocol("peer stdin closed", None))?;
        stdin
            .write_all(msg.to_line().as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| GeneratorError::protocol(format!("failed to write request: {e}"), None))
    }

    fn recv(&mut self) -> Result<(Message, String), GeneratorError> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(ReadEvent::Line(line)) => {
                let msg = Message::parse(&line)
                    .map_err(|e| GeneratorError::protocol(format!("malformed reply: {e}"), Some(line.trim_end())))?;
                Ok((msg, line))
            }
            Ok(ReadEvent::Eof) | Err(RecvTimeoutError::Disconnected) => {
                let status = self.child.try_wait().ok().flatten();
                let detail = status.map(|s| format!(" ({s})")).unwrap_or_default();
                Err(GeneratorError::protocol(format!("peer closed its output{detail}"), None))
            }
            Ok(ReadEvent::TooLong) => {
                Err(GeneratorError::protocol(format!("reply exceeds {MAX_LINE_BYTES} bytes"), None))
            }
            Ok(ReadEvent::Failed(e)) => Err(GeneratorError::protocol(format!("failed to read reply: {e}"), None)),
            Err(RecvTimeoutError::Timeout) => {
                Err(GeneratorError::protocol(format!("no reply within {:?}", self.timeout), None))
            }
        }
    }

    fn handshake(&mut self, vocab: &Vocabulary) -> Result<Vec<String>, GeneratorError> {
        self.send(&Message::Hello { vocab: vocab.symbols().to_vec(), protocol: PROTOCOL_VERSION })?;
        let (reply, line) = self.recv()?;
        let line = line.trim_end();
        match reply {
            Message::Ready { capabilities, vocab: peer_vocab, protocol } => {
                if let Some(peer_vocab) = peer_vocab {
                    if peer_vocab != vocab.symbols() {
                        return Err(GeneratorError::VocabMismatch(format!(
                            "peer vocabulary has {} symbols {:?}, expected {:?}",
                            peer_vocab.len(),
                            peer_vocab,
                            vocab.symbols()
                        )));
                    }
                }
                if let Some(p) = protocol.filter(|&p| p != PROTOCOL_VERSION) {
                    return Err(GeneratorError::protocol(format!("unsupported protocol version {p}"), Some(line)));
                }
                if !capabilities.iter().any(|c| c == CAP_SAMPLE) {
                    return Err(GeneratorError::protocol("peer does not advertise `sample`", Some(line)));
                }
                Ok(capabilities)
            }
            Message::Error { message, .. } => {
                Err(GeneratorError::protocol(format!("peer rejected handshake: {message}"), Some(line)))
            }
            _ => Err(GeneratorError::protocol("expected `ready`", Some(line))),
        }
    }

    fn call(&mut self, request: impl FnOnce(u64) -> Message) -> Result<(Message, String), GeneratorError> {
        let id = self.next_id;
        self.next_id += 1;
        self.send(&request(id))?;
        let (reply, line) = self.recv()?;
        let line = line.trim_end().to_owned();
        match &reply {
            Message::Error { message, .. } => {
                Err(GeneratorError::protocol(format!("peer error: {message}"), Some(&line)))
            }
            Message::Samples { id: got, .. } | Message::Distribution { id: got, .. } if *got != id => {
                Err(GeneratorError::protocol(format!("reply id {got} does not match request id {id}"), Some(&line)))
            }
            _ => Ok((reply, line)),
        }
    }

    fn sample(
        &mut self,
        prefix: &[TokenId],
        count: usize,
        seed: u64,
        vocab_size: usize,
    ) -> Result<Vec<TokenId>, GeneratorError> {
        let (reply, line) =
            self.call(|id| Message::Sample { id, prefix: prefix.to_vec(), count: count as u64, seed })?;
        let Message::Samples { tokens, .. } = reply else {
            return Err(GeneratorError::protocol("expected `samples`", Some(&line)));
        };
        if tokens.len() != count {
            return Err(GeneratorError::protocol(
                format!("requested {count} samples, received {}", tokens.len()),
                Some(&line),
            ));
        }
        tokens
            .into_iter()
            .map(|t| {
                if (t as usize) < vocab_size {
                    Ok(t as TokenId)
                } else {
                    Err(GeneratorError::protocol(
                        format!("token id {t} out of range for vocabulary of size {vocab_size}"),
                        Some(&line),
                    ))
                }
            })
            .collect()
    }

    fn dist(&mut self, prefix: &[TokenId], vocab_size: usize) -> Result<CategoricalDistribution, GeneratorError> {
        let (reply, line) = self.call(|id| Message::Dist { id, prefix: prefix.to_vec() })?;
        let Message::Distribution { probs, .. } = reply else {
            return Err(GeneratorError::protocol("expected `distribution`", Some(&line)));
        };
        if probs.len() != vocab_size {
            return Err(GeneratorError::protocol(
                format!("distribution has {} components, expected {vocab_size}", probs.len()),
                Some(&line),
            ));
        }
        CategoricalDistribution::new(probs).map_err(|e| GeneratorError::protocol(e.to_string(), Some(&line)))
    }
}

impl Drop for Peer {
    fn drop(&mut self) {
        // Closing stdin asks the peer to exit.
        drop(self.stdin.take());
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        #[cfg(unix)]
        if let Ok(pid) = libc::pid_t::try_from(self.child.id()) {
            // SAFETY: plain syscall; the group was created for this child.
            unsafe { libc::kill(-pid, libc::SIGKILL) };
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A generator living in another process, driven over the stdio protocol.
///
/// Peers are pooled: a call checks out an idle process (spawning one if none
/// is free) so concurrent callers each own a process. A peer that violates
/// the protocol is discarded.
pub struct ExternalGenerator {
    command: String,
    vocab: Vocabulary,
    batch_limit: usize,
    timeout: Duration,
    supports_dist: bool,
    idle: Mutex<Vec<Peer>>,
    sample_requests: AtomicU64,
    spawned: AtomicU64,
}

impl std::fmt::Debug for ExternalGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalGenerator")
            .field("command", &self.command)
            .field("batch_limit", &self.batch_limit)
            .field("supports_dist", &self.supports_dist)
            .finish_non_exhaustive()
    }
}

/// Starts `command` via `sh -c` and performs the handshake.
pub fn make_external_generator(
    command: &str,
    vocab: Vocabulary,
    batch_limit: usize,
) -> Result<ExternalGenerator, GeneratorError> {
    ExternalGenerator::with_timeout(command, vocab, batch_limit, DEFAULT_REPLY_TIMEOUT)
}

impl ExternalGenerator {
    pub fn with_timeout(
        command: &str,
        vocab: Vocabulary,
        batch_limit: usize,
        timeout: Duration,
    ) -> Result<Self, GeneratorError> {
        if batch_limit == 0 {
            return Err(GeneratorError::InvalidSpec("batch limit must be positive".into()));
        }
        let mut peer = Peer::spawn(command, timeout)?;
        let capabilities = peer.handshake(&vocab)?;
        Ok(Self {
            command: command.to_owned(),
            vocab,
            batch_limit,
            timeout,
            supports_dist: capabilities.iter().any(|c| c == CAP_DIST),
            idle: Mutex::new(vec![peer]),
            sample_requests: AtomicU64::new(0),
            spawned: AtomicU64::new(1),
        })
    }

    /// Number of `sample` messages sent so far.
    pub fn sample_requests(&self) -> u64 {
        self.sample_requests.load(Ordering::Relaxed)
    }

    /// Number of peer processes started so far.
    pub fn processes_spawned(&self) -> u64 {
        self.spawned.load(Ordering::Relaxed)
    }

    fn with_peer<T>(&self, f: impl FnOnce(&mut Peer) -> Result<T, GeneratorError>) -> Result<T, GeneratorError> {
        let pooled = self.idle.lock().unwrap_or_else(|e| e.into_inner()).pop();
        let mut peer = match pooled {
            Some(p) => p,
            None => {
                let mut p = Peer::spawn(&self.command, self.timeout)?;
                self.spawned.fetch_add(1, Ordering::Relaxed);
                let caps = p.handshake(&self.vocab)?;
                if caps.iter().any(|c| c == CAP_DIST) != self.supports_dist {
                    return Err(GeneratorError::protocol("peer capabilities changed between processes", None));
                }
                p
            }
        };
        let out = f(&mut peer)?;
        self.idle.lock().unwrap_or_else(|e| e.into_inner()).push(peer);
        Ok(out)
    }
}

impl Generator for ExternalGenerator {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Splits `count` into requests of at most `batch_limit` samples. The
    /// request at offset `o` carries seed `jump(seed, o)`, which continues
    /// the same sample stream.
    fn sample_next(&self, prefix: &[TokenId], count: usize, seed: u64) -> Result<Vec<TokenId>, GeneratorError> {
        let vocab_size = self.vocab.len();
        self.with_peer(|peer| {
            let mut out = Vec::with_capacity(count);
            let mut offset = 0;
            while offset < count {
                let chunk = self.batch_limit.min(count - offset);
                self.sample_requests.fetch_add(1, Ordering::Relaxed);
                out.extend(peer.sample(prefix, chunk, jump(seed, offset as u64), vocab_size)?);
                offset += chunk;
            }
            Ok(out)
        })
    }

    fn supports_true_dist(&self) -> bool {
        self.supports_dist
    }

    fn true_next_dist(&self, prefix: &[TokenId]) -> Result<CategoricalDistribution, GeneratorError> {
        if !self.supports_dist {
            return Err(GeneratorError::UnsupportedCapability("true_next_dist"));
        }
        let vocab_size = self.vocab.len();
        self.with_peer(|peer| peer.dist(prefix, vocab_size))
    }
}
