//! Reference protocol peer: serves a builtin generator over stdin/stdout.
//!
//! Useful as a template for wrapping real models and for exercising the
//! bridge. `--fault` makes it misbehave on purpose once `--fault-after`
//! sample requests have been answered correctly.

use std::io::{self, BufRead, Write};
use std::time::Duration;

use clap::{Parser, ValueEnum};
use lmapprox::generators::protocol::{Message, CAP_DIST, CAP_SAMPLE, MAX_LINE_BYTES, PROTOCOL_VERSION};
use lmapprox::generators::{Generator, GeneratorSpec};
use lmapprox::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Fault {
    None,
    /// Reply with a token id outside the vocabulary.
    BadToken,
    /// Reply with an id that does not match the request.
    WrongId,
    /// Reply with a line that is not JSON.
    Malformed,
    /// Never reply.
    Hang,
    /// Exit without replying.
    Exit,
    /// Reply with one token too few.
    CountMismatch,
    /// Advertise a different vocabulary in `ready`.
    VocabMismatch,
    /// Reply with a line longer than the protocol allows.
    Oversize,
    /// Reply with an `error` message.
    Refuse,
}

#[derive(Debug, Parser)]
#[command(name = "lmapprox-peer", about = "Serve a builtin generator over the stdio protocol")]
struct Args {
    /// builtin:uniform or builtin:markov:...
    #[arg(long, default_value = "builtin:uniform")]
    generator: String,
    #[arg(long, value_enum, default_value_t = Fault::None)]
    fault: Fault,
    #[arg(long, default_value_t = 0)]
    fault_after: u64,
    /// Do not advertise `dist` even when the model has it.
    #[arg(long)]
    sample_only: bool,
}

fn send(out: &mut impl Write, msg: &Message) -> io::Result<()> {
    out.write_all(msg.to_line().as_bytes())?;
    out.flush()
}

fn main() {
    let args = Args::parse();
    let spec: GeneratorSpec = match args.generator.parse() {
        Ok(GeneratorSpec::External { .. }) => {
            eprintln!("lmapprox-peer: external generators cannot be served");
            std::process::exit(1);
        }
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("lmapprox-peer: {e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = serve(&spec, &args) {
        eprintln!("lmapprox-peer: {e}");
        std::process::exit(2);
    }
}

fn serve(spec: &GeneratorSpec, args: &Args) -> Result<(), Box<dyn std::error::Error>> {
    let (fault, fault_after) = (args.fault, args.fault_after);
    let stdin = io::stdin().lock();
    let mut out = io::stdout().lock();
    let mut gen: Option<Box<dyn Generator>> = None;
    let mut answered = 0u64;

    for line in stdin.lines() {
        let line = line?;
        let msg = match Message::parse(&line) {
            Ok(m) => m,
            Err(e) => {
                send(&mut out, &Message::Error { id: None, message: format!("unparseable request: {e}") })?;
                continue;
            }
        };
        match msg {
            Message::Hello { vocab, protocol } => {
                if protocol != PROTOCOL_VERSION {
                    send(&mut out, &Message::Error { id: None, message: format!("unsupported protocol {protocol}") })?;
                    continue;
                }
                let vocab = Vocabulary::new(vocab)?;
                let g = spec.build(&vocab, usize::MAX)?;
                let mut capabilities = vec![CAP_SAMPLE.to_owned()];
                if g.supports_true_dist() && !args.sample_only {
                    capabilities.push(CAP_DIST.to_owned());
                }
                let mut advertised = vocab.symbols().to_vec();
                if fault == Fault::VocabMismatch {
                    advertised.pop();
                }
                gen = Some(g);
                send(
                    &mut out,
                    &Message::Ready { capabilities, vocab: Some(advertised), protocol: Some(PROTOCOL_VERSION) },
                )?;
            }
            Message::Sample { id, prefix, count, seed } => {
                let Some(g) = gen.as_deref() else {
                    send(&mut out, &Message::Error { id: Some(id), message: "hello first".into() })?;
                    continue;
                };
                let faulty = fault != Fault::None && answered >= fault_after;
                answered += 1;
                let tokens: Vec<u64> = match g.sample_next(&prefix, count as usize, seed) {
                    Ok(t) => t.into_iter().map(u64::from).collect(),
                    Err(e) => {
                        send(&mut out, &Message::Error { id: Some(id), message: e.to_string() })?;
                        continue;
                    }
                };
                if !faulty {
                    send(&mut out, &Message::Samples { id, tokens })?;
                    continue;
                }
                match fault {
                    Fault::None | Fault::VocabMismatch => send(&mut out, &Message::Samples { id, tokens })?,
                    Fault::BadToken => {
                        let mut tokens = tokens;
                        tokens[0] = g.vocab().len() as u64;
                        send(&mut out, &Message::Samples { id, tokens })?
                    }
                    Fault::WrongId => send(&mut out, &Message::Samples { id: id + 1, tokens })?,
                    Fault::Malformed => {
                        out.write_all(b"{\"type\":\"samples\",\"id\":")?;
                        out.write_all(b"\n")?;
                        out.flush()?
                    }
                    Fault::Hang => loop {
                        std::thread::sleep(Duration::from_secs(3600));
                    },
                    Fault::Exit => std::process::exit(3),
                    Fault::CountMismatch => {
                        let mut tokens = tokens;
                        tokens.pop();
                        send(&mut out, &Message::Samples { id, tokens })?
                    }
                    Fault::Oversize => {
                        out.write_all(&vec![b' '; MAX_LINE_BYTES + 16])?;
                        out.write_all(b"\n")?;
                        out.flush()?
                    }
                    Fault::Refuse => send(&mut out, &Message::Error { id: Some(id), message: "refused".into() })?,
                }
            }
            Message::Dist { id, prefix } => {
                let reply = match gen.as_deref().filter(|_| !args.sample_only).map(|g| g.true_next_dist(&prefix)) {
                    Some(Ok(d)) => Message::Distribution { id, probs: d.probs().to_vec() },
                    Some(Err(e)) => Message::Error { id: Some(id), message: e.to_string() },
                    None => Message::Error { id: Some(id), message: "dist is not available".into() },
                };
                send(&mut out, &reply)?;
            }
            other => {
                send(&mut out, &Message::Error { id: None, message: format!("unexpected message {other:?}") })?;
            }
        }
    }
    Ok(())
}
