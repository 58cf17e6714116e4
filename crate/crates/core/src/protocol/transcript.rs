//! Line-oriented session transcript.
//!
//! ```text
//! cascade-transcript v1
//! meta n=32 seed=7 generator=pcg64-mcg schedule=custom:4,8
//! R 1 pass=1 sent=8 inferred=0 split=0 a=01101001 b=01111001 blocks=p1:0-4,p1:4-8,... flips=-
//! R 2 pass=1 sent=1 inferred=1 split=1 a=0 b=1 blocks=p1:8-10,~p1:10-12 flips=-
//! END m=9 rounds=2 residual=0
//! ```
//!
//! One `R` record per channel use. `a`/`b` are the parities sent by the
//! reference and working side, in the order of the non-`~` entries of
//! `blocks`; `~` entries are parities both sides derived without sending.
//! `split` counts bisection steps in the round, `flips` lists corrected frame
//! positions. Lines starting with `#` are comments.

use std::fmt::Write as _;

use super::{BlockRef, PassTag};
use crate::error::{Error, Result};

pub const TRANSCRIPT_MAGIC: &str = "cascade-transcript v1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParityRecord {
    pub block: BlockRef,
    pub alice: bool,
    pub bob: bool,
    pub sent: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundRecord {
    pub index: u64,
    pub phase: PassTag,
    pub parities: Vec<ParityRecord>,
    pub splits: u32,
    pub flips: Vec<usize>,
}

impl RoundRecord {
    pub fn sent(&self) -> usize {
        self.parities.iter().filter(|p| p.sent).count()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    pub n: usize,
    pub seed: u64,
    pub schedule: String,
    pub rounds: Vec<RoundRecord>,
    /// Ledger totals at the time the transcript was closed.
    pub m: u64,
    pub total_rounds: u64,
    pub residual: Option<usize>,
}

fn bits(values: impl Iterator<Item = bool>) -> String {
    let s: String = values.map(|b| if b { '1' } else { '0' }).collect();
    if s.is_empty() {
        "-".into()
    } else {
        s
    }
}

impl Transcript {
    pub(crate) fn open_round(&mut self, phase: PassTag) {
        let index = self.rounds.len() as u64 + 1;
        self.rounds.push(RoundRecord { index, phase, parities: Vec::new(), splits: 0, flips: Vec::new() });
    }

    pub(crate) fn record(&mut self, rec: ParityRecord) {
        if let Some(r) = self.rounds.last_mut() {
            r.parities.push(rec);
        }
    }

    pub(crate) fn split(&mut self) {
        if let Some(r) = self.rounds.last_mut() {
            r.splits += 1;
        }
    }

    pub(crate) fn flip(&mut self, pos: usize) {
        if let Some(r) = self.rounds.last_mut() {
            r.flips.push(pos);
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{TRANSCRIPT_MAGIC}");
        let _ = writeln!(
            out,
            "meta n={} seed={} generator={} schedule={}",
            self.n,
            self.seed,
            crate::bitframe::GENERATOR_ID.split(' ').next().unwrap_or(""),
            self.schedule.replace(' ', "_")
        );
        for r in &self.rounds {
            let sent = r.parities.iter().filter(|p| p.sent);
            let inferred = r.parities.iter().filter(|p| !p.sent);
            let mut blocks: Vec<String> = sent.clone().map(|p| p.block.to_string()).collect();
            blocks.extend(inferred.clone().map(|p| format!("~{}", p.block)));
            let flips: Vec<String> = r.flips.iter().map(|f| f.to_string()).collect();
            let _ = writeln!(
                out,
                "R {} {} sent={} inferred={} split={} a={} b={} blocks={} flips={}",
                r.index,
                r.phase.phase_label(),
                sent.clone().count(),
                inferred.count(),
                r.splits,
                bits(sent.clone().map(|p| p.alice)),
                bits(sent.map(|p| p.bob)),
                if blocks.is_empty() { "-".into() } else { blocks.join(",") },
                if flips.is_empty() { "-".into() } else { flips.join(",") },
            );
        }
        let residual = self.residual.map(|r| r.to_string()).unwrap_or_else(|| "?".into());
        let _ = writeln!(out, "END m={} rounds={} residual={}", self.m, self.total_rounds, residual);
        out
    }
}

/// Totals recovered by [`replay`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplaySummary {
    pub rounds: u64,
    pub sent: u64,
    pub inferred: u64,
    pub flips: u64,
    pub ledger_m: u64,
    pub ledger_rounds: u64,
    /// Human-readable list of every inconsistency found.
    pub problems: Vec<String>,
}

impl ReplaySummary {
    pub fn consistent(&self) -> bool {
        self.problems.is_empty()
    }
}

fn field<'a>(tokens: &[&'a str], key: &str, line: usize) -> Result<&'a str> {
    tokens
        .iter()
        .find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| Error::Transcript { line, message: format!("missing field `{key}`") })
}

fn number(text: &str, line: usize) -> Result<u64> {
    text.parse().map_err(|_| Error::Transcript { line, message: format!("not a number: {text:?}") })
}

fn bit_count(text: &str, line: usize) -> Result<u64> {
    if text == "-" {
        return Ok(0);
    }
    if !text.chars().all(|c| c == '0' || c == '1') {
        return Err(Error::Transcript { line, message: format!("not a bit string: {text:?}") });
    }
    Ok(text.len() as u64)
}

/// Re-derive ledger totals from a transcript and compare them with the
/// recorded `END` line. Malformed input is an error; well-formed input with
/// mismatching counts yields a summary listing the problems.
pub fn replay(text: &str) -> Result<ReplaySummary> {
    let mut summary = ReplaySummary::default();
    let mut lines =
        text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, l)) if l == TRANSCRIPT_MAGIC => {}
        other => {
            return Err(Error::Transcript {
                line: other.map(|(line, _)| line).unwrap_or(1),
                message: format!("expected `{TRANSCRIPT_MAGIC}` header"),
            })
        }
    }
    let mut saw_end = false;
    for (line, l) in lines {
        let tokens: Vec<&str> = l.split_whitespace().collect();
        match tokens.first().copied() {
            Some("meta") => {}
            Some("R") => {
                if saw_end {
                    summary.problems.push(format!("line {line}: round after END"));
                }
                let index = number(tokens.get(1).copied().unwrap_or(""), line)?;
                summary.rounds += 1;
                if index != summary.rounds {
                    summary.problems.push(format!("line {line}: round index {index}, expected {}", summary.rounds));
                }
                let sent = number(field(&tokens, "sent", line)?, line)?;
                let inferred = number(field(&tokens, "inferred", line)?, line)?;
                let a = bit_count(field(&tokens, "a", line)?, line)?;
                let b = bit_count(field(&tokens, "b", line)?, line)?;
                let blocks = field(&tokens, "blocks", line)?;
                let (mut listed_sent, mut listed_inferred) = (0u64, 0u64);
                if blocks != "-" {
                    for blk in blocks.split(',') {
                        let (is_inferred, body) = match blk.strip_prefix('~') {
                            Some(rest) => (true, rest),
                            None => (false, blk),
                        };
                        body.parse::<BlockRef>().map_err(|e| Error::Transcript { line, message: e.to_string() })?;
                        if is_inferred {
                            listed_inferred += 1;
                        } else {
                            listed_sent += 1;
                        }
                    }
                }
                if a != sent || b != sent || listed_sent != sent {
                    summary
                        .problems
                        .push(format!("line {line}: sent={sent} but a has {a}, b has {b}, blocks list {listed_sent}"));
                }
                if listed_inferred != inferred {
                    summary
                        .problems
                        .push(format!("line {line}: inferred={inferred} but blocks list {listed_inferred}"));
                }
                let flips = field(&tokens, "flips", line)?;
                if flips != "-" {
                    for f in flips.split(',') {
                        number(f, line)?;
                        summary.flips += 1;
                    }
                }
                summary.sent += sent;
                summary.inferred += inferred;
            }
            Some("END") => {
                saw_end = true;
                summary.ledger_m = number(field(&tokens, "m", line)?, line)?;
                summary.ledger_rounds = number(field(&tokens, "rounds", line)?, line)?;
            }
            _ => return Err(Error::Transcript { line, message: format!("unrecognised record {l:?}") }),
        }
    }
    if !saw_end {
        summary.problems.push("missing END record".into());
    } else {
        if summary.ledger_m != summary.sent {
            summary
                .problems
                .push(format!("ledger m={} but transcript sends {} parities", summary.ledger_m, summary.sent));
        }
        if summary.ledger_rounds != summary.rounds {
            summary
                .problems
                .push(format!("ledger rounds={} but transcript has {} rounds", summary.ledger_rounds, summary.rounds));
        }
    }
    Ok(summary)
}
