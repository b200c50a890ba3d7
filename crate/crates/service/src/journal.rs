//! Append-only JSON-lines journal of suggestions and feedback.
//!
//! Each line is `crc32-hex json\n`, the checksum covering the JSON text. A
//! damaged or unterminated final line is treated as a torn write: it is
//! dropped and truncated away when the journal is opened for appending. Any
//! other damaged line makes the journal unreadable.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::feedback::{FeedbackEvent, SuggestionRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JournalEntry {
    Suggestion(SuggestionRecord),
    Feedback(FeedbackEvent),
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("journal line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("journal io: {0}")]
    Io(#[from] io::Error),
}

pub fn encode_line(entry: &JournalEntry) -> String {
    let json = serde_json::to_string(entry).expect("journal entries serialize");
    format!("{:08x} {json}\n", crc32fast::hash(json.as_bytes()))
}

fn decode_line(line: &[u8]) -> Result<JournalEntry, String> {
    let text = std::str::from_utf8(line).map_err(|_| "not UTF-8".to_owned())?;
    let (crc, json) = text.split_once(' ').ok_or("missing checksum")?;
    let stored = u32::from_str_radix(crc, 16).map_err(|_| "bad checksum field".to_owned())?;
    let computed = crc32fast::hash(json.as_bytes());
    if stored != computed {
        return Err(format!("checksum mismatch (stored {stored:08x}, computed {computed:08x})"));
    }
    serde_json::from_str(json).map_err(|e| e.to_string())
}

/// Decoded entries plus the byte length of the intact prefix.
#[derive(Debug, Default)]
pub struct Replay {
    pub entries: Vec<JournalEntry>,
    pub valid_len: usize,
    pub torn_tail: bool,
}

pub fn replay(bytes: &[u8]) -> Result<Replay, JournalError> {
    let mut out = Replay::default();
    let mut offset = 0;
    let mut line_no = 0;
    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            out.torn_tail = true;
            break;
        };
        match decode_line(&rest[..nl]) {
            Ok(e) => out.entries.push(e),
            Err(_) if offset + nl + 1 == bytes.len() => {
                out.torn_tail = true;
                break;
            }
            Err(message) => return Err(JournalError::Corrupt { line: line_no, message }),
        }
        offset += nl + 1;
        out.valid_len = offset;
    }
    Ok(out)
}

/// Open journal file, positioned for appends.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Opens (creating if missing) and replays the journal at `path`,
    /// truncating a torn tail.
    pub fn open(path: &Path) -> Result<(Journal, Replay), JournalError> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let replayed = replay(&bytes)?;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        if replayed.valid_len < bytes.len() {
            file.set_len(replayed.valid_len as u64)?;
            file.sync_all()?;
        }
        Ok((Journal { path: path.to_owned(), file }, replayed))
    }

    /// Appends one entry and syncs it to disk before returning.
    pub fn append(&mut self, entry: &JournalEntry) -> io::Result<()> {
        self.file.write_all(encode_line(entry).as_bytes())?;
        self.file.sync_data()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::Verdict;
    use chrono::DateTime;

    fn fb(actor: &str) -> JournalEntry {
        JournalEntry::Feedback(FeedbackEvent {
            suggestion_id: "sg-1".into(),
            verdict: Verdict::Accept,
            edited_steps: None,
            actor: actor.into(),
            created_at: DateTime::UNIX_EPOCH,
        })
    }

    #[test]
    fn lines_round_trip() {
        let bytes: String = [fb("a"), fb("b")].iter().map(encode_line).collect();
        let r = replay(bytes.as_bytes()).unwrap();
        assert_eq!(r.entries, [fb("a"), fb("b")]);
        assert!(!r.torn_tail);
        assert_eq!(r.valid_len, bytes.len());
    }

    #[test]
    fn torn_tail_is_dropped() {
        let good = encode_line(&fb("a"));
        let partial = &encode_line(&fb("b"))[..20];
        let bytes = format!("{good}{partial}");
        let r = replay(bytes.as_bytes()).unwrap();
        assert_eq!(r.entries, [fb("a")]);
        assert!(r.torn_tail);
        assert_eq!(r.valid_len, good.len());
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let mut first = encode_line(&fb("a"));
        first.replace_range(12..13, "X");
        let bytes = format!("{first}{}", encode_line(&fb("b")));
        assert!(matches!(replay(bytes.as_bytes()), Err(JournalError::Corrupt { line: 1, .. })));
    }

    #[test]
    fn reopen_truncates_and_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        std::fs::write(&path, format!("{}{{\"torn", encode_line(&fb("a")))).unwrap();
        let (mut j, r) = Journal::open(&path).unwrap();
        assert!(r.torn_tail);
        j.append(&fb("b")).unwrap();
        drop(j);
        let (_, r) = Journal::open(&path).unwrap();
        assert_eq!(r.entries, [fb("a"), fb("b")]);
        assert!(!r.torn_tail);
    }
}
