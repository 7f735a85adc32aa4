//! Append-only registry log: each record is a 4-octet big-endian length
//! followed by the canonical encoding of the record.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::Path;

use super::records::{AgentRecord, UserRecord, NONCE_LEN};
use crate::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::policy::{Aid, ContactPolicy};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogRecord {
    User(UserRecord),
    Agent { record: AgentRecord, ta_leaf: u64 },
    Policy { aid: Aid, cp: ContactPolicy },
    Grant { responder: Aid, initiator: Aid, nonce: [u8; NONCE_LEN], remaining: u32, ta_leaf: u64 },
}

impl LogRecord {
    /// Provider signing leaf consumed by this record, if any.
    pub fn ta_leaf(&self) -> Option<u64> {
        match self {
            LogRecord::Agent { ta_leaf, .. } | LogRecord::Grant { ta_leaf, .. } => Some(*ta_leaf),
            _ => None,
        }
    }
}

impl Encode for LogRecord {
    fn encode_fields(&self, enc: &mut Encoder) {
        match self {
            LogRecord::User(u) => {
                enc.u64(1).value(u);
            }
            LogRecord::Agent { record, ta_leaf } => {
                enc.u64(2).value(record).u64(*ta_leaf);
            }
            LogRecord::Policy { aid, cp } => {
                enc.u64(3).value(aid).value(cp);
            }
            LogRecord::Grant { responder, initiator, nonce, remaining, ta_leaf } => {
                enc.u64(4)
                    .value(responder)
                    .value(initiator)
                    .bytes(nonce)
                    .u64(u64::from(*remaining))
                    .u64(*ta_leaf);
            }
        }
    }
}

impl Decode for LogRecord {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u64()? {
            1 => LogRecord::User(dec.value()?),
            2 => LogRecord::Agent { record: dec.value()?, ta_leaf: dec.u64()? },
            3 => LogRecord::Policy { aid: dec.value()?, cp: dec.value()? },
            4 => LogRecord::Grant {
                responder: dec.value()?,
                initiator: dec.value()?,
                nonce: dec.fixed()?,
                remaining: u32::try_from(dec.u64()?).map_err(|_| DecodeError::Invalid("counter"))?,
                ta_leaf: dec.u64()?,
            },
            t => return Err(DecodeError::UnknownTag(t as u8)),
        })
    }
}

#[derive(Debug)]
pub struct RegistryLog {
    file: File,
}

impl RegistryLog {
    /// Opens the log for appending and returns every record already in it.
    pub fn open(path: &Path) -> io::Result<(Self, Vec<LogRecord>)> {
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;
        let records = Self::parse(&buf)?;
        Ok((RegistryLog { file }, records))
    }

    pub fn parse(mut buf: &[u8]) -> io::Result<Vec<LogRecord>> {
        let bad = |e: DecodeError| io::Error::new(io::ErrorKind::InvalidData, e);
        let mut out = Vec::new();
        while !buf.is_empty() {
            if buf.len() < 4 {
                return Err(bad(DecodeError::Truncated { depth: 0 }));
            }
            let len = u32::from_be_bytes(buf[..4].try_into().expect("4 bytes")) as usize;
            let body = buf.get(4..4 + len).ok_or_else(|| bad(DecodeError::Truncated { depth: 0 }))?;
            out.push(LogRecord::from_canonical(body).map_err(bad)?);
            buf = &buf[4 + len..];
        }
        Ok(out)
    }

    pub fn append(&mut self, rec: &LogRecord) -> io::Result<()> {
        let body = rec.to_canonical();
        let mut frame = Vec::with_capacity(body.len() + 4);
        frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
        frame.extend_from_slice(&body);
        self.file.write_all(&frame)?;
        self.file.flush()
    }
}
