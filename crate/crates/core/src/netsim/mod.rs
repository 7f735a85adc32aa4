//! Deterministic simulated network.
//!
//! Channels are ideal authenticated and confidential pipes between
//! registered identities. The adversary schedules delivery, sees the length
//! of honest traffic, and sees plaintext (and may forge) only on channels
//! where it holds an endpoint. Time moves only when the script says so.

mod scenario;
mod sim;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::encoding::{flip_field, replace_field, DecodeError, Encode, Encoder};
use crate::policy::{Aid, Tick};

pub use scenario::{
    parse_scenario, AdversaryAction, CMode, CSessionSpec, Cmp, Expectation, Rule, RuleAction, Scenario, ScenarioParseError, Step,
};
pub use sim::{
    run_scenario, run_scenario_file, AdversaryRecord, ExpectResult, LocalEvent, RunError, RunReport, SessionRecord, Simulation, World,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("unknown identity {0}")]
    UnknownIdentity(String),
    #[error("clock can only move forward by at least one tick")]
    ZeroAdvance,
    #[error("no packet #{0}")]
    NoSuchPacket(u64),
    #[error("packet #{0} already left the queue")]
    NotPending(u64),
    #[error("channel authenticates {0}; the adversary holds no keys for it")]
    HonestSender(Aid),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Global logical clock.
#[derive(Debug, Default, Clone)]
pub struct SimClock {
    tick: std::cell::Cell<Tick>,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(&self) -> Tick {
        self.tick.get()
    }

    pub fn advance(&self, k: Tick) -> Result<Tick, NetError> {
        if k == 0 {
            return Err(NetError::ZeroAdvance);
        }
        self.tick.set(self.tick.get().saturating_add(k));
        Ok(self.tick.get())
    }
}

impl crate::csession::Clock for SimClock {
    fn now(&self) -> Tick {
        self.read()
    }
}

/// Identity to public key binding. Only the first registration counts.
#[derive(Debug, Default, Clone)]
pub struct KeyDirectory {
    keys: BTreeMap<String, Vec<u8>>,
}

impl KeyDirectory {
    /// Returns false, leaving the entry untouched, if `id` is taken.
    pub fn register(&mut self, id: &str, pk: Vec<u8>) -> bool {
        if self.keys.contains_key(id) {
            return false;
        }
        self.keys.insert(id.to_string(), pk);
        true
    }

    pub fn lookup(&self, id: &str) -> Option<&[u8]> {
        self.keys.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Honest,
    Replay(u64),
    Injected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Pending,
    Delivered(Tick),
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub id: u64,
    pub from: Aid,
    pub to: Aid,
    pub bytes: Vec<u8>,
    pub sent_at: Tick,
    pub deliver_at: Tick,
    pub origin: Origin,
    pub mutated: bool,
    pub fate: Fate,
}

impl Packet {
    pub fn kind(&self) -> &'static str {
        crate::asession::kind_name(self.bytes.first().copied().unwrap_or(0))
    }
}

impl Encode for Packet {
    fn encode_fields(&self, enc: &mut Encoder) {
        let origin = match self.origin {
            Origin::Honest => "honest".to_string(),
            Origin::Replay(p) => format!("replay:{p}"),
            Origin::Injected => "injected".to_string(),
        };
        let fate = match self.fate {
            Fate::Pending => "pending".to_string(),
            Fate::Delivered(t) => format!("delivered:{t}"),
            Fate::Dropped => "dropped".to_string(),
        };
        enc.u64(self.id)
            .value(&self.from)
            .value(&self.to)
            .bytes(&self.bytes)
            .u64(self.sent_at)
            .u64(self.deliver_at)
            .str(&origin)
            .bool(self.mutated)
            .str(&fate);
    }
}

/// What the adversary learns when a packet is sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub tick: Tick,
    pub packet: u64,
    pub from: Aid,
    pub to: Aid,
    pub len: usize,
    /// Present only if the adversary holds one of the endpoints.
    pub plaintext: Option<Vec<u8>>,
}

impl Encode for Observation {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.u64(self.tick).u64(self.packet).value(&self.from).value(&self.to).u64(self.len as u64);
        match &self.plaintext {
            Some(p) => enc.nested(|e| {
                e.bytes(p);
            }),
            None => enc.bytes(&[]),
        };
    }
}

/// All channels between registered identities, with one shared queue.
#[derive(Debug, Default)]
pub struct Network {
    pub directory: KeyDirectory,
    pub corrupted: BTreeSet<Aid>,
    pub packets: Vec<Packet>,
    pub observations: Vec<Observation>,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    fn known(&self, id: &Aid) -> Result<(), NetError> {
        match self.directory.lookup(id.as_str()) {
            Some(_) => Ok(()),
            None => Err(NetError::UnknownIdentity(id.to_string())),
        }
    }

    fn exposed(&self, from: &Aid, to: &Aid) -> bool {
        self.corrupted.contains(from) || self.corrupted.contains(to)
    }

    fn enqueue(&mut self, from: &Aid, to: &Aid, bytes: Vec<u8>, now: Tick, origin: Origin) -> Result<u64, NetError> {
        self.known(from)?;
        self.known(to)?;
        let id = self.packets.len() as u64;
        self.observations.push(Observation {
            tick: now,
            packet: id,
            from: from.clone(),
            to: to.clone(),
            len: bytes.len(),
            plaintext: self.exposed(from, to).then(|| bytes.clone()),
        });
        self.packets.push(Packet {
            id,
            from: from.clone(),
            to: to.clone(),
            bytes,
            sent_at: now,
            deliver_at: now,
            origin,
            mutated: false,
            fate: Fate::Pending,
        });
        Ok(id)
    }

    /// Sends over the channel `from -> to`; returns the packet id.
    pub fn send(&mut self, from: &Aid, to: &Aid, bytes: Vec<u8>, now: Tick) -> Result<u64, NetError> {
        self.enqueue(from, to, bytes, now, Origin::Honest)
    }

    /// Oldest pending packet that is due, if any, without removing it.
    pub fn next_due(&self, now: Tick) -> Option<u64> {
        self.packets.iter().find(|p| p.fate == Fate::Pending && p.deliver_at <= now).map(|p| p.id)
    }

    /// Hands over the oldest due packet on the channel `from -> to`.
    pub fn recv(&mut self, from: &Aid, to: &Aid, now: Tick) -> Option<Vec<u8>> {
        let p = self
            .packets
            .iter_mut()
            .find(|p| p.fate == Fate::Pending && p.deliver_at <= now && &p.from == from && &p.to == to)?;
        p.fate = Fate::Delivered(now);
        Some(p.bytes.clone())
    }

    /// Marks a packet delivered and returns it.
    pub fn take(&mut self, id: u64, now: Tick) -> Result<Packet, NetError> {
        let p = self.pending_mut(id)?;
        p.fate = Fate::Delivered(now);
        Ok(p.clone())
    }

    pub fn pending(&self) -> usize {
        self.packets.iter().filter(|p| p.fate == Fate::Pending).count()
    }

    fn pending_mut(&mut self, id: u64) -> Result<&mut Packet, NetError> {
        let p = self.packets.get_mut(id as usize).ok_or(NetError::NoSuchPacket(id))?;
        if p.fate != Fate::Pending {
            return Err(NetError::NotPending(id));
        }
        Ok(p)
    }

    fn forgeable(&self, sender: &Aid) -> Result<(), NetError> {
        if self.corrupted.contains(sender) {
            Ok(())
        } else {
            Err(NetError::HonestSender(sender.clone()))
        }
    }

    /// Applies one adversary action. Scheduling actions work on any
    /// channel; anything that changes content needs the sender's keys.
    pub fn apply(&mut self, action: &AdversaryAction, now: Tick) -> Result<Option<u64>, NetError> {
        match action {
            AdversaryAction::Drop(id) => {
                self.pending_mut(*id)?.fate = Fate::Dropped;
                Ok(None)
            }
            AdversaryAction::Delay(id, k) => {
                let p = self.pending_mut(*id)?;
                p.deliver_at = p.deliver_at.max(now).saturating_add(*k);
                Ok(None)
            }
            AdversaryAction::Replay(id) => {
                let p = self.packets.get(*id as usize).ok_or(NetError::NoSuchPacket(*id))?.clone();
                self.forgeable(&p.from)?;
                self.enqueue(&p.from, &p.to, p.bytes, now, Origin::Replay(*id)).map(Some)
            }
            AdversaryAction::Mutate(id, path, new) => {
                let from = self.packets.get(*id as usize).ok_or(NetError::NoSuchPacket(*id))?.from.clone();
                self.forgeable(&from)?;
                let p = self.pending_mut(*id)?;
                p.bytes = mutate_frame(&p.bytes, path, Some(new))?;
                p.mutated = true;
                Ok(None)
            }
            AdversaryAction::Flip(id, path) => {
                let from = self.packets.get(*id as usize).ok_or(NetError::NoSuchPacket(*id))?.from.clone();
                self.forgeable(&from)?;
                let p = self.pending_mut(*id)?;
                p.bytes = mutate_frame(&p.bytes, path, None)?;
                p.mutated = true;
                Ok(None)
            }
            AdversaryAction::Inject(from, to, bytes) => {
                self.forgeable(from)?;
                self.enqueue(from, to, bytes.clone(), now, Origin::Injected).map(Some)
            }
        }
    }
}

/// Rewrites one field of a frame body (the octets after the type tag).
/// `None` flips the field's last bit instead of replacing it.
pub fn mutate_frame(frame: &[u8], path: &[usize], new: Option<&Vec<u8>>) -> Result<Vec<u8>, DecodeError> {
    let (&tag, body) = frame.split_first().ok_or(DecodeError::Truncated { depth: 0 })?;
    let body = match new {
        Some(v) => replace_field(body, path, v)?,
        None => flip_field(body, path)?,
    };
    let mut out = vec![tag];
    out.extend(body);
    Ok(out)
}

#[cfg(test)]
mod tests;
