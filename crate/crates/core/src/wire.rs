//! Canonical byte encoding of rekey messages.
//!
//! Integers are minimal big-endian, prefixed by a `u32` big-endian length.
//! Strings are UTF-8 with the same prefix. Decoding rejects non-minimal
//! integers, out-of-range group elements and trailing bytes.

use crate::arith::Residue;
use crate::crypto::{GroupParams, KeyValue};
use crate::error::{Error, Result};
use crate::gdh::{RekeyBroadcast, Tagged};
use crate::tgdh::{Coord, NodeRecord, TreeSnapshot};
use crate::MemberId;

const TAG_REKEY: u8 = 0x01;
const TAG_TREE: u8 = 0x02;

const HAS_BLINDED: u8 = 0b01;
const HAS_OWNER: u8 = 0b10;

struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(&(b.len() as u32).to_be_bytes());
        self.0.extend_from_slice(b);
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::Decode("truncated input".into()));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_be_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn member(&mut self) -> Result<MemberId> {
        let s = std::str::from_utf8(self.bytes()?).map_err(|_| Error::Decode("member id is not UTF-8".into()))?;
        Ok(MemberId::from(s))
    }

    fn key<T: Residue>(&mut self, params: &GroupParams<T>) -> Result<KeyValue<T>> {
        KeyValue::from_bytes(self.bytes()?, params)
    }

    fn finish(self) -> Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(Error::Decode(format!("{} trailing bytes", self.0.len())))
        }
    }
}

pub fn encode_rekey<T: Residue>(msg: &RekeyBroadcast<T>) -> Vec<u8> {
    let mut w = Writer(vec![TAG_REKEY]);
    w.u64(msg.epoch);
    w.bytes(msg.sender.as_str().as_bytes());
    w.u32(msg.entries.len() as u32);
    for e in &msg.entries {
        w.bytes(e.member.as_str().as_bytes());
        w.bytes(&e.value.to_bytes());
    }
    w.0
}

pub fn decode_rekey<T: Residue>(bytes: &[u8], params: &GroupParams<T>) -> Result<RekeyBroadcast<T>> {
    let mut r = Reader(bytes);
    if r.u8()? != TAG_REKEY {
        return Err(Error::Decode("not a subgroup rekey message".into()));
    }
    let epoch = r.u64()?;
    let sender = r.member()?;
    let n = r.u32()?;
    let mut entries = Vec::new();
    for _ in 0..n {
        let member = r.member()?;
        entries.push(Tagged::new(member, r.key(params)?));
    }
    r.finish()?;
    Ok(RekeyBroadcast { epoch, sender, entries })
}

pub fn encode_tree<T: Residue>(snap: &TreeSnapshot<T>) -> Vec<u8> {
    let mut w = Writer(vec![TAG_TREE]);
    w.u64(snap.epoch);
    w.u32(snap.records.len() as u32);
    for rec in &snap.records {
        w.u32(rec.coord.level);
        w.0.extend_from_slice(&rec.coord.index.to_be_bytes());
        let flags = if rec.blinded.is_some() { HAS_BLINDED } else { 0 } | if rec.owner.is_some() { HAS_OWNER } else { 0 };
        w.0.push(flags);
        if let Some(bk) = &rec.blinded {
            w.bytes(&bk.to_bytes());
        }
        if let Some(owner) = &rec.owner {
            w.bytes(owner.as_str().as_bytes());
        }
    }
    w.0
}

pub fn decode_tree<T: Residue>(bytes: &[u8], params: &GroupParams<T>) -> Result<TreeSnapshot<T>> {
    let mut r = Reader(bytes);
    if r.u8()? != TAG_TREE {
        return Err(Error::Decode("not a tree message".into()));
    }
    let epoch = r.u64()?;
    let n = r.u32()?;
    let mut records = Vec::new();
    for _ in 0..n {
        let level = r.u32()?;
        let index = r.u128()?;
        if level > crate::tgdh::MAX_DEPTH || (level < 128 && index >> level != 0) {
            return Err(Error::Decode(format!("invalid coordinate <{level},{index}>")));
        }
        let flags = r.u8()?;
        if flags & !(HAS_BLINDED | HAS_OWNER) != 0 {
            return Err(Error::Decode("unknown record flags".into()));
        }
        let blinded = if flags & HAS_BLINDED != 0 { Some(r.key(params)?) } else { None };
        let owner = if flags & HAS_OWNER != 0 { Some(r.member()?) } else { None };
        records.push(NodeRecord { coord: Coord { level, index }, blinded, owner });
    }
    r.finish()?;
    Ok(TreeSnapshot { epoch, records })
}
