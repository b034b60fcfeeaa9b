//! Canonical byte encoding.
//!
//! The encoding exists for two reasons: accounting for how many bytes a
//! payload would occupy on the wire, and giving every value a deterministic
//! order. Values never actually leave the process in this form.
//!
//! Layout rules:
//!
//! - variants and payload kinds: 1-byte tag
//! - integers: 8-byte big-endian
//! - counts and lengths: 4-byte big-endian
//! - identifiers and strings: 4-byte length followed by UTF-8 bytes
//! - mappings: count followed by key/value pairs in key order
//! - sets: count followed by elements in order

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

/// Types with a canonical byte encoding.
///
/// `encoded_len` must always equal `encode(..)`'s output length; it exists
/// so that size accounting does not have to allocate.
pub trait Encode {
    fn encode(&self, out: &mut Vec<u8>);

    fn encoded_len(&self) -> usize;

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode(&mut out);
        out
    }
}

/// Number of bytes in the canonical encoding of `value`.
pub fn encoded_size<T: Encode + ?Sized>(value: &T) -> usize {
    value.encoded_len()
}

pub(crate) const TAG_LEN: usize = 1;
pub(crate) const COUNT_LEN: usize = 4;
pub(crate) const INT_LEN: usize = 8;

pub(crate) fn put_tag(out: &mut Vec<u8>, tag: u8) {
    out.push(tag);
}

pub(crate) fn put_count(out: &mut Vec<u8>, count: usize) {
    let count = u32::try_from(count).expect("collection too large for canonical encoding");
    out.extend_from_slice(&count.to_be_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, value: u64) {
    out.extend_from_slice(&value.to_be_bytes());
}

pub(crate) fn put_str(out: &mut Vec<u8>, value: &str) {
    put_count(out, value.len());
    out.extend_from_slice(value.as_bytes());
}

pub(crate) fn str_len(value: &str) -> usize {
    COUNT_LEN + value.len()
}

/// Orders two strings the way their canonical encodings compare: shorter
/// first (the big-endian length prefix dominates), then bytewise.
pub(crate) fn cmp_encoded_str(a: &str, b: &str) -> Ordering {
    a.len()
        .cmp(&b.len())
        .then_with(|| a.as_bytes().cmp(b.as_bytes()))
}

/// Cursor over an encoded buffer.
#[derive(Debug)]
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
}

/// The buffer ended before a complete value was read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Truncated;

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], Truncated> {
        if self.bytes.len() < n {
            return Err(Truncated);
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, Truncated> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, Truncated> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, Truncated> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().expect("took 8 bytes")))
    }

    pub(crate) fn str(&mut self) -> Result<&'a str, Truncated> {
        let len = self.u32()? as usize;
        std::str::from_utf8(self.take(len)?).map_err(|_| Truncated)
    }
}

macro_rules! encoded_name {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, Hash)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(name: impl AsRef<str>) -> Self {
                Self(Arc::from(name.as_ref()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl Ord for $name {
            fn cmp(&self, other: &Self) -> Ordering {
                if Arc::ptr_eq(&self.0, &other.0) {
                    return Ordering::Equal;
                }
                cmp_encoded_str(&self.0, &other.0)
            }
        }

        impl PartialOrd for $name {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:?}", &*self.0)
            }
        }

        impl From<&str> for $name {
            fn from(name: &str) -> Self {
                Self::new(name)
            }
        }

        impl From<String> for $name {
            fn from(name: String) -> Self {
                Self(Arc::from(name))
            }
        }

        impl Encode for $name {
            fn encode(&self, out: &mut Vec<u8>) {
                put_str(out, &self.0);
            }

            fn encoded_len(&self) -> usize {
                str_len(&self.0)
            }
        }
    };
}

encoded_name!(
    /// Opaque node identifier, used as the actor of every CRDT mutation.
    ///
    /// Ordered by canonical encoding (length, then bytes), so `"server"`
    /// sorts before `"client-0001"`.
    ActorId
);

encoded_name!(
    /// Name of a dataflow variable.
    VarId
);
