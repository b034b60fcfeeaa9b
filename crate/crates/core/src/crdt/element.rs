use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::encoding::{cmp_encoded_str, put_count, put_str, put_tag, put_u64, str_len, Encode};
use crate::encoding::{COUNT_LEN, INT_LEN, TAG_LEN};

const TAG_INT: u8 = 0x01;
const TAG_STR: u8 = 0x02;
const TAG_TUPLE: u8 = 0x03;

/// A value stored in an add-wins set.
///
/// Cloning is cheap. The ordering is the byte order of the canonical
/// encoding, computed structurally without allocating.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Element {
    Int(i64),
    Str(Arc<str>),
    Tuple(Arc<[Element]>),
}

impl Element {
    pub fn str(value: impl AsRef<str>) -> Self {
        Element::Str(Arc::from(value.as_ref()))
    }

    pub fn tuple(items: impl IntoIterator<Item = Element>) -> Self {
        Element::Tuple(items.into_iter().collect())
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Element::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Element::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_tuple(&self) -> Option<&[Element]> {
        match self {
            Element::Tuple(items) => Some(items),
            _ => None,
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Element::Int(_) => TAG_INT,
            Element::Str(_) => TAG_STR,
            Element::Tuple(_) => TAG_TUPLE,
        }
    }

    /// A stable 64-bit fingerprint of the encoded element.
    pub(crate) fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.to_bytes());
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        u64::from_be_bytes(word)
    }
}

impl From<i64> for Element {
    fn from(v: i64) -> Self {
        Element::Int(v)
    }
}

impl From<&str> for Element {
    fn from(v: &str) -> Self {
        Element::str(v)
    }
}

impl Ord for Element {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            // Two's complement bytes compare as unsigned integers.
            (Element::Int(a), Element::Int(b)) => (*a as u64).cmp(&(*b as u64)),
            (Element::Str(a), Element::Str(b)) => cmp_encoded_str(a, b),
            // Encodings are self-delimiting, so comparing the concatenation
            // is the same as comparing item by item.
            (Element::Tuple(a), Element::Tuple(b)) => {
                a.len().cmp(&b.len()).then_with(|| a.iter().cmp(b.iter()))
            }
            _ => self.tag().cmp(&other.tag()),
        }
    }
}

impl PartialOrd for Element {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Element::Int(v) => write!(f, "{v}"),
            Element::Str(s) => write!(f, "{:?}", &**s),
            Element::Tuple(items) => {
                let mut t = f.debug_tuple("");
                for item in items.iter() {
                    t.field(item);
                }
                t.finish()
            }
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Element::Int(v) => write!(f, "{v}"),
            Element::Str(s) => f.write_str(s),
            Element::Tuple(items) => {
                f.write_str("(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl Encode for Element {
    fn encode(&self, out: &mut Vec<u8>) {
        put_tag(out, self.tag());
        match self {
            Element::Int(v) => put_u64(out, *v as u64),
            Element::Str(s) => put_str(out, s),
            Element::Tuple(items) => {
                put_count(out, items.len());
                for item in items.iter() {
                    item.encode(out);
                }
            }
        }
    }

    fn encoded_len(&self) -> usize {
        TAG_LEN
            + match self {
                Element::Int(_) => INT_LEN,
                Element::Str(s) => str_len(s),
                Element::Tuple(items) => {
                    COUNT_LEN + items.iter().map(Encode::encoded_len).sum::<usize>()
                }
            }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn element() -> impl Strategy<Value = Element> {
        let leaf = prop_oneof![
            any::<i64>().prop_map(Element::Int),
            "[a-c]{0,3}".prop_map(Element::str),
        ];
        leaf.prop_recursive(2, 8, 3, |inner| {
            prop::collection::vec(inner, 0..3).prop_map(Element::tuple)
        })
    }

    proptest! {
        #[test]
        fn order_matches_encoded_bytes(a in element(), b in element()) {
            prop_assert_eq!(a.cmp(&b), a.to_bytes().cmp(&b.to_bytes()));
        }

        #[test]
        fn encoded_len_matches_encoding(a in element()) {
            prop_assert_eq!(a.encoded_len(), a.to_bytes().len());
        }
    }

    #[test]
    fn display_is_readable() {
        let e = Element::tuple([Element::str("ad-1"), Element::Int(3)]);
        assert_eq!(e.to_string(), "(ad-1,3)");
    }
}
