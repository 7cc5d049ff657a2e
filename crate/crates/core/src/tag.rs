//! Lineage tags.
//!
//! A tag is the ordered list of decoherence events a branch descends from,
//! each recorded as `(event_time, offspring_index)`. Tags are stored as a
//! persistent linked list so siblings share their common ancestry.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::{combine, mix64};

const ROOT_HASH: u64 = 0x243F_6A88_85A3_08D3;

const SLOT_MIX: [u64; 64] = {
    let mut table = [0u64; 64];
    let mut i = 0;
    while i < 64 {
        table[i] = mix64(i as u64);
        i += 1;
    }
    table
};

// Hash and depth are kept beside the pointer so hot loops need not touch the
// shared node.
#[derive(Clone)]
pub struct TagPath {
    head: Option<Arc<TagNode>>,
    hash: u64,
    depth: u32,
}

impl Default for TagPath {
    fn default() -> Self {
        Self {
            head: None,
            hash: ROOT_HASH,
            depth: 0,
        }
    }
}

struct TagNode {
    event_time: f64,
    offspring_index: u32,
    parent: TagPath,
}

impl Drop for TagNode {
    // Long lineages would otherwise be freed recursively.
    fn drop(&mut self) {
        let mut next = self.parent.head.take();
        while let Some(node) = next {
            match Arc::try_unwrap(node) {
                Ok(mut inner) => next = inner.parent.head.take(),
                Err(_) => break,
            }
        }
    }
}

impl TagPath {
    /// The empty lineage of an undecohered particle.
    pub fn root() -> Self {
        Self::default()
    }

    /// Hash a child of a lineage with hash `parent` would have.
    #[inline]
    pub fn child_hash(parent: u64, event_time: f64, offspring_index: u32) -> u64 {
        Self::sibling_hash(Self::event_hash(parent, event_time), offspring_index)
    }

    /// The part of [`TagPath::child_hash`] shared by all offspring of one event.
    #[inline]
    pub fn event_hash(parent: u64, event_time: f64) -> u64 {
        combine(parent, event_time.to_bits())
    }

    #[inline]
    pub fn sibling_hash(event_hash: u64, offspring_index: u32) -> u64 {
        let slot = match SLOT_MIX.get(offspring_index as usize) {
            Some(&m) => m,
            None => mix64(offspring_index as u64),
        };
        mix64(event_hash ^ slot)
    }

    /// Appends one event. Event times must strictly increase along a lineage.
    pub fn extended(&self, event_time: f64, offspring_index: u32) -> Result<Self> {
        if let Some(last) = self.last_event() {
            if !(event_time > last.0) {
                return Err(Error::Logic(format!(
                    "event time {event_time} does not follow previous event at {}",
                    last.0
                )));
            }
        }
        Ok(self.extended_unchecked(event_time, offspring_index))
    }

    pub(crate) fn extended_unchecked(&self, event_time: f64, offspring_index: u32) -> Self {
        Self {
            head: Some(Arc::new(TagNode {
                event_time,
                offspring_index,
                parent: self.clone(),
            })),
            hash: Self::child_hash(self.hash, event_time, offspring_index),
            depth: self.depth + 1,
        }
    }

    pub fn from_events(events: &[(f64, u32)]) -> Result<Self> {
        events.iter().try_fold(Self::root(), |tag, &(t, i)| tag.extended(t, i))
    }

    pub fn depth(&self) -> usize {
        self.depth as usize
    }

    pub fn structural_hash(&self) -> u64 {
        self.hash
    }

    pub fn last_event(&self) -> Option<(f64, u32)> {
        self.head.as_ref().map(|n| (n.event_time, n.offspring_index))
    }

    /// Events from the oldest to the most recent.
    pub fn events(&self) -> Vec<(f64, u32)> {
        let mut out = Vec::with_capacity(self.depth());
        let mut cur = self.head.as_deref();
        while let Some(node) = cur {
            out.push((node.event_time, node.offspring_index));
            cur = node.parent.head.as_deref();
        }
        out.reverse();
        out
    }

    /// Overlap of the tag states: 1 for identical lineages, 0 otherwise.
    pub fn overlap(&self, other: &TagPath) -> f64 {
        if self == other {
            1.0
        } else {
            0.0
        }
    }
}

impl PartialEq for TagPath {
    fn eq(&self, other: &Self) -> bool {
        if self.depth() != other.depth() || self.structural_hash() != other.structural_hash() {
            return false;
        }
        let (mut a, mut b) = (self.head.as_ref(), other.head.as_ref());
        loop {
            match (a, b) {
                (None, None) => return true,
                (Some(x), Some(y)) => {
                    if Arc::ptr_eq(x, y) {
                        return true;
                    }
                    if x.event_time.to_bits() != y.event_time.to_bits() || x.offspring_index != y.offspring_index {
                        return false;
                    }
                    a = x.parent.head.as_ref();
                    b = y.parent.head.as_ref();
                }
                _ => return false,
            }
        }
    }
}

impl Eq for TagPath {}

impl fmt::Debug for TagPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let events = self.events();
        if events.len() > 8 {
            write!(f, "TagPath(depth {}, .., ", events.len())?;
            f.debug_list().entries(&events[events.len() - 4..]).finish()?;
            write!(f, ")")
        } else {
            write!(f, "TagPath")?;
            f.debug_list().entries(&events).finish()
        }
    }
}
