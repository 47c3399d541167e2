//! Identifiers and the id/clock source used by every mutating operation.

use std::fmt;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use ulid::Ulid;

macro_rules! ulid_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(Ulid);

        impl $name {
            pub fn from_ulid(u: Ulid) -> Self {
                Self(u)
            }

            pub fn ulid(&self) -> Ulid {
                self.0
            }

            /// Milliseconds since the epoch embedded in the id.
            pub fn timestamp_ms(&self) -> u64 {
                self.0.timestamp_ms()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.0)
            }
        }

        impl FromStr for $name {
            type Err = ulid::DecodeError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Ulid::from_string(s).map(Self)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

ulid_newtype!(
    /// Identity of any canvas entity: data card, action card or cluster.
    CardId
);
ulid_newtype!(
    /// Identity of a generation job.
    JobId
);

/// Document identifier, chosen by the client on first join.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(pub String);

impl DocId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Doc ids double as file names, so they are restricted to a safe alphabet.
    pub fn is_valid(&self) -> bool {
        !self.0.is_empty()
            && self.0.len() <= 128
            && self
                .0
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
            && !self.0.starts_with('.')
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Hub-assigned worker identity; ordering is registration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkerId(pub u64);

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

/// Slot identity, unique within one action card.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlotId(pub u32);

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug)]
enum Clock {
    System,
    Manual(u64),
}

/// Source of timestamps and monotonic ULIDs.
///
/// Ids are strictly increasing: within one millisecond (or when the clock
/// steps backwards) the random component of the previous id is incremented.
/// With a manual clock and a fixed seed the sequence is fully reproducible,
/// which is what headless replay relies on.
#[derive(Clone, Debug)]
pub struct IdGen {
    clock: Clock,
    rng: ChaCha8Rng,
    last: Option<Ulid>,
}

const RANDOM_MASK: u128 = (1u128 << 80) - 1;

impl IdGen {
    /// Wall clock, entropy-seeded.
    pub fn system() -> Self {
        Self {
            clock: Clock::System,
            rng: ChaCha8Rng::from_entropy(),
            last: None,
        }
    }

    /// Manual clock starting at `now_ms`, seeded deterministically.
    pub fn deterministic(seed: u64, now_ms: u64) -> Self {
        Self {
            clock: Clock::Manual(now_ms),
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: None,
        }
    }

    pub fn set_now(&mut self, now_ms: u64) {
        if let Clock::Manual(t) = &mut self.clock {
            *t = now_ms;
        }
    }

    pub fn is_manual(&self) -> bool {
        matches!(self.clock, Clock::Manual(_))
    }

    pub fn now_ms(&self) -> u64 {
        match self.clock {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            Clock::Manual(t) => t,
        }
    }

    pub fn next_ulid(&mut self) -> Ulid {
        let ms = self.now_ms() & ((1u64 << 48) - 1);
        let next = match self.last {
            Some(prev) if prev.timestamp_ms() >= ms => {
                let random = (prev.random() + 1) & RANDOM_MASK;
                if random == 0 {
                    Ulid::from_parts(prev.timestamp_ms() + 1, self.random80())
                } else {
                    Ulid::from_parts(prev.timestamp_ms(), random)
                }
            }
            _ => Ulid::from_parts(ms, self.random80()),
        };
        self.last = Some(next);
        next
    }

    pub fn card_id(&mut self) -> CardId {
        CardId(self.next_ulid())
    }

    pub fn job_id(&mut self) -> JobId {
        JobId(self.next_ulid())
    }

    /// Never let a generator reissue ids at or below `floor` (used after load).
    pub fn observe(&mut self, floor: Ulid) {
        if self.last.map_or(true, |l| l < floor) {
            self.last = Some(floor);
        }
    }

    fn random80(&mut self) -> u128 {
        let hi = u128::from(self.rng.next_u64());
        let lo = u128::from(self.rng.next_u32());
        // Leave headroom so same-millisecond increments never overflow in practice.
        ((hi << 16 | (lo & 0xffff)) & RANDOM_MASK) >> 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_strictly_increase_within_one_millisecond() {
        let mut g = IdGen::deterministic(7, 1_000);
        let ids: Vec<_> = (0..100).map(|_| g.card_id()).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert!(ids.iter().all(|i| i.timestamp_ms() == 1_000));
    }

    #[test]
    fn ids_sort_lexicographically_by_time() {
        let mut g = IdGen::deterministic(7, 5);
        let a = g.card_id();
        g.set_now(6);
        let b = g.card_id();
        assert!(a.to_string() < b.to_string());
    }

    #[test]
    fn deterministic_generators_agree() {
        let mut a = IdGen::deterministic(42, 10);
        let mut b = IdGen::deterministic(42, 10);
        for _ in 0..10 {
            assert_eq!(a.card_id(), b.card_id());
        }
    }

    #[test]
    fn clock_going_backwards_keeps_order() {
        let mut g = IdGen::deterministic(1, 100);
        let a = g.card_id();
        g.set_now(50);
        let b = g.card_id();
        assert!(b > a);
    }

    #[test]
    fn card_id_round_trips_through_json() {
        let mut g = IdGen::deterministic(3, 3);
        let id = g.card_id();
        let s = serde_json::to_string(&id).unwrap();
        assert_eq!(serde_json::from_str::<CardId>(&s).unwrap(), id);
        assert_eq!(s.len(), 28);
    }

    #[test]
    fn doc_id_validation() {
        assert!(DocId::new("walkthrough-1").is_valid());
        assert!(!DocId::new("../etc").is_valid());
        assert!(!DocId::new("").is_valid());
    }
}
