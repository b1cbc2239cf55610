use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numeric::Rng;

/// Scope names handed out per seed. Each is derived from the master seed by
/// hashing its name, so streams never depend on the order they are taken in.
pub const SCOPES: [&str; 7] = ["data", "init", "shuffle", "pairing", "fisher-subset", "buffer-subset", "replay"];

/// Named random streams of one run; each scope may be taken once.
#[derive(Debug)]
pub struct SeedScopes {
    master: Rng,
    taken: BTreeSet<String>,
}

pub fn seed_everything(seed: u64) -> SeedScopes {
    SeedScopes {
        master: Rng::new(seed),
        taken: BTreeSet::new(),
    }
}

impl SeedScopes {
    pub fn seed(&self) -> u64 {
        self.master.seed()
    }

    /// The stream for `name`; asking for the same name twice is an error.
    pub fn take(&mut self, name: &str) -> Result<Rng> {
        if !self.taken.insert(name.to_string()) {
            return Err(Error::State(format!("random scope `{name}` was already used in this run")));
        }
        Ok(self.master.derive(name))
    }
}
