//! Transport-agnostic iterative node lookup.
//!
//! The driver feeds responses and failures in and asks for the next batch of
//! queries. Each round queries the `alpha` closest not-yet-queried contacts
//! among the current best `k`. A round that learns no closer contact is
//! followed by one that queries every unqueried contact among the best `k`;
//! the lookup ends when all of the best `k` have been queried.

use std::collections::HashMap;

use super::kid::{xor_unchecked, Distance, Kid, SubtreeId};
use super::table::{Contact, NodeId};

pub const DEFAULT_ALPHA: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Fresh,
    InFlight,
    Responded,
    Failed,
}

#[derive(Debug, Clone)]
struct Entry {
    contact: Contact,
    distance: Distance,
    status: Status,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupResult {
    pub target: Kid,
    /// Up to `k` contacts sorted by distance to the target.
    pub contacts: Vec<Contact>,
    /// Every query failed.
    pub timed_out: bool,
    pub rounds: u32,
}

#[derive(Debug, Clone)]
pub struct Lookup {
    target: Kid,
    self_kid: Kid,
    k: usize,
    alpha: usize,
    entries: Vec<Entry>,
    index: HashMap<NodeId, usize>,
    rounds: u32,
    best_before_round: Option<Distance>,
    responses: usize,
    failures: usize,
    done: bool,
}

impl Lookup {
    pub fn new(target: Kid, self_kid: Kid, k: usize, alpha: usize, seeds: impl IntoIterator<Item = Contact>) -> Self {
        let mut lookup = Self {
            target,
            self_kid,
            k,
            alpha: alpha.max(1),
            entries: Vec::new(),
            index: HashMap::new(),
            rounds: 0,
            best_before_round: None,
            responses: 0,
            failures: 0,
            done: false,
        };
        lookup.learn(seeds);
        lookup
    }

    pub fn target(&self) -> &Kid {
        &self.target
    }

    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn learn(&mut self, contacts: impl IntoIterator<Item = Contact>) {
        for c in contacts {
            if c.kid == self.self_kid || self.index.contains_key(&c.addr) {
                continue;
            }
            self.index.insert(c.addr, self.entries.len());
            self.entries.push(Entry {
                distance: xor_unchecked(&c.kid, &self.target),
                contact: c,
                status: Status::Fresh,
            });
        }
    }

    fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> =
            (0..self.entries.len()).filter(|&i| self.entries[i].status != Status::Failed).collect();
        idx.sort_by_key(|&i| (self.entries[i].distance, self.entries[i].contact.addr));
        idx
    }

    fn best(&self) -> Option<Distance> {
        self.ranked().first().map(|&i| self.entries[i].distance)
    }

    fn in_flight(&self) -> usize {
        self.entries.iter().filter(|e| e.status == Status::InFlight).count()
    }

    /// Contacts to query now. Empty while a round is still in flight, and
    /// empty once the lookup is done.
    pub fn next_queries(&mut self) -> Vec<Contact> {
        if self.done || self.in_flight() > 0 {
            return Vec::new();
        }
        let best = self.best();
        let stalled =
            self.rounds > 0 && matches!((self.best_before_round, best), (Some(prev), Some(now)) if now >= prev);
        let width = if stalled { self.k } else { self.alpha };
        let picks: Vec<usize> = self
            .ranked()
            .into_iter()
            .take(self.k)
            .filter(|&i| self.entries[i].status == Status::Fresh)
            .take(width)
            .collect();
        if picks.is_empty() {
            self.done = true;
            return Vec::new();
        }
        self.best_before_round = best;
        self.rounds += 1;
        picks
            .into_iter()
            .map(|i| {
                self.entries[i].status = Status::InFlight;
                self.entries[i].contact
            })
            .collect()
    }

    pub fn on_response(&mut self, from: NodeId, contacts: impl IntoIterator<Item = Contact>) {
        if let Some(&i) = self.index.get(&from) {
            if self.entries[i].status == Status::InFlight {
                self.entries[i].status = Status::Responded;
                self.responses += 1;
                self.learn(contacts);
            }
        }
    }

    pub fn on_failure(&mut self, from: NodeId) {
        if let Some(&i) = self.index.get(&from) {
            if self.entries[i].status == Status::InFlight {
                self.entries[i].status = Status::Failed;
                self.failures += 1;
            }
        }
    }

    pub fn result(&self) -> LookupResult {
        LookupResult {
            target: self.target,
            contacts: self.ranked().into_iter().take(self.k).map(|i| self.entries[i].contact).collect(),
            timed_out: self.responses == 0 && self.failures > 0,
            rounds: self.rounds,
        }
    }
}

/// Emptiness verdict for a subtree probed with a lookup targeting a leaf
/// inside it: empty iff no returned contact lies inside.
pub fn subtree_empty_from(result: &LookupResult, subtree: &SubtreeId) -> bool {
    !result.contacts.iter().any(|c| subtree.contains(&c.kid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{issue_token, keygen};
    use crate::overlay::kid::derive_kid;
    use crate::overlay::table::RoutingTable;

    fn network(n: u32, bits: u16, k: usize) -> (Vec<Contact>, Vec<RoutingTable>) {
        let a = keygen([1; 32]);
        let contacts: Vec<Contact> = (0..n)
            .map(|i| {
                let mut seed = [3u8; 32];
                seed[..4].copy_from_slice(&i.to_be_bytes());
                let kp = keygen(seed);
                let token = issue_token(&a, &kp.pk());
                Contact { kid: derive_kid(&token, bits).unwrap(), pk: kp.pk(), token, addr: NodeId(i) }
            })
            .collect();
        let tables = contacts
            .iter()
            .map(|me| {
                let mut t = RoutingTable::new(me.kid, k);
                for c in &contacts {
                    t.insert_verified(*c);
                }
                t
            })
            .collect();
        (contacts, tables)
    }

    fn drive(lookup: &mut Lookup, tables: &[RoutingTable], k: usize, dead: &[NodeId]) -> LookupResult {
        loop {
            let qs = lookup.next_queries();
            if qs.is_empty() {
                break;
            }
            for q in qs {
                if dead.contains(&q.addr) {
                    lookup.on_failure(q.addr);
                } else {
                    let reply = tables[q.addr.0 as usize].closest(lookup.target(), k);
                    lookup.on_response(q.addr, reply);
                }
            }
        }
        lookup.result()
    }

    #[test]
    fn lone_node_finds_nothing() {
        let (contacts, _) = network(1, 32, 20);
        let mut l = Lookup::new(contacts[0].kid, contacts[0].kid, 20, 3, []);
        assert!(l.next_queries().is_empty());
        assert!(l.is_done());
        assert!(l.result().contacts.is_empty());
        assert!(!l.result().timed_out);
    }

    #[test]
    fn finds_exact_target_from_sparse_start() {
        let k = 4;
        let (contacts, tables) = network(64, 32, k);
        for start in [0usize, 17, 63] {
            for target in [5usize, 40] {
                let seeds = tables[start].closest(&contacts[start].kid, 2);
                let mut l = Lookup::new(contacts[target].kid, contacts[start].kid, k, 3, seeds);
                let r = drive(&mut l, &tables, k, &[]);
                if start != target {
                    assert_eq!(r.contacts[0].kid, contacts[target].kid);
                }
                assert!(r.rounds as u16 <= 32);
            }
        }
    }

    #[test]
    fn all_dead_sets_timeout_flag() {
        let (contacts, tables) = network(8, 16, 4);
        let seeds = tables[0].closest(&contacts[0].kid, 2);
        let dead: Vec<NodeId> = seeds.iter().map(|c| c.addr).collect();
        let mut l = Lookup::new(contacts[3].kid, contacts[0].kid, 4, 3, seeds);
        let r = drive(&mut l, &tables, 4, &dead);
        assert!(r.timed_out);
    }
}
