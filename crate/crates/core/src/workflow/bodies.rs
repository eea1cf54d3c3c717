use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::synapse::SynapseRecord;

/// Current merged bodies: a union-find over fragment ids with path
/// compression and union by size. Identified flags and synapse counts are
/// kept on roots; a union of an identified body with anything is identified.
#[derive(Clone, Debug)]
pub struct BodyState {
    index: HashMap<u64, usize>,
    ids: Vec<u64>,
    parent: Vec<usize>,
    size: Vec<usize>,
    identified: Vec<bool>,
    tbars: Vec<u64>,
    psds: Vec<u64>,
}

/// Order-independent view of a [`BodyState`], for equality checks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BodySnapshot {
    /// Each body as its sorted member list, bodies sorted by first member.
    pub bodies: Vec<Vec<u64>>,
    /// Smallest member of each identified body.
    pub identified: BTreeSet<u64>,
    /// Smallest member -> (T-bars, PSDs).
    pub synapses: BTreeMap<u64, (u64, u64)>,
}

impl BodyState {
    pub fn new(fragments: impl IntoIterator<Item = u64>) -> Self {
        let ids: Vec<u64> = fragments
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let n = ids.len();
        BodyState {
            index: ids.iter().enumerate().map(|(i, &id)| (id, i)).collect(),
            ids,
            parent: (0..n).collect(),
            size: vec![1; n],
            identified: vec![false; n],
            tbars: vec![0; n],
            psds: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.index.contains_key(&id)
    }

    pub fn fragments(&self) -> &[u64] {
        &self.ids
    }

    fn slot(&self, id: u64) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownFragment(id))
    }

    fn root_slot(&self, mut i: usize) -> usize {
        while self.parent[i] != i {
            i = self.parent[i];
        }
        i
    }

    fn find_slot(&mut self, i: usize) -> usize {
        let root = self.root_slot(i);
        let mut cur = i;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Root fragment id without path compression.
    pub fn root(&self, id: u64) -> Result<u64> {
        Ok(self.ids[self.root_slot(self.slot(id)?)])
    }

    pub fn find(&mut self, id: u64) -> Result<u64> {
        let s = self.slot(id)?;
        let r = self.find_slot(s);
        Ok(self.ids[r])
    }

    /// Joins the bodies of `a` and `b`. Returns false when already joined.
    pub fn union(&mut self, a: u64, b: u64) -> Result<bool> {
        let (sa, sb) = (self.slot(a)?, self.slot(b)?);
        let (ra, rb) = (self.find_slot(sa), self.find_slot(sb));
        if ra == rb {
            return Ok(false);
        }
        // Larger body wins; equal sizes keep the smaller fragment id as root.
        let (root, child) = if self.size[ra] > self.size[rb] || (self.size[ra] == self.size[rb] && ra < rb) {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[child] = root;
        self.size[root] += self.size[child];
        self.identified[root] |= self.identified[child];
        self.tbars[root] += self.tbars[child];
        self.psds[root] += self.psds[child];
        Ok(true)
    }

    pub fn is_identified(&self, id: u64) -> Result<bool> {
        Ok(self.identified[self.root_slot(self.slot(id)?)])
    }

    pub fn set_identified(&mut self, id: u64, flag: bool) -> Result<()> {
        let r = self.root_slot(self.slot(id)?);
        self.identified[r] = flag;
        Ok(())
    }

    pub fn add_synapse_counts(&mut self, id: u64, tbars: u64, psds: u64) -> Result<()> {
        let r = self.root_slot(self.slot(id)?);
        self.tbars[r] += tbars;
        self.psds[r] += psds;
        Ok(())
    }

    /// Adds every T-bar to its pre fragment and every PSD to its post fragment.
    pub fn add_synapses(&mut self, synapses: &[SynapseRecord]) -> Result<()> {
        for s in synapses {
            self.add_synapse_counts(s.pre_fragment, 1, 0)?;
            for &post in &s.post_fragments {
                self.add_synapse_counts(post, 0, 1)?;
            }
        }
        Ok(())
    }

    /// Contained T-bars plus PSDs of the body holding `id`.
    pub fn weight(&self, id: u64) -> Result<u64> {
        let (t, p) = self.synapse_counts(id)?;
        Ok(t + p)
    }

    pub fn synapse_counts(&self, id: u64) -> Result<(u64, u64)> {
        let r = self.root_slot(self.slot(id)?);
        Ok((self.tbars[r], self.psds[r]))
    }

    pub fn body_size(&self, id: u64) -> Result<usize> {
        Ok(self.size[self.root_slot(self.slot(id)?)])
    }

    /// Root ids of all current bodies, ascending.
    pub fn roots(&self) -> Vec<u64> {
        (0..self.ids.len())
            .filter(|&i| self.parent[i] == i)
            .map(|i| self.ids[i])
            .collect()
    }

    pub fn snapshot(&self) -> BodySnapshot {
        let mut groups: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
        for i in 0..self.ids.len() {
            groups.entry(self.root_slot(i)).or_default().push(self.ids[i]);
        }
        let mut bodies = Vec::with_capacity(groups.len());
        let mut identified = BTreeSet::new();
        let mut synapses = BTreeMap::new();
        for (root, members) in groups {
            let first = members[0];
            if self.identified[root] {
                identified.insert(first);
            }
            synapses.insert(first, (self.tbars[root], self.psds[root]));
            bodies.push(members);
        }
        bodies.sort();
        BodySnapshot {
            bodies,
            identified,
            synapses,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_state_is_singletons() {
        let b = BodyState::new([3, 1, 2, 2]);
        assert_eq!(b.len(), 3);
        assert_eq!(b.roots(), vec![1, 2, 3]);
        assert_eq!(b.snapshot().bodies, vec![vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn union_is_transitive_and_propagates_flags() {
        let mut b = BodyState::new(1..=4);
        b.set_identified(3, true).unwrap();
        b.add_synapse_counts(1, 2, 1).unwrap();
        b.add_synapse_counts(3, 0, 5).unwrap();
        assert!(b.union(1, 2).unwrap());
        assert!(b.union(2, 3).unwrap());
        assert!(!b.union(1, 3).unwrap());
        assert_eq!(b.root(1).unwrap(), b.root(3).unwrap());
        assert!(b.is_identified(1).unwrap());
        assert_eq!(b.synapse_counts(2).unwrap(), (2, 6));
        assert_eq!(b.weight(1).unwrap(), 8);
        assert_eq!(b.body_size(1).unwrap(), 3);
        assert!(!b.is_identified(4).unwrap());
        assert!(matches!(b.union(1, 9), Err(Error::UnknownFragment(9))));
    }

    #[test]
    fn find_compresses_without_changing_partition() {
        let mut b = BodyState::new(1..=6);
        for i in 1..6 {
            b.union(i, i + 1).unwrap();
        }
        let before = b.snapshot();
        for i in 1..=6 {
            b.find(i).unwrap();
        }
        assert_eq!(b.snapshot(), before);
    }
}
