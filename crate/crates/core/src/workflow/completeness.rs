use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::synapse::SynapseRecord;
use crate::workflow::BodyState;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletenessCounts {
    /// (T-bar, PSD) connections in total.
    pub connections: u64,
    /// Connections whose pre and post bodies are both identified.
    pub complete: u64,
}

impl CompletenessCounts {
    pub fn fraction(&self) -> f64 {
        if self.connections == 0 {
            0.0
        } else {
            self.complete as f64 / self.connections as f64
        }
    }
}

pub fn completeness_counts(bodies: &BodyState, synapses: &[SynapseRecord]) -> Result<CompletenessCounts> {
    let mut counts = CompletenessCounts::default();
    for s in synapses {
        let pre = bodies.is_identified(s.pre_fragment)?;
        for &post in &s.post_fragments {
            counts.connections += 1;
            if pre && bodies.is_identified(post)? {
                counts.complete += 1;
            }
        }
    }
    Ok(counts)
}

/// Fraction of synaptic connections with both partners in identified bodies.
pub fn completeness(bodies: &BodyState, synapses: &[SynapseRecord]) -> Result<f64> {
    Ok(completeness_counts(bodies, synapses)?.fraction())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Voxel;

    fn syn(pre: u64, posts: &[u64]) -> SynapseRecord {
        SynapseRecord {
            tbar: Voxel::new(0, 0, 0),
            psds: posts.iter().map(|_| Voxel::new(0, 0, 1)).collect(),
            pre_fragment: pre,
            post_fragments: posts.to_vec(),
        }
    }

    #[test]
    fn trivial_cases() {
        let synapses = vec![syn(1, &[2]), syn(3, &[1])];
        let mut b = BodyState::new(1..=3);
        assert_eq!(completeness(&b, &synapses).unwrap(), 0.0);
        b.set_identified(1, true).unwrap();
        b.set_identified(2, true).unwrap();
        assert_eq!(completeness(&b, &synapses).unwrap(), 0.5);
        b.set_identified(3, true).unwrap();
        assert_eq!(completeness(&b, &synapses).unwrap(), 1.0);
        assert_eq!(completeness(&b, &[]).unwrap(), 0.0);
    }

    #[test]
    fn merging_into_identified_body_only_increases() {
        let synapses = vec![syn(1, &[2, 3]), syn(3, &[1]), syn(2, &[3])];
        let mut b = BodyState::new(1..=3);
        b.set_identified(1, true).unwrap();
        let before = completeness(&b, &synapses).unwrap();
        b.union(3, 1).unwrap();
        let after = completeness(&b, &synapses).unwrap();
        assert!(after >= before);
        assert_eq!(completeness_counts(&b, &synapses).unwrap(), CompletenessCounts { connections: 4, complete: 2 });
    }
}
