use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjacency::{CandidateId, MergeCandidate};
use crate::error::{Error, Result};
use crate::workflow::{BodyState, Clock, DecisionLog, DecisionSource, Verdict};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrphanPolicy {
    pub weight_min: u64,
    pub weight_max: u64,
    pub accept_threshold: f64,
    pub max_merges_per_orphan: u32,
    pub passes: u32,
}

impl OrphanPolicy {
    pub fn new(accept_threshold: f64) -> Self {
        OrphanPolicy {
            weight_min: 10,
            weight_max: 100,
            accept_threshold,
            max_merges_per_orphan: 1,
            passes: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.accept_threshold > 0.0 && self.accept_threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "accept threshold must lie in (0, 1), got {}",
                self.accept_threshold
            )));
        }
        if self.weight_min > self.weight_max {
            return Err(Error::InvalidArgument(format!(
                "weight_min {} exceeds weight_max {}",
                self.weight_min, self.weight_max
            )));
        }
        if self.max_merges_per_orphan != 1 {
            return Err(Error::InvalidArgument(
                "only one accepted merge per orphan per pass is supported".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrphanProposal {
    pub pass: u32,
    pub candidate_id: CandidateId,
    pub orphan_body: u64,
    pub target_body: u64,
    pub score: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OrphanRun {
    /// Best-scoring edge per orphan per pass, accepted or not.
    pub proposals: Vec<OrphanProposal>,
    pub accepted: Vec<CandidateId>,
}

/// Orphan-link automation. Each pass collects, for every non-identified body
/// whose synapse weight lies in the policy range, the candidate edges to
/// identified bodies, scores them with `scorer`, and accepts the best one if
/// it reaches the threshold. Accepted merges are unioned into `bodies` and
/// appended to `log` as auto decisions before the next pass.
pub fn orphan_link_run<F>(
    bodies: &mut BodyState,
    candidates: &[MergeCandidate],
    scorer: F,
    policy: &OrphanPolicy,
    log: &mut DecisionLog,
    source: &DecisionSource,
    clock: &dyn Clock,
) -> Result<OrphanRun>
where
    F: Fn(&MergeCandidate, &BodyState) -> Result<f64> + Sync,
{
    policy.validate()?;
    let mut run = OrphanRun::default();
    for pass in 0..policy.passes {
        // orphan root -> (candidate index, target root)
        let mut by_orphan: BTreeMap<u64, Vec<(usize, u64)>> = BTreeMap::new();
        for (i, c) in candidates.iter().enumerate() {
            let (ra, rb) = (bodies.root(c.edge.a)?, bodies.root(c.edge.b)?);
            if ra == rb {
                continue;
            }
            let (orphan, target) = match (bodies.is_identified(ra)?, bodies.is_identified(rb)?) {
                (false, true) => (ra, rb),
                (true, false) => (rb, ra),
                _ => continue,
            };
            let w = bodies.weight(orphan)?;
            if w < policy.weight_min || w > policy.weight_max {
                continue;
            }
            by_orphan.entry(orphan).or_default().push((i, target));
        }
        if by_orphan.is_empty() {
            break;
        }

        let state: &BodyState = bodies;
        let flat: Vec<(u64, usize, u64)> = by_orphan
            .iter()
            .flat_map(|(&o, v)| v.iter().map(move |&(i, t)| (o, i, t)))
            .collect();
        let scores: Vec<f64> = flat
            .par_iter()
            .map(|&(_, i, _)| scorer(&candidates[i], state))
            .collect::<Result<_>>()?;

        // Resolve in orphan order; ties on score go to the smaller candidate id.
        let mut best: BTreeMap<u64, (f64, CandidateId, u64)> = BTreeMap::new();
        for (&(orphan, i, target), &s) in flat.iter().zip(&scores) {
            let id = candidates[i].id;
            let better = match best.get(&orphan) {
                None => true,
                Some(&(bs, bid, _)) => s > bs || (s == bs && id < bid),
            };
            if better {
                best.insert(orphan, (s, id, target));
            }
        }
        let mut accepted_any = false;
        for (orphan, (score, id, target)) in best {
            let accepted = score >= policy.accept_threshold;
            if accepted {
                bodies.union(orphan, target)?;
                log.append(id, Verdict::Merge, source.clone(), clock.now())?;
                run.accepted.push(id);
                accepted_any = true;
            }
            run.proposals.push(OrphanProposal {
                pass,
                candidate_id: id,
                orphan_body: orphan,
                target_body: target,
                score,
                accepted,
            });
        }
        if !accepted_any {
            break;
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjacency::{AdjacencyEdge, Workflow};
    use crate::volume::Voxel;
    use crate::workflow::LogicalClock;

    fn cand(a: u64, b: u64, score: f64) -> MergeCandidate {
        let mut c = MergeCandidate::new(
            AdjacencyEdge {
                a,
                b,
                contact_voxels: 10,
                rep_location: Voxel::new(a as u32, b as u32, 0),
                factor: 1,
            },
            Workflow::Orphan,
        );
        c.scores.insert("fusion".into(), score);
        c
    }

    fn by_score(c: &MergeCandidate, _: &BodyState) -> Result<f64> {
        Ok(c.scores["fusion"])
    }

    fn setup() -> BodyState {
        let mut b = BodyState::new(1..=6);
        for id in 1..=6 {
            b.add_synapse_counts(id, 10, 10).unwrap();
        }
        b.set_identified(1, true).unwrap();
        b.set_identified(2, true).unwrap();
        b
    }

    #[test]
    fn accepts_confident_orphan() {
        let mut b = setup();
        let cands = vec![cand(1, 3, 0.99)];
        let mut log = DecisionLog::in_memory();
        let clock = LogicalClock::from_unix(0);
        let run = orphan_link_run(
            &mut b,
            &cands,
            by_score,
            &OrphanPolicy::new(0.9),
            &mut log,
            &DecisionSource::Auto("m".into()),
            &clock,
        )
        .unwrap();
        assert_eq!(run.accepted, vec![cands[0].id]);
        assert_eq!(b.root(3).unwrap(), b.root(1).unwrap());
        assert_eq!(log.len(), 1);
        assert_eq!(log.entries()[0].verdict, Verdict::Merge);
    }

    #[test]
    fn no_identified_neighbour_no_proposal() {
        let mut b = setup();
        let cands = vec![cand(3, 4, 0.99)];
        let mut log = DecisionLog::in_memory();
        let run = orphan_link_run(
            &mut b,
            &cands,
            by_score,
            &OrphanPolicy::new(0.5),
            &mut log,
            &DecisionSource::Auto("m".into()),
            &LogicalClock::from_unix(0),
        )
        .unwrap();
        assert!(run.proposals.is_empty());
        assert!(log.is_empty());
    }

    #[test]
    fn best_edge_only_and_weight_window() {
        let mut b = setup();
        // Orphan 3 touches both identified bodies; 5 is too heavy after adding weight.
        b.add_synapse_counts(5, 200, 0).unwrap();
        let cands = vec![cand(1, 3, 0.95), cand(2, 3, 0.97), cand(1, 5, 0.99), cand(2, 6, 0.3)];
        let mut log = DecisionLog::in_memory();
        let run = orphan_link_run(
            &mut b,
            &cands,
            by_score,
            &OrphanPolicy::new(0.9),
            &mut log,
            &DecisionSource::Auto("m".into()),
            &LogicalClock::from_unix(0),
        )
        .unwrap();
        assert_eq!(run.accepted, vec![cands[1].id]);
        assert_eq!(run.proposals.len(), 2);
        assert!(!run.proposals.iter().find(|p| p.orphan_body == 6).unwrap().accepted);
        assert_eq!(b.root(3).unwrap(), b.root(2).unwrap());
        assert_ne!(b.root(1).unwrap(), b.root(2).unwrap());
    }

    #[test]
    fn multi_pass_follows_chains() {
        let mut b = setup();
        let cands = vec![cand(1, 3, 0.95), cand(3, 4, 0.95)];
        let mut policy = OrphanPolicy::new(0.9);
        policy.passes = 3;
        let mut log = DecisionLog::in_memory();
        let run = orphan_link_run(
            &mut b,
            &cands,
            by_score,
            &policy,
            &mut log,
            &DecisionSource::Auto("m".into()),
            &LogicalClock::from_unix(0),
        )
        .unwrap();
        assert_eq!(run.accepted.len(), 2);
        assert_eq!(b.root(4).unwrap(), b.root(1).unwrap());
        assert_eq!(log.entries()[1].sequence, 2);
    }

    #[test]
    fn policy_validation() {
        assert!(OrphanPolicy::new(0.0).validate().is_err());
        assert!(OrphanPolicy::new(1.0).validate().is_err());
        let mut p = OrphanPolicy::new(0.5);
        p.weight_min = 200;
        assert!(p.validate().is_err());
    }
}
