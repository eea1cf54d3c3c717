use std::collections::HashSet;

use crate::adjacency::CandidateId;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TriageResult {
    /// Every candidate, highest score first (ties by candidate id).
    pub order: Vec<CandidateId>,
    /// Length of the prefix of `order` inside the budget.
    pub selected: usize,
    /// Fraction of true merges inside the selected prefix, when truth is known.
    pub captured_value: Option<f64>,
}

impl TriageResult {
    pub fn tasks(&self) -> &[CandidateId] {
        &self.order[..self.selected]
    }
}

pub fn triage(
    scored: &[(CandidateId, f64)],
    budget_fraction: f64,
    true_merges: Option<&HashSet<CandidateId>>,
) -> Result<TriageResult> {
    if !(0.0..=1.0).contains(&budget_fraction) {
        return Err(Error::InvalidArgument(format!(
            "budget fraction must lie in [0, 1], got {budget_fraction}"
        )));
    }
    if let Some((id, s)) = scored.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("candidate {id} has non-finite score {s}")));
    }
    let mut ranked: Vec<(CandidateId, f64)> = scored.to_vec();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let order: Vec<CandidateId> = ranked.into_iter().map(|(id, _)| id).collect();
    let selected = ((budget_fraction * order.len() as f64).round() as usize).min(order.len());
    let captured_value = true_merges.map(|truth| {
        let total = order.iter().filter(|id| truth.contains(id)).count();
        if total == 0 {
            return 1.0;
        }
        let hit = order[..selected].iter().filter(|id| truth.contains(id)).count();
        hit as f64 / total as f64
    });
    Ok(TriageResult {
        order,
        selected,
        captured_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_budget_takes_everything() {
        let scored: Vec<_> = (0..10).map(|i| (CandidateId(i), (i % 3) as f64 / 3.0)).collect();
        let truth: HashSet<_> = [CandidateId(1), CandidateId(4)].into_iter().collect();
        let r = triage(&scored, 1.0, Some(&truth)).unwrap();
        assert_eq!(r.selected, 10);
        assert_eq!(r.captured_value, Some(1.0));
        let mut sorted = r.order.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).map(CandidateId).collect::<Vec<_>>());
    }

    #[test]
    fn order_by_score_then_id() {
        let scored = vec![
            (CandidateId(5), 0.5),
            (CandidateId(2), 0.9),
            (CandidateId(1), 0.5),
        ];
        let r = triage(&scored, 0.34, None).unwrap();
        assert_eq!(r.order, vec![CandidateId(2), CandidateId(1), CandidateId(5)]);
        assert_eq!(r.tasks(), &[CandidateId(2)]);
        assert_eq!(r.captured_value, None);
    }

    #[test]
    fn random_scores_capture_about_budget() {
        let mut total = 0.0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scored: Vec<_> = (0..1000).map(|i| (CandidateId(i), rng.random::<f64>())).collect();
            let truth: HashSet<_> = (0..1000).filter(|i| i % 5 == 0).map(CandidateId).collect();
            let r = triage(&scored, 0.2, Some(&truth)).unwrap();
            let v = r.captured_value.unwrap();
            assert!((v - 0.2).abs() <= 0.1, "seed {seed}: {v}");
            total += v;
        }
        assert!((total / 20.0 - 0.2).abs() < 0.03);
    }
}
