//! Set-wise mismatch loss and the reflection trigger.
//!
//! `loss = Σ_j Σ_{i ∈ S_j} |pred_j(i) - label(i)|` over valid windows. An item
//! covered by several windows contributes once per window. The trigger fires
//! when the loss is strictly greater than the threshold.

use std::collections::BTreeMap;

use crate::domain::{ItemId, Label, MismatchReport, Scenario, Subset, SubsetAssessment, SubsetLoss, ValidationConfig};
use crate::{Error, Result};

fn label_of(labels: &BTreeMap<ItemId, Label>, item: &ItemId) -> Result<Label> {
    labels.get(item).copied().ok_or_else(|| Error::UnlabeledItem(item.clone()))
}

pub fn scenario_of(items: &[ItemId], labels: &BTreeMap<ItemId, Label>) -> Result<Scenario> {
    let mut positives = 0;
    for item in items {
        if label_of(labels, item)?.is_positive() {
            positives += 1;
        }
    }
    Ok(if positives == items.len() {
        Scenario::TwoPositive
    } else if positives == 0 {
        Scenario::TwoNegative
    } else {
        Scenario::Mixed
    })
}

pub fn classify_scenarios(subsets: &[Subset], labels: &BTreeMap<ItemId, Label>) -> Result<Vec<Scenario>> {
    subsets.iter().map(|s| scenario_of(&s.items, labels)).collect()
}

/// Loss-only report: `threshold` is 0 and `triggered` false until
/// [`validate`] fills them in.
pub fn mismatch_loss(assessments: &[SubsetAssessment], labels: &BTreeMap<ItemId, Label>) -> Result<MismatchReport> {
    let mut per_subset = Vec::new();
    let mut invalid_windows = Vec::new();
    let mut loss = 0.0;
    for assessment in assessments {
        if !assessment.valid {
            invalid_windows.push(assessment.window_index);
            continue;
        }
        let mut subset_loss = 0.0;
        for item in &assessment.items {
            let label = label_of(labels, item)?;
            let predicted = assessment
                .item_scores
                .get(item)
                .copied()
                .ok_or_else(|| Error::invalid("assessment", format!("no score for {item}")))?;
            subset_loss += (predicted - label.value()).abs();
        }
        loss += subset_loss;
        per_subset.push(SubsetLoss {
            window_index: assessment.window_index,
            loss: subset_loss,
            scenario: scenario_of(&assessment.items, labels)?,
        });
    }
    Ok(MismatchReport { loss, threshold: 0.0, triggered: false, per_subset, invalid_windows })
}

pub fn validate(
    assessments: &[SubsetAssessment],
    labels: &BTreeMap<ItemId, Label>,
    config: &ValidationConfig,
) -> Result<MismatchReport> {
    config.check()?;
    let mut report = mismatch_loss(assessments, labels)?;
    report.threshold = config.threshold;
    report.triggered = report.loss > config.threshold;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::CandidateSet;
    use crate::partition::{memberships, partition, PartitionConfig};
    use proptest::prelude::*;

    fn iid(s: &str) -> ItemId {
        ItemId::new(s).unwrap()
    }

    fn labels(pairs: &[(&str, u8)]) -> BTreeMap<ItemId, Label> {
        pairs.iter().map(|(k, v)| (iid(k), Label::from(*v == 1))).collect()
    }

    fn assessment(window: usize, scores: &[(&str, f64)]) -> SubsetAssessment {
        SubsetAssessment {
            window_index: window,
            items: scores.iter().map(|(k, _)| iid(k)).collect(),
            item_scores: scores.iter().map(|(k, v)| (iid(k), *v)).collect(),
            compatibility: Some(0.5),
            rationale: String::new(),
            valid: true,
            repairs: 0,
        }
    }

    #[test]
    fn zero_when_predictions_match() {
        let l = labels(&[("a", 1), ("b", 0), ("c", 1)]);
        let a = [assessment(1, &[("a", 1.0), ("b", 0.0)]), assessment(2, &[("b", 0.0), ("c", 1.0)])];
        assert_eq!(mismatch_loss(&a, &l).unwrap().loss, 0.0);
    }

    #[test]
    fn hand_summed_example() {
        // (a,b): |1-1| + |0-1| = 1 ; (b,c): |1-1| + |1-0| = 1 ; total 2.
        let l = labels(&[("a", 1), ("b", 1), ("c", 0)]);
        let a = [assessment(1, &[("a", 1.0), ("b", 0.0)]), assessment(2, &[("b", 1.0), ("c", 1.0)])];
        let report = mismatch_loss(&a, &l).unwrap();
        assert_eq!(report.loss, 2.0);
        assert_eq!(report.per_subset[0].loss, 1.0);
        assert_eq!(report.per_subset[1].loss, 1.0);

        let triggered = validate(&a, &l, &ValidationConfig::new(1.0, 2).unwrap()).unwrap();
        assert!(triggered.triggered);
    }

    #[test]
    fn interior_error_counts_per_window() {
        // b is interior (windows 1 and 2) and mispredicted by 0.7 in each.
        let l = labels(&[("a", 1), ("b", 0), ("c", 1)]);
        let set = CandidateSet::new(vec![iid("a"), iid("b"), iid("c")], l.clone()).unwrap();
        let subsets = partition(&set, &PartitionConfig::default()).unwrap();
        let multiplicity = memberships(&subsets)[&iid("b")].len();
        let a = [assessment(1, &[("a", 1.0), ("b", 0.7)]), assessment(2, &[("b", 0.7), ("c", 1.0)])];
        let loss = mismatch_loss(&a, &l).unwrap().loss;
        assert!((loss - 0.7 * multiplicity as f64).abs() < 1e-12);
        assert_eq!(multiplicity, 2);
    }

    #[test]
    fn invalid_windows_are_excluded_and_flagged() {
        let l = labels(&[("a", 1), ("b", 0), ("c", 1)]);
        let mut bad = assessment(2, &[("b", 1.0), ("c", 0.0)]);
        bad.valid = false;
        bad.item_scores.clear();
        let report = mismatch_loss(&[assessment(1, &[("a", 0.0), ("b", 0.0)]), bad], &l).unwrap();
        assert_eq!(report.loss, 1.0);
        assert_eq!(report.invalid_windows, vec![2]);
        assert_eq!(report.per_subset.len(), 1);
    }

    #[test]
    fn unlabeled_item_is_an_error() {
        let l = labels(&[("a", 1)]);
        let err = mismatch_loss(&[assessment(1, &[("a", 1.0), ("z", 0.0)])], &l).unwrap_err();
        assert!(matches!(err, Error::UnlabeledItem(ref i) if i.as_str() == "z"));
    }

    #[test]
    fn scenarios() {
        let l = labels(&[("p", 1), ("q", 1), ("n", 0), ("m", 0)]);
        let tag = |a: &str, b: &str| scenario_of(&[iid(a), iid(b)], &l).unwrap();
        assert_eq!(tag("p", "q"), Scenario::TwoPositive);
        assert_eq!(tag("n", "m"), Scenario::TwoNegative);
        assert_eq!(tag("p", "n"), Scenario::Mixed);
        assert_eq!(scenario_of(&[iid("p"), iid("q"), iid("n")], &l).unwrap(), Scenario::Mixed);
        let subsets = vec![Subset { window_index: 1, items: vec![iid("p"), iid("n")] }];
        assert_eq!(classify_scenarios(&subsets, &l).unwrap(), vec![Scenario::Mixed]);
    }

    #[test]
    fn trigger_is_strict() {
        let l = labels(&[("a", 1), ("b", 0)]);
        let perfect = [assessment(1, &[("a", 1.0), ("b", 0.0)])];
        let one_off = [assessment(1, &[("a", 0.0), ("b", 0.0)])];
        let cfg = |t: f64| ValidationConfig::new(t, 2).unwrap();
        assert!(!validate(&perfect, &l, &cfg(0.0)).unwrap().triggered);
        assert!(!validate(&one_off, &l, &cfg(1.0)).unwrap().triggered);
        assert!(validate(&one_off, &l, &cfg(0.5)).unwrap().triggered);
        assert_eq!(validate(&one_off, &l, &cfg(0.5)).unwrap().threshold, 0.5);
    }

    proptest! {
        #[test]
        fn loss_bounds_and_monotonicity(
            scores in proptest::collection::vec(0.0f64..=1.0, 2..10),
            label_bits in proptest::collection::vec(any::<bool>(), 10),
            which in 0usize..10,
            nudge in 0.0f64..=1.0,
        ) {
            let n = scores.len();
            let ids: Vec<String> = (0..n).map(|i| format!("i{i}")).collect();
            let l: BTreeMap<ItemId, Label> = ids.iter().zip(&label_bits).map(|(id, b)| (iid(id), Label::from(*b))).collect();
            let build = |scores: &[f64]| -> Vec<SubsetAssessment> {
                (0..n - 1).map(|j| assessment(j + 1, &[(&ids[j], scores[j]), (&ids[j + 1], scores[j + 1])])).collect()
            };
            let loss = mismatch_loss(&build(&scores), &l).unwrap().loss;
            prop_assert!(loss >= 0.0);
            prop_assert!(loss <= (2 * (n - 1)) as f64 + 1e-12);

            // Move one prediction further from its label.
            let i = which % n;
            let target = l[&iid(&ids[i])].value();
            let mut worse = scores.clone();
            worse[i] = if target == 1.0 { worse[i] * (1.0 - nudge) } else { worse[i] + (1.0 - worse[i]) * nudge };
            let worse_loss = mismatch_loss(&build(&worse), &l).unwrap().loss;
            prop_assert!(worse_loss >= loss - 1e-12);
        }
    }
}
