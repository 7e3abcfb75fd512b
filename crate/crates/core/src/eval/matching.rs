use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Counts;
use crate::types::{Event, EventList};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStrategy {
    /// Earliest-onset greedy assignment only.
    Greedy,
    /// Greedy assignment completed to a maximum matching with augmenting paths.
    #[default]
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchConfig {
    #[serde(default = "MatchConfig::default_collar")]
    pub onset_collar_s: f64,
    #[serde(default = "MatchConfig::default_collar")]
    pub offset_collar_s: f64,
    #[serde(default = "MatchConfig::default_pct")]
    pub offset_pct: f64,
    #[serde(default)]
    pub strategy: MatchStrategy,
}

impl MatchConfig {
    fn default_collar() -> f64 {
        0.2
    }
    fn default_pct() -> f64 {
        0.2
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.onset_collar_s < 0.0 || self.offset_collar_s < 0.0 || self.offset_pct < 0.0 {
            return Err(crate::Error::Config("matching collars must be >= 0".into()));
        }
        Ok(())
    }

    /// Onset within the onset collar and offset within
    /// `max(offset_collar, offset_pct * reference length)`.
    pub fn compatible(&self, reference: &Event, predicted: &Event) -> bool {
        // small slack so that times printed with 3 decimals still match at the boundary
        const SLACK: f64 = 1e-9;
        let off_collar = self
            .offset_collar_s
            .max(self.offset_pct * reference.duration());
        (predicted.onset - reference.onset).abs() <= self.onset_collar_s + SLACK
            && (predicted.offset - reference.offset).abs() <= off_collar + SLACK
    }
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            onset_collar_s: Self::default_collar(),
            offset_collar_s: Self::default_collar(),
            offset_pct: Self::default_pct(),
            strategy: MatchStrategy::Optimal,
        }
    }
}

/// One-to-one matching of one class's events; returns `pred_of_ref`.
pub fn match_class(refs: &[Event], preds: &[Event], cfg: &MatchConfig) -> Vec<Option<usize>> {
    let mut ref_order: Vec<usize> = (0..refs.len()).collect();
    ref_order.sort_by(|&a, &b| refs[a].onset.total_cmp(&refs[b].onset).then(a.cmp(&b)));
    let mut pred_order: Vec<usize> = (0..preds.len()).collect();
    pred_order.sort_by(|&a, &b| preds[a].onset.total_cmp(&preds[b].onset).then(a.cmp(&b)));

    // adjacency in earliest-onset order
    let adj: Vec<Vec<usize>> = (0..refs.len())
        .map(|r| {
            pred_order
                .iter()
                .copied()
                .filter(|&p| cfg.compatible(&refs[r], &preds[p]))
                .collect()
        })
        .collect();

    let mut pred_of_ref = vec![None; refs.len()];
    let mut ref_of_pred = vec![None; preds.len()];
    for &r in &ref_order {
        if let Some(&p) = adj[r].iter().find(|&&p| ref_of_pred[p].is_none()) {
            pred_of_ref[r] = Some(p);
            ref_of_pred[p] = Some(r);
        }
    }

    if cfg.strategy == MatchStrategy::Optimal {
        for &r in &ref_order {
            if pred_of_ref[r].is_none() {
                let mut seen = vec![false; preds.len()];
                augment(r, &adj, &mut seen, &mut pred_of_ref, &mut ref_of_pred);
            }
        }
    }
    pred_of_ref
}

fn augment(
    r: usize,
    adj: &[Vec<usize>],
    seen: &mut [bool],
    pred_of_ref: &mut [Option<usize>],
    ref_of_pred: &mut [Option<usize>],
) -> bool {
    for &p in &adj[r] {
        if seen[p] {
            continue;
        }
        seen[p] = true;
        let free = match ref_of_pred[p] {
            None => true,
            Some(other) => augment(other, adj, seen, pred_of_ref, ref_of_pred),
        };
        if free {
            pred_of_ref[r] = Some(p);
            ref_of_pred[p] = Some(r);
            return true;
        }
    }
    false
}

/// Per-class TP/FP/FN for one clip.
pub fn match_events(
    reference: &EventList,
    predicted: &EventList,
    cfg: &MatchConfig,
) -> BTreeMap<usize, Counts> {
    let mut out = BTreeMap::new();
    for c in reference.classes().union(&predicted.classes()) {
        let refs: Vec<Event> = reference.of_class(*c).copied().collect();
        let preds: Vec<Event> = predicted.of_class(*c).copied().collect();
        let tp = match_class(&refs, &preds, cfg).iter().flatten().count();
        out.insert(
            *c,
            Counts {
                tp,
                fp: preds.len() - tp,
                fn_: refs.len() - tp,
            },
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(v: &[(f64, f64)]) -> EventList {
        EventList::new(v.iter().map(|&(a, b)| Event::new(a, b, 0)).collect())
    }

    #[test]
    fn collar_examples() {
        let cfg = MatchConfig::default();
        let r = list(&[(1.0, 2.0)]);
        let m = match_events(&r, &list(&[(1.15, 2.1)]), &cfg);
        assert_eq!(
            m[&0],
            Counts {
                tp: 1,
                fp: 0,
                fn_: 0
            }
        );
        let m = match_events(&r, &list(&[(1.25, 2.0)]), &cfg);
        assert_eq!(
            m[&0],
            Counts {
                tp: 0,
                fp: 1,
                fn_: 1
            }
        );
    }

    #[test]
    fn offset_collar_scales_with_long_events() {
        let cfg = MatchConfig::default();
        // 5 s event: offset tolerance max(0.2, 1.0) = 1.0
        let r = list(&[(0.0, 5.0)]);
        assert_eq!(match_events(&r, &list(&[(0.1, 4.1)]), &cfg)[&0].tp, 1);
        assert_eq!(match_events(&r, &list(&[(0.1, 3.9)]), &cfg)[&0].tp, 0);
    }

    #[test]
    fn greedy_can_be_suboptimal() {
        // ref0 accepts both predictions; ref1 accepts only the earlier one
        let refs = [Event::new(1.0, 2.0, 0), Event::new(1.1, 2.35, 0)];
        let preds = [Event::new(1.05, 2.15, 0), Event::new(1.1, 1.85, 0)];
        let greedy = MatchConfig {
            strategy: MatchStrategy::Greedy,
            ..Default::default()
        };
        assert_eq!(
            match_class(&refs, &preds, &greedy).iter().flatten().count(),
            1
        );
        let optimal = match_class(&refs, &preds, &MatchConfig::default());
        assert_eq!(optimal, vec![Some(1), Some(0)]);
    }

    #[test]
    fn swapping_roles_swaps_fp_and_fn() {
        let cfg = MatchConfig {
            offset_pct: 0.0,
            ..Default::default()
        };
        let a = list(&[(0.0, 1.0), (3.0, 4.0), (6.0, 6.5)]);
        let b = list(&[(0.1, 1.1), (6.05, 6.4)]);
        let ab = match_events(&a, &b, &cfg)[&0];
        let ba = match_events(&b, &a, &cfg)[&0];
        assert_eq!(ab.tp, ba.tp);
        assert_eq!((ab.fp, ab.fn_), (ba.fn_, ba.fp));
    }
}
