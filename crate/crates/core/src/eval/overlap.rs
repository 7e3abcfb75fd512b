use crate::types::{Annotations, EventList};

/// Time covered by at least two distinct classes at once.
pub fn overlap_duration(events: &EventList) -> f64 {
    // union per class first so a class never overlaps itself
    let mut edges: Vec<(f64, i32)> = Vec::new();
    for c in events.classes() {
        let mut spans: Vec<(f64, f64)> = events.of_class(c).map(|e| (e.onset, e.offset)).collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cur: Option<(f64, f64)> = None;
        for (a, b) in spans {
            cur = match cur {
                Some((s, e)) if a <= e => Some((s, e.max(b))),
                Some((s, e)) => {
                    edges.push((s, 1));
                    edges.push((e, -1));
                    Some((a, b))
                }
                None => Some((a, b)),
            };
        }
        if let Some((s, e)) = cur {
            edges.push((s, 1));
            edges.push((e, -1));
        }
    }
    // closings sort before openings at equal times
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut active = 0;
    let mut last = 0.0;
    let mut total = 0.0;
    for (t, d) in edges {
        if active >= 2 {
            total += t - last;
        }
        active += d;
        last = t;
    }
    total
}

pub fn total_overlap_duration(annotations: &Annotations) -> f64 {
    annotations.values().map(overlap_duration).sum()
}
