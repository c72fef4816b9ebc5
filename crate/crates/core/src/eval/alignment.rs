use crate::align::Matching;
use crate::error::{check_dim, Error, Result};

/// Fraction of query frames whose predicted target lies within one frame
/// of the truth.
///
/// `truth[j]` is the 1-based global target frame of query frame `j`. When
/// `predicted` holds one matching per target chunk, frame `j` is scored by
/// the chunk whose range contains its true target; an outlier there counts
/// as a miss.
pub fn alignment_accuracy(predicted: &[Matching], truth: &[usize]) -> Result<f64> {
    if predicted.is_empty() || truth.is_empty() {
        return Err(Error::config("alignment accuracy needs a prediction and a truth"));
    }
    for m in predicted {
        check_dim(truth.len(), m.pi.len())?;
    }
    if truth.contains(&0) {
        return Err(Error::config("ground-truth matching may not contain outliers"));
    }
    let mut order: Vec<&Matching> = predicted.iter().collect();
    order.sort_by_key(|m| m.target_offset);
    let mut hits = 0;
    for (j, &t) in truth.iter().enumerate() {
        let t = t - 1;
        let owner = order.iter().rev().find(|m| m.target_offset <= t).unwrap_or(&order[0]);
        if owner.target_frame(j).is_some_and(|p| p.abs_diff(t) <= 1) {
            hits += 1;
        }
    }
    Ok(hits as f64 / truth.len() as f64)
}

/// Wraps a global 0-based assignment as a single matching.
pub fn assignment_as_matching(assignment: &[usize]) -> Matching {
    Matching {
        pi: assignment.iter().map(|&k| k + 1).collect(),
        total_cost: 0.0,
        cost_breakdown: Default::default(),
        target_offset: 0,
    }
}
