use super::GradingError;

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), GradingError> {
    if scores.len() != labels.len() {
        return Err(GradingError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(GradingError::NonFiniteScore(*bad));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(GradingError::SingleClass);
    }
    Ok((pos, neg))
}

/// Area under the ROC curve as the normalised Mann–Whitney U statistic:
/// the share of (positive, negative) pairs ranked correctly, ties counting half.
///
/// Computed from mid-ranks in O(n log n). Every rank sum is a multiple of 0.5, so
/// the result is exact up to the final division.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, GradingError> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the positive rank sum, kept integral
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        // ranks start..=end (1-based: start+1..=end+1), mid-rank doubled = start + end + 2
        let twice_mid = (start + end + 2) as u128;
        let positives_in_tie = order[start..=end].iter().filter(|&&i| labels[i]).count() as u128;
        twice_rank_sum += twice_mid * positives_in_tie;
        start = end + 1;
    }
    let pos_u = pos as u128;
    let twice_u = twice_rank_sum - pos_u * (pos_u + 1);
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// Pair-enumeration reference: O(n_pos · n_neg).
pub fn auc_brute_force(scores: &[f64], labels: &[bool]) -> Result<f64, GradingError> {
    let (pos, neg) = check(scores, labels)?;
    let mut credit = 0.0;
    let positives = scores.iter().zip(labels).filter(|(_, l)| **l).map(|(s, _)| *s);
    for si in positives {
        let negatives = scores.iter().zip(labels).filter(|(_, l)| !**l).map(|(s, _)| *s);
        for sj in negatives {
            if si > sj {
                credit += 1.0;
            } else if si == sj {
                credit += 0.5;
            }
        }
    }
    Ok(credit / (pos * neg) as f64)
}
