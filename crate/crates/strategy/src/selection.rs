//! Perplexity-weighted coreset selection.

use crate::{invalid, Result};

fn window_sum(xs: &[f64]) -> f64 {
    xs.iter().sum()
}

/// Max over all length-`min(window, n)` windows of `exp(mean NLL)`.
///
/// Rolling sums locate the candidate windows; every window within rounding slack of
/// the best rolling sum is re-summed directly so the result does not depend on the
/// order of accumulation.
pub fn sliding_window_ppl(token_nlls: &[f64], window: usize) -> Result<f64> {
    if token_nlls.is_empty() {
        return invalid("need at least one token");
    }
    if window == 0 {
        return invalid("window must be positive");
    }
    if token_nlls.iter().any(|x| !x.is_finite()) {
        return invalid("token NLLs must be finite");
    }
    let w = window.min(token_nlls.len());
    let mut rolling = Vec::with_capacity(token_nlls.len() - w + 1);
    let mut s = window_sum(&token_nlls[..w]);
    rolling.push(s);
    for i in w..token_nlls.len() {
        s += token_nlls[i] - token_nlls[i - w];
        rolling.push(s);
    }
    let best = rolling.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let magnitude: f64 = token_nlls.iter().map(|x| x.abs()).sum();
    let slack = 1e-9 * (1.0 + magnitude);
    let top = rolling
        .iter()
        .enumerate()
        .filter(|(_, &r)| r >= best - slack)
        .map(|(start, _)| window_sum(&token_nlls[start..start + w]))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((top / w as f64).exp())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Greedy selection by `score × distance to the nearest selected point`, starting
/// from the highest score. Lowest index wins ties.
pub fn kcg_select(points: &[Vec<f64>], scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if points.len() != scores.len() {
        return invalid("points and scores differ in length");
    }
    if k > points.len() {
        return invalid(format!("cannot select {k} of {} points", points.len()));
    }
    if scores.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return invalid("scores must be positive");
    }
    if let Some(p) = points.first() {
        if points.iter().any(|q| q.len() != p.len()) {
            return invalid("feature vectors differ in dimension");
        }
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let argmax = |key: &dyn Fn(usize) -> f64, taken: &[bool]| {
        (0..points.len()).filter(|&i| !taken[i]).fold(None, |best: Option<usize>, i| match best {
            Some(b) if key(b) >= key(i) => Some(b),
            _ => Some(i),
        })
    };
    let mut taken = vec![false; points.len()];
    let first = argmax(&|i| scores[i], &taken).expect("k >= 1 and k <= n");
    taken[first] = true;
    let mut picked = vec![first];
    let mut nearest: Vec<f64> = points.iter().map(|p| distance(p, &points[first])).collect();
    while picked.len() < k {
        let next = argmax(&|i| scores[i] * nearest[i], &taken).expect("candidates remain");
        taken[next] = true;
        picked.push(next);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(distance(p, &points[next]));
        }
    }
    Ok(picked)
}
