use serde::{Deserialize, Serialize};

/// Splits whose gain is below this fraction of the node's largest possible
/// gain are treated as rounding noise.
pub(crate) const RELATIVE_GAIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    /// Rows with `value < threshold` go left.
    pub threshold: f64,
    pub gain: f64,
    /// Direction taken by rows whose value is missing.
    pub default_left: bool,
}

/// Regularized second-order split gain.
#[inline]
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, l2: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + l2);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr))
}

/// Leaf weight minimizing the regularized second-order objective.
#[inline]
pub fn leaf_weight(g: f64, h: f64, l2: f64) -> f64 {
    if h + l2 == 0.0 {
        0.0
    } else {
        -g / (h + l2)
    }
}

/// Midpoint strictly above `lo` and at most `hi`.
#[inline]
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) * 0.5;
    if m > lo {
        m
    } else {
        hi
    }
}

/// Exhaustive search over one column.
///
/// Candidates are midpoints between consecutive distinct non-missing values,
/// each tried with missing rows sent left and then right. Ties keep the
/// smaller threshold, then missing-left. Returns `None` when no split has
/// positive gain with both children meeting `min_child_weight`.
pub fn best_split(
    g: &[f64],
    h: &[f64],
    values: &[Option<f64>],
    l2: f64,
    min_child_weight: f64,
) -> Option<SplitCandidate> {
    assert!(g.len() == h.len() && h.len() == values.len(), "lists must be aligned");
    let (mut gm, mut hm) = (0.0, 0.0);
    let mut present: Vec<(f64, f64, f64)> = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        match values[i] {
            Some(v) if !v.is_nan() => present.push((v, g[i], h[i])),
            _ => {
                gm += g[i];
                hm += h[i];
            }
        }
    }
    present.sort_by(|a, b| a.0.total_cmp(&b.0));
    let g_tot: f64 = g.iter().sum();
    let h_tot: f64 = h.iter().sum();
    let max_gain: f64 = 0.5 * g.iter().zip(h).map(|(g, h)| if *h > 0.0 { g * g / h } else { 0.0 }).sum::<f64>();
    let tol = RELATIVE_GAIN_TOL * max_gain;

    let mut best: Option<SplitCandidate> = None;
    let (mut gl, mut hl) = (0.0, 0.0);
    for k in 0..present.len() {
        let (v, gi, hi) = present[k];
        gl += gi;
        hl += hi;
        let Some(&(next, _, _)) = present.get(k + 1) else { break };
        if next == v {
            continue;
        }
        let threshold = midpoint(v, next);
        for default_left in [true, false] {
            let (l_g, l_h) = if default_left { (gl + gm, hl + hm) } else { (gl, hl) };
            let (r_g, r_h) = (g_tot - l_g, h_tot - l_h);
            if l_h < min_child_weight || r_h < min_child_weight || l_h <= 0.0 || r_h <= 0.0 {
                continue;
            }
            let gain = split_gain(l_g, l_h, r_g, r_h, l2);
            if gain > tol && best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitCandidate {
                    threshold,
                    gain,
                    default_left,
                });
            }
        }
    }
    best
}
