//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

/// Per-pixel reference metrics written without any shared helper:
/// `[abs_rel, sq_rel, rms, rms_log, d1, d2, d3]` and the pixel count.
pub fn naive_metrics(pred: &[f64], gt: &[f64], mask: Option<&[bool]>) -> ([f64; 7], usize) {
    let mut acc = [0.0; 7];
    let mut t = 0usize;
    for i in 0..gt.len() {
        if let Some(m) = mask {
            if !m[i] {
                continue;
            }
        }
        let (p, g) = (pred[i], gt[i]);
        t += 1;
        acc[0] += (p - g).abs() / g;
        acc[1] += (p - g) * (p - g) / g;
        acc[2] += (p - g) * (p - g);
        acc[3] += (p.ln() - g.ln()) * (p.ln() - g.ln());
        let ratio = if p / g > g / p { p / g } else { g / p };
        if ratio < 1.25 {
            acc[4] += 1.0;
        }
        if ratio < 1.25 * 1.25 {
            acc[5] += 1.0;
        }
        if ratio < 1.25 * 1.25 * 1.25 {
            acc[6] += 1.0;
        }
    }
    let n = t as f64;
    (
        [
            acc[0] / n,
            acc[1] / n,
            (acc[2] / n).sqrt(),
            (acc[3] / n).sqrt(),
            acc[4] / n,
            acc[5] / n,
            acc[6] / n,
        ],
        t,
    )
}
