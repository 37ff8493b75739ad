//! Scale-invariant log loss and the bin-centre chamfer term.

use cuedepth_autodiff::{Graph, Tensor, Var};

use crate::error::{Error, Result};

/// `alpha * sqrt(mean(g^2) - lambda * mean(g)^2)` with `g = ln pred - ln gt`
/// over the masked pixels.
pub fn silog_loss(
    pred: &[f64],
    gt: &[f64],
    mask: Option<&[bool]>,
    lambda: f64,
    alpha: f64,
) -> Result<f64> {
    if pred.len() != gt.len() || mask.is_some_and(|m| m.len() != gt.len()) {
        return Err(Error::Validation("silog: input lengths differ".into()));
    }
    let (mut s1, mut s2, mut n) = (0.0, 0.0, 0usize);
    for i in 0..gt.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if let Some(&v) = [gt[i], pred[i]].iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Domain {
                op: "silog",
                index: i,
                value: v,
            });
        }
        let g = pred[i].ln() - gt[i].ln();
        s1 += g;
        s2 += g * g;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Degenerate {
            op: "silog",
            msg: "mask selects no pixels".into(),
        });
    }
    let (m1, m2) = (s1 / n as f64, s2 / n as f64);
    Ok(alpha * (m2 - lambda * m1 * m1).max(0.0).sqrt())
}

/// `beta` times the bidirectional squared chamfer distance between bin
/// centres and ground-truth depths.
pub fn bin_density_loss(centers: &[f64], gt: &[f64], beta: f64) -> Result<f64> {
    if centers.is_empty() || gt.is_empty() {
        return Err(Error::Degenerate {
            op: "bin_density",
            msg: "empty point set".into(),
        });
    }
    let nearest = |x: f64, set: &[f64]| {
        set.iter()
            .map(|s| (x - s).powi(2))
            .fold(f64::INFINITY, f64::min)
    };
    let to_center = gt.iter().map(|&t| nearest(t, centers)).sum::<f64>() / gt.len() as f64;
    let to_gt = centers.iter().map(|&c| nearest(c, gt)).sum::<f64>() / centers.len() as f64;
    Ok(beta * (to_center + to_gt))
}

/// Graph form of [`silog_loss`], one value per batch item. `log_gt` holds
/// `ln gt` with the same shape as `pred`; `mask` marks valid pixels.
pub fn silog_items(
    g: &mut Graph,
    pred: Var,
    log_gt: &Tensor,
    mask: &[bool],
    lambda: f64,
    alpha: f64,
) -> Result<Var> {
    let lp = g.log(pred)?;
    let lg = g.constant(log_gt.clone());
    let d = g.sub(lp, lg)?;
    let d2 = g.mul(d, d)?;
    let m1 = g.item_mean(d, Some(mask))?;
    let m2 = g.item_mean(d2, Some(mask))?;
    let m1sq = g.mul(m1, m1)?;
    let m1sq = g.scale(m1sq, lambda);
    let var = g.sub(m2, m1sq)?;
    // Rounding can push a zero variance slightly negative.
    let var = g.relu(var)?;
    let root = g.sqrt(var)?;
    Ok(g.scale(root, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        let e = std::f64::consts::E;
        let v = silog_loss(&[1.0, e], &[1.0, 1.0], None, 0.85, 10.0).unwrap();
        assert!((v - 10.0 * 0.2875f64.sqrt()).abs() < 1e-12);
        assert_eq!(
            silog_loss(&[2.0, 3.0], &[2.0, 3.0], None, 0.85, 10.0).unwrap(),
            0.0
        );
        assert!(silog_loss(&[2.0, 6.0], &[1.0, 3.0], None, 1.0, 10.0).unwrap() < 1e-7);
        assert_eq!(bin_density_loss(&[1.0, 3.0], &[1.0], 0.1).unwrap(), 0.2);
        assert_eq!(
            bin_density_loss(&[1.0, 2.0], &[2.0, 1.0], 0.1).unwrap(),
            0.0
        );
    }

    #[test]
    fn errors() {
        assert!(matches!(
            silog_loss(&[1.0, -1.0], &[1.0, 1.0], None, 0.85, 10.0),
            Err(Error::Domain { index: 1, .. })
        ));
        assert!(matches!(
            silog_loss(&[1.0], &[1.0], Some(&[false]), 0.85, 10.0),
            Err(Error::Degenerate { .. })
        ));
        assert!(bin_density_loss(&[], &[1.0], 1.0).is_err());
    }

    #[test]
    fn graph_matches_direct_form() {
        let pred = [1.5, 2.0, 4.0, 3.0, 1.1, 7.0];
        let gt = [1.0, 2.5, 3.0, 3.0, 1.0, 9.0];
        let mask = [true, true, false, true, true, true];
        let mut g = Graph::new();
        let p = g.param(Tensor::new(vec![2, 1, 1, 3], pred.to_vec()).unwrap());
        let lg = Tensor::new(vec![2, 1, 1, 3], gt.iter().map(|v: &f64| v.ln()).collect()).unwrap();
        let out = silog_items(&mut g, p, &lg, &mask, 0.85, 10.0).unwrap();
        for item in 0..2 {
            let r = item * 3..item * 3 + 3;
            let direct =
                silog_loss(&pred[r.clone()], &gt[r.clone()], Some(&mask[r]), 0.85, 10.0).unwrap();
            assert!((g.value(out).data()[item] - direct).abs() < 1e-12);
        }
    }
}
