//! Central finite-difference verification of the reverse pass.

use super::matrix::Matrix;
use super::tape::{NodeId, Tape};
use super::NumericsError;

/// Compares `backward()` against central finite differences over every
/// element of every parameter, returning the worst relative error.
///
/// `build` must construct the forward graph from scratch given leaf ids for
/// the parameters (in order) and return the scalar loss node. Perturbations
/// are applied in f32 parameter space; the difference quotient divides by the
/// actually-achieved perturbation, so f32 rounding of `w ± eps` does not bias
/// the estimate.
pub fn finite_diff_check<F>(build: F, params: &[Matrix], eps: f64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, NumericsError>,
{
    assert!(eps > 0.0, "eps must be positive");
    let eval = |ps: &[Matrix]| -> Result<(Tape, Vec<NodeId>, NodeId), NumericsError> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| tape.leaf(p)).collect();
        let loss = build(&mut tape, &ids)?;
        Ok((tape, ids, loss))
    };

    let (tape, ids, loss) = eval(params)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Matrix> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for r in 0..p.rows() {
            for c in 0..p.cols() {
                let w = p.get(r, c);
                let wp = (w as f64 + eps) as f32;
                let wm = (w as f64 - eps) as f32;

                work[pi].set(r, c, wp);
                let (tp, _, lp) = eval(&work)?;
                let lp = tp.scalar(lp);

                work[pi].set(r, c, wm);
                let (tm, _, lm) = eval(&work)?;
                let lm = tm.scalar(lm);

                work[pi].set(r, c, w);

                let fd = (lp - lm) / (wp as f64 - wm as f64);
                let ad = grads[ids[pi]].get(r, c);
                let rel = (ad - fd).abs() / (ad.abs() + fd.abs() + 1e-8).max(1.0);
                if rel > worst {
                    worst = rel;
                }
            }
        }
    }
    Ok(worst)
}
