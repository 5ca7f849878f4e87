//! Loss terms as graph operations with hand-written gradients.
//!
//! Every op takes the prediction as its only differentiable input; targets,
//! masks and image intensities are captured by value.

use depthduet_tensor::{CustomOp, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to discriminator probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-7;

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-sample L1 reconstruction averaged over the batch.
///
/// Sample `s` without a mask contributes `mean |p - t|` over its pixels.
/// With a mask it contributes `Σ |m·p - t| / max(1, Σ m)`.
pub struct Reconstruction {
    target: Tensor,
    masks: Vec<Option<Vec<bool>>>,
}

impl Reconstruction {
    pub fn new(target: Tensor, masks: Vec<Option<Vec<bool>>>) -> Result<Self> {
        let shape = target.shape();
        if shape.len() != 4 || shape[0] != masks.len() || shape[0] == 0 {
            return Err(Error::Shape(format!(
                "reconstruction target {shape:?} needs one mask slot per sample ({} given)",
                masks.len()
            )));
        }
        let plane = target.numel() / shape[0];
        for (s, m) in masks.iter().enumerate() {
            let Some(m) = m else { continue };
            if m.len() != plane {
                return Err(Error::Shape(format!("mask of sample {s} has {} entries, expected {plane}", m.len())));
            }
            let t = &target.data()[s * plane..(s + 1) * plane];
            if let Some(i) = (0..plane).find(|&i| !m[i] && t[i] != 0.0) {
                return Err(Error::Inconsistent(format!(
                    "sample {s}: target is {} at pixel {i} where the mask is unset",
                    t[i]
                )));
            }
        }
        Ok(Self { target, masks })
    }

    fn plane(&self) -> usize {
        self.target.numel() / self.masks.len()
    }

    fn check(&self, pred: &Tensor) {
        assert_eq!(pred.shape(), self.target.shape(), "reconstruction prediction/target shape");
    }
}

impl CustomOp for Reconstruction {
    fn name(&self) -> &str {
        "reconstruction_l1"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        let pred = inputs[0];
        self.check(pred);
        let plane = self.plane();
        let mut total = 0.0;
        for (s, mask) in self.masks.iter().enumerate() {
            let p = &pred.data()[s * plane..(s + 1) * plane];
            let t = &self.target.data()[s * plane..(s + 1) * plane];
            total += match mask {
                None => p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / plane as f64,
                Some(m) => {
                    let sum: f64 = (0..plane).map(|i| ((if m[i] { p[i] } else { 0.0 }) - t[i]).abs()).sum();
                    sum / (m.iter().filter(|&&v| v).count().max(1) as f64)
                }
            };
        }
        Tensor::scalar(total / self.masks.len() as f64)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>> {
        let pred = inputs[0];
        let plane = self.plane();
        let go = grad_output.item() / self.masks.len() as f64;
        let mut grad = vec![0.0; pred.numel()];
        for (s, mask) in self.masks.iter().enumerate() {
            let off = s * plane;
            match mask {
                None => {
                    for i in 0..plane {
                        grad[off + i] = go * sign(pred.data()[off + i] - self.target.data()[off + i]) / plane as f64;
                    }
                }
                Some(m) => {
                    let denom = m.iter().filter(|&&v| v).count().max(1) as f64;
                    for i in 0..plane {
                        if m[i] {
                            grad[off + i] = go * sign(pred.data()[off + i] - self.target.data()[off + i]) / denom;
                        }
                    }
                }
            }
        }
        vec![Some(Tensor::new(pred.shape().to_vec(), grad))]
    }
}

/// Mean binary cross-entropy of probabilities against a constant label,
/// with probabilities clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub struct BinaryCrossEntropy {
    pub label_real: bool,
}

impl BinaryCrossEntropy {
    fn clamp(p: f64) -> f64 {
        p.clamp(PROB_EPS, 1.0 - PROB_EPS)
    }
}

impl CustomOp for BinaryCrossEntropy {
    fn name(&self) -> &str {
        "binary_cross_entropy"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        let p = inputs[0];
        let n = p.numel() as f64;
        let sum: f64 = p
            .data()
            .iter()
            .map(|&v| {
                let c = Self::clamp(v);
                if self.label_real {
                    -c.ln()
                } else {
                    -(1.0 - c).ln()
                }
            })
            .sum();
        Tensor::scalar(sum / n)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>> {
        let p = inputs[0];
        let scale = grad_output.item() / p.numel() as f64;
        let g = p.map(|v| {
            // the clamp is flat outside its range
            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&v) {
                0.0
            } else if self.label_real {
                -scale / v
            } else {
                scale / (1.0 - v)
            }
        });
        vec![Some(g)]
    }
}

/// Sign of the exponent in the edge weight of the smoothness term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeWeighting {
    /// `exp(-|∂I|)`: smoothing is relaxed across image edges.
    Suppress,
    /// `exp(+|∂I|)`: smoothing is strengthened across image edges.
    Amplify,
}

impl EdgeWeighting {
    fn weight(self, d: f64) -> f64 {
        match self {
            EdgeWeighting::Suppress => (-d.abs()).exp(),
            EdgeWeighting::Amplify => d.abs().exp(),
        }
    }
}

/// Edge-aware smoothness of a `[N, 1, H, W]` prediction.
///
/// Per sample: mean over horizontal forward differences of
/// `|∂p| · w(∂I)`, plus the same over vertical ones, where `I` is the
/// channel-mean image intensity. Averaged over the batch. A dimension of
/// size 1 contributes no term.
pub struct Smoothness {
    /// `[N, 1, H, W]` intensity.
    intensity: Tensor,
    weighting: EdgeWeighting,
}

impl Smoothness {
    pub fn new(intensity: Tensor, weighting: EdgeWeighting) -> Result<Self> {
        let s = intensity.shape();
        if s.len() != 4 || s[1] != 1 || s[0] == 0 {
            return Err(Error::Shape(format!("smoothness intensity must be [N, 1, H, W], got {s:?}")));
        }
        Ok(Self { intensity, weighting })
    }

    /// Calls `f(a, b, weight, count)` for each forward-difference pair
    /// `(p[b] - p[a])`, where `count` is the size of its direction's set.
    fn for_each_pair(&self, mut f: impl FnMut(usize, usize, f64, f64)) {
        let (n, _, h, w) = self.intensity.dims4();
        let x = self.intensity.data();
        for s in 0..n {
            let off = s * h * w;
            if w > 1 {
                let count = (h * (w - 1)) as f64;
                for r in 0..h {
                    for c in 0..w - 1 {
                        let (a, b) = (off + r * w + c, off + r * w + c + 1);
                        f(a, b, self.weighting.weight(x[b] - x[a]), count);
                    }
                }
            }
            if h > 1 {
                let count = ((h - 1) * w) as f64;
                for r in 0..h - 1 {
                    for c in 0..w {
                        let (a, b) = (off + r * w + c, off + (r + 1) * w + c);
                        f(a, b, self.weighting.weight(x[b] - x[a]), count);
                    }
                }
            }
        }
    }
}

impl CustomOp for Smoothness {
    fn name(&self) -> &str {
        "edge_aware_smoothness"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        let p = inputs[0];
        assert_eq!(p.shape(), self.intensity.shape(), "smoothness prediction/intensity shape");
        let pd = p.data();
        let mut total = 0.0;
        self.for_each_pair(|a, b, wgt, count| total += (pd[b] - pd[a]).abs() * wgt / count);
        Tensor::scalar(total / p.shape()[0] as f64)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>> {
        let p = inputs[0];
        let pd = p.data();
        let go = grad_output.item() / p.shape()[0] as f64;
        let mut g = vec![0.0; p.numel()];
        self.for_each_pair(|a, b, wgt, count| {
            let d = go * sign(pd[b] - pd[a]) * wgt / count;
            g[b] += d;
            g[a] -= d;
        });
        vec![Some(Tensor::new(p.shape().to_vec(), g))]
    }
}

/// Records a reconstruction loss of `pred` on `g`.
pub fn reconstruction(g: &mut Graph, pred: Var, target: Tensor, masks: Vec<Option<Vec<bool>>>) -> Result<Var> {
    check_shape(g.value(pred), &target, "reconstruction")?;
    let op = Reconstruction::new(target, masks)?;
    Ok(g.custom(Box::new(op), &[pred]))
}

/// Records a cross-entropy of discriminator outputs `prob` on `g`.
pub fn binary_cross_entropy(g: &mut Graph, prob: Var, label_real: bool) -> Var {
    g.custom(Box::new(BinaryCrossEntropy { label_real }), &[prob])
}

/// Records the edge-aware smoothness of `pred` on `g`.
pub fn smoothness(g: &mut Graph, pred: Var, intensity: Tensor, weighting: EdgeWeighting) -> Result<Var> {
    check_shape(g.value(pred), &intensity, "smoothness")?;
    let op = Smoothness::new(intensity, weighting)?;
    Ok(g.custom(Box::new(op), &[pred]))
}

fn check_shape(pred: &Tensor, other: &Tensor, what: &str) -> Result<()> {
    if pred.shape() != other.shape() {
        return Err(Error::Shape(format!(
            "{what}: prediction {:?} vs {:?}",
            pred.shape(),
            other.shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of the op's forward against its backward.
    fn gradcheck(op: &dyn CustomOp, x: &Tensor) {
        let out = op.forward(&[x]);
        let g = op.backward(&[x], &out, &Tensor::scalar(1.0))[0].clone().unwrap();
        let h = 1e-6;
        for i in 0..x.numel() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (op.forward(&[&xp]).item() - op.forward(&[&xm]).item()) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-7, "coord {i}: fd {fd} vs analytic {}", g.data()[i]);
        }
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
    }

    #[test]
    fn op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pred = rand_tensor(&mut rng, [2, 1, 4, 5], 0.0, 1.0);
        let target = rand_tensor(&mut rng, [2, 1, 4, 5], 0.0, 1.0);
        let mask: Vec<bool> = (0..20).map(|i| i % 3 != 0).collect();
        let masked_target = Tensor::new(
            [2, 1, 4, 5],
            target.data().iter().enumerate().map(|(i, &t)| if i >= 20 && !mask[i - 20] { 0.0 } else { t }).collect(),
        );
        gradcheck(&Reconstruction::new(masked_target, vec![None, Some(mask)]).unwrap(), &pred);
        let probs = rand_tensor(&mut rng, [3, 1, 1, 1], 0.05, 0.95);
        gradcheck(&BinaryCrossEntropy { label_real: true }, &probs);
        gradcheck(&BinaryCrossEntropy { label_real: false }, &probs);
        let intensity = rand_tensor(&mut rng, [2, 1, 4, 5], 0.0, 1.0);
        for w in [EdgeWeighting::Suppress, EdgeWeighting::Amplify] {
            gradcheck(&Smoothness::new(intensity.clone(), w).unwrap(), &pred);
        }
    }

    #[test]
    fn inconsistent_masked_target_rejected() {
        let t = Tensor::new([1, 1, 1, 2], vec![0.3, 0.4]);
        let r = Reconstruction::new(t, vec![Some(vec![true, false])]);
        assert!(matches!(r, Err(Error::Inconsistent(_))));
    }

    #[test]
    fn clamped_probabilities_have_zero_gradient() {
        let op = BinaryCrossEntropy { label_real: true };
        let p = Tensor::new([2, 1, 1, 1], vec![0.0, 1.0]);
        let out = op.forward(&[&p]);
        assert!(out.item().is_finite());
        let g = op.backward(&[&p], &out, &Tensor::scalar(1.0))[0].clone().unwrap();
        assert_eq!(g.data(), &[0.0, 0.0]);
    }
}
