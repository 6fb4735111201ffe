use rand::Rng;
use rayon::prelude::*;

use crate::corpus::FeatureStore;
use crate::embednet::head::{arc_target, cross_entropy, sphere_psi, LossHead};
use crate::error::{Error, Result};

/// Feature extractor in front of the classifier. Parameters live in a flat
/// slice owned by the model so optimizers and gradient checks can treat the
/// whole network uniformly.
pub trait Backbone: Clone + Send + Sync {
    type Cache;

    fn input_dim(&self) -> usize;
    fn embed_dim(&self) -> usize;
    fn param_len(&self) -> usize;
    fn init(&self, params: &mut [f64], rng: &mut impl Rng);
    fn forward(&self, params: &[f64], x: &[f64]) -> (Vec<f64>, Self::Cache);
    /// Accumulates `d loss / d params` into `grad`.
    fn backward(&self, params: &[f64], cache: &Self::Cache, d_embed: &[f64], grad: &mut [f64]);
    /// Whether parameter `i` is a weight (decayed) rather than a bias.
    fn is_weight(&self, i: usize) -> bool;
    /// Which piecewise-linear units are active for `x`; the loss is smooth
    /// in the parameters wherever this pattern is constant.
    fn active_set(&self, _params: &[f64], _x: &[f64]) -> Vec<bool> {
        Vec::new()
    }
}

/// Dense ReLU layers followed by a linear embedding layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    /// `[input, hidden..., embedding]`
    sizes: Vec<usize>,
}

impl Mlp {
    pub fn new(input: usize, hidden: &[usize], embed: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(embed);
        Self { sizes }
    }

    pub fn hidden(&self) -> &[usize] {
        &self.sizes[1..self.sizes.len() - 1]
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, fan_in, fan_out); weights row-major out x in, then bias
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let o = off;
            off += w[0] * w[1] + w[1];
            (o, w[0], w[1])
        })
    }
}

impl Backbone for Mlp {
    /// Input followed by each layer's output (post-activation).
    type Cache = Vec<Vec<f64>>;

    fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    fn embed_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn param_len(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        let n = self.sizes.len() - 1;
        for (l, (off, fin, fout)) in self.layers().enumerate() {
            let gain = if l + 1 < n { 6.0 } else { 3.0 };
            let bound = (gain / fin as f64).sqrt();
            for w in &mut params[off..off + fin * fout] {
                *w = rng.gen_range(-bound..bound);
            }
            params[off + fin * fout..off + fin * fout + fout].fill(0.0);
        }
    }

    fn forward(&self, params: &[f64], x: &[f64]) -> (Vec<f64>, Self::Cache) {
        let n = self.sizes.len() - 1;
        let mut acts = vec![x.to_vec()];
        for (l, (off, fin, fout)) in self.layers().enumerate() {
            let input = &acts[l];
            let w = &params[off..off + fin * fout];
            let b = &params[off + fin * fout..off + fin * fout + fout];
            let mut out: Vec<f64> = (0..fout)
                .map(|o| {
                    let row = &w[o * fin..(o + 1) * fin];
                    b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if l + 1 < n {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
        (acts.last().unwrap().clone(), acts)
    }

    fn backward(&self, params: &[f64], acts: &Self::Cache, d_embed: &[f64], grad: &mut [f64]) {
        let layers: Vec<_> = self.layers().collect();
        let n = layers.len();
        let mut delta = d_embed.to_vec();
        for l in (0..n).rev() {
            let (off, fin, fout) = layers[l];
            if l + 1 < n {
                // ReLU gate on this layer's output
                for (d, a) in delta.iter_mut().zip(&acts[l + 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &acts[l];
            for o in 0..fout {
                let row = &mut grad[off + o * fin..off + (o + 1) * fin];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += delta[o] * x;
                }
                grad[off + fin * fout + o] += delta[o];
            }
            if l > 0 {
                let w = &params[off..off + fin * fout];
                let mut prev = vec![0.0; fin];
                for o in 0..fout {
                    let row = &w[o * fin..(o + 1) * fin];
                    for (p, wv) in prev.iter_mut().zip(row) {
                        *p += delta[o] * wv;
                    }
                }
                delta = prev;
            }
        }
    }

    fn active_set(&self, params: &[f64], x: &[f64]) -> Vec<bool> {
        let (_, acts) = self.forward(params, x);
        acts[1..acts.len() - 1]
            .iter()
            .flatten()
            .map(|a| *a > 0.0)
            .collect()
    }

    fn is_weight(&self, i: usize) -> bool {
        self.layers()
            .any(|(off, fin, fout)| i >= off && i < off + fin * fout)
    }
}

/// Backbone plus identity classifier (and centers for the center-loss head).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel<B: Backbone = Mlp> {
    pub backbone: B,
    pub head: LossHead,
    pub num_identities: usize,
    /// Backbone parameters, then classifier rows (one `D`-vector per
    /// identity), then classifier biases.
    pub params: Vec<f64>,
    /// `num_identities x D`, empty unless the head is `CenterLoss`.
    pub centers: Vec<f64>,
}

/// Loss, flat gradient (same layout as `params`) and the batch embeddings.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub embeddings: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl<B: Backbone> EmbeddingModel<B> {
    /// Zero-initialized model; see [`EmbeddingModel::init`].
    pub fn zeros(backbone: B, head: LossHead, num_identities: usize) -> Self {
        let len = backbone.param_len() + num_identities * (backbone.embed_dim() + 1);
        let centers = match head {
            LossHead::CenterLoss { .. } => vec![0.0; num_identities * backbone.embed_dim()],
            _ => Vec::new(),
        };
        Self {
            backbone,
            head,
            num_identities,
            params: vec![0.0; len],
            centers,
        }
    }

    pub fn init(backbone: B, head: LossHead, num_identities: usize, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(backbone, head, num_identities);
        let bl = m.backbone.param_len();
        m.backbone.init(&mut m.params[..bl], rng);
        let d = m.embed_dim();
        let bound = (3.0 / d as f64).sqrt();
        for w in &mut m.params[bl..bl + num_identities * d] {
            *w = rng.gen_range(-bound..bound);
        }
        for c in &mut m.centers {
            *c = rng.gen_range(-0.1..0.1);
        }
        if head.is_angular() {
            m.normalize_classifier();
        }
        m
    }

    pub fn embed_dim(&self) -> usize {
        self.backbone.embed_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.input_dim()
    }

    fn class_offset(&self) -> usize {
        self.backbone.param_len()
    }

    pub fn class_row(&self, j: usize) -> &[f64] {
        let d = self.embed_dim();
        let o = self.class_offset() + j * d;
        &self.params[o..o + d]
    }

    fn class_bias(&self, j: usize) -> f64 {
        self.params[self.class_offset() + self.num_identities * self.embed_dim() + j]
    }

    pub fn center(&self, j: usize) -> &[f64] {
        let d = self.embed_dim();
        &self.centers[j * d..(j + 1) * d]
    }

    pub fn is_weight(&self, i: usize) -> bool {
        let bl = self.backbone.param_len();
        if i < bl {
            self.backbone.is_weight(i)
        } else {
            i < bl + self.num_identities * self.embed_dim()
        }
    }

    /// Rescales every classifier row to unit length.
    pub fn normalize_classifier(&mut self) {
        let d = self.embed_dim();
        let o = self.class_offset();
        for j in 0..self.num_identities {
            let row = &mut self.params[o + j * d..o + (j + 1) * d];
            let n = norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|w| *w /= n);
            }
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let bl = self.backbone.param_len();
        Ok(self.backbone.forward(&self.params[..bl], x).0)
    }

    /// Embedding and margin-free logits under the head's geometry.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let e = self.embed(x)?;
        let logits = match self.head {
            LossHead::SoftmaxCe | LossHead::CenterLoss { .. } => (0..self.num_identities)
                .map(|j| self.class_bias(j) + dot(self.class_row(j), &e))
                .collect(),
            LossHead::SphereFace { .. } | LossHead::ArcFace { .. } => {
                let n = norm(&e);
                if n == 0.0 {
                    return Err(Error::Degenerate(
                        "zero-norm embedding under angular head".into(),
                    ));
                }
                let scale = match self.head {
                    LossHead::ArcFace { s, .. } => s,
                    _ => n,
                };
                let mut out = Vec::with_capacity(self.num_identities);
                for j in 0..self.num_identities {
                    let w = self.class_row(j);
                    let r = norm(w);
                    if r == 0.0 {
                        return Err(Error::Degenerate(format!("zero classifier row {j}")));
                    }
                    out.push(scale * (dot(w, &e) / (r * n)).clamp(-1.0, 1.0));
                }
                out
            }
        };
        Ok((e, logits))
    }

    /// Mean loss over the batch and its exact gradient. Centers are treated
    /// as constants.
    pub fn loss_and_grad(&self, batch: &[(&[f64], usize)]) -> Result<LossGrad> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let bl = self.backbone.param_len();
        let d = self.embed_dim();
        let k = self.num_identities;
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        let mut embeddings = Vec::with_capacity(batch.len());

        for &(x, y) in batch {
            self.check_input(x)?;
            if y >= k {
                return Err(Error::InvalidArgument(format!(
                    "label {y} >= {k} identities"
                )));
            }
            let (e, cache) = self.backbone.forward(&self.params[..bl], x);
            let mut d_e = vec![0.0; d];
            let (cls_grad, rest) = grad[bl..].split_at_mut(k * d);
            let loss = self.sample_loss(&e, y, cls_grad, rest, &mut d_e, scale)?;
            total += loss;
            for v in &mut d_e {
                *v *= scale;
            }
            self.backbone
                .backward(&self.params[..bl], &cache, &d_e, &mut grad[..bl]);
            embeddings.push(e);
        }
        Ok(LossGrad {
            loss: total * scale,
            grad,
            embeddings,
        })
    }

    /// Loss for one sample. Adds `scale * d loss / d W` into `cls_grad` and
    /// `bias_grad`; writes the unscaled `d loss / d e` into `d_e`.
    fn sample_loss(
        &self,
        e: &[f64],
        y: usize,
        cls_grad: &mut [f64],
        bias_grad: &mut [f64],
        d_e: &mut [f64],
        scale: f64,
    ) -> Result<f64> {
        let d = self.embed_dim();
        let k = self.num_identities;
        match self.head {
            LossHead::SoftmaxCe | LossHead::CenterLoss { .. } => {
                let mut z: Vec<f64> = (0..k)
                    .map(|j| self.class_bias(j) + dot(self.class_row(j), e))
                    .collect();
                let mut loss = cross_entropy(&mut z, y);
                for j in 0..k {
                    let w = self.class_row(j);
                    for i in 0..d {
                        cls_grad[j * d + i] += scale * z[j] * e[i];
                        d_e[i] += z[j] * w[i];
                    }
                    bias_grad[j] += scale * z[j];
                }
                if let LossHead::CenterLoss { lambda, .. } = self.head {
                    let c = self.center(y);
                    let mut sq = 0.0;
                    for i in 0..d {
                        let diff = e[i] - c[i];
                        sq += diff * diff;
                        d_e[i] += lambda * diff;
                    }
                    loss += 0.5 * lambda * sq;
                }
                Ok(loss)
            }
            LossHead::SphereFace { .. } | LossHead::ArcFace { .. } => {
                let n = norm(e);
                if n == 0.0 {
                    return Err(Error::Degenerate(
                        "zero-norm embedding under angular head".into(),
                    ));
                }
                let e_hat: Vec<f64> = e.iter().map(|v| v / n).collect();
                let mut cos = Vec::with_capacity(k);
                let mut radii = Vec::with_capacity(k);
                for j in 0..k {
                    let w = self.class_row(j);
                    let r = norm(w);
                    if r == 0.0 {
                        return Err(Error::Degenerate(format!("zero classifier row {j}")));
                    }
                    radii.push(r);
                    cos.push((dot(w, &e_hat) / r).clamp(-1.0, 1.0));
                }
                // z_j = a * g_j(c_j); g is the identity except for the target
                let (a, a_tracks_norm) = match self.head {
                    LossHead::ArcFace { s, .. } => (s, false),
                    _ => (n, true),
                };
                let (g_y, dg_y) = match self.head {
                    LossHead::ArcFace { m, .. } => arc_target(m, cos[y])?,
                    LossHead::SphereFace { m } => sphere_psi(m, cos[y]),
                    _ => unreachable!(),
                };
                let mut z: Vec<f64> = cos.iter().map(|c| a * c).collect();
                z[y] = a * g_y;
                let loss = cross_entropy(&mut z, y);
                for j in 0..k {
                    let (g, dg) = if j == y { (g_y, dg_y) } else { (cos[j], 1.0) };
                    let c = cos[j];
                    let r = radii[j];
                    let w = self.class_row(j);
                    for i in 0..d {
                        let w_hat = w[i] / r;
                        let mut de = a * dg * (w_hat - c * e_hat[i]) / n;
                        if a_tracks_norm {
                            de += g * e_hat[i];
                        }
                        d_e[i] += z[j] * de;
                        cls_grad[j * d + i] += scale * z[j] * a * dg * (e_hat[i] - c * w_hat) / r;
                    }
                }
                Ok(loss)
            }
        }
    }

    /// Center update for the center-loss head:
    /// `c_j -= alpha * sum_{i: y_i = j} (c_j - e_i) / (1 + n_j)`.
    pub fn center_update(&mut self, embeddings: &[Vec<f64>], labels: &[usize]) -> Result<()> {
        let LossHead::CenterLoss { alpha, .. } = self.head else {
            return Err(Error::InvalidArgument(
                "center update needs the center-loss head".into(),
            ));
        };
        let d = self.embed_dim();
        let mut delta = vec![0.0; self.centers.len()];
        let mut count = vec![0usize; self.num_identities];
        for (e, &y) in embeddings.iter().zip(labels) {
            count[y] += 1;
            let c = self.center(y);
            for i in 0..d {
                delta[y * d + i] += c[i] - e[i];
            }
        }
        for (j, &n) in count.iter().enumerate() {
            if n == 0 {
                continue;
            }
            for i in 0..d {
                self.centers[j * d + i] -= alpha * delta[j * d + i] / (1 + n) as f64;
            }
        }
        Ok(())
    }
}

/// Embeddings for `ids`, in input order, without normalization.
pub fn embed_all<B: Backbone>(
    model: &EmbeddingModel<B>,
    store: &FeatureStore,
    ids: &[impl AsRef<str> + Sync],
) -> Result<Vec<Vec<f64>>> {
    ids.par_iter()
        .map(|id| {
            let raw = store.require(id.as_ref())?;
            let x: Vec<f64> = raw.iter().map(|v| *v as f64).collect();
            model.embed(&x)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = EmbeddingModel::zeros(Mlp::new(3, &[4], 2), LossHead::SoftmaxCe, 5);
        let (e, z) = m.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(e, vec![0.0; 2]);
        assert_eq!(z, vec![0.0; 5]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut m = EmbeddingModel::zeros(Mlp::new(3, &[], 3), LossHead::SoftmaxCe, 2);
        for i in 0..3 {
            m.params[i * 3 + i] = 1.0;
        }
        assert_eq!(m.embed(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_and_label_errors() {
        let m = EmbeddingModel::zeros(Mlp::new(3, &[], 2), LossHead::SoftmaxCe, 2);
        assert!(matches!(
            m.forward(&[1.0]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(m.loss_and_grad(&[(&[1.0, 2.0, 3.0], 2)]).is_err());
    }

    #[test]
    fn zero_embedding_is_an_error_for_angular_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = EmbeddingModel::init(Mlp::new(2, &[], 3), LossHead::arcface(), 3, &mut rng);
        let bl = m.backbone.param_len();
        m.params[..bl].fill(0.0);
        assert!(matches!(
            m.loss_and_grad(&[(&[1.0, 1.0], 0)]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(m.forward(&[1.0, 1.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn single_sample_two_identities_uniform_logits() {
        let m = EmbeddingModel::zeros(Mlp::new(2, &[], 2), LossHead::SoftmaxCe, 2);
        let lg = m.loss_and_grad(&[(&[0.3, 0.1], 1)]).unwrap();
        assert!((lg.loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn center_update_rules() {
        let mut m = EmbeddingModel::zeros(
            Mlp::new(2, &[], 2),
            LossHead::CenterLoss {
                lambda: 0.1,
                alpha: 1.0,
            },
            3,
        );
        m.centers = vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        // one sample of identity 0 at (3, -1): c <- c - (c - x) / 2
        m.center_update(&[vec![3.0, -1.0]], &[0]).unwrap();
        assert_eq!(m.center(0), &[2.0, 0.0]);
        assert_eq!(m.center(1), &[2.0, 2.0]);
        assert_eq!(m.center(2), &[3.0, 3.0]);
        // two samples of identity 2: delta = ((3-1)+(3-4), (3-0)+(3-3)) / 3
        m.center_update(&[vec![1.0, 0.0], vec![4.0, 3.0]], &[2, 2])
            .unwrap();
        let expect = [3.0 - 1.0 / 3.0, 3.0 - 1.0];
        assert!((m.center(2)[0] - expect[0]).abs() < 1e-15);
        assert!((m.center(2)[1] - expect[1]).abs() < 1e-15);
    }

    #[test]
    fn center_update_fixed_points() {
        let mut m = EmbeddingModel::zeros(
            Mlp::new(2, &[], 2),
            LossHead::CenterLoss {
                lambda: 0.1,
                alpha: 1.0,
            },
            2,
        );
        m.centers = vec![0.5, -0.5, 1.0, 1.0];
        let before = m.centers.clone();
        m.center_update(&[vec![0.5, -0.5], vec![0.5, -0.5]], &[0, 0])
            .unwrap();
        assert_eq!(m.centers, before);
        m.head = LossHead::CenterLoss {
            lambda: 0.1,
            alpha: 0.0,
        };
        m.center_update(&[vec![9.0, 9.0]], &[1]).unwrap();
        assert_eq!(m.centers, before);
    }
}
