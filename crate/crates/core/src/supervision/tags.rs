use posepyr_tensor::{CustomOp, Element, Graph, Tensor, Var};

use super::targets::TagIndices;
use crate::error::{Error, Result};

/// Pull and push terms of the associative-embedding loss, averaged over the
/// batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TagLossTerms {
    pub pull: f64,
    pub push: f64,
}

impl TagLossTerms {
    pub fn total(&self) -> f64 {
        self.pull + self.push
    }
}

/// Flat tagmap offsets of each person's keypoints, per image.
type Groups = Vec<Vec<Vec<usize>>>;

fn flatten(shape: &[usize], indices: &TagIndices) -> Result<Groups> {
    let &[n, k, h, w] = shape else {
        return Err(Error::InvalidArgument(format!(
            "tagmap must be N x K x H x W, got {shape:?}"
        )));
    };
    if indices.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} images of tag indices for a batch of {n}",
            indices.len()
        )));
    }
    indices
        .iter()
        .enumerate()
        .map(|(b, persons)| {
            persons
                .iter()
                .map(|cells| {
                    cells
                        .iter()
                        .map(|&(c, y, x)| {
                            if c >= k || y >= h || x >= w {
                                return Err(Error::InvalidArgument(format!(
                                    "tag index ({c}, {y}, {x}) outside {k} x {h} x {w}"
                                )));
                            }
                            Ok(((b * k + c) * h + y) * w + x)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn means(tags: &[f64], persons: &[Vec<usize>]) -> Vec<f64> {
    persons
        .iter()
        .map(|p| p.iter().map(|&i| tags[i]).sum::<f64>() / p.len() as f64)
        .collect()
}

fn terms(tags: &[f64], groups: &Groups) -> TagLossTerms {
    let (mut pull, mut push) = (0.0, 0.0);
    for persons in groups.iter().filter(|p| !p.is_empty()) {
        let mu = means(tags, persons);
        let np = persons.len() as f64;
        pull += persons
            .iter()
            .zip(&mu)
            .map(|(p, m)| p.iter().map(|&i| (tags[i] - m).powi(2)).sum::<f64>() / p.len() as f64)
            .sum::<f64>()
            / np;
        if persons.len() > 1 {
            let mut s = 0.0;
            for (a, ma) in mu.iter().enumerate() {
                for (b, mb) in mu.iter().enumerate() {
                    if a != b {
                        s += (-(ma - mb).powi(2) / 2.0).exp();
                    }
                }
            }
            push += s / (np * (np - 1.0));
        }
    }
    let n = groups.len().max(1) as f64;
    TagLossTerms {
        pull: pull / n,
        push: push / n,
    }
}

struct TagLossOp {
    groups: Groups,
}

impl<T: Element> CustomOp<T> for TagLossOp {
    fn name(&self) -> &str {
        "tag_loss"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_output: &[T],
    ) -> Vec<Option<Vec<T>>> {
        let tags: Vec<f64> = inputs[0]
            .data()
            .iter()
            .map(|v| v.to_f64().unwrap())
            .collect();
        let scale = grad_output[0].to_f64().unwrap() / self.groups.len().max(1) as f64;
        let mut grad = vec![0.0f64; tags.len()];
        for persons in self.groups.iter().filter(|p| !p.is_empty()) {
            let mu = means(&tags, persons);
            let np = persons.len() as f64;
            // d(push)/d(mean_a), then spread over the person's keypoints.
            let mut dmu = vec![0.0; persons.len()];
            if persons.len() > 1 {
                let pairs = np * (np - 1.0);
                for a in 0..persons.len() {
                    for b in 0..persons.len() {
                        if a != b {
                            let d = mu[a] - mu[b];
                            // Each unordered pair appears twice among ordered pairs.
                            dmu[a] += -2.0 * d * (-d * d / 2.0).exp() / pairs;
                        }
                    }
                }
            }
            for ((p, m), dm) in persons.iter().zip(&mu).zip(&dmu) {
                let len = p.len() as f64;
                for &i in p {
                    grad[i] += scale * (2.0 * (tags[i] - m) / (len * np) + dm / len);
                }
            }
        }
        vec![Some(grad.into_iter().map(T::lit).collect())]
    }
}

/// Evaluates the loss terms without recording anything.
pub fn tag_loss_terms<T: Element>(
    tagmap: &Tensor<T>,
    indices: &TagIndices,
) -> Result<TagLossTerms> {
    let groups = flatten(tagmap.shape(), indices)?;
    let tags: Vec<f64> = tagmap.data().iter().map(|v| v.to_f64().unwrap()).collect();
    Ok(terms(&tags, &groups))
}

/// Associative-embedding grouping loss on level-0 tags:
/// `pull = mean_p mean_i (t_i - mean_p)^2` and
/// `push = mean_{a != b} exp(-(mean_a - mean_b)^2 / 2)`, per image, then
/// averaged over the batch.
pub fn tag_loss<T: Element>(g: &mut Graph<T>, tagmap: Var, indices: &TagIndices) -> Result<Var> {
    let groups = flatten(g.shape(tagmap), indices)?;
    let tags: Vec<f64> = g
        .value(tagmap)
        .data()
        .iter()
        .map(|v| v.to_f64().unwrap())
        .collect();
    let value = terms(&tags, &groups).total();
    Ok(g.custom(
        &[tagmap],
        Tensor::scalar(T::lit(value)),
        Box::new(TagLossOp { groups }),
    )?)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub heatmap: f64,
    pub tag: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            heatmap: 1.0,
            tag: 1e-3,
        }
    }
}

/// `weights.heatmap * heatmap + weights.tag * tag`.
pub fn total_loss<T: Element>(
    g: &mut Graph<T>,
    heatmap: Var,
    tag: Var,
    weights: LossWeights,
) -> Result<Var> {
    let h = g.scale(heatmap, T::lit(weights.heatmap))?;
    let t = g.scale(tag, T::lit(weights.tag))?;
    Ok(g.add(h, t)?)
}
