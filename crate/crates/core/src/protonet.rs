//! Prototypes, relation fusion, dot-product scoring and the episode loss
//! with its exact gradient.
//!
//! For one episode with queries `q_m` (labels `y_m`, `M` of them):
//!
//! ```text
//! P_i      = mean_k combined(support[i][k])
//! fp_i     = fuse(P_i, rel_i)
//! s_mj     = combined(q_m) · fp_j
//! loss     = (1/M) Σ_m −ln softmax(s_m)[y_m]
//! ```
//!
//! Backward: `∂loss/∂s_mj = (p_mj − [j = y_m]) / M`, then through the dot
//! product, the fusion rule and the mean over shots.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    add_assign, axpy, concat, dot, Episode, InstanceEmbedding, Linear, Prototype,
    RelationEmbedding, View,
};

/// Probability floor applied before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Fusion rule identifier, without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    None,
    DirectAdd,
    ConcatProject,
    #[serde(rename = "view_linear_1")]
    ViewLinearCls,
    #[serde(rename = "view_linear_2")]
    ViewLinearMean,
}

impl FusionKind {
    /// Ablation table order.
    pub const ABLATION_ORDER: [FusionKind; 5] = [
        FusionKind::DirectAdd,
        FusionKind::None,
        FusionKind::ConcatProject,
        FusionKind::ViewLinearCls,
        FusionKind::ViewLinearMean,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FusionKind::DirectAdd => "Ours",
            FusionKind::None => "w/o relation info.",
            FusionKind::ConcatProject => "w/ concat",
            FusionKind::ViewLinearCls => "w/ linear layer view#1",
            FusionKind::ViewLinearMean => "w/ linear layer view#2",
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            FusionKind::None => "none",
            FusionKind::DirectAdd => "direct_add",
            FusionKind::ConcatProject => "concat_project",
            FusionKind::ViewLinearCls => "view_linear_1",
            FusionKind::ViewLinearMean => "view_linear_2",
        }
    }

    pub fn has_params(self) -> bool {
        !matches!(self, FusionKind::None | FusionKind::DirectAdd)
    }

    /// Builds the strategy for encoder dimension `d`. Projection matrices
    /// are uniform in `±1/√fan_in` from a ChaCha8 stream seeded by `seed`;
    /// biases start at zero.
    pub fn init(self, d: usize, seed: u64) -> FusionStrategy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut linear = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            let weight = (0..rows * cols)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            Linear {
                rows,
                cols,
                weight,
                bias: vec![0.0; rows],
            }
        };
        match self {
            FusionKind::None => FusionStrategy::None,
            FusionKind::DirectAdd => FusionStrategy::DirectAdd,
            FusionKind::ConcatProject => FusionStrategy::ConcatProject(linear(2 * d, 4 * d)),
            FusionKind::ViewLinearCls => FusionStrategy::ViewLinear {
                view: View::Cls,
                linear: linear(2 * d, d),
            },
            FusionKind::ViewLinearMean => FusionStrategy::ViewLinear {
                view: View::Mean,
                linear: linear(2 * d, d),
            },
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ABLATION_ORDER
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion strategy `{s}`")))
    }
}

/// How relation embeddings meet prototypes.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionStrategy {
    /// Plain prototypes.
    None,
    /// `P + (cls ⊕ mean)`.
    DirectAdd,
    /// `W (cls ⊕ mean ⊕ P) + b` with `W: 2d×4d`.
    ConcatProject(Linear),
    /// `P + W·view + b` with `W: 2d×d`.
    ViewLinear { view: View, linear: Linear },
}

impl FusionStrategy {
    pub fn kind(&self) -> FusionKind {
        match self {
            FusionStrategy::None => FusionKind::None,
            FusionStrategy::DirectAdd => FusionKind::DirectAdd,
            FusionStrategy::ConcatProject(_) => FusionKind::ConcatProject,
            FusionStrategy::ViewLinear {
                view: View::Cls, ..
            } => FusionKind::ViewLinearCls,
            FusionStrategy::ViewLinear {
                view: View::Mean, ..
            } => FusionKind::ViewLinearMean,
        }
    }

    pub fn linear(&self) -> Option<&Linear> {
        match self {
            FusionStrategy::ConcatProject(l) | FusionStrategy::ViewLinear { linear: l, .. } => {
                Some(l)
            }
            _ => None,
        }
    }

    pub fn linear_mut(&mut self) -> Option<&mut Linear> {
        match self {
            FusionStrategy::ConcatProject(l) | FusionStrategy::ViewLinear { linear: l, .. } => {
                Some(l)
            }
            _ => None,
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let expected = match self {
            FusionStrategy::ConcatProject(_) => Some((2 * d, 4 * d)),
            FusionStrategy::ViewLinear { .. } => Some((2 * d, d)),
            _ => None,
        };
        if let (Some((rows, cols)), Some(l)) = (expected, self.linear()) {
            if l.rows != rows {
                return Err(Error::dim(rows, l.rows, "fusion weight rows"));
            }
            if l.cols != cols {
                return Err(Error::dim(cols, l.cols, "fusion weight cols"));
            }
        }
        Ok(())
    }
}

/// Fused prototypes, one `2d` vector per class.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedPrototypeSet(pub Vec<Vec<f64>>);

impl FusedPrototypeSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn compute_prototypes(support: &[Vec<InstanceEmbedding>]) -> Result<Vec<Prototype>> {
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    support
        .iter()
        .map(|shots| {
            let first = shots.first().ok_or(Error::EmptySupport)?;
            let mut acc = vec![0.0; 2 * first.dim()];
            for s in shots {
                if s.dim() != first.dim() {
                    return Err(Error::dim(first.dim(), s.dim(), "support embedding"));
                }
                add_assign(&mut acc, &s.combined());
            }
            let scale = 1.0 / shots.len() as f64;
            acc.iter_mut().for_each(|x| *x *= scale);
            Ok(Prototype(acc))
        })
        .collect()
}

pub fn fuse(
    protos: &[Prototype],
    rels: &[RelationEmbedding],
    strategy: &FusionStrategy,
) -> Result<FusedPrototypeSet> {
    if protos.len() != rels.len() {
        return Err(Error::dim(
            protos.len(),
            rels.len(),
            "relation embeddings per prototype",
        ));
    }
    let Some(first) = protos.first() else {
        return Ok(FusedPrototypeSet(Vec::new()));
    };
    let two_d = first.0.len();
    for (p, r) in protos.iter().zip(rels) {
        if p.0.len() != two_d {
            return Err(Error::dim(two_d, p.0.len(), "prototype"));
        }
        if 2 * r.dim() != two_d {
            return Err(Error::dim(two_d, 2 * r.dim(), "fused relation"));
        }
    }
    strategy.check_dim(two_d / 2)?;
    let fused = protos
        .iter()
        .zip(rels)
        .map(|(p, r)| match strategy {
            FusionStrategy::None => p.0.clone(),
            FusionStrategy::DirectAdd => {
                let mut out = p.0.clone();
                add_assign(&mut out, &r.fused());
                out
            }
            FusionStrategy::ConcatProject(l) => l.apply(&concat(&r.fused(), &p.0)),
            FusionStrategy::ViewLinear { view, linear } => {
                let mut out = p.0.clone();
                add_assign(&mut out, &linear.apply(r.view(*view)));
                out
            }
        })
        .collect();
    Ok(FusedPrototypeSet(fused))
}

/// `combined(q) · fp_i` for every class.
pub fn score(query: &InstanceEmbedding, fused: &FusedPrototypeSet) -> Result<Vec<f64>> {
    let q = query.combined();
    fused
        .0
        .iter()
        .map(|fp| {
            if fp.len() != q.len() {
                Err(Error::dim(fp.len(), q.len(), "query vs prototype"))
            } else {
                Ok(dot(&q, fp))
            }
        })
        .collect()
}

/// Max-shifted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn ce_loss(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

/// Index of the largest score; the lowest index wins ties.
pub fn predict(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bs), (i, &s)| {
            if s > bs {
                (i, s)
            } else {
                (bi, bs)
            }
        })
        .0
}

/// Per-query scores plus the mean loss and predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutput {
    pub scores: Vec<Vec<f64>>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub loss: f64,
}

impl EpisodeOutput {
    pub fn correct(&self) -> usize {
        self.predictions
            .iter()
            .zip(&self.labels)
            .filter(|(p, y)| p == y)
            .count()
    }
}

pub fn episode_forward(ep: &Episode, strategy: &FusionStrategy) -> Result<EpisodeOutput> {
    if ep.query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let protos = compute_prototypes(&ep.support)?;
    let fused = fuse(&protos, &ep.relations, strategy)?;
    let mut out = EpisodeOutput {
        scores: Vec::with_capacity(ep.query.len()),
        predictions: Vec::with_capacity(ep.query.len()),
        labels: Vec::with_capacity(ep.query.len()),
        loss: 0.0,
    };
    for (q, y) in &ep.query {
        let s = score(q, &fused)?;
        out.loss += ce_loss(&softmax(&s), *y);
        out.predictions.push(predict(&s));
        out.labels.push(*y);
        out.scores.push(s);
    }
    out.loss /= ep.query.len() as f64;
    Ok(out)
}

/// Whether relation embeddings receive gradient through the fusion rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationGradient {
    #[default]
    Through,
    Detached,
}

/// Gradients of the mean episode loss, shaped like the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeGradients {
    pub support: Vec<Vec<InstanceEmbedding>>,
    pub query: Vec<InstanceEmbedding>,
    pub relations: Vec<RelationEmbedding>,
    /// Present for strategies with a projection.
    pub fusion: Option<Linear>,
    /// `∂loss/∂scores` per query.
    pub scores: Vec<Vec<f64>>,
}

pub fn episode_loss_and_grads(
    ep: &Episode,
    strategy: &FusionStrategy,
    relation_grad: RelationGradient,
) -> Result<(f64, EpisodeGradients)> {
    if ep.query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let n = ep.n_way();
    let d = ep.dim();
    let protos = compute_prototypes(&ep.support)?;
    let fused = fuse(&protos, &ep.relations, strategy)?;
    let m = ep.query.len() as f64;

    let mut loss = 0.0;
    let mut g_fused = vec![vec![0.0; 2 * d]; n];
    let mut g_query = Vec::with_capacity(ep.query.len());
    let mut g_scores = Vec::with_capacity(ep.query.len());
    for (q, y) in &ep.query {
        let qc = q.combined();
        let s = score(q, &fused)?;
        let p = softmax(&s);
        loss += ce_loss(&p, *y);
        let ds: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(j, pj)| (pj - if j == *y { 1.0 } else { 0.0 }) / m)
            .collect();
        let mut gq = vec![0.0; 2 * d];
        for (j, dsj) in ds.iter().enumerate() {
            axpy(&mut gq, *dsj, &fused.0[j]);
            axpy(&mut g_fused[j], *dsj, &qc);
        }
        g_query.push(InstanceEmbedding::from_combined(&gq));
        g_scores.push(ds);
    }
    loss /= m;

    let mut g_protos = vec![vec![0.0; 2 * d]; n];
    let mut g_rels = vec![RelationEmbedding::zeros(d); n];
    let mut g_fusion = strategy.linear().map(|l| Linear::zeros(l.rows, l.cols));
    for i in 0..n {
        let gf = &g_fused[i];
        match strategy {
            FusionStrategy::None => g_protos[i].copy_from_slice(gf),
            FusionStrategy::DirectAdd => {
                g_protos[i].copy_from_slice(gf);
                g_rels[i].cls.copy_from_slice(&gf[..d]);
                g_rels[i].mean.copy_from_slice(&gf[d..]);
            }
            FusionStrategy::ConcatProject(l) => {
                let input = concat(&ep.relations[i].fused(), &protos[i].0);
                if let Some(gw) = g_fusion.as_mut() {
                    gw.accumulate_outer(gf, &input);
                }
                let gx = l.apply_transpose(gf);
                g_rels[i].cls.copy_from_slice(&gx[..d]);
                g_rels[i].mean.copy_from_slice(&gx[d..2 * d]);
                g_protos[i].copy_from_slice(&gx[2 * d..]);
            }
            FusionStrategy::ViewLinear { view, linear } => {
                g_protos[i].copy_from_slice(gf);
                if let Some(gw) = g_fusion.as_mut() {
                    gw.accumulate_outer(gf, ep.relations[i].view(*view));
                }
                g_rels[i]
                    .view_mut(*view)
                    .copy_from_slice(&linear.apply_transpose(gf));
            }
        }
    }
    if relation_grad == RelationGradient::Detached {
        g_rels = vec![RelationEmbedding::zeros(d); n];
    }

    let k = ep.k_shot() as f64;
    let g_support = g_protos
        .iter()
        .zip(&ep.support)
        .map(|(gp, shots)| {
            let share: Vec<f64> = gp.iter().map(|g| g / k).collect();
            vec![InstanceEmbedding::from_combined(&share); shots.len()]
        })
        .collect();

    Ok((
        loss,
        EpisodeGradients {
            support: g_support,
            query: g_query,
            relations: g_rels,
            fusion: g_fusion,
            scores: g_scores,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(head: &[f64], tail: &[f64]) -> InstanceEmbedding {
        InstanceEmbedding::new(head.to_vec(), tail.to_vec()).unwrap()
    }

    fn rel(cls: &[f64], mean: &[f64]) -> RelationEmbedding {
        RelationEmbedding::new(cls.to_vec(), mean.to_vec()).unwrap()
    }

    #[test]
    fn prototypes_average_shots() {
        let one = compute_prototypes(&[vec![inst(&[1., 2.], &[3., 4.])]]).unwrap();
        assert_eq!(one[0].0, vec![1., 2., 3., 4.]);
        let two =
            compute_prototypes(&[vec![inst(&[1., 1.], &[1., 1.]), inst(&[3., 3.], &[3., 3.])]])
                .unwrap();
        assert_eq!(two[0].0, vec![2.; 4]);
        assert!(matches!(compute_prototypes(&[]), Err(Error::EmptySupport)));
        assert!(matches!(
            compute_prototypes(&[vec![]]),
            Err(Error::EmptySupport)
        ));
    }

    #[test]
    fn fusion_rules() {
        let p = vec![Prototype(vec![1., 0., 0., 0.])];
        let r = vec![rel(&[0., 1.], &[0., 0.])];
        assert_eq!(
            fuse(&p, &r, &FusionStrategy::DirectAdd).unwrap().0[0],
            vec![1., 1., 0., 0.]
        );
        assert_eq!(
            fuse(&p, &r, &FusionStrategy::None).unwrap().0[0],
            vec![1., 0., 0., 0.]
        );

        let zeros = vec![rel(&[0., 0.], &[0., 0.])];
        assert_eq!(
            fuse(&p, &zeros, &FusionStrategy::DirectAdd).unwrap(),
            fuse(&p, &zeros, &FusionStrategy::None).unwrap()
        );

        let concat_zero = FusionStrategy::ConcatProject(Linear::zeros(4, 8));
        assert_eq!(fuse(&p, &r, &concat_zero).unwrap().0[0], vec![0.; 4]);

        // view#2 with W = [I; I] adds the mean view twice over
        let mut w = Linear::zeros(4, 2);
        for i in 0..2 {
            w.weight[i * 2 + i] = 1.0;
            w.weight[(i + 2) * 2 + i] = 1.0;
        }
        let view2 = FusionStrategy::ViewLinear {
            view: View::Mean,
            linear: w,
        };
        let r2 = vec![rel(&[9., 9.], &[1., 2.])];
        assert_eq!(fuse(&p, &r2, &view2).unwrap().0[0], vec![2., 2., 1., 2.]);
    }

    #[test]
    fn fusion_shape_errors() {
        let p = vec![Prototype(vec![0.; 4])];
        let r = vec![rel(&[0., 0.], &[0., 0.])];
        let wrong = FusionStrategy::ConcatProject(Linear::zeros(4, 4));
        assert!(matches!(
            fuse(&p, &r, &wrong),
            Err(Error::DimMismatch { .. })
        ));
        let wrong_view = FusionStrategy::ViewLinear {
            view: View::Cls,
            linear: Linear::zeros(4, 4),
        };
        assert!(fuse(&p, &r, &wrong_view).is_err());
        assert!(fuse(&p, &[], &FusionStrategy::None).is_err());
    }

    #[test]
    fn scores_are_dot_products() {
        let fp = FusedPrototypeSet(vec![vec![2., 0.], vec![0., 3.]]);
        assert_eq!(score(&inst(&[1.], &[0.]), &fp).unwrap(), vec![2., 0.]);
        assert_eq!(score(&inst(&[0.], &[0.]), &fp).unwrap(), vec![0., 0.]);
        let scaled = score(&inst(&[2.5], &[1.0]), &fp).unwrap();
        let base = score(&inst(&[1.0], &[0.4]), &fp).unwrap();
        for (a, b) in scaled.iter().zip(&base) {
            assert!((a - 2.5 * b).abs() < 1e-12);
        }
        assert_eq!(predict(&scaled), predict(&base));
        assert!(score(&inst(&[1., 1.], &[1., 1.]), &fp).is_err());
    }

    #[test]
    fn softmax_values() {
        assert_eq!(softmax(&[0., 0.]), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        for x in softmax(&[7.0; 5]) {
            assert!((x - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn ce_values() {
        let uniform = vec![0.2; 5];
        for y in 0..5 {
            assert!((ce_loss(&uniform, y) - 5f64.ln()).abs() < 1e-9);
        }
        assert_eq!(ce_loss(&[1.0, 0.0], 0), 0.0);
        assert!((ce_loss(&[0.25, 0.75], 0) - 4f64.ln()).abs() < 1e-12);
        assert!((ce_loss(&[0.0, 1.0], 0) - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn predict_breaks_ties_low() {
        assert_eq!(predict(&[2., 0.]), 0);
        assert_eq!(predict(&[1., 1.]), 0);
        assert_eq!(predict(&[0., 0., 5.]), 2);
    }

    fn tiny_episode(query: InstanceEmbedding) -> Episode {
        Episode::new(
            vec!["a".into(), "b".into()],
            vec![vec![inst(&[1.], &[0.])], vec![inst(&[0.], &[1.])]],
            vec![(query, 0)],
            vec![rel(&[0.5], &[-0.5]), rel(&[1.0], &[2.0])],
        )
        .unwrap()
    }

    #[test]
    fn equal_scores_gradient() {
        let ep = tiny_episode(inst(&[1.], &[1.]));
        let (loss, g) =
            episode_loss_and_grads(&ep, &FusionStrategy::None, RelationGradient::Through).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g.scores[0], vec![-0.5, 0.5]);
    }

    #[test]
    fn none_strategy_has_no_relation_gradient() {
        let ep = tiny_episode(inst(&[0.3], &[-1.2]));
        let (_, g) =
            episode_loss_and_grads(&ep, &FusionStrategy::None, RelationGradient::Through).unwrap();
        assert!(g
            .relations
            .iter()
            .all(|r| r.cls.iter().chain(&r.mean).all(|&x| x == 0.0)));
        assert!(g.fusion.is_none());
    }

    #[test]
    fn detached_relations_get_zero_gradient() {
        let ep = tiny_episode(inst(&[0.3], &[-1.2]));
        let (l1, through) =
            episode_loss_and_grads(&ep, &FusionStrategy::DirectAdd, RelationGradient::Through)
                .unwrap();
        let (l2, detached) =
            episode_loss_and_grads(&ep, &FusionStrategy::DirectAdd, RelationGradient::Detached)
                .unwrap();
        assert_eq!(l1, l2);
        assert!(through
            .relations
            .iter()
            .any(|r| r.cls.iter().any(|&x| x != 0.0)));
        assert!(detached
            .relations
            .iter()
            .all(|r| r.cls.iter().chain(&r.mean).all(|&x| x == 0.0)));
        assert_eq!(through.query, detached.query);
        assert_eq!(through.support, detached.support);
    }

    #[test]
    fn empty_query_is_an_error() {
        let mut ep = tiny_episode(inst(&[0.], &[0.]));
        ep.query.clear();
        assert!(matches!(
            episode_loss_and_grads(&ep, &FusionStrategy::None, RelationGradient::Through),
            Err(Error::EmptyQuery)
        ));
    }

    #[test]
    fn fusion_kind_ids_round_trip() {
        for k in FusionKind::ABLATION_ORDER {
            assert_eq!(k.id().parse::<FusionKind>().unwrap(), k);
            assert_eq!(k.init(3, 0).kind(), k);
        }
        assert!("bogus".parse::<FusionKind>().is_err());
    }

    #[test]
    fn fusion_init_shapes_and_bounds() {
        let concat = FusionKind::ConcatProject.init(4, 1);
        let l = concat.linear().unwrap();
        assert_eq!((l.rows, l.cols), (8, 16));
        assert!(l.weight.iter().all(|w| w.abs() <= 0.25));
        let view = FusionKind::ViewLinearCls.init(4, 1);
        let l = view.linear().unwrap();
        assert_eq!((l.rows, l.cols), (8, 4));
        assert!(l.bias.iter().all(|&b| b == 0.0));
        assert_eq!(FusionKind::ConcatProject.init(4, 1), concat);
    }
}
