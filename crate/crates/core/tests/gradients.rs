mod common;

use common::{
    check_episode_gradients, check_model_gradients, random_episode, small_token_task, GRAD_TOL,
};
use protofuse::experiments::{Model, Task, TrainConfig};
use protofuse::model::{Episode, InstanceEmbedding};
use protofuse::protonet::{
    compute_prototypes, episode_loss_and_grads, FusionKind, RelationGradient,
};
use protofuse::sampler::{sample_episode_spec, SeededRng};

#[test]
fn episode_gradients_match_finite_differences() {
    for (i, kind) in FusionKind::ABLATION_ORDER.into_iter().enumerate() {
        for seed in 0..4 {
            let ep = random_episode(100 * i as u64 + seed, 4, 3, 2, 2);
            let strategy = kind.init(4, seed);
            let (err, n) = check_episode_gradients(&ep, &strategy);
            assert!(n > 0);
            assert!(err < GRAD_TOL, "{kind}: max relative error {err:e}");
        }
    }
}

#[test]
fn model_gradients_match_finite_differences() {
    let (data, relations) = small_token_task(3);
    let task = Task::new(&data, &relations);
    for kind in FusionKind::ABLATION_ORDER {
        let cfg = TrainConfig {
            fusion: kind,
            dim: 3,
            buckets: 64,
            seed: 9,
            ..TrainConfig::default()
        };
        let model = Model::init(&cfg, None).unwrap();
        let spec = sample_episode_spec(&mut SeededRng::new(5), &data, 3, 2, 1).unwrap();
        let (err, n) = check_model_gradients(&model, task, &spec);
        assert!(n >= 64 * 3);
        assert!(err < GRAD_TOL, "{kind}: max relative error {err:e}");
    }
}

#[test]
fn shot_gradients_are_split_evenly() {
    // Every shot of a class receives the same gradient, 1/K of the
    // prototype gradient; with K = 1 that is the prototype gradient itself.
    let ep = random_episode(77, 5, 4, 3, 2);
    let strategy = FusionKind::DirectAdd.init(5, 0);
    let (_, grads) = episode_loss_and_grads(&ep, &strategy, RelationGradient::Through).unwrap();
    for shots in &grads.support {
        for s in &shots[1..] {
            assert_eq!(s, &shots[0]);
        }
    }

    let single = Episode::new(
        ep.class_ids.clone(),
        compute_prototypes(&ep.support)
            .unwrap()
            .into_iter()
            .map(|p| {
                let (head, tail) = p.0.split_at(p.0.len() / 2);
                vec![InstanceEmbedding::new(head.to_vec(), tail.to_vec()).unwrap()]
            })
            .collect(),
        ep.query.clone(),
        ep.relations.clone(),
    )
    .unwrap();
    let (_, g1) = episode_loss_and_grads(&single, &strategy, RelationGradient::Through).unwrap();
    for (shots, proto) in grads.support.iter().zip(&g1.support) {
        for (a, b) in shots[0].combined().iter().zip(proto[0].combined()) {
            assert!((a * 3.0 - b).abs() < 1e-12);
        }
    }
}
