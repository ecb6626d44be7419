//! Compare analytic episode gradients against central differences for
//! every fusion rule.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use protofuse::model::{Episode, InstanceEmbedding, RelationEmbedding};
use protofuse::protonet::{
    episode_forward, episode_loss_and_grads, FusionKind, FusionStrategy, RelationGradient,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;

fn random_episode(rng: &mut ChaCha8Rng, d: usize, n: usize, k: usize) -> Episode {
    let v = |rng: &mut ChaCha8Rng| {
        (0..d)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    let inst = |rng: &mut ChaCha8Rng| InstanceEmbedding::new(v(rng), v(rng)).unwrap();
    let support = (0..n)
        .map(|_| (0..k).map(|_| inst(rng)).collect())
        .collect();
    let query = (0..n).map(|y| (inst(rng), y)).collect();
    let relations = (0..n)
        .map(|_| RelationEmbedding::new(v(rng), v(rng)).unwrap())
        .collect();
    Episode::new(
        (0..n).map(|i| format!("R{i}")).collect(),
        support,
        query,
        relations,
    )
    .unwrap()
}

fn loss(ep: &Episode, s: &FusionStrategy) -> f64 {
    episode_forward(ep, s).unwrap().loss
}

fn main() -> protofuse::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for kind in FusionKind::ABLATION_ORDER {
        let ep = random_episode(&mut rng, 4, 3, 2);
        let strategy = kind.init(4, 1);
        let (_, grads) = episode_loss_and_grads(&ep, &strategy, RelationGradient::Through)?;

        let mut worst = 0.0f64;
        for i in 0..ep.n_way() {
            for j in 0..ep.dim() {
                let mut up = ep.clone();
                let mut down = ep.clone();
                up.relations[i].mean[j] += STEP;
                down.relations[i].mean[j] -= STEP;
                let fd = (loss(&up, &strategy) - loss(&down, &strategy)) / (2.0 * STEP);
                worst = worst.max((grads.relations[i].mean[j] - fd).abs() / fd.abs().max(1.0));

                let mut up = ep.clone();
                let mut down = ep.clone();
                up.support[i][0].head[j] += STEP;
                down.support[i][0].head[j] -= STEP;
                let fd = (loss(&up, &strategy) - loss(&down, &strategy)) / (2.0 * STEP);
                worst = worst.max((grads.support[i][0].head[j] - fd).abs() / fd.abs().max(1.0));
            }
        }
        if let (Some(lin), Some(g)) = (strategy.linear(), &grads.fusion) {
            for idx in 0..lin.weight.len() {
                let (mut up, mut down) = (strategy.clone(), strategy.clone());
                up.linear_mut().unwrap().weight[idx] += STEP;
                down.linear_mut().unwrap().weight[idx] -= STEP;
                let fd = (loss(&ep, &up) - loss(&ep, &down)) / (2.0 * STEP);
                worst = worst.max((g.weight[idx] - fd).abs() / fd.abs().max(1.0));
            }
        }
        println!("{:<24} max relative error {worst:.2e}", kind.label());
    }
    Ok(())
}
