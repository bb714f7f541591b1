use mixad::graph::sample_gumbel_difference;
use mixad::losses::{all_losses, LossConfig};
use mixad::model::{MixadModel, ModelConfig};
use mixad::numerics::gradcheck::check_gradients;
use mixad::numerics::{Bound, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        nodes: 3,
        window: 6,
        mem_items: 2,
        mem_dim: 3,
        hidden: 4,
        order: 1,
        tau: 0.5,
    }
}

fn total_loss(
    model: &MixadModel,
    params: &ParamStore,
    batch: &Tensor,
    noise: &Tensor,
    cfg: &LossConfig,
) -> mixad::Result<(Tape, Bound, Var)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let graph = model.graph(&mut tape, &bound, Some(noise))?;
    let out = model.forward(&mut tape, &bound, batch, graph)?;
    let parts = all_losses(
        &mut tape,
        batch,
        out.reconstruction,
        out.read.query,
        bound[model.mem_items],
        out.read.attention,
        &out.read.pos,
        &out.read.neg,
        batch.rows() / model.config.nodes,
        cfg,
    )?;
    Ok((tape, bound, parts.total))
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let model = MixadModel::new(tiny(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = Tensor::from_fn(2 * 3, 6, |_, _| rng.gen_range(0.0..1.0));
    let noise = sample_gumbel_difference(3, &mut rng);
    let cfg = LossConfig {
        margin: 1.0,
        lambda1: 0.3,
        lambda2: 0.2,
        lambda3: 0.1,
    };

    let (mut tape, bound, total) = total_loss(&model, &model.params, &batch, &noise, &cfg).unwrap();
    tape.backward(total).unwrap();
    let grads = model.params.collect_grads(&mut tape, &bound);
    assert!(grads.iter().all(Option::is_some), "every parameter reaches the loss");

    let report = check_gradients(&model.params, &grads, 1e-4, |p| {
        let (tape, _, total) = total_loss(&model, p, &batch, &noise, &cfg)?;
        Ok(tape.value(total).data()[0])
    })
    .unwrap();
    assert_eq!(report.checked, model.params.num_scalars());
    assert!(
        report.max_rel_error < 1e-4,
        "worst entry {}: {:e}",
        report.worst,
        report.max_rel_error
    );
}
