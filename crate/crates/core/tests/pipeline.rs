use persona_vq::eval::{run_ablation, AblationVariant};
use persona_vq::reward::TrainConfig;
use persona_vq::simulator::{bayes_accuracy, generate, WorldSpec};

#[test]
fn single_prototype_world_gives_persona_no_edge() {
    let world = generate(&WorldSpec {
        num_prototypes: 1,
        multimodal_rate: 0.0,
        ..WorldSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig::default();
    let (_, full) = run_ablation(AblationVariant::Full, &world.train, Some(&world.validation), &world.test, &cfg).unwrap();
    let (_, free) =
        run_ablation(AblationVariant::PersonaFree, &world.train, Some(&world.validation), &world.test, &cfg).unwrap();
    let bayes = bayes_accuracy(&world.truth, &world.test).unwrap();
    assert!(
        (full.accuracy - free.accuracy).abs() <= 0.01,
        "full {} persona_free {} bayes {bayes}",
        full.accuracy,
        free.accuracy
    );
    assert!(free.accuracy <= bayes + 0.02);
}
