use cfm::dataset::{self, collect_random};
use cfm::eval::{run_episode, EpisodeConfig, GoalId, GoalSpec, Policy};
use cfm::models::{checkpoint, train, ModelSpec, Objective, TrainConfig};
use cfm::sim::{Env, EnvKind};

fn small_run(kind: EnvKind, objective: Objective) -> (Env, cfm::models::Model) {
    let env = Env::new(kind, 16).unwrap();
    let data = dataset::load(&dataset::save(&collect_random(&env, 6, 6, 3, false).unwrap())).unwrap();
    let spec = ModelSpec::new(kind, 16, objective).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 12, seed: 5, ..TrainConfig::default() };
    let out = train(data.transitions(), spec, &cfg, |_, _| {}).unwrap();
    assert!(out.losses.iter().all(|l| l.is_finite()));
    (env, out.model)
}

#[test]
fn collect_train_save_and_plan() {
    for (kind, objective, goal) in [
        (EnvKind::Pointmass, Objective::Cfm, GoalId::Center),
        (EnvKind::Rope, Objective::Autoencoder, GoalId::Horizontal),
        (EnvKind::Cloth, Objective::Joint, GoalId::Flat),
    ] {
        let (env, model) = small_run(kind, objective);
        let model = checkpoint::load(&checkpoint::save(&model).unwrap()).unwrap();
        let cfg = EpisodeConfig { max_steps: 3, n_candidates: 8, randomize: false };
        let goal = GoalSpec::new(kind, goal, 0).unwrap();
        let a = run_episode(&env, Policy::Model(&model), &goal, &cfg, 11).unwrap();
        let b = run_episode(&env, Policy::Model(&model), &goal, &cfg, 11).unwrap();
        assert_eq!(a.trace.len(), 4);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.taken, b.taken);
        assert_eq!(a.best, a.trace.iter().cloned().fold(f64::INFINITY, f64::min));
    }
}

#[test]
fn training_is_reproducible() {
    let (_, a) = small_run(EnvKind::Pointmass, Objective::Cfm);
    let (_, b) = small_run(EnvKind::Pointmass, Objective::Cfm);
    assert_eq!(checkpoint::save(&a).unwrap(), checkpoint::save(&b).unwrap());
}
