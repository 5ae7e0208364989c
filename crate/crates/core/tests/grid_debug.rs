use ndarray::{Array1, Array2};
use rand::Rng;
use sara_core::data::{apply_band_labels, build_sets, sample_pairs, Trajectory};
use sara_core::encoder::{infer_group_latent, train_encoder, Category, EncoderConfig};
use sara_core::envs::{self, PolicyKind};
use sara_core::reward::filter_trajectories;
use std::time::Instant;

static mut WALK_SIGN_STORE: f64 = 1.0;
const WALK_SIGN: f64 = 1.0;

fn pinned_walk_rollout(env: &dyn envs::Env, horizon: usize, seed: u64) -> Trajectory {
    let mut rng = sara_core::rng::rng_for(seed, "walk", 0);
    let mut s = env.init_state(&mut rng);
    let adim = env.spec().action_dim;
    let _ = rng.random::<bool>();
    let mut a = Array1::<f64>::from_elem(adim, WALK_SIGN);
    let mut states = Array2::zeros((horizon, s.len()));
    let mut actions = Array2::zeros((horizon, adim));
    let mut rewards = Array1::zeros(horizon);
    for t in 0..horizon {
        for v in a.iter_mut() {
            *v = (*v + rng.random_range(-0.05..0.05)).clamp(-1.0, 1.0);
        }
        let (ns, r) = env.step(s.view(), a.view());
        states.row_mut(t).assign(&s);
        actions.row_mut(t).assign(&a);
        rewards[t] = r;
        s = ns;
    }
    Trajectory::new(env.spec().name.to_string(), states, actions, Some(rewards)).unwrap()
}

#[test]
fn filtering_grid() {
    let t0 = Instant::now();
    let env = envs::env_by_name("line-hopper").unwrap();
    let mix: Vec<(Box<dyn envs::Policy>, f64)> = vec![
        (envs::scripted_policy("line-hopper", PolicyKind::Expert).unwrap(), 0.5),
        (envs::scripted_policy("line-hopper", PolicyKind::Medium).unwrap(), 0.3),
        (envs::scripted_policy("line-hopper", PolicyKind::Random).unwrap(), 0.2),
    ];
    let off = envs::generate_offline_dataset(env.as_ref(), &mix, 80, 60, 42).unwrap();
    for (dm, epochs, lr, zd) in [
        (64usize, 300usize, 1e-3f64, 16usize),
    ] {
        for seed in 0..4u64 {
            let mut pairs = sample_pairs(&off, 24, 100, 7 + seed).unwrap();
            apply_band_labels(&mut pairs, 10.0).unwrap();
            let mut sets = build_sets(&pairs).unwrap();
            let n_clean = sets.preferred.len();
            let n_inject = (n_clean as f64 / 9.0).round() as usize;
            let injected: Vec<Trajectory> = (0..n_inject)
                .map(|i| pinned_walk_rollout(env.as_ref(), 24, 900 + seed * 1000 + i as u64))
                .collect();
            sets.preferred.extend(injected);
            let cfg = EncoderConfig {
                d_model: dm,
                ff_dim: dm,
                n_heads: 4,
                epochs,
                lr_init: lr,
                lr_min: lr / 10.0,
                z_dim: zd,
                seed,
                subseq_augment: true,
                subseq_lengths: vec![6, 9, 12, 15, 18, 21, 24],
                ..EncoderConfig::desk()
            };
            let (enc, hist) = train_encoder(&cfg, &sets).unwrap();
            let zp = infer_group_latent(&enc, &sets.preferred, Category::Preferred).unwrap();
            let zn = infer_group_latent(&enc, &sets.non_preferred, Category::NonPreferred).unwrap();
            let out = filter_trajectories(&enc, &zp, &zn, &sets.preferred, 0.9).unwrap();
            let inj_dropped = out.dropped.iter().filter(|&&i| i >= n_clean).count();
            let clean_dropped = out.dropped.len() - inj_dropped;
            println!(
                "d={dm} ep={epochs} lr={lr} z={zd} seed {seed}: loss_end {:.3} dropped {inj_dropped}/{n_inject} injected, {clean_dropped}/{n_clean} clean [{:?}]",
                hist.last().unwrap(),
                t0.elapsed()
            );
        }
    }
}
