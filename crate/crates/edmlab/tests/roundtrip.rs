use edmlab::formats::{
    read_energy, read_mdp, read_policy, read_trajectories, trajectories_to_jsonl, write_atomic, write_energy,
    write_mdp, write_policy, LoadedPolicy,
};
use edmlab_core::sampler::{fixture_energies, SurrogateEnergy};
use edmlab_core::{SoftmaxPolicy, TabularMdp, Trajectory};
use proptest::prelude::*;

fn logits() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..5, 1usize..4)
        .prop_flat_map(|(s, a)| prop::collection::vec(prop::collection::vec(-20.0f64..20.0, a), s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mdp_roundtrip(n_s in 1usize..6, n_a in 1usize..4, gamma in 0.0f64..0.999, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = TabularMdp::random(n_s, n_a, gamma, seed).unwrap();
        write_mdp(&path, &m).unwrap();
        prop_assert_eq!(read_mdp(&path).unwrap(), m);
    }

    #[test]
    fn policy_roundtrip(l in logits(), shift in -5.0f64..5.0) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let n = l.len();
        let p = SoftmaxPolicy::with_gauge(l, vec![shift; n]).unwrap();
        write_policy(&path, &p).unwrap();
        prop_assert_eq!(read_policy(&path).unwrap(), LoadedPolicy::Tabular(p));
    }

    #[test]
    fn trajectory_roundtrip(steps in prop::collection::vec(prop::collection::vec((0usize..50, 0usize..50), 0..20), 0..10)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let trajs: Vec<Trajectory> = steps.into_iter().map(|s| Trajectory { horizon: s.len(), steps: s }).collect();
        write_atomic(&path, &trajectories_to_jsonl(&trajs)).unwrap();
        // Empty trajectories survive as `{"steps":[]}` lines.
        prop_assert_eq!(read_trajectories(&path, None).unwrap(), trajs);
    }
}

#[test]
fn energy_fixtures_match_builtins() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    for (name, builtin) in fixture_energies() {
        let loaded = read_energy(std::path::Path::new(&format!("{dir}/{name}.json"))).unwrap();
        assert_eq!(loaded, builtin, "{name}");
    }
}

#[test]
fn energy_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.json");
    let e = SurrogateEnergy::new(vec![-0.1, 3.3], vec![0.25, 1.75], 0.3, -2.0, 5.5).unwrap();
    write_energy(&path, &e).unwrap();
    assert_eq!(read_energy(&path).unwrap(), e);
}
