use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use relate::config::RunConfig;
use relate::graph::{build_graph, NodeRef};
use relate::sampler::{check_temporal, sample_subgraph};
use relate::schema::{load_database, parse_manifest};
use relate::synth::{generate_synthetic_db, SyntheticDbSpec};
use relate::train::{train, Setup, TrainConfig};
use relate::ParameterStore;

#[test]
fn written_database_loads_back_identically() {
    let (db, _) = generate_synthetic_db(&SyntheticDbSpec { users: 40, products: 12, ..SyntheticDbSpec::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    db.write_dir(dir.path()).unwrap();
    let back = load_database(&parse_manifest(dir.path().join("schema.json")).unwrap(), dir.path()).unwrap();
    assert_eq!(back.manifest, db.manifest);
    for (a, b) in db.tables.iter().zip(&back.tables) {
        assert_eq!(a.rows, b.rows, "table {}", a.name());
    }
}

#[test]
fn sampled_subgraphs_respect_seed_time() {
    let (db, tasks) = generate_synthetic_db(&SyntheticDbSpec::default()).unwrap();
    let g = build_graph(&db);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = TrainConfig::default().sampler;
    for task in &tasks {
        let t = task.target_index(&db).unwrap();
        for row in (0..db.tables[t].len()).step_by(17) {
            let node = NodeRef::new(t, row);
            let cutoff = g.time(node).or(task.seed_time);
            let sub = sample_subgraph(&g, node, cutoff, &cfg, &mut rng);
            check_temporal(&g, &sub).unwrap();
            assert_eq!(sub.nodes[0], node);
        }
    }
}

#[test]
fn saved_model_reproduces_predictions() {
    let mut cfg = RunConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/train_relate.json")).unwrap();
    cfg.train.epochs = 1;
    let (db, tasks) = cfg.database().unwrap();
    let g = build_graph(&db);
    let enc = cfg.build_encoder(&db.manifest, cfg.tokens().unwrap()).unwrap();
    let task = &tasks[0];
    let data = task.prepare(&db, cfg.seed).unwrap();
    let setup = Setup::new(&db, &g, enc.as_node_encoder(), &cfg.train, task).unwrap();
    let model = train(&setup, task, &data, cfg.seed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    model.store.save(&path).unwrap();
    let back = ParameterStore::load(&path).unwrap();
    let rows: Vec<usize> = data.test.iter().map(|(r, _)| *r).collect();
    let a = setup.predict(&model.store, &rows, 9).unwrap();
    let b = setup.predict(&back, &rows, 9).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|p| p.is_finite()));
}
