//! Structural equivalences of the component-removal variants, plus the
//! permutation-equivariance property of the snapshot encoder.

mod common;

use common::{toy_model_config, toy_world};
use dnmdr_core::dynamic::snapshot::{build_mask, GraphOptions, SnapshotGraph};
use dnmdr_core::model::forward::{drug_memories, patient_forward, ModelAssets};
use dnmdr_core::model::layout::build_model;
use dnmdr_core::model::{LossWeights, ModelConfig};
use dnmdr_core::nn::Tape;
use ndarray::Array2;

fn run_traced(
    cfg: &ModelConfig,
    world: &common::ToyWorld,
    seed: u64,
) -> dnmdr_core::model::ForwardTrace {
    let (store, layout) = build_model(cfg, world.sizes, seed);
    let options = GraphOptions { flip_denominator: false, uniform_adjacency: cfg.ablation.prob };
    let network = world.network_for(0, options);
    let meds = world.med_multihots(0);
    let mut tape = Tape::new();
    let assets = ModelAssets {
        cfg,
        store: &store,
        layout: &layout,
        molecule_plans: &world.plans,
        a_ehr: &world.a_ehr,
        a_ddi: &world.a_ddi,
    };
    patient_forward(
        &mut tape,
        &assets,
        &network,
        &meds,
        LossWeights::default(),
        false,
        None,
        true,
    )
    .unwrap()
    .trace
    .unwrap()
}

#[test]
fn frozen_evolution_keeps_initial_weights_everywhere() {
    let world = toy_world();
    let mut cfg = toy_model_config(8);
    cfg.ablation.lstm = true;
    let trace = run_traced(&cfg, &world, 5);
    assert_eq!(trace.evolved_weights.len(), 2, "one weight set per visit");
    for per_visit in &trace.evolved_weights {
        for w in per_visit {
            assert_eq!(w, &Array2::<f64>::ones((8, 8)), "weights must stay at the initial value");
        }
    }
}

#[test]
fn full_model_weights_change_between_visits() {
    let world = toy_world();
    let cfg = toy_model_config(8);
    let trace = run_traced(&cfg, &world, 5);
    assert_eq!(trace.evolved_weights.len(), 2);
    // Visit 1 weights differ from the all-ones start, and visit 2 differs
    // from visit 1 (the cell is non-degenerate under random init).
    let ones = Array2::<f64>::ones((8, 8));
    for l in 0..trace.evolved_weights[0].len() {
        assert_ne!(trace.evolved_weights[0][l], ones);
        assert_ne!(trace.evolved_weights[0][l], trace.evolved_weights[1][l]);
    }
}

#[test]
fn uniform_adjacency_variant_sees_all_ones() {
    let world = toy_world();
    let mut cfg = toy_model_config(8);
    cfg.ablation.prob = true;
    let trace = run_traced(&cfg, &world, 5);
    assert!(!trace.adjacencies.is_empty());
    for adj in &trace.adjacencies {
        let n = adj.nrows();
        assert_eq!(adj, &Array2::<f64>::ones((n, n)), "bit-exact all-ones adjacency");
    }
}

#[test]
fn bypass_variant_skips_the_snapshot_encoder() {
    let world = toy_world();
    let mut cfg = toy_model_config(8);
    cfg.ablation.dynn = true;
    let trace = run_traced(&cfg, &world, 5);
    assert!(!trace.snapshot_encoder_used);
    assert!(trace.adjacencies.is_empty());
    assert!(trace.evolved_weights.is_empty());
}

#[test]
fn internal_variant_reads_the_raw_medication_table() {
    let world = toy_world();
    let mut cfg = toy_model_config(8);
    cfg.ablation.internal = true;
    let (store, layout) = build_model(&cfg, world.sizes, 5);
    let mut tape = Tape::new();
    let vars = dnmdr_core::model::encoder::leaf_params(&mut tape, &store);
    let assets = ModelAssets {
        cfg: &cfg,
        store: &store,
        layout: &layout,
        molecule_plans: &world.plans,
        a_ehr: &world.a_ehr,
        a_ddi: &world.a_ddi,
    };
    let (molecular, _fused) = drug_memories(&mut tape, &vars, &assets, None).unwrap();
    assert_eq!(
        tape.value(molecular),
        store.get(layout.med_table),
        "molecular memory must be the embedding table itself"
    );
}

#[test]
fn interactive_variant_reuses_the_molecular_memory() {
    let world = toy_world();
    let mut cfg = toy_model_config(8);
    cfg.ablation.interactive = true;
    let (store, layout) = build_model(&cfg, world.sizes, 5);
    let mut tape = Tape::new();
    let vars = dnmdr_core::model::encoder::leaf_params(&mut tape, &store);
    let assets = ModelAssets {
        cfg: &cfg,
        store: &store,
        layout: &layout,
        molecule_plans: &world.plans,
        a_ehr: &world.a_ehr,
        a_ddi: &world.a_ddi,
    };
    let (molecular, fused) = drug_memories(&mut tape, &vars, &assets, None).unwrap();
    assert_eq!(molecular, fused, "the fused view must be the molecular memory node");
}

#[test]
fn single_visit_records_exactly_one_evolution() {
    let world = toy_world();
    let cfg = toy_model_config(8);
    // Patient 1 has a single visit.
    let (store, layout) = build_model(&cfg, world.sizes, 5);
    let network = world.network_for(1, GraphOptions::default());
    let meds = world.med_multihots(1);
    let mut tape = Tape::new();
    let assets = ModelAssets {
        cfg: &cfg,
        store: &store,
        layout: &layout,
        molecule_plans: &world.plans,
        a_ehr: &world.a_ehr,
        a_ddi: &world.a_ddi,
    };
    let out = patient_forward(
        &mut tape,
        &assets,
        &network,
        &meds,
        LossWeights::default(),
        false,
        None,
        true,
    )
    .unwrap();
    let trace = out.trace.unwrap();
    assert_eq!(trace.evolved_weights.len(), 1, "the initial weights evolve once");
    assert_ne!(trace.evolved_weights[0][0], Array2::<f64>::ones((8, 8)));
}

/// Permuting node order within a snapshot (adjacency, mask and weights
/// permuted accordingly) must leave the pooled vectors, and therefore the
/// prediction, exactly unchanged.
#[test]
fn node_permutation_leaves_predictions_identical() {
    let world = toy_world();
    let cfg = toy_model_config(8);
    let (store, layout) = build_model(&cfg, world.sizes, 5);
    let network = world.network_for(0, GraphOptions::default());
    let meds = world.med_multihots(0);

    // Permute the second snapshot's nodes with a fixed shuffle.
    let mut permuted = network.clone();
    let snap = &network.snapshots[1];
    let n = snap.nodes.len();
    let perm: Vec<usize> = (0..n).rev().collect();
    let mut adjacency = Array2::zeros((n, n));
    let mut weights = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            adjacency[(i, j)] = snap.adjacency[(perm[i], perm[j])];
            weights[(i, j)] = snap.weights[(perm[i], perm[j])];
        }
    }
    let nodes: Vec<_> = perm.iter().map(|&i| snap.nodes[i]).collect();
    let mask = build_mask(&nodes.iter().map(|nd| nd.node_type).collect::<Vec<_>>());
    permuted.snapshots[1] = SnapshotGraph { nodes, mask, weights, adjacency };
    permuted.snapshots[1].validate().unwrap();

    let run = |net: &dnmdr_core::dynamic::snapshot::DynamicNetwork| -> Vec<Array2<f64>> {
        let mut tape = Tape::new();
        let assets = ModelAssets {
            cfg: &cfg,
            store: &store,
            layout: &layout,
            molecule_plans: &world.plans,
            a_ehr: &world.a_ehr,
            a_ddi: &world.a_ddi,
        };
        let out = patient_forward(
            &mut tape,
            &assets,
            net,
            &meds,
            LossWeights::default(),
            false,
            None,
            false,
        )
        .unwrap();
        out.visit_probs.iter().map(|&v| tape.value(v).clone()).collect()
    };
    let base = run(&network);
    let shuffled = run(&permuted);
    for (a, b) in base.iter().zip(&shuffled) {
        assert_eq!(a, b, "predictions must be bit-identical under node permutation");
    }
}
