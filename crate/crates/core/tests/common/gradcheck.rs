//! Finite-difference gradient harness over the toy world, shared between
//! the gradient suite and the acceptance suite.

use dnmdr_core::dynamic::snapshot::GraphOptions;
use dnmdr_core::model::forward::{parameter_gradients, patient_forward, ModelAssets};
use dnmdr_core::model::layout::build_model;
use dnmdr_core::model::{LossWeights, ModelConfig, ModelLayout};
use dnmdr_core::nn::check::{central_difference, relative_error};
use dnmdr_core::nn::{ParamStore, Tape};
use ndarray::Array2;
use rand::Rng;

use super::ToyWorld;

pub struct GradCase {
    pub world: ToyWorld,
    pub cfg: ModelConfig,
    pub layout: ModelLayout,
    pub store: ParamStore,
    pub weights: LossWeights,
}

impl GradCase {
    pub fn new(cfg: ModelConfig, world: ToyWorld) -> GradCase {
        let (store, layout) = build_model(&cfg, world.sizes, 1234);
        // All three loss components on, so every path carries gradient.
        let weights = LossWeights { alpha: 0.95, beta: 0.05, gamma: 0.5 };
        GradCase { world, cfg, layout, store, weights }
    }

    fn options(&self) -> GraphOptions {
        GraphOptions { flip_denominator: false, uniform_adjacency: self.cfg.ablation.prob }
    }

    pub fn loss(&self, store: &ParamStore) -> f64 {
        let network = self.world.network_for(0, self.options());
        let meds = self.world.med_multihots(0);
        let mut tape = Tape::new();
        let assets = ModelAssets {
            cfg: &self.cfg,
            store,
            layout: &self.layout,
            molecule_plans: &self.world.plans,
            a_ehr: &self.world.a_ehr,
            a_ddi: &self.world.a_ddi,
        };
        let out =
            patient_forward(&mut tape, &assets, &network, &meds, self.weights, false, None, false)
                .unwrap();
        tape.scalar(out.loss.total)
    }

    pub fn analytic_gradients(&self) -> Vec<Option<Array2<f64>>> {
        let network = self.world.network_for(0, self.options());
        let meds = self.world.med_multihots(0);
        let mut tape = Tape::new();
        let assets = ModelAssets {
            cfg: &self.cfg,
            store: &self.store,
            layout: &self.layout,
            molecule_plans: &self.world.plans,
            a_ehr: &self.world.a_ehr,
            a_ddi: &self.world.a_ddi,
        };
        let out = patient_forward(
            &mut tape,
            &assets,
            &network,
            &meds,
            self.weights,
            false,
            None,
            false,
        )
        .unwrap();
        let grads = tape.backward(out.loss.total);
        parameter_gradients(&tape, &grads, &out.vars)
    }

    /// Max relative error over sampled entries of every parameter group,
    /// with the per-group breakdown.
    pub fn check_all(&self, eps: f64, samples_per_group: usize) -> (f64, Vec<(String, f64)>) {
        let analytic = self.analytic_gradients();
        let mut rng = dnmdr_core::util::seeded_rng(99, 0);
        let mut per_group = Vec::new();
        let mut worst = 0.0f64;
        for (idx, (name, value)) in self.store.iter().enumerate() {
            let (rows, cols) = value.dim();
            let total = rows * cols;
            let mut entries: Vec<(usize, usize)> = Vec::new();
            if total <= samples_per_group {
                for r in 0..rows {
                    for c in 0..cols {
                        entries.push((r, c));
                    }
                }
            } else {
                while entries.len() < samples_per_group {
                    let e = (rng.random_range(0..rows), rng.random_range(0..cols));
                    if !entries.contains(&e) {
                        entries.push(e);
                    }
                }
            }
            let mut group_worst = 0.0f64;
            for (r, c) in entries {
                let a = analytic[idx].as_ref().map_or(0.0, |g| g[(r, c)]);
                let fd = central_difference(eps, |delta| {
                    let mut store = self.store.clone();
                    store.values_mut()[idx][(r, c)] += delta;
                    self.loss(&store)
                });
                let err = relative_error(a, fd, 1e-4);
                group_worst = group_worst.max(err);
            }
            worst = worst.max(group_worst);
            per_group.push((name.to_string(), group_worst));
        }
        (worst, per_group)
    }
}
