//! Parameter registration: one flat store plus typed id handles.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ehr::smiles::{BondKind, ATOM_ELEMENTS};
use crate::nn::{ParamId, ParamStore};
use crate::util::seeded_rng;

use super::config::ModelConfig;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AffineIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GateIds {
    pub input_map: ParamId,
    pub hidden_map: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GruIds {
    pub update: GateIds,
    pub reset: GateIds,
    pub candidate: GateIds,
}

/// One attention head: a square transform and the split attention vector.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GatHeadIds {
    pub weight: ParamId,
    pub attn: ParamId,
}

/// Drug-graph attention layer: one head set per layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatLayerIds {
    pub heads: Vec<GatHeadIds>,
}

/// Patient-side evolving layer: the transform matrix is *not* a parameter
/// (it starts at all-ones and is advanced by the cell), only the attention
/// vectors and the cell's four gate maps are trained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolveLayerIds {
    pub attn: Vec<ParamId>,
    pub input_gate: AffineIds,
    pub forget_gate: AffineIds,
    pub output_gate: AffineIds,
    pub candidate: AffineIds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpnnIds {
    pub atom_table: ParamId,
    /// One message matrix per bond kind, indexed by [`BondKind::id`].
    pub bond_mats: Vec<ParamId>,
    pub update: AffineIds,
    /// Shared row for medications without a parsable molecule.
    pub fallback: ParamId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelLayout {
    pub diag_table: ParamId,
    pub proc_table: ParamId,
    pub med_table: ParamId,
    pub evolve_layers: Vec<EvolveLayerIds>,
    pub gru_diag: GruIds,
    pub gru_proc: GruIds,
    pub gru_med: GruIds,
    pub query: AffineIds,
    pub mpnn: MpnnIds,
    pub ehr_gat: Vec<GatLayerIds>,
    pub ddi_gat: Vec<GatLayerIds>,
    pub fuse: ParamId,
    pub output: AffineIds,
}

/// Vocabulary sizes fixing every table shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub diag: usize,
    pub proc: usize,
    pub med: usize,
}

fn affine(
    store: &mut ParamStore,
    name: &str,
    out_dim: usize,
    in_dim: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> AffineIds {
    AffineIds {
        weight: store.register_uniform(&format!("{name}.w"), out_dim, in_dim, dim, rng),
        bias: store.register_zeros(&format!("{name}.b"), out_dim, 1),
    }
}

fn gate(store: &mut ParamStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> GateIds {
    GateIds {
        input_map: store.register_uniform(&format!("{name}.x"), dim, dim, dim, rng),
        hidden_map: store.register_uniform(&format!("{name}.h"), dim, dim, dim, rng),
        bias: store.register_zeros(&format!("{name}.b"), dim, 1),
    }
}

fn gru(store: &mut ParamStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> GruIds {
    GruIds {
        update: gate(store, &format!("{name}.update"), dim, rng),
        reset: gate(store, &format!("{name}.reset"), dim, rng),
        candidate: gate(store, &format!("{name}.cand"), dim, rng),
    }
}

fn gat_stack(
    store: &mut ParamStore,
    name: &str,
    layers: usize,
    heads: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<GatLayerIds> {
    (0..layers)
        .map(|l| GatLayerIds {
            heads: (0..heads)
                .map(|h| GatHeadIds {
                    weight: store.register_uniform(&format!("{name}.{l}.{h}.w"), dim, dim, dim, rng),
                    attn: store.register_uniform(&format!("{name}.{l}.{h}.a"), 2 * dim, 1, dim, rng),
                })
                .collect(),
        })
        .collect()
}

/// Register every trainable parameter. Initialization is symmetric uniform
/// scaled by `1/sqrt(dim)`; biases start at zero.
pub fn build_model(cfg: &ModelConfig, sizes: VocabSizes, seed: u64) -> (ParamStore, ModelLayout) {
    let mut rng = seeded_rng(seed, 400);
    let mut store = ParamStore::new();
    let dim = cfg.dim;

    let diag_table = store.register_uniform("embed.diag", sizes.diag, dim, dim, &mut rng);
    let proc_table = store.register_uniform("embed.proc", sizes.proc, dim, dim, &mut rng);
    let med_table = store.register_uniform("embed.med", sizes.med, dim, dim, &mut rng);

    let evolve_layers = (0..cfg.gat_layers)
        .map(|l| EvolveLayerIds {
            attn: (0..cfg.heads)
                .map(|h| store.register_uniform(&format!("evolve.{l}.{h}.a"), 2 * dim, 1, dim, &mut rng))
                .collect(),
            input_gate: affine(&mut store, &format!("evolve.{l}.input"), dim, dim, dim, &mut rng),
            forget_gate: affine(&mut store, &format!("evolve.{l}.forget"), dim, dim, dim, &mut rng),
            output_gate: affine(&mut store, &format!("evolve.{l}.output"), dim, dim, dim, &mut rng),
            candidate: affine(&mut store, &format!("evolve.{l}.cand"), dim, dim, dim, &mut rng),
        })
        .collect();

    let gru_diag = gru(&mut store, "gru.diag", dim, &mut rng);
    let gru_proc = gru(&mut store, "gru.proc", dim, &mut rng);
    let gru_med = gru(&mut store, "gru.med", dim, &mut rng);

    let query = affine(&mut store, "query", dim, 2 * dim, dim, &mut rng);

    let mpnn = MpnnIds {
        atom_table: store.register_uniform("mpnn.atoms", ATOM_ELEMENTS.len(), dim, dim, &mut rng),
        bond_mats: (0..BondKind::COUNT)
            .map(|b| store.register_uniform(&format!("mpnn.bond.{b}"), dim, dim, dim, &mut rng))
            .collect(),
        update: affine(&mut store, "mpnn.update", dim, 2 * dim, dim, &mut rng),
        fallback: store.register_uniform("mpnn.fallback", 1, dim, dim, &mut rng),
    };

    // Drug graphs use the conventional two-layer depth.
    let ehr_gat = gat_stack(&mut store, "gat.ehr", 2, cfg.heads, dim, &mut rng);
    let ddi_gat = gat_stack(&mut store, "gat.ddi", 2, cfg.heads, dim, &mut rng);
    let fuse = store.register_uniform("fuse.w", dim, dim, dim, &mut rng);

    let output = affine(&mut store, "out", sizes.med, 4 * dim, dim, &mut rng);

    let layout = ModelLayout {
        diag_table,
        proc_table,
        med_table,
        evolve_layers,
        gru_diag,
        gru_proc,
        gru_med,
        query,
        mpnn,
        ehr_gat,
        ddi_gat,
        fuse,
        output,
    };
    (store, layout)
}
