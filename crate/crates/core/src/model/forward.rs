//! Per-patient forward pass: drug memories, visit-by-visit encoding,
//! readouts, prediction and loss accumulation on one tape.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dynamic::snapshot::DynamicNetwork;
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tape, Var};

use super::config::ModelConfig;
use super::drugs::{
    build_drug_memory, drug_graph_attention, fuse_drug_views, KeyValueMemory, MoleculePlan,
};
use super::encoder::{
    embed_snapshot, encode_snapshot, evolve_state_init, evolve_weights, gru_step, leaf_params,
    patient_query, pool_by_type, ModelVars,
};
use super::layout::ModelLayout;
use super::predictor::{
    attention_readout, bce_loss, ddi_loss, hinge_loss, history_readout, predict_probs, total_loss,
    LossBreakdown, LossVars, LossWeights,
};

/// Everything the forward pass reads but does not own.
pub struct ModelAssets<'a> {
    pub cfg: &'a ModelConfig,
    pub store: &'a ParamStore,
    pub layout: &'a ModelLayout,
    pub molecule_plans: &'a [Option<MoleculePlan>],
    pub a_ehr: &'a Array2<f64>,
    pub a_ddi: &'a Array2<f64>,
}

/// Structural evidence collected during a forward pass, used by the
/// ablation harness to verify architecture differences.
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    /// Snapshot adjacencies in visit order.
    pub adjacencies: Vec<Array2<f64>>,
    /// Evolved transform values per visit, per layer.
    pub evolved_weights: Vec<Vec<Array2<f64>>>,
    /// Whether the molecular memory came from message passing (vs. the raw
    /// medication table).
    pub molecular_memory_from_mpnn: bool,
    /// Whether the drug-pair graphs and fusion produced the second memory
    /// (vs. reusing the molecular one).
    pub fused_memory_used: bool,
    /// Whether snapshot attention ran at all (false when bypassed).
    pub snapshot_encoder_used: bool,
}

pub struct PatientForwardOut {
    pub vars: ModelVars,
    /// One `(|M|, 1)` probability node per visit.
    pub visit_probs: Vec<Var>,
    pub loss: LossVars,
    pub breakdown: LossBreakdown,
    pub trace: Option<ForwardTrace>,
}

fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rate: f64) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.random_range(0.0..1.0) < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

/// Both drug memories for this step: the molecular view and the memory the
/// readouts score against (fused, unless ablated back to molecular).
pub fn drug_memories(
    tape: &mut Tape,
    vars: &ModelVars,
    assets: &ModelAssets,
    trace: Option<&mut ForwardTrace>,
) -> Result<(Var, Var)> {
    let cfg = assets.cfg;
    let layout = assets.layout;
    let molecular = if cfg.ablation.internal {
        vars.of(layout.med_table)
    } else {
        let (mem, _missing) =
            build_drug_memory(tape, vars, &layout.mpnn, assets.molecule_plans, cfg.mpnn_rounds);
        mem
    };
    let fused = if cfg.ablation.interactive {
        molecular
    } else {
        let e_ehr = drug_graph_attention(tape, vars, &layout.ehr_gat, molecular, assets.a_ehr, cfg);
        let e_ddi = drug_graph_attention(tape, vars, &layout.ddi_gat, molecular, assets.a_ddi, cfg);
        fuse_drug_views(tape, e_ehr, e_ddi, vars.of(layout.fuse))?
    };
    if let Some(t) = trace {
        t.molecular_memory_from_mpnn = !cfg.ablation.internal;
        t.fused_memory_used = !cfg.ablation.interactive;
    }
    Ok((molecular, fused))
}

/// Run the full model over one patient's dynamic network.
///
/// `medication_multihots[t]` is visit `t`'s actual prescription over the
/// medication vocabulary: the training target at `t` and the history-memory
/// value for later visits.
pub fn patient_forward(
    tape: &mut Tape,
    assets: &ModelAssets,
    network: &DynamicNetwork,
    medication_multihots: &[Vec<f64>],
    weights: LossWeights,
    training: bool,
    dropout_rng: Option<&mut ChaCha8Rng>,
    collect_trace: bool,
) -> Result<PatientForwardOut> {
    let cfg = assets.cfg;
    let layout = assets.layout;
    let visits = network.snapshots.len();
    if visits == 0 {
        return Err(Error::Data(format!("patient {:?} has no snapshots", network.patient_id)));
    }
    if medication_multihots.len() != visits {
        return Err(Error::Shape(format!(
            "expected {visits} medication vectors, got {}",
            medication_multihots.len()
        )));
    }

    let mut trace = collect_trace.then(ForwardTrace::default);
    let mut rng = dropout_rng;

    let vars = leaf_params(tape, assets.store);
    let (molecular_mem, fused_mem) = drug_memories(tape, &vars, assets, trace.as_mut())?;

    let dim = cfg.dim;
    let mut evolve_state = (!cfg.ablation.dynn).then(|| evolve_state_init(tape, cfg.gat_layers, dim));
    let mut h_diag = tape.zeros(dim, 1);
    let mut h_proc = tape.zeros(dim, 1);
    let mut h_med = tape.zeros(dim, 1);
    let mut kv = KeyValueMemory::new();

    let mut bce_terms: Vec<Var> = Vec::with_capacity(visits);
    let mut multi_terms: Vec<Var> = Vec::with_capacity(visits);
    let mut ddi_terms: Vec<Var> = Vec::with_capacity(visits);
    let mut visit_probs: Vec<Var> = Vec::with_capacity(visits);

    for (t, snapshot) in network.snapshots.iter().enumerate() {
        let mut h0 = embed_snapshot(tape, &vars, layout, &snapshot.nodes)?;
        if training && cfg.dropout > 0.0 {
            if let Some(r) = rng.as_deref_mut() {
                let (rows, cols) = tape.value(h0).dim();
                let mask = dropout_mask(r, rows, cols, cfg.dropout);
                h0 = tape.mul_const(h0, mask);
            }
        }

        let encoded = if cfg.ablation.dynn {
            // Bypass: pooled raw code embeddings feed the recurrent
            // encoders directly.
            h0
        } else {
            let state = evolve_state.as_mut().expect("state exists when not bypassed");
            let mut evolved: Vec<Var> = Vec::with_capacity(cfg.gat_layers);
            for (l, ids) in layout.evolve_layers.iter().enumerate() {
                if cfg.ablation.lstm {
                    evolved.push(state.per_layer[l].0);
                } else {
                    let (w_new, c_new) =
                        evolve_weights(tape, &vars, ids, state.per_layer[l].0, state.per_layer[l].1);
                    state.per_layer[l] = (w_new, c_new);
                    evolved.push(w_new);
                }
            }
            if let Some(tr) = trace.as_mut() {
                tr.snapshot_encoder_used = true;
                tr.adjacencies.push(snapshot.adjacency.clone());
                tr.evolved_weights
                    .push(evolved.iter().map(|&w| tape.value(w).clone()).collect());
            }
            // Inter-layer dropout only when explicitly enabled; the last
            // layer's output is never masked.
            let n_nodes = snapshot.nodes.len();
            let mut between_masks: Vec<Option<Array2<f64>>> = vec![None; cfg.gat_layers];
            if training && cfg.dropout_between_gat && cfg.dropout > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    for mask in between_masks.iter_mut().take(cfg.gat_layers.saturating_sub(1)) {
                        *mask = Some(dropout_mask(r, n_nodes, dim, cfg.dropout));
                    }
                }
            }
            encode_snapshot(tape, &vars, layout, cfg, snapshot, &evolved, h0, &between_masks)
        };

        let pooled = pool_by_type(tape, encoded, &snapshot.nodes, dim);
        h_diag = gru_step(tape, &vars, &layout.gru_diag, pooled.diag, h_diag);
        h_proc = gru_step(tape, &vars, &layout.gru_proc, pooled.proc, h_proc);
        if t > 0 {
            // The medication sequence lags one visit; an empty previous
            // prescription still contributes a zero element.
            let med_in = match pooled.med {
                Some(m) => m,
                None => tape.zeros(dim, 1),
            };
            h_med = gru_step(tape, &vars, &layout.gru_med, med_in, h_med);
        }
        let _ = h_med; // reserved: history values are the raw prescriptions

        let q = patient_query(tape, &vars, &layout.query, h_diag, h_proc, cfg.activation);

        let o_molecular = attention_readout(tape, molecular_mem, q);
        let o_fused = attention_readout(tape, fused_mem, q);
        let prev = (t > 0).then(|| medication_multihots[t - 1].as_slice());
        let o_history = history_readout(tape, fused_mem, &kv, q, cfg.kv_score, prev);

        let probs = predict_probs(tape, &vars, &layout.output, q, o_molecular, o_fused, o_history);
        visit_probs.push(probs);

        let truth = Array2::from_shape_vec(
            (medication_multihots[t].len(), 1),
            medication_multihots[t].clone(),
        )
        .map_err(|e| Error::Shape(e.to_string()))?;
        bce_terms.push(bce_loss(tape, probs, &truth));
        multi_terms.push(hinge_loss(tape, probs, &truth));
        ddi_terms.push(ddi_loss(tape, probs, assets.a_ddi));

        kv.append(q, medication_multihots[t].clone());
    }

    let mean = |tape: &mut Tape, terms: &[Var]| -> Var {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t);
        }
        tape.scale(acc, 1.0 / terms.len() as f64)
    };
    let bce = mean(tape, &bce_terms);
    let multi = mean(tape, &multi_terms);
    let ddi = mean(tape, &ddi_terms);
    let loss = total_loss(tape, bce, multi, ddi, weights);
    let breakdown = LossBreakdown {
        bce: tape.scalar(loss.bce),
        multi: tape.scalar(loss.multi),
        ddi: tape.scalar(loss.ddi),
        total: tape.scalar(loss.total),
    };

    Ok(PatientForwardOut { vars, visit_probs, loss, breakdown, trace })
}

/// Gradients aligned with the parameter store after a backward pass.
pub fn parameter_gradients(
    tape: &Tape,
    grads: &crate::nn::Gradients,
    vars: &ModelVars,
) -> Vec<Option<Array2<f64>>> {
    let _ = tape;
    vars.all().iter().map(|&v| grads.wrt(v).cloned()).collect()
}
