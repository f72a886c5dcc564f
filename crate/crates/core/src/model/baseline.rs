//! Direct-regression baselines: fine-mesh source densities predicted straight
//! from the observations, with no conservation law in between.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{DensityDivergence, DivergenceNode, SourceActivation, TargetMeasure};
use super::train::{clip_global_norm, Adam};
use super::{encode_on_tape, normalize_density, push_encoder, sensor_features, ModelConfig, ModelContext, ParamSet, N_FEATURES};
use crate::autodiff::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::feec::Cochain0;
use crate::forward::{ObservationSet, SampleTriple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Two hidden ReLU layers on the flattened sensor tuples. Only accepts
    /// the sensor count it was built for.
    Mlp,
    /// The permutation-invariant sensor encoder followed by one linear map.
    Encoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub hidden: usize,
    /// Sensor count of the MLP input layer.
    pub n_sensors: usize,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, n_sensors: usize) -> Self {
        Self { kind, hidden: 64, n_sensors }
    }
}

pub fn init_baseline(bcfg: &BaselineConfig, cfg: &ModelConfig, n_vertices: usize, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet { names: vec![], tensors: vec![] };
    match bcfg.kind {
        BaselineKind::Mlp => {
            p.push_dense("mlp.w1", bcfg.n_sensors * N_FEATURES, bcfg.hidden, 1.0, &mut rng);
            p.push_bias("mlp.b1", bcfg.hidden, 0.0);
            p.push_dense("mlp.w2", bcfg.hidden, bcfg.hidden, 1.0, &mut rng);
            p.push_bias("mlp.b2", bcfg.hidden, 0.0);
            p.push_dense("out.w", bcfg.hidden, n_vertices, 1.0, &mut rng);
        }
        BaselineKind::Encoder => {
            push_encoder(&mut p, cfg, &mut rng);
            p.push_dense("out.w", cfg.d_latent, n_vertices, 1.0, &mut rng);
        }
    }
    p.push_bias("out.b", n_vertices, 0.5);
    p
}

/// Unnormalized nonnegative fine source, `n0f × 1`.
fn forward_on_tape(
    tape: &mut Tape,
    pv: &super::ParamVars,
    ctx: &ModelContext,
    obs: &ObservationSet,
    cfg: &ModelConfig,
    bcfg: &BaselineConfig,
) -> Result<Var> {
    let x = sensor_features(obs, ctx, cfg)?;
    let h = match bcfg.kind {
        BaselineKind::Mlp => {
            if obs.len() != bcfg.n_sensors {
                return Err(Error::Argument(format!("MLP baseline expects {} sensors, got {}", bcfg.n_sensors, obs.len())));
            }
            // row-major flattening keeps each sensor tuple contiguous
            let flat = Mat::from_row_slice(1, x.len(), x.transpose().as_slice());
            let v = tape.leaf(flat);
            let h = tape.affine(v, pv.get("mlp.w1"), pv.get("mlp.b1"));
            let h = tape.relu(h);
            let h = tape.affine(h, pv.get("mlp.w2"), pv.get("mlp.b2"));
            tape.relu(h)
        }
        BaselineKind::Encoder => encode_on_tape(tape, pv, x, cfg),
    };
    let o = tape.affine(h, pv.get("out.w"), pv.get("out.b"));
    let act = SourceActivation { mask: vec![true; ctx.mesh.n_vertices()] };
    let ov = act.forward(tape.value(o));
    let o = tape.custom(&[o], ov, Box::new(act));
    Ok(tape.transpose(o))
}

/// Unit-integral density and the degeneracy flag.
pub fn baseline_predict(
    obs: &ObservationSet,
    params: &ParamSet,
    ctx: &ModelContext,
    cfg: &ModelConfig,
    bcfg: &BaselineConfig,
) -> Result<(Cochain0, bool)> {
    let mut tape = Tape::new();
    let pv = params.leaves(&mut tape);
    let f = forward_on_tape(&mut tape, &pv, ctx, obs, cfg, bcfg)?;
    let fine: Vec<f64> = tape.value(f).iter().copied().collect();
    normalize_density(&fine, ctx.mesh, ctx.fc)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineLoss {
    pub transport: f64,
    pub degenerate: usize,
}

/// Batch-mean debiased Sinkhorn loss against the true densities.
pub fn baseline_loss_and_grad(
    params: &ParamSet,
    ctx: &ModelContext,
    batch: &[&SampleTriple],
    cfg: &ModelConfig,
    bcfg: &BaselineConfig,
) -> Result<(BaselineLoss, Vec<Mat>)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let targets: Vec<TargetMeasure> = batch.iter().map(|s| TargetMeasure::from_density(ctx.fc, &s.source)).collect();
    let mut tape = Tape::new();
    let pv = params.leaves(&mut tape);
    let mut out = BaselineLoss::default();
    let mut terms = Vec::with_capacity(batch.len());
    for (s, t) in batch.iter().zip(&targets) {
        let f = forward_on_tape(&mut tape, &pv, ctx, &s.observation, cfg, bcfg)?;
        let div = DensityDivergence { lumped: &ctx.fc.lumped, target: t, cache: &ctx.transport };
        let ev = div.eval(tape.value(f));
        out.degenerate += ev.result.is_none() as usize;
        out.transport += ev.value;
        let v = Mat::from_element(1, 1, ev.value);
        terms.push(tape.custom(&[f], v, Box::new(DivergenceNode { lumped: &ctx.fc.lumped, eval: ev })));
    }
    let n = batch.len() as f64;
    out.transport /= n;
    let stacked = tape.concat_rows(&terms);
    let sum = tape.sum(stacked);
    let mean = tape.scale(sum, cfg.lambda_ot / n);
    let grads = tape.backward(mean);
    Ok((out, pv.vars.iter().map(|&v| grads.get_or_zero(&tape, v)).collect()))
}

pub fn baseline_training_step(
    params: &mut ParamSet,
    opt: &mut Adam,
    ctx: &ModelContext,
    batch: &[&SampleTriple],
    cfg: &ModelConfig,
    bcfg: &BaselineConfig,
) -> Result<BaselineLoss> {
    let (loss, mut grads) = baseline_loss_and_grad(params, ctx, batch, cfg, bcfg)?;
    if let Some(c) = cfg.grad_clip {
        clip_global_norm(&mut grads, c);
    }
    opt.step(params, &grads);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feec::FineComplex;
    use crate::forward::{generate_dataset, DatasetConfig};
    use crate::mesh::generate_disk_mesh;

    #[test]
    fn outputs_are_densities_and_training_reduces_loss() {
        let mesh = generate_disk_mesh(1.0, 0.2).unwrap();
        let fc = FineComplex::assemble(&mesh).unwrap();
        let cfg = ModelConfig::default();
        let ctx = ModelContext::new(&mesh, &fc, &cfg).unwrap();
        let data = generate_dataset(&mesh, &fc, &DatasetConfig { capacity: 4, ..Default::default() }, 7).unwrap();
        let batch: Vec<&SampleTriple> = data.samples.iter().collect();
        for kind in [BaselineKind::Mlp, BaselineKind::Encoder] {
            let bcfg = BaselineConfig::new(kind, 5);
            let mut params = init_baseline(&bcfg, &cfg, mesh.n_vertices(), 3);
            let (rho, deg) = baseline_predict(&batch[0].observation, &params, &ctx, &cfg, &bcfg).unwrap();
            assert!(!deg && rho.iter().all(|&r| r >= 0.0));
            assert!((fc.integrate(&rho) - 1.0).abs() < 1e-10);
            let mut opt = Adam::new(&params, 1e-3);
            let first = baseline_training_step(&mut params, &mut opt, &ctx, &batch, &cfg, &bcfg).unwrap().transport;
            for _ in 0..30 {
                baseline_training_step(&mut params, &mut opt, &ctx, &batch, &cfg, &bcfg).unwrap();
            }
            let last = baseline_loss_and_grad(&params, &ctx, &batch, &cfg, &bcfg).unwrap().0.transport;
            assert!(last < first, "{kind:?}: {last} !< {first}");
        }
    }

    #[test]
    fn sensor_count_contracts() {
        let mesh = generate_disk_mesh(1.0, 0.15).unwrap();
        let fc = FineComplex::assemble(&mesh).unwrap();
        let cfg = ModelConfig::default();
        let ctx = ModelContext::new(&mesh, &fc, &cfg).unwrap();
        let data = generate_dataset(&mesh, &fc, &DatasetConfig { capacity: 1, ..Default::default() }, 8).unwrap();
        let mut obs = data.samples[0].observation.clone();
        obs.positions.pop();
        obs.u.pop();
        obs.v.pop();
        let mlp = BaselineConfig::new(BaselineKind::Mlp, 5);
        let p = init_baseline(&mlp, &cfg, mesh.n_vertices(), 1);
        assert!(matches!(baseline_predict(&obs, &p, &ctx, &cfg, &mlp), Err(Error::Argument(_))));
        let enc = BaselineConfig::new(BaselineKind::Encoder, 5);
        let p = init_baseline(&enc, &cfg, mesh.n_vertices(), 1);
        assert!(baseline_predict(&obs, &p, &ctx, &cfg, &enc).is_ok());
    }
}
