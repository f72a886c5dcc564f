//! Loss, gradients and the optimizer for the conditional model.

use serde::{Deserialize, Serialize};

use super::ops::{DensityDivergence, DivergenceNode, MassMisfit, TargetMeasure};
use super::{forward_on_tape, partition_queries, ModelConfig, ModelContext, ParamSet, PartitionQueries};
use crate::autodiff::{Mat, Tape, Var};
use crate::forward::SampleTriple;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Mat]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.tensors.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (x, gi)) in p.iter_mut().zip(g.iter()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                *x -= self.lr * (m[i] / b1t) / ((v[i] / b2t).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Mean over the samples whose forward solve converged.
    pub total: f64,
    pub field: f64,
    pub transport: f64,
    pub used: usize,
    pub excluded: usize,
    pub newton_mean: f64,
    pub newton_max: usize,
    /// Samples whose predicted density hit the degeneracy floor.
    pub degenerate: usize,
}

/// Loss nodes for one sample. `None` when the forward solve failed.
fn sample_loss<'a>(
    tape: &mut Tape<'a>,
    pv: &super::ParamVars,
    params: &ParamSet,
    queries: PartitionQueries,
    ctx: &'a ModelContext,
    sample: &SampleTriple,
    target: &'a TargetMeasure,
    field_weight: f64,
    cfg: &ModelConfig,
) -> crate::Result<Option<(Var, f64, f64, usize, bool)>> {
    let nodes = forward_on_tape(tape, pv, params, queries, ctx, &sample.observation, cfg)?;
    let (Some(u), Ok(state)) = (nodes.u, &nodes.solve) else {
        return Ok(None);
    };
    let iters = state.iterations;
    let wt = tape.transpose(nodes.w);
    let field = tape.matmul(wt, u);
    let mis = MassMisfit { m: &ctx.fc.m0, target: sample.field.clone(), scale: field_weight };
    let fv = mis.forward(tape.value(field));
    let field_loss = tape.custom(&[field], fv, Box::new(mis));
    let fine = tape.matmul(wt, nodes.fhat);
    let div = DensityDivergence { lumped: &ctx.fc.lumped, target, cache: &ctx.transport };
    let ev = div.eval(tape.value(fine));
    let degenerate = ev.result.is_none();
    let sv = Mat::from_element(1, 1, ev.value);
    let ot = tape.custom(&[fine], sv, Box::new(DivergenceNode { lumped: &ctx.fc.lumped, eval: ev }));
    let ot_w = tape.scale(ot, cfg.lambda_ot);
    let total = tape.add(field_loss, ot_w);
    let (f, t) = (tape.scalar_value(field_loss), tape.scalar_value(ot));
    Ok(Some((total, f, t, iters, degenerate)))
}

/// Inverse mean of `‖u‖²_{M0}` over `samples`.
pub fn default_field_weight(ctx: &ModelContext, samples: &[&SampleTriple]) -> f64 {
    let m: f64 = samples.iter().map(|s| ctx.fc.inner0(&s.field, &s.field)).sum::<f64>() / samples.len().max(1) as f64;
    if m > 0.0 {
        1.0 / m
    } else {
        1.0
    }
}

/// Least-squares amplitude `s` minimizing `Σ‖s·g − u‖²_{M0}` over `samples`,
/// where `g` is the field predicted with unit source scale.
pub fn calibrate_source_scale(params: &ParamSet, ctx: &ModelContext, samples: &[&SampleTriple], cfg: &ModelConfig) -> crate::Result<f64> {
    let unit = ModelConfig { source_scale: Some(1.0), ..cfg.clone() };
    let (mut num, mut den) = (0.0, 0.0);
    for s in samples {
        let b = super::cnwf_forward(&s.observation, params, ctx, &unit)?;
        if let Some(g) = b.field() {
            num += ctx.fc.inner0(&g, &s.field);
            den += ctx.fc.inner0(&g, &g);
        }
    }
    Ok(if num > 0.0 && den > 0.0 { num / den } else { 1.0 })
}

/// Fills the data-dependent settings left unset in `cfg`.
pub fn resolve_config(params: &ParamSet, ctx: &ModelContext, samples: &[&SampleTriple], cfg: &ModelConfig) -> crate::Result<ModelConfig> {
    let mut out = cfg.clone();
    if out.field_weight.is_none() {
        out.field_weight = Some(default_field_weight(ctx, samples));
    }
    if out.source_scale.is_none() {
        out.source_scale = Some(calibrate_source_scale(params, ctx, samples, cfg)?);
    }
    Ok(out)
}

/// Batch-mean loss and its gradient with respect to every parameter tensor.
pub fn loss_and_grad(
    params: &ParamSet,
    ctx: &ModelContext,
    batch: &[&SampleTriple],
    cfg: &ModelConfig,
) -> crate::Result<(LossBreakdown, Vec<Mat>)> {
    let field_weight = cfg.field_weight.unwrap_or_else(|| default_field_weight(ctx, batch));
    let targets: Vec<TargetMeasure> = batch.iter().map(|s| TargetMeasure::from_density(ctx.fc, &s.source)).collect();
    let mut tape = Tape::new();
    let pv = params.leaves(&mut tape);
    let queries = partition_queries(&mut tape, &pv, ctx);
    let mut lb = LossBreakdown::default();
    let mut totals = Vec::new();
    let mut iters = 0usize;
    for (s, t) in batch.iter().zip(&targets) {
        match sample_loss(&mut tape, &pv, params, queries, ctx, s, t, field_weight, cfg)? {
            Some((node, f, o, it, deg)) => {
                totals.push(node);
                lb.field += f;
                lb.transport += o;
                iters += it;
                lb.newton_max = lb.newton_max.max(it);
                lb.degenerate += deg as usize;
            }
            None => lb.excluded += 1,
        }
    }
    lb.used = totals.len();
    if totals.is_empty() {
        log::warn!("all {} samples in the batch failed to converge; step skipped", batch.len());
        let zeros = params.tensors.iter().map(|t| Mat::zeros(t.nrows(), t.ncols())).collect();
        return Ok((lb, zeros));
    }
    if lb.excluded > 0 {
        log::info!("{} of {} samples excluded (non-converged solve)", lb.excluded, batch.len());
    }
    let n = totals.len() as f64;
    let stacked = tape.concat_rows(&totals);
    let sum = tape.sum(stacked);
    let mean = tape.scale(sum, 1.0 / n);
    lb.total = tape.scalar_value(mean);
    lb.field /= n;
    lb.transport /= n;
    lb.newton_mean = iters as f64 / n;
    let grads = tape.backward(mean);
    let g = pv.vars.iter().map(|&v| grads.get_or_zero(&tape, v)).collect();
    Ok((lb, g))
}

/// Batch loss without gradients.
pub fn batch_loss(params: &ParamSet, ctx: &ModelContext, batch: &[&SampleTriple], cfg: &ModelConfig) -> crate::Result<LossBreakdown> {
    Ok(loss_and_grad(params, ctx, batch, cfg)?.0)
}

/// Rescale `grads` so their joint norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Mat], max_norm: f64) -> f64 {
    let n = grads.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
    if n > max_norm && n.is_finite() {
        let s = max_norm / n;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    n
}

/// One optimizer update on a batch.
pub fn training_step(
    params: &mut ParamSet,
    opt: &mut Adam,
    ctx: &ModelContext,
    batch: &[&SampleTriple],
    cfg: &ModelConfig,
) -> crate::Result<LossBreakdown> {
    let (lb, mut grads) = loss_and_grad(params, ctx, batch, cfg)?;
    if let Some(c) = cfg.grad_clip {
        clip_global_norm(&mut grads, c);
    }
    if lb.used > 0 {
        opt.step(params, &grads);
    }
    Ok(lb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feec::FineComplex;
    use crate::forward::{generate_dataset, DatasetConfig};
    use crate::mesh::generate_disk_mesh;
    use crate::model::init_params;
    use crate::rom::NewtonOptions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_matches_finite_differences_on_random_slices() {
        let mesh = generate_disk_mesh(1.0, 0.2).unwrap();
        let fc = FineComplex::assemble(&mesh).unwrap();
        let cfg = ModelConfig {
            flux_gain: 0.5,
            ot_max_iter: 5000,
            newton: NewtonOptions { tol: 1e-12, max_iter: 60, ..Default::default() },
            ..Default::default()
        };
        let ctx = ModelContext::new(&mesh, &fc, &cfg).unwrap();
        let params = init_params(&cfg, 11);
        let data = generate_dataset(&mesh, &fc, &DatasetConfig { capacity: 2, ..Default::default() }, 3).unwrap();
        let batch: Vec<&SampleTriple> = data.samples.iter().collect();
        let (_, grads) = loss_and_grad(&params, &ctx, &batch, &cfg).unwrap();
        let flat_g: Vec<f64> = grads.iter().flat_map(|g| g.iter().copied()).collect();
        let x0 = params.flatten();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 1e-5;
        for _ in 0..3 {
            // random 10-parameter slice
            let mut dir = vec![0.0; x0.len()];
            for _ in 0..10 {
                dir[rng.random_range(0..x0.len())] = rng.random_range(-1.0..1.0);
            }
            let eval = |s: f64| {
                let mut p = params.clone();
                let x: Vec<f64> = x0.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
                p.unflatten(&x);
                batch_loss(&p, &ctx, &batch, &cfg).unwrap().total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let ad: f64 = flat_g.iter().zip(&dir).map(|(g, d)| g * d).sum();
            assert!((fd - ad).abs() <= 1e-4 * fd.abs().max(ad.abs()).max(1e-8), "fd {fd} vs ad {ad}");
        }
    }

    #[test]
    fn perfect_field_has_zero_field_gradient() {
        let mesh = generate_disk_mesh(1.0, 0.15).unwrap();
        let fc = FineComplex::assemble(&mesh).unwrap();
        let cfg = ModelConfig { lambda_ot: 0.0, ..Default::default() };
        let ctx = ModelContext::new(&mesh, &fc, &cfg).unwrap();
        let params = init_params(&cfg, 13);
        let data = generate_dataset(&mesh, &fc, &DatasetConfig { capacity: 1, ..Default::default() }, 4).unwrap();
        // replace the target field with the model's own prediction
        let mut s = data.samples[0].clone();
        let b = crate::model::cnwf_forward(&s.observation, &params, &ctx, &cfg).unwrap();
        s.field = b.field().unwrap();
        let (lb, grads) = loss_and_grad(&params, &ctx, &[&s], &cfg).unwrap();
        assert!(lb.field < 1e-20);
        assert!(grads.iter().all(|g| g.amax() < 1e-9));
    }

    #[test]
    fn loss_decreases_on_tiny_dataset() {
        let mesh = generate_disk_mesh(1.0, 0.2).unwrap();
        let fc = FineComplex::assemble(&mesh).unwrap();
        let cfg = ModelConfig::default();
        let ctx = ModelContext::new(&mesh, &fc, &cfg).unwrap();
        let mut params = init_params(&cfg, 14);
        let data = generate_dataset(&mesh, &fc, &DatasetConfig { capacity: 4, ..Default::default() }, 5).unwrap();
        let batch: Vec<&SampleTriple> = data.samples.iter().collect();
        let mut opt = Adam::new(&params, 1e-3);
        let first = training_step(&mut params, &mut opt, &ctx, &batch, &cfg).unwrap().total;
        for _ in 0..49 {
            training_step(&mut params, &mut opt, &ctx, &batch, &cfg).unwrap();
        }
        let last = batch_loss(&params, &ctx, &batch, &cfg).unwrap().total;
        assert!(last < first, "{last} !< {first}");
    }
}
