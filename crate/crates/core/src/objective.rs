//! One training step's loss and its gradient with respect to the adapter.
//!
//! The step re-ages photo `x_i` to `a_tgt` through the personalized path,
//! scores it with the forward terms, the personalized aging loss against
//! training photos near `a_tgt` and the adaptive W-norm penalty on the
//! decoded code, runs the cycle back to `a_i`, and optionally adds the
//! extrapolation penalty at a separately drawn age outside the training
//! range. The backward pass runs through the frozen decoder, encoder and
//! scoring networks into the adapter.

use crate::adapter::{AdapterNetwork, AdapterParams};
use crate::backends::BackendBundle;
use crate::config::AblationFlags;
use crate::data::{AgedPhotoCollection, Split};
use crate::error::Result;
use crate::latent::{AgeYears, IdentityEmbedding};
use crate::losses::{
    adaptive_wnorm_loss_grad, build_reference_set, extrapolation_regularization_grad, forward_terms_grad,
    personalized_aging_loss_grad, total_personalization_loss, LossReport, LossWeights, ReferenceSet, StepTerms,
};

/// The random choices of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSample {
    pub input_index: usize,
    pub input_age: AgeYears,
    pub target_age: AgeYears,
    /// Present when the extrapolation branch fires this step.
    pub extrapolation_age: Option<AgeYears>,
}

/// Fixed inputs shared by every step of a run.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub bundle: &'a BackendBundle,
    pub collection: &'a AgedPhotoCollection,
    /// Identity embedding of every record, in record order.
    pub embeddings: &'a [IdentityEmbedding],
    pub weights: LossWeights,
    pub flags: AblationFlags,
    pub reference_window: u32,
}

pub fn embed_collection(bundle: &BackendBundle, collection: &AgedPhotoCollection) -> Result<Vec<IdentityEmbedding>> {
    collection
        .images()
        .iter()
        .map(|img| Ok(bundle.embed_identity(img)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub report: LossReport,
    pub terms: StepTerms,
    /// Training photos used by the personalized aging loss.
    pub reference: ReferenceSet,
}

/// Loss of one step. When `grads` is given and the adapter is in use, its
/// gradient is accumulated there.
pub fn evaluate_step(
    ctx: &StepContext<'_>,
    net: Option<&AdapterNetwork>,
    sample: &StepSample,
    mut grads: Option<&mut AdapterParams>,
) -> Result<StepOutcome> {
    let b = ctx.bundle;
    let w = &ctx.weights;
    let flags = ctx.flags;
    let net = if flags.use_adapter { net } else { None };
    let want_grad = net.is_some() && grads.is_some();

    let x = ctx.collection.image(sample.input_index);
    let e_x = &ctx.embeddings[sample.input_index];
    let (a_i, a_t) = (sample.input_age, sample.target_age);

    // Personalized forward pass.
    let w_g = b.encode(x, a_t)?;
    let (w_c, trace) = match net {
        Some(n) => {
            let (offset, trace) = n.forward_traced(&w_g, a_t)?;
            (w_g.add(&offset)?, Some(trace))
        }
        None => (w_g, None),
    };
    let y = b.decode(&w_c)?;

    let (forward, g_fwd) = forward_terms_grad(b, &y, x, e_x, a_t, w, want_grad)?;
    let mut g_y = g_fwd;

    let reference = build_reference_set(ctx.collection, a_t, ctx.reference_window, Split::Train);
    let pers_age = if flags.use_personalized_aging_loss && !reference.is_empty() {
        let refs: Vec<IdentityEmbedding> = reference.indices.iter().map(|&i| ctx.embeddings[i].clone()).collect();
        let (v, g) = personalized_aging_loss_grad(b, &y, &refs, want_grad)?;
        if let (Some(acc), Some(g)) = (g_y.as_mut(), g) {
            acc.scaled_add(w.lambda_pers_age, &g);
        }
        Some(v)
    } else {
        None
    };

    // Cycle back to the input age through the same path.
    let w_g2 = b.encode(&y, a_i)?;
    let (w_c2, trace2) = match net {
        Some(n) => {
            let (offset, trace) = n.forward_traced(&w_g2, a_i)?;
            (w_g2.add(&offset)?, Some(trace))
        }
        None => (w_g2, None),
    };
    let y_cycle = b.decode(&w_c2)?;
    let (cycle, g_cycle) = forward_terms_grad(b, &y_cycle, x, e_x, a_i, w, want_grad)?;

    let wnorm = if flags.use_adaptive_wnorm {
        Some(adaptive_wnorm_loss_grad(&w_c, &b.mean_latent, a_i, a_t))
    } else {
        None
    };

    if let (Some(n), Some(grads)) = (net, grads.as_deref_mut()) {
        let g_y = g_y.as_mut().expect("gradient requested");
        let g_cycle = g_cycle.expect("gradient requested");
        let g_wc2 = b.decoder.decode_vjp(&w_c2, &g_cycle)?;
        let g_wg2 = g_wc2.clone() + n.backward(trace2.as_ref().expect("traced"), &g_wc2, grads);
        *g_y += &b.encoder.encode_vjp(&y, a_i, &g_wg2)?;

        let mut g_wc = b.decoder.decode_vjp(&w_c, g_y)?;
        if let Some((_, g)) = &wnorm {
            g_wc.scaled_add(w.lambda_reg, g);
        }
        n.backward(trace.as_ref().expect("traced"), &g_wc, grads);
    }

    let reg_extra = match sample.extrapolation_age {
        Some(a_e) if flags.use_extrapolation_reg => {
            let w_ge = b.encode(x, a_e)?;
            let y_global = b.decode(&w_ge)?;
            let e_global = b.embed_identity(&y_global)?;
            let (w_ce, trace_e) = match net {
                Some(n) => {
                    let (offset, trace) = n.forward_traced(&w_ge, a_e)?;
                    (w_ge.add(&offset)?, Some(trace))
                }
                None => (w_ge.clone(), None),
            };
            let y_pe = b.decode(&w_ce)?;
            let (v, g) = extrapolation_regularization_grad(b, &y_pe, &y_global, &e_global, w, want_grad)?;
            if let (Some(n), Some(grads), Some(g)) = (net, grads.as_deref_mut(), g) {
                let g_wce = b.decoder.decode_vjp(&w_ce, &(g * w.lambda_reg_extra))?;
                n.backward(trace_e.as_ref().expect("traced"), &g_wce, grads);
            }
            Some(v)
        }
        _ => None,
    };

    let terms = StepTerms {
        forward,
        cycle,
        pers_age,
        reg_extra,
        reg_wnorm: wnorm.map(|(v, _)| v),
    };
    Ok(StepOutcome {
        report: total_personalization_loss(&terms, w),
        terms,
        reference,
    })
}

/// Adapter-bypassed outputs of a step, used to check that a frozen run
/// reproduces the pure global loss.
pub fn global_step_loss(ctx: &StepContext<'_>, sample: &StepSample) -> Result<LossReport> {
    let frozen = StepContext {
        flags: AblationFlags {
            use_adapter: false,
            ..ctx.flags
        },
        ..*ctx
    };
    Ok(evaluate_step(&frozen, None, sample, None)?.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::AdapterShape;
    use crate::synth::{synthetic_collection, SyntheticSpec, ToyPerson};

    fn age(v: f64) -> AgeYears {
        AgeYears::new(v).unwrap()
    }

    struct Fixture {
        bundle: BackendBundle,
        collection: AgedPhotoCollection,
        embeddings: Vec<IdentityEmbedding>,
    }

    fn fixture() -> Fixture {
        let bundle = BackendBundle::toy(5);
        let collection = synthetic_collection(&bundle, &ToyPerson::new(2), &SyntheticSpec::default()).unwrap();
        let embeddings = embed_collection(&bundle, &collection).unwrap();
        Fixture {
            bundle,
            collection,
            embeddings,
        }
    }

    fn ctx(f: &Fixture) -> StepContext<'_> {
        StepContext {
            bundle: &f.bundle,
            collection: &f.collection,
            embeddings: &f.embeddings,
            weights: LossWeights::default(),
            flags: AblationFlags::all_on(),
            reference_window: 3,
        }
    }

    fn sample(f: &Fixture, i: usize, target: f64, extra: Option<f64>) -> StepSample {
        StepSample {
            input_index: i,
            input_age: f.collection.records()[i].age_years,
            target_age: age(target),
            extrapolation_age: extra.map(age),
        }
    }

    #[test]
    fn own_age_step_is_near_zero_at_init() {
        let f = fixture();
        let c = ctx(&f);
        let net = AdapterNetwork::new(AdapterShape::reduced(16), 0);
        let s = sample(&f, 3, 41.0, Some(90.0));
        let out = evaluate_step(&c, Some(&net), &s, None).unwrap();
        assert!(out.report.total.abs() < 1e-6, "{:?}", out.report);
        assert_eq!(out.report.raw("reg_wnorm"), Some(0.0));
        assert_eq!(out.report.raw("reg_extra"), Some(0.0));
    }

    #[test]
    fn fresh_adapter_matches_global_loss() {
        let f = fixture();
        let c = ctx(&f);
        let net = AdapterNetwork::new(AdapterShape::reduced(16), 0);
        let s = sample(&f, 0, 62.0, Some(10.0));
        let with = evaluate_step(&c, Some(&net), &s, None).unwrap().report;
        let without = global_step_loss(&c, &s).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn disabled_terms_are_skipped() {
        let f = fixture();
        let mut c = ctx(&f);
        c.flags = AblationFlags::all_off();
        let s = sample(&f, 0, 62.0, Some(10.0));
        let r = evaluate_step(&c, None, &s, None).unwrap().report;
        for name in ["pers_age", "reg_extra", "reg_wnorm"] {
            assert!(r.term(name).unwrap().is_skipped());
        }
        let mut grads = AdapterParams::zeros(&AdapterShape::reduced(16));
        let net = AdapterNetwork::new(AdapterShape::reduced(16), 0);
        evaluate_step(&c, Some(&net), &s, Some(&mut grads)).unwrap();
        assert!(grads.tensors().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let f = fixture();
        let c = ctx(&f);
        let mut net = AdapterNetwork::new(AdapterShape::reduced(16), 3);
        net.perturb_output_layers(4, 0.5);
        let s = sample(&f, 2, 55.0, Some(85.0));
        let loss = |n: &AdapterNetwork| evaluate_step(&c, Some(n), &s, None).unwrap().report.total;
        let mut grads = AdapterParams::zeros(net.shape());
        evaluate_step(&c, Some(&net), &s, Some(&mut grads)).unwrap();

        let analytic = grads.tensors();
        for (t, (name, g)) in analytic.iter().enumerate() {
            let len = g.len();
            let mut num = Vec::new();
            let mut ana = Vec::new();
            for k in 0..4 {
                let idx = (k * 7919 + 13) % len;
                let mut plus = net.clone();
                plus.params_mut().tensors_mut()[t].1[idx] += 1e-5;
                let mut minus = net.clone();
                minus.params_mut().tensors_mut()[t].1[idx] -= 1e-5;
                num.push((loss(&plus) - loss(&minus)) / 2e-5);
                ana.push(g[idx]);
            }
            let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = num.iter().map(|v| v * v).sum::<f64>().sqrt().max(ana.iter().map(|v| v * v).sum::<f64>().sqrt());
            assert!(diff <= 1e-4 * scale.max(1e-8), "{name}: {num:?} vs {ana:?}");
        }
    }
}
