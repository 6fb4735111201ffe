use crate::embednet::model::{Backbone, EmbeddingModel};
use crate::error::Result;

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|a - n| / max(|a|, |n|)` over parameters with `|a| >= floor`.
    pub max_relative: f64,
    /// Largest `|a - n|` over parameters with `|a| < floor`.
    pub max_absolute: f64,
    pub worst_index: usize,
    pub checked: usize,
    /// Parameters skipped because the stencil crossed a ReLU kink, where the
    /// loss has no derivative.
    pub kinked: usize,
}

/// Central differences with step `h` on every parameter. Parameters whose
/// analytic gradient is below `floor` are compared absolutely.
pub fn check_gradients<B: Backbone>(
    model: &EmbeddingModel<B>,
    batch: &[(&[f64], usize)],
    h: f64,
    floor: f64,
) -> Result<GradCheck> {
    let analytic = model.loss_and_grad(batch)?.grad;
    let mut probe = model.clone();
    let mut out = GradCheck {
        max_relative: 0.0,
        max_absolute: 0.0,
        worst_index: 0,
        checked: 0,
        kinked: 0,
    };
    let bl = model.backbone.param_len();
    let pattern = |m: &EmbeddingModel<B>| -> Vec<Vec<bool>> {
        batch
            .iter()
            .map(|(x, _)| m.backbone.active_set(&m.params[..bl], x))
            .collect()
    };
    let base = pattern(model);
    for (i, a) in analytic.iter().enumerate() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = probe.loss_and_grad(batch)?.loss;
        let kink_up = pattern(&probe) != base;
        probe.params[i] = orig - h;
        let down = probe.loss_and_grad(batch)?.loss;
        let kink_down = pattern(&probe) != base;
        probe.params[i] = orig;
        if kink_up || kink_down {
            out.kinked += 1;
            continue;
        }
        out.checked += 1;
        let numeric = (up - down) / (2.0 * h);
        let diff = (a - numeric).abs();
        if a.abs() < floor {
            out.max_absolute = out.max_absolute.max(diff);
        } else {
            let rel = diff / a.abs().max(numeric.abs());
            if rel > out.max_relative {
                out.max_relative = rel;
                out.worst_index = i;
            }
        }
    }
    Ok(out)
}
