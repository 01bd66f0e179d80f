use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use super::loss::Loss;
use super::network::{Network, PassCache};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Floor in the relative-error denominator.
pub const FD_FLOOR: f64 = 1e-12;

/// Agreement of one layer's analytic gradient with central differences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerGradCheck {
    pub layer: usize,
    /// `|g - g_fd|_F / (|g|_F + FD_FLOOR)` over the entries checked.
    pub rel_error: f64,
    pub checked: usize,
    /// Entries whose ±step moved a pre-activation across a kink of the activation.
    pub skipped: usize,
}

fn kink_signs(cache: &PassCache) -> Vec<bool> {
    cache.pre.iter().flat_map(|h| h.iter().map(|v| *v > 0.0).collect::<Vec<_>>()).collect()
}

/// Compares `backward` against central differences of the loss for every weight entry.
///
/// With a kinked activation, entries whose perturbation changes any pre-activation sign are
/// skipped and counted.
pub fn gradient_check(net: &Network, x: ArrayView2<f64>, y: ArrayView2<f64>, loss: Loss) -> Result<Vec<LayerGradCheck>> {
    let kinked = !net.activation().is_smooth();
    let (f, cache) = net.forward(x)?;
    let base_signs = kink_signs(&cache);
    let g = net.backward(&cache, loss.evaluate(f.view(), y, 1.0)?.grad.view())?;
    let mut probe = net.clone();
    let mut out = Vec::new();
    for l in 1..=net.dims().num_layers() {
        let w0: Array2<f64> = net.weight(l).clone();
        let analytic = &g.grads[l - 1];
        let (mut num, mut den) = (0.0, 0.0);
        let (mut checked, mut skipped) = (0, 0);
        for idx in ndarray::indices(w0.dim()) {
            let mut eval = |delta: f64| -> Result<(f64, bool)> {
                let mut w = w0.clone();
                w[idx] += delta;
                probe.set_weight(l, w)?;
                let (fp, c) = probe.forward(x)?;
                let same = !kinked || kink_signs(&c) == base_signs;
                Ok((loss.evaluate(fp.view(), y, 1.0)?.value, same))
            };
            let (lp, sp) = eval(FD_STEP)?;
            let (lm, sm) = eval(-FD_STEP)?;
            if !(sp && sm) {
                skipped += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * FD_STEP);
            let a = analytic[idx];
            num += (a - fd) * (a - fd);
            den += a * a;
            checked += 1;
        }
        probe.set_weight(l, w0)?;
        out.push(LayerGradCheck {
            layer: l,
            rel_error: num.sqrt() / (den.sqrt() + FD_FLOOR),
            checked,
            skipped,
        });
    }
    Ok(out)
}
