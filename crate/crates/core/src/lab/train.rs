use ndarray::Array2;
use serde::Serialize;

use super::sweep::draw_indices;
use crate::data::Dataset;
use crate::error::Result;
use crate::net::rng::{Stream, ORDER_STREAM};
use crate::net::{accuracy, Network};
use crate::opt::{sam_step_with, Batch, LayerScales, SamScratch, StepConfig, StepTelemetry, DIVERGENCE_LIMIT};

/// One training run: network, per-layer factors and a data order drawn from the seed.
///
/// Runs sharing a seed see the same example sequence whatever their rule.
pub struct TrainRun {
    pub net: Network,
    pub scales: LayerScales,
    pub cfg: StepConfig,
    pub batch_size: usize,
    pub ascent_batch_size: usize,
    pub steps_taken: usize,
    pub diverged: bool,
    order: Stream,
    scratch: SamScratch,
}

/// Accuracy and loss of a network on a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

impl TrainRun {
    pub fn new(net: Network, scales: LayerScales, cfg: StepConfig, seed: u64) -> TrainRun {
        TrainRun {
            net,
            scales,
            cfg,
            batch_size: 1,
            ascent_batch_size: 1,
            steps_taken: 0,
            diverged: false,
            order: Stream::new(seed, ORDER_STREAM),
            scratch: SamScratch::default(),
        }
    }

    pub fn with_batches(mut self, descent: usize, ascent: usize) -> TrainRun {
        self.batch_size = descent;
        self.ascent_batch_size = ascent;
        self
    }

    /// One SAM step on freshly drawn examples. `None` once the run has diverged; the weights are
    /// then frozen.
    pub fn step(&mut self, data: &Dataset) -> Result<Option<StepTelemetry>> {
        if self.diverged {
            return Ok(None);
        }
        let ai = draw_indices(&mut self.order, data.len(), self.ascent_batch_size);
        let (ax, ay) = data.batch(&ai);
        let t = if self.batch_size == 1 && self.ascent_batch_size == 1 {
            let b = Batch { x: ax.view(), y: ay.view() };
            sam_step_with(&mut self.net, b, b, &self.cfg, &self.scales, &mut self.scratch)?
        } else {
            let di = draw_indices(&mut self.order, data.len(), self.batch_size);
            let (dx, dy) = data.batch(&di);
            sam_step_with(
                &mut self.net,
                Batch { x: ax.view(), y: ay.view() },
                Batch { x: dx.view(), y: dy.view() },
                &self.cfg,
                &self.scales,
                &mut self.scratch,
            )?
        };
        self.steps_taken += 1;
        if t.diverged || !t.output_perturb.is_finite() || t.output_perturb.abs() >= DIVERGENCE_LIMIT {
            self.diverged = true;
        }
        Ok(Some(t))
    }

    pub fn outputs(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.net.predict(x.view())
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<Evaluation> {
        let out = self.net.predict(data.inputs.view())?;
        let targets = data.targets();
        let le = self.cfg.loss.evaluate(out.view(), targets.view(), self.cfg.loss_scale)?;
        Ok(Evaluation {
            loss: le.value,
            accuracy: accuracy(out.view(), &data.labels),
        })
    }
}
