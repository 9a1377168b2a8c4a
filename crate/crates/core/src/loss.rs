//! Multi-scale summed loss over the up-scaling taps.
//!
//! `L_sum = Σ_{i=0}^{m} w_i · CE(Ŷ_i, G_i)` where `G_i` is the ground-truth
//! mask brought down to tap `i`'s resolution by nearest-neighbour sampling.

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::resample::downscale_mask;
use crate::scalar::Scalar;
use crate::tensor::Mask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BaseLoss {
    #[default]
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub base_loss: BaseLoss,
    /// One weight per tap, `m + 1` in total.
    pub stage_weights: Vec<f64>,
}

impl LossConfig {
    /// Unit weights over `m + 1` taps.
    pub fn uniform(num_stages: usize) -> Self {
        LossConfig {
            base_loss: BaseLoss::CrossEntropy,
            stage_weights: vec![1.0; num_stages + 1],
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stage_weights.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_weights.is_empty() {
            return Err(Error::Config("loss needs at least one stage weight".into()));
        }
        if let Some(w) = self.stage_weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Config(format!(
                "stage weights must be finite and non-negative, got {w}"
            )));
        }
        Ok(())
    }
}

/// Ground truth at resolution `M` brought down to the resolution of tap `stage`.
pub fn resize_target(gt: &Mask, stage: usize, num_stages: usize) -> Result<Mask> {
    if stage > num_stages {
        return Err(Error::Config(format!(
            "stage {stage} outside 0..={num_stages}"
        )));
    }
    let factor = 1usize
        .checked_shl((num_stages - stage) as u32)
        .ok_or_else(|| shape_err!("scale factor 2^{} overflows", num_stages - stage))?;
    downscale_mask(gt, factor)
}

/// Records `L_sum` on `tape` for taps `Ŷ_0..Ŷ_m` against ground truth at
/// the resolution of `Ŷ_m`.
pub fn l_sum<T: Scalar>(tape: &mut Tape<T>, taps: &[Var], gt: &Mask, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    if taps.len() != cfg.stage_weights.len() {
        return Err(Error::Config(format!(
            "{} taps but {} stage weights",
            taps.len(),
            cfg.stage_weights.len()
        )));
    }
    let m = taps.len() - 1;
    let mut terms = Vec::with_capacity(taps.len());
    for (i, (&tap, &w)) in taps.iter().zip(&cfg.stage_weights).enumerate() {
        let target = resize_target(gt, i, m)?;
        let ce = tape.cross_entropy(tap, &target)?;
        terms.push((ce, T::from_f64_lossy(w)));
    }
    tape.weighted_sum(&terms)
}
