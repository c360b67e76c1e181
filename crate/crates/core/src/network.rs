//! Global-focal network: a 4-block focal pathway and a 2-block global
//! pathway fused by weighted two-way lateral (TWL) connections, with a
//! smoothed exponential moving average (SEMA) regulating the fused features
//! during training.

use crate::param::{Fwd, Param, Parameterized};
use crate::rng::Rng;
use crate::tensor::{el, Element, Result, Tensor, TensorError};
use crate::window::{BlockConfig, SwinBlock, TokenGrid};

/// Architecture of one global-focal network. The shift/head/MLP schedules
/// default to the standard four-block focal and two-block global layout.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GlobalFocalConfig {
    pub focal: [BlockConfig; 4],
    pub global: [BlockConfig; 2],
    /// TWL weights (global, focal) at the intermediate connection.
    pub lambda_in: (f64, f64),
    /// TWL weights (global, focal) at the final connection.
    pub lambda_out: (f64, f64),
}

impl GlobalFocalConfig {
    /// Standard schedule: focal shifts {0,1,2,3}, heads {2,4,4,8}, MLP
    /// widths {64,128,128,256}; global shifts {0,1}, heads {4,8}, MLP
    /// widths {128,256}. Channel width is constant across blocks.
    pub fn standard(dim: usize, window: usize) -> Self {
        let blk = |heads, mlp, shift| BlockConfig {
            dim,
            att_heads: heads,
            mlp_hidden: mlp,
            window,
            shift,
        };
        GlobalFocalConfig {
            focal: [blk(2, 64, 0), blk(4, 128, 1), blk(4, 128, 2), blk(8, 256, 3)],
            global: [blk(4, 128, 0), blk(8, 256, 1)],
            lambda_in: (0.5, 0.5),
            lambda_out: (0.5, 0.5),
        }
    }

    pub fn dim(&self) -> usize {
        self.focal[0].dim
    }

    pub fn validate(&self) -> Result<()> {
        for b in self.focal.iter().chain(self.global.iter()) {
            b.validate()?;
            if b.dim != self.dim() {
                return Err(TensorError::Invalid(
                    "all blocks must share the same channel width".into(),
                ));
            }
        }
        if !(self.lambda_in.0.is_finite()
            && self.lambda_in.1.is_finite()
            && self.lambda_out.0.is_finite()
            && self.lambda_out.1.is_finite())
        {
            return Err(TensorError::Invalid("TWL weights must be finite".into()));
        }
        Ok(())
    }
}

/// Weighted elementwise fusion of the global and focal pathway outputs.
pub fn twl_combine<T: Element>(
    g_out: &TokenGrid<T>,
    f_out: &TokenGrid<T>,
    lambda_g: f64,
    lambda_f: f64,
) -> Result<TokenGrid<T>> {
    if g_out.tensor.shape() != f_out.tensor.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "twl_combine",
            lhs: g_out.tensor.shape().to_vec(),
            rhs: f_out.tensor.shape().to_vec(),
        });
    }
    let fused = g_out.tensor.scale(lambda_g).add(&f_out.tensor.scale(lambda_f))?;
    TokenGrid::new(fused)
}

/// Smoothing decay for a batch of `n` samples.
pub fn sema_decay(n: usize) -> Result<f64> {
    if n < 1 {
        return Err(TensorError::Invalid(format!("sema_decay needs n >= 1, got {n}")));
    }
    Ok(1.0 - 1.0 / n as f64)
}

/// Running smoothed batch-mean of one TWL connection output.
#[derive(Clone, Debug, Default)]
pub struct SemaState<T: Element> {
    pub smoothed: Option<Vec<T>>,
    pub shape: Vec<usize>,
}

impl<T: Element> SemaState<T> {
    pub fn new() -> Self {
        SemaState { smoothed: None, shape: Vec::new() }
    }

    pub fn is_initialized(&self) -> bool {
        self.smoothed.is_some()
    }

    /// Smooth the batch mean of `z` and fold it back into the per-sample
    /// features: the output is `z - mean(z) + s_v`, where the history term
    /// inside `s_v` carries no gradient. The first call initializes the
    /// history with the current batch mean.
    pub fn update(&mut self, z: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
        if z.rank() < 2 || z.shape()[0] == 0 {
            return Err(TensorError::Invalid("sema_update needs a nonempty batch".into()));
        }
        let delta = sema_decay(n)?;
        let mean = z.mean_axis(0)?; // graph-connected batch mean
        let feat_shape = z.shape()[1..].to_vec();
        match &self.smoothed {
            Some(prev) => {
                if self.shape != feat_shape {
                    return Err(TensorError::ShapeMismatch {
                        op: "sema_update",
                        lhs: self.shape.clone(),
                        rhs: feat_shape,
                    });
                }
                let d: T = el(delta);
                let one_minus: T = el(1.0 - delta);
                let next: Vec<T> = prev
                    .iter()
                    .zip(mean.data())
                    .map(|(&s, &v)| d * s + one_minus * v)
                    .collect();
                // z - mean + s_v  ==  z - delta*mean + delta*s_prev (history detached)
                let hist = Tensor::from_vec(
                    prev.iter().map(|&s| d * s).collect(),
                    &self.shape,
                );
                let out = z.sub(&mean.scale(delta))?.add(&hist)?;
                self.smoothed = Some(next);
                Ok(out)
            }
            None => {
                // s_prev initialized to the current mean: s_v == mean, so the
                // output reduces to z with the mean's gradient reweighted.
                self.shape = feat_shape;
                self.smoothed = Some(mean.data().to_vec());
                let hist = Tensor::from_vec(
                    mean.data().iter().map(|&v| el::<T>(delta) * v).collect(),
                    &self.shape,
                );
                let out = z.sub(&mean.scale(delta))?.add(&hist)?;
                Ok(out)
            }
        }
    }
}

/// One global-focal network with its two intra-network SEMA buffers.
#[derive(Clone, Debug)]
pub struct GlobalFocalNet<T: Element> {
    pub cfg: GlobalFocalConfig,
    pub focal: Vec<SwinBlock<T>>,
    pub global: Vec<SwinBlock<T>>,
    pub sema_in: SemaState<T>,
    pub sema_out: SemaState<T>,
}

impl<T: Element> GlobalFocalNet<T> {
    pub fn new(cfg: GlobalFocalConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let focal = cfg
            .focal
            .iter()
            .map(|c| SwinBlock::new(*c, rng))
            .collect::<Result<Vec<_>>>()?;
        let global = cfg
            .global
            .iter()
            .map(|c| SwinBlock::new(*c, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(GlobalFocalNet { cfg, focal, global, sema_in: SemaState::new(), sema_out: SemaState::new() })
    }

    /// Focal pathway in series, returning the two tap points (after f1 and
    /// after f3).
    pub fn focal_forward(
        &self,
        fwd: &Fwd<T>,
        prefix: &str,
        x: &TokenGrid<T>,
    ) -> Result<(TokenGrid<T>, TokenGrid<T>)> {
        let f0 = self.focal[0].forward(fwd, &format!("{prefix}.focal0"), x)?;
        let f1 = self.focal[1].forward(fwd, &format!("{prefix}.focal1"), &f0)?;
        let f2 = self.focal[2].forward(fwd, &format!("{prefix}.focal2"), &f1)?;
        let f3 = self.focal[3].forward(fwd, &format!("{prefix}.focal3"), &f2)?;
        Ok((f1, f3))
    }

    /// Global pathway in series, returning both block outputs.
    pub fn global_forward(
        &self,
        fwd: &Fwd<T>,
        prefix: &str,
        x: &TokenGrid<T>,
    ) -> Result<(TokenGrid<T>, TokenGrid<T>)> {
        let g0 = self.global[0].forward(fwd, &format!("{prefix}.global0"), x)?;
        let g1 = self.global[1].forward(fwd, &format!("{prefix}.global1"), &g0)?;
        Ok((g0, g1))
    }

    /// First half: `z_in = λ1·g0(x_g) + λ2·f1(f0(x_f))`, SEMA-smoothed when
    /// training. The global and focal pathways may receive differently
    /// augmented views of the same image.
    pub fn stage_in(
        &mut self,
        fwd: &Fwd<T>,
        prefix: &str,
        x_global: &TokenGrid<T>,
        x_focal: &TokenGrid<T>,
    ) -> Result<TokenGrid<T>> {
        let g0 = self.global[0].forward(fwd, &format!("{prefix}.global0"), x_global)?;
        let f0 = self.focal[0].forward(fwd, &format!("{prefix}.focal0"), x_focal)?;
        let f1 = self.focal[1].forward(fwd, &format!("{prefix}.focal1"), &f0)?;
        let fused = twl_combine(&g0, &f1, self.cfg.lambda_in.0, self.cfg.lambda_in.1)?;
        if fwd.is_train() {
            let n = fused.batch;
            let smoothed = self.sema_in.update(&fused.tensor, n)?;
            TokenGrid::new(smoothed)
        } else {
            Ok(fused)
        }
    }

    /// Second half: `z_out = λ1·g1(z_in) + λ2·f3(f2(z_in))`, SEMA-smoothed
    /// when training.
    pub fn stage_out(
        &mut self,
        fwd: &Fwd<T>,
        prefix: &str,
        z_in: &TokenGrid<T>,
    ) -> Result<TokenGrid<T>> {
        let g1 = self.global[1].forward(fwd, &format!("{prefix}.global1"), z_in)?;
        let f2 = self.focal[2].forward(fwd, &format!("{prefix}.focal2"), z_in)?;
        let f3 = self.focal[3].forward(fwd, &format!("{prefix}.focal3"), &f2)?;
        let fused = twl_combine(&g1, &f3, self.cfg.lambda_out.0, self.cfg.lambda_out.1)?;
        if fwd.is_train() {
            let n = fused.batch;
            let smoothed = self.sema_out.update(&fused.tensor, n)?;
            TokenGrid::new(smoothed)
        } else {
            Ok(fused)
        }
    }

    /// Full forward: both TWL taps.
    pub fn forward(
        &mut self,
        fwd: &Fwd<T>,
        prefix: &str,
        x_global: &TokenGrid<T>,
        x_focal: &TokenGrid<T>,
    ) -> Result<(TokenGrid<T>, TokenGrid<T>)> {
        let z_in = self.stage_in(fwd, prefix, x_global, x_focal)?;
        let z_out = self.stage_out(fwd, prefix, &z_in)?;
        Ok((z_in, z_out))
    }
}

impl<T: Element> Parameterized<T> for GlobalFocalNet<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        for (i, blk) in self.focal.iter_mut().enumerate() {
            blk.visit_params(&format!("{prefix}.focal{i}"), f);
        }
        for (i, blk) in self.global.iter_mut().enumerate() {
            blk.visit_params(&format!("{prefix}.global{i}"), f);
        }
    }
}
