use super::ParamSet;
use crate::Result;

/// SGD with heavy-ball momentum and coupled L2 weight decay:
/// `buf = momentum * buf + (g + wd * p); p -= lr * buf`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    buffers: ParamSet,
}

impl Sgd {
    pub fn new(params: &ParamSet, momentum: f32, weight_decay: f32) -> Self {
        Self {
            momentum,
            weight_decay,
            buffers: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f32) -> Result<()> {
        let all = 0..params.len();
        self.step_range(params, grads, lr, all)
    }

    /// Updates only the tensors at indices `range`; the rest (and their
    /// momentum buffers) are left untouched.
    pub fn step_range(
        &mut self,
        params: &mut ParamSet,
        grads: &ParamSet,
        lr: f32,
        range: std::ops::Range<usize>,
    ) -> Result<()> {
        params.check_layout(grads)?;
        params.check_layout(&self.buffers)?;
        let tensors = params.iter_mut().zip(grads.iter()).zip(self.buffers.iter_mut());
        for ((p, g), buf) in tensors.skip(range.start).take(range.len()) {
            for ((w, gw), b) in p.data.iter_mut().zip(&g.data).zip(buf.data.iter_mut()) {
                let d = gw + self.weight_decay * *w;
                *b = self.momentum * *b + d;
                *w -= lr * *b;
            }
        }
        Ok(())
    }
}
