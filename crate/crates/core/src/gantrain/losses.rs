use crate::diff::{softplus_f32, Tape, Var};

/// `(mean softplus(-real) + mean softplus(fake), mean softplus(-fake))`.
pub fn gan_losses(real_logits: &[f32], fake_logits: &[f32]) -> (f32, f32) {
    let mean = |v: &[f32], f: &dyn Fn(f32) -> f32| v.iter().map(|&x| f(x)).sum::<f32>() / v.len().max(1) as f32;
    let d = mean(real_logits, &|x| softplus_f32(-x)) + mean(fake_logits, &|x| softplus_f32(x));
    let g = mean(fake_logits, &|x| softplus_f32(-x));
    (d, g)
}

pub fn d_loss(tape: &mut Tape, real: Var, fake: Var) -> crate::Result<Var> {
    let nr = tape.scale(real, -1.0);
    let a = tape.softplus(nr);
    let a = tape.mean(a);
    let b = tape.softplus(fake);
    let b = tape.mean(b);
    tape.add(a, b)
}

pub fn g_loss(tape: &mut Tape, fake: Var) -> Var {
    let nf = tape.scale(fake, -1.0);
    let a = tape.softplus(nf);
    tape.mean(a)
}

/// Fraction of correct real/fake calls at threshold 0, averaged over both sets.
pub fn d_accuracy(real_logits: &[f32], fake_logits: &[f32]) -> f32 {
    let frac = |v: &[f32], f: &dyn Fn(f32) -> bool| v.iter().filter(|&&x| f(x)).count() as f32 / v.len().max(1) as f32;
    0.5 * (frac(real_logits, &|x| x > 0.0) + frac(fake_logits, &|x| x < 0.0))
}

/// Running mean of observed path lengths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathLengthState {
    pub ema: f32,
    pub decay: f32,
}

impl Default for PathLengthState {
    fn default() -> Self {
        Self { ema: 0.0, decay: 0.01 }
    }
}

impl PathLengthState {
    /// Moves the running mean toward the batch mean, then returns
    /// `mean_i (length_i - ema)^2`.
    pub fn update(&mut self, lengths: &[f32]) -> f32 {
        if lengths.is_empty() {
            return 0.0;
        }
        let mean = lengths.iter().sum::<f32>() / lengths.len() as f32;
        self.ema += self.decay * (mean - self.ema);
        lengths.iter().map(|l| (l - self.ema).powi(2)).sum::<f32>() / lengths.len() as f32
    }
}

/// `J^T y` where `output` depends on `input` through `tape`; consumes the tape.
pub fn path_gradient(mut tape: Tape, input: Var, output: Var, y: &[f32]) -> crate::Result<Vec<f32>> {
    let yv = tape.constant(tape.shape(output).to_vec(), y.to_vec())?;
    let prod = tape.mul(output, yv)?;
    let s = tape.sum(prod);
    let n = tape.value(input).len();
    let mut g = tape.backward(s)?;
    Ok(g.take(input).unwrap_or_else(|| vec![0.0; n]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits() {
        let (d, g) = gan_losses(&[0.0; 4], &[0.0; 4]);
        assert!((d - 2.0 * std::f32::consts::LN_2).abs() < 1e-6);
        assert!((g - std::f32::consts::LN_2).abs() < 1e-6);
        assert!(gan_losses(&[0.0], &[50.0]).1 < 1e-6);
    }

    #[test]
    fn ema_recurrence() {
        let mut s = PathLengthState::default();
        let p = s.update(&[2.0]);
        assert!((s.ema - 0.02).abs() < 1e-7);
        assert!((p - (2.0 - 0.02f32).powi(2)).abs() < 1e-5);
        let mut s = PathLengthState { ema: 1.5, decay: 0.01 };
        let p = s.update(&[0.0, 0.0]);
        assert!((p - s.ema * s.ema).abs() < 1e-7);
    }
}
