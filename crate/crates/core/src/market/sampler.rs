use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{BasketConfig, MarketError, TrainingSample};
use crate::special::{sigmoid, silu, silu_deriv};

thread_local! {
    static CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of sampler invocations made from the current thread.
///
/// Lets callers assert that a code path never touches the reference model.
pub fn sampler_calls() -> u64 {
    CALLS.with(|c| c.get())
}

fn count_call() {
    CALLS.with(|c| c.set(c.get() + 1));
}

/// Independent generator for draw `index`; identical regardless of thread layout.
fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Sigmoidally smoothed call payoff `x·σ(x/w)`.
pub fn smooth_payoff(x: f64, w: f64) -> Result<f64, MarketError> {
    if !(w > 0.0) {
        return Err(MarketError::SmoothingWidth(w));
    }
    Ok(w * silu(x / w))
}

/// Derivative of [`smooth_payoff`] in `x`: `σ(x/w)·(1 + (x/w)(1 − σ(x/w)))`.
pub fn smooth_payoff_deriv(x: f64, w: f64) -> Result<f64, MarketError> {
    if !(w > 0.0) {
        return Err(MarketError::SmoothingWidth(w));
    }
    Ok(silu_deriv(x / w))
}

struct Prepared<'a> {
    cfg: &'a BasketConfig,
    chol: Vec<Vec<f64>>,
    scale: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(cfg: &'a BasketConfig) -> Result<Self, MarketError> {
        cfg.validate()?;
        let sqrt_t = cfg.maturity.sqrt();
        Ok(Prepared {
            cfg,
            chol: cfg.cholesky()?,
            scale: cfg.vols.iter().map(|s| s * sqrt_t).collect(),
        })
    }

    fn increments(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let m = self.scale.len();
        let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        (0..m)
            .map(|i| {
                let xi: f64 = (0..=i).map(|k| self.chol[i][k] * z[k]).sum();
                self.scale[i] * xi
            })
            .collect()
    }

    fn payoff(&self, x: Vec<f64>, dx: &[f64]) -> TrainingSample {
        let cfg = self.cfg;
        let terminal: f64 = cfg
            .weights
            .iter()
            .zip(x.iter().zip(dx))
            .map(|(w, (f, d))| w * (f + d))
            .sum();
        let moneyness = terminal - cfg.strike;
        let (y, slope) = match cfg.smoothing {
            None => {
                let itm = moneyness > 0.0;
                (if itm { moneyness } else { 0.0 }, if itm { 1.0 } else { 0.0 })
            }
            Some(w) => {
                let u = moneyness / w;
                let s = sigmoid(u);
                (moneyness * s, s * (1.0 + u * (1.0 - s)))
            }
        };
        TrainingSample {
            dydx: cfg.weights.iter().map(|w| w * slope).collect(),
            x,
            y,
        }
    }
}

/// Draws `n` LSMC samples: uniform initial forwards from the spot box, one
/// exact terminal step per draw, pathwise payoff derivatives.
pub fn sample(cfg: &BasketConfig, n: usize, seed: u64) -> Result<Vec<TrainingSample>, MarketError> {
    count_call();
    if n == 0 {
        return Err(MarketError::NoSamples);
    }
    let prep = Prepared::new(cfg)?;
    let (lo, width) = (cfg.spot_box.lo(), cfg.spot_box.width());
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i);
            let x: Vec<f64> = (0..cfg.assets())
                .map(|_| lo + width * rng.random::<f64>())
                .collect();
            let dx = prep.increments(&mut rng);
            prep.payoff(x, &dx)
        })
        .collect())
}

/// Like [`sample`] but with every draw starting from the same forwards.
pub fn sample_at(
    cfg: &BasketConfig,
    spots: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<TrainingSample>, MarketError> {
    count_call();
    if n == 0 {
        return Err(MarketError::NoSamples);
    }
    if spots.len() != cfg.assets() {
        return Err(MarketError::SpotLength {
            expected: cfg.assets(),
            got: spots.len(),
        });
    }
    let prep = Prepared::new(cfg)?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i);
            let dx = prep.increments(&mut rng);
            prep.payoff(spots.to_vec(), &dx)
        })
        .collect())
}

/// Raw per-asset terminal increments `Fᵢ(T) − Fᵢ(0)`, one row per path.
pub fn terminal_increments(
    cfg: &BasketConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, MarketError> {
    count_call();
    let prep = Prepared::new(cfg)?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| prep.increments(&mut substream(seed, i)))
        .collect())
}
