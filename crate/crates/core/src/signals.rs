//! Piecewise-constant signals on uniform grids and their norms.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Default threshold below which a control sample counts as zero.
pub const EPS_ZERO: f64 = 1e-6;
/// Slack allowed on the magnitude bound `|u| <= 1`.
pub const ADMISSIBLE_TOL: f64 = 1e-9;

/// Multi-channel control; `samples[(i, k)]` holds `u_i` on `[k dt, (k+1) dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    samples: DMatrix<f64>,
    dt: f64,
}

impl ControlSignal {
    pub fn new(samples: DMatrix<f64>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(Error::Dimension("control signal needs at least one channel and one step".into()));
        }
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("control samples"));
        }
        Ok(Self { samples, dt })
    }

    /// Single-channel signal from a slice.
    pub fn from_slice(values: &[f64], dt: f64) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(1, values.len(), values), dt)
    }

    pub fn zeros(channels: usize, steps: usize, dt: f64) -> Result<Self> {
        Self::new(DMatrix::zeros(channels, steps), dt)
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn channel(&self, i: usize) -> Result<Vec<f64>> {
        self.check_channel(i)?;
        Ok(self.samples.row(i).iter().copied().collect())
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn steps(&self) -> usize {
        self.samples.ncols()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    /// `max |u| <= 1 + tol` over every channel and step.
    pub fn is_admissible(&self) -> bool {
        self.samples.amax() <= 1.0 + ADMISSIBLE_TOL
    }

    fn check_channel(&self, channel: usize) -> Result<()> {
        if channel >= self.channels() {
            return Err(Error::ChannelOutOfRange {
                channel,
                channels: self.channels(),
            });
        }
        Ok(())
    }

    fn row(&self, channel: usize) -> impl Iterator<Item = f64> + '_ {
        self.samples.row(channel).into_iter().copied().collect::<Vec<_>>().into_iter()
    }

    /// Support length: `dt * #{k : |u_i[k]| > eps_zero}`.
    pub fn l0_norm(&self, channel: usize, eps_zero: f64) -> Result<f64> {
        Ok(self.dt * self.support_count(channel, eps_zero)? as f64)
    }

    pub fn support_count(&self, channel: usize, eps_zero: f64) -> Result<usize> {
        self.check_channel(channel)?;
        if !(eps_zero > 0.0) {
            return Err(Error::InvalidArgument(format!("eps_zero must be positive, got {eps_zero}")));
        }
        Ok(self.row(channel).filter(|v| v.abs() > eps_zero).count())
    }

    /// `(sum_k |u_i[k]|^p dt)^(1/p)`.
    pub fn lp_norm(&self, channel: usize, p: f64) -> Result<f64> {
        Ok(self.lp_norm_pow(channel, p)?.powf(1.0 / p))
    }

    /// `||u_i||_p^p`, the quantity whose limit as `p -> 0` is the support length.
    pub fn lp_norm_pow(&self, channel: usize, p: f64) -> Result<f64> {
        self.check_channel(channel)?;
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::InvalidArgument(format!("p must be in (0, inf), got {p}")));
        }
        Ok(self.row(channel).map(|v| v.abs().powf(p)).sum::<f64>() * self.dt)
    }

    pub fn sparsity_rate(&self, channel: usize, eps_zero: f64) -> Result<f64> {
        let rate = self.l0_norm(channel, eps_zero)? / self.horizon();
        Ok(rate.clamp(0.0, 1.0))
    }

    pub fn lp_to_l0_limit_check(&self, channel: usize) -> Result<LpLimitRecord> {
        let exponents = vec![1.0, 0.5, 0.1, 0.01];
        let values = exponents
            .iter()
            .map(|&p| self.lp_norm_pow(channel, p))
            .collect::<Result<Vec<_>>>()?;
        // Exact support: any nonzero sample, no threshold.
        let l0 = self.dt * self.row(channel).filter(|v| *v != 0.0).count() as f64;
        Ok(LpLimitRecord {
            gap: (values[3] - l0).abs(),
            exponents,
            values,
            l0,
        })
    }

    pub fn switching_count(&self, channel: usize, eps_zero: f64) -> Result<SwitchingCount> {
        self.check_channel(channel)?;
        let q: Vec<i8> = self.row(channel).map(|v| quantize(v, eps_zero)).collect();
        let mut count = 0;
        let mut forbidden = 0;
        for w in q.windows(2) {
            if w[0] != w[1] {
                count += 1;
                if w[0] * w[1] == -1 {
                    forbidden += 1;
                }
            }
        }
        Ok(SwitchingCount {
            switches: count,
            sign_flips: forbidden,
        })
    }
}

/// Maps a sample to `{-1, 0, +1}` with an `eps_zero` dead band.
pub fn quantize(v: f64, eps_zero: f64) -> i8 {
    if v > eps_zero {
        1
    } else if v < -eps_zero {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LpLimitRecord {
    pub exponents: Vec<f64>,
    pub values: Vec<f64>,
    pub l0: f64,
    /// `| ||u||_{0.01}^{0.01} - ||u||_0 |`
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SwitchingCount {
    pub switches: usize,
    /// Direct `+1 <-> -1` transitions without an intermediate zero.
    pub sign_flips: usize,
}

/// State samples at the grid points, n x (N+1).
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    samples: DMatrix<f64>,
    dt: f64,
}

impl StateTrajectory {
    pub fn new(samples: DMatrix<f64>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if samples.ncols() < 2 {
            return Err(Error::Dimension("trajectory needs at least two grid points".into()));
        }
        Ok(Self { samples, dt })
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.dt * (self.samples.ncols() - 1) as f64
    }

    pub fn initial(&self) -> Vec<f64> {
        self.samples.column(0).iter().copied().collect()
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.samples.column(self.samples.ncols() - 1).iter().copied().collect()
    }
}
