//! Scenario configuration: JSON-backed, preset-aware, validated.

use crate::channel::{build_pdp, spatial_correlation, PdpProfile, PowerDelayProfile};
use crate::error::{Error, Result};
use crate::link::{ApproachSpec, FrameSpec, InitMode, Numerology};
use crate::numerics::CMat;
use crate::precoder::{step_size, StepSizeRule};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Scenario label echoed into every CSV row.
    pub scenario_id: String,
    /// Base-station antennas M.
    pub m: usize,
    /// Users P.
    pub p: usize,
    /// FFT size K (power of two).
    pub k: usize,
    /// Data subcarriers (even, split around DC).
    pub active_subcarriers: usize,
    /// Cyclic prefix length in samples (>= L - 1).
    pub cp_len: usize,
    /// Subcarrier spacing in Hz.
    pub subcarrier_spacing: f64,
    /// OFDM blocks per frame N.
    pub blocks_per_frame: usize,
    /// Delay profile: "etu", "uniform(L)", or "single_tap".
    pub profile: String,
    /// Channel length override: taps beyond this are dropped and the profile
    /// renormalized. The ETU grid at 7.68 MHz spans 39 samples; 38 matches
    /// the complexity figures.
    pub channel_len: Option<usize>,
    /// Doppler frequency in Hz.
    pub fd_hz: f64,
    /// ULA array size in wavelengths; absent means independent antennas.
    pub d_wavelengths: Option<f64>,
    /// Channel estimation error variance (linear) at g_p = 1.
    pub sigma_h2: f64,
    /// Per-user large-scale gains g_p; absent means all ones.
    pub gains: Option<Vec<f64>>,
    /// Es/N0 grid in dB.
    pub esn0_db: Vec<f64>,
    /// Precoder: "proposed", "zf", "mf", or "tpe".
    pub approach: String,
    /// Sharing width for "zf".
    pub b: usize,
    /// Expansion order for "tpe".
    pub q: u32,
    /// Step size rule: "independent", "correlated", "independent_noisy",
    /// "correlated_noisy", or "manual".
    pub mu_rule: String,
    /// Step size for mu_rule = "manual".
    pub mu: f64,
    /// Initialization: "order_recursion" or "oracle".
    pub init_mode: String,
    /// Order recursions used when init_mode = "order_recursion".
    pub init_q: u32,
    /// Filter half window; absent defaults to the channel length.
    pub half_window: Option<usize>,
    /// Re-enter order recursion every this many blocks.
    pub reinit_period: Option<usize>,
    /// Monte-Carlo trials (frames) per point.
    pub trials: u64,
    /// Master seed.
    pub seed: u64,
    /// Precoder-MSE measurement grid: every `mse_stride`-th subcarrier
    /// (0 disables MSE measurement).
    pub mse_stride: usize,
    /// Skip SER measurement (MSE-only runs).
    pub skip_ser: bool,
    /// Count SER from this block on (1 excludes the initialization block).
    pub ser_first_block: usize,

    // Sweep grids for the preset experiments; unused by other subcommands.
    /// Order-recursion counts swept by init-mse.
    pub q_sweep: Vec<u32>,
    /// Doppler grid (Hz) swept by tracking and ser-curve.
    pub fd_grid_hz: Vec<f64>,
    /// Estimation-error grid (dB) swept by chan-error.
    pub sigma_h2_db_grid: Vec<f64>,
    /// Antenna grid swept by complexity.
    pub m_grid: Vec<usize>,
    /// Sharing widths swept by complexity and ser-curve.
    pub b_grid: Vec<usize>,
    /// TPE orders swept by complexity.
    pub q_grid: Vec<u32>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario_id: "custom".into(),
            m: 100,
            p: 10,
            k: 512,
            active_subcarriers: 300,
            cp_len: 40,
            subcarrier_spacing: 15e3,
            blocks_per_frame: 14,
            profile: "etu".into(),
            channel_len: Some(38),
            fd_hz: 0.0,
            d_wavelengths: None,
            sigma_h2: 0.0,
            gains: None,
            esn0_db: vec![8.0],
            approach: "proposed".into(),
            b: 1,
            q: 1,
            mu_rule: "independent".into(),
            mu: 1.0,
            init_mode: "order_recursion".into(),
            init_q: 4,
            half_window: None,
            reinit_period: None,
            trials: 10,
            seed: 1,
            mse_stride: 64,
            skip_ser: false,
            ser_first_block: 0,
            q_sweep: vec![0, 1, 2, 3, 4, 6, 8],
            fd_grid_hz: vec![0.0, 75.0, 150.0, 300.0],
            sigma_h2_db_grid: vec![-30.0, -25.0, -20.0, -15.0, -10.0, -5.0],
            m_grid: vec![8, 16, 32, 64, 128, 256, 512],
            b_grid: vec![1, 6, 12],
            q_grid: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::InvalidConfig(format!(
                "unknown scale `{other}` (expected desk|paper)"
            ))),
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Paper-parameter presets for the four experiment figures plus the
    /// complexity comparison. `desk` shrinks antennas and trials while
    /// keeping M/P fixed so every run finishes on a laptop.
    pub fn preset(name: &str, scale: Scale) -> Result<Self> {
        let mut cfg = ScenarioConfig::default();
        cfg.scenario_id = name.to_string();
        match name {
            "fig4" => {
                // Initialization: MSE + SER vs recursion count.
                cfg.fd_hz = 0.0;
                cfg.esn0_db = vec![8.0];
                cfg.q_sweep = vec![0, 1, 2, 3, 4, 6, 8];
                cfg.d_wavelengths = Some(8.0);
                cfg.trials = 200;
            }
            "fig5" => {
                // Tracking across the frame for a Doppler grid.
                cfg.init_mode = "oracle".into();
                cfg.esn0_db = vec![8.0];
                cfg.fd_grid_hz = vec![0.0, 75.0, 150.0, 300.0];
                cfg.trials = 400;
            }
            "fig6" => {
                // Channel estimation error sweep.
                cfg.init_mode = "order_recursion".into();
                cfg.init_q = 30;
                cfg.mu_rule = "independent_noisy".into();
                cfg.esn0_db = vec![8.0];
                cfg.sigma_h2_db_grid = vec![-30.0, -25.0, -20.0, -17.5, -15.0, -12.5, -10.0, -5.0];
                cfg.trials = 400;
            }
            "fig7" => {
                // SER vs Es/N0 for proposed / ZF(B) / MF.
                cfg.init_mode = "oracle".into();
                cfg.esn0_db = vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0];
                cfg.fd_grid_hz = vec![50.0, 150.0, 300.0];
                cfg.b_grid = vec![1, 6, 12];
                cfg.trials = 60;
            }
            "fig3" => {
                // Complexity comparison, P = 8 users.
                cfg.p = 8;
                cfg.m_grid = vec![8, 16, 32, 64, 100, 128, 256, 512];
                cfg.b_grid = vec![1, 6, 12];
                cfg.q_grid = vec![1, 2, 3];
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset `{other}` (expected fig3|fig4|fig5|fig6|fig7)"
                )))
            }
        }
        if scale == Scale::Desk && name != "fig3" {
            cfg.m = 40;
            cfg.p = 4;
            cfg.trials = (cfg.trials / 4).max(20);
            cfg.scenario_id = format!("{name}-desk");
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        if self.p == 0 || self.m == 0 {
            problems.push("m and p must be positive".into());
        }
        if self.p > self.m {
            problems.push(format!("p ({}) must not exceed m ({})", self.p, self.m));
        }
        if !self.k.is_power_of_two() {
            problems.push(format!("k ({}) must be a power of two", self.k));
        }
        if self.active_subcarriers == 0
            || self.active_subcarriers % 2 != 0
            || self.active_subcarriers >= self.k
        {
            problems.push(format!(
                "active_subcarriers ({}) must be even and below k",
                self.active_subcarriers
            ));
        }
        if self.trials < 1 {
            problems.push("trials must be >= 1".into());
        }
        if self.blocks_per_frame < 1 {
            problems.push("blocks_per_frame must be >= 1".into());
        }
        if self.profile.parse::<PdpProfile>().is_err() {
            problems.push(format!("unknown profile `{}`", self.profile));
        }
        if let Some(g) = &self.gains {
            if g.len() != self.p {
                problems.push(format!("gains must have {} entries, got {}", self.p, g.len()));
            }
            if g.iter().any(|v| !(*v > 0.0)) {
                problems.push("gains must be positive".into());
            }
        }
        match self.approach.as_str() {
            "proposed" | "zf" | "mf" | "tpe" => {}
            other => problems.push(format!("unknown approach `{other}`")),
        }
        match self.mu_rule.as_str() {
            "independent" | "correlated" | "independent_noisy" | "correlated_noisy" | "manual" => {}
            other => problems.push(format!("unknown mu_rule `{other}`")),
        }
        match self.init_mode.as_str() {
            "order_recursion" | "oracle" => {}
            other => problems.push(format!("unknown init_mode `{other}`")),
        }
        if self.b == 0 {
            problems.push("b must be >= 1".into());
        }
        if self.sigma_h2 < 0.0 {
            problems.push("sigma_h2 must be >= 0".into());
        }
        if let Ok(pdp) = self.build_pdp() {
            if self.cp_len + 1 < pdp.len() {
                problems.push(format!(
                    "cp_len ({}) must be >= channel length - 1 ({})",
                    self.cp_len,
                    pdp.len() - 1
                ));
            }
            if pdp.len() > self.k {
                problems.push(format!(
                    "channel length ({}) exceeds k ({})",
                    pdp.len(),
                    self.k
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    pub fn sample_rate(&self) -> f64 {
        self.k as f64 * self.subcarrier_spacing
    }

    pub fn build_pdp(&self) -> Result<PowerDelayProfile> {
        let profile: PdpProfile = self.profile.parse()?;
        let pdp = build_pdp(&profile, self.sample_rate())?;
        match self.channel_len {
            Some(len) if len < pdp.len() => pdp.truncated(len),
            _ => Ok(pdp),
        }
    }

    pub fn gains_vec(&self) -> Vec<f64> {
        self.gains.clone().unwrap_or_else(|| vec![1.0; self.p])
    }

    pub fn numerology(&self) -> Result<Numerology> {
        Numerology::new(
            self.k,
            self.active_subcarriers,
            self.cp_len,
            self.subcarrier_spacing,
            self.blocks_per_frame,
        )
    }

    pub fn spatial(&self) -> Option<CMat> {
        self.d_wavelengths.map(|d| spatial_correlation(self.m, d))
    }

    /// Resolve the step size from the configured rule.
    pub fn resolve_mu(&self, spatial: Option<&CMat>) -> Result<f64> {
        let rule = match self.mu_rule.as_str() {
            "independent" => StepSizeRule::Independent,
            "independent_noisy" => StepSizeRule::IndependentNoisy(self.sigma_h2),
            "manual" => StepSizeRule::Manual(self.mu),
            "correlated" => match spatial {
                Some(r) => StepSizeRule::Correlated(r),
                None => StepSizeRule::Independent,
            },
            "correlated_noisy" => match spatial {
                Some(r) => StepSizeRule::CorrelatedNoisy(r, self.sigma_h2),
                None => StepSizeRule::IndependentNoisy(self.sigma_h2),
            },
            other => {
                return Err(Error::InvalidConfig(format!("unknown mu_rule `{other}`")));
            }
        };
        step_size(&rule)
    }

    fn approach_spec(&self) -> Result<ApproachSpec> {
        Ok(match self.approach.as_str() {
            "proposed" => ApproachSpec::Proposed {
                init: match self.init_mode.as_str() {
                    "oracle" => InitMode::Oracle,
                    _ => InitMode::OrderRecursion(self.init_q),
                },
                half_window: self.effective_half_window()?,
                reinit_period: self.reinit_period,
            },
            "zf" => ApproachSpec::ZfShared { b: self.b },
            "mf" => ApproachSpec::Mf,
            "tpe" => ApproachSpec::Tpe { q: self.q },
            other => return Err(Error::InvalidConfig(format!("unknown approach `{other}`"))),
        })
    }

    pub fn effective_half_window(&self) -> Result<usize> {
        Ok(match self.half_window {
            Some(w) => w,
            None => self.build_pdp()?.len(),
        })
    }

    pub fn mse_subcarriers(&self) -> Vec<usize> {
        if self.mse_stride == 0 {
            Vec::new()
        } else {
            (0..self.k).step_by(self.mse_stride).collect()
        }
    }

    /// Frame spec at this config's single operating point.
    pub fn frame_spec(&self) -> Result<FrameSpec> {
        self.validate()?;
        let spatial = self.spatial();
        let mu = self.resolve_mu(spatial.as_ref())?;
        Ok(FrameSpec {
            antennas: self.m,
            users: self.p,
            numerology: self.numerology()?,
            pdp: self.build_pdp()?,
            fd_hz: self.fd_hz,
            spatial,
            gains: self.gains_vec(),
            sigma_h2: self.sigma_h2,
            esn0_db: if self.skip_ser {
                None
            } else {
                self.esn0_db.first().copied()
            },
            approach: self.approach_spec()?,
            mu,
            seed: self.seed,
            mse_subcarriers: self.mse_subcarriers(),
        })
    }
}
