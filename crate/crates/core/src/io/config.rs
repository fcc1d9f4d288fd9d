//! TOML run configuration. Every section and key is optional; missing keys
//! take the documented defaults and unknown keys are rejected.
//!
//! ```toml
//! seed = 1
//! output_dir = "out"
//!
//! [acquisition]   # ny, nx, ncoils, nshots, r, pf, noise_sigma, phase_cycles
//! [protocol]      # b_value, directions
//! [phantom]       # ellipses = [...]; defaults to the built-in scene
//! [recon]         # lambda1, lambda2, unroll_count, cg_steps, cg_tol, sense_tikhonov, hidden, depth, alpha, mode
//! [train]         # lr, max_epochs, patience, n_g1, ratio_g2, ratio_g1, w_nrmse, w_nmae, record_initial
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recon::ReconConfig;
use crate::simulate::{AcquisitionSpec, DiffusionProtocol, PhantomScene};
use crate::ssltrain::TrainConfig;

/// Name of the echoed configuration inside an output directory.
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// s/mm^2.
    pub b_value: f64,
    /// Diffusion directions on a hemisphere lattice; one b=0 volume is added.
    pub directions: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            b_value: 1000.0,
            directions: 12,
        }
    }
}

impl ProtocolConfig {
    pub fn build(&self) -> Result<DiffusionProtocol> {
        DiffusionProtocol::hemisphere(self.b_value, self.directions)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: String,
    pub acquisition: AcquisitionSpec,
    pub protocol: ProtocolConfig,
    pub phantom: PhantomScene,
    pub recon: ReconConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: "out".into(),
            acquisition: AcquisitionSpec::default(),
            protocol: ProtocolConfig::default(),
            phantom: PhantomScene::default(),
            recon: ReconConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.acquisition.validate()?;
        self.protocol.build()?;
        self.recon.validate()?;
        self.train.validate()
    }

    /// Fully resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(RESOLVED_CONFIG), self.to_toml())?;
        Ok(())
    }
}
