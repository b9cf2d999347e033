//! TOML run configuration. Every field is optional; missing ones take the
//! defaults below.
//!
//! ```toml
//! [fit]
//! pose_iterations = 300
//! [fit.weights]
//! w_arap = 5.0
//! [synth]
//! cameras = 7
//! [[synth.deformations]]
//! nodes = [13]
//! translation = [0.0, 0.05, 0.0]
//! [gradcheck]
//! configurations = 20
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fitter::FitConfig;
use crate::gradcheck::GradcheckConfig;
use crate::synthgen::SynthConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub synth: SynthConfig,
    pub gradcheck: GradcheckConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`, or returns the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::parse(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        self.synth.validate()
    }

    /// Full configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip_and_overrides() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.to_toml()).unwrap(), d);
        let c = RunConfig::parse(
            "[fit]\npose_iterations = 7\ncameras = [0, 2]\n[fit.weights]\nw_arap = 2.5\n\
             [synth]\nseed = 3\n[[synth.deformations]]\nnodes = [1, 2]\ntranslation = [0.0, 0.05, 0.0]\n",
        )
        .unwrap();
        assert_eq!(c.fit.pose_iterations, 7);
        assert_eq!(c.fit.cameras, Some(vec![0, 2]));
        assert_eq!(c.fit.weights.w_arap, 2.5);
        assert_eq!(c.fit.weights.w_kp, 1.0);
        assert_eq!(c.synth.deformations[0].nodes, vec![1, 2]);
        assert_ne!(c.hash(), d.hash());
        assert_eq!(d.hash(), RunConfig::default().hash());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(RunConfig::parse("[fit]\nbogus = 1\n"), Err(Error::InvalidConfig(_))));
        assert!(matches!(RunConfig::parse("[fit]\nkernel_size = 4\n"), Err(Error::InvalidConfig(_))));
        assert!(matches!(RunConfig::parse("[synth]\ncameras = 1\n"), Err(Error::InvalidConfig(_))));
    }
}
