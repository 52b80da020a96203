//! Run configuration: one JSON file with every default filled in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thinplates::fields::Material;
use thinplates::limit_solvers::ForceModel;
use thinplates::mesh::MeshOptions;
use thinplates::reference3d::MeshParams;
use thinplates::skeleton::{Skeleton, SkeletonFile};
use thinplates::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Skeleton JSON file, relative to the config file.
    #[serde(default)]
    pub skeleton: Option<PathBuf>,
    #[serde(default = "default_material")]
    pub material: Material,
    #[serde(default)]
    pub forces: ForceModel,
    /// Target edge length of the skeleton triangulation.
    #[serde(default = "default_mesh_size")]
    pub mesh_size: f64,
    /// Refine the skeleton mesh toward multi-face vertices.
    #[serde(default = "default_true")]
    pub grading: bool,
    #[serde(default = "default_delta_list")]
    pub delta_list: Vec<f64>,
    /// Overrides the junction-layer factor stored in the skeleton file.
    #[serde(default)]
    pub eta0: Option<f64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub mode: ModeFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModeFlags {
    /// Single-threaded deterministic run.
    pub verify: bool,
    /// Trend flags of `converge` use the rows without the junction layer.
    pub junction_excluded: bool,
    /// In-plane spacing of the 3D plate grids.
    pub mesh3d_size: f64,
    /// Through-thickness cells of the 3D plate grids.
    pub nz: usize,
    /// Seed of the random fields of `check-lemmas`.
    pub seed: u64,
    /// Random fields per α in `check-lemmas`.
    pub lemma_fields: usize,
}

impl Default for ModeFlags {
    fn default() -> Self {
        let p = MeshParams::default();
        Self { verify: false, junction_excluded: true, mesh3d_size: p.mesh_size, nz: p.nz, seed: 0, lemma_fields: 50 }
    }
}

fn default_material() -> Material {
    Material { lambda: 1.0, mu: 1.0 }
}

fn default_mesh_size() -> f64 {
    1.0 / 16.0
}

fn default_true() -> bool {
    true
}

fn default_delta_list() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            skeleton: None,
            material: default_material(),
            forces: ForceModel::default(),
            mesh_size: default_mesh_size(),
            grading: true,
            delta_list: default_delta_list(),
            eta0: None,
            out: default_out(),
            mode: ModeFlags::default(),
        }
    }
}

impl RunConfig {
    /// Reads the config and resolves the skeleton path against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Input(format!("config {}: {e}", path.display())))?;
        if let (Some(s), Some(dir)) = (&config.skeleton, path.parent()) {
            if s.is_relative() {
                config.skeleton = Some(dir.join(s));
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.material.lambda, self.material.mu, self.mesh_size, self.mode.mesh3d_size]
            .iter()
            .chain(&self.delta_list)
            .chain(self.eta0.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Input("config contains a non-finite number".into()));
        }
        Material::new(self.material.lambda, self.material.mu)?;
        if self.mesh_size <= 0.0 || self.mode.mesh3d_size <= 0.0 {
            return Err(Error::Input("mesh sizes must be positive".into()));
        }
        if self.mode.nz == 0 {
            return Err(Error::Input("nz must be at least 1".into()));
        }
        if self.delta_list.is_empty() || self.delta_list.iter().any(|&d| d <= 0.0) {
            return Err(Error::Input("delta_list must hold positive values".into()));
        }
        if !self.delta_list.windows(2).all(|w| w[1] < w[0]) {
            return Err(Error::Input("delta_list must be strictly decreasing".into()));
        }
        if matches!(self.eta0, Some(e) if e <= 0.0) {
            return Err(Error::Input("eta0 must be positive".into()));
        }
        Ok(())
    }

    /// Loads the skeleton, applies the η0 override and checks δ ≤ δ0.
    pub fn skeleton(&self) -> Result<Skeleton> {
        let path = self.skeleton.as_ref().ok_or_else(|| Error::Input("config has no skeleton path".into()))?;
        let mut file = SkeletonFile::load(path).map_err(|e| match e {
            Error::Io(io) => Error::Input(format!("cannot read skeleton {}: {io}", path.display())),
            other => other,
        })?;
        if let Some(eta0) = self.eta0 {
            file.eta0 = eta0;
        }
        if let Some(d) = self.delta_list.iter().find(|&&d| d > file.delta0) {
            return Err(Error::Input(format!("delta {d} exceeds delta0 = {}", file.delta0)));
        }
        Skeleton::from_file(&file)
    }

    pub fn mesh_options(&self) -> MeshOptions {
        MeshOptions { mesh_size: self.mesh_size, grading: self.grading }
    }

    pub fn mesh_params(&self) -> MeshParams {
        MeshParams { mesh_size: self.mode.mesh3d_size, nz: self.mode.nz }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_an_empty_object() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.delta_list, vec![0.2, 0.1, 0.05]);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn round_trips_through_json() {
        let mut c = RunConfig::default();
        c.eta0 = Some(3.0);
        c.mode.verify = true;
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_delta_lists() {
        let mut c = RunConfig::default();
        c.delta_list = vec![0.1, 0.2];
        assert!(c.validate().is_err());
        c.delta_list = vec![0.1, 0.1];
        assert!(c.validate().is_err());
        c.delta_list = vec![f64::NAN];
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_errors() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"mesh_sise": 0.1}"#).is_err());
    }
}
