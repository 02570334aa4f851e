//! On-disk form of a set of variational parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::ParamLayout;
use super::params::VariationalParams;
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};

pub const PARAMS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub format_version: u32,
    pub layout: ParamLayout,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl From<&VariationalParams> for ParamsFile {
    fn from(p: &VariationalParams) -> Self {
        ParamsFile {
            format_version: PARAMS_FORMAT_VERSION,
            layout: p.layout().clone(),
            means: p.means().to_vec(),
            stds: p.stds().to_vec(),
        }
    }
}

impl TryFrom<ParamsFile> for VariationalParams {
    type Error = Error;

    fn try_from(f: ParamsFile) -> Result<Self> {
        if f.format_version != PARAMS_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported parameter file version {}",
                f.format_version
            )));
        }
        VariationalParams::new(f.means, f.stds, f.layout)
    }
}

pub fn save_params(path: &Path, params: &VariationalParams) -> Result<()> {
    write_json(path, &ParamsFile::from(params))
}

pub fn load_params(path: &Path) -> Result<VariationalParams> {
    read_json::<ParamsFile>(path)?.try_into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::varcore::{init_params, NetworkSpec};

    #[test]
    fn params_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let p = init_params(&NetworkSpec::desk_default(9), 5).unwrap();
        save_params(&path, &p).unwrap();
        let q = load_params(&path).unwrap();
        assert_eq!(p.layout(), q.layout());
        assert!(p.means().iter().zip(q.means()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(p.stds().iter().zip(q.stds()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_unknown_version() {
        let p = init_params(&NetworkSpec::desk_default(3), 5).unwrap();
        let mut f = ParamsFile::from(&p);
        f.format_version = 99;
        assert!(VariationalParams::try_from(f).is_err());
    }
}
