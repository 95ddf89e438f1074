use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::pitchgrid::GridKind;

/// Training and decoding method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Weighted histogram loss, target width fixed to the bin width.
    M1,
    /// Weighted histogram loss, target width from the stop-gradient error.
    M2,
    /// Voicing classifier plus voiced-only pitch histogram.
    M3,
    /// Scalar regression with squared error.
    #[serde(rename = "M_MSE")]
    MMse,
    /// Scalar regression with Gaussian negative log-likelihood.
    #[serde(rename = "M_NLL")]
    MNll,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::M1, Method::M2, Method::M3, Method::MMse, Method::MNll];

    /// Bin grid used for targets and decoding.
    pub fn grid_kind(self) -> GridKind {
        match self {
            Method::M3 => GridKind::VoicedOnly,
            _ => GridKind::Unified,
        }
    }

    /// Whether the method predicts a histogram over pitch bins.
    pub fn is_histogram(self) -> bool {
        matches!(self, Method::M1 | Method::M2 | Method::M3)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::M1 => "M1",
            Method::M2 => "M2",
            Method::M3 => "M3",
            Method::MMse => "M_MSE",
            Method::MNll => "M_NLL",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "M1" => Ok(Method::M1),
            "M2" => Ok(Method::M2),
            "M3" => Ok(Method::M3),
            "M_MSE" | "MSE" => Ok(Method::MMse),
            "M_NLL" | "NLL" => Ok(Method::MNll),
            _ => Err(Error::Config(format!(
                "unknown method {s:?} (expected one of M1, M2, M3, M_MSE, M_NLL)"
            ))),
        }
    }
}
