//! Serializable model description.
//!
//! ```toml
//! [model]
//! kind = "generic_lq"          # scalar_lq | cubic | generic_lq | generic_scalar_poly
//! a = [[0.5]]
//! b = [[1.0]]
//! q = [[1.0]]
//! r = [[1.0]]
//! s = [0.0]                    # optional linear state cost
//! r_lin = [0.0]                # optional linear control cost
//! control_box = { lower = [-1.0], upper = [1.0] }   # optional
//! ```
//!
//! `generic_scalar_poly` takes `dynamics` and `cost` tables where entry
//! `[i][j]` multiplies `xⁱ uʲ`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::Matrix;
use crate::lq::LqProblem;
use crate::model::{builtin, ControlBox, SystemModel};
use crate::scalar::{lit, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    ScalarLq {
        #[serde(default)]
        control_box: Option<BoxConfig>,
    },
    Cubic {
        #[serde(default)]
        control_box: Option<BoxConfig>,
    },
    GenericLq {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        #[serde(default)]
        s: Option<Vec<f64>>,
        #[serde(default)]
        r_lin: Option<Vec<f64>>,
        #[serde(default)]
        control_box: Option<BoxConfig>,
    },
    GenericScalarPoly {
        dynamics: Vec<Vec<f64>>,
        cost: Vec<Vec<f64>>,
        #[serde(default)]
        control_box: Option<BoxConfig>,
    },
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::ScalarLq { .. } => "scalar_lq",
            Self::Cubic { .. } => "cubic",
            Self::GenericLq { .. } => "generic_lq",
            Self::GenericScalarPoly { .. } => "generic_scalar_poly",
        }
    }

    fn control_box(&self) -> Option<&BoxConfig> {
        match self {
            Self::ScalarLq { control_box }
            | Self::Cubic { control_box }
            | Self::GenericLq { control_box, .. }
            | Self::GenericScalarPoly { control_box, .. } => control_box.as_ref(),
        }
    }

    /// LQ data for the linear-quadratic kinds.
    pub fn lq_problem<T: Scalar>(&self) -> Result<Option<LqProblem<T>>> {
        Ok(match self {
            Self::ScalarLq { .. } => builtin::scalar_lq::<T>().lq().cloned(),
            Self::GenericLq {
                a,
                b,
                q,
                r,
                s,
                r_lin,
                ..
            } => {
                let a = Matrix::from_f64_rows(a)?;
                let b = Matrix::from_f64_rows(b)?;
                let s = s.clone().unwrap_or_else(|| vec![0.0; a.rows()]);
                let r_lin = r_lin.clone().unwrap_or_else(|| vec![0.0; b.cols()]);
                Some(LqProblem::new(
                    a,
                    b,
                    Matrix::from_f64_rows(q)?,
                    Matrix::from_f64_rows(r)?,
                    s.iter().map(|&v| lit(v)).collect(),
                    r_lin.iter().map(|&v| lit(v)).collect(),
                )?)
            }
            _ => None,
        })
    }

    pub fn build<T: Scalar>(&self) -> Result<SystemModel<T>> {
        let model = match self {
            Self::ScalarLq { .. } => builtin::scalar_lq(),
            Self::Cubic { .. } => builtin::cubic(),
            Self::GenericLq { .. } => builtin::generic_lq(
                self.lq_problem()?
                    .expect("generic_lq always yields LQ data"),
            ),
            Self::GenericScalarPoly { dynamics, cost, .. } => {
                let conv = |t: &Vec<Vec<f64>>| -> Vec<Vec<T>> {
                    t.iter().map(|r| r.iter().map(|&v| lit(v)).collect()).collect()
                };
                builtin::scalar_poly(conv(dynamics), conv(cost))
            }
        };
        match self.control_box() {
            None => Ok(model),
            Some(b) => model.with_control_box(ControlBox::new(
                b.lower.iter().map(|&v| lit(v)).collect(),
                b.upper.iter().map(|&v| lit(v)).collect(),
            )?),
        }
    }
}
