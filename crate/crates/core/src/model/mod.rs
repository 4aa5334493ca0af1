//! Domain types shared by every stage of the pipeline: the sample, policies
//! and policy grids, and the interval/cutoff results.

mod data;
mod decision;
mod policy;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::normal_quantile;

pub use data::{Dataset, Observation, Outcome};
pub use decision::DecisionTable;
pub use policy::{evaluate_policy, grid_box, grid_threshold, Policy, PolicyGrid};

/// Interval-producing methods compared in studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "union")]
    Union,
    #[serde(rename = "joint")]
    Joint,
    #[serde(rename = "one-step")]
    OneStep,
    #[serde(rename = "os-split")]
    OsSplit,
    #[serde(rename = "oracle")]
    Oracle,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Union, Method::Joint, Method::OneStep, Method::OsSplit, Method::Oracle];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Union => "union",
            Method::Joint => "joint",
            Method::OneStep => "one-step",
            Method::OsSplit => "os-split",
            Method::Oracle => "oracle",
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

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}' (expected union, joint, one-step, os-split, oracle)")))
    }
}

/// A confidence interval for `[psi_l, psi_u]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub method: Method,
}

impl Interval {
    pub fn new(lower: f64, upper: f64, method: Method) -> Result<Self> {
        if !(lower <= upper) {
            return Err(Error::invalid(format!("interval bounds out of order: [{lower}, {upper}]")));
        }
        Ok(Self { lower, upper, method })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Whether the whole of `[lo, hi]` lies inside this interval.
    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        self.lower <= lo && hi <= self.upper
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.covers(other.lower, other.upper)
    }
}

/// Band cutoffs: the union method's `(t_beta, z_{alpha,beta})` and the joint
/// method's `(s, t, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Cutoffs {
    pub t_beta: f64,
    pub z_alpha_beta: f64,
    pub s_dag: f64,
    pub t_dag: f64,
    pub u_dag: f64,
}

/// `z_{alpha,beta}`: the standard normal quantile at `1 - (alpha - beta)/2`.
pub fn z_alpha_beta(alpha: f64, beta: f64) -> Result<f64> {
    if !(0.0 < beta && beta < alpha && alpha < 1.0) {
        return Err(Error::invalid(format!("need 0 < beta < alpha < 1, got alpha={alpha}, beta={beta}")));
    }
    Ok(normal_quantile(1.0 - (alpha - beta) / 2.0))
}
