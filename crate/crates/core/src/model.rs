//! Location-scale Gaussian models `Z_t = m(theta) + s(theta) * e_t`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse_expr, Expr, ExprError, ParamEnv};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("in {field} expression: {source}")]
    Expr {
        field: &'static str,
        #[source]
        source: ExprError,
    },
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// One declared parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDecl {
    pub name: String,
    pub true_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

/// On-disk model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub parameters: Vec<ParamDecl>,
    pub mean: String,
    pub scale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_prior: Option<String>,
}

/// A validated model: parsed expressions whose parameters all resolve and whose
/// scale is strictly positive at the true values.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub params: Vec<ParamDecl>,
    names: Vec<String>,
    pub mean: Expr,
    pub scale: Expr,
    pub log_prior: Expr,
}

impl ModelSpec {
    pub fn from_file(file: ModelFile) -> Result<Self, ModelError> {
        if file.parameters.is_empty() {
            return Err(ModelError::Invalid("no parameters declared".into()));
        }
        let names: Vec<String> = file.parameters.iter().map(|p| p.name.clone()).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(ModelError::Invalid(format!("duplicate parameter '{n}'")));
            }
            if !is_identifier(n) {
                return Err(ModelError::Invalid(format!("bad parameter name '{n}'")));
            }
        }
        for p in &file.parameters {
            if !p.true_value.is_finite() {
                return Err(ModelError::Invalid(format!(
                    "true value of '{}' is not finite",
                    p.name
                )));
            }
            if let (Some(lo), Some(hi)) = (p.lower, p.upper) {
                if lo >= hi {
                    return Err(ModelError::Invalid(format!(
                        "empty bounds for '{}'",
                        p.name
                    )));
                }
            }
            if p.lower.is_some_and(|lo| p.true_value < lo)
                || p.upper.is_some_and(|hi| p.true_value > hi)
            {
                return Err(ModelError::Invalid(format!(
                    "true value of '{}' lies outside its bounds",
                    p.name
                )));
            }
        }
        let parse = |field: &'static str, text: &str| -> Result<Expr, ModelError> {
            let e = parse_expr(text).map_err(|source| ModelError::Expr { field, source })?;
            e.check_params(&names)
                .map_err(|source| ModelError::Expr { field, source })?;
            Ok(e)
        };
        let mean = parse("mean", &file.mean)?;
        let scale = parse("scale", &file.scale)?;
        let log_prior = match &file.log_prior {
            Some(t) => parse("log_prior", t)?,
            None => Expr::Num(0.0),
        };
        let spec = Self {
            name: file.name.unwrap_or_else(|| "model".into()),
            params: file.parameters,
            names,
            mean,
            scale,
            log_prior,
        };
        let truth = spec.true_values();
        let env = spec.env(&truth);
        let s = spec.scale.eval(&env).map_err(|source| ModelError::Expr {
            field: "scale",
            source,
        })?;
        if s <= 0.0 {
            return Err(ModelError::Invalid(format!(
                "scale must be positive at the true values, got {s}"
            )));
        }
        spec.mean.eval(&env).map_err(|source| ModelError::Expr {
            field: "mean",
            source,
        })?;
        spec.log_prior
            .eval(&env)
            .map_err(|source| ModelError::Expr {
                field: "log_prior",
                source,
            })?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut spec = Self::from_json(&text)?;
        if spec.name == "model" {
            if let Some(stem) = path.file_stem() {
                spec.name = stem.to_string_lossy().into_owned();
            }
        }
        Ok(spec)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            name: Some(self.name.clone()),
            parameters: self.params.clone(),
            mean: self.mean.to_string(),
            scale: self.scale.to_string(),
            log_prior: Some(self.log_prior.to_string()),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn true_values(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.true_value).collect()
    }

    pub fn env<'a>(&'a self, values: &'a [f64]) -> ParamEnv<'a> {
        ParamEnv::new(&self.names, values)
    }

    pub fn lower_bounds(&self) -> Vec<Option<f64>> {
        self.params.iter().map(|p| p.lower).collect()
    }

    pub fn upper_bounds(&self) -> Vec<Option<f64>> {
        self.params.iter().map(|p| p.upper).collect()
    }

    /// `(m(theta), s(theta))`.
    pub fn location_scale(&self, values: &[f64]) -> Result<(f64, f64), ExprError> {
        let env = self.env(values);
        Ok((self.mean.eval(&env)?, self.scale.eval(&env)?))
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && crate::expr::Func::from_name(s).is_none()
}

/// Models shipped with the crate, as `(file stem, JSON text)`.
pub mod bundled {
    use super::ModelSpec;

    /// `Z = sqrt(b) e`, unknown variance.
    pub const VARIANCE: &str = include_str!("../models/variance.json");
    /// `Z = a + sqrt(b) e`, unknown mean and variance.
    pub const MEAN_VARIANCE: &str = include_str!("../models/mean_variance.json");
    /// `Z = o1 + o2 + e`; only the sum is identifiable.
    pub const SUM_RIDGE: &str = include_str!("../models/sum_ridge.json");
    /// `Z = 1/w + e`; the estimator is undefined when the observations sum to zero.
    pub const RECIPROCAL: &str = include_str!("../models/reciprocal.json");
    /// `Z = a/b + sqrt(a) e`.
    pub const RATIO_SQRT_A: &str = include_str!("../models/ratio_sqrt_a.json");
    /// `Z = a/b + sqrt(a b) e`.
    pub const RATIO_SQRT_AB: &str = include_str!("../models/ratio_sqrt_ab.json");
    /// `Z = a/b + sqrt(a/b) e`; depends on the ratio only.
    pub const RATIO_RIDGE: &str = include_str!("../models/ratio_ridge.json");
    /// `Z = a b + e`; depends on the product only.
    pub const PRODUCT_RIDGE: &str = include_str!("../models/product_ridge.json");

    pub const ALL: &[(&str, &str)] = &[
        ("variance", VARIANCE),
        ("mean_variance", MEAN_VARIANCE),
        ("sum_ridge", SUM_RIDGE),
        ("reciprocal", RECIPROCAL),
        ("ratio_sqrt_a", RATIO_SQRT_A),
        ("ratio_sqrt_ab", RATIO_SQRT_AB),
        ("ratio_ridge", RATIO_RIDGE),
        ("product_ridge", PRODUCT_RIDGE),
    ];

    pub fn load(name: &str) -> Option<ModelSpec> {
        ALL.iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| ModelSpec::from_json(text).expect("bundled model is valid"))
    }
}
