use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::registry::OpKind;
use crate::error::{Error, Result};
use crate::rescale::RescaleConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NumericType {
    #[serde(rename = "INT8")]
    Int8,
    #[serde(rename = "FP32")]
    Fp32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initializer {
    XavierNormal,
    XavierUniform,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackpropRule {
    /// Chain producing the error for the layer below.
    #[serde(default)]
    pub error: Vec<OpKind>,
    /// Chain producing the weight gradient; empty for weightless layers.
    #[serde(default)]
    pub weight: Vec<OpKind>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub initializer: Initializer,
    #[serde(rename = "type")]
    pub ty: NumericType,
    pub update: NumericType,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub loss: String,
    pub optimizer: String,
    /// INT8 update: the gradient is shifted right by this many extra bits.
    pub lr_shift: Option<i32>,
    /// FP32 update: plain learning rate.
    pub lr: Option<f32>,
    #[serde(default)]
    pub rescale: RescaleConfig,
}

/// The four elements that define a mixed-precision training algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub version: u32,
    pub name: String,
    pub translation: BTreeMap<String, Vec<OpKind>>,
    pub backprop: BTreeMap<String, BackpropRule>,
    pub weight: WeightConfig,
    pub optimizer: OptimizerConfig,
}

#[derive(Deserialize)]
struct RawConfig {
    version: Option<u32>,
    name: Option<String>,
    translation: Option<BTreeMap<String, Vec<String>>>,
    backprop: Option<BTreeMap<String, RawBackprop>>,
    weight: Option<toml::Value>,
    optimizer: Option<toml::Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBackprop {
    #[serde(default)]
    error: Vec<String>,
    #[serde(default)]
    weight: Vec<String>,
}

fn line_col(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, str::len) + 1;
    format!("line {line}, column {col}")
}

fn ops(list: &[String], location: &str) -> Result<Vec<OpKind>> {
    list.iter()
        .enumerate()
        .map(|(i, s)| {
            s.parse::<OpKind>()
                .map_err(|m| Error::config(format!("{location}[{i}]"), m))
        })
        .collect()
}

fn section<T: serde::de::DeserializeOwned>(v: Option<toml::Value>, name: &str) -> Result<T> {
    let v = v.ok_or_else(|| Error::config(name, "missing section"))?;
    v.try_into::<T>()
        .map_err(|e| Error::config(name, e.message().to_string()))
}

/// Parses and validates a training config document.
pub fn parse_config(text: &str) -> Result<TrainingConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let loc = e
            .span()
            .map(|s| line_col(text, s.start))
            .unwrap_or_else(|| "document".into());
        Error::config(loc, e.message().to_string())
    })?;
    let version = raw
        .version
        .ok_or_else(|| Error::config("version", "missing"))?;
    if version != CONFIG_VERSION {
        return Err(Error::config(
            "version",
            format!("unsupported version {version}, expected {CONFIG_VERSION}"),
        ));
    }
    let translation_raw = raw
        .translation
        .ok_or_else(|| Error::config("translation", "missing section"))?;
    if translation_raw.is_empty() {
        return Err(Error::config("translation", "no operator translations"));
    }
    let mut translation = BTreeMap::new();
    for (op, list) in &translation_raw {
        let loc = format!("translation.{op}");
        if list.is_empty() {
            return Err(Error::config(loc, "empty translation"));
        }
        translation.insert(op.clone(), ops(list, &loc)?);
    }
    let backprop_raw = raw
        .backprop
        .ok_or_else(|| Error::config("backprop", "missing section"))?;
    let mut backprop = BTreeMap::new();
    for (op, rule) in &backprop_raw {
        if !translation.contains_key(op) {
            return Err(Error::config(
                format!("backprop.{op}"),
                "rule for an operator with no translation",
            ));
        }
        backprop.insert(
            op.clone(),
            BackpropRule {
                error: ops(&rule.error, &format!("backprop.{op}.error"))?,
                weight: ops(&rule.weight, &format!("backprop.{op}.weight"))?,
            },
        );
    }
    let weight: WeightConfig = section(raw.weight, "weight")?;
    if weight.ty == NumericType::Fp32 && weight.update == NumericType::Int8 {
        return Err(Error::config(
            "weight.update",
            "INT8 update cannot apply to FP32 weights",
        ));
    }
    let optimizer: OptimizerConfig = section(raw.optimizer, "optimizer")?;
    if optimizer.loss != "cross_entropy" {
        return Err(Error::config(
            "optimizer.loss",
            format!("unsupported loss `{}`", optimizer.loss),
        ));
    }
    if optimizer.optimizer != "sgd" {
        return Err(Error::config(
            "optimizer.optimizer",
            format!("unsupported optimizer `{}`", optimizer.optimizer),
        ));
    }
    match weight.update {
        NumericType::Int8 if optimizer.lr_shift.is_none() => {
            return Err(Error::config(
                "optimizer.lr_shift",
                "required for INT8 update",
            ));
        }
        NumericType::Fp32 if !optimizer.lr.is_some_and(|lr| lr > 0.0 && lr.is_finite()) => {
            return Err(Error::config(
                "optimizer.lr",
                "a positive learning rate is required for FP32 update",
            ));
        }
        _ => {}
    }
    if optimizer.rescale.history == 0 {
        return Err(Error::config(
            "optimizer.rescale.history",
            "must be at least 1",
        ));
    }
    Ok(TrainingConfig {
        version,
        name: raw.name.unwrap_or_else(|| "unnamed".into()),
        translation,
        backprop,
        weight,
        optimizer,
    })
}

/// The shipped NITI configuration: INT8 weights, activations, gradients and update.
pub const NITI_TOML: &str = include_str!("../../configs/niti.toml");

/// INT8 forward/backward with FP32 master weights.
pub const FP32_UPDATE_TOML: &str = include_str!("../../configs/fp32_update.toml");

pub fn niti() -> TrainingConfig {
    parse_config(NITI_TOML).expect("built-in config parses")
}

pub fn fp32_update() -> TrainingConfig {
    parse_config(FP32_UPDATE_TOML).expect("built-in config parses")
}

#[cfg(test)]
mod tests {
    use super::*;
    use OpKind::*;

    #[test]
    fn niti_conv_translation() {
        let cfg = niti();
        assert_eq!(
            cfg.translation["Conv2D"],
            vec![Int8Conv, ReduceMaxScale, Shift]
        );
        assert_eq!(cfg.translation["MaxPool"], vec![Int8MaxPool]);
        assert_eq!(cfg.backprop["Conv2D"].error[1], Int8Deconv);
        assert_eq!(cfg.backprop["Conv2D"].weight[0], Int8ConvBackpropFilter);
        assert_eq!(cfg.weight.update, NumericType::Int8);
        assert_eq!(fp32_update().weight.update, NumericType::Fp32);
    }

    fn loc(r: Result<TrainingConfig>) -> String {
        match r {
            Err(Error::Config { location, .. }) => location,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_translation_rejected() {
        let text = NITI_TOML.replace("[translation]", "[unused]");
        assert_eq!(loc(parse_config(&text)), "translation");
        let text = "version = 1\n[translation]\n";
        assert_eq!(loc(parse_config(text)), "translation");
    }

    #[test]
    fn int8_update_on_fp32_weights_rejected() {
        let text = NITI_TOML.replace("type = \"INT8\"", "type = \"FP32\"");
        assert_eq!(loc(parse_config(&text)), "weight.update");
    }

    #[test]
    fn unknown_op_located() {
        let text = NITI_TOML.replace("\"Int8MaxPool\"]", "\"Int4MaxPool\"]");
        assert_eq!(loc(parse_config(&text)), "translation.MaxPool[0]");
    }

    #[test]
    fn syntax_error_has_line() {
        let l = loc(parse_config("version = 1\nname = \n"));
        assert!(l.starts_with("line 2"), "{l}");
    }

    #[test]
    fn missing_sections() {
        let text = NITI_TOML
            .replace("[optimizer.rescale]", "[other]")
            .replace("[optimizer]", "[nope]");
        assert_eq!(loc(parse_config(&text)), "optimizer");
    }
}
