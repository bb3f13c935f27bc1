use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{ConvParams, PoolParams};

/// One FP32 layer of a model description.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<usize>,
}

impl LayerSpec {
    pub fn new(op: &str) -> Self {
        Self {
            op: op.into(),
            out_channels: None,
            kernel: None,
            stride: None,
            padding: None,
            window: None,
            units: None,
        }
    }

    pub fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            out_channels: Some(out_channels),
            kernel: Some(kernel),
            stride: Some(stride),
            padding: Some(padding),
            ..Self::new("Conv2D")
        }
    }

    pub fn maxpool(window: usize, stride: usize) -> Self {
        Self {
            window: Some(window),
            stride: Some(stride),
            ..Self::new("MaxPool")
        }
    }

    pub fn dense(units: usize) -> Self {
        Self {
            units: Some(units),
            ..Self::new("Dense")
        }
    }
}

/// An FP32 model: per-sample input shape, class count and ordered layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub input: Vec<usize>,
    pub classes: usize,
    #[serde(rename = "layer", default)]
    pub layers: Vec<LayerSpec>,
}

fn default_name() -> String {
    "model".into()
}

/// A layer with its hyperparameters resolved against its input shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResolvedLayer {
    Conv2D {
        params: ConvParams,
        /// `[O, C, K, K]`
        weight: Vec<usize>,
    },
    MaxPool(PoolParams),
    ReLU,
    Flatten,
    Dense {
        /// `[in, units]`
        weight: Vec<usize>,
    },
}

impl ResolvedLayer {
    pub fn weight_shape(&self) -> Option<&[usize]> {
        match self {
            ResolvedLayer::Conv2D { weight, .. } | ResolvedLayer::Dense { weight } => Some(weight),
            _ => None,
        }
    }
}

fn need(v: Option<usize>, loc: &str) -> Result<usize> {
    match v {
        Some(0) => Err(Error::config(loc, "must be positive")),
        Some(x) => Ok(x),
        None => Err(Error::config(loc, "missing")),
    }
}

impl ModelSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let m: ModelSpec =
            toml::from_str(text).map_err(|e| Error::config("model", e.message().to_string()))?;
        if m.input.is_empty() || m.input.contains(&0) {
            return Err(Error::config("model.input", "dimensions must be positive"));
        }
        if m.classes < 2 {
            return Err(Error::config("model.classes", "need at least two classes"));
        }
        Ok(m)
    }

    /// Resolves every layer and returns it with its per-sample output shape.
    pub fn resolve(&self) -> Result<Vec<(ResolvedLayer, Vec<usize>)>> {
        let mut shape = self.input.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let loc = |f: &str| format!("layer[{i}].{f}");
            let image = |shape: &[usize]| -> Result<(usize, usize, usize)> {
                match *shape {
                    [c, h, w] => Ok((c, h, w)),
                    _ => Err(Error::Translate(format!(
                        "layer {i} ({}) needs a [C, H, W] input, got {shape:?}",
                        l.op
                    ))),
                }
            };
            let (layer, next) = match l.op.as_str() {
                "Conv2D" => {
                    let (c, h, w) = image(&shape)?;
                    let o = need(l.out_channels, &loc("out_channels"))?;
                    let k = need(l.kernel, &loc("kernel"))?;
                    let params =
                        ConvParams::new(l.stride.unwrap_or(1).max(1), l.padding.unwrap_or(0));
                    let (oh, ow) = params
                        .output_hw((h, w), (k, k))
                        .map_err(|e| Error::Translate(format!("layer {i}: {e}")))?;
                    (
                        ResolvedLayer::Conv2D {
                            params,
                            weight: vec![o, c, k, k],
                        },
                        vec![o, oh, ow],
                    )
                }
                "MaxPool" => {
                    let (c, h, w) = image(&shape)?;
                    let win = need(l.window, &loc("window"))?;
                    let p = PoolParams::new(win, l.stride.unwrap_or(win).max(1));
                    let (oh, ow) = p
                        .output_hw((h, w))
                        .map_err(|e| Error::Translate(format!("layer {i}: {e}")))?;
                    (ResolvedLayer::MaxPool(p), vec![c, oh, ow])
                }
                "ReLU" => (ResolvedLayer::ReLU, shape.clone()),
                "Flatten" => (ResolvedLayer::Flatten, vec![shape.iter().product()]),
                "Dense" => {
                    let [inp] = shape[..] else {
                        return Err(Error::Translate(format!(
                            "layer {i} (Dense) needs a flat input, got {shape:?}"
                        )));
                    };
                    let units = need(l.units, &loc("units"))?;
                    (
                        ResolvedLayer::Dense {
                            weight: vec![inp, units],
                        },
                        vec![units],
                    )
                }
                other => {
                    return Err(Error::Translate(format!(
                        "layer {i}: unknown FP32 op `{other}`"
                    )))
                }
            };
            shape = next.clone();
            out.push((layer, next));
        }
        Ok(out)
    }
}

/// Small CNN used for the convergence comparison: two convolutions, a pool
/// and a dense classifier over 8x8 single-channel images.
pub fn toy_cnn() -> ModelSpec {
    ModelSpec {
        name: "toy_cnn".into(),
        input: vec![1, 8, 8],
        classes: 10,
        layers: vec![
            LayerSpec::conv(8, 3, 1, 1),
            LayerSpec::new("ReLU"),
            LayerSpec::conv(16, 3, 1, 1),
            LayerSpec::new("ReLU"),
            LayerSpec::maxpool(2, 2),
            LayerSpec::new("Flatten"),
            LayerSpec::dense(10),
        ],
    }
}

/// Two-layer perceptron for low-dimensional feature vectors.
pub fn mlp(features: usize, hidden: usize, classes: usize) -> ModelSpec {
    ModelSpec {
        name: "mlp".into(),
        input: vec![features],
        classes,
        layers: vec![
            LayerSpec::dense(hidden),
            LayerSpec::new("ReLU"),
            LayerSpec::dense(classes),
        ],
    }
}

/// VGG-style stack of 3x3, 64-channel convolutions at 32x32, 16x16 and 8x8.
pub fn vgg_like() -> ModelSpec {
    ModelSpec {
        name: "vgg_like".into(),
        input: vec![3, 32, 32],
        classes: 10,
        layers: vec![
            LayerSpec::conv(64, 3, 1, 1),
            LayerSpec::new("ReLU"),
            LayerSpec::conv(64, 3, 1, 1),
            LayerSpec::new("ReLU"),
            LayerSpec::maxpool(2, 2),
            LayerSpec::conv(64, 3, 1, 1),
            LayerSpec::new("ReLU"),
            LayerSpec::maxpool(2, 2),
            LayerSpec::conv(64, 3, 1, 1),
            LayerSpec::new("ReLU"),
            LayerSpec::maxpool(2, 2),
            LayerSpec::new("Flatten"),
            LayerSpec::dense(10),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_shapes_compose() {
        let r = toy_cnn().resolve().unwrap();
        assert_eq!(r.last().unwrap().1, vec![10]);
        assert_eq!(r[4].1, vec![16, 4, 4]);
    }

    #[test]
    fn parse_toml_model() {
        let text = "input = [4]\nclasses = 2\n[[layer]]\nop = \"Dense\"\nunits = 2\n";
        let m = ModelSpec::parse(text).unwrap();
        assert_eq!(m.layers[0], LayerSpec::dense(2));
    }

    #[test]
    fn missing_kernel_located() {
        let mut m = toy_cnn();
        m.layers[0].kernel = None;
        match m.resolve() {
            Err(Error::Config { location, .. }) => assert_eq!(location, "layer[0].kernel"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dense_on_image_rejected() {
        let mut m = toy_cnn();
        m.layers.insert(0, LayerSpec::dense(3));
        assert!(matches!(m.resolve(), Err(Error::Translate(_))));
    }
}
