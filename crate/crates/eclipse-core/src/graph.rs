//! The model graph: an ordered layer list with deterministic feed-forward
//! inference. Data flows through layers in order; a rank-3 value is
//! flattened row-major (`[P][H][W]`) whenever the next layer is linear.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layer::{
    forward_conv, forward_linear, forward_pool, ActivationKind, LayerNode, LinearLayer,
};
use crate::tensor::Tensor;

/// Storage precision marker for the container format. Computation is always
/// f64; the tag only controls how weights are written to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DtypeTag {
    F32,
    F64,
}

/// Feed-forward model: layers, the expected input shape, and the storage
/// precision tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    layers: Vec<LayerNode>,
    input_shape: Vec<usize>,
    dtype_tag: DtypeTag,
}

/// Shape of the value flowing between layers during validation.
#[derive(Debug, Clone, Copy, PartialEq)]
enum ValueShape {
    Flat(usize),
    Spatial([usize; 3]),
}

impl ValueShape {
    fn flat_len(self) -> usize {
        match self {
            ValueShape::Flat(n) => n,
            ValueShape::Spatial([c, h, w]) => c * h * w,
        }
    }
}

impl ModelGraph {
    /// Build a graph and verify adjacent layers are dimensionally compatible.
    pub fn new(layers: Vec<LayerNode>, input_shape: Vec<usize>, dtype_tag: DtypeTag) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput);
        }
        let model = ModelGraph {
            layers,
            input_shape,
            dtype_tag,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn layers(&self) -> &[LayerNode] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> Option<&LayerNode> {
        self.layers.get(index)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn dtype_tag(&self) -> DtypeTag {
        self.dtype_tag
    }

    pub fn with_dtype(mut self, tag: DtypeTag) -> Self {
        self.dtype_tag = tag;
        self
    }

    /// Indices of linear and convolutional layers.
    pub fn eligible_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_eligible())
            .map(|(i, _)| i)
            .collect()
    }

    /// Replace `take` layers starting at `index` with the given nodes.
    /// Revalidates the whole chain.
    pub fn splice(&self, index: usize, take: usize, replacement: Vec<LayerNode>) -> Result<ModelGraph> {
        let mut layers = Vec::with_capacity(self.layers.len() + replacement.len());
        layers.extend_from_slice(&self.layers[..index]);
        layers.extend(replacement);
        layers.extend_from_slice(&self.layers[index + take..]);
        ModelGraph::new(layers, self.input_shape.clone(), self.dtype_tag)
    }

    /// Flattened length of the value emitted by layer `index`.
    pub fn layer_output_len(&self, index: usize) -> Result<usize> {
        if index >= self.layers.len() {
            return Err(Error::DimensionMismatch {
                context: "layer index",
                expected: self.layers.len(),
                got: index,
            });
        }
        let mut shape = self.initial_shape()?;
        for (i, node) in self.layers.iter().take(index + 1).enumerate() {
            shape = step_shape(node, shape).map_err(|e| e.at_layer(i))?;
        }
        Ok(shape.flat_len())
    }

    /// Walk the layer chain with symbolic shapes; errors carry the index of
    /// the first incompatible layer.
    pub fn validate(&self) -> Result<()> {
        let mut shape = self.initial_shape()?;
        for (i, node) in self.layers.iter().enumerate() {
            shape = step_shape(node, shape).map_err(|e| e.at_layer(i))?;
        }
        Ok(())
    }

    fn initial_shape(&self) -> Result<ValueShape> {
        match self.input_shape.len() {
            1 => Ok(ValueShape::Flat(self.input_shape[0])),
            3 => Ok(ValueShape::Spatial([
                self.input_shape[0],
                self.input_shape[1],
                self.input_shape[2],
            ])),
            r => Err(Error::DimensionMismatch {
                context: "model input rank",
                expected: 3,
                got: r,
            }),
        }
    }

    /// Run the model on `x` and return the flattened output vector.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.forward_through(x, self.layers.len() - 1)
    }

    /// Run layers `0..=last` and return the (flattened) value after layer
    /// `last`, post-activation.
    pub fn forward_through(&self, x: &Tensor, last: usize) -> Result<Vec<f64>> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::DimensionMismatch {
                context: "model input",
                expected: self.input_shape.iter().product(),
                got: x.len(),
            });
        }
        let mut value = Value::from_input(x);
        for (i, node) in self.layers.iter().take(last + 1).enumerate() {
            value = value.step(node).map_err(|e| e.at_layer(i))?;
        }
        Ok(value.into_flat())
    }
}

enum Value {
    Flat(Vec<f64>),
    Spatial(Tensor),
}

impl Value {
    fn from_input(x: &Tensor) -> Value {
        if x.rank() == 3 {
            Value::Spatial(x.clone())
        } else {
            Value::Flat(x.data().to_vec())
        }
    }

    fn step(self, node: &LayerNode) -> Result<Value> {
        match node {
            LayerNode::Linear(l) => {
                let flat = self.into_flat();
                Ok(Value::Flat(forward_linear(l, &flat)?))
            }
            LayerNode::Conv(c) => match self {
                Value::Spatial(t) => Ok(Value::Spatial(forward_conv(c, &t)?)),
                Value::Flat(v) => Err(Error::DimensionMismatch {
                    context: "conv input rank",
                    expected: 3,
                    got: usize::from(!v.is_empty()),
                }),
            },
            LayerNode::Pool(p) => match self {
                Value::Spatial(t) => Ok(Value::Spatial(forward_pool(p, &t)?)),
                Value::Flat(v) => {
                    let pooled = forward_pool(p, &Tensor::from_vec(v)?)?;
                    Ok(Value::Flat(pooled.into_data()))
                }
            },
        }
    }

    fn into_flat(self) -> Vec<f64> {
        match self {
            Value::Flat(v) => v,
            Value::Spatial(t) => t.into_data(),
        }
    }
}

fn step_shape(node: &LayerNode, shape: ValueShape) -> Result<ValueShape> {
    match node {
        LayerNode::Linear(l) => {
            let len = shape.flat_len();
            if len != l.input_dim() {
                return Err(Error::DimensionMismatch {
                    context: "linear input",
                    expected: l.input_dim(),
                    got: len,
                });
            }
            let out = l.output_dim();
            match l.activation() {
                ActivationKind::MaxPool { size, stride } => {
                    if size > out {
                        return Err(Error::EmptyOutput);
                    }
                    Ok(ValueShape::Flat((out - size) / stride + 1))
                }
                _ => Ok(ValueShape::Flat(out)),
            }
        }
        LayerNode::Conv(c) => match shape {
            ValueShape::Spatial(dims) => {
                let [p, h, w] = c.output_dims(&dims)?;
                match c.activation() {
                    ActivationKind::MaxPool { size, stride } => {
                        if size > h || size > w {
                            return Err(Error::EmptyOutput);
                        }
                        Ok(ValueShape::Spatial([
                            p,
                            (h - size) / stride + 1,
                            (w - size) / stride + 1,
                        ]))
                    }
                    _ => Ok(ValueShape::Spatial([p, h, w])),
                }
            }
            ValueShape::Flat(_) => Err(Error::DimensionMismatch {
                context: "conv input rank",
                expected: 3,
                got: 1,
            }),
        },
        LayerNode::Pool(pl) => match shape {
            ValueShape::Spatial([c, h, w]) => {
                if pl.size() > h || pl.size() > w {
                    return Err(Error::EmptyOutput);
                }
                Ok(ValueShape::Spatial([
                    c,
                    (h - pl.size()) / pl.stride() + 1,
                    (w - pl.size()) / pl.stride() + 1,
                ]))
            }
            ValueShape::Flat(n) => {
                if pl.size() > n {
                    return Err(Error::EmptyOutput);
                }
                Ok(ValueShape::Flat((n - pl.size()) / pl.stride() + 1))
            }
        },
    }
}

/// Convenience constructor for a single-linear-layer graph (tests, fixtures).
pub fn linear_model(layer: LinearLayer, dtype: DtypeTag) -> Result<ModelGraph> {
    let input = layer.input_dim();
    ModelGraph::new(
        alloc::vec![LayerNode::Linear(layer)],
        alloc::vec![input],
        dtype,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;

    fn lin(rows: usize, cols: usize, scale: f64) -> LinearLayer {
        let data = (0..rows * cols).map(|i| scale * (i as f64 + 1.0)).collect();
        LinearLayer::new(
            Mat::new(rows, cols, data).unwrap(),
            alloc::vec![0.0; cols],
            ActivationKind::Identity,
        )
        .unwrap()
    }

    #[test]
    fn single_identity_layer_is_identity() {
        let l = LinearLayer::new(
            Mat::identity(3),
            alloc::vec![0.0; 3],
            ActivationKind::Identity,
        )
        .unwrap();
        let m = linear_model(l, DtypeTag::F64).unwrap();
        let x = Tensor::from_vec(alloc::vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(m.forward(&x).unwrap(), alloc::vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn two_layer_chain_equals_product_matrix() {
        let a1 = Mat::new(2, 3, alloc::vec![1.0, 2.0, 0.5, -1.0, 0.25, 2.0]).unwrap();
        let a2 = Mat::new(3, 2, alloc::vec![0.5, 1.0, -2.0, 0.75, 1.5, -0.5]).unwrap();
        let chain = ModelGraph::new(
            alloc::vec![
                LayerNode::Linear(
                    LinearLayer::new(a1.clone(), alloc::vec![0.0; 3], ActivationKind::Identity)
                        .unwrap()
                ),
                LayerNode::Linear(
                    LinearLayer::new(a2.clone(), alloc::vec![0.0; 2], ActivationKind::Identity)
                        .unwrap()
                ),
            ],
            alloc::vec![2],
            DtypeTag::F64,
        )
        .unwrap();
        let product = a1.matmul(&a2).unwrap();
        let single = linear_model(
            LinearLayer::new(product, alloc::vec![0.0; 2], ActivationKind::Identity).unwrap(),
            DtypeTag::F64,
        )
        .unwrap();
        let x = Tensor::from_vec(alloc::vec![0.3, -0.7]).unwrap();
        let lhs = chain.forward(&x).unwrap();
        let rhs = single.forward(&x).unwrap();
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn mismatched_chain_reports_offending_index() {
        let err = ModelGraph::new(
            alloc::vec![
                LayerNode::Linear(lin(2, 3, 0.1)),
                LayerNode::Linear(lin(4, 2, 0.1)),
            ],
            alloc::vec![2],
            DtypeTag::F64,
        )
        .unwrap_err();
        assert!(matches!(err, Error::AtLayer { layer: 1, .. }));
    }

    #[test]
    fn empty_layer_list_is_rejected() {
        assert_eq!(
            ModelGraph::new(alloc::vec![], alloc::vec![2], DtypeTag::F64).unwrap_err(),
            Error::EmptyInput
        );
    }

    #[test]
    fn conv_to_linear_flattens_row_major() {
        // 1x2x2 input passed through an identity conv (1x1 kernel), then a
        // linear layer that picks out element [0][1][0] of the flatten.
        let kernel = Tensor::new(alloc::vec![1, 1, 1, 1], alloc::vec![1.0]).unwrap();
        let conv = crate::layer::ConvLayer::new(
            kernel,
            alloc::vec![0.0],
            [0; 4],
            [1, 1],
            ActivationKind::Identity,
        )
        .unwrap();
        let pick = {
            let mut w = Mat::zeros(4, 1);
            w.set(2, 0, 1.0);
            LinearLayer::new(w, alloc::vec![0.0], ActivationKind::Identity).unwrap()
        };
        let m = ModelGraph::new(
            alloc::vec![LayerNode::Conv(conv), LayerNode::Linear(pick)],
            alloc::vec![1, 2, 2],
            DtypeTag::F64,
        )
        .unwrap();
        let x = Tensor::new(alloc::vec![1, 2, 2], alloc::vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        assert_eq!(m.forward(&x).unwrap(), alloc::vec![30.0]);
    }

    #[test]
    fn forward_through_stops_mid_chain() {
        let m = ModelGraph::new(
            alloc::vec![
                LayerNode::Linear(lin(2, 2, 1.0)),
                LayerNode::Linear(lin(2, 2, 100.0)),
            ],
            alloc::vec![2],
            DtypeTag::F64,
        )
        .unwrap();
        let x = Tensor::from_vec(alloc::vec![1.0, 0.0]).unwrap();
        let mid = m.forward_through(&x, 0).unwrap();
        assert_eq!(mid, alloc::vec![1.0, 2.0]);
    }
}
