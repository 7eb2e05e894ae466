#pragma once

#include "xai/core/tensor.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace xai {

enum class Padding { Valid, Same };

/// Stride-1 2-D convolution over an (H, W, Cin) input.
/// weight: (k, k, Cin, Cout), bias: (Cout).
struct Conv2d {
  Tensor weight;
  Tensor bias;
  Padding padding = Padding::Valid;
};

/// Fully connected layer on the flattened input. weight: (out, in), bias: (out).
struct Dense {
  Tensor weight;
  Tensor bias;
};

struct Relu {};

/// 2x2 max pooling with stride 2; odd trailing rows/cols are dropped.
/// Ties resolve to the first maximal element in row-major window order.
struct MaxPool2 {};

/// (H, W, C) -> (C), mean over the spatial axes.
struct GlobalAvgPool {};

using Layer = std::variant<Conv2d, Dense, Relu, MaxPool2, GlobalAvgPool>;

std::string_view layer_kind(const Layer& layer);

struct Node {
  std::string name;
  Layer layer;
};

/// A sequential chain of layers. Tensor id 0 is the input; id i + 1 is the
/// output of node i, so ids are topologically ordered by construction.
class Graph {
 public:
  Graph& add(std::string name, Layer layer);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_.at(i); }
  Node& node(std::size_t i) { return nodes_.at(i); }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// "input" maps to 0; a node name maps to that node's output id.
  Index id_of(std::string_view name) const;
  std::optional<Index> find(std::string_view name) const;
  std::string name_of(Index id) const;
  Index output_id() const { return static_cast<Index>(nodes_.size()); }

  /// Shape of every tensor id for the given input shape; throws ShapeError
  /// naming the first layer that cannot accept its input.
  std::vector<Shape> infer_shapes(const Shape& input) const;

 private:
  std::vector<Node> nodes_;
};

/// Values recorded by one forward pass, plus what backward needs.
struct Trace {
  std::vector<Tensor> values;              // indexed by tensor id
  std::vector<RowMatrix> columns;          // im2col buffer per conv node
  std::vector<std::vector<Index>> argmax;  // selected input index per pool output

  const Tensor& value(Index id) const { return values.at(static_cast<std::size_t>(id)); }
  const Tensor& output() const { return values.back(); }
  Index last_id() const { return static_cast<Index>(values.size()) - 1; }
};

/// Parameter gradients per node; empty vectors for parameter-free layers.
struct ParamGrads {
  std::vector<Vector> weight;
  std::vector<Vector> bias;

  static ParamGrads zeros_like(const Graph& graph);
  void set_zero();
};

/// Runs the graph on `input`. When `upto` is given the pass stops after the
/// tensor with that id has been produced.
Trace forward(const Graph& graph, const Tensor& input, std::optional<Index> upto = std::nullopt);

/// Reverse pass from `output_grad` (gradient w.r.t. trace.output()).
/// Returns gradients for every id in [stop_id, trace.last_id()]; earlier ids
/// hold empty tensors. Parameter gradients are accumulated into `params` when given.
std::vector<Tensor> backward(const Graph& graph, const Trace& trace, const Tensor& output_grad,
                             Index stop_id = 0, ParamGrads* params = nullptr);

/// d(logit[target]) / d(tensor `wrt`) for a graph whose output is a logit vector.
Tensor grad_wrt(const Graph& graph, const Trace& trace, Index target, Index wrt);
Tensor grad_wrt(const Graph& graph, const Tensor& input, Index target, Index wrt);

Vector softmax(const Vector& logits);

struct LossGrad {
  double loss = 0.0;
  Vector dlogits;
};

/// Softmax cross-entropy of one sample and its gradient w.r.t. logits.
LossGrad softmax_cross_entropy(const Vector& logits, Index label);

}  // namespace xai
