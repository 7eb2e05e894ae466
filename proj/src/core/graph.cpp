#include "xai/core/graph.hpp"

#include "xai/error.hpp"

#include <algorithm>
#include <cmath>

namespace xai {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

[[noreturn]] void layer_error(const Node& node, const std::string& what) {
  throw ShapeError("layer '" + node.name + "' (" + std::string(layer_kind(node.layer)) +
                   "): " + what);
}

struct ConvGeometry {
  Index k, cin, cout, pad, h, w, ho, wo;
};

ConvGeometry conv_geometry(const Node& node, const Conv2d& conv, const Shape& in) {
  if (in.size() != 3) layer_error(node, "expects an (H, W, C) input, got " + shape_string(in));
  const Shape& ws = conv.weight.shape();
  if (ws.size() != 4 || ws[0] != ws[1]) layer_error(node, "weight must be (k, k, Cin, Cout)");
  if (conv.bias.shape() != Shape{ws[3]}) layer_error(node, "bias must be (Cout)");
  if (ws[2] != in[2]) {
    layer_error(node, "expects " + std::to_string(ws[2]) + " input channels, got " +
                          std::to_string(in[2]));
  }
  ConvGeometry g{};
  g.k = ws[0];
  g.cin = ws[2];
  g.cout = ws[3];
  g.pad = conv.padding == Padding::Same ? g.k / 2 : 0;
  g.h = in[0];
  g.w = in[1];
  g.ho = g.h + 2 * g.pad - g.k + 1;
  g.wo = g.w + 2 * g.pad - g.k + 1;
  if (g.ho < 1 || g.wo < 1) layer_error(node, "input " + shape_string(in) + " smaller than kernel");
  return g;
}

Shape node_output_shape(const Node& node, const Shape& in) {
  return std::visit(
      Overloaded{
          [&](const Conv2d& c) -> Shape {
            auto g = conv_geometry(node, c, in);
            return {g.ho, g.wo, g.cout};
          },
          [&](const Dense& d) -> Shape {
            const Shape& ws = d.weight.shape();
            if (ws.size() != 2 || d.bias.shape() != Shape{ws[0]}) {
              layer_error(node, "weight must be (out, in) and bias (out)");
            }
            if (shape_size(in) != ws[1]) {
              layer_error(node, "expects " + std::to_string(ws[1]) + " inputs, got " +
                                    shape_string(in));
            }
            return {ws[0]};
          },
          [&](const Relu&) -> Shape { return in; },
          [&](const MaxPool2&) -> Shape {
            if (in.size() != 3 || in[0] < 2 || in[1] < 2) {
              layer_error(node, "expects an (H, W, C) input with H, W >= 2, got " +
                                    shape_string(in));
            }
            return {in[0] / 2, in[1] / 2, in[2]};
          },
          [&](const GlobalAvgPool&) -> Shape {
            if (in.size() != 3) layer_error(node, "expects an (H, W, C) input, got " + shape_string(in));
            return {in[2]};
          },
      },
      node.layer);
}

}  // namespace

std::string_view layer_kind(const Layer& layer) {
  return std::visit(Overloaded{
                        [](const Conv2d&) { return std::string_view("conv2d"); },
                        [](const Dense&) { return std::string_view("dense"); },
                        [](const Relu&) { return std::string_view("relu"); },
                        [](const MaxPool2&) { return std::string_view("maxpool2"); },
                        [](const GlobalAvgPool&) { return std::string_view("global_avg_pool"); },
                    },
                    layer);
}

Graph& Graph::add(std::string name, Layer layer) {
  if (name.empty() || name == "input" || find(name)) {
    throw DataError("graph node name '" + name + "' is empty, reserved or already used");
  }
  nodes_.push_back({std::move(name), std::move(layer)});
  return *this;
}

std::optional<Index> Graph::find(std::string_view name) const {
  if (name == "input") return 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].name == name) return static_cast<Index>(i) + 1;
  }
  return std::nullopt;
}

Index Graph::id_of(std::string_view name) const {
  if (auto id = find(name)) return *id;
  throw NotFoundError("unknown tensor id '" + std::string(name) + "'");
}

std::string Graph::name_of(Index id) const {
  if (id == 0) return "input";
  if (id < 0 || id > output_id()) throw NotFoundError("unknown tensor id " + std::to_string(id));
  return nodes_[static_cast<std::size_t>(id - 1)].name;
}

std::vector<Shape> Graph::infer_shapes(const Shape& input) const {
  std::vector<Shape> shapes{input};
  shapes.reserve(nodes_.size() + 1);
  for (const Node& node : nodes_) shapes.push_back(node_output_shape(node, shapes.back()));
  return shapes;
}

ParamGrads ParamGrads::zeros_like(const Graph& graph) {
  ParamGrads g;
  for (const Node& node : graph.nodes()) {
    if (const auto* c = std::get_if<Conv2d>(&node.layer)) {
      g.weight.push_back(Vector::Zero(c->weight.size()));
      g.bias.push_back(Vector::Zero(c->bias.size()));
    } else if (const auto* d = std::get_if<Dense>(&node.layer)) {
      g.weight.push_back(Vector::Zero(d->weight.size()));
      g.bias.push_back(Vector::Zero(d->bias.size()));
    } else {
      g.weight.emplace_back();
      g.bias.emplace_back();
    }
  }
  return g;
}

void ParamGrads::set_zero() {
  for (auto& w : weight) w.setZero();
  for (auto& b : bias) b.setZero();
}

Trace forward(const Graph& graph, const Tensor& input, std::optional<Index> upto) {
  const Index last = upto.value_or(graph.output_id());
  if (last < 0 || last > graph.output_id()) {
    throw NotFoundError("unknown tensor id " + std::to_string(last));
  }
  Trace trace;
  trace.values.reserve(static_cast<std::size_t>(last) + 1);
  trace.values.push_back(input);
  trace.columns.resize(static_cast<std::size_t>(last));
  trace.argmax.resize(static_cast<std::size_t>(last));

  for (Index id = 1; id <= last; ++id) {
    const auto i = static_cast<std::size_t>(id - 1);
    const Node& node = graph.node(i);
    const Tensor& x = trace.values.back();
    Shape out_shape = node_output_shape(node, x.shape());
    Tensor y(out_shape);

    std::visit(
        Overloaded{
            [&](const Conv2d& conv) {
              const auto g = conv_geometry(node, conv, x.shape());
              RowMatrix cols = RowMatrix::Zero(g.ho * g.wo, g.k * g.k * g.cin);
              for (Index oh = 0; oh < g.ho; ++oh) {
                for (Index ow = 0; ow < g.wo; ++ow) {
                  const Index row = oh * g.wo + ow;
                  for (Index kh = 0; kh < g.k; ++kh) {
                    const Index ih = oh + kh - g.pad;
                    if (ih < 0 || ih >= g.h) continue;
                    for (Index kw = 0; kw < g.k; ++kw) {
                      const Index iw = ow + kw - g.pad;
                      if (iw < 0 || iw >= g.w) continue;
                      std::copy_n(x.data().data() + (ih * g.w + iw) * g.cin, g.cin,
                                  cols.data() + row * cols.cols() + (kh * g.k + kw) * g.cin);
                    }
                  }
                }
              }
              auto out = y.matrix(g.ho * g.wo, g.cout);
              out.noalias() = cols * conv.weight.matrix(g.k * g.k * g.cin, g.cout);
              out.rowwise() += conv.bias.data().transpose();
              trace.columns[i] = std::move(cols);
            },
            [&](const Dense& dense) {
              const auto& ws = dense.weight.shape();
              y.data().noalias() = dense.weight.matrix(ws[0], ws[1]) * x.data();
              y.data() += dense.bias.data();
            },
            [&](const Relu&) { y.data() = x.data().cwiseMax(0.0); },
            [&](const MaxPool2&) {
              const Index w = x.dim(1), c = x.dim(2);
              const Index ho = out_shape[0], wo = out_shape[1];
              auto& arg = trace.argmax[i];
              arg.resize(static_cast<std::size_t>(y.size()));
              for (Index oh = 0; oh < ho; ++oh) {
                for (Index ow = 0; ow < wo; ++ow) {
                  for (Index ch = 0; ch < c; ++ch) {
                    Index best = ((2 * oh) * w + 2 * ow) * c + ch;
                    const Index candidates[3] = {((2 * oh) * w + 2 * ow + 1) * c + ch,
                                                 ((2 * oh + 1) * w + 2 * ow) * c + ch,
                                                 ((2 * oh + 1) * w + 2 * ow + 1) * c + ch};
                    for (Index cand : candidates) {
                      if (x[cand] > x[best]) best = cand;
                    }
                    const Index o = (oh * wo + ow) * c + ch;
                    y[o] = x[best];
                    arg[static_cast<std::size_t>(o)] = best;
                  }
                }
              }
            },
            [&](const GlobalAvgPool&) {
              const Index hw = x.dim(0) * x.dim(1);
              y.data() = x.matrix(hw, x.dim(2)).colwise().mean().transpose();
            },
        },
        node.layer);
    trace.values.push_back(std::move(y));
  }
  return trace;
}

std::vector<Tensor> backward(const Graph& graph, const Trace& trace, const Tensor& output_grad,
                             Index stop_id, ParamGrads* params) {
  const Index last = trace.last_id();
  if (output_grad.shape() != trace.output().shape()) {
    throw ShapeError("output gradient shape " + shape_string(output_grad.shape()) +
                     " does not match output " + shape_string(trace.output().shape()));
  }
  if (stop_id < 0 || stop_id > last) throw NotFoundError("unknown tensor id " + std::to_string(stop_id));

  std::vector<Tensor> grads(static_cast<std::size_t>(last) + 1);
  grads[static_cast<std::size_t>(last)] = output_grad;

  for (Index id = last; id > stop_id; --id) {
    const auto i = static_cast<std::size_t>(id - 1);
    const Node& node = graph.node(i);
    const Tensor& x = trace.value(id - 1);
    const Tensor& dy = grads[static_cast<std::size_t>(id)];
    Tensor dx(x.shape());

    std::visit(
        Overloaded{
            [&](const Conv2d& conv) {
              const auto g = conv_geometry(node, conv, x.shape());
              const RowMatrix& cols = trace.columns[i];
              const auto dout = dy.matrix(g.ho * g.wo, g.cout);
              const auto wmat = conv.weight.matrix(g.k * g.k * g.cin, g.cout);
              if (params) {
                Eigen::Map<RowMatrix>(params->weight[i].data(), wmat.rows(), wmat.cols()).noalias() +=
                    cols.transpose() * dout;
                params->bias[i] += dout.colwise().sum().transpose();
              }
              const RowMatrix dcols = dout * wmat.transpose();
              for (Index oh = 0; oh < g.ho; ++oh) {
                for (Index ow = 0; ow < g.wo; ++ow) {
                  const Index row = oh * g.wo + ow;
                  for (Index kh = 0; kh < g.k; ++kh) {
                    const Index ih = oh + kh - g.pad;
                    if (ih < 0 || ih >= g.h) continue;
                    for (Index kw = 0; kw < g.k; ++kw) {
                      const Index iw = ow + kw - g.pad;
                      if (iw < 0 || iw >= g.w) continue;
                      dx.data().segment((ih * g.w + iw) * g.cin, g.cin) +=
                          dcols.row(row).segment((kh * g.k + kw) * g.cin, g.cin).transpose();
                    }
                  }
                }
              }
            },
            [&](const Dense& dense) {
              const auto& ws = dense.weight.shape();
              const auto wmat = dense.weight.matrix(ws[0], ws[1]);
              if (params) {
                Eigen::Map<RowMatrix>(params->weight[i].data(), ws[0], ws[1]).noalias() +=
                    dy.data() * x.data().transpose();
                params->bias[i] += dy.data();
              }
              dx.data().noalias() = wmat.transpose() * dy.data();
            },
            [&](const Relu&) {
              dx.data() = (x.data().array() > 0.0).select(dy.data(), 0.0);
            },
            [&](const MaxPool2&) {
              const auto& arg = trace.argmax[i];
              for (Index o = 0; o < dy.size(); ++o) dx[arg[static_cast<std::size_t>(o)]] += dy[o];
            },
            [&](const GlobalAvgPool&) {
              const Index hw = x.dim(0) * x.dim(1);
              dx.matrix(hw, x.dim(2)).rowwise() = dy.data().transpose() / static_cast<double>(hw);
            },
        },
        node.layer);
    grads[static_cast<std::size_t>(id - 1)] = std::move(dx);
  }
  return grads;
}

Tensor grad_wrt(const Graph& graph, const Trace& trace, Index target, Index wrt) {
  const Tensor& out = trace.output();
  if (out.rank() != 1) throw ShapeError("grad_wrt needs a rank-1 logit output");
  if (target < 0 || target >= out.size()) {
    throw DataError("target index " + std::to_string(target) + " out of range for " +
                    std::to_string(out.size()) + " logits");
  }
  if (wrt < 0 || wrt > trace.last_id()) throw NotFoundError("unknown tensor id " + std::to_string(wrt));
  Tensor seed(out.shape());
  seed[target] = 1.0;
  auto grads = backward(graph, trace, seed, wrt);
  return std::move(grads[static_cast<std::size_t>(wrt)]);
}

Tensor grad_wrt(const Graph& graph, const Tensor& input, Index target, Index wrt) {
  return grad_wrt(graph, forward(graph, input), target, wrt);
}

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

LossGrad softmax_cross_entropy(const Vector& logits, Index label) {
  if (label < 0 || label >= logits.size()) throw DataError("label out of range");
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  LossGrad out;
  out.loss = lse - logits[label];
  out.dlogits = softmax(logits);
  out.dlogits[label] -= 1.0;
  return out;
}

}  // namespace xai
