#include "xai/predictor/model.hpp"

#include "xai/error.hpp"
#include "xai/io/blob.hpp"

#include <random>

namespace xai {

Index Model::feature_id() const {
  if (feature_layer.empty()) throw DataError("model '" + architecture + "' has no spatial feature map");
  return graph.id_of(feature_layer);
}

Prediction predict(const Model& model, const Tensor& x) {
  if (x.shape() != model.input_shape) {
    throw ShapeError("model expects input " + shape_string(model.input_shape) + ", got " +
                     shape_string(x.shape()));
  }
  Prediction p;
  p.trace = forward(model.graph, x);
  p.logits = p.trace.output().data();
  p.probabilities = softmax(p.logits);
  p.logits.maxCoeff(&p.predicted_class);
  return p;
}

double logit(const Model& model, const Tensor& x, Index target) {
  return forward(model.graph, x).output()[target];
}

double probability(const Model& model, const Tensor& x, Index target) {
  return softmax(forward(model.graph, x).output().data())[target];
}

namespace {

Conv2d he_conv(Index k, Index cin, Index cout, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(k * k * cin)));
  Conv2d c{Tensor({k, k, cin, cout}), Tensor({cout}), Padding::Valid};
  for (Index i = 0; i < c.weight.size(); ++i) c.weight[i] = n(rng);
  return c;
}

}  // namespace

Model make_planted_bias_cnn(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Model m;
  m.architecture = "planted-bias-cnn-v1";
  m.input_shape = {kImageSide, kImageSide, kImageChannels};
  m.num_classes = 2;
  m.feature_layer = "relu3";
  m.graph.add("conv1", he_conv(3, 3, 8, rng))
      .add("relu1", Relu{})
      .add("pool1", MaxPool2{})
      .add("conv2", he_conv(3, 8, 16, rng))
      .add("relu2", Relu{})
      .add("pool2", MaxPool2{})
      .add("conv3", he_conv(3, 16, 32, rng))
      .add("relu3", Relu{})
      .add("gap", GlobalAvgPool{});
  std::normal_distribution<double> n(0.0, std::sqrt(1.0 / 32.0));
  Dense fc{Tensor({2, 32}), Tensor({2})};
  for (Index i = 0; i < fc.weight.size(); ++i) fc.weight[i] = n(rng);
  m.graph.add("fc", std::move(fc));
  m.graph.infer_shapes(m.input_shape);
  return m;
}

Model make_linear_model(const Tensor& weights, const Vector& bias, Shape input_shape) {
  if (weights.rank() != 2 || weights.dim(1) != shape_size(input_shape) || bias.size() != weights.dim(0)) {
    throw ShapeError("linear model weights must be (classes, H*W*C) with matching bias");
  }
  Model m;
  m.architecture = "linear";
  m.input_shape = std::move(input_shape);
  m.num_classes = weights.dim(0);
  m.graph.add("fc", Dense{weights, Tensor({bias.size()}, bias)});
  return m;
}

// Weight file: XAIB container of kind "model". Parameters are stored in node
// order, weight then bias.

std::string encode_model(const Model& model) {
  io::Blob blob;
  blob.header["kind"] = "model";
  blob.header["architecture"] = model.architecture;
  blob.header["input_shape"] = model.input_shape;
  blob.header["num_classes"] = model.num_classes;
  blob.header["feature_layer"] = model.feature_layer;
  blob.header["weights_version"] = model.weights_version;
  nlohmann::json layers = nlohmann::json::array();
  auto append = [&](const Tensor& t) { blob.payload.insert(blob.payload.end(), t.data().begin(), t.data().end()); };
  for (const Node& node : model.graph.nodes()) {
    nlohmann::json l{{"name", node.name}, {"kind", std::string(layer_kind(node.layer))}};
    if (const auto* c = std::get_if<Conv2d>(&node.layer)) {
      l["padding"] = c->padding == Padding::Same ? "same" : "valid";
      l["weight_shape"] = c->weight.shape();
      l["bias_shape"] = c->bias.shape();
      append(c->weight);
      append(c->bias);
    } else if (const auto* d = std::get_if<Dense>(&node.layer)) {
      l["weight_shape"] = d->weight.shape();
      l["bias_shape"] = d->bias.shape();
      append(d->weight);
      append(d->bias);
    }
    layers.push_back(std::move(l));
  }
  blob.header["layers"] = std::move(layers);
  return io::encode_blob(blob);
}

Model decode_model(const std::string& bytes) {
  io::Blob blob = io::decode_blob(bytes, "model");
  const auto& h = blob.header;
  Model m;
  std::size_t offset = 0;
  auto take = [&](const Shape& shape) {
    const auto n = static_cast<std::size_t>(shape_size(shape));
    if (offset + n > blob.payload.size()) throw FormatError("model payload shorter than its layer table");
    Vector v = Eigen::Map<const Vector>(blob.payload.data() + offset, static_cast<Index>(n));
    offset += n;
    return Tensor(shape, std::move(v));
  };
  try {
    m.architecture = h.at("architecture").get<std::string>();
    m.input_shape = h.at("input_shape").get<Shape>();
    m.num_classes = h.at("num_classes").get<Index>();
    m.feature_layer = h.at("feature_layer").get<std::string>();
    m.weights_version = h.at("weights_version").get<std::uint64_t>();
    for (const auto& l : h.at("layers")) {
      const auto kind = l.at("kind").get<std::string>();
      auto name = l.at("name").get<std::string>();
      if (kind == "conv2d") {
        Tensor w = take(l.at("weight_shape").get<Shape>());
        Tensor b = take(l.at("bias_shape").get<Shape>());
        const Padding pad = l.at("padding") == "same" ? Padding::Same : Padding::Valid;
        m.graph.add(std::move(name), Conv2d{std::move(w), std::move(b), pad});
      } else if (kind == "dense") {
        Tensor w = take(l.at("weight_shape").get<Shape>());
        Tensor b = take(l.at("bias_shape").get<Shape>());
        m.graph.add(std::move(name), Dense{std::move(w), std::move(b)});
      } else if (kind == "relu") {
        m.graph.add(std::move(name), Relu{});
      } else if (kind == "maxpool2") {
        m.graph.add(std::move(name), MaxPool2{});
      } else if (kind == "global_avg_pool") {
        m.graph.add(std::move(name), GlobalAvgPool{});
      } else {
        throw FormatError("unknown layer kind '" + kind + "' in model file");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model header: ") + e.what());
  }
  if (offset != blob.payload.size()) throw FormatError("model payload longer than its layer table");
  m.graph.infer_shapes(m.input_shape);
  return m;
}

void save_model(const Model& model, const std::filesystem::path& path) { io::write_file(path, encode_model(model)); }

Model load_model(const std::filesystem::path& path) { return decode_model(io::read_file(path)); }

}  // namespace xai
