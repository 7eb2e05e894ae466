#include "xai/predictor/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace xai {
namespace {

struct ParamRef {
  Tensor* weight;
  Tensor* bias;
};

std::vector<ParamRef> params_of(Graph& g) {
  std::vector<ParamRef> refs;
  for (std::size_t i = 0; i < g.size(); ++i) {
    Layer& layer = g.node(i).layer;
    if (auto* c = std::get_if<Conv2d>(&layer)) {
      refs.push_back({&c->weight, &c->bias});
    } else if (auto* d = std::get_if<Dense>(&layer)) {
      refs.push_back({&d->weight, &d->bias});
    } else {
      refs.push_back({nullptr, nullptr});
    }
  }
  return refs;
}

}  // namespace

double accuracy(const Model& model, const std::vector<Tensor>& images, const std::vector<Index>& labels) {
  if (images.empty()) return 0.0;
  Index correct = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (predict(model, images[i]).predicted_class == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

TrainResult train(Model model, const std::vector<Tensor>& images, const std::vector<Index>& labels,
                  const TrainConfig& config) {
  if (images.empty()) throw DataError("cannot train on an empty dataset");
  if (images.size() != labels.size()) throw DataError("images and labels differ in length");
  if (config.epochs < 0 || config.batch_size < 1 || !(config.lr > 0.0)) throw DataError("invalid training config");

  std::mt19937_64 rng(config.seed);
  auto refs = params_of(model.graph);
  ParamGrads grads = ParamGrads::zeros_like(model.graph);
  ParamGrads velocity = ParamGrads::zeros_like(model.graph);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      grads.set_zero();
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t s = order[b];
        Trace trace = forward(model.graph, images[s]);
        LossGrad lg = softmax_cross_entropy(trace.output().data(), labels[s]);
        epoch_loss += lg.loss;
        backward(model.graph, trace, Tensor(trace.output().shape(), lg.dlogits), 0, &grads);
      }
      double scale = 1.0 / static_cast<double>(stop - start);
      if (config.clip_norm > 0.0) {
        double sq = 0.0;
        for (std::size_t i = 0; i < refs.size(); ++i) {
          if (refs[i].weight) sq += grads.weight[i].squaredNorm() + grads.bias[i].squaredNorm();
        }
        const double norm = scale * std::sqrt(sq);
        if (norm > config.clip_norm) scale *= config.clip_norm / norm;
      }
      for (std::size_t i = 0; i < refs.size(); ++i) {
        if (!refs[i].weight) continue;
        velocity.weight[i] = config.momentum * velocity.weight[i] + scale * grads.weight[i];
        velocity.bias[i] = config.momentum * velocity.bias[i] + scale * grads.bias[i];
        refs[i].weight->data() -= config.lr * velocity.weight[i];
        refs[i].bias->data() -= config.lr * velocity.bias[i];
      }
    }
    epoch_loss /= static_cast<double>(images.size());
    if (!std::isfinite(epoch_loss)) {
      throw TrainingDiverged(epoch, "training diverged (non-finite loss) at epoch " + std::to_string(epoch));
    }
    result.epoch_loss.push_back(epoch_loss);
  }
  if (config.epochs > 0) ++model.weights_version;
  result.train_accuracy = accuracy(model, images, labels);
  result.model = std::move(model);
  return result;
}

TrainResult train(Model model, const PlantedBiasDataset& dataset, const TrainConfig& config) {
  std::vector<Index> labels;
  labels.reserve(dataset.latents.size());
  for (const auto& l : dataset.latents) labels.push_back(l.label);
  return train(std::move(model), dataset.images, labels, config);
}

}  // namespace xai
