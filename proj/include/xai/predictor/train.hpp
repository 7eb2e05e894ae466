#pragma once

#include "xai/error.hpp"
#include "xai/predictor/dataset.hpp"
#include "xai/predictor/model.hpp"

#include <vector>

namespace xai {

/// Mini-batch SGD with heavy-ball momentum on softmax cross-entropy.
struct TrainConfig {
  int epochs = 30;
  double lr = 0.05;
  double momentum = 0.9;
  Index batch_size = 16;
  double clip_norm = 1.0;  // global gradient-norm clip per batch; <= 0 disables
  std::uint64_t seed = 1;  // shuffling order
};

struct TrainResult {
  Model model;
  double train_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int epoch, const std::string& what) : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

/// Images and labels must have equal length; `images` must be non-empty.
TrainResult train(Model model, const std::vector<Tensor>& images, const std::vector<Index>& labels,
                  const TrainConfig& config);
TrainResult train(Model model, const PlantedBiasDataset& dataset, const TrainConfig& config);

double accuracy(const Model& model, const std::vector<Tensor>& images, const std::vector<Index>& labels);

}  // namespace xai
