#pragma once

#include "xai/core/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace xai {

/// Synthetic two-class scenes: a sky region with label-independent clutter, a
/// foreground bar whose orientation weakly follows the label, and a textured
/// ground band ("snow" = 0, "grass" = 1) planted as the spurious cue.
///
/// With probability beta an image's ground texture is forced to its label;
/// otherwise it is drawn uniformly. beta = 1 makes the ground fully
/// predictive, beta = 0 makes it independent of the label.
struct DatasetConfig {
  Index n = 256;
  double beta = 1.0;
  std::uint64_t seed = 1;
};

/// Everything needed to render one image; sampling latents is cheap, so
/// large-n statistics do not require rendering.
struct ImageLatent {
  Index label = 0;
  Index background = 0;
  bool bias_applied = false;
  Index orientation = 0;  // 0 horizontal bar, 1 vertical bar
  Index horizon = 40;     // first ground row
  std::uint64_t render_seed = 0;
};

using Mask = RowMatrixT<std::uint8_t>;

/// Probability that the foreground orientation equals the label.
inline constexpr double kForegroundAgreement = 0.75;

struct PlantedBiasDataset {
  DatasetConfig config;
  std::vector<ImageLatent> latents;
  std::vector<Tensor> images;  // (64, 64, 3) in [0, 1]
  std::vector<Mask> masks;     // 1 on the planted ground band

  Index size() const { return static_cast<Index>(images.size()); }
  Index label(Index i) const { return latents.at(static_cast<std::size_t>(i)).label; }
};

/// Validates the config: n >= 2 and even (exact class balance), beta in [0, 1].
void validate(const DatasetConfig& config);

std::vector<ImageLatent> sample_latents(const DatasetConfig& config);
Tensor render_image(const ImageLatent& latent);
Mask ground_mask(const ImageLatent& latent);

PlantedBiasDataset generate_dataset(const DatasetConfig& config);

/// Directory of image_XXXX.png / mask_XXXX.png plus manifest.json.
void export_dataset(const PlantedBiasDataset& dataset, const std::filesystem::path& dir);
/// Regenerates the dataset from the manifest's config and checks the recorded labels.
PlantedBiasDataset load_dataset(const std::filesystem::path& dir);

}  // namespace xai
