#pragma once

#include "xai/attribution/attribution.hpp"
#include "xai/predictor/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace xai {

struct MuFidelityConfig {
  double subset_fraction = 0.2;
  int n_subsets = 200;
  std::uint64_t seed = 0;
};

struct FaithfulnessConfig {
  int steps = 20;
  double fraction_per_step = 0.05;
  double baseline = 0.0;
  int insertion_blur_radius = 0;  // 0: insertion starts from the baseline image
  MuFidelityConfig mu_fidelity;
};

/// Throws DataError unless steps * fraction <= 1 and n_subsets >= 2.
void validate(const FaithfulnessConfig& config);

/// Probability of the target class after each step; point 0 is before any pixel moves.
struct Curve {
  std::vector<double> fractions;
  std::vector<double> values;
  double auc = 0.0;
};

/// Pixel order used by deletion and insertion: descending value, ties by row-major index.
std::vector<Index> ranking(const RowMatrix& map);

/// Pixels whose rank is < k take `replacement`, the rest keep `source`.
Tensor compose(const Tensor& source, const Tensor& replacement, const std::vector<Index>& order, Index k);

/// Trapezoid rule on a uniform grid, scaled so the x-axis spans [0, 1].
double trapezoid_mean(const std::vector<double>& values);

Curve deletion(const Model& model, const Tensor& x, const RowMatrix& map, Index cls,
               const FaithfulnessConfig& config = {});
Curve insertion(const Model& model, const Tensor& x, const RowMatrix& map, Index cls,
                const FaithfulnessConfig& config = {});

/// Box-blurred copy of x (window 2r+1, clamped to the image).
Tensor box_blur(const Tensor& x, int radius);

struct MuFidelity {
  double score = 0.0;
  bool degenerate = false;  // one of the two series had zero variance; score forced to 0
};

MuFidelity mu_fidelity(const Model& model, const Tensor& x, const RowMatrix& map, Index cls,
                       const FaithfulnessConfig& config = {});

inline constexpr int kComplexityQuality = 75;

/// JPEG bytes of the min-max normalised 8-bit map divided by its raw byte count.
double complexity(const AttributionMap& map);
double complexity(const RowMatrix& map);

struct Patch {
  Tensor image;
  Index row = 0;  // top-left corner
  Index col = 0;
};

/// Box-filtered map sum over the side x side window centred at each pixel
/// (truncated at the border).
RowMatrix box_filter(const RowMatrix& map, Index side);

/// Crop centred on the box-filtered argmax (first in row-major order), clamped
/// inside the image. patch_side 0 means image side / 3.
Patch extract_patch(const Tensor& x, const RowMatrix& map, Index patch_side = 0);

class PerceptualBackend {
 public:
  virtual ~PerceptualBackend() = default;
  /// Distance in [0, 1]; 0 for identical inputs.
  virtual double distance(const Tensor& a, const Tensor& b) const = 0;
};

/// 1 - cosine similarity of activations normalised to unit length across
/// channels at each location, averaged over the given layers.
class ActivationBackend final : public PerceptualBackend {
 public:
  explicit ActivationBackend(const Model& model, std::vector<std::string> layers = {"pool1", "pool2"});
  double distance(const Tensor& a, const Tensor& b) const override;

 private:
  std::vector<Tensor> features(const Tensor& x) const;
  const Model& model_;
  std::vector<Index> ids_;
};

enum class SetReduction {
  Chamfer,        // average of mean nearest-neighbour distance in each direction
  MeanCrossPair,  // mean over all |A| * |B| pairs
};

/// 1 - reduced distance between two nonempty patch sets.
double perceptual_similarity(const PerceptualBackend& backend, const std::vector<Tensor>& a,
                             const std::vector<Tensor>& b, SetReduction reduction = SetReduction::Chamfer);

struct MethodMetrics {
  std::string method;
  std::string dataset;
  double faithfulness = 0.0;  // 1 - mean deletion auc
  double insertion = 0.0;
  double mu_fidelity = 0.0;
  double complexity = 0.0;
  double perceptual_similarity = 0.0;
  int mu_fidelity_degenerate = 0;
  std::string utility_curve;  // id of the matching utility curve, if any
};

struct MetricReport {
  std::vector<MethodMetrics> rows;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  /// Long format: method,dataset,metric,value.
  std::string to_csv() const;
};

struct CurveRecord {
  std::string method;
  std::string kind;  // "deletion" or "insertion"
  Index image = 0;
  Curve curve;
};

/// method,kind,image,step,fraction,value
std::string curves_to_csv(const std::vector<CurveRecord>& curves);

struct EvaluationConfig {
  FaithfulnessConfig faithfulness;
  MethodConfig methods;
  Index patch_side = 0;
  std::uint64_t seed = 0;
};

struct Evaluation {
  MetricReport report;
  std::vector<CurveRecord> curves;
};

/// Every metric for each method averaged over the images, explaining the
/// predicted class. Perceptual similarity compares diagnostic patches of
/// images predicted as class 0 with those predicted as class 1 (0 when a side is empty).
Evaluation evaluate_methods(const Model& model, const std::vector<Tensor>& images, const std::vector<Method>& methods,
                            const std::string& dataset, const EvaluationConfig& config = {});

}  // namespace xai
