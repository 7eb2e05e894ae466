#pragma once

#include "xai/attribution/attribution.hpp"
#include "xai/predictor/dataset.hpp"
#include "xai/predictor/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace xai {

enum class ConditionKind { Baseline, Control, Explanation };

struct Condition {
  std::string id;
  ConditionKind kind = ConditionKind::Baseline;
  std::optional<Method> method;  // set for Control and Explanation

  bool shows_explanation() const { return kind != ConditionKind::Baseline; }
};

Condition baseline_condition();
Condition control_condition();
Condition explanation_condition(Method method);
Condition parse_condition(std::string_view id);

/// Baseline, control, then the six attribution methods.
std::vector<Condition> default_conditions();

struct StudyDesign {
  std::vector<Condition> conditions = default_conditions();
  int sessions = 3;
  int train_per_session = 5;
  int test_per_session = 7;
  int catch_per_session = 1;
  double correctness_balance = 0.5;
  int participants_per_condition = 30;
  std::uint64_t seed = 1;
  MethodConfig methods;

  int trials_per_participant() const { return sessions * (train_per_session + test_per_session + catch_per_session); }
  int condition_index(std::string_view id) const;
  nlohmann::json to_json() const;
  static StudyDesign from_json(const nlohmann::json& j);
};

/// DataError on empty/duplicate conditions, missing baseline, non-positive counts
/// or a balance other than 0.5.
void validate(const StudyDesign& design);

enum class TrialKind { Practice, Quiz, Train, Test, Catch };
std::string_view trial_kind_name(TrialKind kind);
TrialKind parse_trial_kind(std::string_view name);

struct Trial {
  std::string id;  // unique within a participant, e.g. "s2p07"
  TrialKind kind = TrialKind::Train;
  Index image = 0;  // index into the stimulus dataset
  Index prediction = 0;
  Index label = 0;
  int session = 1;  // 1-based
  int position = 0;  // within the session

  bool model_correct() const { return prediction == label; }
};

/// One participant slot; the same image sequence is used for slot k in every
/// condition so conditions differ only in the explanations shown.
struct Schedule {
  int slot = 0;
  std::vector<Trial> trials;

  std::vector<const Trial*> session_trials(int session, TrialKind kind) const;
};

struct Study {
  StudyDesign design;
  std::vector<Index> predictions;  // model prediction for every stimulus
  std::vector<Index> labels;
  std::vector<Schedule> schedules;  // participants_per_condition slots
  /// Keyed by explanation_key(method, image); holds every map a train trial can show.
  std::map<std::string, AttributionMap> explanations;

  const AttributionMap& explanation(Method method, Index image) const;
  nlohmann::json schedule_json() const;
};

std::string explanation_key(Method method, Index image);

/// Materialises balanced schedules and precomputes the explanations. Train and
/// test pools are disjoint halves of `stimuli`. Throws DataError when a balanced
/// block cannot be filled.
Study build_study(const StudyDesign& design, const PlantedBiasDataset& stimuli, const Model& model);

/// Agreement-rate ratio against the no-explanation baseline.
double utility_k(double accuracy_with, double accuracy_baseline);

enum class Aggregator { Mean, Trapezoid };
std::string_view aggregator_name(Aggregator a);
Aggregator parse_aggregator(std::string_view name);

struct UtilityPoint {
  int k = 0;  // cumulative training samples
  double value = 0.0;
};

struct UtilityCurve {
  std::string condition;
  std::vector<UtilityPoint> points;
  double utility = 0.0;
};

/// Mean of the points, or the trapezoid area divided by the K span. A single
/// point aggregates to itself.
double aggregate_utility(const std::vector<UtilityPoint>& points, Aggregator aggregator = Aggregator::Mean);

}  // namespace xai
