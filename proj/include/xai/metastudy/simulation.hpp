#pragma once

#include "xai/metastudy/records.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace xai {

/// A training example shown in the current session's reservoir.
struct ReservoirItem {
  const Tensor* image = nullptr;
  Index prediction = 0;
};

/// What a participant can see at one moment of a trial. Accessors for
/// withheld information throw ProtocolError instead of returning it.
///
///   train:      image, model prediction, explanation (if the condition has one)
///   test/catch: image, reservoir
///
/// Train trials are answered (an attention response, not scored) and then
/// learned from; both phases see the same information.
class TrialView {
 public:
  enum class Phase { Answer, Learn };

  TrialView(const Trial& trial, Phase phase, const Tensor& image, const AttributionMap* explanation,
            const std::vector<ReservoirItem>* reservoir);

  TrialKind kind() const { return trial_.kind; }
  int session() const { return trial_.session; }
  Phase phase() const { return phase_; }
  const Tensor& image() const { return image_; }

  Index prediction() const;
  /// nullptr on train trials of the baseline condition.
  const AttributionMap* explanation() const;
  const std::vector<ReservoirItem>& reservoir() const;

 private:
  const Trial& trial_;
  Phase phase_;
  const Tensor& image_;
  const AttributionMap* explanation_;
  const std::vector<ReservoirItem>* reservoir_;
};

class Agent {
 public:
  virtual ~Agent() = default;
  virtual Index answer(const TrialView& view) = 0;
  /// Called after every train answer.
  virtual void learn(const TrialView& view) { (void)view; }
};

enum class AgentKind { UniformBaseline, MaskLearner, PriorOnly };
std::string_view agent_kind_name(AgentKind kind);
AgentKind parse_agent_kind(std::string_view name);

struct AgentConfig {
  Index grid = 8;         // images and masks are averaged down to grid x grid cells
  Index prior_rows = 28;  // rows inspected by the prior-only agent
};

/// Every agent echoes the shown prediction on train trials and answers a test
/// image that matches a reservoir item with that item's prediction.
///
/// MaskLearner keeps per-class means of the downsampled training images, keyed
/// by the model prediction, and an attention mask equal to the running mean of
/// the min-max normalised explanations. Prototypes and the query are both
/// multiplied by the attention before taking the nearest prototype in
/// Euclidean distance. Without explanations the mask is all ones, which is what
/// UniformBaseline always uses.
///
/// PriorOnly ignores the model and guesses the bar orientation from image
/// gradients (horizontal bar -> class 0).
std::unique_ptr<Agent> make_agent(AgentKind kind, const AgentConfig& config = {});

using AgentFactory = std::function<std::unique_ptr<Agent>(const Condition& condition, int slot)>;

/// Mask learners everywhere (uniform in the baseline condition automatically).
AgentFactory mask_learner_factory(const AgentConfig& config = {});
/// The same agent kind for every condition.
AgentFactory uniform_factory(AgentKind kind, const AgentConfig& config = {});

struct SimulationResult {
  std::vector<TrialRecord> records;
  StudyAnalysis analysis;
};

/// Walks every (condition, slot) schedule with a fresh agent, records every
/// answer in the service's export schema and analyses the records. Simulated
/// participants skip practice and quiz and report rt_ms = 0.
SimulationResult run_simulated_study(const Study& study, const PlantedBiasDataset& stimuli, const AgentFactory& factory,
                                     const std::string& study_id = "sim", Aggregator aggregator = Aggregator::Mean);

}  // namespace xai
