#include "xai/metastudy/study.hpp"

#include "xai/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

namespace xai {
namespace {

nlohmann::json methods_json(const MethodConfig& m) {
  return {{"integrated_gradients_steps", m.integrated_gradients.steps},
          {"smoothgrad_samples", m.smoothgrad.samples},
          {"smoothgrad_sigma", m.smoothgrad.sigma},
          {"occlusion_patch", m.occlusion.patch},
          {"occlusion_stride", m.occlusion.stride},
          {"occlusion_baseline", m.occlusion.baseline},
          {"control_scales", m.control.scales}};
}

MethodConfig methods_from_json(const nlohmann::json& j) {
  MethodConfig m;
  m.integrated_gradients.steps = j.value("integrated_gradients_steps", m.integrated_gradients.steps);
  m.smoothgrad.samples = j.value("smoothgrad_samples", m.smoothgrad.samples);
  m.smoothgrad.sigma = j.value("smoothgrad_sigma", m.smoothgrad.sigma);
  m.occlusion.patch = j.value("occlusion_patch", m.occlusion.patch);
  m.occlusion.stride = j.value("occlusion_stride", m.occlusion.stride);
  m.occlusion.baseline = j.value("occlusion_baseline", m.occlusion.baseline);
  m.control.scales = j.value("control_scales", m.control.scales);
  return m;
}

// Stimuli split by (model correct, predicted class).
using Buckets = std::array<std::array<std::vector<Index>, 2>, 2>;

Buckets bucketize(const std::vector<Index>& pool, const std::vector<Index>& predictions,
                  const std::vector<Index>& labels) {
  Buckets b;
  for (Index i : pool) {
    const auto u = static_cast<std::size_t>(i);
    const Index f = predictions[u];
    if (f < 0 || f > 1) throw DataError("study stimuli must come from a binary classifier");
    b[predictions[u] == labels[u] ? 1 : 0][static_cast<std::size_t>(f)].push_back(i);
  }
  return b;
}

struct Draw {
  Buckets buckets;
  std::array<std::array<std::size_t, 2>, 2> next{};

  Index take(bool correct, Index f, const char* pool_name) {
    auto& list = buckets[correct][static_cast<std::size_t>(f)];
    auto& cursor = next[correct][static_cast<std::size_t>(f)];
    if (cursor >= list.size()) {
      throw DataError(std::string("not enough ") + (correct ? "correctly" : "incorrectly") + " classified " +
                      pool_name + " stimuli with prediction " + std::to_string(f) +
                      " for a balanced block; use a larger or less biased stimulus set");
    }
    return list[cursor++];
  }
};

// Block of n stimuli with an alternating floor/ceil share of correct items and
// alternating predicted classes inside each share.
std::vector<Index> balanced_block(Draw& draw, int n, double balance, int parity, std::mt19937_64& rng,
                                  const char* pool_name) {
  const double exact = balance * n;
  const int correct = parity == 0 ? static_cast<int>(std::ceil(exact - 1e-9)) : static_cast<int>(std::floor(exact + 1e-9));
  std::vector<Index> block;
  for (int j = 0; j < n; ++j) {
    const bool is_correct = j < correct;
    const int rank = is_correct ? j : j - correct;
    const Index f = (rank + parity + (is_correct ? 0 : 1)) % 2;
    block.push_back(draw.take(is_correct, f, pool_name));
  }
  std::shuffle(block.begin(), block.end(), rng);
  return block;
}

std::string trial_id(int session, int position) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "s%dp%02d", session, position);
  return buf;
}

}  // namespace

Condition baseline_condition() { return {"baseline", ConditionKind::Baseline, std::nullopt}; }
Condition control_condition() { return {"control", ConditionKind::Control, Method::Control}; }
Condition explanation_condition(Method method) {
  if (method == Method::Control) return control_condition();
  return {std::string(method_name(method)), ConditionKind::Explanation, method};
}

Condition parse_condition(std::string_view id) {
  if (id == "baseline") return baseline_condition();
  if (id == "control") return control_condition();
  return explanation_condition(parse_method(id));
}

std::vector<Condition> default_conditions() {
  std::vector<Condition> out{baseline_condition(), control_condition()};
  for (Method m : attribution_methods()) out.push_back(explanation_condition(m));
  return out;
}

int StudyDesign::condition_index(std::string_view id) const {
  for (std::size_t i = 0; i < conditions.size(); ++i)
    if (conditions[i].id == id) return static_cast<int>(i);
  throw NotFoundError("unknown condition '" + std::string(id) + "'");
}

nlohmann::json StudyDesign::to_json() const {
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& c : conditions) ids.push_back(c.id);
  return {{"v", 1},
          {"conditions", ids},
          {"sessions", sessions},
          {"train_per_session", train_per_session},
          {"test_per_session", test_per_session},
          {"catch_per_session", catch_per_session},
          {"correctness_balance", correctness_balance},
          {"participants_per_condition", participants_per_condition},
          {"seed", seed},
          {"methods", methods_json(methods)}};
}

StudyDesign StudyDesign::from_json(const nlohmann::json& j) {
  try {
    if (j.contains("v") && j.at("v") != 1) throw VersionError("unsupported study design version " + j.at("v").dump());
    StudyDesign d;
    if (j.contains("conditions")) {
      d.conditions.clear();
      for (const auto& id : j.at("conditions")) d.conditions.push_back(parse_condition(id.get<std::string>()));
    }
    d.sessions = j.value("sessions", d.sessions);
    d.train_per_session = j.value("train_per_session", d.train_per_session);
    d.test_per_session = j.value("test_per_session", d.test_per_session);
    d.catch_per_session = j.value("catch_per_session", d.catch_per_session);
    d.correctness_balance = j.value("correctness_balance", d.correctness_balance);
    d.participants_per_condition = j.value("participants_per_condition", d.participants_per_condition);
    d.seed = j.value("seed", d.seed);
    if (j.contains("methods")) d.methods = methods_from_json(j.at("methods"));
    validate(d);
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed study design: ") + e.what());
  }
}

void validate(const StudyDesign& d) {
  if (d.conditions.empty()) throw DataError("study design has no conditions");
  std::set<std::string> seen;
  bool has_baseline = false;
  for (const auto& c : d.conditions) {
    if (!seen.insert(c.id).second) throw DataError("duplicate condition '" + c.id + "'");
    has_baseline |= c.kind == ConditionKind::Baseline;
  }
  if (!has_baseline) throw DataError("study design needs a baseline condition");
  if (d.sessions < 1 || d.train_per_session < 1 || d.test_per_session < 1 || d.participants_per_condition < 1) {
    throw DataError("sessions, block sizes and participants per condition must be positive");
  }
  if (d.catch_per_session < 0 || d.catch_per_session > d.train_per_session) {
    throw DataError("catch trials per session must lie in [0, train_per_session]");
  }
  if (!(d.correctness_balance >= 0.0 && d.correctness_balance <= 1.0)) {
    throw DataError("correctness balance must lie in [0, 1]");
  }
}

std::string_view trial_kind_name(TrialKind kind) {
  switch (kind) {
    case TrialKind::Practice: return "practice";
    case TrialKind::Quiz: return "quiz";
    case TrialKind::Train: return "train";
    case TrialKind::Test: return "test";
    case TrialKind::Catch: return "catch";
  }
  return "unknown";
}

TrialKind parse_trial_kind(std::string_view name) {
  for (TrialKind k : {TrialKind::Practice, TrialKind::Quiz, TrialKind::Train, TrialKind::Test, TrialKind::Catch})
    if (trial_kind_name(k) == name) return k;
  throw FormatError("unknown trial kind '" + std::string(name) + "'");
}

std::vector<const Trial*> Schedule::session_trials(int session, TrialKind kind) const {
  std::vector<const Trial*> out;
  for (const auto& t : trials)
    if (t.session == session && t.kind == kind) out.push_back(&t);
  return out;
}

std::string explanation_key(Method method, Index image) {
  return std::string(method_name(method)) + "/" + std::to_string(image);
}

const AttributionMap& Study::explanation(Method method, Index image) const {
  auto it = explanations.find(explanation_key(method, image));
  if (it == explanations.end()) throw NotFoundError("no precomputed explanation " + explanation_key(method, image));
  return it->second;
}

nlohmann::json Study::schedule_json() const {
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& s : schedules) {
    nlohmann::json trials = nlohmann::json::array();
    for (const auto& t : s.trials) {
      trials.push_back({{"id", t.id},
                        {"kind", trial_kind_name(t.kind)},
                        {"image", t.image},
                        {"prediction", t.prediction},
                        {"label", t.label},
                        {"session", t.session},
                        {"position", t.position}});
    }
    slots.push_back({{"slot", s.slot}, {"trials", trials}});
  }
  return {{"v", 1}, {"kind", "study_schedule"}, {"design", design.to_json()}, {"slots", slots}};
}

Study build_study(const StudyDesign& design, const PlantedBiasDataset& stimuli, const Model& model) {
  validate(design);
  const Index n = stimuli.size();
  if (n < 4) throw DataError("study needs at least 4 stimuli");
  Study study;
  study.design = design;
  for (Index i = 0; i < n; ++i) {
    study.predictions.push_back(predict(model, stimuli.images[static_cast<std::size_t>(i)]).predicted_class);
    study.labels.push_back(stimuli.label(i));
  }

  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::seed_seq split_seed{design.seed, std::uint64_t{0x5b17}};
  std::mt19937_64 split_rng(split_seed);
  std::shuffle(order.begin(), order.end(), split_rng);
  const std::vector<Index> train_pool(order.begin(), order.begin() + n / 2);
  const std::vector<Index> test_pool(order.begin() + n / 2, order.end());
  const Buckets train_buckets = bucketize(train_pool, study.predictions, study.labels);
  const Buckets test_buckets = bucketize(test_pool, study.predictions, study.labels);

  auto make_trial = [&](TrialKind kind, Index image, int session, int position) {
    Trial t;
    t.id = trial_id(session, position);
    t.kind = kind;
    t.image = image;
    t.prediction = study.predictions[static_cast<std::size_t>(image)];
    t.label = study.labels[static_cast<std::size_t>(image)];
    t.session = session;
    t.position = position;
    return t;
  };

  for (int slot = 0; slot < design.participants_per_condition; ++slot) {
    std::seed_seq slot_seed{design.seed, static_cast<std::uint64_t>(slot), std::uint64_t{0x51a7}};
    std::mt19937_64 rng(slot_seed);
    Draw train{train_buckets, {}}, test{test_buckets, {}};
    for (Draw* d : {&train, &test})
      for (auto& row : d->buckets)
        for (auto& list : row) std::shuffle(list.begin(), list.end(), rng);

    Schedule schedule;
    schedule.slot = slot;
    for (int s = 1; s <= design.sessions; ++s) {
      const int parity = (slot + s) % 2;
      int position = 0;
      const auto train_block =
          balanced_block(train, design.train_per_session, design.correctness_balance, parity, rng, "training");
      for (Index image : train_block) schedule.trials.push_back(make_trial(TrialKind::Train, image, s, position++));
      const auto test_block =
          balanced_block(test, design.test_per_session, design.correctness_balance, parity, rng, "test");

      std::vector<std::pair<TrialKind, Index>> phase;
      for (Index image : test_block) phase.emplace_back(TrialKind::Test, image);
      std::vector<Index> catch_sources = train_block;
      std::shuffle(catch_sources.begin(), catch_sources.end(), rng);
      for (int c = 0; c < design.catch_per_session; ++c) {
        std::uniform_int_distribution<std::size_t> where(0, phase.size());
        phase.insert(phase.begin() + static_cast<std::ptrdiff_t>(where(rng)),
                     {TrialKind::Catch, catch_sources[static_cast<std::size_t>(c)]});
      }
      for (const auto& [kind, image] : phase) schedule.trials.push_back(make_trial(kind, image, s, position++));
    }
    study.schedules.push_back(std::move(schedule));
  }

  for (const auto& condition : design.conditions) {
    if (!condition.shows_explanation()) continue;
    const Method method = *condition.method;
    for (const auto& schedule : study.schedules)
      for (const auto& t : schedule.trials) {
        if (t.kind != TrialKind::Train) continue;
        const std::string key = explanation_key(method, t.image);
        if (study.explanations.count(key)) continue;
        study.explanations.emplace(key, explain(method, model, stimuli.images[static_cast<std::size_t>(t.image)],
                                                t.prediction, design.methods,
                                                design.seed * 1000003u + static_cast<std::uint64_t>(t.image)));
      }
  }
  return study;
}

double utility_k(double accuracy_with, double accuracy_baseline) {
  if (!(accuracy_baseline > 0.0)) throw DataError("utility is undefined for a zero baseline accuracy");
  return accuracy_with / accuracy_baseline;
}

std::string_view aggregator_name(Aggregator a) { return a == Aggregator::Mean ? "mean" : "trapezoid"; }

Aggregator parse_aggregator(std::string_view name) {
  if (name == "mean") return Aggregator::Mean;
  if (name == "trapezoid") return Aggregator::Trapezoid;
  throw DataError("unknown utility aggregator '" + std::string(name) + "'");
}

double aggregate_utility(const std::vector<UtilityPoint>& points, Aggregator aggregator) {
  if (points.empty()) throw DataError("cannot aggregate an empty utility curve");
  if (points.size() == 1) return points.front().value;
  if (aggregator == Aggregator::Mean) {
    double sum = 0.0;
    for (const auto& p : points) sum += p.value;
    return sum / static_cast<double>(points.size());
  }
  std::vector<UtilityPoint> sorted = points;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.k < b.k; });
  const double span = sorted.back().k - sorted.front().k;
  if (span <= 0.0) throw DataError("trapezoid aggregation needs at least two distinct K values");
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i)
    area += 0.5 * (sorted[i].value + sorted[i + 1].value) * (sorted[i + 1].k - sorted[i].k);
  return area / span;
}

}  // namespace xai
