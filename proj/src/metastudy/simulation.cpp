#include "xai/metastudy/simulation.hpp"

#include "xai/error.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace xai {
namespace {

// Cell means over a grid x grid partition; channels kept.
Vector downsample(const Tensor& x, Index grid) {
  const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (grid < 1 || h % grid || w % grid) throw DataError("image side must be a multiple of the agent grid");
  const Index bh = h / grid, bw = w / grid;
  Vector out = Vector::Zero(grid * grid * c);
  for (Index r = 0; r < h; ++r)
    for (Index col = 0; col < w; ++col)
      for (Index ch = 0; ch < c; ++ch) out[((r / bh) * grid + col / bw) * c + ch] += x.at(r, col, ch);
  return out / static_cast<double>(bh * bw);
}

RowMatrix downsample(const RowMatrix& m, Index grid) {
  const Index bh = m.rows() / grid, bw = m.cols() / grid;
  if (grid < 1 || m.rows() % grid || m.cols() % grid) throw DataError("map side must be a multiple of the agent grid");
  RowMatrix out(grid, grid);
  for (Index r = 0; r < grid; ++r)
    for (Index c = 0; c < grid; ++c) out(r, c) = m.block(r * bh, c * bw, bh, bw).mean();
  return out;
}

Vector apply_mask(const Vector& cells, const RowMatrix& mask) {
  const Index channels = cells.size() / mask.size();
  Vector out = cells;
  for (Index i = 0; i < mask.size(); ++i) out.segment(i * channels, channels) *= mask.data()[i];
  return out;
}

bool same_image(const Tensor& a, const Tensor& b) { return &a == &b || (a.shape() == b.shape() && a.data() == b.data()); }

class ReservoirAgent : public Agent {
 public:
  Index answer(const TrialView& view) override {
    if (view.kind() == TrialKind::Train) return view.prediction();
    for (const auto& item : view.reservoir())
      if (same_image(*item.image, view.image())) return item.prediction;
    return guess(view);
  }

 protected:
  virtual Index guess(const TrialView& view) = 0;
};

class PrototypeAgent : public ReservoirAgent {
 public:
  PrototypeAgent(const AgentConfig& config, bool use_explanations)
      : grid_(config.grid), use_explanations_(use_explanations) {}

  void learn(const TrialView& view) override {
    const AttributionMap* e = use_explanations_ ? view.explanation() : nullptr;
    if (e) {
      const RowMatrix mask = downsample(e->normalized(), grid_);
      attention_sum_ = attention_count_ ? RowMatrix(attention_sum_ + mask) : mask;
      ++attention_count_;
    }
    const auto f = static_cast<std::size_t>(view.prediction());
    if (f > 1) throw DataError("simulated agents support binary predictions only");
    const Vector cells = downsample(view.image(), grid_);
    image_sum_[f] = counts_[f] ? Vector(image_sum_[f] + cells) : cells;
    ++counts_[f];
  }

 protected:
  Index guess(const TrialView& view) override {
    if (!counts_[0] && !counts_[1]) return 0;
    if (!counts_[0] || !counts_[1]) return counts_[0] ? 0 : 1;
    const RowMatrix attention =
        attention_count_ ? RowMatrix(attention_sum_ / static_cast<double>(attention_count_)) : RowMatrix::Ones(grid_, grid_);
    const Vector v = apply_mask(downsample(view.image(), grid_), attention);
    double best = std::numeric_limits<double>::infinity();
    Index out = 0;
    for (std::size_t f = 0; f < 2; ++f) {
      const Vector prototype = apply_mask(image_sum_[f] / static_cast<double>(counts_[f]), attention);
      const double d = (v - prototype).squaredNorm();
      if (d < best) {
        best = d;
        out = static_cast<Index>(f);
      }
    }
    return out;
  }

 private:
  Index grid_;
  bool use_explanations_;
  Vector image_sum_[2];
  int counts_[2] = {0, 0};
  RowMatrix attention_sum_;
  int attention_count_ = 0;
};

class PriorAgent : public ReservoirAgent {
 public:
  explicit PriorAgent(const AgentConfig& config) : rows_(config.prior_rows) {}

 protected:
  Index guess(const TrialView& view) override {
    const Tensor& x = view.image();
    const Index rows = std::min(rows_, x.dim(0)), cols = x.dim(1), channels = x.dim(2);
    double across_rows = 0.0, across_cols = 0.0;
    for (Index r = 0; r + 1 < rows; ++r)
      for (Index c = 0; c + 1 < cols; ++c)
        for (Index ch = 0; ch < channels; ++ch) {
          const double v = x.at(r, c, ch);
          across_rows += std::abs(x.at(r + 1, c, ch) - v);
          across_cols += std::abs(x.at(r, c + 1, ch) - v);
        }
    // A horizontal bar has long edges that change along the row direction.
    return across_rows >= across_cols ? 0 : 1;
  }

 private:
  Index rows_;
};

std::string participant_id(const Condition& c, int slot) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d", slot);
  return "sim-" + c.id + "-" + buf;
}

}  // namespace

TrialView::TrialView(const Trial& trial, Phase phase, const Tensor& image, const AttributionMap* explanation,
                     const std::vector<ReservoirItem>* reservoir)
    : trial_(trial), phase_(phase), image_(image), explanation_(explanation), reservoir_(reservoir) {}

Index TrialView::prediction() const {
  if (trial_.kind != TrialKind::Train) {
    throw ProtocolError("the model prediction is withheld on " + std::string(trial_kind_name(trial_.kind)) +
                        " trial " + trial_.id);
  }
  return trial_.prediction;
}

const AttributionMap* TrialView::explanation() const {
  if (trial_.kind != TrialKind::Train) {
    throw ProtocolError("explanations are withheld on " + std::string(trial_kind_name(trial_.kind)) + " trial " +
                        trial_.id);
  }
  return explanation_;
}

const std::vector<ReservoirItem>& TrialView::reservoir() const {
  if (trial_.kind == TrialKind::Train || !reservoir_) {
    throw ProtocolError("the reservoir is only available during the test phase (trial " + trial_.id + ")");
  }
  return *reservoir_;
}

std::string_view agent_kind_name(AgentKind kind) {
  switch (kind) {
    case AgentKind::UniformBaseline: return "uniform-baseline";
    case AgentKind::MaskLearner: return "mask-learner";
    case AgentKind::PriorOnly: return "prior-only";
  }
  return "unknown";
}

AgentKind parse_agent_kind(std::string_view name) {
  for (AgentKind k : {AgentKind::UniformBaseline, AgentKind::MaskLearner, AgentKind::PriorOnly})
    if (agent_kind_name(k) == name) return k;
  throw DataError("unknown agent kind '" + std::string(name) + "'");
}

std::unique_ptr<Agent> make_agent(AgentKind kind, const AgentConfig& config) {
  switch (kind) {
    case AgentKind::UniformBaseline: return std::make_unique<PrototypeAgent>(config, false);
    case AgentKind::MaskLearner: return std::make_unique<PrototypeAgent>(config, true);
    case AgentKind::PriorOnly: return std::make_unique<PriorAgent>(config);
  }
  throw DataError("unknown agent kind");
}

AgentFactory mask_learner_factory(const AgentConfig& config) {
  return [config](const Condition& c, int) {
    return make_agent(c.shows_explanation() ? AgentKind::MaskLearner : AgentKind::UniformBaseline, config);
  };
}

AgentFactory uniform_factory(AgentKind kind, const AgentConfig& config) {
  return [kind, config](const Condition&, int) { return make_agent(kind, config); };
}

SimulationResult run_simulated_study(const Study& study, const PlantedBiasDataset& stimuli, const AgentFactory& factory,
                                     const std::string& study_id, Aggregator aggregator) {
  const auto image = [&](Index i) -> const Tensor& {
    if (i < 0 || i >= stimuli.size()) throw DataError("schedule refers to a stimulus outside the dataset");
    return stimuli.images[static_cast<std::size_t>(i)];
  };

  SimulationResult out;
  for (const auto& condition : study.design.conditions) {
    for (const auto& schedule : study.schedules) {
      auto agent = factory(condition, schedule.slot);
      const std::size_t first = out.records.size();
      bool catch_failed = false;
      std::vector<ReservoirItem> reservoir;
      int reservoir_session = 0;

      for (const auto& trial : schedule.trials) {
        TrialRecord r;
        r.study = study_id;
        r.participant = participant_id(condition, schedule.slot);
        r.condition = condition.id;
        r.session = trial.session;
        r.position = trial.position;
        r.trial_id = trial.id;
        r.kind = trial.kind;
        r.image = trial.image;
        r.label = trial.label;
        r.prediction = trial.prediction;

        if (trial.kind == TrialKind::Train) {
          const AttributionMap* e =
              condition.shows_explanation() ? &study.explanation(*condition.method, trial.image) : nullptr;
          r.choice = agent->answer(TrialView(trial, TrialView::Phase::Answer, image(trial.image), e, nullptr));
          agent->learn(TrialView(trial, TrialView::Phase::Learn, image(trial.image), e, nullptr));
        } else {
          if (reservoir_session != trial.session) {
            reservoir.clear();
            for (const Trial* t : schedule.session_trials(trial.session, TrialKind::Train))
              reservoir.push_back({&image(t->image), t->prediction});
            reservoir_session = trial.session;
          }
          r.choice = agent->answer(TrialView(trial, TrialView::Phase::Answer, image(trial.image), nullptr, &reservoir));
          if (trial.kind == TrialKind::Catch && r.choice != trial.prediction) catch_failed = true;
        }
        out.records.push_back(std::move(r));
      }
      for (std::size_t i = first; i < out.records.size(); ++i) out.records[i].catch_failed = catch_failed;
    }
  }
  out.analysis = analyze_records(out.records, study.design, aggregator);
  return out;
}

}  // namespace xai
