#include "model_cache.hpp"
#include "utility_table.hpp"

#include "xai/error.hpp"
#include "xai/metastudy/simulation.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

using namespace xai;
using xai::testing::bias_model;

namespace {

StudyDesign small_design() {
  StudyDesign d;
  d.conditions = {baseline_condition(), control_condition(), explanation_condition(Method::GradCam)};
  d.participants_per_condition = 6;
  d.seed = 3;
  return d;
}

const PlantedBiasDataset& stimuli() {
  static const PlantedBiasDataset ds = generate_dataset({160, 0.0, 7});
  return ds;
}

const Study& small_study() {
  static const Study study = build_study(small_design(), stimuli(), bias_model());
  return study;
}

std::set<Index> images_of(const Schedule& s, int session, TrialKind kind) {
  std::set<Index> out;
  for (const Trial* t : s.session_trials(session, kind)) out.insert(t->image);
  return out;
}

TrialRecord record(const std::string& participant, const std::string& condition, int session, TrialKind kind,
                   Index prediction, Index choice) {
  TrialRecord r;
  r.study = "hand";
  r.participant = participant;
  r.condition = condition;
  r.session = session;
  r.kind = kind;
  r.image = 0;
  r.label = 0;
  r.prediction = prediction;
  r.choice = choice;
  return r;
}

// Adds `agree` agreeing and `n - agree` disagreeing test trials.
void add_session(std::vector<TrialRecord>& out, const std::string& p, const std::string& c, int session, int agree,
                 int n) {
  for (int i = 0; i < n; ++i) out.push_back(record(p, c, session, TrialKind::Test, 1, i < agree ? 1 : 0));
}

class PeekingAgent : public Agent {
 public:
  Index answer(const TrialView& view) override {
    const AttributionMap* e = view.explanation();
    return e ? 0 : 1;
  }
};

class ConstantAgent : public Agent {
 public:
  Index answer(const TrialView&) override { return 0; }
};

}  // namespace

TEST(Design, DefaultProtocolArithmetic) {
  StudyDesign d;
  EXPECT_EQ(d.conditions.size(), 8u);
  EXPECT_EQ(d.trials_per_participant(), 39);
  EXPECT_EQ(d.conditions[0].id, "baseline");
  EXPECT_EQ(d.conditions[1].id, "control");
  EXPECT_EQ(d.conditions[1].method, Method::Control);
  EXPECT_FALSE(d.conditions[0].shows_explanation());
}

TEST(Design, JsonRoundTripAndValidation) {
  StudyDesign d = small_design();
  d.methods.smoothgrad.samples = 12;
  const StudyDesign back = StudyDesign::from_json(d.to_json());
  EXPECT_EQ(back.to_json(), d.to_json());

  StudyDesign bad = d;
  bad.conditions = {control_condition()};
  EXPECT_THROW(validate(bad), DataError);
  bad = d;
  bad.conditions.push_back(control_condition());
  EXPECT_THROW(validate(bad), DataError);
  bad = d;
  bad.catch_per_session = 6;
  EXPECT_THROW(validate(bad), DataError);
  auto j = d.to_json();
  j["v"] = 2;
  EXPECT_THROW(StudyDesign::from_json(j), VersionError);
  EXPECT_THROW(parse_condition("lime"), DataError);
}

TEST(Schedule, ThirtyNineTrialsWithSessionStructure) {
  const Study& s = small_study();
  ASSERT_EQ(s.schedules.size(), 6u);
  for (const auto& sch : s.schedules) {
    ASSERT_EQ(sch.trials.size(), 39u);
    std::set<std::string> ids;
    for (const auto& t : sch.trials) ids.insert(t.id);
    EXPECT_EQ(ids.size(), 39u);
    for (int session = 1; session <= 3; ++session) {
      EXPECT_EQ(sch.session_trials(session, TrialKind::Train).size(), 5u);
      EXPECT_EQ(sch.session_trials(session, TrialKind::Test).size(), 7u);
      EXPECT_EQ(sch.session_trials(session, TrialKind::Catch).size(), 1u);
    }
  }
}

TEST(Schedule, TrainPhasePrecedesTestPhase) {
  for (const auto& sch : small_study().schedules) {
    int last_train = -1, first_test = 1 << 20, prev_session = 1;
    for (std::size_t i = 0; i < sch.trials.size(); ++i) {
      const auto& t = sch.trials[i];
      if (t.session != prev_session) {
        EXPECT_LT(last_train, first_test);
        last_train = -1;
        first_test = 1 << 20;
        prev_session = t.session;
      }
      if (t.kind == TrialKind::Train) last_train = std::max(last_train, t.position);
      else first_test = std::min(first_test, t.position);
    }
    EXPECT_LT(last_train, first_test);
  }
}

TEST(Schedule, BlocksAreCorrectnessBalanced) {
  for (const auto& sch : small_study().schedules) {
    int correct_total = 0, total = 0;
    for (int session = 1; session <= 3; ++session) {
      for (TrialKind kind : {TrialKind::Train, TrialKind::Test}) {
        const auto block = sch.session_trials(session, kind);
        int correct = 0, class1 = 0;
        for (const Trial* t : block) {
          correct += t->model_correct();
          class1 += t->prediction == 1;
        }
        const int n = static_cast<int>(block.size());
        EXPECT_TRUE(correct == n / 2 || correct == (n + 1) / 2) << correct << "/" << n;
        EXPECT_TRUE(class1 == n / 2 || class1 == (n + 1) / 2) << class1 << "/" << n;
        correct_total += correct;
        total += n;
      }
    }
    // Ceil and floor alternate across sessions, so three sessions land within one item of half.
    EXPECT_LE(std::abs(2 * correct_total - total), 2);
  }
}

TEST(Schedule, CatchDuplicatesCurrentSessionTrainImage) {
  for (const auto& sch : small_study().schedules)
    for (int session = 1; session <= 3; ++session) {
      const auto train = images_of(sch, session, TrialKind::Train);
      for (const Trial* t : sch.session_trials(session, TrialKind::Catch)) EXPECT_TRUE(train.count(t->image));
    }
}

TEST(Schedule, TrainAndTestPoolsAreDisjoint) {
  std::set<Index> train, test;
  for (const auto& sch : small_study().schedules)
    for (const auto& t : sch.trials) (t.kind == TrialKind::Train ? train : t.kind == TrialKind::Test ? test : train).insert(t.image);
  for (Index i : test) EXPECT_FALSE(train.count(i)) << i;
}

TEST(Schedule, SlotsDifferButAreDeterministic) {
  const Study again = build_study(small_design(), stimuli(), bias_model());
  EXPECT_EQ(again.schedule_json(), small_study().schedule_json());
  ASSERT_EQ(again.explanations.size(), small_study().explanations.size());
  for (const auto& [key, map] : again.explanations) EXPECT_EQ(map.values, small_study().explanations.at(key).values);
  auto sequence = [](const Schedule& sch) {
    std::vector<Index> out;
    for (const auto& t : sch.trials) out.push_back(t.image);
    return out;
  };
  EXPECT_NE(sequence(small_study().schedules[0]), sequence(small_study().schedules[1]));
}

TEST(Schedule, ExplanationsCoverEveryTrainTrial) {
  const Study& s = small_study();
  for (const auto& sch : s.schedules)
    for (const auto& t : sch.trials) {
      if (t.kind != TrialKind::Train) continue;
      for (Method m : {Method::Control, Method::GradCam}) {
        const auto& e = s.explanation(m, t.image);
        EXPECT_EQ(e.method, m);
        EXPECT_EQ(e.target_class, t.prediction);
        EXPECT_EQ(e.rows(), kImageSide);
      }
    }
  EXPECT_THROW(s.explanation(Method::Saliency, s.schedules[0].trials[0].image), NotFoundError);
}

TEST(Schedule, UnbalanceableStimuliRejected) {
  // Every β=1 stimulus is classified correctly, so no incorrect items exist.
  EXPECT_THROW(build_study(small_design(), generate_dataset({40, 1.0, 5}), bias_model()), DataError);
}

TEST(Utility, ReferenceRatios) {
  EXPECT_NEAR(utility_k(0.776, 0.557), 1.393, 5e-4);
  EXPECT_NEAR(utility_k(0.533, 0.557), 0.957, 5e-4);
  EXPECT_THROW(utility_k(0.5, 0.0), DataError);
}

TEST(Utility, PublishedTableRecomputedFromSessionAccuracies) {
  int cells = 0;
  for (const auto& dataset : xai::testing::published_utility_table()) {
    const auto& base = dataset.rows.front();
    for (const auto& row : dataset.rows) {
      std::vector<UtilityPoint> pts;
      for (int s = 0; s < 3; ++s) pts.push_back({5 * (s + 1), utility_k(row.sessions[s], base.sessions[s])});
      EXPECT_NEAR(aggregate_utility(pts), row.utility, 0.02) << dataset.name << " " << row.condition;
      ++cells;
    }
  }
  EXPECT_EQ(cells, 24);
}

TEST(Utility, GradcamAndSmoothgradCells) {
  auto curve = [](std::array<double, 3> a) {
    const std::array<double, 3> base{55.7, 66.2, 62.9};
    std::vector<UtilityPoint> pts;
    for (int s = 0; s < 3; ++s) pts.push_back({5 * (s + 1), a[s] / base[s]});
    return pts;
  };
  EXPECT_NEAR(aggregate_utility(curve({77.6, 85.7, 84.1})), 1.342, 1e-3);
  EXPECT_NEAR(aggregate_utility(curve({68.7, 75.3, 78.0})), 1.203, 1e-3);
  // The trapezoid reading gives a visibly different occlusion value.
  const auto occ = curve({71.0, 75.7, 78.1});
  EXPECT_NEAR(aggregate_utility(occ, Aggregator::Mean), 1.22, 5e-3);
  EXPECT_NEAR(aggregate_utility(occ, Aggregator::Trapezoid), 1.20, 5e-3);
}

TEST(Utility, AggregatorProperties) {
  const std::vector<UtilityPoint> pts{{5, 1.0}, {10, 2.0}, {15, 2.0}};
  EXPECT_NEAR(aggregate_utility(pts, Aggregator::Mean), 5.0 / 3.0, 1e-15);
  EXPECT_NEAR(aggregate_utility(pts, Aggregator::Trapezoid), 1.75, 1e-15);
  std::vector<UtilityPoint> scaled = pts, reversed(pts.rbegin(), pts.rend());
  for (auto& p : scaled) p.value *= 2.5;
  for (Aggregator a : {Aggregator::Mean, Aggregator::Trapezoid}) {
    EXPECT_NEAR(aggregate_utility(scaled, a), 2.5 * aggregate_utility(pts, a), 1e-14);
    EXPECT_NEAR(aggregate_utility(reversed, a), aggregate_utility(pts, a), 1e-15);
    EXPECT_EQ(aggregate_utility({{5, 0.8}}, a), 0.8);
    EXPECT_NEAR(aggregate_utility({{5, 1.1}, {10, 1.1}, {15, 1.1}}, a), 1.1, 1e-15);
    EXPECT_THROW(aggregate_utility({}, a), DataError);
  }
  EXPECT_THROW(aggregate_utility({{5, 1.0}, {5, 2.0}}, Aggregator::Trapezoid), DataError);
  EXPECT_EQ(parse_aggregator("trapezoid"), Aggregator::Trapezoid);
  EXPECT_THROW(parse_aggregator("auc"), DataError);
}

TEST(Protocol, ViewsWithholdInformation) {
  const Study& s = small_study();
  const auto& sch = s.schedules[0];
  const Trial& train = *sch.session_trials(1, TrialKind::Train)[0];
  const Trial& test = *sch.session_trials(1, TrialKind::Test)[0];
  const Tensor& x = stimuli().images[0];
  const AttributionMap& e = s.explanation(Method::GradCam, train.image);
  std::vector<ReservoirItem> reservoir{{&x, 1}};

  TrialView answer(train, TrialView::Phase::Answer, x, &e, nullptr);
  EXPECT_EQ(answer.prediction(), train.prediction);
  EXPECT_EQ(answer.explanation(), &e);
  EXPECT_THROW(answer.reservoir(), ProtocolError);
  TrialView learn(train, TrialView::Phase::Learn, x, &e, nullptr);
  EXPECT_EQ(learn.prediction(), train.prediction);

  TrialView probe(test, TrialView::Phase::Answer, x, nullptr, &reservoir);
  EXPECT_THROW(probe.explanation(), ProtocolError);
  EXPECT_THROW(probe.prediction(), ProtocolError);
  EXPECT_EQ(probe.reservoir().size(), 1u);
}

TEST(Protocol, AgentRequestingTestExplanationIsHardError) {
  AgentFactory cheat = [](const Condition&, int) { return std::make_unique<PeekingAgent>(); };
  EXPECT_THROW(run_simulated_study(small_study(), stimuli(), cheat), ProtocolError);
}

TEST(Agents, NamesAndCatchTrials) {
  for (AgentKind k : {AgentKind::UniformBaseline, AgentKind::MaskLearner, AgentKind::PriorOnly})
    EXPECT_EQ(parse_agent_kind(agent_kind_name(k)), k);
  EXPECT_THROW(parse_agent_kind("oracle"), DataError);
  EXPECT_THROW(make_agent(AgentKind::MaskLearner, AgentConfig{5})->learn(TrialView(
                   small_study().schedules[0].trials[0], TrialView::Phase::Learn, stimuli().images[0], nullptr, nullptr)),
               DataError);

  // Reservoir lookup means cooperative agents never fail a catch trial.
  const auto sim = run_simulated_study(small_study(), stimuli(), mask_learner_factory());
  EXPECT_EQ(sim.analysis.excluded_participants, 0);
  for (const auto& r : sim.records)
    if (r.kind == TrialKind::Catch) EXPECT_TRUE(r.agree());

  AgentFactory constant = [](const Condition&, int) { return std::make_unique<ConstantAgent>(); };
  const auto lazy = analyze_records(run_simulated_study(small_study(), stimuli(), constant).records, small_design());
  int fails = 0;
  for (const auto& sch : small_study().schedules) {
    bool any = false;
    for (const auto& t : sch.trials) any |= t.kind == TrialKind::Catch && t.prediction != 0;
    fails += any;
  }
  EXPECT_GT(fails, 0);
  EXPECT_EQ(lazy.excluded_participants, 3 * fails);
}

TEST(Simulation, ExplanationsHelpAndPriorIsChance) {
  const auto sim = run_simulated_study(small_study(), stimuli(), mask_learner_factory());
  EXPECT_EQ(sim.records.size(), 3u * 6u * 39u);
  EXPECT_EQ(sim.analysis.condition("baseline").curve.utility, 1.0);
  EXPECT_GT(sim.analysis.condition("gradcam").curve.utility, 1.05);
  EXPECT_LE(sim.analysis.condition("control").curve.utility, 1.05);
  ASSERT_TRUE(sim.analysis.anova.has_value());
  EXPECT_EQ(sim.analysis.anova->df_between, 2);

  const auto prior = run_simulated_study(small_study(), stimuli(), uniform_factory(AgentKind::PriorOnly));
  for (const auto& c : prior.analysis.conditions) {
    double mean = 0.0;
    for (double a : c.participant_accuracy) mean += a / static_cast<double>(c.participant_accuracy.size());
    EXPECT_NEAR(mean, 0.5, 0.1) << c.condition;
  }
}

TEST(Simulation, Reproducible) {
  const auto a = run_simulated_study(small_study(), stimuli(), mask_learner_factory());
  const auto b = run_simulated_study(small_study(), stimuli(), mask_learner_factory());
  EXPECT_EQ(records_to_jsonl(a.records), records_to_jsonl(b.records));
  EXPECT_EQ(a.analysis.to_json().dump(), b.analysis.to_json().dump());
}

TEST(Records, JsonlAndCsvRoundTripsAreByteIdentical) {
  auto records = run_simulated_study(small_study(), stimuli(), mask_learner_factory()).records;
  records[0].study = "odd, \"quoted\" id";
  records[1].rt_ms = 1234.5678901234567;
  records[2].served_ms = 1700000000123;
  records[3].quiz_failed = true;
  const std::string jsonl = records_to_jsonl(records);
  EXPECT_EQ(records_to_jsonl(records_from_jsonl(jsonl)), jsonl);
  const std::string csv = records_to_csv(records);
  EXPECT_EQ(records_to_csv(records_from_csv(csv)), csv);
  EXPECT_EQ(records_from_csv(csv)[1].rt_ms, records[1].rt_ms);
  EXPECT_EQ(records_from_csv(csv)[0].study, records[0].study);
}

TEST(Records, MalformedInputRejected) {
  EXPECT_THROW(records_from_jsonl("{\"v\": 1}\n"), FormatError);
  EXPECT_THROW(records_from_jsonl("not json\n"), FormatError);
  auto j = record("p", "baseline", 1, TrialKind::Test, 1, 1).to_json();
  j["v"] = 9;
  EXPECT_THROW(records_from_jsonl(j.dump() + "\n"), VersionError);
  EXPECT_THROW(records_from_csv(""), FormatError);
  EXPECT_THROW(records_from_csv("a,b\n"), FormatError);
  std::string csv = records_to_csv({record("p", "baseline", 1, TrialKind::Test, 1, 1)});
  EXPECT_THROW(records_from_csv(csv.substr(0, csv.size() - 3) + "x\n"), FormatError);
}

TEST(Analysis, ExportedRecordsAnalyseIdentically) {
  const auto sim = run_simulated_study(small_study(), stimuli(), mask_learner_factory());
  const auto from_csv = analyze_records(records_from_csv(records_to_csv(sim.records)), small_design());
  const auto from_jsonl = analyze_records(records_from_jsonl(records_to_jsonl(sim.records)), small_design());
  EXPECT_EQ(from_csv.to_json().dump(), sim.analysis.to_json().dump());
  EXPECT_EQ(from_jsonl.to_json().dump(), sim.analysis.to_json().dump());
  EXPECT_EQ(from_csv.table_csv(), sim.analysis.table_csv());
}

TEST(Analysis, HandComputedCase) {
  StudyDesign d;
  d.conditions = {baseline_condition(), explanation_condition(Method::Saliency)};
  d.sessions = 2;
  d.test_per_session = 4;
  std::vector<TrialRecord> r;
  add_session(r, "b1", "baseline", 1, 2, 4);
  add_session(r, "b1", "baseline", 2, 2, 4);
  add_session(r, "b2", "baseline", 1, 2, 4);
  add_session(r, "b2", "baseline", 2, 4, 4);
  add_session(r, "s1", "saliency", 1, 3, 4);
  add_session(r, "s1", "saliency", 2, 4, 4);
  add_session(r, "s2", "saliency", 1, 3, 4);
  add_session(r, "s2", "saliency", 2, 3, 4);
  r.push_back(record("s1", "saliency", 1, TrialKind::Train, 1, 0));  // train answers are not scored
  add_session(r, "x1", "saliency", 1, 0, 4);
  r.push_back(record("x1", "saliency", 1, TrialKind::Catch, 1, 0));

  const auto a = analyze_records(r, d);
  EXPECT_EQ(a.excluded_participants, 1);
  const auto& base = a.condition("baseline");
  EXPECT_DOUBLE_EQ(base.session_accuracy[0], 0.5);
  EXPECT_DOUBLE_EQ(base.session_accuracy[1], 0.75);
  const auto& sal = a.condition("saliency");
  EXPECT_EQ(sal.participants, 2);
  EXPECT_DOUBLE_EQ(sal.session_accuracy[0], 0.75);
  EXPECT_DOUBLE_EQ(sal.session_accuracy[1], 0.875);
  ASSERT_EQ(sal.curve.points.size(), 2u);
  EXPECT_EQ(sal.curve.points[1].k, 10);
  EXPECT_DOUBLE_EQ(sal.curve.utility, (1.5 + 0.875 / 0.75) / 2.0);
  EXPECT_EQ(a.table_csv(), "condition,session_1,session_2,utility\nbaseline,50.00,75.00,1.000\nsaliency,75.00,87.50,1.333\n");
  ASSERT_TRUE(a.anova.has_value());
  EXPECT_EQ(a.anova->df_within, 2);
}

TEST(Analysis, MissingConditionsAndBaseline) {
  StudyDesign d;
  std::vector<TrialRecord> r;
  add_session(r, "b1", "baseline", 1, 3, 7);
  const auto a = analyze_records(r, d);
  EXPECT_EQ(a.conditions.size(), 1u);
  EXPECT_EQ(a.warnings.size() >= 7u, true);
  EXPECT_FALSE(a.anova.has_value());

  std::vector<TrialRecord> only_control;
  add_session(only_control, "c1", "control", 1, 3, 7);
  EXPECT_THROW(analyze_records(only_control, d), DataError);
  only_control.push_back(record("c1", "lime", 1, TrialKind::Test, 1, 1));
  EXPECT_THROW(analyze_records(only_control, d), NotFoundError);
  std::vector<TrialRecord> moved;
  add_session(moved, "b1", "baseline", 1, 3, 7);
  add_session(moved, "b1", "control", 2, 3, 7);
  EXPECT_THROW(analyze_records(moved, d), DataError);
}
