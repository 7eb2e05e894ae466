#pragma once

#include "xai/metastudy/study.hpp"
#include "xai/stats/stats.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace xai {

/// One answered trial. Human (service) and simulated data share this schema.
struct TrialRecord {
  std::string study;
  std::string participant;
  std::string condition;
  int session = 0;  // 0 for practice and quiz
  int position = 0;
  std::string trial_id;
  TrialKind kind = TrialKind::Test;
  Index image = -1;
  Index label = -1;
  Index prediction = -1;
  Index choice = -1;
  double rt_ms = 0.0;            // client-reported
  std::int64_t served_ms = 0;    // server clock
  std::int64_t answered_ms = 0;  // server clock
  bool practice_failed = false;
  bool quiz_failed = false;
  bool catch_failed = false;

  bool agree() const { return choice == prediction; }
  bool excluded() const { return practice_failed || quiz_failed || catch_failed; }

  nlohmann::json to_json() const;
  static TrialRecord from_json(const nlohmann::json& j);
};

inline constexpr int kRecordVersion = 1;

std::string records_to_jsonl(const std::vector<TrialRecord>& records);
std::vector<TrialRecord> records_from_jsonl(const std::string& text);
std::string records_to_csv(const std::vector<TrialRecord>& records);
std::vector<TrialRecord> records_from_csv(const std::string& text);

struct ConditionSummary {
  std::string condition;
  int participants = 0;
  std::vector<double> session_accuracy;
  std::vector<double> participant_accuracy;  // across all test trials
  UtilityCurve curve;
  double mean_total_time_ms = 0.0;
};

struct StudyAnalysis {
  Aggregator aggregator = Aggregator::Mean;
  std::vector<ConditionSummary> conditions;  // design order, empty ones omitted
  std::optional<stats::AnovaResult> anova;
  std::optional<stats::TukeyResult> tukey;   // pair indices refer to `conditions`
  int excluded_participants = 0;
  std::vector<std::string> warnings;

  const ConditionSummary& condition(std::string_view id) const;
  nlohmann::json to_json() const;
  /// condition,session_1..session_n,utility (accuracies in percent).
  std::string table_csv() const;
  /// participant,condition,session,accuracy
  std::string participant_csv() const;

  struct ParticipantSession {
    std::string participant;
    std::string condition;
    int session = 0;
    double accuracy = 0.0;
  };
  std::vector<ParticipantSession> participant_sessions;  // included participants
};

/// Agreement with the model on test trials only. Participants with a screening
/// flag or a failed catch row are dropped.
/// DataError when the baseline has no included participant.
StudyAnalysis analyze_records(const std::vector<TrialRecord>& records, const StudyDesign& design,
                              Aggregator aggregator = Aggregator::Mean);

}  // namespace xai
