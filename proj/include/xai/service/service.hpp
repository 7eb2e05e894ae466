#pragma once

#include "xai/metastudy/simulation.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace xai::service {

inline constexpr int kApiVersion = 1;

struct QuizQuestion {
  std::string id;
  std::string prompt;
  std::vector<std::string> options;
  int answer = 0;
};

/// Participant-facing text and screening content. Data, not code: every field
/// can be replaced in the create request.
struct StudyContent {
  std::string consent_text;
  std::vector<std::string> class_names;  // display names of classes 0 and 1
  int practice_trials = 5;
  std::uint64_t practice_seed = 0;  // 0 -> stimulus seed + 1
  std::vector<QuizQuestion> quiz;

  static StudyContent defaults();
  nlohmann::json to_json() const;
  static StudyContent from_json(const nlohmann::json& j);
};

struct StudyRequest {
  std::string id;  // empty -> generated
  StudyDesign design;
  DatasetConfig stimuli{240, 0.0, 1};
  StudyContent content = StudyContent::defaults();

  nlohmann::json to_json() const;
  static StudyRequest from_json(const nlohmann::json& j);
};

/// Study ids are 1-64 characters of [A-Za-z0-9_-].
bool valid_study_id(const std::string& id);

enum class Phase { Consent, Practice, Quiz, Sessions, Done };
std::string_view phase_name(Phase phase);

struct Assignment {
  std::string token;
  std::string participant;  // anonymous id used in exports, e.g. "p0007"
  std::string condition;
};

struct SubmitResult {
  nlohmann::json ack;
  bool duplicate = false;  // the original ack, state unchanged
};

struct ServiceConfig {
  std::filesystem::path data_dir;          // empty keeps everything in memory
  std::size_t snapshot_every = 2000;       // events between snapshots; 0 disables
  std::function<std::int64_t()> clock;     // server time in ms; system clock when unset
};

/// 128 random bits, base64url without padding (22 characters).
std::string make_token();

class StudyService {
 public:
  /// Loads every study found under config.data_dir by replaying its event log.
  explicit StudyService(Model model, ServiceConfig config = {});
  ~StudyService();
  StudyService(const StudyService&) = delete;
  StudyService& operator=(const StudyService&) = delete;

  /// DataError on an invalid request, ConflictError on a duplicate id.
  nlohmann::json create_study(const StudyRequest& request);
  std::vector<std::string> study_ids() const;
  nlohmann::json study_status(const std::string& study) const;
  const Study& study(const std::string& id) const;

  /// Least-filled condition, ties by condition order. ConflictError when full.
  Assignment assign_participant(const std::string& study);
  nlohmann::json participant_status(const std::string& token) const;
  /// Serves the next step, or re-serves the pending one after a reload.
  /// ConflictError when the participant is done.
  nlohmann::json next_trial(const std::string& token);
  /// NotFoundError for an unknown trial id, ConflictError when the trial is not
  /// the one being served, DataError for an invalid choice or rt_ms.
  SubmitResult submit_response(const std::string& token, const std::string& trial_id, Index choice, double rt_ms);

  /// Every answered trial, screening flags from the participant's current state.
  std::vector<TrialRecord> records(const std::string& study) const;
  /// format: "csv" or "jsonl". Logged as an export event.
  std::string export_study(const std::string& study, const std::string& format);
  StudyAnalysis analyze(const std::string& study, Aggregator aggregator = Aggregator::Mean) const;

  /// PNG bytes for "/assets/..." paths handed out in payloads.
  std::optional<std::string> asset(const std::string& path) const;

  /// Everything derived from the event log, for replay comparisons.
  nlohmann::json state_json(const std::string& study) const;
  void write_snapshot(const std::string& study);

  struct Runtime;

 private:
  Runtime& runtime(const std::string& study) const;
  Runtime& runtime_for_token(const std::string& token) const;
  void load(const std::filesystem::path& dir);

  Model model_;
  ServiceConfig config_;
  mutable std::shared_mutex mutex_;  // guards the maps below
  std::map<std::string, std::unique_ptr<Runtime>> studies_;
  std::map<std::string, std::string> token_study_;
};

}  // namespace xai::service
