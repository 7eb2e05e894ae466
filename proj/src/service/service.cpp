#include "xai/service/service.hpp"

#include "xai/error.hpp"
#include "xai/io/blob.hpp"
#include "xai/io/image_codec.hpp"

#include <zlib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace xai::service {
namespace {

namespace fs = std::filesystem;

std::uint32_t crc(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::int64_t system_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

struct Step {
  enum class Kind { Consent, Practice, Quiz, Trial };
  Kind kind = Kind::Consent;
  std::string id;
  std::size_t index = 0;
};

std::string practice_id(std::size_t i) { return "practice-" + std::to_string(i + 1); }

struct ParticipantState {
  std::string token;
  std::string participant;
  std::string condition;
  int condition_index = 0;
  int slot = 0;
  std::size_t cursor = 0;
  bool pending = false;
  std::int64_t served_ms = 0;
  bool withdrawn = false;
  bool practice_failed = false;
  bool quiz_failed = false;
  bool catch_failed = false;
  std::map<std::string, nlohmann::json> acks;
  std::vector<TrialRecord> records;

  bool excluded() const { return practice_failed || quiz_failed || catch_failed; }

  nlohmann::json to_json() const {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : records) recs.push_back(r.to_json());
    return {{"token", token},
            {"participant", participant},
            {"condition", condition},
            {"condition_index", condition_index},
            {"slot", slot},
            {"cursor", cursor},
            {"pending", pending},
            {"served_ms", served_ms},
            {"withdrawn", withdrawn},
            {"practice_failed", practice_failed},
            {"quiz_failed", quiz_failed},
            {"catch_failed", catch_failed},
            {"acks", acks},
            {"records", recs}};
  }

  static ParticipantState from_json(const nlohmann::json& j) {
    ParticipantState p;
    p.token = j.at("token");
    p.participant = j.at("participant");
    p.condition = j.at("condition");
    p.condition_index = j.at("condition_index");
    p.slot = j.at("slot");
    p.cursor = j.at("cursor");
    p.pending = j.at("pending");
    p.served_ms = j.at("served_ms");
    p.withdrawn = j.at("withdrawn");
    p.practice_failed = j.at("practice_failed");
    p.quiz_failed = j.at("quiz_failed");
    p.catch_failed = j.at("catch_failed");
    p.acks = j.at("acks").get<std::map<std::string, nlohmann::json>>();
    for (const auto& r : j.at("records")) p.records.push_back(TrialRecord::from_json(r));
    return p;
  }
};

}  // namespace

struct StudyService::Runtime {
  StudyRequest request;
  Study study;
  PlantedBiasDataset stimuli;
  PlantedBiasDataset practice;
  std::vector<Index> practice_predictions;
  std::uint32_t model_crc = 0;
  std::uint32_t schedule_crc = 0;
  std::vector<Step> prefix;  // consent, practice, quiz; shared by all participants

  std::vector<std::string> order;  // tokens in assignment order
  std::map<std::string, ParticipantState> participants;
  std::vector<int> counts;
  std::uint64_t seq = 0;
  std::int64_t exports = 0;

  fs::path dir;
  std::ofstream log;
  std::size_t snapshot_every = 0;
  mutable std::mutex mutex;
  mutable std::map<std::string, std::string> asset_cache;

  const std::string& id() const { return request.id; }
  std::size_t total_steps() const { return prefix.size() + study.schedules.front().trials.size(); }

  Step step(const ParticipantState& p, std::size_t i) const {
    if (i < prefix.size()) return prefix[i];
    const auto& trials = study.schedules[static_cast<std::size_t>(p.slot)].trials;
    const std::size_t t = i - prefix.size();
    return {Step::Kind::Trial, trials.at(t).id, t};
  }

  bool done(const ParticipantState& p) const { return p.withdrawn || p.cursor >= total_steps(); }

  Phase phase(const ParticipantState& p) const {
    if (done(p)) return Phase::Done;
    switch (step(p, p.cursor).kind) {
      case Step::Kind::Consent: return Phase::Consent;
      case Step::Kind::Practice: return Phase::Practice;
      case Step::Kind::Quiz: return Phase::Quiz;
      case Step::Kind::Trial: return Phase::Sessions;
    }
    return Phase::Done;
  }

  ParticipantState& participant(const std::string& token) {
    auto it = participants.find(token);
    if (it == participants.end()) throw NotFoundError("unknown participant token");
    return it->second;
  }
  const ParticipantState& participant(const std::string& token) const {
    return const_cast<Runtime*>(this)->participant(token);
  }

  std::string image_url(Index i) const { return "/assets/" + id() + "/images/" + std::to_string(i) + ".png"; }
  const std::string& class_name(Index c) const { return request.content.class_names.at(static_cast<std::size_t>(c)); }

  nlohmann::json image_ref(Index i) const { return {{"id", i}, {"url", image_url(i)}}; }

  nlohmann::json payload(const ParticipantState& p) const {
    const Step s = step(p, p.cursor);
    nlohmann::json out = {{"v", kApiVersion},
                          {"study", id()},
                          {"trial_id", s.id},
                          {"phase", phase_name(phase(p))},
                          {"progress", {{"index", p.cursor}, {"total", total_steps()}}},
                          {"choices", request.content.class_names}};
    switch (s.kind) {
      case Step::Kind::Consent:
        out["kind"] = "consent";
        out["text"] = request.content.consent_text;
        out["choices"] = {"decline", "agree"};
        break;
      case Step::Kind::Practice: {
        out["kind"] = "practice";
        out["image"] = {{"id", s.index},
                        {"url", "/assets/" + id() + "/practice/" + std::to_string(s.index) + ".png"}};
        const Index f = practice_predictions[s.index];
        out["prediction"] = f;
        out["prediction_name"] = class_name(f);
        break;
      }
      case Step::Kind::Quiz: {
        const auto& q = request.content.quiz[s.index];
        out["kind"] = "quiz";
        out["prompt"] = q.prompt;
        out["choices"] = q.options;
        break;
      }
      case Step::Kind::Trial: {
        const auto& schedule = study.schedules[static_cast<std::size_t>(p.slot)];
        const Trial& t = schedule.trials[s.index];
        const Condition& c = study.design.conditions[static_cast<std::size_t>(p.condition_index)];
        out["session"] = t.session;
        out["position"] = t.position;
        out["image"] = image_ref(t.image);
        if (t.kind == TrialKind::Train) {
          out["kind"] = "train";
          out["prediction"] = t.prediction;
          out["prediction_name"] = class_name(t.prediction);
          if (c.shows_explanation()) {
            const std::string method(method_name(*c.method));
            out["overlay"] = {{"method", method},
                              {"url", "/assets/" + id() + "/overlays/" + method + "/" + std::to_string(t.image) +
                                          ".png"}};
          }
        } else {
          // Catch trials are indistinguishable from test trials for the participant.
          out["kind"] = "test";
          nlohmann::json reservoir = nlohmann::json::array();
          for (const Trial* r : schedule.session_trials(t.session, TrialKind::Train))
            reservoir.push_back(
                {{"image", image_ref(r->image)}, {"prediction", r->prediction}, {"prediction_name", class_name(r->prediction)}});
          out["reservoir"] = reservoir;
        }
        break;
      }
    }
    return out;
  }

  void validate_choice(const Step& s, Index choice) const {
    const Index options = s.kind == Step::Kind::Quiz
                              ? static_cast<Index>(request.content.quiz[s.index].options.size())
                              : 2;
    if (choice < 0 || choice >= options) {
      throw DataError("choice " + std::to_string(choice) + " is out of range for trial " + s.id);
    }
  }

  TrialRecord base_record(const ParticipantState& p) const {
    TrialRecord r;
    r.study = id();
    r.participant = p.participant;
    r.condition = p.condition;
    r.served_ms = p.served_ms;
    return r;
  }

  // The only place responses change state; live submits and replay both go through here.
  void apply_response(ParticipantState& p, const std::string& trial_id, Index choice, double rt_ms, std::int64_t t) {
    if (done(p) || !p.pending) throw FormatError("event log answers trial " + trial_id + " that was not served");
    const Step s = step(p, p.cursor);
    if (s.id != trial_id) throw FormatError("event log answers " + trial_id + " while " + s.id + " is pending");
    nlohmann::json ack = {{"v", kApiVersion}, {"trial_id", trial_id}, {"accepted", true}, {"received_ms", t}};
    TrialRecord r = base_record(p);
    r.trial_id = trial_id;
    r.choice = choice;
    r.rt_ms = rt_ms;
    r.answered_ms = t;
    bool keep = true;
    switch (s.kind) {
      case Step::Kind::Consent:
        keep = false;
        if (choice == 0) p.withdrawn = true;
        break;
      case Step::Kind::Practice: {
        const Index expected = practice_predictions[s.index];
        r.kind = TrialKind::Practice;
        r.position = static_cast<int>(s.index);
        r.image = static_cast<Index>(s.index);
        r.label = practice.label(static_cast<Index>(s.index));
        r.prediction = expected;
        ack["correct"] = choice == expected;
        ack["expected"] = expected;
        if (choice != expected) p.practice_failed = true;
        break;
      }
      case Step::Kind::Quiz: {
        const auto& q = request.content.quiz[s.index];
        r.kind = TrialKind::Quiz;
        r.position = static_cast<int>(s.index);
        r.prediction = q.answer;
        ack["correct"] = choice == q.answer;
        ack["expected"] = q.answer;
        if (choice != q.answer) p.quiz_failed = true;
        break;
      }
      case Step::Kind::Trial: {
        const Trial& trial = study.schedules[static_cast<std::size_t>(p.slot)].trials[s.index];
        r.kind = trial.kind;
        r.session = trial.session;
        r.position = trial.position;
        r.image = trial.image;
        r.label = trial.label;
        r.prediction = trial.prediction;
        if (trial.kind == TrialKind::Catch && choice != trial.prediction) p.catch_failed = true;
        break;
      }
    }
    if (keep) p.records.push_back(std::move(r));
    p.acks[trial_id] = ack;
    p.pending = false;
    ++p.cursor;
  }

  void apply(const nlohmann::json& e) {
    const std::uint64_t seq = e.at("seq");
    if (seq != this->seq + 1) throw FormatError("event log sequence gap at " + std::to_string(seq));
    const std::string type = e.at("type");
    const std::int64_t t = e.at("t");
    if (type == "participant_assigned") {
      ParticipantState p;
      p.token = e.at("token");
      p.participant = e.at("participant");
      p.condition = e.at("condition");
      p.condition_index = study.design.condition_index(p.condition);
      p.slot = e.at("slot");
      if (p.slot != counts[static_cast<std::size_t>(p.condition_index)] ||
          p.slot >= static_cast<int>(study.schedules.size()) || participants.count(p.token)) {
        throw FormatError("inconsistent assignment in event log");
      }
      ++counts[static_cast<std::size_t>(p.condition_index)];
      order.push_back(p.token);
      participants.emplace(p.token, std::move(p));
    } else if (type == "trial_served") {
      auto& p = participant(e.at("token"));
      if (done(p) || p.pending || step(p, p.cursor).id != e.at("trial_id")) {
        throw FormatError("inconsistent serve in event log");
      }
      p.pending = true;
      p.served_ms = t;
    } else if (type == "response_received") {
      apply_response(participant(e.at("token")), e.at("trial_id"), e.at("choice"), e.at("rt_ms"), t);
    } else if (type == "export_requested") {
      ++exports;
    } else {
      throw FormatError("unknown event type '" + type + "'");
    }
    this->seq = seq;
  }

  nlohmann::json participants_json() const {
    nlohmann::json ps = nlohmann::json::array();
    for (const auto& token : order) ps.push_back(participants.at(token).to_json());
    return ps;
  }

  nlohmann::json state() const {
    return {{"v", kApiVersion},
            {"study", id()},
            {"seq", seq},
            {"exports", exports},
            {"counts", counts},
            {"participants", participants_json()}};
  }

  void restore(const nlohmann::json& snap) {
    seq = snap.at("seq");
    exports = snap.at("exports");
    counts = snap.at("counts").get<std::vector<int>>();
    order.clear();
    participants.clear();
    for (const auto& pj : snap.at("participants")) {
      ParticipantState p = ParticipantState::from_json(pj);
      order.push_back(p.token);
      participants.emplace(p.token, std::move(p));
    }
  }

  void write_snapshot() const {
    if (dir.empty()) return;
    const fs::path tmp = dir / "snapshot.json.tmp";
    io::write_file(tmp, state().dump());
    fs::rename(tmp, dir / "snapshot.json");
  }

  void emit(nlohmann::json e, std::int64_t t) {
    e["v"] = kApiVersion;
    e["seq"] = seq + 1;
    e["t"] = t;
    // Callers validate first, so apply() cannot reject a live event; logging
    // first means nothing is acknowledged before it is durable.
    if (log.is_open()) {
      log << e.dump() << '\n';
      log.flush();
      if (!log) throw Error("failed to append to the event log of study " + id());
    }
    apply(e);
    if (snapshot_every && seq % snapshot_every == 0) write_snapshot();
  }

  std::vector<TrialRecord> records() const {
    std::vector<TrialRecord> out;
    for (const auto& token : order) {
      const auto& p = participants.at(token);
      for (TrialRecord r : p.records) {
        r.practice_failed = p.practice_failed;
        r.quiz_failed = p.quiz_failed;
        r.catch_failed = p.catch_failed;
        out.push_back(std::move(r));
      }
    }
    return out;
  }
};

namespace {

std::uint32_t model_crc(const Model& model) {
  return io::decode_blob(encode_model(model)).header.at("payload_crc32").get<std::uint32_t>();
}

std::unique_ptr<StudyService::Runtime> build_runtime(const StudyRequest& request, const Model& model) {
  validate(request.design);
  auto rt = std::make_unique<StudyService::Runtime>();
  rt->request = request;
  rt->stimuli = generate_dataset(request.stimuli);
  rt->study = build_study(request.design, rt->stimuli, model);
  const int practice_n = request.content.practice_trials;
  if (practice_n > 0) {
    const std::uint64_t seed = request.content.practice_seed ? request.content.practice_seed : request.stimuli.seed + 1;
    rt->practice = generate_dataset({2 * ((practice_n + 1) / 2), 1.0, seed});
    for (int i = 0; i < practice_n; ++i)
      rt->practice_predictions.push_back(predict(model, rt->practice.images[static_cast<std::size_t>(i)]).predicted_class);
  }
  rt->model_crc = model_crc(model);
  rt->schedule_crc = crc(rt->study.schedule_json().dump());
  rt->prefix.push_back({Step::Kind::Consent, "consent", 0});
  for (int i = 0; i < practice_n; ++i)
    rt->prefix.push_back({Step::Kind::Practice, practice_id(static_cast<std::size_t>(i)), static_cast<std::size_t>(i)});
  for (std::size_t i = 0; i < request.content.quiz.size(); ++i)
    rt->prefix.push_back({Step::Kind::Quiz, request.content.quiz[i].id, i});
  std::set<std::string> ids;
  for (const auto& s : rt->prefix)
    if (!ids.insert(s.id).second) throw DataError("duplicate step id '" + s.id + "' in study content");
  rt->counts.assign(request.design.conditions.size(), 0);
  return rt;
}

}  // namespace

StudyService::StudyService(Model model, ServiceConfig config) : model_(std::move(model)), config_(std::move(config)) {
  if (!config_.clock) config_.clock = system_ms;
  if (config_.data_dir.empty()) return;
  fs::create_directories(config_.data_dir);
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(config_.data_dir))
    if (entry.is_directory() && fs::exists(entry.path() / "events.jsonl")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) load(d);
}

StudyService::~StudyService() = default;

void StudyService::load(const fs::path& dir) {
  std::string text = io::read_file(dir / "events.jsonl");
  // A crash can leave a partial last line; drop it so appends start cleanly.
  const std::size_t end = text.rfind('\n');
  const std::size_t keep = end == std::string::npos ? 0 : end + 1;
  if (keep != text.size()) {
    text.resize(keep);
    fs::resize_file(dir / "events.jsonl", keep);
  }
  std::vector<nlohmann::json> events;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      events.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("corrupt event log in " + dir.string() + ": " + e.what());
    }
  }
  if (events.empty() || events.front().value("type", "") != "study_created") {
    throw FormatError("event log in " + dir.string() + " does not start with study_created");
  }
  const auto& created = events.front();
  if (created.at("v") != kApiVersion) throw VersionError("unsupported event log version in " + dir.string());
  const StudyRequest request = StudyRequest::from_json(created.at("request"));
  if (created.at("model_crc32").get<std::uint32_t>() != model_crc(model_)) {
    throw FormatError("study " + request.id + " was created with a different model");
  }
  auto rt = build_runtime(request, model_);
  if (created.at("schedule_crc32").get<std::uint32_t>() != rt->schedule_crc) {
    throw FormatError("study " + rt->id() + " regenerated a different schedule");
  }
  rt->seq = 1;
  rt->dir = dir;
  rt->snapshot_every = config_.snapshot_every;

  const fs::path snap_path = dir / "snapshot.json";
  if (fs::exists(snap_path)) {
    const auto snap = nlohmann::json::parse(io::read_file(snap_path));
    if (snap.at("seq").get<std::uint64_t>() <= events.size()) rt->restore(snap);
  }
  for (std::size_t i = rt->seq; i < events.size(); ++i) rt->apply(events[i]);
  rt->log.open(dir / "events.jsonl", std::ios::app | std::ios::binary);

  std::unique_lock lock(mutex_);
  for (const auto& token : rt->order) token_study_[token] = rt->id();
  const std::string id = rt->id();
  studies_.emplace(id, std::move(rt));
}

nlohmann::json StudyService::create_study(const StudyRequest& req) {
  StudyRequest request = req;
  if (request.id.empty()) request.id = "study-" + make_token().substr(0, 10);
  if (!valid_study_id(request.id)) throw DataError("invalid study id '" + request.id + "'");
  {
    std::shared_lock lock(mutex_);
    if (studies_.count(request.id)) throw ConflictError("study '" + request.id + "' already exists");
  }
  auto rt = build_runtime(request, model_);
  rt->snapshot_every = config_.snapshot_every;

  std::unique_lock lock(mutex_);
  if (studies_.count(request.id)) throw ConflictError("study '" + request.id + "' already exists");
  nlohmann::json created = {{"v", kApiVersion},
                            {"seq", 1},
                            {"t", config_.clock()},
                            {"type", "study_created"},
                            {"request", request.to_json()},
                            {"model_crc32", rt->model_crc},
                            {"schedule_crc32", rt->schedule_crc}};
  if (!config_.data_dir.empty()) {
    rt->dir = config_.data_dir / request.id;
    if (fs::exists(rt->dir / "events.jsonl")) throw ConflictError("study '" + request.id + "' already exists on disk");
    fs::create_directories(rt->dir);
    rt->log.open(rt->dir / "events.jsonl", std::ios::app | std::ios::binary);
    rt->log << created.dump() << "\n";
    rt->log.flush();
    if (!rt->log) throw Error("failed to write the event log of study " + request.id);
  }
  rt->seq = 1;
  Runtime& ref = *rt;
  studies_.emplace(request.id, std::move(rt));
  lock.unlock();
  return study_status(ref.id());
}

std::vector<std::string> StudyService::study_ids() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, rt] : studies_) out.push_back(id);
  return out;
}

StudyService::Runtime& StudyService::runtime(const std::string& study) const {
  std::shared_lock lock(mutex_);
  auto it = studies_.find(study);
  if (it == studies_.end()) throw NotFoundError("unknown study '" + study + "'");
  return *it->second;
}

StudyService::Runtime& StudyService::runtime_for_token(const std::string& token) const {
  std::string study;
  {
    std::shared_lock lock(mutex_);
    auto it = token_study_.find(token);
    if (it == token_study_.end()) throw NotFoundError("unknown participant token");
    study = it->second;
  }
  return runtime(study);
}

const Study& StudyService::study(const std::string& id) const { return runtime(id).study; }

nlohmann::json StudyService::study_status(const std::string& study) const {
  const Runtime& rt = runtime(study);
  std::lock_guard lock(rt.mutex);
  nlohmann::json conds = nlohmann::json::array();
  int total = 0;
  const int capacity = rt.study.design.participants_per_condition;
  for (std::size_t c = 0; c < rt.counts.size(); ++c) {
    conds.push_back({{"id", rt.study.design.conditions[c].id}, {"assigned", rt.counts[c]}, {"capacity", capacity}});
    total += rt.counts[c];
  }
  return {{"v", kApiVersion},
          {"study", rt.id()},
          {"conditions", conds},
          {"participants", total},
          {"full", total == capacity * static_cast<int>(rt.counts.size())},
          {"trials_per_participant", rt.total_steps()},
          {"events", rt.seq},
          {"design", rt.study.design.to_json()}};
}

Assignment StudyService::assign_participant(const std::string& study) {
  Runtime& rt = runtime(study);
  Assignment a;
  {
    std::lock_guard lock(rt.mutex);
    std::size_t best = 0;
    for (std::size_t c = 1; c < rt.counts.size(); ++c)
      if (rt.counts[c] < rt.counts[best]) best = c;
    if (rt.counts[best] >= rt.study.design.participants_per_condition) {
      throw ConflictError("study '" + study + "' is full");
    }
    char buf[16];
    std::snprintf(buf, sizeof buf, "p%04zu", rt.order.size() + 1);
    a.token = make_token();
    a.participant = buf;
    a.condition = rt.study.design.conditions[best].id;
    rt.emit({{"type", "participant_assigned"},
             {"token", a.token},
             {"participant", a.participant},
             {"condition", a.condition},
             {"slot", rt.counts[best]}},
            config_.clock());
  }
  std::unique_lock lock(mutex_);
  token_study_[a.token] = study;
  return a;
}

nlohmann::json StudyService::participant_status(const std::string& token) const {
  const Runtime& rt = runtime_for_token(token);
  std::lock_guard lock(rt.mutex);
  const auto& p = rt.participant(token);
  nlohmann::json out = {{"v", kApiVersion},
                        {"study", rt.id()},
                        {"participant", p.participant},
                        {"phase", phase_name(rt.phase(p))},
                        {"progress", {{"answered", p.cursor}, {"total", rt.total_steps()}}},
                        {"withdrawn", p.withdrawn}};
  if (rt.done(p) && !p.withdrawn) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08X", crc(token));
    out["completion_code"] = buf;
  }
  return out;
}

nlohmann::json StudyService::next_trial(const std::string& token) {
  Runtime& rt = runtime_for_token(token);
  std::lock_guard lock(rt.mutex);
  auto& p = rt.participant(token);
  if (rt.done(p)) throw ConflictError("participant has completed the study");
  if (!p.pending) rt.emit({{"type", "trial_served"}, {"token", token}, {"trial_id", rt.step(p, p.cursor).id}}, config_.clock());
  return rt.payload(p);
}

SubmitResult StudyService::submit_response(const std::string& token, const std::string& trial_id, Index choice,
                                           double rt_ms) {
  Runtime& rt = runtime_for_token(token);
  std::lock_guard lock(rt.mutex);
  auto& p = rt.participant(token);
  if (auto it = p.acks.find(trial_id); it != p.acks.end()) return {it->second, true};
  bool known = false;
  for (std::size_t i = 0; i < rt.total_steps() && !known; ++i) known = rt.step(p, i).id == trial_id;
  if (!known) throw NotFoundError("unknown trial '" + trial_id + "'");
  if (rt.done(p) || !p.pending || rt.step(p, p.cursor).id != trial_id) {
    throw ConflictError("trial '" + trial_id + "' is not the trial currently served");
  }
  rt.validate_choice(rt.step(p, p.cursor), choice);
  if (!std::isfinite(rt_ms) || rt_ms < 0.0) throw DataError("rt_ms must be a finite non-negative number");
  rt.emit({{"type", "response_received"}, {"token", token}, {"trial_id", trial_id}, {"choice", choice}, {"rt_ms", rt_ms}},
          config_.clock());
  return {p.acks.at(trial_id), false};
}

std::vector<TrialRecord> StudyService::records(const std::string& study) const {
  const Runtime& rt = runtime(study);
  std::lock_guard lock(rt.mutex);
  return rt.records();
}

std::string StudyService::export_study(const std::string& study, const std::string& format) {
  if (format != "csv" && format != "jsonl") throw DataError("export format must be csv or jsonl");
  Runtime& rt = runtime(study);
  std::lock_guard lock(rt.mutex);
  rt.emit({{"type", "export_requested"}, {"format", format}}, config_.clock());
  const auto recs = rt.records();
  return format == "csv" ? records_to_csv(recs) : records_to_jsonl(recs);
}

StudyAnalysis StudyService::analyze(const std::string& study, Aggregator aggregator) const {
  const Runtime& rt = runtime(study);
  std::vector<TrialRecord> recs;
  {
    std::lock_guard lock(rt.mutex);
    recs = rt.records();
  }
  return analyze_records(recs, rt.study.design, aggregator);
}

std::optional<std::string> StudyService::asset(const std::string& path) const {
  // /assets/<study>/images/<i>.png | /assets/<study>/practice/<i>.png | /assets/<study>/overlays/<method>/<i>.png
  const std::string prefix = "/assets/";
  if (path.rfind(prefix, 0) != 0) return std::nullopt;
  std::vector<std::string> parts;
  std::stringstream ss(path.substr(prefix.size()));
  for (std::string part; std::getline(ss, part, '/');) parts.push_back(part);
  if (parts.size() < 3) return std::nullopt;
  const std::string& file = parts.back();
  if (file.size() < 5 || file.substr(file.size() - 4) != ".png") return std::nullopt;
  Index index = -1;
  try {
    std::size_t used = 0;
    index = std::stol(file.substr(0, file.size() - 4), &used);
    if (used != file.size() - 4) return std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;
  }

  const Runtime* rt = nullptr;
  try {
    rt = &runtime(parts[0]);
  } catch (const NotFoundError&) {
    return std::nullopt;
  }
  std::lock_guard lock(rt->mutex);
  if (auto it = rt->asset_cache.find(path); it != rt->asset_cache.end()) return it->second;
  std::string png;
  if (parts.size() == 3 && parts[1] == "images") {
    if (index < 0 || index >= rt->stimuli.size()) return std::nullopt;
    png = io::encode_png(io::to_image8(rt->stimuli.images[static_cast<std::size_t>(index)]));
  } else if (parts.size() == 3 && parts[1] == "practice") {
    if (index < 0 || index >= static_cast<Index>(rt->practice_predictions.size())) return std::nullopt;
    png = io::encode_png(io::to_image8(rt->practice.images[static_cast<std::size_t>(index)]));
  } else if (parts.size() == 4 && parts[1] == "overlays") {
    Method method;
    try {
      method = parse_method(parts[2]);
    } catch (const Error&) {
      return std::nullopt;
    }
    auto it = rt->study.explanations.find(explanation_key(method, index));
    if (it == rt->study.explanations.end()) return std::nullopt;
    png = map_to_overlay_png(it->second);
  } else {
    return std::nullopt;
  }
  rt->asset_cache.emplace(path, png);
  return png;
}

nlohmann::json StudyService::state_json(const std::string& study) const {
  const Runtime& rt = runtime(study);
  std::lock_guard lock(rt.mutex);
  return rt.state();
}

void StudyService::write_snapshot(const std::string& study) {
  const Runtime& rt = runtime(study);
  std::lock_guard lock(rt.mutex);
  rt.write_snapshot();
}

}  // namespace xai::service
