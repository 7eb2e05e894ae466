#include "xai/metastudy/records.hpp"

#include "xai/error.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace xai {
namespace {

const char* const kColumns[] = {"study",       "participant", "condition",       "session",     "position",
                                "trial_id",    "kind",        "image",           "label",       "prediction",
                                "choice",      "agree",       "rt_ms",           "served_ms",   "answered_ms",
                                "practice_failed", "quiz_failed", "catch_failed", "excluded"};
constexpr std::size_t kColumnCount = sizeof kColumns / sizeof kColumns[0];

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw FormatError("unterminated quote on CSV line " + std::to_string(line_no));
  out.push_back(std::move(cur));
  return out;
}

template <class T>
T parse_number(const std::string& s, const char* column, std::size_t line_no) {
  T value{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("bad " + std::string(column) + " '" + s + "' on CSV line " + std::to_string(line_no));
  }
  return value;
}

bool parse_flag(const std::string& s, const char* column, std::size_t line_no) {
  if (s == "1") return true;
  if (s == "0") return false;
  throw FormatError("bad " + std::string(column) + " flag '" + s + "' on CSV line " + std::to_string(line_no));
}

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

struct ParticipantTally {
  std::string condition;
  bool excluded = false;
  double total_rt = 0.0;
  std::map<int, std::pair<int, int>> sessions;  // session -> (agreements, test trials)
};

}  // namespace

nlohmann::json TrialRecord::to_json() const {
  return {{"v", kRecordVersion},
          {"study", study},
          {"participant", participant},
          {"condition", condition},
          {"session", session},
          {"position", position},
          {"trial_id", trial_id},
          {"kind", trial_kind_name(kind)},
          {"image", image},
          {"label", label},
          {"prediction", prediction},
          {"choice", choice},
          {"agree", agree()},
          {"rt_ms", rt_ms},
          {"served_ms", served_ms},
          {"answered_ms", answered_ms},
          {"practice_failed", practice_failed},
          {"quiz_failed", quiz_failed},
          {"catch_failed", catch_failed},
          {"excluded", excluded()}};
}

TrialRecord TrialRecord::from_json(const nlohmann::json& j) {
  try {
    if (j.at("v") != kRecordVersion) throw VersionError("unsupported trial record version " + j.at("v").dump());
    TrialRecord r;
    r.study = j.at("study");
    r.participant = j.at("participant");
    r.condition = j.at("condition");
    r.session = j.at("session");
    r.position = j.at("position");
    r.trial_id = j.at("trial_id");
    r.kind = parse_trial_kind(j.at("kind").get<std::string>());
    r.image = j.at("image");
    r.label = j.at("label");
    r.prediction = j.at("prediction");
    r.choice = j.at("choice");
    r.rt_ms = j.at("rt_ms");
    r.served_ms = j.at("served_ms");
    r.answered_ms = j.at("answered_ms");
    r.practice_failed = j.at("practice_failed");
    r.quiz_failed = j.at("quiz_failed");
    r.catch_failed = j.at("catch_failed");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed trial record: ") + e.what());
  }
}

std::string records_to_jsonl(const std::vector<TrialRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.to_json().dump();
    out += '\n';
  }
  return out;
}

std::vector<TrialRecord> records_from_jsonl(const std::string& text) {
  std::vector<TrialRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("invalid JSON on line " + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(TrialRecord::from_json(j));
  }
  return out;
}

std::string records_to_csv(const std::vector<TrialRecord>& records) {
  std::string out;
  for (std::size_t c = 0; c < kColumnCount; ++c) {
    if (c) out += ',';
    out += kColumns[c];
  }
  out += '\n';
  for (const auto& r : records) {
    const std::string fields[] = {csv_field(r.study),
                                  csv_field(r.participant),
                                  csv_field(r.condition),
                                  std::to_string(r.session),
                                  std::to_string(r.position),
                                  csv_field(r.trial_id),
                                  std::string(trial_kind_name(r.kind)),
                                  std::to_string(r.image),
                                  std::to_string(r.label),
                                  std::to_string(r.prediction),
                                  std::to_string(r.choice),
                                  r.agree() ? "1" : "0",
                                  shortest(r.rt_ms),
                                  std::to_string(r.served_ms),
                                  std::to_string(r.answered_ms),
                                  r.practice_failed ? "1" : "0",
                                  r.quiz_failed ? "1" : "0",
                                  r.catch_failed ? "1" : "0",
                                  r.excluded() ? "1" : "0"};
    for (std::size_t c = 0; c < kColumnCount; ++c) {
      if (c) out += ',';
      out += fields[c];
    }
    out += '\n';
  }
  return out;
}

std::vector<TrialRecord> records_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV export");
  const auto header = csv_split(line, 1);
  if (header.size() != kColumnCount) throw FormatError("unexpected CSV header");
  for (std::size_t c = 0; c < kColumnCount; ++c)
    if (header[c] != kColumns[c]) throw FormatError("unexpected CSV column '" + header[c] + "'");

  std::vector<TrialRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = csv_split(line, line_no);
    if (f.size() != kColumnCount) throw FormatError("wrong field count on CSV line " + std::to_string(line_no));
    TrialRecord r;
    r.study = f[0];
    r.participant = f[1];
    r.condition = f[2];
    r.session = parse_number<int>(f[3], "session", line_no);
    r.position = parse_number<int>(f[4], "position", line_no);
    r.trial_id = f[5];
    r.kind = parse_trial_kind(f[6]);
    r.image = parse_number<Index>(f[7], "image", line_no);
    r.label = parse_number<Index>(f[8], "label", line_no);
    r.prediction = parse_number<Index>(f[9], "prediction", line_no);
    r.choice = parse_number<Index>(f[10], "choice", line_no);
    r.rt_ms = parse_number<double>(f[12], "rt_ms", line_no);
    r.served_ms = parse_number<std::int64_t>(f[13], "served_ms", line_no);
    r.answered_ms = parse_number<std::int64_t>(f[14], "answered_ms", line_no);
    r.practice_failed = parse_flag(f[15], "practice_failed", line_no);
    r.quiz_failed = parse_flag(f[16], "quiz_failed", line_no);
    r.catch_failed = parse_flag(f[17], "catch_failed", line_no);
    if (parse_flag(f[11], "agree", line_no) != r.agree() || parse_flag(f[18], "excluded", line_no) != r.excluded()) {
      throw FormatError("inconsistent derived column on CSV line " + std::to_string(line_no));
    }
    out.push_back(std::move(r));
  }
  return out;
}

const ConditionSummary& StudyAnalysis::condition(std::string_view id) const {
  for (const auto& c : conditions)
    if (c.condition == id) return c;
  throw NotFoundError("condition '" + std::string(id) + "' not in the analysis");
}

nlohmann::json StudyAnalysis::to_json() const {
  nlohmann::json conds = nlohmann::json::array();
  for (const auto& c : conditions) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : c.curve.points) points.push_back({{"k", p.k}, {"utility_k", p.value}});
    conds.push_back({{"condition", c.condition},
                     {"participants", c.participants},
                     {"session_accuracy", c.session_accuracy},
                     {"utility_curve", points},
                     {"utility", c.curve.utility},
                     {"mean_total_time_ms", c.mean_total_time_ms}});
  }
  nlohmann::json out = {{"v", 1},
                        {"kind", "study_analysis"},
                        {"aggregator", aggregator_name(aggregator)},
                        {"conditions", conds},
                        {"excluded_participants", excluded_participants},
                        {"warnings", warnings}};
  if (anova) out["anova"] = anova->to_json();
  if (tukey) {
    nlohmann::json pairs = tukey->to_json();
    for (auto& p : pairs) {
      p["a"] = conditions[p.at("i").get<std::size_t>()].condition;
      p["b"] = conditions[p.at("j").get<std::size_t>()].condition;
    }
    out["tukey"] = pairs;
  }
  return out;
}

std::string StudyAnalysis::table_csv() const {
  std::string out = "condition";
  const std::size_t sessions = conditions.empty() ? 0 : conditions.front().session_accuracy.size();
  for (std::size_t s = 1; s <= sessions; ++s) out += ",session_" + std::to_string(s);
  out += ",utility\n";
  for (const auto& c : conditions) {
    out += c.condition;
    for (double a : c.session_accuracy) out += "," + format("%.2f", 100.0 * a);
    out += "," + format("%.3f", c.curve.utility) + "\n";
  }
  return out;
}

std::string StudyAnalysis::participant_csv() const {
  std::string out = "participant,condition,session,accuracy\n";
  for (const auto& p : participant_sessions) {
    out += csv_field(p.participant) + "," + csv_field(p.condition) + "," + std::to_string(p.session) + "," +
           shortest(p.accuracy) + "\n";
  }
  return out;
}

StudyAnalysis analyze_records(const std::vector<TrialRecord>& records, const StudyDesign& design,
                              Aggregator aggregator) {
  std::vector<std::string> order;
  std::map<std::string, ParticipantTally> tally;
  for (const auto& r : records) {
    design.condition_index(r.condition);
    auto [it, fresh] = tally.try_emplace(r.participant);
    auto& t = it->second;
    if (fresh) {
      order.push_back(r.participant);
      t.condition = r.condition;
    } else if (t.condition != r.condition) {
      throw DataError("participant '" + r.participant + "' appears under two conditions");
    }
    t.excluded |= r.excluded() || (r.kind == TrialKind::Catch && !r.agree());
    t.total_rt += r.rt_ms;
    if (r.kind == TrialKind::Test) {
      auto& s = t.sessions[r.session];
      s.first += r.agree();
      s.second += 1;
    }
  }

  StudyAnalysis out;
  out.aggregator = aggregator;
  std::vector<std::vector<const std::string*>> members(design.conditions.size());
  for (const auto& p : order) {
    const auto& t = tally.at(p);
    if (t.excluded) {
      ++out.excluded_participants;
      continue;
    }
    members[static_cast<std::size_t>(design.condition_index(t.condition))].push_back(&p);
  }

  for (std::size_t c = 0; c < design.conditions.size(); ++c) {
    const auto& cond = design.conditions[c];
    if (members[c].empty()) {
      if (cond.kind == ConditionKind::Baseline) {
        throw DataError("baseline condition has no included participants; utility is undefined");
      }
      out.warnings.push_back("condition '" + cond.id + "' has no included participants and was omitted");
      continue;
    }
    ConditionSummary summary;
    summary.condition = cond.id;
    summary.participants = static_cast<int>(members[c].size());
    for (int s = 1; s <= design.sessions; ++s) {
      double sum = 0.0;
      int count = 0;
      for (const std::string* p : members[c]) {
        const auto& sessions = tally.at(*p).sessions;
        auto it = sessions.find(s);
        if (it == sessions.end() || it->second.second == 0) continue;
        const double acc = static_cast<double>(it->second.first) / it->second.second;
        sum += acc;
        ++count;
        out.participant_sessions.push_back({*p, cond.id, s, acc});
      }
      summary.session_accuracy.push_back(count ? sum / count : std::nan(""));
    }
    double total_time = 0.0;
    for (const std::string* p : members[c]) {
      const auto& t = tally.at(*p);
      int agree = 0, trials = 0;
      for (const auto& [s, at] : t.sessions) {
        agree += at.first;
        trials += at.second;
      }
      summary.participant_accuracy.push_back(trials ? static_cast<double>(agree) / trials : 0.0);
      total_time += t.total_rt;
    }
    summary.mean_total_time_ms = total_time / static_cast<double>(members[c].size());
    out.conditions.push_back(std::move(summary));
  }

  const ConditionSummary* base = nullptr;
  for (std::size_t c = 0; c < design.conditions.size() && !base; ++c)
    if (design.conditions[c].kind == ConditionKind::Baseline) base = &out.condition(design.conditions[c].id);
  for (auto& summary : out.conditions) {
    summary.curve.condition = summary.condition;
    for (int s = 1; s <= design.sessions; ++s) {
      const double a = summary.session_accuracy[static_cast<std::size_t>(s - 1)];
      const double b = base->session_accuracy[static_cast<std::size_t>(s - 1)];
      if (std::isnan(a) || std::isnan(b)) continue;
      if (b == 0.0) {
        out.warnings.push_back("baseline accuracy is zero in session " + std::to_string(s) + "; point skipped");
        continue;
      }
      summary.curve.points.push_back({s * design.train_per_session, utility_k(a, b)});
    }
    if (summary.curve.points.empty()) {
      out.warnings.push_back("condition '" + summary.condition + "' has no utility points");
      summary.curve.utility = std::nan("");
    } else {
      summary.curve.utility = aggregate_utility(summary.curve.points, aggregator);
    }
  }

  stats::Groups groups;
  bool anova_ok = out.conditions.size() >= 2;
  for (const auto& summary : out.conditions) {
    groups.push_back(summary.participant_accuracy);
    anova_ok &= summary.participant_accuracy.size() >= 2;
  }
  if (anova_ok) {
    out.anova = stats::one_way_anova(groups);
    out.tukey = stats::tukey_hsd(groups);
  } else {
    out.warnings.push_back("ANOVA skipped: needs at least 2 conditions with 2 included participants each");
  }
  return out;
}

}  // namespace xai
