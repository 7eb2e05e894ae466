#include "xai/service/service.hpp"

#include "xai/error.hpp"

#include <cctype>
#include <random>

namespace xai::service {

StudyContent StudyContent::defaults() {
  StudyContent c;
  c.consent_text =
      "You will look at images and learn to predict how an image classifier decides. "
      "The task takes about 15 minutes. Participation is anonymous and voluntary; "
      "you can stop at any time.";
  c.class_names = {"class A", "class B"};
  c.quiz = {
      {"quiz-1", "What are you asked to predict?", {"The true class of the image", "The class the model will choose"}, 1},
      {"quiz-2", "Will explanations be shown while you are tested?", {"Yes", "No"}, 1},
      {"quiz-3", "What does the reservoir at the top of the test screen show?",
       {"The training examples of the current session with the model's decisions", "Random images", "Your own answers"},
       0},
  };
  return c;
}

nlohmann::json StudyContent::to_json() const {
  nlohmann::json quiz_json = nlohmann::json::array();
  for (const auto& q : quiz)
    quiz_json.push_back({{"id", q.id}, {"prompt", q.prompt}, {"options", q.options}, {"answer", q.answer}});
  return {{"consent_text", consent_text},
          {"class_names", class_names},
          {"practice_trials", practice_trials},
          {"practice_seed", practice_seed},
          {"quiz", quiz_json}};
}

StudyContent StudyContent::from_json(const nlohmann::json& j) {
  StudyContent c = defaults();
  c.consent_text = j.value("consent_text", c.consent_text);
  c.class_names = j.value("class_names", c.class_names);
  c.practice_trials = j.value("practice_trials", c.practice_trials);
  c.practice_seed = j.value("practice_seed", c.practice_seed);
  if (j.contains("quiz")) {
    c.quiz.clear();
    for (const auto& q : j.at("quiz"))
      c.quiz.push_back({q.at("id"), q.at("prompt"), q.at("options").get<std::vector<std::string>>(), q.at("answer")});
  }
  if (c.class_names.size() != 2) throw DataError("class_names must name exactly two classes");
  if (c.practice_trials < 0) throw DataError("practice_trials must be non-negative");
  for (const auto& q : c.quiz) {
    if (q.options.size() < 2 || q.answer < 0 || q.answer >= static_cast<int>(q.options.size()))
      throw DataError("quiz question '" + q.id + "' needs two or more options and a valid answer");
    if (q.id.rfind("quiz-", 0) != 0) throw DataError("quiz ids must start with 'quiz-'");
  }
  return c;
}

nlohmann::json StudyRequest::to_json() const {
  return {{"v", kApiVersion},
          {"id", id},
          {"design", design.to_json()},
          {"stimuli", {{"n", stimuli.n}, {"beta", stimuli.beta}, {"seed", stimuli.seed}}},
          {"content", content.to_json()}};
}

StudyRequest StudyRequest::from_json(const nlohmann::json& j) {
  try {
    if (j.contains("v") && j.at("v") != kApiVersion) throw VersionError("unsupported request version " + j.at("v").dump());
    StudyRequest r;
    r.id = j.value("id", std::string());
    if (j.contains("design")) r.design = StudyDesign::from_json(j.at("design"));
    if (j.contains("stimuli")) {
      const auto& s = j.at("stimuli");
      r.stimuli.n = s.value("n", r.stimuli.n);
      r.stimuli.beta = s.value("beta", r.stimuli.beta);
      r.stimuli.seed = s.value("seed", r.stimuli.seed);
    }
    if (j.contains("content")) r.content = StudyContent::from_json(j.at("content"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed study request: ") + e.what());
  }
}

bool valid_study_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

std::string_view phase_name(Phase phase) {
  switch (phase) {
    case Phase::Consent: return "consent";
    case Phase::Practice: return "practice";
    case Phase::Quiz: return "quiz";
    case Phase::Sessions: return "sessions";
    case Phase::Done: return "done";
  }
  return "unknown";
}

std::string make_token() {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
  std::random_device rd;
  unsigned char bytes[16];
  for (int i = 0; i < 16; i += 4) {
    const std::uint32_t v = rd();
    for (int k = 0; k < 4; ++k) bytes[i + k] = static_cast<unsigned char>(v >> (8 * k));
  }
  std::string out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (unsigned char b : bytes) {
    acc = (acc << 8) | b;
    bits += 8;
    while (bits >= 6) {
      bits -= 6;
      out += kAlphabet[(acc >> bits) & 63];
    }
  }
  if (bits > 0) out += kAlphabet[(acc << (6 - bits)) & 63];
  return out;
}

}  // namespace xai::service
