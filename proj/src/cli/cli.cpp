#include "xai/cli/cli.hpp"

#include "xai/error.hpp"
#include "xai/io/blob.hpp"
#include "xai/metastudy/simulation.hpp"
#include "xai/metrics/metrics.hpp"
#include "xai/predictor/train.hpp"
#include "xai/service/http.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <zlib.h>

#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#ifndef XAI_VERSION
#define XAI_VERSION "0.0.0"
#endif

namespace xai::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kManifestVersion = 1;
constexpr const char* kAdminKeyEnv = "XAI_ADMIN_KEY";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint32_t crc(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Effective configuration: command defaults, then the --config file, then flags.

json dataset_defaults(Index n, double beta) {
  return {{"source", "planted-bias"}, {"n", n}, {"beta", beta}, {"seed", nullptr}};
}

json method_defaults() {
  const MethodConfig m;
  return {{"integrated_gradients_steps", m.integrated_gradients.steps},
          {"smoothgrad_samples", m.smoothgrad.samples},
          {"smoothgrad_sigma", m.smoothgrad.sigma},
          {"occlusion_patch", m.occlusion.patch},
          {"occlusion_stride", m.occlusion.stride},
          {"occlusion_baseline", m.occlusion.baseline},
          {"control_scales", m.control.scales}};
}

json faithfulness_defaults() {
  const FaithfulnessConfig f;
  return {{"steps", f.steps},
          {"fraction_per_step", f.fraction_per_step},
          {"baseline", f.baseline},
          {"insertion_blur_radius", f.insertion_blur_radius},
          {"mu_fidelity_subsets", f.mu_fidelity.n_subsets},
          {"mu_fidelity_fraction", f.mu_fidelity.subset_fraction}};
}

json train_defaults() {
  const TrainConfig t;
  return {{"epochs", t.epochs},
          {"lr", t.lr},
          {"momentum", t.momentum},
          {"batch_size", t.batch_size},
          {"clip_norm", t.clip_norm},
          {"seed", nullptr},
          {"model_seed", nullptr}};
}

json defaults_for(const std::string& command) {
  json c = {{"seed", 1}, {"out", "runs/" + command}};
  if (command == "gen-data") {
    c["dataset"] = dataset_defaults(256, 1.0);
  } else if (command == "train") {
    c["dataset"] = dataset_defaults(128, 1.0);
    c["train"] = train_defaults();
  } else if (command == "explain" || command == "faithfulness" || command == "complexity" ||
             command == "perceptual-sim") {
    c["model"] = "";
    c["dataset"] = dataset_defaults(command == "explain" ? 16 : 32, 1.0);
    c["methods"] = "all";
    c["method_config"] = method_defaults();
    c["limit"] = 0;
    if (command == "faithfulness") c["faithfulness"] = faithfulness_defaults();
    if (command == "perceptual-sim") {
      c["patch_side"] = 0;
      c["reduction"] = "chamfer";
    }
  } else if (command == "simulate-study") {
    c["model"] = "";
    c["stimuli"] = dataset_defaults(240, 0.0);
    c["design"] = StudyDesign().to_json();
    c["design"]["seed"] = nullptr;
    c["agent"] = std::string(agent_kind_name(AgentKind::MaskLearner));
    c["agent_grid"] = AgentConfig().grid;
    c["aggregator"] = "mean";
    c["study_id"] = "sim";
  } else if (command == "analyze" || command == "report") {
    c["records"] = "";
    c["design"] = "";
    c["aggregator"] = "mean";
    if (command == "report") {
      c["from"] = "";
      c["metrics"] = json::array();
    }
  } else if (command == "serve") {
    c["model"] = "";
    c["data_dir"] = "runs/serve/data";
    c["host"] = "127.0.0.1";
    c["port"] = 8080;
    c["threads"] = 8;
    c["snapshot_every"] = 2000;
  }
  return c;
}

// Commands that need a classifier and get no --model train this one, so runs
// stay self-contained and reproducible.
DatasetConfig default_model_data() { return {128, 1.0, 1}; }
TrainConfig default_model_training() {
  TrainConfig t;
  t.seed = 1;
  return t;
}

json read_json_file(const fs::path& path) {
  try {
    return json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + " is not valid JSON: " + e.what());
  }
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, method, dataset, model;
  std::optional<Index> n;
  std::optional<double> beta;
  std::optional<Index> limit;
  std::optional<int> epochs, ig_steps, sg_samples, participants, port, threads;
  std::optional<double> sg_sigma;
  std::optional<std::string> agent, aggregator, study_id, records, design, from, data_dir, host;
  std::vector<std::string> metrics;
};

// Like merge_patch, except null is a value: manifests record unset seeds as null.
void overlay(json& base, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    json& slot = base[it.key()];
    if (slot.is_object() && it->is_object())
      overlay(slot, *it);
    else
      slot = *it;
  }
}

json effective_config(const std::string& command, const Flags& f) {
  json c = defaults_for(command);
  if (!f.config.empty()) {
    json file = read_json_file(f.config);
    if (!file.is_object()) throw DataError("config " + f.config + " must be a JSON object");
    if (file.value("kind", "") == "xaibench_manifest") {
      if (file.value("command", "") != command) {
        throw UsageError("manifest " + f.config + " was written by '" + file.value("command", "") + "', not '" +
                         command + "'");
      }
      file = file.at("config");
    }
    for (auto it = file.begin(); it != file.end(); ++it)
      if (!c.contains(it.key())) throw DataError("unknown config key '" + it.key() + "' for " + command);
    overlay(c, file);
  }
  auto set = [&](const char* key, const auto& v) {
    if (v) c[key] = *v;
  };
  set("seed", f.seed);
  set("out", f.out);
  set("model", f.model);
  set("agent", f.agent);
  set("aggregator", f.aggregator);
  set("study_id", f.study_id);
  set("records", f.records);
  set("design", f.design);
  set("from", f.from);
  set("data_dir", f.data_dir);
  set("host", f.host);
  set("port", f.port);
  set("threads", f.threads);
  set("limit", f.limit);
  if (f.method) c["methods"] = *f.method;
  if (!f.metrics.empty()) c["metrics"] = f.metrics;
  const char* data_key = command == "simulate-study" ? "stimuli" : "dataset";
  if (c.contains(data_key) && c[data_key].is_object()) {
    if (f.dataset) c[data_key]["source"] = *f.dataset;
    if (f.n) c[data_key]["n"] = *f.n;
    if (f.beta) c[data_key]["beta"] = *f.beta;
  }
  if (f.epochs) c["train"]["epochs"] = *f.epochs;
  // Method settings live in the design for simulate-study.
  if (f.ig_steps || f.sg_samples || f.sg_sigma) {
    json& methods = command == "simulate-study" ? c["design"]["methods"] : c["method_config"];
    if (f.ig_steps) methods["integrated_gradients_steps"] = *f.ig_steps;
    if (f.sg_samples) methods["smoothgrad_samples"] = *f.sg_samples;
    if (f.sg_sigma) methods["smoothgrad_sigma"] = *f.sg_sigma;
  }
  if (f.participants) c["design"]["participants_per_condition"] = *f.participants;
  return c;
}

// ---------------------------------------------------------------------------
// Run context: output directory, manifest.

class Run {
 public:
  Run(std::string command, json config) : command_(std::move(command)), config_(std::move(config)) {
    out_ = config_.at("out").get<std::string>();
    if (out_.empty()) throw UsageError("--out must not be empty");
    seed_ = config_.at("seed").get<std::uint64_t>();
  }

  const json& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  const fs::path& out() const { return out_; }

  void write(const std::string& relative, const std::string& bytes) {
    const fs::path path = out_ / relative;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    io::write_file(path, bytes);
    outputs_[relative] = {{"bytes", bytes.size()}, {"crc32", crc(bytes)}};
  }
  void note_output(const std::string& relative) { outputs_[relative] = {{"directory", true}}; }
  void seed_used(const std::string& name, std::uint64_t value) { seeds_[name] = value; }
  void record(const std::string& key, json value) { extra_[key] = std::move(value); }

  void write_manifest() {
    json outputs = json::array();
    for (const auto& [path, info] : outputs_) {
      json o = info;
      o["path"] = path;
      outputs.push_back(o);
    }
    json m = {{"v", kManifestVersion},
              {"kind", "xaibench_manifest"},
              {"command", command_},
              {"config", config_},
              {"seeds", seeds_},
              {"versions",
               {{"xaibench", XAI_VERSION},
                {"api", service::kApiVersion},
                {"records", kRecordVersion},
                {"blob", io::kBlobVersion},
                {"compiler", __VERSION__}}},
              {"outputs", outputs}};
    for (const auto& [k, v] : extra_) m[k] = v;
    fs::create_directories(out_);
    io::write_file(out_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string command_;
  json config_;
  fs::path out_;
  std::uint64_t seed_ = 1;
  std::map<std::string, json> outputs_;
  std::map<std::string, std::uint64_t> seeds_;
  std::map<std::string, json> extra_;
};

std::uint64_t seed_or(const json& v, std::uint64_t fallback) { return v.is_null() ? fallback : v.get<std::uint64_t>(); }

PlantedBiasDataset resolve_dataset(Run& run, const json& spec, const std::string& name) {
  const std::string source = spec.at("source");
  if (source == "planted-bias") {
    const DatasetConfig cfg{spec.at("n").get<Index>(), spec.at("beta").get<double>(), seed_or(spec.at("seed"), run.seed())};
    validate(cfg);
    run.seed_used(name, cfg.seed);
    return generate_dataset(cfg);
  }
  PlantedBiasDataset ds = load_dataset(source);
  run.seed_used(name, ds.config.seed);
  return ds;
}

Model resolve_model(Run& run, std::ostream& out) {
  const std::string path = run.config().at("model");
  Model model;
  json info;
  if (path.empty()) {
    out << "no --model given; training the default planted-bias model\n";
    const TrainConfig t = default_model_training();
    auto result = train(make_planted_bias_cnn(1), generate_dataset(default_model_data()), t);
    model = std::move(result.model);
    info = {{"source", "default"},
            {"train_accuracy", result.train_accuracy},
            {"dataset", {{"n", default_model_data().n}, {"beta", default_model_data().beta}, {"seed", default_model_data().seed}}},
            {"epochs", t.epochs},
            {"seed", t.seed}};
  } else {
    model = load_model(path);
    info = {{"source", path}};
  }
  info["payload_crc32"] = io::decode_blob(encode_model(model)).header.at("payload_crc32");
  run.record("model", info);
  return model;
}

std::vector<Method> resolve_methods(const json& spec) {
  const std::string text = spec.get<std::string>();
  std::vector<Method> out;
  if (text == "all") {
    out = attribution_methods();
    out.push_back(Method::Control);
    return out;
  }
  std::stringstream ss(text);
  for (std::string name; std::getline(ss, name, ',');) {
    try {
      out.push_back(parse_method(name));
    } catch (const Error&) {
      throw UsageError("unknown method '" + name + "'");
    }
  }
  if (out.empty()) throw UsageError("--method needs at least one method");
  return out;
}

MethodConfig method_config(const json& j) {
  MethodConfig m;
  m.integrated_gradients.steps = j.at("integrated_gradients_steps");
  m.smoothgrad.samples = j.at("smoothgrad_samples");
  m.smoothgrad.sigma = j.at("smoothgrad_sigma");
  m.occlusion.patch = j.at("occlusion_patch");
  m.occlusion.stride = j.at("occlusion_stride");
  m.occlusion.baseline = j.at("occlusion_baseline");
  m.control.scales = j.at("control_scales");
  if (m.integrated_gradients.steps < 2 || m.smoothgrad.samples < 1 || m.smoothgrad.sigma < 0.0) {
    throw DataError("invalid method configuration");
  }
  return m;
}

Index image_count(const Run& run, const PlantedBiasDataset& ds) {
  const Index limit = run.config().at("limit");
  if (limit < 0) throw DataError("limit must be non-negative");
  return limit == 0 ? ds.size() : std::min(limit, ds.size());
}

std::uint64_t explain_seed(std::uint64_t seed, Index image) { return seed * 1000003ULL + static_cast<std::uint64_t>(image); }

std::string dataset_label(const json& spec) {
  const std::string source = spec.at("source");
  return source == "planted-bias" ? "planted-bias" : fs::path(source).filename().string();
}

// Summary written by the faithfulness, complexity and perceptual-sim commands and read by report.
void write_metric_summary(Run& run, const std::vector<std::string>& metrics, const MetricReport& report) {
  std::string csv = "method,dataset,metric,value\n";
  std::istringstream in(report.to_csv());
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1), c = line.find(',', b + 1);
    const std::string metric = line.substr(b + 1, c - b - 1);
    if (std::find(metrics.begin(), metrics.end(), metric) != metrics.end()) csv += line + "\n";
  }
  run.write("metrics.csv", csv);
  run.write("metrics.json",
            json{{"v", 1}, {"kind", "metric_summary"}, {"metrics", metrics}, {"report", report.to_json()}}.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Commands.

void cmd_gen_data(Run& run, std::ostream& out) {
  const auto ds = resolve_dataset(run, run.config().at("dataset"), "dataset");
  if (run.config().at("dataset").at("source") != "planted-bias") throw UsageError("gen-data only generates planted-bias data");
  export_dataset(ds, run.out() / "dataset");
  run.note_output("dataset");
  Index biased = 0;
  for (const auto& l : ds.latents) biased += l.bias_applied;
  out << "wrote " << ds.size() << " images (" << biased << " with the planted ground) to " << (run.out() / "dataset").string()
      << "\n";
}

void cmd_train(Run& run, std::ostream& out) {
  const auto ds = resolve_dataset(run, run.config().at("dataset"), "dataset");
  const json& t = run.config().at("train");
  TrainConfig cfg;
  cfg.epochs = t.at("epochs");
  cfg.lr = t.at("lr");
  cfg.momentum = t.at("momentum");
  cfg.batch_size = t.at("batch_size");
  cfg.clip_norm = t.at("clip_norm");
  cfg.seed = seed_or(t.at("seed"), run.seed());
  const std::uint64_t model_seed = seed_or(t.at("model_seed"), run.seed());
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.lr > 0.0)) throw DataError("invalid training configuration");
  run.seed_used("shuffle", cfg.seed);
  run.seed_used("init", model_seed);
  const auto result = train(make_planted_bias_cnn(model_seed), ds, cfg);
  run.write("model.bin", encode_model(result.model));
  std::string loss = "epoch,loss\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
    loss += std::to_string(e + 1) + "," + fixed(result.epoch_loss[e], 9) + "\n";
  run.write("loss.csv", loss);
  run.write("train.json", json{{"v", 1}, {"train_accuracy", result.train_accuracy}, {"epoch_loss", result.epoch_loss}}.dump(2) + "\n");
  out << "train accuracy " << fixed(result.train_accuracy, 4) << " after " << cfg.epochs << " epochs\n";
}

void cmd_explain(Run& run, std::ostream& out) {
  const Model model = resolve_model(run, out);
  const auto ds = resolve_dataset(run, run.config().at("dataset"), "dataset");
  const auto methods = resolve_methods(run.config().at("methods"));
  const MethodConfig mc = method_config(run.config().at("method_config"));
  const Index n = image_count(run, ds);
  std::string index = "method,image,target,min,max\n";
  for (Method m : methods) {
    const std::string name(method_name(m));
    for (Index i = 0; i < n; ++i) {
      const auto& x = ds.images[static_cast<std::size_t>(i)];
      const Index cls = predict(model, x).predicted_class;
      const AttributionMap map = explain(m, model, x, cls, mc, explain_seed(run.seed(), i));
      const std::string stem = "maps/" + name + "/" + std::to_string(i);
      run.write(stem + ".bin", encode_map(map));
      run.write(stem + ".png", map_to_png(map));
      run.write(stem + "_overlay.png", map_to_overlay_png(map));
      index += name + "," + std::to_string(i) + "," + std::to_string(cls) + "," + fixed(map.min, 9) + "," +
               fixed(map.max, 9) + "\n";
    }
    out << name << ": " << n << " maps\n";
  }
  run.write("maps.csv", index);
}

void cmd_faithfulness(Run& run, std::ostream& out) {
  const Model model = resolve_model(run, out);
  const auto ds = resolve_dataset(run, run.config().at("dataset"), "dataset");
  const auto methods = resolve_methods(run.config().at("methods"));
  const MethodConfig mc = method_config(run.config().at("method_config"));
  const json& fj = run.config().at("faithfulness");
  FaithfulnessConfig fc;
  fc.steps = fj.at("steps");
  fc.fraction_per_step = fj.at("fraction_per_step");
  fc.baseline = fj.at("baseline");
  fc.insertion_blur_radius = fj.at("insertion_blur_radius");
  fc.mu_fidelity.n_subsets = fj.at("mu_fidelity_subsets");
  fc.mu_fidelity.subset_fraction = fj.at("mu_fidelity_fraction");
  validate(fc);
  const Index n = image_count(run, ds);

  MetricReport report;
  std::vector<CurveRecord> curves;
  std::string rows = "method,image,deletion_auc,insertion_auc,mu_fidelity,mu_fidelity_degenerate\n";
  for (Method m : methods) {
    MethodMetrics mm;
    mm.method = method_name(m);
    mm.dataset = dataset_label(run.config().at("dataset"));
    double del = 0.0, ins = 0.0, mu = 0.0;
    for (Index i = 0; i < n; ++i) {
      const auto& x = ds.images[static_cast<std::size_t>(i)];
      const Index cls = predict(model, x).predicted_class;
      const AttributionMap map = explain(m, model, x, cls, mc, explain_seed(run.seed(), i));
      FaithfulnessConfig c = fc;
      c.mu_fidelity.seed = explain_seed(run.seed(), i);
      const Curve d = deletion(model, x, map.values, cls, c);
      const Curve s = insertion(model, x, map.values, cls, c);
      const MuFidelity f = mu_fidelity(model, x, map.values, cls, c);
      del += d.auc;
      ins += s.auc;
      mu += f.score;
      mm.mu_fidelity_degenerate += f.degenerate;
      curves.push_back({mm.method, "deletion", i, d});
      curves.push_back({mm.method, "insertion", i, s});
      rows += mm.method + "," + std::to_string(i) + "," + fixed(d.auc, 9) + "," + fixed(s.auc, 9) + "," +
              fixed(f.score, 9) + "," + (f.degenerate ? "1" : "0") + "\n";
    }
    mm.faithfulness = 1.0 - del / static_cast<double>(n);
    mm.insertion = ins / static_cast<double>(n);
    mm.mu_fidelity = mu / static_cast<double>(n);
    out << mm.method << ": faithfulness " << fixed(mm.faithfulness, 4) << ", insertion " << fixed(mm.insertion, 4)
        << ", mu-fidelity " << fixed(mm.mu_fidelity, 4) << "\n";
    report.rows.push_back(mm);
  }
  run.write("faithfulness.csv", rows);
  run.write("curves.csv", curves_to_csv(curves));
  write_metric_summary(run, {"faithfulness", "insertion", "mu_fidelity"}, report);
}

void cmd_complexity(Run& run, std::ostream& out) {
  const Model model = resolve_model(run, out);
  const auto ds = resolve_dataset(run, run.config().at("dataset"), "dataset");
  const auto methods = resolve_methods(run.config().at("methods"));
  const MethodConfig mc = method_config(run.config().at("method_config"));
  const Index n = image_count(run, ds);
  MetricReport report;
  std::string rows = "method,image,complexity\n";
  for (Method m : methods) {
    MethodMetrics mm;
    mm.method = method_name(m);
    mm.dataset = dataset_label(run.config().at("dataset"));
    double sum = 0.0;
    for (Index i = 0; i < n; ++i) {
      const auto& x = ds.images[static_cast<std::size_t>(i)];
      const Index cls = predict(model, x).predicted_class;
      const double c = complexity(explain(m, model, x, cls, mc, explain_seed(run.seed(), i)));
      sum += c;
      rows += mm.method + "," + std::to_string(i) + "," + fixed(c, 9) + "\n";
    }
    mm.complexity = sum / static_cast<double>(n);
    out << mm.method << ": complexity " << fixed(mm.complexity, 4) << "\n";
    report.rows.push_back(mm);
  }
  run.write("complexity.csv", rows);
  write_metric_summary(run, {"complexity"}, report);
}

void cmd_perceptual(Run& run, std::ostream& out) {
  const Model model = resolve_model(run, out);
  const auto ds = resolve_dataset(run, run.config().at("dataset"), "dataset");
  const auto methods = resolve_methods(run.config().at("methods"));
  const MethodConfig mc = method_config(run.config().at("method_config"));
  const Index n = image_count(run, ds);
  const Index side = run.config().at("patch_side");
  const std::string red = run.config().at("reduction");
  SetReduction reduction;
  if (red == "chamfer") reduction = SetReduction::Chamfer;
  else if (red == "mean-cross-pair") reduction = SetReduction::MeanCrossPair;
  else throw UsageError("reduction must be chamfer or mean-cross-pair");
  if (!model.has_feature_layer()) throw DataError("perceptual similarity needs a model with convolutional features");
  const ActivationBackend backend(model);

  std::vector<Index> predicted;
  for (Index i = 0; i < n; ++i) predicted.push_back(predict(model, ds.images[static_cast<std::size_t>(i)]).predicted_class);
  MetricReport report;
  std::string rows = "method,dataset,similarity,patches_class_0,patches_class_1\n";
  for (Method m : methods) {
    std::vector<Tensor> a, b;
    for (Index i = 0; i < n; ++i) {
      const auto& x = ds.images[static_cast<std::size_t>(i)];
      const Index cls = predicted[static_cast<std::size_t>(i)];
      const AttributionMap map = explain(m, model, x, cls, mc, explain_seed(run.seed(), i));
      (cls == 0 ? a : b).push_back(extract_patch(x, map.values, side).image);
    }
    MethodMetrics mm;
    mm.method = method_name(m);
    mm.dataset = dataset_label(run.config().at("dataset"));
    mm.perceptual_similarity = a.empty() || b.empty() ? 0.0 : perceptual_similarity(backend, a, b, reduction);
    rows += mm.method + "," + mm.dataset + "," + fixed(mm.perceptual_similarity, 9) + "," + std::to_string(a.size()) +
            "," + std::to_string(b.size()) + "\n";
    out << mm.method << ": perceptual similarity " << fixed(mm.perceptual_similarity, 4) << "\n";
    report.rows.push_back(mm);
  }
  run.write("perceptual.csv", rows);
  write_metric_summary(run, {"perceptual_similarity"}, report);
}

void print_analysis(const StudyAnalysis& a, std::ostream& out) {
  out << a.table_csv();
  if (a.excluded_participants) out << "excluded participants: " << a.excluded_participants << "\n";
  for (const auto& w : a.warnings) out << "warning: " << w << "\n";
  if (!a.anova) return;
  const auto& r = *a.anova;
  char line[160];
  out << "\nANOVA on per-participant accuracy\n";
  std::snprintf(line, sizeof line, "%-10s %6s %12s %12s %9s %11s\n", "source", "df", "SS", "MS", "F", "p");
  out << line;
  std::snprintf(line, sizeof line, "%-10s %6d %12.6f %12.6f %9.4f %11.4g\n", "between", r.df_between, r.ss_between,
                r.df_between ? r.ss_between / r.df_between : 0.0, r.F, r.p);
  out << line;
  std::snprintf(line, sizeof line, "%-10s %6d %12.6f %12.6f\n", "within", r.df_within, r.ss_within, r.ms_within());
  out << line;
  out << "eta^2 = " << fixed(r.eta_squared, 4) << "\n";
  if (!a.tukey) return;
  out << "\nTukey HSD adjusted p\n";
  std::size_t width = 10;
  for (const auto& c : a.conditions) width = std::max(width, c.condition.size() + 1);
  auto pad = [&](const std::string& s) { return s + std::string(width > s.size() ? width - s.size() : 1, ' '); };
  out << pad("");
  for (const auto& c : a.conditions) out << pad(c.condition);
  out << "\n";
  for (std::size_t i = 0; i < a.conditions.size(); ++i) {
    out << pad(a.conditions[i].condition);
    for (std::size_t j = 0; j < a.conditions.size(); ++j)
      out << pad(i == j ? "-" : fixed(a.tukey->pair(i, j).p, 4));
    out << "\n";
  }
}

void write_analysis(Run& run, const StudyAnalysis& analysis) {
  run.write("analysis.json", analysis.to_json().dump(2) + "\n");
  run.write("table.csv", analysis.table_csv());
  run.write("participants.csv", analysis.participant_csv());
}

void cmd_simulate(Run& run, std::ostream& out) {
  const Model model = resolve_model(run, out);
  json dj = run.config().at("design");
  dj["seed"] = seed_or(dj.at("seed"), run.seed());
  const StudyDesign design = StudyDesign::from_json(dj);
  validate(design);
  run.seed_used("design", design.seed);
  const auto stimuli = resolve_dataset(run, run.config().at("stimuli"), "stimuli");
  AgentConfig ac;
  ac.grid = run.config().at("agent_grid");
  AgentKind kind;
  try {
    kind = parse_agent_kind(run.config().at("agent").get<std::string>());
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const Aggregator agg = parse_aggregator(run.config().at("aggregator").get<std::string>());
  const std::string study_id = run.config().at("study_id");

  out << "building study: " << design.conditions.size() << " conditions x " << design.participants_per_condition
      << " participants on " << stimuli.size() << " stimuli\n";
  const Study study = build_study(design, stimuli, model);
  const AgentFactory factory = kind == AgentKind::MaskLearner ? mask_learner_factory(ac) : uniform_factory(kind, ac);
  const auto sim = run_simulated_study(study, stimuli, factory, study_id, agg);

  run.write("design.json", design.to_json().dump(2) + "\n");
  run.write("schedule.json", study.schedule_json().dump() + "\n");
  run.write("records.jsonl", records_to_jsonl(sim.records));
  run.write("records.csv", records_to_csv(sim.records));
  write_analysis(run, sim.analysis);
  print_analysis(sim.analysis, out);
}

std::vector<TrialRecord> read_records(const fs::path& path) {
  const std::string text = io::read_file(path);
  if (path.extension() == ".csv") return records_from_csv(text);
  if (path.extension() == ".jsonl") return records_from_jsonl(text);
  throw UsageError("records must be a .csv or .jsonl file");
}

StudyDesign read_design(const fs::path& path) {
  json j = read_json_file(path);
  if (j.value("kind", "") == "xaibench_manifest") {
    j = j.at("config").at("design");
    if (j.contains("seed") && j.at("seed").is_null()) j.erase("seed");
  }
  const StudyDesign d = StudyDesign::from_json(j);
  validate(d);
  return d;
}

// records and design paths, defaulting to the files simulate-study writes.
std::pair<fs::path, fs::path> study_inputs(const json& config) {
  fs::path records = config.at("records").get<std::string>();
  fs::path design = config.at("design").get<std::string>();
  const std::string from = config.value("from", "");
  if (!from.empty()) {
    if (records.empty()) records = fs::path(from) / "records.jsonl";
    if (design.empty()) design = fs::path(from) / "design.json";
  }
  if (records.empty()) throw UsageError("--records (or --from) is required");
  if (design.empty()) design = records.parent_path() / "design.json";
  return {records, design};
}

void cmd_analyze(Run& run, std::ostream& out) {
  const auto [records_path, design_path] = study_inputs(run.config());
  const auto records = read_records(records_path);
  const StudyDesign design = read_design(design_path);
  const auto analysis = analyze_records(records, design, parse_aggregator(run.config().at("aggregator").get<std::string>()));
  write_analysis(run, analysis);
  print_analysis(analysis, out);
}

void cmd_report(Run& run, std::ostream& out) {
  const auto [records_path, design_path] = study_inputs(run.config());
  const StudyDesign design = read_design(design_path);
  const auto analysis = analyze_records(read_records(records_path), design,
                                        parse_aggregator(run.config().at("aggregator").get<std::string>()));
  run.write("table.csv", analysis.table_csv());
  out << analysis.table_csv();

  // Utility against each metric, one scatter file per metric family.
  const std::map<std::string, std::string> files = {{"faithfulness", "scatter_faithfulness.csv"},
                                                    {"insertion", "scatter_insertion.csv"},
                                                    {"mu_fidelity", "scatter_mu_fidelity.csv"},
                                                    {"complexity", "scatter_complexity.csv"},
                                                    {"perceptual_similarity", "scatter_similarity.csv"}};
  std::map<std::string, std::string> scatter;
  for (const auto& path : run.config().at("metrics")) {
    const json summary = read_json_file(path.get<std::string>());
    if (summary.value("kind", "") != "metric_summary") throw DataError(path.get<std::string>() + " is not a metric summary");
    const MetricReport report = MetricReport::from_json(summary.at("report"));
    for (const auto& metric : summary.at("metrics")) {
      const std::string name = metric;
      auto& csv = scatter[name];
      if (csv.empty()) csv = "method,dataset,utility," + name + "\n";
      for (const auto& row : report.rows) {
        const ConditionSummary* c = nullptr;
        for (const auto& s : analysis.conditions)
          if (s.condition == row.method) c = &s;
        if (!c) continue;
        const double v = name == "faithfulness"  ? row.faithfulness
                         : name == "insertion"   ? row.insertion
                         : name == "mu_fidelity" ? row.mu_fidelity
                         : name == "complexity"  ? row.complexity
                                                 : row.perceptual_similarity;
        csv += row.method + "," + row.dataset + "," + fixed(c->curve.utility, 6) + "," + fixed(v, 6) + "\n";
      }
    }
  }
  for (const auto& [metric, csv] : scatter) {
    auto it = files.find(metric);
    if (it == files.end()) throw DataError("unknown metric '" + metric + "' in summary");
    run.write(it->second, csv);
  }
}

void cmd_serve(Run& run, std::ostream& out) {
  Model model = resolve_model(run, out);
  const json& c = run.config();
  service::ServiceConfig sc;
  sc.data_dir = c.at("data_dir").get<std::string>();
  sc.snapshot_every = c.at("snapshot_every");
  service::HttpConfig hc;
  if (const char* key = std::getenv(kAdminKeyEnv)) hc.admin_key = key;
  hc.threads = c.at("threads");
  if (hc.admin_key.empty()) out << "warning: " << kAdminKeyEnv << " is not set; admin endpoints are disabled\n";
  run.record("admin_key_env", kAdminKeyEnv);
  run.write_manifest();

  // Signals are taken by a dedicated thread so stop() never runs in a handler.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  service::StudyService svc(std::move(model), sc);
  service::HttpServer server(svc, hc);
  const std::string host = c.at("host");
  int port = c.at("port");
  if (port == 0) {
    port = server.bind_to_any_port(host);
    if (port < 0) throw Error("could not bind " + host);
  } else if (!server.bind(host, port)) {
    throw Error("could not bind " + host + ":" + std::to_string(port));
  }
  out << "loaded " << svc.study_ids().size() << " studies from " << sc.data_dir.string() << "\n";
  out << "listening on http://" << host << ":" << port << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  const bool ok = server.listen_after_bind();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  if (!ok) throw Error("server stopped unexpectedly");
  out << "stopped\n";
}

using Command = void (*)(Run&, std::ostream&);

const std::map<std::string, Command>& commands() {
  static const std::map<std::string, Command> table = {
      {"gen-data", cmd_gen_data},       {"train", cmd_train},
      {"explain", cmd_explain},         {"faithfulness", cmd_faithfulness},
      {"complexity", cmd_complexity},   {"perceptual-sim", cmd_perceptual},
      {"simulate-study", cmd_simulate}, {"analyze", cmd_analyze},
      {"serve", cmd_serve},             {"report", cmd_report},
  };
  return table;
}

const char* describe(const std::string& name) {
  static const std::map<std::string, const char*> text = {
      {"gen-data", "render a planted-bias dataset to PNG files"},
      {"train", "train the planted-bias CNN"},
      {"explain", "write attribution maps and overlays"},
      {"faithfulness", "deletion, insertion and mu-fidelity per method"},
      {"complexity", "JPEG-compression complexity per method"},
      {"perceptual-sim", "perceptual similarity of diagnostic patches across classes"},
      {"simulate-study", "run the utility protocol with simulated participants"},
      {"analyze", "accuracy table, utility, ANOVA and Tukey HSD from trial records"},
      {"serve", "run the study service over HTTP"},
      {"report", "utility table and utility-vs-metric scatter files"},
  };
  return text.at(name);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Evaluate attribution methods by how much they help predict a model", "xaibench");
  app.require_subcommand(1);
  Flags f;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, fn] : commands()) {
    CLI::App* s = app.add_subcommand(name, describe(name));
    subs[name] = s;
    s->add_option("--config", f.config, "JSON config, or a manifest from an earlier run");
    s->add_option("--seed", f.seed, "master seed");
    s->add_option("--out", f.out, "output directory");
    const bool needs_model = name != "gen-data" && name != "train" && name != "analyze" && name != "report";
    if (needs_model) s->add_option("--model", f.model, "model file from `train`; default trains one");
    if (name != "analyze" && name != "report" && name != "serve") {
      s->add_option("--dataset", f.dataset, "planted-bias or a directory written by gen-data");
      s->add_option("--n", f.n, "number of generated images");
      s->add_option("--beta", f.beta, "planted-bias strength");
    }
    if (name == "train") s->add_option("--epochs", f.epochs);
    if (name == "explain" || name == "faithfulness" || name == "complexity" || name == "perceptual-sim") {
      s->add_option("--method", f.method, "comma-separated methods or 'all'");
      s->add_option("--limit", f.limit, "use the first N images (0 = all)");
      s->add_option("--ig-steps", f.ig_steps);
      s->add_option("--smoothgrad-samples", f.sg_samples);
      s->add_option("--smoothgrad-sigma", f.sg_sigma);
    }
    if (name == "simulate-study") {
      s->add_option("--participants", f.participants, "participants per condition");
      s->add_option("--agent", f.agent, "mask-learner, uniform-baseline or prior-only");
      s->add_option("--study-id", f.study_id);
      s->add_option("--ig-steps", f.ig_steps);
      s->add_option("--smoothgrad-samples", f.sg_samples);
    }
    if (name == "simulate-study" || name == "analyze" || name == "report")
      s->add_option("--aggregator", f.aggregator, "mean or trapezoid");
    if (name == "analyze" || name == "report") {
      s->add_option("--records", f.records, "records.csv or records.jsonl");
      s->add_option("--design", f.design, "design.json or a simulate-study manifest");
    }
    if (name == "report") {
      s->add_option("--from", f.from, "simulate-study output directory");
      s->add_option("--metrics", f.metrics, "metrics.json files from faithfulness, complexity, perceptual-sim");
    }
    if (name == "serve") {
      s->add_option("--data-dir", f.data_dir, "event logs and snapshots");
      s->add_option("--host", f.host);
      s->add_option("--port", f.port, "0 picks a free port");
      s->add_option("--threads", f.threads);
      s->footer(std::string("The admin key is read from ") + kAdminKeyEnv + ".");
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  std::string command;
  for (const auto& [name, s] : subs)
    if (s->parsed()) command = name;

  try {
    Run run(command, effective_config(command, f));
    commands().at(command)(run, out);
    if (command != "serve") run.write_manifest();
    return kOk;
  } catch (const UsageError& e) {
    err << "xaibench " << command << ": " << e.what() << "\n";
    return kUsage;
  } catch (const TrainingDiverged& e) {
    err << "xaibench " << command << ": " << e.what() << "\n";
    return kDataError;
  } catch (const DataError& e) {
    err << "xaibench " << command << ": data error: " << e.what() << "\n";
    return kDataError;
  } catch (const FormatError& e) {
    err << "xaibench " << command << ": bad input: " << e.what() << "\n";
    return kDataError;
  } catch (const ShapeError& e) {
    err << "xaibench " << command << ": shape error: " << e.what() << "\n";
    return kDataError;
  } catch (const NotFoundError& e) {
    err << "xaibench " << command << ": not found: " << e.what() << "\n";
    return kDataError;
  } catch (const ConflictError& e) {
    err << "xaibench " << command << ": " << e.what() << "\n";
    return kDataError;
  } catch (const json::exception& e) {
    err << "xaibench " << command << ": bad config value: " << e.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "xaibench " << command << ": " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "xaibench " << command << ": internal error: " << e.what() << "\n";
    return kInternal;
  }
}

}  // namespace xai::cli
