#include "xai/metrics/metrics.hpp"

#include "xai/error.hpp"

#include <cstdio>
#include <sstream>

namespace xai {
namespace {

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

nlohmann::json MetricReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"method", r.method},
                         {"dataset", r.dataset},
                         {"faithfulness", r.faithfulness},
                         {"insertion", r.insertion},
                         {"mu_fidelity", r.mu_fidelity},
                         {"mu_fidelity_degenerate", r.mu_fidelity_degenerate},
                         {"complexity", r.complexity},
                         {"perceptual_similarity", r.perceptual_similarity},
                         {"utility_curve", r.utility_curve}});
  }
  return {{"v", 1}, {"kind", "metric_report"}, {"rows", rows_json}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  try {
    if (j.at("kind") != "metric_report") throw FormatError("not a metric report");
    if (j.at("v") != 1) throw VersionError("unsupported metric report version " + j.at("v").dump());
    MetricReport out;
    for (const auto& r : j.at("rows")) {
      MethodMetrics m;
      m.method = r.at("method");
      m.dataset = r.at("dataset");
      m.faithfulness = r.at("faithfulness");
      m.insertion = r.at("insertion");
      m.mu_fidelity = r.at("mu_fidelity");
      m.mu_fidelity_degenerate = r.value("mu_fidelity_degenerate", 0);
      m.complexity = r.at("complexity");
      m.perceptual_similarity = r.at("perceptual_similarity");
      m.utility_curve = r.value("utility_curve", "");
      out.rows.push_back(std::move(m));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed metric report: ") + e.what());
  }
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << "method,dataset,metric,value\n";
  for (const auto& r : rows) {
    const std::pair<const char*, double> values[] = {{"faithfulness", r.faithfulness},
                                                     {"insertion", r.insertion},
                                                     {"mu_fidelity", r.mu_fidelity},
                                                     {"complexity", r.complexity},
                                                     {"perceptual_similarity", r.perceptual_similarity}};
    for (const auto& [name, v] : values) out << r.method << ',' << r.dataset << ',' << name << ',' << number(v) << '\n';
  }
  return out.str();
}

std::string curves_to_csv(const std::vector<CurveRecord>& curves) {
  std::ostringstream out;
  out << "method,kind,image,step,fraction,value\n";
  for (const auto& c : curves)
    for (std::size_t s = 0; s < c.curve.values.size(); ++s) {
      out << c.method << ',' << c.kind << ',' << c.image << ',' << s << ',' << number(c.curve.fractions[s]) << ','
          << number(c.curve.values[s]) << '\n';
    }
  return out.str();
}

Evaluation evaluate_methods(const Model& model, const std::vector<Tensor>& images, const std::vector<Method>& methods,
                            const std::string& dataset, const EvaluationConfig& config) {
  if (images.empty()) throw DataError("no images to evaluate");
  validate(config.faithfulness);
  std::unique_ptr<ActivationBackend> backend;
  if (model.graph.find("pool1") && model.graph.find("pool2")) backend = std::make_unique<ActivationBackend>(model);

  std::vector<Index> predicted;
  for (const auto& x : images) predicted.push_back(predict(model, x).predicted_class);

  Evaluation ev;
  const auto n = static_cast<double>(images.size());
  for (Method method : methods) {
    MethodMetrics row;
    row.method = std::string(method_name(method));
    row.dataset = dataset;
    std::vector<Tensor> patches[2];
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto& x = images[i];
      const Index cls = predicted[i];
      const AttributionMap map = explain(method, model, x, cls, config.methods, config.seed + i);
      FaithfulnessConfig fc = config.faithfulness;
      fc.mu_fidelity.seed += i;
      Curve del = deletion(model, x, map.values, cls, fc);
      Curve ins = insertion(model, x, map.values, cls, fc);
      const MuFidelity mu = mu_fidelity(model, x, map.values, cls, fc);
      row.faithfulness += (1.0 - del.auc) / n;
      row.insertion += ins.auc / n;
      row.mu_fidelity += mu.score / n;
      row.mu_fidelity_degenerate += mu.degenerate;
      row.complexity += complexity(map) / n;
      if (backend && cls < 2) patches[cls].push_back(extract_patch(x, map.values, config.patch_side).image);
      ev.curves.push_back({row.method, "deletion", static_cast<Index>(i), std::move(del)});
      ev.curves.push_back({row.method, "insertion", static_cast<Index>(i), std::move(ins)});
    }
    if (!patches[0].empty() && !patches[1].empty()) {
      row.perceptual_similarity = perceptual_similarity(*backend, patches[0], patches[1]);
    }
    ev.report.rows.push_back(std::move(row));
  }
  return ev;
}

}  // namespace xai
