#include "poseface/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace poseface {

std::string to_string(PoseSupervision mode) {
  switch (mode) {
    case PoseSupervision::kLandmarkModule: return "landmark_module";
    case PoseSupervision::kLandmarkPoints: return "landmark_points";
    case PoseSupervision::kNone: return "none";
  }
  throw ConfigError("unhandled pose supervision mode");
}

PoseSupervision pose_supervision_from_string(const std::string& text) {
  if (text == "landmark_module") return PoseSupervision::kLandmarkModule;
  if (text == "landmark_points") return PoseSupervision::kLandmarkPoints;
  if (text == "none") return PoseSupervision::kNone;
  throw ConfigError("pose supervision must be landmark_module, landmark_points, or none, got '" +
                    text + "'");
}

std::uint32_t RunConfig::n_classes() const {
  return split_plan(data).shared_identities(data);
}

ModelSpec RunConfig::effective_model() const {
  ModelSpec spec = model;
  spec.d_in = static_cast<int>(data.d_in);
  spec.n_classes = static_cast<int>(n_classes());
  if (pose_supervision == PoseSupervision::kLandmarkPoints) {
    spec.d_p = 2 * kNumLandmarks;
  }
  if (!use_paa) spec.extra_margin = 0.0;
  return spec;
}

SgdConfig RunConfig::effective_sgd() const {
  SgdConfig out = sgd;
  if (!sgd_schedule_set) {
    out.schedule.clear();
    int first = epochs / 2;
    int second = epochs * 5 / 6;
    // Very short runs get fewer (or no) drop points rather than a
    // degenerate schedule.
    if (first > 0) out.schedule.emplace_back(first, sgd.learning_rate / 10.0);
    if (second > first) out.schedule.emplace_back(second, sgd.learning_rate / 100.0);
  }
  return out;
}

SgdConfig RunConfig::effective_ae_sgd() const { return ae_sgd; }

AeSpec RunConfig::ae_spec() const {
  AeSpec spec;
  spec.channels = kNumLandmarks;
  spec.height = ae_raster;
  spec.width = ae_raster;
  spec.hidden = ae_hidden;
  spec.code_dim = model.d_p;
  spec.heat_radius = ae_heat_radius;
  return spec;
}

LossWeights RunConfig::effective_weights() const {
  LossWeights w = loss;
  if (!use_orth) w.lambda2 = 0.0;
  if (pose_supervision == PoseSupervision::kNone) w.lambda1 = 0.0;
  return w;
}

void RunConfig::validate() const {
  try {
    data.validate();
    effective_model().validate();
    loss.validate();
    effective_sgd().validate();
    effective_ae_sgd().validate();
    ae_spec().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (lambda_h < 0.0) throw ConfigError("loss.lambda_h must be nonnegative");
  if (epochs <= 0) throw ConfigError("train.epochs must be positive");
  if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (ae_epochs <= 0) throw ConfigError("ae.epochs must be positive");
  if (ae_batch_size <= 0) throw ConfigError("ae.batch_size must be positive");
  if (ae_holdout_fraction < 0.0 || ae_holdout_fraction >= 1.0) {
    throw ConfigError("ae.holdout_fraction must lie in [0, 1)");
  }
  if (probe_samples < 2) throw ConfigError("eval.probe_samples must be at least 2");
  if (verification_folds < 2) throw ConfigError("eval.folds must be at least 2");
  if (pairs_per_fold < 1) throw ConfigError("eval.pairs_per_fold must be positive");
  if (far_targets.empty()) throw ConfigError("eval.far_targets must not be empty");
  for (double f : far_targets) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("eval.far_targets entries must lie in (0, 1]");
  }
  if (pose_supervision == PoseSupervision::kLandmarkPoints &&
      model.d_p != 2 * kNumLandmarks) {
    throw ConfigError("landmark_points supervision requires model.d_p = " +
                      std::to_string(2 * kNumLandmarks));
  }
  if (out_dir.empty()) throw ConfigError("output directory must not be empty");
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double x = std::stod(value, &used);
    if (used != value.size() || !std::isfinite(x)) throw std::invalid_argument(value);
    return x;
  } catch (const std::logic_error&) {
    throw ConfigError(key + ": expected a finite number, got '" + value + "'");
  }
}

long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    long long x = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return x;
  } catch (const std::logic_error&) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    unsigned long long x = std::stoull(value, &used);
    if (used != value.size() || (!value.empty() && value[0] == '-')) {
      throw std::invalid_argument(value);
    }
    return x;
  } catch (const std::logic_error&) {
    throw ConfigError(key + ": expected a nonnegative integer, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> parts;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const auto& part : split_list(value)) {
    out.push_back(static_cast<int>(parse_int(key, part)));
  }
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& part : split_list(value)) out.push_back(parse_double(key, part));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

// Schedule text: "auto" or "epoch:lr,epoch:lr,...".
std::vector<std::pair<int, double>> parse_schedule(const std::string& key,
                                                   const std::string& value) {
  std::vector<std::pair<int, double>> out;
  for (const auto& part : split_list(value)) {
    std::size_t colon = part.find(':');
    if (colon == std::string::npos) {
      throw ConfigError(key + ": expected epoch:learning_rate entries, got '" + part + "'");
    }
    int epoch = static_cast<int>(parse_int(key, trim(part.substr(0, colon))));
    double lr = parse_double(key, trim(part.substr(colon + 1)));
    out.emplace_back(epoch, lr);
  }
  return out;
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

template <typename T>
std::string join_list(const std::vector<T>& items,
                      const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += f(items[i]);
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& key_table() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.seed = parse_u64(k, v);
       }},
      {"out", [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
      {"data.n_identities", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.n_identities = static_cast<std::uint32_t>(parse_u64(k, v));
       }},
      {"data.samples_per_identity", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.samples_per_identity = static_cast<std::uint32_t>(parse_u64(k, v));
       }},
      {"data.p_profile", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.p_profile = parse_double(k, v);
       }},
      {"data.noise_sigma", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.noise_sigma = parse_double(k, v);
       }},
      {"data.d_in", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.d_in = static_cast<std::uint32_t>(parse_u64(k, v));
       }},
      {"data.split", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.split = parse_double(k, v);
       }},
      {"model.backbone_hidden", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.backbone_hidden = parse_int_list(k, v);
       }},
      {"model.d_b", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.d_b = static_cast<int>(parse_int(k, v));
       }},
      {"model.d", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.d = static_cast<int>(parse_int(k, v));
       }},
      {"model.d_o", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.d_o = static_cast<int>(parse_int(k, v));
       }},
      {"model.d_p", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.d_p = static_cast<int>(parse_int(k, v));
       }},
      {"model.scale", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.scale = parse_double(k, v);
       }},
      {"model.base_margin", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.base_margin = parse_double(k, v);
       }},
      {"model.extra_margin", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.extra_margin = parse_double(k, v);
       }},
      {"loss.lambda1", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.loss.lambda1 = parse_double(k, v);
       }},
      {"loss.lambda2", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.loss.lambda2 = parse_double(k, v);
       }},
      {"loss.lambda_h", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.lambda_h = parse_double(k, v);
       }},
      {"loss.squared_pose", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.squared_pose = parse_bool(k, v);
       }},
      {"sgd.learning_rate", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.sgd.learning_rate = parse_double(k, v);
       }},
      {"sgd.momentum", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.sgd.momentum = parse_double(k, v);
       }},
      {"sgd.weight_decay", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.sgd.weight_decay = parse_double(k, v);
       }},
      {"sgd.schedule", [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "auto") {
           c.sgd.schedule.clear();
           c.sgd_schedule_set = false;
         } else {
           c.sgd.schedule = parse_schedule(k, v);
           c.sgd_schedule_set = true;
         }
       }},
      {"train.epochs", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.epochs = static_cast<int>(parse_int(k, v));
       }},
      {"train.batch_size", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.batch_size = static_cast<int>(parse_int(k, v));
       }},
      {"ablation.use_paa", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.use_paa = parse_bool(k, v);
       }},
      {"ablation.use_orth", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.use_orth = parse_bool(k, v);
       }},
      {"ablation.pose_supervision", [](RunConfig& c, const std::string&, const std::string& v) {
         c.pose_supervision = pose_supervision_from_string(v);
       }},
      {"ae.raster", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.ae_raster = static_cast<int>(parse_int(k, v));
       }},
      {"ae.heat_radius", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.ae_heat_radius = parse_double(k, v);
       }},
      {"ae.hidden", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.ae_hidden = parse_int_list(k, v);
       }},
      {"ae.epochs", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.ae_epochs = static_cast<int>(parse_int(k, v));
       }},
      {"ae.batch_size", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.ae_batch_size = static_cast<int>(parse_int(k, v));
       }},
      {"ae.learning_rate", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.ae_sgd.learning_rate = parse_double(k, v);
       }},
      {"ae.momentum", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.ae_sgd.momentum = parse_double(k, v);
       }},
      {"ae.holdout_fraction", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.ae_holdout_fraction = parse_double(k, v);
       }},
      {"eval.probe_samples", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.probe_samples = static_cast<int>(parse_int(k, v));
       }},
      {"eval.folds", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.verification_folds = static_cast<int>(parse_int(k, v));
       }},
      {"eval.pairs_per_fold", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.pairs_per_fold = static_cast<int>(parse_int(k, v));
       }},
      {"eval.far_targets", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.far_targets = parse_double_list(k, v);
       }},
  };
  return table;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig config;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    auto it = key_table().find(key);
    if (it == key_table().end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    it->second(config, key, value);
  }
  config.validate();
  return config;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

std::string serialize_config(const RunConfig& config) {
  std::ostringstream out;
  auto fmt_int = [](const int& x) { return std::to_string(x); };
  out << "seed = " << config.seed << "\n";
  out << "out = " << config.out_dir << "\n";
  out << "data.n_identities = " << config.data.n_identities << "\n";
  out << "data.samples_per_identity = " << config.data.samples_per_identity << "\n";
  out << "data.p_profile = " << format_double(config.data.p_profile) << "\n";
  out << "data.noise_sigma = " << format_double(config.data.noise_sigma) << "\n";
  out << "data.d_in = " << config.data.d_in << "\n";
  out << "data.split = " << format_double(config.data.split) << "\n";
  out << "model.backbone_hidden = "
      << join_list<int>(config.model.backbone_hidden, fmt_int) << "\n";
  out << "model.d_b = " << config.model.d_b << "\n";
  out << "model.d = " << config.model.d << "\n";
  out << "model.d_o = " << config.model.d_o << "\n";
  out << "model.d_p = " << config.model.d_p << "\n";
  out << "model.scale = " << format_double(config.model.scale) << "\n";
  out << "model.base_margin = " << format_double(config.model.base_margin) << "\n";
  out << "model.extra_margin = " << format_double(config.model.extra_margin) << "\n";
  out << "loss.lambda1 = " << format_double(config.loss.lambda1) << "\n";
  out << "loss.lambda2 = " << format_double(config.loss.lambda2) << "\n";
  out << "loss.lambda_h = " << format_double(config.lambda_h) << "\n";
  out << "loss.squared_pose = " << (config.squared_pose ? "true" : "false") << "\n";
  out << "sgd.learning_rate = " << format_double(config.sgd.learning_rate) << "\n";
  out << "sgd.momentum = " << format_double(config.sgd.momentum) << "\n";
  out << "sgd.weight_decay = " << format_double(config.sgd.weight_decay) << "\n";
  if (config.sgd_schedule_set) {
    out << "sgd.schedule = "
        << join_list<std::pair<int, double>>(
               config.sgd.schedule,
               [](const std::pair<int, double>& p) {
                 return std::to_string(p.first) + ":" + format_double(p.second);
               })
        << "\n";
  } else {
    out << "sgd.schedule = auto\n";
  }
  out << "train.epochs = " << config.epochs << "\n";
  out << "train.batch_size = " << config.batch_size << "\n";
  out << "ablation.use_paa = " << (config.use_paa ? "true" : "false") << "\n";
  out << "ablation.use_orth = " << (config.use_orth ? "true" : "false") << "\n";
  out << "ablation.pose_supervision = " << to_string(config.pose_supervision) << "\n";
  out << "ae.raster = " << config.ae_raster << "\n";
  out << "ae.heat_radius = " << format_double(config.ae_heat_radius) << "\n";
  out << "ae.hidden = " << join_list<int>(config.ae_hidden, fmt_int) << "\n";
  out << "ae.epochs = " << config.ae_epochs << "\n";
  out << "ae.batch_size = " << config.ae_batch_size << "\n";
  out << "ae.learning_rate = " << format_double(config.ae_sgd.learning_rate) << "\n";
  out << "ae.momentum = " << format_double(config.ae_sgd.momentum) << "\n";
  out << "ae.holdout_fraction = " << format_double(config.ae_holdout_fraction) << "\n";
  out << "eval.probe_samples = " << config.probe_samples << "\n";
  out << "eval.folds = " << config.verification_folds << "\n";
  out << "eval.pairs_per_fold = " << config.pairs_per_fold << "\n";
  out << "eval.far_targets = "
      << join_list<double>(config.far_targets,
                           [](const double& x) { return format_double(x); })
      << "\n";
  return out.str();
}

}  // namespace poseface
