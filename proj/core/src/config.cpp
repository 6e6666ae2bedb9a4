#include "agnet/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "agnet/error.hpp"

namespace agnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

Config Config::defaults() {
  Config c;
  c.values_ = {
      {"seed", "0"},
      {"model.backbone_channels", "16,32,64"},
      {"model.spatial_size", "4"},
      {"model.embedding_dim", "64"},
      {"model.mask_dim", "64"},
      {"synth.num_identities", "8"},
      {"synth.images_per_identity", "4"},
      {"synth.num_colors", "3"},
      {"synth.num_types", "2"},
      {"synth.num_cameras", "4"},
      {"synth.image_side", "32"},
      {"synth.noise_std", "0"},
      {"synth.train_fraction", "0"},
      {"data.manifest", ""},
      {"data.image_root", ""},
      {"train.batch_size", "32"},
      {"train.epochs", "75"},
      {"train.lr_schedule", "50:0.1,25:0.01"},
      {"train.momentum", "0.9"},
      {"train.weight_decay", "0.0005"},
      {"train.positive_fraction", "0.5"},
      {"train.pairs_per_epoch", "0"},
      {"train.checkpoint_every", "5"},
      {"train.resume", ""},
      {"train.grad_clip_norm", "0"},
      {"loss.lambda1", "0.5"},
      {"loss.lambda2", "0.5"},
      {"loss.lambda3", "1"},
      {"als.theta", "0.1"},
      {"als.alpha", "0.1"},
      {"als.beta", "1"},
      {"fusion.alpha", "0.5"},
      {"extract.checkpoint", ""},
      {"extract.feature", "all"},
      {"eval.protocol", "veri"},
      {"eval.features", ""},
      {"eval.query_features", ""},
      {"eval.gallery_size", "800"},
      {"eval.l2_normalize", "false"},
      {"gradcheck.instances", "20"},
      {"gradcheck.step", "1e-4"},
  };
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    const std::vector<std::string> known = keys();
    throw ConfigError("unknown config key '" + key + "' (did you mean '" + nearest_key(key, known) +
                      "'?)");
  }
  it->second = value;
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int Config::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
}

double Config::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
}

bool Config::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

std::uint64_t Config::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const std::uint64_t out = std::stoull(v, &used);
      if (used == v.size()) return out;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "' expects an unsigned integer, got '" + v + "'");
}

std::vector<int> Config::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' expects a comma list of integers, got '" +
                        get(key) + "'");
    }
  }
  return out;
}

std::vector<std::string> Config::keys() const {
  std::vector<std::string> out;
  for (const auto& entry : values_) out.push_back(entry.first);
  return out;
}

std::string Config::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  return os.str();
}

Config load_config(const std::optional<std::filesystem::path>& path,
                   std::span<const std::string> overrides) {
  Config config = Config::defaults();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file " + path->string());
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(path->string() + ":" + std::to_string(line_no) + ": expected key = value");
      }
      config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }
  for (const auto& o : overrides) config.apply_override(o);
  return config;
}

std::string nearest_key(const std::string& key, std::span<const std::string> candidates) {
  std::string best;
  std::size_t best_distance = std::string::npos;
  for (const auto& c : candidates) {
    const std::size_t d = edit_distance(key, c);
    if (d < best_distance) {
      best_distance = d;
      best = c;
    }
  }
  return best;
}

std::vector<LrSpan> parse_lr_schedule(const std::string& text) {
  std::vector<LrSpan> schedule;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("train.lr_schedule entries must be epochs:rate, got '" + item + "'");
    }
    try {
      schedule.push_back({std::stoi(trim(item.substr(0, colon))), std::stod(trim(item.substr(colon + 1)))});
    } catch (const std::exception&) {
      throw ConfigError("train.lr_schedule entry '" + item + "' is not epochs:rate");
    }
  }
  if (schedule.empty()) throw ConfigError("train.lr_schedule is empty");
  return schedule;
}

ModelConfig model_config_from(const Config& config) {
  ModelConfig m;
  m.backbone_channels = config.get_int_list("model.backbone_channels");
  m.spatial_size = config.get_int("model.spatial_size");
  m.embedding_dim = config.get_int("model.embedding_dim");
  m.mask_dim = config.get_int("model.mask_dim");
  m.seed = config.get_u64("seed");
  m.validate();
  return m;
}

TrainConfig train_config_from(const Config& config) {
  TrainConfig t;
  t.batch_size = config.get_int("train.batch_size");
  t.total_epochs = config.get_int("train.epochs");
  t.lr_schedule = parse_lr_schedule(config.get("train.lr_schedule"));
  t.momentum = config.get_double("train.momentum");
  t.weight_decay = config.get_double("train.weight_decay");
  t.positive_fraction = config.get_double("train.positive_fraction");
  t.pairs_per_epoch = config.get_int("train.pairs_per_epoch");
  t.checkpoint_every = config.get_int("train.checkpoint_every");
  t.grad_clip_norm = config.get_double("train.grad_clip_norm");
  t.weights = {config.get_double("loss.lambda1"), config.get_double("loss.lambda2"),
               config.get_double("loss.lambda3")};
  t.als = {config.get_double("als.theta"), config.get_double("als.alpha"), config.get_double("als.beta")};
  t.seed = config.get_u64("seed");
  t.validate();
  return t;
}

SyntheticSpec synthetic_spec_from(const Config& config) {
  SyntheticSpec s;
  s.num_identities = config.get_int("synth.num_identities");
  s.images_per_identity = config.get_int("synth.images_per_identity");
  s.num_colors = config.get_int("synth.num_colors");
  s.num_types = config.get_int("synth.num_types");
  s.num_cameras = config.get_int("synth.num_cameras");
  s.image_side = config.get_int("synth.image_side");
  s.noise_std = config.get_double("synth.noise_std");
  s.seed = config.get_u64("seed");
  s.validate();
  return s;
}

FusionConfig fusion_config_from(const Config& config) {
  FusionConfig f{config.get_double("fusion.alpha")};
  f.validate();
  return f;
}

EvalOptions eval_options_from(const Config& config) {
  EvalOptions o;
  o.protocol = parse_protocol(config.get("eval.protocol"));
  o.l2_normalize = config.get_bool("eval.l2_normalize");
  o.seed = config.get_u64("seed");
  return o;
}

GradCheckOptions gradcheck_options_from(const Config& config) {
  GradCheckOptions g;
  g.instances = config.get_int("gradcheck.instances");
  g.step = config.get_double("gradcheck.step");
  g.seed = config.get_u64("seed");
  if (g.instances < 1) throw ConfigError("gradcheck.instances must be >= 1");
  if (!(g.step > 0.0)) throw ConfigError("gradcheck.step must be > 0");
  return g;
}

}  // namespace agnet
