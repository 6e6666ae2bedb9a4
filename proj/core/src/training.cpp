#include "agnet/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include "agnet/checkpoint.hpp"
#include "agnet/error.hpp"

namespace agnet {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (total_epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
  if (pairs_per_epoch < 0) throw ConfigError("train.pairs_per_epoch must be >= 0");
  if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0)) {
    throw ConfigError("train.positive_fraction must lie in [0, 1]");
  }
  if (!(momentum >= 0.0)) throw ConfigError("train.momentum must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(grad_clip_norm >= 0.0)) throw ConfigError("train.grad_clip_norm must be >= 0");
  int span_total = 0;
  for (const auto& span : lr_schedule) {
    if (span.epochs < 1) throw ConfigError("train.lr_schedule spans must cover >= 1 epoch");
    if (!(span.rate > 0.0)) throw ConfigError("train.lr_schedule rates must be > 0");
    span_total += span.epochs;
  }
  if (span_total != total_epochs) {
    throw ConfigError("train.lr_schedule spans sum to " + std::to_string(span_total) +
                      " but train.epochs is " + std::to_string(total_epochs));
  }
  if (weights.lambda1 < 0 || weights.lambda2 < 0 || weights.lambda3 < 0) {
    throw ConfigError("loss weights must be >= 0");
  }
  als.validate();
}

int TrainConfig::steps_per_epoch(std::size_t num_images) const {
  const std::size_t pairs = pairs_per_epoch > 0 ? static_cast<std::size_t>(pairs_per_epoch) : num_images;
  return static_cast<int>((pairs + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size));
}

double lr_at_epoch(int epoch, std::span<const LrSpan> schedule) {
  if (epoch < 0) throw RangeError("lr_at_epoch: negative epoch");
  int start = 0;
  for (const auto& span : schedule) {
    if (epoch < start + span.epochs) return span.rate;
    start += span.epochs;
  }
  throw RangeError("lr_at_epoch: epoch " + std::to_string(epoch) + " is past the " +
                   std::to_string(start) + "-epoch schedule");
}

void write_log_entry(std::ostream& out, const TrainLogEntry& e) {
  out << e.epoch << ',' << e.step << ',' << std::setprecision(17) << e.lr << ',' << e.loss_total
      << ',' << e.loss_category << ',' << e.loss_color << ',' << e.loss_type << ','
      << e.loss_verify << '\n';
}

std::vector<TrainLogEntry> read_train_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open train log " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kTrainLogHeader) throw FormatError(path.string() + ": unexpected train log header");
  std::vector<TrainLogEntry> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    TrainLogEntry e;
    if (!(ss >> e.epoch >> e.step >> e.lr >> e.loss_total >> e.loss_category >> e.loss_color >>
          e.loss_type >> e.loss_verify)) {
      throw ParseError(path.string() + ": malformed train log row '" + line + "'");
    }
    out.push_back(e);
  }
  return out;
}

TrainingSet TrainingSet::build(Dataset dataset, std::vector<Tensor<float>> images) {
  if (images.size() != dataset.size()) {
    throw ShapeError("training set: " + std::to_string(images.size()) + " images for " +
                     std::to_string(dataset.size()) + " records");
  }
  TrainingSet set;
  set.class_ids = dataset.identities();
  std::map<int, int> class_of_id;
  for (std::size_t i = 0; i < set.class_ids.size(); ++i) {
    class_of_id[set.class_ids[i]] = static_cast<int>(i);
  }
  for (const auto& r : dataset.records) set.class_of_record.push_back(class_of_id.at(r.vehicle_id));
  set.dataset = std::move(dataset);
  set.images = std::move(images);
  return set;
}

ModelConfig model_config_for(const TrainingSet& data, ModelConfig base) {
  base.num_identities = data.num_classes();
  base.num_colors = data.dataset.num_colors;
  base.num_types = data.dataset.num_types;
  return base;
}

namespace {

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

std::vector<float> scaled(const std::vector<double>& v, double s) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] * s);
  return out;
}

void accumulate(std::vector<float>& dst, const std::vector<float>& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void require_finite(double value, const char* component) {
  if (!std::isfinite(value)) {
    throw NumericError(std::string("train_step: ") + component + " loss is not finite (" +
                       std::to_string(value) + ")");
  }
}

}  // namespace

TrainLogEntry train_step(Model& model, Velocity& velocity, const TrainingSet& data,
                         std::span<const PairSample> batch, const TrainConfig& config, double lr) {
  if (batch.empty()) throw SamplingError("train_step: empty batch");
  const std::size_t num_pairs = batch.size();
  const std::size_t num_images = 2 * num_pairs;
  const LossWeights& w = config.weights;

  std::vector<std::size_t> rows(num_images);
  for (std::size_t p = 0; p < num_pairs; ++p) {
    rows[2 * p] = batch[p].a_index;
    rows[2 * p + 1] = batch[p].b_index;
  }
  int labeled_color = 0, labeled_type = 0;
  for (std::size_t row : rows) {
    if (row >= data.images.size()) throw IndexError("train_step: pair references a missing image");
    if (data.dataset.records[row].color_id != kUnlabeled) ++labeled_color;
    if (data.dataset.records[row].type_id != kUnlabeled) ++labeled_type;
  }

  std::vector<BranchCache<float>> caches(num_images);
  std::vector<BranchOutputs<float>> outputs(num_images);
  for (std::size_t i = 0; i < num_images; ++i) {
    outputs[i] = model.forward_branch(data.images[rows[i]], &caches[i]);
  }

  std::vector<BranchGradients<float>> upstream(num_images);
  double loss_category = 0.0, loss_color = 0.0, loss_type = 0.0, loss_verify = 0.0;
  const double id_scale = w.lambda1 / static_cast<double>(num_images);
  for (std::size_t i = 0; i < num_images; ++i) {
    const VehicleRecord& rec = data.dataset.records[rows[i]];
    const auto id = softmax_cross_entropy(to_double(outputs[i].id_logits), data.class_of_record[rows[i]]);
    loss_category += id.loss;
    upstream[i].id_logits = scaled(id.dlogits, id_scale);
    if (rec.color_id != kUnlabeled) {
      const auto c = softmax_cross_entropy(to_double(outputs[i].color_logits), rec.color_id);
      loss_color += c.loss;
      upstream[i].color_logits = scaled(c.dlogits, w.lambda2 / labeled_color);
    }
    if (rec.type_id != kUnlabeled) {
      const auto t = softmax_cross_entropy(to_double(outputs[i].type_logits), rec.type_id);
      loss_type += t.loss;
      upstream[i].type_logits = scaled(t.dlogits, w.lambda2 / labeled_type);
    }
  }
  loss_category /= static_cast<double>(num_images);
  if (labeled_color > 0) loss_color /= labeled_color;
  if (labeled_type > 0) loss_type /= labeled_type;

  Velocity grads = Velocity::zeros(model.config());
  const double verify_scale = w.lambda3 / static_cast<double>(num_pairs);
  for (std::size_t p = 0; p < num_pairs; ++p) {
    const auto& fa = outputs[2 * p].cat_embedding;
    const auto& fb = outputs[2 * p + 1].cat_embedding;
    const VerificationLogits<float> v = model.verify(fa, fb);
    const std::vector<double> logits{v.values[0], v.values[1]};
    const int target = batch[p].same_id ? kSameClass : kDifferentClass;
    const auto als = softmax_als(logits, target, batch[p].context(), config.als);
    loss_verify += als.loss;
    const std::vector<float> dlogits = scaled(als.dlogits, verify_scale);
    std::vector<float> da, db;
    verification_head_backward<float>(fa, fb, model.params().verify_head, dlogits, grads.verify_head,
                                      &da, &db);
    accumulate(upstream[2 * p].cat_embedding, da);
    accumulate(upstream[2 * p + 1].cat_embedding, db);
  }
  loss_verify /= static_cast<double>(num_pairs);

  require_finite(loss_category, "category");
  require_finite(loss_color, "color");
  require_finite(loss_type, "type");
  require_finite(loss_verify, "verify");
  const double total = total_loss(loss_category, loss_color, loss_type, loss_verify, w);

  for (std::size_t i = 0; i < num_images; ++i) model.backward_branch(caches[i], upstream[i], grads);

  // v <- mu v + (g + wd w);  w <- w - lr v
  const auto mu = static_cast<float>(config.momentum);
  const auto wd = static_cast<float>(config.weight_decay);
  const auto rate = static_cast<float>(lr);
  std::vector<Tensor<float>*> grad_tensors, vel_tensors;
  grads.for_each([&](const std::string&, Tensor<float>& t) { grad_tensors.push_back(&t); });
  velocity.for_each([&](const std::string&, Tensor<float>& t) { vel_tensors.push_back(&t); });
  double sq = 0.0;
  for (const Tensor<float>* t : grad_tensors) {
    for (float x : t->values()) sq += static_cast<double>(x) * x;
  }
  // Checked before any parameter moves, so a failing step leaves the model intact.
  if (!std::isfinite(sq)) throw NumericError("train_step: gradient is not finite");
  const double norm = std::sqrt(sq);
  float clip_scale = 1.0f;
  if (config.grad_clip_norm > 0.0 && norm > config.grad_clip_norm) {
    clip_scale = static_cast<float>(config.grad_clip_norm / norm);
  }
  std::size_t k = 0;
  model.params().for_each([&](const std::string& name, Tensor<float>& param) {
    auto g = grad_tensors[k]->values();
    auto v = vel_tensors[k]->values();
    auto p = param.values();
    ++k;
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = mu * v[i] + (clip_scale * g[i] + wd * p[i]);
      p[i] -= rate * v[i];
    }
    if (!param.all_finite()) throw NumericError("train_step: parameter '" + name + "' became non-finite");
  });

  TrainLogEntry entry;
  entry.lr = lr;
  entry.loss_total = total;
  entry.loss_category = loss_category;
  entry.loss_color = loss_color;
  entry.loss_type = loss_type;
  entry.loss_verify = loss_verify;
  return entry;
}

std::uint64_t batch_seed(std::uint64_t seed, int epoch, int step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xFFFFFFFFu), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(step), 0x41474e75u};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

FitResult fit(Model& model, const TrainingSet& data, const TrainConfig& config,
              const FitOptions& options) {
  config.validate();
  if (model.config().num_identities < data.num_classes()) {
    throw ConfigError("fit: model has " + std::to_string(model.config().num_identities) +
                      " identity outputs but the training set has " +
                      std::to_string(data.num_classes()) + " identities");
  }
  Velocity velocity = Velocity::zeros(model.config());
  int start_epoch = 0;
  if (options.resume_from) {
    const Checkpoint ckpt = read_checkpoint(*options.resume_from);
    const ModelConfig expected = model.config();
    model = restore_model(ckpt, &expected);
    if (!restore_momentum(ckpt, velocity)) velocity = Velocity::zeros(model.config());
    start_epoch = ckpt.epoch;
  }

  if (!options.checkpoint_dir.empty()) fs::create_directories(options.checkpoint_dir);
  std::ofstream log_out;
  if (!options.log_path.empty()) {
    const bool fresh = !fs::exists(options.log_path) || fs::file_size(options.log_path) == 0;
    log_out.open(options.log_path, std::ios::app);
    if (!log_out) throw IoError("cannot open train log " + options.log_path.string());
    if (fresh) log_out << kTrainLogHeader << '\n';
  }

  FitResult result;
  const int steps = config.steps_per_epoch(data.dataset.size());
  int end_epoch = config.total_epochs;
  if (options.max_epochs_this_run) end_epoch = std::min(end_epoch, start_epoch + *options.max_epochs_this_run);

  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    const double lr = lr_at_epoch(epoch, config.lr_schedule);
    for (int s = 0; s < steps; ++s) {
      const auto pairs = sample_pairs(data.dataset, config.batch_size, config.positive_fraction,
                                      batch_seed(config.seed, epoch, s));
      TrainLogEntry entry = train_step(model, velocity, data, pairs, config, lr);
      entry.epoch = epoch;
      entry.step = epoch * steps + s;
      if (log_out.is_open()) {
        write_log_entry(log_out, entry);
        log_out.flush();
      }
      if (options.on_step) options.on_step(entry);
      result.log.push_back(entry);
    }
    ++result.epochs_completed;
    const int done = epoch + 1;
    if (!options.checkpoint_dir.empty() && done % config.checkpoint_every == 0) {
      const fs::path path = options.checkpoint_dir / ("ckpt_e" + std::to_string(done) + ".agnc");
      save_checkpoint(path, model, done, &velocity);
      result.checkpoints.push_back(path);
    }
  }
  if (!options.checkpoint_dir.empty() && end_epoch == config.total_epochs && result.epochs_completed > 0) {
    const fs::path path = options.checkpoint_dir / "ckpt_final.agnc";
    save_checkpoint(path, model, end_epoch, &velocity);
    result.checkpoints.push_back(path);
  }
  return result;
}

}  // namespace agnet
