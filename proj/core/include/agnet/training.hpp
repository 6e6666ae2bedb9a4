#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "agnet/data.hpp"
#include "agnet/losses.hpp"
#include "agnet/model.hpp"

namespace agnet {

struct LrSpan {
  int epochs = 0;
  double rate = 0.0;
};

struct TrainConfig {
  int batch_size = 32;  // pairs per step
  int total_epochs = 75;
  std::vector<LrSpan> lr_schedule{{50, 0.1}, {25, 0.01}};
  double momentum = 0.9;
  double weight_decay = 0.0005;
  LossWeights weights;
  ALSParams als;
  double positive_fraction = 0.5;
  int pairs_per_epoch = 0;  // 0: one pair per training image
  std::uint64_t seed = 0;
  int checkpoint_every = 5;
  // Rescales the raw gradient to this global L2 norm when it is larger.
  // 0 disables clipping.
  double grad_clip_norm = 0.0;

  void validate() const;
  int steps_per_epoch(std::size_t num_images) const;
};

// Rate of the schedule span that contains `epoch` (0-based).
double lr_at_epoch(int epoch, std::span<const LrSpan> schedule);

struct TrainLogEntry {
  int epoch = 0;
  int step = 0;  // global step, 0-based
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_category = 0.0;
  double loss_color = 0.0;
  double loss_type = 0.0;
  double loss_verify = 0.0;

  friend bool operator==(const TrainLogEntry&, const TrainLogEntry&) = default;
};

inline constexpr const char* kTrainLogHeader =
    "epoch,step,lr,loss_total,loss_category,loss_color,loss_type,loss_verify";

void write_log_entry(std::ostream& out, const TrainLogEntry& entry);
std::vector<TrainLogEntry> read_train_log(const std::filesystem::path& path);

// Training images with identities remapped to dense class indices.
struct TrainingSet {
  Dataset dataset;
  std::vector<Tensor<float>> images;
  std::vector<int> class_of_record;
  std::vector<int> class_ids;  // class index -> vehicle_id

  static TrainingSet build(Dataset dataset, std::vector<Tensor<float>> images);
  int num_classes() const { return static_cast<int>(class_ids.size()); }
};

// Copies `base` with the label-space sizes of the training set.
ModelConfig model_config_for(const TrainingSet& data, ModelConfig base);

using Velocity = NetworkParams<float>;

// One SGD-with-momentum update over a pair batch. Throws NumericError naming
// the offending loss component when a loss is not finite.
TrainLogEntry train_step(Model& model, Velocity& velocity, const TrainingSet& data,
                         std::span<const PairSample> batch, const TrainConfig& config, double lr);

struct FitOptions {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::filesystem::path log_path;        // empty: no CSV log
  std::optional<std::filesystem::path> resume_from;
  // Stop after this many epochs in this call (simulates an interruption).
  std::optional<int> max_epochs_this_run;
  std::function<void(const TrainLogEntry&)> on_step;
};

struct FitResult {
  std::vector<TrainLogEntry> log;
  std::vector<std::filesystem::path> checkpoints;
  int epochs_completed = 0;
};

FitResult fit(Model& model, const TrainingSet& data, const TrainConfig& config,
              const FitOptions& options = {});

// Seed for the pair batch drawn at (epoch, step within epoch).
std::uint64_t batch_seed(std::uint64_t seed, int epoch, int step);

}  // namespace agnet
