// Supervised training of the base (and reference) classifier.
#pragma once

#include "vedit/image.hpp"
#include "vedit/vit.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace vedit {

struct TrainSchedule {
  int steps = 0;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.05;
  int warmup_steps = 0;
  double clip_norm = 1.0;
  bool hflip = true;  // random horizontal flips
  std::uint64_t seed = 0;
};

struct TrainLog {
  std::vector<double> losses;  // one per step
};

/// AdamW with linear warmup and cosine decay. Throws NumericalError on a
/// non-finite loss. The returned model records its accuracy on `heldout`
/// (zero when `heldout` is empty).
BaseModel pretrain_base(const LabeledImages& train, const LabeledImages& heldout, const ViTConfig& cfg,
                        const TrainSchedule& schedule, TrainLog* log = nullptr,
                        const std::function<void(int, double)>& on_step = {});

/// Continues training an existing model.
BaseModel train_model(BaseModel model, const LabeledImages& train, const LabeledImages& heldout,
                      const TrainSchedule& schedule, TrainLog* log = nullptr,
                      const std::function<void(int, double)>& on_step = {});

double accuracy(const BaseModel& model, const LabeledImages& data);
/// Predictions in batches, one label per image.
std::vector<int> predict_all(const BaseModel& model, const LabeledImages& data);
std::vector<ProbabilityVector> probs_all(const BaseModel& model, const LabeledImages& data);

Image hflip(const Image& img);

}  // namespace vedit
