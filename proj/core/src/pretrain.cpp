#include "vedit/pretrain.hpp"

#include "vedit/errors.hpp"
#include "vedit/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace vedit {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::size_t kEvalBatch = 64;

bool decays(const ParamInfo& info) {
  return info.role == TensorRole::kWeight && info.name.find("norm") == std::string::npos &&
         info.name != "cls_token" && info.name != "pos_embed";
}

}  // namespace

Image hflip(const Image& img) {
  Image out = img;
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

std::vector<ProbabilityVector> probs_all(const BaseModel& model, const LabeledImages& data) {
  std::vector<ProbabilityVector> out;
  out.reserve(data.size());
  ad::NoGradGuard guard;
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    std::vector<const Image*> batch;
    for (std::size_t i = start; i < std::min(data.size(), start + kEvalBatch); ++i) batch.push_back(&data[i].image);
    const ad::Matrix logits = vit_logits_batch(model.config(), model.layout(), model.params().vars(), batch).value();
    for (ad::Index r = 0; r < logits.rows(); ++r) out.push_back(softmax(logits.row(r)));
  }
  return out;
}

std::vector<int> predict_all(const BaseModel& model, const LabeledImages& data) {
  std::vector<int> out;
  for (const auto& p : probs_all(model, data)) out.push_back(argmax(p));
  return out;
}

double accuracy(const BaseModel& model, const LabeledImages& data) {
  if (data.empty()) return 0.0;
  const auto pred = predict_all(model, data);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hit += pred[i] == data[i].label;
  return double(hit) / double(data.size());
}

BaseModel train_model(BaseModel model, const LabeledImages& train, const LabeledImages& heldout,
                      const TrainSchedule& s, TrainLog* log, const std::function<void(int, double)>& on_step) {
  if (train.empty()) throw std::invalid_argument("pretrain: empty dataset");
  if (s.steps < 0 || s.batch_size < 1 || !(s.lr > 0)) throw std::invalid_argument("pretrain: invalid schedule");
  if (s.steps == 0) {
    model.heldout_accuracy = accuracy(model, heldout);
    return model;
  }
  const auto& cfg = model.config();
  ParamStore params = model.params().trainable_copy();
  std::vector<bool> decay(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) decay[i] = decays(params.info(i));
  Adam opt({s.lr, 0.9, 0.999, 1e-8, s.weight_decay});
  std::mt19937_64 rng(s.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  std::bernoulli_distribution flip(0.5);

  for (int step = 0; step < s.steps; ++step) {
    std::vector<Image> imgs;
    std::vector<int> labels;
    for (int b = 0; b < s.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& item = train[order[cursor++]];
      imgs.push_back(s.hflip && flip(rng) ? hflip(item.image) : item.image);
      labels.push_back(item.label);
    }
    std::vector<const Image*> ptrs;
    for (const auto& im : imgs) ptrs.push_back(&im);
    const ad::Var loss = nn::mean_cross_entropy(vit_logits_batch(cfg, model.layout(), params.vars(), ptrs), labels);
    const double lv = loss.item();
    if (!std::isfinite(lv)) {
      throw NumericalError("pretrain: non-finite loss at step " + std::to_string(step));
    }
    auto gv = ad::grad(loss, params.vars());
    std::vector<ad::Matrix> grads;
    grads.reserve(gv.size());
    for (auto& g : gv) grads.push_back(g.value());
    clip_global_norm(grads, s.clip_norm);

    double lr = s.lr;
    if (step < s.warmup_steps) {
      lr *= double(step + 1) / double(s.warmup_steps);
    } else {
      const double t = double(step - s.warmup_steps) / double(std::max(1, s.steps - s.warmup_steps));
      lr *= 0.5 * (1.0 + std::cos(kPi * t));
    }
    opt.set_lr(lr);
    std::vector<ad::Matrix*> ptrs_p;
    for (std::size_t i = 0; i < params.size(); ++i) ptrs_p.push_back(&params.mutable_var(i).mutable_value());
    opt.step(ptrs_p, grads, decay);
    if (log) log->losses.push_back(lv);
    if (on_step) on_step(step, lv);
  }
  BaseModel out = model.with_params(params.frozen_copy());
  out.heldout_accuracy = accuracy(out, heldout);
  return out;
}

BaseModel pretrain_base(const LabeledImages& train, const LabeledImages& heldout, const ViTConfig& cfg,
                        const TrainSchedule& schedule, TrainLog* log, const std::function<void(int, double)>& on_step) {
  return train_model(BaseModel(cfg), train, heldout, schedule, log, on_step);
}

}  // namespace vedit
