#pragma once

// Adam training loop with per-epoch validation and checkpointing.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "psinet/adam.hpp"
#include "psinet/checkpoint.hpp"
#include "psinet/config.hpp"
#include "psinet/dataset.hpp"
#include "psinet/loss.hpp"
#include "psinet/metrics.hpp"
#include "psinet/net.hpp"
#include "psinet/report.hpp"

namespace psinet {

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossBreakdown loss;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_dice = 0;  // mean foreground Dice on the validation set
  std::vector<ClassAggregate> classes;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

struct TrainHooks {
  /// When set, receives loss.csv, epoch_metrics.csv, checkpoint_last.psin and
  /// checkpoint_best.psin.
  std::filesystem::path out_dir;
  std::vector<std::size_t> widths = default_trimap_widths();
  /// Called after each epoch's validation; returning false ends training.
  std::function<bool(const EpochRecord&, const PsiNet<float>&)> on_epoch;
};

/// Joint loss of a batch for whichever heads the network has.
template <class T>
JointLoss<T> compute_loss(const Predictions<T>& pred, const Batch<T>& batch, const LossWeights& weights,
                          Reduction reduction) {
  const Tensor<T> mask = nll_mask(pred.mask_probs, batch.mask_labels, reduction);
  std::optional<Tensor<T>> contour, distance;
  if (pred.contour_probs) contour = nll_contour(*pred.contour_probs, batch.contour_labels, reduction);
  if (pred.distance) distance = mse_distance<T>(*pred.distance, batch.distance, reduction);
  return total_loss(weights, mask, contour, distance);
}

/// Runs the network over `samples` in batches.
template <class T>
std::vector<Predictions<T>> predict_batches(const PsiNet<T>& net, const std::vector<Sample>& samples,
                                            std::size_t batch_size) {
  std::vector<Predictions<T>> out;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    std::vector<const Image*> ims;
    for (std::size_t i : idx) ims.push_back(&samples[i].image);
    auto p = net.forward(image_tensor<T>(ims));
    // Keep values only; the graph is not needed for evaluation.
    p.mask_probs = p.mask_probs.detach();
    if (p.contour_probs) p.contour_probs = p.contour_probs->detach();
    if (p.distance) p.distance = p.distance->detach();
    out.push_back(std::move(p));
  }
  return out;
}

template <class T>
std::vector<Mask> predict_masks(const PsiNet<T>& net, const std::vector<Sample>& samples,
                                std::size_t batch_size = 4) {
  std::vector<Mask> out;
  for (const auto& p : predict_batches(net, samples, batch_size)) {
    for (auto& m : argmax_masks(p.mask_probs)) out.push_back(std::move(m));
  }
  return out;
}

/// Metric report per sample; optionally ellipse-fits each predicted class first.
template <class T>
std::vector<MetricReport> evaluate(const PsiNet<T>& net, const std::vector<Sample>& samples,
                                   const std::vector<std::size_t>& widths, std::size_t batch_size = 4,
                                   bool fit_ellipse = false) {
  const auto masks = predict_masks(net, samples, batch_size);
  std::vector<MetricReport> out;
  const std::size_t k = net.config().num_classes;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Mask pred = fit_ellipse ? ellipse_fit_classes(masks[i], k) : masks[i];
    out.push_back(evaluate_pair(pred, samples[i].mask, k, widths));
  }
  return out;
}

/// Trains `net` in place. Each step: reset gradients, forward, joint loss,
/// backward, Adam update. Aborts with NonFiniteLossError on a NaN/Inf loss.
inline TrainLog train(PsiNet<float>& net, AdamState<float>& adam, const std::vector<Sample>& train_set,
                      const std::vector<Sample>& val_set, const TrainConfig& cfg,
                      const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  for (const auto& s : train_set) validate_labels(s.mask, net.config().num_classes);

  std::ofstream loss_csv, epoch_csv;
  if (!hooks.out_dir.empty()) {
    std::filesystem::create_directories(hooks.out_dir);
    loss_csv.open(hooks.out_dir / "loss.csv", std::ios::trunc);
    epoch_csv.open(hooks.out_dir / "epoch_metrics.csv", std::ios::trunc);
    if (!loss_csv || !epoch_csv) throw std::runtime_error("cannot write logs in " + hooks.out_dir.string());
    write_loss_header(loss_csv);
    write_aggregate_header(epoch_csv, hooks.widths, "epoch,");
  }

  TrainLog log;
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5eed5eed5eed5eedull);
  std::vector<std::size_t> order(train_set.size());
  double best_dice = -1;
  const AdamConfig adam_cfg = cfg.adam();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min(cfg.batch_size, order.size() - start));
      const Batch<float> batch = make_batch<float>(train_set, idx);
      net.zero_grad();
      const auto loss = compute_loss(net.forward(batch.images), batch, cfg.weights, cfg.reduction);
      const std::size_t step = log.steps.size() + 1;
      if (!std::isfinite(loss.breakdown.total)) {
        std::string ids;
        for (std::size_t i : idx) ids += (ids.empty() ? "" : ", ") + train_set[i].id;
        throw NonFiniteLossError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(step) + " (batch: " + ids + ")");
      }
      backward(loss.total);
      adam_step(net.parameters(), adam, adam_cfg);
      log.steps.push_back({step, epoch, loss.breakdown});
      if (loss_csv.is_open()) write_loss_row(loss_csv, step, epoch, loss.breakdown);
    }

    EpochRecord rec{epoch, 0, {}};
    if (!val_set.empty()) {
      const auto reports = evaluate(net, val_set, hooks.widths, cfg.batch_size);
      rec.mean_dice = mean_foreground_dice(reports);
      rec.classes = aggregate(reports);
    }
    log.epochs.push_back(rec);
    if (!hooks.out_dir.empty()) {
      write_aggregate_rows(epoch_csv, rec.classes, std::to_string(epoch) + ",");
      loss_csv.flush();
      epoch_csv.flush();
      save_checkpoint(hooks.out_dir / "checkpoint_last.psin", net, adam, cfg);
      if (!val_set.empty() && rec.mean_dice > best_dice) {
        best_dice = rec.mean_dice;
        save_checkpoint(hooks.out_dir / "checkpoint_best.psin", net, adam, cfg);
      }
    }
    if (hooks.on_epoch && !hooks.on_epoch(rec, net)) break;
  }
  return log;
}

}  // namespace psinet
