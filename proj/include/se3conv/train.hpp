#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "se3conv/common.hpp"
#include "se3conv/grid.hpp"
#include "se3conv/model.hpp"
#include "se3conv/rng.hpp"

namespace se3conv {

struct Dataset {
  VolumeBatch volumes;
  std::vector<int> labels;

  std::size_t size() const { return volumes.size(); }
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    require(epochs >= 0, "TrainConfig: epochs must be >= 0");
    require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    require(learning_rate >= 0, "TrainConfig: learning_rate must be >= 0");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0,
            "TrainConfig: invalid adam parameters");
  }
};

struct MetricsRow {
  int epoch = 0;
  std::string split;
  double accuracy = 0;
  double loss = 0;
  double wall_seconds = 0;
};

inline void write_metrics_csv(const std::vector<MetricsRow>& rows, std::ostream& out) {
  out << "epoch,split,accuracy,loss,wall_seconds\n";
  for (const auto& r : rows)
    out << r.epoch << "," << r.split << "," << format_g17(r.accuracy) << ","
        << format_g17(r.loss) << "," << format_g17(r.wall_seconds) << "\n";
}

// Mean cross-entropy over the batch with a stable softmax; also produces
// dL/dlogits and the number of argmax-correct rows (ties to the lowest
// class index).
struct LossResult {
  double loss = 0;
  Matrix2D dlogits;
  int correct = 0;
};

inline int argmax_class(const Matrix2D& logits, std::size_t row) {
  int best = 0;
  for (std::size_t c = 1; c < logits.cols; ++c)
    if (logits.at(row, c) > logits.at(row, best)) best = static_cast<int>(c);
  return best;
}

inline LossResult softmax_cross_entropy(const Matrix2D& logits,
                                        const std::vector<int>& labels) {
  require(logits.rows == labels.size(), "softmax_cross_entropy: label count mismatch");
  LossResult res;
  res.dlogits = Matrix2D(logits.rows, logits.cols);
  const double inv_b = 1.0 / static_cast<double>(logits.rows);
  for (std::size_t b = 0; b < logits.rows; ++b) {
    double mx = logits.at(b, 0);
    for (std::size_t c = 1; c < logits.cols; ++c) mx = std::max(mx, logits.at(b, c));
    double z = 0;
    for (std::size_t c = 0; c < logits.cols; ++c) z += std::exp(logits.at(b, c) - mx);
    const int y = labels[b];
    res.loss += -(logits.at(b, y) - mx - std::log(z)) * inv_b;
    for (std::size_t c = 0; c < logits.cols; ++c) {
      const double p = std::exp(logits.at(b, c) - mx) / z;
      res.dlogits.at(b, c) = (p - (static_cast<int>(c) == y ? 1.0 : 0.0)) * inv_b;
    }
    if (argmax_class(logits, b) == y) ++res.correct;
  }
  return res;
}

class Adam {
 public:
  Adam(Model& model, const TrainConfig& cfg) : cfg_(cfg) {
    for (auto& t : model.tensors()) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    }
  }

  void step(Model& model) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    auto tensors = model.tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      auto& value = *tensors[i].value;
      const auto& grad = *tensors[i].grad;
      for (std::size_t j = 0; j < value.size(); ++j) {
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1 - cfg_.beta1) * grad[j];
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1 - cfg_.beta2) * grad[j] * grad[j];
        value[j] -= cfg_.learning_rate * (m_[i][j] / bc1) /
                    (std::sqrt(v_[i][j] / bc2) + cfg_.eps);
      }
    }
  }

 private:
  TrainConfig cfg_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EvalResult {
  double accuracy = 0;
  double loss = 0;
};

inline EvalResult evaluate_with_loss(Model& model, const Dataset& data,
                                     int batch_size = 16) {
  require(data.size() > 0, "evaluate: empty dataset");
  EvalResult res;
  int correct = 0;
  double loss_sum = 0;
  for (std::size_t lo = 0; lo < data.size(); lo += batch_size) {
    const std::size_t hi = std::min(data.size(), lo + batch_size);
    VolumeBatch batch(data.volumes.begin() + lo, data.volumes.begin() + hi);
    std::vector<int> labels(data.labels.begin() + lo, data.labels.begin() + hi);
    const Matrix2D logits = model.forward(batch, Mode::Eval);
    const LossResult l = softmax_cross_entropy(logits, labels);
    correct += l.correct;
    loss_sum += l.loss * static_cast<double>(hi - lo);
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  res.loss = loss_sum / static_cast<double>(data.size());
  return res;
}

inline double evaluate(Model& model, const Dataset& data, int batch_size = 16) {
  return evaluate_with_loss(model, data, batch_size).accuracy;
}

// Adam on cross-entropy. Per-epoch rows: the "train" split reports the
// running metrics of the training passes themselves; each named eval split
// is scored in eval mode (fixed grid, frozen batch-norm statistics).
// wall_seconds is 0 unless timing is requested, so logs stay byte-stable.
inline std::vector<MetricsRow> train(
    Model& model, const Dataset& train_data,
    const std::vector<std::pair<std::string, const Dataset*>>& eval_sets,
    const TrainConfig& cfg, bool timing = false) {
  cfg.validate();
  require(train_data.size() > 0, "train: empty dataset");
  std::vector<MetricsRow> log;
  Adam adam(model, cfg);
  Rng shuffle_rng(cfg.seed);
  Rng grid_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);
  const auto t0 = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    int correct = 0;
    double loss_sum = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      VolumeBatch batch;
      std::vector<int> labels;
      batch.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        batch.push_back(train_data.volumes[order[i]]);
        labels.push_back(train_data.labels[order[i]]);
      }
      const Matrix2D logits = model.forward(batch, Mode::Train, &grid_rng);
      const LossResult l = softmax_cross_entropy(logits, labels);
      if (!std::isfinite(l.loss))
        throw validation_error("train: loss diverged (non-finite) at epoch " +
                               std::to_string(epoch));
      correct += l.correct;
      loss_sum += l.loss * static_cast<double>(hi - lo);
      model.zero_grad();
      model.backward(l.dlogits);
      adam.step(model);
    }
    const auto elapsed = [&] {
      if (!timing) return 0.0;
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    log.push_back({epoch, "train",
                   static_cast<double>(correct) / static_cast<double>(order.size()),
                   loss_sum / static_cast<double>(order.size()), elapsed()});
    for (const auto& [name, data] : eval_sets) {
      const EvalResult r = evaluate_with_loss(model, *data, cfg.batch_size);
      log.push_back({epoch, name, r.accuracy, r.loss, elapsed()});
    }
  }
  return log;
}

}  // namespace se3conv
