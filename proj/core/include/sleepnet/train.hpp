#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sleepnet/augment.hpp"
#include "sleepnet/checkpoint.hpp"
#include "sleepnet/dataset.hpp"
#include "sleepnet/metrics.hpp"
#include "sleepnet/models.hpp"
#include "sleepnet/ops.hpp"
#include "sleepnet/tfr.hpp"

namespace sleepnet::train {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean over elements of 0.5 r^2 for |r| <= delta, else delta(|r| - delta/2).
template <typename T>
Tensor<T> huber_loss(const Tensor<T>& pred, const Tensor<T>& target, T delta = T(1)) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("huber: prediction " + shape_str(pred.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  auto loss = mean_all(huber_elem(sub(pred, target), delta));
  assert_finite(loss, "huber loss");
  return loss;
}

// Mean over rows of -sum(y * log p); probabilities are clipped to
// [1e-7, 1 - 1e-7]. `one_hot` must contain a single 1 per row.
template <typename T>
Tensor<T> categorical_ce(const Tensor<T>& probs, const Tensor<T>& one_hot) {
  if (probs.shape() != one_hot.shape() || probs.rank() != 2) {
    throw ShapeError("cross_entropy: probs " + shape_str(probs.shape()) + " vs one-hot " +
                     shape_str(one_hot.shape()));
  }
  const std::int64_t n = one_hot.dim(0), k = one_hot.dim(1);
  for (std::int64_t r = 0; r < n; ++r) {
    int ones = 0;
    for (std::int64_t c = 0; c < k; ++c) {
      const T v = one_hot.values()[static_cast<std::size_t>(r * k + c)];
      if (v == T(1)) {
        ++ones;
      } else if (v != T(0)) {
        throw Error("cross_entropy: row " + std::to_string(r) + " is not one-hot");
      }
    }
    if (ones != 1) throw Error("cross_entropy: row " + std::to_string(r) + " is not one-hot");
  }
  auto clipped = clip(probs, static_cast<T>(1e-7), static_cast<T>(1.0 - 1e-7));
  auto per_row = reduce_sum(mul(one_hot, log(clipped)), {1});
  auto loss = mul_scalar(mean_all(per_row), T(-1));
  assert_finite(loss, "cross-entropy loss");
  return loss;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

template <typename T>
class Optimizer {
 public:
  explicit Optimizer(std::vector<Tensor<T>> params, double lr) : params_(std::move(params)), lr_(lr) {
    if (lr <= 0.0) throw Error("optimizer: learning rate must be positive");
  }
  virtual ~Optimizer() = default;

  void step() {
    for (auto& p : params_) {
      if (!p.has_grad()) {
        throw Error("optimizer: step() called before backward populated every gradient");
      }
    }
    ++step_count_;
    apply();
  }
  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::int64_t step_count() const { return step_count_; }

  virtual const char* kind() const = 0;
  virtual OptimizerState state() const = 0;

 protected:
  virtual void apply() = 0;
  std::vector<Tensor<T>> params_;
  double lr_;
  std::int64_t step_count_ = 0;
};

template <typename T>
class Sgd final : public Optimizer<T> {
 public:
  using Optimizer<T>::Optimizer;
  const char* kind() const override { return "sgd"; }
  OptimizerState state() const override {
    return OptimizerState{"sgd", this->lr_, this->step_count_, {}};
  }

 protected:
  void apply() override {
    for (auto& p : this->params_) {
      auto& w = p.mutable_values();
      const auto& g = p.grad();
      const T lr = static_cast<T>(this->lr_);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
    }
  }
};

template <typename T>
class Adam final : public Optimizer<T> {
 public:
  Adam(std::vector<Tensor<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : Optimizer<T>(std::move(params), lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    init_slots();
  }
  const char* kind() const override { return "adam"; }
  OptimizerState state() const override {
    OptimizerState st{"adam", this->lr_, this->step_count_, {}};
    st.slots.emplace_back("m", to_float(m_));
    st.slots.emplace_back("v", to_float(v_));
    return st;
  }

 protected:
  void apply() override {
    const double t = static_cast<double>(this->step_count_);
    const double bc1 = 1.0 - std::pow(beta1_, t);
    const double bc2 = 1.0 - std::pow(beta2_, t);
    for (std::size_t pi = 0; pi < this->params_.size(); ++pi) {
      auto& w = this->params_[pi].mutable_values();
      const auto& g = this->params_[pi].grad();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * static_cast<double>(g[i]);
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * static_cast<double>(g[i]) * static_cast<double>(g[i]);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= static_cast<T>(this->lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  void init_slots() {
    for (const auto& p : this->params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }
  static std::vector<std::vector<float>> to_float(const std::vector<std::vector<double>>& src) {
    std::vector<std::vector<float>> out;
    out.reserve(src.size());
    for (const auto& v : src) out.emplace_back(v.begin(), v.end());
    return out;
  }
  double beta1_, beta2_, eps_;
  std::vector<std::vector<double>> m_, v_;
};

// Adamax: the infinity-norm variant, u_t = max(beta2 * u_{t-1}, |g|).
template <typename T>
class Adamax final : public Optimizer<T> {
 public:
  Adamax(std::vector<Tensor<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
      : Optimizer<T>(std::move(params), lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : this->params_) {
      m_.emplace_back(p.size(), 0.0);
      u_.emplace_back(p.size(), 0.0);
    }
  }
  const char* kind() const override { return "adamax"; }
  OptimizerState state() const override {
    OptimizerState st{"adamax", this->lr_, this->step_count_, {}};
    std::vector<std::vector<float>> mf, uf;
    for (const auto& v : m_) mf.emplace_back(v.begin(), v.end());
    for (const auto& v : u_) uf.emplace_back(v.begin(), v.end());
    st.slots.emplace_back("m", std::move(mf));
    st.slots.emplace_back("u", std::move(uf));
    return st;
  }

 protected:
  void apply() override {
    const double t = static_cast<double>(this->step_count_);
    const double bc1 = 1.0 - std::pow(beta1_, t);
    for (std::size_t pi = 0; pi < this->params_.size(); ++pi) {
      auto& w = this->params_[pi].mutable_values();
      const auto& g = this->params_[pi].grad();
      auto& m = m_[pi];
      auto& u = u_[pi];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * static_cast<double>(g[i]);
        u[i] = std::max(beta2_ * u[i], std::abs(static_cast<double>(g[i])));
        w[i] -= static_cast<T>(this->lr_ / bc1 * m[i] / (u[i] + eps_));
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  std::vector<std::vector<double>> m_, u_;
};

enum class OptimizerKind { Sgd, Adam, Adamax };
OptimizerKind optimizer_from_string(const std::string& s);
const char* optimizer_name(OptimizerKind k);

template <typename T>
std::unique_ptr<Optimizer<T>> make_optimizer(OptimizerKind kind, std::vector<Tensor<T>> params,
                                             double lr) {
  switch (kind) {
    case OptimizerKind::Sgd: return std::make_unique<Sgd<T>>(std::move(params), lr);
    case OptimizerKind::Adam: return std::make_unique<Adam<T>>(std::move(params), lr);
    case OptimizerKind::Adamax: return std::make_unique<Adamax<T>>(std::move(params), lr);
  }
  throw Error("make_optimizer: unreachable");
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

struct ReduceLrOnPlateau {
  double factor = 0.5;
  int patience = 3;
  double min_lr = 1e-5;

  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  // Returns the (possibly reduced) learning rate after seeing a validation
  // loss.
  double observe(double val_loss, double current_lr) {
    if (val_loss < best) {
      best = val_loss;
      bad_epochs = 0;
      return current_lr;
    }
    if (++bad_epochs >= patience) {
      bad_epochs = 0;
      return std::max(min_lr, current_lr * factor);
    }
    return current_lr;
  }
};

struct EarlyStopping {
  int patience = 10;

  double best = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int bad_epochs = 0;

  // Returns true once `patience` epochs pass without improvement.
  bool observe(double val_loss, int epoch) {
    if (val_loss < best) {
      best = val_loss;
      best_epoch = epoch;
      bad_epochs = 0;
      return false;
    }
    return ++bad_epochs >= patience;
  }
};

// ---------------------------------------------------------------------------
// Stage training
// ---------------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = std::numeric_limits<double>::quiet_NaN();  // NaN when not applicable
  std::vector<std::pair<std::string, double>> extras;
};

std::string epoch_log_json(const EpochLog& log);

struct StageResult {
  std::vector<EpochLog> history;
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

// Synthetic moment-imitation corpus: an equal mix of chirp, step, and
// uniform-noise signals.
struct FinCorpus {
  std::int64_t signal_len = 3000;
  double sample_rate_hz = 100.0;
  std::vector<std::vector<float>> train, val, test;
};
FinCorpus gen_fin_corpus(std::int64_t train_count, std::int64_t val_count, std::int64_t test_count,
                         std::int64_t len, std::uint64_t seed);
void save_fin_corpus(const FinCorpus& corpus, const std::filesystem::path& dir);
FinCorpus load_fin_corpus(const std::filesystem::path& dir);

struct FinStageConfig {
  models::ScaleSpec scale = models::ScaleSpec::paper();
  std::filesystem::path corpus_dir;
  std::filesystem::path out_dir;
  std::uint64_t seed = 7;
  int batch_size = 8;
  int epochs = 20;
  double lr = 1e-3;
  double huber_delta = 1.0;
  ReduceLrOnPlateau plateau;
};

struct FinEval {
  double mse_kurtosis = 0.0, mae_kurtosis = 0.0;
  double mse_skewness = 0.0, mae_skewness = 0.0;
};

StageResult train_fin_stage(const FinStageConfig& cfg);
FinEval evaluate_fin(const std::filesystem::path& ckpt_path, const FinCorpus& corpus,
                     const models::ScaleSpec& scale);

struct N1StageConfig {
  models::ScaleSpec scale = models::ScaleSpec::paper();
  std::filesystem::path train_manifest;            // binary n1 subset
  std::optional<std::filesystem::path> val_manifest;  // 5-class; binarized on load
  std::optional<std::filesystem::path> tfr_store;  // precomputed stacks for the subset
  std::filesystem::path out_dir;
  std::uint64_t seed = 7;
  int batch_size = 8;
  int epochs = 100;
  double lr = 1e-2;
  int tfr_threads = 4;
  ReduceLrOnPlateau plateau;
};

StageResult train_n1_stage(const N1StageConfig& cfg);

struct FullStageConfig {
  models::ScaleSpec scale = models::ScaleSpec::paper();
  std::filesystem::path train_manifest;  // 5-class training split
  std::filesystem::path val_manifest;
  std::optional<std::filesystem::path> tfr_store;  // stacks for the training manifest
  std::filesystem::path fin_checkpoint;
  std::filesystem::path n1_checkpoint;
  bool random_init = false;  // ablation: skip donor loading
  models::HeadKind head = models::HeadKind::Kan;
  augment::Method augment_method = augment::Method::None;
  int smote_k = 5;
  double adasyn_beta = 1.0;
  std::int64_t custom_target = 4000;
  std::filesystem::path out_dir;
  std::uint64_t seed = 7;
  int batch_size = 8;
  int epochs = 100;
  double lr = 1e-3;
  int tfr_threads = 4;
  ReduceLrOnPlateau plateau;
  EarlyStopping early_stop;
  bool use_early_stop = true;
  // Optional: stop as soon as validation accuracy reaches this threshold
  // (used by the convergence experiments; 0 disables).
  double stop_at_val_acc = 0.0;
};

StageResult train_full_stage(const FullStageConfig& cfg);

// Evaluation over a stored dataset.
struct FullEval {
  metrics::ConfusionMatrix cm;
  metrics::Summary summary;
  std::string report;
};
FullEval evaluate_full(const std::filesystem::path& ckpt_path, const data::Dataset& test,
                       const models::ScaleSpec& scale, int tfr_threads);
FullEval evaluate_n1(const std::filesystem::path& ckpt_path, const data::Dataset& test_binary,
                     const models::ScaleSpec& scale, int tfr_threads);

// Rebuilds a fused model from its checkpoint (topology string decides the
// head kind) and returns class probabilities for one epoch-length signal.
std::vector<double> predict_epoch(const std::filesystem::path& ckpt_path,
                                  const std::vector<float>& signal,
                                  const models::ScaleSpec& scale);

// Reusable single-epoch predictor with the preprocessing and model stages
// exposed separately, so latency can be decomposed.
class Predictor {
 public:
  Predictor(const std::filesystem::path& ckpt_path, const models::ScaleSpec& scale);

  struct Inputs {
    Tensor<float> signal;  // (1, L, 1)
    Tensor<float> tfr;     // (1, 6, F, W, 1)
  };
  Inputs preprocess(const std::vector<float>& signal) const;
  std::vector<double> forward(const Inputs& inputs) const;
  std::vector<double> predict(const std::vector<float>& signal) const;
  const models::ScaleSpec& scale() const { return scale_; }

 private:
  models::ScaleSpec scale_;
  std::shared_ptr<models::SleepNet<float>> model_;
};

// Shared batch-assembly helpers (exposed for tests and the CLI).
Tensor<float> make_signal_batch(const data::Dataset& ds, const std::vector<std::size_t>& idx);
Tensor<float> make_tfr_batch(data::TfrSource& source, const std::vector<std::size_t>& idx,
                             const models::ScaleSpec& scale);
Tensor<float> one_hot(const data::Dataset& ds, const std::vector<std::size_t>& idx, int k);
data::TfrParams tfr_params_for(const models::ScaleSpec& scale);
data::Dataset binarize_for_n1(const data::Dataset& five_class);

}  // namespace sleepnet::train
