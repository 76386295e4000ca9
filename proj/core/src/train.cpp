#include "sleepnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sleepnet/dsp.hpp"

namespace sleepnet::train {

using data::Dataset;
using data::TfrSource;
using models::ScaleSpec;

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "adamax") return OptimizerKind::Adamax;
  throw Error("unknown optimizer '" + s + "' (expected sgd|adam|adamax)");
}

const char* optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::Adamax: return "adamax";
  }
  return "?";
}

std::string epoch_log_json(const EpochLog& log) {
  std::ostringstream os;
  os << "{\"epoch\":" << log.epoch << ",\"lr\":" << format_double(log.lr)
     << ",\"train_loss\":" << format_double(log.train_loss)
     << ",\"val_loss\":" << format_double(log.val_loss) << ",\"val_acc\":";
  if (std::isnan(log.val_acc)) {
    os << "null";
  } else {
    os << format_double(log.val_acc);
  }
  for (const auto& [key, value] : log.extras) {
    os << ",\"" << key << "\":" << format_double(value);
  }
  os << "}";
  return os.str();
}

data::TfrParams tfr_params_for(const ScaleSpec& scale) {
  data::TfrParams p;
  p.window_len = scale.window_len;
  p.windows = scale.windows;
  p.freq_bins = scale.freq_bins;
  p.sample_rate_hz = 100.0;
  return p;
}

namespace {

std::vector<float> safe_minmax(const std::vector<float>& v) {
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  std::vector<float> out(v.size(), 0.0f);
  if (*mx > *mn) {
    const float inv = 1.0f / (*mx - *mn);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *mn) * inv;
  }
  return out;
}

std::vector<Tensor<float>> trainable_tensors(const nn::ParamList<float>& params) {
  std::vector<Tensor<float>> out;
  for (const auto& p : params) {
    if (p.trainable) out.push_back(p.tensor);
  }
  return out;
}

std::vector<std::vector<float>> snapshot_params(const nn::ParamList<float>& params) {
  std::vector<std::vector<float>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor.values());
  return out;
}

void restore_params(const nn::ParamList<float>& params, const std::vector<std::vector<float>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const_cast<Tensor<float>&>(params[i].tensor).mutable_values() = snap[i];
  }
}

void write_metrics(const std::filesystem::path& path, const std::vector<EpochLog>& history) {
  std::ostringstream os;
  for (const auto& log : history) os << epoch_log_json(log) << "\n";
  write_text_file(path, os.str());
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  return idx;
}

// Combines a primary TFR source for original records with an in-memory
// source for appended synthetic records.
class ChainedTfrSource final : public TfrSource {
 public:
  ChainedTfrSource(std::unique_ptr<TfrSource> head, std::unique_ptr<TfrSource> tail)
      : head_(std::move(head)), tail_(std::move(tail)) {}
  std::int64_t count() const override { return head_->count() + (tail_ ? tail_->count() : 0); }
  const data::TfrParams& params() const override { return head_->params(); }
  const float* stack(std::int64_t record) override {
    if (record < head_->count()) return head_->stack(record);
    return tail_->stack(record - head_->count());
  }

 private:
  std::unique_ptr<TfrSource> head_, tail_;
};

std::string parse_topology_field(const std::string& topology_json, const std::string& key) {
  const auto j = nlohmann::json::parse(topology_json);
  return j.at(key).get<std::string>();
}

}  // namespace

Tensor<float> make_signal_batch(const Dataset& ds, const std::vector<std::size_t>& idx) {
  const auto b = static_cast<std::int64_t>(idx.size());
  const std::int64_t len = ds.epoch_len;
  Tensor<float> out(Shape{b, len, 1});
  auto& v = out.mutable_values();
  for (std::int64_t i = 0; i < b; ++i) {
    auto norm = safe_minmax(ds.records[idx[static_cast<std::size_t>(i)]].signal);
    std::copy(norm.begin(), norm.end(), v.begin() + i * len);
  }
  return out;
}

Tensor<float> make_tfr_batch(TfrSource& source, const std::vector<std::size_t>& idx,
                             const ScaleSpec& scale) {
  const auto b = static_cast<std::int64_t>(idx.size());
  const std::int64_t stack = source.params().stack_size();
  Tensor<float> out(Shape{b, scale.windows, scale.freq_bins, scale.window_len, 1});
  auto& v = out.mutable_values();
  for (std::int64_t i = 0; i < b; ++i) {
    const float* src = source.stack(static_cast<std::int64_t>(idx[static_cast<std::size_t>(i)]));
    std::copy(src, src + stack, v.begin() + i * stack);
  }
  return out;
}

Tensor<float> one_hot(const Dataset& ds, const std::vector<std::size_t>& idx, int k) {
  const auto b = static_cast<std::int64_t>(idx.size());
  Tensor<float> out(Shape{b, k});
  auto& v = out.mutable_values();
  for (std::int64_t i = 0; i < b; ++i) {
    v[static_cast<std::size_t>(i * k + ds.records[idx[static_cast<std::size_t>(i)]].label)] = 1.0f;
  }
  return out;
}

data::Dataset binarize_for_n1(const Dataset& five_class) {
  if (five_class.class_names != data::stage_class_names()) {
    throw Error("binarize_for_n1: expected a five-stage dataset");
  }
  Dataset out = five_class;
  out.class_names = data::binary_class_names();
  for (auto& r : out.records) r.label = r.label == 1 ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Moment-imitation corpus
// ---------------------------------------------------------------------------

FinCorpus gen_fin_corpus(std::int64_t train_count, std::int64_t val_count, std::int64_t test_count,
                         std::int64_t len, std::uint64_t seed) {
  if (len < 32) throw Error("gen_fin_corpus: signals must be at least 32 samples");
  FinCorpus corpus;
  corpus.signal_len = len;
  Rng master(splitmix64(seed ^ 0xf19c09e5ULL));
  auto fill = [&](std::vector<std::vector<float>>& dst, std::int64_t count, std::uint64_t tag) {
    Rng rng = master.split(tag);
    dst.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
      const auto kind = static_cast<dsp::SynthKind>(i % 3);
      auto sig = dsp::synth_signal(kind, len, rng.next_u64());
      std::vector<float> f(sig.samples.size());
      for (std::size_t s = 0; s < f.size(); ++s) f[s] = static_cast<float>(sig.samples[s]);
      dst.push_back(std::move(f));
    }
  };
  fill(corpus.train, train_count, 1);
  fill(corpus.val, val_count, 2);
  fill(corpus.test, test_count, 3);
  return corpus;
}

void save_fin_corpus(const FinCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["format_version"] = 1;
  j["signal_len"] = corpus.signal_len;
  j["sample_rate_hz"] = corpus.sample_rate_hz;
  auto dump = [&](const char* name, const std::vector<std::vector<float>>& part) {
    std::vector<float> blob;
    blob.reserve(part.size() * static_cast<std::size_t>(corpus.signal_len));
    for (const auto& s : part) blob.insert(blob.end(), s.begin(), s.end());
    write_f32_blob(dir / (std::string(name) + ".f32"), blob);
    j[std::string(name) + "_count"] = part.size();
    j[std::string(name) + "_digest"] = digest_hex(fnv1a64(blob.data(), blob.size() * sizeof(float)));
  };
  dump("train", corpus.train);
  dump("val", corpus.val);
  dump("test", corpus.test);
  write_text_file(dir / "fin_corpus.json", j.dump(2) + "\n");
}

FinCorpus load_fin_corpus(const std::filesystem::path& dir) {
  const auto manifest = dir / "fin_corpus.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("fin corpus manifest parse failure: " + std::string(e.what()));
  }
  FinCorpus corpus;
  corpus.signal_len = j.at("signal_len").get<std::int64_t>();
  corpus.sample_rate_hz = j.at("sample_rate_hz").get<double>();
  auto slurp = [&](const char* name, std::vector<std::vector<float>>& dst) {
    auto blob = read_f32_blob(dir / (std::string(name) + ".f32"));
    const auto expect = j.at(std::string(name) + "_digest").get<std::string>();
    if (digest_hex(fnv1a64(blob.data(), blob.size() * sizeof(float))) != expect) {
      throw IoError(std::string("fin corpus blob digest mismatch for ") + name);
    }
    const auto count = j.at(std::string(name) + "_count").get<std::size_t>();
    if (blob.size() != count * static_cast<std::size_t>(corpus.signal_len)) {
      throw IoError(std::string("fin corpus blob size mismatch for ") + name);
    }
    dst.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      dst[i].assign(blob.begin() + static_cast<std::ptrdiff_t>(i * corpus.signal_len),
                    blob.begin() + static_cast<std::ptrdiff_t>((i + 1) * corpus.signal_len));
    }
  };
  slurp("train", corpus.train);
  slurp("val", corpus.val);
  slurp("test", corpus.test);
  return corpus;
}

// ---------------------------------------------------------------------------
// Stage 1: moment imitation
// ---------------------------------------------------------------------------

namespace {

struct FinBatch {
  Tensor<float> x;        // (B, L, 1) min-max normalized
  Tensor<float> kurt;     // (B, 1)
  Tensor<float> skew;     // (B, 1)
};

struct FinData {
  std::vector<std::vector<float>> inputs;  // normalized
  std::vector<float> kurt, skew;
};

// Inputs are standardized per signal (the imitation targets are exactly the
// plain averages of z^3 and z^4 - 3 on standardized samples, which is the
// representation the network can learn most directly). Both moments are
// invariant under the affine map, so the targets are unchanged.
std::vector<float> standardize(const std::vector<float>& v) {
  double mean = 0.0;
  for (float x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (float x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  std::vector<float> out(v.size(), 0.0f);
  if (var > 0.0) {
    const double inv = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < v.size(); ++i) {
      out[i] = static_cast<float>((static_cast<double>(v[i]) - mean) * inv);
    }
  }
  return out;
}

FinData prepare_fin_data(const std::vector<std::vector<float>>& signals) {
  FinData out;
  out.inputs.reserve(signals.size());
  out.kurt.reserve(signals.size());
  out.skew.reserve(signals.size());
  for (const auto& s : signals) {
    std::vector<double> d(s.begin(), s.end());
    out.kurt.push_back(static_cast<float>(dsp::kurtosis(d)));
    out.skew.push_back(static_cast<float>(dsp::skewness(d)));
    out.inputs.push_back(standardize(s));
  }
  return out;
}

FinBatch make_fin_batch(const FinData& data, const std::vector<std::size_t>& idx,
                        std::int64_t len) {
  FinBatch b;
  const auto n = static_cast<std::int64_t>(idx.size());
  b.x = Tensor<float>(Shape{n, len, 1});
  b.kurt = Tensor<float>(Shape{n, 1});
  b.skew = Tensor<float>(Shape{n, 1});
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& src = data.inputs[idx[static_cast<std::size_t>(i)]];
    std::copy(src.begin(), src.end(), b.x.mutable_values().begin() + i * len);
    b.kurt.mutable_values()[static_cast<std::size_t>(i)] = data.kurt[idx[static_cast<std::size_t>(i)]];
    b.skew.mutable_values()[static_cast<std::size_t>(i)] = data.skew[idx[static_cast<std::size_t>(i)]];
  }
  return b;
}

}  // namespace

StageResult train_fin_stage(const FinStageConfig& cfg) {
  auto corpus = load_fin_corpus(cfg.corpus_dir);
  auto train_data = prepare_fin_data(corpus.train);
  auto val_data = prepare_fin_data(corpus.val);

  auto model = models::build_fin<float>(corpus.signal_len, cfg.scale, cfg.seed);
  auto params = model->params();
  Adam<float> opt(trainable_tensors(params), cfg.lr);
  auto plateau = cfg.plateau;

  Rng shuffle_rng(splitmix64(cfg.seed ^ 0x5471f1eULL));
  const auto delta = static_cast<float>(cfg.huber_delta);

  StageResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_snapshot;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = shuffled_indices(train_data.inputs.size(), shuffle_rng);
    double loss_sum = 0.0;
    std::int64_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                       order.size(), start + static_cast<std::size_t>(cfg.batch_size))));
      auto batch = make_fin_batch(train_data, idx, corpus.signal_len);
      opt.zero_grad();
      Tape<float> tape;
      auto out = model->forward(batch.x, true);
      auto loss = mul_scalar(add(huber_loss(out.kurtosis, batch.kurt, delta),
                                 huber_loss(out.skewness, batch.skew, delta)),
                             0.5f);
      tape.backward(loss);
      opt.step();
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
      seen += static_cast<std::int64_t>(idx.size());
    }

    // Validation pass (inference mode, no tape).
    double val_loss = 0.0, mae_k = 0.0, mae_s = 0.0;
    {
      std::vector<std::size_t> idx(val_data.inputs.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      const std::size_t chunk = 64;
      std::int64_t vseen = 0;
      for (std::size_t start = 0; start < idx.size(); start += chunk) {
        std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                      idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), start + chunk)));
        auto batch = make_fin_batch(val_data, part, corpus.signal_len);
        auto out = model->forward(batch.x, false);
        auto loss = mul_scalar(add(huber_loss(out.kurtosis, batch.kurt, delta),
                                   huber_loss(out.skewness, batch.skew, delta)),
                               0.5f);
        val_loss += static_cast<double>(loss.item()) * static_cast<double>(part.size());
        for (std::size_t i = 0; i < part.size(); ++i) {
          mae_k += std::abs(static_cast<double>(out.kurtosis.values()[i]) -
                            static_cast<double>(batch.kurt.values()[i]));
          mae_s += std::abs(static_cast<double>(out.skewness.values()[i]) -
                            static_cast<double>(batch.skew.values()[i]));
        }
        vseen += static_cast<std::int64_t>(part.size());
      }
      val_loss /= static_cast<double>(vseen);
      mae_k /= static_cast<double>(vseen);
      mae_s /= static_cast<double>(vseen);
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = opt.lr();
    log.train_loss = loss_sum / static_cast<double>(seen);
    log.val_loss = val_loss;
    log.extras = {{"val_mae_kurtosis", mae_k}, {"val_mae_skewness", mae_s}};
    result.history.push_back(log);

    if (val_loss < best_val) {
      best_val = val_loss;
      result.best_epoch = epoch;
      best_snapshot = snapshot_params(params);
    }
    opt.set_lr(plateau.observe(val_loss, opt.lr()));
  }

  if (!best_snapshot.empty()) restore_params(params, best_snapshot);
  result.best_val_loss = best_val;
  std::filesystem::create_directories(cfg.out_dir);
  result.checkpoint_path = cfg.out_dir / "fin.ckpt";
  auto opt_state = opt.state();
  save_checkpoint(result.checkpoint_path, model->topology_json(), params, &opt_state,
                  result.best_epoch, best_val);
  result.metrics_path = cfg.out_dir / "fin_metrics.jsonl";
  write_metrics(result.metrics_path, result.history);
  return result;
}

FinEval evaluate_fin(const std::filesystem::path& ckpt_path, const FinCorpus& corpus,
                     const ScaleSpec& scale) {
  auto model = models::build_fin<float>(corpus.signal_len, scale, 0);
  auto ckpt = load_checkpoint(ckpt_path);
  ckpt.apply_to(model->params());

  auto data = prepare_fin_data(corpus.test);
  FinEval eval;
  const std::size_t chunk = 64;
  std::size_t n = data.inputs.size();
  for (std::size_t start = 0; start < n; start += chunk) {
    std::vector<std::size_t> part;
    for (std::size_t i = start; i < std::min(n, start + chunk); ++i) part.push_back(i);
    auto batch = make_fin_batch(data, part, corpus.signal_len);
    auto out = model->forward(batch.x, false);
    for (std::size_t i = 0; i < part.size(); ++i) {
      const double dk = static_cast<double>(out.kurtosis.values()[i]) -
                        static_cast<double>(batch.kurt.values()[i]);
      const double ds = static_cast<double>(out.skewness.values()[i]) -
                        static_cast<double>(batch.skew.values()[i]);
      eval.mse_kurtosis += dk * dk;
      eval.mae_kurtosis += std::abs(dk);
      eval.mse_skewness += ds * ds;
      eval.mae_skewness += std::abs(ds);
    }
  }
  const auto dn = static_cast<double>(n);
  eval.mse_kurtosis /= dn;
  eval.mae_kurtosis /= dn;
  eval.mse_skewness /= dn;
  eval.mae_skewness /= dn;
  return eval;
}

// ---------------------------------------------------------------------------
// Stage 2: N1 detection
// ---------------------------------------------------------------------------

namespace {

struct EvalPassResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> preds;
};

template <typename ForwardFn>
EvalPassResult classification_eval(const Dataset& ds, int k, ForwardFn&& forward,
                                   std::size_t chunk = 32) {
  EvalPassResult res;
  std::int64_t correct = 0, seen = 0;
  for (std::size_t start = 0; start < ds.records.size(); start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(ds.records.size(), start + chunk); ++i) idx.push_back(i);
    auto probs = forward(idx);
    auto targets = one_hot(ds, idx, k);
    auto loss = categorical_ce(probs, targets);
    res.loss += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      int arg = 0;
      float best = probs.values()[i * static_cast<std::size_t>(k)];
      for (int c = 1; c < k; ++c) {
        const float v = probs.values()[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(c)];
        if (v > best) {
          best = v;
          arg = c;
        }
      }
      res.preds.push_back(arg);
      correct += arg == ds.records[idx[i]].label ? 1 : 0;
      ++seen;
    }
  }
  res.loss /= static_cast<double>(seen);
  res.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  return res;
}

}  // namespace

StageResult train_n1_stage(const N1StageConfig& cfg) {
  auto subset = data::load_dataset(cfg.train_manifest);
  if (subset.class_names != data::binary_class_names()) {
    throw Error("train-n1: " + cfg.train_manifest.string() +
                " is not a binary n1 subset manifest");
  }

  Dataset train_ds, val_ds;
  if (cfg.val_manifest) {
    train_ds = std::move(subset);
    val_ds = binarize_for_n1(data::load_dataset(*cfg.val_manifest));
  } else {
    // Hold out 10% of the subset for scheduler monitoring.
    auto split = data::split(subset, {0.9, 0.1, 0.0}, cfg.seed ^ 0x5a17);
    train_ds = std::move(split.train);
    val_ds = std::move(split.val);
  }

  const auto params_tfr = tfr_params_for(cfg.scale);
  std::unique_ptr<TfrSource> train_tfr;
  if (cfg.tfr_store) {
    train_tfr = data::make_file_tfr_source(*cfg.tfr_store);
    if (train_tfr->count() != static_cast<std::int64_t>(train_ds.records.size())) {
      throw Error("train-n1: TFR store holds " + std::to_string(train_tfr->count()) +
                  " records, training manifest has " + std::to_string(train_ds.records.size()));
    }
  } else {
    train_tfr = data::make_memory_tfr_source(train_ds, params_tfr, cfg.tfr_threads);
  }
  auto val_tfr = data::make_memory_tfr_source(val_ds, params_tfr, cfg.tfr_threads);

  auto model = models::build_n1_detector<float>(cfg.scale, cfg.seed);
  auto params = model->params();
  Sgd<float> opt(trainable_tensors(params), cfg.lr);
  auto plateau = cfg.plateau;

  Rng shuffle_rng(splitmix64(cfg.seed ^ 0x17a151ULL));

  StageResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_snapshot;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = shuffled_indices(train_ds.records.size(), shuffle_rng);
    double loss_sum = 0.0;
    std::int64_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                       order.size(), start + static_cast<std::size_t>(cfg.batch_size))));
      auto x = make_tfr_batch(*train_tfr, idx, cfg.scale);
      auto y = one_hot(train_ds, idx, 2);
      opt.zero_grad();
      Tape<float> tape;
      auto out = model->forward(x, true);
      auto loss = categorical_ce(out.probs, y);
      tape.backward(loss);
      opt.step();
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
      seen += static_cast<std::int64_t>(idx.size());
    }

    auto val = classification_eval(val_ds, 2, [&](const std::vector<std::size_t>& idx) {
      auto x = make_tfr_batch(*val_tfr, idx, cfg.scale);
      return model->forward(x, false).probs;
    });

    EpochLog log;
    log.epoch = epoch;
    log.lr = opt.lr();
    log.train_loss = loss_sum / static_cast<double>(seen);
    log.val_loss = val.loss;
    log.val_acc = val.accuracy;
    result.history.push_back(log);

    if (val.loss < best_val) {
      best_val = val.loss;
      result.best_epoch = epoch;
      best_snapshot = snapshot_params(params);
    }
    opt.set_lr(plateau.observe(val.loss, opt.lr()));
  }

  if (!best_snapshot.empty()) restore_params(params, best_snapshot);
  result.best_val_loss = best_val;
  std::filesystem::create_directories(cfg.out_dir);
  result.checkpoint_path = cfg.out_dir / "n1.ckpt";
  auto opt_state = opt.state();
  save_checkpoint(result.checkpoint_path, model->topology_json(), params, &opt_state,
                  result.best_epoch, best_val);
  result.metrics_path = cfg.out_dir / "n1_metrics.jsonl";
  write_metrics(result.metrics_path, result.history);
  return result;
}

// ---------------------------------------------------------------------------
// Stage 3: fused training
// ---------------------------------------------------------------------------

StageResult train_full_stage(const FullStageConfig& cfg) {
  auto train_raw = data::load_dataset(cfg.train_manifest);
  if (train_raw.class_names != data::stage_class_names()) {
    throw Error("train-full: " + cfg.train_manifest.string() + " is not a five-stage manifest");
  }
  auto val_ds = data::load_dataset(cfg.val_manifest);
  const auto n_orig = static_cast<std::int64_t>(train_raw.records.size());

  // Augmentation touches the training split only.
  auto aug = augment::apply(cfg.augment_method, train_raw, cfg.seed, cfg.smote_k, cfg.adasyn_beta,
                            cfg.custom_target);
  Dataset& train_ds = aug.dataset;

  const auto params_tfr = tfr_params_for(cfg.scale);
  std::unique_ptr<TfrSource> train_tfr;
  if (cfg.tfr_store) {
    auto head = data::make_file_tfr_source(*cfg.tfr_store);
    if (head->count() != n_orig) {
      throw Error("train-full: TFR store holds " + std::to_string(head->count()) +
                  " records, training manifest has " + std::to_string(n_orig));
    }
    std::unique_ptr<TfrSource> tail;
    if (static_cast<std::int64_t>(train_ds.records.size()) > n_orig) {
      Dataset synth;
      synth.sample_rate_hz = train_ds.sample_rate_hz;
      synth.epoch_len = train_ds.epoch_len;
      synth.class_names = train_ds.class_names;
      synth.records.assign(train_ds.records.begin() + n_orig, train_ds.records.end());
      tail = data::make_memory_tfr_source(synth, params_tfr, cfg.tfr_threads);
    }
    train_tfr = std::make_unique<ChainedTfrSource>(std::move(head), std::move(tail));
  } else {
    train_tfr = data::make_memory_tfr_source(train_ds, params_tfr, cfg.tfr_threads);
  }
  auto val_tfr = data::make_memory_tfr_source(val_ds, params_tfr, cfg.tfr_threads);

  // Donor models.
  auto fin = models::build_fin<float>(cfg.scale.epoch_len, cfg.scale, cfg.seed ^ 0x1);
  auto n1 = models::build_n1_detector<float>(cfg.scale, cfg.seed ^ 0x2);
  if (!cfg.random_init) {
    if (!std::filesystem::exists(cfg.fin_checkpoint) || !std::filesystem::exists(cfg.n1_checkpoint)) {
      throw Error("train-full: donor checkpoints missing (" + cfg.fin_checkpoint.string() + ", " +
                  cfg.n1_checkpoint.string() + "); pass --random-init to train from scratch");
    }
    auto fin_ckpt = load_checkpoint(cfg.fin_checkpoint);
    if (parse_topology_field(fin_ckpt.topology_json, "scale") != cfg.scale.name) {
      throw Error("train-full: fin checkpoint scale mismatch");
    }
    fin_ckpt.apply_to(fin->params());
    auto n1_ckpt = load_checkpoint(cfg.n1_checkpoint);
    if (parse_topology_field(n1_ckpt.topology_json, "scale") != cfg.scale.name) {
      throw Error("train-full: n1 checkpoint scale mismatch");
    }
    n1_ckpt.apply_to(n1->params());
  }
  auto model = models::fuse_sleepnet(fin, n1, cfg.seed, cfg.head);
  auto params = model->params();
  Adamax<float> opt(trainable_tensors(params), cfg.lr);
  auto plateau = cfg.plateau;
  auto stopper = cfg.early_stop;

  Rng shuffle_rng(splitmix64(cfg.seed ^ 0xf0117a11ULL));

  StageResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_snapshot;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = shuffled_indices(train_ds.records.size(), shuffle_rng);
    double loss_sum = 0.0;
    std::int64_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                       order.size(), start + static_cast<std::size_t>(cfg.batch_size))));
      auto xs = make_signal_batch(train_ds, idx);
      auto xt = make_tfr_batch(*train_tfr, idx, cfg.scale);
      auto y = one_hot(train_ds, idx, 5);
      opt.zero_grad();
      Tape<float> tape;
      auto probs = model->forward(xs, xt, true);
      auto loss = categorical_ce(probs, y);
      tape.backward(loss);
      opt.step();
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
      seen += static_cast<std::int64_t>(idx.size());
    }

    auto val = classification_eval(val_ds, 5, [&](const std::vector<std::size_t>& idx) {
      auto xs = make_signal_batch(val_ds, idx);
      auto xt = make_tfr_batch(*val_tfr, idx, cfg.scale);
      return model->forward(xs, xt, false);
    });

    EpochLog log;
    log.epoch = epoch;
    log.lr = opt.lr();
    log.train_loss = loss_sum / static_cast<double>(seen);
    log.val_loss = val.loss;
    log.val_acc = val.accuracy;
    result.history.push_back(log);

    if (val.loss < best_val) {
      best_val = val.loss;
      result.best_epoch = epoch;
      best_snapshot = snapshot_params(params);
    }
    opt.set_lr(plateau.observe(val.loss, opt.lr()));
    if (cfg.stop_at_val_acc > 0.0 && val.accuracy >= cfg.stop_at_val_acc) break;
    if (cfg.use_early_stop && stopper.observe(val.loss, epoch)) break;
  }

  if (!best_snapshot.empty()) restore_params(params, best_snapshot);
  result.best_val_loss = best_val;
  std::filesystem::create_directories(cfg.out_dir);
  const char* ckpt_name = cfg.head == models::HeadKind::Kan ? "full.ckpt" : "full_mlp.ckpt";
  result.checkpoint_path = cfg.out_dir / ckpt_name;
  auto opt_state = opt.state();
  save_checkpoint(result.checkpoint_path, model->topology_json(), params, &opt_state,
                  result.best_epoch, best_val);
  result.metrics_path = cfg.out_dir / (cfg.head == models::HeadKind::Kan ? "full_metrics.jsonl"
                                                                         : "full_mlp_metrics.jsonl");
  write_metrics(result.metrics_path, result.history);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation / prediction
// ---------------------------------------------------------------------------

namespace {

std::shared_ptr<models::SleepNet<float>> rebuild_sleepnet(const Checkpoint& ckpt,
                                                          const ScaleSpec& scale) {
  const auto head_name = parse_topology_field(ckpt.topology_json, "head");
  const auto head = head_name == "kan" ? models::HeadKind::Kan : models::HeadKind::Mlp;
  auto fin = models::build_fin<float>(scale.epoch_len, scale, 0);
  auto n1 = models::build_n1_detector<float>(scale, 0);
  auto model = models::fuse_sleepnet(fin, n1, 0, head);
  ckpt.apply_to(model->params());
  return model;
}

}  // namespace

FullEval evaluate_full(const std::filesystem::path& ckpt_path, const Dataset& test,
                       const ScaleSpec& scale, int tfr_threads) {
  auto ckpt = load_checkpoint(ckpt_path);
  if (parse_topology_field(ckpt.topology_json, "scale") != scale.name) {
    throw Error("evaluate: checkpoint scale does not match --scale");
  }
  auto model = rebuild_sleepnet(ckpt, scale);
  auto tfr = data::make_memory_tfr_source(test, tfr_params_for(scale), tfr_threads);
  auto pass = classification_eval(test, 5, [&](const std::vector<std::size_t>& idx) {
    auto xs = make_signal_batch(test, idx);
    auto xt = make_tfr_batch(*tfr, idx, scale);
    return model->forward(xs, xt, false);
  });
  std::vector<int> labels;
  for (const auto& r : test.records) labels.push_back(r.label);
  FullEval out{metrics::confusion(pass.preds, labels, 5), {}, {}};
  out.summary = metrics::summarize(out.cm);
  out.report = metrics::format_report(out.summary, test.class_names);
  return out;
}

FullEval evaluate_n1(const std::filesystem::path& ckpt_path, const Dataset& test_binary,
                     const ScaleSpec& scale, int tfr_threads) {
  auto ckpt = load_checkpoint(ckpt_path);
  auto model = models::build_n1_detector<float>(scale, 0);
  ckpt.apply_to(model->params());
  auto tfr = data::make_memory_tfr_source(test_binary, tfr_params_for(scale), tfr_threads);
  auto pass = classification_eval(test_binary, 2, [&](const std::vector<std::size_t>& idx) {
    auto xt = make_tfr_batch(*tfr, idx, scale);
    return model->forward(xt, false).probs;
  });
  std::vector<int> labels;
  for (const auto& r : test_binary.records) labels.push_back(r.label);
  FullEval out{metrics::confusion(pass.preds, labels, 2), {}, {}};
  out.summary = metrics::summarize(out.cm);
  out.report = metrics::format_report(out.summary, test_binary.class_names);
  return out;
}

Predictor::Predictor(const std::filesystem::path& ckpt_path, const ScaleSpec& scale)
    : scale_(scale) {
  auto ckpt = load_checkpoint(ckpt_path);
  if (parse_topology_field(ckpt.topology_json, "scale") != scale.name) {
    throw Error("predict: checkpoint scale does not match --scale");
  }
  model_ = rebuild_sleepnet(ckpt, scale);
}

Predictor::Inputs Predictor::preprocess(const std::vector<float>& signal) const {
  if (static_cast<std::int64_t>(signal.size()) != scale_.epoch_len) {
    throw Error("predict: expected " + std::to_string(scale_.epoch_len) + " samples, got " +
                std::to_string(signal.size()));
  }
  Inputs in;
  auto stack = data::compute_tfr_stack(signal, tfr_params_for(scale_));
  in.tfr = Tensor<float>(Shape{1, scale_.windows, scale_.freq_bins, scale_.window_len, 1},
                         std::move(stack));
  in.signal = Tensor<float>(Shape{1, scale_.epoch_len, 1}, safe_minmax(signal));
  return in;
}

std::vector<double> Predictor::forward(const Inputs& inputs) const {
  auto probs = model_->forward(inputs.signal, inputs.tfr, false);
  std::vector<double> out;
  for (float v : probs.values()) out.push_back(static_cast<double>(v));
  return out;
}

std::vector<double> Predictor::predict(const std::vector<float>& signal) const {
  return forward(preprocess(signal));
}

std::vector<double> predict_epoch(const std::filesystem::path& ckpt_path,
                                  const std::vector<float>& signal, const ScaleSpec& scale) {
  return Predictor(ckpt_path, scale).predict(signal);
}

}  // namespace sleepnet::train
