#pragma once

// The three architectures: the moment-imitating network (conv stack + liquid
// time-constant layer), the N1 detector (time-distributed residual/SE/ASPP
// encoder over six TFR windows + BiLSTM), and the fused five-class model with
// a KAN (or ablation MLP) head. Donor trunks are shared by pointer, so tap
// outputs are bit-identical before and after fusion.

#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "sleepnet/layers.hpp"

namespace sleepnet::models {

using nn::ParamList;
using nn::ParamRef;

// Widths and input geometry for one build profile. "paper" matches the
// published architecture; "desk" divides widths by four and shrinks the
// input geometry so the full pipeline runs in minutes on a laptop.
struct ScaleSpec {
  std::string name = "paper";
  int div = 1;
  std::int64_t epoch_len = 3000;
  std::int64_t window_len = 512;
  int windows = 6;
  int freq_bins = 256;
  std::int64_t resize_h = 64;
  std::int64_t resize_w = 128;

  static ScaleSpec paper() { return {}; }
  static ScaleSpec desk() {
    ScaleSpec s;
    s.name = "desk";
    s.div = 4;
    s.epoch_len = 750;
    s.window_len = 128;
    s.freq_bins = 64;
    s.resize_h = 32;
    s.resize_w = 64;
    return s;
  }
  static ScaleSpec from_name(const std::string& n) {
    if (n == "paper") return paper();
    if (n == "desk") return desk();
    throw Error("unknown scale '" + n + "' (expected paper|desk)");
  }

  std::int64_t fin_filters(int block) const {
    static constexpr int base[5] = {16, 32, 64, 128, 256};
    return base[block] / div;
  }
  std::int64_t ltc_units() const { return 128 / div; }
  std::int64_t fin_fc1() const { return 64 / div; }
  std::int64_t fin_fc2() const { return 32 / div; }
  std::int64_t fin_head_hidden() const { return 16 / div; }
  std::int64_t stem_filters() const { return 16 / div; }
  std::int64_t res_filters(int block) const {
    static constexpr int base[3] = {32, 64, 128};
    return base[block] / div;
  }
  std::int64_t aspp_filters() const { return 256 / div; }
  std::int64_t lstm_units() const { return 64 / div; }
  std::int64_t n1_fc1() const { return 128 / div; }
  std::int64_t n1_fc2() const { return 32 / div; }
  std::int64_t kan1() const { return 64 / div; }
  std::int64_t kan2() const { return 32 / div; }
  static constexpr std::int64_t num_classes = 5;
};

namespace detail {
inline std::string shape_json(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}
}  // namespace detail

template <typename T>
std::string params_summary(const ParamList<T>& params) {
  std::ostringstream os;
  std::int64_t trainable = 0, buffers = 0;
  for (const auto& p : params) {
    os << "  " << p.name << "  " << shape_str(p.tensor.shape()) << "  " << p.tensor.size()
       << (p.trainable ? "" : "  [buffer]") << "\n";
    (p.trainable ? trainable : buffers) += p.tensor.size();
  }
  os << "trainable parameters: " << trainable << "\n";
  os << "non-trainable buffers: " << buffers << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Moment-imitation network
// ---------------------------------------------------------------------------

template <typename T>
class FinTrunk {
 public:
  FinTrunk(const ScaleSpec& scale, Rng& rng) : scale_(scale), ltc_(scale.fin_filters(4), scale.ltc_units(), rng) {
    std::int64_t in_ch = 1;
    for (int b = 0; b < 5; ++b) {
      convs_.push_back(std::make_unique<nn::Conv1d<T>>(in_ch, scale.fin_filters(b), 3, rng));
      bns_.push_back(std::make_unique<nn::BatchNorm<T>>(scale.fin_filters(b)));
      in_ch = scale.fin_filters(b);
    }
  }

  // x: (N, L, 1) with L >= 32 -> features (N, ltc_units)
  Tensor<T> forward(const Tensor<T>& x, bool training) {
    if (x.rank() != 3 || x.dim(2) != 1) {
      throw ShapeError("fin: expected input (N,L,1), got " + shape_str(x.shape()));
    }
    if (x.dim(1) < 32) {
      throw ShapeError("fin: input length " + std::to_string(x.dim(1)) +
                       " too short for 5 pooling stages (need >= 32)");
    }
    Tensor<T> h = x;
    for (int b = 0; b < 5; ++b) {
      h = maxpool1d(bns_[static_cast<std::size_t>(b)]->forward(
          relu(convs_[static_cast<std::size_t>(b)]->forward(h)), training));
    }
    return ltc_.forward(h);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (int b = 0; b < 5; ++b) {
      convs_[static_cast<std::size_t>(b)]->collect(prefix + ".conv" + std::to_string(b + 1), out);
      bns_[static_cast<std::size_t>(b)]->collect(prefix + ".bn" + std::to_string(b + 1), out);
    }
    ltc_.collect(prefix + ".ltc", out);
  }
  const ScaleSpec& scale() const { return scale_; }
  std::int64_t feature_width() const { return scale_.ltc_units(); }
  nn::LtcCell<T>& ltc() { return ltc_; }

 private:
  ScaleSpec scale_;
  std::vector<std::unique_ptr<nn::Conv1d<T>>> convs_;
  std::vector<std::unique_ptr<nn::BatchNorm<T>>> bns_;
  nn::LtcCell<T> ltc_;
};

template <typename T>
struct FinOutput {
  Tensor<T> kurtosis;  // (N,1)
  Tensor<T> skewness;  // (N,1)
  Tensor<T> features;  // (N, ltc_units) tap "fin_features"
};

template <typename T>
class FinHead {
 public:
  FinHead(std::int64_t in, const ScaleSpec& scale, Rng& rng)
      : fc1_(in, scale.fin_fc1(), rng),
        fc2_(scale.fin_fc1(), scale.fin_fc2(), rng),
        drop1_(0.2, rng.split(101)),
        drop2_(0.2, rng.split(102)),
        kurt_hidden_(scale.fin_fc2(), scale.fin_head_hidden(), rng),
        kurt_out_(scale.fin_head_hidden(), 1, rng),
        skew_hidden_(scale.fin_fc2(), scale.fin_head_hidden(), rng),
        skew_out_(scale.fin_head_hidden(), 1, rng),
        kurt_affine_(Shape{2}, {T(1), T(0)}),
        skew_affine_(Shape{2}, {T(1), T(0)}) {}

  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& features, bool training) {
    auto shared = drop2_.forward(relu(fc2_.forward(drop1_.forward(relu(fc1_.forward(features)), training))),
                                 training);
    auto kurt = calibrate(kurt_out_.forward(relu(kurt_hidden_.forward(shared))), kurt_affine_);
    auto skew = calibrate(skew_out_.forward(relu(skew_hidden_.forward(shared))), skew_affine_);
    return {kurt, skew};
  }

  // Output calibration (scale, shift). The heads are trained against
  // standardized targets; these buffers map the unit-scale outputs back to
  // raw moment values and travel with the checkpoint.
  void set_calibration(T kurt_scale, T kurt_shift, T skew_scale, T skew_shift) {
    kurt_affine_.mutable_values() = {kurt_scale, kurt_shift};
    skew_affine_.mutable_values() = {skew_scale, skew_shift};
  }
  std::pair<T, T> kurt_calibration() const {
    return {kurt_affine_.values()[0], kurt_affine_.values()[1]};
  }
  std::pair<T, T> skew_calibration() const {
    return {skew_affine_.values()[0], skew_affine_.values()[1]};
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    fc1_.collect(prefix + ".fc1", out);
    fc2_.collect(prefix + ".fc2", out);
    kurt_hidden_.collect(prefix + ".kurt_hidden", out);
    kurt_out_.collect(prefix + ".kurt_out", out);
    skew_hidden_.collect(prefix + ".skew_hidden", out);
    skew_out_.collect(prefix + ".skew_out", out);
    out.push_back({prefix + ".kurt_affine", kurt_affine_, false});
    out.push_back({prefix + ".skew_affine", skew_affine_, false});
  }

 private:
  static Tensor<T> calibrate(const Tensor<T>& raw, const Tensor<T>& affine) {
    const T scale = affine.values()[0];
    const T shift = affine.values()[1];
    return add_scalar(mul_scalar(raw, scale), shift);
  }

  nn::Dense<T> fc1_, fc2_;
  nn::Dropout<T> drop1_, drop2_;
  nn::Dense<T> kurt_hidden_, kurt_out_;
  nn::Dense<T> skew_hidden_, skew_out_;
  Tensor<T> kurt_affine_, skew_affine_;
};

template <typename T>
class FinModel {
 public:
  FinModel(const ScaleSpec& scale, std::int64_t input_len, std::uint64_t seed)
      : scale_(scale), input_len_(input_len) {
    if (input_len < 32) {
      throw Error("fin: nominal input length " + std::to_string(input_len) +
                  " too short for 5 pooling stages");
    }
    Rng rng(splitmix64(seed ^ 0xf15e5eedULL));
    trunk_ = std::make_shared<FinTrunk<T>>(scale, rng);
    head_ = std::make_unique<FinHead<T>>(trunk_->feature_width(), scale, rng);
  }

  FinOutput<T> forward(const Tensor<T>& x, bool training) {
    FinOutput<T> out;
    out.features = trunk_->forward(x, training);
    auto [kurt, skew] = head_->forward(out.features, training);
    out.kurtosis = kurt;
    out.skewness = skew;
    return out;
  }

  void collect(ParamList<T>& out) const {
    trunk_->collect("trunk", out);
    head_->collect("head", out);
  }
  ParamList<T> params() const {
    ParamList<T> out;
    collect(out);
    return out;
  }
  std::shared_ptr<FinTrunk<T>> trunk() { return trunk_; }
  FinHead<T>& head() { return *head_; }
  const ScaleSpec& scale() const { return scale_; }
  std::int64_t input_len() const { return input_len_; }

  std::string topology_json() const {
    std::ostringstream os;
    os << "{\"model\":\"fin\",\"scale\":\"" << scale_.name << "\",\"input\":\"signal[N,"
       << input_len_ << ",1]\",\"taps\":{\"fin_features\":" << trunk_->feature_width() << "}}";
    return os.str();
  }
  std::string summary() const {
    return "fin (" + scale_.name + ", input " + std::to_string(input_len_) + "x1)\n" +
           params_summary(params());
  }

 private:
  ScaleSpec scale_;
  std::int64_t input_len_;
  std::shared_ptr<FinTrunk<T>> trunk_;
  std::unique_ptr<FinHead<T>> head_;
};

// ---------------------------------------------------------------------------
// N1 detector
// ---------------------------------------------------------------------------

template <typename T>
class N1Trunk {
 public:
  N1Trunk(const ScaleSpec& scale, Rng& rng)
      : scale_(scale),
        stem_(1, scale.stem_filters(), rng),
        bilstm_(scale.aspp_filters(), scale.lstm_units(), rng) {
    std::int64_t in_ch = scale.stem_filters();
    std::int64_t h = scale.resize_h, w = scale.resize_w;
    for (int b = 0; b < 3; ++b) {
      res_.push_back(std::make_unique<nn::ResidualBlock<T>>(in_ch, scale.res_filters(b), 2, rng));
      in_ch = scale.res_filters(b);
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
    aspp_ = std::make_unique<nn::AsppBlock<T>>(in_ch, scale.aspp_filters(), h, w, rng);
  }

  // x: (N, 6, freq_bins, window_len, 1) -> features (N, 2*lstm_units)
  Tensor<T> forward(const Tensor<T>& x, bool training) {
    if (x.rank() != 5 || x.dim(1) != scale_.windows || x.dim(2) != scale_.freq_bins ||
        x.dim(3) != scale_.window_len || x.dim(4) != 1) {
      throw ShapeError("n1: expected TFR stack (N," + std::to_string(scale_.windows) + "," +
                       std::to_string(scale_.freq_bins) + "," + std::to_string(scale_.window_len) +
                       ",1), got " + shape_str(x.shape()));
    }
    const std::int64_t n = x.dim(0);
    auto windows = reshape(x, Shape{n * scale_.windows, scale_.freq_bins, scale_.window_len, 1});
    auto vec = encode_windows(windows, training);  // (N*6, aspp_filters)
    auto seq = reshape(vec, Shape{n, scale_.windows, scale_.aspp_filters()});
    return bilstm_.forward(seq);
  }

  // Shared per-window encoder: resize -> stem -> 3 residual/SE -> ASPP -> GAP.
  Tensor<T> encode_windows(const Tensor<T>& windows, bool training) {
    auto h = resize_bilinear(windows, scale_.resize_h, scale_.resize_w);
    h = stem_.forward(h, training);
    for (auto& r : res_) h = r->forward(h, training);
    h = aspp_->forward(h, training);
    return global_avg_pool2d(h);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    stem_.collect(prefix + ".stem", out);
    for (int b = 0; b < 3; ++b) {
      res_[static_cast<std::size_t>(b)]->collect(prefix + ".res" + std::to_string(b + 1), out);
    }
    aspp_->collect(prefix + ".aspp", out);
    bilstm_.collect(prefix + ".bilstm", out);
  }
  const ScaleSpec& scale() const { return scale_; }
  std::int64_t feature_width() const { return 2 * scale_.lstm_units(); }

 private:
  ScaleSpec scale_;
  nn::StemBlock<T> stem_;
  std::vector<std::unique_ptr<nn::ResidualBlock<T>>> res_;
  std::unique_ptr<nn::AsppBlock<T>> aspp_;
  nn::BiLstm<T> bilstm_;
};

template <typename T>
struct N1Output {
  Tensor<T> probs;     // (N,2), rows sum to 1
  Tensor<T> features;  // (N, 2*lstm_units) tap "n1_features"
};

template <typename T>
class N1Head {
 public:
  N1Head(std::int64_t in, const ScaleSpec& scale, Rng& rng)
      : fc1_(in, scale.n1_fc1(), rng),
        drop_(0.2, rng.split(201)),
        fc2_(scale.n1_fc1(), scale.n1_fc2(), rng),
        out_(scale.n1_fc2(), 2, rng) {}

  Tensor<T> forward(const Tensor<T>& features, bool training) {
    auto h = drop_.forward(relu(fc1_.forward(features)), training);
    return softmax_lastdim(out_.forward(fc2_.forward(h)));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    fc1_.collect(prefix + ".fc1", out);
    fc2_.collect(prefix + ".fc2", out);
    out_.collect(prefix + ".out", out);
  }

 private:
  nn::Dense<T> fc1_;
  nn::Dropout<T> drop_;
  nn::Dense<T> fc2_, out_;
};

template <typename T>
class N1Model {
 public:
  N1Model(const ScaleSpec& scale, std::uint64_t seed) : scale_(scale) {
    Rng rng(splitmix64(seed ^ 0x0071d37ec7054f1bULL));
    trunk_ = std::make_shared<N1Trunk<T>>(scale, rng);
    head_ = std::make_unique<N1Head<T>>(trunk_->feature_width(), scale, rng);
  }

  N1Output<T> forward(const Tensor<T>& tfr, bool training) {
    N1Output<T> out;
    out.features = trunk_->forward(tfr, training);
    out.probs = head_->forward(out.features, training);
    return out;
  }

  void collect(ParamList<T>& out) const {
    trunk_->collect("trunk", out);
    head_->collect("head", out);
  }
  ParamList<T> params() const {
    ParamList<T> out;
    collect(out);
    return out;
  }
  std::shared_ptr<N1Trunk<T>> trunk() { return trunk_; }
  const ScaleSpec& scale() const { return scale_; }

  std::string topology_json() const {
    std::ostringstream os;
    os << "{\"model\":\"n1\",\"scale\":\"" << scale_.name << "\",\"input\":\"tfr[N,"
       << scale_.windows << "," << scale_.freq_bins << "," << scale_.window_len
       << ",1]\",\"taps\":{\"n1_features\":" << trunk_->feature_width() << "}}";
    return os.str();
  }
  std::string summary() const {
    return "n1-detector (" + scale_.name + ")\n" + params_summary(params());
  }

 private:
  ScaleSpec scale_;
  std::shared_ptr<N1Trunk<T>> trunk_;
  std::unique_ptr<N1Head<T>> head_;
};

// ---------------------------------------------------------------------------
// Fused five-class model
// ---------------------------------------------------------------------------

enum class HeadKind { Kan, Mlp };

inline const char* head_kind_name(HeadKind k) { return k == HeadKind::Kan ? "kan" : "mlp"; }

template <typename T>
class SleepNet {
 public:
  SleepNet(std::shared_ptr<FinTrunk<T>> fin, std::shared_ptr<N1Trunk<T>> n1, HeadKind head,
           std::uint64_t seed)
      : fin_(std::move(fin)), n1_(std::move(n1)), head_kind_(head), seed_(seed) {
    if (fin_->scale().name != n1_->scale().name) {
      throw Error("fuse: scale mismatch between donors (" + fin_->scale().name + " vs " +
                  n1_->scale().name + ")");
    }
    scale_ = fin_->scale();
    Rng rng(splitmix64(seed ^ 0xf05ed0a11ULL));
    drop_ = std::make_unique<nn::Dropout<T>>(0.2, rng.split(301));
    const std::int64_t in = fin_->feature_width() + n1_->feature_width();
    if (head == HeadKind::Kan) {
      kan1_ = std::make_unique<nn::KanDense<T>>(in, scale_.kan1(), rng);
      kan2_ = std::make_unique<nn::KanDense<T>>(scale_.kan1(), scale_.kan2(), rng);
      kan3_ = std::make_unique<nn::KanDense<T>>(scale_.kan2(), ScaleSpec::num_classes, rng);
    } else {
      mlp1_ = std::make_unique<nn::Dense<T>>(in, scale_.kan1(), rng);
      mlp2_ = std::make_unique<nn::Dense<T>>(scale_.kan1(), scale_.kan2(), rng);
      mlp3_ = std::make_unique<nn::Dense<T>>(scale_.kan2(), ScaleSpec::num_classes, rng);
    }
  }

  // signal: (N,L,1), tfr: (N,6,F,W,1) -> probs (N,5)
  Tensor<T> forward(const Tensor<T>& signal, const Tensor<T>& tfr, bool training) {
    auto f1 = fin_->forward(signal, training);
    auto f2 = n1_->forward(tfr, training);
    auto z = drop_->forward(concat<T>({f1, f2}, 1), training);
    Tensor<T> logits;
    if (head_kind_ == HeadKind::Kan) {
      logits = kan3_->forward(kan2_->forward(kan1_->forward(z)));
    } else {
      logits = mlp3_->forward(relu(mlp2_->forward(relu(mlp1_->forward(z)))));
    }
    return softmax_lastdim(logits);
  }

  void collect(ParamList<T>& out) const {
    fin_->collect("fin_trunk", out);
    n1_->collect("n1_trunk", out);
    if (head_kind_ == HeadKind::Kan) {
      kan1_->collect("fusion.kan1", out);
      kan2_->collect("fusion.kan2", out);
      kan3_->collect("fusion.kan3", out);
    } else {
      mlp1_->collect("fusion.mlp1", out);
      mlp2_->collect("fusion.mlp2", out);
      mlp3_->collect("fusion.mlp3", out);
    }
  }
  ParamList<T> params() const {
    ParamList<T> out;
    collect(out);
    return out;
  }
  std::int64_t head_param_count() const {
    if (head_kind_ == HeadKind::Kan) {
      return kan1_->param_count() + kan2_->param_count() + kan3_->param_count();
    }
    return mlp1_->param_count() + mlp2_->param_count() + mlp3_->param_count();
  }

  std::shared_ptr<FinTrunk<T>> fin_trunk() { return fin_; }
  std::shared_ptr<N1Trunk<T>> n1_trunk() { return n1_; }
  HeadKind head_kind() const { return head_kind_; }
  const ScaleSpec& scale() const { return scale_; }

  std::string topology_json() const {
    std::ostringstream os;
    os << "{\"model\":\"sleepnet\",\"scale\":\"" << scale_.name << "\",\"head\":\""
       << head_kind_name(head_kind_) << "\",\"inputs\":[\"signal[N," << scale_.epoch_len
       << ",1]\",\"tfr[N," << scale_.windows << "," << scale_.freq_bins << ","
       << scale_.window_len << ",1]\"],\"classes\":5}";
    return os.str();
  }
  std::string summary() const {
    return "sleepnet (" + scale_.name + ", head " + head_kind_name(head_kind_) + ")\n" +
           params_summary(params());
  }

 private:
  ScaleSpec scale_;
  std::shared_ptr<FinTrunk<T>> fin_;
  std::shared_ptr<N1Trunk<T>> n1_;
  HeadKind head_kind_;
  std::uint64_t seed_;
  std::unique_ptr<nn::Dropout<T>> drop_;
  std::unique_ptr<nn::KanDense<T>> kan1_, kan2_, kan3_;
  std::unique_ptr<nn::Dense<T>> mlp1_, mlp2_, mlp3_;
};

// Builders mirroring the stage pipeline.

template <typename T>
std::shared_ptr<FinModel<T>> build_fin(std::int64_t input_len, const ScaleSpec& scale,
                                       std::uint64_t seed) {
  return std::make_shared<FinModel<T>>(scale, input_len, seed);
}

template <typename T>
std::shared_ptr<N1Model<T>> build_n1_detector(const ScaleSpec& scale, std::uint64_t seed) {
  return std::make_shared<N1Model<T>>(scale, seed);
}

// Strips both donors' fully connected heads (everything after the LTC tap and
// the BiLSTM tap) and attaches the fusion head. Donor trunk parameters remain
// trainable in the fused model.
template <typename T>
std::shared_ptr<SleepNet<T>> fuse_sleepnet(std::shared_ptr<FinModel<T>> fin,
                                           std::shared_ptr<N1Model<T>> n1, std::uint64_t seed,
                                           HeadKind head = HeadKind::Kan) {
  return std::make_shared<SleepNet<T>>(fin->trunk(), n1->trunk(), head, seed);
}

// Ablation: identical topology with dense-relu layers in place of the KAN
// stack. Shares the trunks; the head is freshly initialized.
template <typename T>
std::shared_ptr<SleepNet<T>> swap_head_mlp(SleepNet<T>& fused, std::uint64_t seed) {
  return std::make_shared<SleepNet<T>>(fused.fin_trunk(), fused.n1_trunk(), HeadKind::Mlp, seed);
}

}  // namespace sleepnet::models
