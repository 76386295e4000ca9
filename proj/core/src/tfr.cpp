#include "sleepnet/tfr.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

namespace sleepnet::data {

std::vector<double> TfrParams::freq_axis_hz() const {
  const auto cfg = sst_config();
  const double f_hi = cfg.freq_hi_frac * sample_rate_hz;
  std::vector<double> axis(static_cast<std::size_t>(freq_bins));
  const double log_lo = std::log(cfg.freq_lo_hz);
  const double log_hi = std::log(f_hi);
  for (int b = 0; b < freq_bins; ++b) {
    const double t = freq_bins == 1 ? 0.0 : static_cast<double>(b) / (freq_bins - 1);
    axis[static_cast<std::size_t>(b)] = std::exp(log_lo + t * (log_hi - log_lo));
  }
  return axis;
}

std::vector<float> compute_tfr_stack(const std::vector<float>& signal, const TfrParams& p) {
  dsp::Signal s;
  s.sample_rate_hz = p.sample_rate_hz;
  s.samples.assign(signal.begin(), signal.end());
  auto windows = dsp::window_signal(s, p.window_len, p.windows);

  std::vector<float> stack(static_cast<std::size_t>(p.stack_size()));
  const std::int64_t per_window = static_cast<std::int64_t>(p.freq_bins) * p.window_len;
  auto cfg = p.sst_config();
  for (int w = 0; w < p.windows; ++w) {
    auto tfr = dsp::sst(windows[static_cast<std::size_t>(w)], cfg);
    float* dst = stack.data() + static_cast<std::int64_t>(w) * per_window;
    float max = 0.0f, min = std::numeric_limits<float>::max();
    for (float v : tfr.magnitudes) {
      max = std::max(max, v);
      min = std::min(min, v);
    }
    if (max > min) {
      const float inv = 1.0f / (max - min);
      for (std::int64_t i = 0; i < per_window; ++i) {
        dst[i] = (tfr.magnitudes[static_cast<std::size_t>(i)] - min) * inv;
      }
    } else {
      // Degenerate (all-zero) window: keep zeros rather than erroring.
      std::fill(dst, dst + per_window, 0.0f);
    }
  }
  return stack;
}

std::vector<float> compute_tfr_batch(const Dataset& ds, const TfrParams& p, int threads) {
  const auto n = static_cast<std::int64_t>(ds.records.size());
  std::vector<float> blob(static_cast<std::size_t>(n * p.stack_size()));
  const int workers = std::max(1, threads);
  std::vector<std::thread> pool;
  std::atomic<std::int64_t> next{0};
  auto work = [&]() {
    while (true) {
      const std::int64_t i = next.fetch_add(1);
      if (i >= n) return;
      auto stack = compute_tfr_stack(ds.records[static_cast<std::size_t>(i)].signal, p);
      std::copy(stack.begin(), stack.end(), blob.begin() + i * p.stack_size());
    }
  };
  if (workers == 1) {
    work();
  } else {
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return blob;
}

std::filesystem::path write_tfr_store(const std::filesystem::path& dir, const std::string& name,
                                      const TfrStoreMeta& meta, const std::vector<float>& blob) {
  if (static_cast<std::int64_t>(blob.size()) != meta.n_records * meta.params.stack_size()) {
    throw Error("tfr store: blob size does not match n_records * stack_size");
  }
  std::filesystem::create_directories(dir);
  write_f32_blob(dir / (name + ".f32"), blob);
  std::ostringstream os;
  os << "n_records " << meta.n_records << "\n";
  os << "windows " << meta.params.windows << "\n";
  os << "freq_bins " << meta.params.freq_bins << "\n";
  os << "window_len " << meta.params.window_len << "\n";
  os << "sample_rate_hz " << format_double(meta.params.sample_rate_hz) << "\n";
  os << "dtype f32le\n";
  os << "order record,window,freq,time\n";
  os << "blob " << name << ".f32\n";
  os << "digest " << digest_hex(fnv1a64(blob.data(), blob.size() * sizeof(float))) << "\n";
  os << "freq_hz";
  for (double f : meta.freq_axis_hz) os << " " << format_double(f);
  os << "\n";
  const auto path = dir / (name + ".tfr.txt");
  write_text_file(path, os.str());
  return path;
}

TfrReader::TfrReader(const std::filesystem::path& manifest_path) {
  std::istringstream in(read_text_file(manifest_path));
  std::string key, blob_name, digest;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    if (!(ls >> key)) continue;
    if (key == "n_records") ls >> meta_.n_records;
    else if (key == "windows") ls >> meta_.params.windows;
    else if (key == "freq_bins") ls >> meta_.params.freq_bins;
    else if (key == "window_len") ls >> meta_.params.window_len;
    else if (key == "sample_rate_hz") ls >> meta_.params.sample_rate_hz;
    else if (key == "blob") ls >> blob_name;
    else if (key == "digest") ls >> digest;
    else if (key == "freq_hz") {
      double f;
      while (ls >> f) meta_.freq_axis_hz.push_back(f);
    }
  }
  if (meta_.n_records <= 0 || blob_name.empty()) {
    throw IoError("tfr store: malformed manifest " + manifest_path.string());
  }
  blob_path_ = manifest_path.parent_path() / blob_name;
  const auto bytes = std::filesystem::file_size(blob_path_);
  const auto expected =
      static_cast<std::uintmax_t>(meta_.n_records * meta_.params.stack_size()) * sizeof(float);
  if (bytes != expected) {
    throw IoError("tfr store: blob " + blob_path_.string() + " has " + std::to_string(bytes) +
                  " bytes, manifest expects " + std::to_string(expected));
  }
}

void TfrReader::read(std::int64_t record, float* out) const {
  if (record < 0 || record >= meta_.n_records) {
    throw Error("tfr store: record " + std::to_string(record) + " out of range");
  }
  std::ifstream in(blob_path_, std::ios::binary);
  if (!in) throw IoError("tfr store: cannot open " + blob_path_.string());
  const std::int64_t stack = meta_.params.stack_size();
  in.seekg(record * stack * static_cast<std::int64_t>(sizeof(float)));
  in.read(reinterpret_cast<char*>(out), stack * static_cast<std::int64_t>(sizeof(float)));
  if (!in) throw IoError("tfr store: short read from " + blob_path_.string());
}

namespace {

class MemoryTfrSource final : public TfrSource {
 public:
  MemoryTfrSource(const Dataset& ds, const TfrParams& p, int threads)
      : params_(p), blob_(compute_tfr_batch(ds, p, threads)),
        count_(static_cast<std::int64_t>(ds.records.size())) {}

  std::int64_t count() const override { return count_; }
  const TfrParams& params() const override { return params_; }
  const float* stack(std::int64_t record) override {
    return blob_.data() + record * params_.stack_size();
  }

 private:
  TfrParams params_;
  std::vector<float> blob_;
  std::int64_t count_;
};

class FileTfrSource final : public TfrSource {
 public:
  explicit FileTfrSource(const std::filesystem::path& manifest) : reader_(manifest) {
    buffer_.resize(static_cast<std::size_t>(reader_.meta().params.stack_size()));
  }
  std::int64_t count() const override { return reader_.meta().n_records; }
  const TfrParams& params() const override { return reader_.meta().params; }
  const float* stack(std::int64_t record) override {
    reader_.read(record, buffer_.data());
    return buffer_.data();
  }

 private:
  TfrReader reader_;
  std::vector<float> buffer_;
};

}  // namespace

std::unique_ptr<TfrSource> make_memory_tfr_source(const Dataset& ds, const TfrParams& p,
                                                  int threads) {
  return std::make_unique<MemoryTfrSource>(ds, p, threads);
}

std::unique_ptr<TfrSource> make_file_tfr_source(const std::filesystem::path& manifest_path) {
  return std::make_unique<FileTfrSource>(manifest_path);
}

}  // namespace sleepnet::data
