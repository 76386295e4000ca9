#include "sleepnet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sleepnet::augment {

Method method_from_string(const std::string& s) {
  if (s == "none") return Method::None;
  if (s == "smote") return Method::Smote;
  if (s == "adasyn") return Method::Adasyn;
  if (s == "custom") return Method::Custom;
  throw Error("unknown augmentation method '" + s + "' (expected none|smote|adasyn|custom)");
}

const char* method_name(Method m) {
  switch (m) {
    case Method::None: return "none";
    case Method::Smote: return "smote";
    case Method::Adasyn: return "adasyn";
    case Method::Custom: return "custom";
  }
  return "?";
}

namespace {

double sq_distance(const std::vector<float>& a, const std::vector<float>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

// Indices of the k nearest rows of `pool` to `pool[self]`, self excluded.
std::vector<std::size_t> k_nearest(const std::vector<const std::vector<float>*>& pool,
                                   std::size_t self, int k) {
  std::vector<std::pair<double, std::size_t>> dists;
  dists.reserve(pool.size() - 1);
  for (std::size_t j = 0; j < pool.size(); ++j) {
    if (j == self) continue;
    dists.emplace_back(sq_distance(*pool[self], *pool[j]), j);
  }
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), dists.size());
  std::partial_sort(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(kk), dists.end());
  std::vector<std::size_t> out(kk);
  for (std::size_t i = 0; i < kk; ++i) out[i] = dists[i].second;
  return out;
}

std::vector<float> interpolate(const std::vector<float>& x, const std::vector<float>& n, double u) {
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(x[i]) +
                                u * (static_cast<double>(n[i]) - static_cast<double>(x[i])));
  }
  return out;
}

// Shape-preserving cubic through (xs, ys); harmonic-mean slopes keep the
// interpolant monotone when the data are monotone.
struct MonotoneCubic {
  std::vector<double> xs, ys, ms;

  MonotoneCubic(std::vector<double> x, std::vector<double> y) : xs(std::move(x)), ys(std::move(y)) {
    const std::size_t n = xs.size();
    std::vector<double> d(n - 1);
    for (std::size_t j = 0; j + 1 < n; ++j) d[j] = (ys[j + 1] - ys[j]) / (xs[j + 1] - xs[j]);
    ms.resize(n);
    ms[0] = d[0];
    ms[n - 1] = d[n - 2];
    for (std::size_t j = 1; j + 1 < n; ++j) {
      ms[j] = (d[j - 1] * d[j] <= 0.0) ? 0.0 : 2.0 * d[j - 1] * d[j] / (d[j - 1] + d[j]);
    }
  }

  double operator()(double x) const {
    const std::size_t n = xs.size();
    std::size_t j = 0;
    while (j + 2 < n && x > xs[j + 1]) ++j;
    const double h = xs[j + 1] - xs[j];
    const double t = (x - xs[j]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * ys[j] + (t3 - 2 * t2 + t) * h * ms[j] +
           (-2 * t3 + 3 * t2) * ys[j + 1] + (t3 - t2) * h * ms[j + 1];
  }
};

double linear_sample(const std::vector<float>& x, double pos) {
  const auto n = static_cast<std::int64_t>(x.size());
  if (pos <= 0.0) return x.front();
  if (pos >= static_cast<double>(n - 1)) return x.back();
  const auto i0 = static_cast<std::int64_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(i0);
  return (1.0 - frac) * static_cast<double>(x[static_cast<std::size_t>(i0)]) +
         frac * static_cast<double>(x[static_cast<std::size_t>(i0 + 1)]);
}

}  // namespace

std::vector<float> time_warp(const std::vector<float>& x, Rng& rng, int knots, double max_stretch) {
  const auto n = static_cast<std::int64_t>(x.size());
  std::vector<double> kx{0.0}, ky{0.0};
  const double seg = static_cast<double>(n - 1) / static_cast<double>(knots + 1);
  for (int j = 1; j <= knots; ++j) {
    const double base = seg * j;
    kx.push_back(base);
    ky.push_back(base + rng.uniform(-max_stretch, max_stretch) * seg);
  }
  kx.push_back(static_cast<double>(n - 1));
  ky.push_back(static_cast<double>(n - 1));
  MonotoneCubic warp(kx, ky);
  std::vector<float> out(x.size());
  for (std::int64_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = static_cast<float>(linear_sample(x, warp(static_cast<double>(i))));
  }
  return out;
}

std::vector<float> random_quantize(const std::vector<float>& x, Rng& rng, int min_levels,
                                   int max_levels) {
  const int levels =
      min_levels + static_cast<int>(rng.index(static_cast<std::uint64_t>(max_levels - min_levels + 1)));
  const auto [mn_it, mx_it] = std::minmax_element(x.begin(), x.end());
  const float mn = *mn_it, mx = *mx_it;
  if (!(mx > mn)) return x;
  std::vector<float> out(x.size());
  const float step = (mx - mn) / static_cast<float>(levels - 1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = mn + std::round((x[i] - mn) / step) * step;
  }
  return out;
}

std::vector<float> drift(const std::vector<float>& x, Rng& rng, int anchors, double max_fraction) {
  const auto n = static_cast<std::int64_t>(x.size());
  std::vector<double> ax(static_cast<std::size_t>(anchors)), ay(static_cast<std::size_t>(anchors));
  double walk = 0.0, peak = 0.0;
  for (int j = 0; j < anchors; ++j) {
    ax[static_cast<std::size_t>(j)] =
        static_cast<double>(n - 1) * static_cast<double>(j) / static_cast<double>(anchors - 1);
    walk += rng.normal();
    ay[static_cast<std::size_t>(j)] = walk;
    peak = std::max(peak, std::abs(walk));
  }
  const auto [mn_it, mx_it] = std::minmax_element(x.begin(), x.end());
  const double range = static_cast<double>(*mx_it) - static_cast<double>(*mn_it);
  const double gain = peak > 0.0 ? max_fraction * range / peak : 0.0;
  MonotoneCubic curve(ax, ay);
  std::vector<float> out(x.size());
  for (std::int64_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] =
        x[static_cast<std::size_t>(i)] + static_cast<float>(gain * curve(static_cast<double>(i)));
  }
  return out;
}

std::vector<float> reverse(const std::vector<float>& x) {
  return std::vector<float>(x.rbegin(), x.rend());
}

// ---------------------------------------------------------------------------

AugmentResult smote(const data::Dataset& train, int k, std::uint64_t seed) {
  if (k < 1) throw Error("smote: k must be >= 1");
  AugmentResult result;
  result.dataset = train;
  auto counts = train.class_counts();
  const std::int64_t max_count = *std::max_element(counts.begin(), counts.end());
  bool balanced = true;
  for (auto c : counts) balanced = balanced && c == max_count;
  if (balanced) {
    result.notes.push_back("smote: classes already balanced; dataset returned unchanged");
    return result;
  }

  Rng master(splitmix64(seed ^ 0x5307e000ULL));
  std::int64_t synth_id = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const std::int64_t need = max_count - counts[c];
    if (need == 0) continue;
    if (counts[c] < k + 1) {
      throw Error("smote: class " + train.class_names[c] + " has " + std::to_string(counts[c]) +
                  " records, need at least k+1 = " + std::to_string(k + 1));
    }
    std::vector<const std::vector<float>*> pool;
    for (const auto& r : train.records) {
      if (r.label == static_cast<int>(c)) pool.push_back(&r.signal);
    }
    // Neighbour lists are computed once per class member on demand.
    std::vector<std::vector<std::size_t>> knn(pool.size());
    Rng rng = master.split(c + 1);
    for (std::int64_t s = 0; s < need; ++s) {
      const auto xi = static_cast<std::size_t>(rng.index(pool.size()));
      if (knn[xi].empty()) knn[xi] = k_nearest(pool, xi, k);
      const auto& nbrs = knn[xi];
      const auto ni = nbrs[static_cast<std::size_t>(rng.index(nbrs.size()))];
      const double u = rng.uniform();
      data::EpochRecord rec;
      rec.label = static_cast<int>(c);
      rec.subject_id = "smote";
      rec.epoch_index = synth_id++;
      rec.signal = interpolate(*pool[xi], *pool[ni], u);
      result.dataset.records.push_back(std::move(rec));
    }
    result.notes.push_back("smote: class " + train.class_names[c] + " " +
                           std::to_string(counts[c]) + " -> " + std::to_string(max_count));
  }
  return result;
}

AugmentResult adasyn(const data::Dataset& train, int k, double beta, std::uint64_t seed) {
  if (k < 1) throw Error("adasyn: k must be >= 1");
  AugmentResult result;
  result.dataset = train;
  if (beta == 0.0) {
    result.notes.push_back("adasyn: beta = 0, no synthesis");
    return result;
  }
  auto counts = train.class_counts();
  const std::int64_t max_count = *std::max_element(counts.begin(), counts.end());

  std::vector<const std::vector<float>*> all;
  std::vector<int> all_labels;
  for (const auto& r : train.records) {
    all.push_back(&r.signal);
    all_labels.push_back(r.label);
  }

  Rng master(splitmix64(seed ^ 0xada5befaULL));
  std::int64_t synth_id = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const auto target = static_cast<std::int64_t>(
        std::llround(beta * static_cast<double>(max_count - counts[c])));
    if (target <= 0) continue;
    if (counts[c] < k + 1) {
      throw Error("adasyn: class " + train.class_names[c] + " has " + std::to_string(counts[c]) +
                  " records, need at least k+1 = " + std::to_string(k + 1));
    }
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (all_labels[i] == static_cast<int>(c)) members.push_back(i);
    }
    // Hardness ratio per member: other-class fraction among global neighbours.
    std::vector<double> r(members.size(), 0.0);
    double r_sum = 0.0;
    for (std::size_t m = 0; m < members.size(); ++m) {
      auto nbrs = k_nearest(all, members[m], k);
      int other = 0;
      for (auto j : nbrs) {
        if (all_labels[j] != static_cast<int>(c)) ++other;
      }
      r[m] = static_cast<double>(other) / static_cast<double>(nbrs.size());
      r_sum += r[m];
    }
    if (r_sum <= 0.0) {
      // Perfectly separated class: fall back to uniform allocation.
      result.notes.push_back("adasyn: class " + train.class_names[c] +
                             " is perfectly separated; falling back to uniform allocation");
      std::fill(r.begin(), r.end(), 1.0);
      r_sum = static_cast<double>(r.size());
    }

    std::vector<const std::vector<float>*> pool;
    pool.reserve(members.size());
    for (auto i : members) pool.push_back(all[i]);
    std::vector<std::vector<std::size_t>> knn(pool.size());
    Rng rng = master.split(c + 1);
    for (std::size_t m = 0; m < members.size(); ++m) {
      const auto gi = static_cast<std::int64_t>(
          std::llround(r[m] / r_sum * static_cast<double>(target)));
      if (gi <= 0) continue;
      if (knn[m].empty()) knn[m] = k_nearest(pool, m, k);
      for (std::int64_t s = 0; s < gi; ++s) {
        const auto ni = knn[m][static_cast<std::size_t>(rng.index(knn[m].size()))];
        const double u = rng.uniform();
        data::EpochRecord rec;
        rec.label = static_cast<int>(c);
        rec.subject_id = "adasyn";
        rec.epoch_index = synth_id++;
        rec.signal = interpolate(*pool[m], *pool[ni], u);
        result.dataset.records.push_back(std::move(rec));
      }
    }
    result.notes.push_back("adasyn: class " + train.class_names[c] + " " +
                           std::to_string(counts[c]) + " -> " +
                           std::to_string(counts[c] + target) + " (requested)");
  }
  return result;
}

AugmentResult custom_augment(const data::Dataset& train, std::int64_t target_per_class,
                             std::uint64_t seed) {
  AugmentResult result;
  result.dataset = train;
  auto counts = train.class_counts();
  for (auto c : counts) {
    if (c == 0) throw Error("custom_augment: empty class in the training split");
  }
  Rng master(splitmix64(seed ^ 0xc0577aa9ULL));
  std::int64_t synth_id = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    std::vector<const std::vector<float>*> pool;
    for (const auto& r : train.records) {
      if (r.label == static_cast<int>(c)) pool.push_back(&r.signal);
    }
    Rng rng = master.split(c + 1);
    for (std::int64_t have = counts[c]; have < target_per_class; ++have) {
      const auto& src = *pool[static_cast<std::size_t>(rng.index(pool.size()))];
      const auto pick = rng.index(4);
      data::EpochRecord rec;
      rec.label = static_cast<int>(c);
      rec.epoch_index = synth_id++;
      switch (pick) {
        case 0:
          rec.subject_id = "aug:time_warp";
          rec.signal = time_warp(src, rng);
          break;
        case 1:
          rec.subject_id = "aug:random_quantize";
          rec.signal = random_quantize(src, rng);
          break;
        case 2:
          rec.subject_id = "aug:drift";
          rec.signal = drift(src, rng);
          break;
        default:
          rec.subject_id = "aug:reverse";
          rec.signal = reverse(src);
          break;
      }
      result.dataset.records.push_back(std::move(rec));
    }
    result.notes.push_back("custom: class " + train.class_names[c] + " " +
                           std::to_string(counts[c]) + " -> " +
                           std::to_string(std::max(counts[c], target_per_class)));
  }
  return result;
}

AugmentResult apply(Method m, const data::Dataset& train, std::uint64_t seed, int k, double beta,
                    std::int64_t custom_target) {
  switch (m) {
    case Method::None: {
      AugmentResult r;
      r.dataset = train;
      r.notes.push_back("augmentation disabled");
      return r;
    }
    case Method::Smote:
      return smote(train, k, seed);
    case Method::Adasyn:
      return adasyn(train, k, beta, seed);
    case Method::Custom:
      return custom_augment(train, custom_target, seed);
  }
  throw Error("augment: unreachable method");
}

}  // namespace sleepnet::augment
