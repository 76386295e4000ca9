#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sleepnet/dataset.hpp"

namespace sleepnet::augment {

enum class Method { None, Smote, Adasyn, Custom };

Method method_from_string(const std::string& s);
const char* method_name(Method m);

struct AugmentResult {
  data::Dataset dataset;
  std::vector<std::string> notes;
};

// SMOTE: every class is oversampled to the largest class count. Each
// synthetic record is x + u*(n - x) for a random class member x, one of its
// k nearest same-class neighbours n (Euclidean on the raw signal), and
// u ~ U(0,1).
AugmentResult smote(const data::Dataset& train, int k, std::uint64_t seed);

// ADASYN: synthesis is allocated per minority sample proportionally to the
// fraction of other-class points among its k nearest neighbours in the full
// training set; interpolation stays within the class. beta scales the total
// amount of synthesis toward the majority count.
AugmentResult adasyn(const data::Dataset& train, int k, double beta, std::uint64_t seed);

// Custom pipeline: repeat {pick a random class member, apply one of
// time-warp / random-quantize / drift / reverse} until every class holds
// `target_per_class` records.
AugmentResult custom_augment(const data::Dataset& train, std::int64_t target_per_class,
                             std::uint64_t seed);

AugmentResult apply(Method m, const data::Dataset& train, std::uint64_t seed, int k = 5,
                    double beta = 1.0, std::int64_t custom_target = 4000);

// Individual transforms (exposed for tests).
std::vector<float> time_warp(const std::vector<float>& x, Rng& rng, int knots = 4,
                             double max_stretch = 0.10);
std::vector<float> random_quantize(const std::vector<float>& x, Rng& rng, int min_levels = 10,
                                   int max_levels = 30);
std::vector<float> drift(const std::vector<float>& x, Rng& rng, int anchors = 20,
                         double max_fraction = 0.10);
std::vector<float> reverse(const std::vector<float>& x);

}  // namespace sleepnet::augment
