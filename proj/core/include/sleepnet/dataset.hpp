#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sleepnet/common.hpp"

namespace sleepnet::data {

// Label order is fixed as [W, N1, N2, N3, REM] = 0..4 so confusion matrices
// align across tools.
inline const std::vector<std::string>& stage_class_names() {
  static const std::vector<std::string> names{"W", "N1", "N2", "N3", "REM"};
  return names;
}
inline const std::vector<std::string>& binary_class_names() {
  static const std::vector<std::string> names{"not_n1", "n1"};
  return names;
}

struct EpochRecord {
  std::vector<float> signal;  // epoch_len samples at sample_rate_hz
  int label = 0;
  std::string subject_id;
  std::int64_t epoch_index = 0;
};

struct Dataset {
  double sample_rate_hz = 100.0;
  std::int64_t epoch_len = 3000;
  std::vector<std::string> class_names;
  std::vector<EpochRecord> records;

  std::vector<std::int64_t> class_counts() const;
  void validate() const;  // every record has epoch_len samples and a valid label
};

// Manifest + little-endian float32 blob, named <name>.json / <name>.f32.
// The manifest records a digest of the blob; load verifies it.
std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& dir,
                                   const std::string& name);
Dataset load_dataset(const std::filesystem::path& manifest_path);
std::string dataset_digest(const Dataset& ds);

// ---------------------------------------------------------------------------
// Ingestion of epoch-annotated raw records
// ---------------------------------------------------------------------------
//
// Input format, one subject per header file in the records directory:
//   <subject>.hdr   text lines:  sample_rate_hz <r>, num_samples <n>,
//                   signal_file <blob>  ('#' starts a comment)
//   <blob>          raw float32 little-endian samples
//   <subject>.ann   one "epoch_index stage" row per annotated 30 s epoch;
//                   stages: W|N1|N2|N3|N4|REM (or R, or numeric 0..5).
//                   N4 is merged into N3.

struct IngestReport {
  std::int64_t subjects = 0;
  std::int64_t epochs_kept = 0;
  std::int64_t epochs_dropped = 0;  // annotations past the end of the signal
  std::vector<std::string> notes;
};

Dataset ingest(const std::filesystem::path& records_dir, double target_hz, IngestReport* report);

// Parses one stage token; returns 0..4 after the N4 -> N3 merge.
int parse_stage_label(const std::string& token);

// Writes a synthetic 250 Hz raw-record stub (headers, blobs, annotations
// covering all six R&K stages) so the ingest path can be exercised without
// the source database.
void write_ingest_stub(const std::filesystem::path& dir, int subjects, int epochs_per_subject,
                       std::uint64_t seed);

// ---------------------------------------------------------------------------
// Splits and subsets
// ---------------------------------------------------------------------------

struct SplitResult {
  Dataset train, val, test;
  std::vector<std::string> warnings;
};

// Epoch-level stratified shuffle split (default), deterministic per seed.
// subject_level groups whole subjects instead (guards against subject
// leakage; proportions are then approximate).
SplitResult split(const Dataset& ds, const std::array<double, 3>& ratios, std::uint64_t seed,
                  bool subject_level = false);

// All N1 records plus ceil(n1/4) random records from each other class,
// binary-labeled {not_n1, n1}. Falls back proportionally (with a warning)
// when a class is too small.
Dataset build_n1_subset(const Dataset& train, std::uint64_t seed,
                        std::vector<std::string>* warnings = nullptr);

// ---------------------------------------------------------------------------
// Synthetic labeled corpus (desk-scale stand-in for real recordings)
// ---------------------------------------------------------------------------
//
// Five pseudo-stage classes, each a distinct mixture: dominant oscillation at
// {1.2, 2.5, 5, 9, 14} Hz plus class-specific noise skew. Separable by
// construction (a nearest-centroid classifier on magnitude spectra clears
// 95%).

Dataset gen_labeled_synthetic(std::int64_t per_class, std::uint64_t seed,
                              std::int64_t epoch_len = 3000, double sample_rate_hz = 100.0);

}  // namespace sleepnet::data
