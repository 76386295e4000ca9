#include "sleepnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "sleepnet/dsp.hpp"

namespace sleepnet::data {

using nlohmann::json;

std::vector<std::int64_t> Dataset::class_counts() const {
  std::vector<std::int64_t> counts(class_names.size(), 0);
  for (const auto& r : records) counts[static_cast<std::size_t>(r.label)]++;
  return counts;
}

void Dataset::validate() const {
  for (const auto& r : records) {
    if (static_cast<std::int64_t>(r.signal.size()) != epoch_len) {
      throw Error("dataset: record " + r.subject_id + "/" + std::to_string(r.epoch_index) +
                  " has " + std::to_string(r.signal.size()) + " samples, expected " +
                  std::to_string(epoch_len));
    }
    if (r.label < 0 || r.label >= static_cast<int>(class_names.size())) {
      throw Error("dataset: record label " + std::to_string(r.label) + " out of range");
    }
  }
}

std::string dataset_digest(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& r : ds.records) {
    mix(r.signal.data(), r.signal.size() * sizeof(float));
    mix(&r.label, sizeof(r.label));
  }
  return digest_hex(h);
}

std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& dir,
                                   const std::string& name) {
  ds.validate();
  std::filesystem::create_directories(dir);
  std::vector<float> blob;
  blob.reserve(ds.records.size() * static_cast<std::size_t>(ds.epoch_len));
  for (const auto& r : ds.records) blob.insert(blob.end(), r.signal.begin(), r.signal.end());
  const auto blob_path = dir / (name + ".f32");
  write_f32_blob(blob_path, blob);

  json j;
  j["format_version"] = 1;
  j["sample_rate_hz"] = ds.sample_rate_hz;
  j["epoch_len"] = ds.epoch_len;
  j["class_names"] = ds.class_names;
  j["count"] = ds.records.size();
  json labels = json::array(), subjects = json::array(), indices = json::array();
  for (const auto& r : ds.records) {
    labels.push_back(r.label);
    subjects.push_back(r.subject_id);
    indices.push_back(r.epoch_index);
  }
  j["labels"] = std::move(labels);
  j["subject_ids"] = std::move(subjects);
  j["epoch_indices"] = std::move(indices);
  json counts = json::object();
  auto cc = ds.class_counts();
  for (std::size_t c = 0; c < cc.size(); ++c) counts[ds.class_names[c]] = cc[c];
  j["class_counts"] = std::move(counts);
  j["signal_blob"] = name + ".f32";
  j["signal_digest"] = digest_hex(fnv1a64(blob.data(), blob.size() * sizeof(float)));

  const auto manifest_path = dir / (name + ".json");
  write_text_file(manifest_path, j.dump(2) + "\n");
  return manifest_path;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  json j;
  try {
    j = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw IoError("manifest parse failure for " + manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  ds.sample_rate_hz = j.at("sample_rate_hz").get<double>();
  ds.epoch_len = j.at("epoch_len").get<std::int64_t>();
  ds.class_names = j.at("class_names").get<std::vector<std::string>>();
  const auto count = j.at("count").get<std::size_t>();
  const auto blob_path = manifest_path.parent_path() / j.at("signal_blob").get<std::string>();
  auto blob = read_f32_blob(blob_path);
  if (blob.size() != count * static_cast<std::size_t>(ds.epoch_len)) {
    throw IoError("signal blob " + blob_path.string() + " holds " + std::to_string(blob.size()) +
                  " samples, manifest expects " +
                  std::to_string(count * static_cast<std::size_t>(ds.epoch_len)));
  }
  const auto digest = digest_hex(fnv1a64(blob.data(), blob.size() * sizeof(float)));
  if (digest != j.at("signal_digest").get<std::string>()) {
    throw IoError("signal blob digest mismatch for " + blob_path.string() +
                  " (blob mutated after manifest was written)");
  }
  const auto labels = j.at("labels").get<std::vector<int>>();
  const auto subjects = j.at("subject_ids").get<std::vector<std::string>>();
  const auto indices = j.at("epoch_indices").get<std::vector<std::int64_t>>();
  if (labels.size() != count || subjects.size() != count || indices.size() != count) {
    throw IoError("manifest array lengths disagree with count in " + manifest_path.string());
  }
  ds.records.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto& r = ds.records[i];
    r.label = labels[i];
    r.subject_id = subjects[i];
    r.epoch_index = indices[i];
    r.signal.assign(blob.begin() + static_cast<std::ptrdiff_t>(i * ds.epoch_len),
                    blob.begin() + static_cast<std::ptrdiff_t>((i + 1) * ds.epoch_len));
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Ingest
// ---------------------------------------------------------------------------

int parse_stage_label(const std::string& token) {
  static const std::map<std::string, int> table = {
      {"W", 0},  {"w", 0},  {"0", 0}, {"N1", 1},  {"n1", 1},  {"1", 1},
      {"N2", 2}, {"n2", 2}, {"2", 2}, {"N3", 3},  {"n3", 3},  {"3", 3},
      {"N4", 3}, {"n4", 3}, {"4", 3}, {"REM", 4}, {"rem", 4}, {"R", 4},
      {"r", 4},  {"5", 4}};
  auto it = table.find(token);
  if (it == table.end()) throw Error("unknown sleep stage annotation '" + token + "'");
  return it->second;
}

namespace {

struct SubjectHeader {
  double sample_rate_hz = 0.0;
  std::int64_t num_samples = 0;
  std::string signal_file;
};

SubjectHeader parse_header(const std::filesystem::path& path) {
  SubjectHeader h;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "sample_rate_hz") {
      ls >> h.sample_rate_hz;
    } else if (key == "num_samples") {
      ls >> h.num_samples;
    } else if (key == "signal_file") {
      ls >> h.signal_file;
    } else {
      throw Error("unknown header key '" + key + "' in " + path.string());
    }
  }
  if (h.sample_rate_hz <= 0 || h.num_samples <= 0 || h.signal_file.empty()) {
    throw Error("incomplete header " + path.string() +
                " (need sample_rate_hz, num_samples, signal_file)");
  }
  return h;
}

}  // namespace

Dataset ingest(const std::filesystem::path& records_dir, double target_hz, IngestReport* report) {
  if (!std::filesystem::is_directory(records_dir)) {
    throw IoError("ingest: not a directory: " + records_dir.string());
  }
  std::vector<std::filesystem::path> headers;
  for (const auto& entry : std::filesystem::directory_iterator(records_dir)) {
    if (entry.path().extension() == ".hdr") headers.push_back(entry.path());
  }
  std::sort(headers.begin(), headers.end());
  if (headers.empty()) throw Error("ingest: no .hdr files under " + records_dir.string());

  Dataset ds;
  ds.sample_rate_hz = target_hz;
  ds.epoch_len = static_cast<std::int64_t>(std::llround(30.0 * target_hz));
  ds.class_names = stage_class_names();
  IngestReport local;

  for (const auto& hdr_path : headers) {
    const auto header = parse_header(hdr_path);
    const std::string subject = hdr_path.stem().string();
    auto raw = read_f32_blob(records_dir / header.signal_file);
    if (static_cast<std::int64_t>(raw.size()) != header.num_samples) {
      throw IoError("ingest: " + header.signal_file + " holds " + std::to_string(raw.size()) +
                    " samples but header declares " + std::to_string(header.num_samples) +
                    " (truncated blob?)");
    }

    dsp::Signal sig;
    sig.sample_rate_hz = header.sample_rate_hz;
    sig.samples.assign(raw.begin(), raw.end());
    if (std::abs(header.sample_rate_hz - target_hz) > 1e-9) {
      sig = dsp::resample(sig, target_hz);
    }

    const auto ann_path = hdr_path.parent_path() / (subject + ".ann");
    if (!std::filesystem::exists(ann_path)) {
      throw IoError("ingest: missing annotation file " + ann_path.string());
    }
    std::istringstream ann(read_text_file(ann_path));
    std::string line;
    std::int64_t kept = 0, dropped = 0;
    while (std::getline(ann, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      std::istringstream ls(line);
      std::int64_t epoch_index;
      std::string stage;
      if (!(ls >> epoch_index >> stage)) continue;
      const std::int64_t start = epoch_index * ds.epoch_len;
      if (start < 0 || start + ds.epoch_len > static_cast<std::int64_t>(sig.samples.size())) {
        ++dropped;
        continue;
      }
      EpochRecord rec;
      rec.label = parse_stage_label(stage);
      rec.subject_id = subject;
      rec.epoch_index = epoch_index;
      rec.signal.resize(static_cast<std::size_t>(ds.epoch_len));
      for (std::int64_t i = 0; i < ds.epoch_len; ++i) {
        rec.signal[static_cast<std::size_t>(i)] =
            static_cast<float>(sig.samples[static_cast<std::size_t>(start + i)]);
      }
      ds.records.push_back(std::move(rec));
      ++kept;
    }
    local.subjects++;
    local.epochs_kept += kept;
    local.epochs_dropped += dropped;
    if (dropped > 0) {
      local.notes.push_back(subject + ": dropped " + std::to_string(dropped) +
                            " epochs outside the recording");
    }
  }
  if (report) *report = local;
  ds.validate();
  return ds;
}

void write_ingest_stub(const std::filesystem::path& dir, int subjects, int epochs_per_subject,
                       std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  Rng rng(splitmix64(seed ^ 0x57ab57abULL));
  const double fs = 250.0;
  const auto epoch_samples = static_cast<std::int64_t>(30.0 * fs);
  for (int s = 0; s < subjects; ++s) {
    const std::string name = "subject" + std::to_string(s + 1);
    const std::int64_t total = epoch_samples * epochs_per_subject;
    std::vector<float> raw(static_cast<std::size_t>(total));
    for (auto& v : raw) v = static_cast<float>(rng.normal(0.0, 0.4));
    // A wandering tone keeps the stub from being pure noise.
    const double f0 = rng.uniform(0.8, 12.0);
    for (std::int64_t i = 0; i < total; ++i) {
      raw[static_cast<std::size_t>(i)] += static_cast<float>(
          std::sin(2.0 * 3.14159265358979323846 * f0 * static_cast<double>(i) / fs));
    }
    write_f32_blob(dir / (name + ".f32"), raw);
    std::ostringstream hdr;
    hdr << "sample_rate_hz " << fs << "\n"
        << "num_samples " << total << "\n"
        << "signal_file " << name << ".f32\n";
    write_text_file(dir / (name + ".hdr"), hdr.str());
    std::ostringstream ann;
    // Cycle through all six R&K stages (4 exercises the N4 -> N3 merge).
    static const char* stages[6] = {"W", "N1", "N2", "N3", "4", "REM"};
    for (int e = 0; e < epochs_per_subject; ++e) {
      ann << e << " " << stages[(e + s) % 6] << "\n";
    }
    write_text_file(dir / (name + ".ann"), ann.str());
  }
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

SplitResult split(const Dataset& ds, const std::array<double, 3>& ratios, std::uint64_t seed,
                  bool subject_level) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error("split: ratios must sum to 1, got " + format_double(total));
  }
  SplitResult out;
  for (Dataset* part : {&out.train, &out.val, &out.test}) {
    part->sample_rate_hz = ds.sample_rate_hz;
    part->epoch_len = ds.epoch_len;
    part->class_names = ds.class_names;
  }
  Rng rng(splitmix64(seed ^ 0x59117713ULL));

  if (subject_level) {
    std::map<std::string, std::vector<std::size_t>> by_subject;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      by_subject[ds.records[i].subject_id].push_back(i);
    }
    std::vector<std::string> subjects;
    for (const auto& [k, v] : by_subject) subjects.push_back(k);
    rng.shuffle(subjects);
    const double n = static_cast<double>(ds.records.size());
    std::array<double, 3> want{ratios[0] * n, ratios[1] * n, ratios[2] * n};
    std::array<double, 3> have{0, 0, 0};
    for (const auto& subj : subjects) {
      // Assign each subject to the split with the largest deficit.
      int best = 0;
      double best_deficit = -1e300;
      for (int p = 0; p < 3; ++p) {
        const double deficit = want[p] - have[p];
        if (deficit > best_deficit) {
          best_deficit = deficit;
          best = p;
        }
      }
      Dataset* part = best == 0 ? &out.train : best == 1 ? &out.val : &out.test;
      for (auto i : by_subject[subj]) part->records.push_back(ds.records[i]);
      have[static_cast<std::size_t>(best)] += static_cast<double>(by_subject[subj].size());
    }
  } else {
    // Stratified epoch-level split with largest-remainder allocation, so each
    // split's per-class count is within one record of the exact proportion.
    const int k = static_cast<int>(ds.class_names.size());
    for (int c = 0; c < k; ++c) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < ds.records.size(); ++i) {
        if (ds.records[i].label == c) idx.push_back(i);
      }
      rng.shuffle(idx);
      const auto n = static_cast<std::int64_t>(idx.size());
      std::array<std::int64_t, 3> take{};
      std::array<double, 3> frac{};
      std::int64_t assigned = 0;
      for (int p = 0; p < 3; ++p) {
        const double exact = ratios[static_cast<std::size_t>(p)] * static_cast<double>(n);
        take[static_cast<std::size_t>(p)] = static_cast<std::int64_t>(std::floor(exact));
        frac[static_cast<std::size_t>(p)] = exact - std::floor(exact);
        assigned += take[static_cast<std::size_t>(p)];
      }
      while (assigned < n) {
        int best = 0;
        for (int p = 1; p < 3; ++p) {
          if (frac[static_cast<std::size_t>(p)] > frac[static_cast<std::size_t>(best)]) best = p;
        }
        take[static_cast<std::size_t>(best)]++;
        frac[static_cast<std::size_t>(best)] = -1.0;
        ++assigned;
      }
      std::size_t cursor = 0;
      for (int p = 0; p < 3; ++p) {
        Dataset* part = p == 0 ? &out.train : p == 1 ? &out.val : &out.test;
        for (std::int64_t t = 0; t < take[static_cast<std::size_t>(p)]; ++t) {
          part->records.push_back(ds.records[idx[cursor++]]);
        }
      }
    }
  }

  for (int p = 0; p < 3; ++p) {
    const Dataset* part = p == 0 ? &out.train : p == 1 ? &out.val : &out.test;
    const char* names[3] = {"train", "val", "test"};
    auto counts = part->class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] == 0) {
        out.warnings.push_back(std::string("split: class ") + ds.class_names[c] + " is empty in " +
                               names[p]);
      }
    }
  }
  return out;
}

Dataset build_n1_subset(const Dataset& train, std::uint64_t seed,
                        std::vector<std::string>* warnings) {
  if (train.class_names != stage_class_names()) {
    throw Error("build_n1_subset: expected a five-stage dataset");
  }
  Dataset out;
  out.sample_rate_hz = train.sample_rate_hz;
  out.epoch_len = train.epoch_len;
  out.class_names = binary_class_names();

  std::vector<std::size_t> n1_idx;
  std::array<std::vector<std::size_t>, 5> by_class;
  for (std::size_t i = 0; i < train.records.size(); ++i) {
    by_class[static_cast<std::size_t>(train.records[i].label)].push_back(i);
    if (train.records[i].label == 1) n1_idx.push_back(i);
  }
  if (n1_idx.empty()) throw Error("build_n1_subset: no N1 records in the training split");
  const std::int64_t per_other =
      (static_cast<std::int64_t>(n1_idx.size()) + 3) / 4;  // ceil(n1 / 4)

  Rng rng(splitmix64(seed ^ 0xb1a5b1a5ULL));
  auto push = [&](std::size_t i, int label) {
    EpochRecord rec = train.records[i];
    rec.label = label;
    out.records.push_back(std::move(rec));
  };
  for (auto i : n1_idx) push(i, 1);
  for (int c : {0, 2, 3, 4}) {
    auto idx = by_class[static_cast<std::size_t>(c)];
    rng.shuffle(idx);
    auto want = static_cast<std::size_t>(per_other);
    if (idx.size() < want) {
      if (warnings) {
        warnings->push_back("build_n1_subset: class " + train.class_names[static_cast<std::size_t>(c)] +
                            " has only " + std::to_string(idx.size()) + " records (wanted " +
                            std::to_string(want) + "); taking all of them");
      }
      want = idx.size();
    }
    for (std::size_t t = 0; t < want; ++t) push(idx[t], 0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic labeled corpus
// ---------------------------------------------------------------------------

Dataset gen_labeled_synthetic(std::int64_t per_class, std::uint64_t seed, std::int64_t epoch_len,
                              double sample_rate_hz) {
  if (per_class < 4) throw Error("gen_labeled_synthetic: need at least 4 records per class");
  static const double kDominantHz[5] = {1.2, 2.5, 5.0, 9.0, 14.0};
  static const double kNoiseSkew[5] = {-0.9, -0.45, 0.0, 0.45, 0.9};

  Dataset ds;
  ds.sample_rate_hz = sample_rate_hz;
  ds.epoch_len = epoch_len;
  ds.class_names = stage_class_names();
  Rng master(splitmix64(seed ^ 0x5e1ec7edULL));

  for (int c = 0; c < 5; ++c) {
    Rng rng = master.split(static_cast<std::uint64_t>(c) + 1);
    for (std::int64_t i = 0; i < per_class; ++i) {
      EpochRecord rec;
      rec.label = c;
      rec.subject_id = "synthetic";
      rec.epoch_index = static_cast<std::int64_t>(c) * per_class + i;
      rec.signal.resize(static_cast<std::size_t>(epoch_len));

      const double amp = rng.uniform(0.8, 1.2);
      const double f = kDominantHz[c] * rng.uniform(0.96, 1.04);
      const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      const double phase2 = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      const double lambda = kNoiseSkew[c];
      const double wmix = std::sqrt(std::max(0.0, 1.0 - lambda * lambda));
      for (std::int64_t t = 0; t < epoch_len; ++t) {
        const double tt = static_cast<double>(t) / sample_rate_hz;
        const double tone = amp * std::sin(2.0 * 3.14159265358979323846 * f * tt + phase) +
                            0.4 * amp * std::sin(2.0 * 3.14159265358979323846 * 2.0 * f * tt + phase2);
        const double g = rng.normal();
        const double q = rng.normal();
        const double noise = wmix * g + lambda * (q * q - 1.0) / std::sqrt(2.0);
        rec.signal[static_cast<std::size_t>(t)] = static_cast<float>(tone + 0.35 * amp * noise);
      }
      ds.records.push_back(std::move(rec));
    }
  }
  return ds;
}

}  // namespace sleepnet::data
