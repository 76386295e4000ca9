// Command-line front end for the sleep-stage pipeline: synthetic corpora,
// ingestion, splits, augmentation, TFR preparation, the three training
// stages, evaluation, prediction, gradient checks, and latency probes.
//
// Exit codes: 0 success, 1 user/data error, 2 internal error.

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>

#include "sleepnet/augment.hpp"
#include "sleepnet/dataset.hpp"
#include "sleepnet/gradcheck_battery.hpp"
#include "sleepnet/metrics.hpp"
#include "sleepnet/models.hpp"
#include "sleepnet/tfr.hpp"
#include "sleepnet/train.hpp"

namespace {

using nlohmann::json;
using namespace sleepnet;

// Values from --config act as defaults; explicit flags win.
struct ConfigOverlay {
  json values = json::object();

  void load(const std::string& path) {
    values = json::parse(read_text_file(path));
    if (!values.is_object()) throw Error("config file must hold a JSON object: " + path);
  }
  template <typename T>
  void fall(const CLI::Option* opt, T& v, const std::string& key) const {
    if (opt != nullptr && opt->count() == 0 && values.contains(key)) {
      v = values.at(key).get<T>();
    }
  }
};

void print_config(const std::string& cmd, const json& resolved, std::uint64_t seed) {
  json j = resolved;
  j["command"] = cmd;
  j["seed"] = seed;
  std::cout << "config " << j.dump() << "\n";
}

void print_history(const train::StageResult& result) {
  for (const auto& log : result.history) std::cout << train::epoch_log_json(log) << "\n";
  std::cout << "best_epoch " << result.best_epoch << " best_val_loss "
            << format_double(result.best_val_loss) << "\n";
  std::cout << "checkpoint " << result.checkpoint_path.string() << "\n";
  std::cout << "metrics " << result.metrics_path.string() << "\n";
}

train::ReduceLrOnPlateau plateau_from(double factor, int patience, double min_lr) {
  train::ReduceLrOnPlateau p;
  p.factor = factor;
  p.patience = patience;
  p.min_lr = min_lr;
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ECG sleep-stage classification pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; explicit flags override it")
      ->expected(1);
  ConfigOverlay overlay;

  int exit_code = 0;

  // ---- gen-synth ----------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("gen-synth", "Generate the synthetic moment-imitation corpus");
    auto count = std::make_shared<std::int64_t>(20000);
    auto val = std::make_shared<std::int64_t>(2000);
    auto test = std::make_shared<std::int64_t>(2000);
    auto len = std::make_shared<std::int64_t>(3000);
    auto seed = std::make_shared<std::uint64_t>(7);
    auto out = std::make_shared<std::string>();
    auto o1 = cmd->add_option("--count", *count, "training signals");
    auto o2 = cmd->add_option("--val", *val, "validation signals");
    auto o3 = cmd->add_option("--test", *test, "test signals");
    auto o4 = cmd->add_option("--len", *len, "samples per signal");
    auto o5 = cmd->add_option("--seed", *seed, "RNG seed");
    cmd->add_option("--out-dir", *out, "output directory")->required();
    cmd->callback([=, &overlay]() {
      overlay.fall(o1, *count, "count");
      overlay.fall(o2, *val, "val");
      overlay.fall(o3, *test, "test");
      overlay.fall(o4, *len, "len");
      overlay.fall(o5, *seed, "seed");
      print_config("gen-synth",
                   {{"count", *count}, {"val", *val}, {"test", *test}, {"len", *len},
                    {"out_dir", *out}},
                   *seed);
      auto corpus = train::gen_fin_corpus(*count, *val, *test, *len, *seed);
      train::save_fin_corpus(corpus, *out);
      std::cout << "wrote " << (*out) << " (" << corpus.train.size() << "/" << corpus.val.size()
                << "/" << corpus.test.size() << " signals of " << *len << ")\n";
    });
  }

  // ---- gen-synth-corpus ---------------------------------------------------
  {
    auto* cmd = app.add_subcommand("gen-synth-corpus",
                                   "Generate the separable five-class labeled corpus");
    auto per_class = std::make_shared<std::int64_t>(100);
    auto scale_name = std::make_shared<std::string>("desk");
    auto seed = std::make_shared<std::uint64_t>(7);
    auto out = std::make_shared<std::string>();
    auto o1 = cmd->add_option("--per-class", *per_class, "records per class");
    auto o2 = cmd->add_option("--scale", *scale_name, "paper|desk (sets epoch length)");
    auto o3 = cmd->add_option("--seed", *seed, "RNG seed");
    cmd->add_option("--out-dir", *out, "output directory")->required();
    cmd->callback([=, &overlay]() {
      overlay.fall(o1, *per_class, "per_class");
      overlay.fall(o2, *scale_name, "scale");
      overlay.fall(o3, *seed, "seed");
      auto scale = models::ScaleSpec::from_name(*scale_name);
      print_config("gen-synth-corpus",
                   {{"per_class", *per_class}, {"scale", *scale_name}, {"out_dir", *out}}, *seed);
      auto ds = data::gen_labeled_synthetic(*per_class, *seed, scale.epoch_len);
      auto manifest = data::save_dataset(ds, *out, "records");
      std::cout << "wrote " << manifest.string() << " (" << ds.records.size() << " records)\n";
    });
  }

  // ---- ingest -------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("ingest", "Ingest epoch-annotated raw records");
    auto records_dir = std::make_shared<std::string>();
    auto target_hz = std::make_shared<double>(100.0);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--records-dir", *records_dir, "directory of .hdr/.f32/.ann files")->required();
    auto o1 = cmd->add_option("--target-hz", *target_hz, "resampling target rate");
    cmd->add_option("--out-dir", *out, "output directory")->required();
    cmd->callback([=, &overlay]() {
      overlay.fall(o1, *target_hz, "target_hz");
      print_config("ingest",
                   {{"records_dir", *records_dir}, {"target_hz", *target_hz}, {"out_dir", *out}},
                   0);
      data::IngestReport report;
      auto ds = data::ingest(*records_dir, *target_hz, &report);
      auto manifest = data::save_dataset(ds, *out, "records");
      std::cout << "subjects " << report.subjects << " epochs_kept " << report.epochs_kept
                << " epochs_dropped " << report.epochs_dropped << "\n";
      for (const auto& note : report.notes) std::cout << "note " << note << "\n";
      json counts = json::object();
      auto cc = ds.class_counts();
      for (std::size_t c = 0; c < cc.size(); ++c) counts[ds.class_names[c]] = cc[c];
      std::cout << "class_counts " << counts.dump() << "\n";
      std::cout << "wrote " << manifest.string() << "\n";
    });
  }

  // ---- split --------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("split", "Stratified train/val/test split");
    auto dataset = std::make_shared<std::string>();
    auto train_frac = std::make_shared<double>(0.8);
    auto val_frac = std::make_shared<double>(0.1);
    auto test_frac = std::make_shared<double>(0.1);
    auto seed = std::make_shared<std::uint64_t>(7);
    auto subject_level = std::make_shared<bool>(false);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--dataset", *dataset, "records manifest")->required();
    auto o1 = cmd->add_option("--train-frac", *train_frac, "training fraction");
    auto o2 = cmd->add_option("--val-frac", *val_frac, "validation fraction");
    auto o3 = cmd->add_option("--test-frac", *test_frac, "test fraction");
    auto o4 = cmd->add_option("--seed", *seed, "RNG seed");
    cmd->add_flag("--subject-level", *subject_level, "split whole subjects instead of epochs");
    cmd->add_option("--out-dir", *out, "output directory")->required();
    cmd->callback([=, &overlay]() {
      overlay.fall(o1, *train_frac, "train_frac");
      overlay.fall(o2, *val_frac, "val_frac");
      overlay.fall(o3, *test_frac, "test_frac");
      overlay.fall(o4, *seed, "seed");
      print_config("split",
                   {{"dataset", *dataset}, {"train_frac", *train_frac}, {"val_frac", *val_frac},
                    {"test_frac", *test_frac}, {"subject_level", *subject_level}, {"out_dir", *out}},
                   *seed);
      auto ds = data::load_dataset(*dataset);
      auto parts = data::split(ds, {*train_frac, *val_frac, *test_frac}, *seed, *subject_level);
      for (const auto& warning : parts.warnings) std::cout << "warning " << warning << "\n";
      std::cout << "train " << data::save_dataset(parts.train, *out, "train").string() << " ("
                << parts.train.records.size() << ")\n";
      std::cout << "val " << data::save_dataset(parts.val, *out, "val").string() << " ("
                << parts.val.records.size() << ")\n";
      std::cout << "test " << data::save_dataset(parts.test, *out, "test").string() << " ("
                << parts.test.records.size() << ")\n";
    });
  }

  // ---- build-n1-subset ----------------------------------------------------
  {
    auto* cmd = app.add_subcommand("build-n1-subset", "Balanced binary N1 subset of a training split");
    auto train_manifest = std::make_shared<std::string>();
    auto seed = std::make_shared<std::uint64_t>(7);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--train", *train_manifest, "five-class training manifest")->required();
    auto o1 = cmd->add_option("--seed", *seed, "RNG seed");
    cmd->add_option("--out-dir", *out, "output directory")->required();
    cmd->callback([=, &overlay]() {
      overlay.fall(o1, *seed, "seed");
      print_config("build-n1-subset", {{"train", *train_manifest}, {"out_dir", *out}}, *seed);
      auto ds = data::load_dataset(*train_manifest);
      std::vector<std::string> warnings;
      auto subset = data::build_n1_subset(ds, *seed, &warnings);
      for (const auto& warning : warnings) std::cout << "warning " << warning << "\n";
      auto manifest = data::save_dataset(subset, *out, "n1_train");
      auto cc = subset.class_counts();
      std::cout << "wrote " << manifest.string() << " (not_n1 " << cc[0] << ", n1 " << cc[1]
                << ")\n";
    });
  }

  // ---- augment ------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("augment", "Oversample a training split (never in place)");
    auto train_manifest = std::make_shared<std::string>();
    auto method = std::make_shared<std::string>("smote");
    auto k = std::make_shared<int>(5);
    auto beta = std::make_shared<double>(1.0);
    auto target = std::make_shared<std::int64_t>(4000);
    auto seed = std::make_shared<std::uint64_t>(7);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--train", *train_manifest, "training manifest")->required();
    auto o1 = cmd->add_option("--method", *method, "smote|adasyn|custom|none");
    auto o2 = cmd->add_option("--k", *k, "neighbours for smote/adasyn");
    auto o3 = cmd->add_option("--beta", *beta, "adasyn synthesis scale");
    auto o4 = cmd->add_option("--target", *target, "custom per-class target");
    auto o5 = cmd->add_option("--seed", *seed, "RNG seed");
    cmd->add_option("--out-dir", *out, "output directory")->required();
    cmd->callback([=, &overlay]() {
      overlay.fall(o1, *method, "method");
      overlay.fall(o2, *k, "k");
      overlay.fall(o3, *beta, "beta");
      overlay.fall(o4, *target, "target");
      overlay.fall(o5, *seed, "seed");
      print_config("augment",
                   {{"train", *train_manifest}, {"method", *method}, {"k", *k}, {"beta", *beta},
                    {"target", *target}, {"out_dir", *out}},
                   *seed);
      auto ds = data::load_dataset(*train_manifest);
      auto result = augment::apply(augment::method_from_string(*method), ds, *seed, *k, *beta, *target);
      for (const auto& note : result.notes) std::cout << "note " << note << "\n";
      auto manifest = data::save_dataset(result.dataset, *out, "train_" + *method);
      json counts = json::object();
      auto cc = result.dataset.class_counts();
      for (std::size_t c = 0; c < cc.size(); ++c) counts[result.dataset.class_names[c]] = cc[c];
      std::cout << "class_counts " << counts.dump() << "\n";
      std::cout << "wrote " << manifest.string() << "\n";
    });
  }

  // ---- prep-tfr -----------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("prep-tfr", "Precompute TFR stacks for a manifest");
    auto dataset = std::make_shared<std::string>();
    auto scale_name = std::make_shared<std::string>("paper");
    auto threads = std::make_shared<int>(4);
    auto name = std::make_shared<std::string>("tfr");
    auto out = std::make_shared<std::string>();
    cmd->add_option("--dataset", *dataset, "records manifest")->required();
    auto o1 = cmd->add_option("--scale", *scale_name, "paper|desk");
    auto o2 = cmd->add_option("--threads", *threads, "worker threads");
    auto o3 = cmd->add_option("--name", *name, "store base name");
    cmd->add_option("--out-dir", *out, "output directory")->required();
    cmd->callback([=, &overlay]() {
      overlay.fall(o1, *scale_name, "scale");
      overlay.fall(o2, *threads, "threads");
      overlay.fall(o3, *name, "name");
      auto scale = models::ScaleSpec::from_name(*scale_name);
      print_config("prep-tfr",
                   {{"dataset", *dataset}, {"scale", *scale_name}, {"threads", *threads},
                    {"name", *name}, {"out_dir", *out}},
                   0);
      auto ds = data::load_dataset(*dataset);
      auto params = train::tfr_params_for(scale);
      auto blob = data::compute_tfr_batch(ds, params, *threads);
      data::TfrStoreMeta meta;
      meta.n_records = static_cast<std::int64_t>(ds.records.size());
      meta.params = params;
      meta.freq_axis_hz = params.freq_axis_hz();
      auto manifest = data::write_tfr_store(*out, *name, meta, blob);
      std::cout << "wrote " << manifest.string() << " (" << meta.n_records << " stacks of "
                << params.windows << "x" << params.freq_bins << "x" << params.window_len << ")\n";
    });
  }

  // ---- train-fin ----------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("train-fin", "Stage 1: moment-imitation pretraining");
    auto corpus = std::make_shared<std::string>();
    auto scale_name = std::make_shared<std::string>("paper");
    auto epochs = std::make_shared<int>(20);
    auto lr = std::make_shared<double>(1e-3);
    auto batch = std::make_shared<int>(8);
    auto seed = std::make_shared<std::uint64_t>(7);
    auto out = std::make_shared<std::string>();
    auto factor = std::make_shared<double>(0.5);
    auto patience = std::make_shared<int>(3);
    auto min_lr = std::make_shared<double>(1e-5);
    cmd->add_option("--corpus", *corpus, "gen-synth output directory")->required();
    auto o1 = cmd->add_option("--scale", *scale_name, "paper|desk");
    auto o2 = cmd->add_option("--epochs", *epochs, "training epochs");
    auto o3 = cmd->add_option("--lr", *lr, "Adam learning rate");
    auto o4 = cmd->add_option("--batch", *batch, "batch size");
    auto o5 = cmd->add_option("--seed", *seed, "RNG seed");
    auto o6 = cmd->add_option("--plateau-factor", *factor, "lr reduction factor");
    auto o7 = cmd->add_option("--plateau-patience", *patience, "epochs without improvement");
    auto o8 = cmd->add_option("--min-lr", *min_lr, "lr floor");
    cmd->add_option("--out-dir", *out, "output directory")->required();
    cmd->callback([=, &overlay]() {
      overlay.fall(o1, *scale_name, "scale");
      overlay.fall(o2, *epochs, "epochs");
      overlay.fall(o3, *lr, "lr");
      overlay.fall(o4, *batch, "batch");
      overlay.fall(o5, *seed, "seed");
      overlay.fall(o6, *factor, "plateau_factor");
      overlay.fall(o7, *patience, "plateau_patience");
      overlay.fall(o8, *min_lr, "min_lr");
      print_config("train-fin",
                   {{"corpus", *corpus}, {"scale", *scale_name}, {"epochs", *epochs}, {"lr", *lr},
                    {"batch", *batch}, {"out_dir", *out}},
                   *seed);
      train::FinStageConfig cfg;
      cfg.scale = models::ScaleSpec::from_name(*scale_name);
      cfg.corpus_dir = *corpus;
      cfg.out_dir = *out;
      cfg.seed = *seed;
      cfg.batch_size = *batch;
      cfg.epochs = *epochs;
      cfg.lr = *lr;
      cfg.plateau = plateau_from(*factor, *patience, *min_lr);
      auto model = models::build_fin<float>(train::load_fin_corpus(*corpus).signal_len, cfg.scale,
                                            cfg.seed);
      std::cout << model->summary();
      auto result = train::train_fin_stage(cfg);
      print_history(result);
    });
  }

  // ---- train-n1 -----------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("train-n1", "Stage 2: binary N1 detector");
    auto train_manifest = std::make_shared<std::string>();
    auto val_manifest = std::make_shared<std::string>();
    auto tfr = std::make_shared<std::string>();
    auto scale_name = std::make_shared<std::string>("paper");
    auto epochs = std::make_shared<int>(100);
    auto lr = std::make_shared<double>(1e-2);
    auto batch = std::make_shared<int>(8);
    auto seed = std::make_shared<std::uint64_t>(7);
    auto threads = std::make_shared<int>(4);
    auto out = std::make_shared<std::string>();
    auto factor = std::make_shared<double>(0.5);
    auto patience = std::make_shared<int>(3);
    auto min_lr = std::make_shared<double>(1e-5);
    cmd->add_option("--train", *train_manifest, "binary n1 subset manifest")->required();
    cmd->add_option("--val", *val_manifest, "optional five-class manifest for validation");
    cmd->add_option("--tfr", *tfr, "optional precomputed TFR store for --train");
    auto o1 = cmd->add_option("--scale", *scale_name, "paper|desk");
    auto o2 = cmd->add_option("--epochs", *epochs, "training epochs");
    auto o3 = cmd->add_option("--lr", *lr, "SGD learning rate");
    auto o4 = cmd->add_option("--batch", *batch, "batch size");
    auto o5 = cmd->add_option("--seed", *seed, "RNG seed");
    auto o6 = cmd->add_option("--threads", *threads, "TFR worker threads");
    auto o7 = cmd->add_option("--plateau-factor", *factor, "lr reduction factor");
    auto o8 = cmd->add_option("--plateau-patience", *patience, "epochs without improvement");
    auto o9 = cmd->add_option("--min-lr", *min_lr, "lr floor");
    cmd->add_option("--out-dir", *out, "output directory")->required();
    cmd->callback([=, &overlay]() {
      overlay.fall(o1, *scale_name, "scale");
      overlay.fall(o2, *epochs, "epochs");
      overlay.fall(o3, *lr, "lr");
      overlay.fall(o4, *batch, "batch");
      overlay.fall(o5, *seed, "seed");
      overlay.fall(o6, *threads, "threads");
      overlay.fall(o7, *factor, "plateau_factor");
      overlay.fall(o8, *patience, "plateau_patience");
      overlay.fall(o9, *min_lr, "min_lr");
      print_config("train-n1",
                   {{"train", *train_manifest}, {"val", *val_manifest}, {"tfr", *tfr},
                    {"scale", *scale_name}, {"epochs", *epochs}, {"lr", *lr}, {"batch", *batch},
                    {"out_dir", *out}},
                   *seed);
      train::N1StageConfig cfg;
      cfg.scale = models::ScaleSpec::from_name(*scale_name);
      cfg.train_manifest = *train_manifest;
      if (!val_manifest->empty()) cfg.val_manifest = *val_manifest;
      if (!tfr->empty()) cfg.tfr_store = *tfr;
      cfg.out_dir = *out;
      cfg.seed = *seed;
      cfg.batch_size = *batch;
      cfg.epochs = *epochs;
      cfg.lr = *lr;
      cfg.tfr_threads = *threads;
      cfg.plateau = plateau_from(*factor, *patience, *min_lr);
      auto model = models::build_n1_detector<float>(cfg.scale, cfg.seed);
      std::cout << model->summary();
      auto result = train::train_n1_stage(cfg);
      print_history(result);
    });
  }

  // ---- train-full ---------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("train-full", "Stage 3: fused five-class classifier");
    auto train_manifest = std::make_shared<std::string>();
    auto val_manifest = std::make_shared<std::string>();
    auto tfr = std::make_shared<std::string>();
    auto fin_ckpt = std::make_shared<std::string>();
    auto n1_ckpt = std::make_shared<std::string>();
    auto random_init = std::make_shared<bool>(false);
    auto head = std::make_shared<std::string>("kan");
    auto aug_method = std::make_shared<std::string>("none");
    auto k = std::make_shared<int>(5);
    auto beta = std::make_shared<double>(1.0);
    auto target = std::make_shared<std::int64_t>(4000);
    auto scale_name = std::make_shared<std::string>("paper");
    auto epochs = std::make_shared<int>(100);
    auto lr = std::make_shared<double>(1e-3);
    auto batch = std::make_shared<int>(8);
    auto seed = std::make_shared<std::uint64_t>(7);
    auto threads = std::make_shared<int>(4);
    auto out = std::make_shared<std::string>();
    auto factor = std::make_shared<double>(0.5);
    auto patience = std::make_shared<int>(3);
    auto min_lr = std::make_shared<double>(1e-5);
    auto stop_patience = std::make_shared<int>(10);
    auto no_early_stop = std::make_shared<bool>(false);
    cmd->add_option("--train", *train_manifest, "five-class training manifest")->required();
    cmd->add_option("--val", *val_manifest, "five-class validation manifest")->required();
    cmd->add_option("--tfr", *tfr, "optional precomputed TFR store for --train");
    cmd->add_option("--fin-ckpt", *fin_ckpt, "stage-1 checkpoint");
    cmd->add_option("--n1-ckpt", *n1_ckpt, "stage-2 checkpoint");
    cmd->add_flag("--random-init", *random_init, "skip donor initialization (ablation)");
    auto oh = cmd->add_option("--head", *head, "kan|mlp");
    auto oa = cmd->add_option("--augment", *aug_method, "none|smote|adasyn|custom");
    auto o2k = cmd->add_option("--k", *k, "neighbours for smote/adasyn");
    auto o2b = cmd->add_option("--beta", *beta, "adasyn synthesis scale");
    auto o2t = cmd->add_option("--target", *target, "custom per-class target");
    auto o1 = cmd->add_option("--scale", *scale_name, "paper|desk");
    auto o2 = cmd->add_option("--epochs", *epochs, "training epochs");
    auto o3 = cmd->add_option("--lr", *lr, "Adamax learning rate");
    auto o4 = cmd->add_option("--batch", *batch, "batch size");
    auto o5 = cmd->add_option("--seed", *seed, "RNG seed");
    auto o6 = cmd->add_option("--threads", *threads, "TFR worker threads");
    auto o7 = cmd->add_option("--plateau-factor", *factor, "lr reduction factor");
    auto o8 = cmd->add_option("--plateau-patience", *patience, "epochs without improvement");
    auto o9 = cmd->add_option("--min-lr", *min_lr, "lr floor");
    auto o10 = cmd->add_option("--early-stop-patience", *stop_patience, "early stop patience");
    cmd->add_flag("--no-early-stop", *no_early_stop, "disable early stopping");
    cmd->add_option("--out-dir", *out, "output directory")->required();
    cmd->callback([=, &overlay]() {
      overlay.fall(oh, *head, "head");
      overlay.fall(oa, *aug_method, "augment");
      overlay.fall(o2k, *k, "k");
      overlay.fall(o2b, *beta, "beta");
      overlay.fall(o2t, *target, "target");
      overlay.fall(o1, *scale_name, "scale");
      overlay.fall(o2, *epochs, "epochs");
      overlay.fall(o3, *lr, "lr");
      overlay.fall(o4, *batch, "batch");
      overlay.fall(o5, *seed, "seed");
      overlay.fall(o6, *threads, "threads");
      overlay.fall(o7, *factor, "plateau_factor");
      overlay.fall(o8, *patience, "plateau_patience");
      overlay.fall(o9, *min_lr, "min_lr");
      overlay.fall(o10, *stop_patience, "early_stop_patience");
      print_config("train-full",
                   {{"train", *train_manifest}, {"val", *val_manifest}, {"tfr", *tfr},
                    {"fin_ckpt", *fin_ckpt}, {"n1_ckpt", *n1_ckpt}, {"random_init", *random_init},
                    {"head", *head}, {"augment", *aug_method}, {"scale", *scale_name},
                    {"epochs", *epochs}, {"lr", *lr}, {"batch", *batch},
                    {"early_stop", !*no_early_stop}, {"out_dir", *out}},
                   *seed);
      train::FullStageConfig cfg;
      cfg.scale = models::ScaleSpec::from_name(*scale_name);
      cfg.train_manifest = *train_manifest;
      cfg.val_manifest = *val_manifest;
      if (!tfr->empty()) cfg.tfr_store = *tfr;
      cfg.fin_checkpoint = *fin_ckpt;
      cfg.n1_checkpoint = *n1_ckpt;
      cfg.random_init = *random_init;
      cfg.head = *head == "mlp" ? models::HeadKind::Mlp : models::HeadKind::Kan;
      if (*head != "kan" && *head != "mlp") throw Error("--head must be kan or mlp");
      cfg.augment_method = augment::method_from_string(*aug_method);
      cfg.smote_k = *k;
      cfg.adasyn_beta = *beta;
      cfg.custom_target = *target;
      cfg.out_dir = *out;
      cfg.seed = *seed;
      cfg.batch_size = *batch;
      cfg.epochs = *epochs;
      cfg.lr = *lr;
      cfg.tfr_threads = *threads;
      cfg.plateau = plateau_from(*factor, *patience, *min_lr);
      cfg.early_stop.patience = *stop_patience;
      cfg.use_early_stop = !*no_early_stop;
      auto result = train::train_full_stage(cfg);
      print_history(result);
    });
  }

  // ---- evaluate -----------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("evaluate", "Evaluate a stage checkpoint");
    auto stage = std::make_shared<std::string>();
    auto ckpt = std::make_shared<std::string>();
    auto data_path = std::make_shared<std::string>();
    auto scale_name = std::make_shared<std::string>("paper");
    auto threads = std::make_shared<int>(4);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--stage", *stage, "fin|n1|full")->required();
    cmd->add_option("--ckpt", *ckpt, "checkpoint path")->required();
    cmd->add_option("--data", *data_path, "fin: corpus dir; n1/full: dataset manifest")->required();
    auto o1 = cmd->add_option("--scale", *scale_name, "paper|desk");
    auto o2 = cmd->add_option("--threads", *threads, "TFR worker threads");
    cmd->add_option("--out-dir", *out, "optional directory for report.txt/confusion.csv");
    cmd->callback([=, &overlay]() {
      overlay.fall(o1, *scale_name, "scale");
      overlay.fall(o2, *threads, "threads");
      auto scale = models::ScaleSpec::from_name(*scale_name);
      print_config("evaluate",
                   {{"stage", *stage}, {"ckpt", *ckpt}, {"data", *data_path},
                    {"scale", *scale_name}, {"out_dir", *out}},
                   0);
      if (*stage == "fin") {
        auto corpus = train::load_fin_corpus(*data_path);
        auto eval = train::evaluate_fin(*ckpt, corpus, scale);
        std::cout << "kurtosis mse " << format_double(eval.mse_kurtosis) << " mae "
                  << format_double(eval.mae_kurtosis) << "\n";
        std::cout << "skewness mse " << format_double(eval.mse_skewness) << " mae "
                  << format_double(eval.mae_skewness) << "\n";
        return;
      }
      auto ds = data::load_dataset(*data_path);
      train::FullEval eval;
      if (*stage == "n1") {
        auto binary = ds.class_names == data::binary_class_names() ? ds
                                                                   : train::binarize_for_n1(ds);
        eval = train::evaluate_n1(*ckpt, binary, scale, *threads);
        std::cout << eval.report;
      } else if (*stage == "full") {
        eval = train::evaluate_full(*ckpt, ds, scale, *threads);
        std::cout << eval.report;
      } else {
        throw Error("--stage must be fin, n1, or full");
      }
      const auto& names = *stage == "n1" ? data::binary_class_names() : data::stage_class_names();
      if (!out->empty()) {
        std::filesystem::create_directories(*out);
        write_text_file(std::filesystem::path(*out) / (*stage + "_report.txt"), eval.report);
        write_text_file(std::filesystem::path(*out) / (*stage + "_confusion.csv"),
                        metrics::confusion_csv(eval.cm, names));
        std::cout << "wrote " << (std::filesystem::path(*out) / (*stage + "_confusion.csv")).string()
                  << "\n";
      }
    });
  }

  // ---- predict ------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("predict", "Classify one 30-second epoch blob");
    auto ckpt = std::make_shared<std::string>();
    auto input = std::make_shared<std::string>();
    auto scale_name = std::make_shared<std::string>("paper");
    cmd->add_option("--ckpt", *ckpt, "fused checkpoint")->required();
    cmd->add_option("--input", *input, "float32 little-endian epoch blob")->required();
    auto o1 = cmd->add_option("--scale", *scale_name, "paper|desk");
    cmd->callback([=, &overlay]() {
      overlay.fall(o1, *scale_name, "scale");
      auto scale = models::ScaleSpec::from_name(*scale_name);
      print_config("predict", {{"ckpt", *ckpt}, {"input", *input}, {"scale", *scale_name}}, 0);
      auto signal = read_f32_blob(*input);
      auto probs = train::predict_epoch(*ckpt, signal, scale);
      const auto& names = data::stage_class_names();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < probs.size(); ++c) {
        std::cout << names[c] << " " << format_double(probs[c]) << "\n";
        if (probs[c] > probs[arg]) arg = c;
      }
      std::cout << "label " << names[arg] << "\n";
    });
  }

  // ---- grad-check ---------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("grad-check", "Finite-difference gradient battery (64-bit)");
    auto tol = std::make_shared<double>(1e-4);
    auto o1 = cmd->add_option("--tol", *tol, "relative-error tolerance");
    cmd->callback([=, &overlay, &exit_code]() {
      overlay.fall(o1, *tol, "tol");
      print_config("grad-check", {{"tol", *tol}}, 0);
      bool all_ok = true;
      for (const auto& item : run_grad_check_battery()) {
        const double tolerance = std::min(*tol, item.tol);
        const bool ok = item.max_rel_err <= tolerance;
        all_ok = all_ok && ok;
        std::cout << item.name << " max_rel_err " << format_double(item.max_rel_err) << " tol "
                  << format_double(tolerance) << (ok ? " PASS" : " FAIL") << "\n";
      }
      std::cout << (all_ok ? "grad-check PASS" : "grad-check FAIL") << "\n";
      if (!all_ok) exit_code = 1;
    });
  }

  // ---- bench-latency ------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("bench-latency", "Per-epoch end-to-end latency probe");
    auto ckpt = std::make_shared<std::string>();
    auto input = std::make_shared<std::string>();
    auto scale_name = std::make_shared<std::string>("paper");
    auto reps = std::make_shared<int>(100);
    auto seed = std::make_shared<std::uint64_t>(7);
    cmd->add_option("--ckpt", *ckpt, "fused checkpoint")->required();
    cmd->add_option("--input", *input, "optional epoch blob (default: synthetic)");
    auto o1 = cmd->add_option("--scale", *scale_name, "paper|desk");
    auto o2 = cmd->add_option("--reps", *reps, "repetitions");
    auto o3 = cmd->add_option("--seed", *seed, "seed for the synthetic probe epoch");
    cmd->callback([=, &overlay]() {
      overlay.fall(o1, *scale_name, "scale");
      overlay.fall(o2, *reps, "reps");
      overlay.fall(o3, *seed, "seed");
      auto scale = models::ScaleSpec::from_name(*scale_name);
      print_config("bench-latency",
                   {{"ckpt", *ckpt}, {"input", *input}, {"scale", *scale_name}, {"reps", *reps}},
                   *seed);
      std::vector<float> signal;
      if (input->empty()) {
        auto sig = dsp::synth_signal(dsp::SynthKind::Chirp, scale.epoch_len, *seed);
        signal.assign(sig.samples.begin(), sig.samples.end());
      } else {
        signal = read_f32_blob(*input);
      }
      train::Predictor predictor(*ckpt, scale);
      auto e2e = metrics::latency_probe([&]() { predictor.predict(signal); }, *reps);
      auto pre = metrics::latency_probe([&]() { predictor.preprocess(signal); }, *reps);
      auto inputs = predictor.preprocess(signal);
      auto model_only = metrics::latency_probe([&]() { predictor.forward(inputs); }, *reps);
      std::cout << "end_to_end median_ms " << format_double(e2e.median_ms) << " p95_ms "
                << format_double(e2e.p95_ms) << "\n";
      std::cout << "preprocess median_ms " << format_double(pre.median_ms) << "\n";
      std::cout << "model median_ms " << format_double(model_only.median_ms) << "\n";
    });
  }

  try {
    // Callbacks run inside parse(), so the config overlay must be loaded
    // first; scan argv for --config directly.
    for (int i = 1; i < argc; ++i) {
      const std::string arg = argv[i];
      if (arg == "--config" && i + 1 < argc) {
        overlay.load(argv[i + 1]);
      } else if (arg.rfind("--config=", 0) == 0) {
        overlay.load(arg.substr(9));
      }
    }
    app.parse(argc, argv);
    return exit_code;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
