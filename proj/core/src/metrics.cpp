#include "sleepnet/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace sleepnet::metrics {

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t t = 0;
  for (int p = 0; p < k; ++p) t += at(truth, p);
  return t;
}

std::int64_t ConfusionMatrix::col_sum(int pred) const {
  std::int64_t t = 0;
  for (int r = 0; r < k; ++r) t += at(r, pred);
  return t;
}

std::vector<double> ConfusionMatrix::row_percent() const {
  std::vector<double> out(counts.size(), 0.0);
  for (int r = 0; r < k; ++r) {
    const auto rs = row_sum(r);
    if (rs == 0) continue;
    for (int p = 0; p < k; ++p) {
      out[static_cast<std::size_t>(r * k + p)] =
          100.0 * static_cast<double>(at(r, p)) / static_cast<double>(rs);
    }
  }
  return out;
}

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels, int k) {
  if (preds.size() != labels.size()) {
    throw Error("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                std::to_string(labels.size()) + " labels");
  }
  if (k <= 0) throw Error("confusion: k must be positive");
  ConfusionMatrix cm;
  cm.k = k;
  cm.counts.assign(static_cast<std::size_t>(k) * static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k || preds[i] < 0 || preds[i] >= k) {
      throw Error("confusion: label/prediction out of range at row " + std::to_string(i));
    }
    cm.at(labels[i], preds[i])++;
  }
  return cm;
}

Summary summarize(const ConfusionMatrix& cm) {
  if (cm.k == 0 || cm.total() == 0) throw Error("summarize: empty confusion matrix");
  Summary s;
  const auto total = static_cast<double>(cm.total());

  std::int64_t diag = 0;
  for (int c = 0; c < cm.k; ++c) diag += cm.at(c, c);
  s.accuracy = static_cast<double>(diag) / total;

  double pe = 0.0;
  for (int c = 0; c < cm.k; ++c) {
    pe += (static_cast<double>(cm.row_sum(c)) / total) *
          (static_cast<double>(cm.col_sum(c)) / total);
  }
  s.kappa = pe >= 1.0 ? 1.0 : (s.accuracy - pe) / (1.0 - pe);

  double recall_sum = 0.0;
  int recall_n = 0;
  double macro_p = 0.0, macro_r = 0.0, macro_f = 0.0;
  int np = 0, nr = 0, nf = 0;
  double wp = 0.0, wr = 0.0, wf = 0.0;
  std::int64_t wp_support = 0, wr_support = 0, wf_support = 0;
  for (int c = 0; c < cm.k; ++c) {
    ClassSummary cs;
    cs.support = cm.row_sum(c);
    const auto predicted = cm.col_sum(c);
    const auto tp = cm.at(c, c);
    if (predicted > 0) cs.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    if (cs.support > 0) cs.recall = static_cast<double>(tp) / static_cast<double>(cs.support);
    if (cs.precision && cs.recall && (*cs.precision + *cs.recall) > 0.0) {
      cs.f1 = 2.0 * *cs.precision * *cs.recall / (*cs.precision + *cs.recall);
    } else if (cs.precision && cs.recall) {
      cs.f1 = 0.0;
    }
    if (cs.recall) {
      recall_sum += *cs.recall;
      ++recall_n;
    }
    if (cs.precision) {
      macro_p += *cs.precision;
      ++np;
      wp += *cs.precision * static_cast<double>(cs.support);
      wp_support += cs.support;
    }
    if (cs.recall) {
      macro_r += *cs.recall;
      ++nr;
      wr += *cs.recall * static_cast<double>(cs.support);
      wr_support += cs.support;
    }
    if (cs.f1) {
      macro_f += *cs.f1;
      ++nf;
      wf += *cs.f1 * static_cast<double>(cs.support);
      wf_support += cs.support;
    }
    s.per_class.push_back(cs);
  }
  if (recall_n > 0) s.balanced_accuracy = recall_sum / recall_n;
  if (np > 0) s.macro_precision = macro_p / np;
  if (nr > 0) s.macro_recall = macro_r / nr;
  if (nf > 0) s.macro_f1 = macro_f / nf;
  if (wp_support > 0) s.weighted_precision = wp / static_cast<double>(wp_support);
  if (wr_support > 0) s.weighted_recall = wr / static_cast<double>(wr_support);
  if (wf_support > 0) s.weighted_f1 = wf / static_cast<double>(wf_support);
  return s;
}

namespace {
std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "   n/a";
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%6.4f", *v);
  return std::string(buf);
}
}  // namespace

std::string format_report(const Summary& s, const std::vector<std::string>& class_names) {
  std::ostringstream os;
  std::size_t width = 8;
  for (const auto& n : class_names) width = std::max(width, n.size() + 2);
  os << std::string(width, ' ') << "precision  recall  f1-score  support\n";
  std::int64_t support_total = 0;
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    const auto& cs = s.per_class[c];
    os << class_names[c] << std::string(width - class_names[c].size(), ' ');
    os << "   " << fmt_opt(cs.precision) << "  " << fmt_opt(cs.recall) << "    "
       << fmt_opt(cs.f1) << "  " << cs.support << "\n";
    support_total += cs.support;
  }
  char acc[64];
  std::snprintf(acc, sizeof(acc), "%.4f", s.accuracy);
  os << "accuracy " << acc << "  balanced_accuracy " << fmt_opt(s.balanced_accuracy)
     << "  kappa ";
  std::snprintf(acc, sizeof(acc), "%.4f", s.kappa);
  os << acc << "  support " << support_total << "\n";
  os << "macro avg     " << fmt_opt(s.macro_precision) << "  " << fmt_opt(s.macro_recall)
     << "    " << fmt_opt(s.macro_f1) << "\n";
  os << "weighted avg  " << fmt_opt(s.weighted_precision) << "  " << fmt_opt(s.weighted_recall)
     << "    " << fmt_opt(s.weighted_f1) << "\n";
  return os.str();
}

std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << "true\\pred";
  for (int p = 0; p < cm.k; ++p) os << "," << class_names[static_cast<std::size_t>(p)];
  os << "\n";
  for (int r = 0; r < cm.k; ++r) {
    os << class_names[static_cast<std::size_t>(r)];
    for (int p = 0; p < cm.k; ++p) os << "," << cm.at(r, p);
    os << "\n";
  }
  return os.str();
}

LatencyStats latency_probe(const std::function<void()>& fn, int reps, int warmup) {
  if (reps < 1) throw Error("latency_probe: reps must be >= 1");
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> ms(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ms[static_cast<std::size_t>(i)] =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  std::sort(ms.begin(), ms.end());
  LatencyStats st;
  st.median_ms = ms[ms.size() / 2];
  st.p95_ms = ms[std::min(ms.size() - 1, static_cast<std::size_t>(
                                             std::llround(0.95 * (ms.size() - 1))))];
  double sum = 0.0;
  for (double v : ms) sum += v;
  st.mean_ms = sum / static_cast<double>(ms.size());
  return st;
}

}  // namespace sleepnet::metrics
