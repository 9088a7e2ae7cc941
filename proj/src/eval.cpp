#include "fnirs/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "fnirs/csv.hpp"
#include "fnirs/rng.hpp"

namespace fnirs::eval {

namespace {

// One stratified fraction: returns (taken, rest). The total equals
// floor(f*n + 0.5); per-class quotas are floor(f*n_c) with the leftovers
// handed out by largest remainder (ties -> smaller class index). Members are
// chosen by a seeded shuffle within each class.
std::pair<std::vector<int>, std::vector<int>> stratified_take(
    const std::vector<int>& idx, const std::vector<Label>& labels, double f,
    rng::Xoshiro256pp& gen) {
  std::array<std::vector<int>, kNumClasses> by_class;
  for (int i : idx) by_class[static_cast<int>(labels[static_cast<std::size_t>(i)])].push_back(i);

  const int target =
      static_cast<int>(std::floor(f * static_cast<double>(idx.size()) + 0.5));
  std::array<int, kNumClasses> quota{};
  std::array<double, kNumClasses> remainder{};
  int floored = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const double want = f * static_cast<double>(by_class[c].size());
    quota[c] = static_cast<int>(std::floor(want));
    remainder[c] = want - static_cast<double>(quota[c]);
    floored += quota[c];
  }
  std::array<int, kNumClasses> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
    return a < b;
  });
  for (int extra = target - floored, k = 0; extra > 0 && k < kNumClasses; ++k) {
    const int c = order[static_cast<std::size_t>(k)];
    if (quota[c] < static_cast<int>(by_class[c].size())) {
      ++quota[c];
      --extra;
    }
  }

  std::vector<int> taken, rest;
  for (int c = 0; c < kNumClasses; ++c) {
    gen.shuffle(by_class[c]);
    for (std::size_t j = 0; j < by_class[c].size(); ++j) {
      (j < static_cast<std::size_t>(quota[c]) ? taken : rest).push_back(by_class[c][j]);
    }
  }
  std::sort(taken.begin(), taken.end());
  std::sort(rest.begin(), rest.end());
  return {std::move(taken), std::move(rest)};
}

}  // namespace

Split split_train_val_test(const std::vector<Label>& labels, double outer, double inner,
                           std::uint64_t seed) {
  if (labels.empty()) throw std::invalid_argument("split: no labels");
  if (!(outer > 0.0 && outer <= 1.0) || !(inner > 0.0 && inner <= 1.0)) {
    throw std::invalid_argument("split: ratios must lie in (0, 1]");
  }
  std::array<int, kNumClasses> counts{};
  for (Label l : labels) ++counts[static_cast<int>(l)];
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[c] > 0 && counts[c] < 3) {
      throw std::invalid_argument("split: every class needs at least 3 members");
    }
  }

  std::vector<int> all(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) all[i] = static_cast<int>(i);

  Split s;
  rng::Xoshiro256pp outer_gen(rng::derive_seed(seed, "split/outer"));
  auto [train_full, test] = stratified_take(all, labels, outer, outer_gen);
  rng::Xoshiro256pp inner_gen(rng::derive_seed(seed, "split/inner"));
  auto [train, val] = stratified_take(train_full, labels, inner, inner_gen);
  s.train = std::move(train);
  s.val = std::move(val);
  s.test = std::move(test);

  if (s.test.empty()) throw std::invalid_argument("split: empty test set");
  if (s.val.empty()) throw std::invalid_argument("split: empty validation set");
  if (s.train.empty()) throw std::invalid_argument("split: empty training set");
  return s;
}

ConfusionMatrix confusion(const std::vector<Label>& y_true, const std::vector<Label>& y_pred) {
  if (y_true.size() != y_pred.size()) {
    throw std::invalid_argument("confusion: label vectors differ in length");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    cm.counts(static_cast<int>(y_true[i]), static_cast<int>(y_pred[i])) += 1;
  }
  return cm;
}

double accuracy(const ConfusionMatrix& cm) {
  const int total = cm.total();
  if (total <= 0) throw std::invalid_argument("accuracy: empty confusion matrix");
  return static_cast<double>(cm.counts.trace()) / static_cast<double>(total);
}

RocCurve roc_ovr(const Eigen::MatrixXd& probs, const std::vector<Label>& labels,
                 Label positive) {
  if (probs.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw std::invalid_argument("roc_ovr: scores and labels differ in length");
  }
  if (probs.cols() != kNumClasses) {
    throw std::invalid_argument("roc_ovr: expected one score column per class");
  }

  struct Entry {
    double score;
    bool pos;
  };
  std::vector<Entry> entries;
  entries.reserve(labels.size());
  long n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pos = labels[i] == positive;
    entries.push_back({probs(static_cast<Eigen::Index>(i), static_cast<int>(positive)), pos});
    (pos ? n_pos : n_neg) += 1;
  }
  if (n_pos == 0 || n_neg == 0) {
    throw std::invalid_argument("roc_ovr: need both positive and negative examples");
  }

  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.score > b.score; });

  RocCurve c;
  c.thresholds.push_back(std::numeric_limits<double>::infinity());
  c.fpr.push_back(0.0);
  c.tpr.push_back(0.0);
  c.auc = 0.0;

  long tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < entries.size()) {
    const double threshold = entries[i].score;
    // Grouped ties: every sample at this score flips in one move.
    while (i < entries.size() && entries[i].score == threshold) {
      (entries[i].pos ? tp : fp) += 1;
      ++i;
    }
    const double fpr = static_cast<double>(fp) / static_cast<double>(n_neg);
    const double tpr = static_cast<double>(tp) / static_cast<double>(n_pos);
    c.auc += 0.5 * (tpr + c.tpr.back()) * (fpr - c.fpr.back());
    c.thresholds.push_back(threshold);
    c.fpr.push_back(fpr);
    c.tpr.push_back(tpr);
  }
  return c;
}

EvalReport eval_report(const Eigen::MatrixXd& probs, const std::vector<Label>& labels) {
  if (probs.rows() < 1) throw std::invalid_argument("eval_report: no predictions");

  std::vector<Label> pred(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    probs.row(i).maxCoeff(&best);
    pred[static_cast<std::size_t>(i)] = static_cast<Label>(best);
  }

  EvalReport r;
  r.confusion = confusion(labels, pred);
  r.accuracy = accuracy(r.confusion);
  for (int c = 0; c < kNumClasses; ++c) {
    r.roc[static_cast<std::size_t>(c)] = roc_ovr(probs, labels, static_cast<Label>(c));
  }
  r.n_test = static_cast<int>(labels.size());
  return r;
}

std::string metrics_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (int a = 0; a < kNumClasses; ++a) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (int p = 0; p < kNumClasses; ++p) row.push_back(r.confusion.counts(a, p));
    rows.push_back(std::move(row));
  }
  j["confusion"] = std::move(rows);
  nlohmann::ordered_json auc;
  for (int c = 0; c < kNumClasses; ++c) {
    auc[label_to_string(static_cast<Label>(c))] = r.roc[static_cast<std::size_t>(c)].auc;
  }
  j["auc"] = std::move(auc);
  j["n_test"] = r.n_test;
  j["seed"] = r.seed;
  nlohmann::ordered_json sizes = nlohmann::ordered_json::array();
  for (int v : r.split_sizes) sizes.push_back(v);
  j["split_sizes"] = std::move(sizes);
  return j.dump(2) + "\n";
}

std::string roc_csv(const RocCurve& c) {
  std::string out = "threshold,fpr,tpr\n";
  for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
    out += csv::format_double(c.thresholds[i]);
    out += ',';
    out += csv::format_double(c.fpr[i]);
    out += ',';
    out += csv::format_double(c.tpr[i]);
    out += '\n';
  }
  return out;
}

}  // namespace fnirs::eval
