#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fnirs/types.hpp"

namespace fnirs::eval {

// ---------------------------------------------------------------------------
// Stratified splits
// ---------------------------------------------------------------------------

struct Split {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

// Two nested stratified splits: outer carves the test set, inner carves the
// validation set from the remaining trials. Set sizes follow the rounded
// total (floor(f*n + 0.5)); per-class quotas are floor(f*n_c) plus extras by
// largest remainder, ties resolved toward the smaller class index. Index
// lists come back sorted; membership is seed-shuffled per class.
Split split_train_val_test(const std::vector<Label>& labels, double outer = 0.7,
                           double inner = 0.7, std::uint64_t seed = 1);

// ---------------------------------------------------------------------------
// Confusion and accuracy
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
  // counts(actual, predicted), classes ordered MA, MI, IS.
  Eigen::Matrix3i counts = Eigen::Matrix3i::Zero();
  int total() const { return counts.sum(); }
};

ConfusionMatrix confusion(const std::vector<Label>& y_true, const std::vector<Label>& y_pred);

// trace / total.
double accuracy(const ConfusionMatrix& cm);

// ---------------------------------------------------------------------------
// One-vs-rest ROC
// ---------------------------------------------------------------------------

struct RocCurve {
  // Point 0 is (0,0) at threshold +infinity; the final point is (1,1) at the
  // smallest distinct score. Equal scores move together.
  std::vector<double> thresholds;
  std::vector<double> fpr;
  std::vector<double> tpr;
  double auc = 0.0;
};

// ROC of the positive class's probability column against all other classes.
RocCurve roc_ovr(const Eigen::MatrixXd& probs, const std::vector<Label>& labels,
                 Label positive);

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

struct EvalReport {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::array<RocCurve, kNumClasses> roc;  // MA, MI, IS
  int n_test = 0;
  std::uint64_t seed = 0;
  std::array<int, 3> split_sizes{0, 0, 0};  // train, val, test
};

// Metrics from probability rows; seed and split_sizes are left for the
// caller to fill in.
EvalReport eval_report(const Eigen::MatrixXd& probs, const std::vector<Label>& labels);

// JSON with keys accuracy, confusion (3x3 row-major), auc {MA,MI,IS},
// n_test, seed, split_sizes — in that order.
std::string metrics_json(const EvalReport& r);

// CSV with header threshold,fpr,tpr.
std::string roc_csv(const RocCurve& c);

}  // namespace fnirs::eval
