#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fnirs/eval.hpp"
#include "fnirs/rng.hpp"

using namespace fnirs;

namespace {

std::vector<Label> balanced_labels(int per_class) {
  std::vector<Label> y;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < per_class; ++i) y.push_back(static_cast<Label>(c));
  }
  return y;
}

std::array<int, 3> class_counts_of(const std::vector<int>& idx, const std::vector<Label>& y) {
  std::array<int, 3> n{};
  for (int i : idx) ++n[static_cast<int>(y[static_cast<std::size_t>(i)])];
  return n;
}

// Labels whose confusion matrix equals the given counts.
void rows_from_counts(const int counts[3][3], std::vector<Label>& y_true,
                      std::vector<Label>& y_pred) {
  for (int a = 0; a < 3; ++a) {
    for (int p = 0; p < 3; ++p) {
      for (int k = 0; k < counts[a][p]; ++k) {
        y_true.push_back(static_cast<Label>(a));
        y_pred.push_back(static_cast<Label>(p));
      }
    }
  }
}

double pair_oracle_auc(const Eigen::VectorXd& scores, const std::vector<bool>& pos) {
  double won = 0.0;
  long pairs = 0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (!pos[static_cast<std::size_t>(i)]) continue;
    for (Eigen::Index j = 0; j < scores.size(); ++j) {
      if (pos[static_cast<std::size_t>(j)]) continue;
      ++pairs;
      if (scores(i) > scores(j)) {
        won += 1.0;
      } else if (scores(i) == scores(j)) {
        won += 0.5;
      }
    }
  }
  return won / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("the nested split lands on the documented 90-trial layout") {
  const std::vector<Label> y = balanced_labels(30);
  const eval::Split s = eval::split_train_val_test(y, 0.7, 0.7, 1);

  CHECK(s.train.size() == 44);
  CHECK(s.val.size() == 19);
  CHECK(s.test.size() == 27);

  // Largest-remainder extras go to the smaller class indices.
  CHECK(class_counts_of(s.train, y) == std::array<int, 3>{15, 15, 14});
  CHECK(class_counts_of(s.val, y) == std::array<int, 3>{6, 6, 7});
  CHECK(class_counts_of(s.test, y) == std::array<int, 3>{9, 9, 9});

  // Disjoint and exhaustive.
  std::set<int> seen;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    for (int i : *part) {
      CHECK(seen.insert(i).second);
      CHECK(i >= 0);
      CHECK(i < 90);
    }
  }
  CHECK(seen.size() == 90);

  // Index lists are sorted.
  CHECK(std::is_sorted(s.train.begin(), s.train.end()));
  CHECK(std::is_sorted(s.test.begin(), s.test.end()));
}

TEST_CASE("split membership moves with the seed but sizes stay put") {
  const std::vector<Label> y = balanced_labels(30);
  const eval::Split a = eval::split_train_val_test(y, 0.7, 0.7, 1);
  const eval::Split b = eval::split_train_val_test(y, 0.7, 0.7, 2);
  const eval::Split a2 = eval::split_train_val_test(y, 0.7, 0.7, 1);

  CHECK(a.train == a2.train);
  CHECK(a.val == a2.val);
  CHECK(a.test == a2.test);

  CHECK(b.train.size() == a.train.size());
  CHECK(b.val.size() == a.val.size());
  CHECK(b.test.size() == a.test.size());
  CHECK(a.test != b.test);
}

TEST_CASE("split proportions stay within one trial per class on ragged sizes") {
  std::vector<Label> y;
  const int sizes[3] = {7, 9, 13};
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < sizes[c]; ++i) y.push_back(static_cast<Label>(c));
  }
  const eval::Split s = eval::split_train_val_test(y, 0.7, 0.7, 3);
  const auto test_counts = class_counts_of(s.test, y);
  for (int c = 0; c < 3; ++c) {
    const double target = 0.3 * static_cast<double>(sizes[c]);
    CHECK(std::abs(static_cast<double>(test_counts[static_cast<std::size_t>(c)]) - target) < 1.0);
  }
  CHECK(s.train.size() + s.val.size() + s.test.size() == y.size());
}

TEST_CASE("split rejects degenerate ratios and starving classes") {
  const std::vector<Label> y = balanced_labels(10);
  CHECK_THROWS_AS(eval::split_train_val_test(y, 1.0, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(eval::split_train_val_test(y, 0.7, 1.2, 1), std::invalid_argument);

  std::vector<Label> tiny{Label::MA, Label::MA, Label::MA, Label::MI, Label::MI,
                          Label::IS, Label::IS, Label::IS};
  CHECK_THROWS_AS(eval::split_train_val_test(tiny, 0.7, 0.7, 1), std::invalid_argument);
}

TEST_CASE("confusion counts land in (actual, predicted) cells") {
  const std::vector<Label> y = balanced_labels(4);
  const eval::ConfusionMatrix diag = eval::confusion(y, y);
  CHECK(diag.counts.diagonal().sum() == 12);
  CHECK(diag.counts.sum() == 12);

  const int table1[3][3] = {{9, 0, 1}, {1, 7, 2}, {0, 1, 9}};
  std::vector<Label> t1, p1;
  rows_from_counts(table1, t1, p1);
  const eval::ConfusionMatrix cm1 = eval::confusion(t1, p1);
  for (int a = 0; a < 3; ++a) {
    for (int p = 0; p < 3; ++p) CHECK(cm1.counts(a, p) == table1[a][p]);
  }

  CHECK_THROWS_AS(eval::confusion(t1, std::vector<Label>{Label::MA}), std::invalid_argument);
}

TEST_CASE("accuracy is the trace share of the confusion matrix") {
  const int table1[3][3] = {{9, 0, 1}, {1, 7, 2}, {0, 1, 9}};
  const int table2[3][3] = {{8, 0, 2}, {2, 6, 2}, {1, 2, 7}};
  std::vector<Label> t1, p1, t2, p2;
  rows_from_counts(table1, t1, p1);
  rows_from_counts(table2, t2, p2);

  CHECK(eval::accuracy(eval::confusion(t1, p1)) == doctest::Approx(25.0 / 30.0).epsilon(1e-12));
  CHECK(eval::accuracy(eval::confusion(t2, p2)) == doctest::Approx(0.70).epsilon(1e-12));

  const std::vector<Label> y = balanced_labels(5);
  CHECK(eval::accuracy(eval::confusion(y, y)) == 1.0);

  CHECK_THROWS_AS(eval::accuracy(eval::ConfusionMatrix{}), std::invalid_argument);
}

TEST_CASE("perfectly ordered scores give the extreme areas") {
  Eigen::MatrixXd probs(6, 3);
  std::vector<Label> y;
  for (int i = 0; i < 6; ++i) {
    const bool pos = i < 3;
    probs(i, 0) = pos ? 0.9 - 0.01 * i : 0.2 - 0.01 * i;
    probs(i, 1) = 0.05;
    probs(i, 2) = 1.0 - probs(i, 0) - 0.05;
    y.push_back(pos ? Label::MA : Label::MI);
  }
  const eval::RocCurve perfect = eval::roc_ovr(probs, y, Label::MA);
  CHECK(perfect.auc == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(perfect.fpr.front() == 0.0);
  CHECK(perfect.tpr.front() == 0.0);
  CHECK(perfect.fpr.back() == 1.0);
  CHECK(perfect.tpr.back() == 1.0);
  CHECK(std::isinf(perfect.thresholds.front()));

  // Inverting the class assignment flips the area to zero.
  std::vector<Label> flipped;
  for (Label l : y) flipped.push_back(l == Label::MA ? Label::MI : Label::MA);
  const eval::RocCurve worst = eval::roc_ovr(probs, flipped, Label::MA);
  CHECK(worst.auc == doctest::Approx(0.0).epsilon(1e-12));

  // All-tied scores jump straight from (0,0) to (1,1): area one half.
  Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(6, 3, 1.0 / 3.0);
  const eval::RocCurve half = eval::roc_ovr(uniform, y, Label::MA);
  CHECK(half.auc == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(half.fpr.size() == 2);

  std::vector<Label> single(6, Label::MA);
  CHECK_THROWS_AS(eval::roc_ovr(probs, single, Label::MA), std::invalid_argument);
}

TEST_CASE("the trapezoid area equals the pair-counting statistic") {
  rng::Xoshiro256pp gen(401);
  const int n = 200;
  Eigen::MatrixXd probs(n, 3);
  std::vector<Label> y;
  std::vector<bool> pos;
  for (int i = 0; i < n; ++i) {
    // Quantized scores force plenty of ties across and within classes.
    const bool is_pos = gen.uniform() < 0.4;
    const double base = is_pos ? 0.55 : 0.45;
    double s = base + 0.3 * gen.normal();
    s = std::round(s * 50.0) / 50.0;
    probs(i, 0) = s;
    probs(i, 1) = (1.0 - s) * 0.5;
    probs(i, 2) = (1.0 - s) * 0.5;
    y.push_back(is_pos ? Label::MA : (gen.uniform() < 0.5 ? Label::MI : Label::IS));
    pos.push_back(is_pos);
  }
  const eval::RocCurve c = eval::roc_ovr(probs, y, Label::MA);
  const double oracle = pair_oracle_auc(probs.col(0), pos);
  CHECK(std::abs(c.auc - oracle) < 1e-12);
}

TEST_CASE("roc curves are monotone with complementary areas on random inputs") {
  rng::Xoshiro256pp gen(409);
  for (int rep = 0; rep < 30; ++rep) {
    const int n = 20 + static_cast<int>(gen.below(40));
    Eigen::MatrixXd probs(n, 3);
    std::vector<Label> y;
    int n_ma = 0;
    for (int i = 0; i < n; ++i) {
      double s = gen.uniform();
      if (gen.uniform() < 0.5) s = std::round(s * 8.0) / 8.0;  // inject ties
      probs(i, 0) = s;
      probs(i, 1) = (1.0 - s) * 0.7;
      probs(i, 2) = (1.0 - s) * 0.3;
      const Label l = static_cast<Label>(gen.below(3));
      n_ma += (l == Label::MA);
      y.push_back(l);
    }
    if (n_ma == 0 || n_ma == n) continue;

    const eval::RocCurve c = eval::roc_ovr(probs, y, Label::MA);
    CHECK(c.auc >= 0.0);
    CHECK(c.auc <= 1.0);
    CHECK(std::is_sorted(c.fpr.begin(), c.fpr.end()));
    CHECK(std::is_sorted(c.tpr.begin(), c.tpr.end()));
    CHECK(std::is_sorted(c.thresholds.rbegin(), c.thresholds.rend()));

    // Swap positives and negatives: the area complements exactly (ties = 1/2).
    std::vector<Label> inv;
    for (Label l : y) inv.push_back(l == Label::MA ? Label::MI : Label::MA);
    const eval::RocCurve ci = eval::roc_ovr(probs, inv, Label::MA);
    CHECK(c.auc + ci.auc == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("the report assembles accuracy and per-class areas") {
  // One-hot correct predictions.
  const std::vector<Label> y = balanced_labels(5);
  Eigen::MatrixXd hot = Eigen::MatrixXd::Zero(15, 3);
  for (int i = 0; i < 15; ++i) hot(i, static_cast<int>(y[static_cast<std::size_t>(i)])) = 1.0;
  const eval::EvalReport perfect = eval::eval_report(hot, y);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.n_test == 15);
  for (const auto& roc : perfect.roc) CHECK(roc.auc == doctest::Approx(1.0).epsilon(1e-12));

  // Uniform predictions: everything lands on the first class by the tie rule.
  Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(15, 3, 1.0 / 3.0);
  const eval::EvalReport flat = eval::eval_report(uniform, y);
  CHECK(flat.accuracy == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(flat.confusion.counts.col(0).sum() == 15);
  for (const auto& roc : flat.roc) CHECK(roc.auc == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("a crafted prediction set reproduces the documented report fields") {
  // Confusion (9,0,1 / 1,7,2 / 0,1,9) with the first-class column tuned so
  // the one-vs-rest area for class MA is exactly 0.98.
  std::vector<Label> y;
  Eigen::MatrixXd p(30, 3);
  Eigen::Index r = 0;
  auto row = [&](Label actual, double a, double b, double c) {
    y.push_back(actual);
    p(r, 0) = a;
    p(r, 1) = b;
    p(r, 2) = c;
    ++r;
  };
  for (int i = 0; i < 9; ++i) row(Label::MA, 0.9, 0.05, 0.05);
  row(Label::MA, 0.3, 0.1, 0.6);
  row(Label::MI, 0.49, 0.3, 0.21);
  for (int i = 0; i < 3; ++i) row(Label::MI, 0.49, 0.5, 0.01);
  for (int i = 0; i < 4; ++i) row(Label::MI, 0.1, 0.8, 0.1);
  for (int i = 0; i < 2; ++i) row(Label::MI, 0.1, 0.2, 0.7);
  row(Label::IS, 0.1, 0.6, 0.3);
  for (int i = 0; i < 9; ++i) row(Label::IS, 0.1, 0.1, 0.8);
  REQUIRE(r == 30);

  const eval::EvalReport rep = eval::eval_report(p, y);
  CHECK(rep.accuracy == doctest::Approx(25.0 / 30.0).epsilon(1e-12));
  const int want[3][3] = {{9, 0, 1}, {1, 7, 2}, {0, 1, 9}};
  for (int a = 0; a < 3; ++a) {
    for (int q = 0; q < 3; ++q) CHECK(rep.confusion.counts(a, q) == want[a][q]);
  }
  CHECK(rep.roc[0].auc == doctest::Approx(0.98).epsilon(1e-12));
}

TEST_CASE("metrics serialize with the fixed key order and roc as csv") {
  const std::vector<Label> y = balanced_labels(5);
  Eigen::MatrixXd hot = Eigen::MatrixXd::Zero(15, 3);
  for (int i = 0; i < 15; ++i) hot(i, static_cast<int>(y[static_cast<std::size_t>(i)])) = 1.0;
  eval::EvalReport rep = eval::eval_report(hot, y);
  rep.seed = 42;
  rep.split_sizes = {44, 19, 27};

  const std::string json = eval::metrics_json(rep);
  const std::size_t k_acc = json.find("\"accuracy\"");
  const std::size_t k_conf = json.find("\"confusion\"");
  const std::size_t k_auc = json.find("\"auc\"");
  const std::size_t k_n = json.find("\"n_test\"");
  const std::size_t k_seed = json.find("\"seed\"");
  const std::size_t k_sizes = json.find("\"split_sizes\"");
  REQUIRE(k_acc != std::string::npos);
  CHECK(k_acc < k_conf);
  CHECK(k_conf < k_auc);
  CHECK(k_auc < k_n);
  CHECK(k_n < k_seed);
  CHECK(k_seed < k_sizes);
  CHECK(json.find("\"MA\"") < json.find("\"MI\""));
  CHECK(json.find("\"MI\"") < json.find("\"IS\""));
  CHECK(json.find("\"seed\": 42") != std::string::npos);
  CHECK(json.find("[\n      5,\n      0,\n      0\n    ]") != std::string::npos);

  const std::string csv = eval::roc_csv(rep.roc[0]);
  CHECK(csv.rfind("threshold,fpr,tpr\n", 0) == 0);
  CHECK(csv.find("inf,0,0\n") != std::string::npos);
  const std::size_t lines = static_cast<std::size_t>(
      std::count(csv.begin(), csv.end(), '\n'));
  CHECK(lines == rep.roc[0].thresholds.size() + 1);
}
