#include "fnirs/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "fnirs/rng.hpp"

namespace fnirs::clf {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_xy(const Eigen::MatrixXd& x, const std::vector<Label>& y, const char* who) {
  if (x.rows() != static_cast<Eigen::Index>(y.size())) {
    throw std::invalid_argument(std::string(who) + ": feature rows and labels disagree");
  }
  if (x.rows() < 1 || x.cols() < 1) {
    throw std::invalid_argument(std::string(who) + ": empty feature matrix");
  }
  if (!x.allFinite()) {
    throw std::invalid_argument(std::string(who) + ": non-finite features");
  }
}

std::array<int, kNumClasses> class_counts(const std::vector<Label>& y) {
  std::array<int, kNumClasses> n{};
  for (Label l : y) ++n[static_cast<int>(l)];
  return n;
}

int distinct_classes(const std::array<int, kNumClasses>& n) {
  int d = 0;
  for (int c : n) d += (c > 0);
  return d;
}

Eigen::MatrixXd one_hot(const std::vector<Label>& y) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(y.size()), kNumClasses);
  for (std::size_t i = 0; i < y.size(); ++i) {
    h(static_cast<Eigen::Index>(i), static_cast<int>(y[i])) = 1.0;
  }
  return h;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<int>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

std::vector<Label> take_labels(const std::vector<Label>& y, const std::vector<int>& idx) {
  std::vector<Label> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(y[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Shared linear form
// ---------------------------------------------------------------------------

std::string linear_kind_to_string(LinearKind k) {
  switch (k) {
    case LinearKind::kLogreg: return "logreg";
    case LinearKind::kSvmOvr: return "svm_ovr";
    case LinearKind::kSlda: return "slda";
  }
  return "logreg";
}

LinearKind linear_kind_from_string(const std::string& s) {
  if (s == "logreg") return LinearKind::kLogreg;
  if (s == "svm_ovr") return LinearKind::kSvmOvr;
  if (s == "slda") return LinearKind::kSlda;
  throw std::invalid_argument("unknown linear model kind '" + s + "'");
}

Eigen::MatrixXd linear_scores(const LinearModel& m, const Eigen::MatrixXd& x) {
  if (x.cols() != m.weights.rows()) {
    throw std::invalid_argument("linear_scores: feature width mismatch");
  }
  return (x * m.weights).rowwise() + m.bias;
}

std::vector<Label> linear_predict(const LinearModel& m, const Eigen::MatrixXd& x) {
  return argmax_labels(linear_scores(m, x));
}

std::vector<Label> argmax_labels(const Eigen::MatrixXd& scores) {
  std::vector<Label> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    scores.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<Label>(best);
  }
  return out;
}

double label_accuracy(const std::vector<Label>& pred, const std::vector<Label>& truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("label_accuracy: size mismatch");
  }
  if (pred.empty()) throw std::invalid_argument("label_accuracy: empty");
  int hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += (pred[i] == truth[i]);
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Multinomial logistic regression
// ---------------------------------------------------------------------------

LinearModel logreg_fit(const Eigen::MatrixXd& x, const std::vector<Label>& y, double l2,
                       int max_iter, double tol, std::uint64_t /*seed*/) {
  check_xy(x, y, "logreg_fit");
  if (l2 < 0.0) throw std::invalid_argument("logreg_fit: l2 must be >= 0");
  if (max_iter < 1) throw std::invalid_argument("logreg_fit: max_iter must be >= 1");
  if (distinct_classes(class_counts(y)) < 2) {
    throw std::invalid_argument("logreg_fit: need at least two classes");
  }

  const Eigen::Index n = x.rows(), d = x.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const Eigen::MatrixXd hot = one_hot(y);

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, kNumClasses);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(kNumClasses);

  auto objective = [&](const Eigen::MatrixXd& wt, const Eigen::RowVectorXd& bt) {
    const Eigen::MatrixXd p = nn::softmax_rows((x * wt).rowwise() + bt);
    return nn::loss_forward(p, y, {&wt}, l2);
  };

  LinearModel model;
  model.kind = LinearKind::kLogreg;
  double f = objective(w, b);
  bool converged = false;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd p = nn::softmax_rows((x * w).rowwise() + b);
    const Eigen::MatrixXd resid = (p - hot) * inv_n;
    const Eigen::MatrixXd gw = x.transpose() * resid + 2.0 * l2 * w;
    const Eigen::RowVectorXd gb = resid.colwise().sum();
    const double gnorm = std::max(gw.cwiseAbs().maxCoeff(), gb.cwiseAbs().maxCoeff());
    if (gnorm < tol) {
      converged = true;
      break;
    }
    const double g2 = gw.squaredNorm() + gb.squaredNorm();
    double step = 1.0;
    bool accepted = false;
    for (int half = 0; half < 60; ++half) {
      const Eigen::MatrixXd wn = w - step * gw;
      const Eigen::RowVectorXd bn = b - step * gb;
      const double fn = objective(wn, bn);
      if (fn <= f - 1e-4 * step * g2) {
        w = wn;
        b = bn;
        f = fn;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      model.warning = "logreg: line search stalled before reaching tolerance";
      break;
    }
  }
  if (!converged && model.warning.empty()) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "logreg: not converged after %d iterations", max_iter);
    model.warning = buf;
  }
  model.weights = std::move(w);
  model.bias = std::move(b);
  return model;
}

Eigen::MatrixXd logreg_probs(const LinearModel& m, const Eigen::MatrixXd& x) {
  return nn::softmax_rows(linear_scores(m, x));
}

// ---------------------------------------------------------------------------
// Linear one-vs-rest SVM
// ---------------------------------------------------------------------------

LinearModel svm_ovr_fit(const Eigen::MatrixXd& x, const std::vector<Label>& y, double c,
                        int epochs, std::uint64_t seed) {
  check_xy(x, y, "svm_ovr_fit");
  if (c <= 0.0) throw std::invalid_argument("svm_ovr_fit: C must be positive");
  if (epochs < 1) throw std::invalid_argument("svm_ovr_fit: epochs must be >= 1");
  if (distinct_classes(class_counts(y)) < 2) {
    throw std::invalid_argument("svm_ovr_fit: need at least two classes");
  }

  const Eigen::Index n = x.rows(), d = x.cols();
  const double lambda = 1.0 / c;

  LinearModel model;
  model.kind = LinearKind::kSvmOvr;
  model.weights = Eigen::MatrixXd::Zero(d, kNumClasses);
  model.bias = Eigen::RowVectorXd::Zero(kNumClasses);

  std::vector<int> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = static_cast<int>(i);

  for (int cls = 0; cls < kNumClasses; ++cls) {
    rng::Xoshiro256pp gen(
        rng::derive_seed(seed, "svm/class/" + std::to_string(cls)));
    Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
    double bias = 0.0;
    Eigen::VectorXd w_sum = Eigen::VectorXd::Zero(d);
    double b_sum = 0.0;
    long t = 0;
    for (int e = 0; e < epochs; ++e) {
      gen.shuffle(order);
      for (int i : order) {
        ++t;
        const double eta = 1.0 / (lambda * static_cast<double>(t));
        const double s = y[static_cast<std::size_t>(i)] == static_cast<Label>(cls) ? 1.0 : -1.0;
        const double margin = s * (x.row(i).dot(w) + bias);
        w *= 1.0 - 1.0 / static_cast<double>(t);  // (1 - eta*lambda)
        if (margin < 1.0) {
          w += eta * s * x.row(i).transpose();
          bias += eta * s;
        }
        w_sum += w;
        b_sum += bias;
      }
    }
    model.weights.col(cls) = w_sum / static_cast<double>(t);
    model.bias(cls) = b_sum / static_cast<double>(t);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Shrinkage linear discriminant analysis
// ---------------------------------------------------------------------------

SldaModel slda_fit(const Eigen::MatrixXd& x, const std::vector<Label>& y,
                   std::optional<double> gamma) {
  check_xy(x, y, "slda_fit");
  const auto counts = class_counts(y);
  if (distinct_classes(counts) < 2) {
    throw std::invalid_argument("slda_fit: need at least two classes");
  }
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 1) {
      throw std::invalid_argument("slda_fit: every present class needs at least 2 samples");
    }
  }
  if (gamma && (*gamma < 0.0 || *gamma > 1.0)) {
    throw std::invalid_argument("slda_fit: gamma must lie in [0, 1]");
  }

  const Eigen::Index n = x.rows(), d = x.cols();

  SldaModel m;
  m.means = Eigen::MatrixXd::Zero(d, kNumClasses);
  m.priors = Eigen::VectorXd::Zero(kNumClasses);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(y[static_cast<std::size_t>(i)]);
    m.means.col(c) += x.row(i).transpose();
    m.priors(c) += 1.0;
  }
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[c] > 0) m.means.col(c) /= m.priors(c);
  }
  m.priors /= static_cast<double>(n);

  // Class-centered rows and the pooled maximum-likelihood covariance.
  Eigen::MatrixXd z(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    z.row(i) = x.row(i) - m.means.col(static_cast<int>(y[static_cast<std::size_t>(i)])).transpose();
  }
  const Eigen::MatrixXd s = (z.transpose() * z) / static_cast<double>(n);

  if (gamma) {
    m.gamma = *gamma;
  } else {
    // Ledoit-Wolf analytic shrinkage toward (trace(S)/d) * I, using the
    // dimension-scaled Frobenius norm throughout.
    const double mu = s.trace() / static_cast<double>(d);
    const double d2 = s.squaredNorm() / static_cast<double>(d) - mu * mu;
    double b2 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd zi = z.row(i).transpose();
      const double zz = zi.squaredNorm();
      b2 += zz * zz - 2.0 * zi.dot(s * zi);
    }
    b2 = (b2 + static_cast<double>(n) * s.squaredNorm()) /
         (static_cast<double>(n) * static_cast<double>(n) * static_cast<double>(d));
    if (d2 <= 0.0) {
      m.gamma = 0.0;  // S is already spherical; shrinkage is a no-op
    } else {
      m.gamma = std::clamp(std::min(b2, d2) / d2, 0.0, 1.0);
    }
  }

  const double mu = s.trace() / static_cast<double>(d);
  m.sigma = (1.0 - m.gamma) * s;
  m.sigma.diagonal().array() += m.gamma * mu;

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(m.sigma);
  const Eigen::VectorXd piv = ldlt.vectorD();
  if (ldlt.info() != Eigen::Success || piv.minCoeff() <= 0.0 ||
      piv.minCoeff() < 1e-13 * piv.maxCoeff()) {
    throw std::runtime_error(
        "slda_fit: pooled covariance is singular at the requested shrinkage");
  }
  return m;
}

Eigen::MatrixXd slda_scores(const SldaModel& m, const Eigen::MatrixXd& x) {
  if (x.cols() != m.means.rows()) {
    throw std::invalid_argument("slda_scores: feature width mismatch");
  }
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(m.sigma);
  const Eigen::MatrixXd a = ldlt.solve(m.means);  // d x classes
  Eigen::RowVectorXd offset(kNumClasses);
  for (int c = 0; c < kNumClasses; ++c) {
    offset(c) = -0.5 * m.means.col(c).dot(a.col(c)) +
                (m.priors(c) > 0.0 ? std::log(m.priors(c)) : kNegInf);
  }
  return (x * a).rowwise() + offset;
}

std::vector<Label> slda_predict(const SldaModel& m, const Eigen::MatrixXd& x) {
  return argmax_labels(slda_scores(m, x));
}

LinearModel slda_linear(const SldaModel& m) {
  if (m.priors.minCoeff() <= 0.0) {
    throw std::invalid_argument("slda_linear: every class must be present");
  }
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(m.sigma);
  LinearModel lm;
  lm.kind = LinearKind::kSlda;
  lm.weights = ldlt.solve(m.means);
  lm.bias.resize(kNumClasses);
  for (int c = 0; c < kNumClasses; ++c) {
    lm.bias(c) = -0.5 * m.means.col(c).dot(lm.weights.col(c)) + std::log(m.priors(c));
  }
  return lm;
}

// ---------------------------------------------------------------------------
// Feed-forward baseline network
// ---------------------------------------------------------------------------

namespace {

EpochSet rows_as_epochs(const Eigen::MatrixXd& x, const std::vector<Label>& y,
                        const std::vector<int>& idx) {
  EpochSet es;
  es.fs = 1.0;
  es.window_s = {0.0, 1.0};
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "f%03d", static_cast<int>(f + 1) % 1000);
    es.stream_names.push_back(buf);
  }
  for (int i : idx) {
    es.data.push_back(x.row(i).transpose());
    es.labels.push_back(y[static_cast<std::size_t>(i)]);
  }
  return es;
}

nn::Tensor3 rows_as_tensor(const Eigen::MatrixXd& x) {
  nn::Tensor3 t(x.rows(), 1, x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index f = 0; f < x.cols(); ++f) t.at(i, 0, f) = x(i, f);
  }
  return t;
}

}  // namespace

AnnModel ann_baseline_fit(const Eigen::MatrixXd& x, const std::vector<Label>& y,
                          const AnnConfig& cfg) {
  check_xy(x, y, "ann_baseline_fit");
  if (cfg.hidden < 1) throw std::invalid_argument("ann_baseline_fit: hidden must be >= 1");
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0)) {
    throw std::invalid_argument("ann_baseline_fit: val_fraction must lie in (0, 1)");
  }
  const auto counts = class_counts(y);
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 1) {
      throw std::invalid_argument("ann_baseline_fit: every present class needs >= 2 samples");
    }
  }

  // Stratified validation slice for early stopping.
  rng::Xoshiro256pp gen(rng::derive_seed(cfg.train.seed, "ann/val"));
  std::vector<int> train_idx, val_idx;
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<int> members;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (static_cast<int>(y[i]) == c) members.push_back(static_cast<int>(i));
    }
    if (members.empty()) continue;
    gen.shuffle(members);
    int n_val = static_cast<int>(std::floor(cfg.val_fraction * static_cast<double>(members.size()) + 0.5));
    n_val = std::clamp(n_val, 1, static_cast<int>(members.size()) - 1);
    for (std::size_t j = 0; j < members.size(); ++j) {
      (j < static_cast<std::size_t>(n_val) ? val_idx : train_idx).push_back(members[j]);
    }
  }

  AnnModel m;
  m.spec.n_features = x.cols();
  m.spec.l2 = cfg.train.l2;
  nn::LayerSpec hidden;
  hidden.kind = nn::LayerSpec::Kind::kDense;
  hidden.units = cfg.hidden;
  hidden.activation = nn::Act::kSelu;
  m.spec.layers.push_back(hidden);
  nn::LayerSpec out;
  out.kind = nn::LayerSpec::Kind::kOutput;
  out.units = kNumClasses;
  m.spec.layers.push_back(out);

  nn::TrainConfig tc = cfg.train;
  tc.time_stride = 1;
  nn::Model net(m.spec, rng::derive_seed(tc.seed, "init"));
  m.report = nn::train(net, rows_as_epochs(x, y, train_idx), rows_as_epochs(x, y, val_idx), tc);
  m.state = net.export_state();
  return m;
}

Eigen::MatrixXd ann_scores(const AnnModel& m, const Eigen::MatrixXd& x) {
  if (x.cols() != m.spec.n_features) {
    throw std::invalid_argument("ann_scores: feature width mismatch");
  }
  nn::Model net(m.spec, 0);
  net.import_state(m.state);
  return net.predict_probs(rows_as_tensor(x));
}

std::vector<Label> ann_predict(const AnnModel& m, const Eigen::MatrixXd& x) {
  return argmax_labels(ann_scores(m, x));
}

// ---------------------------------------------------------------------------
// Repeated stratified cross-validation
// ---------------------------------------------------------------------------

CrossvalResult crossval(const FitFn& fit, const Eigen::MatrixXd& x,
                        const std::vector<Label>& y, int k, int repeats,
                        std::uint64_t seed) {
  check_xy(x, y, "crossval");
  if (k < 2) throw std::invalid_argument("crossval: k must be >= 2");
  if (repeats < 1) throw std::invalid_argument("crossval: repeats must be >= 1");
  if (x.rows() < k) throw std::invalid_argument("crossval: fewer samples than folds");

  CrossvalResult res;
  const auto counts = class_counts(y);
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[c] > 0 && counts[c] < k) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "class %d has %d members, fewer than %d folds", c,
                    counts[c], k);
      res.warning = buf;
      break;
    }
  }

  for (int r = 0; r < repeats; ++r) {
    const std::uint64_t seed_r = rng::derive_seed(seed, "rep/" + std::to_string(r));
    rng::Xoshiro256pp gen(seed_r);

    // One cursor across classes keeps every fold non-empty when n >= k.
    std::vector<int> fold_of(y.size(), 0);
    int cursor = 0;
    for (int c = 0; c < kNumClasses; ++c) {
      std::vector<int> members;
      for (std::size_t i = 0; i < y.size(); ++i) {
        if (static_cast<int>(y[i]) == c) members.push_back(static_cast<int>(i));
      }
      gen.shuffle(members);
      for (int idx : members) fold_of[static_cast<std::size_t>(idx)] = cursor++ % k;
    }

    for (int f = 0; f < k; ++f) {
      std::vector<int> train_idx, test_idx;
      for (std::size_t i = 0; i < y.size(); ++i) {
        (fold_of[i] == f ? test_idx : train_idx).push_back(static_cast<int>(i));
      }
      const PredictFn predict =
          fit(take_rows(x, train_idx), take_labels(y, train_idx),
              rng::derive_seed(seed_r, "fold/" + std::to_string(f)));
      const std::vector<Label> pred = predict(take_rows(x, test_idx));
      res.fold_acc.push_back(label_accuracy(pred, take_labels(y, test_idx)));
    }
  }

  const double n_folds = static_cast<double>(res.fold_acc.size());
  for (double a : res.fold_acc) res.mean_acc += a;
  res.mean_acc /= n_folds;
  if (res.fold_acc.size() > 1) {
    double ss = 0.0;
    for (double a : res.fold_acc) ss += (a - res.mean_acc) * (a - res.mean_acc);
    res.std_acc = std::sqrt(ss / (n_folds - 1.0));
  }
  return res;
}

}  // namespace fnirs::clf
