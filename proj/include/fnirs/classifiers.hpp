#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fnirs/nn.hpp"
#include "fnirs/types.hpp"

namespace fnirs::clf {

// ---------------------------------------------------------------------------
// Shared linear form
// ---------------------------------------------------------------------------

enum class LinearKind { kLogreg, kSvmOvr, kSlda };

std::string linear_kind_to_string(LinearKind k);
LinearKind linear_kind_from_string(const std::string& s);

struct LinearModel {
  Eigen::MatrixXd weights;   // n_features x n_classes
  Eigen::RowVectorXd bias;   // 1 x n_classes
  LinearKind kind = LinearKind::kLogreg;
  std::string warning;       // empty when the fit converged cleanly
};

// Per-class decision scores: x * weights, plus the bias on every row.
Eigen::MatrixXd linear_scores(const LinearModel& m, const Eigen::MatrixXd& x);
std::vector<Label> linear_predict(const LinearModel& m, const Eigen::MatrixXd& x);

// Row-wise argmax with ties resolved toward the smaller class index.
std::vector<Label> argmax_labels(const Eigen::MatrixXd& scores);
double label_accuracy(const std::vector<Label>& pred, const std::vector<Label>& truth);

// ---------------------------------------------------------------------------
// Multinomial logistic regression
// ---------------------------------------------------------------------------

// Full-batch gradient descent with a backtracking line search on
//   mean cross-entropy + l2 * ||W||_F^2  (bias unpenalized).
// Stops when the gradient infinity norm drops below tol; if max_iter passes
// first the model carries a non-convergence warning. The zero start makes the
// convex fit deterministic; seed is accepted for interface uniformity.
LinearModel logreg_fit(const Eigen::MatrixXd& x, const std::vector<Label>& y,
                       double l2 = 1e-4, int max_iter = 500, double tol = 1e-6,
                       std::uint64_t seed = 1);

// Softmax of the decision scores.
Eigen::MatrixXd logreg_probs(const LinearModel& m, const Eigen::MatrixXd& x);

// ---------------------------------------------------------------------------
// Linear one-vs-rest SVM
// ---------------------------------------------------------------------------

// Per class: averaged stochastic subgradient descent on
//   mean hinge(1 - s*(w.x + b)) + (1/(2C)) ||w||^2
// with step 1/(lambda*t), lambda = 1/C, bias unregularized, and the averaged
// iterate returned. Decision is the argmax margin across classes.
LinearModel svm_ovr_fit(const Eigen::MatrixXd& x, const std::vector<Label>& y,
                        double c = 1.0, int epochs = 20, std::uint64_t seed = 1);

// ---------------------------------------------------------------------------
// Shrinkage linear discriminant analysis
// ---------------------------------------------------------------------------

struct SldaModel {
  Eigen::MatrixXd means;   // n_features x n_classes; zero column if absent
  Eigen::MatrixXd sigma;   // shrunk pooled covariance (1-gamma)*S + gamma*(tr S/d)*I
  Eigen::VectorXd priors;  // class frequencies, zero when a class is absent
  double gamma = 0.0;      // shrinkage actually applied
};

// Pooled covariance is the maximum-likelihood (1/n) estimate on class-centered
// rows. gamma = nullopt selects the Ledoit-Wolf analytic shrinkage toward the
// scaled identity; an explicit value in [0, 1] is used as given. Classes
// absent from y get zero prior and can never win the argmax.
SldaModel slda_fit(const Eigen::MatrixXd& x, const std::vector<Label>& y,
                   std::optional<double> gamma = std::nullopt);

// Discriminant scores d_k(x) = x' S^-1 mu_k - mu_k' S^-1 mu_k / 2 + log pi_k.
Eigen::MatrixXd slda_scores(const SldaModel& m, const Eigen::MatrixXd& x);
std::vector<Label> slda_predict(const SldaModel& m, const Eigen::MatrixXd& x);

// The equivalent linear form; requires every class to be present.
LinearModel slda_linear(const SldaModel& m);

// ---------------------------------------------------------------------------
// Feed-forward baseline network
// ---------------------------------------------------------------------------

struct AnnConfig {
  int hidden = 32;            // single hidden layer width
  double val_fraction = 0.3;  // stratified slice held out for early stopping
  nn::TrainConfig train;      // lr, l2, batching, patience, seed
};

struct AnnModel {
  nn::ModelSpec spec;
  std::vector<nn::NamedMatrix> state;
  nn::TrainReport report;
};

// Hidden(selu) -> softmax output on flat feature rows, trained with the
// recurrent stack's loss, optimizer, and early stopping.
AnnModel ann_baseline_fit(const Eigen::MatrixXd& x, const std::vector<Label>& y,
                          const AnnConfig& cfg);

Eigen::MatrixXd ann_scores(const AnnModel& m, const Eigen::MatrixXd& x);
std::vector<Label> ann_predict(const AnnModel& m, const Eigen::MatrixXd& x);

// ---------------------------------------------------------------------------
// Repeated stratified cross-validation
// ---------------------------------------------------------------------------

using PredictFn = std::function<std::vector<Label>(const Eigen::MatrixXd&)>;
using FitFn = std::function<PredictFn(const Eigen::MatrixXd& x_train,
                                      const std::vector<Label>& y_train,
                                      std::uint64_t seed)>;

struct CrossvalResult {
  double mean_acc = 0.0;
  double std_acc = 0.0;          // sample standard deviation of fold accuracies
  std::vector<double> fold_acc;  // repeats * k entries, repeat-major
  std::string warning;           // set when a class has fewer members than k
};

// Stratified k-fold, repeated with per-repeat shuffles seeded from
// derive_seed(seed, "rep/<r>"); each fold's fit gets an independent derived
// seed. Folds are dealt round-robin through one cursor shared across classes,
// so every fold is non-empty whenever n >= k.
CrossvalResult crossval(const FitFn& fit, const Eigen::MatrixXd& x,
                        const std::vector<Label>& y, int k = 10, int repeats = 10,
                        std::uint64_t seed = 1);

}  // namespace fnirs::clf
