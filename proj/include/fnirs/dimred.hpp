#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fnirs/types.hpp"

namespace fnirs::dimred {

// ---------------------------------------------------------------------------
// Kernel PCA
// ---------------------------------------------------------------------------

enum class Kernel { kLinear, kRbf };

std::string kernel_to_string(Kernel k);
Kernel kernel_from_string(const std::string& s);

struct KpcaModel {
  Kernel kernel = Kernel::kRbf;
  double gamma = 0.0;  // used by the RBF kernel only
  Eigen::MatrixXd x_train;
  // Columns are the centred-kernel eigenvectors, scaled so that
  // lambda_i * (alpha_i' alpha_i) = 1.
  Eigen::MatrixXd alpha;
  Eigen::VectorXd lambda;  // descending, strictly > 1e-12
  Eigen::Index n_components = 0;
  std::string warning;  // non-empty when the request was truncated

  Eigen::Index n_features() const { return x_train.cols(); }
};

// Scale-adaptive default bandwidth: 1 / (n_features * mean per-column variance).
double default_rbf_gamma(const Eigen::MatrixXd& x);

KpcaModel kpca_fit(const Eigen::MatrixXd& x, Kernel kernel, Eigen::Index n_components,
                   std::optional<double> gamma = std::nullopt);

Eigen::MatrixXd kpca_transform(const KpcaModel& m, const Eigen::MatrixXd& x_new);

// ---------------------------------------------------------------------------
// Whitening and FastICA
// ---------------------------------------------------------------------------

struct WhitenResult {
  Eigen::MatrixXd x_white;   // rows x retained-dims, identity covariance
  Eigen::MatrixXd w_white;   // retained-dims x original-dims
  Eigen::RowVectorXd mean;   // original-dims
};

WhitenResult whiten(const Eigen::MatrixXd& x);

struct IcaModel {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd w_white;  // n_components x original-dims
  Eigen::MatrixXd w;        // n_components x n_components, orthonormal rows
  Eigen::Index n_components = 20;
  bool converged = false;
  int iterations = 0;
  std::string warning;  // non-empty when the fixed point was not reached
};

IcaModel ica_fit(const Eigen::MatrixXd& x, Eigen::Index n_components = 20,
                 double tol = 1e-6, int max_iter = 500, std::uint64_t seed = 1);

Eigen::MatrixXd ica_transform(const IcaModel& m, const Eigen::MatrixXd& x_new);

// Fits on the concatenated time steps of the selected trials (every sample of
// every chosen trial becomes one row with one column per stream).
IcaModel ica_fit_epochs(const EpochSet& es, const std::vector<std::size_t>& trial_indices,
                        Eigen::Index n_components = 20, double tol = 1e-6,
                        int max_iter = 500, std::uint64_t seed = 1);

// Applies the unmixing per time step; streams become ic01..icNN.
EpochSet ica_transform_epochs(const IcaModel& m, const EpochSet& es);

// Permutation/scale-invariant distance between p and a permutation matrix;
// 0 means p is exactly a scaled permutation, 1 is the worst case.
double amari_index(const Eigen::MatrixXd& p);

}  // namespace fnirs::dimred
