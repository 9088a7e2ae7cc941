#include "fnirs/dimred.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fnirs/rng.hpp"

namespace fnirs::dimred {

namespace {

Eigen::MatrixXd kernel_matrix(Kernel kernel, double gamma, const Eigen::MatrixXd& a,
                              const Eigen::MatrixXd& b) {
  if (kernel == Kernel::kLinear) return a * b.transpose();
  // ||a_i - b_j||^2 = |a_i|^2 + |b_j|^2 - 2 a_i.b_j, computed blockwise.
  Eigen::VectorXd an = a.rowwise().squaredNorm();
  Eigen::VectorXd bn = b.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = (-2.0 * (a * b.transpose())).colwise() + an;
  d2.rowwise() += bn.transpose();
  return (-gamma * d2.cwiseMax(0.0)).array().exp().matrix();
}

// Centres a cross-kernel block against the training kernel statistics.
Eigen::MatrixXd centre_cross_kernel(const Eigen::MatrixXd& k_new,
                                    const Eigen::RowVectorXd& train_col_mean,
                                    double train_total_mean) {
  Eigen::MatrixXd centred = k_new;
  const Eigen::VectorXd row_mean = k_new.rowwise().mean();
  centred.colwise() -= row_mean;
  centred.rowwise() -= train_col_mean;
  centred.array() += train_total_mean;
  return centred;
}

struct EigenDescending {
  Eigen::MatrixXd vectors;  // columns
  Eigen::VectorXd values;
};

EigenDescending symmetric_eigen_descending(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("eigendecomposition failed to converge");
  }
  const Eigen::Index n = m.rows();
  EigenDescending out;
  out.vectors.resize(n, n);
  out.values.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = solver.eigenvalues()(n - 1 - i);
    out.vectors.col(i) = solver.eigenvectors().col(n - 1 - i);
  }
  return out;
}

// Inverse symmetric square root of the (symmetric positive definite) matrix m.
Eigen::MatrixXd inv_sqrt_spd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("eigendecomposition failed to converge");
  }
  Eigen::VectorXd d = solver.eigenvalues();
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d(i) < 1e-14) {
      throw std::runtime_error("orthogonalization hit a rank-deficient iterate");
    }
    d(i) = 1.0 / std::sqrt(d(i));
  }
  return solver.eigenvectors() * d.asDiagonal() * solver.eigenvectors().transpose();
}

// Shared eigen-basis whitening; keeps at most max_dims directions with
// eigenvalues above the floor.
WhitenResult whiten_top(const Eigen::MatrixXd& x, Eigen::Index max_dims) {
  if (x.rows() < 2) throw std::invalid_argument("whiten: need at least 2 rows");
  WhitenResult out;
  out.mean = x.colwise().mean();
  Eigen::MatrixXd centred = x.rowwise() - out.mean;
  const Eigen::MatrixXd cov =
      centred.transpose() * centred / static_cast<double>(x.rows() - 1);
  const EigenDescending eig = symmetric_eigen_descending(cov);
  Eigen::Index keep = 0;
  while (keep < eig.values.size() && keep < max_dims && eig.values(keep) > 1e-12) ++keep;
  if (keep == 0) throw std::invalid_argument("whiten: input has zero variance");
  out.w_white.resize(keep, x.cols());
  for (Eigen::Index i = 0; i < keep; ++i) {
    out.w_white.row(i) = eig.vectors.col(i).transpose() / std::sqrt(eig.values(i));
  }
  out.x_white = centred * out.w_white.transpose();
  return out;
}

}  // namespace

std::string kernel_to_string(Kernel k) {
  return k == Kernel::kLinear ? "linear" : "rbf";
}

Kernel kernel_from_string(const std::string& s) {
  if (s == "linear") return Kernel::kLinear;
  if (s == "rbf") return Kernel::kRbf;
  throw std::invalid_argument("unknown kernel '" + s + "'; allowed: linear, rbf");
}

double default_rbf_gamma(const Eigen::MatrixXd& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centred = x.rowwise() - mean;
  const double mean_var =
      centred.array().square().sum() /
      (static_cast<double>(x.rows()) * static_cast<double>(x.cols()));
  if (mean_var <= 0.0) return 1.0;
  return 1.0 / (static_cast<double>(x.cols()) * mean_var);
}

KpcaModel kpca_fit(const Eigen::MatrixXd& x, Kernel kernel, Eigen::Index n_components,
                   std::optional<double> gamma) {
  const Eigen::Index n = x.rows();
  if (n < 2) throw std::invalid_argument("kpca_fit: need at least 2 rows");
  if (n_components < 1 || n_components > n - 1) {
    throw std::invalid_argument("kpca_fit: n_components must be in [1, rows-1]");
  }
  KpcaModel m;
  m.kernel = kernel;
  m.gamma = (kernel == Kernel::kRbf) ? gamma.value_or(default_rbf_gamma(x)) : 0.0;
  if (kernel == Kernel::kRbf && m.gamma <= 0.0) {
    throw std::invalid_argument("kpca_fit: rbf gamma must be positive");
  }
  m.x_train = x;

  const Eigen::MatrixXd k = kernel_matrix(kernel, m.gamma, x, x);
  const Eigen::RowVectorXd col_mean = k.colwise().mean();
  const double total_mean = k.mean();
  Eigen::MatrixXd centred = k;
  centred.colwise() -= col_mean.transpose();
  centred.rowwise() -= col_mean;
  centred.array() += total_mean;
  // Symmetrize to wash out the asymmetry the two rank-one updates introduce.
  centred = 0.5 * (centred + centred.transpose()).eval();

  const EigenDescending eig = symmetric_eigen_descending(centred);
  Eigen::Index keep = 0;
  while (keep < n_components && eig.values(keep) > 1e-12) ++keep;
  if (keep < n_components) {
    m.warning = "requested " + std::to_string(n_components) + " components but only " +
                std::to_string(keep) + " have positive spectrum; truncated";
  }
  m.n_components = keep;
  m.lambda = eig.values.head(keep);
  m.alpha.resize(n, keep);
  for (Eigen::Index i = 0; i < keep; ++i) {
    m.alpha.col(i) = eig.vectors.col(i) / std::sqrt(eig.values(i));
  }
  return m;
}

Eigen::MatrixXd kpca_transform(const KpcaModel& m, const Eigen::MatrixXd& x_new) {
  if (x_new.cols() != m.x_train.cols()) {
    throw std::invalid_argument("kpca_transform: feature dimension mismatch (got " +
                                std::to_string(x_new.cols()) + ", model has " +
                                std::to_string(m.x_train.cols()) + ")");
  }
  const Eigen::MatrixXd k_train = kernel_matrix(m.kernel, m.gamma, m.x_train, m.x_train);
  const Eigen::RowVectorXd col_mean = k_train.colwise().mean();
  const double total_mean = k_train.mean();
  const Eigen::MatrixXd k_new = kernel_matrix(m.kernel, m.gamma, x_new, m.x_train);
  return centre_cross_kernel(k_new, col_mean, total_mean) * m.alpha;
}

WhitenResult whiten(const Eigen::MatrixXd& x) {
  return whiten_top(x, x.cols());
}

IcaModel ica_fit(const Eigen::MatrixXd& x, Eigen::Index n_components, double tol,
                 int max_iter, std::uint64_t seed) {
  if (n_components < 1 || n_components > std::min(x.rows() - 1, x.cols())) {
    throw std::invalid_argument("ica_fit: n_components must be in [1, min(rows-1, cols)]");
  }
  const WhitenResult wh = whiten_top(x, n_components);
  if (wh.w_white.rows() < n_components) {
    throw std::invalid_argument(
        "ica_fit: only " + std::to_string(wh.w_white.rows()) +
        " directions carry variance; cannot extract " + std::to_string(n_components));
  }

  IcaModel m;
  m.mean = wh.mean;
  m.w_white = wh.w_white;
  m.n_components = n_components;

  rng::Xoshiro256pp gen(rng::derive_seed(seed, "ica/init"));
  Eigen::MatrixXd w(n_components, n_components);
  for (Eigen::Index r = 0; r < n_components; ++r) {
    for (Eigen::Index c = 0; c < n_components; ++c) w(r, c) = gen.normal();
  }
  w = inv_sqrt_spd(w * w.transpose()) * w;

  const Eigen::MatrixXd& z = wh.x_white;  // rows x n_components
  const double inv_n = 1.0 / static_cast<double>(z.rows());
  for (int it = 1; it <= max_iter; ++it) {
    const Eigen::MatrixXd y = z * w.transpose();           // rows x comps
    const Eigen::MatrixXd g = y.array().tanh();            // tanh contrast
    const Eigen::VectorXd g_prime_mean =
        (1.0 - g.array().square()).matrix().colwise().mean().transpose();
    Eigen::MatrixXd w_new =
        (g.transpose() * z) * inv_n - g_prime_mean.asDiagonal() * w;
    w_new = inv_sqrt_spd(w_new * w_new.transpose()) * w_new;

    double delta = 0.0;
    for (Eigen::Index r = 0; r < n_components; ++r) {
      delta = std::max(delta, std::abs(1.0 - std::abs(w_new.row(r).dot(w.row(r)))));
    }
    w = w_new;
    m.iterations = it;
    if (delta < tol) {
      m.converged = true;
      break;
    }
  }
  if (!m.converged) {
    m.warning = "fixed point not reached after " + std::to_string(max_iter) +
                " iterations; returning last iterate";
  }
  m.w = w;
  return m;
}

Eigen::MatrixXd ica_transform(const IcaModel& m, const Eigen::MatrixXd& x_new) {
  if (x_new.cols() != m.mean.cols()) {
    throw std::invalid_argument("ica_transform: feature dimension mismatch (got " +
                                std::to_string(x_new.cols()) + ", model has " +
                                std::to_string(m.mean.cols()) + ")");
  }
  return (x_new.rowwise() - m.mean) * m.w_white.transpose() * m.w.transpose();
}

IcaModel ica_fit_epochs(const EpochSet& es, const std::vector<std::size_t>& trial_indices,
                        Eigen::Index n_components, double tol, int max_iter,
                        std::uint64_t seed) {
  if (trial_indices.empty()) {
    throw std::invalid_argument("ica_fit_epochs: no training trials given");
  }
  const Eigen::Index n_streams = es.n_streams();
  const Eigen::Index n_samples = es.n_samples();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(trial_indices.size()) * n_samples,
                    n_streams);
  Eigen::Index row = 0;
  for (std::size_t idx : trial_indices) {
    if (idx >= es.data.size()) {
      throw std::invalid_argument("ica_fit_epochs: trial index out of range");
    }
    x.middleRows(row, n_samples) = es.data[idx].transpose();
    row += n_samples;
  }
  return ica_fit(x, n_components, tol, max_iter, seed);
}

EpochSet ica_transform_epochs(const IcaModel& m, const EpochSet& es) {
  if (es.n_streams() != m.mean.cols()) {
    throw std::invalid_argument("ica_transform_epochs: epoch set has " +
                                std::to_string(es.n_streams()) + " streams, model has " +
                                std::to_string(m.mean.cols()));
  }
  EpochSet out;
  out.fs = es.fs;
  out.window_s = es.window_s;
  out.labels = es.labels;
  out.stream_names.reserve(static_cast<std::size_t>(m.n_components));
  for (Eigen::Index i = 0; i < m.n_components; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "ic%02d", static_cast<int>(i + 1) % 1000);
    out.stream_names.emplace_back(buf);
  }
  out.data.reserve(es.data.size());
  for (const auto& trial : es.data) {
    out.data.push_back(ica_transform(m, trial.transpose()).transpose());
  }
  return out;
}

double amari_index(const Eigen::MatrixXd& p) {
  if (p.rows() != p.cols() || p.rows() < 1) {
    throw std::invalid_argument("amari_index: square matrix required");
  }
  const Eigen::Index n = p.rows();
  if (n == 1) return 0.0;
  const Eigen::MatrixXd a = p.cwiseAbs();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    acc += a.row(i).sum() / a.row(i).maxCoeff() - 1.0;
    acc += a.col(i).sum() / a.col(i).maxCoeff() - 1.0;
  }
  return acc / (2.0 * static_cast<double>(n) * static_cast<double>(n - 1));
}

}  // namespace fnirs::dimred
