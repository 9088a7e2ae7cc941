#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fnirs/rng.hpp"
#include "fnirs/types.hpp"

namespace fnirs::nn {

// ---------------------------------------------------------------------------
// Tensors
// ---------------------------------------------------------------------------

// Contiguous (batch, time, feature) tensor, row-major in that order.
struct Tensor3 {
  Eigen::Index batch = 0;
  Eigen::Index time = 0;
  Eigen::Index feat = 0;
  Eigen::VectorXd v;

  Tensor3() = default;
  Tensor3(Eigen::Index b, Eigen::Index t, Eigen::Index f)
      : batch(b), time(t), feat(f), v(Eigen::VectorXd::Zero(b * t * f)) {}

  double& at(Eigen::Index b, Eigen::Index t, Eigen::Index f) {
    return v((b * time + t) * feat + f);
  }
  double at(Eigen::Index b, Eigen::Index t, Eigen::Index f) const {
    return v((b * time + t) * feat + f);
  }

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  // All (batch, time) rows stacked, batch-major: shape (batch*time) x feat.
  Eigen::Map<RowMat> flat() { return {v.data(), batch * time, feat}; }
  Eigen::Map<const RowMat> flat() const { return {v.data(), batch * time, feat}; }

  // Copy of one time step across the batch: shape batch x feat.
  Eigen::MatrixXd step(Eigen::Index t) const;
  void set_step(Eigen::Index t, const Eigen::MatrixXd& m);
  void add_step(Eigen::Index t, const Eigen::MatrixXd& m);

  bool all_finite() const { return v.allFinite(); }
};

// ---------------------------------------------------------------------------
// Activations and small numeric ops
// ---------------------------------------------------------------------------

enum class Act { kLinear, kRelu, kSelu };

constexpr double kSeluLambda = 1.0507009873554805;
constexpr double kSeluAlpha = 1.6732632423543772;

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double selu(double x) {
  return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * (std::exp(x) - 1.0);
}

Act act_from_string(const std::string& s);
std::string act_to_string(Act a);

// Elementwise activation of the pre-activation matrix.
Eigen::MatrixXd apply_act(Act a, const Eigen::MatrixXd& z);
// Elementwise derivative with respect to the pre-activation.
Eigen::MatrixXd act_grad(Act a, const Eigen::MatrixXd& z);

Eigen::VectorXd softmax(const Eigen::VectorXd& z);
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z);

// Mean over rows of -log(p_true) with probabilities clamped at 1e-12, plus
// l2 * sum of squared entries over the given kernel matrices.
double loss_forward(const Eigen::MatrixXd& probs, const std::vector<Label>& labels,
                    const std::vector<const Eigen::MatrixXd*>& kernels, double l2);

// i.i.d. normal(0, 1/fan_in) entries; identical for identical seeds.
Eigen::MatrixXd lecun_normal_init(Eigen::Index rows, Eigen::Index cols,
                                  Eigen::Index fan_in, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Stand-alone layer ops (the model layers run the same code paths)
// ---------------------------------------------------------------------------

enum class Mode { kTrain, kInfer };

struct LstmParams {
  // Gate blocks in column order [input | forget | output | candidate].
  Eigen::MatrixXd wx;  // in x 4*units
  Eigen::MatrixXd wh;  // units x 4*units
  Eigen::MatrixXd b;   // 1 x 4*units
  Eigen::Index units() const { return wh.rows(); }
};

// One recurrence step on a whole batch: rows are batch items.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> lstm_cell_forward(
    const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& h_prev,
    const Eigen::MatrixXd& c_prev, const LstmParams& p);

// Inference-mode bidirectional pass; width doubles, time collapses to 1 when
// return_sequences is false.
Tensor3 bilstm_forward(const Tensor3& x, const LstmParams& fwd, const LstmParams& bwd,
                       bool return_sequences);

Tensor3 td_dense_forward(const Tensor3& x, const Eigen::MatrixXd& w,
                         const Eigen::RowVectorXd& b, Act act);

Tensor3 batchnorm_forward(const Tensor3& x, const Eigen::RowVectorXd& gamma,
                          const Eigen::RowVectorXd& beta, Mode mode,
                          Eigen::RowVectorXd& running_mean, Eigen::RowVectorXd& running_var,
                          double momentum = 0.99, double eps = 1e-5);

Tensor3 dropout_forward(const Tensor3& x, double rate, Mode mode, std::uint64_t seed);
Tensor3 gaussian_noise(const Tensor3& x, double sigma, Mode mode, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

struct LayerSpec {
  enum class Kind {
    kGaussianNoise,
    kTimeDistributedDense,
    kBiLstm,
    kBatchNorm,
    kDense,
    kDropout,
    kOutput,
  };
  Kind kind = Kind::kDense;
  int units = 0;
  Act activation = Act::kLinear;
  double rate = 0.0;               // dropout
  double sigma = 0.0;              // gaussian noise
  double recurrent_dropout = 0.0;  // bilstm
  bool return_sequences = false;   // bilstm
};

std::string layer_kind_to_string(LayerSpec::Kind k);
LayerSpec::Kind layer_kind_from_string(const std::string& s);

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 4;
  int max_epochs = 100;
  int early_stop_patience = 10;
  int lr_plateau_patience = 5;
  double lr_plateau_factor = 0.5;
  double min_lr = 1e-5;
  double min_improvement = 1e-4;
  double noise_sigma = 0.1;
  double dropout = 0.1;
  double recurrent_dropout = 0.1;
  double l2 = 0.1;
  int time_stride = 25;
  std::uint64_t seed = 1;
  void validate() const;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  double l2 = 0.1;
  Eigen::Index n_features = 0;
  void validate() const;
};

// Noise-in-front default stack: gaussian_noise, time-distributed dense,
// sequence BiLSTM, batch norm, final-state BiLSTM, dense, dropout, output.
ModelSpec default_model_spec(Eigen::Index n_features, int units, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct ParamRef {
  std::string name;
  Eigen::MatrixXd* value = nullptr;
  Eigen::MatrixXd* grad = nullptr;
  bool kernel = false;  // participates in the l2 penalty
};

struct NamedMatrix {
  std::string name;
  Eigen::MatrixXd value;
};

class Layer;

class Model {
 public:
  Model(const ModelSpec& spec, std::uint64_t init_seed);
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  ~Model();

  const ModelSpec& spec() const { return spec_; }

  // Forward-only loss; stochastic layers draw from a PRNG seeded with
  // draw_seed, so identical seeds give identical losses.
  double loss(const Tensor3& x, const std::vector<Label>& labels, Mode mode,
              std::uint64_t draw_seed);
  // Forward plus full reverse-mode pass; gradients land in param_refs().
  double loss_and_grad(const Tensor3& x, const std::vector<Label>& labels, Mode mode,
                       std::uint64_t draw_seed);

  Eigen::MatrixXd predict_probs(const Tensor3& x);

  std::vector<ParamRef> param_refs();
  // Trainable parameters plus batch-norm running statistics.
  std::vector<NamedMatrix> export_state() const;
  void import_state(const std::vector<NamedMatrix>& state);

  const Eigen::MatrixXd& last_probs() const { return last_probs_; }
  // Smallest |pre-activation| margin at any kinked nonlinearity in the last
  // forward pass (gradient checks need points away from the kinks).
  double min_margin() const;
  std::uint64_t checksum() const;
  // Name of the first layer whose output was non-finite, if any.
  std::string first_nonfinite_layer(const Tensor3& x, Mode mode, std::uint64_t draw_seed);

 private:
  Tensor3 forward(const Tensor3& x, Mode mode, std::uint64_t draw_seed);

  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  Eigen::MatrixXd last_probs_;
};

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct NadamSlot {
  Eigen::ArrayXXd m;
  Eigen::ArrayXXd n;
};

// Nesterov-accelerated Adam step, 1-based shared step counter t:
//   m <- b1*m + (1-b1)*g,  n <- b2*n + (1-b2)*g^2
//   step = lr * (b1*m/(1-b1^(t+1)) + (1-b1)*g/(1-b1^t)) / (sqrt(n/(1-b2^t)) + eps)
void nadam_step(Eigen::MatrixXd& value, const Eigen::MatrixXd& grad, NadamSlot& slot,
                long t, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

// Thrown when a training run produces a non-finite loss; the message names
// the first layer whose output went non-finite.
struct TrainDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EpochStats {
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;     // 0-based epoch whose weights were restored
  int stopped_epoch = -1;  // 0-based last epoch that ran
  std::string stop_reason;
  std::uint64_t checksum = 0;
};

Tensor3 epochs_to_tensor(const EpochSet& es, int stride);

TrainReport train(Model& model, const EpochSet& es_train, const EpochSet& es_val,
                  const TrainConfig& cfg);

// Inference probabilities for every trial of the epoch set, rows sum to 1.
Eigen::MatrixXd predict(Model& model, const EpochSet& es, int stride);

double accuracy_of(const Eigen::MatrixXd& probs, const std::vector<Label>& labels);

struct GridPoint {
  double lr = 0.0;
  double dropout = 0.0;
  int units = 0;
  double val_error = 0.0;
  double val_loss = 0.0;
  int epochs_ran = 0;
};

struct GridResult {
  GridPoint best;
  std::vector<GridPoint> table;
};

GridResult grid_search(const EpochSet& es_train, const EpochSet& es_val,
                       const TrainConfig& base, const std::vector<double>& lrs,
                       const std::vector<double>& dropouts,
                       const std::vector<int>& units_list);

}  // namespace fnirs::nn
