#include <doctest.h>

#include <cmath>

#include "fnirs/nn.hpp"
#include "fnirs/rng.hpp"

using namespace fnirs;
using nn::Act;
using nn::LayerSpec;
using nn::LstmParams;
using nn::Mode;
using nn::Tensor3;

namespace {

Tensor3 random_tensor(Eigen::Index b, Eigen::Index t, Eigen::Index f, std::uint64_t seed) {
  rng::Xoshiro256pp gen(seed);
  Tensor3 x(b, t, f);
  for (Eigen::Index k = 0; k < x.v.size(); ++k) x.v(k) = gen.normal();
  return x;
}

LstmParams random_lstm_params(Eigen::Index in, Eigen::Index units, std::uint64_t seed) {
  LstmParams p;
  p.wx = nn::lecun_normal_init(in, 4 * units, in, rng::derive_seed(seed, "wx"));
  p.wh = nn::lecun_normal_init(units, 4 * units, units, rng::derive_seed(seed, "wh"));
  p.b = 0.1 * nn::lecun_normal_init(1, 4 * units, 1, rng::derive_seed(seed, "b"));
  return p;
}

LstmParams zero_lstm_params(Eigen::Index in, Eigen::Index units) {
  LstmParams p;
  p.wx = Eigen::MatrixXd::Zero(in, 4 * units);
  p.wh = Eigen::MatrixXd::Zero(units, 4 * units);
  p.b = Eigen::MatrixXd::Zero(1, 4 * units);
  return p;
}

// Three-class toy sequences: class k pushes stream k up by a clear margin.
EpochSet toy_epochs(int per_class, std::uint64_t seed, Eigen::Index t_len = 10,
                    int streams = 3) {
  EpochSet es;
  es.fs = 10.0;
  es.window_s = {-5.0, 25.0};
  for (int s = 0; s < streams; ++s) es.stream_names.push_back("s" + std::to_string(s));
  rng::Xoshiro256pp gen(seed);
  for (int k = 0; k < 3; ++k) {
    for (int r = 0; r < per_class; ++r) {
      Eigen::MatrixXd m(streams, t_len);
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
          m(i, j) = 0.25 * gen.normal() + (i == k ? 1.5 : 0.0);
        }
      }
      es.data.push_back(m);
      es.labels.push_back(static_cast<Label>(k));
    }
  }
  return es;
}

nn::ModelSpec tiny_spec(Eigen::Index n_features, int units, const nn::TrainConfig& cfg) {
  return nn::default_model_spec(n_features, units, cfg);
}

}  // namespace

TEST_CASE("pointwise activations follow their closed forms") {
  CHECK(nn::relu(-2.0) == 0.0);
  CHECK(nn::relu(0.0) == 0.0);
  CHECK(nn::relu(3.5) == 3.5);
  CHECK(nn::selu(0.0) == 0.0);
  CHECK(nn::selu(1.0) == doctest::Approx(1.0507009873554805).epsilon(1e-12));
  CHECK(nn::selu(-20.0) ==
        doctest::Approx(-nn::kSeluLambda * nn::kSeluAlpha).epsilon(1e-6));
}

TEST_CASE("softmax is a stable order-preserving distribution") {
  Eigen::VectorXd z =
      nn::softmax((Eigen::VectorXd(3) << 0.0, 0.0, 0.0).finished());
  CHECK(z(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(std::abs(z.sum() - 1.0) < 1e-12);

  z = nn::softmax((Eigen::VectorXd(3) << 1000.0, 0.0, 0.0).finished());
  CHECK(z.allFinite());
  CHECK(z(0) == doctest::Approx(1.0).epsilon(1e-12));

  z = nn::softmax((Eigen::VectorXd(3) << 1.0, 2.0, 3.0).finished());
  CHECK(z(0) == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK(z(1) == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(z(2) == doctest::Approx(0.66524).epsilon(1e-4));
  CHECK(z(0) < z(1));
  CHECK(z(1) < z(2));
}

TEST_CASE("lecun initializer has the right spread and is seed-stable") {
  const Eigen::MatrixXd w = nn::lecun_normal_init(500, 200, 4, 99);
  const double var = w.array().square().mean();
  CHECK(var == doctest::Approx(0.25).epsilon(0.04));
  CHECK((nn::lecun_normal_init(500, 200, 4, 99) - w).cwiseAbs().maxCoeff() == 0.0);

  const Eigen::MatrixXd u = nn::lecun_normal_init(400, 250, 1, 7);
  CHECK(u.array().square().mean() == doctest::Approx(1.0).epsilon(0.05));
  CHECK_THROWS_AS(nn::lecun_normal_init(2, 2, 0, 1), std::invalid_argument);
}

TEST_CASE("time-distributed dense shares one map across positions") {
  const Tensor3 x = random_tensor(2, 4, 3, 5);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(3, 3);
  const Eigen::RowVectorXd zero = Eigen::RowVectorXd::Zero(3);
  const Tensor3 y = nn::td_dense_forward(x, eye, zero, Act::kLinear);
  CHECK((y.v - x.v).cwiseAbs().maxCoeff() == 0.0);

  // Constant-over-time input stays constant over time.
  Tensor3 c(1, 5, 3);
  for (Eigen::Index t = 0; t < 5; ++t) {
    c.at(0, t, 0) = 0.3;
    c.at(0, t, 1) = -1.0;
    c.at(0, t, 2) = 2.0;
  }
  const Eigen::MatrixXd w = nn::lecun_normal_init(3, 4, 3, 11);
  const Eigen::RowVectorXd b = Eigen::RowVectorXd::Constant(4, 0.2);
  const Tensor3 cy = nn::td_dense_forward(c, w, b, Act::kSelu);
  for (Eigen::Index t = 1; t < 5; ++t) {
    for (Eigen::Index f = 0; f < 4; ++f) CHECK(cy.at(0, t, f) == cy.at(0, 0, f));
  }

  // Batch of two equals the two singletons stacked.
  const Tensor3 both = nn::td_dense_forward(x, w, b, Act::kSelu);
  for (Eigen::Index bi = 0; bi < 2; ++bi) {
    Tensor3 one(1, 4, 3);
    one.v = x.v.segment(bi * 12, 12);
    const Tensor3 oy = nn::td_dense_forward(one, w, b, Act::kSelu);
    for (Eigen::Index t = 0; t < 4; ++t) {
      for (Eigen::Index f = 0; f < 4; ++f) CHECK(oy.at(0, t, f) == both.at(bi, t, f));
    }
  }
  CHECK_THROWS_AS(nn::td_dense_forward(x, Eigen::MatrixXd::Zero(5, 2), zero, Act::kLinear),
                  std::invalid_argument);
}

TEST_CASE("the recurrence cell follows the gate algebra") {
  const Eigen::Index u = 3;
  LstmParams p = zero_lstm_params(2, u);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, 2, 0.7);
  const Eigen::MatrixXd h0 = Eigen::MatrixXd::Zero(1, u);
  Eigen::MatrixXd c_prev(1, u);
  c_prev << -2.0, -0.4, 0.0;

  // Zero weights: gates sit at 1/2, the candidate at relu(0) = 0.
  auto [h, c] = nn::lstm_cell_forward(x, h0, c_prev, p);
  CHECK((c - 0.5 * c_prev).cwiseAbs().maxCoeff() == 0.0);
  CHECK(h.cwiseAbs().maxCoeff() == 0.0);  // relu of a non-positive cell

  // Zero cell with a negative candidate pre-activation stays at zero.
  p.b(0, 3 * u) = -1.0;
  p.b(0, 3 * u + 1) = -1.0;
  p.b(0, 3 * u + 2) = -1.0;
  auto [h2, c2] = nn::lstm_cell_forward(x, h0, Eigen::MatrixXd::Zero(1, u), p);
  CHECK(c2.cwiseAbs().maxCoeff() == 0.0);
  CHECK(h2.cwiseAbs().maxCoeff() == 0.0);

  // A saturated forget gate carries the cell through.
  p = zero_lstm_params(2, u);
  p.b.block(0, u, 1, u).setConstant(10.0);
  c_prev << 1.0, 2.5, -0.5;
  auto [h3, c3] = nn::lstm_cell_forward(x, h0, c_prev, p);
  for (Eigen::Index k = 0; k < u; ++k) {
    CHECK(c3(0, k) == doctest::Approx(c_prev(0, k)).epsilon(1e-4));
  }
  CHECK(h3(0, 0) == doctest::Approx(0.5 * c3(0, 0)).epsilon(1e-12));
}

TEST_CASE("bidirectional pass mirrors under time reversal with swapped halves") {
  const Eigen::Index b = 2, t_len = 6, f = 3, u = 4;
  const Tensor3 x = random_tensor(b, t_len, f, 21);
  const LstmParams pa = random_lstm_params(f, u, 31);
  const LstmParams pb = random_lstm_params(f, u, 32);

  Tensor3 x_rev(b, t_len, f);
  for (Eigen::Index t = 0; t < t_len; ++t) x_rev.set_step(t, x.step(t_len - 1 - t));

  const Tensor3 y = nn::bilstm_forward(x, pa, pb, true);
  const Tensor3 yr = nn::bilstm_forward(x_rev, pb, pa, true);
  CHECK(y.feat == 2 * u);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    const Eigen::MatrixXd a = y.step(t);
    const Eigen::MatrixXd bb = yr.step(t_len - 1 - t);
    CHECK((a.leftCols(u) - bb.rightCols(u)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.rightCols(u) - bb.leftCols(u)).cwiseAbs().maxCoeff() == 0.0);
  }

  // Final-state mode concatenates the two terminal states.
  const Tensor3 fin = nn::bilstm_forward(x, pa, pb, false);
  CHECK(fin.time == 1);
  const Eigen::MatrixXd last = fin.step(0);
  CHECK((last.leftCols(u) - y.step(t_len - 1).leftCols(u)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((last.rightCols(u) - y.step(0).rightCols(u)).cwiseAbs().maxCoeff() == 0.0);

  // One step: both directions see the same input.
  const Tensor3 x1 = random_tensor(1, 1, f, 8);
  const Tensor3 y1 = nn::bilstm_forward(x1, pa, pa, true);
  CHECK((y1.step(0).leftCols(u) - y1.step(0).rightCols(u)).cwiseAbs().maxCoeff() == 0.0);

  // Zero weights give a zero output of doubled width.
  const Tensor3 z = nn::bilstm_forward(x, zero_lstm_params(f, u), zero_lstm_params(f, u), true);
  CHECK(z.feat == 2 * u);
  CHECK(z.v.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("batch normalization standardizes and tracks running statistics") {
  Tensor3 x = random_tensor(4, 5, 3, 17);
  x.v.array() = x.v.array() * 2.0 + 1.5;
  Eigen::RowVectorXd rm = Eigen::RowVectorXd::Zero(3);
  Eigen::RowVectorXd rv = Eigen::RowVectorXd::Ones(3);
  const Eigen::RowVectorXd gamma = Eigen::RowVectorXd::Ones(3);
  const Eigen::RowVectorXd beta = Eigen::RowVectorXd::Zero(3);

  const Tensor3 y = nn::batchnorm_forward(x, gamma, beta, Mode::kTrain, rm, rv);
  const Eigen::MatrixXd yf = y.flat();
  for (Eigen::Index c = 0; c < 3; ++c) {
    CHECK(yf.col(c).mean() == doctest::Approx(0.0).epsilon(1e-6));
    const double var = yf.col(c).array().square().mean();
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
  CHECK(rm.cwiseAbs().minCoeff() > 0.0);  // moved off the initial zeros

  // Inference applies the closed form with the provided running stats.
  Eigen::RowVectorXd mu(3), var(3);
  mu << 0.5, -1.0, 2.0;
  var << 4.0, 0.25, 1.0;
  Eigen::RowVectorXd mu_c = mu, var_c = var;
  const Tensor3 yi = nn::batchnorm_forward(x, gamma, beta, Mode::kInfer, mu_c, var_c);
  for (Eigen::Index k = 0; k < 6; ++k) {
    const double want = (x.v(3 * k) - mu(0)) / std::sqrt(var(0) + 1e-5);
    CHECK(yi.v(3 * k) == doctest::Approx(want).epsilon(1e-12));
  }
  CHECK((mu_c - mu).cwiseAbs().maxCoeff() == 0.0);  // inference leaves running stats alone

  // Constant features normalize to zero thanks to the epsilon guard.
  Tensor3 c(3, 1, 2);
  c.v.setConstant(7.0);
  Eigen::RowVectorXd rm2 = Eigen::RowVectorXd::Zero(2);
  Eigen::RowVectorXd rv2 = Eigen::RowVectorXd::Ones(2);
  const Tensor3 yc = nn::batchnorm_forward(c, Eigen::RowVectorXd::Ones(2),
                                           Eigen::RowVectorXd::Zero(2), Mode::kTrain, rm2,
                                           rv2);
  CHECK(yc.v.cwiseAbs().maxCoeff() < 1e-9);

  Tensor3 single(1, 1, 2);
  CHECK_THROWS_AS(nn::batchnorm_forward(single, Eigen::RowVectorXd::Ones(2),
                                        Eigen::RowVectorXd::Zero(2), Mode::kTrain, rm2,
                                        rv2),
                  std::invalid_argument);
}

TEST_CASE("dropout and noise vanish at inference and at rate zero") {
  const Tensor3 x = random_tensor(2, 3, 4, 23);
  CHECK((nn::dropout_forward(x, 0.3, Mode::kInfer, 1).v - x.v).cwiseAbs().maxCoeff() == 0.0);
  CHECK((nn::dropout_forward(x, 0.0, Mode::kTrain, 1).v - x.v).cwiseAbs().maxCoeff() == 0.0);
  CHECK((nn::gaussian_noise(x, 0.5, Mode::kInfer, 1).v - x.v).cwiseAbs().maxCoeff() == 0.0);
  CHECK((nn::gaussian_noise(x, 0.0, Mode::kTrain, 1).v - x.v).cwiseAbs().maxCoeff() == 0.0);

  Tensor3 ones(10, 100, 1000);
  ones.v.setOnes();
  const Tensor3 dropped = nn::dropout_forward(ones, 0.1, Mode::kTrain, 77);
  const double survivors =
      (dropped.v.array() > 0.0).cast<double>().sum() / static_cast<double>(ones.v.size());
  CHECK(survivors == doctest::Approx(0.9).epsilon(0.0025));
  CHECK(dropped.v.mean() == doctest::Approx(1.0).epsilon(0.005));
  CHECK_THROWS_AS(nn::dropout_forward(x, 1.0, Mode::kTrain, 1), std::invalid_argument);
}

TEST_CASE("the loss combines clamped cross-entropy with the kernel penalty") {
  Eigen::MatrixXd perfect(2, 3);
  perfect << 1.0, 0.0, 0.0, 0.0, 1.0, 0.0;
  const std::vector<Label> y{Label::MA, Label::MI};
  CHECK(nn::loss_forward(perfect, y, {}, 0.1) == doctest::Approx(0.0).epsilon(1e-9));

  Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(4, 3, 1.0 / 3.0);
  const std::vector<Label> y4{Label::MA, Label::MI, Label::IS, Label::MA};
  CHECK(nn::loss_forward(uniform, y4, {}, 0.1) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));

  const Eigen::MatrixXd w = Eigen::MatrixXd::Constant(1, 1, 2.0);
  CHECK(nn::loss_forward(uniform, y4, {&w}, 0.1) ==
        doctest::Approx(std::log(3.0) + 0.4).epsilon(1e-12));
}

TEST_CASE("the optimizer matches a hand-rolled scalar oracle") {
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(1, 1);
  Eigen::MatrixXd g = Eigen::MatrixXd::Ones(1, 1);
  nn::NadamSlot slot;

  // Independent scalar evaluation of the same update formulas.
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 1e-3;
  double m = 0.0, n = 0.0, theta = 0.0;
  std::vector<double> updates;
  for (long t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * 1.0;
    n = b2 * n + (1 - b2) * 1.0;
    const double m_hat = m / (1.0 - std::pow(b1, static_cast<double>(t + 1)));
    const double g_hat = 1.0 / (1.0 - std::pow(b1, static_cast<double>(t)));
    const double n_hat = n / (1.0 - std::pow(b2, static_cast<double>(t)));
    const double upd = lr * (b1 * m_hat + (1 - b1) * g_hat) / (std::sqrt(n_hat) + eps);
    updates.push_back(upd);
    theta -= upd;
  }

  nn::nadam_step(v, g, slot, 1, lr);
  CHECK(v(0, 0) == doctest::Approx(-updates[0]).epsilon(1e-12));
  const double first = -v(0, 0);
  nn::nadam_step(v, g, slot, 2, lr);
  CHECK(v(0, 0) == doctest::Approx(theta).epsilon(1e-12));
  CHECK(std::abs(theta - (-first)) < first);  // the second step is smaller

  // Zero gradient with fresh state leaves parameters untouched.
  Eigen::MatrixXd v0 = Eigen::MatrixXd::Constant(2, 2, 3.25);
  nn::NadamSlot fresh;
  nn::nadam_step(v0, Eigen::MatrixXd::Zero(2, 2), fresh, 1, 0.1);
  CHECK((v0.array() == 3.25).all());
}

TEST_CASE("analytic gradients match central differences on the tiny stack") {
  const Eigen::Index f = 3, t_len = 5, b = 2;
  nn::TrainConfig cfg;
  cfg.l2 = 0.05;
  const std::vector<Label> y{Label::MI, Label::IS};

  std::uint64_t good = 0;
  for (std::uint64_t s = 1; s <= 80 && good == 0; ++s) {
    nn::Model probe(tiny_spec(f, 4, cfg), rng::derive_seed(s, "init"));
    const Tensor3 x = random_tensor(b, t_len, f, rng::derive_seed(s, "x"));
    probe.loss_and_grad(x, y, Mode::kTrain, s);
    if (probe.min_margin() > 1e-3) good = s;
  }
  REQUIRE(good != 0);

  nn::Model model(tiny_spec(f, 4, cfg), rng::derive_seed(good, "init"));
  const Tensor3 x = random_tensor(b, t_len, f, rng::derive_seed(good, "x"));
  model.loss_and_grad(x, y, Mode::kTrain, good);

  auto refs = model.param_refs();
  std::vector<Eigen::MatrixXd> analytic;
  analytic.reserve(refs.size());
  for (const auto& r : refs) analytic.push_back(*r.grad);

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    Eigen::MatrixXd& value = *refs[k].value;
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      for (Eigen::Index c = 0; c < value.cols(); ++c) {
        const double orig = value(r, c);
        value(r, c) = orig + h;
        const double lp = model.loss(x, y, Mode::kTrain, good);
        value(r, c) = orig - h;
        const double lm = model.loss(x, y, Mode::kTrain, good);
        value(r, c) = orig;
        const double fd = (lp - lm) / (2.0 * h);
        const double a = analytic[k](r, c);
        const double rel =
            std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-3});
        worst = std::max(worst, rel);
      }
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("gradient vanishes at a solved one-parameter minimum") {
  // One input feature, output layer only; every parameter except w(0,0) is
  // zero, so the loss along that coordinate is -log softmax([w,0,0])_0 + l2*w^2.
  nn::ModelSpec spec;
  spec.n_features = 1;
  spec.l2 = 0.1;
  LayerSpec out;
  out.kind = LayerSpec::Kind::kOutput;
  out.units = 3;
  spec.layers.push_back(out);
  nn::Model model(spec, 3);

  // Stationary point from the closed-form derivative p0(w) - 1 + 2*l2*w.
  double lo = 0.0, hi = 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double p0 = std::exp(mid) / (std::exp(mid) + 2.0);
    ((p0 - 1.0 + 2.0 * spec.l2 * mid) > 0.0 ? hi : lo) = mid;
  }
  const double w_star = 0.5 * (lo + hi);

  auto refs = model.param_refs();
  for (auto& r : refs) r.value->setZero();
  (*refs[0].value)(0, 0) = w_star;

  Tensor3 x(1, 1, 1);
  x.v(0) = 1.0;
  model.loss_and_grad(x, {Label::MA}, Mode::kInfer, 0);
  CHECK(std::abs((*refs[0].grad)(0, 0)) < 1e-10);

  // The l2 share of any kernel gradient is exactly 2*l2*w.
  nn::ModelSpec plain = spec;
  plain.l2 = 0.0;
  nn::Model bare(plain, 3);
  auto bare_refs = bare.param_refs();
  for (auto& r : bare_refs) r.value->setZero();
  (*bare_refs[0].value)(0, 0) = w_star;
  bare.loss_and_grad(x, {Label::MA}, Mode::kInfer, 0);
  const double diff = (*refs[0].grad)(0, 0) - (*bare_refs[0].grad)(0, 0);
  CHECK(diff == doctest::Approx(2.0 * 0.1 * w_star).epsilon(1e-12));
}

TEST_CASE("training is deterministic and learns the separable toy task") {
  const EpochSet es_train = toy_epochs(20, 41);
  const EpochSet es_val = toy_epochs(10, 42);

  nn::TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.l2 = 1e-3;
  cfg.time_stride = 1;
  cfg.seed = 5;

  const nn::ModelSpec spec = nn::default_model_spec(3, 8, cfg);
  nn::Model m1(spec, rng::derive_seed(cfg.seed, "init"));
  const nn::TrainReport r1 = nn::train(m1, es_train, es_val, cfg);
  nn::Model m2(spec, rng::derive_seed(cfg.seed, "init"));
  const nn::TrainReport r2 = nn::train(m2, es_train, es_val, cfg);

  REQUIRE(r1.epochs.size() == r2.epochs.size());
  for (std::size_t e = 0; e < r1.epochs.size(); ++e) {
    CHECK(r1.epochs[e].train_loss == r2.epochs[e].train_loss);
    CHECK(r1.epochs[e].val_loss == r2.epochs[e].val_loss);
  }
  CHECK(r1.checksum == r2.checksum);
  CHECK(m1.checksum() == m2.checksum());

  const double acc = nn::accuracy_of(nn::predict(m1, es_val, 1), es_val.labels);
  CHECK(acc >= 0.9);
  CHECK(static_cast<int>(r1.epochs.size()) <= 100);
  CHECK(std::isfinite(r1.epochs.back().val_loss));
}

TEST_CASE("zero early-stop patience halts at the first stall") {
  const EpochSet es_train = toy_epochs(8, 51);
  const EpochSet es_val = toy_epochs(4, 52);
  nn::TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.l2 = 1e-3;
  cfg.time_stride = 1;
  cfg.early_stop_patience = 0;
  cfg.seed = 9;
  nn::Model model(nn::default_model_spec(3, 4, cfg), rng::derive_seed(cfg.seed, "init"));
  const nn::TrainReport rep = nn::train(model, es_train, es_val, cfg);

  // Every epoch before the stop must have improved on the running best.
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e + 1 < rep.epochs.size(); ++e) {
    CHECK(rep.epochs[e].val_loss < best - 1e-4);
    best = std::min(best, rep.epochs[e].val_loss);
  }
  if (rep.stop_reason == "early_stop") {
    CHECK(rep.epochs.back().val_loss >= best - 1e-4);
  }
}

TEST_CASE("prediction is a pure per-trial function") {
  const EpochSet es = toy_epochs(4, 61);
  nn::TrainConfig cfg;
  cfg.time_stride = 1;
  nn::Model model(nn::default_model_spec(3, 6, cfg), 77);

  const Eigen::MatrixXd all = nn::predict(model, es, 1);
  CHECK(all.rows() == 12);
  for (Eigen::Index r = 0; r < all.rows(); ++r) {
    CHECK(std::abs(all.row(r).sum() - 1.0) < 1e-9);
  }

  // Duplicate trials produce identical rows.
  EpochSet dup = es;
  dup.data.push_back(es.data[0]);
  dup.labels.push_back(es.labels[0]);
  const Eigen::MatrixXd d = nn::predict(model, dup, 1);
  CHECK((d.row(12) - d.row(0)).cwiseAbs().maxCoeff() == 0.0);

  // Partitioning the batch does not change any row.
  EpochSet head = es, tail = es;
  head.data.assign(es.data.begin(), es.data.begin() + 5);
  head.labels.assign(es.labels.begin(), es.labels.begin() + 5);
  tail.data.assign(es.data.begin() + 5, es.data.end());
  tail.labels.assign(es.labels.begin() + 5, es.labels.end());
  const Eigen::MatrixXd h = nn::predict(model, head, 1);
  const Eigen::MatrixXd t = nn::predict(model, tail, 1);
  for (Eigen::Index r = 0; r < 5; ++r) {
    CHECK((h.row(r) - all.row(r)).cwiseAbs().maxCoeff() < 1e-12);
  }
  for (Eigen::Index r = 0; r < 7; ++r) {
    CHECK((t.row(r) - all.row(r + 5)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("state export and import reproduce the model exactly") {
  const EpochSet es = toy_epochs(2, 71);
  nn::TrainConfig cfg;
  cfg.time_stride = 1;
  const nn::ModelSpec spec = nn::default_model_spec(3, 4, cfg);
  nn::Model a(spec, 123);
  const auto state = a.export_state();

  nn::Model b(spec, 456);
  CHECK(b.checksum() != a.checksum());
  b.import_state(state);
  CHECK(b.checksum() == a.checksum());
  const Eigen::MatrixXd pa = nn::predict(a, es, 1);
  const Eigen::MatrixXd pb = nn::predict(b, es, 1);
  CHECK((pa - pb).cwiseAbs().maxCoeff() == 0.0);

  auto broken = state;
  broken.pop_back();
  CHECK_THROWS_AS(b.import_state(broken), std::invalid_argument);
}

TEST_CASE("a divergent model aborts with the offending layer named") {
  const EpochSet es_train = toy_epochs(4, 81);
  const EpochSet es_val = toy_epochs(2, 82);
  nn::TrainConfig cfg;
  cfg.time_stride = 1;
  nn::Model model(nn::default_model_spec(3, 4, cfg), 11);
  auto refs = model.param_refs();
  (*refs[0].value)(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(nn::train(model, es_train, es_val, cfg),
                       doctest::Contains("td_dense"), nn::TrainDivergence);
}

TEST_CASE("model specs reject malformed stacks") {
  nn::TrainConfig cfg;
  nn::ModelSpec spec = nn::default_model_spec(4, 8, cfg);
  spec.layers.pop_back();
  CHECK_THROWS_AS(nn::Model(spec, 1), std::invalid_argument);

  nn::ModelSpec two = nn::default_model_spec(4, 8, cfg);
  two.layers.push_back(two.layers.back());
  CHECK_THROWS_AS(nn::Model(two, 1), std::invalid_argument);

  nn::ModelSpec open_seq = nn::default_model_spec(4, 8, cfg);
  for (auto& l : open_seq.layers) {
    if (l.kind == LayerSpec::Kind::kBiLstm) l.return_sequences = true;
  }
  CHECK_THROWS_AS(nn::Model(open_seq, 1), std::invalid_argument);
}

TEST_CASE("epoch tensors decimate time by the stride") {
  EpochSet es;
  es.fs = 13.3;
  es.stream_names = {"a", "b"};
  Eigen::MatrixXd trial(2, 399);
  for (Eigen::Index c = 0; c < 399; ++c) {
    trial(0, c) = static_cast<double>(c);
    trial(1, c) = -static_cast<double>(c);
  }
  es.data.push_back(trial);
  es.labels.push_back(Label::MA);

  const Tensor3 x3 = nn::epochs_to_tensor(es, 3);
  CHECK(x3.time == 133);
  CHECK(x3.at(0, 0, 0) == 0.0);
  CHECK(x3.at(0, 1, 0) == 3.0);
  CHECK(x3.at(0, 132, 1) == -396.0);

  const Tensor3 x1 = nn::epochs_to_tensor(es, 1);
  CHECK(x1.time == 399);
  CHECK(x1.at(0, 398, 0) == 398.0);
}

TEST_CASE("grid search scans the product and skips the divergent cell") {
  const EpochSet es_train = toy_epochs(8, 91);
  const EpochSet es_val = toy_epochs(4, 92);
  nn::TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.l2 = 1e-3;
  cfg.time_stride = 1;
  cfg.max_epochs = 30;
  cfg.seed = 13;

  const nn::GridResult one = nn::grid_search(es_train, es_val, cfg, {0.01}, {0.1}, {4});
  CHECK(one.table.size() == 1);
  CHECK(one.best.lr == 0.01);
  CHECK(one.best.units == 4);

  const nn::GridResult two =
      nn::grid_search(es_train, es_val, cfg, {0.01, 10.0}, {0.1}, {4});
  CHECK(two.table.size() == 2);
  CHECK(two.best.lr == 0.01);

  const nn::GridResult full =
      nn::grid_search(es_train, es_val, cfg, {0.01, 0.003}, {0.0, 0.1}, {4, 6});
  CHECK(full.table.size() == 8);
}
