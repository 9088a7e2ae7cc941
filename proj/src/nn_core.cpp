#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "fnirs/nn.hpp"

namespace fnirs::nn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) {
  return (1.0 / (1.0 + (-z.array()).exp())).matrix();
}

// Shared recurrence step; xz is the input affine slice x_t * wx.
void lstm_step_from_xz(const Eigen::MatrixXd& xz, const Eigen::MatrixXd& h_used,
                       const Eigen::MatrixXd& c_prev, const LstmParams& p,
                       Eigen::MatrixXd* i, Eigen::MatrixXd* f, Eigen::MatrixXd* o,
                       Eigen::MatrixXd* g, Eigen::ArrayXXd* gmask, Eigen::MatrixXd* c,
                       Eigen::MatrixXd* h, double* margin) {
  const Eigen::Index u = p.units();
  Eigen::MatrixXd z = xz + h_used * p.wh;
  z.rowwise() += p.b.row(0);
  *i = sigmoid(z.leftCols(u));
  *f = sigmoid(z.middleCols(u, u));
  *o = sigmoid(z.middleCols(2 * u, u));
  const Eigen::MatrixXd zg = z.rightCols(u);
  *gmask = (zg.array() > 0.0).cast<double>();
  *g = zg.cwiseMax(0.0);
  *c = f->cwiseProduct(c_prev) + i->cwiseProduct(*g);
  *h = o->cwiseProduct(c->cwiseMax(0.0));
  if (margin != nullptr) {
    *margin = std::min(*margin, zg.cwiseAbs().minCoeff());
    for (Eigen::Index r = 0; r < c->rows(); ++r) {
      for (Eigen::Index cc = 0; cc < c->cols(); ++cc) {
        const double v = (*c)(r, cc);
        if (v > 0.0) *margin = std::min(*margin, v);
      }
    }
  }
}

struct BatchNormCache {
  bool train = false;
  Eigen::MatrixXd xhat;           // rows x feat
  Eigen::RowVectorXd inv_std;     // feat
};

Tensor3 batchnorm_core(const Tensor3& x, const Eigen::RowVectorXd& gamma,
                       const Eigen::RowVectorXd& beta, Mode mode,
                       Eigen::RowVectorXd& running_mean, Eigen::RowVectorXd& running_var,
                       double momentum, double eps, BatchNormCache* cache) {
  const Eigen::Index rows = x.batch * x.time;
  const auto xin = x.flat();
  Eigen::RowVectorXd mu;
  Eigen::RowVectorXd var;
  if (mode == Mode::kTrain) {
    if (rows < 2) {
      throw std::invalid_argument("batchnorm: training batch of 1 sample");
    }
    mu = xin.colwise().mean();
    var = (xin.rowwise() - mu).array().square().colwise().sum().matrix() /
          static_cast<double>(rows);
    running_mean = momentum * running_mean + (1.0 - momentum) * mu;
    running_var = momentum * running_var + (1.0 - momentum) * var;
  } else {
    mu = running_mean;
    var = running_var;
  }
  const Eigen::RowVectorXd inv_std =
      (var.array() + eps).sqrt().inverse().matrix();
  Eigen::MatrixXd xhat = (xin.rowwise() - mu).array().rowwise() * inv_std.array();
  Tensor3 y(x.batch, x.time, x.feat);
  y.flat() = (xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
  if (cache != nullptr) {
    cache->train = (mode == Mode::kTrain);
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
  }
  return y;
}

Tensor3 dropout_core(const Tensor3& x, double rate, Mode mode, rng::Xoshiro256pp* gen,
                     Eigen::ArrayXd* mask_out) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  }
  if (mode == Mode::kInfer || rate == 0.0) {
    if (mask_out != nullptr) mask_out->resize(0);
    return x;
  }
  const double scale = 1.0 / (1.0 - rate);
  Tensor3 y = x;
  Eigen::ArrayXd mask(x.v.size());
  for (Eigen::Index k = 0; k < x.v.size(); ++k) {
    mask(k) = (gen->uniform() > rate) ? scale : 0.0;
    y.v(k) *= mask(k);
  }
  if (mask_out != nullptr) *mask_out = std::move(mask);
  return y;
}

Tensor3 noise_core(const Tensor3& x, double sigma, Mode mode, rng::Xoshiro256pp* gen) {
  if (sigma < 0.0) throw std::invalid_argument("noise sigma must be non-negative");
  if (mode == Mode::kInfer || sigma == 0.0) return x;
  Tensor3 y = x;
  for (Eigen::Index k = 0; k < y.v.size(); ++k) y.v(k) += sigma * gen->normal();
  return y;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor3
// ---------------------------------------------------------------------------

Eigen::MatrixXd Tensor3::step(Eigen::Index t) const {
  Eigen::MatrixXd m(batch, feat);
  for (Eigen::Index b = 0; b < batch; ++b) {
    m.row(b) =
        Eigen::Map<const Eigen::RowVectorXd>(v.data() + (b * time + t) * feat, feat);
  }
  return m;
}

void Tensor3::set_step(Eigen::Index t, const Eigen::MatrixXd& m) {
  for (Eigen::Index b = 0; b < batch; ++b) {
    Eigen::Map<Eigen::RowVectorXd>(v.data() + (b * time + t) * feat, feat) = m.row(b);
  }
}

void Tensor3::add_step(Eigen::Index t, const Eigen::MatrixXd& m) {
  for (Eigen::Index b = 0; b < batch; ++b) {
    Eigen::Map<Eigen::RowVectorXd>(v.data() + (b * time + t) * feat, feat) += m.row(b);
  }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

Act act_from_string(const std::string& s) {
  if (s == "linear") return Act::kLinear;
  if (s == "relu") return Act::kRelu;
  if (s == "selu") return Act::kSelu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

std::string act_to_string(Act a) {
  switch (a) {
    case Act::kLinear: return "linear";
    case Act::kRelu: return "relu";
    case Act::kSelu: return "selu";
  }
  return "linear";
}

Eigen::MatrixXd apply_act(Act a, const Eigen::MatrixXd& z) {
  switch (a) {
    case Act::kLinear: return z;
    case Act::kRelu: return z.cwiseMax(0.0);
    case Act::kSelu:
      return z.unaryExpr([](double x) { return selu(x); });
  }
  return z;
}

Eigen::MatrixXd act_grad(Act a, const Eigen::MatrixXd& z) {
  switch (a) {
    case Act::kLinear: return Eigen::MatrixXd::Ones(z.rows(), z.cols());
    case Act::kRelu:
      return (z.array() > 0.0).cast<double>().matrix();
    case Act::kSelu:
      return z.unaryExpr([](double x) {
        return x > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x);
      });
  }
  return Eigen::MatrixXd::Ones(z.rows(), z.cols());
}

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const double m = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - m).exp();
  return e / e.sum();
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd p(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    p.row(r) = softmax(z.row(r).transpose()).transpose();
  }
  return p;
}

double loss_forward(const Eigen::MatrixXd& probs, const std::vector<Label>& labels,
                    const std::vector<const Eigen::MatrixXd*>& kernels, double l2) {
  if (probs.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw std::invalid_argument("loss_forward: probability/label count mismatch");
  }
  double ce = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const double p = std::max(probs(r, static_cast<int>(labels[r])), 1e-12);
    ce -= std::log(p);
  }
  ce /= static_cast<double>(probs.rows());
  double penalty = 0.0;
  for (const auto* w : kernels) penalty += w->squaredNorm();
  return ce + l2 * penalty;
}

Eigen::MatrixXd lecun_normal_init(Eigen::Index rows, Eigen::Index cols,
                                  Eigen::Index fan_in, std::uint64_t seed) {
  if (fan_in < 1) throw std::invalid_argument("lecun_normal_init: fan_in must be >= 1");
  rng::Xoshiro256pp gen(seed);
  const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Eigen::MatrixXd w(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = sd * gen.normal();
  }
  return w;
}

// ---------------------------------------------------------------------------
// Layer classes
// ---------------------------------------------------------------------------

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  const std::string& name() const { return name_; }
  virtual Tensor3 forward(const Tensor3& x, Mode mode, rng::Xoshiro256pp* gen) = 0;
  virtual Tensor3 backward(const Tensor3& dy) = 0;
  virtual void collect(std::vector<ParamRef>& /*out*/) {}
  virtual void collect_state(std::vector<NamedMatrix>& /*out*/) const {}
  virtual void restore_state(const std::map<std::string, const Eigen::MatrixXd*>& /*in*/,
                             std::vector<std::string>* /*used*/) {}
  virtual double margin() const { return kInf; }

 private:
  std::string name_;
};

namespace {

class GaussianNoiseLayer final : public Layer {
 public:
  GaussianNoiseLayer(std::string name, double sigma)
      : Layer(std::move(name)), sigma_(sigma) {}

  Tensor3 forward(const Tensor3& x, Mode mode, rng::Xoshiro256pp* gen) override {
    return noise_core(x, sigma_, mode, gen);
  }
  Tensor3 backward(const Tensor3& dy) override { return dy; }

 private:
  double sigma_;
};

class DropoutLayer final : public Layer {
 public:
  DropoutLayer(std::string name, double rate) : Layer(std::move(name)), rate_(rate) {}

  Tensor3 forward(const Tensor3& x, Mode mode, rng::Xoshiro256pp* gen) override {
    return dropout_core(x, rate_, mode, gen, &mask_);
  }
  Tensor3 backward(const Tensor3& dy) override {
    if (mask_.size() == 0) return dy;
    Tensor3 dx = dy;
    dx.v.array() *= mask_;
    return dx;
  }

 private:
  double rate_;
  Eigen::ArrayXd mask_;
};

class TdDenseLayer final : public Layer {
 public:
  TdDenseLayer(std::string name, Eigen::Index in, Eigen::Index units, Act act,
               std::uint64_t init_seed)
      : Layer(std::move(name)), act_(act) {
    w_ = lecun_normal_init(in, units, in, rng::derive_seed(init_seed, this->name() + "/w"));
    b_ = Eigen::MatrixXd::Zero(1, units);
    dw_ = Eigen::MatrixXd::Zero(in, units);
    db_ = Eigen::MatrixXd::Zero(1, units);
  }

  Tensor3 forward(const Tensor3& x, Mode /*mode*/, rng::Xoshiro256pp* /*gen*/) override {
    in_batch_ = x.batch;
    in_time_ = x.time;
    x_ = x.flat();
    z_ = x_ * w_;
    z_.rowwise() += b_.row(0);
    margin_ = (act_ == Act::kLinear) ? kInf : z_.cwiseAbs().minCoeff();
    Tensor3 y(x.batch, x.time, w_.cols());
    y.flat() = apply_act(act_, z_);
    return y;
  }

  Tensor3 backward(const Tensor3& dy) override {
    const Eigen::MatrixXd dz = dy.flat().cwiseProduct(act_grad(act_, z_));
    dw_ += x_.transpose() * dz;
    db_.row(0) += dz.colwise().sum();
    Tensor3 dx(in_batch_, in_time_, w_.rows());
    dx.flat() = dz * w_.transpose();
    return dx;
  }

  void collect(std::vector<ParamRef>& out) override {
    out.push_back({name() + "/w", &w_, &dw_, true});
    out.push_back({name() + "/b", &b_, &db_, false});
  }
  void collect_state(std::vector<NamedMatrix>& out) const override {
    out.push_back({name() + "/w", w_});
    out.push_back({name() + "/b", b_});
  }
  void restore_state(const std::map<std::string, const Eigen::MatrixXd*>& in,
                     std::vector<std::string>* used) override;
  double margin() const override { return margin_; }

 private:
  Act act_;
  Eigen::MatrixXd w_, b_, dw_, db_;
  Eigen::MatrixXd x_, z_;
  Eigen::Index in_batch_ = 0, in_time_ = 0;
  double margin_ = kInf;
};

void assign_checked(const std::map<std::string, const Eigen::MatrixXd*>& in,
                    const std::string& key, Eigen::MatrixXd& dst,
                    std::vector<std::string>* used) {
  const auto it = in.find(key);
  if (it == in.end()) {
    throw std::invalid_argument("model state missing entry '" + key + "'");
  }
  if (it->second->rows() != dst.rows() || it->second->cols() != dst.cols()) {
    throw std::invalid_argument("model state entry '" + key + "' has wrong shape");
  }
  dst = *it->second;
  if (used != nullptr) used->push_back(key);
}

void TdDenseLayer::restore_state(const std::map<std::string, const Eigen::MatrixXd*>& in,
                                 std::vector<std::string>* used) {
  assign_checked(in, name() + "/w", w_, used);
  assign_checked(in, name() + "/b", b_, used);
}

struct DirCache {
  std::vector<Eigen::MatrixXd> i, f, o, g, c, h, hu;
  std::vector<Eigen::ArrayXXd> gmask;
  Eigen::ArrayXXd rec_mask;  // batch x units, already inverse-scaled
  void resize(Eigen::Index t_len) {
    i.assign(t_len, {});
    f.assign(t_len, {});
    o.assign(t_len, {});
    g.assign(t_len, {});
    c.assign(t_len, {});
    h.assign(t_len, {});
    hu.assign(t_len, {});
    gmask.assign(t_len, {});
  }
};

class BiLstmLayer final : public Layer {
 public:
  BiLstmLayer(std::string name, LstmParams fwd, LstmParams bwd, double recurrent_dropout,
              bool return_sequences)
      : Layer(std::move(name)),
        p_{std::move(fwd), std::move(bwd)},
        rec_drop_(recurrent_dropout),
        ret_seq_(return_sequences) {
    for (int d = 0; d < 2; ++d) {
      g_[d].wx = Eigen::MatrixXd::Zero(p_[d].wx.rows(), p_[d].wx.cols());
      g_[d].wh = Eigen::MatrixXd::Zero(p_[d].wh.rows(), p_[d].wh.cols());
      g_[d].b = Eigen::MatrixXd::Zero(1, p_[d].b.cols());
    }
  }

  static BiLstmLayer make(std::string name, Eigen::Index in, Eigen::Index units,
                          double recurrent_dropout, bool return_sequences,
                          std::uint64_t init_seed) {
    LstmParams dir[2];
    const char* tag[2] = {"fwd", "bwd"};
    for (int d = 0; d < 2; ++d) {
      dir[d].wx = lecun_normal_init(in, 4 * units, in,
                                    rng::derive_seed(init_seed, name + "/" + tag[d] + "/wx"));
      dir[d].wh = lecun_normal_init(units, 4 * units, units,
                                    rng::derive_seed(init_seed, name + "/" + tag[d] + "/wh"));
      dir[d].b = Eigen::MatrixXd::Zero(1, 4 * units);
      dir[d].b.block(0, units, 1, units).setOnes();  // forget-gate bias starts open
    }
    return BiLstmLayer(std::move(name), std::move(dir[0]), std::move(dir[1]),
                       recurrent_dropout, return_sequences);
  }

  Tensor3 forward(const Tensor3& x, Mode mode, rng::Xoshiro256pp* gen) override {
    const Eigen::Index u = p_[0].units();
    const Eigen::Index t_len = x.time;
    x_ = x;
    margin_ = kInf;
    for (int d = 0; d < 2; ++d) {
      cache_[d].resize(t_len);
      cache_[d].rec_mask = Eigen::ArrayXXd::Ones(x.batch, u);
      if (mode == Mode::kTrain && rec_drop_ > 0.0 && gen != nullptr) {
        const double scale = 1.0 / (1.0 - rec_drop_);
        for (Eigen::Index r = 0; r < x.batch; ++r) {
          for (Eigen::Index cidx = 0; cidx < u; ++cidx) {
            cache_[d].rec_mask(r, cidx) = (gen->uniform() > rec_drop_) ? scale : 0.0;
          }
        }
      }
      run_direction(d, x);
    }
    if (ret_seq_) {
      Tensor3 y(x.batch, t_len, 2 * u);
      Eigen::MatrixXd stepv(x.batch, 2 * u);
      for (Eigen::Index t = 0; t < t_len; ++t) {
        stepv << cache_[0].h[t], cache_[1].h[t_len - 1 - t];
        y.set_step(t, stepv);
      }
      return y;
    }
    Tensor3 y(x.batch, 1, 2 * u);
    Eigen::MatrixXd stepv(x.batch, 2 * u);
    stepv << cache_[0].h[t_len - 1], cache_[1].h[t_len - 1];
    y.set_step(0, stepv);
    return y;
  }

  Tensor3 backward(const Tensor3& dy) override {
    const Eigen::Index u = p_[0].units();
    const Eigen::Index t_len = x_.time;
    Tensor3 dx(x_.batch, x_.time, x_.feat);
    for (int d = 0; d < 2; ++d) {
      // Per-step output gradient for this direction, in processing order.
      std::vector<Eigen::MatrixXd> dh_out(t_len,
                                          Eigen::MatrixXd::Zero(x_.batch, u));
      if (ret_seq_) {
        for (Eigen::Index t = 0; t < t_len; ++t) {
          const Eigen::MatrixXd s = dy.step(t);
          if (d == 0) {
            dh_out[t] = s.leftCols(u);
          } else {
            dh_out[t_len - 1 - t] = s.rightCols(u);
          }
        }
      } else {
        const Eigen::MatrixXd s = dy.step(0);
        dh_out[t_len - 1] = (d == 0) ? s.leftCols(u) : s.rightCols(u);
      }
      backprop_direction(d, dh_out, &dx);
    }
    return dx;
  }

  void collect(std::vector<ParamRef>& out) override {
    const char* tag[2] = {"fwd", "bwd"};
    for (int d = 0; d < 2; ++d) {
      out.push_back({name() + "/" + tag[d] + "/wx", &p_[d].wx, &g_[d].wx, true});
      out.push_back({name() + "/" + tag[d] + "/wh", &p_[d].wh, &g_[d].wh, true});
      out.push_back({name() + "/" + tag[d] + "/b", &p_[d].b, &g_[d].b, false});
    }
  }
  void collect_state(std::vector<NamedMatrix>& out) const override {
    const char* tag[2] = {"fwd", "bwd"};
    for (int d = 0; d < 2; ++d) {
      out.push_back({name() + "/" + tag[d] + "/wx", p_[d].wx});
      out.push_back({name() + "/" + tag[d] + "/wh", p_[d].wh});
      out.push_back({name() + "/" + tag[d] + "/b", p_[d].b});
    }
  }
  void restore_state(const std::map<std::string, const Eigen::MatrixXd*>& in,
                     std::vector<std::string>* used) override {
    const char* tag[2] = {"fwd", "bwd"};
    for (int d = 0; d < 2; ++d) {
      assign_checked(in, name() + "/" + tag[d] + "/wx", p_[d].wx, used);
      assign_checked(in, name() + "/" + tag[d] + "/wh", p_[d].wh, used);
      assign_checked(in, name() + "/" + tag[d] + "/b", p_[d].b, used);
    }
  }
  double margin() const override { return margin_; }

 private:
  Eigen::Index input_index(int d, Eigen::Index step) const {
    return d == 0 ? step : (x_.time - 1 - step);
  }

  void run_direction(int d, const Tensor3& x) {
    const Eigen::Index u = p_[d].units();
    const Eigen::Index t_len = x.time;
    DirCache& dc = cache_[d];
    const Eigen::MatrixXd xz_all = x.flat() * p_[d].wx;  // (batch*time) x 4u
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(x.batch, u);
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(x.batch, u);
    Eigen::MatrixXd xz(x.batch, 4 * u);
    for (Eigen::Index step = 0; step < t_len; ++step) {
      const Eigen::Index ti = input_index(d, step);
      for (Eigen::Index b = 0; b < x.batch; ++b) xz.row(b) = xz_all.row(b * t_len + ti);
      dc.hu[step] = h.array() * dc.rec_mask;
      lstm_step_from_xz(xz, dc.hu[step], c, p_[d], &dc.i[step], &dc.f[step], &dc.o[step],
                        &dc.g[step], &dc.gmask[step], &dc.c[step], &dc.h[step], &margin_);
      h = dc.h[step];
      c = dc.c[step];
    }
  }

  void backprop_direction(int d, const std::vector<Eigen::MatrixXd>& dh_out, Tensor3* dx) {
    const Eigen::Index u = p_[d].units();
    const Eigen::Index t_len = x_.time;
    DirCache& dc = cache_[d];
    Eigen::MatrixXd dzx_all = Eigen::MatrixXd::Zero(x_.batch * t_len, 4 * u);
    Eigen::MatrixXd dh_rec = Eigen::MatrixXd::Zero(x_.batch, u);
    Eigen::MatrixXd dc_carry = Eigen::MatrixXd::Zero(x_.batch, u);
    Eigen::MatrixXd dz(x_.batch, 4 * u);
    for (Eigen::Index step = t_len - 1; step >= 0; --step) {
      const Eigen::MatrixXd dh = dh_out[step] + dh_rec;
      const Eigen::MatrixXd a = dc.c[step].cwiseMax(0.0);
      const Eigen::MatrixXd d_o = dh.cwiseProduct(a);
      const Eigen::MatrixXd da = dh.cwiseProduct(dc.o[step]);
      const Eigen::ArrayXXd cmask = (dc.c[step].array() > 0.0).cast<double>();
      const Eigen::MatrixXd dctot =
          (da.array() * cmask).matrix() + dc_carry;
      const Eigen::MatrixXd c_prev =
          step > 0 ? dc.c[step - 1] : Eigen::MatrixXd::Zero(x_.batch, u).eval();
      const Eigen::MatrixXd df = dctot.cwiseProduct(c_prev);
      const Eigen::MatrixXd di = dctot.cwiseProduct(dc.g[step]);
      const Eigen::MatrixXd dg = dctot.cwiseProduct(dc.i[step]);
      dc_carry = dctot.cwiseProduct(dc.f[step]);

      dz.leftCols(u) =
          di.array() * dc.i[step].array() * (1.0 - dc.i[step].array());
      dz.middleCols(u, u) =
          df.array() * dc.f[step].array() * (1.0 - dc.f[step].array());
      dz.middleCols(2 * u, u) =
          d_o.array() * dc.o[step].array() * (1.0 - dc.o[step].array());
      dz.rightCols(u) = dg.array() * dc.gmask[step];

      g_[d].b.row(0) += dz.colwise().sum();
      g_[d].wh += dc.hu[step].transpose() * dz;
      dh_rec = ((dz * p_[d].wh.transpose()).array() * dc.rec_mask).matrix();

      const Eigen::Index ti = input_index(d, step);
      for (Eigen::Index b = 0; b < x_.batch; ++b) {
        dzx_all.row(b * t_len + ti) = dz.row(b);
      }
    }
    g_[d].wx += x_.flat().transpose() * dzx_all;
    dx->flat() += dzx_all * p_[d].wx.transpose();
  }

  LstmParams p_[2];
  LstmParams g_[2];  // gradients, same shapes
  double rec_drop_;
  bool ret_seq_;
  Tensor3 x_;
  DirCache cache_[2];
  double margin_ = kInf;
};

class BatchNormLayer final : public Layer {
 public:
  BatchNormLayer(std::string name, Eigen::Index width) : Layer(std::move(name)) {
    gamma_ = Eigen::MatrixXd::Ones(1, width);
    beta_ = Eigen::MatrixXd::Zero(1, width);
    dgamma_ = Eigen::MatrixXd::Zero(1, width);
    dbeta_ = Eigen::MatrixXd::Zero(1, width);
    running_mean_ = Eigen::MatrixXd::Zero(1, width);
    running_var_ = Eigen::MatrixXd::Ones(1, width);
  }

  Tensor3 forward(const Tensor3& x, Mode mode, rng::Xoshiro256pp* /*gen*/) override {
    Eigen::RowVectorXd rm = running_mean_.row(0);
    Eigen::RowVectorXd rv = running_var_.row(0);
    Tensor3 y = batchnorm_core(x, gamma_.row(0), beta_.row(0), mode, rm, rv, 0.99, 1e-5,
                               &cache_);
    running_mean_.row(0) = rm;
    running_var_.row(0) = rv;
    return y;
  }

  Tensor3 backward(const Tensor3& dy) override {
    const Eigen::MatrixXd dyf = dy.flat();
    const double n = static_cast<double>(dyf.rows());
    dgamma_.row(0) += dyf.cwiseProduct(cache_.xhat).colwise().sum();
    dbeta_.row(0) += dyf.colwise().sum();
    Tensor3 dx(dy.batch, dy.time, dy.feat);
    const Eigen::MatrixXd dxhat = dyf.array().rowwise() * gamma_.row(0).array();
    if (cache_.train) {
      const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
      const Eigen::RowVectorXd sum_dxhat_xhat =
          dxhat.cwiseProduct(cache_.xhat).colwise().sum();
      Eigen::MatrixXd out = n * dxhat;
      out.rowwise() -= sum_dxhat;
      out -= (cache_.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
      out.array().rowwise() *= (cache_.inv_std.array() / n);
      dx.flat() = out;
    } else {
      dx.flat() = dxhat.array().rowwise() * cache_.inv_std.array();
    }
    return dx;
  }

  void collect(std::vector<ParamRef>& out) override {
    out.push_back({name() + "/gamma", &gamma_, &dgamma_, false});
    out.push_back({name() + "/beta", &beta_, &dbeta_, false});
  }
  void collect_state(std::vector<NamedMatrix>& out) const override {
    out.push_back({name() + "/gamma", gamma_});
    out.push_back({name() + "/beta", beta_});
    out.push_back({name() + "/running_mean", running_mean_});
    out.push_back({name() + "/running_var", running_var_});
  }
  void restore_state(const std::map<std::string, const Eigen::MatrixXd*>& in,
                     std::vector<std::string>* used) override {
    assign_checked(in, name() + "/gamma", gamma_, used);
    assign_checked(in, name() + "/beta", beta_, used);
    assign_checked(in, name() + "/running_mean", running_mean_, used);
    assign_checked(in, name() + "/running_var", running_var_, used);
  }

 private:
  Eigen::MatrixXd gamma_, beta_, dgamma_, dbeta_;
  Eigen::MatrixXd running_mean_, running_var_;
  BatchNormCache cache_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Stand-alone ops built on the layer cores
// ---------------------------------------------------------------------------

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> lstm_cell_forward(
    const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& h_prev,
    const Eigen::MatrixXd& c_prev, const LstmParams& p) {
  Eigen::MatrixXd i, f, o, g, c, h;
  Eigen::ArrayXXd gmask;
  lstm_step_from_xz(x_t * p.wx, h_prev, c_prev, p, &i, &f, &o, &g, &gmask, &c, &h,
                    nullptr);
  return {h, c};
}

Tensor3 bilstm_forward(const Tensor3& x, const LstmParams& fwd, const LstmParams& bwd,
                       bool return_sequences) {
  BiLstmLayer layer("bilstm", fwd, bwd, 0.0, return_sequences);
  return layer.forward(x, Mode::kInfer, nullptr);
}

Tensor3 td_dense_forward(const Tensor3& x, const Eigen::MatrixXd& w,
                         const Eigen::RowVectorXd& b, Act act) {
  if (x.feat != w.rows()) {
    throw std::invalid_argument("td_dense_forward: feature width mismatch");
  }
  Eigen::MatrixXd z = x.flat() * w;
  z.rowwise() += b;
  Tensor3 y(x.batch, x.time, w.cols());
  y.flat() = apply_act(act, z);
  return y;
}

Tensor3 batchnorm_forward(const Tensor3& x, const Eigen::RowVectorXd& gamma,
                          const Eigen::RowVectorXd& beta, Mode mode,
                          Eigen::RowVectorXd& running_mean, Eigen::RowVectorXd& running_var,
                          double momentum, double eps) {
  return batchnorm_core(x, gamma, beta, mode, running_mean, running_var, momentum, eps,
                        nullptr);
}

Tensor3 dropout_forward(const Tensor3& x, double rate, Mode mode, std::uint64_t seed) {
  rng::Xoshiro256pp gen(seed);
  return dropout_core(x, rate, mode, &gen, nullptr);
}

Tensor3 gaussian_noise(const Tensor3& x, double sigma, Mode mode, std::uint64_t seed) {
  rng::Xoshiro256pp gen(seed);
  return noise_core(x, sigma, mode, &gen);
}

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

std::string layer_kind_to_string(LayerSpec::Kind k) {
  switch (k) {
    case LayerSpec::Kind::kGaussianNoise: return "gaussian_noise";
    case LayerSpec::Kind::kTimeDistributedDense: return "td_dense";
    case LayerSpec::Kind::kBiLstm: return "bilstm";
    case LayerSpec::Kind::kBatchNorm: return "batchnorm";
    case LayerSpec::Kind::kDense: return "dense";
    case LayerSpec::Kind::kDropout: return "dropout";
    case LayerSpec::Kind::kOutput: return "output";
  }
  return "dense";
}

LayerSpec::Kind layer_kind_from_string(const std::string& s) {
  if (s == "gaussian_noise") return LayerSpec::Kind::kGaussianNoise;
  if (s == "td_dense") return LayerSpec::Kind::kTimeDistributedDense;
  if (s == "bilstm") return LayerSpec::Kind::kBiLstm;
  if (s == "batchnorm") return LayerSpec::Kind::kBatchNorm;
  if (s == "dense") return LayerSpec::Kind::kDense;
  if (s == "dropout") return LayerSpec::Kind::kDropout;
  if (s == "output") return LayerSpec::Kind::kOutput;
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw std::invalid_argument("lr must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (early_stop_patience < 0 || lr_plateau_patience < 0) {
    throw std::invalid_argument("patience values must be >= 0");
  }
  for (double r : {dropout, recurrent_dropout}) {
    if (r < 0.0 || r >= 1.0) throw std::invalid_argument("rates must lie in [0, 1)");
  }
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
  if (l2 < 0.0) throw std::invalid_argument("l2 must be >= 0");
  if (time_stride < 1) throw std::invalid_argument("time_stride must be >= 1");
  if (min_lr <= 0.0 || min_lr > lr) throw std::invalid_argument("min_lr must be in (0, lr]");
  if (lr_plateau_factor <= 0.0 || lr_plateau_factor >= 1.0) {
    throw std::invalid_argument("lr_plateau_factor must lie in (0, 1)");
  }
}

void ModelSpec::validate() const {
  if (n_features < 1) throw std::invalid_argument("model spec: n_features must be >= 1");
  if (layers.empty()) throw std::invalid_argument("model spec: no layers");
  if (layers.back().kind != LayerSpec::Kind::kOutput) {
    throw std::invalid_argument("model spec: last layer must be the output layer");
  }
  int outputs = 0;
  bool saw_bilstm = false;
  bool collapsed = false;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const LayerSpec& l = layers[k];
    switch (l.kind) {
      case LayerSpec::Kind::kOutput:
        ++outputs;
        if (l.units != kNumClasses) {
          throw std::invalid_argument("model spec: output layer must have width 3");
        }
        break;
      case LayerSpec::Kind::kBiLstm:
        if (collapsed) {
          throw std::invalid_argument(
              "model spec: bilstm cannot follow a final-state bilstm");
        }
        if (l.units < 1) throw std::invalid_argument("model spec: bilstm units must be >= 1");
        if (l.recurrent_dropout < 0.0 || l.recurrent_dropout >= 1.0) {
          throw std::invalid_argument("model spec: recurrent dropout must lie in [0, 1)");
        }
        saw_bilstm = true;
        if (!l.return_sequences) collapsed = true;
        break;
      case LayerSpec::Kind::kDense:
        if (saw_bilstm && !collapsed) {
          throw std::invalid_argument(
              "model spec: dense needs a collapsed sequence; use td_dense instead");
        }
        if (l.units < 1) throw std::invalid_argument("model spec: dense units must be >= 1");
        break;
      case LayerSpec::Kind::kTimeDistributedDense:
        if (l.units < 1) {
          throw std::invalid_argument("model spec: td_dense units must be >= 1");
        }
        break;
      case LayerSpec::Kind::kDropout:
        if (l.rate < 0.0 || l.rate >= 1.0) {
          throw std::invalid_argument("model spec: dropout rate must lie in [0, 1)");
        }
        break;
      case LayerSpec::Kind::kGaussianNoise:
        if (l.sigma < 0.0) {
          throw std::invalid_argument("model spec: noise sigma must be >= 0");
        }
        break;
      case LayerSpec::Kind::kBatchNorm:
        break;
    }
  }
  if (outputs != 1) {
    throw std::invalid_argument("model spec: exactly one output layer required");
  }
  if (saw_bilstm && !collapsed) {
    throw std::invalid_argument(
        "model spec: the last bilstm must collapse to its final state");
  }
}

ModelSpec default_model_spec(Eigen::Index n_features, int units, const TrainConfig& cfg) {
  ModelSpec spec;
  spec.n_features = n_features;
  spec.l2 = cfg.l2;
  if (cfg.noise_sigma > 0.0) {
    LayerSpec noise;
    noise.kind = LayerSpec::Kind::kGaussianNoise;
    noise.sigma = cfg.noise_sigma;
    spec.layers.push_back(noise);
  }
  LayerSpec tdd;
  tdd.kind = LayerSpec::Kind::kTimeDistributedDense;
  tdd.units = units;
  tdd.activation = Act::kSelu;
  spec.layers.push_back(tdd);

  LayerSpec lstm1;
  lstm1.kind = LayerSpec::Kind::kBiLstm;
  lstm1.units = units;
  lstm1.recurrent_dropout = cfg.recurrent_dropout;
  lstm1.return_sequences = true;
  spec.layers.push_back(lstm1);

  LayerSpec bn;
  bn.kind = LayerSpec::Kind::kBatchNorm;
  spec.layers.push_back(bn);

  LayerSpec lstm2 = lstm1;
  lstm2.return_sequences = false;
  spec.layers.push_back(lstm2);

  LayerSpec dense;
  dense.kind = LayerSpec::Kind::kDense;
  dense.units = std::max(units / 2, 1);
  dense.activation = Act::kSelu;
  spec.layers.push_back(dense);

  if (cfg.dropout > 0.0) {
    LayerSpec drop;
    drop.kind = LayerSpec::Kind::kDropout;
    drop.rate = cfg.dropout;
    spec.layers.push_back(drop);
  }

  LayerSpec out;
  out.kind = LayerSpec::Kind::kOutput;
  out.units = kNumClasses;
  spec.layers.push_back(out);
  return spec;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

Model::Model(const ModelSpec& spec, std::uint64_t init_seed) : spec_(spec) {
  spec_.validate();
  Eigen::Index width = spec_.n_features;
  for (std::size_t k = 0; k < spec_.layers.size(); ++k) {
    const LayerSpec& l = spec_.layers[k];
    const std::string nm = "layer" + std::to_string(k) + "_" + layer_kind_to_string(l.kind);
    switch (l.kind) {
      case LayerSpec::Kind::kGaussianNoise:
        layers_.push_back(std::make_unique<GaussianNoiseLayer>(nm, l.sigma));
        break;
      case LayerSpec::Kind::kDropout:
        layers_.push_back(std::make_unique<DropoutLayer>(nm, l.rate));
        break;
      case LayerSpec::Kind::kBatchNorm:
        layers_.push_back(std::make_unique<BatchNormLayer>(nm, width));
        break;
      case LayerSpec::Kind::kTimeDistributedDense:
      case LayerSpec::Kind::kDense:
      case LayerSpec::Kind::kOutput:
        layers_.push_back(
            std::make_unique<TdDenseLayer>(nm, width, l.units, l.activation, init_seed));
        width = l.units;
        break;
      case LayerSpec::Kind::kBiLstm:
        layers_.push_back(std::make_unique<BiLstmLayer>(BiLstmLayer::make(
            nm, width, l.units, l.recurrent_dropout, l.return_sequences, init_seed)));
        width = 2 * l.units;
        break;
    }
  }
}

Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;
Model::~Model() = default;

Tensor3 Model::forward(const Tensor3& x, Mode mode, std::uint64_t draw_seed) {
  if (x.feat != spec_.n_features) {
    throw std::invalid_argument("model: input has " + std::to_string(x.feat) +
                                " features, spec expects " +
                                std::to_string(spec_.n_features));
  }
  rng::Xoshiro256pp gen(draw_seed);
  Tensor3 cur = x;
  for (auto& layer : layers_) {
    cur = layer->forward(cur, mode, &gen);
    assert(cur.all_finite());
  }
  if (cur.time != 1 || cur.feat != kNumClasses) {
    throw std::invalid_argument("model: output must be one step of width 3 per trial");
  }
  return cur;
}

double Model::loss(const Tensor3& x, const std::vector<Label>& labels, Mode mode,
                   std::uint64_t draw_seed) {
  const Tensor3 logits = forward(x, mode, draw_seed);
  last_probs_ = softmax_rows(logits.flat());
  std::vector<const Eigen::MatrixXd*> kernels;
  for (const auto& ref : param_refs()) {
    if (ref.kernel) kernels.push_back(ref.value);
  }
  return loss_forward(last_probs_, labels, kernels, spec_.l2);
}

double Model::loss_and_grad(const Tensor3& x, const std::vector<Label>& labels, Mode mode,
                            std::uint64_t draw_seed) {
  auto refs = param_refs();
  for (auto& ref : refs) ref.grad->setZero();
  const double value = loss(x, labels, mode, draw_seed);

  Eigen::MatrixXd dlogits = last_probs_;
  for (Eigen::Index r = 0; r < dlogits.rows(); ++r) {
    dlogits(r, static_cast<int>(labels[r])) -= 1.0;
  }
  dlogits /= static_cast<double>(dlogits.rows());
  Tensor3 dy(x.batch, 1, kNumClasses);
  dy.flat() = dlogits;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    dy = (*it)->backward(dy);
  }
  for (auto& ref : refs) {
    if (ref.kernel) *ref.grad += 2.0 * spec_.l2 * (*ref.value);
  }
  return value;
}

Eigen::MatrixXd Model::predict_probs(const Tensor3& x) {
  const Tensor3 logits = forward(x, Mode::kInfer, 0);
  return softmax_rows(logits.flat());
}

std::vector<ParamRef> Model::param_refs() {
  std::vector<ParamRef> out;
  for (auto& layer : layers_) layer->collect(out);
  return out;
}

std::vector<NamedMatrix> Model::export_state() const {
  std::vector<NamedMatrix> out;
  for (const auto& layer : layers_) layer->collect_state(out);
  return out;
}

void Model::import_state(const std::vector<NamedMatrix>& state) {
  std::map<std::string, const Eigen::MatrixXd*> in;
  for (const auto& nm : state) {
    if (!in.emplace(nm.name, &nm.value).second) {
      throw std::invalid_argument("model state has duplicate entry '" + nm.name + "'");
    }
  }
  std::vector<std::string> used;
  for (auto& layer : layers_) layer->restore_state(in, &used);
  if (used.size() != in.size()) {
    throw std::invalid_argument("model state has entries this architecture does not use");
  }
}

double Model::min_margin() const {
  double m = kInf;
  for (const auto& layer : layers_) m = std::min(m, layer->margin());
  return m;
}

std::uint64_t Model::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a basis
  auto mix_bytes = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t k = 0; k < n; ++k) {
      h ^= b[k];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& nm : export_state()) {
    mix_bytes(nm.name.data(), nm.name.size());
    for (Eigen::Index c = 0; c < nm.value.cols(); ++c) {
      for (Eigen::Index r = 0; r < nm.value.rows(); ++r) {
        const double d = nm.value(r, c);
        mix_bytes(&d, sizeof d);
      }
    }
  }
  return h;
}

std::string Model::first_nonfinite_layer(const Tensor3& x, Mode mode,
                                         std::uint64_t draw_seed) {
  rng::Xoshiro256pp gen(draw_seed);
  Tensor3 cur = x;
  if (!cur.all_finite()) return "input";
  for (auto& layer : layers_) {
    cur = layer->forward(cur, mode, &gen);
    if (!cur.all_finite()) return layer->name();
  }
  return "";
}

}  // namespace fnirs::nn
