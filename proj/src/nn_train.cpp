#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fnirs/csv.hpp"
#include "fnirs/nn.hpp"

namespace fnirs::nn {

namespace {

// Copies the selected trials of a full tensor into a batch tensor.
Tensor3 gather_trials(const Tensor3& full, const std::vector<std::size_t>& idx) {
  Tensor3 out(static_cast<Eigen::Index>(idx.size()), full.time, full.feat);
  const Eigen::Index block = full.time * full.feat;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.v.segment(static_cast<Eigen::Index>(k) * block, block) =
        full.v.segment(static_cast<Eigen::Index>(idx[k]) * block, block);
  }
  return out;
}

std::vector<Label> gather_labels(const std::vector<Label>& all,
                                 const std::vector<std::size_t>& idx) {
  std::vector<Label> out;
  out.reserve(idx.size());
  for (std::size_t k : idx) out.push_back(all[k]);
  return out;
}

double count_correct(const Eigen::MatrixXd& probs, const std::vector<Label>& labels) {
  double correct = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    Eigen::Index arg = 0;
    probs.row(r).maxCoeff(&arg);
    if (arg == static_cast<Eigen::Index>(labels[r])) correct += 1.0;
  }
  return correct;
}

}  // namespace

void nadam_step(Eigen::MatrixXd& value, const Eigen::MatrixXd& grad, NadamSlot& slot,
                long t, double lr, double beta1, double beta2, double eps) {
  if (t < 1) throw std::invalid_argument("nadam_step: step counter must be >= 1");
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    throw std::invalid_argument("nadam_step: gradient shape mismatch");
  }
  if (slot.m.size() == 0) {
    slot.m = Eigen::ArrayXXd::Zero(value.rows(), value.cols());
    slot.n = Eigen::ArrayXXd::Zero(value.rows(), value.cols());
  }
  const Eigen::ArrayXXd g = grad.array();
  slot.m = beta1 * slot.m + (1.0 - beta1) * g;
  slot.n = beta2 * slot.n + (1.0 - beta2) * g.square();
  const double tt = static_cast<double>(t);
  const Eigen::ArrayXXd m_hat = slot.m / (1.0 - std::pow(beta1, tt + 1.0));
  const Eigen::ArrayXXd g_hat = g / (1.0 - std::pow(beta1, tt));
  const Eigen::ArrayXXd n_hat = slot.n / (1.0 - std::pow(beta2, tt));
  value.array() -=
      lr * (beta1 * m_hat + (1.0 - beta1) * g_hat) / (n_hat.sqrt() + eps);
}

Tensor3 epochs_to_tensor(const EpochSet& es, int stride) {
  if (stride < 1) throw std::invalid_argument("epochs_to_tensor: stride must be >= 1");
  if (es.data.empty()) throw std::invalid_argument("epochs_to_tensor: empty epoch set");
  const Eigen::Index n_samples = es.n_samples();
  const Eigen::Index t_out = (n_samples + stride - 1) / stride;
  Tensor3 x(es.n_trials(), t_out, es.n_streams());
  for (Eigen::Index b = 0; b < x.batch; ++b) {
    const Eigen::MatrixXd& trial = es.data[static_cast<std::size_t>(b)];
    for (Eigen::Index t = 0; t < t_out; ++t) {
      for (Eigen::Index f = 0; f < x.feat; ++f) {
        x.at(b, t, f) = trial(f, t * static_cast<Eigen::Index>(stride));
      }
    }
  }
  return x;
}

TrainReport train(Model& model, const EpochSet& es_train, const EpochSet& es_val,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (es_train.data.empty() || es_val.data.empty()) {
    throw std::invalid_argument("train: training and validation sets must be non-empty");
  }
  const Tensor3 x_train = epochs_to_tensor(es_train, cfg.time_stride);
  const Tensor3 x_val = epochs_to_tensor(es_val, cfg.time_stride);

  auto refs = model.param_refs();
  std::vector<NadamSlot> slots(refs.size());
  long step = 0;
  double lr = cfg.lr;

  rng::Xoshiro256pp shuffle_gen(rng::derive_seed(cfg.seed, "train/shuffle"));
  std::vector<std::size_t> order(es_train.data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<NamedMatrix> best_state;
  int stall_stop = 0;
  int stall_lr = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_gen.shuffle(order);
    double loss_sum = 0.0;
    double correct = 0.0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const std::size_t hi = std::min(at + cfg.batch_size, order.size());
      const std::vector<std::size_t> batch(order.begin() + at, order.begin() + hi);
      const Tensor3 xb = gather_trials(x_train, batch);
      const std::vector<Label> yb = gather_labels(es_train.labels, batch);
      const std::uint64_t draw = rng::derive_seed(
          cfg.seed, "train/draw/" + std::to_string(epoch) + "/" + std::to_string(at));
      const double batch_loss = model.loss_and_grad(xb, yb, Mode::kTrain, draw);
      if (!std::isfinite(batch_loss)) {
        std::string where = model.first_nonfinite_layer(xb, Mode::kTrain, draw);
        if (where.empty()) where = "loss";
        throw TrainDivergence("training aborted at epoch " + std::to_string(epoch) +
                              ": non-finite loss, first non-finite output in '" + where +
                              "'");
      }
      loss_sum += batch_loss * static_cast<double>(batch.size());
      correct += count_correct(model.last_probs(), yb);
      ++step;
      for (std::size_t k = 0; k < refs.size(); ++k) {
        nadam_step(*refs[k].value, *refs[k].grad, slots[k], step, lr);
      }
    }

    EpochStats stats;
    stats.lr = lr;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.train_acc = correct / static_cast<double>(order.size());
    stats.val_loss = model.loss(x_val, es_val.labels, Mode::kInfer, 0);
    stats.val_acc = count_correct(model.last_probs(), es_val.labels) /
                    static_cast<double>(es_val.data.size());
    if (!std::isfinite(stats.val_loss)) {
      throw TrainDivergence("training aborted at epoch " + std::to_string(epoch) +
                            ": non-finite validation loss");
    }
    report.epochs.push_back(stats);
    report.stopped_epoch = epoch;

    if (stats.val_loss < best_val - cfg.min_improvement) {
      best_val = stats.val_loss;
      report.best_epoch = epoch;
      best_state = model.export_state();
      stall_stop = 0;
      stall_lr = 0;
    } else {
      ++stall_stop;
      ++stall_lr;
      if (stall_lr >= cfg.lr_plateau_patience && lr > cfg.min_lr) {
        lr = std::max(lr * cfg.lr_plateau_factor, cfg.min_lr);
        stall_lr = 0;
      }
      if (stall_stop >= std::max(cfg.early_stop_patience, 1)) {
        report.stop_reason = "early_stop";
        break;
      }
    }
  }
  if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
  if (!best_state.empty()) model.import_state(best_state);
  report.checksum = model.checksum();
  return report;
}

Eigen::MatrixXd predict(Model& model, const EpochSet& es, int stride) {
  return model.predict_probs(epochs_to_tensor(es, stride));
}

double accuracy_of(const Eigen::MatrixXd& probs, const std::vector<Label>& labels) {
  if (probs.rows() != static_cast<Eigen::Index>(labels.size()) || probs.rows() == 0) {
    throw std::invalid_argument("accuracy_of: probability/label count mismatch");
  }
  return count_correct(probs, labels) / static_cast<double>(probs.rows());
}

GridResult grid_search(const EpochSet& es_train, const EpochSet& es_val,
                       const TrainConfig& base, const std::vector<double>& lrs,
                       const std::vector<double>& dropouts,
                       const std::vector<int>& units_list) {
  if (lrs.empty() || dropouts.empty() || units_list.empty()) {
    throw std::invalid_argument("grid_search: every grid axis needs at least one value");
  }
  GridResult result;
  for (double lr : lrs) {
    for (double dropout : dropouts) {
      for (int units : units_list) {
        TrainConfig cfg = base;
        cfg.lr = lr;
        cfg.dropout = dropout;
        cfg.seed = rng::derive_seed(
            base.seed, "grid/lr=" + csv::format_double(lr) +
                           "/dropout=" + csv::format_double(dropout) +
                           "/units=" + std::to_string(units));
        GridPoint point;
        point.lr = lr;
        point.dropout = dropout;
        point.units = units;
        const ModelSpec spec = default_model_spec(es_train.n_streams(), units, cfg);
        Model model(spec, rng::derive_seed(cfg.seed, "init"));
        try {
          const TrainReport rep = train(model, es_train, es_val, cfg);
          const Eigen::MatrixXd probs = predict(model, es_val, cfg.time_stride);
          point.val_error = 1.0 - accuracy_of(probs, es_val.labels);
          point.val_loss = rep.epochs[static_cast<std::size_t>(rep.best_epoch)].val_loss;
          point.epochs_ran = static_cast<int>(rep.epochs.size());
        } catch (const TrainDivergence&) {
          point.val_error = std::numeric_limits<double>::infinity();
          point.val_loss = std::numeric_limits<double>::infinity();
          point.epochs_ran = 0;
        }
        result.table.push_back(point);
      }
    }
  }
  const auto better = [](const GridPoint& a, const GridPoint& b) {
    if (a.val_error != b.val_error) return a.val_error < b.val_error;
    if (a.units != b.units) return a.units < b.units;
    if (a.dropout != b.dropout) return a.dropout > b.dropout;
    return a.lr < b.lr;
  };
  result.best = result.table.front();
  for (const auto& p : result.table) {
    if (better(p, result.best)) result.best = p;
  }
  return result;
}

}  // namespace fnirs::nn
