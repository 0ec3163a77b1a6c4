#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "normscale/objective.hpp"
#include "normscale/optim.hpp"
#include "normscale/rng.hpp"
#include "normscale/scalelab.hpp"
#include "normscale/units.hpp"

namespace normscale {

/// One hidden layer of BN+relu units feeding an unregularized linear head
/// trained with logistic loss. lambda applies to hidden weight vectors only.
struct NetSpec {
  int input_dim = 10;
  int hidden_units = 16;
};

/// Synthetic two-class Gaussian mixture: class means at +/- (separation/2)
/// along a random unit direction, unit noise along that direction and wider
/// noise in the orthogonal complement, labels in {-1,+1}.
struct DatasetSpec {
  int dim = 10;
  int n_train = 2000;
  int n_val = 500;
  int n_test = 500;
  double separation = 3.0;
  std::uint64_t seed = 1;
};

struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;  // -1 or +1
};

struct DataSplits {
  Dataset train, val, test;
};

struct TrainConfig {
  NetSpec net;
  OptConfig opt;
  int epochs = 50;
  int batch_size = 32;
  double lr_drop1 = 0.5;  // fraction of epochs after which eta *= 0.1
  double lr_drop2 = 0.8;  // second drop, another *= 0.1
  DatasetSpec data;
  bool normalize_weights = false;
  double head_lr = 0.01;          // fixed head step size (follows lr drops)
  double init_weight_scale = 1.0; // hidden columns start at this norm
};

struct RunRecord {
  Rule rule = Rule::sgd;
  double eta = 0.0;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double final_weight_norm = 0.0;  // rms over units of ||w_j||
  double train_loss = 0.0;
  double val_error = 0.0;
  double test_error = 0.0;
  std::vector<double> epoch_norms;  // before training, then after each epoch
  std::uint64_t config_hash = 0;
  bool diverged = false;
};

struct GridSpec {
  std::vector<double> lambdas;  // ascending
  std::vector<double> etas;     // ascending
  int seeds_per_cell = 1;

  static GridSpec default_grid() {
    GridSpec g;
    for (int i = 0; i < 7; ++i) g.lambdas.push_back(std::pow(10.0, -5.0 + i));
    for (int j = 0; j < 7; ++j) g.etas.push_back(std::pow(10.0, -4.0 + 5.0 * j / 6.0));
    return g;
  }
};

/// Records laid out (lambda-major, then eta, then replicate).
struct SweepTable {
  std::vector<double> lambdas;
  std::vector<double> etas;
  int seeds_per_cell = 1;
  std::vector<RunRecord> records;

  std::size_t cell_index(std::size_t li, std::size_t ei, int rep) const {
    return (li * etas.size() + ei) * static_cast<std::size_t>(seeds_per_cell) +
           static_cast<std::size_t>(rep);
  }
};

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_config(const TrainConfig& cfg) {
  std::string s;
  s += rule_name(cfg.opt.rule);
  auto add = [&s](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "|%.17g", v);
    s += buf;
  };
  add(cfg.opt.eta);
  add(cfg.opt.lambda);
  add(cfg.opt.rho);
  add(cfg.opt.rho1);
  add(cfg.opt.rho2);
  add(cfg.opt.eps);
  add(cfg.epochs);
  add(cfg.batch_size);
  add(cfg.lr_drop1);
  add(cfg.lr_drop2);
  add(cfg.net.input_dim);
  add(cfg.net.hidden_units);
  add(cfg.data.dim);
  add(cfg.data.n_train);
  add(cfg.data.n_val);
  add(cfg.data.n_test);
  add(cfg.data.separation);
  add(static_cast<double>(cfg.data.seed));
  add(cfg.normalize_weights ? 1.0 : 0.0);
  add(cfg.head_lr);
  add(cfg.init_weight_scale);
  return fnv1a64(s);
}

/// Deterministic dataset; the spec's own seed is used unless overridden.
inline DataSplits make_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  detail::require(spec.dim >= 2, "make_dataset: dim must be >= 2");
  detail::require(spec.n_train >= 2 && spec.n_val >= 1 && spec.n_test >= 1,
                  "make_dataset: split sizes too small");
  detail::require(spec.separation >= 0.0, "make_dataset: separation must be >= 0");
  Rng rng(seed);
  Eigen::VectorXd dir = gaussian_vector(rng, spec.dim);
  while (dir.norm() < 1e-8) dir = gaussian_vector(rng, spec.dim);
  dir.normalize();

  // unit noise along the class direction, wider noise in the orthogonal
  // complement: a linear readout of raw inputs still solves the task, but a
  // fixed random hidden layer mixes in the nuisance directions and pays for
  // it, so test error actually depends on how well the hidden weights adapt
  const double off_axis = 20.0;
  auto draw = [&](int n) {
    Dataset d;
    d.X.resize(n, spec.dim);
    d.y.resize(n);
    Eigen::VectorXd g(spec.dim);
    for (int i = 0; i < n; ++i) {
      const double cls = (i % 2 == 0) ? 1.0 : -1.0;
      for (int j = 0; j < spec.dim; ++j) g(j) = rng.gaussian();
      const double along = dir.dot(g);
      for (int j = 0; j < spec.dim; ++j)
        d.X(i, j) = cls * 0.5 * spec.separation * dir(j) + off_axis * g(j) -
                    (off_axis - 1.0) * along * dir(j);
      d.y(i) = cls;
    }
    return d;
  };
  DataSplits out;
  out.train = draw(spec.n_train);
  out.val = draw(spec.n_val);
  out.test = draw(spec.n_test);
  return out;
}

inline DataSplits make_dataset(const DatasetSpec& spec) {
  return make_dataset(spec, spec.seed);
}

namespace detail {

struct NetParams {
  Eigen::MatrixXd W;  // input_dim x hidden_units
  Eigen::VectorXd a;  // head weights
  double c = 0.0;     // head bias
};

struct EvalStats {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;
};

inline Eigen::VectorXd net_logits(const Eigen::MatrixXd& X,
                                  const NetParams& net,
                                  const EvalStats& stats) {
  const Eigen::Index k = net.W.cols();
  Batch b;
  b.X = X;
  Eigen::MatrixXd h(X.rows(), k);
  for (Eigen::Index j = 0; j < k; ++j) {
    UnitParams p;
    p.w = net.W.col(j);
    BNStats st;
    st.mu = stats.mu(j);
    st.sigma = stats.sigma(j);
    st.mode = StatsMode::test;
    h.col(j) = forward_bn(b, p, Nonlinearity::relu(), st).y;
  }
  return (h * net.a).array() + net.c;
}

inline double classification_error(const Eigen::VectorXd& logits,
                                   const Eigen::VectorXd& y) {
  Eigen::Index wrong = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (logits(i) * y(i) <= 0.0) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(logits.size());
}

inline double mean_logistic_loss(const Eigen::VectorXd& logits,
                                 const Eigen::VectorXd& y) {
  const LossSpec loss = LossSpec::logistic();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    acc += loss.value(logits(i), y(i));
  return acc / static_cast<double>(logits.size());
}

}  // namespace detail

/// Train the small BN network. Deterministic given (cfg, seed): the dataset
/// comes from cfg.data, the seed drives initialization and batch shuffling.
/// cfg.opt.eta == 0 freezes all parameters (evaluation-only run).
/// Nonfinite values or degenerate batch statistics mark the record diverged
/// instead of raising.
inline RunRecord train_small_net(const TrainConfig& cfg, std::uint64_t seed) {
  detail::require(cfg.net.input_dim >= 2, "train_small_net: input_dim must be >= 2");
  detail::require(cfg.net.hidden_units >= 4, "train_small_net: need at least 4 hidden units");
  detail::require(cfg.net.input_dim == cfg.data.dim,
                  "train_small_net: net input_dim must match dataset dim");
  detail::require(cfg.epochs >= 1, "train_small_net: epochs must be >= 1");
  detail::require(cfg.batch_size >= 2, "train_small_net: batch size must be >= 2 for BN");
  detail::require(cfg.data.n_train >= cfg.batch_size,
                  "train_small_net: training split smaller than one batch");
  detail::require(cfg.opt.eta >= 0.0, "train_small_net: eta must be >= 0");
  detail::require(cfg.head_lr >= 0.0, "train_small_net: head_lr must be >= 0");
  detail::require(cfg.init_weight_scale > 0.0, "train_small_net: init_weight_scale must be > 0");
  Rule rule = cfg.opt.rule;
  bool normalize = cfg.normalize_weights;
  if (rule == Rule::normalized_sgd) {  // alias: sgd step + projection
    rule = Rule::sgd;
    normalize = true;
  }
  detail::require(rule != Rule::newton, "train_small_net: newton is not supported as a training rule");

  const int d = cfg.net.input_dim;
  const int k = cfg.net.hidden_units;
  const int B = cfg.batch_size;
  const int E = cfg.epochs;
  const bool frozen = cfg.opt.eta == 0.0;

  RunRecord rec;
  rec.rule = cfg.opt.rule;
  rec.eta = cfg.opt.eta;
  rec.lambda = cfg.opt.lambda;
  rec.seed = seed;
  rec.config_hash = hash_config(cfg);

  const DataSplits data = make_dataset(cfg.data);
  Rng rng(substream_seed(seed, 1));

  detail::NetParams net;
  net.W = gaussian_matrix(rng, d, k);
  for (int j = 0; j < k; ++j) {
    while (net.W.col(j).norm() < 1e-8) net.W.col(j) = gaussian_vector(rng, d);
    net.W.col(j) *= cfg.init_weight_scale / net.W.col(j).norm();
  }
  net.a = gaussian_vector(rng, k) * (0.1 / std::sqrt(static_cast<double>(k)));
  net.c = 0.0;

  std::vector<OptState> st(k, OptState::zeros(d));

  auto rms_norm = [&net, k]() {
    return std::sqrt(net.W.colwise().squaredNorm().mean());
  };
  rec.epoch_norms.push_back(rms_norm());

  const int steps_per_epoch = cfg.data.n_train / B;
  std::vector<int> order(static_cast<std::size_t>(cfg.data.n_train));
  std::iota(order.begin(), order.end(), 0);

  detail::EvalStats eval_stats;
  eval_stats.mu = Eigen::VectorXd::Zero(k);
  eval_stats.sigma = Eigen::VectorXd::Ones(k);
  bool eval_stats_set = false;

  const Nonlinearity relu = Nonlinearity::relu();
  const LossSpec loss = LossSpec::logistic();

  bool diverged = false;
  for (int e = 0; e < E && !diverged; ++e) {
    double scale = 1.0;
    if (e >= static_cast<int>(cfg.lr_drop2 * E)) scale = 0.01;
    else if (e >= static_cast<int>(cfg.lr_drop1 * E)) scale = 0.1;
    OptConfig ecfg = cfg.opt;
    ecfg.rule = rule;
    ecfg.eta = cfg.opt.eta * scale;
    const double hlr = cfg.head_lr * scale;
    const bool final_epoch = e == E - 1;

    // Fisher-Yates; one permutation per epoch from the run's stream
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[rng.index(i + 1)]);

    for (int b = 0; b < steps_per_epoch && !diverged; ++b) {
      Batch batch;
      batch.X.resize(B, d);
      Eigen::VectorXd yb(B);
      for (int i = 0; i < B; ++i) {
        const int src = order[static_cast<std::size_t>(b) * B + i];
        batch.X.row(i) = data.train.X.row(src);
        yb(i) = data.train.y(src);
      }

      try {
        // forward at the point the gradient is taken: nesterov looks ahead
        Eigen::MatrixXd Wg = net.W;
        if (rule == Rule::nesterov && !frozen)
          for (int j = 0; j < k; ++j) Wg.col(j) += ecfg.rho * st[static_cast<std::size_t>(j)].v;

        Eigen::MatrixXd h(B, k);
        std::vector<BNStats> stats(static_cast<std::size_t>(k));
        for (int j = 0; j < k; ++j) {
          UnitParams p;
          p.w = Wg.col(j);
          auto fwd = forward_bn(batch, p, relu);
          h.col(j) = std::move(fwd.y);
          stats[static_cast<std::size_t>(j)] = fwd.stats;
        }
        const Eigen::VectorXd logits = (h * net.a).array() + net.c;

        Eigen::VectorXd dlogit(B);
        for (int i = 0; i < B; ++i)
          dlogit(i) = loss.d1(logits(i), yb(i)) / static_cast<double>(B);

        if (final_epoch) {
          for (int j = 0; j < k; ++j) {
            const auto ju = static_cast<std::size_t>(j);
            if (!eval_stats_set) {
              eval_stats.mu(j) = stats[ju].mu;
              eval_stats.sigma(j) = stats[ju].sigma;
            } else {
              eval_stats.mu(j) = 0.99 * eval_stats.mu(j) + 0.01 * stats[ju].mu;
              eval_stats.sigma(j) = 0.99 * eval_stats.sigma(j) + 0.01 * stats[ju].sigma;
            }
          }
          eval_stats_set = true;
        }

        if (frozen) continue;

        const Eigen::VectorXd ga = h.transpose() * dlogit;
        const double gc = dlogit.sum();

        for (int j = 0; j < k; ++j) {
          const auto ju = static_cast<std::size_t>(j);
          UnitParams p;
          p.w = Wg.col(j);
          const Eigen::VectorXd up = dlogit * net.a(j);
          const Eigen::VectorXd gj = grad_bn(batch, p, relu, up, stats[ju]);
          Eigen::VectorXd wj = net.W.col(j);
          switch (rule) {
            case Rule::sgd:
              wj = step_sgd(wj, gj, ecfg);
              break;
            case Rule::momentum:
            case Rule::nesterov: {
              GradSource src = [&gj, &ecfg](const Eigen::VectorXd& q) {
                return Eigen::VectorXd(gj + ecfg.lambda * q);
              };
              auto [w2, st2] = step_momentum(wj, src, std::move(st[ju]), ecfg);
              wj = std::move(w2);
              st[ju] = std::move(st2);
              break;
            }
            case Rule::rmsprop: {
              auto [w2, st2] = step_rmsprop(wj, gj, std::move(st[ju]), ecfg);
              wj = std::move(w2);
              st[ju] = std::move(st2);
              break;
            }
            case Rule::adam: {
              auto [w2, st2] = step_adam(wj, gj, std::move(st[ju]), ecfg);
              wj = std::move(w2);
              st[ju] = std::move(st2);
              break;
            }
            default:
              throw contract_error("train_small_net: unsupported rule");
          }
          if (normalize) {
            const double n = wj.norm();
            if (!(n > 0.0))
              throw degenerate_step_error("train_small_net: normalized weight hit the origin");
            wj /= n;
          }
          net.W.col(j) = wj;
        }

        net.a -= hlr * ga;
        net.c -= hlr * gc;

        if (!net.W.allFinite() || !net.a.allFinite() || !std::isfinite(net.c))
          throw divergence_error("train_small_net: nonfinite parameters");
      } catch (const error&) {
        diverged = true;
      }
    }
    if (!diverged) rec.epoch_norms.push_back(rms_norm());
  }

  if (diverged || !eval_stats_set) {
    rec.diverged = true;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rec.final_weight_norm = nan;
    rec.train_loss = nan;
    rec.val_error = nan;
    rec.test_error = nan;
    return rec;
  }

  rec.final_weight_norm = rms_norm();
  const Eigen::VectorXd lt = detail::net_logits(data.train.X, net, eval_stats);
  const Eigen::VectorXd lv = detail::net_logits(data.val.X, net, eval_stats);
  const Eigen::VectorXd ls = detail::net_logits(data.test.X, net, eval_stats);
  if (!lt.allFinite() || !lv.allFinite() || !ls.allFinite()) {
    rec.diverged = true;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rec.final_weight_norm = nan;
    rec.train_loss = nan;
    rec.val_error = nan;
    rec.test_error = nan;
    return rec;
  }
  rec.train_loss = detail::mean_logistic_loss(lt, data.train.y);
  rec.val_error = detail::classification_error(lv, data.val.y);
  rec.test_error = detail::classification_error(ls, data.test.y);
  return rec;
}

/// Train every grid cell. Replicate r of every cell runs from the same seed
/// substream_seed(master_seed, r): cells within a replicate share their init
/// and batch order, so comparisons across the grid are paired (common random
/// numbers) and the optimal-lr selection is not dominated by init luck. Any
/// execution order, including concurrent execution with `jobs` threads,
/// produces the identical table.
inline SweepTable run_grid_sweep(const GridSpec& grid, const TrainConfig& base,
                                 std::uint64_t master_seed, int jobs = 1) {
  detail::require(!grid.lambdas.empty() && !grid.etas.empty(),
                  "run_grid_sweep: grid must be nonempty");
  detail::require(grid.seeds_per_cell >= 1, "run_grid_sweep: seeds_per_cell must be >= 1");
  detail::require(jobs >= 1, "run_grid_sweep: jobs must be >= 1");

  SweepTable table;
  table.lambdas = grid.lambdas;
  table.etas = grid.etas;
  table.seeds_per_cell = grid.seeds_per_cell;
  const std::size_t total = grid.lambdas.size() * grid.etas.size() *
                            static_cast<std::size_t>(grid.seeds_per_cell);
  table.records.resize(total);

  auto work = [&](std::size_t begin, std::size_t stride) {
    const std::size_t per_lambda =
        grid.etas.size() * static_cast<std::size_t>(grid.seeds_per_cell);
    for (std::size_t idx = begin; idx < total; idx += stride) {
      const std::size_t li = idx / per_lambda;
      const std::size_t ei = (idx / static_cast<std::size_t>(grid.seeds_per_cell)) % grid.etas.size();
      const std::size_t rep = idx % static_cast<std::size_t>(grid.seeds_per_cell);
      TrainConfig cfg = base;
      cfg.opt.lambda = grid.lambdas[li];
      cfg.opt.eta = grid.etas[ei];
      table.records[idx] = train_small_net(cfg, substream_seed(master_seed, rep));
    }
  };

  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(jobs));
    for (int t = 0; t < jobs; ++t)
      threads.emplace_back(work, static_cast<std::size_t>(t), static_cast<std::size_t>(jobs));
    for (auto& th : threads) th.join();
  }
  return table;
}

struct OptimalLr {
  double eta_star = 0.0;
  double val_error = 0.0;
  bool at_grid_edge = false;
};

/// Validation-optimal learning rate at one lambda. A cell is usable when all
/// its replicates finished; replicate validation errors are averaged. Ties
/// break toward the smaller eta.
inline OptimalLr select_optimal_lr(const SweepTable& table, double lambda) {
  std::size_t li = table.lambdas.size();
  for (std::size_t i = 0; i < table.lambdas.size(); ++i) {
    const double l = table.lambdas[i];
    if (l == lambda || std::abs(l - lambda) <= 1e-9 * std::max(std::abs(l), std::abs(lambda))) {
      li = i;
      break;
    }
  }
  detail::require(li < table.lambdas.size(), "select_optimal_lr: lambda not present in table");

  OptimalLr best;
  bool found = false;
  std::size_t best_ei = 0;
  for (std::size_t ei = 0; ei < table.etas.size(); ++ei) {
    double acc = 0.0;
    bool usable = true;
    for (int r = 0; r < table.seeds_per_cell; ++r) {
      const RunRecord& rec = table.records[table.cell_index(li, ei, r)];
      if (rec.diverged) {
        usable = false;
        break;
      }
      acc += rec.val_error;
    }
    if (!usable) continue;
    const double v = acc / table.seeds_per_cell;
    if (!found || v < best.val_error) {
      found = true;
      best.eta_star = table.etas[ei];
      best.val_error = v;
      best_ei = ei;
    }
  }
  if (!found)
    throw degenerate_batch_error("select_optimal_lr: all cells diverged at this lambda");
  best.at_grid_edge = best_ei == 0 || best_ei + 1 == table.etas.size();
  return best;
}

/// Slope of log eta*(lambda) vs log lambda. Lambdas whose optimum sits on
/// the eta grid boundary are censored measurements and are excluded; at
/// least 4 interior optima are required.
inline LineFit fit_optimal_lr_exponent(const SweepTable& table) {
  std::vector<std::pair<double, double>> pts;
  for (double l : table.lambdas) {
    if (!(l > 0.0)) continue;
    try {
      const OptimalLr opt = select_optimal_lr(table, l);
      if (!opt.at_grid_edge) pts.emplace_back(l, opt.eta_star);
    } catch (const error&) {
      // lambda with no usable cells: skip
    }
  }
  detail::require(pts.size() >= 4,
                  "fit_optimal_lr_exponent: need at least 4 lambdas with interior optima");
  return fit_loglog_slope(pts);
}

/// Slope of log(final norm) vs log(eta/lambda) along the largest eta whose
/// row has at least 4 usable positive-lambda cells. The lambda effect on the
/// stationary norm shows most clearly at high eta.
inline LineFit fit_norm_exponent(const SweepTable& table) {
  for (std::size_t ei = table.etas.size(); ei-- > 0;) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t li = 0; li < table.lambdas.size(); ++li) {
      if (!(table.lambdas[li] > 0.0)) continue;
      double acc = 0.0;
      bool usable = true;
      for (int r = 0; r < table.seeds_per_cell; ++r) {
        const RunRecord& rec = table.records[table.cell_index(li, ei, r)];
        if (rec.diverged || !(rec.final_weight_norm > 0.0)) {
          usable = false;
          break;
        }
        acc += rec.final_weight_norm;
      }
      if (usable)
        pts.emplace_back(table.etas[ei] / table.lambdas[li], acc / table.seeds_per_cell);
    }
    if (pts.size() >= 4) return fit_loglog_slope(pts);
  }
  throw contract_error("fit_norm_exponent: no eta row with 4 usable cells");
}

}  // namespace normscale
