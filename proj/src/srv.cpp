#include "slowmodes/srv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace slowmodes {

namespace {

constexpr double kDegeneracyGap = 1e-6;

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

// Post-activation values of every layer; front() is the input, back() the output.
struct ForwardCache {
  std::vector<Matrix> values;
};

ForwardCache forward_cached(const NetworkParams& params, const MlpSpec& spec, const Matrix& X) {
  if (X.cols() != spec.input_dim()) {
    throw InvalidArgument("input has " + std::to_string(X.cols()) + " columns, network expects " +
                          std::to_string(spec.input_dim()));
  }
  ForwardCache cache;
  cache.values.reserve(spec.layers.size());
  cache.values.push_back(X);
  const int depth = spec.depth();
  for (int l = 0; l < depth; ++l) {
    Matrix z = cache.values.back() * params.weights[l].transpose();
    z.rowwise() += params.biases[l].transpose();
    if (l + 1 < depth && spec.hidden_activation == Activation::Tanh) z = z.array().tanh().matrix();
    cache.values.push_back(std::move(z));
  }
  return cache;
}

// Gradient of sum(G .* f(X)) with respect to the parameters, flattened.
Vector backward(const NetworkParams& params, const MlpSpec& spec, const ForwardCache& cache,
                Matrix delta) {
  const int depth = spec.depth();
  std::vector<Matrix> grad_w(depth);
  std::vector<Vector> grad_b(depth);
  for (int l = depth - 1; l >= 0; --l) {
    grad_w[l] = delta.transpose() * cache.values[l];
    grad_b[l] = delta.colwise().sum().transpose();
    if (l == 0) break;
    delta = delta * params.weights[l];
    if (spec.hidden_activation == Activation::Tanh) {
      delta.array() *= 1.0 - cache.values[l].array().square();
    }
  }
  NetworkParams g{std::move(grad_w), std::move(grad_b)};
  return g.flatten();
}

LossReport make_report(LossKind kind, const GevSolution& gev) {
  LossReport report;
  report.eigenvalues = gev.eigenvalues;
  report.loss = 0.0;
  for (Index i = 0; i < gev.eigenvalues.size(); ++i) {
    const double lambda = gev.eigenvalues[i];
    report.loss += loss_term(kind, lambda);
    if (lambda < 0.0) report.negative_eigenvalue = true;
    if (lambda > 1.0 + 1e-6) report.above_one = true;
  }
  const Index k = gev.eigenvalues.size();
  for (Index i = 0; i < k && i + 1 < gev.spectrum.size(); ++i) {
    if (gev.spectrum[i] - gev.spectrum[i + 1] < kDegeneracyGap) report.degenerate = true;
  }
  return report;
}

// Derivative weights per scored mode; members of a degenerate group share the
// group mean so the gradient is that of the group sum.
Vector grouped_derivatives(LossKind kind, const GevSolution& gev) {
  const Index k = gev.eigenvalues.size();
  Vector out(k);
  Index start = 0;
  while (start < k) {
    Index end = start + 1;
    while (end < k && gev.spectrum[end - 1] - gev.spectrum[end] < kDegeneracyGap) ++end;
    double mean = 0.0;
    for (Index i = start; i < end; ++i) mean += loss_term_derivative(kind, gev.eigenvalues[i]);
    mean /= static_cast<double>(end - start);
    out.segment(start, end - start).setConstant(mean);
    start = end;
  }
  return out;
}

struct PairSubset {
  const Matrix& states;
  std::span<const Index> heads;
  std::span<const Index> tails;
};

LossGradient evaluate_pairs(const NetworkParams& params, const MlpSpec& spec,
                            const PairSubset& pairs, int n_modes, double epsilon, LossKind kind,
                            bool want_gradient) {
  const auto n_pairs = static_cast<Index>(pairs.heads.size());
  if (n_pairs < 2) throw InvalidArgument("a batch needs at least two pairs");

  // Evaluate the network once per distinct state in the batch.
  std::vector<Index> local(static_cast<std::size_t>(pairs.states.rows()), -1);
  std::vector<Index> used;
  auto localize = [&](Index s) {
    if (local[s] < 0) {
      local[s] = static_cast<Index>(used.size());
      used.push_back(s);
    }
    return local[s];
  };
  std::vector<Index> head_local(n_pairs);
  std::vector<Index> tail_local(n_pairs);
  for (Index p = 0; p < n_pairs; ++p) {
    head_local[p] = localize(pairs.heads[p]);
    tail_local[p] = localize(pairs.tails[p]);
  }
  Matrix X(static_cast<Index>(used.size()), pairs.states.cols());
  for (std::size_t u = 0; u < used.size(); ++u) X.row(static_cast<Index>(u)) = pairs.states.row(used[u]);

  const ForwardCache cache = forward_cached(params, spec, X);
  const Matrix& F = cache.values.back();
  const Index n_out = F.cols();

  LossGradient out;
  if (!F.allFinite()) {
    // Reported as a non-finite loss so training aborts instead of skipping the step.
    out.report.loss = std::numeric_limits<double>::quiet_NaN();
    return out;
  }

  Matrix A(n_pairs, n_out);
  Matrix T(n_pairs, n_out);
  for (Index p = 0; p < n_pairs; ++p) {
    A.row(p) = F.row(head_local[p]);
    T.row(p) = F.row(tail_local[p]);
  }
  const double scale = static_cast<double>(n_pairs);
  const Eigen::RowVectorXd mean = (A.colwise().sum() + T.colwise().sum()) / (2.0 * scale);
  A.rowwise() -= mean;
  T.rowwise() -= mean;
  const Matrix C = symmetrized(A.transpose() * T / scale);
  const Matrix Q = symmetrized((A.transpose() * A + T.transpose() * T) / (2.0 * scale));

  if (!want_gradient) {
    out.report = make_report(kind, solve_gev(C, Q, n_modes, epsilon));
    return out;
  }
  const VacGradient vac = vac_loss_gradient(C, Q, n_modes, epsilon, kind);
  out.report = vac.report;

  Matrix grad_a = (T * vac.dC + A * vac.dQ) / scale;
  Matrix grad_t = (A * vac.dC + T * vac.dQ) / scale;
  // Pooled-mean centering.
  const Eigen::RowVectorXd shift = (grad_a.colwise().sum() + grad_t.colwise().sum()) / (2.0 * scale);
  grad_a.rowwise() -= shift;
  grad_t.rowwise() -= shift;

  Matrix grad_f = Matrix::Zero(F.rows(), n_out);
  for (Index p = 0; p < n_pairs; ++p) {
    grad_f.row(head_local[p]) += grad_a.row(p);
    grad_f.row(tail_local[p]) += grad_t.row(p);
  }
  out.gradient = backward(params, spec, cache, std::move(grad_f));
  return out;
}

std::vector<Index> iota_indices(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), Index{0});
  return v;
}

}  // namespace

Index MlpSpec::parameter_count() const {
  Index total = 0;
  for (int l = 0; l < depth(); ++l) total += Index{layers[l + 1]} * (layers[l] + 1);
  return total;
}

void MlpSpec::validate() const {
  if (layers.size() < 2) throw InvalidArgument("network needs at least input and output sizes");
  for (int size : layers) {
    if (size < 1) throw InvalidArgument("every layer size must be >= 1");
  }
}

NetworkParams NetworkParams::zeros(const MlpSpec& spec) {
  spec.validate();
  NetworkParams p;
  for (int l = 0; l < spec.depth(); ++l) {
    p.weights.push_back(Matrix::Zero(spec.layers[l + 1], spec.layers[l]));
    p.biases.push_back(Vector::Zero(spec.layers[l + 1]));
  }
  return p;
}

NetworkParams NetworkParams::random(const MlpSpec& spec, std::uint64_t seed) {
  NetworkParams p = zeros(spec);
  Rng rng(seed);
  for (int l = 0; l < spec.depth(); ++l) {
    const double a = std::sqrt(3.0 / spec.layers[l]);
    for (Index r = 0; r < p.weights[l].rows(); ++r) {
      for (Index c = 0; c < p.weights[l].cols(); ++c) p.weights[l](r, c) = rng.uniform(-a, a);
    }
    for (Index r = 0; r < p.biases[l].size(); ++r) p.biases[l][r] = rng.uniform(-a, a);
  }
  return p;
}

Vector NetworkParams::flatten() const {
  Index total = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) total += weights[l].size() + biases[l].size();
  Vector theta(total);
  Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (Index r = 0; r < weights[l].rows(); ++r) {
      for (Index c = 0; c < weights[l].cols(); ++c) theta[k++] = weights[l](r, c);
    }
    theta.segment(k, biases[l].size()) = biases[l];
    k += biases[l].size();
  }
  return theta;
}

NetworkParams NetworkParams::unflatten(const MlpSpec& spec, const Vector& theta) {
  if (theta.size() != spec.parameter_count()) {
    throw InvalidArgument("parameter vector has " + std::to_string(theta.size()) +
                          " entries, network needs " + std::to_string(spec.parameter_count()));
  }
  NetworkParams p = zeros(spec);
  Index k = 0;
  for (int l = 0; l < spec.depth(); ++l) {
    for (Index r = 0; r < p.weights[l].rows(); ++r) {
      for (Index c = 0; c < p.weights[l].cols(); ++c) p.weights[l](r, c) = theta[k++];
    }
    p.biases[l] = theta.segment(k, p.biases[l].size());
    k += p.biases[l].size();
  }
  return p;
}

Matrix mlp_forward(const NetworkParams& params, const MlpSpec& spec, const Matrix& X) {
  return forward_cached(params, spec, X).values.back();
}

double loss_term(LossKind kind, double eigenvalue) {
  switch (kind) {
    case LossKind::Vamp2:
      return -eigenvalue * eigenvalue;
    case LossKind::TimescaleSum:
      return 1.0 / std::log(eigenvalue);
  }
  return 0.0;
}

double loss_term_derivative(LossKind kind, double eigenvalue) {
  switch (kind) {
    case LossKind::Vamp2:
      return -2.0 * eigenvalue;
    case LossKind::TimescaleSum: {
      const double lg = std::log(eigenvalue);
      return -1.0 / (eigenvalue * lg * lg);
    }
  }
  return 0.0;
}

VacGradient vac_loss_gradient(const Matrix& C, const Matrix& Q, int n_modes, double epsilon,
                              LossKind kind) {
  const GevSolution gev = solve_gev(C, Q, n_modes, epsilon);
  const Index d = C.rows();
  VacGradient out;
  out.report = make_report(kind, gev);

  const Matrix& L = gev.L;
  const Matrix M = L.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));

  // dLoss/dC~ for C~ = M C M^T.
  const Vector weights = grouped_derivatives(kind, gev);
  const Matrix grad_whitened = gev.whitened * weights.asDiagonal() * gev.whitened.transpose();

  out.dC = symmetrized(M.transpose() * grad_whitened * M);

  // Through M = L^-1, then through the Cholesky factorization Q_reg = L L^T.
  const Matrix grad_m = 2.0 * grad_whitened * M * symmetrized(C);
  const Matrix grad_l = (-(M.transpose() * grad_m * M.transpose())).triangularView<Eigen::Lower>();
  Matrix phi = (L.transpose() * grad_l).triangularView<Eigen::Lower>();
  phi.diagonal() *= 0.5;
  Matrix grad_q = 0.5 * M.transpose() * (phi + phi.transpose()) * M;

  // Q_reg = Q + epsilon * trace(Q) / d * I when trace(Q) > 0.
  if (Q.trace() / static_cast<double>(d) > 0.0) {
    grad_q.diagonal().array() += epsilon / static_cast<double>(d) * grad_q.trace();
  }
  out.dQ = symmetrized(grad_q);
  return out;
}

LossReport vamp2_loss(const NetworkParams& params, const MlpSpec& spec, const Matrix& heads,
                      const Matrix& tails, int n_modes, double epsilon, LossKind kind) {
  const TabulatedPairs pairs = tabulate_pairs(heads, tails);
  return evaluate_pairs(params, spec, {pairs.states, pairs.heads, pairs.tails}, n_modes, epsilon,
                        kind, false)
      .report;
}

LossGradient loss_gradient(const NetworkParams& params, const MlpSpec& spec, const Matrix& heads,
                           const Matrix& tails, int n_modes, double epsilon, LossKind kind) {
  const TabulatedPairs pairs = tabulate_pairs(heads, tails);
  return evaluate_pairs(params, spec, {pairs.states, pairs.heads, pairs.tails}, n_modes, epsilon,
                        kind, true);
}

void TrainConfig::validate(const MlpSpec& spec) const {
  spec.validate();
  const int modes = n_modes == 0 ? spec.output_dim() : n_modes;
  if (lag < 1) throw InvalidArgument("lag must be >= 1");
  if (modes < 1 || modes > spec.output_dim()) {
    throw InvalidArgument("n_modes must be in [1, output size]");
  }
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("Adam decay rates must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw InvalidArgument("adam_epsilon must be positive");
  if (batch_size < 2 * spec.output_dim()) {
    throw InvalidArgument("batch_size must be at least twice the output size");
  }
  if (max_epochs < 1) throw InvalidArgument("max_epochs must be >= 1");
  if (patience < 1) throw InvalidArgument("patience must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction <= 0.5)) {
    throw InvalidArgument("validation_fraction must lie in (0, 0.5]");
  }
  if (!(epsilon >= 0.0)) throw InvalidArgument("epsilon must be non-negative");
}

SrvModel train_srv(std::span<const Trajectory> trajectories, const MlpSpec& spec,
                   const TrainConfig& config) {
  config.validate(spec);
  const int n_modes = config.n_modes == 0 ? spec.output_dim() : config.n_modes;
  const LaggedDataset data = make_lagged_pairs(trajectories, config.lag);
  const TabulatedPairs pairs = tabulate_pairs(data.heads, data.tails);
  const Index n_pairs = pairs.size();

  Rng rng(config.seed);
  std::vector<Index> order = iota_indices(n_pairs);
  shuffle_in_place(order, rng);
  const auto n_val = std::max<Index>(
      2, static_cast<Index>(std::llround(config.validation_fraction * static_cast<double>(n_pairs))));
  if (n_pairs - n_val < 2 * spec.output_dim()) {
    throw InvalidArgument("not enough lagged pairs for one training batch after the validation split");
  }
  std::vector<Index> val_heads(n_val), val_tails(n_val);
  for (Index k = 0; k < n_val; ++k) {
    val_heads[k] = pairs.heads[order[k]];
    val_tails[k] = pairs.tails[order[k]];
  }
  std::vector<Index> train(order.begin() + n_val, order.end());
  const auto n_train = static_cast<Index>(train.size());
  const Index n_batches = std::max<Index>(1, n_train / config.batch_size);

  SrvModel model;
  model.spec = spec;
  model.config = config;
  model.lag = config.lag;
  model.params = NetworkParams::random(spec, config.seed);

  Vector theta = model.params.flatten();
  Vector best_theta = theta;
  Vector m1 = Vector::Zero(theta.size());
  Vector m2 = Vector::Zero(theta.size());
  long step = 0;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<Index> batch_heads, batch_tails;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    shuffle_in_place(train, rng);
    EpochRecord record;
    record.epoch = epoch;
    double loss_sum = 0.0;
    int loss_count = 0;
    for (Index b = 0; b < n_batches; ++b) {
      const Index begin = b * n_train / n_batches;
      const Index end = (b + 1) * n_train / n_batches;
      batch_heads.resize(static_cast<std::size_t>(end - begin));
      batch_tails.resize(static_cast<std::size_t>(end - begin));
      for (Index k = begin; k < end; ++k) {
        batch_heads[k - begin] = pairs.heads[train[k]];
        batch_tails[k - begin] = pairs.tails[train[k]];
      }
      const NetworkParams params = NetworkParams::unflatten(spec, theta);
      LossGradient lg;
      try {
        lg = evaluate_pairs(params, spec, {pairs.states, batch_heads, batch_tails}, n_modes,
                            config.epsilon, config.loss, true);
      } catch (const TrainingAborted&) {
        throw;
      } catch (const NumericalError&) {
        ++record.skipped_steps;
        continue;
      }
      if (!std::isfinite(lg.report.loss) || !lg.gradient.allFinite()) {
        throw TrainingAborted(epoch, b, "non-finite training loss");
      }
      loss_sum += lg.report.loss;
      ++loss_count;

      ++step;
      m1 = config.beta1 * m1 + (1.0 - config.beta1) * lg.gradient;
      m2 = config.beta2 * m2 + (1.0 - config.beta2) * lg.gradient.cwiseAbs2();
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      theta.array() -= config.learning_rate * (m1.array() / c1) /
                       ((m2.array() / c2).sqrt() + config.adam_epsilon);
    }
    record.train_loss = loss_count > 0 ? loss_sum / loss_count
                                       : std::numeric_limits<double>::quiet_NaN();

    double val_loss = std::numeric_limits<double>::infinity();
    try {
      val_loss = evaluate_pairs(NetworkParams::unflatten(spec, theta), spec,
                                {pairs.states, val_heads, val_tails}, n_modes, config.epsilon,
                                config.loss, false)
                     .report.loss;
    } catch (const NumericalError&) {
      // Unfactorizable validation correlations count as no improvement.
    }
    if (std::isnan(val_loss)) throw TrainingAborted(epoch, n_batches, "non-finite validation loss");
    record.validation_loss = val_loss;
    if (val_loss < best) {
      best = val_loss;
      best_theta = theta;
      since_best = 0;
    } else {
      ++since_best;
    }
    record.best_validation_loss = best;
    model.trace.push_back(record);
    if (since_best >= config.patience) break;
  }

  model.params = NetworkParams::unflatten(spec, best_theta);
  finalize_srv(model, data);
  return model;
}

void finalize_srv(SrvModel& model, const LaggedDataset& data) {
  const int n_modes = model.config.n_modes == 0 ? model.spec.output_dim() : model.config.n_modes;
  const TabulatedPairs pairs = tabulate_pairs(data.heads, data.tails);
  const Matrix features = mlp_forward(model.params, model.spec, pairs.states);
  const CorrelationPair corr = estimate_correlations(pairs, features, true);
  const GevSolution gev = solve_gev(corr, n_modes, model.config.epsilon);
  model.output_mean = corr.mean;
  model.mixing = gev.S.transpose();
  model.eigenvalues = gev.eigenvalues;
  model.lag = data.lag;
}

Matrix srv_transform(const SrvModel& model, const Matrix& X) {
  const Matrix f = mlp_forward(model.params, model.spec, X);
  return (f.rowwise() - model.output_mean.transpose()) * model.mixing.transpose();
}

Matrix srv_gradient_wrt_input(const SrvModel& model,
                              const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  const Matrix X = x;
  const ForwardCache cache = forward_cached(model.params, model.spec, X);
  const int depth = model.spec.depth();
  // Forward-mode chain: J = W_L D_{L-1} W_{L-1} ... D_1 W_1.
  Matrix jac = model.params.weights[0];
  for (int l = 1; l < depth; ++l) {
    if (model.spec.hidden_activation == Activation::Tanh) {
      const Eigen::ArrayXd slope = 1.0 - cache.values[l].row(0).array().square().transpose();
      jac = slope.matrix().asDiagonal() * jac;
    }
    jac = (model.params.weights[l] * jac).eval();
  }
  return model.mixing * jac;
}

}  // namespace slowmodes
