#include "picirc/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "picirc/errors.hpp"
#include "picirc/logspace.hpp"
#include "picirc/materializer.hpp"

namespace picirc {

void TrainConfig::validate() const {
  if (!(lr_min < lr_max)) throw ArgumentError("lr_min must be below lr_max");
  if (restart_period == 0) throw ArgumentError("restart period must be positive");
  if (eval_interval == 0) throw ArgumentError("evaluation interval must be positive");
  if (n == 0) throw ArgumentError("rule size must be positive");
}

double lr_schedule(std::size_t step, const TrainConfig& config) {
  const double phase = static_cast<double>(step % config.restart_period) / config.restart_period;
  return config.lr_min + (config.lr_max - config.lr_min) * (1.0 + std::cos(std::numbers::pi * phase)) / 2.0;
}

void Adam::step(std::span<ad::Matrix* const> params, std::span<const ad::Matrix> grads, double lr) {
  if (params.size() != grads.size()) throw ArgumentError("one gradient per parameter expected");
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(ad::Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(ad::Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (m_.size() != params.size()) throw ArgumentError("parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    params[i]->array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + epsilon_);
  }
}

// ---------------------------------------------------------------- PIC gradients

ad::Var pic_log_likelihood(ad::Tape& tape, const NeuralPic& model, const QuadratureRule& rule,
                           const Eigen::MatrixXd& batch) {
  const auto sums = materialize_sum_params(tape, model, rule);
  const auto inputs = materialize_input_loglik(tape, model, rule, batch);
  const auto& tree = model.tree;
  const auto order = tree.latents_breadth_first();
  std::vector<ad::Var> up(model.num_latents());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int l = *it;
    std::optional<ad::Var> region;
    auto add = [&](const ad::Var& v) { region = region ? *region + v : v; };
    for (int v : tree.observable_children(l)) add(inputs[v]);
    for (int c : tree.latent_children(l)) add(up[c]);
    if (!region) region = tape.constant(ad::Matrix::Zero(static_cast<Eigen::Index>(rule.size()), batch.rows()));
    up[l] = ad::log_matmul_exp(sums[l], *region);
  }
  return up[order.front()];
}

namespace {

void check_rows(const ad::Matrix& ll) {
  for (Eigen::Index b = 0; b < ll.cols(); ++b)
    if (!std::isfinite(ll(0, b)))
      throw NumericError("non-finite log-likelihood at batch row " + std::to_string(b));
}

std::vector<ad::Matrix> align(NeuralPic& model, const ad::GradientMap& grads) {
  std::vector<ad::Matrix> out;
  for (const auto* p : model.parameters()) {
    const auto it = grads.find(p);
    out.push_back(it == grads.end() ? ad::Matrix::Zero(p->rows(), p->cols()) : it->second);
  }
  return out;
}

}  // namespace

LossAndGradients pic_gradients(NeuralPic& model, const QuadratureRule& rule, const Eigen::MatrixXd& batch) {
  ad::Tape tape;
  const ad::Var ll = pic_log_likelihood(tape, model, rule, batch);
  check_rows(ll.value());
  const ad::Var loss = ad::scale(ad::sum(ll), -1.0 / static_cast<double>(batch.rows()));
  const auto grads = tape.backward(loss);
  return {loss.value()(0, 0), align(model, grads)};
}

LossAndGradients pic_gradients_materialized(NeuralPic& model, const QuadratureRule& rule,
                                            const Eigen::MatrixXd& batch) {
  ad::Tape tape;
  const auto sums = materialize_sum_params(tape, model, rule);
  const auto params = materialize_input_params(tape, model, rule);
  const std::size_t n = rule.size();
  const int root = model.tree.node(model.tree.root()).index;

  SumParamTensor s{static_cast<std::size_t>(model.num_latents()), n, {}};
  s.values.assign(s.latents * n * n, 0.0);
  for (int l = 0; l < model.num_latents(); ++l) {
    const auto& v = sums[l].value();
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k)
        s.at(l, j, k) = v(l == root ? 0 : static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
  }
  InputParamTensor in;
  in.vars = static_cast<std::size_t>(model.num_vars());
  in.points = n;
  in.types = model.types;
  for (std::size_t v = 0; v < in.vars; ++v) in.width = std::max<std::size_t>(in.width, params[v].cols());
  in.values.assign(in.vars * n * in.width, 0.0);
  for (std::size_t v = 0; v < in.vars; ++v)
    for (std::size_t j = 0; j < n; ++j)
      for (Eigen::Index c = 0; c < params[v].cols(); ++c)
        in.at(v, j)[c] = params[v].value()(static_cast<Eigen::Index>(j), c);

  const std::vector<QuadratureRule> rules(model.num_latents(), rule);
  const TensorParameters tensor(std::move(s), std::move(in), root);
  const auto traced = materialize_qpc_traced(model.pic, rules, tensor);
  const auto evidence = to_evidence(batch);
  const Flows f = flows(traced.qpc, evidence);
  for (std::size_t r = 0; r < f.rows_loglik.size(); ++r)
    if (!std::isfinite(f.rows_loglik[r]))
      throw NumericError("non-finite log-likelihood at batch row " + std::to_string(r));

  const double scale = -1.0 / static_cast<double>(batch.rows());
  std::vector<ad::Matrix> d_sums;
  for (const auto& v : sums) d_sums.push_back(ad::Matrix::Zero(v.rows(), v.cols()));
  std::vector<ad::Matrix> d_params;
  for (const auto& v : params) d_params.push_back(ad::Matrix::Zero(v.rows(), v.cols()));

  for (const Unit& unit : traced.qpc.units()) {
    const auto& origin = traced.origins[unit.id];
    if (origin.kind == UnitOrigin::Kind::sum) {
      const auto row = static_cast<Eigen::Index>(origin.point);
      for (std::size_t k = 0; k < unit.children.size(); ++k)
        d_sums[origin.index](row, static_cast<Eigen::Index>(k)) += scale * f.edge_flow[unit.id][k];
    } else if (origin.kind == UnitOrigin::Kind::input) {
      const auto& d = *unit.dist;
      const auto& m = f.moments[unit.id];
      auto& g = d_params[origin.index];
      const auto row = static_cast<Eigen::Index>(origin.point);
      switch (d.family) {
        case Family::categorical:
          for (std::size_t x = 0; x < f.state_flow[unit.id].size(); ++x)
            g(row, static_cast<Eigen::Index>(x)) += scale * f.state_flow[unit.id][x];
          break;
        case Family::binomial: {
          const double p = d.params[0];
          g(row, 0) += scale * (m[1] / p - (d.num_states * m[0] - m[1]) / (1.0 - p));
          break;
        }
        case Family::gaussian: {
          const double mu = d.params[0];
          const double var = std::exp(2.0 * d.params[1]);
          g(row, 0) += scale * (m[1] - mu * m[0]) / var;
          g(row, 1) += scale * ((m[2] - 2.0 * mu * m[1] + mu * mu * m[0]) / var - m[0]);
          break;
        }
      }
    }
  }
  std::vector<std::pair<ad::Var, ad::Matrix>> seeds;
  for (std::size_t l = 0; l < sums.size(); ++l) seeds.emplace_back(sums[l], std::move(d_sums[l]));
  for (std::size_t v = 0; v < params.size(); ++v) seeds.emplace_back(params[v], std::move(d_params[v]));
  const auto grads = tape.backward(seeds);
  return {scale * f.log_likelihood, align(model, grads)};
}

double train_pic_step(NeuralPic& model, const Eigen::MatrixXd& batch, const QuadratureRule& rule, Adam& optimizer,
                      std::size_t step, const TrainConfig& config) {
  auto lg = pic_gradients(model, rule, batch);
  if (!std::isfinite(lg.loss)) throw NumericError("non-finite training loss");
  auto params = model.parameters();
  optimizer.step(params, lg.gradients, lr_schedule(step, config));
  return lg.loss;
}

// ---------------------------------------------------------------- training loops

namespace {

class BatchSampler {
 public:
  BatchSampler(std::size_t rows, std::size_t batch, std::uint64_t seed)
      : order_(rows), batch_(batch == 0 || batch > rows ? rows : batch), rng_(seed) {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next() {
    if (batch_ == order_.size()) return order_;
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_ = 0;
  std::mt19937_64 rng_;
};

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& data, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), data.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = data.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

double mean_bpd(const Circuit& pc, const Eigen::MatrixXd& data) {
  const BatchEvaluator evaluator(pc);
  const auto ll = evaluator.log_likelihood(data);
  double total = 0.0;
  for (double v : ll) total += v;
  return bpd(total / static_cast<double>(ll.size()), pc.num_vars());
}

// Shared loop: step(k) trains once and returns the train NLL, eval() returns valid bpd,
// snapshot() returns a checkpoint.
TrainResult run_loop(const TrainConfig& config, const std::function<double(std::size_t)>& step,
                     const std::function<double()>& eval, const std::function<nlohmann::json()>& snapshot,
                     const ProgressCallback& progress) {
  config.validate();
  TrainResult result;
  result.initial_valid_bpd = eval();
  result.best_valid_bpd = result.initial_valid_bpd;
  result.best_checkpoint = snapshot();
  for (std::size_t s = 0; s < config.max_steps; ++s) {
    TrainRecord rec{s + 1, lr_schedule(s, config), step(s), std::nullopt};
    bool stop = false;
    if ((s + 1) % config.eval_interval == 0) {
      const double vb = eval();
      rec.valid_bpd = vb;
      if (vb < result.best_valid_bpd) {
        result.best_valid_bpd = vb;
        result.best_step = s + 1;
        result.best_checkpoint = snapshot();
      } else if (s + 1 - result.best_step >= config.patience) {
        stop = true;
      }
    }
    result.history.push_back(rec);
    result.steps_run = s + 1;
    if (progress) progress(rec);
    if (stop) break;
  }
  return result;
}

}  // namespace

double pic_valid_bpd(const NeuralPic& model, const Eigen::MatrixXd& data, const TrainConfig& config) {
  return mean_bpd(materialize_qpc(model, make_rule(config.rule, config.n)), data);
}

TrainResult train_pic(NeuralPic& model, const Eigen::MatrixXd& train, const Eigen::MatrixXd& valid,
                      const TrainConfig& config, const ProgressCallback& progress) {
  if (train.rows() == 0 || valid.rows() == 0) throw ArgumentError("training and validation data must be non-empty");
  const QuadratureRule rule = make_rule(config.rule, config.n);
  Adam optimizer(config.beta1, config.beta2, config.epsilon);
  BatchSampler sampler(static_cast<std::size_t>(train.rows()), config.batch_size, config.seed);
  auto result = run_loop(
      config,
      [&](std::size_t s) {
        return train_pic_step(model, gather_rows(train, sampler.next()), rule, optimizer, s, config);
      },
      [&] { return pic_valid_bpd(model, valid, config); }, [&] { return neural_pic_to_json(model); },
      progress);
  model = neural_pic_from_json(result.best_checkpoint);
  return result;
}

// ---------------------------------------------------------------- HCLT baselines

namespace {

class RandomHcltParameters : public QpcParameters {
 public:
  RandomHcltParameters(const LatentTree& tree, std::span<const VariableType> types, std::size_t h,
                       std::uint64_t seed)
      : h_(h), types_(types.begin(), types.end()) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    auto normalized_logs = [&](std::size_t k) {
      std::vector<double> w(k);
      for (auto& x : w) x = std::log(u(rng));
      const double norm = log_sum_exp(w);
      for (auto& x : w) x -= norm;
      return w;
    };
    const int root = tree.node(tree.root()).index;
    sums_.resize(tree.num_latents());
    for (int l = 0; l < tree.num_latents(); ++l)
      for (std::size_t j = 0; j < (l == root ? 1 : h); ++j) sums_[l].push_back(normalized_logs(h));
    root_ = root;
    std::normal_distribution<double> normal(0.0, 1.0);
    inputs_.resize(types_.size());
    for (std::size_t v = 0; v < types_.size(); ++v)
      for (std::size_t j = 0; j < h; ++j) {
        const auto& t = types_[v];
        switch (t.family) {
          case Family::categorical:
            inputs_[v].push_back(InputDistribution::categorical(normalized_logs(t.num_states)));
            break;
          case Family::binomial:
            inputs_[v].push_back(InputDistribution::binomial(t.num_states, 0.25 + 0.5 * u(rng)));
            break;
          case Family::gaussian:
            inputs_[v].push_back(InputDistribution::gaussian(normal(rng), 0.0));
            break;
        }
      }
  }

  double log_sum_weight(int latent, std::size_t parent_point, std::size_t point) const override {
    return sums_[latent][latent == root_ ? 0 : parent_point][point];
  }
  InputDistribution input(int var, std::size_t point) const override { return inputs_[var][point]; }

 private:
  std::size_t h_;
  std::vector<VariableType> types_;
  std::vector<std::vector<std::vector<double>>> sums_;
  std::vector<std::vector<InputDistribution>> inputs_;
  int root_ = 0;
};

std::vector<double> mix_log(const std::vector<double>& old_logs, const std::vector<double>& estimate, double eta) {
  std::vector<double> out(old_logs.size());
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = std::log((1.0 - eta) * std::exp(old_logs[k]) + eta * estimate[k]);
  const double norm = log_sum_exp(out);
  for (auto& x : out) x -= norm;
  return out;
}

}  // namespace

Circuit hclt_circuit(const LatentTree& tree, std::span<const VariableType> types, std::size_t hidden_states,
                     std::uint64_t seed) {
  if (hidden_states == 0) throw ArgumentError("need at least one hidden state");
  const Circuit pic = bn_to_pic(tree, types);
  const RandomHcltParameters params(tree, types, hidden_states, seed);
  // Only the rule sizes matter here; the points are never read.
  const std::vector<QuadratureRule> rules(tree.num_latents(), make_rule(RuleKind::midpoint, hidden_states));
  return materialize_qpc(pic, rules, params);
}

double em_step(Circuit& pc, std::span<const EvidenceVector> batch, double eta, double pseudocount) {
  if (!(eta > 0 && eta <= 1)) throw ArgumentError("EM step size must lie in (0, 1]");
  const Flows f = flows(pc, batch);
  for (const Unit& unit : pc.units()) {
    if (unit.kind == UnitKind::sum) {
      const auto& e = f.edge_flow[unit.id];
      const double total = std::accumulate(e.begin(), e.end(), 0.0);
      if (!(total > 0)) continue;  // no evidence reached this unit: keep its weights
      std::vector<double> est(e.size());
      const double denom = total + pseudocount * static_cast<double>(e.size());
      for (std::size_t k = 0; k < e.size(); ++k) est[k] = (e[k] + pseudocount) / denom;
      pc.set_weights(unit.id, mix_log(unit.weights, est, eta));
    } else if (unit.kind == UnitKind::input) {
      const auto& m = f.moments[unit.id];
      if (!(m[0] > 0)) continue;
      InputDistribution d = *unit.dist;
      switch (d.family) {
        case Family::categorical: {
          const auto& sf = f.state_flow[unit.id];
          std::vector<double> est(sf.size());
          const double denom = m[0] + pseudocount * static_cast<double>(sf.size());
          for (std::size_t x = 0; x < sf.size(); ++x) est[x] = (sf[x] + pseudocount) / denom;
          d.params = mix_log(d.params, est, eta);
          break;
        }
        case Family::binomial: {
          const double est = std::clamp(m[1] / (d.num_states * m[0]), 1e-6, 1.0 - 1e-6);
          d.params[0] = (1.0 - eta) * d.params[0] + eta * est;
          break;
        }
        case Family::gaussian: {
          const double mean = m[1] / m[0];
          const double sd = std::sqrt(std::max(m[2] / m[0] - mean * mean, 1e-6));
          d.params[0] = (1.0 - eta) * d.params[0] + eta * mean;
          d.params[1] = std::log((1.0 - eta) * std::exp(d.params[1]) + eta * sd);
          break;
        }
      }
      pc.set_distribution(unit.id, std::move(d));
    }
  }
  return f.log_likelihood;
}

double hclt_adam_step(Circuit& pc, HcltAdamState& state, std::span<const EvidenceVector> batch, double lr) {
  if (state.units.empty()) {
    for (const Unit& unit : pc.units()) {
      if (unit.kind == UnitKind::sum) {
        state.units.push_back(unit.id);
        state.params.push_back(Eigen::Map<const ad::Matrix>(unit.weights.data(), 1, unit.weights.size()));
      } else if (unit.kind == UnitKind::input) {
        const auto& d = *unit.dist;
        state.units.push_back(unit.id);
        if (d.family == Family::binomial) {
          state.params.push_back(ad::Matrix::Constant(1, 1, std::log(d.params[0] / (1.0 - d.params[0]))));
        } else {
          state.params.push_back(Eigen::Map<const ad::Matrix>(d.params.data(), 1, d.params.size()));
        }
      }
    }
  }
  const Flows f = flows(pc, batch);
  const double scale = -1.0 / static_cast<double>(batch.size());
  std::vector<ad::Matrix> grads;
  for (std::size_t i = 0; i < state.units.size(); ++i) {
    const Unit& unit = pc.unit(state.units[i]);
    ad::Matrix g = ad::Matrix::Zero(state.params[i].rows(), state.params[i].cols());
    if (unit.kind == UnitKind::sum) {
      const auto& e = f.edge_flow[unit.id];
      const double total = std::accumulate(e.begin(), e.end(), 0.0);
      for (std::size_t k = 0; k < e.size(); ++k)
        g(0, static_cast<Eigen::Index>(k)) = scale * (e[k] - std::exp(unit.weights[k]) * total);
    } else {
      const auto& d = *unit.dist;
      const auto& m = f.moments[unit.id];
      switch (d.family) {
        case Family::categorical:
          for (std::size_t x = 0; x < d.params.size(); ++x)
            g(0, static_cast<Eigen::Index>(x)) = scale * (f.state_flow[unit.id][x] - std::exp(d.params[x]) * m[0]);
          break;
        case Family::binomial:
          g(0, 0) = scale * (m[1] - d.num_states * d.params[0] * m[0]);
          break;
        case Family::gaussian: {
          const double mu = d.params[0];
          const double var = std::exp(2.0 * d.params[1]);
          g(0, 0) = scale * (m[1] - mu * m[0]) / var;
          g(0, 1) = scale * ((m[2] - 2.0 * mu * m[1] + mu * mu * m[0]) / var - m[0]);
          break;
        }
      }
    }
    grads.push_back(std::move(g));
  }
  std::vector<ad::Matrix*> ptrs;
  for (auto& p : state.params) ptrs.push_back(&p);
  state.optimizer.step(ptrs, grads, lr);
  for (std::size_t i = 0; i < state.units.size(); ++i) {
    const Unit& unit = pc.unit(state.units[i]);
    auto& p = state.params[i];
    if (unit.kind == UnitKind::sum || unit.dist->family == Family::categorical) {
      std::vector<double> logs(p.data(), p.data() + p.size());
      const double norm = log_sum_exp(logs);
      for (auto& x : logs) x -= norm;
      p = Eigen::Map<const ad::Matrix>(logs.data(), 1, static_cast<Eigen::Index>(logs.size()));
      if (unit.kind == UnitKind::sum) {
        pc.set_weights(unit.id, std::move(logs));
      } else {
        InputDistribution d = *unit.dist;
        d.params = std::move(logs);
        pc.set_distribution(unit.id, std::move(d));
      }
    } else {
      InputDistribution d = *unit.dist;
      if (d.family == Family::binomial) {
        d.params[0] = std::clamp(1.0 / (1.0 + std::exp(-p(0, 0))), 1e-12, 1.0 - 1e-12);
      } else {
        d.params = {p(0, 0), p(0, 1)};
      }
      pc.set_distribution(unit.id, std::move(d));
    }
  }
  return f.log_likelihood;
}

TrainResult train_hclt(Circuit& pc, const Eigen::MatrixXd& train, const Eigen::MatrixXd& valid,
                       const TrainConfig& config, HcltOptimizer optimizer, const ProgressCallback& progress) {
  if (train.rows() == 0 || valid.rows() == 0) throw ArgumentError("training and validation data must be non-empty");
  const auto evidence = to_evidence(train);
  BatchSampler sampler(evidence.size(), config.batch_size, config.seed);
  HcltAdamState adam{Adam(config.beta1, config.beta2, config.epsilon), {}, {}};
  auto result = run_loop(
      config,
      [&](std::size_t s) {
        const auto rows = sampler.next();
        std::vector<EvidenceVector> batch;
        for (auto r : rows) batch.push_back(evidence[r]);
        const double lr = lr_schedule(s, config);
        const double ll = optimizer == HcltOptimizer::em ? em_step(pc, batch, lr, config.pseudocount)
                                                         : hclt_adam_step(pc, adam, batch, lr);
        return -ll / static_cast<double>(batch.size());
      },
      [&] { return mean_bpd(pc, valid); }, [&] { return circuit_to_json(pc); }, progress);
  pc = circuit_from_json(result.best_checkpoint);
  return result;
}

}  // namespace picirc
