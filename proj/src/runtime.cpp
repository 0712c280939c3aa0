#include "picirc/runtime.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <string>

#include "picirc/errors.hpp"
#include "picirc/logspace.hpp"
#include "picirc/parallel.hpp"

namespace picirc {

namespace {

void require_concrete(const Circuit& qpc, const std::vector<UnitId>& order) {
  for (UnitId u : order) {
    const Unit& unit = qpc.unit(u);
    if (unit.kind == UnitKind::integral || (unit.dist && unit.dist->symbolic))
      throw ArgumentError("circuit is symbolic; materialize it before evaluation (unit " +
                          std::to_string(u) + ")");
  }
}

double input_value(const Unit& unit, const EvidenceVector& evidence) {
  const int var = unit.scope.front();
  const auto& ev = evidence[var];
  if (!ev) return 0.0;
  if (!unit.dist->in_support(*ev))
    throw ArgumentError("value " + exact_decimal(*ev) + " for variable " + std::to_string(var) +
                        " is outside the support of unit " + std::to_string(unit.id));
  return unit.dist->log_prob(*ev);
}

double sum_value(const Unit& unit, const std::vector<double>& values) {
  double max = kNegInf;
  for (std::size_t k = 0; k < unit.children.size(); ++k)
    max = std::max(max, unit.weights[k] + values[unit.children[k]]);
  if (max == kNegInf || std::isinf(max)) return max;
  double acc = 0.0;
  for (std::size_t k = 0; k < unit.children.size(); ++k)
    acc += std::exp(unit.weights[k] + values[unit.children[k]] - max);
  return max + std::log(acc);
}

void evaluate_row(const Circuit& qpc, const std::vector<UnitId>& order, const EvidenceVector& evidence,
                  std::vector<double>& values) {
  if (static_cast<int>(evidence.size()) != qpc.num_vars())
    throw ArgumentError("evidence has " + std::to_string(evidence.size()) + " entries, circuit has " +
                        std::to_string(qpc.num_vars()) + " variables");
  for (UnitId u : order) {
    const Unit& unit = qpc.unit(u);
    double v = 0.0;
    switch (unit.kind) {
      case UnitKind::input: v = input_value(unit, evidence); break;
      case UnitKind::product:
        for (UnitId c : unit.children) v += values[c];
        break;
      case UnitKind::sum: v = sum_value(unit, values); break;
      case UnitKind::integral: throw ArgumentError("integral unit in a materialized circuit");
    }
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw NumericError("non-finite value at unit " + std::to_string(u));
    values[u] = v;
  }
}

}  // namespace

std::vector<EvidenceVector> to_evidence(const Eigen::MatrixXd& data) {
  std::vector<EvidenceVector> out(data.rows(), EvidenceVector(data.cols()));
  for (Eigen::Index r = 0; r < data.rows(); ++r)
    for (Eigen::Index c = 0; c < data.cols(); ++c)
      if (!std::isnan(data(r, c))) out[r][c] = data(r, c);
  return out;
}

std::vector<double> log_forward(const Circuit& qpc, std::span<const EvidenceVector> batch) {
  const auto order = post_order(qpc);
  require_concrete(qpc, order);
  std::vector<double> out(batch.size());
  parallel_for(batch.size(), [&](std::size_t begin, std::size_t end) {
    std::vector<double> values(qpc.num_units());
    for (std::size_t r = begin; r < end; ++r) {
      evaluate_row(qpc, order, batch[r], values);
      out[r] = values[qpc.root()];
    }
  });
  return out;
}

double log_forward(const Circuit& qpc, const EvidenceVector& evidence) {
  return log_forward(qpc, std::span<const EvidenceVector>(&evidence, 1)).front();
}

double marginal(const Circuit& qpc, const EvidenceVector& evidence) { return log_forward(qpc, evidence); }

double bpd(double loglik, int num_vars) {
  if (num_vars < 1) throw ArgumentError("bpd needs at least one variable");
  return -loglik / (num_vars * std::numbers::ln2);
}

Flows flows(const Circuit& qpc, std::span<const EvidenceVector> batch) {
  const auto order = post_order(qpc);
  require_concrete(qpc, order);
  const std::size_t n_units = qpc.num_units();

  auto empty = [&] {
    Flows f;
    f.unit_flow.assign(n_units, 0.0);
    f.edge_flow.resize(n_units);
    f.state_flow.resize(n_units);
    f.moments.assign(n_units, {0.0, 0.0, 0.0});
    for (const Unit& u : qpc.units()) {
      if (u.kind == UnitKind::sum) f.edge_flow[u.id].assign(u.children.size(), 0.0);
      if (u.kind == UnitKind::input && u.dist->family == Family::categorical)
        f.state_flow[u.id].assign(u.dist->num_states, 0.0);
    }
    return f;
  };

  // Fixed chunks, reduced in chunk order: reproducible for a given thread count.
  const std::size_t chunks = std::min<std::size_t>(batch.size(), std::max<std::size_t>(1, num_threads()));
  std::vector<Flows> partial(chunks);
  Flows total = empty();
  total.rows_loglik.assign(batch.size(), 0.0);
  parallel_for(chunks, [&](std::size_t cb, std::size_t ce) {
    for (std::size_t chunk = cb; chunk < ce; ++chunk) {
      Flows f = empty();
      std::vector<double> values(n_units);
      std::vector<double> flow(n_units);
      const std::size_t begin = batch.size() * chunk / chunks;
      const std::size_t end = batch.size() * (chunk + 1) / chunks;
      for (std::size_t r = begin; r < end; ++r) {
        evaluate_row(qpc, order, batch[r], values);
        const double root = values[qpc.root()];
        total.rows_loglik[r] = root;
        f.log_likelihood += root;
        if (root == kNegInf) continue;
        std::fill(flow.begin(), flow.end(), 0.0);
        flow[qpc.root()] = 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
          const Unit& unit = qpc.unit(*it);
          const double fu = flow[unit.id];
          if (fu == 0.0) continue;
          f.unit_flow[unit.id] += fu;
          switch (unit.kind) {
            case UnitKind::sum: {
              const double vs = values[unit.id];
              if (vs == kNegInf) break;
              for (std::size_t k = 0; k < unit.children.size(); ++k) {
                const UnitId c = unit.children[k];
                const double ef = fu * std::exp(unit.weights[k] + values[c] - vs);
                f.edge_flow[unit.id][k] += ef;
                flow[c] += ef;
              }
              break;
            }
            case UnitKind::product:
              for (UnitId c : unit.children) flow[c] += fu;
              break;
            case UnitKind::input: {
              const auto& ev = batch[r][unit.scope.front()];
              if (!ev) break;
              const double x = *ev;
              auto& m = f.moments[unit.id];
              m[0] += fu;
              m[1] += fu * x;
              m[2] += fu * x * x;
              if (!f.state_flow[unit.id].empty()) f.state_flow[unit.id][static_cast<std::size_t>(x)] += fu;
              break;
            }
            case UnitKind::integral: break;
          }
        }
      }
      partial[chunk] = std::move(f);
    }
  });
  for (const auto& f : partial) {
    total.log_likelihood += f.log_likelihood;
    for (std::size_t u = 0; u < n_units; ++u) {
      total.unit_flow[u] += f.unit_flow[u];
      for (std::size_t k = 0; k < f.edge_flow[u].size(); ++k) total.edge_flow[u][k] += f.edge_flow[u][k];
      for (std::size_t k = 0; k < f.state_flow[u].size(); ++k) total.state_flow[u][k] += f.state_flow[u][k];
      for (int k = 0; k < 3; ++k) total.moments[u][k] += f.moments[u][k];
    }
  }
  return total;
}

Eigen::MatrixXd sample_pc(const Circuit& qpc, std::size_t n, std::uint64_t seed) {
  require_concrete(qpc, post_order(qpc));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Eigen::MatrixXd out = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), qpc.num_vars(),
                                                  std::numeric_limits<double>::quiet_NaN());
  std::vector<UnitId> stack;
  for (std::size_t s = 0; s < n; ++s) {
    stack.assign(1, qpc.root());
    while (!stack.empty()) {
      const Unit& unit = qpc.unit(stack.back());
      stack.pop_back();
      switch (unit.kind) {
        case UnitKind::sum: {
          const double norm = log_sum_exp(unit.weights);
          double u = uniform(rng);
          std::size_t pick = unit.children.size() - 1;
          for (std::size_t k = 0; k < unit.children.size(); ++k) {
            u -= std::exp(unit.weights[k] - norm);
            if (u < 0) {
              pick = k;
              break;
            }
          }
          // Never land on a zero-weight child through rounding at the tail.
          while (pick > 0 && unit.weights[pick] == kNegInf) --pick;
          stack.push_back(unit.children[pick]);
          break;
        }
        case UnitKind::product:
          for (auto it = unit.children.rbegin(); it != unit.children.rend(); ++it) stack.push_back(*it);
          break;
        case UnitKind::input: {
          const auto& d = *unit.dist;
          double x = 0.0;
          switch (d.family) {
            case Family::categorical: {
              double u = uniform(rng);
              x = static_cast<double>(d.params.size() - 1);
              for (std::size_t k = 0; k < d.params.size(); ++k) {
                u -= std::exp(d.params[k]);
                if (u < 0) {
                  x = static_cast<double>(k);
                  break;
                }
              }
              break;
            }
            case Family::binomial:
              x = std::binomial_distribution<int>(d.num_states, d.params[0])(rng);
              break;
            case Family::gaussian:
              x = std::normal_distribution<double>(d.params[0], std::exp(d.params[1]))(rng);
              break;
          }
          out(static_cast<Eigen::Index>(s), unit.scope.front()) = x;
          break;
        }
        case UnitKind::integral: break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- blocked evaluator

namespace {
constexpr double kFallbackBelow = 1e-280;
constexpr Eigen::Index kChunkRows = 128;
}  // namespace

BatchEvaluator::BatchEvaluator(const Circuit& qpc) : qpc_(qpc) {
  const auto order = post_order(qpc_);
  require_concrete(qpc_, order);
  std::map<std::vector<UnitId>, std::size_t> by_children;
  std::vector<std::size_t> block_of(qpc_.num_units(), 0);
  for (UnitId u : order) {
    const Unit& unit = qpc_.unit(u);
    if (unit.kind != UnitKind::sum) continue;
    auto [it, fresh] = by_children.try_emplace(unit.children, blocks_.size());
    if (fresh) blocks_.push_back({{}, unit.children, {}, {}, {}});
    blocks_[it->second].units.push_back(u);
    block_of[u] = it->second;
  }
  for (auto& b : blocks_) {
    const auto rows = static_cast<Eigen::Index>(b.units.size());
    const auto cols = static_cast<Eigen::Index>(b.children.size());
    b.log_weights.resize(rows, cols);
    b.weights.resize(rows, cols);
    b.shift.resize(rows);
    for (Eigen::Index j = 0; j < rows; ++j) {
      const auto& w = qpc_.unit(b.units[j]).weights;
      double max = kNegInf;
      for (Eigen::Index k = 0; k < cols; ++k) {
        b.log_weights(j, k) = w[k];
        max = std::max(max, w[k]);
      }
      b.shift(j) = max;
      for (Eigen::Index k = 0; k < cols; ++k)
        b.weights(j, k) = max == kNegInf ? 0.0 : std::exp(w[k] - max);
    }
  }
  std::vector<bool> scheduled(blocks_.size(), false);
  for (UnitId u : order) {
    const Unit& unit = qpc_.unit(u);
    if (unit.kind == UnitKind::input) {
      schedule_.emplace_back(Step::input, u);
    } else if (unit.kind == UnitKind::product) {
      schedule_.emplace_back(Step::product, u);
    } else if (!scheduled[block_of[u]]) {
      scheduled[block_of[u]] = true;
      schedule_.emplace_back(Step::block, block_of[u]);
    }
  }
}

void BatchEvaluator::evaluate_chunk(const Eigen::MatrixXd& data, Eigen::Index begin, Eigen::Index end,
                                    std::vector<double>& out) const {
  const Eigen::Index rows = end - begin;
  Eigen::MatrixXd values(rows, static_cast<Eigen::Index>(qpc_.num_units()));
  Eigen::MatrixXd gathered;
  Eigen::MatrixXd linear;
  for (const auto& [step, index] : schedule_) {
    switch (step) {
      case Step::input: {
        const Unit& unit = qpc_.unit(index);
        const int var = unit.scope.front();
        for (Eigen::Index r = 0; r < rows; ++r) {
          const double x = data(begin + r, var);
          if (std::isnan(x)) {
            values(r, index) = 0.0;
            continue;
          }
          if (!unit.dist->in_support(x))
            throw ArgumentError("value " + exact_decimal(x) + " for variable " + std::to_string(var) +
                                " is outside the support of unit " + std::to_string(index));
          values(r, index) = unit.dist->log_prob(x);
        }
        break;
      }
      case Step::product: {
        const Unit& unit = qpc_.unit(index);
        auto col = values.col(static_cast<Eigen::Index>(index));
        col.setZero();
        for (UnitId c : unit.children) col += values.col(static_cast<Eigen::Index>(c));
        break;
      }
      case Step::block: {
        const Block& b = blocks_[index];
        const auto k = static_cast<Eigen::Index>(b.children.size());
        gathered.resize(rows, k);
        for (Eigen::Index c = 0; c < k; ++c) gathered.col(c) = values.col(static_cast<Eigen::Index>(b.children[c]));
        const Eigen::VectorXd row_max = gathered.rowwise().maxCoeff();
        for (Eigen::Index r = 0; r < rows; ++r) {
          const double m = row_max(r);
          for (Eigen::Index c = 0; c < k; ++c)
            gathered(r, c) = m == kNegInf ? 0.0 : std::exp(gathered(r, c) - m);
        }
        linear.noalias() = gathered * b.weights.transpose();
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(b.units.size()); ++j) {
          const auto u = static_cast<Eigen::Index>(b.units[j]);
          for (Eigen::Index r = 0; r < rows; ++r) {
            const double lin = linear(r, j);
            if (row_max(r) == kNegInf || b.shift(j) == kNegInf) {
              values(r, u) = kNegInf;
            } else if (lin >= kFallbackBelow && std::isfinite(lin)) {
              values(r, u) = std::log(lin) + row_max(r) + b.shift(j);
            } else {
              double acc_max = kNegInf;
              for (Eigen::Index c = 0; c < k; ++c)
                acc_max = std::max(acc_max, b.log_weights(j, c) + values(r, static_cast<Eigen::Index>(b.children[c])));
              double acc = 0.0;
              if (acc_max != kNegInf)
                for (Eigen::Index c = 0; c < k; ++c)
                  acc += std::exp(b.log_weights(j, c) + values(r, static_cast<Eigen::Index>(b.children[c])) - acc_max);
              values(r, u) = acc_max == kNegInf ? kNegInf : acc_max + std::log(acc);
            }
          }
        }
        break;
      }
    }
  }
  const auto root = static_cast<Eigen::Index>(qpc_.root());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double v = values(r, root);
    if (std::isnan(v)) throw NumericError("non-finite value at the root for row " + std::to_string(begin + r));
    out[begin + r] = v;
  }
}

std::vector<double> BatchEvaluator::log_likelihood(const Eigen::MatrixXd& data) const {
  if (data.cols() != qpc_.num_vars()) throw ArgumentError("data width does not match the circuit");
  std::vector<double> out(data.rows());
  const Eigen::Index chunks = (data.rows() + kChunkRows - 1) / kChunkRows;
  parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t cb, std::size_t ce) {
    for (std::size_t c = cb; c < ce; ++c) {
      const Eigen::Index begin = static_cast<Eigen::Index>(c) * kChunkRows;
      evaluate_chunk(data, begin, std::min(data.rows(), begin + kChunkRows), out);
    }
  });
  return out;
}

}  // namespace picirc
