#include "picirc/materializer.hpp"

#include <cmath>
#include <string>

#include "picirc/errors.hpp"
#include "picirc/logspace.hpp"
#include "picirc/parallel.hpp"

namespace picirc {

namespace {

std::size_t family_width(const VariableType& t) {
  switch (t.family) {
    case Family::categorical: return static_cast<std::size_t>(t.num_states);
    case Family::binomial: return 1;
    case Family::gaussian: return 2;
  }
  return 0;
}

int root_latent_of(const NeuralPic& model) { return model.tree.node(model.tree.root()).index; }

// Energies of one latent on the grid (parent point j, child point k), row-major N x N,
// or 1 x N for the root.
ad::Matrix energy_grid(const EnergyNet& net, const std::vector<double>& child_points,
                       const std::vector<double>* parent_points) {
  ad::Tape tape;
  const auto n = static_cast<Eigen::Index>(child_points.size());
  if (!parent_points) {
    ad::Matrix in(n, 1);
    for (Eigen::Index k = 0; k < n; ++k) in(k, 0) = child_points[k];
    return net.forward(tape, tape.constant(in)).value().transpose();
  }
  const auto m = static_cast<Eigen::Index>(parent_points->size());
  ad::Matrix in(m * n, 2);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index k = 0; k < n; ++k) {
      in(j * n + k, 0) = child_points[k];
      in(j * n + k, 1) = (*parent_points)[j];
    }
  const ad::Matrix e = net.forward(tape, tape.constant(in)).value();
  ad::Matrix grid(m, n);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index k = 0; k < n; ++k) grid(j, k) = e(j * n + k, 0);
  return grid;
}

void check_energies(const ad::Matrix& e, int latent) {
  for (Eigen::Index j = 0; j < e.rows(); ++j)
    for (Eigen::Index k = 0; k < e.cols(); ++k)
      if (!std::isfinite(e(j, k)))
        throw NumericError("non-finite energy at (latent " + std::to_string(latent) + ", j " +
                           std::to_string(j) + ", k " + std::to_string(k) + ")");
}

}  // namespace

std::size_t InputParamTensor::param_width(std::size_t i) const { return family_width(types.at(i)); }

SumParamTensor materialize_sum_params(const NeuralPic& model, const QuadratureRule& rule,
                                      const QuadratureRule* normalization) {
  const auto n = rule.size();
  const auto latents = static_cast<std::size_t>(model.num_latents());
  const int root = root_latent_of(model);
  SumParamTensor s{latents, n, std::vector<double>(latents * n * n)};
  std::vector<double> log_w(n);
  for (std::size_t k = 0; k < n; ++k) log_w[k] = std::log(rule.weights[k]);

  parallel_for(latents, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& net = model.energy_net(static_cast<int>(i));
      const bool is_root = static_cast<int>(i) == root;
      const ad::Matrix e = energy_grid(net, rule.points, is_root ? nullptr : &rule.points);
      check_energies(e, static_cast<int>(i));
      std::vector<double> log_norm(e.rows());
      if (normalization) {
        const ad::Matrix fine = energy_grid(net, normalization->points, is_root ? nullptr : &rule.points);
        check_energies(fine, static_cast<int>(i));
        for (Eigen::Index j = 0; j < fine.rows(); ++j) {
          std::vector<double> terms(fine.cols());
          for (Eigen::Index m = 0; m < fine.cols(); ++m)
            terms[m] = std::log(normalization->weights[m]) - fine(j, m);
          log_norm[j] = log_sum_exp(terms);
        }
      } else {
        for (Eigen::Index j = 0; j < e.rows(); ++j) {
          std::vector<double> terms(n);
          for (std::size_t k = 0; k < n; ++k) terms[k] = log_w[k] - e(j, k);
          log_norm[j] = log_sum_exp(terms);
        }
      }
      for (std::size_t j = 0; j < n; ++j) {
        const Eigen::Index row = is_root ? 0 : static_cast<Eigen::Index>(j);
        for (std::size_t k = 0; k < n; ++k) s.at(i, j, k) = log_w[k] - e(row, k) - log_norm[row];
      }
    }
  });
  return s;
}

InputParamTensor materialize_input_params(const NeuralPic& model, const QuadratureRule& rule) {
  InputParamTensor t;
  t.vars = static_cast<std::size_t>(model.num_vars());
  t.points = rule.size();
  t.types = model.types;
  for (const auto& ty : t.types) t.width = std::max(t.width, family_width(ty));
  t.values.assign(t.vars * t.points * t.width, 0.0);
  ad::Matrix z(static_cast<Eigen::Index>(t.points), 1);
  for (std::size_t j = 0; j < t.points; ++j) z(j, 0) = rule.points[j];

  parallel_for(t.vars, [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      const auto& dec = model.decoder(static_cast<int>(v));
      if (!(dec.type() == t.types[v]))
        throw ArgumentError("decoder family " + dec.type().str() + " does not match variable " +
                            std::to_string(v) + " of type " + t.types[v].str());
      ad::Tape tape;
      const ad::Matrix raw = dec.raw_forward(tape, tape.constant(z)).value();
      for (std::size_t j = 0; j < t.points; ++j) {
        const auto params = dec.natural_parameters(raw.row(static_cast<Eigen::Index>(j)));
        std::copy(params.begin(), params.end(), t.at(v, j).begin());
      }
    }
  });
  return t;
}

std::vector<ad::Var> materialize_sum_params(ad::Tape& tape, const NeuralPic& model,
                                            const QuadratureRule& rule) {
  const auto n = static_cast<Eigen::Index>(rule.size());
  const int root = root_latent_of(model);
  ad::Matrix log_w(1, n);
  ad::Matrix z(n, 1);
  ad::Matrix grid(n * n, 2);
  for (Eigen::Index k = 0; k < n; ++k) {
    log_w(0, k) = std::log(rule.weights[k]);
    z(k, 0) = rule.points[k];
  }
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index k = 0; k < n; ++k) {
      grid(j * n + k, 0) = rule.points[k];
      grid(j * n + k, 1) = rule.points[j];
    }
  const ad::Var lw = tape.constant(log_w);
  std::vector<ad::Var> out;
  for (int i = 0; i < model.num_latents(); ++i) {
    const auto& net = model.energy_net(i);
    ad::Var logits;
    if (i == root) {
      logits = lw - ad::transpose(net.forward(tape, tape.constant(z)));
    } else {
      logits = lw - ad::reshape(net.forward(tape, tape.constant(grid)), n, n);
    }
    out.push_back(logits - ad::logsumexp_rows(logits));
  }
  return out;
}

std::vector<ad::Var> materialize_input_params(ad::Tape& tape, const NeuralPic& model,
                                              const QuadratureRule& rule) {
  const auto n = static_cast<Eigen::Index>(rule.size());
  ad::Matrix z(n, 1);
  for (Eigen::Index k = 0; k < n; ++k) z(k, 0) = rule.points[k];
  const ad::Var zv = tape.constant(z);
  std::vector<ad::Var> out;
  for (int v = 0; v < model.num_vars(); ++v) out.push_back(model.decoder(v).natural_forward(tape, zv));
  return out;
}

std::vector<ad::Var> materialize_input_loglik(ad::Tape& tape, const NeuralPic& model,
                                              const QuadratureRule& rule,
                                              const Eigen::MatrixXd& batch) {
  if (batch.cols() != model.num_vars()) throw ArgumentError("batch width does not match the model");
  const auto n = static_cast<Eigen::Index>(rule.size());
  ad::Matrix z(n, 1);
  for (Eigen::Index k = 0; k < n; ++k) z(k, 0) = rule.points[k];
  const ad::Var zv = tape.constant(z);
  std::vector<ad::Var> out;
  for (int v = 0; v < model.num_vars(); ++v) {
    std::vector<double> x(batch.rows());
    ad::Matrix mask = ad::Matrix::Ones(1, batch.rows());
    bool any_missing = false;
    for (Eigen::Index b = 0; b < batch.rows(); ++b) {
      if (std::isnan(batch(b, v))) {
        x[b] = 0.0;
        mask(0, b) = 0.0;
        any_missing = true;
      } else {
        x[b] = batch(b, v);
      }
    }
    ad::Var ll = model.decoder(v).log_likelihood(tape, zv, x);
    if (any_missing) ll = ad::mul(ll, tape.constant(mask));
    out.push_back(ll);
  }
  return out;
}

// ---------------------------------------------------------------- parameter sources

TensorParameters::TensorParameters(SumParamTensor sums, InputParamTensor inputs, int root_latent)
    : sums_(std::move(sums)), inputs_(std::move(inputs)), root_latent_(root_latent) {}

double TensorParameters::log_sum_weight(int latent, std::size_t parent_point, std::size_t point) const {
  return sums_.at(static_cast<std::size_t>(latent), latent == root_latent_ ? 0 : parent_point, point);
}

InputDistribution TensorParameters::input(int var, std::size_t point) const {
  const auto& type = inputs_.types.at(var);
  const auto p = inputs_.at(static_cast<std::size_t>(var), point);
  switch (type.family) {
    case Family::categorical: return InputDistribution::categorical({p.begin(), p.end()});
    case Family::binomial: return InputDistribution::binomial(type.num_states, p[0]);
    case Family::gaussian: return InputDistribution::gaussian(p[0], p[1]);
  }
  throw ArgumentError("unknown family");
}

// ---------------------------------------------------------------- static quadrature

namespace {

void require_tree(const Circuit& pic, const std::vector<UnitId>& order) {
  std::vector<int> parents(pic.num_units(), 0);
  for (UnitId u : order)
    for (UnitId c : pic.unit(u).children)
      if (++parents[c] > 1)
        throw StructuralError("unsupported structure: unit " + std::to_string(c) +
                              " has more than one parent");
}

const QuadratureRule& rule_for(std::span<const QuadratureRule> rules, int latent) {
  if (latent < 0 || static_cast<std::size_t>(latent) >= rules.size())
    throw ArgumentError("missing quadrature rule for latent " + std::to_string(latent));
  if (rules[latent].size() == 0)
    throw ArgumentError("empty quadrature rule for latent " + std::to_string(latent));
  return rules[latent];
}

}  // namespace

TracedQpc materialize_qpc_traced(const Circuit& pic, std::span<const QuadratureRule> rules,
                                 const QpcParameters& params) {
  const auto order = post_order(pic);
  require_tree(pic, order);
  CircuitBuilder builder(pic.num_vars());
  std::vector<UnitOrigin> origins;
  std::vector<std::vector<UnitId>> region(pic.num_units());

  for (UnitId u : order) {
    const Unit& unit = pic.unit(u);
    auto& out = region[u];
    switch (unit.kind) {
      case UnitKind::input: {
        const auto& d = *unit.dist;
        if (!d.symbolic || d.latent < 0)
          throw StructuralError("input unit " + std::to_string(u) + " is not conditioned on a latent");
        const auto& rule = rule_for(rules, d.latent);
        const int var = unit.scope.front();
        for (std::size_t j = 0; j < rule.size(); ++j) {
          out.push_back(builder.add_input(var, params.input(var, j)));
          origins.push_back({UnitOrigin::Kind::input, var, j});
        }
        break;
      }
      case UnitKind::integral: {
        const int latent = unit.latent->index;
        const auto& child_region = region[unit.children.front()];
        const auto& rule = rule_for(rules, latent);
        if (child_region.size() != rule.size())
          throw StructuralError("region below integral unit " + std::to_string(u) +
                                " does not match its rule size");
        const std::size_t copies =
            unit.latent->parent ? rule_for(rules, *unit.latent->parent).size() : 1;
        for (std::size_t j = 0; j < copies; ++j) {
          std::vector<double> w(rule.size());
          for (std::size_t k = 0; k < rule.size(); ++k) w[k] = params.log_sum_weight(latent, j, k);
          out.push_back(builder.add_sum(child_region, std::move(w)));
          origins.push_back({UnitOrigin::Kind::sum, latent, j});
        }
        break;
      }
      case UnitKind::product: {
        const std::size_t len = region[unit.children.front()].size();
        for (UnitId c : unit.children)
          if (region[c].size() != len)
            throw StructuralError("product unit " + std::to_string(u) + " zips regions of different sizes");
        for (std::size_t j = 0; j < len; ++j) {
          std::vector<UnitId> kids;
          for (UnitId c : unit.children) kids.push_back(region[c][j]);
          out.push_back(builder.add_product(std::move(kids)));
          origins.push_back({});
        }
        break;
      }
      case UnitKind::sum:
        throw StructuralError("unsupported structure: sum unit " + std::to_string(u) + " in a PIC");
    }
    for (UnitId c : unit.children) std::vector<UnitId>().swap(region[c]);
  }
  const auto& top = region[pic.root()];
  if (top.size() != 1) throw StructuralError("root region does not collapse to a single unit");
  return {std::move(builder).build(top.front()), std::move(origins)};
}

Circuit materialize_qpc(const Circuit& pic, std::span<const QuadratureRule> rules,
                        const QpcParameters& params) {
  return materialize_qpc_traced(pic, rules, params).qpc;
}

Circuit materialize_qpc(const NeuralPic& model, const QuadratureRule& rule) {
  TensorParameters params(materialize_sum_params(model, rule), materialize_input_params(model, rule),
                          root_latent_of(model));
  std::vector<QuadratureRule> rules(model.num_latents(), rule);
  return materialize_qpc(model.pic, rules, params);
}

// ---------------------------------------------------------------- nested quadrature

namespace {

int levels(const Circuit& pic, UnitId u) {
  const Unit& unit = pic.unit(u);
  int best = 0;
  for (UnitId c : unit.children) best = std::max(best, levels(pic, c));
  return best + (unit.kind == UnitKind::integral ? 1 : 0);
}

double count_collect(const Circuit& pic, UnitId u, double n);

double count_integral(const Circuit& pic, UnitId u, double n) {
  const Unit& child = pic.unit(pic.unit(u).children.front());
  const double product = child.kind == UnitKind::product ? 1.0 : 0.0;
  return 1.0 + n * (count_collect(pic, child.id, n) + product);
}

double count_collect(const Circuit& pic, UnitId u, double n) {
  const Unit& unit = pic.unit(u);
  switch (unit.kind) {
    case UnitKind::input: return 1.0;
    case UnitKind::integral: return count_integral(pic, u, n);
    case UnitKind::product: {
      double total = 0.0;
      for (UnitId c : unit.children) total += count_collect(pic, c, n);
      return total;
    }
    case UnitKind::sum: break;
  }
  throw StructuralError("unsupported structure: sum unit " + std::to_string(u) + " in a PIC");
}

class NestedBuilder {
 public:
  NestedBuilder(const Circuit& pic, const ContinuousConditionals& cond, const PointSelector& selector)
      : pic_(pic), cond_(cond), selector_(selector), builder_(pic.num_vars()) {}

  UnitId expand(UnitId u, std::optional<double> parent_value) {
    const Unit& unit = pic_.unit(u);
    const int latent = unit.latent->index;
    const QuadratureRule rule = selector_(latent, parent_value);
    if (rule.size() == 0) throw ArgumentError("point selector returned an empty rule");
    std::vector<UnitId> kids;
    std::vector<double> w;
    for (std::size_t n = 0; n < rule.size(); ++n) {
      const double z = rule.points[n];
      std::vector<UnitId> factors;
      collect(unit.children.front(), z, factors);
      kids.push_back(factors.size() == 1 ? factors.front() : builder_.add_product(std::move(factors)));
      w.push_back(std::log(rule.weights[n]) + cond_.log_density(latent, z, parent_value));
    }
    return builder_.add_sum(std::move(kids), std::move(w));
  }

  void collect(UnitId u, std::optional<double> z, std::vector<UnitId>& factors) {
    const Unit& unit = pic_.unit(u);
    switch (unit.kind) {
      case UnitKind::input:
        if (!z) throw StructuralError("input unit " + std::to_string(u) + " is not under an integral");
        factors.push_back(builder_.add_input(unit.scope.front(), cond_.input(unit.scope.front(), *z)));
        return;
      case UnitKind::integral:
        factors.push_back(expand(u, z));
        return;
      case UnitKind::product:
        for (UnitId c : unit.children) collect(c, z, factors);
        return;
      case UnitKind::sum:
        break;
    }
    throw StructuralError("unsupported structure: sum unit " + std::to_string(u) + " in a PIC");
  }

  Circuit build(UnitId root) && { return std::move(builder_).build(root); }
  CircuitBuilder& builder() { return builder_; }

 private:
  const Circuit& pic_;
  const ContinuousConditionals& cond_;
  const PointSelector& selector_;
  CircuitBuilder builder_;
};

}  // namespace

int latent_depth(const Circuit& pic) { return std::max(0, levels(pic, pic.root()) - 1); }

double projected_nested_units(const Circuit& pic, std::size_t n) {
  const Unit& root = pic.unit(pic.root());
  const double nn = static_cast<double>(n);
  if (root.kind == UnitKind::integral) return count_integral(pic, root.id, nn);
  return 1.0 + count_collect(pic, root.id, nn);
}

Circuit materialize_nested(const Circuit& pic, const ContinuousConditionals& conditionals,
                           const PointSelector& selector, int max_depth) {
  const auto order = post_order(pic);
  require_tree(pic, order);
  for (UnitId u : order)
    if (pic.unit(u).kind == UnitKind::sum)
      throw StructuralError("unsupported structure: sum unit " + std::to_string(u) + " in a PIC");

  const int depth = latent_depth(pic);
  if (depth > max_depth) {
    int root_latent = 0;
    for (UnitId u : order)
      if (pic.unit(u).kind == UnitKind::integral && !pic.unit(u).latent->parent)
        root_latent = pic.unit(u).latent->index;
    const auto n = selector(root_latent, std::nullopt).size();
    const double projected = projected_nested_units(pic, n);
    throw SizeError("nested materialization of depth " + std::to_string(depth) + " exceeds the guard of " +
                        std::to_string(max_depth) + "; projected " + std::to_string(projected) + " units",
                    static_cast<std::size_t>(std::min(projected, 1e18)));
  }

  NestedBuilder nb(pic, conditionals, selector);
  const Unit& root = pic.unit(pic.root());
  UnitId top;
  if (root.kind == UnitKind::integral) {
    top = nb.expand(root.id, std::nullopt);
  } else {
    std::vector<UnitId> factors;
    nb.collect(root.id, std::nullopt, factors);
    top = factors.size() == 1 ? factors.front() : nb.builder().add_product(std::move(factors));
  }
  return std::move(nb).build(top);
}

}  // namespace picirc
