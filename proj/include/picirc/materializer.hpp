#pragma once

// Turning symbolic integral circuits into standard probabilistic circuits:
// tensor materialization of sum and input parameters, static quadrature with
// unit re-use, and nested (integrand-dependent) quadrature.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "picirc/autodiff.hpp"
#include "picirc/circuit.hpp"
#include "picirc/neural.hpp"
#include "picirc/quadrature.hpp"

namespace picirc {

/// S[i][j][k] = log(w_k p(Z_i = z_k | Z_pa(i) = z_j)). The root latent has no parent;
/// its row is stored broadcast over j.
struct SumParamTensor {
  std::size_t latents = 0;
  std::size_t points = 0;
  std::vector<double> values;

  double& at(std::size_t i, std::size_t j, std::size_t k) { return values[(i * points + j) * points + k]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return values[(i * points + j) * points + k];
  }
  std::span<const double> row(std::size_t i, std::size_t j) const {
    return {values.data() + (i * points + j) * points, points};
  }
};

/// I[i][j] = natural parameters of p(X_i | Z = z_j).
struct InputParamTensor {
  std::size_t vars = 0;
  std::size_t points = 0;
  std::size_t width = 0;
  std::vector<VariableType> types;
  std::vector<double> values;

  std::span<const double> at(std::size_t i, std::size_t j) const {
    return {values.data() + (i * points + j) * width, param_width(i)};
  }
  std::span<double> at(std::size_t i, std::size_t j) {
    return {values.data() + (i * points + j) * width, param_width(i)};
  }
  std::size_t param_width(std::size_t i) const;
};

/// Energies -> normalized log-weights. With a separate normalization rule, the
/// constants are estimated on that rule instead of the materializing one.
SumParamTensor materialize_sum_params(const NeuralPic& model, const QuadratureRule& rule,
                                      const QuadratureRule* normalization = nullptr);

InputParamTensor materialize_input_params(const NeuralPic& model, const QuadratureRule& rule);

/// Tape versions used for training. Entry i is N x N (rows j, columns k), or 1 x N for the root.
std::vector<ad::Var> materialize_sum_params(ad::Tape& tape, const NeuralPic& model,
                                            const QuadratureRule& rule);

/// Entry v is the N x I matrix of natural input parameters for variable v.
std::vector<ad::Var> materialize_input_params(ad::Tape& tape, const NeuralPic& model,
                                              const QuadratureRule& rule);

/// Entry v is the N x B matrix of log p(x_bv | z_j) for the batch column v.
/// Marginalized entries (NaN) contribute 0.
std::vector<ad::Var> materialize_input_loglik(ad::Tape& tape, const NeuralPic& model,
                                              const QuadratureRule& rule,
                                              const Eigen::MatrixXd& batch);

/// Grid-indexed parameters consumed by static materialization.
class QpcParameters {
 public:
  virtual ~QpcParameters() = default;
  /// log(w_k p(z_k | z_j)); parent_point is ignored for the root latent.
  virtual double log_sum_weight(int latent, std::size_t parent_point, std::size_t point) const = 0;
  /// Concrete p(X_var | z_point) for the latent var hangs from.
  virtual InputDistribution input(int var, std::size_t point) const = 0;
};

class TensorParameters : public QpcParameters {
 public:
  TensorParameters(SumParamTensor sums, InputParamTensor inputs, int root_latent);
  double log_sum_weight(int latent, std::size_t parent_point, std::size_t point) const override;
  InputDistribution input(int var, std::size_t point) const override;

  const SumParamTensor& sums() const { return sums_; }
  const InputParamTensor& inputs() const { return inputs_; }

 private:
  SumParamTensor sums_;
  InputParamTensor inputs_;
  int root_latent_;
};

/// Where a materialized unit's parameters came from.
struct UnitOrigin {
  enum class Kind { structural, sum, input };
  Kind kind = Kind::structural;
  int index = -1;              // latent for sums, variable for inputs
  std::size_t point = 0;       // parent point j for sums, point j for inputs
};

struct TracedQpc {
  Circuit qpc;
  std::vector<UnitOrigin> origins;  // indexed by QPC unit id
};

/// Static quadrature with unit re-use. rules[i] is the rule for latent i.
/// Output has O(sum_i N_i^2) edges.
Circuit materialize_qpc(const Circuit& pic, std::span<const QuadratureRule> rules,
                        const QpcParameters& params);
TracedQpc materialize_qpc_traced(const Circuit& pic, std::span<const QuadratureRule> rules,
                                 const QpcParameters& params);

/// Convenience: neural PIC, one shared rule for every latent.
Circuit materialize_qpc(const NeuralPic& model, const QuadratureRule& rule);

/// Continuous conditionals evaluated at arbitrary points, for nested quadrature.
class ContinuousConditionals {
 public:
  virtual ~ContinuousConditionals() = default;
  virtual double log_density(int latent, double z, std::optional<double> parent) const = 0;
  virtual InputDistribution input(int var, double z) const = 0;
};

using PointSelector = std::function<QuadratureRule(int latent, std::optional<double> parent_value)>;

/// Integral units nested below the outermost one along the deepest path; a single
/// integral has depth 0, a root latent with a child latent has depth 1.
int latent_depth(const Circuit& pic);

/// Nested quadrature without unit re-use. The output is a tree whose size grows as
/// N^depth; PICs deeper than max_depth are rejected with the projected unit count.
Circuit materialize_nested(const Circuit& pic, const ContinuousConditionals& conditionals,
                           const PointSelector& selector, int max_depth = 3);

/// Units a nested materialization would create with every rule of size n.
double projected_nested_units(const Circuit& pic, std::size_t n);

}  // namespace picirc
