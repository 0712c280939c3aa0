#pragma once

// Evaluation of materialized circuits: log-likelihoods, marginals, flows for EM
// and gradients, ancestral sampling, and a blocked batch evaluator.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "picirc/circuit.hpp"

namespace picirc {

/// One value per variable; nullopt marks the variable as marginalized out.
using EvidenceVector = std::vector<std::optional<double>>;

/// Converts a data matrix to evidence, treating NaN entries as marginalized.
std::vector<EvidenceVector> to_evidence(const Eigen::MatrixXd& data);

/// Per-row log-likelihood by a single post-order pass. Marginalized inputs emit 0.
/// Out-of-support evidence raises ArgumentError; NaN or +inf at a unit raises
/// NumericError naming it. A -inf value is a legitimate zero-probability branch.
std::vector<double> log_forward(const Circuit& qpc, std::span<const EvidenceVector> batch);
double log_forward(const Circuit& qpc, const EvidenceVector& evidence);

/// Log-probability of the event fixed by the observed entries.
double marginal(const Circuit& qpc, const EvidenceVector& evidence);

/// -loglik / (D ln 2).
double bpd(double loglik, int num_vars);

/// Batch-accumulated flows. Unit flow is the derivative of the circuit value with
/// respect to the unit value, scaled by unit value over circuit value; edge flows of
/// sum units are the expected EM counts.
struct Flows {
  double log_likelihood = 0.0;                   // summed over the batch
  std::vector<double> unit_flow;                 // per unit
  std::vector<std::vector<double>> edge_flow;    // per sum unit, aligned with children
  std::vector<std::vector<double>> state_flow;   // categorical inputs: per-state observed flow
  std::vector<std::array<double, 3>> moments;    // observed (flow, flow x, flow x^2)
  std::vector<double> rows_loglik;               // per batch row
};

Flows flows(const Circuit& qpc, std::span<const EvidenceVector> batch);

/// Ancestral sampling; n x D matrix, deterministic under seed.
Eigen::MatrixXd sample_pc(const Circuit& qpc, std::size_t n, std::uint64_t seed);

/// Faster evaluator for repeated batches. Sum units sharing one child list are
/// evaluated together as a dense matrix product in linear space after per-row max
/// shifting; entries that would lose precision fall back to exact log-sum-exp.
class BatchEvaluator {
 public:
  explicit BatchEvaluator(const Circuit& qpc);

  /// Rows are data points; NaN marks a marginalized entry.
  std::vector<double> log_likelihood(const Eigen::MatrixXd& data) const;

  std::size_t num_blocks() const { return blocks_.size(); }

 private:
  struct Block {
    std::vector<UnitId> units;     // sum units in the block
    std::vector<UnitId> children;  // shared child list
    Eigen::MatrixXd weights;       // units x children, exp(logw - row max)
    Eigen::VectorXd shift;         // row max of the log-weights
    Eigen::MatrixXd log_weights;   // kept for the exact fallback
  };
  enum class Step { input, product, block };

  void evaluate_chunk(const Eigen::MatrixXd& data, Eigen::Index begin, Eigen::Index end,
                      std::vector<double>& out) const;

  Circuit qpc_;
  std::vector<std::pair<Step, std::size_t>> schedule_;  // (kind, unit id or block index)
  std::vector<Block> blocks_;
};

}  // namespace picirc
