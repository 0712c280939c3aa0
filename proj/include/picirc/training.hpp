#pragma once

// Optimization: PIC training by backpropagation through materialized
// parameters, and the HCLT baselines trained by EM or Adam.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "picirc/autodiff.hpp"
#include "picirc/circuit.hpp"
#include "picirc/neural.hpp"
#include "picirc/quadrature.hpp"
#include "picirc/runtime.hpp"

namespace picirc {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t n = 16;
  std::size_t max_steps = 30000;
  double lr_max = 1e-2;
  double lr_min = 1e-4;
  std::size_t restart_period = 500;
  std::size_t patience = 1250;
  std::size_t eval_interval = 250;
  std::uint64_t seed = 0;
  RuleKind rule = RuleKind::trapezoidal;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double pseudocount = 1e-3;  // EM smoothing for sum and categorical input estimates

  void validate() const;
};

/// Cosine annealing from lr_max to lr_min with a warm restart every restart_period steps.
double lr_schedule(std::size_t step, const TrainConfig& config);

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  /// grads[i] is the gradient of the loss for *params[i].
  void step(std::span<ad::Matrix* const> params, std::span<const ad::Matrix> grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, epsilon_;
  std::size_t t_ = 0;
  std::vector<ad::Matrix> m_, v_;
};

/// Region-by-region evaluation on the tape: 1 x B row of log-likelihoods of the QPC
/// induced by the rule, without assembling the circuit. NaN entries are marginalized.
ad::Var pic_log_likelihood(ad::Tape& tape, const NeuralPic& model, const QuadratureRule& rule,
                           const Eigen::MatrixXd& batch);

struct LossAndGradients {
  double loss = 0.0;                 // batch mean negative log-likelihood
  std::vector<ad::Matrix> gradients;  // aligned with NeuralPic::parameters()
};

/// Gradients through the region-by-region tape.
LossAndGradients pic_gradients(NeuralPic& model, const QuadratureRule& rule, const Eigen::MatrixXd& batch);

/// Same loss and gradients obtained by materializing the whole QPC, computing circuit
/// flows, and pulling them back through the parameter tensors on the tape.
LossAndGradients pic_gradients_materialized(NeuralPic& model, const QuadratureRule& rule,
                                            const Eigen::MatrixXd& batch);

/// One optimizer step. Throws NumericError naming the batch row if the loss is not finite.
double train_pic_step(NeuralPic& model, const Eigen::MatrixXd& batch, const QuadratureRule& rule, Adam& optimizer,
                      std::size_t step, const TrainConfig& config);

struct TrainRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double train_nll = 0.0;
  std::optional<double> valid_bpd;
};

struct TrainResult {
  std::vector<TrainRecord> history;
  double initial_valid_bpd = 0.0;
  double best_valid_bpd = 0.0;
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
  nlohmann::json best_checkpoint;
};

using ProgressCallback = std::function<void(const TrainRecord&)>;

/// Validation bits-per-dimension of the QPC materialized with the config's rule.
double pic_valid_bpd(const NeuralPic& model, const Eigen::MatrixXd& data, const TrainConfig& config);

/// Trains with early stopping; `model` ends at the best validation checkpoint.
TrainResult train_pic(NeuralPic& model, const Eigen::MatrixXd& train, const Eigen::MatrixXd& valid,
                      const TrainConfig& config, const ProgressCallback& progress = {});

/// Discrete HCLT circuit: every latent takes `hidden_states` values, with random
/// normalized sum weights and random input parameters.
Circuit hclt_circuit(const LatentTree& tree, std::span<const VariableType> types, std::size_t hidden_states,
                     std::uint64_t seed);

/// One EM update on a batch: theta <- (1 - eta) theta + eta theta_hat, with theta_hat the
/// normalized expected counts. Returns the batch log-likelihood before the update.
double em_step(Circuit& pc, std::span<const EvidenceVector> batch, double eta, double pseudocount);

/// One Adam step on softmax-reparameterized sum weights and input parameters.
struct HcltAdamState {
  Adam optimizer;
  std::vector<UnitId> units;        // units with learnable parameters, in id order
  std::vector<ad::Matrix> params;   // logits, log-probs, logit or (mean, log stddev)
};
double hclt_adam_step(Circuit& pc, HcltAdamState& state, std::span<const EvidenceVector> batch, double lr);

enum class HcltOptimizer { em, adam };

/// Mini-batch EM (or Adam) with the same schedule, evaluation cadence and patience as train_pic.
/// batch_size 0 means full batch.
TrainResult train_hclt(Circuit& pc, const Eigen::MatrixXd& train, const Eigen::MatrixXd& valid,
                       const TrainConfig& config, HcltOptimizer optimizer = HcltOptimizer::em,
                       const ProgressCallback& progress = {});

}  // namespace picirc
