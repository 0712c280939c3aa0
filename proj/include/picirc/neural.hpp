#pragma once

// Light-weight neural parameterization of integral circuits: Fourier feature
// layers, energy nets for latent conditionals and decoder nets for inputs.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "picirc/autodiff.hpp"
#include "picirc/circuit.hpp"
#include "picirc/structures.hpp"

namespace picirc {

struct NetConfig {
  int frequencies = 32;  // k; the layer emits 2k features
  int hidden = 64;
  double frequency_scale = 1.0;  // stddev of the Gaussian frequency draws
};

/// x -> [cos(2 pi f_1.x), sin(2 pi f_1.x), ..., cos(2 pi f_k.x), sin(2 pi f_k.x)].
/// The n x k frequency matrix is fixed at construction and never trained.
class FourierFeatureLayer {
 public:
  FourierFeatureLayer() = default;
  FourierFeatureLayer(int input_dim, int num_frequencies, double scale, std::mt19937_64& rng);
  explicit FourierFeatureLayer(ad::Matrix frequencies);

  const ad::Matrix& frequencies() const { return frequencies_; }
  int input_dim() const { return static_cast<int>(frequencies_.rows()); }
  int num_frequencies() const { return static_cast<int>(frequencies_.cols()); }
  int output_dim() const { return 2 * num_frequencies(); }

  /// Row-wise over an m x n input.
  ad::Var forward(ad::Tape& tape, const ad::Var& x) const;
  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;

 private:
  ad::Matrix frequencies_;
};

struct DenseLayer {
  ad::Matrix weight;  // in x out
  ad::Matrix bias;    // 1 x out
};

/// f_i: [-1,1]^n -> R_{>=0}. n = 2 for conditionals (z_child, z_parent), n = 1 for the root prior.
/// FFL -> dense -> tanh -> dense -> tanh -> dense(1) -> softplus.
class EnergyNet {
 public:
  EnergyNet() = default;
  EnergyNet(int input_dim, const NetConfig& config, std::mt19937_64& rng);
  EnergyNet(FourierFeatureLayer ffl, std::vector<DenseLayer> layers);

  int input_dim() const { return ffl_.input_dim(); }
  const FourierFeatureLayer& ffl() const { return ffl_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  /// m x n inputs -> m x 1 energies. Learnable matrices are registered on the tape.
  ad::Var forward(ad::Tape& tape, const ad::Var& inputs) const;

  /// Single evaluation. Inputs must lie in [-1, 1]; z_parent is required iff input_dim == 2.
  double energy(double z_child, std::optional<double> z_parent = std::nullopt) const;

  std::vector<ad::Matrix*> parameters();

 private:
  FourierFeatureLayer ffl_;
  std::vector<DenseLayer> layers_;
};

/// g_i: [-1,1] -> parameters of the input distribution family.
/// FFL -> dense -> tanh -> dense(I), followed by a family-specific head.
class DecoderNet {
 public:
  DecoderNet() = default;
  DecoderNet(VariableType type, const NetConfig& config, std::mt19937_64& rng);
  DecoderNet(VariableType type, FourierFeatureLayer ffl, std::vector<DenseLayer> layers);

  const VariableType& type() const { return type_; }
  const FourierFeatureLayer& ffl() const { return ffl_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  /// Width of the raw output head: K logits, one pre-sigmoid value, or (mean, log stddev).
  int head_width() const;

  /// m x 1 latent values -> m x head_width raw head.
  ad::Var raw_forward(ad::Tape& tape, const ad::Var& z) const;

  /// m x 1 latent values -> m x head_width natural parameters (log-probs, success
  /// probability, or mean and log stddev).
  ad::Var natural_forward(ad::Tape& tape, const ad::Var& z) const;

  /// m x 1 latent values -> m x B matrix of log p(x_b | z_m).
  ad::Var log_likelihood(ad::Tape& tape, const ad::Var& z, std::span<const double> x) const;

  /// Family-valid natural parameters at z in [-1, 1] (log-probs, success probability,
  /// or mean and log stddev).
  std::vector<double> parameters_at(double z) const;
  InputDistribution distribution_at(double z) const;

  /// Converts a raw head row into natural parameters.
  std::vector<double> natural_parameters(const Eigen::RowVectorXd& raw) const;

  std::vector<ad::Matrix*> parameters();

 private:
  VariableType type_;
  FourierFeatureLayer ffl_;
  std::vector<DenseLayer> layers_;
};

/// A PIC compiled from a latent tree, with one energy net per latent (the root's takes
/// one input) and one decoder per observable. With shared weights, all non-root latents
/// use one energy net and all observables of the same type use one decoder.
struct NeuralPic {
  LatentTree tree;
  std::vector<VariableType> types;
  Circuit pic;
  std::vector<EnergyNet> energy_nets;
  std::vector<DecoderNet> decoders;
  std::vector<int> energy_of_latent;
  std::vector<int> decoder_of_var;

  static NeuralPic create(const LatentTree& tree, std::vector<VariableType> types,
                          const NetConfig& config, std::uint64_t seed, bool share_weights = false);

  int num_latents() const { return tree.num_latents(); }
  int num_vars() const { return tree.num_observables(); }
  const EnergyNet& energy_net(int latent) const { return energy_nets[energy_of_latent.at(latent)]; }
  const DecoderNet& decoder(int var) const { return decoders[decoder_of_var.at(var)]; }

  /// Every learnable matrix (FFL frequencies excluded).
  std::vector<ad::Matrix*> parameters();
  std::size_t parameter_count() const;
};

nlohmann::json energy_net_to_json(const EnergyNet& net, int net_id);
EnergyNet energy_net_from_json(const nlohmann::json& doc);
nlohmann::json decoder_to_json(const DecoderNet& net, int net_id);
DecoderNet decoder_from_json(const nlohmann::json& doc);

nlohmann::json neural_pic_to_json(const NeuralPic& model);
NeuralPic neural_pic_from_json(const nlohmann::json& doc);

}  // namespace picirc
