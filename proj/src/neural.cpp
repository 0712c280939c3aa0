#include "picirc/neural.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "picirc/errors.hpp"
#include "picirc/logspace.hpp"

namespace picirc {

namespace {

DenseLayer glorot_layer(int in, int out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> u(-limit, limit);
  DenseLayer layer{ad::Matrix(in, out), ad::Matrix::Zero(1, out)};
  for (int i = 0; i < in; ++i)
    for (int o = 0; o < out; ++o) layer.weight(i, o) = u(rng);
  return layer;
}

ad::Var dense(ad::Tape& tape, const ad::Var& x, const DenseLayer& layer) {
  return ad::matmul(x, tape.parameter(layer.weight)) + tape.parameter(layer.bias);
}

void check_unit_interval(double z, const char* what) {
  if (!(z >= -1.0 && z <= 1.0))
    throw ArgumentError(std::string(what) + " must lie in [-1, 1], got " + exact_decimal(z));
}

nlohmann::json matrix_to_json(const ad::Matrix& m) {
  std::vector<double> data(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data[r * m.cols() + c] = m(r, c);
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

ad::Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw SchemaError("matrix data length does not match its shape");
  ad::Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[r * cols + c];
  return m;
}

nlohmann::json layers_to_json(const std::vector<DenseLayer>& layers) {
  auto out = nlohmann::json::array();
  for (const auto& l : layers)
    out.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", matrix_to_json(l.bias)}});
  return out;
}

std::vector<DenseLayer> layers_from_json(const nlohmann::json& j) {
  std::vector<DenseLayer> layers;
  for (const auto& l : j)
    layers.push_back({matrix_from_json(l.at("weight")), matrix_from_json(l.at("bias"))});
  return layers;
}

}  // namespace

// ---------------------------------------------------------------- FFL

FourierFeatureLayer::FourierFeatureLayer(int input_dim, int num_frequencies, double scale,
                                         std::mt19937_64& rng)
    : frequencies_(input_dim, num_frequencies) {
  if (input_dim <= 0 || num_frequencies <= 0) throw ArgumentError("FFL needs positive dimensions");
  std::normal_distribution<double> normal(0.0, scale);
  for (int i = 0; i < input_dim; ++i)
    for (int k = 0; k < num_frequencies; ++k) frequencies_(i, k) = normal(rng);
}

FourierFeatureLayer::FourierFeatureLayer(ad::Matrix frequencies) : frequencies_(std::move(frequencies)) {}

ad::Var FourierFeatureLayer::forward(ad::Tape& tape, const ad::Var& x) const {
  if (x.cols() != frequencies_.rows()) throw ArgumentError("FFL input width mismatch");
  const ad::Var proj = ad::scale(ad::matmul(x, tape.constant(frequencies_)), 2.0 * std::numbers::pi);
  return ad::interleave_cols(ad::cos(proj), ad::sin(proj));
}

Eigen::VectorXd FourierFeatureLayer::forward(const Eigen::VectorXd& x) const {
  if (x.size() != frequencies_.rows()) throw ArgumentError("FFL input width mismatch");
  const Eigen::VectorXd proj = 2.0 * std::numbers::pi * (frequencies_.transpose() * x);
  Eigen::VectorXd out(2 * proj.size());
  for (Eigen::Index k = 0; k < proj.size(); ++k) {
    out(2 * k) = std::cos(proj(k));
    out(2 * k + 1) = std::sin(proj(k));
  }
  return out;
}

// ---------------------------------------------------------------- EnergyNet

EnergyNet::EnergyNet(int input_dim, const NetConfig& config, std::mt19937_64& rng)
    : ffl_(input_dim, config.frequencies, config.frequency_scale, rng) {
  layers_.push_back(glorot_layer(ffl_.output_dim(), config.hidden, rng));
  layers_.push_back(glorot_layer(config.hidden, config.hidden, rng));
  layers_.push_back(glorot_layer(config.hidden, 1, rng));
}

EnergyNet::EnergyNet(FourierFeatureLayer ffl, std::vector<DenseLayer> layers)
    : ffl_(std::move(ffl)), layers_(std::move(layers)) {
  if (layers_.size() != 3) throw SchemaError("energy net expects three dense layers");
}

ad::Var EnergyNet::forward(ad::Tape& tape, const ad::Var& inputs) const {
  ad::Var h = ffl_.forward(tape, inputs);
  h = ad::tanh(dense(tape, h, layers_[0]));
  h = ad::tanh(dense(tape, h, layers_[1]));
  return ad::softplus(dense(tape, h, layers_[2]));
}

double EnergyNet::energy(double z_child, std::optional<double> z_parent) const {
  check_unit_interval(z_child, "energy net input");
  ad::Tape tape;
  ad::Matrix in(1, input_dim());
  in(0, 0) = z_child;
  if (input_dim() == 2) {
    if (!z_parent) throw ArgumentError("conditional energy net needs a parent value");
    check_unit_interval(*z_parent, "energy net parent input");
    in(0, 1) = *z_parent;
  } else if (z_parent) {
    throw ArgumentError("root energy net takes no parent value");
  }
  return forward(tape, tape.constant(in)).value()(0, 0);
}

std::vector<ad::Matrix*> EnergyNet::parameters() {
  std::vector<ad::Matrix*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

// ---------------------------------------------------------------- DecoderNet

DecoderNet::DecoderNet(VariableType type, const NetConfig& config, std::mt19937_64& rng)
    : type_(type), ffl_(1, config.frequencies, config.frequency_scale, rng) {
  layers_.push_back(glorot_layer(ffl_.output_dim(), config.hidden, rng));
  layers_.push_back(glorot_layer(config.hidden, head_width(), rng));
}

DecoderNet::DecoderNet(VariableType type, FourierFeatureLayer ffl, std::vector<DenseLayer> layers)
    : type_(type), ffl_(std::move(ffl)), layers_(std::move(layers)) {
  if (layers_.size() != 2) throw SchemaError("decoder net expects two dense layers");
}

int DecoderNet::head_width() const {
  switch (type_.family) {
    case Family::categorical: return type_.num_states;
    case Family::binomial: return 1;
    case Family::gaussian: return 2;
  }
  throw ArgumentError("unknown family");
}

ad::Var DecoderNet::raw_forward(ad::Tape& tape, const ad::Var& z) const {
  ad::Var h = ffl_.forward(tape, z);
  h = ad::tanh(dense(tape, h, layers_[0]));
  return dense(tape, h, layers_[1]);
}

ad::Var DecoderNet::natural_forward(ad::Tape& tape, const ad::Var& z) const {
  const ad::Var raw = raw_forward(tape, z);
  switch (type_.family) {
    case Family::categorical: return raw - ad::logsumexp_rows(raw);
    case Family::binomial: return ad::sigmoid(raw);
    case Family::gaussian: return raw;
  }
  throw ArgumentError("unknown family");
}

ad::Var DecoderNet::log_likelihood(ad::Tape& tape, const ad::Var& z, std::span<const double> x) const {
  const ad::Var raw = raw_forward(tape, z);
  const auto batch = static_cast<Eigen::Index>(x.size());
  switch (type_.family) {
    case Family::categorical: {
      std::vector<int> idx(x.size());
      for (std::size_t b = 0; b < x.size(); ++b) {
        if (x[b] < 0 || x[b] >= type_.num_states || x[b] != std::floor(x[b]))
          throw ArgumentError("categorical value out of support");
        idx[b] = static_cast<int>(x[b]);
      }
      const ad::Var log_probs = raw - ad::logsumexp_rows(raw);
      return ad::gather_cols(log_probs, std::move(idx));
    }
    case Family::binomial: {
      const double k = type_.num_states;
      ad::Matrix xs(1, batch);
      ad::Matrix rest(1, batch);
      ad::Matrix log_choose(1, batch);
      for (Eigen::Index b = 0; b < batch; ++b) {
        const double v = x[b];
        if (v < 0 || v > k || v != std::floor(v)) throw ArgumentError("binomial value out of support");
        xs(0, b) = v;
        rest(0, b) = k - v;
        log_choose(0, b) = std::lgamma(k + 1) - std::lgamma(v + 1) - std::lgamma(k - v + 1);
      }
      // log p = -softplus(-l), log(1-p) = -softplus(l)
      const ad::Var log_p = ad::scale(ad::softplus(ad::scale(raw, -1.0)), -1.0);
      const ad::Var log_q = ad::scale(ad::softplus(raw), -1.0);
      return ad::mul(log_p, tape.constant(xs)) + ad::mul(log_q, tape.constant(rest)) +
             tape.constant(log_choose);
    }
    case Family::gaussian: {
      ad::Matrix xs(1, batch);
      for (Eigen::Index b = 0; b < batch; ++b) xs(0, b) = x[b];
      const ad::Var mean = ad::gather_cols(raw, {0});
      const ad::Var log_sd = ad::gather_cols(raw, {1});
      const ad::Var zscore = ad::mul(tape.constant(xs) - mean, ad::exp(ad::scale(log_sd, -1.0)));
      const ad::Var half_sq = ad::scale(ad::mul(zscore, zscore), -0.5);
      return half_sq - log_sd + tape.scalar(-0.5 * std::log(2 * std::numbers::pi));
    }
  }
  throw ArgumentError("unknown family");
}

std::vector<double> DecoderNet::natural_parameters(const Eigen::RowVectorXd& raw) const {
  switch (type_.family) {
    case Family::categorical: {
      std::vector<double> out(raw.data(), raw.data() + raw.size());
      const double norm = log_sum_exp(out);
      for (double& v : out) v -= norm;
      return out;
    }
    case Family::binomial: {
      constexpr double kEdge = 1e-15;
      const double l = raw(0);
      double p = l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
      p = std::clamp(p, kEdge, 1.0 - kEdge);
      return {p};
    }
    case Family::gaussian:
      return {raw(0), raw(1)};
  }
  throw ArgumentError("unknown family");
}

std::vector<double> DecoderNet::parameters_at(double z) const {
  check_unit_interval(z, "decoder input");
  ad::Tape tape;
  const ad::Var raw = raw_forward(tape, tape.constant(ad::Matrix::Constant(1, 1, z)));
  return natural_parameters(raw.value().row(0));
}

InputDistribution DecoderNet::distribution_at(double z) const {
  auto params = parameters_at(z);
  switch (type_.family) {
    case Family::categorical: return InputDistribution::categorical(std::move(params));
    case Family::binomial: return InputDistribution::binomial(type_.num_states, params[0]);
    case Family::gaussian: return InputDistribution::gaussian(params[0], params[1]);
  }
  throw ArgumentError("unknown family");
}

std::vector<ad::Matrix*> DecoderNet::parameters() {
  std::vector<ad::Matrix*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

// ---------------------------------------------------------------- NeuralPic

NeuralPic NeuralPic::create(const LatentTree& tree, std::vector<VariableType> types,
                            const NetConfig& config, std::uint64_t seed, bool share_weights) {
  if (static_cast<int>(types.size()) != tree.num_observables())
    throw ArgumentError("need one variable type per observable");
  std::mt19937_64 rng(seed);
  NeuralPic model{tree, types, bn_to_pic(tree, types), {}, {}, {}, {}};
  const int root_latent = tree.node(tree.root()).index;
  model.energy_of_latent.assign(tree.num_latents(), -1);
  for (int l = 0; l < tree.num_latents(); ++l) {
    if (l == root_latent) {
      model.energy_of_latent[l] = static_cast<int>(model.energy_nets.size());
      model.energy_nets.emplace_back(1, config, rng);
    } else if (share_weights) {
      continue;
    } else {
      model.energy_of_latent[l] = static_cast<int>(model.energy_nets.size());
      model.energy_nets.emplace_back(2, config, rng);
    }
  }
  if (share_weights && tree.num_latents() > 1) {
    const int shared = static_cast<int>(model.energy_nets.size());
    model.energy_nets.emplace_back(2, config, rng);
    for (auto& e : model.energy_of_latent)
      if (e == -1) e = shared;
  }
  model.decoder_of_var.assign(types.size(), -1);
  for (std::size_t v = 0; v < types.size(); ++v) {
    if (share_weights) {
      for (std::size_t u = 0; u < v; ++u)
        if (types[u] == types[v]) {
          model.decoder_of_var[v] = model.decoder_of_var[u];
          break;
        }
      if (model.decoder_of_var[v] != -1) continue;
    }
    model.decoder_of_var[v] = static_cast<int>(model.decoders.size());
    model.decoders.emplace_back(types[v], config, rng);
  }
  return model;
}

std::vector<ad::Matrix*> NeuralPic::parameters() {
  std::vector<ad::Matrix*> out;
  for (auto& n : energy_nets)
    for (auto* p : n.parameters()) out.push_back(p);
  for (auto& n : decoders)
    for (auto* p : n.parameters()) out.push_back(p);
  return out;
}

std::size_t NeuralPic::parameter_count() const {
  std::size_t n = 0;
  for (const auto& net : energy_nets)
    for (const auto& l : net.layers()) n += l.weight.size() + l.bias.size();
  for (const auto& net : decoders)
    for (const auto& l : net.layers()) n += l.weight.size() + l.bias.size();
  return n;
}

// ---------------------------------------------------------------- checkpoints

nlohmann::json energy_net_to_json(const EnergyNet& net, int net_id) {
  return {{"net_id", net_id},
          {"kind", "energy"},
          {"ffl", matrix_to_json(net.ffl().frequencies())},
          {"layers", layers_to_json(net.layers())}};
}

EnergyNet energy_net_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("kind").get<std::string>() != "energy") throw SchemaError("not an energy net");
    return EnergyNet(FourierFeatureLayer(matrix_from_json(doc.at("ffl"))),
                     layers_from_json(doc.at("layers")));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("energy net schema: ") + e.what());
  }
}

nlohmann::json decoder_to_json(const DecoderNet& net, int net_id) {
  return {{"net_id", net_id},
          {"kind", "decoder"},
          {"family", net.type().str()},
          {"ffl", matrix_to_json(net.ffl().frequencies())},
          {"layers", layers_to_json(net.layers())}};
}

DecoderNet decoder_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("kind").get<std::string>() != "decoder") throw SchemaError("not a decoder net");
    return DecoderNet(VariableType::parse(doc.at("family").get<std::string>()),
                      FourierFeatureLayer(matrix_from_json(doc.at("ffl"))),
                      layers_from_json(doc.at("layers")));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("decoder schema: ") + e.what());
  }
}

nlohmann::json neural_pic_to_json(const NeuralPic& model) {
  nlohmann::json energy = nlohmann::json::array();
  for (std::size_t i = 0; i < model.energy_nets.size(); ++i)
    energy.push_back(energy_net_to_json(model.energy_nets[i], static_cast<int>(i)));
  nlohmann::json decoders = nlohmann::json::array();
  for (std::size_t i = 0; i < model.decoders.size(); ++i)
    decoders.push_back(decoder_to_json(model.decoders[i], static_cast<int>(i)));
  std::vector<std::string> types;
  for (const auto& t : model.types) types.push_back(t.str());
  return {{"kind", "neural"},
          {"tree", latent_tree_to_json(model.tree)},
          {"types", types},
          {"pic", circuit_to_json(model.pic)},
          {"energy_nets", energy},
          {"decoders", decoders},
          {"energy_of_latent", model.energy_of_latent},
          {"decoder_of_var", model.decoder_of_var}};
}

NeuralPic neural_pic_from_json(const nlohmann::json& doc) {
  try {
    std::vector<VariableType> types;
    for (const auto& t : doc.at("types")) types.push_back(VariableType::parse(t.get<std::string>()));
    NeuralPic model{latent_tree_from_json(doc.at("tree")), std::move(types),
                    circuit_from_json(doc.at("pic")), {}, {}, {}, {}};
    for (const auto& e : doc.at("energy_nets")) model.energy_nets.push_back(energy_net_from_json(e));
    for (const auto& d : doc.at("decoders")) model.decoders.push_back(decoder_from_json(d));
    model.energy_of_latent = doc.at("energy_of_latent").get<std::vector<int>>();
    model.decoder_of_var = doc.at("decoder_of_var").get<std::vector<int>>();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("neural PIC schema: ") + e.what());
  }
}

}  // namespace picirc
