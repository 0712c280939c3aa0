#include "picirc/circuit.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <numbers>
#include <set>

#include "picirc/errors.hpp"
#include "picirc/logspace.hpp"

namespace picirc {

std::string_view to_string(UnitKind kind) {
  switch (kind) {
    case UnitKind::input: return "input";
    case UnitKind::sum: return "sum";
    case UnitKind::product: return "product";
    case UnitKind::integral: return "integral";
  }
  return "?";
}

std::string_view to_string(Family family) {
  switch (family) {
    case Family::categorical: return "categorical";
    case Family::binomial: return "binomial";
    case Family::gaussian: return "gaussian";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  if (name == "categorical") return Family::categorical;
  if (name == "binomial") return Family::binomial;
  if (name == "gaussian") return Family::gaussian;
  throw ArgumentError("unknown distribution family '" + std::string(name) + "'");
}

VariableType VariableType::parse(std::string_view text) {
  VariableType t;
  const auto colon = text.find(':');
  t.family = parse_family(text.substr(0, colon));
  if (t.family == Family::gaussian) {
    if (colon != std::string_view::npos) throw ArgumentError("gaussian takes no state count");
    return t;
  }
  if (colon == std::string_view::npos)
    throw ArgumentError("discrete family needs a state count, e.g. categorical:4");
  try {
    t.num_states = std::stoi(std::string(text.substr(colon + 1)));
  } catch (const std::exception&) {
    throw ArgumentError("bad state count in '" + std::string(text) + "'");
  }
  if (t.num_states <= 0) throw ArgumentError("state count must be positive");
  return t;
}

std::string VariableType::str() const {
  if (family == Family::gaussian) return "gaussian";
  return std::string(to_string(family)) + ":" + std::to_string(num_states);
}

// ---------------------------------------------------------------- InputDistribution

InputDistribution InputDistribution::categorical(std::vector<double> log_probs) {
  InputDistribution d;
  d.family = Family::categorical;
  d.num_states = static_cast<int>(log_probs.size());
  d.params = std::move(log_probs);
  return d;
}

InputDistribution InputDistribution::binomial(int trials, double success) {
  InputDistribution d;
  d.family = Family::binomial;
  d.num_states = trials;
  d.params = {success};
  return d;
}

InputDistribution InputDistribution::gaussian(double mean, double log_stddev) {
  InputDistribution d;
  d.family = Family::gaussian;
  d.params = {mean, log_stddev};
  return d;
}

InputDistribution InputDistribution::conditional(Family family, int num_states, int latent,
                                                 int net) {
  InputDistribution d;
  d.family = family;
  d.num_states = num_states;
  d.symbolic = true;
  d.latent = latent;
  d.net = net;
  return d;
}

std::size_t InputDistribution::param_count() const {
  switch (family) {
    case Family::categorical: return static_cast<std::size_t>(num_states);
    case Family::binomial: return 1;
    case Family::gaussian: return 2;
  }
  return 0;
}

bool InputDistribution::in_support(double x) const {
  if (!std::isfinite(x)) return false;
  if (family == Family::gaussian) return true;
  if (x != std::floor(x) || x < 0) return false;
  const double upper = family == Family::categorical ? num_states - 1 : num_states;
  return x <= upper;
}

double InputDistribution::log_prob(double x) const {
  if (symbolic) throw ArgumentError("log_prob on a symbolic input distribution");
  if (!in_support(x)) {
    throw ArgumentError("value " + exact_decimal(x) + " outside the support of " +
                        std::string(to_string(family)) + "(" + std::to_string(num_states) + ")");
  }
  switch (family) {
    case Family::categorical:
      return params[static_cast<std::size_t>(x)];
    case Family::binomial: {
      const double k = num_states;
      const double p = params[0];
      double lp = std::lgamma(k + 1) - std::lgamma(x + 1) - std::lgamma(k - x + 1);
      if (x > 0) lp += x * std::log(p);
      if (k - x > 0) lp += (k - x) * std::log1p(-p);
      return lp;
    }
    case Family::gaussian: {
      const double z = (x - params[0]) * std::exp(-params[1]);
      return -0.5 * std::log(2 * std::numbers::pi) - params[1] - 0.5 * z * z;
    }
  }
  return kNegInf;
}

void InputDistribution::validate(double tolerance) const {
  if (symbolic) {
    if (latent < 0) throw ArgumentError("symbolic input distribution without a latent");
    if (family != Family::gaussian && num_states <= 0)
      throw ArgumentError("discrete family needs a positive state count");
    return;
  }
  switch (family) {
    case Family::categorical: {
      if (num_states <= 0 || params.size() != static_cast<std::size_t>(num_states))
        throw ArgumentError("categorical parameters must hold K log-probabilities");
      const double total = log_sum_exp(params);
      if (!(std::abs(total) <= tolerance))
        throw ArgumentError("categorical log-probabilities do not normalize (logsumexp = " +
                            exact_decimal(total) + ")");
      break;
    }
    case Family::binomial:
      if (num_states <= 0 || params.size() != 1)
        throw ArgumentError("binomial parameters must be {success probability}");
      if (!(params[0] >= 0.0 && params[0] <= 1.0))
        throw ArgumentError("binomial success probability outside [0, 1]");
      break;
    case Family::gaussian:
      if (params.size() != 2) throw ArgumentError("gaussian parameters must be {mean, log stddev}");
      if (!std::isfinite(params[0]) || !std::isfinite(params[1]) || std::exp(params[1]) <= 0.0)
        throw ArgumentError("gaussian parameters must be finite with stddev > 0");
      break;
  }
}

// ---------------------------------------------------------------- Circuit

Circuit::Circuit(std::vector<Unit> units, UnitId root, int num_vars)
    : units_(std::move(units)), root_(root), num_vars_(num_vars) {
  if (num_vars_ <= 0) throw StructuralError("circuit needs at least one variable");
  if (root_ >= units_.size()) throw StructuralError("root id out of range");
  std::set<int> latents;
  for (std::size_t i = 0; i < units_.size(); ++i) {
    const Unit& u = units_[i];
    const std::string where = "unit " + std::to_string(i);
    if (u.id != i) throw StructuralError(where + ": ids must be dense and in order");
    for (UnitId c : u.children)
      if (c >= units_.size()) throw StructuralError(where + ": child id out of range");
    for (int v : u.scope)
      if (v < 0 || v >= num_vars_) throw StructuralError(where + ": scope variable out of range");
    if (!std::is_sorted(u.scope.begin(), u.scope.end()))
      throw StructuralError(where + ": scope must be sorted");
    switch (u.kind) {
      case UnitKind::input:
        if (!u.children.empty()) throw StructuralError(where + ": input unit with children");
        if (!u.dist) throw StructuralError(where + ": input unit without a distribution");
        if (u.scope.size() != 1) throw StructuralError(where + ": input unit scope must be one variable");
        break;
      case UnitKind::sum:
        if (u.children.empty()) throw StructuralError(where + ": sum unit without children");
        if (u.weights.size() != u.children.size())
          throw StructuralError(where + ": sum weights not aligned with children");
        break;
      case UnitKind::product:
        if (u.children.empty()) throw StructuralError(where + ": product unit without children");
        break;
      case UnitKind::integral:
        if (u.children.size() != 1) throw StructuralError(where + ": integral unit needs exactly one child");
        if (!u.latent) throw StructuralError(where + ": integral unit without a latent");
        if (!latents.insert(u.latent->index).second)
          throw StructuralError(where + ": latent " + std::to_string(u.latent->index) +
                                " integrated by more than one unit");
        break;
    }
  }
  const auto& root_scope = units_[root_].scope;
  if (root_scope.size() != static_cast<std::size_t>(num_vars_))
    throw StructuralError("root scope does not cover all variables");
}

std::size_t Circuit::num_edges() const {
  std::size_t n = 0;
  for (const auto& u : units_) n += u.children.size();
  return n;
}

bool Circuit::is_symbolic() const {
  return std::any_of(units_.begin(), units_.end(), [](const Unit& u) {
    return u.kind == UnitKind::integral || (u.dist && u.dist->symbolic);
  });
}

void Circuit::set_weights(UnitId id, std::vector<double> log_weights) {
  Unit& u = units_.at(id);
  if (u.kind != UnitKind::sum || log_weights.size() != u.children.size())
    throw ArgumentError("set_weights: unit " + std::to_string(id) + " is not a matching sum unit");
  u.weights = std::move(log_weights);
}

void Circuit::set_distribution(UnitId id, InputDistribution dist) {
  Unit& u = units_.at(id);
  if (u.kind != UnitKind::input) throw ArgumentError("set_distribution on a non-input unit");
  u.dist = std::move(dist);
}

// ---------------------------------------------------------------- CircuitBuilder

std::vector<int> CircuitBuilder::merged_scope(const std::vector<UnitId>& children) const {
  std::vector<int> scope;
  for (UnitId c : children) {
    const auto& s = units_.at(c).scope;
    scope.insert(scope.end(), s.begin(), s.end());
  }
  std::sort(scope.begin(), scope.end());
  scope.erase(std::unique(scope.begin(), scope.end()), scope.end());
  return scope;
}

UnitId CircuitBuilder::add_input(int var, InputDistribution dist) {
  if (var < 0 || var >= num_vars_) throw ArgumentError("input variable out of range");
  Unit u;
  u.id = units_.size();
  u.kind = UnitKind::input;
  u.scope = {var};
  u.dist = std::move(dist);
  units_.push_back(std::move(u));
  return units_.back().id;
}

UnitId CircuitBuilder::add_sum(std::vector<UnitId> children, std::vector<double> log_weights) {
  if (children.empty() || children.size() != log_weights.size())
    throw ArgumentError("sum unit needs one log-weight per child");
  Unit u;
  u.id = units_.size();
  u.kind = UnitKind::sum;
  u.scope = merged_scope(children);
  u.children = std::move(children);
  u.weights = std::move(log_weights);
  units_.push_back(std::move(u));
  return units_.back().id;
}

UnitId CircuitBuilder::add_product(std::vector<UnitId> children) {
  if (children.empty()) throw ArgumentError("product unit needs children");
  Unit u;
  u.id = units_.size();
  u.kind = UnitKind::product;
  u.scope = merged_scope(children);
  u.children = std::move(children);
  units_.push_back(std::move(u));
  return units_.back().id;
}

UnitId CircuitBuilder::add_integral(UnitId child, int latent, std::optional<int> parent) {
  Unit u;
  u.id = units_.size();
  u.kind = UnitKind::integral;
  u.children = {child};
  u.scope = merged_scope(u.children);
  u.latent = LatentRef{latent, parent};
  units_.push_back(std::move(u));
  return units_.back().id;
}

Circuit CircuitBuilder::build(UnitId root) && {
  return Circuit(std::move(units_), root, num_vars_);
}

// ---------------------------------------------------------------- traversal & checks

std::vector<UnitId> post_order(const Circuit& circuit) {
  enum class Mark : unsigned char { fresh, open, done };
  std::vector<Mark> mark(circuit.num_units(), Mark::fresh);
  std::vector<UnitId> order;
  order.reserve(circuit.num_units());
  // (unit, next child position)
  std::vector<std::pair<UnitId, std::size_t>> stack{{circuit.root(), 0}};
  mark[circuit.root()] = Mark::open;
  while (!stack.empty()) {
    auto& [id, next] = stack.back();
    const auto& children = circuit.unit(id).children;
    if (next < children.size()) {
      const UnitId child = children[next++];
      if (mark[child] == Mark::open)
        throw StructuralError("cycle detected through unit " + std::to_string(child));
      if (mark[child] == Mark::fresh) {
        mark[child] = Mark::open;
        stack.emplace_back(child, 0);
      }
    } else {
      mark[id] = Mark::done;
      order.push_back(id);
      stack.pop_back();
    }
  }
  return order;
}

StructureReport check_structure(const Circuit& circuit) {
  StructureReport report{true, true, true};
  // scope -> sorted partition induced by the first product seen with that scope
  std::map<std::vector<int>, std::vector<std::vector<int>>> partitions;
  for (const Unit& u : circuit.units()) {
    if (u.kind == UnitKind::sum || u.kind == UnitKind::integral) {
      for (UnitId c : u.children)
        if (circuit.unit(c).scope != u.scope) report.smooth = false;
    } else if (u.kind == UnitKind::product) {
      std::vector<int> seen;
      std::vector<std::vector<int>> parts;
      for (UnitId c : u.children) {
        const auto& s = circuit.unit(c).scope;
        seen.insert(seen.end(), s.begin(), s.end());
        parts.push_back(s);
      }
      std::sort(seen.begin(), seen.end());
      if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) report.decomposable = false;
      std::sort(parts.begin(), parts.end());
      auto [it, inserted] = partitions.emplace(u.scope, parts);
      if (!inserted && it->second != parts) report.structured = false;
    }
  }
  report.structured = report.structured && report.decomposable;
  return report;
}

bool sum_weights_normalized(const Circuit& circuit, double tolerance) {
  for (const Unit& u : circuit.units()) {
    if (u.kind != UnitKind::sum) continue;
    if (!(std::abs(log_sum_exp(u.weights)) <= tolerance)) return false;
  }
  return true;
}

// ---------------------------------------------------------------- serialization

std::string exact_decimal(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

double parse_exact_decimal(const std::string& text) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size())
    throw SchemaError("not a decimal number: '" + text + "'");
  return v;
}

namespace {

using nlohmann::json;

json encode_reals(const std::vector<double>& values) {
  json out = json::array();
  for (double v : values) out.push_back(exact_decimal(v));
  return out;
}

std::vector<double> decode_reals(const json& arr) {
  std::vector<double> out;
  for (const auto& v : arr) out.push_back(parse_exact_decimal(v.get<std::string>()));
  return out;
}

UnitKind parse_kind(const std::string& name) {
  if (name == "input") return UnitKind::input;
  if (name == "sum") return UnitKind::sum;
  if (name == "product") return UnitKind::product;
  if (name == "integral") return UnitKind::integral;
  throw SchemaError("unknown unit kind '" + name + "'");
}

}  // namespace

nlohmann::json circuit_to_json(const Circuit& circuit) {
  json units = json::array();
  for (const Unit& u : circuit.units()) {
    json ju;
    ju["id"] = u.id;
    ju["kind"] = to_string(u.kind);
    ju["children"] = u.children;
    ju["scope"] = u.scope;
    if (u.kind == UnitKind::sum) ju["weights"] = encode_reals(u.weights);
    if (u.dist) {
      const auto& d = *u.dist;
      json jd;
      jd["family"] = to_string(d.family);
      jd["states"] = d.num_states;
      jd["params"] = encode_reals(d.params);
      jd["symbolic"] = d.symbolic;
      if (d.symbolic) {
        jd["latent"] = d.latent;
        jd["net"] = d.net;
      }
      ju["dist"] = std::move(jd);
    }
    if (u.latent) {
      json jl;
      jl["index"] = u.latent->index;
      jl["parent"] = u.latent->parent ? json(*u.latent->parent) : json(nullptr);
      ju["latent"] = std::move(jl);
    }
    units.push_back(std::move(ju));
  }
  json doc;
  doc["num_vars"] = circuit.num_vars();
  doc["root"] = circuit.root();
  doc["units"] = std::move(units);
  return doc;
}

Circuit circuit_from_json(const nlohmann::json& doc) {
  try {
    std::vector<Unit> units;
    for (const auto& ju : doc.at("units")) {
      Unit u;
      u.id = ju.at("id").get<UnitId>();
      u.kind = parse_kind(ju.at("kind").get<std::string>());
      u.children = ju.at("children").get<std::vector<UnitId>>();
      u.scope = ju.at("scope").get<std::vector<int>>();
      if (ju.contains("weights")) u.weights = decode_reals(ju.at("weights"));
      if (ju.contains("dist")) {
        const auto& jd = ju.at("dist");
        InputDistribution d;
        d.family = parse_family(jd.at("family").get<std::string>());
        d.num_states = jd.at("states").get<int>();
        d.params = decode_reals(jd.at("params"));
        d.symbolic = jd.at("symbolic").get<bool>();
        if (d.symbolic) {
          d.latent = jd.at("latent").get<int>();
          d.net = jd.at("net").get<int>();
        }
        u.dist = std::move(d);
      }
      if (ju.contains("latent")) {
        const auto& jl = ju.at("latent");
        LatentRef ref;
        ref.index = jl.at("index").get<int>();
        if (!jl.at("parent").is_null()) ref.parent = jl.at("parent").get<int>();
        u.latent = ref;
      }
      units.push_back(std::move(u));
    }
    return Circuit(std::move(units), doc.at("root").get<UnitId>(), doc.at("num_vars").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("circuit schema: ") + e.what());
  } catch (const ArgumentError& e) {
    throw SchemaError(std::string("circuit schema: ") + e.what());
  }
}

std::string serialize(const Circuit& circuit) { return circuit_to_json(circuit).dump(); }

Circuit deserialize(std::string_view bytes) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("circuit parse: ") + e.what(), e.byte);
  }
  return circuit_from_json(doc);
}

}  // namespace picirc
