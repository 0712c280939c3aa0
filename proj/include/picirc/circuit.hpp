#pragma once

// Circuit data model shared by symbolic integral circuits (PICs) and their
// materialized quadrature counterparts (QPCs).

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace picirc {

using UnitId = std::size_t;

enum class UnitKind { input, sum, product, integral };

enum class Family { categorical, binomial, gaussian };

std::string_view to_string(UnitKind kind);
std::string_view to_string(Family family);
Family parse_family(std::string_view name);

/// Distribution attached to an input unit.
///
/// Concrete mode stores natural parameters: log-probabilities for categorical(K),
/// the success probability for binomial(K) (support 0..K), and (mean, log stddev)
/// for gaussian. Symbolic mode is the PIC placeholder "conditional on a latent":
/// it only names the conditioning latent and the decoder net that will produce
/// the concrete parameters.
struct InputDistribution {
  Family family = Family::categorical;
  int num_states = 0;
  std::vector<double> params;
  bool symbolic = false;
  int latent = -1;
  int net = -1;

  static InputDistribution categorical(std::vector<double> log_probs);
  static InputDistribution binomial(int trials, double success);
  static InputDistribution gaussian(double mean, double log_stddev);
  static InputDistribution conditional(Family family, int num_states, int latent, int net);

  /// Number of parameters a decoder must emit for this family (I in the tensor layout).
  std::size_t param_count() const;

  bool in_support(double x) const;

  /// Log mass (or log density for gaussian) at x. Concrete mode only.
  double log_prob(double x) const;

  /// Throws ArgumentError when parameters are not a valid member of the family.
  void validate(double tolerance = 1e-9) const;

  bool operator==(const InputDistribution&) const = default;
};

/// Declared family of one observable column, e.g. categorical:4 or gaussian.
struct VariableType {
  Family family = Family::categorical;
  int num_states = 0;

  /// Parses "categorical:K", "binomial:K" or "gaussian".
  static VariableType parse(std::string_view text);
  std::string str() const;
  bool operator==(const VariableType&) const = default;
};

/// Integration variable of an integral unit, with the latent its density conditions on.
struct LatentRef {
  int index = 0;
  std::optional<int> parent;

  bool operator==(const LatentRef&) const = default;
};

struct Unit {
  UnitId id = 0;
  UnitKind kind = UnitKind::input;
  std::vector<UnitId> children;
  std::vector<int> scope;  // sorted observable indices
  std::vector<double> weights;  // log-domain, sum units only
  std::optional<InputDistribution> dist;  // input units only
  std::optional<LatentRef> latent;  // integral units only

  bool operator==(const Unit&) const = default;
};

class Circuit {
 public:
  /// Checks id density, child references, per-kind arity and latent uniqueness.
  /// Acyclicity is checked lazily by post_order.
  Circuit(std::vector<Unit> units, UnitId root, int num_vars);

  const Unit& unit(UnitId id) const { return units_.at(id); }
  std::span<const Unit> units() const { return units_; }
  UnitId root() const { return root_; }
  int num_vars() const { return num_vars_; }
  std::size_t num_units() const { return units_.size(); }
  std::size_t num_edges() const;

  /// True when any unit is an integral unit or carries a symbolic input distribution.
  bool is_symbolic() const;

  // Parameter updates for training. Not safe while other threads read the circuit.
  void set_weights(UnitId id, std::vector<double> log_weights);
  void set_distribution(UnitId id, InputDistribution dist);

  bool operator==(const Circuit&) const = default;

 private:
  std::vector<Unit> units_;
  UnitId root_ = 0;
  int num_vars_ = 0;
};

/// Assigns dense ids in insertion order and derives scopes from children.
class CircuitBuilder {
 public:
  explicit CircuitBuilder(int num_vars) : num_vars_(num_vars) {}

  UnitId add_input(int var, InputDistribution dist);
  UnitId add_sum(std::vector<UnitId> children, std::vector<double> log_weights);
  UnitId add_product(std::vector<UnitId> children);
  UnitId add_integral(UnitId child, int latent, std::optional<int> parent);

  const Unit& unit(UnitId id) const { return units_.at(id); }
  std::size_t size() const { return units_.size(); }

  Circuit build(UnitId root) &&;

 private:
  std::vector<int> merged_scope(const std::vector<UnitId>& children) const;

  int num_vars_;
  std::vector<Unit> units_;
};

/// Children-before-parents order of the units reachable from the root.
/// Children are visited in stored order, so the result is deterministic.
/// Throws StructuralError naming a unit on a cycle.
std::vector<UnitId> post_order(const Circuit& circuit);

struct StructureReport {
  bool smooth = false;
  bool decomposable = false;
  bool structured = false;
};

StructureReport check_structure(const Circuit& circuit);

/// True when every sum unit's weights exp-sum to one within tolerance.
bool sum_weights_normalized(const Circuit& circuit, double tolerance = 1e-9);

nlohmann::json circuit_to_json(const Circuit& circuit);
Circuit circuit_from_json(const nlohmann::json& doc);

std::string serialize(const Circuit& circuit);
Circuit deserialize(std::string_view bytes);

/// 17-significant-digit decimal text; parses back to the identical double.
std::string exact_decimal(double value);
double parse_exact_decimal(const std::string& text);

}  // namespace picirc
