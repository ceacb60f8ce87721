#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ccr {

/// Raised when an edit token names an attribute the registry does not know.
class UnknownAttributeError : public std::invalid_argument {
 public:
  explicit UnknownAttributeError(const std::string& token)
      : std::invalid_argument("unknown attribute in token '" + token + "'"), token_(token) {}
  const std::string& token() const noexcept { return token_; }

 private:
  std::string token_;
};

/// Raised for grammar errors; column() is the 0-based offset of the offending character.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t column)
      : std::runtime_error(what + " (column " + std::to_string(column) + ")"), column_(column) {}
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t column_;
};

/// Raised when a label breaks a registry invariant (exclusive group with several bits set, bad length).
class LabelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Direction { kForward, kBackward };

/// One editing category. Exclusive domains hold at most one active attribute; non-exclusive domains
/// are binary switches and carry exactly one attribute.
struct Domain {
  std::string name;
  std::vector<std::string> attributes;
  bool exclusive = false;
  /// Optional suffix accepted on tokens and used for bit names ("black" -> "black_hair").
  std::string alias_suffix;

  /// Number of discrete appearance states: one per attribute for exclusive domains, {absent, present}
  /// otherwise.
  std::size_t num_states() const { return exclusive ? attributes.size() : 2; }
};

struct AttributeLabel {
  std::vector<std::uint8_t> bits;

  bool operator==(const AttributeLabel&) const = default;
  std::string to_string() const;
};

/// A symbolic attribute edit as produced by the token grammar.
struct AttributeEdit {
  std::size_t domain = 0;
  std::size_t attribute = 0;
  Direction direction = Direction::kForward;

  bool operator==(const AttributeEdit&) const = default;
};

/// Hierarchical domain/attribute tree plus the binary label layout shared by the dataset, the
/// classifier and the metrics. Immutable after construction.
class DomainRegistry {
 public:
  DomainRegistry(std::vector<Domain> domains, std::vector<std::string> bit_order = {});

  /// Hair colour (black, blond, brown; exclusive), bangs and glasses with bit order
  /// [bangs, black_hair, blond_hair, brown_hair, glasses].
  static const DomainRegistry& standard();
  static const char* standard_json();

  static DomainRegistry from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;

  const std::vector<Domain>& domains() const noexcept { return domains_; }
  std::size_t num_domains() const noexcept { return domains_.size(); }
  std::size_t total_bits() const noexcept { return bit_names_.size(); }

  std::size_t domain_index(std::string_view name) const;
  std::size_t bit_index(std::size_t domain, std::size_t attribute) const;
  const std::string& bit_name(std::size_t bit) const { return bit_names_.at(bit); }
  const std::vector<std::string>& bit_names() const noexcept { return bit_names_; }

  /// Resolves an attribute by name or alias; throws UnknownAttributeError.
  std::pair<std::size_t, std::size_t> find_attribute(std::string_view name) const;

  AttributeLabel empty_label() const;
  /// Throws LabelError naming the violated invariant.
  void validate(const AttributeLabel& label) const;
  bool is_valid(const AttributeLabel& label) const noexcept;

  /// State index of a domain within a label: attribute index for exclusive domains (-1 when none is
  /// set), 0/1 for absent/present in binary domains.
  int state_of(const AttributeLabel& label, std::size_t domain) const;
  void set_state(AttributeLabel& label, std::size_t domain, int state) const;
  std::string state_name(std::size_t domain, int state) const;
  /// State that a forward edit of `attribute` produces.
  int forward_state(std::size_t domain, std::size_t attribute) const;

  /// Bits belonging to one domain, in label order.
  std::vector<std::size_t> domain_bits(std::size_t domain) const;
  bool group_equal(const AttributeLabel& a, const AttributeLabel& b, std::size_t domain) const;

  /// Canonical token text for an edit, e.g. "+blond" / "-glasses".
  std::string token_for(const AttributeEdit& edit) const;

 private:
  std::vector<Domain> domains_;
  std::vector<std::string> bit_names_;
  // bit_of_[domain][attribute]
  std::vector<std::vector<std::size_t>> bit_of_;
};

/// Parses `('+'|'-') attribute_name`.
AttributeEdit parse_edit_token(std::string_view token, const DomainRegistry& registry);

/// Forward sets the attribute bit (clearing siblings of an exclusive domain); backward clears it.
AttributeLabel label_apply(const AttributeLabel& label, const AttributeEdit& edit,
                           const DomainRegistry& registry);

AttributeEdit inverse(const AttributeEdit& edit);

}  // namespace ccr
