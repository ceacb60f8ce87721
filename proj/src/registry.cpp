#include "ccr/registry.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

namespace ccr {

namespace {

constexpr const char* kStandardRegistry = R"({
  "domains": [
    {"name": "hair_color", "attributes": ["black", "blond", "brown"], "exclusive": true, "alias_suffix": "_hair"},
    {"name": "bangs", "attributes": ["bangs"], "exclusive": false},
    {"name": "glasses", "attributes": ["glasses"], "exclusive": false}
  ],
  "bit_order": ["bangs", "black_hair", "blond_hair", "brown_hair", "glasses"]
})";

bool is_identifier_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

}  // namespace

std::string AttributeLabel::to_string() const {
  std::string out = "[";
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (i) out += ',';
    out += bits[i] ? '1' : '0';
  }
  return out + "]";
}

DomainRegistry::DomainRegistry(std::vector<Domain> domains, std::vector<std::string> bit_order)
    : domains_(std::move(domains)) {
  if (domains_.empty()) throw std::invalid_argument("registry needs at least one domain");
  std::vector<std::string> natural;
  std::set<std::string> seen;
  for (const auto& d : domains_) {
    if (d.attributes.empty()) throw std::invalid_argument("domain '" + d.name + "' has no attributes");
    if (!d.exclusive && d.attributes.size() != 1)
      throw std::invalid_argument("non-exclusive domain '" + d.name + "' must carry exactly one attribute");
    for (const auto& a : d.attributes) {
      if (!seen.insert(a).second) throw std::invalid_argument("duplicate attribute name '" + a + "'");
      natural.push_back(a + d.alias_suffix);
    }
  }
  if (bit_order.empty()) bit_order = natural;
  auto sorted_a = bit_order;
  auto sorted_b = natural;
  std::sort(sorted_a.begin(), sorted_a.end());
  std::sort(sorted_b.begin(), sorted_b.end());
  if (sorted_a != sorted_b) throw std::invalid_argument("bit_order must be a permutation of the attribute bit names");
  bit_names_ = std::move(bit_order);

  for (const auto& d : domains_) {
    std::vector<std::size_t> row;
    for (const auto& a : d.attributes) {
      auto it = std::find(bit_names_.begin(), bit_names_.end(), a + d.alias_suffix);
      row.push_back(static_cast<std::size_t>(it - bit_names_.begin()));
    }
    bit_of_.push_back(std::move(row));
  }
}

const DomainRegistry& DomainRegistry::standard() {
  static const DomainRegistry registry = from_json(nlohmann::json::parse(kStandardRegistry));
  return registry;
}

const char* DomainRegistry::standard_json() { return kStandardRegistry; }

DomainRegistry DomainRegistry::from_json(const nlohmann::json& doc) {
  std::vector<Domain> domains;
  for (const auto& d : doc.at("domains")) {
    Domain dom;
    dom.name = d.at("name").get<std::string>();
    dom.attributes = d.at("attributes").get<std::vector<std::string>>();
    dom.exclusive = d.at("exclusive").get<bool>();
    dom.alias_suffix = d.value("alias_suffix", std::string{});
    domains.push_back(std::move(dom));
  }
  std::vector<std::string> order;
  if (doc.contains("bit_order")) order = doc.at("bit_order").get<std::vector<std::string>>();
  return DomainRegistry(std::move(domains), std::move(order));
}

nlohmann::json DomainRegistry::to_json() const {
  nlohmann::json doms = nlohmann::json::array();
  for (const auto& d : domains_) {
    nlohmann::json j = {{"name", d.name}, {"attributes", d.attributes}, {"exclusive", d.exclusive}};
    if (!d.alias_suffix.empty()) j["alias_suffix"] = d.alias_suffix;
    doms.push_back(std::move(j));
  }
  return {{"domains", doms}, {"bit_order", bit_names_}};
}

std::size_t DomainRegistry::domain_index(std::string_view name) const {
  for (std::size_t i = 0; i < domains_.size(); ++i)
    if (domains_[i].name == name) return i;
  throw std::invalid_argument("unknown domain '" + std::string(name) + "'");
}

std::size_t DomainRegistry::bit_index(std::size_t domain, std::size_t attribute) const {
  return bit_of_.at(domain).at(attribute);
}

std::pair<std::size_t, std::size_t> DomainRegistry::find_attribute(std::string_view name) const {
  for (std::size_t d = 0; d < domains_.size(); ++d) {
    const auto& dom = domains_[d];
    for (std::size_t a = 0; a < dom.attributes.size(); ++a) {
      if (dom.attributes[a] == name) return {d, a};
      if (!dom.alias_suffix.empty() && dom.attributes[a] + dom.alias_suffix == name) return {d, a};
    }
  }
  throw UnknownAttributeError(std::string(name));
}

AttributeLabel DomainRegistry::empty_label() const {
  return AttributeLabel{std::vector<std::uint8_t>(total_bits(), 0)};
}

void DomainRegistry::validate(const AttributeLabel& label) const {
  if (label.bits.size() != total_bits())
    throw LabelError("label has " + std::to_string(label.bits.size()) + " bits, expected " +
                     std::to_string(total_bits()));
  for (auto b : label.bits)
    if (b > 1) throw LabelError("label bits must be 0 or 1");
  for (std::size_t d = 0; d < domains_.size(); ++d) {
    if (!domains_[d].exclusive) continue;
    int set = 0;
    for (auto bit : bit_of_[d]) set += label.bits[bit];
    if (set > 1)
      throw LabelError("exclusive domain '" + domains_[d].name + "' has " + std::to_string(set) + " bits set");
  }
}

bool DomainRegistry::is_valid(const AttributeLabel& label) const noexcept {
  try {
    validate(label);
    return true;
  } catch (const LabelError&) {
    return false;
  }
}

int DomainRegistry::state_of(const AttributeLabel& label, std::size_t domain) const {
  const auto& bits = bit_of_.at(domain);
  if (!domains_[domain].exclusive) return label.bits.at(bits[0]) ? 1 : 0;
  for (std::size_t a = 0; a < bits.size(); ++a)
    if (label.bits.at(bits[a])) return static_cast<int>(a);
  return -1;
}

void DomainRegistry::set_state(AttributeLabel& label, std::size_t domain, int state) const {
  const auto& bits = bit_of_.at(domain);
  if (!domains_[domain].exclusive) {
    label.bits.at(bits[0]) = state == 1 ? 1 : 0;
    return;
  }
  for (std::size_t a = 0; a < bits.size(); ++a) label.bits.at(bits[a]) = static_cast<int>(a) == state ? 1 : 0;
}

std::string DomainRegistry::state_name(std::size_t domain, int state) const {
  const auto& d = domains_.at(domain);
  if (d.exclusive) return state < 0 ? "none" : d.attributes.at(static_cast<std::size_t>(state));
  return state == 1 ? d.attributes[0] : "no_" + d.attributes[0];
}

int DomainRegistry::forward_state(std::size_t domain, std::size_t attribute) const {
  return domains_.at(domain).exclusive ? static_cast<int>(attribute) : 1;
}

std::vector<std::size_t> DomainRegistry::domain_bits(std::size_t domain) const {
  auto bits = bit_of_.at(domain);
  std::sort(bits.begin(), bits.end());
  return bits;
}

bool DomainRegistry::group_equal(const AttributeLabel& a, const AttributeLabel& b, std::size_t domain) const {
  for (auto bit : bit_of_.at(domain))
    if (a.bits.at(bit) != b.bits.at(bit)) return false;
  return true;
}

std::string DomainRegistry::token_for(const AttributeEdit& edit) const {
  return (edit.direction == Direction::kForward ? "+" : "-") +
         domains_.at(edit.domain).attributes.at(edit.attribute);
}

AttributeEdit parse_edit_token(std::string_view token, const DomainRegistry& registry) {
  if (token.empty()) throw ParseError("empty edit token", 0);
  Direction dir;
  if (token[0] == '+') {
    dir = Direction::kForward;
  } else if (token[0] == '-') {
    dir = Direction::kBackward;
  } else {
    throw ParseError("edit token must start with '+' or '-'", 0);
  }
  auto name = token.substr(1);
  if (name.empty()) throw ParseError("missing attribute name", 1);
  for (std::size_t i = 0; i < name.size(); ++i)
    if (!is_identifier_char(name[i])) throw ParseError("invalid character in attribute name", i + 1);
  auto [d, a] = registry.find_attribute(name);
  return AttributeEdit{d, a, dir};
}

AttributeLabel label_apply(const AttributeLabel& label, const AttributeEdit& edit, const DomainRegistry& registry) {
  registry.validate(label);
  AttributeLabel out = label;
  const auto& dom = registry.domains().at(edit.domain);
  const auto bit = registry.bit_index(edit.domain, edit.attribute);
  if (edit.direction == Direction::kForward) {
    if (dom.exclusive)
      for (auto sib : registry.domain_bits(edit.domain)) out.bits[sib] = 0;
    out.bits[bit] = 1;
  } else {
    out.bits[bit] = 0;
  }
  return out;
}

AttributeEdit inverse(const AttributeEdit& edit) {
  AttributeEdit out = edit;
  out.direction = edit.direction == Direction::kForward ? Direction::kBackward : Direction::kForward;
  return out;
}

}  // namespace ccr
