#include "ordergap/chain.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ordergap/errors.hpp"

namespace ordergap {

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

}  // namespace

std::string_view to_string(Grade g) {
  switch (g) {
    case Grade::Detect: return "DETECT";
    case Grade::Partial: return "PARTIAL";
    case Grade::Absorb: return "ABSORB";
  }
  return "?";
}

Grade parse_grade(std::string_view text) {
  const std::string u = upper(text);
  if (u == "DETECT" || u == "D") return Grade::Detect;
  if (u == "PARTIAL" || u == "P") return Grade::Partial;
  if (u == "ABSORB" || u == "A" || u == "COMPLY") return Grade::Absorb;
  throw ValidationError("unknown grade '" + std::string(text) + "'");
}

std::string_view to_string(OrderLevel level) {
  static constexpr std::array<std::string_view, 5> kNames{"O1", "O2", "O3", "O4", "O5"};
  return kNames[static_cast<std::size_t>(level) - 1];
}

OrderLevel parse_order_level(std::string_view text) {
  const std::string u = upper(text);
  if (u.size() == 2 && u[0] == 'O' && u[1] >= '1' && u[1] <= '5') {
    return static_cast<OrderLevel>(u[1] - '0');
  }
  throw ValidationError("unknown order level '" + std::string(text) + "'");
}

std::string_view to_string(PremiseClass c) {
  switch (c) {
    case PremiseClass::Empirical: return "empirical";
    case PremiseClass::Normative: return "normative";
    case PremiseClass::Unknown: return "unknown";
  }
  return "unknown";
}

PremiseClass parse_premise_class(std::string_view text) {
  if (text == "empirical") return PremiseClass::Empirical;
  if (text == "normative") return PremiseClass::Normative;
  if (text == "unknown") return PremiseClass::Unknown;
  throw ValidationError("unknown premise_class '" + std::string(text) + "'");
}

void validate_chain(const Chain& chain) {
  const std::string who = "chain " + std::to_string(chain.id);
  if (chain.precondition_false.empty() || chain.precondition_true.empty()) {
    throw ValidationError(who + ": preconditions must be non-empty");
  }
  if (chain.precondition_false == chain.precondition_true) {
    throw ValidationError(who + ": true and false preconditions are identical");
  }
  for (std::size_t i = 0; i < chain.orders.size(); ++i) {
    if (chain.orders[i].empty()) {
      throw ValidationError(who + ": order O" + std::to_string(i + 1) + " is empty");
    }
  }
}

Chain parse_chain_record(std::string_view record, std::size_t line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(record);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line, std::string("malformed record: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(line, "record is not an object");

  Chain chain;
  try {
    chain.id = j.at("id").get<int>();
    chain.domain = j.at("domain").get<std::string>();
    chain.precondition_false = j.at("precondition_false").get<std::string>();
    chain.precondition_true = j.at("precondition_true").get<std::string>();
    const auto& orders = j.at("orders");
    if (!orders.is_array()) throw ParseError(line, "orders is not an array");
    if (orders.size() != 5) {
      throw ValidationError("chain " + std::to_string(chain.id) + " (line " + std::to_string(line) +
                            "): expected 5 orders, found " + std::to_string(orders.size()));
    }
    for (std::size_t i = 0; i < 5; ++i) chain.orders[i] = orders[i].get<std::string>();
    if (auto it = j.find("premise_class"); it != j.end() && !it->is_null()) {
      chain.premise_class = parse_premise_class(it->get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line, std::string("bad field: ") + e.what());
  }
  validate_chain(chain);
  return chain;
}

std::string chain_record(const Chain& chain) {
  nlohmann::json j;
  j["id"] = chain.id;
  j["domain"] = chain.domain;
  j["precondition_false"] = chain.precondition_false;
  j["precondition_true"] = chain.precondition_true;
  j["orders"] = chain.orders;
  j["premise_class"] = std::string(to_string(chain.premise_class));
  return j.dump();
}

std::vector<Chain> parse_benchmark(std::string_view contents) {
  std::vector<Chain> chains;
  std::map<int, std::size_t> seen;  // id -> line
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < contents.size()) {
    std::size_t end = contents.find('\n', pos);
    if (end == std::string_view::npos) end = contents.size();
    std::string_view line = contents.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    Chain chain = parse_chain_record(line, line_no);
    if (auto [it, inserted] = seen.emplace(chain.id, line_no); !inserted) {
      throw ValidationError("duplicate chain id " + std::to_string(chain.id) + " on lines " +
                            std::to_string(it->second) + " and " + std::to_string(line_no));
    }
    chains.push_back(std::move(chain));
  }
  return chains;
}

std::vector<Chain> load_benchmark(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open benchmark file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_benchmark(buf.str());
}

const Chain* find_chain(const std::vector<Chain>& chains, int id) {
  auto it = std::find_if(chains.begin(), chains.end(), [id](const Chain& c) { return c.id == id; });
  return it == chains.end() ? nullptr : &*it;
}

std::string true_premise_prompt(const Chain& chain, OrderLevel level) {
  std::string text = chain.order(level);
  const std::string& from = chain.precondition_false;
  std::size_t pos = text.find(from);
  if (pos == std::string::npos) {
    throw ValidationError("chain " + std::to_string(chain.id) + ": " + std::string(to_string(level)) +
                          " does not contain the false precondition verbatim; supply a true_o2 variant");
  }
  while (pos != std::string::npos) {
    text.replace(pos, from.size(), chain.precondition_true);
    pos = text.find(from, pos + chain.precondition_true.size());
  }
  return text;
}

}  // namespace ordergap
