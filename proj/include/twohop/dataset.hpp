#pragma once

// Two-hop fact data.
//
// Templates: a mention template marks the mention with square brackets and
// the subject hole with "{}", e.g. "[the singer of {}]". A prompt template
// has one hole, e.g. "The mother of {} is". Rendering a prompt around a
// mention yields the exact character range of the mention, so downstream
// code never searches for substrings.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "twohop/errors.hpp"
#include "twohop/tokenizer.hpp"

namespace twohop {

using Rng = std::mt19937_64;
using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Entity {
  EntityId id = 0;
  std::string name;
  std::string category;
  bool operator==(const Entity&) const = default;
};

struct Relation {
  RelationId id = 0;
  std::string name;
  std::string domain;
  std::string range;
  std::string mention_template;
  std::string prompt_template;
  bool operator==(const Relation&) const = default;
};

struct FactWorld {
  std::vector<Entity> entities;
  std::vector<Relation> relations;
  // facts[r] maps subject id to object id; a map makes every relation functional.
  std::vector<std::map<EntityId, EntityId>> facts;

  std::optional<EntityId> object_of(RelationId r, EntityId subject) const {
    require(r < facts.size(), "FactWorld: relation out of range");
    auto it = facts[r].find(subject);
    if (it == facts[r].end()) return std::nullopt;
    return it->second;
  }
  const Entity& entity(EntityId id) const {
    require(id < entities.size(), "FactWorld: entity out of range");
    return entities[id];
  }
  std::optional<EntityId> find_entity(std::string_view name) const {
    for (const auto& e : entities)
      if (e.name == name) return e.id;
    return std::nullopt;
  }
  std::optional<RelationId> find_relation(std::string_view name) const {
    for (const auto& r : relations)
      if (r.name == name) return r.id;
    return std::nullopt;
  }

  // Throws InvariantViolation when ids are not dense, names repeat or facts leave the world.
  void validate() const {
    std::set<std::string> names;
    for (std::size_t i = 0; i < entities.size(); ++i) {
      ensure(entities[i].id == i, "FactWorld: entity ids must be dense");
      ensure(names.insert(entities[i].name).second, "FactWorld: duplicate entity name " + entities[i].name);
    }
    ensure(facts.size() == relations.size(), "FactWorld: one fact map per relation");
    for (std::size_t r = 0; r < relations.size(); ++r) {
      ensure(relations[r].id == r, "FactWorld: relation ids must be dense");
      for (auto [s, o] : facts[r]) {
        ensure(s < entities.size() && o < entities.size(), "FactWorld: fact refers to unknown entity");
        ensure(entities[s].category == relations[r].domain, "FactWorld: subject outside relation domain");
        ensure(entities[o].category == relations[r].range, "FactWorld: object outside relation range");
      }
    }
  }
};

struct TwoHopInstance {
  std::string fact_composition_type;
  std::string e1, r1, e2, r2, e3;
  std::string two_hop_prompt;
  CharSpan mention;
  std::string one_hop_prompt;
  std::vector<std::string> answer_aliases;

  std::string mention_text() const { return two_hop_prompt.substr(mention.begin, mention.end - mention.begin); }
  bool operator==(const TwoHopInstance&) const = default;
};

enum class SubstitutionKind { entity, relation };

inline std::string to_string(SubstitutionKind k) { return k == SubstitutionKind::entity ? "entity" : "relation"; }
inline SubstitutionKind parse_substitution_kind(std::string_view s) {
  if (s == "entity") return SubstitutionKind::entity;
  if (s == "relation") return SubstitutionKind::relation;
  throw InvalidInput("unknown substitution kind '" + std::string(s) + "'");
}

struct SubstitutionSpec {
  SubstitutionKind kind = SubstitutionKind::entity;
  std::size_t replacement = 0;      // pool index (entity) or candidate-template index (relation)
  std::string replacement_label;    // e1' name or the distractor template
  std::string prompt;               // counterfactual two-hop prompt
  CharSpan mention;
};

// mention type ("song's singer") -> distractor mention templates ("[a rival of {}]").
using CandidateTable = std::map<std::string, std::vector<std::string>>;

struct RenderedText {
  std::string text;
  CharSpan mention;
};

// ---------------------------------------------------------------------------
// Template rendering

inline RenderedText render_mention(std::string_view tmpl, std::string_view subject) {
  const auto hole = tmpl.find("{}");
  require(hole != std::string_view::npos, "mention template has no {} hole: " + std::string(tmpl));
  require(tmpl.find("{}", hole + 2) == std::string_view::npos, "mention template has several holes");
  const auto open = tmpl.find('[');
  const auto close = tmpl.find(']');
  RenderedText out;
  if (open == std::string_view::npos && close == std::string_view::npos) {
    out.text = std::string(tmpl.substr(0, hole)) + std::string(subject) + std::string(tmpl.substr(hole + 2));
    out.mention = {0, out.text.size()};
    return out;
  }
  require(open != std::string_view::npos && close != std::string_view::npos && open < hole && hole < close,
          "mention template brackets must enclose the hole: " + std::string(tmpl));
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (i == open) {
      out.mention.begin = out.text.size();
    } else if (i == close) {
      out.mention.end = out.text.size();
    } else if (i == hole) {
      out.text += subject;
      ++i;
    } else {
      out.text += tmpl[i];
    }
  }
  return out;
}

// Fills the prompt hole with `inner`; `inner_mention` (relative to inner) is shifted into place.
inline RenderedText render_prompt(std::string_view tmpl, std::string_view inner, CharSpan inner_mention = {}) {
  const auto hole = tmpl.find("{}");
  require(hole != std::string_view::npos, "prompt template has no {} hole: " + std::string(tmpl));
  RenderedText out;
  out.text = std::string(tmpl.substr(0, hole)) + std::string(inner) + std::string(tmpl.substr(hole + 2));
  if (!inner_mention.empty()) out.mention = {hole + inner_mention.begin, hole + inner_mention.end};
  return out;
}

inline std::string splice(std::string_view text, CharSpan range, std::string_view replacement) {
  return std::string(text.substr(0, range.begin)) + std::string(replacement) + std::string(text.substr(range.end));
}

// "mother of song's singer" -> "song's singer"
inline std::string mention_type(const TwoHopInstance& inst) {
  const auto& t = inst.fact_composition_type;
  const auto at = t.find(" of ");
  return at == std::string::npos ? t : t.substr(at + 4);
}

// ---------------------------------------------------------------------------
// Instance validation and per-type pools

inline std::string instance_label(const TwoHopInstance& inst, std::size_t index) {
  return "instance " + std::to_string(index) + " (" + inst.fact_composition_type + ", e1=" + inst.e1 + ")";
}

inline std::optional<std::string> instance_problem(const TwoHopInstance& inst) {
  if (inst.fact_composition_type.empty()) return "empty fact_composition_type";
  if (inst.e1.empty() || inst.e2.empty() || inst.e3.empty() || inst.r1.empty() || inst.r2.empty())
    return "empty entity or relation field";
  if (inst.e1 == inst.e2) return "e1 equals e2";
  if (inst.two_hop_prompt.empty() || inst.one_hop_prompt.empty()) return "empty prompt";
  if (inst.mention.begin >= inst.mention.end || inst.mention.end > inst.two_hop_prompt.size())
    return "mention range outside two_hop_prompt";
  return std::nullopt;
}

// Checks functionality of r1/r2 and per-type bridge uniqueness across a list.
class InstanceChecker {
 public:
  std::optional<std::string> admit(const TwoHopInstance& inst) {
    if (auto p = instance_problem(inst)) return p;
    auto f1 = facts_.find({inst.r1, inst.e1});
    if (f1 != facts_.end() && f1->second != inst.e2) return "conflicting fact: " + inst.r1 + "(" + inst.e1 + ")";
    auto f2 = facts_.find({inst.r2, inst.e2});
    if (f2 != facts_.end() && f2->second != inst.e3) return "conflicting fact: " + inst.r2 + "(" + inst.e2 + ")";
    if (bridges_.count({inst.fact_composition_type, inst.e2}) != 0)
      return "duplicate bridge entity '" + inst.e2 + "' within type '" + inst.fact_composition_type + "'";
    facts_[{inst.r1, inst.e1}] = inst.e2;
    facts_[{inst.r2, inst.e2}] = inst.e3;
    bridges_.insert({inst.fact_composition_type, inst.e2});
    return std::nullopt;
  }

 private:
  std::map<std::pair<std::string, std::string>, std::string> facts_;
  std::set<std::pair<std::string, std::string>> bridges_;
};

// Returns an empty list when every invariant holds.
inline std::vector<std::string> check_instances(const std::vector<TwoHopInstance>& instances) {
  std::vector<std::string> problems;
  InstanceChecker checker;
  for (std::size_t i = 0; i < instances.size(); ++i)
    if (auto p = checker.admit(instances[i])) problems.push_back("instance " + std::to_string(i) + ": " + *p);
  return problems;
}

class TypeIndex {
 public:
  explicit TypeIndex(const std::vector<TwoHopInstance>& instances) {
    for (std::size_t i = 0; i < instances.size(); ++i) pools_[instances[i].fact_composition_type].push_back(i);
  }
  const std::vector<std::size_t>& pool(const std::string& type) const {
    static const std::vector<std::size_t> kEmpty;
    auto it = pools_.find(type);
    return it == pools_.end() ? kEmpty : it->second;
  }
  const std::map<std::string, std::vector<std::size_t>>& pools() const { return pools_; }

 private:
  std::map<std::string, std::vector<std::size_t>> pools_;
};

// ---------------------------------------------------------------------------
// Counterfactual sampling

// `pool` holds same-type instances; entries sharing the instance's bridge are ignored.
inline SubstitutionSpec sample_entity_substitution(const TwoHopInstance& inst,
                                                   const std::vector<const TwoHopInstance*>& pool, Rng& rng) {
  std::vector<const TwoHopInstance*> others;
  for (const auto* p : pool)
    if (p->e2 != inst.e2 && p->fact_composition_type == inst.fact_composition_type) others.push_back(p);
  require(!others.empty(), "sample_entity_substitution: no other instance of type '" + inst.fact_composition_type + "'");
  const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng);
  const auto& alt = *others[pick];
  const std::string alt_mention = alt.mention_text();
  SubstitutionSpec spec;
  spec.kind = SubstitutionKind::entity;
  spec.replacement = pick;
  spec.replacement_label = alt.e1;
  spec.prompt = splice(inst.two_hop_prompt, inst.mention, alt_mention);
  spec.mention = {inst.mention.begin, inst.mention.begin + alt_mention.size()};
  return spec;
}

inline SubstitutionSpec sample_relation_substitution(const TwoHopInstance& inst, const CandidateTable& table, Rng& rng) {
  auto it = table.find(mention_type(inst));
  require(it != table.end() && !it->second.empty(),
          "sample_relation_substitution: no candidate templates for '" + mention_type(inst) + "'");
  const auto& candidates = it->second;
  const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng);
  const auto rendered = render_mention(candidates[pick], inst.e1);
  const std::string mention = rendered.text.substr(rendered.mention.begin, rendered.mention.end - rendered.mention.begin);
  SubstitutionSpec spec;
  spec.kind = SubstitutionKind::relation;
  spec.replacement = pick;
  spec.replacement_label = candidates[pick];
  spec.prompt = splice(inst.two_hop_prompt, inst.mention, mention);
  spec.mention = {inst.mention.begin, inst.mention.begin + mention.size()};
  return spec;
}

// ---------------------------------------------------------------------------
// Chain-of-thought style variants

struct CotTemplates {
  // label -> template over {mention}, {e2}, {one_hop}, {e3}, {two_hop}; {two_hop} must occur once.
  std::vector<std::pair<std::string, std::string>> variants{
      {"plain", "{two_hop}"},
      {"identity_hint", "{mention} is {e2}. {two_hop}"},
      {"answer_given", "{one_hop} {e3}. {two_hop}"},
      {"both_given", "{mention} is {e2}. {one_hop} {e3}. {two_hop}"},
  };

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [label, tmpl] : variants) j[label] = tmpl;
    return j;
  }
  static CotTemplates from_json(const nlohmann::ordered_json& j) {
    require(j.is_object(), "CoT templates: expected a JSON object");
    CotTemplates t;
    t.variants.clear();
    for (auto it = j.begin(); it != j.end(); ++it) {
      require(it.value().is_string(), "CoT templates: template for '" + it.key() + "' is not a string");
      t.variants.emplace_back(it.key(), it.value().get<std::string>());
    }
    return t;
  }
};

struct LabeledPrompt {
  std::string label;
  std::string text;
  CharSpan mention;  // mention inside the trailing two-hop clause
};

inline std::vector<LabeledPrompt> cot_prompt_variants(const TwoHopInstance& inst, const CotTemplates& templates = {}) {
  if (auto p = instance_problem(inst)) throw InvalidInput("cot_prompt_variants: " + *p);
  const std::map<std::string, std::string> fills{{"{mention}", inst.mention_text()},
                                                 {"{e2}", inst.e2},
                                                 {"{one_hop}", inst.one_hop_prompt},
                                                 {"{e3}", inst.e3}};
  std::vector<LabeledPrompt> out;
  for (const auto& [label, tmpl] : templates.variants) {
    LabeledPrompt lp;
    lp.label = label;
    bool placed = false;
    std::size_t i = 0;
    while (i < tmpl.size()) {
      if (tmpl.compare(i, 9, "{two_hop}") == 0) {
        require(!placed, "cot template '" + label + "' uses {two_hop} twice");
        lp.mention = {lp.text.size() + inst.mention.begin, lp.text.size() + inst.mention.end};
        lp.text += inst.two_hop_prompt;
        placed = true;
        i += 9;
        continue;
      }
      bool filled = false;
      for (const auto& [key, value] : fills) {
        if (tmpl.compare(i, key.size(), key) == 0) {
          lp.text += value;
          i += key.size();
          filled = true;
          break;
        }
      }
      if (!filled) lp.text += tmpl[i++];
    }
    require(placed, "cot template '" + label + "' lacks {two_hop}");
    out.push_back(std::move(lp));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct TypeStats {
  std::string type;
  std::size_t count = 0;
  double share_percent = 0.0;            // of all instances
  double majority_bridge_percent = 0.0;  // most frequent e2 within the type
  double majority_answer_percent = 0.0;  // most frequent e3 within the type
};

struct DatasetStats {
  std::size_t total = 0;
  std::vector<TypeStats> types;  // sorted by type name
};

inline DatasetStats dataset_stats(const std::vector<TwoHopInstance>& instances) {
  DatasetStats stats;
  stats.total = instances.size();
  if (instances.empty()) return stats;
  std::map<std::string, std::pair<std::map<std::string, std::size_t>, std::map<std::string, std::size_t>>> by_type;
  for (const auto& inst : instances) {
    auto& [bridges, answers] = by_type[inst.fact_composition_type];
    ++bridges[inst.e2];
    ++answers[inst.e3];
  }
  for (const auto& [type, counts] : by_type) {
    const auto& [bridges, answers] = counts;
    TypeStats t;
    t.type = type;
    for (const auto& [_, c] : bridges) t.count += c;
    std::size_t top_bridge = 0, top_answer = 0;
    for (const auto& [_, c] : bridges) top_bridge = std::max(top_bridge, c);
    for (const auto& [_, c] : answers) top_answer = std::max(top_answer, c);
    t.share_percent = 100.0 * static_cast<double>(t.count) / static_cast<double>(stats.total);
    t.majority_bridge_percent = 100.0 * static_cast<double>(top_bridge) / static_cast<double>(t.count);
    t.majority_answer_percent = 100.0 * static_cast<double>(top_answer) / static_cast<double>(t.count);
    stats.types.push_back(std::move(t));
  }
  return stats;
}

inline nlohmann::ordered_json to_json(const DatasetStats& s) {
  nlohmann::ordered_json j;
  j["total"] = s.total;
  j["types"] = nlohmann::ordered_json::array();
  for (const auto& t : s.types) {
    j["types"].push_back({{"type", t.type},
                          {"count", t.count},
                          {"share_percent", t.share_percent},
                          {"majority_bridge_percent", t.majority_bridge_percent},
                          {"majority_answer_percent", t.majority_answer_percent}});
  }
  return j;
}

// ---------------------------------------------------------------------------
// TwoHopFact-format JSON Lines

inline nlohmann::ordered_json to_json(const TwoHopInstance& inst) {
  nlohmann::ordered_json j;
  j["fact_composition_type"] = inst.fact_composition_type;
  j["e1"] = inst.e1;
  j["r1"] = inst.r1;
  j["e2"] = inst.e2;
  j["r2"] = inst.r2;
  j["e3"] = inst.e3;
  j["two_hop_prompt"] = inst.two_hop_prompt;
  j["mention_start"] = inst.mention.begin;
  j["mention_end"] = inst.mention.end;
  j["one_hop_prompt"] = inst.one_hop_prompt;
  j["answer_aliases"] = inst.answer_aliases;
  return j;
}

inline TwoHopInstance instance_from_json(const nlohmann::json& j) {
  require(j.is_object(), "record is not a JSON object");
  auto str = [&](const char* key) {
    require(j.contains(key), std::string("missing key '") + key + "'");
    require(j[key].is_string(), std::string("key '") + key + "' is not a string");
    return j[key].get<std::string>();
  };
  auto index = [&](const char* key) {
    require(j.contains(key), std::string("missing key '") + key + "'");
    require(j[key].is_number_unsigned() || (j[key].is_number_integer() && j[key].get<long long>() >= 0),
            std::string("key '") + key + "' is not a non-negative integer");
    return j[key].get<std::size_t>();
  };
  TwoHopInstance inst;
  inst.fact_composition_type = str("fact_composition_type");
  inst.e1 = str("e1");
  inst.r1 = str("r1");
  inst.e2 = str("e2");
  inst.r2 = str("r2");
  inst.e3 = str("e3");
  inst.two_hop_prompt = str("two_hop_prompt");
  inst.mention = {index("mention_start"), index("mention_end")};
  inst.one_hop_prompt = str("one_hop_prompt");
  require(j.contains("answer_aliases") && j["answer_aliases"].is_array(), "answer_aliases must be an array");
  for (const auto& a : j["answer_aliases"]) {
    require(a.is_string(), "answer_aliases entries must be strings");
    inst.answer_aliases.push_back(a.get<std::string>());
  }
  return inst;
}

struct RejectedRecord {
  std::size_t line = 0;  // 1-based
  std::string reason;
};

struct LoadResult {
  std::vector<TwoHopInstance> instances;
  std::vector<RejectedRecord> rejects;
};

inline LoadResult parse_twohopfact(std::istream& in) {
  LoadResult out;
  InstanceChecker checker;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto inst = instance_from_json(nlohmann::json::parse(line));
      if (auto problem = checker.admit(inst)) {
        out.rejects.push_back({line_no, *problem});
        continue;
      }
      out.instances.push_back(std::move(inst));
    } catch (const nlohmann::json::exception& e) {
      out.rejects.push_back({line_no, std::string("malformed JSON: ") + e.what()});
    } catch (const InvalidInput& e) {
      out.rejects.push_back({line_no, e.what()});
    }
  }
  return out;
}

inline LoadResult load_twohopfact(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "load_twohopfact: cannot read " + path.string());
  return parse_twohopfact(in);
}

inline std::string serialize_twohopfact(const std::vector<TwoHopInstance>& instances) {
  std::string out;
  for (const auto& inst : instances) out += to_json(inst).dump() + "\n";
  return out;
}

inline void save_twohopfact(const std::filesystem::path& path, const std::vector<TwoHopInstance>& instances) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "save_twohopfact: cannot write " + path.string());
  out << serialize_twohopfact(instances);
}

inline CandidateTable candidate_table_from_json(const nlohmann::json& j) {
  require(j.is_object(), "candidate table: expected a JSON object");
  CandidateTable t;
  for (auto it = j.begin(); it != j.end(); ++it) {
    require(it.value().is_array(), "candidate table: entry '" + it.key() + "' is not an array");
    for (const auto& s : it.value()) {
      require(s.is_string(), "candidate table: templates must be strings");
      t[it.key()].push_back(s.get<std::string>());
    }
  }
  return t;
}

inline nlohmann::ordered_json to_json(const CandidateTable& t) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : t) j[k] = v;
  return j;
}

inline nlohmann::ordered_json to_json(const FactWorld& w) {
  nlohmann::ordered_json j;
  j["entities"] = nlohmann::ordered_json::array();
  for (const auto& e : w.entities) j["entities"].push_back({{"id", e.id}, {"name", e.name}, {"category", e.category}});
  j["relations"] = nlohmann::ordered_json::array();
  for (const auto& r : w.relations) {
    j["relations"].push_back({{"id", r.id},
                              {"name", r.name},
                              {"domain", r.domain},
                              {"range", r.range},
                              {"mention_template", r.mention_template},
                              {"prompt_template", r.prompt_template}});
  }
  j["facts"] = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < w.facts.size(); ++r)
    for (auto [s, o] : w.facts[r]) j["facts"].push_back({r, s, o});
  return j;
}

inline FactWorld world_from_json(const nlohmann::json& j) {
  FactWorld w;
  try {
    for (const auto& e : j.at("entities"))
      w.entities.push_back({e.at("id").get<EntityId>(), e.at("name").get<std::string>(), e.at("category").get<std::string>()});
    for (const auto& r : j.at("relations")) {
      w.relations.push_back({r.at("id").get<RelationId>(), r.at("name").get<std::string>(),
                             r.at("domain").get<std::string>(), r.at("range").get<std::string>(),
                             r.at("mention_template").get<std::string>(), r.at("prompt_template").get<std::string>()});
    }
    w.facts.resize(w.relations.size());
    for (const auto& f : j.at("facts")) {
      const auto r = f.at(0).get<std::size_t>();
      require(r < w.facts.size(), "world: fact relation out of range");
      require(w.facts[r].emplace(f.at(1).get<EntityId>(), f.at(2).get<EntityId>()).second, "world: relation not functional");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("world: malformed JSON: ") + e.what());
  }
  try {
    w.validate();
  } catch (const InvariantViolation& e) {
    throw InvalidInput(e.what());
  }
  return w;
}

// ---------------------------------------------------------------------------
// Synthetic world generation

struct WorldKnobs {
  std::size_t types = 4;                        // fact composition types, taken in catalog order
  std::size_t instances_per_type = 25;
  std::size_t entities_per_category = 0;        // 0: instances_per_type plus headroom
  std::vector<double> name_length_weights{1.0}; // weight of 1-, 2-, 3-token names
  std::size_t distractors_per_type = 3;
  std::uint64_t seed = 0;

  nlohmann::ordered_json to_json() const {
    return {{"types", types},
            {"instances_per_type", instances_per_type},
            {"entities_per_category", entities_per_category},
            {"name_length_weights", name_length_weights},
            {"distractors_per_type", distractors_per_type},
            {"seed", seed}};
  }
};

struct GeneratedWorld {
  FactWorld world;
  std::vector<TwoHopInstance> instances;
  CandidateTable candidates;
};

namespace catalog {

struct RelationSpec {
  const char* name;
  const char* domain;
  const char* range;
};

inline const std::vector<RelationSpec>& relations() {
  static const std::vector<RelationSpec> kRelations{
      {"singer", "song", "person"},        {"mother", "person", "person"},       {"father", "person", "person"},
      {"spouse", "person", "person"},      {"birthplace", "person", "city"},     {"employer", "person", "company"},
      {"school", "person", "university"},  {"country", "city", "country"},       {"mayor", "city", "person"},
      {"capital", "country", "city"},      {"president", "country", "person"},   {"anthem", "country", "song"},
      {"ceo", "company", "person"},        {"headquarters", "company", "city"},  {"founder", "university", "person"},
      {"author", "novel", "person"},       {"director", "film", "person"},
  };
  return kRelations;
}

// (first relation, second relation); the first relation's domain never equals the second's.
inline const std::vector<std::pair<const char*, const char*>>& compositions() {
  static const std::vector<std::pair<const char*, const char*>> kCompositions{
      {"singer", "mother"},         {"birthplace", "country"}, {"country", "president"},  {"employer", "ceo"},
      {"school", "founder"},        {"country", "capital"},    {"author", "birthplace"},  {"country", "anthem"},
      {"employer", "headquarters"}, {"director", "spouse"},    {"headquarters", "mayor"}, {"president", "father"},
      {"singer", "employer"},       {"headquarters", "country"}, {"anthem", "singer"},    {"founder", "mother"},
  };
  return kCompositions;
}

inline const std::vector<const char*>& distractor_words() {
  static const std::vector<const char*> kWords{"rival", "critic", "fan", "neighbor", "cousin", "imitator", "student", "admirer"};
  return kWords;
}

inline const RelationSpec& relation(std::string_view name) {
  for (const auto& r : relations())
    if (r.name == name) return r;
  throw InvariantViolation("catalog: unknown relation " + std::string(name));
}

}  // namespace catalog

namespace detail {

inline std::string make_name_word(Rng& rng) {
  static constexpr std::string_view kOnsets = "bdfgklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  std::uniform_int_distribution<std::size_t> syllables(2, 3), onset(0, kOnsets.size() - 1), vowel(0, kVowels.size() - 1);
  std::string w;
  const auto n = syllables(rng);
  for (std::size_t i = 0; i < n; ++i) {
    w += kOnsets[onset(rng)];
    w += kVowels[vowel(rng)];
  }
  w[0] = static_cast<char>(w[0] - 'a' + 'A');
  return w;
}

}  // namespace detail

inline GeneratedWorld generate_world(const WorldKnobs& knobs) {
  const auto& compositions = catalog::compositions();
  require(knobs.types >= 1 && knobs.types <= compositions.size(),
          "generate_world: types must be in [1, " + std::to_string(compositions.size()) + "]");
  require(knobs.instances_per_type >= 2, "generate_world: need at least 2 instances per type");
  require(!knobs.name_length_weights.empty() && knobs.name_length_weights.size() <= 3,
          "generate_world: name_length_weights needs 1 to 3 entries");
  double weight_total = 0.0;
  for (double w : knobs.name_length_weights) {
    require(w >= 0.0, "generate_world: negative name length weight");
    weight_total += w;
  }
  require(weight_total > 0.0, "generate_world: name length weights sum to zero");
  const std::size_t per_category = knobs.entities_per_category != 0
                                       ? knobs.entities_per_category
                                       : knobs.instances_per_type + std::max<std::size_t>(2, knobs.instances_per_type / 4);
  require(per_category >= knobs.instances_per_type,
          "generate_world: " + std::to_string(knobs.instances_per_type) + " unique bridges per type need at least that many entities per category, got " +
              std::to_string(per_category));
  require(knobs.distractors_per_type <= catalog::distractor_words().size(), "generate_world: too many distractors per type");

  Rng rng(knobs.seed);
  GeneratedWorld out;
  FactWorld& world = out.world;

  // Relations and categories used by the selected types, in first-use order.
  std::vector<std::string> categories;
  auto note_category = [&](const std::string& c) {
    if (std::find(categories.begin(), categories.end(), c) == categories.end()) categories.push_back(c);
  };
  auto add_relation = [&](const char* name) -> RelationId {
    if (auto id = world.find_relation(name)) return *id;
    const auto& spec = catalog::relation(name);
    Relation r;
    r.id = static_cast<RelationId>(world.relations.size());
    r.name = spec.name;
    r.domain = spec.domain;
    r.range = spec.range;
    r.mention_template = "[the " + r.name + " of {}]";
    r.prompt_template = "The " + r.name + " of {} is";
    note_category(r.domain);
    note_category(r.range);
    world.relations.push_back(r);
    return r.id;
  };
  std::vector<std::pair<RelationId, RelationId>> types;
  for (std::size_t t = 0; t < knobs.types; ++t) {
    const RelationId r1 = add_relation(compositions[t].first);
    const RelationId r2 = add_relation(compositions[t].second);
    types.emplace_back(r1, r2);
  }

  // Entities: names are fresh capitalized words, so every name and every first token is unique.
  std::set<std::string> used_words;
  std::discrete_distribution<std::size_t> length_dist(knobs.name_length_weights.begin(), knobs.name_length_weights.end());
  std::map<std::string, std::vector<EntityId>> members;
  for (const auto& category : categories) {
    for (std::size_t i = 0; i < per_category; ++i) {
      const std::size_t words = length_dist(rng) + 1;
      std::string name;
      for (std::size_t k = 0; k < words; ++k) {
        std::string w;
        do {
          w = detail::make_name_word(rng);
        } while (!used_words.insert(w).second);
        if (k) name += ' ';
        name += w;
      }
      const auto id = static_cast<EntityId>(world.entities.size());
      world.entities.push_back({id, name, category});
      members[category].push_back(id);
    }
  }

  // Facts: each relation is a near-injective map from its domain onto a shuffled range.
  world.facts.resize(world.relations.size());
  for (const auto& r : world.relations) {
    const auto& subjects = members[r.domain];
    auto objects = members[r.range];
    std::shuffle(objects.begin(), objects.end(), rng);
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      EntityId o = objects[i % objects.size()];
      if (o == subjects[i]) {
        o = objects[(i + 1) % objects.size()];
        ensure(o != subjects[i], "generate_world: cannot avoid self-reference");
      }
      world.facts[r.id][subjects[i]] = o;
    }
  }

  // Instances: one e1 per bridge, bridges unique within a type.
  for (std::size_t t = 0; t < types.size(); ++t) {
    const auto [r1, r2] = types[t];
    const auto& rel1 = world.relations[r1];
    const auto& rel2 = world.relations[r2];
    std::vector<EntityId> subjects = members[rel1.domain];
    std::shuffle(subjects.begin(), subjects.end(), rng);
    std::vector<std::pair<EntityId, EntityId>> chosen;  // (e1, e2)
    std::set<EntityId> bridges;
    for (EntityId s : subjects) {
      const auto bridge = world.object_of(r1, s);
      if (!bridge || *bridge == s || !world.object_of(r2, *bridge)) continue;
      if (bridges.insert(*bridge).second) chosen.emplace_back(s, *bridge);
    }
    require(chosen.size() >= knobs.instances_per_type,
            "generate_world: type '" + rel2.name + " of " + rel1.domain + "'s " + rel1.name + "' has only " +
                std::to_string(chosen.size()) + " distinct bridges");
    chosen.resize(knobs.instances_per_type);
    const std::string type_name = rel2.name + " of " + rel1.domain + "'s " + rel1.name;
    for (auto [e1, e2] : chosen) {
      const EntityId e3 = *world.object_of(r2, e2);
      TwoHopInstance inst;
      inst.fact_composition_type = type_name;
      inst.e1 = world.entity(e1).name;
      inst.r1 = rel1.name;
      inst.e2 = world.entity(e2).name;
      inst.r2 = rel2.name;
      inst.e3 = world.entity(e3).name;
      const auto mention = render_mention(rel1.mention_template, inst.e1);
      const auto two_hop = render_prompt(rel2.prompt_template, mention.text, mention.mention);
      inst.two_hop_prompt = two_hop.text;
      inst.mention = two_hop.mention;
      inst.one_hop_prompt = render_prompt(rel2.prompt_template, inst.e2).text;
      inst.answer_aliases = {inst.e3};
      out.instances.push_back(std::move(inst));
    }
    auto& distractors = out.candidates[rel1.domain + "'s " + rel1.name];
    if (distractors.empty()) {
      const auto& words = catalog::distractor_words();
      for (std::size_t k = 0; k < knobs.distractors_per_type; ++k)
        distractors.push_back(std::string("[a ") + words[(t + k) % words.size()] + " of {}]");
    }
  }

  world.validate();
  const auto problems = check_instances(out.instances);
  ensure(problems.empty(), "generate_world: " + (problems.empty() ? std::string() : problems.front()));
  return out;
}

// Every string a model over this data has to tokenize.
inline std::vector<std::string> world_corpus(const GeneratedWorld& g, const CotTemplates& cot = {}) {
  std::vector<std::string> corpus;
  for (const auto& e : g.world.entities) corpus.push_back(e.name);
  for (const auto& r : g.world.relations) {
    corpus.push_back(render_mention(r.mention_template, "").text);
    corpus.push_back(render_prompt(r.prompt_template, "").text);
  }
  for (const auto& [_, templates] : g.candidates)
    for (const auto& t : templates) corpus.push_back(render_mention(t, "").text);
  for (const auto& [_, t] : cot.variants) corpus.push_back(t);
  corpus.push_back(",");  // appositive prompts end with a comma
  for (const auto& inst : g.instances) {
    corpus.push_back(inst.two_hop_prompt);
    corpus.push_back(inst.one_hop_prompt);
  }
  return corpus;
}

}  // namespace twohop
