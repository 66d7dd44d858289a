#include "attrgap/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "attrgap/citex.hpp"
#include "attrgap/digest.hpp"
#include "attrgap/log.hpp"

namespace attrgap {

namespace {

constexpr std::array<std::string_view, kTopicCount> kTopicNames = {
    "Computer Science & Software Engineering",
    "Current Affairs & Factual Information",
    "Data Science",
    "Education",
    "Finance & Economics",
    "Games, Fantasy & Creative Writing",
    "History",
    "Lifestyle",
    "Mental & Physical Health & Relationships",
    "Other",
    "Shopping & Commercial Intent",
    "Sports",
};

}  // namespace

std::string_view to_string(Family f) {
  switch (f) {
    case Family::GPT: return "GPT";
    case Family::Gemini: return "Gemini";
    case Family::Sonar: return "Sonar";
  }
  return "?";
}

std::optional<Family> parse_family(std::string_view s) {
  for (Family f : kFamilies) {
    if (to_string(f) == s) return f;
  }
  return std::nullopt;
}

std::string_view to_string(Topic t) { return kTopicNames[static_cast<std::size_t>(t)]; }

std::optional<Topic> parse_topic(std::string_view label) {
  for (std::size_t i = 0; i < kTopicCount; ++i) {
    if (kTopicNames[i] == label) return kTopics[i];
  }
  return std::nullopt;
}

const std::vector<ModelVariant>& known_models() {
  static const std::vector<ModelVariant> models = {
      {"api-gpt-4o-mini-search", Family::GPT},
      {"api-gpt-4o-search", Family::GPT},
      {"api-gpt-4o-search-high", Family::GPT},
      {"api-gpt-4o-search-high-loc", Family::GPT},
      {"ppl-sonar-pro", Family::Sonar},
      {"ppl-sonar-reasoning", Family::Sonar},
      {"ppl-sonar", Family::Sonar},
      {"ppl-sonar-pro-high", Family::Sonar},
      {"ppl-sonar-reasoning-pro-high", Family::Sonar},
      {"gemini-2.0-flash-grounding", Family::Gemini},
      {"gemini-2.5-pro-grounding", Family::Gemini},
  };
  return models;
}

ModelVariant resolve_model(std::string_view id, bool allow_unknown) {
  for (const auto& m : known_models()) {
    if (m.id == id) return m;
  }
  if (!allow_unknown) throw CorpusError("unknown model id: " + std::string(id));
  std::string lower(id);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (std::string_view prefix : {"api-", "ppl-"}) {
    if (lower.starts_with(prefix)) lower.erase(0, prefix.size());
  }
  if (lower.starts_with("gpt")) return {std::string(id), Family::GPT};
  if (lower.starts_with("gemini")) return {std::string(id), Family::Gemini};
  if (lower.starts_with("sonar")) return {std::string(id), Family::Sonar};
  throw CorpusError("cannot infer family for model id: " + std::string(id));
}

std::size_t utf8_length(std::string_view text) {
  std::size_t n = 0;
  for (unsigned char c : text) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

namespace {

const nlohmann::json& require(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw CorpusError(std::string("missing field ") + key);
  return *it;
}

std::vector<std::string> string_list(const nlohmann::json& arr, const char* key) {
  if (!arr.is_array()) throw CorpusError(std::string(key) + " must be an array");
  std::vector<std::string> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_string()) throw CorpusError(std::string(key) + " entries must be strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

ConversationRecord record_from_json(const nlohmann::json& j, const LoadOptions& opts) {
  if (!j.is_object()) throw CorpusError("record is not a JSON object");
  ConversationRecord rec;

  const auto& rid = require(j, "record_id");
  const auto& bid = require(j, "battle_id");
  const auto& model = require(j, "model");
  if (!rid.is_string() || !bid.is_string() || !model.is_string()) {
    throw CorpusError("record_id, battle_id and model must be strings");
  }
  rec.record_id = rid.get<std::string>();
  rec.battle_id = bid.get<std::string>();
  rec.model = resolve_model(model.get<std::string>(), opts.allow_unknown_models);

  const auto& turns = require(j, "turns");
  if (!turns.is_number_integer() || turns.get<long long>() < 1) {
    throw CorpusError("turns must be a positive integer");
  }
  rec.turns = turns.get<int>();

  // Multi-turn answers may arrive as one string per assistant turn.
  const auto& text = require(j, "response_text");
  if (text.is_string()) {
    rec.response_text = text.get<std::string>();
  } else if (text.is_array()) {
    auto parts = string_list(text, "response_text");
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (i) rec.response_text += "\n\n";
      rec.response_text += parts[i];
    }
  } else {
    throw CorpusError("response_text must be a string or array of strings");
  }
  rec.response_char_count = utf8_length(rec.response_text);

  // search_results: flat list, or one list per turn (unioned unless final-turn-only).
  const auto& sr = require(j, "search_results");
  if (!sr.is_array()) throw CorpusError("search_results must be an array");
  bool per_turn = !sr.empty() && std::all_of(sr.begin(), sr.end(),
                                             [](const auto& v) { return v.is_array(); });
  if (per_turn) {
    std::vector<std::vector<std::string>> turn_lists;
    for (const auto& t : sr) turn_lists.push_back(string_list(t, "search_results"));
    if (opts.final_turn_only) {
      rec.search_results = turn_lists.back();
    } else {
      std::unordered_set<std::string> seen;
      for (const auto& list : turn_lists) {
        for (const auto& u : list) {
          if (seen.insert(u).second) rec.search_results.push_back(u);
        }
      }
    }
  } else {
    rec.search_results = string_list(sr, "search_results");
  }

  if (auto it = j.find("topic"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw CorpusError("topic must be a string or null");
    auto label = it->get<std::string>();
    auto topic = parse_topic(label);
    if (!topic) throw CorpusError("unknown topic label: " + label);
    rec.topic = topic;
  }

  const auto& ts = require(j, "timestamp");
  if (!ts.is_string()) throw CorpusError("timestamp must be a string");
  rec.timestamp = ts.get<std::string>();
  return rec;
}

nlohmann::ordered_json record_to_json(const ConversationRecord& rec) {
  nlohmann::ordered_json j;
  j["record_id"] = rec.record_id;
  j["battle_id"] = rec.battle_id;
  j["model"] = rec.model.id;
  j["turns"] = rec.turns;
  j["response_text"] = rec.response_text;
  j["search_results"] = rec.search_results;
  if (rec.topic) {
    j["topic"] = std::string(to_string(*rec.topic));
  } else {
    j["topic"] = nullptr;
  }
  j["timestamp"] = rec.timestamp;
  return j;
}

Dataset parse_records(std::string_view jsonl, const LoadOptions& opts) {
  Dataset ds;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    auto end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    std::string_view line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      ++ds.n_dropped[drop_reason::kMalformed];
      warn("line " + std::to_string(line_no) + ": malformed JSON");
      continue;
    }
    try {
      ds.records.push_back(record_from_json(j, opts));
    } catch (const CorpusError& e) {
      std::string msg = e.what();
      const char* reason = msg.starts_with("unknown model") || msg.starts_with("cannot infer family")
                               ? drop_reason::kUnknownModel
                               : drop_reason::kMalformed;
      ++ds.n_dropped[reason];
      warn("line " + std::to_string(line_no) + ": " + msg);
    } catch (const nlohmann::json::exception& e) {
      ++ds.n_dropped[drop_reason::kMalformed];
      warn("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return ds;
}

Dataset load_records(const std::filesystem::path& path, const LoadOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string content = buf.str();
  Dataset ds = parse_records(content, opts);
  ds.provenance.push_back({path.string(), sha256_hex(content)});
  return ds;
}

void write_records(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (const auto& rec : ds.records) out << record_to_json(rec).dump() << '\n';
}

std::map<std::string, std::string> load_topic_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string content = buf.str();

  std::map<std::string, std::string> out;
  auto whole = nlohmann::json::parse(content, nullptr, false);
  if (!whole.is_discarded() && whole.is_object()) {
    for (auto it = whole.begin(); it != whole.end(); ++it) {
      if (!it.value().is_string()) throw CorpusError("topic for " + it.key() + " is not a string");
      out[it.key()] = it.value().get<std::string>();
    }
    return out;
  }
  std::istringstream lines(content);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line);
    out[j.at("record_id").get<std::string>()] = j.at("topic").get<std::string>();
  }
  return out;
}

Dataset attach_topics(Dataset ds, const std::map<std::string, std::string>& sidecar) {
  for (const auto& [id, label] : sidecar) {
    if (!parse_topic(label)) throw CorpusError("topic label outside the closed set: \"" + label + "\"");
  }
  std::size_t flagged = 0;
  for (auto& rec : ds.records) {
    if (auto it = sidecar.find(rec.record_id); it != sidecar.end()) {
      rec.topic = parse_topic(it->second);
    }
    if (!rec.topic) ++flagged;
  }
  if (flagged) warn(std::to_string(flagged) + " record(s) have no topic label");
  return ds;
}

Pairing pair_battles(const Dataset& ds) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    auto [it, inserted] = members.try_emplace(ds.records[i].battle_id);
    if (inserted) order.push_back(ds.records[i].battle_id);
    it->second.push_back(i);
  }
  Pairing out;
  for (const auto& bid : order) {
    const auto& idx = members[bid];
    if (idx.size() == 2) {
      out.pairs.emplace_back(ds.records[idx[0]], ds.records[idx[1]]);
    } else {
      out.excluded += idx.size();
    }
  }
  return out;
}

Dataset clean(Dataset ds) {
  std::vector<ConversationRecord> kept;
  kept.reserve(ds.records.size());
  for (auto& rec : ds.records) {
    if (!rec.topic) {
      ++ds.n_dropped[drop_reason::kUnclassified];
    } else if (citex::misaligned(rec.response_text, rec.search_results)) {
      ++ds.n_dropped[drop_reason::kMisaligned];
    } else {
      kept.push_back(std::move(rec));
    }
  }
  ds.records = std::move(kept);
  return ds;
}

}  // namespace attrgap
