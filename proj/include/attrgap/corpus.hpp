#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace attrgap {

enum class Family { GPT, Gemini, Sonar };

inline constexpr std::array<Family, 3> kFamilies = {Family::GPT, Family::Gemini, Family::Sonar};

std::string_view to_string(Family f);
std::optional<Family> parse_family(std::string_view s);

// Closed label set; order is the alphabetical order used in published tables.
enum class Topic {
  ComputerScience,
  CurrentAffairs,
  DataScience,
  Education,
  Finance,
  Games,
  History,
  Lifestyle,
  Health,
  Other,
  Shopping,
  Sports,
};

inline constexpr std::size_t kTopicCount = 12;

inline constexpr std::array<Topic, kTopicCount> kTopics = {
    Topic::ComputerScience, Topic::CurrentAffairs, Topic::DataScience, Topic::Education,
    Topic::Finance,         Topic::Games,          Topic::History,     Topic::Lifestyle,
    Topic::Health,          Topic::Other,          Topic::Shopping,    Topic::Sports,
};

inline constexpr Topic kReferenceTopic = Topic::CurrentAffairs;
inline constexpr Family kReferenceFamily = Family::Gemini;

std::string_view to_string(Topic t);
std::optional<Topic> parse_topic(std::string_view label);

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelVariant {
  std::string id;
  Family family = Family::GPT;

  bool operator==(const ModelVariant&) const = default;
};

/// The eleven variants that make up the audited arena.
const std::vector<ModelVariant>& known_models();

/// Looks up a model id. Unknown ids throw unless `allow_unknown`, in which
/// case the family is taken from the id prefix (gpt / gemini / sonar).
ModelVariant resolve_model(std::string_view id, bool allow_unknown = false);

struct ConversationRecord {
  std::string record_id;
  std::string battle_id;
  ModelVariant model;
  int turns = 1;
  std::string response_text;
  std::size_t response_char_count = 0;
  std::vector<std::string> search_results;
  std::optional<Topic> topic;
  std::string timestamp;

  bool operator==(const ConversationRecord&) const = default;
};

/// Number of Unicode code points in a UTF-8 string.
std::size_t utf8_length(std::string_view text);

namespace drop_reason {
inline constexpr const char* kMalformed = "malformed";
inline constexpr const char* kUnknownModel = "unknown_model";
inline constexpr const char* kUnclassified = "unclassified";
inline constexpr const char* kMisaligned = "misaligned";
}  // namespace drop_reason

struct SourceDigest {
  std::string path;
  std::string sha256;
};

struct Dataset {
  std::vector<ConversationRecord> records;
  std::vector<SourceDigest> provenance;
  std::map<std::string, std::size_t> n_dropped;

  std::size_t dropped(const std::string& reason) const {
    auto it = n_dropped.find(reason);
    return it == n_dropped.end() ? 0 : it->second;
  }
};

struct LoadOptions {
  bool allow_unknown_models = false;
  // Keep only the last turn's search results when the log is given per turn.
  bool final_turn_only = false;
};

ConversationRecord record_from_json(const nlohmann::json& j, const LoadOptions& opts = {});
nlohmann::ordered_json record_to_json(const ConversationRecord& rec);

/// Reads one JSON object per line. Blank lines are skipped; malformed lines
/// are counted and reported as warnings. Throws CorpusError when the file
/// cannot be opened.
Dataset load_records(const std::filesystem::path& path, const LoadOptions& opts = {});
Dataset parse_records(std::string_view jsonl, const LoadOptions& opts = {});

void write_records(const std::filesystem::path& path, const Dataset& ds);

/// Reads a topic sidecar: either a JSON object {record_id: label} or JSONL
/// lines {"record_id": ..., "topic": ...}.
std::map<std::string, std::string> load_topic_sidecar(const std::filesystem::path& path);

/// Sidecar labels override inline topics; records with no label anywhere end
/// up with an empty topic and are removed by clean(). Throws CorpusError
/// naming any label outside the closed set.
Dataset attach_topics(Dataset ds, const std::map<std::string, std::string>& sidecar);

struct Pairing {
  std::vector<std::pair<ConversationRecord, ConversationRecord>> pairs;
  std::size_t excluded = 0;
};

/// Groups records by battle_id in first-appearance order. Battles with a
/// member count other than two are excluded and counted.
Pairing pair_battles(const Dataset& ds);

/// Drops unclassified records and records whose numbered citations cannot be
/// aligned with their search log. Idempotent.
Dataset clean(Dataset ds);

}  // namespace attrgap
