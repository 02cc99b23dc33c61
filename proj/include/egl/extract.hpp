#pragma once

// Lexicon tagging of raw behavior text and construction of per-user
// chronological entity sequences.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "egl/core/io.hpp"
#include "egl/core/types.hpp"

namespace egl::extract {

struct Mention {
  EntityId entity;
  std::size_t offset;
  bool operator==(const Mention&) const = default;
};

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Character trie over normalized entity names. Matches are greedy
// longest-first, left to right, non-overlapping, and must start and end on a
// word boundary.
class Tagger {
 public:
  explicit Tagger(const EntityLexicon& lex) {
    nodes_.emplace_back();
    for (const auto& e : lex.entities()) {
      int cur = 0;
      for (char c : e.name) {
        auto it = nodes_[static_cast<std::size_t>(cur)].next.find(c);
        if (it == nodes_[static_cast<std::size_t>(cur)].next.end()) {
          nodes_.emplace_back();
          const int id = static_cast<int>(nodes_.size()) - 1;
          nodes_[static_cast<std::size_t>(cur)].next.emplace(c, id);
          cur = id;
        } else {
          cur = it->second;
        }
      }
      nodes_[static_cast<std::size_t>(cur)].entity = e.id;
    }
  }

  std::vector<Mention> tag(std::string_view raw) const {
    const std::string text = normalize_name(raw);
    std::vector<Mention> out;
    std::size_t i = 0;
    while (i < text.size()) {
      const bool at_start = i == 0 || !is_word_char(text[i - 1]);
      if (!at_start) {
        ++i;
        continue;
      }
      int cur = 0;
      EntityId best = -1;
      std::size_t best_end = 0;
      for (std::size_t j = i; j < text.size(); ++j) {
        const auto& nx = nodes_[static_cast<std::size_t>(cur)].next;
        auto it = nx.find(text[j]);
        if (it == nx.end()) break;
        cur = it->second;
        const auto ent = nodes_[static_cast<std::size_t>(cur)].entity;
        const bool at_end = j + 1 == text.size() || !is_word_char(text[j + 1]);
        if (ent >= 0 && at_end) {
          best = ent;
          best_end = j + 1;
        }
      }
      if (best >= 0) {
        out.push_back({best, i});
        i = best_end;
      } else {
        ++i;
      }
    }
    return out;
  }

 private:
  struct Node {
    std::unordered_map<char, int> next;
    EntityId entity = -1;
  };
  std::vector<Node> nodes_;
};

inline std::vector<Mention> tag_entities(std::string_view text, const EntityLexicon& lex) { return Tagger(lex).tag(text); }

// Keeps logs in [now - window_days, now], orders each user's logs by
// (timestamp, text) and concatenates their tagged entities. Users without any
// tagged entity are omitted; output is sorted by user id.
inline std::vector<UserEntitySequence> build_sequences(std::vector<BehaviorLog> logs, const EntityLexicon& lex,
                                                       int window_days, std::int64_t now) {
  const std::int64_t cutoff = now - static_cast<std::int64_t>(window_days) * 86400;
  std::erase_if(logs, [&](const BehaviorLog& l) { return l.ts < cutoff || l.ts > now; });
  std::sort(logs.begin(), logs.end(), [](const BehaviorLog& a, const BehaviorLog& b) {
    if (a.user_id != b.user_id) return a.user_id < b.user_id;
    if (a.ts != b.ts) return a.ts < b.ts;
    return a.text < b.text;
  });
  const Tagger tagger(lex);
  std::vector<UserEntitySequence> out;
  for (const auto& l : logs) {
    auto mentions = tagger.tag(l.text);
    if (mentions.empty()) continue;
    if (out.empty() || out.back().user_id != l.user_id) out.push_back(UserEntitySequence{l.user_id, {}});
    for (const auto& m : mentions) out.back().events.push_back(Event{l.ts, m.entity});
  }
  return out;
}

inline std::vector<BehaviorLog> parse_logs(std::istream& in) {
  std::vector<BehaviorLog> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    try {
      auto j = nlohmann::json::parse(line);
      BehaviorLog l{j.at("user_id").get<UserId>(), j.at("ts").get<std::int64_t>(), j.at("text").get<std::string>()};
      if (normalize_name(l.text).empty()) throw Error("empty text");
      out.push_back(std::move(l));
    } catch (const std::exception& ex) {
      throw Error("log line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

inline std::vector<BehaviorLog> read_logs(const std::filesystem::path& path) {
  auto in = egl::detail::open_in(path);
  return parse_logs(in);
}

inline void write_logs(const std::vector<BehaviorLog>& logs, const std::filesystem::path& path) {
  auto out = egl::detail::open_out(path);
  for (const auto& l : logs) out << nlohmann::json{{"user_id", l.user_id}, {"ts", l.ts}, {"text", l.text}}.dump() << '\n';
}

}  // namespace egl::extract
