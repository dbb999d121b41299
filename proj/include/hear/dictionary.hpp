// Global electrode dictionary: canonical electrode sites with channel
// type and 3D head-frame coordinates, plus resolution of raw recording
// channel names into layout mappings. The dictionary is immutable after
// load and safe to share across threads.
#pragma once

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hear/errors.hpp"
#include "hear/io.hpp"

namespace hear {

enum class ChannelType { EEG, EOG, EMG, ECG, OTHER };

inline const char* to_string(ChannelType t) {
  switch (t) {
    case ChannelType::EEG: return "EEG";
    case ChannelType::EOG: return "EOG";
    case ChannelType::EMG: return "EMG";
    case ChannelType::ECG: return "ECG";
    case ChannelType::OTHER: return "OTHER";
  }
  return "OTHER";
}

struct ElectrodeEntry {
  std::string name;
  std::string system;
  ChannelType channel_type = ChannelType::EEG;
  std::array<double, 3> position{};
};

namespace detail {

inline std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

inline bool is_modality_token(const std::string& up) {
  return up == "EEG" || up == "EOG" || up == "EMG" || up == "ECG";
}

// Leading modality token of a raw channel name ("EEG Fp1", "EOG:ch01"),
// if present with a space or colon separator and a non-empty remainder.
inline bool split_modality_prefix(const std::string& trimmed,
                                  std::string& token_out,
                                  std::string& rest_out) {
  std::size_t sep = trimmed.find_first_of(" :");
  if (sep == std::string::npos) return false;
  std::string token = upper(trimmed.substr(0, sep));
  if (!is_modality_token(token)) return false;
  std::string rest = trim(trimmed.substr(sep + 1));
  if (rest.empty()) return false;
  token_out = token;
  rest_out = rest;
  return true;
}

}  // namespace detail

// Normalized lookup key for a raw channel name: trim, strip one leading
// modality prefix token ("EEG " / "EEG:"), strip a trailing "-REF"/"-LE"
// reference suffix, strip trailing dot padding, fold case.
inline std::string normalize_channel_name(const std::string& raw) {
  std::string s = detail::trim(raw);
  std::string token, rest;
  if (detail::split_modality_prefix(s, token, rest)) s = rest;
  std::string up = detail::upper(s);
  if (up.size() > 4 && up.compare(up.size() - 4, 4, "-REF") == 0) {
    s = s.substr(0, s.size() - 4);
  } else if (up.size() > 3 && up.compare(up.size() - 3, 3, "-LE") == 0) {
    s = s.substr(0, s.size() - 3);
  }
  while (!s.empty() && s.back() == '.') s.pop_back();
  return detail::upper(detail::trim(s));
}

// Modality implied by a raw name's leading prefix token (or by the whole
// name being a bare modality keyword). Names without such a token are
// treated as EEG candidates and settled by dictionary type.
inline ChannelType raw_name_modality(const std::string& raw) {
  std::string s = detail::trim(raw);
  std::string token, rest;
  if (!detail::split_modality_prefix(s, token, rest)) {
    token = detail::upper(s);
    if (!detail::is_modality_token(token)) return ChannelType::EEG;
  }
  if (token == "EOG") return ChannelType::EOG;
  if (token == "EMG") return ChannelType::EMG;
  if (token == "ECG") return ChannelType::ECG;
  return ChannelType::EEG;
}

class GlobalDictionary {
public:
  void add(ElectrodeEntry entry) {
    if (entry.name.empty()) throw ParseError("empty electrode name");
    for (double c : entry.position) {
      if (!std::isfinite(c) || std::abs(c) >= 0.5) {
        throw ParseError("implausible coordinate for " + entry.name);
      }
    }
    std::string key = normalize_channel_name(entry.name);
    if (key.empty()) throw ParseError("name normalizes to empty: " + entry.name);
    auto [it, inserted] = name_index_.emplace(key, entries_.size());
    if (!inserted) throw DuplicateName(entry.name);
    entries_.push_back(std::move(entry));
  }

  std::size_t size() const { return entries_.size(); }
  const ElectrodeEntry& entry(std::size_t i) const { return entries_[i]; }
  const std::vector<ElectrodeEntry>& entries() const { return entries_; }

  // NotFound is the nullptr sentinel; lookup never throws.
  const ElectrodeEntry* lookup(const std::string& raw_name) const {
    auto it = name_index_.find(normalize_channel_name(raw_name));
    return it == name_index_.end() ? nullptr : &entries_[it->second];
  }

  bool lookup_index(const std::string& raw_name, std::size_t& out) const {
    auto it = name_index_.find(normalize_channel_name(raw_name));
    if (it == name_index_.end()) return false;
    out = it->second;
    return true;
  }

private:
  std::vector<ElectrodeEntry> entries_;
  std::unordered_map<std::string, std::size_t> name_index_;
};

inline ChannelType parse_channel_type(const std::string& s,
                                      std::size_t line_no) {
  std::string up = detail::upper(detail::trim(s));
  if (up == "EEG") return ChannelType::EEG;
  if (up == "EOG") return ChannelType::EOG;
  if (up == "EMG") return ChannelType::EMG;
  if (up == "ECG") return ChannelType::ECG;
  if (up == "OTHER") return ChannelType::OTHER;
  throw ParseError("unknown channel type '" + s + "'", line_no);
}

namespace detail {

inline double parse_coordinate(const std::string& field, std::size_t line_no) {
  std::string t = trim(field);
  if (t.empty()) throw ParseError("empty coordinate field", line_no);
  const char* begin = t.data();
  const char* end = begin + t.size();
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw ParseError("bad coordinate '" + t + "'", line_no);
  }
  if (!std::isfinite(value)) {
    throw ParseError("non-finite coordinate '" + t + "'", line_no);
  }
  return value;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace detail

inline GlobalDictionary load_dictionary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dictionary file: " + path);
  GlobalDictionary dict;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> fields = detail::split_csv(t);
    if (fields.size() != 6) {
      throw ParseError("expected 6 comma-separated fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    ElectrodeEntry entry;
    entry.name = detail::trim(fields[0]);
    entry.system = detail::trim(fields[1]);
    entry.channel_type = parse_channel_type(fields[2], line_no);
    for (int i = 0; i < 3; ++i) {
      entry.position[i] = detail::parse_coordinate(fields[3 + i], line_no);
    }
    if (entry.name.empty()) throw ParseError("empty name field", line_no);
    for (double c : entry.position) {
      if (std::abs(c) >= 0.5) {
        throw ParseError("coordinate outside head scale", line_no);
      }
    }
    try {
      dict.add(std::move(entry));
    } catch (const DuplicateName& e) {
      throw DuplicateName(e.name(), line_no);
    } catch (const ParseError& e) {
      throw ParseError(std::string(e.what()), line_no);
    }
  }
  return dict;
}

// Writes an entry coordinate with six significant digits, matching the
// dictionary text format.
inline std::string format_coordinate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline void save_dictionary(const GlobalDictionary& dict,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for write: " + path);
  out << "# name, system, type, x, y, z\n";
  for (const auto& e : dict.entries()) {
    out << e.name << ", " << e.system << ", " << to_string(e.channel_type)
        << ", " << format_coordinate(e.position[0]) << ", "
        << format_coordinate(e.position[1]) << ", "
        << format_coordinate(e.position[2]) << "\n";
  }
}

enum class DropReason { NotInDictionary, NonEEGModality, Duplicate };

inline const char* to_string(DropReason r) {
  switch (r) {
    case DropReason::NotInDictionary: return "NotInDictionary";
    case DropReason::NonEEGModality: return "NonEEGModality";
    case DropReason::Duplicate: return "Duplicate";
  }
  return "NotInDictionary";
}

struct LayoutMapping {
  std::string subset_id;
  std::vector<std::size_t> kept_indices;          // source positions
  std::vector<std::string> kept_names;            // canonical names
  std::vector<std::array<double, 3>> coordinates; // row r = kept channel r
  std::vector<std::pair<std::size_t, DropReason>> dropped;

  std::size_t channel_count() const { return kept_indices.size(); }
};

inline LayoutMapping map_layout(const GlobalDictionary& dict,
                                const std::vector<std::string>& channel_names,
                                std::string subset_id = {}) {
  LayoutMapping mapping;
  mapping.subset_id = std::move(subset_id);
  std::unordered_map<std::string, bool> seen;
  for (std::size_t i = 0; i < channel_names.size(); ++i) {
    const std::string& raw = channel_names[i];
    if (raw_name_modality(raw) != ChannelType::EEG) {
      mapping.dropped.emplace_back(i, DropReason::NonEEGModality);
      continue;
    }
    const ElectrodeEntry* entry = dict.lookup(raw);
    if (entry == nullptr) {
      mapping.dropped.emplace_back(i, DropReason::NotInDictionary);
      continue;
    }
    if (entry->channel_type != ChannelType::EEG) {
      mapping.dropped.emplace_back(i, DropReason::NonEEGModality);
      continue;
    }
    std::string key = normalize_channel_name(raw);
    if (seen.count(key)) {
      mapping.dropped.emplace_back(i, DropReason::Duplicate);
      continue;
    }
    seen.emplace(key, true);
    mapping.kept_indices.push_back(i);
    mapping.kept_names.push_back(entry->name);
    mapping.coordinates.push_back(entry->position);
  }
  if (mapping.kept_indices.empty()) {
    throw EmptyLayout("no channels survive mapping for subset '" +
                      mapping.subset_id + "'");
  }
  return mapping;
}

// Deterministic order-sensitive hash of the canonical kept-name list
// (FNV-1a 64-bit with a separator byte), rendered as 16 hex digits.
inline std::string layout_signature_of_names(
    const std::vector<std::string>& names) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix_byte = [&h](unsigned char b) {
    h ^= b;
    h *= 1099511628211ull;
  };
  for (const std::string& name : names) {
    for (char c : name) mix_byte(static_cast<unsigned char>(c));
    mix_byte(0x1f);
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

inline std::string layout_signature(const LayoutMapping& mapping) {
  return layout_signature_of_names(mapping.kept_names);
}

}  // namespace hear
