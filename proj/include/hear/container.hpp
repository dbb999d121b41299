// Dataset container: a directory holding a text `manifest`, one binary
// subset file per electrode configuration, and an optional `labels`
// sidecar for supervised tasks.
//
// Manifest line:  subset_id, layout_signature, channel names, rate, count
// Subset file:    "HSUB" v1 header, then row-major float32 frames of
//                 channels x timepoints, one frame per sample.
// Labels line:    sample_id, class
#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hear/errors.hpp"
#include "hear/io.hpp"
#include "hear/tensor.hpp"

namespace hear {

inline constexpr std::uint32_t kSubsetVersion = 1;

struct SubsetInfo {
  std::string subset_id;
  std::string layout_signature;  // 16 lowercase hex digits
  std::vector<std::string> channels;
  double sample_rate = 0.0;
  std::size_t num_samples = 0;
};

struct Manifest {
  std::vector<SubsetInfo> subsets;

  std::size_t total_samples() const {
    std::size_t n = 0;
    for (const auto& s : subsets) n += s.num_samples;
    return n;
  }
};

inline std::string manifest_path(const std::string& dir) {
  return dir + "/manifest";
}

inline std::string subset_path(const std::string& dir,
                               const std::string& subset_id) {
  return dir + "/" + subset_id + ".hsub";
}

inline std::string labels_path(const std::string& dir) {
  return dir + "/labels";
}

namespace detail {

inline std::vector<std::string> split_on_commas(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

inline bool valid_signature(const std::string& s) {
  if (s.size() != 16) return false;
  for (char ch : s) {
    const bool hex = (ch >= '0' && ch <= '9') || (ch >= 'a' && ch <= 'f');
    if (!hex) return false;
  }
  return true;
}

inline bool valid_subset_id(const std::string& s) {
  if (s.empty()) return false;
  for (char ch : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) ||
                    ch == '_' || ch == '-' || ch == '.';
    if (!ok) return false;
  }
  return true;
}

inline double parse_positive_real(const std::string& field, std::size_t line_no,
                                  const char* what) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end != begin + field.size() || field.empty() || !std::isfinite(v) ||
      v <= 0.0) {
    throw ManifestError("manifest line " + std::to_string(line_no) + ": bad " +
                        what + " '" + field + "'");
  }
  return v;
}

inline std::size_t parse_count(const std::string& field, std::size_t line_no,
                               const char* what) {
  if (field.empty()) {
    throw ManifestError("manifest line " + std::to_string(line_no) +
                        ": missing " + what);
  }
  for (char ch : field) {
    if (ch < '0' || ch > '9') {
      throw ManifestError("manifest line " + std::to_string(line_no) +
                          ": bad " + what + " '" + field + "'");
    }
  }
  return static_cast<std::size_t>(std::strtoull(field.c_str(), nullptr, 10));
}

inline std::string format_rate(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", rate);
  return buf;
}

}  // namespace detail

inline Manifest read_manifest(const std::string& dir) {
  const std::string path = manifest_path(dir);
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest: " + path);
  Manifest m;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_on_commas(line);
    if (fields.size() != 5) {
      throw ManifestError("manifest line " + std::to_string(line_no) +
                          ": expected 5 fields, got " +
                          std::to_string(fields.size()));
    }
    SubsetInfo s;
    s.subset_id = fields[0];
    if (!detail::valid_subset_id(s.subset_id)) {
      throw ManifestError("manifest line " + std::to_string(line_no) +
                          ": bad subset id '" + s.subset_id + "'");
    }
    if (!seen_ids.insert(s.subset_id).second) {
      throw ManifestError("manifest line " + std::to_string(line_no) +
                          ": duplicate subset id '" + s.subset_id + "'");
    }
    s.layout_signature = fields[1];
    if (!detail::valid_signature(s.layout_signature)) {
      throw ManifestError("manifest line " + std::to_string(line_no) +
                          ": bad layout signature '" + s.layout_signature +
                          "'");
    }
    std::istringstream names(fields[2]);
    std::string name;
    while (names >> name) s.channels.push_back(name);
    if (s.channels.empty()) {
      throw ManifestError("manifest line " + std::to_string(line_no) +
                          ": empty channel list");
    }
    s.sample_rate =
        detail::parse_positive_real(fields[3], line_no, "sample rate");
    s.num_samples = detail::parse_count(fields[4], line_no, "sample count");
    m.subsets.push_back(std::move(s));
  }
  return m;
}

inline void write_manifest(const std::string& dir, const Manifest& m) {
  const std::string path = manifest_path(dir);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ManifestError("cannot open manifest for writing: " + path);
  for (const auto& s : m.subsets) {
    out << s.subset_id << ", " << s.layout_signature << ", ";
    for (std::size_t i = 0; i < s.channels.size(); ++i) {
      if (i > 0) out << ' ';
      out << s.channels[i];
    }
    out << ", " << detail::format_rate(s.sample_rate) << ", " << s.num_samples
        << "\n";
  }
  if (!out) throw ManifestError("manifest write failed: " + path);
}

// --- subset binary files --------------------------------------------------

struct SubsetHeader {
  std::size_t channels = 0;
  std::size_t samples_per_channel = 0;  // timepoints per channel per sample
  double sample_rate = 0.0;
  std::vector<std::string> channel_names;

  std::size_t frame_size() const { return channels * samples_per_channel; }
};

// `payload` holds whole frames: num_samples x channels x timepoints.
inline void write_subset(const std::string& path, const SubsetHeader& h,
                         const std::vector<float>& payload) {
  if (h.channel_names.size() != h.channels) {
    throw ShapeMismatch("write_subset: channel name count mismatch");
  }
  if (h.frame_size() == 0 || payload.size() % h.frame_size() != 0) {
    throw ShapeMismatch("write_subset: payload is not a whole number of frames");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ManifestError("cannot open subset file for writing: " + path);
  os.write("HSUB", 4);
  detail::put_u32(os, kSubsetVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(h.channels));
  detail::put_u32(os, static_cast<std::uint32_t>(h.samples_per_channel));
  detail::put_f64(os, h.sample_rate);
  for (const auto& name : h.channel_names) detail::put_string(os, name);
  detail::put_f32_block(os, payload.data(), payload.size());
  if (!os) throw ManifestError("subset write failed: " + path);
}

// Streaming reader over one subset file; validates the header and frame
// arithmetic up front. Not safe for concurrent use of one instance.
class SubsetReader {
public:
  explicit SubsetReader(const std::string& path)
      : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw ManifestError("cannot open subset file: " + path_);
    try {
      char magic[4];
      if (!in_.read(magic, 4) || std::string(magic, 4) != "HSUB") {
        throw ManifestError("bad subset magic: " + path_);
      }
      const std::uint32_t version = detail::get_u32(in_);
      if (version != kSubsetVersion) {
        throw ManifestError("unsupported subset version " +
                            std::to_string(version) + ": " + path_);
      }
      header_.channels = detail::get_u32(in_);
      header_.samples_per_channel = detail::get_u32(in_);
      header_.sample_rate = detail::get_f64(in_);
      for (std::size_t i = 0; i < header_.channels; ++i) {
        header_.channel_names.push_back(detail::get_string(in_));
      }
    } catch (const ParseError& e) {
      throw ManifestError("truncated subset header: " + path_);
    }
    data_start_ = in_.tellg();
    in_.seekg(0, std::ios::end);
    const auto file_end = in_.tellg();
    in_.clear();
    const std::size_t payload_bytes =
        static_cast<std::size_t>(file_end - data_start_);
    const std::size_t frame_bytes = header_.frame_size() * 4;
    if (frame_bytes == 0 || payload_bytes % frame_bytes != 0) {
      throw ManifestError("subset payload size mismatch: " + path_);
    }
    num_samples_ = payload_bytes / frame_bytes;
  }

  const SubsetHeader& header() const { return header_; }
  std::size_t num_samples() const { return num_samples_; }

  // Frame `index` as [channels, timepoints].
  Tensor<float> read_sample(std::size_t index) {
    if (index >= num_samples_) {
      throw IndexOutOfRange("subset sample " + std::to_string(index) +
                            " out of range (have " +
                            std::to_string(num_samples_) + "): " + path_);
    }
    const std::size_t frame = header_.frame_size();
    in_.seekg(data_start_ +
              static_cast<std::streamoff>(index * frame * 4));
    Tensor<float> out({header_.channels, header_.samples_per_channel});
    try {
      detail::get_f32_block(in_, out.data(), frame);
    } catch (const ParseError&) {
      throw ManifestError("truncated subset payload: " + path_);
    }
    return out;
  }

private:
  std::string path_;
  std::ifstream in_;
  SubsetHeader header_;
  std::streamoff data_start_ = 0;
  std::size_t num_samples_ = 0;
};

// --- labels sidecar --------------------------------------------------------

// `labels[i]` is the class of global sample id i.
inline void write_labels(const std::string& dir,
                         const std::vector<int>& labels) {
  const std::string path = labels_path(dir);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ManifestError("cannot open labels file for writing: " + path);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out << i << ", " << labels[i] << "\n";
  }
  if (!out) throw ManifestError("labels write failed: " + path);
}

inline std::vector<int> read_labels(const std::string& dir) {
  const std::string path = labels_path(dir);
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open labels file: " + path);
  std::vector<std::pair<std::size_t, int>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_on_commas(line);
    if (fields.size() != 2) {
      throw ManifestError("labels line " + std::to_string(line_no) +
                          ": expected 2 fields");
    }
    const std::size_t id =
        detail::parse_count(fields[0], line_no, "sample id");
    const char* begin = fields[1].c_str();
    char* end = nullptr;
    const long cls = std::strtol(begin, &end, 10);
    if (fields[1].empty() || end != begin + fields[1].size() || cls < 0) {
      throw ManifestError("labels line " + std::to_string(line_no) +
                          ": bad class '" + fields[1] + "'");
    }
    rows.emplace_back(id, static_cast<int>(cls));
  }
  std::vector<int> labels(rows.size(), -1);
  for (const auto& [id, cls] : rows) {
    if (id >= labels.size() || labels[id] != -1) {
      throw ManifestError("labels file is not a dense set of sample ids: " +
                          path);
    }
    labels[id] = cls;
  }
  return labels;
}

}  // namespace hear
