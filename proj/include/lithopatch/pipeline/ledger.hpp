#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "lithopatch/binary_io.hpp"
#include "lithopatch/error.hpp"
#include "lithopatch/hashing.hpp"

namespace lithopatch::pipeline {

inline constexpr const char* kLedgerFile = "ledger.json";

/// Run ledger: config snapshot, per-stage records and the SHA-256 of every file
/// under the output directory, keyed by generic relative path.
class Ledger {
 public:
  Ledger() : doc_({{"format", "lithopatch-ledger"}, {"version", 1}, {"config", nullptr},
                   {"stages", nlohmann::json::object()}, {"files", nlohmann::json::object()}}) {}

  static Ledger load_or_create(const std::filesystem::path& out) {
    Ledger l;
    const auto path = out / kLedgerFile;
    if (!std::filesystem::exists(path)) return l;
    try {
      l.doc_ = nlohmann::json::parse(io::read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::MalformedFile, path.string() + ": " + e.what());
    }
    if (l.doc_.value("format", "") != "lithopatch-ledger")
      throw Error(ErrorCode::MalformedFile, path.string() + " is not a lithopatch ledger");
    return l;
  }

  void save(const std::filesystem::path& out) const {
    io::write_text_atomically(out / kLedgerFile, doc_.dump(2) + "\n");
  }

  void set_config(const nlohmann::json& snapshot) { doc_["config"] = snapshot; }

  /// Re-hashes every regular file below `out` except the ledger itself.
  void refresh_files(const std::filesystem::path& out) {
    nlohmann::json files = nlohmann::json::object();
    if (std::filesystem::exists(out))
      for (const auto& entry : std::filesystem::recursive_directory_iterator(out)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(entry.path(), out).generic_string();
        if (rel == kLedgerFile || rel.ends_with(".tmp")) continue;
        files[rel] = sha256_file(entry.path());
      }
    doc_["files"] = files;
  }

  bool has_file(const std::string& rel) const { return doc_["files"].contains(rel); }
  std::string file_hash(const std::string& rel) const { return doc_["files"].value(rel, ""); }

  /// Throws MissingArtifact unless `rel` exists and matches its recorded hash.
  void verify(const std::filesystem::path& out, const std::string& rel) const {
    const auto path = out / rel;
    if (!has_file(rel) || !std::filesystem::exists(path))
      throw Error(ErrorCode::MissingArtifact, rel + " has not been produced; run the upstream command first");
    if (sha256_file(path) != file_hash(rel))
      throw Error(ErrorCode::MissingArtifact, rel + " does not match its ledger hash");
  }

  const nlohmann::json* stage(const std::string& name) const {
    const auto& s = doc_["stages"];
    return s.contains(name) ? &s[name] : nullptr;
  }

  void record_stage(const std::string& name, nlohmann::json record) { doc_["stages"][name] = std::move(record); }

  const nlohmann::json& document() const { return doc_; }

 private:
  nlohmann::json doc_;
};

}  // namespace lithopatch::pipeline
