#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ppose/error.hpp"

namespace ppose {

inline constexpr const char* kToolVersion = "0.1.0";

// Writes content to a temporary file in the target directory and renames it
// into place, so no consumer ever sees a partial file.
void atomic_write_text(const std::string& path, const std::string& content);
void atomic_write_bytes(const std::string& path, const std::vector<unsigned char>& bytes);

// FNV-1a over the file bytes, hex-encoded.
std::string file_digest(const std::string& path);

// Reproducibility record written next to every CLI output. Timestamps come
// from SOURCE_DATE_EPOCH when set, so reruns can be byte-identical.
struct RunManifest {
    std::string command;
    std::string config_json;  // resolved configuration, serialized
    std::uint64_t seed = 0;
    std::map<std::string, std::string> input_digests;  // path -> digest
    std::string tool_version = kToolVersion;
    std::int64_t started_at = 0;
    std::int64_t finished_at = 0;

    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);
};

// Current UNIX time, overridden by SOURCE_DATE_EPOCH for reproducible runs.
std::int64_t manifest_clock();

}  // namespace ppose
