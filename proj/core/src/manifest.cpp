#include "ppose/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace ppose {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void atomic_write_impl(const std::string& path, const char* data, std::size_t len) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot open " + tmp.string() + " for writing");
        f.write(data, static_cast<std::streamsize>(len));
        if (!f) throw Error("write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

}  // namespace

void atomic_write_text(const std::string& path, const std::string& content) {
    atomic_write_impl(path, content.data(), content.size());
}

void atomic_write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    atomic_write_impl(path, reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

std::string file_digest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("file_digest: cannot open " + path);
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a offset basis
    char buf[4096];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!f) break;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return std::string(out);
}

std::int64_t manifest_clock() {
    if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) return std::atoll(env);
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

void RunManifest::save(const std::string& path) const {
    json j;
    j["command"] = command;
    j["config"] = json::parse(config_json.empty() ? "{}" : config_json);
    j["seed"] = seed;
    j["input_digests"] = input_digests;
    j["tool_version"] = tool_version;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    atomic_write_text(path, j.dump(2) + "\n");
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw LoadError("manifest: cannot open " + path);
    json j;
    f >> j;
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config_json = j.at("config").dump();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.input_digests = j.at("input_digests").get<std::map<std::string, std::string>>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.started_at = j.at("started_at").get<std::int64_t>();
    m.finished_at = j.at("finished_at").get<std::int64_t>();
    return m;
}

}  // namespace ppose
