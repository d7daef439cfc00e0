#pragma once

// Shared fixtures for the test binaries: scratch directories, file helpers
// and a builder for scripted-mock reply files.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtpatcher/gateway.hpp"

namespace testsupport {

namespace fs = std::filesystem;
using Json = nlohmann::json;

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<unsigned> counter{0};
        path_ = fs::temp_directory_path() /
                ("mtpatcher_test." + std::to_string(::getpid()) + "." +
                 std::to_string(counter.fetch_add(1)));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    std::string str() const { return path_.string(); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    fs::path path_;
};

inline void write_file(const std::string& path, const std::string& body) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << body;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

/// Accumulates scripted-mock entries and writes them as JSONL. Entry order
/// matters: the mock answers with the first entry whose needles all occur
/// in the prompt.
class ScriptBuilder {
public:
    ScriptBuilder& respond(const std::string& needle, const std::string& response) {
        entries_.push_back(Json{{"match", needle}, {"response", response}});
        return *this;
    }
    ScriptBuilder& respond_all(const std::vector<std::string>& needles,
                               const std::string& response) {
        entries_.push_back(Json{{"match", needles}, {"response", response}});
        return *this;
    }
    ScriptBuilder& respond_exact(const std::string& full_prompt, const std::string& response) {
        entries_.push_back(
            Json{{"match", full_prompt}, {"kind", "exact"}, {"response", response}});
        return *this;
    }
    ScriptBuilder& fail(const std::string& needle, const std::string& mode) {
        entries_.push_back(Json{{"match", needle}, {"fail", mode}});
        return *this;
    }

    void save(const std::string& path) const {
        std::string body;
        for (const auto& e : entries_) body += e.dump() + "\n";
        write_file(path, body);
    }

private:
    std::vector<Json> entries_;
};

inline mtpatcher::gateway::BackendSpec mock_spec(const std::string& script_path,
                                                 const std::string& model = "mock-model") {
    mtpatcher::gateway::BackendSpec spec;
    spec.kind = mtpatcher::gateway::BackendKind::ScriptedMock;
    spec.model = model;
    spec.script_path = script_path;
    return spec;
}

/// Gateway with no disk cache and no retry sleeps, for tests that count
/// backend calls deterministically.
inline mtpatcher::gateway::Gateway fast_gateway(const std::string& cache_dir = "") {
    mtpatcher::gateway::GatewayConfig cfg;
    cfg.cache_dir = cache_dir;
    cfg.retry.max_attempts = 5;
    cfg.retry.base_delay_ms = 0;
    cfg.retry.jitter = false;
    return mtpatcher::gateway::Gateway(cfg);
}

}  // namespace testsupport
