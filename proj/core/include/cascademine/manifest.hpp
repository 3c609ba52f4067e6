#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "cascademine/types.hpp"

namespace cascademine {

/// Record of one tool invocation: the subcommand, the fully resolved config,
/// the seed, and a content digest per input file. Deliberately free of
/// timestamps and host details so a repeated run writes identical bytes.
struct RunManifest {
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;
    std::map<std::string, std::string> input_digests;  // path -> fnv1a-64 hex
    std::string version = kVersion;

    /// Digests the file and stores it under the given path key.
    void add_input(const std::filesystem::path& path);

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& doc);

    /// Serializes with sorted keys and a trailing newline.
    void write(const std::filesystem::path& path) const;
    static RunManifest load(const std::filesystem::path& path);
};

}  // namespace cascademine
