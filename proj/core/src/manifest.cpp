#include "cascademine/manifest.hpp"

#include "cascademine/coco_io.hpp"
#include "cascademine/types.hpp"

namespace cascademine {

void RunManifest::add_input(const std::filesystem::path& path) {
    input_digests[path.generic_string()] = file_digest(path);
}

nlohmann::json RunManifest::to_json() const {
    return {{"command", command},
            {"config", config},
            {"seed", seed},
            {"input_digests", input_digests},
            {"version", version}};
}

RunManifest RunManifest::from_json(const nlohmann::json& doc) {
    RunManifest m;
    m.command = doc.at("command").get<std::string>();
    m.config = doc.value("config", nlohmann::json::object());
    m.seed = doc.value("seed", std::uint64_t{0});
    m.input_digests =
        doc.value("input_digests", std::map<std::string, std::string>{});
    m.version = doc.value("version", std::string(kVersion));
    return m;
}

void RunManifest::write(const std::filesystem::path& path) const {
    write_text_file(path, to_json().dump(2) + "\n");
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
    return from_json(nlohmann::json::parse(read_text_file(path)));
}

}  // namespace cascademine
