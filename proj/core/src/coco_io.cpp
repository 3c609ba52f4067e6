#include "cascademine/coco_io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace cascademine {

namespace {

using nlohmann::json;

BBox corner_box_from_xywh(const json& bbox, std::int64_t ann_id) {
    if (!bbox.is_array() || bbox.size() != 4) {
        throw ValidationError("annotation " + std::to_string(ann_id) +
                              ": bbox must be [x, y, width, height]");
    }
    const double x = bbox[0].get<double>();
    const double y = bbox[1].get<double>();
    const double w = bbox[2].get<double>();
    const double h = bbox[3].get<double>();
    if (w < 0.0 || h < 0.0) {
        throw ValidationError("annotation " + std::to_string(ann_id) +
                              ": negative bbox extent (w=" + format_double(w) +
                              ", h=" + format_double(h) + ")");
    }
    return BBox{x, y, x + w, y + h};
}

json xywh_from_corner_box(const BBox& box) {
    return json::array({box.x_min, box.y_min, box.x_max - box.x_min,
                        box.y_max - box.y_min});
}

}  // namespace

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string() + " for reading");
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("short write to " + path.string());
}

std::string file_digest(const std::filesystem::path& path) {
    const std::string bytes = read_text_file(path);
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        hash ^= static_cast<std::uint64_t>(c);
        hash *= 0x100000001b3ULL;
    }
    char buf[17];
    for (int i = 15; i >= 0; --i) {
        buf[i] = "0123456789abcdef"[hash & 0xf];
        hash >>= 4;
    }
    return std::string(buf, 16);
}

DatasetBundle ingest_coco(const std::filesystem::path& path, GroupScheme scheme) {
    const json doc = json::parse(read_text_file(path));
    if (!doc.is_object()) throw ValidationError(path.string() + ": top level must be an object");

    DatasetBundle bundle;
    bundle.split = Split::labeled;

    std::unordered_set<std::int64_t> image_ids;
    for (const json& im : doc.value("images", json::array())) {
        ImageInfo info;
        info.id = im.at("id").get<std::int64_t>();
        info.width = im.value("width", 0);
        info.height = im.value("height", 0);
        if (!image_ids.insert(info.id).second) {
            throw ValidationError("duplicate image id " + std::to_string(info.id));
        }
        bundle.images.push_back(info);
    }

    std::unordered_set<int> category_ids;
    for (const json& cat : doc.value("categories", json::array())) {
        Category c;
        c.id = cat.at("id").get<int>();
        c.name = cat.value("name", "category_" + std::to_string(c.id));
        if (!category_ids.insert(c.id).second) {
            throw ValidationError("duplicate category id " + std::to_string(c.id));
        }
        bundle.categories.push_back(c);
    }

    std::unordered_set<std::int64_t> annotation_ids;
    for (const json& ann : doc.value("annotations", json::array())) {
        Annotation a;
        a.id = ann.at("id").get<std::int64_t>();
        a.image_id = ann.at("image_id").get<std::int64_t>();
        a.category_id = ann.at("category_id").get<int>();
        if (!annotation_ids.insert(a.id).second) {
            throw ValidationError("duplicate annotation id " + std::to_string(a.id));
        }
        if (!category_ids.contains(a.category_id)) {
            throw ReferentialIntegrityError("annotation " + std::to_string(a.id) +
                                            " references unknown category " +
                                            std::to_string(a.category_id));
        }
        if (!image_ids.contains(a.image_id)) {
            throw ReferentialIntegrityError("annotation " + std::to_string(a.id) +
                                            " references unknown image " +
                                            std::to_string(a.image_id));
        }
        a.box = corner_box_from_xywh(ann.at("bbox"), a.id);
        bundle.annotations.push_back(a);
    }

    std::sort(bundle.images.begin(), bundle.images.end(),
              [](const ImageInfo& a, const ImageInfo& b) { return a.id < b.id; });
    std::sort(bundle.categories.begin(), bundle.categories.end(),
              [](const Category& a, const Category& b) { return a.id < b.id; });
    std::sort(bundle.annotations.begin(), bundle.annotations.end(),
              [](const Annotation& a, const Annotation& b) {
                  return std::tie(a.image_id, a.id) < std::tie(b.image_id, b.id);
              });

    return assign_class_groups(std::move(bundle), scheme);
}

nlohmann::json to_coco_json(const DatasetBundle& bundle) {
    json doc;
    doc["images"] = json::array();
    for (const ImageInfo& im : bundle.images) {
        doc["images"].push_back(
            {{"id", im.id}, {"width", im.width}, {"height", im.height}});
    }
    doc["categories"] = json::array();
    for (const Category& cat : bundle.categories) {
        doc["categories"].push_back({{"id", cat.id}, {"name", cat.name}});
    }
    doc["annotations"] = json::array();
    for (const Annotation& ann : bundle.annotations) {
        const BBox& b = ann.box;
        doc["annotations"].push_back({{"id", ann.id},
                                      {"image_id", ann.image_id},
                                      {"category_id", ann.category_id},
                                      {"bbox", xywh_from_corner_box(b)},
                                      {"area", b.area()},
                                      {"iscrowd", 0}});
    }
    return doc;
}

void write_coco(const DatasetBundle& bundle, const std::filesystem::path& path) {
    write_text_file(path, to_coco_json(bundle).dump(2) + "\n");
}

ResultRecord to_result(const DetectionRecord& record, const CategoryIndex& index) {
    ResultRecord out;
    out.image_id = record.image_id;
    out.category_id = index.id_of(argmax_foreground(record.class_probs));
    out.box = record.box;
    out.score = max_foreground(record.class_probs);
    out.stage = record.stage;
    out.proposal_id = record.proposal_id;
    return out;
}

nlohmann::json results_to_json(std::span<const ResultRecord> records) {
    json arr = json::array();
    for (const ResultRecord& r : records) {
        json row = {{"image_id", r.image_id},
                    {"category_id", r.category_id},
                    {"bbox", xywh_from_corner_box(r.box)},
                    {"score", r.score},
                    {"stage", r.stage}};
        if (r.proposal_id >= 0) row["proposal_id"] = r.proposal_id;
        if (!r.probs.empty()) row["probs"] = r.probs;
        arr.push_back(std::move(row));
    }
    return arr;
}

void export_results(std::span<const DetectionRecord> records,
                    const CategoryIndex& index, const std::filesystem::path& path,
                    bool include_probs) {
    std::vector<ResultRecord> rows;
    rows.reserve(records.size());
    for (const DetectionRecord& rec : records) {
        ResultRecord row = to_result(rec, index);
        if (include_probs) row.probs = rec.class_probs;
        rows.push_back(std::move(row));
    }
    export_result_records(rows, path);
}

void export_result_records(std::span<const ResultRecord> records,
                           const std::filesystem::path& path) {
    write_text_file(path, results_to_json(records).dump(2) + "\n");
}

std::vector<ResultRecord> ingest_results(const std::filesystem::path& path) {
    const json doc = json::parse(read_text_file(path));
    if (!doc.is_array()) throw ValidationError(path.string() + ": results file must be an array");
    std::vector<ResultRecord> out;
    out.reserve(doc.size());
    for (const json& row : doc) {
        ResultRecord r;
        r.image_id = row.at("image_id").get<std::int64_t>();
        r.category_id = row.at("category_id").get<int>();
        const json& bbox = row.at("bbox");
        if (!bbox.is_array() || bbox.size() != 4) {
            throw ValidationError("results row: bbox must be [x, y, width, height]");
        }
        const double x = bbox[0].get<double>();
        const double y = bbox[1].get<double>();
        r.box = BBox{x, y, x + bbox[2].get<double>(), y + bbox[3].get<double>()};
        r.score = row.at("score").get<double>();
        r.stage = row.value("stage", 0);
        r.proposal_id = row.value("proposal_id", std::int64_t{-1});
        if (row.contains("probs")) r.probs = row["probs"].get<std::vector<double>>();
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<DetectionRecord> to_detection_records(std::span<const ResultRecord> records) {
    std::vector<DetectionRecord> out;
    out.reserve(records.size());
    for (const ResultRecord& r : records) {
        if (r.probs.empty()) {
            throw ValidationError("results row for image " + std::to_string(r.image_id) +
                                  " lacks the probs extension needed to rebuild records");
        }
        DetectionRecord rec;
        rec.image_id = r.image_id;
        rec.stage = r.stage;
        rec.proposal_id = r.proposal_id;
        rec.class_probs = r.probs;
        rec.box = r.box;
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace cascademine
