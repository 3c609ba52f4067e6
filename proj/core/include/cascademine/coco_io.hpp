#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cascademine/types.hpp"

namespace cascademine {

/// Reads a COCO-format annotation file ("images", "annotations",
/// "categories"; bbox as [x, y, width, height]) into a bundle with
/// corner-form boxes, instance counts, and class groups. Annotations are
/// ordered by (image_id, annotation id), images and categories by id.
///
/// Malformed JSON raises nlohmann::json::parse_error (carries the byte
/// offset); a negative width or height raises ValidationError; an annotation
/// naming an unknown category raises ReferentialIntegrityError with the
/// annotation id.
DatasetBundle ingest_coco(const std::filesystem::path& path,
                          GroupScheme scheme = GroupScheme::lvis3);

/// Serializes a bundle back to COCO-format JSON.
nlohmann::json to_coco_json(const DatasetBundle& bundle);
void write_coco(const DatasetBundle& bundle, const std::filesystem::path& path);

/// Projects a full detection record onto the results-file view: category is
/// the foreground argmax, score the max foreground probability.
ResultRecord to_result(const DetectionRecord& record, const CategoryIndex& index);

/// Writes COCO-results-style JSON: an array of {image_id, category_id,
/// bbox [x,y,w,h], score, stage}. With include_probs the full probability
/// vector rides along in a "probs" field.
void export_results(std::span<const DetectionRecord> records,
                    const CategoryIndex& index,
                    const std::filesystem::path& path,
                    bool include_probs = false);
void export_result_records(std::span<const ResultRecord> records,
                           const std::filesystem::path& path);
nlohmann::json results_to_json(std::span<const ResultRecord> records);

/// Reads a results file back. Corner coordinates are reconstructed as
/// x + width / y + height.
std::vector<ResultRecord> ingest_results(const std::filesystem::path& path);

/// Lifts result rows back into full detection records. Every row must carry
/// the "probs" extension (ValidationError otherwise); ensemble auditing
/// additionally needs proposal ids on the rows.
std::vector<DetectionRecord> to_detection_records(std::span<const ResultRecord> records);

/// Shortest round-trip decimal rendering of a double (std::to_chars).
std::string format_double(double value);

/// FNV-1a 64-bit content fingerprint of a file, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace cascademine
