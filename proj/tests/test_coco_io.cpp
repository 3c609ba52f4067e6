#include "cascademine/coco_io.hpp"

#include <cstdio>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace cascademine;
namespace fs = std::filesystem;

namespace {

nlohmann::json small_coco() {
    return {
        {"images",
         {{{"id", 2}, {"width", 640}, {"height", 480}},
          {{"id", 1}, {"width", 640}, {"height", 480}}}},
        {"annotations",
         {{{"id", 10}, {"image_id", 2}, {"category_id", 5}, {"bbox", {10, 20, 30, 40}}},
          {{"id", 11}, {"image_id", 1}, {"category_id", 3}, {"bbox", {0, 0, 5, 5}}},
          {{"id", 12}, {"image_id", 1}, {"category_id", 5}, {"bbox", {1, 1, 2, 2}}}}},
        {"categories",
         {{{"id", 5}, {"name", "cat"}}, {{"id", 3}, {"name", "dog"}}}},
    };
}

fs::path write_json(const TempDir& dir, const std::string& name, const nlohmann::json& doc) {
    const fs::path p = dir.path / name;
    write_text_file(p, doc.dump());
    return p;
}

}  // namespace

TEST_CASE("ingest orders entities and converts boxes to corner form") {
    TempDir dir;
    const DatasetBundle bundle = ingest_coco(write_json(dir, "a.json", small_coco()));
    REQUIRE(bundle.images.size() == 2);
    CHECK(bundle.images[0].id == 1);
    CHECK(bundle.images[1].id == 2);
    REQUIRE(bundle.categories.size() == 2);
    CHECK(bundle.categories[0].id == 3);
    REQUIRE(bundle.annotations.size() == 3);
    // ordered by (image_id, annotation id)
    CHECK(bundle.annotations[0].id == 11);
    CHECK(bundle.annotations[1].id == 12);
    CHECK(bundle.annotations[2].id == 10);
    CHECK(bundle.annotations[2].box == BBox{10, 20, 40, 60});
    // instance counts recomputed: dog 1, cat 2
    CHECK(bundle.categories[0].instance_count == 1);
    CHECK(bundle.categories[1].instance_count == 2);
    CHECK(bundle.categories[0].group == ClassGroup::rare);
}

TEST_CASE("ingest rejects malformed inputs") {
    TempDir dir;
    SUBCASE("negative extent") {
        nlohmann::json doc = small_coco();
        doc["annotations"][0]["bbox"] = {10, 20, -5, 40};
        CHECK_THROWS_AS(ingest_coco(write_json(dir, "bad.json", doc)), ValidationError);
    }
    SUBCASE("unknown category") {
        nlohmann::json doc = small_coco();
        doc["annotations"][0]["category_id"] = 99;
        CHECK_THROWS_AS(ingest_coco(write_json(dir, "bad.json", doc)),
                        ReferentialIntegrityError);
    }
    SUBCASE("unknown image") {
        nlohmann::json doc = small_coco();
        doc["annotations"][0]["image_id"] = 99;
        CHECK_THROWS_AS(ingest_coco(write_json(dir, "bad.json", doc)),
                        ReferentialIntegrityError);
    }
    SUBCASE("duplicate annotation id") {
        nlohmann::json doc = small_coco();
        doc["annotations"][1]["id"] = 10;
        CHECK_THROWS_AS(ingest_coco(write_json(dir, "bad.json", doc)), ValidationError);
    }
    SUBCASE("parse error carries through") {
        const fs::path p = dir.path / "broken.json";
        write_text_file(p, "{not json");
        CHECK_THROWS_AS(ingest_coco(p), nlohmann::json::parse_error);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(ingest_coco(dir.path / "absent.json"), IoError);
    }
}

TEST_CASE("the error message names the offending annotation") {
    TempDir dir;
    nlohmann::json doc = small_coco();
    doc["annotations"][0]["category_id"] = 99;
    try {
        ingest_coco(write_json(dir, "bad.json", doc));
        FAIL("expected ReferentialIntegrityError");
    } catch (const ReferentialIntegrityError& e) {
        CHECK(std::string(e.what()).find("10") != std::string::npos);
    }
}

TEST_CASE("coco round trip preserves the bundle") {
    TempDir dir;
    const DatasetBundle bundle = ingest_coco(write_json(dir, "a.json", small_coco()));
    const fs::path out = dir.path / "out.json";
    write_coco(bundle, out);
    const DatasetBundle back = ingest_coco(out);
    REQUIRE(back.annotations.size() == bundle.annotations.size());
    for (std::size_t i = 0; i < bundle.annotations.size(); ++i) {
        CHECK(back.annotations[i].id == bundle.annotations[i].id);
        CHECK(back.annotations[i].box == bundle.annotations[i].box);
    }
    CHECK(back.images.size() == bundle.images.size());
    CHECK(back.categories.size() == bundle.categories.size());
    // a second write produces identical bytes
    const fs::path out2 = dir.path / "out2.json";
    write_coco(back, out2);
    CHECK(read_text_file(out) == read_text_file(out2));
}

TEST_CASE("detection records project onto result rows") {
    std::vector<Category> cats = {{3, "dog", 0, ClassGroup::rare},
                                  {5, "cat", 0, ClassGroup::rare}};
    const CategoryIndex index(cats);
    DetectionRecord rec;
    rec.image_id = 4;
    rec.stage = 2;
    rec.proposal_id = 44;
    rec.class_probs = {0.2, 0.7, 0.1};
    rec.box = BBox{10, 10, 20, 30};
    const ResultRecord row = to_result(rec, index);
    CHECK(row.image_id == 4);
    CHECK(row.category_id == 5);  // class index 1
    CHECK(row.score == 0.7);
    CHECK(row.stage == 2);
    CHECK(row.proposal_id == 44);
    CHECK(row.box == rec.box);
}

TEST_CASE("results round trip with and without the probs extension") {
    TempDir dir;
    std::vector<Category> cats = {{3, "dog", 0, ClassGroup::rare},
                                  {5, "cat", 0, ClassGroup::rare}};
    const CategoryIndex index(cats);
    std::vector<DetectionRecord> recs;
    DetectionRecord rec;
    rec.image_id = 4;
    rec.stage = 1;
    rec.proposal_id = 44;
    rec.class_probs = {0.25, 0.5, 0.25};
    rec.box = BBox{10, 10, 20, 30};
    recs.push_back(rec);
    rec.stage = 2;
    rec.class_probs = {0.125, 0.75, 0.125};
    recs.push_back(rec);

    SUBCASE("plain rows cannot be lifted back") {
        const fs::path p = dir.path / "plain.json";
        export_results(recs, index, p, false);
        const std::vector<ResultRecord> rows = ingest_results(p);
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].probs.empty());
        CHECK(rows[0].box == rec.box);
        CHECK_THROWS_AS(to_detection_records(rows), ValidationError);
    }
    SUBCASE("probs extension lifts back to full records") {
        const fs::path p = dir.path / "full.json";
        export_results(recs, index, p, true);
        const std::vector<ResultRecord> rows = ingest_results(p);
        REQUIRE(rows.size() == 2);
        const std::vector<DetectionRecord> back = to_detection_records(rows);
        REQUIRE(back.size() == 2);
        CHECK(back[0].class_probs == recs[0].class_probs);
        CHECK(back[1].class_probs == recs[1].class_probs);
        CHECK(back[0].proposal_id == 44);
        CHECK(back[0].box == recs[0].box);
        CHECK(back[0].stage == 1);
        CHECK(back[1].stage == 2);
    }
}

TEST_CASE("format_double renders shortest round-trip decimals") {
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(-1.0) == "-1");
    CHECK(format_double(0.1) == "0.1");
    CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("file digest is the fnv1a fingerprint of the bytes") {
    TempDir dir;
    const fs::path p = dir.path / "x.txt";
    const std::string payload = "cascade";
    write_text_file(p, payload);
    char want[17];
    std::snprintf(want, sizeof(want), "%016llx",
                  static_cast<unsigned long long>(oracle::ref_fnv1a64(payload)));
    CHECK(file_digest(p) == want);
    // empty file: the fnv offset basis
    const fs::path e = dir.path / "e.txt";
    write_text_file(e, "");
    CHECK(file_digest(e) == "cbf29ce484222325");
}
