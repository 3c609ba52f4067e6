// End-to-end checks of the cascademine binary: exit codes, run-directory
// layout, pipeline chaining, and byte-identical re-runs. The tool path comes
// in through CASCADEMINE_TOOL_PATH at compile time.

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "cascademine/coco_io.hpp"
#include "doctest.h"
#include "temp_dir.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_tool(const std::string& args) {
    const std::string cmd = std::string(CASCADEMINE_TOOL_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

json read_json(const fs::path& path) {
    return json::parse(cascademine::read_text_file(path));
}

std::string slurp(const fs::path& path) { return cascademine::read_text_file(path); }

// generate a small world shared by the pipeline cases
std::string generate_world(const TempDir& tmp, const std::string& name, int seed) {
    const fs::path out = tmp.path / name;
    const int rc = run_tool("generate --seed " + std::to_string(seed) +
                            " --classes 8 --images 20 --quality 0.3 --out " + out.string());
    REQUIRE(rc == 0);
    return out.string();
}

}  // namespace

TEST_CASE("help and usage errors") {
    CHECK(run_tool("--help") == 0);
    CHECK(run_tool("generate --help") == 0);
    CHECK(run_tool("") == 2);                                  // subcommand required
    CHECK(run_tool("frobnicate") == 2);                        // unknown subcommand
    CHECK(run_tool("generate") == 2);                          // missing --out
    CHECK(run_tool("generate --bogus-flag 1 --out /tmp/x") == 2);
    CHECK(run_tool("evaluate --metric nope --out /tmp/x") == 2);
}

TEST_CASE("validation and io failures exit 2") {
    TempDir tmp;
    const fs::path out = tmp.path / "r";
    CHECK(run_tool("generate --quality 2.0 --out " + out.string()) == 2);
    CHECK(run_tool("ingest --ann " + (tmp.path / "missing.json").string() + " --out " +
                   out.string()) == 2);
    // malformed config file
    cascademine::write_text_file(tmp.path / "broken.json", "{not json");
    CHECK(run_tool("generate --config " + (tmp.path / "broken.json").string() + " --out " +
                   out.string()) == 2);
    // manifest replay guards the command name
    cascademine::write_text_file(tmp.path / "other.json",
                                 R"({"command":"erase","config":{},"seed":0,"version":"x"})");
    CHECK(run_tool("generate --config " + (tmp.path / "other.json").string() + " --out " +
                   out.string()) == 2);
}

TEST_CASE("generate lays out a complete run directory") {
    TempDir tmp;
    const fs::path out = tmp.path / "g";
    REQUIRE(run_tool("generate --seed 11 --classes 8 --images 20 --out " + out.string()) == 0);
    for (const char* rel : {"manifest.json", "data/labeled.json", "data/unlabeled.json",
                            "data/unlabeled_audit.json", "data/detections_labeled.json",
                            "data/detections_unlabeled.json", "reports/generate_summary.json"}) {
        CHECK(fs::exists(out / rel));
    }
    const json manifest = read_json(out / "manifest.json");
    CHECK(manifest.at("command") == "generate");
    CHECK(manifest.at("seed") == 11);
    CHECK(manifest.at("config").at("num_classes") == 8);
    const json summary = read_json(out / "reports/generate_summary.json");
    CHECK(summary.at("categories") == 8);
    CHECK(summary.at("labeled").at("images").get<int>() +
              summary.at("unlabeled").at("images").get<int>() ==
          20);
}

TEST_CASE("mining, gating, and evaluation chain end to end") {
    TempDir tmp;
    const std::string g = generate_world(tmp, "g", 5);

    const fs::path mined = tmp.path / "m";
    REQUIRE(run_tool("mine-thresholds --detections " + g + "/data/detections_labeled.json" +
                     " --ann " + g + "/data/labeled.json --min-samples 4 --out " +
                     mined.string()) == 0);
    CHECK(fs::exists(mined / "data/threshold_store.json"));
    const std::string csv = slurp(mined / "reports/thresholds.csv");
    CHECK(csv.rfind("class_index,category_id,count,mean,sigma,tau_1,tau_2,tau_3", 0) == 0);

    const fs::path gated = tmp.path / "p";
    REQUIRE(run_tool("pseudo-label --detections " + g + "/data/detections_unlabeled.json" +
                     " --ann " + g + "/data/unlabeled.json --store " +
                     (mined / "data/threshold_store.json").string() + " --out " +
                     gated.string()) == 0);
    const json gating = read_json(gated / "reports/gating_summary.json");
    const std::vector<std::size_t> retained = gating.at("retained_per_stage");
    REQUIRE(retained.size() == 3);
    CHECK(retained[0] >= retained[1]);
    CHECK(retained[1] >= retained[2]);
    CHECK(gating.at("targets").get<std::size_t>() > 0);

    SUBCASE("store and fixed thresholds are mutually exclusive") {
        CHECK(run_tool("pseudo-label --detections " + g + "/data/detections_unlabeled.json" +
                       " --ann " + g + "/data/unlabeled.json --out " +
                       (tmp.path / "x").string()) == 2);
    }

    SUBCASE("fixed-ap evaluation against the audit file") {
        const fs::path ev = tmp.path / "e";
        REQUIRE(run_tool("evaluate --metric fixed-ap --detections " + g +
                         "/data/detections_unlabeled.json --ann " + g +
                         "/data/unlabeled_audit.json --out " + ev.string()) == 0);
        const json report = read_json(ev / "reports/eval.json");
        const double ap = report.at("ap_overall");
        CHECK(ap >= 0.0);
        CHECK(ap <= 1.0);
        CHECK(fs::exists(ev / "reports/per_class.csv"));
    }

    SUBCASE("pseudo-label accuracy audit") {
        const fs::path pa = tmp.path / "pa";
        REQUIRE(run_tool("evaluate --metric pseudo-acc --detections " + g +
                         "/data/detections_unlabeled.json --hidden " + g +
                         "/data/unlabeled_audit.json --stages 3 --out " + pa.string()) == 0);
        const json report = read_json(pa / "reports/eval.json");
        CHECK(report.at("accuracy").contains("ensemble"));
        CHECK(report.at("accuracy").contains("stage_1"));
    }

    SUBCASE("run summary flags unchanged inputs") {
        const fs::path rep = tmp.path / "rep";
        REQUIRE(run_tool("report --run " + gated.string() + " --out " + rep.string()) == 0);
        const std::string md = slurp(rep / "reports/summary.md");
        CHECK(md.find("pseudo-label") != std::string::npos);
        CHECK(md.find("unchanged") != std::string::npos);
        CHECK(md.find("CHANGED") == std::string::npos);
    }
}

TEST_CASE("erasure and recovery round trip through files") {
    TempDir tmp;
    const std::string g = generate_world(tmp, "g", 6);

    const fs::path erased = tmp.path / "er";
    REQUIRE(run_tool("erase --ann " + g + "/data/labeled.json --ratio 0.4 --seed 2 --out " +
                     erased.string()) == 0);
    const json report = read_json(erased / "reports/erasure.json");
    CHECK(report.at("ratio") == 0.4);
    CHECK(report.at("erased_annotations").get<std::size_t>() > 0);

    // pseudo-label the labeled-split records, then score recovery of the
    // erased annotations
    const fs::path gated = tmp.path / "pl";
    REQUIRE(run_tool("pseudo-label --detections " + g + "/data/detections_labeled.json" +
                     " --ann " + g + "/data/labeled.json --fixed 0.3,0.4,0.5 --out " +
                     gated.string()) == 0);
    const fs::path rec = tmp.path / "rec";
    REQUIRE(run_tool("evaluate --metric recovery --pseudo " +
                     (gated / "data/pseudo_labels.json").string() + " --erased " +
                     (erased / "data/erased.json").string() + " --stages 3 --out " +
                     rec.string()) == 0);
    const double score = read_json(rec / "reports/eval.json").at("recovery_score");
    CHECK(score >= 0.0);
    CHECK(score <= 1.0);
}

TEST_CASE("train-toy writes logs, model, and summary") {
    TempDir tmp;
    const fs::path out = tmp.path / "t";
    REQUIRE(run_tool("train-toy --seed 3 --iters 20 --classes 5 --images 12 --out " +
                     out.string()) == 0);
    CHECK(fs::exists(out / "logs/losses.csv"));
    CHECK(fs::exists(out / "logs/thresholds.csv"));
    CHECK(fs::exists(out / "data/model.json"));
    const json summary = read_json(out / "reports/train_summary.json");
    CHECK(summary.at("iterations_run") == 20);
    CHECK(summary.at("diverged") == false);
    CHECK(summary.at("heldout").contains("overall_accuracy"));
    const std::string losses = slurp(out / "logs/losses.csv");
    CHECK(losses.rfind("iteration,cls_labeled,reg_labeled,cls_unlabeled,reg_unlabeled,total", 0) ==
          0);
}

TEST_CASE("ablate renders the four-row grid") {
    TempDir tmp;
    const json config = {
        {"world",
         {{"num_classes", 5}, {"num_images", 12}, {"heldout_images", 6}, {"objects_per_image", 3.0}}},
        {"train",
         {{"total_iters", 12}, {"batch_labeled", 8}, {"batch_unlabeled", 8}}},
        {"seeds", {1, 2}},
    };
    cascademine::write_text_file(tmp.path / "ablation.json", config.dump());
    const fs::path out = tmp.path / "a";
    REQUIRE(run_tool("ablate --config " + (tmp.path / "ablation.json").string() + " --out " +
                     out.string()) == 0);
    const std::string md = slurp(out / "reports/ablation.md");
    for (const char* row : {"baseline", "+CPL", "+APM", "CPL+APM"}) {
        CHECK(md.find(row) != std::string::npos);
    }
    const json table = read_json(out / "reports/ablation.json");
    CHECK(table.at("rows").size() == 4);
}

TEST_CASE("re-runs and manifest replays are byte-identical") {
    TempDir tmp;
    const std::string a = generate_world(tmp, "a", 21);
    const std::string b = generate_world(tmp, "b", 21);
    for (const char* rel : {"data/labeled.json", "data/unlabeled.json",
                            "data/detections_unlabeled.json", "reports/generate_summary.json",
                            "manifest.json"}) {
        CAPTURE(rel);
        CHECK(slurp(fs::path(a) / rel) == slurp(fs::path(b) / rel));
    }

    // replay from the manifest alone; its own manifest differs (it records
    // the source manifest as an input) but every artifact matches
    const fs::path c = tmp.path / "c";
    REQUIRE(run_tool("generate --config " + a + "/manifest.json --out " + c.string()) == 0);
    CHECK(slurp(fs::path(a) / "data/labeled.json") == slurp(c / "data/labeled.json"));
    CHECK(slurp(fs::path(a) / "data/detections_unlabeled.json") ==
          slurp(c / "data/detections_unlabeled.json"));
    CHECK(slurp(fs::path(a) / "reports/generate_summary.json") ==
          slurp(c / "reports/generate_summary.json"));

    // a different seed actually changes the data
    const std::string d = generate_world(tmp, "d", 22);
    CHECK(slurp(fs::path(a) / "data/labeled.json") != slurp(fs::path(d) / "data/labeled.json"));
}
