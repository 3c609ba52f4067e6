// cascademine: one binary driving the full pipeline. Every subcommand reads
// an optional JSON config plus flag overrides (flags win), writes all outputs
// under --out, and drops a manifest.json recording the effective config, the
// seed, and content digests of every input it read. Re-running a subcommand
// with the same inputs reproduces every output byte for byte.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cascademine/apm.hpp"
#include "cascademine/coco_io.hpp"
#include "cascademine/cpl.hpp"
#include "cascademine/eval.hpp"
#include "cascademine/manifest.hpp"
#include "cascademine/saod.hpp"
#include "cascademine/synthetic.hpp"
#include "cascademine/toy_trainer.hpp"
#include "cascademine/types.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cascademine;

namespace {

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

struct RunDirs {
    fs::path root;
    fs::path data;
    fs::path logs;
    fs::path reports;
};

RunDirs make_run_dirs(const std::string& out) {
    RunDirs d;
    d.root = out;
    d.data = d.root / "data";
    d.logs = d.root / "logs";
    d.reports = d.root / "reports";
    std::error_code ec;
    fs::create_directories(d.root, ec);
    if (ec) throw IoError("cannot create run directory " + out + ": " + ec.message());
    return d;
}

fs::path ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    return dir;
}

void write_json_file(const fs::path& path, const json& doc) {
    write_text_file(path, doc.dump(2) + "\n");
}

json parse_json_file(const fs::path& path) { return json::parse(read_text_file(path)); }

// Loads a subcommand config. A manifest file (from an earlier run) is
// accepted too: its stored effective config replays the run, provided the
// command matches.
json load_config(const std::string& path, const std::string& command) {
    const json doc = parse_json_file(path);
    if (!doc.is_object()) throw ConfigError("config root must be a JSON object: " + path);
    if (doc.contains("command") && doc.contains("config")) {
        const std::string recorded = doc.at("command").get<std::string>();
        if (recorded != command) {
            throw ConfigError("manifest " + path + " records command '" + recorded +
                              "', cannot replay it as '" + command + "'");
        }
        return doc.at("config");
    }
    return doc;
}

// Flag overrides beat config-file values which beat defaults.
template <typename T>
void set_if(const CLI::Option* opt, T& dst, const T& src) {
    if (opt != nullptr && opt->count() > 0) dst = src;
}

std::vector<DetectionRecord> load_stage_records(const std::string& path) {
    return to_detection_records(ingest_results(path));
}

json group_histogram(const std::vector<Category>& categories) {
    std::map<std::string, int> hist;
    for (const Category& c : categories) ++hist[to_string(c.group)];
    return json(hist);
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateOpts {
    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    int classes = 0;
    double exponent = 0.0;
    int images = 0;
    double labeled_fraction = 0.0;
    int stages = 0;
    double quality = 0.0;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* classes_opt = nullptr;
    CLI::Option* exponent_opt = nullptr;
    CLI::Option* images_opt = nullptr;
    CLI::Option* fraction_opt = nullptr;
    CLI::Option* stages_opt = nullptr;
    CLI::Option* quality_opt = nullptr;
};

int run_generate(const GenerateOpts& o) {
    synthetic::SyntheticConfig cfg;
    double quality = 0.0;
    RunManifest manifest;
    manifest.command = "generate";
    if (!o.config_path.empty()) {
        const json doc = load_config(o.config_path, manifest.command);
        cfg = synthetic::SyntheticConfig::from_json(doc);
        quality = doc.value("detector_quality", 0.0);
        manifest.add_input(o.config_path);
    }
    set_if(o.seed_opt, cfg.seed, o.seed);
    set_if(o.classes_opt, cfg.num_classes, o.classes);
    set_if(o.exponent_opt, cfg.power_law_exponent, o.exponent);
    set_if(o.images_opt, cfg.num_images, o.images);
    set_if(o.fraction_opt, cfg.labeled_fraction, o.labeled_fraction);
    set_if(o.stages_opt, cfg.num_stages, o.stages);
    set_if(o.quality_opt, quality, o.quality);
    cfg.validate();
    if (quality < 0.0 || quality > 1.0) throw ConfigError("detector_quality must lie in [0,1]");

    const RunDirs dirs = make_run_dirs(o.out);
    ensure_dir(dirs.data);
    ensure_dir(dirs.reports);

    const synthetic::GeneratedDataset data = synthetic::generate_dataset(cfg);
    write_coco(data.labeled, dirs.data / "labeled.json");
    write_coco(data.unlabeled, dirs.data / "unlabeled.json");
    // Ground truth of the unlabeled split, exported for audits only; training
    // consumers must stick to unlabeled.json.
    DatasetBundle audit;
    audit.images = data.unlabeled.images;
    audit.annotations = data.hidden.audit();
    audit.categories = data.unlabeled.categories;
    audit.split = Split::unlabeled;
    write_coco(audit, dirs.data / "unlabeled_audit.json");

    const CategoryIndex index(data.labeled.categories);
    const std::vector<DetectionRecord> det_labeled =
        synthetic::simulate_detector(data, Split::labeled, cfg, quality);
    const std::vector<DetectionRecord> det_unlabeled =
        synthetic::simulate_detector(data, Split::unlabeled, cfg, quality);
    export_results(det_labeled, index, dirs.data / "detections_labeled.json", true);
    export_results(det_unlabeled, index, dirs.data / "detections_unlabeled.json", true);

    json summary;
    summary["labeled"] = {{"images", data.labeled.images.size()},
                          {"annotations", data.labeled.annotations.size()}};
    summary["unlabeled"] = {{"images", data.unlabeled.images.size()},
                            {"hidden_annotations", data.hidden.size()}};
    summary["categories"] = data.labeled.categories.size();
    summary["class_groups"] = group_histogram(data.labeled.categories);
    summary["stage_records"] = {{"labeled", det_labeled.size()},
                                {"unlabeled", det_unlabeled.size()}};
    write_json_file(dirs.reports / "generate_summary.json", summary);

    manifest.config = cfg.to_json();
    manifest.config["detector_quality"] = quality;
    manifest.seed = cfg.seed;
    manifest.write(dirs.root / "manifest.json");
    std::cout << "generated " << data.labeled.images.size() << "+"
              << data.unlabeled.images.size() << " images, "
              << data.labeled.categories.size() << " classes -> " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

struct IngestOpts {
    std::string ann;
    std::string out;
    std::string groups = "lvis3";
};

int run_ingest(const IngestOpts& o) {
    const GroupScheme scheme = group_scheme_from_string(o.groups);
    const DatasetBundle bundle = ingest_coco(o.ann, scheme);

    const RunDirs dirs = make_run_dirs(o.out);
    ensure_dir(dirs.data);
    ensure_dir(dirs.reports);
    write_coco(bundle, dirs.data / "normalized.json");

    std::vector<int> zero_count;
    std::string csv = "category_id,name,instances,group\n";
    for (const Category& c : bundle.categories) {
        if (c.instance_count == 0) zero_count.push_back(c.id);
        csv += std::to_string(c.id) + "," + c.name + "," +
               std::to_string(c.instance_count) + "," + to_string(c.group) + "\n";
    }
    write_text_file(dirs.reports / "categories.csv", csv);

    json summary;
    summary["images"] = bundle.images.size();
    summary["annotations"] = bundle.annotations.size();
    summary["categories"] = bundle.categories.size();
    summary["group_scheme"] = to_string(scheme);
    summary["class_groups"] = group_histogram(bundle.categories);
    summary["zero_annotation_categories"] = zero_count;
    write_json_file(dirs.reports / "dataset_summary.json", summary);

    RunManifest manifest;
    manifest.command = "ingest";
    manifest.config = {{"ann", o.ann}, {"groups", o.groups}};
    manifest.add_input(o.ann);
    manifest.write(dirs.root / "manifest.json");
    std::cout << "ingested " << bundle.annotations.size() << " annotations over "
              << bundle.categories.size() << " classes -> " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// mine-thresholds
// ---------------------------------------------------------------------------

struct MineOpts {
    std::string config_path;
    std::string detections;
    std::string ann;
    std::string out;
    std::size_t capacity = 0;
    std::size_t min_samples = 0;
    std::vector<double> epsilons;
    std::vector<double> fallbacks;
    double match_iou = 0.0;
    bool record_max_fg = false;
    CLI::Option* capacity_opt = nullptr;
    CLI::Option* min_samples_opt = nullptr;
    CLI::Option* epsilons_opt = nullptr;
    CLI::Option* fallbacks_opt = nullptr;
    CLI::Option* match_iou_opt = nullptr;
    CLI::Option* max_fg_opt = nullptr;
};

// Re-encodes ensemble teacher targets as detection records so the matcher
// can feed per-class queues from them.
std::vector<DetectionRecord> targets_to_records(const std::vector<cpl::TeacherTarget>& targets) {
    std::vector<DetectionRecord> out;
    out.reserve(targets.size());
    for (const cpl::TeacherTarget& t : targets) {
        DetectionRecord rec;
        rec.image_id = t.image_id;
        rec.proposal_id = t.proposal_id;
        rec.stage = 1;
        rec.class_probs = t.p_t;
        rec.box = t.b_t;
        out.push_back(std::move(rec));
    }
    return out;
}

int run_mine(const MineOpts& o) {
    apm::ApmConfig cfg;
    RunManifest manifest;
    manifest.command = "mine-thresholds";
    if (!o.config_path.empty()) {
        cfg = apm::apm_config_from_json(load_config(o.config_path, manifest.command));
        manifest.add_input(o.config_path);
    }
    set_if(o.capacity_opt, cfg.queue_capacity, o.capacity);
    set_if(o.min_samples_opt, cfg.min_samples, o.min_samples);
    set_if(o.epsilons_opt, cfg.epsilons, o.epsilons);
    set_if(o.fallbacks_opt, cfg.fallback_thresholds, o.fallbacks);
    set_if(o.match_iou_opt, cfg.match_iou, o.match_iou);
    if (o.max_fg_opt != nullptr && o.max_fg_opt->count() > 0) cfg.record_gt_class_prob = false;
    cfg.validate();

    const DatasetBundle labeled = ingest_coco(o.ann);
    const CategoryIndex index(labeled.categories);
    const std::vector<DetectionRecord> records = load_stage_records(o.detections);
    const std::vector<cpl::TeacherTarget> targets =
        cpl::ensemble_batch(records, cfg.num_stages());

    apm::ClassStatsStore store(index.size(), cfg);
    apm::populate_from_labeled(store, targets_to_records(targets), labeled, index);

    const RunDirs dirs = make_run_dirs(o.out);
    ensure_dir(dirs.data);
    ensure_dir(dirs.reports);
    write_json_file(dirs.data / "threshold_store.json", store.to_json());

    std::string csv = "class_index,category_id,count,mean,sigma";
    for (int k = 1; k <= cfg.num_stages(); ++k) csv += ",tau_" + std::to_string(k);
    csv += "\n";
    std::size_t populated = 0;
    for (std::size_t c = 0; c < store.num_classes(); ++c) {
        const apm::ClassStats st = store.stats(static_cast<int>(c));
        if (st.count >= cfg.min_samples) ++populated;
        csv += std::to_string(c) + "," + std::to_string(index.id_of(static_cast<int>(c))) +
               "," + std::to_string(st.count) + "," + format_double(st.mean) + "," +
               format_double(st.sigma);
        for (int k = 1; k <= cfg.num_stages(); ++k) {
            csv += "," + format_double(store.threshold(static_cast<int>(c), k));
        }
        csv += "\n";
    }
    write_text_file(dirs.reports / "thresholds.csv", csv);

    json summary;
    summary["stage_records"] = records.size();
    summary["proposals"] = targets.size();
    summary["classes"] = store.num_classes();
    summary["classes_past_min_samples"] = populated;
    summary["stages"] = cfg.num_stages();
    write_json_file(dirs.reports / "mining_summary.json", summary);

    manifest.config = apm::to_json(cfg);
    manifest.add_input(o.detections);
    manifest.add_input(o.ann);
    manifest.write(dirs.root / "manifest.json");
    std::cout << "mined thresholds for " << store.num_classes() << " classes ("
              << populated << " past min_samples) -> " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// pseudo-label
// ---------------------------------------------------------------------------

struct PseudoOpts {
    std::string detections;
    std::string ann;
    std::string store_path;
    std::string out;
    std::string groups = "lvis3";
    std::vector<double> fixed;
    double nms_iou = 0.5;
    bool no_nms = false;
    bool include_rejected = false;
};

int run_pseudo_label(const PseudoOpts& o) {
    if (o.store_path.empty() == o.fixed.empty()) {
        throw ConfigError("pass exactly one of --store and --fixed");
    }
    const DatasetBundle bundle = ingest_coco(o.ann, group_scheme_from_string(o.groups));
    const CategoryIndex index(bundle.categories);

    RunManifest manifest;
    manifest.command = "pseudo-label";

    apm::ClassStatsStore store;
    if (!o.store_path.empty()) {
        store = apm::ClassStatsStore::from_json(parse_json_file(o.store_path));
        if (store.num_classes() != index.size()) {
            throw ValidationError("threshold store covers " +
                                  std::to_string(store.num_classes()) + " classes, dataset has " +
                                  std::to_string(index.size()));
        }
        manifest.add_input(o.store_path);
    } else {
        // Class-agnostic fixed thresholds ride on an empty store: every class
        // stays below min_samples, so the per-stage fallbacks apply verbatim.
        apm::ApmConfig cfg;
        cfg.epsilons.clear();
        for (std::size_t k = 0; k < o.fixed.size(); ++k) {
            cfg.epsilons.push_back(1.0 + static_cast<double>(k));
        }
        cfg.fallback_thresholds = o.fixed;
        store = apm::ClassStatsStore(index.size(), cfg);
    }

    const std::vector<DetectionRecord> records = load_stage_records(o.detections);
    cpl::GateConfig gate_cfg;
    gate_cfg.nms_before_gating = !o.no_nms;
    gate_cfg.nms_iou = o.nms_iou;
    const cpl::PseudoLabelSet set = cpl::unlabeled_batch(records, store, gate_cfg);

    const RunDirs dirs = make_run_dirs(o.out);
    ensure_dir(dirs.data);
    ensure_dir(dirs.reports);
    write_json_file(dirs.data / "pseudo_labels.json",
                    cpl::pseudo_to_json(set, index, o.include_rejected));

    std::size_t background = 0;
    for (const cpl::PseudoLabel& label : set.labels) {
        if (label.target.background) ++background;
    }
    json summary;
    summary["targets"] = set.labels.size();
    summary["background_targets"] = background;
    summary["retained_per_stage"] = set.retained_counts();
    summary["retained_by_group"] = json(eval::retained_counts_by_group(
        set, bundle, index, group_scheme_from_string(o.groups)));
    summary["nms_before_gating"] = gate_cfg.nms_before_gating;
    summary["nms_iou"] = gate_cfg.nms_iou;
    write_json_file(dirs.reports / "gating_summary.json", summary);

    manifest.config = {{"detections", o.detections},
                       {"ann", o.ann},
                       {"groups", o.groups},
                       {"nms_iou", o.nms_iou},
                       {"nms_before_gating", gate_cfg.nms_before_gating},
                       {"include_rejected", o.include_rejected}};
    if (!o.store_path.empty()) {
        manifest.config["store"] = o.store_path;
    } else {
        manifest.config["fixed_thresholds"] = o.fixed;
    }
    manifest.add_input(o.detections);
    manifest.add_input(o.ann);
    manifest.write(dirs.root / "manifest.json");

    const std::vector<std::size_t> retained = set.retained_counts();
    std::cout << "gated " << set.labels.size() << " targets; retained per stage:";
    for (std::size_t n : retained) std::cout << " " << n;
    std::cout << " -> " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train-toy
// ---------------------------------------------------------------------------

struct TrainOpts {
    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    int iters = 0;
    int burn_in = 0;
    double lambda_u = 0.0;
    std::string teacher;
    bool apm_flag = true;
    int classes = 0;
    int images = 0;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* iters_opt = nullptr;
    CLI::Option* burn_in_opt = nullptr;
    CLI::Option* lambda_opt = nullptr;
    CLI::Option* teacher_opt = nullptr;
    CLI::Option* apm_opt = nullptr;
    CLI::Option* classes_opt = nullptr;
    CLI::Option* images_opt = nullptr;
};

int run_train_toy(const TrainOpts& o) {
    synthetic::SyntheticConfig world_cfg;
    toy::TrainConfig train_cfg;
    RunManifest manifest;
    manifest.command = "train-toy";
    if (!o.config_path.empty()) {
        const json doc = load_config(o.config_path, manifest.command);
        if (doc.contains("world")) world_cfg = synthetic::SyntheticConfig::from_json(doc["world"]);
        if (doc.contains("train")) train_cfg = toy::TrainConfig::from_json(doc["train"]);
        manifest.add_input(o.config_path);
    }
    if (o.seed_opt != nullptr && o.seed_opt->count() > 0) {
        world_cfg.seed = o.seed;
        train_cfg.seed = o.seed;
    }
    set_if(o.iters_opt, train_cfg.total_iters, o.iters);
    set_if(o.burn_in_opt, train_cfg.burn_in_iters, o.burn_in);
    set_if(o.lambda_opt, train_cfg.lambda_u, o.lambda_u);
    if (o.teacher_opt != nullptr && o.teacher_opt->count() > 0) {
        train_cfg.teacher_mode = toy::teacher_mode_from_string(o.teacher);
    }
    set_if(o.apm_opt, train_cfg.apm_on, o.apm_flag);
    set_if(o.classes_opt, world_cfg.num_classes, o.classes);
    set_if(o.images_opt, world_cfg.num_images, o.images);
    world_cfg.validate();

    const synthetic::ToyWorld world = synthetic::generate_toy_world(world_cfg);
    train_cfg.validate(world.num_stages);
    const toy::TrainResult result = toy::train(world, train_cfg);

    const RunDirs dirs = make_run_dirs(o.out);
    ensure_dir(dirs.data);
    ensure_dir(dirs.logs);
    ensure_dir(dirs.reports);
    write_text_file(dirs.logs / "losses.csv", result.log.losses_csv(world.num_stages));
    if (!result.log.thresholds_csv.empty()) {
        write_text_file(dirs.logs / "thresholds.csv", result.log.thresholds_csv);
    }
    write_json_file(dirs.data / "model.json", result.model.to_json());

    const toy::EvalSummary heldout =
        toy::evaluate_toy(result.model, world, world.heldout_proposals);
    json summary;
    summary["iterations_run"] = result.log.rows.size();
    summary["diverged"] = result.diverged;
    if (!result.diagnostic.empty()) summary["diagnostic"] = result.diagnostic;
    if (!result.log.rows.empty()) {
        const toy::IterationRow& last = result.log.rows.back();
        summary["final_total_loss"] = last.loss.total;
        summary["final_retained"] = last.retained;
    }
    summary["heldout"] = heldout.to_json();
    write_json_file(dirs.reports / "train_summary.json", summary);

    manifest.config = {{"world", world_cfg.to_json()}, {"train", train_cfg.to_json()}};
    manifest.seed = train_cfg.seed;
    manifest.write(dirs.root / "manifest.json");
    std::cout << "trained " << result.log.rows.size() << " iterations, heldout accuracy "
              << format_double(heldout.overall_accuracy) << " -> " << o.out << "\n";
    return result.diverged ? 1 : 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOpts {
    std::string metric = "fixed-ap";
    std::string detections;
    std::string ann;
    std::string hidden;
    std::string pseudo;
    std::string erased;
    std::string out;
    std::string groups = "lvis3";
    std::vector<double> iou = {0.5};
    std::vector<double> grid;
    std::size_t cap = 10000;
    int stages = 3;
};

int run_evaluate(const EvaluateOpts& o) {
    const RunDirs dirs = make_run_dirs(o.out);
    ensure_dir(dirs.reports);
    RunManifest manifest;
    manifest.command = "evaluate";
    json config = {{"metric", o.metric}, {"iou", o.iou}};
    json report;

    if (o.metric == "fixed-ap") {
        if (o.detections.empty() || o.ann.empty()) {
            throw ConfigError("fixed-ap needs --detections and --ann");
        }
        const DatasetBundle bundle = ingest_coco(o.ann, group_scheme_from_string(o.groups));
        const std::vector<ResultRecord> detections = ingest_results(o.detections);
        eval::FixedApConfig cfg;
        cfg.cap_per_class = o.cap;
        cfg.iou_thresholds = o.iou;
        cfg.scheme = group_scheme_from_string(o.groups);
        config["cap_per_class"] = o.cap;
        config["groups"] = o.groups;
        eval::EvalReport ap = eval::fixed_ap(detections, bundle, cfg);
        ap.config_echo = config;
        report = ap.to_json();
        write_text_file(dirs.reports / "per_class.csv", ap.per_class_csv());
        manifest.add_input(o.detections);
        manifest.add_input(o.ann);
        std::cout << "fixed-ap overall " << format_double(ap.ap_overall) << " over "
                  << ap.ap_per_class.size() << " classes -> " << o.out << "\n";
    } else if (o.metric == "pr") {
        if (o.detections.empty() || o.ann.empty()) {
            throw ConfigError("pr needs --detections and --ann");
        }
        const DatasetBundle bundle = ingest_coco(o.ann, group_scheme_from_string(o.groups));
        const std::vector<ResultRecord> detections = ingest_results(o.detections);
        std::vector<double> grid = o.grid;
        if (grid.empty()) {
            for (int i = 1; i <= 19; ++i) grid.push_back(0.05 * i);
        }
        config["score_grid"] = grid;
        const std::vector<eval::PrPoint> points =
            eval::pr_curve(detections, bundle.annotations, grid, o.iou.front());
        report["pr_points"] = json::array();
        for (const eval::PrPoint& p : points) {
            report["pr_points"].push_back({{"score_threshold", p.score_threshold},
                                           {"precision", p.precision},
                                           {"recall", p.recall}});
        }
        report["config"] = config;
        write_text_file(dirs.reports / "pr.csv", eval::EvalReport::pr_csv(points));
        manifest.add_input(o.detections);
        manifest.add_input(o.ann);
        std::cout << "pr curve over " << points.size() << " thresholds -> " << o.out << "\n";
    } else if (o.metric == "pseudo-acc") {
        if (o.detections.empty() || o.hidden.empty()) {
            throw ConfigError("pseudo-acc needs --detections and --hidden");
        }
        const DatasetBundle hidden_bundle = ingest_coco(o.hidden);
        const CategoryIndex index(hidden_bundle.categories);
        const std::vector<DetectionRecord> records = load_stage_records(o.detections);
        const HiddenAnnotations hidden(hidden_bundle.annotations);
        const eval::SourceAccuracy acc =
            eval::pseudo_accuracy(records, o.stages, hidden, index, o.iou.front());
        config["stages"] = o.stages;
        report["accuracy"] = json(acc.accuracy);
        report["counts"] = json(acc.counts);
        report["config"] = config;
        manifest.add_input(o.detections);
        manifest.add_input(o.hidden);
        std::cout << "pseudo-label accuracy over " << acc.accuracy.size()
                  << " sources -> " << o.out << "\n";
    } else if (o.metric == "recovery") {
        if (o.pseudo.empty() || o.erased.empty()) {
            throw ConfigError("recovery needs --pseudo and --erased");
        }
        const DatasetBundle erased_bundle = ingest_coco(o.erased);
        const CategoryIndex index(erased_bundle.categories);
        const cpl::PseudoLabelSet set =
            cpl::pseudo_from_json(parse_json_file(o.pseudo), index, o.stages);
        const double score =
            saod::recovery_score(set, erased_bundle.annotations, index, o.iou.front());
        config["stages"] = o.stages;
        report["recovery_score"] = score;
        report["erased_annotations"] = erased_bundle.annotations.size();
        report["pseudo_labels"] = set.labels.size();
        report["config"] = config;
        manifest.add_input(o.pseudo);
        manifest.add_input(o.erased);
        std::cout << "recovered " << format_double(score) << " of erased annotations -> "
                  << o.out << "\n";
    } else {
        throw ConfigError("unknown metric '" + o.metric +
                          "' (expected fixed-ap, pr, pseudo-acc, or recovery)");
    }

    write_json_file(dirs.reports / "eval.json", report);
    manifest.config = config;
    manifest.write(dirs.root / "manifest.json");
    return 0;
}

// ---------------------------------------------------------------------------
// erase
// ---------------------------------------------------------------------------

struct EraseOpts {
    std::string ann;
    std::string out;
    std::string groups = "lvis3";
    double ratio = 0.0;
    std::uint64_t seed = 0;
};

int run_erase(const EraseOpts& o) {
    const GroupScheme scheme = group_scheme_from_string(o.groups);
    const DatasetBundle bundle = ingest_coco(o.ann, scheme);
    const saod::ErasureResult result = saod::erase(bundle, o.ratio, o.seed, scheme);

    const RunDirs dirs = make_run_dirs(o.out);
    ensure_dir(dirs.data);
    ensure_dir(dirs.reports);
    write_coco(result.sparse, dirs.data / "sparse.json");
    // The erased annotations as their own COCO file: the recovery target.
    DatasetBundle erased;
    erased.images = bundle.images;
    erased.annotations = result.erased.audit();
    erased.categories = bundle.categories;
    erased.split = bundle.split;
    write_coco(erased, dirs.data / "erased.json");
    write_json_file(dirs.reports / "erasure.json", result.report.to_json());

    RunManifest manifest;
    manifest.command = "erase";
    manifest.config = {{"ann", o.ann}, {"ratio", o.ratio}, {"groups", o.groups}};
    manifest.seed = o.seed;
    manifest.add_input(o.ann);
    manifest.write(dirs.root / "manifest.json");
    std::cout << "erased " << result.report.erased_annotations << " of "
              << result.report.original_annotations << " annotations -> " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateOpts {
    std::string config_path;
    std::string out;
    std::vector<std::uint64_t> seeds;
    CLI::Option* seeds_opt = nullptr;
};

int run_ablate(const AblateOpts& o) {
    synthetic::SyntheticConfig world_cfg;
    toy::TrainConfig train_cfg;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    RunManifest manifest;
    manifest.command = "ablate";
    if (!o.config_path.empty()) {
        const json doc = load_config(o.config_path, manifest.command);
        if (doc.contains("world")) world_cfg = synthetic::SyntheticConfig::from_json(doc["world"]);
        if (doc.contains("train")) train_cfg = toy::TrainConfig::from_json(doc["train"]);
        if (doc.contains("seeds")) seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
        manifest.add_input(o.config_path);
    }
    if (o.seeds_opt != nullptr && o.seeds_opt->count() > 0) seeds = o.seeds;
    if (seeds.empty()) throw ConfigError("ablate needs at least one seed");
    world_cfg.validate();

    const toy::AblationTable table = toy::ablation_suite(world_cfg, train_cfg, seeds);

    const RunDirs dirs = make_run_dirs(o.out);
    ensure_dir(dirs.reports);
    write_json_file(dirs.reports / "ablation.json", table.to_json());
    write_text_file(dirs.reports / "ablation.md", table.to_markdown());

    manifest.config = {{"world", world_cfg.to_json()},
                       {"train", train_cfg.to_json()},
                       {"seeds", seeds}};
    manifest.seed = seeds.front();
    manifest.write(dirs.root / "manifest.json");
    std::cout << "ablation over " << seeds.size() << " seeds -> " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportOpts {
    std::string run;
    std::string out;
};

void append_file_inventory(std::string& md, const fs::path& root, const fs::path& dir) {
    if (!fs::exists(dir)) return;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) {
        md += "| " + fs::relative(f, root).generic_string() + " | " +
              std::to_string(fs::file_size(f)) + " | " + file_digest(f) + " |\n";
    }
}

int run_report(const ReportOpts& o) {
    const fs::path run_dir = o.run;
    const fs::path manifest_path = run_dir / "manifest.json";
    const RunManifest source = RunManifest::load(manifest_path);

    std::string md = "# Run report\n\n";
    md += "- command: `" + source.command + "`\n";
    md += "- seed: " + std::to_string(source.seed) + "\n";
    md += "- version: " + source.version + "\n\n";
    md += "## Effective config\n\n```json\n" + source.config.dump(2) + "\n```\n\n";

    md += "## Inputs\n\n";
    if (source.input_digests.empty()) {
        md += "none recorded\n\n";
    } else {
        md += "| path | recorded digest | status |\n|---|---|---|\n";
        for (const auto& [path, digest] : source.input_digests) {
            std::string status = "missing";
            if (fs::exists(path)) {
                status = file_digest(path) == digest ? "unchanged" : "CHANGED";
            }
            md += "| " + path + " | " + digest + " | " + status + " |\n";
        }
        md += "\n";
    }

    md += "## Outputs\n\n| file | bytes | digest |\n|---|---|---|\n";
    append_file_inventory(md, run_dir, run_dir / "data");
    append_file_inventory(md, run_dir, run_dir / "logs");
    append_file_inventory(md, run_dir, run_dir / "reports");
    md += "\n";

    const RunDirs dirs = make_run_dirs(o.out);
    ensure_dir(dirs.reports);
    write_text_file(dirs.reports / "summary.md", md);

    RunManifest manifest;
    manifest.command = "report";
    manifest.config = {{"run", o.run}};
    manifest.seed = source.seed;
    manifest.add_input(manifest_path);
    manifest.write(dirs.root / "manifest.json");
    std::cout << "summarized " << source.command << " run " << o.run << " -> " << o.out << "\n";
    return 0;
}

int fail(const char* type, const std::string& message) {
    std::cerr << json{{"error", {{"type", type}, {"message", message}}}}.dump() << "\n";
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cascade pseudo-labeling and adaptive threshold mining pipeline"};
    app.require_subcommand(1);

    GenerateOpts gen;
    CLI::App* gen_cmd = app.add_subcommand("generate", "synthesize a long-tailed detection world");
    gen_cmd->add_option("--config", gen.config_path, "JSON config (world fields + detector_quality)");
    gen.seed_opt = gen_cmd->add_option("--seed", gen.seed, "master seed");
    gen.classes_opt = gen_cmd->add_option("--classes", gen.classes, "number of classes");
    gen.exponent_opt = gen_cmd->add_option("--exponent", gen.exponent, "power-law exponent");
    gen.images_opt = gen_cmd->add_option("--images", gen.images, "images across both splits");
    gen.fraction_opt =
        gen_cmd->add_option("--labeled-fraction", gen.labeled_fraction, "labeled split share");
    gen.stages_opt = gen_cmd->add_option("--stages", gen.stages, "cascade stages");
    gen.quality_opt =
        gen_cmd->add_option("--quality", gen.quality, "detector quality in [0,1], 0 = noisiest");
    gen_cmd->add_option("--out", gen.out, "run directory")->required();

    IngestOpts ing;
    CLI::App* ing_cmd = app.add_subcommand("ingest", "validate and normalize a COCO file");
    ing_cmd->add_option("--ann", ing.ann, "COCO annotation file")->required();
    ing_cmd->add_option("--groups", ing.groups, "group scheme: lvis3 | cocolt4");
    ing_cmd->add_option("--out", ing.out, "run directory")->required();

    MineOpts mine;
    CLI::App* mine_cmd =
        app.add_subcommand("mine-thresholds", "build per-class adaptive thresholds from labeled data");
    mine_cmd->add_option("--config", mine.config_path, "JSON config (threshold store fields)");
    mine_cmd->add_option("--detections", mine.detections, "labeled-split stage records with probs")
        ->required();
    mine_cmd->add_option("--ann", mine.ann, "labeled COCO annotations")->required();
    mine.capacity_opt = mine_cmd->add_option("--capacity", mine.capacity, "per-class queue capacity");
    mine.min_samples_opt =
        mine_cmd->add_option("--min-samples", mine.min_samples, "samples before stats apply");
    mine.epsilons_opt = mine_cmd->add_option("--epsilons", mine.epsilons, "per-stage sigma multipliers")
                            ->delimiter(',');
    mine.fallbacks_opt =
        mine_cmd->add_option("--fallbacks", mine.fallbacks, "per-stage fallback thresholds")
            ->delimiter(',');
    mine.match_iou_opt = mine_cmd->add_option("--match-iou", mine.match_iou, "matching IoU floor");
    mine.max_fg_opt = mine_cmd->add_flag("--record-max-fg", mine.record_max_fg,
                                         "record max foreground prob instead of the GT-class prob");
    mine_cmd->add_option("--out", mine.out, "run directory")->required();

    PseudoOpts pseudo;
    CLI::App* pseudo_cmd =
        app.add_subcommand("pseudo-label", "ensemble stage records and gate them into pseudo-labels");
    pseudo_cmd->add_option("--detections", pseudo.detections, "unlabeled stage records with probs")
        ->required();
    pseudo_cmd->add_option("--ann", pseudo.ann, "COCO file carrying the category table")->required();
    pseudo_cmd->add_option("--store", pseudo.store_path, "threshold store JSON from mine-thresholds");
    pseudo_cmd->add_option("--fixed", pseudo.fixed, "class-agnostic per-stage thresholds")
        ->delimiter(',');
    pseudo_cmd->add_option("--nms-iou", pseudo.nms_iou, "suppression IoU");
    pseudo_cmd->add_flag("--no-nms", pseudo.no_nms, "skip per-image suppression before gating");
    pseudo_cmd->add_flag("--include-rejected", pseudo.include_rejected,
                         "keep all-stage-rejected rows in the output");
    pseudo_cmd->add_option("--groups", pseudo.groups, "group scheme for the summary");
    pseudo_cmd->add_option("--out", pseudo.out, "run directory")->required();

    TrainOpts train;
    CLI::App* train_cmd = app.add_subcommand("train-toy", "closed-loop training on the toy world");
    train_cmd->add_option("--config", train.config_path, "JSON config: {world:{...}, train:{...}}");
    train.seed_opt = train_cmd->add_option("--seed", train.seed, "master seed (world and trainer)");
    train.iters_opt = train_cmd->add_option("--iters", train.iters, "total iterations");
    train.burn_in_opt =
        train_cmd->add_option("--burn-in", train.burn_in, "supervised iterations (-1 = 20%)");
    train.lambda_opt = train_cmd->add_option("--lambda-u", train.lambda_u, "unlabeled loss weight");
    train.teacher_opt =
        train_cmd->add_option("--teacher", train.teacher, "teacher mode: ensemble | self_per_head");
    train.apm_opt = train_cmd->add_flag("--apm,!--no-apm", train.apm_flag, "adaptive thresholds");
    train.classes_opt = train_cmd->add_option("--classes", train.classes, "world classes");
    train.images_opt = train_cmd->add_option("--images", train.images, "world images");
    train_cmd->add_option("--out", train.out, "run directory")->required();

    EvaluateOpts ev;
    CLI::App* eval_cmd = app.add_subcommand("evaluate", "score detections or pseudo-labels");
    eval_cmd->add_option("--metric", ev.metric, "fixed-ap | pr | pseudo-acc | recovery");
    eval_cmd->add_option("--detections", ev.detections, "results JSON");
    eval_cmd->add_option("--ann", ev.ann, "COCO ground truth");
    eval_cmd->add_option("--hidden", ev.hidden, "COCO audit file (pseudo-acc)");
    eval_cmd->add_option("--pseudo", ev.pseudo, "pseudo-label JSON (recovery)");
    eval_cmd->add_option("--erased", ev.erased, "erased-annotation COCO file (recovery)");
    eval_cmd->add_option("--iou", ev.iou, "IoU threshold(s)")->delimiter(',');
    eval_cmd->add_option("--grid", ev.grid, "score grid for pr")->delimiter(',');
    eval_cmd->add_option("--cap", ev.cap, "dataset-wide per-class detection cap");
    eval_cmd->add_option("--stages", ev.stages, "cascade stages in the input records");
    eval_cmd->add_option("--groups", ev.groups, "group scheme: lvis3 | cocolt4");
    eval_cmd->add_option("--out", ev.out, "run directory")->required();

    EraseOpts er;
    CLI::App* erase_cmd = app.add_subcommand("erase", "sparsify annotations per class");
    erase_cmd->add_option("--ann", er.ann, "COCO annotation file")->required();
    erase_cmd->add_option("--ratio", er.ratio, "erasure ratio in [0,1]")->required();
    erase_cmd->add_option("--seed", er.seed, "erasure seed");
    erase_cmd->add_option("--groups", er.groups, "group scheme for the report");
    erase_cmd->add_option("--out", er.out, "run directory")->required();

    AblateOpts ab;
    CLI::App* ablate_cmd =
        app.add_subcommand("ablate", "teacher/threshold ablation grid on the toy world");
    ablate_cmd->add_option("--config", ab.config_path, "JSON config: {world, train, seeds}");
    ab.seeds_opt = ablate_cmd->add_option("--seeds", ab.seeds, "seed list")->delimiter(',');
    ablate_cmd->add_option("--out", ab.out, "run directory")->required();

    ReportOpts rep;
    CLI::App* report_cmd = app.add_subcommand("report", "summarize a run directory");
    report_cmd->add_option("--run", rep.run, "existing run directory")->required();
    report_cmd->add_option("--out", rep.out, "run directory for the summary")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen_cmd) return run_generate(gen);
        if (*ing_cmd) return run_ingest(ing);
        if (*mine_cmd) return run_mine(mine);
        if (*pseudo_cmd) return run_pseudo_label(pseudo);
        if (*train_cmd) return run_train_toy(train);
        if (*eval_cmd) return run_evaluate(ev);
        if (*erase_cmd) return run_erase(er);
        if (*ablate_cmd) return run_ablate(ab);
        if (*report_cmd) return run_report(rep);
        return fail("InternalError", "no subcommand dispatched");
    } catch (const ConfigError& e) {
        return fail("ConfigError", e.what());
    } catch (const ReferentialIntegrityError& e) {
        return fail("ReferentialIntegrityError", e.what());
    } catch (const ValidationError& e) {
        return fail("ValidationError", e.what());
    } catch (const AlignmentError& e) {
        return fail("AlignmentError", e.what());
    } catch (const IoError& e) {
        return fail("IoError", e.what());
    } catch (const json::exception& e) {
        return fail("JsonError", e.what());
    } catch (const std::exception& e) {
        fail("InternalError", e.what());
        return 1;
    }
}
