#include "cascademine/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>

#include "cascademine/rng.hpp"

namespace cascademine::synthetic {

namespace {

constexpr double kBgMass = 0.35;       // background share of the leftover mass
constexpr double kJitterClamp = 0.12;  // max corner offset as a fraction of extent
constexpr int kMaxObjectsPerImage = 500;
constexpr int kMaxFalsePositives = 100;
constexpr std::int64_t kIdStride = 1000;  // annotation/proposal ids per image
constexpr std::int64_t kFpIdOffset = 600;
constexpr std::int64_t kBgIdOffset = 800;
constexpr std::int64_t kHeldoutImageBase = 10'000'000;

/// Lowest prediction score that still keeps the predicted class the
/// foreground argmax once the leftover mass is spread over the other
/// classes.
double min_score(int num_classes) {
    return (1.0 - kBgMass) / (static_cast<double>(num_classes) - kBgMass) + 1e-9;
}

std::vector<double> make_probs(int label, double score, int num_classes) {
    std::vector<double> probs(num_classes + 1,
                              num_classes > 1
                                  ? (1.0 - score) * (1.0 - kBgMass) /
                                        static_cast<double>(num_classes - 1)
                                  : 0.0);
    probs[label] = score;
    probs[num_classes] = (1.0 - score) * kBgMass;
    return probs;
}

std::vector<double> power_law_weights(int num_classes, double exponent) {
    std::vector<double> weights(num_classes);
    for (int c = 0; c < num_classes; ++c) {
        weights[c] = std::pow(static_cast<double>(c + 1), -exponent);
    }
    return weights;
}

BBox random_box(double image_size, std::mt19937_64& g) {
    const double w = rng::quantize64(32.0 + rng::uniform01(g) * 224.0);
    const double h = rng::quantize64(32.0 + rng::uniform01(g) * 224.0);
    const double x = rng::quantize64(rng::uniform01(g) * (image_size - w));
    const double y = rng::quantize64(rng::uniform01(g) * (image_size - h));
    return BBox{x, y, x + w, y + h};
}

struct ObjectDraw {
    int class_index;
    BBox box;
};

/// Shared object law for every split: one substream per image, a fixed
/// draw order (count, then per object class and box).
std::vector<ObjectDraw> draw_objects(const SyntheticConfig& config,
                                     std::span<const double> weights,
                                     std::int64_t image_id) {
    std::mt19937_64 g(rng::mix(rng::stream_for(config.seed, "objects"),
                               static_cast<std::uint64_t>(image_id)));
    const int n = std::min(std::max(1, rng::poisson(g, config.objects_per_image)),
                           kMaxObjectsPerImage);
    std::vector<ObjectDraw> objects;
    objects.reserve(n);
    for (int j = 0; j < n; ++j) {
        ObjectDraw obj;
        obj.class_index = static_cast<int>(rng::categorical(g, weights));
        obj.box = random_box(config.image_size, g);
        objects.push_back(obj);
    }
    return objects;
}

}  // namespace

double GroupBiases::of(ClassGroup group) const {
    switch (group) {
        case ClassGroup::rare:
        case ClassGroup::bin1:
            return rare;
        case ClassGroup::common:
        case ClassGroup::bin2:
        case ClassGroup::bin3:
            return common;
        case ClassGroup::frequent:
        case ClassGroup::bin4:
            return frequent;
    }
    return 0.0;
}

void SyntheticConfig::validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (num_images < 2) throw ConfigError("num_images must be at least 2");
    if (num_stages < 1) throw ConfigError("num_stages must be at least 1");
    if (!(labeled_fraction > 0.0 && labeled_fraction < 1.0)) {
        throw ConfigError("labeled_fraction must lie strictly between 0 and 1");
    }
    if (power_law_exponent < 0.0) throw ConfigError("power_law_exponent must be >= 0");
    if (objects_per_image <= 0.0) throw ConfigError("objects_per_image must be positive");
    if (image_size < 64.0) throw ConfigError("image_size must be at least 64");
    if (score_sigma < 0.0) throw ConfigError("score_sigma must be >= 0");
    if (box_jitter < 0.0) throw ConfigError("box_jitter must be >= 0");
    if (false_positives_per_image < 0.0) {
        throw ConfigError("false_positives_per_image must be >= 0");
    }
    if (class_feature_dim < 2) throw ConfigError("class_feature_dim must be at least 2");
    if (feature_noise < 0.0) throw ConfigError("feature_noise must be >= 0");
    if (heldout_images < 1) throw ConfigError("heldout_images must be at least 1");
}

nlohmann::json SyntheticConfig::to_json() const {
    return {{"num_classes", num_classes},
            {"power_law_exponent", power_law_exponent},
            {"num_images", num_images},
            {"labeled_fraction", labeled_fraction},
            {"objects_per_image", objects_per_image},
            {"image_size", image_size},
            {"num_stages", num_stages},
            {"seed", seed},
            {"score_base", score_base},
            {"score_stage_gain", score_stage_gain},
            {"score_sigma", score_sigma},
            {"score_bias",
             {{"rare", score_bias.rare},
              {"common", score_bias.common},
              {"frequent", score_bias.frequent}}},
            {"accuracy_base", accuracy_base},
            {"accuracy_stage_gain", accuracy_stage_gain},
            {"accuracy_bias",
             {{"rare", accuracy_bias.rare},
              {"common", accuracy_bias.common},
              {"frequent", accuracy_bias.frequent}}},
            {"box_jitter", box_jitter},
            {"false_positives_per_image", false_positives_per_image},
            {"fp_score_base", fp_score_base},
            {"fp_score_stage_gain", fp_score_stage_gain},
            {"class_feature_dim", class_feature_dim},
            {"feature_noise", feature_noise},
            {"rare_noise_multiplier", rare_noise_multiplier},
            {"background_proposals_per_image", background_proposals_per_image},
            {"heldout_images", heldout_images}};
}

SyntheticConfig SyntheticConfig::from_json(const nlohmann::json& doc) {
    SyntheticConfig c;
    c.num_classes = doc.value("num_classes", c.num_classes);
    c.power_law_exponent = doc.value("power_law_exponent", c.power_law_exponent);
    c.num_images = doc.value("num_images", c.num_images);
    c.labeled_fraction = doc.value("labeled_fraction", c.labeled_fraction);
    c.objects_per_image = doc.value("objects_per_image", c.objects_per_image);
    c.image_size = doc.value("image_size", c.image_size);
    c.num_stages = doc.value("num_stages", c.num_stages);
    c.seed = doc.value("seed", c.seed);
    c.score_base = doc.value("score_base", c.score_base);
    c.score_stage_gain = doc.value("score_stage_gain", c.score_stage_gain);
    c.score_sigma = doc.value("score_sigma", c.score_sigma);
    if (doc.contains("score_bias")) {
        const nlohmann::json& b = doc["score_bias"];
        c.score_bias.rare = b.value("rare", c.score_bias.rare);
        c.score_bias.common = b.value("common", c.score_bias.common);
        c.score_bias.frequent = b.value("frequent", c.score_bias.frequent);
    }
    c.accuracy_base = doc.value("accuracy_base", c.accuracy_base);
    c.accuracy_stage_gain = doc.value("accuracy_stage_gain", c.accuracy_stage_gain);
    if (doc.contains("accuracy_bias")) {
        const nlohmann::json& b = doc["accuracy_bias"];
        c.accuracy_bias.rare = b.value("rare", c.accuracy_bias.rare);
        c.accuracy_bias.common = b.value("common", c.accuracy_bias.common);
        c.accuracy_bias.frequent = b.value("frequent", c.accuracy_bias.frequent);
    }
    c.box_jitter = doc.value("box_jitter", c.box_jitter);
    c.false_positives_per_image =
        doc.value("false_positives_per_image", c.false_positives_per_image);
    c.fp_score_base = doc.value("fp_score_base", c.fp_score_base);
    c.fp_score_stage_gain = doc.value("fp_score_stage_gain", c.fp_score_stage_gain);
    c.class_feature_dim = doc.value("class_feature_dim", c.class_feature_dim);
    c.feature_noise = doc.value("feature_noise", c.feature_noise);
    c.rare_noise_multiplier = doc.value("rare_noise_multiplier", c.rare_noise_multiplier);
    c.background_proposals_per_image =
        doc.value("background_proposals_per_image", c.background_proposals_per_image);
    c.heldout_images = doc.value("heldout_images", c.heldout_images);
    c.validate();
    return c;
}

BBox jitter_box(const BBox& box, double scale, std::mt19937_64& g) {
    const double w = box.width();
    const double h = box.height();
    const std::array<double, 4> extents{w, h, w, h};
    std::array<double, 4> corners{box.x_min, box.y_min, box.x_max, box.y_max};
    for (int i = 0; i < 4; ++i) {
        const double limit = kJitterClamp * extents[i];
        const double offset = std::clamp(scale * rng::normal(g), -limit, limit);
        corners[i] = rng::quantize64(corners[i] + offset);
    }
    return BBox{corners[0], corners[1], corners[2], corners[3]};
}

GeneratedDataset generate_dataset(const SyntheticConfig& config) {
    config.validate();
    const std::vector<double> weights =
        power_law_weights(config.num_classes, config.power_law_exponent);

    const int n_labeled = std::clamp(
        static_cast<int>(std::lround(config.num_images * config.labeled_fraction)), 1,
        config.num_images - 1);

    std::vector<ImageInfo> images(config.num_images);
    std::vector<Annotation> annotations;
    for (int i = 0; i < config.num_images; ++i) {
        images[i].id = i + 1;
        images[i].width = static_cast<int>(config.image_size);
        images[i].height = static_cast<int>(config.image_size);
        const auto objects = draw_objects(config, weights, images[i].id);
        for (std::size_t j = 0; j < objects.size(); ++j) {
            Annotation ann;
            ann.id = images[i].id * kIdStride + static_cast<std::int64_t>(j) + 1;
            ann.image_id = images[i].id;
            ann.category_id = objects[j].class_index + 1;
            ann.box = objects[j].box;
            annotations.push_back(ann);
        }
    }

    // World-level counts and groups, stamped identically into both splits so
    // they agree on which classes are rare.
    std::vector<std::int64_t> counts(config.num_classes, 0);
    for (const Annotation& ann : annotations) ++counts[ann.category_id - 1];
    std::vector<Category> categories(config.num_classes);
    for (int c = 0; c < config.num_classes; ++c) {
        categories[c].id = c + 1;
        categories[c].name = "class_" + std::to_string(c + 1);
        categories[c].instance_count = counts[c];
        categories[c].group = group_for_count(counts[c], GroupScheme::lvis3);
    }

    GeneratedDataset out;
    out.labeled.split = Split::labeled;
    out.labeled.categories = categories;
    out.unlabeled.split = Split::unlabeled;
    out.unlabeled.categories = categories;

    std::vector<Annotation> hidden;
    for (const ImageInfo& im : images) {
        const bool labeled = im.id <= n_labeled;
        (labeled ? out.labeled.images : out.unlabeled.images).push_back(im);
    }
    for (const Annotation& ann : annotations) {
        if (ann.image_id <= n_labeled) {
            out.labeled.annotations.push_back(ann);
        } else {
            hidden.push_back(ann);
        }
    }
    out.hidden = HiddenAnnotations(std::move(hidden));
    return out;
}

std::vector<ClassGroup> world_groups(const GeneratedDataset& data, GroupScheme scheme) {
    std::vector<std::int64_t> counts(data.labeled.categories.size(), 0);
    for (const Annotation& ann : data.labeled.annotations) ++counts[ann.category_id - 1];
    for (const Annotation& ann : data.hidden.audit()) ++counts[ann.category_id - 1];
    std::vector<ClassGroup> groups(counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c) {
        groups[c] = group_for_count(counts[c], scheme);
    }
    return groups;
}

std::vector<DetectionRecord> simulate_detector(std::span<const ImageInfo> images,
                                               std::span<const Annotation> gt,
                                               std::span<const ClassGroup> groups_by_class,
                                               const CategoryIndex& index,
                                               const SyntheticConfig& config,
                                               double quality) {
    if (!(quality >= 0.0 && quality <= 1.0)) {
        throw ValidationError("quality must lie in [0,1]");
    }
    const int C = static_cast<int>(index.size());
    const double floor = min_score(C);
    const std::uint64_t stream = rng::stream_for(config.seed, "detector");
    // False chains lean toward frequent classes, the same direction real
    // detector junk leans.
    const std::vector<double> fp_weights = power_law_weights(C, config.power_law_exponent);

    std::map<std::int64_t, std::vector<const Annotation*>> gt_by_image;
    for (const Annotation& ann : gt) gt_by_image[ann.image_id].push_back(&ann);

    std::vector<DetectionRecord> records;
    for (const ImageInfo& im : images) {
        std::mt19937_64 g(rng::mix(stream, static_cast<std::uint64_t>(im.id)));

        // True-object chains first, in annotation order; a fixed number of
        // draws per record keeps the stream position independent of
        // branch outcomes, which the replay oracle relies on.
        if (const auto it = gt_by_image.find(im.id); it != gt_by_image.end()) {
            for (const Annotation* ann : it->second) {
                const int true_class = index.index_of(ann->category_id);
                const ClassGroup group = groups_by_class[true_class];
                for (int k = 1; k <= config.num_stages; ++k) {
                    const double u_correct = rng::uniform01(g);
                    const double u_wrong = rng::uniform01(g);
                    const double z_score = rng::normal(g);

                    const double p_raw =
                        std::clamp(config.accuracy_base +
                                       config.accuracy_stage_gain * (k - 1) +
                                       config.accuracy_bias.of(group),
                                   0.02, 1.0);
                    const double p_correct = p_raw + quality * (1.0 - p_raw);
                    int label = true_class;
                    if (u_correct > p_correct) {
                        int wrong = static_cast<int>(u_wrong * (C - 1));
                        wrong = std::min(wrong, C - 2);
                        label = wrong >= true_class ? wrong + 1 : wrong;
                    }

                    const double mu = config.score_base +
                                      config.score_stage_gain * (k - 1) +
                                      config.score_bias.of(group);
                    const double mu_q = mu + quality * (1.0 - mu);
                    double score =
                        std::clamp(mu_q + config.score_sigma * z_score, 0.0, 1.0);
                    score = std::max(score, floor);

                    DetectionRecord rec;
                    rec.image_id = im.id;
                    rec.stage = k;
                    rec.proposal_id = ann->id;
                    rec.class_probs = make_probs(label, score, C);
                    rec.box = jitter_box(
                        ann->box, config.box_jitter * (1.0 - quality) / k, g);
                    records.push_back(std::move(rec));
                }
            }
        }

        const int n_fp = std::min(
            rng::poisson(g, config.false_positives_per_image), kMaxFalsePositives);
        for (int f = 0; f < n_fp; ++f) {
            const BBox fp_box = random_box(config.image_size, g);
            const std::int64_t fp_id = im.id * kIdStride + kFpIdOffset + f;
            // One identity per false chain: the cascade re-scores the same
            // crop, so its stages agree on what they mistake it for.
            const int label = static_cast<int>(rng::categorical(g, fp_weights));
            for (int k = 1; k <= config.num_stages; ++k) {
                const double z_score = rng::normal(g);
                const double mu =
                    (config.fp_score_base + config.fp_score_stage_gain * (k - 1)) *
                    (1.0 - quality);
                double score = std::clamp(mu + config.score_sigma * z_score, 0.0, 1.0);
                score = std::max(score, floor);

                DetectionRecord rec;
                rec.image_id = im.id;
                rec.stage = k;
                rec.proposal_id = fp_id;
                rec.class_probs = make_probs(label, score, C);
                rec.box =
                    jitter_box(fp_box, config.box_jitter * (1.0 - quality) / k, g);
                records.push_back(std::move(rec));
            }
        }
    }
    return records;
}

std::vector<DetectionRecord> simulate_detector(const GeneratedDataset& data, Split split,
                                               const SyntheticConfig& config,
                                               double quality) {
    const CategoryIndex index(data.labeled.categories);
    const std::vector<ClassGroup> groups = world_groups(data, GroupScheme::lvis3);
    if (split == Split::labeled) {
        return simulate_detector(data.labeled.images, data.labeled.annotations, groups,
                                 index, config, quality);
    }
    return simulate_detector(data.unlabeled.images, data.hidden.audit(), groups, index,
                             config, quality);
}

namespace {

/// Feature noise multiplier of stage k out of K: later stages see cleaner
/// views, earlier ones noisier, and all draws are independent.
double stage_noise(int k, int num_stages) {
    return 1.0 + 0.5 * static_cast<double>(num_stages - k);
}

std::vector<std::vector<double>> proposal_features(
    const SyntheticConfig& config, std::span<const double> prototypes, int class_slot,
    bool rare, const BBox& gt_box, const BBox& proposal_box, std::mt19937_64& g) {
    const int D = config.class_feature_dim;
    const double class_noise =
        config.feature_noise * (rare ? config.rare_noise_multiplier : 1.0);
    const std::array<double, 4> delta{
        (gt_box.x_min - proposal_box.x_min) / kDeltaScale,
        (gt_box.y_min - proposal_box.y_min) / kDeltaScale,
        (gt_box.x_max - proposal_box.x_max) / kDeltaScale,
        (gt_box.y_max - proposal_box.y_max) / kDeltaScale};

    std::vector<std::vector<double>> views(config.num_stages);
    for (int k = 1; k <= config.num_stages; ++k) {
        const double m = stage_noise(k, config.num_stages);
        std::vector<double>& f = views[k - 1];
        f.resize(config.feature_dim());
        for (int d = 0; d < D; ++d) {
            f[d] = prototypes[static_cast<std::size_t>(class_slot) * D + d] +
                   class_noise * m * rng::normal(g);
        }
        for (int i = 0; i < 4; ++i) {
            f[D + i] = delta[i] + 0.1 * m * rng::normal(g);
        }
    }
    return views;
}

}  // namespace

ToyWorld generate_toy_world(const SyntheticConfig& config) {
    config.validate();
    ToyWorld world;
    GeneratedDataset data = generate_dataset(config);
    world.index = CategoryIndex(data.labeled.categories);
    world.class_groups = world_groups(data, GroupScheme::lvis3);
    world.num_stages = config.num_stages;
    world.feature_dim = config.feature_dim();

    const int C = config.num_classes;
    const int D = config.class_feature_dim;
    std::vector<double> prototypes(static_cast<std::size_t>(C + 1) * D);
    {
        std::mt19937_64 g(rng::stream_for(config.seed, "prototypes"));
        for (double& v : prototypes) v = 2.0 * rng::normal(g);
    }

    const std::uint64_t proposal_stream = rng::stream_for(config.seed, "toy_proposal");
    const std::uint64_t bg_stream = rng::stream_for(config.seed, "toy_bg");

    auto make_object_proposal = [&](const Annotation& ann) {
        std::mt19937_64 g(rng::mix(proposal_stream, static_cast<std::uint64_t>(ann.id)));
        ToyProposal prop;
        prop.image_id = ann.image_id;
        prop.proposal_id = ann.id;
        prop.true_class = world.index.index_of(ann.category_id);
        prop.gt_box = ann.box;
        prop.proposal_box = jitter_box(ann.box, config.box_jitter, g);
        prop.stage_features = proposal_features(
            config, prototypes, prop.true_class,
            world.class_groups[prop.true_class] == ClassGroup::rare, prop.gt_box,
            prop.proposal_box, g);
        return prop;
    };
    auto make_background_proposals = [&](std::int64_t image_id,
                                         std::vector<ToyProposal>& out) {
        std::mt19937_64 g(rng::mix(bg_stream, static_cast<std::uint64_t>(image_id)));
        const int n = std::min(rng::poisson(g, config.background_proposals_per_image),
                               kMaxFalsePositives);
        for (int f = 0; f < n; ++f) {
            ToyProposal prop;
            prop.image_id = image_id;
            prop.proposal_id = image_id * kIdStride + kBgIdOffset + f;
            prop.true_class = -1;
            prop.proposal_box = random_box(config.image_size, g);
            prop.gt_box = prop.proposal_box;
            prop.stage_features =
                proposal_features(config, prototypes, C, false, prop.gt_box,
                                  prop.proposal_box, g);
            out.push_back(std::move(prop));
        }
    };

    auto build_split = [&](const std::vector<ImageInfo>& images,
                           std::span<const Annotation> annotations,
                           std::vector<ToyProposal>& out) {
        std::size_t cursor = 0;
        for (const ImageInfo& im : images) {
            while (cursor < annotations.size() && annotations[cursor].image_id < im.id) {
                ++cursor;
            }
            while (cursor < annotations.size() &&
                   annotations[cursor].image_id == im.id) {
                out.push_back(make_object_proposal(annotations[cursor]));
                ++cursor;
            }
            make_background_proposals(im.id, out);
        }
    };

    build_split(data.labeled.images, data.labeled.annotations, world.labeled_proposals);
    build_split(data.unlabeled.images, data.hidden.audit(), world.unlabeled_proposals);

    // Held-out split: fresh image ids far above the training range, same
    // object law, used only for final accuracy.
    const std::vector<double> weights = power_law_weights(C, config.power_law_exponent);
    std::vector<ImageInfo> heldout_images(config.heldout_images);
    std::vector<Annotation> heldout_annotations;
    for (int i = 0; i < config.heldout_images; ++i) {
        heldout_images[i].id = kHeldoutImageBase + i + 1;
        heldout_images[i].width = static_cast<int>(config.image_size);
        heldout_images[i].height = static_cast<int>(config.image_size);
        const auto objects = draw_objects(config, weights, heldout_images[i].id);
        for (std::size_t j = 0; j < objects.size(); ++j) {
            Annotation ann;
            ann.id = heldout_images[i].id * kIdStride + static_cast<std::int64_t>(j) + 1;
            ann.image_id = heldout_images[i].id;
            ann.category_id = objects[j].class_index + 1;
            ann.box = objects[j].box;
            heldout_annotations.push_back(ann);
        }
    }
    build_split(heldout_images, heldout_annotations, world.heldout_proposals);

    world.labeled = std::move(data.labeled);
    world.unlabeled = std::move(data.unlabeled);
    world.hidden = std::move(data.hidden);
    return world;
}

}  // namespace cascademine::synthetic
