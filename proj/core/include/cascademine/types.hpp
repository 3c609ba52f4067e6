#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace cascademine {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Input data violates a documented precondition (bad range, bad shape).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An annotation or detection references an entity that does not exist.
struct ReferentialIntegrityError : ValidationError {
  using ValidationError::ValidationError;
};

/// Per-proposal records that should form one cascade chain do not line up.
struct AlignmentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Boxes
// ---------------------------------------------------------------------------

/// Axis-aligned box in image-plane pixel coordinates, corner form.
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_min <= x_max && y_min <= y_max; }

  bool operator==(const BBox&) const = default;
};

// ---------------------------------------------------------------------------
// Categories and class groups
// ---------------------------------------------------------------------------

enum class GroupScheme { lvis3, cocolt4 };

/// Frequency bin of a category. The first three values belong to the
/// three-group scheme, the last four to the four-bin scheme.
enum class ClassGroup { rare, common, frequent, bin1, bin2, bin3, bin4 };

/// Half-open frequency intervals:
///   lvis3:   rare [0, 10), common [10, 100), frequent [100, inf)
///   cocolt4: bin1 [0, 20), bin2 [20, 400), bin3 [400, 8000), bin4 [8000, inf)
/// A zero count lands in the lowest bin; callers flag such categories in
/// reports rather than dropping them.
ClassGroup group_for_count(std::int64_t instance_count, GroupScheme scheme);

const char* to_string(ClassGroup group);
const char* to_string(GroupScheme scheme);
GroupScheme group_scheme_from_string(const std::string& name);

struct Category {
  int id = 0;
  std::string name;
  std::int64_t instance_count = 0;
  ClassGroup group = ClassGroup::rare;
};

// ---------------------------------------------------------------------------
// Annotations and detections
// ---------------------------------------------------------------------------

struct ImageInfo {
  std::int64_t id = 0;
  int width = 0;
  int height = 0;
};

struct Annotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  int category_id = 0;
  BBox box;
};

/// How the entries of a class-probability vector relate to each other.
/// Softmax vectors sum to one across foreground classes plus the background
/// slot; sigmoid vectors hold independent per-class scores.
enum class ScoreSemantics { softmax, sigmoid };

/// One scored, classified box proposal attributed to an image and a cascade
/// stage. `class_probs` holds the scores of the C foreground classes followed
/// by one background slot. `proposal_id` ties the K stage records of one
/// proposal chain together.
struct DetectionRecord {
  std::int64_t image_id = 0;
  int stage = 1;
  std::int64_t proposal_id = -1;
  std::vector<double> class_probs;
  BBox box;

  int num_foreground_classes() const {
    return static_cast<int>(class_probs.size()) - 1;
  }
  double background_prob() const { return class_probs.back(); }
};

/// Index of the highest-scoring foreground class; ties break toward the
/// lower class index.
int argmax_foreground(const std::vector<double>& class_probs);

/// Value of the highest-scoring foreground entry.
double max_foreground(const std::vector<double>& class_probs);

/// Throws ValidationError when the vector violates its score semantics
/// (entries outside [0,1], or softmax sum off by more than 1e-9).
void validate_class_probs(const std::vector<double>& class_probs,
                          ScoreSemantics semantics);

/// One row of a COCO-results-style file: a single (class, score) pick per
/// proposal. `probs` is an optional extension carrying the full probability
/// vector; it stays empty for plain results files. `proposal_id` rides along
/// so stage records of one proposal can be re-chained after a round trip;
/// -1 means unknown.
struct ResultRecord {
  std::int64_t image_id = 0;
  int category_id = 0;
  BBox box;
  double score = 0.0;
  int stage = 1;
  std::int64_t proposal_id = -1;
  std::vector<double> probs;

  bool operator==(const ResultRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Dataset bundle
// ---------------------------------------------------------------------------

enum class Split { labeled, unlabeled };

/// Images, ground-truth annotations, and the category table of one dataset
/// split. Values are immutable after construction by convention; nothing in
/// the pipeline mutates a bundle in place.
struct DatasetBundle {
  std::vector<ImageInfo> images;
  std::vector<Annotation> annotations;
  std::vector<Category> categories;
  Split split = Split::labeled;
};

/// Maps between external COCO category ids and the dense class indexes used
/// by probability vectors. Class index order is ascending category id.
class CategoryIndex {
 public:
  CategoryIndex() = default;
  explicit CategoryIndex(const std::vector<Category>& categories);

  int index_of(int category_id) const;  // throws ReferentialIntegrityError
  int id_of(int class_index) const;
  bool contains(int category_id) const;
  std::size_t size() const { return ids_.size(); }

 private:
  std::vector<int> ids_;
  std::unordered_map<int, int> index_by_id_;
};

/// Ground truth retained for the unlabeled split. Training code never sees
/// it; audits (pseudo-label accuracy, recovery scores) must ask explicitly.
class HiddenAnnotations {
 public:
  HiddenAnnotations() = default;
  explicit HiddenAnnotations(std::vector<Annotation> annotations)
      : annotations_(std::move(annotations)) {}

  const std::vector<Annotation>& audit() const { return annotations_; }
  bool empty() const { return annotations_.empty(); }
  std::size_t size() const { return annotations_.size(); }

 private:
  std::vector<Annotation> annotations_;
};

/// Recomputes every category's instance_count from the bundle's annotations
/// and reassigns class groups under the given scheme.
DatasetBundle assign_class_groups(DatasetBundle bundle, GroupScheme scheme);

}  // namespace cascademine
