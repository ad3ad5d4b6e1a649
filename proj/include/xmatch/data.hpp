#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xmatch/tensor.hpp"

namespace xmatch {

inline constexpr std::size_t kDefaultMaxObjects = 36;
inline constexpr std::size_t kDefaultFeatureDim = 2048;

struct DetectedObject {
  std::array<double, 4> box{};  // (x1, y1, x2, y2), normalized to [0, 1]
  std::vector<double> feat;

  bool operator==(const DetectedObject&) const = default;
};

struct ImageRecord {
  std::string image_id;
  std::vector<DetectedObject> objects;

  bool operator==(const ImageRecord&) const = default;
};

struct FeatureLimits {
  std::size_t max_objects = kDefaultMaxObjects;
  std::size_t feature_dim = kDefaultFeatureDim;
};

using FeatureStore = std::map<std::string, ImageRecord>;

struct LabeledPair {
  std::string phrase;
  std::string image_id;
  int label = 0;
  std::optional<std::string> app_id;

  bool operator==(const LabeledPair&) const = default;
};

struct CandidatePool {
  std::vector<std::string> image_ids;
};

// Throws LoadError describing the first violated invariant.
void validate_record(const ImageRecord& record, const FeatureLimits& limits);

// features.jsonl: {"image_id": str, "objects": [{"box": [x1,y1,x2,y2], "feat": [...]}]}
FeatureStore read_features(std::istream& in, const FeatureLimits& limits);
FeatureStore load_features(const std::filesystem::path& path, const FeatureLimits& limits);
// Numbers are written with 17 significant digits so doubles round-trip exactly.
void write_features(std::ostream& out, const std::vector<ImageRecord>& records);
void write_features(const std::filesystem::path& path, const std::vector<ImageRecord>& records);

// pairs.jsonl: {"phrase": str, "image_id": str, "label": 0|1, "app_id": str?}
std::vector<LabeledPair> read_pairs(std::istream& in);
std::vector<LabeledPair> load_pairs(const std::filesystem::path& path);
void write_pairs(std::ostream& out, const std::vector<LabeledPair>& pairs);
void write_pairs(const std::filesystem::path& path, const std::vector<LabeledPair>& pairs);

// pool.json: {"image_ids": [str, ...]}
CandidatePool load_pool(const std::filesystem::path& path);
CandidatePool parse_pool(const std::string& json_text);
void write_pool(const std::filesystem::path& path, const CandidatePool& pool);
void validate_pool(const CandidatePool& pool);

// Throws LoadError when any pair references an image missing from the store.
void require_resolvable(const std::vector<LabeledPair>& pairs, const FeatureStore& store);

// Objects of one image as model input: boxes [n x 4], feats [n x d_feat]
// and a 0/1 validity mask of length n.
struct ObjectInput {
  Tensor boxes;
  Tensor feats;
  std::vector<double> mask;

  std::size_t count() const { return mask.size(); }
  // The rows whose mask is nonzero, in order.
  ObjectInput valid_only() const;
};

struct PaddedImageBatch {
  Tensor boxes;     // [B x N_obj x 4]
  Tensor feats;     // [B x N_obj x d_feat]
  Tensor obj_mask;  // [B x N_obj]

  std::size_t batch_size() const { return boxes.dim(0); }
  ObjectInput image(std::size_t b) const;
};

// Zero-pads every record to max_objects rows; throws LoadError if a record
// has more objects or feature widths disagree.
PaddedImageBatch pad_images(const std::vector<const ImageRecord*>& records, std::size_t max_objects);
PaddedImageBatch pad_images(const std::vector<ImageRecord>& records, std::size_t max_objects);

// Single image padded to max_objects.
ObjectInput make_object_input(const ImageRecord& record, std::size_t max_objects);

// Deterministic shuffle of pair indices under `seed`, cut into batches of
// batch_size; the final short batch is kept.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<LabeledPair>& pairs,
                                                   const FeatureStore& store,
                                                   std::size_t batch_size, std::uint64_t seed);

}  // namespace xmatch
