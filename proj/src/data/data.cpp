#include "xmatch/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "xmatch/error.hpp"

namespace xmatch {
namespace {

using nlohmann::json;

std::string line_prefix(std::size_t line_no) { return "line " + std::to_string(line_no) + ": "; }

std::string format_double(double v) {
  if (v == 0.0 && std::signbit(v)) return "-0.0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  return out;
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

ImageRecord parse_record(const json& j) {
  if (!j.is_object()) throw LoadError("record is not a JSON object");
  ImageRecord rec;
  const auto id = j.find("image_id");
  if (id == j.end() || !id->is_string()) throw LoadError("missing string field image_id");
  rec.image_id = id->get<std::string>();
  const auto objs = j.find("objects");
  if (objs == j.end() || !objs->is_array()) throw LoadError("missing array field objects");
  for (const json& o : *objs) {
    if (!o.is_object()) throw LoadError("object entry is not a JSON object");
    const auto box = o.find("box");
    const auto feat = o.find("feat");
    if (box == o.end() || !box->is_array() || box->size() != 4) {
      throw LoadError("object box must be an array of 4 numbers");
    }
    if (feat == o.end() || !feat->is_array()) throw LoadError("object feat must be an array");
    DetectedObject obj;
    for (std::size_t i = 0; i < 4; ++i) {
      if (!(*box)[i].is_number()) throw LoadError("object box must be an array of 4 numbers");
      obj.box[i] = (*box)[i].get<double>();
    }
    obj.feat.reserve(feat->size());
    for (const json& v : *feat) {
      if (!v.is_number()) throw LoadError("object feat entries must be numbers");
      obj.feat.push_back(v.get<double>());
    }
    rec.objects.push_back(std::move(obj));
  }
  return rec;
}

}  // namespace

void validate_record(const ImageRecord& record, const FeatureLimits& limits) {
  const std::string who = "image \"" + record.image_id + "\": ";
  if (record.image_id.empty()) throw LoadError("image_id must be non-empty");
  if (record.objects.empty()) throw LoadError(who + "has no objects");
  if (record.objects.size() > limits.max_objects) {
    throw LoadError(who + std::to_string(record.objects.size()) + " objects exceed the limit of " +
                    std::to_string(limits.max_objects));
  }
  for (std::size_t i = 0; i < record.objects.size(); ++i) {
    const DetectedObject& o = record.objects[i];
    const std::string obj = who + "object " + std::to_string(i) + ": ";
    const auto& b = o.box;
    for (double v : b) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw LoadError(obj + "box coordinate " + format_double(v) + " outside [0, 1]");
      }
    }
    if (!(b[0] < b[2])) throw LoadError(obj + "box needs x1 < x2");
    if (!(b[1] < b[3])) throw LoadError(obj + "box needs y1 < y2");
    if (o.feat.size() != limits.feature_dim) {
      throw LoadError(obj + "feature length " + std::to_string(o.feat.size()) + " != " +
                      std::to_string(limits.feature_dim));
    }
    for (double v : o.feat) {
      if (!std::isfinite(v)) throw LoadError(obj + "non-finite feature value");
    }
  }
}

FeatureStore read_features(std::istream& in, const FeatureLimits& limits) {
  FeatureStore store;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    try {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw LoadError(std::string("malformed JSON: ") + e.what());
      }
      ImageRecord rec = parse_record(j);
      validate_record(rec, limits);
      const std::string id = rec.image_id;
      if (!store.emplace(id, std::move(rec)).second) {
        throw LoadError("duplicate image_id \"" + id + "\"");
      }
    } catch (const LoadError& e) {
      throw LoadError("features " + line_prefix(line_no) + e.what());
    }
  }
  return store;
}

FeatureStore load_features(const std::filesystem::path& path, const FeatureLimits& limits) {
  auto in = open_input(path);
  try {
    return read_features(in, limits);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void write_features(std::ostream& out, const std::vector<ImageRecord>& records) {
  for (const ImageRecord& r : records) {
    out << "{\"image_id\":" << json(r.image_id).dump() << ",\"objects\":[";
    for (std::size_t i = 0; i < r.objects.size(); ++i) {
      const DetectedObject& o = r.objects[i];
      if (i) out << ',';
      out << "{\"box\":[";
      for (std::size_t k = 0; k < 4; ++k) out << (k ? "," : "") << format_double(o.box[k]);
      out << "],\"feat\":[";
      for (std::size_t k = 0; k < o.feat.size(); ++k) out << (k ? "," : "") << format_double(o.feat[k]);
      out << "]}";
    }
    out << "]}\n";
  }
}

void write_features(const std::filesystem::path& path, const std::vector<ImageRecord>& records) {
  auto out = open_output(path);
  write_features(out, records);
}

std::vector<LabeledPair> read_pairs(std::istream& in) {
  std::vector<LabeledPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const std::string where = "pairs " + line_prefix(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw LoadError(where + "malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw LoadError(where + "record is not a JSON object");
    LabeledPair p;
    const auto phrase = j.find("phrase");
    const auto image = j.find("image_id");
    const auto label = j.find("label");
    if (phrase == j.end() || !phrase->is_string()) throw LoadError(where + "missing string field phrase");
    if (image == j.end() || !image->is_string()) throw LoadError(where + "missing string field image_id");
    if (label == j.end() || !label->is_number_integer()) {
      throw LoadError(where + "label must be the integer 0 or 1");
    }
    const auto lv = label->get<std::int64_t>();
    if (lv != 0 && lv != 1) throw LoadError(where + "label " + std::to_string(lv) + " is not 0 or 1");
    p.phrase = phrase->get<std::string>();
    p.image_id = image->get<std::string>();
    p.label = static_cast<int>(lv);
    if (const auto app = j.find("app_id"); app != j.end() && !app->is_null()) {
      if (!app->is_string()) throw LoadError(where + "app_id must be a string");
      p.app_id = app->get<std::string>();
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<LabeledPair> load_pairs(const std::filesystem::path& path) {
  auto in = open_input(path);
  try {
    return read_pairs(in);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void write_pairs(std::ostream& out, const std::vector<LabeledPair>& pairs) {
  for (const LabeledPair& p : pairs) {
    json j = json::object();
    j["phrase"] = p.phrase;
    j["image_id"] = p.image_id;
    j["label"] = p.label;
    if (p.app_id) j["app_id"] = *p.app_id;
    out << j.dump() << '\n';
  }
}

void write_pairs(const std::filesystem::path& path, const std::vector<LabeledPair>& pairs) {
  auto out = open_output(path);
  write_pairs(out, pairs);
}

void validate_pool(const CandidatePool& pool) {
  if (pool.image_ids.empty()) throw LoadError("candidate pool is empty");
  std::set<std::string> seen;
  for (const auto& id : pool.image_ids) {
    if (!seen.insert(id).second) throw LoadError("candidate pool lists \"" + id + "\" twice");
  }
}

CandidatePool parse_pool(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw LoadError(std::string("pool: malformed JSON: ") + e.what());
  }
  const auto ids = j.is_object() ? j.find("image_ids") : j.end();
  if (!j.is_object() || ids == j.end() || !ids->is_array()) {
    throw LoadError("pool: expected {\"image_ids\": [...]}");
  }
  CandidatePool pool;
  for (const json& v : *ids) {
    if (!v.is_string()) throw LoadError("pool: image_ids must be strings");
    pool.image_ids.push_back(v.get<std::string>());
  }
  validate_pool(pool);
  return pool;
}

CandidatePool load_pool(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_pool(ss.str());
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void write_pool(const std::filesystem::path& path, const CandidatePool& pool) {
  auto out = open_output(path);
  out << json{{"image_ids", pool.image_ids}}.dump() << '\n';
}

void require_resolvable(const std::vector<LabeledPair>& pairs, const FeatureStore& store) {
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!store.count(pairs[i].image_id)) {
      throw LoadError("pair " + std::to_string(i) + " references unknown image \"" +
                      pairs[i].image_id + "\"");
    }
  }
}

ObjectInput ObjectInput::valid_only() const {
  std::size_t n = 0;
  for (double m : mask) n += m != 0.0;
  const std::size_t d = feats.cols();
  ObjectInput out{Tensor({n, 4}), Tensor({n, d}), std::vector<double>(n, 1.0)};
  for (std::size_t i = 0, r = 0; i < mask.size(); ++i) {
    if (mask[i] == 0.0) continue;
    std::copy_n(boxes.row(i).begin(), 4, out.boxes.row(r).begin());
    std::copy_n(feats.row(i).begin(), d, out.feats.row(r).begin());
    ++r;
  }
  return out;
}

ObjectInput PaddedImageBatch::image(std::size_t b) const {
  const std::size_t n = boxes.dim(1), d = feats.dim(2);
  ObjectInput in{Tensor({n, 4}), Tensor({n, d}), std::vector<double>(n)};
  auto bsrc = boxes.data().subspan(b * n * 4, n * 4);
  auto fsrc = feats.data().subspan(b * n * d, n * d);
  std::copy(bsrc.begin(), bsrc.end(), in.boxes.data().begin());
  std::copy(fsrc.begin(), fsrc.end(), in.feats.data().begin());
  for (std::size_t i = 0; i < n; ++i) in.mask[i] = obj_mask[b * n + i];
  return in;
}

PaddedImageBatch pad_images(const std::vector<const ImageRecord*>& records, std::size_t max_objects) {
  if (records.empty()) throw LoadError("pad_images: no records");
  if (max_objects == 0) throw ConfigError("pad_images: max_objects must be positive");
  const std::size_t d = records.front()->objects.at(0).feat.size();
  if (d == 0) throw LoadError("pad_images: empty feature vectors");
  const std::size_t b = records.size();
  PaddedImageBatch batch{Tensor({b, max_objects, 4}), Tensor({b, max_objects, d}),
                         Tensor({b, max_objects})};
  for (std::size_t r = 0; r < b; ++r) {
    const ImageRecord& rec = *records[r];
    if (rec.objects.empty()) throw LoadError("pad_images: image \"" + rec.image_id + "\" has no objects");
    if (rec.objects.size() > max_objects) {
      throw LoadError("pad_images: image \"" + rec.image_id + "\" has more than " +
                      std::to_string(max_objects) + " objects");
    }
    for (std::size_t i = 0; i < rec.objects.size(); ++i) {
      const DetectedObject& o = rec.objects[i];
      if (o.feat.size() != d) throw LoadError("pad_images: feature widths differ");
      std::copy(o.box.begin(), o.box.end(), batch.boxes.data().begin() + static_cast<std::ptrdiff_t>((r * max_objects + i) * 4));
      std::copy(o.feat.begin(), o.feat.end(), batch.feats.data().begin() + static_cast<std::ptrdiff_t>((r * max_objects + i) * d));
      batch.obj_mask[r * max_objects + i] = 1.0;
    }
  }
  return batch;
}

PaddedImageBatch pad_images(const std::vector<ImageRecord>& records, std::size_t max_objects) {
  std::vector<const ImageRecord*> ptrs;
  ptrs.reserve(records.size());
  for (const auto& r : records) ptrs.push_back(&r);
  return pad_images(ptrs, max_objects);
}

ObjectInput make_object_input(const ImageRecord& record, std::size_t max_objects) {
  return pad_images(std::vector<const ImageRecord*>{&record}, max_objects).image(0);
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<LabeledPair>& pairs,
                                                   const FeatureStore& store,
                                                   std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  require_resolvable(pairs, store);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates over raw generator draws.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace xmatch
