#include "xmatch/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "xmatch/config.hpp"
#include "xmatch/error.hpp"

namespace xmatch {
namespace {

template <typename T>
void put_le(std::ostream& out, T v) {
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
  }
  out.write(bytes, sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw LoadError(std::string("checkpoint truncated while reading ") + what);
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(v);
}

void put_string(std::ostream& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const char* what) {
  const auto len = get_le<std::uint32_t>(in, what);
  std::string s(len, '\0');
  if (len && !in.read(s.data(), len)) throw LoadError(std::string("checkpoint truncated in ") + what);
  return s;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kCheckpointMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(ckpt.kind));
  put_string(out, ckpt.config_json);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    put_string(out, e.name);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : e.value.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw LoadError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw LoadError("not a checkpoint (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw LoadError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto kind = get_le<std::uint8_t>(in, "model kind");
  if (kind > static_cast<std::uint8_t>(ModelKind::kDual)) {
    throw LoadError("unknown model kind tag " + std::to_string(kind));
  }
  ckpt.kind = static_cast<ModelKind>(kind);
  ckpt.config_json = get_string(in, "config");
  const auto count = get_le<std::uint32_t>(in, "entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = get_string(in, "entry name");
    const auto rank = get_le<std::uint8_t>(in, "rank");
    Shape shape(rank);
    for (auto& d : shape) {
      d = get_le<std::uint32_t>(in, "dims");
      if (d == 0) throw LoadError("checkpoint entry " + e.name + " has a zero extent");
    }
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = std::bit_cast<double>(get_le<std::uint64_t>(in, "values"));
    e.value = Tensor(std::move(shape), std::move(values));
    ckpt.entries.push_back(std::move(e));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw LoadError("trailing bytes after checkpoint");
  return ckpt;
}

Checkpoint checkpoint_from(const Matcher& model, const std::string& config_json) {
  Checkpoint ckpt;
  ckpt.kind = model.kind();
  ckpt.config_json = config_json;
  for (const Parameter* p : model.parameters().all()) ckpt.entries.push_back({p->name, p->value});
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write checkpoint " + path.string());
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  try {
    return read_checkpoint(in);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void apply_checkpoint(const Checkpoint& ckpt, Matcher& model) {
  if (ckpt.kind != model.kind()) {
    throw LoadError("checkpoint holds a " + std::string(model_kind_name(ckpt.kind)) +
                    " model but a " + std::string(model_kind_name(model.kind())) + " model was requested");
  }
  const auto params = model.parameters().all();
  const std::size_t n = std::max(params.size(), ckpt.entries.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= ckpt.entries.size()) throw LoadError("checkpoint is missing parameter " + params[i]->name);
    if (i >= params.size()) throw LoadError("checkpoint has unexpected parameter " + ckpt.entries[i].name);
    if (ckpt.entries[i].name != params[i]->name) {
      throw LoadError("checkpoint parameter mismatch at entry " + std::to_string(i) + ": expected " +
                      params[i]->name + ", found " + ckpt.entries[i].name);
    }
    if (ckpt.entries[i].value.shape() != params[i]->value.shape()) {
      throw LoadError("checkpoint parameter " + params[i]->name + " has shape " +
                      shape_string(ckpt.entries[i].value.shape()) + ", model expects " +
                      shape_string(params[i]->value.shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = ckpt.entries[i].value;
}

std::unique_ptr<Matcher> matcher_from_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ckpt.config_json);
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  auto model = make_matcher(ckpt.kind, model_config_from_json(j));
  apply_checkpoint(ckpt, *model);
  return model;
}

}  // namespace xmatch
