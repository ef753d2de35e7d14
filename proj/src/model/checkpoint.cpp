#include "mtlface/model/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace mtlface::model {

namespace {

constexpr char kMagic[8] = {'M', 'T', 'L', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  void read_into(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, s_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > s_.size()) throw CheckpointError("checkpoint truncated");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const MtlFace& model, const nlohmann::json& extra) {
  const ModelConfig& cfg = model.config();
  nlohmann::json manifest = {{"format", "mtlface-checkpoint"},
                             {"preset", cfg.preset},
                             {"image_size", cfg.image_size},
                             {"n_g", cfg.n_groups},
                             {"F", cfg.bank_filters},
                             {"S", cfg.bank_shared},
                             {"d", cfg.embed_dim},
                             {"model", cfg},
                             {"extra", extra.is_null() ? nlohmann::json::object() : extra}};
  const std::string m = manifest.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, m.size());
  out += m;
  const auto& entries = model.params().entries();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& p : entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    const Shape& s = p.var.shape();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    for (auto d : s) put<std::int64_t>(out, d);
    out.append(reinterpret_cast<const char*>(p.var.value().data()), p.var.numel() * sizeof(float));
  }
  return out;
}

void save_checkpoint(const MtlFace& model, const std::string& path, const nlohmann::json& extra) {
  const std::string bytes = serialize_checkpoint(model, extra);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint to " + path);
}

LoadedCheckpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto mlen = r.get<std::uint64_t>();
  LoadedCheckpoint out;
  try {
    out.manifest = nlohmann::json::parse(r.bytes(mlen));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint manifest: ") + e.what());
  }
  ModelConfig cfg = out.manifest.at("model").get<ModelConfig>();
  out.model = std::make_unique<MtlFace>(cfg);
  auto& reg = out.model->params();
  const auto count = r.get<std::uint32_t>();
  if (count != reg.entries().size())
    throw CheckpointError("checkpoint has " + std::to_string(count) + " arrays, model expects " +
                          std::to_string(reg.entries().size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.get<std::uint32_t>());
    if (!reg.contains(name)) throw CheckpointError("unknown array " + name);
    nn::Param& p = reg.get(name);
    const auto nd = r.get<std::uint32_t>();
    Shape s(nd);
    for (auto& d : s) d = r.get<std::int64_t>();
    if (s != p.var.shape())
      throw CheckpointError("array " + name + " has shape " + shape_str(s) + ", expected " +
                            shape_str(p.var.shape()));
    r.read_into(p.var.mutable_value().data(), p.var.numel() * sizeof(float));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint");
  return out;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace mtlface::model
