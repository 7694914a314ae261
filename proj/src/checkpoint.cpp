#include "mixseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>

#include "mixseg/errors.hpp"

namespace mixseg {

namespace {

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }

  void bytes(const char* data, std::size_t n) { out_.write(data, static_cast<std::streamsize>(n)); }

  void u8(std::uint8_t v) { bytes(reinterpret_cast<const char*>(&v), 1); }

  void u32(std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    bytes(b, 4);
  }

  void u64(std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    bytes(b, 8);
  }

  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }

  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void f32_array(const std::vector<float>& values) {
    for (float v : values) f32(v);
  }

  void close(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw IoError("write failure on " + path.string());
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path.string() + " for reading");
  }

  void bytes(char* data, std::size_t n) {
    in_.read(data, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError("checkpoint is truncated or corrupt");
    }
  }

  std::uint8_t u8() {
    char b;
    bytes(&b, 1);
    return static_cast<std::uint8_t>(b);
  }

  std::uint32_t u32() {
    char b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string str() {
    const std::uint32_t n = u32();
    if (n > (1u << 20)) throw FormatError("checkpoint name length " + std::to_string(n) + " is implausible");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  void f32_array(std::vector<float>& values) {
    for (auto& v : values) v = f32();
  }

  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

 private:
  std::ifstream in_;
};

constexpr std::uint8_t kDtypeF32 = 0;

void write_entry(Writer& w, const NamedTensor<float>& entry) {
  w.str(entry.name);
  w.u8(kDtypeF32);
  w.u8(static_cast<std::uint8_t>(entry.tensor->shape.size()));
  for (std::int64_t d : entry.tensor->shape) w.u32(static_cast<std::uint32_t>(d));
  w.f32_array(entry.tensor->data);
}

}  // namespace

void save_checkpoint(const Model<float>& model, const AdamState<float>* optimizer,
                     const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  Writer w(path);
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.u32(kCheckpointVersion);

  const auto& cfg = model.config;
  w.u32(static_cast<std::uint32_t>(cfg.num_classes));
  w.u32(static_cast<std::uint32_t>(cfg.input_size));
  w.u32(static_cast<std::uint32_t>(cfg.widths.size()));
  for (int width : cfg.widths) w.u32(static_cast<std::uint32_t>(width));
  w.u64(cfg.seed);

  w.u32(static_cast<std::uint32_t>(model.parameters.size() + model.buffers.size()));
  for (const auto& p : model.parameters) write_entry(w, p);
  for (const auto& b : model.buffers) write_entry(w, b);

  w.u8(optimizer ? 1 : 0);
  if (optimizer) {
    w.u64(static_cast<std::uint64_t>(optimizer->step_count));
    w.f32(optimizer->lr);
    w.f32(optimizer->beta1);
    w.f32(optimizer->beta2);
    w.f32(optimizer->epsilon);
    w.u32(static_cast<std::uint32_t>(optimizer->m.size()));
    for (std::size_t i = 0; i < optimizer->m.size(); ++i) {
      w.u64(optimizer->m[i].size());
      w.f32_array(optimizer->m[i]);
      w.f32_array(optimizer->v[i]);
    }
  }
  w.close(path);
}

Model<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected,
                             AdamState<float>* optimizer_out) {
  Reader r(path);
  char magic[sizeof(kCheckpointMagic)];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FormatError("bad checkpoint magic in " + path.string());
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }

  const auto num_classes = static_cast<int>(r.u32());
  const auto input_size = static_cast<int>(r.u32());
  const auto width_count = r.u32();
  if (width_count != expected.widths.size()) {
    throw ConfigError("checkpoint has " + std::to_string(width_count) + " encoder widths, expected " +
                      std::to_string(expected.widths.size()));
  }
  std::array<int, 4> widths{};
  for (auto& width : widths) width = static_cast<int>(r.u32());
  const std::uint64_t seed = r.u64();

  if (num_classes != expected.num_classes) {
    throw ConfigError("checkpoint was trained with C=" + std::to_string(num_classes) + ", expected C=" +
                      std::to_string(expected.num_classes));
  }
  if (input_size != expected.input_size) {
    throw ConfigError("checkpoint input_size " + std::to_string(input_size) + " does not match expected " +
                      std::to_string(expected.input_size));
  }
  if (widths != expected.widths) {
    throw ConfigError("checkpoint encoder widths do not match the expected configuration");
  }

  ModelConfig cfg = expected;
  cfg.seed = seed;
  Model<float> model = build_model<float>(cfg);

  std::unordered_map<std::string, TensorPtr<float>> by_name;
  for (const auto& p : model.parameters) by_name[p.name] = p.tensor;
  for (const auto& b : model.buffers) by_name[b.name] = b.tensor;

  const std::uint32_t entry_count = r.u32();
  if (entry_count != by_name.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(entry_count) + " tensors, expected " +
                      std::to_string(by_name.size()));
  }
  for (std::uint32_t e = 0; e < entry_count; ++e) {
    const std::string name = r.str();
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeF32) throw FormatError("unsupported dtype tag " + std::to_string(dtype));
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::int64_t>(r.u32());
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint tensor '" + name + "' has no match in the model");
    if (it->second->shape != shape) {
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                        shape_str(it->second->shape));
    }
    r.f32_array(it->second->data);
  }

  const std::uint8_t has_optimizer = r.u8();
  if (has_optimizer) {
    AdamState<float> state;
    state.step_count = static_cast<std::int64_t>(r.u64());
    state.lr = r.f32();
    state.beta1 = r.f32();
    state.beta2 = r.f32();
    state.epsilon = r.f32();
    const std::uint32_t params = r.u32();
    state.m.resize(params);
    state.v.resize(params);
    for (std::uint32_t i = 0; i < params; ++i) {
      const auto n = static_cast<std::size_t>(r.u64());
      state.m[i].resize(n);
      state.v[i].resize(n);
      r.f32_array(state.m[i]);
      r.f32_array(state.v[i]);
    }
    if (optimizer_out) *optimizer_out = std::move(state);
  }
  if (!r.at_eof()) throw FormatError("checkpoint has trailing bytes");
  return model;
}

}  // namespace mixseg
