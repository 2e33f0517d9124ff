#include "unfmri/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace unfmri {

namespace {

constexpr char kMagic[8] = {'U', 'N', 'F', 'M', 'R', 'I', 'C', 'K'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>((v >> (8 * b)) & 0xffu));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>((v >> (8 * b)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t uint(int width) {
    const auto s = take(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int b = 0; b < width; ++b) v |= static_cast<std::uint64_t>(s[b]) << (8 * b);
    return v;
  }
  std::string text(std::size_t n) {
    const auto s = take(n);
    return std::string(s.begin(), s.end());
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

int int_key(const std::map<std::string, std::string>& keys, const std::string& key) {
  const auto it = keys.find(key);
  if (it == keys.end()) throw CheckpointError("checkpoint manifest lacks '" + key + "'");
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw CheckpointError("checkpoint manifest key '" + key + "' is not an integer");
  }
}

}  // namespace

std::string config_manifest(const UnfoldConfig& c) {
  std::ostringstream os;
  os << "format_version=" << kCheckpointFormat << '\n'
     << "variant=" << to_string(c.variant) << '\n'
     << "denoiser=" << to_string(c.resolved_denoiser()) << '\n'
     << "num_stages=" << c.num_stages << '\n'
     << "num_splits=" << c.num_splits << '\n'
     << "channels=" << c.channels << '\n'
     << "window=" << c.window << '\n'
     << "heads=" << c.heads << '\n'
     << "height=" << c.height << '\n'
     << "width=" << c.width << '\n'
     << "pgsa_groups=" << c.pgsa_groups << '\n'
     << "reduction=" << c.reduction << '\n';
  os << "stages=";
  for (int k = 0; k < c.num_stages; ++k) os << (k ? "," : "") << k;
  os << '\n';
  return os.str();
}

UnfoldConfig parse_config_manifest(const std::map<std::string, std::string>& keys) {
  if (int_key(keys, "format_version") != kCheckpointFormat) throw CheckpointError("unsupported checkpoint format");
  UnfoldConfig c;
  try {
    c.variant = parse_variant(keys.at("variant"));
    c.denoiser = parse_denoiser(keys.at("denoiser"));
  } catch (const std::out_of_range&) {
    throw CheckpointError("checkpoint manifest lacks variant or denoiser");
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(e.what());
  }
  c.num_stages = int_key(keys, "num_stages");
  c.num_splits = int_key(keys, "num_splits");
  c.channels = int_key(keys, "channels");
  c.window = int_key(keys, "window");
  c.heads = int_key(keys, "heads");
  c.height = int_key(keys, "height");
  c.width = int_key(keys, "width");
  c.pgsa_groups = int_key(keys, "pgsa_groups");
  c.reduction = int_key(keys, "reduction");
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::string manifest = config_manifest(ckpt.config);
  manifest += "parameters=" + std::to_string(ckpt.parameters.size()) + '\n';
  for (const auto& [k, v] : ckpt.extra) manifest += "extra." + k + '=' + v + '\n';
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_u32(out, static_cast<std::uint32_t>(manifest.size()));
  out.insert(out.end(), manifest.begin(), manifest.end());
  put_u32(out, static_cast<std::uint32_t>(ckpt.parameters.size()));
  for (const auto& [name, t] : ckpt.parameters) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    std::vector<std::uint32_t> shape(t.shape().begin(), t.shape().end());
    const std::vector<std::uint8_t> blob = encode_container(make_real_container(shape, t.values(), DType::F64));
    put_u64(out, blob.size());
    out.insert(out.end(), blob.begin(), blob.end());
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(8);
  if (std::memcmp(magic.data(), kMagic, 8) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  const std::string manifest = r.text(r.uint(4));
  std::map<std::string, std::string> keys;
  std::istringstream in(manifest);
  std::string line;
  Checkpoint ckpt;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key.rfind("extra.", 0) == 0) {
      ckpt.extra[key.substr(6)] = value;
    } else {
      keys[key] = value;
    }
  }
  ckpt.config = parse_config_manifest(keys);
  const std::uint64_t count = r.uint(4);
  if (static_cast<int>(count) != int_key(keys, "parameters")) throw CheckpointError("parameter count mismatch");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.text(r.uint(4));
    const std::uint64_t len = r.uint(8);
    const TensorContainer c = decode_container(r.take(len));
    if (c.dtype != DType::F64) throw CheckpointError("parameter '" + name + "' is not f64");
    std::vector<int> shape(c.shape.begin(), c.shape.end());
    ckpt.parameters.emplace_back(std::move(name), Tensor(std::move(shape), container_reals(c)));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ContainerError(ContainerErrorCode::Io, "cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ContainerError(ContainerErrorCode::Io, "checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContainerError(ContainerErrorCode::Io, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint make_checkpoint(const UnfoldModel& model, const ParameterSnapshot& params,
                           std::map<std::string, std::string> extra) {
  return {model.config(), std::move(extra), params};
}

UnfoldModel instantiate(const Checkpoint& ckpt) {
  UnfoldModel model(ckpt.config, 0);
  try {
    restore(model, ckpt.parameters);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint does not match its manifest: ") + e.what());
  }
  return model;
}

}  // namespace unfmri
