#include "agnet/checkpoint.hpp"

#include <fstream>

#include "binary_io.hpp"

namespace agnet {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[5] = "AGNC";
const std::string kMomentumPrefix = "momentum/";

void write_tensor(std::ostream& out, const std::string& name, const Tensor<float>& t) {
  io::write_string(out, name);
  io::write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) io::write_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.values()) io::write_f32(out, v);
}

void copy_into(const Checkpoint& ckpt, const std::string& prefix, NetworkParams<float>& params) {
  params.for_each([&](const std::string& name, Tensor<float>& t) {
    const Tensor<float>* src = ckpt.find(prefix + name);
    if (src == nullptr) throw FormatError("checkpoint is missing tensor '" + prefix + name + "'");
    if (src->shape() != t.shape()) {
      throw ConfigError("checkpoint tensor '" + prefix + name + "' has shape " +
                        src->shape_string() + ", model expects " + t.shape_string());
    }
    t = *src;
  });
}

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const fs::path& path, const Model& model, int epoch,
                     const NetworkParams<float>* momentum) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, 4);
    io::write_u32(out, kCheckpointVersion);
    io::write_string(out, model.config().echo());
    io::write_u64(out, model.config().seed);
    io::write_u32(out, static_cast<std::uint32_t>(epoch));

    std::uint32_t count = 0;
    model.params().for_each([&](const std::string&, const Tensor<float>&) { ++count; });
    io::write_u32(out, momentum != nullptr ? 2 * count : count);
    model.params().for_each(
        [&](const std::string& name, const Tensor<float>& t) { write_tensor(out, name, t); });
    if (momentum != nullptr) {
      momentum->for_each([&](const std::string& name, const Tensor<float>& t) {
        write_tensor(out, kMomentumPrefix + name, t);
      });
    }
    out.flush();
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  io::expect_magic(in, kMagic, path.string());
  const std::uint32_t version = io::read_u32(in, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config = ModelConfig::parse_echo(io::read_string(in, "config echo"));
  ckpt.seed = io::read_u64(in, "seed");
  ckpt.config.seed = ckpt.seed;
  ckpt.epoch = static_cast<int>(io::read_u32(in, "epoch"));
  const std::uint32_t count = io::read_u32(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = io::read_string(in, "tensor name", 4096);
    const std::uint32_t rank = io::read_u32(in, "tensor rank");
    if (rank > 8) throw FormatError(path.string() + ": implausible rank for '" + name + "'");
    std::vector<int> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<int>(io::read_u32(in, "tensor dims"));
      n *= static_cast<std::size_t>(d);
    }
    if (n > (std::size_t{1} << 32)) throw FormatError(path.string() + ": tensor '" + name + "' too large");
    std::vector<float> values(n);
    for (auto& v : values) v = io::read_f32(in, "tensor values");
    ckpt.tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  return ckpt;
}

Model restore_model(const Checkpoint& checkpoint, const ModelConfig* expected) {
  if (expected != nullptr && !expected->architecture_matches(checkpoint.config)) {
    throw ConfigError("checkpoint config is incompatible with the requested model:\n" +
                      checkpoint.config.echo() + "vs\n" + expected->echo());
  }
  Model model(checkpoint.config);
  copy_into(checkpoint, "", model.params());
  return model;
}

bool restore_momentum(const Checkpoint& checkpoint, NetworkParams<float>& momentum) {
  bool any = false;
  for (const auto& entry : checkpoint.tensors) {
    if (entry.first.rfind(kMomentumPrefix, 0) == 0) {
      any = true;
      break;
    }
  }
  if (!any) return false;
  copy_into(checkpoint, kMomentumPrefix, momentum);
  return true;
}

}  // namespace agnet
