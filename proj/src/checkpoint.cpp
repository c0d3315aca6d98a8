#include "iskd/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "iskd/json_io.hpp"

namespace iskd {

using nlohmann::json;

nlohmann::json architecture_to_json(const Architecture& arch) {
  json layers = json::array();
  for (const LayerSpec& l : arch.layers) {
    json j{{"kind", std::string(to_string(l.kind))}};
    switch (l.kind) {
      case LayerKind::dense:
        j["in"] = l.in;
        j["out"] = l.out;
        break;
      case LayerKind::conv2d:
        j["in"] = l.in;
        j["out"] = l.out;
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        j["pad"] = l.pad;
        break;
      case LayerKind::maxpool2d:
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        break;
      default: break;
    }
    layers.push_back(std::move(j));
  }
  return json{{"input_shape", arch.input_shape}, {"class_count", arch.class_count},
              {"layers", std::move(layers)}};
}

Architecture architecture_from_json(const nlohmann::json& j) {
  try {
    Architecture arch;
    arch.input_shape = j.at("input_shape").get<Shape>();
    arch.class_count = j.at("class_count").get<std::size_t>();
    for (const json& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = layer_kind_from_string(lj.at("kind").get<std::string>());
      l.in = lj.value("in", std::size_t{0});
      l.out = lj.value("out", std::size_t{0});
      l.kernel = lj.value("kernel", std::size_t{0});
      l.stride = lj.value("stride", std::size_t{1});
      l.pad = lj.value("pad", std::size_t{0});
      arch.layers.push_back(l);
    }
    return arch;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad architecture descriptor: ") + e.what());
  }
}

nlohmann::json meta_to_json(const CheckpointMeta& meta) {
  json j{{"iteration", meta.iteration}, {"epochs", meta.epochs}, {"seed", meta.seed}};
  j["test_accuracy"] = meta.test_accuracy ? json(*meta.test_accuracy) : json(nullptr);
  return j;
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  try {
    CheckpointMeta meta;
    meta.iteration = j.at("iteration").get<std::size_t>();
    meta.epochs = j.at("epochs").get<std::size_t>();
    meta.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("test_accuracy") && !j["test_accuracy"].is_null()) {
      meta.test_accuracy = j["test_accuracy"].get<double>();
    }
    return meta;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint metadata: ") + e.what());
  }
}

namespace {

constexpr std::string_view kMagic = "ISKD";

template <typename U>
void put(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what);
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Network& network, const CheckpointMeta& meta) {
  const json descriptor{{"architecture", architecture_to_json(network.architecture())},
                        {"metadata", meta_to_json(meta)},
                        {"param_count", network.params().size()}};
  const std::string text = descriptor.dump();

  std::string out(kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& p : network.params()) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : p.value.data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(kMagic.size(), "magic") != kMagic) throw FormatError("not a checkpoint: bad magic bytes");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto text_len = in.get<std::uint32_t>("descriptor length");
  json descriptor;
  try {
    descriptor = json::parse(in.take(text_len, "descriptor"));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint descriptor is not valid JSON: ") + e.what());
  }
  if (!descriptor.contains("architecture") || !descriptor.contains("metadata")) {
    throw FormatError("checkpoint descriptor lacks architecture or metadata");
  }

  Checkpoint ckpt;
  try {
    ckpt.network = build_network(architecture_from_json(descriptor["architecture"]));
  } catch (const BuildError& e) {
    throw FormatError(std::string("checkpoint architecture is invalid: ") + e.what());
  }
  ckpt.meta = meta_from_json(descriptor["metadata"]);

  auto params = ckpt.network.mutable_params();
  if (descriptor.value("param_count", params.size()) != params.size()) {
    throw FormatError("checkpoint parameter count does not match its architecture");
  }
  for (auto& p : params) {
    const auto name_len = in.get<std::uint16_t>("parameter name length");
    const auto name = in.take(name_len, "parameter name");
    if (name != p.name) {
      throw FormatError("expected parameter '" + p.name + "', found '" + std::string(name) + "'");
    }
    const auto ndim = in.get<std::uint8_t>("parameter rank");
    Shape shape;
    for (std::uint8_t i = 0; i < ndim; ++i) shape.push_back(in.get<std::uint32_t>("dimension"));
    if (shape != p.value.shape()) {
      throw FormatError("parameter '" + p.name + "' has shape " + shape_string(shape) +
                        ", architecture expects " + shape_string(p.value.shape()));
    }
    for (auto& v : p.value.data()) v = std::bit_cast<float>(in.get<std::uint32_t>("parameter data"));
  }
  if (!in.done()) throw FormatError("trailing bytes after last parameter");
  ckpt.network.mark_initialized();
  return ckpt;
}

void save_checkpoint(const Network& network, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(network, meta);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

CheckpointMeta load_checkpoint_into(Network& network, const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!(ckpt.network.architecture() == network.architecture())) {
    throw FormatError("checkpoint architecture does not match the target network");
  }
  network = std::move(ckpt.network);
  return ckpt.meta;
}

}  // namespace iskd
