#include "ple/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ple/error.hpp"

namespace ple {
namespace {

constexpr char kMagic[4] = {'P', 'L', 'E', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_blob(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated in ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8, "payload");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string blob(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

nlohmann::json parse_json(const std::string& text, const char* what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint ") + what + " is not valid JSON: " + e.what());
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params) {
  nlohmann::json manifest;
  manifest["experts"] = params.num_experts();
  manifest["segments"] = nlohmann::json::array();
  std::size_t offset = 0;
  const auto& values = params.values();
  for (std::size_t s = 0; s < values.num_segments(); ++s) {
    manifest["segments"].push_back({{"name", values.name(s)},
                                    {"shape", values[s].shape()},
                                    {"offset", offset},
                                    {"label", block_label(params.block(s))}});
    offset += values[s].size() * sizeof(double);
  }
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_blob(out, to_json(params.config()).dump());
  put_blob(out, manifest.dump());
  out.reserve(out.size() + offset);
  for (const auto& seg : values) {
    for (double d : seg.value.data()) put_f64(out, d);
  }
  return out;
}

ModelParams deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a PLE1 checkpoint");
  (void)r.u32("magic");  // skip the magic bytes
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const PleConfig config = config_from_json(parse_json(r.blob("config"), "config"));
  const nlohmann::json manifest = parse_json(r.blob("manifest"), "manifest");
  ParamVector values;
  std::vector<std::string> labels;
  std::size_t num_experts = 0;
  const std::size_t payload_start = r.pos();
  try {
    num_experts = manifest.at("experts").get<std::size_t>();
    for (const auto& seg : manifest.at("segments")) {
      const Shape shape = seg.at("shape").get<Shape>();
      const std::size_t offset = seg.at("offset").get<std::size_t>();
      if (r.pos() - payload_start != offset) {
        throw FormatError("segment '" + seg.at("name").get<std::string>() +
                          "' offset does not follow the previous segment");
      }
      std::vector<double> data(shape_size(shape));
      for (double& d : data) d = r.f64();
      values.add(seg.at("name").get<std::string>(), Tensor(shape, std::move(data)));
      labels.push_back(seg.at("label").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  if (r.remaining() != 0) throw FormatError("checkpoint has trailing bytes after the payload");
  ModelParams params = ModelParams::from_segments(config, num_experts, std::move(values));
  for (std::size_t s = 0; s < labels.size(); ++s) {
    if (parse_block_label(labels[s]) != params.block(s)) {
      throw FormatError("segment '" + params.values().name(s) + "' has label " + labels[s] +
                        ", expected " + std::string(block_label(params.block(s))));
    }
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  const auto bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

std::filesystem::path vocab_path_for(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".vocab");
}

}  // namespace ple
