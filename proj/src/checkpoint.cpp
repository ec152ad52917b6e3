#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "axcrf/training.hpp"

namespace axcrf {

namespace {

using json = nlohmann::json;

constexpr char kMagic[] = "AXCRF";
constexpr std::size_t kMagicLen = 5;

void append_doubles(std::string& out, const std::vector<double>& values) {
  for (double v : values) {
    auto u = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
  }
}

std::vector<double> read_doubles(const std::string& bytes, std::size_t offset, std::size_t count) {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b) {
      u |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + 8 * i + b])) << (8 * b);
    }
    out[i] = std::bit_cast<double>(u);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> xcrf_tensors(const AXcrfParams& x) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t li = 0; li < x.levels.size(); ++li) {
    const auto& l = x.levels[li];
    const std::string p = "xcrf" + std::to_string(li) + ".";
    out.emplace_back(p + "w_b", Tensor({1}, {l.w_b}));
    out.emplace_back(p + "w_s", Tensor({1}, {l.w_s}));
    out.emplace_back(p + "compat_offdiag", Tensor({l.compat_offdiag.size()}, l.compat_offdiag));
  }
  return out;
}

[[noreturn]] void corrupt(const std::string& what) {
  throw CheckpointError(CheckpointErrorCode::kCorruptHeader, "checkpoint header: " + what);
}

}  // namespace

std::string serialize_checkpoint(const ModelCheckpoint& ckpt) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (const auto& [name, t] : ckpt.unary.named_tensors()) tensors.emplace_back(name, *t);
  if (ckpt.xcrf) {
    for (auto& e : xcrf_tensors(*ckpt.xcrf)) tensors.push_back(std::move(e));
  }

  json blocks = json::array();
  for (const auto& b : ckpt.unary.blocks) {
    blocks.push_back({{"k", b.k}, {"stride", b.stride}, {"c_in", b.c_in}, {"c_delta", b.c_delta},
                      {"c_out", b.c_out}});
  }
  json manifest{
      {"config", ckpt.config.to_json()},
      {"normalizer", {{"min", ckpt.normalizer.min}, {"max", ckpt.normalizer.max}}},
      {"best_validation_oa", ckpt.best_validation_oa},
      {"iteration", ckpt.iteration},
      {"unary",
       {{"num_classes", ckpt.unary.num_classes},
        {"dropout_rate", ckpt.unary.dropout_rate},
        {"blocks", blocks}}},
  };
  if (ckpt.xcrf) {
    json levels = json::array();
    for (const auto& l : ckpt.xcrf->levels) {
      levels.push_back({{"num_classes", l.num_classes},
                        {"k", l.k},
                        {"stride", l.stride},
                        {"iterations", l.iterations},
                        {"theta", {l.theta.alpha, l.theta.beta, l.theta.gamma}}});
    }
    manifest["xcrf"] = {{"shared_weights", ckpt.xcrf->shared_weights},
                        {"theta_initialized", ckpt.xcrf->theta_initialized},
                        {"levels", levels}};
  } else {
    manifest["xcrf"] = nullptr;
  }
  json entries = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::size_t len = t.values.size() * sizeof(double);
    entries.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}, {"length", len}});
    offset += len;
  }
  manifest["tensors"] = entries;

  std::string out(kMagic, kMagicLen);
  out.push_back(static_cast<char>(ModelCheckpoint::kFormatVersion));
  out += manifest.dump();
  out.push_back('\n');
  for (const auto& [name, t] : tensors) append_doubles(out, t.values);
  return out;
}

ModelCheckpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicLen + 1 || bytes.compare(0, kMagicLen, kMagic) != 0) {
    corrupt("missing magic bytes");
  }
  const auto version = static_cast<std::uint8_t>(bytes[kMagicLen]);
  if (version != ModelCheckpoint::kFormatVersion) {
    throw CheckpointError(CheckpointErrorCode::kVersionMismatch,
                          "checkpoint format version " + std::to_string(version) + ", expected " +
                              std::to_string(ModelCheckpoint::kFormatVersion));
  }
  const std::size_t eol = bytes.find('\n', kMagicLen + 1);
  if (eol == std::string::npos) corrupt("manifest line not terminated");

  ModelCheckpoint c;
  std::map<std::string, Tensor> tensors;
  try {
    const json m = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(kMagicLen + 1),
                               bytes.begin() + static_cast<std::ptrdiff_t>(eol));
    c.config = TrainConfig::from_json(m.at("config"));
    c.normalizer.min = m.at("normalizer").at("min").get<std::vector<double>>();
    c.normalizer.max = m.at("normalizer").at("max").get<std::vector<double>>();
    c.best_validation_oa = m.at("best_validation_oa").get<double>();
    c.iteration = m.at("iteration").get<std::uint64_t>();

    const json& u = m.at("unary");
    c.unary.num_classes = u.at("num_classes").get<int>();
    c.unary.dropout_rate = u.at("dropout_rate").get<double>();
    for (const json& b : u.at("blocks")) {
      XConvParams x;
      x.k = b.at("k").get<std::size_t>();
      x.stride = b.at("stride").get<std::size_t>();
      x.c_in = b.at("c_in").get<std::size_t>();
      x.c_delta = b.at("c_delta").get<std::size_t>();
      x.c_out = b.at("c_out").get<std::size_t>();
      c.unary.blocks.push_back(std::move(x));
    }
    if (!m.at("xcrf").is_null()) {
      const json& xj = m.at("xcrf");
      AXcrfParams x;
      x.shared_weights = xj.at("shared_weights").get<bool>();
      x.theta_initialized = xj.at("theta_initialized").get<bool>();
      for (const json& l : xj.at("levels")) {
        XcrfLevelParams p;
        p.num_classes = l.at("num_classes").get<int>();
        p.k = l.at("k").get<std::size_t>();
        p.stride = l.at("stride").get<std::size_t>();
        p.iterations = l.at("iterations").get<std::size_t>();
        const auto th = l.at("theta").get<std::vector<double>>();
        if (th.size() != 3) corrupt("bandwidths need three values");
        p.theta = {th[0], th[1], th[2]};
        x.levels.push_back(std::move(p));
      }
      c.xcrf = std::move(x);
    }

    const std::size_t payload = eol + 1;
    for (const json& e : m.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto length = e.at("length").get<std::size_t>();
      if (length != shape_size(shape) * sizeof(double)) corrupt("tensor " + name + " length mismatch");
      if (payload + offset + length > bytes.size()) {
        throw CheckpointError(CheckpointErrorCode::kTruncatedPayload,
                              "checkpoint payload truncated in tensor " + name);
      }
      tensors.emplace(name, Tensor(shape, read_doubles(bytes, payload + offset, shape_size(shape))));
    }
  } catch (const json::exception& e) {
    corrupt(e.what());
  } catch (const std::invalid_argument& e) {
    corrupt(e.what());
  }

  auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) corrupt("tensor " + name + " missing");
    return it->second;
  };
  for (auto& [name, t] : c.unary.named_tensors()) *t = take(name);
  if (c.xcrf) {
    for (std::size_t li = 0; li < c.xcrf->levels.size(); ++li) {
      auto& l = c.xcrf->levels[li];
      const std::string p = "xcrf" + std::to_string(li) + ".";
      l.w_b = take(p + "w_b").values.at(0);
      l.w_s = take(p + "w_s").values.at(0);
      l.compat_offdiag = take(p + "compat_offdiag").values;
    }
  }
  return c;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrorCode::kIo, "write failed for " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace axcrf
