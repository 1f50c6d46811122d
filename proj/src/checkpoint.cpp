#include "csta/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "../vendor/json.hpp"

namespace csta {

namespace {

constexpr char kMagic[8] = {'C', 'S', 'T', 'A', 'C', 'K', 'P', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string checkpoint_bytes(const Model& model, const std::vector<std::string>& names) {
  nlohmann::ordered_json index;
  index["schema"] = "csta-checkpoint/1";
  index["params"] = nlohmann::ordered_json::array();
  std::int64_t offset = 0;
  for (const std::string& name : names) {
    const Tensor& t = model.param(name);
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    entry["trainable"] = model.is_trainable(name);
    index["params"].push_back(std::move(entry));
    offset += t.numel();
  }
  const std::string index_text = index.dump();

  std::string out;
  out.reserve(16 + index_text.size() + static_cast<size_t>(offset) * 8);
  out.append(kMagic, 8);
  put_u64(out, index_text.size());
  out += index_text;
  for (const std::string& name : names) {
    const std::vector<double>& v = model.param(name).values();
    const size_t at = out.size();
    out.resize(at + v.size() * 8);
    std::memcpy(out.data() + at, v.data(), v.size() * 8);  // little-endian host
  }
  return out;
}

void save_checkpoint(const Model& model, const std::string& path) {
  const std::string bytes = checkpoint_bytes(model, model.param_names());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("checkpoint: short write to " + path);
}

void load_checkpoint(Model& model, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot read " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  }
  const std::uint64_t index_len = get_u64(bytes, 8);
  if (16 + index_len > bytes.size()) throw std::runtime_error("checkpoint: truncated index");
  nlohmann::json index = nlohmann::json::parse(bytes.substr(16, index_len));
  if (index.value("schema", "") != "csta-checkpoint/1") {
    throw std::runtime_error("checkpoint: unsupported schema in " + path);
  }
  const size_t payload_at = 16 + index_len;
  size_t restored = 0;
  for (const auto& entry : index.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    if (!model.has_param(name)) throw std::runtime_error("checkpoint: model lacks " + name);
    Tensor& t = model.param(name);
    const Shape shape = entry.at("shape").get<Shape>();
    if (shape != t.shape()) throw std::runtime_error("checkpoint: shape mismatch for " + name);
    const size_t at = payload_at + entry.at("offset").get<std::uint64_t>() * 8;
    const size_t len = t.values().size() * 8;
    if (at + len > bytes.size()) throw std::runtime_error("checkpoint: truncated payload");
    std::memcpy(t.values().data(), bytes.data() + at, len);
    model.set_trainable(name, entry.at("trainable").get<bool>());
    ++restored;
  }
  if (restored != model.param_names().size()) {
    throw std::runtime_error("checkpoint: " + path + " does not cover every model parameter");
  }
}

}  // namespace csta
