#include <bit>
#include <cstring>
#include <fstream>

#include "sama/network.hpp"

namespace sama {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error(std::string("truncated checkpoint: ") + what);
  return v;
}

std::string take_string(std::istream& is, std::uint64_t len, const char* what) {
  if (len > (1ULL << 30)) throw std::runtime_error(std::string("corrupt checkpoint: oversized ") + what);
  std::string s(len, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(len)))
    throw std::runtime_error(std::string("truncated checkpoint: ") + what);
  return s;
}

}  // namespace

void save_checkpoint(const SamaModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, 5);
  nlohmann::json j = model.config();
  const std::string js = j.dump();
  put<std::uint64_t>(os, js.size());
  os.write(js.data(), static_cast<std::streamsize>(js.size()));
  const auto& params = model.params().all();
  put<std::uint64_t>(os, params.size());
  for (const auto& p : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
    for (auto dim : p.value.shape) put<std::uint64_t>(os, dim);
    os.write(reinterpret_cast<const char*>(p.value.data.data()), static_cast<std::streamsize>(p.value.size() * 8));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

SamaModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[5] = {};
  if (!is.read(magic, 5) || std::memcmp(magic, kCheckpointMagic, 5) != 0) throw std::runtime_error("bad checkpoint magic");
  const auto json_len = take<std::uint64_t>(is, "config length");
  ModelConfig cfg = nlohmann::json::parse(take_string(is, json_len, "config")).get<ModelConfig>();
  SamaModel model(cfg);
  const auto count = take<std::uint64_t>(is, "parameter count");
  if (count != model.params().all().size())
    throw std::runtime_error("checkpoint has " + std::to_string(count) + " parameters, config builds " +
                             std::to_string(model.params().all().size()));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = take_string(is, take<std::uint32_t>(is, "name length"), "name");
    Param* p = model.params().find(name);
    if (!p) throw std::runtime_error("checkpoint parameter '" + name + "' is not part of the model");
    const auto rank = take<std::uint32_t>(is, "rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(take<std::uint64_t>(is, "dims"));
    if (shape != p->value.shape)
      throw std::runtime_error("checkpoint parameter '" + name + "' has shape " + shape_str(shape) + ", expected " +
                               shape_str(p->value.shape));
    if (!is.read(reinterpret_cast<char*>(p->value.data.data()), static_cast<std::streamsize>(p->value.size() * 8)))
      throw std::runtime_error("truncated checkpoint: values of " + name);
  }
  return model;
}

}  // namespace sama
