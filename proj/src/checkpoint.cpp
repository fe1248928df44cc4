#include "fhs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fhs {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written via memcpy and assumes a little-endian host");

namespace {

void check_name(const std::string& name) {
  if (name.empty() || name.find(' ') != std::string::npos ||
      name.find('\n') != std::string::npos)
    throw std::invalid_argument("checkpoint: invalid tensor name '" + name + "'");
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  f << "FHS1 " << tensors.size() << "\n";
  for (const auto& [name, t] : tensors) {
    check_name(name);
    f << name << ' ' << t->shape.size();
    for (int d : t->shape) f << ' ' << d;
    f << '\n';
    f.write(reinterpret_cast<const char*>(t->data.data()),
            static_cast<std::streamsize>(t->data.size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

void save_checkpoint(const std::string& path, const ParamSet& params) {
  std::vector<std::pair<std::string, const Tensor*>> flat;
  flat.reserve(params.size());
  for (const auto& [name, t] : params.items) flat.emplace_back(name, &t);
  save_checkpoint(path, flat);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string header;
  if (!std::getline(f, header)) throw std::runtime_error("checkpoint: empty file " + path);
  std::istringstream hs(header);
  std::string magic;
  std::size_t count = 0;
  if (!(hs >> magic >> count) || magic != "FHS1")
    throw std::runtime_error("checkpoint: bad magic in " + path);

  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::string line;
    if (!std::getline(f, line))
      throw std::runtime_error("checkpoint: truncated header at tensor " + std::to_string(i));
    std::istringstream ls(line);
    std::string name;
    int rank = 0;
    if (!(ls >> name >> rank) || rank < 0)
      throw std::runtime_error("checkpoint: malformed tensor header '" + line + "'");
    std::vector<int> shape(static_cast<std::size_t>(rank));
    for (int& d : shape)
      if (!(ls >> d) || d < 0)
        throw std::runtime_error("checkpoint: malformed dims in '" + line + "'");
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (f.gcount() != static_cast<std::streamsize>(t.data.size() * sizeof(double)))
      throw std::runtime_error("checkpoint: truncated payload for tensor " + name);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace fhs
