#include "ddsm/io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace ddsm {
namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream is(path, mode);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return is;
}

// Skips whitespace and '#' comments between PNM header tokens.
std::string pnm_token(std::istream& is) {
  std::string tok;
  while (is) {
    const int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  is >> tok;
  return tok;
}

std::size_t parse_size(const std::string& tok, const std::string& what) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) throw std::runtime_error("bad " + what + ": '" + tok + "'");
  return v;
}

}  // namespace

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_tensor(std::ostream& os, const Tensor& t) {
  os << "shape:";
  for (auto d : t.shape()) os << ' ' << d;
  os << '\n';
  for (double v : t.data()) os << format_real(v) << '\n';
}

Tensor read_tensor(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("shape:", 0) != 0) {
    throw std::runtime_error("tensor file: missing 'shape:' header");
  }
  Shape shape;
  std::istringstream hs(line.substr(6));
  for (std::string tok; hs >> tok;) shape.push_back(parse_size(tok, "extent"));
  std::vector<double> data;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc()) throw std::runtime_error("tensor file: bad value '" + line + "'");
    data.push_back(v);
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  auto os = open_out(path);
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_tensor(is);
}

void save_checkpoint(const std::filesystem::path& dir, const ParamList& params) {
  std::filesystem::create_directories(dir);
  auto manifest = open_out(dir / "manifest.txt");
  for (const auto& nt : params) {
    const std::string file = nt.name + ".txt";
    manifest << nt.name << ' ' << file << '\n';
    save_tensor(dir / file, *nt.tensor);
  }
}

void load_checkpoint(const std::filesystem::path& dir, const ParamList& params) {
  std::map<std::string, Tensor*> by_name;
  for (const auto& nt : params) by_name[nt.name] = nt.tensor;
  auto manifest = open_in(dir / "manifest.txt");
  std::size_t loaded = 0;
  for (std::string name, file; manifest >> name >> file;) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint: unknown parameter '" + name + "'");
    Tensor t = load_tensor(dir / file);
    expect_shape(t, it->second->shape(), name.c_str());
    *it->second = std::move(t);
    ++loaded;
  }
  if (loaded != params.size()) {
    throw std::runtime_error("checkpoint: " + std::to_string(loaded) + " of " + std::to_string(params.size()) +
                             " parameters present");
  }
}

LabelMap read_pgm(const std::filesystem::path& path) {
  auto is = open_in(path, std::ios::in | std::ios::binary);
  const std::string magic = pnm_token(is);
  if (magic != "P2" && magic != "P5") throw std::runtime_error(path.string() + ": not a PGM file");
  LabelMap m;
  m.width = parse_size(pnm_token(is), "width");
  m.height = parse_size(pnm_token(is), "height");
  const std::size_t maxval = parse_size(pnm_token(is), "maxval");
  if (m.width == 0 || m.height == 0 || maxval == 0 || maxval > 65535) {
    throw std::runtime_error(path.string() + ": bad PGM header");
  }
  m.labels.resize(m.width * m.height);
  if (magic == "P2") {
    for (auto& v : m.labels) v = static_cast<int>(parse_size(pnm_token(is), "pixel"));
  } else {
    is.get();  // single whitespace after maxval
    const std::size_t bytes = maxval < 256 ? 1 : 2;
    for (auto& v : m.labels) {
      unsigned char buf[2] = {0, 0};
      is.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(bytes));
      v = bytes == 1 ? buf[0] : (buf[0] << 8) | buf[1];
    }
  }
  if (!is) throw std::runtime_error(path.string() + ": truncated PGM data");
  return m;
}

void write_pgm_labels(const std::filesystem::path& path, const LabelMap& map) {
  auto os = open_out(path);
  int maxval = 1;
  for (int v : map.labels) maxval = std::max(maxval, v);
  os << "P2\n" << map.width << ' ' << map.height << '\n' << maxval << '\n';
  for (std::size_t y = 0; y < map.height; ++y) {
    for (std::size_t x = 0; x < map.width; ++x) os << (x ? " " : "") << map.at(y, x);
    os << '\n';
  }
}

std::vector<std::uint8_t> normalize_to_bytes(const Tensor& map) {
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  std::vector<std::uint8_t> out(map.size(), 128);
  if (*hi - *lo <= 0.0) return out;
  for (std::size_t i = 0; i < map.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (map[i] - *lo) / (*hi - *lo)));
  }
  return out;
}

void write_pgm_image(const std::filesystem::path& path, const Tensor& map) {
  expect_rank(map, 3, "write_pgm_image");
  const auto bytes = normalize_to_bytes(map);
  auto os = open_out(path);
  os << "P2\n" << map.dim(2) << ' ' << map.dim(1) << "\n255\n";
  for (std::size_t y = 0; y < map.dim(1); ++y) {
    for (std::size_t x = 0; x < map.dim(2); ++x) os << (x ? " " : "") << int(bytes[y * map.dim(2) + x]);
    os << '\n';
  }
}

void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<Rgb>& pixels) {
  if (pixels.size() != height * width) throw std::invalid_argument("write_ppm: pixel count mismatch");
  auto os = open_out(path);
  os << "P3\n" << width << ' ' << height << "\n255\n";
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const Rgb& p = pixels[y * width + x];
      os << (x ? " " : "") << int(p.r) << ' ' << int(p.g) << ' ' << int(p.b);
    }
    os << '\n';
  }
}

}  // namespace ddsm
