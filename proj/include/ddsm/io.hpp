#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ddsm/params.hpp"
#include "ddsm/tensor.hpp"

namespace ddsm {

// Shortest decimal string that parses back to the same double.
std::string format_real(double v);

// Text format: "shape: d0 d1 ..." then one value per line, row-major.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Checkpoint directory: manifest.txt with one "<name> <file>" line per tensor,
// each tensor in the text format above.
void save_checkpoint(const std::filesystem::path& dir, const ParamList& params);
// Loads every manifest entry into the same-named tensor of `params`; names
// and shapes must match exactly.
void load_checkpoint(const std::filesystem::path& dir, const ParamList& params);

struct LabelMap {
  std::size_t height = 0, width = 0;
  std::vector<int> labels;  // row-major

  int at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
};

// PGM (P2 ASCII or P5 binary, maxval <= 65535), one label per pixel.
LabelMap read_pgm(const std::filesystem::path& path);
void write_pgm_labels(const std::filesystem::path& path, const LabelMap& map);

// (1,H,W) map min-max normalised to 0..255 (uniform maps become mid-gray).
void write_pgm_image(const std::filesystem::path& path, const Tensor& map);

struct Rgb {
  std::uint8_t r, g, b;
};
// ASCII PPM, pixels row-major.
void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width, const std::vector<Rgb>& pixels);
std::vector<std::uint8_t> normalize_to_bytes(const Tensor& map);

}  // namespace ddsm
