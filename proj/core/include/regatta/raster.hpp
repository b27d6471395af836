#pragma once

#include <cstdint>
#include <filesystem>
#include <list>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace regatta {

// Grayscale frame, row-major, values in [0, 1].
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<float> intensity;
  int frame_index = -1;

  Raster() = default;
  Raster(int w, int h, float fill = 0.0f, int frame = -1)
      : width(w), height(h), intensity(static_cast<std::size_t>(w) * h, fill),
        frame_index(frame) {}

  float at(int x, int y) const {
    return intensity[static_cast<std::size_t>(y) * width + x];
  }
  float& at(int x, int y) {
    return intensity[static_cast<std::size_t>(y) * width + x];
  }
  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
};

// Binary 8-bit PGM (P5). Values are quantized to [0, 255] on write and
// scaled back to [0, 1] on read.
void write_pgm(const Raster& raster, const std::filesystem::path& path);
Raster read_pgm(const std::filesystem::path& path);  // throws IoError / ParseError

std::string frame_file_name(int frame_index);  // frame_%06d.pgm

// Random access to frames of a sequence without holding the whole race in
// memory. Implementations are expected to be cheap on repeated access to
// nearby frames (the flow tracker walks i-1, i pairs).
class RasterProvider {
 public:
  virtual ~RasterProvider() = default;
  virtual int frame_count() const = 0;
  // Returned pointer stays valid until the next call on this provider.
  virtual const Raster* frame(int index) = 0;
};

// Reads frame_%06d.pgm files from a directory, keeping a small LRU window.
class DirectoryRasterProvider : public RasterProvider {
 public:
  explicit DirectoryRasterProvider(std::filesystem::path dir, int cache_capacity = 8);

  int frame_count() const override { return frame_count_; }
  const Raster* frame(int index) override;

 private:
  std::filesystem::path dir_;
  int frame_count_ = 0;
  std::size_t capacity_;
  std::list<int> lru_;  // front = most recent
  std::unordered_map<int, std::pair<Raster, std::list<int>::iterator>> cache_;
};

// Owns a pre-rendered sequence (tests, small simulations).
class MemoryRasterProvider : public RasterProvider {
 public:
  explicit MemoryRasterProvider(std::vector<Raster> frames) : frames_(std::move(frames)) {}

  int frame_count() const override { return static_cast<int>(frames_.size()); }
  const Raster* frame(int index) override { return &frames_.at(index); }

 private:
  std::vector<Raster> frames_;
};

}  // namespace regatta
