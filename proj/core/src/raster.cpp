#include "regatta/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "regatta/errors.hpp"

namespace regatta {

void write_pgm(const Raster& raster, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  }
  out << "P5\n" << raster.width << " " << raster.height << "\n255\n";
  std::vector<unsigned char> row(raster.width);
  for (int y = 0; y < raster.height; ++y) {
    for (int x = 0; x < raster.width; ++x) {
      const float v = std::clamp(raster.at(x, y), 0.0f, 1.0f);
      row[x] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) {
    throw Error(ErrorCode::IoError, "short write to " + path.string());
  }
}

namespace {

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (!std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      while ((c = in.get()) != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
      }
      break;
    }
  }
  return tok;
}

}  // namespace

Raster read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open " + path.string());
  }
  if (next_token(in) != "P5") {
    throw Error(ErrorCode::ParseError, path.string() + ": not a binary PGM (P5)");
  }
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(next_token(in));
    height = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, path.string() + ": malformed PGM header");
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw Error(ErrorCode::ParseError, path.string() + ": unsupported PGM header");
  }

  Raster raster(width, height);
  std::vector<unsigned char> buf(static_cast<std::size_t>(width) * height);
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw Error(ErrorCode::ParseError, path.string() + ": truncated PGM payload");
  }
  const float scale = 1.0f / static_cast<float>(maxval);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    raster.intensity[i] = static_cast<float>(buf[i]) * scale;
  }
  return raster;
}

std::string frame_file_name(int frame_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06d.pgm", frame_index);
  return buf;
}

DirectoryRasterProvider::DirectoryRasterProvider(std::filesystem::path dir,
                                                 int cache_capacity)
    : dir_(std::move(dir)), capacity_(std::max(cache_capacity, 2)) {
  if (!std::filesystem::is_directory(dir_)) {
    throw Error(ErrorCode::IoError, dir_.string() + " is not a directory");
  }
  // Frames must be contiguous from 0; count by probing.
  int n = 0;
  while (std::filesystem::exists(dir_ / frame_file_name(n))) ++n;
  if (n == 0) {
    throw Error(ErrorCode::MissingRaster, "no frame_000000.pgm under " + dir_.string());
  }
  frame_count_ = n;
}

const Raster* DirectoryRasterProvider::frame(int index) {
  if (index < 0 || index >= frame_count_) {
    throw Error(ErrorCode::MissingRaster,
                "frame " + std::to_string(index) + " outside [0, " +
                    std::to_string(frame_count_) + ")");
  }
  auto it = cache_.find(index);
  if (it != cache_.end()) {
    lru_.erase(it->second.second);
    lru_.push_front(index);
    it->second.second = lru_.begin();
    return &it->second.first;
  }

  Raster raster = read_pgm(dir_ / frame_file_name(index));
  raster.frame_index = index;
  if (cache_.size() >= capacity_) {
    cache_.erase(lru_.back());
    lru_.pop_back();
  }
  lru_.push_front(index);
  auto [pos, inserted] = cache_.emplace(index, std::make_pair(std::move(raster), lru_.begin()));
  (void)inserted;
  return &pos->second.first;
}

}  // namespace regatta
