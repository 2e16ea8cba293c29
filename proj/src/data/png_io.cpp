#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "aem/data.hpp"

namespace aem::data {

namespace {

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f)); }

void write_png(const std::filesystem::path& path, Index H, Index W, png_uint_32 format,
               const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(W);
  image.height = static_cast<png_uint_32>(H);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ImageIOError("cannot write " + path.string() + ": " + msg);
  }
}

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, png_uint_32 format, Index& H, Index& W) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ImageIOError("cannot read " + path.string() + ": " + msg);
  }
  image.format = format;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ImageIOError("cannot decode " + path.string() + ": " + msg);
  }
  H = image.height;
  W = image.width;
  return bytes;
}

}  // namespace

void save_png(const std::filesystem::path& path, const RGBImage& img) {
  const Index HW = img.height * img.width;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(3 * HW));
  for (Index i = 0; i < HW; ++i)
    for (Index c = 0; c < 3; ++c) bytes[static_cast<std::size_t>(3 * i + c)] = to_byte(img.data[static_cast<std::size_t>(c * HW + i)]);
  write_png(path, img.height, img.width, PNG_FORMAT_RGB, bytes);
}

void save_png(const std::filesystem::path& path, const Plane& gray) {
  std::vector<std::uint8_t> bytes(gray.data.size());
  std::transform(gray.data.begin(), gray.data.end(), bytes.begin(), to_byte);
  write_png(path, gray.height, gray.width, PNG_FORMAT_GRAY, bytes);
}

void save_png(const std::filesystem::path& path, const Trimap& trimap) {
  write_png(path, trimap.height, trimap.width, PNG_FORMAT_GRAY, trimap.labels);
}

RGBImage load_png_rgb(const std::filesystem::path& path) {
  Index H = 0, W = 0;
  const auto bytes = read_png(path, PNG_FORMAT_RGB, H, W);
  RGBImage img(H, W);
  const Index HW = H * W;
  for (Index i = 0; i < HW; ++i)
    for (Index c = 0; c < 3; ++c)
      img.data[static_cast<std::size_t>(c * HW + i)] = bytes[static_cast<std::size_t>(3 * i + c)] / 255.f;
  return img;
}

Plane load_png_gray(const std::filesystem::path& path) {
  Index H = 0, W = 0;
  const auto bytes = read_png(path, PNG_FORMAT_GRAY, H, W);
  Plane p(H, W);
  std::transform(bytes.begin(), bytes.end(), p.data.begin(), [](std::uint8_t b) { return b / 255.f; });
  return p;
}

Trimap load_png_trimap(const std::filesystem::path& path) {
  Index H = 0, W = 0;
  auto bytes = read_png(path, PNG_FORMAT_GRAY, H, W);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const auto v = bytes[i];
    if (v != trimap_code::background && v != trimap_code::unknown && v != trimap_code::foreground) {
      throw ImageIOError(path.string() + ": trimap value " + std::to_string(v) + " at pixel " + std::to_string(i) +
                         " is not 0, 128 or 255");
    }
  }
  Trimap t(H, W);
  t.labels = std::move(bytes);
  return t;
}

void write_dataset(const std::filesystem::path& root, const std::vector<CompositeSample>& samples) {
  std::filesystem::create_directories(root);
  std::ofstream manifest(root / "manifest.csv");
  if (!manifest) throw DataError("cannot write " + (root / "manifest.csv").string());
  manifest << "id,width,height,unk_fraction\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const std::string id = sample_id(static_cast<Index>(i));
    save_png(root / "image" / (id + ".png"), s.image);
    save_png(root / "alpha" / (id + ".png"), s.alpha);
    save_png(root / "trimap" / (id + ".png"), s.trimap);
    char frac[32];
    std::snprintf(frac, sizeof frac, "%.6f",
                  static_cast<double>(s.trimap.unknown_count()) / static_cast<double>(s.alpha.size()));
    manifest << id << ',' << s.alpha.width << ',' << s.alpha.height << ',' << frac << '\n';
  }
  if (!manifest) throw DataError("error writing " + (root / "manifest.csv").string());
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.csv";
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "id,width,height,unk_fraction") {
    throw DataError(path.string() + ": unexpected header");
  }
  std::vector<ManifestRow> rows;
  Index lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    ManifestRow r;
    std::string w, h, f;
    if (!std::getline(ss, r.id, ',') || !std::getline(ss, w, ',') || !std::getline(ss, h, ',') ||
        !std::getline(ss, f)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    }
    try {
      r.width = std::stoll(w);
      r.height = std::stoll(h);
      r.unknown_fraction = std::stod(f);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
    rows.push_back(r);
  }
  return rows;
}

std::vector<CompositeSample> read_dataset(const std::filesystem::path& root) {
  std::vector<CompositeSample> out;
  for (const auto& row : read_manifest(root)) {
    CompositeSample s;
    s.image = load_png_rgb(root / "image" / (row.id + ".png"));
    s.alpha = load_png_gray(root / "alpha" / (row.id + ".png"));
    s.trimap = load_png_trimap(root / "trimap" / (row.id + ".png"));
    if (s.image.height != row.height || s.image.width != row.width || s.alpha.height != row.height ||
        s.alpha.width != row.width || s.trimap.height != row.height || s.trimap.width != row.width) {
      throw DataError("sample " + row.id + ": stored size disagrees with manifest");
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace aem::data
