#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "mtlface/data/data.hpp"

namespace mtlface::data {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace {

Image decode_ppm(const std::vector<std::uint8_t>& b) {
  std::size_t pos = 2;
  auto skip_ws = [&] {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_ws();
    int v = 0;
    bool any = false;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos++] - '0');
      any = true;
      if (v > 1 << 20) throw DataError("PPM header value too large");
    }
    if (!any) throw DataError("malformed PPM header");
    return v;
  };
  Image img;
  img.width = read_int();
  img.height = read_int();
  const int maxval = read_int();
  if (maxval != 255) throw DataError("only 8-bit PPM is supported");
  ++pos;  // single whitespace before the raster
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * 3;
  if (img.width <= 0 || img.height <= 0 || pos + n > b.size()) throw DataError("truncated PPM");
  img.rgb.assign(b.begin() + pos, b.begin() + pos + n);
  return img;
}

Image decode_png(const std::vector<std::uint8_t>& b) {
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&im, b.data(), b.size()))
    throw DataError(std::string("PNG decode failed: ") + im.message);
  im.format = PNG_FORMAT_RGB;
  Image img;
  img.width = static_cast<int>(im.width);
  img.height = static_cast<int>(im.height);
  img.rgb.resize(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, img.rgb.data(), 0, nullptr)) {
    std::string msg = im.message;
    png_image_free(&im);
    throw DataError("PNG decode failed: " + msg);
  }
  return img;
}

}  // namespace

Image decode_image(const std::vector<std::uint8_t>& bytes) {
  static const std::uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (bytes.size() >= 8 && std::equal(kPngSig, kPngSig + 8, bytes.begin())) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  throw DataError("unsupported image format (expected PNG or binary PPM)");
}

Image read_image(const std::string& path) {
  try {
    return decode_image(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(img.width);
  im.height = static_cast<png_uint_32>(img.height);
  im.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(im, size, 0, img.rgb.data(), 0, nullptr))
    throw DataError(std::string("PNG encode failed: ") + im.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&im, out.data(), &size, 0, img.rgb.data(), 0, nullptr))
    throw DataError(std::string("PNG encode failed: ") + im.message);
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> encode_ppm(const Image& img) {
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

void write_image(const Image& img, const std::string& path) {
  const std::string ext = std::filesystem::path(path).extension().string();
  if (ext == ".ppm")
    write_file(path, encode_ppm(img));
  else if (ext == ".png")
    write_file(path, encode_png(img));
  else
    throw DataError("unknown image extension for " + path);
}

Tensor<float> preprocess(const Image& img, int size) {
  if (img.width <= 0 || img.height <= 0) throw DataError("empty image");
  if (size <= 0) throw DataError("target size must be positive");
  const int side = std::min(img.width, img.height);
  const int x0 = (img.width - side) / 2;
  const int y0 = (img.height - side) / 2;
  Tensor<float> out({3, size, size});
  const float to_unit = 1.0f / 127.5f;
  if (side == size) {
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          out.data()[(c * size + y) * size + x] = img.at(x0 + x, y0 + y, c) * to_unit - 1.0f;
    return out;
  }
  // Bilinear with half-pixel centers; box prefilter when shrinking by >2x.
  const double scale = static_cast<double>(side) / size;
  const int taps = std::max(1, static_cast<int>(std::floor(scale / 2.0)));
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int ty = 0; ty < taps; ++ty)
          for (int tx = 0; tx < taps; ++tx) {
            const double sy = (y + (ty + 0.5) / taps) * scale - 0.5;
            const double sx = (x + (tx + 0.5) / taps) * scale - 0.5;
            const double cy = std::clamp(sy, 0.0, side - 1.0);
            const double cx = std::clamp(sx, 0.0, side - 1.0);
            const int iy = std::min(static_cast<int>(cy), side - 1);
            const int ix = std::min(static_cast<int>(cx), side - 1);
            const int iy1 = std::min(iy + 1, side - 1);
            const int ix1 = std::min(ix + 1, side - 1);
            const double fy = cy - iy, fx = cx - ix;
            const double top = img.at(x0 + ix, y0 + iy, c) * (1 - fx) + img.at(x0 + ix1, y0 + iy, c) * fx;
            const double bot = img.at(x0 + ix, y0 + iy1, c) * (1 - fx) + img.at(x0 + ix1, y0 + iy1, c) * fx;
            acc += top * (1 - fy) + bot * fy;
          }
        acc /= taps * taps;
        out.data()[(c * size + y) * size + x] = static_cast<float>(acc / 127.5 - 1.0);
      }
  return out;
}

Tensor<float> preprocess_bytes(const std::vector<std::uint8_t>& bytes, int size) {
  return preprocess(decode_image(bytes), size);
}

Image to_image(const Tensor<float>& chw) {
  if (chw.ndim() != 3 || chw.dim(0) != 3) throw DataError("to_image expects [3,H,W]");
  Image img;
  img.height = static_cast<int>(chw.dim(1));
  img.width = static_cast<int>(chw.dim(2));
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const float v = chw.data()[(static_cast<std::size_t>(c) * img.height + y) * img.width + x];
        const float p = std::clamp((v + 1.0f) * 127.5f, 0.0f, 255.0f);
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(p));
      }
  return img;
}

Tensor<float> load_images(const Manifest& m, int size) {
  Tensor<float> out({static_cast<std::int64_t>(m.records.size()), 3, size, size});
  const std::size_t per = static_cast<std::size_t>(3) * size * size;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    Tensor<float> t = preprocess(read_image(m.resolve(m.records[i])), size);
    std::copy(t.data(), t.data() + per, out.data() + i * per);
  }
  return out;
}

}  // namespace mtlface::data
