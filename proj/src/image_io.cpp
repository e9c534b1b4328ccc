#include "cortexforge/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

#include "cortexforge/errors.hpp"

namespace cortexforge::imageio {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Tensor load_png(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DataError("cannot open image: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png reader allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("png info allocation failed");
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("not a decodable PNG: " + path);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  // Normalize every variant to 8-bit gray or RGB without alpha.
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16) png_set_strip_16(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const std::size_t channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unsupported PNG channel count in " + path);
  }
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  pixels.resize(rowbytes * h);
  row_ptrs.resize(h);
  for (png_uint_32 r = 0; r < h; ++r) row_ptrs[r] = pixels.data() + std::size_t(r) * rowbytes;
  png_read_image(png, row_ptrs.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor out({std::size_t(h), std::size_t(w), channels});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      for (std::size_t ch = 0; ch < channels; ++ch) {
        out(r, c, ch) = float(pixels[r * rowbytes + c * channels + ch]) / 255.0f;
      }
    }
  }
  return out;
}

int pnm_token(std::istream& in, const std::string& path) {
  // Whitespace-and-comment tolerant integer scan for PNM headers.
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value = 0;
  if (!(in >> value)) throw DataError("malformed PNM header in " + path);
  return value;
}

Tensor load_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  std::size_t channels;
  if (magic[0] == 'P' && magic[1] == '5') {
    channels = 1;
  } else if (magic[0] == 'P' && magic[1] == '6') {
    channels = 3;
  } else {
    throw DataError("unsupported PNM magic in " + path);
  }
  const int w = pnm_token(in, path);
  const int h = pnm_token(in, path);
  const int maxval = pnm_token(in, path);
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255) {
    throw DataError("unsupported PNM geometry or depth in " + path);
  }
  in.get();  // the single whitespace byte before the raster

  std::vector<unsigned char> raster(std::size_t(h) * std::size_t(w) * channels);
  in.read(reinterpret_cast<char*>(raster.data()), std::streamsize(raster.size()));
  if (std::size_t(in.gcount()) != raster.size()) {
    throw DataError("truncated PNM raster in " + path);
  }
  Tensor out({std::size_t(h), std::size_t(w), channels});
  for (std::size_t i = 0; i < raster.size(); ++i) {
    out[i] = float(raster[i]) / float(maxval);
  }
  return out;
}

}  // namespace

Tensor load_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw DataError("cannot open image: " + path);
  unsigned char sig[8] = {0};
  probe.read(reinterpret_cast<char*>(sig), 8);
  probe.close();
  if (png_sig_cmp(sig, 0, std::size_t(std::min<std::streamsize>(8, 8))) == 0) {
    return load_png(path);
  }
  if (sig[0] == 'P' && (sig[1] == '5' || sig[1] == '6')) return load_pnm(path);
  throw DataError("unrecognized image format: " + path);
}

void write_pnm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3) throw GeometryError("write_pnm: image must be rank 3");
  const std::size_t h = image.shape()[0], w = image.shape()[1], ch = image.shape()[2];
  if (ch != 1 && ch != 3) throw GeometryError("write_pnm: need 1 or 3 channels");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << (ch == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raster(h * w * ch);
  for (std::size_t i = 0; i < raster.size(); ++i) {
    const float v = std::clamp(image[i], 0.0f, 1.0f);
    raster[i] = (unsigned char)(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(raster.data()), std::streamsize(raster.size()));
  if (!out) throw DataError("image write failed: " + path);
}

namespace {

// Catmull-Rom kernel weights for fractional offset t in [0,1).
void catmull_rom_weights(float t, float w[4]) {
  const float t2 = t * t, t3 = t2 * t;
  w[0] = 0.5f * (-t3 + 2.0f * t2 - t);
  w[1] = 0.5f * (3.0f * t3 - 5.0f * t2 + 2.0f);
  w[2] = 0.5f * (-3.0f * t3 + 4.0f * t2 + t);
  w[3] = 0.5f * (t3 - t2);
}

}  // namespace

float sample_bicubic(const Tensor& image, float y, float x, std::size_t channel) {
  const int h = int(image.shape()[0]), w = int(image.shape()[1]);
  const int y0 = int(std::floor(y)), x0 = int(std::floor(x));
  float wy[4], wx[4];
  catmull_rom_weights(y - float(y0), wy);
  catmull_rom_weights(x - float(x0), wx);
  float acc = 0.0f;
  for (int dy = -1; dy <= 2; ++dy) {
    const int yy = std::clamp(y0 + dy, 0, h - 1);
    float row = 0.0f;
    for (int dx = -1; dx <= 2; ++dx) {
      const int xx = std::clamp(x0 + dx, 0, w - 1);
      row += wx[std::size_t(dx + 1)] * image(std::size_t(yy), std::size_t(xx), channel);
    }
    acc += wy[std::size_t(dy + 1)] * row;
  }
  return acc;
}

Tensor resize_bicubic(const Tensor& image, int out_height, int out_width) {
  if (image.rank() != 3) throw GeometryError("resize_bicubic: image must be rank 3");
  if (out_height < 1 || out_width < 1) throw GeometryError("resize_bicubic: bad target size");
  const std::size_t h = image.shape()[0], w = image.shape()[1], ch = image.shape()[2];
  if (std::size_t(out_height) == h && std::size_t(out_width) == w) return image;

  Tensor out({std::size_t(out_height), std::size_t(out_width), ch});
  const float sy = float(h) / float(out_height);
  const float sx = float(w) / float(out_width);
  for (int r = 0; r < out_height; ++r) {
    // Pixel-center alignment keeps integer-ratio resizes symmetric.
    const float y = (float(r) + 0.5f) * sy - 0.5f;
    for (int c = 0; c < out_width; ++c) {
      const float x = (float(c) + 0.5f) * sx - 0.5f;
      for (std::size_t k = 0; k < ch; ++k) {
        out(std::size_t(r), std::size_t(c), k) = sample_bicubic(image, y, x, k);
      }
    }
  }
  return out;
}

}  // namespace cortexforge::imageio
