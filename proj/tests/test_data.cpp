#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "cortexforge/data.hpp"
#include "cortexforge/image_io.hpp"
#include "cortexforge/rng.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace cortexforge;

namespace {

// Temp directory that cleans up after each test case.
struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("cf_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

// Raw binary PGM writer, independent of the library's image code.
void write_raw_pgm(const std::string& path, int h, int w,
                   const std::vector<unsigned char>& gray) {
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(gray.data()), std::streamsize(gray.size()));
}

void write_raw_ppm(const std::string& path, int h, int w,
                   const std::vector<unsigned char>& rgb) {
  std::ofstream out(path, std::ios::binary);
  out << "P6\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), std::streamsize(rgb.size()));
}

// PNG writer going straight through libpng, so decode is tested against an
// encoder the library under test never touches.
void write_png_rgb(const std::string& path, int h, int w, const std::vector<unsigned char>& rgb) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  REQUIRE(f != nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  REQUIRE(setjmp(png_jmpbuf(png)) == 0);
  png_init_io(png, f);
  png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < h; ++r) {
    png_write_row(png, const_cast<png_bytep>(rgb.data() + std::size_t(r) * std::size_t(w) * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

// Independent Catmull-Rom reference in double precision.
double ref_catmull_1d(double p0, double p1, double p2, double p3, double t) {
  return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t +
                (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t);
}

double ref_sample(const Tensor& img, double y, double x, std::size_t ch) {
  const int h = int(img.shape()[0]), w = int(img.shape()[1]);
  const int y0 = int(std::floor(y)), x0 = int(std::floor(x));
  auto px = [&](int r, int c) {
    r = std::clamp(r, 0, h - 1);
    c = std::clamp(c, 0, w - 1);
    return double(img(std::size_t(r), std::size_t(c), ch));
  };
  double rows[4];
  for (int i = 0; i < 4; ++i) {
    rows[i] = ref_catmull_1d(px(y0 - 1 + i, x0 - 1), px(y0 - 1 + i, x0), px(y0 - 1 + i, x0 + 1),
                             px(y0 - 1 + i, x0 + 2), x - x0);
  }
  return ref_catmull_1d(rows[0], rows[1], rows[2], rows[3], y - y0);
}

}  // namespace

TEST_CASE("pnm round-trip: write P5/P6, read back quantized values") {
  TempDir tmp;
  Tensor gray({2, 3, 1}, {0.0f, 0.5f, 1.0f, 0.25f, 0.75f, 0.1f});
  imageio::write_pnm(tmp.file("g.pgm"), gray);
  Tensor back = imageio::load_image(tmp.file("g.pgm"));
  REQUIRE(back.shape() == gray.shape());
  for (std::size_t i = 0; i < gray.numel(); ++i) {
    CHECK(std::abs(back[i] - gray[i]) <= 0.5f / 255.0f + 1e-6f);
  }

  auto rng = substream(1, "ppm");
  Tensor rgb = oracles::random_tensor({4, 5, 3}, rng, 0.0f, 1.0f);
  imageio::write_pnm(tmp.file("c.ppm"), rgb);
  Tensor back3 = imageio::load_image(tmp.file("c.ppm"));
  REQUIRE(back3.shape() == rgb.shape());
  for (std::size_t i = 0; i < rgb.numel(); ++i) {
    CHECK(std::abs(back3[i] - rgb[i]) <= 0.5f / 255.0f + 1e-6f);
  }
}

TEST_CASE("raw pgm with header comment decodes") {
  TempDir tmp;
  std::ofstream out(tmp.file("c.pgm"), std::ios::binary);
  out << "P5\n# a comment\n2 2\n255\n";
  const unsigned char px[4] = {0, 85, 170, 255};
  out.write(reinterpret_cast<const char*>(px), 4);
  out.close();
  Tensor img = imageio::load_image(tmp.file("c.pgm"));
  CHECK(img(0, 0, 0) == doctest::Approx(0.0f));
  CHECK(img(1, 1, 0) == doctest::Approx(1.0f));
}

TEST_CASE("png decode matches the raw pixels") {
  TempDir tmp;
  std::vector<unsigned char> rgb(3 * 4 * 3);
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = (unsigned char)((i * 37) % 256);
  write_png_rgb(tmp.file("x.png"), 3, 4, rgb);
  Tensor img = imageio::load_image(tmp.file("x.png"));
  REQUIRE(img.shape() == std::vector<std::size_t>({3, 4, 3}));
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    CHECK(img[i] == doctest::Approx(float(rgb[i]) / 255.0f));
  }
}

TEST_CASE("unrecognized and truncated image files rejected") {
  TempDir tmp;
  std::ofstream(tmp.file("junk.img")) << "not an image at all";
  CHECK_THROWS_AS(imageio::load_image(tmp.file("junk.img")), DataError);

  std::ofstream trunc(tmp.file("t.pgm"), std::ios::binary);
  trunc << "P5\n4 4\n255\n";
  trunc << "xy";  // 2 of 16 raster bytes
  trunc.close();
  CHECK_THROWS_AS(imageio::load_image(tmp.file("t.pgm")), DataError);
  CHECK_THROWS_AS(imageio::load_image(tmp.file("missing.png")), DataError);
}

TEST_CASE("resize: same size is bit-exact, 4x4 checkerboard to 8x8 matches the reference") {
  auto rng = substream(2, "img");
  Tensor img = oracles::random_tensor({5, 7, 3}, rng, 0.0f, 1.0f);
  Tensor same = imageio::resize_bicubic(img, 5, 7);
  CHECK(same == img);

  Tensor board({4, 4, 1});
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) board(r, c, 0) = float((r + c) % 2);
  }
  Tensor up = imageio::resize_bicubic(board, 8, 8);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) {
      const double y = (r + 0.5) * 0.5 - 0.5;
      const double x = (c + 0.5) * 0.5 - 0.5;
      CHECK(std::abs(double(up(std::size_t(r), std::size_t(c), 0)) - ref_sample(board, y, x, 0)) <
            1e-3);
    }
  }
}

TEST_CASE("ingest: file order, labels, skip-with-warning, empty index error") {
  TempDir tmp;
  fs::create_directories(tmp.path / "sub");
  write_raw_pgm(tmp.file("a.pgm"), 2, 2, {0, 64, 128, 255});
  write_raw_ppm(tmp.file("sub/b.ppm"), 2, 2, std::vector<unsigned char>(12, 200));
  write_raw_pgm(tmp.file("c.pgm"), 3, 3, std::vector<unsigned char>(9, 10));
  std::ofstream(tmp.file("broken.pgm")) << "P5 oops";

  std::ofstream index(tmp.file("index.tsv"));
  index << "# fixture index\n";
  index << "a.pgm\t1\n";
  index << "sub/b.ppm\t0\n";
  index << "broken.pgm\t1\n";
  index << "c.pgm\n";  // no label
  index.close();

  data::Dataset ds = data::ingest(tmp.path.string(), tmp.file("index.tsv"), 4, 4);
  REQUIRE(ds.size() == 3);
  CHECK(ds.items[0].label == 1);
  CHECK(ds.items[1].label == 0);
  CHECK(!ds.items[2].label.has_value());
  CHECK(ds.items[0].source_path.find("a.pgm") != std::string::npos);
  for (const auto& it : ds.items) {
    CHECK(it.image.shape() == std::vector<std::size_t>({4, 4, it.image.shape()[2]}));
  }

  std::ofstream(tmp.file("empty.tsv")) << "# nothing\n";
  CHECK_THROWS_AS(data::ingest(tmp.path.string(), tmp.file("empty.tsv"), 4, 4), DataError);
}

TEST_CASE("whitening: identical images go to zero; fit-set becomes white") {
  auto rng = substream(3, "white");
  Tensor proto = oracles::random_tensor({3, 3, 1}, rng, 0.0f, 1.0f);
  std::vector<Tensor> same(5, proto);
  auto t = data::fit_whitening(same);
  Tensor white = data::apply_whitening(proto, t);
  for (std::size_t i = 0; i < white.numel(); ++i) CHECK(std::abs(white[i]) < 1e-4f);

  // A well-conditioned fit-set: mean ~0 and covariance ~I afterwards.
  std::vector<Tensor> images;
  for (int i = 0; i < 200; ++i) {
    images.push_back(oracles::random_tensor({3, 3, 1}, rng, 0.0f, 1.0f));
  }
  auto tw = data::fit_whitening(images);
  const std::size_t d = 9;
  std::vector<Tensor> whitened;
  for (const auto& img : images) whitened.push_back(data::apply_whitening(img, tw));

  std::vector<double> mu(d, 0.0);
  for (const auto& wimg : whitened) {
    for (std::size_t j = 0; j < d; ++j) mu[j] += wimg[j];
  }
  for (std::size_t j = 0; j < d; ++j) {
    mu[j] /= double(whitened.size());
    CHECK(std::abs(mu[j]) < 1e-4);
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) {
      double cov = 0.0;
      for (const auto& wimg : whitened) cov += (wimg[a] - mu[a]) * (wimg[b] - mu[b]);
      cov /= double(whitened.size() - 1);
      CHECK(std::abs(cov - (a == b ? 1.0 : 0.0)) < 0.05);
    }
  }
}

TEST_CASE("whitening: apply is linear") {
  auto rng = substream(4, "lin");
  std::vector<Tensor> images;
  for (int i = 0; i < 50; ++i) images.push_back(oracles::random_tensor({2, 2, 1}, rng, 0.0f, 1.0f));
  auto t = data::fit_whitening(images);

  const float a = 0.7f, b = -0.4f;
  Tensor x = oracles::random_tensor({2, 2, 1}, rng), y = oracles::random_tensor({2, 2, 1}, rng);
  Tensor combo({2, 2, 1});
  for (std::size_t i = 0; i < 4; ++i) {
    combo[i] = a * x[i] + b * y[i] - (a + b - 1.0f) * t.mean[i];
  }
  Tensor lhs = data::apply_whitening(combo, t);
  Tensor wx = data::apply_whitening(x, t), wy = data::apply_whitening(y, t);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(lhs[i] - (a * wx[i] + b * wy[i])) < 1e-5f);
  }
}

TEST_CASE("whitening: fewer than two images rejected") {
  CHECK_THROWS_AS(data::fit_whitening({Tensor({2, 2, 1})}), DataError);
}

TEST_CASE("assemble_eval_set: 0.352 of 1000 gives 352 positives, 648 negatives") {
  data::Dataset pos, neg;
  for (int i = 0; i < 400; ++i) pos.items.push_back({Tensor({1, 1, 1}), std::nullopt, "p"});
  for (int i = 0; i < 700; ++i) neg.items.push_back({Tensor({1, 1, 1}), std::nullopt, "n"});

  data::Dataset mix = data::assemble_eval_set(pos, neg, 0.352, 1000, 7);
  REQUIRE(mix.size() == 1000);
  std::size_t n_pos = 0;
  for (const auto& it : mix.items) {
    REQUIRE(it.label.has_value());
    n_pos += std::size_t(*it.label == 1);
  }
  CHECK(n_pos == 352);

  data::Dataset all_pos = data::assemble_eval_set(pos, neg, 1.0, 300, 7);
  for (const auto& it : all_pos.items) CHECK(*it.label == 1);

  data::Dataset again = data::assemble_eval_set(pos, neg, 0.352, 1000, 7);
  REQUIRE(again.size() == mix.size());
  for (std::size_t i = 0; i < mix.size(); ++i) {
    CHECK(again.items[i].source_path == mix.items[i].source_path);
    CHECK(*again.items[i].label == *mix.items[i].label);
  }

  CHECK_THROWS_AS(data::assemble_eval_set(pos, neg, 0.9, 1000, 7), DataError);
}

TEST_CASE("distortions: identity exact, full-width shift mean-filled, half scale vs reference") {
  Tensor ramp({6, 6, 1});
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 6; ++c) ramp(r, c, 0) = float(r * 6 + c) / 36.0f;
  }

  auto ident = data::make_distortions(ramp, {1.0f}, {{0.0f, 0.0f}});
  REQUIRE(ident.size() == 1);
  CHECK(ident[0] == ramp);

  double mean = 0.0;
  for (std::size_t i = 0; i < ramp.numel(); ++i) mean += ramp[i];
  mean /= double(ramp.numel());
  auto shifted = data::make_distortions(ramp, {1.0f}, {{6.0f, 0.0f}});
  for (std::size_t i = 0; i < shifted[0].numel(); ++i) {
    CHECK(shifted[0][i] == doctest::Approx(float(mean)));
  }

  auto half = data::make_distortions(ramp, {0.5f}, {{0.0f, 0.0f}});
  const double cy = 2.5, cx = 2.5;
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 6; ++c) {
      const double sy = (double(r) - cy) / 0.5 + cy;
      const double sx = (double(c) - cx) / 0.5 + cx;
      const bool inside = sy >= 0 && sy <= 5 && sx >= 0 && sx <= 5;
      const double want = inside ? ref_sample(ramp, sy, sx, 0) : mean;
      CHECK(std::abs(double(half[0](r, c, 0)) - want) < 1e-3);
    }
  }

  CHECK_THROWS_AS(data::make_distortions(ramp, {0.05f}, {{0.0f, 0.0f}}), ConfigError);
  CHECK_THROWS_AS(data::make_distortions(ramp, {-1.0f}, {{0.0f, 0.0f}}), ConfigError);
}

TEST_CASE("rotation sequences: ordering, channel replication, empty dirs skipped") {
  TempDir tmp;
  fs::create_directories(tmp.path / "seq_b");
  fs::create_directories(tmp.path / "seq_a");
  fs::create_directories(tmp.path / "seq_empty");
  // Deliberately created out of order; loading must sort lexicographically.
  for (const char* name : {"f3.pgm", "f1.pgm", "f2.pgm"}) {
    const unsigned char shade = (unsigned char)(name[1] * 10);
    write_raw_pgm((tmp.path / "seq_a" / name).string(), 2, 2, {shade, shade, shade, shade});
  }
  write_raw_pgm((tmp.path / "seq_b" / "only.pgm").string(), 2, 2, {9, 9, 9, 9});

  auto seqs = data::load_rotation_sequences(tmp.path.string(), 3);
  REQUIRE(seqs.size() == 2);  // the empty one dropped
  REQUIRE(seqs[0].size() == 3);
  REQUIRE(seqs[1].size() == 1);
  CHECK(seqs[0][0](0, 0, 0) < seqs[0][1](0, 0, 0));
  CHECK(seqs[0][1](0, 0, 0) < seqs[0][2](0, 0, 0));
  for (const auto& frame : seqs[0]) {
    REQUIRE(frame.shape()[2] == 3);
    CHECK(frame(1, 1, 0) == frame(1, 1, 1));
    CHECK(frame(1, 1, 1) == frame(1, 1, 2));
  }
}
