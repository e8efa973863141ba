#include "gvae/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace gvae {

void write_png_gray(const std::string& path, const unsigned char* data, long h, long w) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("libpng write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (long r = 0; r < h; ++r)
    png_write_row(png, const_cast<png_bytep>(data + r * w));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

namespace {

unsigned char to_byte(double v) {
  double c = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

}  // namespace

Tensor normalize_for_display(const Tensor& t) {
  double lo = 1e300, hi = -1e300;
  for (long i = 0; i < t.numel(); ++i) {
    lo = std::min(lo, t[i]);
    hi = std::max(hi, t[i]);
  }
  Tensor out(t.shape());
  double span = hi - lo;
  if (span <= 0) return out;
  for (long i = 0; i < t.numel(); ++i) out[i] = (t[i] - lo) / span;
  return out;
}

void write_image_grid(const std::string& path, const std::vector<Tensor>& tiles, long cols) {
  if (tiles.empty()) throw std::invalid_argument("write_image_grid: no tiles");
  long th = tiles[0].dim(0), tw = tiles[0].dim(1);
  long n = static_cast<long>(tiles.size());
  cols = std::max(1L, std::min(cols, n));
  long rows = (n + cols - 1) / cols;
  long gh = rows * th + (rows + 1);
  long gw = cols * tw + (cols + 1);
  std::vector<unsigned char> canvas(static_cast<size_t>(gh * gw), 96);  // gray separators
  for (long i = 0; i < n; ++i) {
    const Tensor& t = tiles[static_cast<size_t>(i)];
    if (t.dim(0) != th || t.dim(1) != tw)
      throw std::invalid_argument("write_image_grid: tile size mismatch");
    long r0 = (i / cols) * (th + 1) + 1;
    long c0 = (i % cols) * (tw + 1) + 1;
    for (long r = 0; r < th; ++r)
      for (long c = 0; c < tw; ++c)
        canvas[static_cast<size_t>((r0 + r) * gw + c0 + c)] = to_byte(t.at(r, c));
  }
  write_png_gray(path, canvas.data(), gh, gw);
}

void write_line_plot(const std::string& path, const std::vector<double>& xs,
                     const std::vector<double>& ys, double y_lo, double y_hi) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("write_line_plot: need matching xs/ys with >= 2 points");
  const long h = 320, w = 480, m = 32;  // margin
  std::vector<unsigned char> img(static_cast<size_t>(h * w), 255);
  double x_lo = xs.front(), x_hi = xs.back();
  auto px = [&](double x) {
    return m + static_cast<long>(std::lround((x - x_lo) / (x_hi - x_lo) * (w - 2 * m)));
  };
  auto py = [&](double y) {
    double c = std::clamp((y - y_lo) / (y_hi - y_lo), 0.0, 1.0);
    return (h - m) - static_cast<long>(std::lround(c * (h - 2 * m)));
  };
  // axes
  for (long c = m; c <= w - m; ++c) img[static_cast<size_t>((h - m) * w + c)] = 0;
  for (long r = m; r <= h - m; ++r) img[static_cast<size_t>(r * w + m)] = 0;
  // y = 0.5 reference, dashed
  long rref = py(0.5);
  for (long c = m; c <= w - m; c += 6)
    for (long k = 0; k < 3 && c + k <= w - m; ++k)
      img[static_cast<size_t>(rref * w + c + k)] = 160;
  // polyline
  auto draw_line = [&](long r1, long c1, long r2, long c2) {
    long steps = std::max(std::abs(r2 - r1), std::abs(c2 - c1)) + 1;
    for (long s = 0; s <= steps; ++s) {
      long r = r1 + (r2 - r1) * s / steps;
      long c = c1 + (c2 - c1) * s / steps;
      if (r >= 0 && r < h && c >= 0 && c < w) img[static_cast<size_t>(r * w + c)] = 0;
    }
  };
  for (size_t i = 0; i + 1 < xs.size(); ++i)
    draw_line(py(ys[i]), px(xs[i]), py(ys[i + 1]), px(xs[i + 1]));
  write_png_gray(path, img.data(), h, w);
}

}  // namespace gvae
