#include "gvae/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gvae {

const char* FactorGrid::factor_name(int f) {
  static const char* names[] = {"shape", "x", "y", "scale", "rotation"};
  return names[f];
}

void FactorTuple::validate(const FactorGrid& grid) const {
  for (int f = 0; f < FactorGrid::kFactors; ++f)
    if (idx[static_cast<size_t>(f)] < 0 ||
        idx[static_cast<size_t>(f)] >= grid.cards[static_cast<size_t>(f)])
      throw std::invalid_argument(std::string("FactorTuple: index out of range for ") +
                                  FactorGrid::factor_name(f));
}

namespace {

// Shapes live in the unit disk of radius 0.5; "size" is the disk diameter.
constexpr double kSquareHalf = 0.35355339059327373;  // 1/(2*sqrt(2))
constexpr double kOvalSemiX = 0.5;
constexpr double kOvalSemiY = 1.0 / 3.0;             // 2:3 axis ratio
constexpr double kHeartScale = 2.67266;              // unit-disk -> heart coords
constexpr double kHeartCenterY = 0.1187;

inline bool inside_unit_shape(long shape, double x, double y) {
  switch (shape) {
    case 0: {  // heart, image rows point down so the y axis flips
      double hx = kHeartScale * x;
      double hy = -kHeartScale * y + kHeartCenterY;
      double q = hx * hx + hy * hy - 1.0;
      return q * q * q - hx * hx * hy * hy * hy <= 0.0;
    }
    case 1: {  // oval
      double ex = x / kOvalSemiX, ey = y / kOvalSemiY;
      return ex * ex + ey * ey <= 1.0;
    }
    default:  // square
      return std::abs(x) <= kSquareHalf && std::abs(y) <= kSquareHalf;
  }
}

}  // namespace

ByteImage render_shape(const FactorTuple& f, const FactorGrid& grid) {
  f.validate(grid);
  long n = grid.canvas;
  ByteImage img(static_cast<size_t>(n * n), 0);
  double cx = grid.x_center(f.idx[FactorGrid::kX]);
  double cy = grid.y_center(f.idx[FactorGrid::kY]);
  double size = grid.scale_px(f.idx[FactorGrid::kScale]);
  double theta = grid.rotation(f.idx[FactorGrid::kRotation]);
  double c = std::cos(theta), s = std::sin(theta);
  double inv = 1.0 / size;
  double r = 0.5 * size + 1.0;  // bounding box with one pixel of slack
  long i0 = std::max(0L, static_cast<long>(std::floor(cy - r)));
  long i1 = std::min(n - 1, static_cast<long>(std::ceil(cy + r)));
  long j0 = std::max(0L, static_cast<long>(std::floor(cx - r)));
  long j1 = std::min(n - 1, static_cast<long>(std::ceil(cx + r)));
  long shape = f.idx[FactorGrid::kShape];
  long fg = 0;
  for (long i = i0; i <= i1; ++i) {
    double py = (static_cast<double>(i) + 0.5) - cy;
    for (long j = j0; j <= j1; ++j) {
      double px = (static_cast<double>(j) + 0.5) - cx;
      // rotate by -theta, then normalize by size
      double ux = (c * px + s * py) * inv;
      double uy = (-s * px + c * py) * inv;
      if (inside_unit_shape(shape, ux, uy)) {
        img[static_cast<size_t>(i * n + j)] = 1;
        ++fg;
      }
    }
  }
  if (fg < 20)
    throw std::logic_error("render_shape: shape vanished (<20 foreground pixels)");
  return img;
}

// ---------------------------------------------------------------------------
// container format
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'G', 'V', 'D', 'S'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(DatasetSink& sink, T v) {
  // all header integers little-endian; this codebase targets LE hosts
  sink.write(&v, sizeof(T));
}

struct FileSink : DatasetSink {
  std::ofstream out;
  explicit FileSink(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
  }
  void write(const void* data, size_t bytes) override {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out) throw std::runtime_error("dataset write failed");
  }
};

std::vector<long> lattice_records(const FactorGrid& grid, const BuildOptions& opt) {
  // enumerate the strided lattice in row-major factor order
  std::array<std::vector<long>, FactorGrid::kFactors> values;
  for (int f = 0; f < FactorGrid::kFactors; ++f) {
    long stride = opt.strides[static_cast<size_t>(f)];
    if (stride < 1) throw std::invalid_argument("BuildOptions: stride must be >= 1");
    for (long v = 0; v < grid.cards[static_cast<size_t>(f)]; v += stride)
      values[static_cast<size_t>(f)].push_back(v);
  }
  std::vector<long> flat;  // encoded tuples, row-major over the FULL grid
  auto encode = [&](const std::array<long, 5>& t) {
    long code = 0;
    for (int f = 0; f < FactorGrid::kFactors; ++f)
      code = code * grid.cards[static_cast<size_t>(f)] + t[static_cast<size_t>(f)];
    return code;
  };
  std::array<long, 5> t{};
  for (long a : values[0]) {
    t[0] = a;
    for (long b : values[1]) {
      t[1] = b;
      for (long c : values[2]) {
        t[2] = c;
        for (long d : values[3]) {
          t[3] = d;
          for (long e : values[4]) {
            t[4] = e;
            flat.push_back(encode(t));
          }
        }
      }
    }
  }
  if (opt.random_count > 0 && opt.random_count < static_cast<long>(flat.size())) {
    RngStream rng(opt.seed, "dataset.subsample");
    rng.shuffle(flat);
    flat.resize(static_cast<size_t>(opt.random_count));
    std::sort(flat.begin(), flat.end());
  }
  return flat;
}

FactorTuple decode_tuple(const FactorGrid& grid, long code) {
  FactorTuple t;
  for (int f = FactorGrid::kFactors - 1; f >= 0; --f) {
    long card = grid.cards[static_cast<size_t>(f)];
    t.idx[static_cast<size_t>(f)] = code % card;
    code /= card;
  }
  return t;
}

}  // namespace

void build_shapes_stream(const FactorGrid& grid, const BuildOptions& opt, DatasetSink& sink) {
  std::vector<long> records = lattice_records(grid, opt);
  long n = grid.canvas;
  sink.write(kMagic, 4);
  put<uint32_t>(sink, kVersion);
  put<uint32_t>(sink, static_cast<uint32_t>(n));
  put<uint32_t>(sink, static_cast<uint32_t>(n));
  put<uint64_t>(sink, static_cast<uint64_t>(records.size()));
  put<uint32_t>(sink, FactorGrid::kFactors);
  for (long c : grid.cards) put<uint32_t>(sink, static_cast<uint32_t>(c));

  // Rendering is independent per record; emit in record order.
  const long chunk = 4096;
  long total = static_cast<long>(records.size());
  std::vector<ByteImage> buf;
  for (long base = 0; base < total; base += chunk) {
    long m = std::min(chunk, total - base);
    buf.assign(static_cast<size_t>(m), ByteImage());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < m; ++i)
      buf[static_cast<size_t>(i)] = render_shape(decode_tuple(grid, records[base + i]), grid);
    for (long i = 0; i < m; ++i)
      sink.write(buf[static_cast<size_t>(i)].data(), buf[static_cast<size_t>(i)].size());
  }
  std::vector<uint16_t> fbuf;
  fbuf.reserve(static_cast<size_t>(total) * FactorGrid::kFactors);
  for (long code : records) {
    FactorTuple t = decode_tuple(grid, code);
    for (int f = 0; f < FactorGrid::kFactors; ++f)
      fbuf.push_back(static_cast<uint16_t>(t.idx[static_cast<size_t>(f)]));
  }
  sink.write(fbuf.data(), fbuf.size() * sizeof(uint16_t));
}

void build_shapes_dataset(const FactorGrid& grid, const BuildOptions& opt,
                          const std::string& path) {
  std::string tmp = path + ".tmp";
  {
    FileSink sink(tmp);
    build_shapes_stream(grid, opt, sink);
  }
  std::filesystem::rename(tmp, path);
}

ShapesDataset load_shapes_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad dataset magic in " + path);
  auto get = [&](auto& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw FormatError("truncated dataset header in " + path);
  };
  uint32_t version, h, w, nf;
  uint64_t count;
  get(version);
  if (version != kVersion) throw FormatError("unsupported dataset version");
  get(h);
  get(w);
  get(count);
  get(nf);
  if (nf != FactorGrid::kFactors) throw FormatError("unexpected factor count");
  ShapesDataset ds;
  ds.h = h;
  ds.w = w;
  for (int f = 0; f < FactorGrid::kFactors; ++f) {
    uint32_t c;
    get(c);
    ds.cards[static_cast<size_t>(f)] = c;
  }
  size_t px = static_cast<size_t>(count) * h * w;
  ds.pixels.resize(px);
  in.read(reinterpret_cast<char*>(ds.pixels.data()), static_cast<std::streamsize>(px));
  if (!in || in.gcount() != static_cast<std::streamsize>(px))
    throw FormatError("truncated pixel payload: expected " + std::to_string(px) + " bytes, got " +
                      std::to_string(in.gcount()));
  size_t fx = static_cast<size_t>(count) * FactorGrid::kFactors;
  ds.factors.resize(fx);
  in.read(reinterpret_cast<char*>(ds.factors.data()),
          static_cast<std::streamsize>(fx * sizeof(uint16_t)));
  if (!in || in.gcount() != static_cast<std::streamsize>(fx * sizeof(uint16_t)))
    throw FormatError("truncated factor payload in " + path);
  return ds;
}

Tensor ShapesDataset::batch(const std::vector<long>& records) const {
  Tensor out({static_cast<long>(records.size()), 1, h, w});
  for (size_t i = 0; i < records.size(); ++i) {
    const uint8_t* src = image(records[i]);
    double* dst = out.data() + static_cast<long>(i) * h * w;
    for (long p = 0; p < h * w; ++p) dst[p] = static_cast<double>(src[p]);
  }
  return out;
}

Tensor ShapesDataset::one(long rec) const { return batch({rec}); }

std::vector<long> sample_fixed_factor(const ShapesDataset& ds, int factor, long l,
                                      RngStream& rng, long* fixed_value) {
  if (factor < 0 || factor >= FactorGrid::kFactors)
    throw std::invalid_argument("sample_fixed_factor: bad factor index");
  long count = ds.count();
  if (count == 0) throw std::invalid_argument("sample_fixed_factor: empty dataset");
  // group records by this factor's value
  std::vector<std::vector<long>> groups(65536);
  long max_v = 0;
  for (long r = 0; r < count; ++r) {
    long v = ds.factor_index(r, factor);
    groups[static_cast<size_t>(v)].push_back(r);
    max_v = std::max(max_v, v);
  }
  std::vector<long> present;
  for (long v = 0; v <= max_v; ++v)
    if (!groups[static_cast<size_t>(v)].empty()) present.push_back(v);
  if (present.size() < 2)
    throw std::invalid_argument(std::string("sample_fixed_factor: factor ") +
                                FactorGrid::factor_name(factor) + " has fewer than 2 values");
  long v = present[static_cast<size_t>(rng.uniform_int(0, static_cast<long>(present.size()) - 1))];
  const std::vector<long>& pool = groups[static_cast<size_t>(v)];
  if (static_cast<long>(pool.size()) < 1)
    throw std::invalid_argument("sample_fixed_factor: insufficient records");
  std::vector<long> out;
  out.reserve(static_cast<size_t>(l));
  for (long i = 0; i < l; ++i)
    out.push_back(pool[static_cast<size_t>(rng.uniform_int(0, static_cast<long>(pool.size()) - 1))]);
  if (fixed_value) *fixed_value = v;
  return out;
}

// ---------------------------------------------------------------------------
// IDX ingestion
// ---------------------------------------------------------------------------

namespace {

uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("truncated IDX header in " + path);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

}  // namespace

IdxFile read_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open IDX file: " + path);
  IdxFile f;
  f.magic = read_be32(in, path);
  int ndims;
  if (f.magic == 0x00000803u)
    ndims = 3;
  else if (f.magic == 0x00000801u)
    ndims = 1;
  else
    throw FormatError("bad IDX magic in " + path);
  long total = 1;
  for (int i = 0; i < ndims; ++i) {
    long d = static_cast<long>(read_be32(in, path));
    f.dims.push_back(d);
    total *= d;
  }
  f.bytes.resize(static_cast<size_t>(total));
  in.read(reinterpret_cast<char*>(f.bytes.data()), total);
  std::streamsize got = in.gcount();
  if (got != total)
    throw FormatError("truncated IDX payload in " + path + ": expected " +
                      std::to_string(total) + " bytes, got " + std::to_string(got));
  return f;
}

LabeledImages load_idx(const std::string& images_path, const std::string& labels_path,
                       long pad_to) {
  IdxFile imgs = read_idx(images_path);
  IdxFile labs = read_idx(labels_path);
  if (imgs.magic != 0x00000803u) throw FormatError(images_path + " is not an IDX image file");
  if (labs.magic != 0x00000801u) throw FormatError(labels_path + " is not an IDX label file");
  long n = imgs.dims[0], h = imgs.dims[1], w = imgs.dims[2];
  if (labs.dims[0] != n)
    throw FormatError("image/label count mismatch: " + std::to_string(n) + " vs " +
                      std::to_string(labs.dims[0]));
  long oh = h, ow = w;
  long th = pad_to > 0 ? std::max(pad_to, h) : h;
  long tw = pad_to > 0 ? std::max(pad_to, w) : w;
  long off_i = (th - h) / 2, off_j = (tw - w) / 2;
  LabeledImages out;
  out.images = Tensor({n, 1, th, tw});
  out.original_h = oh;
  out.original_w = ow;
  for (long i = 0; i < n; ++i) {
    const uint8_t* src = imgs.bytes.data() + i * h * w;
    double* dst = out.images.data() + i * th * tw;
    for (long r = 0; r < h; ++r)
      for (long c = 0; c < w; ++c)
        dst[(r + off_i) * tw + (c + off_j)] = static_cast<double>(src[r * w + c]) / 255.0;
  }
  out.labels.assign(labs.bytes.begin(), labs.bytes.end());
  return out;
}

}  // namespace gvae
