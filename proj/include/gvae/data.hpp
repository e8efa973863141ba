#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gvae/rng.hpp"
#include "gvae/tensor.hpp"

namespace gvae {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Ground-truth factor lattice for the synthetic 2D-shapes dataset:
// shape {heart, oval, square} x 32 x-positions x 32 y-positions x
// 6 scales x 40 rotations = 737,280 combinations on a 64x64 canvas.
struct FactorGrid {
  static constexpr int kFactors = 5;
  static constexpr int kShape = 0, kX = 1, kY = 2, kScale = 3, kRotation = 4;

  std::array<long, kFactors> cards{3, 32, 32, 6, 40};
  long canvas = 64;

  static FactorGrid shapes_default() { return FactorGrid{}; }

  long total() const {
    long t = 1;
    for (long c : cards) t *= c;
    return t;
  }
  static const char* factor_name(int f);
  bool discrete(int f) const { return f == kShape; }

  // Pixel-space parameters backing each index.
  double x_center(long i) const { return 16.0 + 32.0 * static_cast<double>(i) / 31.0; }
  double y_center(long i) const { return 16.0 + 32.0 * static_cast<double>(i) / 31.0; }
  // Size = diameter of the shape's bounding disk, 12..30 px.
  double scale_px(long i) const { return 12.0 + 18.0 * static_cast<double>(i) / 5.0; }
  double rotation(long i) const { return 2.0 * M_PI * static_cast<double>(i) / 40.0; }

  // Normalized value in [0,1] used by the regression-based metrics.
  double factor_value(int f, long idx) const {
    return static_cast<double>(idx) / static_cast<double>(cards[static_cast<size_t>(f)] - 1);
  }
};

struct FactorTuple {
  std::array<long, FactorGrid::kFactors> idx{0, 0, 0, 0, 0};

  void validate(const FactorGrid& grid) const;
};

using ByteImage = std::vector<uint8_t>;  // canvas*canvas, row-major, {0,1}

// Analytic rasterizer: pixel = 1 iff its center lies inside the rotated,
// scaled, translated shape region. Pure integer-center tests, no incremental
// state, so builds are reproducible.
ByteImage render_shape(const FactorTuple& f, const FactorGrid& grid = FactorGrid::shapes_default());

// Deterministic subsampling of the factor lattice.
struct BuildOptions {
  std::array<long, FactorGrid::kFactors> strides{1, 1, 1, 1, 1};
  long random_count = 0;   // 0 = take the whole (strided) lattice
  uint64_t seed = 0;       // used only when random_count > 0
};

class DatasetSink {
 public:
  virtual ~DatasetSink() = default;
  virtual void write(const void* data, size_t bytes) = 0;
};

// In-memory dataset mirroring the on-disk layout.
struct ShapesDataset {
  long h = 64, w = 64;
  std::array<long, FactorGrid::kFactors> cards{};
  std::vector<uint8_t> pixels;     // count * h * w
  std::vector<uint16_t> factors;   // count * kFactors

  long count() const {
    return h * w > 0 ? static_cast<long>(pixels.size()) / (h * w) : 0;
  }
  long factor_index(long rec, int f) const {
    return factors[static_cast<size_t>(rec * FactorGrid::kFactors + f)];
  }
  const uint8_t* image(long rec) const { return pixels.data() + rec * h * w; }
  // [B,1,H,W] batch of {0,1} doubles.
  Tensor batch(const std::vector<long>& records) const;
  Tensor one(long rec) const;
};

// Renders the (strided or random) lattice in deterministic order and streams
// the container format through the sink.
void build_shapes_stream(const FactorGrid& grid, const BuildOptions& opt, DatasetSink& sink);

// Same, to a file; written to a temp name and renamed into place.
void build_shapes_dataset(const FactorGrid& grid, const BuildOptions& opt,
                          const std::string& path);

ShapesDataset load_shapes_dataset(const std::string& path);

// L record indices agreeing on factor k (value drawn uniformly over the
// values present), other factors uniform; throws if factor k has < 2 values.
std::vector<long> sample_fixed_factor(const ShapesDataset& ds, int factor, long l,
                                      RngStream& rng, long* fixed_value = nullptr);

// ---- IDX ingestion ---------------------------------------------------------

struct IdxFile {
  uint32_t magic = 0;
  std::vector<long> dims;
  std::vector<uint8_t> bytes;
};

// Big-endian IDX reader; validates magic (0x803 images / 0x801 labels) and
// exact payload size, naming expected/actual byte counts on truncation.
IdxFile read_idx(const std::string& path);

struct LabeledImages {
  Tensor images;            // [N,1,H,W], values in [0,1]
  std::vector<int> labels;  // digit classes
  long original_h = 0, original_w = 0;
};

// Loads an images/labels pair, cross-checks counts, scales bytes to [0,1]
// and zero-pads each side to `pad_to` (0 = keep native size).
LabeledImages load_idx(const std::string& images_path, const std::string& labels_path,
                       long pad_to = 32);

}  // namespace gvae
