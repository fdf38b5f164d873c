#include "condlab/data.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "condlab/error.h"
#include "condlab/rng.h"

namespace condlab {

namespace fs = std::filesystem;

namespace {

constexpr const char* kTrainImages = "train-images-idx3-ubyte";
constexpr const char* kTrainLabels = "train-labels-idx1-ubyte";
constexpr const char* kTestImages = "t10k-images-idx3-ubyte";
constexpr const char* kTestLabels = "t10k-labels-idx1-ubyte";

std::uint32_t read_be32(std::istream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (f.gcount() != 4) throw FormatError("truncated IDX header in " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

void write_be32(std::ostream& f, std::uint32_t x) {
  unsigned char b[4] = {static_cast<unsigned char>(x >> 24), static_cast<unsigned char>(x >> 16),
                        static_cast<unsigned char>(x >> 8), static_cast<unsigned char>(x)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

Matrix images_to_features(const RawTensor& images, MnistMode mode) {
  if (images.dims.size() != 3 || images.dims[1] != 28 || images.dims[2] != 28)
    throw DimensionError("expected an N x 28 x 28 image tensor");
  const int n = images.dims[0];
  const std::uint8_t* px = images.bytes.data();
  if (mode == MnistMode::Full28) {
    Matrix f(n, 784);
    for (int i = 0; i < n; ++i) {
      double* row = f.row(i);
      const std::uint8_t* img = px + static_cast<std::size_t>(i) * 784;
      for (int j = 0; j < 784; ++j) row[j] = img[j] / 255.0;
    }
    return f;
  }
  // center-crop [2,26) to 24×24, then 2×2 average pool to 12×12
  Matrix f(n, 144);
  for (int i = 0; i < n; ++i) {
    double* row = f.row(i);
    const std::uint8_t* img = px + static_cast<std::size_t>(i) * 784;
    for (int r = 0; r < 12; ++r)
      for (int c = 0; c < 12; ++c) {
        const int rr = 2 + 2 * r, cc = 2 + 2 * c;
        const int sum = img[rr * 28 + cc] + img[rr * 28 + cc + 1] + img[(rr + 1) * 28 + cc] +
                        img[(rr + 1) * 28 + cc + 1];
        row[r * 12 + c] = sum / 1020.0;  // 4 pixels × 255
      }
  }
  return f;
}

void apply_standardization(Matrix& f, const Standardization& st) {
  const int d = f.cols();
  if (static_cast<int>(st.mean.size()) != d || static_cast<int>(st.std.size()) != d)
    throw DimensionError("standardization was fitted for a different feature count");
  for (int i = 0; i < f.rows(); ++i) {
    double* row = f.row(i);
    for (int j = 0; j < d; ++j) {
      row[j] -= st.mean[j];
      if (st.std[j] >= 1e-8) row[j] /= st.std[j];
    }
  }
}

void truncate_set(RawTensor& images, RawTensor& labels, int cap) {
  if (cap <= 0 || cap >= images.dims[0]) return;
  images.dims[0] = cap;
  images.bytes.resize(static_cast<std::size_t>(cap) * 28 * 28);
  labels.dims[0] = cap;
  labels.bytes.resize(cap);
}

// Seven-segment glyphs, bits A..G from high to low.
constexpr int kSegments[10] = {
    0b1111110, 0b0110000, 0b1101101, 0b1111001, 0b0110011,
    0b1011011, 0b1011111, 0b1110000, 0b1111111, 0b1111011,
};

void draw_rect(std::uint8_t* img, int r0, int r1, int c0, int c1, int value) {
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c)
      img[r * 28 + c] = static_cast<std::uint8_t>(std::max<int>(img[r * 28 + c], value));
}

void render_digit(std::uint8_t* img, int digit, int top, int left, int t, int value) {
  const int h = 14, w = 8;
  const int seg = kSegments[digit];
  const int mid = top + h / 2 - t / 2;
  if (seg & (1 << 6)) draw_rect(img, top, top + t, left, left + w, value);              // A
  if (seg & (1 << 5)) draw_rect(img, top, top + h / 2, left + w - t, left + w, value);  // B
  if (seg & (1 << 4)) draw_rect(img, top + h / 2, top + h, left + w - t, left + w, value);  // C
  if (seg & (1 << 3)) draw_rect(img, top + h - t, top + h, left, left + w, value);      // D
  if (seg & (1 << 2)) draw_rect(img, top + h / 2, top + h, left, left + t, value);      // E
  if (seg & (1 << 1)) draw_rect(img, top, top + h / 2, left, left + t, value);          // F
  if (seg & 1) draw_rect(img, mid, mid + t, left, left + w, value);                     // G
}

void fill_surrogate_set(int n, Rng& rng, RawTensor& images, RawTensor& labels) {
  images.dims = {n, 28, 28};
  images.bytes.assign(static_cast<std::size_t>(n) * 784, 0);
  labels.dims = {n};
  labels.bytes.resize(n);
  for (int i = 0; i < n; ++i) {
    std::uint8_t* img = images.bytes.data() + static_cast<std::size_t>(i) * 784;
    const int digit = static_cast<int>(rng.below(10));
    labels.bytes[i] = static_cast<std::uint8_t>(digit);
    const int dy = static_cast<int>(rng.below(5)) - 2;
    const int dx = static_cast<int>(rng.below(5)) - 2;
    const int thick = rng.uniform() < 0.3 ? 3 : 2;
    const int value = 170 + static_cast<int>(rng.below(86));
    render_digit(img, digit, 7 + dy, 10 + dx, thick, value);
    for (int p = 0; p < 784; ++p) {
      const double noisy = img[p] + 10.0 * rng.gaussian();
      img[p] = static_cast<std::uint8_t>(std::clamp(std::lround(noisy), 0l, 255l));
    }
  }
}

}  // namespace

RawTensor load_idx(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  const std::uint32_t magic = read_be32(f, path);
  if ((magic >> 16) != 0) throw FormatError("bad IDX magic in " + path);
  const int type = (magic >> 8) & 0xff;
  const int rank = magic & 0xff;
  if (type != 0x08) throw FormatError("unsupported IDX element type in " + path);
  if (rank < 1 || rank > 4) throw FormatError("unsupported IDX rank in " + path);
  RawTensor t;
  std::size_t total = 1;
  for (int i = 0; i < rank; ++i) {
    const std::uint32_t d = read_be32(f, path);
    if (d == 0 || d > (1u << 30)) throw FormatError("bad IDX dimension in " + path);
    t.dims.push_back(static_cast<int>(d));
    total *= d;
  }
  t.bytes.resize(total);
  f.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(total));
  if (static_cast<std::size_t>(f.gcount()) != total)
    throw FormatError("truncated IDX payload in " + path);
  return t;
}

void save_idx(const std::string& path, const RawTensor& tensor) {
  if (tensor.dims.empty() || tensor.dims.size() > 4)
    throw ValueError("IDX rank must be between 1 and 4");
  std::size_t total = 1;
  for (int d : tensor.dims) {
    if (d <= 0) throw ValueError("IDX dimensions must be positive");
    total *= static_cast<std::size_t>(d);
  }
  if (total != tensor.bytes.size()) throw ValueError("IDX payload size does not match dims");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  write_be32(f, 0x0800u | static_cast<std::uint32_t>(tensor.dims.size()));
  for (int d : tensor.dims) write_be32(f, static_cast<std::uint32_t>(d));
  f.write(reinterpret_cast<const char*>(tensor.bytes.data()),
          static_cast<std::streamsize>(tensor.bytes.size()));
  if (!f) throw IoError("failed writing " + path);
}

Matrix preprocess_mnist(const RawTensor& images, MnistMode mode, bool standardize,
                        Standardization* stats) {
  Matrix f = images_to_features(images, mode);
  if (stats) {
    stats->mean.clear();
    stats->std.clear();
    stats->applied = false;
  }
  if (!standardize) return f;

  const int n = f.rows(), d = f.cols();
  Standardization st;
  st.mean.assign(d, 0.0);
  st.std.assign(d, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* row = f.row(i);
    for (int j = 0; j < d; ++j) st.mean[j] += row[j];
  }
  for (int j = 0; j < d; ++j) st.mean[j] /= n;
  for (int i = 0; i < n; ++i) {
    const double* row = f.row(i);
    for (int j = 0; j < d; ++j) {
      const double dev = row[j] - st.mean[j];
      st.std[j] += dev * dev;
    }
  }
  for (int j = 0; j < d; ++j) st.std[j] = std::sqrt(st.std[j] / n);
  st.applied = true;
  apply_standardization(f, st);
  if (stats) *stats = st;
  return f;
}

Matrix preprocess_mnist_with(const RawTensor& images, MnistMode mode,
                             const Standardization& stats) {
  Matrix f = images_to_features(images, mode);
  if (stats.applied) apply_standardization(f, stats);
  return f;
}

Dataset synthetic_gaussian(int n, int d, int c, std::uint64_t seed, double class_separation) {
  if (n < 1) throw ValueError("need at least one example");
  if (d < 1) throw ValueError("need at least one feature");
  if (c < 2) throw ValueError("need at least two classes");
  Rng rng(seed);
  Matrix means(c, d);
  const double spread = class_separation / std::sqrt(static_cast<double>(d));
  for (double& v : means.data()) v = spread * rng.gaussian();
  Dataset ds;
  ds.x = Matrix(n, d);
  ds.y.resize(n);
  ds.c = c;
  for (int i = 0; i < n; ++i) {
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
    ds.y[i] = y;
    double* row = ds.x.row(i);
    for (int j = 0; j < d; ++j) row[j] = means(y, j) + rng.gaussian();
  }
  ds.meta = "synthetic-gaussian n=" + std::to_string(n) + " d=" + std::to_string(d) +
            " c=" + std::to_string(c) + " seed=" + std::to_string(seed);
  return ds;
}

bool mnist_files_present(const std::string& dir) {
  const fs::path base(dir);
  return fs::exists(base / kTrainImages) && fs::exists(base / kTrainLabels) &&
         fs::exists(base / kTestImages) && fs::exists(base / kTestLabels);
}

std::string generate_mnist_surrogate(const std::string& dir, int n_train, int n_test,
                                     std::uint64_t seed) {
  if (n_train < 1 || n_test < 1) throw ValueError("surrogate sets must be non-empty");
  fs::create_directories(dir);
  Rng rng(seed);
  RawTensor images, labels;
  fill_surrogate_set(n_train, rng, images, labels);
  save_idx((fs::path(dir) / kTrainImages).string(), images);
  save_idx((fs::path(dir) / kTrainLabels).string(), labels);
  fill_surrogate_set(n_test, rng, images, labels);
  save_idx((fs::path(dir) / kTestImages).string(), images);
  save_idx((fs::path(dir) / kTestLabels).string(), labels);
  return dir;
}

MnistData load_mnist_dataset(const std::string& dir, MnistMode mode, bool standardize,
                             int n_train, int n_test, bool allow_surrogate) {
  if (!mnist_files_present(dir)) {
    if (!allow_surrogate) throw IoError("MNIST-format files not found in " + dir);
    generate_mnist_surrogate(dir, 8192, 2048, 428721);
  }
  const fs::path base(dir);
  RawTensor train_images = load_idx((base / kTrainImages).string());
  RawTensor train_labels = load_idx((base / kTrainLabels).string());
  RawTensor test_images = load_idx((base / kTestImages).string());
  RawTensor test_labels = load_idx((base / kTestLabels).string());
  if (train_labels.dims.size() != 1 || train_labels.dims[0] != train_images.dims[0] ||
      test_labels.dims.size() != 1 || test_labels.dims[0] != test_images.dims[0])
    throw FormatError("image and label counts disagree in " + dir);

  truncate_set(train_images, train_labels, n_train);
  truncate_set(test_images, test_labels, n_test);

  MnistData d;
  d.train.x = preprocess_mnist(train_images, mode, standardize, &d.stats);
  d.test.x = preprocess_mnist_with(test_images, mode, d.stats);
  int max_label = 0;
  auto to_labels = [&max_label](const RawTensor& t) {
    std::vector<int> y(t.bytes.begin(), t.bytes.end());
    for (int v : y) max_label = std::max(max_label, v);
    return y;
  };
  d.train.y = to_labels(train_labels);
  d.test.y = to_labels(test_labels);
  d.train.c = d.test.c = std::max(10, max_label + 1);
  d.train.meta = "idx:" + dir + " train";
  d.test.meta = "idx:" + dir + " test";
  return d;
}

}  // namespace condlab
