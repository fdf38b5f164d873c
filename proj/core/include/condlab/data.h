#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "condlab/matrix.h"

namespace condlab {

struct Dataset {
  Matrix x;                // N × d features
  std::vector<int> y;     // labels in [0, c)
  int c = 0;              // class count
  std::string meta;       // provenance
};

// Raw IDX tensor: dims plus flat unsigned bytes.
struct RawTensor {
  std::vector<int> dims;
  std::vector<std::uint8_t> bytes;
};

// Parses the IDX binary format: 32-bit big-endian magic whose low bytes are
// the element type (0x08 = unsigned byte) and the dimension count, then one
// big-endian 32-bit size per dimension, then the raw bytes.
RawTensor load_idx(const std::string& path);
void save_idx(const std::string& path, const RawTensor& tensor);

enum class MnistMode { Crop12, Full28 };

struct Standardization {
  std::vector<double> mean, std;
  bool applied = false;
};

// 28×28 byte images → features. Crop12: center-crop rows/cols [2,26) to
// 24×24, 2×2 average-pool to 12×12, flatten (144 features); Full28: flatten
// to 784. Scaled to [0,1] by /255; optional per-feature standardization fit
// on the given set (features with std < 1e-8 are centered only).
Matrix preprocess_mnist(const RawTensor& images, MnistMode mode, bool standardize,
                        Standardization* stats = nullptr);

// Applies a previously fitted standardization (for test sets).
Matrix preprocess_mnist_with(const RawTensor& images, MnistMode mode,
                             const Standardization& stats);

// Class-conditional Gaussians with seeded means; deterministic.
Dataset synthetic_gaussian(int n, int d, int c, std::uint64_t seed, double class_separation);

// True if the four classic IDX files exist under dir.
bool mnist_files_present(const std::string& dir);

// Writes a deterministic MNIST-shaped surrogate (digit glyphs with seeded
// shifts, thickness, intensity and noise) as real IDX files under dir, using
// the classic filenames. Returns the directory.
std::string generate_mnist_surrogate(const std::string& dir, int n_train, int n_test,
                                     std::uint64_t seed);

struct MnistData {
  Dataset train;
  Dataset test;
  Standardization stats;
};

// Loads MNIST-format data from dir (surrogate is generated there first when
// the files are absent and allow_surrogate is set). n_train/n_test ≤ 0 keep
// everything.
MnistData load_mnist_dataset(const std::string& dir, MnistMode mode, bool standardize,
                             int n_train = -1, int n_test = -1, bool allow_surrogate = true);

}  // namespace condlab
